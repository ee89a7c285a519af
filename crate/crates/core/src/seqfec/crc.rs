/// Generator x^16 + x^12 + x^5 + 1 without the leading term.
pub const CRC16_POLY: u16 = 0x1021;

/// 16 parity bits, zero initial state, MSB first.
pub fn crc16(payload: &[u8]) -> Vec<u8> {
    super::to_bits(crc16_value(payload) as u64, 16)
}

pub fn crc16_value(payload: &[u8]) -> u16 {
    let mut reg: u16 = 0;
    for &b in payload {
        let fb = ((reg >> 15) as u8 ^ (b & 1)) & 1;
        reg <<= 1;
        if fb == 1 {
            reg ^= CRC16_POLY;
        }
    }
    reg
}

/// Bitwise XOR of two 16-bit fields.
pub fn mask_crc(crc: &[u8], mask: &[u8]) -> Vec<u8> {
    assert_eq!(crc.len(), 16);
    assert_eq!(mask.len(), 16);
    crc.iter().zip(mask).map(|(a, b)| a ^ b).collect()
}

/// RNTI as a 16-bit mask, MSB first.
pub fn rnti_bits(rnti: u16) -> Vec<u8> {
    super::to_bits(rnti as u64, 16)
}
