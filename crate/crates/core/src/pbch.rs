//! MIB packing and the PBCH transmit/receive chain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerology::{
    is_crs_of_port, CellConfig, CyclicPrefix, PhichDuration, PhichNg, RePosition, ResourceGrid,
    VALID_BANDWIDTHS,
};
use crate::ofdm::{
    detect_symbols, estimate_channel, map_symbols, qpsk_modulate, qpsk_soft_demod, TxScheme,
};
use crate::seqfec::{
    crc16, decode_block, encode_block, from_bits, gold_sequence, mask_crc, to_bits,
};

pub const MIB_BITS: usize = 24;
const CODED_K: usize = MIB_BITS + 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mib {
    pub n_dl_rb: u16,
    pub phich_duration: PhichDuration,
    pub phich_ng: PhichNg,
    pub sfn_msb8: u8,
    /// Low 10 bits are used.
    pub spare: u16,
}

impl Mib {
    pub fn for_frame(cfg: &CellConfig, sfn: u16) -> Self {
        Mib {
            n_dl_rb: cfg.n_dl_rb(),
            phich_duration: cfg.phich_duration(),
            phich_ng: cfg.phich_ng(),
            sfn_msb8: (sfn >> 2) as u8,
            spare: 0,
        }
    }
}

/// Layout: bandwidth 3 | PHICH duration 1 | PHICH Ng 2 | SFN MSBs 8 | spare 10.
pub fn pack_mib(mib: &Mib) -> Result<Vec<u8>> {
    let code = VALID_BANDWIDTHS
        .iter()
        .position(|b| *b == mib.n_dl_rb)
        .ok_or_else(|| Error::InvalidFieldValue(format!("bandwidth {} RBs", mib.n_dl_rb)))?;
    if mib.spare >= 1 << 10 {
        return Err(Error::InvalidFieldValue(format!("spare {:#x} wider than 10 bits", mib.spare)));
    }
    let mut bits = to_bits(code as u64, 3);
    bits.push(u8::from(mib.phich_duration == PhichDuration::Extended));
    bits.extend(to_bits(mib.phich_ng.code() as u64, 2));
    bits.extend(to_bits(mib.sfn_msb8 as u64, 8));
    bits.extend(to_bits(mib.spare as u64, 10));
    Ok(bits)
}

pub fn parse_mib(bits: &[u8]) -> Result<Mib> {
    if bits.len() != MIB_BITS {
        return Err(Error::LengthMismatch { expected: MIB_BITS, actual: bits.len() });
    }
    let code = from_bits(&bits[0..3]) as usize;
    let n_dl_rb = *VALID_BANDWIDTHS
        .get(code)
        .ok_or_else(|| Error::InvalidFieldValue(format!("bandwidth code {code}")))?;
    Ok(Mib {
        n_dl_rb,
        phich_duration: if bits[3] == 1 { PhichDuration::Extended } else { PhichDuration::Normal },
        phich_ng: PhichNg::from_code(from_bits(&bits[4..6]) as u8).expect("2-bit code"),
        sfn_msb8: from_bits(&bits[6..14]) as u8,
        spare: from_bits(&bits[14..24]) as u16,
    })
}

/// CRC mask signalling the transmit antenna count.
pub fn port_mask(ports: u8) -> Result<Vec<u8>> {
    Ok(match ports {
        1 => vec![0; 16],
        2 => vec![1; 16],
        4 => (0..16).map(|i| (i % 2) as u8).collect(),
        other => return Err(Error::InvalidFieldValue(format!("CellRefP {other}"))),
    })
}

/// MIB followed by its port-masked CRC.
pub fn mib_with_crc(mib: &Mib, ports: u8) -> Result<Vec<u8>> {
    let mut bits = pack_mib(mib)?;
    let crc = mask_crc(&crc16(&bits), &port_mask(ports)?);
    bits.extend(crc);
    Ok(bits)
}

/// PBCH resource elements of subframe 0 in mapping order.
pub fn pbch_positions(cfg: &CellConfig) -> Vec<RePosition> {
    let per_slot = cfg.cyclic_prefix().symbols_per_slot();
    let first = cfg.center_six_rb_start();
    let mut out = Vec::new();
    for l in per_slot..per_slot + 4 {
        for k in first..first + 72 {
            let p = RePosition::new(k, l);
            if !(0..4).any(|port| is_crs_of_port(cfg, port, p)) {
                out.push(p);
            }
        }
    }
    out
}

/// Coded bits per frame (one quarter of the 40 ms block).
pub fn quarter_bits(cp: CyclicPrefix) -> usize {
    match cp {
        CyclicPrefix::Normal => 480,
        CyclicPrefix::Extended => 432,
    }
}

pub fn pbch_encode_cp(mib: &Mib, ports: u8, pci: u16, cp: CyclicPrefix) -> Result<[Vec<u8>; 4]> {
    let q = quarter_bits(cp);
    let coded = encode_block(&mib_with_crc(mib, ports)?, 4 * q)?;
    let c = gold_sequence(pci as u32, 0, 4 * q);
    let scrambled: Vec<u8> = coded.iter().zip(&c).map(|(a, b)| a ^ b).collect();
    Ok([0, 1, 2, 3].map(|i| scrambled[i * q..(i + 1) * q].to_vec()))
}

/// Four 480-bit quarters for normal CP.
pub fn pbch_encode(mib: &Mib, ports: u8, pci: u16) -> Result<[Vec<u8>; 4]> {
    pbch_encode_cp(mib, ports, pci, CyclicPrefix::Normal)
}

/// Write the PBCH of frame `sfn` onto the port grids of subframe 0.
pub fn pbch_map(ports: &mut [ResourceGrid], cfg: &CellConfig, sfn: u16) -> Result<()> {
    let mib = Mib::for_frame(cfg, sfn);
    let quarters = pbch_encode_cp(&mib, cfg.cell_ref_ports() as u8, cfg.pci(), cfg.cyclic_prefix())?;
    let symbols = qpsk_modulate(&quarters[(sfn % 4) as usize])?;
    map_symbols(ports, &pbch_positions(cfg), &symbols, TxScheme::for_ports(cfg.cell_ref_ports()));
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PbchResult {
    pub mib: Mib,
    pub cell_ref_ports: u8,
    pub sfn_lsb2: u8,
    pub full_sfn: u16,
}

impl PbchResult {
    /// Cell configuration implied by the MIB.
    pub fn cell_config(&self, pci: u16, cp: CyclicPrefix) -> Result<CellConfig> {
        Ok(CellConfig::new(self.mib.n_dl_rb, pci, self.cell_ref_ports)?
            .with_cyclic_prefix(cp)
            .with_phich(self.mib.phich_duration, self.mib.phich_ng))
    }
}

/// Try the four quarter offsets against one frame's soft bits, checking the
/// CRC against each mask in `ports`.
pub fn pbch_decode_soft(llrs: &[f64], pci: u16, ports: &[u8]) -> Result<PbchResult> {
    let q = llrs.len();
    let c = gold_sequence(pci as u32, 0, 4 * q);
    for quarter in 0..4 {
        let mut buf = vec![0.0; 4 * q];
        for (i, l) in llrs.iter().enumerate() {
            let j = quarter * q + i;
            buf[j] = if c[j] == 1 { -l } else { *l };
        }
        let bits = decode_block(&buf, CODED_K)?;
        let crc = crc16(&bits[..MIB_BITS]);
        for &p in ports {
            if mask_crc(&crc, &port_mask(p)?) == bits[MIB_BITS..] {
                let Ok(mib) = parse_mib(&bits[..MIB_BITS]) else { continue };
                return Ok(PbchResult {
                    mib,
                    cell_ref_ports: p,
                    sfn_lsb2: quarter as u8,
                    full_sfn: mib.sfn_msb8 as u16 * 4 + quarter as u16,
                });
            }
        }
    }
    Err(Error::CrcFail)
}

/// Decode the PBCH from subframe-0 grids (not equalized) of any bandwidth,
/// trying one grid at a time. Both single-port and SFBC detection are
/// attempted; the CRC mask then selects the port count.
pub fn pbch_decode(grids: &[ResourceGrid], pci: u16, cp: CyclicPrefix) -> Result<PbchResult> {
    for grid in grids {
        let centre = grid.center(6);
        for (ports, masks) in [(1u8, &[1u8][..]), (2, &[2, 4][..])] {
            let view = CellConfig::new(6, pci, ports)?.with_cyclic_prefix(cp);
            let est = estimate_channel(&centre, &view, 0);
            let positions = pbch_positions(&view);
            let symbols = detect_symbols(&centre, &est, &positions, TxScheme::for_ports(ports as usize));
            let llrs = qpsk_soft_demod(&symbols, est.noise_var);
            if let Ok(r) = pbch_decode_soft(&llrs, pci, masks) {
                return Ok(r);
            }
        }
    }
    Err(Error::CrcFail)
}
