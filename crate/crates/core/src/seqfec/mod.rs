//! Bit-level coding primitives shared by PBCH and PDCCH.
//!
//! Bits are `u8` values in {0, 1}. Soft bits are log-likelihood ratios with
//! positive values favouring 0; [`hard_decision`] is the one place that
//! convention is applied.

mod conv;
mod crc;
mod gold;
mod ratematch;
mod viterbi;

pub use conv::{conv_encode_tailbiting, CONSTRAINT_LENGTH, GENERATORS};
pub use crc::{crc16, crc16_value, mask_crc, rnti_bits, CRC16_POLY};
pub use gold::{gold_sequence, GOLD_WARMUP};
pub use ratematch::{rate_match_conv, rate_recover_conv, subblock_interleave_pattern};
pub use viterbi::viterbi_decode_tailbiting;

/// LLR to bit: negative favours 1.
pub fn hard_decision(llr: f64) -> u8 {
    u8::from(llr < 0.0)
}

/// Noiseless soft representation of a bit with the given magnitude.
pub fn bit_to_llr(bit: u8, magnitude: f64) -> f64 {
    if bit == 0 {
        magnitude
    } else {
        -magnitude
    }
}

/// Big-endian bit expansion of the low `width` bits of `value`.
pub fn to_bits(value: u64, width: usize) -> Vec<u8> {
    (0..width).rev().map(|i| ((value >> i) & 1) as u8).collect()
}

/// Inverse of [`to_bits`].
pub fn from_bits(bits: &[u8]) -> u64 {
    bits.iter().fold(0u64, |acc, b| (acc << 1) | (*b as u64 & 1))
}

/// Tail-biting encode then rate match to `e` bits.
pub fn encode_block(bits: &[u8], e: usize) -> crate::Result<Vec<u8>> {
    Ok(rate_match_conv(&conv_encode_tailbiting(bits)?, e))
}

/// Inverse of [`encode_block`] for `k` information bits.
pub fn decode_block(llrs: &[f64], k: usize) -> crate::Result<Vec<u8>> {
    viterbi_decode_tailbiting(&rate_recover_conv(llrs, k), k)
}
