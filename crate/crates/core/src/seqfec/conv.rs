use crate::error::{Error, Result};

pub const CONSTRAINT_LENGTH: usize = 7;
/// Generator polynomials 133, 171, 165 (octal); bit 6 taps the current input.
pub const GENERATORS: [u8; 3] = [0o133, 0o171, 0o165];

/// Parity of generator `g` applied to the 7-bit window whose bit 6 is the
/// current input and bit 0 the oldest.
#[inline]
pub(crate) fn tap_parity(g: u8, window: u8) -> u8 {
    ((g & window).count_ones() & 1) as u8
}

/// Rate-1/3 tail-biting encoder; register preloaded with the last six inputs.
pub fn conv_encode_tailbiting(input: &[u8]) -> Result<[Vec<u8>; 3]> {
    let k = input.len();
    if k < CONSTRAINT_LENGTH - 1 {
        return Err(Error::InputTooShort(k));
    }
    // window bit 5 is the previous input, bit 0 the input six steps back
    let mut state: u8 = 0;
    for &b in &input[k - 6..] {
        state = (state >> 1) | ((b & 1) << 5);
    }
    let mut out = [Vec::with_capacity(k), Vec::with_capacity(k), Vec::with_capacity(k)];
    for &b in input {
        let window = ((b & 1) << 6) | state;
        for (s, g) in out.iter_mut().zip(GENERATORS) {
            s.push(tap_parity(g, window));
        }
        state = window >> 1;
    }
    Ok(out)
}
