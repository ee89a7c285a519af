use super::conv::{tap_parity, GENERATORS};
use crate::error::{Error, Result};

const STATES: usize = 64;
/// Trellis length run on each side of the block to settle the unknown
/// circular start state.
const WRAP_DEPTH: usize = 42;

/// Tail-biting Viterbi decoder for the rate-1/3, K=7 code.
///
/// `soft` is stream-interleaved (`d0[0], d1[0], d2[0], d0[1], ...`). The
/// block is repeated so the trellis runs over a prefix, the block and a
/// suffix starting from equal metrics; decisions are read from the middle copy.
pub fn viterbi_decode_tailbiting(soft: &[f64], out_len: usize) -> Result<Vec<u8>> {
    if soft.len() != 3 * out_len {
        return Err(Error::LengthMismatch { expected: 3 * out_len, actual: soft.len() });
    }
    if out_len == 0 {
        return Ok(Vec::new());
    }

    // expected[window] = the three coded bits mapped to +1 (bit 0) / -1 (bit 1)
    let mut expected = [[0f64; 3]; 128];
    for (w, e) in expected.iter_mut().enumerate() {
        for (i, g) in GENERATORS.iter().enumerate() {
            e[i] = 1.0 - 2.0 * tap_parity(*g, w as u8) as f64;
        }
    }

    let wrap = WRAP_DEPTH.div_ceil(out_len);
    let copies = 2 * wrap + 1;
    let steps = copies * out_len;
    let mut metric = [0f64; STATES];
    let mut next = [0f64; STATES];
    // per step, bit x of predecessor chosen for each state
    let mut decisions = vec![0u64; steps];

    for (t, dec) in decisions.iter_mut().enumerate() {
        let i = t % out_len;
        let r = &soft[3 * i..3 * i + 3];
        let mut word = 0u64;
        let mut best = f64::NEG_INFINITY;
        for (ns, slot) in next.iter_mut().enumerate() {
            let w0 = (ns << 1) & 0x7f;
            let w1 = w0 | 1;
            let p0 = w0 & 0x3f;
            let p1 = w1 & 0x3f;
            let m0 = metric[p0] + dot(r, &expected[w0]);
            let m1 = metric[p1] + dot(r, &expected[w1]);
            if m1 > m0 {
                *slot = m1;
                word |= 1 << ns;
            } else {
                *slot = m0;
            }
            best = best.max(*slot);
        }
        for (m, n) in metric.iter_mut().zip(next.iter()) {
            *m = n - best;
        }
        *dec = word;
    }

    let mut state = (0..STATES)
        .max_by(|a, b| metric[*a].total_cmp(&metric[*b]).then(b.cmp(a)))
        .unwrap_or(0);
    let mut out = vec![0u8; out_len];
    let lo = wrap * out_len;
    let hi = lo + out_len;
    for t in (0..steps).rev() {
        if t >= lo && t < hi {
            out[t - lo] = (state >> 5) as u8;
        }
        if t < lo {
            break;
        }
        let x = ((decisions[t] >> state) & 1) as usize;
        state = ((state << 1) | x) & 0x3f;
    }
    Ok(out)
}

#[inline]
fn dot(r: &[f64], e: &[f64; 3]) -> f64 {
    r[0] * e[0] + r[1] * e[1] + r[2] * e[2]
}
