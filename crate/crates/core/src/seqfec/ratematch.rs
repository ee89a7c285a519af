//! Circular-buffer rate matching for the tail-biting convolutional code.

const COLUMNS: usize = 32;
const PERMUTATION: [usize; COLUMNS] = [
    1, 17, 9, 25, 5, 21, 13, 29, 3, 19, 11, 27, 7, 23, 15, 31, 0, 16, 8, 24, 4, 20, 12, 28, 2, 18,
    10, 26, 6, 22, 14, 30,
];

/// For a stream of length `n`, the source index (or `None` for a dummy)
/// of each position of the interleaved sub-block.
pub fn subblock_interleave_pattern(n: usize) -> Vec<Option<usize>> {
    let rows = n.div_ceil(COLUMNS);
    let dummies = rows * COLUMNS - n;
    let mut out = Vec::with_capacity(rows * COLUMNS);
    for &col in &PERMUTATION {
        for row in 0..rows {
            let k = row * COLUMNS + col;
            out.push(if k < dummies { None } else { Some(k - dummies) });
        }
    }
    out
}

/// Circular-buffer positions as (stream, index) in read order, dummies removed.
fn buffer_order(n: usize) -> Vec<(usize, usize)> {
    let pattern = subblock_interleave_pattern(n);
    (0..3).flat_map(|s| pattern.iter().flatten().map(move |i| (s, *i))).collect()
}

/// Select `e` bits cyclically from the interleaved circular buffer.
pub fn rate_match_conv(streams: &[Vec<u8>; 3], e: usize) -> Vec<u8> {
    let n = streams[0].len();
    let order = buffer_order(n);
    if order.is_empty() {
        return vec![0; e];
    }
    (0..e).map(|j| {
        let (s, i) = order[j % order.len()];
        streams[s][i]
    })
    .collect()
}

/// Undo rate matching: sum repeated LLRs, leave punctured positions at zero.
/// Output is stream-interleaved (`d0[0], d1[0], d2[0], d0[1], ...`) ready for
/// the Viterbi decoder.
pub fn rate_recover_conv(soft: &[f64], n: usize) -> Vec<f64> {
    let order = buffer_order(n);
    let mut out = vec![0f64; 3 * n];
    if order.is_empty() {
        return out;
    }
    for (j, llr) in soft.iter().enumerate() {
        let (s, i) = order[j % order.len()];
        out[3 * i + s] += llr;
    }
    out
}
