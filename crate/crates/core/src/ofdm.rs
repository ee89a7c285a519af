//! OFDM modulation between sample streams and subframe grids, QPSK mapping,
//! CRS channel estimation and the per-RE detectors used by the channel
//! decoders.
//!
//! Transforms are unitary (`1/sqrt(N)` both ways), so a grid and the
//! useful part of its time-domain symbols carry the same energy.

use std::sync::Arc;

use num_complex::{Complex32, Complex64};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::iqio::IqRecording;
use crate::numerology::{crs_pilots, CellConfig, FftParams, RePosition, ResourceGrid};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
/// Gains below this magnitude are erasures.
pub const MIN_GAIN: f64 = 1e-9;
const NOISE_FLOOR: f64 = 1e-12;

/// FFT plans for one FFT size.
#[derive(Clone)]
pub struct OfdmEngine {
    params: FftParams,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for OfdmEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OfdmEngine").field("params", &self.params).finish()
    }
}

impl OfdmEngine {
    pub fn new(params: FftParams) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(params.fft_size);
        let inverse = planner.plan_fft_inverse(params.fft_size);
        OfdmEngine { params, forward, inverse }
    }

    pub fn params(&self) -> &FftParams {
        &self.params
    }

    /// FFT bin of grid subcarrier `k` for a grid of `n_sc` subcarriers.
    fn bin(&self, k: usize, n_sc: usize) -> usize {
        let half = n_sc / 2;
        if k < half {
            self.params.fft_size - half + k
        } else {
            k - half + 1
        }
    }

    /// Useful part of one symbol carrying `subcarriers` (grid order).
    pub fn ifft_symbol(&self, subcarriers: &[Complex64]) -> Vec<Complex64> {
        let n = self.params.fft_size;
        let mut buf = vec![ZERO; n];
        let scale = 1.0 / (n as f64).sqrt();
        for (k, v) in subcarriers.iter().enumerate() {
            buf[self.bin(k, subcarriers.len())] = *v * scale;
        }
        self.inverse.process(&mut buf);
        buf
    }

    /// Time-domain samples of one subframe, CP included.
    pub fn modulate_subframe(&self, grid: &ResourceGrid) -> Vec<Complex64> {
        let n = self.params.fft_size;
        let n_sc = grid.n_subcarriers();
        let scale = 1.0 / (n as f64).sqrt();
        let mut out = Vec::with_capacity(self.params.subframe_len());
        let mut buf = vec![ZERO; n];
        for l in 0..grid.n_symbols() {
            buf.iter_mut().for_each(|b| *b = ZERO);
            for (k, v) in grid.symbol(l).iter().enumerate() {
                buf[self.bin(k, n_sc)] = *v * scale;
            }
            self.inverse.process(&mut buf);
            let cp = self.params.cp_len(l);
            out.extend_from_slice(&buf[n - cp..]);
            out.extend_from_slice(&buf);
        }
        out
    }

    /// FFT of `n` samples starting at `start`, as grid subcarriers.
    pub fn demodulate_symbol(&self, samples: &[Complex64], start: usize, n_sc: usize) -> Vec<Complex64> {
        let n = self.params.fft_size;
        let scale = 1.0 / (n as f64).sqrt();
        let mut buf = samples[start..start + n].to_vec();
        self.forward.process(&mut buf);
        (0..n_sc).map(|k| buf[self.bin(k, n_sc)] * scale).collect()
    }

    /// Grid of the subframe whose first CP sample is `start`. The FFT
    /// window of each symbol sits at the end of its CP, moved `backoff`
    /// samples earlier into the CP.
    pub fn demodulate_subframe(
        &self,
        samples: &[Complex64],
        start: usize,
        n_dl_rb: u16,
        backoff: usize,
    ) -> Result<ResourceGrid> {
        let needed = start + self.params.subframe_len();
        if samples.len() < needed {
            return Err(Error::InsufficientSamples { needed, available: samples.len() });
        }
        let n_sym = self.params.symbols_per_subframe();
        let mut grid = ResourceGrid::zeros(n_dl_rb, n_sym);
        let n_sc = grid.n_subcarriers();
        for l in 0..n_sym {
            let at = start + self.params.useful_start(l) - backoff.min(self.params.cp_len(l));
            grid.symbol_mut(l).copy_from_slice(&self.demodulate_symbol(samples, at, n_sc));
        }
        Ok(grid)
    }
}

/// Modulate consecutive subframes at the bandwidth's standard rate.
pub fn ofdm_modulate(grids: &[ResourceGrid], cfg: &CellConfig) -> Result<IqRecording> {
    let samples = ofdm_modulate_f64(grids, cfg)?;
    let params = FftParams::for_fft_size(
        crate::numerology::fft_size_for(cfg.n_dl_rb())?,
        cfg.cyclic_prefix(),
    );
    Ok(IqRecording::new(
        samples.iter().map(|c| Complex32::new(c.re as f32, c.im as f32)).collect(),
        params.sample_rate_hz as f64,
    ))
}

/// Double-precision samples behind [`ofdm_modulate`].
pub fn ofdm_modulate_f64(grids: &[ResourceGrid], cfg: &CellConfig) -> Result<Vec<Complex64>> {
    if grids.iter().any(|g| !g.matches(cfg)) {
        return Err(Error::DimensionMismatch);
    }
    let engine = OfdmEngine::new(FftParams::for_fft_size(
        crate::numerology::fft_size_for(cfg.n_dl_rb())?,
        cfg.cyclic_prefix(),
    ));
    let mut out = Vec::with_capacity(grids.len() * engine.params.subframe_len());
    for g in grids {
        out.extend(engine.modulate_subframe(g));
    }
    Ok(out)
}

/// Demodulate every complete subframe after `frame_start`. The FFT size is
/// taken from the recording's sample rate and may exceed the cell bandwidth.
pub fn ofdm_demodulate(
    rec: &IqRecording,
    cfg: &CellConfig,
    frame_start: usize,
) -> Result<Vec<ResourceGrid>> {
    let params = FftParams::from_sample_rate(rec.sample_rate_hz, cfg.cyclic_prefix())?;
    if params.fft_size <= cfg.n_subcarriers() {
        return Err(Error::InvalidConfig(format!(
            "sample rate {} Hz too low for {} RBs",
            rec.sample_rate_hz,
            cfg.n_dl_rb()
        )));
    }
    let samples = to_f64(&rec.samples);
    let sf_len = params.subframe_len();
    let available = samples.len().saturating_sub(frame_start);
    if available < sf_len {
        return Err(Error::InsufficientSamples { needed: frame_start + sf_len, available: samples.len() });
    }
    let engine = OfdmEngine::new(params);
    (0..available / sf_len)
        .map(|i| engine.demodulate_subframe(&samples, frame_start + i * sf_len, cfg.n_dl_rb(), 0))
        .collect()
}

pub fn to_f64(samples: &[Complex32]) -> Vec<Complex64> {
    samples.iter().map(|c| Complex64::new(c.re as f64, c.im as f64)).collect()
}

/// Gray-mapped QPSK, `(1 - 2 b0, 1 - 2 b1) / sqrt(2)`.
pub fn qpsk_modulate(bits: &[u8]) -> Result<Vec<Complex64>> {
    if !bits.len().is_multiple_of(2) {
        return Err(Error::OddBitCount(bits.len()));
    }
    let a = std::f64::consts::FRAC_1_SQRT_2;
    Ok(bits
        .chunks_exact(2)
        .map(|p| Complex64::new(a * (1.0 - 2.0 * p[0] as f64), a * (1.0 - 2.0 * p[1] as f64)))
        .collect())
}

/// Exact per-bit LLRs for unit-power QPSK in complex noise of variance
/// `noise_var`.
pub fn qpsk_soft_demod(symbols: &[Complex64], noise_var: f64) -> Vec<f64> {
    let scale = 2.0 * std::f64::consts::SQRT_2 / noise_var.max(NOISE_FLOOR);
    symbols.iter().flat_map(|s| [scale * s.re, scale * s.im]).collect()
}

/// Per-port channel gains congruent with the received grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub gains: Vec<ResourceGrid>,
    pub noise_var: f64,
}

impl ChannelEstimate {
    /// Identity channel on `ports` ports.
    pub fn identity(cfg: &CellConfig, ports: usize) -> Self {
        let mut g = ResourceGrid::new(cfg);
        g.cells_mut().iter_mut().for_each(|c| *c = Complex64::new(1.0, 0.0));
        ChannelEstimate { gains: vec![g; ports], noise_var: NOISE_FLOOR }
    }
}

/// Least-squares CRS estimates, linear in frequency, nearest pilot symbol
/// in time.
pub fn estimate_channel(grid: &ResourceGrid, cfg: &CellConfig, subframe: usize) -> ChannelEstimate {
    let n_sc = grid.n_subcarriers();
    let mut gains = Vec::with_capacity(cfg.cell_ref_ports());
    let mut residual = 0.0;
    let mut residual_count = 0usize;

    for port in 0..cfg.cell_ref_ports() {
        let pilots = crs_pilots(cfg, port, subframe).expect("port within configured range");
        let mut per_symbol: Vec<(usize, Vec<Complex64>)> = Vec::new();
        for chunk in pilots.chunks(2 * cfg.n_dl_rb() as usize) {
            let l = chunk[0].0.symbol;
            let ls: Vec<(usize, Complex64)> =
                chunk.iter().map(|(p, x)| (p.subcarrier, grid[*p] / *x)).collect();
            for w in ls.windows(3) {
                let d = w[1].1 - (w[0].1 + w[2].1) * 0.5;
                residual += d.norm_sqr();
                residual_count += 1;
            }
            per_symbol.push((l, interpolate_frequency(&ls, n_sc)));
        }
        let mut g = ResourceGrid::zeros(grid.n_dl_rb(), grid.n_symbols());
        for l in 0..grid.n_symbols() {
            let nearest = per_symbol
                .iter()
                .min_by_key(|(pl, _)| pl.abs_diff(l))
                .map(|(_, h)| h)
                .expect("every port has pilot symbols");
            g.symbol_mut(l).copy_from_slice(nearest);
        }
        gains.push(g);
    }
    let noise_var = if residual_count == 0 {
        NOISE_FLOOR
    } else {
        (residual / residual_count as f64 / 1.5).max(NOISE_FLOOR)
    };
    ChannelEstimate { gains, noise_var }
}

fn interpolate_frequency(pilots: &[(usize, Complex64)], n_sc: usize) -> Vec<Complex64> {
    let mut out = vec![ZERO; n_sc];
    let mut j = 0;
    for (k, slot) in out.iter_mut().enumerate() {
        while j + 1 < pilots.len() && pilots[j + 1].0 <= k {
            j += 1;
        }
        *slot = if k <= pilots[0].0 {
            pilots[0].1
        } else if j + 1 >= pilots.len() {
            pilots[pilots.len() - 1].1
        } else {
            let (k0, h0) = pilots[j];
            let (k1, h1) = pilots[j + 1];
            let t = (k - k0) as f64 / (k1 - k0) as f64;
            h0 * (1.0 - t) + h1 * t
        };
    }
    out
}

/// Zero-forcing equalization against port 0.
pub fn equalize_grid(grid: &ResourceGrid, est: &ChannelEstimate) -> ResourceGrid {
    let mut out = grid.clone();
    for (y, h) in out.cells_mut().iter_mut().zip(est.gains[0].cells()) {
        *y = if h.norm() < MIN_GAIN { ZERO } else { *y / *h };
    }
    out
}

/// How a block of modulation symbols was spread over the antenna ports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxScheme {
    SinglePort,
    /// Two-port space-frequency block code on consecutive RE pairs.
    Sfbc,
}

impl TxScheme {
    pub fn for_ports(ports: usize) -> Self {
        if ports >= 2 {
            TxScheme::Sfbc
        } else {
            TxScheme::SinglePort
        }
    }
}

/// Two-port transmit-diversity precoding; input length must be even.
pub fn sfbc_precode(symbols: &[Complex64]) -> [Vec<Complex64>; 2] {
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let mut p0 = Vec::with_capacity(symbols.len());
    let mut p1 = Vec::with_capacity(symbols.len());
    for pair in symbols.chunks_exact(2) {
        let (x0, x1) = (pair[0], pair[1]);
        p0.push(x0 * a);
        p1.push(-x1.conj() * a);
        p0.push(x1 * a);
        p1.push(x0.conj() * a);
    }
    [p0, p1]
}

/// Recover modulation symbols at `positions` (in transmit order).
pub fn detect_symbols(
    grid: &ResourceGrid,
    est: &ChannelEstimate,
    positions: &[RePosition],
    scheme: TxScheme,
) -> Vec<Complex64> {
    match scheme {
        TxScheme::SinglePort => positions
            .iter()
            .map(|p| {
                let h = est.gains[0][*p];
                if h.norm() < MIN_GAIN {
                    ZERO
                } else {
                    grid[*p] / h
                }
            })
            .collect(),
        TxScheme::Sfbc => {
            let mut out = Vec::with_capacity(positions.len());
            let s2 = std::f64::consts::SQRT_2;
            for pair in positions.chunks_exact(2) {
                let (pa, pb) = (pair[0], pair[1]);
                let h0 = (est.gains[0][pa] + est.gains[0][pb]) * 0.5;
                let h1 = if est.gains.len() > 1 {
                    (est.gains[1][pa] + est.gains[1][pb]) * 0.5
                } else {
                    ZERO
                };
                let (r0, r1) = (grid[pa], grid[pb]);
                let den = h0.norm_sqr() + h1.norm_sqr();
                if den < MIN_GAIN * MIN_GAIN {
                    out.extend([ZERO, ZERO]);
                    continue;
                }
                out.push((h0.conj() * r0 + h1 * r1.conj()) * (s2 / den));
                out.push((h0.conj() * r1 - h1 * r0.conj()) * (s2 / den));
            }
            out
        }
    }
}

/// Place one block of symbols on the port grids according to `scheme`.
pub fn map_symbols(
    ports: &mut [ResourceGrid],
    positions: &[RePosition],
    symbols: &[Complex64],
    scheme: TxScheme,
) {
    match scheme {
        TxScheme::SinglePort => {
            for (p, s) in positions.iter().zip(symbols) {
                ports[0][*p] = *s;
            }
        }
        TxScheme::Sfbc => {
            let [y0, y1] = sfbc_precode(symbols);
            for ((p, a), b) in positions.iter().zip(&y0).zip(&y1) {
                ports[0][*p] = *a;
                ports[1][*p] = *b;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqfec::hard_decision;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(cfg: &CellConfig, seed: u64) -> ResourceGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = ResourceGrid::new(cfg);
        for c in g.cells_mut() {
            *c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        g
    }

    #[test]
    fn zero_grid_zero_samples_and_length() {
        let cfg = CellConfig::new(50, 1, 1).unwrap();
        let rec = ofdm_modulate(&[ResourceGrid::new(&cfg)], &cfg).unwrap();
        assert_eq!(rec.len(), 15360);
        assert!(rec.samples.iter().all(|s| s.norm() == 0.0));
        assert_eq!(rec.sample_rate_hz, 15.36e6);
    }

    #[test]
    fn parseval_over_useful_samples() {
        let cfg = CellConfig::new(50, 1, 1).unwrap();
        let grids: Vec<_> = (0..10).map(|i| random_grid(&cfg, i)).collect();
        let rec = ofdm_modulate(&grids, &cfg).unwrap();
        let p = crate::numerology::fft_params(50).unwrap();
        let mut time_energy = 0.0;
        for sf in 0..10 {
            for l in 0..14 {
                let s = sf * p.subframe_len() + p.useful_start(l);
                time_energy += rec.samples[s..s + p.fft_size]
                    .iter()
                    .map(|c| c.norm_sqr() as f64)
                    .sum::<f64>();
            }
        }
        let grid_energy: f64 = grids.iter().map(|g| g.energy()).sum();
        assert!(((time_energy - grid_energy) / grid_energy).abs() < 1e-9);
    }

    #[test]
    fn round_trip_all_bandwidths() {
        for n in [6u16, 25, 50] {
            let cfg = CellConfig::new(n, 3, 1).unwrap();
            let grids: Vec<_> = (0..2).map(|i| random_grid(&cfg, 10 + i)).collect();
            let rec = ofdm_modulate(&grids, &cfg).unwrap();
            let back = ofdm_demodulate(&rec, &cfg, 0).unwrap();
            assert_eq!(back.len(), 2);
            for (a, b) in grids.iter().zip(&back) {
                let err = a.cells().iter().zip(b.cells()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
                assert!(err < 1e-6, "n={n} err={err}");
            }
        }
    }

    #[test]
    fn insufficient_samples() {
        let cfg = CellConfig::new(6, 0, 1).unwrap();
        let rec = IqRecording::new(vec![], 1.92e6);
        assert!(matches!(ofdm_demodulate(&rec, &cfg, 0), Err(Error::InsufficientSamples { .. })));
        assert!(matches!(
            ofdm_modulate(&[ResourceGrid::zeros(25, 14)], &cfg),
            Err(Error::DimensionMismatch)
        ));
    }

    #[test]
    fn qpsk_mapping() {
        let bits = [0u8, 0, 0, 1, 1, 0, 1, 1];
        let s = qpsk_modulate(&bits).unwrap();
        assert!(s.iter().all(|x| (x.norm() - 1.0).abs() < 1e-12));
        assert!(s[0].re > 0.0 && s[0].im > 0.0);
        let llr = qpsk_soft_demod(&s, 0.1);
        let hard: Vec<u8> = llr.iter().map(|l| hard_decision(*l)).collect();
        assert_eq!(hard, bits);
        assert!(matches!(qpsk_modulate(&[1, 0, 1]), Err(Error::OddBitCount(3))));
    }

    fn pilot_grid(cfg: &CellConfig, gain: Complex64) -> ResourceGrid {
        let mut g = ResourceGrid::new(cfg);
        for port in 0..cfg.cell_ref_ports() {
            for (p, v) in crs_pilots(cfg, port, 2).unwrap() {
                g[p] = v * gain;
            }
        }
        g
    }

    #[test]
    fn flat_channel_estimate() {
        let cfg = CellConfig::new(25, 11, 2).unwrap();
        let gain = Complex64::new(0.6, -0.3);
        let est = estimate_channel(&pilot_grid(&cfg, gain), &cfg, 2);
        for port in 0..2 {
            assert!(est.gains[port].cells().iter().all(|h| (h - gain).norm() < 1e-3));
        }
        assert!(est.noise_var < 1e-6);
    }

    #[test]
    fn identity_channel_equalizes_to_input() {
        let cfg = CellConfig::new(25, 11, 1).unwrap();
        let mut g = random_grid(&cfg, 7);
        for (p, v) in crs_pilots(&cfg, 0, 0).unwrap() {
            g[p] = v;
        }
        let est = estimate_channel(&g, &cfg, 0);
        let eq = equalize_grid(&g, &est);
        let err = eq.cells().iter().zip(g.cells()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-3);
    }

    #[test]
    fn equalizer_scaling_and_erasure() {
        let cfg = CellConfig::new(6, 0, 1).unwrap();
        let g = random_grid(&cfg, 8);
        let mut est = ChannelEstimate::identity(&cfg, 1);
        assert_eq!(equalize_grid(&g, &est), g);
        est.gains[0].cells_mut().iter_mut().for_each(|h| *h = Complex64::new(2.0, 0.0));
        let half = equalize_grid(&g, &est);
        assert!(half.cells().iter().zip(g.cells()).all(|(a, b)| (a * 2.0 - b).norm() < 1e-12));
        est.gains[0].cells_mut()[5] = ZERO;
        let eq = equalize_grid(&g, &est);
        assert_eq!(eq.cells()[5], ZERO);
    }

    #[test]
    fn sfbc_round_trip_arbitrary_channel() {
        let cfg = CellConfig::new(6, 0, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bits: Vec<u8> = (0..48).map(|_| rng.random_range(0..2)).collect();
        let sym = qpsk_modulate(&bits).unwrap();
        let positions: Vec<RePosition> = (0..24).map(|k| RePosition::new(k, 3)).collect();
        let mut ports = vec![ResourceGrid::new(&cfg), ResourceGrid::new(&cfg)];
        map_symbols(&mut ports, &positions, &sym, TxScheme::Sfbc);
        let (h0, h1) = (Complex64::new(0.8, 0.1), Complex64::new(-0.2, 0.5));
        let mut rx = ResourceGrid::new(&cfg);
        for (i, c) in rx.cells_mut().iter_mut().enumerate() {
            *c = ports[0].cells()[i] * h0 + ports[1].cells()[i] * h1;
        }
        let mut est = ChannelEstimate::identity(&cfg, 2);
        est.gains[0].cells_mut().iter_mut().for_each(|h| *h = h0);
        est.gains[1].cells_mut().iter_mut().for_each(|h| *h = h1);
        let det = detect_symbols(&rx, &est, &positions, TxScheme::Sfbc);
        for (a, b) in det.iter().zip(&sym) {
            assert!((a - b).norm() < 1e-9);
        }
    }
}
