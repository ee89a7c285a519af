//! Cell search: PSS/SSS generation and detection, timing, CFO and PCI.
//!
//! The PSS is located at 1.92 MHz after low-pass decimation, refined at
//! the capture rate, and the CFO is taken from the cyclic-prefix
//! correlation of the symbols that follow. The SSS is then matched in the
//! frequency domain against all 168 groups and both half-frame orders.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iqio::IqRecording;
use crate::numerology::{CellConfig, CyclicPrefix, FftParams, RePosition};
use crate::ofdm::{to_f64, OfdmEngine};

pub const N_ID1_MAX: u16 = 167;
pub const SYNC_LEN: usize = 62;
const PSS_ROOTS: [u32; 3] = [25, 29, 34];
const SEARCH_FFT: usize = 128;

/// Minimum ratio of the correlation peak to its mean over the search window.
pub const PEAK_TO_MEAN_MIN: f64 = 4.0;
/// Minimum normalized correlation at the peak.
pub const RHO_MIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellIdentity {
    pub nid1: u16,
    pub nid2: u8,
    pub pci: u16,
}

impl CellIdentity {
    pub fn new(nid1: u16, nid2: u8) -> Result<Self> {
        Ok(CellIdentity { nid1, nid2, pci: compute_pci(nid1, nid2)? })
    }

    pub fn from_pci(pci: u16) -> Result<Self> {
        if pci > 503 {
            return Err(Error::InvalidConfig(format!("NCellID {pci} out of range [0, 503]")));
        }
        Self::new(pci / 3, (pci % 3) as u8)
    }
}

pub fn compute_pci(nid1: u16, nid2: u8) -> Result<u16> {
    if nid1 > N_ID1_MAX || nid2 > 2 {
        return Err(Error::OutOfRange { nid1, nid2 });
    }
    Ok(3 * nid1 + nid2 as u16)
}

/// Which PSS of the frame was found: subframe 0 or subframe 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HalfFrame {
    First,
    Second,
}

impl HalfFrame {
    pub fn subframe(self) -> usize {
        match self {
            HalfFrame::First => 0,
            HalfFrame::Second => 5,
        }
    }
}

pub fn pss_sequence(nid2: u8) -> Result<Vec<Complex64>> {
    let u = *PSS_ROOTS.get(nid2 as usize).ok_or(Error::InvalidNid2(nid2))? as f64;
    Ok((0..SYNC_LEN)
        .map(|n| {
            let m = if n < 31 { n * (n + 1) } else { (n + 1) * (n + 2) } as f64;
            Complex64::from_polar(1.0, -std::f64::consts::PI * u * m / 63.0)
        })
        .collect())
}

fn m_sequence(taps: &[usize]) -> [f64; 31] {
    let mut x = [0u8; 31];
    x[4] = 1;
    for i in 0..26 {
        x[i + 5] = taps.iter().map(|t| x[i + t]).sum::<u8>() % 2;
    }
    x.map(|b| 1.0 - 2.0 * b as f64)
}

pub fn sss_sequence(id: CellIdentity, half: HalfFrame) -> Vec<f64> {
    let s = m_sequence(&[2, 0]);
    let c = m_sequence(&[3, 0]);
    let z = m_sequence(&[4, 2, 1, 0]);
    let n1 = id.nid1 as usize;
    let qp = n1 / 30;
    let q = (n1 + qp * (qp + 1) / 2) / 30;
    let mp = n1 + q * (q + 1) / 2;
    let m0 = mp % 31;
    let m1 = (m0 + mp / 31 + 1) % 31;
    let n2 = id.nid2 as usize;

    let mut d = vec![0.0; SYNC_LEN];
    for n in 0..31 {
        let s0 = s[(n + m0) % 31];
        let s1 = s[(n + m1) % 31];
        let c0 = c[(n + n2) % 31];
        let c1 = c[(n + n2 + 3) % 31];
        let z0 = z[(n + m0 % 8) % 31];
        let z1 = z[(n + m1 % 8) % 31];
        match half {
            HalfFrame::First => {
                d[2 * n] = s0 * c0;
                d[2 * n + 1] = s1 * c1 * z0;
            }
            HalfFrame::Second => {
                d[2 * n] = s1 * c0;
                d[2 * n + 1] = s0 * c1 * z1;
            }
        }
    }
    d
}

/// Symbol of subframes 0 and 5 carrying the PSS; the SSS is one before it.
pub fn pss_symbol(cp: CyclicPrefix) -> usize {
    cp.symbols_per_slot() - 1
}

/// Grid positions of the 62 synchronization subcarriers on `symbol`.
pub fn sync_positions(cfg: &CellConfig, symbol: usize) -> Vec<RePosition> {
    let base = cfg.n_subcarriers() / 2 - 31;
    (0..SYNC_LEN).map(|n| RePosition::new(base + n, symbol)).collect()
}

/// Outcome of the PSS stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PssDetection {
    pub nid2: u8,
    /// Capture-rate index of the first sample after the PSS cyclic prefix.
    pub position: usize,
    pub cfo_hz: f64,
    pub metric: f64,
    pub peak_to_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SssDetection {
    pub nid1: u16,
    pub half: HalfFrame,
    pub metric: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncResult {
    pub identity: CellIdentity,
    /// Capture-rate index of a frame start, reduced modulo the frame length.
    pub timing_offset: usize,
    pub cfo_hz: f64,
    pub half_frame: HalfFrame,
    pub metric: f64,
}

fn sync_waveform(engine: &OfdmEngine, nid2: u8, n_sc: usize) -> Vec<Complex64> {
    let mut sc = vec![Complex64::new(0.0, 0.0); n_sc];
    let base = n_sc / 2 - 31;
    for (k, v) in pss_sequence(nid2).expect("nid2 < 3").into_iter().enumerate() {
        sc[base + k] = v;
    }
    engine.ifft_symbol(&sc)
}

fn lowpass_taps(factor: usize) -> Vec<f64> {
    let len = 24 * factor + 1;
    let mid = (len / 2) as f64;
    // Cutoff at 600 kHz for every capture rate.
    let fc = 0.3125 / factor as f64;
    let mut taps: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 - mid;
            let sinc = if t == 0.0 { 2.0 * fc } else { (2.0 * std::f64::consts::PI * fc * t).sin() / (std::f64::consts::PI * t) };
            let w = 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (len - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Zero-phase low-pass filter and keep every `factor`-th sample.
fn decimate(samples: &[Complex64], factor: usize) -> Vec<Complex64> {
    if factor == 1 {
        return samples.to_vec();
    }
    let taps = lowpass_taps(factor);
    let half = taps.len() / 2;
    (0..samples.len().div_ceil(factor))
        .map(|m| {
            let centre = m * factor;
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, t) in taps.iter().enumerate() {
                let idx = centre as isize + j as isize - half as isize;
                if idx >= 0 && (idx as usize) < samples.len() {
                    acc += samples[idx as usize] * *t;
                }
            }
            acc
        })
        .collect()
}

/// `|<x[n..n+N], p>|`, and window energy, for every start `n`.
fn correlate(x: &[Complex64], p: &[Complex64], starts: std::ops::Range<usize>) -> Vec<(f64, f64)> {
    starts
        .map(|n| {
            let w = &x[n..n + p.len()];
            let c: Complex64 = w.iter().zip(p).map(|(a, b)| a * b.conj()).sum();
            let e: f64 = w.iter().map(|a| a.norm_sqr()).sum();
            (c.norm(), e)
        })
        .collect()
}

/// Locate the strongest PSS and estimate the carrier offset.
pub fn detect_pss(rec: &IqRecording, cp: CyclicPrefix) -> Result<PssDetection> {
    let params = FftParams::from_sample_rate(rec.sample_rate_hz, cp)?;
    let samples = to_f64(&rec.samples);
    detect_pss_samples(&samples, &params)
}

pub fn detect_pss_samples(samples: &[Complex64], params: &FftParams) -> Result<PssDetection> {
    let factor = params.fft_size / SEARCH_FFT;
    let needed = params.frame_len() / 2 + params.fft_size + params.slot_len();
    if samples.len() < needed {
        return Err(Error::InsufficientSamples { needed, available: samples.len() });
    }
    // One frame plus a symbol always contains a complete PSS.
    let span = samples.len().min(params.frame_len() + params.slot_len());
    let coarse_params = FftParams::for_fft_size(SEARCH_FFT, cp_of(params));
    let coarse_engine = OfdmEngine::new(coarse_params);
    let low = decimate(&samples[..span], factor);
    if low.len() <= SEARCH_FFT {
        return Err(Error::InsufficientSamples { needed, available: samples.len() });
    }

    let mut best: Option<(u8, usize, f64, f64)> = None;
    for nid2 in 0..3u8 {
        let replica = sync_waveform(&coarse_engine, nid2, 72);
        let p_norm = replica.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let corr = correlate(&low, &replica, 0..low.len() - SEARCH_FFT);
        let mean_sq = corr.iter().map(|(c, _)| c * c).sum::<f64>() / corr.len() as f64;
        let (idx, (c, e)) = corr
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
            .expect("non-empty correlation");
        let rho = if *e > 0.0 { c / (e.sqrt() * p_norm) } else { 0.0 };
        let ptm = if mean_sq > 0.0 { c * c / mean_sq } else { 0.0 };
        if best.is_none_or(|b| rho > b.2) {
            best = Some((nid2, idx, rho, ptm));
        }
    }
    let (nid2, coarse, rho, ptm) = best.expect("three roots searched");
    if ptm < PEAK_TO_MEAN_MIN || rho < RHO_MIN {
        return Err(Error::NoPssFound { peak_to_mean: ptm, metric: rho });
    }

    let engine = OfdmEngine::new(params.clone());
    let replica = sync_waveform(&engine, nid2, 72);
    let n = params.fft_size;
    let centre = coarse * factor;
    let lo = centre.saturating_sub(3 * factor);
    let hi = (centre + 3 * factor + 1).min(samples.len() - n + 1);
    let fine = correlate(samples, &replica, lo..hi);
    let position = lo
        + fine
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
            .map(|(i, _)| i)
            .expect("fine window non-empty");

    let cfo_hz = estimate_cfo(samples, params, position);
    Ok(PssDetection { nid2, position, cfo_hz, metric: rho.min(1.0), peak_to_mean: ptm })
}

fn cp_of(params: &FftParams) -> CyclicPrefix {
    if params.symbols_per_slot() == 7 {
        CyclicPrefix::Normal
    } else {
        CyclicPrefix::Extended
    }
}

/// CP correlation averaged over one frame of symbols aligned to the PSS.
fn estimate_cfo(samples: &[Complex64], params: &FftParams, pss_useful: usize) -> f64 {
    let cp = cp_of(params);
    let n = params.fft_size;
    let pss_sym = pss_symbol(cp);
    // Walk symbol boundaries backwards and forwards from the PSS symbol.
    let sf_start = pss_useful as isize - params.useful_start(pss_sym) as isize;
    let n_sym = params.symbols_per_subframe();
    let mut acc = Complex64::new(0.0, 0.0);
    for sf in -1isize..=10 {
        for l in 0..n_sym {
            let cp_start = sf_start + sf * params.subframe_len() as isize + params.symbol_start(l) as isize;
            let cp_len = params.cp_len(l);
            if cp_start < 0 || cp_start as usize + cp_len + n > samples.len() {
                continue;
            }
            let s = cp_start as usize;
            for i in s..s + cp_len {
                acc += samples[i].conj() * samples[i + n];
            }
        }
    }
    acc.arg() * params.sample_rate_hz as f64 / (2.0 * std::f64::consts::PI * n as f64)
}

/// Remove a carrier offset of `cfo_hz`.
pub fn correct_cfo(samples: &mut [Complex64], cfo_hz: f64, sample_rate_hz: f64) {
    let step = -2.0 * std::f64::consts::PI * cfo_hz / sample_rate_hz;
    for (i, s) in samples.iter_mut().enumerate() {
        *s *= Complex64::from_polar(1.0, step * i as f64);
    }
}

/// Match the SSS preceding the PSS at `pss_useful` (CFO already removed).
pub fn detect_sss(
    samples: &[Complex64],
    params: &FftParams,
    nid2: u8,
    pss_useful: usize,
) -> Result<SssDetection> {
    let n = params.fft_size;
    let pss_sym = pss_symbol(cp_of(params));
    let sss_useful = pss_useful
        .checked_sub(params.cp_len(pss_sym) + n)
        .ok_or(Error::NoSssFound(0.0))?;
    if pss_useful + n > samples.len() {
        return Err(Error::InsufficientSamples { needed: pss_useful + n, available: samples.len() });
    }
    let engine = OfdmEngine::new(params.clone());
    let ypss = engine.demodulate_symbol(samples, pss_useful, 72);
    let ysss = engine.demodulate_symbol(samples, sss_useful, 72);
    let pss = pss_sequence(nid2)?;
    // Coherent combination with the channel seen on the PSS.
    let z: Vec<Complex64> = (0..SYNC_LEN)
        .map(|k| ysss[5 + k] * (ypss[5 + k] * pss[k].conj()).conj())
        .collect();
    let norm: f64 = z.iter().map(|v| v.norm()).sum();
    if norm == 0.0 {
        return Err(Error::NoSssFound(0.0));
    }
    let mut best = SssDetection { nid1: 0, half: HalfFrame::First, metric: f64::MIN };
    for nid1 in 0..=N_ID1_MAX {
        let id = CellIdentity::new(nid1, nid2)?;
        for half in [HalfFrame::First, HalfFrame::Second] {
            let d = sss_sequence(id, half);
            let m = z.iter().zip(&d).map(|(a, b)| a.re * b).sum::<f64>() / norm;
            if m > best.metric {
                best = SssDetection { nid1, half, metric: m };
            }
        }
    }
    if best.metric < RHO_MIN {
        return Err(Error::NoSssFound(best.metric));
    }
    Ok(best)
}

/// Full cell search on a recording.
pub fn cell_search(rec: &IqRecording, cp: CyclicPrefix) -> Result<SyncResult> {
    let params = FftParams::from_sample_rate(rec.sample_rate_hz, cp)?;
    let mut samples = to_f64(&rec.samples);
    let pss = detect_pss_samples(&samples, &params)?;
    correct_cfo(&mut samples, pss.cfo_hz, rec.sample_rate_hz);
    let sss = detect_sss(&samples, &params, pss.nid2, pss.position)?;
    let identity = CellIdentity::new(sss.nid1, pss.nid2)?;
    let frame_len = params.frame_len() as isize;
    let offset = params.useful_start(pss_symbol(cp)) + sss.half.subframe() * params.subframe_len();
    let start = (pss.position as isize - offset as isize).rem_euclid(frame_len) as usize;
    Ok(SyncResult {
        identity,
        timing_offset: start,
        cfo_hz: pss.cfo_hz,
        half_frame: sss.half,
        metric: pss.metric,
    })
}
