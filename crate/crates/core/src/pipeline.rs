//! Receive chain over a whole recording: cell search, MIB, then per
//! subframe PCFICH, blind PDCCH search, filtering, power and frame load.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blindrnti::{filter_candidates, measure_power, search_candidates, DciCandidate, FilterOptions};
use crate::cch::{extract_cces, pcfich_decode, ControlLayout};
use crate::dci::{DciFormat, LinkDirection};
use crate::error::{Error, Result};
use crate::iqio::IqRecording;
use crate::load::{frame_load, FrameLoad, LoadPolicy};
use crate::numerology::{CellConfig, CellSettings, CyclicPrefix, FftParams, SUBFRAMES_PER_FRAME};
use crate::ofdm::{equalize_grid, estimate_channel, to_f64, OfdmEngine};
use crate::pbch::pbch_decode;
use crate::sync::{cell_search, correct_cfo, SyncResult};

/// Samples the FFT window is moved back into the cyclic prefix.
pub const DEFAULT_BACKOFF: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOptions {
    pub formats: Vec<DciFormat>,
    pub filter: FilterOptions,
    pub load_policy: LoadPolicy,
    pub threads: usize,
    pub backoff: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            formats: DciFormat::ALL.to_vec(),
            filter: FilterOptions::default(),
            load_policy: LoadPolicy::default(),
            threads: 1,
            backoff: DEFAULT_BACKOFF,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SkippedSubframe {
    pub sfn: u16,
    pub subframe: u8,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub sync: SyncResult,
    pub settings: CellSettings,
    /// Accepted candidates in (sfn, subframe, CCE) order.
    pub candidates: Vec<DciCandidate>,
    /// Every search hit before filtering.
    pub raw_candidates: Vec<DciCandidate>,
    pub frames: Vec<FrameLoad>,
    pub skipped: Vec<SkippedSubframe>,
}

struct SubframeResult {
    accepted: Vec<DciCandidate>,
    raw: Vec<DciCandidate>,
    skipped: Option<SkippedSubframe>,
}

fn decode_subframe(
    engine: &OfdmEngine,
    samples: &[num_complex::Complex64],
    start: usize,
    cfg: &CellConfig,
    sfn: u16,
    sf: usize,
    opts: &DecodeOptions,
) -> Result<SubframeResult> {
    let grid = engine.demodulate_subframe(samples, start, cfg.n_dl_rb(), opts.backoff)?;
    let est = estimate_channel(&grid, cfg, sf);
    let skip = |reason: String| SubframeResult {
        accepted: vec![],
        raw: vec![],
        skipped: Some(SkippedSubframe { sfn, subframe: sf as u8, reason }),
    };
    let cfi = match pcfich_decode(&grid, &est, cfg, sf) {
        Ok((cfi, _)) => cfi,
        Err(e @ Error::LowConfidence(_)) => return Ok(skip(e.to_string())),
        Err(e) => return Err(e),
    };
    let layout = match ControlLayout::new(cfg, cfi) {
        Ok(l) => l,
        Err(e @ Error::ControlRegionTooSmall) => return Ok(skip(e.to_string())),
        Err(e) => return Err(e),
    };
    let space = extract_cces(&grid, &est, &layout, sf);
    let raw = search_candidates(&space, cfg, &opts.formats, sfn, sf as u8);
    let mut accepted = filter_candidates(&raw, opts.filter);
    if !accepted.is_empty() {
        let eq = equalize_grid(&grid, &est);
        for c in &mut accepted {
            if c.link_direction == LinkDirection::Downlink {
                c.power_db = measure_power(&eq, &c.prb_set, cfg, cfi.value(), sf).ok();
            }
        }
    }
    Ok(SubframeResult { accepted, raw, skipped: None })
}

pub fn decode_recording(rec: &IqRecording, opts: &DecodeOptions) -> Result<DecodeOutput> {
    let (sync, cp) = match cell_search(rec, CyclicPrefix::Normal) {
        Ok(s) => (s, CyclicPrefix::Normal),
        Err(first) => match cell_search(rec, CyclicPrefix::Extended) {
            Ok(s) => (s, CyclicPrefix::Extended),
            Err(_) => return Err(first),
        },
    };
    let params = FftParams::from_sample_rate(rec.sample_rate_hz, cp)?;
    let mut samples = to_f64(&rec.samples);
    correct_cfo(&mut samples, sync.cfo_hz, rec.sample_rate_hz);
    let engine = OfdmEngine::new(params.clone());
    let sf_len = params.subframe_len();
    let start = sync.timing_offset;
    let n_subframes = samples.len().saturating_sub(start) / sf_len;
    if n_subframes == 0 {
        return Err(Error::InsufficientSamples { needed: start + sf_len, available: samples.len() });
    }

    let pci = sync.identity.pci;
    let centre = engine.demodulate_subframe(&samples, start, 6, opts.backoff)?;
    let mib = pbch_decode(&[centre], pci, cp)?;
    let cfg = mib.cell_config(pci, cp)?;
    if params.fft_size <= cfg.n_subcarriers() {
        return Err(Error::InvalidConfig(format!(
            "sample rate {} Hz too low for {} RBs",
            rec.sample_rate_hz,
            cfg.n_dl_rb()
        )));
    }
    let settings = CellSettings { cell: cfg, n_subframe: 0, n_frame: mib.full_sfn };
    tracing::info!(pci, n_dl_rb = cfg.n_dl_rb(), sfn = mib.full_sfn, "cell acquired");

    let jobs: Vec<(u16, usize, usize)> = (0..n_subframes)
        .map(|i| {
            let sfn = ((mib.full_sfn as usize + i / SUBFRAMES_PER_FRAME) % 1024) as u16;
            (sfn, i % SUBFRAMES_PER_FRAME, start + i * sf_len)
        })
        .collect();
    let run = |&(sfn, sf, at): &(u16, usize, usize)| decode_subframe(&engine, &samples, at, &cfg, sfn, sf, opts);
    let results: Vec<SubframeResult> = if opts.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        pool.install(|| jobs.par_iter().map(run).collect::<Result<_>>())?
    } else {
        jobs.iter().map(run).collect::<Result<_>>()?
    };

    let mut candidates = Vec::new();
    let mut skipped = Vec::new();
    let mut raw_candidates = Vec::new();
    for r in results {
        raw_candidates.extend(r.raw);
        candidates.extend(r.accepted);
        skipped.extend(r.skipped);
    }
    let mut by_frame: BTreeMap<usize, Vec<DciCandidate>> = BTreeMap::new();
    for frame in 0..n_subframes.div_ceil(SUBFRAMES_PER_FRAME) {
        by_frame.insert(frame, Vec::new());
    }
    for c in &candidates {
        let frame = (c.sfn as usize + 1024 - mib.full_sfn as usize) % 1024;
        by_frame.entry(frame).or_default().push(c.clone());
    }
    let frames = by_frame
        .iter()
        .map(|(f, cands)| {
            let sfn = ((mib.full_sfn as usize + f) % 1024) as u16;
            frame_load(sfn, cands, cfg.n_dl_rb(), opts.load_policy)
        })
        .collect();
    Ok(DecodeOutput { sync, settings, candidates, raw_candidates, frames, skipped })
}
