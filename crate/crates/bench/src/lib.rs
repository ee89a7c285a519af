//! Fixtures shared by the criterion benchmarks in `benches/`.

use dcisniff::cch::{extract_cces, pcfich_decode, CceSpace, ControlLayout};
use dcisniff::ofdm::{estimate_channel, to_f64, OfdmEngine};
use dcisniff::numerology::FftParams;
use dcisniff::txgen::{generate_recording, Scenario};
use dcisniff::{CellConfig, IqRecording};

/// The two-port, 50 RB scenario with several grant types and noise.
pub const BUSY: &str = include_str!("../../../scenarios/overlap_filter.json");

pub fn recording(text: &str) -> (CellConfig, IqRecording) {
    let sc = Scenario::from_json(text).expect("bundled scenario parses");
    let (rec, _) = generate_recording(&sc.cell, &sc.schedule, &sc.impairments).expect("scenario generates");
    (sc.cell, rec)
}

/// CCE soft bits of subframe 0 of a noiseless copy of `text`.
pub fn control_space(text: &str) -> (CellConfig, CceSpace) {
    let mut sc = Scenario::from_json(text).expect("bundled scenario parses");
    sc.impairments = Default::default();
    let (rec, _) = generate_recording(&sc.cell, &sc.schedule, &sc.impairments).expect("scenario generates");
    let cfg = sc.cell;
    let params = FftParams::from_sample_rate(rec.sample_rate_hz, cfg.cyclic_prefix()).expect("standard rate");
    let engine = OfdmEngine::new(params);
    let grid = engine.demodulate_subframe(&to_f64(&rec.samples), 0, cfg.n_dl_rb(), 2).expect("one subframe");
    let est = estimate_channel(&grid, &cfg, 0);
    let (cfi, _) = pcfich_decode(&grid, &est, &cfg, 0).expect("clean PCFICH");
    let layout = ControlLayout::new(&cfg, cfi).expect("control region");
    (cfg, extract_cces(&grid, &est, &layout, 0))
}
