//! End-to-end loopback checks behind the `selftest` command.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blindrnti::{
    classify_rnti, encode_pdcch, filter_candidates, level_allowed, recover_rnti, search_candidates,
    FilterOptions, RntiClass, AGGREGATION_LEVELS,
};
use crate::cch::{embed_cces, extract_cces, Cfi, ControlLayout};
use crate::dci::{dci_size, DciFormat, LinkDirection, PrbSet};
use crate::error::Result;
use crate::load::{frame_load, render_report, unique_ues, FrameLoad, LoadPolicy, ReportFormat, ReportRow};
use crate::numerology::{crs_pilots, CellConfig, CyclicPrefix, ResourceGrid};
use crate::ofdm::ChannelEstimate;
use crate::pbch::{pbch_decode, pbch_map};
use crate::pipeline::{decode_recording, DecodeOptions};
use crate::seqfec::{bit_to_llr, conv_encode_tailbiting, decode_block, viterbi_decode_tailbiting};
use crate::sync::{cell_search, compute_pci};
use crate::txgen::{generate_recording_with_hooks, ImpairmentSpec, Scenario, TxHooks};

pub const SCENARIO_A: &str = include_str!("../../../scenarios/single_ue.json");
pub const SCENARIO_B: &str = include_str!("../../../scenarios/overlap_filter.json");

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub index: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub outcomes: Vec<Outcome>,
    /// Decoded loopback reports, one CSV block per scenario.
    pub report: String,
    pub elapsed_s: f64,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }
}

fn decode_scenario(text: &str, hooks: TxHooks) -> Result<(crate::pipeline::DecodeOutput, Vec<crate::DciCandidate>)> {
    let sc = Scenario::from_json(text)?;
    let (rec, manifest) = generate_recording_with_hooks(&sc.cell, &sc.schedule, &sc.impairments, hooks)?;
    Ok((decode_recording(&rec, &DecodeOptions::default())?, manifest))
}

fn check_pci() -> (bool, String) {
    let ok = compute_pci(9, 0).ok() == Some(27) && compute_pci(4, 1).ok() == Some(13);
    let mut seen = vec![false; 504];
    for nid1 in 0..168 {
        for nid2 in 0..3 {
            if let Ok(p) = compute_pci(nid1, nid2) {
                seen[p as usize] = true;
            }
        }
    }
    (ok && seen.iter().all(|s| *s), "27, 13, bijective".into())
}

fn check_single_ue(out: &Result<(crate::pipeline::DecodeOutput, Vec<crate::DciCandidate>)>) -> (bool, String) {
    let Ok((out, _)) = out else { return (false, format!("{:?}", out.as_ref().err())) };
    let full = PrbSet::range(0, 50);
    let good = (0..10u8)
        .filter(|sf| {
            let rows: Vec<_> = out.candidates.iter().filter(|c| c.subframe == *sf).collect();
            rows.len() == 1
                && rows[0].rnti == 0x0021
                && rows[0].num_errors == 0
                && rows[0].format == DciFormat::F1
                && rows[0].prb_set == full
        })
        .count();
    (good == 10, format!("{good}/10 subframes"))
}

fn check_filtering(out: &Result<(crate::pipeline::DecodeOutput, Vec<crate::DciCandidate>)>) -> (bool, String) {
    let Ok((out, _)) = out else { return (false, format!("{:?}", out.as_ref().err())) };
    let mut ues: Vec<u16> = out.candidates.iter().filter(|c| classify_rnti(c.rnti) == RntiClass::CRnti).map(|c| c.rnti).collect();
    ues.dedup();
    let system = out.candidates.iter().any(|c| c.rnti == 0xFFFF);
    (ues == [0x003D] && system, format!("C-RNTIs {ues:04X?}, system {system}"))
}

fn check_load(out: &Result<(crate::pipeline::DecodeOutput, Vec<crate::DciCandidate>)>) -> (bool, String) {
    let f = FrameLoad::from_counts(0, 154, 500, 0);
    let eq = (f.percent() - 30.8).abs() < 0.05;
    let loop_ok = matches!(out, Ok((o, _)) if o.frames.len() == 1 && o.frames[0].n_assigned == 500);
    (eq && loop_ok, format!("{:.1}%", f.percent()))
}

fn check_unique_ues() -> (bool, String) {
    let rows: [(u8, u16, LinkDirection); 9] = [
        (0, 0xFFFF, LinkDirection::Downlink),
        (0, 0xB142, LinkDirection::Downlink),
        (2, 0x2667, LinkDirection::Uplink),
        (4, 0xD2CB, LinkDirection::Downlink),
        (5, 0x3A48, LinkDirection::Downlink),
        (6, 0x2AC6, LinkDirection::Downlink),
        (7, 0x5A0F, LinkDirection::Downlink),
        (8, 0x2667, LinkDirection::Downlink),
        (9, 0x27F0, LinkDirection::Downlink),
    ];
    let cands: Vec<crate::DciCandidate> = rows
        .iter()
        .map(|(sf, rnti, dir)| crate::DciCandidate {
            sfn: 867,
            subframe: *sf,
            rnti: *rnti,
            num_errors: 1,
            format: if *dir == LinkDirection::Uplink { DciFormat::F0 } else { DciFormat::F2 },
            link_direction: *dir,
            prb_set: PrbSet::range(0, 1),
            power_db: None,
            aggregation_level: 4,
            cce_offset: 0,
            payload: vec![],
            multiplicity: 1,
        })
        .collect();
    let n = unique_ues(&cands);
    let load = frame_load(867, &cands, 50, LoadPolicy::default());
    (n == 7 && load.unique_ues == 7, format!("{n} unique"))
}

fn check_mib() -> (bool, String) {
    let Ok(cfg) = CellConfig::new(50, 13, 2) else { return (false, "config".into()) };
    let mut ports = vec![ResourceGrid::new(&cfg); 2];
    for (p, g) in ports.iter_mut().enumerate() {
        for (pos, v) in crs_pilots(&cfg, p, 0).unwrap_or_default() {
            g[pos] = v;
        }
    }
    if pbch_map(&mut ports, &cfg, 867).is_err() {
        return (false, "map".into());
    }
    let mut rx = ports[0].clone();
    for (a, b) in rx.cells_mut().iter_mut().zip(ports[1].cells()) {
        *a += b;
    }
    match pbch_decode(&[rx], 13, CyclicPrefix::Normal) {
        Ok(r) => (
            r.full_sfn == 867 && r.cell_ref_ports == 2 && r.mib.n_dl_rb == 50,
            format!("sfn {} ports {}", r.full_sfn, r.cell_ref_ports),
        ),
        Err(e) => (false, e.to_string()),
    }
}

fn check_fec(rng: &mut ChaCha8Rng) -> (bool, String) {
    let mut failures = 0;
    for _ in 0..50 {
        let len = rng.random_range(16..=64);
        let bits: Vec<u8> = (0..len).map(|_| rng.random_range(0..2)).collect();
        let Ok(streams) = conv_encode_tailbiting(&bits) else { failures += 1; continue };
        let mut soft: Vec<f64> = (0..3 * len).map(|i| bit_to_llr(streams[i % 3][i / 3], 1.0)).collect();
        let flip = rng.random_range(0..soft.len());
        soft[flip] = -soft[flip];
        if viterbi_decode_tailbiting(&soft, len).ok() != Some(bits.clone()) {
            failures += 1;
        }
    }
    (failures == 0, format!("{failures} failures"))
}

fn check_sync(rng: &mut ChaCha8Rng) -> (bool, String) {
    let mut good = 0;
    let trials = 3;
    for _ in 0..trials {
        let pci = rng.random_range(0..504u16);
        let Ok(cfg) = CellConfig::new(6, pci, 1) else { continue };
        let pad = rng.random_range(0..5000);
        let imp = ImpairmentSpec { cfo_hz: 500.0, timing_pad_samples: pad, snr_db: None, seed: 0 };
        let Ok((rec, _)) = generate_recording_with_hooks(&cfg, &Default::default(), &imp, TxHooks::default()) else {
            continue;
        };
        if let Ok(s) = cell_search(&rec, CyclicPrefix::Normal) {
            let frame = 19_200;
            let err = (s.timing_offset as i64 - (pad % frame) as i64).rem_euclid(frame as i64);
            let err = err.min(frame as i64 - err);
            if s.identity.pci == pci && err <= 2 && (s.cfo_hz - 500.0).abs() < 50.0 {
                good += 1;
            }
        }
    }
    (good == trials, format!("{good}/{trials} PCIs"))
}

fn check_blind(rng: &mut ChaCha8Rng) -> (bool, String) {
    let Ok(cfg) = CellConfig::new(50, 27, 2) else { return (false, "config".into()) };
    let Ok(layout) = ControlLayout::new(&cfg, Cfi::new(3).unwrap()) else { return (false, "layout".into()) };
    let trials = 40;
    let mut good = 0;
    for _ in 0..trials {
        let format = DciFormat::ALL[rng.random_range(0..DciFormat::ALL.len())];
        let rnti: u16 = rng.random();
        let Ok(k) = dci_size(format, 50, 2) else { continue };
        let levels: Vec<usize> = AGGREGATION_LEVELS.iter().copied().filter(|l| level_allowed(k, *l)).collect();
        let level = levels[rng.random_range(0..levels.len())];
        let payload: Vec<u8> = (0..k).map(|_| rng.random_range(0..2)).collect();
        let Ok(coded) = encode_pdcch(&payload, rnti, level) else { continue };
        let soft: Vec<f64> = coded.iter().map(|b| bit_to_llr(*b, 1.0)).collect();
        let direct = decode_block(&soft, k + 16).and_then(|d| recover_rnti(&d, &soft));
        let mut bits = vec![0u8; 72 * layout.num_cces()];
        bits[..coded.len()].copy_from_slice(&coded);
        let mut ports = vec![ResourceGrid::new(&cfg); 2];
        if embed_cces(&mut ports, &bits, &layout, 3).is_err() {
            continue;
        }
        let mut rx = ports[0].clone();
        for (a, b) in rx.cells_mut().iter_mut().zip(ports[1].cells()) {
            *a += b;
        }
        let space = extract_cces(&rx, &ChannelEstimate::identity(&cfg, 2), &layout, 3);
        let found = filter_candidates(
            &search_candidates(&space, &cfg, &DciFormat::ALL, 0, 3),
            FilterOptions::default(),
        );
        let hit = found.iter().any(|c| c.rnti == rnti && c.num_errors == 0 && c.payload == payload);
        // Payloads with an invalid allocation are rejected by the parser.
        let parseable = crate::dci::parse_dci(&payload, format, 50, 2).is_ok();
        if matches!(direct, Ok(ref r) if r.rnti == rnti && r.num_errors == 0) && (hit || !parseable) {
            good += 1;
        }
    }
    (good == trials, format!("{good}/{trials} plants"))
}

/// Run every check. `hooks` corrupts the transmitter for negative tests.
pub fn run(hooks: TxHooks) -> SelftestReport {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5E1F);
    let a = decode_scenario(SCENARIO_A, hooks);
    let b = decode_scenario(SCENARIO_B, hooks);
    let b_again = decode_scenario(SCENARIO_B, hooks);

    let mut report = String::new();
    for out in [&a, &b] {
        let rows: Vec<ReportRow> = match out {
            Ok((o, _)) => o.candidates.iter().map(ReportRow::from_candidate).collect(),
            Err(_) => vec![],
        };
        report.push_str(&render_report(&rows, ReportFormat::Csv).unwrap_or_default());
    }
    let same = match (&b, &b_again) {
        (Ok((x, _)), Ok((y, _))) => x.candidates == y.candidates && x.frames == y.frames,
        _ => false,
    };

    let checks: Vec<(&'static str, (bool, String))> = vec![
        ("cell identity", check_pci()),
        ("single-UE loopback", check_single_ue(&a)),
        ("false-positive filtering", check_filtering(&b)),
        ("information load", check_load(&a)),
        ("unique UE census", check_unique_ues()),
        ("MIB loopback", check_mib()),
        ("FEC", check_fec(&mut rng)),
        ("synchronization", check_sync(&mut rng)),
        ("blind RNTI recovery", check_blind(&mut rng)),
        ("determinism", (same, "repeat decode identical".into())),
    ];
    let outcomes = checks
        .into_iter()
        .enumerate()
        .map(|(i, (name, (passed, detail)))| Outcome { index: i + 1, name, passed, detail })
        .collect();
    SelftestReport { outcomes, report, elapsed_s: t0.elapsed().as_secs_f64() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes_and_negative_control_fails() {
        let good = run(TxHooks::default());
        for o in &good.outcomes {
            assert!(o.passed, "{} {}: {}", o.index, o.name, o.detail);
        }
        let bad = run(TxHooks { pdcch_c_init_xor: 1 });
        assert!(!bad.passed());
    }
}
