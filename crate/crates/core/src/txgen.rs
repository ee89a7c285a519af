//! Downlink transmit chain with known ground truth: scenarios, frame
//! synthesis, channel impairments and the planted-DCI manifest.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blindrnti::{encode_pdcch, level_allowed, pdsch_positions, DciCandidate, AGGREGATION_LEVELS};
use crate::cch::{embed_cces_with_c_init, pcfich_map, pdcch_c_init, Cfi, ControlLayout, BITS_PER_CCE};
use crate::dci::{
    dci_size, rbg_count, rbg_size, riv_encode, DciFormat, DciMessage, PrbSet, HOPPING, LOC_DIST, RA_HEADER,
    RB_ASSIGNMENT,
};
use crate::error::{Error, Result};
use crate::iqio::IqRecording;
use crate::numerology::{crs_pilots, CellConfig, ResourceGrid, SUBFRAMES_PER_FRAME};
use crate::ofdm::{ofdm_modulate, qpsk_modulate};
use crate::pbch::pbch_map;
use crate::sync::{pss_sequence, pss_symbol, sss_sequence, sync_positions, CellIdentity, HalfFrame};

fn all_subframes() -> Vec<u8> {
    (0..SUBFRAMES_PER_FRAME as u8).collect()
}

fn one() -> usize {
    1
}

fn default_cfi() -> u8 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScheduleEntry {
    pub rnti: u16,
    pub format: DciFormat,
    pub prbs: PrbSet,
    /// Extra DCI fields by name (MCS, HARQ process, ...).
    #[serde(default)]
    pub fields: BTreeMap<String, u32>,
    pub aggregation_level: usize,
    #[serde(default = "all_subframes")]
    pub subframes: Vec<u8>,
    /// First CCE; placed first-fit when absent.
    #[serde(default)]
    pub cce_offset: Option<usize>,
    /// Coded bits inverted after encoding, all inside the first CCE. Such
    /// entries model false detections and get no PDSCH filler.
    #[serde(default)]
    pub coded_bit_flips: usize,
    #[serde(default)]
    pub pdsch_power_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default)]
    pub entries: Vec<ScheduleEntry>,
    #[serde(default = "one")]
    pub frames_to_generate: usize,
    #[serde(default)]
    pub start_sfn: u16,
    #[serde(default = "default_cfi")]
    pub cfi: u8,
    /// Fill unallocated PDSCH resource elements with random QPSK.
    #[serde(default)]
    pub ocng: bool,
    /// Seed for NIL and PDSCH filler.
    #[serde(default)]
    pub seed: u64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec { entries: vec![], frames_to_generate: 1, start_sfn: 0, cfi: 2, ocng: false, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ImpairmentSpec {
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub cfo_hz: f64,
    #[serde(default)]
    pub timing_pad_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    pub cell: CellConfig,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub impairments: ImpairmentSpec,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Test-only corruption of the transmitter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TxHooks {
    /// XORed into every PDCCH scrambling seed.
    pub pdcch_c_init_xor: u32,
}

/// RA fields that make `format` address exactly `prbs`.
pub fn allocation_fields(format: DciFormat, prbs: &PrbSet, n_dl_rb: u16) -> Result<Vec<(&'static str, u32)>> {
    let bad = |why: &str| Error::InvalidFieldValue(format!("{format} cannot address {prbs}: {why}"));
    let (Some(&first), Some(last)) = (prbs.indices().first(), prbs.highest()) else {
        return Err(Error::EmptyAllocation);
    };
    if last >= n_dl_rb {
        return Err(bad("PRB beyond bandwidth"));
    }
    match format {
        DciFormat::F0 | DciFormat::F1A => {
            if prbs.len() != (last - first + 1) as usize {
                return Err(bad("not contiguous"));
            }
            let riv = riv_encode(first, prbs.len() as u16, n_dl_rb)?;
            let extra = if format == DciFormat::F0 { HOPPING } else { LOC_DIST };
            Ok(vec![(RB_ASSIGNMENT, riv), (extra, 0)])
        }
        _ => {
            let p = rbg_size(n_dl_rb);
            let n_rbg = rbg_count(n_dl_rb);
            let mut bitmap = 0u32;
            let mut covered = Vec::new();
            for j in 0..n_rbg {
                let group: Vec<u16> = (j * p..((j + 1) * p).min(n_dl_rb as usize)).map(|v| v as u16).collect();
                if group.iter().all(|k| prbs.contains(*k)) {
                    bitmap |= 1 << (n_rbg - 1 - j);
                    covered.extend(group);
                }
            }
            if PrbSet::new(covered) != *prbs {
                return Err(bad("not a union of resource block groups"));
            }
            Ok(vec![(RA_HEADER, 0), (RB_ASSIGNMENT, bitmap)])
        }
    }
}

pub fn build_message(entry: &ScheduleEntry, cfg: &CellConfig) -> Result<DciMessage> {
    let mut values = allocation_fields(entry.format, &entry.prbs, cfg.n_dl_rb())?;
    for (k, v) in &entry.fields {
        values.retain(|(name, _)| name != k);
        values.push((k.as_str(), *v));
    }
    DciMessage::from_fields(entry.format, &values, cfg.n_dl_rb(), cfg.cell_ref_ports())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub entry: usize,
    pub message: DciMessage,
    pub cce_offset: usize,
    pub level: usize,
}

/// Check every entry and assign CCEs. Returns placements per subframe.
pub fn plan_schedule(cfg: &CellConfig, schedule: &ScheduleSpec) -> Result<Vec<Vec<Placement>>> {
    let overflow = |m: String| Error::ScheduleOverflow(m);
    let cfi = Cfi::new(schedule.cfi)?;
    let n_cces = ControlLayout::new(cfg, cfi)?.num_cces();
    let mut plan: Vec<Vec<Placement>> = vec![Vec::new(); SUBFRAMES_PER_FRAME];
    let mut used = vec![vec![false; n_cces]; SUBFRAMES_PER_FRAME];
    for (i, e) in schedule.entries.iter().enumerate() {
        let size = dci_size(e.format, cfg.n_dl_rb(), cfg.cell_ref_ports())?;
        let level = e.aggregation_level;
        if !AGGREGATION_LEVELS.contains(&level) {
            return Err(overflow(format!("entry {i}: aggregation level {level}")));
        }
        if !level_allowed(size, level) {
            return Err(overflow(format!("entry {i}: {} bits do not fit {level} CCE(s)", size + 16)));
        }
        if e.coded_bit_flips > BITS_PER_CCE {
            return Err(overflow(format!("entry {i}: {} flips exceed one CCE", e.coded_bit_flips)));
        }
        let message = build_message(e, cfg)?;
        for &sf in &e.subframes {
            let sf = sf as usize;
            if sf >= SUBFRAMES_PER_FRAME {
                return Err(overflow(format!("entry {i}: subframe {sf}")));
            }
            let free = |o: usize| o + level <= n_cces && used[sf][o..o + level].iter().all(|u| !u);
            let offset = match e.cce_offset {
                Some(o) if o % level == 0 && free(o) => o,
                Some(o) => return Err(overflow(format!("entry {i}: CCE {o} unavailable in subframe {sf}"))),
                None => (0..n_cces)
                    .step_by(level)
                    .find(|o| free(*o))
                    .ok_or_else(|| overflow(format!("entry {i}: no free CCEs in subframe {sf}")))?,
            };
            used[sf][offset..offset + level].iter_mut().for_each(|u| *u = true);
            plan[sf].push(Placement { entry: i, message: message.clone(), cce_offset: offset, level });
        }
    }
    Ok(plan)
}

fn random_qpsk(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    let bits: Vec<u8> = (0..2 * n).map(|_| rng.random_range(0..2)).collect();
    qpsk_modulate(&bits).expect("even bit count")
}

fn flip_positions(k: usize) -> impl Iterator<Item = usize> {
    (0..k).map(|j| (3 + 29 * j) % BITS_PER_CCE)
}

fn generate_frame_planned(
    cfg: &CellConfig,
    schedule: &ScheduleSpec,
    plan: &[Vec<Placement>],
    sfn: u16,
    hooks: TxHooks,
) -> Result<Vec<ResourceGrid>> {
    let cfi = Cfi::new(schedule.cfi)?;
    let layout = ControlLayout::new(cfg, cfi)?;
    let id = CellIdentity::from_pci(cfg.pci())?;
    let l_pss = pss_symbol(cfg.cyclic_prefix());
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed ^ ((sfn as u64) << 32));
    let mut frame = Vec::with_capacity(SUBFRAMES_PER_FRAME);
    for (sf, placements) in plan.iter().enumerate().take(SUBFRAMES_PER_FRAME) {
        let mut ports = vec![ResourceGrid::new(cfg); cfg.cell_ref_ports()];
        for (p, grid) in ports.iter_mut().enumerate() {
            for (pos, v) in crs_pilots(cfg, p, sf)? {
                grid[pos] = v;
            }
        }
        if sf == 0 || sf == 5 {
            let half = if sf == 0 { HalfFrame::First } else { HalfFrame::Second };
            for (p, v) in sync_positions(cfg, l_pss).into_iter().zip(pss_sequence(id.nid2)?) {
                ports[0][p] = v;
            }
            for (p, v) in sync_positions(cfg, l_pss - 1).into_iter().zip(sss_sequence(id, half)) {
                ports[0][p] = Complex64::new(v, 0.0);
            }
        }
        if sf == 0 {
            pbch_map(&mut ports, cfg, sfn)?;
        }
        pcfich_map(&mut ports, cfi, cfg, sf)?;

        let mut bits: Vec<u8> = (0..BITS_PER_CCE * layout.num_cces()).map(|_| rng.random_range(0..2)).collect();
        for pl in placements {
            let e = &schedule.entries[pl.entry];
            let mut coded = encode_pdcch(&pl.message.payload_bits, e.rnti, pl.level)?;
            for i in flip_positions(e.coded_bit_flips) {
                coded[i] ^= 1;
            }
            bits[BITS_PER_CCE * pl.cce_offset..BITS_PER_CCE * (pl.cce_offset + pl.level)].copy_from_slice(&coded);
        }
        embed_cces_with_c_init(&mut ports, &bits, &layout, pdcch_c_init(cfg.pci(), sf) ^ hooks.pdcch_c_init_xor)?;

        let mut allocated = PrbSet::default();
        for pl in placements {
            let e = &schedule.entries[pl.entry];
            if pl.message.link_direction != crate::dci::LinkDirection::Downlink || e.coded_bit_flips > 0 {
                continue;
            }
            let amp = 10f64.powf(e.pdsch_power_db / 20.0);
            let positions = pdsch_positions(cfg, cfi.value(), sf, &pl.message.prb_set);
            for (p, s) in positions.iter().zip(random_qpsk(&mut rng, positions.len())) {
                ports[0][*p] = s * amp;
            }
            allocated = PrbSet::new(allocated.indices().iter().chain(pl.message.prb_set.indices()).copied());
        }
        if schedule.ocng {
            let rest = PrbSet::new((0..cfg.n_dl_rb()).filter(|k| !allocated.contains(*k)));
            let positions = pdsch_positions(cfg, cfi.value(), sf, &rest);
            for (p, s) in positions.iter().zip(random_qpsk(&mut rng, positions.len())) {
                ports[0][*p] = s;
            }
        }

        let mut combined = ports[0].clone();
        for g in &ports[1..] {
            for (a, b) in combined.cells_mut().iter_mut().zip(g.cells()) {
                *a += b;
            }
        }
        frame.push(combined);
    }
    Ok(frame)
}

/// Ten subframe grids (all antenna ports summed) for frame `sfn`.
pub fn generate_frame(cfg: &CellConfig, schedule: &ScheduleSpec, sfn: u16) -> Result<Vec<ResourceGrid>> {
    let plan = plan_schedule(cfg, schedule)?;
    generate_frame_planned(cfg, schedule, &plan, sfn, TxHooks::default())
}

/// AWGN at `snr_db` relative to the mean signal power, a frequency shift and
/// a noise-only lead-in.
pub fn apply_impairments(rec: &IqRecording, imp: &ImpairmentSpec) -> IqRecording {
    let signal_power = rec.mean_power();
    let mut rng = ChaCha8Rng::seed_from_u64(imp.seed);
    let sigma = imp
        .snr_db
        .map(|snr| (signal_power / 10f64.powf(snr / 10.0) / 2.0).sqrt())
        .unwrap_or(0.0);
    let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let fs = rec.sample_rate_hz;
    let total = imp.timing_pad_samples + rec.len();
    let mut samples = Vec::with_capacity(total);
    for n in 0..total {
        let clean = if n < imp.timing_pad_samples {
            Complex64::new(0.0, 0.0)
        } else {
            let s = rec.samples[n - imp.timing_pad_samples];
            Complex64::new(s.re as f64, s.im as f64)
        };
        let shifted = if imp.cfo_hz == 0.0 {
            clean
        } else {
            clean * Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * imp.cfo_hz * n as f64 / fs)
        };
        let noisy = if sigma > 0.0 {
            shifted + Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng))
        } else {
            shifted
        };
        samples.push(Complex32::new(noisy.re as f32, noisy.im as f32));
    }
    IqRecording { samples, sample_rate_hz: fs, center_freq_hz: rec.center_freq_hz }
}

/// Planted DCIs of frame `sfn` as zero-error candidates (or with the
/// configured coded-bit flips).
pub fn frame_manifest(schedule: &ScheduleSpec, plan: &[Vec<Placement>], sfn: u16) -> Vec<DciCandidate> {
    let mut out = Vec::new();
    for (sf, placements) in plan.iter().enumerate() {
        for pl in placements {
            let e = &schedule.entries[pl.entry];
            out.push(DciCandidate {
                sfn,
                subframe: sf as u8,
                rnti: e.rnti,
                num_errors: e.coded_bit_flips,
                format: pl.message.format,
                link_direction: pl.message.link_direction,
                prb_set: pl.message.prb_set.clone(),
                power_db: Some(e.pdsch_power_db),
                aggregation_level: pl.level as u8,
                cce_offset: pl.cce_offset,
                payload: pl.message.payload_bits.clone(),
                multiplicity: 1,
            });
        }
    }
    out.sort_by_key(|c| (c.subframe, c.cce_offset));
    out
}

pub fn generate_recording_with_hooks(
    cfg: &CellConfig,
    schedule: &ScheduleSpec,
    impairments: &ImpairmentSpec,
    hooks: TxHooks,
) -> Result<(IqRecording, Vec<DciCandidate>)> {
    let plan = plan_schedule(cfg, schedule)?;
    let sfns: Vec<u16> = (0..schedule.frames_to_generate).map(|f| ((schedule.start_sfn as usize + f) % 1024) as u16).collect();
    let frames: Vec<Vec<ResourceGrid>> = sfns
        .par_iter()
        .map(|&sfn| generate_frame_planned(cfg, schedule, &plan, sfn, hooks))
        .collect::<Result<_>>()?;
    let grids: Vec<ResourceGrid> = frames.into_iter().flatten().collect();
    let clean = ofdm_modulate(&grids, cfg)?;
    let manifest = sfns.iter().flat_map(|&sfn| frame_manifest(schedule, &plan, sfn)).collect();
    Ok((apply_impairments(&clean, impairments), manifest))
}

pub fn generate_recording(
    cfg: &CellConfig,
    schedule: &ScheduleSpec,
    impairments: &ImpairmentSpec,
) -> Result<(IqRecording, Vec<DciCandidate>)> {
    generate_recording_with_hooks(cfg, schedule, impairments, TxHooks::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerology::PhichNg;

    fn cfg() -> CellConfig {
        CellConfig::new(50, 27, 2).unwrap()
    }

    fn entry(rnti: u16, format: DciFormat, prbs: &str, level: usize) -> ScheduleEntry {
        ScheduleEntry {
            rnti,
            format,
            prbs: prbs.parse().unwrap(),
            fields: BTreeMap::new(),
            aggregation_level: level,
            subframes: all_subframes(),
            cce_offset: None,
            coded_bit_flips: 0,
            pdsch_power_db: 0.0,
        }
    }

    #[test]
    fn allocation_round_trip() {
        for (f, s) in [
            (DciFormat::F1, "[0...49]"),
            (DciFormat::F1, "[3...8 48 49]"),
            (DciFormat::F2, "[0...2]"),
            (DciFormat::F1A, "[8...15]"),
            (DciFormat::F0, "[2...41]"),
        ] {
            let e = entry(1, f, s, 4);
            assert_eq!(build_message(&e, &cfg()).unwrap().prb_set.to_string(), s);
        }
        assert!(allocation_fields(DciFormat::F1A, &"[1 3]".parse().unwrap(), 50).is_err());
        assert!(allocation_fields(DciFormat::F1, &"[1 3]".parse().unwrap(), 50).is_err());
    }

    #[test]
    fn planning() {
        let mut s = ScheduleSpec { entries: vec![entry(0x21, DciFormat::F1, "[0...49]", 4)], ..Default::default() };
        let plan = plan_schedule(&cfg(), &s).unwrap();
        assert!(plan.iter().all(|p| p.len() == 1 && p[0].cce_offset == 0));
        s.entries.push(entry(0x22, DciFormat::F1A, "[0...3]", 8));
        let plan = plan_schedule(&cfg(), &s).unwrap();
        assert_eq!(plan[3][1].cce_offset, 8);
        for _ in 0..4 {
            s.entries.push(entry(0x30, DciFormat::F1, "[0...2]", 8));
        }
        assert!(matches!(plan_schedule(&cfg(), &s), Err(Error::ScheduleOverflow(_))));
        let f2_l1 = ScheduleSpec { entries: vec![entry(1, DciFormat::F2, "[0...2]", 1)], ..Default::default() };
        assert!(matches!(plan_schedule(&cfg(), &f2_l1), Err(Error::ScheduleOverflow(_))));
    }

    #[test]
    fn scenario_json() {
        let text = r#"{"cell": {"NDLRB": 50, "NCellID": 27, "CellRefP": 2, "Ng": "One"},
            "schedule": {"entries": [{"rnti": 33, "format": "Format1", "prbs": "[0...49]", "aggregationLevel": 4}]},
            "impairments": {"snrDb": 20.0, "seed": 7}}"#;
        let sc = Scenario::from_json(text).unwrap();
        assert_eq!(sc.cell.phich_ng(), PhichNg::One);
        assert_eq!(sc.schedule.entries[0].subframes.len(), 10);
        let round: Scenario = serde_json::from_str(&serde_json::to_string(&sc).unwrap()).unwrap();
        assert_eq!(round, sc);
        let bad = text.replace("\"NDLRB\": 50", "\"NDLRB\": 40");
        let msg = Scenario::from_json(&bad).unwrap_err().to_string();
        assert!(msg.contains("NDLRB"), "{msg}");
    }

    #[test]
    fn impairments() {
        let rec = ofdm_modulate(&generate_frame(&cfg(), &ScheduleSpec::default(), 0).unwrap(), &cfg()).unwrap();
        assert_eq!(apply_impairments(&rec, &ImpairmentSpec::default()), rec);
        let imp = ImpairmentSpec { snr_db: Some(10.0), seed: 3, ..Default::default() };
        let a = apply_impairments(&rec, &imp);
        assert_eq!(a, apply_impairments(&rec, &imp));
        let noise: f64 = a.samples.iter().zip(&rec.samples).map(|(x, y)| (x - y).norm_sqr() as f64).sum::<f64>()
            / rec.len() as f64;
        let measured = 10.0 * (rec.mean_power() / noise).log10();
        assert!((measured - 10.0).abs() < 0.2, "{measured}");
        let padded = apply_impairments(&rec, &ImpairmentSpec { timing_pad_samples: 100, cfo_hz: 500.0, ..Default::default() });
        assert_eq!(padded.len(), rec.len() + 100);
        assert!(padded.samples[..100].iter().all(|s| s.norm() == 0.0));
    }

    #[test]
    fn manifest_matches_schedule() {
        let s = ScheduleSpec {
            entries: vec![ScheduleEntry { subframes: vec![1, 4], ..entry(0x21, DciFormat::F1, "[0...49]", 4) }],
            ..Default::default()
        };
        let (rec, manifest) = generate_recording(&cfg(), &s, &ImpairmentSpec::default()).unwrap();
        assert_eq!(rec.len(), 153_600);
        assert_eq!(manifest.len(), 2);
        assert!(manifest.iter().all(|c| c.rnti == 0x21 && c.num_errors == 0));
        let (again, _) = generate_recording(&cfg(), &s, &ImpairmentSpec::default()).unwrap();
        assert_eq!(rec, again);
    }
}
