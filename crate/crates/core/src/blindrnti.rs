//! Blind PDCCH search with RNTI recovery from the CRC mask, RNTI classes,
//! false-positive filtering and allocation power.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::cch::{CceSpace, BITS_PER_CCE};
use crate::dci::{parse_dci, size_groups, DciFormat, LinkDirection, PrbSet};
use crate::error::{Error, Result};
use crate::numerology::{crs_mask, CellConfig, RePosition, ResourceGrid, SUBCARRIERS_PER_RB};
use crate::seqfec::{crc16_value, decode_block, encode_block, from_bits, hard_decision, to_bits};

pub const AGGREGATION_LEVELS: [usize; 4] = [1, 2, 4, 8];
/// Candidates worse than this are never reported, whatever the filter.
pub const SEARCH_MAX_ERRORS: usize = 8;
/// Highest code rate `(K + 16) / (72 L)` that is searched or transmitted.
pub const MAX_CODE_RATE: f64 = 0.75;
pub const DEFAULT_MAX_ERRORS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RntiClass {
    CRnti,
    SiRnti,
    PRnti,
    RaRnti,
    Reserved,
}

pub fn classify_rnti(rnti: u16) -> RntiClass {
    match rnti {
        0x0000 => RntiClass::Reserved,
        0x0001..=0x003C => RntiClass::RaRnti,
        0x003D..=0xFFF3 => RntiClass::CRnti,
        0xFFF4..=0xFFFD => RntiClass::Reserved,
        0xFFFE => RntiClass::PRnti,
        0xFFFF => RntiClass::SiRnti,
    }
}

/// Whether a payload of `k` bits may be sent at aggregation level `level`.
pub fn level_allowed(k: usize, level: usize) -> bool {
    (k + 16) as f64 / (BITS_PER_CCE * level) as f64 <= MAX_CODE_RATE
}

/// Payload, CRC masked with `rnti`, encoded onto `level` CCEs.
pub fn encode_pdcch(payload: &[u8], rnti: u16, level: usize) -> Result<Vec<u8>> {
    let mut bits = payload.to_vec();
    bits.extend(to_bits((crc16_value(payload) ^ rnti) as u64, 16));
    encode_block(&bits, BITS_PER_CCE * level)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RntiRecovery {
    pub payload: Vec<u8>,
    pub rnti: u16,
    pub num_errors: usize,
}

/// Unmask the RNTI from decoded bits and count coded-bit mismatches between
/// the re-encoded message and the received hard decisions.
pub fn recover_rnti(decoded: &[u8], received: &[f64]) -> Result<RntiRecovery> {
    if decoded.len() <= 16 {
        return Err(Error::InputTooShort(decoded.len()));
    }
    let k = decoded.len() - 16;
    let payload = decoded[..k].to_vec();
    let rnti = crc16_value(&payload) ^ from_bits(&decoded[k..]) as u16;
    let mut bits = payload.clone();
    bits.extend(to_bits((crc16_value(&payload) ^ rnti) as u64, 16));
    let reencoded = encode_block(&bits, received.len())?;
    let num_errors = reencoded
        .iter()
        .zip(received)
        .filter(|(b, l)| **b != hard_decision(**l))
        .count();
    Ok(RntiRecovery { payload, rnti, num_errors })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DciCandidate {
    pub sfn: u16,
    pub subframe: u8,
    pub rnti: u16,
    pub num_errors: usize,
    pub format: DciFormat,
    pub link_direction: LinkDirection,
    pub prb_set: PrbSet,
    pub power_db: Option<f64>,
    pub aggregation_level: u8,
    pub cce_offset: usize,
    pub payload: Vec<u8>,
    /// Search hits merged into this one by deduplication.
    pub multiplicity: usize,
}

/// Try every offset of every level for every requested payload size.
pub fn search_candidates(
    space: &CceSpace,
    cfg: &CellConfig,
    formats: &[DciFormat],
    sfn: u16,
    subframe: u8,
) -> Vec<DciCandidate> {
    let mut out = Vec::new();
    let ports = cfg.cell_ref_ports();
    for (size, group) in size_groups(formats, cfg.n_dl_rb(), ports) {
        for level in AGGREGATION_LEVELS {
            if !level_allowed(size, level) {
                continue;
            }
            for offset in (0..space.num_cces).step_by(level) {
                if offset + level > space.num_cces {
                    break;
                }
                let soft = space.candidate(offset, level);
                let Ok(decoded) = decode_block(soft, size + 16) else { continue };
                let Ok(rec) = recover_rnti(&decoded, soft) else { continue };
                if rec.num_errors > SEARCH_MAX_ERRORS {
                    continue;
                }
                for format in &group {
                    let Ok(msg) = parse_dci(&rec.payload, *format, cfg.n_dl_rb(), ports) else { continue };
                    if !formats.contains(&msg.format) {
                        continue;
                    }
                    out.push(DciCandidate {
                        sfn,
                        subframe,
                        rnti: rec.rnti,
                        num_errors: rec.num_errors,
                        format: msg.format,
                        link_direction: msg.link_direction,
                        prb_set: msg.prb_set,
                        power_db: None,
                        aggregation_level: level as u8,
                        cce_offset: offset,
                        payload: rec.payload.clone(),
                        multiplicity: 1,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterOptions {
    pub max_errors: usize,
    pub dedup: bool,
}

impl Default for FilterOptions {
    fn default() -> Self {
        FilterOptions { max_errors: DEFAULT_MAX_ERRORS, dedup: true }
    }
}

/// Threshold, deduplicate, drop errored candidates overlapping clean ones of
/// the same direction, then order by subframe and CCE offset.
pub fn filter_candidates(candidates: &[DciCandidate], opts: FilterOptions) -> Vec<DciCandidate> {
    let mut kept: Vec<DciCandidate> =
        candidates.iter().filter(|c| c.num_errors <= opts.max_errors).cloned().collect();

    if opts.dedup {
        let mut index: HashMap<(u16, u8, u16, Vec<u8>), usize> = HashMap::new();
        let mut merged: Vec<DciCandidate> = Vec::new();
        for c in kept {
            let key = (c.sfn, c.subframe, c.rnti, c.payload.clone());
            match index.get(&key) {
                Some(&i) => {
                    let best = &mut merged[i];
                    let total = best.multiplicity + c.multiplicity;
                    let better = (c.num_errors, std::cmp::Reverse(c.aggregation_level))
                        < (best.num_errors, std::cmp::Reverse(best.aggregation_level));
                    if better {
                        *best = c;
                    }
                    best.multiplicity = total;
                }
                None => {
                    index.insert(key, merged.len());
                    merged.push(c);
                }
            }
        }
        kept = merged;
    }

    let clean: Vec<(u16, u8, LinkDirection, PrbSet)> = kept
        .iter()
        .filter(|c| c.num_errors == 0)
        .map(|c| (c.sfn, c.subframe, c.link_direction, c.prb_set.clone()))
        .collect();
    kept.retain(|c| {
        c.num_errors == 0
            || !clean.iter().any(|(sfn, sf, dir, prbs)| {
                *sfn == c.sfn && *sf == c.subframe && *dir == c.link_direction && prbs.intersects(&c.prb_set)
            })
    });
    kept.sort_by_key(|c| (c.sfn, c.subframe, c.cce_offset, c.aggregation_level, c.rnti));
    kept
}

/// PDSCH resource elements of the given PRBs: data symbols outside the
/// control region, minus CRS, synchronization signals and PBCH.
pub fn pdsch_positions(cfg: &CellConfig, cfi: u8, subframe: usize, prbs: &PrbSet) -> Vec<RePosition> {
    let crs = crs_mask(cfg);
    let per_slot = cfg.cyclic_prefix().symbols_per_slot();
    let centre = cfg.center_six_rb_start()..cfg.center_six_rb_start() + 72;
    let mut out = Vec::new();
    for l in cfi as usize..cfg.symbols_per_subframe() {
        let sync = (subframe == 0 || subframe == 5) && (l == per_slot - 2 || l == per_slot - 1);
        let pbch = subframe == 0 && (per_slot..per_slot + 4).contains(&l);
        for &prb in prbs.indices() {
            for k in prb as usize * SUBCARRIERS_PER_RB..(prb as usize + 1) * SUBCARRIERS_PER_RB {
                let p = RePosition::new(k, l);
                if crs.get(p) || ((sync || pbch) && centre.contains(&k)) {
                    continue;
                }
                out.push(p);
            }
        }
    }
    out
}

/// Mean RE power over the allocation, in dB.
pub fn measure_power(grid: &ResourceGrid, prbs: &PrbSet, cfg: &CellConfig, cfi: u8, subframe: usize) -> Result<f64> {
    if prbs.is_empty() {
        return Err(Error::EmptyAllocation);
    }
    let positions = pdsch_positions(cfg, cfi, subframe, prbs);
    if positions.is_empty() {
        return Err(Error::EmptyAllocation);
    }
    let mean = positions.iter().map(|p| grid[*p].norm_sqr()).sum::<f64>() / positions.len() as f64;
    Ok(10.0 * mean.log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cch::{embed_cces, extract_cces, Cfi, ControlLayout};
    use crate::dci::{DciMessage, RB_ASSIGNMENT};
    use crate::numerology::{PhichDuration, PhichNg};
    use crate::ofdm::ChannelEstimate;
    use crate::seqfec::bit_to_llr;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> CellConfig {
        CellConfig::new(50, 27, 2).unwrap().with_phich(PhichDuration::Normal, PhichNg::One)
    }

    fn soft(bits: &[u8]) -> Vec<f64> {
        bits.iter().map(|b| bit_to_llr(*b, 1.0)).collect()
    }

    fn full_f1() -> DciMessage {
        DciMessage::from_fields(DciFormat::F1, &[(RB_ASSIGNMENT, (1 << 17) - 1)], 50, 2).unwrap()
    }

    #[test]
    fn classes() {
        assert_eq!(classify_rnti(0xFFFF), RntiClass::SiRnti);
        assert_eq!(classify_rnti(0x003D), RntiClass::CRnti);
        assert_eq!(classify_rnti(0x003C), RntiClass::RaRnti);
        assert_eq!(classify_rnti(0x0000), RntiClass::Reserved);
        assert_eq!(classify_rnti(0xFFFE), RntiClass::PRnti);
        let counts = (0..=u16::MAX).fold(HashMap::new(), |mut m, r| {
            *m.entry(classify_rnti(r)).or_insert(0usize) += 1;
            m
        });
        assert_eq!(counts.values().sum::<usize>(), 65536);
        assert_eq!(counts[&RntiClass::CRnti], 0xFFF3 - 0x003D + 1);
    }

    #[test]
    fn recover_reference_rntis() {
        for rnti in [0x003Du16, 0x0021] {
            let payload = full_f1().payload_bits;
            let coded = encode_pdcch(&payload, rnti, 4).unwrap();
            let decoded = decode_block(&soft(&coded), payload.len() + 16).unwrap();
            let r = recover_rnti(&decoded, &soft(&coded)).unwrap();
            assert_eq!((r.rnti, r.num_errors), (rnti, 0));
            assert_eq!(r.payload, payload);
        }
    }

    #[test]
    fn planted_flips_counted() {
        let payload = full_f1().payload_bits;
        let coded = encode_pdcch(&payload, 0x1234, 4).unwrap();
        for k in [1usize, 2] {
            let mut rx = soft(&coded);
            for i in 0..k {
                rx[37 + 101 * i] = -rx[37 + 101 * i];
            }
            let decoded = decode_block(&rx, payload.len() + 16).unwrap();
            let r = recover_rnti(&decoded, &rx).unwrap();
            assert_eq!((r.rnti, r.num_errors), (0x1234, k));
        }
    }

    fn plant(msgs: &[(&DciMessage, u16, usize, usize)], seed: u64) -> CceSpace {
        let cfg = cfg();
        let layout = ControlLayout::new(&cfg, Cfi::new(2).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bits: Vec<u8> = (0..72 * layout.num_cces()).map(|_| rng.random_range(0..2)).collect();
        for (msg, rnti, level, offset) in msgs {
            let coded = encode_pdcch(&msg.payload_bits, *rnti, *level).unwrap();
            bits[72 * offset..72 * (offset + level)].copy_from_slice(&coded);
        }
        let mut tx = vec![ResourceGrid::new(&cfg); 2];
        embed_cces(&mut tx, &bits, &layout, 1).unwrap();
        let mut rx = tx[0].clone();
        for (a, b) in rx.cells_mut().iter_mut().zip(tx[1].cells()) {
            *a += b;
        }
        extract_cces(&rx, &ChannelEstimate::identity(&cfg, 2), &layout, 1)
    }

    #[test]
    fn single_plant_survives_dedup() {
        let msg = full_f1();
        let space = plant(&[(&msg, 0x0021, 4, 8)], 1);
        let found = search_candidates(&space, &cfg(), &DciFormat::ALL, 0, 1);
        let kept = filter_candidates(&found, FilterOptions::default());
        let ours: Vec<_> = kept.iter().filter(|c| c.rnti == 0x0021).collect();
        assert_eq!(ours.len(), 1);
        assert_eq!(ours[0].num_errors, 0);
        assert_eq!(ours[0].aggregation_level, 4);
        assert_eq!(ours[0].cce_offset, 8);
        assert_eq!(ours[0].prb_set.to_string(), "[0...49]");
        assert!(ours[0].multiplicity >= 1);
    }

    #[test]
    fn two_plants_distinct_rntis() {
        let a = full_f1();
        let b = DciMessage::from_fields(DciFormat::F1A, &[(RB_ASSIGNMENT, 358)], 50, 2).unwrap();
        let space = plant(&[(&a, 0x4001, 2, 0), (&b, 0xFFFF, 4, 4)], 2);
        let kept = filter_candidates(
            &search_candidates(&space, &cfg(), &DciFormat::ALL, 0, 1),
            FilterOptions::default(),
        );
        assert!(kept.iter().any(|c| c.rnti == 0x4001 && c.format == DciFormat::F1));
        assert!(kept.iter().any(|c| c.rnti == 0xFFFF && c.format == DciFormat::F1A && c.prb_set == PrbSet::range(8, 8)));
    }

    #[test]
    fn empty_region_no_false_alarms() {
        let mut alarms = 0;
        for seed in 0..50 {
            let space = plant(&[], 100 + seed);
            let found = search_candidates(&space, &cfg(), &DciFormat::ALL, 0, 1);
            alarms += found.iter().filter(|c| c.num_errors <= 2).count();
        }
        assert_eq!(alarms, 0);
    }

    fn cand(rnti: u16, errors: usize, prbs: PrbSet, offset: usize) -> DciCandidate {
        DciCandidate {
            sfn: 406,
            subframe: 0,
            rnti,
            num_errors: errors,
            format: DciFormat::F1,
            link_direction: LinkDirection::Downlink,
            prb_set: prbs,
            power_db: None,
            aggregation_level: 4,
            cce_offset: offset,
            payload: vec![rnti as u8],
            multiplicity: 1,
        }
    }

    #[test]
    fn filter_rules() {
        assert!(filter_candidates(&[cand(1, 3, PrbSet::range(0, 5), 0)], FilterOptions::default()).is_empty());
        let both = [cand(0x100, 0, PrbSet::range(0, 10), 0), cand(0x200, 0, PrbSet::range(5, 10), 4)];
        assert_eq!(filter_candidates(&both, FilterOptions::default()).len(), 2);
        let overlapping = [
            cand(0x003D, 0, PrbSet::range(0, 50), 0),
            cand(0x962C, 2, PrbSet::new([0, 10, 11, 18, 19, 27, 29]), 8),
            cand(0x00DA, 2, PrbSet::range(20, 4), 12),
            cand(0xFFFF, 0, PrbSet::range(8, 8), 16),
        ];
        let kept: Vec<u16> = filter_candidates(&overlapping, FilterOptions::default()).iter().map(|c| c.rnti).collect();
        assert_eq!(kept, vec![0x003D, 0xFFFF]);
        let mut uplink = cand(0x5000, 1, PrbSet::range(0, 3), 20);
        uplink.link_direction = LinkDirection::Uplink;
        uplink.format = DciFormat::F0;
        let kept = filter_candidates(&[overlapping[0].clone(), uplink], FilterOptions::default());
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn dedup_prefers_fewer_errors_then_higher_level() {
        let mut a = cand(0x777, 1, PrbSet::range(0, 5), 0);
        a.aggregation_level = 8;
        let mut b = cand(0x777, 0, PrbSet::range(0, 5), 4);
        b.aggregation_level = 2;
        let mut c = cand(0x777, 0, PrbSet::range(0, 5), 0);
        c.aggregation_level = 4;
        let kept = filter_candidates(&[a.clone(), b, c], FilterOptions::default());
        assert_eq!(kept.len(), 1);
        assert_eq!((kept[0].aggregation_level, kept[0].multiplicity), (4, 3));
        let raw = filter_candidates(&[a.clone(), a], FilterOptions { max_errors: 2, dedup: false });
        assert_eq!(raw.len(), 2);
    }

    #[test]
    fn power_measurement() {
        let cfg = cfg();
        let mut g = ResourceGrid::new(&cfg);
        let all = PrbSet::range(0, 50);
        for p in pdsch_positions(&cfg, 2, 3, &all) {
            g[p] = Complex64::from_polar(1.0, 0.3);
        }
        assert!(measure_power(&g, &all, &cfg, 2, 3).unwrap().abs() < 0.01);
        g.cells_mut().iter_mut().for_each(|c| *c *= 10.0);
        assert!((measure_power(&g, &all, &cfg, 2, 3).unwrap() - 20.0).abs() < 0.1);
        assert!(matches!(measure_power(&g, &PrbSet::default(), &cfg, 2, 3), Err(Error::EmptyAllocation)));
    }

    fn arb_cands() -> impl Strategy<Value = Vec<DciCandidate>> {
        prop::collection::vec((0u16..6, 0usize..4, 0u16..45, 1u16..6, 0usize..20, any::<bool>()), 0..12).prop_map(|v| {
            v.into_iter()
                .map(|(r, e, s, l, off, ul)| {
                    let mut c = cand(r, e, PrbSet::range(s, l), off);
                    if ul {
                        c.link_direction = LinkDirection::Uplink;
                    }
                    c
                })
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]
        #[test]
        fn unmask_exact(fmt in prop::sample::select(DciFormat::ALL.to_vec()), rnti in any::<u16>(), seed in any::<u64>()) {
            let k = crate::dci::dci_size(fmt, 50, 2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let payload: Vec<u8> = (0..k).map(|_| rng.random_range(0..2)).collect();
            let mut decoded = payload.clone();
            decoded.extend(to_bits((crc16_value(&payload) ^ rnti) as u64, 16));
            let level = *AGGREGATION_LEVELS.iter().find(|l| level_allowed(k, **l)).unwrap();
            let rx = soft(&encode_pdcch(&payload, rnti, level).unwrap());
            let r = recover_rnti(&decoded, &rx).unwrap();
            prop_assert_eq!((r.rnti, r.num_errors), (rnti, 0));
            prop_assert_eq!(r.payload, payload);
        }
    }

    proptest! {
        #[test]
        fn filter_idempotent(cands in arb_cands()) {
            let once = filter_candidates(&cands, FilterOptions::default());
            prop_assert_eq!(filter_candidates(&once, FilterOptions::default()), once);
        }

        #[test]
        fn corruption_never_lowers_errors(seed in any::<u64>(), flips in 0usize..4) {
            let payload = full_f1().payload_bits;
            let coded = encode_pdcch(&payload, 0x4242, 8).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rx = soft(&coded);
            let mut last = 0;
            for _ in 0..flips {
                let i = rng.random_range(0..rx.len());
                rx[i] = -rx[i].abs() * (1.0 - 2.0 * coded[i] as f64).signum();
                let decoded = decode_block(&rx, payload.len() + 16).unwrap();
                let r = recover_rnti(&decoded, &rx).unwrap();
                if r.payload == payload && r.rnti == 0x4242 {
                    prop_assert!(r.num_errors >= last);
                    last = r.num_errors;
                }
            }
        }
    }
}
