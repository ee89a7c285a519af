//! Frame information load, UE census, multi-frame summary and report rows.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::blindrnti::{classify_rnti, DciCandidate, RntiClass};
use crate::dci::{LinkDirection, PrbSet};
use crate::error::{Error, Result};
use crate::numerology::SUBFRAMES_PER_FRAME;

/// Anything that claims resource blocks for an RNTI in one subframe.
pub trait Grant {
    fn subframe(&self) -> u8;
    fn rnti(&self) -> u16;
    fn link_direction(&self) -> LinkDirection;
    fn prb_set(&self) -> &PrbSet;
}

impl Grant for DciCandidate {
    fn subframe(&self) -> u8 {
        self.subframe
    }
    fn rnti(&self) -> u16 {
        self.rnti
    }
    fn link_direction(&self) -> LinkDirection {
        self.link_direction
    }
    fn prb_set(&self) -> &PrbSet {
        &self.prb_set
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadPolicy {
    pub include_system: bool,
    pub include_uplink: bool,
    /// Count each PRB once per subframe. When off, sizes are summed per
    /// candidate and capped at the frame total.
    pub union: bool,
}

impl Default for LoadPolicy {
    fn default() -> Self {
        LoadPolicy { include_system: true, include_uplink: false, union: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FrameLoad {
    pub sfn: u16,
    pub n_assigned: usize,
    pub n_total: usize,
    pub i_frame: f64,
    pub unique_ues: usize,
}

impl FrameLoad {
    pub fn from_counts(sfn: u16, n_assigned: usize, n_total: usize, unique_ues: usize) -> Self {
        let i_frame = if n_total == 0 { 0.0 } else { n_assigned as f64 / n_total as f64 };
        FrameLoad { sfn, n_assigned, n_total, i_frame, unique_ues }
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.i_frame
    }
}

pub fn unique_ues<G: Grant>(grants: &[G]) -> usize {
    grants
        .iter()
        .map(Grant::rnti)
        .filter(|r| classify_rnti(*r) == RntiClass::CRnti)
        .collect::<HashSet<_>>()
        .len()
}

pub fn frame_load<G: Grant>(sfn: u16, grants: &[G], n_dl_rb: u16, policy: LoadPolicy) -> FrameLoad {
    let n_total = n_dl_rb as usize * SUBFRAMES_PER_FRAME;
    let counted = grants.iter().filter(|g| {
        (policy.include_uplink || g.link_direction() == LinkDirection::Downlink)
            && (policy.include_system || classify_rnti(g.rnti()) == RntiClass::CRnti)
    });
    let n_assigned = if policy.union {
        let mut used: BTreeMap<u8, BTreeSet<u16>> = BTreeMap::new();
        for g in counted {
            used.entry(g.subframe()).or_default().extend(g.prb_set().indices().iter().copied());
        }
        used.values().map(BTreeSet::len).sum()
    } else {
        let sum: usize = counted.map(|g| g.prb_set().len()).sum();
        if sum > n_total {
            tracing::warn!(sfn, sum, n_total, "overlapping allocations exceed frame total; capping");
        }
        sum.min(n_total)
    };
    FrameLoad::from_counts(sfn, n_assigned, n_total, unique_ues(grants))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LoadSummary {
    pub mean_load: f64,
    pub min_load: f64,
    pub max_load: f64,
    pub frames_analyzed: usize,
    /// Number of frames seen with each unique-UE count.
    pub ue_histogram: BTreeMap<usize, usize>,
}

pub fn summarize(frames: &[FrameLoad]) -> Result<LoadSummary> {
    if frames.is_empty() {
        return Err(Error::EmptyInput);
    }
    let loads = frames.iter().map(|f| f.i_frame);
    let mut ue_histogram = BTreeMap::new();
    for f in frames {
        *ue_histogram.entry(f.unique_ues).or_insert(0) += 1;
    }
    Ok(LoadSummary {
        mean_load: loads.clone().sum::<f64>() / frames.len() as f64,
        min_load: loads.clone().fold(f64::INFINITY, f64::min),
        max_load: loads.fold(f64::NEG_INFINITY, f64::max),
        frames_analyzed: frames.len(),
        ue_histogram,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(rename = "SFN")]
    pub sfn_label: String,
    #[serde(rename = "RNTI")]
    pub rnti_hex: String,
    #[serde(rename = "NumErrors")]
    pub num_errors: usize,
    #[serde(rename = "DCIFormat")]
    pub dci_format: String,
    #[serde(rename = "LinkDirection")]
    pub link_direction: String,
    #[serde(rename = "PRBSet")]
    pub prb_set: String,
    #[serde(rename = "Power")]
    pub power_db: Option<f64>,
}

pub const REPORT_COLUMNS: [&str; 7] = ["SFN", "RNTI", "NumErrors", "DCIFormat", "LinkDirection", "PRBSet", "Power"];

pub fn sfn_label(sfn: u16, subframe: u8) -> String {
    if subframe == 0 {
        sfn.to_string()
    } else {
        format!("{sfn}.{subframe}")
    }
}

pub fn rnti_hex(rnti: u16) -> String {
    format!("{rnti:04X}")
}

impl ReportRow {
    pub fn from_candidate(c: &DciCandidate) -> Self {
        ReportRow {
            sfn_label: sfn_label(c.sfn, c.subframe),
            rnti_hex: rnti_hex(c.rnti),
            num_errors: c.num_errors,
            dci_format: c.format.label().to_string(),
            link_direction: c.link_direction.to_string(),
            prb_set: c.prb_set.to_string(),
            // two decimals keep reports stable across platforms
            power_db: c.power_db.map(|p| (p * 100.0).round() / 100.0),
        }
    }

    /// Inverse of the "frame.subframe" label.
    pub fn sfn_subframe(&self) -> Result<(u16, u8)> {
        let bad = || Error::InvalidFieldValue(format!("SFN label {:?}", self.sfn_label));
        match self.sfn_label.split_once('.') {
            Some((f, s)) => Ok((f.parse().map_err(|_| bad())?, s.parse().map_err(|_| bad())?)),
            None => Ok((self.sfn_label.parse().map_err(|_| bad())?, 0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidConfig(format!("unknown report format {other:?}"))),
        }
    }
}

pub fn render_report(rows: &[ReportRow], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(rows)? + "\n"),
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record(REPORT_COLUMNS)?;
            for r in rows {
                w.serialize(r)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
    }
}

pub fn parse_report(text: &str, format: ReportFormat) -> Result<Vec<ReportRow>> {
    match format {
        ReportFormat::Json => Ok(serde_json::from_str(text)?),
        ReportFormat::Csv => {
            let mut r = csv::Reader::from_reader(text.as_bytes());
            let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
            if header != REPORT_COLUMNS {
                return Err(Error::InvalidFieldValue(format!("report header {header:?}")));
            }
            r.deserialize().map(|row| row.map_err(Error::from)).collect()
        }
    }
}
