//! DCI payload layouts for formats 0, 1, 1A, 2 and 2A and resource
//! allocation decoding.
//!
//! Field widths follow the FDD tables. Fields other than the resource
//! allocation are kept as opaque integers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqfec::{from_bits, to_bits};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DciFormat {
    F0,
    F1,
    F1A,
    F2,
    F2A,
}

impl DciFormat {
    pub const ALL: [DciFormat; 5] = [DciFormat::F0, DciFormat::F1, DciFormat::F1A, DciFormat::F2, DciFormat::F2A];

    pub fn direction(self) -> LinkDirection {
        if self == DciFormat::F0 {
            LinkDirection::Uplink
        } else {
            LinkDirection::Downlink
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DciFormat::F0 => "Format0",
            DciFormat::F1 => "Format1",
            DciFormat::F1A => "Format1A",
            DciFormat::F2 => "Format2",
            DciFormat::F2A => "Format2A",
        }
    }
}

impl fmt::Display for DciFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for DciFormat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for DciFormat {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for DciFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().trim_start_matches("Format").to_ascii_uppercase();
        Ok(match key.as_str() {
            "0" => DciFormat::F0,
            "1" => DciFormat::F1,
            "1A" => DciFormat::F1A,
            "2" => DciFormat::F2,
            "2A" => DciFormat::F2A,
            _ => return Err(Error::UnsupportedFormat(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LinkDirection {
    Uplink,
    Downlink,
}

impl fmt::Display for LinkDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkDirection::Uplink => "Uplink",
            LinkDirection::Downlink => "Downlink",
        })
    }
}

impl FromStr for LinkDirection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "Uplink" => Ok(LinkDirection::Uplink),
            "Downlink" => Ok(LinkDirection::Downlink),
            other => Err(Error::InvalidFieldValue(format!("link direction {other:?}"))),
        }
    }
}

/// Sorted, duplicate-free PRB indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PrbSet(Vec<u16>);

impl PrbSet {
    pub fn new(indices: impl IntoIterator<Item = u16>) -> Self {
        let mut v: Vec<u16> = indices.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        PrbSet(v)
    }

    pub fn range(start: u16, len: u16) -> Self {
        PrbSet((start..start + len).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self) -> &[u16] {
        &self.0
    }

    pub fn contains(&self, prb: u16) -> bool {
        self.0.binary_search(&prb).is_ok()
    }

    pub fn intersects(&self, other: &PrbSet) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }

    pub fn highest(&self) -> Option<u16> {
        self.0.last().copied()
    }
}

/// Bracket rendering: runs of three or more as `a...b`, others bare.
impl fmt::Display for PrbSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        let mut i = 0;
        while i < self.0.len() {
            let mut j = i;
            while j + 1 < self.0.len() && self.0[j + 1] == self.0[j] + 1 {
                j += 1;
            }
            if j - i >= 2 {
                parts.push(format!("{}...{}", self.0[i], self.0[j]));
            } else {
                parts.extend(self.0[i..=j].iter().map(|v| v.to_string()));
            }
            i = j + 1;
        }
        write!(f, "[{}]", parts.join(" "))
    }
}

impl FromStr for PrbSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidFieldValue(format!("PRB set {s:?}"));
        let inner = s.trim().strip_prefix('[').and_then(|t| t.strip_suffix(']')).ok_or_else(bad)?;
        let mut out = Vec::new();
        for tok in inner.split_whitespace() {
            if let Some((a, b)) = tok.split_once("...") {
                let a: u16 = a.parse().map_err(|_| bad())?;
                let b: u16 = b.parse().map_err(|_| bad())?;
                if b < a {
                    return Err(bad());
                }
                out.extend(a..=b);
            } else {
                out.push(tok.parse().map_err(|_| bad())?);
            }
        }
        Ok(PrbSet::new(out))
    }
}

impl Serialize for PrbSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PrbSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Payload sizes that would be ambiguous with the PDCCH rate matching.
pub const AMBIGUOUS_SIZES: [usize; 10] = [12, 14, 16, 20, 24, 26, 32, 40, 44, 56];

/// RBG size for type 0/1 allocation.
pub fn rbg_size(n_dl_rb: u16) -> usize {
    match n_dl_rb {
        0..=10 => 1,
        11..=26 => 2,
        27..=63 => 3,
        _ => 4,
    }
}

pub fn rbg_count(n_dl_rb: u16) -> usize {
    (n_dl_rb as usize).div_ceil(rbg_size(n_dl_rb))
}

/// Width of a type 2 RIV field.
pub fn riv_bits(n_rb: u16) -> usize {
    let n = n_rb as u64;
    let values = n * (n + 1) / 2;
    (64 - (values - 1).leading_zeros()) as usize
}

fn ceil_log2(v: usize) -> usize {
    if v <= 1 {
        0
    } else {
        (usize::BITS - (v - 1).leading_zeros()) as usize
    }
}

pub const FLAG_FIELD: &str = "format0/1A flag";
pub const RA_HEADER: &str = "resource allocation header";
pub const RB_ASSIGNMENT: &str = "resource block assignment";
pub const LOC_DIST: &str = "localized/distributed";
pub const HOPPING: &str = "hopping flag";
pub const PADDING: &str = "padding";

fn raw_layout(format: DciFormat, n: u16, ports: usize) -> Result<Vec<(&'static str, usize)>> {
    let riv = riv_bits(n);
    let header = usize::from(n > 10);
    let rbgs = rbg_count(n);
    Ok(match format {
        DciFormat::F0 => vec![
            (FLAG_FIELD, 1),
            (HOPPING, 1),
            (RB_ASSIGNMENT, riv),
            ("mcs/rv", 5),
            ("ndi", 1),
            ("tpc", 2),
            ("cyclic shift dmrs", 3),
            ("cqi request", 1),
        ],
        DciFormat::F1A => vec![
            (FLAG_FIELD, 1),
            (LOC_DIST, 1),
            (RB_ASSIGNMENT, riv),
            ("mcs", 5),
            ("harq process", 3),
            ("ndi", 1),
            ("rv", 2),
            ("tpc", 2),
        ],
        DciFormat::F1 => vec![
            (RA_HEADER, header),
            (RB_ASSIGNMENT, rbgs),
            ("mcs", 5),
            ("harq process", 3),
            ("ndi", 1),
            ("rv", 2),
            ("tpc", 2),
        ],
        DciFormat::F2 | DciFormat::F2A => {
            let precoding = match (format, ports) {
                (_, 1) => return Err(Error::UnsupportedFormat(format!("{format} with one antenna port"))),
                (DciFormat::F2, 2) => 3,
                (DciFormat::F2, _) => 6,
                (_, 2) => 0,
                _ => 2,
            };
            let mut v = vec![
                (RA_HEADER, header),
                (RB_ASSIGNMENT, rbgs),
                ("tpc", 2),
                ("harq process", 3),
                ("tb swap", 1),
                ("tb1 mcs", 5),
                ("tb1 ndi", 1),
                ("tb1 rv", 2),
                ("tb2 mcs", 5),
                ("tb2 ndi", 1),
                ("tb2 rv", 2),
            ];
            if precoding > 0 {
                v.push(("precoding", precoding));
            }
            v
        }
    })
}

fn raw_size(format: DciFormat, n: u16, ports: usize) -> Result<usize> {
    Ok(raw_layout(format, n, ports)?.iter().map(|f| f.1).sum())
}

/// Shared size of formats 0 and 1A.
fn size_0_1a(n: u16) -> usize {
    let mut size = raw_size(DciFormat::F0, n, 1)
        .expect("format 0 always defined")
        .max(raw_size(DciFormat::F1A, n, 1).expect("format 1A always defined"));
    if AMBIGUOUS_SIZES.contains(&size) {
        size += 1;
    }
    size
}

/// Padded payload size in bits.
pub fn dci_size(format: DciFormat, n_dl_rb: u16, ports: usize) -> Result<usize> {
    let base = size_0_1a(n_dl_rb);
    match format {
        DciFormat::F0 | DciFormat::F1A => Ok(base),
        _ => {
            let mut size = raw_size(format, n_dl_rb, ports)?;
            while AMBIGUOUS_SIZES.contains(&size) || size == base {
                size += 1;
            }
            Ok(size)
        }
    }
}

/// Requested formats grouped by payload size, so each size is decoded once.
/// 1A is folded into 0 since the flag bit separates them after parsing.
pub fn size_groups(formats: &[DciFormat], n_dl_rb: u16, ports: usize) -> Vec<(usize, Vec<DciFormat>)> {
    let mut out: Vec<(usize, Vec<DciFormat>)> = Vec::new();
    for f in formats {
        let Ok(size) = dci_size(*f, n_dl_rb, ports) else { continue };
        let f = if *f == DciFormat::F1A { DciFormat::F0 } else { *f };
        match out.iter_mut().find(|(s, _)| *s == size) {
            Some((_, v)) if !v.contains(&f) => v.push(f),
            Some(_) => {}
            None => out.push((size, vec![f])),
        }
    }
    out.sort_by_key(|(s, _)| *s);
    out
}

/// Full field layout with padding.
pub fn field_layout(format: DciFormat, n_dl_rb: u16, ports: usize) -> Result<Vec<(&'static str, usize)>> {
    let mut v = raw_layout(format, n_dl_rb, ports)?;
    let pad = dci_size(format, n_dl_rb, ports)? - raw_size(format, n_dl_rb, ports)?;
    if pad > 0 {
        v.push((PADDING, pad));
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DciField {
    pub name: &'static str,
    pub width: usize,
    pub value: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DciMessage {
    pub format: DciFormat,
    pub link_direction: LinkDirection,
    pub prb_set: PrbSet,
    pub raw_fields: Vec<DciField>,
    pub payload_bits: Vec<u8>,
}

impl DciMessage {
    /// Build from named field values; unnamed fields are zero and the
    /// 0/1A flag is set from the format.
    pub fn from_fields(format: DciFormat, values: &[(&str, u32)], n_dl_rb: u16, ports: usize) -> Result<Self> {
        let layout = field_layout(format, n_dl_rb, ports)?;
        for (name, _) in values {
            if !layout.iter().any(|(n, _)| n == name) {
                return Err(Error::InvalidFieldValue(format!("{format} has no field {name:?}")));
            }
        }
        let mut bits = Vec::new();
        for (name, width) in &layout {
            let mut v = values.iter().find(|(n, _)| n == name).map(|(_, v)| *v).unwrap_or(0);
            if *name == FLAG_FIELD {
                v = u32::from(format == DciFormat::F1A);
            }
            if *width < 32 && v >> width != 0 {
                return Err(Error::InvalidFieldValue(format!("{name} = {v} exceeds {width} bits")));
            }
            bits.extend(to_bits(v as u64, *width));
        }
        parse_dci(&bits, format, n_dl_rb, ports)
    }

    pub fn field(&self, name: &str) -> Option<u32> {
        self.raw_fields.iter().find(|f| f.name == name).map(|f| f.value)
    }
}

pub fn pack_dci(msg: &DciMessage) -> Vec<u8> {
    msg.raw_fields.iter().flat_map(|f| to_bits(f.value as u64, f.width)).collect()
}

/// Parse a payload. For formats 0 and 1A the flag bit decides which of the
/// two is returned.
pub fn parse_dci(bits: &[u8], format: DciFormat, n_dl_rb: u16, ports: usize) -> Result<DciMessage> {
    let format = match format {
        DciFormat::F0 | DciFormat::F1A => {
            if bits.first() == Some(&1) {
                DciFormat::F1A
            } else {
                DciFormat::F0
            }
        }
        f => f,
    };
    let layout = field_layout(format, n_dl_rb, ports)?;
    let expected: usize = layout.iter().map(|f| f.1).sum();
    if bits.len() != expected {
        return Err(Error::SizeMismatch { expected, actual: bits.len() });
    }
    let mut raw_fields = Vec::with_capacity(layout.len());
    let mut at = 0;
    let mut ra_bits: &[u8] = &[];
    for (name, width) in layout {
        let slice = &bits[at..at + width];
        if name == RB_ASSIGNMENT {
            ra_bits = slice;
        }
        raw_fields.push(DciField { name, width, value: from_bits(slice) as u32 });
        at += width;
    }
    let get = |n: &str| raw_fields.iter().find(|f| f.name == n).map(|f| f.value).unwrap_or(0);
    let prb_set = match format {
        DciFormat::F0 => {
            let hop_bits = if get(HOPPING) == 1 { if n_dl_rb < 50 { 1 } else { 2 } } else { 0 };
            ra_type2_riv_to_prbs(from_bits(&ra_bits[hop_bits..]) as u32, n_dl_rb)?
        }
        DciFormat::F1A => ra_type2_riv_to_prbs(get(RB_ASSIGNMENT), n_dl_rb)?,
        _ => {
            if get(RA_HEADER) == 1 {
                ra_type1_to_prbs(ra_bits, n_dl_rb)?
            } else {
                ra_type0_to_prbs(ra_bits, n_dl_rb)?
            }
        }
    };
    Ok(DciMessage {
        format,
        link_direction: format.direction(),
        prb_set,
        raw_fields,
        payload_bits: bits.to_vec(),
    })
}

pub fn ra_type0_to_prbs(bitmap: &[u8], n_dl_rb: u16) -> Result<PrbSet> {
    let p = rbg_size(n_dl_rb);
    let expected = rbg_count(n_dl_rb);
    if bitmap.len() != expected {
        return Err(Error::WrongBitmapLength { expected, actual: bitmap.len() });
    }
    let n = n_dl_rb as usize;
    Ok(PrbSet::new(
        bitmap
            .iter()
            .enumerate()
            .filter(|(_, b)| **b == 1)
            .flat_map(|(i, _)| (i * p..((i + 1) * p).min(n)).map(|v| v as u16)),
    ))
}

/// PRBs in RBG subset `p`.
fn subset_size(n: usize, p_sz: usize, subset: usize) -> usize {
    let base = (n - 1) / (p_sz * p_sz) * p_sz;
    let last = ((n - 1) / p_sz) % p_sz;
    match subset.cmp(&last) {
        std::cmp::Ordering::Less => base + p_sz,
        std::cmp::Ordering::Equal => base + (n - 1) % p_sz + 1,
        std::cmp::Ordering::Greater => base,
    }
}

/// Width of the type 1 reduced bitmap.
pub fn type1_bitmap_bits(n_dl_rb: u16) -> usize {
    let p = rbg_size(n_dl_rb);
    rbg_count(n_dl_rb) - ceil_log2(p) - 1
}

pub fn ra_type1_to_prbs(field: &[u8], n_dl_rb: u16) -> Result<PrbSet> {
    let expected = rbg_count(n_dl_rb);
    if field.len() != expected {
        return Err(Error::WrongBitmapLength { expected, actual: field.len() });
    }
    let p_sz = rbg_size(n_dl_rb);
    if p_sz == 1 {
        return Err(Error::MalformedRaField("type 1 needs more than 10 RBs".into()));
    }
    let sel = ceil_log2(p_sz);
    let subset = from_bits(&field[..sel]) as usize;
    if subset >= p_sz {
        return Err(Error::MalformedRaField(format!("RBG subset {subset} with P = {p_sz}")));
    }
    let shift = field[sel] == 1;
    let bitmap = &field[sel + 1..];
    let n = n_dl_rb as usize;
    let delta = if shift { subset_size(n, p_sz, subset).saturating_sub(bitmap.len()) } else { 0 };
    let mut out = Vec::new();
    for (i, b) in bitmap.iter().enumerate() {
        if *b == 0 {
            continue;
        }
        let j = i + delta;
        let prb = j / p_sz * p_sz * p_sz + subset * p_sz + j % p_sz;
        if prb >= n {
            return Err(Error::MalformedRaField(format!("type 1 bit {i} maps to PRB {prb}")));
        }
        out.push(prb as u16);
    }
    Ok(PrbSet::new(out))
}

pub fn riv_encode(start: u16, len: u16, n_rb: u16) -> Result<u32> {
    let (n, s, l) = (n_rb as u32, start as u32, len as u32);
    if l == 0 || s + l > n {
        return Err(Error::InvalidFieldValue(format!("allocation start {s} length {l} in {n} RBs")));
    }
    Ok(if l - 1 <= n / 2 { n * (l - 1) + s } else { n * (n - l + 1) + (n - 1 - s) })
}

/// `(start, length)` of a RIV.
pub fn riv_decode(riv: u32, n_rb: u16) -> Result<(u16, u16)> {
    let n = n_rb as u32;
    if n == 0 || riv >= n * (n + 1) / 2 {
        return Err(Error::InvalidRiv { riv, n_rb });
    }
    let (a, b) = (riv / n, riv % n);
    let (start, len) = if a + b < n { (b, a + 1) } else { (n - 1 - b, n - a + 1) };
    Ok((start as u16, len as u16))
}

pub fn ra_type2_riv_to_prbs(riv: u32, n_dl_rb: u16) -> Result<PrbSet> {
    let (start, len) = riv_decode(riv, n_dl_rb)?;
    Ok(PrbSet::range(start, len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sizes_at_fifty() {
        let s = |f| dci_size(f, 50, 2).unwrap();
        assert_eq!(s(DciFormat::F0), s(DciFormat::F1A));
        assert_eq!(s(DciFormat::F1A), 27);
        assert_eq!(s(DciFormat::F1), 31);
        assert_eq!(s(DciFormat::F2), 43);
        assert_eq!(s(DciFormat::F2A), 41);
        assert!(s(DciFormat::F1) > s(DciFormat::F1A));
        assert!(s(DciFormat::F2) > s(DciFormat::F1));
        assert!(matches!(dci_size(DciFormat::F2, 50, 1), Err(Error::UnsupportedFormat(_))));
        assert_eq!(rbg_count(50), 17);
        assert_eq!(riv_bits(50), 11);
    }

    #[test]
    fn no_size_is_ambiguous() {
        for n in crate::numerology::VALID_BANDWIDTHS {
            for ports in [2usize, 4] {
                let base = dci_size(DciFormat::F1A, n, ports).unwrap();
                assert!(!AMBIGUOUS_SIZES.contains(&base));
                for f in [DciFormat::F1, DciFormat::F2, DciFormat::F2A] {
                    let s = dci_size(f, n, ports).unwrap();
                    assert!(!AMBIGUOUS_SIZES.contains(&s) && s != base, "{f} n={n}");
                }
            }
        }
    }

    #[test]
    fn type0_examples() {
        assert_eq!(ra_type0_to_prbs(&[1; 17], 50).unwrap(), PrbSet::range(0, 50));
        let mut b = [0u8; 17];
        b[0] = 1;
        assert_eq!(ra_type0_to_prbs(&b, 50).unwrap(), PrbSet::new([0, 1, 2]));
        let mut b = [0u8; 17];
        b[16] = 1;
        assert_eq!(ra_type0_to_prbs(&b, 50).unwrap(), PrbSet::new([48, 49]));
        assert!(matches!(ra_type0_to_prbs(&[1; 16], 50), Err(Error::WrongBitmapLength { expected: 17, actual: 16 })));
    }

    #[test]
    fn riv_examples() {
        assert_eq!(ra_type2_riv_to_prbs(358, 50).unwrap(), PrbSet::range(8, 8));
        assert_eq!(ra_type2_riv_to_prbs(0, 50).unwrap(), PrbSet::new([0]));
        assert_eq!(ra_type2_riv_to_prbs(99, 50).unwrap(), PrbSet::range(0, 50));
        assert!(matches!(ra_type2_riv_to_prbs(1275, 50), Err(Error::InvalidRiv { .. })));
    }

    #[test]
    fn riv_exhaustive_round_trip() {
        for n in [25u16, 50] {
            for start in 0..n {
                for len in 1..=n - start {
                    let riv = riv_encode(start, len, n).unwrap();
                    assert!(riv < n as u32 * (n as u32 + 1) / 2);
                    assert_eq!(riv_decode(riv, n).unwrap(), (start, len));
                }
            }
        }
    }

    /// Subset PRBs by direct enumeration of the RBG pattern.
    fn oracle_type1(subset: usize, shift: bool, bitmap: &[u8], n: usize) -> Vec<u16> {
        let p = rbg_size(n as u16);
        let members: Vec<usize> = (0..n).filter(|prb| (prb / p) % p == subset).collect();
        let delta = if shift { members.len().saturating_sub(bitmap.len()) } else { 0 };
        bitmap
            .iter()
            .enumerate()
            .filter(|(_, b)| **b == 1)
            .map(|(i, _)| members[i + delta] as u16)
            .collect()
    }

    fn type1_field(subset: usize, shift: bool, bitmap: &[u8], n: u16) -> Vec<u8> {
        let mut f = to_bits(subset as u64, ceil_log2(rbg_size(n)));
        f.push(u8::from(shift));
        f.extend_from_slice(bitmap);
        f
    }

    #[test]
    fn type1_fixed_triple() {
        let bitmap = [1, 0, 1, 1, 0, 0, 0, 1, 0, 0, 1, 0, 0, 1];
        for subset in 0..3 {
            for shift in [false, true] {
                let got = ra_type1_to_prbs(&type1_field(subset, shift, &bitmap, 50), 50).unwrap();
                assert_eq!(got.indices(), oracle_type1(subset, shift, &bitmap, 50).as_slice());
            }
        }
        assert!(ra_type1_to_prbs(&type1_field(0, false, &[0; 14], 50), 50).unwrap().is_empty());
        assert!(matches!(
            ra_type1_to_prbs(&type1_field(3, false, &[0; 14], 50), 50),
            Err(Error::MalformedRaField(_))
        ));
    }

    #[test]
    fn reference_allocation_examples() {
        let f1 = DciMessage::from_fields(DciFormat::F1, &[(RB_ASSIGNMENT, (1 << 17) - 1)], 50, 2).unwrap();
        assert_eq!(f1.prb_set.to_string(), "[0...49]");
        let f1a = DciMessage::from_fields(DciFormat::F1A, &[(RB_ASSIGNMENT, 358)], 50, 2).unwrap();
        assert_eq!(f1a.prb_set.to_string(), "[8...15]");
        assert_eq!(f1a.link_direction, LinkDirection::Downlink);
        let f0 = DciMessage::from_fields(DciFormat::F0, &[(RB_ASSIGNMENT, 358)], 50, 2).unwrap();
        assert_eq!(f0.link_direction, LinkDirection::Uplink);
        // Shared size: the flag alone tells 0 from 1A.
        assert_eq!(parse_dci(&f0.payload_bits, DciFormat::F1A, 50, 2).unwrap().format, DciFormat::F0);
    }

    #[test]
    fn prbset_render_and_parse() {
        let s = PrbSet::new([0, 10, 11, 18, 19, 27, 29]);
        assert_eq!(s.to_string(), "[0 10 11 18 19 27 29]");
        let t = PrbSet::new([0, 1, 2, 3, 7, 9, 10, 11]);
        assert_eq!(t.to_string(), "[0...3 7 9...11]");
        assert_eq!("[0...3 7 9...11]".parse::<PrbSet>().unwrap(), t);
        assert_eq!(PrbSet::default().to_string(), "[]");
        assert!("0 1".parse::<PrbSet>().is_err());
    }

    fn arb_message(format: DciFormat, n: u16, ports: usize) -> impl Strategy<Value = DciMessage> {
        let layout = field_layout(format, n, ports).unwrap();
        let strategies: Vec<_> = layout.iter().map(|(_, w)| 0u32..(1u32 << w)).collect();
        strategies.prop_filter_map("valid allocation", move |values| {
            let named: Vec<(&str, u32)> = layout
                .iter()
                .zip(&values)
                .filter(|((name, _), _)| *name != PADDING && *name != FLAG_FIELD)
                .map(|((name, _), v)| (*name, *v))
                .collect();
            DciMessage::from_fields(format, &named, n, ports).ok()
        })
    }

    proptest! {
        #[test]
        fn round_trip_every_format(
            (format, msg) in prop_oneof![Just(DciFormat::F0), Just(DciFormat::F1), Just(DciFormat::F1A), Just(DciFormat::F2), Just(DciFormat::F2A)]
                .prop_flat_map(|f| (Just(f), arb_message(f, 50, 2)))
        ) {
            let bits = pack_dci(&msg);
            prop_assert_eq!(bits.len(), dci_size(format, 50, 2).unwrap());
            prop_assert_eq!(msg.raw_fields.iter().map(|f| f.width).sum::<usize>(), bits.len());
            let back = parse_dci(&bits, format, 50, 2).unwrap();
            prop_assert!(back.prb_set.highest().is_none_or(|m: u16| m < 50));
            prop_assert_eq!(back, msg);
        }

        #[test]
        fn type1_matches_oracle(n in prop::sample::select(vec![15u16, 25, 50, 75, 100]), subset in 0usize..4, shift in any::<bool>(), seed in any::<u64>()) {
            let p = rbg_size(n);
            prop_assume!(subset < p);
            let width = type1_bitmap_bits(n);
            let bitmap: Vec<u8> = (0..width).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
            let field = type1_field(subset, shift, &bitmap, n);
            let members = (0..n as usize).filter(|prb| (prb / p) % p == subset).count();
            let delta = if shift { members.saturating_sub(width) } else { 0 };
            let reachable = bitmap.iter().enumerate().all(|(i, b)| *b == 0 || i + delta < members);
            match ra_type1_to_prbs(&field, n) {
                Ok(set) => {
                    prop_assert!(reachable);
                    let expected = oracle_type1(subset, shift, &bitmap, n as usize);
                    prop_assert_eq!(set.indices(), expected.as_slice());
                    prop_assert!(set.highest().is_none_or(|m: u16| m < n));
                }
                Err(_) => prop_assert!(!reachable),
            }
        }
    }
}
