//! Frame and grid geometry shared by every stage of the chain.
//!
//! The grid keeps only the `12 * n_dl_rb` occupied subcarriers; subcarrier 0
//! is the lowest frequency and the DC carrier sits between `6 * n_dl_rb - 1`
//! and `6 * n_dl_rb`, inserted by the modulator.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqfec::gold_sequence;

pub const SUBCARRIERS_PER_RB: usize = 12;
pub const SUBCARRIER_SPACING_HZ: u32 = 15_000;
pub const SUBFRAMES_PER_FRAME: usize = 10;
/// Largest downlink bandwidth; reference-signal sequences are defined over it.
pub const MAX_DL_RB: usize = 110;
pub const VALID_BANDWIDTHS: [u16; 6] = [6, 15, 25, 50, 75, 100];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CyclicPrefix {
    Normal,
    Extended,
}

impl CyclicPrefix {
    pub fn symbols_per_slot(self) -> usize {
        match self {
            CyclicPrefix::Normal => 7,
            CyclicPrefix::Extended => 6,
        }
    }

    pub fn symbols_per_subframe(self) -> usize {
        2 * self.symbols_per_slot()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum DuplexMode {
    #[serde(rename = "FDD")]
    Fdd,
}

impl<'de> Deserialize<'de> for DuplexMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "FDD" => Ok(DuplexMode::Fdd),
            "TDD" => Err(serde::de::Error::custom("DuplexMode: TDD is not supported")),
            other => Err(serde::de::Error::custom(format!("DuplexMode: unknown value {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhichDuration {
    Normal,
    Extended,
}

/// PHICH resource factor N_g.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhichNg {
    Sixth,
    Half,
    One,
    Two,
}

impl PhichNg {
    pub const ALL: [PhichNg; 4] = [PhichNg::Sixth, PhichNg::Half, PhichNg::One, PhichNg::Two];

    /// N_g as an exact fraction (numerator, denominator).
    pub fn ratio(self) -> (u32, u32) {
        match self {
            PhichNg::Sixth => (1, 6),
            PhichNg::Half => (1, 2),
            PhichNg::One => (1, 1),
            PhichNg::Two => (2, 1),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            PhichNg::Sixth => 0,
            PhichNg::Half => 1,
            PhichNg::One => 2,
            PhichNg::Two => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

/// Cell-wide numerology. Serialized with the conventional `enb` settings
/// key names (NDLRB, NCellID, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawCellConfig", into = "RawCellConfig")]
pub struct CellConfig {
    n_dl_rb: u16,
    pci: u16,
    cyclic_prefix: CyclicPrefix,
    cell_ref_ports: u8,
    duplex_mode: DuplexMode,
    phich_duration: PhichDuration,
    phich_ng: PhichNg,
}

#[derive(Serialize, Deserialize)]
struct RawCellConfig {
    #[serde(rename = "NDLRB")]
    n_dl_rb: u16,
    #[serde(rename = "DuplexMode", default = "default_duplex")]
    duplex_mode: DuplexMode,
    #[serde(rename = "CyclicPrefix", default = "default_cp")]
    cyclic_prefix: CyclicPrefix,
    #[serde(rename = "NCellID")]
    pci: u16,
    #[serde(rename = "CellRefP", default = "default_ports")]
    cell_ref_ports: u8,
    #[serde(rename = "PHICHDuration", default = "default_phich_duration")]
    phich_duration: PhichDuration,
    #[serde(rename = "Ng", default = "default_ng")]
    phich_ng: PhichNg,
}

fn default_duplex() -> DuplexMode {
    DuplexMode::Fdd
}
fn default_cp() -> CyclicPrefix {
    CyclicPrefix::Normal
}
fn default_ports() -> u8 {
    1
}
fn default_phich_duration() -> PhichDuration {
    PhichDuration::Normal
}
fn default_ng() -> PhichNg {
    PhichNg::One
}

impl TryFrom<RawCellConfig> for CellConfig {
    type Error = Error;

    fn try_from(raw: RawCellConfig) -> Result<Self> {
        Ok(CellConfig::new(raw.n_dl_rb, raw.pci, raw.cell_ref_ports)?
            .with_cyclic_prefix(raw.cyclic_prefix)
            .with_phich(raw.phich_duration, raw.phich_ng))
    }
}

impl From<CellConfig> for RawCellConfig {
    fn from(c: CellConfig) -> Self {
        RawCellConfig {
            n_dl_rb: c.n_dl_rb,
            duplex_mode: c.duplex_mode,
            cyclic_prefix: c.cyclic_prefix,
            pci: c.pci,
            cell_ref_ports: c.cell_ref_ports,
            phich_duration: c.phich_duration,
            phich_ng: c.phich_ng,
        }
    }
}

impl CellConfig {
    /// Normal CP, FDD, PHICH normal duration with N_g = 1.
    pub fn new(n_dl_rb: u16, pci: u16, cell_ref_ports: u8) -> Result<Self> {
        if !VALID_BANDWIDTHS.contains(&n_dl_rb) {
            return Err(Error::InvalidConfig(format!(
                "NDLRB must be one of {VALID_BANDWIDTHS:?}, got {n_dl_rb}"
            )));
        }
        if pci > 503 {
            return Err(Error::InvalidConfig(format!("NCellID must be in 0..=503, got {pci}")));
        }
        if ![1, 2, 4].contains(&cell_ref_ports) {
            return Err(Error::InvalidConfig(format!(
                "CellRefP must be 1, 2 or 4, got {cell_ref_ports}"
            )));
        }
        Ok(CellConfig {
            n_dl_rb,
            pci,
            cyclic_prefix: CyclicPrefix::Normal,
            cell_ref_ports,
            duplex_mode: DuplexMode::Fdd,
            phich_duration: PhichDuration::Normal,
            phich_ng: PhichNg::One,
        })
    }

    pub fn with_cyclic_prefix(mut self, cp: CyclicPrefix) -> Self {
        self.cyclic_prefix = cp;
        self
    }

    pub fn with_phich(mut self, duration: PhichDuration, ng: PhichNg) -> Self {
        self.phich_duration = duration;
        self.phich_ng = ng;
        self
    }

    /// Same cell seen through a narrower window centred on DC. Used to
    /// process the six central resource blocks before the bandwidth is known.
    pub fn with_bandwidth(mut self, n_dl_rb: u16) -> Result<Self> {
        if !VALID_BANDWIDTHS.contains(&n_dl_rb) {
            return Err(Error::UnsupportedBandwidth(n_dl_rb as u32));
        }
        self.n_dl_rb = n_dl_rb;
        Ok(self)
    }

    pub fn with_ports(mut self, ports: u8) -> Result<Self> {
        if ![1, 2, 4].contains(&ports) {
            return Err(Error::InvalidConfig(format!("CellRefP must be 1, 2 or 4, got {ports}")));
        }
        self.cell_ref_ports = ports;
        Ok(self)
    }

    pub fn n_dl_rb(&self) -> u16 {
        self.n_dl_rb
    }
    pub fn pci(&self) -> u16 {
        self.pci
    }
    pub fn cyclic_prefix(&self) -> CyclicPrefix {
        self.cyclic_prefix
    }
    pub fn cell_ref_ports(&self) -> usize {
        self.cell_ref_ports as usize
    }
    pub fn duplex_mode(&self) -> DuplexMode {
        self.duplex_mode
    }
    pub fn phich_duration(&self) -> PhichDuration {
        self.phich_duration
    }
    pub fn phich_ng(&self) -> PhichNg {
        self.phich_ng
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_dl_rb as usize * SUBCARRIERS_PER_RB
    }

    pub fn symbols_per_subframe(&self) -> usize {
        self.cyclic_prefix.symbols_per_subframe()
    }

    /// Grid subcarrier index of the lowest of the 72 central subcarriers.
    pub fn center_six_rb_start(&self) -> usize {
        self.n_subcarriers() / 2 - 36
    }
}

/// Cell settings as printed after MIB decoding, including the decoder-side
/// frame and subframe counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSettings {
    #[serde(flatten)]
    pub cell: CellConfig,
    #[serde(rename = "NSubframe", default)]
    pub n_subframe: u8,
    #[serde(rename = "NFrame", default)]
    pub n_frame: u16,
}

impl fmt::Display for CellSettings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cp = match self.cell.cyclic_prefix {
            CyclicPrefix::Normal => "Normal",
            CyclicPrefix::Extended => "Extended",
        };
        let dur = match self.cell.phich_duration {
            PhichDuration::Normal => "Normal",
            PhichDuration::Extended => "Extended",
        };
        writeln!(f, "NDLRB: {}", self.cell.n_dl_rb)?;
        writeln!(f, "DuplexMode: 'FDD'")?;
        writeln!(f, "CyclicPrefix: '{cp}'")?;
        writeln!(f, "NCellID: {}", self.cell.pci)?;
        writeln!(f, "NSubframe: {}", self.n_subframe)?;
        writeln!(f, "CellRefP: {}", self.cell.cell_ref_ports)?;
        writeln!(f, "PHICHDuration: '{dur}'")?;
        write!(f, "NFrame: {}", self.n_frame)
    }
}

/// Position of one resource element inside a subframe grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RePosition {
    pub subcarrier: usize,
    pub symbol: usize,
}

impl RePosition {
    pub fn new(subcarrier: usize, symbol: usize) -> Self {
        RePosition { subcarrier, symbol }
    }
}

/// One subframe of complex resource elements, `subcarriers x symbols`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceGrid {
    n_dl_rb: u16,
    n_symbols: usize,
    cells: Vec<Complex64>,
}

impl ResourceGrid {
    pub fn new(cfg: &CellConfig) -> Self {
        Self::zeros(cfg.n_dl_rb, cfg.symbols_per_subframe())
    }

    pub fn zeros(n_dl_rb: u16, n_symbols: usize) -> Self {
        let n = n_dl_rb as usize * SUBCARRIERS_PER_RB * n_symbols;
        ResourceGrid { n_dl_rb, n_symbols, cells: vec![Complex64::new(0.0, 0.0); n] }
    }

    pub fn n_dl_rb(&self) -> u16 {
        self.n_dl_rb
    }
    pub fn n_subcarriers(&self) -> usize {
        self.n_dl_rb as usize * SUBCARRIERS_PER_RB
    }
    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn matches(&self, cfg: &CellConfig) -> bool {
        self.n_dl_rb == cfg.n_dl_rb && self.n_symbols == cfg.symbols_per_subframe()
    }

    pub fn same_shape(&self, other: &ResourceGrid) -> bool {
        self.n_dl_rb == other.n_dl_rb && self.n_symbols == other.n_symbols
    }

    /// All subcarriers of one OFDM symbol, lowest frequency first.
    pub fn symbol(&self, l: usize) -> &[Complex64] {
        let n = self.n_subcarriers();
        &self.cells[l * n..(l + 1) * n]
    }

    pub fn symbol_mut(&mut self, l: usize) -> &mut [Complex64] {
        let n = self.n_subcarriers();
        &mut self.cells[l * n..(l + 1) * n]
    }

    pub fn cells(&self) -> &[Complex64] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [Complex64] {
        &mut self.cells
    }

    pub fn energy(&self) -> f64 {
        self.cells.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Grid of the central `n_rb` resource blocks.
    pub fn center(&self, n_rb: u16) -> ResourceGrid {
        let mut out = ResourceGrid::zeros(n_rb, self.n_symbols);
        let off = (self.n_subcarriers() - out.n_subcarriers()) / 2;
        let w = out.n_subcarriers();
        for l in 0..self.n_symbols {
            out.symbol_mut(l).copy_from_slice(&self.symbol(l)[off..off + w]);
        }
        out
    }
}

impl Index<RePosition> for ResourceGrid {
    type Output = Complex64;
    fn index(&self, p: RePosition) -> &Complex64 {
        &self.cells[p.symbol * self.n_subcarriers() + p.subcarrier]
    }
}

impl IndexMut<RePosition> for ResourceGrid {
    fn index_mut(&mut self, p: RePosition) -> &mut Complex64 {
        let n = self.n_subcarriers();
        &mut self.cells[p.symbol * n + p.subcarrier]
    }
}

/// Boolean occupancy map congruent with a grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReMask {
    n_subcarriers: usize,
    n_symbols: usize,
    bits: Vec<bool>,
}

impl ReMask {
    pub fn new(n_subcarriers: usize, n_symbols: usize) -> Self {
        ReMask { n_subcarriers, n_symbols, bits: vec![false; n_subcarriers * n_symbols] }
    }

    pub fn for_config(cfg: &CellConfig) -> Self {
        Self::new(cfg.n_subcarriers(), cfg.symbols_per_subframe())
    }

    pub fn set(&mut self, p: RePosition) {
        self.bits[p.symbol * self.n_subcarriers + p.subcarrier] = true;
    }

    pub fn get(&self, p: RePosition) -> bool {
        self.bits[p.symbol * self.n_subcarriers + p.subcarrier]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }
}

/// `(subcarriers, symbols)` of one subframe grid.
pub fn grid_shape(cfg: &CellConfig) -> (usize, usize) {
    (cfg.n_subcarriers(), cfg.symbols_per_subframe())
}

/// FFT size, sample rate and per-slot cyclic prefix lengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FftParams {
    pub fft_size: usize,
    pub sample_rate_hz: u32,
    /// Cyclic prefix length of each symbol in a slot.
    pub cp_lengths: Vec<usize>,
}

pub fn fft_size_for(n_dl_rb: u16) -> Result<usize> {
    Ok(match n_dl_rb {
        6 => 128,
        15 => 256,
        25 => 512,
        50 => 1024,
        75 => 1536,
        100 => 2048,
        other => return Err(Error::UnsupportedBandwidth(other as u32)),
    })
}

/// Standard normal-CP parameters for a bandwidth.
pub fn fft_params(n_dl_rb: u16) -> Result<FftParams> {
    Ok(FftParams::for_fft_size(fft_size_for(n_dl_rb)?, CyclicPrefix::Normal))
}

impl FftParams {
    /// CP lengths scale from the 2048-point reference.
    pub fn for_fft_size(fft_size: usize, cp: CyclicPrefix) -> Self {
        let cp_lengths = match cp {
            CyclicPrefix::Normal => {
                let mut v = vec![144 * fft_size / 2048; 7];
                v[0] = 160 * fft_size / 2048;
                v
            }
            CyclicPrefix::Extended => vec![512 * fft_size / 2048; 6],
        };
        FftParams {
            fft_size,
            sample_rate_hz: fft_size as u32 * SUBCARRIER_SPACING_HZ,
            cp_lengths,
        }
    }

    /// Parameters implied by a capture rate; the rate must be one of the
    /// standard `fft_size * 15 kHz` values.
    pub fn from_sample_rate(rate_hz: f64, cp: CyclicPrefix) -> Result<Self> {
        let size = rate_hz / SUBCARRIER_SPACING_HZ as f64;
        let rounded = size.round() as usize;
        if (size - rounded as f64).abs() > 1e-6 || ![128, 256, 512, 1024, 1536, 2048].contains(&rounded)
        {
            return Err(Error::InvalidConfig(format!(
                "sample rate {rate_hz} Hz is not a standard LTE rate"
            )));
        }
        Ok(Self::for_fft_size(rounded, cp))
    }

    pub fn symbols_per_slot(&self) -> usize {
        self.cp_lengths.len()
    }

    pub fn symbols_per_subframe(&self) -> usize {
        2 * self.cp_lengths.len()
    }

    pub fn slot_len(&self) -> usize {
        self.cp_lengths.iter().map(|cp| cp + self.fft_size).sum()
    }

    pub fn subframe_len(&self) -> usize {
        2 * self.slot_len()
    }

    pub fn frame_len(&self) -> usize {
        SUBFRAMES_PER_FRAME * self.subframe_len()
    }

    pub fn cp_len(&self, symbol_in_subframe: usize) -> usize {
        self.cp_lengths[symbol_in_subframe % self.symbols_per_slot()]
    }

    /// Sample offset, relative to the subframe start, where the CP of
    /// `symbol` begins.
    pub fn symbol_start(&self, symbol: usize) -> usize {
        let per_slot = self.symbols_per_slot();
        let slot = symbol / per_slot;
        let in_slot = symbol % per_slot;
        slot * self.slot_len()
            + self.cp_lengths[..in_slot].iter().map(|cp| cp + self.fft_size).sum::<usize>()
    }

    /// Sample offset of the first sample after the CP of `symbol`.
    pub fn useful_start(&self, symbol: usize) -> usize {
        self.symbol_start(symbol) + self.cp_len(symbol)
    }
}

/// OFDM symbols of a subframe that carry CRS for `port`.
pub fn crs_symbols(cp: CyclicPrefix, port: usize) -> Vec<usize> {
    let per_slot = cp.symbols_per_slot();
    let in_slot: Vec<usize> = if port < 2 { vec![0, per_slot - 3] } else { vec![1] };
    (0..2).flat_map(|slot| in_slot.iter().map(move |l| slot * per_slot + l)).collect()
}

/// Frequency offset `v` of the CRS lattice for a port on a symbol.
fn crs_v(cp: CyclicPrefix, port: usize, symbol: usize) -> usize {
    let per_slot = cp.symbols_per_slot();
    let slot = symbol / per_slot;
    let l = symbol % per_slot;
    match port {
        0 => {
            if l == 0 {
                0
            } else {
                3
            }
        }
        1 => {
            if l == 0 {
                3
            } else {
                0
            }
        }
        2 => 3 * (slot % 2),
        _ => 3 + 3 * (slot % 2),
    }
}

/// CRS resource elements of one port in one subframe, ordered by symbol then
/// subcarrier. Since slot parity is all that matters the lattice is the same
/// in every subframe.
pub fn crs_positions(cfg: &CellConfig, port: usize, _subframe: usize) -> Result<Vec<RePosition>> {
    if port >= cfg.cell_ref_ports() {
        return Err(Error::InvalidPort { port, ports: cfg.cell_ref_ports() });
    }
    Ok(crs_lattice(cfg, port))
}

fn crs_lattice(cfg: &CellConfig, port: usize) -> Vec<RePosition> {
    let shift = (cfg.pci() % 6) as usize;
    let n_pilots = 2 * cfg.n_dl_rb() as usize;
    let mut out = Vec::new();
    for l in crs_symbols(cfg.cyclic_prefix(), port) {
        let v = crs_v(cfg.cyclic_prefix(), port, l);
        for m in 0..n_pilots {
            out.push(RePosition::new(6 * m + (v + shift) % 6, l));
        }
    }
    out
}

/// CRS positions paired with their QPSK pilot values.
pub fn crs_pilots(
    cfg: &CellConfig,
    port: usize,
    subframe: usize,
) -> Result<Vec<(RePosition, Complex64)>> {
    let positions = crs_positions(cfg, port, subframe)?;
    let per_slot = cfg.cyclic_prefix().symbols_per_slot();
    let n_cp = match cfg.cyclic_prefix() {
        CyclicPrefix::Normal => 1u32,
        CyclicPrefix::Extended => 0,
    };
    let pci = cfg.pci() as u32;
    let n_pilots = 2 * cfg.n_dl_rb() as usize;
    let m_offset = MAX_DL_RB - cfg.n_dl_rb() as usize;
    let scale = std::f64::consts::FRAC_1_SQRT_2;

    let mut out = Vec::with_capacity(positions.len());
    for chunk in positions.chunks(n_pilots) {
        let l_sub = chunk[0].symbol;
        let ns = 2 * subframe as u32 + (l_sub / per_slot) as u32;
        let l = (l_sub % per_slot) as u32;
        let c_init = (1u32 << 10) * (7 * (ns + 1) + l + 1) * (2 * pci + 1) + 2 * pci + n_cp;
        let c = gold_sequence(c_init, 0, 4 * MAX_DL_RB);
        for (m, pos) in chunk.iter().enumerate() {
            let mp = m + m_offset;
            let re = scale * (1.0 - 2.0 * c[2 * mp] as f64);
            let im = scale * (1.0 - 2.0 * c[2 * mp + 1] as f64);
            out.push((*pos, Complex64::new(re, im)));
        }
    }
    Ok(out)
}

/// Every RE carrying CRS for any configured port.
pub fn crs_mask(cfg: &CellConfig) -> ReMask {
    let mut mask = ReMask::for_config(cfg);
    for port in 0..cfg.cell_ref_ports() {
        for p in crs_lattice(cfg, port) {
            mask.set(p);
        }
    }
    mask
}

/// Whether `subcarrier` on `symbol` collides with the CRS of `port`,
/// whether or not that port is configured.
pub fn is_crs_of_port(cfg: &CellConfig, port: usize, p: RePosition) -> bool {
    if !crs_symbols(cfg.cyclic_prefix(), port).contains(&p.symbol) {
        return false;
    }
    let v = crs_v(cfg.cyclic_prefix(), port, p.symbol);
    p.subcarrier % 6 == (v + (cfg.pci() % 6) as usize) % 6
}
