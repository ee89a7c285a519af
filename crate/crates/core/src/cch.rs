//! Control region: PCFICH, PHICH reservation, REG layout and the PDCCH
//! quadruplet interleaver that turns the first `cfi` symbols into CCEs.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerology::{is_crs_of_port, CellConfig, PhichDuration, RePosition, ResourceGrid};
use crate::ofdm::{
    detect_symbols, map_symbols, qpsk_modulate, qpsk_soft_demod, ChannelEstimate, TxScheme,
};
use crate::seqfec::{gold_sequence, subblock_interleave_pattern};

pub const REGS_PER_CCE: usize = 9;
pub const BITS_PER_CCE: usize = 72;
pub const PCFICH_CONFIDENCE_MIN: f64 = 0.5;

/// Control format indicator. Values 1 to 3 are decoded; 4 only exists in
/// the codeword table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cfi(u8);

impl Cfi {
    pub fn new(value: u8) -> Result<Self> {
        if !(1..=3).contains(&value) {
            return Err(Error::InvalidConfig(format!("CFI {value} unsupported")));
        }
        Ok(Cfi(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

/// 32-bit PCFICH codeword for CFI 1..=4.
pub fn cfi_codeword(cfi: u8) -> [u8; 32] {
    let pattern: [u8; 3] = match cfi {
        1 => [0, 1, 1],
        2 => [1, 0, 1],
        3 => [1, 1, 0],
        _ => [0, 0, 0],
    };
    std::array::from_fn(|i| pattern[i % 3])
}

fn pcfich_c_init(pci: u16, subframe: usize) -> u32 {
    (((subframe as u32 + 1) * (2 * pci as u32 + 1)) << 9) + pci as u32
}

pub fn pdcch_c_init(pci: u16, subframe: usize) -> u32 {
    ((subframe as u32) << 9) + pci as u32
}

/// One resource-element group: four usable REs on one symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reg {
    pub symbol: usize,
    /// First subcarrier of the group span, reserved REs included.
    pub k0: usize,
    pub res: [RePosition; 4],
}

/// Layout of the control region for one cell and CFI. Independent of the
/// subframe; only scrambling changes between subframes.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlLayout {
    cfg: CellConfig,
    cfi: u8,
    regs: Vec<Reg>,
    pcfich: [usize; 4],
    phich: Vec<usize>,
    /// PDCCH REG for each quadruplet of the pre-interleaver stream.
    pdcch: Vec<usize>,
    num_cces: usize,
}

fn symbol_regs(cfg: &CellConfig, l: usize) -> Vec<Reg> {
    let (span, reserved_ports): (usize, &[usize]) = match l {
        0 => (6, &[0, 1]),
        1 if cfg.cell_ref_ports() == 4 => (6, &[2, 3]),
        _ => (4, &[]),
    };
    (0..cfg.n_subcarriers() / span)
        .map(|g| {
            let k0 = g * span;
            let usable: Vec<RePosition> = (k0..k0 + span)
                .map(|k| RePosition::new(k, l))
                .filter(|p| !reserved_ports.iter().any(|port| is_crs_of_port(cfg, *port, *p)))
                .collect();
            Reg { symbol: l, k0, res: usable.try_into().expect("four usable REs per group") }
        })
        .collect()
}

impl ControlLayout {
    pub fn new(cfg: &CellConfig, cfi: Cfi) -> Result<Self> {
        let cfi = cfi.value();
        let n_rb = cfg.n_dl_rb() as usize;
        let mut regs = Vec::new();
        let mut first_of_symbol = Vec::new();
        for l in 0..cfi as usize {
            first_of_symbol.push(regs.len());
            regs.extend(symbol_regs(cfg, l));
        }
        let sym0_len = first_of_symbol.get(1).copied().unwrap_or(regs.len());

        let kbar = 6 * (cfg.pci() as usize % (2 * n_rb));
        let pcfich: [usize; 4] = std::array::from_fn(|i| {
            let k = (kbar + (i * n_rb / 2) * 6) % cfg.n_subcarriers();
            k / 6
        });

        let phich = phich_regs(cfg, cfi, &regs, &first_of_symbol, sym0_len, &pcfich)?;

        let mut taken = vec![false; regs.len()];
        pcfich.iter().chain(&phich).for_each(|r| taken[*r] = true);
        let mut mapped: Vec<usize> = (0..regs.len()).filter(|r| !taken[*r]).collect();
        mapped.sort_by_key(|r| (regs[*r].k0, regs[*r].symbol));

        let m_quad = mapped.len();
        let num_cces = m_quad / REGS_PER_CCE;
        if num_cces == 0 {
            return Err(Error::ControlRegionTooSmall);
        }
        let perm: Vec<usize> = subblock_interleave_pattern(m_quad).into_iter().flatten().collect();
        let mut pdcch = vec![0; m_quad];
        for (i, reg) in mapped.iter().enumerate() {
            pdcch[perm[(i + cfg.pci() as usize) % m_quad]] = *reg;
        }
        Ok(ControlLayout { cfg: *cfg, cfi, regs, pcfich, phich, pdcch, num_cces })
    }

    pub fn cfg(&self) -> &CellConfig {
        &self.cfg
    }

    pub fn cfi(&self) -> u8 {
        self.cfi
    }

    pub fn num_cces(&self) -> usize {
        self.num_cces
    }

    pub fn num_pdcch_regs(&self) -> usize {
        self.pdcch.len()
    }

    pub fn regs(&self) -> &[Reg] {
        &self.regs
    }

    pub fn pcfich_positions(&self) -> Vec<RePosition> {
        self.pcfich.iter().flat_map(|r| self.regs[*r].res).collect()
    }

    pub fn phich_positions(&self) -> Vec<RePosition> {
        self.phich.iter().flat_map(|r| self.regs[*r].res).collect()
    }

    /// REs of the first `n_cces` CCEs in stream order.
    pub fn cce_positions(&self, n_cces: usize) -> Vec<RePosition> {
        self.pdcch[..n_cces * REGS_PER_CCE]
            .iter()
            .flat_map(|r| self.regs[*r].res)
            .collect()
    }

    /// Every PDCCH RE, remainder REGs included.
    pub fn pdcch_positions(&self) -> Vec<RePosition> {
        self.pdcch.iter().flat_map(|r| self.regs[*r].res).collect()
    }
}

fn phich_regs(
    cfg: &CellConfig,
    cfi: u8,
    regs: &[Reg],
    first_of_symbol: &[usize],
    sym0_len: usize,
    pcfich: &[usize; 4],
) -> Result<Vec<usize>> {
    let (num, den) = cfg.phich_ng().ratio();
    let units = (num as usize * cfg.n_dl_rb() as usize).div_ceil(8 * den as usize);
    let extended = cfg.phich_duration() == PhichDuration::Extended;
    if extended && cfi < 3 {
        return Err(Error::ControlRegionTooSmall);
    }
    // Free REGs per symbol, in frequency order.
    let free: Vec<Vec<usize>> = (0..if extended { 3 } else { 1 })
        .map(|l| {
            let start = first_of_symbol[l];
            let end = first_of_symbol.get(l + 1).copied().unwrap_or(regs.len());
            let end = if l == 0 { sym0_len } else { end };
            (start..end).filter(|r| !pcfich.contains(r)).collect()
        })
        .collect();
    let n0 = free[0].len();
    let pci = cfg.pci() as usize;
    let mut out = Vec::with_capacity(3 * units);
    for m in 0..units {
        for i in 0..3 {
            let l = if extended { i } else { 0 };
            let ni = free[l].len();
            let idx = (pci * ni / n0 + m + i * ni / 3) % ni;
            out.push(free[l][idx]);
        }
    }
    let mut sorted = out.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != out.len() {
        return Err(Error::ControlRegionTooSmall);
    }
    Ok(out)
}

/// PCFICH symbols and their REs in mapping order.
pub fn pcfich_encode(cfi: Cfi, cfg: &CellConfig, subframe: usize) -> Result<(Vec<Complex64>, Vec<RePosition>)> {
    let c = gold_sequence(pcfich_c_init(cfg.pci(), subframe), 0, 32);
    let bits: Vec<u8> = cfi_codeword(cfi.value()).iter().zip(&c).map(|(a, b)| a ^ b).collect();
    Ok((qpsk_modulate(&bits)?, pcfich_positions(cfg)))
}

/// PCFICH REs of a cell; they depend only on the PCI and bandwidth.
pub fn pcfich_positions(cfg: &CellConfig) -> Vec<RePosition> {
    let n_rb = cfg.n_dl_rb() as usize;
    let kbar = 6 * (cfg.pci() as usize % (2 * n_rb));
    let regs = symbol_regs(cfg, 0);
    (0..4)
        .flat_map(|i| regs[((kbar + (i * n_rb / 2) * 6) % cfg.n_subcarriers()) / 6].res)
        .collect()
}

pub fn pcfich_map(ports: &mut [ResourceGrid], cfi: Cfi, cfg: &CellConfig, subframe: usize) -> Result<()> {
    let (symbols, positions) = pcfich_encode(cfi, cfg, subframe)?;
    map_symbols(ports, &positions, &symbols, TxScheme::for_ports(cfg.cell_ref_ports()));
    Ok(())
}

/// Best CFI and its cosine similarity with the received soft bits.
pub fn pcfich_decode(
    grid: &ResourceGrid,
    est: &ChannelEstimate,
    cfg: &CellConfig,
    subframe: usize,
) -> Result<(Cfi, f64)> {
    let symbols = detect_symbols(grid, est, &pcfich_positions(cfg), TxScheme::for_ports(cfg.cell_ref_ports()));
    let llrs = qpsk_soft_demod(&symbols, 1.0);
    let c = gold_sequence(pcfich_c_init(cfg.pci(), subframe), 0, 32);
    let soft: Vec<f64> = llrs.iter().zip(&c).map(|(l, b)| if *b == 1 { -l } else { *l }).collect();
    let norm = soft.iter().map(|v| v * v).sum::<f64>().sqrt() * (32f64).sqrt();
    let (cfi, score) = (1..=3u8)
        .map(|v| {
            let cw = cfi_codeword(v);
            let dot: f64 = soft.iter().zip(&cw).map(|(l, b)| l * (1.0 - 2.0 * *b as f64)).sum();
            (v, if norm > 0.0 { dot / norm } else { 0.0 })
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("three hypotheses");
    if score < PCFICH_CONFIDENCE_MIN {
        return Err(Error::LowConfidence(score));
    }
    Ok((Cfi(cfi), score.clamp(0.0, 1.0)))
}

/// Descrambled soft bits of every complete CCE of one subframe.
#[derive(Debug, Clone, PartialEq)]
pub struct CceSpace {
    pub llrs: Vec<f64>,
    pub num_cces: usize,
    pub subframe: usize,
}

impl CceSpace {
    pub fn cce(&self, n: usize) -> &[f64] {
        &self.llrs[n * BITS_PER_CCE..(n + 1) * BITS_PER_CCE]
    }

    /// Soft bits of the candidate starting at CCE `offset` spanning `level`.
    pub fn candidate(&self, offset: usize, level: usize) -> &[f64] {
        &self.llrs[offset * BITS_PER_CCE..(offset + level) * BITS_PER_CCE]
    }
}

pub fn extract_cces(
    grid: &ResourceGrid,
    est: &ChannelEstimate,
    layout: &ControlLayout,
    subframe: usize,
) -> CceSpace {
    let n = layout.num_cces();
    let symbols = detect_symbols(
        grid,
        est,
        &layout.cce_positions(n),
        TxScheme::for_ports(layout.cfg().cell_ref_ports()),
    );
    let llrs = qpsk_soft_demod(&symbols, est.noise_var);
    let c = gold_sequence(pdcch_c_init(layout.cfg().pci(), subframe), 0, n * BITS_PER_CCE);
    let llrs = llrs.iter().zip(&c).map(|(l, b)| if *b == 1 { -l } else { *l }).collect();
    CceSpace { llrs, num_cces: n, subframe }
}

/// Scramble and map CCE bits (a multiple of 72, starting at CCE 0). REs
/// beyond the supplied CCEs are left untouched.
pub fn embed_cces(
    ports: &mut [ResourceGrid],
    bits: &[u8],
    layout: &ControlLayout,
    subframe: usize,
) -> Result<()> {
    embed_cces_with_c_init(ports, bits, layout, pdcch_c_init(layout.cfg().pci(), subframe))
}

/// [`embed_cces`] with an explicit scrambling seed.
pub fn embed_cces_with_c_init(
    ports: &mut [ResourceGrid],
    bits: &[u8],
    layout: &ControlLayout,
    c_init: u32,
) -> Result<()> {
    if !bits.len().is_multiple_of(BITS_PER_CCE) {
        return Err(Error::LengthMismatch {
            expected: bits.len().div_ceil(BITS_PER_CCE) * BITS_PER_CCE,
            actual: bits.len(),
        });
    }
    let n = bits.len() / BITS_PER_CCE;
    if n > layout.num_cces() {
        return Err(Error::CapacityExceeded { requested: n, available: layout.num_cces() });
    }
    let c = gold_sequence(c_init, 0, bits.len());
    let scrambled: Vec<u8> = bits.iter().zip(&c).map(|(a, b)| a ^ b).collect();
    map_symbols(
        ports,
        &layout.cce_positions(n),
        &qpsk_modulate(&scrambled)?,
        TxScheme::for_ports(layout.cfg().cell_ref_ports()),
    );
    Ok(())
}
