//! Raw IQ recordings: headerless interleaved little-endian `f32` pairs in
//! `<name>.iq` with a `<name>.json` sidecar carrying the sample rate.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IqRecording {
    pub samples: Vec<Complex32>,
    pub sample_rate_hz: f64,
    pub center_freq_hz: Option<f64>,
}

impl IqRecording {
    pub fn new(samples: Vec<Complex32>, sample_rate_hz: f64) -> Self {
        assert!(sample_rate_hz > 0.0, "sample rate must be positive");
        IqRecording { samples, sample_rate_hz, center_freq_hz: None }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.norm_sqr() as f64).sum::<f64>() / self.samples.len() as f64
    }
}

/// Sidecar metadata document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IqMetadata {
    pub sample_rate_hz: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_freq_hz: Option<u64>,
}

/// Where the sample rate of a recording comes from.
#[derive(Debug, Clone)]
pub enum MetaSource {
    /// `<data path with .json extension>`.
    Sidecar,
    Path(PathBuf),
    Inline(IqMetadata),
}

pub fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

pub fn read_iq(path: &Path, meta: MetaSource) -> Result<IqRecording> {
    let meta = match meta {
        MetaSource::Inline(m) => m,
        MetaSource::Sidecar => read_metadata(&sidecar_path(path))?,
        MetaSource::Path(p) => read_metadata(&p)?,
    };
    if meta.sample_rate_hz == 0 {
        return Err(Error::MissingMetadata(format!("{}: sampleRateHz is zero", path.display())));
    }
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::TruncatedFile(bytes.len() as u64));
    }
    let samples = bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex32::new(re, im)
        })
        .collect();
    Ok(IqRecording {
        samples,
        sample_rate_hz: meta.sample_rate_hz as f64,
        center_freq_hz: meta.center_freq_hz.map(|f| f as f64),
    })
}

fn read_metadata(path: &Path) -> Result<IqMetadata> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::MissingMetadata(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::MissingMetadata(format!("{}: {e}", path.display())))
}

/// Write samples to `path` and the sidecar next to it.
pub fn write_iq(rec: &IqRecording, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for s in &rec.samples {
        w.write_all(&s.re.to_le_bytes())?;
        w.write_all(&s.im.to_le_bytes())?;
    }
    w.flush()?;
    let meta = IqMetadata {
        sample_rate_hz: rec.sample_rate_hz.round() as u64,
        center_freq_hz: rec.center_freq_hz.map(|f| f.round() as u64),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}
