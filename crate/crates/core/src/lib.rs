//! Passive LTE downlink control-channel decoder.
//!
//! The receive chain runs cell search ([`sync`]), MIB recovery ([`pbch`]),
//! control-region parsing ([`cch`]), blind PDCCH search with RNTI recovery
//! ([`blindrnti`]) and per-frame load accounting ([`load`]). [`txgen`] is the
//! matching transmitter used to produce recordings with known ground truth.

pub mod blindrnti;
pub mod cch;
pub mod dci;
pub mod error;
pub mod iqio;
pub mod load;
pub mod numerology;
pub mod ofdm;
pub mod pbch;
pub mod pipeline;
pub mod selftest;
pub mod seqfec;
pub mod sync;
pub mod txgen;

pub use error::{Error, Result};
pub use numerology::{CellConfig, CellSettings, CyclicPrefix, RePosition, ResourceGrid};
pub use blindrnti::{DciCandidate, RntiClass};
pub use dci::{DciFormat, LinkDirection, PrbSet};
pub use iqio::IqRecording;
