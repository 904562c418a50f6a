//! Part-bit / full-bit switching with byte-accurate paging accounting.
//!
//! A model launches in part-bit mode by reading only the high payloads.
//! `upgrade` pages the low payloads in and materializes the recomposed
//! `n`-bit weights; `downgrade` releases both again. Transitions take
//! `&mut self`, so they can never overlap inference that borrows the state.

use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nesting::recompose;
use crate::packed::PackedTensor;
use crate::quantizer::{IntTensor, QuantizedTensor};
use crate::store::{self, Manifest, PartBitModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    PartBit,
    FullBit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Upgrade,
    Downgrade,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transition {
    pub direction: Direction,
    pub bytes_paged_in: u64,
    pub bytes_paged_out: u64,
    #[serde(serialize_with = "unix_secs")]
    pub timestamp: SystemTime,
}

impl Transition {
    pub fn total(&self) -> u64 {
        self.bytes_paged_in + self.bytes_paged_out
    }
}

fn unix_secs<S: serde::Serializer>(t: &SystemTime, s: S) -> std::result::Result<S::Ok, S::Error> {
    let secs = t
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    s.serialize_f64(secs)
}

#[derive(Debug)]
pub struct SwitchState {
    path: PathBuf,
    mode: Mode,
    part: PartBitModel,
    high: Vec<IntTensor>,
    low: Option<Vec<PackedTensor>>,
    full: Option<Vec<IntTensor>>,
    log: Vec<Transition>,
    launch_bytes: u64,
}

impl SwitchState {
    /// Opens a `.nqt` file in part-bit mode, reading only its high payloads.
    pub fn launch_part_bit(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let part = store::load_part_bit(&path)?;
        if !part.manifest.is_nested() {
            return Err(Error::InvalidModel("standalone model has no part-bit instance".into()));
        }
        let high = part
            .layers
            .iter()
            .map(|l| {
                Ok(IntTensor {
                    shape: l.shape.clone(),
                    bits: part.manifest.h,
                    data: l.high.unpack()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            launch_bytes: part.bytes_read,
            path,
            mode: Mode::PartBit,
            part,
            high,
            low: None,
            full: None,
            log: Vec::new(),
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn manifest(&self) -> &Manifest {
        &self.part.manifest
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn log(&self) -> &[Transition] {
        &self.log
    }

    /// Bytes read from storage when launching.
    pub fn launch_bytes(&self) -> u64 {
        self.launch_bytes
    }

    /// Bytes a transition pages in or out: the packed low payloads.
    pub fn low_bytes(&self) -> u64 {
        self.part.low_bytes()
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.part.layers.iter().map(|l| l.name.as_str())
    }

    /// Resident weights for inference in the current mode, with their scales.
    pub fn weights(&self) -> Vec<(&str, QuantizedTensor)> {
        let l = self.part.manifest.l();
        self.part
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let q = match &self.full {
                    Some(full) => QuantizedTensor::per_tensor(full[i].clone(), layer.scale),
                    None => QuantizedTensor::per_tensor(
                        self.high[i].clone(),
                        layer.scale * (1u32 << l) as f32,
                    ),
                };
                (layer.name.as_str(), q)
            })
            .collect()
    }

    pub fn resident_high(&self) -> &[IntTensor] {
        &self.high
    }

    pub fn resident_low(&self) -> Option<&[PackedTensor]> {
        self.low.as_deref()
    }

    pub fn resident_full(&self) -> Option<&[IntTensor]> {
        self.full.as_deref()
    }

    /// Pages in the low payloads and recomposes the full-bit weights.
    ///
    /// Nothing is committed unless every layer loads and recomposes, so a
    /// failure leaves the part-bit state untouched.
    pub fn upgrade(&mut self) -> Result<&Transition> {
        if self.mode != Mode::PartBit {
            return Err(Error::InvalidTransition("already in full-bit mode".into()));
        }
        if !self.part.has_low_sections() {
            return Err(Error::UpgradeFailed("file carries no low-bit section".into()));
        }
        let man = &self.part.manifest;
        let bits = man.l() as u8 + 1;
        let mut lows = Vec::with_capacity(self.part.layers.len());
        let mut full = Vec::with_capacity(self.part.layers.len());
        let mut paged_in = 0;
        for ((layer, section), high) in self.part.layers.iter().zip(&self.part.low_sections).zip(&self.high) {
            let low = store::read_low_section(&self.path, *section, bits, &layer.shape)
                .map_err(|e| Error::UpgradeFailed(format!("layer `{}`: {e}", layer.name)))?;
            let low_ints = IntTensor {
                shape: layer.shape.clone(),
                bits,
                data: low.unpack()?,
            };
            let recomposed = recompose(high, &low_ints, man.l(), man.n)
                .map_err(|e| Error::UpgradeFailed(format!("layer `{}`: {e}", layer.name)))?;
            paged_in += low.byte_size();
            lows.push(low);
            full.push(recomposed);
        }
        self.low = Some(lows);
        self.full = Some(full);
        self.mode = Mode::FullBit;
        self.log.push(Transition {
            direction: Direction::Upgrade,
            bytes_paged_in: paged_in,
            bytes_paged_out: 0,
            timestamp: SystemTime::now(),
        });
        Ok(self.log.last().expect("just pushed"))
    }

    /// Releases the low payloads and recomposed weights.
    pub fn downgrade(&mut self) -> Result<&Transition> {
        if self.mode != Mode::FullBit {
            return Err(Error::InvalidTransition("already in part-bit mode".into()));
        }
        let paged_out = self
            .low
            .take()
            .map(|l| l.iter().map(PackedTensor::byte_size).sum())
            .unwrap_or(0);
        self.full = None;
        self.mode = Mode::PartBit;
        self.log.push(Transition {
            direction: Direction::Downgrade,
            bytes_paged_in: 0,
            bytes_paged_out: paged_out,
            timestamp: SystemTime::now(),
        });
        Ok(self.log.last().expect("just pushed"))
    }

    /// Cumulative `(paged_in, paged_out)` over the whole log.
    pub fn totals(&self) -> (u64, u64) {
        self.log
            .iter()
            .fold((0, 0), |(i, o), t| (i + t.bytes_paged_in, o + t.bytes_paged_out))
    }
}

/// Weight bytes of a standalone packed model.
pub fn standalone_weight_bytes(path: impl AsRef<Path>) -> Result<u64> {
    let part = store::load_part_bit(path)?;
    Ok(part.layers.iter().map(|l| l.high.byte_size()).sum::<u64>() + part.low_bytes())
}

/// Switching between two separately stored models: the entering model is
/// paged in whole and the leaving model paged out whole.
pub fn diverse_switch_baseline(
    int_n_path: impl AsRef<Path>,
    int_h_path: impl AsRef<Path>,
    direction: Direction,
) -> Result<Transition> {
    let n_bytes = standalone_weight_bytes(int_n_path)?;
    let h_bytes = standalone_weight_bytes(int_h_path)?;
    let (bytes_paged_in, bytes_paged_out) = match direction {
        Direction::Upgrade => (n_bytes, h_bytes),
        Direction::Downgrade => (h_bytes, n_bytes),
    };
    Ok(Transition {
        direction,
        bytes_paged_in,
        bytes_paged_out,
        timestamp: SystemTime::now(),
    })
}
