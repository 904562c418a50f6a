//! `.nqt` container for nested models and the `.nqf` FP32 archive.
//!
//! `.nqt` layout, little-endian throughout:
//!
//! ```text
//! "NQNT" | version u16 | n u8 | h u8 | layer_count u32
//!        | name_len u16 | name | meta_len u16 | meta
//! per layer:
//!   name_len u16 | name | rank u8 | dims u32 * rank | scale f32
//!   | high_len u64 | high words | low_len u64 | low words
//! ```
//!
//! Payload lengths are in bytes. `high` is always written before `low`, so a
//! part-bit reader can seek over every low payload in one forward pass. A low
//! length of zero in a nested model means the low section was never
//! delivered (a part-only file); standalone models (`h == n`) have no low
//! section at all.
//!
//! `.nqf` layout: `"NQF0" | layer_count u32` then per layer
//! `name_len u16 | name | rank u8 | dims u32 * rank | f32 * product(dims)`.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Cursor, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nesting::NestedLayer;
use crate::packed::{self, signed_range, PackedTensor};
use crate::quantizer::FloatTensor;

pub const MAGIC: [u8; 4] = *b"NQNT";
pub const FP_MAGIC: [u8; 4] = *b"NQF0";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub version: u16,
    pub name: String,
    pub n: u8,
    pub h: u8,
    pub layer_count: u32,
    /// Free-form `key=value;...` creation metadata.
    pub metadata: String,
}

impl Manifest {
    pub fn new(name: &str, n: u8, h: u8, layer_count: u32, metadata: &str) -> Self {
        Self {
            version: VERSION,
            name: name.to_string(),
            n,
            h,
            layer_count,
            metadata: metadata.to_string(),
        }
    }

    pub fn is_nested(&self) -> bool {
        self.h < self.n
    }

    pub fn l(&self) -> u32 {
        (self.n - self.h) as u32
    }

    fn validate(&self) -> Result<()> {
        if !(2..=8).contains(&self.n) || !(2..=self.n).contains(&self.h) {
            return Err(Error::InvalidCombination { n: self.n, h: self.h });
        }
        if self.name.len() > u16::MAX as usize || self.metadata.len() > u16::MAX as usize {
            return Err(Error::InvalidModel("manifest strings too long".into()));
        }
        Ok(())
    }

    fn encoded_len(&self) -> u64 {
        16 + self.name.len() as u64 + self.metadata.len() as u64
    }

    fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.push(self.n);
        out.push(self.h);
        out.extend_from_slice(&self.layer_count.to_le_bytes());
        put_str(out, &self.name);
        put_str(out, &self.metadata);
    }
}

/// A nested model: manifest plus ordered layers sharing `(n, h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedModel {
    pub manifest: Manifest,
    pub layers: Vec<NestedLayer>,
}

impl NestedModel {
    pub fn new(manifest: Manifest, layers: Vec<NestedLayer>) -> Result<Self> {
        let m = Self { manifest, layers };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let man = &self.manifest;
        man.validate()?;
        if man.layer_count as usize != self.layers.len() {
            return Err(Error::InvalidModel(format!(
                "manifest lists {} layers, model has {}",
                man.layer_count,
                self.layers.len()
            )));
        }
        let mut seen = HashSet::new();
        for layer in &self.layers {
            if !seen.insert(layer.name.as_str()) {
                return Err(Error::InvalidModel(format!("duplicate layer name `{}`", layer.name)));
            }
            if layer.n != man.n || layer.h != man.h {
                return Err(Error::InvalidModel(format!(
                    "layer `{}` is INT({}|{}), manifest says INT({}|{})",
                    layer.name, layer.n, layer.h, man.n, man.h
                )));
            }
            if !(layer.scale > 0.0) || !layer.scale.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "layer `{}` has non-positive scale {}",
                    layer.name, layer.scale
                )));
            }
            if layer.name.len() > u16::MAX as usize || layer.shape.len() > u8::MAX as usize {
                return Err(Error::InvalidModel(format!("layer `{}` header too large", layer.name)));
            }
            if layer.high.bits() != man.h || layer.high.shape() != layer.shape.as_slice() {
                return Err(Error::InvalidModel(format!("layer `{}` high part malformed", layer.name)));
            }
            match (&layer.low, man.is_nested()) {
                (Some(low), true) => {
                    if low.bits() as u32 != man.l() + 1 || low.shape() != layer.shape.as_slice() {
                        return Err(Error::InvalidModel(format!(
                            "layer `{}` low part malformed",
                            layer.name
                        )));
                    }
                }
                (None, false) => {}
                (None, true) => return Err(Error::LowSectionMissing),
                (Some(_), false) => {
                    return Err(Error::InvalidModel(format!(
                        "standalone layer `{}` carries a low part",
                        layer.name
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> u64 {
        self.layers.iter().map(|l| l.param_count() as u64).sum()
    }

    pub fn layer(&self, name: &str) -> Option<&NestedLayer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.manifest.write_to(&mut out);
        for layer in &self.layers {
            write_layer_meta(&mut out, &layer.name, &layer.shape, layer.scale);
            put_payload(&mut out, Some(&layer.high));
            if self.manifest.is_nested() {
                put_payload(&mut out, layer.low.as_ref());
            } else {
                put_payload(&mut out, None);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let len = bytes.len() as u64;
        let parsed = parse(&mut Cursor::new(bytes), len, true, true)?;
        parsed.into_full()
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn write_layer_meta(out: &mut Vec<u8>, name: &str, shape: &[usize], scale: f32) {
    put_str(out, name);
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&scale.to_le_bytes());
}

fn put_payload(out: &mut Vec<u8>, p: Option<&PackedTensor>) {
    match p {
        Some(p) => {
            out.extend_from_slice(&p.byte_size().to_le_bytes());
            out.extend_from_slice(&p.to_le_bytes());
        }
        None => out.extend_from_slice(&0u64.to_le_bytes()),
    }
}

/// Writes the model and returns the number of bytes written.
pub fn save(m: &NestedModel, path: impl AsRef<Path>) -> Result<u64> {
    m.validate()?;
    let bytes = m.to_bytes();
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(bytes.len() as u64)
}

pub fn load(path: impl AsRef<Path>) -> Result<NestedModel> {
    let f = File::open(path)?;
    let len = f.metadata()?.len();
    parse(&mut BufReader::new(f), len, true, true)?.into_full()
}

/// Location of a payload within the file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Section {
    /// Offset of the payload words (after the length field).
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartBitLayer {
    pub name: String,
    pub shape: Vec<usize>,
    pub scale: f32,
    pub high: PackedTensor,
}

/// The part-bit view of a `.nqt` file: high weights and scales only.
#[derive(Debug, Clone, PartialEq)]
pub struct PartBitModel {
    pub manifest: Manifest,
    pub layers: Vec<PartBitLayer>,
    /// Where each layer's low payload sits in the file; `len == 0` if absent.
    pub low_sections: Vec<Section>,
    /// Bytes actually read from storage.
    pub bytes_read: u64,
}

impl PartBitModel {
    pub fn has_low_sections(&self) -> bool {
        self.manifest.is_nested() && self.low_sections.iter().all(|s| s.len > 0)
    }

    pub fn low_bytes(&self) -> u64 {
        self.low_sections.iter().map(|s| s.len).sum()
    }

    /// Serializes as a part-only `.nqt` (every low length zero).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.manifest.write_to(&mut out);
        for layer in &self.layers {
            write_layer_meta(&mut out, &layer.name, &layer.shape, layer.scale);
            put_payload(&mut out, Some(&layer.high));
            put_payload(&mut out, None);
        }
        out
    }

    /// Joins received low payloads with the held high parts into a full model.
    pub fn with_low(&self, lows: Vec<PackedTensor>) -> Result<NestedModel> {
        if lows.len() != self.layers.len() {
            return Err(Error::InvalidModel(format!(
                "{} low payloads for {} layers",
                lows.len(),
                self.layers.len()
            )));
        }
        let layers = self
            .layers
            .iter()
            .zip(lows)
            .map(|(p, low)| NestedLayer {
                name: p.name.clone(),
                shape: p.shape.clone(),
                n: self.manifest.n,
                h: self.manifest.h,
                scale: p.scale,
                high: p.high.clone(),
                low: Some(low),
            })
            .collect::<Vec<_>>();
        let m = NestedModel::new(self.manifest.clone(), layers)?;
        check_recompose_ranges(&m)?;
        Ok(m)
    }
}

/// Reads manifest and high payloads only, seeking past low payloads.
pub fn load_part_bit(path: impl AsRef<Path>) -> Result<PartBitModel> {
    let f = File::open(path)?;
    let len = f.metadata()?.len();
    Ok(parse(&mut BufReader::new(f), len, false, true)?.part)
}

pub fn part_bit_from_bytes(bytes: &[u8]) -> Result<PartBitModel> {
    Ok(parse(&mut Cursor::new(bytes), bytes.len() as u64, false, true)?.part)
}

/// Splits a `.nqt` image into its part stream and its low stream.
///
/// The part stream is the file with every layer's `low_len | low words`
/// removed; the low stream is exactly those removed fields, in layer order.
/// Their lengths add up to the file length.
pub fn split_low_stream(bytes: &[u8]) -> Result<(Vec<u8>, Vec<u8>)> {
    let part = part_bit_from_bytes(bytes)?;
    let mut high = Vec::with_capacity(bytes.len());
    let mut low = Vec::new();
    let mut at = 0usize;
    for s in &part.low_sections {
        let start = s.offset as usize - 8;
        let end = (s.offset + s.len) as usize;
        high.extend_from_slice(&bytes[at..start]);
        low.extend_from_slice(&bytes[start..end]);
        at = end;
    }
    high.extend_from_slice(&bytes[at..]);
    Ok((high, low))
}

/// Parses a part stream produced by [`split_low_stream`].
pub fn part_bit_from_stream(bytes: &[u8]) -> Result<PartBitModel> {
    Ok(parse(&mut Cursor::new(bytes), bytes.len() as u64, false, false)?.part)
}

impl PartBitModel {
    /// Decodes a low stream against this model's layer shapes.
    pub fn lows_from_stream(&self, bytes: &[u8]) -> Result<Vec<PackedTensor>> {
        if !self.manifest.is_nested() {
            return Err(Error::InvalidModel("standalone model has no low section".into()));
        }
        let bits = self.manifest.l() as u8 + 1;
        let mut cur = Cursor::new(bytes);
        let mut r = Reader {
            inner: &mut cur,
            pos: 0,
            len: bytes.len() as u64,
            read: 0,
        };
        let mut lows = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let low_len = r.u64()?;
            let expect = packed::packed_byte_size(layer.high.len() as u64, bits)?;
            if low_len != expect {
                return Err(r.format_err(format!(
                    "layer `{}`: low payload is {low_len} bytes, expected {expect}",
                    layer.name
                )));
            }
            let words = words_from_le(&r.bytes(low_len)?);
            lows.push(PackedTensor::from_words(words, bits, &layer.shape).map_err(|e| e.in_layer(&layer.name))?);
        }
        if r.pos != r.len {
            return Err(r.format_err(format!("{} trailing bytes", r.len - r.pos)));
        }
        Ok(lows)
    }
}

/// Reads the low payload described by `section` for a layer of `shape`.
pub fn read_low_section(
    path: impl AsRef<Path>,
    section: Section,
    bits: u8,
    shape: &[usize],
) -> Result<PackedTensor> {
    let mut f = File::open(path)?;
    let file_len = f.metadata()?.len();
    if section.offset + section.len > file_len {
        return Err(Error::Truncated {
            expected: section.offset + section.len,
            actual: file_len,
        });
    }
    f.seek(SeekFrom::Start(section.offset))?;
    let mut buf = vec![0u8; section.len as usize];
    f.read_exact(&mut buf)?;
    PackedTensor::from_words(words_from_le(&buf), bits, shape)
}

fn words_from_le(buf: &[u8]) -> Vec<u64> {
    buf.chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

struct Parsed {
    part: PartBitModel,
    lows: Option<Vec<Option<PackedTensor>>>,
}

impl Parsed {
    fn into_full(self) -> Result<NestedModel> {
        let lows = self.lows.expect("full parse keeps low payloads");
        let nested = self.part.manifest.is_nested();
        if nested && lows.iter().any(Option::is_none) {
            return Err(Error::LowSectionMissing);
        }
        let man = self.part.manifest;
        let layers = self
            .part
            .layers
            .into_iter()
            .zip(lows)
            .map(|(p, low)| NestedLayer {
                name: p.name,
                shape: p.shape,
                n: man.n,
                h: man.h,
                scale: p.scale,
                high: p.high,
                low,
            })
            .collect();
        let m = NestedModel::new(man, layers)?;
        check_recompose_ranges(&m)?;
        Ok(m)
    }
}

fn check_recompose_ranges(m: &NestedModel) -> Result<()> {
    if !m.manifest.is_nested() {
        return Ok(());
    }
    let l = m.manifest.l();
    let (lo, hi) = signed_range(m.manifest.n);
    for layer in &m.layers {
        let high = layer.high.unpack()?;
        let low = layer.low.as_ref().ok_or(Error::LowSectionMissing)?.unpack()?;
        if let Some((i, v)) = high
            .iter()
            .zip(&low)
            .map(|(&a, &b)| ((a as i64) << l) + b as i64)
            .enumerate()
            .find(|(_, v)| *v < lo || *v > hi)
        {
            return Err(Error::RangeViolation {
                layer: layer.name.clone(),
                detail: format!("element {i} recomposes to {v}, outside INT{}", m.manifest.n),
            });
        }
    }
    Ok(())
}

struct Reader<'a, R> {
    inner: &'a mut R,
    pos: u64,
    len: u64,
    read: u64,
}

impl<R: Read + Seek> Reader<'_, R> {
    fn need(&self, n: u64) -> Result<()> {
        if self.pos + n > self.len {
            Err(Error::Truncated {
                expected: self.pos + n,
                actual: self.len,
            })
        } else {
            Ok(())
        }
    }

    fn bytes(&mut self, n: u64) -> Result<Vec<u8>> {
        self.need(n)?;
        let mut buf = vec![0u8; n as usize];
        self.inner.read_exact(&mut buf)?;
        self.pos += n;
        self.read += n;
        Ok(buf)
    }

    fn skip(&mut self, n: u64) -> Result<()> {
        self.need(n)?;
        self.inner.seek(SeekFrom::Current(n as i64))?;
        self.pos += n;
        Ok(())
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.bytes(N as u64)?.try_into().expect("exact length"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let at = self.pos;
        let n = self.u16()? as u64;
        String::from_utf8(self.bytes(n)?).map_err(|_| Error::Format {
            offset: at,
            reason: "string is not UTF-8".into(),
        })
    }

    fn format_err(&self, reason: String) -> Error {
        Error::Format {
            offset: self.pos,
            reason,
        }
    }
}

/// `low_fields == false` reads a stream whose layers carry no low length or
/// payload at all (see [`split_low_stream`]).
fn parse<R: Read + Seek>(src: &mut R, len: u64, keep_low: bool, low_fields: bool) -> Result<Parsed> {
    let mut r = Reader {
        inner: src,
        pos: 0,
        len,
        read: 0,
    };
    let magic: [u8; 4] = r.array()?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            offset: 0,
            expected: MAGIC,
            found: magic,
        });
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }
    let n = r.u8()?;
    let h = r.u8()?;
    let layer_count = r.u32()?;
    let name = r.string()?;
    let metadata = r.string()?;
    let manifest = Manifest {
        version,
        name,
        n,
        h,
        layer_count,
        metadata,
    };
    manifest.validate()?;
    let low_bits = if manifest.is_nested() {
        Some(manifest.l() as u8 + 1)
    } else {
        None
    };

    let mut layers = Vec::new();
    let mut low_sections = Vec::new();
    let mut lows = Vec::new();
    for _ in 0..layer_count {
        let lname = r.string()?;
        let rank = r.u8()?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let scale = f32::from_le_bytes(r.array()?);
        let count: usize = shape.iter().product();

        let high_len = r.u64()?;
        let expect_high = packed::packed_byte_size(count as u64, h)?;
        if high_len != expect_high {
            return Err(r.format_err(format!(
                "layer `{lname}`: high payload is {high_len} bytes, expected {expect_high}"
            )));
        }
        let high = PackedTensor::from_words(words_from_le(&r.bytes(high_len)?), h, &shape)
            .map_err(|e| e.in_layer(&lname))?;

        let low_len = if low_fields { r.u64()? } else { 0 };
        let offset = r.pos;
        match low_bits {
            None if low_len != 0 => {
                return Err(r.format_err(format!(
                    "layer `{lname}`: standalone model with a {low_len}-byte low payload"
                )))
            }
            None => lows.push(None),
            Some(bits) => {
                let expect_low = packed::packed_byte_size(count as u64, bits)?;
                if low_len != 0 && low_len != expect_low {
                    return Err(r.format_err(format!(
                        "layer `{lname}`: low payload is {low_len} bytes, expected {expect_low}"
                    )));
                }
                if keep_low && low_len > 0 {
                    let low = PackedTensor::from_words(words_from_le(&r.bytes(low_len)?), bits, &shape)
                        .map_err(|e| e.in_layer(&lname))?;
                    lows.push(Some(low));
                } else {
                    r.skip(low_len)?;
                    lows.push(None);
                }
            }
        }
        low_sections.push(Section { offset, len: low_len });
        layers.push(PartBitLayer {
            name: lname,
            shape,
            scale,
            high,
        });
    }
    if r.pos != len {
        return Err(r.format_err(format!("{} trailing bytes", len - r.pos)));
    }
    let mut seen = HashSet::new();
    for l in &layers {
        if !seen.insert(l.name.as_str()) {
            return Err(Error::InvalidModel(format!("duplicate layer name `{}`", l.name)));
        }
        if !(l.scale > 0.0) || !l.scale.is_finite() {
            return Err(Error::RangeViolation {
                layer: l.name.clone(),
                detail: format!("scale {} is not positive", l.scale),
            });
        }
    }
    Ok(Parsed {
        part: PartBitModel {
            manifest,
            layers,
            low_sections,
            bytes_read: r.read,
        },
        lows: keep_low.then_some(lows),
    })
}

/// Exact byte accounting of a serialized model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ModelSizeReport {
    pub high_bytes: u64,
    pub low_bytes: u64,
    pub scale_bytes: u64,
    pub header_bytes: u64,
    pub total_bytes: u64,
    pub fp32_equivalent_bytes: u64,
}

pub fn size_report(m: &NestedModel) -> ModelSizeReport {
    let high_bytes: u64 = m.layers.iter().map(|l| l.high.byte_size()).sum();
    let low_bytes: u64 = m
        .layers
        .iter()
        .filter_map(|l| l.low.as_ref())
        .map(PackedTensor::byte_size)
        .sum();
    let scale_bytes = 4 * m.layers.len() as u64;
    let per_layer_header: u64 = m
        .layers
        .iter()
        .map(|l| 2 + l.name.len() as u64 + 1 + 4 * l.shape.len() as u64 + 8 + 8)
        .sum();
    let header_bytes = m.manifest.encoded_len() + per_layer_header;
    ModelSizeReport {
        high_bytes,
        low_bytes,
        scale_bytes,
        header_bytes,
        total_bytes: high_bytes + low_bytes + scale_bytes + header_bytes,
        fp32_equivalent_bytes: 4 * m.param_count(),
    }
}

/// FP32 weights in load order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FloatModel {
    pub layers: Vec<(String, FloatTensor)>,
}

impl FloatModel {
    pub fn get(&self, name: &str) -> Option<&FloatTensor> {
        self.layers.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_count(&self) -> u64 {
        self.layers.iter().map(|(_, t)| t.len() as u64).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&FP_MAGIC);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for (name, t) in &self.layers {
            put_str(&mut out, name);
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let len = bytes.len() as u64;
        let mut cur = Cursor::new(bytes);
        let mut r = Reader {
            inner: &mut cur,
            pos: 0,
            len,
            read: 0,
        };
        let magic: [u8; 4] = r.array()?;
        if magic != FP_MAGIC {
            return Err(Error::BadMagic {
                offset: 0,
                expected: FP_MAGIC,
                found: magic,
            });
        }
        let count = r.u32()?;
        let mut layers = Vec::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u8()?;
            let mut shape = Vec::new();
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.bytes(4 * n as u64)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                .collect();
            layers.push((name.clone(), FloatTensor::new(shape, data).map_err(|e| e.in_layer(&name))?));
        }
        if r.pos != len {
            return Err(r.format_err(format!("{} trailing bytes", len - r.pos)));
        }
        Ok(Self { layers })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<u64> {
        let bytes = self.to_bytes();
        fs::write(path, &bytes)?;
        Ok(bytes.len() as u64)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nesting::{nest_model, NestConfig};
    use crate::rounding::RoundingStrategy;
    use rand::{Rng, SeedableRng};

    fn fp_model(seed: u64) -> FloatModel {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        for (i, shape) in [vec![16, 8], vec![4, 3, 3, 3], vec![10, 16]].into_iter().enumerate() {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            layers.push((format!("layer{i}.weight"), FloatTensor::new(shape, data).unwrap()));
        }
        layers.push(("layer0.bias".into(), FloatTensor::new(vec![16], vec![0.1; 16]).unwrap()));
        FloatModel { layers }
    }

    fn nested(h: u8) -> NestedModel {
        nest_model(&fp_model(3), "toy", &NestConfig::new(8, h, RoundingStrategy::ADAPTIVE)).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let m = nested(4);
        assert_eq!(m.layers.len(), 3, "bias stays out");
        let bytes = m.to_bytes();
        let back = NestedModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(size_report(&m).total_bytes, bytes.len() as u64);
    }

    #[test]
    fn empty_model_is_header_only() {
        let m = NestedModel::new(Manifest::new("empty", 8, 4, 0, ""), vec![]).unwrap();
        assert_eq!(m.to_bytes().len(), 16 + "empty".len());
        assert_eq!(NestedModel::from_bytes(&m.to_bytes()).unwrap(), m);
    }

    #[test]
    fn bad_magic_points_at_offset_zero() {
        let mut bytes = nested(4).to_bytes();
        bytes[0] = b'X';
        assert!(matches!(NestedModel::from_bytes(&bytes), Err(Error::BadMagic { offset: 0, .. })));
    }

    #[test]
    fn truncation_reports_lengths() {
        let bytes = nested(4).to_bytes();
        let cut = &bytes[..bytes.len() - 5];
        match NestedModel::from_bytes(cut) {
            Err(Error::Truncated { expected, actual }) => {
                assert_eq!(actual, cut.len() as u64);
                assert_eq!(expected, bytes.len() as u64);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = nested(4).to_bytes();
        bytes[4] = 9;
        assert!(matches!(
            NestedModel::from_bytes(&bytes),
            Err(Error::UnsupportedVersion { found: 9, .. })
        ));
    }

    #[test]
    fn out_of_range_recomposition_rejected() {
        // high = -8 (INT4), low = -16 (INT5) recomposes to -144
        let high = PackedTensor::pack(&[-8], 4, &[1]).unwrap();
        let low = PackedTensor::pack(&[-16], 5, &[1]).unwrap();
        let layer = NestedLayer {
            name: "w".into(),
            shape: vec![1],
            n: 8,
            h: 4,
            scale: 1.0,
            high,
            low: Some(low),
        };
        let m = NestedModel::new(Manifest::new("bad", 8, 4, 1, ""), vec![layer]).unwrap();
        assert!(matches!(
            NestedModel::from_bytes(&m.to_bytes()),
            Err(Error::RangeViolation { .. })
        ));
    }

    #[test]
    fn part_bit_reads_high_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nqt");
        let m = nested(6);
        let written = save(&m, &path).unwrap();
        let part = load_part_bit(&path).unwrap();
        let rep = size_report(&m);
        assert_eq!(part.bytes_read, written - rep.low_bytes);
        assert_eq!(part.low_bytes(), rep.low_bytes);
        for (p, full) in part.layers.iter().zip(&m.layers) {
            assert_eq!(p.high, full.high);
        }
        // the low sections can be fetched back individually
        for (s, full) in part.low_sections.iter().zip(&m.layers) {
            let low = read_low_section(&path, *s, 3, &full.shape).unwrap();
            assert_eq!(Some(low), full.low);
        }
    }

    #[test]
    fn part_only_file_refuses_full_load() {
        let m = nested(5);
        let part = part_bit_from_bytes(&m.to_bytes()).unwrap();
        let bytes = part.to_bytes();
        assert!(matches!(NestedModel::from_bytes(&bytes), Err(Error::LowSectionMissing)));
        let reread = part_bit_from_bytes(&bytes).unwrap();
        assert!(!reread.has_low_sections());
        let lows = m.layers.iter().map(|l| l.low.clone().unwrap()).collect();
        assert_eq!(reread.with_low(lows).unwrap(), m);
    }

    #[test]
    fn size_report_counts() {
        let m = nested(7);
        let rep = size_report(&m);
        // 7-bit high: 9 per word, 2-bit low: 32 per word
        let expect_high: u64 = m.layers.iter().map(|l| 8 * l.param_count().div_ceil(9) as u64).sum();
        let expect_low: u64 = m.layers.iter().map(|l| 8 * l.param_count().div_ceil(32) as u64).sum();
        assert_eq!(rep.high_bytes, expect_high);
        assert_eq!(rep.low_bytes, expect_low);
        assert_eq!(rep.scale_bytes, 4 * 3);
        assert_eq!(rep.fp32_equivalent_bytes, 4 * m.param_count());
        assert_eq!(
            rep.total_bytes,
            rep.high_bytes + rep.low_bytes + rep.scale_bytes + rep.header_bytes
        );
    }

    #[test]
    fn standalone_model_round_trips() {
        let m = nest_model(&fp_model(4), "int6", &NestConfig::standalone(6)).unwrap();
        assert!(m.layers.iter().all(|l| l.low.is_none()));
        let back = NestedModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn float_archive_round_trip() {
        let fp = fp_model(9);
        let back = FloatModel::from_bytes(&fp.to_bytes()).unwrap();
        assert_eq!(back, fp);
        let mut bytes = fp.to_bytes();
        bytes[3] = b'9';
        assert!(matches!(FloatModel::from_bytes(&bytes), Err(Error::BadMagic { .. })));
        assert!(FloatModel::from_bytes(&[]).is_err());
    }
}
