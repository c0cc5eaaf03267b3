//! `MVIRFEAT` binary fixture: pre-extracted image-region and text-token features.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "MVIRFEAT"
//! version      u32      = 1
//! r            u32      image regions per record
//! c_img        u32      image feature width
//! c_txt        u32      text feature width
//! record_count u64
//! per record:
//!   id_len u16, id UTF-8 bytes
//!   label  u8   (0 real, 1 fake)
//!   m      u32  text token count, >= 1
//!   image  r*c_img f32
//!   text   m*c_txt f32
//! ```

use std::path::Path;

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const FIXTURE_MAGIC: &[u8; 8] = b"MVIRFEAT";
pub const FIXTURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 4 + 8;

#[derive(Debug, Error, PartialEq)]
pub enum FixtureError {
    #[error("bad magic at byte {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported fixture version {found} at byte {offset}")]
    Version { found: u32, offset: usize },
    #[error("dimension inconsistency at byte {offset}: {detail}")]
    Dimension { offset: usize, detail: String },
    #[error("truncated fixture at byte {offset}: need {needed} more bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("invalid label {label} at byte {offset}")]
    Label { label: u8, offset: usize },
    #[error("record id at byte {offset} is not valid UTF-8")]
    Id { offset: usize },
    #[error("non-finite feature value at byte {offset}")]
    NonFinite { offset: usize },
    #[error("{extra} trailing bytes after last record at byte {offset}")]
    Trailing { offset: usize, extra: usize },
}

/// Ground-truth class; the fake class is the positive class (index 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Real = 0,
    Fake = 1,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Real),
            1 => Some(Label::Fake),
            _ => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }
}

/// One news item.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub label: Label,
    /// `r × c_img`
    pub image_features: Tensor,
    /// `m × c_txt`
    pub text_features: Tensor,
}

impl FeatureRecord {
    pub fn token_count(&self) -> usize {
        self.text_features.shape()[0]
    }
}

/// A fixture file's header dimensions plus its records.
#[derive(Clone, Debug, PartialEq)]
pub struct Fixture {
    pub regions: usize,
    pub image_channels: usize,
    pub text_channels: usize,
    pub records: Vec<FeatureRecord>,
}

impl Fixture {
    pub fn new(regions: usize, image_channels: usize, text_channels: usize) -> Self {
        Self {
            regions,
            image_channels,
            text_channels,
            records: Vec::new(),
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FixtureError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FixtureError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, FixtureError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FixtureError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FixtureError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FixtureError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32_block(&mut self, count: usize) -> Result<Vec<f64>, FixtureError> {
        let start = self.pos;
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| FixtureError::Dimension {
                offset: start,
                detail: format!("payload of {count} floats overflows"),
            })?;
        let raw = self.take(bytes)?;
        raw.chunks_exact(4)
            .enumerate()
            .map(|(i, c)| {
                let v = f32::from_le_bytes(c.try_into().unwrap());
                if v.is_finite() {
                    Ok(v as f64)
                } else {
                    Err(FixtureError::NonFinite {
                        offset: start + 4 * i,
                    })
                }
            })
            .collect()
    }
}

fn dims(offset: usize, detail: impl Into<String>) -> FixtureError {
    FixtureError::Dimension {
        offset,
        detail: detail.into(),
    }
}

/// Parses a complete fixture from memory, validating every invariant.
pub fn decode_fixture(bytes: &[u8]) -> Result<Fixture, FixtureError> {
    let mut rd = Reader { buf: bytes, pos: 0 };
    if rd
        .take(8)
        .map_err(|_| FixtureError::BadMagic { offset: 0 })?
        != FIXTURE_MAGIC
    {
        return Err(FixtureError::BadMagic { offset: 0 });
    }
    let version_at = rd.pos;
    let version = rd.u32()?;
    if version != FIXTURE_VERSION {
        return Err(FixtureError::Version {
            found: version,
            offset: version_at,
        });
    }
    let dims_at = rd.pos;
    let regions = rd.u32()? as usize;
    let image_channels = rd.u32()? as usize;
    let text_channels = rd.u32()? as usize;
    if regions == 0 || image_channels == 0 || text_channels == 0 {
        return Err(dims(
            dims_at,
            format!("header dims r={regions}, c_img={image_channels}, c_txt={text_channels} must be positive"),
        ));
    }
    let image_len = regions
        .checked_mul(image_channels)
        .ok_or_else(|| dims(dims_at, "r * c_img overflows"))?;
    let record_count = rd.u64()?;

    // The count is untrusted; grow as records actually parse.
    let mut records = Vec::with_capacity((record_count as usize).min(1024));
    for _ in 0..record_count {
        let id_at = rd.pos;
        let id_len = rd.u16()? as usize;
        let id = std::str::from_utf8(rd.take(id_len)?)
            .map_err(|_| FixtureError::Id { offset: id_at + 2 })?
            .to_owned();
        let label_at = rd.pos;
        let raw_label = rd.u8()?;
        let label = Label::from_u8(raw_label).ok_or(FixtureError::Label {
            label: raw_label,
            offset: label_at,
        })?;
        let m_at = rd.pos;
        let m = rd.u32()? as usize;
        if m == 0 {
            return Err(dims(m_at, format!("record {id:?} has zero text tokens")));
        }
        let text_len = m
            .checked_mul(text_channels)
            .ok_or_else(|| dims(m_at, "m * c_txt overflows"))?;
        let image = rd.f32_block(image_len)?;
        let text = rd.f32_block(text_len)?;
        records.push(FeatureRecord {
            id,
            label,
            image_features: Tensor::new(vec![regions, image_channels], image)
                .expect("shape checked"),
            text_features: Tensor::new(vec![m, text_channels], text).expect("shape checked"),
        });
    }
    if rd.pos != bytes.len() {
        return Err(FixtureError::Trailing {
            offset: rd.pos,
            extra: bytes.len() - rd.pos,
        });
    }
    Ok(Fixture {
        regions,
        image_channels,
        text_channels,
        records,
    })
}

/// Serializes a fixture into its canonical byte form.
pub fn encode_fixture(fixture: &Fixture) -> Result<Vec<u8>> {
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Usage(format!("{what} = {v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(FIXTURE_MAGIC);
    out.extend_from_slice(&FIXTURE_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(fixture.regions, "r")?.to_le_bytes());
    out.extend_from_slice(&to_u32(fixture.image_channels, "c_img")?.to_le_bytes());
    out.extend_from_slice(&to_u32(fixture.text_channels, "c_txt")?.to_le_bytes());
    out.extend_from_slice(&(fixture.records.len() as u64).to_le_bytes());
    for rec in &fixture.records {
        if rec.image_features.shape() != [fixture.regions, fixture.image_channels] {
            return Err(Error::dim(
                "write_fixture",
                format!(
                    "record {:?} image shape {:?}",
                    rec.id,
                    rec.image_features.shape()
                ),
            ));
        }
        let (m, c) = rec.text_features.dims2()?;
        if c != fixture.text_channels || rec.text_features.rank() != 2 {
            return Err(Error::dim(
                "write_fixture",
                format!(
                    "record {:?} text shape {:?}",
                    rec.id,
                    rec.text_features.shape()
                ),
            ));
        }
        let id_len = u16::try_from(rec.id.len())
            .map_err(|_| Error::Usage(format!("record id longer than {} bytes", u16::MAX)))?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(rec.id.as_bytes());
        out.push(rec.label as u8);
        out.extend_from_slice(&to_u32(m, "m")?.to_le_bytes());
        for v in rec
            .image_features
            .data()
            .iter()
            .chain(rec.text_features.data())
        {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_fixture(path: impl AsRef<Path>) -> Result<Fixture> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_fixture(&bytes)?)
}

pub fn write_fixture(fixture: &Fixture, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_fixture(fixture)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
