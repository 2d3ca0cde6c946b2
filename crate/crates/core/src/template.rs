//! Templates and the `.mbt` binary format.
//!
//! Layout (little-endian): magic `MBT1`, version `u16`, ppi `u16`, minutia
//! count `u16`, descriptor dimension `u16`; then per minutia `x`, `y`,
//! `theta` as `f32`, kind `u8` (0 ending, 1 bifurcation), quality `f32` and
//! `dim` descriptor components as `f32`; finally a CRC32 of every preceding
//! byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::descriptor::Descriptor;
use crate::error::{Error, Result};
use crate::extract::{Minutia, MinutiaKind};
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"MBT1";
pub const VERSION: u16 = 1;
pub const MAX_MINUTIAE: usize = 512;
const HEADER_LEN: usize = 12;

/// Minutiae with index-aligned descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTemplate<T>", bound(deserialize = "T: Real + Deserialize<'de>", serialize = "T: Serialize"))]
pub struct Template<T> {
    minutiae: Vec<Minutia<T>>,
    descriptors: Vec<Descriptor<T>>,
    source_ppi: u16,
    quality_summary: T,
}

#[derive(Deserialize)]
struct RawTemplate<T> {
    minutiae: Vec<Minutia<T>>,
    descriptors: Vec<Descriptor<T>>,
    source_ppi: u16,
}

impl<T: Real> TryFrom<RawTemplate<T>> for Template<T> {
    type Error = Error;

    fn try_from(raw: RawTemplate<T>) -> Result<Self> {
        for d in &raw.descriptors {
            Descriptor::new(d.values().to_vec())?;
        }
        Template::new(raw.minutiae, raw.descriptors, raw.source_ppi)
    }
}

fn mean_quality<T: Real>(minutiae: &[Minutia<T>]) -> T {
    if minutiae.is_empty() {
        T::zero()
    } else {
        minutiae.iter().map(|m| m.quality).sum::<T>() / T::of(minutiae.len() as f64)
    }
}

impl<T: Real> Template<T> {
    pub fn new(minutiae: Vec<Minutia<T>>, descriptors: Vec<Descriptor<T>>, source_ppi: u16) -> Result<Self> {
        if minutiae.len() != descriptors.len() {
            return Err(Error::invalid(format!(
                "{} minutiae but {} descriptors",
                minutiae.len(),
                descriptors.len()
            )));
        }
        if minutiae.len() > MAX_MINUTIAE {
            return Err(Error::invalid(format!("{} minutiae exceeds the cap of {MAX_MINUTIAE}", minutiae.len())));
        }
        if source_ppi != 500 && source_ppi != 1900 {
            return Err(Error::invalid(format!("source ppi {source_ppi} is not 500 or 1900")));
        }
        if let Some(first) = descriptors.first() {
            if descriptors.iter().any(|d| d.dim() != first.dim()) {
                return Err(Error::invalid("descriptors of differing dimension"));
            }
        }
        if minutiae.iter().any(|m| !(m.x.is_finite() && m.y.is_finite() && m.theta.is_finite())) {
            return Err(Error::invalid("non-finite minutia coordinates"));
        }
        let quality_summary = mean_quality(&minutiae);
        Ok(Template { minutiae, descriptors, source_ppi, quality_summary })
    }

    pub fn minutiae(&self) -> &[Minutia<T>] {
        &self.minutiae
    }

    pub fn descriptors(&self) -> &[Descriptor<T>] {
        &self.descriptors
    }

    pub fn len(&self) -> usize {
        self.minutiae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutiae.is_empty()
    }

    /// Descriptor dimension, or 0 for an empty template.
    pub fn dim(&self) -> usize {
        self.descriptors.first().map_or(0, Descriptor::dim)
    }

    pub fn source_ppi(&self) -> u16 {
        self.source_ppi
    }

    /// Mean minutia quality in [0, 1].
    pub fn quality_summary(&self) -> T {
        self.quality_summary
    }

    /// Same descriptors with minutiae replaced, e.g. after a geometric
    /// transform.
    pub fn with_minutiae(&self, minutiae: Vec<Minutia<T>>) -> Result<Self> {
        Template::new(minutiae, self.descriptors.clone(), self.source_ppi)
    }

    /// Keeps the entries whose index satisfies `keep`.
    pub fn retain(&self, mut keep: impl FnMut(usize) -> bool) -> Result<Self> {
        let (m, d) = self
            .minutiae
            .iter()
            .zip(&self.descriptors)
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, (m, d))| (*m, d.clone()))
            .unzip();
        Template::new(m, d, self.source_ppi)
    }

    pub fn cast<U: Real>(&self) -> Template<U> {
        let minutiae: Vec<Minutia<U>> = self.minutiae.iter().map(Minutia::cast).collect();
        let descriptors = self.descriptors.iter().map(Descriptor::cast).collect();
        let quality_summary = mean_quality(&minutiae);
        Template { minutiae, descriptors, source_ppi: self.source_ppi, quality_summary }
    }

    /// FNV-1a hash of the descriptor bits in order. Geometry is excluded so
    /// that rigidly moved copies hash alike.
    pub fn descriptor_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for d in &self.descriptors {
            for v in d.values() {
                for b in v.bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
            h ^= 0xff;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    /// Encodes as `.mbt` bytes. Values are stored as `f32`.
    pub fn to_mbt(&self) -> Vec<u8> {
        let dim = self.dim();
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * (17 + 4 * dim) + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.source_ppi.to_le_bytes());
        out.extend_from_slice(&(self.len() as u16).to_le_bytes());
        out.extend_from_slice(&(dim as u16).to_le_bytes());
        let f = |out: &mut Vec<u8>, v: T| out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        for (m, d) in self.minutiae.iter().zip(&self.descriptors) {
            f(&mut out, m.x);
            f(&mut out, m.y);
            f(&mut out, m.theta);
            out.push(m.kind.code());
            f(&mut out, m.quality);
            for &v in d.values() {
                f(&mut out, v);
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Decodes `.mbt` bytes, checking the CRC before anything else.
    pub fn from_mbt(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::TemplateFormat(m.to_string());
        if bytes.len() < HEADER_LEN + 4 {
            return Err(bad("file too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(bad("CRC mismatch"));
        }
        if &body[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let u16_at = |o: usize| u16::from_le_bytes([body[o], body[o + 1]]);
        let version = u16_at(4);
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let ppi = u16_at(6);
        let count = usize::from(u16_at(8));
        let dim = usize::from(u16_at(10));
        if count > MAX_MINUTIAE {
            return Err(bad("minutia count exceeds cap"));
        }
        if count > 0 && dim == 0 {
            return Err(bad("zero descriptor dimension"));
        }
        let record = 17 + 4 * dim;
        if body.len() != HEADER_LEN + count * record {
            return Err(bad("length does not match header"));
        }
        let mut minutiae = Vec::with_capacity(count);
        let mut descriptors = Vec::with_capacity(count);
        let f32_at = |o: usize| T::of(f64::from(f32::from_le_bytes(body[o..o + 4].try_into().expect("4 bytes"))));
        for k in 0..count {
            let o = HEADER_LEN + k * record;
            let kind = MinutiaKind::from_code(body[o + 12]).ok_or_else(|| bad("unknown minutia kind"))?;
            let m = Minutia { x: f32_at(o), y: f32_at(o + 4), theta: f32_at(o + 8), kind, quality: f32_at(o + 13) };
            minutiae.push(m);
            let values = (0..dim).map(|i| f32_at(o + 17 + 4 * i)).collect();
            descriptors.push(Descriptor::new(values).map_err(|e| Error::TemplateFormat(e.to_string()))?);
        }
        Template::new(minutiae, descriptors, ppi).map_err(|e| Error::TemplateFormat(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_mbt(&std::fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_mbt())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Template<f32> {
        let m = vec![
            Minutia::new(10.5, 20.25, 1.0, MinutiaKind::Ending, 0.8),
            Minutia::new(30.0, 40.0, 4.0, MinutiaKind::Bifurcation, 0.6),
        ];
        let d = vec![
            Descriptor::normalized(vec![1.0, 2.0, 3.0]).unwrap(),
            Descriptor::normalized(vec![0.0, 0.0, 1.0]).unwrap(),
        ];
        Template::new(m, d, 500).unwrap()
    }

    #[test]
    fn mbt_round_trip_is_byte_exact() {
        let t = sample();
        let bytes = t.to_mbt();
        assert_eq!(bytes.len(), 12 + 2 * (17 + 12) + 4);
        assert_eq!(&bytes[..4], b"MBT1");
        let back = Template::<f32>::from_mbt(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_mbt(), bytes);
        assert!((t.quality_summary() - 0.7).abs() < 1e-6);
    }

    #[test]
    fn corrupted_bytes_are_rejected() {
        let mut bytes = sample().to_mbt();
        bytes[20] ^= 0x40;
        assert!(matches!(Template::<f32>::from_mbt(&bytes), Err(Error::TemplateFormat(_))));
        assert!(Template::<f32>::from_mbt(&bytes[..10]).is_err());
    }

    #[test]
    fn invariants_enforced() {
        let m = vec![Minutia::new(0.0f32, 0.0, 0.0, MinutiaKind::Ending, 1.0)];
        assert!(Template::new(m.clone(), vec![], 500).is_err());
        let d = vec![Descriptor::normalized(vec![1.0f32]).unwrap()];
        assert!(Template::new(m.clone(), d.clone(), 600).is_err());
        assert!(Template::new(m, d, 1900).is_ok());
    }

    #[test]
    fn json_round_trip() {
        let t = sample();
        let s = serde_json::to_string(&t).unwrap();
        let back: Template<f32> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn hash_ignores_geometry() {
        let t = sample();
        let moved: Vec<_> = t.minutiae().iter().map(|m| Minutia { x: m.x + 5.0, ..*m }).collect();
        assert_eq!(t.with_minutiae(moved).unwrap().descriptor_hash(), t.descriptor_hash());
    }
}
