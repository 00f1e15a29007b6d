//! `MATF` checkpoint files.
//!
//! Layout (little-endian): magic `MATF`, u32 format version, u32 levels,
//! features, log2 table size, base resolution, max resolution, hidden width,
//! u64 seed, f64 bbox min xyz and max xyz, u64 field version, u64 parameter
//! count, then the parameters as f32.

use std::fs;
use std::path::Path;

use glam::DVec3;

use super::{FieldConfig, FieldError, MaterialField};
use crate::scene::Aabb;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MATF";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 6 * 4 + 8 + 6 * 8 + 8 + 8;

/// Writes `bytes` to a sibling temp file and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

impl MaterialField {
    pub fn encode(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [CHECKPOINT_VERSION, c.levels, c.features, c.log2_table_size, c.base_resolution, c.max_resolution, c.hidden] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&c.seed.to_le_bytes());
        for v in self.bbox.min.to_array().into_iter().chain(self.bbox.max.to_array()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FieldError> {
        let bad = |m: String| FieldError::Format(m);
        if bytes.len() < HEADER_LEN || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing MATF header".into()));
        }
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let f64_at = |at: usize| f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let format = u32_at(4);
        if format != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {format}")));
        }
        let config = FieldConfig {
            levels: u32_at(8),
            features: u32_at(12),
            log2_table_size: u32_at(16),
            base_resolution: u32_at(20),
            max_resolution: u32_at(24),
            hidden: u32_at(28),
            seed: u64_at(32),
        };
        let bbox = Aabb::new(
            DVec3::new(f64_at(40), f64_at(48), f64_at(56)),
            DVec3::new(f64_at(64), f64_at(72), f64_at(80)),
        );
        let version = u64_at(88);
        let count = u64_at(96) as usize;
        let mut field = MaterialField::zeroed(bbox, config)?;
        if count != field.params.len() {
            return Err(bad(format!("parameter count {count} does not match configuration ({})", field.params.len())));
        }
        if bytes.len() != HEADER_LEN + 4 * count {
            return Err(bad(format!("expected {} bytes, found {}", HEADER_LEN + 4 * count, bytes.len())));
        }
        for (i, p) in field.params.iter_mut().enumerate() {
            let at = HEADER_LEN + 4 * i;
            *p = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        }
        if let Some(i) = field.params.iter().position(|p| !p.is_finite()) {
            return Err(bad(format!("parameter {i} is not finite")));
        }
        field.version = version;
        Ok(field)
    }

    pub fn save(&self, path: &Path) -> Result<(), FieldError> {
        Ok(write_atomic(path, &self.encode())?)
    }

    pub fn load(path: &Path) -> Result<Self, FieldError> {
        Self::decode(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_exact() {
        let config = FieldConfig { levels: 3, features: 2, log2_table_size: 8, base_resolution: 2, max_resolution: 16, hidden: 4, seed: 77 };
        let mut field = MaterialField::new(Aabb::new(DVec3::new(-1.0, 0.0, 2.0), DVec3::new(1.0, 0.5, 3.0)), config).unwrap();
        field.set_param(5, 0.25);
        let bytes = field.encode();
        assert_eq!(&bytes[..4], b"MATF");
        let back = MaterialField::decode(&bytes).unwrap();
        assert_eq!(back, field);
        assert_eq!(back.encode(), bytes);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.matf");
        field.save(&path).unwrap();
        assert_eq!(MaterialField::load(&path).unwrap(), field);
    }

    #[test]
    fn rejects_corrupt_files() {
        let config = FieldConfig { levels: 2, features: 1, log2_table_size: 6, base_resolution: 2, max_resolution: 4, hidden: 2, seed: 1 };
        let field = MaterialField::new(Aabb::new(DVec3::ZERO, DVec3::ONE), config).unwrap();
        let bytes = field.encode();
        assert!(MaterialField::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(MaterialField::decode(&wrong).is_err());
        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(MaterialField::decode(&nan).is_err());
    }
}
