//! PCLD: a minimal little-endian point-cloud container.
//!
//! ```text
//! "PCLD" | version u32 = 1 | label u32 | count u32 | count × 3 × f64
//! ```

use std::path::Path;

use crate::geometry::PointCloud;
use crate::scalar::Scalar;

pub const PCLD_MAGIC: &[u8; 4] = b"PCLD";
pub const PCLD_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum PcldError {
    #[error("not a PCLD file (bad magic)")]
    BadMagic,
    #[error("unsupported PCLD version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated PCLD payload: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} trailing bytes after PCLD payload")]
    TrailingBytes(usize),
    #[error("{0} does not fit the u32 fields of PCLD")]
    TooLarge(usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn encode_pcld<T: Scalar>(cloud: &PointCloud<T>) -> Result<Vec<u8>, PcldError> {
    let label = u32::try_from(cloud.label).map_err(|_| PcldError::TooLarge(cloud.label))?;
    let count = u32::try_from(cloud.len()).map_err(|_| PcldError::TooLarge(cloud.len()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + cloud.len() * 24);
    out.extend_from_slice(PCLD_MAGIC);
    out.extend_from_slice(&PCLD_VERSION.to_le_bytes());
    out.extend_from_slice(&label.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for p in &cloud.positions {
        for c in p {
            out.extend_from_slice(&c.to_f64_lossless().to_le_bytes());
        }
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode_pcld<T: Scalar>(bytes: &[u8]) -> Result<PointCloud<T>, PcldError> {
    if bytes.len() < 4 || &bytes[..4] != PCLD_MAGIC {
        return Err(PcldError::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(PcldError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let version = u32_at(bytes, 4);
    if version != PCLD_VERSION {
        return Err(PcldError::UnsupportedVersion(version));
    }
    if bytes.len() < HEADER_LEN {
        return Err(PcldError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let label = u32_at(bytes, 8) as usize;
    let count = u32_at(bytes, 12) as usize;
    let expected = HEADER_LEN + count * 24;
    if bytes.len() < expected {
        return Err(PcldError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(PcldError::TrailingBytes(bytes.len() - expected));
    }
    let positions = bytes[HEADER_LEN..]
        .chunks_exact(24)
        .map(|chunk| {
            let c = |i: usize| T::lit(f64::from_le_bytes(chunk[i * 8..i * 8 + 8].try_into().unwrap()));
            [c(0), c(1), c(2)]
        })
        .collect();
    Ok(PointCloud::new(positions, label))
}

pub fn write_pcld<T: Scalar>(path: impl AsRef<Path>, cloud: &PointCloud<T>) -> Result<(), PcldError> {
    let path = path.as_ref();
    std::fs::write(path, encode_pcld(cloud)?).map_err(|source| PcldError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_pcld<T: Scalar>(path: impl AsRef<Path>) -> Result<PointCloud<T>, PcldError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| PcldError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_pcld(&bytes)
}
