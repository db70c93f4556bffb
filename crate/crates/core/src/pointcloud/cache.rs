//! Point-cloud cache files: `DAPC` magic, `u32` version, `u32` point count,
//! then `count × 3` little-endian `f32` coordinates.

use std::path::Path;

use super::PointCloudError;

pub const CACHE_MAGIC: &[u8; 4] = b"DAPC";
pub const CACHE_VERSION: u32 = 1;

pub fn cache_file_name(design_id: &str, n: usize, seed: u64) -> String {
    format!("{design_id}_{n}_{seed}.dapc")
}

pub fn encode(points: &[[f32; 3]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + points.len() * 12);
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(points.len() as u32).to_le_bytes());
    for p in points {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &str) -> Result<Vec<[f32; 3]>, PointCloudError> {
    let bad = |reason: &str| PointCloudError::BadCache {
        path: path.to_string(),
        reason: reason.to_string(),
    };
    if bytes.len() < 12 || &bytes[..4] != CACHE_MAGIC {
        return Err(bad("missing DAPC magic"));
    }
    let word = |at: usize| u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
    let version = word(4);
    if version != CACHE_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = word(8) as usize;
    if bytes.len() != 12 + count * 12 {
        return Err(bad(&format!(
            "expected {} bytes for {count} points, found {}",
            12 + count * 12,
            bytes.len()
        )));
    }
    let f = |at: usize| f32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
    Ok((0..count)
        .map(|i| {
            let at = 12 + i * 12;
            [f(at), f(at + 4), f(at + 8)]
        })
        .collect())
}

pub fn write_cache(path: &Path, points: &[[f32; 3]]) -> Result<(), PointCloudError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    // write-then-rename so a crashed run never leaves a partial cache
    let tmp = path.with_extension("dapc.tmp");
    std::fs::write(&tmp, encode(points))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<Vec<[f32; 3]>, PointCloudError> {
    let bytes = std::fs::read(path)?;
    decode(&bytes, &path.display().to_string())
}
