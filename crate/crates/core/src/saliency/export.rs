use std::path::Path;

use super::{SaliencyError, SaliencyMap};

pub const CVIS_MAGIC: [u8; 4] = *b"CVIS";
pub const CVIS_VERSION: u16 = 1;

/// Raw float export: `"CVIS"`, u16 version, u32 width, u32 height, then
/// `width * height` little-endian f32 values, row-major.
pub fn write_cvis(map: &SaliencyMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + map.values.len() * 4);
    out.extend_from_slice(&CVIS_MAGIC);
    out.extend_from_slice(&CVIS_VERSION.to_le_bytes());
    out.extend_from_slice(&map.width.to_le_bytes());
    out.extend_from_slice(&map.height.to_le_bytes());
    for &v in &map.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Parses a CVIS file. Synset and image fields of the result are empty.
pub fn read_cvis(bytes: &[u8]) -> Result<SaliencyMap, SaliencyError> {
    let bad = |m: &str| SaliencyError::Format(m.to_owned());
    if bytes.len() < 14 {
        return Err(bad("truncated header"));
    }
    if bytes[..4] != CVIS_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CVIS_VERSION {
        return Err(SaliencyError::Format(format!("unsupported version {version}")));
    }
    let width = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[10..14].try_into().unwrap());
    let n = width as usize * height as usize;
    let body = &bytes[14..];
    if body.len() != n * 4 {
        return Err(bad("body length does not match dimensions"));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(SaliencyMap {
        width,
        height,
        values,
        synset: String::new(),
        image: String::new(),
    })
}

impl SaliencyMap {
    pub fn save_cvis(&self, path: impl AsRef<Path>) -> Result<(), SaliencyError> {
        std::fs::write(path, write_cvis(self))?;
        Ok(())
    }

    pub fn load_cvis(path: impl AsRef<Path>) -> Result<Self, SaliencyError> {
        read_cvis(&std::fs::read(path)?)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), SaliencyError> {
        self.to_gray().save_png(path)?;
        Ok(())
    }
}
