//! On-disk feature table (`WFC1`).
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic      b"WFC1"
//! tag        u32   descriptor tag code (1=RGB .. 7=FC8)
//! dim        u32
//! rows       u32
//! rows x {
//!   image_index  u32
//!   grid_row     u16
//!   grid_col     u16
//!   label        u8    class code 1..=7
//!   features     dim x f32
//! }
//! ids        u32 count, then count x { u32 byte length, UTF-8 bytes }
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::DescriptorTag;
use crate::model::TissueClass;

const MAGIC: &[u8; 4] = b"WFC1";
const FMT: &str = "WFC1";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub image_index: u32,
    pub grid_row: u16,
    pub grid_col: u16,
    pub label: TissueClass,
    pub features: Vec<f32>,
}

impl FeatureRow {
    pub fn features_f64(&self) -> Vec<f64> {
        self.features.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Labeled patch features for a whole dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub tag: DescriptorTag,
    pub dim: usize,
    pub rows: Vec<FeatureRow>,
    /// Indexed by [`FeatureRow::image_index`].
    pub image_ids: Vec<String>,
}

impl FeatureTable {
    pub fn new(tag: DescriptorTag, dim: usize, image_ids: Vec<String>) -> Self {
        Self {
            tag,
            dim,
            rows: Vec::new(),
            image_ids,
        }
    }

    pub fn image_id(&self, row: &FeatureRow) -> &str {
        &self.image_ids[row.image_index as usize]
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.rows.iter().enumerate() {
            if r.features.len() != self.dim {
                return Err(Error::format(FMT, format!("row {i} has {} features, expected {}", r.features.len(), self.dim)));
            }
            if r.image_index as usize >= self.image_ids.len() {
                return Err(Error::format(FMT, format!("row {i} references image {} of {}", r.image_index, self.image_ids.len())));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let row_bytes = 9 + 4 * self.dim;
        let mut out = Vec::with_capacity(16 + self.rows.len() * row_bytes);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&u32::from(self.tag.code()).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.rows.len() as u32).to_le_bytes());
        for r in &self.rows {
            out.extend_from_slice(&r.image_index.to_le_bytes());
            out.extend_from_slice(&r.grid_row.to_le_bytes());
            out.extend_from_slice(&r.grid_col.to_le_bytes());
            out.push(r.label.code());
            for v in &r.features {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.image_ids.len() as u32).to_le_bytes());
        for id in &self.image_ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format(FMT, "bad magic"));
        }
        let tag_code = r.u32()?;
        let tag = u8::try_from(tag_code)
            .ok()
            .and_then(DescriptorTag::from_code)
            .ok_or_else(|| Error::format(FMT, format!("unknown descriptor tag {tag_code}")))?;
        let dim = r.u32()? as usize;
        let n = r.u32()? as usize;
        let mut rows = Vec::with_capacity(n.min(bytes.len() / (9 + 4 * dim).max(1)));
        for _ in 0..n {
            let image_index = r.u32()?;
            let grid_row = r.u16()?;
            let grid_col = r.u16()?;
            let code = r.take(1)?[0];
            let label = TissueClass::from_code(code)
                .map_err(|_| Error::format(FMT, format!("invalid label {code}")))?;
            let features = r
                .take(4 * dim)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            rows.push(FeatureRow {
                image_index,
                grid_row,
                grid_col,
                label,
                features,
            });
        }
        let count = r.u32()? as usize;
        let mut image_ids = Vec::with_capacity(count.min(bytes.len()));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let s = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(FMT, "image id is not UTF-8"))?;
            image_ids.push(s.to_string());
        }
        if r.pos != bytes.len() {
            return Err(Error::format(FMT, "trailing bytes"));
        }
        let table = Self {
            tag,
            dim,
            rows,
            image_ids,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(FMT, "unexpected end of data"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
}
