//! Binary dataset files.
//!
//! Layout, all little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `SPD1` |
//! | 4 | version `u32` (1) |
//! | 8 | sample count `N` as `u64` |
//! | 4 | dimension `d` as `u32` |
//! | 4 | flags `u32`; bit 0 set when labels follow |
//! | `8·N·d·d` | matrices, row-major `f64` |
//! | `4·N` | labels as `u32`, starting at 1 (only with flag bit 0) |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::dataset::{LabeledSpdDataset, SpdDataset};
use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;

pub const MAGIC: &[u8; 4] = b"SPD1";
pub const VERSION: u32 = 1;
const FLAG_LABELS: u32 = 1;

/// Matrices with optional labels; labels are `0..L` in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    pub matrices: Vec<SpdMatrix>,
    pub labels: Option<Vec<usize>>,
}

impl DatasetFile {
    pub fn from_labeled(data: &LabeledSpdDataset) -> Self {
        DatasetFile {
            matrices: data.data().samples().to_vec(),
            labels: Some(data.labels().to_vec()),
        }
    }

    pub fn from_unlabeled(data: &SpdDataset) -> Self {
        DatasetFile {
            matrices: data.samples().to_vec(),
            labels: None,
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let Some(first) = self.matrices.first() else {
            return Err(Error::Format("refusing to write an empty dataset".into()));
        };
        let d = first.dim();
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(self.matrices.len() as u64).to_le_bytes())?;
        out.write_all(&(d as u32).to_le_bytes())?;
        let flags = if self.labels.is_some() {
            FLAG_LABELS
        } else {
            0
        };
        out.write_all(&flags.to_le_bytes())?;
        for m in &self.matrices {
            if m.dim() != d {
                return Err(Error::Format("matrices differ in dimension".into()));
            }
            let a = m.matrix();
            for i in 0..d {
                for j in 0..d {
                    out.write_all(&a[(i, j)].to_le_bytes())?;
                }
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.matrices.len() {
                return Err(Error::Format(
                    "label count differs from sample count".into(),
                ));
            }
            for &l in labels {
                let l =
                    u32::try_from(l + 1).map_err(|_| Error::Format("label too large".into()))?;
                out.write_all(&l.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b4)?;
        if &b4 != MAGIC {
            return Err(Error::Format("bad magic; not an SPD1 dataset".into()));
        }
        input.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset version {version}"
            )));
        }
        input.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        input.read_exact(&mut b4)?;
        let d = u32::from_le_bytes(b4) as usize;
        input.read_exact(&mut b4)?;
        let flags = u32::from_le_bytes(b4);
        if flags & !FLAG_LABELS != 0 {
            return Err(Error::Format(format!("unknown flag bits {flags:#x}")));
        }
        if n == 0 || d == 0 {
            return Err(Error::Format("empty dataset".into()));
        }
        let has_labels = flags & FLAG_LABELS != 0;
        let expected = n
            .checked_mul(d * d * 8)
            .and_then(|x| x.checked_add(if has_labels { 4 * n } else { 0 }))
            .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
        let mut payload = Vec::new();
        input.read_to_end(&mut payload)?;
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "payload has {} bytes, header implies {expected}",
                payload.len()
            )));
        }
        let (mats, rest) = payload.split_at(n * d * d * 8);
        let mut matrices = Vec::with_capacity(n);
        for (k, chunk) in mats.chunks_exact(d * d * 8).enumerate() {
            let vals: Vec<f64> = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let m = DMatrix::from_row_slice(d, d, &vals);
            matrices
                .push(SpdMatrix::new(m).map_err(|e| Error::Format(format!("sample {k}: {e}")))?);
        }
        let labels = if has_labels {
            let mut out = Vec::with_capacity(n);
            for c in rest.chunks_exact(4) {
                let l = u32::from_le_bytes(c.try_into().expect("4 bytes"));
                if l == 0 {
                    return Err(Error::Format("labels start at 1".into()));
                }
                out.push(l as usize - 1);
            }
            Some(out)
        } else {
            None
        };
        Ok(DatasetFile { matrices, labels })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }

    pub fn into_labeled(self) -> Result<LabeledSpdDataset> {
        let labels = self
            .labels
            .ok_or_else(|| Error::Format("dataset has no labels".into()))?;
        LabeledSpdDataset::new(self.matrices, labels)
    }

    pub fn into_unlabeled(self) -> Result<SpdDataset> {
        SpdDataset::new(self.matrices)
    }
}
