//! IDX image/label files: big-endian headers, unsigned-byte payloads.

use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::grad::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn fmt_err<T>(detail: impl Into<String>) -> Result<T> {
    Err(Error::Format {
        format: "idx",
        detail: detail.into(),
    })
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    match bytes.get(at..at + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => fmt_err(format!("truncated header reading {what}")),
    }
}

/// Decodes an image file and a label file already in memory. Pixels are divided by 255.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = be_u32(images, 0, "image magic")?;
    if magic != IMAGES_MAGIC {
        return fmt_err(format!(
            "image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        ));
    }
    let lmagic = be_u32(labels, 0, "label magic")?;
    if lmagic != LABELS_MAGIC {
        return fmt_err(format!(
            "label magic {lmagic:#010x}, expected {LABELS_MAGIC:#010x}"
        ));
    }
    let n = be_u32(images, 4, "image count")? as usize;
    let rows = be_u32(images, 8, "row count")? as usize;
    let cols = be_u32(images, 12, "column count")? as usize;
    let nl = be_u32(labels, 4, "label count")? as usize;
    if n != nl {
        return fmt_err(format!("{n} images but {nl} labels"));
    }
    let d = rows * cols;
    let pixels = match images.get(16..16 + n * d) {
        Some(p) if images.len() == 16 + n * d => p,
        Some(_) => return fmt_err("trailing bytes after image payload"),
        None => return fmt_err(format!("image payload truncated: need {} bytes", n * d)),
    };
    let label_bytes = match labels.get(8..8 + n) {
        Some(l) if labels.len() == 8 + n => l,
        Some(_) => return fmt_err("trailing bytes after label payload"),
        None => return fmt_err(format!("label payload truncated: need {n} bytes")),
    };
    let features = Tensor::new(
        vec![n, d],
        pixels.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )?;
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, labels, classes)
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    parse_idx(&std::fs::read(images)?, &std::fs::read(labels)?)
}
