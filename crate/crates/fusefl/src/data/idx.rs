//! IDX (de-facto MNIST) file loading and writing.
//!
//! Images: big-endian magic 0x00000803, then N, rows, cols, then raw bytes.
//! Labels: big-endian magic 0x00000801, then N, then one byte per label.
//! Pixel bytes are scaled to [0, 1].

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Load(format!("truncated file: missing {what}")));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Load an image/label IDX pair into a dataset shaped [N, 1, rows, cols].
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = fs::read(images_path)
        .map_err(|e| Error::Load(format!("{}: {e}", images_path.display())))?;
    let lbl_bytes = fs::read(labels_path)
        .map_err(|e| Error::Load(format!("{}: {e}", labels_path.display())))?;

    let magic = read_u32_be(&img_bytes, 0, "image magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Load(format!(
            "bad magic in image file: 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}"
        )));
    }
    let n = read_u32_be(&img_bytes, 4, "image count")? as usize;
    let rows = read_u32_be(&img_bytes, 8, "image rows")? as usize;
    let cols = read_u32_be(&img_bytes, 12, "image cols")? as usize;

    let magic = read_u32_be(&lbl_bytes, 0, "label magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Load(format!(
            "bad magic in label file: 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}"
        )));
    }
    let n_labels = read_u32_be(&lbl_bytes, 4, "label count")? as usize;
    if n != n_labels {
        return Err(Error::Load(format!(
            "count mismatch: {n} images but {n_labels} labels"
        )));
    }
    if n == 0 {
        return Err(Error::Load("empty dataset".into()));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::Load(format!("degenerate image size {rows}x{cols}")));
    }

    let pixel_count = n * rows * cols;
    let pixels = &img_bytes[16..];
    if pixels.len() < pixel_count {
        return Err(Error::Load(format!(
            "truncated file: image data holds {} bytes, header wants {pixel_count}",
            pixels.len()
        )));
    }
    let label_data = &lbl_bytes[8..];
    if label_data.len() < n {
        return Err(Error::Load(format!(
            "truncated file: label data holds {} bytes, header wants {n}",
            label_data.len()
        )));
    }

    let values: Vec<f64> = pixels[..pixel_count]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    let labels: Vec<usize> = label_data[..n].iter().map(|&b| b as usize).collect();
    // MNIST-family files are ten-class even when a slice misses some digits.
    let num_classes = (labels.iter().max().copied().unwrap_or(0) + 1).max(10);
    Dataset::new(
        Tensor::new(vec![n, 1, rows, cols], values)?,
        labels,
        num_classes,
    )
}

/// Write a dataset back out as an IDX pair (used by tests and tooling).
/// Values are clamped to [0, 1] and quantized to bytes.
pub fn write_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let shape = ds.inputs.shape();
    let (n, rows, cols) = match shape {
        [n, 1, r, c] => (*n, *r, *c),
        other => {
            return Err(Error::Input(format!(
                "IDX writer expects [N,1,R,C] images, got {other:?}"
            )))
        }
    };
    let mut img = Vec::with_capacity(16 + n * rows * cols);
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(n as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    for &v in ds.inputs.values() {
        img.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    let mut lbl = Vec::with_capacity(8 + n);
    lbl.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(n as u32).to_be_bytes());
    for &y in &ds.labels {
        lbl.push(y as u8);
    }
    fs::File::create(images_path)?.write_all(&img)?;
    fs::File::create(labels_path)?.write_all(&lbl)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(n: u32, rows: u32, cols: u32) -> (Vec<u8>, Vec<u8>) {
        let mut img = Vec::new();
        img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&n.to_be_bytes());
        img.extend_from_slice(&rows.to_be_bytes());
        img.extend_from_slice(&cols.to_be_bytes());
        for i in 0..(n * rows * cols) {
            img.push((i % 256) as u8);
        }
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        lbl.extend_from_slice(&n.to_be_bytes());
        for i in 0..n {
            lbl.push((i % 10) as u8);
        }
        (img, lbl)
    }

    fn write_pair(dir: &Path, img: &[u8], lbl: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("images.idx3");
        let lp = dir.join("labels.idx1");
        fs::write(&ip, img).unwrap();
        fs::write(&lp, lbl).unwrap();
        (ip, lp)
    }

    #[test]
    fn header_fields_drive_shape() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = fixture(12, 7, 5);
        let (ip, lp) = write_pair(dir.path(), &img, &lbl);
        let ds = load_idx(&ip, &lp).unwrap();
        // oracle: read the header fields back directly
        assert_eq!(u32::from_be_bytes(img[4..8].try_into().unwrap()), 12);
        assert_eq!(ds.inputs.shape(), &[12, 1, 7, 5]);
        assert_eq!(ds.len(), 12);
        assert_eq!(ds.num_classes, 10);
        // pixel scaling into [0,1]
        assert!(ds.inputs.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!((ds.inputs.values()[1] - 1.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (img, mut lbl) = fixture(3, 2, 2);
        lbl[3] = 0x42;
        let (ip, lp) = write_pair(dir.path(), &img, &lbl);
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn empty_dataset_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = fixture(0, 2, 2);
        let (ip, lp) = write_pair(dir.path(), &img, &lbl);
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(err.to_string().contains("empty dataset"), "{err}");
    }

    #[test]
    fn count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (img, _) = fixture(3, 2, 2);
        let (_, lbl) = fixture(4, 2, 2);
        let (ip, lp) = write_pair(dir.path(), &img, &lbl);
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(err.to_string().contains("count mismatch"), "{err}");
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (mut img, lbl) = fixture(3, 2, 2);
        img.truncate(img.len() - 2);
        let (ip, lp) = write_pair(dir.path(), &img, &lbl);
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn write_then_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = fixture(5, 3, 3);
        let (ip, lp) = write_pair(dir.path(), &img, &lbl);
        let ds = load_idx(&ip, &lp).unwrap();
        let ip2 = dir.path().join("im2.idx3");
        let lp2 = dir.path().join("lb2.idx1");
        write_idx(&ds, &ip2, &lp2).unwrap();
        assert_eq!(fs::read(&ip2).unwrap(), img);
        assert_eq!(fs::read(&lp2).unwrap(), lbl);
    }
}
