//! Reader and writer for the IDX binary format used by MNIST-family
//! datasets: big-endian headers, u8 payload, magic 0x803 for image files
//! and 0x801 for label files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::data::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::Real;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(format!("idx file truncated reading {what}")))?;
    Ok(u32::from_be_bytes(buf))
}

fn expect_end(r: &mut impl Read, path: &Path) -> Result<()> {
    let mut buf = [0u8; 1];
    if r.read(&mut buf)? != 0 {
        return Err(Error::format(format!(
            "idx file {} has trailing bytes",
            path.display()
        )));
    }
    Ok(())
}

/// Loads an image/label file pair into a dataset. Pixel bytes are scaled
/// to `[0, 1]` by dividing by 255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let mut ir = BufReader::new(File::open(images_path)?);
    let magic = read_u32(&mut ir, "image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(format!(
            "{}: expected image magic {IMAGE_MAGIC:#010x}, found {magic:#010x}",
            images_path.display()
        )));
    }
    let count = read_u32(&mut ir, "image count")? as usize;
    let height = read_u32(&mut ir, "image height")? as usize;
    let width = read_u32(&mut ir, "image width")? as usize;
    let dim = height * width;
    if dim == 0 {
        return Err(Error::format(format!(
            "{}: zero-sized images",
            images_path.display()
        )));
    }
    let mut pixels = vec![0u8; count * dim];
    ir.read_exact(&mut pixels)
        .map_err(|_| Error::format(format!("{}: truncated pixel data", images_path.display())))?;
    expect_end(&mut ir, images_path)?;

    let mut lr = BufReader::new(File::open(labels_path)?);
    let magic = read_u32(&mut lr, "label magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(format!(
            "{}: expected label magic {LABEL_MAGIC:#010x}, found {magic:#010x}",
            labels_path.display()
        )));
    }
    let label_count = read_u32(&mut lr, "label count")? as usize;
    if label_count != count {
        return Err(Error::format(format!(
            "image file holds {count} samples but label file holds {label_count}"
        )));
    }
    let mut label_bytes = vec![0u8; count];
    lr.read_exact(&mut label_bytes)
        .map_err(|_| Error::format(format!("{}: truncated label data", labels_path.display())))?;
    expect_end(&mut lr, labels_path)?;

    let inputs = Array2::from_shape_vec(
        (count, dim),
        pixels.into_iter().map(|b| b as Real / 255.0).collect(),
    )
    .map_err(|e| Error::shape(e.to_string()))?;
    let labels: Vec<usize> = label_bytes.into_iter().map(|b| b as usize).collect();
    let num_classes = labels.iter().copied().max().map_or(1, |m| m + 1);
    LabeledDataset::new(inputs, labels, num_classes)
}

/// Writes rows as an IDX image file, quantizing values to u8 by
/// `round(v * 255)`.
pub fn write_idx_images(
    path: &Path,
    images: &Array2<Real>,
    height: usize,
    width: usize,
) -> Result<()> {
    if height * width != images.ncols() {
        return Err(Error::shape(format!(
            "rows have {} features, {height}x{width} needs {}",
            images.ncols(),
            height * width
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    w.write_all(&(images.nrows() as u32).to_be_bytes())?;
    w.write_all(&(height as u32).to_be_bytes())?;
    w.write_all(&(width as u32).to_be_bytes())?;
    for v in images.iter() {
        let q = (*v as f64 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8;
        w.write_all(&[q])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes labels as an IDX label file. Labels above 255 are rejected.
pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    if let Some(bad) = labels.iter().find(|l| **l > 255) {
        return Err(Error::invalid(format!("label {bad} does not fit in a byte")));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&LABEL_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    for l in labels {
        w.write_all(&[*l as u8])?;
    }
    w.flush()?;
    Ok(())
}
