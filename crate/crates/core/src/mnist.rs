//! IDX-format MNIST ingestion.
//!
//! Files may be raw or gzip-compressed; compression is chosen by a `.gz`
//! extension.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;

#[derive(Debug, Clone, PartialEq)]
pub struct MnistSet {
    images: Vec<u8>,
    labels: Vec<u8>,
}

impl MnistSet {
    pub fn new(images: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() * PIXELS {
            return Err(Error::Dataset(format!(
                "{} image bytes do not match {} labels of {PIXELS} pixels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::Dataset(format!("label {bad} outside 0-9")));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.images[i * PIXELS..(i + 1) * PIXELS]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.images
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut images = Vec::with_capacity(indices.len() * PIXELS);
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Self {
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// First `n` indices (dataset order) carrying each of `classes`.
    pub fn first_of_classes(&self, classes: &[u8], n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(classes.len() * n);
        for &c in classes {
            out.extend(
                self.labels
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| l == c)
                    .map(|(i, _)| i)
                    .take(n),
            );
        }
        out
    }
}

fn open(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let mut bytes = Vec::new();
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(BufReader::new(file)).read_to_end(&mut bytes)?;
    } else {
        BufReader::new(file).read_to_end(&mut bytes)?;
    }
    Ok(bytes)
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::Dataset(format!(
                "{}: truncated header, expected at least {} bytes, found {}",
                path.display(),
                at + 4,
                bytes.len()
            ))
        })
}

fn check_magic(found: u32, expected: u32, path: &Path) -> Result<()> {
    if found != expected {
        return Err(Error::Dataset(format!(
            "{}: magic 0x{found:08x}, expected 0x{expected:08x}",
            path.display()
        )));
    }
    Ok(())
}

fn check_length(bytes: &[u8], expected: usize, path: &Path) -> Result<()> {
    if bytes.len() != expected {
        return Err(Error::Dataset(format!(
            "{}: expected {expected} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(())
}

pub fn parse_images(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(be_u32(bytes, 0, path)?, IMAGE_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    if rows != SIDE || cols != SIDE {
        return Err(Error::Dataset(format!(
            "{}: images are {rows}x{cols}, expected {SIDE}x{SIDE}",
            path.display()
        )));
    }
    check_length(bytes, 16 + count * PIXELS, path)?;
    Ok(bytes[16..].to_vec())
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(be_u32(bytes, 0, path)?, LABEL_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    check_length(bytes, 8 + count, path)?;
    Ok(bytes[8..].to_vec())
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<MnistSet> {
    let images = parse_images(&open(images_path)?, images_path)?;
    let labels = parse_labels(&open(labels_path)?, labels_path)?;
    if images.len() / PIXELS != labels.len() {
        return Err(Error::Dataset(format!(
            "{} images but {} labels",
            images.len() / PIXELS,
            labels.len()
        )));
    }
    MnistSet::new(images, labels)
}

fn find(dir: &Path, stem: &str) -> PathBuf {
    let raw = dir.join(stem);
    let gz = dir.join(format!("{stem}.gz"));
    if !raw.exists() && gz.exists() {
        gz
    } else {
        raw
    }
}

/// Loads `(train, test)` from the four standard file names in `dir`.
pub fn load_dir(dir: &Path) -> Result<(MnistSet, MnistSet)> {
    let train = load_mnist_idx(
        &find(dir, "train-images-idx3-ubyte"),
        &find(dir, "train-labels-idx1-ubyte"),
    )?;
    let test = load_mnist_idx(
        &find(dir, "t10k-images-idx3-ubyte"),
        &find(dir, "t10k-labels-idx1-ubyte"),
    )?;
    Ok((train, test))
}

/// Writes a set back out as IDX (used by fixtures and tests).
pub fn write_idx(set: &MnistSet, images_path: &Path, labels_path: &Path) -> Result<()> {
    let mut img = Vec::with_capacity(16 + set.images.len());
    for v in [IMAGE_MAGIC, set.len() as u32, SIDE as u32, SIDE as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(&set.images);
    let mut lab = Vec::with_capacity(8 + set.len());
    for v in [LABEL_MAGIC, set.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(&set.labels);
    std::fs::write(images_path, img)?;
    std::fs::write(labels_path, lab)?;
    Ok(())
}
