/*
Copyright 2026 The admm-prune Authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

//! Image classification datasets: a synthetic generator, IDX and CSV
//! readers/writers, splitting and deterministic mini-batch iteration.
//!
//! IDX files are big-endian: a `u32` magic (`0x00000803` for `u8` images
//! `[count, rows, cols]`, `0x00000801` for `u8` labels `[count]`), one `u32`
//! per dimension, then the bytes. A 2-image 2x2 file is
//!
//! ```text
//! 00 00 08 03  00 00 00 02  00 00 00 02  00 00 00 02  <8 pixel bytes>
//! ```
//!
//! CSV rows are `label,p0,p1,...` with `maps * height * width` pixel values
//! in `[0, 1]`, row-major per map.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::layer::Shape;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("empty dataset")]
    Empty,
    #[error("csv line {line}: {detail}")]
    Csv { line: usize, detail: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[count, maps, height, width]`, values in `[0, 1]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, class_count: usize, split: Split) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(DataError::DimensionMismatch(format!(
                "images must be [count, maps, h, w], got {:?}",
                images.shape()
            ))
            .into());
        }
        if images.shape()[0] != labels.len() {
            return Err(DataError::CountMismatch {
                images: images.shape()[0],
                labels: labels.len(),
            }
            .into());
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: class_count,
            });
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("pixel values must lie in [0, 1]".into()));
        }
        Ok(Dataset {
            images,
            labels,
            class_count,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> Shape {
        let s = self.images.shape();
        Shape::new(s[1], s[2], s[3])
    }

    /// Gathers `indices` into a new batch tensor and label list.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let shape = self.sample_shape();
        let mut data = Vec::with_capacity(indices.len() * shape.len());
        for &i in indices {
            data.extend_from_slice(self.images.outer(i));
        }
        let images = Tensor::from_vec(&[indices.len(), shape.maps, shape.height, shape.width], data)
            .expect("consistent sizes");
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }

    fn subset(&self, indices: &[usize], split: Split) -> Dataset {
        let (images, labels) = self.gather(indices);
        Dataset {
            images,
            labels,
            class_count: self.class_count,
            split,
        }
    }

    /// First `train_count` samples become the train split, the rest the
    /// test split.
    pub fn split_at(&self, train_count: usize) -> Result<(Dataset, Dataset)> {
        if train_count == 0 || train_count >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot split {} samples at {train_count}",
                self.len()
            )));
        }
        let train: Vec<usize> = (0..train_count).collect();
        let test: Vec<usize> = (train_count..self.len()).collect();
        Ok((self.subset(&train, Split::Train), self.subset(&test, Split::Test)))
    }

    /// Seeded random split with `test_count` held-out samples.
    pub fn shuffle_split(&self, test_count: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        if test_count == 0 || test_count >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot hold out {test_count} of {} samples",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (test, train) = order.split_at(test_count);
        Ok((self.subset(train, Split::Train), self.subset(test, Split::Test)))
    }

    /// Stretches every image to span `[0, 1]` (constant images become 0).
    pub fn contrast_normalize(&mut self) {
        let per = self.sample_shape().len();
        for img in self.images.data_mut().chunks_mut(per) {
            let lo = img.iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = img.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let span = hi - lo;
            for v in img.iter_mut() {
                *v = if span > 0.0 { ((*v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
            }
        }
    }
}

/// Deterministic template of `class`: a bright bar through the centre at
/// angle `pi * class / classes` plus a blob on a ring at angle
/// `2 pi * class / classes`, over a dim background.
pub fn class_template(class: usize, classes: usize, h: usize, w: usize) -> Vec<f32> {
    let bar_angle = PI * class as f64 / classes as f64;
    let blob_angle = 2.0 * PI * class as f64 / classes as f64;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let scale = h.min(w) as f64;
    let (by, bx) = (
        cy + 0.28 * scale * blob_angle.sin(),
        cx + 0.28 * scale * blob_angle.cos(),
    );
    let bar_width = (0.08 * scale).max(0.75);
    let blob_sigma = (0.1 * scale).max(0.75);
    let (s, c) = bar_angle.sin_cos();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            // distance from the line through the centre with direction (c, s)
            let d = (dx * s - dy * c).abs();
            let bar = 0.7 * (-(d * d) / (2.0 * bar_width * bar_width)).exp();
            let r2 = (y as f64 - by).powi(2) + (x as f64 - bx).powi(2);
            let blob = 0.5 * (-r2 / (2.0 * blob_sigma * blob_sigma)).exp();
            out.push((0.1 + bar + blob).min(1.0) as f32);
        }
    }
    out
}

/// Synthetic single-map dataset. Labels cycle through the classes; each
/// image is its class template plus `N(0, noise_sd)` pixel noise, clipped
/// to `[0, 1]`.
pub fn synth_generate(
    seed: u64,
    count: usize,
    h: usize,
    w: usize,
    classes: usize,
    noise_sd: f64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {classes}")));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise_sd must be >= 0, got {noise_sd}")));
    }
    if count == 0 || h == 0 || w == 0 {
        return Err(DataError::Empty.into());
    }
    let templates: Vec<Vec<f32>> = (0..classes).map(|c| class_template(c, classes, h, w)).collect();
    let noise = Normal::new(0.0, noise_sd).expect("valid sd");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(count * h * w);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % classes;
        labels.push(class);
        for &t in &templates[class] {
            let v = if noise_sd > 0.0 { t as f64 + noise.sample(&mut rng) } else { t as f64 };
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    let images = Tensor::from_vec(&[count, 1, h, w], data)?;
    Dataset::new(images, labels, classes, Split::Train)
}

/// Mini-batches over one epoch in a permutation fixed by `(seed, epoch)`.
pub struct BatchIter<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = (Tensor, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.data.gather(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}

/// The sample order used by [`batch_iter`].
pub fn epoch_permutation(count: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng);
    order
}

pub fn batch_iter(ds: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<BatchIter<'_>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    if ds.is_empty() {
        return Err(DataError::Empty.into());
    }
    Ok(BatchIter {
        data: ds,
        order: epoch_permutation(ds.len(), seed, epoch),
        batch_size,
        pos: 0,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes.get(self.pos..self.pos + 4).ok_or_else(|| {
            DataError::DimensionMismatch(format!("{} header is truncated", self.what))
        })?;
        self.pos += 4;
        Ok(u32::from_be_bytes(b.try_into().expect("4 bytes")))
    }

    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

fn idx_header<'a>(bytes: &'a [u8], magic: u32, what: &'static str) -> Result<(Vec<usize>, &'a [u8])> {
    let mut cur = Cursor { bytes, pos: 0, what };
    let found = cur.u32()?;
    if found != magic {
        return Err(DataError::BadMagic {
            expected: magic,
            found,
        }
        .into());
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|_| cur.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let expected: usize = dims.iter().product();
    if cur.rest().len() != expected {
        return Err(DataError::DimensionMismatch(format!(
            "{what} header {dims:?} implies {expected} bytes, file has {}",
            cur.rest().len()
        ))
        .into());
    }
    Ok((dims, cur.rest()))
}

/// Parses an IDX image/label pair held in memory.
pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Dataset> {
    let (dims, pixels) = idx_header(image_bytes, IDX_IMAGES_MAGIC, "image file")?;
    let (ldims, labels) = idx_header(label_bytes, IDX_LABELS_MAGIC, "label file")?;
    if dims[0] != ldims[0] {
        return Err(DataError::CountMismatch {
            images: dims[0],
            labels: ldims[0],
        }
        .into());
    }
    if dims.contains(&0) {
        return Err(DataError::Empty.into());
    }
    let labels: Vec<usize> = labels.iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let images = Tensor::from_vec(
        &[dims[0], 1, dims[1], dims[2]],
        pixels.iter().map(|&b| b as f32 / 255.0).collect(),
    )?;
    Dataset::new(images, labels, class_count, Split::Train)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    parse_idx(&fs::read(images_path)?, &fs::read(labels_path)?)
}

/// IDX encodings of a single-map dataset; pixels are rounded to bytes.
pub fn encode_idx(ds: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let shape = ds.sample_shape();
    if shape.maps != 1 {
        return Err(Error::InvalidArgument(format!(
            "IDX images hold one map, dataset has {}",
            shape.maps
        )));
    }
    if ds.class_count > 256 {
        return Err(Error::InvalidArgument("IDX labels are single bytes".into()));
    }
    let mut images = Vec::with_capacity(16 + ds.images.len());
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [ds.len(), shape.height, shape.width] {
        images.extend_from_slice(&(d as u32).to_be_bytes());
    }
    images.extend(ds.images.data().iter().map(|&v| (v * 255.0).round() as u8));

    let mut labels = Vec::with_capacity(8 + ds.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    labels.extend(ds.labels.iter().map(|&l| l as u8));
    Ok((images, labels))
}

pub fn write_idx(ds: &Dataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let (images, labels) = encode_idx(ds)?;
    fs::write(images_path, images)?;
    fs::write(labels_path, labels)?;
    Ok(())
}

/// Reads `label,p0,p1,...` rows of `shape.len()` pixels each.
pub fn load_csv(path: impl AsRef<Path>, shape: Shape, class_count: usize) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_io)?;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let line = n + 1;
        let record = record.map_err(|e| DataError::Csv {
            line,
            detail: e.to_string(),
        })?;
        if record.len() != shape.len() + 1 {
            return Err(DataError::Csv {
                line,
                detail: format!("expected {} fields, got {}", shape.len() + 1, record.len()),
            }
            .into());
        }
        let label: usize = record[0].parse().map_err(|_| DataError::Csv {
            line,
            detail: format!("bad label `{}`", &record[0]),
        })?;
        labels.push(label);
        for field in record.iter().skip(1) {
            let v: f32 = field.parse().map_err(|_| DataError::Csv {
                line,
                detail: format!("bad pixel `{field}`"),
            })?;
            data.push(v);
        }
    }
    if labels.is_empty() {
        return Err(DataError::Empty.into());
    }
    let images = Tensor::from_vec(&[labels.len(), shape.maps, shape.height, shape.width], data)?;
    Dataset::new(images, labels, class_count, Split::Train)
}

pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_io)?;
    for i in 0..ds.len() {
        let mut row = vec![ds.labels[i].to_string()];
        row.extend(ds.images.outer(i).iter().map(|v| v.to_string()));
        writer.write_record(&row).map_err(csv_io)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => DataError::Csv {
            line: 0,
            detail: format!("{other:?}"),
        }
        .into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn noiseless_samples_of_a_class_are_identical() {
        let ds = synth_generate(1, 12, 8, 8, 3, 0.0).unwrap();
        for i in 0..12 {
            assert_eq!(ds.images.outer(i), ds.images.outer(i % 3));
        }
        assert_ne!(ds.images.outer(0), ds.images.outer(1));
    }

    #[test]
    fn same_seed_same_data() {
        let a = synth_generate(42, 50, 16, 16, 2, 0.2).unwrap();
        let b = synth_generate(42, 50, 16, 16, 2, 0.2).unwrap();
        let bits = |d: &Dataset| d.images.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.labels, b.labels);
        let c = synth_generate(43, 50, 16, 16, 2, 0.2).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn synth_rejects_bad_parameters() {
        assert!(synth_generate(0, 10, 4, 4, 1, 0.1).is_err());
        assert!(synth_generate(0, 10, 4, 4, 2, -0.1).is_err());
    }

    /// Nearest-template classifier as an independent separability check.
    #[test]
    fn two_class_set_is_separable() {
        let ds = synth_generate(5, 400, 16, 16, 2, 0.1).unwrap();
        let templates: Vec<Vec<f32>> = (0..2).map(|c| class_template(c, 2, 16, 16)).collect();
        let mut hits = 0;
        for i in 0..ds.len() {
            let img = ds.images.outer(i);
            let dist = |t: &[f32]| -> f64 {
                img.iter().zip(t).map(|(a, b)| ((a - b) as f64).powi(2)).sum()
            };
            let pred = if dist(&templates[0]) <= dist(&templates[1]) { 0 } else { 1 };
            hits += (pred == ds.labels[i]) as usize;
        }
        assert!(hits as f64 / ds.len() as f64 >= 0.99, "{hits}/400");
    }

    #[test]
    fn batch_sizes_and_cover() {
        let ds = synth_generate(0, 10, 2, 2, 2, 0.0).unwrap();
        let sizes: Vec<usize> = batch_iter(&ds, 4, 3, 0).unwrap().map(|(_, l)| l.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let order = epoch_permutation(10, 3, 0);
        assert_eq!(order, epoch_permutation(10, 3, 0));
        assert_ne!(order, epoch_permutation(10, 3, 1));
        assert_eq!(order.iter().collect::<BTreeSet<_>>().len(), 10);
    }

    #[test]
    fn batch_iter_errors() {
        let ds = synth_generate(0, 4, 2, 2, 2, 0.0).unwrap();
        assert!(batch_iter(&ds, 0, 0, 0).is_err());
        let empty = Dataset {
            images: Tensor::zeros(&[0, 1, 2, 2]),
            labels: vec![],
            class_count: 2,
            split: Split::Train,
        };
        assert!(matches!(
            batch_iter(&empty, 2, 0, 0),
            Err(Error::Data(DataError::Empty))
        ));
    }

    fn two_by_two_pair() -> (Vec<u8>, Vec<u8>) {
        let images = vec![
            0, 0, 8, 3, // magic
            0, 0, 0, 2, // count
            0, 0, 0, 2, // rows
            0, 0, 0, 2, // cols
            0, 51, 102, 255, // image 0
            255, 204, 153, 0, // image 1
        ];
        let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 1, 0];
        (images, labels)
    }

    #[test]
    fn parses_hand_built_idx() {
        let (images, labels) = two_by_two_pair();
        let ds = parse_idx(&images, &labels).unwrap();
        assert_eq!(ds.images.shape(), &[2, 1, 2, 2]);
        assert_eq!(ds.labels, vec![1, 0]);
        let expected: Vec<f32> = [0u8, 51, 102, 255, 255, 204, 153, 0]
            .iter()
            .map(|&b| b as f32 / 255.0)
            .collect();
        assert_eq!(ds.images.data(), expected.as_slice());
    }

    #[test]
    fn idx_errors_are_distinct() {
        let (images, labels) = two_by_two_pair();
        assert!(matches!(
            parse_idx(&labels, &labels),
            Err(Error::Data(DataError::BadMagic { found: 0x801, .. }))
        ));
        let mut short = images.clone();
        short.pop();
        assert!(matches!(
            parse_idx(&short, &labels),
            Err(Error::Data(DataError::DimensionMismatch(_)))
        ));
        // 3 images, 2 labels
        let mut three = images[..16].to_vec();
        three[7] = 3;
        three.extend_from_slice(&images[16..]);
        three.extend_from_slice(&[1, 2, 3, 4]);
        assert!(matches!(
            parse_idx(&three, &labels),
            Err(Error::Data(DataError::CountMismatch { images: 3, labels: 2 }))
        ));
    }

    #[test]
    fn idx_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_generate(9, 20, 5, 4, 3, 0.3).unwrap();
        let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lbl.idx"));
        write_idx(&ds, &ip, &lp).unwrap();
        let back = load_idx(&ip, &lp).unwrap();
        assert_eq!(back.labels, ds.labels);
        for (a, b) in back.images.data().iter().zip(ds.images.data()) {
            assert_eq!((a * 255.0).round() as u8, (b * 255.0).round() as u8);
        }
        // Second round trip is exact at byte resolution.
        write_idx(&back, &ip, &lp).unwrap();
        assert_eq!(load_idx(&ip, &lp).unwrap(), back);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ds = synth_generate(2, 6, 3, 2, 2, 0.2).unwrap();
        write_csv(&ds, &path).unwrap();
        let back = load_csv(&path, Shape::new(1, 3, 2), 2).unwrap();
        assert_eq!(back, ds);

        fs::write(&path, "1, 0.5, 0.25\n0, 1.0\n").unwrap();
        assert!(matches!(
            load_csv(&path, Shape::new(1, 1, 2), 2),
            Err(Error::Data(DataError::Csv { line: 2, .. }))
        ));
        fs::write(&path, "1,0.5,0.25\n").unwrap();
        let one = load_csv(&path, Shape::new(1, 1, 2), 2).unwrap();
        assert_eq!(one.images.data(), &[0.5, 0.25]);
    }

    #[test]
    fn splits() {
        let ds = synth_generate(0, 10, 2, 2, 2, 0.1).unwrap();
        let (a, b) = ds.split_at(7).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        assert_eq!(b.split, Split::Test);
        let (a, b) = ds.shuffle_split(4, 1).unwrap();
        assert_eq!((a.len(), b.len()), (6, 4));
        assert!(ds.split_at(10).is_err());
    }

    #[test]
    fn contrast_normalization_spans_unit_interval() {
        let mut ds = synth_generate(0, 4, 4, 4, 2, 0.05).unwrap();
        ds.contrast_normalize();
        for i in 0..4 {
            let img = ds.images.outer(i);
            assert_eq!(img.iter().cloned().fold(f32::INFINITY, f32::min), 0.0);
            assert_eq!(img.iter().cloned().fold(f32::NEG_INFINITY, f32::max), 1.0);
        }
    }
}
