//! Synthetic image classification data for smoke training.
//!
//! Eight classes: four grating orientations (0, 45, 90, 135 degrees)
//! crossed with two color casts (warm, cool). Each sample is a 32x32 RGB
//! grating with per-sample frequency and phase jitter plus pixel noise,
//! so the task is easy for a convolutional model but not solvable by a
//! single pixel. Generation is pure: sample `i` of a split depends only
//! on (seed, split, i), so datasets never need to be stored.
//!
//! Real images can be supplied instead through [`DiskDataset`]: a
//! directory of per-class subdirectories of uncompressed RGB files.
//! Each file is `RGB8` (4 byte magic), width u32 LE, height u32 LE, then
//! width*height*3 bytes of interleaved 8-bit RGB rows, top to bottom.
//! Class indices follow the sorted subdirectory names; files sort by
//! name within a class. The last ~10% of each class (by sorted order)
//! forms the validation split.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_EXTENT: usize = 32;
pub const IMAGE_CHANNELS: usize = 3;
pub const CLASSES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    /// Disjoint stream ranges keep the splits independent under one seed.
    fn stream_base(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 1 << 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyDataset {
    seed: u64,
    split: Split,
    len: usize,
}

impl ToyDataset {
    pub fn new(split: Split, len: usize, seed: u64) -> Self {
        ToyDataset { seed, split, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Pixels (channel-major, 3*32*32, roughly in [-1, 1]) and the label.
    pub fn sample<E: Element>(&self, index: usize) -> (Vec<E>, usize) {
        let label = index % CLASSES;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.split.stream_base() + index as u64);

        let orient = (label % 4) as f64 * std::f64::consts::FRAC_PI_4;
        let warm = label < 4;
        let freq: f64 = rng.gen_range(2.0..4.0);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let (dy, dx) = (orient.sin(), orient.cos());

        let hw = IMAGE_EXTENT * IMAGE_EXTENT;
        let mut pixels = vec![E::ZERO; IMAGE_CHANNELS * hw];
        for y in 0..IMAGE_EXTENT {
            for x in 0..IMAGE_EXTENT {
                let t = (x as f64 * dx + y as f64 * dy) / IMAGE_EXTENT as f64;
                let g = (std::f64::consts::TAU * freq * t + phase).sin();
                let base = 0.5 + 0.25 * g;
                let tint = 0.2;
                let (r, gch, b) = if warm {
                    (base + tint, base, base - tint)
                } else {
                    (base - tint, base, base + tint)
                };
                for (c, v) in [r, gch, b].into_iter().enumerate() {
                    let noise: f64 = rng.gen_range(-0.05..0.05);
                    let v = (v + noise).clamp(0.0, 1.0);
                    pixels[c * hw + y * IMAGE_EXTENT + x] = E::from_f64((v - 0.5) / 0.5);
                }
            }
        }
        (pixels, label)
    }

    /// Stack the given sample indices into an NCHW batch.
    pub fn batch<E: Element>(&self, indices: &[usize]) -> Result<(Tensor<E>, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::EmptyReduction("batch"));
        }
        let sample_len = IMAGE_CHANNELS * IMAGE_EXTENT * IMAGE_EXTENT;
        let mut data = Vec::with_capacity(indices.len() * sample_len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let (pixels, label) = self.sample::<E>(i);
            data.extend_from_slice(&pixels);
            labels.push(label);
        }
        let x = Tensor::from_vec(
            &[indices.len(), IMAGE_CHANNELS, IMAGE_EXTENT, IMAGE_EXTENT],
            data,
        )?;
        Ok((x, labels))
    }
}

/// Magic prefix of the raw image files accepted by [`DiskDataset`].
pub const IMAGE_MAGIC: &[u8; 4] = b"RGB8";

const IMAGE_HEADER_LEN: usize = 12;

/// Images stored as `root/<class>/<file>` in the raw format described in
/// the module docs. Both directory levels are sorted by name, so index,
/// label, and split assignments are stable across runs and platforms.
#[derive(Debug, Clone)]
pub struct DiskDataset {
    class_names: Vec<String>,
    entries: Vec<(PathBuf, usize)>,
    height: usize,
    width: usize,
}

impl DiskDataset {
    /// Scan `root` and keep one split: per class, the last ~10% of files
    /// (at least one) validate and the rest train. Every image header is
    /// checked here so malformed files fail the open, not step 37.
    pub fn open(root: &Path, split: Split) -> Result<Self> {
        let mut class_dirs: Vec<(String, PathBuf)> = Vec::new();
        for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
            let entry = entry.map_err(|e| Error::io(root, e))?;
            if entry.path().is_dir() {
                let name = entry.file_name().to_string_lossy().into_owned();
                class_dirs.push((name, entry.path()));
            }
        }
        if class_dirs.is_empty() {
            return Err(Error::Dataset(format!(
                "no class directories under {}",
                root.display()
            )));
        }
        class_dirs.sort();

        let mut class_names = Vec::with_capacity(class_dirs.len());
        let mut entries = Vec::new();
        let mut extent: Option<(usize, usize)> = None;
        for (label, (name, dir)) in class_dirs.into_iter().enumerate() {
            let mut files: Vec<PathBuf> = Vec::new();
            for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
                let entry = entry.map_err(|e| Error::io(&dir, e))?;
                if entry.path().is_file() {
                    files.push(entry.path());
                }
            }
            if files.is_empty() {
                return Err(Error::Dataset(format!(
                    "class directory {} holds no files",
                    dir.display()
                )));
            }
            files.sort();
            for file in &files {
                let (h, w) = read_image_header(file)?;
                match extent {
                    None => extent = Some((h, w)),
                    Some(e) if e != (h, w) => {
                        return Err(Error::Dataset(format!(
                            "{} is {w}x{h} but earlier images are {}x{}",
                            file.display(),
                            e.1,
                            e.0
                        )));
                    }
                    Some(_) => {}
                }
            }
            let val = if files.len() >= 2 { (files.len() / 10).max(1) } else { 0 };
            let keep = match split {
                Split::Train => &files[..files.len() - val],
                Split::Val => &files[files.len() - val..],
            };
            for file in keep {
                entries.push((file.clone(), label));
            }
            class_names.push(name);
        }
        if entries.is_empty() {
            return Err(Error::Dataset(format!(
                "{} split of {} is empty; each class needs at least 2 files",
                split.name(),
                root.display()
            )));
        }
        let (height, width) = extent.expect("classes are non-empty");
        Ok(DiskDataset { class_names, entries, height, width })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// (height, width) shared by every image in the tree.
    pub fn image_extent(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Pixels (channel-major, standardized to roughly [-1, 1]) and the label.
    pub fn sample<E: Element>(&self, index: usize) -> Result<(Vec<E>, usize)> {
        let (path, label) = &self.entries[index];
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (h, w) = parse_image_header(path, &bytes)?;
        if (h, w) != (self.height, self.width) {
            return Err(Error::Dataset(format!(
                "{} changed extent since the dataset was opened",
                path.display()
            )));
        }
        let hw = h * w;
        let mut pixels = vec![E::ZERO; IMAGE_CHANNELS * hw];
        for i in 0..hw {
            for c in 0..IMAGE_CHANNELS {
                let v = bytes[IMAGE_HEADER_LEN + i * IMAGE_CHANNELS + c] as f64;
                pixels[c * hw + i] = E::from_f64(v / 127.5 - 1.0);
            }
        }
        Ok((pixels, *label))
    }

    /// Stack the given sample indices into an NCHW batch.
    pub fn batch<E: Element>(&self, indices: &[usize]) -> Result<(Tensor<E>, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::EmptyReduction("batch"));
        }
        let sample_len = IMAGE_CHANNELS * self.height * self.width;
        let mut data = Vec::with_capacity(indices.len() * sample_len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let (pixels, label) = self.sample::<E>(i)?;
            data.extend_from_slice(&pixels);
            labels.push(label);
        }
        let x = Tensor::from_vec(
            &[indices.len(), IMAGE_CHANNELS, self.height, self.width],
            data,
        )?;
        Ok((x, labels))
    }
}

fn read_image_header(path: &Path) -> Result<(usize, usize)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_image_header(path, &bytes)
}

fn parse_image_header(path: &Path, bytes: &[u8]) -> Result<(usize, usize)> {
    if bytes.len() < IMAGE_HEADER_LEN || &bytes[..4] != IMAGE_MAGIC {
        return Err(Error::Dataset(format!(
            "{} is not a raw RGB8 image",
            path.display()
        )));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if w == 0 || h == 0 {
        return Err(Error::Dataset(format!(
            "{} declares a zero extent",
            path.display()
        )));
    }
    let expect = IMAGE_HEADER_LEN + w * h * IMAGE_CHANNELS;
    if bytes.len() != expect {
        return Err(Error::Dataset(format!(
            "{} holds {} bytes, expected {expect} for {w}x{h}",
            path.display(),
            bytes.len()
        )));
    }
    Ok((h, w))
}

/// Either data provider behind one face, so the trainer does not care
/// where batches come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    Toy(ToyDataset),
    Disk(DiskDataset),
}

impl DataSource {
    pub fn len(&self) -> usize {
        match self {
            DataSource::Toy(d) => d.len(),
            DataSource::Disk(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        match self {
            DataSource::Toy(_) => CLASSES,
            DataSource::Disk(d) => d.classes(),
        }
    }

    /// Crop/flip jitter helps real photographs and costs the toy gratings
    /// their determinism, so the default follows the source.
    pub fn augment_by_default(&self) -> bool {
        matches!(self, DataSource::Disk(_))
    }

    pub fn batch<E: Element>(&self, indices: &[usize]) -> Result<(Tensor<E>, Vec<usize>)> {
        match self {
            DataSource::Toy(d) => d.batch(indices),
            DataSource::Disk(d) => d.batch(indices),
        }
    }
}

/// Zero-pad 4 pixels, crop back to the original extent at a random offset,
/// then mirror horizontally with probability 1/2, independently per sample.
pub fn augment_batch<E: Element>(x: &Tensor<E>, rng: &mut impl Rng) -> Result<Tensor<E>> {
    const PAD: isize = 4;
    let shape = x.shape().to_vec();
    if shape.len() != 4 {
        return Err(Error::ShapeMismatch {
            op: "augment_batch",
            detail: format!("expected NCHW input, got shape {shape:?}"),
        });
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let src = x.data();
    let mut out = vec![E::ZERO; src.len()];
    for i in 0..n {
        let dy = rng.gen_range(-PAD..=PAD);
        let dx = rng.gen_range(-PAD..=PAD);
        let flip = rng.gen_bool(0.5);
        for ch in 0..c {
            let plane = (i * c + ch) * h * w;
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for xo in 0..w {
                    let sx = if flip { w - 1 - xo } else { xo } as isize + dx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    out[plane + y * w + xo] = src[plane + sy as usize * w + sx as usize];
                }
            }
        }
    }
    drop(src);
    Tensor::from_vec(&shape, out)
}
