//! Dataset parsers for the canonical MNIST IDX and CIFAR binary
//! distributions, [-1, 1] normalization, and seeded shuffled batch streams.
//!
//! Images stay resident as raw bytes; normalization happens during batch
//! assembly. The affine map is `x / 127.5 - 1`, so byte 0 becomes -1 and
//! byte 255 becomes +1 exactly, and rounding the inverse recovers the
//! original bytes.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::{Scalar, Tensor};

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

pub const CIFAR10_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR10_TEST_FILE: &str = "test_batch.bin";
pub const CIFAR10_RECORD: usize = 3073; // label + 3 * 1024 pixels
pub const CIFAR100_RECORD: usize = 3074; // coarse + fine labels + pixels
pub const CIFAR_RECORDS_PER_FILE: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Cifar100,
}

impl DatasetKind {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Cifar100 => "cifar100",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" => Ok(DatasetKind::Cifar10),
            "cifar100" => Ok(DatasetKind::Cifar100),
            other => Err(Error::Data(format!("unknown dataset '{other}'"))),
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            DatasetKind::Mnist | DatasetKind::Cifar10 => 10,
            DatasetKind::Cifar100 => 100,
        }
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        match self {
            DatasetKind::Mnist => (1, 28, 28),
            DatasetKind::Cifar10 | DatasetKind::Cifar100 => (3, 32, 32),
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Loaded dataset: raw image bytes in channel-major planes plus labels,
/// immutable after load so concurrent runs can share one copy.
pub struct Dataset {
    pub kind: DatasetKind,
    pub train_images: Vec<u8>,
    pub train_labels: Vec<u8>,
    pub test_images: Vec<u8>,
    pub test_labels: Vec<u8>,
    pub image_shape: (usize, usize, usize),
    pub classes: usize,
}

impl Dataset {
    pub fn load(kind: DatasetKind, dir: &Path) -> Result<Self> {
        match kind {
            DatasetKind::Mnist => load_mnist(dir),
            DatasetKind::Cifar10 => load_cifar(dir, 10),
            DatasetKind::Cifar100 => load_cifar(dir, 100),
        }
    }

    pub fn train_len(&self) -> usize {
        self.train_labels.len()
    }

    pub fn test_len(&self) -> usize {
        self.test_labels.len()
    }

    pub fn pixels_per_image(&self) -> usize {
        let (c, h, w) = self.image_shape;
        c * h * w
    }

    fn validate(&self) -> Result<()> {
        let px = self.pixels_per_image();
        if self.train_images.len() != self.train_labels.len() * px {
            return Err(Error::Data(format!(
                "{}: train image bytes {} inconsistent with {} labels",
                self.kind,
                self.train_images.len(),
                self.train_labels.len()
            )));
        }
        if self.test_images.len() != self.test_labels.len() * px {
            return Err(Error::Data(format!(
                "{}: test image bytes {} inconsistent with {} labels",
                self.kind,
                self.test_images.len(),
                self.test_labels.len()
            )));
        }
        for (i, &l) in self.train_labels.iter().chain(&self.test_labels).enumerate() {
            if l as usize >= self.classes {
                return Err(Error::Data(format!(
                    "{}: label {l} at position {i} out of range for {} classes",
                    self.kind, self.classes
                )));
            }
        }
        Ok(())
    }
}

pub fn normalize_pixel(b: u8) -> f32 {
    b as f32 / 127.5 - 1.0
}

pub fn denormalize_pixel(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round() as u8
}

// -- MNIST ------------------------------------------------------------------

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, file: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            file: file.into(),
            offset: offset as u64,
            detail: "truncated header".into(),
        })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Parse one IDX image file: big-endian magic 0x00000803, then count, rows,
/// cols, then raw bytes.
pub fn parse_idx_images(bytes: &[u8], file: &str) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, file)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            file: file.into(),
            offset: 0,
            detail: format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4, file)? as usize;
    let rows = be_u32(bytes, 8, file)? as usize;
    let cols = be_u32(bytes, 12, file)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Format {
            file: file.into(),
            offset: bytes.len().min(expected) as u64,
            detail: format!(
                "file holds {} bytes but header promises {expected} ({count} x {rows} x {cols})",
                bytes.len()
            ),
        });
    }
    Ok((count, rows, cols, &bytes[16..]))
}

/// Parse one IDX label file: big-endian magic 0x00000801, then count.
pub fn parse_idx_labels(bytes: &[u8], file: &str) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, file)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            file: file.into(),
            offset: 0,
            detail: format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4, file)? as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(Error::Format {
            file: file.into(),
            offset: bytes.len().min(expected) as u64,
            detail: format!("file holds {} bytes but header promises {expected}", bytes.len()),
        });
    }
    Ok(&bytes[8..])
}

/// Load the four-file IDX distribution from a directory. The image counts
/// are whatever the files declare; the canonical split is 60k/10k.
pub fn load_mnist(dir: &Path) -> Result<Dataset> {
    let mut parts: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
    for pair in [(0usize, 1usize), (2, 3)] {
        let img_path = dir.join(MNIST_FILES[pair.0]);
        let lab_path = dir.join(MNIST_FILES[pair.1]);
        let img_bytes = read_file(&img_path)?;
        let lab_bytes = read_file(&lab_path)?;
        let (count, rows, cols, pixels) =
            parse_idx_images(&img_bytes, &img_path.display().to_string())?;
        if (rows, cols) != (28, 28) {
            return Err(Error::Format {
                file: img_path.display().to_string(),
                offset: 8,
                detail: format!("expected 28x28 images, got {rows}x{cols}"),
            });
        }
        let labels = parse_idx_labels(&lab_bytes, &lab_path.display().to_string())?;
        if labels.len() != count {
            return Err(Error::Format {
                file: lab_path.display().to_string(),
                offset: 4,
                detail: format!("{} labels but image file holds {count} images", labels.len()),
            });
        }
        parts.push((pixels.to_vec(), labels.to_vec()));
    }
    let (test_images, test_labels) = parts.pop().unwrap();
    let (train_images, train_labels) = parts.pop().unwrap();
    let ds = Dataset {
        kind: DatasetKind::Mnist,
        train_images,
        train_labels,
        test_images,
        test_labels,
        image_shape: (1, 28, 28),
        classes: 10,
    };
    ds.validate()?;
    Ok(ds)
}

// -- CIFAR ------------------------------------------------------------------

fn parse_cifar_file(
    bytes: &[u8],
    file: &str,
    record: usize,
    expected_records: usize,
    fine_label_offset: usize,
    images: &mut Vec<u8>,
    labels: &mut Vec<u8>,
) -> Result<()> {
    if bytes.len() != record * expected_records {
        let whole = bytes.len() / record;
        return Err(Error::Format {
            file: file.into(),
            offset: bytes.len() as u64,
            detail: format!(
                "expected {expected_records} records of {record} bytes, file holds {} bytes \
                 ({whole} whole records)",
                bytes.len()
            ),
        });
    }
    for rec in bytes.chunks_exact(record) {
        labels.push(rec[fine_label_offset]);
        images.extend_from_slice(&rec[fine_label_offset + 1..]);
    }
    Ok(())
}

/// Load CIFAR-10 (variant 10: five train batches plus a test batch of
/// label+3072-pixel records) or CIFAR-100 (variant 100: train.bin/test.bin
/// with coarse+fine label bytes; the fine label is used).
pub fn load_cifar(dir: &Path, variant: usize) -> Result<Dataset> {
    let (kind, record, fine_offset) = match variant {
        10 => (DatasetKind::Cifar10, CIFAR10_RECORD, 0usize),
        100 => (DatasetKind::Cifar100, CIFAR100_RECORD, 1usize),
        other => return Err(Error::Data(format!("cifar variant must be 10 or 100, got {other}"))),
    };
    let mut train_images = Vec::new();
    let mut train_labels = Vec::new();
    let mut test_images = Vec::new();
    let mut test_labels = Vec::new();
    match kind {
        DatasetKind::Cifar10 => {
            for name in CIFAR10_TRAIN_FILES {
                let path = dir.join(name);
                parse_cifar_file(
                    &read_file(&path)?,
                    &path.display().to_string(),
                    record,
                    CIFAR_RECORDS_PER_FILE,
                    fine_offset,
                    &mut train_images,
                    &mut train_labels,
                )?;
            }
            let path = dir.join(CIFAR10_TEST_FILE);
            parse_cifar_file(
                &read_file(&path)?,
                &path.display().to_string(),
                record,
                CIFAR_RECORDS_PER_FILE,
                fine_offset,
                &mut test_images,
                &mut test_labels,
            )?;
        }
        DatasetKind::Cifar100 => {
            let path = dir.join("train.bin");
            parse_cifar_file(
                &read_file(&path)?,
                &path.display().to_string(),
                record,
                5 * CIFAR_RECORDS_PER_FILE,
                fine_offset,
                &mut train_images,
                &mut train_labels,
            )?;
            let path = dir.join("test.bin");
            parse_cifar_file(
                &read_file(&path)?,
                &path.display().to_string(),
                record,
                CIFAR_RECORDS_PER_FILE,
                fine_offset,
                &mut test_images,
                &mut test_labels,
            )?;
        }
        DatasetKind::Mnist => unreachable!(),
    }
    let ds = Dataset {
        kind,
        train_images,
        train_labels,
        test_images,
        test_labels,
        image_shape: (3, 32, 32),
        classes: kind.classes(),
    };
    ds.validate()?;
    Ok(ds)
}

// -- batches ----------------------------------------------------------------

/// Seeded shuffled view over the first `n` training examples. Each epoch's
/// permutation is a pure function of (seed, epoch).
#[derive(Debug, Clone)]
pub struct BatchStream {
    pub n: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if n == 0 || batch_size == 0 {
            return Err(Error::Parameter {
                name: "batch_stream",
                detail: format!("need n > 0 and batch_size > 0, got n={n}, batch_size={batch_size}"),
            });
        }
        Ok(BatchStream { n, batch_size, seed })
    }

    /// Fisher-Yates permutation of 0..n driven by the pinned ChaCha8 stream
    /// for (seed, 1 + epoch).
    pub fn permutation(&self, epoch: usize) -> Vec<u32> {
        let mut rng = stream_rng(self.seed, 1 + epoch as u64);
        let mut idx: Vec<u32> = (0..self.n as u32).collect();
        for i in (1..idx.len()).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        idx
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }
}

/// Assemble a normalized batch tensor (plus labels) from dataset indices.
/// When `pad_to` enlarges the spatial extents the image is centered and the
/// border filled with -1, the normalized background value.
pub fn assemble_batch<T: Scalar>(
    images: &[u8],
    labels: &[u8],
    shape: (usize, usize, usize),
    idxs: &[u32],
    pad_to: Option<(usize, usize)>,
) -> Result<(Tensor<T>, Vec<u8>)> {
    let (c, h, w) = shape;
    let px = c * h * w;
    let (th, tw) = pad_to.unwrap_or((h, w));
    if th < h || tw < w {
        return Err(Error::Parameter {
            name: "pad_to",
            detail: format!("target {th}x{tw} smaller than image {h}x{w}"),
        });
    }
    let (oy, ox) = ((th - h) / 2, (tw - w) / 2);
    let n = idxs.len();
    let mut out = Tensor::full(&[n, c, th, tw], T::from_f64c(-1.0));
    let mut out_labels = Vec::with_capacity(n);
    for (bi, &idx) in idxs.iter().enumerate() {
        let idx = idx as usize;
        if idx >= labels.len() {
            return Err(Error::Data(format!(
                "batch index {idx} out of range for {} examples",
                labels.len()
            )));
        }
        out_labels.push(labels[idx]);
        let img = &images[idx * px..(idx + 1) * px];
        for ci in 0..c {
            for y in 0..h {
                let src = &img[ci * h * w + y * w..ci * h * w + (y + 1) * w];
                let dst_base = ((bi * c + ci) * th + y + oy) * tw + ox;
                let dst = &mut out.data_mut()[dst_base..dst_base + w];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = T::from_f64c(normalize_pixel(s) as f64);
                }
            }
        }
    }
    Ok((out, out_labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn idx_images(count: usize, rows: usize, cols: usize, pix: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        v.extend_from_slice(&(count as u32).to_be_bytes());
        v.extend_from_slice(&(rows as u32).to_be_bytes());
        v.extend_from_slice(&(cols as u32).to_be_bytes());
        v.extend((0..count * rows * cols).map(pix));
        v
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    #[test]
    fn idx_magics_accepted_and_rejected() {
        let good = idx_images(2, 4, 4, |i| i as u8);
        assert!(parse_idx_images(&good, "t").is_ok());
        let mut bad = good.clone();
        bad[3] = 0x01;
        assert!(parse_idx_images(&bad, "t").is_err());
        let good_labels = idx_labels(&[1, 2]);
        assert!(parse_idx_labels(&good_labels, "t").is_ok());
        let mut bad_labels = good_labels.clone();
        bad_labels[2] = 0xff;
        assert!(parse_idx_labels(&bad_labels, "t").is_err());
    }

    #[test]
    fn idx_header_fuzz_every_mutation_rejected() {
        // flipping any single header byte must produce a format error:
        // magic bytes break the magic check, count/extent bytes break the
        // length check
        let good = idx_images(3, 4, 5, |i| (i * 7) as u8);
        assert!(parse_idx_images(&good, "t").is_ok());
        for pos in 0..16 {
            for delta in [1u8, 0x80] {
                let mut mutated = good.clone();
                mutated[pos] = mutated[pos].wrapping_add(delta);
                assert!(
                    parse_idx_images(&mutated, "t").is_err(),
                    "mutation at byte {pos} (+{delta}) was accepted"
                );
            }
        }
        let good = idx_labels(&[0, 1, 2, 3]);
        for pos in 0..8 {
            for delta in [1u8, 0x80] {
                let mut mutated = good.clone();
                mutated[pos] = mutated[pos].wrapping_add(delta);
                assert!(
                    parse_idx_labels(&mutated, "t").is_err(),
                    "label mutation at byte {pos} (+{delta}) was accepted"
                );
            }
        }
    }

    #[test]
    fn truncated_idx_is_rejected_with_offset() {
        let mut good = idx_images(2, 4, 4, |_| 0);
        good.truncate(good.len() - 5);
        let err = parse_idx_images(&good, "imgs").unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn normalization_map() {
        assert_eq!(normalize_pixel(0), -1.0);
        assert_eq!(normalize_pixel(255), 1.0);
        let v = normalize_pixel(128);
        assert!((v - 1.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn normalization_roundtrips_all_bytes() {
        for b in 0..=255u8 {
            assert_eq!(denormalize_pixel(normalize_pixel(b)), b);
        }
    }

    #[test]
    fn cifar10_file_parses_and_counts() {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let mut bytes = vec![0u8; CIFAR10_RECORD * CIFAR_RECORDS_PER_FILE];
        for (i, rec) in bytes.chunks_exact_mut(CIFAR10_RECORD).enumerate() {
            rec[0] = (i % 10) as u8;
            rec[1] = i as u8;
        }
        parse_cifar_file(
            &bytes,
            "data_batch_1.bin",
            CIFAR10_RECORD,
            CIFAR_RECORDS_PER_FILE,
            0,
            &mut images,
            &mut labels,
        )
        .unwrap();
        assert_eq!(labels.len(), 10_000);
        assert_eq!(images.len(), 10_000 * 3072);
        assert_eq!(labels[13], 3);
        assert_eq!(images[3072 + 0], 1); // first pixel of record 1
    }

    #[test]
    fn cifar_wrong_length_reports_record_counts() {
        let bytes = vec![0u8; CIFAR10_RECORD * 99 + 7];
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let err = parse_cifar_file(
            &bytes,
            "data_batch_1.bin",
            CIFAR10_RECORD,
            CIFAR_RECORDS_PER_FILE,
            0,
            &mut images,
            &mut labels,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("10000"), "{msg}");
        assert!(msg.contains("99"), "{msg}");
    }

    #[test]
    fn cifar100_uses_fine_label_byte() {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let mut bytes = vec![0u8; CIFAR100_RECORD * 2];
        bytes[0] = 7; // coarse
        bytes[1] = 42; // fine
        bytes[CIFAR100_RECORD] = 3;
        bytes[CIFAR100_RECORD + 1] = 99;
        parse_cifar_file(&bytes, "train.bin", CIFAR100_RECORD, 2, 1, &mut images, &mut labels)
            .unwrap();
        assert_eq!(labels, vec![42, 99]);
    }

    #[test]
    fn permutation_is_deterministic_and_seed_sensitive() {
        let s = BatchStream::new(1000, 128, 11).unwrap();
        assert_eq!(s.permutation(3), s.permutation(3));
        assert_ne!(s.permutation(3), s.permutation(4));
        let other = BatchStream::new(1000, 128, 12).unwrap();
        assert_ne!(s.permutation(3), other.permutation(3));
    }

    #[test]
    fn permutation_visits_every_example_once() {
        let s = BatchStream::new(257, 64, 5).unwrap();
        let mut perm = s.permutation(0);
        perm.sort_unstable();
        let expect: Vec<u32> = (0..257).collect();
        assert_eq!(perm, expect);
        assert_eq!(s.batches_per_epoch(), 5); // final short batch allowed
    }

    #[test]
    fn epoch_label_multiset_matches_dataset() {
        let labels: Vec<u8> = (0..300).map(|i| (i % 7) as u8).collect();
        let images = vec![0u8; 300 * 4];
        let s = BatchStream::new(300, 32, 1).unwrap();
        let perm = s.permutation(2);
        let mut seen: BTreeMap<u8, usize> = BTreeMap::new();
        for chunk in perm.chunks(32) {
            let (_, batch_labels) =
                assemble_batch::<f32>(&images, &labels, (1, 2, 2), chunk, None).unwrap();
            for l in batch_labels {
                *seen.entry(l).or_default() += 1;
            }
        }
        let mut expect: BTreeMap<u8, usize> = BTreeMap::new();
        for &l in &labels {
            *expect.entry(l).or_default() += 1;
        }
        assert_eq!(seen, expect);
    }

    #[test]
    fn batch_assembly_normalizes_and_pads() {
        // one 1x2x2 image with known bytes, padded to 4x4
        let images = vec![0u8, 255, 128, 64];
        let labels = vec![9u8];
        let (t, l) = assemble_batch::<f32>(&images, &labels, (1, 2, 2), &[0], Some((4, 4))).unwrap();
        assert_eq!(l, vec![9]);
        assert_eq!(t.shape(), &[1, 1, 4, 4]);
        assert_eq!(t.at(&[0, 0, 0, 0]), -1.0); // padding
        assert_eq!(t.at(&[0, 0, 1, 1]), -1.0); // pixel byte 0
        assert_eq!(t.at(&[0, 0, 1, 2]), 1.0); // pixel byte 255
        assert!((t.at(&[0, 0, 2, 1]) - 1.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn batches_draw_only_from_training_images() {
        // train pixels all >= 128 (normalized >= 0), "test" pixels zero;
        // a full epoch of batches must never contain a negative pixel value
        let train_images: Vec<u8> = (0..40 * 4).map(|_| 200u8).collect();
        let train_labels = vec![0u8; 40];
        let s = BatchStream::new(40, 16, 3).unwrap();
        for chunk in s.permutation(0).chunks(16) {
            let (t, _) =
                assemble_batch::<f32>(&train_images, &train_labels, (1, 2, 2), chunk, None).unwrap();
            assert!(t.data().iter().all(|&v| v > 0.0));
        }
    }
}
