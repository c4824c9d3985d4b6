//! Datasets: IDX ingestion, synthetic blobs, batching and label encoding.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};

use crate::error::{invalid, Error, Result};
use crate::loss::Distribution;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Labelled samples: inputs `[N, ...]` and class indices in `[0, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if inputs.rank() < 2 {
            return Err(Error::Shape(format!(
                "dataset inputs must be [N, ...], got {:?}",
                inputs.dims()
            )));
        }
        if inputs.dims()[0] != labels.len() {
            return Err(Error::Consistency(format!(
                "{} inputs but {} labels",
                inputs.dims()[0],
                labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(invalid("a dataset needs at least two classes"));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Consistency(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Per-sample input shape.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.dims()[1..]
    }

    /// The first `n` samples (all of them if `n >= len`).
    pub fn take_first(&self, n: usize) -> Dataset {
        if n >= self.len() {
            return self.clone();
        }
        self.select(&(0..n).collect::<Vec<_>>())
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    /// Inputs and labels of one batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.inputs.gather_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::Io(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                format!("{what}: truncated IDX header"),
            ))
        })
}

fn truncated(what: &str, want: usize, got: usize) -> Error {
    Error::Io(io::Error::new(
        io::ErrorKind::UnexpectedEof,
        format!("{what}: payload has {got} bytes, header promises {want}"),
    ))
}

/// Parses an images IDX buffer into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "images file has magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let want = n * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < want {
        return Err(truncated("images", want, payload.len()));
    }
    Ok((n, rows, cols, &payload[..want]))
}

/// Parses a labels IDX buffer.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "labels file has magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "labels")? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(truncated("labels", n, payload.len()));
    }
    Ok(&payload[..n])
}

/// Loads an IDX image/label pair as `[N, 1, rows, cols]` pixels in `[0, 1]`.
///
/// `limit` keeps only the first `limit` samples. Gzip input is detected by
/// its `1f 8b` prefix.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    split: Split,
    limit: Option<usize>,
) -> Result<Dataset> {
    let img_bytes = read_maybe_gz(images_path.as_ref())?;
    let lbl_bytes = read_maybe_gz(labels_path.as_ref())?;
    let (n, rows, cols, pixels) = parse_idx_images(&img_bytes)?;
    let labels = parse_idx_labels(&lbl_bytes)?;
    if labels.len() != n {
        return Err(Error::Consistency(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    let keep = limit.map_or(n, |l| l.min(n));
    if keep == 0 {
        return Err(invalid("dataset would be empty"));
    }
    let data: Vec<f64> = pixels[..keep * rows * cols]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    let labels: Vec<usize> = labels[..keep].iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(10));
    Dataset::new(
        Tensor::new(vec![keep, 1, rows, cols], data)?,
        labels,
        num_classes,
        split,
    )
}

/// Writes `[N, 1, rows, cols]` pixel data (in `[0, 1]`, rounded to bytes)
/// and labels as an uncompressed IDX pair.
pub fn write_idx(
    dataset: &Dataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let &[n, 1, rows, cols] = dataset.inputs.dims() else {
        return Err(Error::Shape(format!(
            "IDX export needs [N, 1, rows, cols], got {:?}",
            dataset.inputs.dims()
        )));
    };
    let mut img = Vec::with_capacity(16 + n * rows * cols);
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(
        dataset
            .inputs
            .data()
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    let mut lbl = Vec::with_capacity(8 + n);
    lbl.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(n as u32).to_be_bytes());
    lbl.extend(dataset.labels.iter().map(|&l| l as u8));
    fs::File::create(images_path)?.write_all(&img)?;
    fs::File::create(labels_path)?.write_all(&lbl)?;
    Ok(())
}

/// `K` Gaussian clusters in `d` dimensions.
///
/// Class `k` is centred at `k` along the first axis (consecutive means one
/// unit apart, zero elsewhere); every coordinate gets N(0, spread^2) noise.
/// Samples are laid out class by class.
pub fn synth_blobs(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    if num_classes < 2 || dim < 1 || per_class < 1 {
        return Err(invalid(format!(
            "synth_blobs needs K >= 2, d >= 1, n >= 1 (got {num_classes}, {dim}, {per_class})"
        )));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(invalid(format!("spread must be finite and >= 0, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spread).map_err(|e| invalid(e.to_string()))?;
    let n = num_classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for k in 0..num_classes {
        for _ in 0..per_class {
            for j in 0..dim {
                let mean = if j == 0 { k as f64 } else { 0.0 };
                data.push(mean + noise.sample(&mut rng));
            }
            labels.push(k);
        }
    }
    Dataset::new(Tensor::new(vec![n, dim], data)?, labels, num_classes, split)
}

/// Shuffled index batches for one epoch.
///
/// The permutation is a pure function of `(seed, epoch)`: the epoch selects
/// the ChaCha stream.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(invalid("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// The standard basis vector `e_label` of length `k`.
pub fn one_hot(label: usize, k: usize) -> Result<Distribution> {
    if label >= k {
        return Err(invalid(format!("label {label} out of range for {k} classes")));
    }
    let mut v = vec![0.0; k];
    v[label] = 1.0;
    Ok(Distribution::from_unchecked(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture_bytes() -> (Vec<u8>, Vec<u8>) {
        // two 2x3 images, labels 7 and 1
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
        img.extend_from_slice(&[0, 51, 102, 153, 204, 255, 255, 0, 17, 34, 68, 136]);
        let lbl = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 1];
        (img, lbl)
    }

    #[test]
    fn hand_built_fixture_parses_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = fixture_bytes();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        fs::write(&ip, &img).unwrap();
        fs::write(&lp, &lbl).unwrap();
        let ds = load_idx(&ip, &lp, Split::Train, None).unwrap();
        assert_eq!(ds.inputs().dims(), &[2, 1, 2, 3]);
        assert_eq!(ds.labels(), &[7, 1]);
        let want: Vec<f64> = img[16..].iter().map(|&b| b as f64 / 255.0).collect();
        assert_eq!(ds.inputs().data(), &want[..]);
        assert_eq!(ds.inputs().data()[1], 0.2);
        assert_eq!(ds.inputs().data()[5], 1.0);
    }

    #[test]
    fn gzip_input_is_transparent() {
        use flate2::write::GzEncoder;
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = fixture_bytes();
        let ip = dir.path().join("img.gz");
        let mut enc = GzEncoder::new(fs::File::create(&ip).unwrap(), flate2::Compression::fast());
        enc.write_all(&img).unwrap();
        enc.finish().unwrap();
        let lp = dir.path().join("lbl");
        fs::write(&lp, &lbl).unwrap();
        let ds = load_idx(&ip, &lp, Split::Train, Some(1)).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels(), &[7]);
    }

    #[test]
    fn wrong_magic_and_truncation_are_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = fixture_bytes();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        fs::write(&ip, &img).unwrap();
        fs::write(&lp, &lbl).unwrap();
        // images passed as labels
        assert!(matches!(
            load_idx(&ip, &ip, Split::Train, None),
            Err(Error::Format(_))
        ));
        fs::write(&lp, [0, 0, 8, 1, 0, 0, 0, 3, 7, 1, 2]).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp, Split::Train, None),
            Err(Error::Consistency(_))
        ));
        fs::write(&ip, &img[..img.len() - 1]).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp, Split::Train, None),
            Err(Error::Io(_))
        ));
    }

    #[test]
    fn synth_is_deterministic_and_degenerate_spread_is_separable() {
        let a = synth_blobs(3, 2, 20, 0.3, 9, Split::Train).unwrap();
        let b = synth_blobs(3, 2, 20, 0.3, 9, Split::Train).unwrap();
        assert_eq!(a, b);
        let tight = synth_blobs(4, 3, 10, 0.0, 1, Split::Train).unwrap();
        for (i, &l) in tight.labels().iter().enumerate() {
            let x0 = tight.inputs().row(i)[0];
            let nearest = (0..4)
                .min_by(|&p, &q| (x0 - p as f64).abs().total_cmp(&(x0 - q as f64).abs()))
                .unwrap();
            assert_eq!(nearest, l);
        }
    }

    #[test]
    fn batch_sizes_for_ten_by_four() {
        let b = batches(10, 4, 1, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(b, batches(10, 4, 1, 0).unwrap());
        assert_ne!(b, batches(10, 4, 1, 1).unwrap());
        assert!(batches(10, 0, 1, 0).is_err());
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot(2, 4).unwrap().probs(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(one_hot(0, 2).unwrap().probs(), &[1.0, 0.0]);
        assert!(one_hot(5, 4).is_err());
    }

    proptest! {
        #[test]
        fn batches_partition_all_indices(n in 1usize..200, extra in 0usize..2, seed: u64, epoch in 0u64..50) {
            let b = (n * extra / 2).clamp(1, n + 1);
            for bs in [1, b, n, n + 1] {
                let parts = batches(n, bs, seed, epoch).unwrap();
                prop_assert_eq!(parts.len(), n.div_ceil(bs));
                let mut all: Vec<usize> = parts.concat();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            }
        }

        #[test]
        fn idx_round_trip_recovers_bytes(
            pixels in prop::collection::vec(any::<u8>(), 12),
            labels in prop::collection::vec(0usize..10, 2),
        ) {
            let data: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
            let ds = Dataset::new(
                Tensor::new(vec![2, 1, 2, 3], data).unwrap(), labels, 10, Split::Test,
            ).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
            write_idx(&ds, &ip, &lp).unwrap();
            let back = load_idx(&ip, &lp, Split::Test, None).unwrap();
            let bytes: Vec<u8> = back.inputs().data().iter().map(|v| (v * 255.0).round() as u8).collect();
            prop_assert_eq!(bytes, pixels);
            prop_assert_eq!(back.inputs(), ds.inputs());
            prop_assert_eq!(back.labels(), ds.labels());
        }
    }
}
