//! Datasets: IDX (MNIST / Fashion-MNIST) files and synthetic Gaussian blobs.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::Example;
use crate::tensor::Vec64;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Blob features are clipped at this many standard deviations before
/// rescaling into `[0, 1]`.
const BLOB_CLIP_SIGMA: f64 = 4.0;

/// An immutable labelled dataset with a per-class index.
#[derive(Debug, Clone)]
pub struct Dataset {
    examples: Vec<Example>,
    num_classes: usize,
    per_class_index: Vec<Vec<usize>>,
    name: String,
    source_digest: String,
    /// Position of each example in the dataset it was derived from.
    source_indices: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset from `(features, label)` pairs. Example indices are
    /// assigned in order.
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        rows: Vec<(Vec64, usize)>,
    ) -> Result<Self> {
        let n = rows.len();
        Self::with_sources(name.into(), num_classes, rows, (0..n).collect())
    }

    fn with_sources(
        name: String,
        num_classes: usize,
        rows: Vec<(Vec64, usize)>,
        source_indices: Vec<usize>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("dataset"));
        }
        if num_classes < 2 {
            return Err(Error::Data(format!("need at least 2 classes, got {num_classes}")));
        }
        let dim = rows[0].0.len();
        let mut per_class_index = vec![Vec::new(); num_classes];
        let mut examples = Vec::with_capacity(rows.len());
        for (i, (features, label)) in rows.into_iter().enumerate() {
            if label >= num_classes {
                return Err(Error::Data(format!(
                    "example {i} has label {label}, but there are {num_classes} classes"
                )));
            }
            if features.len() != dim {
                return Err(Error::Dimension {
                    context: "dataset features",
                    expected: dim,
                    got: features.len(),
                });
            }
            features.check_finite("dataset features")?;
            per_class_index[label].push(i);
            examples.push(Example::new(features, label, i));
        }
        let source_digest = digest(num_classes, &examples);
        Ok(Dataset {
            examples,
            num_classes,
            per_class_index,
            name,
            source_digest,
            source_indices,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn example(&self, i: usize) -> &Example {
        &self.examples[i]
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.examples[0].features.len()
    }

    pub fn class_indices(&self, c: usize) -> &[usize] {
        &self.per_class_index[c]
    }

    pub fn per_class_index(&self) -> &[Vec<usize>] {
        &self.per_class_index
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.per_class_index.iter().map(Vec::len).collect()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// SHA-256 over class count, labels and feature bit patterns.
    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn source_indices(&self) -> &[usize] {
        &self.source_indices
    }

    pub fn features_in_unit_range(&self) -> bool {
        self.examples
            .iter()
            .all(|e| e.features.as_slice().iter().all(|v| (0.0..=1.0).contains(v)))
    }

    /// Stratified subsample of `per_class_count` examples per class, kept
    /// in ascending order of their position in `self`.
    pub fn subsample(&self, per_class_count: usize, seed: u64) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = Vec::with_capacity(per_class_count * self.num_classes);
        for (c, members) in self.per_class_index.iter().enumerate() {
            if members.len() < per_class_count {
                return Err(Error::Data(format!(
                    "class {c} has {} examples, {per_class_count} requested",
                    members.len()
                )));
            }
            let picks = sample_indices(&mut rng, members.len(), per_class_count);
            chosen.extend(picks.into_iter().map(|k| members[k]));
        }
        chosen.sort_unstable();
        let rows = chosen
            .iter()
            .map(|&i| (self.examples[i].features.clone(), self.examples[i].label))
            .collect();
        Dataset::with_sources(
            format!("{}[{per_class_count}/class, seed {seed}]", self.name),
            self.num_classes,
            rows,
            chosen,
        )
    }
}

fn digest(num_classes: usize, examples: &[Example]) -> String {
    let mut h = Sha256::new();
    h.update((num_classes as u64).to_le_bytes());
    h.update((examples.len() as u64).to_le_bytes());
    for e in examples {
        h.update((e.label as u64).to_le_bytes());
        for v in e.features.as_slice() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Magic number and dimension sizes of an IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<u32>,
}

impl IdxHeader {
    fn header_len(&self) -> usize {
        4 + 4 * self.dims.len()
    }

    fn payload_len(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn truncated(path: &Path, what: &str) -> Error {
    Error::io(
        path,
        io::Error::new(io::ErrorKind::UnexpectedEof, format!("truncated {what}")),
    )
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<IdxHeader> {
    if bytes.len() < 4 {
        return Err(truncated(path, "header"));
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    // Only unsigned-byte payloads (type code 0x08) are supported.
    if magic >> 8 != 0x08 || !(1..=3).contains(&(magic & 0xff)) {
        return Err(Error::Format {
            path: path.into(),
            reason: format!("unsupported magic 0x{magic:08x}"),
        });
    }
    let ndims = (magic & 0xff) as usize;
    if bytes.len() < 4 + 4 * ndims {
        return Err(truncated(path, "header"));
    }
    let dims = (0..ndims)
        .map(|k| u32::from_be_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()))
        .collect();
    Ok(IdxHeader { magic, dims })
}

/// Reads only the header of an IDX file.
pub fn read_idx_header(path: impl AsRef<Path>) -> Result<IdxHeader> {
    let path = path.as_ref();
    parse_header(path, &read_file(path)?)
}

fn read_idx_expect(path: &Path, magic: u32) -> Result<(IdxHeader, Vec<u8>)> {
    let bytes = read_file(path)?;
    let header = parse_header(path, &bytes)?;
    if header.magic != magic {
        return Err(Error::Format {
            path: path.into(),
            reason: format!("expected magic 0x{magic:08x}, found 0x{:08x}", header.magic),
        });
    }
    let start = header.header_len();
    let need = header.payload_len();
    if bytes.len() < start + need {
        return Err(truncated(path, "payload"));
    }
    if bytes.len() > start + need {
        return Err(Error::Format {
            path: path.into(),
            reason: format!("{} trailing bytes", bytes.len() - start - need),
        });
    }
    let payload = bytes[start..].to_vec();
    Ok((header, payload))
}

/// Loads an IDX image/label pair. Pixels are scaled by 1/255; the class
/// count is one more than the largest label (at least 2).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let (ih, pixels) = read_idx_expect(images_path, IDX_IMAGES_MAGIC)?;
    let (lh, labels) = read_idx_expect(labels_path, IDX_LABELS_MAGIC)?;
    let (n, n_labels) = (ih.dims[0] as usize, lh.dims[0] as usize);
    if n != n_labels {
        return Err(Error::Consistency(format!(
            "{} holds {n} images but {} holds {n_labels} labels",
            images_path.display(),
            labels_path.display()
        )));
    }
    let dim = (ih.dims[1] * ih.dims[2]) as usize;
    let num_classes = labels.iter().copied().max().map_or(2, |m| (m as usize + 1).max(2));
    let rows = pixels
        .chunks_exact(dim)
        .zip(&labels)
        .map(|(img, &l)| {
            let f = img.iter().map(|&b| f64::from(b) / 255.0).collect();
            (Vec64::new(f), l as usize)
        })
        .collect();
    let name = images_path
        .file_name()
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, num_classes, rows)
}

/// Writes `dataset` as an IDX image/label pair with `rows x cols` images.
/// Features are mapped back to bytes by `round(v * 255)`.
pub fn write_idx(
    dataset: &Dataset,
    rows: u32,
    cols: u32,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    if (rows * cols) as usize != dataset.feature_dim() {
        return Err(Error::Dimension {
            context: "write_idx image shape",
            expected: dataset.feature_dim(),
            got: (rows * cols) as usize,
        });
    }
    if !dataset.features_in_unit_range() {
        return Err(Error::Data("features outside [0, 1] cannot be stored as bytes".into()));
    }
    let n = dataset.len() as u32;
    let mut img = Vec::with_capacity(16 + dataset.len() * dataset.feature_dim());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [n, rows, cols] {
        img.extend_from_slice(&d.to_be_bytes());
    }
    let mut lab = Vec::with_capacity(8 + dataset.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    for e in dataset.examples() {
        img.extend(e.features.as_slice().iter().map(|v| (v * 255.0).round() as u8));
        lab.push(u8::try_from(e.label).map_err(|_| Error::Data("label above 255".into()))?);
    }
    write_file(images_path, &img)?;
    write_file(labels_path, &lab)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Gaussian blobs: class `c` is centred at `separation * e_(c mod dim)` with
/// unit-variance noise clipped at 4 sigma, then every coordinate is mapped
/// affinely from `[-4, separation + 4]` onto `[0, 1]`.
pub fn synth_blobs(
    num_classes: usize,
    n_per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if dim == 0 {
        return Err(Error::Config("synth_blobs needs dim >= 1".into()));
    }
    if separation <= 0.0 || !separation.is_finite() {
        return Err(Error::Config(format!("separation must be positive, got {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = -BLOB_CLIP_SIGMA;
    let span = separation + 2.0 * BLOB_CLIP_SIGMA;
    let mut rows = Vec::with_capacity(num_classes * n_per_class);
    for c in 0..num_classes {
        for _ in 0..n_per_class {
            let f = (0..dim)
                .map(|j| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let centre = if j == c % dim { separation } else { 0.0 };
                    let v = centre + z.clamp(-BLOB_CLIP_SIGMA, BLOB_CLIP_SIGMA);
                    ((v - lo) / span).clamp(0.0, 1.0)
                })
                .collect();
            rows.push((Vec64::new(f), c));
        }
    }
    Dataset::new(
        format!("blobs(C={num_classes}, n={n_per_class}, d={dim}, sep={separation}, seed={seed})"),
        num_classes,
        rows,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let img = dir.join("img");
        let lab = dir.join("lab");
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend([0u8, 51, 102, 255, 255, 0, 17, 34]);
        fs::write(&img, bytes).unwrap();
        fs::write(&lab, [0, 0, 8, 1, 0, 0, 0, 2, 1, 0]).unwrap();
        (img, lab)
    }

    #[test]
    fn loads_hand_built_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = tiny_fixture(dir.path());
        let ds = load_idx(&img, &lab).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.feature_dim(), 4);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.example(0).label, 1);
        let expect0: Vec<f64> = [0u8, 51, 102, 255].iter().map(|&b| f64::from(b) / 255.0).collect();
        assert_eq!(ds.example(0).features.as_slice(), &expect0[..]);
        assert_eq!(ds.example(1).features[3], 34.0 / 255.0);
        assert_eq!(ds.class_indices(0), &[1]);
        assert_eq!(read_idx_header(&lab).unwrap(), IdxHeader { magic: 0x801, dims: vec![2] });
    }

    #[test]
    fn rejects_wrong_magic_mismatch_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = tiny_fixture(dir.path());
        // Labels passed where images are expected and vice versa.
        assert!(matches!(load_idx(&img, &img), Err(Error::Format { .. })));
        assert!(matches!(load_idx(&lab, &lab), Err(Error::Format { .. })));

        let lab3 = dir.path().join("lab3");
        fs::write(&lab3, [0, 0, 8, 1, 0, 0, 0, 3, 1, 0, 1]).unwrap();
        assert!(matches!(load_idx(&img, &lab3), Err(Error::Consistency(_))));

        let short = dir.path().join("short");
        let full = fs::read(&img).unwrap();
        fs::write(&short, &full[..full.len() - 1]).unwrap();
        assert!(matches!(load_idx(&short, &lab), Err(Error::Io { .. })));
        fs::write(&short, &full[..6]).unwrap();
        assert!(matches!(read_idx_header(&short), Err(Error::Io { .. })));

        assert!(matches!(load_idx(dir.path().join("nope"), &lab), Err(Error::Io { .. })));
    }

    #[test]
    fn subsample_examples() {
        let ds = synth_blobs(10, 7, 3, 2.0, 1).unwrap();
        let all = ds.subsample(7, 99).unwrap();
        assert_eq!(all.source_indices(), (0..ds.len()).collect::<Vec<_>>().as_slice());
        let one = ds.subsample(1, 5).unwrap();
        assert_eq!(one.len(), 10);
        assert!(one.class_counts().iter().all(|&k| k == 1));
        assert_eq!(ds.subsample(3, 4).unwrap().source_indices(), ds.subsample(3, 4).unwrap().source_indices());
        assert!(matches!(ds.subsample(8, 0), Err(Error::Data(_))));
    }

    #[test]
    fn subsample_preserves_labels() {
        let ds = synth_blobs(4, 20, 5, 3.0, 2).unwrap();
        let sub = ds.subsample(6, 8).unwrap();
        for (e, &src) in sub.examples().iter().zip(sub.source_indices()) {
            assert_eq!(e.label, ds.example(src).label);
            assert_eq!(e.features, ds.example(src).features);
        }
        for (c, members) in sub.per_class_index().iter().enumerate() {
            assert!(members.iter().all(|&i| sub.example(i).label == c));
        }
    }

    #[test]
    fn blobs_examples() {
        let ds = synth_blobs(2, 3, 2, 1.0, 0).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.class_counts(), vec![3, 3]);
        assert!(ds.features_in_unit_range());
        let again = synth_blobs(2, 3, 2, 1.0, 0).unwrap();
        assert_eq!(ds.source_digest(), again.source_digest());
        assert_ne!(ds.source_digest(), synth_blobs(2, 3, 2, 1.0, 1).unwrap().source_digest());
        assert!(synth_blobs(2, 3, 0, 1.0, 0).is_err());
        assert!(synth_blobs(2, 3, 2, 0.0, 0).is_err());
    }

    #[test]
    fn dataset_rejects_bad_labels() {
        let rows = vec![(Vec64::new(vec![0.0]), 0), (Vec64::new(vec![0.0]), 2)];
        assert!(matches!(Dataset::new("x", 2, rows), Err(Error::Data(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn idx_round_trip(pixels in prop::collection::vec(any::<u8>(), 1..6usize * 6), labels_seed in any::<u64>()) {
            let n = pixels.len() / 6;
            prop_assume!(n >= 1);
            let rows: Vec<(Vec64, usize)> = (0..n)
                .map(|i| {
                    let f = pixels[i * 6..(i + 1) * 6].iter().map(|&b| f64::from(b) / 255.0).collect();
                    (Vec64::new(f), ((labels_seed >> (i % 64)) & 1) as usize)
                })
                .collect();
            let ds = Dataset::new("rt", 2, rows).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let (img, lab) = (dir.path().join("i"), dir.path().join("l"));
            write_idx(&ds, 2, 3, &img, &lab).unwrap();
            let back = load_idx(&img, &lab).unwrap();
            prop_assert_eq!(back.len(), ds.len());
            for (a, b) in back.examples().iter().zip(ds.examples()) {
                prop_assert_eq!(&a.features, &b.features);
                prop_assert_eq!(a.label, b.label);
            }
        }
    }
}
