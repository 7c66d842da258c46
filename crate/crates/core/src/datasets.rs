//! Windowed multichannel datasets: the canonical on-disk format, the
//! synthetic generator, and windowing / normalization / split preprocessing.
//!
//! Canonical layout: a directory with `manifest.json` plus, per split, a raw
//! little-endian `f32` tensor `[N, channels, window_length]` and a raw
//! little-endian `i32` label vector (and optionally an `i32` subject vector).

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFiles {
    pub count: usize,
    pub data_file: String,
    pub labels_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subjects_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub num_classes: usize,
    pub channels: usize,
    pub window_length: usize,
    pub sample_rate_hz: f64,
    pub splits: BTreeMap<String, SplitFiles>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_names: Option<Vec<String>>,
    /// Free-form description of the converter that produced the files
    /// (channel selection, class merges, dropped segments).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converter: Option<String>,
}

impl DatasetManifest {
    pub fn class_names(&self) -> Vec<String> {
        self.class_names
            .clone()
            .unwrap_or_else(|| (0..self.num_classes).map(|c| format!("class {c}")).collect())
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.channel_names
            .clone()
            .unwrap_or_else(|| (0..self.channels).map(|c| format!("ch{c}")).collect())
    }
}

/// `N` windows of shape `[channels, window_length]`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedDataset {
    pub x: Vec<f32>,
    pub y: Vec<usize>,
    pub num_classes: usize,
    pub channels: usize,
    pub window_length: usize,
    #[serde(default)]
    pub subject_ids: Option<Vec<u32>>,
}

impl WindowedDataset {
    pub fn new(
        x: Vec<f32>,
        y: Vec<usize>,
        num_classes: usize,
        channels: usize,
        window_length: usize,
    ) -> Result<Self> {
        let ds = Self {
            x,
            y,
            num_classes,
            channels,
            window_length,
            subject_ids: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn empty(num_classes: usize, channels: usize, window_length: usize) -> Self {
        Self {
            x: Vec::new(),
            y: Vec::new(),
            num_classes,
            channels,
            window_length,
            subject_ids: None,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn window_size(&self) -> usize {
        self.channels * self.window_length
    }

    pub fn window(&self, i: usize) -> &[f32] {
        let w = self.window_size();
        &self.x[i * w..(i + 1) * w]
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.y.len() * self.window_size() {
            return Err(Error::ShapeMismatch(format!(
                "{} values cannot hold {} windows of {}x{}",
                self.x.len(),
                self.y.len(),
                self.channels,
                self.window_length
            )));
        }
        if let Some(&bad) = self.y.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::InvalidLabel {
                label: bad as i64,
                num_classes: self.num_classes,
            });
        }
        if let Some(s) = &self.subject_ids {
            if s.len() != self.y.len() {
                return Err(Error::ShapeMismatch("subject_ids length differs from labels".into()));
            }
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("dataset contains non-finite values".into()));
        }
        Ok(())
    }

    /// Copy of the selected windows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut x = Vec::with_capacity(indices.len() * self.window_size());
        for &i in indices {
            x.extend_from_slice(self.window(i));
        }
        Self {
            x,
            y: indices.iter().map(|&i| self.y[i]).collect(),
            num_classes: self.num_classes,
            channels: self.channels,
            window_length: self.window_length,
            subject_ids: self
                .subject_ids
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i]).collect()),
        }
    }

    pub fn with_labels(&self, y: Vec<usize>) -> Result<Self> {
        let ds = Self { y, ..self.clone() };
        ds.validate()?;
        Ok(ds)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.y {
            counts[l] += 1;
        }
        counts
    }
}

/// A canonical dataset directory after loading.
#[derive(Debug, Clone)]
pub struct CanonicalDataset {
    pub manifest: DatasetManifest,
    pub splits: BTreeMap<String, WindowedDataset>,
}

impl CanonicalDataset {
    pub fn split(&self, name: &str) -> Result<&WindowedDataset> {
        self.splits
            .get(name)
            .ok_or_else(|| Error::Config(format!("dataset has no split named {name:?}")))
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn expect_bytes(path: &Path, bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "{} holds {} bytes, manifest implies {expected}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(())
}

pub(crate) fn f32_from_le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect()
}

fn i32_from_le(bytes: &[u8]) -> Vec<i32> {
    bytes
        .chunks_exact(4)
        .map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect()
}

pub(crate) fn f32_to_le(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

/// Load every split listed in `dir/manifest.json`.
pub fn load_canonical(dir: impl AsRef<Path>) -> Result<CanonicalDataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: DatasetManifest = serde_json::from_slice(&read_file(&manifest_path)?)?;
    if manifest.num_classes == 0 || manifest.channels == 0 || manifest.window_length == 0 {
        return Err(Error::InvalidSpec("manifest dimensions must be positive".into()));
    }
    let mut splits = BTreeMap::new();
    for (name, files) in &manifest.splits {
        let n = files.count;
        let data_path = dir.join(&files.data_file);
        let data = read_file(&data_path)?;
        expect_bytes(&data_path, &data, n * manifest.channels * manifest.window_length * 4)?;
        let labels_path = dir.join(&files.labels_file);
        let labels = read_file(&labels_path)?;
        expect_bytes(&labels_path, &labels, n * 4)?;
        let mut y = Vec::with_capacity(n);
        for l in i32_from_le(&labels) {
            if l < 0 || l as usize >= manifest.num_classes {
                return Err(Error::InvalidLabel {
                    label: l as i64,
                    num_classes: manifest.num_classes,
                });
            }
            y.push(l as usize);
        }
        let subject_ids = match &files.subjects_file {
            Some(f) => {
                let path = dir.join(f);
                let bytes = read_file(&path)?;
                expect_bytes(&path, &bytes, n * 4)?;
                Some(i32_from_le(&bytes).into_iter().map(|s| s as u32).collect())
            }
            None => None,
        };
        let ds = WindowedDataset {
            x: f32_from_le(&data),
            y,
            num_classes: manifest.num_classes,
            channels: manifest.channels,
            window_length: manifest.window_length,
            subject_ids,
        };
        ds.validate()?;
        splits.insert(name.clone(), ds);
    }
    Ok(CanonicalDataset { manifest, splits })
}

/// Write splits in canonical format. File names are derived from split names.
pub fn write_canonical(
    dir: impl AsRef<Path>,
    name: &str,
    sample_rate_hz: f64,
    splits: &BTreeMap<String, WindowedDataset>,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let first = splits
        .values()
        .next()
        .ok_or_else(|| Error::Empty("no splits to write".into()))?;
    let mut manifest = DatasetManifest {
        name: name.to_string(),
        num_classes: first.num_classes,
        channels: first.channels,
        window_length: first.window_length,
        sample_rate_hz,
        splits: BTreeMap::new(),
        class_names: None,
        channel_names: None,
        converter: None,
    };
    for (split, ds) in splits {
        if ds.channels != manifest.channels
            || ds.window_length != manifest.window_length
            || ds.num_classes != manifest.num_classes
        {
            return Err(Error::ShapeMismatch(format!("split {split} disagrees on shape")));
        }
        let files = SplitFiles {
            count: ds.len(),
            data_file: format!("{split}_x.f32"),
            labels_file: format!("{split}_y.i32"),
            subjects_file: ds.subject_ids.as_ref().map(|_| format!("{split}_subjects.i32")),
        };
        write_bytes(&dir.join(&files.data_file), &f32_to_le(ds.x.iter().copied()))?;
        let labels: Vec<u8> = ds.y.iter().flat_map(|&l| (l as i32).to_le_bytes()).collect();
        write_bytes(&dir.join(&files.labels_file), &labels)?;
        if let (Some(f), Some(s)) = (&files.subjects_file, &ds.subject_ids) {
            let bytes: Vec<u8> = s.iter().flat_map(|&v| (v as i32).to_le_bytes()).collect();
            write_bytes(&dir.join(f), &bytes)?;
        }
        manifest.splits.insert(split.clone(), files);
    }
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

pub fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    write_bytes(&path, &serde_json::to_vec_pretty(manifest)?)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Segment a `[channels, T]` signal into windows of `length` samples.
///
/// Returns the windows as a flat `[K, channels, length]` tensor together with
/// `K`. Windows start every `round(length * (1 - overlap))` samples; a trailing
/// partial window is zero-padded when `pad` is set and dropped otherwise.
pub fn window_signal(
    signal: &[f32],
    channels: usize,
    length: usize,
    overlap_fraction: f64,
    pad: bool,
) -> Result<(Vec<f32>, usize)> {
    if length == 0 {
        return Err(Error::InvalidInput("window length must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::InvalidInput(format!("overlap {overlap_fraction} not in [0, 1)")));
    }
    if channels == 0 || signal.len() % channels != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} samples do not split into {channels} channels",
            signal.len()
        )));
    }
    let t = signal.len() / channels;
    let stride = ((length as f64 * (1.0 - overlap_fraction)).round() as usize).max(1);
    let mut starts: Vec<usize> = if t >= length {
        (0..=(t - length) / stride).map(|k| k * stride).collect()
    } else {
        Vec::new()
    };
    if pad {
        let next = starts.last().map_or(0, |&s| s + stride);
        let covered = starts.last().map_or(0, |&s| s + length);
        if covered < t && next < t {
            starts.push(next);
        }
    }
    let mut out = vec![0.0f32; starts.len() * channels * length];
    for (k, &s) in starts.iter().enumerate() {
        let end = (s + length).min(t);
        for c in 0..channels {
            let dst = &mut out[(k * channels + c) * length..][..end - s];
            dst.copy_from_slice(&signal[c * t + s..c * t + end]);
        }
    }
    Ok((out, starts.len()))
}

/// Per-channel means fitted on one dataset and applied to others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMeans(pub Vec<f64>);

impl ChannelMeans {
    pub fn fit(ds: &WindowedDataset) -> Self {
        let mut sums = vec![0.0f64; ds.channels];
        for i in 0..ds.len() {
            for (c, chunk) in ds.window(i).chunks_exact(ds.window_length).enumerate() {
                sums[c] += chunk.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        let n = (ds.len() * ds.window_length).max(1) as f64;
        Self(sums.into_iter().map(|s| s / n).collect())
    }

    pub fn apply(&self, ds: &mut WindowedDataset) {
        let l = ds.window_length;
        for (k, v) in ds.x.iter_mut().enumerate() {
            let c = (k / l) % ds.channels;
            *v = (*v as f64 - self.0[c]) as f32;
        }
    }
}

/// Subtract per-channel means computed on `ds` itself.
pub fn normalize_mean(ds: &WindowedDataset) -> WindowedDataset {
    let means = ChannelMeans::fit(ds);
    let mut out = ds.clone();
    means.apply(&mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    BySubject,
    Random,
}

/// Split into `(train, test)`.
pub fn split_dataset(
    ds: &WindowedDataset,
    mode: SplitMode,
    train_fraction: f64,
    seed: u64,
) -> Result<(WindowedDataset, WindowedDataset)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidInput(format!("train fraction {train_fraction} not in [0, 1]")));
    }
    let mut rng = rng::seeded(seed);
    let (train_idx, test_idx): (Vec<usize>, Vec<usize>) = match mode {
        SplitMode::Random => {
            let mut idx: Vec<usize> = (0..ds.len()).collect();
            idx.shuffle(&mut rng);
            let n_train = (train_fraction * ds.len() as f64).round() as usize;
            let (a, b) = idx.split_at(n_train);
            (a.to_vec(), b.to_vec())
        }
        SplitMode::BySubject => {
            let subjects = ds.subject_ids.as_ref().ok_or_else(|| {
                Error::InvalidInput("by-subject split requires subject ids".into())
            })?;
            let mut unique: Vec<u32> = subjects.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
            unique.shuffle(&mut rng);
            let n_train = (train_fraction * unique.len() as f64).round() as usize;
            let train_subjects: BTreeSet<u32> = unique[..n_train].iter().copied().collect();
            (0..ds.len()).partition(|&i| train_subjects.contains(&subjects[i]))
        }
    };
    Ok((ds.subset(&train_idx), ds.subset(&test_idx)))
}

/// Nominal rate attached to synthetic windows when they are exported.
pub const SYNTHETIC_SAMPLE_RATE_HZ: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub channels: usize,
    pub window_length: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub class_separability: f64,
    pub noise_floor: f64,
    pub rng_seed: u64,
    /// Assign round-robin subject ids when nonzero.
    #[serde(default)]
    pub num_subjects: usize,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.channels == 0 || self.window_length < 2 {
            return Err(Error::InvalidSpec("synthetic dimensions too small".into()));
        }
        if self.train_count < self.num_classes || self.test_count < self.num_classes {
            return Err(Error::InvalidSpec("each split needs at least one window per class".into()));
        }
        if !(self.class_separability > 0.0) || !(self.noise_floor >= 0.0) {
            return Err(Error::InvalidSpec(
                "separability must be positive and noise floor nonnegative".into(),
            ));
        }
        Ok(())
    }
}

const COMPONENTS_PER_CLASS: usize = 3;

struct ClassProfile {
    /// Per channel, per component: (cycles per window, phase).
    components: Vec<Vec<(f64, f64)>>,
}

/// Generate balanced train and test sets whose classes differ in spectral
/// content. Each window carries a random time offset and amplitude jitter, so
/// classes are identifiable from frequency content rather than raw samples.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<(WindowedDataset, WindowedDataset)> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.rng_seed);
    let max_cycles = (spec.window_length as f64 / 4.0).max(2.0);
    let profiles: Vec<ClassProfile> = (0..spec.num_classes)
        .map(|_| ClassProfile {
            components: (0..spec.channels)
                .map(|_| {
                    (0..COMPONENTS_PER_CLASS)
                        .map(|_| (rng.random_range(1.0..max_cycles), rng.random_range(0.0..2.0 * PI)))
                        .collect()
                })
                .collect(),
        })
        .collect();
    let train = generate_split(spec, &profiles, spec.train_count, &mut rng)?;
    let test = generate_split(spec, &profiles, spec.test_count, &mut rng)?;
    Ok((train, test))
}

fn generate_split(
    spec: &SyntheticSpec,
    profiles: &[ClassProfile],
    count: usize,
    rng: &mut rng::Rng,
) -> Result<WindowedDataset> {
    let mut labels: Vec<usize> = (0..count).map(|i| i % spec.num_classes).collect();
    labels.shuffle(rng);
    let noise = Normal::new(0.0, spec.noise_floor).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let l = spec.window_length;
    let amp = spec.class_separability / (COMPONENTS_PER_CLASS as f64).sqrt();
    let mut x = Vec::with_capacity(count * spec.channels * l);
    for &label in &labels {
        let offset: f64 = rng.random_range(0.0..l as f64);
        let scale: f64 = rng.random_range(0.8..1.2);
        for comps in &profiles[label].components {
            for t in 0..l {
                let time = (t as f64 + offset) / l as f64;
                let clean: f64 = comps
                    .iter()
                    .map(|&(f, phase)| (2.0 * PI * f * time + phase).sin())
                    .sum();
                x.push((amp * scale * clean + noise.sample(rng)) as f32);
            }
        }
    }
    let mut ds = WindowedDataset::new(x, labels, spec.num_classes, spec.channels, l)?;
    if spec.num_subjects > 0 {
        ds.subject_ids = Some((0..count).map(|i| (i % spec.num_subjects) as u32).collect());
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny(n: usize, c: usize, l: usize) -> WindowedDataset {
        let x = (0..n * c * l).map(|v| v as f32 * 0.5).collect();
        let y = (0..n).map(|i| i % 3).collect();
        WindowedDataset::new(x, y, 3, c, l).unwrap()
    }

    #[test]
    fn canonical_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut train = tiny(10, 6, 40);
        train.subject_ids = Some((0..10).collect());
        let test = tiny(4, 6, 40);
        let splits = BTreeMap::from([("train".to_string(), train.clone()), ("test".to_string(), test.clone())]);
        write_canonical(dir.path(), "toy", 50.0, &splits).unwrap();
        let loaded = load_canonical(dir.path()).unwrap();
        assert_eq!(loaded.split("train").unwrap(), &train);
        assert_eq!(loaded.split("test").unwrap(), &test);
        assert_eq!(loaded.manifest.splits["train"].count, 10);
    }

    #[test]
    fn manifest_shape_contract() {
        let dir = tempfile::tempdir().unwrap();
        let splits = BTreeMap::from([("train".to_string(), tiny(10, 6, 400))]);
        write_canonical(dir.path(), "hhar-like", 50.0, &splits).unwrap();
        let loaded = load_canonical(dir.path()).unwrap();
        let ds = loaded.split("train").unwrap();
        assert_eq!((ds.len(), ds.channels, ds.window_length), (10, 6, 400));
        assert_eq!(ds.x.len(), 10 * 6 * 400);
    }

    #[test]
    fn empty_split_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let splits = BTreeMap::from([("train".to_string(), WindowedDataset::empty(5, 1, 3000))]);
        write_canonical(dir.path(), "empty", 100.0, &splits).unwrap();
        assert!(load_canonical(dir.path()).unwrap().split("train").unwrap().is_empty());
    }

    #[test]
    fn byte_count_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let splits = BTreeMap::from([("train".to_string(), tiny(3, 2, 5))]);
        let manifest = write_canonical(dir.path(), "toy", 1.0, &splits).unwrap();
        let path = dir.path().join(&manifest.splits["train"].data_file);
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_canonical(dir.path()), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn missing_file_and_bad_label() {
        let dir = tempfile::tempdir().unwrap();
        let splits = BTreeMap::from([("train".to_string(), tiny(3, 2, 5))]);
        let manifest = write_canonical(dir.path(), "toy", 1.0, &splits).unwrap();
        let labels = dir.path().join(&manifest.splits["train"].labels_file);
        fs::write(&labels, [0i32, 1, 7].iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>()).unwrap();
        assert!(matches!(load_canonical(dir.path()), Err(Error::InvalidLabel { label: 7, .. })));
        fs::remove_file(&labels).unwrap();
        assert!(matches!(load_canonical(dir.path()), Err(Error::MissingFile(_))));
    }

    #[test]
    fn windowing_examples() {
        let signal: Vec<f32> = (0..1000).map(|v| v as f32).collect();
        let (w, k) = window_signal(&signal, 1, 400, 0.5, false).unwrap();
        assert_eq!(k, 4);
        for (i, start) in [0, 200, 400, 600].into_iter().enumerate() {
            assert_eq!(w[i * 400], start as f32);
        }

        let short: Vec<f32> = (1..=500).map(|v| v as f32).collect();
        let (w, k) = window_signal(&short, 1, 512, 0.0, true).unwrap();
        assert_eq!(k, 1);
        assert_eq!(&w[..500], &short[..]);
        assert!(w[500..].iter().all(|&v| v == 0.0));
        assert_eq!(window_signal(&short, 1, 512, 0.0, false).unwrap().1, 0);

        let exact: Vec<f32> = (0..800).map(|v| v as f32).collect();
        let (w, k) = window_signal(&exact, 2, 400, 0.5, false).unwrap();
        assert_eq!(k, 1);
        assert_eq!(w, exact);
    }

    #[test]
    fn windowing_rejects_bad_overlap() {
        assert!(window_signal(&[0.0; 10], 1, 4, 1.0, false).is_err());
        assert!(window_signal(&[0.0; 10], 1, 0, 0.0, false).is_err());
    }

    #[test]
    fn mean_normalization() {
        let ds = WindowedDataset::new(vec![2.5; 8], vec![0, 1], 2, 2, 2).unwrap();
        assert!(normalize_mean(&ds).x.iter().all(|&v| v == 0.0));

        let ds = WindowedDataset::new(vec![1.0, 3.0], vec![0], 2, 1, 2).unwrap();
        assert_eq!(normalize_mean(&ds).x, vec![-1.0, 1.0]);

        let centered = WindowedDataset::new(vec![-1.5, 1.5, 0.25, -0.25], vec![0, 0], 2, 1, 2).unwrap();
        let out = normalize_mean(&centered);
        for (a, b) in out.x.iter().zip(&centered.x) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn normalized_channel_means_are_zero() {
        let (train, _) = make_synthetic(&SyntheticSpec {
            num_classes: 3,
            channels: 2,
            window_length: 32,
            train_count: 30,
            test_count: 3,
            class_separability: 2.0,
            noise_floor: 0.5,
            rng_seed: 3,
            num_subjects: 0,
        })
        .unwrap();
        let out = normalize_mean(&train);
        for m in ChannelMeans::fit(&out).0 {
            assert!(m.abs() < 1e-6);
        }
    }

    #[test]
    fn subject_split() {
        let mut ds = tiny(50, 1, 4);
        ds.subject_ids = Some((0..50).map(|i| i % 10).collect());
        let (train, test) = split_dataset(&ds, SplitMode::BySubject, 0.7, 5).unwrap();
        let a: BTreeSet<u32> = train.subject_ids.unwrap().into_iter().collect();
        let b: BTreeSet<u32> = test.subject_ids.unwrap().into_iter().collect();
        assert_eq!((a.len(), b.len()), (7, 3));
        assert!(a.is_disjoint(&b));
        assert_eq!(a.union(&b).count(), 10);

        assert!(split_dataset(&tiny(5, 1, 4), SplitMode::BySubject, 0.7, 5).is_err());
    }

    #[test]
    fn random_split() {
        let ds = tiny(20, 1, 4);
        let (train, test) = split_dataset(&ds, SplitMode::Random, 1.0, 1).unwrap();
        assert_eq!((train.len(), test.len()), (20, 0));
        let a = split_dataset(&ds, SplitMode::Random, 0.7, 9).unwrap();
        let b = split_dataset(&ds, SplitMode::Random, 0.7, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 14);
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let spec = SyntheticSpec {
            num_classes: 4,
            channels: 2,
            window_length: 48,
            train_count: 40,
            test_count: 8,
            class_separability: 1.0,
            noise_floor: 0.3,
            rng_seed: 12,
            num_subjects: 0,
        };
        let a = make_synthetic(&spec).unwrap();
        let b = make_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.class_counts(), vec![10; 4]);
        assert_eq!(a.1.class_counts(), vec![2; 4]);
    }

    proptest! {
        #[test]
        fn window_count_formula(t in 1usize..300, length in 1usize..64, overlap in 0.0f64..0.95, pad in any::<bool>()) {
            let signal: Vec<f32> = (0..t).map(|v| v as f32).collect();
            let (w, k) = window_signal(&signal, 1, length, overlap, pad).unwrap();
            let stride = ((length as f64 * (1.0 - overlap)).round() as usize).max(1);
            let full = if t >= length { (t - length) / stride + 1 } else { 0 };
            prop_assert!(k == full || (pad && k == full + 1));
            for i in 0..full {
                prop_assert_eq!(&w[i * length..(i + 1) * length], &signal[i * stride..i * stride + length]);
            }
        }
    }
}
