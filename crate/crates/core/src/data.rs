//! Dataset ingestion and synthetic task generation.
//!
//! The acceptance substrate is a seeded Gaussian mixture: one isotropic
//! cluster per class, centers drawn uniformly inside the unit hypercube so
//! raw values live approximately in [0,1] (direct-current input range for the
//! spiking layers). Real data enters through a flat binary format or CSV —
//! deliberately no image decoding here.
//!
//! Flat binary layout (little-endian):
//!
//! ```text
//! magic   8 bytes  "SNNCILDS"
//! version u32      1
//! n       u32      sample count
//! d       u32      feature dimension
//! classes u32      class count
//! samples n*d f64  row-major
//! labels  n   i32
//! ```

use crate::cil::{TaskStep, TaskStream};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::{select_rows, Tensor};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const DATASET_MAGIC: &[u8; 8] = b"SNNCILDS";
const DATASET_VERSION: u32 = 1;

/// How sample values were brought into model range; informational metadata.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// Values taken as-is from the source.
    Raw,
    /// Values lie in [0,1] by construction or rescaling.
    UnitRange,
}

/// On-disk dataset encodings accepted by [`load_raw_dataset`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    FlatBinary,
    Csv,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat-binary" => Ok(DataFormat::FlatBinary),
            "csv" => Ok(DataFormat::Csv),
            other => Err(Error::Usage(format!(
                "unknown dataset format '{other}' (expected flat-binary or csv)"
            ))),
        }
    }
}

/// Feature matrix plus integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    samples: Tensor,
    labels: Vec<usize>,
    class_count: usize,
    pub normalization: Normalization,
}

impl LabeledDataset {
    pub fn new(
        samples: Tensor,
        labels: Vec<usize>,
        class_count: usize,
        normalization: Normalization,
    ) -> Result<Self> {
        if samples.rank() != 2 || samples.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "dataset: {:?} samples vs {} labels",
                samples.shape(),
                labels.len()
            )));
        }
        if !samples.all_finite() {
            return Err(Error::Data("dataset contains non-finite values".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Self {
            samples,
            labels,
            class_count,
            normalization,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Sub-dataset of the given rows, preserving order.
    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            samples: select_rows(&self.samples, idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            normalization: self.normalization,
        }
    }

    /// Concatenation; class counts and dims must agree.
    pub fn merge(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        if self.dim() != other.dim() || self.class_count != other.class_count {
            return Err(Error::Dimension(format!(
                "merge: [{},{}]x{} vs [{},{}]x{}",
                self.len(),
                self.dim(),
                self.class_count,
                other.len(),
                other.dim(),
                other.class_count
            )));
        }
        let mut data = self.samples.data().to_vec();
        data.extend_from_slice(other.samples.data());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(LabeledDataset {
            samples: Tensor::new(vec![labels.len(), self.dim()], data)?,
            labels,
            class_count: self.class_count,
            normalization: self.normalization,
        })
    }

    /// Relabel in place through `map[old] = new`, with a new class count.
    pub fn remap_labels(&mut self, map: &[usize], class_count: usize) -> Result<()> {
        for l in &mut self.labels {
            let n = map[*l];
            if n >= class_count {
                return Err(Error::Data(format!(
                    "remapped label {n} out of range for {class_count} classes"
                )));
            }
            *l = n;
        }
        self.class_count = class_count;
        Ok(())
    }
}

/// Parameters of the synthetic Gaussian benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskConfig {
    pub n_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub cluster_spread: f64,
    pub seed: u64,
}

/// Seeded Gaussian mixture, split 80/20 stratified into (train, test).
///
/// Per class: the center is drawn from U(0.2, 0.8)^dim on its own stream,
/// samples are center + spread·N(0, I); the first 80% of draws become
/// training rows. Deterministic per seed.
pub fn generate_gaussian_tasks(cfg: &SyntheticTaskConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    if cfg.n_classes < 2 {
        return Err(Error::Usage("synthetic benchmark needs >= 2 classes".into()));
    }
    if cfg.samples_per_class < 4 {
        return Err(Error::Usage("need >= 4 samples per class".into()));
    }
    if !(cfg.cluster_spread > 0.0) && cfg.cluster_spread != 0.0 {
        return Err(Error::Usage("cluster_spread must be >= 0".into()));
    }
    let n_train_per = (cfg.samples_per_class * 4) / 5;
    let n_test_per = cfg.samples_per_class - n_train_per;
    let mut train_rows = Vec::with_capacity(cfg.n_classes * n_train_per * cfg.dim);
    let mut test_rows = Vec::with_capacity(cfg.n_classes * n_test_per * cfg.dim);
    let mut train_labels = Vec::new();
    let mut test_labels = Vec::new();
    for class in 0..cfg.n_classes {
        let mut crng = stream_rng(cfg.seed, "synthetic.center", class as u64);
        let center: Vec<f64> = (0..cfg.dim).map(|_| crng.random_range(0.2..0.8)).collect();
        let mut srng = stream_rng(cfg.seed, "synthetic.sample", class as u64);
        for i in 0..cfg.samples_per_class {
            let row: Vec<f64> = center
                .iter()
                .map(|&c| {
                    let z: f64 = StandardNormal.sample(&mut srng);
                    c + cfg.cluster_spread * z
                })
                .collect();
            if i < n_train_per {
                train_rows.extend_from_slice(&row);
                train_labels.push(class);
            } else {
                test_rows.extend_from_slice(&row);
                test_labels.push(class);
            }
        }
    }
    let train = LabeledDataset::new(
        Tensor::new(vec![train_labels.len(), cfg.dim], train_rows)?,
        train_labels,
        cfg.n_classes,
        Normalization::UnitRange,
    )?;
    let test = LabeledDataset::new(
        Tensor::new(vec![test_labels.len(), cfg.dim], test_rows)?,
        test_labels,
        cfg.n_classes,
        Normalization::UnitRange,
    )?;
    Ok((train, test))
}

/// Partition classes into an incremental stream.
///
/// Class order is a seeded permutation. Step 1 receives `base_classes`
/// (or the equal share when 0); remaining classes split equally over the
/// remaining steps. Labels are remapped so classes appear in stream order:
/// step s covers the contiguous id range it introduces, and
/// `original_class[new_id]` recovers the source label.
pub fn split_stream(
    train: &LabeledDataset,
    test: &LabeledDataset,
    n_steps: usize,
    base_classes: usize,
    order_seed: u64,
) -> Result<TaskStream> {
    let c = train.class_count();
    if test.class_count() != c {
        return Err(Error::Usage("train/test class counts differ".into()));
    }
    if n_steps == 0 || n_steps > c {
        return Err(Error::Usage(format!("cannot split {c} classes into {n_steps} steps")));
    }
    let base = if base_classes == 0 {
        if c % n_steps != 0 {
            return Err(Error::Usage(format!(
                "{c} classes not divisible into {n_steps} equal steps"
            )));
        }
        c / n_steps
    } else {
        base_classes
    };
    if base > c || (n_steps == 1 && base != c) {
        return Err(Error::Usage(format!(
            "base {base} inconsistent with {c} classes in {n_steps} steps"
        )));
    }
    let per_step = if n_steps == 1 {
        0
    } else {
        let rest = c - base;
        if rest % (n_steps - 1) != 0 {
            return Err(Error::Usage(format!(
                "{rest} remaining classes not divisible over {} steps",
                n_steps - 1
            )));
        }
        rest / (n_steps - 1)
    };

    // Fisher-Yates on its own stream; new id = position in shuffled order.
    let mut order: Vec<usize> = (0..c).collect();
    let mut rng = stream_rng(order_seed, "stream.order", 0);
    for i in (1..c).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut remap = vec![0usize; c];
    for (new_id, &orig) in order.iter().enumerate() {
        remap[orig] = new_id;
    }

    let mut steps = Vec::with_capacity(n_steps);
    let mut start = 0usize;
    for s in 0..n_steps {
        let count = if s == 0 { base } else { per_step };
        let range = start..start + count;
        let take = |ds: &LabeledDataset| -> Result<LabeledDataset> {
            let idx: Vec<usize> = (0..ds.len())
                .filter(|&i| range.contains(&remap[ds.labels()[i]]))
                .collect();
            let mut sub = ds.subset(&idx);
            sub.remap_labels(&remap, c)?;
            Ok(sub)
        };
        steps.push(TaskStep {
            classes: range.clone(),
            train: take(train)?,
            test: take(test)?,
        });
        start += count;
    }
    Ok(TaskStream {
        steps,
        original_class: order,
        order_seed,
    })
}

fn read_exact_checked(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("truncated dataset file while reading {what}")))
}

/// Write the flat binary encoding documented in the module header.
pub fn save_flat_binary(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(DATASET_MAGIC)?;
    f.write_all(&DATASET_VERSION.to_le_bytes())?;
    f.write_all(&(ds.len() as u32).to_le_bytes())?;
    f.write_all(&(ds.dim() as u32).to_le_bytes())?;
    f.write_all(&(ds.class_count() as u32).to_le_bytes())?;
    for v in ds.samples.data() {
        f.write_all(&v.to_le_bytes())?;
    }
    for &l in &ds.labels {
        f.write_all(&(l as i32).to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

fn load_flat_binary(path: &Path) -> Result<LabeledDataset> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    read_exact_checked(&mut f, &mut magic, "magic")?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format("bad dataset magic bytes".into()));
    }
    let mut u32buf = [0u8; 4];
    read_exact_checked(&mut f, &mut u32buf, "version")?;
    let version = u32::from_le_bytes(u32buf);
    if version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset version {version} (expected {DATASET_VERSION})"
        )));
    }
    read_exact_checked(&mut f, &mut u32buf, "sample count")?;
    let n = u32::from_le_bytes(u32buf) as usize;
    read_exact_checked(&mut f, &mut u32buf, "dimension")?;
    let d = u32::from_le_bytes(u32buf) as usize;
    read_exact_checked(&mut f, &mut u32buf, "class count")?;
    let classes = u32::from_le_bytes(u32buf) as usize;
    if d == 0 || classes == 0 {
        return Err(Error::Format("zero dimension or class count in header".into()));
    }
    let mut data = vec![0.0f64; n * d];
    let mut f64buf = [0u8; 8];
    for v in &mut data {
        read_exact_checked(&mut f, &mut f64buf, "samples")?;
        *v = f64::from_le_bytes(f64buf);
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        read_exact_checked(&mut f, &mut u32buf, "labels")?;
        let l = i32::from_le_bytes(u32buf);
        if l < 0 {
            return Err(Error::Data(format!("negative label {l}")));
        }
        labels.push(l as usize);
    }
    LabeledDataset::new(Tensor::new(vec![n, d], data)?, labels, classes, Normalization::Raw)
}

fn load_csv(path: &Path) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut dim = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::Format(format!(
                "line {}: need at least one feature and a label",
                lineno + 1
            )));
        }
        let d = fields.len() - 1;
        if *dim.get_or_insert(d) != d {
            return Err(Error::Format(format!(
                "line {}: {} features, expected {}",
                lineno + 1,
                d,
                dim.unwrap()
            )));
        }
        let mut row = Vec::with_capacity(d);
        for fld in &fields[..d] {
            row.push(fld.parse::<f64>().map_err(|_| {
                Error::Format(format!("line {}: bad number '{fld}'", lineno + 1))
            })?);
        }
        let label: i64 = fields[d]
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad label '{}'", lineno + 1, fields[d])))?;
        if label < 0 {
            return Err(Error::Data(format!("line {}: negative label", lineno + 1)));
        }
        rows.push(row);
        labels.push(label as usize);
    }
    if rows.is_empty() {
        return Err(Error::Format("empty CSV dataset".into()));
    }
    let classes = labels.iter().max().unwrap() + 1;
    LabeledDataset::new(Tensor::from_rows(&rows)?, labels, classes, Normalization::Raw)
}

/// Load a dataset in one of the documented encodings.
pub fn load_raw_dataset(path: &Path, format: DataFormat) -> Result<LabeledDataset> {
    match format {
        DataFormat::FlatBinary => load_flat_binary(path),
        DataFormat::Csv => load_csv(path),
    }
}
