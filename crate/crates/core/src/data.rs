//! Labelled datasets: synthetic Gaussian clusters, IDX (MNIST-style) and CSV
//! loaders.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// Feature vectors in `[0, 1]^dim` with class labels in `0..classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let dim = features.first().map_or(0, Vec::len);
        if features.iter().any(|f| f.len() != dim) {
            return Err(Error::Consistency("feature rows differ in length".into()));
        }
        Self::from_flat(features.concat(), labels, dim, classes)
    }

    pub fn from_flat(features: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        if features.len() != labels.len() * dim {
            return Err(Error::Consistency(format!(
                "{} feature values for {} samples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Label { label: bad, classes });
        }
        Ok(Dataset {
            features,
            labels,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> (&[f64], usize) {
        (self.features(i), self.labels[i])
    }

    /// Indices of every sample, grouped by class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.classes];
        for (i, &y) in self.labels.iter().enumerate() {
            by_class[y].push(i);
        }
        by_class
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            dim: self.dim,
            classes: self.classes,
        }
    }
}

/// Parameters of the Gaussian-cluster generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_per_class: usize,
    pub classes: usize,
    pub dim: usize,
    /// Distance of every class mean from the centre of the unit cube.
    pub separation: f64,
    /// Per-coordinate standard deviation around each mean.
    pub spread: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 || self.classes < 2 || self.dim == 0 {
            return Err(Error::Config(
                "synthetic data needs n_per_class >= 1, classes >= 2, dim >= 1".into(),
            ));
        }
        if !(self.separation >= 0.0) || !(self.spread >= 0.0) {
            return Err(Error::Config("separation and spread must be >= 0".into()));
        }
        Ok(())
    }

    /// Class means: `0.5 + separation/2 * u_c` with `u_c` a random unit
    /// direction drawn from the spec seed.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        (0..self.classes)
            .map(|c| {
                let mut rng = stream(self.seed, Purpose::Data, &[0, c as u64]);
                let dir: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                dir.iter().map(|v| 0.5 + 0.5 * self.separation * v / norm).collect()
            })
            .collect()
    }
}

/// Training split of the Gaussian-cluster task.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    make_synthetic_split(spec, 0)
}

/// Draws split `split` of the task; all splits share the class means, so a
/// different split index gives an independent held-out set.
pub fn make_synthetic_split(spec: &SyntheticSpec, split: u64) -> Result<Dataset> {
    spec.validate()?;
    let means = spec.class_means();
    let mut rng = stream(spec.seed, Purpose::Data, &[1, split]);
    let n = spec.n_per_class * spec.classes;
    let mut features = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..spec.n_per_class {
        for (c, mean) in means.iter().enumerate() {
            for m in mean {
                let z: f64 = rng.sample(StandardNormal);
                features.push((m + spec.spread * z).clamp(0.0, 1.0));
            }
            labels.push(c);
        }
    }
    Dataset::from_flat(features, labels, spec.dim, spec.classes)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("{what}: {e}")))?;
    Ok(u32::from_be_bytes(b))
}

/// Reads an IDX image/label file pair; pixels are scaled by `1/255`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let open = |p: &Path| File::open(p).map(BufReader::new).map_err(|e| Error::io(p, e));

    let mut img = open(images)?;
    let magic = read_be_u32(&mut img, "image header")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{}: image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}",
            images.display()
        )));
    }
    let count = read_be_u32(&mut img, "image count")? as usize;
    let rows = read_be_u32(&mut img, "row count")? as usize;
    let cols = read_be_u32(&mut img, "column count")? as usize;
    let dim = rows * cols;
    let mut pixels = vec![0u8; count * dim];
    img.read_exact(&mut pixels)
        .map_err(|e| Error::Format(format!("{}: pixel data: {e}", images.display())))?;

    let mut lab = open(labels)?;
    let magic = read_be_u32(&mut lab, "label header")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "{}: label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}",
            labels.display()
        )));
    }
    let label_count = read_be_u32(&mut lab, "label count")? as usize;
    if label_count != count {
        return Err(Error::Consistency(format!(
            "{count} images but {label_count} labels"
        )));
    }
    let mut raw = vec![0u8; count];
    lab.read_exact(&mut raw)
        .map_err(|e| Error::Format(format!("{}: label data: {e}", labels.display())))?;

    let labels: Vec<usize> = raw.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1).max(2);
    let features = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Dataset::from_flat(features, labels, dim, classes)
}

/// Reads a CSV with header `label,f0,f1,...`; features must lie in `[0, 1]`.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let header = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .clone();
    if header.get(0) != Some("label") {
        return Err(Error::Format(format!(
            "{}: first column must be `label`",
            path.display()
        )));
    }
    let dim = header.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if record.len() != dim + 1 {
            return Err(Error::Consistency(format!("row {row}: expected {} fields", dim + 1)));
        }
        let bad = |field: &str| Error::Format(format!("row {row}: cannot parse `{field}`"));
        labels.push(record[0].trim().parse::<usize>().map_err(|_| bad(&record[0]))?);
        for field in record.iter().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| bad(field))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Format(format!("row {row}: feature {v} outside [0, 1]")));
            }
            features.push(v);
        }
    }
    let classes = labels.iter().max().map_or(1, |m| m + 1).max(2);
    Dataset::from_flat(features, labels, dim, classes)
}

pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    let to_err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut header = vec!["label".to_string()];
    header.extend((0..dataset.dim()).map(|i| format!("f{i}")));
    writer.write_record(&header).map_err(to_err)?;
    for i in 0..dataset.len() {
        let (x, y) = dataset.get(i);
        let mut row = vec![y.to_string()];
        row.extend(x.iter().map(|v| v.to_string()));
        writer.write_record(&row).map_err(to_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
