//! Datasets: synthetic generation and the delimited text file format.
//!
//! File format (space-delimited text):
//!
//! ```text
//! <d_feat> <classes>
//! <f_1> ... <f_d> <label>
//! ...
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so a save/load
//! cycle reproduces every bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::seeding::seeded_rng;

/// A labeled feature set.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// Generator seed or source path, for audit trails.
    pub provenance: String,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize, provenance: String) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::State {
                message: format!(
                    "{} labels for {} feature rows",
                    labels.len(),
                    features.rows()
                ),
            });
        }
        if classes < 1 {
            return Err(Error::InvalidParameter {
                name: "classes",
                message: "must be at least 1".to_string(),
            });
        }
        for (row, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(Error::LabelOutOfRange {
                    row,
                    label,
                    classes,
                });
            }
        }
        Ok(Self {
            features,
            labels,
            classes,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn d_feat(&self) -> usize {
        self.features.cols()
    }

    /// Materialize a subset by row indices.
    pub fn take(&self, indices: &[usize]) -> Result<Dataset> {
        let features = self.features.gather_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(features, labels, self.classes, self.provenance.clone())
    }

    /// Row indices per class, ascending within each class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.classes];
        for (i, &label) in self.labels.iter().enumerate() {
            by_class[label].push(i);
        }
        by_class
    }

    /// Per-class sample counts.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.classes];
        for &label in &self.labels {
            hist[label] += 1;
        }
        hist
    }
}

/// Recipe for a synthetic dataset: class means are random unit vectors
/// scaled by `separation`, samples are unit-variance Gaussians around them.
///
/// `mean_seed` fixes the class-mean layout independently of the sample
/// noise, and `mean_jitter` perturbs the means — that is how a shifted
/// "target" distribution is derived from a "source" with the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub d_feat: usize,
    pub per_class: usize,
    pub separation: f64,
    pub seed: u64,
    pub mean_seed: u64,
    pub mean_jitter: f64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let checks: [(&'static str, bool); 5] = [
            ("classes", self.classes >= 1),
            ("d_feat", self.d_feat >= 1),
            ("per_class", self.per_class >= 1),
            ("separation", self.separation >= 0.0 && self.separation.is_finite()),
            ("mean_jitter", self.mean_jitter >= 0.0 && self.mean_jitter.is_finite()),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(Error::InvalidParameter {
                    name,
                    message: "out of range".to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Generate a synthetic dataset; bitwise deterministic per spec.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut mean_rng = seeded_rng("synth-means", &[spec.mean_seed]);
    let mut means = Vec::with_capacity(spec.classes);
    for _ in 0..spec.classes {
        let dir = unit_vector(spec.d_feat, &mut mean_rng);
        means.push(dir);
    }
    if spec.mean_jitter > 0.0 {
        let mut jitter_rng = seeded_rng("synth-jitter", &[spec.mean_seed, spec.seed]);
        for mean in &mut means {
            let noise = unit_vector(spec.d_feat, &mut jitter_rng);
            for (m, n) in mean.iter_mut().zip(&noise) {
                *m += spec.mean_jitter * n;
            }
            let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for m in mean.iter_mut() {
                    *m /= norm;
                }
            }
        }
    }

    let n = spec.classes * spec.per_class;
    let mut noise_rng = seeded_rng("synth-noise", &[spec.seed]);
    let mut data = Vec::with_capacity(n * spec.d_feat);
    let mut labels = Vec::with_capacity(n);
    for class in 0..spec.classes {
        for _ in 0..spec.per_class {
            for dim in 0..spec.d_feat {
                let z: f64 = noise_rng.sample(StandardNormal);
                data.push(spec.separation * means[class][dim] + z);
            }
            labels.push(class);
        }
    }
    let features = Matrix::from_vec(n, spec.d_feat, data)?;
    Dataset::new(
        features,
        labels,
        spec.classes,
        format!("synthetic seed={} mean_seed={}", spec.seed, spec.mean_seed),
    )
}

fn unit_vector<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Serialize in the documented text format.
pub fn dataset_to_string(dataset: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", dataset.d_feat(), dataset.classes);
    for r in 0..dataset.len() {
        for v in dataset.features.row(r) {
            let _ = write!(out, "{v} ");
        }
        let _ = writeln!(out, "{}", dataset.labels[r]);
    }
    out
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    Ok(fs::write(path, dataset_to_string(dataset))?)
}

/// Parse the documented text format, validating every row.
pub fn parse_dataset(text: &str, provenance: String) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty file".to_string(),
    })?;
    let mut parts = header.split_whitespace();
    let d_feat: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or(Error::Parse {
            line: 1,
            message: "header must be `<d_feat> <classes>`".to_string(),
        })?;
    let classes: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or(Error::Parse {
            line: 1,
            message: "header must be `<d_feat> <classes>`".to_string(),
        })?;
    if parts.next().is_some() {
        return Err(Error::Parse {
            line: 1,
            message: "trailing tokens in header".to_string(),
        });
    }
    if d_feat == 0 || classes == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "d_feat and classes must be positive".to_string(),
        });
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut row = 0usize;
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != d_feat + 1 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} tokens, found {}", d_feat + 1, tokens.len()),
            });
        }
        for tok in &tokens[..d_feat] {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad float `{tok}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "non-finite feature".to_string(),
                });
            }
            data.push(v);
        }
        let label: usize = tokens[d_feat].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("bad label `{}`", tokens[d_feat]),
        })?;
        if label >= classes {
            return Err(Error::LabelOutOfRange {
                row: line_no,
                label,
                classes,
            });
        }
        labels.push(label);
        row += 1;
    }
    if row == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".to_string(),
        });
    }
    let features = Matrix::from_vec(row, d_feat, data)?;
    Dataset::new(features, labels, classes, provenance)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, path.display().to_string())
}
