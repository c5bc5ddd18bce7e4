//! Synthetic dataset generation and CSV persistence.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::process::DataPoint;
use crate::rng::Rng;

/// Which role a dataset plays in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Heldout,
}

/// An `[n, d]` point set with optional integer labels and provenance.
#[derive(Debug, Clone)]
pub struct Dataset {
    points: Tensor,
    labels: Option<Vec<usize>>,
    split: Split,
    /// Generator spec and seed (or file path) this dataset came from.
    provenance: String,
}

impl Dataset {
    pub fn new(
        points: Tensor,
        labels: Option<Vec<usize>>,
        split: Split,
        provenance: String,
    ) -> Result<Self> {
        if points.shape().len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "dataset points must be [n, d], got {:?}",
                points.shape()
            )));
        }
        if !points.all_finite() {
            return Err(Error::InvalidArgument(
                "dataset contains non-finite entries".into(),
            ));
        }
        if let Some(l) = &labels {
            if l.len() != points.shape()[0] {
                return Err(Error::InvalidArgument(format!(
                    "{} labels for {} points",
                    l.len(),
                    points.shape()[0]
                )));
            }
        }
        Ok(Dataset {
            points,
            labels,
            split,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.points.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.shape()[1]
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Inferred class count: one past the largest label.
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn point(&self, i: usize) -> DataPoint {
        DataPoint {
            x0: self.points.row(i).to_vec(),
            label: self.labels.as_ref().map(|l| l[i]),
        }
    }

    /// Rows (and labels) at the given indices, stacked into a batch.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Option<Vec<usize>>)> {
        let rows: Vec<Vec<f64>> = indices.iter().map(|&i| self.points.row(i).to_vec()).collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Ok((Tensor::from_rows(&rows)?, labels))
    }
}

/// Draws `n` points from equal-weight Gaussians centered on a circle.
///
/// Mode `k` sits at angle `2 pi k / modes` and radius `radius`; each point
/// is its center plus `std`-scaled Gaussian noise. With `labeled` the mode
/// index becomes the class label. A pure function of its arguments.
pub fn make_mixture(
    n: usize,
    modes: usize,
    radius: f64,
    std: f64,
    seed: u64,
    labeled: bool,
) -> Result<Dataset> {
    if modes == 0 {
        return Err(Error::InvalidArgument("need at least one mode".into()));
    }
    let mut rng = Rng::from_seed(seed);
    let centers: Vec<(f64, f64)> = (0..modes)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / modes as f64;
            (radius * angle.cos(), radius * angle.sin())
        })
        .collect();
    let mut values = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.uniform_int(0, modes - 1);
        let (cx, cy) = centers[k];
        values.push(cx + std * rng.normal());
        values.push(cy + std * rng.normal());
        labels.push(k);
    }
    Dataset::new(
        Tensor::new(vec![n, 2], values)?,
        labeled.then_some(labels),
        Split::Train,
        format!("mixture(n={n},modes={modes},radius={radius},std={std},seed={seed})"),
    )
}

/// Writes one point per row at full float precision; the label, when
/// present, is the last column.
pub fn save_csv_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut out = String::new();
    for i in 0..dataset.len() {
        let row = dataset.points().row(i);
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            write!(out, "{v}").expect("write to string");
            first = false;
        }
        if let Some(labels) = dataset.labels() {
            write!(out, ",{}", labels[i]).expect("write to string");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parses a rectangular numeric CSV; dimension is inferred from the first
/// row and the label column is last when `has_labels`. Rows are numbered
/// from 1 in errors.
pub fn load_csv_dataset(path: &Path, has_labels: bool) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let row_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut cells: Vec<f64> = Vec::new();
        for cell in line.split(',') {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Csv {
                row: row_no,
                msg: format!("non-numeric cell {cell:?}"),
            })?;
            cells.push(v);
        }
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(Error::Csv {
                    row: row_no,
                    msg: format!("ragged row: {} cells, expected {w}", cells.len()),
                })
            }
            _ => {}
        }
        if has_labels {
            let raw = cells.pop().ok_or(Error::Csv {
                row: row_no,
                msg: "labeled file needs at least one column".into(),
            })?;
            if raw < 0.0 || raw.fract() != 0.0 {
                return Err(Error::Csv {
                    row: row_no,
                    msg: format!("label must be a nonnegative integer, got {raw}"),
                });
            }
            labels.push(raw as usize);
        }
        rows.push(cells);
    }
    if rows.is_empty() {
        return Err(Error::Csv {
            row: 0,
            msg: "empty dataset file".into(),
        });
    }
    Dataset::new(
        Tensor::from_rows(&rows)?,
        has_labels.then_some(labels),
        Split::Train,
        format!("csv({})", path.display()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn single_centered_mode_has_zero_mean() {
        let ds = make_mixture(100_000, 1, 0.0, 0.5, 1, false).unwrap();
        let n = ds.len() as f64;
        let mut mean = [0.0, 0.0];
        for i in 0..ds.len() {
            mean[0] += ds.points().row(i)[0] / n;
            mean[1] += ds.points().row(i)[1] / n;
        }
        let se = 0.5 / n.sqrt();
        assert!(mean[0].abs() < 4.0 * se);
        assert!(mean[1].abs() < 4.0 * se);
    }

    #[test]
    fn mode_counts_near_uniform() {
        // multinomial oracle: per-mode count within 4 sigma of n/8
        let n = 80_000;
        let ds = make_mixture(n, 8, 2.0, 0.1, 3, true).unwrap();
        let mut counts = [0usize; 8];
        for &l in ds.labels().unwrap() {
            counts[l] += 1;
        }
        let p = 1.0 / 8.0;
        let expect = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (k, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expect).abs() < 4.0 * sigma,
                "mode {k} count {c}"
            );
        }
        assert_eq!(ds.num_classes(), Some(8));
    }

    #[test]
    fn mixture_is_seed_deterministic() {
        let a = make_mixture(64, 4, 1.0, 0.2, 9, true).unwrap();
        let b = make_mixture(64, 4, 1.0, 0.2, 9, true).unwrap();
        assert_eq!(a.points().values(), b.points().values());
        assert_eq!(a.labels(), b.labels());
        let c = make_mixture(64, 4, 1.0, 0.2, 10, true).unwrap();
        assert_ne!(a.points().values(), c.points().values());
    }

    #[test]
    fn csv_roundtrip_is_lossless() {
        let mut rng = Rng::from_seed(4);
        let values = rng.normal_vec(300);
        let ds = Dataset::new(
            Tensor::new(vec![100, 3], values).unwrap(),
            None,
            Split::Train,
            "test".into(),
        )
        .unwrap();
        let dir = std::env::temp_dir().join("lrdm_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.csv");
        save_csv_dataset(&path, &ds).unwrap();
        let back = load_csv_dataset(&path, false).unwrap();
        assert_eq!(back.dim(), 3);
        for (a, b) in ds.points().values().iter().zip(back.points().values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn ragged_row_names_row_number() {
        let dir = std::env::temp_dir().join("lrdm_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ragged.csv");
        let mut text = String::new();
        for i in 0..10 {
            if i == 6 {
                text.push_str("1.0,2.0\n"); // row 7 is short
            } else {
                text.push_str("1.0,2.0,3.0\n");
            }
        }
        std::fs::write(&path, text).unwrap();
        let err = load_csv_dataset(&path, false).unwrap_err().to_string();
        assert!(err.contains("row 7"), "{err}");
    }

    #[test]
    fn labels_infer_class_count() {
        let dir = std::env::temp_dir().join("lrdm_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("labeled.csv");
        std::fs::write(&path, "0.1,0.2,0\n0.3,0.4,1\n0.5,0.6,2\n0.7,0.8,1\n").unwrap();
        let ds = load_csv_dataset(&path, true).unwrap();
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.num_classes(), Some(3));
        assert_eq!(ds.labels().unwrap(), &[0, 1, 2, 1]);
    }

    #[test]
    fn non_numeric_cell_is_an_error() {
        let dir = std::env::temp_dir().join("lrdm_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        std::fs::write(&path, "1.0,2.0\n1.0,abc\n").unwrap();
        let err = load_csv_dataset(&path, false).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("abc"), "{err}");
    }
}
