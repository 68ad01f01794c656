use std::path::Path;

use crate::error::{Error, Result};
use crate::gmm::GmmParams;
use crate::samplers::{sample_mvn, Matrix, RngStream};
use crate::suffiae::LabeledBatch;

/// Rectangular table of finite features plus a binary label column.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvDataset {
    pub feature_names: Vec<String>,
    pub label_name: String,
    pub features: Matrix,
    pub labels: Vec<u8>,
}

impl CsvDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn to_batch(&self) -> Result<LabeledBatch> {
        LabeledBatch::new(self.features.clone(), self.labels.clone())
    }
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{}: {e}", path.display()))
}

pub fn ingest_csv(path: &Path, label_column: &str) -> Result<CsvDataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(path, e))?;
    let header = reader.headers().map_err(|e| parse_err(path, e))?.clone();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingColumn(label_column.to_string()))?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, e))?;
        if rec.len() != header.len() {
            return Err(parse_err(path, format!("row {row} has {} fields", rec.len())));
        }
        for (col, field) in rec.iter().enumerate() {
            let field = field.trim();
            if col == label_idx {
                labels.push(match field {
                    "0" => 0,
                    "1" => 1,
                    v => {
                        return Err(Error::NonBinaryLabel {
                            row,
                            value: v.to_string(),
                        })
                    }
                });
                continue;
            }
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, format!("row {row}, column {col}: {field:?} is not a number")))?;
            if !v.is_finite() {
                return Err(Error::NonFiniteFeature { row, column: header[col].to_string() });
            }
            data.push(v);
        }
    }
    Ok(CsvDataset {
        features: Matrix::new(labels.len(), feature_names.len(), data)?,
        feature_names,
        label_name: label_column.to_string(),
        labels,
    })
}

pub fn write_csv(path: &Path, ds: &CsvDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| parse_err(path, e))?;
    let mut header = ds.feature_names.clone();
    header.push(ds.label_name.clone());
    w.write_record(&header).map_err(|e| parse_err(path, e))?;
    for (x, y) in ds.features.row_iter().zip(&ds.labels) {
        let mut rec: Vec<String> = x.iter().map(f64::to_string).collect();
        rec.push(y.to_string());
        w.write_record(&rec).map_err(|e| parse_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub const TRIMODAL_MEANS: [[f64; 2]; 3] = [[-9.0, 3.0], [0.0, -9.0], [8.0, 3.0]];

/// Tri-modal fixture: shuffled rows, their generating component, and the
/// true mixture.
#[derive(Debug, Clone)]
pub struct TrimodalData {
    pub x: Matrix,
    pub component: Vec<usize>,
    pub truth: GmmParams,
}

pub fn trimodal_truth() -> GmmParams {
    GmmParams::new(
        vec![1.0 / 3.0; 3],
        TRIMODAL_MEANS.iter().map(|m| m.to_vec()).collect(),
        vec![Matrix::identity(2); 3],
    )
    .expect("fixed trimodal parameters are valid")
}

pub fn generate_trimodal(n_per_component: usize, rng: &mut RngStream) -> Result<TrimodalData> {
    if n_per_component == 0 {
        return Err(Error::Config("n_per_component must be at least 1".into()));
    }
    let truth = trimodal_truth();
    let mut rows = Vec::with_capacity(3 * n_per_component);
    for (k, mu) in truth.means().iter().enumerate() {
        for _ in 0..n_per_component {
            rows.push((sample_mvn(mu, &truth.covs()[k], rng)?, k));
        }
    }
    rng.shuffle(&mut rows);
    let component = rows.iter().map(|r| r.1).collect();
    let data = rows.into_iter().flat_map(|r| r.0).collect();
    Ok(TrimodalData {
        x: Matrix::new(3 * n_per_component, 2, data)?,
        component,
        truth,
    })
}

/// Synthetic stand-in for the clinical and vehicle tables: raw features are
/// `A u + noise`, with a low-dimensional latent `u` whose mean moves with
/// the label and with a per-site shift.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoClassGenerator {
    loading: Matrix,
    class_shift: Vec<f64>,
    noise_sd: f64,
}

impl TwoClassGenerator {
    pub fn new(raw_dim: usize, latent_dim: usize, separation: f64, noise_sd: f64, rng: &mut RngStream) -> Result<Self> {
        if raw_dim == 0 || latent_dim == 0 || latent_dim > raw_dim {
            return Err(Error::Config(format!(
                "need 0 < latent_dim ({latent_dim}) <= raw_dim ({raw_dim})"
            )));
        }
        let scale = 1.0 / (latent_dim as f64).sqrt();
        let loading = Matrix::new(
            raw_dim,
            latent_dim,
            (0..raw_dim * latent_dim).map(|_| scale * rng.standard_normal()).collect(),
        )?;
        let mut class_shift = vec![0.0; latent_dim];
        class_shift[0] = separation;
        Ok(Self {
            loading,
            class_shift,
            noise_sd,
        })
    }

    pub fn raw_dim(&self) -> usize {
        self.loading.rows()
    }

    /// `n0` label-0 rows followed by `n1` label-1 rows, shuffled.
    pub fn sample(&self, n0: usize, n1: usize, site_shift: &[f64], rng: &mut RngStream) -> Result<LabeledBatch> {
        let latent = self.loading.cols();
        let mut rows: Vec<(Vec<f64>, u8)> = Vec::with_capacity(n0 + n1);
        for (count, label) in [(n0, 0u8), (n1, 1u8)] {
            for _ in 0..count {
                let u: Vec<f64> = (0..latent)
                    .map(|i| {
                        let c = if label == 1 { self.class_shift[i] } else { 0.0 };
                        c + site_shift.get(i).copied().unwrap_or(0.0) + rng.standard_normal()
                    })
                    .collect();
                let mut x = self.loading.mul_vec(&u)?;
                x.iter_mut().for_each(|v| *v += self.noise_sd * rng.standard_normal());
                rows.push((x, label));
            }
        }
        rng.shuffle(&mut rows);
        let labels = rows.iter().map(|r| r.1).collect();
        let data = rows.into_iter().flat_map(|r| r.0).collect();
        LabeledBatch::new(Matrix::new(n0 + n1, self.raw_dim(), data)?, labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trimodal_sizes_and_determinism() {
        let a = generate_trimodal(3000, &mut RngStream::new(1)).unwrap();
        assert_eq!(a.x.rows(), 9000);
        assert_eq!(a.component.iter().filter(|&&c| c == 2).count(), 3000);
        let b = generate_trimodal(3000, &mut RngStream::new(1)).unwrap();
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn trimodal_component_means() {
        let d = generate_trimodal(10_000, &mut RngStream::new(2)).unwrap();
        for (k, mu) in TRIMODAL_MEANS.iter().enumerate() {
            let rows: Vec<&[f64]> = d.x.row_iter().zip(&d.component).filter(|(_, &c)| c == k).map(|(r, _)| r).collect();
            for j in 0..2 {
                let m = rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
                assert!((m - mu[j]).abs() < 0.05, "component {k} coord {j}: {m}");
            }
        }
    }

    #[test]
    fn two_class_counts() {
        let mut rng = RngStream::new(3);
        let g = TwoClassGenerator::new(16, 2, 2.0, 0.3, &mut rng).unwrap();
        let b = g.sample(60, 10, &[0.5, 0.0], &mut rng).unwrap();
        assert_eq!(b.len(), 70);
        assert_eq!(b.count(1), 10);
        assert_eq!(b.x().cols(), 16);
    }
}
