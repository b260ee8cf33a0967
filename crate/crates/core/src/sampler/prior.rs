//! Frozen prior encoders: the designed embedding space in which nearest
//! neighbors proxy semantic similarity.

use std::path::PathBuf;

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{load_bank, Dataset};
use crate::error::{Error, Result};
use crate::model::{forward, images_to_matrix, init_params, Activation, Arch, EncoderConfig, InitSpec};
use crate::rng::stream;

const ORACLE_JITTER: f64 = 0.005;
const TAG_ORACLE: u64 = 0x04AC;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorEncoder {
    /// Flattened raw pixels.
    IdentityPixels,
    /// Principal components of the dataset's flattened pixels.
    Pca { dim: usize },
    /// A frozen randomly-initialized MLP.
    RandomNet { seed: u64, widths: Vec<usize>, embed_dim: usize },
    /// One-hot branch label plus a small seeded jitter (inf-norm < 0.01).
    LabelOracle { seed: u64 },
    /// Embeddings loaded from a bank file; row i belongs to sample id i.
    File { path: PathBuf },
}

impl PriorEncoder {
    /// Embed every sample; row i corresponds to sample id i. The result is
    /// frozen: the same (prior, dataset) always yields the same matrix.
    pub fn embed_dataset(&self, ds: &Dataset) -> Result<Array2<f64>> {
        if ds.is_empty() {
            return Err(Error::Argument("cannot embed an empty dataset".into()));
        }
        let matrix = match self {
            PriorEncoder::IdentityPixels => {
                let images: Vec<_> = ds.samples().iter().map(|s| s.image.clone()).collect();
                images_to_matrix(&images)
            }
            PriorEncoder::Pca { dim } => pca_embed(ds, *dim)?,
            PriorEncoder::RandomNet { seed, widths, embed_dim } => {
                let config = EncoderConfig {
                    arch: Arch::Mlp,
                    input_hw: ds.height(),
                    input_channels: ds.channels(),
                    hidden_widths: widths.clone(),
                    embed_dim: *embed_dim,
                    projector_widths: vec![],
                    predictor_widths: None,
                    activation: Activation::Relu,
                };
                if ds.height() != ds.width() {
                    return Err(Error::Argument("random_net prior needs square images".into()));
                }
                let params = init_params(&config, *seed, &InitSpec::Random)?;
                let images: Vec<_> = ds.samples().iter().map(|s| s.image.clone()).collect();
                forward(&params, &images_to_matrix(&images))?.embeddings
            }
            PriorEncoder::LabelOracle { seed } => {
                let dim = match ds.branches().iter().max() {
                    Some(&max_branch) => max_branch + 1,
                    None => {
                        return Err(Error::Encoder {
                            sample: 0,
                            reason: "label_oracle prior needs branch labels".into(),
                        })
                    }
                };
                let mut m = Array2::zeros((ds.len(), dim));
                for s in ds.samples() {
                    let branch = s.branch_label.ok_or_else(|| Error::Encoder {
                        sample: s.id,
                        reason: "label_oracle prior needs branch labels".into(),
                    })?;
                    let mut rng = stream(*seed, TAG_ORACLE, s.id as u64, 0);
                    for j in 0..dim {
                        let jitter = rng.random_range(-ORACLE_JITTER..ORACLE_JITTER);
                        m[[s.id, j]] = if j == branch { 1.0 + jitter } else { jitter };
                    }
                }
                m
            }
            PriorEncoder::File { path } => {
                let m = load_bank(path)?;
                if m.nrows() != ds.len() {
                    return Err(Error::Format(format!(
                        "bank file holds {} rows but the dataset has {} samples",
                        m.nrows(),
                        ds.len()
                    )));
                }
                m
            }
        };
        for (i, row) in matrix.rows().into_iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::Encoder { sample: i, reason: format!("non-finite embedding value {v}") });
            }
        }
        Ok(matrix)
    }
}

/// PCA on the flattened, mean-centered pixels; signs fixed so the largest
/// component coefficient is positive, making the embedding deterministic.
fn pca_embed(ds: &Dataset, dim: usize) -> Result<Array2<f64>> {
    let n = ds.len();
    let p = ds.height() * ds.width() * ds.channels();
    if dim == 0 || dim > n.min(p) {
        return Err(Error::Argument(format!("pca dim must lie in 1..={}, got {dim}", n.min(p))));
    }
    let mut centered = DMatrix::<f64>::zeros(n, p);
    let mut mean = vec![0.0; p];
    for s in ds.samples() {
        for (j, &v) in s.image.pixels().iter().enumerate() {
            mean[j] += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    for s in ds.samples() {
        for (j, &v) in s.image.pixels().iter().enumerate() {
            centered[(s.id, j)] = v - mean[j];
        }
    }
    let svd = centered.clone().svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::Numeric("svd failed to produce V^T".into()))?;
    let mut out = Array2::zeros((n, dim));
    for comp in 0..dim {
        let row = vt.row(comp);
        let mut sign = 1.0;
        let mut best = 0.0;
        for v in row.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = if *v < 0.0 { -1.0 } else { 1.0 };
            }
        }
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..p {
                acc += centered[(i, j)] * row[j];
            }
            out[[i, comp]] = acc * sign;
        }
    }
    Ok(out)
}
