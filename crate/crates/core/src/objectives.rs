//! The five SSL objectives. Each has a graph builder (used inside training)
//! and a plain wrapper that validates inputs and evaluates on constant
//! matrices. Every report carries the distance/diversity decomposition:
//! total = distance_term - diversity_term.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::graph::{Graph, VarId};
use crate::sampler::SupportQueue;

pub const DEFAULT_TEMPERATURE: f64 = 0.5;
pub const DEFAULT_BARLOW_LAMBDA: f64 = 5e-3;
pub const DEFAULT_VICREG_GAMMA: f64 = 1.0;
pub const DEFAULT_BYOL_MOMENTUM: f64 = 0.99;

/// VICReg term weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VicregCoeffs {
    pub sim: f64,
    pub var: f64,
    pub cov: f64,
}

impl Default for VicregCoeffs {
    fn default() -> Self {
        Self { sim: 25.0, var: 25.0, cov: 1.0 }
    }
}

/// Scalar loss value with its decomposition and named components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub distance_term: f64,
    pub diversity_term: f64,
    pub per_component: BTreeMap<String, f64>,
}

/// Graph node ids for a composed loss.
pub struct LossNodes {
    pub total: VarId,
    pub distance: VarId,
    pub diversity: VarId,
    pub components: Vec<(String, VarId)>,
}

/// Read a report out of an evaluated graph.
pub fn extract_report(g: &Graph, nodes: &LossNodes) -> Result<LossReport> {
    let total = g.scalar(nodes.total);
    if !total.is_finite() {
        return Err(Error::Numeric(format!("loss is non-finite: {total}")));
    }
    Ok(LossReport {
        total,
        distance_term: g.scalar(nodes.distance),
        diversity_term: g.scalar(nodes.diversity),
        per_component: nodes
            .components
            .iter()
            .map(|(name, id)| (name.clone(), g.scalar(*id)))
            .collect(),
    })
}

const NEG_MASK: f64 = -1e9;

/// NT-Xent over the 2B x 2B cosine similarity matrix; matching views are the
/// positives and self-similarities are masked out of the partition.
pub fn infonce_graph(g: &mut Graph, z1: VarId, z2: VarId, temperature: f64) -> LossNodes {
    let b = g.value(z1).nrows();
    let n = 2 * b;
    let z = g.concat_rows(z1, z2);
    let zn = g.row_l2_normalize(z);
    let znt = g.transpose(zn);
    let sims = g.matmul(zn, znt);
    let scaled = g.scale(sims, 1.0 / temperature);
    let self_mask = g.constant(Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            NEG_MASK
        } else {
            0.0
        }
    }));
    let masked = g.add(scaled, self_mask);
    let lse = g.logsumexp_rows(masked);
    let pos_mask = Array2::from_shape_fn((n, n), |(i, j)| {
        if j == (i + b) % n {
            1.0
        } else {
            0.0
        }
    });
    let pos_only = g.mul_const(masked, pos_mask);
    let pos = g.sum_rows(pos_only);
    let per_row = g.sub(lse, pos);
    let total = g.mean_all(per_row);
    let pos_mean = g.mean_all(pos);
    let lse_mean = g.mean_all(lse);
    let distance = g.scale(pos_mean, -1.0);
    let diversity = g.scale(lse_mean, -1.0);
    LossNodes {
        total,
        distance,
        diversity,
        components: vec![
            ("positive_mean".into(), pos_mean),
            ("log_partition_mean".into(), lse_mean),
        ],
    }
}

fn validate_pair(z1: &Array2<f64>, z2: &Array2<f64>, min_batch: usize) -> Result<()> {
    if z1.dim() != z2.dim() {
        return Err(Error::Argument(format!("view shapes differ: {:?} vs {:?}", z1.dim(), z2.dim())));
    }
    if z1.nrows() < min_batch {
        return Err(Error::Argument(format!("batch must be >= {min_batch}, got {}", z1.nrows())));
    }
    Ok(())
}

fn check_no_zero_rows(m: &Array2<f64>, what: &str) -> Result<()> {
    for (i, row) in m.rows().into_iter().enumerate() {
        if row.iter().all(|&v| v == 0.0) {
            return Err(Error::Numeric(format!("{what} row {i} has zero norm")));
        }
    }
    Ok(())
}

pub fn infonce(z1: &Array2<f64>, z2: &Array2<f64>, temperature: f64) -> Result<LossReport> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Argument(format!("temperature must be positive, got {temperature}")));
    }
    validate_pair(z1, z2, 2)?;
    check_no_zero_rows(z1, "z1")?;
    check_no_zero_rows(z2, "z2")?;
    let mut g = Graph::new();
    let a = g.constant(z1.clone());
    let b = g.constant(z2.clone());
    let nodes = infonce_graph(&mut g, a, b, temperature);
    extract_report(&g, &nodes)
}

/// Mean over the batch of 2 - 2*cos(p_i, z_i). The teacher side enters as a
/// constant, so gradients flow only through the student inputs.
pub fn byol_graph(g: &mut Graph, predictions: VarId, teacher: VarId) -> LossNodes {
    let pn = g.row_l2_normalize(predictions);
    let zn = g.row_l2_normalize(teacher);
    let prod = g.mul(pn, zn);
    let cos = g.sum_rows(prod);
    let cos_mean = g.mean_all(cos);
    let neg = g.scale(cos_mean, -2.0);
    let total = g.add_scalar(neg, 2.0);
    // the anti-collapse mechanism here is teacher asymmetry, which contributes
    // no separable term; diversity is reported as zero
    let diversity = g.constant(Array2::zeros((1, 1)));
    LossNodes {
        total,
        distance: total,
        diversity,
        components: vec![("cosine_mean".into(), cos_mean)],
    }
}

pub fn byol(predictions_student: &Array2<f64>, projections_teacher: &Array2<f64>) -> Result<LossReport> {
    validate_pair(predictions_student, projections_teacher, 1)?;
    check_no_zero_rows(predictions_student, "predictions")?;
    check_no_zero_rows(projections_teacher, "teacher projections")?;
    let mut g = Graph::new();
    let p = g.constant(predictions_student.clone());
    let t = g.constant(projections_teacher.clone());
    let nodes = byol_graph(&mut g, p, t);
    extract_report(&g, &nodes)
}

/// Feature standardization over the batch: (x - mean) / std, population std.
fn standardize(g: &mut Graph, z: VarId) -> VarId {
    let b = g.value(z).nrows() as f64;
    let sums = g.sum_cols(z);
    let mean = g.scale(sums, 1.0 / b);
    let cen = g.sub_rowvec(z, mean);
    let sq = g.square(cen);
    let var_sums = g.sum_cols(sq);
    let var = g.scale(var_sums, 1.0 / b);
    let std = g.sqrt(var);
    g.div_rowvec(cen, std)
}

fn center(g: &mut Graph, z: VarId) -> VarId {
    let b = g.value(z).nrows() as f64;
    let sums = g.sum_cols(z);
    let mean = g.scale(sums, 1.0 / b);
    g.sub_rowvec(z, mean)
}

/// Cross-correlation identity loss: sum_i (1 - C_ii)^2 + lambda * sum_{i!=j} C_ij^2
/// on the standardized cross-correlation matrix C = z1^T z2 / B.
pub fn barlow_graph(g: &mut Graph, z1: VarId, z2: VarId, lambda_offdiag: f64) -> LossNodes {
    let b = g.value(z1).nrows() as f64;
    let d = g.value(z1).ncols();
    let s1 = standardize(g, z1);
    let s2 = standardize(g, z2);
    let s1t = g.transpose(s1);
    let cross = g.matmul(s1t, s2);
    let c = g.scale(cross, 1.0 / b);
    let eye = Array2::from_shape_fn((d, d), |(i, j)| if i == j { 1.0 } else { 0.0 });
    let anti_eye = eye.mapv(|v| 1.0 - v);
    let c_diag = g.mul_const(c, eye.clone());
    let eye_node = g.constant(eye);
    let diag_err = g.sub(eye_node, c_diag);
    let diag_sq = g.square(diag_err);
    let on_diag = g.sum_all(diag_sq);
    let c_off = g.mul_const(c, anti_eye);
    let off_sq = g.square(c_off);
    let redundancy = g.sum_all(off_sq);
    let weighted_off = g.scale(redundancy, lambda_offdiag);
    let total = g.add(on_diag, weighted_off);
    let diversity = g.scale(redundancy, -lambda_offdiag);
    LossNodes {
        total,
        distance: on_diag,
        diversity,
        components: vec![
            ("on_diagonal".into(), on_diag),
            ("redundancy".into(), redundancy),
        ],
    }
}

pub fn barlow(z1: &Array2<f64>, z2: &Array2<f64>, lambda_offdiag: f64) -> Result<LossReport> {
    validate_pair(z1, z2, 2)?;
    for (name, z) in [("z1", z1), ("z2", z2)] {
        let b = z.nrows() as f64;
        for j in 0..z.ncols() {
            let mean = z.column(j).sum() / b;
            let var = z.column(j).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / b;
            if var == 0.0 {
                return Err(Error::Numeric(format!("{name} feature {j} has zero variance")));
            }
        }
    }
    let mut g = Graph::new();
    let a = g.constant(z1.clone());
    let b = g.constant(z2.clone());
    let nodes = barlow_graph(&mut g, a, b, lambda_offdiag);
    extract_report(&g, &nodes)
}

/// Invariance (mean squared error between views), variance hinge
/// mean_j max(0, gamma - std_j), and off-diagonal covariance penalty, each
/// averaged over the two views and combined with the given weights.
pub fn vicreg_graph(
    g: &mut Graph,
    z1: VarId,
    z2: VarId,
    coeffs: VicregCoeffs,
    gamma: f64,
) -> LossNodes {
    let b = g.value(z1).nrows() as f64;
    let d = g.value(z1).ncols();
    let diff = g.sub(z1, z2);
    let diff_sq = g.square(diff);
    let invariance = g.mean_all(diff_sq);

    let view_terms = |g: &mut Graph, z: VarId| -> (VarId, VarId) {
        let cen = center(g, z);
        let sq = g.square(cen);
        let var_sums = g.sum_cols(sq);
        let var = g.scale(var_sums, 1.0 / b);
        let std = g.sqrt(var);
        let neg_std = g.scale(std, -1.0);
        let gap = g.add_scalar(neg_std, gamma);
        let hinge = g.relu(gap);
        let var_term = g.mean_all(hinge);
        let cent = g.transpose(cen);
        let cov_raw = g.matmul(cent, cen);
        let cov = g.scale(cov_raw, 1.0 / b);
        let anti_eye = Array2::from_shape_fn((d, d), |(i, j)| if i == j { 0.0 } else { 1.0 });
        let off = g.mul_const(cov, anti_eye);
        let off_sq = g.square(off);
        let off_sum = g.sum_all(off_sq);
        let cov_term = g.scale(off_sum, 1.0 / d as f64);
        (var_term, cov_term)
    };
    let (v1, c1) = view_terms(g, z1);
    let (v2, c2) = view_terms(g, z2);
    let var_sum = g.add(v1, v2);
    let variance = g.scale(var_sum, 0.5);
    let cov_sum = g.add(c1, c2);
    let covariance = g.scale(cov_sum, 0.5);

    let t_sim = g.scale(invariance, coeffs.sim);
    let t_var = g.scale(variance, coeffs.var);
    let t_cov = g.scale(covariance, coeffs.cov);
    let partial = g.add(t_sim, t_var);
    let total = g.add(partial, t_cov);
    let anti = g.add(t_var, t_cov);
    let diversity = g.scale(anti, -1.0);
    LossNodes {
        total,
        distance: t_sim,
        diversity,
        components: vec![
            ("invariance".into(), invariance),
            ("variance".into(), variance),
            ("covariance".into(), covariance),
        ],
    }
}

pub fn vicreg(
    z1: &Array2<f64>,
    z2: &Array2<f64>,
    coeffs: VicregCoeffs,
    gamma: f64,
) -> Result<LossReport> {
    validate_pair(z1, z2, 2)?;
    let mut g = Graph::new();
    let a = g.constant(z1.clone());
    let b = g.constant(z2.clone());
    let nodes = vicreg_graph(&mut g, a, b, coeffs, gamma);
    extract_report(&g, &nodes)
}

/// Replace every z1 row by its queue nearest neighbor (no gradient through the
/// substitution) and apply NT-Xent against z2. Pushing onto the queue is the
/// trainer's job, not this op's.
pub fn nnclr_infonce(
    z1: &Array2<f64>,
    queue: &SupportQueue,
    z2: &Array2<f64>,
    temperature: f64,
) -> Result<LossReport> {
    if queue.is_empty() {
        return Err(Error::State("nnclr loss requires a non-empty support queue".into()));
    }
    let substituted = queue_substitute(z1, queue)?;
    infonce(&substituted, z2, temperature)
}

/// The nearest-neighbor substitution used by the nnclr loss.
pub fn queue_substitute(z1: &Array2<f64>, queue: &SupportQueue) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(z1.dim());
    for (i, row) in z1.rows().into_iter().enumerate() {
        let query: Vec<f64> = row.to_vec();
        let nn = queue.nn(&query)?;
        if nn.len() != z1.ncols() {
            return Err(Error::State(format!(
                "queue entries have dim {}, views have dim {}",
                nn.len(),
                z1.ncols()
            )));
        }
        for (j, &v) in nn.iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}
