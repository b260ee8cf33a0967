//! The frozen embedding bank: prior embeddings of a dataset plus exact
//! neighbor lists, computed once so per-step sampling stays O(1).

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::sampler::{GpsConfig, GpsMode, PriorEncoder, TieBreak};

#[derive(Debug, Clone)]
pub struct EmbeddingBank {
    matrix: Array2<f64>,
    /// Row i: sample i first, then every other id sorted by ascending squared
    /// distance (ties by ascending id), truncated to k_max entries.
    neighbor_lists: Vec<Vec<usize>>,
    k_max: usize,
}

/// Embed a dataset with a frozen prior and precompute exact neighbor lists by
/// brute-force squared-Euclidean search.
pub fn build_bank(prior: &PriorEncoder, dataset: &Dataset, k_max: usize) -> Result<EmbeddingBank> {
    let matrix = prior.embed_dataset(dataset)?;
    EmbeddingBank::from_matrix(matrix, k_max)
}

impl EmbeddingBank {
    /// Build from raw embeddings; row i must belong to sample id i.
    pub fn from_matrix(matrix: Array2<f64>, k_max: usize) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 {
            return Err(Error::Argument("bank needs at least one embedding".into()));
        }
        if k_max >= n {
            return Err(Error::Argument(format!("K_max {k_max} must be < N {n}")));
        }
        for (i, row) in matrix.rows().into_iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::Encoder { sample: i, reason: format!("non-finite embedding value {v}") });
            }
        }
        let neighbor_lists: Vec<Vec<usize>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut others: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (sq_dist(&matrix, i, j), j))
                    .collect();
                others.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut list = Vec::with_capacity(k_max + 1);
                list.push(i);
                list.extend(others.iter().take(k_max).map(|&(_, j)| j));
                list
            })
            .collect();
        Ok(Self { matrix, neighbor_lists, k_max })
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn neighbor_list(&self, id: usize) -> &[usize] {
        &self.neighbor_lists[id]
    }

    pub fn sq_dist(&self, a: usize, b: usize) -> f64 {
        sq_dist(&self.matrix, a, b)
    }

    /// All ids strictly within squared distance `tau` of the query, ascending.
    /// Always contains the query itself.
    pub fn ball(&self, query_id: usize, tau: f64) -> Vec<usize> {
        assert!(query_id < self.len(), "query id out of range");
        assert!(tau > 0.0, "tau must be positive");
        (0..self.len()).filter(|&j| sq_dist(&self.matrix, query_id, j) < tau).collect()
    }

    /// Furthest member of the tau-ball; ties resolved by the configured rule.
    pub fn gps_positive(&self, query_id: usize, cfg: &GpsConfig) -> usize {
        debug_assert!(matches!(cfg.mode, GpsMode::TauBall));
        let members = self.ball(query_id, cfg.tau);
        let max_d = members
            .iter()
            .map(|&j| sq_dist(&self.matrix, query_id, j))
            .fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<usize> = members
            .into_iter()
            .filter(|&j| sq_dist(&self.matrix, query_id, j) == max_d)
            .collect();
        match cfg.tie_break {
            TieBreak::PreferNonself => ties
                .iter()
                .copied()
                .find(|&j| j != query_id)
                .unwrap_or(query_id),
            TieBreak::LowestId => ties[0],
        }
    }

    /// Uniform draw among the k nearest neighbors; rank 0 (the query itself)
    /// participates only when `include_self_in_knn` is set.
    pub fn knn_positive(&self, query_id: usize, cfg: &GpsConfig, rng: &mut impl Rng) -> usize {
        debug_assert!(matches!(cfg.mode, GpsMode::KnnRandom));
        assert!(cfg.k >= 1 && cfg.k <= self.k_max, "k out of range");
        let list = &self.neighbor_lists[query_id];
        let offset = usize::from(!cfg.include_self_in_knn);
        list[offset + rng.random_range(0..cfg.k)]
    }
}

fn sq_dist(m: &Array2<f64>, a: usize, b: usize) -> f64 {
    let ra = m.row(a);
    let rb = m.row(b);
    ra.iter().zip(rb.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}
