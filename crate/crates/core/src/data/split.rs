//! Hierarchical splitting: reserve whole chains, then whole branches, then
//! hold out images inside the remaining branches.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::stream;

const TAG_SPLIT: u64 = 0x5917;

/// Disjoint id sets: train, seen-branch holdout, unseen-branch/seen-chain,
/// and unseen-chain evaluation tiers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ids: BTreeSet<usize>,
    pub dss_ids: BTreeSet<usize>,
    pub dsu_ids: BTreeSet<usize>,
    pub duu_ids: BTreeSet<usize>,
}

impl SplitSpec {
    /// Check the four hierarchy invariants against a dataset.
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        let sets = [
            ("train", &self.train_ids),
            ("dss", &self.dss_ids),
            ("dsu", &self.dsu_ids),
            ("duu", &self.duu_ids),
        ];
        for (name, ids) in &sets {
            for &id in ids.iter() {
                if id >= ds.len() {
                    return Err(Error::Argument(format!("{name} contains unknown id {id}")));
                }
            }
        }
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                if sets[i].1.intersection(sets[j].1).next().is_some() {
                    return Err(Error::Argument(format!(
                        "{} and {} overlap",
                        sets[i].0, sets[j].0
                    )));
                }
            }
        }
        let train_chains = ds.chains_of(&self.train_ids);
        let train_branches = ds.branches_of(&self.train_ids);
        if ds.chains_of(&self.duu_ids).intersection(&train_chains).next().is_some() {
            return Err(Error::Argument("duu shares a chain with train".into()));
        }
        if ds.branches_of(&self.dsu_ids).intersection(&train_branches).next().is_some() {
            return Err(Error::Argument("dsu shares a branch with train".into()));
        }
        if !ds.chains_of(&self.dsu_ids).is_subset(&train_chains) {
            return Err(Error::Argument("dsu uses a chain absent from train".into()));
        }
        if !ds.branches_of(&self.dss_ids).is_subset(&train_branches) {
            return Err(Error::Argument("dss uses a branch absent from train".into()));
        }
        Ok(())
    }
}

fn ceil_frac(frac: f64, n: usize) -> usize {
    (frac * n as f64).ceil() as usize
}

/// Three-stage split. Stage 1 reserves whole chains, stage 2 whole branches
/// from the surviving chains, stage 3 holds out images inside each surviving
/// branch. Deterministic in `seed`.
pub fn split_hierarchical(
    ds: &Dataset,
    frac_unseen_chains: f64,
    frac_unseen_branches: f64,
    frac_heldout_images: f64,
    seed: u64,
) -> Result<SplitSpec> {
    if !ds.fully_labeled() {
        return Err(Error::Argument("dataset must be fully labeled to split".into()));
    }
    for (name, f) in [
        ("frac_unseen_chains", frac_unseen_chains),
        ("frac_unseen_branches", frac_unseen_branches),
        ("frac_heldout_images", frac_heldout_images),
    ] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Argument(format!("{name} must lie in (0, 1), got {f}")));
        }
    }

    // branch -> (chain, sorted sample ids)
    let mut branch_ids: BTreeMap<usize, (usize, Vec<usize>)> = BTreeMap::new();
    for s in ds.samples() {
        let entry = branch_ids
            .entry(s.branch_label.unwrap())
            .or_insert_with(|| (s.chain_label.unwrap(), Vec::new()));
        entry.1.push(s.id);
    }

    // Stage 1: whole chains into duu.
    let mut chains: Vec<usize> = ds.chains().into_iter().collect();
    chains.shuffle(&mut stream(seed, TAG_SPLIT, 1, 0));
    let n_duu = ceil_frac(frac_unseen_chains, chains.len());
    let duu_chains: BTreeSet<usize> = chains.iter().take(n_duu).copied().collect();
    let mut duu_ids = BTreeSet::new();
    for (_, (chain, ids)) in &branch_ids {
        if duu_chains.contains(chain) {
            duu_ids.extend(ids.iter().copied());
        }
    }

    // Stage 2: whole branches of surviving chains into dsu. A chain must keep
    // at least one branch, otherwise dsu would reference a chain that never
    // reaches train.
    let mut remaining_branches: Vec<usize> = branch_ids
        .iter()
        .filter(|(_, (chain, _))| !duu_chains.contains(chain))
        .map(|(&b, _)| b)
        .collect();
    remaining_branches.shuffle(&mut stream(seed, TAG_SPLIT, 2, 0));
    let n_dsu = ceil_frac(frac_unseen_branches, remaining_branches.len());
    let mut branches_left: BTreeMap<usize, usize> = BTreeMap::new();
    for &b in &remaining_branches {
        *branches_left.entry(branch_ids[&b].0).or_insert(0) += 1;
    }
    let mut dsu_branches = BTreeSet::new();
    let mut dsu_ids = BTreeSet::new();
    for &b in &remaining_branches {
        if dsu_branches.len() == n_dsu {
            break;
        }
        let chain = branch_ids[&b].0;
        if branches_left[&chain] > 1 {
            dsu_branches.insert(b);
            dsu_ids.extend(branch_ids[&b].1.iter().copied());
            *branches_left.get_mut(&chain).unwrap() -= 1;
        }
    }

    // Stage 3: hold out images inside every remaining branch. Each branch
    // keeps at least one training image so dss branches stay seen.
    let mut train_ids = BTreeSet::new();
    let mut dss_ids = BTreeSet::new();
    for &b in &remaining_branches {
        if dsu_branches.contains(&b) {
            continue;
        }
        let mut ids = branch_ids[&b].1.clone();
        ids.shuffle(&mut stream(seed, TAG_SPLIT, 3, b as u64));
        let held = ceil_frac(frac_heldout_images, ids.len()).min(ids.len() - 1);
        dss_ids.extend(ids.iter().take(held).copied());
        train_ids.extend(ids.iter().skip(held).copied());
    }

    for (tier, ids) in [
        ("train", &train_ids),
        ("dss", &dss_ids),
        ("dsu", &dsu_ids),
        ("duu", &duu_ids),
    ] {
        if ids.is_empty() {
            return Err(Error::SplitEmpty { tier });
        }
    }

    let spec = SplitSpec { train_ids, dss_ids, dsu_ids, duu_ids };
    spec.validate(ds)?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;

    #[test]
    fn four_by_four_reserves_one_chain() {
        let ds = generate_synthetic(4, 4, 4, 8, 0.05, false, 1).unwrap();
        let spec = split_hierarchical(&ds, 0.25, 0.25, 0.25, 1).unwrap();
        assert_eq!(ds.chains_of(&spec.duu_ids).len(), 1);
        assert_eq!(spec.duu_ids.len(), 16);
        let duu_chains = ds.chains_of(&spec.duu_ids);
        for chain in ds.chains_of(&spec.dsu_ids) {
            assert!(!duu_chains.contains(&chain), "dsu drew a branch from the reserved chain");
        }
        spec.validate(&ds).unwrap();
    }

    #[test]
    fn single_chain_with_half_fraction_errors_on_train() {
        let ds = generate_synthetic(1, 2, 4, 8, 0.05, false, 2).unwrap();
        match split_hierarchical(&ds, 0.5, 0.25, 0.25, 0) {
            Err(Error::SplitEmpty { tier }) => assert_eq!(tier, "train"),
            other => panic!("expected empty-train split error, got {other:?}"),
        }
    }

    #[test]
    fn split_is_deterministic() {
        let ds = generate_synthetic(4, 3, 5, 8, 0.05, false, 9).unwrap();
        let a = split_hierarchical(&ds, 0.25, 0.3, 0.2, 11).unwrap();
        let b = split_hierarchical(&ds, 0.25, 0.3, 0.2, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fraction_bounds_enforced() {
        let ds = generate_synthetic(2, 2, 2, 8, 0.0, false, 0).unwrap();
        assert!(split_hierarchical(&ds, 0.0, 0.5, 0.5, 0).is_err());
        assert!(split_hierarchical(&ds, 0.5, 1.0, 0.5, 0).is_err());
    }

    #[test]
    fn unlabeled_dataset_rejected() {
        let img = crate::image::Image::zeros(4, 4, 1);
        let s = crate::data::Sample { id: 0, image: img, branch_label: None, chain_label: None };
        let ds = Dataset::new("plain", vec![s], None).unwrap();
        assert!(split_hierarchical(&ds, 0.5, 0.5, 0.5, 0).is_err());
    }
}
