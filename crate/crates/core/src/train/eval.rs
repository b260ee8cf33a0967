//! Evaluation of frozen representations: linear probe, retrieval recall,
//! and kNN classification. Neighbor searches always exclude the query id.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{forward, images_to_matrix, ModelParams};

/// Backbone embeddings for the given sample ids, row order following `ids`.
pub fn embed_ids(params: &ModelParams, ds: &Dataset, ids: &[usize]) -> Result<Array2<f64>> {
    if ids.is_empty() {
        return Err(Error::Argument("cannot embed an empty id list".into()));
    }
    let images: Vec<_> = ids.iter().map(|&id| ds.sample(id).image.clone()).collect();
    Ok(forward(params, &images_to_matrix(&images))?.embeddings)
}

fn branch_labels(ds: &Dataset, ids: &[usize]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|&id| {
            ds.sample(id)
                .branch_label
                .ok_or_else(|| Error::DegenerateLabels(format!("sample {id} has no branch label")))
        })
        .collect()
}

fn sq_dist_rows(a: &Array2<f64>, i: usize, b: &Array2<f64>, j: usize) -> f64 {
    a.row(i).iter().zip(b.row(j).iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Train a single linear layer with softmax cross-entropy on frozen backbone
/// embeddings by full-batch gradient descent; returns top-1 test accuracy in
/// percent. Fully deterministic: weights start at zero.
pub fn linear_probe(
    params: &ModelParams,
    ds: &Dataset,
    train_ids: &[usize],
    test_ids: &[usize],
    classifier_lr: f64,
    epochs: usize,
) -> Result<f64> {
    if train_ids.is_empty() || test_ids.is_empty() {
        return Err(Error::Argument("probe needs non-empty train and test id lists".into()));
    }
    let train_labels = branch_labels(ds, train_ids)?;
    let test_labels = branch_labels(ds, test_ids)?;
    let mut class_map: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in &train_labels {
        let next = class_map.len();
        class_map.entry(l).or_insert(next);
    }
    let n_classes = class_map.len();
    if n_classes < 2 {
        return Err(Error::DegenerateLabels("probe train set has a single class".into()));
    }

    let x_train = embed_ids(params, ds, train_ids)?;
    let x_test = embed_ids(params, ds, test_ids)?;
    let n = x_train.nrows();
    let d = x_train.ncols();
    let mut w = Array2::<f64>::zeros((d, n_classes));
    let mut b = Array2::<f64>::zeros((1, n_classes));

    let softmax_rows = |logits: &Array2<f64>| -> Array2<f64> {
        let mut p = logits.clone();
        for mut row in p.rows_mut() {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        p
    };

    for _ in 0..epochs {
        let logits = &x_train.dot(&w) + &b;
        let mut delta = softmax_rows(&logits);
        for (i, &label) in train_labels.iter().enumerate() {
            delta[[i, class_map[&label]]] -= 1.0;
        }
        delta /= n as f64;
        let grad_w = x_train.t().dot(&delta);
        let grad_b = delta.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
        w -= &grad_w.mapv(|v| v * classifier_lr);
        b -= &grad_b.mapv(|v| v * classifier_lr);
    }

    let logits = &x_test.dot(&w) + &b;
    let inverse: BTreeMap<usize, usize> = class_map.iter().map(|(&l, &c)| (c, l)).collect();
    let mut correct = 0usize;
    for (i, &label) in test_labels.iter().enumerate() {
        let row = logits.row(i);
        let mut best = 0usize;
        for c in 1..n_classes {
            if row[c] > row[best] {
                best = c;
            }
        }
        if inverse[&best] == label {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / test_ids.len() as f64)
}

/// Percentage of eval samples whose nearest other embedding shares their
/// branch label. Distance ties resolve to the lowest id.
pub fn recall_at_1(params: &ModelParams, ds: &Dataset, eval_ids: &[usize]) -> Result<f64> {
    if eval_ids.len() < 2 {
        return Err(Error::Argument("recall needs at least two samples".into()));
    }
    let labels = branch_labels(ds, eval_ids)?;
    let emb = embed_ids(params, ds, eval_ids)?;
    let mut hits = 0usize;
    for i in 0..eval_ids.len() {
        let mut best: Option<(f64, usize)> = None;
        for j in 0..eval_ids.len() {
            if eval_ids[j] == eval_ids[i] {
                continue;
            }
            let cand = (sq_dist_rows(&emb, i, &emb, j), eval_ids[j]);
            if best.map_or(true, |cur| cand < cur) {
                best = Some(cand);
            }
        }
        let (_, nn_id) = best.ok_or_else(|| Error::Argument("no candidate neighbors".into()))?;
        let nn_pos = eval_ids.iter().position(|&id| id == nn_id).unwrap();
        if labels[nn_pos] == labels[i] {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / eval_ids.len() as f64)
}

/// Majority vote over the k nearest train embeddings; distance ties resolve by
/// ascending id, vote ties by the smallest class label.
pub fn knn_accuracy(
    params: &ModelParams,
    ds: &Dataset,
    train_ids: &[usize],
    test_ids: &[usize],
    k: usize,
) -> Result<f64> {
    if train_ids.is_empty() || test_ids.is_empty() {
        return Err(Error::Argument("knn needs non-empty train and test id lists".into()));
    }
    if k < 1 || k > train_ids.len() {
        return Err(Error::Argument(format!("k must lie in 1..={}, got {k}", train_ids.len())));
    }
    let train_labels = branch_labels(ds, train_ids)?;
    let test_labels = branch_labels(ds, test_ids)?;
    let train_emb = embed_ids(params, ds, train_ids)?;
    let test_emb = embed_ids(params, ds, test_ids)?;
    let mut correct = 0usize;
    for (i, &query_id) in test_ids.iter().enumerate() {
        let mut cands: Vec<(f64, usize, usize)> = train_ids
            .iter()
            .enumerate()
            .filter(|&(_, &tid)| tid != query_id)
            .map(|(j, &tid)| (sq_dist_rows(&test_emb, i, &train_emb, j), tid, j))
            .collect();
        cands.sort_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).unwrap());
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for &(_, _, j) in cands.iter().take(k) {
            *votes.entry(train_labels[j]).or_insert(0) += 1;
        }
        // BTreeMap iterates labels ascending, so strict > keeps the smallest
        // class on vote ties.
        let mut winner = None;
        let mut best_votes = 0usize;
        for (&label, &count) in &votes {
            if count > best_votes {
                best_votes = count;
                winner = Some(label);
            }
        }
        if winner == Some(test_labels[i]) {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / test_ids.len() as f64)
}

/// Mean over features of the per-feature standard deviation of the
/// projections; the collapse diagnostic.
pub fn projection_feature_std(params: &ModelParams, ds: &Dataset, ids: &[usize]) -> Result<f64> {
    let images: Vec<_> = ids.iter().map(|&id| ds.sample(id).image.clone()).collect();
    let proj = forward(params, &images_to_matrix(&images))?.projections;
    let n = proj.nrows() as f64;
    let mut acc = 0.0;
    for col in proj.columns() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        acc += var.sqrt();
    }
    Ok(acc / proj.ncols() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Sample};
    use crate::image::Image;
    use crate::model::{init_params, Activation, Arch, EncoderConfig, InitSpec, Layer};

    /// Linear encoder whose weights are identity, so embeddings equal pixels.
    fn identity_encoder(dim: usize) -> ModelParams {
        let hw = (dim as f64).sqrt() as usize;
        assert_eq!(hw * hw, dim);
        let cfg = EncoderConfig {
            arch: Arch::Mlp,
            input_hw: hw,
            input_channels: 1,
            hidden_widths: vec![],
            embed_dim: dim,
            projector_widths: vec![],
            predictor_widths: None,
            activation: Activation::Relu,
        };
        let mut params = init_params(&cfg, 0, &InitSpec::Random).unwrap();
        if let Layer::Dense(d) = &mut params.backbone[0] {
            d.weight.fill(0.0);
            for i in 0..dim {
                d.weight[[i, i]] = 1.0;
            }
            d.bias.fill(0.0);
        }
        params
    }

    /// Four classes, image = one-hot pixel pattern per class plus small noise.
    fn clustered_dataset(per_class: usize, noise: f64, seed: u64) -> Dataset {
        let mut rng = crate::rng::stream(seed, 0, 0, 0);
        let mut samples = Vec::new();
        for class in 0..4usize {
            for _ in 0..per_class {
                let img = Image::from_fn(2, 2, 1, |y, x, _| {
                    let pixel = y * 2 + x;
                    let base = if pixel == class { 1.0 } else { 0.0 };
                    (base + noise * (rand::Rng::random::<f64>(&mut rng) - 0.5)).clamp(0.0, 1.0)
                });
                samples.push(Sample {
                    id: samples.len(),
                    image: img,
                    branch_label: Some(class),
                    chain_label: Some(class / 2),
                });
            }
        }
        Dataset::new("clusters", samples, None).unwrap()
    }

    #[test]
    fn probe_reaches_full_accuracy_on_separable_features() {
        let ds = clustered_dataset(6, 0.05, 1);
        let params = identity_encoder(4);
        let ids: Vec<usize> = (0..ds.len()).collect();
        let (train, test): (Vec<usize>, Vec<usize>) =
            ids.iter().partition(|&&id| id % 3 != 0);
        let acc = linear_probe(&params, &ds, &train, &test, 0.5, 300).unwrap();
        assert_eq!(acc, 100.0);
    }

    #[test]
    fn probe_on_shuffled_labels_sits_at_chance() {
        // relabel uniformly at random: accuracy should hover near 25%
        let base = clustered_dataset(40, 0.05, 2);
        let mut rng = crate::rng::stream(9, 1, 0, 0);
        let samples: Vec<Sample> = base
            .samples()
            .iter()
            .map(|s| Sample {
                id: s.id,
                image: s.image.clone(),
                branch_label: Some(rand::Rng::random_range(&mut rng, 0..4usize)),
                chain_label: None,
            })
            .collect();
        let ds = Dataset::new("shuffled", samples, None).unwrap();
        let params = identity_encoder(4);
        let ids: Vec<usize> = (0..ds.len()).collect();
        let (train, test): (Vec<usize>, Vec<usize>) = ids.iter().partition(|&&id| id % 2 == 0);
        let acc = linear_probe(&params, &ds, &train, &test, 0.2, 100).unwrap();
        assert!((acc - 25.0).abs() <= 15.0, "accuracy {acc} far from chance");
    }

    #[test]
    fn probe_is_deterministic() {
        let ds = clustered_dataset(5, 0.2, 3);
        let params = identity_encoder(4);
        let ids: Vec<usize> = (0..ds.len()).collect();
        let (train, test): (Vec<usize>, Vec<usize>) = ids.iter().partition(|&&id| id % 2 == 0);
        let a = linear_probe(&params, &ds, &train, &test, 0.3, 50).unwrap();
        let b = linear_probe(&params, &ds, &train, &test, 0.3, 50).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn probe_rejects_single_class_train() {
        let ds = clustered_dataset(4, 0.1, 4);
        let params = identity_encoder(4);
        let train: Vec<usize> = (0..4).collect(); // all class 0
        let test: Vec<usize> = (4..8).collect();
        assert!(matches!(
            linear_probe(&params, &ds, &train, &test, 0.1, 10),
            Err(Error::DegenerateLabels(_))
        ));
    }

    #[test]
    fn recall_two_samples() {
        let ds = clustered_dataset(2, 0.01, 5);
        let params = identity_encoder(4);
        // two samples of the same class
        assert_eq!(recall_at_1(&params, &ds, &[0, 1]).unwrap(), 100.0);
        // two samples of different classes
        assert_eq!(recall_at_1(&params, &ds, &[0, 2]).unwrap(), 0.0);
    }

    #[test]
    fn recall_on_tight_clusters_is_perfect_and_matches_brute_force() {
        let params = identity_encoder(4);
        for seed in 0..50 {
            let ds = clustered_dataset(5, 0.1, 100 + seed);
            let ids: Vec<usize> = (0..ds.len()).collect();
            let got = recall_at_1(&params, &ds, &ids).unwrap();
            assert_eq!(got, 100.0, "seed {seed}");

            // brute-force reimplementation on the raw pixels
            let mut hits = 0;
            for i in &ids {
                let pi = ds.sample(*i).image.pixels();
                let mut best = (f64::INFINITY, usize::MAX);
                for j in &ids {
                    if i == j {
                        continue;
                    }
                    let pj = ds.sample(*j).image.pixels();
                    let d: f64 = pi.iter().zip(pj).map(|(a, b)| (a - b) * (a - b)).sum();
                    if (d, *j) < best {
                        best = (d, *j);
                    }
                }
                if ds.sample(best.1).branch_label == ds.sample(*i).branch_label {
                    hits += 1;
                }
            }
            assert_eq!(got, 100.0 * hits as f64 / ids.len() as f64);
        }
    }

    #[test]
    fn knn_k1_on_shared_ids_matches_recall() {
        let ds = clustered_dataset(5, 0.3, 6);
        let params = identity_encoder(4);
        let ids: Vec<usize> = (0..ds.len()).collect();
        let knn = knn_accuracy(&params, &ds, &ids, &ids, 1).unwrap();
        let recall = recall_at_1(&params, &ds, &ids).unwrap();
        assert_eq!(knn, recall);
    }

    #[test]
    fn knn_full_vote_ties_resolve_to_smallest_class() {
        let ds = clustered_dataset(4, 0.05, 7);
        let params = identity_encoder(4);
        let train: Vec<usize> = (0..ds.len()).filter(|id| id % 4 != 3).collect();
        let test: Vec<usize> = (0..ds.len()).filter(|id| id % 4 == 3).collect();
        // k spans the whole balanced train set, so every query is a four-way
        // vote tie resolved to class 0; exactly the class-0 queries score
        let acc = knn_accuracy(&params, &ds, &train, &test, train.len()).unwrap();
        assert_eq!(acc, 25.0);
    }

    #[test]
    fn knn_is_deterministic_and_bounds_checked() {
        let ds = clustered_dataset(4, 0.2, 8);
        let params = identity_encoder(4);
        let ids: Vec<usize> = (0..ds.len()).collect();
        let a = knn_accuracy(&params, &ds, &ids, &ids, 3).unwrap();
        let b = knn_accuracy(&params, &ds, &ids, &ids, 3).unwrap();
        assert_eq!(a, b);
        assert!(knn_accuracy(&params, &ds, &ids, &ids, 0).is_err());
        assert!(knn_accuracy(&params, &ds, &ids, &ids, ids.len() + 1).is_err());
    }

    #[test]
    fn unlabeled_ids_are_degenerate() {
        let ds = generate_synthetic(1, 1, 4, 8, 0.1, false, 0).unwrap();
        let samples: Vec<Sample> = ds
            .samples()
            .iter()
            .map(|s| Sample { id: s.id, image: s.image.clone(), branch_label: None, chain_label: None })
            .collect();
        let unlabeled = Dataset::new("u", samples, None).unwrap();
        let cfg = EncoderConfig {
            arch: Arch::Mlp,
            input_hw: 8,
            input_channels: 3,
            hidden_widths: vec![],
            embed_dim: 4,
            projector_widths: vec![],
            predictor_widths: None,
            activation: Activation::Relu,
        };
        let params = init_params(&cfg, 0, &InitSpec::Random).unwrap();
        assert!(matches!(
            recall_at_1(&params, &unlabeled, &[0, 1]),
            Err(Error::DegenerateLabels(_))
        ));
    }
}
