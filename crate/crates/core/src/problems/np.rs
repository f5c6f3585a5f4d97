//! Neyman-Pearson classification: minimize class-0 logistic loss subject to
//! a bound on class-1 logistic loss, with each client holding a shard.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::logistic::{logistic_grad_into, logistic_loss_raw};
use super::{ClientProblem, FederatedProblem, LabeledDataset, Oracle};
use crate::error::{Error, Result};
use crate::numerics::{Domain, ModelVector};
use crate::streams::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// Shuffle each class, deal rows round-robin: equal shards, same class ratio.
    #[default]
    Iid,
    /// Every client holds the full dataset (zero heterogeneity).
    Replicated,
    /// Each class sorted by its first feature, then cut into contiguous shards.
    Sorted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpOptions {
    pub clients: usize,
    pub partition: Partition,
    pub partition_seed: u64,
    /// Rows drawn (with replacement) per local-step subgradient; `None` uses
    /// the full local shard.
    pub batch_size: Option<usize>,
}

impl NpOptions {
    pub fn iid(clients: usize, partition_seed: u64) -> Self {
        NpOptions {
            clients,
            partition: Partition::Iid,
            partition_seed,
            batch_size: None,
        }
    }
}

/// Rows stored flat, `dim` values per row.
#[derive(Debug, Clone)]
struct Shard {
    data: Vec<f64>,
    dim: usize,
}

impl Shard {
    fn from_rows(rows: &[&[f64]], dim: usize) -> Self {
        Shard {
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
            dim,
        }
    }

    fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn mean_loss(&self, w: &[f64], label: u8) -> f64 {
        let total: f64 = (0..self.len()).map(|i| logistic_loss_raw(w, self.row(i), label)).sum();
        total / self.len() as f64
    }

    fn mean_grad<I: Iterator<Item = usize>>(&self, w: &[f64], label: u8, rows: I, count: usize) -> Result<ModelVector> {
        let mut g = vec![0.0; self.dim];
        let scale = 1.0 / count as f64;
        for i in rows {
            logistic_grad_into(w, self.row(i), label, scale, &mut g);
        }
        ModelVector::new(g)
    }
}

#[derive(Debug, Clone)]
pub struct NpClient {
    id: usize,
    negatives: Shard,
    positives: Shard,
    lipschitz: f64,
    batch_size: Option<usize>,
}

impl NpClient {
    pub fn class_sizes(&self) -> (usize, usize) {
        (self.negatives.len(), self.positives.len())
    }

    fn batch_grad(&self, shard: &Shard, w: &[f64], label: u8, rng: &mut dyn RngCore) -> Result<ModelVector> {
        match self.batch_size {
            None => shard.mean_grad(w, label, 0..shard.len(), shard.len()),
            Some(b) => {
                let picks: Vec<usize> = (0..b).map(|_| rng.gen_range(0..shard.len())).collect();
                shard.mean_grad(w, label, picks.into_iter(), b)
            }
        }
    }
}

impl ClientProblem for NpClient {
    fn client_id(&self) -> usize {
        self.id
    }

    fn dim(&self) -> usize {
        self.negatives.dim
    }

    fn objective_value(&self, w: &ModelVector) -> f64 {
        self.negatives.mean_loss(w.as_slice(), 0)
    }

    fn objective_subgrad(&self, w: &ModelVector) -> Result<ModelVector> {
        let s = &self.negatives;
        s.mean_grad(w.as_slice(), 0, 0..s.len(), s.len())
    }

    fn constraint_value(&self, w: &ModelVector) -> f64 {
        self.positives.mean_loss(w.as_slice(), 1)
    }

    fn constraint_subgrad(&self, w: &ModelVector) -> Result<ModelVector> {
        let s = &self.positives;
        s.mean_grad(w.as_slice(), 1, 0..s.len(), s.len())
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn local_subgrad(&self, w: &ModelVector, which: Oracle, rng: &mut dyn RngCore) -> Result<ModelVector> {
        match which {
            Oracle::Objective => self.batch_grad(&self.negatives, w.as_slice(), 0, rng),
            Oracle::Constraint => self.batch_grad(&self.positives, w.as_slice(), 1, rng),
        }
    }
}

fn shard_class(indices: &[usize], data: &LabeledDataset, opts: &NpOptions, label: u8) -> Result<Vec<Vec<usize>>> {
    let n = opts.clients;
    if opts.partition != Partition::Replicated && indices.len() < n {
        return Err(Error::Partition(format!(
            "class {label} has {} rows, fewer than {n} clients",
            indices.len()
        )));
    }
    let mut order = indices.to_vec();
    Ok(match opts.partition {
        Partition::Replicated => vec![order; n],
        Partition::Iid => {
            let mut rng = stream(opts.partition_seed, Purpose::Partition, u64::from(label), 0);
            order.shuffle(&mut rng);
            let mut shards = vec![Vec::new(); n];
            for (i, idx) in order.into_iter().enumerate() {
                shards[i % n].push(idx);
            }
            shards
        }
        Partition::Sorted => {
            order.sort_by(|&a, &b| data.rows()[a][0].total_cmp(&data.rows()[b][0]).then(a.cmp(&b)));
            let (base, extra) = (order.len() / n, order.len() % n);
            let mut shards = Vec::with_capacity(n);
            let mut start = 0;
            for j in 0..n {
                let len = base + usize::from(j < extra);
                shards.push(order[start..start + len].to_vec());
                start += len;
            }
            shards
        }
    })
}

/// Split a labeled dataset across clients: `f_j` is the mean class-0
/// logistic loss on client j's shard, `g_j` the mean class-1 loss. The
/// Lipschitz bound is the largest feature-row norm, since
/// `||grad phi|| <= ||x||` for logistic loss.
pub fn build_np_classification(data: &LabeledDataset, opts: &NpOptions, domain: Domain) -> Result<FederatedProblem> {
    if opts.clients == 0 {
        return Err(Error::Partition("need at least one client".into()));
    }
    if opts.batch_size == Some(0) {
        return Err(Error::InvalidProblem("batch_size must be positive".into()));
    }
    let neg = data.class_indices(0);
    let pos = data.class_indices(1);
    if neg.is_empty() || pos.is_empty() {
        return Err(Error::Partition("dataset needs rows of both classes".into()));
    }
    let dim = data.num_features();
    let neg_shards = shard_class(&neg, data, opts, 0)?;
    let pos_shards = shard_class(&pos, data, opts, 1)?;
    let lipschitz = data.max_row_norm();

    let clients: Vec<Box<dyn ClientProblem>> = neg_shards
        .into_iter()
        .zip(pos_shards)
        .enumerate()
        .map(|(id, (n_idx, p_idx))| {
            let gather = |idx: &[usize]| -> Vec<&[f64]> { idx.iter().map(|&i| data.rows()[i].as_slice()).collect() };
            Box::new(NpClient {
                id,
                negatives: Shard::from_rows(&gather(&n_idx), dim),
                positives: Shard::from_rows(&gather(&p_idx), dim),
                lipschitz,
                batch_size: opts.batch_size,
            }) as Box<dyn ClientProblem>
        })
        .collect();
    FederatedProblem::new("np_classification", clients, domain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{synthetic_np_dataset, SyntheticSpec};
    use rand::SeedableRng;

    fn balanced(rows: usize) -> LabeledDataset {
        synthetic_np_dataset(&SyntheticSpec {
            rows,
            d_feat: 4,
            class_balance: 0.5,
            separation: 3.0,
            seed: 9,
        })
        .unwrap()
    }

    #[test]
    fn single_client_sees_full_class_means() {
        let data = balanced(60);
        let p = build_np_classification(&data, &NpOptions::iid(1, 0), Domain::Unbounded).unwrap();
        let w = ModelVector::new(vec![0.3, -0.1, 0.2, 0.5]).unwrap();
        let neg = data.class_indices(0);
        let want: f64 = neg
            .iter()
            .map(|&i| logistic_loss_raw(w.as_slice(), &data.rows()[i], 0))
            .sum::<f64>()
            / neg.len() as f64;
        let (f, _) = p.global_eval(&w).unwrap();
        assert!((f - want).abs() < 1e-12);
    }

    #[test]
    fn two_row_dataset_at_origin() {
        let data = LabeledDataset::new(vec![vec![1.0, 2.0], vec![-1.0, 0.5]], vec![0, 1]).unwrap();
        let p = build_np_classification(&data, &NpOptions::iid(1, 0), Domain::Unbounded).unwrap();
        let (f, g) = p.global_eval(&ModelVector::zeros(2)).unwrap();
        assert!((f - 2f64.ln()).abs() < 1e-15 && (g - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn iid_split_is_even() {
        let data = balanced(400);
        let opts = NpOptions::iid(20, 5);
        for label in [0, 1] {
            let shards = shard_class(&data.class_indices(label), &data, &opts, label).unwrap();
            assert_eq!(shards.len(), 20);
            assert!(shards.iter().all(|s| s.len() == 10));
            let mut all: Vec<usize> = shards.concat();
            all.sort_unstable();
            assert_eq!(all, data.class_indices(label));
        }
        let p = build_np_classification(&data, &opts, Domain::Unbounded).unwrap();
        assert_eq!(p.num_clients(), 20);
    }

    #[test]
    fn remainder_rows_go_round_robin() {
        let data = balanced(46);
        let opts = NpOptions::iid(4, 1);
        let sizes: Vec<usize> = shard_class(&data.class_indices(0), &data, &opts, 0)
            .unwrap()
            .iter()
            .map(Vec::len)
            .collect();
        assert_eq!(sizes, vec![6, 6, 6, 5]);
    }

    #[test]
    fn partition_errors() {
        let data = LabeledDataset::new(vec![vec![1.0], vec![2.0], vec![3.0]], vec![0, 0, 1]).unwrap();
        assert!(matches!(
            build_np_classification(&data, &NpOptions::iid(2, 0), Domain::Unbounded),
            Err(Error::Partition(_))
        ));
        let one_class = LabeledDataset::new(vec![vec![1.0], vec![2.0]], vec![0, 0]).unwrap();
        assert!(build_np_classification(&one_class, &NpOptions::iid(1, 0), Domain::Unbounded).is_err());
    }

    #[test]
    fn minibatch_gradient_is_unbiased_in_the_limit() {
        let data = balanced(80);
        let mut opts = NpOptions::iid(1, 0);
        opts.batch_size = Some(4000);
        let p = build_np_classification(&data, &opts, Domain::Unbounded).unwrap();
        let client = &p.clients()[0];
        let w = ModelVector::new(vec![0.2, 0.1, -0.3, 0.0]).unwrap();
        let exact = client.objective_subgrad(&w).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let approx = client.local_subgrad(&w, Oracle::Objective, &mut rng).unwrap();
        assert!(approx.distance(&exact).unwrap() < 0.05);
        assert_ne!(approx, exact);
    }
}
