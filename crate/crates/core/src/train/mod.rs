//! Dataset generation and five-fold ensemble training with class-rebalanced
//! resampling and per-fold validation selection.

mod dataset;

use rand::seq::{index::sample, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use dataset::{
    build_dataset, build_scene, label_scene, labeled_record, read_dataset, write_dataset, LabelClass, LabelEntry,
    LabeledGraphSet, LabeledRecord, SceneDataset, NUM_FOLDS,
};

use crate::gnn::{
    adam_step, checkpoint_bytes, loss_and_gradients, score_graphs, update_running_stats, AdamConfig, AdamState, Dims,
    Ensemble, GraphBatch, Mode, NetworkParams, ENSEMBLE_SIZE,
};
use crate::graph::GraspGraph;
use crate::{derive_seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Epochs between refreshes of the negative subsample.
    pub resample_period: usize,
    pub n_collision_per_cycle: usize,
    pub n_lowq_per_cycle: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// One seed per ensemble member; member `i` trains on fold `i`.
    pub seeds: [u64; ENSEMBLE_SIZE],
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            resample_period: 10,
            n_collision_per_cycle: 2000,
            n_lowq_per_cycle: 2000,
            lr: 0.01,
            batch_size: 64,
            seeds: [0, 1, 2, 3, 4],
            bn_momentum: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.resample_period == 0 || self.batch_size == 0 {
            return Err(Error::Config("train: epochs, resample_period and batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("train.lr must be a finite non-negative number, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config(format!("train.bn_momentum must lie in [0, 1], got {}", self.bn_momentum)));
        }
        Ok(())
    }
}

/// Learning curves of one member and the epoch whose weights were kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldReport {
    pub fold: usize,
    pub seed: u64,
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    /// Zero-based epoch with the lowest validation MSE (earliest on ties).
    pub selected_epoch: usize,
    pub best_val_mse: f64,
    /// SHA-256 of the selected checkpoint bytes.
    pub checkpoint_id: String,
}

impl FoldReport {
    /// `epoch,train_mse,val_mse` rows.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("epoch,train_mse,val_mse\n");
        for (e, (t, v)) in self.train_mse.iter().zip(&self.val_mse).enumerate() {
            out.push_str(&format!("{e},{t},{v}\n"));
        }
        out
    }
}

pub fn checkpoint_id(p: &NetworkParams<f32>) -> String {
    Sha256::digest(checkpoint_bytes(p)).iter().map(|b| format!("{b:02x}")).collect()
}

/// Training list of one cycle: every positive of the fold's training scenes
/// plus at most the quota of each negative band, drawn without replacement,
/// all shuffled.
pub fn resample_epoch_set<R: Rng>(set: &LabeledGraphSet, fold: usize, cfg: &TrainConfig, rng: &mut R) -> Result<Vec<usize>> {
    let mut ids = set.train_class_ids(fold, LabelClass::Positive);
    if ids.is_empty() {
        return Err(Error::Precondition(format!("fold {fold} has no positive training records")));
    }
    for (class, quota) in [
        (LabelClass::Collision, cfg.n_collision_per_cycle),
        (LabelClass::LowQuality, cfg.n_lowq_per_cycle),
    ] {
        let pool = set.train_class_ids(fold, class);
        let n = quota.min(pool.len());
        ids.extend(sample(rng, pool.len(), n).into_iter().map(|i| pool[i]));
    }
    ids.shuffle(rng);
    Ok(ids)
}

/// Splits a list into batches; a trailing batch of one joins the previous
/// batch so batch statistics are never taken over a single graph.
fn batches(ids: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = ids.chunks(size).collect();
    if out.len() >= 2 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("at least one batch") = &ids[start..];
    }
    out
}

/// Eval-mode MSE of `params` on `graphs`.
pub fn mse(params: &NetworkParams<f32>, graphs: &[GraspGraph], targets: &[f32]) -> Result<f64> {
    if graphs.is_empty() {
        return Err(Error::Precondition("mse over an empty set".into()));
    }
    let scores = score_graphs(params, graphs)?;
    let total: f64 = scores
        .iter()
        .zip(targets)
        .map(|(&s, &t)| (s as f64 - t as f64).powi(2))
        .sum();
    Ok(total / graphs.len() as f64)
}

/// Per-epoch callback: `(fold, epoch, train_mse, val_mse)`.
pub type EpochHook<'a> = &'a (dyn Fn(usize, usize, f64, f64) + Sync);

pub fn train_member(set: &LabeledGraphSet, fold: usize, cfg: &TrainConfig, seed: u64) -> Result<(NetworkParams<f32>, FoldReport)> {
    train_member_with(set, fold, cfg, seed, &|_, _, _, _| {})
}

pub fn train_member_with(
    set: &LabeledGraphSet,
    fold: usize,
    cfg: &TrainConfig,
    seed: u64,
    hook: EpochHook<'_>,
) -> Result<(NetworkParams<f32>, FoldReport)> {
    cfg.validate()?;
    if fold >= NUM_FOLDS {
        return Err(Error::Precondition(format!("fold {fold} out of range")));
    }
    let val_ids = set.val_ids(fold);
    if val_ids.is_empty() {
        return Err(Error::Precondition(format!("fold {fold} has no validation records")));
    }
    let records = set.records();
    let val_graphs: Vec<GraspGraph> = val_ids.iter().map(|&i| records[i].graph.clone()).collect();
    let val_targets: Vec<f32> = val_ids.iter().map(|&i| records[i].label).collect();

    let mut params = NetworkParams::<f32>::init(Dims::default(), seed);
    params.bn_momentum = cfg.bn_momentum as f32;
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(&params);
    let mut best: Option<(f64, usize, NetworkParams<f32>)> = None;
    let mut train_curve = Vec::with_capacity(cfg.epochs);
    let mut val_curve = Vec::with_capacity(cfg.epochs);
    let mut list = Vec::new();

    for epoch in 0..cfg.epochs {
        if epoch % cfg.resample_period == 0 {
            let cycle = (epoch / cfg.resample_period) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, 1), cycle));
            list = resample_epoch_set(set, fold, cfg, &mut rng)?;
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, 2), epoch as u64));
            list.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for (b, ids) in batches(&list, cfg.batch_size).into_iter().enumerate() {
            let graphs: Vec<&GraspGraph> = ids.iter().map(|&i| &records[i].graph).collect();
            let targets: Vec<f32> = ids.iter().map(|&i| records[i].label).collect();
            let batch = GraphBatch::<f32>::new(&graphs)?;
            let context = |e: Error| Error::Numeric(format!("fold {fold} epoch {epoch} batch {b}: {e}"));
            let (loss, grads, cache) = loss_and_gradients(&params, &batch, &targets, Mode::Train).map_err(context)?;
            if !loss.is_finite() {
                return Err(context(Error::Numeric(format!("loss is {loss}"))));
            }
            update_running_stats(&mut params, &cache);
            adam_step(&mut params, &grads, &mut state, &adam).map_err(context)?;
            loss_sum += loss as f64 * ids.len() as f64;
        }
        let train_mse = loss_sum / list.len() as f64;
        let val_mse = mse(&params, &val_graphs, &val_targets)
            .map_err(|e| Error::Numeric(format!("fold {fold} epoch {epoch} validation: {e}")))?;
        if !val_mse.is_finite() {
            return Err(Error::Numeric(format!("fold {fold} epoch {epoch}: validation MSE is {val_mse}")));
        }
        hook(fold, epoch, train_mse, val_mse);
        train_curve.push(train_mse);
        val_curve.push(val_mse);
        if best.as_ref().is_none_or(|b| val_mse < b.0) {
            best = Some((val_mse, epoch, params.clone()));
        }
    }
    let (best_val_mse, selected_epoch, best_params) = best.expect("at least one epoch");
    let report = FoldReport {
        fold,
        seed,
        train_mse: train_curve,
        val_mse: val_curve,
        selected_epoch,
        best_val_mse,
        checkpoint_id: checkpoint_id(&best_params),
    };
    Ok((best_params, report))
}

/// Member `i` trains on fold `i` with `cfg.seeds[i]`; members may run in
/// parallel and come back in fold order.
pub fn train_ensemble(set: &LabeledGraphSet, cfg: &TrainConfig) -> Result<(Ensemble, Vec<FoldReport>)> {
    train_ensemble_with(set, cfg, &|_, _, _, _| {})
}

pub fn train_ensemble_with(set: &LabeledGraphSet, cfg: &TrainConfig, hook: EpochHook<'_>) -> Result<(Ensemble, Vec<FoldReport>)> {
    let results: Vec<(NetworkParams<f32>, FoldReport)> = (0..ENSEMBLE_SIZE)
        .into_par_iter()
        .map(|fold| train_member_with(set, fold, cfg, cfg.seeds[fold], hook))
        .collect::<Result<_>>()?;
    let (members, reports): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok((Ensemble::new(members, cfg.seeds.to_vec())?, reports))
}
