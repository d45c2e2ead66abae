use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;

use super::layers::*;
use super::{Ensemble, GraphBatch, NetworkParams, Real, ENSEMBLE_SIZE};
use crate::graph::GraspGraph;
use crate::{Error, Result};

/// Batch-norm behavior: `Train` normalizes with batch statistics, `Eval`
/// with the running estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    enc_bn: [BnCache<T>; 3],
    /// Encoder ReLU outputs after the first two layers.
    enc_act: [Array2<T>; 2],
    /// Inputs of the three SAGE layers.
    sage_in: [Array2<T>; 3],
    sage: [SageCache<T>; 3],
    elem_in: Array2<T>,
    elem: ElemCache<T>,
    pooled: Array2<T>,
    pool_arg: Vec<usize>,
    pred_bn: [BnCache<T>; 2],
    pred_act: [Array2<T>; 2],
    n_nodes: usize,
    pub scores: Array1<T>,
}

type EncoderTrace<T> = (Array2<T>, [BnCache<T>; 3], [Array2<T>; 2]);

fn encode<T: Real>(p: &NetworkParams<T>, x: &Array2<T>, train: bool) -> EncoderTrace<T> {
    let eps = p.bn_eps;
    let (b1, c1) = bn_forward(&linear_forward(x, &p.enc_w[0]), &p.enc_bn[0], eps, train);
    let r1 = relu_forward(&b1);
    let (b2, c2) = bn_forward(&linear_forward(&r1, &p.enc_w[1]), &p.enc_bn[1], eps, train);
    let r2 = relu_forward(&b2);
    let (z, c3) = bn_forward(&linear_forward(&r2, &p.enc_w[2]), &p.enc_bn[2], eps, train);
    (z, [c1, c2, c3], [r1, r2])
}

/// Per-node embedding `BN₃(W₃ ReLU(BN₂(W₂ ReLU(BN₁(W₁ x)))))`.
pub fn encode_nodes<T: Real>(p: &NetworkParams<T>, x: &Array2<T>, mode: Mode) -> Result<Array2<T>> {
    if x.ncols() != p.dims().d_in {
        return Err(Error::Shape(format!("node features have {} columns, expected {}", x.ncols(), p.dims().d_in)));
    }
    Ok(encode(p, x, mode == Mode::Train).0)
}

impl<T: Real> ForwardCache<T> {
    /// Every branch the pass took: ReLU on/off states and the winners of the
    /// max aggregations and the pooling. Two passes with equal patterns lie
    /// on the same smooth piece of the network function.
    pub fn branch_pattern(&self) -> Vec<u32> {
        let mut out = Vec::new();
        let relu_outputs = self.enc_act.iter().chain(&self.sage_in[1..]).chain(&self.pred_act);
        for a in relu_outputs {
            out.extend(a.iter().map(|&v| u32::from(v > T::zero())));
        }
        for s in &self.sage {
            out.extend_from_slice(&s.argmax);
        }
        out.extend(self.pool_arg.iter().map(|&i| i as u32));
        out
    }
}

/// Scores every graph of the batch.
pub fn forward<T: Real>(p: &NetworkParams<T>, batch: &GraphBatch<T>, mode: Mode) -> Result<ForwardCache<T>> {
    let dims = p.dims();
    if batch.x.ncols() != dims.d_in {
        return Err(Error::Shape(format!("node features have {} columns, expected {}", batch.x.ncols(), dims.d_in)));
    }
    let train = mode == Mode::Train;
    let eps = p.bn_eps;
    let (z, [c1, c2, c3], [r1, r2]) = encode(p, &batch.x, train);

    let (t1, s1) = sage_forward(&z, &batch.neighbors, &p.sage[0])?;
    let h1 = relu_forward(&t1);
    let (t2, s2) = sage_forward(&h1, &batch.neighbors, &p.sage[1])?;
    let h2 = relu_forward(&t2);
    let (h3, s3) = sage_forward(&h2, &batch.neighbors, &p.sage[2])?;

    let (e, ec) = elem_forward(&h3, &p.elem);
    let (pooled, pool_arg) = max_pool_forward(&e, &batch.node_offsets)?;

    let (v1, pc1) = bn_forward(&linear_forward(&pooled, &p.pred_w[0]), &p.pred_bn[0], eps, train);
    let q1 = relu_forward(&v1);
    let (v2, pc2) = bn_forward(&linear_forward(&q1, &p.pred_w[1]), &p.pred_bn[1], eps, train);
    let q2 = relu_forward(&v2);
    let scores = linear_forward(&q2, &p.pred_w[2]).index_axis_move(Axis(1), 0);

    Ok(ForwardCache {
        enc_bn: [c1, c2, c3],
        enc_act: [r1, r2],
        sage_in: [z, h1, h2],
        sage: [s1, s2, s3],
        elem_in: h3,
        elem: ec,
        pooled,
        pool_arg,
        pred_bn: [pc1, pc2],
        pred_act: [q1, q2],
        n_nodes: batch.x.nrows(),
        scores,
    })
}

/// Gradients of `Σ d_scores[g] · score[g]` with respect to every trainable
/// tensor. Running-statistic slots of the result stay zero.
pub fn backward<T: Real>(p: &NetworkParams<T>, batch: &GraphBatch<T>, cache: &ForwardCache<T>, d_scores: &Array1<T>) -> NetworkParams<T> {
    let mut g = p.zeros_like();
    let ds = d_scores.clone().insert_axis(Axis(1));
    let [q1, q2] = &cache.pred_act;

    let (dq2, dw) = linear_backward(q2, &p.pred_w[2], &ds);
    g.pred_w[2] = dw;
    let (du2, dgamma, dbeta) = bn_backward(&relu_backward(q2, &dq2), &p.pred_bn[1], &cache.pred_bn[1]);
    (g.pred_bn[1].gamma, g.pred_bn[1].beta) = (dgamma, dbeta);
    let (dq1, dw) = linear_backward(q1, &p.pred_w[1], &du2);
    g.pred_w[1] = dw;
    let (du1, dgamma, dbeta) = bn_backward(&relu_backward(q1, &dq1), &p.pred_bn[0], &cache.pred_bn[0]);
    (g.pred_bn[0].gamma, g.pred_bn[0].beta) = (dgamma, dbeta);
    let (dpooled, dw) = linear_backward(&cache.pooled, &p.pred_w[0], &du1);
    g.pred_w[0] = dw;

    let de = max_pool_backward(&dpooled, &cache.pool_arg, cache.n_nodes);
    let (dh3, ge) = elem_backward(&cache.elem_in, &p.elem, &cache.elem, &de);
    g.elem = ge;

    let [z, h1, h2] = &cache.sage_in;
    let (dh2, gs) = sage_backward(h2, &p.sage[2], &cache.sage[2], &dh3);
    g.sage[2] = gs;
    let (dh1, gs) = sage_backward(h1, &p.sage[1], &cache.sage[1], &relu_backward(h2, &dh2));
    g.sage[1] = gs;
    let (dz, gs) = sage_backward(z, &p.sage[0], &cache.sage[0], &relu_backward(h1, &dh1));
    g.sage[0] = gs;

    let [r1, r2] = &cache.enc_act;
    let (da3, dgamma, dbeta) = bn_backward(&dz, &p.enc_bn[2], &cache.enc_bn[2]);
    (g.enc_bn[2].gamma, g.enc_bn[2].beta) = (dgamma, dbeta);
    let (dr2, dw) = linear_backward(r2, &p.enc_w[2], &da3);
    g.enc_w[2] = dw;
    let (da2, dgamma, dbeta) = bn_backward(&relu_backward(r2, &dr2), &p.enc_bn[1], &cache.enc_bn[1]);
    (g.enc_bn[1].gamma, g.enc_bn[1].beta) = (dgamma, dbeta);
    let (dr1, dw) = linear_backward(r1, &p.enc_w[1], &da2);
    g.enc_w[1] = dw;
    let (da1, dgamma, dbeta) = bn_backward(&relu_backward(r1, &dr1), &p.enc_bn[0], &cache.enc_bn[0]);
    (g.enc_bn[0].gamma, g.enc_bn[0].beta) = (dgamma, dbeta);
    g.enc_w[0] = da1.t().dot(&batch.x);
    g
}

/// Mean squared error and its gradient with respect to the scores.
pub fn mse_loss<T: Real>(scores: &Array1<T>, targets: &[T]) -> Result<(T, Array1<T>)> {
    if scores.len() != targets.len() {
        return Err(Error::Shape(format!("{} scores for {} targets", scores.len(), targets.len())));
    }
    let n = T::from(scores.len()).expect("count");
    let resid: Array1<T> = scores.iter().zip(targets).map(|(&s, &t)| s - t).collect();
    let loss = resid.iter().map(|&r| r * r).sum::<T>() / n;
    Ok((loss, resid * (T::lit(2.0) / n)))
}

/// Forward, MSE against `targets`, and backward in one call.
pub fn loss_and_gradients<T: Real>(
    p: &NetworkParams<T>,
    batch: &GraphBatch<T>,
    targets: &[T],
    mode: Mode,
) -> Result<(T, NetworkParams<T>, ForwardCache<T>)> {
    let cache = forward(p, batch, mode)?;
    if let Some(bad) = cache.scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("non-finite score for graph {bad} of the batch")));
    }
    let (loss, d_scores) = mse_loss(&cache.scores, targets)?;
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    let grads = backward(p, batch, &cache, &d_scores);
    Ok((loss, grads, cache))
}

/// Folds the batch statistics of a train-mode pass into the running ones.
pub fn update_running_stats<T: Real>(p: &mut NetworkParams<T>, cache: &ForwardCache<T>) {
    let m = p.bn_momentum;
    let graphs = cache.scores.len();
    for (bn, c) in p.enc_bn.iter_mut().zip(&cache.enc_bn) {
        bn_update_running(bn, c, cache.n_nodes, m);
    }
    for (bn, c) in p.pred_bn.iter_mut().zip(&cache.pred_bn) {
        bn_update_running(bn, c, graphs, m);
    }
}

const SCORE_CHUNK: usize = 256;

/// Eval-mode scores, one per graph, computed in fixed-size chunks.
pub fn score_graphs<T: Real>(p: &NetworkParams<T>, graphs: &[GraspGraph]) -> Result<Vec<T>> {
    let chunks: Vec<Vec<T>> = graphs
        .par_chunks(SCORE_CHUNK)
        .map(|chunk| {
            let refs: Vec<&GraspGraph> = chunk.iter().collect();
            let batch = GraphBatch::new(&refs)?;
            Ok(forward(p, &batch, Mode::Eval)?.scores.to_vec())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Mean of the members' eval-mode scores for each graph.
pub fn ensemble_score(e: &Ensemble, graphs: &[GraspGraph]) -> Result<Vec<f32>> {
    if e.members.len() != ENSEMBLE_SIZE {
        return Err(Error::Shape(format!("ensemble has {} members, expected {ENSEMBLE_SIZE}", e.members.len())));
    }
    let mut total = vec![0f32; graphs.len()];
    for m in &e.members {
        for (t, s) in total.iter_mut().zip(score_graphs(m, graphs)?) {
            *t += s;
        }
    }
    Ok(total.into_iter().map(|t| t / ENSEMBLE_SIZE as f32).collect())
}
