//! Per-layer forward and backward passes. Activations are `rows × features`;
//! weights are `out × in`.

use ndarray::{Array1, Array2, Axis};

use super::{BatchNorm, ElemParams, Neighborhoods, Real, SageParams};
use crate::{Error, Result};

pub fn linear_forward<T: Real>(x: &Array2<T>, w: &Array2<T>) -> Array2<T> {
    x.dot(&w.t())
}

/// Returns `(dx, dw)`.
pub fn linear_backward<T: Real>(x: &Array2<T>, w: &Array2<T>, dy: &Array2<T>) -> (Array2<T>, Array2<T>) {
    (dy.dot(w), dy.t().dot(x))
}

pub fn relu_forward<T: Real>(x: &Array2<T>) -> Array2<T> {
    // NaN falls through unchanged so bad inputs stay visible
    x.mapv(|v| if v <= T::zero() { T::zero() } else { v })
}

/// Gradient through ReLU given its output `y`.
pub fn relu_backward<T: Real>(y: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &v| {
        if v <= T::zero() {
            *d = T::zero();
        }
    });
    dx
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Array2<T>,
    pub inv_std: Array1<T>,
    /// Batch mean and biased variance; `None` in eval mode.
    pub batch_stats: Option<(Array1<T>, Array1<T>)>,
}

/// Batch normalization over rows. With `train` the batch statistics are used
/// (biased variance); otherwise the running statistics.
pub fn bn_forward<T: Real>(x: &Array2<T>, bn: &BatchNorm<T>, eps: T, train: bool) -> (Array2<T>, BnCache<T>) {
    let (mean, var, stats) = if train {
        let n = T::from(x.nrows()).expect("row count");
        let mean = x.sum_axis(Axis(0)) / n;
        let centered = x - &mean;
        let var = (&centered * &centered).sum_axis(Axis(0)) / n;
        (mean.clone(), var.clone(), Some((mean, var)))
    } else {
        (bn.running_mean.clone(), bn.running_var.clone(), None)
    };
    let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
    let xhat = (x - &mean) * &inv_std;
    let y = &xhat * &bn.gamma + &bn.beta;
    (
        y,
        BnCache {
            xhat,
            inv_std,
            batch_stats: stats,
        },
    )
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn bn_backward<T: Real>(dy: &Array2<T>, bn: &BatchNorm<T>, cache: &BnCache<T>) -> (Array2<T>, Array1<T>, Array1<T>) {
    let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0));
    let dxhat = dy * &bn.gamma;
    let dx = if cache.batch_stats.is_some() {
        let n = T::from(dy.nrows()).expect("row count");
        let sum_d = dxhat.sum_axis(Axis(0));
        let sum_dx = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        ((&dxhat * n) - &sum_d - &(&cache.xhat * &sum_dx)) * &(&cache.inv_std / n)
    } else {
        dxhat * &cache.inv_std
    };
    (dx, dgamma, dbeta)
}

/// Folds batch statistics into the running estimates; the variance enters
/// unbiased (n / (n − 1)) when more than one row was seen.
pub fn bn_update_running<T: Real>(bn: &mut BatchNorm<T>, cache: &BnCache<T>, rows: usize, momentum: T) {
    let Some((mean, var)) = &cache.batch_stats else {
        return;
    };
    let correction = if rows > 1 {
        T::from(rows).expect("rows") / T::from(rows - 1).expect("rows")
    } else {
        T::one()
    };
    let keep = T::one() - momentum;
    bn.running_mean.zip_mut_with(mean, |r, &m| *r = *r * keep + m * momentum);
    bn.running_var
        .zip_mut_with(var, |r, &v| *r = *r * keep + v * correction * momentum);
}

#[derive(Debug, Clone)]
pub struct SageCache<T> {
    pub max: Array2<T>,
    /// Winning source per (node, feature); `u32::MAX` for nodes without
    /// in-neighbors.
    pub argmax: Vec<u32>,
}

/// Element-wise max of the in-neighbor rows of `h`, zero for nodes without
/// in-neighbors. Ties go to the lowest source id.
pub fn max_aggregate<T: Real>(h: &Array2<T>, nb: &Neighborhoods) -> (Array2<T>, Vec<u32>) {
    let (n, d) = h.dim();
    let hs = h.as_standard_layout();
    let hs = hs.as_slice().expect("contiguous");
    let mut max = vec![T::zero(); n * d];
    let mut argmax = vec![u32::MAX; n * d];
    for i in 0..n {
        let row = &mut max[i * d..(i + 1) * d];
        let arg = &mut argmax[i * d..(i + 1) * d];
        for &src in nb.of(i) {
            let s = &hs[src as usize * d..(src as usize + 1) * d];
            for f in 0..d {
                if arg[f] == u32::MAX || s[f] > row[f] {
                    row[f] = s[f];
                    arg[f] = src;
                }
            }
        }
    }
    (Array2::from_shape_vec((n, d), max).expect("shape"), argmax)
}

/// `h W_selfᵀ + max_neigh(h) W_neighᵀ + bias`.
pub fn sage_forward<T: Real>(h: &Array2<T>, nb: &Neighborhoods, p: &SageParams<T>) -> Result<(Array2<T>, SageCache<T>)> {
    if nb.len() != h.nrows() {
        return Err(Error::Shape(format!("{} neighborhoods for {} nodes", nb.len(), h.nrows())));
    }
    let (max, argmax) = max_aggregate(h, nb);
    let out = linear_forward(h, &p.w_self) + linear_forward(&max, &p.w_neigh) + &p.bias;
    Ok((out, SageCache { max, argmax }))
}

/// Returns `dh` and the parameter gradients.
pub fn sage_backward<T: Real>(h: &Array2<T>, p: &SageParams<T>, cache: &SageCache<T>, dout: &Array2<T>) -> (Array2<T>, SageParams<T>) {
    let (dh_self, dw_self) = linear_backward(h, &p.w_self, dout);
    let (dmax, dw_neigh) = linear_backward(&cache.max, &p.w_neigh, dout);
    let mut dh = dh_self;
    let d = h.ncols();
    {
        let dmax = dmax.as_slice().expect("contiguous");
        let dh = dh.as_slice_mut().expect("contiguous");
        for (k, &src) in cache.argmax.iter().enumerate() {
            if src != u32::MAX {
                dh[src as usize * d + k % d] += dmax[k];
            }
        }
    }
    let grads = SageParams {
        w_self: dw_self,
        w_neigh: dw_neigh,
        bias: dout.sum_axis(Axis(0)),
    };
    (dh, grads)
}

/// Gate values `a(h) = h Waᵀ + ba`, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ElemCache<T> {
    pub gate: Array2<T>,
}

/// `a(h) ⊙ h + b(h)` with affine `a` and `b`.
pub fn elem_forward<T: Real>(h: &Array2<T>, p: &ElemParams<T>) -> (Array2<T>, ElemCache<T>) {
    let gate = linear_forward(h, &p.wa) + &p.ba;
    let out = &gate * h + linear_forward(h, &p.wb) + &p.bb;
    (out, ElemCache { gate })
}

pub fn elem_backward<T: Real>(h: &Array2<T>, p: &ElemParams<T>, cache: &ElemCache<T>, dout: &Array2<T>) -> (Array2<T>, ElemParams<T>) {
    let dgate = dout * h;
    let (dh_a, dwa) = linear_backward(h, &p.wa, &dgate);
    let (dh_b, dwb) = linear_backward(h, &p.wb, dout);
    let dh = dout * &cache.gate + dh_a + dh_b;
    let grads = ElemParams {
        wa: dwa,
        ba: dgate.sum_axis(Axis(0)),
        wb: dwb,
        bb: dout.sum_axis(Axis(0)),
    };
    (dh, grads)
}

/// Per-graph element-wise max over node rows. Returns the pooled rows and
/// the winning node for each (graph, feature), ties to the lowest node.
pub fn max_pool_forward<T: Real>(h: &Array2<T>, node_offsets: &[usize]) -> Result<(Array2<T>, Vec<usize>)> {
    let d = h.ncols();
    let g = node_offsets.len().saturating_sub(1);
    if g == 0 {
        return Err(Error::Shape("pooling over zero graphs".into()));
    }
    let mut out = Array2::zeros((g, d));
    let mut argmax = vec![0; g * d];
    for gi in 0..g {
        let (lo, hi) = (node_offsets[gi], node_offsets[gi + 1]);
        if lo >= hi {
            return Err(Error::Shape(format!("graph {gi} has no nodes to pool")));
        }
        for f in 0..d {
            let mut best = lo;
            for i in lo + 1..hi {
                if h[(i, f)] > h[(best, f)] {
                    best = i;
                }
            }
            out[(gi, f)] = h[(best, f)];
            argmax[gi * d + f] = best;
        }
    }
    Ok((out, argmax))
}

pub fn max_pool_backward<T: Real>(dpool: &Array2<T>, argmax: &[usize], n_nodes: usize) -> Array2<T> {
    let d = dpool.ncols();
    let mut dh = Array2::zeros((n_nodes, d));
    for (k, &node) in argmax.iter().enumerate() {
        dh[(node, k % d)] += dpool[(k / d, k % d)];
    }
    dh
}
