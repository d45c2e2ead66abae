//! Small dense neural engine for the grasp-graph scorer: node encoder, three
//! max-aggregation SAGE convolutions, an element-wise affine gate, global max
//! pooling and a predictor MLP, with hand-written reverse-mode gradients.
//!
//! Everything is generic over [`Real`] so gradient checks can run in `f64`
//! while training and checkpoints use `f32`.

mod adam;
mod batch;
mod checkpoint;
pub mod layers;
mod network;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use batch::{GraphBatch, Neighborhoods};
pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, load_ensemble, save_checkpoint, save_ensemble, Ensemble, Tensor, ENSEMBLE_SIZE,
};
pub use network::{
    backward, encode_nodes, ensemble_score, forward, loss_and_gradients, mse_loss, score_graphs, update_running_stats,
    ForwardCache, Mode,
};
pub use params::{BatchNorm, Dims, ElemParams, NetworkParams, SageParams, Slot, SlotMut};

use std::fmt::{Debug, Display};

/// Scalar types the engine runs on.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::iter::Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

impl Real for f32 {}
impl Real for f64 {}
