use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Real;

/// Layer widths. The defaults give the production network; tests shrink them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub d_in: usize,
    pub d_h: usize,
    pub pred_hidden: [usize; 2],
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            d_in: 5,
            d_h: 64,
            pred_hidden: [256, 128],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn identity(n: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(n),
            beta: Array1::zeros(n),
            running_mean: Array1::zeros(n),
            running_var: Array1::ones(n),
        }
    }

    fn zeros(n: usize) -> Self {
        BatchNorm {
            gamma: Array1::zeros(n),
            beta: Array1::zeros(n),
            running_mean: Array1::zeros(n),
            running_var: Array1::zeros(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SageParams<T> {
    pub w_self: Array2<T>,
    pub w_neigh: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElemParams<T> {
    pub wa: Array2<T>,
    pub ba: Array1<T>,
    pub wb: Array2<T>,
    pub bb: Array1<T>,
}

/// All weights of one scorer. Linear maps are stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub enc_w: [Array2<T>; 3],
    pub enc_bn: [BatchNorm<T>; 3],
    pub sage: [SageParams<T>; 3],
    pub elem: ElemParams<T>,
    pub pred_w: [Array2<T>; 3],
    pub pred_bn: [BatchNorm<T>; 2],
    pub bn_momentum: T,
    pub bn_eps: T,
}

/// Read-only view of one named tensor.
pub struct Slot<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
    pub trainable: bool,
}

pub struct SlotMut<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [T],
    pub trainable: bool,
}

// Lists every tensor once, in checkpoint order. `$p` is either `&Self` or
// `&mut Self`; destructuring keeps the borrow mode.
macro_rules! visit_tensors {
    ($p:expr, $slice:ident, $emit:expr) => {{
        let NetworkParams { enc_w, enc_bn, sage, elem, pred_w, pred_bn, .. } = $p;
        let mut emit = $emit;
        for (i, w) in enc_w.into_iter().enumerate() {
            let shape = w.shape().to_vec();
            emit(format!("enc.W{}", i + 1), shape, w.$slice().expect("standard layout"), true);
        }
        for (i, bn) in enc_bn.into_iter().enumerate() {
            visit_bn!(format!("enc.bn{}", i + 1), bn, $slice, emit);
        }
        for (i, s) in sage.into_iter().enumerate() {
            let SageParams { w_self, w_neigh, bias } = s;
            for (n, t) in [("W_self", w_self), ("W_neigh", w_neigh)] {
                let shape = t.shape().to_vec();
                emit(format!("sage{}.{n}", i + 1), shape, t.$slice().expect("standard layout"), true);
            }
            let shape = bias.shape().to_vec();
            emit(format!("sage{}.bias", i + 1), shape, bias.$slice().expect("standard layout"), true);
        }
        let ElemParams { wa, ba, wb, bb } = elem;
        for (n, t) in [("Wa", wa), ("Wb", wb)] {
            let shape = t.shape().to_vec();
            emit(format!("elem.{n}"), shape, t.$slice().expect("standard layout"), true);
        }
        for (n, t) in [("ba", ba), ("bb", bb)] {
            let shape = t.shape().to_vec();
            emit(format!("elem.{n}"), shape, t.$slice().expect("standard layout"), true);
        }
        for (i, w) in pred_w.into_iter().enumerate() {
            let shape = w.shape().to_vec();
            emit(format!("pred.W{}", i + 1), shape, w.$slice().expect("standard layout"), true);
        }
        for (i, bn) in pred_bn.into_iter().enumerate() {
            visit_bn!(format!("pred.bn{}", i + 1), bn, $slice, emit);
        }
    }};
}

macro_rules! visit_bn {
    ($prefix:expr, $bn:expr, $slice:ident, $emit:expr) => {{
        let prefix = $prefix;
        let BatchNorm { gamma, beta, running_mean, running_var } = $bn;
        for (n, t, trainable) in [
            ("gamma", gamma, true),
            ("beta", beta, true),
            ("running_mean", running_mean, false),
            ("running_var", running_var, false),
        ] {
            let shape = t.shape().to_vec();
            $emit(format!("{prefix}.{n}"), shape, t.$slice().expect("standard layout"), trainable);
        }
    }};
}

impl<T: Real> NetworkParams<T> {
    fn build(dims: Dims, mut linear: impl FnMut(usize, usize) -> Array2<T>, mut bias: impl FnMut(usize, usize) -> Array1<T>, bn: impl Fn(usize) -> BatchNorm<T>) -> Self {
        let Dims { d_in, d_h, pred_hidden: [p1, p2] } = dims;
        let mut sage_layer = || SageParams {
            w_self: linear(d_h, d_h),
            w_neigh: linear(d_h, d_h),
            bias: bias(d_h, 2 * d_h),
        };
        let sage = [sage_layer(), sage_layer(), sage_layer()];
        NetworkParams {
            enc_w: [linear(d_h, d_in), linear(2 * d_h, d_h), linear(d_h, 2 * d_h)],
            enc_bn: [bn(d_h), bn(2 * d_h), bn(d_h)],
            sage,
            elem: ElemParams {
                wa: linear(d_h, d_h),
                ba: bias(d_h, d_h),
                wb: linear(d_h, d_h),
                bb: bias(d_h, d_h),
            },
            pred_w: [linear(p1, d_h), linear(p2, p1), linear(1, p2)],
            pred_bn: [bn(p1), bn(p2)],
            bn_momentum: T::lit(0.1),
            bn_eps: T::lit(1e-5),
        }
    }

    /// Uniform(±1/√fan_in) weights and biases, identity batch norms.
    pub fn init(dims: Dims, seed: u64) -> Self {
        let rng = std::cell::RefCell::new(ChaCha8Rng::seed_from_u64(seed));
        let draw = |fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            T::lit(rng.borrow_mut().random_range(-bound..=bound))
        };
        Self::build(
            dims,
            |o, i| Array2::from_shape_simple_fn((o, i), || draw(i)),
            |n, fan_in| Array1::from_shape_simple_fn(n, || draw(fan_in)),
            BatchNorm::identity,
        )
    }

    /// All weights zero, batch norms at identity (γ=1, β=0, stats 0/1).
    pub fn zeros(dims: Dims) -> Self {
        Self::build(dims, |o, i| Array2::zeros((o, i)), |n, _| Array1::zeros(n), BatchNorm::identity)
    }

    /// Same shapes with every entry zero; used for gradient accumulators.
    pub fn zeros_like(&self) -> Self {
        Self::build(self.dims(), |o, i| Array2::zeros((o, i)), |n, _| Array1::zeros(n), BatchNorm::zeros)
    }

    pub fn dims(&self) -> Dims {
        Dims {
            d_in: self.enc_w[0].ncols(),
            d_h: self.enc_w[0].nrows(),
            pred_hidden: [self.pred_w[0].nrows(), self.pred_w[1].nrows()],
        }
    }

    pub fn slots(&self) -> Vec<Slot<'_, T>> {
        let mut out = Vec::new();
        visit_tensors!(self, as_slice, |name, shape, data, trainable| out.push(Slot { name, shape, data, trainable }));
        out
    }

    pub fn slots_mut(&mut self) -> Vec<SlotMut<'_, T>> {
        let mut out = Vec::new();
        visit_tensors!(self, as_slice_mut, |name, shape, data, trainable| out.push(SlotMut { name, shape, data, trainable }));
        out
    }

    /// Number of trainable scalars (batch-norm running statistics excluded).
    pub fn trainable_count(&self) -> usize {
        self.slots().iter().filter(|s| s.trainable).map(|s| s.data.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        let mut out = NetworkParams::<U>::zeros(self.dims());
        for (dst, src) in out.slots_mut().into_iter().zip(self.slots()) {
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d = U::from(*s).expect("finite cast");
            }
        }
        out.bn_momentum = U::from(self.bn_momentum).expect("finite cast");
        out.bn_eps = U::from(self.bn_eps).expect("finite cast");
        out
    }

    pub fn all_finite(&self) -> bool {
        self.slots().iter().all(|s| s.data.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_network_has_expected_budget() {
        let p = NetworkParams::<f32>::init(Dims::default(), 0);
        // encoder 16704 + encoder BN 512 + SAGE 24768 + gate 8320
        // + predictor 49280 + predictor BN 768
        assert_eq!(p.trainable_count(), 100_352);
        assert!((100_000..=120_000).contains(&p.trainable_count()));
    }

    #[test]
    fn names_and_shapes_follow_the_layout() {
        let p = NetworkParams::<f32>::init(Dims::default(), 0);
        let slots = p.slots();
        let find = |n: &str| slots.iter().find(|s| s.name == n).unwrap().shape.clone();
        assert_eq!(find("enc.W1"), vec![64, 5]);
        assert_eq!(find("enc.W2"), vec![128, 64]);
        assert_eq!(find("enc.W3"), vec![64, 128]);
        assert_eq!(find("enc.bn2.running_var"), vec![128]);
        assert_eq!(find("sage3.W_neigh"), vec![64, 64]);
        assert_eq!(find("sage1.bias"), vec![64]);
        assert_eq!(find("elem.bb"), vec![64]);
        assert_eq!(find("pred.W1"), vec![256, 64]);
        assert_eq!(find("pred.W2"), vec![128, 256]);
        assert_eq!(find("pred.W3"), vec![1, 128]);
        assert_eq!(find("pred.bn1.gamma"), vec![256]);
        let mut names: Vec<_> = slots.iter().map(|s| s.name.clone()).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }

    #[test]
    fn init_respects_fan_in_bounds_and_seed() {
        let a = NetworkParams::<f64>::init(Dims::default(), 7);
        let b = NetworkParams::<f64>::init(Dims::default(), 7);
        let c = NetworkParams::<f64>::init(Dims::default(), 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = 1.0 / 5f64.sqrt();
        assert!(a.enc_w[0].iter().all(|v| v.abs() <= bound));
        assert!(a.pred_w[1].iter().all(|v| v.abs() <= 1.0 / 256f64.sqrt()));
    }
}
