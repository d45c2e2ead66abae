use gtg_core::gnn::*;
use gtg_core::cloud::Point;
use gtg_core::graph::{graph_from_regions, GraphConfig, GraspGraph};
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(rng: &mut ChaCha8Rng, n_in: usize, n_out: usize) -> GraspGraph {
    let mut pts = |n: usize, s: f64| -> Vec<Point> {
        (0..n)
            .map(|_| Point::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s)))
            .collect()
    };
    let inside = pts(n_in, 0.03);
    let outside = pts(n_out, 0.06);
    graph_from_regions(&inside, &outside, &GraphConfig::default(), 0).unwrap()
}

/// Random running statistics so eval mode is not a plain identity.
fn perturb_bn(p: &mut NetworkParams<f64>, rng: &mut ChaCha8Rng) {
    for bn in p.enc_bn.iter_mut().chain(p.pred_bn.iter_mut()) {
        bn.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
        bn.beta.mapv_inplace(|_| rng.random_range(-0.2..0.2));
        bn.running_mean.mapv_inplace(|_| rng.random_range(-0.1..0.1));
        bn.running_var.mapv_inplace(|_| rng.random_range(0.5..2.0));
    }
}

#[test]
fn zero_weights_score_zero() {
    let p = NetworkParams::<f32>::zeros(Dims::default());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = random_graph(&mut rng, 20, 20);
    assert_eq!(score_graphs(&p, &[g]).unwrap(), vec![0.0]);
}

#[test]
fn encoder_zero_input_with_identity_like_weights() {
    let mut p = NetworkParams::<f64>::zeros(Dims { d_in: 2, d_h: 2, pred_hidden: [3, 3] });
    p.enc_w[0] = Array2::eye(2);
    p.enc_w[1] = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]];
    p.enc_w[2] = array![[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]];
    let z = encode_nodes(&p, &Array2::zeros((1, 2)), Mode::Eval).unwrap();
    assert_eq!(z, Array2::<f64>::zeros((1, 2)));
}

#[test]
fn encoder_toy_dims_match_hand_computation() {
    let mut p = NetworkParams::<f64>::zeros(Dims { d_in: 2, d_h: 2, pred_hidden: [3, 3] });
    p.enc_w[0] = array![[1.0, 2.0], [-1.0, 0.5]];
    p.enc_w[1] = array![[1.0, 1.0], [2.0, -1.0], [0.0, 1.0], [-1.0, 0.0]];
    p.enc_w[2] = array![[1.0, 0.0, 1.0, 2.0], [0.5, 0.5, 0.0, -1.0]];
    p.enc_bn[0].gamma = array![2.0, 1.0];
    p.enc_bn[0].beta = array![0.0, 0.5];
    p.enc_bn[1].running_mean = array![1.0, 0.0, 0.0, 0.0];
    p.enc_bn[2].running_var = array![3.0, 1.0];
    p.bn_eps = 0.0;
    let x = array![[1.0, 1.0]];
    // W1 x = (3, -0.5); BN1 → (6, 0); ReLU → (6, 0)
    // W2 · (6, 0) = (6, 12, 0, -6); BN2 subtracts mean 1 → (5, 12, 0, -6); ReLU → (5, 12, 0, 0)
    // W3 · (5, 12, 0, 0) = (5, 8.5); BN3 divides the first by √3
    let z = encode_nodes(&p, &x, Mode::Eval).unwrap();
    assert!((z[(0, 0)] - 5.0 / 3f64.sqrt()).abs() < 1e-12);
    assert!((z[(0, 1)] - 8.5).abs() < 1e-12);
}

#[test]
fn eval_encoder_rows_are_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut p = NetworkParams::<f64>::init(Dims::default(), 1);
    perturb_bn(&mut p, &mut rng);
    let mut x = Array2::from_shape_simple_fn((140, 5), || rng.random_range(-0.05..0.05));
    let before = encode_nodes(&p, &x, Mode::Eval).unwrap();
    x.row_mut(17).mapv_inplace(|v| v + 0.3);
    let after = encode_nodes(&p, &x, Mode::Eval).unwrap();
    for i in 0..140 {
        if i != 17 {
            assert_eq!(before.row(i), after.row(i));
        }
    }
    assert_ne!(before.row(17), after.row(17));
}

#[test]
fn eval_forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = NetworkParams::<f32>::init(Dims::default(), 9);
    let g = random_graph(&mut rng, 50, 60);
    let a = score_graphs(&p, std::slice::from_ref(&g)).unwrap();
    let b = score_graphs(&p, std::slice::from_ref(&g)).unwrap();
    assert_eq!(a[0].to_bits(), b[0].to_bits());
}

#[test]
fn node_permutation_leaves_score_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p64 = NetworkParams::<f64>::init(Dims::default(), 4);
    perturb_bn(&mut p64, &mut rng);
    let p = p64.cast::<f32>();
    for _ in 0..5 {
        let g = random_graph(&mut rng, 40, 50);
        let n = g.num_nodes();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        // node i moves to position perm[i]
        let mut features = vec![[0f32; 5]; n];
        for (i, f) in g.node_features.iter().enumerate() {
            features[perm[i]] = *f;
        }
        let shuffled = GraspGraph {
            node_features: features,
            edges: g.edges.iter().map(|&(a, b)| (perm[a as usize] as u32, perm[b as usize] as u32)).collect(),
            n_inside: g.n_inside,
            n_outside: g.n_outside,
        };
        let s = score_graphs(&p, &[g, shuffled]).unwrap();
        assert!((s[0] - s[1]).abs() < 1e-5, "{s:?}");
    }
}

#[test]
fn zero_residual_gives_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = NetworkParams::<f64>::init(Dims::default(), 5);
    let graphs = [random_graph(&mut rng, 10, 10), random_graph(&mut rng, 12, 8)];
    let batch = GraphBatch::<f64>::new(&graphs.iter().collect::<Vec<_>>()).unwrap();
    let scores = forward(&p, &batch, Mode::Train).unwrap().scores;
    let (loss, grads, _) = loss_and_gradients(&p, &batch, scores.as_slice().unwrap(), Mode::Train).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.slots().iter().all(|s| s.data.iter().all(|&v| v == 0.0)));
}

#[test]
fn duplicated_samples_average_to_the_single_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut p = NetworkParams::<f64>::init(Dims::default(), 6);
    perturb_bn(&mut p, &mut rng);
    let g = random_graph(&mut rng, 15, 15);
    let one = GraphBatch::<f64>::new(&[&g]).unwrap();
    let three = GraphBatch::<f64>::new(&[&g, &g, &g]).unwrap();
    // eval mode: with batch statistics the copies would change the normalization
    let (l1, g1, _) = loss_and_gradients(&p, &one, &[0.3], Mode::Eval).unwrap();
    let (l3, g3, _) = loss_and_gradients(&p, &three, &[0.3, 0.3, 0.3], Mode::Eval).unwrap();
    assert!((l1 - l3).abs() < 1e-12);
    for (a, b) in g1.slots().iter().zip(g3.slots()) {
        for (x, y) in a.data.iter().zip(b.data) {
            assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()), "{}", a.name);
        }
    }
}

/// ReLU masks and max winners of one pass.
#[derive(Clone, Default)]
struct Branches {
    relu: Vec<Array2<bool>>,
    sage: Vec<Vec<u32>>,
    pool: Vec<usize>,
}

/// Independent forward pass assembled from the public layer functions. With
/// `frozen` set, every ReLU and max follows the recorded branches instead of
/// deciding afresh, which makes the loss smooth in the parameters while
/// agreeing with the real network at the point where the branches were taken.
fn oracle_loss(p: &NetworkParams<f64>, batch: &GraphBatch<f64>, targets: &[f64], mode: Mode, frozen: Option<&Branches>) -> (f64, Array1<f64>, Branches) {
    use gtg_core::gnn::layers::*;
    let train = mode == Mode::Train;
    let mut rec = Branches::default();
    let relu = |x: Array2<f64>, rec: &mut Branches| {
        let k = rec.relu.len();
        let mask = match frozen {
            Some(f) => f.relu[k].clone(),
            None => x.mapv(|v| v > 0.0),
        };
        let y = ndarray::Zip::from(&x).and(&mask).map_collect(|&v, &m| if m { v } else { 0.0 });
        rec.relu.push(mask);
        y
    };
    let sage = |h: &Array2<f64>, sp: &SageParams<f64>, rec: &mut Branches| {
        let k = rec.sage.len();
        let arg = match frozen {
            Some(f) => f.sage[k].clone(),
            None => max_aggregate(h, &batch.neighbors).1,
        };
        let d = h.ncols();
        let m = Array2::from_shape_fn(h.dim(), |(i, c)| {
            let src = arg[i * d + c];
            if src == u32::MAX { 0.0 } else { h[(src as usize, c)] }
        });
        rec.sage.push(arg);
        linear_forward(h, &sp.w_self) + linear_forward(&m, &sp.w_neigh) + &sp.bias
    };
    let bn = |x: Array2<f64>, b: &BatchNorm<f64>| bn_forward(&x, b, p.bn_eps, train).0;

    let r1 = relu(bn(linear_forward(&batch.x, &p.enc_w[0]), &p.enc_bn[0]), &mut rec);
    let r2 = relu(bn(linear_forward(&r1, &p.enc_w[1]), &p.enc_bn[1]), &mut rec);
    let z = bn(linear_forward(&r2, &p.enc_w[2]), &p.enc_bn[2]);
    let h1 = sage(&z, &p.sage[0], &mut rec);
    let h1 = relu(h1, &mut rec);
    let h2 = sage(&h1, &p.sage[1], &mut rec);
    let h2 = relu(h2, &mut rec);
    let h3 = sage(&h2, &p.sage[2], &mut rec);
    let e = elem_forward(&h3, &p.elem).0;
    let pool_arg = match frozen {
        Some(f) => f.pool.clone(),
        None => max_pool_forward(&e, &batch.node_offsets).unwrap().1,
    };
    let d = e.ncols();
    let pooled = Array2::from_shape_fn((batch.num_graphs(), d), |(g, c)| e[(pool_arg[g * d + c], c)]);
    rec.pool = pool_arg;
    let q1 = relu(bn(linear_forward(&pooled, &p.pred_w[0]), &p.pred_bn[0]), &mut rec);
    let q2 = relu(bn(linear_forward(&q1, &p.pred_w[1]), &p.pred_bn[1]), &mut rec);
    let scores = linear_forward(&q2, &p.pred_w[2]).column(0).to_owned();
    let loss = scores.iter().zip(targets).map(|(s, t)| (s - t).powi(2)).sum::<f64>() / targets.len() as f64;
    (loss, scores, rec)
}

/// Central differences of the branch-frozen oracle against the engine's
/// analytic gradient, for a sample of entries of every trainable tensor (all
/// entries of tensors with at most 64 values).
fn gradient_check(p: &NetworkParams<f64>, graphs: &[GraspGraph], targets: &[f64], mode: Mode, eps: f64, rng: &mut ChaCha8Rng) -> usize {
    let batch = GraphBatch::<f64>::new(&graphs.iter().collect::<Vec<_>>()).unwrap();
    let (loss, grads, cache) = loss_and_gradients(p, &batch, targets, mode).unwrap();
    let (oracle, scores, branches) = oracle_loss(p, &batch, targets, mode, None);
    assert!((oracle - loss).abs() < 1e-12);
    assert!((&scores - &cache.scores).iter().all(|v| v.abs() < 1e-12));
    let mut checked = 0;
    let slots: Vec<(String, usize, bool)> = p.slots().iter().map(|s| (s.name.clone(), s.data.len(), s.trainable)).collect();
    for (t, (name, len, trainable)) in slots.into_iter().enumerate() {
        if !trainable {
            continue;
        }
        let picks: Vec<usize> = if len <= 64 { (0..len).collect() } else { (0..32).map(|_| rng.random_range(0..len)).collect() };
        for i in picks {
            let mut q = p.clone();
            let orig = q.slots()[t].data[i];
            q.slots_mut()[t].data[i] = orig + eps;
            let up = oracle_loss(&q, &batch, targets, mode, Some(&branches)).0;
            q.slots_mut()[t].data[i] = orig - eps;
            let down = oracle_loss(&q, &batch, targets, mode, Some(&branches)).0;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.slots()[t].data[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-4, "{mode:?} {name}[{i}]: analytic {analytic} numeric {numeric}");
            checked += 1;
        }
    }
    checked
}

#[test]
fn full_network_gradients_on_a_ten_node_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut p = NetworkParams::<f64>::init(Dims::default(), 7);
    perturb_bn(&mut p, &mut rng);
    let graph = random_graph(&mut rng, 6, 4);
    assert!(gradient_check(&p, &[graph], &[0.5], Mode::Eval, 1e-3, &mut rng) >= 1200);
}

/// Batch statistics couple every node of the batch, which makes the loss far
/// more curved; ε = 1e-4 keeps the O(ε²) truncation error below tolerance.
#[test]
fn full_network_gradients_with_batch_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut p = NetworkParams::<f64>::init(Dims::default(), 8);
    perturb_bn(&mut p, &mut rng);
    let graphs: Vec<GraspGraph> = (0..6).map(|k| random_graph(&mut rng, 4 + k, 6 - k)).collect();
    let targets = [0.5, -0.5, 1.0, 0.0, -1.0, 0.25];
    assert!(gradient_check(&p, &graphs, &targets, Mode::Train, 1e-4, &mut rng) >= 1200);
}

#[test]
fn ensemble_scores_average_members() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let graphs: Vec<GraspGraph> = (0..4).map(|_| random_graph(&mut rng, 20, 20)).collect();

    let same = NetworkParams::<f32>::init(Dims::default(), 1);
    let e = Ensemble::new(vec![same.clone(); 5], vec![1; 5]).unwrap();
    let single = score_graphs(&same, &graphs).unwrap();
    for (a, b) in ensemble_score(&e, &graphs).unwrap().iter().zip(&single) {
        assert!((a - b).abs() < 1e-6);
    }

    // members whose output is a fixed constant: zero weights except the
    // predictor's last layer reading a constant unit from BN β
    let constant = |c: f32| {
        let mut m = NetworkParams::<f32>::zeros(Dims::default());
        m.pred_bn[1].beta[0] = 1.0;
        m.pred_w[2][(0, 0)] = c;
        m
    };
    let e = Ensemble::new([0.2, 0.4, 0.6, 0.8, 1.0].map(constant).to_vec(), vec![0; 5]).unwrap();
    for s in ensemble_score(&e, &graphs).unwrap() {
        assert!((s - 0.6).abs() < 1e-6);
    }

    let members: Vec<_> = (0..5).map(|s| NetworkParams::<f32>::init(Dims::default(), 100 + s)).collect();
    let e = Ensemble::new(members.clone(), (0..5).collect()).unwrap();
    let got = ensemble_score(&e, &graphs).unwrap();
    for (k, g) in graphs.iter().enumerate() {
        let mean: f32 = members.iter().map(|m| score_graphs(m, std::slice::from_ref(g)).unwrap()[0]).sum::<f32>() / 5.0;
        assert!((got[k] - mean).abs() < 1e-5);
    }
}

#[test]
fn trained_model_survives_checkpoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let graphs: Vec<GraspGraph> = (0..8).map(|_| random_graph(&mut rng, 15, 15)).collect();
    let targets: Vec<f32> = (0..8).map(|i| i as f32 / 8.0).collect();
    let mut p = NetworkParams::<f32>::init(Dims::default(), 3);
    let mut state = AdamState::new(&p);
    let batch = GraphBatch::<f32>::new(&graphs.iter().collect::<Vec<_>>()).unwrap();
    for _ in 0..5 {
        let (_, g, cache) = loss_and_gradients(&p, &batch, &targets, Mode::Train).unwrap();
        update_running_stats(&mut p, &cache);
        adam_step(&mut p, &g, &mut state, &AdamConfig::default()).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&p, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(score_graphs(&p, &graphs).unwrap(), score_graphs(&back, &graphs).unwrap());
}

#[test]
fn non_finite_input_is_reported_by_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut bad = random_graph(&mut rng, 5, 5);
    bad.node_features[0][0] = f32::NAN;
    let good = random_graph(&mut rng, 5, 5);
    let err = GraphBatch::<f32>::new(&[&good, &bad]).unwrap_err();
    assert!(err.to_string().contains("graph 1"), "{err}");

    // parameters that overflow produce a non-finite score instead
    let mut p = NetworkParams::<f32>::init(Dims::default(), 0);
    p.pred_w[2].fill(f32::INFINITY);
    let batch = GraphBatch::<f32>::new(&[&good, &good]).unwrap();
    let err = loss_and_gradients(&p, &batch, &[0.0, 0.0], Mode::Eval).unwrap_err();
    assert!(matches!(err, gtg_core::Error::Numeric(_)), "{err}");
}

#[test]
fn training_reduces_loss_on_a_tiny_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let graphs: Vec<GraspGraph> = (0..16).map(|_| random_graph(&mut rng, 12, 12)).collect();
    let targets: Vec<f32> = (0..16).map(|i| if i % 2 == 0 { 1.0 } else { -0.5 }).collect();
    let mut p = NetworkParams::<f32>::init(Dims::default(), 2);
    let mut state = AdamState::new(&p);
    let batch = GraphBatch::<f32>::new(&graphs.iter().collect::<Vec<_>>()).unwrap();
    let first = loss_and_gradients(&p, &batch, &targets, Mode::Train).unwrap().0;
    let mut last = first;
    for _ in 0..60 {
        let (l, g, cache) = loss_and_gradients(&p, &batch, &targets, Mode::Train).unwrap();
        update_running_stats(&mut p, &cache);
        adam_step(&mut p, &g, &mut state, &AdamConfig::default()).unwrap();
        last = l;
    }
    assert!(last < 0.2 * first, "{first} -> {last}");
}
