//! Finite-difference verification of every operator kind, the composed
//! model paths, and the optimizer recurrences. The central-difference
//! oracle lives in `gradcheck` and never touches `backward`.

use grounding_core::autodiff::adamw::{adamw_step, AdamWParams, AdamWState};
use grounding_core::autodiff::gradcheck::grad_check;
use grounding_core::autodiff::params::ParamStore;
use grounding_core::autodiff::{Graph, TensorId};
use grounding_core::corpus::prepare;
use grounding_core::encoders::{AggMode, EncoderConfig};
use grounding_core::eval::GridConfig;
use grounding_core::losses::bce_iou_loss;
use grounding_core::momentmap::valid_mask;
use grounding_core::negatives::assemble_batch;
use grounding_core::synthdata::{generate, GenParams, LengthRatioDist};
use grounding_core::trainer::{batch_loss, ModelConfig, TrainConfig};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const OP_TOL: f64 = 1e-6;

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
}

/// Distinct values with gaps far above the FD step, for max-pool argmax
/// stability.
fn distinct(rng: &mut ChaCha8Rng, count: usize) -> Vec<f64> {
    let mut slots: Vec<i64> = (0..count as i64 * 3).collect();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let pick = rng.random_range(0..slots.len());
        out.push(slots.remove(pick) as f64 * 0.05 - 1.0);
    }
    out
}

/// Scalarizes an op output with fixed weights so every output coordinate
/// carries a distinct gradient.
fn weighted_sum(g: &mut Graph<f64>, out: TensorId, weights: &[f64]) -> TensorId {
    let numel = g.numel(out);
    assert_eq!(numel, weights.len());
    let flat = g.reshape(out, &[1, numel]).unwrap();
    let w = g.input(weights.to_vec(), &[numel, 1]).unwrap();
    let prod = g.matmul(flat, w).unwrap();
    g.reshape(prod, &[1]).unwrap()
}

/// Runs one analytic-vs-central-difference comparison. The builder gets
/// the flat point and must return (scalar loss, params in pack order).
fn check_fd<F>(label: &str, point: &[f64], tol: f64, build: F)
where
    F: Fn(&mut Graph<f64>, &[f64]) -> (TensorId, Vec<TensorId>),
{
    let mut g = Graph::<f64>::new();
    let (loss, params) = build(&mut g, point);
    g.backward(loss).unwrap();
    let mut analytic = Vec::with_capacity(point.len());
    for p in &params {
        analytic.extend_from_slice(g.grad(*p).unwrap());
    }
    let err = grad_check(
        |pt| {
            let mut g2 = Graph::<f64>::new();
            let (l, _) = build(&mut g2, pt);
            Ok(g2.scalar(l))
        },
        &analytic,
        point,
        EPS,
    )
    .unwrap();
    assert!(err < tol, "{label}: max relative error {err:.3e} >= {tol:.0e}");
}

#[test]
fn matmul_gradients_match_central_differences() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k, n) = (
            rng.random_range(1..5usize),
            rng.random_range(1..5usize),
            rng.random_range(1..5usize),
        );
        let point = uniform(&mut rng, -2.0, 2.0, m * k + k * n);
        let w = uniform(&mut rng, -1.0, 1.0, m * n);
        check_fd("matmul", &point, OP_TOL, |g, pt| {
            let a = g.param(pt[..m * k].to_vec(), &[m, k]).unwrap();
            let b = g.param(pt[m * k..].to_vec(), &[k, n]).unwrap();
            let out = g.matmul(a, b).unwrap();
            (weighted_sum(g, out, &w), vec![a, b])
        });
    }
}

#[test]
fn elementwise_gradients_match_central_differences() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let count = rng.random_range(2..10usize);
        let w = uniform(&mut rng, -1.0, 1.0, count);

        // add
        let point = uniform(&mut rng, -2.0, 2.0, 2 * count);
        check_fd("add", &point, OP_TOL, |g, pt| {
            let a = g.param(pt[..count].to_vec(), &[count]).unwrap();
            let b = g.param(pt[count..].to_vec(), &[count]).unwrap();
            let out = g.add(a, b).unwrap();
            (weighted_sum(g, out, &w), vec![a, b])
        });

        // scale
        let factor = 1.0 + rng.random::<f64>();
        let point = uniform(&mut rng, -2.0, 2.0, count);
        check_fd("scale", &point, OP_TOL, |g, pt| {
            let x = g.param(pt.to_vec(), &[count]).unwrap();
            let out = g.scale(x, factor).unwrap();
            (weighted_sum(g, out, &w), vec![x])
        });

        // relu: inputs bounded away from the kink
        let point: Vec<f64> = uniform(&mut rng, 0.2, 2.0, count)
            .into_iter()
            .map(|v| if rng.random::<bool>() { v } else { -v })
            .collect();
        check_fd("relu", &point, OP_TOL, |g, pt| {
            let x = g.param(pt.to_vec(), &[count]).unwrap();
            let out = g.relu(x).unwrap();
            (weighted_sum(g, out, &w), vec![x])
        });

        // sigmoid, exp, log
        let point = uniform(&mut rng, -2.0, 2.0, count);
        check_fd("sigmoid", &point, OP_TOL, |g, pt| {
            let x = g.param(pt.to_vec(), &[count]).unwrap();
            let out = g.sigmoid(x).unwrap();
            (weighted_sum(g, out, &w), vec![x])
        });
        check_fd("exp", &point, OP_TOL, |g, pt| {
            let x = g.param(pt.to_vec(), &[count]).unwrap();
            let out = g.exp(x).unwrap();
            (weighted_sum(g, out, &w), vec![x])
        });
        let point = uniform(&mut rng, 0.2, 3.0, count);
        check_fd("log", &point, OP_TOL, |g, pt| {
            let x = g.param(pt.to_vec(), &[count]).unwrap();
            let out = g.log(x).unwrap();
            (weighted_sum(g, out, &w), vec![x])
        });

        // sum, mean
        let point = uniform(&mut rng, -2.0, 2.0, count);
        check_fd("sum", &point, OP_TOL, |g, pt| {
            let x = g.param(pt.to_vec(), &[count]).unwrap();
            (g.sum(x).unwrap(), vec![x])
        });
        check_fd("mean", &point, OP_TOL, |g, pt| {
            let x = g.param(pt.to_vec(), &[count]).unwrap();
            (g.mean(x).unwrap(), vec![x])
        });

        // masked_fill and reshape
        let keep: Vec<bool> = (0..count).map(|_| rng.random::<bool>()).collect();
        check_fd("masked_fill", &point, OP_TOL, |g, pt| {
            let x = g.param(pt.to_vec(), &[count]).unwrap();
            let out = g.masked_fill(x, &keep, 0.7).unwrap();
            (weighted_sum(g, out, &w), vec![x])
        });
        check_fd("reshape", &point, OP_TOL, |g, pt| {
            let x = g.param(pt.to_vec(), &[1, count]).unwrap();
            let out = g.reshape(x, &[count, 1]).unwrap();
            (weighted_sum(g, out, &w), vec![x])
        });
    }
}

#[test]
fn conv2d_gradients_match_central_differences() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let c_in = rng.random_range(1..4usize);
        let c_out = rng.random_range(1..4usize);
        let h = rng.random_range(3..6usize);
        let wdt = rng.random_range(3..6usize);
        let k = if rng.random::<bool>() { 1 } else { 3 };
        let nx = c_in * h * wdt;
        let nw = c_out * c_in * k * k;
        let point = uniform(&mut rng, -1.5, 1.5, nx + nw + c_out);
        let wsum = uniform(&mut rng, -1.0, 1.0, c_out * h * wdt);
        check_fd("conv2d_same", &point, OP_TOL, |g, pt| {
            let x = g.param(pt[..nx].to_vec(), &[c_in, h, wdt]).unwrap();
            let wk = g.param(pt[nx..nx + nw].to_vec(), &[c_out, c_in, k, k]).unwrap();
            let b = g.param(pt[nx + nw..].to_vec(), &[c_out]).unwrap();
            let out = g.conv2d_same(x, wk, Some(b), k).unwrap();
            (weighted_sum(g, out, &wsum), vec![x, wk, b])
        });

        // Masked variant: same gradients on kept cells, zero output on the
        // rest, checked against both FD and the unmasked op.
        let keep: Vec<bool> = (0..h * wdt).map(|_| rng.random::<bool>()).collect();
        check_fd("conv2d_same_masked", &point, OP_TOL, |g, pt| {
            let x = g.param(pt[..nx].to_vec(), &[c_in, h, wdt]).unwrap();
            let wk = g.param(pt[nx..nx + nw].to_vec(), &[c_out, c_in, k, k]).unwrap();
            let b = g.param(pt[nx + nw..].to_vec(), &[c_out]).unwrap();
            let out = g.conv2d_same_masked(x, wk, Some(b), k, &keep).unwrap();
            (weighted_sum(g, out, &wsum), vec![x, wk, b])
        });
        let mut g = Graph::<f64>::new();
        let x = g.param(point[..nx].to_vec(), &[c_in, h, wdt]).unwrap();
        let wk = g.param(point[nx..nx + nw].to_vec(), &[c_out, c_in, k, k]).unwrap();
        let b = g.param(point[nx + nw..].to_vec(), &[c_out]).unwrap();
        let full = g.conv2d_same(x, wk, Some(b), k).unwrap();
        let masked = g.conv2d_same_masked(x, wk, Some(b), k, &keep).unwrap();
        for co in 0..c_out {
            for (idx, &kp) in keep.iter().enumerate() {
                let fv = g.value(full)[co * h * wdt + idx];
                let mv = g.value(masked)[co * h * wdt + idx];
                if kp {
                    assert!((fv - mv).abs() < 1e-12);
                } else {
                    assert_eq!(mv, 0.0);
                }
            }
        }
    }
}

#[test]
fn maxpool_interval_gradients_match_central_differences() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let n = rng.random_range(4..9usize);
        let d = rng.random_range(1..4usize);
        let g_thr = rng.random_range(1..=n);
        let mask = valid_mask(n, g_thr).unwrap();
        let keep = mask.cells().to_vec();
        let point = distinct(&mut rng, n * d);
        let wsum = uniform(&mut rng, -1.0, 1.0, d * n * n);
        check_fd("maxpool_interval", &point, OP_TOL, |g, pt| {
            let x = g.param(pt.to_vec(), &[n, d]).unwrap();
            let out = g.maxpool_interval(x, n, &keep).unwrap();
            (weighted_sum(g, out, &wsum), vec![x])
        });
    }
}

#[test]
fn layer_norm_and_l2_normalize_gradients_match_central_differences() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let rows = rng.random_range(1..3usize);
        let d = rng.random_range(3..7usize);
        let count = rows * d;
        let w = uniform(&mut rng, -1.0, 1.0, count);
        let point = uniform(&mut rng, -2.0, 2.0, 3 * count);
        check_fd("layer_norm", &point, OP_TOL, |g, pt| {
            let x = g.param(pt[..count].to_vec(), &[rows, d]).unwrap();
            let gamma = g.param(pt[count..2 * count].to_vec(), &[rows, d]).unwrap();
            let beta = g.param(pt[2 * count..].to_vec(), &[rows, d]).unwrap();
            let out = g.layer_norm(x, gamma, beta).unwrap();
            (weighted_sum(g, out, &w), vec![x, gamma, beta])
        });

        // l2_normalize over a vector (axis 1) and over channels (axis 0).
        let point: Vec<f64> = uniform(&mut rng, 0.3, 1.5, d)
            .into_iter()
            .map(|v| if rng.random::<bool>() { v } else { -v })
            .collect();
        let wv = uniform(&mut rng, -1.0, 1.0, d);
        check_fd("l2_normalize_axis1", &point, OP_TOL, |g, pt| {
            let x = g.param(pt.to_vec(), &[1, d]).unwrap();
            let out = g.l2_normalize(x, 1).unwrap();
            (weighted_sum(g, out, &wv), vec![x])
        });
        let c = rng.random_range(2..4usize);
        let n = rng.random_range(2..4usize);
        let point: Vec<f64> = uniform(&mut rng, 0.3, 1.5, c * n * n)
            .into_iter()
            .map(|v| if rng.random::<bool>() { v } else { -v })
            .collect();
        let wc = uniform(&mut rng, -1.0, 1.0, c * n * n);
        check_fd("l2_normalize_axis0", &point, OP_TOL, |g, pt| {
            let x = g.param(pt.to_vec(), &[c, n, n]).unwrap();
            let out = g.l2_normalize(x, 0).unwrap();
            (weighted_sum(g, out, &wc), vec![x])
        });
    }
}

#[test]
fn three_layer_composition_matches_central_differences() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let point = uniform(&mut rng, -1.0, 1.0, 2 * 3 + 3 * 4 + 4 * 2 + 2 * 1);
        check_fd("three_layer", &point, OP_TOL, |g, pt| {
            let (a, b, c) = (2 * 3, 3 * 4, 4 * 2);
            let x = g.param(pt[..a].to_vec(), &[2, 3]).unwrap();
            let w1 = g.param(pt[a..a + b].to_vec(), &[3, 4]).unwrap();
            let w2 = g.param(pt[a + b..a + b + c].to_vec(), &[4, 2]).unwrap();
            let w3 = g.param(pt[a + b + c..].to_vec(), &[2, 1]).unwrap();
            let h1 = g.matmul(x, w1).unwrap();
            let h1 = g.sigmoid(h1).unwrap();
            let h2 = g.matmul(h1, w2).unwrap();
            let h2 = g.sigmoid(h2).unwrap();
            let out = g.matmul(h2, w3).unwrap();
            (g.sum(out).unwrap(), vec![x, w1, w2, w3])
        });
    }
}

#[test]
fn forward_op_spot_values() {
    let mut g = Graph::<f64>::new();
    let x = g.input(vec![0.0], &[1]).unwrap();
    let s = g.sigmoid(x).unwrap();
    assert_eq!(g.scalar(s), 0.5);

    let v = g.input(vec![3.0, 4.0], &[1, 2]).unwrap();
    let n = g.l2_normalize(v, 1).unwrap();
    assert!((g.value(n)[0] - 0.6).abs() < 1e-9);
    assert!((g.value(n)[1] - 0.8).abs() < 1e-9);

    // All-ones 3x3 input and kernel, zero padding: center sees all nine
    // cells, a corner only four.
    let xi = g.input(vec![1.0; 9], &[1, 3, 3]).unwrap();
    let k = g.input(vec![1.0; 9], &[1, 1, 3, 3]).unwrap();
    let out = g.conv2d_same(xi, k, None, 3).unwrap();
    let vals = g.value(out);
    assert_eq!(vals[4], 9.0);
    assert_eq!(vals[0], 4.0);
    // Independent direct-convolution recomputation over every cell.
    for oy in 0..3usize {
        for ox in 0..3usize {
            let mut acc = 0.0;
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let iy = oy as isize + ky as isize - 1;
                    let ix = ox as isize + kx as isize - 1;
                    if (0..3).contains(&iy) && (0..3).contains(&ix) {
                        acc += 1.0;
                    }
                }
            }
            assert_eq!(vals[oy * 3 + ox], acc, "cell ({oy},{ox})");
        }
    }
}

#[test]
fn backward_spot_values() {
    // d(sum)/dx is all ones.
    let mut g = Graph::<f64>::new();
    let x = g.param(vec![1.0, -2.0, 3.0, 0.5], &[2, 2]).unwrap();
    let loss = g.sum(x).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 4]);

    // sigma'(0) = 1/4.
    let mut g = Graph::<f64>::new();
    let w = g.param(vec![0.0], &[1]).unwrap();
    let s = g.sigmoid(w).unwrap();
    let loss = g.sum(s).unwrap();
    g.backward(loss).unwrap();
    assert!((g.grad(w).unwrap()[0] - 0.25).abs() < 1e-15);

    // Unreached parameters get zeros; non-scalar losses are rejected.
    let mut g = Graph::<f64>::new();
    let used = g.param(vec![1.0], &[1]).unwrap();
    let unused = g.param(vec![5.0, 6.0], &[2]).unwrap();
    let loss = g.sum(used).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(unused).unwrap(), &[0.0, 0.0]);
    let vec2 = g.param(vec![1.0, 2.0], &[2]).unwrap();
    assert!(g.backward(vec2).is_err());
}

#[test]
fn maxpool_ties_route_to_earliest_row() {
    let mut g = Graph::<f64>::new();
    let mask = valid_mask(3, 3).unwrap();
    let x = g.param(vec![5.0, 5.0, 3.0], &[3, 1]).unwrap();
    let out = g.maxpool_interval(x, 3, mask.cells()).unwrap();
    let loss = g.sum(out).unwrap();
    g.backward(loss).unwrap();
    // Cells (0,0),(0,1),(0,2) all credit row 0; (1,1),(1,2) credit row 1;
    // (2,2) credits row 2.
    assert_eq!(g.grad(x).unwrap(), &[3.0, 2.0, 1.0]);
}

#[test]
fn grad_check_is_exact_for_linear_maps() {
    let point = vec![0.4, -1.2, 2.5];
    let coefs = [3.0, -0.5, 1.25];
    let analytic = coefs.to_vec();
    let err = grad_check(
        |pt| Ok(pt.iter().zip(coefs).map(|(x, c)| x * c).sum()),
        &analytic,
        &point,
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-10, "linear map error {err:.2e}");
    // Step-size preconditions.
    assert!(grad_check(|_| Ok(0.0), &analytic, &point, 0.0).is_err());
    assert!(grad_check(|_| Ok(0.0), &analytic, &point, 0.1).is_err());
}

#[test]
fn graph_replay_is_bit_identical() {
    let build = |g: &mut Graph<f64>| {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = g.param(uniform(&mut rng, -1.0, 1.0, 12), &[3, 4]).unwrap();
        let w = g.param(uniform(&mut rng, -1.0, 1.0, 8), &[4, 2]).unwrap();
        let h = g.matmul(x, w).unwrap();
        let h = g.sigmoid(h).unwrap();
        let loss = g.mean(h).unwrap();
        g.backward(loss).unwrap();
        (g.scalar(loss), g.grad(x).unwrap().to_vec(), g.grad(w).unwrap().to_vec())
    };
    let mut g1 = Graph::<f64>::new();
    let mut g2 = Graph::<f64>::new();
    let (l1, gx1, gw1) = build(&mut g1);
    let (l2, gx2, gw2) = build(&mut g2);
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert!(gx1.iter().zip(&gx2).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(gw1.iter().zip(&gw2).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn adamw_decay_only_and_first_step_scale() {
    // Zero gradient: the update is pure decoupled decay.
    let mut store = ParamStore::new();
    store.insert("w", vec![2.0], vec![1]).unwrap();
    let mut grads = std::collections::BTreeMap::new();
    grads.insert("w".to_string(), vec![0.0]);
    let mut state = AdamWState::new(AdamWParams {
        lr: 0.1,
        weight_decay: 0.01,
        ..AdamWParams::default()
    });
    adamw_step(&mut store, &grads, &mut state).unwrap();
    let expect = 2.0 * (1.0 - 0.1 * 0.01);
    assert!((store.get("w").unwrap().values[0] - expect).abs() < 1e-15);

    // First step moves by -lr * sign(g) up to epsilon, regardless of |g|.
    for c in [1e-3, 1.0, 1e3] {
        let mut store = ParamStore::new();
        store.insert("w", vec![0.0], vec![1]).unwrap();
        let mut grads = std::collections::BTreeMap::new();
        grads.insert("w".to_string(), vec![c]);
        let mut state = AdamWState::new(AdamWParams { lr: 0.1, ..AdamWParams::default() });
        adamw_step(&mut store, &grads, &mut state).unwrap();
        let got = store.get("w").unwrap().values[0];
        assert!((got + 0.1).abs() < 0.1 * 1e-4, "grad {c}: step {got}");
    }

    // Non-finite gradients are rejected with the parameter named.
    let mut store = ParamStore::new();
    store.insert("w", vec![0.0], vec![1]).unwrap();
    let mut grads = std::collections::BTreeMap::new();
    grads.insert("w".to_string(), vec![f64::NAN]);
    let mut state = AdamWState::new(AdamWParams::default());
    let err = adamw_step(&mut store, &grads, &mut state).unwrap_err();
    assert!(format!("{err}").contains('w'));
}

#[test]
fn adamw_two_steps_match_hand_recurrence() {
    let (lr, b1, b2, eps, wd) = (0.1, 0.9, 0.999, 1e-8, 0.01);
    let g = 0.5;
    // Straight-line recomputation of the recurrence.
    let mut theta = 1.0f64;
    let mut m = 0.0f64;
    let mut v = 0.0f64;
    for t in 1..=2 {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t));
        let v_hat = v / (1.0 - b2.powi(t));
        theta -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * theta);
    }

    let mut store = ParamStore::new();
    store.insert("w", vec![1.0], vec![1]).unwrap();
    let mut grads = std::collections::BTreeMap::new();
    grads.insert("w".to_string(), vec![g]);
    let mut state = AdamWState::new(AdamWParams {
        lr,
        beta1: b1,
        beta2: b2,
        epsilon: eps,
        weight_decay: wd,
    });
    adamw_step(&mut store, &grads, &mut state).unwrap();
    adamw_step(&mut store, &grads, &mut state).unwrap();
    assert!((store.get("w").unwrap().values[0] - theta).abs() < 1e-12);
}

#[test]
fn bce_path_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mask = valid_mask(8, 2).unwrap();
    let n = 8;
    let point = uniform(&mut rng, -1.0, 1.0, n * n);
    let targets: Vec<f64> = uniform(&mut rng, 0.0, 1.0, n * n);
    check_fd("bce_path", &point, 1e-4, |g, pt| {
        let map = g.param(pt.to_vec(), &[n, n]).unwrap();
        let loss = bce_iou_loss(g, map, &targets, &mask, 10.0).unwrap();
        (loss, vec![map])
    });
}

fn tiny_setup() -> (grounding_core::corpus::Corpus, ModelConfig, TrainConfig) {
    let gen = GenParams {
        videos: 2,
        raw_clips: 16,
        sampled_clips: 8,
        feature_dim: 6,
        concepts: 3,
        events_per_video: 2,
        noise_sigma: 0.4,
        vocab_size: 16,
        query_tokens: 4,
        distractor_rate: 0.5,
        length_ratio: LengthRatioDist::Uniform { lo: 0.15, hi: 0.4 },
        seconds_per_clip: 1.0,
    };
    let corpus = prepare(&generate(&gen, 5).unwrap(), 8).unwrap();
    let model = ModelConfig {
        grid: GridConfig { n: 8, dense_threshold: 2 },
        encoder: EncoderConfig {
            vocab_size: 16,
            d_sentence: 8,
            d_input: 6,
            d_video: 6,
            d_joint: 8,
            conv_layers: 1,
            kernel: 3,
            aggregation: AggMode::Avg,
        },
    };
    let train = TrainConfig::default();
    (corpus, model, train)
}

/// Full-model finite differences over every parameter, through the exact
/// loss path the trainer optimizes (BCE + lambda * matching).
#[test]
fn full_batch_loss_gradient_matches_central_differences() {
    let (corpus, model, cfg) = tiny_setup();
    let mask = model.grid.mask().unwrap();
    let batch = assemble_batch(&corpus, 2, 3, &mask).unwrap();
    let mut store = grounding_core::encoders::init_params(&model.encoder, 11).unwrap();

    let outcome = batch_loss(&corpus, &batch, &mask, &store, &model, &cfg, true, 9, None).unwrap();
    let analytic: Vec<f64> = store
        .iter()
        .flat_map(|(name, _)| outcome.grads[name].clone())
        .collect();
    let point = store.flatten();
    let err = grad_check(
        |pt| {
            store.unflatten(pt).unwrap();
            let out = batch_loss(&corpus, &batch, &mask, &store, &model, &cfg, true, 9, None)?;
            Ok(out.l_total)
        },
        &analytic,
        &point,
        EPS,
    )
    .unwrap();
    assert!(err < 1e-4, "full path max relative error {err:.3e}");
}
