//! Finite-difference verification of every differentiation path.
//!
//! The oracles here are deliberately independent of the tape: plain matrix
//! arithmetic for primitive ops, and a hand-written backpropagation for the
//! one-hidden-layer network used in the composed-objective checks, so the
//! virtual inner step inside the finite-difference closure never touches
//! the code under test.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rml_core::data::make_blobs;
use rml_core::losses::{
    cross_entropy, kl_consistency, rectify, RectConfig, WeightingMode,
};
use rml_core::matrix::{one_hot, Matrix};
use rml_core::model::{init_params, predict, ModelSpec, ParamSet};
use rml_core::pseudo::{build_neighbor_index, generate_q_sets, PseudoLabelSet};
use rml_core::tape::{finite_diff, GradOrder, Tape};
use rml_core::trainer::{objective_grad, TrainConfig};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_mat(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// l2 relative error between two gradient stacks.
fn rel_err(a: &[Matrix], b: &[Matrix]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (ma, mb) in a.iter().zip(b) {
        for (va, vb) in ma.data().iter().zip(mb.data()) {
            num += (va - vb) * (va - vb);
            den += vb * vb;
        }
    }
    num.sqrt() / den.sqrt().max(1e-12)
}

/// Checks one recorded graph against finite differences of `plain`, which
/// must recompute the same scalar using matrix arithmetic only.
fn check_op(
    name: &str,
    params: &[Matrix],
    build: impl Fn(&mut Tape, &[rml_core::tape::NodeId]) -> rml_core::Result<rml_core::tape::NodeId>,
    plain: impl Fn(&[Matrix]) -> rml_core::Result<f64>,
) {
    let mut tape = Tape::new();
    let ids: Vec<_> = params.iter().map(|m| tape.param(m.clone())).collect();
    let out = build(&mut tape, &ids).unwrap();
    let analytic = tape.backward(out).unwrap();
    let fd = finite_diff(&plain, params, 1e-6).unwrap();
    assert!(
        (analytic.loss - fd.loss).abs() < 1e-12,
        "{}: losses disagree: {} vs {}",
        name,
        analytic.loss,
        fd.loss
    );
    let e = rel_err(&analytic.grads, &fd.grads);
    assert!(e < 1e-7, "{}: gradient relative error {}", name, e);
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut r = rng(1);
    let a = rand_mat(3, 4, -1.0, 1.0, &mut r);
    let b = rand_mat(4, 2, -1.0, 1.0, &mut r);
    check_op(
        "matmul",
        &[a, b],
        |t, ids| {
            let p = t.matmul(ids[0], ids[1])?;
            t.sum(p)
        },
        |ps| Ok(ps[0].matmul(&ps[1]).sum()),
    );
}

#[test]
fn elementwise_op_gradients_match_finite_differences() {
    let mut r = rng(2);
    let a = rand_mat(3, 3, 0.5, 2.0, &mut r);
    let b = rand_mat(3, 3, 0.5, 2.0, &mut r);

    check_op(
        "add",
        &[a.clone(), b.clone()],
        |t, ids| {
            let s = t.add(ids[0], ids[1])?;
            t.sum(s)
        },
        |ps| Ok(ps[0].add(&ps[1]).sum()),
    );
    check_op(
        "sub",
        &[a.clone(), b.clone()],
        |t, ids| {
            let s = t.sub(ids[0], ids[1])?;
            t.sum(s)
        },
        |ps| Ok(ps[0].sub(&ps[1]).sum()),
    );
    check_op(
        "hadamard",
        &[a.clone(), b.clone()],
        |t, ids| {
            let s = t.hadamard(ids[0], ids[1])?;
            t.sum(s)
        },
        |ps| Ok(ps[0].hadamard(&ps[1]).sum()),
    );
    check_op(
        "div",
        &[a, b],
        |t, ids| {
            let s = t.div(ids[0], ids[1])?;
            t.sum(s)
        },
        |ps| Ok(ps[0].zip_map(&ps[1], |x, y| x / y).sum()),
    );
}

#[test]
fn broadcast_and_linear_gradients_match_finite_differences() {
    let mut r = rng(3);
    let x = rand_mat(4, 3, -1.0, 1.0, &mut r);
    let bias = rand_mat(1, 3, -1.0, 1.0, &mut r);
    check_op(
        "add_row",
        &[x.clone(), bias],
        |t, ids| {
            let s = t.add_row(ids[0], ids[1])?;
            t.sum(s)
        },
        |ps| {
            let mut acc = 0.0;
            for row in 0..ps[0].rows() {
                for col in 0..ps[0].cols() {
                    acc += ps[0].get(row, col) + ps[1].get(0, col);
                }
            }
            Ok(acc)
        },
    );

    let a = rand_mat(2, 2, -1.0, 1.0, &mut r);
    let b = rand_mat(2, 2, -1.0, 1.0, &mut r);
    check_op(
        "linear",
        &[a, b],
        |t, ids| {
            let s = t.linear(&[(2.0, ids[0]), (-3.0, ids[1])], 1.5)?;
            t.sum(s)
        },
        |ps| Ok(ps[0].zip_map(&ps[1], |x, y| 2.0 * x - 3.0 * y + 1.5).sum()),
    );
}

#[test]
fn nonlinearity_gradients_match_finite_differences() {
    let mut r = rng(4);
    // Keep relu inputs away from the kink and clamp inputs away from the
    // bounds; finite differences are invalid exactly at those points.
    let x = rand_mat(3, 4, 0.2, 1.5, &mut r);
    let y = rand_mat(3, 4, -1.5, -0.2, &mut r);

    check_op(
        "relu",
        &[x.clone(), y.clone()],
        |t, ids| {
            let d = t.sub(ids[0], ids[1])?;
            let s = t.relu(d)?;
            t.sum(s)
        },
        |ps| Ok(ps[0].zip_map(&ps[1], |a, b| (a - b).max(0.0)).sum()),
    );
    check_op(
        "exp",
        &[x.clone()],
        |t, ids| {
            let s = t.exp(ids[0])?;
            t.sum(s)
        },
        |ps| Ok(ps[0].map(|v| v.exp()).sum()),
    );
    check_op(
        "log",
        &[x.clone()],
        |t, ids| {
            let s = t.log(ids[0])?;
            t.sum(s)
        },
        |ps| Ok(ps[0].map(|v| v.ln()).sum()),
    );
    check_op(
        "clamp",
        &[x],
        |t, ids| {
            let s = t.clamp(ids[0], 0.0, 1.0)?;
            t.sum(s)
        },
        |ps| Ok(ps[0].map(|v| v.clamp(0.0, 1.0)).sum()),
    );
}

#[test]
fn reduction_and_softmax_gradients_match_finite_differences() {
    let mut r = rng(5);
    let x = rand_mat(3, 4, -2.0, 2.0, &mut r);
    let w = rand_mat(3, 4, -1.0, 1.0, &mut r);
    let w2 = w.clone();

    check_op(
        "softmax",
        &[x.clone()],
        move |t, ids| {
            let p = t.softmax(ids[0])?;
            let wid = t.input(w.clone());
            let s = t.hadamard(p, wid)?;
            t.sum(s)
        },
        move |ps| Ok(ps[0].row_softmax().hadamard(&w2).sum()),
    );
    check_op(
        "row_sum",
        &[x.clone()],
        |t, ids| {
            let rs = t.row_sum(ids[0])?;
            let sq = t.hadamard(rs, rs)?;
            t.sum(sq)
        },
        |ps| {
            let mut acc = 0.0;
            for row in 0..ps[0].rows() {
                let s: f64 = ps[0].row(row).iter().sum();
                acc += s * s;
            }
            Ok(acc)
        },
    );
    check_op(
        "mean",
        &[x],
        |t, ids| {
            let m = t.mean(ids[0])?;
            t.hadamard(m, m)
        },
        |ps| {
            let m = ps[0].sum() / ps[0].len() as f64;
            Ok(m * m)
        },
    );
}

#[test]
fn deep_mlp_cross_entropy_gradient_matches_finite_differences() {
    // Two hidden layers, so the check covers chained relu and broadcast.
    let spec = ModelSpec::new(3, vec![5, 4], 3).unwrap();
    let params = init_params(&spec, 11).unwrap();
    let ds = make_blobs(12, 3, 3, 0.4, 21).unwrap();
    let y = one_hot(&ds.clean, 3).unwrap();
    let x = ds.features.clone();

    let mut tape = Tape::new();
    let ids = params.declare(&mut tape);
    let xid = tape.input(x.clone());
    let probs = rml_core::model::probs_node(&mut tape, &ids, xid).unwrap();
    let yid = tape.input(y.clone());
    let loss = rml_core::losses::cross_entropy_node(&mut tape, probs, yid).unwrap();
    let analytic = tape.backward(loss).unwrap();

    let spec2 = spec.clone();
    let fd = finite_diff(
        |mats| {
            let ps = ParamSet::from_mats(spec2.clone(), mats.to_vec())?;
            cross_entropy(&predict(&ps, &x)?, &y)
        },
        params.mats(),
        1e-6,
    )
    .unwrap();

    let e = rel_err(&analytic.grads, &fd.grads);
    assert!(e < 1e-7, "relative error {}", e);
}

#[test]
fn kl_gradient_through_both_arguments_matches_finite_differences() {
    // Differentiates KL(softmax(a) || softmax(b)) with respect to both
    // logit matrices.
    let mut r = rng(6);
    let a = rand_mat(4, 3, -1.0, 1.0, &mut r);
    let b = rand_mat(4, 3, -1.0, 1.0, &mut r);
    check_op(
        "kl",
        &[a, b],
        |t, ids| {
            let pa = t.softmax(ids[0])?;
            let pb = t.softmax(ids[1])?;
            rml_core::losses::kl_node(t, pa, pb)
        },
        |ps| kl_consistency(&ps[0].row_softmax(), &ps[1].row_softmax()),
    );
}

// ---- composed objective ------------------------------------------------

/// Hand backpropagation for a one-hidden-layer softmax network under mean
/// cross-entropy. Written directly from the layer formulas; shares nothing
/// with the tape.
fn hand_ce_grad(mats: &[Matrix], x: &Matrix, y: &Matrix) -> Vec<Matrix> {
    let (w1, b1, w2, b2) = (&mats[0], &mats[1], &mats[2], &mats[3]);
    let k = x.rows() as f64;
    let mut z1 = x.matmul(w1);
    for r in 0..z1.rows() {
        for c in 0..z1.cols() {
            z1.set(r, c, z1.get(r, c) + b1.get(0, c));
        }
    }
    let h = z1.map(|v| v.max(0.0));
    let mut z2 = h.matmul(w2);
    for r in 0..z2.rows() {
        for c in 0..z2.cols() {
            z2.set(r, c, z2.get(r, c) + b2.get(0, c));
        }
    }
    let p = z2.row_softmax();

    // dL/dz2 = (p - y) / k for mean cross-entropy over one-hot labels.
    let dz2 = p.zip_map(y, |pv, yv| (pv - yv) / k);
    let dw2 = h.transpose().matmul(&dz2);
    let mut db2 = Matrix::zeros(1, dz2.cols());
    for r in 0..dz2.rows() {
        for c in 0..dz2.cols() {
            db2.set(0, c, db2.get(0, c) + dz2.get(r, c));
        }
    }
    let dh = dz2.matmul(&w2.transpose());
    let dz1 = dh.zip_map(&z1, |g, z| if z > 0.0 { g } else { 0.0 });
    let dw1 = x.transpose().matmul(&dz1);
    let mut db1 = Matrix::zeros(1, dz1.cols());
    for r in 0..dz1.rows() {
        for c in 0..dz1.cols() {
            db1.set(0, c, db1.get(0, c) + dz1.get(r, c));
        }
    }
    vec![dw1, db1, dw2, db2]
}

/// The full blended objective evaluated without the tape: the virtual step
/// uses `hand_ce_grad`, predictions use the plain forward pass.
fn composed_objective(
    spec: &ModelSpec,
    mats: &[Matrix],
    x: &Matrix,
    y: &Matrix,
    sets: &[PseudoLabelSet],
    alpha: f64,
    beta: f64,
    rect: &RectConfig,
) -> rml_core::Result<f64> {
    let params = ParamSet::from_mats(spec.clone(), mats.to_vec())?;
    let p_o = predict(&params, x)?;
    let ce = cross_entropy(&p_o, y)?;
    let mut s_sum = 0.0;
    for set in sets {
        let g = hand_ce_grad(mats, x, &set.labels);
        let phi_mats: Vec<Matrix> = mats
            .iter()
            .zip(&g)
            .map(|(m, gm)| {
                let mut phi = m.clone();
                phi.axpy(-beta, gm);
                phi
            })
            .collect();
        let phi = ParamSet::from_mats(spec.clone(), phi_mats)?;
        let p_i = predict(&phi, x)?;
        s_sum += rectify(kl_consistency(&p_o, &p_i)?, rect)?;
    }
    Ok((1.0 - alpha) * ce + alpha * s_sum / sets.len() as f64)
}

fn composed_setup(seed: u64) -> (ModelSpec, ParamSet, Matrix, Matrix, Vec<PseudoLabelSet>) {
    // 20 parameters: 3 -> 3 -> 2 gives 9 + 3 + 6 + 2.
    let spec = ModelSpec::new(3, vec![3], 2).unwrap();
    let params = init_params(&spec, seed).unwrap();
    assert_eq!(spec.param_count(), 20);
    let ds = make_blobs(10, 2, 3, 0.4, seed + 1).unwrap();
    let y = one_hot(&ds.clean, 2).unwrap();
    let index = build_neighbor_index(&ds.features, 8).unwrap();
    let mut r = rng(seed + 2);
    let sets = generate_q_sets(&y, &index, 3, 3, &mut r).unwrap();
    (spec, params, ds.features, y, sets)
}

fn blended_config(order: GradOrder, alpha: f64, beta: f64) -> TrainConfig {
    TrainConfig {
        alpha,
        beta,
        q: 3,
        order,
        weighting: WeightingMode::Rectified,
        c_shape: 5.0,
        ..TrainConfig::desk()
    }
}

#[test]
fn first_order_gradient_tracks_the_composed_objective() {
    // The first-order mode drops the Hessian term, so it is compared at a
    // loose tolerance against the exact derivative; with a small beta the
    // dropped term is second-order small.
    let (spec, params, x, y, sets) = composed_setup(31);
    let beta = 0.01;
    let cfg = blended_config(GradOrder::First, 0.5, beta);
    let analytic = objective_grad(&params, &x, &y, &sets, &cfg).unwrap();
    let rect = cfg.rect().unwrap();
    let fd = finite_diff(
        |mats| composed_objective(&spec, mats, &x, &y, &sets, 0.5, beta, &rect),
        params.mats(),
        1e-6,
    )
    .unwrap();
    assert!((analytic.total - fd.loss).abs() < 1e-10);
    let e = rel_err(&analytic.grads, &fd.grads);
    assert!(e < 1e-3, "first-order relative error {}", e);
}

#[test]
fn second_order_gradient_matches_the_composed_objective_exactly() {
    let (spec, params, x, y, sets) = composed_setup(32);
    let beta = 0.3;
    let cfg = blended_config(GradOrder::Second, 0.5, beta);
    let analytic = objective_grad(&params, &x, &y, &sets, &cfg).unwrap();
    let rect = cfg.rect().unwrap();
    let fd = finite_diff(
        |mats| composed_objective(&spec, mats, &x, &y, &sets, 0.5, beta, &rect),
        params.mats(),
        1e-6,
    )
    .unwrap();
    assert!((analytic.total - fd.loss).abs() < 1e-10);
    let e = rel_err(&analytic.grads, &fd.grads);
    assert!(e < 1e-4, "second-order relative error {}", e);
}

#[test]
fn second_order_beats_first_order_at_large_beta() {
    let (spec, params, x, y, sets) = composed_setup(33);
    let beta = 0.5;
    let rect = RectConfig::new(5.0, WeightingMode::Rectified).unwrap();
    let fd = finite_diff(
        |mats| composed_objective(&spec, mats, &x, &y, &sets, 0.5, beta, &rect),
        params.mats(),
        1e-6,
    )
    .unwrap();

    let first = objective_grad(&params, &x, &y, &sets, &blended_config(GradOrder::First, 0.5, beta)).unwrap();
    let second = objective_grad(&params, &x, &y, &sets, &blended_config(GradOrder::Second, 0.5, beta)).unwrap();
    let e1 = rel_err(&first.grads, &fd.grads);
    let e2 = rel_err(&second.grads, &fd.grads);
    assert!(e2 < 1e-4, "second-order error {}", e2);
    assert!(e1 > 10.0 * e2, "expected the Hessian term to matter: first {} vs second {}", e1, e2);
}

#[test]
fn both_orders_coincide_when_beta_is_zero() {
    let (_, params, x, y, sets) = composed_setup(34);
    let first = objective_grad(&params, &x, &y, &sets, &blended_config(GradOrder::First, 0.5, 0.0)).unwrap();
    let second = objective_grad(&params, &x, &y, &sets, &blended_config(GradOrder::Second, 0.5, 0.0)).unwrap();
    assert_eq!(first.total, second.total);
    let e = rel_err(&first.grads, &second.grads);
    assert!(e < 1e-12, "orders should coincide at beta = 0, error {}", e);
}
