//! Central finite-difference checks of every tape operation and of the
//! complete model loss.

use std::sync::Arc;

use bscnets::autodiff::{Tape, Tensor};
use bscnets::features::{centrality_features, standardize_columns};
use bscnets::graph::Graph;
use bscnets::linalg::Csr;
use bscnets::model::{Model, ModelConfig, ModelParameters, RelationKind, Variant};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-4;
const TOL_SOFTMAX: f64 = 1e-3;

fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Keep entries away from 0 so ReLU kinks stay outside the FD stencil.
    Array2::from_shape_fn((rows, cols), |_| {
        let x: f64 = rng.random_range(0.05..1.0);
        if rng.random::<bool>() {
            x
        } else {
            -x
        }
    })
}

fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|x| x * x).sum().sqrt();
    let scale = a.mapv(|x| x * x).sum().sqrt().max(b.mapv(|x| x * x).sum().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Reduces an arbitrary output to a scalar with distinct weight per entry.
fn reduce(tape: &mut Tape, out: Tensor) -> Tensor {
    let (r, c) = out.shape();
    let target = tape.constant(random(r, c, 999));
    let d = tape.sub(out, target).unwrap();
    let sq = tape.square(d);
    tape.sum(sq)
}

/// Compares tape gradients with central differences for each input.
fn check<F>(inputs: &[Array2<f64>], tol: f64, build: F)
where
    F: Fn(&mut Tape, &[Tensor]) -> Tensor,
{
    let eval = |xs: &[Array2<f64>]| -> f64 {
        let mut tape = Tape::new();
        let ts: Vec<Tensor> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = build(&mut tape, &ts);
        let loss = reduce(&mut tape, out);
        tape.scalar(loss)
    };
    let mut tape = Tape::new();
    let ts: Vec<Tensor> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = build(&mut tape, &ts);
    let loss = reduce(&mut tape, out);
    tape.backward(loss).unwrap();
    for (k, t) in ts.iter().enumerate() {
        let analytic = tape.grad(*t).cloned().unwrap_or_else(|| Array2::zeros(t.shape()));
        let mut numeric = Array2::zeros(t.shape());
        for idx in ndarray::indices(t.shape()) {
            let mut xs = inputs.to_vec();
            xs[k][idx] += STEP;
            let up = eval(&xs);
            xs[k][idx] -= 2.0 * STEP;
            let down = eval(&xs);
            numeric[idx] = (up - down) / (2.0 * STEP);
        }
        let e = rel_err(&analytic, &numeric);
        assert!(
            e <= tol,
            "input {k}: relative error {e:e}\nanalytic {analytic:?}\nnumeric {numeric:?}"
        );
    }
}

#[test]
fn matmul_and_transposed_matmul() {
    check(&[random(3, 4, 1), random(4, 2, 2)], TOL, |t, x| {
        t.matmul(x[0], x[1]).unwrap()
    });
    check(&[random(3, 4, 3), random(5, 4, 4)], TOL, |t, x| {
        t.matmul_nt(x[0], x[1]).unwrap()
    });
}

#[test]
fn elementwise_ops() {
    check(&[random(3, 3, 5), random(3, 3, 6)], TOL, |t, x| {
        t.add(x[0], x[1]).unwrap()
    });
    check(&[random(3, 3, 7), random(3, 3, 8)], TOL, |t, x| {
        t.sub(x[0], x[1]).unwrap()
    });
    check(&[random(2, 5, 9)], TOL, |t, x| t.square(x[0]));
    check(&[random(4, 3, 10)], TOL, |t, x| t.relu(x[0]));
    check(&[random(3, 2, 11)], TOL, |t, x| t.scale(x[0], -1.7));
    check(&[random(3, 2, 12)], TOL, |t, x| t.shift(x[0], 0.4));
    check(&[random(3, 4, 13)], TOL, |t, x| t.transpose(x[0]));
}

#[test]
fn row_softmax() {
    check(&[random(3, 5, 14)], TOL_SOFTMAX, |t, x| t.row_softmax(x[0]));
}

#[test]
fn concatenation() {
    check(&[random(3, 2, 15), random(3, 4, 16)], TOL, |t, x| {
        t.concat_cols(&[x[0], x[1]]).unwrap()
    });
    check(&[random(2, 3, 17), random(4, 3, 18)], TOL, |t, x| {
        t.concat_rows(&[x[0], x[1]]).unwrap()
    });
}

#[test]
fn dropout_with_fixed_mask() {
    check(&[random(4, 4, 19)], TOL, |t, x| {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        t.dropout(x[0], 0.5, &mut rng).unwrap()
    });
}

#[test]
fn reductions() {
    check(&[random(3, 4, 20)], TOL, |t, x| t.sum(x[0]));
    check(&[random(3, 4, 21)], TOL, |t, x| t.mean(x[0]));
}

#[test]
fn fermi_dirac_and_bce() {
    check(&[random(5, 1, 22)], TOL, |t, x| t.fermi_dirac(x[0], 0.5, 0.8).unwrap());
    check(&[random(6, 1, 23)], TOL, |t, x| {
        t.bce_with_logistic(x[0], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap()
    });
}

#[test]
fn gathering_and_bias() {
    check(&[random(4, 3, 24)], TOL, |t, x| {
        t.gather_rows(x[0], &[2, 0, 2, 3]).unwrap()
    });
    check(&[random(4, 3, 25), random(1, 3, 26)], TOL, |t, x| {
        t.add_row_bias(x[0], x[1]).unwrap()
    });
}

#[test]
fn sparse_product() {
    let mut dense = random(4, 4, 27);
    dense.mapv_inplace(|v| if v.abs() < 0.5 { 0.0 } else { v });
    let sparse = Arc::new(Csr::from_dense(&dense.view()));
    check(&[random(4, 3, 28)], TOL, move |t, x| {
        t.spmm(Arc::clone(&sparse), x[0]).unwrap()
    });
}

#[test]
fn block_relu_softmax() {
    let a = random(3, 3, 29);
    let b = random(2, 2, 30);
    check(&[random(3, 2, 31)], TOL_SOFTMAX, move |t, x| {
        t.block_relu_softmax(&a, x[0], &b).unwrap()
    });
}

#[test]
fn matmul_square_composite() {
    // (A·B)² checked at the tighter tolerance.
    check(&[random(3, 4, 32), random(4, 3, 33)], TOL, |t, x| {
        let p = t.matmul(x[0], x[1]).unwrap();
        t.square(p)
    });
}

fn small_complex() -> Graph {
    // Two filled triangles sharing an edge, a pendant path and a square.
    let g = Graph::new(
        8,
        [
            (0, 1),
            (0, 2),
            (1, 2),
            (1, 3),
            (2, 3),
            (3, 4),
            (4, 5),
            (5, 6),
            (6, 7),
            (4, 7),
        ],
    )
    .unwrap();
    let x = standardize_columns(&centrality_features(&g));
    g.with_features(x).unwrap()
}

fn model_loss(model: &Model, params: &ModelParameters, pos: &[(usize, usize)], neg: &[(usize, usize)]) -> f64 {
    let mut tape = Tape::new();
    let fp = model.forward(&mut tape, params, true, None).unwrap();
    let loss = model.loss(&mut tape, &fp, pos, neg).unwrap();
    tape.scalar(loss)
}

fn check_model(config: ModelConfig) {
    let g = small_complex();
    let model = Model::build(&g, g.features().unwrap().clone(), config, 0).unwrap();
    let mut params = model.init_parameters(3);
    // A positive MLP bias keeps every pair's distance off the ReLU kink.
    params.insert(bscnets::model::MLP_B, Array2::from_elem((1, 1), 0.5));
    let pos = [(0, 1), (1, 3), (4, 5), (6, 7)];
    let neg = [(0, 7), (2, 5), (1, 6), (3, 7)];

    let mut tape = Tape::new();
    let fp = model.forward(&mut tape, &params, true, None).unwrap();
    let loss = model.loss(&mut tape, &fp, &pos, &neg).unwrap();
    tape.backward(loss).unwrap();

    for (name, &t) in &fp.params {
        let analytic = tape.grad(t).cloned().unwrap_or_else(|| Array2::zeros(t.shape()));
        let mut numeric = Array2::zeros(t.shape());
        for idx in ndarray::indices(t.shape()) {
            let mut p = params.clone();
            p.tensors.get_mut(name).unwrap()[idx] += STEP;
            let up = model_loss(&model, &p, &pos, &neg);
            p.tensors.get_mut(name).unwrap()[idx] -= 2.0 * STEP;
            let down = model_loss(&model, &p, &pos, &neg);
            numeric[idx] = (up - down) / (2.0 * STEP);
        }
        let e = rel_err(&analytic, &numeric);
        assert!(e <= TOL_SOFTMAX, "{name}: relative error {e:e}");
    }
}

fn small_config(variant: Variant, relation: RelationKind) -> ModelConfig {
    ModelConfig {
        nhid1: 4,
        nhid2: 6,
        nhid3: 4,
        d_c: 3,
        variant,
        relation,
        ..ModelConfig::default()
    }
}

#[test]
fn full_model_loss_gradient() {
    check_model(small_config(Variant::Full, RelationKind::Embedded));
}

#[test]
fn ablation_variant_gradients() {
    check_model(small_config(Variant::NoRandomWalk, RelationKind::Embedded));
    check_model(small_config(Variant::NoRelation, RelationKind::Embedded));
    check_model(small_config(Variant::OnlyL1, RelationKind::Embedded));
    check_model(small_config(Variant::Full, RelationKind::InnerProduct));
}
