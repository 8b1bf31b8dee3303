//! Finite-difference gradient checks for every tape operator and for the
//! composed model losses. The numeric oracle never touches the backward
//! pass it validates: it re-runs the forward computation at perturbed
//! inputs and differences the scalar output.

mod common;

use common::{assert_grads_match, finite_diff_grad, FD_STEP};
use mme_core::autodiff::{Tape, TensorId};
use mme_core::model::{init_model, HeadKind, ModelDims};
use mme_core::objectives::{cross_entropy_loss, LabeledBatch};
use mme_core::rng::Rng;

/// Check one scalar-valued graph builder against finite differences.
/// `build` receives the tape and the leaf id and returns the loss id.
fn check_op(
    name: &str,
    x: &[f64],
    shape: &[usize],
    build: impl Fn(&mut Tape, TensorId) -> TensorId,
) {
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.to_vec(), shape.to_vec()).unwrap();
    let loss = build(&mut tape, leaf);
    tape.backward(loss).unwrap();
    let analytic = tape.grad(leaf).unwrap().to_vec();

    let numeric = finite_diff_grad(
        |probe| {
            let mut t = Tape::new();
            let leaf = t.leaf(probe.to_vec(), shape.to_vec()).unwrap();
            let loss = build(&mut t, leaf);
            t.value(loss)
        },
        x,
        FD_STEP,
    );
    assert_grads_match(&analytic, &numeric, 1e-5, name);
}

fn random_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

#[test]
fn add_gradient() {
    let mut rng = Rng::seed_from(1);
    for i in 0..10 {
        let x = random_vec(&mut rng, 6);
        let other = random_vec(&mut rng, 6);
        check_op(&format!("add[{i}]"), &x, &[6], |t, leaf| {
            let o = t.leaf(other.clone(), vec![6]).unwrap();
            let s = t.add(leaf, o).unwrap();
            let sq = t.mul(s, s).unwrap();
            t.reduce_sum(sq).unwrap()
        });
    }
}

#[test]
fn mul_gradient() {
    let mut rng = Rng::seed_from(2);
    for i in 0..10 {
        let x = random_vec(&mut rng, 5);
        let other = random_vec(&mut rng, 5);
        check_op(&format!("mul[{i}]"), &x, &[5], |t, leaf| {
            let o = t.leaf(other.clone(), vec![5]).unwrap();
            let p = t.mul(leaf, o).unwrap();
            t.reduce_sum(p).unwrap()
        });
    }
}

#[test]
fn relu_gradient() {
    let mut rng = Rng::seed_from(3);
    for i in 0..10 {
        // Keep inputs away from the kink at 0.
        let x: Vec<f64> = random_vec(&mut rng, 8)
            .into_iter()
            .map(|v| if v.abs() < 1e-3 { v + 0.1 } else { v })
            .collect();
        check_op(&format!("relu[{i}]"), &x, &[8], |t, leaf| {
            let r = t.relu(leaf).unwrap();
            let sq = t.mul(r, r).unwrap();
            t.reduce_sum(sq).unwrap()
        });
    }
}

#[test]
fn log_gradient() {
    let mut rng = Rng::seed_from(4);
    for i in 0..10 {
        let x: Vec<f64> = (0..6).map(|_| rng.uniform() + 0.1).collect();
        check_op(&format!("log[{i}]"), &x, &[6], |t, leaf| {
            let l = t.log(leaf).unwrap();
            t.reduce_sum(l).unwrap()
        });
    }
}

#[test]
fn sigmoid_gradient() {
    let mut rng = Rng::seed_from(5);
    for i in 0..10 {
        let x = random_vec(&mut rng, 7);
        check_op(&format!("sigmoid[{i}]"), &x, &[7], |t, leaf| {
            let s = t.sigmoid(leaf).unwrap();
            let sq = t.mul(s, s).unwrap();
            t.reduce_sum(sq).unwrap()
        });
    }
}

#[test]
fn scalar_mul_and_add_const_gradient() {
    let mut rng = Rng::seed_from(6);
    for i in 0..10 {
        let x = random_vec(&mut rng, 4);
        check_op(&format!("scalar_mul[{i}]"), &x, &[4], |t, leaf| {
            let y = t.scalar_mul(leaf, -2.5).unwrap();
            let z = t.add_const(y, 0.75).unwrap();
            let sq = t.mul(z, z).unwrap();
            t.reduce_sum(sq).unwrap()
        });
    }
}

#[test]
fn reduce_mean_gradient() {
    let mut rng = Rng::seed_from(7);
    for i in 0..10 {
        let x = random_vec(&mut rng, 9);
        check_op(&format!("reduce_mean[{i}]"), &x, &[9], |t, leaf| {
            let sq = t.mul(leaf, leaf).unwrap();
            t.reduce_mean(sq).unwrap()
        });
    }
}

#[test]
fn matmul_gradient_both_sides() {
    let mut rng = Rng::seed_from(8);
    for i in 0..10 {
        let a = random_vec(&mut rng, 9);
        let b = random_vec(&mut rng, 9);
        // Gradient w.r.t. the left operand.
        check_op(&format!("matmul_lhs[{i}]"), &a, &[3, 3], |t, leaf| {
            let bt = t.leaf(b.clone(), vec![3, 3]).unwrap();
            let prod = t.matmul(leaf, bt).unwrap();
            t.reduce_sum(prod).unwrap()
        });
        // Gradient w.r.t. the right operand.
        check_op(&format!("matmul_rhs[{i}]"), &b, &[3, 3], |t, leaf| {
            let at = t.leaf(a.clone(), vec![3, 3]).unwrap();
            let prod = t.matmul(at, leaf).unwrap();
            t.reduce_sum(prod).unwrap()
        });
    }
}

#[test]
fn matmul_transpose_b_gradient() {
    let mut rng = Rng::seed_from(9);
    for i in 0..10 {
        let a = random_vec(&mut rng, 8);
        let b = random_vec(&mut rng, 12);
        check_op(&format!("matmul_tb_lhs[{i}]"), &a, &[2, 4], |t, leaf| {
            let bt = t.leaf(b.clone(), vec![3, 4]).unwrap();
            let prod = t.matmul_transpose_b(leaf, bt).unwrap();
            let sq = t.mul(prod, prod).unwrap();
            t.reduce_sum(sq).unwrap()
        });
        check_op(&format!("matmul_tb_rhs[{i}]"), &b, &[3, 4], |t, leaf| {
            let at = t.leaf(a.clone(), vec![2, 4]).unwrap();
            let prod = t.matmul_transpose_b(at, leaf).unwrap();
            let sq = t.mul(prod, prod).unwrap();
            t.reduce_sum(sq).unwrap()
        });
    }
}

#[test]
fn add_bias_gradient() {
    let mut rng = Rng::seed_from(10);
    for i in 0..10 {
        let x = random_vec(&mut rng, 6);
        let bias = random_vec(&mut rng, 3);
        check_op(&format!("add_bias_x[{i}]"), &x, &[2, 3], |t, leaf| {
            let b = t.leaf(bias.clone(), vec![3]).unwrap();
            let y = t.add_bias(leaf, b).unwrap();
            let sq = t.mul(y, y).unwrap();
            t.reduce_sum(sq).unwrap()
        });
        check_op(&format!("add_bias_b[{i}]"), &bias, &[3], |t, leaf| {
            let xt = t.leaf(x.clone(), vec![2, 3]).unwrap();
            let y = t.add_bias(xt, leaf).unwrap();
            let sq = t.mul(y, y).unwrap();
            t.reduce_sum(sq).unwrap()
        });
    }
}

#[test]
fn l2_normalize_jacobian_at_spec_point_and_random() {
    // The 3-4-5 cousin: [1, 2, 2] has norm 3.
    check_op("l2_normalize[1,2,2]", &[1.0, 2.0, 2.0], &[3], |t, leaf| {
        let n = t.l2_normalize(leaf).unwrap();
        let w = t.leaf(vec![0.3, -1.1, 0.7], vec![3]).unwrap();
        let proj = t.mul(n, w).unwrap();
        t.reduce_sum(proj).unwrap()
    });
    let mut rng = Rng::seed_from(11);
    for i in 0..10 {
        let x: Vec<f64> = random_vec(&mut rng, 4).iter().map(|v| v + 0.5).collect();
        let w = random_vec(&mut rng, 4);
        check_op(&format!("l2_normalize[{i}]"), &x, &[4], |t, leaf| {
            let n = t.l2_normalize(leaf).unwrap();
            let wt = t.leaf(w.clone(), vec![4]).unwrap();
            let proj = t.mul(n, wt).unwrap();
            t.reduce_sum(proj).unwrap()
        });
    }
}

#[test]
fn softmax_gradient_at_random_logits() {
    let mut rng = Rng::seed_from(12);
    for i in 0..10 {
        let z = random_vec(&mut rng, 5);
        let w = random_vec(&mut rng, 5);
        check_op(&format!("softmax[{i}]"), &z, &[5], |t, leaf| {
            let p = t.softmax(leaf).unwrap();
            let wt = t.leaf(w.clone(), vec![5]).unwrap();
            let proj = t.mul(p, wt).unwrap();
            t.reduce_sum(proj).unwrap()
        });
    }
}

#[test]
fn grad_reverse_gradient_is_scaled_negation() {
    let mut rng = Rng::seed_from(13);
    for i in 0..10 {
        let x = random_vec(&mut rng, 5);
        let scale = 0.1 + rng.uniform();
        // Finite differences see only the identity forward, so compare the
        // reversed analytic gradient against −scale × the numeric one.
        let mut tape = Tape::new();
        let leaf = tape.leaf(x.clone(), vec![5]).unwrap();
        let r = tape.grad_reverse(leaf, scale).unwrap();
        let sq = tape.mul(r, r).unwrap();
        let loss = tape.reduce_sum(sq).unwrap();
        tape.backward(loss).unwrap();
        let analytic = tape.grad(leaf).unwrap().to_vec();

        let numeric = finite_diff_grad(
            |probe| {
                let mut t = Tape::new();
                let leaf = t.leaf(probe.to_vec(), vec![5]).unwrap();
                let sq = t.mul(leaf, leaf).unwrap();
                let s = t.reduce_sum(sq).unwrap();
                t.value(s)
            },
            &x,
            FD_STEP,
        );
        let expected: Vec<f64> = numeric.iter().map(|g| -scale * g).collect();
        assert_grads_match(&analytic, &expected, 1e-5, &format!("grad_reverse[{i}]"));
    }
}

#[test]
fn two_layer_mlp_loss_gradient_on_every_weight() {
    let dims = ModelDims {
        input_dim: 3,
        hidden: vec![5],
        feat_dim: 4,
        num_classes: 3,
    };
    let mut rng = Rng::seed_from(14);
    let model = init_model(99, &dims, HeadKind::Cosine, 0.05);
    let batch = LabeledBatch {
        x: (0..4 * 3).map(|_| rng.normal()).collect(),
        y: vec![0, 2, 1, 0],
        n: 4,
        n_source: 2,
    };

    // Analytic gradients for every parameter buffer.
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape).unwrap();
    let x = tape.leaf(batch.x.clone(), vec![4, 3]).unwrap();
    let probs = bound.probs(&mut tape, x).unwrap();
    let loss = cross_entropy_loss(&mut tape, probs, &batch.y).unwrap();
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = bound
        .param_ids
        .iter()
        .map(|&id| tape.grad(id).unwrap().to_vec())
        .collect();

    // Numeric oracle: perturb one buffer at a time through the public
    // model parameters and re-run the whole forward pass.
    let buffer_count = analytic.len();
    for buf_idx in 0..buffer_count {
        let mut probe_model = model.clone();
        let base = probe_model.param_buffers_mut()[buf_idx].clone();
        let numeric = finite_diff_grad(
            |values| {
                let mut m = model.clone();
                *m.param_buffers_mut()[buf_idx] = values.to_vec();
                let mut t = Tape::new();
                let b = m.bind(&mut t).unwrap();
                let x = t.leaf(batch.x.clone(), vec![4, 3]).unwrap();
                let probs = b.probs(&mut t, x).unwrap();
                let loss = cross_entropy_loss(&mut t, probs, &batch.y).unwrap();
                t.value(loss)
            },
            &base,
            FD_STEP,
        );
        assert_grads_match(
            &analytic[buf_idx],
            &numeric,
            1e-5,
            &format!("mlp buffer {buf_idx}"),
        );
    }
}

#[test]
fn extractor_first_layer_gradient_matches_finite_differences() {
    let dims = ModelDims {
        input_dim: 2,
        hidden: vec![4],
        feat_dim: 3,
        num_classes: 2,
    };
    let model = init_model(7, &dims, HeadKind::Cosine, 0.05);
    let mut rng = Rng::seed_from(15);
    let x: Vec<f64> = (0..3 * 2).map(|_| rng.normal()).collect();

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape).unwrap();
    let input = tape.leaf(x.clone(), vec![3, 2]).unwrap();
    let feats = bound.features(&mut tape, input).unwrap();
    let loss = tape.reduce_sum(feats).unwrap();
    tape.backward(loss).unwrap();
    let analytic = tape.grad(bound.param_ids[0]).unwrap().to_vec();

    let base = model.extractor.layers[0].weight.clone();
    let numeric = finite_diff_grad(
        |values| {
            let mut m = model.clone();
            m.extractor.layers[0].weight = values.to_vec();
            let mut t = Tape::new();
            let b = m.bind(&mut t).unwrap();
            let input = t.leaf(x.clone(), vec![3, 2]).unwrap();
            let feats = b.features(&mut t, input).unwrap();
            let loss = t.reduce_sum(feats).unwrap();
            t.value(loss)
        },
        &base,
        FD_STEP,
    );
    assert_grads_match(&analytic, &numeric, 1e-5, "first-layer weight");
}
