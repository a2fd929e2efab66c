//! Finite-difference checks: every primitive op, the composed MLP losses,
//! and the generator objective, each against central differences.

mod common;

use common::{assert_grad_close, central_diff};
use negrep_core::autodiff::{seeded_rng, Array, Graph};
use negrep_core::classifier::ClassifierParams;
use negrep_core::generator::{build_generator_loss, standard_normal, GeneratorParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-3;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Check one op composed into a scalar: loss = weighted sum of op output.
/// `build` maps the parameter leaf node to the op's output node.
fn check_unary_op(
    name: &str,
    shape: Vec<usize>,
    lo: f64,
    hi: f64,
    build: &dyn Fn(&mut Graph, negrep_core::autodiff::NodeId) -> negrep_core::autodiff::NodeId,
) {
    let mut rng = seeded_rng(0xC0FFEE ^ name.len() as u64);
    for _ in 0..20 {
        let n: usize = shape.iter().product();
        let at = rand_vec(&mut rng, n, lo, hi);
        let weights = rand_vec(&mut rng, 1_000, -1.0, 1.0); // more than enough
        let mut f = |x: &[f64]| -> f64 {
            let mut g = Graph::new();
            let p = g.parameter(Array::new(shape.clone(), x.to_vec()).unwrap());
            let out = build(&mut g, p);
            // dot with fixed weights, then sum, for a nondegenerate seed
            let w = g.constant(
                Array::new(
                    g.value(out).shape().to_vec(),
                    weights[..g.value(out).len()].to_vec(),
                )
                .unwrap(),
            );
            let prod = g.mul(out, w).unwrap();
            let loss = g.sum(prod).unwrap();
            g.value(loss).scalar_value()
        };
        let fd = central_diff(&mut f, &at, EPS);
        let mut g = Graph::new();
        let p = g.parameter(Array::new(shape.clone(), at.clone()).unwrap());
        let out = build(&mut g, p);
        let w = g.constant(
            Array::new(
                g.value(out).shape().to_vec(),
                weights[..g.value(out).len()].to_vec(),
            )
            .unwrap(),
        );
        let prod = g.mul(out, w).unwrap();
        let loss = g.sum(prod).unwrap();
        g.backward(loss).unwrap();
        assert_grad_close(g.grad(p).unwrap(), &fd, TOL, name);
    }
}

#[test]
fn primitive_op_gradients_match_finite_differences() {
    check_unary_op("relu", vec![3, 4], 0.2, 2.0, &|g, p| g.relu(p).unwrap());
    check_unary_op("exp", vec![2, 3], -1.0, 1.0, &|g, p| g.exp(p).unwrap());
    check_unary_op("log", vec![2, 3], 0.5, 3.0, &|g, p| g.log(p).unwrap());
    check_unary_op("scale", vec![5], -2.0, 2.0, &|g, p| g.scale(p, -1.7).unwrap());
    check_unary_op("add_const", vec![5], -2.0, 2.0, &|g, p| {
        g.add_const(p, 0.3).unwrap()
    });
    check_unary_op("sum", vec![4], -2.0, 2.0, &|g, p| g.sum(p).unwrap());
    check_unary_op("mean", vec![6], -2.0, 2.0, &|g, p| g.mean(p).unwrap());
    check_unary_op("matmul_lhs", vec![3, 4], -1.0, 1.0, &|g, p| {
        let other = g.constant(
            Array::new(vec![4, 2], (0..8).map(|i| 0.3 * i as f64 - 1.0).collect()).unwrap(),
        );
        g.matmul(p, other).unwrap()
    });
    check_unary_op("matmul_rhs", vec![4, 2], -1.0, 1.0, &|g, p| {
        let other = g.constant(
            Array::new(vec![3, 4], (0..12).map(|i| 0.2 * i as f64 - 1.0).collect()).unwrap(),
        );
        g.matmul(other, p).unwrap()
    });
    check_unary_op("add", vec![2, 3], -1.0, 1.0, &|g, p| {
        let other = g.constant(Array::new(vec![2, 3], vec![0.5; 6]).unwrap());
        g.add(p, other).unwrap()
    });
    check_unary_op("sub", vec![2, 3], -1.0, 1.0, &|g, p| {
        let other = g.constant(Array::new(vec![2, 3], vec![0.5; 6]).unwrap());
        g.sub(other, p).unwrap()
    });
    check_unary_op("mul", vec![2, 3], -1.0, 1.0, &|g, p| {
        let other = g.constant(
            Array::new(vec![2, 3], (0..6).map(|i| 0.4 * i as f64 - 1.0).collect()).unwrap(),
        );
        g.mul(p, other).unwrap()
    });
    check_unary_op("mul_self", vec![4], -1.5, 1.5, &|g, p| g.mul(p, p).unwrap());
    check_unary_op("add_row_bias", vec![3], -1.0, 1.0, &|g, p| {
        let m = g.constant(
            Array::new(vec![2, 3], (0..6).map(|i| 0.3 * i as f64).collect()).unwrap(),
        );
        g.add_row(m, p).unwrap()
    });
    check_unary_op("add_row_matrix", vec![2, 3], -1.0, 1.0, &|g, p| {
        let b = g.constant(Array::new(vec![3], vec![0.1, -0.2, 0.3]).unwrap());
        g.add_row(p, b).unwrap()
    });
    check_unary_op("concat_rows", vec![2, 3], -1.0, 1.0, &|g, p| {
        let other = g.constant(Array::new(vec![1, 3], vec![0.7, -0.3, 0.1]).unwrap());
        g.concat_rows(p, other).unwrap()
    });
    check_unary_op("concat_cols", vec![2, 2], -1.0, 1.0, &|g, p| {
        let other = g.constant(Array::new(vec![2, 3], vec![0.2; 6]).unwrap());
        g.concat_cols(p, other).unwrap()
    });
    check_unary_op("gaussian_sample_mu", vec![2, 3], -1.0, 1.0, &|g, p| {
        let lv = g.constant(Array::new(vec![2, 3], vec![-0.4; 6]).unwrap());
        g.gaussian_sample(p, lv, &[0.3, -0.8, 1.2, 0.1, -0.5, 0.9]).unwrap()
    });
    check_unary_op("gaussian_sample_logvar", vec![2, 3], -1.0, 1.0, &|g, p| {
        let mu = g.constant(Array::new(vec![2, 3], vec![0.2; 6]).unwrap());
        g.gaussian_sample(mu, p, &[0.3, -0.8, 1.2, 0.1, -0.5, 0.9]).unwrap()
    });
}

#[test]
fn softmax_cross_entropy_gradient_matches_finite_differences() {
    let mut rng = seeded_rng(4121);
    for _ in 0..20 {
        let (n, c) = (3, 4);
        let at = rand_vec(&mut rng, n * c, -2.0, 2.0);
        let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let mut f = |x: &[f64]| {
            let mut g = Graph::new();
            let p = g.parameter(Array::new(vec![n, c], x.to_vec()).unwrap());
            let loss = g.softmax_cross_entropy(p, &targets, None).unwrap();
            g.value(loss).scalar_value()
        };
        let fd = central_diff(&mut f, &at, EPS);
        let mut g = Graph::new();
        let p = g.parameter(Array::new(vec![n, c], at.clone()).unwrap());
        let loss = g.softmax_cross_entropy(p, &targets, None).unwrap();
        g.backward(loss).unwrap();
        assert_grad_close(g.grad(p).unwrap(), &fd, TOL, "softmax_cross_entropy");
    }
}

#[test]
fn distillation_gradient_matches_finite_differences() {
    let mut rng = seeded_rng(999);
    for _ in 0..20 {
        let (n, c) = (3, 5);
        let at = rand_vec(&mut rng, n * c, -2.0, 2.0);
        let teacher = Array::new(vec![n, c], rand_vec(&mut rng, n * c, -2.0, 2.0)).unwrap();
        let classes = vec![0, 2, 3];
        let t = 2.0;
        let mut f = |x: &[f64]| {
            let mut g = Graph::new();
            let p = g.parameter(Array::new(vec![n, c], x.to_vec()).unwrap());
            let loss = g.distillation(p, &teacher, &classes, t, None).unwrap();
            g.value(loss).scalar_value()
        };
        let fd = central_diff(&mut f, &at, EPS);
        let mut g = Graph::new();
        let p = g.parameter(Array::new(vec![n, c], at.clone()).unwrap());
        let loss = g.distillation(p, &teacher, &classes, t, None).unwrap();
        g.backward(loss).unwrap();
        assert_grad_close(g.grad(p).unwrap(), &fd, TOL, "distillation");
    }
}

/// Flatten every trainable tensor of a classifier into one vector.
pub fn flatten_classifier(cls: &ClassifierParams) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in cls.pre.iter().chain(&cls.post) {
        out.extend_from_slice(layer.w.values());
        out.extend_from_slice(layer.b.values());
    }
    out.extend_from_slice(cls.head.w.values());
    out.extend_from_slice(cls.head.b.values());
    out
}

/// Write a flat vector back into the classifier tensors.
pub fn unflatten_classifier(cls: &mut ClassifierParams, flat: &[f64]) {
    let mut cursor = 0;
    let mut take = |len: usize| {
        let s = flat[cursor..cursor + len].to_vec();
        cursor += len;
        s
    };
    let n_pre = cls.pre.len();
    let n_post = cls.post.len();
    for i in 0..n_pre {
        let wlen = cls.pre[i].w.len();
        let blen = cls.pre[i].b.len();
        let shape_w = cls.pre[i].w.shape().to_vec();
        cls.pre[i].w = Array::new(shape_w, take(wlen)).unwrap();
        cls.pre[i].b = Array::new(vec![blen], take(blen)).unwrap();
    }
    for i in 0..n_post {
        let wlen = cls.post[i].w.len();
        let blen = cls.post[i].b.len();
        let shape_w = cls.post[i].w.shape().to_vec();
        cls.post[i].w = Array::new(shape_w, take(wlen)).unwrap();
        cls.post[i].b = Array::new(vec![blen], take(blen)).unwrap();
    }
    let wlen = cls.head.w.len();
    let blen = cls.head.b.len();
    let shape_w = cls.head.w.shape().to_vec();
    cls.head.w = Array::new(shape_w, take(wlen)).unwrap();
    cls.head.b = Array::new(vec![blen], take(blen)).unwrap();
    assert_eq!(cursor, flat.len());
}

/// Analytic gradient of the plain CE loss for the full classifier, flat.
fn classifier_ce_grad(cls: &ClassifierParams, batch: &Array, labels: &[usize]) -> (f64, Vec<f64>) {
    let mut g = Graph::new();
    let x = g.constant(batch.clone());
    let (pre_bound, latent) = cls.graph_latent(&mut g, x, true).unwrap();
    let (head_bound, logits) = cls.graph_head(&mut g, latent, true).unwrap();
    let loss = g.softmax_cross_entropy(logits, labels, None).unwrap();
    g.backward(loss).unwrap();
    let mut grad = Vec::new();
    for b in pre_bound.iter().chain(&head_bound) {
        grad.extend_from_slice(g.grad(b.node).unwrap());
    }
    (g.value(loss).scalar_value(), grad)
}

#[test]
fn three_layer_mlp_ce_gradient_matches_finite_differences() {
    let mut rng = seeded_rng(31337);
    let mut accepted = 0;
    let mut attempt = 0;
    while accepted < 10 {
        attempt += 1;
        assert!(attempt < 200, "could not find enough kink-free instances");
        let cls = ClassifierParams::init(5, &[6, 4], &[], 3, 1000 + attempt).unwrap();
        let batch = Array::new(vec![4, 5], rand_vec(&mut rng, 20, -1.5, 1.5)).unwrap();
        let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
        if common::classifier_relu_margin(&cls, &batch) < common::KINK_MARGIN {
            continue;
        }
        accepted += 1;
        let at = flatten_classifier(&cls);
        let mut probe = cls.clone();
        let mut f = |x: &[f64]| {
            unflatten_classifier(&mut probe, x);
            let mut g = Graph::new();
            let xb = g.constant(batch.clone());
            let (_, latent) = probe.graph_latent(&mut g, xb, false).unwrap();
            let (_, logits) = probe.graph_head(&mut g, latent, false).unwrap();
            let loss = g.softmax_cross_entropy(logits, &labels, None).unwrap();
            g.value(loss).scalar_value()
        };
        let fd = central_diff(&mut f, &at, EPS);
        let (_, analytic) = classifier_ce_grad(&cls, &batch, &labels);
        assert_grad_close(&analytic, &fd, TOL, "mlp_ce");
    }
}

#[test]
fn generator_total_loss_gradient_matches_finite_differences() {
    let mut rng = seeded_rng(777);
    let mut accepted = 0;
    let mut attempt = 0;
    while accepted < 5 {
        attempt += 1;
        assert!(attempt < 200, "could not find enough kink-free instances");
        let cls = ClassifierParams::init(5, &[6, 4], &[], 3, 50 + attempt).unwrap();
        let gen = GeneratorParams::init(4, 5, 5, 3, 3, 0.1, 0.01, 60 + attempt).unwrap();
        let latent = Array::new(
            vec![3, 4],
            rand_vec(&mut rng, 12, 0.0, 2.0), // latents are post-ReLU
        )
        .unwrap();
        let labels: Vec<usize> = (0..3).map(|_| rng.gen_range(0..3)).collect();
        let noise = standard_normal(3, 3, 4242 + attempt);
        if common::generator_relu_margin(&gen, &latent, &labels, &noise) < common::KINK_MARGIN {
            continue;
        }
        accepted += 1;

        // flatten generator params
        let at: Vec<f64> = (0..10).flat_map(|k| gen.param(k).values().to_vec()).collect();
        let mut probe = gen.clone();
        let mut f = |x: &[f64]| {
            let mut cursor = 0;
            for k in 0..10 {
                let len = probe.param(k).len();
                let shape = probe.param(k).shape().to_vec();
                *probe.param_mut(k) =
                    Array::new(shape, x[cursor..cursor + len].to_vec()).unwrap();
                cursor += len;
            }
            let mut g = Graph::new();
            let built =
                build_generator_loss(&mut g, &probe, &cls, &latent, &labels, &noise).unwrap();
            g.value(built.total).scalar_value()
        };
        let fd = central_diff(&mut f, &at, EPS);

        let mut g = Graph::new();
        let built = build_generator_loss(&mut g, &gen, &cls, &latent, &labels, &noise).unwrap();
        g.backward(built.total).unwrap();
        let mut analytic = Vec::new();
        for (_, node) in &built.params {
            analytic.extend_from_slice(g.grad(*node).unwrap());
        }
        assert_grad_close(&analytic, &fd, TOL, "generator_total");
    }
}
