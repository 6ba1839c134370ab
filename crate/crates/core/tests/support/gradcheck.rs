//! Analytic gradients against central finite differences in f64. Every
//! check panics on the first entry outside tolerance.
//!
//! Shared by the per-suite test targets and the acceptance target.

#![allow(dead_code)]

use cdaae_core::model::{label_batch, LossVars, Trainable};
use cdaae_core::{Graph, LabelMode, LabelVector, LossWeights, ModelParams, SkipPosition, Tensor, Var, Z_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-4;
const MAX_REL: f64 = 1e-4;
/// Below this magnitude on both sides a gradient counts as zero.
const ZERO: f64 = 1e-9;

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < ZERO {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, so leaky ReLU kinks are never crossed.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Checks d(build)/d(input) for every input element.
fn check_op(name: &str, inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
    let eval = |inputs: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).data()[0]
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    g.backward(out).unwrap();
    let mut worst = 0.0f64;
    for (i, var) in vars.iter().enumerate() {
        let analytic = g.grad(*var).expect("input reaches the output").to_vec();
        for (j, &a) in analytic.iter().enumerate() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += EPS;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= EPS;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * EPS);
            let err = rel_err(a, numeric);
            assert!(
                err < MAX_REL,
                "{name}: input {i} element {j}: analytic {a} numeric {numeric} (rel {err:e})"
            );
            worst = worst.max(err);
        }
    }
    eprintln!("{name}: worst relative error {worst:e}");
}

/// Reduces any tensor to a scalar with a non-uniform upstream gradient.
fn reduce(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
    let shape = g.value(y).shape().to_vec();
    let target = random(&mut ChaCha8Rng::seed_from_u64(seed), &shape, -1.0, 1.0);
    let t = g.constant(target);
    g.mse_loss(y, t).unwrap()
}

pub fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (stride, pad, k) in [(1, 0, 3), (2, 2, 5), (2, 1, 3), (3, 1, 2)] {
        let inputs = vec![
            random(&mut rng, &[2, 3, 7, 6], -1.0, 1.0),
            random(&mut rng, &[4, 3, k, k], -1.0, 1.0),
            random(&mut rng, &[4], -1.0, 1.0),
        ];
        check_op(&format!("conv2d s{stride} p{pad} k{k}"), inputs, |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], stride, pad).unwrap();
            reduce(g, y, 1)
        });
    }
}

pub fn conv2d_transpose_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (stride, pad, out_pad, k) in [(1, 0, 0, 3), (2, 2, 1, 5), (2, 1, 0, 3), (3, 0, 2, 2)] {
        let inputs = vec![
            random(&mut rng, &[2, 3, 4, 5], -1.0, 1.0),
            random(&mut rng, &[3, 2, k, k], -1.0, 1.0),
            random(&mut rng, &[2], -1.0, 1.0),
        ];
        check_op(
            &format!("conv2d_transpose s{stride} p{pad} o{out_pad} k{k}"),
            inputs,
            |g, v| {
                let y = g.conv2d_transpose(v[0], v[1], v[2], stride, pad, out_pad).unwrap();
                reduce(g, y, 2)
            },
        );
    }
}

pub fn dense_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let inputs = vec![
        random(&mut rng, &[3, 7], -1.0, 1.0),
        random(&mut rng, &[7, 5], -1.0, 1.0),
        random(&mut rng, &[5], -1.0, 1.0),
    ];
    check_op("dense", inputs, |g, v| {
        let y = g.dense(v[0], v[1], v[2]).unwrap();
        reduce(g, y, 3)
    });
}

pub fn activation_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = off_kink(&mut rng, &[4, 6]);
    check_op("leaky_relu", vec![x.clone()], |g, v| {
        let y = g.leaky_relu(v[0], 0.2);
        reduce(g, y, 4)
    });
    let x = random(&mut rng, &[4, 6], -3.0, 3.0);
    check_op("tanh", vec![x.clone()], |g, v| {
        let y = g.tanh(v[0]);
        reduce(g, y, 5)
    });
    check_op("sigmoid", vec![x], |g, v| {
        let y = g.sigmoid(v[0]);
        reduce(g, y, 6)
    });
}

pub fn structural_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let a = random(&mut rng, &[3, 4], -1.0, 1.0);
    let b = random(&mut rng, &[3, 4], -1.0, 1.0);
    let c = random(&mut rng, &[3, 2], -1.0, 1.0);
    check_op("add", vec![a.clone(), b], |g, v| {
        let y = g.add(v[0], v[1]).unwrap();
        reduce(g, y, 7)
    });
    check_op("concat_columns", vec![a.clone(), c], |g, v| {
        let y = g.concat_columns(v[0], v[1]).unwrap();
        reduce(g, y, 8)
    });
    let img = random(&mut rng, &[2, 3, 2, 2], -1.0, 1.0);
    check_op("flatten+reshape", vec![img], |g, v| {
        let f = g.flatten(v[0]).unwrap();
        let r = g.reshape(f, &[4, 6]).unwrap();
        reduce(g, r, 9)
    });
    check_op("sum+weighted_sum", vec![a.clone(), a], |g, v| {
        let s0 = g.sum(v[0]);
        let l = reduce(g, v[1], 10);
        let s1 = g.tanh(s0);
        g.weighted_sum(&[(s1, 0.7), (l, -1.3)]).unwrap()
    });
}

pub fn loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let a = random(&mut rng, &[2, 5], -1.0, 1.0);
    let b = random(&mut rng, &[2, 5], -1.0, 1.0);
    check_op("mse", vec![a, b], |g, v| g.mse_loss(v[0], v[1]).unwrap());

    let p = random(&mut rng, &[6, 1], 0.05, 0.95);
    let t = Tensor::new(&[6, 1], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
    let t2 = t.clone();
    check_op("bce", vec![p], move |g, v| g.bce_loss(v[0], &t).unwrap());
    let z = random(&mut rng, &[6, 1], -6.0, 6.0);
    check_op("bce_with_logits", vec![z], move |g, v| {
        g.bce_with_logits(v[0], &t2).unwrap()
    });
}

struct ModelCase {
    model: ModelParams<f64>,
    source: Tensor<f64>,
    target: Tensor<f64>,
    labels: Tensor<f64>,
    prior: Tensor<f64>,
}

impl ModelCase {
    fn new(skip: SkipPosition, mode: LabelMode, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = ModelParams::<f32>::init(skip, mode, seed).cast::<f64>();
        let n = 2;
        let labels: Vec<LabelVector> = (0..n)
            .map(|i| match mode {
                LabelMode::Au => LabelVector::new(mode, (0..12).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap(),
                LabelMode::Emotion => LabelVector::one_hot(cdaae_core::Emotion::ALL[i * 3]),
            })
            .collect();
        let refs: Vec<&LabelVector> = labels.iter().collect();
        Self {
            model,
            source: random(&mut rng, &[n, 3, 32, 32], -1.0, 1.0),
            target: random(&mut rng, &[n, 3, 32, 32], -1.0, 1.0),
            labels: label_batch(&refs).unwrap(),
            prior: random(&mut rng, &[n, Z_DIM], -2.0, 2.0),
        }
    }

    fn losses(&self, model: &ModelParams<f64>, g: &mut Graph<f64>, trainable: Trainable) -> LossVars {
        let vars = model.bind(g, trainable);
        let s = g.constant(self.source.clone());
        let t = g.constant(self.target.clone());
        let l = g.constant(self.labels.clone());
        let z = g.constant(self.prior.clone());
        model
            .build_losses(g, &vars, s, t, l, z, LossWeights::default())
            .unwrap()
    }

    /// `(total_ae, discriminator_total, kink signature)`.
    fn eval(&self, model: &ModelParams<f64>) -> (f64, f64, Vec<bool>) {
        let mut g = Graph::new();
        let lv = self.losses(model, &mut g, Trainable::NONE);
        (
            g.value(lv.total_ae).data()[0],
            g.value(lv.discriminator_total).data()[0],
            g.kink_signature(),
        )
    }
}

/// Central difference of one parameter entry, or `None` when the two
/// evaluations straddle a leaky-ReLU kink.
fn central_difference(
    case: &ModelCase,
    perturb: impl Fn(&mut ModelParams<f64>, f64),
    pick: impl Fn(&(f64, f64, Vec<bool>)) -> f64,
) -> Option<f64> {
    let mut plus = case.model.clone();
    perturb(&mut plus, EPS);
    let mut minus = case.model.clone();
    perturb(&mut minus, -EPS);
    let (p, m) = (case.eval(&plus), case.eval(&minus));
    (p.2 == m.2).then(|| (pick(&p) - pick(&m)) / (2.0 * EPS))
}

const PROBES_PER_TENSOR: usize = 3;
const MAX_ATTEMPTS: usize = 40;

/// Candidate entries: the largest-gradient entry first, then random ones.
fn candidates(grad: &[f64], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = vec![grad
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap()];
    while out.len() < MAX_ATTEMPTS {
        out.push(rng.random_range(0..grad.len()));
    }
    out
}

/// Compares `analytic` with central differences on up to
/// [`PROBES_PER_TENSOR`] kink-free entries; returns the worst error and the
/// number of entries checked.
fn check_tensor(
    what: &str,
    analytic: &[f64],
    rng: &mut ChaCha8Rng,
    difference: impl Fn(usize) -> Option<f64>,
) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for j in candidates(analytic, rng) {
        if checked == PROBES_PER_TENSOR.min(analytic.len()) {
            break;
        }
        let Some(numeric) = difference(j) else { continue };
        let err = rel_err(analytic[j], numeric);
        assert!(
            err < MAX_REL,
            "{what} entry {j}: analytic {} numeric {numeric} (rel {err:e})",
            analytic[j]
        );
        worst = worst.max(err);
        checked += 1;
    }
    (worst, checked)
}

fn check_model(skip: SkipPosition, mode: LabelMode, seed: u64) {
    let case = ModelCase::new(skip, mode, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let mut worst = 0.0f64;

    // Autoencoder parameters against total_ae; discriminators detached.
    let mut g = Graph::new();
    let vars = case.model.bind(&mut g, Trainable::AUTOENCODER);
    let (s, t, l, z) = (
        g.constant(case.source.clone()),
        g.constant(case.target.clone()),
        g.constant(case.labels.clone()),
        g.constant(case.prior.clone()),
    );
    let lv = case
        .model
        .build_losses(&mut g, &vars, s, t, l, z, LossWeights::default())
        .unwrap();
    g.backward(lv.total_ae).unwrap();
    for v in vars.discriminators() {
        assert!(g.grad(v).is_none(), "discriminator received gradient from total_ae");
    }
    let mut checked = 0;
    let mut tensors = 0;
    for (i, var) in vars.autoencoder().iter().enumerate() {
        let analytic = g
            .grad(*var)
            .expect("every autoencoder tensor reaches total_ae")
            .to_vec();
        let (w, c) = check_tensor(
            &format!("{skip}/{mode}: autoencoder tensor {i}"),
            &analytic,
            &mut rng,
            |j| central_difference(&case, |m, d| m.autoencoder_tensors_mut()[i].data_mut()[j] += d, |r| r.0),
        );
        worst = worst.max(w);
        checked += c;
        tensors += 1;
    }

    // Discriminator parameters against the joint discriminator loss.
    let mut g = Graph::new();
    let vars = case.model.bind(&mut g, Trainable::DISCRIMINATORS);
    let (s, t, l, z) = (
        g.constant(case.source.clone()),
        g.constant(case.target.clone()),
        g.constant(case.labels.clone()),
        g.constant(case.prior.clone()),
    );
    let lv = case
        .model
        .build_losses(&mut g, &vars, s, t, l, z, LossWeights::default())
        .unwrap();
    g.backward(lv.discriminator_total).unwrap();
    for v in vars.autoencoder() {
        assert!(
            g.grad(v).is_none(),
            "autoencoder received gradient from the discriminator loss"
        );
    }
    for (i, var) in vars.discriminators().iter().enumerate() {
        let analytic = g
            .grad(*var)
            .expect("every discriminator tensor reaches its loss")
            .to_vec();
        let (w, c) = check_tensor(
            &format!("{skip}/{mode}: discriminator tensor {i}"),
            &analytic,
            &mut rng,
            |j| {
                central_difference(
                    &case,
                    |m, d| m.discriminator_tensors_mut()[i].data_mut()[j] += d,
                    |r| r.1,
                )
            },
        );
        worst = worst.max(w);
        checked += c;
        tensors += 1;
    }
    // Most tensors must yield a full set of kink-free probes.
    assert!(
        checked * 10 >= tensors * PROBES_PER_TENSOR * 9,
        "{checked} probes over {tensors} tensors"
    );
    eprintln!("model {skip}/{mode}: {checked} entries over {tensors} tensors, worst relative error {worst:e}");
}

/// Full composed loss on every skip position and both label modes.
pub fn full_model_gradients() {
    check_model(SkipPosition::P2, LabelMode::Au, 21);
    check_model(SkipPosition::None, LabelMode::Au, 22);
    check_model(SkipPosition::P1, LabelMode::Emotion, 23);
    check_model(SkipPosition::P3, LabelMode::Au, 24);
}

/// Every differentiable op in isolation.
pub fn op_gradients() {
    conv2d_gradients();
    conv2d_transpose_gradients();
    dense_gradients();
    activation_gradients();
    structural_op_gradients();
    loss_gradients();
}
