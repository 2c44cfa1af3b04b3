#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use weaklearn::model_zoo::{Activation, Feature, Model, NetworkArchitecture, NetworkParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// One representative of each model kind.
pub fn zoo() -> Vec<(&'static str, Model)> {
    let mlp = |widths: Vec<usize>, act| Model::mlp(NetworkArchitecture::new(widths, act).unwrap()).unwrap();
    vec![
        (
            "linear_features",
            Model::linear(
                2,
                vec![
                    Feature::Constant { value: 1.0 },
                    Feature::Monomial { coord: 0, power: 1, scale: 1.0 },
                    Feature::Monomial { coord: 1, power: 2, scale: 0.5 },
                    Feature::Cosine { coord: 0, frequency: 1.5 },
                ],
            )
            .unwrap(),
        ),
        ("logistic", Model::Logistic { input_dim: 2 }),
        ("one_layer_nn", Model::OneLayerNn { input_dim: 2 }),
        ("mlp_sigmoid", mlp(vec![2, 3, 2], Activation::Sigmoid)),
        ("mlp_shifted_tanh", mlp(vec![2, 3], Activation::ShiftedTanh)),
        ("mlp_relu", mlp(vec![2, 3, 2], Activation::Relu)),
    ]
}

/// Max-norm deviation relative to `max(1, larger max-norm)`.
pub fn rel_dev(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = a.iter().chain(b).map(|v| v.abs()).fold(1.0, f64::max);
    num / den
}

/// Central-difference θ-gradient of `f_θ(x)`.
pub fn fd_grad(model: &Model, theta: &[f64], x: &[f64], h: f64) -> Vec<f64> {
    (0..theta.len())
        .map(|k| {
            let mut p = theta.to_vec();
            let mut m = theta.to_vec();
            p[k] += h;
            m[k] -= h;
            (model.eval(&p, x).unwrap() - model.eval(&m, x).unwrap()) / (2.0 * h)
        })
        .collect()
}

/// Second differences of `f_θ(x)`, independent of the analytic gradient.
pub fn fd_hess(model: &Model, theta: &[f64], x: &[f64], h: f64) -> Vec<f64> {
    let d = theta.len();
    let f = |di: f64, i: usize, dj: f64, j: usize| {
        let mut t = theta.to_vec();
        t[i] += di;
        t[j] += dj;
        model.eval(&t, x).unwrap()
    };
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (f(h, i, h, j) - f(h, i, -h, j) - f(-h, i, h, j) + f(-h, i, -h, j)) / (4.0 * h * h);
        }
    }
    out
}

/// Smallest ReLU pre-activation magnitude, or infinity for other models.
pub fn kink_margin(model: &Model, theta: &[f64], x: &[f64]) -> f64 {
    match model {
        Model::Mlp { arch } if arch.activation == Activation::Relu => {
            NetworkParams::from_flat(arch, theta).unwrap().min_abs_preactivation(x).unwrap()
        }
        _ => f64::INFINITY,
    }
}

pub struct DerivativeReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub worst_grad: f64,
    pub worst_hess: f64,
}

/// Analytic vs finite-difference gradient and Hessian at `draws` random (θ, x).
pub fn derivative_check(model: &Model, draws: usize, seed: u64) -> DerivativeReport {
    let mut r = rng(seed);
    let mut rep = DerivativeReport { checked: 0, skipped_kinks: 0, worst_grad: 0.0, worst_hess: 0.0 };
    let mut attempts = 0;
    while rep.checked < draws {
        attempts += 1;
        assert!(attempts < 100 * draws, "too many kink rejections");
        let theta = gaussian_vec(&mut r, model.param_dim());
        let x: Vec<f64> = (0..model.input_dim()).map(|_| r.random_range(-2.0..2.0)).collect();
        // finite differences move pre-activations by O(h |x| |θ|)
        if kink_margin(model, &theta, &x) < 1e-2 {
            rep.skipped_kinks += 1;
            continue;
        }
        let g = model.grad_theta(&theta, &x).unwrap();
        rep.worst_grad = rep.worst_grad.max(rel_dev(&g, &fd_grad(model, &theta, &x, 1e-6)));
        let h = model.hess_theta(&theta, &x).unwrap();
        rep.worst_hess = rep.worst_hess.max(rel_dev(h.as_slice(), &fd_hess(model, &theta, &x, 1e-4)));
        rep.checked += 1;
    }
    rep
}
