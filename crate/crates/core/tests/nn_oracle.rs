//! The perceptron against a dense reference forward pass and central differences.

use approx::assert_relative_eq;
use rand::Rng;

use opd_lab::nn::{
    gaussian_logprob_grad, mlp_categorical_logprob_grad, mlp_forward, Activation, HeadKind, HeadOutput, MlpModel,
    MlpSpec,
};
use opd_lab::rng;

fn reference_forward(model: &MlpModel, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (l, (w, b)) in
        [("l0.weight", "l0.bias"), ("l1.weight", "l1.bias"), ("out.weight", "out.bias")].iter().enumerate()
    {
        let w = model.params.segment(w).unwrap();
        let b = model.params.segment(b).unwrap();
        let n_in = h.len();
        let mut z = vec![0.0; b.len()];
        for o in 0..b.len() {
            z[o] = b[o];
            for i in 0..n_in {
                z[o] += w[o * n_in + i] * h[i];
            }
        }
        if l < 2 {
            for v in &mut z {
                *v = match model.spec.activation {
                    Activation::Tanh => v.tanh(),
                    Activation::Relu => v.max(0.0),
                };
            }
        }
        h = z;
    }
    h
}

fn random_spec(r: &mut impl Rng, head: HeadKind) -> MlpSpec {
    let output_dim = match head {
        HeadKind::Gaussian { .. } => 2,
        HeadKind::Categorical => r.random_range(2..6),
    };
    MlpSpec {
        input_dim: r.random_range(1..5),
        hidden_dims: vec![r.random_range(1..8), r.random_range(1..8)],
        output_dim,
        activation: Activation::Tanh,
        head,
    }
}

const GAUSS: HeadKind = HeadKind::Gaussian { log_std_min: -3.0, log_std_max: 1.0 };

#[test]
fn forward_matches_dense_reference() {
    let mut r = rng::seeded(17);
    for i in 0..100 {
        let mut spec = random_spec(&mut r, GAUSS);
        if i % 2 == 1 {
            spec.activation = Activation::Relu;
        }
        let model = MlpModel::init(spec.clone(), i).unwrap();
        let x: Vec<f64> = (0..spec.input_dim).map(|_| r.random_range(-2.0..2.0)).collect();
        let out = reference_forward(&model, &x);
        let HeadOutput::Gaussian(head) = mlp_forward(&model, &x).unwrap() else { panic!("head kind") };
        assert_relative_eq!(head.mean, out[0], epsilon = 1e-14);
        assert_relative_eq!(head.log_std, out[1].clamp(-3.0, 1.0), epsilon = 1e-14);
    }
}

#[test]
fn toy_policy_has_4022_parameters() {
    assert_eq!(MlpModel::zeros(MlpSpec::toy_policy()).unwrap().size(), 4022);
}

fn central_difference(model: &MlpModel, j: usize, h: f64, f: &dyn Fn(&MlpModel) -> f64) -> f64 {
    let mut plus = model.clone();
    plus.params.values_mut()[j] += h;
    let mut minus = model.clone();
    minus.params.values_mut()[j] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

#[test]
fn gaussian_gradient_matches_finite_differences() {
    let mut r = rng::seeded(23);
    let mut tested = 0;
    let mut seed = 0;
    while tested < 100 {
        seed += 1;
        let spec = random_spec(&mut r, GAUSS);
        let model = MlpModel::init(spec.clone(), seed).unwrap();
        let x: Vec<f64> = (0..spec.input_dim).map(|_| r.random_range(-2.0..2.0)).collect();
        let raw = reference_forward(&model, &x)[1];
        if (raw + 3.0).abs() < 1e-3 || (raw - 1.0).abs() < 1e-3 {
            continue;
        }
        let a: f64 = r.random_range(-2.0..2.0);
        let (_, grad, _) = gaussian_logprob_grad(&model, &x, a).unwrap();
        let logp = |m: &MlpModel| gaussian_logprob_grad(m, &x, a).unwrap().0;
        for j in 0..model.size() {
            let fd = central_difference(&model, j, 1e-6, &logp);
            assert!(
                (grad.values()[j] - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                "instance {seed} coord {j}: {} vs {fd}",
                grad.values()[j]
            );
        }
        tested += 1;
    }
}

#[test]
fn clamped_log_std_has_no_gradient() {
    let spec =
        MlpSpec { input_dim: 1, hidden_dims: vec![1, 1], output_dim: 2, activation: Activation::Tanh, head: GAUSS };
    let mut model = MlpModel::zeros(spec).unwrap();
    model.params.segment_mut("out.bias").unwrap()[1] = 5.0;
    let (_, grad, head) = gaussian_logprob_grad(&model, &[0.3], 0.7).unwrap();
    assert!(head.clamped);
    assert_eq!(head.log_std, 1.0);
    assert_eq!(grad.segment("out.bias").unwrap()[1], 0.0);
}

#[test]
fn categorical_gradient_matches_finite_differences() {
    let mut r = rng::seeded(29);
    for i in 0..100 {
        let spec = random_spec(&mut r, HeadKind::Categorical);
        let model = MlpModel::init(spec.clone(), 500 + i).unwrap();
        let x: Vec<f64> = (0..spec.input_dim).map(|_| r.random_range(-2.0..2.0)).collect();
        let token = r.random_range(0..spec.output_dim as u32);
        let (lp, grad) = mlp_categorical_logprob_grad(&model, &x, token).unwrap();
        let z = reference_forward(&model, &x);
        let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
        assert_relative_eq!(lp, z[token as usize] - lse, epsilon = 1e-12);
        let logp = |m: &MlpModel| mlp_categorical_logprob_grad(m, &x, token).unwrap().0;
        for j in 0..model.size() {
            let fd = central_difference(&model, j, 1e-6, &logp);
            assert!((grad.values()[j] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "instance {i} coord {j}");
        }
    }
}

#[test]
fn forward_is_pure() {
    let model = MlpModel::init(MlpSpec::toy_policy(), 3).unwrap();
    let x = [1.0, -0.4, 0.35];
    let a = mlp_forward(&model, &x).unwrap();
    let b = mlp_forward(&model.clone(), &x).unwrap();
    assert_eq!(a, b);
}
