use proptest::prelude::*;
use rectiflow::flow::{analytic_gauss_velocity, flow_loss_at, transport, TimeReversed};
use rectiflow::nets::{Activation, VelocityFieldConfig};
use rectiflow::{Direction, Result, SeededRng, Tape, Tensor, Var, VelocityField, VelocityModel};

/// `v(z, t) = z`, whose exact flow map is `z ↦ e·z`.
struct Exponential(usize);

impl VelocityModel for Exponential {
    fn latent_dim(&self) -> usize {
        self.0
    }
    fn velocity(&self, tape: &mut Tape, z: Var, _t: &[f64]) -> Result<Var> {
        tape.scale(z, 1.0)
    }
}

/// Returns the true displacement for one fixed pair of endpoint batches.
struct Oracle(Tensor);

impl VelocityModel for Oracle {
    fn latent_dim(&self) -> usize {
        self.0.shape()[1]
    }
    fn velocity(&self, tape: &mut Tape, _z: Var, _t: &[f64]) -> Result<Var> {
        tape.constant(self.0.clone())
    }
}

fn random_field(d: usize, rng: &mut SeededRng) -> VelocityField {
    let config = VelocityFieldConfig { latent_dim: d, hidden_dims: vec![16, 16], time_embed_dim: 8, activation: Activation::Relu };
    let mut field = VelocityField::new(config, rng);
    let out = field.layers_mut().last_mut().unwrap();
    out.weight = rng.normal_tensor(out.weight.shape());
    out.bias = rng.normal_tensor(out.bias.shape());
    field
}

fn loss(model: &dyn VelocityModel, z0: &Tensor, z1: &Tensor, t: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let a = tape.constant(z0.clone()).unwrap();
    let b = tape.constant(z1.clone()).unwrap();
    let l = flow_loss_at(model, &mut tape, a, b, t).unwrap();
    tape.value(l).item()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn swapping_endpoints_and_reversing_time_preserves_the_loss(seed in any::<u64>(), d in 1usize..5, rows in 1usize..9) {
        let mut rng = SeededRng::new(seed);
        let field = random_field(d, &mut rng);
        let z0 = rng.normal_tensor(&[rows, d]);
        let z1 = rng.normal_tensor(&[rows, d]);
        let t: Vec<f64> = (0..rows).map(|_| rng.uniform()).collect();
        let back: Vec<f64> = t.iter().map(|t| 1.0 - t).collect();
        let forward = loss(&field, &z0, &z1, &t);
        let swapped = loss(&TimeReversed(&field), &z1, &z0, &back);
        prop_assert!((forward - swapped).abs() <= 1e-12, "{} vs {}", forward, swapped);
    }

    #[test]
    fn loss_is_nonnegative(seed in any::<u64>(), d in 1usize..4) {
        let mut rng = SeededRng::new(seed);
        let field = random_field(d, &mut rng);
        let z0 = rng.normal_tensor(&[4, d]);
        let z1 = rng.normal_tensor(&[4, d]);
        let t: Vec<f64> = (0..4).map(|_| rng.uniform()).collect();
        prop_assert!(loss(&field, &z0, &z1, &t) >= 0.0);
    }

    #[test]
    fn reversed_transport_undoes_a_constant_field(seed in any::<u64>(), steps in 1usize..40) {
        let mut rng = SeededRng::new(seed);
        let start = rng.normal_tensor(&[3, 2]);
        let shift = rng.normal_tensor(&[3, 2]);
        let field = Oracle(shift);
        let there = transport(&field, &start, Direction::Forward, steps).unwrap();
        let back = transport(&field, there.endpoint(), Direction::Backward, steps).unwrap();
        for (a, b) in back.endpoint().data().iter().zip(start.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_field_loss_is_squared_displacement() {
    let mut rng = SeededRng::new(5);
    let field = VelocityField::new(VelocityFieldConfig::new(3), &mut rng);
    let z0 = Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
    let z1 = Tensor::matrix(1, 3, vec![1.5, 1.0, 2.0]).unwrap();
    assert_eq!(loss(&field, &z0, &z1, &[0.3]), 1.0 + 4.0);
    assert_eq!(loss(&field, &z0, &z0, &[0.7]), 0.0);
}

#[test]
fn exact_displacement_gives_zero_loss() {
    let mut rng = SeededRng::new(6);
    let z0 = rng.normal_tensor(&[5, 2]);
    let z1 = rng.normal_tensor(&[5, 2]);
    let u: Vec<f64> = z1.data().iter().zip(z0.data()).map(|(a, b)| a - b).collect();
    let oracle = Oracle(Tensor::matrix(5, 2, u).unwrap());
    for t in [0.0, 0.25, 0.9, 1.0] {
        assert_eq!(loss(&oracle, &z0, &z1, &[t; 5]), 0.0);
    }
}

fn euler_error(steps: usize) -> f64 {
    let start = Tensor::matrix(1, 1, vec![1.0]).unwrap();
    let end = transport(&Exponential(1), &start, Direction::Forward, steps).unwrap();
    (end.endpoint().data()[0] - std::f64::consts::E).abs()
}

#[test]
fn euler_error_is_first_order() {
    let ratio = euler_error(10) / euler_error(100);
    assert!((8.0..=12.0).contains(&ratio), "ratio {ratio}");
}

/// Conditional mean of `z1 − z0` given `z_t` in a narrow bin, estimated
/// from independent draws, against the closed form. Returns the estimate's
/// deviation in standard errors.
fn binned_deviation(mu1: f64, sigma1: f64, t: f64, z: f64, draws: usize, half_width: f64) -> f64 {
    let mut rng = SeededRng::new(99);
    let mut hits = Vec::new();
    for _ in 0..draws {
        let z0 = rng.normal();
        let z1 = mu1 + sigma1 * rng.normal();
        let zt = t * z1 + (1.0 - t) * z0;
        if (zt - z).abs() < half_width {
            hits.push(z1 - z0);
        }
    }
    let n = hits.len() as f64;
    let mean = hits.iter().sum::<f64>() / n;
    let var = hits.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let exact = analytic_gauss_velocity(&[mu1], sigma1, &[z], t).unwrap()[0];
    (mean - exact).abs() / (var / n).sqrt()
}

#[test]
fn analytic_velocity_matches_binned_monte_carlo() {
    assert_eq!(analytic_gauss_velocity(&[2.0], 1.0, &[1.0], 0.5).unwrap(), vec![2.0]);
    for (mu1, sigma1, t, z) in [(2.0, 1.0, 0.5, 1.0), (3.0, 1.0, 0.3, 0.4), (-1.0, 0.5, 0.8, -0.6)] {
        let dev = binned_deviation(mu1, sigma1, t, z, 1_000_000, 0.01);
        assert!(dev < 4.5, "mu1={mu1} sigma1={sigma1} t={t} z={z}: {dev} standard errors");
    }
}

#[test]
fn analytic_velocity_transports_gaussians() {
    // many fine Euler steps on the exact field carry N(0, 1) to N(mu1, sigma1²)
    struct Exact;
    impl VelocityModel for Exact {
        fn latent_dim(&self) -> usize {
            1
        }
        fn velocity(&self, tape: &mut Tape, z: Var, t: &[f64]) -> Result<Var> {
            let zs = tape.value(z).data().to_vec();
            let v: Vec<f64> =
                zs.iter().zip(t).map(|(&zi, &ti)| analytic_gauss_velocity(&[3.0], 0.5, &[zi], ti).unwrap()[0]).collect();
            tape.constant(Tensor::matrix(v.len(), 1, v)?)
        }
    }
    let mut rng = SeededRng::new(4);
    let start = rng.normal_tensor(&[20_000, 1]);
    let end = transport(&Exact, &start, Direction::Forward, 1000).unwrap();
    let xs = end.endpoint().data();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
    assert!((mean - 3.0).abs() < 0.02, "mean {mean}");
    assert!((std - 0.5).abs() < 0.02, "std {std}");
}
