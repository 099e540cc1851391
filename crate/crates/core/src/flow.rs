//! Rectified-flow objective and Euler transport.
//!
//! Training regresses `v(z_t, t)` onto the straight displacement `z1 − z0`
//! at `z_t = t·z1 + (1 − t)·z0`. Sampling integrates `dz = v(z, t) dt` with
//! `N` uniform Euler steps, forward from `t = 0` or backward from `t = 1`.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nets::{VelocityField, VelocityModel};
use crate::rng::SeededRng;

/// A velocity field plus its default number of sampling steps.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    pub field: VelocityField,
    pub default_steps: usize,
}

impl FlowModel {
    pub fn new(field: VelocityField, default_steps: usize) -> Result<Self> {
        if default_steps == 0 {
            return Err(Error::invalid("flow", "default_steps must be at least 1"));
        }
        Ok(FlowModel { field, default_steps })
    }

    pub fn latent_dim(&self) -> usize {
        self.field.config().latent_dim
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// `π0 → π1`, time ascending.
    Forward,
    /// `π1 → π0`, time descending with the velocity negated.
    Backward,
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            other => Err(Error::Config(format!("unknown direction {other:?}"))),
        }
    }
}

/// Euler path: `states[k]` is the state after `k` of `N` steps.
///
/// `progress[k] = k/N` increases from 0 to 1 in both directions; the flow time
/// of `states[k]` is `progress[k]` going forward and `1 − progress[k]` going
/// backward.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub direction: Direction,
    pub progress: Vec<f64>,
    pub states: Vec<Tensor>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn start(&self) -> &Tensor {
        &self.states[0]
    }

    pub fn endpoint(&self) -> &Tensor {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn flow_time(&self, k: usize) -> f64 {
        match self.direction {
            Direction::Forward => self.progress[k],
            Direction::Backward => 1.0 - self.progress[k],
        }
    }
}

/// `v'(z, t) = −v(z, 1 − t)`, the same transport run backwards in time.
pub struct TimeReversed<'a>(pub &'a dyn VelocityModel);

impl VelocityModel for TimeReversed<'_> {
    fn latent_dim(&self) -> usize {
        self.0.latent_dim()
    }

    fn velocity(&self, tape: &mut Tape, z: Var, t: &[f64]) -> Result<Var> {
        let flipped: Vec<f64> = t.iter().map(|t| 1.0 - t).collect();
        let v = self.0.velocity(tape, z, &flipped)?;
        tape.scale(v, -1.0)
    }
}

/// Flow-matching loss at explicit per-row times: mean over rows of
/// `‖v(z_t, t) − (z1 − z0)‖²`.
pub fn flow_loss_at(model: &dyn VelocityModel, tape: &mut Tape, z0: Var, z1: Var, t: &[f64]) -> Result<Var> {
    let shape = tape.shape(z0).to_vec();
    if shape != tape.shape(z1) {
        return Err(Error::Shape { op: "flow_loss", lhs: shape, rhs: tape.shape(z1).to_vec() });
    }
    let (rows, d) = match shape.as_slice() {
        [b, d] => (*b, *d),
        _ => return Err(Error::invalid("flow_loss", format!("expected [batch, d], got {shape:?}"))),
    };
    if t.len() != rows {
        return Err(Error::invalid("flow_loss", format!("{} times for {rows} rows", t.len())));
    }
    let mut tt = Vec::with_capacity(rows * d);
    for &ti in t {
        tt.extend(std::iter::repeat(ti).take(d));
    }
    let tt = tape.constant(Tensor::matrix(rows, d, tt)?)?;
    let displacement = tape.sub(z1, z0)?;
    let moved = tape.mul(tt, displacement)?;
    let zt = tape.add(z0, moved)?;
    let v = model.velocity(tape, zt, t)?;
    let residual = tape.sub(v, displacement)?;
    let total = tape.sum_sq(residual)?;
    tape.scale(total, 1.0 / rows as f64)
}

/// Flow-matching loss with one `t ~ U[0, 1]` per row, drawn from `rng`.
pub fn flow_loss(model: &dyn VelocityModel, tape: &mut Tape, z0: Var, z1: Var, rng: &mut SeededRng) -> Result<Var> {
    let rows = tape.shape(z0).first().copied().unwrap_or(0);
    let t: Vec<f64> = (0..rows).map(|_| rng.uniform()).collect();
    flow_loss_at(model, tape, z0, z1, &t)
}

/// Euler integration of `z_start: [batch, d]` over `steps` uniform steps.
pub fn transport(
    model: &dyn VelocityModel,
    z_start: &Tensor,
    direction: Direction,
    steps: usize,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::invalid("transport", "steps must be at least 1"));
    }
    let rows = match z_start.shape() {
        [b, d] if *d == model.latent_dim() => *b,
        s => {
            return Err(Error::Shape { op: "transport", lhs: s.to_vec(), rhs: vec![0, model.latent_dim()] });
        }
    };
    let dt = 1.0 / steps as f64;
    let progress: Vec<f64> = (0..=steps).map(|k| k as f64 / steps as f64).collect();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(z_start.clone());
    for k in 0..steps {
        let (t, sign) = match direction {
            Direction::Forward => (progress[k], 1.0),
            Direction::Backward => (1.0 - progress[k], -1.0),
        };
        let current = &states[k];
        let mut tape = Tape::new();
        let z = tape.constant(current.clone()).map_err(|_| Error::NonFiniteState { step: k })?;
        let v = model.velocity(&mut tape, z, &vec![t; rows]).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFiniteState { step: k },
            other => other,
        })?;
        let v = tape.value(v);
        let next: Vec<f64> =
            current.data().iter().zip(v.data()).map(|(zi, vi)| zi + sign * dt * vi).collect();
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteState { step: k + 1 });
        }
        states.push(Tensor::new(current.shape().to_vec(), next)?);
    }
    Ok(Trajectory { direction, progress, states })
}

/// Mean over rows and over the `steps_fine` grid of `‖v(z_k, k/N) − (z_N − z_0)‖²`
/// along the model's own forward Euler path. Zero iff the path is straight
/// at constant speed.
pub fn straightness(model: &dyn VelocityModel, z0: &Tensor, steps_fine: usize) -> Result<f64> {
    let traj = transport(model, z0, Direction::Forward, steps_fine)?;
    let start = traj.start().data();
    let end = traj.endpoint().data();
    let displacement: Vec<f64> = end.iter().zip(start).map(|(e, s)| e - s).collect();
    let rows = z0.shape()[0];
    let mut total = 0.0;
    for k in 0..steps_fine {
        let mut tape = Tape::new();
        let z = tape.constant(traj.states[k].clone())?;
        let v = model.velocity(&mut tape, z, &vec![traj.progress[k]; rows])?;
        total += tape.value(v).data().iter().zip(&displacement).map(|(v, d)| (v - d).powi(2)).sum::<f64>();
    }
    Ok(total / (rows * steps_fine) as f64)
}

/// Exact minimizer of the flow-matching loss for `π0 = N(0, I)` and
/// `π1 = N(mu1, sigma1² I)` under independent coupling:
/// `E[z1 | z_t = z] − E[z0 | z_t = z]`.
pub fn analytic_gauss_velocity(mu1: &[f64], sigma1: f64, z: &[f64], t: f64) -> Result<Vec<f64>> {
    if mu1.len() != z.len() {
        return Err(Error::Shape { op: "analytic_gauss_velocity", lhs: vec![mu1.len()], rhs: vec![z.len()] });
    }
    if !(sigma1 > 0.0) {
        return Err(Error::invalid("analytic_gauss_velocity", "sigma1 must be positive"));
    }
    if !(0.0..1.0).contains(&t) {
        return Err(Error::invalid("analytic_gauss_velocity", format!("time {t} outside [0, 1)")));
    }
    let var1 = sigma1 * sigma1;
    let a = t * var1;
    let b = 1.0 - t;
    let s = t * t * var1 + b * b;
    Ok(mu1
        .iter()
        .zip(z)
        .map(|(&m, &zi)| {
            let centered = zi - t * m;
            let e_z1 = m + (a / s) * centered;
            let e_z0 = (b / s) * centered;
            e_z1 - e_z0
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `v ≡ c`
    struct Constant(Vec<f64>);
    impl VelocityModel for Constant {
        fn latent_dim(&self) -> usize {
            self.0.len()
        }
        fn velocity(&self, tape: &mut Tape, z: Var, _t: &[f64]) -> Result<Var> {
            let rows = tape.shape(z)[0];
            tape.constant(Tensor::matrix(rows, self.0.len(), self.0.repeat(rows))?)
        }
    }

    /// `v(z, t) = z`
    struct Identity(usize);
    impl VelocityModel for Identity {
        fn latent_dim(&self) -> usize {
            self.0
        }
        fn velocity(&self, tape: &mut Tape, z: Var, _t: &[f64]) -> Result<Var> {
            tape.scale(z, 1.0)
        }
    }

    fn row(v: &[f64]) -> Tensor {
        Tensor::matrix(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn constant_field_transport_is_exact() {
        let c = Constant(vec![0.5, -2.0]);
        for n in [1, 3, 10] {
            let traj = transport(&c, &row(&[1.0, 1.0]), Direction::Forward, n).unwrap();
            let end = traj.endpoint().data();
            assert!((end[0] - 1.5).abs() < 1e-12 && (end[1] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_field_transport_is_identity_bitwise() {
        let zero = Constant(vec![0.0, 0.0, 0.0]);
        let z = SeededRng::new(1).normal_tensor(&[4, 3]);
        for dir in [Direction::Forward, Direction::Backward] {
            let traj = transport(&zero, &z, dir, 7).unwrap();
            assert_eq!(traj.endpoint(), &z);
            assert_eq!(traj.start(), &z);
        }
    }

    #[test]
    fn trajectory_grid_shape() {
        let traj = transport(&Identity(1), &row(&[1.0]), Direction::Backward, 4).unwrap();
        assert_eq!(traj.states.len(), 5);
        assert_eq!(traj.progress, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(traj.flow_time(0), 1.0);
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(transport(&Identity(1), &row(&[1.0]), Direction::Forward, 0).is_err());
    }

    #[test]
    fn blow_up_reports_step() {
        struct Explode;
        impl VelocityModel for Explode {
            fn latent_dim(&self) -> usize {
                1
            }
            fn velocity(&self, tape: &mut Tape, z: Var, _t: &[f64]) -> Result<Var> {
                let sq = tape.mul(z, z)?;
                tape.scale(sq, 1e200)
            }
        }
        let err = transport(&Explode, &row(&[10.0]), Direction::Forward, 5).unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { .. }), "{err}");
    }

    #[test]
    fn linear_field_converges_to_exponential() {
        let traj = transport(&Identity(1), &row(&[1.0]), Direction::Forward, 1000).unwrap();
        let e = std::f64::consts::E;
        let rel = (traj.endpoint().data()[0] - e).abs() / e;
        assert!(rel <= 2e-3, "relative error {rel}");
    }

    #[test]
    fn straightness_examples() {
        let z = SeededRng::new(3).normal_tensor(&[5, 2]);
        assert!(straightness(&Constant(vec![1.0, -1.0]), &z, 100).unwrap() < 1e-20);
        assert_eq!(straightness(&Constant(vec![0.0, 0.0]), &z, 100).unwrap(), 0.0);
        assert!(straightness(&Identity(1), &row(&[1.0]), 100).unwrap() > 0.0);
    }

    #[test]
    fn analytic_velocity_examples() {
        let z = [0.3, -1.2];
        let v = analytic_gauss_velocity(&[1.0, 2.0], 1.5, &z, 0.0).unwrap();
        assert!((v[0] - 0.7).abs() < 1e-15 && (v[1] - 3.2).abs() < 1e-15);
        let v = analytic_gauss_velocity(&[0.0, 0.0], 1.0, &z, 0.5).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-15));
        let v = analytic_gauss_velocity(&[2.0], 1.0, &[1.0], 0.5).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-15);
        assert!(analytic_gauss_velocity(&[0.0], 1.0, &[0.0], 1.0).is_err());
        assert!(analytic_gauss_velocity(&[0.0], 0.0, &[0.0], 0.5).is_err());
    }

    #[test]
    fn flow_loss_shape_mismatch_rejected() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 2])).unwrap();
        let b = tape.constant(Tensor::zeros(&[3, 2])).unwrap();
        let mut rng = SeededRng::new(0);
        assert!(flow_loss(&Identity(2), &mut tape, a, b, &mut rng).is_err());
    }
}
