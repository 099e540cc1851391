//! Lexicographic joint optimization: descend on the VAE objective while the
//! flow objective is pushed below a floor `c` through an adaptive multiplier
//!
//! ```text
//! λ_s = max((φ − ∇L_vae·∇L_flow) / ‖∇L_flow‖², 0),   φ = L_flow − c
//! θ ← θ − γ_s (∇L_vae + λ_s ∇L_flow)
//! ```

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::optim::Optimizer;

/// Below this squared norm the flow gradient is treated as zero.
pub const DEGENERATE_NORM_SQ: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    /// Adaptive `λ_s`.
    Lexico,
    /// Constant `λ` (the unconstrained weighted-sum ablation).
    FixedLambda(f64),
    /// The two objectives update disjoint parameter sets; the flow never sees
    /// encoder gradients.
    Separate,
}

impl Mode {
    pub fn label(&self) -> String {
        match self {
            Mode::Lexico => "lexico".into(),
            Mode::FixedLambda(l) => format!("fixed_lambda:{l}"),
            Mode::Separate => "separate".into(),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lexico" => Ok(Mode::Lexico),
            "separate" => Ok(Mode::Separate),
            other => {
                let value = other
                    .strip_prefix("fixed_lambda:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| Error::Config(format!("unknown mode {other:?}")))?;
                Ok(Mode::FixedLambda(value))
            }
        }
    }
}

/// How the floor `c` in `φ = L_flow − c` is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ConstraintFloor {
    Fixed(f64),
    /// Lowest flow loss observed on earlier steps (the current loss on the
    /// first step).
    RunningMin,
}

impl ConstraintFloor {
    pub fn label(&self) -> String {
        match self {
            ConstraintFloor::Fixed(c) => format!("{c}"),
            ConstraintFloor::RunningMin => "running_min".into(),
        }
    }
}

impl std::str::FromStr for ConstraintFloor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "running_min" {
            return Ok(ConstraintFloor::RunningMin);
        }
        s.parse::<f64>()
            .ok()
            .filter(|c| c.is_finite() && *c >= 0.0)
            .map(ConstraintFloor::Fixed)
            .ok_or_else(|| Error::Config(format!("bad constraint floor {s:?}")))
    }
}

/// Losses and flat gradients over the shared parameter vector. Entries a
/// loss does not touch are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct JointLosses {
    pub l_vae: f64,
    pub l_flow: f64,
    pub g_vae: Vec<f64>,
    pub g_flow: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lambda {
    pub value: f64,
    /// `‖∇L_flow‖²` was below [`DEGENERATE_NORM_SQ`]; `value` is 0.
    pub degenerate: bool,
}

pub fn compute_lambda(losses: &JointLosses, c: f64) -> Lambda {
    let norm_sq: f64 = losses.g_flow.iter().map(|g| g * g).sum();
    if norm_sq < DEGENERATE_NORM_SQ {
        return Lambda { value: 0.0, degenerate: true };
    }
    let phi = losses.l_flow - c;
    let inner: f64 = losses.g_vae.iter().zip(&losses.g_flow).map(|(a, b)| a * b).sum();
    Lambda { value: ((phi - inner) / norm_sq).max(0.0), degenerate: false }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LexicoState {
    pub mode: Mode,
    pub step_size: f64,
    pub iteration: usize,
    pub floor: ConstraintFloor,
    /// Lowest flow loss seen so far, for [`ConstraintFloor::RunningMin`].
    pub best_flow: Option<f64>,
    pub lambda_history: Vec<f64>,
    /// Iterations whose update was skipped for a non-finite gradient.
    pub skipped: Vec<usize>,
}

impl LexicoState {
    pub fn new(mode: Mode, step_size: f64, floor: ConstraintFloor) -> Self {
        LexicoState {
            mode,
            step_size,
            iteration: 0,
            floor,
            best_flow: None,
            lambda_history: Vec::new(),
            skipped: Vec::new(),
        }
    }

    /// Floor to use against the flow loss `l_flow` of the current step.
    pub fn floor_for(&self, l_flow: f64) -> f64 {
        match self.floor {
            ConstraintFloor::Fixed(c) => c,
            ConstraintFloor::RunningMin => self.best_flow.unwrap_or(l_flow),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub lambda: f64,
    pub degenerate: bool,
    pub skipped: bool,
}

/// One update of every shared parameter by `−γ_s (g_vae + λ_s g_flow)`, the
/// combined direction going through `optimizer`.
///
/// A non-finite gradient skips the update and halves `γ_s` from then on.
pub fn joint_step(
    params: &mut [&mut Tensor],
    losses: &JointLosses,
    state: &mut LexicoState,
    optimizer: &mut Optimizer,
) -> Result<StepReport> {
    let n: usize = params.iter().map(|p| p.numel()).sum();
    if losses.g_vae.len() != n || losses.g_flow.len() != n {
        return Err(Error::invalid(
            "joint_step",
            format!("gradients of length {}/{} for {n} parameters", losses.g_vae.len(), losses.g_flow.len()),
        ));
    }
    let finite = losses.l_vae.is_finite()
        && losses.l_flow.is_finite()
        && losses.g_vae.iter().chain(&losses.g_flow).all(|g| g.is_finite());
    let iteration = state.iteration;
    state.iteration += 1;
    if !finite {
        state.skipped.push(iteration);
        state.step_size *= 0.5;
        state.lambda_history.push(0.0);
        return Ok(StepReport { lambda: 0.0, degenerate: false, skipped: true });
    }

    let (lambda, degenerate) = match state.mode {
        Mode::Lexico => {
            let c = state.floor_for(losses.l_flow);
            let l = compute_lambda(losses, c);
            (l.value, l.degenerate)
        }
        Mode::FixedLambda(l) => (l, false),
        Mode::Separate => (1.0, false),
    };
    state.best_flow = Some(state.best_flow.map_or(losses.l_flow, |b| b.min(losses.l_flow)));
    state.lambda_history.push(lambda);

    let combined: Vec<f64> = losses.g_vae.iter().zip(&losses.g_flow).map(|(a, b)| a + lambda * b).collect();
    optimizer.apply(params, &combined, state.step_size);
    Ok(StepReport { lambda, degenerate, skipped: false })
}
