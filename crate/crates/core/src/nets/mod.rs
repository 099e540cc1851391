//! Parameterized networks: the time-conditioned velocity MLP and the gated
//! recurrent sequence encoder/decoder.

mod recurrent;
mod time;
mod velocity;

pub use recurrent::{
    CoderConfig, GruCell, GruCellVars, RecurrentDecoder, RecurrentDecoderVars, RecurrentEncoder, RecurrentEncoderVars,
    BOS, EOS, PAD,
};
pub use time::TimeEmbedding;
pub use velocity::{BoundVelocityField, VelocityField, VelocityFieldConfig, VelocityModel};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// A model whose trainable state is a fixed, ordered list of named tensors.
///
/// `named_params` and `params_mut` must enumerate the same tensors in the same
/// order; the optimizer and the checkpoint format both rely on it.
pub trait Parameterized {
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    fn params_finite(&self) -> bool {
        self.named_params().iter().all(|(_, t)| t.is_finite())
    }
}

/// Binds a parameter either as a trainable leaf or as a frozen constant.
pub(crate) fn bind_param(tape: &mut Tape, t: &Tensor, trainable: bool) -> Result<Var> {
    if trainable {
        tape.leaf(t.clone())
    } else {
        tape.constant(t.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

/// Affine map `x·W + b` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.uniform_in(-bound, bound)).collect::<Vec<_>>();
        let weight = Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out)).expect("linear shape");
        let bias = Tensor::vector(draw(fan_out));
        Linear { weight, bias }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear { weight: Tensor::zeros(&[fan_in, fan_out]), bias: Tensor::zeros(&[fan_out]) }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<LinearVars> {
        Ok(LinearVars {
            weight: bind_param(tape, &self.weight, trainable)?,
            bias: bind_param(tape, &self.bias, trainable)?,
        })
    }

    pub(crate) fn push_named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub(crate) fn push_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

impl LinearVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, self.weight)?;
        tape.add_bias(xw, self.bias)
    }

    pub(crate) fn push_vars(&self, out: &mut Vec<Var>) {
        out.push(self.weight);
        out.push(self.bias);
    }
}
