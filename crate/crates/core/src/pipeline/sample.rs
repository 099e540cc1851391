//! The sampling stage: pick starting latents, transport, decode.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::flow::{transport, Direction, Trajectory};
use crate::rng::SeededRng;

use super::task::{gauss_source, gauss_target, Model, TaskData};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleRequest {
    pub n: usize,
    pub steps: usize,
    pub direction: Direction,
    /// Decode the starting latents directly instead of transporting them.
    pub no_flow: bool,
}

impl SampleRequest {
    pub fn forward(n: usize, steps: usize) -> Self {
        SampleRequest { n, steps, direction: Direction::Forward, no_flow: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Samples {
    /// `[n, d]` starting latents; `None` when `n = 0`.
    pub starts: Option<Tensor>,
    /// Euler path; `None` when `n = 0` or the flow was bypassed.
    pub trajectory: Option<Trajectory>,
    /// Greedy decodings of the endpoints (text tasks only).
    pub decoded: Vec<Vec<usize>>,
}

impl Samples {
    /// Final latents: the trajectory endpoint, or the starts without a flow.
    pub fn endpoints(&self) -> Option<&Tensor> {
        self.trajectory.as_ref().map(|t| t.endpoint()).or(self.starts.as_ref())
    }
}

/// `n` encoder means of `pool`, cycling through it in order.
fn encoded_starts(model: &Model, pool: &[Vec<usize>], n: usize) -> Result<Tensor> {
    let vae = model.vae.as_ref().ok_or_else(|| Error::invalid("sample", "text task without a VAE"))?;
    if pool.is_empty() {
        return Err(Error::invalid("sample", "no held-out sentences to start from"));
    }
    let seqs: Vec<Vec<usize>> = (0..n).map(|i| pool[i % pool.len()].clone()).collect();
    vae.encoder.encode_means(&seqs)
}

/// Starting latents for `direction`: the source domain going forward, the
/// target domain going backward.
pub fn start_latents(model: &Model, data: &TaskData, n: usize, direction: Direction, rng: &mut SeededRng) -> Result<Tensor> {
    match (data, direction) {
        (TaskData::Gauss { mu1, .. }, Direction::Forward) => Ok(gauss_source(rng, n, mu1.len())),
        (TaskData::Gauss { mu1, sigma1 }, Direction::Backward) => Ok(gauss_target(rng, n, mu1, *sigma1)),
        (TaskData::Text(t), Direction::Forward) if t.prior_source => Ok(rng.normal_tensor(&[n, model.latent_dim()])),
        (TaskData::Text(t), Direction::Forward) => encoded_starts(model, &t.heldout_source, n),
        (TaskData::Text(t), Direction::Backward) => encoded_starts(model, &t.heldout_target, n),
    }
}

/// Draws `req.n` samples. Never mutates the model.
pub fn sample(model: &Model, data: &TaskData, req: &SampleRequest, rng: &mut SeededRng) -> Result<Samples> {
    if req.steps == 0 {
        return Err(Error::invalid("sample", "steps must be at least 1"));
    }
    if req.n == 0 {
        return Ok(Samples::default());
    }
    let starts = start_latents(model, data, req.n, req.direction, rng)?;
    let trajectory = if req.no_flow { None } else { Some(transport(&model.flow.field, &starts, req.direction, req.steps)?) };
    let mut out = Samples { starts: Some(starts), trajectory, decoded: Vec::new() };
    if let Some(vae) = &model.vae {
        let end = out.endpoints().expect("n > 0");
        out.decoded = vae.decoder.greedy(end)?;
    }
    Ok(out)
}
