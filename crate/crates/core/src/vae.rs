//! Sequence VAE: encoder posterior, reparameterized sampling, and the
//! reconstruction + KL objective against a standard Gaussian prior.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nets::{
    CoderConfig, Parameterized, RecurrentDecoder, RecurrentDecoderVars, RecurrentEncoder, RecurrentEncoderVars, EOS,
};
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq)]
pub struct SeqVae {
    pub encoder: RecurrentEncoder,
    pub decoder: RecurrentDecoder,
    pub kl_warmup_steps: usize,
    /// Weight the warmup ramps up to.
    pub kl_weight_max: f64,
    pub dropout: f64,
}

/// Scalars and posterior parameters of one loss evaluation on a tape.
pub struct VaeLoss {
    pub loss: Var,
    pub recon: Var,
    pub kl: Var,
    pub mu: Var,
    pub log_var: Var,
}

impl SeqVae {
    pub fn new(config: CoderConfig, kl_warmup_steps: usize, dropout: f64, rng: &mut SeededRng) -> Self {
        let encoder = RecurrentEncoder::new(config.clone(), rng);
        let decoder = RecurrentDecoder::new(config, rng);
        SeqVae { encoder, decoder, kl_warmup_steps, kl_weight_max: 1.0, dropout }
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.config().latent_dim
    }

    /// Linear ramp from 0 to `kl_weight_max` over the warmup; the full
    /// weight when warmup is disabled.
    pub fn kl_weight(&self, step: usize) -> f64 {
        let ramp = if self.kl_warmup_steps == 0 { 1.0 } else { (step as f64 / self.kl_warmup_steps as f64).min(1.0) };
        ramp * self.kl_weight_max
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<SeqVaeVars<'_>> {
        Ok(SeqVaeVars {
            vae: self,
            encoder: self.encoder.bind(tape, trainable)?,
            decoder: self.decoder.bind(tape, trainable)?,
        })
    }

    /// Off-tape evaluation returning `(loss, recon, kl)`.
    pub fn loss_values(&self, batch: &[Vec<usize>], rng: &mut SeededRng, kl_weight: f64) -> Result<(f64, f64, f64)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let out = vars.vae_loss(&mut tape, batch, rng, kl_weight, false)?;
        Ok((tape.value(out.loss).item(), tape.value(out.recon).item(), tape.value(out.kl).item()))
    }
}

impl Parameterized for SeqVae {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.named_params();
        out.extend(self.decoder.named_params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.params_mut();
        out.extend(self.decoder.params_mut());
        out
    }
}

pub struct SeqVaeVars<'a> {
    vae: &'a SeqVae,
    pub encoder: RecurrentEncoderVars<'a>,
    pub decoder: RecurrentDecoderVars<'a>,
}

impl SeqVaeVars<'_> {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = self.encoder.vars();
        out.extend(self.decoder.vars());
        out
    }

    /// `recon + kl_weight · kl` where `recon` is the mean per-token negative
    /// log-likelihood under teacher forcing (end-of-sequence included) and
    /// `kl` is the closed-form KL to `N(0, I)` averaged over the batch.
    pub fn vae_loss(
        &self,
        tape: &mut Tape,
        batch: &[Vec<usize>],
        rng: &mut SeededRng,
        kl_weight: f64,
        train: bool,
    ) -> Result<VaeLoss> {
        if batch.is_empty() {
            return Err(Error::invalid("vae_loss", "empty batch"));
        }
        if !(0.0..=1.0).contains(&kl_weight) {
            return Err(Error::invalid("vae_loss", format!("kl_weight {kl_weight} outside [0, 1]")));
        }
        let (mu, log_var) = self.encoder.encode(tape, batch)?;
        let z = reparam_sample(tape, mu, log_var, rng)?;
        let targets: Vec<Vec<usize>> =
            batch.iter().map(|s| s.iter().copied().chain(std::iter::once(EOS)).collect()).collect();
        let dropout = (train && self.vae.dropout > 0.0).then_some((self.vae.dropout, &mut *rng));
        let (_, recon) = self.decoder.teacher_forced(tape, z, &targets, dropout)?;
        let kl = kl_to_prior(tape, mu, log_var)?;
        let weighted = tape.scale(kl, kl_weight)?;
        let loss = tape.add(recon, weighted)?;
        Ok(VaeLoss { loss, recon, kl, mu, log_var })
    }
}

/// `mu + exp(log_var / 2) ⊙ ε` with `ε ~ N(0, I)` drawn from `rng`.
pub fn reparam_sample(tape: &mut Tape, mu: Var, log_var: Var, rng: &mut SeededRng) -> Result<Var> {
    if tape.shape(mu) != tape.shape(log_var) {
        return Err(Error::Shape {
            op: "reparam_sample",
            lhs: tape.shape(mu).to_vec(),
            rhs: tape.shape(log_var).to_vec(),
        });
    }
    let eps = rng.normal_tensor(&tape.shape(mu).to_vec());
    let eps = tape.constant(eps)?;
    let half = tape.scale(log_var, 0.5)?;
    let std = tape.exp(half)?;
    let noise = tape.mul(std, eps)?;
    tape.add(mu, noise)
}

/// `0.5 · Σ (exp(lv) + mu² − 1 − lv)`, averaged over rows.
pub fn kl_to_prior(tape: &mut Tape, mu: Var, log_var: Var) -> Result<Var> {
    let rows = match tape.shape(mu) {
        [b, _] => *b,
        _ => 1,
    };
    let var = tape.exp(log_var)?;
    let mu_sq = tape.mul(mu, mu)?;
    let a = tape.add(var, mu_sq)?;
    let b = tape.sub(a, log_var)?;
    let c = tape.shift(b, -1.0)?;
    let total = tape.sum(c)?;
    tape.scale(total, 0.5 / rows as f64)
}
