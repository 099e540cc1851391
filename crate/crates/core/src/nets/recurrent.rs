//! Single-layer gated recurrent encoder and decoder over token ids.
//!
//! Batches are laid out time-major: row `t * batch + b` holds position `t` of
//! sequence `b`. Sequences shorter than the batch maximum are padded at the
//! end; the encoder masks padded steps so its final state is the state after
//! each sequence's last real token.

use super::{bind_param, Linear, LinearVars, Parameterized};
use crate::autodiff::{Axis, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;

const LOG_VAR_MIN: f64 = -8.0;
const LOG_VAR_MAX: f64 = 8.0;

#[derive(Clone, Debug, PartialEq)]
pub struct CoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub max_len: usize,
}

impl CoderConfig {
    /// `slack` extra positions are allowed beyond `max_len` (the decoder's
    /// targets carry a trailing end-of-sequence token).
    fn check_tokens(&self, op: &'static str, seqs: &[Vec<usize>], slack: usize) -> Result<()> {
        if seqs.is_empty() {
            return Err(Error::invalid(op, "empty batch"));
        }
        for s in seqs {
            if s.is_empty() {
                return Err(Error::invalid(op, "empty sequence"));
            }
            if s.len() > self.max_len + slack {
                return Err(Error::invalid(op, format!("length {} exceeds {}", s.len(), self.max_len + slack)));
            }
            if let Some(&bad) = s.iter().find(|&&id| id >= self.vocab_size) {
                return Err(Error::invalid(op, format!("token id {bad} outside vocabulary of {}", self.vocab_size)));
            }
        }
        Ok(())
    }
}

/// Update/reset gated cell. Gate blocks are laid out `[reset | update | candidate]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub b_input: Tensor,
    pub b_hidden: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct GruCellVars {
    w_input: Var,
    w_hidden: Var,
    b_input: Var,
    b_hidden: Var,
    hidden: usize,
}

impl GruCell {
    pub fn new(input: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut draw = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_in(-bound, bound)).collect())
                .expect("cell shape")
        };
        GruCell {
            w_input: draw(&[input, 3 * hidden]),
            w_hidden: draw(&[hidden, 3 * hidden]),
            b_input: draw(&[3 * hidden]),
            b_hidden: draw(&[3 * hidden]),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hidden.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<GruCellVars> {
        Ok(GruCellVars {
            w_input: bind_param(tape, &self.w_input, trainable)?,
            w_hidden: bind_param(tape, &self.w_hidden, trainable)?,
            b_input: bind_param(tape, &self.b_input, trainable)?,
            b_hidden: bind_param(tape, &self.b_hidden, trainable)?,
            hidden: self.hidden_dim(),
        })
    }

    fn push_named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.w_input"), &self.w_input));
        out.push((format!("{prefix}.w_hidden"), &self.w_hidden));
        out.push((format!("{prefix}.b_input"), &self.b_input));
        out.push((format!("{prefix}.b_hidden"), &self.b_hidden));
    }

    fn push_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.w_input);
        out.push(&mut self.w_hidden);
        out.push(&mut self.b_input);
        out.push(&mut self.b_hidden);
    }
}

impl GruCellVars {
    /// Input projection `x·W_in + b_in` for a block of rows.
    pub fn project_input(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, self.w_input)?;
        tape.add_bias(xw, self.b_input)
    }

    /// One step from a precomputed input projection. `mask`, if given, is a
    /// `[batch, hidden]` 0/1 constant; rows with 0 keep their previous state.
    pub fn step(&self, tape: &mut Tape, gx: Var, h: Var, mask: Option<Var>) -> Result<Var> {
        let n = self.hidden;
        let hw = tape.matmul(h, self.w_hidden)?;
        let gh = tape.add_bias(hw, self.b_hidden)?;
        let gx_ru = tape.slice(gx, Axis::Cols, 0, 2 * n)?;
        let gh_ru = tape.slice(gh, Axis::Cols, 0, 2 * n)?;
        let ru_pre = tape.add(gx_ru, gh_ru)?;
        let ru = tape.sigmoid(ru_pre)?;
        let reset = tape.slice(ru, Axis::Cols, 0, n)?;
        let update = tape.slice(ru, Axis::Cols, n, 2 * n)?;
        let gx_c = tape.slice(gx, Axis::Cols, 2 * n, 3 * n)?;
        let gh_c = tape.slice(gh, Axis::Cols, 2 * n, 3 * n)?;
        let gated = tape.mul(reset, gh_c)?;
        let cand_pre = tape.add(gx_c, gated)?;
        let cand = tape.tanh(cand_pre)?;
        // h' = h + u ⊙ (c − h)
        let delta = tape.sub(cand, h)?;
        let mut step = tape.mul(update, delta)?;
        if let Some(m) = mask {
            step = tape.mul(step, m)?;
        }
        tape.add(h, step)
    }

    fn push_vars(&self, out: &mut Vec<Var>) {
        out.extend([self.w_input, self.w_hidden, self.b_input, self.b_hidden]);
    }
}

fn time_major(seqs: &[Vec<usize>], steps: usize) -> Vec<usize> {
    let mut ids = Vec::with_capacity(steps * seqs.len());
    for t in 0..steps {
        for s in seqs {
            ids.push(s.get(t).copied().unwrap_or(PAD));
        }
    }
    ids
}

/// Encoder `q(z|x)`: returns a diagonal Gaussian per sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentEncoder {
    config: CoderConfig,
    embedding: Tensor,
    cell: GruCell,
    head: Linear,
}

pub struct RecurrentEncoderVars<'a> {
    coder: &'a RecurrentEncoder,
    embedding: Var,
    cell: GruCellVars,
    head: LinearVars,
}

impl RecurrentEncoder {
    pub fn new(config: CoderConfig, rng: &mut SeededRng) -> Self {
        let embedding = rng.normal_tensor(&[config.vocab_size, config.embed_dim]);
        let cell = GruCell::new(config.embed_dim, config.hidden_dim, rng);
        let head = Linear::new(config.hidden_dim, 2 * config.latent_dim, rng);
        RecurrentEncoder { config, embedding, cell, head }
    }

    pub fn config(&self) -> &CoderConfig {
        &self.config
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<RecurrentEncoderVars<'_>> {
        Ok(RecurrentEncoderVars {
            coder: self,
            embedding: bind_param(tape, &self.embedding, trainable)?,
            cell: self.cell.bind(tape, trainable)?,
            head: self.head.bind(tape, trainable)?,
        })
    }

    /// Posterior parameters `(mu, log_var)` of one sequence, off-tape.
    pub fn encode_seq(&self, tokens: &[usize]) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let (mu, lv) = vars.encode(&mut tape, &[tokens.to_vec()])?;
        let d = self.config.latent_dim;
        Ok((
            tape.value(mu).clone().reshape(vec![d])?,
            tape.value(lv).clone().reshape(vec![d])?,
        ))
    }

    /// Posterior means of a batch as a `[batch, d]` tensor, off-tape.
    pub fn encode_means(&self, seqs: &[Vec<usize>]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let (mu, _) = vars.encode(&mut tape, seqs)?;
        Ok(tape.value(mu).clone())
    }
}

impl RecurrentEncoderVars<'_> {
    /// `(mu, log_var)`, each `[batch, d]`; log-variance clamped to `[-8, 8]`.
    pub fn encode(&self, tape: &mut Tape, seqs: &[Vec<usize>]) -> Result<(Var, Var)> {
        let cfg = &self.coder.config;
        cfg.check_tokens("encode_seq", seqs, 0)?;
        let batch = seqs.len();
        let steps = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let n = cfg.hidden_dim;
        let emb = tape.embed_lookup(self.embedding, &time_major(seqs, steps))?;
        let gx_all = self.cell.project_input(tape, emb)?;
        let mut h = tape.constant(Tensor::zeros(&[batch, n]))?;
        for t in 0..steps {
            let gx = tape.slice(gx_all, Axis::Rows, t * batch, (t + 1) * batch)?;
            let mask = if seqs.iter().all(|s| s.len() > t) {
                None
            } else {
                let mut m = vec![0.0; batch * n];
                for (b, s) in seqs.iter().enumerate() {
                    if s.len() > t {
                        m[b * n..(b + 1) * n].fill(1.0);
                    }
                }
                Some(tape.constant(Tensor::matrix(batch, n, m)?)?)
            };
            h = self.cell.step(tape, gx, h, mask)?;
        }
        let d = cfg.latent_dim;
        let stats = self.head.forward(tape, h)?;
        let mu = tape.slice(stats, Axis::Cols, 0, d)?;
        let raw_lv = tape.slice(stats, Axis::Cols, d, 2 * d)?;
        let log_var = tape.clamp(raw_lv, LOG_VAR_MIN, LOG_VAR_MAX)?;
        Ok((mu, log_var))
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.embedding];
        self.cell.push_vars(&mut out);
        self.head.push_vars(&mut out);
        out
    }
}

impl Parameterized for RecurrentEncoder {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("vae.encoder.embedding".to_string(), &self.embedding)];
        self.cell.push_named("vae.encoder.cell", &mut out);
        self.head.push_named("vae.encoder.head", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        self.cell.push_mut(&mut out);
        self.head.push_mut(&mut out);
        out
    }
}

/// Decoder `p(x|z)`: the latent sets the initial state and is fed to the cell
/// at every step alongside the previous token.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentDecoder {
    config: CoderConfig,
    embedding: Tensor,
    latent_in: Tensor,
    init: Linear,
    cell: GruCell,
    output: Linear,
}

pub struct RecurrentDecoderVars<'a> {
    coder: &'a RecurrentDecoder,
    embedding: Var,
    latent_in: Var,
    init: LinearVars,
    cell: GruCellVars,
    output: LinearVars,
}

impl RecurrentDecoder {
    pub fn new(config: CoderConfig, rng: &mut SeededRng) -> Self {
        let embedding = rng.normal_tensor(&[config.vocab_size, config.embed_dim]);
        let bound = 1.0 / (config.latent_dim as f64).sqrt();
        let n = config.latent_dim * 3 * config.hidden_dim;
        let latent_in = Tensor::matrix(
            config.latent_dim,
            3 * config.hidden_dim,
            (0..n).map(|_| rng.uniform_in(-bound, bound)).collect(),
        )
        .expect("latent projection shape");
        let init = Linear::new(config.latent_dim, config.hidden_dim, rng);
        let cell = GruCell::new(config.embed_dim, config.hidden_dim, rng);
        let output = Linear::new(config.hidden_dim, config.vocab_size, rng);
        RecurrentDecoder { config, embedding, latent_in, init, cell, output }
    }

    pub fn config(&self) -> &CoderConfig {
        &self.config
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<RecurrentDecoderVars<'_>> {
        Ok(RecurrentDecoderVars {
            coder: self,
            embedding: bind_param(tape, &self.embedding, trainable)?,
            latent_in: bind_param(tape, &self.latent_in, trainable)?,
            init: self.init.bind(tape, trainable)?,
            cell: self.cell.bind(tape, trainable)?,
            output: self.output.bind(tape, trainable)?,
        })
    }

    /// Teacher-forced logits `[len(targets), V]` for one latent, off-tape.
    pub fn teacher_forced_logits(&self, z: &Tensor, targets: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let zv = tape.constant(z.clone().reshape(vec![1, self.config.latent_dim])?)?;
        let (logits, _) = vars.teacher_forced(&mut tape, zv, &[targets.to_vec()], None)?;
        Ok(tape.value(logits).clone())
    }

    /// Greedy decoding of every row of `z: [batch, d]`. Each output stops at
    /// the end-of-sequence token (not included) or at `max_len` tokens.
    pub fn greedy(&self, z: &Tensor) -> Result<Vec<Vec<usize>>> {
        if !z.is_finite() {
            return Err(Error::NonFinite { op: "decode_seq" });
        }
        let d = self.config.latent_dim;
        let batch = match z.shape() {
            [b, dd] if *dd == d => *b,
            [dd] if *dd == d => 1,
            s => return Err(Error::Shape { op: "decode_seq", lhs: s.to_vec(), rhs: vec![d] }),
        };
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let zv = tape.constant(z.clone().reshape(vec![batch, d])?)?;
        let z_proj = tape.matmul(zv, vars.latent_in)?;
        let h0 = vars.init.forward(&mut tape, zv)?;
        let mut h = tape.tanh(h0)?;
        let mut prev = vec![BOS; batch];
        let mut out = vec![Vec::new(); batch];
        let mut done = vec![false; batch];
        for _ in 0..self.config.max_len {
            let emb = tape.embed_lookup(vars.embedding, &prev)?;
            let gx = vars.cell.project_input(&mut tape, emb)?;
            let gx = tape.add(gx, z_proj)?;
            h = vars.cell.step(&mut tape, gx, h, None)?;
            let logits = vars.output.forward(&mut tape, h)?;
            let lv = tape.value(logits);
            for b in 0..batch {
                if done[b] {
                    continue;
                }
                let row = lv.row(b);
                let best = argmax(row);
                if best == EOS {
                    done[b] = true;
                } else {
                    out[b].push(best);
                    prev[b] = best;
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(out)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl RecurrentDecoderVars<'_> {
    /// Logits `[steps * batch, V]` (time-major) for predicting each target
    /// from the previous one, starting at `BOS`, and the mean per-token
    /// cross-entropy over non-padded positions.
    ///
    /// `dropout` zeroes input embeddings with the given probability.
    pub fn teacher_forced(
        &self,
        tape: &mut Tape,
        z: Var,
        targets: &[Vec<usize>],
        dropout: Option<(f64, &mut SeededRng)>,
    ) -> Result<(Var, Var)> {
        let cfg = &self.coder.config;
        cfg.check_tokens("decode_seq", targets, 1)?;
        let batch = targets.len();
        if tape.shape(z) != [batch, cfg.latent_dim] {
            return Err(Error::Shape {
                op: "decode_seq",
                lhs: tape.shape(z).to_vec(),
                rhs: vec![batch, cfg.latent_dim],
            });
        }
        let steps = targets.iter().map(Vec::len).max().unwrap_or(0);
        let inputs: Vec<Vec<usize>> = targets
            .iter()
            .map(|t| std::iter::once(BOS).chain(t[..t.len() - 1].iter().copied()).collect())
            .collect();
        let mut emb = tape.embed_lookup(self.embedding, &time_major(&inputs, steps))?;
        if let Some((p, rng)) = dropout {
            if p > 0.0 {
                let shape = tape.shape(emb).to_vec();
                let keep = 1.0 / (1.0 - p);
                let n: usize = shape.iter().product();
                let mask = (0..n).map(|_| if rng.bernoulli(p) { 0.0 } else { keep }).collect();
                let mask = tape.constant(Tensor::new(shape, mask)?)?;
                emb = tape.mul(emb, mask)?;
            }
        }
        let gx_all = self.cell.project_input(tape, emb)?;
        let z_proj = tape.matmul(z, self.latent_in)?;
        let h0 = self.init.forward(tape, z)?;
        let mut h = tape.tanh(h0)?;
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let gx = tape.slice(gx_all, Axis::Rows, t * batch, (t + 1) * batch)?;
            let gx = tape.add(gx, z_proj)?;
            h = self.cell.step(tape, gx, h, None)?;
            states.push(h);
        }
        let hs = tape.concat(&states, Axis::Rows)?;
        let logits = self.output.forward(tape, hs)?;
        let mut aligned = Vec::with_capacity(steps * batch);
        for t in 0..steps {
            for tg in targets {
                aligned.push(tg.get(t).copied());
            }
        }
        let loss = tape.cross_entropy(logits, &aligned)?;
        Ok((logits, loss))
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.embedding, self.latent_in];
        self.init.push_vars(&mut out);
        self.cell.push_vars(&mut out);
        self.output.push_vars(&mut out);
        out
    }
}

impl Parameterized for RecurrentDecoder {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("vae.decoder.embedding".to_string(), &self.embedding),
            ("vae.decoder.latent_in".to_string(), &self.latent_in),
        ];
        self.init.push_named("vae.decoder.init", &mut out);
        self.cell.push_named("vae.decoder.cell", &mut out);
        self.output.push_named("vae.decoder.output", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding, &mut self.latent_in];
        self.init.push_mut(&mut out);
        self.cell.push_mut(&mut out);
        self.output.push_mut(&mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> CoderConfig {
        CoderConfig { vocab_size: 12, embed_dim: 6, hidden_dim: 8, latent_dim: 4, max_len: 64 }
    }

    #[test]
    fn encoding_is_deterministic_and_clamped() {
        let enc = RecurrentEncoder::new(config(), &mut SeededRng::new(0));
        let a = enc.encode_seq(&[3, 4, 5]).unwrap();
        let b = enc.encode_seq(&[3, 4, 5]).unwrap();
        assert_eq!(a, b);
        assert!(a.1.data().iter().all(|v| (-8.0..=8.0).contains(v)));
        let single = enc.encode_seq(&[7]).unwrap();
        assert_eq!(single.0.shape(), &[4]);
    }

    #[test]
    fn encoder_rejects_bad_input() {
        let enc = RecurrentEncoder::new(config(), &mut SeededRng::new(0));
        assert!(enc.encode_seq(&[]).is_err());
        assert!(enc.encode_seq(&[3, 12]).is_err());
        assert!(enc.encode_seq(&vec![3; 65]).is_err());
    }

    #[test]
    fn padded_batch_matches_individual_encodings() {
        let enc = RecurrentEncoder::new(config(), &mut SeededRng::new(4));
        let seqs = vec![vec![3, 4, 5, 6, 7], vec![8, 9], vec![10]];
        let batch = enc.encode_means(&seqs).unwrap();
        for (i, s) in seqs.iter().enumerate() {
            let (mu, _) = enc.encode_seq(s).unwrap();
            for (a, b) in mu.data().iter().zip(batch.row(i)) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn teacher_forced_logits_align_with_targets() {
        let dec = RecurrentDecoder::new(config(), &mut SeededRng::new(1));
        let z = Tensor::vector(vec![0.1, -0.2, 0.3, 0.0]);
        let logits = dec.teacher_forced_logits(&z, &[3, 4, 5, EOS]).unwrap();
        assert_eq!(logits.shape(), &[4, 12]);
    }

    #[test]
    fn greedy_output_respects_length_cap() {
        let mut cfg = config();
        cfg.max_len = 5;
        let dec = RecurrentDecoder::new(cfg, &mut SeededRng::new(2));
        let z = SeededRng::new(3).normal_tensor(&[16, 4]);
        for seq in dec.greedy(&z).unwrap() {
            assert!(seq.len() <= 5);
            assert!(!seq.contains(&EOS));
        }
    }
}
