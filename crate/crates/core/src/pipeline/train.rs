//! The training stage: encode both domains, fit the flow, update jointly.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::autodiff::{Axis, Tape, Var};
use crate::config::{Config, TaskSpec};
use crate::error::{Error, Result};
use crate::flow::flow_loss;
use crate::lexico::{joint_step, JointLosses, LexicoState, Mode};
use crate::nets::Parameterized;
use crate::optim::Optimizer;
use crate::rng::SeededRng;

use super::checkpoint::{Checkpoint, Entry};
use super::task::{gauss_source, gauss_target, Model, TaskData, TextData, TRAIN_STREAM};

pub const LOG_HEADER: &str = "step,l_vae,l_flow,lambda,wall_ms";

/// One logged training step. `wall_ms` is time since the start of the
/// current process's run and is not reproducible.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub l_vae: f64,
    pub l_flow: f64,
    pub lambda: f64,
    pub wall_ms: f64,
}

impl LogRow {
    pub fn csv(&self) -> String {
        format!("{},{},{},{},{:.3}\n", self.step, self.l_vae, self.l_flow, self.lambda, self.wall_ms)
    }
}

/// Which parameter groups a step updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Joint,
    /// First half of separate training.
    VaeOnly,
    /// Second half: frozen encoder, detached latents.
    FlowOnly,
}

pub struct Trainer {
    pub config: Config,
    pub spec: TaskSpec,
    pub data: TaskData,
    pub model: Model,
    pub optimizer: Optimizer,
    pub lexico: LexicoState,
    pub rng: SeededRng,
    /// Number of completed steps.
    pub step: usize,
}

impl Trainer {
    pub fn new(config: &Config) -> Result<Self> {
        let spec = config.settings()?;
        let data = TaskData::build(&spec)?;
        let model = Model::init(&spec, &data)?;
        let optimizer = match spec.optimizer.as_str() {
            "sgd" => Optimizer::Sgd,
            _ => Optimizer::adam(model.num_params()),
        };
        let lexico = LexicoState::new(spec.mode, spec.lr, spec.constraint);
        let rng = SeededRng::new(spec.seed).fork(TRAIN_STREAM);
        Ok(Trainer { config: config.clone(), spec, data, model, optimizer, lexico, rng, step: 0 })
    }

    /// Iterations for the whole run. Separate training on a text task runs a
    /// VAE phase and then a flow phase.
    pub fn total_iterations(&self) -> usize {
        match self.phase_split() {
            Some(_) => self.spec.iterations + self.spec.flow_phase_iterations(),
            None => self.spec.iterations,
        }
    }

    fn phase_split(&self) -> Option<usize> {
        (self.spec.mode == Mode::Separate && self.data.text().is_some()).then_some(self.spec.iterations)
    }

    pub fn phase(&self) -> Phase {
        match self.phase_split() {
            Some(split) if self.step < split => Phase::VaeOnly,
            Some(_) => Phase::FlowOnly,
            None => Phase::Joint,
        }
    }

    /// Runs one update and returns its log row (with `wall_ms` zero).
    pub fn step_once(&mut self) -> Result<LogRow> {
        let phase = self.phase();
        if self.phase_split() == Some(self.step) {
            // fresh moments for the flow phase, so VAE momentum cannot leak
            // into a frozen encoder
            if let Optimizer::Adam(st) = &mut self.optimizer {
                *st = crate::optim::AdamState::new(st.m.len());
            }
        }
        let losses = match &self.data {
            TaskData::Gauss { mu1, sigma1 } => gauss_losses(&self.model, &self.spec, mu1, *sigma1, &mut self.rng)?,
            TaskData::Text(t) => text_losses(&self.model, &self.spec, t, phase, self.step, &mut self.rng)?,
        };
        let worst = losses.l_vae.max(losses.l_flow);
        if worst > self.spec.divergence_threshold {
            return Err(Error::Diverged { step: self.step, loss: worst });
        }
        let mut params = self.model.params_mut();
        let report = joint_step(&mut params, &losses, &mut self.lexico, &mut self.optimizer)?;
        let row = LogRow { step: self.step, l_vae: losses.l_vae, l_flow: losses.l_flow, lambda: report.lambda, wall_ms: 0.0 };
        self.step += 1;
        Ok(row)
    }

    /// Steps until `until` completed steps, handing every row to `on_row`.
    pub fn run_until(&mut self, until: usize, mut on_row: impl FnMut(&Trainer, LogRow) -> Result<()>) -> Result<()> {
        while self.step < until {
            let row = self.step_once()?;
            on_row(self, row)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_text: self.config.to_text(),
            step: self.step as u64,
            params: self
                .model
                .named_params()
                .into_iter()
                .map(|(name, t)| Entry { name, shape: t.shape().to_vec(), data: t.data().to_vec() })
                .collect(),
            optimizer: self.optimizer.clone(),
            lexico: self.lexico.clone(),
            rng: self.rng.state(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Trainer::resume(ck, &Config::resolve(Some(&ck.config_text), &[], None)?)
    }

    /// Restores `ck` under a possibly edited `config` (e.g. a larger
    /// iteration budget). The model shapes must still match.
    pub fn resume(ck: &Checkpoint, config: &Config) -> Result<Self> {
        let mut trainer = Trainer::new(config)?;
        trainer.model.load_params(&ck.params)?;
        if let (Optimizer::Adam(st), n) = (&ck.optimizer, trainer.model.num_params()) {
            if st.m.len() != n || st.v.len() != n {
                return Err(Error::Checkpoint("optimizer moments do not match the model".into()));
            }
        }
        trainer.optimizer = ck.optimizer.clone();
        trainer.lexico = ck.lexico.clone();
        trainer.rng = SeededRng::from_state(ck.rng);
        trainer.step = ck.step as usize;
        Ok(trainer)
    }
}

fn gauss_losses(model: &Model, spec: &TaskSpec, mu1: &[f64], sigma1: f64, rng: &mut SeededRng) -> Result<JointLosses> {
    let b = spec.batch_size;
    let z0 = gauss_source(rng, b, mu1.len());
    let z1 = gauss_target(rng, b, mu1, sigma1);
    let mut tape = Tape::new();
    let field = model.flow.field.bind(&mut tape, true)?;
    let z0 = tape.constant(z0)?;
    let z1 = tape.constant(z1)?;
    let loss = flow_loss(&field, &mut tape, z0, z1, rng)?;
    let g_flow = flat_grads(&tape, loss, &field.vars())?;
    Ok(JointLosses { l_vae: 0.0, l_flow: tape.value(loss).item(), g_vae: vec![0.0; g_flow.len()], g_flow })
}

fn text_losses(
    model: &Model,
    spec: &TaskSpec,
    data: &TextData,
    phase: Phase,
    step: usize,
    rng: &mut SeededRng,
) -> Result<JointLosses> {
    let vae = model.vae.as_ref().ok_or_else(|| Error::invalid("train", "text task without a VAE"))?;
    let b = spec.batch_size;
    let mut batch: Vec<Vec<usize>> = (0..b).map(|_| data.source[rng.below(data.source.len())].clone()).collect();
    batch.extend((0..b).map(|_| data.target[rng.below(data.target.len())].clone()));

    let mut tape = Tape::new();
    let vae_vars = vae.bind(&mut tape, phase != Phase::FlowOnly)?;
    let field = model.flow.field.bind(&mut tape, phase != Phase::VaeOnly)?;
    let out = vae_vars.vae_loss(&mut tape, &batch, rng, vae.kl_weight(step), phase != Phase::FlowOnly)?;

    let mut z1 = tape.slice(out.mu, Axis::Rows, b, 2 * b)?;
    let mut z0 = if data.prior_source {
        let noise = rng.normal_tensor(&[b, vae.latent_dim()]);
        tape.constant(noise)?
    } else {
        tape.slice(out.mu, Axis::Rows, 0, b)?
    };
    if phase != Phase::Joint {
        z0 = tape.detach(z0);
        z1 = tape.detach(z1);
    }
    let l_flow = flow_loss(&field, &mut tape, z0, z1, rng)?;

    let mut vars = vae_vars.vars();
    vars.extend(field.vars());
    let n: usize = vars.iter().map(|&v| tape.value(v).numel()).sum();
    let g_vae = if phase == Phase::FlowOnly { vec![0.0; n] } else { flat_grads(&tape, out.loss, &vars)? };
    let g_flow = if phase == Phase::VaeOnly { vec![0.0; n] } else { flat_grads(&tape, l_flow, &vars)? };
    Ok(JointLosses { l_vae: tape.value(out.loss).item(), l_flow: tape.value(l_flow).item(), g_vae, g_flow })
}

fn flat_grads(tape: &Tape, loss: Var, vars: &[Var]) -> Result<Vec<f64>> {
    let grads = tape.backward(loss)?;
    let mut out = Vec::new();
    for &v in vars {
        grads.extend_into(v, &mut out);
    }
    Ok(out)
}

/// File names inside a run directory.
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.lfv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Trains to completion inside `run_dir`: appends log rows to the metrics
/// file, writes periodic checkpoints and a final one.
pub fn train_in_dir(trainer: &mut Trainer, run_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let metrics_path = run_dir.join(METRICS_FILE);
    let fresh = !metrics_path.exists();
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    if fresh {
        writeln!(log, "{LOG_HEADER}").map_err(|e| Error::io(&metrics_path, e))?;
    }
    let start = Instant::now();
    let total = trainer.total_iterations();
    let log_every = trainer.spec.log_every.max(1);
    let ckpt_every = trainer.spec.checkpoint_every;
    trainer.run_until(total, |t, mut row| {
        row.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        if row.step % log_every == 0 || row.step + 1 == total {
            log.write_all(row.csv().as_bytes()).map_err(|e| Error::io(&metrics_path, e))?;
        }
        if ckpt_every > 0 && t.step % ckpt_every == 0 && t.step < total {
            let dir = run_dir.join(CHECKPOINT_DIR);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            t.checkpoint().save(&dir.join(format!("step_{:06}.lfv", t.step)))?;
        }
        Ok(())
    })?;
    log.flush().map_err(|e| Error::io(&metrics_path, e))?;
    let path = run_dir.join(CHECKPOINT_FILE);
    trainer.checkpoint().save(&path)?;
    Ok(path)
}

/// Reads a metrics log back into rows.
pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(Error::invalid("read_log", format!("{} lacks the metrics header", path.display())));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let num = |i: usize| f.get(i).and_then(|s| s.parse::<f64>().ok());
            match (f.first().and_then(|s| s.parse().ok()), num(1), num(2), num(3), num(4)) {
                (Some(step), Some(l_vae), Some(l_flow), Some(lambda), Some(wall_ms)) => {
                    Ok(LogRow { step, l_vae, l_flow, lambda, wall_ms })
                }
                _ => Err(Error::invalid("read_log", format!("malformed row {line:?}"))),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TaskKind;

    fn tiny(task: TaskKind, extra: &[(&str, &str)]) -> Config {
        let mut pairs: Vec<(String, String)> = vec![
            ("iterations".into(), "3".into()),
            ("batch_size".into(), "4".into()),
            ("hidden_dims".into(), "8".into()),
            ("corpus_size".into(), "300".into()),
            ("embed_dim".into(), "6".into()),
            ("hidden_dim".into(), "8".into()),
            ("latent_dim".into(), if task == TaskKind::Gauss2d { "2" } else { "3" }.into()),
        ];
        pairs.extend(extra.iter().map(|(k, v)| (k.to_string(), v.to_string())));
        Config::resolve(None, &pairs, Some(task)).unwrap()
    }

    #[test]
    fn zero_iterations_leave_initialization() {
        let cfg = tiny(TaskKind::StyleTransfer, &[("iterations", "0")]);
        let mut t = Trainer::new(&cfg).unwrap();
        let init = t.model.clone();
        let dir = tempfile::tempdir().unwrap();
        train_in_dir(&mut t, dir.path()).unwrap();
        assert_eq!(t.model, init);
        let ck = Checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(Trainer::from_checkpoint(&ck).unwrap().model, init);
    }

    #[test]
    fn gradients_cover_every_parameter() {
        for task in [TaskKind::Gauss2d, TaskKind::LengthControl, TaskKind::StyleTransfer] {
            let mut t = Trainer::new(&tiny(task, &[])).unwrap();
            let before = t.model.clone();
            t.step_once().unwrap();
            assert_ne!(t.model, before, "{task:?}");
            assert_eq!(t.lexico.lambda_history.len(), 1);
        }
    }

    #[test]
    fn separate_mode_runs_two_phases() {
        let cfg = tiny(TaskKind::StyleTransfer, &[("mode", "separate"), ("flow_iterations", "2")]);
        let mut t = Trainer::new(&cfg).unwrap();
        assert_eq!(t.total_iterations(), 5);
        assert_eq!(t.phase(), Phase::VaeOnly);
        let flow_before = t.model.flow.clone();
        for _ in 0..3 {
            t.step_once().unwrap();
        }
        assert_eq!(t.model.flow, flow_before);
        assert_eq!(t.phase(), Phase::FlowOnly);
        let vae_before = t.model.vae.clone();
        t.step_once().unwrap();
        assert_eq!(t.model.vae, vae_before);
        assert_ne!(t.model.flow, flow_before);
    }

    #[test]
    fn divergence_halts_with_step() {
        let cfg = tiny(TaskKind::Gauss2d, &[("divergence_threshold", "1e-3")]);
        let mut t = Trainer::new(&cfg).unwrap();
        match t.step_once() {
            Err(Error::Diverged { step: 0, loss }) => assert!(loss > 1e-3),
            other => panic!("expected divergence, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn log_round_trips() {
        let cfg = tiny(TaskKind::Gauss2d, &[]);
        let mut t = Trainer::new(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        train_in_dir(&mut t, dir.path()).unwrap();
        let rows = read_log(&dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(rows.iter().all(|r| r.lambda >= 0.0));
    }
}
