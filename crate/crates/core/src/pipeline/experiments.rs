//! Evaluation and the ablation drivers built on train + sample.

use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::autodiff::Tensor;
use crate::config::{Config, TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::flow::{analytic_gauss_velocity, straightness, Direction};
use crate::lexico::Mode;
use crate::metrics::{length_success, sliced_wasserstein, style_accuracy, MetricReport, NgramLm, StyleJudge};
use crate::rng::SeededRng;

use super::corpus::Split;
use super::sample::{sample, SampleRequest, Samples};
use super::task::{gauss_target, Model, TaskData};
use super::train::{train_in_dir, LogRow, Trainer};

/// Step counts of the step sweep.
pub const SWEEP_STEPS: &[usize] = &[1, 2, 5, 10, 20, 50, 100];
/// Fine Euler grid used for the straightness metric.
const STRAIGHTNESS_STEPS: usize = 20;
const STRAIGHTNESS_ROWS: usize = 64;

pub const SWEEP_STEPS_FILE: &str = "sweep_steps.csv";
pub const SWEEP_LAMBDA_FILE: &str = "sweep_lambda.csv";
pub const COMPARE_FILE: &str = "compare_training.csv";
pub const EVAL_FILE: &str = "eval.csv";

/// Task-level scorers built once from the training data.
pub struct Evaluator {
    spec: TaskSpec,
    lm: Option<NgramLm>,
    train_ppl: Option<f64>,
    judge: Option<StyleJudge>,
}

impl Evaluator {
    pub fn new(spec: &TaskSpec, data: &TaskData) -> Self {
        let mut ev = Evaluator { spec: spec.clone(), lm: None, train_ppl: None, judge: None };
        if let Some(t) = data.text() {
            let train = t.corpus.seqs(Split::Train);
            let v = t.corpus.vocab.len();
            let lm = NgramLm::train(&train, v, spec.ngram_order, spec.ngram_smoothing);
            ev.train_ppl = Some(lm.perplexity(&train));
            ev.lm = Some(lm);
            if spec.task == TaskKind::StyleTransfer {
                let (tr, trl) = (train, t.corpus.labels(Split::Train));
                let (va, val) = (t.corpus.seqs(Split::Val), t.corpus.labels(Split::Val));
                ev.judge = Some(StyleJudge::train((&tr, &trl), (&va, &val), v));
            }
        }
        ev
    }

    pub fn judge(&self) -> Option<&StyleJudge> {
        self.judge.as_ref()
    }

    pub fn lm(&self) -> Option<&NgramLm> {
        self.lm.as_ref()
    }

    pub fn train_ppl(&self) -> Option<f64> {
        self.train_ppl
    }

    /// Samples with `seed` and scores the result.
    pub fn evaluate(&self, model: &Model, data: &TaskData, req: &SampleRequest, seed: u64) -> Result<MetricReport> {
        let samples = sample(model, data, req, &mut SeededRng::new(seed))?;
        self.score(model, data, req, &samples, seed)
    }

    pub fn score(&self, model: &Model, data: &TaskData, req: &SampleRequest, samples: &Samples, seed: u64) -> Result<MetricReport> {
        let mut report = MetricReport::new(self.spec.task.name(), req.n, seed, req.steps);
        let Some(end) = samples.endpoints() else {
            return Err(Error::invalid("evaluate", "no samples to score"));
        };
        match data {
            TaskData::Gauss { mu1, sigma1 } => {
                let mut rng = SeededRng::new(seed).fork(11);
                let reference = match req.direction {
                    Direction::Forward => gauss_target(&mut rng, req.n, mu1, *sigma1),
                    Direction::Backward => rng.normal_tensor(&[req.n, mu1.len()]),
                };
                report.push("sliced_wasserstein", sliced_wasserstein(end, &reference, self.spec.sw_projections, &mut rng)?);
                let mse = gauss_velocity_mse(model, mu1, *sigma1)?;
                report.push("velocity_mse", mse);
                report.push("velocity_mse_ratio", mse / gauss_displacement_energy(mu1, *sigma1));
                let norm = (0..req.n).map(|i| end.row(i).iter().map(|x| x * x).sum::<f64>().sqrt()).sum::<f64>();
                report.push("mean_endpoint_norm", norm / req.n as f64);
            }
            TaskData::Text(_) => {
                let out = &samples.decoded;
                if self.spec.task == TaskKind::LengthControl {
                    report.push("length_success", length_success(out, self.spec.target_length)?);
                } else {
                    let target = match req.direction {
                        Direction::Forward => self.spec.target_style,
                        Direction::Backward => self.spec.source_style,
                    };
                    let judge = self.judge.as_ref().expect("style task has a judge");
                    report.push("style_accuracy", style_accuracy(out, judge, target)?);
                }
                let mean_len = out.iter().map(Vec::len).sum::<usize>() as f64 / out.len() as f64;
                report.push("mean_length", mean_len);
                let lm = self.lm.as_ref().expect("text task has a language model");
                report.push("ppl", lm.perplexity(out));
                report.push("train_ppl", self.train_ppl.unwrap_or(f64::NAN));
            }
        }
        if let (Some(_), Some(starts)) = (&samples.trajectory, &samples.starts) {
            let rows = starts.shape()[0].min(STRAIGHTNESS_ROWS);
            let head = Tensor::new(vec![rows, starts.shape()[1]], starts.data()[..rows * starts.shape()[1]].to_vec())?;
            report.push("straightness", straightness(&model.flow.field, &head, STRAIGHTNESS_STEPS)?);
        }
        report.validate()?;
        Ok(report)
    }
}

/// `E‖z1 − z0‖²` for the Gaussian pair: `‖mu1‖² + d·(1 + sigma1²)`.
pub fn gauss_displacement_energy(mu1: &[f64], sigma1: f64) -> f64 {
    mu1.iter().map(|m| m * m).sum::<f64>() + mu1.len() as f64 * (1.0 + sigma1 * sigma1)
}

/// Mean squared error of the learned field against the analytic optimum on
/// a grid: `t ∈ {0, 0.1, …, 0.9}` and, per `t`, a 9×9 lattice over ±2
/// marginal standard deviations around `t·mu1` (first two coordinates;
/// the rest sit at the marginal mean).
pub fn gauss_velocity_mse(model: &Model, mu1: &[f64], sigma1: f64) -> Result<f64> {
    let d = mu1.len();
    let lattice: Vec<f64> = (0..9).map(|i| -2.0 + 0.5 * i as f64).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for ti in 0..10 {
        let t = ti as f64 / 10.0;
        let std = (t * t * sigma1 * sigma1 + (1.0 - t) * (1.0 - t)).sqrt();
        let mut points = Vec::new();
        for &u in &lattice {
            for &w in &lattice {
                let mut z: Vec<f64> = mu1.iter().map(|m| t * m).collect();
                z[0] += std * u;
                if d > 1 {
                    z[1] += std * w;
                }
                points.push(z);
            }
        }
        let rows = points.len();
        let z = Tensor::new(vec![rows, d], points.concat())?;
        let v = model.flow.field.eval(&z, t)?;
        for (i, p) in points.iter().enumerate() {
            let exact = analytic_gauss_velocity(mu1, sigma1, p, t)?;
            total += v.row(i).iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// One row of the step sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub steps: usize,
    /// Median of three timed sampling runs.
    pub wall_ms: f64,
    pub report: MetricReport,
}

/// Times `sample` at each step count (three repetitions, median) and scores
/// the samples. Quality values depend only on `seed`.
pub fn timing_sweep(
    model: &Model,
    data: &TaskData,
    evaluator: &Evaluator,
    step_counts: &[usize],
    n: usize,
    seed: u64,
) -> Result<Vec<TimingRow>> {
    step_counts
        .iter()
        .map(|&steps| {
            let req = SampleRequest::forward(n, steps);
            let mut times = Vec::with_capacity(3);
            let mut kept = None;
            for _ in 0..3 {
                let start = Instant::now();
                let s = sample(model, data, &req, &mut SeededRng::new(seed))?;
                times.push(start.elapsed().as_secs_f64() * 1e3);
                kept.get_or_insert(s);
            }
            times.sort_by(f64::total_cmp);
            let report = evaluator.score(model, data, &req, &kept.expect("three runs"), seed)?;
            Ok(TimingRow { steps, wall_ms: times[1], report })
        })
        .collect()
}

/// Header plus one row per entry; every entry must carry the same metrics.
pub fn wide_csv(key_header: &[&str], rows: &[(Vec<String>, Vec<(String, f64)>)]) -> Result<String> {
    let Some((_, first)) = rows.first() else {
        return Ok(format!("{}\n", key_header.join(",")));
    };
    let names: Vec<&str> = first.iter().map(|(k, _)| k.as_str()).collect();
    let mut out = format!("{},{}\n", key_header.join(","), names.join(","));
    for (keys, values) in rows {
        let these: Vec<&str> = values.iter().map(|(k, _)| k.as_str()).collect();
        if these != names {
            return Err(Error::invalid("wide_csv", format!("metric columns differ: {these:?} vs {names:?}")));
        }
        let vals: Vec<String> = values.iter().map(|(_, v)| v.to_string()).collect();
        out.push_str(&format!("{},{}\n", keys.join(","), vals.join(",")));
    }
    Ok(out)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn timing_csv(rows: &[TimingRow]) -> Result<String> {
    let wide: Vec<(Vec<String>, Vec<(String, f64)>)> =
        rows.iter().map(|r| (vec![r.steps.to_string(), format!("{:.3}", r.wall_ms)], r.report.values.clone())).collect();
    wide_csv(&["steps", "wall_ms"], &wide)
}

/// Runs independent jobs on up to `threads` workers, preserving order.
pub fn run_parallel<T: Send>(jobs: Vec<Box<dyn FnOnce() -> Result<T> + Send + '_>>, threads: usize) -> Vec<Result<T>> {
    let threads = threads.max(1);
    if threads == 1 {
        return jobs.into_iter().map(|j| j()).collect();
    }
    let mut results: Vec<Option<Result<T>>> = (0..jobs.len()).map(|_| None).collect();
    let mut queue: Vec<(usize, Box<dyn FnOnce() -> Result<T> + Send + '_>)> = jobs.into_iter().enumerate().collect();
    while !queue.is_empty() {
        let batch: Vec<_> = queue.drain(..threads.min(queue.len())).collect();
        std::thread::scope(|s| {
            let handles: Vec<_> = batch.into_iter().map(|(i, job)| (i, s.spawn(job))).collect();
            for (i, h) in handles {
                results[i] = Some(h.join().unwrap_or_else(|_| Err(Error::invalid("run_parallel", "worker panicked"))));
            }
        });
    }
    results.into_iter().map(|r| r.expect("every job ran")).collect()
}

/// Trains one configuration in `dir` and evaluates it with the task defaults.
pub fn train_and_evaluate(config: &Config, dir: &Path) -> Result<ArmResult> {
    let mut trainer = Trainer::new(config)?;
    let start = Instant::now();
    train_in_dir(&mut trainer, dir)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let evaluator = Evaluator::new(&trainer.spec, &trainer.data);
    let req = SampleRequest::forward(trainer.spec.n_samples, trainer.spec.steps);
    let report = evaluator.evaluate(&trainer.model, &trainer.data, &req, trainer.spec.seed)?;
    write(&dir.join(EVAL_FILE), &report.to_csv())?;
    Ok(ArmResult { total_iterations: trainer.total_iterations(), wall_ms, report, min_lambda: trainer.lexico.lambda_history.iter().copied().fold(f64::INFINITY, f64::min) })
}

#[derive(Clone, Debug)]
pub struct ArmResult {
    pub total_iterations: usize,
    pub wall_ms: f64,
    pub report: MetricReport,
    /// Smallest λ logged during training (`+∞` for an empty run).
    pub min_lambda: f64,
}

/// Modes of the λ sweep: adaptive, then three constants.
pub fn lambda_modes() -> Vec<Mode> {
    vec![Mode::Lexico, Mode::FixedLambda(0.1), Mode::FixedLambda(1.0), Mode::FixedLambda(2.0)]
}

/// Trains and evaluates one run per mode under `out_dir/<mode>/`, writing a
/// summary row per mode.
pub fn sweep_lambda(config: &Config, modes: &[Mode], out_dir: &Path, threads: usize) -> Result<Vec<(Mode, ArmResult)>> {
    let jobs: Vec<Box<dyn FnOnce() -> Result<ArmResult> + Send + '_>> = modes
        .iter()
        .map(|mode| {
            let mut cfg = config.clone();
            let dir = out_dir.join(mode.label().replace(':', "_"));
            let label = mode.label();
            Box::new(move || {
                cfg.set("mode", &label)?;
                train_and_evaluate(&cfg, &dir)
            }) as Box<dyn FnOnce() -> Result<ArmResult> + Send>
        })
        .collect();
    let results: Vec<ArmResult> = run_parallel(jobs, threads).into_iter().collect::<Result<_>>()?;
    let rows: Vec<(Vec<String>, Vec<(String, f64)>)> =
        modes.iter().zip(&results).map(|(m, r)| (vec![m.label()], r.report.values.clone())).collect();
    write(&out_dir.join(SWEEP_LAMBDA_FILE), &wide_csv(&["mode"], &rows)?)?;
    Ok(modes.iter().copied().zip(results).collect())
}

/// Joint (lexicographic) versus separate training of the same task.
pub fn compare_training(config: &Config, out_dir: &Path, threads: usize) -> Result<Vec<(String, ArmResult)>> {
    let arms = [("joint", Mode::Lexico), ("separate", Mode::Separate)];
    let jobs: Vec<Box<dyn FnOnce() -> Result<ArmResult> + Send + '_>> = arms
        .iter()
        .map(|(name, mode)| {
            let mut cfg = config.clone();
            let dir = out_dir.join(name);
            let label = mode.label();
            Box::new(move || {
                cfg.set("mode", &label)?;
                train_and_evaluate(&cfg, &dir)
            }) as Box<dyn FnOnce() -> Result<ArmResult> + Send>
        })
        .collect();
    let results: Vec<ArmResult> = run_parallel(jobs, threads).into_iter().collect::<Result<_>>()?;
    let rows: Vec<(Vec<String>, Vec<(String, f64)>)> = arms
        .iter()
        .zip(&results)
        .map(|((name, _), r)| {
            (vec![name.to_string(), r.total_iterations.to_string(), format!("{:.3}", r.wall_ms)], r.report.values.clone())
        })
        .collect();
    write(&out_dir.join(COMPARE_FILE), &wide_csv(&["arm", "total_iterations", "wall_ms"], &rows)?)?;
    Ok(arms.iter().map(|(n, _)| n.to_string()).zip(results).collect())
}

/// Smallest λ in a metrics log.
pub fn min_logged_lambda(rows: &[LogRow]) -> f64 {
    rows.iter().map(|r| r.lambda).fold(f64::INFINITY, f64::min)
}
