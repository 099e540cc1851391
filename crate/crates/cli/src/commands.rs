use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rectiflow::config::{parse_pairs, Config};
use rectiflow::flow::Direction;
use rectiflow::pipeline::experiments::{
    compare_training, lambda_modes, sweep_lambda, timing_csv, timing_sweep, Evaluator, EVAL_FILE, SWEEP_STEPS,
    SWEEP_STEPS_FILE,
};
use rectiflow::pipeline::plotdata::emit_plotdata;
use rectiflow::pipeline::train::{train_in_dir, CHECKPOINT_FILE};
use rectiflow::pipeline::{sample, Checkpoint, SampleRequest, Samples, Trainer};
use rectiflow::{Error, SeededRng};

use crate::rundir::RunDir;
use crate::{Command, Common, SampleArgs};

pub enum Failure {
    /// Bad invocation; reported with usage text and exit code 2.
    Usage(String),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e.into())
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

pub const CONFIG_ECHO: &str = "config.txt";
pub const CORPUS_HASH: &str = "corpus_hash.txt";

/// Worker threads for independent runs, from `LF_THREADS` (default 1).
fn threads() -> usize {
    std::env::var("LF_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n: &usize| n > 0).unwrap_or(1)
}

fn overrides(common: &Common, with_seed: bool) -> Outcome<Vec<(String, String)>> {
    let mut out = Vec::new();
    if let Some(task) = &common.task {
        out.push(("task".to_string(), task.clone()));
    }
    for raw in &common.overrides {
        let pairs = parse_pairs(raw).map_err(|e| Failure::Usage(e.to_string()))?;
        if pairs.len() != 1 {
            return Err(Failure::Usage(format!("--set expects key=value, got {raw:?}")));
        }
        out.extend(pairs);
    }
    if let (true, Some(seed)) = (with_seed, common.seed) {
        out.push(("seed".into(), seed.to_string()));
    }
    if let Some(mode) = &common.mode {
        out.push(("mode".into(), mode.clone()));
    }
    Ok(out)
}

/// Defaults, then the config file, then flags. Every failure here is a
/// usage error and happens before the run directory is touched.
fn resolve(common: &Common) -> Outcome<Config> {
    if common.task.is_none() && common.config.is_none() {
        return Err(Failure::Usage("missing config: pass --task or --config".into()));
    }
    let text = match &common.config {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let ov = overrides(common, true)?;
    Config::resolve(text.as_deref(), &ov, None).map_err(|e| Failure::Usage(e.to_string()))
}

/// Loads a checkpoint and rebuilds its trainer. `--set` and `--mode` apply on
/// top of the stored config; `--seed` is the sampling seed.
fn load_checkpoint(common: &Common, args: &SampleArgs) -> Outcome<(Trainer, u64)> {
    let path = args.checkpoint.clone().unwrap_or_else(|| common.out.join(CHECKPOINT_FILE));
    if !path.exists() {
        return Err(Failure::Usage(format!("missing config: no checkpoint at {} and none given", path.display())));
    }
    let ck = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let base = Config::resolve(Some(&ck.config_text), &[], None)?;
    let ov = overrides(common, false)?;
    if let Some(task) = &common.task {
        if task != base.get_str("task") {
            return Err(Failure::Usage(format!("--task {task} does not match the checkpoint's {}", base.get_str("task"))));
        }
    }
    let mut config = base;
    for (k, v) in &ov {
        config.set(k, v).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    config.settings().map_err(|e| Failure::Usage(e.to_string()))?;
    let trainer = Trainer::resume(&ck, &config)?;
    let seed = common.seed.unwrap_or(trainer.spec.seed);
    Ok((trainer, seed))
}

fn request(trainer: &Trainer, args: &SampleArgs, no_flow: bool) -> Outcome<SampleRequest> {
    let direction: Direction = args.direction.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    Ok(SampleRequest {
        n: args.n.unwrap_or(trainer.spec.n_samples),
        steps: args.steps.unwrap_or(trainer.spec.steps),
        direction,
        no_flow,
    })
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Runs `work` with the run directory locked; quarantines its outputs on
/// failure.
fn in_run_dir(out: &Path, work: impl FnOnce(&RunDir) -> anyhow::Result<()>) -> Outcome {
    let dir = RunDir::open(out)?;
    match work(&dir) {
        Ok(()) => {
            dir.finish()?;
            Ok(())
        }
        Err(e) => {
            let moved = dir.quarantine()?;
            Err(Failure::Run(e.context(format!("partial outputs moved to {}", moved.display()))))
        }
    }
}

fn echo_config(dir: &RunDir, config: &Config) -> anyhow::Result<()> {
    write(&dir.join(CONFIG_ECHO), &config.to_text())
}

fn echo_corpus_hash(dir: &RunDir, trainer: &Trainer) -> anyhow::Result<()> {
    if let Some(t) = trainer.data.text() {
        write(&dir.join(CORPUS_HASH), &format!("{}\n", t.corpus.content_hash()))?;
    }
    Ok(())
}

pub fn run(command: Command) -> Outcome {
    match command {
        Command::GenCorpus(common) => gen_corpus(&common),
        Command::Train { common, resume } => train(&common, resume),
        Command::Sample { common, sample } => sample_cmd(&common, &sample),
        Command::Eval { common, sample, no_latent_flow } => eval(&common, &sample, no_latent_flow),
        Command::SweepSteps { common, sample } => sweep_steps(&common, &sample),
        Command::SweepLambda(common) => {
            let config = resolve(&common)?;
            in_run_dir(&common.out, |dir| {
                echo_config(dir, &config)?;
                let rows = sweep_lambda(&config, &lambda_modes(), dir.path(), threads())?;
                for (mode, arm) in rows {
                    println!("{}: {}", mode.label(), summary(&arm.report.values));
                }
                Ok(())
            })
        }
        Command::CompareTraining(common) => {
            let config = resolve(&common)?;
            in_run_dir(&common.out, |dir| {
                echo_config(dir, &config)?;
                for (arm, r) in compare_training(&config, dir.path(), threads())? {
                    println!("{arm}: iterations={} {}", r.total_iterations, summary(&r.report.values));
                }
                Ok(())
            })
        }
        Command::PlotData(common) => {
            if !common.out.is_dir() {
                return Err(Failure::Run(anyhow!("run directory {} does not exist", common.out.display())));
            }
            for p in emit_plotdata(&common.out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn summary(values: &[(String, f64)]) -> String {
    values.iter().map(|(k, v)| format!("{k}={v:.4}")).collect::<Vec<_>>().join(" ")
}

fn gen_corpus(common: &Common) -> Outcome {
    let config = resolve(common)?;
    let spec = config.settings()?;
    if !spec.task.uses_text() {
        return Err(Failure::Usage(format!("task {} has no corpus", spec.task.name())));
    }
    in_run_dir(&common.out, |dir| {
        echo_config(dir, &config)?;
        let data = rectiflow::pipeline::TaskData::build(&spec)?;
        let corpus = &data.text().expect("text task").corpus;
        write(&dir.join("corpus.tsv"), &corpus.to_tsv())?;
        write(&dir.join("vocab.txt"), &corpus.vocab.to_text())?;
        write(&dir.join(CORPUS_HASH), &format!("{}\n", corpus.content_hash()))?;
        println!("{} sentences, vocab {}, hash {}", corpus.sentences.len(), corpus.vocab.len(), corpus.content_hash());
        Ok(())
    })
}

fn train(common: &Common, resume: Option<PathBuf>) -> Outcome {
    let (config, ck) = match &resume {
        Some(path) => {
            let ck = Checkpoint::load(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            let mut config = Config::resolve(Some(&ck.config_text), &[], None)?;
            for (k, v) in overrides(common, true)? {
                config.set(&k, &v).map_err(|e| Failure::Usage(e.to_string()))?;
            }
            config.settings().map_err(|e| Failure::Usage(e.to_string()))?;
            (config, Some(ck))
        }
        None => (resolve(common)?, None),
    };
    in_run_dir(&common.out, |dir| {
        echo_config(dir, &config)?;
        let mut trainer = match &ck {
            Some(ck) => Trainer::resume(ck, &config)?,
            None => Trainer::new(&config)?,
        };
        echo_corpus_hash(dir, &trainer)?;
        let path = train_in_dir(&mut trainer, dir.path())?;
        println!("trained {} steps; checkpoint {}", trainer.step, path.display());
        Ok(())
    })
}

fn latents_csv(t: &rectiflow::Tensor) -> String {
    let d = t.shape()[1];
    let mut out = format!("row,{}\n", (0..d).map(|j| format!("z{j}")).collect::<Vec<_>>().join(","));
    for i in 0..t.shape()[0] {
        let vals: Vec<String> = t.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("{i},{}\n", vals.join(",")));
    }
    out
}

fn trajectory_csv(s: &Samples) -> Option<String> {
    let traj = s.trajectory.as_ref()?;
    let d = traj.start().shape()[1];
    let mut out = format!("row,k,progress,{}\n", (0..d).map(|j| format!("z{j}")).collect::<Vec<_>>().join(","));
    for i in 0..traj.start().shape()[0] {
        for (k, state) in traj.states.iter().enumerate() {
            let vals: Vec<String> = state.row(i).iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("{i},{k},{},{}\n", traj.progress[k], vals.join(",")));
        }
    }
    Some(out)
}

fn sample_cmd(common: &Common, args: &SampleArgs) -> Outcome {
    let (trainer, seed) = load_checkpoint(common, args)?;
    let req = request(&trainer, args, false)?;
    if req.steps == 0 {
        return Err(Failure::Usage("--steps must be at least 1".into()));
    }
    in_run_dir(&common.out, |dir| {
        let s = sample(&trainer.model, &trainer.data, &req, &mut SeededRng::new(seed))?;
        if let Some(text) = trainer.data.text() {
            let lines: String = s.decoded.iter().map(|d| format!("{}\n", text.corpus.vocab.decode(d))).collect();
            write(&dir.join("samples.txt"), &lines)?;
        }
        match s.endpoints() {
            Some(end) => write(&dir.join("samples.csv"), &latents_csv(end))?,
            None => write(&dir.join("samples.csv"), "row\n")?,
        }
        if let Some(traj) = trajectory_csv(&s) {
            write(&dir.join("trajectories.csv"), &traj)?;
        }
        println!("{} samples at {} steps", req.n, req.steps);
        Ok(())
    })
}

fn eval(common: &Common, args: &SampleArgs, no_flow: bool) -> Outcome {
    let (trainer, seed) = load_checkpoint(common, args)?;
    let req = request(&trainer, args, no_flow)?;
    in_run_dir(&common.out, |dir| {
        let evaluator = Evaluator::new(&trainer.spec, &trainer.data);
        let report = evaluator.evaluate(&trainer.model, &trainer.data, &req, seed)?;
        let name = if no_flow { "eval_no_flow.csv" } else { EVAL_FILE };
        write(&dir.join(name), &report.to_csv())?;
        print!("{}", report.to_csv());
        Ok(())
    })
}

fn sweep_steps(common: &Common, args: &SampleArgs) -> Outcome {
    let (trainer, seed) = load_checkpoint(common, args)?;
    let n = args.n.unwrap_or(trainer.spec.n_samples);
    in_run_dir(&common.out, |dir| {
        let evaluator = Evaluator::new(&trainer.spec, &trainer.data);
        let rows = timing_sweep(&trainer.model, &trainer.data, &evaluator, SWEEP_STEPS, n, seed)?;
        let csv = timing_csv(&rows)?;
        write(&dir.join(SWEEP_STEPS_FILE), &csv)?;
        print!("{csv}");
        Ok(())
    })
}
