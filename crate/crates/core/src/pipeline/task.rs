//! Binds a [`TaskSpec`] to concrete data and a freshly initialized model.

use crate::autodiff::Tensor;
use crate::config::{TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::nets::{CoderConfig, Parameterized, VelocityField, VelocityFieldConfig};
use crate::rng::SeededRng;
use crate::vae::SeqVae;

use super::corpus::{generate_corpus, Corpus, Split};

/// Stream labels forked off the run seed.
pub(crate) const CORPUS_STREAM: u64 = 1;
pub(crate) const INIT_STREAM: u64 = 2;
pub(crate) const TRAIN_STREAM: u64 = 3;

/// The source and target domains of one task.
#[derive(Clone, Debug)]
pub enum TaskData {
    /// Raw 2-d points: `π0 = N(0, I)`, `π1 = N(mu1, sigma1² I)`.
    Gauss { mu1: Vec<f64>, sigma1: f64 },
    Text(TextData),
}

#[derive(Clone, Debug)]
pub struct TextData {
    pub corpus: Corpus,
    /// Training sentences drawn for the VAE batch and, for style transfer,
    /// for `z0`.
    pub source: Vec<Vec<usize>>,
    /// Training sentences whose latents make up `π1`.
    pub target: Vec<Vec<usize>>,
    /// Held-out sentences used as starting points for sampling.
    pub heldout_source: Vec<Vec<usize>>,
    pub heldout_target: Vec<Vec<usize>>,
    /// Whether `π0` is the prior rather than encoded source sentences.
    pub prior_source: bool,
}

/// `n` draws from the standard normal source, shape `[n, d]`.
pub fn gauss_source(rng: &mut SeededRng, n: usize, d: usize) -> Tensor {
    rng.normal_tensor(&[n, d])
}

pub fn gauss_target(rng: &mut SeededRng, n: usize, mu1: &[f64], sigma1: f64) -> Tensor {
    let mut t = rng.normal_tensor(&[n, mu1.len()]);
    for row in t.data_mut().chunks_mut(mu1.len()) {
        for (x, m) in row.iter_mut().zip(mu1) {
            *x = m + sigma1 * *x;
        }
    }
    t
}

impl TaskData {
    pub fn build(spec: &TaskSpec) -> Result<Self> {
        let mut master = SeededRng::new(spec.seed);
        let mut rng = master.fork(CORPUS_STREAM);
        if spec.task == TaskKind::Gauss2d {
            return Ok(TaskData::Gauss { mu1: spec.gauss_mu1.clone(), sigma1: spec.gauss_sigma1 });
        }
        let corpus = generate_corpus(spec.task, spec.corpus_size, spec.val_fraction, spec.test_fraction, &mut rng)?;
        let data = match spec.task {
            TaskKind::LengthControl => TextData {
                source: corpus.seqs(Split::Train),
                target: corpus.seqs_labeled(Split::Train, spec.target_length),
                heldout_source: corpus.seqs(Split::Test),
                heldout_target: corpus.seqs_labeled(Split::Test, spec.target_length),
                prior_source: true,
                corpus,
            },
            _ => TextData {
                source: corpus.seqs_labeled(Split::Train, spec.source_style),
                target: corpus.seqs_labeled(Split::Train, spec.target_style),
                heldout_source: corpus.seqs_labeled(Split::Test, spec.source_style),
                heldout_target: corpus.seqs_labeled(Split::Test, spec.target_style),
                prior_source: false,
                corpus,
            },
        };
        if data.source.is_empty() || data.target.is_empty() {
            return Err(Error::Config(format!(
                "task {} has an empty source or target training pool; enlarge corpus_size",
                spec.task.name()
            )));
        }
        Ok(TaskData::Text(data))
    }

    pub fn text(&self) -> Option<&TextData> {
        match self {
            TaskData::Text(t) => Some(t),
            TaskData::Gauss { .. } => None,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.text().map_or(0, |t| t.corpus.vocab.len())
    }
}

/// Everything trainable for one task: the optional VAE and the flow.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub vae: Option<SeqVae>,
    pub flow: FlowModel,
}

impl Model {
    pub fn init(spec: &TaskSpec, data: &TaskData) -> Result<Self> {
        let mut rng = SeededRng::new(spec.seed).fork(INIT_STREAM);
        let vae = match data {
            TaskData::Gauss { .. } => None,
            TaskData::Text(t) => {
                let config = CoderConfig {
                    vocab_size: t.corpus.vocab.len(),
                    embed_dim: spec.embed_dim,
                    hidden_dim: spec.hidden_dim,
                    latent_dim: spec.latent_dim,
                    max_len: spec.max_len.max(t.corpus.max_len()),
                };
                let mut vae = SeqVae::new(config, spec.kl_warmup_steps, spec.dropout, &mut rng);
                vae.kl_weight_max = spec.kl_weight_max;
                Some(vae)
            }
        };
        let field = VelocityField::new(
            VelocityFieldConfig {
                latent_dim: spec.latent_dim,
                hidden_dims: spec.hidden_dims.clone(),
                time_embed_dim: spec.time_embed_dim,
                activation: spec.activation,
            },
            &mut rng,
        );
        Ok(Model { vae, flow: FlowModel::new(field, spec.steps)? })
    }

    pub fn latent_dim(&self) -> usize {
        self.flow.latent_dim()
    }

    /// Copies parameter values from `(name, shape, data)` triples, which must
    /// cover every parameter in canonical order.
    pub fn load_params(&mut self, entries: &[super::checkpoint::Entry]) -> Result<()> {
        let names: Vec<(String, Vec<usize>)> =
            self.named_params().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
        if names.len() != entries.len() {
            return Err(Error::Checkpoint(format!("expected {} parameters, found {}", names.len(), entries.len())));
        }
        for ((name, shape), e) in names.iter().zip(entries) {
            if *name != e.name || *shape != e.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: model has {name} {shape:?}, checkpoint has {} {:?}",
                    e.name, e.shape
                )));
            }
        }
        for (p, e) in self.params_mut().into_iter().zip(entries) {
            p.data_mut().copy_from_slice(&e.data);
        }
        Ok(())
    }
}

impl Parameterized for Model {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.vae.as_ref().map(|v| v.named_params()).unwrap_or_default();
        out.extend(self.flow.field.named_params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.vae.as_mut().map(|v| v.params_mut()).unwrap_or_default();
        out.extend(self.flow.field.params_mut());
        out
    }
}
