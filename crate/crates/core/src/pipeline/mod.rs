//! Tasks, training, sampling and experiment drivers.

pub mod checkpoint;
pub mod corpus;
pub mod experiments;
pub mod plotdata;
pub mod sample;
pub mod task;
pub mod train;

pub use checkpoint::Checkpoint;
pub use corpus::{generate_corpus, Corpus, Split, Vocab};
pub use sample::{sample, SampleRequest, Samples};
pub use task::{Model, TaskData};
pub use train::{train_in_dir, LogRow, Phase, Trainer};
