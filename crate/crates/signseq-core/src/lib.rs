//! From-scratch neural sign-language translation at desk scale.
//!
//! The crate covers the full experimental stack: tokenization of sign
//! recordings (keypoints, frame features, eight-frame clips), a recurrent
//! attentional encoder-decoder with its own reverse-mode autodiff,
//! multitask and domain-adversarial training, translation metrics (BLEU,
//! ROUGE-L, METEOR), paired bootstrap significance testing, and a
//! deterministic synthetic corpus generator that stands in for recorded
//! sign-language data.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod rng;
pub mod seq2seq;
pub mod significance;
pub mod synthcorpus;
pub mod tensor;
pub mod tokenization;
pub mod trainer;
pub mod training;
pub mod vocab;

pub use autodiff::{finite_diff_check, FiniteDiffReport, GradMap, ParamStore, Parameter, Tape, Var};
pub use data::{Sample, TokenizerKind, TokenizerSelection};
pub use error::{Error, Result};
pub use metrics::MetricReport;
pub use rng::XorShiftStar;
pub use seq2seq::{AttentionKind, ModelConfig};
pub use significance::{ComparisonReport, SystemOutput};
pub use tensor::Tensor;
pub use tokenization::{FeatureFile, KeypointFrame, Manifest, TokenSequence};
pub use trainer::TrainConfig;
pub use vocab::Vocab;
