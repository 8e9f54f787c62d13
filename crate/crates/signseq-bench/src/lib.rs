//! Shared fixtures for the benchmark targets.

use signseq_core::rng::XorShiftStar;
use signseq_core::seq2seq::{init_params, AttentionKind, ModelConfig};
use signseq_core::tokenization::{clip_tokenize, ClipAggregator, FeatureFile, TokenSequence};
use signseq_core::ParamStore;

pub const TOKEN_DIM: usize = 16;

/// Desk-scale model over the benchmark token dimension.
pub fn bench_model(attention: AttentionKind) -> (ModelConfig, ParamStore) {
    let config = ModelConfig {
        dropout: 0.0,
        ..ModelConfig::desk(TOKEN_DIM, 64, attention)
    };
    let mut rng = XorShiftStar::new(7);
    let params = init_params(&config, &mut rng).expect("valid config");
    (config, params)
}

/// A synthetic frame-feature file of n frames.
pub fn frame_features(frames: usize, seed: u64) -> FeatureFile {
    let mut rng = XorShiftStar::new(seed);
    let data = (0..frames * TOKEN_DIM).map(|_| rng.next_normal()).collect();
    FeatureFile::new(frames, TOKEN_DIM, data).expect("valid file")
}

/// One token per frame.
pub fn frame_tokens(frames: usize, seed: u64) -> TokenSequence {
    let file = frame_features(frames, seed);
    signseq_core::tokenization::tokenize_features(&file, None, "bench").expect("tokens")
}

/// One token per eight-frame window.
pub fn clip_tokens(frames: usize, seed: u64) -> TokenSequence {
    let file = frame_features(frames, seed);
    clip_tokenize(&file, 8, &ClipAggregator::MeanPool, "bench").expect("tokens")
}
