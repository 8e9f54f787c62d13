//! Attentional encoder-decoder over token sequences.
//!
//! A multi-layer GRU encoder consumes the token sequence and hands its
//! outputs and final hidden states to a GRU decoder. Attention is either
//! additive with the previous decoder output as query, feeding the context
//! into the last decoder layer, or scaled-dot with the current decoder
//! output, whose attentional vector is fed back into the first layer
//! together with the next word embedding. Decoding is greedy.

use std::collections::HashMap;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::XorShiftStar;
use crate::tensor::Tensor;
use crate::tokenization::TokenSequence;
use crate::vocab::{BOS, EOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    Bahdanau,
    Luong,
}

impl AttentionKind {
    pub fn label(self) -> &'static str {
        match self {
            AttentionKind::Bahdanau => "bahdanau",
            AttentionKind::Luong => "luong",
        }
    }

    pub fn parse(s: &str) -> Result<AttentionKind> {
        match s {
            "bahdanau" => Ok(AttentionKind::Bahdanau),
            "luong" => Ok(AttentionKind::Luong),
            other => Err(Error::Config(format!("unknown attention kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub token_dim: usize,
    pub layers: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
    pub attention: AttentionKind,
    pub dropout: f64,
    pub residual: bool,
    pub init_std: f64,
    /// Learned linear map applied to incoming tokens; the trainable half
    /// of the clip aggregator.
    pub input_proj: bool,
}

impl ModelConfig {
    /// Paper-scale profile: 4x512 GRU, 256-dim embeddings.
    pub fn paper(token_dim: usize, vocab_size: usize, attention: AttentionKind) -> ModelConfig {
        ModelConfig {
            token_dim,
            layers: 4,
            hidden: 512,
            embed_dim: 256,
            vocab_size,
            attention,
            dropout: 0.2,
            residual: true,
            init_std: 0.02,
            input_proj: false,
        }
    }

    /// Desk-scale profile: 2x64 GRU, 32-dim embeddings.
    pub fn desk(token_dim: usize, vocab_size: usize, attention: AttentionKind) -> ModelConfig {
        ModelConfig {
            token_dim,
            layers: 2,
            hidden: 64,
            embed_dim: 32,
            vocab_size,
            attention,
            dropout: 0.2,
            residual: true,
            init_std: 0.02,
            input_proj: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.embed_dim == 0 {
            return Err(Error::Config("layers, hidden and embed_dim must be positive".into()));
        }
        if self.vocab_size <= 4 {
            return Err(Error::Config("vocabulary holds only reserved ids".into()));
        }
        if self.init_std <= 0.0 {
            return Err(Error::Config("init_std must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "model.token_dim={}\nmodel.layers={}\nmodel.hidden={}\nmodel.embed_dim={}\n\
             model.vocab_size={}\nmodel.attention={}\nmodel.dropout={}\nmodel.residual={}\n\
             model.init_std={}\nmodel.input_proj={}\n",
            self.token_dim,
            self.layers,
            self.hidden,
            self.embed_dim,
            self.vocab_size,
            self.attention.label(),
            self.dropout,
            self.residual,
            self.init_std,
            self.input_proj
        )
    }

    pub fn from_kv(kv: &HashMap<String, String>) -> Result<ModelConfig> {
        let get = |key: &str| {
            kv.get(key).ok_or_else(|| Error::Config(format!("missing config key {key}")))
        };
        let parse_usize = |key: &str| -> Result<usize> {
            get(key)?.parse().map_err(|_| Error::Config(format!("bad integer for {key}")))
        };
        let parse_f64 = |key: &str| -> Result<f64> {
            get(key)?.parse().map_err(|_| Error::Config(format!("bad real for {key}")))
        };
        let parse_bool = |key: &str| -> Result<bool> {
            get(key)?.parse().map_err(|_| Error::Config(format!("bad flag for {key}")))
        };
        let config = ModelConfig {
            token_dim: parse_usize("model.token_dim")?,
            layers: parse_usize("model.layers")?,
            hidden: parse_usize("model.hidden")?,
            embed_dim: parse_usize("model.embed_dim")?,
            vocab_size: parse_usize("model.vocab_size")?,
            attention: AttentionKind::parse(get("model.attention")?)?,
            dropout: parse_f64("model.dropout")?,
            residual: parse_bool("model.residual")?,
            init_std: parse_f64("model.init_std")?,
            input_proj: parse_bool("model.input_proj")?,
        };
        config.validate()?;
        Ok(config)
    }

    fn encoder_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.token_dim
        } else {
            self.hidden
        }
    }

    fn decoder_input_dim(&self, layer: usize) -> usize {
        let base = if layer == 0 {
            match self.attention {
                // attentional vector of the previous step rides along
                AttentionKind::Luong => self.embed_dim + self.hidden,
                AttentionKind::Bahdanau => self.embed_dim,
            }
        } else {
            self.hidden
        };
        if self.attention == AttentionKind::Bahdanau && layer + 1 == self.layers {
            base + self.hidden
        } else {
            base
        }
    }
}

// ---------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------

const GATES: [&str; 3] = ["reset_gate", "update_gate", "candidate"];

/// Initialize all learnable tensors: weights from a zero-mean normal with
/// the configured std, biases zero.
pub fn init_params(config: &ModelConfig, rng: &mut XorShiftStar) -> Result<ParamStore> {
    config.validate()?;
    let mut store = ParamStore::new();
    let h = config.hidden;

    if config.input_proj {
        let d = config.token_dim;
        store.insert("input_proj.weight", Tensor::randn(vec![d, d], config.init_std, rng));
        store.insert("input_proj.bias", Tensor::zeros(vec![1, d]));
    }

    store.insert(
        "embedding.weight",
        Tensor::randn(vec![config.vocab_size, config.embed_dim], config.init_std, rng),
    );

    for scope in ["encoder", "decoder"] {
        for layer in 0..config.layers {
            let input = if scope == "encoder" {
                config.encoder_input_dim(layer)
            } else {
                config.decoder_input_dim(layer)
            };
            for gate in GATES {
                let prefix = format!("{scope}.layer{layer}.{gate}");
                store.insert(
                    format!("{prefix}.weight_in"),
                    Tensor::randn(vec![input, h], config.init_std, rng),
                );
                store.insert(
                    format!("{prefix}.weight_hid"),
                    Tensor::randn(vec![h, h], config.init_std, rng),
                );
                store.insert(format!("{prefix}.bias_in"), Tensor::zeros(vec![1, h]));
                store.insert(format!("{prefix}.bias_hid"), Tensor::zeros(vec![1, h]));
            }
        }
    }

    match config.attention {
        AttentionKind::Bahdanau => {
            store.insert("attention.query.weight", Tensor::randn(vec![h, h], config.init_std, rng));
            store.insert("attention.memory.weight", Tensor::randn(vec![h, h], config.init_std, rng));
            store.insert("attention.score.weight", Tensor::randn(vec![h, 1], config.init_std, rng));
        }
        AttentionKind::Luong => {
            store.insert(
                "attention.output.weight",
                Tensor::randn(vec![2 * h, h], config.init_std, rng),
            );
            store.insert("attention.output.bias", Tensor::zeros(vec![1, h]));
        }
    }

    store.insert(
        "projection.weight",
        Tensor::randn(vec![h, config.vocab_size], config.init_std, rng),
    );
    store.insert("projection.bias", Tensor::zeros(vec![1, config.vocab_size]));
    Ok(store)
}

// ---------------------------------------------------------------------
// Tape binding
// ---------------------------------------------------------------------

#[derive(Clone, Copy)]
struct GateVars {
    w_in: Var,
    w_hid: Var,
    b_in: Var,
    b_hid: Var,
}

#[derive(Clone, Copy)]
struct GruVars {
    reset: GateVars,
    update: GateVars,
    cand: GateVars,
}

enum AttentionVars {
    Bahdanau { query_w: Var, memory_w: Var, score_v: Var },
    Luong { out_w: Var, out_b: Var },
}

/// All model parameters registered once on a tape; reuse across steps
/// makes gradient accumulation handle the recurrence.
pub struct BoundModel<'c> {
    pub config: &'c ModelConfig,
    encoder: Vec<GruVars>,
    decoder: Vec<GruVars>,
    embedding: Var,
    projection_w: Var,
    projection_b: Var,
    attention: AttentionVars,
    input_proj: Option<(Var, Var)>,
    ones_h: Var,
}

fn bind_gate(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<GateVars> {
    Ok(GateVars {
        w_in: tape.param(store, &format!("{prefix}.weight_in"))?,
        w_hid: tape.param(store, &format!("{prefix}.weight_hid"))?,
        b_in: tape.param(store, &format!("{prefix}.bias_in"))?,
        b_hid: tape.param(store, &format!("{prefix}.bias_hid"))?,
    })
}

impl<'c> BoundModel<'c> {
    pub fn bind(tape: &mut Tape, store: &ParamStore, config: &'c ModelConfig) -> Result<Self> {
        let mut encoder = Vec::with_capacity(config.layers);
        let mut decoder = Vec::with_capacity(config.layers);
        for scope in ["encoder", "decoder"] {
            for layer in 0..config.layers {
                let gru = GruVars {
                    reset: bind_gate(tape, store, &format!("{scope}.layer{layer}.reset_gate"))?,
                    update: bind_gate(tape, store, &format!("{scope}.layer{layer}.update_gate"))?,
                    cand: bind_gate(tape, store, &format!("{scope}.layer{layer}.candidate"))?,
                };
                if scope == "encoder" {
                    encoder.push(gru);
                } else {
                    decoder.push(gru);
                }
            }
        }
        let attention = match config.attention {
            AttentionKind::Bahdanau => AttentionVars::Bahdanau {
                query_w: tape.param(store, "attention.query.weight")?,
                memory_w: tape.param(store, "attention.memory.weight")?,
                score_v: tape.param(store, "attention.score.weight")?,
            },
            AttentionKind::Luong => AttentionVars::Luong {
                out_w: tape.param(store, "attention.output.weight")?,
                out_b: tape.param(store, "attention.output.bias")?,
            },
        };
        let input_proj = if config.input_proj {
            Some((
                tape.param(store, "input_proj.weight")?,
                tape.param(store, "input_proj.bias")?,
            ))
        } else {
            None
        };
        Ok(BoundModel {
            config,
            encoder,
            decoder,
            embedding: tape.param(store, "embedding.weight")?,
            projection_w: tape.param(store, "projection.weight")?,
            projection_b: tape.param(store, "projection.bias")?,
            attention,
            input_proj,
            ones_h: tape.leaf(Tensor::full(vec![1, config.hidden], 1.0)),
        })
    }

    fn gru_step(&self, tape: &mut Tape, gru: &GruVars, x: Var, h: Var) -> Result<Var> {
        let gate = |tape: &mut Tape, g: &GateVars| -> Result<Var> {
            let xw = tape.matmul(x, g.w_in)?;
            let xw = tape.add(xw, g.b_in)?;
            let hw = tape.matmul(h, g.w_hid)?;
            let hw = tape.add(hw, g.b_hid)?;
            tape.add(xw, hw)
        };
        let r_pre = gate(tape, &gru.reset)?;
        let r = tape.sigmoid(r_pre)?;
        let z_pre = gate(tape, &gru.update)?;
        let z = tape.sigmoid(z_pre)?;

        let xc = tape.matmul(x, gru.cand.w_in)?;
        let xc = tape.add(xc, gru.cand.b_in)?;
        let hc = tape.matmul(h, gru.cand.w_hid)?;
        let hc = tape.add(hc, gru.cand.b_hid)?;
        let gated = tape.mul(r, hc)?;
        let n_pre = tape.add(xc, gated)?;
        let n = tape.tanh(n_pre)?;

        let keep = tape.sub(self.ones_h, z)?;
        let new_part = tape.mul(keep, n)?;
        let old_part = tape.mul(z, h)?;
        tape.add(new_part, old_part)
    }

    fn dropout(
        &self,
        tape: &mut Tape,
        x: Var,
        rng: Option<&mut XorShiftStar>,
    ) -> Result<Var> {
        let rate = self.config.dropout;
        match rng {
            Some(rng) if rate > 0.0 => {
                let keep = 1.0 - rate;
                let shape = tape.value(x).shape().to_vec();
                let numel: usize = shape.iter().product();
                let mask = (0..numel)
                    .map(|_| if rng.next_f64() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                let mask = tape.leaf(Tensor::new(shape, mask)?);
                tape.mul(x, mask)
            }
            _ => Ok(x),
        }
    }
}

// ---------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------

/// Encoder results on the tape: Z outputs stacked into a Z x H matrix and
/// one final hidden state per layer.
pub struct EncoderState {
    pub outputs: Var,
    pub final_hiddens: Vec<Var>,
    pub len: usize,
}

/// Run the encoder over a token sequence.
pub fn encode(
    tape: &mut Tape,
    model: &BoundModel,
    tokens: &TokenSequence,
    mut dropout_rng: Option<&mut XorShiftStar>,
) -> Result<EncoderState> {
    let config = model.config;
    if tokens.dim() != config.token_dim {
        return Err(Error::Shape {
            op: "encode",
            detail: format!("token dim {} vs configured {}", tokens.dim(), config.token_dim),
        });
    }
    let mut inputs: Vec<Var> = tokens
        .tokens
        .iter()
        .map(|t| {
            let leaf = tape.leaf(Tensor::row(t.clone()));
            match model.input_proj {
                Some((w, b)) => {
                    let projected = tape.matmul(leaf, w)?;
                    tape.add(projected, b)
                }
                None => Ok(leaf),
            }
        })
        .collect::<Result<_>>()?;

    let mut final_hiddens = Vec::with_capacity(config.layers);
    for (layer, gru) in model.encoder.iter().enumerate() {
        let mut h = tape.leaf(Tensor::zeros(vec![1, config.hidden]));
        let mut outputs = Vec::with_capacity(inputs.len());
        for &x in &inputs {
            h = model.gru_step(tape, gru, x, h)?;
            outputs.push(h);
        }
        final_hiddens.push(h);
        if layer + 1 < config.layers {
            let mut next_inputs = Vec::with_capacity(outputs.len());
            for (&out, &prev) in outputs.iter().zip(&inputs) {
                let mut fed = model.dropout(tape, out, dropout_rng.as_deref_mut())?;
                if config.residual && tape.value(prev).cols() == config.hidden {
                    fed = tape.add(fed, prev)?;
                }
                next_inputs.push(fed);
            }
            inputs = next_inputs;
        } else {
            inputs = outputs;
        }
    }
    let outputs = tape.concat_rows(&inputs)?;
    Ok(EncoderState { outputs, final_hiddens, len: tokens.len() })
}

// ---------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------

/// Scores, normalized weights and the context vector of one decode step.
pub struct AttentionWeights {
    pub scores: Var,
    pub weights: Var,
    pub context: Var,
}

/// Per-sequence precomputation: the additive scorer mixes the encoder
/// outputs once and reuses them at every step.
pub struct AttentionContext {
    premixed: Option<Var>,
}

pub fn prepare_attention(
    tape: &mut Tape,
    model: &BoundModel,
    encoder: &EncoderState,
) -> Result<AttentionContext> {
    let premixed = match &model.attention {
        AttentionVars::Bahdanau { memory_w, .. } => {
            Some(tape.matmul(encoder.outputs, *memory_w)?)
        }
        AttentionVars::Luong { .. } => None,
    };
    Ok(AttentionContext { premixed })
}

/// Additive attention: scores v . tanh(W1 h + W2 o_i) against the
/// previous decoder output.
pub fn attend_bahdanau(
    tape: &mut Tape,
    model: &BoundModel,
    ctx: &AttentionContext,
    prev_decoder_output: Var,
    encoder: &EncoderState,
) -> Result<AttentionWeights> {
    let AttentionVars::Bahdanau { query_w, score_v, .. } = &model.attention else {
        return Err(Error::Config("model was built with Luong attention".into()));
    };
    let premixed = ctx.premixed.ok_or_else(|| {
        Error::Config("attention context prepared for a different mechanism".into())
    })?;
    let q = tape.matmul(prev_decoder_output, *query_w)?;
    let mixed = tape.add_row(premixed, q)?;
    let act = tape.tanh(mixed)?;
    let scores_col = tape.matmul(act, *score_v)?;
    let scores = tape.reshape(scores_col, vec![1, encoder.len])?;
    let weights = tape.softmax_last(scores)?;
    let context = tape.matmul(weights, encoder.outputs)?;
    Ok(AttentionWeights { scores, weights, context })
}

/// Scaled dot-product attention against the current decoder output, plus
/// the attentional vector y_t = tanh(W [c_t ; h_t] + b).
pub fn attend_luong(
    tape: &mut Tape,
    model: &BoundModel,
    cur_decoder_output: Var,
    encoder: &EncoderState,
) -> Result<(AttentionWeights, Var)> {
    let AttentionVars::Luong { out_w, out_b } = &model.attention else {
        return Err(Error::Config("model was built with Bahdanau attention".into()));
    };
    let h = model.config.hidden;
    let query_col = tape.reshape(cur_decoder_output, vec![h, 1])?;
    let scores_col = tape.matmul(encoder.outputs, query_col)?;
    let scores_row = tape.reshape(scores_col, vec![1, encoder.len])?;
    let scores = tape.scale(scores_row, 1.0 / (h as f64).sqrt())?;
    let weights = tape.softmax_last(scores)?;
    let context = tape.matmul(weights, encoder.outputs)?;
    let joined = tape.concat_cols(&[context, cur_decoder_output])?;
    let mixed = tape.matmul(joined, *out_w)?;
    let mixed = tape.add(mixed, *out_b)?;
    let attentional = tape.tanh(mixed)?;
    Ok((AttentionWeights { scores, weights, context }, attentional))
}

// ---------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------

/// Decoder recurrence carried between steps.
pub struct DecoderState {
    pub hiddens: Vec<Var>,
    /// Previous attentional vector, Luong input feeding.
    pub attn_feed: Option<Var>,
}

/// Initialize from the encoder's final hidden states, layer by layer.
pub fn init_decoder(tape: &mut Tape, model: &BoundModel, encoder: &EncoderState) -> DecoderState {
    let attn_feed = match model.config.attention {
        AttentionKind::Luong => Some(tape.leaf(Tensor::zeros(vec![1, model.config.hidden]))),
        AttentionKind::Bahdanau => None,
    };
    DecoderState { hiddens: encoder.final_hiddens.clone(), attn_feed }
}

/// One decode step: consume a word id, return logits over the vocabulary,
/// the next state, and the attention weights used.
pub fn decode_step(
    tape: &mut Tape,
    model: &BoundModel,
    state: &DecoderState,
    encoder: &EncoderState,
    ctx: &AttentionContext,
    word_id: usize,
    mut dropout_rng: Option<&mut XorShiftStar>,
) -> Result<(Var, DecoderState, AttentionWeights)> {
    let config = model.config;
    if word_id >= config.vocab_size {
        return Err(Error::Data(format!(
            "word id {word_id} outside vocabulary of {}",
            config.vocab_size
        )));
    }
    let embedded = tape.embed(model.embedding, word_id)?;

    let mut x = match (config.attention, state.attn_feed) {
        (AttentionKind::Luong, Some(feed)) => tape.concat_cols(&[embedded, feed])?,
        _ => embedded,
    };

    let mut new_hiddens = Vec::with_capacity(config.layers);
    let mut attention = None;
    let last = config.layers - 1;
    for (layer, gru) in model.decoder.iter().enumerate() {
        if layer == last && config.attention == AttentionKind::Bahdanau {
            // query with the previous output of the last layer
            let attn = attend_bahdanau(tape, model, ctx, state.hiddens[last], encoder)?;
            x = tape.concat_cols(&[x, attn.context])?;
            attention = Some(attn);
        }
        let h = model.gru_step(tape, gru, x, state.hiddens[layer])?;
        new_hiddens.push(h);
        if layer < last {
            let mut fed = model.dropout(tape, h, dropout_rng.as_deref_mut())?;
            if config.residual && tape.value(x).cols() == config.hidden {
                fed = tape.add(fed, x)?;
            }
            x = fed;
        } else {
            x = h;
        }
    }

    let (attention, projected_from) = match config.attention {
        AttentionKind::Bahdanau => (attention.expect("set at last layer"), x),
        AttentionKind::Luong => {
            let (attn, attentional) = attend_luong(tape, model, x, encoder)?;
            (attn, attentional)
        }
    };

    let logits = tape.matmul(projected_from, model.projection_w)?;
    let logits = tape.add(logits, model.projection_b)?;

    let next_state = DecoderState {
        hiddens: new_hiddens,
        attn_feed: match config.attention {
            AttentionKind::Luong => Some(projected_from),
            AttentionKind::Bahdanau => None,
        },
    };
    Ok((logits, next_state, attention))
}

// ---------------------------------------------------------------------
// Losses and decoding
// ---------------------------------------------------------------------

/// Teacher-forced mean negative log-likelihood of a target sequence,
/// assembled on the caller's tape.
///
/// The target must be nonempty and end with EOS; decoder inputs are BOS
/// followed by the gold words.
pub fn sentence_nll_on_tape(
    tape: &mut Tape,
    model: &BoundModel,
    tokens: &TokenSequence,
    target: &[usize],
    mut dropout_rng: Option<&mut XorShiftStar>,
) -> Result<Var> {
    validate_target(target)?;
    let encoder = encode(tape, model, tokens, dropout_rng.as_deref_mut())?;
    let ctx = prepare_attention(tape, model, &encoder)?;
    let mut state = init_decoder(tape, model, &encoder);
    let mut step_losses = Vec::with_capacity(target.len());
    let mut input = BOS;
    for (i, &gold) in target.iter().enumerate() {
        let (logits, next, _) = decode_step(
            tape,
            model,
            &state,
            &encoder,
            &ctx,
            input,
            dropout_rng.as_deref_mut(),
        )
        .map_err(|e| match e {
            Error::NonFinite { node } => {
                Error::NonFinite { node: format!("{node} at step {i}") }
            }
            other => other,
        })?;
        let probs = tape.softmax_last(logits)?;
        let p_gold = tape.slice_cols(probs, gold, 1)?;
        let lp = tape.log(p_gold).map_err(|e| match e {
            Error::NonFinite { node } => Error::NonFinite { node: format!("{node} at step {i}") },
            other => other,
        })?;
        step_losses.push(lp);
        state = next;
        input = gold;
    }
    let stacked = tape.concat_cols(&step_losses)?;
    let mean_lp = tape.mean(stacked)?;
    tape.neg(mean_lp)
}

/// Convenience evaluation of the teacher-forced loss value.
pub fn sentence_nll(
    tokens: &TokenSequence,
    target: &[usize],
    store: &ParamStore,
    config: &ModelConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let model = BoundModel::bind(&mut tape, store, config)?;
    let loss = sentence_nll_on_tape(&mut tape, &model, tokens, target, None)?;
    tape.value(loss).scalar_value()
}

fn validate_target(target: &[usize]) -> Result<()> {
    if target.is_empty() {
        return Err(Error::Data("target sequence is empty".into()));
    }
    if *target.last().unwrap() != EOS {
        return Err(Error::Data("target sequence must end with EOS".into()));
    }
    Ok(())
}

/// Greedy decoding: argmax word per step, stops at EOS or `max_len`.
/// Deterministic for fixed parameters. Returns content word ids without
/// the terminating EOS.
pub fn greedy_decode(
    tokens: &TokenSequence,
    store: &ParamStore,
    config: &ModelConfig,
    max_len: usize,
) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Err(Error::Data("max_len must be at least 1".into()));
    }
    let mut tape = Tape::new();
    let model = BoundModel::bind(&mut tape, store, config)?;
    let encoder = encode(&mut tape, &model, tokens, None)?;
    let ctx = prepare_attention(&mut tape, &model, &encoder)?;
    let mut state = init_decoder(&mut tape, &model, &encoder);
    let mut out = Vec::new();
    let mut input = BOS;
    for _ in 0..max_len {
        let (logits, next, _) =
            decode_step(&mut tape, &model, &state, &encoder, &ctx, input, None)?;
        let word = argmax(tape.value(logits).data());
        if word == EOS {
            break;
        }
        out.push(word);
        state = next;
        input = word;
    }
    Ok(out)
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;

    fn tiny_config(attention: AttentionKind) -> ModelConfig {
        ModelConfig {
            token_dim: 3,
            layers: 2,
            hidden: 4,
            embed_dim: 3,
            vocab_size: 7,
            attention,
            dropout: 0.0,
            residual: true,
            init_std: 0.2,
            input_proj: false,
        }
    }

    fn tokens(z: usize, d: usize, seed: u64) -> TokenSequence {
        let mut rng = XorShiftStar::new(seed);
        let tokens = (0..z).map(|_| (0..d).map(|_| rng.next_normal()).collect()).collect();
        TokenSequence::new(tokens, "test").unwrap()
    }

    #[test]
    fn encoder_shape_contract() {
        for kind in [AttentionKind::Bahdanau, AttentionKind::Luong] {
            let config = tiny_config(kind);
            let mut rng = XorShiftStar::new(1);
            let store = init_params(&config, &mut rng).unwrap();
            let mut tape = Tape::new();
            let model = BoundModel::bind(&mut tape, &store, &config).unwrap();
            let seq = tokens(5, 3, 2);
            let enc = encode(&mut tape, &model, &seq, None).unwrap();
            assert_eq!(tape.value(enc.outputs).shape(), &[5, 4]);
            assert_eq!(enc.final_hiddens.len(), 2);
        }
    }

    #[test]
    fn encoder_rejects_wrong_dim() {
        let config = tiny_config(AttentionKind::Bahdanau);
        let mut rng = XorShiftStar::new(1);
        let store = init_params(&config, &mut rng).unwrap();
        let mut tape = Tape::new();
        let model = BoundModel::bind(&mut tape, &store, &config).unwrap();
        let seq = tokens(5, 2, 2);
        assert!(encode(&mut tape, &model, &seq, None).is_err());
    }

    #[test]
    fn identical_encoder_outputs_give_uniform_weights() {
        // zero recurrent weights, identical inputs -> identical outputs
        let config = tiny_config(AttentionKind::Bahdanau);
        let mut rng = XorShiftStar::new(3);
        let mut store = init_params(&config, &mut rng).unwrap();
        for p in store.iter_mut() {
            if p.name.starts_with("encoder") {
                p.value.fill(0.0);
            }
        }
        let seq = TokenSequence::new(vec![vec![0.0; 3]; 4], "const").unwrap();
        let mut tape = Tape::new();
        let model = BoundModel::bind(&mut tape, &store, &config).unwrap();
        let enc = encode(&mut tape, &model, &seq, None).unwrap();
        let ctx = prepare_attention(&mut tape, &model, &enc).unwrap();
        let query = tape.leaf(Tensor::row(vec![0.5, -0.5, 0.25, 0.0]));
        let attn = attend_bahdanau(&mut tape, &model, &ctx, query, &enc).unwrap();
        for &w in tape.value(attn.weights).data() {
            assert!((w - 0.25).abs() < 1e-12);
        }
        let wsum: f64 = tape.value(attn.weights).data().iter().sum();
        assert!((wsum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_output_gets_full_weight() {
        let config = tiny_config(AttentionKind::Bahdanau);
        let mut rng = XorShiftStar::new(4);
        let store = init_params(&config, &mut rng).unwrap();
        let seq = tokens(1, 3, 5);
        let mut tape = Tape::new();
        let model = BoundModel::bind(&mut tape, &store, &config).unwrap();
        let enc = encode(&mut tape, &model, &seq, None).unwrap();
        let ctx = prepare_attention(&mut tape, &model, &enc).unwrap();
        let query = tape.leaf(Tensor::row(vec![1.0, 2.0, 3.0, 4.0]));
        let attn = attend_bahdanau(&mut tape, &model, &ctx, query, &enc).unwrap();
        assert_eq!(tape.value(attn.weights).data(), &[1.0]);
        let context = tape.value(attn.context).data().to_vec();
        let outputs = tape.value(enc.outputs).data().to_vec();
        assert_eq!(context, outputs);
    }

    #[test]
    fn luong_orthogonal_query_uniform_weights() {
        let config = tiny_config(AttentionKind::Luong);
        let mut rng = XorShiftStar::new(6);
        let store = init_params(&config, &mut rng).unwrap();
        let seq = tokens(3, 3, 7);
        let mut tape = Tape::new();
        let model = BoundModel::bind(&mut tape, &store, &config).unwrap();
        let enc = encode(&mut tape, &model, &seq, None).unwrap();
        let zero_query = tape.leaf(Tensor::zeros(vec![1, 4]));
        let (attn, _) = attend_luong(&mut tape, &model, zero_query, &enc).unwrap();
        for &w in tape.value(attn.weights).data() {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn context_in_convex_hull_of_outputs() {
        for kind in [AttentionKind::Bahdanau, AttentionKind::Luong] {
            let config = tiny_config(kind);
            let mut rng = XorShiftStar::new(8);
            let store = init_params(&config, &mut rng).unwrap();
            let seq = tokens(6, 3, 9);
            let mut tape = Tape::new();
            let model = BoundModel::bind(&mut tape, &store, &config).unwrap();
            let enc = encode(&mut tape, &model, &seq, None).unwrap();
            let ctx = prepare_attention(&mut tape, &model, &enc).unwrap();
            let query = tape.leaf(Tensor::row(vec![0.3, -0.2, 0.1, 0.4]));
            let context_var = match kind {
                AttentionKind::Bahdanau => {
                    attend_bahdanau(&mut tape, &model, &ctx, query, &enc).unwrap().context
                }
                AttentionKind::Luong => {
                    attend_luong(&mut tape, &model, query, &enc).unwrap().0.context
                }
            };
            let outputs = tape.value(enc.outputs).clone();
            let context = tape.value(context_var).clone();
            for col in 0..4 {
                let column: Vec<f64> =
                    (0..6).map(|r| outputs.data()[r * 4 + col]).collect();
                let min = column.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let c = context.data()[col];
                assert!(c >= min - 1e-12 && c <= max + 1e-12);
            }
        }
    }

    #[test]
    fn decode_step_contracts() {
        for kind in [AttentionKind::Bahdanau, AttentionKind::Luong] {
            let config = tiny_config(kind);
            let mut rng = XorShiftStar::new(10);
            let store = init_params(&config, &mut rng).unwrap();
            let seq = tokens(4, 3, 11);
            let mut tape = Tape::new();
            let model = BoundModel::bind(&mut tape, &store, &config).unwrap();
            let enc = encode(&mut tape, &model, &seq, None).unwrap();
            let ctx = prepare_attention(&mut tape, &model, &enc).unwrap();
            let state = init_decoder(&mut tape, &model, &enc);
            // initialization copies the encoder final hiddens
            assert_eq!(state.hiddens, enc.final_hiddens);
            let (logits, _, attn) =
                decode_step(&mut tape, &model, &state, &enc, &ctx, BOS, None).unwrap();
            assert_eq!(tape.value(logits).shape(), &[1, 7]);
            let weights_sum: f64 = tape.value(attn.weights).data().iter().sum();
            assert!((weights_sum - 1.0).abs() < 1e-9);
            let probs_tape = tape.softmax_last(logits).unwrap();
            let psum: f64 = tape.value(probs_tape).data().iter().sum();
            assert!((psum - 1.0).abs() < 1e-9);
            // invalid word id is an error
            assert!(decode_step(&mut tape, &model, &state, &enc, &ctx, 7, None).is_err());
        }
    }

    #[test]
    fn nll_uniform_logits_is_log_vocab() {
        let config = tiny_config(AttentionKind::Bahdanau);
        let mut rng = XorShiftStar::new(12);
        let mut store = init_params(&config, &mut rng).unwrap();
        // zero projection forces uniform logits regardless of the state
        store.get_mut("projection.weight").unwrap().value.fill(0.0);
        store.get_mut("projection.bias").unwrap().value.fill(0.0);
        let seq = tokens(3, 3, 13);
        let loss = sentence_nll(&seq, &[4, 5, EOS], &store, &config).unwrap();
        assert!((loss - (7.0f64).ln()).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn nll_rejects_bad_targets() {
        let config = tiny_config(AttentionKind::Luong);
        let mut rng = XorShiftStar::new(14);
        let store = init_params(&config, &mut rng).unwrap();
        let seq = tokens(2, 3, 15);
        assert!(sentence_nll(&seq, &[], &store, &config).is_err());
        assert!(sentence_nll(&seq, &[4, 5], &store, &config).is_err());
    }

    #[test]
    fn greedy_decode_deterministic_and_bounded() {
        for kind in [AttentionKind::Bahdanau, AttentionKind::Luong] {
            let config = tiny_config(kind);
            let mut rng = XorShiftStar::new(16);
            let store = init_params(&config, &mut rng).unwrap();
            let seq = tokens(4, 3, 17);
            let a = greedy_decode(&seq, &store, &config, 10).unwrap();
            let b = greedy_decode(&seq, &store, &config, 10).unwrap();
            assert_eq!(a, b);
            let one = greedy_decode(&seq, &store, &config, 1).unwrap();
            assert!(one.len() <= 1);
        }
    }

    #[test]
    fn reversed_input_same_shapes() {
        let config = tiny_config(AttentionKind::Bahdanau);
        let mut rng = XorShiftStar::new(18);
        let store = init_params(&config, &mut rng).unwrap();
        let seq = tokens(5, 3, 19);
        let rev = crate::tokenization::reverse_tokens(&seq);
        let mut tape = Tape::new();
        let model = BoundModel::bind(&mut tape, &store, &config).unwrap();
        let enc_fwd = encode(&mut tape, &model, &seq, None).unwrap();
        let enc_rev = encode(&mut tape, &model, &rev, None).unwrap();
        assert_eq!(
            tape.value(enc_fwd.outputs).shape(),
            tape.value(enc_rev.outputs).shape()
        );
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        for kind in [AttentionKind::Bahdanau, AttentionKind::Luong] {
            let config = ModelConfig {
                token_dim: 3,
                layers: 2,
                hidden: 4,
                embed_dim: 3,
                vocab_size: 6,
                attention: kind,
                dropout: 0.0,
                residual: true,
                init_std: 0.3,
                input_proj: true,
            };
            let mut rng = XorShiftStar::new(20);
            let mut store = init_params(&config, &mut rng).unwrap();
            let seq = tokens(3, 3, 21);
            let target = vec![4, 5, EOS];
            let report = finite_diff_check(
                |tape, store| {
                    let model = BoundModel::bind(tape, store, &config)?;
                    sentence_nll_on_tape(tape, &model, &seq, &target, None)
                },
                &mut store,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(
                report.pass(),
                "{:?}: max rel err {} ({:?})",
                kind,
                report.max_rel_err(),
                report.failures().map(|c| c.name.clone()).collect::<Vec<_>>()
            );
        }
    }
}
