//! Compact transformer encoder-decoder.
//!
//! Pre-norm blocks with RMS normalization, bias-free projections,
//! sinusoidal absolute positions, and a tied input embedding for both
//! sides. Training passes record on a [`Tape`]; greedy decoding runs
//! the same graph code on a throwaway tape and never takes gradients.

use std::fmt;

use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{NodeId, Tape, TapeError};
use crate::tensor::Tensor;
use crate::vocab::{BOS, EOS};

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    SequenceTooLong { len: usize, max: usize },
    EmptyPrompt,
    BadConfig(String),
    Tape(TapeError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SequenceTooLong { len, max } => {
                write!(f, "sequence of {len} tokens exceeds the model maximum {max}; refusing to truncate")
            }
            Self::EmptyPrompt => write!(f, "prompt must contain at least one token"),
            Self::BadConfig(msg) => write!(f, "bad model config: {msg}"),
            Self::Tape(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<TapeError> for ModelError {
    fn from(e: TapeError) -> Self {
        ModelError::Tape(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub max_seq_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0, // filled from the vocabulary
            d_model: 64,
            heads: 4,
            d_ff: 128,
            encoder_layers: 2,
            decoder_layers: 2,
            max_seq_len: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size < 4 {
            return Err(ModelError::BadConfig(format!(
                "vocab_size {} below the 4 reserved ids",
                self.vocab_size
            )));
        }
        if self.d_model == 0 || self.heads == 0 || self.d_ff == 0 {
            return Err(ModelError::BadConfig("zero-sized dimension".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return Err(ModelError::BadConfig("need at least one layer per side".into()));
        }
        if self.max_seq_len < 2 {
            return Err(ModelError::BadConfig("max_seq_len below 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct AttnIds {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct EncLayerIds {
    norm1: ParamId,
    attn: AttnIds,
    norm2: ParamId,
    ff_w1: ParamId,
    ff_w2: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct DecLayerIds {
    norm1: ParamId,
    self_attn: AttnIds,
    norm2: ParamId,
    cross_attn: AttnIds,
    norm3: ParamId,
    ff_w1: ParamId,
    ff_w2: ParamId,
}

#[derive(Debug, Clone)]
struct ModelIds {
    embed: ParamId,
    enc: Vec<EncLayerIds>,
    enc_norm: ParamId,
    dec: Vec<DecLayerIds>,
    dec_norm: ParamId,
    out_w: ParamId,
}

/// All learnable tensors plus the derived positional table.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    ids: ModelIds,
    pos: Tensor,
}

/// Node ids of every parameter staged on one tape, aligned with the
/// store's registration order.
pub struct StagedParams {
    nodes: Vec<NodeId>,
}

impl StagedParams {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.nodes[id.0]
    }

    /// (parameter, tape node) pairs, in registration order.
    pub fn bindings(&self) -> impl Iterator<Item = (ParamId, NodeId)> + '_ {
        self.nodes.iter().enumerate().map(|(i, &n)| (ParamId(i), n))
    }
}

impl ModelParams {
    /// Fresh parameters with scaled-uniform init (bound
    /// `sqrt(6 / (fan_in + fan_out))`) drawn from `rng`; norm gains
    /// start at one.
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<ModelParams, ModelError> {
        config.validate()?;
        let d = config.d_model;
        let mut store = ParamStore::new();

        let mat = |store: &mut ParamStore, rng: &mut Rng, name: String, r: usize, c: usize| {
            let bound = (6.0 / (r + c) as f64).sqrt();
            let data: Vec<f64> = (0..r * c).map(|_| rng.uniform_in(-bound, bound)).collect();
            store.add(name, Tensor::from_raw(vec![r, c], data))
        };
        let gain = |store: &mut ParamStore, name: String, n: usize| {
            store.add(name, Tensor::from_raw(vec![n], vec![1.0; n]))
        };

        let embed = mat(&mut store, rng, "embed.tok".into(), config.vocab_size, d);

        let attn = |store: &mut ParamStore, rng: &mut Rng, prefix: &str| AttnIds {
            wq: mat(store, rng, format!("{prefix}.wq"), d, d),
            wk: mat(store, rng, format!("{prefix}.wk"), d, d),
            wv: mat(store, rng, format!("{prefix}.wv"), d, d),
            wo: mat(store, rng, format!("{prefix}.wo"), d, d),
        };

        let mut enc = Vec::new();
        for l in 0..config.encoder_layers {
            let norm1 = gain(&mut store, format!("enc.{l}.norm1.g"), d);
            let a = attn(&mut store, rng, &format!("enc.{l}.attn"));
            let norm2 = gain(&mut store, format!("enc.{l}.norm2.g"), d);
            let ff_w1 = mat(&mut store, rng, format!("enc.{l}.ff.w1"), d, config.d_ff);
            let ff_w2 = mat(&mut store, rng, format!("enc.{l}.ff.w2"), config.d_ff, d);
            enc.push(EncLayerIds { norm1, attn: a, norm2, ff_w1, ff_w2 });
        }
        let enc_norm = gain(&mut store, "enc.norm.g".into(), d);

        let mut dec = Vec::new();
        for l in 0..config.decoder_layers {
            let norm1 = gain(&mut store, format!("dec.{l}.norm1.g"), d);
            let self_attn = attn(&mut store, rng, &format!("dec.{l}.self"));
            let norm2 = gain(&mut store, format!("dec.{l}.norm2.g"), d);
            let cross_attn = attn(&mut store, rng, &format!("dec.{l}.cross"));
            let norm3 = gain(&mut store, format!("dec.{l}.norm3.g"), d);
            let ff_w1 = mat(&mut store, rng, format!("dec.{l}.ff.w1"), d, config.d_ff);
            let ff_w2 = mat(&mut store, rng, format!("dec.{l}.ff.w2"), config.d_ff, d);
            dec.push(DecLayerIds { norm1, self_attn, norm2, cross_attn, norm3, ff_w1, ff_w2 });
        }
        let dec_norm = gain(&mut store, "dec.norm.g".into(), d);
        let out_w = mat(&mut store, rng, "out.w".into(), d, config.vocab_size);

        let ids = ModelIds { embed, enc, enc_norm, dec, dec_norm, out_w };
        let pos = sinusoidal_table(config.max_seq_len, d);
        Ok(ModelParams { config, store, ids, pos })
    }

    /// Rebuilds the structural index for a store loaded from a
    /// checkpoint. The store must have the registration order `init`
    /// produces for `config`.
    pub fn from_store(config: ModelConfig, store: ParamStore) -> Result<ModelParams, ModelError> {
        let mut rng = Rng::new(0);
        let template = ModelParams::init(config, &mut rng)?;
        if template.store.len() != store.len() {
            return Err(ModelError::BadConfig(format!(
                "store has {} tensors, config implies {}",
                store.len(),
                template.store.len()
            )));
        }
        for (id, (name, t)) in template.store.iter().enumerate() {
            let got = store.get(ParamId(id));
            if store.name(ParamId(id)) != name || got.shape() != t.shape() {
                return Err(ModelError::BadConfig(format!(
                    "tensor {id} is {}{:?}, config implies {name}{:?}",
                    store.name(ParamId(id)),
                    got.shape(),
                    t.shape()
                )));
            }
        }
        Ok(ModelParams { store, ..template })
    }

    /// Pushes every parameter onto the tape, once, as leaves.
    pub fn stage(&self, tape: &mut Tape) -> StagedParams {
        let nodes = self
            .store
            .ids()
            .map(|id| tape.leaf(self.store.get(id).clone()))
            .collect();
        StagedParams { nodes }
    }

    fn check_len(&self, len: usize) -> Result<(), ModelError> {
        if len > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong { len, max: self.config.max_seq_len });
        }
        Ok(())
    }

    fn embed_with_pos(
        &self,
        tape: &mut Tape,
        staged: &StagedParams,
        ids: &[u32],
    ) -> Result<NodeId, ModelError> {
        let d = self.config.d_model;
        let emb = tape.embed_rows(staged.node(self.ids.embed), ids)?;
        let mut pos_rows = Vec::with_capacity(ids.len() * d);
        pos_rows.extend_from_slice(&self.pos.data()[..ids.len() * d]);
        let pos = tape.leaf(Tensor::from_raw(vec![ids.len(), d], pos_rows));
        Ok(tape.add(emb, pos)?)
    }

    fn attention(
        &self,
        tape: &mut Tape,
        staged: &StagedParams,
        x_q: NodeId,
        x_kv: NodeId,
        ids: &AttnIds,
        causal: bool,
    ) -> Result<NodeId, ModelError> {
        let dk = self.config.d_model / self.config.heads;
        let q = tape.matmul(x_q, staged.node(ids.wq))?;
        let k = tape.matmul(x_kv, staged.node(ids.wk))?;
        let v = tape.matmul(x_kv, staged.node(ids.wv))?;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = tape.col_slice(q, h * dk, dk)?;
            let kh = tape.col_slice(k, h * dk, dk)?;
            let vh = tape.col_slice(v, h * dk, dk)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scaled = tape.scale(scores, scale);
            let probs = if causal {
                tape.causal_softmax_rows(scaled)?
            } else {
                tape.softmax_rows(scaled)
            };
            heads.push(tape.matmul(probs, vh)?);
        }
        let ctx = tape.col_concat(&heads)?;
        Ok(tape.matmul(ctx, staged.node(ids.wo))?)
    }

    fn feed_forward(
        &self,
        tape: &mut Tape,
        staged: &StagedParams,
        x: NodeId,
        w1: ParamId,
        w2: ParamId,
    ) -> Result<NodeId, ModelError> {
        let h = tape.matmul(x, staged.node(w1))?;
        let r = tape.relu(h);
        Ok(tape.matmul(r, staged.node(w2))?)
    }

    /// Runs the encoder stack over `prompt_ids`, returning the final
    /// hidden states `[S, d]`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        staged: &StagedParams,
        prompt_ids: &[u32],
    ) -> Result<NodeId, ModelError> {
        if prompt_ids.is_empty() {
            return Err(ModelError::EmptyPrompt);
        }
        self.check_len(prompt_ids.len())?;
        let mut x = self.embed_with_pos(tape, staged, prompt_ids)?;
        for layer in &self.ids.enc {
            let n1 = tape.rms_norm(x, staged.node(layer.norm1))?;
            let a = self.attention(tape, staged, n1, n1, &layer.attn, false)?;
            x = tape.add(x, a)?;
            let n2 = tape.rms_norm(x, staged.node(layer.norm2))?;
            let f = self.feed_forward(tape, staged, n2, layer.ff_w1, layer.ff_w2)?;
            x = tape.add(x, f)?;
        }
        Ok(tape.rms_norm(x, staged.node(self.ids.enc_norm))?)
    }

    /// Runs the decoder stack over `dec_in_ids` with cross-attention
    /// into `enc_out`, returning final hidden states `[T, d]`.
    fn decode_states(
        &self,
        tape: &mut Tape,
        staged: &StagedParams,
        enc_out: NodeId,
        dec_in_ids: &[u32],
    ) -> Result<NodeId, ModelError> {
        self.check_len(dec_in_ids.len())?;
        let mut x = self.embed_with_pos(tape, staged, dec_in_ids)?;
        for layer in &self.ids.dec {
            let n1 = tape.rms_norm(x, staged.node(layer.norm1))?;
            let a = self.attention(tape, staged, n1, n1, &layer.self_attn, true)?;
            x = tape.add(x, a)?;
            let n2 = tape.rms_norm(x, staged.node(layer.norm2))?;
            let c = self.attention(tape, staged, n2, enc_out, &layer.cross_attn, false)?;
            x = tape.add(x, c)?;
            let n3 = tape.rms_norm(x, staged.node(layer.norm3))?;
            let f = self.feed_forward(tape, staged, n3, layer.ff_w1, layer.ff_w2)?;
            x = tape.add(x, f)?;
        }
        Ok(tape.rms_norm(x, staged.node(self.ids.dec_norm))?)
    }

    /// Teacher-forced mean per-token negative log-likelihood of
    /// `target_ids` given `prompt_ids`, recorded on `tape` against
    /// already-staged parameters.
    pub fn forward_nll_on(
        &self,
        tape: &mut Tape,
        staged: &StagedParams,
        prompt_ids: &[u32],
        target_ids: &[u32],
    ) -> Result<NodeId, ModelError> {
        self.check_len(target_ids.len() + 1)?;
        let enc_out = self.encode(tape, staged, prompt_ids)?;
        let mut dec_in = Vec::with_capacity(target_ids.len() + 1);
        dec_in.push(BOS);
        dec_in.extend_from_slice(target_ids);
        let states = self.decode_states(tape, staged, enc_out, &dec_in)?;
        let logits = tape.matmul(states, staged.node(self.ids.out_w))?;
        let mut targets = Vec::with_capacity(target_ids.len() + 1);
        targets.extend_from_slice(target_ids);
        targets.push(EOS);
        Ok(tape.cross_entropy(logits, &targets)?)
    }

    /// Convenience wrapper that stages the parameters on a fresh spot
    /// of `tape` and evaluates one loss.
    pub fn forward_nll(
        &self,
        tape: &mut Tape,
        prompt_ids: &[u32],
        target_ids: &[u32],
    ) -> Result<NodeId, ModelError> {
        let staged = self.stage(tape);
        self.forward_nll_on(tape, &staged, prompt_ids, target_ids)
    }

    /// Greedy argmax decoding: encodes the prompt once, then extends
    /// token by token until EOS, `max_len` tokens, or the context
    /// window fills. Ties pick the lowest token id. Pure in
    /// `(self, prompt_ids, max_len)`.
    pub fn greedy_decode(&self, prompt_ids: &[u32], max_len: usize) -> Result<Vec<u32>, ModelError> {
        assert!(max_len >= 1, "max_len must be at least 1");
        let mut tape = Tape::new();
        let staged = self.stage(&mut tape);
        let enc_out = self.encode(&mut tape, &staged, prompt_ids)?;

        let d = self.config.d_model;
        let v = self.config.vocab_size;
        let out_w = self.store.get(self.ids.out_w).data();
        let mut prefix = vec![BOS];
        let mut out = Vec::new();
        let mut logits = vec![0.0; v];
        while out.len() < max_len && prefix.len() < self.config.max_seq_len {
            let states = self.decode_states(&mut tape, &staged, enc_out, &prefix)?;
            let last = &tape.value(states).data()[(prefix.len() - 1) * d..prefix.len() * d];
            logits.iter_mut().for_each(|l| *l = 0.0);
            crate::tensor::mm_nn_acc(last, out_w, 1, d, v, &mut logits);
            let mut best = 0usize;
            for (j, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = j;
                }
            }
            if best as u32 == EOS {
                break;
            }
            out.push(best as u32);
            prefix.push(best as u32);
        }
        Ok(out)
    }
}

fn sinusoidal_table(max_len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; max_len * d];
    for p in 0..max_len {
        for i in 0..d / 2 {
            let rate = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data[p * d + 2 * i] = (p as f64 * rate).sin();
            data[p * d + 2 * i + 1] = (p as f64 * rate).cos();
        }
    }
    Tensor::from_raw(vec![max_len, d], data)
}
