//! Recurrent encoder/decoder skeleton shared by all attention variants.

pub mod checkpoint;
pub mod lstm;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::Variant;
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

pub use lstm::{lstm_step, LstmParams};

/// Encoder stack layout: layer count, per-direction width, and where time
/// max-pooling happens. `pool_factors[l]` applies after layer `l`; a shorter
/// list leaves the remaining layers unpooled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_per_direction: usize,
    pub pool_factors: Vec<usize>,
}

impl EncoderConfig {
    /// Total time downsampling P.
    pub fn total_pool(&self) -> usize {
        self.pool_factors.iter().product::<usize>().max(1)
    }

    /// Output length for an input of `frames` frames: ceil(frames / P).
    pub fn output_len(&self, frames: usize) -> usize {
        frames.div_ceil(self.total_pool())
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_per_direction == 0 {
            return Err(Error::Config("encoder needs >= 1 layer and width".into()));
        }
        if self.pool_factors.len() > self.num_layers {
            return Err(Error::Config(format!(
                "{} pool factors for {} layers",
                self.pool_factors.len(),
                self.num_layers
            )));
        }
        if self.pool_factors.iter().any(|&p| p == 0) {
            return Err(Error::Config("pool factor 0".into()));
        }
        Ok(())
    }

    fn factor_after(&self, layer: usize) -> usize {
        self.pool_factors.get(layer).copied().unwrap_or(1)
    }
}

/// Full model hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of real output labels; EOS takes id `vocab_size`.
    pub vocab_size: usize,
    pub feat_dim: usize,
    pub encoder: EncoderConfig,
    pub dec_hidden: usize,
    pub embed_dim: usize,
    pub att_dim: usize,
    pub variant: Variant,
    pub dropout: f64,
    /// Whether the segmental attention MLP also reads the weight feedback.
    pub segmental_feedback: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 10,
            feat_dim: 8,
            encoder: EncoderConfig {
                num_layers: 2,
                hidden_per_direction: 64,
                pool_factors: vec![2],
            },
            dec_hidden: 128,
            embed_dim: 32,
            att_dim: 64,
            variant: Variant::hard(),
            dropout: 0.0,
            segmental_feedback: false,
        }
    }
}

impl ModelConfig {
    /// Label classes including EOS.
    pub fn num_classes(&self) -> usize {
        self.vocab_size + 1
    }

    /// Reserved EOS label id.
    pub fn eos_id(&self) -> usize {
        self.vocab_size
    }

    /// Encoder output feature width (both directions).
    pub fn enc_out_dim(&self) -> usize {
        2 * self.encoder.hidden_per_direction
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.variant.validate()?;
        if self.vocab_size == 0 || self.feat_dim == 0 {
            return Err(Error::Config("vocab_size and feat_dim must be >= 1".into()));
        }
        if self.dec_hidden == 0 || self.embed_dim == 0 || self.att_dim == 0 {
            return Err(Error::Config("decoder/embed/attention dims must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One MLP-attention parameter set:
/// e_t = v · tanh(h_t W_enc + W_state s + w_feedback f_t + bias).
pub struct AttentionParams {
    /// [2H × A]
    pub w_enc: Tensor,
    /// [A × H_dec]
    pub w_state: Tensor,
    /// [A], optional (segmental attention defaults to no feedback)
    pub w_feedback: Option<Tensor>,
    /// [A]
    pub bias: Tensor,
    /// [A]
    pub v: Tensor,
}

impl AttentionParams {
    fn init(rng: &mut impl Rng, enc_dim: usize, dec_hidden: usize, att_dim: usize, feedback: bool) -> Self {
        AttentionParams {
            w_enc: lstm::glorot(rng, enc_dim, att_dim),
            w_state: lstm::glorot(rng, att_dim, dec_hidden),
            w_feedback: feedback.then(|| {
                let limit = (6.0 / (att_dim + 1) as f64).sqrt();
                let vals = (0..att_dim).map(|_| rng.random_range(-limit..limit)).collect();
                Tensor::param(vec![att_dim], vals).expect("w_feedback shape")
            }),
            bias: Tensor::param(vec![att_dim], vec![0.0; att_dim]).expect("bias shape"),
            v: {
                let limit = (6.0 / (att_dim + 1) as f64).sqrt();
                let vals = (0..att_dim).map(|_| rng.random_range(-limit..limit)).collect();
                Tensor::param(vec![att_dim], vals).expect("v shape")
            },
        }
    }
}

/// All trainable weights.
pub struct ModelParams {
    pub encoder_fwd: Vec<LstmParams>,
    pub encoder_bwd: Vec<LstmParams>,
    pub decoder: LstmParams,
    /// [(V+1) × emb]; the EOS row doubles as the begin-of-sequence input.
    pub embedding: Tensor,
    pub att: AttentionParams,
    /// Second, independent attention set for the segmental variant only.
    pub att_segment: Option<AttentionParams>,
    /// [(V+1) × (H_dec + 2H + emb)]
    pub readout_w: Tensor,
    /// [V+1]
    pub readout_b: Tensor,
}

impl ModelParams {
    /// Parameters in a fixed, documented order; the checkpoint format, the
    /// optimizer state and random init all follow it.
    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        let push_lstm = |out: &mut Vec<(String, Tensor)>, prefix: String, p: &LstmParams| {
            out.push((format!("{prefix}.w_input"), p.w_input.clone()));
            out.push((format!("{prefix}.w_recurrent"), p.w_recurrent.clone()));
            out.push((format!("{prefix}.bias"), p.bias.clone()));
        };
        for (l, p) in self.encoder_fwd.iter().enumerate() {
            push_lstm(&mut out, format!("enc.l{l}.fwd"), p);
        }
        for (l, p) in self.encoder_bwd.iter().enumerate() {
            push_lstm(&mut out, format!("enc.l{l}.bwd"), p);
        }
        push_lstm(&mut out, "dec".into(), &self.decoder);
        out.push(("embedding".into(), self.embedding.clone()));
        let push_att = |out: &mut Vec<(String, Tensor)>, prefix: &str, a: &AttentionParams| {
            out.push((format!("{prefix}.w_enc"), a.w_enc.clone()));
            out.push((format!("{prefix}.w_state"), a.w_state.clone()));
            if let Some(wf) = &a.w_feedback {
                out.push((format!("{prefix}.w_feedback"), wf.clone()));
            }
            out.push((format!("{prefix}.bias"), a.bias.clone()));
            out.push((format!("{prefix}.v"), a.v.clone()));
        };
        push_att(&mut out, "att", &self.att);
        if let Some(seg) = &self.att_segment {
            push_att(&mut out, "att_seg", seg);
        }
        out.push(("readout.w".into(), self.readout_w.clone()));
        out.push(("readout.b".into(), self.readout_b.clone()));
        out
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn zero_grads(&self) {
        for t in self.tensors() {
            t.zero_grad();
        }
    }
}

/// Encoder output with precomputed per-frame attention projections.
pub struct Encoded {
    /// [T' × 2H]
    pub h: Tensor,
    /// [T' × A]: h · W_enc for the main attention
    pub att_pre: Tensor,
    /// [T' × A] for the segmental attention, when present
    pub seg_pre: Option<Tensor>,
}

impl Encoded {
    pub fn enc_len(&self) -> usize {
        self.h.dim(0)
    }
}

/// Recurrent decoder state between output steps.
pub struct DecoderState {
    pub h: Tensor,
    pub c: Tensor,
    /// Accumulated attention-weight feedback over encoder frames; nonnegative.
    pub feedback: Tensor,
    /// Context consumed by the step that produced this state.
    pub prev_context: Tensor,
    /// Embedding consumed by the step that produced this state.
    pub prev_embed: Tensor,
}

impl DecoderState {
    pub fn with_feedback(&self, feedback: Tensor) -> DecoderState {
        DecoderState {
            h: self.h.clone(),
            c: self.c.clone(),
            feedback,
            prev_context: self.prev_context.clone(),
            prev_embed: self.prev_embed.clone(),
        }
    }
}

impl Clone for DecoderState {
    fn clone(&self) -> Self {
        DecoderState {
            h: self.h.clone(),
            c: self.c.clone(),
            feedback: self.feedback.clone(),
            prev_context: self.prev_context.clone(),
            prev_embed: self.prev_embed.clone(),
        }
    }
}

pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    /// Fresh model with seeded random initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc_h = config.encoder.hidden_per_direction;
        let mut encoder_fwd = Vec::new();
        let mut encoder_bwd = Vec::new();
        for l in 0..config.encoder.num_layers {
            let input = if l == 0 { config.feat_dim } else { 2 * enc_h };
            encoder_fwd.push(LstmParams::init(&mut rng, input, enc_h));
        }
        for l in 0..config.encoder.num_layers {
            let input = if l == 0 { config.feat_dim } else { 2 * enc_h };
            encoder_bwd.push(LstmParams::init(&mut rng, input, enc_h));
        }
        let decoder = LstmParams::init(&mut rng, config.embed_dim + config.enc_out_dim(), config.dec_hidden);
        let embedding = lstm::glorot(&mut rng, config.num_classes(), config.embed_dim);
        let att = AttentionParams::init(&mut rng, config.enc_out_dim(), config.dec_hidden, config.att_dim, true);
        let att_segment = if config.variant.kind == crate::attention::VariantKind::Segmental {
            Some(AttentionParams::init(
                &mut rng,
                config.enc_out_dim(),
                config.dec_hidden,
                config.att_dim,
                config.segmental_feedback,
            ))
        } else {
            None
        };
        let ro_in = config.dec_hidden + config.enc_out_dim() + config.embed_dim;
        let readout_w = lstm::glorot(&mut rng, config.num_classes(), ro_in);
        let readout_b =
            Tensor::param(vec![config.num_classes()], vec![0.0; config.num_classes()]).expect("bias");
        Ok(Model {
            config,
            params: ModelParams {
                encoder_fwd,
                encoder_bwd,
                decoder,
                embedding,
                att,
                att_segment,
                readout_w,
                readout_b,
            },
        })
    }

    /// Bidirectional LSTM stack with time max-pooling; `x` is [T × F].
    pub fn encode(&self, tape: &Tape, x: &Tensor) -> Result<Encoded> {
        self.encode_inner(tape, x, None)
    }

    /// Like [`Model::encode`] but applies inverted dropout to each layer's
    /// output when the configured rate is positive. Training only.
    pub fn encode_with_dropout(
        &self,
        tape: &Tape,
        x: &Tensor,
        rng: &mut ChaCha8Rng,
    ) -> Result<Encoded> {
        self.encode_inner(tape, x, Some(rng))
    }

    fn encode_inner(&self, tape: &Tape, x: &Tensor, mut rng: Option<&mut ChaCha8Rng>) -> Result<Encoded> {
        let sx = x.shape();
        if sx.len() != 2 || sx[1] != self.config.feat_dim {
            return Err(Error::shape(
                "encode",
                format!("input {:?}, expected [T × {}]", sx, self.config.feat_dim),
            ));
        }
        let frames = sx[0];
        let mut layer_in: Vec<Tensor> = (0..frames).map(|t| x.row(t)).collect::<Result<_>>()?;
        for l in 0..self.config.encoder.num_layers {
            let fwd = &self.params.encoder_fwd[l];
            let bwd = &self.params.encoder_bwd[l];
            let t_len = layer_in.len();

            let mut fwd_out = Vec::with_capacity(t_len);
            let (mut h, mut c) = fwd.zero_state();
            for frame in &layer_in {
                let (nh, nc) = lstm_step(tape, fwd, frame, (&h, &c))?;
                fwd_out.push(nh.clone());
                h = nh;
                c = nc;
            }

            let mut bwd_out = vec![None; t_len];
            let (mut h, mut c) = bwd.zero_state();
            for t in (0..t_len).rev() {
                let (nh, nc) = lstm_step(tape, bwd, &layer_in[t], (&h, &c))?;
                bwd_out[t] = Some(nh.clone());
                h = nh;
                c = nc;
            }

            let mut combined: Vec<Tensor> = (0..t_len)
                .map(|t| tape.concat(&[&fwd_out[t], bwd_out[t].as_ref().unwrap()]))
                .collect::<Result<_>>()?;

            if let Some(rng) = rng.as_deref_mut() {
                if self.config.dropout > 0.0 {
                    let keep = 1.0 - self.config.dropout;
                    for frame in &mut combined {
                        let mask: Vec<f64> = (0..frame.numel())
                            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect();
                        *frame = tape.mul(frame, &Tensor::vector(mask))?;
                    }
                }
            }

            let factor = self.config.encoder.factor_after(l);
            if factor > 1 {
                let mut pooled = Vec::with_capacity(combined.len().div_ceil(factor));
                for window in combined.chunks(factor) {
                    pooled.push(tape.max_vecs(window)?);
                }
                combined = pooled;
            }
            layer_in = combined;
        }
        let h = tape.stack_rows(&layer_in)?;
        let att_pre = tape.matmul(&h, &self.params.att.w_enc)?;
        let seg_pre = match &self.params.att_segment {
            Some(seg) => Some(tape.matmul(&h, &seg.w_enc)?),
            None => None,
        };
        Ok(Encoded { h, att_pre, seg_pre })
    }

    /// Decoder state before the first output step.
    pub fn init_state(&self, enc_len: usize) -> DecoderState {
        DecoderState {
            h: Tensor::zeros(vec![self.config.dec_hidden]),
            c: Tensor::zeros(vec![self.config.dec_hidden]),
            feedback: Tensor::zeros(vec![enc_len]),
            prev_context: Tensor::zeros(vec![self.config.enc_out_dim()]),
            prev_embed: Tensor::zeros(vec![self.config.embed_dim]),
        }
    }

    /// MLP-attention energies, one per encoder frame:
    /// e_t = v · tanh(h_t W_enc + W_state s + w_feedback f_t + bias).
    pub fn attention_energies(&self, tape: &Tape, enc: &Encoded, state: &DecoderState) -> Result<Tensor> {
        energies_with(tape, &self.params.att, &enc.att_pre, state)
    }

    /// Energies from the segmental attention parameter set.
    pub fn segment_energies(&self, tape: &Tape, enc: &Encoded, state: &DecoderState) -> Result<Tensor> {
        let seg = self
            .params
            .att_segment
            .as_ref()
            .ok_or_else(|| Error::Contract("segment energies on a non-segmental model".into()))?;
        let pre = enc
            .seg_pre
            .as_ref()
            .ok_or_else(|| Error::Contract("encoder output lacks segmental projections".into()))?;
        energies_with(tape, seg, pre, state)
    }

    /// One decoder LSTM step over [embed(y_prev); context], then the readout:
    /// logits = W_out [h'; context; embed(y_prev)] + b_out.
    pub fn decoder_step(
        &self,
        tape: &Tape,
        state: &DecoderState,
        y_prev: usize,
        context: &Tensor,
    ) -> Result<(DecoderState, Tensor)> {
        if y_prev >= self.config.num_classes() {
            return Err(Error::bounds(
                "decoder-step",
                format!("unknown label id {y_prev} (vocab {} + eos)", self.config.vocab_size),
            ));
        }
        let emb = tape.gather_row(&self.params.embedding, y_prev)?;
        let input = tape.concat(&[&emb, context])?;
        let (h, c) = lstm_step(tape, &self.params.decoder, &input, (&state.h, &state.c))?;
        let ro_in = tape.concat(&[&h, context, &emb])?;
        let logits = tape.add(&tape.matvec(&self.params.readout_w, &ro_in)?, &self.params.readout_b)?;
        let new_state = DecoderState {
            h,
            c,
            feedback: state.feedback.clone(),
            prev_context: context.clone(),
            prev_embed: emb,
        };
        Ok((new_state, logits))
    }

    /// Stable log label distribution from readout logits.
    pub fn label_log_probs(&self, tape: &Tape, logits: &Tensor) -> Result<Tensor> {
        let probs = tape.softmax(logits, 1.0)?;
        Ok(tape.log(&probs))
    }
}

fn energies_with(tape: &Tape, att: &AttentionParams, pre: &Tensor, state: &DecoderState) -> Result<Tensor> {
    let query = tape.add(&tape.matvec(&att.w_state, &state.h)?, &att.bias)?;
    let mut m = tape.add_row_broadcast(pre, &query)?;
    if let Some(wf) = &att.w_feedback {
        m = tape.add(&m, &tape.outer(&state.feedback, wf)?)?;
    }
    tape.matvec(&tape.tanh(&m), &att.v)
}
