//! Sentence encoder: embedding lookup → BiLSTM → structured
//! self-attention → MLP head. The same architecture is instantiated for
//! word sequences and for linearized parse trees.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{xavier_uniform, Axis, NumericsError, ParamId, ParamSet, Real, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("empty sequence")]
    EmptySequence,
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    IdOutOfRange { id: usize, vocab: usize },
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("parameter {name} missing or mis-shaped (expected {expected:?})")]
    BadParam { name: String, expected: Vec<usize> },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    pub attention_hidden: usize,
    pub attention_hops: usize,
    pub mlp_hidden: usize,
    pub output_dim: usize,
    pub max_len: usize,
}

impl EncoderConfig {
    /// Full-size word encoder: 300-dim embeddings, 40-token cap.
    pub fn lexical(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            embed_dim: 300,
            lstm_hidden: 128,
            attention_hidden: 64,
            attention_hops: 4,
            mlp_hidden: 256,
            output_dim: 128,
            max_len: 40,
        }
    }

    /// Full-size tree encoder: 100-dim label embeddings, 80-label cap.
    pub fn syntactic(vocab_size: usize) -> Self {
        EncoderConfig {
            embed_dim: 100,
            max_len: 80,
            ..Self::lexical(vocab_size)
        }
    }

    /// Shrinks the network for single-core desk runs; caps are unchanged.
    pub fn desk(self) -> Self {
        let embed_dim = if self.embed_dim >= 300 { 32 } else { 16 };
        EncoderConfig {
            embed_dim,
            lstm_hidden: 24,
            attention_hidden: 16,
            attention_hops: 2,
            mlp_hidden: 32,
            output_dim: 16,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("attention_hidden", self.attention_hidden),
            ("attention_hops", self.attention_hops),
            ("mlp_hidden", self.mlp_hidden),
            ("output_dim", self.output_dim),
            ("max_len", self.max_len),
        ];
        match dims.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(EncoderError::InvalidConfig(format!("{name} must be at least 1"))),
            None => Ok(()),
        }
    }
}

/// Keeps the first `max_len` ids.
pub fn truncate(ids: &[usize], max_len: usize) -> &[usize] {
    &ids[..ids.len().min(max_len)]
}

fn bind<T: Real>(params: &ParamSet<T>, name: String, shape: Vec<usize>) -> Result<ParamId, EncoderError> {
    match params.id(&name) {
        Some(id) if params.value(id).shape() == shape.as_slice() => Ok(id),
        _ => Err(EncoderError::BadParam { name, expected: shape }),
    }
}

/// Adds a parameter, or checks the existing one's shape when `rng` is `None`.
fn declare<T: Real, R: Rng + ?Sized>(
    params: &mut ParamSet<T>,
    rng: Option<&mut R>,
    name: String,
    shape: Vec<usize>,
    init: impl FnOnce(Vec<usize>, &mut R) -> Tensor<T>,
) -> Result<ParamId, EncoderError> {
    match rng {
        Some(rng) => {
            let value = init(shape, rng);
            Ok(params.add(name, value)?)
        }
        None => bind(params, name, shape),
    }
}

/// One direction of an LSTM. Gate blocks are ordered `i, f, g, o` along
/// the `4u` axis.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl Lstm {
    fn declare<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        mut rng: Option<&mut R>,
        prefix: &str,
        input: usize,
        u: usize,
    ) -> Result<Self, EncoderError> {
        let w_ih = declare(params, rng.as_deref_mut(), format!("{prefix}.w_ih"), vec![input, 4 * u], |s, r| xavier_uniform(s, input, 4 * u, r))?;
        let w_hh = declare(params, rng.as_deref_mut(), format!("{prefix}.w_hh"), vec![u, 4 * u], |s, r| xavier_uniform(s, u, 4 * u, r))?;
        let b = declare(params, rng, format!("{prefix}.b"), vec![1, 4 * u], |s, _| Tensor::zeros(s))?;
        Ok(Lstm { w_ih, w_hh, b, hidden: u })
    }

    /// Hidden states `[n × u]` in input order; `reverse` runs the recurrence
    /// from the last position to the first.
    pub fn run<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var, reverse: bool) -> Result<Var, NumericsError> {
        let n = tape.shape(x)[0];
        let u = self.hidden;
        let (w_ih, w_hh, b) = (tape.param(self.w_ih), tape.param(self.w_hh), tape.param(self.b));
        let xw = tape.matmul(x, w_ih)?;
        let xw = tape.add(xw, b)?;
        let mut c = tape.constant(Tensor::zeros(vec![1, u]))?;
        let mut h: Option<Var> = None;
        let mut states = vec![None; n];
        for step in 0..n {
            let t = if reverse { n - 1 - step } else { step };
            let mut pre = tape.slice(xw, Axis::Rows, t, 1)?;
            if let Some(h_prev) = h {
                let rec = tape.matmul(h_prev, w_hh)?;
                pre = tape.add(pre, rec)?;
            }
            let state = tape.lstm_cell(pre, c)?;
            let h_t = tape.slice(state, Axis::Cols, 0, u)?;
            c = tape.slice(state, Axis::Cols, u, u)?;
            h = Some(h_t);
            states[t] = Some(h_t);
        }
        let states: Vec<Var> = states.into_iter().map(|s| s.expect("every position visited")).collect();
        if n == 1 {
            return Ok(states[0]);
        }
        tape.concat(&states, Axis::Rows)
    }
}

#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    pub fn declare<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        mut rng: Option<&mut R>,
        prefix: &str,
        input: usize,
        u: usize,
    ) -> Result<Self, EncoderError> {
        Ok(BiLstm {
            forward: Lstm::declare(params, rng.as_deref_mut(), &format!("{prefix}.lstm_fw"), input, u)?,
            backward: Lstm::declare(params, rng, &format!("{prefix}.lstm_bw"), input, u)?,
        })
    }

    /// `H[n × 2u]`: row `t` is the forward state at `t` followed by the
    /// backward state at `t`. Initial states are zero.
    pub fn run<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var, NumericsError> {
        let hf = self.forward.run(tape, x, false)?;
        let hb = self.backward.run(tape, x, true)?;
        tape.concat(&[hf, hb], Axis::Cols)
    }
}

/// `A = softmax(W_s2 · tanh(W_s1 · Hᵀ))`, `M = A · H`.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub w_s1: ParamId,
    pub w_s2: ParamId,
}

impl SelfAttention {
    pub fn declare<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        mut rng: Option<&mut R>,
        prefix: &str,
        width: usize,
        d_a: usize,
        r: usize,
    ) -> Result<Self, EncoderError> {
        Ok(SelfAttention {
            w_s1: declare(params, rng.as_deref_mut(), format!("{prefix}.attn.w_s1"), vec![d_a, width], |s, g| xavier_uniform(s, width, d_a, g))?,
            w_s2: declare(params, rng, format!("{prefix}.attn.w_s2"), vec![r, d_a], |s, g| xavier_uniform(s, d_a, r, g))?,
        })
    }

    /// Returns `(M[r × 2u], A[r × n])`.
    pub fn run<T: Real>(&self, tape: &mut Tape<'_, T>, h: Var) -> Result<(Var, Var), NumericsError> {
        let (w_s1, w_s2) = (tape.param(self.w_s1), tape.param(self.w_s2));
        let ht = tape.transpose(h)?;
        let s = tape.matmul(w_s1, ht)?;
        let s = tape.tanh(s)?;
        let logits = tape.matmul(w_s2, s)?;
        let a = tape.softmax_rows(logits)?;
        let m = tape.matmul(a, h)?;
        Ok((m, a))
    }
}

/// Single tanh hidden layer followed by a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    pub fn declare<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        mut rng: Option<&mut R>,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
    ) -> Result<Self, EncoderError> {
        Ok(Mlp {
            w1: declare(params, rng.as_deref_mut(), format!("{prefix}.mlp.w1"), vec![input, hidden], |s, g| xavier_uniform(s, input, hidden, g))?,
            b1: declare(params, rng.as_deref_mut(), format!("{prefix}.mlp.b1"), vec![1, hidden], |s, _| Tensor::zeros(s))?,
            w2: declare(params, rng.as_deref_mut(), format!("{prefix}.mlp.w2"), vec![hidden, output], |s, g| xavier_uniform(s, hidden, output, g))?,
            b2: declare(params, rng, format!("{prefix}.mlp.b2"), vec![1, output], |s, _| Tensor::zeros(s))?,
        })
    }

    /// `x` is a `[1 × input]` row.
    pub fn run<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var, NumericsError> {
        let (w1, b1, w2, b2) = (tape.param(self.w1), tape.param(self.b1), tape.param(self.w2), tape.param(self.b2));
        let z = tape.matmul(x, w1)?;
        let z = tape.add(z, b1)?;
        let z = tape.tanh(z)?;
        let z = tape.matmul(z, w2)?;
        tape.add(z, b2)
    }
}

/// Handles to one encoder's parameters inside a shared [`ParamSet`]. All
/// names start with `prefix.`.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub prefix: String,
    pub embedding: ParamId,
    pub bilstm: BiLstm,
    pub attention: SelfAttention,
    pub mlp: Mlp,
}

impl Encoder {
    /// Registers freshly initialized parameters under `prefix`.
    pub fn init<T: Real, R: Rng + ?Sized>(config: EncoderConfig, prefix: &str, params: &mut ParamSet<T>, rng: &mut R) -> Result<Self, EncoderError> {
        Self::declare(config, prefix, params, Some(rng))
    }

    /// Binds to parameters already present in `params` (e.g. loaded from a
    /// checkpoint), checking every shape.
    pub fn bind<T: Real>(config: EncoderConfig, prefix: &str, params: &mut ParamSet<T>) -> Result<Self, EncoderError> {
        Self::declare::<T, rand::rngs::mock::StepRng>(config, prefix, params, None)
    }

    fn declare<T: Real, R: Rng + ?Sized>(config: EncoderConfig, prefix: &str, params: &mut ParamSet<T>, mut rng: Option<&mut R>) -> Result<Self, EncoderError> {
        config.validate()?;
        let c = &config;
        let embedding = declare(params, rng.as_deref_mut(), format!("{prefix}.embedding"), vec![c.vocab_size, c.embed_dim], |s, g| xavier_uniform(s, c.vocab_size, c.embed_dim, g))?;
        let bilstm = BiLstm::declare(params, rng.as_deref_mut(), prefix, c.embed_dim, c.lstm_hidden)?;
        let attention = SelfAttention::declare(params, rng.as_deref_mut(), prefix, 2 * c.lstm_hidden, c.attention_hidden, c.attention_hops)?;
        let mlp = Mlp::declare(params, rng, prefix, c.attention_hops * 2 * c.lstm_hidden, c.mlp_hidden, c.output_dim)?;
        Ok(Encoder {
            config,
            prefix: prefix.to_string(),
            embedding,
            bilstm,
            attention,
            mlp,
        })
    }

    /// `[n × embed_dim]` rows of the embedding table.
    pub fn embed<T: Real>(&self, tape: &mut Tape<'_, T>, ids: &[usize]) -> Result<Var, EncoderError> {
        if ids.is_empty() {
            return Err(EncoderError::EmptySequence);
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(EncoderError::IdOutOfRange { id, vocab: self.config.vocab_size });
        }
        let table = tape.param(self.embedding);
        Ok(tape.gather_rows(table, ids)?)
    }

    pub fn bilstm<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var, EncoderError> {
        Ok(self.bilstm.run(tape, x)?)
    }

    pub fn self_attention<T: Real>(&self, tape: &mut Tape<'_, T>, h: Var) -> Result<(Var, Var), EncoderError> {
        Ok(self.attention.run(tape, h)?)
    }

    /// Sentence vector `[1 × output_dim]`. Input beyond `max_len` is ignored.
    pub fn encode<T: Real>(&self, tape: &mut Tape<'_, T>, ids: &[usize]) -> Result<Var, EncoderError> {
        let ids = truncate(ids, self.config.max_len);
        let x = self.embed(tape, ids)?;
        let h = self.bilstm(tape, x)?;
        let (m, _) = self.self_attention(tape, h)?;
        let width = self.config.attention_hops * 2 * self.config.lstm_hidden;
        let flat = tape.reshape(m, vec![1, width])?;
        Ok(self.mlp.run(tape, flat)?)
    }

    /// Names of all parameters owned by this encoder.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let (f, b) = (&self.bilstm.forward, &self.bilstm.backward);
        vec![
            self.embedding,
            f.w_ih,
            f.w_hh,
            f.b,
            b.w_ih,
            b.w_hh,
            b.b,
            self.attention.w_s1,
            self.attention.w_s2,
            self.mlp.w1,
            self.mlp.b1,
            self.mlp.w2,
            self.mlp.b2,
        ]
    }
}
