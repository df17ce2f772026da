//! Contrastive co-training of the lexical and syntactic encoders.
//!
//! Each sentence in a batch forms a genuine pair with its own linearized
//! tree and a false pair with the tree of another batch item, chosen by a
//! random derangement. The loss is
//! `E = 1/(2N) Σ y·d² + (1−y)·max(margin − d, 0)²` with `d` the Euclidean
//! distance between the two sentence vectors.
//!
//! A training step encodes every item once per encoder on its own tape,
//! evaluates the loss on a separate tape over the resulting vectors, and
//! pushes the vector gradients back through each encoder tape. Per-item
//! parameter gradients are summed in item order, so results do not depend
//! on thread scheduling.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::corpus::Sentence;
use crate::embeddings::EmbeddingTable;
use crate::encoder::{truncate, Encoder, EncoderConfig, EncoderError};
use crate::numerics::{
    load_checkpoint, save_checkpoint, Adam, AdamConfig, Checkpoint, CheckpointError, NumericsError, ParamGrads, ParamSet, Real, Tape, Tensor, Var,
};
use crate::treebank::linearize;
use crate::vocab::Vocab;

#[derive(Debug, Error)]
pub enum SiameseError {
    #[error("batch of {0} items is too small to form false pairs")]
    BatchTooSmall(usize),
    #[error("vector dimensions differ ({0} vs {1})")]
    DimMismatch(usize, usize),
    #[error("non-finite value at step {step}: {source}")]
    NonFinite { step: u64, source: NumericsError },
    #[error("no evaluation pairs")]
    EmptyDev,
    #[error("invalid training state: {0}")]
    BadState(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// A sentence's word ids and its tree's label ids, both truncated to the
/// encoder caps.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Item {
    pub words: Vec<usize>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub word_ids: Vec<usize>,
    pub label_ids: Vec<usize>,
    /// 1 for a genuine pair, 0 for a false pair.
    pub y: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiameseConfig {
    pub lexical: EncoderConfig,
    pub syntactic: EncoderConfig,
    pub margin: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl SiameseConfig {
    /// Full-size networks, margin 1.0, batch 400, Adam at 5e-4.
    pub fn new(word_vocab: usize, label_vocab: usize, seed: u64) -> Self {
        SiameseConfig {
            lexical: EncoderConfig::lexical(word_vocab),
            syntactic: EncoderConfig::syntactic(label_vocab),
            margin: 1.0,
            batch_size: 400,
            adam: AdamConfig::default(),
            seed,
        }
    }

    /// Small networks and batch 32 for single-machine runs.
    pub fn desk(word_vocab: usize, label_vocab: usize, seed: u64) -> Self {
        let full = Self::new(word_vocab, label_vocab, seed);
        SiameseConfig {
            lexical: full.lexical.desk(),
            syntactic: full.syntactic.desk(),
            batch_size: 32,
            ..full
        }
    }
}

/// Words seen at least `min_count` times, most frequent first.
pub fn build_word_vocab(sentences: &[Sentence], min_count: usize) -> Vocab {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in sentences {
        for t in &s.tokens {
            *counts.entry(t.clone()).or_default() += 1;
        }
    }
    Vocab::from_counts(&counts, None, min_count)
}

/// Id-encodes sentences; word and label sequences are cut at the caps.
pub fn prepare(sentences: &[Sentence], words: &Vocab, labels: &Vocab, word_cap: usize, label_cap: usize) -> Vec<Item> {
    sentences
        .iter()
        .map(|s| Item {
            words: truncate(&words.encode(&s.tokens), word_cap).to_vec(),
            labels: truncate(&linearize(&s.tree, labels).labels, label_cap).to_vec(),
        })
        .collect()
}

/// Deterministic split: `dev_fraction` of the items (at least one) go to
/// the second half.
pub fn split_dev<T: Clone>(items: &[T], dev_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_dev = ((items.len() as f64 * dev_fraction).round() as usize).clamp(1, items.len().saturating_sub(1).max(1));
    let (dev, train) = idx.split_at(n_dev);
    let pick = |ids: &[usize]| {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        ids.into_iter().map(|i| items[i].clone()).collect::<Vec<T>>()
    };
    (pick(train), pick(dev))
}

/// Uniformly random permutation of `0..n` without fixed points (rejection
/// sampling; about e draws on average).
pub fn derangement<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<usize>, SiameseError> {
    if n < 2 {
        return Err(SiameseError::BatchTooSmall(n));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return Ok(perm);
        }
    }
}

/// `(sentence index, tree index, genuine)` for every pair of a batch of `n`:
/// item `i` yields `(i, i, true)` then `(i, π(i), false)`.
pub fn pair_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<(usize, usize, bool)>, SiameseError> {
    let perm = derangement(n, rng)?;
    Ok((0..n).flat_map(|i| [(i, i, true), (i, perm[i], false)]).collect())
}

pub fn make_pairs<R: Rng + ?Sized>(batch: &[Item], rng: &mut R) -> Result<Vec<SentencePair>, SiameseError> {
    Ok(pair_indices(batch.len(), rng)?
        .into_iter()
        .map(|(s, t, genuine)| SentencePair {
            word_ids: batch[s].words.clone(),
            label_ids: batch[t].labels.clone(),
            y: genuine as u8,
        })
        .collect())
}

/// Per-pair term `y·d² + (1−y)·max(margin − d, 0)²`; the ½·mean is applied
/// by the caller.
pub fn contrastive_loss<T: Real>(v_lex: &[T], v_str: &[T], y: u8, margin: T) -> Result<T, SiameseError> {
    if v_lex.len() != v_str.len() {
        return Err(SiameseError::DimMismatch(v_lex.len(), v_str.len()));
    }
    let d = v_lex.iter().zip(v_str).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>().sqrt();
    Ok(contrastive_term_of(d, y, margin))
}

fn contrastive_term_of<T: Real>(d: T, y: u8, margin: T) -> T {
    if y == 1 {
        d * d
    } else {
        let h = (margin - d).max(T::zero());
        h * h
    }
}

/// Tape version of [`contrastive_loss`]; returns `(term, d)`.
pub fn contrastive_term<T: Real>(tape: &mut Tape<'_, T>, v_lex: Var, v_str: Var, y: u8, margin: T) -> Result<(Var, Var), NumericsError> {
    let d = tape.l2_norm_diff(v_lex, v_str)?;
    let base = if y == 1 {
        d
    } else {
        let neg = tape.scale(d, -T::one())?;
        let gap = tape.add_scalar(neg, margin)?;
        tape.max_with_scalar(gap, T::zero())?
    };
    Ok((tape.mul(base, base)?, d))
}

/// Threshold rule for pair accuracy.
pub fn predicts_genuine<T: Real>(d: T, margin: T) -> bool {
    d < margin / T::lit(2.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// `½ · mean` of the pair terms over the epoch.
    pub mean_loss: f64,
    pub median_batch_loss: f64,
    pub pair_accuracy: f64,
    pub batches: usize,
    pub pairs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

/// Parameters, optimizer state and vocabularies of a training run.
pub struct TrainState<T: Real> {
    pub config: SiameseConfig,
    pub params: ParamSet<T>,
    pub lexical: Encoder,
    pub syntactic: Encoder,
    pub adam: Adam<T>,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub word_vocab: Vocab,
    pub label_vocab: Vocab,
}

struct BatchOutcome<T> {
    loss: f64,
    correct: usize,
    pairs: usize,
    grads: ParamGrads<T>,
}

impl<T: Real> TrainState<T> {
    /// Fresh parameters. Encoder vocabulary sizes are taken from the vocabs.
    pub fn new(mut config: SiameseConfig, word_vocab: Vocab, label_vocab: Vocab) -> Result<Self, SiameseError> {
        if !(config.margin > 0.0) {
            return Err(SiameseError::BadState("margin must be positive".into()));
        }
        if config.batch_size < 2 {
            return Err(SiameseError::BatchTooSmall(config.batch_size));
        }
        if config.lexical.output_dim != config.syntactic.output_dim {
            return Err(SiameseError::DimMismatch(config.lexical.output_dim, config.syntactic.output_dim));
        }
        config.lexical.vocab_size = word_vocab.len();
        config.syntactic.vocab_size = label_vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let lexical = Encoder::init(config.lexical.clone(), "lex", &mut params, &mut rng)?;
        let syntactic = Encoder::init(config.syntactic.clone(), "syn", &mut params, &mut rng)?;
        let adam = Adam::new(&params, config.adam);
        Ok(TrainState {
            config,
            params,
            lexical,
            syntactic,
            adam,
            epoch: 0,
            step: 0,
            word_vocab,
            label_vocab,
        })
    }

    fn margin(&self) -> T {
        T::lit(self.config.margin)
    }

    fn encode_all(&self, encoder: &Encoder, seqs: &[&[usize]]) -> Result<Vec<(Tape<'_, T>, Var)>, EncoderError> {
        seqs.par_iter()
            .map(|ids| {
                let mut tape = Tape::new(&self.params);
                let v = encoder.encode(&mut tape, ids)?;
                Ok((tape, v))
            })
            .collect()
    }

    /// Loss, accuracy and parameter gradients for one batch.
    fn batch(&self, items: &[&Item], rng: &mut ChaCha8Rng) -> Result<BatchOutcome<T>, SiameseError> {
        let pairs = pair_indices(items.len(), rng)?;
        let words: Vec<&[usize]> = items.iter().map(|it| it.words.as_slice()).collect();
        let labels: Vec<&[usize]> = items.iter().map(|it| it.labels.as_slice()).collect();
        let lex = self.encode_all(&self.lexical, &words)?;
        let syn = self.encode_all(&self.syntactic, &labels)?;

        let mut loss_tape = Tape::<T>::standalone();
        let lex_v: Vec<Var> = lex.iter().map(|(t, v)| loss_tape.leaf(t.value(*v).clone())).collect::<Result<_, _>>()?;
        let syn_v: Vec<Var> = syn.iter().map(|(t, v)| loss_tape.leaf(t.value(*v).clone())).collect::<Result<_, _>>()?;
        let margin = self.margin();
        let mut total: Option<Var> = None;
        let mut correct = 0;
        for &(s, t, genuine) in &pairs {
            let (term, d) = contrastive_term(&mut loss_tape, lex_v[s], syn_v[t], genuine as u8, margin)?;
            if predicts_genuine(loss_tape.value(d).item(), margin) == genuine {
                correct += 1;
            }
            total = Some(match total {
                Some(acc) => loss_tape.add(acc, term)?,
                None => term,
            });
        }
        let total = total.expect("at least two pairs");
        let loss = loss_tape.scale(total, T::lit(0.5 / pairs.len() as f64))?;
        let seeds = loss_tape.backward(loss)?;

        let seed_of = |v: Var| seeds.wrt(v).map(<[T]>::to_vec);
        let jobs: Vec<(&(Tape<'_, T>, Var), Option<Vec<T>>)> = lex
            .iter()
            .zip(&lex_v)
            .chain(syn.iter().zip(&syn_v))
            .map(|(tv, &leaf)| (tv, seed_of(leaf)))
            .collect();
        let per_item: Vec<Option<ParamGrads<T>>> = jobs
            .par_iter()
            .map(|((tape, v), seed)| seed.as_ref().map(|s| tape.backward_with(*v, s).map(|g| g.into_params())).transpose())
            .collect::<Result<_, _>>()?;
        let mut grads = ParamGrads::new(self.params.len());
        for g in per_item.iter().flatten() {
            grads.add_assign(g);
        }
        Ok(BatchOutcome {
            loss: loss_tape.value(loss).item().as_f64(),
            correct,
            pairs: pairs.len(),
            grads,
        })
    }

    /// Shuffled batches for one epoch.
    fn batches(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        chunk(&order, self.config.batch_size).into_iter().map(<[usize]>::to_vec).collect()
    }

    /// One pass over `items`: seeded shuffle, per-batch pairing, loss,
    /// backward and an Adam step per batch.
    pub fn train_epoch(&mut self, items: &[Item]) -> Result<EpochStats, SiameseError> {
        if items.len() < 2 {
            return Err(SiameseError::BatchTooSmall(items.len()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(1 + self.epoch as u64);
        let batches = self.batches(items.len(), &mut rng);
        let mut losses = Vec::with_capacity(batches.len());
        let (mut weighted, mut correct, mut pairs) = (0.0, 0, 0);
        for batch in &batches {
            let members: Vec<&Item> = batch.iter().map(|&i| &items[i]).collect();
            let step = self.step;
            let fail = |e: SiameseError| match e {
                SiameseError::Numerics(source @ NumericsError::NonFiniteValue { .. })
                | SiameseError::Encoder(EncoderError::Numerics(source @ NumericsError::NonFiniteValue { .. })) => SiameseError::NonFinite { step, source },
                other => other,
            };
            let out = self.batch(&members, &mut rng).map_err(fail)?;
            self.params.clear_grads();
            self.params.accumulate(&out.grads);
            self.adam.step(&mut self.params).map_err(|e| fail(e.into()))?;
            if !self.params.all_finite() {
                return Err(SiameseError::NonFinite {
                    step,
                    source: NumericsError::NonFiniteValue { op: "adam" },
                });
            }
            self.step += 1;
            losses.push(out.loss);
            weighted += out.loss * out.pairs as f64;
            correct += out.correct;
            pairs += out.pairs;
        }
        self.epoch += 1;
        Ok(EpochStats {
            epoch: self.epoch,
            mean_loss: weighted / pairs as f64,
            median_batch_loss: median(&mut losses),
            pair_accuracy: correct as f64 / pairs as f64,
            batches: batches.len(),
            pairs,
        })
    }

    /// Sentence vector without recording gradients for later use.
    pub fn encode_lexical(&self, ids: &[usize]) -> Result<Vec<T>, SiameseError> {
        Self::encode_with(&self.params, &self.lexical, ids)
    }

    pub fn encode_syntactic(&self, ids: &[usize]) -> Result<Vec<T>, SiameseError> {
        Self::encode_with(&self.params, &self.syntactic, ids)
    }

    fn encode_with(params: &ParamSet<T>, encoder: &Encoder, ids: &[usize]) -> Result<Vec<T>, SiameseError> {
        let mut tape = Tape::new(params);
        let v = encoder.encode(&mut tape, ids)?;
        Ok(tape.value(v).data().to_vec())
    }

    /// Loss and threshold accuracy over fixed pairs; parameters are not
    /// touched.
    pub fn evaluate_pairs(&self, dev: &[SentencePair]) -> Result<PairMetrics, SiameseError> {
        if dev.is_empty() {
            return Err(SiameseError::EmptyDev);
        }
        let unique = |f: fn(&SentencePair) -> &Vec<usize>| {
            let mut seen: Vec<&Vec<usize>> = dev.iter().map(f).collect();
            seen.sort();
            seen.dedup();
            seen
        };
        let (lex_ids, syn_ids) = (unique(|p| &p.word_ids), unique(|p| &p.label_ids));
        let lex: HashMap<&Vec<usize>, Vec<T>> = lex_ids
            .par_iter()
            .map(|ids| Ok((*ids, self.encode_lexical(ids)?)))
            .collect::<Result<_, SiameseError>>()?;
        let syn: HashMap<&Vec<usize>, Vec<T>> = syn_ids
            .par_iter()
            .map(|ids| Ok((*ids, self.encode_syntactic(ids)?)))
            .collect::<Result<_, SiameseError>>()?;
        let margin = self.margin();
        let (mut total, mut correct) = (0.0, 0);
        for p in dev {
            let (a, b) = (&lex[&p.word_ids], &syn[&p.label_ids]);
            total += contrastive_loss(a, b, p.y, margin)?.as_f64();
            let d = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt();
            if predicts_genuine(d, margin) == (p.y == 1) {
                correct += 1;
            }
        }
        Ok(PairMetrics {
            loss: 0.5 * total / dev.len() as f64,
            accuracy: correct as f64 / dev.len() as f64,
        })
    }

    /// Fixed evaluation pairs: `items` are cut into batches of the training
    /// batch size and paired with a seed-derived derangement.
    pub fn dev_pairs(&self, items: &[Item]) -> Result<Vec<SentencePair>, SiameseError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(0);
        let mut out = Vec::new();
        for batch in chunk(items, self.config.batch_size) {
            out.extend(make_pairs(batch, &mut rng)?);
        }
        Ok(out)
    }

    /// The lexical encoder's input table: one row per word-vocabulary entry,
    /// reserved tokens included.
    pub fn export_structural_embeddings(&self) -> EmbeddingTable {
        let table = self.params.value(self.lexical.embedding);
        let data: Vec<f64> = table.data().iter().map(|v| v.as_f64()).collect();
        EmbeddingTable::from_rows(self.word_vocab.tokens().to_vec(), table.cols(), &data).expect("parameters are finite")
    }

    pub fn to_checkpoint(&self) -> (Vec<(String, Tensor<T>)>, serde_json::Value) {
        let mut tensors: Vec<(String, Tensor<T>)> = self.params.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect();
        for (((_, p), m), v) in self.params.iter().zip(self.adam.first_moments()).zip(self.adam.second_moments()) {
            let shape = p.value.shape().to_vec();
            tensors.push((format!("adam.m.{}", p.name), Tensor::new(shape.clone(), m.clone()).expect("moment shape")));
            tensors.push((format!("adam.v.{}", p.name), Tensor::new(shape, v.clone()).expect("moment shape")));
        }
        let meta = json!({
            "kind": "siamese",
            "epoch": self.epoch,
            "step": self.step,
            "adam_steps": self.adam.steps(),
            "config": self.config,
            "word_vocab": self.word_vocab,
            "label_vocab": self.label_vocab,
        });
        (tensors, meta)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint<T>) -> Result<Self, SiameseError> {
        let meta = &ckpt.meta;
        let field = |name: &str| meta.get(name).cloned().ok_or_else(|| SiameseError::BadState(format!("checkpoint meta lacks `{name}`")));
        let parse = |name: &str| -> Result<serde_json::Value, SiameseError> { field(name) };
        let bad = |e: serde_json::Error| SiameseError::BadState(e.to_string());
        let config: SiameseConfig = serde_json::from_value(parse("config")?).map_err(bad)?;
        let word_vocab: Vocab = serde_json::from_value(parse("word_vocab")?).map_err(bad)?;
        let label_vocab: Vocab = serde_json::from_value(parse("label_vocab")?).map_err(bad)?;
        let epoch: usize = serde_json::from_value(parse("epoch")?).map_err(bad)?;
        let step: u64 = serde_json::from_value(parse("step")?).map_err(bad)?;
        let adam_steps: u64 = serde_json::from_value(parse("adam_steps")?).map_err(bad)?;

        let mut params = ParamSet::new();
        for (name, t) in ckpt.tensors.iter().filter(|(n, _)| !n.starts_with("adam.")) {
            params.add(name.clone(), t.clone())?;
        }
        let lexical = Encoder::bind(config.lexical.clone(), "lex", &mut params)?;
        let syntactic = Encoder::bind(config.syntactic.clone(), "syn", &mut params)?;
        if params.len() != lexical.param_ids().len() + syntactic.param_ids().len() {
            return Err(SiameseError::BadState("checkpoint has unexpected tensors".into()));
        }
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for (_, p) in params.iter() {
            m.push(ckpt.get(&format!("adam.m.{}", p.name))?.data().to_vec());
            v.push(ckpt.get(&format!("adam.v.{}", p.name))?.data().to_vec());
        }
        let adam = Adam::from_state(config.adam, m, v, adam_steps);
        Ok(TrainState {
            config,
            params,
            lexical,
            syntactic,
            adam,
            epoch,
            step,
            word_vocab,
            label_vocab,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SiameseError> {
        let (tensors, meta) = self.to_checkpoint();
        let refs: Vec<(&str, &Tensor<T>)> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        Ok(save_checkpoint(path, &refs, &meta)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SiameseError> {
        Self::from_checkpoint(&load_checkpoint(path)?)
    }
}

/// Consecutive chunks of `size`; a trailing single element joins the
/// previous chunk.
pub(crate) fn chunk<T>(xs: &[T], size: usize) -> Vec<&[T]> {
    let mut out: Vec<&[T]> = xs.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|c| c.len() < 2) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("non-empty") = &xs[start..];
    }
    out
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::write_checkpoint;
    use crate::synth;
    use rand::Rng;
    use crate::treebank::build_label_vocab;
    use proptest::prelude::*;

    fn tiny_config(seed: u64) -> SiameseConfig {
        let enc = EncoderConfig {
            vocab_size: 11,
            embed_dim: 4,
            lstm_hidden: 3,
            attention_hidden: 5,
            attention_hops: 2,
            mlp_hidden: 7,
            output_dim: 6,
            max_len: 40,
        };
        SiameseConfig {
            lexical: enc.clone(),
            syntactic: EncoderConfig { vocab_size: 9, max_len: 80, ..enc },
            margin: 1.0,
            batch_size: 4,
            adam: AdamConfig::default(),
            seed,
        }
    }

    fn vocab(n: usize, prefix: &str) -> Vocab {
        Vocab::from_tokens((0..n - 2).map(|i| format!("{prefix}{i}")))
    }

    fn tiny_state(seed: u64) -> TrainState<f64> {
        TrainState::new(tiny_config(seed), vocab(11, "w"), vocab(9, "L")).unwrap()
    }

    fn toy_items(n: usize, seed: u64) -> Vec<Item> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Item {
                words: (0..rng.gen_range(1..6)).map(|_| rng.gen_range(1..11)).collect(),
                labels: (0..rng.gen_range(1..8)).map(|_| rng.gen_range(1..9)).collect(),
            })
            .collect()
    }

    #[test]
    fn loss_examples() {
        let v = [0.3f64, -0.2, 0.5];
        assert_eq!(contrastive_loss(&v, &v, 1, 1.0).unwrap(), 0.0);
        assert_eq!(contrastive_loss(&[0.0, 0.0], &[3.0, 4.0], 0, 1.0).unwrap(), 0.0);
        let l: f64 = contrastive_loss(&[0.0, 0.0], &[0.4, 0.0], 0, 1.0).unwrap();
        assert!((l - 0.36).abs() < 1e-12);
        assert!(matches!(contrastive_loss(&[0.0], &[0.0, 1.0], 1, 1.0), Err(SiameseError::DimMismatch(1, 2))));
    }

    #[test]
    fn derangement_small_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(derangement(2, &mut rng).unwrap(), vec![1, 0]);
        assert!(matches!(derangement(1, &mut rng), Err(SiameseError::BatchTooSmall(1))));
        let items = toy_items(5, 1);
        let pairs = make_pairs(&items, &mut rng).unwrap();
        assert_eq!(pairs.len(), 10);
        assert_eq!(make_pairs(&items[..2], &mut rng).unwrap().len(), 4);
        for (i, chunk) in pairs.chunks(2).enumerate() {
            assert_eq!((chunk[0].y, chunk[1].y), (1, 0));
            assert_eq!(chunk[0].label_ids, items[i].labels);
            assert_eq!(chunk[1].word_ids, items[i].words);
        }
        let idx = pair_indices(5, &mut rng).unwrap();
        assert!(idx.iter().all(|&(s, t, g)| g == (s == t)));
    }

    #[test]
    fn derangement_is_uniform_over_partners() {
        // n = 4: each item has 3 allowed partners, each with probability 1/3
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 10_000;
        let mut counts = [[0usize; 4]; 4];
        for _ in 0..draws {
            for (i, &p) in derangement(4, &mut rng).unwrap().iter().enumerate() {
                counts[i][p] += 1;
            }
        }
        let expected = draws as f64 / 3.0;
        let mut chi2 = 0.0;
        for (i, row) in counts.iter().enumerate() {
            assert_eq!(row[i], 0);
            for (j, &c) in row.iter().enumerate() {
                if i != j {
                    chi2 += (c as f64 - expected).powi(2) / expected;
                }
            }
        }
        // 12 cells, 8 degrees of freedom; 99.9% quantile ≈ 26.1
        assert!(chi2 < 26.1, "chi-square {chi2}");
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        // one genuine and one false pair: batch of two
        let mut state = tiny_state(5);
        for p in state.params.iter_mut() {
            if p.name.ends_with(".b") || p.name.ends_with("b1") || p.name.ends_with("b2") {
                p.value.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.05 * ((i % 3) as f64 - 1.0));
            }
        }
        let items = [
            Item { words: vec![2, 5, 7], labels: vec![3, 4, 8, 2] },
            Item { words: vec![9, 1], labels: vec![6, 2, 5] },
        ];
        let pairs = [(0usize, 0usize, 1u8), (1, 0, 0)];
        // margin large enough that the hinge is active
        let margin = 5.0;
        let loss_of = |state: &TrainState<f64>| -> f64 {
            let terms: f64 = pairs
                .iter()
                .map(|&(s, t, y)| {
                    let a = state.encode_lexical(&items[s].words).unwrap();
                    let b = state.encode_syntactic(&items[t].labels).unwrap();
                    contrastive_loss(&a, &b, y, margin).unwrap()
                })
                .sum();
            0.5 * terms / pairs.len() as f64
        };
        let analytic = {
            let mut tape = Tape::new(&state.params);
            let mut total = None;
            for &(s, t, y) in &pairs {
                let a = state.lexical.encode(&mut tape, &items[s].words).unwrap();
                let b = state.syntactic.encode(&mut tape, &items[t].labels).unwrap();
                let (term, _) = contrastive_term(&mut tape, a, b, y, margin).unwrap();
                total = Some(match total {
                    Some(acc) => tape.add(acc, term).unwrap(),
                    None => term,
                });
            }
            let loss = tape.scale(total.unwrap(), 0.25).unwrap();
            assert!((tape.value(loss).item() - loss_of(&state)).abs() < 1e-12);
            tape.backward(loss).unwrap().into_params()
        };
        let ids: Vec<_> = state.params.iter().map(|(id, _)| id).collect();
        let step = 1e-5;
        for id in ids {
            let n = state.params.value(id).numel();
            let g = analytic.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
            for j in 0..n {
                let orig = state.params.value(id).data()[j];
                state.params.get_mut(id).value.data_mut()[j] = orig + step;
                let plus = loss_of(&state);
                state.params.get_mut(id).value.data_mut()[j] = orig - step;
                let minus = loss_of(&state);
                state.params.get_mut(id).value.data_mut()[j] = orig;
                let numeric = (plus - minus) / (2.0 * step);
                assert!(
                    (g[j] - numeric).abs() <= 1e-6 + 1e-4 * g[j].abs().max(numeric.abs()),
                    "{}[{j}]: {} vs {numeric}",
                    state.params.get(id).name,
                    g[j]
                );
            }
        }
    }

    #[test]
    fn batched_step_matches_single_tape_gradients() {
        let state = tiny_state(6);
        let items = toy_items(4, 2);
        let refs: Vec<&Item> = items.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = state.batch(&refs, &mut rng).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pairs = pair_indices(4, &mut rng).unwrap();
        let mut tape = Tape::new(&state.params);
        let lex: Vec<Var> = items.iter().map(|it| state.lexical.encode(&mut tape, &it.words).unwrap()).collect();
        let syn: Vec<Var> = items.iter().map(|it| state.syntactic.encode(&mut tape, &it.labels).unwrap()).collect();
        let mut total = None;
        for &(s, t, g) in &pairs {
            let (term, _) = contrastive_term(&mut tape, lex[s], syn[t], g as u8, 1.0).unwrap();
            total = Some(match total {
                Some(acc) => tape.add(acc, term).unwrap(),
                None => term,
            });
        }
        let loss = tape.scale(total.unwrap(), 0.5 / 8.0).unwrap();
        assert!((tape.value(loss).item() - out.loss).abs() < 1e-12);
        let reference = tape.backward(loss).unwrap().into_params();
        for (id, _) in state.params.iter() {
            let (a, b) = (out.grads.get(id).unwrap(), reference.get(id).unwrap());
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-12 + 1e-9 * y.abs());
            }
        }
    }

    #[test]
    fn evaluation_leaves_parameters_untouched() {
        let state = tiny_state(7);
        let items = toy_items(9, 3);
        let dev = state.dev_pairs(&items).unwrap();
        assert_eq!(dev.len(), 18);
        let before = state.params.snapshot();
        let m = state.evaluate_pairs(&dev).unwrap();
        assert!(m.loss.is_finite() && (0.0..=1.0).contains(&m.accuracy));
        assert_eq!(before, state.params.snapshot());
        assert!(matches!(state.evaluate_pairs(&[]), Err(SiameseError::EmptyDev)));
    }

    #[test]
    fn aligned_encoders_classify_genuine_pairs() {
        // zero MLP output layers make every sentence vector zero, so d = 0
        let mut state = tiny_state(8);
        for p in state.params.iter_mut() {
            if p.name.contains("mlp.w2") || p.name.contains("mlp.b2") {
                p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let dev: Vec<SentencePair> = toy_items(6, 4)
            .into_iter()
            .map(|it| SentencePair { word_ids: it.words, label_ids: it.labels, y: 1 })
            .collect();
        let m = state.evaluate_pairs(&dev).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.loss, 0.0);
    }

    #[test]
    fn epochs_are_reproducible_and_checkpoints_exact() {
        let items = toy_items(10, 5);
        let run = || {
            let mut s = tiny_state(11);
            let stats: Vec<EpochStats> = (0..3).map(|_| s.train_epoch(&items).unwrap()).collect();
            (s, stats)
        };
        let (state, a) = run();
        let (_, b) = run();
        assert_eq!(a, b);
        assert!(a[0].mean_loss.is_finite() && a[0].mean_loss > 0.0);
        // 10 items in batches of 4 → 4, 4, 2
        assert_eq!((a[0].batches, a[0].pairs), (3, 20));
        assert_eq!(state.step, 9);

        let (tensors, meta) = state.to_checkpoint();
        let refs: Vec<(&str, &Tensor<f64>)> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &refs, &meta).unwrap();
        let restored = TrainState::<f64>::from_checkpoint(&crate::numerics::read_checkpoint(&bytes[..]).unwrap()).unwrap();
        let (tensors2, meta2) = restored.to_checkpoint();
        let refs2: Vec<(&str, &Tensor<f64>)> = tensors2.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut bytes2 = Vec::new();
        write_checkpoint(&mut bytes2, &refs2, &meta2).unwrap();
        assert_eq!(bytes, bytes2);

        // training resumes identically from the restored state
        let mut original = state;
        let mut restored = restored;
        assert_eq!(original.train_epoch(&items).unwrap(), restored.train_epoch(&items).unwrap());
    }

    #[test]
    fn single_item_remainder_joins_previous_batch() {
        let state = tiny_state(12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sizes: Vec<usize> = state.batches(9, &mut rng).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 5]);
    }

    #[test]
    fn export_covers_word_vocab() {
        let sents = synth::corpus(200, 1);
        let words = build_word_vocab(&sents, 2);
        let labels = build_label_vocab(sents.iter().map(|s| &s.tree), 77).unwrap();
        let config = SiameseConfig::desk(words.len(), labels.len(), 1);
        let state = TrainState::<f32>::new(config, words.clone(), labels).unwrap();
        let table = state.export_structural_embeddings();
        assert_eq!(table.len(), words.len());
        assert_eq!(table.tokens()[..2], ["<pad>".to_string(), "<unk>".to_string()]);
        assert_eq!(table.dim(), state.config.lexical.embed_dim);
    }

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let xs: Vec<usize> = (0..100).collect();
        let (tr, dev) = split_dev(&xs, 0.1, 4);
        assert_eq!((tr.len(), dev.len()), (90, 10));
        assert!(dev.iter().all(|d| !tr.contains(d)));
        assert_eq!(split_dev(&xs, 0.1, 4), (tr, dev));
    }

    proptest! {
        #[test]
        fn loss_matches_direct_formula(d in 0.0f64..3.0, margin in 0.01f64..3.0, y in 0u8..2) {
            let got = contrastive_loss(&[0.0, 0.0], &[d, 0.0], y, margin).unwrap();
            let expected = if y == 1 { d * d } else { (margin - d).max(0.0).powi(2) };
            prop_assert!((got - expected).abs() <= 1e-12);
        }
    }
}
