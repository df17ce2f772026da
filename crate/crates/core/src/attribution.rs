//! Hierarchical attention network for authorship attribution over frozen
//! word embeddings.
//!
//! Words of each sentence pass through a BiLSTM and single-hop attention to
//! give a sentence vector; the sentence vectors pass through a second
//! BiLSTM and attention to give the document vector, which a linear layer
//! maps to author logits. Input embeddings are constants on the tape and
//! never updated.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::corpus::Document;
use crate::embeddings::{concat_tables, EmbeddingTable};
use crate::encoder::{BiLstm, EncoderError, SelfAttention};
use crate::numerics::{
    load_checkpoint, save_checkpoint, xavier_uniform, Adam, AdamConfig, Axis, Checkpoint, CheckpointError, NumericsError, ParamGrads, ParamId, ParamSet, Tape, Tensor, Var,
};
use crate::siamese::chunk;
use crate::vocab::UNK;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("document has no sentences or an empty sentence")]
    EmptyDocument,
    #[error("training corpus has fewer than two authors")]
    SingleClassCorpus,
    #[error("author `{0}` was not seen in training")]
    UnknownLabel(String),
    #[error("no documents to evaluate")]
    EmptyEvaluation,
    #[error("mode {0} needs the {1} table")]
    MissingTable(EmbeddingMode, &'static str),
    #[error("invalid attribution config: {0}")]
    InvalidConfig(String),
    #[error("bad model file: {0}")]
    BadModel(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Which embedding space feeds the word-level encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingMode {
    Structural,
    Lexical,
    #[serde(rename = "structural+lexical")]
    StructuralLexical,
}

impl fmt::Display for EmbeddingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingMode::Structural => "structural",
            EmbeddingMode::Lexical => "lexical",
            EmbeddingMode::StructuralLexical => "structural+lexical",
        })
    }
}

impl FromStr for EmbeddingMode {
    type Err = AttributionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "structural" => Ok(EmbeddingMode::Structural),
            "lexical" => Ok(EmbeddingMode::Lexical),
            "structural+lexical" => Ok(EmbeddingMode::StructuralLexical),
            _ => Err(AttributionError::InvalidConfig(format!("unknown embedding mode `{s}`"))),
        }
    }
}

/// `table` scaled by one scalar so its entries have unit root mean square.
/// All-zero tables are returned unchanged.
pub fn unit_rms(table: &EmbeddingTable) -> EmbeddingTable {
    let n = table.len() * table.dim();
    let ss: f64 = (0..table.len()).flat_map(|i| table.row(i)).map(|x| x * x).sum();
    if n == 0 || ss == 0.0 {
        return table.clone();
    }
    let f = (n as f64 / ss).sqrt();
    table.map_rows(|_, r| r.iter().map(|x| x * f).collect()).expect("same dimension")
}

/// The frozen input table for `mode`. Each source table is rescaled to unit
/// RMS so neither space dominates the concatenation by scale alone; the
/// concatenated space puts the structural coordinates first.
pub fn input_table(mode: EmbeddingMode, structural: Option<&EmbeddingTable>, lexical: Option<&EmbeddingTable>) -> Result<EmbeddingTable, AttributionError> {
    let need = |t: Option<&EmbeddingTable>, which| t.map(unit_rms).ok_or(AttributionError::MissingTable(mode, which));
    Ok(match mode {
        EmbeddingMode::Structural => need(structural, "structural")?,
        EmbeddingMode::Lexical => need(lexical, "lexical")?,
        EmbeddingMode::StructuralLexical => concat_tables(&need(structural, "structural")?, &need(lexical, "lexical")?),
    })
}

/// A table with the same tokens and dimension as `like`, filled from
/// U[-1, 1]. Used as the control input.
pub fn random_table(like: &EmbeddingTable, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..like.len() * like.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    EmbeddingTable::from_rows(like.tokens().to_vec(), like.dim(), &data).expect("same shape as source")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HanConfig {
    pub mode: EmbeddingMode,
    pub input_dim: usize,
    /// Word-level LSTM width `u_w`; sentence vectors have `2·u_w` entries.
    pub word_hidden: usize,
    /// Sentence-level LSTM width `u_s`; document vectors have `2·u_s`.
    pub sentence_hidden: usize,
    pub word_attention: usize,
    pub sentence_attention: usize,
    pub classes: usize,
    pub max_sentences: usize,
    pub max_tokens: usize,
}

impl HanConfig {
    pub fn new(mode: EmbeddingMode, input_dim: usize, classes: usize) -> Self {
        HanConfig {
            mode,
            input_dim,
            word_hidden: 50,
            sentence_hidden: 50,
            word_attention: 100,
            sentence_attention: 100,
            classes,
            max_sentences: 30,
            max_tokens: 40,
        }
    }

    /// Narrow layers for single-core runs; caps are unchanged.
    pub fn desk(self) -> Self {
        HanConfig {
            word_hidden: 16,
            sentence_hidden: 16,
            word_attention: 16,
            sentence_attention: 16,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), AttributionError> {
        let dims = [
            ("input_dim", self.input_dim),
            ("word_hidden", self.word_hidden),
            ("sentence_hidden", self.sentence_hidden),
            ("word_attention", self.word_attention),
            ("sentence_attention", self.sentence_attention),
            ("max_sentences", self.max_sentences),
            ("max_tokens", self.max_tokens),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(AttributionError::InvalidConfig(format!("{name} must be at least 1")));
        }
        if self.classes < 2 {
            return Err(AttributionError::InvalidConfig("at least two classes are required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a dev-accuracy improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Batch 4, at most 40 epochs, patience 5, Adam at 5e-4.
    pub fn new(seed: u64) -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 4,
            max_epochs: 40,
            patience: 5,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

/// A trained (or freshly initialized) classifier together with its frozen
/// input table and label set.
#[derive(Clone, Debug)]
pub struct HanModel {
    pub config: HanConfig,
    pub labels: Vec<String>,
    pub table: EmbeddingTable,
    pub params: ParamSet<f64>,
    word_lstm: BiLstm,
    word_attn: SelfAttention,
    sent_lstm: BiLstm,
    sent_attn: SelfAttention,
    out_w: ParamId,
    out_b: ParamId,
}

fn check_document(doc: &Document) -> Result<(), AttributionError> {
    if doc.sentences.is_empty() || doc.sentences.iter().any(Vec::is_empty) {
        return Err(AttributionError::EmptyDocument);
    }
    Ok(())
}

impl HanModel {
    pub fn init(config: HanConfig, labels: Vec<String>, table: EmbeddingTable, seed: u64) -> Result<Self, AttributionError> {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::declare(config, labels, table, &mut params, Some(&mut rng)).map(|mut m| {
            m.params = params;
            m
        })
    }

    fn declare(config: HanConfig, labels: Vec<String>, table: EmbeddingTable, params: &mut ParamSet<f64>, mut rng: Option<&mut ChaCha8Rng>) -> Result<Self, AttributionError> {
        config.validate()?;
        if labels.len() != config.classes {
            return Err(AttributionError::InvalidConfig(format!("{} labels for {} classes", labels.len(), config.classes)));
        }
        if table.dim() != config.input_dim {
            return Err(AttributionError::InvalidConfig(format!("table dim {} but input_dim {}", table.dim(), config.input_dim)));
        }
        let c = &config;
        let (uw, us) = (c.word_hidden, c.sentence_hidden);
        let word_lstm = BiLstm::declare(params, rng.as_deref_mut(), "word", c.input_dim, uw)?;
        let word_attn = SelfAttention::declare(params, rng.as_deref_mut(), "word", 2 * uw, c.word_attention, 1)?;
        let sent_lstm = BiLstm::declare(params, rng.as_deref_mut(), "sent", 2 * uw, us)?;
        let sent_attn = SelfAttention::declare(params, rng.as_deref_mut(), "sent", 2 * us, c.sentence_attention, 1)?;
        let (out_w, out_b) = match rng {
            Some(rng) => (
                params.add("out.w", xavier_uniform(vec![2 * us, c.classes], 2 * us, c.classes, rng))?,
                params.add("out.b", Tensor::zeros(vec![1, c.classes]))?,
            ),
            None => {
                let find = |name: &str, shape: Vec<usize>| match params.id(name) {
                    Some(id) if params.value(id).shape() == shape.as_slice() => Ok(id),
                    _ => Err(AttributionError::BadModel(format!("missing or misshapen `{name}`"))),
                };
                (find("out.w", vec![2 * us, c.classes])?, find("out.b", vec![1, c.classes])?)
            }
        };
        Ok(HanModel {
            config,
            labels,
            table,
            params: ParamSet::new(),
            word_lstm,
            word_attn,
            sent_lstm,
            sent_attn,
            out_w,
            out_b,
        })
    }

    pub fn label_index(&self, label: &str) -> Result<usize, AttributionError> {
        self.labels.iter().position(|l| l == label).ok_or_else(|| AttributionError::UnknownLabel(label.to_string()))
    }

    /// Rows of the frozen table; unknown words use the `<unk>` row when the
    /// table has one and zeros otherwise.
    fn lookup(&self, tokens: &[String]) -> Tensor<f64> {
        let dim = self.table.dim();
        let unk = self.table.get(UNK);
        let mut data = Vec::with_capacity(tokens.len() * dim);
        for t in tokens {
            match self.table.get(t).or(unk) {
                Some(row) => data.extend_from_slice(row),
                None => data.extend(std::iter::repeat(0.0).take(dim)),
            }
        }
        Tensor::matrix(tokens.len(), dim, data).expect("row-major lookup")
    }

    /// Document vector `[1 × 2u_s]` and the sentence-level attention
    /// weights `[1 × sentences]`.
    pub fn forward(&self, tape: &mut Tape<'_, f64>, doc: &Document) -> Result<(Var, Var), AttributionError> {
        check_document(doc)?;
        let mut sentence_vecs = Vec::new();
        for sentence in doc.sentences.iter().take(self.config.max_sentences) {
            let tokens = &sentence[..sentence.len().min(self.config.max_tokens)];
            let x = tape.constant(self.lookup(tokens))?;
            let h = self.word_lstm.run(tape, x)?;
            let (s, _) = self.word_attn.run(tape, h)?;
            sentence_vecs.push(s);
        }
        let stacked = tape.concat(&sentence_vecs, Axis::Rows)?;
        let h = self.sent_lstm.run(tape, stacked)?;
        Ok(self.sent_attn.run(tape, h)?)
    }

    pub fn logits(&self, tape: &mut Tape<'_, f64>, doc: &Document) -> Result<Var, AttributionError> {
        let (d, _) = self.forward(tape, doc)?;
        let (w, b) = (tape.param(self.out_w), tape.param(self.out_b));
        let z = tape.matmul(d, w)?;
        Ok(tape.add(z, b)?)
    }

    pub fn encode_document(&self, doc: &Document) -> Result<Vec<f64>, AttributionError> {
        let mut tape = Tape::new(&self.params);
        let (d, _) = self.forward(&mut tape, doc)?;
        Ok(tape.value(d).data().to_vec())
    }

    pub fn sentence_attention(&self, doc: &Document) -> Result<Vec<f64>, AttributionError> {
        let mut tape = Tape::new(&self.params);
        let (_, a) = self.forward(&mut tape, doc)?;
        Ok(tape.value(a).data().to_vec())
    }

    /// Class probabilities in label order.
    pub fn predict_proba(&self, doc: &Document) -> Result<Vec<f64>, AttributionError> {
        let mut tape = Tape::new(&self.params);
        let z = self.logits(&mut tape, doc)?;
        let p = tape.softmax_rows(z)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Most probable label index; ties go to the lower index.
    pub fn predict(&self, doc: &Document) -> Result<usize, AttributionError> {
        let p = self.predict_proba(doc)?;
        Ok((0..p.len()).fold(0, |best, c| if p[c] > p[best] { c } else { best }))
    }

    fn loss_and_grads(&self, doc: &Document, target: usize, scale: f64) -> Result<(f64, ParamGrads<f64>), AttributionError> {
        let mut tape = Tape::new(&self.params);
        let z = self.logits(&mut tape, doc)?;
        let ce = tape.cross_entropy(z, target)?;
        let loss = tape.scale(ce, scale)?;
        let grads = tape.backward(loss)?.into_params();
        Ok((tape.value(ce).item(), grads))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AttributionError> {
        let table = Tensor::matrix(self.table.len(), self.table.dim(), (0..self.table.len()).flat_map(|i| self.table.row(i).to_vec()).collect())?;
        let mut tensors: Vec<(&str, &Tensor<f64>)> = self.params.iter().map(|(_, p)| (p.name.as_str(), &p.value)).collect();
        tensors.push(("input.table", &table));
        let meta = json!({
            "kind": "han",
            "config": self.config,
            "labels": self.labels,
            "tokens": self.table.tokens(),
        });
        Ok(save_checkpoint(path, &tensors, &meta)?)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint<f64>) -> Result<Self, AttributionError> {
        let bad = |e: serde_json::Error| AttributionError::BadModel(e.to_string());
        let field = |name: &str| ckpt.meta.get(name).cloned().ok_or_else(|| AttributionError::BadModel(format!("meta lacks `{name}`")));
        if ckpt.meta.get("kind").and_then(|k| k.as_str()) != Some("han") {
            return Err(AttributionError::BadModel("not an attribution model".into()));
        }
        let config: HanConfig = serde_json::from_value(field("config")?).map_err(bad)?;
        let labels: Vec<String> = serde_json::from_value(field("labels")?).map_err(bad)?;
        let tokens: Vec<String> = serde_json::from_value(field("tokens")?).map_err(bad)?;
        let t = ckpt.get("input.table")?;
        let table = EmbeddingTable::from_rows(tokens, config.input_dim, t.data()).map_err(|e| AttributionError::BadModel(e.to_string()))?;
        let mut params = ParamSet::new();
        for (name, t) in ckpt.tensors.iter().filter(|(n, _)| n != "input.table") {
            params.add(name.clone(), t.clone())?;
        }
        let mut model = Self::declare(config, labels, table, &mut params, None)?;
        model.params = params;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AttributionError> {
        Self::from_checkpoint(&load_checkpoint(path)?)
    }
}

/// Sorted distinct authors.
pub fn author_labels(docs: &[Document]) -> Vec<String> {
    docs.iter().map(|d| d.author.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Per-author shuffle and split into train/dev/test.
pub fn split_documents(docs: &[Document], dev_fraction: f64, test_fraction: f64, seed: u64) -> (Vec<Document>, Vec<Document>, Vec<Document>) {
    let mut by_author: BTreeMap<&str, Vec<&Document>> = BTreeMap::new();
    for d in docs {
        by_author.entry(&d.author).or_default().push(d);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (_, mut group) in by_author {
        group.shuffle(&mut rng);
        let n = group.len();
        let n_test = (n as f64 * test_fraction).round() as usize;
        let n_dev = (n as f64 * dev_fraction).round() as usize;
        for (i, d) in group.into_iter().enumerate() {
            let dst = if i < n_test {
                &mut test
            } else if i < n_test + n_dev {
                &mut dev
            } else {
                &mut train
            };
            dst.push(d.clone());
        }
    }
    (train, dev, test)
}

/// Mini-batch Adam on mean cross-entropy, early-stopped on dev accuracy.
/// The returned model holds the parameters of the best dev epoch.
pub fn train_classifier(train: &[Document], dev: &[Document], table: EmbeddingTable, config: HanConfig, tc: &TrainConfig) -> Result<(HanModel, Vec<EpochRecord>), AttributionError> {
    let labels = author_labels(train);
    if labels.len() < 2 {
        return Err(AttributionError::SingleClassCorpus);
    }
    if dev.is_empty() {
        return Err(AttributionError::EmptyEvaluation);
    }
    if tc.batch_size == 0 {
        return Err(AttributionError::InvalidConfig("batch_size must be at least 1".into()));
    }
    train.iter().chain(dev).try_for_each(check_document)?;
    let config = HanConfig { classes: labels.len(), ..config };
    let mut model = HanModel::init(config, labels, table, tc.seed)?;
    let targets: Vec<usize> = train.iter().map(|d| model.label_index(&d.author)).collect::<Result<_, _>>()?;
    dev.iter().try_for_each(|d| model.label_index(&d.author).map(drop))?;

    let mut adam = Adam::new(&model.params, tc.adam);
    let mut history = Vec::new();
    let mut best = (f64::NEG_INFINITY, model.params.clone());
    let mut since_best = 0;
    for epoch in 1..=tc.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in chunk(&order, tc.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let outs: Vec<(f64, ParamGrads<f64>)> = batch.par_iter().map(|&i| model.loss_and_grads(&train[i], targets[i], scale)).collect::<Result<_, _>>()?;
            let mut grads = ParamGrads::new(model.params.len());
            for (loss, g) in &outs {
                total += loss;
                grads.add_assign(g);
            }
            model.params.clear_grads();
            model.params.accumulate(&grads);
            adam.step(&mut model.params)?;
        }
        let dev_accuracy = accuracy(&model, dev)?;
        history.push(EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            dev_accuracy,
        });
        log::info!("attribution epoch {epoch}: loss {:.4} dev acc {dev_accuracy:.4}", total / train.len() as f64);
        if dev_accuracy > best.0 {
            best = (dev_accuracy, model.params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tc.patience {
                break;
            }
        }
    }
    model.params = best.1;
    Ok((model, history))
}

fn accuracy(model: &HanModel, docs: &[Document]) -> Result<f64, AttributionError> {
    let hits: Vec<bool> = docs.par_iter().map(|d| Ok(model.predict(d)? == model.label_index(&d.author)?)).collect::<Result<_, AttributionError>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / docs.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub labels: Vec<String>,
    /// Recall per label, in label order; `None` when the label is absent
    /// from the test set.
    pub per_class: Vec<Option<f64>>,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
    pub documents: usize,
}

impl Evaluation {
    pub fn confusion_text(&self) -> String {
        let width = self.labels.iter().map(String::len).max().unwrap_or(0).max(6);
        let mut out = format!("{:width$}", "true\\pred");
        for l in &self.labels {
            out.push_str(&format!(" {l:>width$}"));
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.confusion) {
            out.push_str(&format!("{l:width$}"));
            for c in row {
                out.push_str(&format!(" {c:>width$}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Accuracy, per-class recall and confusion matrix. Parameters are only
/// read.
pub fn evaluate(model: &HanModel, test: &[Document]) -> Result<Evaluation, AttributionError> {
    if test.is_empty() {
        return Err(AttributionError::EmptyEvaluation);
    }
    let truth: Vec<usize> = test.iter().map(|d| model.label_index(&d.author)).collect::<Result<_, _>>()?;
    let predicted: Vec<usize> = test.par_iter().map(|d| model.predict(d)).collect::<Result<_, _>>()?;
    let k = model.labels.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in truth.iter().zip(&predicted) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let per_class = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[c] as f64 / n as f64)
        })
        .collect();
    Ok(Evaluation {
        accuracy: correct as f64 / test.len() as f64,
        labels: model.labels.clone(),
        per_class,
        confusion,
        documents: test.len(),
    })
}

/// Label share of the most frequent training author in `test`.
pub fn majority_baseline(train: &[Document], test: &[Document]) -> f64 {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    train.iter().for_each(|d| *counts.entry(&d.author).or_default() += 1);
    let majority = counts.iter().max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0))).map(|(l, _)| *l);
    test.iter().filter(|d| Some(d.author.as_str()) == majority).count() as f64 / test.len().max(1) as f64
}
