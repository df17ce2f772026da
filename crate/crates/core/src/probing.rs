//! Probing tasks generated from a parsed corpus, and a multinomial
//! logistic-regression probe over bag-of-vectors sentence features.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sentence;
use crate::embeddings::{bov, EmbeddingTable, OovPolicy};
use crate::treebank::{top_constituents, tree_depth, ParseTree};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("a sentence-length bin is empty")]
    DegenerateBins,
    #[error("not enough target words: {0}")]
    InsufficientTargets(String),
    #[error("{0} sentences have no in-vocabulary token")]
    AllOovSentences(usize),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("line {0}: expected `split<TAB>label<TAB>tokens`")]
    MalformedLine(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Tr,
    Va,
    Te,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Tr => "tr",
            Split::Va => "va",
            Split::Te => "te",
        })
    }
}

impl FromStr for Split {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "tr" => Ok(Split::Tr),
            "va" => Ok(Split::Va),
            "te" => Ok(Split::Te),
            _ => Err(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub split: Split,
    pub label: String,
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProbingTask {
    pub name: String,
    pub examples: Vec<Example>,
}

impl ProbingTask {
    /// Distinct labels, sorted.
    pub fn labels(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.examples.iter().map(|e| &e.label).collect();
        set.into_iter().cloned().collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Example> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    /// At least two labels, every split non-empty, and no token sequence
    /// shared between splits.
    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.labels().len() < 2 {
            return Err(ProbeError::InvalidTask(format!("{} has fewer than two labels", self.name)));
        }
        self.check_splits()
    }

    fn check_splits(&self) -> Result<(), ProbeError> {
        for s in [Split::Tr, Split::Va, Split::Te] {
            if self.split(s).next().is_none() {
                return Err(ProbeError::InvalidTask(format!("{}: split {s} is empty", self.name)));
            }
        }
        let mut owner: HashMap<&[String], Split> = HashMap::new();
        for e in &self.examples {
            if let Some(&s) = owner.get(e.tokens.as_slice()) {
                if s != e.split {
                    return Err(ProbeError::InvalidTask(format!("{}: sentence in both {s} and {}", self.name, e.split)));
                }
            }
            owner.insert(&e.tokens, e.split);
        }
        Ok(())
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.examples {
            writeln!(w, "{}\t{}\t{}", e.split, e.label, e.tokens.join(" "))?;
        }
        w.flush()
    }

    pub fn read_tsv<R: BufRead>(name: &str, r: R) -> Result<Self, ProbeError> {
        let mut examples = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (Some(split), Some(label), Some(tokens)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(ProbeError::MalformedLine(i + 1));
            };
            let split = split.parse().map_err(|_| ProbeError::MalformedLine(i + 1))?;
            let tokens: Vec<String> = tokens.split_whitespace().map(str::to_string).collect();
            if tokens.is_empty() || label.is_empty() {
                return Err(ProbeError::MalformedLine(i + 1));
            }
            examples.push(Example {
                split,
                label: label.to_string(),
                tokens,
            });
        }
        Ok(ProbingTask {
            name: name.to_string(),
            examples,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        self.write_tsv(BufWriter::new(File::create(path)?))
    }

    /// Reads a task file; the task name is the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProbeError> {
        let path = path.as_ref();
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::read_tsv(&name, BufReader::new(File::open(path)?))
    }
}

/// Drops repeated token sequences (first kept), shuffles, and splits
/// 80/10/10.
pub fn assign_splits(name: &str, labelled: Vec<(String, Vec<String>)>, seed: u64) -> Result<ProbingTask, ProbeError> {
    let mut seen = HashSet::new();
    let mut unique: Vec<(String, Vec<String>)> = labelled.into_iter().filter(|(_, t)| seen.insert(t.clone())).collect();
    if unique.len() < 3 {
        return Err(ProbeError::InvalidTask(format!("{name}: only {} distinct sentences", unique.len())));
    }
    unique.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = unique.len();
    let n_va = (n / 10).max(1);
    let n_te = (n / 10).max(1);
    let n_tr = n - n_va - n_te;
    let examples = unique
        .into_iter()
        .enumerate()
        .map(|(i, (label, tokens))| Example {
            split: if i < n_tr {
                Split::Tr
            } else if i < n_tr + n_va {
                Split::Va
            } else {
                Split::Te
            },
            label,
            tokens,
        })
        .collect();
    Ok(ProbingTask {
        name: name.to_string(),
        examples,
    })
}

/// Downsamples every label to the size of the rarest one.
fn balance(labelled: Vec<(String, Vec<String>)>, rng: &mut ChaCha8Rng) -> Vec<(String, Vec<String>)> {
    let mut by_label: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
    for (l, t) in labelled {
        by_label.entry(l).or_default().push(t);
    }
    let min = by_label.values().map(Vec::len).min().unwrap_or(0);
    let mut out = Vec::new();
    for (l, mut sents) in by_label {
        sents.shuffle(rng);
        out.extend(sents.into_iter().take(min).map(|t| (l.clone(), t)));
    }
    out
}

/// Dedups by token sequence, balances labels, then splits.
fn balanced_task(name: &str, labelled: Vec<(String, Vec<String>)>, seed: u64) -> Result<ProbingTask, ProbeError> {
    let mut seen = HashSet::new();
    let unique: Vec<_> = labelled.into_iter().filter(|(_, t)| seen.insert(t.clone())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    assign_splits(name, balance(unique, &mut rng), seed)
}

/// Contiguous length ranges holding roughly equal numbers of sentences.
pub fn equal_frequency_bins(lengths: &[usize], k: usize) -> Result<Vec<RangeInclusive<usize>>, ProbeError> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in lengths {
        *counts.entry(l).or_default() += 1;
    }
    let n = lengths.len() as f64;
    let mut bins = Vec::new();
    let (mut lo, mut acc) = (None, 0usize);
    for (&len, &c) in &counts {
        lo.get_or_insert(len);
        acc += c;
        if bins.len() + 1 < k && acc as f64 >= (bins.len() + 1) as f64 * n / k as f64 {
            bins.push(lo.take().expect("set above")..=len);
        }
    }
    if let Some(lo) = lo {
        bins.push(lo..=*counts.keys().last().expect("non-empty"));
    }
    if bins.len() < 2 {
        return Err(ProbeError::DegenerateBins);
    }
    Ok(bins)
}

/// Sentence length in tokens, labelled by bin index. Without explicit bins,
/// six equal-frequency bins are derived from the corpus and classes are
/// balanced by downsampling.
pub fn gen_sentlen(corpus: &[Sentence], bins: Option<&[RangeInclusive<usize>]>, seed: u64) -> Result<ProbingTask, ProbeError> {
    let derived;
    let (bins, balanced) = match bins {
        Some(b) => (b, false),
        None => {
            let lengths: Vec<usize> = corpus.iter().map(|s| s.tokens.len()).collect();
            derived = equal_frequency_bins(&lengths, 6)?;
            (derived.as_slice(), true)
        }
    };
    if bins.len() < 2 {
        return Err(ProbeError::DegenerateBins);
    }
    let mut labelled = Vec::new();
    let mut used = vec![0usize; bins.len()];
    for s in corpus {
        if let Some(b) = bins.iter().position(|r| r.contains(&s.tokens.len())) {
            used[b] += 1;
            labelled.push((b.to_string(), s.tokens.clone()));
        }
    }
    if used.contains(&0) {
        return Err(ProbeError::DegenerateBins);
    }
    if balanced {
        balanced_task("sentlen", labelled, seed)
    } else {
        assign_splits("sentlen", labelled, seed)
    }
}

/// Words by descending corpus frequency, ties broken lexicographically.
pub fn frequency_ranking(corpus: &[Sentence]) -> Vec<(String, usize)> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in corpus {
        for t in &s.tokens {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().map(|(w, c)| (w.to_string(), c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// `k` target words: frequency ranks 500..500+k when the vocabulary is
/// large enough, otherwise the band centred on the median rank. Only
/// alphabetic words are eligible.
pub fn wc_targets(corpus: &[Sentence], k: usize) -> Result<Vec<String>, ProbeError> {
    let ranked: Vec<String> = frequency_ranking(corpus)
        .into_iter()
        .map(|(w, _)| w)
        .filter(|w| w.chars().all(char::is_alphabetic))
        .collect();
    if k < 2 || ranked.len() < k {
        return Err(ProbeError::InsufficientTargets(format!("{} eligible words for k = {k}", ranked.len())));
    }
    let start = if ranked.len() >= 500 + k { 500 } else { (ranked.len() - k) / 2 };
    Ok(ranked[start..start + k].to_vec())
}

/// Which target word a sentence contains; only sentences with exactly one
/// target occurrence are kept. Classes are balanced.
pub fn gen_wc(corpus: &[Sentence], k: usize, seed: u64) -> Result<ProbingTask, ProbeError> {
    let targets = wc_targets(corpus, k)?;
    gen_wc_with(corpus, &targets, seed)
}

pub fn gen_wc_with(corpus: &[Sentence], targets: &[String], seed: u64) -> Result<ProbingTask, ProbeError> {
    let set: HashSet<&str> = targets.iter().map(String::as_str).collect();
    let labelled: Vec<(String, Vec<String>)> = corpus
        .iter()
        .filter_map(|s| {
            let hits: Vec<&String> = s.tokens.iter().filter(|t| set.contains(t.as_str())).collect();
            (hits.len() == 1).then(|| (hits[0].clone(), s.tokens.clone()))
        })
        .collect();
    let present: HashSet<&String> = labelled.iter().map(|(l, _)| l).collect();
    if present.len() < targets.len() {
        return Err(ProbeError::InsufficientTargets(format!("{} of {} targets occur alone in a sentence", present.len(), targets.len())));
    }
    balanced_task("wc", labelled, seed)
}

/// Swaps one adjacent non-initial, non-final pair: positions `j, j+1` with
/// `1 ≤ j ≤ n − 3`.
pub fn swap_adjacent(tokens: &[String], j: usize) -> Vec<String> {
    assert!(j >= 1 && j + 3 <= tokens.len(), "swap position out of range");
    let mut out = tokens.to_vec();
    out.swap(j, j + 1);
    out
}

/// Half of the sentences (length ≥ 4) get one adjacent pair inverted.
pub fn gen_bshift(corpus: &[Sentence], seed: u64) -> Result<ProbingTask, ProbeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labelled = corpus
        .iter()
        .filter(|s| s.tokens.len() >= 4)
        .map(|s| {
            if rng.gen_bool(0.5) {
                let j = rng.gen_range(1..=s.tokens.len() - 3);
                ("inverted".to_string(), swap_adjacent(&s.tokens, j))
            } else {
                ("intact".to_string(), s.tokens.clone())
            }
        })
        .collect();
    assign_splits("bshift", labelled, seed)
}

/// Tree depth as the label; depths outside `classes` are discarded.
pub fn gen_treedepth(corpus: &[Sentence], classes: RangeInclusive<usize>, seed: u64) -> Result<ProbingTask, ProbeError> {
    let labelled = corpus
        .iter()
        .filter_map(|s| {
            let d = tree_depth(&s.tree);
            classes.contains(&d).then(|| (d.to_string(), s.tokens.clone()))
        })
        .collect();
    assign_splits("treedepth", labelled, seed)
}

/// Top-constituent sequence if it is among the `k − 1` most frequent ones
/// (ties broken lexicographically), otherwise `OTHER`.
pub fn gen_topconst(corpus: &[Sentence], k: usize, seed: u64) -> Result<ProbingTask, ProbeError> {
    let seqs: Vec<String> = corpus.iter().map(|s| top_constituents(&s.tree).join(" ")).collect();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in &seqs {
        *counts.entry(s).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let kept: HashSet<&str> = ranked.iter().take(k.saturating_sub(1)).map(|(s, _)| *s).collect();
    let labelled = corpus
        .iter()
        .zip(&seqs)
        .filter(|(_, seq)| !seq.is_empty())
        .map(|(s, seq)| {
            let label = if kept.contains(seq.as_str()) { seq.clone() } else { "OTHER".to_string() };
            (label, s.tokens.clone())
        })
        .collect();
    assign_splits("topconst", labelled, seed)
}

fn child<'a>(node: &'a ParseTree, label: &str) -> Option<&'a ParseTree> {
    node.children().iter().find(|c| c.label() == Some(label))
}

/// Highest `S` node (breadth-first). A coordinated `S` without its own VP
/// is replaced by its first conjunct.
pub fn main_clause(tree: &ParseTree) -> Option<&ParseTree> {
    let mut queue = std::collections::VecDeque::from([tree]);
    let mut clause = None;
    while let Some(node) = queue.pop_front() {
        if node.label() == Some("S") {
            clause = Some(node);
            break;
        }
        queue.extend(node.children().iter());
    }
    let mut clause = clause?;
    while child(clause, "VP").is_none() {
        clause = child(clause, "S")?;
    }
    Some(clause)
}

/// First verb tag heading the main VP, descending through nested VPs.
fn head_verb(vp: &ParseTree) -> Option<&str> {
    for c in vp.children() {
        match c.label() {
            Some(l) if l.starts_with("VB") && c.is_preterminal() => return Some(l),
            Some("VP") => return head_verb(c),
            _ => {}
        }
    }
    None
}

/// Rightmost noun tag directly under an NP, descending into a leading NP
/// for `NP → NP PP` structures.
fn head_noun(np: &ParseTree) -> Option<&str> {
    let nouns: Vec<&str> = np.children().iter().filter(|c| c.is_preterminal()).filter_map(ParseTree::label).filter(|l| l.starts_with("NN")).collect();
    match nouns.last() {
        Some(&l) => Some(l),
        None => child(np, "NP").and_then(head_noun),
    }
}

fn number_of(tag: &str) -> Option<&'static str> {
    match tag {
        "NN" | "NNP" => Some("singular"),
        "NNS" | "NNPS" => Some("plural"),
        _ => None,
    }
}

pub fn tense_of(tree: &ParseTree) -> Option<&'static str> {
    let vp = child(main_clause(tree)?, "VP")?;
    match head_verb(vp)? {
        "VBD" | "VBN" => Some("past"),
        "VBP" | "VBZ" => Some("present"),
        _ => None,
    }
}

pub fn subject_number(tree: &ParseTree) -> Option<&'static str> {
    let clause = main_clause(tree)?;
    let vp_at = clause.children().iter().position(|c| c.label() == Some("VP"))?;
    let np = clause.children()[..vp_at].iter().rev().find(|c| c.label() == Some("NP"))?;
    number_of(head_noun(np)?)
}

pub fn object_number(tree: &ParseTree) -> Option<&'static str> {
    let vp = child(main_clause(tree)?, "VP")?;
    // only verbal objects, not copular predicates
    let verb = vp.children().iter().find(|c| c.label().is_some_and(|l| l.starts_with("VB")))?;
    if matches!(verb.words().first(), Some(&("is" | "are" | "was" | "were" | "be" | "been"))) {
        return None;
    }
    number_of(head_noun(child(vp, "NP")?)?)
}

fn gen_heuristic(name: &str, corpus: &[Sentence], f: fn(&ParseTree) -> Option<&'static str>, seed: u64) -> Result<ProbingTask, ProbeError> {
    let labelled = corpus.iter().filter_map(|s| f(&s.tree).map(|l| (l.to_string(), s.tokens.clone()))).collect();
    assign_splits(name, labelled, seed)
}

pub fn gen_tense(corpus: &[Sentence], seed: u64) -> Result<ProbingTask, ProbeError> {
    gen_heuristic("tense", corpus, tense_of, seed)
}

pub fn gen_subjnum(corpus: &[Sentence], seed: u64) -> Result<ProbingTask, ProbeError> {
    gen_heuristic("subjnum", corpus, subject_number, seed)
}

pub fn gen_objnum(corpus: &[Sentence], seed: u64) -> Result<ProbingTask, ProbeError> {
    gen_heuristic("objnum", corpus, object_number, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeHyper {
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for ProbeHyper {
    fn default() -> Self {
        ProbeHyper {
            l2: 1e-4,
            epochs: 200,
            lr: 0.05,
            patience: 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub task: String,
    pub accuracy: f64,
    /// Test-set share of the most frequent training label.
    pub baseline: f64,
    pub train_size: usize,
    pub test_size: usize,
}

/// Softmax regression trained by full-batch Adam.
struct Probe {
    w: Vec<f64>,
    b: Vec<f64>,
    classes: usize,
}

impl Probe {
    fn logits(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.b);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.w[i * self.classes..(i + 1) * self.classes];
            out.iter_mut().zip(row).for_each(|(o, &w)| *o += xi * w);
        }
    }

    fn predict(&self, x: &[f64], buf: &mut [f64]) -> usize {
        self.logits(x, buf);
        // first maximum wins
        let mut best = 0;
        for c in 1..self.classes {
            if buf[c] > buf[best] {
                best = c;
            }
        }
        best
    }

    fn accuracy(&self, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
        let mut buf = vec![0.0; self.classes];
        let correct = xs.iter().zip(ys).filter(|(x, &y)| self.predict(x, &mut buf) == y).count();
        correct as f64 / xs.len().max(1) as f64
    }
}

fn train_probe(xs: &[Vec<f64>], ys: &[usize], va: (&[Vec<f64>], &[usize]), classes: usize, hyper: &ProbeHyper) -> Probe {
    let dim = xs.first().map_or(0, Vec::len);
    // start from the class prior so an uninformative probe predicts the majority
    let mut counts = vec![0usize; classes];
    ys.iter().for_each(|&y| counts[y] += 1);
    let mut probe = Probe {
        w: vec![0.0; dim * classes],
        b: counts.iter().map(|&c| if c == 0 { -30.0 } else { (c as f64 / ys.len() as f64).ln() }).collect(),
        classes,
    };
    if dim == 0 {
        // bias-only model: the prior is already optimal
        return probe;
    }
    let n_params = probe.w.len() + classes;
    let (mut m, mut v) = (vec![0.0; n_params], vec![0.0; n_params]);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut best = (probe.accuracy(va.0, va.1), probe.w.clone(), probe.b.clone());
    let mut since_best = 0;
    let mut grad = vec![0.0; n_params];
    let mut p = vec![0.0; classes];
    let n = xs.len() as f64;
    for epoch in 1..=hyper.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (x, &y) in xs.iter().zip(ys) {
            probe.logits(x, &mut p);
            let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            p.iter_mut().for_each(|l| {
                *l = (*l - max).exp();
                z += *l;
            });
            p.iter_mut().for_each(|l| *l /= z);
            p[y] -= 1.0;
            for (i, &xi) in x.iter().enumerate() {
                if xi != 0.0 {
                    let g = &mut grad[i * classes..(i + 1) * classes];
                    g.iter_mut().zip(&p).for_each(|(g, &d)| *g += xi * d);
                }
            }
            grad[dim * classes..].iter_mut().zip(&p).for_each(|(g, &d)| *g += d);
        }
        grad.iter_mut().for_each(|g| *g /= n);
        for (g, &w) in grad.iter_mut().zip(&probe.w) {
            *g += hyper.l2 * w;
        }
        let t = epoch as i32;
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        for (k, &g) in grad.iter().enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            let step = hyper.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            if k < probe.w.len() {
                probe.w[k] -= step;
            } else {
                probe.b[k - probe.w.len()] -= step;
            }
        }
        let acc = probe.accuracy(va.0, va.1);
        if acc > best.0 {
            best = (acc, probe.w.clone(), probe.b.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hyper.patience {
                break;
            }
        }
    }
    probe.w = best.1;
    probe.b = best.2;
    probe
}

/// Trains the probe on `tr` (early-stopped on `va`) and reports `te`
/// accuracy next to the majority-class baseline. Features are BoV vectors
/// standardized with training-split statistics.
pub fn eval_probe(task: &ProbingTask, table: &EmbeddingTable, hyper: &ProbeHyper) -> Result<ProbeResult, ProbeError> {
    task.check_splits()?;
    let labels = task.labels();
    let label_id: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();

    let mut all_oov = 0;
    let mut featurize = |split: Split| -> Result<(Vec<Vec<f64>>, Vec<usize>), ProbeError> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for e in task.split(split) {
            let f = bov(&e.tokens, table, OovPolicy::Skip).map_err(|e| ProbeError::InvalidTask(e.to_string()))?;
            all_oov += f.all_oov as usize;
            xs.push(f.vector);
            ys.push(label_id[e.label.as_str()]);
        }
        Ok((xs, ys))
    };
    let (mut tr_x, tr_y) = featurize(Split::Tr)?;
    let (mut va_x, va_y) = featurize(Split::Va)?;
    let (mut te_x, te_y) = featurize(Split::Te)?;
    if 2 * all_oov > task.examples.len() {
        return Err(ProbeError::AllOovSentences(all_oov));
    }

    // constant columns carry no information and are dropped
    let n = tr_x.len() as f64;
    let mut kept = Vec::new();
    let (mut mean, mut std) = (Vec::new(), Vec::new());
    for d in 0..table.dim() {
        let mu = tr_x.iter().map(|x| x[d]).sum::<f64>() / n;
        let var = tr_x.iter().map(|x| (x[d] - mu).powi(2)).sum::<f64>() / n;
        if var > 1e-24 {
            kept.push(d);
            mean.push(mu);
            std.push(var.sqrt());
        }
    }
    for x in tr_x.iter_mut().chain(va_x.iter_mut()).chain(te_x.iter_mut()) {
        *x = kept.iter().enumerate().map(|(k, &d)| (x[d] - mean[k]) / std[k]).collect();
    }

    let probe = train_probe(&tr_x, &tr_y, (&va_x, &va_y), labels.len(), hyper);
    let accuracy = probe.accuracy(&te_x, &te_y);

    let mut counts = vec![0usize; labels.len()];
    tr_y.iter().for_each(|&y| counts[y] += 1);
    let majority = (0..labels.len()).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
    let baseline = te_y.iter().filter(|&&y| y == majority).count() as f64 / te_y.len() as f64;
    Ok(ProbeResult {
        task: task.name.clone(),
        accuracy,
        baseline,
        train_size: tr_x.len(),
        test_size: te_x.len(),
    })
}

/// The generatable tasks with default settings.
pub fn generate_all(corpus: &[Sentence], wc_k: usize, seed: u64) -> Vec<Result<ProbingTask, ProbeError>> {
    vec![
        gen_sentlen(corpus, None, seed),
        gen_wc(corpus, wc_k, seed),
        gen_bshift(corpus, seed),
        gen_treedepth(corpus, 3..=9, seed),
        gen_topconst(corpus, 20, seed),
        gen_tense(corpus, seed),
        gen_subjnum(corpus, seed),
        gen_objnum(corpus, seed),
    ]
}
