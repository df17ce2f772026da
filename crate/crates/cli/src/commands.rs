use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use structembed::attribution::{
    self, author_labels, evaluate, input_table, majority_baseline, random_table, split_documents, train_classifier, EmbeddingMode, HanConfig, HanModel,
    TrainConfig as AttrTrainConfig,
};
use structembed::corpus::{read_documents, read_sentences, save_documents, save_sentences, Sentence};
use structembed::embeddings::{cooccurrence_embeddings, EmbeddingTable};
use structembed::numerics::{CheckpointError, Real};
use structembed::probing::{eval_probe, generate_all, ProbeHyper, ProbingTask};
use structembed::siamese::{build_word_vocab, prepare, split_dev, SiameseConfig, SiameseError, TrainState};
use structembed::synth;
use structembed::treebank::{build_label_vocab, count_labels, linearize_labels, parse_lines};
use structembed::vocab::Vocab;

use crate::config::Settings;
use crate::manifest::Manifest;
use crate::{Command, Invalid};

const WORD_CAP: usize = 40;
const LABEL_SEQ_CAP: usize = 80;

pub fn dispatch(command: Command, mut s: Settings, seed: u64) -> Result<()> {
    match command {
        Command::Synth(a) => synth_cmd(a, &mut s, seed),
        Command::Linearize(a) => linearize_cmd(a, &mut s, seed),
        Command::BuildVocab(a) => build_vocab_cmd(a, &mut s, seed),
        Command::Train(a) => train_cmd(a, &mut s, seed),
        Command::ExportEmbeddings(a) => export_cmd(a, &mut s, seed),
        Command::Cooccur(a) => cooccur_cmd(a, &mut s, seed),
        Command::ProbeGen(a) => probe_gen_cmd(a, &mut s, seed),
        Command::ProbeEval(a) => probe_eval_cmd(a, &mut s, seed),
        Command::AttrTrain(a) => attr_train_cmd(a, &mut s, seed),
        Command::AttrEval(a) => attr_eval_cmd(a, &mut s, seed),
    }
}

fn invalid(msg: impl Display) -> anyhow::Error {
    Invalid(msg.to_string()).into()
}

fn bad_input<E: Display>(path: &Path) -> impl FnOnce(E) -> anyhow::Error + '_ {
    move |e| invalid(format!("{}: {e}", path.display()))
}

/// An existing input file or directory.
fn input(s: &mut Settings, section: &str, key: &str, flag: Option<String>) -> Result<PathBuf> {
    let path = PathBuf::from(s.require::<String>(section, key, flag)?);
    if !path.exists() {
        return Err(invalid(format!("{key}: {} does not exist", path.display())));
    }
    Ok(path)
}

/// An output directory, created if needed.
fn out_dir(s: &mut Settings, section: &str, flag: Option<String>) -> Result<PathBuf> {
    let dir = PathBuf::from(s.require::<String>(section, "out", flag)?);
    fs::create_dir_all(&dir).map_err(bad_input(&dir))?;
    Ok(dir)
}

/// An output file whose parent directory is created if needed; returns the
/// file and the directory that receives the manifest.
fn out_file(s: &mut Settings, section: &str, flag: Option<String>) -> Result<(PathBuf, PathBuf)> {
    let file = PathBuf::from(s.require::<String>(section, "out", flag)?);
    let dir = match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(bad_input(&dir))?;
    Ok((file, dir))
}

/// A comma-separated list: repeated flags win over the file entry.
fn list(s: &mut Settings, section: &str, key: &str, flags: Vec<String>) -> Result<Vec<String>> {
    let joined = (!flags.is_empty()).then(|| flags.join(","));
    let value = s.require::<String>(section, key, joined)?;
    Ok(value.split(',').map(str::trim).filter(|p| !p.is_empty()).map(str::to_string).collect())
}

/// Writes a report to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn finish(s: &Settings, sections: &[&str], manifest: &Manifest, dir: &Path) -> Result<()> {
    s.check_unknown(sections)?;
    let path = manifest.write(dir, s.resolved())?;
    info!("wrote {}", path.display());
    Ok(())
}

fn read_corpus(path: &Path) -> Result<Vec<Sentence>> {
    let sentences = read_sentences(path).map_err(bad_input(path))?;
    if sentences.is_empty() {
        return Err(invalid(format!("{}: no sentences", path.display())));
    }
    Ok(sentences)
}

fn synth_cmd(a: crate::SynthArgs, s: &mut Settings, seed: u64) -> Result<()> {
    let dir = out_dir(s, "synth", a.out)?;
    let n = s.get("synth", "sentences", a.sentences, 3000usize)?;
    let docs_per_author = s.get("synth", "docs_per_author", a.docs_per_author, 250usize)?;
    let per_doc = s.get("synth", "sentences_per_doc", a.sentences_per_doc, 20usize)?;
    s.check_unknown(&["synth"])?;
    if n == 0 || docs_per_author == 0 || per_doc == 0 {
        return Err(invalid("synth sizes must be positive"));
    }

    let sentences = synth::corpus(n, seed);
    let docs = synth::attribution_corpus(docs_per_author, per_doc, seed.wrapping_add(1));
    let corpus = dir.join("corpus.jsonl");
    let trees = dir.join("trees.txt");
    let authors = dir.join("authors.jsonl");
    save_sentences(&corpus, &sentences)?;
    write_text(&trees, &sentences.iter().map(|s| format!("{}\n", s.tree)).collect::<String>())?;
    save_documents(&authors, &docs)?;
    info!("{} sentences, {} documents", sentences.len(), docs.len());

    let mut m = Manifest::new("synth", seed);
    m.output(&corpus).output(&trees).output(&authors);
    finish(s, &["synth"], &m, &dir)
}

#[derive(Serialize)]
struct LinearizedRecord<'a> {
    tokens: Vec<&'a str>,
    tree: String,
    labels: Vec<&'a str>,
}

fn linearize_cmd(a: crate::LinearizeArgs, s: &mut Settings, seed: u64) -> Result<()> {
    let input = input(s, "linearize", "input", a.input)?;
    let (out, dir) = out_file(s, "linearize", a.out)?;
    let text = fs::read_to_string(&input).map_err(bad_input(&input))?;
    let trees = parse_lines(&text).map_err(|(line, e)| invalid(format!("{} line {line}: {e}", input.display())))?;

    let mut w = BufWriter::new(fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?);
    for t in &trees {
        let record = LinearizedRecord {
            tokens: t.words(),
            tree: t.to_string(),
            labels: linearize_labels(t),
        };
        serde_json::to_writer(&mut w, &record)?;
        writeln!(w)?;
    }
    w.flush()?;

    let mut histogram: Vec<(String, usize)> = count_labels(&trees).into_iter().collect();
    histogram.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut report = format!("{} trees, {} distinct labels\n", trees.len(), histogram.len());
    for (label, count) in &histogram {
        report.push_str(&format!("{label}\t{count}\n"));
    }
    emit(&report);

    let mut m = Manifest::new("linearize", seed);
    m.input(&input).output(&out);
    finish(s, &["linearize"], &m, &dir)
}

fn build_vocab_cmd(a: crate::BuildVocabArgs, s: &mut Settings, seed: u64) -> Result<()> {
    let corpus = input(s, "vocab", "corpus", a.corpus)?;
    let dir = out_dir(s, "vocab", a.out)?;
    let label_cap = s.get("vocab", "label_cap", a.label_cap, 77usize)?;
    let min_count = s.get("vocab", "min_count", a.min_count, 2usize)?;
    if label_cap == 0 {
        return Err(invalid("label_cap must be positive"));
    }
    let sentences = read_corpus(&corpus)?;
    let words = build_word_vocab(&sentences, min_count);
    let labels = build_label_vocab(sentences.iter().map(|s| &s.tree), label_cap).map_err(bad_input(&corpus))?;
    let (wp, lp) = (dir.join("words.vocab"), dir.join("labels.vocab"));
    words.save(&wp)?;
    labels.save(&lp)?;
    info!("{} words, {} labels (reserved ids included)", words.len(), labels.len());

    let mut m = Manifest::new("build-vocab", seed);
    m.input(&corpus).output(&wp).output(&lp);
    finish(s, &["vocab"], &m, &dir)
}

#[derive(Clone, Copy, PartialEq)]
enum Precision {
    F32,
    F64,
}

fn precision(text: &str) -> Result<Precision> {
    match text {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        _ => Err(invalid(format!("precision must be f32 or f64, not `{text}`"))),
    }
}

fn preset_is_desk(text: &str) -> Result<bool> {
    match text {
        "desk" => Ok(true),
        "full" => Ok(false),
        _ => Err(invalid(format!("preset must be desk or full, not `{text}`"))),
    }
}

struct TrainPlan {
    epochs: usize,
    every: usize,
    dir: PathBuf,
    train: Vec<Sentence>,
    dev: Vec<Sentence>,
}

const LOSS_HEADER: &str = "epoch,train_loss,median_batch_loss,train_accuracy,dev_loss,dev_accuracy";

/// Rows of an earlier `loss.csv` up to `epoch`, and the best dev accuracy
/// among them.
fn previous_rows(path: &Path, epoch: usize) -> (Vec<String>, f64) {
    let Ok(text) = fs::read_to_string(path) else { return (Vec::new(), f64::NEG_INFINITY) };
    let mut rows = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        match (fields.first().and_then(|e| e.parse::<usize>().ok()), fields.last().and_then(|a| a.parse::<f64>().ok())) {
            (Some(e), Some(acc)) if e <= epoch => {
                best = best.max(acc);
                rows.push(line.to_string());
            }
            _ => {}
        }
    }
    (rows, best)
}

fn run_training<T: Real>(mut state: TrainState<T>, plan: &TrainPlan, m: &mut Manifest) -> Result<()> {
    let tr = prepare(&plan.train, &state.word_vocab, &state.label_vocab, WORD_CAP, LABEL_SEQ_CAP);
    let dv = prepare(&plan.dev, &state.word_vocab, &state.label_vocab, WORD_CAP, LABEL_SEQ_CAP);
    let dev_pairs = state.dev_pairs(&dv)?;
    let csv = plan.dir.join("loss.csv");
    let (mut rows, mut best) = previous_rows(&csv, state.epoch);
    let best_path = plan.dir.join("best.ssrl");
    while state.epoch < plan.epochs {
        let stats = state.train_epoch(&tr)?;
        let dev = state.evaluate_pairs(&dev_pairs)?;
        info!(
            "epoch {} loss {:.5} acc {:.4} | dev loss {:.5} acc {:.4}",
            stats.epoch, stats.mean_loss, stats.pair_accuracy, dev.loss, dev.accuracy
        );
        rows.push(format!(
            "{},{},{},{},{},{}",
            stats.epoch, stats.mean_loss, stats.median_batch_loss, stats.pair_accuracy, dev.loss, dev.accuracy
        ));
        write_text(&csv, &(std::iter::once(LOSS_HEADER.to_string()).chain(rows.iter().cloned()).collect::<Vec<_>>().join("\n") + "\n"))?;
        if dev.accuracy > best {
            best = dev.accuracy;
            state.save(&best_path)?;
        }
        if plan.every > 0 && stats.epoch % plan.every == 0 {
            let path = plan.dir.join(format!("epoch-{:03}.ssrl", stats.epoch));
            state.save(&path)?;
            m.output(path);
        }
    }
    let last = plan.dir.join("last.ssrl");
    state.save(&last)?;
    if !best_path.exists() {
        state.save(&best_path)?;
    }
    m.output(csv).output(best_path).output(last);
    Ok(())
}

fn load_state<T: Real>(path: &Path) -> Result<TrainState<T>> {
    TrainState::load(path).map_err(bad_input(path))
}

fn train_cmd(a: crate::TrainArgs, s: &mut Settings, seed: u64) -> Result<()> {
    let corpus = input(s, "train", "corpus", a.corpus)?;
    let dir = out_dir(s, "train", a.out)?;
    let vocab_dir = s.optional::<String>("train", "vocab_dir", a.vocab_dir)?.map(PathBuf::from);
    let resume = s.optional::<String>("train", "resume", a.resume)?.map(PathBuf::from);
    let epochs = s.get("train", "epochs", a.epochs, 30usize)?;
    let desk = preset_is_desk(&s.get("train", "preset", a.preset, "desk".to_string())?)?;
    let prec = precision(&s.get("train", "precision", a.precision, "f64".to_string())?)?;
    let batch_size = s.get("train", "batch_size", a.batch_size, if desk { 32 } else { 400 })?;
    let lr = s.get("train", "lr", a.lr, 5e-4)?;
    let margin = s.get("train", "margin", a.margin, 1.0)?;
    let dev_fraction = s.get("train", "dev_fraction", a.dev_fraction, 0.1)?;
    let every = s.get("train", "checkpoint_every", a.checkpoint_every, 5usize)?;
    let min_count = s.get("train", "min_count", None, 2usize)?;
    let label_cap = s.get("train", "label_cap", None, 77usize)?;
    s.check_unknown(&["train"])?;
    if !(0.0..1.0).contains(&dev_fraction) || dev_fraction == 0.0 {
        return Err(invalid("dev_fraction must be in (0, 1)"));
    }
    if !(lr > 0.0) || !(margin > 0.0) || batch_size < 2 || label_cap == 0 {
        return Err(invalid("lr and margin must be positive, batch_size ≥ 2, label_cap ≥ 1"));
    }

    let sentences = read_corpus(&corpus)?;
    let (train, dev) = split_dev(&sentences, dev_fraction, seed);
    if train.len() < 2 || dev.len() < 2 {
        return Err(invalid("corpus too small for a train/dev split"));
    }
    let mut m = Manifest::new("train", seed);
    m.input(&corpus);
    let plan = TrainPlan { epochs, every, dir: dir.clone(), train, dev };

    if let Some(path) = &resume {
        m.input(path);
        match prec {
            Precision::F32 => run_training(load_state::<f32>(path)?, &plan, &mut m)?,
            Precision::F64 => run_training(load_state::<f64>(path)?, &plan, &mut m)?,
        }
        return finish(s, &["train"], &m, &dir);
    }

    let (words, labels) = match &vocab_dir {
        Some(v) => {
            let (wp, lp) = (v.join("words.vocab"), v.join("labels.vocab"));
            let words = Vocab::load(&wp).map_err(bad_input(&wp))?;
            let labels = Vocab::load(&lp).map_err(bad_input(&lp))?;
            m.input(wp).input(lp);
            (words, labels)
        }
        None => (
            build_word_vocab(&plan.train, min_count),
            build_label_vocab(plan.train.iter().map(|s| &s.tree), label_cap).map_err(bad_input(&corpus))?,
        ),
    };
    let mut config = if desk {
        SiameseConfig::desk(words.len(), labels.len(), seed)
    } else {
        SiameseConfig::new(words.len(), labels.len(), seed)
    };
    config.batch_size = batch_size;
    config.margin = margin;
    config.adam.lr = lr;
    info!("{} train / {} dev sentences, {} words, {} labels", plan.train.len(), plan.dev.len(), words.len(), labels.len());
    let bad_config = |e: SiameseError| invalid(e);
    match prec {
        Precision::F32 => run_training(TrainState::<f32>::new(config, words, labels).map_err(bad_config)?, &plan, &mut m)?,
        Precision::F64 => run_training(TrainState::<f64>::new(config, words, labels).map_err(bad_config)?, &plan, &mut m)?,
    }
    finish(s, &["train"], &m, &dir)
}

/// Structural table of a checkpoint of either precision.
pub fn checkpoint_embeddings(path: &Path) -> Result<EmbeddingTable> {
    match TrainState::<f32>::load(path) {
        Ok(state) => Ok(state.export_structural_embeddings()),
        Err(SiameseError::Checkpoint(CheckpointError::DtypeMismatch { .. })) => Ok(load_state::<f64>(path)?.export_structural_embeddings()),
        Err(e) => Err(bad_input(path)(e)),
    }
}

fn export_cmd(a: crate::ExportArgs, s: &mut Settings, seed: u64) -> Result<()> {
    let checkpoint = input(s, "export", "checkpoint", a.checkpoint)?;
    let (out, dir) = out_file(s, "export", a.out)?;
    let table = checkpoint_embeddings(&checkpoint)?;
    table.save_text(&out).with_context(|| format!("writing {}", out.display()))?;
    info!("{} vectors of dimension {}", table.len(), table.dim());
    let mut m = Manifest::new("export-embeddings", seed);
    m.input(&checkpoint).output(&out);
    finish(s, &["export"], &m, &dir)
}

fn cooccur_cmd(a: crate::CooccurArgs, s: &mut Settings, seed: u64) -> Result<()> {
    let corpus = input(s, "cooccur", "corpus", a.corpus)?;
    let (out, dir) = out_file(s, "cooccur", a.out)?;
    let dim = s.get("cooccur", "dim", a.dim, 16usize)?;
    let min_count = s.get("cooccur", "min_count", a.min_count, 1usize)?;
    if dim == 0 {
        return Err(invalid("dim must be positive"));
    }
    let sentences = read_corpus(&corpus)?;
    let tokens: Vec<Vec<String>> = sentences.into_iter().map(|s| s.tokens).collect();
    let table = cooccurrence_embeddings(&tokens, dim, min_count);
    if table.is_empty() {
        return Err(invalid("no word reaches min_count"));
    }
    table.save_text(&out).with_context(|| format!("writing {}", out.display()))?;
    let mut m = Manifest::new("cooccur", seed);
    m.input(&corpus).output(&out);
    finish(s, &["cooccur"], &m, &dir)
}

fn probe_gen_cmd(a: crate::ProbeGenArgs, s: &mut Settings, seed: u64) -> Result<()> {
    let corpus = input(s, "probe", "corpus", a.corpus)?;
    let dir = out_dir(s, "probe", a.out)?;
    let wc_words = s.get("probe", "wc_words", a.wc_words, 20usize)?;
    if wc_words < 2 {
        return Err(invalid("wc_words must be at least 2"));
    }
    let sentences = read_corpus(&corpus)?;
    let mut m = Manifest::new("probe-gen", seed);
    m.input(&corpus);
    let mut written = 0;
    for task in generate_all(&sentences, wc_words, seed) {
        match task.and_then(|t| t.validate().map(|_| t)) {
            Ok(task) => {
                let path = dir.join(format!("{}.tsv", task.name));
                task.save(&path).with_context(|| format!("writing {}", path.display()))?;
                info!("{}: {} examples", task.name, task.examples.len());
                m.output(path);
                written += 1;
            }
            Err(e) => warn!("task skipped: {e}"),
        }
    }
    if written == 0 {
        return Err(invalid("no probing task could be generated from this corpus"));
    }
    finish(s, &["probe"], &m, &dir)
}

#[derive(Serialize)]
struct ProbeRow {
    task: String,
    embeddings: String,
    accuracy: f64,
    baseline: f64,
    train_size: usize,
    test_size: usize,
}

fn probe_eval_cmd(a: crate::ProbeEvalArgs, s: &mut Settings, seed: u64) -> Result<()> {
    let tasks_dir = input(s, "probe_eval", "tasks", a.tasks)?;
    let embeddings = list(s, "probe_eval", "embeddings", a.embeddings)?;
    let dir = out_dir(s, "probe_eval", a.out)?;
    let defaults = ProbeHyper::default();
    let hyper = ProbeHyper {
        l2: s.get("probe_eval", "l2", None, defaults.l2)?,
        epochs: s.get("probe_eval", "epochs", None, defaults.epochs)?,
        lr: s.get("probe_eval", "lr", None, defaults.lr)?,
        patience: s.get("probe_eval", "patience", None, defaults.patience)?,
    };
    if embeddings.is_empty() {
        return Err(invalid("no embedding tables given"));
    }
    let mut m = Manifest::new("probe-eval", seed);

    let mut task_paths: Vec<PathBuf> = fs::read_dir(&tasks_dir)
        .map_err(bad_input(&tasks_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
        .collect();
    task_paths.sort();
    if task_paths.is_empty() {
        return Err(invalid(format!("{}: no .tsv task files", tasks_dir.display())));
    }
    let mut tasks: Vec<ProbingTask> = Vec::new();
    for p in &task_paths {
        tasks.push(ProbingTask::load(p).map_err(bad_input(p))?);
        m.input(p);
    }

    let mut tables: Vec<(String, EmbeddingTable)> = Vec::new();
    for e in &embeddings {
        let p = PathBuf::from(e);
        let table = EmbeddingTable::load_text(&p).map_err(bad_input(&p))?;
        let stem = p.file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_else(|| e.clone());
        let name = if tables.iter().any(|(n, _)| *n == stem) { e.clone() } else { stem };
        tables.push((name, table));
        m.input(&p);
    }

    let mut rows = Vec::new();
    for task in &tasks {
        for (name, table) in &tables {
            let r = eval_probe(task, table, &hyper).map_err(|e| invalid(format!("{} with {name}: {e}", task.name)))?;
            rows.push(ProbeRow {
                task: r.task,
                embeddings: name.clone(),
                accuracy: r.accuracy,
                baseline: r.baseline,
                train_size: r.train_size,
                test_size: r.test_size,
            });
        }
    }

    let width = rows.iter().map(|r| r.embeddings.len()).max().unwrap_or(0).max(10);
    let mut text = format!("{:<10} {:<width$} {:>8} {:>8} {:>7} {:>6}\n", "task", "embeddings", "accuracy", "baseline", "train", "test");
    for r in &rows {
        text.push_str(&format!(
            "{:<10} {:<width$} {:>8.2} {:>8.2} {:>7} {:>6}\n",
            r.task,
            r.embeddings,
            100.0 * r.accuracy,
            100.0 * r.baseline,
            r.train_size,
            r.test_size
        ));
    }
    emit(&text);
    let (tp, jp) = (dir.join("report.txt"), dir.join("report.json"));
    write_text(&tp, &text)?;
    write_json(&jp, &rows)?;
    m.output(tp).output(jp);
    finish(s, &["probe_eval"], &m, &dir)
}

fn attr_train_cmd(a: crate::AttrTrainArgs, s: &mut Settings, seed: u64) -> Result<()> {
    let corpus = input(s, "attr", "corpus", a.corpus)?;
    let dir = out_dir(s, "attr", a.out)?;
    let mode: EmbeddingMode = s.require::<String>("attr", "mode", a.mode)?.parse().map_err(invalid)?;
    let structural = s.optional::<String>("attr", "structural", a.structural)?.map(PathBuf::from);
    let lexical = s.optional::<String>("attr", "lexical", a.lexical)?.map(PathBuf::from);
    let random_structural = s.get("attr", "random_structural", a.random_structural, false)?;
    let desk = preset_is_desk(&s.get("attr", "preset", a.preset, "desk".to_string())?)?;
    let defaults = AttrTrainConfig::new(seed);
    let mut tc = AttrTrainConfig {
        batch_size: s.get("attr", "batch_size", a.batch_size, defaults.batch_size)?,
        max_epochs: s.get("attr", "epochs", a.epochs, defaults.max_epochs)?,
        patience: s.get("attr", "patience", a.patience, defaults.patience)?,
        ..defaults
    };
    tc.adam.lr = s.get("attr", "lr", a.lr, tc.adam.lr)?;
    let dev_fraction = s.get("attr", "dev_fraction", a.dev_fraction, 0.2)?;
    let test_fraction = s.get("attr", "test_fraction", a.test_fraction, 0.2)?;
    s.check_unknown(&["attr"])?;
    if !(dev_fraction > 0.0 && test_fraction > 0.0 && dev_fraction + test_fraction < 1.0) {
        return Err(invalid("dev_fraction and test_fraction must be positive with a sum below 1"));
    }
    if tc.batch_size == 0 || tc.max_epochs == 0 || !(tc.adam.lr > 0.0) {
        return Err(invalid("batch_size, epochs and lr must be positive"));
    }

    let mut m = Manifest::new("attr-train", seed);
    m.input(&corpus);
    let mut load = |p: &Option<PathBuf>| -> Result<Option<EmbeddingTable>> {
        p.as_ref()
            .map(|p| {
                if !p.exists() {
                    return Err(invalid(format!("{} does not exist", p.display())));
                }
                m.input(p);
                EmbeddingTable::load_text(p).map_err(bad_input(p))
            })
            .transpose()
    };
    let mut st = load(&structural)?;
    let lx = load(&lexical)?;
    if random_structural {
        // a separate stream from the one used for parameter init
        st = st.map(|t| random_table(&t, seed.wrapping_add(1)));
    }
    let table = input_table(mode, st.as_ref(), lx.as_ref()).map_err(invalid)?;

    let docs = read_documents(&corpus).map_err(bad_input(&corpus))?;
    let (train, dev, test) = split_documents(&docs, dev_fraction, test_fraction, seed);
    if dev.is_empty() || test.is_empty() {
        return Err(invalid("corpus too small for a train/dev/test split"));
    }
    let labels = author_labels(&train);
    let config = HanConfig::new(mode, table.dim(), labels.len());
    let config = if desk { config.desk() } else { config };
    let (model, history) = train_classifier(&train, &dev, table, config, &tc).map_err(|e| match e {
        attribution::AttributionError::SingleClassCorpus | attribution::AttributionError::InvalidConfig(_) => invalid(e),
        e => e.into(),
    })?;
    for h in &history {
        info!("epoch {} loss {:.5} dev acc {:.4}", h.epoch, h.train_loss, h.dev_accuracy);
    }

    let paths: Vec<PathBuf> = ["train.jsonl", "dev.jsonl", "test.jsonl", "history.csv", "model.ssrl"].iter().map(|f| dir.join(f)).collect();
    save_documents(&paths[0], &train)?;
    save_documents(&paths[1], &dev)?;
    save_documents(&paths[2], &test)?;
    let mut csv = String::from("epoch,train_loss,dev_accuracy\n");
    for h in &history {
        csv.push_str(&format!("{},{},{}\n", h.epoch, h.train_loss, h.dev_accuracy));
    }
    write_text(&paths[3], &csv)?;
    model.save(&paths[4])?;
    info!("majority baseline on test: {:.4}", majority_baseline(&train, &test));
    for p in paths {
        m.output(p);
    }
    finish(s, &["attr"], &m, &dir)
}

fn attr_eval_cmd(a: crate::AttrEvalArgs, s: &mut Settings, seed: u64) -> Result<()> {
    let models = list(s, "attr_eval", "models", a.models)?;
    let test_path = input(s, "attr_eval", "test", a.test)?;
    let dir = out_dir(s, "attr_eval", a.out)?;
    s.check_unknown(&["attr_eval"])?;
    if models.is_empty() {
        return Err(invalid("no models given"));
    }
    let test = read_documents(&test_path).map_err(bad_input(&test_path))?;
    if test.is_empty() {
        return Err(invalid(format!("{}: no documents", test_path.display())));
    }
    let mut m = Manifest::new("attr-eval", seed);
    m.input(&test_path);

    let mut entries = Vec::new();
    let mut summary = format!("{:<40} {:<20} {:>8}\n", "model", "mode", "accuracy");
    let mut details = String::new();
    for name in &models {
        let path = PathBuf::from(name);
        if !path.exists() {
            return Err(invalid(format!("{} does not exist", path.display())));
        }
        let model = HanModel::load(&path).map_err(bad_input(&path))?;
        m.input(&path);
        let e = evaluate(&model, &test).map_err(invalid)?;
        summary.push_str(&format!("{:<40} {:<20} {:>8.2}\n", name, model.config.mode.to_string(), 100.0 * e.accuracy));
        details.push_str(&format!("\n{name} ({})\n", model.config.mode));
        for (l, acc) in e.labels.iter().zip(&e.per_class) {
            match acc {
                Some(acc) => details.push_str(&format!("  {l}: {:.2}\n", 100.0 * acc)),
                None => details.push_str(&format!("  {l}: -\n")),
            }
        }
        details.push_str(&e.confusion_text());
        let per_class: BTreeMap<&String, Option<f64>> = e.labels.iter().zip(e.per_class.iter().copied()).collect();
        entries.push(json!({
            "model": name,
            "mode": model.config.mode,
            "accuracy": e.accuracy,
            "per_class": per_class,
            "labels": e.labels,
            "confusion": e.confusion,
            "documents": e.documents,
        }));
    }
    let text = summary + &details;
    emit(&text);
    let (tp, jp) = (dir.join("report.txt"), dir.join("report.json"));
    write_text(&tp, &text)?;
    write_json(&jp, &json!({ "test": test_path.display().to_string(), "models": entries }))?;
    m.output(tp).output(jp);
    finish(s, &["attr_eval"], &m, &dir)
}
