//! End-to-end acceptance run: one PASS/FAIL line per criterion, plus
//! INFO lines for the related invariants. Criteria that fail are reported,
//! not hidden; set `ACCEPTANCE_STRICT=1` to turn any FAIL into a test
//! failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use structembed::attribution::HanModel;
use structembed::embeddings::EmbeddingTable;
use structembed::encoder::{Encoder, EncoderConfig};
use structembed::numerics::{Axis, NumericsError, ParamSet, Tape, Tensor, Var};
use structembed::siamese::{contrastive_loss, contrastive_term, Item, SiameseConfig, TrainState};
use structembed::synth;
use structembed::treebank::{linearize, linearize_labels, ParseTree};
use structembed::vocab::Vocab;

const SEEDS: [u64; 3] = [1, 2, 3];
const RTOL: f64 = 1e-4;
const ATOL: f64 = 1e-6;
const STEP: f64 = 1e-5;
// criterion thresholds
const MIN_DEV_ACCURACY: f64 = 0.95;
const MAX_DEV_LOSS: f64 = 0.05;
const COSINE_GAP: f64 = 0.1;
const SENTLEN_GAIN: f64 = 0.15;
const TREEDEPTH_GAIN: f64 = 0.05;
const WC_CHANCE_BAND: f64 = 0.05;
const WC_WORDS: usize = 20;
const ATTR_MIN_ACCURACY: f64 = 0.90;
// the 200-document dev set is noisy enough that patience 5 stops early
const ATTR_PATIENCE: &str = "10";

struct Outcome {
    failed: Vec<String>,
}

impl Outcome {
    fn criterion(&mut self, id: &str, pass: bool, detail: String) {
        println!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(id.to_string());
        }
    }

    fn info(&self, what: &str, holds: bool, detail: String) {
        println!("INFO {what}: {} — {detail}", if holds { "holds" } else { "violated" });
    }
}

fn cli(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_structembed"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn close(a: f64, n: f64) -> bool {
    (a - n).abs() <= ATOL + RTOL * a.abs().max(n.abs())
}

// ---------------------------------------------------------------- 1

type Build = dyn Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var, NumericsError>;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn projected(tape: &mut Tape<'_, f64>, out: Var) -> Var {
    let shape = tape.shape(out).to_vec();
    let w = tape.constant(random(&shape, &mut ChaCha8Rng::seed_from_u64(99))).unwrap();
    let p = tape.mul(out, w).unwrap();
    tape.sum(p).unwrap()
}

fn scalar_of(inputs: &[Tensor<f64>], build: &Build) -> f64 {
    let mut tape = Tape::standalone();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone()).unwrap()).collect();
    let out = build(&mut tape, &vars).unwrap();
    let loss = projected(&mut tape, out);
    tape.value(loss).item()
}

/// True when every input gradient element agrees with central differences.
fn op_agrees(inputs: Vec<Tensor<f64>>, build: &Build) -> bool {
    let mut tape = Tape::standalone();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone()).unwrap()).collect();
    let out = build(&mut tape, &vars).unwrap();
    let loss = projected(&mut tape, out);
    let grads = tape.backward(loss).unwrap();
    inputs.iter().enumerate().all(|(k, input)| {
        let analytic = grads.wrt(vars[k]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.numel()]);
        (0..input.numel()).all(|j| {
            let mut plus = inputs.clone();
            plus[k].data_mut()[j] += STEP;
            let mut minus = inputs.clone();
            minus[k].data_mut()[j] -= STEP;
            close(analytic[j], (scalar_of(&plus, build) - scalar_of(&minus, build)) / (2.0 * STEP))
        })
    })
}

fn param_fd_agrees(params: &mut ParamSet<f64>, analytic: &structembed::numerics::ParamGrads<f64>, loss_of: &dyn Fn(&ParamSet<f64>) -> f64) -> bool {
    let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
    ids.into_iter().all(|id| {
        let n = params.value(id).numel();
        let g = analytic.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        (0..n).all(|j| {
            let orig = params.value(id).data()[j];
            params.get_mut(id).value.data_mut()[j] = orig + STEP;
            let plus = loss_of(params);
            params.get_mut(id).value.data_mut()[j] = orig - STEP;
            let minus = loss_of(params);
            params.get_mut(id).value.data_mut()[j] = orig;
            close(g[j], (plus - minus) / (2.0 * STEP))
        })
    })
}

fn tiny(vocab_size: usize) -> EncoderConfig {
    EncoderConfig {
        vocab_size,
        embed_dim: 4,
        lstm_hidden: 3,
        attention_hidden: 5,
        attention_hops: 2,
        mlp_hidden: 7,
        output_dim: 6,
        max_len: 8,
    }
}

fn gradient_checks() -> (Vec<(&'static str, bool)>, bool, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut r = |shape: &[usize]| random(shape, &mut rng);
    let cases: Vec<(&'static str, Vec<Tensor<f64>>, Box<Build>)> = vec![
        ("matmul", vec![r(&[3, 4]), r(&[4, 2])], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("add", vec![r(&[3, 4]), r(&[3, 4])], Box::new(|t, v| t.add(v[0], v[1]))),
        ("add (row broadcast)", vec![r(&[3, 4]), r(&[1, 4])], Box::new(|t, v| t.add(v[0], v[1]))),
        ("sub", vec![r(&[2, 3]), r(&[2, 3])], Box::new(|t, v| t.sub(v[0], v[1]))),
        ("mul", vec![r(&[2, 3]), r(&[2, 3])], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("scale", vec![r(&[2, 3])], Box::new(|t, v| t.scale(v[0], -1.7))),
        ("add_scalar", vec![r(&[2, 3])], Box::new(|t, v| t.add_scalar(v[0], 0.3))),
        ("concat rows", vec![r(&[2, 3]), r(&[1, 3])], Box::new(|t, v| t.concat(&[v[0], v[1]], Axis::Rows))),
        ("concat cols", vec![r(&[2, 3]), r(&[2, 2])], Box::new(|t, v| t.concat(&[v[0], v[1]], Axis::Cols))),
        ("slice rows", vec![r(&[4, 3])], Box::new(|t, v| t.slice(v[0], Axis::Rows, 1, 2))),
        ("slice cols", vec![r(&[3, 5])], Box::new(|t, v| t.slice(v[0], Axis::Cols, 2, 3))),
        ("transpose", vec![r(&[2, 5])], Box::new(|t, v| t.transpose(v[0]))),
        ("reshape", vec![r(&[2, 6])], Box::new(|t, v| t.reshape(v[0], vec![3, 4]))),
        ("tanh", vec![r(&[3, 3])], Box::new(|t, v| t.tanh(v[0]))),
        ("sigmoid", vec![r(&[3, 3])], Box::new(|t, v| t.sigmoid(v[0]))),
        ("max_with_scalar", vec![r(&[3, 4])], Box::new(|t, v| t.max_with_scalar(v[0], 0.05))),
        ("softmax_rows", vec![r(&[3, 4])], Box::new(|t, v| t.softmax_rows(v[0]))),
        ("l2_norm_diff", vec![r(&[1, 5]), r(&[1, 5])], Box::new(|t, v| t.l2_norm_diff(v[0], v[1]))),
        ("sum", vec![r(&[2, 3])], Box::new(|t, v| t.sum(v[0]))),
        ("mean", vec![r(&[2, 3])], Box::new(|t, v| t.mean(v[0]))),
        ("gather_rows", vec![r(&[5, 3])], Box::new(|t, v| t.gather_rows(v[0], &[4, 0, 4, 2]))),
        ("cross_entropy", vec![r(&[1, 5])], Box::new(|t, v| t.cross_entropy(v[0], 3))),
        ("lstm_cell", vec![r(&[2, 12]), r(&[2, 3])], Box::new(|t, v| t.lstm_cell(v[0], v[1]))),
    ];
    let ops = cases.into_iter().map(|(name, inputs, build)| (name, op_agrees(inputs, &*build))).collect();

    // full encoder
    let mut params = ParamSet::new();
    let enc = Encoder::init(tiny(11), "lex", &mut params, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let ids = [3usize, 1, 7, 3, 10];
    let proj: Vec<f64> = {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()
    };
    let encoder_loss = |p: &ParamSet<f64>| -> f64 {
        let mut tape = Tape::new(p);
        let v = enc.encode(&mut tape, &ids).unwrap();
        tape.value(v).data().iter().zip(&proj).map(|(a, b)| a * b).sum()
    };
    let grads = {
        let mut tape = Tape::new(&params);
        let v = enc.encode(&mut tape, &ids).unwrap();
        tape.backward_with(v, &proj).unwrap().into_params()
    };
    let encoder_ok = param_fd_agrees(&mut params, &grads, &encoder_loss);

    // full Siamese loss: one genuine and one false pair, hinge active
    let words = Vocab::from_tokens((0..9).map(|i| format!("w{i}")));
    let labels = Vocab::from_tokens((0..7).map(|i| format!("L{i}")));
    let config = SiameseConfig {
        lexical: tiny(words.len()),
        syntactic: tiny(labels.len()),
        ..SiameseConfig::desk(words.len(), labels.len(), 5)
    };
    let state = TrainState::<f64>::new(config, words, labels).unwrap();
    let items = [
        Item { words: vec![2, 5, 7], labels: vec![3, 4, 8, 2] },
        Item { words: vec![9, 1], labels: vec![6, 2, 5] },
    ];
    let pairs = [(0usize, 0usize, 1u8), (1, 0, 0)];
    let margin = 5.0;
    let (lexical, syntactic) = (state.lexical.clone(), state.syntactic.clone());
    let siamese_loss = |p: &ParamSet<f64>| -> f64 {
        let mut tape = Tape::new(p);
        let mut total = 0.0;
        for &(s, t, y) in &pairs {
            let a = lexical.encode(&mut tape, &items[s].words).unwrap();
            let b = syntactic.encode(&mut tape, &items[t].labels).unwrap();
            let (a, b) = (tape.value(a).data().to_vec(), tape.value(b).data().to_vec());
            total += contrastive_loss(&a, &b, y, margin).unwrap();
        }
        0.5 * total / pairs.len() as f64
    };
    let mut params = state.params.clone();
    let grads = {
        let mut tape = Tape::new(&params);
        let mut terms = Vec::new();
        for &(s, t, y) in &pairs {
            let a = lexical.encode(&mut tape, &items[s].words).unwrap();
            let b = syntactic.encode(&mut tape, &items[t].labels).unwrap();
            terms.push(contrastive_term(&mut tape, a, b, y, margin).unwrap().0);
        }
        let sum = tape.add(terms[0], terms[1]).unwrap();
        let loss = tape.scale(sum, 0.25).unwrap();
        tape.backward(loss).unwrap().into_params()
    };
    let siamese_ok = param_fd_agrees(&mut params, &grads, &siamese_loss);
    (ops, encoder_ok, siamese_ok)
}

// ---------------------------------------------------------------- 2

fn loss_identities() -> (bool, f64) {
    let v = [0.3, -0.2, 0.5];
    let tagged = contrastive_loss(&v, &v, 1, 1.0).unwrap() == 0.0
        && contrastive_loss(&[0.0, 0.0], &[1.2, 0.0], 0, 1.0).unwrap() == 0.0
        && (contrastive_loss::<f64>(&[0.0, 0.0], &[0.4, 0.0], 0, 1.0).unwrap() - 0.36).abs() <= 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let dim = rng.gen_range(1..8);
        let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y = rng.gen_range(0..2u8);
        let margin = rng.gen_range(0.01..4.0);
        let d = a.iter().zip(&b).map(|(x, z)| (x - z) * (x - z)).sum::<f64>().sqrt();
        let direct = if y == 1 { d * d } else { (margin - d).max(0.0).powi(2) };
        worst = worst.max((contrastive_loss(&a, &b, y, margin).unwrap() - direct).abs());
    }
    (tagged, worst)
}

// ---------------------------------------------------------------- 3

fn random_tree(rng: &mut ChaCha8Rng, depth: usize) -> ParseTree {
    const PHRASES: [&str; 6] = ["S", "NP", "VP", "PP", "SBAR", "ADJP"];
    const TAGS: [&str; 6] = ["DT", "NN", "VBZ", "IN", "JJ", "RB"];
    if depth == 0 || rng.gen_bool(0.3) {
        return ParseTree::leaf(TAGS[rng.gen_range(0..TAGS.len())], format!("w{}", rng.gen_range(0..50)));
    }
    let n = rng.gen_range(1..4);
    ParseTree::node(PHRASES[rng.gen_range(0..PHRASES.len())], (0..n).map(|_| random_tree(rng, depth - 1)).collect())
}

/// Labels in pre-order collected with an explicit stack, plus the number
/// of tree nodes and terminals, counted independently of the library.
fn brute_force(tree: &ParseTree) -> (Vec<String>, usize, usize) {
    let mut order = Vec::new();
    let (mut nodes, mut terminals) = (0, 0);
    let mut stack = vec![tree];
    while let Some(t) = stack.pop() {
        nodes += 1;
        match t {
            ParseTree::Word(_) => terminals += 1,
            ParseTree::Node { label, children } => {
                order.push(label.clone());
                stack.extend(children.iter().rev());
            }
        }
    }
    (order, nodes, terminals)
}

/// Every label's position precedes all positions in its subtree.
fn preorder_holds(tree: &ParseTree, next: &mut usize) -> Option<(usize, usize)> {
    match tree {
        ParseTree::Word(_) => None,
        ParseTree::Node { children, .. } => {
            let own = *next;
            *next += 1;
            let mut last = own;
            for c in children {
                if let Some((first, end)) = preorder_holds(c, next) {
                    if first <= own {
                        return Some((usize::MAX, usize::MAX));
                    }
                    last = end;
                }
            }
            Some((own, last))
        }
    }
}

fn linearization_oracle() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let vocab = Vocab::from_tokens(["S", "NP", "VP", "PP", "SBAR", "ADJP", "DT", "NN", "VBZ", "IN", "JJ", "RB"]);
    let mut failures = 0;
    for _ in 0..1000 {
        let tree = random_tree(&mut rng, 6);
        let labels: Vec<String> = linearize_labels(&tree).into_iter().map(str::to_string).collect();
        let (order, nodes, terminals) = brute_force(&tree);
        let ids = linearize(&tree, &vocab);
        let ok = labels == order
            && labels.len() == nodes - terminals
            && ids.len() == labels.len()
            && ids.labels.iter().zip(&labels).all(|(&i, l)| vocab.token(i) == Some(l.as_str()))
            && preorder_holds(&tree, &mut 0).is_some_and(|(first, _)| first == 0);
        failures += !ok as usize;
    }
    failures
}

// ---------------------------------------------------------------- 4–7

struct LossRow {
    median_batch_loss: f64,
    dev_loss: f64,
    dev_accuracy: f64,
}

fn loss_rows(path: &Path) -> Vec<LossRow> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            LossRow {
                median_batch_loss: f[2],
                dev_loss: f[4],
                dev_accuracy: f[5],
            }
        })
        .collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (norm(a) * norm(b))
}

/// Mean cosine over same-POS word pairs and over cross-POS pairs.
fn pos_cosines(table: &EmbeddingTable) -> (f64, f64) {
    let rows: Vec<(usize, &[f64])> = synth::pos_groups()
        .values()
        .enumerate()
        .flat_map(|(g, words)| words.iter().filter_map(move |w| table.get(w).map(|r| (g, r))))
        .collect();
    let (mut within, mut nw, mut across, mut na) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let c = cosine(rows[i].1, rows[j].1);
            if rows[i].0 == rows[j].0 {
                within += c;
                nw += 1;
            } else {
                across += c;
                na += 1;
            }
        }
    }
    (within / nw as f64, across / na as f64)
}

/// `(task, embeddings) → (accuracy, baseline)`.
fn probe_report(path: &Path) -> BTreeMap<(String, String), (f64, f64)> {
    let rows: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    rows.iter()
        .map(|r| {
            let key = (r["task"].as_str().unwrap().to_string(), r["embeddings"].as_str().unwrap().to_string());
            (key, (r["accuracy"].as_f64().unwrap(), r["baseline"].as_f64().unwrap()))
        })
        .collect()
}

fn attr_accuracies(path: &Path) -> Vec<f64> {
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    report["models"].as_array().unwrap().iter().map(|m| m["accuracy"].as_f64().unwrap()).collect()
}

struct SeedRun {
    seed: u64,
    dir: PathBuf,
}

fn main() {
    let mut outcome = Outcome { failed: Vec::new() };
    let root = tempfile::tempdir().unwrap();

    // 1
    let t = Instant::now();
    let (ops, encoder_ok, siamese_ok) = gradient_checks();
    let bad: Vec<&str> = ops.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let secs = t.elapsed().as_secs_f64();
    outcome.criterion(
        "1 gradient correctness",
        bad.is_empty() && encoder_ok && siamese_ok && secs < 60.0,
        format!(
            "{}/{} ops agree{}, encoder {}, siamese loss {} (rtol {RTOL:e}, atol {ATOL:e}, f64) in {secs:.1}s",
            ops.len() - bad.len(),
            ops.len(),
            if bad.is_empty() { String::new() } else { format!(" (failing: {})", bad.join(", ")) },
            if encoder_ok { "agrees" } else { "disagrees" },
            if siamese_ok { "agrees" } else { "disagrees" },
        ),
    );

    // 2
    let (tagged, worst) = loss_identities();
    outcome.criterion(
        "2 loss identities",
        tagged && worst <= 1e-12,
        format!("tagged cases 0/0/0.36 {}, max |Δ| over 1000 random triples {worst:.1e} (≤ 1e-12)", if tagged { "exact" } else { "wrong" }),
    );

    // 3
    let failures = linearization_oracle();
    outcome.criterion("3 linearization oracle", failures == 0, format!("{failures} of 1000 random trees violate pre-order or length identity"));

    // 4
    let t = Instant::now();
    let runs: Vec<SeedRun> = SEEDS
        .iter()
        .map(|&seed| {
            let dir = root.path().join(format!("seed{seed}"));
            fs::create_dir_all(&dir).unwrap();
            let s = seed.to_string();
            cli(&dir, &["--seed", &s, "synth", "--out", "data"]);
            cli(&dir, &["--seed", &s, "train", "--corpus", "data/corpus.jsonl", "--out", "train", "--epochs", "30", "--precision", "f32"]);
            SeedRun { seed, dir }
        })
        .collect();
    let mut converged = 0;
    let mut details = Vec::new();
    let mut monotone = 0;
    let mut monotone_details = Vec::new();
    for run in &runs {
        let rows = loss_rows(&run.dir.join("train/loss.csv"));
        let last = rows.last().unwrap();
        if rows.len() == 30 && last.dev_accuracy >= MIN_DEV_ACCURACY && last.dev_loss <= MAX_DEV_LOSS {
            converged += 1;
        }
        details.push(format!("seed {}: acc {:.4} loss {:.4}", run.seed, last.dev_accuracy, last.dev_loss));
        let first10: Vec<f64> = rows.iter().take(10).map(|r| r.median_batch_loss).collect();
        let violations = first10.windows(2).filter(|w| w[1] >= w[0]).count();
        monotone += (violations == 0) as usize;
        monotone_details.push(format!("seed {}: {violations} non-decreasing steps", run.seed));
    }
    outcome.criterion(
        "4 training convergence",
        converged == SEEDS.len(),
        format!(
            "{converged}/3 seeds reach dev acc ≥ {MIN_DEV_ACCURACY} and dev loss ≤ {MAX_DEV_LOSS} after 30 epochs [{}] in {:.0}s",
            details.join("; "),
            t.elapsed().as_secs_f64()
        ),
    );
    outcome.info(
        "median batch loss strictly decreasing over epochs 1–10 (3/3 seeds)",
        monotone == SEEDS.len(),
        format!("{monotone}/3 [{}]", monotone_details.join("; ")),
    );

    // 5
    let mut clustered = 0;
    let mut details = Vec::new();
    for run in &runs {
        cli(&run.dir, &["export-embeddings", "--checkpoint", "train/last.ssrl", "--out", "emb/structural.txt"]);
        let table = EmbeddingTable::load_text(run.dir.join("emb/structural.txt")).unwrap();
        let (within, across) = pos_cosines(&table);
        clustered += (within >= across + COSINE_GAP) as usize;
        details.push(format!("seed {}: within {within:.3} across {across:.3}", run.seed));
    }
    outcome.criterion(
        "5 structural clustering",
        clustered == SEEDS.len(),
        format!("{clustered}/3 seeds have within-POS cosine ≥ across + {COSINE_GAP} [{}]", details.join("; ")),
    );

    // 6
    let t = Instant::now();
    let (mut sentlen_ok, mut depth_ok, mut wc_chance_ok, mut wc_order_ok) = (0, 0, 0, 0);
    let (mut reverse_ok, mut details) = (0, Vec::new());
    let chance = 1.0 / WC_WORDS as f64;
    for run in &runs {
        let dim = EmbeddingTable::load_text(run.dir.join("emb/structural.txt")).unwrap().dim().to_string();
        let probe_seed = (run.seed + 1000).to_string();
        cli(&run.dir, &["--seed", &probe_seed, "synth", "--out", "probe_data", "--sentences", "6000", "--docs-per-author", "1", "--sentences-per-doc", "1"]);
        cli(&run.dir, &["--seed", &probe_seed, "probe-gen", "--corpus", "probe_data/corpus.jsonl", "--out", "tasks", "--wc-words", &WC_WORDS.to_string()]);
        cli(&run.dir, &["cooccur", "--corpus", "data/corpus.jsonl", "--out", "emb/cooccurrence.txt", "--dim", &dim]);
        cli(&run.dir, &["probe-eval", "--tasks", "tasks", "--embeddings", "emb/structural.txt", "--embeddings", "emb/cooccurrence.txt", "--out", "probe"]);
        let r = probe_report(&run.dir.join("probe/report.json"));
        let get = |task: &str, emb: &str| r[&(task.to_string(), emb.to_string())];
        let (sl, sl_base) = get("sentlen", "structural");
        let (td, td_base) = get("treedepth", "structural");
        let (wc, _) = get("wc", "structural");
        let (wc_co, _) = get("wc", "cooccurrence");
        sentlen_ok += (sl - sl_base >= SENTLEN_GAIN) as usize;
        depth_ok += (td - td_base >= TREEDEPTH_GAIN) as usize;
        wc_chance_ok += ((wc - chance).abs() <= WC_CHANCE_BAND) as usize;
        wc_order_ok += (wc_co > wc) as usize;
        reverse_ok += (sl > get("sentlen", "cooccurrence").0 && td > get("treedepth", "cooccurrence").0) as usize;
        details.push(format!(
            "seed {}: SentLen {sl:.3} (base {sl_base:.3}), TreeDepth {td:.3} (base {td_base:.3}), WC {wc:.3} vs co-occurrence {wc_co:.3}",
            run.seed
        ));
    }
    let all = SEEDS.len();
    outcome.criterion(
        "6 probing directionality",
        sentlen_ok == all && depth_ok == all && wc_chance_ok == all && wc_order_ok == all,
        format!(
            "SentLen +{SENTLEN_GAIN} {sentlen_ok}/3, TreeDepth +{TREEDEPTH_GAIN} {depth_ok}/3, WC within {WC_CHANCE_BAND} of chance {chance:.3} {wc_chance_ok}/3, \
             co-occurrence WC > structural WC {wc_order_ok}/3 [{}] in {:.0}s",
            details.join("; "),
            t.elapsed().as_secs_f64()
        ),
    );
    outcome.info("structural beats co-occurrence on SentLen and TreeDepth", reverse_ok == all, format!("{reverse_ok}/3 seeds"));

    // 7
    let (mut ordered, mut above, mut details) = (0, 0, Vec::new());
    let mut paired_secs = 0.0;
    let mut control = None;
    for run in &runs {
        let s = run.seed.to_string();
        let t = Instant::now();
        cli(&run.dir, &["cooccur", "--corpus", "data/corpus.jsonl", "--out", "emb/lexical.txt", "--dim", "32"]);
        let train = |out: &str, mode: &str, extra: &[&str]| {
            let mut args = vec!["--seed", &s, "attr-train", "--corpus", "data/authors.jsonl", "--out", out, "--mode", mode, "--patience", ATTR_PATIENCE];
            args.extend_from_slice(extra);
            cli(&run.dir, &args);
        };
        train("attr/lexical", "lexical", &["--lexical", "emb/lexical.txt"]);
        train("attr/concat", "structural+lexical", &["--structural", "emb/structural.txt", "--lexical", "emb/lexical.txt"]);
        let mut models = vec!["attr/lexical/model.ssrl", "attr/concat/model.ssrl"];
        paired_secs += t.elapsed().as_secs_f64();
        if run.seed == SEEDS[0] {
            train("attr/structural", "structural", &["--structural", "emb/structural.txt"]);
            train("attr/random", "structural", &["--structural", "emb/structural.txt", "--random-structural", "true"]);
            models.extend(["attr/structural/model.ssrl", "attr/random/model.ssrl"]);
        }
        let mut args = vec!["attr-eval", "--test", "attr/lexical/test.jsonl", "--out", "attr/eval"];
        for m in &models {
            args.extend(["--model", m]);
        }
        cli(&run.dir, &args);
        let acc = attr_accuracies(&run.dir.join("attr/eval/report.json"));
        ordered += (acc[1] >= acc[0]) as usize;
        above += (acc[1] >= ATTR_MIN_ACCURACY) as usize;
        details.push(format!("seed {}: lexical {:.3}, structural+lexical {:.3}", run.seed, acc[0], acc[1]));
        if acc.len() == 4 {
            control = Some((acc[2], acc[3]));
        }
    }
    outcome.criterion(
        "7 attribution ordering",
        ordered == all && above == all,
        format!(
            "structural+lexical ≥ lexical {ordered}/3, structural+lexical ≥ {ATTR_MIN_ACCURACY} {above}/3 [{}] in {paired_secs:.0}s",
            details.join("; "),
        ),
    );
    if let Some((trained, random)) = control {
        outcome.info("random structural table lowers accuracy (seed 1)", random < trained, format!("trained {trained:.3}, random {random:.3}"));
    }

    // 8
    // each repeat runs in its own directory with identical arguments, since reports record the paths they were given
    let dir = root.path().join("repro");
    for out in ["a", "b"] {
        let run = dir.join(out);
        fs::create_dir_all(&run).unwrap();
        cli(&run, &["--seed", "7", "synth", "--out", "data", "--sentences", "300", "--docs-per-author", "8", "--sentences-per-doc", "4"]);
        cli(&run, &["--seed", "7", "train", "--corpus", "data/corpus.jsonl", "--out", "train", "--epochs", "3", "--precision", "f64"]);
        cli(&run, &["export-embeddings", "--checkpoint", "train/last.ssrl", "--out", "structural.txt"]);
        cli(&run, &["--seed", "7", "probe-gen", "--corpus", "data/corpus.jsonl", "--out", "tasks", "--wc-words", "5"]);
        cli(&run, &["probe-eval", "--tasks", "tasks", "--embeddings", "structural.txt", "--out", "probe"]);
        cli(&run, &["--seed", "7", "attr-train", "--corpus", "data/authors.jsonl", "--out", "attr", "--mode", "structural", "--structural", "structural.txt", "--epochs", "2"]);
        cli(&run, &["attr-eval", "--model", "attr/model.ssrl", "--test", "attr/test.jsonl", "--out", "eval"]);
    }
    let same = |rel: &str| fs::read(dir.join("a").join(rel)).unwrap() == fs::read(dir.join("b").join(rel)).unwrap();
    let files = ["train/loss.csv", "train/last.ssrl", "structural.txt", "probe/report.txt", "probe/report.json", "attr/history.csv", "eval/report.txt", "eval/report.json"];
    let differing: Vec<&str> = files.iter().copied().filter(|f| !same(f)).collect();
    let state = TrainState::<f64>::load(dir.join("a/train/last.ssrl")).unwrap();
    state.save(dir.join("resaved.ssrl")).unwrap();
    let han = HanModel::load(dir.join("a/attr/model.ssrl")).unwrap();
    han.save(dir.join("resaved_han.ssrl")).unwrap();
    let round_trip = fs::read(dir.join("a/train/last.ssrl")).unwrap() == fs::read(dir.join("resaved.ssrl")).unwrap()
        && fs::read(dir.join("a/attr/model.ssrl")).unwrap() == fs::read(dir.join("resaved_han.ssrl")).unwrap();
    outcome.criterion(
        "8 reproducibility",
        differing.is_empty() && round_trip,
        format!(
            "{}/{} artifacts byte-identical across two f64 runs{}, checkpoint round trip {}",
            files.len() - differing.len(),
            files.len(),
            if differing.is_empty() { String::new() } else { format!(" (differ: {})", differing.join(", ")) },
            if round_trip { "bit-exact" } else { "differs" }
        ),
    );

    println!("{}/8 criteria pass", 8 - outcome.failed.len());
    if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") && !outcome.failed.is_empty() {
        eprintln!("failing criteria: {}", outcome.failed.join(", "));
        std::process::exit(1);
    }
}
