//! Template-generated corpus with gold trees, used for desk-scale runs.
//!
//! Six clause templates are filled from a small lexicon whose words each
//! carry exactly one POS tag. Nouns and adjectives belong to topics, so
//! word co-occurrence reflects topic while structure reflects the template.
//! Synthetic authors differ only in how often they use each template.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Document, Sentence};
use crate::treebank::ParseTree;

const TOPIC_NOUNS: [[&str; 10]; 5] = [
    ["cat", "dog", "horse", "bird", "goat", "lion", "tiger", "rabbit", "snake", "frog"],
    ["car", "street", "tower", "bridge", "market", "train", "shop", "road", "garden", "station"],
    ["cook", "knife", "plate", "bowl", "spoon", "oven", "bottle", "cup", "apple", "onion"],
    ["teacher", "student", "book", "pencil", "lesson", "desk", "paper", "poem", "letter", "map"],
    ["boat", "sailor", "wave", "island", "ship", "anchor", "shell", "rock", "storm", "captain"],
];

const TOPIC_ADJECTIVES: [[&str; 6]; 5] = [
    ["wild", "brave", "gentle", "proud", "quick", "hungry"],
    ["busy", "noisy", "modern", "narrow", "crowded", "grey"],
    ["fresh", "sharp", "heavy", "empty", "warm", "sweet"],
    ["clever", "quiet", "careful", "young", "patient", "curious"],
    ["salty", "calm", "strange", "dark", "cold", "distant"],
];

const NAMES: [&str; 12] = ["Alice", "Bruno", "Chen", "Dara", "Emil", "Farah", "Gus", "Hana", "Ivo", "Jun", "Kai", "Lena"];
const TRANSITIVE: [&str; 20] = [
    "kick", "pull", "visit", "paint", "clean", "follow", "want", "help", "lift", "call", "greet", "hunt", "print", "fill", "mark", "pick", "guard",
    "lock", "load", "warn",
];
const INTRANSITIVE: [&str; 10] = ["jump", "walk", "laugh", "shout", "wait", "rest", "yell", "float", "bark", "melt"];
const ADVERBS: [&str; 10] = ["quickly", "slowly", "loudly", "softly", "early", "late", "again", "today", "badly", "happily"];
const DEGREE: [&str; 3] = ["very", "quite", "rather"];
const PREPOSITIONS: [&str; 8] = ["near", "under", "behind", "beside", "with", "without", "above", "across"];
const SUBORDINATORS: [&str; 5] = ["because", "although", "while", "when", "if"];
const CONJUNCTIONS: [&str; 3] = ["and", "but", "or"];
const DET_SINGULAR: [&str; 5] = ["the", "a", "this", "that", "every"];
const DET_PLURAL: [&str; 4] = ["the", "some", "these", "those"];

pub const NUM_TOPICS: usize = TOPIC_NOUNS.len();

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Template {
    /// NP VP
    Intransitive,
    /// NP V NP
    Transitive,
    /// S , CC S
    Coordination,
    /// SBAR , NP VP
    Fronted,
    /// copula-inverted yes/no question
    Question,
    /// NP copula predicate
    Copular,
}

pub const TEMPLATES: [Template; 6] = [
    Template::Intransitive,
    Template::Transitive,
    Template::Coordination,
    Template::Fronted,
    Template::Question,
    Template::Copular,
];

/// Template mixtures of the four synthetic authors.
pub const AUTHOR_MIXTURES: [[f64; 6]; 4] = [
    [0.40, 0.30, 0.10, 0.05, 0.05, 0.10],
    [0.10, 0.10, 0.40, 0.30, 0.05, 0.05],
    [0.05, 0.10, 0.05, 0.10, 0.40, 0.30],
    [0.10, 0.40, 0.05, 0.05, 0.10, 0.30],
];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Number {
    Singular,
    Plural,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Tense {
    Past,
    Present,
}

fn plural(noun: &str) -> String {
    format!("{noun}s")
}

fn past(verb: &str) -> String {
    if verb.ends_with('e') {
        format!("{verb}d")
    } else {
        format!("{verb}ed")
    }
}

fn word(tag: &str, w: impl Into<String>) -> ParseTree {
    ParseTree::leaf(tag, w)
}

/// Every word of the lexicon grouped by its (unique) POS tag.
pub fn pos_groups() -> BTreeMap<String, Vec<String>> {
    let mut g: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut put = |tag: &str, w: String| g.entry(tag.to_string()).or_default().push(w);
    for n in TOPIC_NOUNS.iter().flatten() {
        put("NN", n.to_string());
        put("NNS", plural(n));
    }
    NAMES.iter().for_each(|n| put("NNP", n.to_string()));
    TOPIC_ADJECTIVES.iter().flatten().for_each(|a| put("JJ", a.to_string()));
    for v in TRANSITIVE.iter().chain(&INTRANSITIVE) {
        put("VBD", past(v));
        put("VBZ", format!("{v}s"));
        put("VBP", v.to_string());
    }
    put("VBZ", "is".into());
    put("VBP", "are".into());
    put("VBD", "was".into());
    put("VBD", "were".into());
    ADVERBS.iter().chain(&DEGREE).for_each(|a| put("RB", a.to_string()));
    PREPOSITIONS.iter().chain(&SUBORDINATORS).for_each(|p| put("IN", p.to_string()));
    CONJUNCTIONS.iter().for_each(|c| put("CC", c.to_string()));
    let mut dets: Vec<&str> = DET_SINGULAR.iter().chain(&DET_PLURAL).copied().collect();
    dets.dedup();
    dets.sort_unstable();
    dets.dedup();
    dets.into_iter().for_each(|d| put("DT", d.to_string()));
    put(".", ".".into());
    put(".", "?".into());
    put(",", ",".into());
    g
}

/// Topic of a content word (nouns, plurals and adjectives), if any.
pub fn topic_of(w: &str) -> Option<usize> {
    (0..NUM_TOPICS).find(|&t| TOPIC_NOUNS[t].iter().any(|n| *n == w || plural(n) == w) || TOPIC_ADJECTIVES[t].contains(&w))
}

/// Sentence generator. Content words follow the current topic with
/// probability 0.8.
pub struct Generator {
    rng: ChaCha8Rng,
}

impl Generator {
    pub fn new(seed: u64) -> Self {
        Generator {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn pick<'a>(&mut self, items: &[&'a str]) -> &'a str {
        items.choose(&mut self.rng).copied().expect("non-empty word list")
    }

    fn chance(&mut self, p: f64) -> bool {
        self.rng.gen_bool(p)
    }

    fn topical(&mut self, topic: usize) -> usize {
        if self.chance(0.8) {
            topic
        } else {
            self.rng.gen_range(0..NUM_TOPICS)
        }
    }

    fn number(&mut self) -> Number {
        if self.chance(0.5) {
            Number::Singular
        } else {
            Number::Plural
        }
    }

    fn tense(&mut self) -> Tense {
        if self.chance(0.5) {
            Tense::Past
        } else {
            Tense::Present
        }
    }

    fn adjective(&mut self, topic: usize) -> ParseTree {
        let t = self.topical(topic);
        word("JJ", self.pick(&TOPIC_ADJECTIVES[t]))
    }

    /// Determiner, optional adjectives and a common noun of `number`.
    fn base_np(&mut self, topic: usize, number: Number) -> ParseTree {
        let det = match number {
            Number::Singular => self.pick(&DET_SINGULAR),
            Number::Plural => self.pick(&DET_PLURAL),
        };
        let mut children = vec![word("DT", det)];
        let adjectives = match self.rng.gen_range(0..10) {
            0..=5 => 0,
            6..=8 => 1,
            _ => 2,
        };
        for _ in 0..adjectives {
            children.push(self.adjective(topic));
        }
        let t = self.topical(topic);
        let noun = self.pick(&TOPIC_NOUNS[t]);
        children.push(match number {
            Number::Singular => word("NN", noun),
            Number::Plural => word("NNS", plural(noun)),
        });
        ParseTree::node("NP", children)
    }

    fn pp(&mut self, topic: usize, depth: usize) -> ParseTree {
        let prep = word("IN", self.pick(&PREPOSITIONS));
        let number = self.number();
        let (object, _) = self.np_of(topic, depth + 1, Some(number));
        ParseTree::node("PP", vec![prep, object])
    }

    fn np_of(&mut self, topic: usize, depth: usize, number: Option<Number>) -> (ParseTree, Number) {
        if number != Some(Number::Plural) && self.chance(0.15) {
            return (ParseTree::node("NP", vec![word("NNP", self.pick(&NAMES))]), Number::Singular);
        }
        let number = number.unwrap_or_else(|| self.number());
        let base = self.base_np(topic, number);
        let pp_chance = if depth == 0 { 0.3 } else { 0.15 };
        if depth < 3 && self.chance(pp_chance) {
            let pp = self.pp(topic, depth);
            (ParseTree::node("NP", vec![base, pp]), number)
        } else {
            (base, number)
        }
    }

    fn np(&mut self, topic: usize) -> (ParseTree, Number) {
        self.np_of(topic, 0, None)
    }

    fn verb(&mut self, root: &str, tense: Tense, number: Number) -> ParseTree {
        match (tense, number) {
            (Tense::Past, _) => word("VBD", past(root)),
            (Tense::Present, Number::Singular) => word("VBZ", format!("{root}s")),
            (Tense::Present, Number::Plural) => word("VBP", root),
        }
    }

    fn copula(&mut self, tense: Tense, number: Number) -> ParseTree {
        match (tense, number) {
            (Tense::Past, Number::Singular) => word("VBD", "was"),
            (Tense::Past, Number::Plural) => word("VBD", "were"),
            (Tense::Present, Number::Singular) => word("VBZ", "is"),
            (Tense::Present, Number::Plural) => word("VBP", "are"),
        }
    }

    fn modifiers(&mut self, topic: usize, children: &mut Vec<ParseTree>) {
        if self.chance(0.3) {
            children.push(ParseTree::node("ADVP", vec![word("RB", self.pick(&ADVERBS))]));
        } else if self.chance(0.2) {
            children.push(self.pp(topic, 1));
        }
    }

    fn intransitive_vp(&mut self, topic: usize, number: Number) -> ParseTree {
        let tense = self.tense();
        let root = self.pick(&INTRANSITIVE);
        let mut children = vec![self.verb(root, tense, number)];
        self.modifiers(topic, &mut children);
        ParseTree::node("VP", children)
    }

    fn transitive_vp(&mut self, topic: usize, number: Number) -> ParseTree {
        let tense = self.tense();
        let root = self.pick(&TRANSITIVE);
        let (object, _) = self.np(topic);
        let mut children = vec![self.verb(root, tense, number), object];
        if self.chance(0.3) {
            children.push(ParseTree::node("ADVP", vec![word("RB", self.pick(&ADVERBS))]));
        }
        ParseTree::node("VP", children)
    }

    fn adjp(&mut self, topic: usize) -> ParseTree {
        let mut children = Vec::new();
        if self.chance(0.3) {
            children.push(word("RB", self.pick(&DEGREE)));
        }
        children.push(self.adjective(topic));
        ParseTree::node("ADJP", children)
    }

    fn copular_vp(&mut self, topic: usize, number: Number) -> ParseTree {
        let tense = self.tense();
        let cop = self.copula(tense, number);
        let predicate = if self.chance(0.7) { self.adjp(topic) } else { self.base_np(topic, number) };
        ParseTree::node("VP", vec![cop, predicate])
    }

    /// Simple clause `(S NP VP)` with an intransitive or transitive verb.
    fn clause(&mut self, topic: usize) -> ParseTree {
        let (subject, number) = self.np(topic);
        let vp = if self.chance(0.5) {
            self.intransitive_vp(topic, number)
        } else {
            self.transitive_vp(topic, number)
        };
        ParseTree::node("S", vec![subject, vp])
    }

    pub fn sentence(&mut self, template: Template, topic: usize) -> Sentence {
        let period = || word(".", ".");
        let tree = match template {
            Template::Intransitive => {
                let (subject, number) = self.np(topic);
                let vp = self.intransitive_vp(topic, number);
                ParseTree::node("S", vec![subject, vp, period()])
            }
            Template::Transitive => {
                let (subject, number) = self.np(topic);
                let vp = self.transitive_vp(topic, number);
                ParseTree::node("S", vec![subject, vp, period()])
            }
            Template::Coordination => {
                let left = self.clause(topic);
                let cc = word("CC", self.pick(&CONJUNCTIONS));
                let right = self.clause(topic);
                ParseTree::node("S", vec![left, word(",", ","), cc, right, period()])
            }
            Template::Fronted => {
                let sub = word("IN", self.pick(&SUBORDINATORS));
                let inner = self.clause(topic);
                let sbar = ParseTree::node("SBAR", vec![sub, inner]);
                let (subject, number) = self.np(topic);
                let vp = if self.chance(0.5) {
                    self.intransitive_vp(topic, number)
                } else {
                    self.transitive_vp(topic, number)
                };
                ParseTree::node("S", vec![sbar, word(",", ","), subject, vp, period()])
            }
            Template::Question => {
                let (subject, number) = self.np(topic);
                let tense = self.tense();
                let cop = self.copula(tense, number);
                let predicate = if self.chance(0.7) { self.adjp(topic) } else { self.pp(topic, 1) };
                ParseTree::node("SQ", vec![cop, subject, predicate, word(".", "?")])
            }
            Template::Copular => {
                let (subject, number) = self.np(topic);
                let vp = self.copular_vp(topic, number);
                ParseTree::node("S", vec![subject, vp, period()])
            }
        };
        Sentence::from_tree(tree)
    }

    /// A sentence with a uniformly chosen template and topic.
    pub fn random_sentence(&mut self) -> (Template, Sentence) {
        let template = TEMPLATES[self.rng.gen_range(0..TEMPLATES.len())];
        let topic = self.rng.gen_range(0..NUM_TOPICS);
        (template, self.sentence(template, topic))
    }
}

/// `n` sentences with uniform templates and topics.
pub fn corpus(n: usize, seed: u64) -> Vec<Sentence> {
    let mut generator = Generator::new(seed);
    (0..n).map(|_| generator.random_sentence().1).collect()
}

/// Author-labelled documents: each document has one topic, and each
/// sentence's template is drawn from the author's mixture.
pub fn attribution_corpus(docs_per_author: usize, sentences_per_doc: usize, seed: u64) -> Vec<Document> {
    let mut generator = Generator::new(seed);
    let mixtures: Vec<WeightedIndex<f64>> = AUTHOR_MIXTURES.iter().map(|m| WeightedIndex::new(m).expect("valid mixture")).collect();
    let mut docs = Vec::new();
    for _ in 0..docs_per_author {
        for (a, mixture) in mixtures.iter().enumerate() {
            let topic = generator.rng.gen_range(0..NUM_TOPICS);
            let sentences = (0..sentences_per_doc)
                .map(|_| {
                    let template = TEMPLATES[mixture.sample(&mut generator.rng)];
                    generator.sentence(template, topic).tokens
                })
                .collect();
            docs.push(Document {
                author: format!("author{a}"),
                sentences,
            });
        }
    }
    docs
}
