//! Bracketed constituency trees: parsing, label normalization and
//! depth-first linearization into structural label sequences.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::vocab::{Vocab, UNK_ID};

pub type LabelVocab = Vocab;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreebankError {
    #[error("unbalanced brackets at byte {0}")]
    UnbalancedBrackets(usize),
    #[error("empty constituent at byte {0}")]
    EmptyConstituent(usize),
    #[error("trailing input at byte {0}")]
    TrailingInput(usize),
    #[error("unexpected token at byte {0}")]
    UnexpectedToken(usize),
    #[error("empty label")]
    EmptyLabel,
    #[error("no trees in corpus")]
    EmptyCorpus,
}

/// Constituency tree. Words only occur as the single child of a
/// preterminal (POS) node.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ParseTree {
    Node { label: String, children: Vec<ParseTree> },
    Word(String),
}

impl ParseTree {
    /// Phrase node over `children`.
    pub fn node(label: impl Into<String>, children: Vec<ParseTree>) -> Self {
        ParseTree::Node {
            label: label.into(),
            children,
        }
    }

    /// Preterminal `(tag word)`.
    pub fn leaf(tag: impl Into<String>, word: impl Into<String>) -> Self {
        ParseTree::Node {
            label: tag.into(),
            children: vec![ParseTree::Word(word.into())],
        }
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            ParseTree::Node { label, .. } => Some(label),
            ParseTree::Word(_) => None,
        }
    }

    pub fn children(&self) -> &[ParseTree] {
        match self {
            ParseTree::Node { children, .. } => children,
            ParseTree::Word(_) => &[],
        }
    }

    pub fn is_preterminal(&self) -> bool {
        matches!(self.children(), [ParseTree::Word(_)])
    }

    /// Surface words, left to right.
    pub fn words(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_words(&mut out);
        out
    }

    fn collect_words<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            ParseTree::Word(w) => out.push(w),
            ParseTree::Node { children, .. } => children.iter().for_each(|c| c.collect_words(out)),
        }
    }

    /// `(tag, word)` pairs of the preterminals, left to right.
    pub fn tagged_words(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::new();
        self.collect_tagged(&mut out);
        out
    }

    fn collect_tagged<'a>(&'a self, out: &mut Vec<(&'a str, &'a str)>) {
        if let ParseTree::Node { label, children } = self {
            if let [ParseTree::Word(w)] = children.as_slice() {
                out.push((label, w));
            } else {
                children.iter().for_each(|c| c.collect_tagged(out));
            }
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().iter().map(ParseTree::node_count).sum::<usize>()
    }

    pub fn terminal_count(&self) -> usize {
        match self {
            ParseTree::Word(_) => 1,
            ParseTree::Node { children, .. } => children.iter().map(ParseTree::terminal_count).sum(),
        }
    }
}

/// Debug rendering in bracketed notation; `parse_bracketed` inverts it.
impl fmt::Display for ParseTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseTree::Word(w) => write!(f, "{w}"),
            ParseTree::Node { label, children } => {
                write!(f, "({label}")?;
                for c in children {
                    write!(f, " {c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Strips functional and index suffixes (`NP-SBJ-1` → `NP`, `S=2` → `S`).
/// Bracket-style labels such as `-LRB-` and `-NONE-` are kept verbatim.
pub fn normalize_label(raw: &str) -> Result<String, TreebankError> {
    if raw.is_empty() {
        return Err(TreebankError::EmptyLabel);
    }
    if raw.len() > 2 && raw.starts_with('-') && raw.ends_with('-') {
        return Ok(raw.to_string());
    }
    let cut = raw.char_indices().skip(1).find(|&(_, c)| matches!(c, '-' | '=' | '|')).map(|(i, _)| i);
    Ok(match cut {
        Some(i) => raw[..i].to_string(),
        None => raw.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn tokenize(text: &str) -> Vec<(usize, Tok<'_>)> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                out.push((i, Tok::Open));
                i += 1;
            }
            b')' => {
                out.push((i, Tok::Close));
                i += 1;
            }
            b if b.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len() && !matches!(bytes[i], b'(' | b')') && !bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                out.push((start, Tok::Atom(&text[start..i])));
            }
        }
    }
    out
}

struct Parser<'a> {
    toks: Vec<(usize, Tok<'a>)>,
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<(usize, Tok<'a>)> {
        self.toks.get(self.pos).copied()
    }

    /// Parses one bracketed constituent; the cursor is on its `(`.
    fn constituent(&mut self) -> Result<ParseTree, TreebankError> {
        let (open_at, _) = self.toks[self.pos];
        self.pos += 1;
        let label = match self.peek() {
            Some((_, Tok::Atom(a))) => {
                self.pos += 1;
                Some(normalize_label(a)?)
            }
            Some(_) => None,
            None => return Err(TreebankError::UnbalancedBrackets(self.end)),
        };

        let mut children = Vec::new();
        let mut word: Option<(usize, &str)> = None;
        loop {
            match self.peek() {
                None => return Err(TreebankError::UnbalancedBrackets(self.end)),
                Some((_, Tok::Close)) => {
                    self.pos += 1;
                    break;
                }
                Some((at, Tok::Open)) => {
                    if word.is_some() {
                        return Err(TreebankError::UnexpectedToken(at));
                    }
                    children.push(self.constituent()?);
                }
                Some((at, Tok::Atom(a))) => {
                    if word.is_some() || !children.is_empty() || label.is_none() {
                        return Err(TreebankError::UnexpectedToken(at));
                    }
                    word = Some((at, a));
                    self.pos += 1;
                }
            }
        }

        match (label, word) {
            (Some(label), Some((_, w))) => Ok(ParseTree::leaf(label, w)),
            (Some(label), None) if !children.is_empty() => Ok(ParseTree::Node { label, children }),
            // PTB files wrap sentences in an unlabeled bracket: `( (S ...) )`
            (None, None) if children.len() == 1 => Ok(children.pop().expect("one child")),
            (None, None) if children.len() > 1 => Ok(ParseTree::Node {
                label: "ROOT".to_string(),
                children,
            }),
            _ => Err(TreebankError::EmptyConstituent(open_at)),
        }
    }
}

/// Parses a single Penn-Treebank-style bracketed tree.
pub fn parse_bracketed(text: &str) -> Result<ParseTree, TreebankError> {
    let toks = tokenize(text);
    let mut parser = Parser {
        toks,
        pos: 0,
        end: text.len(),
    };
    match parser.peek() {
        Some((_, Tok::Open)) => {}
        Some((at, Tok::Close)) => return Err(TreebankError::UnbalancedBrackets(at)),
        Some((at, Tok::Atom(_))) => return Err(TreebankError::UnexpectedToken(at)),
        None => return Err(TreebankError::EmptyConstituent(0)),
    }
    let tree = parser.constituent()?;
    if let Some((at, tok)) = parser.peek() {
        return Err(match tok {
            Tok::Close => TreebankError::UnbalancedBrackets(at),
            _ => TreebankError::TrailingInput(at),
        });
    }
    Ok(tree)
}

/// Labels of all non-terminal nodes in pre-order (node before its
/// children, children left to right). Words are not emitted.
pub fn linearize_labels(tree: &ParseTree) -> Vec<&str> {
    let mut out = Vec::new();
    let mut stack = vec![tree];
    while let Some(node) = stack.pop() {
        if let ParseTree::Node { label, children } = node {
            out.push(label.as_str());
            stack.extend(children.iter().rev());
        }
    }
    out
}

/// Sequence of structural-label ids for one tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructuralSequence {
    pub labels: Vec<usize>,
}

impl StructuralSequence {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Pre-order linearization encoded with `vocab`; labels outside the vocab
/// map to the unknown id.
pub fn linearize(tree: &ParseTree, vocab: &LabelVocab) -> StructuralSequence {
    StructuralSequence {
        labels: linearize_labels(tree).into_iter().map(|l| vocab.get(l).unwrap_or(UNK_ID)).collect(),
    }
}

/// Number of edges on the longest root-to-word path.
pub fn tree_depth(tree: &ParseTree) -> usize {
    match tree {
        ParseTree::Word(_) => 0,
        ParseTree::Node { children, .. } => 1 + children.iter().map(tree_depth).max().unwrap_or(0),
    }
}

/// Labels of the root's immediate children.
pub fn top_constituents(tree: &ParseTree) -> Vec<&str> {
    tree.children().iter().filter_map(ParseTree::label).collect()
}

/// Counts normalized labels over a corpus of trees.
pub fn count_labels<'a, I>(trees: I) -> HashMap<String, usize>
where
    I: IntoIterator<Item = &'a ParseTree>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    for t in trees {
        for l in linearize_labels(t) {
            *counts.entry(l.to_string()).or_default() += 1;
        }
    }
    counts
}

/// Vocabulary of the `cap` most frequent labels (ties broken
/// lexicographically) plus the reserved padding and unknown ids.
pub fn build_label_vocab<'a, I>(trees: I, cap: usize) -> Result<LabelVocab, TreebankError>
where
    I: IntoIterator<Item = &'a ParseTree>,
{
    assert!(cap >= 1, "label vocabulary cap must be positive");
    let counts = count_labels(trees);
    if counts.is_empty() {
        return Err(TreebankError::EmptyCorpus);
    }
    Ok(Vocab::from_counts(&counts, Some(cap), 1))
}

/// Reads a "treebank-lines" corpus: one bracketed tree per line, blank
/// lines skipped. Errors carry the 1-based line number.
pub fn parse_lines(text: &str) -> Result<Vec<ParseTree>, (usize, TreebankError)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_bracketed(l).map_err(|e| (i + 1, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CAT: &str = "(S (NP (DT The) (NN cat)) (VP (VBZ sat)))";

    #[test]
    fn parses_simple_sentence() {
        let t = parse_bracketed(CAT).unwrap();
        assert_eq!(t.label(), Some("S"));
        assert_eq!(t.children().len(), 2);
        assert_eq!(t.words(), vec!["The", "cat", "sat"]);
    }

    #[test]
    fn whitespace_insensitive() {
        let t = parse_bracketed("  (S\n\t(NP (DT The)(NN cat))  (VP (VBZ sat) ) ) ").unwrap();
        assert_eq!(t, parse_bracketed(CAT).unwrap());
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(parse_bracketed("(S (NP (DT The)"), Err(TreebankError::UnbalancedBrackets(_))));
        assert!(matches!(parse_bracketed("(S (NN a)))"), Err(TreebankError::UnbalancedBrackets(10))));
        assert!(matches!(parse_bracketed("(S (NN a)) (S (NN b))"), Err(TreebankError::TrailingInput(11))));
        assert!(matches!(parse_bracketed("(S (NP))"), Err(TreebankError::EmptyConstituent(3))));
        assert!(matches!(parse_bracketed("()"), Err(TreebankError::EmptyConstituent(0))));
        assert!(matches!(parse_bracketed("(NP the (NN cat))"), Err(TreebankError::UnexpectedToken(_))));
        assert!(matches!(parse_bracketed(""), Err(TreebankError::EmptyConstituent(0))));
    }

    #[test]
    fn unlabeled_wrapper_is_unwrapped() {
        let t = parse_bracketed(&format!("( {CAT} )")).unwrap();
        assert_eq!(t.label(), Some("S"));
    }

    #[test]
    fn labels_are_normalized_on_parse() {
        let t = parse_bracketed("(NP-SBJ (NN dog))").unwrap();
        assert_eq!(t.label(), Some("NP"));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_label("NP-SBJ-1").unwrap(), "NP");
        assert_eq!(normalize_label("S").unwrap(), "S");
        assert_eq!(normalize_label("-LRB-").unwrap(), "-LRB-");
        assert_eq!(normalize_label("-NONE-").unwrap(), "-NONE-");
        assert_eq!(normalize_label("NP=2").unwrap(), "NP");
        assert_eq!(normalize_label("ADVP|PRT").unwrap(), "ADVP");
        assert_eq!(normalize_label(""), Err(TreebankError::EmptyLabel));
    }

    #[test]
    fn linearization_examples() {
        let t = parse_bracketed(CAT).unwrap();
        assert_eq!(linearize_labels(&t), vec!["S", "NP", "DT", "NN", "VP", "VBZ"]);
        assert_eq!(linearize_labels(&parse_bracketed("(NN dog)").unwrap()), vec!["NN"]);
        assert_eq!(linearize_labels(&parse_bracketed("(S (VP (VBZ sat)))").unwrap()), vec!["S", "VP", "VBZ"]);
    }

    #[test]
    fn depth_examples() {
        assert_eq!(tree_depth(&parse_bracketed("(NN dog)").unwrap()), 1);
        assert_eq!(tree_depth(&parse_bracketed(CAT).unwrap()), 3);
    }

    #[test]
    fn top_constituent_examples() {
        let t = parse_bracketed("(S (NP (NN cat)) (VP (VBD sat)) (. .))").unwrap();
        assert_eq!(top_constituents(&t), vec!["NP", "VP", "."]);
        assert!(top_constituents(&parse_bracketed("(NN dog)").unwrap()).is_empty());
    }

    #[test]
    fn vocab_cap_and_ties() {
        // S:10, NP:5, VP:5
        let mut trees = Vec::new();
        for _ in 0..5 {
            trees.push(ParseTree::node("S", vec![ParseTree::node("NP", vec![ParseTree::node("S", vec![ParseTree::Word("x".into())])])]));
            trees.push(ParseTree::node("S", vec![ParseTree::node("VP", vec![ParseTree::Word("y".into())])]));
        }
        let counts = count_labels(&trees);
        assert_eq!((counts["S"], counts["NP"], counts["VP"]), (15, 5, 5));
        let v = build_label_vocab(&trees, 2).unwrap();
        assert_eq!(v.tokens()[2..], ["S".to_string(), "NP".to_string()]);
        assert_eq!(v.id("VP"), UNK_ID);
        let all = build_label_vocab(&trees, 100).unwrap();
        assert_eq!(all.len(), 5);
        let seq = linearize(&trees[1], &v);
        assert_eq!(seq.labels, vec![2, UNK_ID]);
        assert_eq!(build_label_vocab(std::iter::empty(), 3), Err(TreebankError::EmptyCorpus));
    }

    #[test]
    fn parse_lines_skips_blanks() {
        let trees = parse_lines(&format!("{CAT}\n\n(NN dog)\n")).unwrap();
        assert_eq!(trees.len(), 2);
        assert_eq!(parse_lines("(NN dog)\n(S (NP").unwrap_err().0, 2);
    }

    pub(crate) fn arb_tree() -> impl Strategy<Value = ParseTree> {
        let tags = prop::sample::select(vec!["NN", "DT", "VBZ", "JJ", "IN"]);
        let phrases = prop::sample::select(vec!["S", "NP", "VP", "PP", "SBAR", "ADJP"]);
        let leaf = (tags, "[a-z]{1,5}").prop_map(|(t, w)| ParseTree::leaf(t, w));
        leaf.prop_recursive(5, 40, 4, move |inner| {
            (phrases.clone(), prop::collection::vec(inner, 1..4)).prop_map(|(l, c)| ParseTree::node(l, c))
        })
    }

    fn brute_nodes(t: &ParseTree) -> (usize, usize) {
        match t {
            ParseTree::Word(_) => (1, 1),
            ParseTree::Node { children, .. } => children.iter().map(brute_nodes).fold((1, 0), |(n, w), (cn, cw)| (n + cn, w + cw)),
        }
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(raw in "[A-Z=|-]{1,8}") {
            if let Ok(once) = normalize_label(&raw) {
                prop_assert_eq!(normalize_label(&once).unwrap(), once);
            }
        }

        #[test]
        fn render_then_parse_is_identity(t in arb_tree()) {
            prop_assert_eq!(parse_bracketed(&t.to_string()).unwrap(), t);
        }

        #[test]
        fn length_identity(t in arb_tree()) {
            let (nodes, words) = brute_nodes(&t);
            prop_assert_eq!(linearize_labels(&t).len(), nodes - words);
        }
    }
}
