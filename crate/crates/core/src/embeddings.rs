//! Word-vector tables: text I/O, bag-of-vectors sentence features, table
//! concatenation and a count-based co-occurrence baseline.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed line {0}")]
    MalformedLine(usize),
    #[error("line {0} has a different dimension")]
    InconsistentDim(usize),
    #[error("empty sentence")]
    EmptySentence,
    #[error("table has no rows")]
    EmptyTable,
    #[error("non-finite value for token {0}")]
    NonFinite(String),
}

/// Dense `count × dim` table with a token index.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            tokens: Vec::new(),
            index: HashMap::new(),
            dim,
            data: Vec::new(),
        }
    }

    /// Builds a table from row-major data. Duplicate tokens keep their first
    /// row.
    pub fn from_rows(tokens: Vec<String>, dim: usize, data: &[f64]) -> Result<Self, EmbeddingError> {
        assert_eq!(tokens.len() * dim, data.len(), "row data does not match token count");
        let mut t = EmbeddingTable::new(dim);
        for (tok, row) in tokens.into_iter().zip(data.chunks(dim.max(1))) {
            t.insert(tok, row)?;
        }
        Ok(t)
    }

    /// Adds a row unless the token is already present; returns whether it
    /// was added.
    pub fn insert(&mut self, token: String, row: &[f64]) -> Result<bool, EmbeddingError> {
        assert_eq!(row.len(), self.dim, "row dimension");
        if self.index.contains_key(&token) {
            return Ok(false);
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(token));
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.data.extend_from_slice(row);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.row(i))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Same tokens with every value replaced by `f(token, row)`.
    pub fn map_rows(&self, mut f: impl FnMut(&str, &[f64]) -> Vec<f64>) -> Result<Self, EmbeddingError> {
        let mut out = EmbeddingTable::new(0);
        for (i, t) in self.tokens.iter().enumerate() {
            let row = f(t, self.row(i));
            if i == 0 {
                out.dim = row.len();
            }
            out.insert(t.clone(), &row)?;
        }
        Ok(out)
    }

    /// `<count> <dim>` header, then one `<token> <v1> … <vdim>` line per
    /// row with 6 significant digits.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim)?;
        for (i, t) in self.tokens.iter().enumerate() {
            write!(w, "{t}")?;
            for &v in self.row(i) {
                write!(w, " {}", format_g6(v))?;
            }
            writeln!(w)?;
        }
        w.flush()
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        self.write_text(BufWriter::new(File::create(path)?))
    }

    /// Parses the text format; the header line is optional, in which case
    /// the dimension comes from the first row. Returns the table and the
    /// number of duplicate tokens that were skipped.
    pub fn read_text<R: BufRead>(reader: R) -> Result<(Self, usize), EmbeddingError> {
        let mut table: Option<EmbeddingTable> = None;
        let mut duplicates = 0;
        for (i, line) in reader.lines().enumerate() {
            let n = i + 1;
            let line = line?;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values: Vec<&str> = fields.collect();
            if n == 1 && values.len() == 1 && token.parse::<usize>().is_ok() {
                if let Ok(dim) = values[0].parse::<usize>() {
                    table = Some(EmbeddingTable::new(dim));
                    continue;
                }
            }
            if values.is_empty() {
                return Err(EmbeddingError::MalformedLine(n));
            }
            let row: Vec<f64> = values.iter().map(|v| v.parse::<f64>()).collect::<Result<_, _>>().map_err(|_| EmbeddingError::MalformedLine(n))?;
            let t = table.get_or_insert_with(|| EmbeddingTable::new(row.len()));
            if row.len() != t.dim {
                return Err(EmbeddingError::InconsistentDim(n));
            }
            if !t.insert(token.to_string(), &row).map_err(|_| EmbeddingError::MalformedLine(n))? {
                duplicates += 1;
            }
        }
        table.map(|t| (t, duplicates)).ok_or(EmbeddingError::EmptyTable)
    }

    pub fn load_text(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let (table, duplicates) = Self::read_text(BufReader::new(File::open(path.as_ref())?))?;
        if duplicates > 0 {
            log::warn!("{}: skipped {duplicates} duplicate tokens", path.as_ref().display());
        }
        Ok(table)
    }
}

/// `%g`-style rendering with 6 significant digits.
pub fn format_g6(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{mantissa}e{exp}");
    }
    let decimals = (5 - exp).max(0) as usize;
    let fixed = format!("{v:.decimals$}");
    if fixed.contains('.') {
        fixed.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        fixed
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OovPolicy {
    /// Out-of-vocabulary tokens are left out of the mean.
    Skip,
    /// Out-of-vocabulary tokens count as zero vectors.
    Zero,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bov {
    pub vector: Vec<f64>,
    /// No token was found in the table.
    pub all_oov: bool,
}

/// Mean of the token vectors.
pub fn bov<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable, policy: OovPolicy) -> Result<Bov, EmbeddingError> {
    if tokens.is_empty() {
        return Err(EmbeddingError::EmptySentence);
    }
    let mut sum = vec![0.0; table.dim()];
    let mut found = 0usize;
    for t in tokens {
        if let Some(row) = table.get(t.as_ref()) {
            sum.iter_mut().zip(row).for_each(|(s, &v)| *s += v);
            found += 1;
        }
    }
    let denom = match policy {
        OovPolicy::Skip => found,
        OovPolicy::Zero => tokens.len(),
    };
    if denom > 0 {
        let d = denom as f64;
        sum.iter_mut().for_each(|s| *s /= d);
    }
    Ok(Bov { vector: sum, all_oov: found == 0 })
}

/// Union of both vocabularies with rows `[a | b]`; a token missing from one
/// side gets zeros in that side's slice. `a`'s tokens come first.
pub fn concat_tables(a: &EmbeddingTable, b: &EmbeddingTable) -> EmbeddingTable {
    let dim = a.dim() + b.dim();
    let mut out = EmbeddingTable::new(dim);
    let zeros_a = vec![0.0; a.dim()];
    let zeros_b = vec![0.0; b.dim()];
    let mut row = Vec::with_capacity(dim);
    for t in a.tokens().iter().chain(b.tokens().iter().filter(|t| !a.contains(t))) {
        row.clear();
        row.extend_from_slice(a.get(t).unwrap_or(&zeros_a));
        row.extend_from_slice(b.get(t).unwrap_or(&zeros_b));
        out.insert(t.clone(), &row).expect("finite inputs");
    }
    out
}

/// Count-based lexical vectors: positive PMI over sentence-level
/// co-occurrence, reduced to `dim` with a truncated SVD (`U·√Σ`). Words with
/// fewer than `min_count` occurrences are dropped.
pub fn cooccurrence_embeddings<S: AsRef<str>>(sentences: &[Vec<S>], dim: usize, min_count: usize) -> EmbeddingTable {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in sentences {
        for t in s {
            *counts.entry(t.as_ref()).or_default() += 1;
        }
    }
    let mut vocab: Vec<&str> = counts.iter().filter(|(_, &c)| c >= min_count).map(|(&t, _)| t).collect();
    vocab.sort_unstable();
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let v = vocab.len();
    let mut co = DMatrix::<f64>::zeros(v, v);
    for s in sentences {
        let ids: Vec<usize> = s.iter().filter_map(|t| index.get(t.as_ref()).copied()).collect();
        for (i, &a) in ids.iter().enumerate() {
            for (j, &b) in ids.iter().enumerate() {
                if i != j {
                    co[(a, b)] += 1.0;
                }
            }
        }
    }
    let total: f64 = co.sum();
    let row_sums: Vec<f64> = (0..v).map(|i| co.row(i).sum()).collect();
    let mut ppmi = DMatrix::<f64>::zeros(v, v);
    if total > 0.0 {
        for i in 0..v {
            for j in 0..v {
                let c = co[(i, j)];
                if c > 0.0 {
                    let pmi = (c * total / (row_sums[i] * row_sums[j])).ln();
                    ppmi[(i, j)] = pmi.max(0.0);
                }
            }
        }
    }
    let k = dim.min(v);
    let svd = ppmi.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    // singular values are not sorted by nalgebra
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let mut data = Vec::with_capacity(v * dim);
    for i in 0..v {
        for c in 0..dim {
            if c < k {
                let col = order[c];
                let value = u[(i, col)] * svd.singular_values[col].sqrt();
                data.push(if value == 0.0 { 0.0 } else { value });
            } else {
                data.push(0.0);
            }
        }
    }
    EmbeddingTable::from_rows(vocab.into_iter().map(str::to_string).collect(), dim, &data).expect("finite SVD output")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(rows: &[(&str, &[f64])]) -> EmbeddingTable {
        let dim = rows[0].1.len();
        let mut t = EmbeddingTable::new(dim);
        for (tok, row) in rows {
            t.insert(tok.to_string(), row).unwrap();
        }
        t
    }

    fn close6(a: f64, b: f64) -> bool {
        (a - b).abs() <= 5e-6 * a.abs().max(b.abs()) + 1e-300
    }

    #[test]
    fn g6_formatting() {
        assert_eq!(format_g6(0.0), "0");
        assert_eq!(format_g6(1.0), "1");
        assert_eq!(format_g6(-0.5), "-0.5");
        assert_eq!(format_g6(0.123456789), "0.123457");
        assert_eq!(format_g6(123456.7), "123457");
        assert_eq!(format_g6(1234567.0), "1.23457e6");
        assert_eq!(format_g6(0.0000123456789), "1.23457e-5");
        assert_eq!(format_g6(999999.7), "1e6");
    }

    #[test]
    fn two_line_file() {
        let text = "2 3\nthe 0.1 0.2 0.3\ncat -1 0 2.5\n";
        let (t, dups) = EmbeddingTable::read_text(text.as_bytes()).unwrap();
        assert_eq!((t.len(), t.dim(), dups), (2, 3, 0));
        assert_eq!(t.get("cat").unwrap(), &[-1.0, 0.0, 2.5]);
    }

    #[test]
    fn headerless_duplicates_and_errors() {
        let (t, dups) = EmbeddingTable::read_text("a 1 2\nb 3 4\na 5 6\n".as_bytes()).unwrap();
        assert_eq!((t.len(), t.dim(), dups), (2, 2, 1));
        assert_eq!(t.get("a").unwrap(), &[1.0, 2.0]);
        assert!(matches!(EmbeddingTable::read_text("2 3\na 1 2 3\nb 1 2\n".as_bytes()), Err(EmbeddingError::InconsistentDim(3))));
        assert!(matches!(EmbeddingTable::read_text("a 1 x\n".as_bytes()), Err(EmbeddingError::MalformedLine(1))));
        assert!(matches!(EmbeddingTable::read_text("a\n".as_bytes()), Err(EmbeddingError::MalformedLine(1))));
        assert!(matches!(EmbeddingTable::read_text("".as_bytes()), Err(EmbeddingError::EmptyTable)));
    }

    #[test]
    fn bov_examples() {
        let t = table(&[("a", &[1.0, -2.0]), ("b", &[-1.0, 2.0]), ("c", &[3.0, 3.0])]);
        assert_eq!(bov(&["c"], &t, OovPolicy::Skip).unwrap().vector, vec![3.0, 3.0]);
        assert_eq!(bov(&["a", "b"], &t, OovPolicy::Skip).unwrap().vector, vec![0.0, 0.0]);
        assert_eq!(bov(&["c", "zz"], &t, OovPolicy::Skip).unwrap().vector, vec![3.0, 3.0]);
        assert_eq!(bov(&["c", "zz"], &t, OovPolicy::Zero).unwrap().vector, vec![1.5, 1.5]);
        let none = bov(&["zz"], &t, OovPolicy::Skip).unwrap();
        assert!(none.all_oov);
        assert_eq!(none.vector, vec![0.0, 0.0]);
        assert!(matches!(bov::<&str>(&[], &t, OovPolicy::Skip), Err(EmbeddingError::EmptySentence)));
    }

    #[test]
    fn concat_fill_rule() {
        let a = table(&[("x", &[1.0; 300]), ("y", &[2.0; 300])]);
        let b = table(&[("y", &[3.0; 100]), ("z", &[4.0; 100])]);
        let c = concat_tables(&a, &b);
        assert_eq!(c.dim(), 400);
        assert_eq!(c.tokens(), ["x", "y", "z"]);
        assert!(c.get("x").unwrap()[300..].iter().all(|&v| v == 0.0));
        assert!(c.get("z").unwrap()[..300].iter().all(|&v| v == 0.0));
        assert_eq!(&c.get("y").unwrap()[..300], a.get("y").unwrap());
        assert_eq!(&c.get("y").unwrap()[300..], b.get("y").unwrap());
    }

    #[test]
    fn cooccurrence_separates_topics() {
        let sents: Vec<Vec<&str>> = (0..40)
            .map(|i| if i % 2 == 0 { vec!["cat", "dog", "the", "bird"] } else { vec!["car", "road", "the", "train"] })
            .collect();
        let t = cooccurrence_embeddings(&sents, 4, 1);
        assert_eq!(t.len(), 7);
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        let (cat, dog, car) = (t.get("cat").unwrap(), t.get("dog").unwrap(), t.get("car").unwrap());
        assert!(cos(cat, dog) > cos(cat, car) + 0.5);
    }

    proptest! {
        #[test]
        fn text_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e4f64..1e4, 3), 1..10)) {
            let tokens: Vec<String> = (0..rows.len()).map(|i| format!("w{i}")).collect();
            let t = EmbeddingTable::from_rows(tokens, 3, &rows.concat()).unwrap();
            let mut buf = Vec::new();
            t.write_text(&mut buf).unwrap();
            let (back, _) = EmbeddingTable::read_text(&buf[..]).unwrap();
            prop_assert_eq!(back.tokens(), t.tokens());
            for i in 0..t.len() {
                for (a, b) in t.row(i).iter().zip(back.row(i)) {
                    prop_assert!(close6(*a, *b), "{} vs {}", a, b);
                }
            }
            // reloading is idempotent
            let mut buf2 = Vec::new();
            back.write_text(&mut buf2).unwrap();
            prop_assert_eq!(buf, buf2);
        }

        #[test]
        fn bov_matches_brute_force_and_is_permutation_invariant(
            rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..8),
            picks in prop::collection::vec(0usize..8, 1..12),
        ) {
            let tokens: Vec<String> = (0..rows.len()).map(|i| format!("w{i}")).collect();
            let t = EmbeddingTable::from_rows(tokens, 4, &rows.concat()).unwrap();
            let sentence: Vec<String> = picks.iter().map(|&p| format!("w{p}")).collect();
            let got = bov(&sentence, &t, OovPolicy::Skip).unwrap();
            let known: Vec<usize> = picks.iter().copied().filter(|&p| p < rows.len()).collect();
            for d in 0..4 {
                let expected = if known.is_empty() { 0.0 } else { known.iter().map(|&p| rows[p][d]).sum::<f64>() / known.len() as f64 };
                prop_assert!((got.vector[d] - expected).abs() <= 1e-6);
            }
            let mut reversed = sentence.clone();
            reversed.reverse();
            let back = bov(&reversed, &t, OovPolicy::Skip).unwrap();
            for (a, b) in got.vector.iter().zip(&back.vector) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn concat_slices_recover_sources(
            a_rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 1..5),
            b_rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..5),
        ) {
            let a = EmbeddingTable::from_rows((0..a_rows.len()).map(|i| format!("w{i}")).collect(), 2, &a_rows.concat()).unwrap();
            let b = EmbeddingTable::from_rows((0..b_rows.len()).map(|i| format!("w{}", i + 2)).collect(), 3, &b_rows.concat()).unwrap();
            let c = concat_tables(&a, &b);
            for t in c.tokens() {
                let row = c.get(t).unwrap();
                prop_assert_eq!(&row[..2], a.get(t).unwrap_or(&[0.0, 0.0]));
                prop_assert_eq!(&row[2..], b.get(t).unwrap_or(&[0.0, 0.0, 0.0]));
            }
        }
    }
}
