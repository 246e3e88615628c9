//! Official scoring measures: micro-F1 and macro-F1 over a confusion
//! matrix, plus per-class precision/recall/F1.
//!
//! Any ratio with a zero denominator is 0, so a class absent from both gold
//! and predictions contributes an F1 of 0 to the macro average.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{self, CorpusError, LabelVocab};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("gold has {gold} labels but predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("label {0:?} is not in the class list")]
    UnknownLabel(String),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("id sets differ: missing from predictions {missing:?}, not in gold {extra:?}")]
    IdMismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("id {0:?} appears more than once")]
    DuplicateId(String),
    #[error("cannot parse {path}: {source}")]
    ParseFailure {
        path: String,
        #[source]
        source: CorpusError,
    },
}

/// Rows are gold classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(labels: Vec<String>) -> Self {
        let n = labels.len();
        ConfusionMatrix { labels, counts: vec![vec![0; n]; n] }
    }

    /// Builds a matrix from explicit counts. Panics unless `counts` is square
    /// with one row per label.
    pub fn from_counts(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Self {
        assert_eq!(counts.len(), labels.len());
        assert!(counts.iter().all(|r| r.len() == labels.len()));
        ConfusionMatrix { labels, counts }
    }

    pub fn from_indices(gold: &[usize], pred: &[usize], labels: Vec<String>) -> Result<Self, MetricsError> {
        if gold.len() != pred.len() {
            return Err(MetricsError::LengthMismatch { gold: gold.len(), pred: pred.len() });
        }
        let mut m = ConfusionMatrix::zeros(labels);
        let n = m.labels.len();
        for (&g, &p) in gold.iter().zip(pred) {
            if g >= n || p >= n {
                return Err(MetricsError::UnknownLabel(format!("class index {}", g.max(p))));
            }
            m.counts[g][p] += 1;
        }
        Ok(m)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold][pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    fn false_positives(&self, c: usize) -> u64 {
        (0..self.labels.len()).filter(|&g| g != c).map(|g| self.counts[g][c]).sum()
    }

    fn false_negatives(&self, c: usize) -> u64 {
        (0..self.labels.len()).filter(|&p| p != c).map(|p| self.counts[c][p]).sum()
    }

    fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_of(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Counts occurrences of each gold/predicted pair.
pub fn confusion<G, P, L>(gold: &[G], pred: &[P], vocab: &[L]) -> Result<ConfusionMatrix, MetricsError>
where
    G: AsRef<str>,
    P: AsRef<str>,
    L: AsRef<str>,
{
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch { gold: gold.len(), pred: pred.len() });
    }
    let labels: Vec<String> = vocab.iter().map(|l| l.as_ref().to_string()).collect();
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, l)| (l.as_ref(), i)).collect();
    let lookup = |l: &str| index.get(l).copied().ok_or_else(|| MetricsError::UnknownLabel(l.to_string()));
    let mut m = ConfusionMatrix::zeros(labels);
    for (g, p) in gold.iter().zip(pred) {
        let (g, p) = (lookup(g.as_ref())?, lookup(p.as_ref())?);
        m.counts[g][p] += 1;
    }
    Ok(m)
}

/// Micro-averaged F1 from TP/FP/FN pooled over all classes. For
/// single-label data this equals accuracy.
pub fn micro_f1(matrix: &ConfusionMatrix) -> Result<f64, MetricsError> {
    if matrix.total() == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let classes = 0..matrix.labels.len();
    let tp: u64 = classes.clone().map(|c| matrix.true_positives(c)).sum();
    let fp: u64 = classes.clone().map(|c| matrix.false_positives(c)).sum();
    let fn_: u64 = classes.map(|c| matrix.false_negatives(c)).sum();
    Ok(f1_of(ratio(tp, tp + fp), ratio(tp, tp + fn_)))
}

/// Unweighted mean of per-class F1.
pub fn macro_f1(matrix: &ConfusionMatrix) -> Result<f64, MetricsError> {
    if matrix.total() == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let scores = per_class(matrix);
    Ok(scores.iter().map(|s| s.f1).sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

pub fn per_class(matrix: &ConfusionMatrix) -> Vec<ClassScores> {
    (0..matrix.labels.len())
        .map(|c| {
            let tp = matrix.true_positives(c);
            let precision = ratio(tp, tp + matrix.false_positives(c));
            let recall = ratio(tp, tp + matrix.false_negatives(c));
            ClassScores {
                label: matrix.labels[c].clone(),
                precision,
                recall,
                f1: f1_of(precision, recall),
                support: matrix.support(c),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
    pub matrix: ConfusionMatrix,
}

impl EvalResult {
    pub fn from_matrix(matrix: ConfusionMatrix) -> Result<Self, MetricsError> {
        Ok(EvalResult { micro_f1: micro_f1(&matrix)?, macro_f1: macro_f1(&matrix)?, per_class: per_class(&matrix), matrix })
    }

    pub fn from_indices(gold: &[usize], pred: &[usize], labels: Vec<String>) -> Result<Self, MetricsError> {
        Self::from_matrix(ConfusionMatrix::from_indices(gold, pred, labels)?)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.matrix.trace(), self.matrix.total())
    }

    /// Plain-text report: headline scores, per-class table, confusion matrix.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "micro_f1\t{:.6}", self.micro_f1);
        let _ = writeln!(out, "macro_f1\t{:.6}", self.macro_f1);
        let _ = writeln!(out, "samples\t{}", self.matrix.total());
        let _ = writeln!(out);
        let _ = writeln!(out, "class\tprecision\trecall\tf1\tsupport");
        for s in &self.per_class {
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}\t{:.6}\t{}", s.label, s.precision, s.recall, s.f1, s.support);
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "gold\\pred\t{}", self.matrix.labels.join("\t"));
        for (label, row) in self.matrix.labels.iter().zip(&self.matrix.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "{label}\t{}", cells.join("\t"));
        }
        out
    }
}

/// Scores a prediction file against a gold file, aligning rows by id.
///
/// Either file may be a two-column `id<TAB>label` file or line-delimited
/// JSON records; labels are resolved through `vocab`, so aliases such as
/// `true`/`false` are accepted.
pub fn score_files(gold_path: impl AsRef<Path>, pred_path: impl AsRef<Path>, vocab: &LabelVocab) -> Result<EvalResult, MetricsError> {
    let read = |p: &Path| {
        corpus::read_predictions(p).map_err(|source| MetricsError::ParseFailure { path: p.display().to_string(), source })
    };
    let gold = read(gold_path.as_ref())?;
    let pred = read(pred_path.as_ref())?;
    score_pairs(&gold, &pred, vocab)
}

pub fn score_pairs(gold: &[(String, String)], pred: &[(String, String)], vocab: &LabelVocab) -> Result<EvalResult, MetricsError> {
    let resolve = |l: &str| vocab.resolve(l).ok_or_else(|| MetricsError::UnknownLabel(l.to_string()));
    let mut predicted: HashMap<&str, usize> = HashMap::with_capacity(pred.len());
    for (id, label) in pred {
        if predicted.insert(id, resolve(label)?).is_some() {
            return Err(MetricsError::DuplicateId(id.clone()));
        }
    }
    let mut gold_ids = BTreeSet::new();
    for (id, _) in gold {
        if !gold_ids.insert(id.as_str()) {
            return Err(MetricsError::DuplicateId(id.clone()));
        }
    }
    let missing: Vec<String> = gold_ids.iter().filter(|id| !predicted.contains_key(*id)).map(|s| s.to_string()).collect();
    let mut extra: Vec<String> = predicted.keys().filter(|id| !gold_ids.contains(*id)).map(|s| s.to_string()).collect();
    if !missing.is_empty() || !extra.is_empty() {
        extra.sort();
        return Err(MetricsError::IdMismatch { missing, extra });
    }
    let mut g = Vec::with_capacity(gold.len());
    let mut p = Vec::with_capacity(gold.len());
    for (id, label) in gold {
        g.push(resolve(label)?);
        p.push(predicted[id.as_str()]);
    }
    EvalResult::from_indices(&g, &p, vocab.classes().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TaskId;
    use proptest::prelude::*;

    fn ab() -> Vec<&'static str> {
        vec!["a", "b"]
    }

    /// From first principles: walk the samples and count TP/FP/FN per class.
    fn oracle(gold: &[usize], pred: &[usize], classes: usize) -> (f64, f64) {
        let mut tp = vec![0u64; classes];
        let mut fp = vec![0u64; classes];
        let mut fn_ = vec![0u64; classes];
        for (&g, &p) in gold.iter().zip(pred) {
            if g == p {
                tp[g] += 1;
            } else {
                fp[p] += 1;
                fn_[g] += 1;
            }
        }
        let f1 = |t: u64, f: u64, n: u64| if 2 * t + f + n == 0 { 0.0 } else { (2 * t) as f64 / (2 * t + f + n) as f64 };
        let per: Vec<f64> = (0..classes).map(|c| f1(tp[c], fp[c], fn_[c])).collect();
        let micro = f1(tp.iter().sum(), fp.iter().sum(), fn_.iter().sum());
        (micro, per.iter().sum::<f64>() / classes as f64)
    }

    #[test]
    fn perfect_predictions() {
        let m = confusion(&["a", "b"], &["a", "b"], &ab()).unwrap();
        assert_eq!(m.counts(), &[vec![1, 0], vec![0, 1]]);
        assert_eq!(micro_f1(&m).unwrap(), 1.0);
        assert_eq!(macro_f1(&m).unwrap(), 1.0);
    }

    #[test]
    fn worked_matrix() {
        let gold = ["a", "a", "a", "a", "a", "b", "b", "b", "b", "b"];
        let pred = ["a", "a", "a", "b", "b", "a", "b", "b", "b", "b"];
        let m = confusion(&gold, &pred, &ab()).unwrap();
        assert_eq!(m.counts(), &[vec![3, 2], vec![1, 4]]);
        assert!((micro_f1(&m).unwrap() - 0.7).abs() < 1e-12);
        let per = per_class(&m);
        assert!((per[0].f1 - 6.0 / 9.0).abs() < 1e-12);
        assert!((per[1].f1 - 8.0 / 11.0).abs() < 1e-12);
        assert!((macro_f1(&m).unwrap() - 0.696970).abs() < 5e-7);
    }

    #[test]
    fn empty_inputs() {
        let m = confusion::<&str, &str, _>(&[], &[], &ab()).unwrap();
        assert_eq!(m.total(), 0);
        assert!(matches!(micro_f1(&m), Err(MetricsError::EmptyMatrix)));
        assert!(matches!(macro_f1(&m), Err(MetricsError::EmptyMatrix)));
    }

    #[test]
    fn confusion_errors() {
        assert!(matches!(confusion(&["a"], &["a", "b"], &ab()), Err(MetricsError::LengthMismatch { .. })));
        assert!(matches!(confusion(&["a"], &["c"], &ab()), Err(MetricsError::UnknownLabel(l)) if l == "c"));
    }

    #[test]
    fn macro_is_mean_of_class_f1() {
        // a: P = R = 4/5 so F1 = 0.8; b: P = 3/5, R = 3/5 so F1 = 0.6
        let m = ConfusionMatrix::from_counts(
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![4, 1, 0], vec![1, 3, 1], vec![0, 1, 0]],
        );
        let per = per_class(&m);
        assert!((per[0].f1 - 0.8).abs() < 1e-12);
        assert!((per[1].f1 - 0.6).abs() < 1e-12);
        assert!((macro_f1(&m).unwrap() - (0.8 + 0.6 + 0.0) / 3.0).abs() < 1e-12);
        let m = ConfusionMatrix::from_counts(
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![4, 1, 0], vec![2, 3, 0], vec![0, 0, 0]],
        );
        let per = per_class(&m);
        assert_eq!(per[2].f1, 0.0);
        let expected = (per[0].f1 + per[1].f1 + 0.0) / 3.0;
        assert_eq!(macro_f1(&m).unwrap(), expected);
    }

    #[test]
    fn score_pairs_checks_ids() {
        let vocab = TaskId::Persuasion1A.vocab();
        let gold = vec![("1".to_string(), "prop".to_string()), ("2".to_string(), "non-prop".to_string())];
        let pred = vec![("1".to_string(), "prop".to_string())];
        match score_pairs(&gold, &pred, &vocab) {
            Err(MetricsError::IdMismatch { missing, extra }) => {
                assert_eq!(missing, vec!["2".to_string()]);
                assert!(extra.is_empty());
            }
            other => panic!("{other:?}"),
        }
        let dup = vec![("1".to_string(), "prop".to_string()), ("1".to_string(), "prop".to_string())];
        assert!(matches!(score_pairs(&gold, &dup, &vocab), Err(MetricsError::DuplicateId(_))));
    }

    #[test]
    fn render_is_stable() {
        let r = EvalResult::from_indices(&[0, 0, 1], &[0, 1, 1], vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(r.render_text(), r.clone().render_text());
        assert!(r.render_text().starts_with("micro_f1\t0.666667\nmacro_f1\t0.666667\n"));
    }

    fn instance() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (1usize..=200).prop_flat_map(|n| (prop::collection::vec(0usize..2, n), prop::collection::vec(0usize..2, n)))
    }

    proptest! {
        #[test]
        fn matches_oracle((gold, pred) in instance()) {
            let r = EvalResult::from_indices(&gold, &pred, vec!["a".into(), "b".into()]).unwrap();
            let (micro, macro_) = oracle(&gold, &pred, 2);
            prop_assert!((r.micro_f1 - micro).abs() <= 1e-12);
            prop_assert!((r.macro_f1 - macro_).abs() <= 1e-12);
            let accuracy = gold.iter().zip(&pred).filter(|(g, p)| g == p).count() as f64 / gold.len() as f64;
            prop_assert!((r.micro_f1 - accuracy).abs() <= 1e-12);
        }

        #[test]
        fn invariant_under_permutation_and_class_order((gold, pred) in instance(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let labels = vec!["a".to_string(), "b".to_string()];
            let base = EvalResult::from_indices(&gold, &pred, labels.clone()).unwrap();
            let mut idx: Vec<usize> = (0..gold.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let g2: Vec<usize> = idx.iter().map(|&i| gold[i]).collect();
            let p2: Vec<usize> = idx.iter().map(|&i| pred[i]).collect();
            let shuffled = EvalResult::from_indices(&g2, &p2, labels).unwrap();
            prop_assert_eq!(&base, &shuffled);

            let flip = |v: &[usize]| v.iter().map(|&c| 1 - c).collect::<Vec<_>>();
            let swapped = EvalResult::from_indices(&flip(&gold), &flip(&pred), vec!["b".into(), "a".into()]).unwrap();
            prop_assert!((swapped.micro_f1 - base.micro_f1).abs() <= 1e-12);
            prop_assert!((swapped.macro_f1 - base.macro_f1).abs() <= 1e-12);
        }
    }
}
