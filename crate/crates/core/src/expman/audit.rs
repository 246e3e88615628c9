//! Class-distribution audit of task splits against the published counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;

use super::reference::{printed_totals, row_sums, split_counts, SPLIT_COUNTS};
use super::ExpmanError;
use crate::corpus::synthetic::counted_split;
use crate::corpus::{class_distribution, genre_distribution, load_split, ClassDistribution, DatasetSplit, Genre, SplitName, TaskId};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitAudit {
    pub split: SplitName,
    pub observed: ClassDistribution,
    pub expected: [u64; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    /// Split name, or `total`.
    pub scope: String,
    pub label: String,
    pub expected: u64,
    pub observed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub task_id: TaskId,
    pub splits: Vec<SplitAudit>,
    /// Present only when train, dev and test were all audited.
    pub total: Option<ClassDistribution>,
    pub divergences: Vec<Divergence>,
    /// Internal inconsistencies of the published counts themselves.
    pub reference_notes: Vec<String>,
    pub genres: Option<BTreeMap<Genre, f64>>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.divergences.is_empty()
    }

    pub fn render(&self) -> String {
        let vocab = self.task_id.vocab();
        let (a, b) = (vocab.name(0), vocab.name(1));
        let mut out = format!("task {}\nscope\t{a}\t{b}\t{a}%\t{b}%\texpected\tstatus\n", self.task_id);
        let mut line = |scope: &str, d: &ClassDistribution, expected: [u64; 2]| {
            let counts = [d.count(a).unwrap_or(0), d.count(b).unwrap_or(0)];
            let pct = |i: usize| 100.0 * d.ratio(vocab.name(i)).unwrap_or(0.0);
            let status = if counts == expected { "ok" } else { "DIVERGES" };
            let _ = writeln!(out, "{scope}\t{}\t{}\t{:.1}\t{:.1}\t{}/{}\t{status}", counts[0], counts[1], pct(0), pct(1), expected[0], expected[1]);
        };
        for s in &self.splits {
            line(s.split.as_str(), &s.observed, s.expected);
        }
        if let Some(total) = &self.total {
            line("total", total, printed_totals(self.task_id));
        }
        for d in &self.divergences {
            let _ = writeln!(out, "divergence: {} {} expected {} observed {}", d.scope, d.label, d.expected, d.observed);
        }
        if let Some(genres) = &self.genres {
            let parts: Vec<String> = genres.iter().map(|(g, f)| format!("{g:?} {:.1}%", 100.0 * f).to_lowercase()).collect();
            let _ = writeln!(out, "genres: {}", parts.join(", "));
        }
        for n in &self.reference_notes {
            let _ = writeln!(out, "reference note: {n}");
        }
        let _ = writeln!(out, "{}", if self.passed() { "PASS" } else { "FAIL" });
        out
    }
}

/// Inconsistencies within the published distribution: printed totals that
/// differ from their row sums and printed percentages that differ from the
/// counts by more than 0.1 points.
pub fn reference_notes(task_id: TaskId) -> Vec<String> {
    let vocab = task_id.vocab();
    let mut notes = Vec::new();
    let sums = row_sums(task_id);
    let printed = printed_totals(task_id);
    for i in 0..2 {
        if sums[i] != printed[i] {
            notes.push(format!("{task_id} {} split rows sum to {}, printed total is {}", vocab.name(i), sums[i], printed[i]));
        }
    }
    for row in SPLIT_COUNTS.iter().filter(|r| r.task_id == task_id) {
        let n = (row.counts[0] + row.counts[1]) as f64;
        for i in 0..2 {
            let actual = 100.0 * row.counts[i] as f64 / n;
            if (actual - row.printed_percent[i]).abs() > 0.1 {
                notes.push(format!(
                    "{task_id} {} {} printed as {}%, counts give {actual:.1}%",
                    row.split,
                    vocab.name(i),
                    row.printed_percent[i]
                ));
            }
        }
    }
    notes
}

/// Audits already-loaded splits. Totals are checked against the printed
/// total row only when all three splits are present.
pub fn audit_splits(task_id: TaskId, splits: &[DatasetSplit]) -> Result<AuditReport, ExpmanError> {
    let vocab = task_id.vocab();
    let mut audits = Vec::new();
    let mut divergences = Vec::new();
    let mut total: Option<ClassDistribution> = None;
    let mut genre_counts: BTreeMap<Genre, f64> = BTreeMap::new();
    let mut genre_weight = 0.0;
    for split in splits {
        let observed = class_distribution(split)?;
        let expected = split_counts(task_id, split.split_name()).expect("every split has published counts").counts;
        for (i, &want) in expected.iter().enumerate() {
            let got = observed.count(vocab.name(i)).unwrap_or(0);
            if got != want {
                divergences.push(Divergence { scope: split.split_name().to_string(), label: vocab.name(i).into(), expected: want, observed: got });
            }
        }
        if let Ok(g) = genre_distribution(split) {
            let annotated = split.samples().iter().filter(|s| s.genre.is_some()).count() as f64;
            for (genre, f) in g {
                *genre_counts.entry(genre).or_default() += f * annotated;
            }
            genre_weight += annotated;
        }
        total = Some(match total {
            None => observed.clone(),
            Some(t) => t.merged(&observed),
        });
        audits.push(SplitAudit { split: split.split_name(), observed, expected });
    }
    let complete = SplitName::ALL.iter().all(|n| splits.iter().any(|s| s.split_name() == *n));
    let total = if complete { total } else { None };
    if let Some(t) = &total {
        let printed = printed_totals(task_id);
        for (i, &want) in printed.iter().enumerate() {
            let got = t.count(vocab.name(i)).unwrap_or(0);
            if got != want {
                divergences.push(Divergence { scope: "total".into(), label: vocab.name(i).into(), expected: want, observed: got });
            }
        }
    }
    let genres = (genre_weight > 0.0).then(|| genre_counts.into_iter().map(|(g, c)| (g, c / genre_weight)).collect());
    Ok(AuditReport { task_id, splits: audits, total, divergences, reference_notes: reference_notes(task_id), genres })
}

pub fn audit_dataset(task_id: TaskId, split_paths: &[(SplitName, PathBuf)]) -> Result<AuditReport, ExpmanError> {
    let splits = split_paths.iter().map(|(name, path)| load_split(path, task_id, *name)).collect::<Result<Vec<_>, _>>()?;
    audit_splits(task_id, &splits)
}

/// Synthetic splits carrying exactly the published per-split counts.
pub fn reference_fixture(task_id: TaskId) -> Vec<DatasetSplit> {
    SplitName::ALL.iter().map(|&s| counted_split(task_id, s, &split_counts(task_id, s).expect("published").counts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_splits_match_rows_but_not_printed_totals() {
        let r = audit_splits(TaskId::Disinfo2A, &reference_fixture(TaskId::Disinfo2A)).unwrap();
        assert!(r.splits.iter().all(|s| s.observed.counts().iter().map(|c| c.1).collect::<Vec<_>>() == s.expected));
        assert_eq!(r.divergences, vec![Divergence { scope: "total".into(), label: "no-disinfo".into(), expected: 15062, observed: 16062 }]);
        assert_eq!(r.total.as_ref().unwrap().count("disinfo"), Some(3929));
        assert!(!r.passed());
        let r = audit_splits(TaskId::Persuasion1A, &reference_fixture(TaskId::Persuasion1A)).unwrap();
        assert_eq!(r.divergences.len(), 1);
        assert_eq!(r.divergences[0].observed, 738);
    }

    #[test]
    fn truncated_split_flagged() {
        let mut splits = reference_fixture(TaskId::Persuasion1A);
        splits[1] = counted_split(TaskId::Persuasion1A, SplitName::Dev, &[200, 57]);
        let r = audit_splits(TaskId::Persuasion1A, &splits[..2]).unwrap();
        assert!(r.total.is_none());
        assert_eq!(r.divergences, vec![Divergence { scope: "dev".into(), label: "prop".into(), expected: 202, observed: 200 }]);
        assert!(r.render().contains("dev\t200\t57"));
        assert!(r.render().ends_with("FAIL\n"));
    }

    #[test]
    fn single_matching_split_passes() {
        let splits = reference_fixture(TaskId::Persuasion1A);
        let r = audit_splits(TaskId::Persuasion1A, &splits[..1]).unwrap();
        assert!(r.passed());
        assert!(r.render().contains("train\t1918\t509\t79.0\t21.0\t1918/509\tok"));
    }

    #[test]
    fn notes_describe_reference_inconsistencies() {
        let notes = reference_notes(TaskId::Disinfo2A);
        assert!(notes.iter().any(|n| n.contains("16062") && n.contains("15062")));
        assert!(notes.iter().any(|n| n.contains("train disinfo printed as 19.8%, counts give 18.8%")));
        let notes = reference_notes(TaskId::Persuasion1A);
        assert_eq!(notes, vec!["1A non-prop split rows sum to 738, printed total is 733".to_string()]);
    }

    #[test]
    fn file_audit_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let split = counted_split(TaskId::Persuasion1A, SplitName::Test, &[331, 172]);
        let path = dir.path().join("test.jsonl");
        crate::corpus::write_split(&split, &path).unwrap();
        let r = audit_dataset(TaskId::Persuasion1A, &[(SplitName::Test, path)]).unwrap();
        assert!(r.passed());
    }
}
