//! Multi-label macro-F1 and per-language result matrices.

use crate::adapter::AdapterStack;
use crate::data::{tokenize, LabeledExample, Vocab};
use crate::error::{Error, Result};
use crate::model::EncoderModel;
use crate::train::{predict, REGIME_COLUMN_ORDER};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

/// Per-label confusion counts over one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `2tp / (2tp + fp + fn)`, or the zero-division convention value when
    /// the denominator vanishes.
    pub fn f1(&self, zero_division_one: bool) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            if zero_division_one {
                1.0
            } else {
                0.0
            }
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct F1Options {
    /// Score a label with no gold and no predicted positives as 1.0 instead
    /// of 0.0. Off by default.
    pub zero_division_one: bool,
}

pub fn confusion_counts(pred: &[Vec<bool>], gold: &[Vec<bool>]) -> Result<Vec<ConfusionCounts>> {
    if pred.len() != gold.len() {
        return Err(Error::ShapeMismatch {
            op: "macro_f1",
            lhs: vec![pred.len()],
            rhs: vec![gold.len()],
        });
    }
    if pred.is_empty() {
        return Err(Error::invalid("macro_f1 over zero examples"));
    }
    let n_labels = gold[0].len();
    if n_labels == 0 {
        return Err(Error::invalid("macro_f1 over zero labels"));
    }
    let mut counts = vec![ConfusionCounts::default(); n_labels];
    for (p_row, g_row) in pred.iter().zip(gold.iter()) {
        if p_row.len() != n_labels || g_row.len() != n_labels {
            return Err(Error::ShapeMismatch {
                op: "macro_f1",
                lhs: vec![pred.len(), p_row.len()],
                rhs: vec![gold.len(), n_labels],
            });
        }
        for (l, (&p, &g)) in p_row.iter().zip(g_row.iter()).enumerate() {
            match (p, g) {
                (true, true) => counts[l].tp += 1,
                (true, false) => counts[l].fp += 1,
                (false, true) => counts[l].fn_ += 1,
                (false, false) => counts[l].tn += 1,
            }
        }
    }
    Ok(counts)
}

/// Unweighted mean of per-label F1 over binary prediction/gold matrices.
pub fn macro_f1(pred: &[Vec<bool>], gold: &[Vec<bool>]) -> Result<(f64, Vec<f64>)> {
    macro_f1_with(pred, gold, F1Options::default())
}

pub fn macro_f1_with(
    pred: &[Vec<bool>],
    gold: &[Vec<bool>],
    options: F1Options,
) -> Result<(f64, Vec<f64>)> {
    let counts = confusion_counts(pred, gold)?;
    let per_label: Vec<f64> = counts.iter().map(|c| c.f1(options.zero_division_one)).collect();
    let macro_f1 = per_label.iter().sum::<f64>() / per_label.len() as f64;
    Ok((macro_f1, per_label))
}

/// Micro-F1 over pooled counts, for comparison runs.
pub fn micro_f1(pred: &[Vec<bool>], gold: &[Vec<bool>]) -> Result<f64> {
    let counts = confusion_counts(pred, gold)?;
    let pooled = counts.iter().fold(ConfusionCounts::default(), |acc, c| ConfusionCounts {
        tp: acc.tp + c.tp,
        fp: acc.fp + c.fp,
        fn_: acc.fn_ + c.fn_,
        tn: acc.tn + c.tn,
    });
    Ok(pooled.f1(false))
}

/// One evaluated (language, regime) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub language: String,
    pub regime: String,
    pub macro_f1: f64,
    pub per_label_f1: BTreeMap<String, f64>,
    pub n_examples: usize,
}

/// Run prediction over a labeled dataset and score it.
pub fn evaluate(
    model: &EncoderModel,
    stack: &AdapterStack,
    dataset: &[LabeledExample],
    vocab: &Vocab,
    threshold: f64,
    language: &str,
    regime: &str,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::data(format!("empty evaluation dataset for `{language}`")));
    }
    let seqs: Vec<Vec<usize>> = dataset
        .iter()
        .map(|ex| tokenize(&ex.text, vocab, model.config.max_seq_len))
        .collect();
    let pred = predict(model, stack, &seqs, threshold, 16)?;
    let gold: Vec<Vec<bool>> = dataset.iter().map(|ex| ex.labels.clone()).collect();
    let (macro_score, per_label) = macro_f1(&pred, &gold)?;
    let per_label_f1 = model
        .label_space
        .names()
        .iter()
        .cloned()
        .zip(per_label)
        .collect();
    Ok(EvalReport {
        language: language.to_string(),
        regime: regime.to_string(),
        macro_f1: macro_score,
        per_label_f1,
        n_examples: dataset.len(),
    })
}

/// A rendered language-by-regime matrix; plain text plus CSV.
#[derive(Debug, Clone)]
pub struct ResultsTable {
    pub text: String,
    pub csv: String,
}

fn regime_column_rank(name: &str) -> (usize, &str) {
    match REGIME_COLUMN_ORDER.iter().position(|r| *r == name) {
        Some(i) => (i, name),
        None => (REGIME_COLUMN_ORDER.len(), name),
    }
}

/// Rows are languages (sorted by tag), columns regimes, cells macro-F1 to
/// four decimals with the best cell per row flagged; absent cells render
/// "n/a".
pub fn results_table(reports: &[EvalReport]) -> Result<ResultsTable> {
    let mut cells: BTreeMap<(String, String), f64> = BTreeMap::new();
    for r in reports {
        if cells.insert((r.language.clone(), r.regime.clone()), r.macro_f1).is_some() {
            return Err(Error::invalid(format!(
                "duplicate report for language `{}`, regime `{}`",
                r.language, r.regime
            )));
        }
    }
    let languages: BTreeSet<String> = reports.iter().map(|r| r.language.clone()).collect();
    let mut regimes: Vec<String> =
        reports.iter().map(|r| r.regime.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    regimes.sort_by(|a, b| regime_column_rank(a).cmp(&regime_column_rank(b)));

    let mut rows: Vec<(String, Vec<Option<f64>>)> = Vec::new();
    for lang in &languages {
        let row: Vec<Option<f64>> = regimes
            .iter()
            .map(|reg| cells.get(&(lang.clone(), reg.clone())).copied())
            .collect();
        rows.push((lang.clone(), row));
    }

    // text table
    let lang_width = languages.iter().map(|l| l.len()).max().unwrap_or(8).max(8);
    let col_widths: Vec<usize> = regimes.iter().map(|r| r.len().max(7) + 1).collect();
    let mut text = String::new();
    let _ = write!(text, "{:<lang_width$}", "language");
    for (reg, w) in regimes.iter().zip(&col_widths) {
        let _ = write!(text, " {reg:>w$}");
    }
    text.push('\n');
    for (lang, row) in &rows {
        let best = row
            .iter()
            .flatten()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let _ = write!(text, "{lang:<lang_width$}");
        for (cell, w) in row.iter().zip(&col_widths) {
            let rendered = match cell {
                Some(v) if *v == best => format!("{v:.4}*"),
                Some(v) => format!("{v:.4}"),
                None => "n/a".to_string(),
            };
            let _ = write!(text, " {rendered:>w$}");
        }
        text.push('\n');
    }

    // csv
    let mut csv = String::from("language");
    for reg in &regimes {
        let _ = write!(csv, ",{reg}");
    }
    csv.push('\n');
    for (lang, row) in &rows {
        let _ = write!(csv, "{lang}");
        for cell in row {
            match cell {
                Some(v) => {
                    let _ = write!(csv, ",{v:.4}");
                }
                None => csv.push_str(",n/a"),
            }
        }
        csv.push('\n');
    }

    Ok(ResultsTable { text, csv })
}

/// One report per line, JSON-encoded.
pub fn reports_to_jsonl(reports: &[EvalReport]) -> Result<String> {
    let mut out = String::new();
    for r in reports {
        let _ = writeln!(out, "{}", serde_json::to_string(r)?);
    }
    Ok(out)
}

pub fn reports_from_jsonl(text: &str) -> Result<Vec<EvalReport>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[u8]]) -> Vec<Vec<bool>> {
        rows.iter().map(|r| r.iter().map(|&v| v != 0).collect()).collect()
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let gold = m(&[&[1, 0], &[0, 1], &[1, 1]]);
        let (macro_score, per_label) = macro_f1(&gold, &gold).unwrap();
        assert_eq!(macro_score, 1.0);
        assert_eq!(per_label, vec![1.0, 1.0]);
    }

    #[test]
    fn worked_two_label_example() {
        // label 0: tp=1 fp=1 fn=0 -> 2/3; label 1: tp=1 fp=0 fn=0 -> 1
        let gold = m(&[&[1, 0], &[0, 1]]);
        let pred = m(&[&[1, 0], &[1, 1]]);
        let (macro_score, per_label) = macro_f1(&pred, &gold).unwrap();
        assert!((per_label[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(per_label[1], 1.0);
        assert!((macro_score - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn empty_label_scores_zero_by_convention() {
        let gold = m(&[&[1, 0], &[1, 0]]);
        let pred = m(&[&[1, 0], &[1, 0]]);
        let (_, per_label) = macro_f1(&pred, &gold).unwrap();
        assert_eq!(per_label[1], 0.0);

        let (_, per_label) =
            macro_f1_with(&pred, &gold, F1Options { zero_division_one: true }).unwrap();
        assert_eq!(per_label[1], 1.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let gold = m(&[&[1, 0]]);
        let pred = m(&[&[1, 0], &[0, 1]]);
        assert!(macro_f1(&pred, &gold).is_err());
        let ragged = vec![vec![true, false], vec![true]];
        assert!(macro_f1(&ragged, &m(&[&[1, 0], &[0, 1]])).is_err());
    }

    #[test]
    fn f1_is_symmetric_under_pred_gold_swap() {
        let a = m(&[&[1, 0, 1], &[0, 1, 0], &[1, 1, 0]]);
        let b = m(&[&[0, 0, 1], &[0, 1, 1], &[1, 0, 0]]);
        let (fa, pa) = macro_f1(&a, &b).unwrap();
        let (fb, pb) = macro_f1(&b, &a).unwrap();
        assert_eq!(fa, fb);
        assert_eq!(pa, pb);
    }

    #[test]
    fn flipping_fn_to_tp_never_decreases_f1() {
        let gold = m(&[&[1], &[1], &[0], &[1]]);
        let pred = m(&[&[1], &[0], &[0], &[0]]);
        let (before, _) = macro_f1(&pred, &gold).unwrap();
        let mut improved = pred.clone();
        improved[1][0] = true; // one false negative becomes a true positive
        let (after, _) = macro_f1(&improved, &gold).unwrap();
        assert!(after >= before, "{after} < {before}");
    }

    #[test]
    fn table_renders_best_markers_and_na() {
        let reports = vec![
            EvalReport {
                language: "aa0".into(),
                regime: "task_only".into(),
                macro_f1: 0.5,
                per_label_f1: BTreeMap::new(),
                n_examples: 10,
            },
            EvalReport {
                language: "aa0".into(),
                regime: "family_tlr".into(),
                macro_f1: 0.75,
                per_label_f1: BTreeMap::new(),
                n_examples: 10,
            },
            EvalReport {
                language: "bb0".into(),
                regime: "task_only".into(),
                macro_f1: 0.25,
                per_label_f1: BTreeMap::new(),
                n_examples: 10,
            },
        ];
        let table = results_table(&reports).unwrap();
        assert!(table.text.contains("0.5000"), "{}", table.text);
        assert!(table.text.contains("0.7500*"), "{}", table.text);
        assert!(table.text.contains("n/a"), "{}", table.text);
        // task_only column precedes family_tlr
        let header = table.csv.lines().next().unwrap();
        assert_eq!(header, "language,task_only,family_tlr");
        assert!(table.csv.contains("bb0,0.2500,n/a"), "{}", table.csv);
    }

    #[test]
    fn duplicate_cell_rejected() {
        let r = EvalReport {
            language: "aa0".into(),
            regime: "tlr".into(),
            macro_f1: 0.5,
            per_label_f1: BTreeMap::new(),
            n_examples: 1,
        };
        assert!(results_table(&[r.clone(), r]).is_err());
    }

    #[test]
    fn jsonl_roundtrip() {
        let reports = vec![EvalReport {
            language: "aa0".into(),
            regime: "tlr".into(),
            macro_f1: 0.625,
            per_label_f1: [("joy".to_string(), 0.5)].into_iter().collect(),
            n_examples: 9,
        }];
        let text = reports_to_jsonl(&reports).unwrap();
        assert_eq!(reports_from_jsonl(&text).unwrap(), reports);
    }
}
