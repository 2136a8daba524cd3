//! Accuracy, per-category breakdowns, and condition comparisons.
//!
//! Percentages are kept as exact fractions and only rounded (half-up, one
//! decimal) for display, so comparisons never depend on rounding.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ChoiceIndex, PredictionRecord, QuestionCategory};
use crate::ensemble::EnsembleResult;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no predictions to score")]
    Empty,
    #[error("prediction for unknown question {0}")]
    UnknownQuestion(String),
    #[error("conditions cover different categories: {0}")]
    CategoryMismatch(String),
    #[error("no conditions to compare")]
    NoConditions,
}

/// Exact ratio `num / den` rendered as a percentage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: i64,
    pub den: i64,
}

impl Fraction {
    pub fn new(num: i64, den: i64) -> Self {
        assert!(den > 0, "denominator must be positive");
        Fraction { num, den }
    }

    pub fn percent(self) -> f64 {
        100.0 * self.num as f64 / self.den as f64
    }

    /// Percentage in tenths, rounded half-up: `floor(1000 n / d + 1/2)`.
    pub fn tenths(self) -> i64 {
        let n = 2000 * self.num as i128 + self.den as i128;
        n.div_euclid(2 * self.den as i128) as i64
    }

    /// One-decimal percentage string, e.g. `73.2`.
    pub fn display(self) -> String {
        fmt_tenths(self.tenths())
    }

    /// `self - other`, exact.
    pub fn minus(self, other: Fraction) -> Fraction {
        let num = self.num as i128 * other.den as i128 - other.num as i128 * self.den as i128;
        let den = self.den as i128 * other.den as i128;
        Fraction { num: num as i64, den: den as i64 }
    }
}

impl PartialOrd for Fraction {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Fraction {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as i128 * other.den as i128).cmp(&(other.num as i128 * self.den as i128))
    }
}

fn fmt_tenths(t: i64) -> String {
    let sign = if t < 0 { "-" } else { "" };
    let a = t.unsigned_abs();
    format!("{sign}{}.{}", a / 10, a % 10)
}

fn fmt_signed_tenths(t: i64) -> String {
    if t > 0 {
        format!("+{}", fmt_tenths(t))
    } else {
        fmt_tenths(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn fraction(self) -> Fraction {
        Fraction::new(self.correct as i64, self.total as i64)
    }

    pub fn percent(self) -> f64 {
        self.fraction().percent()
    }

    pub fn display(self) -> String {
        self.fraction().display()
    }
}

impl fmt::Display for Accuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display())
    }
}

fn is_correct(choice: Option<ChoiceIndex>, qid: &str, truths: &BTreeMap<String, ChoiceIndex>) -> Result<bool, EvalError> {
    let truth = truths.get(qid).ok_or_else(|| EvalError::UnknownQuestion(qid.to_string()))?;
    Ok(choice == Some(*truth))
}

/// Share of predictions matching the truth; unanswered counts as incorrect.
pub fn accuracy(predictions: &[PredictionRecord], truths: &BTreeMap<String, ChoiceIndex>) -> Result<Accuracy, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut correct = 0;
    for p in predictions {
        if is_correct(p.choice, &p.question_id, truths)? {
            correct += 1;
        }
    }
    Ok(Accuracy { correct, total: predictions.len() })
}

pub fn ensemble_accuracy(results: &[EnsembleResult], truths: &BTreeMap<String, ChoiceIndex>) -> Result<Accuracy, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut correct = 0;
    for r in results {
        if is_correct(r.final_choice, &r.question_id, truths)? {
            correct += 1;
        }
    }
    Ok(Accuracy { correct, total: results.len() })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: QuestionCategory,
    pub count: usize,
    /// Questions in this category over all scored questions.
    pub data_ratio: Fraction,
    pub accuracy: Accuracy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Accuracy,
    pub answered: usize,
    pub unanswered: usize,
    /// One row per category present, in category order.
    pub rows: Vec<CategoryRow>,
}

impl EvalReport {
    pub fn categories(&self) -> BTreeSet<QuestionCategory> {
        self.rows.iter().map(|r| r.category).collect()
    }
}

/// Overall and per-category accuracy. Questions missing from `categories`
/// (or labeled with an empty list) fall under `Unknown`; multi-label questions
/// count in every labeled category, so ratios may sum past 100.
pub fn per_category_report(
    predictions: &[PredictionRecord],
    truths: &BTreeMap<String, ChoiceIndex>,
    categories: &BTreeMap<String, Vec<QuestionCategory>>,
) -> Result<EvalReport, EvalError> {
    let overall = accuracy(predictions, truths)?;
    let answered = predictions.iter().filter(|p| p.is_answered()).count();
    let mut per: BTreeMap<QuestionCategory, (usize, usize)> = BTreeMap::new();
    for p in predictions {
        let ok = is_correct(p.choice, &p.question_id, truths)?;
        let labels: BTreeSet<QuestionCategory> = match categories.get(&p.question_id) {
            Some(ls) if !ls.is_empty() => ls.iter().copied().collect(),
            _ => [QuestionCategory::Unknown].into(),
        };
        for c in labels {
            let e = per.entry(c).or_default();
            e.0 += 1;
            e.1 += ok as usize;
        }
    }
    let total = predictions.len() as i64;
    let rows = per
        .into_iter()
        .map(|(category, (count, correct))| CategoryRow {
            category,
            count,
            data_ratio: Fraction::new(count as i64, total),
            accuracy: Accuracy { correct, total: count },
        })
        .collect();
    Ok(EvalReport { overall, answered, unanswered: predictions.len() - answered, rows })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaRow {
    /// `None` for the overall row.
    pub category: Option<QuestionCategory>,
    pub data_ratio: Option<Fraction>,
    pub accuracies: Vec<Accuracy>,
    /// Accuracy of each later condition minus the first, as an exact ratio.
    pub deltas: Vec<Fraction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionTable {
    pub conditions: Vec<String>,
    pub rows: Vec<DeltaRow>,
}

fn pp_delta(a: Accuracy, b: Accuracy) -> Fraction {
    b.fraction().minus(a.fraction())
}

/// Per-category accuracies side by side, with deltas against the first
/// condition. All reports must cover the same categories.
pub fn compare_conditions(reports: &[(String, EvalReport)]) -> Result<ConditionTable, EvalError> {
    let (_, base) = reports.first().ok_or(EvalError::NoConditions)?;
    let cats = base.categories();
    for (label, r) in &reports[1..] {
        if r.categories() != cats {
            let fmt = |s: &BTreeSet<QuestionCategory>| s.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
            return Err(EvalError::CategoryMismatch(format!(
                "{} has [{}], {label} has [{}]",
                reports[0].0,
                fmt(&cats),
                fmt(&r.categories())
            )));
        }
    }
    let mut rows = Vec::new();
    for (i, row) in base.rows.iter().enumerate() {
        let accuracies: Vec<Accuracy> = reports.iter().map(|(_, r)| r.rows[i].accuracy).collect();
        let deltas = accuracies[1..].iter().map(|a| pp_delta(accuracies[0], *a)).collect();
        rows.push(DeltaRow { category: Some(row.category), data_ratio: Some(row.data_ratio), accuracies, deltas });
    }
    let overall: Vec<Accuracy> = reports.iter().map(|(_, r)| r.overall).collect();
    let deltas = overall[1..].iter().map(|a| pp_delta(overall[0], *a)).collect();
    rows.push(DeltaRow { category: None, data_ratio: None, accuracies: overall, deltas });
    Ok(ConditionTable { conditions: reports.iter().map(|(l, _)| l.clone()).collect(), rows })
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width = vec![0; cols];
    for r in std::iter::once(header).chain(rows.iter().map(|r| r.as_slice())) {
        for (i, c) in r.iter().enumerate() {
            width[i] = width[i].max(c.chars().count());
        }
    }
    let line = |r: &[String]| {
        r.iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = width[i])
                } else {
                    format!("{c:>w$}", w = width[i])
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (cols - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

/// Model accuracy table: one row per model followed by the ensemble row.
pub fn render_model_table(per_model: &[(String, Accuracy)], ensemble: Option<Accuracy>) -> String {
    let mut rows: Vec<Vec<String>> = per_model
        .iter()
        .map(|(m, a)| vec![m.clone(), a.display(), format!("{}/{}", a.correct, a.total)])
        .collect();
    if let Some(e) = ensemble {
        rows.push(vec!["Ensemble".into(), e.display(), format!("{}/{}", e.correct, e.total)]);
    }
    render_table(&["Model".into(), "Acc. (%)".into(), "Correct".into()], &rows)
}

pub fn render_category_report(label: &str, r: &EvalReport) -> String {
    let mut rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|row| {
            vec![
                row.category.display_name().to_string(),
                row.data_ratio.display(),
                row.accuracy.display(),
                row.count.to_string(),
            ]
        })
        .collect();
    rows.push(vec!["Total".into(), String::new(), r.overall.display(), r.overall.total.to_string()]);
    let mut out = render_table(
        &["Question Category".into(), "Data Ratio".into(), format!("Acc. ({label})"), "N".into()],
        &rows,
    );
    out.push_str(&format!("answered: {}  unanswered: {}\n", r.answered, r.unanswered));
    out
}

pub fn render_condition_table(t: &ConditionTable) -> String {
    let mut header = vec!["Question Category".to_string(), "Data Ratio".to_string()];
    header.extend(t.conditions.iter().map(|c| format!("Acc. @{c}")));
    header.extend(t.conditions[1..].iter().map(|c| format!("Delta {c}")));
    let rows: Vec<Vec<String>> = t
        .rows
        .iter()
        .map(|r| {
            let mut v = vec![
                r.category.map_or("Total".to_string(), |c| c.display_name().to_string()),
                r.data_ratio.map(Fraction::display).unwrap_or_default(),
            ];
            v.extend(r.accuracies.iter().map(|a| a.display()));
            v.extend(r.deltas.iter().map(|d| fmt_signed_tenths(d.tenths())));
            v
        })
        .collect();
    render_table(&header, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Transcript;

    fn rec(qid: &str, choice: Option<u8>) -> PredictionRecord {
        match choice {
            Some(c) => PredictionRecord::answered(qid, "m", ChoiceIndex::new(c).unwrap(), Transcript::new()),
            None => PredictionRecord::unanswered(qid, "m", Transcript::new()),
        }
    }

    fn truths(n: usize) -> BTreeMap<String, ChoiceIndex> {
        (0..n).map(|i| (format!("q{i}"), ChoiceIndex::new(0).unwrap())).collect()
    }

    #[test]
    fn all_correct_is_100() {
        let preds: Vec<_> = (0..10).map(|i| rec(&format!("q{i}"), Some(0))).collect();
        let a = accuracy(&preds, &truths(10)).unwrap();
        assert_eq!(a.display(), "100.0");
        assert_eq!(a.percent(), 100.0);
    }

    #[test]
    fn unanswered_counts_wrong_and_empty_errors() {
        let preds = vec![rec("q0", Some(0)), rec("q1", None)];
        assert_eq!(accuracy(&preds, &truths(2)).unwrap(), Accuracy { correct: 1, total: 2 });
        assert_eq!(accuracy(&[], &truths(2)), Err(EvalError::Empty));
        assert_eq!(accuracy(&[rec("zz", Some(0))], &truths(2)), Err(EvalError::UnknownQuestion("zz".into())));
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(Fraction::new(366, 500).display(), "73.2");
        assert_eq!(Fraction::new(1, 8).display(), "12.5");
        assert_eq!(Fraction::new(1, 16).display(), "6.3"); // 6.25 -> 6.3
        assert_eq!(Fraction::new(2, 3).display(), "66.7");
        assert_eq!(Fraction::new(-1, 16).display(), "-6.2"); // half-up toward +inf
        assert_eq!(Fraction::new(0, 7).display(), "0.0");
        assert_eq!(fmt_signed_tenths(66), "+6.6");
        assert_eq!(fmt_signed_tenths(-43), "-4.3");
        assert_eq!(fmt_signed_tenths(0), "0.0");
    }

    #[test]
    fn single_category_is_whole() {
        let preds: Vec<_> = (0..4).map(|i| rec(&format!("q{i}"), Some((i % 2) as u8))).collect();
        let cats = (0..4).map(|i| (format!("q{i}"), vec![QuestionCategory::KeyAction])).collect();
        let r = per_category_report(&preds, &truths(4), &cats).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].data_ratio.display(), "100.0");
        assert_eq!(r.rows[0].accuracy, r.overall);
    }

    #[test]
    fn no_labels_is_single_unknown_row() {
        let preds: Vec<_> = (0..3).map(|i| rec(&format!("q{i}"), Some(0))).collect();
        let r = per_category_report(&preds, &truths(3), &BTreeMap::new()).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].category, QuestionCategory::Unknown);
    }

    #[test]
    fn sixty_forty_split() {
        // 10 questions: 6 PurposeGoal (4 correct), 4 ToolsMaterials (1 correct)
        let mut preds = Vec::new();
        let mut cats = BTreeMap::new();
        for i in 0..10 {
            let qid = format!("q{i}");
            let (cat, ok) = if i < 6 {
                (QuestionCategory::PurposeGoal, i < 4)
            } else {
                (QuestionCategory::ToolsMaterials, i == 6)
            };
            preds.push(rec(&qid, Some(if ok { 0 } else { 1 })));
            cats.insert(qid, vec![cat]);
        }
        let r = per_category_report(&preds, &truths(10), &cats).unwrap();
        assert_eq!(r.rows[0].category, QuestionCategory::PurposeGoal);
        assert_eq!(r.rows[0].data_ratio.display(), "60.0");
        assert_eq!(r.rows[0].accuracy.display(), "66.7");
        assert_eq!(r.rows[1].data_ratio.display(), "40.0");
        assert_eq!(r.rows[1].accuracy.display(), "25.0");
        assert_eq!(r.overall.display(), "50.0");
        let sum: usize = r.rows.iter().map(|row| row.accuracy.correct).sum();
        assert_eq!(sum, r.overall.correct);
    }

    #[test]
    fn multi_label_ratios_not_normalized() {
        // 5 questions, 1 of them double-labeled -> ratios 60 + 60 = 120
        let preds: Vec<_> = (0..5).map(|i| rec(&format!("q{i}"), Some(0))).collect();
        let mut cats = BTreeMap::new();
        for i in 0..5 {
            let l = match i {
                0 | 1 => vec![QuestionCategory::PurposeGoal],
                2 => vec![QuestionCategory::PurposeGoal, QuestionCategory::ActionSequence],
                _ => vec![QuestionCategory::ActionSequence],
            };
            cats.insert(format!("q{i}"), l);
        }
        let r = per_category_report(&preds, &truths(5), &cats).unwrap();
        let ratios: Vec<_> = r.rows.iter().map(|row| row.data_ratio.display()).collect();
        assert_eq!(ratios, ["60.0", "60.0"]);
        let total_tenths: i64 = r.rows.iter().map(|row| row.data_ratio.tenths()).sum();
        assert_eq!(total_tenths, 1200);
    }

    #[test]
    fn identical_reports_zero_deltas() {
        let preds: Vec<_> = (0..3).map(|i| rec(&format!("q{i}"), Some(0))).collect();
        let r = per_category_report(&preds, &truths(3), &BTreeMap::new()).unwrap();
        let t = compare_conditions(&[("a".into(), r.clone()), ("b".into(), r)]).unwrap();
        assert!(t.rows.iter().all(|row| row.deltas.iter().all(|d| d.num == 0)));
        assert_eq!(compare_conditions(&[]), Err(EvalError::NoConditions));
    }

    #[test]
    fn mismatched_categories_rejected() {
        let preds: Vec<_> = (0..2).map(|i| rec(&format!("q{i}"), Some(0))).collect();
        let a = per_category_report(&preds, &truths(2), &BTreeMap::new()).unwrap();
        let cats = [("q0".to_string(), vec![QuestionCategory::KeyAction])].into();
        let b = per_category_report(&preds, &truths(2), &cats).unwrap();
        assert!(matches!(
            compare_conditions(&[("a".into(), a), ("b".into(), b)]),
            Err(EvalError::CategoryMismatch(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn accuracy_permutation_invariant(outcomes in proptest::collection::vec(proptest::option::of(0u8..5), 1..60), seed in any::<u64>()) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let preds: Vec<_> = outcomes.iter().enumerate().map(|(i, c)| rec(&format!("q{i}"), *c)).collect();
                let t = truths(outcomes.len());
                let mut shuffled = preds.clone();
                shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                prop_assert_eq!(accuracy(&preds, &t).unwrap(), accuracy(&shuffled, &t).unwrap());
            }

            #[test]
            fn single_label_rows_partition_overall(labels in proptest::collection::vec((0usize..6, any::<bool>()), 1..80)) {
                let preds: Vec<_> = labels.iter().enumerate().map(|(i, (_, ok))| rec(&format!("q{i}"), Some(if *ok { 0 } else { 3 }))).collect();
                let cats = labels.iter().enumerate().map(|(i, (c, _))| (format!("q{i}"), vec![QuestionCategory::ALL[*c]])).collect();
                let r = per_category_report(&preds, &truths(labels.len()), &cats).unwrap();
                let correct: usize = r.rows.iter().map(|row| row.accuracy.correct).sum();
                let count: usize = r.rows.iter().map(|row| row.count).sum();
                prop_assert_eq!(correct, r.overall.correct);
                prop_assert_eq!(count, r.overall.total);
            }

            #[test]
            fn rounding_preserves_order(a in 0i64..1000, b in 0i64..1000, n in 1i64..1000) {
                let (x, y) = (Fraction::new(a.min(n), n), Fraction::new(b.min(n), n));
                if x <= y {
                    prop_assert!(x.tenths() <= y.tenths());
                }
            }
        }
    }
}
