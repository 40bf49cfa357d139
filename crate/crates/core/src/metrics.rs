//! Answer scoring: QA-style normalization, token F1, sentence BLEU-1, the
//! binary LLM judge, pass rates and per-category aggregation.
//!
//! Normalization follows the usual extractive-QA convention (lowercase,
//! drop punctuation, drop the articles `a`/`an`/`the`, split on whitespace),
//! so scores are comparable within this crate but not necessarily with
//! numbers produced by other tokenizers.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ama::Verdict;
use crate::dialogue::Category;
use crate::llm::{Gateway, LlmError, RoleTag};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("pass rate is undefined for an empty verdict list")]
    EmptyVerdicts,
    #[error("judge response is not 0 or 1: {0:?}")]
    UnparseableJudge(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}' | '\u{2019}' | '\u{201c}' | '\u{201d}' | '\u{2013}' | '\u{2014}' | '\u{2026}'
                | '\u{00ab}' | '\u{00bb}' | '\u{00bf}' | '\u{00a1}'
        )
}

pub fn normalize_text(s: &str) -> Vec<String> {
    let lowered = s.to_lowercase();
    let stripped: String = lowered.chars().filter(|c| !is_punctuation(*c)).collect();
    stripped
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .map(str::to_owned)
        .collect()
}

fn counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut map = HashMap::new();
    for t in tokens {
        *map.entry(t.as_str()).or_insert(0) += 1;
    }
    map
}

/// Token-level F1 over normalized token multisets.
pub fn f1_score(predicted: &str, gold: &str) -> f64 {
    let pred = normalize_text(predicted);
    let gold = normalize_text(gold);
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let gold_counts = counts(&gold);
    let overlap: usize = counts(&pred)
        .iter()
        .map(|(tok, n)| (*n).min(gold_counts.get(tok).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Sentence-level BLEU with unigram weight only: clipped unigram precision
/// times the brevity penalty, no smoothing.
pub fn bleu1(predicted: &str, gold: &str) -> f64 {
    let pred = normalize_text(predicted);
    let gold = normalize_text(gold);
    if pred.is_empty() {
        return 0.0;
    }
    let gold_counts = counts(&gold);
    let clipped: usize = counts(&pred)
        .iter()
        .map(|(tok, n)| (*n).min(gold_counts.get(tok).copied().unwrap_or(0)))
        .sum();
    if clipped == 0 {
        return 0.0;
    }
    let precision = clipped as f64 / pred.len() as f64;
    let bp = if pred.len() >= gold.len() {
        1.0
    } else {
        (1.0 - gold.len() as f64 / pred.len() as f64).exp()
    };
    bp * precision
}

/// Asks the judge model for a binary semantic-consistency score.
pub fn llm_judge(
    question: &str,
    gold: &str,
    predicted: &str,
    gateway: &Gateway,
) -> Result<u8, MetricsError> {
    let prompts = gateway.prompts();
    let system = prompts.llm_judge_system.clone();
    let user = prompts.render(
        &prompts.llm_judge_user,
        &[("question", question), ("gold", gold), ("predicted", predicted)],
    );
    let text = gateway.ask(RoleTag::LlmJudge, system, user)?;
    parse_binary_score(&text).ok_or(MetricsError::UnparseableJudge(text))
}

fn parse_binary_score(text: &str) -> Option<u8> {
    let first = text
        .split_whitespace()
        .next()?
        .trim_matches(|c: char| !c.is_ascii_alphanumeric());
    match first {
        "1" => Some(1),
        "0" => Some(0),
        _ => None,
    }
}

pub fn pass_rate(verdicts: &[Verdict]) -> Result<f64, MetricsError> {
    if verdicts.is_empty() {
        return Err(MetricsError::EmptyVerdicts);
    }
    let passed = verdicts.iter().filter(|v| v.correct).count();
    Ok(passed as f64 / verdicts.len() as f64)
}

/// One scored benchmark answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRow {
    pub category: Category,
    pub gold: String,
    pub predicted: String,
    pub judge: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScores {
    pub f1_mean: f64,
    pub bleu1_mean: f64,
    pub judge_mean: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_category: BTreeMap<Category, CategoryScores>,
    /// Micro average over all questions; the headline number.
    pub overall: CategoryScores,
    /// Unweighted mean of the per-category means.
    pub overall_macro: CategoryScores,
    pub pass_rate: Option<f64>,
}

// Summing a sorted copy keeps the mean independent of row order.
fn stable_mean(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

fn aggregate<'a>(rows: impl Iterator<Item = &'a (f64, f64, Option<u8>)>) -> CategoryScores {
    let mut f1s = Vec::new();
    let mut bleus = Vec::new();
    let mut judges = Vec::new();
    for (f1, b, j) in rows {
        f1s.push(*f1);
        bleus.push(*b);
        if let Some(j) = j {
            judges.push(f64::from(*j));
        }
    }
    CategoryScores {
        count: f1s.len(),
        f1_mean: stable_mean(&mut f1s),
        bleu1_mean: stable_mean(&mut bleus),
        judge_mean: (!judges.is_empty()).then(|| stable_mean(&mut judges)),
    }
}

pub fn build_report(rows: &[ScoredRow], verdicts: Option<&[Verdict]>) -> MetricReport {
    let mut by_category: BTreeMap<Category, Vec<(f64, f64, Option<u8>)>> = BTreeMap::new();
    let mut all = Vec::with_capacity(rows.len());
    for row in rows {
        let scored = (f1_score(&row.predicted, &row.gold), bleu1(&row.predicted, &row.gold), row.judge);
        by_category.entry(row.category).or_default().push(scored);
        all.push(scored);
    }
    let per_category: BTreeMap<Category, CategoryScores> = by_category
        .iter()
        .map(|(cat, scored)| (*cat, aggregate(scored.iter())))
        .collect();

    let mut macro_f1: Vec<f64> = per_category.values().map(|c| c.f1_mean).collect();
    let mut macro_bleu: Vec<f64> = per_category.values().map(|c| c.bleu1_mean).collect();
    let mut macro_judge: Vec<f64> = per_category.values().filter_map(|c| c.judge_mean).collect();
    let overall_macro = CategoryScores {
        f1_mean: stable_mean(&mut macro_f1),
        bleu1_mean: stable_mean(&mut macro_bleu),
        judge_mean: (!macro_judge.is_empty()).then(|| stable_mean(&mut macro_judge)),
        count: rows.len(),
    };

    MetricReport {
        overall: aggregate(all.iter()),
        per_category,
        overall_macro,
        pass_rate: verdicts.and_then(|v| pass_rate(v).ok()),
    }
}

/// Aligned text table: one column per category in the benchmark's reporting
/// order followed by the micro average.
pub fn render_table(report: &MetricReport) -> String {
    let mut columns: Vec<(String, Option<&CategoryScores>)> = Category::REPORT_ORDER
        .iter()
        .map(|c| (c.column_label().to_owned(), report.per_category.get(c)))
        .collect();
    if let Some(other) = report.per_category.get(&Category::Other) {
        columns.push((Category::Other.column_label().to_owned(), Some(other)));
    }
    columns.push(("Average".to_owned(), Some(&report.overall)));

    let with_judge = report.overall.judge_mean.is_some();
    type Cell = fn(&CategoryScores) -> Option<f64>;
    let mut rows: Vec<(&str, Cell)> = vec![("F1", |c| Some(c.f1_mean)), ("BLEU-1", |c| Some(c.bleu1_mean))];
    if with_judge {
        rows.push(("Judge", |c| c.judge_mean));
    }
    rows.push(("Count", |c| Some(c.count as f64)));

    let width = columns.iter().map(|(l, _)| l.len()).max().unwrap_or(8).max(8);
    let mut out = String::new();
    let _ = write!(out, "{:<8}", "");
    for (label, _) in &columns {
        let _ = write!(out, " {label:>width$}");
    }
    out.push('\n');
    for (name, get) in &rows {
        let _ = write!(out, "{name:<8}");
        for (_, scores) in &columns {
            let cell = match scores.and_then(*get) {
                Some(v) if *name == "Count" => format!("{}", v as u64),
                Some(v) => format!("{:.2}", v * 100.0),
                None => "-".to_owned(),
            };
            let _ = write!(out, " {cell:>width$}");
        }
        out.push('\n');
    }
    if let Some(rate) = report.pass_rate {
        let _ = writeln!(out, "pass rate: {:.2}", rate * 100.0);
    }
    let _ = writeln!(
        out,
        "macro average: F1 {:.2} BLEU-1 {:.2}",
        report.overall_macro.f1_mean * 100.0,
        report.overall_macro.bleu1_mean * 100.0
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn verdict(correct: bool) -> Verdict {
        Verdict {
            predicted_answer: "x".into(),
            correct,
            defect: if correct { String::new() } else { "missing".into() },
        }
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_text("The blue Car!"), vec!["blue", "car"]);
        assert!(normalize_text("").is_empty());
        assert_eq!(normalize_text("Just do it!"), vec!["just", "do", "it"]);
        assert_eq!(normalize_text("  an   apple\ta day "), vec!["apple", "day"]);
    }

    #[test]
    fn f1_edge_cases() {
        assert_eq!(f1_score("paris", "paris"), 1.0);
        assert_eq!(f1_score("", "paris"), 0.0);
        assert_eq!(f1_score("paris", ""), 0.0);
        assert_eq!(f1_score("", "the"), 1.0);
        assert_eq!(f1_score("london", "paris"), 0.0);
    }

    #[test]
    fn f1_partial_overlap_counts_seven_gold_tokens() {
        // gold normalizes to 7 tokens: precision 1, recall 2/7 -> 4/9
        let f1 = f1_score("rehearsing hard", "rehearsing hard and working on business plans");
        assert!((f1 - 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn bleu1_cases() {
        assert_eq!(bleu1("blue car", "blue car"), 1.0);
        assert!((bleu1("blue blue car", "blue car") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(bleu1("", "blue car"), 0.0);
        assert_eq!(bleu1("red", "blue car"), 0.0);
        let short = bleu1("rehearsing hard", "rehearsing hard and working on business plans");
        assert!((short - (1.0f64 - 7.0 / 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn bleu1_is_not_symmetric() {
        // "car" vs "blue car": p1 = 1, BP = exp(1 - 2/1); reversed: p1 = 1/2, BP = 1
        assert!((bleu1("car", "blue car") - (-1.0f64).exp()).abs() < 1e-12);
        assert!((bleu1("blue car", "car") - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pass_rate_counts() {
        assert_eq!(pass_rate(&[verdict(true), verdict(true)]).unwrap(), 1.0);
        assert_eq!(pass_rate(&[verdict(false)]).unwrap(), 0.0);
        let r = pass_rate(&[verdict(false), verdict(true), verdict(true)]).unwrap();
        assert!((r - 0.666667).abs() < 1e-6);
        assert!(matches!(pass_rate(&[]), Err(MetricsError::EmptyVerdicts)));
    }

    #[test]
    fn judge_score_parsing() {
        assert_eq!(parse_binary_score("1"), Some(1));
        assert_eq!(parse_binary_score(" 0\nbecause"), Some(0));
        assert_eq!(parse_binary_score("1."), Some(1));
        assert_eq!(parse_binary_score("yes"), None);
        assert_eq!(parse_binary_score("10"), None);
        assert_eq!(parse_binary_score(""), None);
    }

    #[test]
    fn report_single_row() {
        let rows = vec![ScoredRow {
            category: Category::Temporal,
            gold: "May 8".into(),
            predicted: "May 8".into(),
            judge: Some(1),
        }];
        let r = build_report(&rows, None);
        let t = &r.per_category[&Category::Temporal];
        assert_eq!((t.f1_mean, t.bleu1_mean, t.judge_mean, t.count), (1.0, 1.0, Some(1.0), 1));
        assert_eq!(r.overall.count, 1);
        assert_eq!(r.pass_rate, None);
    }

    #[test]
    fn report_empty() {
        let r = build_report(&[], None);
        assert!(r.per_category.is_empty());
        assert_eq!(r.overall.count, 0);
        assert_eq!(r.overall.judge_mean, None);
    }

    #[test]
    fn report_one_row_per_category() {
        let rows: Vec<ScoredRow> = [
            (Category::MultiHop, "red apple", "red"),
            (Category::Temporal, "in May", "in May 2023"),
            (Category::OpenDomain, "jazz", "rock"),
            (Category::SingleHop, "blue blue car", "blue car"),
        ]
        .into_iter()
        .map(|(category, gold, predicted)| ScoredRow {
            category,
            gold: gold.into(),
            predicted: predicted.into(),
            judge: None,
        })
        .collect();
        let r = build_report(&rows, Some(&[verdict(true), verdict(false)]));
        assert_eq!(r.per_category.len(), 4);
        assert!(r.per_category.values().all(|c| c.count == 1));
        assert_eq!(r.overall.count, 4);
        let expected: f64 = rows.iter().map(|r| f1_score(&r.predicted, &r.gold)).sum::<f64>() / 4.0;
        assert!((r.overall.f1_mean - expected).abs() < 1e-12);
        assert_eq!(r.pass_rate, Some(0.5));
        let table = render_table(&r);
        let header = table.lines().next().unwrap();
        let order = ["Multi-Hop", "Temporal", "Open-Domain", "Single-Hop", "Average"];
        let positions: Vec<usize> = order.iter().map(|l| header.find(l).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    proptest! {
        #[test]
        fn f1_is_symmetric(a in "[a-d ]{0,12}", b in "[a-d ]{0,12}") {
            prop_assert_eq!(f1_score(&a, &b), f1_score(&b, &a));
        }

        #[test]
        fn bleu1_bounded_by_unigram_precision(a in "[a-e ]{0,16}", b in "[a-e ]{0,16}") {
            let pred = normalize_text(&a);
            let gold = normalize_text(&b);
            let b1 = bleu1(&a, &b);
            prop_assert!((0.0..=1.0).contains(&b1));
            if !pred.is_empty() {
                let gc = counts(&gold);
                let clipped: usize = counts(&pred).iter().map(|(t, n)| (*n).min(gc.get(t).copied().unwrap_or(0))).sum();
                prop_assert!(b1 <= clipped as f64 / pred.len() as f64 + 1e-15);
            }
        }

        #[test]
        fn report_means_are_permutation_invariant(
            rows in proptest::collection::vec(("[a-c ]{0,8}", "[a-c ]{0,8}", 0usize..5), 0..12),
            seed in any::<u64>(),
        ) {
            let cats = [Category::MultiHop, Category::Temporal, Category::OpenDomain, Category::SingleHop, Category::Other];
            let rows: Vec<ScoredRow> = rows.into_iter().map(|(p, g, c)| ScoredRow {
                category: cats[c], gold: g, predicted: p, judge: None,
            }).collect();
            let mut shuffled = rows.clone();
            // deterministic rotation + reversal as the permutation
            if !shuffled.is_empty() {
                let k = (seed as usize) % shuffled.len();
                shuffled.rotate_left(k);
                shuffled.reverse();
            }
            prop_assert_eq!(build_report(&rows, None), build_report(&shuffled, None));
        }
    }
}
