//! Scoring and regime analysis: accuracy per aggregation method, broken
//! out by whether the majority was right (MajC), a minority held the gold
//! answer (MinC), every agent was wrong, or the vote tied.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{majority_vote, FinalAnswer, MethodRun};
use crate::slate::AgentSlate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeLabel {
    /// The majority answer matches gold.
    MajC,
    /// A unique majority exists and is wrong, but some agent answered gold.
    MinC,
    /// No agent answered gold.
    AllWrong,
    /// No unique majority.
    Tie,
}

/// Classify a slate by comparing its vote outcome to the gold answer.
pub fn classify_regime(slate: &AgentSlate) -> Result<RegimeLabel> {
    let gold = slate
        .gold()
        .ok_or_else(|| Error::MissingGold(slate.id.clone()))?;
    let any_correct = slate
        .agents
        .iter()
        .any(|a| slate.agent_answer(a).is_some_and(|x| x == gold));
    if !any_correct {
        return Ok(RegimeLabel::AllWrong);
    }
    match majority_vote(slate).final_answer {
        FinalAnswer::Answer(m) if m == gold => Ok(RegimeLabel::MajC),
        FinalAnswer::Answer(_) => Ok(RegimeLabel::MinC),
        _ => Ok(RegimeLabel::Tie),
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct RegimeReport {
    pub n: usize,
    pub acc: f64,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct TokenReport {
    #[serde(rename = "in")]
    pub input: usize,
    pub out: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub accuracy: f64,
    pub n: usize,
    pub majc: RegimeReport,
    pub minc: RegimeReport,
    pub ties: usize,
    pub degraded: usize,
    pub tokens: TokenReport,
}

fn ratio(correct: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        correct as f64 / n as f64
    }
}

/// Score one method's results against the slates they were produced from.
/// Failed slates count as incorrect; slates without gold are skipped.
pub fn score(slates: &[AgentSlate], run: &MethodRun) -> Result<MethodReport> {
    if slates.len() != run.results.len() {
        return Err(Error::Misaligned(format!(
            "{} slates vs {} results for {}",
            slates.len(),
            run.results.len(),
            run.method
        )));
    }
    let mut n = 0usize;
    let mut correct = 0usize;
    let mut regime: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let mut ties = 0usize;
    let mut degraded = 0usize;
    let mut tokens = TokenReport::default();

    for (slate, result) in slates.iter().zip(&run.results) {
        let Some(gold) = slate.gold() else { continue };
        n += 1;
        let label = classify_regime(slate)?;
        let key = match label {
            RegimeLabel::MajC => "majc",
            RegimeLabel::MinC => "minc",
            _ => "other",
        };
        let entry = regime.entry(key).or_default();
        entry.0 += 1;
        if let Ok(r) = result {
            tokens.input += r.tokens_in;
            tokens.out += r.tokens_out;
            if r.degraded {
                degraded += 1;
            }
            if matches!(r.final_answer, FinalAnswer::Tie) {
                ties += 1;
            }
            if r.final_answer.matches(&gold) {
                correct += 1;
                entry.1 += 1;
            }
        }
    }
    tokens.total = tokens.input + tokens.out;
    let get = |key: &str| {
        let (rn, rc) = regime.get(key).copied().unwrap_or_default();
        RegimeReport {
            n: rn,
            acc: ratio(rc, rn),
        }
    };
    Ok(MethodReport {
        method: run.method.to_string(),
        accuracy: ratio(correct, n),
        n,
        majc: get("majc"),
        minc: get("minc"),
        ties,
        degraded,
        tokens,
    })
}

pub fn score_all(slates: &[AgentSlate], runs: &[MethodRun]) -> Result<Vec<MethodReport>> {
    runs.iter().map(|r| score(slates, r)).collect()
}

pub const CSV_HEADER: &str =
    "method,accuracy,n,majc_n,majc_acc,minc_n,minc_acc,ties,degraded,tokens_in,tokens_out,tokens_total";

pub fn to_csv(reports: &[MethodReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.accuracy,
            r.n,
            r.majc.n,
            r.majc.acc,
            r.minc.n,
            r.minc.acc,
            r.ties,
            r.degraded,
            r.tokens.input,
            r.tokens.out,
            r.tokens.total
        ));
    }
    out
}

pub fn to_json(reports: &[MethodReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}
