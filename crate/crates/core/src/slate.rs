//! Problem instances and agent outputs, answer normalization, and the
//! JSONL corpus format.
//!
//! A slate is one problem together with the outputs of every agent that
//! attempted it. All types here are immutable after construction and safe
//! to share across workers.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used for numeric answer equality.
pub const NUMERIC_TOLERANCE: f64 = 1e-9;

/// One agent's contribution: a raw reasoning trace plus an optional answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutput {
    pub agent_id: String,
    pub text: String,
    pub answer: Option<String>,
}

/// One problem instance with all agent outputs, in a stable order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSlate {
    pub id: String,
    pub question: String,
    pub gold_answer: Option<String>,
    pub agents: Vec<AgentOutput>,
}

impl AgentSlate {
    /// Normalized gold answer, if the slate carries one.
    pub fn gold(&self) -> Option<NormalizedAnswer> {
        self.gold_answer.as_deref().map(normalize_answer)
    }

    /// Effective answer for an agent: the explicit field wins, otherwise
    /// the trace is scanned for an answer marker. `None` means the agent
    /// abstains from voting but still contributes its trace.
    pub fn agent_answer(&self, agent: &AgentOutput) -> Option<NormalizedAnswer> {
        match &agent.answer {
            Some(a) => Some(normalize_answer(a)),
            None => extract_answer(&agent.text),
        }
    }
}

/// Canonicalized answer. Two answers compare equal when both parse as
/// numbers within `NUMERIC_TOLERANCE`, otherwise by canonical string.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizedAnswer {
    pub canonical: String,
    pub numeric: Option<f64>,
}

impl NormalizedAnswer {
    pub fn is_empty(&self) -> bool {
        self.canonical.is_empty()
    }
}

impl PartialEq for NormalizedAnswer {
    fn eq(&self, other: &Self) -> bool {
        match (self.numeric, other.numeric) {
            (Some(a), Some(b)) => (a - b).abs() <= NUMERIC_TOLERANCE,
            _ => self.canonical == other.canonical,
        }
    }
}

impl std::fmt::Display for NormalizedAnswer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.canonical)
    }
}

/// Canonicalize a raw answer string: trim, lowercase, strip trailing
/// punctuation, drop thousands separators, and parse a leading or sole
/// numeric token when one exists. Idempotent.
pub fn normalize_answer(raw: &str) -> NormalizedAnswer {
    let mut s: String = raw.trim().to_lowercase();
    while s.ends_with(['.', ',', '!', '?', ';', ':']) {
        // keep a trailing period that is part of a decimal like "3.5"? a
        // bare trailing period never is, since the digit would follow it
        s.pop();
    }
    let s = s.trim();
    let canonical = strip_thousands_separators(s);
    let numeric = parse_numeric_token(&canonical);
    NormalizedAnswer { canonical, numeric }
}

fn strip_thousands_separators(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = String::with_capacity(s.len());
    for (i, ch) in s.char_indices() {
        if ch == ',' {
            let prev_digit = i > 0 && bytes[i - 1].is_ascii_digit();
            let next_digit = bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit());
            if prev_digit && next_digit {
                continue;
            }
        }
        out.push(ch);
    }
    out
}

fn parse_numeric_token(s: &str) -> Option<f64> {
    let token = s.split_whitespace().next()?;
    let token = token.trim_start_matches('$');
    let token = token.strip_suffix('%').unwrap_or(token);
    let v: f64 = token.parse().ok()?;
    v.is_finite().then_some(v)
}

/// Scan a trace for the last answer marker: `#### <ans>` anywhere, or a
/// line starting with `answer:` (case-insensitive). Last marker wins.
pub fn extract_answer(trace_text: &str) -> Option<NormalizedAnswer> {
    let mut best: Option<(usize, &str)> = None;
    let mut offset = 0;
    for line in trace_text.split('\n') {
        if let Some(pos) = line.rfind("####") {
            let ans = &line[pos + 4..];
            best = Some((offset + pos, ans));
        }
        let trimmed = line.trim_start();
        let lead = line.len() - trimmed.len();
        if trimmed.len() >= 7 && trimmed[..7].eq_ignore_ascii_case("answer:") {
            let ans = &trimmed[7..];
            let pos = offset + lead;
            if best.is_none_or(|(p, _)| pos >= p) {
                best = Some((pos, ans));
            }
        }
        offset += line.len() + 1;
    }
    let (_, raw) = best?;
    let norm = normalize_answer(raw);
    (!norm.is_empty()).then_some(norm)
}

/// Load a JSONL corpus, one slate per line. Blank lines are skipped.
pub fn load_slates(path: &Path) -> Result<Vec<AgentSlate>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut slates = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let slate: AgentSlate =
            serde_json::from_str(&line).map_err(|source| Error::CorpusParse {
                line: idx + 1,
                source,
            })?;
        validate_slate(&slate, idx + 1)?;
        slates.push(slate);
    }
    Ok(slates)
}

fn validate_slate(slate: &AgentSlate, line: usize) -> Result<()> {
    let mut seen = HashSet::new();
    for agent in &slate.agents {
        if !seen.insert(agent.agent_id.as_str()) {
            return Err(Error::DuplicateAgent {
                slate_id: slate.id.clone(),
                agent_id: agent.agent_id.clone(),
                line,
            });
        }
    }
    Ok(())
}

/// Write slates as JSONL; `load_slates(save_slates(x)) == x` field by field.
pub fn save_slates(slates: &[AgentSlate], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for slate in slates {
        serde_json::to_writer(&mut w, slate)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
