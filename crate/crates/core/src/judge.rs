//! Adjudication backends and reply parsing.
//!
//! Two backends ship: a seeded scripted oracle with a configurable
//! discrimination accuracy `q`, and a remote chat-completion judge. Both
//! hide behind `JudgeBackend`, so tests can plug in arbitrary scripted
//! behaviors. Oracle randomness is keyed by (seed, instance, divergence
//! node, call counter), making results independent of call order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::packet::{
    build_packet, render_packet, ConsensusReviewPacket, DivergencePacket, Rubric,
};
use crate::slate::{AgentSlate, NormalizedAnswer};
use crate::tree::{build_tree, ReasoningTree, TreeConfig};

/// Outcome of one adjudication: selected branch (0-based, packet order),
/// gating signal alpha, and free-text rationale.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditDecision {
    pub selected: usize,
    pub alpha: f64,
    pub rationale: String,
    /// Set when the reply lacked a CONFIDENCE line and 1.0 was assumed.
    pub confidence_defaulted: bool,
}

/// Everything a backend may look at when deciding. `correct_bearing` is
/// filled from the tree and the gold answer when available; render-blind
/// backends use it, prompt-driven backends use `prompt`.
#[derive(Debug)]
pub struct JudgeRequest<'a> {
    pub instance_id: &'a str,
    pub cdp_id: u64,
    pub call_counter: u64,
    pub prompt: &'a str,
    pub n_branches: usize,
    pub support: &'a [usize],
    pub correct_bearing: &'a [bool],
}

pub trait JudgeBackend: Sync {
    fn decide(&self, req: &JudgeRequest<'_>) -> Result<AuditDecision>;
    fn name(&self) -> &'static str;
}

/// Render-blind oracle: selects a correct-bearing branch with probability
/// `q`, otherwise one of the rest; uniform over all when no branch is
/// correct-bearing. Emits a fixed alpha.
#[derive(Debug, Clone)]
pub struct ScriptedOracle {
    pub q: f64,
    pub alpha_emit: f64,
    pub seed: u64,
}

impl ScriptedOracle {
    pub fn new(q: f64, alpha_emit: f64, seed: u64) -> Self {
        ScriptedOracle { q, alpha_emit, seed }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derive a ChaCha key from the call identity so concurrent execution
/// cannot change outcomes.
pub fn keyed_rng(seed: u64, instance_id: &str, cdp_id: u64, counter: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a(instance_id.as_bytes()).to_le_bytes());
    key[16..24].copy_from_slice(&cdp_id.to_le_bytes());
    key[24..32].copy_from_slice(&counter.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

impl JudgeBackend for ScriptedOracle {
    fn decide(&self, req: &JudgeRequest<'_>) -> Result<AuditDecision> {
        let mut rng = keyed_rng(self.seed, req.instance_id, req.cdp_id, req.call_counter);
        let correct: Vec<usize> = (0..req.n_branches)
            .filter(|&i| req.correct_bearing.get(i).copied().unwrap_or(false))
            .collect();
        let incorrect: Vec<usize> = (0..req.n_branches)
            .filter(|i| !correct.contains(i))
            .collect();
        let pool: &[usize] = if correct.is_empty() {
            &incorrect // no correct-bearing branch: uniform over all
        } else if rng.gen::<f64>() < self.q || incorrect.is_empty() {
            &correct
        } else {
            &incorrect
        };
        let selected = pool[rng.gen_range(0..pool.len())];
        Ok(AuditDecision {
            selected,
            alpha: self.alpha_emit,
            rationale: "scripted oracle selection".to_string(),
            confidence_defaulted: false,
        })
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}

/// Chat-completion interface for remote judging; see `remote` for the
/// HTTP client.
pub trait ChatBackend: Sync {
    fn chat(&self, system: &str, user: &str, temperature: f64) -> Result<String>;
}

pub const JUDGE_SYSTEM_PROMPT: &str = include_str!("../assets/judge_system_prompt.txt");

/// Remote judge: one chat request per packet, reply parsed under the fixed
/// grammar, with bounded retries on parse failure.
pub struct RemoteJudge<B: ChatBackend> {
    pub backend: B,
    pub temperature: f64,
    pub max_retries: u32,
}

impl<B: ChatBackend> JudgeBackend for RemoteJudge<B> {
    fn decide(&self, req: &JudgeRequest<'_>) -> Result<AuditDecision> {
        let mut last_err = None;
        for _ in 0..=self.max_retries {
            let reply = self
                .backend
                .chat(JUDGE_SYSTEM_PROMPT, req.prompt, self.temperature)?;
            match parse_judge_reply(&reply, req.n_branches) {
                Ok(d) => return Ok(d),
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.unwrap_or_else(|| Error::Backend("no reply".into())))
    }

    fn name(&self) -> &'static str {
        "remote"
    }
}

/// Parse the fixed reply grammar. The first matching SELECTED /
/// CONFIDENCE / RATIONALE lines win; leading prose is tolerated. A missing
/// CONFIDENCE defaults to 1.0 and is flagged.
pub fn parse_judge_reply(text: &str, n_branches: usize) -> Result<AuditDecision> {
    let mut selected: Option<usize> = None;
    let mut alpha: Option<f64> = None;
    let mut rationale: Option<String> = None;
    for line in text.lines() {
        let line = line.trim();
        if selected.is_none() {
            if let Some(rest) = strip_label(line, "SELECTED:") {
                let letter = rest
                    .chars()
                    .next()
                    .ok_or_else(|| Error::ReplyParse("empty SELECTED line".into()))?;
                let idx = (letter.to_ascii_uppercase() as i32) - ('A' as i32);
                if idx < 0 || idx as usize >= n_branches {
                    return Err(Error::ReplyParse(format!(
                        "branch letter {letter:?} out of range for {n_branches} branches"
                    )));
                }
                selected = Some(idx as usize);
                continue;
            }
        }
        if alpha.is_none() {
            if let Some(rest) = strip_label(line, "CONFIDENCE:") {
                let v: f64 = rest
                    .parse()
                    .map_err(|_| Error::ReplyParse(format!("bad confidence {rest:?}")))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::ReplyParse(format!("confidence {v} outside [0,1]")));
                }
                alpha = Some(v);
                continue;
            }
        }
        if rationale.is_none() {
            if let Some(rest) = strip_label(line, "RATIONALE:") {
                rationale = Some(rest.to_string());
            }
        }
    }
    let selected =
        selected.ok_or_else(|| Error::ReplyParse("missing SELECTED line".into()))?;
    let confidence_defaulted = alpha.is_none();
    Ok(AuditDecision {
        selected,
        alpha: alpha.unwrap_or(1.0),
        rationale: rationale.unwrap_or_default(),
        confidence_defaulted,
    })
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    if line.len() >= label.len() && line[..label.len()].eq_ignore_ascii_case(label) {
        Some(line[label.len()..].trim())
    } else {
        None
    }
}

/// Which branches of a divergence packet lead to a leaf labeled `gold`.
pub fn correct_bearing_branches(
    tree: &ReasoningTree,
    packet: &DivergencePacket,
    gold: Option<&NormalizedAnswer>,
) -> Vec<bool> {
    packet
        .branches
        .iter()
        .map(|b| {
            gold.is_some_and(|g| subtree_has_answer(tree, b.child_id, g))
        })
        .collect()
}

fn subtree_has_answer(tree: &ReasoningTree, id: u64, ans: &NormalizedAnswer) -> bool {
    if tree.leaf_answers.get(&id).is_some_and(|a| a == ans) {
        return true;
    }
    tree.node(id)
        .map(|n| n.children.iter().any(|&c| subtree_has_answer(tree, c, ans)))
        .unwrap_or(false)
}

/// One adjudication over a rendered packet. Returns the decision together
/// with the exchanged texts for token accounting.
pub struct Exchange {
    pub decision: AuditDecision,
    pub prompt: String,
    pub reply: String,
}

pub fn adjudicate(
    packet: &DivergencePacket,
    tree: &ReasoningTree,
    gold: Option<&NormalizedAnswer>,
    backend: &dyn JudgeBackend,
    rubric: &Rubric,
    instance_id: &str,
    call_counter: u64,
) -> Result<Exchange> {
    let prompt = render_packet(packet, rubric)?;
    let correct = correct_bearing_branches(tree, packet, gold);
    let support: Vec<usize> = packet.branches.iter().map(|b| b.support_size).collect();
    let req = JudgeRequest {
        instance_id,
        cdp_id: packet.cdp,
        call_counter,
        prompt: &prompt,
        n_branches: packet.branches.len(),
        support: &support,
        correct_bearing: &correct,
    };
    let decision = backend.decide(&req)?;
    let reply = render_decision(&decision);
    Ok(Exchange {
        decision,
        prompt,
        reply,
    })
}

/// Terminal multi-way adjudication over a review packet.
pub fn adjudicate_review(
    packet: &ConsensusReviewPacket,
    gold: Option<&NormalizedAnswer>,
    backend: &dyn JudgeBackend,
    rubric: &Rubric,
    instance_id: &str,
    call_counter: u64,
) -> Result<Exchange> {
    let prompt = crate::packet::render_review_packet(packet, rubric)?;
    let correct: Vec<bool> = packet
        .candidates
        .iter()
        .map(|c| {
            gold.is_some_and(|g| c.final_answer.as_ref().is_some_and(|a| a == g))
        })
        .collect();
    let support: Vec<usize> = packet.candidates.iter().map(|c| c.support_size).collect();
    let req = JudgeRequest {
        instance_id,
        cdp_id: u64::MAX, // terminal review is keyed apart from any node
        call_counter,
        prompt: &prompt,
        n_branches: packet.candidates.len(),
        support: &support,
        correct_bearing: &correct,
    };
    let decision = backend.decide(&req)?;
    let reply = render_decision(&decision);
    Ok(Exchange {
        decision,
        prompt,
        reply,
    })
}

/// Render a decision back into the reply grammar (used for scripted
/// backends' token accounting).
pub fn render_decision(d: &AuditDecision) -> String {
    format!(
        "SELECTED: {}\nCONFIDENCE: {}\nRATIONALE: {}\n",
        (b'A' + d.selected as u8) as char,
        d.alpha,
        d.rationale
    )
}

/// Measured sycophancy bias: fraction of first-disagreement decisions that
/// flip toward the larger-support branch when support hints are shown.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct FlipReport {
    pub packets: usize,
    pub flips: usize,
    pub flip_rate: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn sycophancy_probe(
    slates: &[AgentSlate],
    tree_cfg: TreeConfig,
    embedder: &dyn Embedder,
    backend: &dyn JudgeBackend,
    rubric: &Rubric,
    window_k: usize,
) -> Result<FlipReport> {
    let mut report = FlipReport::default();
    for slate in slates {
        let Some(gold) = slate.gold() else { continue };
        let (traces, answers) = crate::pipeline::prepare_slate(slate)?;
        let Some(majority) = crate::pipeline::majority_answer(&answers) else {
            continue;
        };
        if majority == gold {
            continue;
        }
        let tree = build_tree(&traces, &answers, tree_cfg, embedder)?;
        let Some((fpd, _, _)) = tree.locate_fpd(&gold, &majority) else {
            continue;
        };
        let on = build_packet(&tree, fpd, &slate.question, window_k, tree_cfg.delta_depth, true)?;
        let off = build_packet(&tree, fpd, &slate.question, window_k, tree_cfg.delta_depth, false)?;
        let d_on = adjudicate(&on, &tree, Some(&gold), backend, rubric, &slate.id, 0)?;
        let d_off = adjudicate(&off, &tree, Some(&gold), backend, rubric, &slate.id, 1)?;
        let max_support = on
            .branches
            .iter()
            .enumerate()
            .max_by_key(|(i, b)| (b.support_size, std::cmp::Reverse(*i)))
            .map(|(i, _)| i)
            .unwrap();
        report.packets += 1;
        if d_on.decision.selected == max_support && d_off.decision.selected != max_support {
            report.flips += 1;
        }
    }
    report.flip_rate = if report.packets == 0 {
        0.0
    } else {
        report.flips as f64 / report.packets as f64
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req<'a>(
        n: usize,
        correct: &'a [bool],
        support: &'a [usize],
        counter: u64,
    ) -> JudgeRequest<'a> {
        JudgeRequest {
            instance_id: "inst",
            cdp_id: 7,
            call_counter: counter,
            prompt: "",
            n_branches: n,
            support,
            correct_bearing: correct,
        }
    }

    #[test]
    fn oracle_q1_always_correct() {
        let oracle = ScriptedOracle::new(1.0, 1.0, 42);
        for counter in 0..50 {
            let d = oracle
                .decide(&req(3, &[false, true, false], &[1, 1, 1], counter))
                .unwrap();
            assert_eq!(d.selected, 1);
        }
    }

    #[test]
    fn oracle_q0_always_wrong() {
        let oracle = ScriptedOracle::new(0.0, 1.0, 42);
        for counter in 0..50 {
            let d = oracle
                .decide(&req(2, &[true, false], &[1, 1], counter))
                .unwrap();
            assert_eq!(d.selected, 1);
        }
    }

    #[test]
    fn oracle_q_rate_monte_carlo() {
        // 10 000 seeded calls at q = 0.8: correct-selection rate 0.8 +- 0.01
        let oracle = ScriptedOracle::new(0.8, 1.0, 7);
        let mut correct = 0usize;
        let n = 10_000;
        for counter in 0..n {
            let d = oracle
                .decide(&req(2, &[true, false], &[1, 1], counter as u64))
                .unwrap();
            if d.selected == 0 {
                correct += 1;
            }
        }
        let rate = correct as f64 / n as f64;
        assert!((rate - 0.8).abs() <= 0.01, "rate = {rate}");
    }

    #[test]
    fn oracle_no_correct_branch_uniform_over_all() {
        let oracle = ScriptedOracle::new(1.0, 1.0, 3);
        let mut seen = std::collections::BTreeSet::new();
        for counter in 0..200 {
            let d = oracle
                .decide(&req(3, &[false, false, false], &[1, 1, 1], counter))
                .unwrap();
            seen.insert(d.selected);
        }
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn oracle_determinism_under_fixed_key() {
        let oracle = ScriptedOracle::new(0.5, 0.4, 99);
        let a = oracle.decide(&req(2, &[true, false], &[1, 1], 5)).unwrap();
        let b = oracle.decide(&req(2, &[true, false], &[1, 1], 5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.alpha, 0.4);
    }

    #[test]
    fn parse_happy_path() {
        let d = parse_judge_reply(
            "SELECTED: B\nCONFIDENCE: 0.9\nRATIONALE: unit mismatch in A",
            2,
        )
        .unwrap();
        assert_eq!(d.selected, 1);
        assert_eq!(d.alpha, 0.9);
        assert_eq!(d.rationale, "unit mismatch in A");
        assert!(!d.confidence_defaulted);
    }

    #[test]
    fn parse_out_of_range_letter() {
        assert!(matches!(
            parse_judge_reply("SELECTED: C", 2),
            Err(Error::ReplyParse(_))
        ));
    }

    #[test]
    fn parse_missing_confidence_defaults() {
        let d = parse_judge_reply("SELECTED: A\nRATIONALE: fine", 2).unwrap();
        assert_eq!(d.alpha, 1.0);
        assert!(d.confidence_defaulted);
    }

    #[test]
    fn parse_noisy_replies() {
        // hand-labeled expected parses for a small corpus of noisy replies
        let cases: Vec<(&str, Option<(usize, f64)>)> = vec![
            ("Let me think.\nSELECTED: A\nCONFIDENCE: 0.5\nRATIONALE: ok", Some((0, 0.5))),
            ("selected: b\nconfidence: 0.25\nrationale: lowercase labels", Some((1, 0.25))),
            ("SELECTED: A\nSELECTED: B\nCONFIDENCE: 1\nRATIONALE: first wins", Some((0, 1.0))),
            ("preamble\n  SELECTED: B  \n  CONFIDENCE: 0.75\nRATIONALE: padded", Some((1, 0.75))),
            ("SELECTED: A\nCONFIDENCE: 1.5\nRATIONALE: too confident", None),
            ("SELECTED: A\nCONFIDENCE: not-a-number\nRATIONALE: x", None),
            ("no labels at all in this reply", None),
            ("CONFIDENCE: 0.4\nRATIONALE: missing selection", None),
            ("SELECTED: Z\nCONFIDENCE: 0.4\nRATIONALE: bad letter", None),
            ("SELECTED: B\nRATIONALE: confidence missing entirely", Some((1, 1.0))),
        ];
        for (text, expected) in cases {
            let got = parse_judge_reply(text, 2);
            match expected {
                Some((sel, alpha)) => {
                    let d = got.unwrap_or_else(|e| panic!("{text:?}: {e}"));
                    assert_eq!(d.selected, sel, "{text:?}");
                    assert_eq!(d.alpha, alpha, "{text:?}");
                }
                None => assert!(got.is_err(), "{text:?} should fail"),
            }
        }
    }

    #[test]
    fn parsed_alpha_always_in_range() {
        for text in [
            "SELECTED: A\nCONFIDENCE: 0\nRATIONALE: x",
            "SELECTED: A\nCONFIDENCE: 1\nRATIONALE: x",
            "SELECTED: A\nCONFIDENCE: 0.33\nRATIONALE: x",
        ] {
            let d = parse_judge_reply(text, 1).unwrap();
            assert!((0.0..=1.0).contains(&d.alpha));
            assert!(d.selected < 1);
        }
    }

    struct FlakyChat {
        replies: std::sync::Mutex<Vec<String>>,
    }
    impl ChatBackend for FlakyChat {
        fn chat(&self, _s: &str, _u: &str, _t: f64) -> Result<String> {
            let mut r = self.replies.lock().unwrap();
            if r.is_empty() {
                return Err(Error::Backend("exhausted".into()));
            }
            Ok(r.remove(0))
        }
    }

    #[test]
    fn remote_judge_retries_then_succeeds() {
        let judge = RemoteJudge {
            backend: FlakyChat {
                replies: std::sync::Mutex::new(vec![
                    "garbage".into(),
                    "SELECTED: A\nCONFIDENCE: 0.6\nRATIONALE: second try".into(),
                ]),
            },
            temperature: 0.0,
            max_retries: 2,
        };
        let support = [1usize, 1];
        let correct = [false, false];
        let d = judge.decide(&req_with("p", 2, &correct, &support)).unwrap();
        assert_eq!(d.selected, 0);
    }

    #[test]
    fn remote_judge_exhausts_retries() {
        let judge = RemoteJudge {
            backend: FlakyChat {
                replies: std::sync::Mutex::new(vec!["junk".into(), "junk".into()]),
            },
            temperature: 0.0,
            max_retries: 1,
        };
        let support = [1usize, 1];
        let correct = [false, false];
        assert!(judge.decide(&req_with("p", 2, &correct, &support)).is_err());
    }

    fn req_with<'a>(
        prompt: &'a str,
        n: usize,
        correct: &'a [bool],
        support: &'a [usize],
    ) -> JudgeRequest<'a> {
        JudgeRequest {
            instance_id: "inst",
            cdp_id: 0,
            call_counter: 0,
            prompt,
            n_branches: n,
            support,
            correct_bearing: correct,
        }
    }
}
