//! End-to-end aggregation strategies: majority vote, full-trace judge
//! baseline, and the tree-guided auditor with its commit/defer policy and
//! conditional beam, plus per-run token accounting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::atomize::{atomize_rule_based, Trace};
use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::judge::{adjudicate, adjudicate_review, Exchange, JudgeBackend};
use crate::packet::{build_packet, build_review_packet, estimate_tokens, Rubric};
use crate::slate::{AgentSlate, NormalizedAnswer};
use crate::tree::{build_tree, ReasoningTree, TreeConfig, ROOT_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "mv")]
    MajorityVote,
    #[serde(rename = "judge")]
    JudgeBaseline,
    #[serde(rename = "auditor")]
    Auditor,
    /// Re-solving from scratch; named for report parity, never run here.
    #[serde(rename = "solver")]
    Solver,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::MajorityVote => "mv",
            Method::JudgeBaseline => "judge",
            Method::Auditor => "auditor",
            Method::Solver => "solver",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FinalAnswer {
    Answer(NormalizedAnswer),
    Tie,
    Abstain,
}

impl FinalAnswer {
    pub fn matches(&self, gold: &NormalizedAnswer) -> bool {
        matches!(self, FinalAnswer::Answer(a) if a == gold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuditEventKind {
    Commit,
    Defer,
    TerminalReview,
    Fallback,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditEvent {
    pub cdp: u64,
    pub kind: AuditEventKind,
    pub selected: usize,
    pub alpha: f64,
    pub prompt_tokens: usize,
    pub reply_tokens: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregationResult {
    pub slate_id: String,
    pub method: Method,
    pub final_answer: FinalAnswer,
    pub tokens_in: usize,
    pub tokens_out: usize,
    pub audit_log: Vec<AuditEvent>,
    pub degraded: bool,
}

impl AggregationResult {
    pub fn tokens_total(&self) -> usize {
        self.tokens_in + self.tokens_out
    }
}

/// Commit/defer policy knobs.
#[derive(Debug, Clone, Copy)]
pub struct PolicyConfig {
    /// Gate threshold: commit when alpha >= lambda.
    pub lambda_gate: f64,
    /// Beam width; 1 degenerates to pure greedy.
    pub beam_k: usize,
    pub window_k: usize,
    pub delta_depth: usize,
    pub hints: bool,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            lambda_gate: 0.7,
            beam_k: 3,
            window_k: 3,
            delta_depth: 3,
            hints: true,
            seed: 0,
        }
    }
}

/// Atomize every agent and collect normalized answers. Agents without an
/// answer keep their trace but are absent from the answer map.
pub fn prepare_slate(slate: &AgentSlate) -> Result<(Vec<Trace>, BTreeMap<String, NormalizedAnswer>)> {
    let mut traces = Vec::new();
    let mut answers = BTreeMap::new();
    for agent in &slate.agents {
        traces.push(atomize_rule_based(agent)?);
        if let Some(ans) = slate.agent_answer(agent) {
            answers.insert(agent.agent_id.clone(), ans);
        }
    }
    Ok((traces, answers))
}

/// Unique-mode of the answer multiset; `None` on a tie or when no agent
/// answered.
pub fn majority_answer(answers: &BTreeMap<String, NormalizedAnswer>) -> Option<NormalizedAnswer> {
    let values: Vec<&NormalizedAnswer> = answers.values().collect();
    let (groups, counts) = tally(&values);
    let max = *counts.iter().max()?;
    let mut winners = groups
        .iter()
        .zip(&counts)
        .filter(|(_, c)| **c == max)
        .map(|(g, _)| *g);
    let first = winners.next()?;
    if winners.next().is_some() {
        return None; // tied mode
    }
    Some(first.clone())
}

/// Group answers by the normalized-equality predicate (not hashable, so
/// quadratic; slates are small).
fn tally<'a>(values: &[&'a NormalizedAnswer]) -> (Vec<&'a NormalizedAnswer>, Vec<usize>) {
    let mut groups: Vec<&NormalizedAnswer> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for v in values {
        match groups.iter().position(|g| *g == *v) {
            Some(i) => counts[i] += 1,
            None => {
                groups.push(v);
                counts.push(1);
            }
        }
    }
    (groups, counts)
}

/// Majority voting: argmax over answer tallies, tie and abstain markers as
/// defined; costs no tokens.
pub fn majority_vote(slate: &AgentSlate) -> AggregationResult {
    let mut answers = BTreeMap::new();
    for agent in &slate.agents {
        if let Some(a) = slate.agent_answer(agent) {
            answers.insert(agent.agent_id.clone(), a);
        }
    }
    let final_answer = if answers.is_empty() {
        FinalAnswer::Abstain
    } else {
        match majority_answer(&answers) {
            Some(a) => FinalAnswer::Answer(a),
            None => FinalAnswer::Tie,
        }
    };
    AggregationResult {
        slate_id: slate.id.clone(),
        method: Method::MajorityVote,
        final_answer,
        tokens_in: 0,
        tokens_out: 0,
        audit_log: Vec::new(),
        degraded: false,
    }
}

/// Full-trace baseline: every trace rendered into one multi-way prompt, a
/// single judge call selects an agent. No tree, no packets.
pub fn judge_baseline(
    slate: &AgentSlate,
    backend: &dyn JudgeBackend,
    rubric: &Rubric,
) -> Result<AggregationResult> {
    if slate.agents.len() < 2 {
        return Err(Error::NoAnswers(slate.id.clone()));
    }
    let gold = slate.gold();
    let prompt = render_full_slate(slate, rubric)?;
    let answers: Vec<Option<NormalizedAnswer>> = slate
        .agents
        .iter()
        .map(|a| slate.agent_answer(a))
        .collect();
    let correct: Vec<bool> = answers
        .iter()
        .map(|a| {
            gold.as_ref()
                .is_some_and(|g| a.as_ref().is_some_and(|x| x == g))
        })
        .collect();
    let support = vec![1usize; slate.agents.len()];
    let req = crate::judge::JudgeRequest {
        instance_id: &slate.id,
        cdp_id: u64::MAX - 1,
        call_counter: 0,
        prompt: &prompt,
        n_branches: slate.agents.len(),
        support: &support,
        correct_bearing: &correct,
    };
    let tokens_in = estimate_tokens(&prompt);
    match backend.decide(&req) {
        Ok(decision) => {
            let reply = crate::judge::render_decision(&decision);
            let final_answer = match &answers[decision.selected] {
                Some(a) => FinalAnswer::Answer(a.clone()),
                None => FinalAnswer::Abstain,
            };
            Ok(AggregationResult {
                slate_id: slate.id.clone(),
                method: Method::JudgeBaseline,
                final_answer,
                tokens_in,
                tokens_out: estimate_tokens(&reply),
                audit_log: vec![AuditEvent {
                    cdp: ROOT_ID,
                    kind: AuditEventKind::TerminalReview,
                    selected: decision.selected,
                    alpha: decision.alpha,
                    prompt_tokens: tokens_in,
                    reply_tokens: estimate_tokens(&reply),
                }],
                degraded: false,
            })
        }
        Err(_) => {
            let mut fallback = majority_vote(slate);
            fallback.method = Method::JudgeBaseline;
            fallback.tokens_in = tokens_in;
            fallback.degraded = true;
            Ok(fallback)
        }
    }
}

fn render_full_slate(slate: &AgentSlate, rubric: &Rubric) -> Result<String> {
    rubric.validate()?;
    let mut out = String::new();
    out.push_str("You are selecting the most reliable agent response.\n");
    out.push_str(&format!("QUESTION: {}\n", slate.question));
    out.push_str("RESPONSES:\n");
    for (i, agent) in slate.agents.iter().enumerate() {
        let letter = (b'A' + i as u8) as char;
        out.push_str(&format!("RESPONSE {letter}:\n{}\n", agent.text));
    }
    out.push_str(crate::packet::REPLY_GRAMMAR);
    Ok(out)
}

struct Lineage {
    node: u64,
    /// (judge-preferred, support size, node id) ordering key from the
    /// divergence that spawned it.
    preferred: bool,
    support: usize,
    branch_id: u64,
}

/// Tree-guided aggregation: descend from the root, adjudicate each
/// divergence, commit when alpha clears the gate, otherwise defer into a
/// beam of at most `beam_k` lineages; finish with a terminal multi-way
/// review when several lineages survive.
pub fn audit_aggregate(
    slate: &AgentSlate,
    tree_cfg: TreeConfig,
    policy: &PolicyConfig,
    embedder: &dyn Embedder,
    backend: &dyn JudgeBackend,
    rubric: &Rubric,
) -> Result<AggregationResult> {
    let (traces, answers) = prepare_slate(slate)?;
    let gold = slate.gold();
    let tree = build_tree(&traces, &answers, tree_cfg, embedder)?;

    let mut log: Vec<AuditEvent> = Vec::new();
    let mut tokens_in = 0usize;
    let mut tokens_out = 0usize;
    let mut degraded = false;
    let mut counter: u64 = 0;

    let mut active = vec![Lineage {
        node: ROOT_ID,
        preferred: true,
        support: tree.node(ROOT_ID)?.support.len(),
        branch_id: ROOT_ID,
    }];
    let mut finished: Vec<u64> = Vec::new();

    while !active.is_empty() {
        let mut next_round: Vec<Lineage> = Vec::new();
        for lineage in active.drain(..) {
            let node = tree.node(lineage.node)?;
            match node.children.len() {
                0 => finished.push(lineage.node),
                1 => next_round.push(Lineage {
                    node: node.children[0],
                    ..lineage
                }),
                _ => {
                    let packet = build_packet(
                        &tree,
                        lineage.node,
                        &slate.question,
                        policy.window_k,
                        policy.delta_depth,
                        policy.hints,
                    )?;
                    let outcome = adjudicate(
                        &packet,
                        &tree,
                        gold.as_ref(),
                        backend,
                        rubric,
                        &slate.id,
                        counter,
                    );
                    counter += 1;
                    match outcome {
                        Ok(Exchange {
                            decision,
                            prompt,
                            reply,
                        }) => {
                            let pt = estimate_tokens(&prompt);
                            let rt = estimate_tokens(&reply);
                            tokens_in += pt;
                            tokens_out += rt;
                            if decision.alpha >= policy.lambda_gate {
                                let chosen = packet.branches[decision.selected].child_id;
                                log.push(AuditEvent {
                                    cdp: lineage.node,
                                    kind: AuditEventKind::Commit,
                                    selected: decision.selected,
                                    alpha: decision.alpha,
                                    prompt_tokens: pt,
                                    reply_tokens: rt,
                                });
                                next_round.push(Lineage {
                                    node: chosen,
                                    preferred: true,
                                    support: packet.branches[decision.selected].support_size,
                                    branch_id: chosen,
                                });
                            } else {
                                log.push(AuditEvent {
                                    cdp: lineage.node,
                                    kind: AuditEventKind::Defer,
                                    selected: decision.selected,
                                    alpha: decision.alpha,
                                    prompt_tokens: pt,
                                    reply_tokens: rt,
                                });
                                for (i, b) in packet.branches.iter().enumerate() {
                                    next_round.push(Lineage {
                                        node: b.child_id,
                                        preferred: i == decision.selected,
                                        support: b.support_size,
                                        branch_id: b.child_id,
                                    });
                                }
                            }
                        }
                        Err(_) => {
                            // judge failure: max-support branch, degraded
                            degraded = true;
                            let (sel, chosen) = packet
                                .branches
                                .iter()
                                .enumerate()
                                .max_by(|(i, a), (j, b)| {
                                    (a.support_size, std::cmp::Reverse(*i))
                                        .cmp(&(b.support_size, std::cmp::Reverse(*j)))
                                })
                                .map(|(i, b)| (i, b.child_id))
                                .expect("divergence has branches");
                            log.push(AuditEvent {
                                cdp: lineage.node,
                                kind: AuditEventKind::Fallback,
                                selected: sel,
                                alpha: 0.0,
                                prompt_tokens: 0,
                                reply_tokens: 0,
                            });
                            next_round.push(Lineage {
                                node: chosen,
                                preferred: true,
                                support: packet.branches[sel].support_size,
                                branch_id: chosen,
                            });
                        }
                    }
                }
            }
        }
        // beam bound: judge-preferred first, then support, then node id
        if next_round.len() > policy.beam_k {
            next_round.sort_by(|a, b| {
                b.preferred
                    .cmp(&a.preferred)
                    .then(b.support.cmp(&a.support))
                    .then(a.branch_id.cmp(&b.branch_id))
            });
            next_round.truncate(policy.beam_k);
        }
        active = next_round;
    }

    // distinct surviving leaves, first-finished order
    let mut survivors: Vec<u64> = Vec::new();
    for leaf in finished {
        if !survivors.contains(&leaf) {
            survivors.push(leaf);
        }
    }

    let final_answer = if survivors.len() == 1 {
        leaf_answer(&tree, survivors[0])
    } else {
        let packet = build_review_packet(&tree, &slate.question, &survivors)?;
        match adjudicate_review(&packet, gold.as_ref(), backend, rubric, &slate.id, counter) {
            Ok(Exchange {
                decision,
                prompt,
                reply,
            }) => {
                let pt = estimate_tokens(&prompt);
                let rt = estimate_tokens(&reply);
                tokens_in += pt;
                tokens_out += rt;
                log.push(AuditEvent {
                    cdp: u64::MAX,
                    kind: AuditEventKind::TerminalReview,
                    selected: decision.selected,
                    alpha: decision.alpha,
                    prompt_tokens: pt,
                    reply_tokens: rt,
                });
                leaf_answer(&tree, packet.candidates[decision.selected].lineage_id)
            }
            Err(_) => {
                degraded = true;
                let best = packet
                    .candidates
                    .iter()
                    .max_by_key(|c| c.support_size)
                    .expect("review packet has candidates");
                log.push(AuditEvent {
                    cdp: u64::MAX,
                    kind: AuditEventKind::Fallback,
                    selected: 0,
                    alpha: 0.0,
                    prompt_tokens: 0,
                    reply_tokens: 0,
                });
                leaf_answer(&tree, best.lineage_id)
            }
        }
    };

    Ok(AggregationResult {
        slate_id: slate.id.clone(),
        method: Method::Auditor,
        final_answer,
        tokens_in,
        tokens_out,
        audit_log: log,
        degraded,
    })
}

fn leaf_answer(tree: &ReasoningTree, leaf: u64) -> FinalAnswer {
    match tree.leaf_answers.get(&leaf) {
        Some(a) => FinalAnswer::Answer(a.clone()),
        None => FinalAnswer::Abstain,
    }
}

/// Per-method results over a corpus; per-slate errors are recorded and the
/// run continues.
#[derive(Debug)]
pub struct MethodRun {
    pub method: Method,
    pub results: Vec<std::result::Result<AggregationResult, String>>,
}

#[allow(clippy::too_many_arguments)]
pub fn run_methods(
    slates: &[AgentSlate],
    tree_cfg: TreeConfig,
    policy: &PolicyConfig,
    embedder: &dyn Embedder,
    backend: &dyn JudgeBackend,
    rubric: &Rubric,
) -> Vec<MethodRun> {
    let mv = MethodRun {
        method: Method::MajorityVote,
        results: slates.iter().map(|s| Ok(majority_vote(s))).collect(),
    };
    let judge = MethodRun {
        method: Method::JudgeBaseline,
        results: slates
            .iter()
            .map(|s| judge_baseline(s, backend, rubric).map_err(|e| e.to_string()))
            .collect(),
    };
    let auditor = MethodRun {
        method: Method::Auditor,
        results: slates
            .iter()
            .map(|s| {
                audit_aggregate(s, tree_cfg, policy, embedder, backend, rubric)
                    .map_err(|e| e.to_string())
            })
            .collect(),
    };
    vec![mv, judge, auditor]
}
