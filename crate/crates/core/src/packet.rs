//! Divergence packets and consensus review packets: the compact,
//! judge-facing view of a disagreement, plus the approximate token counter
//! used for cost accounting.

use crate::error::{Error, Result};
use crate::slate::NormalizedAnswer;
use crate::tree::{DivergenceType, ReasoningTree};

/// Default evidence window size.
pub const DEFAULT_WINDOW_K: usize = 3;

/// Reply-grammar instruction block appended to every judge prompt.
pub const REPLY_GRAMMAR: &str = include_str!("../assets/reply_grammar.txt");

#[derive(Debug, Clone)]
pub struct BranchEvidence {
    pub child_id: u64,
    pub evidence: Vec<String>,
    pub support_size: usize,
}

#[derive(Debug, Clone)]
pub struct DivergencePacket {
    pub cdp: u64,
    pub dtype: DivergenceType,
    pub question: String,
    /// Representative texts on the root-to-divergence path.
    pub prefix: Vec<String>,
    /// Children in creation order.
    pub branches: Vec<BranchEvidence>,
    pub include_support_hints: bool,
}

#[derive(Debug, Clone)]
pub struct ReviewCandidate {
    pub lineage_id: u64,
    pub trace_text: Vec<String>,
    pub final_answer: Option<NormalizedAnswer>,
    pub support_size: usize,
}

#[derive(Debug, Clone)]
pub struct ConsensusReviewPacket {
    pub question: String,
    pub candidates: Vec<ReviewCandidate>,
}

/// Rubric criteria toggles; the type hint decides which criteria the
/// rendered prompt emphasizes.
#[derive(Debug, Clone, Copy)]
pub struct Rubric {
    pub fact: bool,
    pub logic: bool,
    pub constraint: bool,
}

impl Default for Rubric {
    fn default() -> Self {
        Rubric {
            fact: true,
            logic: true,
            constraint: true,
        }
    }
}

impl Rubric {
    pub fn validate(&self) -> Result<()> {
        if !(self.fact || self.logic || self.constraint) {
            return Err(Error::EmptyRubric);
        }
        Ok(())
    }

    fn criteria_line(&self) -> String {
        let mut parts = Vec::new();
        if self.fact {
            parts.push("factual accuracy");
        }
        if self.logic {
            parts.push("logical soundness");
        }
        if self.constraint {
            parts.push("constraint adherence");
        }
        parts.join("; ")
    }
}

/// Build the packet for divergence node `u`: the shared prefix plus one
/// evidence window per child. A window walks the single-child spine below
/// the child and stops after `k` steps or just before a nested divergence.
pub fn build_packet(
    tree: &ReasoningTree,
    u: u64,
    question: &str,
    k: usize,
    delta: usize,
    hints: bool,
) -> Result<DivergencePacket> {
    let node = tree.node(u)?;
    if node.children.len() < 2 {
        return Err(Error::NotDivergence(u));
    }
    let dtype = tree.divergence_type(u, delta)?;
    let prefix = tree.path_texts(u)?;
    let mut branches = Vec::new();
    for &child in &node.children {
        branches.push(BranchEvidence {
            child_id: child,
            evidence: evidence_window(tree, child, k)?,
            support_size: tree.node(child)?.support.len(),
        });
    }
    Ok(DivergencePacket {
        cdp: u,
        dtype,
        question: question.to_string(),
        prefix,
        branches,
        include_support_hints: hints,
    })
}

fn evidence_window(tree: &ReasoningTree, start: u64, k: usize) -> Result<Vec<String>> {
    let mut out = vec![tree.node(start)?.representative_text.clone()];
    let mut current = start;
    loop {
        if out.len() >= k {
            break;
        }
        let node = tree.node(current)?;
        if node.children.len() != 1 {
            break;
        }
        let next = node.children[0];
        if tree.node(next)?.children.len() >= 2 {
            break; // nested divergence terminates the window, excluded
        }
        out.push(tree.node(next)?.representative_text.clone());
        current = next;
    }
    Ok(out)
}

/// Terminal multi-way packet over surviving full lineages. Duplicate leaf
/// ids are dropped, order preserved.
pub fn build_review_packet(
    tree: &ReasoningTree,
    question: &str,
    lineages: &[u64],
) -> Result<ConsensusReviewPacket> {
    let mut seen = Vec::new();
    for &l in lineages {
        if !seen.contains(&l) {
            seen.push(l);
        }
    }
    if seen.len() < 2 {
        return Err(Error::TooFewLineages(seen.len()));
    }
    let mut candidates = Vec::new();
    for leaf in seen {
        candidates.push(ReviewCandidate {
            lineage_id: leaf,
            trace_text: tree.path_texts(leaf)?,
            final_answer: tree.leaf_answers.get(&leaf).cloned(),
            support_size: tree.node(leaf)?.support.len(),
        });
    }
    Ok(ConsensusReviewPacket {
        question: question.to_string(),
        candidates,
    })
}

fn branch_letter(i: usize) -> char {
    (b'A' + (i as u8)) as char
}

fn support_phrase(n: usize) -> String {
    if n == 1 {
        "supported by 1 agent".to_string()
    } else {
        format!("supported by {n} agents")
    }
}

fn type_hint(dtype: DivergenceType) -> &'static str {
    match dtype {
        DivergenceType::Early => {
            "EARLY -- the branches disagree on overall method; weigh logical soundness and constraint adherence most heavily."
        }
        DivergenceType::Late => {
            "LATE -- the branches share an approach and disagree on execution; weigh factual and arithmetic accuracy most heavily."
        }
    }
}

/// Deterministic rendering of a divergence packet into judge-facing text.
pub fn render_packet(p: &DivergencePacket, rubric: &Rubric) -> Result<String> {
    rubric.validate()?;
    let mut out = String::new();
    out.push_str("You are auditing a disagreement between reasoning agents.\n");
    out.push_str(&format!("QUESTION: {}\n", p.question));
    out.push_str(&format!("DIVERGENCE TYPE: {}\n", type_hint(p.dtype)));
    out.push_str(&format!("RUBRIC: {}.\n", rubric.criteria_line()));
    out.push_str("SHARED REASONING SO FAR:\n");
    if p.prefix.is_empty() {
        out.push_str("  (the branches disagree from the start)\n");
    } else {
        for (i, step) in p.prefix.iter().enumerate() {
            out.push_str(&format!("  {}. {step}\n", i + 1));
        }
    }
    out.push_str("BRANCHES:\n");
    for (i, b) in p.branches.iter().enumerate() {
        let letter = branch_letter(i);
        if p.include_support_hints {
            out.push_str(&format!(
                "BRANCH {letter} ({}):\n",
                support_phrase(b.support_size)
            ));
        } else {
            out.push_str(&format!("BRANCH {letter}:\n"));
        }
        for line in &b.evidence {
            out.push_str(&format!("  - {line}\n"));
        }
    }
    out.push_str(REPLY_GRAMMAR);
    Ok(out)
}

/// Deterministic rendering of a terminal review packet.
pub fn render_review_packet(p: &ConsensusReviewPacket, rubric: &Rubric) -> Result<String> {
    rubric.validate()?;
    let mut out = String::new();
    out.push_str("You are selecting the most reliable complete reasoning chain.\n");
    out.push_str(&format!("QUESTION: {}\n", p.question));
    out.push_str(&format!("RUBRIC: {}.\n", rubric.criteria_line()));
    out.push_str("CANDIDATES:\n");
    for (i, c) in p.candidates.iter().enumerate() {
        let letter = branch_letter(i);
        out.push_str(&format!(
            "CANDIDATE {letter} ({}):\n",
            support_phrase(c.support_size)
        ));
        for line in &c.trace_text {
            out.push_str(&format!("  - {line}\n"));
        }
        let answer = c
            .final_answer
            .as_ref()
            .map(|a| a.canonical.clone())
            .unwrap_or_else(|| "(none)".to_string());
        out.push_str(&format!("  FINAL ANSWER: {answer}\n"));
    }
    out.push_str(REPLY_GRAMMAR);
    Ok(out)
}

/// Approximate token count: whitespace-separated tokens count one each,
/// except tokens made purely of punctuation which count per character.
pub fn estimate_tokens(text: &str) -> usize {
    text.split_whitespace()
        .map(|tok| {
            if tok.chars().all(|c| c.is_ascii_punctuation()) {
                tok.chars().count()
            } else {
                1
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atomize::{atomize_rule_based, Trace};
    use crate::embed::HashingEmbedder;
    use crate::slate::{normalize_answer, AgentOutput};
    use crate::tree::{build_tree, TreeConfig, ROOT_ID};
    use std::collections::BTreeMap;

    fn trace(agent: &str, text: &str) -> Trace {
        atomize_rule_based(&AgentOutput {
            agent_id: agent.into(),
            text: text.into(),
            answer: None,
        })
        .unwrap()
    }

    fn answers(pairs: &[(&str, &str)]) -> BTreeMap<String, crate::slate::NormalizedAnswer> {
        pairs
            .iter()
            .map(|(a, v)| (a.to_string(), normalize_answer(v)))
            .collect()
    }

    fn trie_tree(texts: &[(&str, &str, &str)]) -> ReasoningTree {
        // (agent, text, answer) with tau above 1 so every trace is a branch
        let traces: Vec<Trace> = texts.iter().map(|(a, t, _)| trace(a, t)).collect();
        let ans: Vec<(&str, &str)> = texts.iter().map(|(a, _, v)| (*a, *v)).collect();
        build_tree(
            &traces,
            &answers(&ans),
            TreeConfig {
                tau: 1.01,
                ..TreeConfig::default()
            },
            &HashingEmbedder::default(),
        )
        .unwrap()
    }

    #[test]
    fn root_cdp_leaf_children() {
        let tree = trie_tree(&[
            ("a0", "one complete sentence here", "1"),
            ("a1", "an entirely different thought", "2"),
        ]);
        let p = build_packet(&tree, ROOT_ID, "q?", 3, 3, true).unwrap();
        assert!(p.prefix.is_empty());
        assert_eq!(p.branches.len(), 2);
        for b in &p.branches {
            assert_eq!(b.evidence.len(), 1);
        }
    }

    #[test]
    fn window_truncates_at_k() {
        // one agent with a 6-step chain, another diverging at the root
        let long = "Alpha beta gamma delta epsilon. Zeta eta theta iota kappa. \
                    Lambda mu nu xi omicron. Pi rho sigma tau upsilon. \
                    Phi chi psi omega alef. Bet gimel dalet he vav.";
        let tree = trie_tree(&[("a0", long, "1"), ("a1", "other path text entirely", "2")]);
        let p = build_packet(&tree, ROOT_ID, "q?", 3, 3, true).unwrap();
        assert_eq!(p.branches[0].evidence.len(), 3);
        assert_eq!(p.branches[1].evidence.len(), 1);
    }

    #[test]
    fn window_stops_before_nested_cdp() {
        // manual walk: after the root split one branch carries a 3-step
        // shared spine whose last node splits again; the window includes
        // the 2 steps before that nested divergence and excludes it
        let s1 = "Restate the puzzle in plain language before anything.";
        let s2 = "Gather every numeric quantity mentioned by the prompt.";
        let s3 = "Choose which arithmetic operation connects those values.";
        let traces = vec![
            trace("a0", &format!("{s1} {s2} {s3} Multiply them together for the final figure.")),
            trace("a1", &format!("{s1} {s2} {s3} Subtract the smaller from the larger instead.")),
            trace("a2", "An unrelated geometric construction solves everything differently."),
        ];
        let tree = build_tree(
            &traces,
            &answers(&[("a0", "1"), ("a1", "2"), ("a2", "3")]),
            TreeConfig::default(),
            &HashingEmbedder::default(),
        )
        .unwrap();
        let cdps = tree.find_cdps();
        assert!(cdps.contains(&ROOT_ID));
        let p = build_packet(&tree, ROOT_ID, "q?", 3, 3, true).unwrap();
        // shared spine is s1, s2, then s3 splits: window is [s1, s2]
        let shared_branch = p
            .branches
            .iter()
            .find(|b| b.support_size == 2)
            .expect("branch shared by a0 and a1");
        assert_eq!(shared_branch.evidence.len(), 2);
        assert_eq!(shared_branch.evidence, vec![s1.to_string(), s2.to_string()]);
    }

    #[test]
    fn non_cdp_errors() {
        let tree = trie_tree(&[
            ("a0", "one complete sentence here", "1"),
            ("a1", "an entirely different thought", "2"),
        ]);
        assert!(matches!(
            build_packet(&tree, 1, "q?", 3, 3, true),
            Err(Error::NotDivergence(1))
        ));
    }

    #[test]
    fn review_packet_dedupes_preserving_order() {
        let tree = trie_tree(&[
            ("a0", "one complete sentence here", "1"),
            ("a1", "an entirely different thought", "2"),
        ]);
        let leaves: Vec<u64> = tree.leaves().iter().map(|(id, _)| *id).collect();
        let p = build_review_packet(&tree, "q?", &[leaves[0], leaves[1], leaves[0]]).unwrap();
        assert_eq!(p.candidates.len(), 2);
        assert_eq!(p.candidates[0].lineage_id, leaves[0]);
        assert!(matches!(
            build_review_packet(&tree, "q?", &[leaves[0], leaves[0]]),
            Err(Error::TooFewLineages(1))
        ));
    }

    #[test]
    fn review_candidates_repeat_shared_prefix() {
        let shared = "Common first reasoning step for everyone involved.";
        let traces = vec![
            trace("a0", &format!("{shared} Unique alpha continuation follows here.")),
            trace("a1", &format!("{shared} Unique beta continuation follows here.")),
        ];
        let tree = build_tree(
            &traces,
            &answers(&[("a0", "1"), ("a1", "2")]),
            TreeConfig::default(),
            &HashingEmbedder::default(),
        )
        .unwrap();
        let leaves: Vec<u64> = tree.leaves().iter().map(|(id, _)| *id).collect();
        let p = build_review_packet(&tree, "q?", &leaves).unwrap();
        for c in &p.candidates {
            // no factoring: each candidate's text starts with the prefix
            assert_eq!(c.trace_text[0], shared);
            assert_eq!(c.trace_text, tree.path_texts(c.lineage_id).unwrap());
        }
    }

    #[test]
    fn render_hint_semantics() {
        let traces = vec![
            trace("a0", "one complete sentence here"),
            trace("a1", "one complete sentence here"),
            trace("a2", "an entirely different thought"),
        ];
        let tree = build_tree(
            &traces,
            &answers(&[("a0", "5"), ("a1", "5"), ("a2", "7")]),
            TreeConfig::default(),
            &HashingEmbedder::default(),
        )
        .unwrap();
        let on = build_packet(&tree, ROOT_ID, "q?", 3, 3, true).unwrap();
        let off = build_packet(&tree, ROOT_ID, "q?", 3, 3, false).unwrap();
        let r_on = render_packet(&on, &Rubric::default()).unwrap();
        let r_off = render_packet(&off, &Rubric::default()).unwrap();
        assert!(r_on.contains("supported by 2 agents"));
        assert!(r_on.contains("supported by 1 agent)"));
        assert!(!r_off.contains("supported by"));
    }

    #[test]
    fn render_is_deterministic() {
        let tree = trie_tree(&[
            ("a0", "one complete sentence here", "1"),
            ("a1", "an entirely different thought", "2"),
        ]);
        let p = build_packet(&tree, ROOT_ID, "q?", 3, 3, true).unwrap();
        let a = render_packet(&p, &Rubric::default()).unwrap();
        let b = render_packet(&p, &Rubric::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn render_golden() {
        let tree = trie_tree(&[
            ("a0", "add three and four to get seven", "7"),
            ("a1", "multiply three by four to get twelve", "12"),
        ]);
        let p = build_packet(&tree, ROOT_ID, "What is 3 plus 4?", 3, 3, true).unwrap();
        let rendered = render_packet(&p, &Rubric::default()).unwrap();
        let expected = "\
You are auditing a disagreement between reasoning agents.
QUESTION: What is 3 plus 4?
DIVERGENCE TYPE: EARLY -- the branches disagree on overall method; weigh logical soundness and constraint adherence most heavily.
RUBRIC: factual accuracy; logical soundness; constraint adherence.
SHARED REASONING SO FAR:
  (the branches disagree from the start)
BRANCHES:
BRANCH A (supported by 1 agent):
  - add three and four to get seven
BRANCH B (supported by 1 agent):
  - multiply three by four to get twelve
Reply with exactly three lines:
SELECTED: <branch letter>
CONFIDENCE: <decimal between 0 and 1>
RATIONALE: <one sentence grounded in the evidence>
";
        assert_eq!(rendered, expected);
    }

    #[test]
    fn empty_rubric_rejected() {
        let rubric = Rubric {
            fact: false,
            logic: false,
            constraint: false,
        };
        assert!(rubric.validate().is_err());
    }

    #[test]
    fn token_counter_basics() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("a b c"), 3);
        assert_eq!(estimate_tokens("hello, world !"), 3);
    }

    #[test]
    fn token_counter_matches_reference() {
        // independent second implementation of the same counting rule
        fn reference(text: &str) -> usize {
            let mut count = 0;
            for tok in text.split(char::is_whitespace) {
                if tok.is_empty() {
                    continue;
                }
                let punct_only = tok.chars().all(|c| c.is_ascii_punctuation());
                count += if punct_only { tok.chars().count() } else { 1 };
            }
            count
        }
        let paragraph = "First , we add 3.5 and 4 ; then -- carefully ! -- we \
                         divide the total by two , obtaining the final value .";
        assert_eq!(estimate_tokens(paragraph), reference(paragraph));
    }

    #[test]
    fn token_counter_monotone_in_length() {
        let base = "some words here";
        let longer = format!("{base} and even more words");
        assert!(estimate_tokens(&longer) > estimate_tokens(base));
    }

    #[test]
    fn packet_smaller_than_full_slate() {
        // long shared prefix, branches longer than the window: the rendered
        // packet must undercut the concatenated full traces
        let prefix = "We restate the problem in our own words first. \
                      We list every quantity given in the statement. \
                      We convert all units into a single system. \
                      We write down the governing equation carefully. \
                      We isolate the unknown variable on one side. \
                      We substitute each known quantity into place. \
                      We double check the dimensional consistency again. \
                      We simplify the constants before any arithmetic. \
                      We estimate a rough magnitude for sanity checking. \
                      We prepare the final computation in clean form.";
        let tail_a = "Now multiply both sides by the scaling factor. \
                      Afterwards simplify that awkward fraction completely. \
                      Next examine whether boundary conditions still hold. \
                      Verify every sign convention along the way. \
                      Round the outcome to two decimal places.";
        let tail_b = "Instead take logarithms across the relation entirely. \
                      Differentiate with respect to the hidden parameter. \
                      Integrate the expression over the allowed domain. \
                      Collapse symmetric terms into one compact sum. \
                      State the exact closed form answer verbatim.";
        let t0 = format!("{prefix} {tail_a}");
        let t1 = format!("{prefix} {tail_b}");
        let traces = vec![trace("a0", &t0), trace("a1", &t1)];
        let tree = build_tree(
            &traces,
            &answers(&[("a0", "1"), ("a1", "2")]),
            TreeConfig::default(),
            &HashingEmbedder::default(),
        )
        .unwrap();
        let cdps = tree.find_cdps();
        assert_eq!(cdps.len(), 1);
        let p = build_packet(&tree, cdps[0], "q?", 3, 3, true).unwrap();
        assert!(!p.prefix.is_empty());
        let rendered = render_packet(&p, &Rubric::default()).unwrap();
        let full = format!("{t0}\n{t1}");
        assert!(
            estimate_tokens(&rendered) < estimate_tokens(&full),
            "rendered {} tokens vs full {} tokens\n{rendered}",
            estimate_tokens(&rendered),
            estimate_tokens(&full)
        );
    }
}
