//! Synthetic corpus generators shared by the integration suites. Sentence
//! fixtures use controlled vocabulary so the hashing embedder keeps
//! intended branches apart (pairwise cosine below the default threshold)
//! while identical steps merge exactly.

use agent_auditor::slate::{AgentOutput, AgentSlate};

pub const GOLD_ANSWER: &str = "7";
pub const WRONG_ANSWER: &str = "5";

pub const GOLD_TRACE: &str =
    "Count each distinct object exactly once before totalling anything up.";
pub const WRONG_TRACE: &str =
    "Add every number that appears and call the resulting sum the answer.";

fn agent(id: &str, text: &str, answer: &str) -> AgentOutput {
    AgentOutput {
        agent_id: id.to_string(),
        text: text.to_string(),
        answer: Some(answer.to_string()),
    }
}

/// Minority-correct slate: `n_wrong` agents share one wrong rationale and
/// answer, a single agent holds the gold answer on a distinct branch.
pub fn minc_slate(id: &str, n_wrong: usize) -> AgentSlate {
    assert!(n_wrong >= 2, "a wrong majority needs at least 2 agents");
    let mut agents = vec![agent("g", GOLD_TRACE, GOLD_ANSWER)];
    for i in 0..n_wrong {
        agents.push(agent(&format!("w{i}"), WRONG_TRACE, WRONG_ANSWER));
    }
    AgentSlate {
        id: id.to_string(),
        question: "How many objects are in the collection?".to_string(),
        gold_answer: Some(GOLD_ANSWER.to_string()),
        agents,
    }
}

/// Majority-correct slate: two gold agents outvote one wrong agent.
pub fn majc_slate(id: &str) -> AgentSlate {
    AgentSlate {
        id: id.to_string(),
        question: "How many objects are in the collection?".to_string(),
        gold_answer: Some(GOLD_ANSWER.to_string()),
        agents: vec![
            agent("g0", GOLD_TRACE, GOLD_ANSWER),
            agent("g1", GOLD_TRACE, GOLD_ANSWER),
            agent("w0", WRONG_TRACE, WRONG_ANSWER),
        ],
    }
}

/// Deterministic interleaving of `n/2` MajC and `n/2` MinC instances; ids
/// carry the regime for readability.
pub fn mixed_corpus(n: usize) -> Vec<AgentSlate> {
    (0..n)
        .map(|i| {
            if i % 2 == 0 {
                majc_slate(&format!("majc-{i:04}"))
            } else {
                minc_slate(&format!("minc-{i:04}"), 2 + (i / 2) % 3)
            }
        })
        .collect()
}

const LONG_PREFIX: [&str; 10] = [
    "Begin by restating the problem in plain language first.",
    "List every quantity mentioned anywhere in the statement.",
    "Convert all measurements into one consistent unit system.",
    "Write down the governing relation between the quantities.",
    "Isolate the unknown variable on a single side.",
    "Substitute each known value into its proper place.",
    "Double check the dimensional consistency of the expression.",
    "Simplify the constants before doing any arithmetic.",
    "Estimate a rough magnitude as a sanity anchor.",
    "Prepare the final computation in a clean form.",
];

const GOLD_TAIL: [&str; 3] = [
    "Count each distinct object exactly once before totalling anything up.",
    "Exclude the duplicated entries from the running tally entirely.",
    "The careful census settles on seven genuine items.",
];

const WRONG_TAIL: [&str; 3] = [
    "Add every number that appears and call the resulting sum the answer.",
    "Ignore whether some figures describe the same item twice.",
    "That hasty aggregation lands on five as the total.",
];

/// Five agents sharing a ten-step prefix, then splitting into a wrong
/// three-agent tail and a gold two-agent tail. Designed so a divergence
/// packet is far smaller than the concatenated full traces.
pub fn long_prefix_slate(id: &str) -> AgentSlate {
    let prefix = LONG_PREFIX.join(" ");
    let gold_text = format!("{prefix} {}", GOLD_TAIL.join(" "));
    let wrong_text = format!("{prefix} {}", WRONG_TAIL.join(" "));
    AgentSlate {
        id: id.to_string(),
        question: "How many genuine items does the inventory hold?".to_string(),
        gold_answer: Some(GOLD_ANSWER.to_string()),
        agents: vec![
            agent("w0", &wrong_text, WRONG_ANSWER),
            agent("w1", &wrong_text, WRONG_ANSWER),
            agent("w2", &wrong_text, WRONG_ANSWER),
            agent("g0", &gold_text, GOLD_ANSWER),
            agent("g1", &gold_text, GOLD_ANSWER),
        ],
    }
}

const S1: &str = "Begin by reading the puzzle statement slowly and carefully.";
const S2: &str = "Identify which quantities the question actually demands.";
const G1: &str = "Track the flour and sugar amounts in separate columns.";
const W1: &str = "Lump every ingredient together into a single heap immediately.";
const G2: &str = "Scale only the flour column by the recipe multiplier.";
const X2: &str = "Guess an arbitrary ratio and abandon the careful bookkeeping.";

/// Two sequential divergences on the gold path: the first splits the gold
/// lineage from a two-agent wrong majority, the second splits gold from a
/// second distinct error. Greedy audit must win both adjudications; a
/// deferred beam only needs the terminal review.
pub fn two_cdp_slate(id: &str) -> AgentSlate {
    AgentSlate {
        id: id.to_string(),
        question: "How much flour does the scaled recipe need?".to_string(),
        gold_answer: Some(GOLD_ANSWER.to_string()),
        agents: vec![
            agent("g", &format!("{S1} {S2} {G1} {G2}"), GOLD_ANSWER),
            agent("w0", &format!("{S1} {S2} {W1}"), WRONG_ANSWER),
            agent("w1", &format!("{S1} {S2} {W1}"), WRONG_ANSWER),
            agent("x0", &format!("{S1} {S2} {G1} {X2}"), "6"),
        ],
    }
}
