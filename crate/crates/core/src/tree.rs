//! The reasoning tree: embedding-guided incremental insertion of atomized
//! traces, centroid EMA maintenance, support-set attribution, divergence
//! detection, and localization of the first point of disagreement.
//!
//! Shared reasoning merges into single chains; substantive disagreements
//! branch. Insertion order is slate order and is semantically significant;
//! a built tree is immutable and safe to share for concurrent reads.

use std::collections::BTreeMap;

use serde_json::json;

use crate::atomize::Trace;
use crate::embed::{cosine, Embedder, Embedding};
use crate::error::{Error, Result};
use crate::slate::NormalizedAnswer;

pub const ROOT_ID: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceType {
    Early,
    Late,
}

impl std::fmt::Display for DivergenceType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DivergenceType::Early => f.write_str("EARLY"),
            DivergenceType::Late => f.write_str("LATE"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub node_id: u64,
    /// Absent only on the virtual root.
    pub centroid: Option<Embedding>,
    /// Agents whose paths traverse this node, in first-visit order.
    pub support: Vec<String>,
    /// Text of the first step integrated into this node.
    pub representative_text: String,
    /// Children in creation order; ids are strictly increasing.
    pub children: Vec<u64>,
    pub depth: usize,
    pub integrated_count: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct TreeConfig {
    /// Similarity threshold for path integration; > 1 forces a pure trie.
    pub tau: f64,
    /// Centroid EMA factor in (0, 1]; 1 replaces the centroid outright.
    pub rho_ema: f64,
    /// Depth below which a divergence counts as early.
    pub delta_depth: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            tau: 0.82,
            rho_ema: 0.3,
            delta_depth: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReasoningTree {
    nodes: Vec<TreeNode>,
    /// Collapsed answer per terminal node (majority among agents ending
    /// there, ties to the earliest-inserted agent).
    pub leaf_answers: BTreeMap<u64, NormalizedAnswer>,
    /// Root-to-final-node path per agent, in insertion order.
    pub agent_paths: Vec<(String, Vec<u64>)>,
    pub config: TreeConfig,
}

/// Insert traces in order. At each position the step is compared against
/// the current node's children: max cosine >= tau integrates into the
/// argmax child (ties to the lowest node id) with a centroid EMA update
/// and re-normalization; otherwise a new child is created.
pub fn build_tree(
    traces: &[Trace],
    answers: &BTreeMap<String, NormalizedAnswer>,
    cfg: TreeConfig,
    embedder: &dyn Embedder,
) -> Result<ReasoningTree> {
    if traces.is_empty() {
        return Err(Error::NoTraces);
    }
    let mut nodes = vec![TreeNode {
        node_id: ROOT_ID,
        centroid: None,
        support: Vec::new(),
        representative_text: String::new(),
        children: Vec::new(),
        depth: 0,
        integrated_count: 0,
    }];
    let mut agent_paths: Vec<(String, Vec<u64>)> = Vec::new();

    for trace in traces {
        let agent = trace.agent_id.clone();
        let mut current = ROOT_ID;
        visit(&mut nodes, current, &agent);
        let mut path = vec![current];
        for step in &trace.steps {
            let h = embedder.embed(&step.text)?;
            let next = {
                let children = &nodes[current as usize].children;
                let mut best: Option<(u64, f64)> = None;
                for &cid in children {
                    let mu = nodes[cid as usize]
                        .centroid
                        .as_ref()
                        .expect("non-root nodes carry centroids");
                    let sim = cosine(&h, mu)?;
                    // strict > keeps the lowest node id on ties
                    if best.is_none_or(|(_, b)| sim > b) {
                        best = Some((cid, sim));
                    }
                }
                match best {
                    Some((cid, sim)) if sim >= cfg.tau => {
                        integrate(&mut nodes, cid, &h, cfg.rho_ema)?;
                        cid
                    }
                    _ => new_child(&mut nodes, current, h, &step.text),
                }
            };
            visit(&mut nodes, next, &agent);
            path.push(next);
            current = next;
        }
        agent_paths.push((agent, path));
    }

    let leaf_answers = collapse_leaf_answers(&agent_paths, answers);
    Ok(ReasoningTree {
        nodes,
        leaf_answers,
        agent_paths,
        config: cfg,
    })
}

fn visit(nodes: &mut [TreeNode], id: u64, agent: &str) {
    let support = &mut nodes[id as usize].support;
    if !support.iter().any(|a| a == agent) {
        support.push(agent.to_string());
    }
}

fn integrate(nodes: &mut [TreeNode], id: u64, h: &Embedding, rho: f64) -> Result<()> {
    let node = &mut nodes[id as usize];
    let mu = node.centroid.as_ref().expect("centroid present");
    let blended: Vec<f64> = mu
        .values()
        .iter()
        .zip(h.values())
        .map(|(m, x)| (1.0 - rho) * m + rho * x)
        .collect();
    node.centroid = Some(Embedding::from_values(blended)?);
    node.integrated_count += 1;
    Ok(())
}

fn new_child(nodes: &mut Vec<TreeNode>, parent: u64, h: Embedding, text: &str) -> u64 {
    let id = nodes.len() as u64;
    let depth = nodes[parent as usize].depth + 1;
    nodes.push(TreeNode {
        node_id: id,
        centroid: Some(h),
        support: Vec::new(),
        representative_text: text.to_string(),
        children: Vec::new(),
        depth,
        integrated_count: 1,
    });
    nodes[parent as usize].children.push(id);
    id
}

fn collapse_leaf_answers(
    agent_paths: &[(String, Vec<u64>)],
    answers: &BTreeMap<String, NormalizedAnswer>,
) -> BTreeMap<u64, NormalizedAnswer> {
    // agents terminating at each node, in insertion order
    let mut terminators: BTreeMap<u64, Vec<&str>> = BTreeMap::new();
    for (agent, path) in agent_paths {
        let last = *path.last().expect("path includes root");
        terminators.entry(last).or_default().push(agent);
    }
    let mut out = BTreeMap::new();
    for (node, agents) in terminators {
        let voting: Vec<&NormalizedAnswer> = agents
            .iter()
            .filter_map(|a| answers.get(*a))
            .collect();
        if voting.is_empty() {
            continue;
        }
        // majority among terminating agents; ties resolve to the answer of
        // the earliest-inserted agent among the tied groups
        let mut best: Option<(&NormalizedAnswer, usize)> = None;
        for (i, candidate) in voting.iter().enumerate() {
            if voting[..i].iter().any(|prev| *prev == *candidate) {
                continue; // counted under an earlier representative
            }
            let count = voting.iter().filter(|v| **v == *candidate).count();
            if best.is_none_or(|(_, b)| count > b) {
                best = Some((candidate, count));
            }
        }
        if let Some((ans, _)) = best {
            out.insert(node, ans.clone());
        }
    }
    out
}

impl ReasoningTree {
    pub fn node(&self, id: u64) -> Result<&TreeNode> {
        self.nodes
            .get(id as usize)
            .ok_or(Error::UnknownNode(id))
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn is_cdp(&self, id: u64) -> bool {
        self.nodes
            .get(id as usize)
            .is_some_and(|n| n.children.len() >= 2)
    }

    /// Pre-order list of all nodes with at least two children.
    pub fn find_cdps(&self) -> Vec<u64> {
        let mut out = Vec::new();
        let mut stack = vec![ROOT_ID];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            if node.children.len() >= 2 {
                out.push(id);
            }
            for &c in node.children.iter().rev() {
                stack.push(c);
            }
        }
        out
    }

    /// Early iff depth(u) < delta.
    pub fn divergence_type(&self, u: u64, delta: usize) -> Result<DivergenceType> {
        let node = self.node(u)?;
        if node.children.len() < 2 {
            return Err(Error::NotDivergence(u));
        }
        Ok(if node.depth < delta {
            DivergenceType::Early
        } else {
            DivergenceType::Late
        })
    }

    /// Distinct terminal nodes over agent paths, with the number of agents
    /// terminating at each. Multiplicities sum to the number of agents.
    pub fn leaves(&self) -> Vec<(u64, usize)> {
        let mut counts: Vec<(u64, usize)> = Vec::new();
        for (_, path) in &self.agent_paths {
            let last = *path.last().unwrap();
            match counts.iter_mut().find(|(id, _)| *id == last) {
                Some((_, c)) => *c += 1,
                None => counts.push((last, 1)),
            }
        }
        counts
    }

    /// Number of distinct reasoning branches after deduplication.
    pub fn branch_count(&self) -> usize {
        self.leaves().len()
    }

    /// Does the subtree under `id` contain a terminal node labeled `ans`?
    fn subtree_bears(&self, id: u64, ans: &NormalizedAnswer) -> bool {
        if self.leaf_answers.get(&id).is_some_and(|a| a == ans) {
            return true;
        }
        self.nodes[id as usize]
            .children
            .iter()
            .any(|&c| self.subtree_bears(c, ans))
    }

    /// First point of disagreement: the minimum-depth divergence node with
    /// one child bearing only the gold answer and another bearing only the
    /// majority answer. Ties break to the lowest node id; so do the
    /// qualifying children. Absent when no purely separating node exists.
    pub fn locate_fpd(
        &self,
        gold: &NormalizedAnswer,
        majority: &NormalizedAnswer,
    ) -> Option<(u64, u64, u64)> {
        let mut best: Option<(usize, u64, u64, u64)> = None;
        for u in self.find_cdps() {
            let node = &self.nodes[u as usize];
            let mut b_gt = None;
            let mut b_err = None;
            for &c in &node.children {
                let has_gold = self.subtree_bears(c, gold);
                let has_maj = self.subtree_bears(c, majority);
                if has_gold && !has_maj && b_gt.is_none() {
                    b_gt = Some(c);
                }
                if has_maj && !has_gold && b_err.is_none() {
                    b_err = Some(c);
                }
            }
            if let (Some(g), Some(e)) = (b_gt, b_err) {
                let key = (node.depth, u, g, e);
                if best.is_none_or(|(d, id, _, _)| (node.depth, u) < (d, id)) {
                    best = Some(key);
                }
            }
        }
        best.map(|(_, u, g, e)| (u, g, e))
    }

    /// Representative texts along the root-to-`id` path, root excluded.
    pub fn path_texts(&self, id: u64) -> Result<Vec<String>> {
        let mut chain = Vec::new();
        let mut cur = self.node(id)?;
        while cur.node_id != ROOT_ID {
            chain.push(cur.representative_text.clone());
            let parent = self
                .nodes
                .iter()
                .find(|n| n.children.contains(&cur.node_id))
                .expect("non-root node has a parent");
            cur = parent;
        }
        chain.reverse();
        Ok(chain)
    }

    /// Deterministic indented text dump for debugging and golden files.
    pub fn dump_text(&self) -> String {
        let mut out = String::new();
        self.dump_node(ROOT_ID, 0, &mut out);
        out
    }

    fn dump_node(&self, id: u64, indent: usize, out: &mut String) {
        let node = &self.nodes[id as usize];
        let pad = "  ".repeat(indent);
        let label = if id == ROOT_ID {
            "<root>".to_string()
        } else {
            node.representative_text.clone()
        };
        let answer = self
            .leaf_answers
            .get(&id)
            .map(|a| format!(" => {a}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{pad}[{id}] {label} (support={}){answer}\n",
            node.support.len()
        ));
        for &c in &node.children {
            self.dump_node(c, indent + 1, out);
        }
    }

    /// JSON export for golden-file tests.
    pub fn dump_json(&self) -> serde_json::Value {
        let nodes: Vec<_> = self
            .nodes
            .iter()
            .map(|n| {
                json!({
                    "id": n.node_id,
                    "depth": n.depth,
                    "support": n.support,
                    "repr": n.representative_text,
                    "children": n.children,
                })
            })
            .collect();
        let leaf_answers: BTreeMap<String, String> = self
            .leaf_answers
            .iter()
            .map(|(k, v)| (k.to_string(), v.canonical.clone()))
            .collect();
        json!({ "nodes": nodes, "leaf_answers": leaf_answers })
    }
}
