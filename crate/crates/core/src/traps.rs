//! Mining preference triplets from majority-failure slates.
//!
//! A trap is a slate where the vote goes to a wrong answer while some
//! agent holds the gold one. At the first point of disagreement the packet
//! is rendered with support hints forced on, so the rejected completion is
//! exactly the tempting follow-the-crowd reply and the chosen completion
//! is the evidence-grounded minority pick.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::eval::{classify_regime, RegimeLabel};
use crate::judge::parse_judge_reply;
use crate::packet::{build_packet, render_packet, Rubric};
use crate::pipeline::prepare_slate;
use crate::slate::AgentSlate;
use crate::tree::{build_tree, TreeConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrapMeta {
    /// Agents supporting the gold-bearing branch.
    pub support_gt: usize,
    /// Agents supporting the majority-error branch.
    pub support_err: usize,
    pub fpd_depth: usize,
    pub dtype: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreferenceTriplet {
    pub id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub meta: TrapMeta,
}

/// Why slates were dropped during mining.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct SkipStats {
    pub no_gold: usize,
    pub not_minority_correct: usize,
    pub no_separating_divergence: usize,
    pub mined: usize,
}

fn letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

fn chosen_reply(l: char) -> String {
    format!(
        "SELECTED: {l}\nCONFIDENCE: 0.9\nRATIONALE: this branch follows from the shared steps and its arithmetic checks out.\n"
    )
}

fn rejected_reply(l: char) -> String {
    format!(
        "SELECTED: {l}\nCONFIDENCE: 0.9\nRATIONALE: most agents took this branch, so it is the safer consensus pick.\n"
    )
}

/// Mine one triplet per qualifying slate. Support hints are always
/// rendered so the rejected reply's crowd appeal is visible in the prompt.
pub fn mine_traps(
    slates: &[AgentSlate],
    tree_cfg: TreeConfig,
    window_k: usize,
    rubric: &Rubric,
    embedder: &dyn Embedder,
) -> Result<(Vec<PreferenceTriplet>, SkipStats)> {
    let mut out = Vec::new();
    let mut stats = SkipStats::default();
    for slate in slates {
        let Some(gold) = slate.gold() else {
            stats.no_gold += 1;
            continue;
        };
        if classify_regime(slate)? != RegimeLabel::MinC {
            stats.not_minority_correct += 1;
            continue;
        }
        let (traces, answers) = prepare_slate(slate)?;
        let majority = crate::pipeline::majority_answer(&answers)
            .expect("MinC regime implies a unique majority");
        let tree = build_tree(&traces, &answers, tree_cfg, embedder)?;
        let Some((fpd, b_gt, b_err)) = tree.locate_fpd(&gold, &majority) else {
            stats.no_separating_divergence += 1;
            continue;
        };
        let packet = build_packet(
            &tree,
            fpd,
            &slate.question,
            window_k,
            tree_cfg.delta_depth,
            true,
        )?;
        let idx_of = |id: u64| {
            packet
                .branches
                .iter()
                .position(|b| b.child_id == id)
                .expect("separating child is a branch of its own divergence")
        };
        let (gi, ei) = (idx_of(b_gt), idx_of(b_err));
        out.push(PreferenceTriplet {
            id: slate.id.clone(),
            prompt: render_packet(&packet, rubric)?,
            chosen: chosen_reply(letter(gi)),
            rejected: rejected_reply(letter(ei)),
            meta: TrapMeta {
                support_gt: packet.branches[gi].support_size,
                support_err: packet.branches[ei].support_size,
                fpd_depth: tree.node(fpd)?.depth,
                dtype: packet.dtype.to_string(),
            },
        });
        stats.mined += 1;
    }
    Ok((out, stats))
}

/// Both completions must parse under the reply grammar against the
/// triplet's own prompt and must select different branches.
pub fn replay_valid(t: &PreferenceTriplet) -> bool {
    let n = t
        .prompt
        .lines()
        .filter(|l| l.starts_with("BRANCH "))
        .count();
    let (Ok(c), Ok(r)) = (
        parse_judge_reply(&t.chosen, n),
        parse_judge_reply(&t.rejected, n),
    ) else {
        return false;
    };
    c.selected != r.selected
}

pub fn save_triplets(triplets: &[PreferenceTriplet], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in triplets {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_triplets(path: &Path) -> Result<Vec<PreferenceTriplet>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: PreferenceTriplet = serde_json::from_str(&line)
            .map_err(|source| Error::CorpusParse { line: i + 1, source })?;
        out.push(t);
    }
    Ok(out)
}
