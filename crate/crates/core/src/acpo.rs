//! Preference-pair loss with analytic gradients, plus a toy linear model
//! trained on mined consensus traps.
//!
//! The loss is the DPO form: with margin
//! m = (logp_w - ref_w) - (logp_l - ref_l), the loss is -log sigma(beta m),
//! computed as softplus(-beta m) for numerical stability. The toy model
//! scores a judge reply with three hand-built features and uses the score
//! directly as its log-probability proxy; the reference model is the zero
//! vector, so reference terms and the bias cancel inside the margin.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::judge::parse_judge_reply;
use crate::packet::estimate_tokens;
use crate::traps::PreferenceTriplet;

fn softplus(x: f64) -> f64 {
    // max(x, 0) + ln(1 + exp(-|x|)), exact and overflow-free
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_finite(v: f64, name: &'static str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(name))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossInputs {
    pub beta: f64,
    pub logp_w: f64,
    pub logp_l: f64,
    pub ref_w: f64,
    pub ref_l: f64,
}

impl LossInputs {
    fn validate(&self) -> Result<f64> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::BadBeta(self.beta));
        }
        check_finite(self.logp_w, "logp_w")?;
        check_finite(self.logp_l, "logp_l")?;
        check_finite(self.ref_w, "ref_w")?;
        check_finite(self.ref_l, "ref_l")?;
        Ok((self.logp_w - self.ref_w) - (self.logp_l - self.ref_l))
    }
}

/// -log sigma(beta m). Zero margin gives ln 2.
pub fn acpo_loss(inp: &LossInputs) -> Result<f64> {
    let m = inp.validate()?;
    Ok(softplus(-inp.beta * m))
}

/// Analytic gradients with respect to (logp_w, logp_l). They are equal in
/// magnitude and opposite in sign.
pub fn acpo_grad(inp: &LossInputs) -> Result<(f64, f64)> {
    let m = inp.validate()?;
    let g = inp.beta * (1.0 - sigmoid(inp.beta * m));
    Ok((-g, g))
}

/// Reply features: support count of the selected branch, an
/// evidence-grounded rationale flag, and reply length in tokens.
pub const FEATURE_DIM: usize = 3;

/// Phrases marking a rationale that argues from agent counts rather than
/// from the evidence itself.
const CROWD_PHRASES: [&str; 3] = ["most agents", "consensus", "majority"];

pub fn reply_features(t: &PreferenceTriplet, reply: &str) -> Result<[f64; FEATURE_DIM]> {
    let n = t
        .prompt
        .lines()
        .filter(|l| l.starts_with("BRANCH "))
        .count();
    let d = parse_judge_reply(reply, n.max(1))?;
    let support = branch_support(&t.prompt, d.selected).unwrap_or(1) as f64;
    let crowd = CROWD_PHRASES
        .iter()
        .any(|p| d.rationale.to_lowercase().contains(p));
    let evidence_grounded = if crowd { 0.0 } else { 1.0 };
    Ok([support, evidence_grounded, estimate_tokens(reply) as f64])
}

/// Support count parsed back out of the rendered hint line for branch `i`.
fn branch_support(prompt: &str, i: usize) -> Option<usize> {
    let tag = format!("BRANCH {} (supported by ", (b'A' + i as u8) as char);
    let line = prompt.lines().find(|l| l.starts_with(&tag))?;
    line[tag.len()..].split_whitespace().next()?.parse().ok()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyPreferenceModel {
    pub weights: [f64; FEATURE_DIM],
    pub bias: f64,
    pub beta: f64,
}

impl ToyPreferenceModel {
    pub fn zeros(beta: f64) -> Self {
        ToyPreferenceModel {
            weights: [0.0; FEATURE_DIM],
            bias: 0.0,
            beta,
        }
    }

    /// Log-probability proxy for producing `reply` given the prompt.
    pub fn score(&self, t: &PreferenceTriplet, reply: &str) -> Result<f64> {
        let x = reply_features(t, reply)?;
        Ok(self.weights.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + self.bias)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: ToyPreferenceModel,
    pub history: Vec<EpochStats>,
}

pub const MIN_TRIPLETS: usize = 10;

/// Full-batch gradient descent on the preference loss. The reference model
/// is all zeros, so the margin reduces to the feature-difference score and
/// the bias receives no gradient.
pub fn train_toy(
    triplets: &[PreferenceTriplet],
    beta: f64,
    lr: f64,
    epochs: usize,
) -> Result<TrainOutcome> {
    if triplets.len() < MIN_TRIPLETS {
        return Err(Error::TooFewTriplets {
            need: MIN_TRIPLETS,
            got: triplets.len(),
        });
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::BadBeta(beta));
    }
    let diffs: Vec<[f64; FEATURE_DIM]> = triplets
        .iter()
        .map(|t| {
            let w = reply_features(t, &t.chosen)?;
            let l = reply_features(t, &t.rejected)?;
            Ok([w[0] - l[0], w[1] - l[1], w[2] - l[2]])
        })
        .collect::<Result<_>>()?;
    if diffs.iter().all(|d| d.iter().all(|v| *v == 0.0)) {
        return Err(Error::NonSeparable);
    }

    let mut model = ToyPreferenceModel::zeros(beta);
    let mut history = Vec::with_capacity(epochs);
    let n = diffs.len() as f64;
    for epoch in 0..epochs {
        let mut grad = [0.0; FEATURE_DIM];
        let mut loss_sum = 0.0;
        let mut correct = 0.0;
        for d in &diffs {
            let m: f64 = model.weights.iter().zip(d).map(|(w, v)| w * v).sum();
            loss_sum += softplus(-beta * m);
            correct += match m.partial_cmp(&0.0) {
                Some(std::cmp::Ordering::Greater) => 1.0,
                Some(std::cmp::Ordering::Equal) => 0.5,
                _ => 0.0,
            };
            let g = -beta * (1.0 - sigmoid(beta * m));
            for (gi, di) in grad.iter_mut().zip(d) {
                *gi += g * di;
            }
        }
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= lr * g / n;
        }
        history.push(EpochStats {
            epoch,
            mean_loss: loss_sum / n,
            accuracy: correct / n,
        });
    }
    Ok(TrainOutcome { model, history })
}

/// Fraction of triplets where the model scores chosen above rejected;
/// exact ties count one half.
pub fn eval_preference_accuracy(
    model: &ToyPreferenceModel,
    triplets: &[PreferenceTriplet],
) -> Result<f64> {
    if triplets.is_empty() {
        return Ok(0.0);
    }
    let mut score = 0.0;
    for t in triplets {
        let w = model.score(t, &t.chosen)?;
        let l = model.score(t, &t.rejected)?;
        score += match w.partial_cmp(&l) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Equal) => 0.5,
            _ => 0.0,
        };
    }
    Ok(score / triplets.len() as f64)
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,mean_loss,accuracy\n");
    for h in history {
        out.push_str(&format!("{},{},{}\n", h.epoch, h.mean_loss, h.accuracy));
    }
    out
}
