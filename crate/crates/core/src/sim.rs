//! Monte Carlo checks for correlated voting.
//!
//! Votes use a common-shock construction: with probability rho every agent
//! copies one shared Bernoulli(p) draw, otherwise each draws independently.
//! This yields exact pairwise correlation rho at marginal p, so the
//! variance of the vote mean can be compared against the closed form
//! p(1-p)(1 + (N-1) rho) / N. Trial randomness is keyed by (seed, trial),
//! making parallel and serial execution bit-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct JuryConfig {
    pub n_agents: usize,
    /// Marginal probability that a single vote is correct.
    pub p: f64,
    /// Pairwise correlation between votes, in [0, 1].
    pub rho: f64,
    pub trials: usize,
    pub seed: u64,
}

impl JuryConfig {
    fn validate(&self) -> Result<()> {
        let check = |key: &str, ok: bool, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config {
                    key: key.to_string(),
                    reason: reason.to_string(),
                })
            }
        };
        check("n_agents", self.n_agents >= 1, "need at least one agent")?;
        check("p", (0.0..=1.0).contains(&self.p), "must lie in [0,1]")?;
        check("rho", (0.0..=1.0).contains(&self.rho), "must lie in [0,1]")?;
        check("trials", self.trials >= 1, "need at least one trial")
    }
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&trial.to_le_bytes());
    key[16..24].copy_from_slice(b"jurysimu");
    ChaCha8Rng::from_seed(key)
}

/// One trial's votes under the common-shock construction.
pub fn sample_votes(cfg: &JuryConfig, trial: u64) -> Vec<bool> {
    let mut rng = trial_rng(cfg.seed, trial);
    let shared_mode = rng.gen::<f64>() < cfg.rho;
    let shared: bool = rng.gen::<f64>() < cfg.p;
    (0..cfg.n_agents)
        .map(|_| {
            let own = rng.gen::<f64>() < cfg.p;
            if shared_mode {
                shared
            } else {
                own
            }
        })
        .collect()
}

/// Closed-form variance of the vote mean.
pub fn theory_var(n: usize, p: f64, rho: f64) -> f64 {
    p * (1.0 - p) * (1.0 + (n as f64 - 1.0) * rho) / n as f64
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct VarEstimate {
    pub empirical: f64,
    pub theory: f64,
    /// Standard error of the empirical variance estimate.
    pub std_err: f64,
    pub mean: f64,
}

/// Estimate Var(mean vote) over `trials` independent juries.
pub fn estimate_var_mean(cfg: &JuryConfig) -> Result<VarEstimate> {
    cfg.validate()?;
    let means: Vec<f64> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| {
            let votes = sample_votes(cfg, t);
            votes.iter().filter(|v| **v).count() as f64 / cfg.n_agents as f64
        })
        .collect();
    let t = cfg.trials as f64;
    let mean = means.iter().sum::<f64>() / t;
    let sq_dev: Vec<f64> = means.iter().map(|m| (m - mean).powi(2)).collect();
    let empirical = sq_dev.iter().sum::<f64>() / t;
    // SE of the variance: std of squared deviations over sqrt(trials)
    let var_of_sq = sq_dev
        .iter()
        .map(|s| (s - empirical).powi(2))
        .sum::<f64>()
        / t;
    Ok(VarEstimate {
        empirical,
        theory: theory_var(cfg.n_agents, cfg.p, cfg.rho),
        std_err: (var_of_sq / t).sqrt(),
        mean,
    })
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ConfabulationOutcome {
    pub mv_accuracy: f64,
    pub auditor_accuracy: f64,
    pub trials: usize,
}

/// Correlated-error regime: `n_err` agents share a wrong answer, `n_cor`
/// hold the right one. The vote is then wrong by construction, while an
/// auditor that discriminates branches with probability `q` recovers the
/// minority. Requires a strict wrong majority.
pub fn mv_vs_auditor(
    n_err: usize,
    n_cor: usize,
    q: f64,
    trials: usize,
    seed: u64,
) -> Result<ConfabulationOutcome> {
    if n_err <= n_cor || n_cor == 0 {
        return Err(Error::BadConfabulationRegime { n_err, n_cor });
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config {
            key: "q".to_string(),
            reason: "must lie in [0,1]".to_string(),
        });
    }
    let hits: usize = (0..trials as u64)
        .into_par_iter()
        .filter(|&t| {
            let mut rng = trial_rng(seed, t);
            rng.gen::<f64>() < q
        })
        .count();
    Ok(ConfabulationOutcome {
        mv_accuracy: 0.0, // the wrong majority always outvotes the minority
        auditor_accuracy: hits as f64 / trials as f64,
        trials,
    })
}

pub const SWEEP_CSV_HEADER: &str = "n,p,rho,var_empirical,var_theory,std_err";

/// Variance sweep over a grid, rendered as CSV.
pub fn sweep_csv(
    ns: &[usize],
    ps: &[f64],
    rhos: &[f64],
    trials: usize,
    seed: u64,
) -> Result<String> {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for &n in ns {
        for &p in ps {
            for &rho in rhos {
                let est = estimate_var_mean(&JuryConfig {
                    n_agents: n,
                    p,
                    rho,
                    trials,
                    seed,
                })?;
                out.push_str(&format!(
                    "{n},{p},{rho},{},{},{}\n",
                    est.empirical, est.theory, est.std_err
                ));
            }
        }
    }
    Ok(out)
}
