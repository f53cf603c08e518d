//! Command-line entry point: aggregation runs, trap mining, toy preference
//! training, correlated-voting simulation, and report generation.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 backend
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use agent_auditor::acpo::{eval_preference_accuracy, history_csv, train_toy};
use agent_auditor::config::{EmbedderKind, JudgeKind, RunConfig};
use agent_auditor::embed::{Embedder, HashingEmbedder, RemoteEmbedder};
use agent_auditor::error::{Error, Result};
use agent_auditor::eval::{score_all, to_csv, to_json};
use agent_auditor::judge::{JudgeBackend, RemoteJudge, ScriptedOracle};
use agent_auditor::packet::Rubric;
use agent_auditor::pipeline::{
    audit_aggregate, judge_baseline, majority_vote, AggregationResult, Method, MethodRun,
};
use agent_auditor::remote::{HttpClient, RemoteConfig};
use agent_auditor::sim::{mv_vs_auditor, sweep_csv};
use agent_auditor::slate::{load_slates, AgentSlate};
use agent_auditor::traps::{load_triplets, mine_traps, save_triplets};

#[derive(Parser)]
#[command(name = "auditor", about = "Multi-agent answer aggregation by reasoning-tree audit")]
struct Cli {
    /// Flat JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    lambda_gate: Option<f64>,
    #[arg(long, global = true)]
    beam_k: Option<usize>,
    #[arg(long, global = true)]
    window_k: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    oracle_q: Option<f64>,
    #[arg(long, global = true)]
    alpha_emit: Option<f64>,
    /// Show or hide per-branch support hints in packets.
    #[arg(long, global = true)]
    hints: Option<bool>,
    #[arg(long, global = true, value_parser = ["oracle", "remote"])]
    judge: Option<String>,
    #[arg(long, global = true, value_parser = ["hashing", "remote"])]
    embedder: Option<String>,
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Majority vote over a slate corpus.
    Vote {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Tree-guided audit aggregation.
    Audit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Full-trace single-call judge baseline.
    Judge {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Mine preference triplets from majority-failure slates.
    MineTraps {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train the toy linear preference model on mined triplets.
    TrainToy {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
    },
    /// Correlated-voting variance sweep and confabulation comparison.
    Simulate {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, value_delimiter = ',', default_values_t = vec![5usize, 25, 100])]
        n_agents: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.7])]
        p: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.5, 0.9])]
        rho: Vec<f64>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run every method and emit the scored comparison report.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::BadBeta(_) | Error::BadDimension(_) => 2,
        Error::Io { .. } | Error::CorpusParse { .. } | Error::DuplicateAgent { .. } => 3,
        Error::Backend(_) | Error::ReplyParse(_) => 4,
        _ => 1,
    }
}

fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let o = &cli.overrides;
    if let Some(v) = o.tau {
        cfg.tau = v;
    }
    if let Some(v) = o.lambda_gate {
        cfg.lambda_gate = v;
    }
    if let Some(v) = o.beam_k {
        cfg.beam_k = v;
    }
    if let Some(v) = o.window_k {
        cfg.window_k = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.oracle_q {
        cfg.oracle_q = v;
    }
    if let Some(v) = o.alpha_emit {
        cfg.alpha_emit = v;
    }
    if let Some(v) = o.hints {
        cfg.hints = v;
    }
    if let Some(v) = &o.judge {
        cfg.judge = match v.as_str() {
            "remote" => JudgeKind::Remote,
            _ => JudgeKind::Oracle,
        };
    }
    if let Some(v) = &o.embedder {
        cfg.embedder = match v.as_str() {
            "remote" => EmbedderKind::Remote,
            _ => EmbedderKind::Hashing,
        };
    }
    if let Some(v) = &o.endpoint {
        cfg.endpoint = v.clone();
    }
    if let Some(v) = &o.model {
        cfg.model = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn build_embedder(cfg: &RunConfig) -> Result<Box<dyn Embedder>> {
    match cfg.embedder {
        EmbedderKind::Hashing => Ok(Box::new(HashingEmbedder::new(cfg.d)?)),
        EmbedderKind::Remote => {
            let remote = RemoteConfig::from_env(&cfg.endpoint, &cfg.model)?;
            Ok(Box::new(RemoteEmbedder::new(HttpClient::new(remote)?, cfg.d)?))
        }
    }
}

fn build_judge(cfg: &RunConfig) -> Result<Box<dyn JudgeBackend>> {
    match cfg.judge {
        JudgeKind::Oracle => Ok(Box::new(ScriptedOracle::new(
            cfg.oracle_q,
            cfg.alpha_emit,
            cfg.seed,
        ))),
        JudgeKind::Remote => {
            let remote = RemoteConfig::from_env(&cfg.endpoint, &cfg.model)?;
            Ok(Box::new(RemoteJudge {
                backend: HttpClient::new(remote)?,
                temperature: 0.0,
                max_retries: 2,
            }))
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_results(path: &Path, results: &[AggregationResult]) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(results)?)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config {
                key: "jobs".to_string(),
                reason: e.to_string(),
            })?;
    }
    let cfg = effective_config(&cli)?;
    let rubric = Rubric::default();

    match &cli.command {
        Command::Vote { input, output } => {
            let slates = load_slates(input)?;
            let results: Vec<AggregationResult> = slates.iter().map(majority_vote).collect();
            write_results(output, &results)?;
            println!("vote: {} slates -> {}", results.len(), output.display());
        }
        Command::Audit { input, output } => {
            let slates = load_slates(input)?;
            let embedder = build_embedder(&cfg)?;
            let judge = build_judge(&cfg)?;
            let results: Vec<AggregationResult> = slates
                .par_iter()
                .map(|s| {
                    audit_aggregate(
                        s,
                        cfg.tree_config(),
                        &cfg.policy_config(),
                        embedder.as_ref(),
                        judge.as_ref(),
                        &rubric,
                    )
                })
                .collect::<Result<_>>()?;
            write_results(output, &results)?;
            println!("audit: {} slates -> {}", results.len(), output.display());
        }
        Command::Judge { input, output } => {
            let slates = load_slates(input)?;
            let judge = build_judge(&cfg)?;
            let results: Vec<AggregationResult> = slates
                .par_iter()
                .map(|s| judge_baseline(s, judge.as_ref(), &rubric))
                .collect::<Result<_>>()?;
            write_results(output, &results)?;
            println!("judge: {} slates -> {}", results.len(), output.display());
        }
        Command::MineTraps { input, output } => {
            let slates = load_slates(input)?;
            let embedder = build_embedder(&cfg)?;
            let (triplets, stats) = mine_traps(
                &slates,
                cfg.tree_config(),
                cfg.window_k,
                &rubric,
                embedder.as_ref(),
            )?;
            save_triplets(&triplets, output)?;
            println!(
                "mine-traps: {} mined, {} skipped (no gold {}, not minority-correct {}, no separating divergence {}) -> {}",
                stats.mined,
                stats.no_gold + stats.not_minority_correct + stats.no_separating_divergence,
                stats.no_gold,
                stats.not_minority_correct,
                stats.no_separating_divergence,
                output.display()
            );
        }
        Command::TrainToy {
            input,
            output,
            history,
            lr,
            epochs,
        } => {
            let triplets = load_triplets(input)?;
            let out = train_toy(&triplets, cfg.beta, *lr, *epochs)?;
            out.model.save(output)?;
            if let Some(h) = history {
                write_text(h, &history_csv(&out.history))?;
            }
            let acc = eval_preference_accuracy(&out.model, &triplets)?;
            println!(
                "train-toy: {} triplets, final loss {:.6}, pairwise accuracy {acc:.4} -> {}",
                triplets.len(),
                out.history.last().map(|h| h.mean_loss).unwrap_or(f64::NAN),
                output.display()
            );
        }
        Command::Simulate {
            trials,
            n_agents,
            p,
            rho,
            output,
        } => {
            let csv = sweep_csv(n_agents, p, rho, *trials, cfg.seed)?;
            write_text(output, &csv)?;
            let confab = mv_vs_auditor(3, 1, cfg.oracle_q, *trials, cfg.seed)?;
            println!(
                "simulate: {} rows -> {}; confabulation 3v1 at q={}: vote {:.3}, audit {:.3}",
                csv.trim_end().lines().count() - 1,
                output.display(),
                cfg.oracle_q,
                confab.mv_accuracy,
                confab.auditor_accuracy
            );
        }
        Command::Report { input, output, csv } => {
            let slates = load_slates(input)?;
            let embedder = build_embedder(&cfg)?;
            let judge = build_judge(&cfg)?;
            let runs = run_all(&slates, &cfg, embedder.as_ref(), judge.as_ref(), &rubric);
            let reports = score_all(&slates, &runs)?;
            write_text(output, &to_json(&reports)?)?;
            if let Some(c) = csv {
                write_text(c, &to_csv(&reports))?;
            }
            for r in &reports {
                println!(
                    "{}: accuracy {:.4} (n={}, minc acc {:.4}, tokens {})",
                    r.method, r.accuracy, r.n, r.minc.acc, r.tokens.total
                );
            }
        }
    }
    Ok(())
}

/// Parallel per-slate variant of the library's serial method runner.
fn run_all(
    slates: &[AgentSlate],
    cfg: &RunConfig,
    embedder: &dyn Embedder,
    judge: &dyn JudgeBackend,
    rubric: &Rubric,
) -> Vec<MethodRun> {
    let mv = MethodRun {
        method: Method::MajorityVote,
        results: slates.iter().map(|s| Ok(majority_vote(s))).collect(),
    };
    let jb = MethodRun {
        method: Method::JudgeBaseline,
        results: slates
            .par_iter()
            .map(|s| judge_baseline(s, judge, rubric).map_err(|e| e.to_string()))
            .collect(),
    };
    let audit = MethodRun {
        method: Method::Auditor,
        results: slates
            .par_iter()
            .map(|s| {
                audit_aggregate(
                    s,
                    cfg.tree_config(),
                    &cfg.policy_config(),
                    embedder,
                    judge,
                    rubric,
                )
                .map_err(|e| e.to_string())
            })
            .collect(),
    };
    vec![mv, jb, audit]
}
