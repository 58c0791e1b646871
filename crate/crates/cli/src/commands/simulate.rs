use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use oflow_core::feed::parse_feed;
use oflow_core::model::{Checkpoint, Model};
use oflow_core::sim::{init_sim, SimConfig, SimCounters, SimSummary};
use oflow_core::vocab::{Vocabulary, BASE_VOCAB_SIZE};

use crate::config;
use crate::formats::{read_input, read_trace, write_output, JsonlTraceSink, RunManifest};
use crate::user_error;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub sim: SimConfig,
    pub trials: u32,
    pub workers: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            trials: 1,
            workers: 0,
        }
    }
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Model checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Historical feed used to seed the book and prompt
    #[arg(long)]
    pub history: PathBuf,
    /// Output directory (one subdirectory per trial)
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long)]
    pub trials: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub budget_messages: Option<u64>,
    #[arg(long)]
    pub context_messages: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub start_time_ns: Option<u64>,
    /// Parallel trial workers (0 = one per core, capped by trials)
    #[arg(long)]
    pub workers: Option<usize>,
    /// Resume an interrupted trial directory from its trace tail
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub print_config: bool,
}

fn load_model(path: &Path) -> anyhow::Result<(Model<f32>, Vocabulary)> {
    let bytes = read_input(path)?;
    let ckpt = match Checkpoint::from_bytes(&bytes) {
        Ok(c) => c,
        Err(e) => return user_error(format!("{}: {e}", path.display())),
    };
    let model = ckpt.model();
    if model.config.vocab_size < BASE_VOCAB_SIZE as usize + 1 {
        return user_error("checkpoint vocabulary smaller than the message token space");
    }
    let tickers = (model.config.vocab_size - BASE_VOCAB_SIZE as usize) as u16;
    let vocab = match Vocabulary::new(tickers) {
        Ok(v) => v,
        Err(e) => return user_error(e.to_string()),
    };
    if vocab.hash() != ckpt.vocab_hash {
        return user_error(format!(
            "vocab hash mismatch: checkpoint {:016x}, tokenizer {:016x} -- refusing to run",
            ckpt.vocab_hash,
            vocab.hash()
        ));
    }
    Ok((model, vocab))
}

fn trial_dir(out: &Path, trial_id: u32) -> PathBuf {
    out.join(format!("trial_{trial_id:03}"))
}

fn run_one_trial(
    model: &Model<f32>,
    vocab: &Vocabulary,
    history: &[oflow_core::OrderFlowMessage],
    cfg: &SimConfig,
    dir: &Path,
) -> anyhow::Result<SimSummary> {
    std::fs::create_dir_all(dir)?;
    let mut state = match init_sim(history, model, vocab, cfg.clone()) {
        Ok(s) => s,
        Err(e) => return user_error(format!("trial {}: {e}", cfg.trial_id)),
    };
    let mut sink = JsonlTraceSink::create(&dir.join("trace.jsonl"))?;
    let summary = state
        .run(&mut sink)
        .map_err(|e| anyhow::anyhow!("trial {}: {e}", cfg.trial_id))?;
    let summary_json = serde_json::to_vec_pretty(&summary)?;
    write_output(&dir.join("summary.json"), &summary_json)?;
    Ok(summary)
}

pub fn run(args: SimulateArgs) -> anyhow::Result<()> {
    let mut flags = serde_json::Map::new();
    let mut sim_flags = serde_json::Map::new();
    if let Some(v) = args.seed {
        sim_flags.insert("seed".into(), v.into());
    }
    if let Some(v) = args.budget_messages {
        sim_flags.insert("budget_messages".into(), v.into());
    }
    if let Some(v) = args.context_messages {
        sim_flags.insert("context_messages".into(), v.into());
    }
    if let Some(v) = args.start_time_ns {
        sim_flags.insert("start_time_ns".into(), v.into());
    }
    let mut sample_flags = serde_json::Map::new();
    if let Some(v) = args.temperature {
        sample_flags.insert("temperature".into(), v.into());
    }
    if let Some(v) = args.top_p {
        sample_flags.insert("top_p".into(), v.into());
    }
    if !sample_flags.is_empty() {
        sim_flags.insert("sample".into(), sample_flags.into());
    }
    if !sim_flags.is_empty() {
        flags.insert("sim".into(), sim_flags.into());
    }
    if let Some(v) = args.trials {
        flags.insert("trials".into(), v.into());
    }
    if let Some(v) = args.workers {
        flags.insert("workers".into(), v.into());
    }
    let cfg: SimulateConfig = config::resolve(
        &SimulateConfig::default(),
        args.config.as_deref(),
        flags.into(),
    )?;
    if args.print_config {
        println!("{}", config::pretty(&cfg));
        return Ok(());
    }
    if let Err(e) = cfg.sim.sample.validate() {
        return user_error(format!("invalid sampling parameters: {e}"));
    }

    let (model, vocab) = load_model(&args.checkpoint)?;
    let history_bytes = read_input(&args.history)?;
    let parsed = match parse_feed(&history_bytes) {
        Ok(p) => p,
        Err(e) => return user_error(format!("{}: {e}", args.history.display())),
    };
    // The book is instantiated from everything up to the trial start,
    // including pre-market messages.
    let history: Vec<_> = parsed
        .messages
        .into_iter()
        .filter(|m| m.timestamp_ns < cfg.sim.start_time_ns)
        .collect();
    if history.is_empty() {
        return user_error("no history messages before the configured start time");
    }

    if let Some(resume_dir) = &args.resume {
        return resume_trial(&model, &vocab, &history, &cfg, resume_dir);
    }

    std::fs::create_dir_all(&args.out)?;
    let workers = match cfg.workers {
        0 => std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1),
        n => n,
    }
    .min(cfg.trials.max(1) as usize)
    .max(1);

    // Trials are independent (per-trial seeds derive from (seed, trial_id)
    // inside the simulator), so they run in waves of `workers` scoped
    // threads; scheduling cannot change any output.
    let mut summaries: Vec<(u32, SimSummary)> = Vec::new();
    for wave_start in (0..cfg.trials).step_by(workers) {
        let wave_end = (wave_start + workers as u32).min(cfg.trials);
        let results: Vec<anyhow::Result<(u32, SimSummary)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (wave_start..wave_end)
                .map(|trial_id| {
                    let model = &model;
                    let vocab = &vocab;
                    let history = &history;
                    let cfg = &cfg;
                    let out = args.out.clone();
                    scope.spawn(move || {
                        let trial_cfg = SimConfig {
                            trial_id,
                            ..cfg.sim.clone()
                        };
                        let dir = trial_dir(&out, trial_id);
                        let summary = run_one_trial(model, vocab, history, &trial_cfg, &dir)?;
                        let mut manifest = RunManifest::new(
                            "simulate",
                            serde_json::json!({ "sim": trial_cfg }),
                            Some(cfg.sim.seed),
                        );
                        manifest.vocab_hash = Some(format!("{:016x}", vocab.hash()));
                        manifest.write(&dir)?;
                        Ok((trial_id, summary))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("trial thread panicked"))
                .collect()
        });
        for r in results {
            summaries.push(r?);
        }
    }

    let mut manifest =
        RunManifest::new("simulate", serde_json::to_value(&cfg)?, Some(cfg.sim.seed));
    manifest.vocab_hash = Some(format!("{:016x}", vocab.hash()));
    manifest.stamp_input(&args.checkpoint, &read_input(&args.checkpoint)?);
    manifest.stamp_input(&args.history, &history_bytes);
    manifest.write(&args.out)?;

    for (trial_id, s) in summaries {
        println!(
            "trial {trial_id}: accepted {} ({} corrected), discarded {} of {} attempts (discard rate {:.2}%)",
            s.counters.accepted,
            s.counters.corrected,
            s.counters.discarded,
            s.counters.attempts,
            100.0 * s.discard_rate,
        );
    }
    Ok(())
}

/// Rebuilds an interrupted trial from its trace tail and continues to the
/// configured budget: the book and context are reconstructed from
/// history + accepted messages, and the sampler resumes from the recorded
/// state, so the continuation is exactly what an uninterrupted run produces.
fn resume_trial(
    model: &Model<f32>,
    vocab: &Vocabulary,
    history: &[oflow_core::OrderFlowMessage],
    cfg: &SimulateConfig,
    dir: &Path,
) -> anyhow::Result<()> {
    let trace_path = dir.join("trace.jsonl");
    let records = read_trace(&trace_path)?;
    if records.is_empty() {
        return user_error(format!(
            "{}: empty trace, nothing to resume",
            trace_path.display()
        ));
    }
    let trial_id: u32 = dir
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_prefix("trial_"))
        .and_then(|n| n.parse().ok())
        .unwrap_or(cfg.sim.trial_id);
    let accepted: Vec<_> = records.iter().filter_map(|r| r.msg).collect();
    let last = records.last().unwrap();
    let counters = SimCounters {
        attempts: last.attempt,
        accepted: records.iter().filter(|r| r.msg.is_some()).count() as u64,
        corrected: records.iter().filter(|r| r.outcome == "corrected").count() as u64,
        discarded: records.iter().filter(|r| r.outcome == "discarded").count() as u64,
    };

    let trial_cfg = SimConfig {
        trial_id,
        ..cfg.sim.clone()
    };
    let mut state = match oflow_core::sim::resume_sim(
        history,
        &accepted,
        model,
        vocab,
        trial_cfg,
        last.rng_state,
        counters,
        last.attempt,
    ) {
        Ok(s) => s,
        Err(e) => return user_error(format!("resume: {e}")),
    };

    let mut sink = JsonlTraceSink::append(&trace_path)?;
    let summary = state
        .run(&mut sink)
        .map_err(|e| anyhow::anyhow!("resume: {e}"))?;
    write_output(
        &dir.join("summary.json"),
        &serde_json::to_vec_pretty(&summary)?,
    )?;
    println!(
        "resumed trial {trial_id} to {} accepted messages (discard rate {:.2}%)",
        summary.counters.accepted,
        100.0 * summary.discard_rate,
    );
    Ok(())
}
