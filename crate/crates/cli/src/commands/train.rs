use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use oflow_core::model::{Checkpoint, Model, ModelConfig, TrainParams, Trainer};
use oflow_core::vocab::{Vocabulary, BASE_VOCAB_SIZE};

use crate::config;
use crate::formats::{read_input, read_tokens, write_output, RunManifest};
use crate::user_error;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub train: TrainParams,
    pub model_seed: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // vocab_size is overwritten from the corpus header
        Self {
            model: ModelConfig::toy(BASE_VOCAB_SIZE as usize + 98, 192),
            train: TrainParams::default(),
            model_seed: 1,
            log_every: 50,
        }
    }
}

#[derive(Args)]
pub struct TrainArgs {
    /// Token corpus file
    pub corpus: PathBuf,
    /// Output directory (checkpoint.bin, loss.csv, manifest.json)
    #[arg(short, long)]
    pub out: PathBuf,
    /// Desk-scale preset {64 dims, 2 layers, 4 heads} (the default)
    #[arg(long, default_value_t = true)]
    pub toy: bool,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seq_tokens: Option<usize>,
    #[arg(long)]
    pub micro_batch: Option<usize>,
    #[arg(long)]
    pub grad_accum: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub context_tokens: Option<usize>,
    /// Resume training from an existing checkpoint
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub print_config: bool,
}

pub fn loss_csv(history: &[f64], first_step: u64) -> String {
    let mut out = String::from("step,loss\n");
    for (i, loss) in history.iter().enumerate() {
        out.push_str(&format!("{},{}\n", first_step + i as u64 + 1, loss));
    }
    out
}

pub fn run(args: TrainArgs) -> anyhow::Result<()> {
    let corpus_bytes = read_input(&args.corpus)?;
    let token_file = read_tokens(&corpus_bytes)?;
    let vocab = match Vocabulary::new(token_file.ticker_count) {
        Ok(v) => v,
        Err(e) => return user_error(e.to_string()),
    };
    if vocab.hash() != token_file.vocab_hash {
        return user_error("token corpus vocab hash does not match this tool's vocabulary layout");
    }

    let mut flags = serde_json::Map::new();
    let mut train_flags = serde_json::Map::new();
    if let Some(v) = args.steps {
        train_flags.insert("steps".into(), v.into());
    }
    if let Some(v) = args.seq_tokens {
        train_flags.insert("seq_tokens".into(), v.into());
    }
    if let Some(v) = args.micro_batch {
        train_flags.insert("micro_batch".into(), v.into());
    }
    if let Some(v) = args.grad_accum {
        train_flags.insert("grad_accum".into(), v.into());
    }
    if let Some(v) = args.lr {
        train_flags.insert("lr".into(), v.into());
    }
    if let Some(v) = args.seed {
        train_flags.insert("seed".into(), v.into());
    }
    if !train_flags.is_empty() {
        flags.insert("train".into(), train_flags.into());
    }
    if let Some(v) = args.context_tokens {
        flags.insert(
            "model".into(),
            serde_json::json!({ "max_context_tokens": v }),
        );
    }
    let mut cfg: TrainConfig = config::resolve(
        &TrainConfig::default(),
        args.config.as_deref(),
        flags.into(),
    )?;
    cfg.model.vocab_size = vocab.size() as usize;
    if args.print_config {
        println!("{}", config::pretty(&cfg));
        return Ok(());
    }
    // Validate before any compute.
    if let Err(e) = cfg.model.validate() {
        return user_error(format!("invalid model config: {e}"));
    }

    let corpus: Vec<u32> = token_file.tokens.iter().map(|&t| t as u32).collect();
    let mut trainer = match &args.resume {
        Some(path) => {
            let ckpt_bytes = read_input(path)?;
            let ckpt = match Checkpoint::from_bytes(&ckpt_bytes) {
                Ok(c) => c,
                Err(e) => return user_error(format!("{}: {e}", path.display())),
            };
            if ckpt.vocab_hash != vocab.hash() {
                return user_error("checkpoint vocab hash does not match the corpus vocabulary");
            }
            println!("resuming from step {}", ckpt.step);
            ckpt.into_trainer()
        }
        None => {
            let model = match Model::init(cfg.model.clone(), cfg.model_seed) {
                Ok(m) => m,
                Err(e) => return user_error(format!("invalid model config: {e}")),
            };
            Trainer::new(model, cfg.train.clone())
        }
    };

    let first_step = trainer.step;
    let steps = cfg.train.steps;
    for i in 0..steps {
        let loss = match trainer.step_once(&corpus) {
            Ok(l) => l,
            Err(e) => return Err(anyhow::anyhow!("training aborted: {e}")),
        };
        if cfg.log_every > 0 && (i + 1) % cfg.log_every == 0 {
            println!("step {:>6}  loss {:.4}", trainer.step, loss);
        }
    }

    let ckpt = Checkpoint::from_trainer(&trainer, vocab.hash());
    let ckpt_bytes = ckpt.to_bytes();
    let ckpt_path = args.out.join("checkpoint.bin");
    write_output(&ckpt_path, &ckpt_bytes)?;
    let csv = loss_csv(&trainer.loss_history, first_step);
    let csv_path = args.out.join("loss.csv");
    write_output(&csv_path, csv.as_bytes())?;

    let mut manifest = RunManifest::new(
        "train",
        serde_json::json!({ "resolved": cfg, "corpus_layout_version": token_file.layout_version }),
        Some(cfg.train.seed),
    );
    manifest.vocab_hash = Some(format!("{:016x}", vocab.hash()));
    manifest.checkpoint_hash = Some(format!("{:016x}", oflow_core::rng::fnv1a64(&ckpt_bytes)));
    manifest.stamp_input(&args.corpus, &corpus_bytes);
    manifest.stamp_output(&ckpt_path, &ckpt_bytes);
    manifest.stamp_output(&csv_path, csv.as_bytes());
    manifest.write(&args.out)?;

    let final_loss = trainer.loss_history.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained to step {} (final loss {:.4}, {} params); checkpoint at {}",
        trainer.step,
        final_loss,
        trainer.model.param_count(),
        ckpt_path.display()
    );
    Ok(())
}
