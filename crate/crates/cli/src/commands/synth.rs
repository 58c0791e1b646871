use std::path::PathBuf;

use clap::Args;
use oflow_core::feed::{synth_feed, write_feed, FeedConfig};

use crate::config;
use crate::formats::{write_output, RunManifest};
use crate::user_error;

#[derive(Args)]
pub struct SynthArgs {
    /// Number of messages to generate
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub symbol: Option<u16>,
    /// Output feed file
    #[arg(short, long)]
    pub out: PathBuf,
    /// JSON config file (layered under env and flags)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the resolved config and exit
    #[arg(long)]
    pub print_config: bool,
}

pub fn run(args: SynthArgs) -> anyhow::Result<()> {
    let mut flags = serde_json::Map::new();
    if let Some(seed) = args.seed {
        flags.insert("synth".into(), serde_json::json!({ "seed": seed }));
    }
    if let Some(symbol) = args.symbol {
        flags.insert("symbol_id".into(), serde_json::json!(symbol));
    }
    let cfg: FeedConfig =
        config::resolve(&FeedConfig::default(), args.config.as_deref(), flags.into())?;
    if args.print_config {
        println!("{}", config::pretty(&cfg));
        return Ok(());
    }
    if let Err(e) = cfg.validate() {
        return user_error(format!("invalid feed config: {e}"));
    }

    let msgs = synth_feed(&cfg.synth, cfg.symbol_id, args.n);
    let bytes = match write_feed(&msgs) {
        Ok(b) => b,
        Err(e) => return user_error(format!("unencodable message: {e}")),
    };
    write_output(&args.out, &bytes)?;

    let mut manifest = RunManifest::new(
        "synth",
        serde_json::json!({ "feed": cfg, "n": args.n }),
        Some(cfg.synth.seed),
    );
    manifest.stamp_output(&args.out, &bytes);
    let dir = args
        .out
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_default();
    manifest.write(&dir)?;
    println!("wrote {} messages to {}", msgs.len(), args.out.display());
    Ok(())
}
