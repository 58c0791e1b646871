use std::path::PathBuf;

use clap::Args;
use oflow_core::feed::{parse_feed, FeedConfig, NS_PER_SEC};
use oflow_core::preprocess::stationarize;

use crate::formats::{read_input, write_output, write_pre_binary, write_pre_csv, RunManifest};
use crate::user_error;

#[derive(Args)]
pub struct PreprocessArgs {
    /// Input feed file
    pub feed: PathBuf,
    /// Output binary dump of preprocessed messages
    #[arg(short, long)]
    pub out: PathBuf,
    /// Also write a CSV dump
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Keep pre-market and after-hours messages instead of dropping them
    #[arg(long)]
    pub keep_all: bool,
    /// Session open as ns since midnight (default 9:30 ET)
    #[arg(long)]
    pub session_open_ns: Option<u64>,
    /// Session close as ns since midnight, exclusive (default 16:00 ET)
    #[arg(long)]
    pub session_close_ns: Option<u64>,
}

pub fn run(args: PreprocessArgs) -> anyhow::Result<()> {
    let bytes = read_input(&args.feed)?;
    let parsed = match parse_feed(&bytes) {
        Ok(p) => p,
        Err(e) => return user_error(format!("{}: {e}", args.feed.display())),
    };
    // The whole feed replays (referential messages may target pre-market
    // quotes); the session filter applies to the output representation.
    let (pres, stats) = match stationarize(&parsed.messages) {
        Ok(out) => out,
        Err(e) => return user_error(format!("{}: {e}", args.feed.display())),
    };
    let defaults = FeedConfig::default();
    let open = args.session_open_ns.unwrap_or(defaults.session_open_ns);
    let close = args.session_close_ns.unwrap_or(defaults.session_close_ns);
    if open >= close {
        return user_error("session open must precede close");
    }
    let kept: Vec<_> = if args.keep_all {
        pres
    } else {
        pres.into_iter()
            .filter(|p| {
                let ts = p.timestamp_ns();
                ts >= open && ts < close
            })
            .collect()
    };

    let bin = write_pre_binary(&kept);
    write_output(&args.out, &bin)?;
    let mut manifest = RunManifest::new(
        "preprocess",
        serde_json::json!({
            "feed": args.feed.display().to_string(),
            "session_open_ns": open,
            "session_close_ns": close,
            "session_filtered": !args.keep_all,
        }),
        None,
    );
    manifest.stamp_input(&args.feed, &bytes);
    manifest.stamp_output(&args.out, &bin);
    if let Some(csv_path) = &args.csv {
        let csv = write_pre_csv(&kept);
        write_output(csv_path, csv.as_bytes())?;
        manifest.stamp_output(csv_path, csv.as_bytes());
    }
    manifest.write(
        &args
            .out
            .parent()
            .map(|p| p.to_path_buf())
            .unwrap_or_default(),
    )?;
    let kept_note = if args.keep_all {
        format!("{} kept, no session filter", kept.len())
    } else {
        format!(
            "{} kept in session {:.2}h-{:.2}h",
            kept.len(),
            open as f64 / NS_PER_SEC as f64 / 3600.0,
            close as f64 / NS_PER_SEC as f64 / 3600.0
        )
    };
    println!(
        "preprocessed {} messages ({kept_note}); clamped {} ({:.4}%)",
        stats.messages,
        stats.clamped_messages,
        100.0 * stats.clamp_rate(),
    );
    Ok(())
}
