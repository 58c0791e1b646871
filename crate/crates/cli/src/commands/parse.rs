use std::path::PathBuf;

use clap::Args;
use oflow_core::feed::{parse_feed, OrderFlowMessage, Side};

use crate::formats::{read_input, write_output, RunManifest};
use crate::user_error;

#[derive(Args)]
pub struct ParseArgs {
    /// Input feed file
    pub feed: PathBuf,
    /// Optional CSV dump of the parsed messages
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

pub const MSG_CSV_HEADER: &str =
    "timestamp_ns,kind,order_id,side,size,price,remaining_size,new_order_id,exec_or_new_price,symbol_id";

pub fn messages_csv(msgs: &[OrderFlowMessage]) -> String {
    let mut out = String::with_capacity(msgs.len() * 48);
    out.push_str(MSG_CSV_HEADER);
    out.push('\n');
    let opt = |v: Option<i64>| v.map(|x| x.to_string()).unwrap_or_default();
    for m in msgs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            m.timestamp_ns,
            m.kind.label(),
            m.order_id,
            if m.side == Side::Bid { "bid" } else { "ask" },
            m.size,
            m.price,
            m.remaining_size.map(|x| x.to_string()).unwrap_or_default(),
            m.new_order_id.map(|x| x.to_string()).unwrap_or_default(),
            opt(m.exec_or_new_price),
            m.symbol_id,
        ));
    }
    out
}

pub fn run(args: ParseArgs) -> anyhow::Result<()> {
    let bytes = read_input(&args.feed)?;
    let parsed = match parse_feed(&bytes) {
        Ok(p) => p,
        Err(e) => return user_error(format!("{}: {e}", args.feed.display())),
    };
    println!(
        "parsed {} messages ({} records; skipped: {} unknown kinds, {} hidden executions, {} unresolved refs)",
        parsed.messages.len(),
        parsed.report.records,
        parsed.report.unknown_kinds,
        parsed.report.hidden_executions,
        parsed.report.unresolved_refs,
    );
    if let Some(out) = &args.out {
        let csv = messages_csv(&parsed.messages);
        write_output(out, csv.as_bytes())?;
        let mut manifest = RunManifest::new(
            "parse",
            serde_json::json!({ "feed": args.feed.display().to_string() }),
            None,
        );
        manifest.stamp_input(&args.feed, &bytes);
        manifest.stamp_output(out, csv.as_bytes());
        manifest.write(&out.parent().map(|p| p.to_path_buf()).unwrap_or_default())?;
        println!("wrote {}", out.display());
    }
    Ok(())
}
