use std::path::PathBuf;

use clap::Args;
use oflow_core::vocab::{Vocabulary, MSG_TOKENS};

use crate::formats::{read_input, read_pre_binary, write_output, write_tokens, RunManifest};
use crate::user_error;

#[derive(Args)]
pub struct TokenizeArgs {
    /// Input preprocessed-message binary
    pub pre: PathBuf,
    /// Output token corpus
    #[arg(short, long)]
    pub out: PathBuf,
    /// Ticker symbols reserved in the vocabulary (vocab size is 12012 + S)
    #[arg(long, default_value_t = 98)]
    pub tickers: u16,
}

pub fn run(args: TokenizeArgs) -> anyhow::Result<()> {
    let bytes = read_input(&args.pre)?;
    let pres = read_pre_binary(&bytes)?;
    let vocab = match Vocabulary::new(args.tickers) {
        Ok(v) => v,
        Err(e) => return user_error(e.to_string()),
    };
    let mut tokens = Vec::with_capacity(pres.len() * MSG_TOKENS);
    for (i, pre) in pres.iter().enumerate() {
        match vocab.encode(pre) {
            Ok(t) => tokens.extend_from_slice(&t.0),
            Err(e) => return user_error(format!("message {i}: {e}")),
        }
    }
    let out_bytes = write_tokens(args.tickers, vocab.hash(), &tokens);
    write_output(&args.out, &out_bytes)?;

    let mut manifest = RunManifest::new(
        "tokenize",
        serde_json::json!({ "pre": args.pre.display().to_string(), "tickers": args.tickers }),
        None,
    );
    manifest.vocab_hash = Some(format!("{:016x}", vocab.hash()));
    manifest.stamp_input(&args.pre, &bytes);
    manifest.stamp_output(&args.out, &out_bytes);
    manifest.write(
        &args
            .out
            .parent()
            .map(|p| p.to_path_buf())
            .unwrap_or_default(),
    )?;
    println!(
        "tokenized {} messages -> {} tokens (vocab {} = 12012 + {})",
        pres.len(),
        tokens.len(),
        vocab.size(),
        args.tickers
    );
    Ok(())
}
