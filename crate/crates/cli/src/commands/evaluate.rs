use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use oflow_core::feed::{parse_feed, MsgKind, OrderFlowMessage};
use oflow_core::lob::{replay, OrderBook};
use oflow_core::sim::SimSummary;
use oflow_core::stylized::{
    acf_abs, acf_squared, book_series, excess_kurtosis, flow_distributions, future_return_fan,
    market_series, mid_returns, union_range, AcfCurve, BookSeries, DfaResult, FlowDistributions,
    FutureReturnFan, HurstResult, MarketSeries, ReturnSeries, SeriesSource,
};

use crate::config;
use crate::formats::{read_input, read_trace, write_output, RunManifest};
use crate::user_error;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvaluateConfig {
    /// Return sampling interval in seconds.
    pub delta_s: f64,
    pub max_lag: usize,
    /// Future-return fan horizon in messages.
    pub horizon: usize,
    pub fan_samples: usize,
    pub seed: u64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            delta_s: 1.0,
            max_lag: 50,
            horizon: 500,
            fan_samples: 1_000,
            seed: 0,
        }
    }
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Trial directory containing trace.jsonl (repeatable)
    #[arg(long = "trace")]
    pub traces: Vec<PathBuf>,
    /// Empirical feed to compare against
    #[arg(long)]
    pub empirical: Option<PathBuf>,
    /// History feed the trials were seeded from (required with --trace)
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Trial start time; defaults to the value in the first trial manifest
    #[arg(long)]
    pub start_time_ns: Option<u64>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub max_lag: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub print_config: bool,
}

/// Everything reported for one source (a trial or the empirical stream).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SourceReport {
    pub name: String,
    pub source: SeriesSource,
    pub messages: usize,
    pub return_points: usize,
    pub skipped_grid_points: usize,
    pub kurtosis: Option<f64>,
    pub acf_sqr: Option<AcfCurve>,
    pub acf_abs: Option<AcfCurve>,
    pub dfa_abs_returns: Option<DfaResult>,
    pub hurst_abs_returns: Option<HurstResult>,
    pub flow: FlowDistributions,
    pub cum_dollars_final: f64,
    pub cum_shares_final: u64,
    pub future_fan: Option<FutureReturnFan>,
    pub discard_rate: Option<f64>,
    #[serde(skip)]
    pub series: Option<MarketSeries>,
    #[serde(skip)]
    pub returns: Option<ReturnSeries>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StylizedReport {
    pub config: EvaluateConfig,
    /// Sources truncated to a common message count when comparing.
    pub common_length: usize,
    pub sources: Vec<SourceReport>,
}

struct SourceInput {
    name: String,
    source: SeriesSource,
    msgs: Vec<OrderFlowMessage>,
    initial_book: OrderBook,
    discard_rate: Option<f64>,
}

fn load_trial(
    dir: &Path,
    trial_idx: u32,
) -> anyhow::Result<(Vec<OrderFlowMessage>, Option<f64>, Option<u64>)> {
    let records = read_trace(&dir.join("trace.jsonl"))?;
    let msgs: Vec<OrderFlowMessage> = records.iter().filter_map(|r| r.msg).collect();
    let discard_rate = match std::fs::read(dir.join("summary.json")) {
        Ok(bytes) => serde_json::from_slice::<SimSummary>(&bytes)
            .ok()
            .map(|s| s.discard_rate),
        Err(_) => None,
    };
    let start_time = std::fs::read(dir.join("manifest.json"))
        .ok()
        .and_then(|b| serde_json::from_slice::<serde_json::Value>(&b).ok())
        .and_then(|m| {
            m.pointer("/config/sim/start_time_ns")
                .and_then(|v| v.as_u64())
        });
    if msgs.is_empty() {
        return user_error(format!(
            "trial {trial_idx} at {} has no accepted messages",
            dir.display()
        ));
    }
    Ok((msgs, discard_rate, start_time))
}

fn analyze_source(
    input: &SourceInput,
    truncate_to: usize,
    cfg: &EvaluateConfig,
    interarrival_ranges: &[(f64, f64); 5],
    size_ranges: &[(f64, f64); 5],
) -> anyhow::Result<SourceReport> {
    let msgs = &input.msgs[..truncate_to.min(input.msgs.len())];
    let series: BookSeries = book_series(input.initial_book.clone(), msgs)
        .map_err(|e| anyhow::anyhow!("{}: {e}", input.name))?;
    let returns = mid_returns(&series.mids, cfg.delta_s, input.source).ok();
    let kurtosis = returns
        .as_ref()
        .and_then(|r| excess_kurtosis(&r.values).ok());
    let acf_sqr = returns
        .as_ref()
        .and_then(|r| acf_squared(&r.values, cfg.max_lag).ok());
    let acf_abs_c = returns
        .as_ref()
        .and_then(|r| acf_abs(&r.values, cfg.max_lag).ok());
    let abs_vals: Option<Vec<f64>> = returns
        .as_ref()
        .map(|r| r.values.iter().map(|v| v.abs()).collect());
    let dfa = abs_vals
        .as_ref()
        .and_then(|v| oflow_core::stylized::dfa_alpha(v).ok());
    let hurst = abs_vals
        .as_ref()
        .and_then(|v| oflow_core::stylized::hurst_rs(v).ok());
    let flow = flow_distributions(msgs, interarrival_ranges, size_ranges)
        .map_err(|e| anyhow::anyhow!("{}: {e}", input.name))?;
    let market = market_series(&series);
    let fan = future_return_fan(&series.mids, cfg.horizon, cfg.fan_samples, cfg.seed).ok();
    Ok(SourceReport {
        name: input.name.clone(),
        source: input.source,
        messages: msgs.len(),
        return_points: returns.as_ref().map(|r| r.values.len()).unwrap_or(0),
        skipped_grid_points: returns.as_ref().map(|r| r.skipped_grid_points).unwrap_or(0),
        kurtosis,
        acf_sqr,
        acf_abs: acf_abs_c,
        dfa_abs_returns: dfa,
        hurst_abs_returns: hurst,
        flow,
        cum_dollars_final: market.cum_dollars.last().map(|&(_, d)| d).unwrap_or(0.0),
        cum_shares_final: market.cum_shares.last().map(|&(_, s)| s).unwrap_or(0),
        future_fan: fan,
        discard_rate: input.discard_rate,
        series: Some(market),
        returns,
    })
}

pub fn run(args: EvaluateArgs) -> anyhow::Result<()> {
    let mut flags = serde_json::Map::new();
    if let Some(v) = args.delta {
        flags.insert("delta_s".into(), serde_json::json!(v));
    }
    if let Some(v) = args.max_lag {
        flags.insert("max_lag".into(), v.into());
    }
    if let Some(v) = args.horizon {
        flags.insert("horizon".into(), v.into());
    }
    if let Some(v) = args.samples {
        flags.insert("fan_samples".into(), v.into());
    }
    if let Some(v) = args.seed {
        flags.insert("seed".into(), v.into());
    }
    let cfg: EvaluateConfig = config::resolve(
        &EvaluateConfig::default(),
        args.config.as_deref(),
        flags.into(),
    )?;
    if args.print_config {
        println!("{}", config::pretty(&cfg));
        return Ok(());
    }
    if args.traces.is_empty() && args.empirical.is_none() {
        return user_error("nothing to evaluate: pass --trace and/or --empirical");
    }
    if !args.traces.is_empty() && args.history.is_none() {
        return user_error("--history is required to rebuild the book under generated traces");
    }

    // Load generated trials.
    let mut trials: Vec<(String, Vec<OrderFlowMessage>, Option<f64>)> = Vec::new();
    let mut start_time = args.start_time_ns;
    for (i, dir) in args.traces.iter().enumerate() {
        let (msgs, discard, manifest_start) = load_trial(dir, i as u32)?;
        start_time = start_time.or(manifest_start);
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| format!("trial_{i}"));
        trials.push((name, msgs, discard));
    }

    // Rebuild the book the trials started from.
    let initial_book = if let Some(history_path) = &args.history {
        let bytes = read_input(history_path)?;
        let parsed = match parse_feed(&bytes) {
            Ok(p) => p,
            Err(e) => return user_error(format!("{}: {e}", history_path.display())),
        };
        let cutoff = start_time.unwrap_or(u64::MAX);
        let history: Vec<_> = parsed
            .messages
            .into_iter()
            .filter(|m| m.timestamp_ns < cutoff)
            .collect();
        match replay(&history) {
            Ok(book) => Some((book, history.last().map(|m| m.timestamp_ns).unwrap_or(0))),
            Err(e) => return user_error(format!("history does not replay: {e}")),
        }
    } else {
        None
    };

    let mut inputs: Vec<SourceInput> = Vec::new();
    for (idx, (name, msgs, discard)) in trials.into_iter().enumerate() {
        let (book, _) = initial_book.as_ref().expect("history checked above");
        inputs.push(SourceInput {
            name,
            source: SeriesSource::Generated {
                trial_id: idx as u32,
            },
            msgs,
            initial_book: book.clone(),
            discard_rate: discard,
        });
    }

    if let Some(emp_path) = &args.empirical {
        let bytes = read_input(emp_path)?;
        let parsed = match parse_feed(&bytes) {
            Ok(p) => p,
            Err(e) => return user_error(format!("{}: {e}", emp_path.display())),
        };
        // Compare against the real messages produced after the final context
        // message: replay everything up to the alignment point into the
        // initial book, evaluate what follows.
        let align_ts = initial_book.as_ref().map(|&(_, last)| last).unwrap_or(0);
        let (before, after): (Vec<_>, Vec<_>) = parsed
            .messages
            .into_iter()
            .partition(|m| m.timestamp_ns <= align_ts);
        let book = match replay(&before) {
            Ok(b) => b,
            Err(e) => return user_error(format!("empirical feed does not replay: {e}")),
        };
        if after.is_empty() {
            return user_error("empirical feed has no messages after the alignment point");
        }
        inputs.push(SourceInput {
            name: "empirical".into(),
            source: SeriesSource::Empirical,
            msgs: after,
            initial_book: book,
            discard_rate: None,
        });
    }

    // Restrict all series to a common sequence length when comparing.
    let common_length = if inputs.len() > 1 {
        inputs.iter().map(|s| s.msgs.len()).min().unwrap()
    } else {
        inputs[0].msgs.len()
    };

    // Shared histogram edges over the union of the compared datasets.
    let mut interarrival_ranges = [(0.0f64, 1.0f64); 5];
    let mut size_ranges = [(0.0f64, 1.0f64); 5];
    for k in 0..5 {
        let inter_sets: Vec<Vec<f64>> = inputs
            .iter()
            .map(|s| {
                oflow_core::stylized::interarrivals_by_kind(
                    &s.msgs[..common_length.min(s.msgs.len())],
                )[k]
                    .clone()
            })
            .collect();
        let refs: Vec<&[f64]> = inter_sets.iter().map(|v| v.as_slice()).collect();
        interarrival_ranges[k] = union_range(&refs).unwrap_or((0.0, 1.0));
        let size_sets: Vec<Vec<f64>> = inputs
            .iter()
            .map(|s| {
                oflow_core::stylized::sizes_by_kind(&s.msgs[..common_length.min(s.msgs.len())])[k]
                    .clone()
            })
            .collect();
        let refs: Vec<&[f64]> = size_sets.iter().map(|v| v.as_slice()).collect();
        size_ranges[k] = union_range(&refs).unwrap_or((0.0, 1.0));
    }

    let mut sources = Vec::new();
    for input in &inputs {
        sources.push(analyze_source(
            input,
            common_length,
            &cfg,
            &interarrival_ranges,
            &size_ranges,
        )?);
    }
    let report = StylizedReport {
        config: cfg.clone(),
        common_length,
        sources,
    };

    std::fs::create_dir_all(&args.out)?;
    let report_json = serde_json::to_vec_pretty(&report)?;
    write_output(&args.out.join("report.json"), &report_json)?;
    write_figures(&args.out, &report)?;

    let mut manifest = RunManifest::new("evaluate", serde_json::to_value(&cfg)?, Some(cfg.seed));
    manifest.stamp_output(&args.out.join("report.json"), &report_json);
    manifest.write(&args.out)?;

    for s in &report.sources {
        println!(
            "{}: {} messages, kurtosis {}, dfa alpha {}, hurst {}{}",
            s.name,
            s.messages,
            s.kurtosis
                .map(|k| format!("{k:.3}"))
                .unwrap_or_else(|| "n/a".into()),
            s.dfa_abs_returns
                .as_ref()
                .map(|d| format!("{:.3}", d.alpha))
                .unwrap_or_else(|| "n/a".into()),
            s.hurst_abs_returns
                .as_ref()
                .map(|h| format!("{:.3}", h.h))
                .unwrap_or_else(|| "n/a".into()),
            s.discard_rate
                .map(|d| format!(", discard rate {:.2}% (reference: ~7%)", 100.0 * d))
                .unwrap_or_default(),
        );
    }
    println!("report written to {}", args.out.display());
    Ok(())
}

/// One CSV per figure analog, consumable by any plotting tool.
fn write_figures(out: &Path, report: &StylizedReport) -> anyhow::Result<()> {
    let kinds = MsgKind::ALL;

    let mut f3 = String::from("source,kind,freq,ci95\n");
    for s in &report.sources {
        for (k, kind) in kinds.iter().enumerate() {
            f3.push_str(&format!(
                "{},{},{},{}\n",
                s.name,
                kind.label(),
                s.flow.type_freq[k],
                s.flow.type_freq_ci95[k]
            ));
        }
    }
    write_output(&out.join("fig3a_type_freq.csv"), f3.as_bytes())?;

    for (k, kind) in kinds.iter().enumerate() {
        let mut inter = String::from("source,bin_lo,bin_hi,count\n");
        let mut sizes = String::from("source,bin_lo,bin_hi,count\n");
        for s in &report.sources {
            let h = &s.flow.interarrival[k];
            let width = (h.max - h.min) / h.counts.len() as f64;
            for (b, &c) in h.counts.iter().enumerate() {
                if c > 0 {
                    inter.push_str(&format!(
                        "{},{},{},{}\n",
                        s.name,
                        h.min + b as f64 * width,
                        h.min + (b + 1) as f64 * width,
                        c
                    ));
                }
            }
            let h = &s.flow.sizes[k];
            let width = (h.max - h.min) / h.counts.len() as f64;
            for (b, &c) in h.counts.iter().enumerate() {
                if c > 0 {
                    sizes.push_str(&format!(
                        "{},{},{},{}\n",
                        s.name,
                        h.min + b as f64 * width,
                        h.min + (b + 1) as f64 * width,
                        c
                    ));
                }
            }
        }
        write_output(
            &out.join(format!("fig4_interarrival_{}.csv", kind.label())),
            inter.as_bytes(),
        )?;
        write_output(
            &out.join(format!("fig4_sizes_{}.csv", kind.label())),
            sizes.as_bytes(),
        )?;
    }

    let mut f5 = String::from("source,time_s,best_bid,best_ask,spread,vol_bid_1,vol_ask_1\n");
    let mut f8d = String::from("source,t_s,mid_price_ticks\n");
    let mut f8ab = String::from("source,timestamp_ns,cum_dollars,cum_shares\n");
    for s in &report.sources {
        if let Some(series) = &s.series {
            for &(t, bid, ask, spread, vb, va) in &series.top_by_second {
                f5.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    s.name, t, bid, ask, spread, vb, va
                ));
            }
            for &(t, price) in &series.price_by_second {
                f8d.push_str(&format!("{},{},{}\n", s.name, t, price));
            }
            for (&(t, d), &(_, sh)) in series.cum_dollars.iter().zip(&series.cum_shares) {
                f8ab.push_str(&format!("{},{},{},{}\n", s.name, t, d, sh));
            }
        }
    }
    write_output(&out.join("fig5_top_of_book.csv"), f5.as_bytes())?;
    write_output(&out.join("fig8ab_cumulative.csv"), f8ab.as_bytes())?;
    write_output(&out.join("fig8d_price_traj.csv"), f8d.as_bytes())?;

    // Returns distribution over the union range (the heavy-tails figure).
    let return_sets: Vec<&[f64]> = report
        .sources
        .iter()
        .filter_map(|s| s.returns.as_ref().map(|r| r.values.as_slice()))
        .collect();
    let mut f3b = String::from("source,bin_lo,bin_hi,count\n");
    if let Some((lo, hi)) = oflow_core::stylized::union_range(&return_sets) {
        for s in &report.sources {
            if let Some(r) = &s.returns {
                let h = oflow_core::stylized::Histogram::new(lo, hi, &r.values);
                let width = (h.max - h.min) / h.counts.len() as f64;
                for (b, &c) in h.counts.iter().enumerate() {
                    if c > 0 {
                        f3b.push_str(&format!(
                            "{},{},{},{}\n",
                            s.name,
                            h.min + b as f64 * width,
                            h.min + (b + 1) as f64 * width,
                            c
                        ));
                    }
                }
            }
        }
    }
    write_output(&out.join("fig3b_returns_hist.csv"), f3b.as_bytes())?;

    let mut f6 = String::from("source,lag,acf_squared,acf_abs,white_noise_band\n");
    for s in &report.sources {
        if let (Some(sq), Some(ab)) = (&s.acf_sqr, &s.acf_abs) {
            for lag in 0..sq.values.len() {
                f6.push_str(&format!(
                    "{},{},{},{},{}\n",
                    s.name, lag, sq.values[lag], ab.values[lag], sq.white_noise_band
                ));
            }
        }
    }
    write_output(&out.join("fig6_acf.csv"), f6.as_bytes())?;

    let mut f7 =
        String::from("source,dfa_alpha,gamma,dfa_r2,hurst,hurst_ci_lo,hurst_ci_hi,kurtosis\n");
    for s in &report.sources {
        f7.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.name,
            s.dfa_abs_returns
                .as_ref()
                .map(|d| d.alpha.to_string())
                .unwrap_or_default(),
            s.dfa_abs_returns
                .as_ref()
                .map(|d| d.gamma.to_string())
                .unwrap_or_default(),
            s.dfa_abs_returns
                .as_ref()
                .map(|d| d.r2.to_string())
                .unwrap_or_default(),
            s.hurst_abs_returns
                .as_ref()
                .map(|h| h.h.to_string())
                .unwrap_or_default(),
            s.hurst_abs_returns
                .as_ref()
                .map(|h| h.ci95.0.to_string())
                .unwrap_or_default(),
            s.hurst_abs_returns
                .as_ref()
                .map(|h| h.ci95.1.to_string())
                .unwrap_or_default(),
            s.kurtosis.map(|k| k.to_string()).unwrap_or_default(),
        ));
    }
    write_output(&out.join("fig7_long_memory.csv"), f7.as_bytes())?;

    let mut f8c = String::from("source,offset_messages,mean,lo_2_5,hi_97_5\n");
    for s in &report.sources {
        if let Some(fan) = &s.future_fan {
            for k in 0..fan.mean.len() {
                f8c.push_str(&format!(
                    "{},{},{},{},{}\n",
                    s.name,
                    k + 1,
                    fan.mean[k],
                    fan.lo_2_5[k],
                    fan.hi_97_5[k]
                ));
            }
        }
    }
    write_output(&out.join("fig8c_future_fan.csv"), f8c.as_bytes())?;
    Ok(())
}
