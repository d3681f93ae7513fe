//! `mdksim` — simulate a ring of int8 accelerator nodes serving a
//! GPT-2-style decoder, with latency reports, Chrome traces, and
//! functional self-checks.
//!
//! Exit codes: 0 success, 1 usage error, 2 configuration or I/O
//! error, 3 verification failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mdksim::engine::simulate_opts;
use mdksim::report::{write_latency_csv, write_trace};
use mdksim::{Error, Result, SimConfig};

#[derive(Parser)]
#[command(
    name = "mdksim",
    version,
    about = "Cycle-approximate simulator for a multi-node int8 LLM accelerator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a run and print a latency summary.
    Run {
        /// TOML config; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the number of ring nodes.
        #[arg(long)]
        nodes: Option<usize>,
        /// Override the prompt length.
        #[arg(long)]
        prompt_len: Option<usize>,
        /// Override the number of generated tokens.
        #[arg(long)]
        gen_len: Option<usize>,
        /// Load weights from this file instead of generating them
        /// in memory (see `genweights`).
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Write the full JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write a Chrome trace-event file here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write per-token latencies as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the functional self-checks (int8 math, ring, sharding,
    /// accuracy).
    Verify {
        /// Random matvec shapes to cross-check against brute force.
        #[arg(long, default_value_t = 10_000)]
        matvec_trials: usize,
        /// All-gather trials per node-count/chunk-size combination.
        #[arg(long, default_value_t = 100)]
        ring_trials: usize,
        /// Independently seeded models for the accuracy bound.
        #[arg(long, default_value_t = 50)]
        accuracy_seeds: usize,
    },
    /// Generate, calibrate, and save a weight bundle.
    Genweights {
        /// TOML config supplying the model shape (defaults when
        /// omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output path for the weight file.
        #[arg(long)]
        out: PathBuf,
        /// Override the generation seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Latency sweep over channel count, MAC-group width, and
    /// optimization flags.
    Sweep {
        /// TOML config used as the sweep baseline.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // --help/--version print to stdout and succeed; anything
            // else is a usage error.
            let code = if e.use_stderr() { 1u8 } else { 0u8 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Verify(_) => 3u8,
                _ => 2u8,
            })
        }
    }
}

fn load_cfg(path: &Option<PathBuf>) -> Result<SimConfig> {
    match path {
        Some(p) => SimConfig::load(p),
        None => Ok(SimConfig::default()),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run {
            config,
            nodes,
            prompt_len,
            gen_len,
            weights,
            report,
            trace,
            csv,
        } => {
            let mut cfg = load_cfg(&config)?;
            if let Some(n) = nodes {
                cfg.hardware.n_nodes = n;
            }
            if let Some(p) = prompt_len {
                cfg.run.prompt_len = p;
            }
            if let Some(g) = gen_len {
                cfg.run.gen_len = g;
            }
            if let Some(w) = weights {
                cfg.run.weights = Some(w.display().to_string());
            }
            let out = simulate_opts(&cfg, trace.is_some())?;
            print_summary(&out.report);
            if let Some(path) = report {
                out.report.write_json(&path)?;
                println!("report: {}", path.display());
            }
            if let Some(path) = trace {
                write_trace(&path, out.trace.as_deref().unwrap_or(&[]))?;
                println!("trace: {}", path.display());
            }
            if let Some(path) = csv {
                write_latency_csv(&path, &out.report.per_token)?;
                println!("csv: {}", path.display());
            }
            Ok(())
        }
        Cmd::Verify {
            matvec_trials,
            ring_trials,
            accuracy_seeds,
        } => {
            for line in mdksim::verify::verify_all(matvec_trials, ring_trials, accuracy_seeds)? {
                println!("ok: {line}");
            }
            println!("all checks passed");
            Ok(())
        }
        Cmd::Genweights { config, out, seed } => {
            let cfg = load_cfg(&config)?.validated()?;
            let seed = seed.unwrap_or(cfg.run.seed);
            let bundle = mdksim::model::build_bundle(&cfg.model, seed)?;
            bundle.save(&out)?;
            let bytes = std::fs::metadata(&out)?.len();
            println!(
                "wrote {} ({} layers, l_embed {}, seed {seed}, {bytes} bytes)",
                out.display(),
                cfg.model.n_layers,
                cfg.model.l_embed
            );
            Ok(())
        }
        Cmd::Sweep { config } => {
            let base = load_cfg(&config)?;
            println!("n_channel  n_group  flags  tokens_per_sec  mean_decode_ms");
            for n_channel in [8usize, 16, 32] {
                for n_group in [16usize, 32, 64] {
                    for flags_on in [false, true] {
                        let mut cfg = base.clone();
                        cfg.hardware.n_channel = n_channel;
                        cfg.hardware.n_group = n_group;
                        cfg.hardware.datapack_bytes = n_group;
                        cfg.flags = if flags_on {
                            mdksim::OptFlags::default()
                        } else {
                            mdksim::OptFlags::all_off()
                        };
                        // Timing is data-independent; skip the
                        // functional pass for sweep cells.
                        cfg.run.functional = false;
                        let rep = simulate_opts(&cfg, false)?.report;
                        println!(
                            "{n_channel:>9}  {n_group:>7}  {:>5}  {:>14.2}  {:>14.4}",
                            if flags_on { "on" } else { "off" },
                            rep.totals.tokens_per_sec,
                            rep.totals.mean_decode_latency_s * 1e3,
                        );
                    }
                }
            }
            Ok(())
        }
    }
}

fn print_summary(rep: &mdksim::report::RunReport) {
    let m = &rep.config.model;
    let hw = &rep.config.hardware;
    let f = &rep.config.flags;
    println!(
        "model: {} layers, l_embed {}, {} heads | nodes {} | {} MHz, {} ch x {} MACs",
        m.n_layers,
        m.l_embed,
        m.n_heads,
        hw.n_nodes,
        hw.freq_hz / 1e6,
        hw.n_channel,
        hw.n_group
    );
    println!(
        "flags: fused_ln_res {} | headwise_pipeline {} | sync_overlap {}",
        f.fused_ln_res, f.headwise_pipeline, f.sync_overlap
    );
    let t = &rep.totals;
    println!(
        "tokens: {} ({} prefill + {} decode) in {:.4} s virtual",
        t.tokens, t.prefill_tokens, t.decode_tokens, t.total_time_s
    );
    println!(
        "tokens/sec: {:.2} | mean token latency {:.4} ms | mean decode latency {:.4} ms",
        t.tokens_per_sec,
        t.mean_token_latency_s * 1e3,
        t.mean_decode_latency_s * 1e3
    );
    let b = &rep.breakdown;
    let total = t.total_time_s;
    println!(
        "breakdown: mp {:.1}% | mha {:.1}% | aux {:.1}% | exposed sync {:.1}%",
        100.0 * b.mp_s / total,
        100.0 * b.mha_s / total,
        100.0 * b.aux_s / total,
        100.0 * b.sync_exposed_s / total
    );
    if let Some(gen) = &rep.generated {
        let shown: Vec<usize> = gen.iter().copied().take(16).collect();
        println!(
            "generated ({} ids, first {}): {:?}",
            gen.len(),
            shown.len(),
            shown
        );
    }
}
