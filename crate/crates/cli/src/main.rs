use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsc_loopfilter::commands;
use dsc_loopfilter::error::Result;
use dsc_loopfilter::io::{FilterMode, RawFormat, RunConfig};

/// Depthwise-separable CNN loop filter: training, filtering and analysis.
#[derive(Parser)]
#[command(name = "dscf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FilterArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Filter mode: none, cnn, cnn+rm, cnn+frame-control or cnn+ctu-control.
    #[arg(long)]
    mode: Option<String>,
    /// Weight file used for every QP, replacing the configured ones.
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the student for the configured QP band.
    Train(RunArgs),
    /// Encode the eval frames, filter them and write a stream; with
    /// `--decode`, rebuild the filtered frames from a stream instead.
    Filter {
        #[command(flatten)]
        args: FilterArgs,
        /// Toy-codec QP (0-51)
        #[arg(long)]
        qp: Option<u8>,
        /// Stream written by an earlier `filter` run
        #[arg(long, value_name = "STREAM")]
        decode: Option<PathBuf>,
    },
    /// Rate-distortion sweep over QPs 22/27/32/37 with BD-rate against the unfiltered codec.
    Eval(FilterArgs),
    /// Parameter, MAC and border-impact report.
    Analyze {
        /// Weight file; the folded student architecture is reported without one.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 1280)]
        width: usize,
        #[arg(long, default_value_t = 720)]
        height: usize,
    },
    /// Fold batch normalization into an unfolded weight file.
    Fold {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed of the probe input used to check the folded model.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write synthetic 8-bit raw frames.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        chroma: bool,
        #[arg(long, default_value_t = 1)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

fn load_filter(args: &FilterArgs) -> Result<RunConfig> {
    let mut cfg = load(&args.run)?;
    if let Some(m) = &args.mode {
        cfg.filter.mode = m.parse::<FilterMode>()?;
    }
    if let Some(w) = &args.weights {
        cfg.filter.weights = Some(w.clone());
        cfg.filter.band_weights.clear();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let r = commands::cmd_train(&load(&args)?)?;
            println!("L_S random init: {:.6e}", r.ls_random_init);
            if let Some(l) = r.ls_after_hint {
                println!("L_S after hint:  {l:.6e}");
            }
            println!("L_S final:       {:.6e}", r.ls_final);
            println!("wrote {}, {}, {}", r.folded.display(), r.unfolded.display(), r.log.display());
        }
        Command::Filter { args, qp, decode } => {
            let mut cfg = load_filter(&args)?;
            if let Some(q) = qp {
                cfg.filter.qp = Some(q);
            }
            cfg.validate()?;
            match decode {
                Some(stream) => println!("wrote {}", commands::cmd_decode(&cfg, &stream)?.display()),
                None => {
                    let r = commands::cmd_filter(&cfg)?;
                    for m in &r.frames {
                        println!(
                            "frame {} qp {}: {:.4} dB -> {:.4} dB, {:.0} + {} bits",
                            m.frame, m.qp, m.psnr_rec, m.psnr_out, m.coeff_bits, m.side_bits
                        );
                    }
                    println!("wrote {} and {}", r.output.display(), r.stream.display());
                }
            }
        }
        Command::Eval(args) => {
            let r = commands::cmd_eval(&load_filter(&args)?)?;
            for ((qp, a), t) in r.qps.iter().zip(&r.anchor).zip(&r.test) {
                println!(
                    "QP {qp}: anchor {:.0} bits {:.4} dB, {} {:.0} bits {:.4} dB",
                    a.rate, a.psnr, r.mode, t.rate, t.psnr
                );
            }
            println!("BD-rate: {:+.3}%", r.bd_rate);
        }
        Command::Analyze { weights, width, height } => {
            print!("{}", commands::cmd_analyze(weights.as_deref(), width, height)?);
        }
        Command::Fold { weights, out, seed } => {
            let r = commands::cmd_fold(&weights, &out, seed)?;
            println!(
                "folded {} bytes -> {} bytes, max probe difference {:.3e}",
                r.bytes_before, r.bytes_after, r.max_abs_diff
            );
            println!("wrote {}", r.output.display());
        }
        Command::Synth { out, width, height, chroma, frames, seed } => {
            commands::cmd_synth(&out, RawFormat { width, height, chroma }, frames, seed)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
