//! Command-line front end. All real work lives in `seqsort::cli`; this file
//! only parses arguments, loads the config, and maps errors to exit codes:
//! 0 success, 1 usage/config error, 2 partial data failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seqsort::cli;
use seqsort::config::GlobalConfig;
use seqsort::error::Error;
use seqsort::evaluation::Head;
use seqsort::phantom::{self, PhantomSpec, WriteFormat};

#[derive(Parser)]
#[command(
    name = "seqsort",
    version,
    about = "Ingest, classify and sort cardiac MR image series"
)]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
    /// TOML configuration file; omitted means built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override every configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path (file or directory, depending on the subcommand).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format where a subcommand supports more than one
    /// (phantom: "dicom" or "pgm").
    #[arg(long, global = true)]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a DICOM tree, group it into series and write a manifest.
    Ingest { input: PathBuf },
    /// Partition a labeled tree and train a model from scratch.
    Train { input: PathBuf },
    /// Continue training from the last checkpoint.
    Resume { input: PathBuf },
    /// Evaluate a checkpoint against an ingest manifest.
    Eval {
        checkpoint: PathBuf,
        manifest: PathBuf,
    },
    /// Classify a tree and file every series into labeled folders.
    Sort {
        input: PathBuf,
        checkpoint: PathBuf,
    },
    /// Render a Grad-CAM heatmap for one series.
    Gradcam {
        checkpoint: PathBuf,
        input: PathBuf,
        series_key: String,
        /// "sequence" or "plane"
        head: String,
        /// Class name for the chosen head, e.g. "Perfusion" or "ShortAxis".
        class: String,
    },
    /// Generate the synthetic labeled dataset.
    Phantom {
        #[arg(long, default_value_t = 10)]
        studies_per_class: usize,
        /// Inclusive slice-count range per series, "min:max".
        #[arg(long, default_value = "8:8")]
        slices: String,
        /// Square image size in pixels.
        #[arg(long, default_value_t = 96)]
        image_size: usize,
    },
}

fn load_config(args: &Args) -> Result<GlobalConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => GlobalConfig::load(path)?,
        None => GlobalConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.apply_seed(seed);
    }
    Ok(cfg)
}

fn parse_head(s: &str) -> Result<Head, Error> {
    match s.to_ascii_lowercase().as_str() {
        "sequence" | "seq" => Ok(Head::Sequence),
        "plane" => Ok(Head::Plane),
        other => Err(Error::Config(format!(
            "head must be \"sequence\" or \"plane\", got {other:?}"
        ))),
    }
}

fn parse_slices(s: &str) -> Result<(usize, usize), Error> {
    let parse = |t: &str| {
        t.parse::<usize>()
            .map_err(|_| Error::Config(format!("bad slice count {t:?}")))
    };
    match s.split_once(':') {
        Some((lo, hi)) => Ok((parse(lo)?, parse(hi)?)),
        None => {
            let n = parse(s)?;
            Ok((n, n))
        }
    }
}

/// usage/config errors exit 1; everything else is a data failure.
fn exit_code_for(err: &Error) -> ExitCode {
    match err {
        Error::Config(_) | Error::InvalidClass(..) | Error::VersionMismatch(_) => {
            ExitCode::from(1)
        }
        _ => ExitCode::from(2),
    }
}

fn run(args: &Args) -> Result<ExitCode, Error> {
    let cfg = load_config(args)?;
    match &args.cmd {
        Cmd::Ingest { input } => {
            let out = args
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("ingest_manifest.json"));
            let manifest = cli::cmd_ingest(input, &cfg, &out)?;
            println!(
                "{} series, {} secondary captures dropped, {} file errors -> {}",
                manifest.series.len(),
                manifest.secondary_dropped,
                manifest.errors.len(),
                out.display()
            );
            for e in &manifest.errors {
                eprintln!("error: {}: {}", e.path.display(), e.message);
            }
            Ok(if manifest.errors.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Cmd::Train { input } => {
            let mut cfg = cfg;
            if let Some(out) = &args.out {
                cfg.train.checkpoint_dir = out.clone();
            }
            let outcome = cli::cmd_train(input, &cfg)?;
            let last = outcome.log.last().expect("training writes records");
            println!(
                "trained {} epochs; best at epoch {}; final val acc seq {:.4} plane {:.4}",
                outcome.log.len(),
                outcome.best.epoch,
                last.val_acc_seq,
                last.val_acc_plane
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Resume { input } => {
            let mut cfg = cfg;
            if let Some(out) = &args.out {
                cfg.train.checkpoint_dir = out.clone();
            }
            let outcome = cli::cmd_resume(input, &cfg)?;
            println!(
                "run at {} epochs; best at epoch {}",
                outcome.log.len(),
                outcome.best.epoch
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Eval {
            checkpoint,
            manifest,
        } => {
            let out = args.out.clone().unwrap_or_else(|| PathBuf::from("eval"));
            let report = cli::cmd_eval(checkpoint, manifest, &cfg, &out)?;
            println!(
                "sequence {} plane {} combined {} -> {}",
                report.seq_accuracy,
                report.plane_accuracy,
                report.combined_accuracy,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Sort { input, checkpoint } => {
            let out = args.out.clone().unwrap_or_else(|| PathBuf::from("sorted"));
            let report = cli::cmd_sort(input, checkpoint, &cfg, &out)?;
            println!(
                "{} series routed, {} files placed ({} unclassified) -> {}",
                report.routed.len(),
                report.files_placed,
                report.unclassified.len(),
                out.display()
            );
            for e in &report.errors {
                eprintln!("error: {}: {}", e.path.display(), e.message);
            }
            Ok(if report.errors.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Cmd::Gradcam {
            checkpoint,
            input,
            series_key,
            head,
            class,
        } => {
            let out = args.out.clone().unwrap_or_else(|| PathBuf::from("gradcam"));
            let head = parse_head(head)?;
            let stem = cli::cmd_gradcam(checkpoint, input, series_key, head, class, &cfg, &out)?;
            println!("wrote {}/{stem}*.pgm", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Phantom {
            studies_per_class,
            slices,
            image_size,
        } => {
            let out = args.out.clone().unwrap_or_else(|| PathBuf::from("phantom"));
            let write_format = match args.format.as_deref() {
                None | Some("dicom") => WriteFormat::DicomFixture,
                Some("pgm") => WriteFormat::PgmTriplet,
                Some(other) => {
                    return Err(Error::Config(format!(
                        "format must be \"dicom\" or \"pgm\", got {other:?}"
                    )))
                }
            };
            let spec = PhantomSpec {
                studies_per_class: *studies_per_class,
                slices_per_series: parse_slices(slices)?,
                image_size: (*image_size, *image_size),
                seed: args.seed.unwrap_or(0),
                write_format,
                ..PhantomSpec::default()
            };
            let manifest = phantom::generate(&spec, &out)?;
            let files: usize = manifest.series.iter().map(|s| s.files.len()).sum();
            println!(
                "{} series, {} files -> {}",
                manifest.series.len(),
                files,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
