mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Text-to-motion diffusion on dependency-parse features.
///
/// Any config key can be overridden with `--section.key=value`, e.g.
/// `--train.lr=0.001`. `FGT2M_SEED` overrides every seed.
#[derive(Parser, Debug)]
#[command(name = "fgt2m", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(skip)]
    pub overrides: Vec<(String, String)>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the toy caption/motion corpus.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "data.bin")]
        out: PathBuf,
    },
    /// Train a model; writes a checkpoint and a metrics log into the run directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset file; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "run")]
        out_dir: PathBuf,
    },
    /// Generate motions for captions.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Caption in the toy grammar; repeat for several.
        #[arg(long)]
        caption: Vec<String>,
        /// CoNLL-U file with one sentence, used instead of a caption.
        #[arg(long)]
        conllu: Option<PathBuf>,
        /// Motions per caption.
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value = "samples.f32")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the held-out records.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file; regenerated from the checkpoint's config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "report.txt")]
        out: PathBuf,
    },
    /// Print the dependency tree and graph statistics of a caption or CoNLL-U file.
    Parse {
        #[arg(long)]
        caption: Option<String>,
        #[arg(long)]
        conllu: Option<PathBuf>,
    },
    /// Turn metric logs into a merged CSV and one SVG line chart per metric.
    Plot {
        /// Metric log written by `train`; repeat to overlay runs.
        #[arg(long, required = true)]
        log: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out_dir: PathBuf,
    },
}

/// Pulls `--section.key=value` pairs out of the arguments before clap sees them.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        let pair = a
            .strip_prefix("--")
            .and_then(|s| s.split_once('='))
            .filter(|(k, _)| k.contains('.'));
        match pair {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => rest.push(a),
        }
    }
    (rest, overrides)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    let with = |mut c: Common| {
        c.overrides = overrides.clone();
        c
    };
    let result = match cli.command {
        Command::GenData { common, out } => commands::gen_data(&with(common), &out),
        Command::Train { common, data, out_dir } => commands::train(&with(common), data.as_deref(), &out_dir),
        Command::Sample {
            common,
            checkpoint,
            caption,
            conllu,
            count,
            out,
        } => commands::sample(&with(common), &checkpoint, &caption, conllu.as_deref(), count, &out),
        Command::Eval {
            common,
            checkpoint,
            data,
            out,
        } => commands::eval(&with(common), &checkpoint, data.as_deref(), &out),
        Command::Parse { caption, conllu } => {
            if !overrides.is_empty() {
                Err(anyhow::anyhow!("parse takes no config overrides"))
            } else {
                commands::parse(caption.as_deref(), conllu.as_deref())
            }
        }
        Command::Plot { log, out_dir } => commands::plot(&log, &out_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already embed their source; skip repeats.
            let mut msg = String::new();
            for cause in e.chain() {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&c);
                }
            }
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_split_out() {
        let args = ["fgt2m", "train", "--train.lr=0.1", "--out-dir=x", "--config", "c.toml"]
            .map(String::from)
            .to_vec();
        let (rest, o) = split_overrides(args);
        assert_eq!(rest, ["fgt2m", "train", "--out-dir=x", "--config", "c.toml"]);
        assert_eq!(o, vec![("train.lr".to_string(), "0.1".to_string())]);
    }
}
