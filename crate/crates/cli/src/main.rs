//! `helprank`: prepare review corpora, train the joint helpfulness model,
//! and score, rank, evaluate or inspect reviews against a trained snapshot.
//!
//! Exit codes: 0 on success, 1 on data or model errors, 2 on usage errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use helprank_core::config::Config;
use helprank_core::corpus::FieldMap;
use helprank_core::oracle;
use helprank_core::pipeline;
use helprank_core::synth;

#[derive(Parser)]
#[command(name = "helprank", version, about = "Predict and rank product-review helpfulness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat KEY=VALUE config file; command-line settings override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set facets=25 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Shorthand for --set seed=N.
    #[arg(long)]
    seed: Option<u64>,
    /// Shorthand for --set iterations=N.
    #[arg(long)]
    iterations: Option<usize>,
}

impl ConfigArgs {
    fn build(&self) -> helprank_core::Result<Config> {
        let mut config = Config::new();
        if let Some(path) = &self.config {
            config.load_file(path)?;
        }
        for entry in &self.sets {
            let (key, value) = entry.split_once('=').ok_or_else(|| {
                helprank_core::CoreError::Config(format!("--set expects KEY=VALUE, got `{entry}`"))
            })?;
            config.set(key.trim(), value.trim())?;
        }
        if let Some(seed) = self.seed {
            config.set("seed", &seed.to_string())?;
        }
        if let Some(iterations) = self.iterations {
            config.set("iterations", &iterations.to_string())?;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Ingest raw JSON Lines reviews into a prepared data directory.
    Prepare {
        /// Input reviews, one JSON object per line.
        #[arg(long)]
        input: PathBuf,
        /// Field-name mapping, e.g. user=reviewerID,item=asin,helpful=helpful.
        #[arg(long)]
        schema: Option<String>,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train a model on a prepared data directory.
    Train {
        #[arg(long = "data-dir")]
        data_dir: PathBuf,
        #[arg(long = "snapshot-dir")]
        snapshot_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score the test split; writes a per-review TSV.
    Predict {
        #[arg(long = "snapshot-dir")]
        snapshot_dir: PathBuf,
        #[arg(long = "data-dir")]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank test reviews per item by predicted helpfulness.
    Rank {
        #[arg(long = "snapshot-dir")]
        snapshot_dir: PathBuf,
        #[arg(long = "data-dir")]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute MSE, R-squared, Spearman and Kendall over the test split.
    Evaluate {
        #[arg(long = "snapshot-dir")]
        snapshot_dir: PathBuf,
        #[arg(long = "data-dir")]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Report the tie-corrected tau-b instead of tau-a.
        #[arg(long = "tau-b")]
        tau_b: bool,
    },
    /// Export KL matrices, salient word lists and the log-likelihood trace.
    Inspect {
        #[arg(long = "snapshot-dir")]
        snapshot_dir: PathBuf,
        #[arg(long = "data-dir")]
        data_dir: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        /// Words per partition in salient_words.tsv.
        #[arg(long = "top-k", default_value_t = 25)]
        top_k: usize,
    },
    /// Emit a synthetic corpus with known ground truth.
    Simulate {
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Users to simulate.
        #[arg(long, default_value_t = 100)]
        users: usize,
        /// Reviews per user.
        #[arg(long = "reviews-per-user", default_value_t = 10)]
        reviews_per_user: usize,
        /// Tokens per review.
        #[arg(long = "doc-length", default_value_t = 30)]
        doc_length: usize,
        /// Words owned by each (level, facet) cell.
        #[arg(long = "words-per-cell", default_value_t = 20)]
        words_per_cell: usize,
        /// Advance probability of 0 at every level (all users stay at level 1).
        #[arg(long = "frozen-expertise")]
        frozen_expertise: bool,
    },
    /// Solve a ridge system with the reference eliminator (debugging aid).
    #[command(hide = true, name = "debug-regress")]
    DebugRegress {
        /// JSON file: {"x": [[...]], "y": [...], "lambda": f, "intercept": idx?}
        #[arg(long)]
        input: PathBuf,
    },
}

fn run() -> helprank_core::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Prepare {
            input,
            schema,
            out_dir,
            config,
        } => {
            let config = config.build()?;
            let schema = match schema {
                Some(s) => FieldMap::parse(&s)?,
                None => FieldMap::default(),
            };
            let report = pipeline::prepare(&input, &schema, &config, &out_dir)?;
            println!(
                "prepared {} train / {} test reviews, vocabulary {} words -> {}",
                report.n_train,
                report.n_test,
                report.vocab_size,
                out_dir.display()
            );
            for (reason, count) in &report.dropped_counts {
                println!("  dropped {count} ({reason})");
            }
            Ok(())
        }
        Command::Train {
            data_dir,
            snapshot_dir,
            config,
        } => {
            let config = config.build()?;
            let log = pipeline::train(&data_dir, &config, &snapshot_dir)?;
            for row in &log {
                println!(
                    "iteration {:>3}  log_likelihood {:.4}  train_mse {:.6}  {:.1}s",
                    row.iteration, row.log_likelihood, row.train_mse, row.seconds_elapsed
                );
            }
            println!("snapshot written to {}", snapshot_dir.display());
            Ok(())
        }
        Command::Predict {
            snapshot_dir,
            data_dir,
            out,
        } => pipeline::predict_cmd(&snapshot_dir, &data_dir, &out),
        Command::Rank {
            snapshot_dir,
            data_dir,
            out,
        } => pipeline::rank_cmd(&snapshot_dir, &data_dir, &out),
        Command::Evaluate {
            snapshot_dir,
            data_dir,
            out,
            tau_b,
        } => {
            let report = pipeline::evaluate_cmd(&snapshot_dir, &data_dir, &out, tau_b)?;
            println!(
                "n={} mse={:.6} r2={:.4} spearman={:.4} kendall={:.4}",
                report.n_test, report.mse, report.r_squared, report.spearman, report.kendall
            );
            Ok(())
        }
        Command::Inspect {
            snapshot_dir,
            data_dir,
            out_dir,
            top_k,
        } => pipeline::inspect_cmd(&snapshot_dir, &data_dir, &out_dir, top_k),
        Command::Simulate {
            out_dir,
            config,
            users,
            reviews_per_user,
            doc_length,
            words_per_cell,
            frozen_expertise,
        } => {
            let config = config.build()?;
            let mut synth_cfg = synth::well_separated_config(
                config.hyper.e_levels,
                config.hyper.facets,
                words_per_cell,
                users,
                reviews_per_user,
                doc_length,
                config.hyper.seed,
            );
            synth_cfg.timeliness_scale = config.hyper.timeliness_scale;
            if frozen_expertise {
                let e = synth_cfg.e_levels;
                synth_cfg.true_pi = vec![0.0; e * e];
                for level in 0..e {
                    synth_cfg.true_pi[level * e + level] = 1.0;
                }
            }
            pipeline::simulate_cmd(&synth_cfg, &out_dir)?;
            println!(
                "simulated {} reviews ({} users) -> {}",
                users * reviews_per_user,
                users,
                out_dir.display()
            );
            Ok(())
        }
        Command::DebugRegress { input } => {
            #[derive(Deserialize)]
            struct Problem {
                x: Vec<Vec<f64>>,
                y: Vec<f64>,
                lambda: f64,
                intercept: Option<usize>,
            }
            let body = std::fs::read_to_string(&input)
                .map_err(|e| helprank_core::CoreError::io(&input, e))?;
            let problem: Problem = serde_json::from_str(&body)
                .map_err(|e| helprank_core::CoreError::Config(format!("{}: {e}", input.display())))?;
            let w = oracle::solve_normal_equations(&problem.x, &problem.y, problem.lambda, problem.intercept)?;
            println!("{}", serde_json::json!({ "weights": w }));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
