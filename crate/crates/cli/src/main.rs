use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reverblab_core::harness::{
    evaluate_methods, generate_dataset, make_features, train, write_report, DatasetManifest, Dereverberator,
    ExperimentConfig, FeatureCache, Method, ModelKind,
};
use reverblab_core::rir::{beta_from_t60, image_source_rir, measure_t60, save_rir, IsmOptions, RirMetadata, RoomSpec};
use reverblab_core::wav::{self, WavEncoding};

#[derive(Parser, Debug)]
#[command(name = "reverblab", version, about = "Speech dereverberation experiments")]
struct Cli {
    /// Experiment config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Config override as `key=value`; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write an image-method RIR for the evaluation room.
    GenRir {
        #[arg(long)]
        t60: f64,
        #[arg(long, short)]
        output: PathBuf,
        /// Stop after this reflection order instead of the energy cutoff.
        #[arg(long)]
        max_order: Option<u32>,
    },
    /// Build the reverberant dataset and manifest.
    Simulate,
    /// Cache log-Mel image pairs for the manifest.
    Features,
    /// Train a network on the cached training split.
    Train {
        /// Overrides the configured model.
        #[arg(long)]
        model: Option<String>,
    },
    /// Dereverberate one WAV file.
    Dereverb {
        #[arg(long)]
        method: String,
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        /// Defaults to the best checkpoint of the configured run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score methods on the test split.
    Eval {
        /// Comma-separated; overrides the configured list.
        #[arg(long)]
        methods: Option<String>,
    },
    /// Render the evaluation results as a table and plot series.
    Report,
}

fn config(cli: &Cli) -> reverblab_core::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> reverblab_core::Result<()> {
    let cfg = config(&cli)?;
    if cfg.jobs > 0 {
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build_global();
    }
    match cli.command {
        Command::GenRir { t60, output, max_order } => {
            let room = RoomSpec::evaluation_room(t60);
            let opts = max_order.map_or_else(IsmOptions::default, IsmOptions::max_order);
            let h = image_source_rir(&room, &opts)?;
            let beta = beta_from_t60(&room)?;
            save_rir(
                &output,
                &h,
                &RirMetadata {
                    room,
                    beta,
                    direct_path_index: h.direct_path_index,
                },
            )?;
            match measure_t60(&h) {
                Ok(m) => println!("wrote {} ({} taps, measured T60 {m:.3} s)", output.display(), h.len()),
                Err(_) => println!("wrote {} ({} taps)", output.display(), h.len()),
            }
        }
        Command::Simulate => {
            let m = generate_dataset(&cfg)?;
            println!("wrote {} rows to {}", m.rows.len(), cfg.manifest_path().display());
        }
        Command::Features => {
            let m = DatasetManifest::read(cfg.manifest_path())?;
            let c = make_features(&m, cfg.features_dir())?;
            println!(
                "{} feature pairs in {} ({} computed)",
                c.entries.len(),
                cfg.features_dir().display(),
                c.computed
            );
        }
        Command::Train { model } => {
            let kind = model.as_deref().map_or(Ok(cfg.model), ModelKind::parse)?;
            let cache = FeatureCache::load(cfg.features_dir())?;
            let out = train(&cfg, &cache, kind)?;
            for r in &out.log {
                let val = r.val_mse.map_or("-".into(), |v| format!("{v:.6}"));
                println!("epoch {:>3}  train {:.6}  val {val}", r.epoch, r.train_mse);
            }
            println!(
                "best epoch {} -> {}; log {}",
                out.best_epoch,
                out.best_checkpoint.display(),
                out.log_path.display()
            );
        }
        Command::Dereverb {
            method,
            input,
            output,
            checkpoint,
        } => {
            let method = Method::parse(&method)?;
            let ckpt = match (method, checkpoint) {
                (Method::Neural(_), Some(p)) => Some(p),
                (Method::Neural(kind), None) => Some(cfg.checkpoint_path(kind)),
                _ => None,
            };
            let mut d = Dereverberator::new(method, ckpt.as_deref())?;
            let x = wav::read(&input)?;
            let y = d.process(&x)?;
            wav::write(&output, &y, WavEncoding::Float32)?;
            println!("{method}: wrote {}", output.display());
        }
        Command::Eval { methods } => {
            let names: Vec<String> = match methods {
                Some(m) => m.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
                None => cfg.methods.clone(),
            };
            let methods = names.iter().map(|m| Method::parse(m)).collect::<reverblab_core::Result<Vec<_>>>()?;
            let m = DatasetManifest::read(cfg.manifest_path())?;
            let out = evaluate_methods(&cfg, &m, &methods)?;
            println!("{} records in {}", out.records.len(), out.records_path.display());
        }
        Command::Report => {
            let (report, paths) = write_report(cfg.eval_dir())?;
            print!("{}", report.table);
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config_values() {
        let cli = Cli::parse_from(["reverblab", "--seed", "9", "--set", "epochs=3", "--jobs", "2", "simulate"]);
        let cfg = config(&cli).unwrap();
        assert_eq!((cfg.seed, cfg.epochs, cfg.jobs), (9, 3, 2));
    }
}
