use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use urbanrhythm::config::PipelineConfig;
use urbanrhythm::pipeline::{self, Manifest, Pipeline, Stage};
use urbanrhythm::Error;

/// Urban rhythm discovery from crowd-sourced mobility events.
#[derive(Parser)]
#[command(name = "urbanrhythm", version)]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Out {
    /// Artifact root, overriding `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic events, usage and ground truth.
    Synth {
        #[command(flatten)]
        out: Out,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rasterise events into city images.
    Ingest {
        #[command(flatten)]
        out: Out,
    },
    /// Fit the Saak transform and reduce features.
    Features {
        #[command(flatten)]
        out: Out,
    },
    /// Ward clustering into state series, hierarchy and profiles.
    Cluster {
        #[command(flatten)]
        out: Out,
        /// Comma-separated cluster counts; the first becomes the primary one
        /// unless the configured primary K is listed.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
    },
    /// Discover motifs, motif classes and the motif graph.
    Motifs {
        #[command(flatten)]
        out: Out,
        #[arg(long)]
        no_within_day: bool,
    },
    /// TF-IDF between app categories and states.
    Validate {
        #[command(flatten)]
        out: Out,
    },
    /// Render SVG views.
    Report {
        #[command(flatten)]
        out: Out,
    },
    /// Run every stage in order.
    Pipeline {
        #[command(flatten)]
        out: Out,
    },
    /// Check artifact hashes against the stage manifests.
    Verify {
        #[command(flatten)]
        out: Out,
    },
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn load_config(path: Option<&PathBuf>) -> urbanrhythm::Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn summary(m: &Manifest) -> serde_json::Value {
    json!({ "stage": m.stage, "outputs": m.outputs.keys().collect::<Vec<_>>() })
}

fn run(cli: Cli) -> urbanrhythm::Result<()> {
    let mut config = load_config(cli.config.as_ref())?;
    let (stage, out) = match cli.command {
        Command::ShowConfig => {
            print!("{}", config.to_toml()?);
            return Ok(());
        }
        Command::Synth { out, seed } => {
            if let Some(s) = seed {
                config.synth.seed = s;
            }
            (Some(Stage::Synth), out)
        }
        Command::Ingest { out } => (Some(Stage::Ingest), out),
        Command::Features { out } => (Some(Stage::Features), out),
        Command::Cluster { out, k } => {
            if let Some(ks) = k {
                if !ks.contains(&config.cluster.primary_k) {
                    config.cluster.primary_k = *ks.first().ok_or_else(|| Error::InvalidParams("empty --k".into()))?;
                }
                config.cluster.ks = ks;
            }
            (Some(Stage::Cluster), out)
        }
        Command::Motifs { out, no_within_day } => {
            if no_within_day {
                config.motif.within_day = false;
            }
            (Some(Stage::Motifs), out)
        }
        Command::Validate { out } => (Some(Stage::Validate), out),
        Command::Report { out } => (Some(Stage::Report), out),
        Command::Pipeline { out } => (None, out),
        Command::Verify { out } => {
            let root = out.out.unwrap_or_else(|| config.output_root());
            let problems = pipeline::verify_manifests(&root)?;
            println!("{}", json!({ "ok": problems.is_empty(), "problems": problems }));
            return if problems.is_empty() {
                Ok(())
            } else {
                Err(Error::Malformed {
                    what: "artifact chain".into(),
                    detail: format!("{} mismatches", problems.len()),
                })
            };
        }
    };
    config.validate()?;
    let root = out.out.unwrap_or_else(|| config.output_root());
    let p = Pipeline::new(config, root);
    let stages = match stage {
        Some(s) => vec![s],
        None => p.stages(),
    };
    for s in stages {
        info!("running {}", s.name());
        let m = p.run(s)?;
        info!("{} wrote {} artifacts", s.name(), m.outputs.len());
        println!("{}", summary(&m));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("URBANRHYTHM_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = json!({
                "error": e.kind(),
                "stage": e.stage(),
                "message": e.to_string(),
            });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
