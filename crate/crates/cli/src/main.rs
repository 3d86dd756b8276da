use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use huecontour::{SchemeName, SubsetMode};

mod commands;
mod config;

use config::{parse_modes, ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "huecontour", version, about = "Hue contour phenotypes and maturity classification for plot image time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (.toml or .json); flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Random seed (overrides PHENO_SEED and the config file)
    #[arg(long)]
    seed: Option<u64>,
    /// Class scheme: seven, five, four-first or four-second
    #[arg(long, alias = "classes")]
    scheme: Option<SchemeName>,
    /// Worker threads for per-plot work
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct Inputs {
    /// Plot manifest CSV
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory with histograms.csv and exg.csv from `ingest`; images are
    /// processed on the fly otherwise
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Training {
    /// Temporal subset: all8, distributed6/4/3, last6/4/3
    #[arg(long)]
    subset: Option<SubsetMode>,
    /// Saved split (split.json); a fresh stratified split otherwise
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// SMOTE neighbour count
    #[arg(long)]
    smote_k: Option<usize>,
    /// Train on the raw class mix
    #[arg(long, conflicts_with = "smote_k")]
    no_smote: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort: images, manifest and ground truth
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        plots: Option<usize>,
        #[arg(long)]
        timepoints: Option<usize>,
        /// Image size as WIDTHxHEIGHT
        #[arg(long, value_parser = parse_size)]
        image_size: Option<(u32, u32)>,
    },
    /// Extract hue histograms and mean ExG from every manifest image
    Ingest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Render contour phenotypes (PNG plus grid CSV) for one temporal subset
    Encode {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        subset: Option<SubsetMode>,
        /// Colormap CSV with index,r,g,b rows
        #[arg(long)]
        colormap: Option<PathBuf>,
        /// Skip the per-plot grid CSVs
        #[arg(long)]
        no_grids: bool,
    },
    /// ExG slope extraction, slope-by-group summary and slope-yield correlation
    Analyze {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Split the cohort and oversample the training part
    Balance {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        training: Training,
    },
    /// Train a classifier and evaluate it on the held-out plots
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        training: Training,
        /// Two-stage model over grouped neighbouring classes
        #[arg(long)]
        hierarchical: bool,
        /// Also compare temporal subsets: `all` or a comma-separated list
        #[arg(long)]
        subset_study: Option<String>,
    },
    /// Evaluate a saved model
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
        /// Which part of the split to score
        #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
        partition: String,
    },
    /// Train one model per temporal subset and tabulate accuracies
    SubsetStudy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        training: Training,
        /// `all` or a comma-separated list of modes
        #[arg(long)]
        modes: Option<String>,
    },
    /// Summarize the outputs of earlier runs as Markdown
    Report {
        #[command(flatten)]
        common: Common,
        /// Run directories to summarize (default: the output directory)
        #[arg(long = "from")]
        from: Vec<PathBuf>,
    },
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("`{s}` is not WIDTHxHEIGHT"))?;
    let dim = |v: &str| v.trim().parse::<u32>().map_err(|_| format!("`{v}` is not a size"));
    Ok((dim(w)?, dim(h)?))
}

impl Common {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.scheme {
            cfg.scheme = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = Some(v);
        }
    }
}

impl Inputs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = &self.manifest {
            cfg.manifest = Some(v.clone());
        }
        if let Some(v) = &self.features {
            cfg.features = Some(v.clone());
        }
    }
}

impl Training {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.subset {
            cfg.subset = v;
        }
        if let Some(v) = &self.split {
            cfg.split = Some(v.clone());
        }
        if let Some(v) = self.epochs {
            cfg.hyperparams.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.hyperparams.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.hyperparams.batch_size = v;
        }
        if let Some(v) = self.smote_k {
            cfg.smote_k = Some(v);
        }
        if self.no_smote {
            cfg.smote_k = None;
        }
    }
}

/// Builds the effective configuration: defaults or the config file, then
/// `PHENO_SEED`, then flags.
fn resolve(name: &str, common: &Common, apply: impl FnOnce(&mut RunConfig)) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    common.apply(&mut cfg);
    apply(&mut cfg);
    cfg.command = name.to_string();
    cfg.validate()?;
    if let Some(n) = cfg.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synthesize {
            common,
            plots,
            timepoints,
            image_size,
        } => {
            let cfg = resolve("synthesize", &common, |c| {
                if let Some(v) = plots {
                    c.plots = v;
                }
                if let Some(v) = timepoints {
                    c.timepoints = v;
                }
                if let Some(v) = image_size {
                    c.image_size = v;
                }
            })?;
            commands::synthesize(&cfg)
        }
        Command::Ingest { common, inputs } => commands::ingest(&resolve("ingest", &common, |c| inputs.apply(c))?),
        Command::Encode {
            common,
            inputs,
            subset,
            colormap,
            no_grids,
        } => {
            let cfg = resolve("encode", &common, |c| {
                inputs.apply(c);
                if let Some(v) = subset {
                    c.subset = v;
                }
                if let Some(v) = colormap {
                    c.colormap = Some(v);
                }
                if no_grids {
                    c.write_grids = false;
                }
            })?;
            commands::encode(&cfg)
        }
        Command::Analyze { common, inputs } => commands::analyze(&resolve("analyze", &common, |c| inputs.apply(c))?),
        Command::Balance {
            common,
            inputs,
            training,
        } => {
            let cfg = resolve("balance", &common, |c| {
                inputs.apply(c);
                training.apply(c);
            })?;
            commands::balance(&cfg)
        }
        Command::Train {
            common,
            inputs,
            training,
            hierarchical,
            subset_study,
        } => {
            let study = subset_study.as_deref().map(parse_modes).transpose()?;
            let cfg = resolve("train", &common, |c| {
                inputs.apply(c);
                training.apply(c);
                if hierarchical {
                    c.hierarchical = true;
                }
                if let Some(v) = study {
                    c.subset_study = v;
                }
            })?;
            commands::train(&cfg)
        }
        Command::Evaluate {
            common,
            inputs,
            checkpoint,
            split,
            partition,
        } => {
            let cfg = resolve("evaluate", &common, |c| {
                inputs.apply(c);
                if let Some(v) = checkpoint {
                    c.checkpoint = Some(v);
                }
                if let Some(v) = split {
                    c.split = Some(v);
                }
            })?;
            commands::evaluate(&cfg, &partition)
        }
        Command::SubsetStudy {
            common,
            inputs,
            training,
            modes,
        } => {
            let modes = modes.as_deref().map(parse_modes).transpose()?;
            let cfg = resolve("subset-study", &common, |c| {
                inputs.apply(c);
                training.apply(c);
                if let Some(v) = modes {
                    c.subset_study = v;
                }
                if c.subset_study.is_empty() {
                    c.subset_study = SubsetMode::ALL.to_vec();
                }
            })?;
            commands::subset_study(&cfg)
        }
        Command::Report { common, from } => {
            let cfg = resolve("report", &common, |_| {})?;
            commands::report(&cfg, &from)
        }
    }
}

/// 2 for configuration and input validation errors, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err.chain().any(|e| {
        e.downcast_ref::<ConfigError>().is_some()
            || e.downcast_ref::<huecontour::Error>().is_some_and(huecontour::Error::is_validation)
    });
    if validation {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
