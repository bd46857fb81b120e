//! Command-line driver for the gaze-saliency pipeline.

pub mod config;
pub mod error;
pub mod experiments;
pub mod files;
pub mod pipeline;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gazesal_core::clustering::DbscanParams;
use gazesal_core::data_model::Protocol;
use gazesal_core::synth::{generate, write_corpus, SynthConfig};

use crate::config::{GroundTruth, PipelineConfig};
use crate::error::{CliError, CliResult, EXIT_OK, EXIT_VALIDATION};

#[derive(Debug, Parser)]
#[command(name = "gazesal", version, about = "Gaze fixation processing, saliency evaluation and toy policy training")]
pub struct Cli {
    /// TOML or JSON pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for training and synthetic data.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Output root.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Restrict to these protocols (repeatable).
    #[arg(long = "protocol", global = true, value_parser = parse_protocol)]
    pub protocols: Vec<Protocol>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic gaze corpus (gaze.csv, profiles.csv, manifest.json).
    Synth {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 2)]
        videos: usize,
        #[arg(long, default_value_t = 3)]
        seconds: u32,
        #[arg(long, default_value_t = 2)]
        observers_per_cell: usize,
    },
    /// Segment gaze logs into scenes and write normalized point files.
    Ingest {
        #[arg(long)]
        gaze: Option<PathBuf>,
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// `csv` or `jsonl`.
        #[arg(long)]
        format: Option<String>,
    },
    /// Consolidate raw points with adaptive DBSCAN.
    Cluster,
    /// Render normalized heatmaps from clustered fixations.
    Render {
        #[command(flatten)]
        kernel: KernelArgs,
    },
    /// Score heatmaps against ground-truth points.
    Eval {
        /// Root holding `<protocol>/<scene>__<group>.bin` predictions.
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long, value_enum)]
        gt: Option<GroundTruth>,
        #[command(flatten)]
        kernel: KernelArgs,
    },
    /// Write heatmap PNGs, P2 panels and a markdown summary.
    Report,
    /// Ingest, cluster, render, eval and report in one go.
    Run,
    /// Reward a JSONL batch of model outputs against a fixation file.
    Score {
        #[arg(long)]
        batch: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        /// Output JSONL; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        reward: RewardArgs,
    },
    /// Fixed-parameter DBSCAN sweep scored against raw-point heatmaps.
    SweepDbscan {
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.03, 0.04, 0.05])]
        eps: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1usize])]
        min_pts: Vec<usize>,
    },
    /// Train one toy policy per reward balance `r_base:r_extra`.
    SweepReward {
        #[arg(long, value_delimiter = ',', value_parser = parse_pair,
              default_values = ["0.2:0.8", "0.5:0.5", "0.8:0.2"])]
        settings: Vec<(f64, f64)>,
        /// Directory of fixation files to train on; synthetic groups otherwise.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        grpo: GrpoArgs,
    },
    /// Train the toy point policy with C-GRPO.
    TrainToy {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Artifact directory; `<out>/train` when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        grpo: GrpoArgs,
        #[command(flatten)]
        reward: RewardArgs,
    },
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    /// Kernel std in pixels; defaults to width / 25.
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RewardArgs {
    #[arg(long)]
    pub r_base: Option<f64>,
    #[arg(long)]
    pub r_extra: Option<f64>,
    #[arg(long)]
    pub d_max: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GrpoArgs {
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub clip_eps: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub stochastic_delimiters: Option<bool>,
    #[arg(long)]
    pub initial_validity: Option<f64>,
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    s.parse()
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected r_base:r_extra, got `{s}`"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok((num(a)?, num(b)?))
}

macro_rules! patch {
    ($target:expr, $($field:ident <- $value:expr),* $(,)?) => {
        $(if let Some(v) = $value { $target.$field = v; })*
    };
}

impl KernelArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if self.sigma.is_some() {
            cfg.kernel.sigma = self.sigma;
        }
    }
}

impl RewardArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        patch!(cfg.reward, r_base <- self.r_base, r_extra <- self.r_extra, d_max <- self.d_max);
    }
}

impl GrpoArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        patch!(cfg.grpo,
            group_size <- self.group_size,
            clip_eps <- self.clip_eps,
            beta <- self.beta,
            learning_rate <- self.learning_rate,
            iterations <- self.iterations,
            bins <- self.bins,
            k_max <- self.k_max,
            stochastic_delimiters <- self.stochastic_delimiters,
            initial_validity <- self.initial_validity,
        );
    }
}

fn base_config(cli: &Cli) -> CliResult<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.grpo.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.paths.out = out.clone();
    }
    if !cli.protocols.is_empty() {
        cfg.protocols = cli.protocols.clone();
        cfg.protocols.dedup();
    }
    Ok(cfg)
}

fn print_eval(rows: &[(Protocol, Vec<pipeline::EvalRow>)]) {
    for (protocol, rows) in rows {
        print!("{}", pipeline::eval_table(*protocol, rows));
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    let mut cfg = base_config(cli)?;
    match &cli.command {
        Command::Synth {
            dir,
            videos,
            seconds,
            observers_per_cell,
        } => {
            let synth = SynthConfig {
                videos: *videos,
                seconds: *seconds,
                observers_per_cell: *observers_per_cell,
                seed: cli.seed.unwrap_or(SynthConfig::default().seed),
                ..SynthConfig::default()
            };
            write_corpus(&generate(&synth), dir).map_err(|e| CliError::at(dir, e))?;
            println!("wrote synthetic corpus to {}", dir.display());
        }
        Command::Ingest {
            gaze,
            profiles,
            manifest,
            format,
        } => {
            patch!(cfg.paths, gaze <- gaze.clone(), profiles <- profiles.clone(), manifest <- manifest.clone());
            patch!(cfg, gaze_format <- format.clone());
            print!("{}", pipeline::summary_table(&pipeline::ingest(&cfg)?));
        }
        Command::Cluster => print!("{}", pipeline::summary_table(&pipeline::cluster(&cfg)?)),
        Command::Render { kernel } => {
            kernel.apply(&mut cfg);
            for (protocol, n) in pipeline::render(&cfg)? {
                println!("{}: {n} heatmaps", files::protocol_name(protocol));
            }
        }
        Command::Eval { pred, gt, kernel } => {
            kernel.apply(&mut cfg);
            patch!(cfg, ground_truth <- *gt);
            print_eval(&pipeline::eval(&cfg, pred.as_deref())?);
        }
        Command::Report => println!("{} images written", pipeline::report(&cfg)?),
        Command::Run => {
            print!("{}", pipeline::summary_table(&pipeline::ingest(&cfg)?));
            print!("{}", pipeline::summary_table(&pipeline::cluster(&cfg)?));
            pipeline::render(&cfg)?;
            print_eval(&pipeline::eval(&cfg, None)?);
            println!("{} images written", pipeline::report(&cfg)?);
        }
        Command::Score {
            batch,
            targets,
            output,
            reward,
        } => {
            reward.apply(&mut cfg);
            let lines = experiments::score(batch, targets, &cfg.reward)?;
            match output {
                Some(path) => experiments::write_jsonl(&lines, files::create(path)?)
                    .map_err(|e| CliError::at(path, gazesal_core::Error::io(path, e)))?,
                None => experiments::write_jsonl(&lines, std::io::stdout().lock())
                    .map_err(|e| CliError::Core(e.into()))?,
            }
        }
        Command::SweepDbscan { eps, min_pts } => {
            let settings: Vec<DbscanParams> = eps
                .iter()
                .flat_map(|&eps| min_pts.iter().map(move |&min_pts| DbscanParams { eps, min_pts }))
                .collect();
            for &protocol in &cfg.protocols {
                println!("{}", files::protocol_name(protocol));
                println!("{:>6}{:>8}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}", "eps", "minPts", "KL", "CC", "SIM", "NSS", "AUC", "maxN_Pts");
                for r in experiments::sweep_dbscan(&cfg, protocol, &settings)? {
                    println!(
                        "{:>6}{:>8}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>10}",
                        r.eps, r.min_pts, r.kl, r.cc, r.sim, r.nss, r.auc, r.max_n_pts
                    );
                }
            }
        }
        Command::SweepReward {
            settings,
            dataset,
            grpo,
        } => {
            grpo.apply(&mut cfg);
            println!("{:>7}{:>8}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}", "r_base", "r_extra", "KL", "CC", "SIM", "NSS", "AUC", "reward", "valid");
            for r in experiments::sweep_reward(&cfg, dataset.as_deref(), settings)? {
                println!(
                    "{:>7}{:>8}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>10.4}",
                    r.r_base, r.r_extra, r.kl, r.cc, r.sim, r.nss, r.auc, r.mean_reward, r.format_validity
                );
            }
        }
        Command::TrainToy {
            dataset,
            output,
            grpo,
            reward,
        } => {
            grpo.apply(&mut cfg);
            reward.apply(&mut cfg);
            let dir = output.clone().unwrap_or_else(|| cfg.paths.out.join("train"));
            let run = experiments::train_toy(&cfg, dataset.as_deref(), &dir)?;
            print!("{}", experiments::toy_summary(&run));
        }
    }
    Ok(())
}

/// Parses `args`, runs the command on a pool of `--jobs` threads and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return error::EXIT_INTERNAL;
        }
    };
    match pool.install(|| execute(&cli)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
