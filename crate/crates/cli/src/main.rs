//! Command-line front end for the skill-parsing experiments.
//!
//! Exit codes: 0 on success, 1 when a pipeline stage fails, 2 when the
//! configuration is invalid.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use skillparse::collector::{self, IdmDataset};
use skillparse::demos::{self, Demonstration};
use skillparse::idm;
use skillparse::parser::{self, ParsedSequence};
use skillparse::policy;
use skillparse::world::TaskSpec;

use skillparse_harness::config::ExperimentConfig;
use skillparse_harness::metrics::MetricsReport;
use skillparse_harness::pipeline;
use skillparse_harness::HarnessError;

#[derive(Parser)]
#[command(
    name = "skillparse",
    version,
    about = "Parse demonstrations into skills and train two-level policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus the overrides shared by every subcommand.
#[derive(Args, Debug)]
struct ConfigArgs {
    /// Experiment config (TOML); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task name override.
    #[arg(long)]
    task: Option<String>,
    /// Demonstration count override.
    #[arg(long)]
    demo_count: Option<usize>,
    /// Demonstration action-noise override.
    #[arg(long)]
    demo_noise: Option<f64>,
    /// Seed list override, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Collection episode-count override.
    #[arg(long)]
    episodes: Option<usize>,
    /// Segment-count penalty override.
    #[arg(long)]
    alpha: Option<f64>,
    /// Boundary stride override.
    #[arg(long)]
    stride: Option<usize>,
    /// Evaluation episodes per seed.
    #[arg(long)]
    eval_episodes: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(task) = &self.task {
            cfg.task = task.clone();
        }
        if let Some(demos) = self.demo_count {
            cfg.demos = demos;
        }
        if let Some(noise) = self.demo_noise {
            cfg.demo_noise = noise;
        }
        if let Some(seeds) = &self.seeds {
            cfg.seeds = seeds.clone();
        }
        if let Some(episodes) = self.episodes {
            cfg.collector.episodes = episodes;
        }
        if let Some(alpha) = self.alpha {
            cfg.alpha = alpha;
        }
        if let Some(stride) = self.stride {
            cfg.stride = stride;
        }
        if let Some(eval) = self.eval_episodes {
            cfg.eval_episodes = eval;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Collect a self-supervised interaction dataset.
    Collect {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset output path.
        #[arg(long)]
        out: PathBuf,
        /// Re-execution audit output path (defaults next to the dataset).
        #[arg(long)]
        audits: Option<PathBuf>,
    },
    /// Script noisy expert demonstrations.
    CollectDemos {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Demonstration file output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the inverse model on a collected dataset.
    TrainIdm {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Collected dataset path.
        #[arg(long)]
        data: PathBuf,
        /// Model output path.
        #[arg(long)]
        out: PathBuf,
        /// Training epochs override.
        #[arg(long)]
        epochs: Option<usize>,
        /// Training seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Segment demonstrations into skill sequences.
    Parse {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Demonstration file.
        #[arg(long)]
        demos: PathBuf,
        /// Trained inverse-model file.
        #[arg(long)]
        model: PathBuf,
        /// Parsed-sequence output path.
        #[arg(long)]
        out: PathBuf,
        /// Use the greedy splitter instead of the exact dynamic program.
        #[arg(long)]
        greedy: bool,
    },
    /// Re-execute parsed sequences and report success.
    Replay {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Parsed-sequence file.
        #[arg(long)]
        parsed: PathBuf,
        /// Demonstration file the parses came from.
        #[arg(long)]
        demos: PathBuf,
        /// Optional JSON report output path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train the two-level policy from parses.
    TrainPolicy {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Parsed-sequence file.
        #[arg(long)]
        parsed: PathBuf,
        /// Demonstration file the parses came from.
        #[arg(long)]
        demos: PathBuf,
        /// Collected dataset for pretraining.
        #[arg(long)]
        idm_data: Option<PathBuf>,
        /// Trained inverse model for stepwise augmentation.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Pretrain on collected skill executions (default).
        #[arg(long, overrides_with = "no_pretrain")]
        pretrain: bool,
        /// Skip pretraining.
        #[arg(long)]
        no_pretrain: bool,
        /// Add stepwise relabeled tuples (default; needs --model).
        #[arg(long, overrides_with = "no_augment")]
        augment: bool,
        /// Train on segment endpoints only.
        #[arg(long)]
        no_augment: bool,
        /// Training seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Policy output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a policy over fresh episodes.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Policy checkpoint path.
        #[arg(long)]
        policy: PathBuf,
        /// Treat the checkpoint as a flat behavioral-cloning policy.
        #[arg(long)]
        bc: bool,
        /// Evaluation seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the full experiment with every ablation enabled.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full experiment end to end.
    RunAll {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute tables and plots from a run's metrics.
    Report {
        /// Run directory holding metrics.csv.
        #[arg(long)]
        dir: PathBuf,
    },
}

fn save_err(e: skillparse::io::ContainerError) -> HarnessError {
    HarnessError::stage("save", e)
}

fn load_err(stage: &str) -> impl Fn(skillparse::io::ContainerError) -> HarnessError + '_ {
    move |e| HarnessError::stage(stage, e)
}

fn load_spec_for(cfg: &ExperimentConfig, task: &str) -> Result<TaskSpec, HarnessError> {
    if task == cfg.task {
        cfg.spec()
    } else {
        TaskSpec::builtin(task)
            .ok_or_else(|| HarnessError::Config(format!("unknown task {task:?}")))
    }
}

fn load_demo_pair(
    cfg: &ExperimentConfig,
    parsed: &Path,
    demo_path: &Path,
) -> Result<(TaskSpec, Vec<Demonstration>, Vec<ParsedSequence>), HarnessError> {
    let demos = demos::load_demos(demo_path).map_err(load_err("load-demos"))?;
    let parses = parser::load_parsed(parsed).map_err(load_err("load-parsed"))?;
    if parses.len() != demos.len() {
        return Err(HarnessError::Config(format!(
            "{} parses for {} demonstrations",
            parses.len(),
            demos.len()
        )));
    }
    let task = demos
        .first()
        .map(|d| d.task.clone())
        .ok_or_else(|| HarnessError::Config("demonstration file is empty".into()))?;
    let spec = load_spec_for(cfg, &task)?;
    Ok((spec, demos, parses))
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Collect { cfg, out, audits } => {
            let cfg = cfg.resolve()?;
            let (dataset, raw_audits, _) = pipeline::collect_stage(&cfg)?;
            collector::save_dataset(&out, &dataset).map_err(save_err)?;
            let audit_path = audits.unwrap_or_else(|| out.with_extension("audits.jsonl"));
            collector::save_audits(&audit_path, &dataset.task, &raw_audits).map_err(save_err)?;
            println!(
                "wrote {} samples to {} and {} audits to {}",
                dataset.samples.len(),
                out.display(),
                raw_audits.len(),
                audit_path.display()
            );
        }
        Command::CollectDemos { cfg, out } => {
            let cfg = cfg.resolve()?;
            let spec = cfg.spec()?;
            let demos = pipeline::demo_stage(&cfg, &spec)?;
            demos::save_demos(&out, &demos).map_err(save_err)?;
            println!("wrote {} demonstrations to {}", demos.len(), out.display());
        }
        Command::TrainIdm {
            cfg,
            data,
            out,
            epochs,
            seed,
        } => {
            let mut cfg = cfg.resolve()?;
            if let Some(epochs) = epochs {
                cfg.idm.fit.epochs = epochs;
            }
            let dataset = collector::load_dataset(&data).map_err(load_err("load-dataset"))?;
            let (train, holdout) = dataset.split_holdout(cfg.holdout_frac);
            let models = pipeline::train_idm_stage(&train, &cfg.idm, seed)?;
            idm::save_model(&out, &models).map_err(save_err)?;
            let accuracy = idm::classifier_accuracy(&models, &holdout.samples);
            println!(
                "trained on {} samples; holdout accuracy {accuracy:.3}; wrote {}",
                train.samples.len(),
                out.display()
            );
        }
        Command::Parse {
            cfg,
            demos: demo_path,
            model,
            out,
            greedy,
        } => {
            let cfg = cfg.resolve()?;
            let demos = demos::load_demos(&demo_path).map_err(load_err("load-demos"))?;
            let models = idm::load_model(&model).map_err(load_err("load-model"))?;
            let task = demos
                .first()
                .map(|d| d.task.clone())
                .ok_or_else(|| HarnessError::Config("demonstration file is empty".into()))?;
            let spec = load_spec_for(&cfg, &task)?;
            let parses =
                pipeline::parse_stage(&spec, &demos, &models, cfg.alpha, cfg.stride, greedy)?;
            parser::save_parsed(&out, &task, &parses).map_err(save_err)?;
            let segments: usize = parses.iter().map(|p| p.segments.len()).sum();
            println!(
                "parsed {} demonstrations into {segments} segments; wrote {}",
                parses.len(),
                out.display()
            );
        }
        Command::Replay {
            cfg,
            parsed,
            demos: demo_path,
            report,
        } => {
            let cfg = cfg.resolve()?;
            let (spec, demos, parses) = load_demo_pair(&cfg, &parsed, &demo_path)?;
            let stats = pipeline::replay_stats(&spec, &parses, &demos);
            println!(
                "replay success {:.3}; {:.2} segments per demo of {:.0} frames (compression {:.4})",
                stats.success_rate,
                stats.mean_seq_len,
                stats.mean_demo_len,
                stats.mean_seq_len / stats.mean_demo_len
            );
            if let Some(path) = report {
                let json = serde_json::json!({
                    "replay_success": stats.success_rate,
                    "mean_seq_len": stats.mean_seq_len,
                    "mean_demo_len": stats.mean_demo_len,
                });
                std::fs::write(&path, serde_json::to_string_pretty(&json).unwrap())
                    .map_err(|e| HarnessError::stage("report", e))?;
            }
        }
        Command::TrainPolicy {
            cfg,
            parsed,
            demos: demo_path,
            idm_data,
            model,
            pretrain: _,
            no_pretrain,
            augment: _,
            no_augment,
            seed,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let (spec, demos, parses) = load_demo_pair(&cfg, &parsed, &demo_path)?;
            let pretrain = !no_pretrain;
            let augment = !no_augment;

            let models = match (&model, augment) {
                (Some(path), true) => {
                    Some(idm::load_model(path).map_err(load_err("load-model"))?)
                }
                (None, true) => {
                    return Err(HarnessError::Config(
                        "--augment needs --model for relabeling".into(),
                    ))
                }
                _ => None,
            };
            let bundle = pipeline::gather_tuples(&spec, &demos, &parses, models.as_ref())?;
            eprintln!(
                "[tuples] {} parsed + {} augmented, relabel disagreement {:.3}",
                bundle.parsed,
                bundle.augmented,
                bundle.disagreement_rate()
            );

            let mut policy_cfg = cfg.policy.clone();
            policy_cfg.fit.seed = seed;
            let start = if pretrain {
                let data_path = idm_data.ok_or_else(|| {
                    HarnessError::Config("--pretrain needs --idm-data".into())
                })?;
                let dataset: IdmDataset =
                    collector::load_dataset(&data_path).map_err(load_err("load-dataset"))?;
                let (train, _) = dataset.split_holdout(cfg.holdout_frac);
                let (prim, param, _) = policy::pretrain_policy(&train, &policy_cfg)
                    .map_err(|e| HarnessError::stage("pretrain", e))?;
                (prim, param)
            } else {
                policy::init_policy(skillparse::collector::feature_dim(&spec), &policy_cfg)
            };
            let (prim, param, _) =
                policy::finetune_policy(start.0, start.1, &bundle.tuples, &policy_cfg)
                    .map_err(|e| HarnessError::stage("train-policy", e))?;
            policy::save_policy(&out, &prim, &param).map_err(save_err)?;
            println!(
                "trained on {} tuples; wrote {}",
                bundle.tuples.len(),
                out.display()
            );
        }
        Command::Eval {
            cfg,
            policy: policy_path,
            bc,
            seed,
        } => {
            let cfg = cfg.resolve()?;
            let spec = cfg.spec()?;
            let rate = if bc {
                let policy = policy::load_bc(&policy_path).map_err(load_err("load-policy"))?;
                pipeline::eval_bc(&policy, &spec, seed, cfg.eval_episodes, cfg.bc_max_steps)
            } else {
                let (prim, param) =
                    policy::load_policy(&policy_path).map_err(load_err("load-policy"))?;
                pipeline::eval_policy(&prim, &param, &spec, seed, cfg.eval_episodes, cfg.max_prims)
            };
            println!(
                "success rate {rate:.3} over {} episodes (seed {seed})",
                cfg.eval_episodes
            );
        }
        Command::Ablate { cfg, out } => {
            let mut cfg = cfg.resolve()?;
            cfg.ablations.no_pretrain = true;
            cfg.ablations.greedy_parse = true;
            cfg.ablations.no_augment = true;
            let report = pipeline::run_pipeline(&cfg, &out)?;
            print!("{}", report.ablation_csv());
        }
        Command::RunAll { cfg, out } => {
            let cfg = cfg.resolve()?;
            let report = pipeline::run_pipeline(&cfg, &out)?;
            print!("{}", report.to_csv());
        }
        Command::Report { dir } => {
            let report = MetricsReport::read_csv(&dir.join("metrics.csv"))?;
            let recomputed = MetricsReport::from_rows(
                &report.task,
                report.seeds.clone(),
            );
            if recomputed.aggregate != report.aggregate {
                return Err(HarnessError::Config(
                    "stored aggregates do not match recomputation from seed rows".into(),
                ));
            }
            std::fs::write(dir.join("ablations.csv"), report.ablation_csv())
                .map_err(|e| HarnessError::stage("report", e))?;
            report.write_plots(&dir.join("plots"))?;
            print!("{}", report.to_csv());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
