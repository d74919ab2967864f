//! Staged experiment pipeline.
//!
//! One run: collect interaction data, script demonstrations, then per seed
//! train the inverse model, parse, replay, train the two-level policy and its
//! ablations, train the flat baseline, and evaluate everything. Artifacts
//! land under a run directory with the resolved config, metric tables, plot
//! series, timings, and a checksum manifest.
//!
//! Collection and demonstrations are shared across seeds; seeds vary network
//! initialization and training-batch order, mirroring a multi-seed paper run
//! on a fixed dataset.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use skillparse::collector::{self, DatasetSummary, IdmDataset, RawPositive};
use skillparse::demos::{self, Demonstration};
use skillparse::idm::{self, IdmModels, TrainConfig};
use skillparse::parser::{self, ParsedSequence};
use skillparse::policy::{self, DecisionMode, FlatBcPolicy, ParameterPolicy, PolicyTuple, PrimitivePolicy};
use skillparse::primitives::PrimitiveType;
use skillparse::world::TaskSpec;

use crate::config::{ExperimentConfig, DEMO_SEED_BASE};
use crate::manifest::{Manifest, TIMINGS_NAME};
use crate::metrics::{MetricsReport, SeedMetrics};
use crate::HarnessError;

/// Wall-clock accounting for the stages of one run.
#[derive(Debug, Default)]
pub struct Stopwatch {
    rows: Vec<(String, f64)>,
}

impl Stopwatch {
    pub fn new() -> Stopwatch {
        Stopwatch::default()
    }

    /// Run one stage, recording and logging its duration.
    pub fn time<T>(
        &mut self,
        label: &str,
        f: impl FnOnce() -> Result<T, HarnessError>,
    ) -> Result<T, HarnessError> {
        let start = Instant::now();
        let out = f()?;
        let seconds = start.elapsed().as_secs_f64();
        eprintln!("[{label}] {seconds:.1}s");
        self.rows.push((label.to_string(), seconds));
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        let mut text = String::from("stage,seconds\n");
        for (stage, seconds) in &self.rows {
            text.push_str(&format!("{stage},{seconds:.3}\n"));
        }
        std::fs::write(path, text).map_err(|e| HarnessError::stage("report", e))
    }
}

/// Collect the self-supervised dataset and log its composition.
pub fn collect_stage(
    cfg: &ExperimentConfig,
) -> Result<(IdmDataset, Vec<RawPositive>, DatasetSummary), HarnessError> {
    let spec = cfg.spec()?;
    let (dataset, audits, summary) = collector::collect_dataset(&spec, &cfg.collector)
        .map_err(|e| HarnessError::stage("collect", e))?;
    let counts: Vec<String> = PrimitiveType::ALL
        .into_iter()
        .map(|p| format!("{:?}: {}", p, summary.counts[p.index()]))
        .collect();
    eprintln!(
        "[collect] {} samples ({})",
        dataset.samples.len(),
        counts.join(", ")
    );
    if !summary.missing.is_empty() {
        eprintln!("[collect] warning: no samples for {:?}", summary.missing);
    }
    Ok((dataset, audits, summary))
}

/// Script the demonstration set. Demo seeds live in their own range so the
/// scripted layouts never coincide with evaluation layouts.
pub fn demo_stage(cfg: &ExperimentConfig, spec: &TaskSpec) -> Result<Vec<Demonstration>, HarnessError> {
    let demos: Vec<Demonstration> = (0..cfg.demos as u64)
        .into_par_iter()
        .map(|i| demos::script_demo(spec, DEMO_SEED_BASE + i, cfg.demo_noise))
        .collect::<Result<_, _>>()
        .map_err(|e| HarnessError::stage("demos", e))?;
    let frames: usize = demos.iter().map(Demonstration::len).sum();
    eprintln!(
        "[demos] {} demonstrations, {:.0} frames on average",
        demos.len(),
        frames as f64 / demos.len() as f64
    );
    Ok(demos)
}

/// Train the inverse model with the given training seed.
pub fn train_idm_stage(
    train: &IdmDataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<IdmModels, HarnessError> {
    let mut cfg = cfg.clone();
    cfg.fit.seed = seed;
    let (models, _) = idm::train_idm(train, &cfg).map_err(|e| HarnessError::stage("train-idm", e))?;
    Ok(models)
}

/// Parse every demonstration, exactly (dynamic program) or greedily.
pub fn parse_stage(
    spec: &TaskSpec,
    demos: &[Demonstration],
    models: &IdmModels,
    alpha: f64,
    stride: usize,
    greedy: bool,
) -> Result<Vec<ParsedSequence>, HarnessError> {
    demos
        .par_iter()
        .map(|demo| {
            if greedy {
                parser::parse_greedy(spec, demo, models, alpha, stride)
            } else {
                parser::parse_dp(spec, demo, models, alpha, stride)
            }
        })
        .collect::<Result<_, _>>()
        .map_err(|e| HarnessError::stage("parse", e))
}

/// Replay quality of a parse set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayStats {
    pub success_rate: f64,
    pub mean_seq_len: f64,
    pub mean_demo_len: f64,
}

/// Re-execute every parse from its demo's initial state and average.
pub fn replay_stats(
    spec: &TaskSpec,
    parses: &[ParsedSequence],
    demos: &[Demonstration],
) -> ReplayStats {
    assert_eq!(parses.len(), demos.len(), "one parse per demonstration");
    let successes = parses
        .par_iter()
        .zip(demos)
        .filter(|(parsed, demo)| parser::replay(spec, parsed, demo).success)
        .count();
    let segments: usize = parses.iter().map(|p| p.segments.len()).sum();
    let frames: usize = demos.iter().map(Demonstration::len).sum();
    let n = demos.len() as f64;
    ReplayStats {
        success_rate: successes as f64 / n,
        mean_seq_len: segments as f64 / n,
        mean_demo_len: frames as f64 / n,
    }
}

/// Imitation tuples drawn from a parse set, with relabeling bookkeeping.
#[derive(Debug, Clone)]
pub struct TupleBundle {
    pub tuples: Vec<PolicyTuple>,
    pub parsed: usize,
    pub augmented: usize,
    /// Augmented tuples whose relabeled class differs from the class of the
    /// parse segment they were drawn from.
    pub disagreements: usize,
}

impl TupleBundle {
    pub fn disagreement_rate(&self) -> f64 {
        if self.augmented == 0 {
            0.0
        } else {
            self.disagreements as f64 / self.augmented as f64
        }
    }
}

/// Endpoint tuples from the parses, plus stepwise relabeled tuples when
/// `models` is given.
pub fn gather_tuples(
    spec: &TaskSpec,
    demos: &[Demonstration],
    parses: &[ParsedSequence],
    models: Option<&IdmModels>,
) -> Result<TupleBundle, HarnessError> {
    assert_eq!(parses.len(), demos.len(), "one parse per demonstration");
    let mut bundle = TupleBundle {
        tuples: Vec::new(),
        parsed: 0,
        augmented: 0,
        disagreements: 0,
    };
    for (demo, parse) in demos.iter().zip(parses) {
        let endpoints = policy::parsed_tuples(spec, demo, parse);
        bundle.parsed += endpoints.len();
        bundle.tuples.extend(endpoints);
        let Some(models) = models else { continue };
        let relabeled = policy::augment_stepwise(spec, demo, parse, models)
            .map_err(|e| HarnessError::stage("augment", e))?;
        bundle.augmented += relabeled.len();
        for tuple in &relabeled {
            let segment_class = parse
                .segments
                .iter()
                .find(|seg| seg.t_end == tuple.endpoint)
                .map(|seg| seg.p);
            if segment_class != Some(tuple.p) {
                bundle.disagreements += 1;
            }
        }
        bundle.tuples.extend(relabeled);
    }
    Ok(bundle)
}

/// Deterministic success rate of a two-level policy over fresh episodes.
pub fn eval_policy(
    prim: &PrimitivePolicy,
    param: &ParameterPolicy,
    spec: &TaskSpec,
    seed: u64,
    episodes: usize,
    max_prims: usize,
) -> f64 {
    let successes = (0..episodes as u64)
        .into_par_iter()
        .filter(|&e| {
            policy::rollout_policy(prim, param, spec, seed, e, max_prims, DecisionMode::ModeSelect)
                .success
        })
        .count();
    successes as f64 / episodes as f64
}

/// Success rate of the flat baseline over the same episode layouts.
pub fn eval_bc(bc: &FlatBcPolicy, spec: &TaskSpec, seed: u64, episodes: usize, max_steps: usize) -> f64 {
    let successes = (0..episodes as u64)
        .into_par_iter()
        .filter(|&e| policy::rollout_bc(bc, spec, seed, e, max_steps).success)
        .count();
    successes as f64 / episodes as f64
}

fn save_err(e: skillparse::io::ContainerError) -> HarnessError {
    HarnessError::stage("save", e)
}

fn finetune_and_eval(
    cfg: &ExperimentConfig,
    spec: &TaskSpec,
    start: (PrimitivePolicy, ParameterPolicy),
    tuples: &[PolicyTuple],
    policy_cfg: &TrainConfig,
    seed: u64,
    path: &Path,
) -> Result<f64, HarnessError> {
    let (prim, param, _) = policy::finetune_policy(start.0, start.1, tuples, policy_cfg)
        .map_err(|e| HarnessError::stage("train-policy", e))?;
    policy::save_policy(path, &prim, &param).map_err(save_err)?;
    Ok(eval_policy(
        &prim,
        &param,
        spec,
        seed,
        cfg.eval_episodes,
        cfg.max_prims,
    ))
}

fn run_seed(
    cfg: &ExperimentConfig,
    spec: &TaskSpec,
    train: &IdmDataset,
    holdout: &IdmDataset,
    demos: &[Demonstration],
    seed: u64,
    out: &Path,
    watch: &mut Stopwatch,
) -> Result<SeedMetrics, HarnessError> {
    let seed_dir = out.join(format!("seed-{seed}"));
    std::fs::create_dir_all(&seed_dir).map_err(|e| HarnessError::stage("run", e))?;

    let models = watch.time(&format!("train-idm seed-{seed}"), || {
        train_idm_stage(train, &cfg.idm, seed)
    })?;
    idm::save_model(&seed_dir.join("idm.jsonl"), &models).map_err(save_err)?;
    let idm_holdout_accuracy = idm::classifier_accuracy(&models, &holdout.samples);
    eprintln!("[train-idm seed-{seed}] holdout accuracy {idm_holdout_accuracy:.3}");

    let parses = watch.time(&format!("parse seed-{seed}"), || {
        parse_stage(spec, demos, &models, cfg.alpha, cfg.stride, false)
    })?;
    parser::save_parsed(&seed_dir.join("parsed.jsonl"), &spec.name, &parses).map_err(save_err)?;
    let replay = replay_stats(spec, &parses, demos);
    eprintln!(
        "[replay seed-{seed}] success {:.2}, {:.1} segments over {:.0} frames",
        replay.success_rate, replay.mean_seq_len, replay.mean_demo_len
    );

    let bundle = watch.time(&format!("tuples seed-{seed}"), || {
        gather_tuples(spec, demos, &parses, Some(&models))
    })?;
    eprintln!(
        "[tuples seed-{seed}] {} parsed + {} augmented, relabel disagreement {:.3}",
        bundle.parsed,
        bundle.augmented,
        bundle.disagreement_rate()
    );

    let mut policy_cfg = cfg.policy.clone();
    policy_cfg.fit.seed = seed;
    let pretrained = watch.time(&format!("pretrain seed-{seed}"), || {
        let (prim, param, _) = policy::pretrain_policy(train, &policy_cfg)
            .map_err(|e| HarnessError::stage("pretrain", e))?;
        Ok((prim, param))
    })?;

    let policy_success = watch.time(&format!("train-policy seed-{seed}"), || {
        finetune_and_eval(
            cfg,
            spec,
            pretrained.clone(),
            &bundle.tuples,
            &policy_cfg,
            seed,
            &seed_dir.join("policy-full.jsonl"),
        )
    })?;
    eprintln!("[eval seed-{seed}] full policy success {policy_success:.2}");

    let mut ablation_success = BTreeMap::new();
    if cfg.ablations.no_pretrain {
        let rate = watch.time(&format!("train-policy no_pretrain seed-{seed}"), || {
            finetune_and_eval(
                cfg,
                spec,
                policy::init_policy(train.feature_dim, &policy_cfg),
                &bundle.tuples,
                &policy_cfg,
                seed,
                &seed_dir.join("policy-no_pretrain.jsonl"),
            )
        })?;
        eprintln!("[eval seed-{seed}] no_pretrain success {rate:.2}");
        ablation_success.insert("no_pretrain".to_string(), rate);
    }
    if cfg.ablations.greedy_parse {
        let rate = watch.time(&format!("train-policy greedy_parse seed-{seed}"), || {
            let greedy = parse_stage(spec, demos, &models, cfg.alpha, cfg.stride, true)?;
            parser::save_parsed(&seed_dir.join("parsed-greedy.jsonl"), &spec.name, &greedy)
                .map_err(save_err)?;
            let tuples = gather_tuples(spec, demos, &greedy, Some(&models))?;
            finetune_and_eval(
                cfg,
                spec,
                pretrained.clone(),
                &tuples.tuples,
                &policy_cfg,
                seed,
                &seed_dir.join("policy-greedy_parse.jsonl"),
            )
        })?;
        eprintln!("[eval seed-{seed}] greedy_parse success {rate:.2}");
        ablation_success.insert("greedy_parse".to_string(), rate);
    }
    if cfg.ablations.no_augment {
        let rate = watch.time(&format!("train-policy no_augment seed-{seed}"), || {
            let tuples = gather_tuples(spec, demos, &parses, None)?;
            finetune_and_eval(
                cfg,
                spec,
                pretrained.clone(),
                &tuples.tuples,
                &policy_cfg,
                seed,
                &seed_dir.join("policy-no_augment.jsonl"),
            )
        })?;
        eprintln!("[eval seed-{seed}] no_augment success {rate:.2}");
        ablation_success.insert("no_augment".to_string(), rate);
    }

    let baseline_success = watch.time(&format!("baseline seed-{seed}"), || {
        let mut bc_cfg = cfg.policy.clone();
        bc_cfg.fit.seed = seed;
        let (bc, _) = policy::train_bc_baseline(spec, demos, &bc_cfg)
            .map_err(|e| HarnessError::stage("baseline", e))?;
        policy::save_bc(&seed_dir.join("bc.jsonl"), &bc).map_err(save_err)?;
        Ok(eval_bc(&bc, spec, seed, cfg.eval_episodes, cfg.bc_max_steps))
    })?;
    eprintln!("[eval seed-{seed}] baseline success {baseline_success:.2}");

    Ok(SeedMetrics {
        seed,
        replay_success: replay.success_rate,
        mean_seq_len: replay.mean_seq_len,
        mean_demo_len: replay.mean_demo_len,
        idm_holdout_accuracy,
        policy_success,
        baseline_success,
        ablation_success,
    })
}

/// Execute the full experiment under `out` and return its report.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<MetricsReport, HarnessError> {
    cfg.validate()?;
    let spec = cfg.spec()?;
    std::fs::create_dir_all(out).map_err(|e| HarnessError::stage("run", e))?;
    cfg.save(&out.join("config.toml"))?;
    let mut watch = Stopwatch::new();

    let (dataset, audits, _) = watch.time("collect", || collect_stage(cfg))?;
    collector::save_dataset(&out.join("dataset.jsonl"), &dataset).map_err(save_err)?;
    collector::save_audits(&out.join("audits.jsonl"), &spec.name, &audits).map_err(save_err)?;
    let (train, holdout) = dataset.split_holdout(cfg.holdout_frac);

    let demos = watch.time("demos", || demo_stage(cfg, &spec))?;
    demos::save_demos(&out.join("demos.jsonl"), &demos).map_err(save_err)?;

    let mut rows = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        rows.push(run_seed(
            cfg, &spec, &train, &holdout, &demos, seed, out, &mut watch,
        )?);
    }

    let report = MetricsReport::from_rows(&spec.name, rows);
    report.write_csv(&out.join("metrics.csv"))?;
    std::fs::write(out.join("ablations.csv"), report.ablation_csv())
        .map_err(|e| HarnessError::stage("report", e))?;
    report.write_plots(&out.join("plots"))?;
    watch.write(&out.join(TIMINGS_NAME))?;
    Manifest::capture(out)?.write(out)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AblationFlags;

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.demos = 2;
        cfg.demo_noise = 0.05;
        cfg.seeds = vec![0];
        cfg.eval_episodes = 4;
        cfg.max_prims = 6;
        cfg.bc_max_steps = 50;
        cfg.collector.episodes = 40;
        cfg.collector.horizon = 8;
        cfg.collector.negatives_per_episode = 3;
        cfg.idm.fit.epochs = 6;
        cfg.idm.fit.patience = 6;
        cfg.policy.fit.epochs = 4;
        cfg.policy.fit.patience = 4;
        cfg.ablations = AblationFlags {
            no_pretrain: true,
            greedy_parse: false,
            no_augment: false,
        };
        cfg
    }

    #[test]
    fn tiny_run_writes_every_artifact() {
        let cfg = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let report = run_pipeline(&cfg, dir.path()).unwrap();

        assert_eq!(report.task, "pick_place_lite");
        assert_eq!(report.seeds.len(), 1);
        let row = &report.seeds[0];
        for rate in [
            row.replay_success,
            row.idm_holdout_accuracy,
            row.policy_success,
            row.baseline_success,
            row.ablation_success["no_pretrain"],
        ] {
            assert!((0.0..=1.0).contains(&rate), "rate {rate} out of range");
        }
        assert!(row.mean_demo_len > 0.0);

        for file in [
            "config.toml",
            "dataset.jsonl",
            "audits.jsonl",
            "demos.jsonl",
            "seed-0/idm.jsonl",
            "seed-0/parsed.jsonl",
            "seed-0/policy-full.jsonl",
            "seed-0/policy-no_pretrain.jsonl",
            "seed-0/bc.jsonl",
            "metrics.csv",
            "ablations.csv",
            "plots/policy_success.csv",
            "timings.csv",
            "manifest.json",
        ] {
            assert!(dir.path().join(file).is_file(), "missing {file}");
        }

        let manifest = Manifest::read(dir.path()).unwrap();
        assert_eq!(manifest.verify(dir.path()).unwrap(), []);
        let back = MetricsReport::read_csv(&dir.path().join("metrics.csv")).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let cfg = tiny_config();
        let first = tempfile::tempdir().unwrap();
        let second = tempfile::tempdir().unwrap();
        run_pipeline(&cfg, first.path()).unwrap();
        run_pipeline(&cfg, second.path()).unwrap();

        let read = |dir: &Path, name: &str| std::fs::read(dir.join(name)).unwrap();
        assert_eq!(
            read(first.path(), "metrics.csv"),
            read(second.path(), "metrics.csv")
        );
        assert_eq!(
            read(first.path(), "ablations.csv"),
            read(second.path(), "ablations.csv")
        );
        assert_eq!(
            read(first.path(), "manifest.json"),
            read(second.path(), "manifest.json")
        );
    }

    #[test]
    fn tuple_bundles_track_relabel_provenance() {
        let spec = TaskSpec::builtin("pick_place_lite").unwrap();
        let demo = demos::script_demo(&spec, DEMO_SEED_BASE, 0.0).unwrap();
        let demos = vec![demo];
        let mut cfg = ExperimentConfig::default();
        cfg.collector.episodes = 30;
        cfg.collector.horizon = 6;
        cfg.idm.fit.epochs = 4;
        let (dataset, _, _) = collect_stage(&cfg).unwrap();
        let models = train_idm_stage(&dataset, &cfg.idm, 0).unwrap();
        let parses = parse_stage(&spec, &demos, &models, cfg.alpha, cfg.stride, false).unwrap();

        let with = gather_tuples(&spec, &demos, &parses, Some(&models)).unwrap();
        let without = gather_tuples(&spec, &demos, &parses, None).unwrap();
        assert_eq!(without.augmented, 0);
        assert_eq!(without.disagreement_rate(), 0.0);
        assert_eq!(with.parsed, without.parsed);
        assert!(with.augmented > 0);
        assert!(with.disagreements <= with.augmented);
        assert_eq!(with.tuples.len(), with.parsed + with.augmented);
    }
}
