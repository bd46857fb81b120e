//! Toy-policy training, offline scoring and parameter sweeps.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use gazesal_core::cgrpo::{
    evaluate_policy, group_advantages, score_output, stream_rng, train, GrpoConfig, PolicyContext,
    PolicyEval, PolicyShape, ToyPolicy, TrainExample, TrainTrace,
};
use gazesal_core::clustering::{dbscan, DbscanParams};
use gazesal_core::data_model::Protocol;
use gazesal_core::metrics::{evaluate, MetricMeans, MetricReport};
use gazesal_core::point_protocol::{load_batch, parse};
use gazesal_core::rewards::{spatial_reward, RewardConfig};
use gazesal_core::saliency::{normalize_map, render_heatmap, KernelConfig};
use gazesal_core::synth::toy_group_dataset;
use gazesal_core::{Error as CoreError, GridPoint};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult, WithPath};
use crate::files::{
    create, create_dir, flush, open, protocol_dir, protocol_name, read_scene, read_scenes, write_text,
};

/// Target points per gender-age cell in the synthetic training set.
pub const TOY_POINTS_PER_CELL: usize = 4;
/// Samples per context when summarizing a trained policy.
pub const EVAL_SAMPLES: usize = 500;

/// Training prompts: the six-group synthetic set, or one prompt per
/// fixation file in `dir`.
pub fn load_dataset(dir: Option<&Path>, seed: u64) -> CliResult<Vec<TrainExample>> {
    let Some(dir) = dir else {
        return Ok(toy_group_dataset(TOY_POINTS_PER_CELL, seed));
    };
    let data: Vec<TrainExample> = read_scenes(dir)?
        .into_iter()
        .filter(|s| !s.points.is_empty())
        .map(|s| TrainExample {
            context: PolicyContext {
                group: s.group,
                scene: s.scene_id(),
            },
            targets: s.grid_points(),
        })
        .collect();
    if data.is_empty() {
        return Err(CliError::at(dir, CoreError::Validation("no nonempty fixation files".into())));
    }
    Ok(data)
}

#[derive(Debug, Clone, Serialize)]
pub struct ToyRun {
    pub grpo: GrpoConfig,
    pub reward: RewardConfig,
    pub shape: PolicyShape,
    pub contexts: Vec<PolicyContext>,
    pub initial: PolicyEval,
    pub final_eval: PolicyEval,
    /// Saliency metrics of the policy's sampled points against the targets.
    pub saliency: Option<MetricMeans>,
    #[serde(skip)]
    pub policy: ToyPolicy,
    #[serde(skip)]
    pub trace: TrainTrace,
}

fn eval_seed(seed: u64) -> u64 {
    rand::Rng::random(&mut stream_rng(seed, &[u64::MAX]))
}

/// Trains from scratch and summarizes the result; writes nothing.
pub fn run_toy(data: &[TrainExample], grpo: &GrpoConfig, reward: &RewardConfig) -> CliResult<ToyRun> {
    let (policy, trace) = train(data, grpo, reward)?;
    let reference = ToyPolicy::new(grpo.shape(data.len()), grpo.initial_validity)?;
    let seed = eval_seed(grpo.seed);
    let initial = evaluate_policy(&reference, &reference, data, EVAL_SAMPLES, seed, reward);
    let final_eval = evaluate_policy(&policy, &reference, data, EVAL_SAMPLES, seed, reward);
    let saliency = policy_saliency(&policy, data, seed, reward)?;
    Ok(ToyRun {
        grpo: *grpo,
        reward: *reward,
        shape: policy.shape(),
        contexts: data.iter().map(|e| e.context.clone()).collect(),
        initial,
        final_eval,
        saliency,
        policy,
        trace,
    })
}

/// Map size used when scoring policy outputs as saliency maps.
const POLICY_MAP: (usize, usize) = (160, 90);
const POLICY_MAP_SAMPLES: usize = 64;

/// Renders the points of sampled valid outputs per context and scores the
/// map against the context's targets.
fn policy_saliency(
    policy: &ToyPolicy,
    data: &[TrainExample],
    seed: u64,
    reward: &RewardConfig,
) -> CliResult<Option<MetricMeans>> {
    let kernel = KernelConfig::default();
    let mut means = MetricMeans::default();
    for (ctx, example) in data.iter().enumerate() {
        let points: Vec<GridPoint> = policy
            .sample_group(ctx, POLICY_MAP_SAMPLES, seed)
            .iter()
            .flat_map(|r| score_output(&policy.decode(r), &example.targets, reward).points)
            .collect();
        if points.is_empty() || example.targets.is_empty() {
            continue;
        }
        let map = render_heatmap(&points, POLICY_MAP.0, POLICY_MAP.1, &kernel)?;
        let Ok(pred) = normalize_map(&map) else {
            continue;
        };
        let r: MetricReport = evaluate(&pred, &example.targets, &kernel, &example.context.scene, example.context.group)?;
        means.push(&r);
    }
    Ok((means.count > 0).then_some(means))
}

#[derive(Serialize)]
struct TraceCsvRow {
    iteration: usize,
    mean_reward: f64,
    format_validity: f64,
    mean_nn_distance: f64,
    mean_kl: f64,
    loss: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)
            .map_err(|e| CliError::at(path, CoreError::Validation(e.to_string())))?;
    }
    let inner = w
        .into_inner()
        .map_err(|e| CliError::at(path, CoreError::io(path, e.into_error())))?;
    flush(inner, path)
}

/// Writes `trace.csv`, `policy.bin` and the `policy.json` sidecar into `dir`.
pub fn write_toy_run(run: &ToyRun, dir: &Path) -> CliResult<()> {
    create_dir(dir)?;
    write_csv(
        &dir.join("trace.csv"),
        run.trace.rows.iter().map(|r| TraceCsvRow {
            iteration: r.iteration,
            mean_reward: r.mean_reward,
            format_validity: r.format_validity,
            mean_nn_distance: r.mean_nn_distance,
            mean_kl: r.mean_kl,
            loss: r.loss,
        }),
    )?;
    let blob = dir.join("policy.bin");
    let mut w = create(&blob)?;
    run.policy.write_blob(&mut w).at(&blob)?;
    flush(w, &blob)?;
    let sidecar = dir.join("policy.json");
    let mut text = serde_json::to_string_pretty(run).map_err(|e| CliError::at(&sidecar, e.into()))?;
    text.push('\n');
    write_text(&sidecar, &text)
}

pub fn train_toy(cfg: &PipelineConfig, dataset: Option<&Path>, out: &Path) -> CliResult<ToyRun> {
    cfg.validate()?;
    let data = load_dataset(dataset, cfg.grpo.seed)?;
    let run = run_toy(&data, &cfg.grpo, &cfg.reward)?;
    write_toy_run(&run, out)?;
    Ok(run)
}

pub fn toy_summary(run: &ToyRun) -> String {
    let line = |name: &str, e: &PolicyEval| {
        format!(
            "{name:<8} reward {:.4}  validity {:.4}  nn_distance {:.2}  kl {:.4}\n",
            e.mean_reward, e.format_validity, e.mean_nn_distance, e.mean_kl
        )
    };
    let mut s = line("initial", &run.initial);
    s.push_str(&line("final", &run.final_eval));
    for (ctx, x) in run.contexts.iter().zip(&run.final_eval.mean_x) {
        s.push_str(&format!("  {:<16} mean x {:.1}\n", ctx.group.as_str(), x));
    }
    s
}

/// One scored line of an offline batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreLine {
    pub prompt_id: String,
    pub r_format: f64,
    pub r_distance: f64,
    pub r_total: f64,
    /// Group-standardized reward among records sharing the prompt id.
    pub advantage: f64,
}

/// Scores a JSONL batch of model outputs against one fixation file.
pub fn score(batch: &Path, targets: &Path, reward: &RewardConfig) -> CliResult<Vec<ScoreLine>> {
    reward.validate()?;
    let records = load_batch(open(batch)?).at(batch)?;
    let targets = read_scene(targets)?.grid_points();
    let mut lines: Vec<ScoreLine> = records
        .iter()
        .map(|rec| {
            let s = score_output(&rec.text, &targets, reward);
            let outcome = parse(&rec.text);
            let r_distance = if outcome.valid_format && !outcome.points.is_empty() && !targets.is_empty() {
                spatial_reward(&outcome.points, &targets, reward).unwrap_or(0.0)
            } else {
                0.0
            };
            ScoreLine {
                prompt_id: rec.prompt_id.clone(),
                r_format: s.r_format,
                r_distance,
                r_total: s.r_total,
                advantage: 0.0,
            }
        })
        .collect();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, rec) in records.iter().enumerate() {
        groups.entry(rec.prompt_id.as_str()).or_default().push(i);
    }
    for idx in groups.values() {
        let rewards: Vec<f64> = idx.iter().map(|&i| lines[i].r_total).collect();
        for (&i, a) in idx.iter().zip(group_advantages(&rewards)) {
            lines[i].advantage = a;
        }
    }
    Ok(lines)
}

pub fn write_jsonl<T: Serialize>(rows: &[T], mut sink: impl Write) -> std::io::Result<()> {
    for r in rows {
        serde_json::to_writer(&mut sink, r)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()
}

/// One row of the DBSCAN parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DbscanRow {
    pub eps: f64,
    pub min_pts: usize,
    pub scenes: usize,
    pub kl: f64,
    pub cc: f64,
    pub sim: f64,
    pub nss: f64,
    pub auc: f64,
    /// Largest number of clustered points in any scene.
    #[serde(rename = "maxN_Pts")]
    pub max_n_pts: usize,
}

/// Clusters every raw scene with each fixed setting, renders the centroids and
/// scores them against the raw points.
pub fn sweep_dbscan(
    cfg: &PipelineConfig,
    protocol: Protocol,
    settings: &[DbscanParams],
) -> CliResult<Vec<DbscanRow>> {
    cfg.validate()?;
    let raw = read_scenes(&protocol_dir(&cfg.paths.out, "raw", protocol))?;
    let mut rows = Vec::new();
    for &params in settings {
        if !(params.eps > 0.0) {
            return Err(CliError::Config(format!("eps must be positive, got {}", params.eps)));
        }
        let results: Vec<(usize, Option<MetricReport>)> = raw
            .par_iter()
            .map(|scene| -> CliResult<(usize, Option<MetricReport>)> {
                let points = scene.grid_points();
                let centroids = dbscan(&points, params).centroids;
                if centroids.is_empty() || points.is_empty() {
                    return Ok((centroids.len(), None));
                }
                let map = render_heatmap(&centroids, scene.width as usize, scene.height as usize, &cfg.kernel)?;
                let pred = normalize_map(&map)?;
                let r = evaluate(&pred, &points, &cfg.kernel, &scene.scene_id(), scene.group)?;
                Ok((centroids.len(), Some(r)))
            })
            .collect::<CliResult<_>>()?;
        let mut means = MetricMeans::default();
        for r in results.iter().filter_map(|(_, r)| r.as_ref()) {
            means.push(r);
        }
        rows.push(DbscanRow {
            eps: params.eps,
            min_pts: params.min_pts,
            scenes: means.count,
            kl: means.kl,
            cc: means.cc,
            sim: means.sim,
            nss: means.nss,
            auc: means.auc,
            max_n_pts: results.iter().map(|(n, _)| *n).max().unwrap_or(0),
        });
    }
    let dir = cfg.paths.out.join("sweeps");
    create_dir(&dir)?;
    write_csv(&dir.join(format!("dbscan_{}.csv", protocol_name(protocol))), &rows)?;
    Ok(rows)
}

/// One row of the reward-balance sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardRow {
    pub r_base: f64,
    pub r_extra: f64,
    pub kl: f64,
    pub cc: f64,
    pub sim: f64,
    pub nss: f64,
    pub auc: f64,
    pub mean_reward: f64,
    pub format_validity: f64,
    pub mean_nn_distance: f64,
}

/// Trains one toy policy per `(r_base, r_extra)` with the shared seed and
/// dataset. Per-run artifacts land in `<out>/sweeps/reward/<r_base>_<r_extra>/`.
pub fn sweep_reward(
    cfg: &PipelineConfig,
    dataset: Option<&Path>,
    settings: &[(f64, f64)],
) -> CliResult<Vec<RewardRow>> {
    cfg.validate()?;
    let data = load_dataset(dataset, cfg.grpo.seed)?;
    let root = cfg.paths.out.join("sweeps");
    let runs: Vec<(RewardConfig, ToyRun)> = settings
        .par_iter()
        .map(|&(r_base, r_extra)| -> CliResult<(RewardConfig, ToyRun)> {
            let reward = RewardConfig {
                r_base,
                r_extra,
                ..cfg.reward
            };
            reward.validate()?;
            let run = run_toy(&data, &cfg.grpo, &reward)?;
            write_toy_run(&run, &run_dir(&root, r_base, r_extra))?;
            Ok((reward, run))
        })
        .collect::<CliResult<_>>()?;
    let rows: Vec<RewardRow> = runs
        .iter()
        .map(|(reward, run)| {
            let s = run.saliency.unwrap_or_default();
            let nan = |v: f64| if run.saliency.is_some() { v } else { f64::NAN };
            RewardRow {
                r_base: reward.r_base,
                r_extra: reward.r_extra,
                kl: nan(s.kl),
                cc: nan(s.cc),
                sim: nan(s.sim),
                nss: nan(s.nss),
                auc: nan(s.auc),
                mean_reward: run.final_eval.mean_reward,
                format_validity: run.final_eval.format_validity,
                mean_nn_distance: run.final_eval.mean_nn_distance,
            }
        })
        .collect();
    create_dir(&root)?;
    write_csv(&root.join("reward.csv"), &rows)?;
    Ok(rows)
}

pub fn run_dir(root: &Path, r_base: f64, r_extra: f64) -> PathBuf {
    root.join("reward").join(format!("{r_base}_{r_extra}"))
}
