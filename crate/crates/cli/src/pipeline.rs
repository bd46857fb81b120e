//! Ingest, cluster, render, eval and report stages.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use gazesal_core::clustering::adaptive_cluster;
use gazesal_core::data_model::{
    group_by_protocol, load_gaze_log, load_manifest, load_profiles, segment_scenes, GazeFormat,
    GazeSample, GroupFamily, GroupLabel, ObserverProfile, Protocol, SceneManifest,
};
use gazesal_core::geometry::pixel_to_grid;
use gazesal_core::metrics::{evaluate, MetricMeans, MetricReport};
use gazesal_core::saliency::{normalize_map, render_heatmap, to_color_image, SaliencyMap};
use gazesal_core::{Error as CoreError, GridPoint};
use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{GroundTruth, PipelineConfig};
use crate::error::{CliError, CliResult, WithPath};
use crate::files::{
    create, create_dir, flush, list_files, open, protocol_dir, protocol_name, read_map,
    read_scenes, reset_dir, stem, write_map, write_scene, write_text, SceneFixations,
};

/// One row of the dataset bookkeeping table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub protocol: String,
    pub videos: usize,
    /// Scene-group pairs with at least one point.
    pub scenes: usize,
    pub points: usize,
    pub avg_fixpn: f64,
}

impl SummaryRow {
    fn from_scenes(protocol: Protocol, scenes: &[SceneFixations]) -> Self {
        let mut videos: Vec<&str> = scenes.iter().map(|s| s.video_id.as_str()).collect();
        videos.sort_unstable();
        videos.dedup();
        let points: usize = scenes.iter().map(|s| s.points.len()).sum();
        Self {
            protocol: protocol_name(protocol).into(),
            videos: videos.len(),
            scenes: scenes.len(),
            points,
            avg_fixpn: if scenes.is_empty() {
                0.0
            } else {
                points as f64 / scenes.len() as f64
            },
        }
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
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

pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut s = format!("{:<9}{:>8}{:>10}{:>12}{:>12}\n", "protocol", "videos", "scenes", "points", "avg_fixpn");
    for r in rows {
        s.push_str(&format!(
            "{:<9}{:>8}{:>10}{:>12}{:>12.1}\n",
            r.protocol, r.videos, r.scenes, r.points, r.avg_fixpn
        ));
    }
    s
}

fn load_inputs(
    cfg: &PipelineConfig,
) -> CliResult<(Vec<GazeSample>, HashMap<String, ObserverProfile>, Vec<SceneManifest>)> {
    let p = &cfg.paths;
    let format: GazeFormat = cfg.gaze_format.parse().map_err(CliError::Config)?;
    let samples = load_gaze_log(open(&p.gaze)?, format).at(&p.gaze)?;
    let profiles = load_profiles(open(&p.profiles)?).at(&p.profiles)?;
    let manifests = load_manifest(open(&p.manifest)?).at(&p.manifest)?;
    Ok((samples, profiles, manifests))
}

/// Loads the raw inputs, splits them into one-second scenes and protocol
/// groups, and writes one normalized point file per nonempty scene-group.
pub fn ingest(cfg: &PipelineConfig) -> CliResult<Vec<SummaryRow>> {
    cfg.validate()?;
    let (samples, profiles, manifests) = load_inputs(cfg)?;

    let mut by_video: BTreeMap<&str, Vec<GazeSample>> = BTreeMap::new();
    for s in &samples {
        by_video.entry(s.video_id.as_str()).or_default().push(s.clone());
    }
    let manifest_of: HashMap<&str, &SceneManifest> =
        manifests.iter().map(|m| (m.video_id.as_str(), m)).collect();
    if let Some(v) = by_video.keys().find(|v| !manifest_of.contains_key(*v)) {
        return Err(CliError::at(
            &cfg.paths.manifest,
            CoreError::Validation(format!("video `{v}` has gaze samples but no manifest entry")),
        ));
    }

    let mut windows = Vec::new();
    for (video, samples) in &by_video {
        let manifest = manifest_of[video];
        for (window, bucket) in segment_scenes(samples, manifest)? {
            windows.push((window, bucket));
        }
    }

    let mut rows = Vec::new();
    for &protocol in &cfg.protocols {
        let dir = protocol_dir(&cfg.paths.out, "raw", protocol);
        reset_dir(&dir)?;
        let scenes: Vec<Vec<SceneFixations>> = windows
            .par_iter()
            .map(|(window, bucket)| -> CliResult<Vec<SceneFixations>> {
                let groups = group_by_protocol(bucket, &profiles, protocol)?;
                let mut out = Vec::new();
                for (group, members) in groups {
                    if members.is_empty() {
                        continue;
                    }
                    let points = members
                        .iter()
                        .map(|s| pixel_to_grid(s.x, s.y, window.width, window.height))
                        .collect::<gazesal_core::Result<Vec<GridPoint>>>()
                        .map_err(|e| {
                            CliError::at(
                                &cfg.paths.gaze,
                                CoreError::Validation(format!("scene {}: {e}", window.id())),
                            )
                        })?;
                    let scene = SceneFixations::new(window, group, &points);
                    write_scene(&dir, &scene)?;
                    out.push(scene);
                }
                Ok(out)
            })
            .collect::<CliResult<_>>()?;
        let scenes: Vec<SceneFixations> = scenes.into_iter().flatten().collect();
        rows.push(SummaryRow::from_scenes(protocol, &scenes));
    }
    write_csv(&cfg.paths.out.join("ingest_summary.csv"), &rows)?;
    Ok(rows)
}

/// Consolidates every raw point file with the adaptive DBSCAN policy.
pub fn cluster(cfg: &PipelineConfig) -> CliResult<Vec<SummaryRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &protocol in &cfg.protocols {
        let raw = read_scenes(&protocol_dir(&cfg.paths.out, "raw", protocol))?;
        let dir = protocol_dir(&cfg.paths.out, "fixations", protocol);
        reset_dir(&dir)?;
        let clustered: Vec<SceneFixations> = raw
            .par_iter()
            .map(|scene| -> CliResult<SceneFixations> {
                let points = adaptive_cluster(&scene.grid_points(), &cfg.cluster);
                let out = SceneFixations::new(&scene.window(), scene.group, &points);
                write_scene(&dir, &out)?;
                Ok(out)
            })
            .collect::<CliResult<_>>()?;
        rows.push(SummaryRow::from_scenes(protocol, &clustered));
    }
    write_csv(&cfg.paths.out.join("cluster_summary.csv"), &rows)?;
    Ok(rows)
}

/// Renders a normalized heatmap at scene resolution for every fixation file.
/// Returns the number of maps written per protocol.
pub fn render(cfg: &PipelineConfig) -> CliResult<Vec<(Protocol, usize)>> {
    cfg.validate()?;
    let mut counts = Vec::new();
    for &protocol in &cfg.protocols {
        let scenes = read_scenes(&protocol_dir(&cfg.paths.out, "fixations", protocol))?;
        let dir = protocol_dir(&cfg.paths.out, "heatmaps", protocol);
        reset_dir(&dir)?;
        let written: Vec<bool> = scenes
            .par_iter()
            .map(|scene| -> CliResult<bool> {
                if scene.points.is_empty() {
                    log::warn!("{}: no fixations, heatmap skipped", scene.file_stem());
                    return Ok(false);
                }
                let map = render_scene(scene, cfg)?;
                write_map(&dir.join(format!("{}.bin", scene.file_stem())), &map)?;
                Ok(true)
            })
            .collect::<CliResult<_>>()?;
        counts.push((protocol, written.iter().filter(|w| **w).count()));
    }
    Ok(counts)
}

pub fn render_scene(scene: &SceneFixations, cfg: &PipelineConfig) -> CliResult<SaliencyMap> {
    let map = render_heatmap(
        &scene.grid_points(),
        scene.width as usize,
        scene.height as usize,
        &cfg.kernel,
    )?;
    Ok(normalize_map(&map)?)
}

/// Per-group means plus, under P2, the gender and gender-age family means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub group: String,
    pub scenes: usize,
    pub kl: f64,
    pub cc: f64,
    pub sim: f64,
    pub nss: f64,
    pub auc: f64,
}

impl EvalRow {
    fn new(group: &str, m: &MetricMeans) -> Self {
        Self {
            group: group.into(),
            scenes: m.count,
            kl: m.kl,
            cc: m.cc,
            sim: m.sim,
            nss: m.nss,
            auc: m.auc,
        }
    }
}

#[derive(Serialize)]
struct SceneRow<'a> {
    scene: &'a str,
    group: &'a str,
    kl: f64,
    cc: f64,
    sim: f64,
    nss: f64,
    auc: f64,
}

pub fn summarize(reports: &[MetricReport]) -> Vec<EvalRow> {
    let mut by_group: BTreeMap<GroupLabel, MetricMeans> = BTreeMap::new();
    let mut by_family: BTreeMap<GroupFamily, MetricMeans> = BTreeMap::new();
    for r in reports {
        by_group.entry(r.group).or_default().push(r);
        by_family.entry(r.group.family()).or_default().push(r);
    }
    let mut rows: Vec<EvalRow> = by_group.iter().map(|(g, m)| EvalRow::new(g.as_str(), m)).collect();
    for (family, name) in [(GroupFamily::Gender, "gender"), (GroupFamily::GenderAge, "gender_age")] {
        if let Some(m) = by_family.get(&family) {
            rows.push(EvalRow::new(name, m));
        }
    }
    rows
}

pub fn eval_table(protocol: Protocol, rows: &[EvalRow]) -> String {
    let mut s = format!(
        "{:<16}{:>8}{:>10}{:>10}{:>10}{:>10}{:>10}\n",
        protocol_name(protocol),
        "scenes",
        "KL",
        "CC",
        "SIM",
        "NSS",
        "AUC"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<16}{:>8}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>10.4}\n",
            r.group, r.scenes, r.kl, r.cc, r.sim, r.nss, r.auc
        ));
    }
    s
}

/// Scores every heatmap in `pred_root/<P>/` against the matching ground-truth
/// point file. Writes `<out>/eval/<P>_scenes.csv` and `<P>_summary.csv`.
pub fn eval(cfg: &PipelineConfig, pred_root: Option<&Path>) -> CliResult<Vec<(Protocol, Vec<EvalRow>)>> {
    cfg.validate()?;
    let default_root = cfg.paths.out.join("heatmaps");
    let pred_root = pred_root.unwrap_or(&default_root);
    let gt_stage = match cfg.ground_truth {
        GroundTruth::Raw => "raw",
        GroundTruth::Clustered => "fixations",
    };
    let eval_dir = cfg.paths.out.join("eval");
    create_dir(&eval_dir)?;
    let mut out = Vec::new();
    for &protocol in &cfg.protocols {
        let gt_dir = protocol_dir(&cfg.paths.out, gt_stage, protocol);
        let gt: BTreeMap<String, SceneFixations> = read_scenes(&gt_dir)?
            .into_iter()
            .map(|s| (s.file_stem(), s))
            .collect();
        let preds = list_files(&pred_root.join(protocol_name(protocol)), "bin")?;
        let reports: Vec<Option<MetricReport>> = preds
            .par_iter()
            .map(|path| -> CliResult<Option<MetricReport>> {
                let key = file_stem(path);
                let Some(scene) = gt.get(&key) else {
                    log::warn!("{key}: no ground truth in {}, skipped", gt_dir.display());
                    return Ok(None);
                };
                if scene.points.is_empty() {
                    return Ok(None);
                }
                let pred = read_map(path)?;
                Ok(Some(
                    evaluate(&pred, &scene.grid_points(), &cfg.kernel, &scene.scene_id(), scene.group).at(path)?,
                ))
            })
            .collect::<CliResult<_>>()?;
        let reports: Vec<MetricReport> = reports.into_iter().flatten().collect();

        let scenes_path = eval_dir.join(format!("{}_scenes.csv", protocol_name(protocol)));
        let rows: Vec<SceneRow> = reports
            .iter()
            .map(|r| SceneRow {
                scene: &r.scene,
                group: r.group.as_str(),
                kl: r.kl,
                cc: r.cc,
                sim: r.sim,
                nss: r.nss,
                auc: r.auc,
            })
            .collect();
        write_csv(&scenes_path, &rows)?;
        let summary = summarize(&reports);
        write_csv(&eval_dir.join(format!("{}_summary.csv", protocol_name(protocol))), &summary)?;
        out.push((protocol, summary));
    }
    Ok(out)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

const TILE_GAP: u32 = 4;

/// Side-by-side panel of the P2 groups: male groups on the top row, female
/// groups below, gender first then over/under 30.
const GRID_LAYOUT: [[GroupLabel; 3]; 2] = [
    [GroupLabel::Male, GroupLabel::MaleOver30, GroupLabel::MaleUnder30],
    [GroupLabel::Female, GroupLabel::FemaleOver30, GroupLabel::FemaleUnder30],
];

fn compose_grid(tiles: &BTreeMap<GroupLabel, RgbImage>) -> Option<RgbImage> {
    let (w, h) = tiles.values().next().map(|t| t.dimensions())?;
    let mut canvas = RgbImage::from_pixel(3 * w + 2 * TILE_GAP, 2 * h + TILE_GAP, Rgb([255, 255, 255]));
    for (r, row) in GRID_LAYOUT.iter().enumerate() {
        for (c, group) in row.iter().enumerate() {
            let (x0, y0) = (c as u32 * (w + TILE_GAP), r as u32 * (h + TILE_GAP));
            match tiles.get(group) {
                Some(tile) if tile.dimensions() == (w, h) => {
                    image::imageops::replace(&mut canvas, tile, i64::from(x0), i64::from(y0));
                }
                _ => {
                    for y in y0..y0 + h {
                        for x in x0..x0 + w {
                            canvas.put_pixel(x, y, Rgb([0, 0, 0]));
                        }
                    }
                }
            }
        }
    }
    Some(canvas)
}

fn save_png(img: &RgbImage, path: &Path) -> CliResult<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| CliError::at(path, e.into()))
}

/// Writes a color PNG per heatmap, a P2 panel per scene, and `report.md`
/// collecting the bookkeeping and metric tables. Returns the PNG count.
pub fn report(cfg: &PipelineConfig) -> CliResult<usize> {
    cfg.validate()?;
    let root = cfg.paths.out.join("report");
    reset_dir(&root)?;
    let mut written = 0;
    for &protocol in &cfg.protocols {
        let maps_dir = protocol_dir(&cfg.paths.out, "heatmaps", protocol);
        let mut by_scene: BTreeMap<String, BTreeMap<GroupLabel, PathBuf>> = BTreeMap::new();
        for path in list_files(&maps_dir, "bin")? {
            let key = file_stem(&path);
            let Some((scene, group)) = key.rsplit_once("__") else {
                continue;
            };
            let Ok(group) = group.parse::<GroupLabel>() else {
                log::warn!("{}: unrecognized group, skipped", path.display());
                continue;
            };
            by_scene.entry(scene.to_string()).or_default().insert(group, path);
        }
        let dir = protocol_dir(&cfg.paths.out, "report", protocol);
        create_dir(&dir)?;
        let counts: Vec<usize> = by_scene
            .par_iter()
            .map(|(scene, maps)| -> CliResult<usize> {
                let mut tiles = BTreeMap::new();
                for &group in protocol.groups() {
                    let Some(path) = maps.get(&group) else {
                        log::warn!("{scene}: group {} has no heatmap, skipped", group.as_str());
                        continue;
                    };
                    let img = to_color_image(&read_map(path)?);
                    save_png(&img, &dir.join(format!("{}.png", stem(scene, group))))?;
                    tiles.insert(group, img);
                }
                let mut n = tiles.len();
                if protocol == Protocol::P2 {
                    if let Some(grid) = compose_grid(&tiles) {
                        save_png(&grid, &dir.join(format!("{scene}__grid.png")))?;
                        n += 1;
                    }
                }
                Ok(n)
            })
            .collect::<CliResult<_>>()?;
        written += counts.iter().sum::<usize>();
    }
    write_text(&root.join("report.md"), &markdown_report(cfg)?)?;
    Ok(written)
}

fn csv_as_markdown(path: &Path) -> CliResult<Option<String>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut reader = csv::Reader::from_reader(open(path)?);
    let bad = |e: csv::Error| CliError::at(path, CoreError::Validation(e.to_string()));
    let header: Vec<String> = reader.headers().map_err(bad)?.iter().map(str::to_string).collect();
    let mut s = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for rec in reader.records() {
        let rec = rec.map_err(bad)?;
        let cells: Vec<String> = rec
            .iter()
            .map(|c| match c.parse::<f64>() {
                Ok(v) if c.contains('.') => format!("{v:.4}"),
                _ => c.to_string(),
            })
            .collect();
        s.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    Ok(Some(s))
}

fn markdown_report(cfg: &PipelineConfig) -> CliResult<String> {
    let out = &cfg.paths.out;
    let mut s = String::from("# Saliency report\n");
    for (title, file) in [
        ("Dataset (raw points)", "ingest_summary.csv"),
        ("Dataset (clustered fixations)", "cluster_summary.csv"),
    ] {
        if let Some(table) = csv_as_markdown(&out.join(file))? {
            s.push_str(&format!("\n## {title}\n\n{table}"));
        }
    }
    for &protocol in &cfg.protocols {
        let name = protocol_name(protocol);
        if let Some(table) = csv_as_markdown(&out.join("eval").join(format!("{name}_summary.csv")))? {
            s.push_str(&format!("\n## Metrics, {name}\n\n{table}"));
        }
    }
    Ok(s)
}
