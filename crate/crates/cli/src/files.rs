//! On-disk layout shared by the pipeline stages.
//!
//! ```text
//! <out>/raw/<P>/<scene>__<group>.json         normalized raw gaze points
//! <out>/fixations/<P>/<scene>__<group>.json   clustered fixations
//! <out>/heatmaps/<P>/<scene>__<group>.bin     rendered maps (raw f64)
//! <out>/eval/<P>_scenes.csv, <P>_summary.csv  metric tables
//! <out>/report/<P>/...png, report.md          figures and tables
//! ```

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use gazesal_core::data_model::{GroupLabel, Protocol, SceneWindow};
use gazesal_core::saliency::{read_raw, write_raw, SaliencyMap};
use gazesal_core::{Error as CoreError, GridPoint};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, WithPath};

/// Per-scene, per-group point file. Points are `[gx, gy]` in grid units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFixations {
    pub video_id: String,
    pub second: u32,
    pub group: GroupLabel,
    pub width: u32,
    pub height: u32,
    pub points: Vec<[f64; 2]>,
}

impl SceneFixations {
    pub fn new(window: &SceneWindow, group: GroupLabel, points: &[GridPoint]) -> Self {
        Self {
            video_id: window.video_id.clone(),
            second: window.second_index,
            group,
            width: window.width,
            height: window.height,
            points: points.iter().map(|p| [p.gx, p.gy]).collect(),
        }
    }

    pub fn scene_id(&self) -> String {
        self.window().id()
    }

    pub fn window(&self) -> SceneWindow {
        SceneWindow {
            video_id: self.video_id.clone(),
            second_index: self.second,
            width: self.width,
            height: self.height,
        }
    }

    pub fn grid_points(&self) -> Vec<GridPoint> {
        self.points.iter().map(|p| GridPoint::new(p[0], p[1])).collect()
    }

    pub fn file_stem(&self) -> String {
        stem(&self.scene_id(), self.group)
    }
}

pub fn stem(scene_id: &str, group: GroupLabel) -> String {
    format!("{scene_id}__{}", group.as_str())
}

pub fn protocol_dir(root: &Path, stage: &str, protocol: Protocol) -> PathBuf {
    root.join(stage).join(protocol_name(protocol))
}

pub fn protocol_name(protocol: Protocol) -> &'static str {
    match protocol {
        Protocol::P1 => "P1",
        Protocol::P2 => "P2",
    }
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::at(path, CoreError::io(path, e)))
}

/// Removes stale files so re-runs leave exactly the freshly written tree.
pub fn reset_dir(path: &Path) -> CliResult<()> {
    if path.exists() {
        fs::remove_dir_all(path).map_err(|e| CliError::at(path, CoreError::io(path, e)))?;
    }
    create_dir(path)
}

pub fn open(path: &Path) -> CliResult<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::at(path, CoreError::io(path, e)))
}

pub fn create(path: &Path) -> CliResult<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::at(path, CoreError::io(path, e)))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::at(path, CoreError::io(path, e)))
}

pub fn flush(mut w: impl Write, path: &Path) -> CliResult<()> {
    w.flush().map_err(|e| CliError::at(path, CoreError::io(path, e)))
}

/// Files in `dir` with the given extension, sorted by name.
pub fn list_files(dir: &Path, ext: &str) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::at(dir, CoreError::io(dir, e)))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::at(dir, CoreError::io(dir, e)))?.path();
        if path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_scene(path: &Path) -> CliResult<SceneFixations> {
    let scene: SceneFixations = serde_json::from_reader(open(path)?).map_err(|e| CliError::at(path, e.into()))?;
    if let Some(p) = scene.points.iter().find(|p| !GridPoint::new(p[0], p[1]).in_range()) {
        return Err(CliError::at(
            path,
            CoreError::Validation(format!("point [{}, {}] outside the grid", p[0], p[1])),
        ));
    }
    Ok(scene)
}

pub fn write_scene(dir: &Path, scene: &SceneFixations) -> CliResult<PathBuf> {
    let path = dir.join(format!("{}.json", scene.file_stem()));
    let mut text = serde_json::to_string_pretty(scene).map_err(|e| CliError::at(&path, e.into()))?;
    text.push('\n');
    write_text(&path, &text)?;
    Ok(path)
}

pub fn read_scenes(dir: &Path) -> CliResult<Vec<SceneFixations>> {
    list_files(dir, "json")?.iter().map(|p| read_scene(p)).collect()
}

pub fn read_map(path: &Path) -> CliResult<SaliencyMap> {
    read_raw(open(path)?).at(path)
}

pub fn write_map(path: &Path, map: &SaliencyMap) -> CliResult<()> {
    let mut w = create(path)?;
    write_raw(map, &mut w).at(path)?;
    flush(w, path)
}
