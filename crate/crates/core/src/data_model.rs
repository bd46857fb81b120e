//! Gaze samples, observer profiles and scene bookkeeping.
//!
//! Gaze logs are CSV (`observer_id,video_id,t,x,y`) or JSONL with the same
//! keys. Profiles are CSV (`observer_id,age,gender`, gender `M`/`F`). Scene
//! manifests are JSON objects `{video_id, width, height, seconds}`, either a
//! single object or an array of them.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const GAZE_CSV_HEADER: [&str; 5] = ["observer_id", "video_id", "t", "x", "y"];
pub const PROFILE_CSV_HEADER: [&str; 3] = ["observer_id", "age", "gender"];

/// Age range covered by the reference recordings.
pub const PROFILE_AGE_RANGE: (u32, u32) = (20, 55);
/// Observers at or above this age belong to the `over30` groups.
pub const AGE_SPLIT: u32 = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub observer_id: String,
    pub video_id: String,
    /// Seconds since the start of the video.
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "M" | "m" => Ok(Gender::Male),
            "F" | "f" => Ok(Gender::Female),
            other => Err(format!("unknown gender `{other}` (expected M or F)")),
        }
    }
}

impl Gender {
    pub fn code(&self) -> &'static str {
        match self {
            Gender::Male => "M",
            Gender::Female => "F",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObserverProfile {
    pub observer_id: String,
    pub age: u32,
    pub gender: Gender,
}

/// Frame geometry for one video, as listed in the scene manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub video_id: String,
    pub width: u32,
    pub height: u32,
    pub seconds: u32,
}

/// One-second window of a video.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SceneWindow {
    pub video_id: String,
    pub second_index: u32,
    pub width: u32,
    pub height: u32,
}

impl SceneWindow {
    /// Stable identifier used in file names and reports.
    pub fn id(&self) -> String {
        format!("{}_{:04}", self.video_id, self.second_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupLabel {
    All,
    Male,
    Female,
    MaleOver30,
    MaleUnder30,
    FemaleOver30,
    FemaleUnder30,
}

/// How P2 groups aggregate: by gender alone or by gender and age band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroupFamily {
    Pooled,
    Gender,
    GenderAge,
}

impl GroupLabel {
    pub const P2: [GroupLabel; 6] = [
        GroupLabel::Male,
        GroupLabel::Female,
        GroupLabel::MaleOver30,
        GroupLabel::MaleUnder30,
        GroupLabel::FemaleOver30,
        GroupLabel::FemaleUnder30,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            GroupLabel::All => "all",
            GroupLabel::Male => "male",
            GroupLabel::Female => "female",
            GroupLabel::MaleOver30 => "male_over30",
            GroupLabel::MaleUnder30 => "male_under30",
            GroupLabel::FemaleOver30 => "female_over30",
            GroupLabel::FemaleUnder30 => "female_under30",
        }
    }

    pub fn family(&self) -> GroupFamily {
        match self {
            GroupLabel::All => GroupFamily::Pooled,
            GroupLabel::Male | GroupLabel::Female => GroupFamily::Gender,
            _ => GroupFamily::GenderAge,
        }
    }

    /// Both P2 labels an observer with this profile belongs to.
    pub fn for_profile(profile: &ObserverProfile) -> [GroupLabel; 2] {
        let over = profile.age >= AGE_SPLIT;
        match (profile.gender, over) {
            (Gender::Male, true) => [GroupLabel::Male, GroupLabel::MaleOver30],
            (Gender::Male, false) => [GroupLabel::Male, GroupLabel::MaleUnder30],
            (Gender::Female, true) => [GroupLabel::Female, GroupLabel::FemaleOver30],
            (Gender::Female, false) => [GroupLabel::Female, GroupLabel::FemaleUnder30],
        }
    }
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        [GroupLabel::All]
            .iter()
            .chain(GroupLabel::P2.iter())
            .find(|g| g.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown group `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    P1,
    P2,
}

impl Protocol {
    pub fn groups(&self) -> &'static [GroupLabel] {
        match self {
            Protocol::P1 => &[GroupLabel::All],
            Protocol::P2 => &GroupLabel::P2,
        }
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "P1" => Ok(Protocol::P1),
            "P2" => Ok(Protocol::P2),
            _ => Err(format!("unknown protocol `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GazeFormat {
    Csv,
    Jsonl,
}

impl FromStr for GazeFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csv" => Ok(GazeFormat::Csv),
            "jsonl" => Ok(GazeFormat::Jsonl),
            _ => Err(format!("unknown gaze log format `{s}`")),
        }
    }
}

fn check_sample(s: &GazeSample, row: usize) -> Result<()> {
    if !s.t.is_finite() || s.t < 0.0 {
        return Err(Error::Record {
            row,
            message: format!("timestamp {} out of range", s.t),
        });
    }
    if !s.x.is_finite() || !s.y.is_finite() || s.x < 0.0 || s.y < 0.0 {
        return Err(Error::Record {
            row,
            message: "coordinate out of range".into(),
        });
    }
    Ok(())
}

fn parse_field<T: FromStr>(field: Option<&str>, name: &str, row: usize) -> Result<T> {
    let raw = field.ok_or_else(|| Error::Record {
        row,
        message: format!("missing column `{name}`"),
    })?;
    raw.trim().parse().map_err(|_| Error::Record {
        row,
        message: format!("cannot parse `{name}` from `{raw}`"),
    })
}

/// Reads every gaze record from `source`. Row indices in errors are 1-based
/// and count data rows only.
pub fn load_gaze_log<R: Read>(source: R, format: GazeFormat) -> Result<Vec<GazeSample>> {
    match format {
        GazeFormat::Csv => load_gaze_csv(source),
        GazeFormat::Jsonl => load_gaze_jsonl(source),
    }
}

fn load_gaze_csv<R: Read>(source: R) -> Result<Vec<GazeSample>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(source);
    let mut out = Vec::new();
    let mut records = reader.records();
    match records.next() {
        None => return Ok(out),
        Some(header) => {
            let header = header.map_err(|e| Error::Record {
                row: 0,
                message: e.to_string(),
            })?;
            let cols: Vec<&str> = header.iter().map(str::trim).collect();
            if cols != GAZE_CSV_HEADER {
                return Err(Error::Record {
                    row: 0,
                    message: format!("expected header {}", GAZE_CSV_HEADER.join(",")),
                });
            }
        }
    }
    for (idx, rec) in records.enumerate() {
        let row = idx + 1;
        let rec = rec.map_err(|e| Error::Record {
            row,
            message: e.to_string(),
        })?;
        if rec.len() != 5 {
            return Err(Error::Record {
                row,
                message: format!("expected 5 fields, found {}", rec.len()),
            });
        }
        let sample = GazeSample {
            observer_id: rec[0].to_string(),
            video_id: rec[1].to_string(),
            t: parse_field(rec.get(2), "t", row)?,
            x: parse_field(rec.get(3), "x", row)?,
            y: parse_field(rec.get(4), "y", row)?,
        };
        check_sample(&sample, row)?;
        out.push(sample);
    }
    Ok(out)
}

fn load_gaze_jsonl<R: Read>(source: R) -> Result<Vec<GazeSample>> {
    let mut out = Vec::new();
    let mut row = 0;
    for line in BufReader::new(source).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        row += 1;
        let sample: GazeSample = serde_json::from_str(&line).map_err(|e| Error::Record {
            row,
            message: e.to_string(),
        })?;
        check_sample(&sample, row)?;
        out.push(sample);
    }
    Ok(out)
}

/// Writes samples in either log format. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_gaze_log<W: Write>(samples: &[GazeSample], sink: W, format: GazeFormat) -> Result<()> {
    match format {
        GazeFormat::Csv => {
            let mut w = csv::Writer::from_writer(sink);
            w.write_record(GAZE_CSV_HEADER).map_err(csv_to_io)?;
            for s in samples {
                w.write_record([
                    s.observer_id.clone(),
                    s.video_id.clone(),
                    s.t.to_string(),
                    s.x.to_string(),
                    s.y.to_string(),
                ])
                .map_err(csv_to_io)?;
            }
            w.flush()?;
        }
        GazeFormat::Jsonl => {
            let mut sink = sink;
            for s in samples {
                serde_json::to_writer(&mut sink, s)?;
                sink.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

fn csv_to_io(e: csv::Error) -> Error {
    Error::Stream(std::io::Error::other(e))
}

/// Reads the profile CSV, keyed by observer id. Ages outside the reference
/// range are accepted with a warning.
pub fn load_profiles<R: Read>(source: R) -> Result<HashMap<String, ObserverProfile>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(source);
    let header = reader.headers().map_err(|e| Error::Record {
        row: 0,
        message: e.to_string(),
    })?;
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols != PROFILE_CSV_HEADER {
        return Err(Error::Record {
            row: 0,
            message: format!("expected header {}", PROFILE_CSV_HEADER.join(",")),
        });
    }
    let mut out = HashMap::new();
    for (idx, rec) in reader.records().enumerate() {
        let row = idx + 1;
        let rec = rec.map_err(|e| Error::Record {
            row,
            message: e.to_string(),
        })?;
        let age: u32 = parse_field(rec.get(1), "age", row)?;
        let gender: Gender = parse_field(rec.get(2), "gender", row)?;
        let observer_id = rec[0].trim().to_string();
        if !(PROFILE_AGE_RANGE.0..=PROFILE_AGE_RANGE.1).contains(&age) {
            log::warn!("observer {observer_id}: age {age} outside the 20-55 reference range");
        }
        out.insert(
            observer_id.clone(),
            ObserverProfile {
                observer_id,
                age,
                gender,
            },
        );
    }
    Ok(out)
}

pub fn write_profiles<W: Write>(profiles: &[ObserverProfile], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(PROFILE_CSV_HEADER).map_err(csv_to_io)?;
    for p in profiles {
        w.write_record([p.observer_id.clone(), p.age.to_string(), p.gender.code().to_string()])
            .map_err(csv_to_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_manifest<R: Read>(source: R) -> Result<Vec<SceneManifest>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(SceneManifest),
        Many(Vec<SceneManifest>),
    }
    let parsed: OneOrMany = serde_json::from_reader(source)?;
    let list = match parsed {
        OneOrMany::One(m) => vec![m],
        OneOrMany::Many(v) => v,
    };
    for m in &list {
        if m.width == 0 || m.height == 0 {
            return Err(Error::validation(format!(
                "video {}: frame dimensions must be positive",
                m.video_id
            )));
        }
        if !matches!((m.width, m.height), (960, 540) | (640, 360)) {
            log::info!(
                "video {}: non-standard resolution {}x{}",
                m.video_id,
                m.width,
                m.height
            );
        }
    }
    Ok(list)
}

/// Buckets one video's samples by `floor(t)`. Buckets keep input order and
/// only seconds that received samples appear. Timestamps past the manifest's
/// duration are segmented normally.
pub fn segment_scenes(
    samples: &[GazeSample],
    manifest: &SceneManifest,
) -> Result<BTreeMap<SceneWindow, Vec<GazeSample>>> {
    let mut out: BTreeMap<SceneWindow, Vec<GazeSample>> = BTreeMap::new();
    for s in samples {
        if s.video_id != manifest.video_id {
            return Err(Error::validation(format!(
                "sample from video `{}` passed to segmentation of `{}`",
                s.video_id, manifest.video_id
            )));
        }
        let window = SceneWindow {
            video_id: manifest.video_id.clone(),
            second_index: s.t.floor() as u32,
            width: manifest.width,
            height: manifest.height,
        };
        out.entry(window).or_default().push(s.clone());
    }
    Ok(out)
}

/// Splits samples into protocol groups. Under P2 every one of the six labels
/// is present in the output (possibly empty) and each sample lands in its
/// gender group and its gender-age group.
pub fn group_by_protocol(
    samples: &[GazeSample],
    profiles: &HashMap<String, ObserverProfile>,
    protocol: Protocol,
) -> Result<BTreeMap<GroupLabel, Vec<GazeSample>>> {
    let mut out: BTreeMap<GroupLabel, Vec<GazeSample>> = protocol
        .groups()
        .iter()
        .map(|g| (*g, Vec::new()))
        .collect();
    for s in samples {
        let profile = profiles
            .get(&s.observer_id)
            .ok_or_else(|| Error::MissingProfile(s.observer_id.clone()))?;
        match protocol {
            Protocol::P1 => out.get_mut(&GroupLabel::All).unwrap().push(s.clone()),
            Protocol::P2 => {
                for label in GroupLabel::for_profile(profile) {
                    out.get_mut(&label).unwrap().push(s.clone());
                }
            }
        }
    }
    Ok(out)
}
