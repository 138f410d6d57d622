//! Trajectory annotation parsing, image-to-world projection, down-sampling and
//! history/future windowing.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const FEET_TO_METERS: f64 = 0.3048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentClass {
    Car,
    Bus,
    Truck,
    Rickshaw,
    Pedestrian,
    Scooter,
    Motorcycle,
    Bicycle,
    Other,
}

impl AgentClass {
    pub const ALL: [AgentClass; 9] = [
        AgentClass::Car,
        AgentClass::Bus,
        AgentClass::Truck,
        AgentClass::Rickshaw,
        AgentClass::Pedestrian,
        AgentClass::Scooter,
        AgentClass::Motorcycle,
        AgentClass::Bicycle,
        AgentClass::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentClass::Car => "car",
            AgentClass::Bus => "bus",
            AgentClass::Truck => "truck",
            AgentClass::Rickshaw => "rickshaw",
            AgentClass::Pedestrian => "pedestrian",
            AgentClass::Scooter => "scooter",
            AgentClass::Motorcycle => "motorcycle",
            AgentClass::Bicycle => "bicycle",
            AgentClass::Other => "other",
        }
    }

    /// Position in [`AgentClass::ALL`], used for one-hot encoding.
    pub fn index(self) -> usize {
        AgentClass::ALL.iter().position(|c| *c == self).unwrap_or(8)
    }

    /// Recognizes canonical names and a few common annotation aliases.
    pub fn from_label(label: &str) -> Option<Self> {
        let l = label.trim().to_ascii_lowercase();
        let class = match l.as_str() {
            "car" | "auto" | "van" => AgentClass::Car,
            "bus" => AgentClass::Bus,
            "truck" | "lorry" => AgentClass::Truck,
            "rickshaw" | "rick" | "tuk-tuk" => AgentClass::Rickshaw,
            "pedestrian" | "ped" | "person" => AgentClass::Pedestrian,
            "scooter" => AgentClass::Scooter,
            "motorcycle" | "motorbike" | "bike" => AgentClass::Motorcycle,
            "bicycle" | "cycle" => AgentClass::Bicycle,
            "other" | "cart" | "animal" => AgentClass::Other,
            _ => return None,
        };
        Some(class)
    }

    pub fn is_motorized(self) -> bool {
        !matches!(
            self,
            AgentClass::Pedestrian | AgentClass::Bicycle | AgentClass::Other
        )
    }
}

impl fmt::Display for AgentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Nominal (length, width) in meters per class.
pub fn class_dims(class: AgentClass) -> (f64, f64) {
    match class {
        AgentClass::Pedestrian => (0.5, 0.5),
        AgentClass::Bicycle => (1.8, 0.6),
        AgentClass::Motorcycle | AgentClass::Scooter => (2.0, 0.8),
        AgentClass::Rickshaw => (2.6, 1.4),
        AgentClass::Car => (4.5, 1.8),
        AgentClass::Truck => (8.0, 2.5),
        AgentClass::Bus => (12.0, 2.6),
        AgentClass::Other => (2.0, 1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinateSpace {
    Image,
    World,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub frame_id: u64,
    pub agent_id: i64,
    pub agent_class: AgentClass,
    pub x: f64,
    pub y: f64,
    pub space: CoordinateSpace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackFormat {
    TrafCsv,
    NgsimCsv,
}

impl FromStr for TrackFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "traf_csv" | "traf" => Ok(TrackFormat::TrafCsv),
            "ngsim_csv" | "ngsim" => Ok(TrackFormat::NgsimCsv),
            other => Err(Error::Config(format!("unknown track format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedTracks {
    /// Sorted by `(frame_id, agent_id)`.
    pub detections: Vec<RawDetection>,
    /// Rows whose class label was not recognized and was mapped to `other`.
    pub unknown_classes: usize,
}

pub fn parse_tracks(path: &Path, format: TrackFormat) -> Result<ParsedTracks> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_tracks_from(file, format)
}

pub fn parse_tracks_from<R: Read>(reader: R, format: TrackFormat) -> Result<ParsedTracks> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        // an empty file has no header row and no detections
        Err(e) if matches!(e.kind(), csv::ErrorKind::UnequalLengths { .. }) => {
            return Err(csv_error(e))
        }
        Err(e) => return Err(csv_error(e)),
    };
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(ParsedTracks::default());
    }
    let columns = Columns::resolve(&headers, format)?;

    let mut out = ParsedTracks::default();
    let mut seen: BTreeMap<(u64, i64), u64> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let (det, known) = columns.detection(&record, line, format)?;
        if !known {
            out.unknown_classes += 1;
        }
        if seen.insert((det.frame_id, det.agent_id), line).is_some() {
            return Err(Error::DuplicateDetection {
                line,
                frame: det.frame_id,
                agent_id: det.agent_id,
            });
        }
        out.detections.push(det);
    }
    if out.unknown_classes > 0 {
        log::warn!(
            "{} rows with unrecognized class mapped to `other`",
            out.unknown_classes
        );
    }
    out.detections.sort_by_key(|d| (d.frame_id, d.agent_id));
    Ok(out)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

struct Columns {
    frame: usize,
    agent: usize,
    class: usize,
    x: usize,
    y: usize,
    space: Option<usize>,
}

impl Columns {
    fn resolve(headers: &csv::StringRecord, format: TrackFormat) -> Result<Self> {
        let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
        let need = |name: &str| {
            find(name).ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing column `{name}`"),
            })
        };
        match format {
            TrackFormat::TrafCsv => Ok(Self {
                frame: need("frame")?,
                agent: need("agent_id")?,
                class: need("class")?,
                x: need("x")?,
                y: need("y")?,
                space: find("space"),
            }),
            TrackFormat::NgsimCsv => Ok(Self {
                frame: need("Frame_ID")?,
                agent: need("Vehicle_ID")?,
                class: need("v_Class")?,
                x: need("Local_X")?,
                y: need("Local_Y")?,
                space: None,
            }),
        }
    }

    fn detection(
        &self,
        record: &csv::StringRecord,
        line: u64,
        format: TrackFormat,
    ) -> Result<(RawDetection, bool)> {
        let field = |idx: usize, name: &str| {
            record.get(idx).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing field `{name}`"),
            })
        };
        let number = |idx: usize, name: &str| -> Result<f64> {
            let raw = field(idx, name)?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("`{name}` is not a finite number: `{raw}`"),
                })
        };
        let integer = |idx: usize, name: &str| -> Result<i64> {
            let raw = field(idx, name)?;
            raw.parse::<i64>().map_err(|_| Error::Parse {
                line,
                message: format!("`{name}` is not an integer: `{raw}`"),
            })
        };

        let frame = integer(self.frame, "frame")?;
        let frame_id = u64::try_from(frame).map_err(|_| Error::Parse {
            line,
            message: format!("negative frame {frame}"),
        })?;
        let agent_id = integer(self.agent, "agent_id")?;
        let label = field(self.class, "class")?;
        let (agent_class, known, x, y, space) = match format {
            TrackFormat::TrafCsv => {
                let class = AgentClass::from_label(label);
                let space = match self.space.and_then(|i| record.get(i)).unwrap_or("") {
                    "" | "image" => CoordinateSpace::Image,
                    "world" => CoordinateSpace::World,
                    other => {
                        return Err(Error::Parse {
                            line,
                            message: format!("unknown coordinate space `{other}`"),
                        })
                    }
                };
                (
                    class.unwrap_or(AgentClass::Other),
                    class.is_some(),
                    number(self.x, "x")?,
                    number(self.y, "y")?,
                    space,
                )
            }
            TrackFormat::NgsimCsv => {
                let class = match label {
                    "1" => Some(AgentClass::Motorcycle),
                    "2" => Some(AgentClass::Car),
                    "3" => Some(AgentClass::Truck),
                    _ => None,
                };
                (
                    class.unwrap_or(AgentClass::Other),
                    class.is_some(),
                    number(self.x, "Local_X")? * FEET_TO_METERS,
                    number(self.y, "Local_Y")? * FEET_TO_METERS,
                    CoordinateSpace::World,
                )
            }
        };
        Ok((
            RawDetection {
                frame_id,
                agent_id,
                agent_class,
                x,
                y,
                space,
            },
            known,
        ))
    }
}

/// Projective map from image pixels to the world ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    m: [f64; 9],
}

const DEGENERATE: f64 = 1e-9;

impl Homography {
    /// Row-major 3×3 matrix; rejected when `|det| <= 1e-9`.
    pub fn new(m: [f64; 9]) -> Result<Self> {
        let h = Self { m };
        let det = h.determinant();
        if !det.is_finite() || det.abs() <= DEGENERATE {
            return Err(Error::Homography(format!(
                "singular matrix (det = {det:e})"
            )));
        }
        Ok(h)
    }

    pub fn identity() -> Self {
        Self {
            m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        }
    }

    pub fn matrix(&self) -> &[f64; 9] {
        &self.m
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.m;
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    pub fn inverse(&self) -> Result<Self> {
        let m = &self.m;
        let det = self.determinant();
        let adj = [
            m[4] * m[8] - m[5] * m[7],
            m[2] * m[7] - m[1] * m[8],
            m[1] * m[5] - m[2] * m[4],
            m[5] * m[6] - m[3] * m[8],
            m[0] * m[8] - m[2] * m[6],
            m[2] * m[3] - m[0] * m[5],
            m[3] * m[7] - m[4] * m[6],
            m[1] * m[6] - m[0] * m[7],
            m[0] * m[4] - m[1] * m[3],
        ];
        Self::new(adj.map(|v| v / det))
    }

    /// Reads nine whitespace-separated numbers in row-major order.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }
}

impl FromStr for Homography {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let values = s
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Homography(format!("not a number: `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let m: [f64; 9] = values.try_into().map_err(|v: Vec<f64>| {
            Error::Homography(format!("expected 9 values, got {}", v.len()))
        })?;
        Self::new(m)
    }
}

/// `(x', y', w) = H (x, y, 1)`, returning `(x'/w, y'/w)`.
pub fn apply_homography(h: &Homography, p: [f64; 2]) -> Result<[f64; 2]> {
    let m = &h.m;
    let xs = m[0] * p[0] + m[1] * p[1] + m[2];
    let ys = m[3] * p[0] + m[4] * p[1] + m[5];
    let w = m[6] * p[0] + m[7] * p[1] + m[8];
    if w.abs() < DEGENERATE {
        return Err(Error::Homography(format!(
            "({}, {}) maps to the line at infinity",
            p[0], p[1]
        )));
    }
    Ok([xs / w, ys / w])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    /// Seconds.
    pub t: f64,
    /// Meters, world frame.
    pub pos: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: i64,
    pub agent_class: AgentClass,
    /// Strictly increasing in `t`.
    pub samples: Vec<TrackPoint>,
    /// (length, width) in meters.
    pub dims: (f64, f64),
}

impl AgentTrack {
    pub fn new(agent_id: i64, agent_class: AgentClass, samples: Vec<TrackPoint>) -> Self {
        Self {
            agent_id,
            agent_class,
            samples,
            dims: class_dims(agent_class),
        }
    }
}

/// Groups detections per agent and converts them to world-space tracks.
///
/// Frame `k` is placed at `t = k / frame_rate`. Image-space detections need a
/// homography; world-space ones are taken as they are.
pub fn assemble_tracks(
    detections: &[RawDetection],
    frame_rate: f64,
    homography: Option<&Homography>,
) -> Result<Vec<AgentTrack>> {
    if frame_rate <= 0.0 {
        return Err(Error::Config(format!(
            "frame rate must be positive, got {frame_rate}"
        )));
    }
    let mut per_agent: BTreeMap<i64, Vec<&RawDetection>> = BTreeMap::new();
    for d in detections {
        per_agent.entry(d.agent_id).or_default().push(d);
    }
    let mut tracks = Vec::with_capacity(per_agent.len());
    for (agent_id, mut dets) in per_agent {
        dets.sort_by_key(|d| d.frame_id);
        let class = dets[0].agent_class;
        let mut samples = Vec::with_capacity(dets.len());
        for d in dets {
            let pos = match d.space {
                CoordinateSpace::World => [d.x, d.y],
                CoordinateSpace::Image => {
                    let h = homography.ok_or_else(|| {
                        Error::Homography(format!(
                            "agent {agent_id} has image-space detections but no homography was given"
                        ))
                    })?;
                    apply_homography(h, [d.x, d.y])?
                }
            };
            samples.push(TrackPoint {
                t: d.frame_id as f64 / frame_rate,
                pos,
            });
        }
        tracks.push(AgentTrack::new(agent_id, class, samples));
    }
    Ok(tracks)
}

/// Keeps every `factor`-th sample starting from the first.
pub fn resample(track: &AgentTrack, factor: usize) -> AgentTrack {
    let factor = factor.max(1);
    AgentTrack {
        samples: track.samples.iter().step_by(factor).copied().collect(),
        ..track.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// History length `h` in frames, ending at the reference frame.
    pub history: usize,
    /// Future length `τ` in frames after the reference frame.
    pub future: usize,
    /// Reference-frame spacing in frames.
    pub stride: usize,
    /// Frame interval in seconds.
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowAgent {
    pub agent_id: i64,
    pub agent_class: AgentClass,
    pub dims: (f64, f64),
    /// Exactly `h` world positions, oldest first; the last is at `t₀`.
    pub history: Vec<[f64; 2]>,
    /// `τ` positions after `t₀` when the agent is an ego candidate.
    pub future: Option<Vec<[f64; 2]>>,
}

impl WindowAgent {
    pub fn is_ego_candidate(&self) -> bool {
        self.future.is_some()
    }

    pub fn position_at_reference(&self) -> [f64; 2] {
        self.history[self.history.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneWindow {
    /// Frame index `t₀` on the `dt` grid.
    pub reference_frame: i64,
    pub dt: f64,
    /// Agents with complete history, sorted by id.
    pub agents: Vec<WindowAgent>,
}

impl SceneWindow {
    pub fn ego_candidates(&self) -> impl Iterator<Item = usize> + '_ {
        self.agents
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_ego_candidate())
            .map(|(i, _)| i)
    }

    pub fn index_of(&self, agent_id: i64) -> Option<usize> {
        self.agents.iter().position(|a| a.agent_id == agent_id)
    }

    pub fn history_len(&self) -> usize {
        self.agents.first().map_or(0, |a| a.history.len())
    }

    pub fn future_len(&self) -> Option<usize> {
        self.agents
            .iter()
            .find_map(|a| a.future.as_ref().map(|f| f.len()))
    }
}

/// Cuts `(history, future)` windows at every `stride`-th reference frame.
///
/// Agents missing any history frame are left out of the window; an agent is
/// an ego candidate only when all `h + τ` frames are present.
pub fn window_scenes(tracks: &[AgentTrack], cfg: &WindowConfig) -> Vec<SceneWindow> {
    if cfg.history == 0 || cfg.future == 0 || cfg.dt <= 0.0 {
        return Vec::new();
    }
    let frame_of = |t: f64| (t / cfg.dt).round() as i64;
    let indexed: Vec<(&AgentTrack, BTreeMap<i64, [f64; 2]>)> = tracks
        .iter()
        .map(|tr| {
            let frames = tr.samples.iter().map(|s| (frame_of(s.t), s.pos)).collect();
            (tr, frames)
        })
        .collect();
    let first = indexed.iter().filter_map(|(_, f)| f.keys().next()).min();
    let last = indexed
        .iter()
        .filter_map(|(_, f)| f.keys().next_back())
        .max();
    let (Some(&first), Some(&last)) = (first, last) else {
        return Vec::new();
    };
    let (h, tau) = (cfg.history as i64, cfg.future as i64);
    let stride = cfg.stride.max(1);
    let mut windows = Vec::new();
    let mut t0 = first + h - 1;
    while t0 + tau <= last {
        let mut agents: Vec<WindowAgent> = indexed
            .iter()
            .filter_map(|(tr, frames)| {
                let history: Option<Vec<[f64; 2]>> =
                    (t0 - h + 1..=t0).map(|k| frames.get(&k).copied()).collect();
                let history = history?;
                let future: Option<Vec<[f64; 2]>> = (t0 + 1..=t0 + tau)
                    .map(|k| frames.get(&k).copied())
                    .collect();
                Some(WindowAgent {
                    agent_id: tr.agent_id,
                    agent_class: tr.agent_class,
                    dims: tr.dims,
                    history,
                    future,
                })
            })
            .collect();
        agents.sort_by_key(|a| a.agent_id);
        if !agents.is_empty() {
            windows.push(SceneWindow {
                reference_frame: t0,
                dt: cfg.dt,
                agents,
            });
        }
        t0 += stride as i64;
    }
    windows
}

/// Writes world-space tracks in the `traf_csv` layout, rows sorted by
/// `(frame, agent_id)`.
pub fn write_traf_csv<W: Write>(writer: W, tracks: &[AgentTrack], frame_rate: f64) -> Result<()> {
    let mut rows: Vec<(i64, i64, AgentClass, [f64; 2])> = tracks
        .iter()
        .flat_map(|tr| {
            tr.samples.iter().map(move |s| {
                (
                    (s.t * frame_rate).round() as i64,
                    tr.agent_id,
                    tr.agent_class,
                    s.pos,
                )
            })
        })
        .collect();
    rows.sort_by_key(|r| (r.0, r.1));
    let mut w = csv::Writer::from_writer(writer);
    let map_err = |e: csv::Error| Error::Parse {
        line: 0,
        message: e.to_string(),
    };
    w.write_record(["frame", "agent_id", "class", "x", "y", "space"])
        .map_err(map_err)?;
    for (frame, id, class, pos) in rows {
        w.write_record([
            frame.to_string(),
            id.to_string(),
            class.name().to_string(),
            pos[0].to_string(),
            pos[1].to_string(),
            "world".to_string(),
        ])
        .map_err(map_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}
