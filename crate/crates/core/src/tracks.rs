//! Track recordings in the highD-style CSV layout and lane-change event
//! detection.
//!
//! Required columns (any order, extra columns ignored):
//! `frame,id,x,y,xVelocity,yVelocity,xAcceleration,yAcceleration,laneId`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRACK_COLUMNS: [&str; 9] =
    ["frame", "id", "x", "y", "xVelocity", "yVelocity", "xAcceleration", "yAcceleration", "laneId"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub frame: u32,
    pub vehicle_id: u32,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub ax: f64,
    pub ay: f64,
    pub lane_id: u32,
}

/// All states of one vehicle, ordered by frame.
pub type Track = Vec<VehicleState>;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("missing column `{0}`")]
    SchemaMismatch(String),
    #[error("line {line}: {reason}")]
    BadRow { line: u64, reason: String },
    #[error("file is empty")]
    EmptyFile,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// How lane ids map to the left/right sense of travel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneNumbering {
    #[default]
    SmallerIdIsLeft,
    LargerIdIsLeft,
}

impl LaneNumbering {
    pub fn left_of(self, lane: u32) -> Option<u32> {
        match self {
            Self::SmallerIdIsLeft => lane.checked_sub(1),
            Self::LargerIdIsLeft => lane.checked_add(1),
        }
    }

    pub fn right_of(self, lane: u32) -> Option<u32> {
        match self {
            Self::SmallerIdIsLeft => lane.checked_add(1),
            Self::LargerIdIsLeft => lane.checked_sub(1),
        }
    }

    fn direction(self, from: u32, to: u32) -> Direction {
        let moved_to_smaller = to < from;
        match (self, moved_to_smaller) {
            (Self::SmallerIdIsLeft, true) | (Self::LargerIdIsLeft, false) => Direction::Left,
            _ => Direction::Right,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
}

/// A lane change: `index` and `frame` refer to the first state in the new
/// lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InsertionEvent {
    pub index: usize,
    pub frame: u32,
    pub direction: Direction,
}

pub fn load_tracks(path: impl AsRef<Path>) -> Result<Vec<Track>, TrackError> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_tracks(&text)
}

/// Parses CSV text into per-vehicle tracks ordered by vehicle id, each sorted
/// by frame.
pub fn parse_tracks(text: &str) -> Result<Vec<Track>, TrackError> {
    if text.trim().is_empty() {
        return Err(TrackError::EmptyFile);
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let mut cols = [0usize; 9];
    for (slot, name) in cols.iter_mut().zip(TRACK_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TrackError::SchemaMismatch(name.to_string()))?;
    }

    let mut by_vehicle: BTreeMap<u32, Track> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |k: usize| -> Result<&str, TrackError> {
            record.get(cols[k]).ok_or_else(|| TrackError::BadRow { line, reason: format!("missing `{}`", TRACK_COLUMNS[k]) })
        };
        let float = |k: usize| -> Result<f64, TrackError> {
            let raw = field(k)?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| TrackError::BadRow { line, reason: format!("`{}` = {raw:?} is not a finite number", TRACK_COLUMNS[k]) })
        };
        let int = |k: usize| -> Result<u32, TrackError> {
            let raw = field(k)?;
            raw.parse::<u32>()
                .map_err(|_| TrackError::BadRow { line, reason: format!("`{}` = {raw:?} is not a non-negative integer", TRACK_COLUMNS[k]) })
        };
        let state = VehicleState {
            frame: int(0)?,
            vehicle_id: int(1)?,
            x: float(2)?,
            y: float(3)?,
            vx: float(4)?,
            vy: float(5)?,
            ax: float(6)?,
            ay: float(7)?,
            lane_id: int(8)?,
        };
        if state.lane_id < 1 {
            return Err(TrackError::BadRow { line, reason: "laneId must be at least 1".into() });
        }
        by_vehicle.entry(state.vehicle_id).or_default().push(state);
    }
    let mut tracks: Vec<Track> = by_vehicle.into_values().collect();
    for t in &mut tracks {
        t.sort_by_key(|s| s.frame);
    }
    Ok(tracks)
}

pub fn write_tracks<W: Write>(out: W, tracks: &[Track]) -> Result<(), TrackError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACK_COLUMNS)?;
    for s in tracks.iter().flatten() {
        w.write_record(&[
            s.frame.to_string(),
            s.vehicle_id.to_string(),
            s.x.to_string(),
            s.y.to_string(),
            s.vx.to_string(),
            s.vy.to_string(),
            s.ax.to_string(),
            s.ay.to_string(),
            s.lane_id.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_tracks(path: impl AsRef<Path>, tracks: &[Track]) -> Result<(), TrackError> {
    write_tracks(File::create(path)?, tracks)
}

/// One event per lane id change between consecutive states.
pub fn detect_insertion(track: &[VehicleState], numbering: LaneNumbering) -> Vec<InsertionEvent> {
    track
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0].lane_id != w[1].lane_id)
        .map(|(i, w)| InsertionEvent {
            index: i + 1,
            frame: w[1].frame,
            direction: numbering.direction(w[0].lane_id, w[1].lane_id),
        })
        .collect()
}
