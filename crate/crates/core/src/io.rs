//! Line-delimited JSON files: sensor streams, calibrations and step reports.
//!
//! Every file starts with a header record naming the format and version;
//! each following line is one tagged record.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{CalibrationSet, FeatureFrame, FrameStreams, SensorConfig, Stage, VehicleGeometry};
use crate::features::Frame;
use crate::sim::{render_frames, Scenario};
use crate::{Pole, Pose, TimedPose};

pub const STREAM_FORMAT: &str = "polecal-stream";
pub const CALIBRATION_FORMAT: &str = "polecal-calibration";
pub const FORMAT_VERSION: u32 = 1;

/// Default tolerance for snapping frame timestamps of different sensors to
/// a common clock (seconds).
pub const DEFAULT_SYNC_TOL: f64 = 0.005;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid input: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoleRecord {
    pub base: [f64; 3],
    pub top: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamRecord {
    Header {
        format: String,
        version: u32,
    },
    Config {
        sensors: Vec<SensorConfig>,
        vehicle: VehicleGeometry,
    },
    Ego {
        t: f64,
        pose: Pose,
    },
    Frame {
        t: f64,
        sensor_id: String,
        poles: Vec<PoleRecord>,
        ground_points: Vec<[f64; 3]>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CalibrationRecord {
    Header {
        format: String,
        version: u32,
        stage: Stage,
        timestamp: Option<f64>,
    },
    Sensor {
        sensor_id: String,
        pose: Pose,
    },
}

/// Everything a stream file holds, grouped and time-sorted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Streams {
    pub sensors: Vec<SensorConfig>,
    pub vehicle: Option<VehicleGeometry>,
    pub ego: Vec<TimedPose>,
    pub frames: FrameStreams,
}

impl Streams {
    /// Noise-free rendering of a simulated scenario.
    pub fn from_scenario(scn: &Scenario) -> Self {
        let (frames, ego) = render_frames(scn);
        Self {
            sensors: scn.sensor_configs(),
            vehicle: Some(scn.vehicle()),
            ego,
            frames,
        }
    }

    /// Frame batches across sensors in time order, one batch per timestamp.
    pub fn batches(&self) -> Vec<Vec<FeatureFrame>> {
        let mut by_time: BTreeMap<u64, Vec<FeatureFrame>> = BTreeMap::new();
        for frames in self.frames.values() {
            for f in frames {
                by_time.entry(ordered_bits(f.timestamp)).or_default().push(f.clone());
            }
        }
        by_time.into_values().collect()
    }
}

/// Order-preserving key for finite floats.
fn ordered_bits(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | 1 << 63
    }
}

fn finite3(v: &[f64; 3]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn pose_finite(p: &Pose) -> bool {
    p.translation().iter().all(|x| x.is_finite()) && p.wxyz().iter().all(|x| x.is_finite())
}

fn check_header(line: usize, format: &str, version: u32, expected: &str) -> Result<(), IoError> {
    if format != expected {
        return Err(IoError::Parse {
            line,
            message: format!("expected a {expected} file, found {format}"),
        });
    }
    if version != FORMAT_VERSION {
        return Err(IoError::Parse {
            line,
            message: format!("unsupported version {version} (this build reads {FORMAT_VERSION})"),
        });
    }
    Ok(())
}

/// Non-empty, non-blank lines with their 1-based numbers.
fn lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String), IoError>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(IoError::from))
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty()))
}

/// Parses and validates a stream file; frames of different sensors within
/// `sync_tol` of each other are moved onto the earliest of their timestamps.
pub fn parse_streams<R: BufRead>(reader: R, sync_tol: f64) -> Result<Streams, IoError> {
    let mut out = Streams::default();
    let mut seen_header = false;
    let mut seen_config = false;
    for item in lines(reader) {
        let (line, text) = item?;
        let record: StreamRecord = serde_json::from_str(&text).map_err(|e| IoError::Parse {
            line,
            message: e.to_string(),
        })?;
        let invalid = |m: String| IoError::Validation(format!("line {line}: {m}"));
        match record {
            StreamRecord::Header { format, version } => {
                if seen_header {
                    return Err(invalid("second header record".into()));
                }
                check_header(line, &format, version, STREAM_FORMAT)?;
                seen_header = true;
                continue;
            }
            _ if !seen_header => {
                return Err(IoError::Parse {
                    line,
                    message: "the first record must be the header".into(),
                })
            }
            StreamRecord::Config { sensors, vehicle } => {
                if seen_config {
                    return Err(invalid("second config record".into()));
                }
                if let Some(s) = sensors.iter().find(|s| !s.is_valid()) {
                    return Err(invalid(format!("sensor {} has an invalid field of view or range", s.id)));
                }
                let mut ids: Vec<&str> = sensors.iter().map(|s| s.id.as_str()).collect();
                ids.sort_unstable();
                if ids.windows(2).any(|w| w[0] == w[1]) {
                    return Err(invalid("duplicate sensor id".into()));
                }
                if !(vehicle.length > 0.0 && vehicle.width > 0.0) || !vehicle.offset_x.is_finite() || !vehicle.offset_y.is_finite() {
                    return Err(invalid("vehicle dimensions must be positive and finite".into()));
                }
                for s in &sensors {
                    out.frames.entry(s.id.clone()).or_default();
                }
                out.sensors = sensors;
                out.vehicle = Some(vehicle);
                seen_config = true;
            }
            StreamRecord::Ego { t, pose } => {
                if !t.is_finite() || !pose_finite(&pose) {
                    return Err(invalid("non-finite egomotion".into()));
                }
                if let Some(last) = out.ego.last() {
                    if t <= last.timestamp {
                        return Err(invalid(format!("egomotion timestamps not increasing ({t} after {})", last.timestamp)));
                    }
                }
                out.ego.push(TimedPose::new(t, pose));
            }
            StreamRecord::Frame {
                t,
                sensor_id,
                poles,
                ground_points,
            } => {
                if !t.is_finite()
                    || !poles.iter().all(|p| finite3(&p.base) && finite3(&p.top))
                    || !ground_points.iter().all(finite3)
                {
                    return Err(invalid(format!("non-finite value in frame of {sensor_id}")));
                }
                if seen_config && !out.sensors.iter().any(|s| s.id == sensor_id) {
                    return Err(invalid(format!("frame from unconfigured sensor {sensor_id}")));
                }
                let stream = out.frames.entry(sensor_id.clone()).or_default();
                if let Some(last) = stream.last() {
                    if t <= last.timestamp {
                        return Err(invalid(format!(
                            "frames of {sensor_id} not increasing in time ({t} after {})",
                            last.timestamp
                        )));
                    }
                }
                let mut frame = FeatureFrame::new(sensor_id, t);
                frame.poles = poles
                    .iter()
                    .map(|p| Pole::new(Vector3::from(p.base), Vector3::from(p.top), Frame::Sensor))
                    .collect();
                frame.ground = ground_points.iter().map(|g| Vector3::from(*g)).collect();
                stream.push(frame);
            }
        }
    }
    synchronize(&mut out.frames, sync_tol)?;
    Ok(out)
}

/// Snaps timestamps to a common clock: each group of timestamps spanning at
/// most `tol` from its earliest member takes that earliest value.
pub fn synchronize(frames: &mut FrameStreams, tol: f64) -> Result<(), IoError> {
    let mut all: Vec<f64> = frames.values().flatten().map(|f| f.timestamp).collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let mut clock = Vec::with_capacity(all.len());
    let mut start = f64::NEG_INFINITY;
    for &t in &all {
        if t - start > tol {
            start = t;
        }
        clock.push((t, start));
    }
    for (id, stream) in frames.iter_mut() {
        for f in stream.iter_mut() {
            let k = clock.partition_point(|c| c.0 < f.timestamp);
            f.timestamp = clock[k].1;
        }
        if stream.windows(2).any(|w| w[0].timestamp == w[1].timestamp) {
            return Err(IoError::Validation(format!(
                "two frames of {id} fall within the {tol} s synchronization tolerance"
            )));
        }
    }
    Ok(())
}

pub fn read_streams(path: &Path, sync_tol: f64) -> Result<Streams, IoError> {
    parse_streams(BufReader::new(File::open(path)?), sync_tol)
}

fn write_line<W: Write, T: Serialize>(w: &mut W, record: &T) -> Result<(), IoError> {
    serde_json::to_writer(&mut *w, record).map_err(|e| IoError::Io(e.into()))?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Writes header, config, all egomotion, then frames in time order (sensors
/// alphabetically within a timestamp).
pub fn write_streams<W: Write>(w: &mut W, streams: &Streams) -> Result<(), IoError> {
    write_line(
        w,
        &StreamRecord::Header {
            format: STREAM_FORMAT.into(),
            version: FORMAT_VERSION,
        },
    )?;
    if let Some(vehicle) = streams.vehicle {
        write_line(
            w,
            &StreamRecord::Config {
                sensors: streams.sensors.clone(),
                vehicle,
            },
        )?;
    }
    for p in &streams.ego {
        write_line(
            w,
            &StreamRecord::Ego {
                t: p.timestamp,
                pose: p.pose,
            },
        )?;
    }
    for batch in streams.batches() {
        for f in batch {
            write_line(
                w,
                &StreamRecord::Frame {
                    t: f.timestamp,
                    sensor_id: f.sensor_id.clone(),
                    poles: f
                        .poles
                        .iter()
                        .map(|p| PoleRecord {
                            base: p.base.into(),
                            top: p.top.into(),
                        })
                        .collect(),
                    ground_points: f.ground.iter().map(|g| (*g).into()).collect(),
                },
            )?;
        }
    }
    Ok(())
}

pub fn save_streams(path: &Path, streams: &Streams) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_streams(&mut w, streams)?;
    w.flush()?;
    Ok(())
}

pub fn write_calibration<W: Write>(w: &mut W, calib: &CalibrationSet) -> Result<(), IoError> {
    write_line(
        w,
        &CalibrationRecord::Header {
            format: CALIBRATION_FORMAT.into(),
            version: FORMAT_VERSION,
            stage: calib.stage,
            timestamp: calib.timestamp,
        },
    )?;
    for (id, pose) in &calib.sensors {
        write_line(
            w,
            &CalibrationRecord::Sensor {
                sensor_id: id.clone(),
                pose: *pose,
            },
        )?;
    }
    Ok(())
}

pub fn parse_calibration<R: BufRead>(reader: R) -> Result<CalibrationSet, IoError> {
    let mut out: Option<CalibrationSet> = None;
    for item in lines(reader) {
        let (line, text) = item?;
        let record: CalibrationRecord = serde_json::from_str(&text).map_err(|e| IoError::Parse {
            line,
            message: e.to_string(),
        })?;
        match (record, out.as_mut()) {
            (
                CalibrationRecord::Header {
                    format,
                    version,
                    stage,
                    timestamp,
                },
                None,
            ) => {
                check_header(line, &format, version, CALIBRATION_FORMAT)?;
                let mut c = CalibrationSet::new(stage);
                c.timestamp = timestamp;
                out = Some(c);
            }
            (CalibrationRecord::Header { .. }, Some(_)) => {
                return Err(IoError::Validation(format!("line {line}: second header record")))
            }
            (CalibrationRecord::Sensor { .. }, None) => {
                return Err(IoError::Parse {
                    line,
                    message: "the first record must be the header".into(),
                })
            }
            (CalibrationRecord::Sensor { sensor_id, pose }, Some(c)) => {
                if !pose_finite(&pose) {
                    return Err(IoError::Validation(format!("line {line}: non-finite pose")));
                }
                if c.get(&sensor_id).is_some() {
                    return Err(IoError::Validation(format!("line {line}: duplicate sensor {sensor_id}")));
                }
                c.insert(sensor_id, pose);
            }
        }
    }
    out.ok_or_else(|| IoError::Validation("calibration file is empty".into()))
}

pub fn read_calibration(path: &Path) -> Result<CalibrationSet, IoError> {
    parse_calibration(BufReader::new(File::open(path)?))
}

pub fn save_calibration(path: &Path, calib: &CalibrationSet) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_calibration(&mut w, calib)?;
    w.flush()?;
    Ok(())
}

/// One JSON object per line for any serializable record (reports, rows).
pub fn write_json_line<W: Write, T: Serialize>(w: &mut W, record: &T) -> Result<(), IoError> {
    write_line(w, record)
}
