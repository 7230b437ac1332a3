//! File artifacts: raw voxel volumes with JSON sidecars, PGM frames, event
//! logs. Every file is written to a temporary sibling and renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::controller::{ScanEvent, SweepRecording};
use crate::grid::{GridGeometry, VoxelGrid};
use crate::imaging::PoseRecord;
use crate::{Error, Result};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, Serialize)]
pub struct VolumeSidecar<'a> {
    pub kind: &'a str,
    #[serde(flatten)]
    pub geometry: GridGeometry,
    /// Storage order of the raw bytes.
    pub layout: &'static str,
    pub dtype: &'static str,
    pub scenario_sha256: &'a str,
    pub seed: u64,
}

/// Writes `<stem>.raw` (u8, x-fastest) and `<stem>.json`.
pub fn export_volume(dir: &Path, stem: &str, kind: &str, grid: &VoxelGrid<u8>, scenario_sha256: &str, seed: u64) -> Result<()> {
    write_atomic(&dir.join(format!("{stem}.raw")), grid.as_slice())?;
    let sidecar = VolumeSidecar {
        kind,
        geometry: grid.geometry(),
        layout: "x-fastest",
        dtype: "u8",
        scenario_sha256,
        seed,
    };
    write_json(&dir.join(format!("{stem}.json")), &sidecar)
}

#[derive(Debug, Serialize)]
struct FrameEntry {
    index: usize,
    intensity: String,
    label: String,
    pose: PoseRecord,
}

/// Writes each frame as intensity and label PGMs plus an `index.json` with
/// the acquisition pose of every frame.
pub fn export_frames(dir: &Path, sweep: &SweepRecording) -> Result<()> {
    let mut entries = Vec::with_capacity(sweep.frames.len());
    for (index, frame) in sweep.frames.iter().enumerate() {
        let intensity = format!("{index:05}_intensity.pgm");
        let label = format!("{index:05}_label.pgm");
        write_atomic(&dir.join(&intensity), &frame.intensity.to_pgm())?;
        let scaled = crate::image::Image::from_fn(frame.label.width(), frame.label.height(), |c, r| {
            if frame.label.get(c, r) != 0 {
                255u8
            } else {
                0
            }
        });
        write_atomic(&dir.join(&label), &scaled.to_pgm())?;
        entries.push(FrameEntry {
            index,
            intensity,
            label,
            pose: PoseRecord::from(&frame.pose),
        });
    }
    write_json(&dir.join("index.json"), &entries)
}

/// JSON-lines event log; the first line is `header`.
pub fn write_events<H: Serialize>(path: &Path, header: &H, events: &[ScanEvent]) -> Result<()> {
    let mut text = serde_json::to_string(header)?;
    text.push('\n');
    for e in events {
        text += &serde_json::to_string(e)?;
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn write_poses(path: &Path, sweep: &SweepRecording) -> Result<()> {
    let records: Vec<PoseRecord> = sweep.poses.iter().map(PoseRecord::from).collect();
    write_json(path, &records)
}
