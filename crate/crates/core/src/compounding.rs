//! 3D compounding of tracked frames.
//!
//! Frame and pose streams are not sampled together, so each frame's pose is
//! interpolated at its timestamp: translation linearly, rotation by slerp.
//! Pixels are forward-splatted into the voxel that contains them. Label voxels
//! use a configurable vote, intensity voxels the mean of their contributions.

use serde::{Deserialize, Serialize};

use crate::controller::SweepRecording;
use crate::grid::{GridGeometry, VoxelGrid};
use crate::imaging::ProbePose;
use crate::{Error, Quat, Result, Vec3, MM3_PER_ML};

/// Below this angle-cosine gap the pair is treated as coincident.
const SLERP_LINEAR_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoteRule {
    /// A voxel is thyroid if any contributing pixel is.
    AnyHit,
    /// A voxel is thyroid if more than half of its contributions are.
    /// Default: any-hit marks every voxel the boundary grazes and so
    /// overestimates by about half a voxel layer.
    Majority,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompoundingConfig {
    pub voxel_pitch: f64,
    pub vote: VoteRule,
    /// Margin added around the swept bounds, mm.
    pub padding: f64,
}

impl Default for CompoundingConfig {
    fn default() -> Self {
        Self {
            voxel_pitch: 0.5,
            vote: VoteRule::Majority,
            padding: 1.0,
        }
    }
}

impl CompoundingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_pitch > 0.0 && self.voxel_pitch.is_finite()) {
            return Err(Error::invalid("compounding.voxel_pitch", "must be > 0"));
        }
        if !(self.padding >= 0.0) {
            return Err(Error::invalid("compounding.padding", "must be >= 0"));
        }
        Ok(())
    }
}

/// Binary thyroid occupancy with physical spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub grid: VoxelGrid<u8>,
}

impl LabelVolume {
    pub fn new(grid: VoxelGrid<u8>) -> Self {
        Self { grid }
    }

    pub fn occupied(&self) -> usize {
        self.grid.as_slice().iter().filter(|&&v| v != 0).count()
    }
}

pub type IntensityVolume = VoxelGrid<u8>;

/// Spherical linear interpolation along the shorter arc.
///
/// Endpoints are returned bit-exact. Nearly coincident inputs fall back to a
/// normalized linear blend.
pub fn slerp(q0: &Quat, q1: &Quat, t: f64) -> Quat {
    if t == 0.0 {
        return *q0;
    }
    if t == 1.0 {
        return *q1;
    }
    let a = q0.quaternion().coords;
    let mut b = q1.quaternion().coords;
    let mut dot = a.dot(&b);
    if dot < 0.0 {
        b = -b;
        dot = -dot;
    }
    let blended = if dot > 1.0 - SLERP_LINEAR_THRESHOLD {
        a * (1.0 - t) + b * t
    } else {
        let theta = dot.min(1.0).acos();
        let s = theta.sin();
        a * (((1.0 - t) * theta).sin() / s) + b * ((t * theta).sin() / s)
    };
    Quat::new_normalize(nalgebra::Quaternion::from(blended))
}

/// Componentwise `(1 - t) a + t b`; exact at `t = 0`, `t = 1` and the midpoint.
pub fn lerp(a: &Vec3, b: &Vec3, t: f64) -> Vec3 {
    a * (1.0 - t) + b * t
}

/// Pose at time `t` from a timestamp-sorted sequence. No extrapolation.
pub fn interpolate_pose(poses: &[ProbePose], t: f64) -> Result<ProbePose> {
    let (first, last) = match (poses.first(), poses.last()) {
        (Some(f), Some(l)) => (f.timestamp, l.timestamp),
        _ => return Err(Error::Empty("pose sequence")),
    };
    if !(t >= first && t <= last) {
        return Err(Error::OutOfRange { t, first, last });
    }
    // index of the last pose with timestamp <= t
    let i = poses.partition_point(|p| p.timestamp <= t) - 1;
    let p0 = &poses[i];
    if p0.timestamp == t || i + 1 == poses.len() {
        return Ok(p0.with_timestamp(t));
    }
    let p1 = &poses[i + 1];
    let u = (t - p0.timestamp) / (p1.timestamp - p0.timestamp);
    Ok(ProbePose {
        rotation: slerp(&p0.rotation, &p1.rotation, u),
        translation: lerp(&p0.translation, &p1.translation, u),
        timestamp: t,
    })
}

/// Compounds one sweep into intensity and label volumes.
pub fn compound(sweep: &SweepRecording, cfg: &CompoundingConfig) -> Result<(IntensityVolume, LabelVolume)> {
    cfg.validate()?;
    if sweep.frames.is_empty() {
        return Err(Error::Empty("sweep frames"));
    }
    let img = &sweep.imaging;
    let poses: Vec<ProbePose> = sweep
        .frames
        .iter()
        .enumerate()
        .map(|(index, f)| {
            interpolate_pose(&sweep.poses, f.timestamp).map_err(|_| Error::FrameOutsidePoses {
                index,
                t: f.timestamp,
            })
        })
        .collect::<Result<_>>()?;

    let (w, h) = (img.image_width_px, img.image_depth_px);
    let lateral: Vec<f64> = (0..w).map(|c| img.column_to_lateral(c)).collect();
    let depth: Vec<f64> = (0..h).map(|r| img.row_to_depth(r)).collect();

    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for pose in &poses {
        for y in [lateral[0], lateral[w - 1]] {
            for z in [depth[0], depth[h - 1]] {
                let p = pose.to_world(&Vec3::new(0.0, y, z));
                lo = lo.inf(&p);
                hi = hi.sup(&p);
            }
        }
    }
    let pad = Vec3::repeat(cfg.padding);
    let geometry = GridGeometry::covering(lo - pad, hi + pad, cfg.voxel_pitch);
    let n = geometry.voxel_count();

    // Integer accumulators make the result independent of splat order.
    // Per voxel: intensity sum, contributions, label hits.
    let mut acc = vec![[0u32; 3]; n];
    for (frame, pose) in sweep.frames.iter().zip(&poses) {
        let m = pose.rotation_matrix();
        let (ay, az) = (m.column(1).into_owned(), m.column(2).into_owned());
        for (c, &y) in lateral.iter().enumerate() {
            let base = pose.translation + ay * y;
            // consecutive depth samples mostly share a voxel; flush on change
            let mut run: Option<(usize, [u32; 3])> = None;
            for (r, &z) in depth.iter().enumerate() {
                let p = base + az * z;
                let Some(idx) = geometry.locate(&p) else {
                    continue;
                };
                let li = geometry.linear(idx);
                let add = [
                    u32::from(frame.intensity.get(c, r)),
                    1,
                    u32::from(frame.label.get(c, r) != 0),
                ];
                match &mut run {
                    Some((cur, sums)) if *cur == li => {
                        for k in 0..3 {
                            sums[k] += add[k];
                        }
                    }
                    _ => {
                        if let Some((cur, sums)) = run.replace((li, add)) {
                            flush(&mut acc[cur], sums);
                        }
                    }
                }
            }
            if let Some((cur, sums)) = run {
                flush(&mut acc[cur], sums);
            }
        }
    }

    let mut intensity = VoxelGrid::filled(geometry, 0u8);
    let mut label = VoxelGrid::filled(geometry, 0u8);
    for (li, &[sum, cnt, hits]) in acc.iter().enumerate() {
        if cnt == 0 {
            continue;
        }
        intensity.as_mut_slice()[li] = ((sum + cnt / 2) / cnt) as u8;
        let on = match cfg.vote {
            VoteRule::AnyHit => hits > 0,
            VoteRule::Majority => 2 * hits > cnt,
        };
        label.as_mut_slice()[li] = on as u8;
    }
    Ok((intensity, LabelVolume::new(label)))
}

fn flush(slot: &mut [u32; 3], sums: [u32; 3]) {
    for k in 0..3 {
        slot[k] += sums[k];
    }
}

/// Spatial union of two label volumes on a grid covering both at the finer
/// pitch of each axis.
pub fn merge_lobes(a: &LabelVolume, b: &LabelVolume) -> LabelVolume {
    let (ga, gb) = (a.grid.geometry(), b.grid.geometry());
    let lo = ga.min_corner().inf(&gb.min_corner());
    let hi = ga.max_corner().sup(&gb.max_corner());
    let mut dims = [0usize; 3];
    let mut origin = [0.0; 3];
    let mut spacing = [0.0; 3];
    for ax in 0..3 {
        let s = ga.spacing[ax].min(gb.spacing[ax]);
        let l = (lo[ax] / s + 1e-9).floor();
        let u = (hi[ax] / s - 1e-9).ceil();
        spacing[ax] = s;
        origin[ax] = l * s;
        dims[ax] = ((u - l) as usize).max(1);
    }
    let geometry = GridGeometry {
        dims,
        spacing,
        origin,
    };
    let mut grid = VoxelGrid::filled(geometry, 0u8);
    for src in [a, b] {
        union_into(&mut grid, &src.grid);
    }
    LabelVolume::new(grid)
}

/// ORs `src` into `dst`, sampling at `dst` voxel centers. Sources on the same
/// lattice are copied index-to-index.
fn union_into(dst: &mut VoxelGrid<u8>, src: &VoxelGrid<u8>) {
    let (gd, gs) = (dst.geometry(), src.geometry());
    let mut shift = [0usize; 3];
    let aligned = (0..3).all(|ax| {
        let off = (gs.origin[ax] - gd.origin[ax]) / gd.spacing[ax];
        shift[ax] = off.round().max(0.0) as usize;
        gs.spacing[ax] == gd.spacing[ax] && off >= -1e-9 && (off - off.round()).abs() < 1e-9
    });
    let [nx, ny, nz] = gs.dims;
    if aligned {
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    if src.get(i, j, k) != 0 {
                        dst.set(i + shift[0], j + shift[1], k + shift[2], 1);
                    }
                }
            }
        }
        return;
    }
    let [mx, my, mz] = gd.dims;
    for k in 0..mz {
        for j in 0..my {
            for i in 0..mx {
                if src.sample(&gd.center(i, j, k)).is_some_and(|v| v != 0) {
                    dst.set(i, j, k, 1);
                }
            }
        }
    }
}

/// `d1 * d2 * d3 * sum(M)`, in ml.
pub fn volume_of(v: &LabelVolume) -> f64 {
    v.grid.geometry().voxel_volume_mm3() * v.occupied() as f64 / MM3_PER_ML
}
