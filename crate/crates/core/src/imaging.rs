//! Synthetic B-mode rendering and the segmentation oracle.
//!
//! The probe face is a line segment along the probe's lateral axis `ŷ`; the
//! image plane is spanned by `ŷ` (columns) and the depth axis `ẑ` (rows). Column
//! 0 ("left") sits at `+ŷ · footprint/2`, so increasing column index walks
//! toward `-ŷ`. A column whose face point does not touch the skin is an
//! acoustic shadow for its full depth.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::image::{Image, IntensityImage, LabelImage};
use crate::phantom::{PhantomModel, SurfaceField, TissueClass};
use crate::{Error, Mat3, Quat, Result, Vec3};

/// Rigid probe pose at a point in (simulated) time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbePose {
    pub rotation: Quat,
    /// Position of the probe-face center, mm.
    pub translation: Vec3,
    pub timestamp: f64,
}

/// Frame axes of a probe pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeAxes {
    /// Out-of-plane scan direction.
    pub x: Vec3,
    /// Lateral image axis.
    pub y: Vec3,
    /// Depth axis, pointing into tissue.
    pub z: Vec3,
}

impl ProbePose {
    pub fn new(rotation: Quat, translation: Vec3, timestamp: f64) -> Self {
        Self {
            rotation,
            translation,
            timestamp,
        }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn axes(&self) -> ProbeAxes {
        probe_frame_axes(self)
    }

    /// Maps a point given in probe coordinates to world coordinates.
    pub fn to_world(&self, local: &Vec3) -> Vec3 {
        self.translation + self.rotation * local
    }

    pub fn with_timestamp(mut self, t: f64) -> Self {
        self.timestamp = t;
        self
    }
}

/// Serialized form of a pose: quaternion as `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub t: f64,
    pub translation: [f64; 3],
    pub quaternion: [f64; 4],
}

impl From<&ProbePose> for PoseRecord {
    fn from(p: &ProbePose) -> Self {
        let q = p.rotation.quaternion();
        Self {
            t: p.timestamp,
            translation: p.translation.into(),
            quaternion: [q.w, q.i, q.j, q.k],
        }
    }
}

impl From<&PoseRecord> for ProbePose {
    fn from(r: &PoseRecord) -> Self {
        let [w, i, j, k] = r.quaternion;
        ProbePose {
            rotation: Quat::from_quaternion(nalgebra::Quaternion::new(w, i, j, k)),
            translation: Vec3::from(r.translation),
            timestamp: r.t,
        }
    }
}

/// Columns of the rotation: scan direction, lateral and depth axes.
pub fn probe_frame_axes(pose: &ProbePose) -> ProbeAxes {
    let m = pose.rotation_matrix();
    ProbeAxes {
        x: m.column(0).into_owned(),
        y: m.column(1).into_owned(),
        z: m.column(2).into_owned(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TissueIntensities {
    pub background: u8,
    pub thyroid: u8,
    pub trachea: u8,
    pub shadow: u8,
}

impl Default for TissueIntensities {
    fn default() -> Self {
        Self {
            background: 120,
            thyroid: 80,
            trachea: 30,
            shadow: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImagingConfig {
    pub image_width_px: usize,
    pub image_depth_px: usize,
    /// Lateral aperture of the probe face, mm.
    pub probe_footprint: f64,
    pub image_depth: f64,
    pub frame_rate: f64,
    pub intensities: TissueIntensities,
    pub speckle_std: f64,
    /// A face point touches the skin if it is at most this far above it, mm.
    pub contact_gap_tol: f64,
    /// Depth of the face center below the skin after settling, mm.
    pub indentation: f64,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        Self {
            image_width_px: 128,
            image_depth_px: 160,
            probe_footprint: 40.0,
            image_depth: 50.0,
            frame_rate: 30.0,
            intensities: TissueIntensities::default(),
            speckle_std: 10.0,
            contact_gap_tol: 0.5,
            indentation: 4.5,
        }
    }
}

impl ImagingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_width_px == 0 || self.image_depth_px == 0 {
            return Err(Error::invalid("imaging.image_*_px", "must be > 0"));
        }
        for (name, v) in [
            ("imaging.probe_footprint", self.probe_footprint),
            ("imaging.image_depth", self.image_depth),
            ("imaging.frame_rate", self.frame_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be > 0, got {v}")));
            }
        }
        if !(self.speckle_std >= 0.0) {
            return Err(Error::invalid("imaging.speckle_std", "must be >= 0"));
        }
        if !(self.contact_gap_tol >= 0.0) {
            return Err(Error::invalid("imaging.contact_gap_tol", "must be >= 0"));
        }
        if !self.indentation.is_finite() {
            return Err(Error::invalid("imaging.indentation", "must be finite"));
        }
        Ok(())
    }

    /// Lateral pixel pitch, mm.
    pub fn lateral_spacing(&self) -> f64 {
        self.probe_footprint / self.image_width_px as f64
    }

    /// Axial pixel pitch, mm.
    pub fn axial_spacing(&self) -> f64 {
        self.image_depth / self.image_depth_px as f64
    }

    /// Probe-frame lateral coordinate of a column center.
    pub fn column_to_lateral(&self, col: usize) -> f64 {
        0.5 * self.probe_footprint - (col as f64 + 0.5) * self.lateral_spacing()
    }

    /// Column whose center is nearest to the lateral coordinate `y`.
    pub fn lateral_to_column(&self, y: f64) -> Option<usize> {
        let c = ((0.5 * self.probe_footprint - y) / self.lateral_spacing() - 0.5).round();
        (c >= 0.0 && c < self.image_width_px as f64).then_some(c as usize)
    }

    /// Probe-frame depth coordinate of a row center.
    pub fn row_to_depth(&self, row: usize) -> f64 {
        (row as f64 + 0.5) * self.axial_spacing()
    }

    pub fn depth_to_row(&self, z: f64) -> Option<usize> {
        let r = (z / self.axial_spacing() - 0.5).round();
        (r >= 0.0 && r < self.image_depth_px as f64).then_some(r as usize)
    }

    pub fn frame_period(&self) -> f64 {
        1.0 / self.frame_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegOracleConfig {
    /// Probability that a whole frame's label comes back empty.
    pub dropout_prob: f64,
    /// Maximum dilation/erosion radius applied per frame, mm.
    pub boundary_jitter: f64,
    /// Clear labels in columns without probe contact.
    pub shadow_masking: bool,
    pub rng_seed: u64,
}

impl Default for SegOracleConfig {
    fn default() -> Self {
        Self {
            dropout_prob: 0.0,
            boundary_jitter: 0.3,
            shadow_masking: true,
            rng_seed: 0,
        }
    }
}

impl SegOracleConfig {
    pub fn perfect() -> Self {
        Self {
            dropout_prob: 0.0,
            boundary_jitter: 0.0,
            shadow_masking: true,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(Error::invalid("oracle.dropout_prob", "must be in [0, 1]"));
        }
        if !(self.boundary_jitter >= 0.0) {
            return Err(Error::invalid("oracle.boundary_jitter", "must be >= 0"));
        }
        Ok(())
    }
}

/// One synthetic B-mode frame and its oracle segmentation.
#[derive(Debug, Clone)]
pub struct Frame {
    pub intensity: IntensityImage,
    pub label: LabelImage,
    /// Per-column probe contact at acquisition.
    pub contact: Vec<bool>,
    pub pose: ProbePose,
    pub timestamp: f64,
}

impl Frame {
    pub fn has_thyroid(&self) -> bool {
        self.label.any_nonzero()
    }
}

/// Per-column contact between the probe face and the skin.
pub fn contact_mask(pose: &ProbePose, surface: &SurfaceField, cfg: &ImagingConfig) -> Vec<bool> {
    let axes = probe_frame_axes(pose);
    (0..cfg.image_width_px)
        .map(|c| {
            let p = pose.translation + axes.y * cfg.column_to_lateral(c);
            match surface.height_unchecked(p.x, p.y) {
                Some(h) => p.z - h <= cfg.contact_gap_tol,
                None => false,
            }
        })
        .collect()
}

pub fn contact_count(pose: &ProbePose, surface: &SurfaceField, cfg: &ImagingConfig) -> usize {
    contact_mask(pose, surface, cfg).into_iter().filter(|&c| c).count()
}

/// Places the face center `indentation` below the skin; x, y and rotation
/// are kept.
pub fn settle_z(pose: &ProbePose, surface: &SurfaceField, cfg: &ImagingConfig) -> Result<ProbePose> {
    let t = pose.translation;
    let h = surface.height(t.x, t.y)?;
    let mut out = *pose;
    out.translation.z = h - cfg.indentation;
    Ok(out)
}

/// Renders the frame seen from `pose`. `rng` drives speckle and the oracle's
/// degradations; callers own seeding.
pub fn render_frame<R: Rng + ?Sized>(
    pose: &ProbePose,
    model: &PhantomModel,
    cfg: &ImagingConfig,
    oracle: &SegOracleConfig,
    rng: &mut R,
) -> Frame {
    let (w, h) = (cfg.image_width_px, cfg.image_depth_px);
    let contact = contact_mask(pose, model.surface(), cfg);
    let axes = probe_frame_axes(pose);
    let levels = cfg.intensities;

    let mut classes = Image::filled(w, h, TissueClass::Background);
    for c in 0..w {
        let lateral = pose.translation + axes.y * cfg.column_to_lateral(c);
        // rows outside the tissue span are background
        let Some((t0, t1)) = model.tissue_span(&lateral, &axes.z, cfg.image_depth) else {
            continue;
        };
        let dz = cfg.axial_spacing();
        let r0 = ((t0 / dz - 0.5).floor().max(0.0)) as usize;
        let r1 = ((t1 / dz - 0.5).ceil() as usize + 1).min(h);
        for r in r0..r1 {
            let p = lateral + axes.z * cfg.row_to_depth(r);
            classes.set(c, r, model.classify_point(&p));
        }
    }

    let noise = (cfg.speckle_std > 0.0).then(|| Normal::new(0.0, cfg.speckle_std).unwrap());
    let mut intensity = Image::filled(w, h, levels.shadow);
    for r in 0..h {
        for (c, _) in contact.iter().enumerate().filter(|(_, &touching)| touching) {
            let base = match classes.get(c, r) {
                TissueClass::Background => levels.background,
                TissueClass::Thyroid => levels.thyroid,
                TissueClass::Trachea => levels.trachea,
            } as f64;
            let v = match &noise {
                Some(n) => base + n.sample(rng),
                None => base,
            };
            intensity.set(c, r, v.round().clamp(0.0, 255.0) as u8);
        }
    }

    let mut label = Image::from_fn(w, h, |c, r| (classes.get(c, r) == TissueClass::Thyroid) as u8);
    if oracle.boundary_jitter > 0.0 {
        let radius = rng.random_range(0.0..=oracle.boundary_jitter);
        let dilate = rng.random_bool(0.5);
        label = morph(&label, radius, cfg.lateral_spacing(), cfg.axial_spacing(), dilate);
    }
    if oracle.shadow_masking {
        for (c, &touch) in contact.iter().enumerate() {
            if !touch {
                for r in 0..h {
                    label.set(c, r, 0);
                }
            }
        }
    }
    if oracle.dropout_prob > 0.0 && rng.random_bool(oracle.dropout_prob) {
        label = Image::filled(w, h, 0);
    }

    Frame {
        intensity,
        label,
        contact,
        pose: *pose,
        timestamp: pose.timestamp,
    }
}

/// Binary dilation (or erosion) with an elliptical structuring element of
/// physical radius `radius` mm.
fn morph(img: &LabelImage, radius: f64, dx: f64, dz: f64, dilate: bool) -> LabelImage {
    let rc = (radius / dx).floor() as isize;
    let rr = (radius / dz).floor() as isize;
    if rc == 0 && rr == 0 {
        return img.clone();
    }
    let mut offsets = Vec::new();
    for oc in -rc..=rc {
        for or in -rr..=rr {
            let d2 = (oc as f64 * dx).powi(2) + (or as f64 * dz).powi(2);
            if d2 <= radius * radius {
                offsets.push((oc, or));
            }
        }
    }
    let (w, h) = (img.width() as isize, img.height() as isize);
    Image::from_fn(img.width(), img.height(), |c, r| {
        let hit = |&(oc, or): &(isize, isize)| {
            let (cc, rr) = (c as isize + oc, r as isize + or);
            let v = if cc < 0 || rr < 0 || cc >= w || rr >= h {
                0
            } else {
                img.get(cc as usize, rr as usize)
            };
            v != 0
        };
        let on = if dilate {
            offsets.iter().any(hit)
        } else {
            offsets.iter().all(hit)
        };
        on as u8
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;
    use crate::phantom::{build_phantom, PhantomSpec};
    use crate::rng::rng_from;

    fn flat() -> SurfaceField {
        SurfaceField::Flat {
            height: 0.0,
            half_width: 100.0,
        }
    }

    /// Depth axis pointing down (-z), scan axis +x.
    fn down(roll_deg: f64) -> Quat {
        Quat::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI + roll_deg.to_radians())
    }

    #[test]
    fn identity_axes_are_global_basis() {
        let p = ProbePose::new(Quat::identity(), Vec3::zeros(), 0.0);
        let a = probe_frame_axes(&p);
        assert_eq!((a.x, a.y, a.z), (Vec3::x(), Vec3::y(), Vec3::z()));
    }

    #[test]
    fn rotation_about_z_maps_x_to_y() {
        let p = ProbePose::new(
            Quat::from_axis_angle(&Vec3::z_axis(), FRAC_PI_2),
            Vec3::zeros(),
            0.0,
        );
        let a = probe_frame_axes(&p);
        assert!((a.x - Vec3::y()).norm() < 1e-12);
        assert!((a.y + Vec3::x()).norm() < 1e-12);
    }

    #[test]
    fn pixel_round_trip_is_exact() {
        let cfg = ImagingConfig::default();
        for c in 0..cfg.image_width_px {
            assert_eq!(cfg.lateral_to_column(cfg.column_to_lateral(c)), Some(c));
        }
        for r in 0..cfg.image_depth_px {
            assert_eq!(cfg.depth_to_row(cfg.row_to_depth(r)), Some(r));
        }
        assert!((cfg.column_to_lateral(0) - (20.0 - 0.15625)).abs() < 1e-12);
    }

    #[test]
    fn settle_on_flat_surface() {
        let cfg = ImagingConfig {
            indentation: 1.0,
            ..Default::default()
        };
        let p = ProbePose::new(down(0.0), Vec3::new(3.0, 4.0, 17.0), 0.0);
        let s = settle_z(&p, &flat(), &cfg).unwrap();
        assert_eq!(s.translation, Vec3::new(3.0, 4.0, -1.0));
        assert_eq!(s.rotation, p.rotation);
        assert_eq!(settle_z(&s, &flat(), &cfg).unwrap(), s);
    }

    #[test]
    fn settle_follows_cylinder() {
        let spec = PhantomSpec::default();
        let surf = spec.surface();
        let cfg = ImagingConfig::default();
        let crest = settle_z(&ProbePose::new(down(0.0), Vec3::new(0.0, 0.0, 0.0), 0.0), &surf, &cfg)
            .unwrap();
        let flank = settle_z(&ProbePose::new(down(0.0), Vec3::new(0.0, 36.0, 0.0), 0.0), &surf, &cfg)
            .unwrap();
        // crest at 0, flank at -60 + sqrt(60^2 - 36^2) = -12
        assert!((crest.translation.z - flank.translation.z - 12.0).abs() < 1e-12);
        assert!(settle_z(&ProbePose::new(down(0.0), Vec3::new(0.0, 58.0, 0.0), 0.0), &surf, &cfg)
            .is_err());
    }

    #[test]
    fn contact_on_flat_surface() {
        let cfg = ImagingConfig {
            indentation: 1.0,
            contact_gap_tol: 0.2,
            ..Default::default()
        };
        let settled = settle_z(&ProbePose::new(down(0.0), Vec3::zeros(), 0.0), &flat(), &cfg).unwrap();
        assert!(contact_mask(&settled, &flat(), &cfg).iter().all(|&c| c));

        // Tilt 6 deg: lateral point y lifts by y*sin(6deg) - 1 mm; contact lost
        // where that exceeds 0.2 mm, i.e. |y| > 1.2 / sin(6deg) = 11.48 mm.
        let tilted =
            settle_z(&ProbePose::new(down(6.0), Vec3::zeros(), 0.0), &flat(), &cfg).unwrap();
        let mask = contact_mask(&tilted, &flat(), &cfg);
        let limit = 1.2 / 6f64.to_radians().sin();
        let lifted_side = mask.iter().take(10).all(|&c| !c) || mask.iter().rev().take(10).all(|&c| !c);
        assert!(lifted_side);
        for (c, &m) in mask.iter().enumerate() {
            let y = cfg.column_to_lateral(c);
            let lift = probe_frame_axes(&tilted).y.z * y + tilted.translation.z;
            assert_eq!(m, lift <= 0.2, "column {c} y {y} limit {limit}");
        }

        let lifted = ProbePose::new(down(0.0), Vec3::new(0.0, 0.0, 5.0), 0.0);
        assert!(contact_mask(&lifted, &flat(), &cfg).iter().all(|&c| !c));
    }

    #[test]
    fn render_centered_over_lobe() {
        let model = build_phantom(PhantomSpec::default()).unwrap();
        let cfg = ImagingConfig {
            speckle_std: 0.0,
            ..Default::default()
        };
        let lobe = model.spec().lobe_left.unwrap();
        let surf = model.surface();
        let y = lobe.center[1];
        let q = Quat::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI + surf.normal_roll(y));
        let pose = settle_z(&ProbePose::new(q, Vec3::new(10.0, y, 0.0), 0.0), surf, &cfg).unwrap();
        let frame = render_frame(&pose, &model, &cfg, &SegOracleConfig::perfect(), &mut rng_from(1));
        assert!(frame.contact.iter().all(|&c| c));
        // oracle equivalence with direct classification of the plane
        let axes = probe_frame_axes(&pose);
        for c in 0..cfg.image_width_px {
            for r in 0..cfg.image_depth_px {
                let p = pose.translation
                    + axes.y * cfg.column_to_lateral(c)
                    + axes.z * cfg.row_to_depth(r);
                let want = model.classify_point(&p) == TissueClass::Thyroid;
                assert_eq!(frame.label.get(c, r) != 0, want);
                let lvl = frame.intensity.get(c, r);
                if want {
                    assert_eq!(lvl, 80);
                }
            }
        }
        assert!(frame.label.count_nonzero() > 1000);
        let levels: std::collections::BTreeSet<u8> = frame.intensity.as_slice().iter().copied().collect();
        assert!(levels.contains(&80) && levels.contains(&120));
    }

    #[test]
    fn shadow_columns_are_dark_and_unlabeled() {
        let model = build_phantom(PhantomSpec::default()).unwrap();
        let cfg = ImagingConfig::default();
        let surf = model.surface();
        let y = 21.0;
        let q = Quat::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI + surf.normal_roll(y) + 0.25);
        let pose = settle_z(&ProbePose::new(q, Vec3::new(0.0, y, 0.0), 0.0), surf, &cfg).unwrap();
        let oracle = SegOracleConfig {
            boundary_jitter: 1.0,
            ..Default::default()
        };
        let frame = render_frame(&pose, &model, &cfg, &oracle, &mut rng_from(3));
        let dark: Vec<usize> = (0..cfg.image_width_px).filter(|&c| !frame.contact[c]).collect();
        assert!(!dark.is_empty());
        for c in dark {
            assert!(frame.intensity.column(c).all(|v| v <= cfg.intensities.shadow));
            assert!(!frame.label.column_has_label(c));
        }
    }

    #[test]
    fn beyond_lobe_tip_label_is_empty() {
        let model = build_phantom(PhantomSpec::default()).unwrap();
        let cfg = ImagingConfig::default();
        let surf = model.surface();
        let q = Quat::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI + surf.normal_roll(21.0));
        let pose = settle_z(&ProbePose::new(q, Vec3::new(40.0, 21.0, 0.0), 0.0), surf, &cfg).unwrap();
        let frame = render_frame(&pose, &model, &cfg, &SegOracleConfig::default(), &mut rng_from(3));
        assert!(!frame.has_thyroid());
    }

    #[test]
    fn rendering_is_deterministic() {
        let model = build_phantom(PhantomSpec::default()).unwrap();
        let cfg = ImagingConfig::default();
        let oracle = SegOracleConfig {
            dropout_prob: 0.3,
            boundary_jitter: 1.0,
            ..Default::default()
        };
        let pose = settle_z(
            &ProbePose::new(down(0.0), Vec3::new(0.0, 15.0, 0.0), 0.0),
            model.surface(),
            &cfg,
        )
        .unwrap();
        let a = render_frame(&pose, &model, &cfg, &oracle, &mut rng_from(9));
        let b = render_frame(&pose, &model, &cfg, &oracle, &mut rng_from(9));
        assert_eq!(a.intensity, b.intensity);
        assert_eq!(a.label, b.label);
    }

    #[test]
    fn morphology_grows_and_shrinks() {
        let img = Image::from_fn(21, 21, |c, r| ((c as i32 - 10).abs() <= 4 && (r as i32 - 10).abs() <= 4) as u8);
        let grown = morph(&img, 2.0, 1.0, 1.0, true);
        let shrunk = morph(&img, 2.0, 1.0, 1.0, false);
        assert!(grown.count_nonzero() > img.count_nonzero());
        assert_eq!(shrunk.count_nonzero(), 25);
        assert_eq!(morph(&img, 0.4, 1.0, 1.0, true), img);
    }
}
