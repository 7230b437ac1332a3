//! Synthetic neck phantom: two ellipsoidal thyroid lobes joined by a box
//! isthmus, a cylindrical trachea, all inside a cylindrical neck whose
//! anterior skin is the surface the probe follows.
//!
//! The analytic description is authoritative; the voxel grid is built by
//! classifying voxel centers, so both representations agree exactly at every
//! grid center.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::grid::{GridGeometry, VoxelGrid};
use crate::{Error, Result, Vec3, MM3_PER_ML};

/// Extra x range (mm) voxelized beyond the thyroid tips.
const GRID_X_MARGIN: f64 = 15.0;
/// Fraction of the neck radius usable as scan region.
const SURFACE_REGION_FRAC: f64 = 0.95;
const BOUNDARY_SAMPLES: usize = 3600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lobe {
    Left,
    Right,
}

impl Lobe {
    pub const BOTH: [Lobe; 2] = [Lobe::Left, Lobe::Right];

    pub fn name(self) -> &'static str {
        match self {
            Lobe::Left => "left",
            Lobe::Right => "right",
        }
    }
}

impl std::fmt::Display for Lobe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum TissueClass {
    Background = 0,
    Thyroid = 1,
    Trachea = 2,
}

/// Ellipsoid with semi-axes along (x, y, z), rolled about the x axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidSpec {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    #[serde(default)]
    pub rotation_deg: f64,
}

impl EllipsoidSpec {
    pub fn contains(&self, p: &Vec3) -> bool {
        let [a, b, cc] = self.semi_axes;
        let dx = p.x - self.center[0];
        let dy = p.y - self.center[1];
        let dz = p.z - self.center[2];
        let r = b.max(cc);
        if dx.abs() > a || dy * dy + dz * dz > r * r {
            return false;
        }
        let (ly, lz) = if self.rotation_deg == 0.0 {
            (dy, dz)
        } else {
            // rotate the offset by -rotation about x
            let (s, c) = self.rotation_deg.to_radians().sin_cos();
            (c * dy + s * dz, -s * dy + c * dz)
        };
        (dx / a).powi(2) + (ly / b).powi(2) + (lz / cc).powi(2) <= 1.0
    }

    pub fn analytic_volume_mm3(&self) -> f64 {
        4.0 / 3.0 * PI * self.semi_axes.iter().product::<f64>()
    }

    /// Points on the boundary of the central cross-section (x = center.x).
    fn cross_section_boundary(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        (0..BOUNDARY_SAMPLES).map(move |n| {
            let u = 2.0 * PI * n as f64 / BOUNDARY_SAMPLES as f64;
            let ly = self.semi_axes[1] * u.cos();
            let lz = self.semi_axes[2] * u.sin();
            (self.center[1] + c * ly - s * lz, self.center[2] + s * ly + c * lz)
        })
    }

    /// Axis-aligned bounding box.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let [a, b, cc] = self.semi_axes;
        let hy = ((c * b).powi(2) + (s * cc).powi(2)).sqrt();
        let hz = ((s * b).powi(2) + (c * cc).powi(2)).sqrt();
        let ctr = Vec3::from(self.center);
        (ctr - Vec3::new(a, hy, hz), ctr + Vec3::new(a, hy, hz))
    }
}

/// Axis-aligned box given by center and full extents along (x, y, z).
/// Zero extents denote an absent box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub center: [f64; 3],
    pub extents: [f64; 3],
}

impl BoxSpec {
    pub fn is_empty(&self) -> bool {
        self.extents.contains(&0.0)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        !self.is_empty()
            && (0..3).all(|a| (p[a] - self.center[a]).abs() <= 0.5 * self.extents[a])
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let c = Vec3::from(self.center);
        let h = Vec3::from(self.extents) * 0.5;
        (c - h, c + h)
    }
}

/// Infinite cylinder parallel to the x axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderSpec {
    /// Axis position in the (y, z) plane.
    pub center_yz: [f64; 2],
    pub radius: f64,
}

impl CylinderSpec {
    pub fn contains(&self, p: &Vec3) -> bool {
        (p.y - self.center_yz[0]).powi(2) + (p.z - self.center_yz[1]).powi(2)
            <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    /// Neck cylinder radius; the axis sits at `z = -neck_radius`, so the skin
    /// crest is at `z = 0`.
    pub neck_radius: f64,
    pub lobe_left: Option<EllipsoidSpec>,
    pub lobe_right: Option<EllipsoidSpec>,
    pub isthmus: Option<BoxSpec>,
    pub trachea: Option<CylinderSpec>,
    pub voxel_pitch: f64,
}

impl Default for PhantomSpec {
    /// Two 28 x 12 x 10 mm lobes plus a 14 x 20 x 8 mm isthmus, about 30 ml.
    fn default() -> Self {
        Self {
            neck_radius: 60.0,
            lobe_left: Some(EllipsoidSpec {
                center: [0.0, 21.0, -24.0],
                semi_axes: [28.0, 12.0, 10.0],
                rotation_deg: 0.0,
            }),
            lobe_right: Some(EllipsoidSpec {
                center: [0.0, -21.0, -24.0],
                semi_axes: [28.0, 12.0, 10.0],
                rotation_deg: 0.0,
            }),
            isthmus: Some(BoxSpec {
                center: [0.0, 0.0, -18.0],
                extents: [14.0, 20.0, 8.0],
            }),
            trachea: Some(CylinderSpec {
                center_yz: [0.0, -32.0],
                radius: 9.0,
            }),
            voxel_pitch: 0.5,
        }
    }
}

impl PhantomSpec {
    pub fn lobe(&self, lobe: Lobe) -> Option<&EllipsoidSpec> {
        match lobe {
            Lobe::Left => self.lobe_left.as_ref(),
            Lobe::Right => self.lobe_right.as_ref(),
        }
    }

    fn lobes(&self) -> impl Iterator<Item = (Lobe, &EllipsoidSpec)> {
        Lobe::BOTH
            .into_iter()
            .filter_map(move |l| self.lobe(l).map(|e| (l, e)))
    }

    fn active_isthmus(&self) -> Option<&BoxSpec> {
        self.isthmus.as_ref().filter(|b| !b.is_empty())
    }

    fn neck_axis_z(&self) -> f64 {
        -self.neck_radius
    }

    pub fn validate(&self) -> Result<()> {
        positive("neck_radius", self.neck_radius)?;
        positive("voxel_pitch", self.voxel_pitch)?;
        let r2 = self.neck_radius * self.neck_radius;
        let axis_z = self.neck_axis_z();
        for (lobe, e) in self.lobes() {
            let field = format!("lobe_{lobe}");
            for (a, &s) in e.semi_axes.iter().enumerate() {
                positive(&format!("{field}.semi_axes[{a}]"), s)?;
            }
            finite_all(&field, &e.center)?;
            let outside = e
                .cross_section_boundary()
                .any(|(y, z)| y * y + (z - axis_z).powi(2) >= r2);
            if outside {
                return Err(Error::invalid(
                    field,
                    "lobe must lie strictly inside the neck cylinder",
                ));
            }
            if let Some(t) = &self.trachea {
                let [ty, tz] = t.center_yz;
                let center_inside = e.contains(&Vec3::new(e.center[0], ty, tz));
                let touches = e
                    .cross_section_boundary()
                    .any(|(y, z)| (y - ty).powi(2) + (z - tz).powi(2) <= t.radius * t.radius);
                if center_inside || touches {
                    return Err(Error::invalid(field, "lobe intersects the trachea"));
                }
            }
        }
        if let Some(b) = &self.isthmus {
            for (a, &e) in b.extents.iter().enumerate() {
                if !(e >= 0.0) || !e.is_finite() {
                    return Err(Error::invalid(
                        format!("isthmus.extents[{a}]"),
                        "must be >= 0 (0 disables the isthmus)",
                    ));
                }
            }
        }
        if let Some(t) = &self.trachea {
            positive("trachea.radius", t.radius)?;
        }
        Ok(())
    }

    /// Analytic tissue class of a point (no grid bounds applied).
    pub fn classify_analytic(&self, p: &Vec3) -> TissueClass {
        if self.lobes().any(|(_, e)| e.contains(p))
            || self.active_isthmus().is_some_and(|b| b.contains(p))
        {
            TissueClass::Thyroid
        } else if self.trachea.is_some_and(|t| t.contains(p)) {
            TissueClass::Trachea
        } else {
            TissueClass::Background
        }
    }

    /// Box holding all non-background tissue inside `grid`, padded slightly.
    fn tissue_bounds(&self, grid: &GridGeometry) -> (Vec3, Vec3) {
        const PAD: f64 = 1e-3;
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        let mut grow = |(a, b): (Vec3, Vec3)| {
            lo = lo.inf(&a);
            hi = hi.sup(&b);
        };
        for (_, e) in self.lobes() {
            grow(e.bounds());
        }
        if let Some(b) = self.active_isthmus() {
            grow(b.bounds());
        }
        if let Some(t) = &self.trachea {
            let [cy, cz] = t.center_yz;
            grow((
                Vec3::new(f64::NEG_INFINITY, cy - t.radius, cz - t.radius),
                Vec3::new(f64::INFINITY, cy + t.radius, cz + t.radius),
            ));
        }
        let lo = lo.sup(&grid.min_corner()) - Vec3::repeat(PAD);
        let hi = hi.inf(&grid.max_corner()) + Vec3::repeat(PAD);
        (lo, hi)
    }

    /// Bounding box of everything the grid must cover.
    fn grid_bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        let mut grow = |(a, b): (Vec3, Vec3)| {
            lo = lo.inf(&a);
            hi = hi.sup(&b);
        };
        for (_, e) in self.lobes() {
            grow(e.bounds());
        }
        if let Some(b) = self.active_isthmus() {
            grow(b.bounds());
        }
        let (x_lo, x_hi) = if lo.x.is_finite() {
            (lo.x - GRID_X_MARGIN, hi.x + GRID_X_MARGIN)
        } else {
            (-GRID_X_MARGIN, GRID_X_MARGIN)
        };
        let r = self.neck_radius;
        (Vec3::new(x_lo, -r, -2.0 * r), Vec3::new(x_hi, r, 0.0))
    }

    pub fn surface(&self) -> SurfaceField {
        SurfaceField::NeckCylinder {
            radius: self.neck_radius,
            axis_yz: [0.0, self.neck_axis_z()],
            half_width: SURFACE_REGION_FRAC * self.neck_radius,
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be > 0, got {v}")))
    }
}

fn finite_all(field: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(field, "non-finite coordinate"))
    }
}

/// Skin height `z = f(x, y)` over the scan region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurfaceField {
    /// Horizontal plane at `height`, usable for `|y| <= half_width`.
    Flat { height: f64, half_width: f64 },
    /// Upper half of a cylinder parallel to x.
    NeckCylinder {
        radius: f64,
        axis_yz: [f64; 2],
        half_width: f64,
    },
}

impl SurfaceField {
    fn lateral_offset(&self, y: f64) -> f64 {
        match *self {
            SurfaceField::Flat { .. } => y,
            SurfaceField::NeckCylinder { axis_yz, .. } => y - axis_yz[0],
        }
    }

    fn half_width(&self) -> f64 {
        match *self {
            SurfaceField::Flat { half_width, .. } | SurfaceField::NeckCylinder { half_width, .. } => {
                half_width
            }
        }
    }

    pub fn in_region(&self, y: f64) -> bool {
        self.lateral_offset(y).abs() <= self.half_width()
    }

    /// Surface height anywhere it is defined (possibly beyond the scan
    /// region); `None` where the skin does not exist above the point.
    pub fn height_unchecked(&self, _x: f64, y: f64) -> Option<f64> {
        match *self {
            SurfaceField::Flat { height, .. } => Some(height),
            SurfaceField::NeckCylinder {
                radius, axis_yz, ..
            } => {
                let d = y - axis_yz[0];
                let h2 = radius * radius - d * d;
                (h2 >= 0.0).then(|| axis_yz[1] + h2.sqrt())
            }
        }
    }

    pub fn height(&self, x: f64, y: f64) -> Result<f64> {
        if !self.in_region(y) {
            return Err(Error::OutsideSurface { x, y });
        }
        self.height_unchecked(x, y)
            .ok_or(Error::OutsideSurface { x, y })
    }

    /// Roll (radians, about +x) that takes the downward direction `-z` onto
    /// the inward surface normal at lateral position `y`.
    pub fn normal_roll(&self, y: f64) -> f64 {
        match *self {
            SurfaceField::Flat { .. } => 0.0,
            SurfaceField::NeckCylinder { radius, axis_yz, .. } => {
                -((y - axis_yz[0]) / radius).clamp(-1.0, 1.0).asin()
            }
        }
    }
}

/// Voxelized phantom. Immutable once built.
#[derive(Debug, Clone)]
pub struct PhantomModel {
    spec: PhantomSpec,
    labels: VoxelGrid<u8>,
    surface: SurfaceField,
    /// Box outside which every point is background.
    tissue_bounds: (Vec3, Vec3),
}

pub fn build_phantom(spec: PhantomSpec) -> Result<PhantomModel> {
    spec.validate()?;
    let (lo, hi) = spec.grid_bounds();
    let geometry = GridGeometry::covering(lo, hi, spec.voxel_pitch);
    let labels = VoxelGrid::from_fn(geometry, |i, j, k| {
        spec.classify_analytic(&geometry.center(i, j, k)) as u8
    });
    let surface = spec.surface();
    let tissue_bounds = spec.tissue_bounds(&geometry);
    Ok(PhantomModel {
        spec,
        labels,
        surface,
        tissue_bounds,
    })
}

impl PhantomModel {
    pub fn spec(&self) -> &PhantomSpec {
        &self.spec
    }

    pub fn labels(&self) -> &VoxelGrid<u8> {
        &self.labels
    }

    pub fn surface(&self) -> &SurfaceField {
        &self.surface
    }

    /// Tissue class at `p`; background outside the voxelized region.
    pub fn classify_point(&self, p: &Vec3) -> TissueClass {
        if self.labels.geometry().locate(p).is_none() {
            return TissueClass::Background;
        }
        self.spec.classify_analytic(p)
    }

    /// Parameter interval `[t0, t1]` within `[0, t_max]` where the ray
    /// `origin + t * dir` may meet non-background tissue.
    pub fn tissue_span(&self, origin: &Vec3, dir: &Vec3, t_max: f64) -> Option<(f64, f64)> {
        let (lo, hi) = &self.tissue_bounds;
        let (mut t0, mut t1) = (0.0f64, t_max);
        for a in 0..3 {
            if dir[a].abs() < 1e-12 {
                if origin[a] < lo[a] || origin[a] > hi[a] {
                    return None;
                }
                continue;
            }
            let (ta, tb) = ((lo[a] - origin[a]) / dir[a], (hi[a] - origin[a]) / dir[a]);
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
        (t0 <= t1).then_some((t0, t1))
    }

    pub fn thyroid_voxel_count(&self) -> usize {
        self.labels
            .as_slice()
            .iter()
            .filter(|&&v| v == TissueClass::Thyroid as u8)
            .count()
    }

    /// Ground-truth thyroid volume in ml from the voxel grid.
    pub fn ground_truth_volume(&self) -> f64 {
        self.labels.geometry().voxel_volume_mm3() * self.thyroid_voxel_count() as f64 / MM3_PER_ML
    }
}
