//! Versioned scenario files: every configuration needed for a reproducible
//! run, plus the initial probe placements and an optional perturbation
//! distribution for paired experiments.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::PipelineConfig;
use crate::compounding::CompoundingConfig;
use crate::controller::ScanConfig;
use crate::imaging::{ImagingConfig, ProbePose, SegOracleConfig};
use crate::phantom::{Lobe, PhantomSpec, SurfaceField};
use crate::rng::{derive, rng_from};
use crate::{Error, Quat, Result, Vec3};

pub const SCHEMA_VERSION: u32 = 1;

/// Operator placement of the probe over one lobe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialPose {
    /// Face center `[x, y]` on the skin, mm; the height comes from settling.
    pub position: [f64; 2],
    /// Roll away from the local surface normal, degrees.
    #[serde(default)]
    pub tilt_deg: f64,
}

impl InitialPose {
    /// Probe pose with the depth axis tilted `tilt_deg` from the inward
    /// surface normal and the scan axis along `+x`.
    pub fn to_pose(&self, surface: &SurfaceField) -> Result<ProbePose> {
        let [x, y] = self.position;
        let z = surface.height(x, y)?;
        let roll = std::f64::consts::PI + surface.normal_roll(y) + self.tilt_deg.to_radians();
        let rotation = Quat::from_axis_angle(&Vec3::x_axis(), roll);
        Ok(ProbePose::new(rotation, Vec3::new(x, y, z), 0.0))
    }

    fn offset(&self, dx: f64, dy: f64, dtilt: f64) -> Self {
        Self {
            position: [self.position[0] + dx, self.position[1] + dy],
            tilt_deg: self.tilt_deg + dtilt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialPoses {
    pub left: InitialPose,
    pub right: InitialPose,
}

impl InitialPoses {
    /// Probe centered over each lobe, aligned with the surface normal.
    pub fn centered(spec: &PhantomSpec) -> Self {
        let over = |lobe| {
            let c = spec.lobe(lobe).map(|e| e.center).unwrap_or([0.0; 3]);
            InitialPose {
                position: [c[0], c[1]],
                tilt_deg: 0.0,
            }
        };
        Self {
            left: over(Lobe::Left),
            right: over(Lobe::Right),
        }
    }

    pub fn get(&self, lobe: Lobe) -> &InitialPose {
        match lobe {
            Lobe::Left => &self.left,
            Lobe::Right => &self.right,
        }
    }

    pub fn to_poses(&self, surface: &SurfaceField) -> Result<[ProbePose; 2]> {
        Ok([self.left.to_pose(surface)?, self.right.to_pose(surface)?])
    }
}

/// Uniform perturbations around the nominal placements, drawn per run and
/// per lobe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Perturbation {
    /// Lateral offset range `±lateral_mm`.
    pub lateral_mm: f64,
    /// Tilt range `±tilt_deg`.
    pub tilt_deg: f64,
    /// Offset along the scan axis `±axial_mm`.
    pub axial_mm: f64,
    pub count: usize,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            lateral_mm: 10.0,
            tilt_deg: 10.0,
            axial_mm: 5.0,
            count: 30,
        }
    }
}

impl Perturbation {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("perturbation.lateral_mm", self.lateral_mm),
            ("perturbation.tilt_deg", self.tilt_deg),
            ("perturbation.axial_mm", self.axial_mm),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be >= 0, got {v}")));
            }
        }
        if self.count < 2 {
            return Err(Error::invalid("perturbation.count", "must be >= 2"));
        }
        Ok(())
    }

    /// `count` perturbed copies of `nominal`. Run `i` draws from its own
    /// stream, so changing `count` leaves earlier runs unchanged.
    pub fn sample(&self, nominal: &InitialPoses, seed: u64) -> Vec<InitialPoses> {
        (0..self.count as u64)
            .map(|i| {
                let mut rng = rng_from(derive(seed, i));
                let mut draw = |p: &InitialPose| {
                    let dx = symmetric(&mut rng, self.axial_mm);
                    let dy = symmetric(&mut rng, self.lateral_mm);
                    let dt = symmetric(&mut rng, self.tilt_deg);
                    p.offset(dx, dy, dt)
                };
                let left = draw(&nominal.left);
                let right = draw(&nominal.right);
                InitialPoses { left, right }
            })
            .collect()
    }
}

fn symmetric(rng: &mut impl Rng, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub phantom: PhantomSpec,
    #[serde(default)]
    pub imaging: ImagingConfig,
    #[serde(default)]
    pub oracle: SegOracleConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub compounding: CompoundingConfig,
    /// Defaults to the probe centered over each lobe.
    #[serde(default)]
    pub initial_poses: Option<InitialPoses>,
    #[serde(default)]
    pub perturbation: Option<Perturbation>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        let phantom = PhantomSpec::default();
        Self {
            schema_version: SCHEMA_VERSION,
            initial_poses: Some(InitialPoses::centered(&phantom)),
            phantom,
            imaging: ImagingConfig::default(),
            oracle: SegOracleConfig::default(),
            scan: ScanConfig::default(),
            compounding: CompoundingConfig::default(),
            perturbation: None,
            seed: 0,
        }
    }
}

impl Scenario {
    /// The default scenario with the standard perturbation enabled.
    pub fn perturbed() -> Self {
        Self {
            perturbation: Some(Perturbation::default()),
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        self.phantom.validate()?;
        self.imaging.validate()?;
        self.oracle.validate()?;
        self.scan.validate()?;
        self.compounding.validate()?;
        if let Some(p) = &self.perturbation {
            p.validate()?;
        }
        Ok(())
    }

    pub fn initial_poses(&self) -> InitialPoses {
        self.initial_poses
            .unwrap_or_else(|| InitialPoses::centered(&self.phantom))
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            imaging: self.imaging,
            oracle: self.oracle,
            scan: self.scan,
            compounding: self.compounding,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("scenario serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
