//! Per-lobe scan state machine with image-based pose adjustment.
//!
//! The probe steps along its initial scan axis. After every step the latest
//! frame drives two correction loops: a roll about the scan axis against
//! margin shadows, then a lateral translation that keeps the lobe in frame.
//! A lobe end is declared when some frame of the trailing presence window has
//! no thyroid label. The first end reverses the motion and starts recording;
//! the second end stops it.
//!
//! Time is simulated: frames arrive at the imaging frame rate while the probe
//! moves between commanded poses, and the recorded pose stream holds only the
//! commanded knots, so compounding has to interpolate.

use std::collections::VecDeque;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::image::{IntensityImage, LabelImage};
use crate::imaging::{
    contact_count, render_frame, settle_z, Frame, ImagingConfig, PoseRecord, ProbePose,
    SegOracleConfig,
};
use crate::phantom::{Lobe, PhantomModel};
use crate::rng::{derive, rng_from};
use crate::{compounding, Error, Mat3, Quat, Result, Vec3};

/// Timestamps closer than this are treated as equal, s.
const TIME_EPS: f64 = 1e-9;
/// Centering offsets below this many pixels count as resolved.
const CENTERING_DEADBAND_PX: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    /// Step along the scan axis, mm.
    pub step_size: f64,
    pub alpha_step: f64,
    pub alpha_max: f64,
    /// Lateral correction limit, mm.
    pub y_max: f64,
    pub shadow_margin_frac: f64,
    pub shadow_segments: usize,
    pub shadow_pixel_frac: f64,
    pub p_brightness: u8,
    pub border_frac: f64,
    pub target_edge_frac: f64,
    /// Trailing window for the thyroid presence test, s.
    pub presence_window: f64,
    pub max_total_steps: usize,
    pub max_centering_iterations: usize,
    pub shadow_correction: bool,
    pub centering: bool,
    /// Probe translation speed, mm/s.
    pub probe_speed: f64,
    /// Probe roll speed, deg/s.
    pub roll_speed: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            step_size: 5.0,
            alpha_step: 5.0,
            alpha_max: 30.0,
            y_max: 80.0,
            shadow_margin_frac: 0.05,
            shadow_segments: 8,
            shadow_pixel_frac: 0.90,
            p_brightness: 70,
            border_frac: 0.04,
            target_edge_frac: 0.06,
            presence_window: 1.0,
            max_total_steps: 200,
            max_centering_iterations: 8,
            shadow_correction: true,
            centering: true,
            probe_speed: 10.0,
            roll_speed: 30.0,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("scan.shadow_margin_frac", self.shadow_margin_frac),
            ("scan.border_frac", self.border_frac),
            ("scan.target_edge_frac", self.target_edge_frac),
        ] {
            if !(v > 0.0 && v < 0.5) {
                return Err(Error::invalid(name, format!("must be in (0, 0.5), got {v}")));
            }
        }
        for (name, v) in [
            ("scan.step_size", self.step_size),
            ("scan.alpha_step", self.alpha_step),
            ("scan.presence_window", self.presence_window),
            ("scan.probe_speed", self.probe_speed),
            ("scan.roll_speed", self.roll_speed),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be > 0, got {v}")));
            }
        }
        if !(self.alpha_step <= self.alpha_max) {
            return Err(Error::invalid("scan.alpha_step", "must not exceed alpha_max"));
        }
        if !(self.y_max >= 0.0) {
            return Err(Error::invalid("scan.y_max", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.shadow_pixel_frac) {
            return Err(Error::invalid("scan.shadow_pixel_frac", "must be in [0, 1]"));
        }
        if self.shadow_segments == 0 {
            return Err(Error::invalid("scan.shadow_segments", "must be > 0"));
        }
        if self.max_total_steps == 0 {
            return Err(Error::invalid("scan.max_total_steps", "must be > 0"));
        }
        Ok(())
    }

    /// Roll iterations allowed per adjustment call: enough to sweep the full
    /// `[-alpha_max, alpha_max]` range once.
    pub fn max_rotation_iterations(&self) -> usize {
        (2.0 * self.alpha_max / self.alpha_step).ceil() as usize + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShadowSide {
    None,
    Left,
    Right,
    Both,
}

/// Classifies the left/right image margins as shadowed.
///
/// Each margin is cut into `shadow_segments` blocks along depth; a side is
/// shadowed only if every block has at least `shadow_pixel_frac` of its pixels
/// darker than `p_brightness`.
pub fn detect_shadow_side(intensity: &IntensityImage, cfg: &ScanConfig) -> ShadowSide {
    let (w, h) = (intensity.width(), intensity.height());
    let margin = ((cfg.shadow_margin_frac * w as f64).round() as usize).clamp(1, w);
    let segments = cfg.shadow_segments.min(h).max(1);
    let side_dark = |cols: std::ops::Range<usize>| {
        (0..segments).all(|s| {
            let (r0, r1) = (s * h / segments, (s + 1) * h / segments);
            let mut dark = 0usize;
            let mut total = 0usize;
            for r in r0..r1 {
                for c in cols.clone() {
                    total += 1;
                    dark += usize::from(intensity.get(c, r) < cfg.p_brightness);
                }
            }
            dark as f64 >= cfg.shadow_pixel_frac * total as f64
        })
    };
    match (side_dark(0..margin), side_dark(w - margin..w)) {
        (false, false) => ShadowSide::None,
        (true, false) => ShadowSide::Left,
        (false, true) => ShadowSide::Right,
        (true, true) => ShadowSide::Both,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RotationOutcome {
    Rotated { alpha_corr: f64 },
    /// Clamping left the angle unchanged; the loop exits.
    Saturated,
    /// Both margins dark: no roll, warn the operator.
    BothSides,
    NoShadow,
}

/// One roll step of `sign * alpha_step`, clamped to `±alpha_max`.
pub fn rotation_step(alpha_corr: f64, sign: f64, cfg: &ScanConfig) -> RotationOutcome {
    let new = (alpha_corr + sign * cfg.alpha_step).clamp(-cfg.alpha_max, cfg.alpha_max);
    if new == alpha_corr {
        RotationOutcome::Saturated
    } else {
        RotationOutcome::Rotated { alpha_corr: new }
    }
}

/// Roll direction that lowers the lifted side: left shadow rolls positive.
pub fn default_roll_sign(side: ShadowSide) -> Option<f64> {
    match side {
        ShadowSide::Left => Some(1.0),
        ShadowSide::Right => Some(-1.0),
        ShadowSide::None | ShadowSide::Both => None,
    }
}

/// Rotation adjustment for a detected side, using the default roll direction.
pub fn rotation_adjustment(alpha_corr: f64, side: ShadowSide, cfg: &ScanConfig) -> RotationOutcome {
    match side {
        ShadowSide::None => RotationOutcome::NoShadow,
        ShadowSide::Both => RotationOutcome::BothSides,
        s => rotation_step(alpha_corr, default_roll_sign(s).unwrap(), cfg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenteringCase {
    /// Thyroid touches only the left border strip.
    LeftBorder,
    /// Thyroid touches only the right border strip.
    RightBorder,
    /// Thyroid touches both strips: center of mass to image center.
    BothBorders,
    /// Neither strip, or no thyroid at all.
    Clear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenteringOutcome {
    pub case: CenteringCase,
    /// Requested probe translation along its lateral axis, mm.
    pub offset: f64,
    /// New lateral correction if a move is due.
    pub y_corr: Option<f64>,
    /// The clamp swallowed the move.
    pub saturated: bool,
}

/// Lateral translation that keeps the lobe in frame.
///
/// A blob touching one border strip has its edge on that side moved to
/// `target_edge_frac` of the width from the border; a blob touching both
/// has its center of mass moved to the image center.
pub fn centering_adjustment(
    label: &LabelImage,
    y_corr: f64,
    cfg: &ScanConfig,
    imaging: &ImagingConfig,
) -> CenteringOutcome {
    let w = label.width();
    let wf = w as f64;
    let strip = ((cfg.border_frac * wf).round() as usize).clamp(1, w);
    let cols: Vec<usize> = (0..w).filter(|&c| label.column_has_label(c)).collect();
    let noop = |case| CenteringOutcome {
        case,
        offset: 0.0,
        y_corr: None,
        saturated: false,
    };
    let (Some(&c_min), Some(&c_max)) = (cols.first(), cols.last()) else {
        return noop(CenteringCase::Clear);
    };
    let left = c_min < strip;
    let right = c_max >= w - strip;
    let (case, shift_px) = match (left, right) {
        (true, false) => (CenteringCase::LeftBorder, cfg.target_edge_frac * wf - c_min as f64),
        (false, true) => (
            CenteringCase::RightBorder,
            (wf - cfg.target_edge_frac * wf) - (c_max + 1) as f64,
        ),
        (true, true) => {
            let (mut sum, mut n) = (0.0, 0usize);
            for r in 0..label.height() {
                for c in 0..w {
                    if label.get(c, r) != 0 {
                        sum += c as f64 + 0.5;
                        n += 1;
                    }
                }
            }
            (CenteringCase::BothBorders, 0.5 * wf - sum / n as f64)
        }
        (false, false) => return noop(CenteringCase::Clear),
    };
    if shift_px.abs() < CENTERING_DEADBAND_PX {
        return noop(case);
    }
    // Moving the probe by +d along its lateral axis shifts image content
    // toward higher columns by d / pixel pitch.
    let offset = shift_px * imaging.lateral_spacing();
    let new = (y_corr + offset).clamp(-cfg.y_max, cfg.y_max);
    CenteringOutcome {
        case,
        offset,
        y_corr: (new != y_corr).then_some(new),
        saturated: new == y_corr,
    }
}

/// Recent frames' thyroid content, keyed by timestamp.
#[derive(Debug, Clone, Default)]
pub struct FrameBuffer {
    entries: VecDeque<(f64, bool)>,
}

impl FrameBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, timestamp: f64, has_thyroid: bool) {
        self.entries.push_back((timestamp, has_thyroid));
    }

    pub fn push_frame(&mut self, frame: &Frame) {
        self.push(frame.timestamp, frame.has_thyroid());
    }

    /// Drops entries older than `window` before `now`.
    pub fn trim(&mut self, now: f64, window: f64) {
        while let Some(&(t, _)) = self.entries.front() {
            if t > now - window + TIME_EPS {
                break;
            }
            self.entries.pop_front();
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// True iff the window ending at `now` holds at least one frame and all of
/// them contain thyroid.
pub fn thyroid_present(buffer: &FrameBuffer, now: f64, cfg: &ScanConfig) -> bool {
    let mut recent = buffer
        .entries
        .iter()
        .filter(|(t, _)| *t > now - cfg.presence_window + TIME_EPS && *t <= now + TIME_EPS)
        .peekable();
    recent.peek().is_some() && recent.all(|&(_, present)| present)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    SeekFirstEnd,
    Recording,
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub r_init: Quat,
    pub t_init: Vec3,
    pub n_steps: i64,
    /// Roll correction, degrees.
    pub alpha_corr: f64,
    /// Lateral correction, mm.
    pub y_corr: f64,
    pub direction: i8,
    pub phase: Phase,
}

impl ControllerState {
    pub fn new(initial: &ProbePose) -> Self {
        Self {
            r_init: initial.rotation,
            t_init: initial.translation,
            n_steps: 0,
            alpha_corr: 0.0,
            y_corr: 0.0,
            direction: -1,
            phase: Phase::SeekFirstEnd,
        }
    }
}

/// Roll about the probe x axis by `alpha_deg`.
pub fn correction_rotation(alpha_deg: f64) -> Mat3 {
    let (s, c) = alpha_deg.to_radians().sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Commanded pose before surface settling.
///
/// The roll is expressed in the initial probe frame, so in world coordinates
/// it composes on the right of the initial orientation. Translation follows
/// `t_init + R_init [s * n_steps, y_corr, 0]`.
pub fn target_pose(state: &ControllerState, cfg: &ScanConfig) -> ProbePose {
    let r_corr = nalgebra::Rotation3::from_matrix_unchecked(correction_rotation(state.alpha_corr));
    let rotation = state.r_init * Quat::from_rotation_matrix(&r_corr);
    let offset = Vec3::new(cfg.step_size * state.n_steps as f64, state.y_corr, 0.0);
    ProbePose::new(rotation, state.t_init + state.r_init * offset, 0.0)
}

/// Frames and commanded poses captured between the two lobe ends.
#[derive(Debug, Clone)]
pub struct SweepRecording {
    pub lobe: Lobe,
    pub frames: Vec<Frame>,
    pub poses: Vec<ProbePose>,
    pub imaging: ImagingConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Dwell,
    Step,
    Reenter,
    Rotate,
    Translate,
    EndDetected,
    Warning,
}

/// One line of the scan event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanEvent {
    pub t: f64,
    pub phase: Phase,
    pub action: Action,
    pub n_steps: i64,
    pub alpha_corr: f64,
    pub y_corr: f64,
    pub pose: PoseRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shadow: Option<ShadowSide>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centering: Option<CenteringCase>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub present: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Where a lobe end was declared and the empty frame that triggered it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LobeEnd {
    pub detected_at: ProbePose,
    /// Pose of the most recent frame without thyroid, if any.
    pub empty_frame: Option<ProbePose>,
}

#[derive(Debug, Clone)]
pub struct ScanOutcome {
    pub recording: SweepRecording,
    pub events: Vec<ScanEvent>,
    /// The two lobe ends, in detection order.
    pub ends: Vec<LobeEnd>,
    pub total_steps: usize,
    pub warnings: usize,
    /// Number of frames rendered over the whole scan.
    pub frames_rendered: u64,
}

/// Configuration bundle for one scan.
#[derive(Debug, Clone, Copy)]
pub struct ScanSetup<'a> {
    pub model: &'a PhantomModel,
    pub imaging: &'a ImagingConfig,
    pub oracle: &'a SegOracleConfig,
    pub scan: &'a ScanConfig,
}

struct Scanner<'a> {
    setup: ScanSetup<'a>,
    lobe: Lobe,
    seed: u64,
    state: ControllerState,
    pose: ProbePose,
    clock: u64,
    buffer: FrameBuffer,
    last_frame: Option<Frame>,
    last_empty: Option<ProbePose>,
    recording: Option<(Vec<Frame>, Vec<ProbePose>)>,
    events: Vec<ScanEvent>,
    ends: Vec<LobeEnd>,
    total_steps: usize,
    warnings: usize,
}

impl<'a> Scanner<'a> {
    fn now(&self) -> f64 {
        self.clock as f64 / self.setup.imaging.frame_rate
    }

    fn settled_target(&self, state: &ControllerState) -> Result<ProbePose> {
        settle_z(
            &target_pose(state, self.setup.scan),
            self.setup.model.surface(),
            self.setup.imaging,
        )
    }

    /// Moves to `target` over at least `duration` seconds, acquiring frames
    /// at the frame rate along the way.
    fn move_to(&mut self, target: ProbePose, duration: f64) {
        let fps = self.setup.imaging.frame_rate;
        let n = ((duration * fps - TIME_EPS).ceil() as u64).max(1);
        let start = self.pose;
        for k in 1..=n {
            let u = k as f64 / n as f64;
            let t = (self.clock + k) as f64 / fps;
            let pose = ProbePose {
                rotation: compounding::slerp(&start.rotation, &target.rotation, u),
                translation: compounding::lerp(&start.translation, &target.translation, u),
                timestamp: t,
            };
            let mut rng = rng_from(derive(self.seed, self.clock + k));
            let frame = render_frame(&pose, self.setup.model, self.setup.imaging, self.setup.oracle, &mut rng);
            self.buffer.push_frame(&frame);
            if !frame.has_thyroid() {
                self.last_empty = Some(pose);
            }
            if let Some((frames, _)) = &mut self.recording {
                frames.push(frame.clone());
            }
            self.last_frame = Some(frame);
        }
        self.clock += n;
        self.pose = target.with_timestamp(self.now());
        if let Some((_, poses)) = &mut self.recording {
            poses.push(self.pose);
        }
        self.buffer
            .trim(self.now(), self.setup.scan.presence_window);
    }

    fn motion_duration(&self, target: &ProbePose) -> f64 {
        let scan = self.setup.scan;
        let dist = (target.translation - self.pose.translation).norm();
        let angle = self.pose.rotation.angle_to(&target.rotation).to_degrees();
        (dist / scan.probe_speed).max(angle / scan.roll_speed)
    }

    fn go(&mut self, state: ControllerState) -> Result<()> {
        let target = self.settled_target(&state)?;
        let duration = self.motion_duration(&target);
        self.state = state;
        self.check_clamps();
        self.move_to(target, duration);
        Ok(())
    }

    fn check_clamps(&self) {
        let s = &self.state;
        let cfg = self.setup.scan;
        assert!(
            s.alpha_corr.abs() <= cfg.alpha_max + 1e-12 && s.y_corr.abs() <= cfg.y_max + 1e-12,
            "correction clamp violated: alpha {} y {}",
            s.alpha_corr,
            s.y_corr
        );
    }

    fn log(&mut self, action: Action) -> &mut ScanEvent {
        self.events.push(ScanEvent {
            t: self.now(),
            phase: self.state.phase,
            action,
            n_steps: self.state.n_steps,
            alpha_corr: self.state.alpha_corr,
            y_corr: self.state.y_corr,
            pose: PoseRecord::from(&self.pose),
            shadow: None,
            centering: None,
            present: None,
            message: None,
        });
        self.events.last_mut().unwrap()
    }

    fn warn(&mut self, message: String) {
        warn!("{} lobe: {message}", self.lobe);
        self.warnings += 1;
        self.log(Action::Warning).message = Some(message);
    }

    fn present(&self) -> bool {
        thyroid_present(&self.buffer, self.now(), self.setup.scan)
    }

    fn step(&mut self, direction: i64) -> Result<()> {
        if self.total_steps >= self.setup.scan.max_total_steps {
            return Err(Error::StepLimit {
                lobe: self.lobe.to_string(),
                limit: self.setup.scan.max_total_steps,
            });
        }
        let mut next = self.state.clone();
        next.n_steps += direction;
        self.go(next)?;
        self.total_steps += 1;
        Ok(())
    }

    fn do_pose_adjustment(&mut self) {
        let scan = *self.setup.scan;
        if scan.shadow_correction {
            for _ in 0..scan.max_rotation_iterations() {
                let frame = self.last_frame.as_ref().expect("frame rendered");
                let side = detect_shadow_side(&frame.intensity, &scan);
                let Some(default_sign) = default_roll_sign(side) else {
                    if side == ShadowSide::Both {
                        self.warn("shadow on both sides, no rotation adjustment".into());
                    }
                    break;
                };
                let sign = self.roll_sign(default_sign);
                match rotation_step(self.state.alpha_corr, sign, &scan) {
                    RotationOutcome::Rotated { alpha_corr } => {
                        let mut next = self.state.clone();
                        next.alpha_corr = alpha_corr;
                        if let Err(e) = self.go(next) {
                            self.warn(format!("rotation blocked: {e}"));
                            break;
                        }
                        self.log(Action::Rotate).shadow = Some(side);
                    }
                    _ => {
                        self.warn(format!("rotation saturated at {} deg", self.state.alpha_corr));
                        break;
                    }
                }
            }
        }
        if scan.centering {
            for _ in 0..scan.max_centering_iterations {
                let frame = self.last_frame.as_ref().expect("frame rendered");
                let outcome =
                    centering_adjustment(&frame.label, self.state.y_corr, &scan, self.setup.imaging);
                if outcome.saturated {
                    self.warn(format!("lateral correction saturated at {} mm", self.state.y_corr));
                    break;
                }
                let Some(y_corr) = outcome.y_corr else {
                    break;
                };
                let mut next = self.state.clone();
                next.y_corr = y_corr;
                if let Err(e) = self.go(next) {
                    self.warn(format!("translation blocked: {e}"));
                    break;
                }
                self.log(Action::Translate).centering = Some(outcome.case);
            }
        }
    }

    /// Picks the roll direction that restores more contact; ties keep the
    /// default direction.
    fn roll_sign(&self, default_sign: f64) -> f64 {
        let surface = self.setup.model.surface();
        let contact_after = |sign: f64| {
            let mut s = self.state.clone();
            s.alpha_corr = (s.alpha_corr + sign * self.setup.scan.alpha_step)
                .clamp(-self.setup.scan.alpha_max, self.setup.scan.alpha_max);
            self.settled_target(&s)
                .map(|p| contact_count(&p, surface, self.setup.imaging))
                .unwrap_or(0)
        };
        if contact_after(-default_sign) > contact_after(default_sign) {
            -default_sign
        } else {
            default_sign
        }
    }

    fn move_until_end(&mut self, direction: i64) -> Result<()> {
        self.state.direction = direction as i8;
        while self.present() {
            self.step(direction)?;
            self.do_pose_adjustment();
            let present = self.present();
            self.log(Action::Step).present = Some(present);
        }
        self.log(Action::EndDetected).present = Some(false);
        self.ends.push(LobeEnd {
            detected_at: self.pose,
            empty_frame: self.last_empty,
        });
        Ok(())
    }
}

/// Scans one lobe from an operator-placed pose and returns the sweep recorded
/// between its two ends.
pub fn scan_lobe(initial: &ProbePose, lobe: Lobe, setup: ScanSetup<'_>, seed: u64) -> Result<ScanOutcome> {
    setup.scan.validate()?;
    setup.imaging.validate()?;
    setup.oracle.validate()?;
    let start = settle_z(initial, setup.model.surface(), setup.imaging)?.with_timestamp(0.0);
    let mut sc = Scanner {
        setup,
        lobe,
        seed,
        state: ControllerState::new(&start),
        pose: start,
        clock: 0,
        buffer: FrameBuffer::new(),
        last_frame: None,
        last_empty: None,
        recording: None,
        events: Vec::new(),
        ends: Vec::new(),
        total_steps: 0,
        warnings: 0,
    };

    // Frames stream in while the probe rests at the placement.
    sc.move_to(start, setup.scan.presence_window);
    sc.log(Action::Dwell);
    if sc.buffer.entries.iter().all(|&(_, present)| !present) {
        return Err(Error::NoThyroidAtStart {
            lobe: lobe.to_string(),
        });
    }

    sc.move_until_end(-1)?;

    sc.state.phase = Phase::Recording;
    sc.recording = Some((Vec::new(), vec![sc.pose]));
    // back into the thyroid, then let the presence window refill
    sc.step(1)?;
    sc.log(Action::Reenter);
    sc.move_to(sc.pose, setup.scan.presence_window);
    sc.log(Action::Dwell);
    sc.move_until_end(1)?;
    sc.state.phase = Phase::Done;

    let (frames, poses) = sc.recording.take().unwrap();
    Ok(ScanOutcome {
        recording: SweepRecording {
            lobe,
            frames,
            poses,
            imaging: *setup.imaging,
        },
        events: sc.events,
        ends: sc.ends,
        total_steps: sc.total_steps,
        warnings: sc.warnings,
        frames_rendered: sc.clock,
    })
}
