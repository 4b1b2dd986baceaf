//! Scenario configuration and its text format.
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! [segments]
//! straight length=420 speed_kmh=70
//! clothoid length=40 curvature=0.008333 speed_kmh=60
//! arc radius=120 angle_deg=70.9 speed_kmh=60
//! ```
//!
//! Values given in a file override the defaults; a `[segments]` section
//! replaces the default track entirely. [`ScenarioConfig::to_text`] prints
//! every field and parses back to an identical configuration.

use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::estimation::Order;
use crate::plant::{ActuatorLimits, VehicleParams, WheelSpeedPolicy};

use super::reference::DriverSettings;
use super::track::{Segment, TrackSpec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ConfigError {
    /// 1-based line of the offending entry, when there is one.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

fn err_at(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError { line: Some(line), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ControllerKind {
    Flatness,
    MfcFlat,
    MfcNatural,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] =
        [ControllerKind::Flatness, ControllerKind::MfcFlat, ControllerKind::MfcNatural];

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::Flatness => "flatness",
            ControllerKind::MfcFlat => "mfc-flat",
            ControllerKind::MfcNatural => "mfc-natural",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown controller '{s}' (expected flatness, mfc-flat or mfc-natural)"))
    }
}

/// Cornering-stiffness scaling of the simulated plant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub cf_scale: f64,
    pub cr_scale: f64,
}

impl Perturbation {
    pub const NONE: Perturbation = Perturbation { cf_scale: 1.0, cr_scale: 1.0 };

    pub fn is_nominal(&self) -> bool {
        *self == Self::NONE
    }

    /// `nominal`, or e.g. `cf=0.3 cr=0.3`.
    pub fn label(&self) -> String {
        if self.is_nominal() {
            "nominal".into()
        } else {
            format!("cf={} cr={}", self.cf_scale, self.cr_scale)
        }
    }

    fn parse(text: &str) -> Result<Self, String> {
        let mut p = Self::NONE;
        for token in text.split_whitespace() {
            let (k, v) = token
                .split_once('=')
                .ok_or_else(|| format!("expected key=value in perturbation, found '{token}'"))?;
            let value = parse_f64(v)?;
            if !(value > 0.0) {
                return Err(format!("perturbation scale {k} must be positive"));
            }
            match k {
                "cf" => p.cf_scale = value,
                "cr" => p.cr_scale = value,
                _ => return Err(format!("unknown perturbation key '{k}' (expected cf or cr)")),
            }
        }
        Ok(p)
    }
}

/// Standard deviations of the controller-visible measurement noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub speed: f64,
    pub lateral_speed: f64,
    pub yaw_rate: f64,
    pub lateral_deviation: f64,
}

impl NoiseConfig {
    pub const ZERO: NoiseConfig =
        NoiseConfig { speed: 0.0, lateral_speed: 0.0, yaw_rate: 0.0, lateral_deviation: 0.0 };
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { speed: 0.05, lateral_speed: 0.02, yaw_rate: 0.005, lateral_deviation: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatnessSettings {
    /// Double pole of the speed loop.
    pub longitudinal_pole: f64,
    /// Triple pole of the `y2` loop.
    pub lateral_pole: f64,
}

impl Default for FlatnessSettings {
    fn default() -> Self {
        Self { longitudinal_pole: 2.0, lateral_pole: 3.0 }
    }
}

/// One intelligent loop: ultra-local model gain and feedback gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopSettings {
    pub alpha: f64,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfcFlatSettings {
    pub span: f64,
    pub longitudinal: LoopSettings,
    pub lateral: LoopSettings,
}

impl Default for MfcFlatSettings {
    fn default() -> Self {
        Self {
            span: 0.01,
            longitudinal: LoopSettings { alpha: 1.0 / 450.0, kp: 2.0, ki: 1.0, kd: 0.0 },
            lateral: LoopSettings { alpha: -3.5e5, kp: 5.0, ki: 40.0, kd: 0.0 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfcNaturalSettings {
    pub span: f64,
    pub derivative_span: f64,
    pub longitudinal: LoopSettings,
    pub lateral: LoopSettings,
}

impl Default for MfcNaturalSettings {
    fn default() -> Self {
        Self {
            span: 0.1,
            derivative_span: 0.1,
            longitudinal: LoopSettings { alpha: 1.0 / 450.0, kp: 2.0, ki: 0.0, kd: 0.0 },
            lateral: LoopSettings { alpha: 20.0, kp: 12.0, ki: 0.0, kd: 7.0 },
        }
    }
}

/// Settings of the offline estimator check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateSettings {
    pub span: f64,
    pub alpha: f64,
    pub order: Order,
}

impl Default for EstimateSettings {
    fn default() -> Self {
        Self { span: 0.05, alpha: 1.0, order: Order::First }
    }
}

/// Track piece in file units (km/h, degrees).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentSpec {
    Straight { length: f64, speed_kmh: f64 },
    Arc { radius: f64, angle_deg: f64, speed_kmh: f64 },
    Clothoid { length: f64, curvature: f64, speed_kmh: f64 },
}

impl SegmentSpec {
    pub fn to_segment(&self) -> Segment {
        match *self {
            SegmentSpec::Straight { length, speed_kmh } => {
                Segment::Straight { length, speed: speed_kmh / 3.6 }
            }
            SegmentSpec::Arc { radius, angle_deg, speed_kmh } => Segment::Arc {
                radius,
                angle: angle_deg * PI / 180.0,
                speed: speed_kmh / 3.6,
            },
            SegmentSpec::Clothoid { length, curvature, speed_kmh } => {
                Segment::Clothoid { length, curvature, speed: speed_kmh / 3.6 }
            }
        }
    }

    fn to_line(self) -> String {
        match self {
            SegmentSpec::Straight { length, speed_kmh } => {
                format!("straight length={length} speed_kmh={speed_kmh}")
            }
            SegmentSpec::Arc { radius, angle_deg, speed_kmh } => {
                format!("arc radius={radius} angle_deg={angle_deg} speed_kmh={speed_kmh}")
            }
            SegmentSpec::Clothoid { length, curvature, speed_kmh } => {
                format!("clothoid length={length} curvature={curvature} speed_kmh={speed_kmh}")
            }
        }
    }

    fn parse(text: &str) -> Result<Self, String> {
        let mut tokens = text.split_whitespace();
        let kind = tokens.next().ok_or("empty segment")?;
        let mut fields: Vec<(&str, f64)> = Vec::new();
        for token in tokens {
            let (k, v) = token
                .split_once('=')
                .ok_or_else(|| format!("expected key=value in segment, found '{token}'"))?;
            fields.push((k, parse_f64(v)?));
        }
        let allowed: &[&str] = match kind {
            "straight" => &["length", "speed_kmh"],
            "arc" => &["radius", "angle_deg", "speed_kmh"],
            "clothoid" => &["length", "curvature", "speed_kmh"],
            _ => return Err(format!("unknown segment kind '{kind}' (expected straight, arc or clothoid)")),
        };
        if let Some((k, _)) = fields.iter().find(|(k, _)| !allowed.contains(k)) {
            return Err(format!("unknown {kind} field '{k}'"));
        }
        let get = |name: &str| -> Result<f64, String> {
            fields
                .iter()
                .rev()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| format!("{kind} segment needs {name}="))
        };
        Ok(match kind {
            "straight" => SegmentSpec::Straight { length: get("length")?, speed_kmh: get("speed_kmh")? },
            "arc" => SegmentSpec::Arc {
                radius: get("radius")?,
                angle_deg: get("angle_deg")?,
                speed_kmh: get("speed_kmh")?,
            },
            _ => SegmentSpec::Clothoid {
                length: get("length")?,
                curvature: get("curvature")?,
                speed_kmh: get("speed_kmh")?,
            },
        })
    }
}

/// Default circuit of about 2 km: 70 km/h straights, two R = 120 m bends at
/// 60 km/h, R = 50 m hairpins at 40 and 30 km/h, every corner entered and
/// left through 40 m clothoids.
pub fn default_segments() -> Vec<SegmentSpec> {
    let corner = |radius: f64, speed_kmh: f64, out: &mut Vec<SegmentSpec>| {
        let lc = 40.0;
        let arc_deg = 90.0 - (lc / radius) * 180.0 / PI;
        out.push(SegmentSpec::Clothoid { length: lc, curvature: 1.0 / radius, speed_kmh });
        out.push(SegmentSpec::Arc { radius, angle_deg: arc_deg, speed_kmh });
        out.push(SegmentSpec::Clothoid { length: lc, curvature: 0.0, speed_kmh });
    };
    let mut segs = vec![SegmentSpec::Straight { length: 420.0, speed_kmh: 70.0 }];
    corner(120.0, 60.0, &mut segs);
    segs.push(SegmentSpec::Straight { length: 140.0, speed_kmh: 60.0 });
    corner(120.0, 60.0, &mut segs);
    segs.push(SegmentSpec::Straight { length: 420.0, speed_kmh: 70.0 });
    corner(50.0, 40.0, &mut segs);
    // closes the loop: the R = 50 m corners are 2 * 69.3 m shorter in reach
    segs.push(SegmentSpec::Straight { length: 278.6339, speed_kmh: 50.0 });
    corner(50.0, 30.0, &mut segs);
    segs
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackSettings {
    pub ds: f64,
    pub speed_blend: f64,
    pub start_heading_deg: f64,
    /// Off-track threshold on the lateral deviation (m).
    pub corridor: f64,
    pub segments: Vec<SegmentSpec>,
}

impl Default for TrackSettings {
    fn default() -> Self {
        Self {
            ds: 0.25,
            speed_blend: 120.0,
            start_heading_deg: 0.0,
            corridor: 20.0,
            segments: default_segments(),
        }
    }
}

impl TrackSettings {
    pub fn to_spec(&self) -> TrackSpec {
        TrackSpec {
            segments: self.segments.iter().map(SegmentSpec::to_segment).collect(),
            ds: self.ds,
            speed_blend: self.speed_blend,
            start_heading: self.start_heading_deg * PI / 180.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WheelModel {
    QuasiStatic,
    Dynamic,
}

/// Everything needed to run one scenario or a comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub controller: ControllerKind,
    pub dt: f64,
    /// Simulated time in seconds; `0` runs to the end of the track.
    pub duration: f64,
    pub seed: u64,
    pub params: VehicleParams<f64>,
    pub perturbation: Perturbation,
    pub wheel_model: WheelModel,
    pub slip_stiffness: f64,
    pub torque_max: f64,
    pub steer_max_deg: f64,
    pub noise: NoiseConfig,
    pub flatness: FlatnessSettings,
    pub mfc_flat: MfcFlatSettings,
    pub mfc_natural: MfcNaturalSettings,
    pub driver: DriverSettings,
    pub track: TrackSettings,
    pub compare_perturbations: Vec<Perturbation>,
    pub estimate: EstimateSettings,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            controller: ControllerKind::MfcNatural,
            dt: 1e-3,
            duration: 0.0,
            seed: 42,
            params: VehicleParams::nominal(),
            perturbation: Perturbation::NONE,
            wheel_model: WheelModel::QuasiStatic,
            slip_stiffness: 1.0e5,
            torque_max: 1500.0,
            steer_max_deg: 30.0,
            noise: NoiseConfig::default(),
            flatness: FlatnessSettings::default(),
            mfc_flat: MfcFlatSettings::default(),
            mfc_natural: MfcNaturalSettings::default(),
            driver: DriverSettings::default(),
            track: TrackSettings::default(),
            compare_perturbations: vec![Perturbation { cf_scale: 0.3, cr_scale: 0.3 }],
            estimate: EstimateSettings::default(),
        }
    }
}

fn parse_f64(v: &str) -> Result<f64, String> {
    let x: f64 = v.trim().parse().map_err(|_| format!("'{}' is not a number", v.trim()))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("'{}' is not finite", v.trim()))
    }
}

fn parse_positive(v: &str) -> Result<f64, String> {
    let x = parse_f64(v)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(format!("{x} must be strictly positive"))
    }
}

fn parse_non_negative(v: &str) -> Result<f64, String> {
    let x = parse_f64(v)?;
    if x >= 0.0 {
        Ok(x)
    } else {
        Err(format!("{x} must be non-negative"))
    }
}

impl ScenarioConfig {
    pub fn limits(&self) -> ActuatorLimits<f64> {
        ActuatorLimits::new(self.torque_max, self.steer_max_deg * PI / 180.0)
    }

    pub fn wheel_policy(&self) -> WheelSpeedPolicy<f64> {
        match self.wheel_model {
            WheelModel::QuasiStatic => WheelSpeedPolicy::QuasiStatic,
            WheelModel::Dynamic => WheelSpeedPolicy::Dynamic { slip_stiffness: self.slip_stiffness },
        }
    }

    /// Parameters of the simulated plant (nominal ones scaled by the
    /// perturbation).
    pub fn plant_params(&self) -> Result<VehicleParams<f64>, crate::plant::PlantError> {
        self.params.perturbed(self.perturbation.cf_scale, self.perturbation.cr_scale)
    }

    /// Longest estimator window of the intelligent controllers.
    pub fn max_span(&self) -> f64 {
        self.mfc_flat.span.max(self.mfc_natural.span).max(self.mfc_natural.derivative_span)
    }

    /// Time before which metrics are not accumulated.
    pub fn warmup(&self) -> f64 {
        3.0 * self.max_span()
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut section: Option<String> = None;
        let mut segments: Option<Vec<SegmentSpec>> = None;
        let mut section_lines: Vec<(String, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err_at(line_no, format!("malformed section header '{line}'")))?
                    .trim()
                    .to_string();
                if !SECTIONS.contains(&name.as_str()) {
                    return Err(err_at(line_no, format!("unknown section [{name}]")));
                }
                if name == "segments" {
                    segments = Some(Vec::new());
                }
                section_lines.push((name.clone(), line_no));
                section = Some(name);
                continue;
            }
            let Some(sec) = section.as_deref() else {
                return Err(err_at(line_no, "entry outside of any [section]"));
            };
            if sec == "segments" {
                let seg = SegmentSpec::parse(line).map_err(|m| err_at(line_no, m))?;
                segments.get_or_insert_with(Vec::new).push(seg);
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err_at(line_no, format!("expected 'key = value', found '{line}'")))?;
            cfg.set(sec, key.trim(), value.trim())
                .map_err(|m| err_at(line_no, format!("[{sec}] {}: {m}", key.trim())))?;
        }
        if let Some(segs) = segments {
            if segs.is_empty() {
                let line = section_lines.iter().rev().find(|(n, _)| n == "segments").map(|(_, l)| *l);
                return Err(ConfigError { line, message: "[segments] is empty".into() });
            }
            cfg.track.segments = segs;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<(), String> {
        let unknown = || Err(format!("unknown key '{key}'"));
        match section {
            "scenario" => match key {
                "controller" => self.controller = v.parse()?,
                "dt" => self.dt = parse_positive(v)?,
                "duration" => self.duration = parse_non_negative(v)?,
                "seed" => self.seed = v.parse().map_err(|_| format!("'{v}' is not an unsigned integer"))?,
                _ => return unknown(),
            },
            "plant" => {
                let p = &mut self.params;
                match key {
                    "m" => p.m = parse_positive(v)?,
                    "iz" => p.iz = parse_positive(v)?,
                    "ir" => p.ir = parse_positive(v)?,
                    "lf" => p.lf = parse_positive(v)?,
                    "lr" => p.lr = parse_positive(v)?,
                    "cf" => p.cf = parse_positive(v)?,
                    "cr" => p.cr = parse_positive(v)?,
                    "r" => p.r = parse_positive(v)?,
                    "g" => p.g = parse_positive(v)?,
                    "cf_scale" => self.perturbation.cf_scale = parse_positive(v)?,
                    "cr_scale" => self.perturbation.cr_scale = parse_positive(v)?,
                    "wheel_model" => {
                        self.wheel_model = match v {
                            "quasi-static" => WheelModel::QuasiStatic,
                            "dynamic" => WheelModel::Dynamic,
                            _ => return Err(format!("'{v}' is not quasi-static or dynamic")),
                        }
                    }
                    "slip_stiffness" => self.slip_stiffness = parse_positive(v)?,
                    _ => return unknown(),
                }
            }
            "limits" => match key {
                "torque_max" => self.torque_max = parse_positive(v)?,
                "steer_max_deg" => self.steer_max_deg = parse_positive(v)?,
                _ => return unknown(),
            },
            "noise" => {
                let n = &mut self.noise;
                let slot = match key {
                    "speed" => &mut n.speed,
                    "lateral_speed" => &mut n.lateral_speed,
                    "yaw_rate" => &mut n.yaw_rate,
                    "lateral_deviation" => &mut n.lateral_deviation,
                    _ => return unknown(),
                };
                *slot = parse_non_negative(v)?;
            }
            "flatness" => match key {
                "longitudinal_pole" => self.flatness.longitudinal_pole = parse_positive(v)?,
                "lateral_pole" => self.flatness.lateral_pole = parse_positive(v)?,
                _ => return unknown(),
            },
            "mfc_flat" => {
                let s = &mut self.mfc_flat;
                match key {
                    "span" => s.span = parse_positive(v)?,
                    _ => return set_loop_key(key, v, &mut s.longitudinal, &mut s.lateral),
                }
            }
            "mfc_natural" => {
                let s = &mut self.mfc_natural;
                match key {
                    "span" => s.span = parse_positive(v)?,
                    "derivative_span" => s.derivative_span = parse_positive(v)?,
                    _ => return set_loop_key(key, v, &mut s.longitudinal, &mut s.lateral),
                }
            }
            "driver" => {
                let d = &mut self.driver;
                match key {
                    "lateral_bandwidth" => d.lateral_bandwidth = parse_positive(v)?,
                    "lateral_damping" => d.lateral_damping = parse_positive(v)?,
                    "speed_kp" => d.speed_kp = parse_non_negative(v)?,
                    "speed_ki" => d.speed_ki = parse_non_negative(v)?,
                    "preview" => d.preview = parse_non_negative(v)?,
                    _ => return unknown(),
                }
            }
            "track" => match key {
                "ds" => self.track.ds = parse_positive(v)?,
                "speed_blend" => self.track.speed_blend = parse_non_negative(v)?,
                "start_heading_deg" => self.track.start_heading_deg = parse_f64(v)?,
                "corridor" => self.track.corridor = parse_positive(v)?,
                _ => return unknown(),
            },
            "compare" => match key {
                "perturbations" => {
                    self.compare_perturbations = v
                        .split(';')
                        .map(str::trim)
                        .filter(|p| !p.is_empty())
                        .map(Perturbation::parse)
                        .collect::<Result<_, _>>()?;
                }
                _ => return unknown(),
            },
            "estimate" => match key {
                "span" => self.estimate.span = parse_positive(v)?,
                "alpha" => self.estimate.alpha = parse_f64(v)?,
                "order" => {
                    let nu: u32 = v.parse().map_err(|_| format!("'{v}' is not 1 or 2"))?;
                    self.estimate.order = Order::from_nu(nu).map_err(|e| e.to_string())?;
                }
                _ => return unknown(),
            },
            _ => return unknown(),
        }
        Ok(())
    }

    /// Cross-field checks that a single entry cannot catch.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError { line: None, message: m });
        if let Err(e) = self.plant_params() {
            return fail(format!("[plant] {e}"));
        }
        for (name, l) in [
            ("mfc_flat longitudinal", &self.mfc_flat.longitudinal),
            ("mfc_flat lateral", &self.mfc_flat.lateral),
            ("mfc_natural longitudinal", &self.mfc_natural.longitudinal),
            ("mfc_natural lateral", &self.mfc_natural.lateral),
        ] {
            if l.alpha == 0.0 {
                return fail(format!("{name}: alpha must be nonzero"));
            }
        }
        if self.estimate.alpha == 0.0 {
            return fail("[estimate] alpha must be nonzero".into());
        }
        let mut spans = vec![self.mfc_flat.span, self.mfc_natural.span, self.mfc_natural.derivative_span];
        spans.push(self.estimate.span);
        for span in spans {
            if span < 10.0 * self.dt - 1e-9 {
                return fail(format!("estimator span {span} s must cover at least 10 steps of dt = {}", self.dt));
            }
        }
        Ok(())
    }

    /// Full configuration in the file format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let p = &self.params;
        let w = &mut out;
        let _ = writeln!(w, "[scenario]");
        let _ = writeln!(w, "controller = {}", self.controller);
        let _ = writeln!(w, "dt = {}", self.dt);
        let _ = writeln!(w, "duration = {}", self.duration);
        let _ = writeln!(w, "seed = {}", self.seed);
        let _ = writeln!(w, "\n[plant]");
        for (k, v) in [
            ("m", p.m),
            ("iz", p.iz),
            ("ir", p.ir),
            ("lf", p.lf),
            ("lr", p.lr),
            ("cf", p.cf),
            ("cr", p.cr),
            ("r", p.r),
            ("g", p.g),
            ("cf_scale", self.perturbation.cf_scale),
            ("cr_scale", self.perturbation.cr_scale),
        ] {
            let _ = writeln!(w, "{k} = {v}");
        }
        let model = match self.wheel_model {
            WheelModel::QuasiStatic => "quasi-static",
            WheelModel::Dynamic => "dynamic",
        };
        let _ = writeln!(w, "wheel_model = {model}");
        let _ = writeln!(w, "slip_stiffness = {}", self.slip_stiffness);
        let _ = writeln!(w, "\n[limits]");
        let _ = writeln!(w, "torque_max = {}", self.torque_max);
        let _ = writeln!(w, "steer_max_deg = {}", self.steer_max_deg);
        let n = &self.noise;
        let _ = writeln!(w, "\n[noise]");
        let _ = writeln!(w, "speed = {}", n.speed);
        let _ = writeln!(w, "lateral_speed = {}", n.lateral_speed);
        let _ = writeln!(w, "yaw_rate = {}", n.yaw_rate);
        let _ = writeln!(w, "lateral_deviation = {}", n.lateral_deviation);
        let _ = writeln!(w, "\n[flatness]");
        let _ = writeln!(w, "longitudinal_pole = {}", self.flatness.longitudinal_pole);
        let _ = writeln!(w, "lateral_pole = {}", self.flatness.lateral_pole);
        let _ = writeln!(w, "\n[mfc_flat]");
        let _ = writeln!(w, "span = {}", self.mfc_flat.span);
        write_loops(w, &self.mfc_flat.longitudinal, &self.mfc_flat.lateral);
        let _ = writeln!(w, "\n[mfc_natural]");
        let _ = writeln!(w, "span = {}", self.mfc_natural.span);
        let _ = writeln!(w, "derivative_span = {}", self.mfc_natural.derivative_span);
        write_loops(w, &self.mfc_natural.longitudinal, &self.mfc_natural.lateral);
        let d = &self.driver;
        let _ = writeln!(w, "\n[driver]");
        let _ = writeln!(w, "lateral_bandwidth = {}", d.lateral_bandwidth);
        let _ = writeln!(w, "lateral_damping = {}", d.lateral_damping);
        let _ = writeln!(w, "speed_kp = {}", d.speed_kp);
        let _ = writeln!(w, "speed_ki = {}", d.speed_ki);
        let _ = writeln!(w, "preview = {}", d.preview);
        let _ = writeln!(w, "\n[track]");
        let _ = writeln!(w, "ds = {}", self.track.ds);
        let _ = writeln!(w, "speed_blend = {}", self.track.speed_blend);
        let _ = writeln!(w, "start_heading_deg = {}", self.track.start_heading_deg);
        let _ = writeln!(w, "corridor = {}", self.track.corridor);
        let _ = writeln!(w, "\n[compare]");
        let perts: Vec<String> = self.compare_perturbations.iter().map(Perturbation::label).collect();
        let _ = writeln!(w, "perturbations = {}", perts.join("; "));
        let _ = writeln!(w, "\n[estimate]");
        let _ = writeln!(w, "span = {}", self.estimate.span);
        let _ = writeln!(w, "alpha = {}", self.estimate.alpha);
        let _ = writeln!(w, "order = {}", self.estimate.order.nu());
        let _ = writeln!(w, "\n[segments]");
        for s in &self.track.segments {
            let _ = writeln!(w, "{}", s.to_line());
        }
        out
    }
}

const SECTIONS: [&str; 12] = [
    "scenario",
    "plant",
    "limits",
    "noise",
    "flatness",
    "mfc_flat",
    "mfc_natural",
    "driver",
    "track",
    "compare",
    "estimate",
    "segments",
];

fn set_loop_key(
    key: &str,
    v: &str,
    longitudinal: &mut LoopSettings,
    lateral: &mut LoopSettings,
) -> Result<(), String> {
    let (name, channel) = key.split_at(key.len().saturating_sub(1));
    let target = match channel {
        "1" => longitudinal,
        "2" => lateral,
        _ => return Err(format!("unknown key '{key}'")),
    };
    match name {
        "alpha" => target.alpha = parse_f64(v)?,
        "kp" => target.kp = parse_non_negative(v)?,
        "ki" => target.ki = parse_non_negative(v)?,
        "kd" => target.kd = parse_non_negative(v)?,
        _ => return Err(format!("unknown key '{key}'")),
    }
    Ok(())
}

fn write_loops(w: &mut String, longitudinal: &LoopSettings, lateral: &LoopSettings) {
    for (i, l) in [(1, longitudinal), (2, lateral)] {
        let _ = writeln!(w, "alpha{i} = {}", l.alpha);
        let _ = writeln!(w, "kp{i} = {}", l.kp);
        let _ = writeln!(w, "ki{i} = {}", l.ki);
        let _ = writeln!(w, "kd{i} = {}", l.kd);
    }
}
