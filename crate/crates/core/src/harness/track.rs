//! Synthetic tracks built from straights, circular arcs and clothoids, with a
//! smoothed speed profile and closest-point projection.

use std::f64::consts::PI;

use super::HarnessError;

/// Curvature mismatch tolerated at a joint (1/m).
pub const JOINT_TOL: f64 = 1e-9;

/// One piece of a track. Curvature is signed, positive turning left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    Straight {
        length: f64,
        speed: f64,
    },
    /// Constant radius, `angle` in radians (positive = left turn).
    Arc {
        radius: f64,
        angle: f64,
        speed: f64,
    },
    /// Linear curvature ramp from the previous segment's end curvature to
    /// `curvature`.
    Clothoid {
        length: f64,
        curvature: f64,
        speed: f64,
    },
}

impl Segment {
    pub fn kind(&self) -> &'static str {
        match self {
            Segment::Straight { .. } => "straight",
            Segment::Arc { .. } => "arc",
            Segment::Clothoid { .. } => "clothoid",
        }
    }

    pub fn speed(&self) -> f64 {
        match *self {
            Segment::Straight { speed, .. }
            | Segment::Arc { speed, .. }
            | Segment::Clothoid { speed, .. } => speed,
        }
    }

    pub fn length(&self) -> f64 {
        match *self {
            Segment::Straight { length, .. } | Segment::Clothoid { length, .. } => length,
            Segment::Arc { radius, angle, .. } => radius * angle.abs(),
        }
    }

    fn start_curvature(&self, previous_end: f64) -> f64 {
        match *self {
            Segment::Straight { .. } => 0.0,
            Segment::Arc { radius, angle, .. } => angle.signum() / radius,
            Segment::Clothoid { .. } => previous_end,
        }
    }

    fn end_curvature(&self, previous_end: f64) -> f64 {
        match *self {
            Segment::Clothoid { curvature, .. } => curvature,
            _ => self.start_curvature(previous_end),
        }
    }

    /// Heading change produced by the segment.
    pub fn turn(&self, previous_end: f64) -> f64 {
        0.5 * self.length() * (self.start_curvature(previous_end) + self.end_curvature(previous_end))
    }
}

/// Geometry and sampling options of a track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSpec {
    pub segments: Vec<Segment>,
    /// Arc-length sampling step (m).
    pub ds: f64,
    /// Length over which speed changes are spread (m).
    pub speed_blend: f64,
    pub start_heading: f64,
}

/// Piece of the path with its curvature law `k(s) = k0 + k1 (s - s0)`.
#[derive(Debug, Clone, Copy)]
struct Piece {
    s0: f64,
    k0: f64,
    k1: f64,
    psi0: f64,
}

/// Sampled path on a uniform arc-length grid.
#[derive(Debug, Clone)]
pub struct Track {
    spec: TrackSpec,
    pieces: Vec<Piece>,
    length: f64,
    step: f64,
    s: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    psi: Vec<f64>,
    kappa: Vec<f64>,
    speed: Vec<f64>,
    speed_slope: Vec<f64>,
}

/// A point of the path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub kappa: f64,
}

/// Result of projecting a position on the path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub s: f64,
    /// Signed perpendicular distance, positive to the left of the path.
    pub deviation: f64,
    pub path_heading: f64,
    pub index: usize,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

fn cubic_hermite(p0: f64, m0: f64, p1: f64, m1: f64, h: f64, u: f64) -> f64 {
    let u2 = u * u;
    let u3 = u2 * u;
    (2.0 * u3 - 3.0 * u2 + 1.0) * p0
        + (u3 - 2.0 * u2 + u) * h * m0
        + (-2.0 * u3 + 3.0 * u2) * p1
        + (u3 - u2) * h * m1
}

/// Three passes of a centred moving average (a piecewise-cubic kernel).
fn smooth(values: &[f64], half_width: usize) -> Vec<f64> {
    let n = values.len();
    let mut current = values.to_vec();
    if half_width == 0 || n == 0 {
        return current;
    }
    for _ in 0..3 {
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        for v in &current {
            prefix.push(prefix.last().unwrap() + v);
        }
        let at = |i: isize| -> f64 {
            // clamp-extension beyond both ends
            if i < 0 {
                current[0] * i as f64
            } else if i as usize >= n {
                prefix[n] + current[n - 1] * (i as usize - n) as f64
            } else {
                prefix[i as usize]
            }
        };
        let w = half_width as isize;
        let next = (0..n as isize)
            .map(|i| (at(i + w + 1) - at(i - w)) / (2 * w + 1) as f64)
            .collect();
        current = next;
    }
    current
}

impl Track {
    pub fn new(spec: TrackSpec) -> Result<Self, HarnessError> {
        if spec.segments.is_empty() {
            return Err(HarnessError::Track("track has no segments".into()));
        }
        if !(spec.ds > 0.0 && spec.ds.is_finite()) {
            return Err(HarnessError::Track(format!("invalid sampling step ds = {}", spec.ds)));
        }
        if !(spec.speed_blend >= 0.0) {
            return Err(HarnessError::Track("speed_blend must be non-negative".into()));
        }

        let mut pieces = Vec::with_capacity(spec.segments.len());
        let (mut s0, mut k_end, mut psi) = (0.0, 0.0, spec.start_heading);
        for (i, seg) in spec.segments.iter().enumerate() {
            let len = seg.length();
            let valid = match *seg {
                Segment::Arc { radius, angle, .. } => radius > 0.0 && angle != 0.0,
                _ => true,
            };
            if !(valid && len > 0.0 && len.is_finite()) {
                return Err(HarnessError::Track(format!(
                    "segment {} ({}) has invalid geometry",
                    i + 1,
                    seg.kind()
                )));
            }
            if !(seg.speed() >= crate::plant::VX_MIN) {
                return Err(HarnessError::Track(format!(
                    "segment {} ({}) speed {} m/s is below {} m/s",
                    i + 1,
                    seg.kind(),
                    seg.speed(),
                    crate::plant::VX_MIN
                )));
            }
            let k0 = seg.start_curvature(k_end);
            if i > 0 && (k0 - k_end).abs() > JOINT_TOL {
                return Err(HarnessError::Track(format!(
                    "curvature jumps from {k_end} to {k0} 1/m at joint {i} ({} -> {})",
                    spec.segments[i - 1].kind(),
                    seg.kind()
                )));
            }
            let k1 = (seg.end_curvature(k_end) - k0) / len;
            pieces.push(Piece { s0, k0, k1, psi0: psi });
            psi += seg.turn(k_end);
            k_end = seg.end_curvature(k_end);
            s0 += len;
        }
        let length = s0;

        let intervals = (length / spec.ds).ceil().max(1.0) as usize;
        let step = length / intervals as f64;
        let n = intervals + 1;
        let mut track = Self {
            pieces,
            length,
            step,
            s: Vec::with_capacity(n),
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            psi: Vec::with_capacity(n),
            kappa: Vec::with_capacity(n),
            speed: Vec::new(),
            speed_slope: Vec::new(),
            spec,
        };
        let ds = step;
        let (mut x, mut y) = (0.0, 0.0);
        for i in 0..n {
            let s = i as f64 * ds;
            if i > 0 {
                // Simpson on the exact heading law
                let (a, m, b) = (track.heading_at(s - ds), track.heading_at(s - 0.5 * ds), track.heading_at(s));
                x += ds / 6.0 * (a.cos() + 4.0 * m.cos() + b.cos());
                y += ds / 6.0 * (a.sin() + 4.0 * m.sin() + b.sin());
            }
            track.s.push(s);
            track.x.push(x);
            track.y.push(y);
            track.psi.push(track.heading_at(s));
            track.kappa.push(track.curvature_at(s));
        }

        let target: Vec<f64> = track.s.iter().map(|&s| track.segment_at(s).1.speed()).collect();
        let half = (track.spec.speed_blend / 6.0 / ds).round() as usize;
        track.speed = smooth(&target, half);
        track.speed_slope = (0..n)
            .map(|i| {
                let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
                if a == b {
                    0.0
                } else {
                    (track.speed[b] - track.speed[a]) / (track.s[b] - track.s[a])
                }
            })
            .collect();
        Ok(track)
    }

    pub fn spec(&self) -> &TrackSpec {
        &self.spec
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Actual sampling step: the requested one shrunk so that the grid ends
    /// exactly at the end of the track.
    pub fn ds(&self) -> f64 {
        self.step
    }

    fn piece_index(&self, s: f64) -> usize {
        self.pieces.partition_point(|p| p.s0 <= s).saturating_sub(1)
    }

    fn segment_at(&self, s: f64) -> (usize, &Segment) {
        let i = self.piece_index(s);
        (i, &self.spec.segments[i])
    }

    /// Exact curvature law.
    pub fn curvature_at(&self, s: f64) -> f64 {
        let p = &self.pieces[self.piece_index(s.clamp(0.0, self.length))];
        p.k0 + p.k1 * (s.clamp(0.0, self.length) - p.s0)
    }

    /// Exact heading law (integral of the curvature).
    pub fn heading_at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.length);
        let p = &self.pieces[self.piece_index(s)];
        let d = s - p.s0;
        p.psi0 + p.k0 * d + 0.5 * p.k1 * d * d
    }

    fn grid(&self, s: f64) -> (usize, f64) {
        let n = self.s.len();
        if n < 2 {
            return (0, 0.0);
        }
        let f = (s / self.step).clamp(0.0, (n - 1) as f64);
        let i = (f.floor() as usize).min(n - 2);
        (i, f - i as f64)
    }

    /// Path point at arc length `s`; positions use cubic Hermite
    /// interpolation with the exact tangents.
    pub fn point_at(&self, s: f64) -> PathPoint {
        let s = s.clamp(0.0, self.s[self.s.len() - 1]);
        let (i, u) = self.grid(s);
        if self.s.len() < 2 {
            return PathPoint { s, x: self.x[0], y: self.y[0], psi: self.psi[0], kappa: self.kappa[0] };
        }
        let h = self.step;
        let (p0, p1) = (self.psi[i], self.psi[i + 1]);
        PathPoint {
            s,
            x: cubic_hermite(self.x[i], p0.cos(), self.x[i + 1], p1.cos(), h, u),
            y: cubic_hermite(self.y[i], p0.sin(), self.y[i + 1], p1.sin(), h, u),
            psi: self.heading_at(s),
            kappa: self.curvature_at(s),
        }
    }

    /// Smoothed speed target and its arc-length slope at `s`.
    pub fn speed_at(&self, s: f64) -> (f64, f64) {
        let (i, u) = self.grid(s);
        if self.s.len() < 2 {
            return (self.speed[0], 0.0);
        }
        let lerp = |v: &[f64]| v[i] + u * (v[i + 1] - v[i]);
        (lerp(&self.speed), lerp(&self.speed_slope))
    }

    pub fn samples(&self) -> impl Iterator<Item = (PathPoint, f64)> + '_ {
        (0..self.s.len()).map(move |i| {
            (
                PathPoint {
                    s: self.s[i],
                    x: self.x[i],
                    y: self.y[i],
                    psi: self.psi[i],
                    kappa: self.kappa[i],
                },
                self.speed[i],
            )
        })
    }

    /// Index of the sample nearest to `(x, y)` among `range`.
    pub fn nearest_sample(&self, x: f64, y: f64, range: std::ops::Range<usize>) -> usize {
        let mut best = (f64::INFINITY, range.start);
        for i in range {
            let d = (self.x[i] - x).powi(2) + (self.y[i] - y).powi(2);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Closest-point projection of `(x, y)`. With a `hint` (sample index of a
    /// previous projection) only samples within `search` metres of it are
    /// scanned.
    pub fn project(&self, x: f64, y: f64, hint: Option<usize>, search: f64) -> Projection {
        let n = self.s.len();
        let range = match hint {
            Some(h) => {
                let w = (search / self.step).ceil() as usize;
                h.saturating_sub(w)..(h + w + 1).min(n)
            }
            None => 0..n,
        };
        let index = self.nearest_sample(x, y, range);
        let mut s = self.s[index];
        for _ in 0..4 {
            let p = self.point_at(s);
            let (c, sn) = (p.psi.cos(), p.psi.sin());
            let (dx, dy) = (x - p.x, y - p.y);
            let along = dx * c + dy * sn;
            let across = -dx * sn + dy * c;
            // Newton step on the squared distance with unit-speed parametrisation
            let denom = 1.0 - p.kappa * across;
            let step = if denom.abs() > 1e-6 { along / denom } else { along };
            let next = (s + step).clamp(0.0, self.s[n - 1]);
            if (next - s).abs() < 1e-12 {
                s = next;
                break;
            }
            s = next;
        }
        let p = self.point_at(s);
        let deviation = -(x - p.x) * p.psi.sin() + (y - p.y) * p.psi.cos();
        Projection {
            s,
            deviation,
            path_heading: p.psi,
            index: ((s / self.step).round() as usize).min(n - 1),
        }
    }
}

/// Signed lateral deviation and heading error `psi - psi_path` of a pose.
pub fn lateral_deviation(
    x: f64,
    y: f64,
    psi: f64,
    track: &Track,
    hint: Option<usize>,
) -> (f64, f64, Projection) {
    let proj = track.project(x, y, hint, 25.0);
    (proj.deviation, wrap_angle(psi - proj.path_heading), proj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec(segments: Vec<Segment>) -> TrackSpec {
        TrackSpec { segments, ds: 0.25, speed_blend: 0.0, start_heading: 0.0 }
    }

    #[test]
    fn straight_line_geometry() {
        let t = Track::new(spec(vec![Segment::Straight { length: 200.0, speed: 20.0 }])).unwrap();
        for s in [0.0, 13.3, 100.0, 200.0] {
            let p = t.point_at(s);
            assert_relative_eq!(p.x, s, epsilon = 1e-9);
            assert_relative_eq!(p.y, 0.0, epsilon = 1e-12);
            assert_eq!(p.psi, 0.0);
        }
        assert_eq!(t.speed_at(50.0), (20.0, 0.0));
    }

    #[test]
    fn arc_geometry() {
        let t = Track::new(spec(vec![Segment::Arc { radius: 100.0, angle: PI, speed: 20.0 }])).unwrap();
        let p = t.point_at(50.0 * PI);
        assert_relative_eq!(p.kappa, 0.01);
        assert_relative_eq!(p.psi, PI / 2.0);
        assert_relative_eq!(p.x, 100.0, epsilon = 1e-8);
        assert_relative_eq!(p.y, 100.0, epsilon = 1e-8);
        // heading rate at 20 m/s is V * kappa
        assert_relative_eq!(20.0 * p.kappa, 0.2);
    }

    #[test]
    fn s_curve_net_heading() {
        let segs = vec![
            Segment::Straight { length: 50.0, speed: 15.0 },
            Segment::Clothoid { length: 30.0, curvature: 0.02, speed: 15.0 },
            Segment::Arc { radius: 50.0, angle: 0.6, speed: 15.0 },
            Segment::Clothoid { length: 60.0, curvature: -0.025, speed: 15.0 },
            Segment::Arc { radius: 40.0, angle: -0.9, speed: 15.0 },
            Segment::Clothoid { length: 30.0, curvature: 0.0, speed: 15.0 },
        ];
        let t = Track::new(spec(segs.clone())).unwrap();
        let expected = 0.3 + 0.6 + 60.0 * (0.02 - 0.025) / 2.0 - 0.9 - 30.0 * 0.025 / 2.0;
        // trapezoidal integral of the sampled curvature
        let k: Vec<f64> = t.samples().map(|(p, _)| p.kappa).collect();
        let integral: f64 = k.windows(2).map(|w| 0.5 * (w[0] + w[1]) * t.ds()).sum();
        assert!((integral - expected).abs() < 1e-4, "{integral} vs {expected}");
        assert_relative_eq!(t.heading_at(t.length()), expected, epsilon = 1e-12);
    }

    #[test]
    fn discontinuous_joint_is_named() {
        let err = Track::new(spec(vec![
            Segment::Straight { length: 50.0, speed: 15.0 },
            Segment::Arc { radius: 50.0, angle: 1.0, speed: 15.0 },
        ]))
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("joint 1") && msg.contains("straight -> arc"), "{msg}");
    }

    #[test]
    fn rejects_low_speed() {
        assert!(Track::new(spec(vec![Segment::Straight { length: 50.0, speed: 0.1 }])).is_err());
    }

    #[test]
    fn default_circuit_closes() {
        let t = Track::new(crate::harness::config::TrackSettings::default().to_spec()).unwrap();
        let end = t.point_at(t.length());
        assert!((t.length() - 2000.0).abs() < 100.0, "length {}", t.length());
        assert_relative_eq!(end.psi, 2.0 * PI, epsilon = 1e-9);
        assert!(end.x.hypot(end.y) < 1.0, "gap {} {}", end.x, end.y);
        for (_, v) in t.samples() {
            assert!((30.0 / 3.6 - 1e-9..=70.0 / 3.6 + 1e-9).contains(&v));
        }
    }

    #[test]
    fn speed_blend_limits_acceleration() {
        let t = Track::new(crate::harness::config::TrackSettings::default().to_spec()).unwrap();
        let max_acc = t.samples().map(|(p, v)| (v * t.speed_at(p.s).1).abs()).fold(0.0, f64::max);
        assert!(max_acc < 2.5, "{max_acc}");
    }

    #[test]
    fn projection_examples() {
        let t = Track::new(spec(vec![Segment::Straight { length: 200.0, speed: 20.0 }])).unwrap();
        let (d, e, _) = lateral_deviation(40.0, 0.5, 0.0, &t, None);
        assert_relative_eq!(d, 0.5, epsilon = 1e-12);
        assert_eq!(e, 0.0);
        let p = t.point_at(77.7);
        let (d, e, _) = lateral_deviation(p.x, p.y, p.psi, &t, Some(10));
        assert!(d.abs() < 1e-12 && e == 0.0);
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0);
        assert_relative_eq!(wrap_angle(-PI / 2.0), -PI / 2.0);
        assert_relative_eq!(wrap_angle(2.0 * PI + 0.1), 0.1, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn projection_matches_brute_force(s in 1.0f64..150.0, off in -5.0f64..5.0, dpsi in -0.5f64..0.5) {
            let t = Track::new(spec(vec![Segment::Arc { radius: 60.0, angle: 2.6, speed: 15.0 }])).unwrap();
            let p = t.point_at(s);
            let (x, y) = (p.x - off * p.psi.sin(), p.y + off * p.psi.cos());
            let (d, e, proj) = lateral_deviation(x, y, p.psi + dpsi, &t, None);
            let brute = t.nearest_sample(x, y, 0..t.len());
            let q = t.point_at(brute as f64 * t.ds());
            let brute_dist = (x - q.x).hypot(y - q.y);
            prop_assert!((proj.s - brute as f64 * t.ds()).abs() <= t.ds());
            prop_assert!((d.abs() - brute_dist).abs() <= t.ds());
            prop_assert!((d - off).abs() < 1e-6);
            prop_assert!((e - dpsi).abs() < 1e-9);
        }
    }
}
