//! Reference trajectories and path-error metrics.

use std::collections::HashMap;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Segment, Vec2};
use crate::kinematics::{integrate_step, oscillatory_omega, wrap_angle, KinematicsError, OscillatorParams, Pose, Twist};

/// Arc-length spacing used before comparing paths.
pub const RESAMPLE_STEP: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("trajectory needs at least two samples")]
    Degenerate,
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajSample {
    pub t: f64,
    pub pose: Pose,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub samples: Vec<TrajSample>,
}

impl TrajectoryLog {
    pub fn positions(&self) -> Vec<Vec2> {
        self.samples.iter().map(|s| s.pose.position()).collect()
    }

    pub fn path_length(&self) -> f64 {
        polyline_length(&self.positions())
    }

    pub fn last(&self) -> Option<&TrajSample> {
        self.samples.last()
    }

    /// One `{"t":..,"x":..,"y":..,"theta":..}` object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            let rec = serde_json::json!({"t": s.t, "x": s.pose.x, "y": s.pose.y, "theta": s.pose.theta});
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        out
    }
}

pub fn polyline_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

fn positive(x: f64, what: &'static str) -> Result<(), HarnessError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::InvalidParameter(what))
    }
}

/// Corners of the pentagon traced from the origin heading +x with
/// counterclockwise turns. The sixth entry is the closing corner.
pub fn pentagon_vertices(side: f64) -> [Vec2; 6] {
    let mut v = [Vec2::new(0.0, 0.0); 6];
    for i in 1..6 {
        v[i] = v[i - 1] + Vec2::from_angle(TAU * (i - 1) as f64 / 5.0) * side;
    }
    v
}

/// Ideal pentagon at constant speed with instantaneous turns, sampled
/// every `dt` plus the exact corner times.
pub fn generate_pentagon_reference(side: f64, v: f64, dt: f64) -> Result<TrajectoryLog, HarnessError> {
    positive(side, "side")?;
    positive(v, "v")?;
    positive(dt, "dt")?;
    let corners = pentagon_vertices(side);
    let leg = side / v;
    let total = 5.0 * leg;
    let mut times: Vec<f64> = (0..)
        .map(|k| k as f64 * dt)
        .take_while(|&t| t < total)
        .chain((1..=5).map(|i| i as f64 * leg))
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let samples = times
        .into_iter()
        .map(|t| {
            let i = ((t / leg) as usize).min(4);
            let (i, frac) = if (t - (i + 1) as f64 * leg).abs() < 1e-12 {
                (i + 1, 0.0)
            } else {
                (i, (t - i as f64 * leg) / leg)
            };
            let heading = wrap_angle(TAU * (i % 5) as f64 / 5.0);
            let p = if i == 5 {
                corners[5]
            } else {
                corners[i] + (corners[i + 1] - corners[i]) * frac
            };
            TrajSample {
                t,
                pose: Pose::new(p.x, p.y, heading),
            }
        })
        .collect();
    Ok(TrajectoryLog { samples })
}

/// Simulated pentagon: drive each side at `v`, then turn in place at
/// `turn_rate`. Step counts are rounded to whole ticks, so the result
/// differs slightly from the ideal reference.
pub fn simulate_pentagon(side: f64, v: f64, turn_rate: f64, dt: f64) -> Result<TrajectoryLog, HarnessError> {
    positive(side, "side")?;
    positive(v, "v")?;
    positive(turn_rate, "turn_rate")?;
    positive(dt, "dt")?;
    let drive = (side / (v * dt)).round().max(1.0) as usize;
    let turn = (TAU / 5.0 / (turn_rate * dt)).round().max(1.0) as usize;
    let mut pose = Pose::default();
    let mut t = 0.0;
    let mut k = 0u64;
    let mut samples = vec![TrajSample { t, pose }];
    for leg in 0..5 {
        let turns = if leg < 4 { turn } else { 0 };
        for cmd in std::iter::repeat_n(Twist::new(v, 0.0), drive).chain(std::iter::repeat_n(Twist::new(0.0, turn_rate), turns)) {
            pose = integrate_step(pose, cmd, dt);
            k += 1;
            t = k as f64 * dt;
            samples.push(TrajSample { t, pose });
        }
    }
    Ok(TrajectoryLog { samples })
}

/// Constant forward speed with the damped-sinusoid yaw rate, from the
/// origin. `ceil(duration / dt)` steps, one sample per tick including t=0.
pub fn run_oscillator_trajectory(
    params: &OscillatorParams,
    v: f64,
    duration: f64,
    dt: f64,
) -> Result<TrajectoryLog, HarnessError> {
    positive(duration, "duration")?;
    positive(dt, "dt")?;
    if !v.is_finite() {
        return Err(HarnessError::InvalidParameter("v"));
    }
    params.validate()?;
    let steps = (duration / dt - 1e-9).ceil() as u64;
    let mut pose = Pose::default();
    let mut samples = Vec::with_capacity(steps as usize + 1);
    samples.push(TrajSample { t: 0.0, pose });
    for k in 0..steps {
        let t = k as f64 * dt;
        pose = integrate_step(pose, Twist::new(v, oscillatory_omega(params, t)), dt);
        samples.push(TrajSample {
            t: (k + 1) as f64 * dt,
            pose,
        });
    }
    Ok(TrajectoryLog { samples })
}

/// The fine-step comparator for [`run_oscillator_trajectory`].
pub fn oscillator_reference(
    params: &OscillatorParams,
    v: f64,
    duration: f64,
    dt: f64,
) -> Result<TrajectoryLog, HarnessError> {
    run_oscillator_trajectory(params, v, duration, dt / 100.0)
}

/// Endpoint of a constant-twist arc from the origin.
pub fn analytic_arc_endpoint(v: f64, omega: f64, t: f64) -> Vec2 {
    if omega == 0.0 {
        return Vec2::new(v * t, 0.0);
    }
    let r = v / omega;
    Vec2::new(r * (omega * t).sin(), r * (1.0 - (omega * t).cos()))
}

/// Parallel offset of a closed counterclockwise polygon with mitered
/// corners. Positive `d` moves every edge outward by exactly `d`.
/// `closed` repeats the first point at the end.
pub fn mitered_offset(closed: &[Vec2], d: f64) -> Vec<Vec2> {
    let n = closed.len() - 1;
    let normal = |i: usize| {
        let e = closed[i + 1] - closed[i];
        Vec2::new(e.y, -e.x) * (1.0 / e.norm())
    };
    let mut out: Vec<Vec2> = (0..n)
        .map(|i| {
            let a = normal((i + n - 1) % n);
            let b = normal(i);
            let bis = a + b;
            let bis = bis * (1.0 / bis.norm());
            closed[i] + bis * (d / bis.dot(b))
        })
        .collect();
    out.push(out[0]);
    out
}

/// Inserts points so no gap exceeds `step`; original vertices are kept.
pub fn resample(points: &[Vec2], step: f64) -> Vec<Vec2> {
    let mut out = Vec::new();
    for w in points.windows(2) {
        let len = w[0].distance(w[1]);
        let n = (len / step).ceil().max(1.0) as usize;
        for i in 0..n {
            out.push(w[0] + (w[1] - w[0]) * (i as f64 / n as f64));
        }
    }
    if let Some(&last) = points.last() {
        out.push(last);
    }
    out
}

/// Uniform-grid bucket index over polyline segments for nearest-distance
/// queries.
pub struct SegmentIndex {
    segments: Vec<Segment>,
    cell: f64,
    min: Vec2,
    dims: (i64, i64),
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl SegmentIndex {
    pub fn new(points: &[Vec2]) -> Self {
        let segments: Vec<Segment> = if points.len() == 1 {
            vec![Segment::new(points[0], points[0])]
        } else {
            points.windows(2).map(|w| Segment::new(w[0], w[1])).collect()
        };
        let (mut min, mut max) = (points[0], points[0]);
        for p in points {
            min = Vec2::new(min.x.min(p.x), min.y.min(p.y));
            max = Vec2::new(max.x.max(p.x), max.y.max(p.y));
        }
        let extent = (max.x - min.x).max(max.y - min.y);
        let cells_per_side = (segments.len() as f64).sqrt().ceil().max(1.0);
        let cell = (extent / cells_per_side).max(1e-6);
        let key = |p: Vec2| (((p.x - min.x) / cell).floor() as i64, ((p.y - min.y) / cell).floor() as i64);
        let dims = (key(max).0 + 1, key(max).1 + 1);
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, s) in segments.iter().enumerate() {
            let (a, b) = (key(s.a), key(s.b));
            for cx in a.0.min(b.0)..=a.0.max(b.0) {
                for cy in a.1.min(b.1)..=a.1.max(b.1) {
                    buckets.entry((cx, cy)).or_default().push(i);
                }
            }
        }
        Self {
            segments,
            cell,
            min,
            dims,
            buckets,
        }
    }

    pub fn distance(&self, p: Vec2) -> f64 {
        let cx = ((p.x - self.min.x) / self.cell).floor() as i64;
        let cy = ((p.y - self.min.y) / self.cell).floor() as i64;
        // Rings beyond this cover no bucket at all.
        let reach = [cx, self.dims.0 - 1 - cx, cy, self.dims.1 - 1 - cy]
            .into_iter()
            .map(i64::abs)
            .max()
            .unwrap()
            + 1;
        let mut best = f64::INFINITY;
        for r in 0..=reach {
            for x in cx - r..=cx + r {
                for y in cy - r..=cy + r {
                    if (x - cx).abs() != r && (y - cy).abs() != r {
                        continue;
                    }
                    if let Some(ids) = self.buckets.get(&(x, y)) {
                        for &i in ids {
                            best = best.min(self.segments[i].distance_to_point(p));
                        }
                    }
                }
            }
            // Cells outside ring r are at least r cells away.
            if best <= r as f64 * self.cell {
                break;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathMetrics {
    /// Root mean square of distances from resampled `a` to polyline `b`.
    pub rmse: f64,
    pub max_dev: f64,
    pub endpoint: f64,
    /// Larger of the two directions.
    pub symmetric_rmse: f64,
    pub symmetric_max_dev: f64,
}

impl PathMetrics {
    /// Flat `key=value` lines.
    pub fn to_key_values(&self) -> String {
        format!(
            "rmse={}\nmax_dev={}\nendpoint={}\nsymmetric_rmse={}\nsymmetric_max_dev={}\n",
            self.rmse, self.max_dev, self.endpoint, self.symmetric_rmse, self.symmetric_max_dev
        )
    }
}

/// Distances from each resampled point of `a` to polyline `b`.
pub fn directed_distances(a: &[Vec2], b: &[Vec2]) -> Vec<f64> {
    let index = SegmentIndex::new(b);
    resample(a, RESAMPLE_STEP).into_iter().map(|p| index.distance(p)).collect()
}

fn rms_and_max(d: &[f64]) -> (f64, f64) {
    let rms = (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt();
    (rms, d.iter().copied().fold(0.0, f64::max))
}

pub fn compute_path_error(a: &TrajectoryLog, b: &TrajectoryLog) -> Result<PathMetrics, HarnessError> {
    compute_polyline_error(&a.positions(), &b.positions())
}

pub fn compute_polyline_error(a: &[Vec2], b: &[Vec2]) -> Result<PathMetrics, HarnessError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(HarnessError::Degenerate);
    }
    let (rmse, max_dev) = rms_and_max(&directed_distances(a, b));
    let (back_rmse, back_max) = rms_and_max(&directed_distances(b, a));
    Ok(PathMetrics {
        rmse,
        max_dev,
        endpoint: a.last().unwrap().distance(*b.last().unwrap()),
        symmetric_rmse: rmse.max(back_rmse),
        symmetric_max_dev: max_dev.max(back_max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use std::f64::consts::PI;

    fn brute(a: &[Vec2], b: &[Vec2]) -> (f64, f64) {
        let segs: Vec<Segment> = b.windows(2).map(|w| Segment::new(w[0], w[1])).collect();
        let d: Vec<f64> = resample(a, RESAMPLE_STEP)
            .into_iter()
            .map(|p| segs.iter().map(|s| s.distance_to_point(p)).fold(f64::INFINITY, f64::min))
            .collect();
        rms_and_max(&d)
    }

    #[test]
    fn pentagon_geometry() {
        let log = generate_pentagon_reference(2.0, 0.5, 0.05).unwrap();
        assert!((log.path_length() - 10.0).abs() < 1e-9);
        let end = log.last().unwrap();
        assert!(end.pose.position().norm() < 1e-9);
        assert!((end.t - 20.0).abs() < 1e-12);
        assert!(log.samples.windows(2).all(|w| w[1].t > w[0].t));
        let c = pentagon_vertices(2.0);
        let turns: f64 = (0..5)
            .map(|i| {
                let a = c[i + 1] - c[i];
                let b = c[(i + 1) % 5 + 1] - c[(i + 1) % 5];
                a.cross(b).atan2(a.dot(b))
            })
            .sum();
        assert!((turns - TAU).abs() < 1e-12);
        assert!(generate_pentagon_reference(0.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn straight_oscillator_and_sample_count() {
        let p = OscillatorParams {
            amplitude: 0.0,
            damping: 0.0,
            onset: 0.0,
            period: 1.0,
            bias: 0.0,
        };
        let log = run_oscillator_trajectory(&p, 0.8, 10.0, 0.05).unwrap();
        assert_eq!(log.samples.len(), 201);
        assert!((log.path_length() - 8.0).abs() < 1e-9);
        assert_eq!(log.to_jsonl().lines().count(), 201);
    }

    #[test]
    fn refinement_converges() {
        let p = OscillatorParams {
            amplitude: 1.2,
            damping: 0.2,
            onset: 0.0,
            period: 4.0,
            bias: 0.1,
        };
        let truth = oscillator_reference(&p, 1.0, 10.0, 0.01).unwrap();
        let end = truth.last().unwrap().pose.position();
        let err = |dt: f64| {
            let log = run_oscillator_trajectory(&p, 1.0, 10.0, dt).unwrap();
            log.last().unwrap().pose.position().distance(end)
        };
        assert!(err(0.025) < err(0.05));
    }

    #[test]
    fn heavy_damping_gives_bias_arc() {
        let p = OscillatorParams {
            amplitude: 2.0,
            damping: 1e4,
            onset: 0.0,
            period: 1.0,
            bias: 0.5,
        };
        let log = run_oscillator_trajectory(&p, 1.0, 3.0, 1e-3).unwrap();
        let end = log.last().unwrap().pose.position();
        assert!(end.distance(analytic_arc_endpoint(1.0, 0.5, 3.0)) < 5e-3);
    }

    #[test]
    fn identical_and_translated_logs() {
        let a = generate_pentagon_reference(3.0, 1.0, 0.1).unwrap();
        let m = compute_path_error(&a, &a).unwrap();
        assert!(m.rmse < 1e-12 && m.max_dev < 1e-12);
        assert_eq!(m.endpoint, 0.0);
        let line = |dy: f64| vec![Vec2::new(0.0, dy), Vec2::new(50.0, dy)];
        let m = compute_polyline_error(&line(0.0), &line(0.1)).unwrap();
        assert!((m.rmse - 0.1).abs() < 1e-12);
        assert!((m.max_dev - 0.1).abs() < 1e-12);
        assert!(compute_polyline_error(&line(0.0)[..1], &line(0.1)).is_err());
    }

    #[test]
    fn offset_pentagon_is_exactly_d_away() {
        let c = pentagon_vertices(2.0);
        let off = mitered_offset(&c, 0.1);
        let m = compute_polyline_error(&c, &off).unwrap();
        assert!((m.rmse - 0.1).abs() < 1e-9, "{m:?}");
        assert!((m.max_dev - 0.1).abs() < 1e-9);
        // Outward: every offset corner is farther from the centroid.
        let centroid = c[..5].iter().fold(Vec2::new(0.0, 0.0), |s, &p| s + p) * 0.2;
        for i in 0..5 {
            assert!(off[i].distance(centroid) > c[i].distance(centroid));
        }
    }

    #[test]
    fn index_matches_brute_force() {
        let mut rng = SimRng::seed_from(21);
        for _ in 0..30 {
            let mut pts = |n: usize| -> Vec<Vec2> {
                (0..n).map(|_| Vec2::new(rng.range(-5.0, 5.0), rng.range(-5.0, 5.0))).collect()
            };
            let (a, b) = (pts(8), pts(12));
            let m = compute_polyline_error(&a, &b).unwrap();
            let (rms, max) = brute(&a, &b);
            assert!((m.rmse - rms).abs() < 1e-9);
            assert!((m.max_dev - max).abs() < 1e-9);
        }
    }

    #[test]
    fn symmetric_variant_is_symmetric() {
        let a = generate_pentagon_reference(2.0, 1.0, 0.05).unwrap();
        let b = simulate_pentagon(2.0, 1.0, PI / 2.0, 0.05).unwrap();
        let ab = compute_path_error(&a, &b).unwrap();
        let ba = compute_path_error(&b, &a).unwrap();
        assert_eq!(ab.symmetric_rmse, ba.symmetric_rmse);
        assert_eq!(ab.symmetric_max_dev, ba.symmetric_max_dev);
        assert!(ab.max_dev < 0.05);
    }
}
