//! Sample paths: Euclidean and manifold Brownian motion, midpoint
//! refinement, development and anti-development on spheres, and
//! geodesic-step state-space models.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::reorthogonalize;
use crate::manifold::{
    sphere_exp, sphere_log, sphere_transport, FrameAtPoint, ManifoldSpec, Point, TangentVector,
    MEMBERSHIP_TOL,
};
use crate::random::{tangent_gaussian_raw, GaussianStream};

/// SO(n) states are projected back onto the group every this many steps.
pub const REORTHOGONALIZE_EVERY: usize = 64;

/// Time grid and ensemble size for a simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(horizon: f64, dt: f64, n_paths: usize, seed: u64) -> Result<Self> {
        let cfg = SimConfig { horizon, dt, n_paths, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Input(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Input(format!("dt must be positive, got {}", self.dt)));
        }
        if self.dt > self.horizon * (1.0 + 1e-12) {
            return Err(Error::Input(format!(
                "dt = {} exceeds the horizon {}",
                self.dt, self.horizon
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::Input("n_paths must be at least 1".into()));
        }
        Ok(())
    }

    /// `0, dt, 2dt, …, T`. When `T/dt` is not an integer the last step is shorter.
    pub fn time_grid(&self) -> Vec<f64> {
        let ratio = self.horizon / self.dt;
        let steps = if (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0) {
            ratio.round() as usize
        } else {
            ratio.ceil() as usize
        }
        .max(1);
        let mut t: Vec<f64> = (0..steps).map(|k| k as f64 * self.dt).collect();
        t.push(self.horizon);
        t
    }
}

/// A realised sample path stored at grid points only.
#[derive(Debug, Clone)]
pub struct Path {
    manifold: ManifoldSpec,
    times: Vec<f64>,
    points: Vec<Point>,
}

impl Path {
    /// Validates the time grid, shapes and manifold membership.
    pub fn new(manifold: ManifoldSpec, times: Vec<f64>, points: Vec<Point>) -> Result<Self> {
        if times.is_empty() || times.len() != points.len() {
            return Err(Error::Input(format!(
                "path needs equally many (≥1) times and points, got {} and {}",
                times.len(),
                points.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Input("path times must be strictly increasing".into()));
        }
        for p in &points {
            if p.matrix().shape() != manifold.ambient_shape() {
                return Err(Error::Input(format!("path point has the wrong shape for {manifold}")));
            }
            let defect = manifold.membership_defect(p.matrix());
            if defect > MEMBERSHIP_TOL {
                return Err(Error::Input(format!(
                    "path point is off {manifold} (defect {defect:e})"
                )));
            }
        }
        Ok(Path { manifold, times, points })
    }

    pub(crate) fn from_parts_unchecked(
        manifold: ManifoldSpec,
        times: Vec<f64>,
        points: Vec<Point>,
    ) -> Self {
        Path { manifold, times, points }
    }

    /// Euclidean path from raw coordinate rows.
    pub fn euclidean(times: Vec<f64>, coords: Vec<Vec<f64>>) -> Result<Self> {
        let dim = coords.first().map_or(0, |c| c.len());
        let m = ManifoldSpec::Euclidean(dim);
        m.validate()?;
        let points = coords
            .iter()
            .map(|c| m.point_from_slice(c))
            .collect::<Result<Vec<_>>>()?;
        Path::new(m, times, points)
    }

    pub fn manifold(&self) -> ManifoldSpec {
        self.manifold
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &Point {
        self.points.last().expect("paths are never empty")
    }

    /// Values of coordinate `i` along the path.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.points.iter().map(|p| p.coords()[i]).collect()
    }

    /// Largest membership defect over all points.
    pub fn max_membership_defect(&self) -> f64 {
        self.points
            .iter()
            .map(|p| self.manifold.membership_defect(p.matrix()))
            .fold(0.0, f64::max)
    }

    fn is_uniform(&self) -> bool {
        if self.len() < 2 {
            return false;
        }
        let h = self.times[1] - self.times[0];
        self.times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.max(1e-300))
    }

    /// Point at time `t`, joining neighbouring grid points by the geodesic
    /// through them (linear interpolation on ℝⁿ).
    pub fn interpolate(&self, t: f64) -> Result<Point> {
        let (t0, t1) = (self.times[0], *self.times.last().unwrap());
        if !(t >= t0 && t <= t1) {
            return Err(Error::Input(format!("time {t} outside [{t0}, {t1}]")));
        }
        let k = match self.times.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(k) => return Ok(self.points[k].clone()),
            Err(k) => k - 1,
        };
        let alpha = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        let v = self.manifold.log_map(&self.points[k], &self.points[k + 1])?;
        self.manifold.geodesic(&self.points[k], &v, alpha)
    }

    /// Resamples on a grid `factor` times finer using [`interpolate`](Self::interpolate).
    pub fn densify(&self, factor: usize) -> Result<Path> {
        if factor <= 1 || self.len() < 2 {
            return Ok(self.clone());
        }
        let mut times = Vec::with_capacity((self.len() - 1) * factor + 1);
        let mut points = Vec::with_capacity(times.capacity());
        for k in 0..self.len() - 1 {
            let v = self.manifold.log_map(&self.points[k], &self.points[k + 1])?;
            let h = self.times[k + 1] - self.times[k];
            for j in 0..factor {
                let a = j as f64 / factor as f64;
                times.push(self.times[k] + a * h);
                points.push(self.manifold.geodesic(&self.points[k], &v, a)?);
            }
        }
        times.push(*self.times.last().unwrap());
        points.push(self.last().clone());
        Ok(Path::from_parts_unchecked(self.manifold, times, points))
    }
}

/// Runs `f` once per path with stream id = path index, in parallel, keeping
/// the output in path order.
pub fn simulate_ensemble<R, F>(cfg: &SimConfig, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(GaussianStream) -> R + Sync,
{
    (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| f(GaussianStream::new(cfg.seed, i)))
        .collect()
}

/// `X(0) = 0`, `X(t_{k+1}) = X(t_k) + √δt·W(k)`.
pub fn simulate_bm_euclidean(dim: usize, cfg: &SimConfig, stream: &mut GaussianStream) -> Path {
    let m = ManifoldSpec::Euclidean(dim);
    simulate_bm_manifold_raw(m, DMatrix::zeros(dim, 1), cfg, stream)
}

/// Inserts Brownian-bridge midpoints between every pair of grid points:
/// `X(t + δt/2) ~ (X(t) + X(t + δt))/2 + (√δt/2)·N(0, 1)`.
pub fn refine_bm_midpoint(path: &Path, stream: &mut GaussianStream) -> Result<Path> {
    if !matches!(path.manifold, ManifoldSpec::Euclidean(_)) {
        return Err(Error::Input("midpoint refinement needs a Euclidean path".into()));
    }
    if !path.is_uniform() {
        return Err(Error::Input("midpoint refinement needs a uniform grid with ≥2 points".into()));
    }
    let dt = path.times[1] - path.times[0];
    let sd = dt.sqrt() / 2.0;
    let dim = path.manifold.ambient_dim();
    let mut times = Vec::with_capacity(2 * path.len() - 1);
    let mut points = Vec::with_capacity(2 * path.len() - 1);
    for k in 0..path.len() - 1 {
        let (a, b) = (path.points[k].matrix(), path.points[k + 1].matrix());
        let noise = DMatrix::from_fn(dim, 1, |_, _| stream.next_gaussian());
        times.push(path.times[k]);
        points.push(path.points[k].clone());
        times.push(path.times[k] + dt / 2.0);
        points.push(Point::from_matrix_unchecked((a + b) * 0.5 + noise * sd));
    }
    times.push(*path.times.last().unwrap());
    points.push(path.last().clone());
    Ok(Path::from_parts_unchecked(path.manifold, times, points))
}

/// Geodesic random walk `B(t_{k+1}) = Exp_{B(t_k)}(√δt·W(k))` with `W(k)` a
/// standard tangent Gaussian at the current point.
pub fn simulate_bm_manifold(
    manifold: ManifoldSpec,
    p0: &Point,
    cfg: &SimConfig,
    stream: &mut GaussianStream,
) -> Result<Path> {
    let p0 = manifold.point(p0.matrix().clone())?;
    Ok(simulate_bm_manifold_raw(manifold, p0.into_matrix(), cfg, stream))
}

fn simulate_bm_manifold_raw(
    manifold: ManifoldSpec,
    p0: DMatrix<f64>,
    cfg: &SimConfig,
    stream: &mut GaussianStream,
) -> Path {
    let times = cfg.time_grid();
    let mut points = Vec::with_capacity(times.len());
    let mut p = p0;
    points.push(Point::from_matrix_unchecked(p.clone()));
    for (k, w) in times.windows(2).enumerate() {
        let v = tangent_gaussian_raw(manifold, &p, stream) * (w[1] - w[0]).sqrt();
        p = step(manifold, &p, &v, k);
        points.push(Point::from_matrix_unchecked(p.clone()));
    }
    Path::from_parts_unchecked(manifold, times, points)
}

/// One geodesic step with the SO(n) re-projection policy applied.
fn step(manifold: ManifoldSpec, p: &DMatrix<f64>, v: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let q = manifold.exp_unchecked(p, v);
    match manifold {
        ManifoldSpec::SpecialOrthogonal(_) if (k + 1).is_multiple_of(REORTHOGONALIZE_EVERY) => {
            reorthogonalize(&q)
        }
        _ => q,
    }
}

fn require_sphere_frame(manifold: ManifoldSpec, frame: &FrameAtPoint) -> Result<usize> {
    let ManifoldSpec::Sphere(n) = manifold else {
        return Err(Error::Unsupported(format!(
            "development is only implemented on spheres, not {manifold}"
        )));
    };
    if frame.base().matrix().shape() != (n, 1) || frame.vectors().len() != n - 1 {
        return Err(Error::Input(format!(
            "development on sphere:{n} needs a frame of {} vectors at a point of ℝ^{n}",
            n - 1
        )));
    }
    Ok(n)
}

/// Rolls the sphere along a piecewise-linear plane path.
///
/// Returns the developed path together with the frame carried to its endpoint.
pub fn develop_with_frame(frame0: &FrameAtPoint, plane_path: &Path) -> Result<(Path, FrameAtPoint)> {
    let n = frame0.base().matrix().nrows();
    let sphere = ManifoldSpec::Sphere(n);
    let n = require_sphere_frame(sphere, frame0)?;
    if plane_path.manifold != ManifoldSpec::Euclidean(n - 1) {
        return Err(Error::Input(format!(
            "development on sphere:{n} needs a plane path in euclidean:{}, got {}",
            n - 1,
            plane_path.manifold
        )));
    }
    sphere.point(frame0.base().matrix().clone())?;
    let mut p = frame0.base().matrix().clone();
    let mut frame: Vec<DMatrix<f64>> =
        frame0.vectors().iter().map(|e| e.matrix().clone()).collect();
    let mut points = Vec::with_capacity(plane_path.len());
    points.push(Point::from_matrix_unchecked(p.clone()));
    for w in plane_path.points.windows(2) {
        let inc = w[1].matrix() - w[0].matrix();
        let mut v = DMatrix::zeros(n, 1);
        for (e, a) in frame.iter().zip(inc.iter()) {
            v += e * *a;
        }
        for e in frame.iter_mut() {
            *e = sphere_transport(&p, &v, e);
        }
        p = sphere_exp(&p, &v);
        points.push(Point::from_matrix_unchecked(p.clone()));
    }
    let last = FrameAtPoint::from_parts_unchecked(
        Point::from_matrix_unchecked(p),
        frame.into_iter().map(TangentVector::from_matrix_unchecked).collect(),
    );
    Ok((
        Path::from_parts_unchecked(sphere, plane_path.times.clone(), points),
        last,
    ))
}

/// Development of a plane path onto the sphere carrying `frame0`.
pub fn develop(frame0: &FrameAtPoint, plane_path: &Path) -> Result<Path> {
    develop_with_frame(frame0, plane_path).map(|(p, _)| p)
}

/// Anti-development: reads each segment's log in the transported frame and
/// accumulates the planar increments. Exact inverse of [`develop`] on
/// piecewise-geodesic input.
pub fn antidevelop_with_frame(path: &Path, frame0: &FrameAtPoint) -> Result<(Path, FrameAtPoint)> {
    let n = require_sphere_frame(path.manifold, frame0)?;
    let gap = (frame0.base().matrix() - path.points[0].matrix()).norm();
    if gap > MEMBERSHIP_TOL {
        return Err(Error::Input("frame base differs from the path's first point".into()));
    }
    let mut frame: Vec<DMatrix<f64>> =
        frame0.vectors().iter().map(|e| e.matrix().clone()).collect();
    let mut acc = DMatrix::<f64>::zeros(n - 1, 1);
    let mut points = Vec::with_capacity(path.len());
    points.push(Point::from_matrix_unchecked(acc.clone()));
    for w in path.points.windows(2) {
        let (p, q) = (w[0].matrix(), w[1].matrix());
        let v = sphere_log(p, q)?;
        for (i, e) in frame.iter().enumerate() {
            acc[i] += e.dot(&v);
        }
        for e in frame.iter_mut() {
            *e = sphere_transport(p, &v, e);
        }
        points.push(Point::from_matrix_unchecked(acc.clone()));
    }
    let last = FrameAtPoint::from_parts_unchecked(
        path.last().clone(),
        frame.into_iter().map(TangentVector::from_matrix_unchecked).collect(),
    );
    Ok((
        Path::from_parts_unchecked(ManifoldSpec::Euclidean(n - 1), path.times.clone(), points),
        last,
    ))
}

pub fn antidevelop(path: &Path, frame0: &FrameAtPoint) -> Result<Path> {
    antidevelop_with_frame(path, frame0).map(|(p, _)| p)
}

/// Geodesic Euler scheme
/// `X(t + δt) = Exp_{X(t)}(δt·b(t, X(t)) + √δt·σ·W(t))`.
///
/// The noise is drawn before the drift is evaluated so that with `b = 0` the
/// draws line up with [`simulate_bm_manifold`].
pub fn simulate_state_space<B>(
    manifold: ManifoldSpec,
    p0: &Point,
    drift: B,
    noise_scale: f64,
    cfg: &SimConfig,
    stream: &mut GaussianStream,
) -> Result<Path>
where
    B: Fn(f64, &Point) -> TangentVector,
{
    let p0 = manifold.point(p0.matrix().clone())?;
    let times = cfg.time_grid();
    let mut points = Vec::with_capacity(times.len());
    let mut p = p0;
    points.push(p.clone());
    for (k, w) in times.windows(2).enumerate() {
        let h = w[1] - w[0];
        let mut v = if noise_scale != 0.0 {
            tangent_gaussian_raw(manifold, p.matrix(), stream) * (h.sqrt() * noise_scale)
        } else {
            let (r, c) = manifold.ambient_shape();
            DMatrix::zeros(r, c)
        };
        let b = drift(w[0], &p);
        let b = manifold.tangent(&p, b.into_matrix())?;
        v += b.matrix() * h;
        p = Point::from_matrix_unchecked(step(manifold, p.matrix(), &v, k));
        points.push(p.clone());
    }
    Ok(Path::from_parts_unchecked(manifold, times, points))
}

/// Observation process driven by a Euclidean state path:
/// `Y(t + δt) = Exp_{Y(t)}(lift(g(X(t + δt)) − g(X(t))) + √δt·σ·W(t))`.
///
/// The increment and the noise are expressed in an orthonormal frame that is
/// parallel transported along `Y` (so on a sphere `Y` is the development of
/// the noisy path `g(X)`); on ℝⁿ the frame is the standard basis.
pub fn simulate_observation<G>(
    observation: ManifoldSpec,
    frame0: &FrameAtPoint,
    state_path: &Path,
    g: G,
    noise_scale: f64,
    stream: &mut GaussianStream,
) -> Result<Path>
where
    G: Fn(&Point) -> DVector<f64>,
{
    let m = observation.manifold_dim();
    match observation {
        ManifoldSpec::Euclidean(_) => {}
        ManifoldSpec::Sphere(_) => {
            require_sphere_frame(observation, frame0)?;
        }
        other => {
            return Err(Error::Unsupported(format!(
                "observation processes on {other} are not supported"
            )))
        }
    }
    observation.point(frame0.base().matrix().clone())?;
    if frame0.vectors().len() != m {
        return Err(Error::Input(format!(
            "observation frame has {} vectors, {observation} needs {m}",
            frame0.vectors().len()
        )));
    }
    let mut gx = g(&state_path.points[0]);
    let mut y = frame0.base().matrix().clone();
    let mut frame: Vec<DMatrix<f64>> =
        frame0.vectors().iter().map(|e| e.matrix().clone()).collect();
    let mut points = Vec::with_capacity(state_path.len());
    points.push(Point::from_matrix_unchecked(y.clone()));
    for k in 0..state_path.len() - 1 {
        let h = state_path.times[k + 1] - state_path.times[k];
        let gnext = g(&state_path.points[k + 1]);
        if gnext.len() != m || gx.len() != m {
            return Err(Error::Input(format!(
                "observation map returned {} values, {observation} needs {m}",
                gnext.len()
            )));
        }
        let mut inc = &gnext - &gx;
        if noise_scale != 0.0 {
            inc += stream.gaussian_vector(m) * (h.sqrt() * noise_scale);
        }
        let mut v = DMatrix::zeros(y.nrows(), 1);
        for (e, a) in frame.iter().zip(inc.iter()) {
            v += e * *a;
        }
        if let ManifoldSpec::Sphere(_) = observation {
            for e in frame.iter_mut() {
                *e = sphere_transport(&y, &v, e);
            }
        }
        y = observation.exp_unchecked(&y, &v);
        points.push(Point::from_matrix_unchecked(y.clone()));
        gx = gnext;
    }
    Ok(Path::from_parts_unchecked(observation, state_path.times.clone(), points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn config_validation_and_grid() {
        assert!(SimConfig::new(1.0, 0.0, 1, 0).is_err());
        assert!(SimConfig::new(1.0, 2.0, 1, 0).is_err());
        assert!(SimConfig::new(-1.0, 0.1, 1, 0).is_err());
        assert!(SimConfig::new(1.0, 0.1, 0, 0).is_err());
        let g = SimConfig::new(1.0, 0.1, 1, 0).unwrap().time_grid();
        assert_eq!(g.len(), 11);
        assert_eq!(*g.last().unwrap(), 1.0);
        let g = SimConfig::new(1.0, 0.3, 1, 0).unwrap().time_grid();
        assert_eq!(g.len(), 5);
        assert_relative_eq!(g[3], 0.9, epsilon = 1e-15);
    }

    #[test]
    fn path_validation() {
        let m = ManifoldSpec::Euclidean(1);
        let p = m.base_point();
        assert!(Path::new(m, vec![0.0, 0.0], vec![p.clone(), p.clone()]).is_err());
        assert!(Path::new(m, vec![0.0], vec![]).is_err());
        assert!(Path::new(m, vec![0.0, 1.0], vec![p.clone(), p]).is_ok());
    }

    #[test]
    fn single_step_bm() {
        let cfg = SimConfig::new(2.0, 2.0, 1, 0).unwrap();
        let mut s = GaussianStream::new(4, 0);
        let path = simulate_bm_euclidean(1, &cfg, &mut s);
        assert_eq!(path.len(), 2);
        let z = GaussianStream::new(4, 0).next_gaussian();
        assert_relative_eq!(path.last().coords()[0], 2f64.sqrt() * z, epsilon = 1e-15);
    }

    #[test]
    fn manifold_bm_reduces_to_euclidean() {
        let cfg = SimConfig::new(1.0, 0.01, 1, 0).unwrap();
        let a = simulate_bm_euclidean(2, &cfg, &mut GaussianStream::new(1, 3));
        let m = ManifoldSpec::Euclidean(2);
        let p0 = m.point(col(&[1.0, -2.0])).unwrap();
        let b = simulate_bm_manifold(m, &p0, &cfg, &mut GaussianStream::new(1, 3)).unwrap();
        for (x, y) in a.points().iter().zip(b.points()) {
            assert_relative_eq!(x.matrix() + p0.matrix(), y.matrix().clone(), epsilon = 1e-13);
        }
    }

    #[test]
    fn sphere_and_so_paths_stay_on_manifold() {
        let cfg = SimConfig::new(2.0, 1e-3, 1, 0).unwrap();
        for m in [ManifoldSpec::Sphere(3), ManifoldSpec::SpecialOrthogonal(3), ManifoldSpec::SpecialOrthogonal(4)] {
            let path = simulate_bm_manifold(m, &m.base_point(), &cfg, &mut GaussianStream::new(8, 1)).unwrap();
            assert!(path.max_membership_defect() <= MEMBERSHIP_TOL, "{m}");
        }
    }

    #[test]
    fn midpoint_refinement_structure() {
        let cfg = SimConfig::new(1.0, 0.25, 1, 0).unwrap();
        let path = simulate_bm_euclidean(2, &cfg, &mut GaussianStream::new(0, 0));
        let mut s = GaussianStream::new(0, 1);
        let once = refine_bm_midpoint(&path, &mut s).unwrap();
        let twice = refine_bm_midpoint(&once, &mut s).unwrap();
        assert_eq!(twice.len(), 17);
        for (k, p) in path.points().iter().enumerate() {
            assert_eq!(twice.points()[4 * k], *p);
            assert_relative_eq!(twice.times()[4 * k], path.times()[k], epsilon = 1e-15);
        }
        assert_relative_eq!(twice.times()[1], 1.0 / 16.0, epsilon = 1e-15);
    }

    #[test]
    fn midpoint_rule_with_unit_step() {
        // X(0)=0, X(1)=b: midpoint = b/2 + z/2
        let path = Path::euclidean(vec![0.0, 1.0], vec![vec![0.0], vec![0.8]]).unwrap();
        let z = GaussianStream::new(6, 6).next_gaussian();
        let r = refine_bm_midpoint(&path, &mut GaussianStream::new(6, 6)).unwrap();
        assert_relative_eq!(r.points()[1].coords()[0], 0.4 + 0.5 * z, epsilon = 1e-15);
    }

    #[test]
    fn midpoint_rejects_nonuniform() {
        let path = Path::euclidean(vec![0.0, 1.0, 3.0], vec![vec![0.0], vec![0.1], vec![0.2]]).unwrap();
        assert!(refine_bm_midpoint(&path, &mut GaussianStream::new(0, 0)).is_err());
    }

    #[test]
    fn develop_straight_line_is_great_circle() {
        let times: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
        let line = Path::euclidean(times.clone(), times.iter().map(|&t| vec![t, 0.0]).collect()).unwrap();
        let frame = FrameAtPoint::north_pole(3).unwrap();
        let dev = develop(&frame, &line).unwrap();
        for (t, p) in times.iter().zip(dev.points()) {
            assert_relative_eq!(p.matrix(), &col(&[t.sin(), 0.0, t.cos()]), epsilon = 1e-12);
        }
    }

    #[test]
    fn develop_zero_path_is_constant() {
        let line = Path::euclidean(vec![0.0, 0.5, 1.0], vec![vec![0.0, 0.0]; 3]).unwrap();
        let frame = FrameAtPoint::north_pole(3).unwrap();
        let dev = develop(&frame, &line).unwrap();
        assert!(dev.points().iter().all(|p| p == frame.base()));
        let back = antidevelop(&dev, &frame).unwrap();
        assert!(back.points().iter().all(|p| p.matrix().norm() == 0.0));
    }

    #[test]
    fn develop_single_segment_is_exp_of_lift() {
        let frame = FrameAtPoint::north_pole(3).unwrap();
        let seg = Path::euclidean(vec![0.0, 1.0], vec![vec![0.0, 0.0], vec![0.3, -0.7]]).unwrap();
        let dev = develop(&frame, &seg).unwrap();
        let s2 = ManifoldSpec::Sphere(3);
        let direct = s2
            .exp_map(frame.base(), &TangentVector::from_matrix_unchecked(frame.lift(&[0.3, -0.7])))
            .unwrap();
        assert_eq!(dev.last(), &direct);
    }

    #[test]
    fn develop_rejects_other_manifolds() {
        let so = ManifoldSpec::SpecialOrthogonal(3);
        let frame = FrameAtPoint::from_parts_unchecked(so.base_point(), vec![]);
        let line = Path::euclidean(vec![0.0, 1.0], vec![vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(develop(&frame, &line).is_err());
        let path = Path::from_parts_unchecked(so, vec![0.0], vec![so.base_point()]);
        assert!(matches!(antidevelop(&path, &frame), Err(Error::Unsupported(_))));
    }

    #[test]
    fn antidevelop_rejects_antipodal_steps() {
        let s2 = ManifoldSpec::Sphere(3);
        let path = Path::new(
            s2,
            vec![0.0, 1.0],
            vec![s2.base_point(), s2.point(col(&[0.0, 0.0, -1.0])).unwrap()],
        )
        .unwrap();
        let frame = FrameAtPoint::north_pole(3).unwrap();
        assert!(matches!(antidevelop(&path, &frame), Err(Error::Domain(_))));
    }

    #[test]
    fn state_space_without_drift_matches_bm() {
        let m = ManifoldSpec::Sphere(3);
        let cfg = SimConfig::new(0.5, 1e-2, 1, 0).unwrap();
        let a = simulate_bm_manifold(m, &m.base_point(), &cfg, &mut GaussianStream::new(2, 2)).unwrap();
        let zero = |_: f64, _: &Point| TangentVector::from_matrix_unchecked(DMatrix::zeros(3, 1));
        let b = simulate_state_space(m, &m.base_point(), zero, 1.0, &cfg, &mut GaussianStream::new(2, 2)).unwrap();
        for (x, y) in a.points().iter().zip(b.points()) {
            assert_relative_eq!(x.matrix(), y.matrix(), epsilon = 1e-14);
        }
    }

    #[test]
    fn state_space_follows_meridian() {
        let m = ManifoldSpec::Sphere(3);
        // rotation field about the y axis: ω × x with ω = e₂
        let field = |_: f64, p: &Point| {
            let x = p.matrix();
            TangentVector::from_matrix_unchecked(col(&[x[2], 0.0, -x[0]]))
        };
        for dt in [1e-2, 1e-3] {
            let cfg = SimConfig::new(1.0, dt, 1, 0).unwrap();
            let path = simulate_state_space(m, &m.base_point(), field, 0.0, &cfg, &mut GaussianStream::new(0, 0)).unwrap();
            let err = (path.last().matrix() - col(&[1f64.sin(), 0.0, 1f64.cos()])).norm();
            assert!(err <= dt, "dt {dt}: err {err}");
        }
    }

    #[test]
    fn state_space_linear_decay() {
        let m = ManifoldSpec::Euclidean(1);
        let decay = |_: f64, p: &Point| TangentVector::from_matrix_unchecked(-p.matrix());
        let p0 = m.point(col(&[2.0])).unwrap();
        let mut errs = Vec::new();
        for dt in [1e-2, 1e-3] {
            let cfg = SimConfig::new(1.0, dt, 1, 0).unwrap();
            let path = simulate_state_space(m, &p0, decay, 0.0, &cfg, &mut GaussianStream::new(0, 0)).unwrap();
            errs.push((path.last().coords()[0] - 2.0 * (-1f64).exp()).abs());
        }
        assert!(errs[0] < 1e-2 && errs[1] < 1e-3);
        assert!((errs[0] / errs[1] - 10.0).abs() < 0.5);
    }

    #[test]
    fn state_space_rejects_non_tangent_drift() {
        let m = ManifoldSpec::Sphere(3);
        let bad = |_: f64, p: &Point| TangentVector::from_matrix_unchecked(p.matrix().clone());
        let cfg = SimConfig::new(1.0, 0.1, 1, 0).unwrap();
        assert!(matches!(
            simulate_state_space(m, &m.base_point(), bad, 0.0, &cfg, &mut GaussianStream::new(0, 0)),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn observation_identity_euclidean() {
        let cfg = SimConfig::new(1.0, 0.05, 1, 0).unwrap();
        let x = simulate_bm_euclidean(2, &cfg, &mut GaussianStream::new(3, 0));
        let m = ManifoldSpec::Euclidean(2);
        let y0 = m.point(col(&[1.0, 1.0])).unwrap();
        let frame = FrameAtPoint::euclidean(y0.clone());
        let y = simulate_observation(m, &frame, &x, |p| DVector::from_column_slice(p.coords()), 0.0, &mut GaussianStream::new(0, 0)).unwrap();
        for (a, b) in x.points().iter().zip(y.points()) {
            assert_relative_eq!(b.matrix().clone(), y0.matrix() + a.matrix(), epsilon = 1e-13);
        }
    }

    #[test]
    fn observation_of_constant_state_is_constant() {
        let x = Path::euclidean(vec![0.0, 1.0, 2.0], vec![vec![0.4, 0.1]; 3]).unwrap();
        let frame = FrameAtPoint::north_pole(3).unwrap();
        let y = simulate_observation(ManifoldSpec::Sphere(3), &frame, &x, |p| DVector::from_column_slice(p.coords()), 0.0, &mut GaussianStream::new(0, 0)).unwrap();
        assert!(y.points().iter().all(|p| p == frame.base()));
    }

    #[test]
    fn observation_on_sphere_equals_development() {
        let times: Vec<f64> = (0..=50).map(|k| k as f64 / 50.0).collect();
        let x = Path::euclidean(times.clone(), times.iter().map(|&t| vec![t, 0.5 * t]).collect()).unwrap();
        let frame = FrameAtPoint::north_pole(3).unwrap();
        let y = simulate_observation(ManifoldSpec::Sphere(3), &frame, &x, |p| DVector::from_column_slice(p.coords()), 0.0, &mut GaussianStream::new(0, 0)).unwrap();
        let d = develop(&frame, &x).unwrap();
        for (a, b) in y.points().iter().zip(d.points()) {
            assert_relative_eq!(a.matrix(), b.matrix(), epsilon = 1e-14);
        }
    }

    #[test]
    fn observation_dimension_mismatch() {
        let x = Path::euclidean(vec![0.0, 1.0], vec![vec![0.0], vec![1.0]]).unwrap();
        let frame = FrameAtPoint::north_pole(3).unwrap();
        let r = simulate_observation(ManifoldSpec::Sphere(3), &frame, &x, |p| DVector::from_column_slice(p.coords()), 0.0, &mut GaussianStream::new(0, 0));
        assert!(matches!(r, Err(Error::Input(_))));
    }

    #[test]
    fn interpolation_on_sphere_is_geodesic() {
        let s2 = ManifoldSpec::Sphere(3);
        let q = s2.point(col(&[1.0, 0.0, 0.0])).unwrap();
        let path = Path::new(s2, vec![0.0, 1.0], vec![s2.base_point(), q]).unwrap();
        let mid = path.interpolate(0.5).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(mid.matrix(), &col(&[h, 0.0, h]), epsilon = 1e-15);
        assert_eq!(path.densify(4).unwrap().len(), 5);
        assert!(path.interpolate(1.5).is_err());
    }
}
