//! Partition sums (Itô, Stratonovich, quadratic variation) and scalar /
//! vector SDE solvers driven by sampled Brownian increments.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::manifold::{ManifoldSpec, Point};
use crate::process::{Path, SimConfig};
use crate::random::GaussianStream;

/// A strictly increasing grid `0 = t₀ < … < t_N = T`.
#[derive(Debug, Clone, Serialize)]
pub struct Partition {
    points: Vec<f64>,
    mesh: f64,
    uniform: bool,
}

impl Partition {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Input("a partition needs at least two points".into()));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Input("partition points must be strictly increasing".into()));
        }
        let steps: Vec<f64> = points.windows(2).map(|w| w[1] - w[0]).collect();
        let mesh = steps.iter().copied().fold(0.0, f64::max);
        let min = steps.iter().copied().fold(f64::INFINITY, f64::min);
        let uniform = mesh - min <= 1e-9 * mesh;
        Ok(Partition { points, mesh, uniform })
    }

    /// `N` equal steps on `[0, T]`.
    pub fn uniform(horizon: f64, n: usize) -> Result<Self> {
        if n == 0 || !(horizon > 0.0) {
            return Err(Error::Input("uniform partition needs N ≥ 1 and T > 0".into()));
        }
        let h = horizon / n as f64;
        let mut pts: Vec<f64> = (0..n).map(|k| k as f64 * h).collect();
        pts.push(horizon);
        Ok(Partition { points: pts, mesh: h, uniform: true })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn mesh(&self) -> f64 {
        self.mesh
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Input(format!(
            "integrand and integrator sampled on different grids ({} vs {} points)",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Input("need at least two grid samples".into()));
    }
    Ok(())
}

/// Itô sum `Σ X(t_k)·(Y(t_{k+1}) − Y(t_k))` (left endpoints).
pub fn ito_sum(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    Ok(x.iter()
        .zip(y.windows(2))
        .map(|(a, w)| a * (w[1] - w[0]))
        .sum())
}

/// Right-endpoint sum `Σ X(t_{k+1})·(Y(t_{k+1}) − Y(t_k))`.
pub fn right_endpoint_sum(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    Ok(x[1..]
        .iter()
        .zip(y.windows(2))
        .map(|(a, w)| a * (w[1] - w[0]))
        .sum())
}

/// Stratonovich sum with averaged endpoints `Σ ½(X(t_k) + X(t_{k+1}))·ΔY_k`.
pub fn stratonovich_sum(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    Ok(x.windows(2)
        .zip(y.windows(2))
        .map(|(a, w)| 0.5 * (a[0] + a[1]) * (w[1] - w[0]))
        .sum())
}

/// Quadratic covariation `Σ ΔX_k·ΔY_k`.
pub fn quadratic_covariation(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    Ok(x.windows(2)
        .zip(y.windows(2))
        .map(|(a, b)| (a[1] - a[0]) * (b[1] - b[0]))
        .sum())
}

/// Quadratic variation `Σ (Y(t_{k+1}) − Y(t_k))²` over the sampled grid.
pub fn quadratic_variation(y: &[f64]) -> f64 {
    y.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum()
}

/// Brownian path sampled on an arbitrary partition, starting at 0.
pub fn brownian_on_partition(partition: &Partition, stream: &mut GaussianStream) -> Vec<f64> {
    let mut out = Vec::with_capacity(partition.len());
    let mut b = 0.0;
    out.push(b);
    for w in partition.points.windows(2) {
        b += (w[1] - w[0]).sqrt() * stream.next_gaussian();
        out.push(b);
    }
    out
}

type DriftFn = dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync;
type DiffusionFn = dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Itô diffusion `dX = b(t, X) dt + Σ(t, X) dB` with `X ∈ ℝ^{d_x}`, `B ∈ ℝ^{d_B}`.
pub struct DiffusionSpec {
    drift: Box<DriftFn>,
    diffusion: Box<DiffusionFn>,
    state_dim: usize,
    driver_dim: usize,
}

impl std::fmt::Debug for DiffusionSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiffusionSpec")
            .field("state_dim", &self.state_dim)
            .field("driver_dim", &self.driver_dim)
            .finish_non_exhaustive()
    }
}

impl DiffusionSpec {
    pub fn new<B, S>(state_dim: usize, driver_dim: usize, drift: B, diffusion: S) -> Self
    where
        B: Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        S: Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        DiffusionSpec {
            drift: Box::new(drift),
            diffusion: Box::new(diffusion),
            state_dim,
            driver_dim,
        }
    }

    /// Scalar state and scalar driver.
    pub fn scalar<B, S>(drift: B, diffusion: S) -> Self
    where
        B: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        S: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        DiffusionSpec::new(
            1,
            1,
            move |t, x| DVector::from_element(1, drift(t, x[0])),
            move |t, x| DMatrix::from_element(1, 1, diffusion(t, x[0])),
        )
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn driver_dim(&self) -> usize {
        self.driver_dim
    }

    pub fn drift(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(t, x)
    }

    pub fn diffusion(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        (self.diffusion)(t, x)
    }

    /// Probes the coefficient shapes at `(t, x)`.
    pub fn check_shapes(&self, t: f64, x: &DVector<f64>) -> Result<()> {
        let b = self.drift(t, x);
        let s = self.diffusion(t, x);
        if b.len() != self.state_dim || s.shape() != (self.state_dim, self.driver_dim) {
            return Err(Error::Input(format!(
                "diffusion coefficients have shapes {} and {:?}, expected {} and ({}, {})",
                b.len(),
                s.shape(),
                self.state_dim,
                self.state_dim,
                self.driver_dim
            )));
        }
        Ok(())
    }
}

/// Samples the driver increments `ΔB_k ~ N(0, (t_{k+1} − t_k) I)`.
pub fn brownian_increments(
    times: &[f64],
    dim: usize,
    stream: &mut GaussianStream,
) -> Vec<DVector<f64>> {
    times
        .windows(2)
        .map(|w| stream.gaussian_vector(dim) * (w[1] - w[0]).sqrt())
        .collect()
}

/// Sums consecutive groups of `factor` increments (coarsening a fine driver).
pub fn coarsen_increments(fine: &[DVector<f64>], factor: usize) -> Vec<DVector<f64>> {
    fine.chunks(factor)
        .map(|c| c.iter().skip(1).fold(c[0].clone(), |acc, x| acc + x))
        .collect()
}

fn euclidean_path(times: Vec<f64>, states: Vec<DVector<f64>>) -> Path {
    let d = states[0].len();
    let m = ManifoldSpec::Euclidean(d);
    let points = states
        .into_iter()
        .map(|x| Point::from_matrix_unchecked(DMatrix::from_column_slice(d, 1, x.as_slice())))
        .collect();
    Path::from_parts_unchecked(m, times, points)
}

/// Euler–Maruyama on a given grid with given driver increments:
/// `X_{k+1} = X_k + b(t_k, X_k)·Δt + Σ(t_k, X_k)·ΔB_k`.
pub fn euler_maruyama_driven(
    spec: &DiffusionSpec,
    x0: &DVector<f64>,
    times: &[f64],
    increments: &[DVector<f64>],
) -> Result<Path> {
    if x0.len() != spec.state_dim {
        return Err(Error::Input(format!(
            "initial state has {} components, spec expects {}",
            x0.len(),
            spec.state_dim
        )));
    }
    if increments.len() + 1 != times.len() {
        return Err(Error::Input("need one driver increment per time step".into()));
    }
    spec.check_shapes(times[0], x0)?;
    let mut x = x0.clone();
    let mut states = Vec::with_capacity(times.len());
    states.push(x.clone());
    for (k, (w, db)) in times.windows(2).zip(increments).enumerate() {
        let h = w[1] - w[0];
        x = &x + spec.drift(w[0], &x) * h + spec.diffusion(w[0], &x) * db;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { step: k + 1 });
        }
        states.push(x.clone());
    }
    Ok(euclidean_path(times.to_vec(), states))
}

/// Euler–Maruyama with increments drawn from `stream` on the config's grid.
pub fn euler_maruyama(
    spec: &DiffusionSpec,
    x0: &DVector<f64>,
    cfg: &SimConfig,
    stream: &mut GaussianStream,
) -> Result<Path> {
    let times = cfg.time_grid();
    let inc = brownian_increments(&times, spec.driver_dim, stream);
    euler_maruyama_driven(spec, x0, &times, &inc)
}

/// Itô form of the scalar Stratonovich equation `dX = σ(t, X) ∘ dB`:
/// drift `½σ·∂σ/∂x`, diffusion `σ`.
pub fn strat_to_ito<S, D>(sigma: S, dsigma_dx: D) -> DiffusionSpec
where
    S: Fn(f64, f64) -> f64 + Send + Sync + Clone + 'static,
    D: Fn(f64, f64) -> f64 + Send + Sync + 'static,
{
    let s = sigma.clone();
    DiffusionSpec::scalar(move |t, x| 0.5 * s(t, x) * dsigma_dx(t, x), sigma)
}

/// Predictor–corrector (stochastic Heun) scheme for `dX = σ(t, X) ∘ dB` on a
/// given grid with given scalar increments.
pub fn heun_stratonovich_driven<S>(sigma: S, x0: f64, times: &[f64], increments: &[f64]) -> Result<Path>
where
    S: Fn(f64, f64) -> f64,
{
    if increments.len() + 1 != times.len() {
        return Err(Error::Input("need one driver increment per time step".into()));
    }
    let mut x = x0;
    let mut states = Vec::with_capacity(times.len());
    states.push(DVector::from_element(1, x));
    for (k, (w, &db)) in times.windows(2).zip(increments).enumerate() {
        let s0 = sigma(w[0], x);
        let predictor = x + s0 * db;
        x += 0.5 * (s0 + sigma(w[1], predictor)) * db;
        if !x.is_finite() {
            return Err(Error::Diverged { step: k + 1 });
        }
        states.push(DVector::from_element(1, x));
    }
    Ok(euclidean_path(times.to_vec(), states))
}

pub fn heun_stratonovich<S>(
    sigma: S,
    x0: f64,
    cfg: &SimConfig,
    stream: &mut GaussianStream,
) -> Result<Path>
where
    S: Fn(f64, f64) -> f64,
{
    let times = cfg.time_grid();
    let inc: Vec<f64> = times
        .windows(2)
        .map(|w| (w[1] - w[0]).sqrt() * stream.next_gaussian())
        .collect();
    heun_stratonovich_driven(sigma, x0, &times, &inc)
}
