//! so(n) bases and coloured left-invariant Brownian motion on SO(n).
//!
//! A step of the walk is `W ← W·exp(√δ·Σᵢ βᵢ Aᵢ)` with `β ~ N(0, C)`.
//! SO(2) and SO(3) use fixed-size kernels; larger groups go through the
//! dense matrix exponential. All kernels consume the stream in the same
//! order (`d` normals per step), so a run is reproducible from its seed.

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{matrix_exp, reorthogonalize, rodrigues};
use crate::manifold::{ManifoldSpec, Point};
use crate::process::{Path, SimConfig, REORTHOGONALIZE_EVERY};
use crate::random::{ColourSpec, GaussianStream};

/// Ordered basis `A₁..A_d` of so(n), orthonormal under `⟨X, Y⟩ = ½·Tr{YᵀX}`.
///
/// `Aₖ` for the k-th pair `i < j` (lexicographic) has `+1` at `(j, i)` and
/// `−1` at `(i, j)`. For n = 3 this is
/// `[[0,−1,0],[1,0,0],[0,0,0]]`, `[[0,0,−1],[0,0,0],[1,0,0]]`, `[[0,0,0],[0,0,−1],[0,1,0]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LieAlgebraBasis {
    n: usize,
    pairs: Vec<(usize, usize)>,
    matrices: Vec<DMatrix<f64>>,
}

pub fn so_basis(n: usize) -> Result<LieAlgebraBasis> {
    if n < 2 {
        return Err(Error::Input(format!("so(n) needs n ≥ 2, got {n}")));
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let matrices = pairs
        .iter()
        .map(|&(i, j)| {
            let mut a = DMatrix::zeros(n, n);
            a[(j, i)] = 1.0;
            a[(i, j)] = -1.0;
            a
        })
        .collect();
    Ok(LieAlgebraBasis { n, pairs, matrices })
}

/// `½·Tr{YᵀX}`.
pub fn so_inner(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    0.5 * x.dot(y)
}

impl LieAlgebraBasis {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.matrices.len()
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    /// Index pairs `(i, j)`, `i < j`, in basis order.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// `Σ cᵢ Aᵢ`.
    pub fn combine(&self, coeffs: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for (&(i, j), &c) in self.pairs.iter().zip(coeffs) {
            out[(j, i)] += c;
            out[(i, j)] -= c;
        }
        out
    }

    /// Coordinates `⟨X, Aᵢ⟩` of a skew matrix.
    pub fn coefficients(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.matrices.iter().map(|a| so_inner(x, a)).collect()
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| so_inner(&self.matrices[i], &self.matrices[j]))
    }
}

/// Parameters `(g, C)` of a Brownian distribution `N(g, C)` on SO(n); `C` is
/// the covariance of the driving noise in the coordinates of `basis`.
#[derive(Debug, Clone)]
pub struct BrownianDistParams {
    g: Point,
    colour: ColourSpec,
    basis: LieAlgebraBasis,
}

impl BrownianDistParams {
    pub fn new(g: DMatrix<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = g.nrows();
        let basis = so_basis(n)?;
        let g = ManifoldSpec::SpecialOrthogonal(n).point(g)?;
        if covariance.shape() != (basis.dim(), basis.dim()) {
            return Err(Error::Input(format!(
                "covariance must be {d}x{d} for SO({n}), got {}x{}",
                covariance.nrows(),
                covariance.ncols(),
                d = basis.dim()
            )));
        }
        let colour = ColourSpec::new(covariance)?;
        Ok(BrownianDistParams { g, colour, basis })
    }

    /// Isotropic SO(2) parameters `N(g, σ²)`.
    pub fn so2(g: DMatrix<f64>, sigma2: f64) -> Result<Self> {
        BrownianDistParams::new(g, DMatrix::from_element(1, 1, sigma2))
    }

    pub fn n(&self) -> usize {
        self.basis.n
    }

    pub fn g(&self) -> &Point {
        &self.g
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        self.colour.covariance()
    }

    pub fn colour(&self) -> &ColourSpec {
        &self.colour
    }

    pub fn basis(&self) -> &LieAlgebraBasis {
        &self.basis
    }

    /// Same covariance, different starting point.
    pub fn with_g(&self, g: DMatrix<f64>) -> Result<Self> {
        let g = ManifoldSpec::SpecialOrthogonal(self.n()).point(g)?;
        Ok(BrownianDistParams { g, ..self.clone() })
    }
}

enum Kernel {
    So2 {
        w: Matrix2<f64>,
        scale: f64,
    },
    So3 {
        w: Matrix3<f64>,
        factor: Matrix3<f64>,
    },
    General {
        w: DMatrix<f64>,
        factor: DMatrix<f64>,
    },
}

/// Stateful stepper for the left-invariant walk.
struct LeftWalk<'a> {
    params: &'a BrownianDistParams,
    kernel: Kernel,
    steps: usize,
}

impl<'a> LeftWalk<'a> {
    fn new(params: &'a BrownianDistParams) -> Self {
        let g = params.g.matrix();
        let l = params.colour.factor();
        let kernel = match params.n() {
            2 => Kernel::So2 {
                w: Matrix2::from_iterator(g.iter().copied()),
                scale: l[(0, 0)],
            },
            3 => {
                // Σ βᵢ Aᵢ = [ω]× with ω = (β₃, −β₂, β₁); fold that map into the factor.
                let perm = Matrix3::new(0.0, 0.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0);
                let l3 = Matrix3::from_iterator(l.iter().copied());
                Kernel::So3 {
                    w: Matrix3::from_iterator(g.iter().copied()),
                    factor: perm * l3,
                }
            }
            _ => Kernel::General { w: g.clone(), factor: l.clone() },
        };
        LeftWalk { params, kernel, steps: 0 }
    }

    #[inline]
    fn step(&mut self, sqrt_h: f64, stream: &mut GaussianStream) {
        self.steps += 1;
        let project = self.steps.is_multiple_of(REORTHOGONALIZE_EVERY);
        match &mut self.kernel {
            Kernel::So2 { w, scale } => {
                let theta = sqrt_h * *scale * stream.next_gaussian();
                let (s, c) = theta.sin_cos();
                *w *= Matrix2::new(c, -s, s, c);
                if project {
                    // nearest rotation to [[a, ·], [b, ·]]: normalise the rotational part
                    let a = 0.5 * (w[(0, 0)] + w[(1, 1)]);
                    let b = 0.5 * (w[(1, 0)] - w[(0, 1)]);
                    let r = a.hypot(b);
                    *w = Matrix2::new(a / r, -b / r, b / r, a / r);
                }
            }
            Kernel::So3 { w, factor } => {
                let z = Vector3::new(
                    stream.next_gaussian(),
                    stream.next_gaussian(),
                    stream.next_gaussian(),
                );
                let omega = *factor * z * sqrt_h;
                *w *= rodrigues(&omega);
                if project {
                    let d = DMatrix::from_iterator(3, 3, w.iter().copied());
                    *w = Matrix3::from_iterator(reorthogonalize(&d).iter().copied());
                }
            }
            Kernel::General { w, factor } => {
                let d = factor.nrows();
                let z = stream.gaussian_vector(d);
                let beta = &*factor * z * sqrt_h;
                let a = self.params.basis.combine(beta.as_slice());
                *w = &*w * matrix_exp(&a);
                if project {
                    *w = reorthogonalize(w);
                }
            }
        }
    }

    fn state(&self) -> DMatrix<f64> {
        match &self.kernel {
            Kernel::So2 { w, .. } => DMatrix::from_iterator(2, 2, w.iter().copied()),
            Kernel::So3 { w, .. } => DMatrix::from_iterator(3, 3, w.iter().copied()),
            Kernel::General { w, .. } => w.clone(),
        }
    }
}

/// Coloured left-invariant Brownian motion started at `g`, on the config's grid.
pub fn simulate_left_bm(
    params: &BrownianDistParams,
    cfg: &SimConfig,
    stream: &mut GaussianStream,
) -> Path {
    let times = cfg.time_grid();
    let mut walk = LeftWalk::new(params);
    let mut points = Vec::with_capacity(times.len());
    points.push(Point::from_matrix_unchecked(walk.state()));
    for w in times.windows(2) {
        walk.step((w[1] - w[0]).sqrt(), stream);
        points.push(Point::from_matrix_unchecked(walk.state()));
    }
    Path::from_parts_unchecked(ManifoldSpec::SpecialOrthogonal(params.n()), times, points)
}

fn steps_per_unit_time(delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Input(format!("step δ must lie in (0, 1], got {delta}")));
    }
    let k = (1.0 / delta).round();
    if (k * delta - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!("step δ = {delta} does not divide 1")));
    }
    Ok(k as usize)
}

/// One draw from `N(g, C)`: the walk's position after unit time with step `δ`.
pub fn sample_brownian_dist(
    params: &BrownianDistParams,
    delta: f64,
    stream: &mut GaussianStream,
) -> Result<Point> {
    let k = steps_per_unit_time(delta)?;
    let sqrt_h = delta.sqrt();
    let mut walk = LeftWalk::new(params);
    for _ in 0..k {
        walk.step(sqrt_h, stream);
    }
    Ok(Point::from_matrix_unchecked(walk.state()))
}

/// `m` independent draws; draw `i` uses stream `(seed, i)`.
pub fn sample_brownian_dist_many(
    params: &BrownianDistParams,
    delta: f64,
    m: usize,
    seed: u64,
) -> Result<Vec<Point>> {
    steps_per_unit_time(delta)?;
    (0..m as u64)
        .into_par_iter()
        .map(|i| sample_brownian_dist(params, delta, &mut GaussianStream::new(seed, i)))
        .collect()
}
