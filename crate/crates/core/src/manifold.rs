//! Embedded manifolds ℝⁿ, Sⁿ⁻¹ ⊂ ℝⁿ and SO(n) ⊂ ℝⁿˣⁿ.
//!
//! Points and tangent vectors are stored in ambient coordinates: an `n×1`
//! column for ℝⁿ and the sphere, an `n×n` matrix for SO(n). The metric is
//! the Euclidean one on ℝⁿ and Sⁿ⁻¹ and `⟨X, Y⟩ = ½·Tr{YᵀX}` on SO(n), under
//! which the canonical so(n) basis (see [`crate::liegroup::so_basis`]) is
//! orthonormal.
//!
//! The ½ scaling differs from the `1/√2` factor sometimes quoted for so(2);
//! with `1/√2` the generator `[[0,−1],[1,0]]` would have norm `2^¼`, not 1.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matrix_exp, matrix_log_so, skew_part, CUT_LOCUS_TOL};

/// Membership and tangency tolerance.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Which embedded manifold a point lives on.
///
/// `Sphere(n)` is the unit sphere in ℝⁿ (manifold dimension `n − 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "n")]
pub enum ManifoldSpec {
    Euclidean(usize),
    Sphere(usize),
    SpecialOrthogonal(usize),
}

/// A point in ambient coordinates, validated against its manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct Point(DMatrix<f64>);

/// A tangent vector in ambient coordinates. The base point is supplied by the
/// caller of each operation and tangency is checked there.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(DMatrix<f64>);

impl Point {
    /// Wraps coordinates without validation. Intended for hot loops whose
    /// output is known to be on the manifold.
    pub fn from_matrix_unchecked(m: DMatrix<f64>) -> Self {
        Point(m)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Ambient coordinates in column-major order.
    pub fn coords(&self) -> &[f64] {
        self.0.as_slice()
    }
}

impl TangentVector {
    pub fn from_matrix_unchecked(m: DMatrix<f64>) -> Self {
        TangentVector(m)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scaled(&self, s: f64) -> TangentVector {
        TangentVector(&self.0 * s)
    }
}

impl fmt::Display for ManifoldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ManifoldSpec::Euclidean(n) => write!(f, "euclidean:{n}"),
            ManifoldSpec::Sphere(n) => write!(f, "sphere:{n}"),
            ManifoldSpec::SpecialOrthogonal(n) => write!(f, "so:{n}"),
        }
    }
}

impl FromStr for ManifoldSpec {
    type Err = Error;

    /// Parses `kind:n` with kind one of `euclidean`/`r`, `sphere`/`s`, `so`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, n) = s
            .split_once(':')
            .ok_or_else(|| Error::Input(format!("manifold `{s}`: expected kind:n")))?;
        let n: usize = n
            .trim()
            .parse()
            .map_err(|_| Error::Input(format!("manifold `{s}`: bad dimension")))?;
        let spec = match kind.trim().to_ascii_lowercase().as_str() {
            "euclidean" | "r" | "rn" => ManifoldSpec::Euclidean(n),
            "sphere" | "s" => ManifoldSpec::Sphere(n),
            "so" => ManifoldSpec::SpecialOrthogonal(n),
            other => return Err(Error::Input(format!("unknown manifold kind `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl ManifoldSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ManifoldSpec::Euclidean(n) => n >= 1,
            ManifoldSpec::Sphere(n) => n >= 2,
            ManifoldSpec::SpecialOrthogonal(n) => n >= 2,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!("{self}: dimension too small")))
        }
    }

    /// Shape of the ambient coordinate matrix.
    pub fn ambient_shape(&self) -> (usize, usize) {
        match *self {
            ManifoldSpec::Euclidean(n) | ManifoldSpec::Sphere(n) => (n, 1),
            ManifoldSpec::SpecialOrthogonal(n) => (n, n),
        }
    }

    /// Number of ambient coordinates (`n` or `n²`).
    pub fn ambient_dim(&self) -> usize {
        let (r, c) = self.ambient_shape();
        r * c
    }

    /// Intrinsic dimension: `n`, `n − 1` or `n(n − 1)/2`.
    pub fn manifold_dim(&self) -> usize {
        match *self {
            ManifoldSpec::Euclidean(n) => n,
            ManifoldSpec::Sphere(n) => n - 1,
            ManifoldSpec::SpecialOrthogonal(n) => n * (n - 1) / 2,
        }
    }

    fn check_shape(&self, m: &DMatrix<f64>, what: &str) -> Result<()> {
        let want = self.ambient_shape();
        if m.shape() != want {
            return Err(Error::Input(format!(
                "{what}: expected {}x{} ambient coordinates for {self}, got {}x{}",
                want.0,
                want.1,
                m.nrows(),
                m.ncols()
            )));
        }
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::Input(format!("{what}: non-finite coordinates")));
        }
        Ok(())
    }

    /// Distance of ambient coordinates from the manifold's defining equations.
    pub fn membership_defect(&self, m: &DMatrix<f64>) -> f64 {
        match *self {
            ManifoldSpec::Euclidean(_) => 0.0,
            ManifoldSpec::Sphere(_) => (m.norm() - 1.0).abs(),
            ManifoldSpec::SpecialOrthogonal(n) => {
                (m.transpose() * m - DMatrix::identity(n, n)).norm()
            }
        }
    }

    /// Validates ambient coordinates as a point of this manifold.
    pub fn point(&self, coords: DMatrix<f64>) -> Result<Point> {
        self.check_shape(&coords, "point")?;
        let defect = self.membership_defect(&coords);
        if defect > MEMBERSHIP_TOL {
            return Err(Error::Input(format!(
                "point is off {self} (defect {defect:e})"
            )));
        }
        if let ManifoldSpec::SpecialOrthogonal(_) = self {
            if coords.determinant() <= 0.0 {
                return Err(Error::Input("point has determinant −1, not in SO(n)".into()));
            }
        }
        Ok(Point(coords))
    }

    /// Convenience constructor from a slice (column-major for SO(n)).
    pub fn point_from_slice(&self, coords: &[f64]) -> Result<Point> {
        let (r, c) = self.ambient_shape();
        if coords.len() != r * c {
            return Err(Error::Input(format!(
                "point: expected {} coordinates for {self}, got {}",
                r * c,
                coords.len()
            )));
        }
        self.point(DMatrix::from_column_slice(r, c, coords))
    }

    /// The origin of ℝⁿ, the north pole `e_n` of the sphere, the identity of SO(n).
    pub fn base_point(&self) -> Point {
        match *self {
            ManifoldSpec::Euclidean(n) => Point(DMatrix::zeros(n, 1)),
            ManifoldSpec::Sphere(n) => {
                let mut m = DMatrix::zeros(n, 1);
                m[(n - 1, 0)] = 1.0;
                Point(m)
            }
            ManifoldSpec::SpecialOrthogonal(n) => Point(DMatrix::identity(n, n)),
        }
    }

    /// Riemannian inner product of two tangent directions.
    pub fn inner(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let dot = a.dot(b);
        match self {
            ManifoldSpec::SpecialOrthogonal(_) => 0.5 * dot,
            _ => dot,
        }
    }

    pub fn norm(&self, v: &DMatrix<f64>) -> f64 {
        self.inner(v, v).sqrt()
    }

    fn tangency_defect(&self, p: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
        match self {
            ManifoldSpec::Euclidean(_) => 0.0,
            ManifoldSpec::Sphere(_) => p.dot(v).abs(),
            ManifoldSpec::SpecialOrthogonal(_) => {
                let a = p.transpose() * v;
                (&a + a.transpose()).amax() * 0.5
            }
        }
    }

    /// Validates a direction as tangent at `p`.
    pub fn tangent(&self, p: &Point, v: DMatrix<f64>) -> Result<TangentVector> {
        self.check_shape(&v, "tangent vector")?;
        let scale = v.amax().max(1.0);
        let defect = self.tangency_defect(&p.0, &v);
        if defect > MEMBERSHIP_TOL * scale {
            return Err(Error::Input(format!(
                "vector is not tangent to {self} at the base point (defect {defect:e})"
            )));
        }
        Ok(TangentVector(v))
    }

    /// Orthogonal projection of an ambient vector onto `T_pM`.
    pub fn project_tangent(&self, p: &Point, v: &DMatrix<f64>) -> Result<TangentVector> {
        self.check_shape(&p.0, "base point")?;
        self.check_shape(v, "ambient vector")?;
        Ok(TangentVector(self.project_unchecked(&p.0, v)))
    }

    pub(crate) fn project_unchecked(&self, p: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            ManifoldSpec::Euclidean(_) => v.clone(),
            ManifoldSpec::Sphere(_) => v - p * p.dot(v),
            ManifoldSpec::SpecialOrthogonal(_) => p * skew_part(&(p.transpose() * v)),
        }
    }

    /// Riemannian exponential `Exp_p(v)`.
    pub fn exp_map(&self, p: &Point, v: &TangentVector) -> Result<Point> {
        let v = self.tangent(p, v.0.clone())?;
        Ok(Point(self.exp_unchecked(&p.0, &v.0)))
    }

    pub(crate) fn exp_unchecked(&self, p: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            ManifoldSpec::Euclidean(_) => p + v,
            ManifoldSpec::Sphere(_) => sphere_exp(p, v),
            ManifoldSpec::SpecialOrthogonal(_) => {
                let a = skew_part(&(p.transpose() * v));
                p * matrix_exp(&a)
            }
        }
    }

    /// Inverse of [`exp_map`](Self::exp_map) on the principal branch. Cut-locus
    /// inputs (antipodes, rotations by π) are errors.
    pub fn log_map(&self, p: &Point, q: &Point) -> Result<TangentVector> {
        self.check_shape(&p.0, "base point")?;
        self.check_shape(&q.0, "target point")?;
        match self {
            ManifoldSpec::Euclidean(_) => Ok(TangentVector(&q.0 - &p.0)),
            ManifoldSpec::Sphere(_) => sphere_log(&p.0, &q.0).map(TangentVector),
            ManifoldSpec::SpecialOrthogonal(_) => {
                let a = matrix_log_so(&(p.0.transpose() * &q.0))?;
                Ok(TangentVector(&p.0 * a))
            }
        }
    }

    /// The geodesic `t ↦ Exp_p(t·v)`.
    pub fn geodesic(&self, p: &Point, v: &TangentVector, t: f64) -> Result<Point> {
        self.exp_map(p, &v.scaled(t))
    }

    /// Transports `w` along the geodesic `t ↦ Exp_p(t·v)` to `t = 1`.
    ///
    /// Only spheres are supported. The component of `w` along `v̂` turns with
    /// the great circle; the orthogonal component is unchanged.
    pub fn parallel_transport(
        &self,
        p: &Point,
        v: &TangentVector,
        w: &TangentVector,
    ) -> Result<TangentVector> {
        match self {
            ManifoldSpec::Sphere(_) => {
                let v = self.tangent(p, v.0.clone())?;
                let w = self.tangent(p, w.0.clone())?;
                Ok(TangentVector(sphere_transport(&p.0, &v.0, &w.0)))
            }
            other => Err(Error::Unsupported(format!(
                "parallel transport is only implemented on spheres, not {other}"
            ))),
        }
    }
}

/// `cos‖v‖·p + sin‖v‖·v/‖v‖`, renormalised.
pub(crate) fn sphere_exp(p: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let theta = v.norm();
    let sinc = if theta < 1e-6 {
        1.0 - theta * theta / 6.0
    } else {
        theta.sin() / theta
    };
    let mut q = p * theta.cos() + v * sinc;
    let n = q.norm();
    q /= n;
    q
}

pub(crate) fn sphere_log(p: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let c = p.dot(q);
    let tangential = q - p * c;
    let s = tangential.norm();
    let theta = s.atan2(c);
    if PI - theta < CUT_LOCUS_TOL {
        return Err(Error::Domain(
            "sphere log: points are antipodal (cut locus)".into(),
        ));
    }
    if s == 0.0 {
        return Ok(DMatrix::zeros(p.nrows(), 1));
    }
    Ok(tangential * (theta / s))
}

pub(crate) fn sphere_transport(
    p: &DMatrix<f64>,
    v: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> DMatrix<f64> {
    let theta = v.norm();
    if theta == 0.0 {
        return w.clone();
    }
    let u = v / theta;
    let along = u.dot(w);
    let (s, c) = theta.sin_cos();
    w - &u * along + (&u * c - p * s) * along
}

/// An orthonormal frame of tangent vectors at a point.
#[derive(Debug, Clone)]
pub struct FrameAtPoint {
    base: Point,
    vectors: Vec<TangentVector>,
}

impl FrameAtPoint {
    /// Validates tangency and orthonormality within [`MEMBERSHIP_TOL`].
    pub fn new(manifold: ManifoldSpec, base: Point, vectors: Vec<DMatrix<f64>>) -> Result<Self> {
        let vectors = vectors
            .into_iter()
            .map(|v| manifold.tangent(&base, v))
            .collect::<Result<Vec<_>>>()?;
        let defect = frame_defect(manifold, &vectors);
        if defect > MEMBERSHIP_TOL {
            return Err(Error::Input(format!(
                "frame is not orthonormal (max Gram defect {defect:e})"
            )));
        }
        Ok(FrameAtPoint { base, vectors })
    }

    pub(crate) fn from_parts_unchecked(base: Point, vectors: Vec<TangentVector>) -> Self {
        FrameAtPoint { base, vectors }
    }

    /// Standard basis `e_1..e_n` of ℝⁿ at `base`.
    pub fn euclidean(base: Point) -> Self {
        let n = base.0.nrows();
        let vectors = (0..n)
            .map(|i| {
                let mut e = DMatrix::zeros(n, 1);
                e[(i, 0)] = 1.0;
                TangentVector(e)
            })
            .collect();
        FrameAtPoint { base, vectors }
    }

    /// Frame `e_1..e_{n−1}` at the north pole `e_n` of `Sphere(n)`.
    pub fn north_pole(n: usize) -> Result<Self> {
        let m = ManifoldSpec::Sphere(n);
        m.validate()?;
        let base = m.base_point();
        let vectors = (0..n - 1)
            .map(|i| {
                let mut e = DMatrix::zeros(n, 1);
                e[(i, 0)] = 1.0;
                TangentVector(e)
            })
            .collect();
        Ok(FrameAtPoint { base, vectors })
    }

    /// Some orthonormal frame at a point `p` of a sphere: the standard basis
    /// minus its member most aligned with `p`, projected to the tangent
    /// plane and Gram–Schmidt orthonormalised.
    pub fn sphere_at(p: &Point) -> Result<Self> {
        let u = &p.0;
        let n = u.nrows();
        let m = ManifoldSpec::Sphere(n);
        if u.ncols() != 1 {
            return Err(Error::Input(format!("expected a column vector, got {}x{}", n, u.ncols())));
        }
        m.validate()?;
        let skip = (0..n)
            .max_by(|&a, &b| u[(a, 0)].abs().total_cmp(&u[(b, 0)].abs()))
            .unwrap_or(0);
        let mut vectors: Vec<DMatrix<f64>> = Vec::with_capacity(n - 1);
        for i in (0..n).filter(|&i| i != skip) {
            let mut v = DMatrix::zeros(n, 1);
            v[(i, 0)] = 1.0;
            v -= u * u.dot(&v);
            for e in &vectors {
                let c = e.dot(&v);
                v -= e * c;
            }
            let norm = v.norm();
            vectors.push(v / norm);
        }
        FrameAtPoint::new(m, p.clone(), vectors)
    }

    pub fn base(&self) -> &Point {
        &self.base
    }

    pub fn vectors(&self) -> &[TangentVector] {
        &self.vectors
    }

    /// Ambient vector `Σ cᵢ eᵢ`.
    pub fn lift(&self, coeffs: &[f64]) -> DMatrix<f64> {
        let (r, c) = self.base.0.shape();
        let mut out = DMatrix::zeros(r, c);
        for (e, &a) in self.vectors.iter().zip(coeffs) {
            out += &e.0 * a;
        }
        out
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn orthonormality_defect(&self, manifold: ManifoldSpec) -> f64 {
        frame_defect(manifold, &self.vectors)
    }
}

fn frame_defect(manifold: ManifoldSpec, vectors: &[TangentVector]) -> f64 {
    let mut worst = 0.0f64;
    for (i, a) in vectors.iter().enumerate() {
        for (j, b) in vectors.iter().enumerate().skip(i) {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((manifold.inner(&a.0, &b.0) - target).abs());
        }
    }
    worst
}
