//! Method-of-moments estimation of `(g, C)` from samples `yᵢ ~ N(g, C)` on SO(n).
//!
//! The extrinsic mean satisfies `E[y] = g·exp(Z)` with `Z = ½ Σ C_ij Aᵢ Aⱼ`
//! symmetric, so a polar decomposition of the sample mean yields `ĝ` and
//! `exp(Ẑ)`. On SO(3) the map `C ↦ Z` is invertible; on SO(n), n > 3, only
//! structured covariances (here: diagonal) can be attempted. The same idea
//! applies to any orthogonal representation `f` with `Z_f = ½ Σ C_ij aᵢ aⱼ`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{matrix_exp, matrix_log_spd, polar_decompose, qr_q, sym_part};
use crate::liegroup::{so_basis, so_inner, LieAlgebraBasis};
use crate::manifold::{ManifoldSpec, Point};

/// Symmetric generator `Z` of the mean decay `E[y] = g·exp(Z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix(DMatrix<f64>);

impl GeneratorMatrix {
    /// Accepts matrices symmetric to within `1e−12` (relative).
    pub fn new(z: DMatrix<f64>) -> Result<Self> {
        if z.nrows() != z.ncols() {
            return Err(Error::Input("generator must be square".into()));
        }
        let asym = (&z - z.transpose()).amax();
        if asym > 1e-12 * z.amax().max(1.0) {
            return Err(Error::Input(format!("generator is not symmetric ({asym:e})")));
        }
        Ok(GeneratorMatrix(sym_part(&z)))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

fn check_symmetric(c: &DMatrix<f64>, d: usize, what: &str) -> Result<()> {
    if c.shape() != (d, d) {
        return Err(Error::Input(format!(
            "{what}: expected a {d}x{d} matrix, got {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    let asym = (c - c.transpose()).amax();
    if asym > 1e-12 * c.amax().max(1.0) {
        return Err(Error::Input(format!("{what}: matrix is not symmetric ({asym:e})")));
    }
    Ok(())
}

/// `½ Σ_{i,j} C_ij · Mᵢ · Mⱼ` for an arbitrary family of matrices.
pub fn quadratic_generator(c: &DMatrix<f64>, mats: &[DMatrix<f64>]) -> DMatrix<f64> {
    let k = mats[0].nrows();
    let mut z = DMatrix::zeros(k, k);
    for (i, a) in mats.iter().enumerate() {
        for (j, b) in mats.iter().enumerate() {
            let cij = c[(i, j)];
            if cij != 0.0 {
                z += (a * b) * (0.5 * cij);
            }
        }
    }
    z
}

/// `Z = ½ Σ C_ij Aᵢ Aⱼ` for the basis `A`.
pub fn generator_z(c: &DMatrix<f64>, basis: &LieAlgebraBasis) -> Result<GeneratorMatrix> {
    check_symmetric(c, basis.dim(), "generator_z")?;
    Ok(GeneratorMatrix(sym_part(&quadratic_generator(c, basis.matrices()))))
}

/// Inverse of [`generator_z`] on SO(3) with the canonical basis.
///
/// Expanding the generator gives
/// `Z = −½ [[C₁₁+C₂₂, C₂₃, −C₁₃], [C₃₂, C₁₁+C₃₃, C₁₂], [−C₃₁, C₂₁, C₂₂+C₃₃]]`,
/// so `tr C = −tr Z` and each diagonal entry of `C` is `−tr Z + 2·Z_kk`
/// for the complementary `k`.
pub fn so3_c_from_z(z: &GeneratorMatrix) -> Result<DMatrix<f64>> {
    let z = z.matrix();
    if z.shape() != (3, 3) {
        return Err(Error::Input("so3_c_from_z needs a 3x3 generator".into()));
    }
    let tr_c = -z.trace();
    let c11 = tr_c + 2.0 * z[(2, 2)];
    let c22 = tr_c + 2.0 * z[(1, 1)];
    let c33 = tr_c + 2.0 * z[(0, 0)];
    let c23 = -2.0 * z[(0, 1)];
    let c13 = 2.0 * z[(0, 2)];
    let c12 = -2.0 * z[(1, 2)];
    Ok(DMatrix::from_row_slice(
        3,
        3,
        &[c11, c12, c13, c12, c22, c23, c13, c23, c33],
    ))
}

/// How `ĝ` is extracted from the sample mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationMethod {
    /// Orthogonal factor of the polar decomposition (least-squares fit).
    #[default]
    Polar,
    /// `Q` of a QR decomposition with positive `R` diagonal.
    Qr,
}

/// What to recover about `C` on SO(n), n > 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceStructure {
    /// Only `ĝ` and `Ẑ`.
    ZOnly,
    /// `C` assumed diagonal; solved from `diag Z` by minimum-norm least squares.
    DiagonalC,
    /// Full `C`: identifiable only for n ≤ 3.
    FullC,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    /// A negative eigenvalue of `Ĉ` (or `σ̂² < 0`) was clamped to 0.
    pub clamped: bool,
    /// `‖Ȳ − ĝ·exp(Ẑ)‖_F`, or the least-squares residual for diagonal-C fits.
    pub residual: f64,
    /// The diagonal-C system has fewer equations than unknowns; the
    /// minimum-norm solution is reported.
    pub underdetermined: bool,
}

#[derive(Debug, Clone)]
pub struct EstimationReport {
    pub n: usize,
    pub g_hat: Point,
    pub z_hat: DMatrix<f64>,
    pub c_hat: Option<DMatrix<f64>>,
    pub c_hat_psd: Option<DMatrix<f64>>,
    pub sigma2_hat: Option<f64>,
    pub m: usize,
    pub location: LocationMethod,
    pub diagnostics: Diagnostics,
}

/// Row-major nested rows, the JSON layout used for every matrix.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Serialize)]
struct ReportJson<'a> {
    n: usize,
    g_hat: Vec<Vec<f64>>,
    #[serde(rename = "Z_hat")]
    z_hat: Vec<Vec<f64>>,
    #[serde(rename = "C_hat")]
    c_hat: Option<Vec<Vec<f64>>>,
    #[serde(rename = "C_hat_psd")]
    c_hat_psd: Option<Vec<Vec<f64>>>,
    sigma2_hat: Option<f64>,
    m: usize,
    clamped: bool,
    residual: f64,
    underdetermined: bool,
    location: LocationMethod,
    inner_product: &'a str,
}

impl EstimationReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(ReportJson {
            n: self.n,
            g_hat: matrix_rows(self.g_hat.matrix()),
            z_hat: matrix_rows(&self.z_hat),
            c_hat: self.c_hat.as_ref().map(matrix_rows),
            c_hat_psd: self.c_hat_psd.as_ref().map(matrix_rows),
            sigma2_hat: self.sigma2_hat,
            m: self.m,
            clamped: self.diagnostics.clamped,
            residual: self.diagnostics.residual,
            underdetermined: self.diagnostics.underdetermined,
            location: self.location,
            inner_product: "C is relative to the basis orthonormal under <X,Y> = 0.5*tr(Y^T X)",
        })
        .expect("report serialises")
    }
}

const MEAN_CHUNK: usize = 4096;

/// Neumaier-compensated sum of a slice of equally shaped matrices.
fn compensated_sum<'a, I>(mats: I, shape: (usize, usize)) -> (DMatrix<f64>, DMatrix<f64>)
where
    I: Iterator<Item = &'a DMatrix<f64>>,
{
    let mut sum = DMatrix::<f64>::zeros(shape.0, shape.1);
    let mut comp = DMatrix::<f64>::zeros(shape.0, shape.1);
    for m in mats {
        for ((s, c), &x) in sum.iter_mut().zip(comp.iter_mut()).zip(m.iter()) {
            let t = *s + x;
            if s.abs() >= x.abs() {
                *c += (*s - t) + x;
            } else {
                *c += (x - t) + *s;
            }
            *s = t;
        }
    }
    (sum, comp)
}

/// Entrywise sample mean of matrices. Chunks are summed in parallel and
/// combined in a fixed order, so the result does not depend on scheduling.
pub fn extrinsic_mean(samples: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Input("need at least one sample".into()))?;
    let shape = first.shape();
    if samples.iter().any(|s| s.shape() != shape) {
        return Err(Error::Input("samples have inconsistent shapes".into()));
    }
    let partials: Vec<(DMatrix<f64>, DMatrix<f64>)> = samples
        .par_chunks(MEAN_CHUNK)
        .map(|chunk| compensated_sum(chunk.iter(), shape))
        .collect();
    let sums: Vec<DMatrix<f64>> = partials.iter().map(|(s, c)| s + c).collect();
    let (s, c) = compensated_sum(sums.iter(), shape);
    Ok((s + c) / samples.len() as f64)
}

fn sample_matrices(samples: &[Point], n: usize) -> Result<Vec<DMatrix<f64>>> {
    if samples.is_empty() {
        return Err(Error::Input("need at least one sample".into()));
    }
    samples
        .iter()
        .map(|p| {
            if p.matrix().shape() != (n, n) {
                Err(Error::Input(format!("sample is not a {n}x{n} matrix")))
            } else {
                Ok(p.matrix().clone())
            }
        })
        .collect()
}

/// Samples are orthogonal, so a mean this small carries no direction at all.
const MEAN_FLOOR: f64 = 1e-10;

/// Splits a mean `Ȳ ≈ U·exp(Z)` into `(U, P)` with `P = sym(UᵀȲ)`.
fn split_mean(mean: &DMatrix<f64>, method: LocationMethod) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let min_sv = mean.singular_values().min();
    if !(min_sv > MEAN_FLOOR) {
        return Err(Error::Degenerate(format!(
            "sample mean is (numerically) singular: smallest singular value {min_sv:e}"
        )));
    }
    match method {
        LocationMethod::Polar => {
            let p = polar_decompose(mean)?;
            Ok((p.rotation, p.stretch))
        }
        LocationMethod::Qr => {
            let q = qr_q(mean)?;
            let p = sym_part(&(q.transpose() * mean));
            Ok((q, p))
        }
    }
}

fn log_stretch(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    matrix_log_spd(p).map_err(|e| match e {
        Error::Domain(msg) => Error::Degenerate(format!(
            "sample mean's symmetric factor is not positive definite: {msg}"
        )),
        other => other,
    })
}

fn psd_projection(c: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let eig = sym_part(c).symmetric_eigen();
    let clamped = eig.eigenvalues.iter().any(|&l| l < 0.0);
    let lam = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)));
    let v = &eig.eigenvectors;
    (sym_part(&(v * lam * v.transpose())), clamped)
}

/// SO(2): `ĝ = U`, `σ̂² = −2·ln(½ Tr P)`; clamped to 0 when `½ Tr P ≥ 1`.
pub fn estimate_so2(samples: &[Point]) -> Result<EstimationReport> {
    estimate_so2_with(samples, LocationMethod::Polar)
}

pub fn estimate_so2_with(samples: &[Point], method: LocationMethod) -> Result<EstimationReport> {
    let ys = sample_matrices(samples, 2)?;
    let mean = extrinsic_mean(&ys)?;
    let (u, p) = split_mean(&mean, method)?;
    let r = 0.5 * p.trace();
    if !(r > 0.0) {
        return Err(Error::Degenerate(format!(
            "SO(2) mean has non-positive concentration ½Tr P = {r}"
        )));
    }
    let raw = -2.0 * r.ln();
    let clamped = raw < 0.0;
    let sigma2 = raw.max(0.0);
    let z_hat = log_stretch(&p)?;
    let residual = (&mean - &u * matrix_exp(&z_hat)).norm();
    Ok(EstimationReport {
        n: 2,
        g_hat: Point::from_matrix_unchecked(u),
        z_hat,
        c_hat: Some(DMatrix::from_element(1, 1, raw)),
        c_hat_psd: Some(DMatrix::from_element(1, 1, sigma2)),
        sigma2_hat: Some(sigma2),
        m: samples.len(),
        location: method,
        diagnostics: Diagnostics { clamped, residual, underdetermined: false },
    })
}

/// SO(3): `ĝ = U`, `Ẑ = log P`, `Ĉ` from [`so3_c_from_z`] plus its PSD projection.
pub fn estimate_so3(samples: &[Point]) -> Result<EstimationReport> {
    estimate_so3_with(samples, LocationMethod::Polar)
}

pub fn estimate_so3_with(samples: &[Point], method: LocationMethod) -> Result<EstimationReport> {
    let ys = sample_matrices(samples, 3)?;
    let mean = extrinsic_mean(&ys)?;
    let (u, p) = split_mean(&mean, method)?;
    let z_hat = log_stretch(&p)?;
    let c_hat = so3_c_from_z(&GeneratorMatrix(z_hat.clone()))?;
    let (c_psd, clamped) = psd_projection(&c_hat);
    let residual = (&mean - &u * matrix_exp(&z_hat)).norm();
    Ok(EstimationReport {
        n: 3,
        g_hat: Point::from_matrix_unchecked(u),
        z_hat,
        c_hat: Some(c_hat),
        c_hat_psd: Some(c_psd),
        sigma2_hat: None,
        m: samples.len(),
        location: method,
        diagnostics: Diagnostics { clamped, residual, underdetermined: false },
    })
}

/// Number of real parameters of `N(g, C)` on SO(n): `d + d(d+1)/2`.
pub fn brownian_param_count(n: usize) -> usize {
    let d = n * (n - 1) / 2;
    d + d * (d + 1) / 2
}

/// SO(n) for any n. For n = 2, 3 this delegates to [`estimate_so2`] /
/// [`estimate_so3`]; for larger n full-C recovery is refused and
/// diagonal-C recovery solves `diag Ẑ = M·diag C` in the minimum-norm sense.
pub fn estimate_son(
    samples: &[Point],
    n: usize,
    structure: CovarianceStructure,
) -> Result<EstimationReport> {
    estimate_son_with(samples, n, structure, LocationMethod::Polar)
}

pub fn estimate_son_with(
    samples: &[Point],
    n: usize,
    structure: CovarianceStructure,
    method: LocationMethod,
) -> Result<EstimationReport> {
    match n {
        0 | 1 => return Err(Error::Input(format!("SO(n) needs n ≥ 2, got {n}"))),
        2 => return estimate_so2_with(samples, method),
        3 => return estimate_so3_with(samples, method),
        _ => {}
    }
    if structure == CovarianceStructure::FullC {
        return Err(Error::Unsupported(format!(
            "full covariance is not identifiable on SO({n}): N(g, C) has {} parameters but the \
             ambient mean only has n² = {}",
            brownian_param_count(n),
            n * n
        )));
    }
    let ys = sample_matrices(samples, n)?;
    let mean = extrinsic_mean(&ys)?;
    let (u, p) = split_mean(&mean, method)?;
    let z_hat = log_stretch(&p)?;
    let mut diagnostics = Diagnostics {
        residual: (&mean - &u * matrix_exp(&z_hat)).norm(),
        ..Diagnostics::default()
    };
    let (c_hat, c_hat_psd) = if structure == CovarianceStructure::DiagonalC {
        let basis = so_basis(n)?;
        let d = basis.dim();
        // diag(Z)_k = ½ Σᵢ cᵢ (Aᵢ²)_kk
        let design = DMatrix::from_fn(n, d, |k, i| {
            let a = &basis.matrices()[i];
            0.5 * (a * a)[(k, k)]
        });
        let rhs = z_hat.diagonal();
        let pinv = design
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Degenerate(e.to_string()))?;
        let c_diag = pinv * &rhs;
        diagnostics.residual = (&design * &c_diag - rhs).norm();
        diagnostics.underdetermined = d > n;
        diagnostics.clamped = c_diag.iter().any(|&c| c < 0.0);
        let c = DMatrix::from_diagonal(&c_diag);
        let c_psd = DMatrix::from_diagonal(&c_diag.map(|c| c.max(0.0)));
        (Some(c), Some(c_psd))
    } else {
        (None, None)
    };
    Ok(EstimationReport {
        n,
        g_hat: Point::from_matrix_unchecked(u),
        z_hat,
        c_hat,
        c_hat_psd,
        sigma2_hat: None,
        m: samples.len(),
        location: method,
        diagnostics,
    })
}

/// A homomorphism `f: SO(n) → O(k)` together with its derivatives
/// `aᵢ = d/dt f(exp(t Aᵢ))|₀` along the basis.
pub trait Representation: Sync {
    fn apply(&self, g: &DMatrix<f64>) -> DMatrix<f64>;
    fn derivatives(&self) -> &[DMatrix<f64>];
}

/// `f(g) = g`, with derivatives `Aᵢ`.
#[derive(Debug, Clone)]
pub struct IdentityRep {
    basis: LieAlgebraBasis,
}

impl IdentityRep {
    pub fn new(basis: LieAlgebraBasis) -> Self {
        IdentityRep { basis }
    }
}

impl Representation for IdentityRep {
    fn apply(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        g.clone()
    }

    fn derivatives(&self) -> &[DMatrix<f64>] {
        self.basis.matrices()
    }
}

/// Adjoint representation in the orthonormal basis:
/// `f(g)_ij = ⟨Aᵢ, g Aⱼ gᵀ⟩`, derivative `(adᵢ)_kj = ⟨A_k, [Aᵢ, Aⱼ]⟩`.
#[derive(Debug, Clone)]
pub struct AdjointRep {
    basis: LieAlgebraBasis,
    ad: Vec<DMatrix<f64>>,
}

pub fn adjoint_rep(n: usize, basis: &LieAlgebraBasis) -> Result<AdjointRep> {
    if basis.n() != n {
        return Err(Error::Input(format!(
            "basis is for so({}), not so({n})",
            basis.n()
        )));
    }
    let mats = basis.matrices();
    let d = mats.len();
    let ad = mats
        .iter()
        .map(|ai| {
            DMatrix::from_fn(d, d, |k, j| {
                let bracket = ai * &mats[j] - &mats[j] * ai;
                so_inner(&mats[k], &bracket)
            })
        })
        .collect();
    Ok(AdjointRep { basis: basis.clone(), ad })
}

impl AdjointRep {
    pub fn basis(&self) -> &LieAlgebraBasis {
        &self.basis
    }
}

impl Representation for AdjointRep {
    fn apply(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let mats = self.basis.matrices();
        let d = mats.len();
        let conj: Vec<DMatrix<f64>> = mats.iter().map(|a| g * a * g.transpose()).collect();
        DMatrix::from_fn(d, d, |i, j| so_inner(&mats[i], &conj[j]))
    }

    fn derivatives(&self) -> &[DMatrix<f64>] {
        &self.ad
    }
}

/// Output of [`estimate_via_representation`].
#[derive(Debug, Clone)]
pub struct RepresentationEstimate {
    /// Estimate of `f(g)`.
    pub f_g_hat: DMatrix<f64>,
    /// Estimate of `Z_f`.
    pub z_f_hat: DMatrix<f64>,
    pub m: usize,
    pub residual: f64,
}

/// Polar decomposition of `(1/m) Σ f(yᵢ)`: `f̂(g) = U`, `Ẑ_f = log P`.
pub fn estimate_via_representation<R: Representation + ?Sized>(
    samples: &[Point],
    rep: &R,
) -> Result<RepresentationEstimate> {
    if samples.is_empty() {
        return Err(Error::Input("need at least one sample".into()));
    }
    let images: Vec<DMatrix<f64>> = samples.par_iter().map(|y| rep.apply(y.matrix())).collect();
    let mean = extrinsic_mean(&images)?;
    let (u, p) = split_mean(&mean, LocationMethod::Polar)?;
    let z = log_stretch(&p)?;
    let residual = (&mean - &u * matrix_exp(&z)).norm();
    Ok(RepresentationEstimate { f_g_hat: u, z_f_hat: z, m: samples.len(), residual })
}

/// Reference `Z_f = ½ Σ C_ij aᵢ aⱼ` for a known covariance.
pub fn representation_generator<R: Representation + ?Sized>(
    c: &DMatrix<f64>,
    rep: &R,
) -> Result<DMatrix<f64>> {
    let a = rep.derivatives();
    check_symmetric(c, a.len(), "representation_generator")?;
    Ok(sym_part(&quadratic_generator(c, a)))
}

/// Convenience: the manifold a report's `g_hat` lives on.
pub fn report_manifold(report: &EstimationReport) -> ManifoldSpec {
    ManifoldSpec::SpecialOrthogonal(report.n)
}
