//! Small dense matrix functions: exponential, rotation and SPD logarithms,
//! polar and QR factors projected onto SO(n).
//!
//! Everything works on `DMatrix<f64>`; the 2×2 and 3×3 rotation cases use
//! closed forms, larger matrices go through Padé scaling-and-squaring (exp)
//! or a real Schur form (log).

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};

/// Rotation angles within this distance of π are treated as lying on the
/// cut locus of the principal logarithm.
pub const CUT_LOCUS_TOL: f64 = 1e-9;

/// Relative singular-value floor below which a matrix counts as rank deficient.
const RANK_TOL: f64 = 1e-12;

pub fn skew_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a - a.transpose()) * 0.5
}

pub fn sym_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// `‖XᵀX − I‖_F`.
pub fn orthogonality_defect(x: &DMatrix<f64>) -> f64 {
    let n = x.ncols();
    (x.transpose() * x - DMatrix::identity(n, n)).norm()
}

fn is_skew(a: &DMatrix<f64>) -> bool {
    let scale = 1.0 + a.amax();
    (a + a.transpose()).amax() <= 1e-14 * scale
}

fn require_square(a: &DMatrix<f64>, what: &str) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::Input(format!(
            "{what}: expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(a.nrows())
}

/// Planar rotation by `theta`.
pub fn rotation2(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Rodrigues' formula for `exp([ω]×)`.
pub fn rodrigues(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < 1e-4 {
        (
            1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = omega.cross_matrix();
    Matrix3::identity() + k * a + k * k * b
}

/// Axial vector of a 3×3 skew matrix, `[ω]× ↦ ω`.
pub fn vee3(a: &DMatrix<f64>) -> Vector3<f64> {
    Vector3::new(a[(2, 1)], a[(0, 2)], a[(1, 0)])
}

/// Principal matrix exponential.
pub fn matrix_exp(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix_exp needs a square matrix");
    match n {
        0 => DMatrix::zeros(0, 0),
        1 => DMatrix::from_element(1, 1, a[(0, 0)].exp()),
        2 => exp2(a),
        3 if is_skew(a) => {
            let r = rodrigues(&vee3(a));
            DMatrix::from_iterator(3, 3, r.iter().copied())
        }
        _ => exp_pade(a),
    }
}

/// Closed-form 2×2 exponential via the Cayley–Hamilton reduction
/// `exp(A) = e^m (f(s) I + g(s) (A − mI))`.
fn exp2(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, q, r, s) = (a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
    let m = 0.5 * (p + s);
    let disc = 0.25 * (p - s) * (p - s) + q * r;
    let (c, k) = if disc > 0.0 {
        let w = disc.sqrt();
        (w.cosh(), if w < 1e-8 { 1.0 + disc / 6.0 } else { w.sinh() / w })
    } else {
        let w = (-disc).sqrt();
        (w.cos(), if w < 1e-8 { 1.0 + disc / 6.0 } else { w.sin() / w })
    };
    let e = m.exp();
    DMatrix::from_row_slice(
        2,
        2,
        &[
            e * (c + k * (p - m)),
            e * k * q,
            e * k * r,
            e * (c + k * (s - m)),
        ],
    )
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Lower-degree (3, 5, 7, 9) diagonal Padé approximants `(θ_m, coefficients)`;
/// each is accurate to unit roundoff for `‖A‖₁ ≤ θ_m`.
const PADE_LOW: [(f64, &[f64]); 4] = [
    (1.495585217958292e-2, &[120.0, 60.0, 12.0, 1.0]),
    (2.53939833006323e-1, &[30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0]),
    (
        9.504178996162932e-1,
        &[17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0],
    ),
    (
        2.097847961257068,
        &[
            17643225600.0,
            8821612800.0,
            2075673600.0,
            302702400.0,
            30270240.0,
            2162160.0,
            110880.0,
            3960.0,
            90.0,
            1.0,
        ],
    ),
];

fn pade_solve(u: DMatrix<f64>, v: DMatrix<f64>) -> DMatrix<f64> {
    (&v - &u)
        .lu()
        .solve(&(&v + &u))
        .expect("Padé denominator is nonsingular after scaling")
}

/// Scaling-and-squaring with the cheapest Padé degree that is accurate for
/// `‖A‖₁` (degrees 3, 5, 7, 9, 13).
fn exp_pade(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let id = DMatrix::<f64>::identity(n, n);
    if let Some((_, b)) = PADE_LOW.iter().find(|(theta, _)| norm1 <= *theta) {
        // U = A·Σ b_{2k+1} A^{2k},  V = Σ b_{2k} A^{2k}
        let a2 = a * a;
        let mut pow = id.clone();
        let mut u = DMatrix::zeros(n, n);
        let mut v = DMatrix::zeros(n, n);
        for pair in b.chunks(2) {
            v += &pow * pair[0];
            u += &pow * pair[1];
            pow = &pow * &a2;
        }
        return pade_solve(a * u, v);
    }
    let squarings = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a / 2f64.powi(squarings);
    let b = &PADE13;
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    let mut x = pade_solve(u, v);
    for _ in 0..squarings {
        x = &x * &x;
    }
    x
}

fn check_rotation(r: &DMatrix<f64>, what: &str) -> Result<usize> {
    let n = require_square(r, what)?;
    let defect = orthogonality_defect(r);
    if !(defect <= 1e-8) {
        return Err(Error::Domain(format!(
            "{what}: matrix is not orthogonal (‖RᵀR − I‖ = {defect:e})"
        )));
    }
    if n > 0 && r.determinant() <= 0.0 {
        return Err(Error::Domain(format!("{what}: determinant is not +1")));
    }
    Ok(n)
}

fn cut_locus(angle: f64) -> Error {
    Error::Domain(format!(
        "rotation angle {angle} is at π; the principal logarithm is undefined"
    ))
}

/// Principal logarithm of a rotation matrix. Rotation angles of π are rejected.
pub fn matrix_log_so(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = check_rotation(r, "matrix_log_so")?;
    match n {
        0 | 1 => Ok(DMatrix::zeros(n, n)),
        2 => {
            let theta = r[(1, 0)].atan2(r[(0, 0)]);
            if PI - theta.abs() < CUT_LOCUS_TOL {
                return Err(cut_locus(theta));
            }
            Ok(DMatrix::from_row_slice(2, 2, &[0.0, -theta, theta, 0.0]))
        }
        3 => log_so3(r),
        _ => log_so_schur(r),
    }
}

fn log_so3(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    // sinθ·axis
    let w = vee3(&skew_part(r));
    let s = w.norm();
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);
    if PI - theta < CUT_LOCUS_TOL {
        return Err(cut_locus(theta));
    }
    let omega = if theta < 1e-4 {
        let t2 = theta * theta;
        w * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0)
    } else if theta < PI - 0.01 {
        w * (theta / s)
    } else {
        // Near π the skew part is tiny; read the axis from (R + Rᵀ)/2 − cosθ·I = (1 − cosθ) a aᵀ.
        let b = sym_part(r) - DMatrix::identity(3, 3) * c;
        let k = (0..3)
            .max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]))
            .unwrap();
        let mut axis = Vector3::new(b[(0, k)], b[(1, k)], b[(2, k)]);
        axis /= axis.norm();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        axis * theta
    };
    let k = omega.cross_matrix();
    Ok(DMatrix::from_iterator(3, 3, k.iter().copied()))
}

fn log_so_schur(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = r.nrows();
    let (q, t) = r.clone().schur().unpack();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)].abs() > 1e-10 {
            let c = 0.5 * (t[(i, i)] + t[(i + 1, i + 1)]);
            let s = 0.5 * (t[(i + 1, i)] - t[(i, i + 1)]);
            let theta = s.atan2(c);
            if PI - theta.abs() < CUT_LOCUS_TOL {
                return Err(cut_locus(theta));
            }
            l[(i + 1, i)] = theta;
            l[(i, i + 1)] = -theta;
            i += 2;
        } else {
            if t[(i, i)] < 0.0 {
                return Err(cut_locus(PI));
            }
            i += 1;
        }
    }
    let a = skew_part(&(&q * l * q.transpose()));
    let residual = (matrix_exp(&a) - r).norm();
    if residual > 1e-8 {
        return Err(Error::Domain(format!(
            "matrix_log_so: Schur-based logarithm failed to reproduce the input (residual {residual:e})"
        )));
    }
    Ok(a)
}

/// Logarithm of a symmetric positive-definite matrix via its eigendecomposition.
pub fn matrix_log_spd(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = require_square(p, "matrix_log_spd")?;
    let asym = (p - p.transpose()).amax();
    if asym > 1e-10 * (1.0 + p.amax()) {
        return Err(Error::Domain(format!(
            "matrix_log_spd: matrix is not symmetric (max |P − Pᵀ| = {asym:e})"
        )));
    }
    let eig = sym_part(p).symmetric_eigen();
    if let Some(bad) = eig.eigenvalues.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::Domain(format!(
            "matrix_log_spd: matrix is not positive definite (eigenvalue {bad:e}; all: {:?})",
            eig.eigenvalues.as_slice()
        )));
    }
    let logs = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::ln));
    let v = &eig.eigenvectors;
    let l = v * logs * v.transpose();
    debug_assert_eq!(l.nrows(), n);
    Ok(sym_part(&l))
}

/// `Y = U·P` with `U ∈ SO(n)` and `P` symmetric.
#[derive(Debug, Clone)]
pub struct Polar {
    pub rotation: DMatrix<f64>,
    pub stretch: DMatrix<f64>,
}

/// Polar decomposition with the orthogonal factor forced into SO(n).
///
/// With `Y = VΣWᵀ`, `U = VWᵀ`; when that has determinant −1 the column of
/// `V` belonging to the smallest singular value is negated. In that case `P`
/// carries one negative eigenvalue.
pub fn polar_decompose(y: &DMatrix<f64>) -> Result<Polar> {
    let n = require_square(y, "polar_decompose")?;
    if n == 0 {
        return Err(Error::Degenerate("polar_decompose: empty matrix".into()));
    }
    if !y.iter().all(|x| x.is_finite()) {
        return Err(Error::Degenerate("polar_decompose: non-finite entries".into()));
    }
    let svd = y.clone().svd(true, true);
    let mut v = svd.u.expect("requested U");
    let w_t = svd.v_t.expect("requested Vᵀ");
    let sv = &svd.singular_values;
    let (imin, smin) = sv
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let smax = sv.max();
    if !(smax > 0.0) || smin <= RANK_TOL * smax {
        return Err(Error::Degenerate(format!(
            "polar_decompose: matrix is rank deficient (singular values {:?})",
            sv.as_slice()
        )));
    }
    let mut u = &v * &w_t;
    if u.determinant() < 0.0 {
        v.column_mut(imin).neg_mut();
        u = &v * &w_t;
    }
    let stretch = sym_part(&(u.transpose() * y));
    Ok(Polar { rotation: u, stretch })
}

/// Orthogonal factor of a QR decomposition, normalised so that `R` has a
/// positive diagonal and then corrected into SO(n) by negating the last column.
pub fn qr_q(y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = require_square(y, "qr_q")?;
    if n == 0 || !y.iter().all(|x| x.is_finite()) {
        return Err(Error::Degenerate("qr_q: empty or non-finite matrix".into()));
    }
    let qr = y.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    let dmax = r.diagonal().amax();
    for i in 0..n {
        let d = r[(i, i)];
        if !(dmax > 0.0) || d.abs() <= RANK_TOL * dmax {
            return Err(Error::Degenerate(format!(
                "qr_q: matrix is rank deficient (R[{i},{i}] = {d:e})"
            )));
        }
        if d < 0.0 {
            q.column_mut(i).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(n - 1).neg_mut();
    }
    Ok(q)
}

/// Nearest rotation in Frobenius norm; used to pull long products back onto SO(n).
pub fn reorthogonalize(x: &DMatrix<f64>) -> DMatrix<f64> {
    polar_decompose(x).map(|p| p.rotation).unwrap_or_else(|_| x.clone())
}

/// Geodesic distance on SO(n) under the ½·Tr inner product: the norm of `log(gᵀh)`.
pub fn so_distance(g: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<f64> {
    let a = matrix_log_so(&(g.transpose() * h))?;
    Ok((0.5 * a.norm_squared()).sqrt())
}
