//! Reproducible Gaussian streams and tangent / coloured Gaussian sampling.
//!
//! A stream is addressed by `(master_seed, stream_id)`. It is backed by a
//! ChaCha8 keystream: the seed fixes the key, the stream id selects the
//! ChaCha stream (nonce) and the block counter advances with each draw, so
//! any stream can be built independently of every other one.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::manifold::{ManifoldSpec, Point, TangentVector};

#[derive(Debug, Clone)]
pub struct GaussianStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl GaussianStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        GaussianStream { master_seed, stream_id, rng }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Next standard normal variate.
    #[inline]
    pub fn next_gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.next_gaussian();
        }
    }

    pub fn gaussian_vector(&mut self, len: usize) -> DVector<f64> {
        DVector::from_fn(len, |_, _| self.next_gaussian())
    }

    /// Raw 64 uniform bits, for sign sampling.
    #[inline]
    pub fn next_bits(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// Standard normal tangent vector at `p`.
///
/// An ambient standard normal is projected onto `T_pM`. On SO(n) the
/// projection is rescaled by √2 so that the coefficients on the ½·Tr
/// orthonormal basis are unit variance.
pub fn sample_tangent_gaussian(
    manifold: ManifoldSpec,
    p: &Point,
    stream: &mut GaussianStream,
) -> TangentVector {
    TangentVector::from_matrix_unchecked(tangent_gaussian_raw(manifold, p.matrix(), stream))
}

pub(crate) fn tangent_gaussian_raw(
    manifold: ManifoldSpec,
    p: &DMatrix<f64>,
    stream: &mut GaussianStream,
) -> DMatrix<f64> {
    let (r, c) = manifold.ambient_shape();
    let g = DMatrix::from_fn(r, c, |_, _| stream.next_gaussian());
    let v = manifold.project_unchecked(p, &g);
    match manifold {
        ManifoldSpec::SpecialOrthogonal(_) => v * std::f64::consts::SQRT_2,
        _ => v,
    }
}

/// Covariance matrix together with a square-root factor `L`, `L·Lᵀ = C`.
///
/// Negative eigenvalues down to `−1e−12` are clamped to zero, so positive
/// semidefinite (rank-deficient) covariances are accepted.
#[derive(Debug, Clone)]
pub struct ColourSpec {
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl ColourSpec {
    pub fn new(covariance: DMatrix<f64>) -> Result<Self> {
        let d = covariance.nrows();
        if covariance.ncols() != d || d == 0 {
            return Err(Error::Input("covariance must be a non-empty square matrix".into()));
        }
        if !covariance.iter().all(|x| x.is_finite()) {
            return Err(Error::Input("covariance has non-finite entries".into()));
        }
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > 1e-12 * covariance.amax().max(1.0) {
            return Err(Error::Input(format!(
                "covariance is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let eig = crate::linalg::sym_part(&covariance).symmetric_eigen();
        let min = eig.eigenvalues.min();
        if min < -1e-12 * covariance.amax().max(1.0) {
            return Err(Error::Input(format!(
                "covariance is not positive semidefinite (eigenvalue {min:e})"
            )));
        }
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
        Ok(ColourSpec { covariance, factor })
    }

    pub fn identity(d: usize) -> Self {
        ColourSpec {
            covariance: DMatrix::identity(d, d),
            factor: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// `β = L·z` with `z` standard normal, so `Cov(β) = C`.
    pub fn sample(&self, stream: &mut GaussianStream) -> DVector<f64> {
        let z = stream.gaussian_vector(self.dim());
        &self.factor * z
    }
}

/// Free-function form of [`ColourSpec::sample`].
pub fn sample_coloured(spec: &ColourSpec, stream: &mut GaussianStream) -> DVector<f64> {
    spec.sample(stream)
}
