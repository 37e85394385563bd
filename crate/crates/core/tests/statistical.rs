//! Monte Carlo checks of the simulators and estimators against analytic or
//! independently computed reference values. All seeds are fixed.

use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use brownian_manifold::estimation::{estimate_so3, estimate_son, CovarianceStructure};
use brownian_manifold::integrals::{brownian_on_partition, quadratic_variation, Partition};
use brownian_manifold::liegroup::{sample_brownian_dist_many, simulate_left_bm, so_basis, BrownianDistParams};
use brownian_manifold::linalg::{matrix_exp, matrix_log_so, rodrigues, rotation2};
use brownian_manifold::process::{
    antidevelop, develop_with_frame, refine_bm_midpoint, simulate_bm_euclidean, simulate_bm_manifold,
};
use brownian_manifold::random::sample_tangent_gaussian;
use brownian_manifold::{FrameAtPoint, GaussianStream, ManifoldSpec, Path, Point, SimConfig};

fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Standard error of a sample variance under normality.
fn var_se(var: f64, n: usize) -> f64 {
    var * (2.0 / (n as f64 - 1.0)).sqrt()
}

fn to_dmatrix3(r: nalgebra::Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_iterator(3, 3, r.iter().copied())
}

/// Two-sample chi-square homogeneity test on `bins` pooled-quantile bins.
fn two_sample_chi_square_p(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..bins).map(|k| pooled[k * pooled.len() / bins]).collect();
    let bin_of = |x: f64| edges.partition_point(|&e| e <= x);
    let mut counts = vec![[0.0f64; 2]; bins];
    for &x in a {
        counts[bin_of(x)][0] += 1.0;
    }
    for &x in b {
        counts[bin_of(x)][1] += 1.0;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let total = na + nb;
    let stat: f64 = counts
        .iter()
        .map(|c| {
            let row = c[0] + c[1];
            let (ea, eb) = (row * na / total, row * nb / total);
            (c[0] - ea).powi(2) / ea + (c[1] - eb).powi(2) / eb
        })
        .sum();
    1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn sphere_tangent_sampling_is_rotation_invariant() {
    let s2 = ManifoldSpec::Sphere(3);
    let p = s2.point_from_slice(&[1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]).unwrap();
    let r = to_dmatrix3(rodrigues(&Vector3::new(0.3, -0.5, 0.8)));
    let rp = Point::from_matrix_unchecked(&r * p.matrix());
    let m = 10_000;
    let mut sa = GaussianStream::new(1, 0);
    let mut sb = GaussianStream::new(1, 1);
    let rotated: Vec<DMatrix<f64>> =
        (0..m).map(|_| &r * sample_tangent_gaussian(s2, &p, &mut sa).matrix()).collect();
    let direct: Vec<DMatrix<f64>> =
        (0..m).map(|_| sample_tangent_gaussian(s2, &rp, &mut sb).matrix().clone()).collect();
    let stats: [fn(&DMatrix<f64>) -> f64; 3] = [|v| v[(0, 0)], |v| v[(1, 0)] - v[(2, 0)], |v| v.norm_squared()];
    for stat in stats {
        let a: Vec<f64> = rotated.iter().map(stat).collect();
        let b: Vec<f64> = direct.iter().map(stat).collect();
        let pval = two_sample_chi_square_p(&a, &b, 20);
        assert!(pval > 1e-3, "p-value {pval}");
    }
}

#[test]
fn euclidean_bm_endpoint_variance() {
    let cfg = SimConfig::new(1.0, 1e-4, 10_000, 11).unwrap();
    let ends: Vec<f64> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| simulate_bm_euclidean(1, &cfg, &mut GaussianStream::new(cfg.seed, i)).last().coords()[0])
        .collect();
    let (_, var) = mean_and_var(&ends);
    assert!((0.97..=1.03).contains(&var), "Var X(1) = {var}");
}

#[test]
fn planar_bm_components_are_uncorrelated() {
    let cfg = SimConfig::new(1.0, 1e-2, 10_000, 12).unwrap();
    let ends: Vec<(f64, f64)> = (0..cfg.n_paths as u64)
        .map(|i| {
            let p = simulate_bm_euclidean(2, &cfg, &mut GaussianStream::new(cfg.seed, i));
            (p.last().coords()[0], p.last().coords()[1])
        })
        .collect();
    let xs: Vec<f64> = ends.iter().map(|e| e.0).collect();
    let ys: Vec<f64> = ends.iter().map(|e| e.1).collect();
    let (mx, vx) = mean_and_var(&xs);
    let (my, vy) = mean_and_var(&ys);
    let cov = ends.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (ends.len() as f64 - 1.0);
    let corr = cov / (vx * vy).sqrt();
    assert!(corr.abs() <= 0.03, "corr = {corr}");
}

#[test]
fn bridge_midpoint_has_half_variance() {
    let cfg = SimConfig::new(1.0, 1.0, 10_000, 13).unwrap();
    let mids: Vec<f64> = (0..cfg.n_paths as u64)
        .map(|i| {
            let coarse = simulate_bm_euclidean(1, &cfg, &mut GaussianStream::new(13, i));
            let fine = refine_bm_midpoint(&coarse, &mut GaussianStream::new(14, i)).unwrap();
            assert_eq!(fine.times(), &[0.0, 0.5, 1.0]);
            fine.points()[1].coords()[0]
        })
        .collect();
    let (_, var) = mean_and_var(&mids);
    assert!((var - 0.5).abs() <= 3.0 * var_se(0.5, mids.len()), "Var X(1/2) = {var}");
}

#[test]
fn quadratic_variation_spread_scales_with_sqrt2() {
    let sd = |n: usize| {
        let part = Partition::uniform(1.0, n).unwrap();
        let qv: Vec<f64> = (0..1000u64)
            .map(|s| quadratic_variation(&brownian_on_partition(&part, &mut GaussianStream::new(15, s))))
            .collect();
        mean_and_var(&qv).1.sqrt()
    };
    let ratio = sd(1000) / sd(2000);
    assert!((1.28..=1.55).contains(&ratio), "sd ratio {ratio}");
}

// ---- sphere Brownian motion ----------------------------------------------

const SPHERE_T: f64 = 0.5;

/// `(mean, standard error)` of ⟨B(T), p0⟩ on S² ⊂ ℝ³, `paths` paths started
/// at the north pole.
fn sphere_mean_cosine(dt: f64, paths: usize, seed: u64) -> (f64, f64) {
    let s2 = ManifoldSpec::Sphere(3);
    let p0 = s2.base_point();
    let cfg = SimConfig::new(SPHERE_T, dt, paths, seed).unwrap();
    let cos: Vec<f64> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let p = simulate_bm_manifold(s2, &p0, &cfg, &mut GaussianStream::new(seed, i)).unwrap();
            p.last().matrix().dot(p0.matrix())
        })
        .collect();
    let (mean, var) = mean_and_var(&cos);
    (mean, (var / paths as f64).sqrt())
}

/// Mean and standard error of ⟨B(0.5), p0⟩ from a fine-step run
/// (`dt = 1e−5`, 10⁴ paths, seed 2024); regenerate with
/// `cargo test --release --test statistical -- --ignored --nocapture`.
const FINE_STEP_REFERENCE: (f64, f64) = (0.6035870902560719, 0.0033807284434396955);

#[test]
#[ignore = "slow: regenerates FINE_STEP_REFERENCE"]
fn regenerate_fine_step_reference() {
    let (mean, se) = sphere_mean_cosine(1e-5, 10_000, 2024);
    println!("FINE_STEP_REFERENCE = ({mean:?}, {se:?})");
}

#[test]
fn sphere_bm_mean_cosine_decays() {
    let (mean, se) = sphere_mean_cosine(1e-3, 10_000, 16);
    // coordinate functions are eigenfunctions of ½Δ on S² with eigenvalue −1
    let analytic = (-SPHERE_T).exp();
    assert!((mean - analytic).abs() <= 3.0 * se, "{mean} vs {analytic} (SE {se})");
    let (reference, ref_se) = FINE_STEP_REFERENCE;
    let combined = (se * se + ref_se * ref_se).sqrt();
    assert!((mean - reference).abs() <= 3.0 * combined, "{mean} vs fine-step {reference}");
    assert!((reference - analytic).abs() <= 3.0 * ref_se);
}

// ---- development ---------------------------------------------------------

/// Unsigned solid angle of the spherical triangle `abc`.
fn spherical_excess(a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>) -> f64 {
    let (a3, b3, c3) = (
        Vector3::new(a[0], a[1], a[2]),
        Vector3::new(b[0], b[1], b[2]),
        Vector3::new(c[0], c[1], c[2]),
    );
    let num = a3.dot(&b3.cross(&c3)).abs();
    let den = 1.0 + a3.dot(&b3) + b3.dot(&c3) + c3.dot(&a3);
    2.0 * num.atan2(den)
}

/// Plane path: out along e₁, left turn, along e₂, left turn, back along −e₁,
/// each leg of length 1 and split into `k` pieces.
fn three_sided_square(k: usize) -> Path {
    let corners = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let mut coords = vec![corners[0].to_vec()];
    for leg in corners.windows(2) {
        for j in 1..=k {
            let s = j as f64 / k as f64;
            coords.push(vec![leg[0][0] + s * (leg[1][0] - leg[0][0]), leg[0][1] + s * (leg[1][1] - leg[0][1])]);
        }
    }
    let times = (0..coords.len()).map(|i| i as f64).collect();
    Path::euclidean(times, coords).unwrap()
}

/// Rotation angle of the frame after rolling along the path and then
/// transporting back to the start along the closing geodesic.
fn holonomy(k: usize) -> (f64, Vec<DVector<f64>>) {
    let s2 = ManifoldSpec::Sphere(3);
    let frame0 = FrameAtPoint::north_pole(3).unwrap();
    let plane = three_sided_square(k);
    let (rolled, frame1) = develop_with_frame(&frame0, &plane).unwrap();
    let end = rolled.last();
    let back = s2.log_map(end, frame0.base()).unwrap();
    let e1 = s2.parallel_transport(end, &back, &frame1.vectors()[0]).unwrap();
    let (f1, f2) = (frame0.vectors()[0].matrix(), frame0.vectors()[1].matrix());
    let angle = e1.matrix().dot(f2).atan2(e1.matrix().dot(f1));
    let corners = [0, k, 2 * k, 3 * k]
        .iter()
        .map(|&i| DVector::from_column_slice(rolled.points()[i].coords()))
        .collect();
    (angle, corners)
}

#[test]
fn rolling_around_a_square_produces_holonomy() {
    let (coarse, c) = holonomy(1);
    let (fine, _) = holonomy(1000);
    // straight legs develop into exact great-circle arcs, so subdivision does not change the answer
    assert!((coarse - fine).abs() <= 1e-10, "{coarse} vs {fine}");
    assert!(fine.abs() > 0.1, "holonomy should be clearly nonzero: {fine}");
    let area = spherical_excess(&c[0], &c[1], &c[2]) + spherical_excess(&c[0], &c[2], &c[3]);
    assert!((fine.abs() - area).abs() <= 1e-10, "holonomy {fine} vs enclosed area {area}");
}

#[test]
fn antidevelopment_of_sphere_bm_has_gaussian_increments() {
    let s2 = ManifoldSpec::Sphere(3);
    let dt = 1e-3;
    let cfg = SimConfig::new(1.0, dt, 2000, 17).unwrap();
    let frame = FrameAtPoint::north_pole(3).unwrap();
    let planes: Vec<Path> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let p = simulate_bm_manifold(s2, frame.base(), &cfg, &mut GaussianStream::new(17, i)).unwrap();
            antidevelop(&p, &frame).unwrap()
        })
        .collect();
    for k in [0usize, 499, 999] {
        for c in 0..2 {
            let inc: Vec<f64> = planes
                .iter()
                .map(|p| p.points()[k + 1].coords()[c] - p.points()[k].coords()[c])
                .collect();
            let (mean, var) = mean_and_var(&inc);
            assert!((var - dt).abs() <= 3.0 * var_se(dt, inc.len()), "step {k}, coord {c}: var {var}");
            assert!(mean.abs() <= 3.0 * (dt / inc.len() as f64).sqrt());
        }
    }
}

// ---- Lie group Brownian motion -------------------------------------------

fn so3_coefficients(basis: &brownian_manifold::liegroup::LieAlgebraBasis, r: &DMatrix<f64>) -> Vec<f64> {
    basis.coefficients(&matrix_log_so(r).unwrap())
}

#[test]
fn so2_angle_increments_have_variance_sigma2_h() {
    let sigma2 = 0.25;
    let params = BrownianDistParams::so2(rotation2(0.7), sigma2).unwrap();
    let cfg = SimConfig::new(1.0, 1e-2, 10_000, 18).unwrap();
    let (s, e) = (30, 40);
    let h = 0.1;
    let angles: Vec<f64> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let p = simulate_left_bm(&params, &cfg, &mut GaussianStream::new(18, i));
            let inc = p.points()[s].matrix().transpose() * p.points()[e].matrix();
            inc[(1, 0)].atan2(inc[(0, 0)])
        })
        .collect();
    let (_, var) = mean_and_var(&angles);
    let want = sigma2 * h;
    assert!((var - want).abs() <= 3.0 * var_se(want, angles.len()), "{var} vs {want}");
}

#[test]
fn left_bm_right_increments_are_stationary() {
    let c = DMatrix::from_row_slice(3, 3, &[0.3, 0.05, 0.0, 0.05, 0.2, 0.0, 0.0, 0.0, 0.1]);
    let params = BrownianDistParams::new(to_dmatrix3(rodrigues(&Vector3::new(0.2, 0.4, -0.1))), c).unwrap();
    let basis = so_basis(3).unwrap();
    let cfg = SimConfig::new(1.0, 1e-2, 4000, 19).unwrap();
    let windows = [(10usize, 30usize), (60, 80)];
    let samples: Vec<[Vec<f64>; 2]> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let p = simulate_left_bm(&params, &cfg, &mut GaussianStream::new(19, i));
            windows.map(|(s, e)| so3_coefficients(&basis, &(p.points()[s].matrix().transpose() * p.points()[e].matrix())))
        })
        .collect();
    let m = samples.len() as f64;
    for i in 0..3 {
        for j in i..3 {
            let moments: Vec<Vec<f64>> = (0..2)
                .map(|w| samples.iter().map(|s| s[w][i] * s[w][j]).collect())
                .collect();
            let (m0, v0) = mean_and_var(&moments[0]);
            let (m1, v1) = mean_and_var(&moments[1]);
            let se = ((v0 + v1) / m).sqrt();
            assert!((m0 - m1).abs() <= 3.0 * se, "E[ξ{i}ξ{j}]: {m0} vs {m1} (SE {se})");
        }
    }
}

#[test]
fn so3_sample_mean_with_identity_covariance() {
    let params = BrownianDistParams::new(DMatrix::identity(3, 3), DMatrix::identity(3, 3)).unwrap();
    let ys = sample_brownian_dist_many(&params, 1e-3, 20_000, 20).unwrap();
    let want = (-1.0f64).exp();
    for i in 0..3 {
        for j in 0..3 {
            let entries: Vec<f64> = ys.iter().map(|y| y.matrix()[(i, j)]).collect();
            let (mean, var) = mean_and_var(&entries);
            let target = if i == j { want } else { 0.0 };
            let se = (var / entries.len() as f64).sqrt();
            assert!((mean - target).abs() <= 3.0 * se, "entry ({i},{j}): {mean} vs {target}");
        }
    }
}

#[test]
fn so3_estimation_at_a_generic_location() {
    let g = to_dmatrix3(rodrigues(&Vector3::new(-1.1, 0.4, 2.0)));
    let c = DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, 0.2, 0.1]));
    let params = BrownianDistParams::new(g.clone(), c.clone()).unwrap();
    let ys = sample_brownian_dist_many(&params, 1e-3, 200_000, 21).unwrap();
    let r = estimate_so3(&ys).unwrap();
    let c_err = (r.c_hat.as_ref().unwrap() - &c).amax();
    let g_err = (r.g_hat.matrix().transpose() * &g - DMatrix::<f64>::identity(3, 3)).norm();
    assert!(c_err <= 0.03, "max |Ĉ − C| = {c_err}");
    assert!(g_err <= 0.03, "‖ĝᵀg − I‖ = {g_err}");
    assert!(!r.diagnostics.clamped);
}

#[test]
fn so4_diagonal_covariance_recovery() {
    let c = DMatrix::identity(6, 6) * 0.1;
    let params = BrownianDistParams::new(DMatrix::identity(4, 4), c).unwrap();
    // 100 steps per draw: the O(δ) bias of the mean is far below the tolerance
    let ys = sample_brownian_dist_many(&params, 1e-2, 200_000, 22).unwrap();
    let r = estimate_son(&ys, 4, CovarianceStructure::DiagonalC).unwrap();
    let c_hat = r.c_hat.unwrap();
    for i in 0..6 {
        assert!((c_hat[(i, i)] - 0.1).abs() <= 0.03, "Ĉ[{i}] = {}", c_hat[(i, i)]);
    }
    assert!(r.diagnostics.underdetermined);
    // the generator itself is identified
    let z = brownian_manifold::estimation::generator_z(&(DMatrix::identity(6, 6) * 0.1), &so_basis(4).unwrap())
        .unwrap();
    assert!((&r.z_hat - z.matrix()).amax() <= 0.01);
    assert!((matrix_exp(&r.z_hat) - matrix_exp(z.matrix())).amax() <= 0.01);
}
