//! `bmsim` command-line front end.
//!
//! Every subcommand prints exactly one line of JSON to stdout:
//! `{"command", "config", "result", "outputs"}`, where `config` is the fully
//! resolved flag set. Errors go to stderr and set the exit code
//! (2: input/usage, 3: numerical).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::estimation::{
    estimate_son_with, extrinsic_mean, generator_z, matrix_rows, CovarianceStructure, LocationMethod,
};
use crate::integrals::{
    brownian_increments, euler_maruyama_driven, heun_stratonovich_driven, ito_sum, quadratic_variation,
    right_endpoint_sum, stratonovich_sum, DiffusionSpec, Partition, brownian_on_partition,
};
use crate::io::{
    metadata_path, read_paths_csv_file, read_samples_csv_file, write_json_file, write_paths_csv_file,
    write_paths_json, write_records_csv, write_samples_csv, write_traces_csv, ExperimentRecord,
    PathLayout, SampleMetadata,
};
use crate::liegroup::{sample_brownian_dist_many, simulate_left_bm, BrownianDistParams};
use crate::linalg::{matrix_exp, rodrigues, rotation2, so_distance};
use crate::manifold::{FrameAtPoint, ManifoldSpec, Point};
use crate::process::{
    antidevelop, develop, simulate_bm_euclidean, simulate_bm_manifold, simulate_ensemble, Path, SimConfig,
};
use crate::random::GaussianStream;
use crate::series::{rearrangement_experiment, Permutation, RearrangementMode, SeriesTrace};

#[derive(Debug, Parser)]
#[command(
    name = "bmsim",
    version,
    about = "Brownian motion on manifolds and Lie groups: simulation, stochastic integrals, estimation",
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Brownian motion on euclidean:n, sphere:n or so:n (geodesic random walk).
    Bm(BmArgs),
    /// Roll a plane path onto the sphere without slipping or twisting.
    Develop(DevelopArgs),
    /// Unroll a sphere path back onto the tangent plane.
    Antidevelop(AntidevelopArgs),
    /// Riemann-sum experiments: quadratic variation, Itô, Stratonovich, endpoint order.
    Integrate(IntegrateArgs),
    /// Scalar SDE solvers (Euler–Maruyama, stochastic Heun).
    Sde(SdeArgs),
    /// Coloured left-invariant Brownian motion on SO(n).
    LieBm(LieBmArgs),
    /// Draw samples from the Brownian distribution N(g, C) on SO(n).
    Sample(SampleArgs),
    /// Estimate (g, C) from a sample file.
    Estimate(EstimateArgs),
    /// Rearrangement experiments on the harmonic series with ± signs.
    Series(SeriesArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Args, Serialize)]
pub struct Grid {
    /// Time horizon.
    #[arg(long = "T", default_value_t = 1.0)]
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Step size (a shorter final step is used if it does not divide T).
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Number of independent paths; path i uses stream (seed, i).
    #[arg(long, default_value_t = 1)]
    pub paths: usize,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl Grid {
    fn config(&self) -> Result<SimConfig> {
        SimConfig::new(self.horizon, self.dt, self.paths, self.seed)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PathOutput {
    /// Output file (paths are only summarised if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PathLayout::Long)]
    pub layout: PathLayout,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
}

#[derive(Debug, Args, Serialize)]
pub struct BmArgs {
    /// Manifold as kind:n (euclidean:n, sphere:n — unit sphere in Rⁿ, so:n).
    #[arg(long, default_value = "euclidean:1")]
    #[serde(serialize_with = "display")]
    pub manifold: ManifoldSpec,
    /// Start point: comma-separated coordinates (matrices: rows separated by `;`).
    /// Defaults to the origin, the north pole e_n, or the identity.
    #[arg(long)]
    pub start: Option<String>,
    #[command(flatten)]
    pub grid: Grid,
    #[command(flatten)]
    pub output: PathOutput,
}

#[derive(Debug, Args, Serialize)]
pub struct DevelopArgs {
    /// Target sphere (sphere:n, unit sphere in Rⁿ).
    #[arg(long, default_value = "sphere:3")]
    #[serde(serialize_with = "display")]
    pub manifold: ManifoldSpec,
    /// Plane path CSV with n−1 coordinates; a planar Brownian motion is
    /// simulated on the grid if omitted.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub grid: Grid,
    #[command(flatten)]
    pub output: PathOutput,
}

#[derive(Debug, Args, Serialize)]
pub struct AntidevelopArgs {
    #[arg(long, default_value = "sphere:3")]
    #[serde(serialize_with = "display")]
    pub manifold: ManifoldSpec,
    /// Sphere path CSV (single or long layout).
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub output: PathOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Σ (ΔB)².
    Qv,
    /// Left-endpoint sum Σ X(t_k) ΔB.
    Ito,
    /// Averaged-endpoint sum Σ ½(X(t_k) + X(t_{k+1})) ΔB.
    Strat,
    /// Right-endpoint minus left-endpoint sum.
    Endpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Integrand {
    /// X = B (the driving Brownian motion itself).
    Brownian,
    /// X = t.
    Time,
}

#[derive(Debug, Args, Serialize)]
pub struct IntegrateArgs {
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    #[arg(long, value_enum, default_value_t = Integrand::Brownian)]
    pub integrand: Integrand,
    /// Number of partition intervals.
    #[arg(long = "N", default_value_t = 100_000)]
    #[serde(rename = "N")]
    pub intervals: usize,
    #[arg(long = "T", default_value_t = 1.0)]
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Number of replicates; replicate r uses seed + r.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Count values inside [lo, hi] (defaults to ±2% of T for `qv`).
    #[arg(long, value_parser = parse_band)]
    pub band: Option<(f64, f64)>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Em,
    Heun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SdeModel {
    /// dX = μX dt + σX dB (Itô) — for `heun`, dX = σX ∘ dB and μ must be 0.
    Gbm,
    /// dX = −θX dt + σ dB — for `heun`, θ must be 0.
    Ou,
}

#[derive(Debug, Args, Serialize)]
pub struct SdeArgs {
    #[arg(long, value_enum, default_value_t = Scheme::Em)]
    pub scheme: Scheme,
    #[arg(long, value_enum, default_value_t = SdeModel::Gbm)]
    pub model: SdeModel,
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub theta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub x0: f64,
    #[command(flatten)]
    pub grid: Grid,
    #[command(flatten)]
    pub output: PathOutput,
}

#[derive(Debug, Args, Serialize)]
pub struct GroupParams {
    /// Group as so:n.
    #[arg(long, default_value = "so:3")]
    #[serde(serialize_with = "display")]
    pub group: ManifoldSpec,
    /// Isotropic SO(2) variance (alternative to --C).
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Covariance in the orthonormal Lie-algebra basis: `diag:a,b,c`,
    /// `iso:s`, or rows `a,b,c;d,e,f;...`.
    #[arg(long = "C")]
    #[serde(rename = "C")]
    pub covariance: Option<String>,
    /// Location: `identity`, `angle:θ` (SO(2)), `axis:x,y,z` (SO(3)
    /// rotation vector), or matrix rows.
    #[arg(long, default_value = "identity")]
    pub g: String,
}

impl GroupParams {
    fn params(&self) -> Result<BrownianDistParams> {
        let n = group_dim(self.group)?;
        let g = parse_group_element(&self.g, n)?;
        match (&self.sigma2, &self.covariance) {
            (Some(_), Some(_)) => Err(Error::Input("give either --sigma2 or --C, not both".into())),
            (Some(s2), None) => {
                if n != 2 {
                    return Err(Error::Input("--sigma2 is only meaningful on so:2; use --C".into()));
                }
                BrownianDistParams::so2(g, *s2)
            }
            (None, Some(c)) => {
                let d = n * (n - 1) / 2;
                BrownianDistParams::new(g, parse_matrix(c, d)?)
            }
            (None, None) => Err(Error::Input("a covariance is required (--C or --sigma2)".into())),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct LieBmArgs {
    #[command(flatten)]
    pub params: GroupParams,
    #[command(flatten)]
    pub grid: Grid,
    #[command(flatten)]
    pub output: PathOutput,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[command(flatten)]
    pub params: GroupParams,
    /// Number of samples; sample i uses stream (seed, i).
    #[arg(long, default_value_t = 1000)]
    pub m: usize,
    /// Walk step; must divide 1.
    #[arg(long, default_value_t = 1e-3)]
    pub delta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample CSV; metadata is written next to it with a .json extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StructureArg {
    ZOnly,
    Diagonal,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LocationArg {
    Polar,
    Qr,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimateArgs {
    /// Expected group (checked against the file); inferred if omitted.
    #[arg(long)]
    #[serde(serialize_with = "display_opt")]
    pub group: Option<ManifoldSpec>,
    /// Sample CSV.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Covariance structure; defaults to `full` on so:2/so:3 and `z-only` above.
    #[arg(long, value_enum)]
    pub structure: Option<StructureArg>,
    #[arg(long, value_enum, default_value_t = LocationArg::Polar)]
    pub location: LocationArg,
    /// Report JSON file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesMode {
    /// Alternating harmonic series in natural order.
    Natural,
    /// Greedy rearrangement towards --target.
    Target,
    /// Random signs, natural order vs. --perm.
    Random,
}

#[derive(Debug, Args, Serialize)]
pub struct SeriesArgs {
    #[arg(long, value_enum, default_value_t = SeriesMode::Natural)]
    pub mode: SeriesMode,
    /// Number of terms.
    #[arg(long = "N", default_value_t = 1_000_000)]
    #[serde(rename = "N")]
    pub terms: usize,
    #[arg(long)]
    pub target: Option<f64>,
    /// Block permutation `odd:even` for the random mode.
    #[arg(long, default_value = "2:1", value_parser = parse_perm)]
    #[serde(serialize_with = "perm_str")]
    pub perm: (usize, usize),
    /// Replicates for the random mode; replicate r uses seed + r.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Agreement tolerance for the random mode.
    #[arg(long, default_value_t = 1e-2)]
    pub tol: f64,
    /// Record a partial sum every this many terms.
    #[arg(long, default_value_t = 1000)]
    pub every: usize,
    /// Partial-sum traces (csv) or final-value records (json).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
}

fn display<S: serde::Serializer, T: std::fmt::Display>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn display_opt<S: serde::Serializer, T: std::fmt::Display>(
    v: &Option<T>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.collect_str(v),
        None => s.serialize_none(),
    }
}

fn perm_str<S: serde::Serializer>(v: &(usize, usize), s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(&format_args!("{}:{}", v.0, v.1))
}

fn parse_band(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number `{a}`"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number `{b}`"))?;
    if !(lo <= hi) {
        return Err("band needs lo ≤ hi".into());
    }
    Ok((lo, hi))
}

fn parse_perm(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected odd:even")?;
    let odd: usize = a.trim().parse().map_err(|_| format!("bad count `{a}`"))?;
    let even: usize = b.trim().parse().map_err(|_| format!("bad count `{b}`"))?;
    if odd == 0 || even == 0 {
        return Err("block sizes must be positive".into());
    }
    Ok((odd, even))
}

fn parse_numbers(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::Input(format!("`{x}` is not a number")))
        })
        .collect()
}

/// `diag:a,b,…`, `iso:s`, a single number (1×1), or `;`-separated rows.
pub fn parse_matrix(s: &str, d: usize) -> Result<DMatrix<f64>> {
    let s = s.trim();
    if let Some(rest) = s.strip_prefix("diag:") {
        let v = parse_numbers(rest)?;
        if v.len() != d {
            return Err(Error::Input(format!("diag: expected {d} entries, got {}", v.len())));
        }
        return Ok(DMatrix::from_diagonal(&DVector::from_vec(v)));
    }
    if let Some(rest) = s.strip_prefix("iso:") {
        let v = parse_numbers(rest)?;
        if v.len() != 1 {
            return Err(Error::Input("iso: expected one number".into()));
        }
        return Ok(DMatrix::identity(d, d) * v[0]);
    }
    let rows: Vec<Vec<f64>> = s.split(';').map(parse_numbers).collect::<Result<_>>()?;
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Input(format!("expected a {d}x{d} matrix as rows separated by `;`")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

/// `identity`, `angle:θ` (n = 2), `axis:x,y,z` (n = 3), or rows.
pub fn parse_group_element(s: &str, n: usize) -> Result<DMatrix<f64>> {
    let s = s.trim();
    let g = if s == "identity" || s == "id" {
        DMatrix::identity(n, n)
    } else if let Some(rest) = s.strip_prefix("angle:") {
        if n != 2 {
            return Err(Error::Input("angle: is only valid on so:2".into()));
        }
        let v = parse_numbers(rest)?;
        if v.len() != 1 {
            return Err(Error::Input("angle: expected one number".into()));
        }
        rotation2(v[0])
    } else if let Some(rest) = s.strip_prefix("axis:") {
        if n != 3 {
            return Err(Error::Input("axis: is only valid on so:3".into()));
        }
        let v = parse_numbers(rest)?;
        if v.len() != 3 {
            return Err(Error::Input("axis: expected three numbers".into()));
        }
        let r = rodrigues(&Vector3::new(v[0], v[1], v[2]));
        DMatrix::from_iterator(3, 3, r.iter().copied())
    } else {
        parse_matrix(s, n)?
    };
    Ok(ManifoldSpec::SpecialOrthogonal(n).point(g)?.into_matrix())
}

fn group_dim(group: ManifoldSpec) -> Result<usize> {
    match group {
        ManifoldSpec::SpecialOrthogonal(n) => Ok(n),
        other => Err(Error::Input(format!("expected a group so:n, got {other}"))),
    }
}

fn parse_start(manifold: ManifoldSpec, s: Option<&str>) -> Result<Point> {
    let Some(s) = s else {
        return Ok(manifold.base_point());
    };
    match manifold {
        ManifoldSpec::SpecialOrthogonal(n) => {
            Ok(Point::from_matrix_unchecked(parse_group_element(s, n)?))
        }
        _ => manifold.point_from_slice(&parse_numbers(s)?),
    }
}

fn paths_stats(paths: &[Path]) -> Value {
    let k = paths[0].manifold().ambient_dim();
    let mut mean = vec![0.0; k];
    for p in paths {
        for (m, x) in mean.iter_mut().zip(p.last().matrix().iter()) {
            *m += x / paths.len() as f64;
        }
    }
    json!({
        "n_paths": paths.len(),
        "n_points": paths[0].len(),
        "max_membership_defect": paths.iter().map(Path::max_membership_defect).fold(0.0, f64::max),
        "mean_final": mean,
    })
}

fn write_paths(paths: &[Path], out: &PathOutput) -> Result<Vec<PathBuf>> {
    let Some(target) = &out.out else {
        return Ok(Vec::new());
    };
    match out.format {
        OutputFormat::Csv => write_paths_csv_file(paths, out.layout, target),
        OutputFormat::Json => {
            let mut w = BufWriter::new(File::create(target)?);
            write_paths_json(paths, &mut w)?;
            w.flush()?;
            Ok(vec![target.clone()])
        }
    }
}

struct Outcome {
    result: Value,
    outputs: Vec<PathBuf>,
}

fn run_bm(a: &BmArgs) -> Result<Outcome> {
    let cfg = a.grid.config()?;
    let start = parse_start(a.manifold, a.start.as_deref())?;
    let paths: Vec<Path> = match a.manifold {
        ManifoldSpec::Euclidean(d) if a.start.is_none() => {
            simulate_ensemble(&cfg, |mut s| Ok(simulate_bm_euclidean(d, &cfg, &mut s)))
        }
        m => simulate_ensemble(&cfg, |mut s| simulate_bm_manifold(m, &start, &cfg, &mut s)),
    }
    .into_iter()
    .collect::<Result<_>>()?;
    let mut result = paths_stats(&paths);
    if let ManifoldSpec::Sphere(_) = a.manifold {
        let p0 = start.matrix();
        let cos: f64 =
            paths.iter().map(|p| p.last().matrix().dot(p0)).sum::<f64>() / paths.len() as f64;
        result["mean_cos_to_start"] = json!(cos);
    }
    let outputs = write_paths(&paths, &a.output)?;
    Ok(Outcome { result, outputs })
}

fn run_develop(a: &DevelopArgs) -> Result<Outcome> {
    let ManifoldSpec::Sphere(n) = a.manifold else {
        return Err(Error::Unsupported(format!("development needs a sphere, got {}", a.manifold)));
    };
    let plane = ManifoldSpec::Euclidean(n - 1);
    let plane_paths = match &a.input {
        Some(file) => read_paths_csv_file(file, plane)?,
        None => {
            let cfg = a.grid.config()?;
            simulate_ensemble(&cfg, |mut s| simulate_bm_euclidean(n - 1, &cfg, &mut s))
        }
    };
    let frame = FrameAtPoint::north_pole(n)?;
    let paths: Vec<Path> = plane_paths
        .par_iter()
        .map(|p| develop(&frame, p))
        .collect::<Result<_>>()?;
    let result = paths_stats(&paths);
    let outputs = write_paths(&paths, &a.output)?;
    Ok(Outcome { result, outputs })
}

fn run_antidevelop(a: &AntidevelopArgs) -> Result<Outcome> {
    let ManifoldSpec::Sphere(_) = a.manifold else {
        return Err(Error::Unsupported(format!("anti-development needs a sphere, got {}", a.manifold)));
    };
    let sphere_paths = read_paths_csv_file(&a.input, a.manifold)?;
    let paths: Vec<Path> = sphere_paths
        .par_iter()
        .map(|p| {
            let frame = FrameAtPoint::sphere_at(&p.points()[0])?;
            antidevelop(p, &frame)
        })
        .collect::<Result<_>>()?;
    let result = paths_stats(&paths);
    let outputs = write_paths(&paths, &a.output)?;
    Ok(Outcome { result, outputs })
}

fn integrate_value(a: &IntegrateArgs, partition: &Partition, seed: u64) -> Result<f64> {
    let b = brownian_on_partition(partition, &mut GaussianStream::new(seed, 0));
    let x: Vec<f64> = match a.integrand {
        Integrand::Brownian => b.clone(),
        Integrand::Time => partition.points().to_vec(),
    };
    match a.experiment {
        Experiment::Qv => Ok(quadratic_variation(&b)),
        Experiment::Ito => ito_sum(&x, &b),
        Experiment::Strat => stratonovich_sum(&x, &b),
        Experiment::Endpoint => Ok(right_endpoint_sum(&x, &b)? - ito_sum(&x, &b)?),
    }
}

fn summary_stats(values: &[f64]) -> Value {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    json!({
        "count": values.len(),
        "mean": mean,
        "sd": var.sqrt(),
        "min": values.iter().copied().fold(f64::INFINITY, f64::min),
        "max": values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

fn run_integrate(a: &IntegrateArgs) -> Result<Outcome> {
    if a.seeds == 0 {
        return Err(Error::Input("--seeds must be at least 1".into()));
    }
    let partition = Partition::uniform(a.horizon, a.intervals)?;
    let name = match (a.experiment, a.integrand) {
        (Experiment::Qv, _) => "qv".to_string(),
        (e, Integrand::Brownian) => format!("{}:B", e.to_possible_value().unwrap().get_name()),
        (e, Integrand::Time) => format!("{}:t", e.to_possible_value().unwrap().get_name()),
    };
    let records: Vec<ExperimentRecord> = (0..a.seeds)
        .into_par_iter()
        .map(|r| {
            let seed = a.seed.wrapping_add(r);
            Ok(ExperimentRecord {
                name: name.clone(),
                n: a.intervals,
                seed,
                value: integrate_value(a, &partition, seed)?,
            })
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = records.iter().map(|r| r.value).collect();
    let mut result = summary_stats(&values);
    let band = a.band.or((a.experiment == Experiment::Qv).then_some((0.98 * a.horizon, 1.02 * a.horizon)));
    if let Some((lo, hi)) = band {
        result["band"] = json!([lo, hi]);
        result["in_band"] = json!(values.iter().filter(|v| (lo..=hi).contains(*v)).count());
    }
    let mut outputs = Vec::new();
    if let Some(target) = &a.out {
        match a.format {
            OutputFormat::Csv => write_records_csv(&records, BufWriter::new(File::create(target)?))?,
            OutputFormat::Json => write_json_file(&records, target)?,
        }
        outputs.push(target.clone());
    }
    Ok(Outcome { result, outputs })
}

fn run_sde(a: &SdeArgs) -> Result<Outcome> {
    let cfg = a.grid.config()?;
    let (mu, sigma, theta, x0) = (a.mu, a.sigma, a.theta, a.x0);
    let times = cfg.time_grid();
    let horizon = *times.last().unwrap();
    let runs: Vec<(Path, Option<f64>)> = simulate_ensemble(&cfg, |mut s| -> Result<(Path, Option<f64>)> {
        match a.scheme {
            Scheme::Em => {
                let inc = brownian_increments(&times, 1, &mut s);
                let spec = match a.model {
                    SdeModel::Gbm => DiffusionSpec::scalar(move |_, x| mu * x, move |_, x| sigma * x),
                    SdeModel::Ou => DiffusionSpec::scalar(move |_, x| -theta * x, move |_, _| sigma),
                };
                let path = euler_maruyama_driven(&spec, &DVector::from_element(1, x0), &times, &inc)?;
                let exact = (a.model == SdeModel::Gbm).then(|| {
                    let bt: f64 = inc.iter().map(|d| d[0]).sum();
                    x0 * ((mu - 0.5 * sigma * sigma) * horizon + sigma * bt).exp()
                });
                Ok((path, exact))
            }
            Scheme::Heun => {
                let inc: Vec<f64> = times
                    .windows(2)
                    .map(|w| (w[1] - w[0]).sqrt() * s.next_gaussian())
                    .collect();
                let bt: f64 = inc.iter().sum();
                match a.model {
                    SdeModel::Gbm => {
                        if mu != 0.0 {
                            return Err(Error::Unsupported("heun integrates dX = σX∘dB only; set --mu 0".into()));
                        }
                        let path = heun_stratonovich_driven(move |_, x| sigma * x, x0, &times, &inc)?;
                        Ok((path, Some(x0 * (sigma * bt).exp())))
                    }
                    SdeModel::Ou => {
                        if theta != 0.0 {
                            return Err(Error::Unsupported("heun has no drift term; set --theta 0".into()));
                        }
                        let path = heun_stratonovich_driven(move |_, _| sigma, x0, &times, &inc)?;
                        Ok((path, Some(x0 + sigma * bt)))
                    }
                }
            }
        }
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let finals: Vec<f64> = runs.iter().map(|(p, _)| p.last().coords()[0]).collect();
    let mut result = summary_stats(&finals);
    let errors: Vec<f64> = runs
        .iter()
        .filter_map(|(p, e)| e.map(|e| (p.last().coords()[0] - e).abs()))
        .collect();
    if !errors.is_empty() {
        result["strong_error"] = json!(errors.iter().sum::<f64>() / errors.len() as f64);
    }
    let paths: Vec<Path> = runs.into_iter().map(|(p, _)| p).collect();
    let outputs = write_paths(&paths, &a.output)?;
    Ok(Outcome { result, outputs })
}

fn run_lie_bm(a: &LieBmArgs) -> Result<Outcome> {
    let params = a.params.params()?;
    let cfg = a.grid.config()?;
    let paths: Vec<Path> = simulate_ensemble(&cfg, |mut s| simulate_left_bm(&params, &cfg, &mut s));
    let result = paths_stats(&paths);
    let outputs = write_paths(&paths, &a.output)?;
    Ok(Outcome { result, outputs })
}

fn run_sample(a: &SampleArgs) -> Result<Outcome> {
    let params = a.params.params()?;
    if a.m == 0 {
        return Err(Error::Input("--m must be at least 1".into()));
    }
    let samples = sample_brownian_dist_many(&params, a.delta, a.m, a.seed)?;
    let mats: Vec<DMatrix<f64>> = samples.iter().map(|p| p.matrix().clone()).collect();
    let mean = extrinsic_mean(&mats)?;
    let z = generator_z(params.covariance(), params.basis())?;
    let expected = params.g().matrix() * matrix_exp(z.matrix());
    let group = ManifoldSpec::SpecialOrthogonal(params.n());
    let result = json!({
        "m": a.m,
        "mean": matrix_rows(&mean),
        "expected_mean": matrix_rows(&expected),
        "mean_error_fro": (&mean - &expected).norm(),
        "max_membership_defect": samples.iter().map(|p| group.membership_defect(p.matrix())).fold(0.0, f64::max),
    });
    let mut outputs = Vec::new();
    if let Some(target) = &a.out {
        write_samples_csv(&samples, BufWriter::new(File::create(target)?))?;
        let meta = SampleMetadata::new(params.g().matrix(), params.covariance(), a.delta, a.seed, a.m);
        let meta_file = metadata_path(target);
        write_json_file(&meta, &meta_file)?;
        outputs.push(target.clone());
        outputs.push(meta_file);
    }
    Ok(Outcome { result, outputs })
}

fn run_estimate(a: &EstimateArgs) -> Result<Outcome> {
    let (n, samples) = read_samples_csv_file(&a.input)?;
    if let Some(group) = a.group {
        let expected = group_dim(group)?;
        if expected != n {
            return Err(Error::Input(format!("--group so:{expected} but the file holds {n}x{n} samples")));
        }
    }
    let structure = match a.structure {
        Some(StructureArg::ZOnly) => CovarianceStructure::ZOnly,
        Some(StructureArg::Diagonal) => CovarianceStructure::DiagonalC,
        Some(StructureArg::Full) => CovarianceStructure::FullC,
        None if n <= 3 => CovarianceStructure::FullC,
        None => CovarianceStructure::ZOnly,
    };
    let location = match a.location {
        LocationArg::Polar => LocationMethod::Polar,
        LocationArg::Qr => LocationMethod::Qr,
    };
    let report = estimate_son_with(&samples, n, structure, location)?;
    let mut result = report.to_json();
    // distance to the true location if metadata is available
    let meta_file = metadata_path(&a.input);
    if meta_file.exists() {
        if let Ok(meta) = crate::io::read_json_file::<SampleMetadata>(&meta_file) {
            if meta.n == n {
                let g = DMatrix::from_fn(n, n, |i, j| meta.g[i][j]);
                result["distance_to_true_g"] = json!(so_distance(&g, report.g_hat.matrix())?);
            }
        }
    }
    let mut outputs = Vec::new();
    if let Some(target) = &a.out {
        write_json_file(&report.to_json(), target)?;
        outputs.push(target.clone());
    }
    Ok(Outcome { result, outputs })
}

fn run_series(a: &SeriesArgs) -> Result<Outcome> {
    if a.terms == 0 {
        return Err(Error::Input("--N must be at least 1".into()));
    }
    let permutation = Permutation::BlockInterleave { odd: a.perm.0, even: a.perm.1 };
    let mut traces: Vec<SeriesTrace> = Vec::new();
    let mut records = Vec::new();
    let result = match a.mode {
        SeriesMode::Natural => {
            traces = rearrangement_experiment(RearrangementMode::Natural, a.terms, a.every);
            let s = traces[0].final_sum;
            json!({ "final_sum": s, "error_vs_ln2": (s - std::f64::consts::LN_2).abs() })
        }
        SeriesMode::Target => {
            let target = a
                .target
                .ok_or_else(|| Error::Input("--mode target needs --target".into()))?;
            if !target.is_finite() {
                return Err(Error::Input("--target must be finite".into()));
            }
            traces = rearrangement_experiment(RearrangementMode::Target(target), a.terms, a.every);
            let s = traces[0].final_sum;
            json!({ "final_sum": s, "error_vs_target": (s - target).abs() })
        }
        SeriesMode::Random => {
            if a.seeds == 0 {
                return Err(Error::Input("--seeds must be at least 1".into()));
            }
            let runs: Vec<(u64, Vec<SeriesTrace>)> = (0..a.seeds)
                .into_par_iter()
                .map(|r| {
                    let seed = a.seed.wrapping_add(r);
                    let mode = RearrangementMode::RandomSigns { seed, permutation };
                    (seed, rearrangement_experiment(mode, a.terms, a.every))
                })
                .collect();
            let diffs: Vec<f64> = runs.iter().map(|(_, t)| (t[0].final_sum - t[1].final_sum).abs()).collect();
            for (seed, ts) in runs {
                for mut t in ts {
                    records.push(ExperimentRecord { name: t.label.clone(), n: a.terms, seed, value: t.final_sum });
                    if a.seeds > 1 {
                        t.label = format!("seed={seed}:{}", t.label);
                    }
                    traces.push(t);
                }
            }
            json!({
                "max_abs_difference": diffs.iter().copied().fold(0.0, f64::max),
                "agree_within_tol": diffs.iter().filter(|d| **d <= a.tol).count(),
                "replicates": diffs.len(),
            })
        }
    };
    if records.is_empty() {
        records = traces
            .iter()
            .map(|t| ExperimentRecord { name: t.label.clone(), n: a.terms, seed: a.seed, value: t.final_sum })
            .collect();
    }
    let mut outputs = Vec::new();
    if let Some(target) = &a.out {
        match a.format {
            OutputFormat::Csv => write_traces_csv(&traces, BufWriter::new(File::create(target)?))?,
            OutputFormat::Json => write_json_file(&records, target)?,
        }
        outputs.push(target.clone());
    }
    Ok(Outcome { result, outputs })
}

fn dispatch(cmd: &Command) -> (&'static str, Value, Result<Outcome>) {
    fn cfg<T: Serialize>(a: &T) -> Value {
        serde_json::to_value(a).unwrap_or(Value::Null)
    }
    match cmd {
        Command::Bm(a) => ("bm", cfg(a), run_bm(a)),
        Command::Develop(a) => ("develop", cfg(a), run_develop(a)),
        Command::Antidevelop(a) => ("antidevelop", cfg(a), run_antidevelop(a)),
        Command::Integrate(a) => ("integrate", cfg(a), run_integrate(a)),
        Command::Sde(a) => ("sde", cfg(a), run_sde(a)),
        Command::LieBm(a) => ("lie-bm", cfg(a), run_lie_bm(a)),
        Command::Sample(a) => ("sample", cfg(a), run_sample(a)),
        Command::Estimate(a) => ("estimate", cfg(a), run_estimate(a)),
        Command::Series(a) => ("series", cfg(a), run_series(a)),
    }
}

/// Parses `argv` (including the program name), runs the command, writes the
/// JSON summary to `stdout` and diagnostics to `stderr`, and returns the exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    2
                }
            };
        }
    };
    let (name, config, outcome) = dispatch(&cli.command);
    match outcome {
        Ok(Outcome { result, outputs }) => {
            let summary = json!({
                "command": name,
                "config": config,
                "result": result,
                "outputs": outputs,
            });
            if writeln!(stdout, "{summary}").is_err() {
                return 2;
            }
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "bmsim {name}: {e}");
            e.exit_code()
        }
    }
}
