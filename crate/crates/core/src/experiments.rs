//! Problem generators, evaluation metrics and the experiment suites, plus
//! the MNIST (IDX) reader and the flat config format used by the CLI.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::{
    frank_wolfe_safe, g_optimal, g_value, safety_margin, DesignProblem, FeatureMatrix, FwOptions,
};
use crate::numerics::{
    dot, least_squares, sample_ellipsoid_uniform, sample_simplex, sample_unit_sphere, seeded_rng,
    Cholesky, Ellipsoid, Matrix,
};
use crate::safepe::{audit_safety, audit_updates, run_safepe, BanditInstance};
use crate::tabular::{mixture_policy, Policy, RewardBox};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Violations above this count as unsafe in the summaries.
pub const VIOLATION_TOL: f64 = 1e-6;

/// Mixes a base seed with a path of indices into a child seed (splitmix64).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut s = base;
    for &p in path {
        s ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(s << 6).wrapping_add(s >> 2);
        let mut z = s.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        s = z ^ (z >> 31);
    }
    s
}

/// Formats with 9 significant digits.
pub fn fmt_sig(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.8e}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub d: usize,
    pub k: usize,
    pub alpha: f64,
    pub seed: u64,
}

/// Unit-sphere actions, Dirichlet(1) baseline, `θ̄ ~ U[1,2]^d`, `Σ̄ = I`.
pub fn gen_synthetic<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<DesignProblem> {
    if spec.d == 0 || spec.k < spec.d {
        return Err(Error::InvalidInput(format!("need 1 ≤ d ≤ K, got d = {}, K = {}", spec.d, spec.k)));
    }
    let cols: Vec<Vec<f64>> = (0..spec.k).map(|_| sample_unit_sphere(rng, spec.d)).collect();
    let pi0 = Policy::new(sample_simplex(rng, spec.k))?;
    let center: Vec<f64> = (0..spec.d).map(|_| rng.random_range(1.0..=2.0)).collect();
    DesignProblem::new(
        FeatureMatrix::from_columns(&cols)?,
        pi0,
        spec.alpha,
        Ellipsoid::new(center, Matrix::identity(spec.d))?,
    )
}

/// `max_{θ∈Θ} (απ0 − π)ᵀ Aᵀ θ`; positive means `π` is unsafe for some `θ`.
pub fn safety_violation_metric(pi: &Policy, prob: &DesignProblem) -> f64 {
    -safety_margin(pi, prob)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean suboptimality of the greedy action after fitting `θ` by least
/// squares on `10d` samples logged by `logging`, with `θ* ~ U(Θ)`.
pub fn off_policy_gap<R: Rng + ?Sized>(
    prob: &DesignProblem,
    logging: &Policy,
    runs: usize,
    noise: f64,
    rng: &mut R,
) -> Result<f64> {
    if runs == 0 {
        return Ok(0.0);
    }
    let features = &prob.features;
    let d = features.dim();
    let n = 10 * d;
    let sampler = WeightedIndex::new(logging.probs()).map_err(|e| Error::InvalidPolicy(e.to_string()))?;
    let cols: Vec<Vec<f64>> = (0..features.num_actions()).map(|a| features.column(a)).collect();
    let mut total = 0.0;
    for _ in 0..runs {
        let theta = sample_ellipsoid_uniform(&prob.theta_set, rng);
        let rewards = features.rewards(&theta);
        let best = argmax(&rewards);
        let mut data = Vec::with_capacity(n * d);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let a = sampler.sample(rng);
            data.extend_from_slice(&cols[a]);
            let z: f64 = rng.sample(StandardNormal);
            y.push(rewards[a] + noise * z);
        }
        let x = Matrix::new(n, d, data)?;
        let (theta_hat, _) = least_squares(&x, &y, 1e-8)?;
        let chosen = argmax(&features.rewards(&theta_hat));
        total += rewards[best] - rewards[chosen];
    }
    Ok(total / runs as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    SafeOD,
    GOptimal,
    Mixture,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::SafeOD, Method::GOptimal, Method::Mixture];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::SafeOD => "SafeOD",
            Method::GOptimal => "GOptimal",
            Method::Mixture => "Mixture",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SafeOD" => Ok(Method::SafeOD),
            "GOptimal" => Ok(Method::GOptimal),
            "Mixture" => Ok(Method::Mixture),
            other => Err(Error::Parse(format!("unknown method {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub method: Method,
    pub d: usize,
    pub alpha: f64,
    pub seed: u64,
    pub width: f64,
    pub safety_violation: f64,
    pub offpolicy_gap: f64,
    pub runtime_ms: f64,
}

pub const CSV_HEADER: &str = "method,d,alpha,seed,width,safety_violation,offpolicy_gap,runtime_ms";

impl ExperimentRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.method,
            self.d,
            fmt_sig(self.alpha),
            self.seed,
            fmt_sig(self.width),
            fmt_sig(self.safety_violation),
            fmt_sig(self.offpolicy_gap),
            fmt_sig(self.runtime_ms)
        )
    }
}

pub fn write_rows_csv<W: Write>(rows: &[ExperimentRow], mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.to_csv_line())?;
    }
    Ok(())
}

pub fn read_rows_csv<R: Read>(r: R) -> Result<Vec<ExperimentRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize()
        .collect::<std::result::Result<Vec<ExperimentRow>, _>>()
        .map_err(|e| Error::Parse(e.to_string()))
}

/// How the three methods are run on one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub gap_runs: usize,
    pub noise: f64,
    /// Record wall-clock time; without it `runtime_ms` is written as 0 so
    /// that outputs are reproducible byte for byte.
    pub timing: bool,
    pub fw: FwOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            gap_runs: 200,
            noise: 1.0,
            timing: false,
            fw: FwOptions::default(),
        }
    }
}

/// A computed design for one method along with its solve time.
#[derive(Debug, Clone)]
pub struct MethodDesign {
    pub method: Method,
    pub policy: Policy,
    pub width: f64,
    pub runtime_ms: f64,
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64() * 1e3))
}

/// The α-free G-optimal design, shared by every α on the same instance.
pub fn goptimal_design(features: &FeatureMatrix, opts: &FwOptions) -> Result<MethodDesign> {
    let (r, ms) = timed(|| g_optimal(features, opts))?;
    Ok(MethodDesign {
        method: Method::GOptimal,
        policy: r.policy,
        width: r.width,
        runtime_ms: ms,
    })
}

pub fn method_design(method: Method, prob: &DesignProblem, opts: &FwOptions) -> Result<MethodDesign> {
    match method {
        Method::SafeOD => {
            let (r, ms) = timed(|| frank_wolfe_safe(prob, opts))?;
            Ok(MethodDesign {
                method,
                policy: r.policy,
                width: r.width,
                runtime_ms: ms,
            })
        }
        Method::GOptimal => goptimal_design(&prob.features, opts),
        Method::Mixture => {
            let (policy, ms) = timed(|| Ok(mixture_policy(&prob.pi0, prob.alpha)))?;
            let width = g_value(&policy, &prob.features, opts.ridge)?.sqrt();
            Ok(MethodDesign {
                method,
                policy,
                width,
                runtime_ms: ms,
            })
        }
    }
}

/// Scores a design: width, worst-case violation and off-policy gap.
pub fn evaluate_design<R: Rng + ?Sized>(
    design: &MethodDesign,
    prob: &DesignProblem,
    seed: u64,
    opts: &EvalOptions,
    rng: &mut R,
) -> Result<ExperimentRow> {
    Ok(ExperimentRow {
        method: design.method,
        d: prob.dim(),
        alpha: prob.alpha,
        seed,
        width: design.width,
        safety_violation: safety_violation_metric(&design.policy, prob),
        offpolicy_gap: off_policy_gap(prob, &design.policy, opts.gap_runs, opts.noise, rng)?,
        runtime_ms: if opts.timing { design.runtime_ms } else { 0.0 },
    })
}

/// Grid for the synthetic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub dims: Vec<usize>,
    pub alphas: Vec<f64>,
    pub k: usize,
    pub seeds: usize,
    pub base_seed: u64,
    pub eval: EvalOptions,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            dims: vec![2, 3, 4, 6, 8],
            alphas: vec![0.5, 0.7, 0.9, 0.95],
            k: 100,
            seeds: 50,
            base_seed: 0,
            eval: EvalOptions::default(),
        }
    }
}

/// One instance per `(d, seed)`, shared by every α, so trends in α compare
/// the same problems.
fn synthetic_seed_rows(cfg: &SuiteConfig, d: usize, seed: u64) -> Result<Vec<ExperimentRow>> {
    let mut rng = seeded_rng(derive_seed(cfg.base_seed, &[d as u64, seed]));
    let spec = SyntheticSpec { d, k: cfg.k, alpha: 0.0, seed };
    let base = gen_synthetic(&spec, &mut rng)?;
    let gopt = goptimal_design(&base.features, &cfg.eval.fw)?;
    let mut rows = Vec::with_capacity(3 * cfg.alphas.len());
    for (ai, &alpha) in cfg.alphas.iter().enumerate() {
        let prob = DesignProblem::new(base.features.clone(), base.pi0.clone(), alpha, base.theta_set.clone())?;
        for (mi, method) in Method::ALL.into_iter().enumerate() {
            let design = match method {
                Method::GOptimal => gopt.clone(),
                m => method_design(m, &prob, &cfg.eval.fw)?,
            };
            let mut gap_rng = seeded_rng(derive_seed(cfg.base_seed, &[d as u64, seed, ai as u64, mi as u64, 1]));
            rows.push(evaluate_design(&design, &prob, seed, &cfg.eval, &mut gap_rng)?);
        }
    }
    Ok(rows)
}

/// Rows ordered by `(d, seed, α, method)`; seeds run in parallel and are
/// merged in order, so the output depends only on the config.
pub fn run_synthetic_suite(cfg: &SuiteConfig) -> Result<Vec<ExperimentRow>> {
    let jobs: Vec<(usize, u64)> = cfg
        .dims
        .iter()
        .flat_map(|&d| (0..cfg.seeds as u64).map(move |s| (d, s)))
        .collect();
    let chunks = jobs
        .par_iter()
        .map(|&(d, s)| synthetic_seed_rows(cfg, d, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Aggregate of the rows sharing `(method, d, α)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub d: usize,
    pub alpha: f64,
    pub runs: usize,
    pub median_width: f64,
    pub violation_fraction: f64,
    pub mean_gap: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn summarize(rows: &[ExperimentRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Method, usize, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|k| *k == (r.method, r.d, r.alpha)) {
            keys.push((r.method, r.d, r.alpha));
        }
    }
    keys.into_iter()
        .map(|(method, d, alpha)| {
            let group: Vec<&ExperimentRow> = rows
                .iter()
                .filter(|r| r.method == method && r.d == d && r.alpha == alpha)
                .collect();
            let n = group.len();
            let widths: Vec<f64> = group.iter().map(|r| r.width).collect();
            SummaryRow {
                method,
                d,
                alpha,
                runs: n,
                median_width: median(&widths),
                violation_fraction: group.iter().filter(|r| r.safety_violation > VIOLATION_TOL).count() as f64
                    / n as f64,
                mean_gap: group.iter().map(|r| r.offpolicy_gap).sum::<f64>() / n as f64,
            }
        })
        .collect()
}

/// Gnuplot script drawing median width, violation fraction and mean gap
/// against `d` for each method and α found in `rows`.
pub fn plot_script(csv_path: &str, rows: &[ExperimentRow]) -> String {
    let mut alphas: Vec<f64> = rows.iter().map(|r| r.alpha).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let mut s = String::new();
    s.push_str("# gnuplot -p <this file>\n");
    s.push_str("set datafile separator ','\n");
    s.push_str("set key outside\nset xlabel 'd'\n");
    s.push_str("set terminal pngcairo size 1500,450\nset output 'synthetic.png'\n");
    s.push_str("set multiplot layout 1,3\n");
    let panels = [
        ("median width", 5, "median"),
        ("violation fraction", 6, "frac"),
        ("mean off-policy gap", 7, "mean"),
    ];
    for (title, col, stat) in panels {
        s.push_str(&format!("set title '{title}'\n"));
        let mut plots = Vec::new();
        for m in Method::ALL {
            for a in &alphas {
                let a = fmt_sig(*a);
                let filter = format!("(strcol(1) eq '{m}' && strcol(3) eq '{a}' ? ${col} : NaN)");
                let expr = match stat {
                    "frac" => format!("(strcol(1) eq '{m}' && strcol(3) eq '{a}' ? (${col} > {VIOLATION_TOL:e}) : NaN)"),
                    _ => filter,
                };
                let smooth = if stat == "median" { "" } else { " smooth unique" };
                let using = if stat == "median" {
                    format!("using 2:{expr}")
                } else {
                    format!("using 2:{expr}{smooth}")
                };
                plots.push(format!("'{csv_path}' {using} with linespoints title '{m} α={a}'"));
            }
        }
        s.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
    }
    s.push_str("unset multiplot\n");
    s
}

/// Raw IDX image file: `count` images of `rows × cols` bytes, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        if self.rows * self.cols == 0 {
            0
        } else {
            self.pixels.len() / (self.rows * self.cols)
        }
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn read_header_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    r.read_u32::<BigEndian>().map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::TruncatedFile(format!("{what} header")),
        _ => Error::Io(e.to_string()),
    })
}

fn read_payload<R: Read>(r: &mut R, len: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(len);
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() < len {
        return Err(Error::TruncatedFile(format!("{what}: expected {len} bytes, found {}", buf.len())));
    }
    Ok(buf)
}

pub fn parse_idx_images<R: Read>(mut r: R) -> Result<IdxImages> {
    let magic = read_header_u32(&mut r, "images")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_header_u32(&mut r, "images")? as usize;
    let rows = read_header_u32(&mut r, "images")? as usize;
    let cols = read_header_u32(&mut r, "images")? as usize;
    let pixels = read_payload(&mut r, count * rows * cols, "images")?;
    Ok(IdxImages { rows, cols, pixels })
}

pub fn parse_idx_labels<R: Read>(mut r: R) -> Result<Vec<u8>> {
    let magic = read_header_u32(&mut r, "labels")?;
    if magic != LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let count = read_header_u32(&mut r, "labels")? as usize;
    read_payload(&mut r, count, "labels")
}

pub fn write_idx_images<W: Write>(images: &IdxImages, mut w: W) -> Result<()> {
    w.write_u32::<BigEndian>(IMAGES_MAGIC)?;
    w.write_u32::<BigEndian>(images.count() as u32)?;
    w.write_u32::<BigEndian>(images.rows as u32)?;
    w.write_u32::<BigEndian>(images.cols as u32)?;
    w.write_all(&images.pixels)?;
    Ok(())
}

pub fn write_idx_labels<W: Write>(labels: &[u8], mut w: W) -> Result<()> {
    w.write_u32::<BigEndian>(LABELS_MAGIC)?;
    w.write_u32::<BigEndian>(labels.len() as u32)?;
    w.write_all(labels)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnistOptions {
    pub target_digit: u8,
    pub k: usize,
    pub pool: usize,
    pub ridge: f64,
    pub train_size: usize,
    pub alpha: f64,
    /// Confidence level of the ellipsoid around the fitted weights.
    pub delta: f64,
    pub seed: u64,
    /// Allow `pool = 1` (d = 784).
    pub force: bool,
}

impl Default for MnistOptions {
    fn default() -> Self {
        Self {
            target_digit: 0,
            k: 100,
            pool: 4,
            ridge: 1.0,
            train_size: 5000,
            alpha: 0.9,
            delta: 0.05,
            seed: 0,
            force: false,
        }
    }
}

/// Average-pools by `pool`, scales pixels to [0,1] and normalizes to unit
/// length (blank images stay zero).
pub fn pool_image(pixels: &[u8], rows: usize, cols: usize, pool: usize) -> Result<Vec<f64>> {
    if pool == 0 || rows % pool != 0 || cols % pool != 0 {
        return Err(Error::DimensionMismatch(format!(
            "pool {pool} does not divide a {rows}x{cols} image"
        )));
    }
    let (pr, pc) = (rows / pool, cols / pool);
    let mut out = vec![0.0; pr * pc];
    for r in 0..rows {
        for c in 0..cols {
            out[(r / pool) * pc + c / pool] += pixels[r * cols + c] as f64;
        }
    }
    let scale = 255.0 * (pool * pool) as f64;
    out.iter_mut().for_each(|v| *v /= scale);
    let n = dot(&out, &out).sqrt();
    if n > 0.0 {
        out.iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

/// `d + 2√(d·log(1/δ)) + 2·log(1/δ)`, a χ²_d upper quantile bound.
fn chi_square_radius(d: usize, delta: f64) -> f64 {
    let l = (1.0 / delta).ln();
    d as f64 + 2.0 * (d as f64 * l).sqrt() + 2.0 * l
}

/// Builds the MNIST design problem from parsed IDX data.
///
/// A ridge regression of the one-vs-rest label on pooled pixels gives `θ̄`;
/// `Σ̄ = β·σ̂²·(XᵀX + λI)⁻¹` with `σ̂²` the residual variance and `β` a χ²
/// quantile bound at level `delta`. `K` random images form the actions.
pub fn mnist_problem(images: &IdxImages, labels: &[u8], opts: &MnistOptions) -> Result<DesignProblem> {
    if images.count() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} images but {} labels",
            images.count(),
            labels.len()
        )));
    }
    if opts.pool == 1 && !opts.force {
        return Err(Error::InvalidInput(
            "pool = 1 keeps all 784 pixels; pass force to run at full resolution".into(),
        ));
    }
    let n_all = images.count();
    let features: Vec<Vec<f64>> = (0..n_all)
        .map(|i| pool_image(images.image(i), images.rows, images.cols, opts.pool))
        .collect::<Result<_>>()?;
    let d = features.first().map_or(0, Vec::len);
    if opts.k < d || opts.k > n_all {
        return Err(Error::InvalidInput(format!(
            "need d = {d} ≤ K = {} ≤ {n_all} images",
            opts.k
        )));
    }
    let mut rng = seeded_rng(opts.seed);
    let n_train = opts.train_size.min(n_all);
    let train = index::sample(&mut rng, n_all, n_train).into_vec();
    let mut data = Vec::with_capacity(n_train * d);
    let mut y = Vec::with_capacity(n_train);
    for &i in &train {
        data.extend_from_slice(&features[i]);
        y.push(if labels[i] == opts.target_digit { 1.0 } else { 0.0 });
    }
    let x = Matrix::new(n_train, d, data)?;
    let (theta, gram) = least_squares(&x, &y, opts.ridge)?;
    let fitted = x.matvec(&theta);
    let rss: f64 = fitted.iter().zip(&y).map(|(f, t)| (f - t).powi(2)).sum();
    let sigma2 = (rss / (n_train.saturating_sub(d).max(1)) as f64).max(1e-12);
    let shape = Cholesky::factor(&gram)?
        .inverse()
        .scaled(sigma2 * chi_square_radius(d, opts.delta));

    let actions = index::sample(&mut rng, n_all, opts.k).into_vec();
    let cols: Vec<Vec<f64>> = actions.iter().map(|&i| features[i].clone()).collect();
    let pi0 = Policy::new(sample_simplex(&mut rng, opts.k))?;
    DesignProblem::new(
        FeatureMatrix::from_columns(&cols)?,
        pi0,
        opts.alpha,
        Ellipsoid::new(theta, shape)?,
    )
}

pub fn read_idx_files(images_path: &Path, labels_path: &Path) -> Result<(IdxImages, Vec<u8>)> {
    let images = parse_idx_images(BufReader::new(File::open(images_path)?))?;
    let labels = parse_idx_labels(BufReader::new(File::open(labels_path)?))?;
    Ok((images, labels))
}

pub fn mnist_ingest(images_path: &Path, labels_path: &Path, opts: &MnistOptions) -> Result<DesignProblem> {
    let (images, labels) = read_idx_files(images_path, labels_path)?;
    mnist_problem(&images, &labels, opts)
}

/// Runs the three methods on one MNIST problem for each seed; the seed
/// picks the action subset and baseline.
pub fn run_mnist_suite(
    images: &IdxImages,
    labels: &[u8],
    opts: &MnistOptions,
    seeds: usize,
    eval: &EvalOptions,
) -> Result<Vec<ExperimentRow>> {
    let chunks = (0..seeds as u64)
        .into_par_iter()
        .map(|s| -> Result<Vec<ExperimentRow>> {
            let mut o = opts.clone();
            o.seed = derive_seed(opts.seed, &[s]);
            let prob = mnist_problem(images, labels, &o)?;
            Method::ALL
                .into_iter()
                .enumerate()
                .map(|(mi, m)| {
                    let design = method_design(m, &prob, &eval.fw)?;
                    let mut rng = seeded_rng(derive_seed(opts.seed, &[s, mi as u64, 1]));
                    evaluate_design(&design, &prob, s, eval, &mut rng)
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Fixed instance for regret studies: default mean 0.5 and `K` arms evenly
/// spaced from 0.3 upward in steps of 0.6/K.
pub fn reference_instance(k: usize) -> Result<BanditInstance> {
    let mut means = vec![0.5];
    means.extend((0..k).map(|i| 0.3 + 0.6 * i as f64 / k as f64));
    BanditInstance::new(means)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafePeRow {
    pub seed: u64,
    pub horizon: usize,
    pub regret: f64,
    pub update_count: usize,
    pub worst_slack: f64,
}

pub const SAFEPE_CSV_HEADER: &str = "seed,horizon,regret,update_count,worst_slack";

pub fn run_safepe_suite(
    instance: &BanditInstance,
    horizon: usize,
    alpha: f64,
    delta: f64,
    seeds: usize,
    base_seed: u64,
) -> Result<Vec<SafePeRow>> {
    (0..seeds as u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = seeded_rng(derive_seed(base_seed, &[horizon as u64, s]));
            let log = run_safepe(instance, horizon, alpha, delta, &mut rng)?;
            Ok(SafePeRow {
                seed: s,
                horizon,
                regret: log.regret,
                update_count: audit_updates(&log),
                worst_slack: audit_safety(&log, instance, alpha),
            })
        })
        .collect()
}

pub fn write_safepe_csv<W: Write>(rows: &[SafePeRow], mut w: W) -> Result<()> {
    writeln!(w, "{SAFEPE_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.seed,
            r.horizon,
            fmt_sig(r.regret),
            r.update_count,
            fmt_sig(r.worst_slack)
        )?;
    }
    Ok(())
}

/// Flat `key = value` design description. Repeated `sigma_bar` lines give
/// the rows of `Σ̄`; repeated `column` lines give the feature columns.
/// `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DesignConfig {
    pub pi0: Option<Vec<f64>>,
    pub alpha: Option<f64>,
    pub theta_bar: Option<Vec<f64>>,
    pub sigma_bar: Vec<Vec<f64>>,
    pub columns: Vec<Vec<f64>>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("not a number: {t}"))))
        .collect()
}

impl DesignConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", no + 1)))?;
            let values = parse_list(value).map_err(|e| Error::Parse(format!("line {}: {e}", no + 1)))?;
            match key.trim() {
                "pi0" => cfg.pi0 = Some(values),
                "alpha" => {
                    let [a] = values[..] else {
                        return Err(Error::Parse(format!("line {}: alpha takes one value", no + 1)));
                    };
                    cfg.alpha = Some(a);
                }
                "theta_bar" => cfg.theta_bar = Some(values),
                "sigma_bar" => cfg.sigma_bar.push(values),
                "column" => cfg.columns.push(values),
                "lower" => cfg.lower = Some(values),
                "upper" => cfg.upper = Some(values),
                other => return Err(Error::Parse(format!("line {}: unknown key {other}", no + 1))),
            }
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Fills fields missing here from `other`.
    pub fn merged_with(mut self, other: DesignConfig) -> Self {
        self.pi0 = self.pi0.or(other.pi0);
        self.alpha = self.alpha.or(other.alpha);
        self.theta_bar = self.theta_bar.or(other.theta_bar);
        if self.sigma_bar.is_empty() {
            self.sigma_bar = other.sigma_bar;
        }
        if self.columns.is_empty() {
            self.columns = other.columns;
        }
        self.lower = self.lower.or(other.lower);
        self.upper = self.upper.or(other.upper);
        self
    }

    pub fn policy(&self) -> Result<Policy> {
        Policy::new(self.pi0.clone().ok_or_else(|| Error::InvalidInput("pi0 is required".into()))?)
    }

    pub fn alpha(&self) -> Result<f64> {
        self.alpha.ok_or_else(|| Error::InvalidInput("alpha is required".into()))
    }

    pub fn reward_box(&self) -> Result<Option<RewardBox>> {
        match (&self.lower, &self.upper) {
            (None, None) => Ok(None),
            (Some(l), Some(u)) => Ok(Some(RewardBox::new(l.clone(), u.clone())?)),
            _ => Err(Error::InvalidInput("lower and upper must be given together".into())),
        }
    }

    /// Columns default to the identity when none are listed.
    pub fn linear_problem(&self) -> Result<DesignProblem> {
        let pi0 = self.policy()?;
        let theta = self
            .theta_bar
            .clone()
            .ok_or_else(|| Error::InvalidInput("theta_bar is required".into()))?;
        let features = if self.columns.is_empty() {
            FeatureMatrix::identity(pi0.len())
        } else {
            FeatureMatrix::from_columns(&self.columns)?
        };
        let shape = if self.sigma_bar.is_empty() {
            Matrix::identity(theta.len())
        } else {
            Matrix::from_rows(&self.sigma_bar)?
        };
        DesignProblem::new(features, pi0, self.alpha()?, Ellipsoid::new(theta, shape)?)
    }
}
