//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process fails if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use safeod::experiments::{
    median, read_idx_files, reference_instance, run_safepe_suite, run_synthetic_suite, write_idx_images,
    write_idx_labels, EvalOptions, IdxImages, Method, SuiteConfig, VIOLATION_TOL,
};
use safeod::linear::{frank_wolfe_safe, g_optimal, safety_margin_at_center, DesignProblem, FwOptions};
use safeod::lp::{solve_lp, LinearProgram, LpStatus};
use safeod::numerics::{sample_simplex, sample_unit_sphere, seeded_rng, SeededRng};
use safeod::ope::{
    collect_dataset, ips_error_bound, ips_value, pi_value, ContextDistribution, ContextualPolicy, LoggedDataset,
    RewardModel,
};
use safeod::safepe::update_bound;
use safeod::tabular::{
    beta_star, g_tabular, mixture_policy, safe_design_boxed, safe_design_boxed_dual, water_fill,
};
use safeod::{Ellipsoid, Error, FeatureMatrix, Matrix, Policy, RewardBox};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn illustrative(theta_bar: [f64; 2]) -> DesignProblem {
    DesignProblem::new(
        FeatureMatrix::identity(2),
        Policy::new(vec![0.2, 0.8]).unwrap(),
        0.9,
        Ellipsoid::new(theta_bar.to_vec(), Matrix::identity(2).scaled(0.1)).unwrap(),
    )
    .unwrap()
}

fn illustrative_example_one() -> Outcome {
    let start = Instant::now();
    let opts = FwOptions::default();
    let prob = illustrative([1.0, 2.0]);
    let safe = frank_wolfe_safe(&prob, &opts).unwrap();
    let gopt = g_optimal(&prob.features, &opts).unwrap();
    let mix = mixture_policy(&prob.pi0, prob.alpha);
    let mix_width = g_tabular(&mix).sqrt();
    let gopt_violation = -safety_margin_at_center(&gopt.policy, &prob);
    let elapsed = start.elapsed().as_secs_f64();

    let safe_err = (safe.policy[0] - 0.330).abs().max((safe.policy[1] - 0.670).abs());
    let gopt_err = (gopt.policy[0] - 0.5).abs().max((gopt.policy[1] - 0.5).abs());
    let pass = safe_err <= 0.005
        && (1.73..=1.75).contains(&safe.width)
        && gopt_err <= 1e-4
        && (gopt.width - 1.4142).abs() <= 1e-3
        && (mix_width - 2.085).abs() <= 1e-3
        && (gopt_violation - 0.12).abs() <= 1e-6
        && elapsed < 1.0;
    outcome(
        pass,
        format!(
            "pi_e = ({:.4}, {:.4}), width {:.4}; G-opt ({:.4}, {:.4}) width {:.4}; mixture width {:.4}; \
             G-opt violation at centre {:.6}; {:.3}s",
            safe.policy[0], safe.policy[1], safe.width, gopt.policy[0], gopt.policy[1], gopt.width, mix_width,
            gopt_violation, elapsed
        ),
    )
}

fn illustrative_example_two() -> Outcome {
    let r = frank_wolfe_safe(&illustrative([2.0, 1.0]), &FwOptions::default()).unwrap();
    let err = (r.policy[0] - 0.5).abs().max((r.policy[1] - 0.5).abs());
    outcome(
        err <= 1e-3 && (r.width - 1.4142).abs() <= 1e-3,
        format!("pi_e = ({:.5}, {:.5}), width {:.5}", r.policy[0], r.policy[1], r.width),
    )
}

fn water_filling_exactness() -> Outcome {
    let pi0 = Policy::new(vec![0.1, 0.3, 0.6]).unwrap();
    let pe = water_fill(&pi0, 0.8).unwrap();
    let expected = [0.26, 0.26, 0.48];
    let err = (0..3).map(|a| (pe[a] - expected[a]).abs()).fold(0.0, f64::max);
    let g_mix = g_tabular(&mixture_policy(&pi0, beta_star(&pi0, 0.8)));
    let g_e = g_tabular(&pe);
    let pass = err <= 1e-12 && (g_mix - 1.0 / 0.205).abs() <= 1e-9 && (g_e - 1.0 / 0.26).abs() <= 1e-9 && g_e < g_mix;
    outcome(
        pass,
        format!("max error {err:.1e}; g(mixture) = {g_mix:.6}, g(water-fill) = {g_e:.6}"),
    )
}

/// `max γ` s.t. `π ≥ γ`, `π ≥ απ0`, `Σπ = 1`, solved directly.
fn max_min_lp(pi0: &Policy, alpha: f64) -> f64 {
    let k = pi0.len();
    let mut c = vec![0.0; k + 1];
    c[k] = 1.0;
    let mut lp = LinearProgram::maximize(c);
    lp.set_free(k);
    let mut simplex = vec![1.0; k + 1];
    simplex[k] = 0.0;
    lp.add_eq(simplex, 1.0);
    for a in 0..k {
        let mut row = vec![0.0; k + 1];
        row[a] = 1.0;
        row[k] = -1.0;
        lp.add_ge(row, 0.0);
        lp.set_bounds(a, alpha * pi0[a], f64::INFINITY);
    }
    let sol = solve_lp(&lp).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    sol.point[k]
}

fn water_filling_matches_lp() -> Outcome {
    let mut rng = seeded_rng(4);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let k = rng.random_range(1..=6);
        let pi0 = Policy::new(sample_simplex(&mut rng, k)).unwrap();
        let alpha = rng.random_range(0.0..=1.0);
        let wf = water_fill(&pi0, alpha).unwrap().min_prob();
        worst = worst.max((wf - max_min_lp(&pi0, alpha)).abs());
    }
    outcome(worst <= 1e-8, format!("500 instances, max |difference| {worst:.2e}"))
}

fn primal_dual_boxed_agree() -> Outcome {
    let mut rng = seeded_rng(5);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let k = rng.random_range(2..=8);
        let pi0 = Policy::new(sample_simplex(&mut rng, k)).unwrap();
        let alpha = rng.random_range(0.0..=1.0);
        let lower: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..0.8)).collect();
        let upper: Vec<f64> = lower.iter().map(|l| l + rng.random_range(0.0..(1.0 - l))).collect();
        let b = RewardBox::new(lower, upper).unwrap();
        let (_, primal) = safe_design_boxed(&pi0, alpha, &b).unwrap();
        let (_, dual) = safe_design_boxed_dual(&pi0, alpha, &b).unwrap();
        worst = worst.max((primal - dual).abs());
    }
    outcome(worst <= 1e-7, format!("200 instances, max |Δγ| {worst:.2e}"))
}

fn kiefer_wolfowitz() -> Outcome {
    let mut rng = seeded_rng(6);
    let mut pass = true;
    let mut parts = Vec::new();
    for d in [2, 4, 8] {
        let cols: Vec<Vec<f64>> = (0..100).map(|_| sample_unit_sphere(&mut rng, d)).collect();
        let a = FeatureMatrix::from_columns(&cols).unwrap();
        let start = Instant::now();
        let r = g_optimal(&a, &FwOptions::default()).unwrap();
        let t = start.elapsed().as_secs_f64();
        pass &= r.g_value <= 1.05 * d as f64 && t < 5.0;
        parts.push(format!("d={d}: g={:.4} ({t:.2}s)", r.g_value));
    }
    outcome(pass, parts.join(", "))
}

fn frank_wolfe_safety() -> Outcome {
    let cfg = SuiteConfig {
        dims: vec![4],
        alphas: vec![0.9],
        seeds: 50,
        eval: EvalOptions {
            gap_runs: 20,
            ..EvalOptions::default()
        },
        ..SuiteConfig::default()
    };
    let rows = run_synthetic_suite(&cfg).unwrap();
    let of = |m: Method| rows.iter().filter(move |r| r.method == m);
    let safe_worst = of(Method::SafeOD).map(|r| r.safety_violation).fold(f64::NEG_INFINITY, f64::max);
    let frac = |m: Method| of(m).filter(|r| r.safety_violation > VIOLATION_TOL).count() as f64 / 50.0;
    let (gopt_frac, mix_frac) = (frac(Method::GOptimal), frac(Method::Mixture));
    let med = |m: Method| median(&of(m).map(|r| r.width).collect::<Vec<_>>());
    let (wg, ws, wm) = (med(Method::GOptimal), med(Method::SafeOD), med(Method::Mixture));
    let ordered = wg <= ws + 1e-9 && ws <= wm + 1e-9;
    let pass = safe_worst <= 1e-6 && gopt_frac > 0.5 && mix_frac == 0.0 && ordered;
    outcome(
        pass,
        format!(
            "SafeOD worst violation {safe_worst:.2e}; G-opt violation fraction {gopt_frac:.2}; \
             mixture violation fraction {mix_frac:.2}; median widths G-opt {wg:.4} ≤ SafeOD {ws:.4} ≤ mixture {wm:.4}: {ordered}"
        ),
    )
}

/// `sup_π |V̂(π) − V(π)|` over all contextual policies, which separates
/// into a per-context max over actions.
fn max_policy_error(data: &LoggedDataset, model: &RewardModel, ctx: &ContextDistribution) -> f64 {
    let (nx, k) = (ctx.len(), model.num_actions());
    let n = data.len() as f64;
    let mut diff = vec![vec![0.0; k]; nx];
    for r in data.records() {
        diff[r.context][r.action] += r.reward / r.logging_prob / n;
    }
    for x in 0..nx {
        for a in 0..k {
            diff[x][a] -= ctx.weight(x) * model.mean(x, a);
        }
    }
    let hi: f64 = diff.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).sum();
    let lo: f64 = diff.iter().map(|row| row.iter().copied().fold(f64::INFINITY, f64::min)).sum();
    hi.max(-lo)
}

fn random_contextual(rng: &mut SeededRng, nx: usize, k: usize) -> ContextualPolicy {
    ContextualPolicy::new((0..nx).map(|_| Policy::new(sample_simplex(rng, k)).unwrap()).collect()).unwrap()
}

fn ips_coverage() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded_rng(8);
    let (nx, k, n, reps, delta) = (2, 3, 2000, 500, 0.05);
    let ctx = ContextDistribution::uniform(nx);
    let model = RewardModel::tabular(vec![vec![0.2, 0.5, 0.9], vec![0.7, 0.1, 0.4]]).unwrap();
    let pi0 = random_contextual(&mut rng, nx, k);
    let logging =
        ContextualPolicy::new(pi0.rows().iter().map(|p| water_fill(p, 0.7).unwrap()).collect()).unwrap();
    let bound = ips_error_bound(logging.g_tabular(), nx, k, n, delta);
    let targets: Vec<ContextualPolicy> = (0..5).map(|_| random_contextual(&mut rng, nx, k)).collect();
    let mut estimates = vec![Vec::with_capacity(reps); targets.len()];
    let mut covered = 0;
    for _ in 0..reps {
        let data = collect_dataset(&model, &logging, &ctx, n, &mut rng).unwrap();
        if max_policy_error(&data, &model, &ctx) <= bound {
            covered += 1;
        }
        for (i, t) in targets.iter().enumerate() {
            estimates[i].push(ips_value(&data, t));
        }
    }
    let mut worst_z = 0.0f64;
    for (t, est) in targets.iter().zip(&estimates) {
        let m = est.iter().sum::<f64>() / reps as f64;
        let var = est.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        worst_z = worst_z.max((m - model.value(t, &ctx)).abs() / se);
    }
    let coverage = covered as f64 / reps as f64;
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        coverage >= 0.99 && worst_z <= 3.0 && elapsed < 30.0,
        format!("coverage {coverage:.3} (bound {bound:.4}); worst |bias|/SE {worst_z:.2}; {elapsed:.2}s"),
    )
}

fn pi_equals_ips() -> Outcome {
    let mut rng = seeded_rng(9);
    let k = 4;
    let features = FeatureMatrix::identity(k);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let nx = rng.random_range(1..=3);
        let means = (0..nx).map(|_| (0..k).map(|_| rng.random()).collect()).collect();
        let model = RewardModel::tabular(means).unwrap();
        let logging = random_contextual(&mut rng, nx, k);
        let target = random_contextual(&mut rng, nx, k);
        let data = collect_dataset(&model, &logging, &ContextDistribution::uniform(nx), 200, &mut rng).unwrap();
        worst = worst.max((pi_value(&data, &target, &features).unwrap() - ips_value(&data, &target)).abs());
    }
    outcome(worst <= 1e-9, format!("100 datasets, max |PI − IPS| {worst:.2e}"))
}

fn safepe_audits() -> Outcome {
    let start = Instant::now();
    let (k, alpha, delta) = (10, 0.8, 0.1);
    let instance = reference_instance(k).unwrap();
    let rows = run_safepe_suite(&instance, 10_000, alpha, delta, 200, 10).unwrap();
    let bound = update_bound(k, 10_000);
    let max_updates = rows.iter().map(|r| r.update_count).max().unwrap();
    let unsafe_frac = rows.iter().filter(|r| r.worst_slack < 0.0).count() as f64 / rows.len() as f64;
    let mean_regret = |t: usize| {
        let rows = run_safepe_suite(&instance, t, alpha, delta, 50, 11).unwrap();
        rows.iter().map(|r| r.regret).sum::<f64>() / rows.len() as f64
    };
    let regrets: Vec<(usize, f64)> = [2000, 4000, 8000, 16000].iter().map(|&t| (t, mean_regret(t))).collect();
    let ratios: Vec<f64> = regrets.windows(2).map(|w| w[1].1 / w[0].1).collect();
    let worst_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = max_updates <= bound && unsafe_frac <= 0.15 && worst_ratio <= 1.6 && elapsed < 120.0;
    let regret_text: Vec<String> = regrets.iter().map(|(t, r)| format!("R({t})={r:.1}")).collect();
    outcome(
        pass,
        format!(
            "max updates {max_updates} ≤ {bound}; unsafe fraction {unsafe_frac:.3}; {}; ratios {:?}; {elapsed:.2}s",
            regret_text.join(" "),
            ratios.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    )
}

fn idx_fixture(n: usize) -> (IdxImages, Vec<u8>) {
    // Each digit draws a band of rows at a label-dependent offset, plus noise.
    let mut rng = seeded_rng(11);
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    let mut pixels = Vec::with_capacity(n * 28 * 28);
    for &label in &labels {
        for p in 0..28 * 28 {
            let band = (p / 28 + 2 * label as usize) % 10 < 3;
            let noise: u8 = rng.random_range(0..40);
            pixels.push(if band { 200 + noise / 2 } else { noise });
        }
    }
    (IdxImages { rows: 28, cols: 28, pixels }, labels)
}

fn write_fixture(dir: &Path, images: &IdxImages, labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
    let ip = dir.join("images.idx");
    let lp = dir.join("labels.idx");
    write_idx_images(images, std::fs::File::create(&ip).unwrap()).unwrap();
    write_idx_labels(labels, std::fs::File::create(&lp).unwrap()).unwrap();
    (ip, lp)
}

fn idx_parser() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = idx_fixture(2);
    let (ip, lp) = write_fixture(dir.path(), &images, &labels);
    let (ri, rl) = read_idx_files(&ip, &lp).unwrap();
    let round_trip = ri == images && rl == labels;

    let mut bytes = std::fs::read(&ip).unwrap();
    bytes[2] = 0x09;
    let bad = dir.path().join("bad.idx");
    std::fs::write(&bad, &bytes).unwrap();
    let bad_magic = matches!(read_idx_files(&bad, &lp), Err(Error::BadMagic { .. }));

    let full = std::fs::read(&ip).unwrap();
    let cut = dir.path().join("cut.idx");
    std::fs::write(&cut, &full[..full.len() - 10]).unwrap();
    let truncated = matches!(read_idx_files(&cut, &lp), Err(Error::TruncatedFile(_)));
    let labels_full = std::fs::read(&lp).unwrap();
    std::fs::write(&cut, &labels_full[..labels_full.len() - 1]).unwrap();
    let truncated_labels = matches!(read_idx_files(&ip, &cut), Err(Error::TruncatedFile(_)));

    outcome(
        round_trip && bad_magic && truncated && truncated_labels,
        format!(
            "round trip {round_trip}; bad magic {bad_magic}; truncated images {truncated}; truncated labels {truncated_labels}"
        ),
    )
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_safeod")).args(args).output().unwrap()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = idx_fixture(600);
    let (ip, lp) = write_fixture(dir.path(), &images, &labels);
    let (ip, lp) = (ip.to_str().unwrap().to_string(), lp.to_str().unwrap().to_string());
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/illustrative.cfg");
    let out = |name: &str| dir.path().join(name).to_str().unwrap().to_string();

    let invocations: Vec<(&str, Vec<String>, Vec<String>)> = vec![
        (
            "bench synthetic",
            vec!["--seed", "5", "bench", "synthetic", "--d", "2,3", "--alpha", "0.5,0.9", "--k", "20", "--seeds", "4", "--gap-runs", "10", "--out"]
                .into_iter()
                .map(String::from)
                .collect(),
            vec![".csv".into()],
        ),
        (
            "safepe",
            vec!["--seed", "5", "safepe", "--k", "5", "--t", "3000", "--seeds", "10", "--out"]
                .into_iter()
                .map(String::from)
                .collect(),
            vec![".csv".into()],
        ),
        (
            "bench mnist",
            vec![
                "--seed", "5", "bench", "mnist", "--images", &ip, "--labels", &lp, "--digit", "3", "--k", "60", "--train-size", "500",
                "--seeds", "2", "--gap-runs", "10", "--out",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
            vec![".csv".into()],
        ),
        (
            "design linear",
            vec!["design", "linear", "--ellipsoid", cfg, "--out"].into_iter().map(String::from).collect(),
            vec![".json".into()],
        ),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, (name, args, ext)) in invocations.iter().enumerate() {
        let mut files = Vec::new();
        for rep in 0..2 {
            let path = out(&format!("run{i}_{rep}{}", ext[0]));
            let mut full: Vec<&str> = args.iter().map(String::as_str).collect();
            full.push(&path);
            let o = run_cli(&full);
            if !o.status.success() {
                pass = false;
                parts.push(format!("{name}: exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)));
            }
            files.push(std::fs::read(&path).unwrap_or_default());
        }
        let same = !files[0].is_empty() && files[0] == files[1];
        pass &= same;
        parts.push(format!("{name} identical: {same}"));
    }
    let usage = run_cli(&["bench", "synthetic", "--no-such-flag"]);
    let usage_ok = usage.status.code() == Some(2);
    pass &= usage_ok;
    parts.push(format!("unknown flag exits 2: {usage_ok}"));
    outcome(pass, parts.join("; "))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("illustrative example 1", illustrative_example_one),
        ("illustrative example 2", illustrative_example_two),
        ("water-filling exactness", water_filling_exactness),
        ("water-filling equals max-min LP", water_filling_matches_lp),
        ("boxed primal and dual agree", primal_dual_boxed_agree),
        ("Kiefer-Wolfowitz sanity", kiefer_wolfowitz),
        ("Frank-Wolfe safety and baselines", frank_wolfe_safety),
        ("IPS unbiasedness and coverage", ips_coverage),
        ("PI equals IPS on tabular features", pi_equals_ips),
        ("SafePE audits", safepe_audits),
        ("IDX parser", idx_parser),
        ("CLI determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {:>2}: {name}: {}", i + 1, o.detail);
        if !o.pass {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("all {} acceptance criteria passed", criteria.len());
    } else {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
