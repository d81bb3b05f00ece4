//! End-to-end acceptance checks. Runs with its own harness and prints one
//! PASS/FAIL line per criterion; exits nonzero if any criterion fails.
//! The full run takes roughly half an hour on a single core.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use dyndml::data::{validate_dataset, RawColumns, TreatmentSequence};
use dyndml::effects::{
    estimate_ate, estimate_placebo, estimate_weighted_ate, PlaceboOptions, PlaceboSpec,
};
use dyndml::folds::make_folds;
use dyndml::learners::{LearnerKind, Penalty};
use dyndml::nuisance::{cross_fit, cross_fit_many, LearnerConfig};
use dyndml::scores::{score_psi, score_psi_weighted};
use dyndml::simulation::{
    check_orthogonality, confounding_audit, oracle_nuisance_fits, run_monte_carlo, simulate_dgp,
    Cell, DgpConfig, Direction, Estimator, MonteCarloConfig, MonteCarloOutput, MonteCarloReport,
    NuisanceSource, PerturbationSpec, ScoreKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const S11: TreatmentSequence = TreatmentSequence::new(1, 1);
const S00: TreatmentSequence = TreatmentSequence::new(0, 0);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&v)
}

fn report(out: &MonteCarloOutput, n: usize, est: Estimator) -> &MonteCarloReport {
    out.reports
        .iter()
        .find(|r| r.n == n && r.estimator == est)
        .expect("cell present")
}

fn lasso_grid() -> MonteCarloOutput {
    let cfg = MonteCarloConfig {
        cells: vec![
            Cell {
                p: 50,
                n: 2500,
                reps: 200,
            },
            Cell {
                p: 50,
                n: 10_000,
                reps: 60,
            },
        ],
        ..MonteCarloConfig::default()
    };
    run_monte_carlo(&cfg).expect("Monte Carlo run")
}

fn c1_table_row(mc: &MonteCarloOutput) -> Outcome {
    let r = report(mc, 2500, Estimator::Ate);
    let pass = r.bias <= 0.06
        && within(r.sd, 0.04, 0.11)
        && within(r.rmse, 0.05, 0.12)
        && within(r.coverage, 68.0, 92.0);
    outcome(
        pass,
        format!(
            "bias {:.4} sd {:.4} rmse {:.4} coverage {:.1}% avg_se {:.4} ({} reps)",
            r.bias, r.sd, r.rmse, r.coverage, r.avg_se, r.reps
        ),
    )
}

fn c2_root_n(mc: &MonteCarloOutput) -> Outcome {
    let small = report(mc, 2500, Estimator::Ate);
    let large = report(mc, 10_000, Estimator::Ate);
    let ratio = large.sd / small.sd;
    outcome(
        within(ratio, 0.35, 0.65),
        format!("sd {:.4} / {:.4} = {ratio:.3}", large.sd, small.sd),
    )
}

fn c3_weighted_block(mc: &MonteCarloOutput) -> Outcome {
    let mut hits = 0;
    let mut parts = Vec::new();
    for n in [2500, 10_000] {
        let u = report(mc, n, Estimator::Ate);
        let w = report(mc, n, Estimator::WeightedAte);
        if w.sd >= u.sd {
            hits += 1;
        }
        parts.push(format!("n={n}: weighted sd {:.4} vs {:.4}", w.sd, u.sd));
    }
    let share = hits as f64 / 2.0;
    outcome(
        share >= 0.7,
        format!("{} ({:.0}% matched)", parts.join(", "), 100.0 * share),
    )
}

fn c4_oracle() -> Outcome {
    let cfg = MonteCarloConfig {
        cells: vec![Cell {
            p: 50,
            n: 10_000,
            reps: 200,
        }],
        nuisance: NuisanceSource::Oracle,
        ..MonteCarloConfig::default()
    };
    let mc = run_monte_carlo(&cfg).expect("oracle Monte Carlo");
    let bias = report(&mc, 10_000, Estimator::Ate).bias;

    let dgp = DgpConfig::new(10_000, 50, 4);
    let data = simulate_dgp(&dgp).unwrap();
    let a = oracle_nuisance_fits(&data, &dgp, S11, false, 1e-4).unwrap();
    let b = oracle_nuisance_fits(&data, &dgp, S00, false, 1e-4).unwrap();
    let single = estimate_ate(
        &score_psi(&data, &a, 0.01).unwrap(),
        &score_psi(&data, &b, 0.01).unwrap(),
    )
    .unwrap()
    .estimate;
    outcome(
        bias <= 0.02 && (single - 2.0).abs() <= 0.1,
        format!("bias {bias:.4} over 200 reps, single run {single:.4}"),
    )
}

fn c5_orthogonality() -> Outcome {
    let dgp = DgpConfig::new(100_000, 50, 5);
    let data = simulate_dgp(&dgp).unwrap();
    let rep = check_orthogonality(&data, &dgp, S11, &PerturbationSpec::default()).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for d in [Direction::Constant, Direction::FirstCovariate] {
        let o = rep.slope(ScoreKind::Orthogonal, d).unwrap();
        let i = rep.slope(ScoreKind::Ipw, d).unwrap();
        pass &= o >= 1.8 && i <= 1.3;
        parts.push(format!("{d:?}: psi {o:.3}, ipw {i:.3}"));
    }
    outcome(pass, parts.join("; "))
}

/// Binary covariates, saturated designs, no penalty: compare the nested
/// mean with two-stage cell averages.
fn c6_nested_mean_toy() -> Outcome {
    let n = 1200;
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let mut raw = RawColumns::default();
    for _ in 0..n {
        let a = f64::from(u8::from(r.random_bool(0.5)));
        let b = f64::from(u8::from(r.random_bool(0.5)));
        let t1 = r.random_bool(0.3 + 0.4 * a);
        let t2 = r.random_bool(0.3 + 0.2 * b + 0.2 * f64::from(u8::from(t1)));
        raw.x0.push(vec![a]);
        raw.x1.push(vec![b, a * b]);
        raw.d1.push(i64::from(t1));
        raw.d2.push(i64::from(t2));
        raw.y2.push(a - 2.0 * b + a * b + r.random::<f64>());
    }
    let data = validate_dataset(raw, 3).unwrap();
    let plan = make_folds(n, 3, 6).unwrap();
    let mut cfg = LearnerConfig {
        penalty: Penalty::Fixed(0.0),
        min_stratum: 2,
        ..LearnerConfig::uniform(LearnerKind::Lasso, LearnerKind::LogisticLasso)
    };
    cfg.solver.tol = 1e-15;
    cfg.solver.max_sweeps = 1_000_000;
    let fits = cross_fit(&data, S11, &plan, &cfg, None).unwrap();

    let cell = |i: usize| (data.x0()[[i, 0]] as usize, data.x1()[[i, 0]] as usize);
    let mut worst: f64 = 0.0;
    for k in 0..3 {
        let mut sum = [[0.0; 2]; 2];
        let mut cnt = [[0.0; 2]; 2];
        for &i in plan.half_a(k) {
            if data.d1()[i] == 1 && data.d2()[i] == 1 {
                let (a, b) = cell(i);
                sum[a][b] += data.y2()[i];
                cnt[a][b] += 1.0;
            }
        }
        let mut nsum = [0.0; 2];
        let mut ncnt = [0.0; 2];
        for &i in plan.half_b(k) {
            if data.d1()[i] == 1 {
                let (a, b) = cell(i);
                nsum[a] += sum[a][b] / cnt[a][b];
                ncnt[a] += 1.0;
            }
        }
        for i in plan.fold(k) {
            let (a, _) = cell(i);
            worst = worst.max((fits.nu[i] - nsum[a] / ncnt[a]).abs());
        }
    }
    outcome(
        worst <= 1e-10,
        format!("max |nu - cell average| = {worst:.2e}"),
    )
}

fn c7_degenerate_subgroup() -> Outcome {
    let data = simulate_dgp(&DgpConfig::new(2500, 50, 7)).unwrap();
    let plan = make_folds(data.n(), 3, 7).unwrap();
    let mut fits =
        cross_fit_many(&data, &[S11, S00], &plan, &LearnerConfig::default(), None).unwrap();
    let plain = estimate_ate(
        &score_psi(&data, &fits[0], 0.01).unwrap(),
        &score_psi(&data, &fits[1], 0.01).unwrap(),
    )
    .unwrap();
    let s = vec![true; data.n()];
    for f in &mut fits {
        f.g = Some(vec![1.0; data.n()]);
    }
    let weighted = estimate_weighted_ate(
        &score_psi_weighted(&data, &fits[0], &s, 0.01).unwrap(),
        &score_psi_weighted(&data, &fits[1], &s, 0.01).unwrap(),
    )
    .unwrap();
    let gap = (plain.estimate - weighted.estimate).abs();
    let se_gap = (plain.se - weighted.se).abs();
    outcome(
        gap <= 1e-12 && se_gap <= 1e-12,
        format!("|estimate gap| {gap:.1e}, |se gap| {se_gap:.1e}"),
    )
}

fn c8_audit() -> Outcome {
    let data = simulate_dgp(&DgpConfig::new(2500, 50, 8)).unwrap();
    let a = confounding_audit(&data).unwrap();
    let (d1, d2, y) = (
        100.0 * a.pseudo_r2_d1,
        100.0 * a.pseudo_r2_d2,
        100.0 * a.r2_outcome,
    );
    outcome(
        (d1 - 15.0).abs() <= 5.0 && (d2 - 29.0).abs() <= 5.0 && (y - 38.0).abs() <= 5.0,
        format!("pseudo-R2(D1) {d1:.1}, pseudo-R2(D2) {d2:.1}, R2(Y2) {y:.1}"),
    )
}

fn c9_placebo() -> Outcome {
    let reps = 100;
    let covered: Vec<bool> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let seed = 9_000 + rep as u64;
            let base = simulate_dgp(&DgpConfig::new(4000, 50, seed)).unwrap();
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = (0..4000)
                .map(|_| r.sample(rand_distr::StandardNormal))
                .collect();
            let t: Vec<bool> = (0..4000).map(|_| r.random_bool(0.5)).collect();
            let data = base.with_outcome(y).unwrap();
            let opts = PlaceboOptions {
                seed,
                ..PlaceboOptions::default()
            };
            let e = estimate_placebo(
                &data,
                &PlaceboSpec::Column(t),
                &LearnerConfig::default(),
                &opts,
            )
            .unwrap();
            e.estimate.abs() <= 2.0 * e.se
        })
        .collect();
    let share = covered.iter().filter(|&&c| c).count() as f64 / reps as f64;
    outcome(
        share >= 0.9,
        format!("|estimate| <= 2 SE in {:.0}% of {reps} reps", 100.0 * share),
    )
}

fn cli_run(args: &[&str]) {
    let res = Command::new(env!("CARGO_BIN_EXE_dyndml"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
}

fn c10_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let input = dir.join("panel.csv");
    dyndml::data::write_csv(
        &simulate_dgp(&DgpConfig::new(1000, 10, 10)).unwrap(),
        &input,
    )
    .unwrap();
    let run = |tag: &str| {
        let est = dir.join(format!("est_{tag}"));
        let mc = dir.join(format!("mc_{tag}"));
        cli_run(&[
            "--mode",
            "estimate",
            "--input",
            input.to_str().unwrap(),
            "--out",
            est.to_str().unwrap(),
        ]);
        cli_run(&[
            "--mode",
            "montecarlo",
            "--grid",
            "10x500",
            "--reps",
            "4",
            "--out",
            mc.to_str().unwrap(),
        ]);
        (est, mc)
    };
    let (e1, m1) = run("a");
    let (e2, m2) = run("b");
    let same = |a: &Path, b: &Path| std::fs::read(a).unwrap() == std::fs::read(b).unwrap();
    let effects = same(&e1.join("effects.json"), &e2.join("effects.json"));
    let mc = same(&m1.join("montecarlo.csv"), &m2.join("montecarlo.csv"));
    outcome(
        effects && mc,
        format!("effects.json identical: {effects}, montecarlo.csv identical: {mc}"),
    )
}

fn main() -> ExitCode {
    // Honour `cargo test -- <filter>` loosely: skip everything when the
    // filter does not mention this target.
    let args: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }

    let start = Instant::now();
    let mc = std::sync::OnceLock::new();
    let grid = || mc.get_or_init(lasso_grid);
    type Check<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);
    let checks: Vec<Check> = vec![
        (
            "1 simulation table row (p=50, n=2500)",
            Box::new(|| c1_table_row(grid())),
        ),
        ("2 root-n shrinkage of SD", Box::new(|| c2_root_n(grid()))),
        (
            "3 subgroup estimator SD pattern",
            Box::new(|| c3_weighted_block(grid())),
        ),
        ("4 oracle consistency", Box::new(c4_oracle)),
        ("5 orthogonality slopes", Box::new(c5_orthogonality)),
        (
            "6 nested-mean brute-force oracle",
            Box::new(c6_nested_mean_toy),
        ),
        (
            "7 degenerate subgroup reduction",
            Box::new(c7_degenerate_subgroup),
        ),
        ("8 confounding audit", Box::new(c8_audit)),
        ("9 placebo null", Box::new(c9_placebo)),
        ("10 CLI determinism", Box::new(c10_determinism)),
    ];
    let mut failed = 0;
    for (name, check) in &checks {
        let t = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {name}: {} | {} [{:.0}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.0}s",
        checks.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
