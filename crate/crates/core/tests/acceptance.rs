//! Acceptance gates. Prints one `[PASS]` or `[FAIL]` line per criterion and
//! exits non-zero when any criterion fails.
//!
//! Benchmark data is read from `$OKSELECT_DATA_DIR` or `<workspace>/data`:
//! `magic04.csv` and `elevators.csv`, label in the last column.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use okselect::data::{self, realizable_regression, separation_stream, Dataset};
use okselect::engine::{diagnostic_regret, offline_oracle, OnlineRun, Task};
use okselect::harness::{run_on_dataset, Algorithm, Param, ResultTable, RunConfig};
use okselect::hypotheses::{project_box, RkhsHypothesis, ScriptedArm};
use okselect::kernels::{FeatureMap, KernelSpec};
use okselect::losses::{LossFunction, LossKind};
use okselect::selectors::{
    ioks_estimate, ioks_parameters, ioks_solve, mix_exploration, oks_parameters, IoksVariant,
    LossEstimate, SelectorConfig, SelectorState, SIMPLEX_TOL,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("1 property suite", property_suite),
        ("2 random-feature fidelity", rff_fidelity),
        ("3 selector concentration", selector_concentration),
        ("4 regret-rate trend", regret_trend),
        ("5a magic04 logistic reproduction", magic04_reproduction),
        (
            "5b elevators square-loss reproduction",
            elevators_reproduction,
        ),
        ("6 budgeted elevators reproduction", budgeted_reproduction),
        ("7 absolute-loss parity", absolute_parity),
    ];
    println!("benchmark data directory: {}", data_dir().display());
    let mut failed = 0;
    for (name, criterion) in criteria {
        let start = Instant::now();
        let outcome = criterion();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn data_dir() -> PathBuf {
    std::env::var_os("OKSELECT_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn load(name: &str, task: Task) -> Result<Dataset, String> {
    let path = data_dir().join(format!("{name}.csv"));
    let bytes = std::fs::read(&path)
        .map_err(|e| format!("dataset not found at {} ({e})", path.display()))?;
    let mut raw = data::parse_csv(&bytes, None).map_err(|e| e.to_string())?;
    raw.name = name.to_string();
    data::preprocess(&raw, task).map_err(|e| e.to_string())
}

fn run_table(dataset: &Dataset, config: RunConfig) -> Result<ResultTable, String> {
    run_on_dataset(&config, dataset).map_err(|e| e.to_string())
}

/// Mean metric of the tuned row for fixed-rate algorithms, the default row otherwise.
fn headline(table: &ResultTable, algorithm: Algorithm) -> Result<f64, String> {
    table
        .rows
        .iter()
        .find(|r| {
            r.algorithm == algorithm.label()
                && (r.setting == "default" || r.setting.starts_with("oracle-tuned"))
        })
        .map(|r| r.mean)
        .ok_or_else(|| format!("no row for {algorithm}"))
}

fn within(value: f64, centre: f64, band: f64) -> bool {
    (value - centre).abs() <= band
}

// ---- criterion 1 ----

fn property_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = Vec::new();
    let mut note = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };

    // Simplex invariants through real selector updates.
    let mut simplex_ok = true;
    for k in [2usize, 3, 6] {
        let loss = LossFunction::new(LossKind::Square, 1.0, 1.0).unwrap();
        let configs = [
            SelectorConfig::Oks(oks_parameters(k, 500, 1.0, 1.0).unwrap()),
            SelectorConfig::OksPlusPlus { radius: 1.0, loss },
            SelectorConfig::Ioks {
                params: ioks_parameters(k, 500, 1.0, 4.0, 1.0, IoksVariant::Experiment).unwrap(),
                radius: 1.0,
                ell_max: 1.0,
            },
        ];
        for config in configs {
            let mut sel = SelectorState::new(k, 500, config).unwrap();
            for _ in 0..500 {
                let arm = sel.sample(rng.random()).unwrap();
                let fb = okselect::selectors::Feedback {
                    arm,
                    loss: rng.random_range(0.0..1.0),
                    grad_sq_norm: rng.random_range(0.0..4.0),
                };
                sel.observe(fb).unwrap();
                let p = sel.p();
                let floor = sel.delta() / k as f64;
                simplex_ok &= (p.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
                    && p.iter().all(|&v| v >= floor * (1.0 - 1e-12));
            }
        }
    }
    note(simplex_ok, "simplex");

    // Projections.
    let kernel = KernelSpec::gaussian(1.0, 0).unwrap();
    let mut proj_ok = true;
    for _ in 0..50 {
        let mut f = RkhsHypothesis::new(kernel, 2, 0.5).unwrap();
        let mut g = RkhsHypothesis::new(kernel, 2, 0.5).unwrap();
        for _ in 0..10 {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            f.push_support(&x, rng.random_range(-2.0..2.0)).unwrap();
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            g.push_support(&x, rng.random_range(-2.0..2.0)).unwrap();
        }
        let before = rkhs_sq_dist(&f, &g);
        f.project();
        g.project();
        let once = f.clone();
        f.project();
        proj_ok &=
            once == f && f.exact_sq_norm() <= 0.25 + 1e-9 && rkhs_sq_dist(&f, &g) <= before + 1e-9;
        let mut w: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut v: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let before: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum();
        project_box(&mut w, 1.0);
        project_box(&mut v, 1.0);
        let after: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum();
        let w1 = w.clone();
        project_box(&mut w, 1.0);
        proj_ok &= after <= before + 1e-12 && w1 == w;
    }
    note(proj_ok, "projection");

    // Norm tracking over 100 random steps.
    let loss = LossFunction::new(LossKind::Square, 1.0, 1.0).unwrap();
    let mut f = RkhsHypothesis::new(kernel, 3, 1.0).unwrap();
    for _ in 0..100 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        f.ogd_step(
            &x,
            rng.random_range(-1.0..1.0),
            &loss,
            0.3,
            rng.random_range(1.0..4.0),
        )
        .unwrap();
    }
    let exact = f.exact_sq_norm();
    note(
        (f.sq_norm() - exact).abs() <= 1e-6 * exact.max(1e-12),
        "norm tracking",
    );

    // Unbiased standard estimator by enumeration, downward-biased clipped one.
    let p = [0.5, 0.3, 0.2];
    let c = [0.9, 0.4, 0.7];
    let mut mean = [0.0; 3];
    let mut clipped_mean = [0.0; 3];
    let etas = [0.25; 3];
    for (arm, &pa) in p.iter().enumerate() {
        let est = LossEstimate::importance_weighted(3, arm, c[arm], pa).unwrap();
        let clip = ioks_estimate(c[arm], &p, arm, &etas).unwrap();
        for i in 0..3 {
            mean[i] += pa * est.estimate[i];
            clipped_mean[i] += pa * clip.estimate[i];
        }
    }
    note(
        mean.iter().zip(&c).all(|(m, c)| (m - c).abs() < 1e-12),
        "unbiasedness",
    );
    note(
        clipped_mean[2] < c[2] && (clipped_mean[0] - c[0]).abs() < 1e-12,
        "clipped bias",
    );

    // Tsallis step normalization and fixed point.
    let mut solve_ok = true;
    for _ in 0..200 {
        let k = rng.random_range(2..8);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let q: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let eta: Vec<f64> = (0..k).map(|_| rng.random_range(0.001..0.5)).collect();
        let arm = rng.random_range(0..k);
        let est = ioks_estimate(rng.random_range(0.0..1.0), &q, arm, &eta).unwrap();
        let step = ioks_solve(&q, &est, &eta).unwrap();
        solve_ok &= (step.q_next.iter().sum::<f64>() - 1.0).abs() <= 1e-10;
        let zero = LossEstimate {
            arm,
            raw_loss: 0.0,
            estimate: vec![0.0; k],
        };
        solve_ok &= ioks_solve(&q, &zero, &eta).unwrap().q_next == q;
    }
    note(solve_ok, "ioks_solve");

    // Smoothness and finite differences.
    let mut smooth_ok = true;
    let mut fd_ok = true;
    for kind in LossKind::ALL {
        let loss = LossFunction::new(kind, 1.0, 1.0).unwrap();
        let samples: Vec<(f64, f64)> = (0..1000)
            .map(|_| {
                let y = if kind.is_classification() {
                    if rng.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                } else {
                    rng.random_range(-1.0..1.0)
                };
                (rng.random_range(-3.0..3.0), y)
            })
            .collect();
        if loss.is_smooth() {
            smooth_ok &= loss.smoothness_check(&samples).unwrap();
        }
        for &(a, y) in samples.iter().take(200) {
            let h = 1e-6;
            let kink = match kind {
                LossKind::Absolute => (a - y).abs() < 1e-3,
                LossKind::Hinge | LossKind::SquaredHinge => (1.0 - a * y).abs() < 1e-3,
                _ => false,
            };
            if kink {
                continue;
            }
            let fd = (loss.value(a + h, y).unwrap() - loss.value(a - h, y).unwrap()) / (2.0 * h);
            fd_ok &= (fd - loss.derivative(a, y).unwrap()).abs() <= 1e-6;
        }
    }
    note(smooth_ok, "smoothness");
    note(fd_ok, "finite differences");

    // Mixing floor.
    let q = [1.0, 0.0, 0.0];
    let mixed = mix_exploration(&q, 0.3).unwrap();
    note(mixed.iter().all(|&v| v >= 0.1 - 1e-15), "mixing floor");

    if failures.is_empty() {
        Ok("all properties hold".into())
    } else {
        Err(format!("violated: {}", failures.join(", ")))
    }
}

fn rkhs_inner(f: &RkhsHypothesis, g: &RkhsHypothesis) -> f64 {
    let k = f.kernel();
    let mut total = 0.0;
    for (i, a) in f.coefficients().iter().enumerate() {
        for (j, b) in g.coefficients().iter().enumerate() {
            total += a * b * k.eval(f.support_point(i), g.support_point(j)).unwrap();
        }
    }
    total
}

fn rkhs_sq_dist(f: &RkhsHypothesis, g: &RkhsHypothesis) -> f64 {
    rkhs_inner(f, f) + rkhs_inner(g, g) - 2.0 * rkhs_inner(f, g)
}

// ---- criterion 2 ----

fn rff_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dim = 5;
    let kernel = KernelSpec::gaussian(1.0, 0).unwrap();
    let mut parts = Vec::new();
    let mut ok = true;
    for (features, bound) in [(400usize, 0.15), (2000, 0.05)] {
        let map = FeatureMap::sample(kernel, dim, features, 77).unwrap();
        let mut good = 0;
        for _ in 0..100 {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let zx = map.features(&x).unwrap();
            let zv = map.features(&v).unwrap();
            let approx: f64 = zx.iter().zip(&zv).map(|(a, b)| a * b).sum();
            if (approx - kernel.eval(&x, &v).unwrap()).abs() <= bound {
                good += 1;
            }
        }
        ok &= good >= 95;
        parts.push(format!("D={features}: {good}/100 within {bound}"));
    }
    check(ok, parts.join("; "))
}

// ---- criterion 3 ----

fn selector_concentration() -> Outcome {
    let horizon = 5000;
    let seeds = 10;
    let loss = LossFunction::new(LossKind::Square, 1.0, 1.0).unwrap();
    let configs = [
        (
            "OKS",
            SelectorConfig::Oks(oks_parameters(2, horizon, 1.0, 1.0).unwrap()),
        ),
        ("OKS++", SelectorConfig::OksPlusPlus { radius: 1.0, loss }),
        (
            "IOKS",
            SelectorConfig::Ioks {
                params: ioks_parameters(2, horizon, 1.0, loss.g_rkhs, 1.0, IoksVariant::Experiment)
                    .unwrap(),
                radius: 1.0,
                ell_max: 1.0,
            },
        ),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, config) in configs {
        let mut share = 0.0;
        for seed in 0..seeds {
            let stream = separation_stream(horizon, 100 + seed);
            let arms = vec![ScriptedArm { offset: 0.0 }, ScriptedArm { offset: 1.0 }];
            let selector = SelectorState::new(2, horizon, config).unwrap();
            let mut run = OnlineRun::new(arms, selector, loss, Task::Regression, seed).unwrap();
            let order: Vec<usize> = (0..horizon).collect();
            run.run_stream(stream.stream(&order)).unwrap();
            let good = run.records()[horizon - 1000..]
                .iter()
                .filter(|r| r.arm == 0)
                .count();
            share += good as f64 / 1000.0 / seeds as f64;
        }
        ok &= share >= 0.8;
        parts.push(format!("{name} {:.1}%", 100.0 * share));
    }
    check(
        ok,
        format!("good-arm share in last 1000 rounds: {}", parts.join(", ")),
    )
}

// ---- criterion 4 ----

fn regret_trend() -> Outcome {
    let base = 2000;
    let seeds = 10u64;
    let radius = 1.0;
    let widths = [0.5, 1.0, 2.0];
    let kernels = KernelSpec::gaussian_arms(&widths).unwrap();
    let loss = LossFunction::new(LossKind::Square, radius, 1.0).unwrap();

    let mut reg = [[0.0f64; 2]; 2];
    for seed in 0..seeds {
        let (stream, _) =
            realizable_regression(2 * base, 2, 1.0, 10, 0.8, 0.0, 500 + seed).unwrap();
        for (h, horizon) in [base, 2 * base].into_iter().enumerate() {
            let xs = &stream.features[..horizon];
            let ys = &stream.labels[..horizon];
            let oracles: Vec<_> = kernels
                .iter()
                .map(|&k| offline_oracle(xs, ys, k, &loss, radius, 20).unwrap())
                .collect();
            let order: Vec<usize> = (0..horizon).collect();
            let configs = [
                SelectorConfig::OksPlusPlus { radius, loss },
                SelectorConfig::Ioks {
                    params: ioks_parameters(
                        kernels.len(),
                        horizon,
                        radius,
                        loss.g_rkhs,
                        1.0,
                        IoksVariant::Experiment,
                    )
                    .unwrap(),
                    radius,
                    ell_max: 1.0,
                },
            ];
            for (a, config) in configs.into_iter().enumerate() {
                let arms = kernels
                    .iter()
                    .map(|&k| RkhsHypothesis::new(k, 2, radius).unwrap())
                    .collect();
                let selector = SelectorState::new(kernels.len(), horizon, config).unwrap();
                let mut run =
                    OnlineRun::new(arms, selector, loss, Task::Regression, 1000 + seed).unwrap();
                let summary = run.run_stream(stream.stream(&order)).unwrap();
                reg[a][h] += diagnostic_regret(summary.cumulative_loss, &oracles) / seeds as f64;
            }
        }
    }
    let t = base as f64;
    let ln_adjusted = ((2.0 * t).ln() / t.ln()).powf(2.0 / 3.0);
    let okspp_ratio = reg[0][1] / reg[0][0];
    let ioks_ratio = reg[1][1] / reg[1][0];
    let ioks_bound = 1.6 * ln_adjusted;
    let positive = reg.iter().flatten().all(|&r| r > 0.0);
    check(
        positive && okspp_ratio <= 1.9 && ioks_ratio <= ioks_bound,
        format!(
            "OKS++ Reg {:.1} -> {:.1} (ratio {okspp_ratio:.3} <= 1.9); IOKS Reg {:.1} -> {:.1} (ratio {ioks_ratio:.3} <= {ioks_bound:.3})",
            reg[0][0], reg[0][1], reg[1][0], reg[1][1]
        ),
    )
}

// ---- criterion 5 ----

fn magic04_reproduction() -> Outcome {
    let ds = load("magic04", Task::Classification)?;
    let table = run_table(
        &ds,
        RunConfig {
            algorithms: vec![Algorithm::Oks, Algorithm::OksPlusPlus, Algorithm::Ioks],
            radius: Param::Value(15.0),
            loss: Some(LossKind::Logistic),
            perms: 10,
            ..RunConfig::default()
        },
    )?;
    let pct = |a| headline(&table, a).map(|v| 100.0 * v);
    let (okspp, oks, ioks) = (
        pct(Algorithm::OksPlusPlus)?,
        pct(Algorithm::Oks)?,
        pct(Algorithm::Ioks)?,
    );
    check(
        within(okspp, 17.88, 2.0) && within(oks, 22.23, 2.5) && okspp < ioks && ioks <= oks + 1.0,
        format!("AMR% OKS++ {okspp:.2} (17.88 +/- 2.0), OKS tuned {oks:.2} (22.23 +/- 2.5), IOKS {ioks:.2}"),
    )
}

fn elevators_reproduction() -> Outcome {
    let ds = load("elevators", Task::Regression)?;
    let table = run_table(
        &ds,
        RunConfig {
            task: Task::Regression,
            algorithms: vec![Algorithm::Oks, Algorithm::OksPlusPlus, Algorithm::Ioks],
            radius: Param::Value(1.0),
            loss: Some(LossKind::Square),
            perms: 10,
            ..RunConfig::default()
        },
    )?;
    let (okspp, oks, ioks) = (
        headline(&table, Algorithm::OksPlusPlus)?,
        headline(&table, Algorithm::Oks)?,
        headline(&table, Algorithm::Ioks)?,
    );
    check(
        within(okspp, 0.0046, 0.0015) && within(oks, 0.0068, 0.0020) && okspp < oks.min(ioks),
        format!("AL OKS++ {okspp:.4} (0.0046 +/- 0.0015), OKS tuned {oks:.4} (0.0068 +/- 0.0020), IOKS {ioks:.4}"),
    )
}

// ---- criterion 6 ----

fn budgeted_reproduction() -> Outcome {
    let ds = load("elevators", Task::Regression)?;
    let table = run_table(
        &ds,
        RunConfig {
            task: Task::Regression,
            algorithms: vec![Algorithm::RfOksPlusPlus, Algorithm::RfIoks],
            radius: Param::Value(1.0),
            loss: Some(LossKind::Square),
            features: 400,
            perms: 10,
            ..RunConfig::default()
        },
    )?;
    let rf_okspp = headline(&table, Algorithm::RfOksPlusPlus)?;
    let rf_ioks = headline(&table, Algorithm::RfIoks)?;
    check(
        within(rf_okspp, 0.0051, 0.0020) && rf_okspp <= rf_ioks,
        format!("AL RF-OKS++ {rf_okspp:.4} (0.0051 +/- 0.0020), RF-IOKS {rf_ioks:.4}"),
    )
}

// ---- criterion 7 ----

fn absolute_parity() -> Outcome {
    let ds = load("elevators", Task::Regression)?;
    let table = run_table(
        &ds,
        RunConfig {
            task: Task::Regression,
            algorithms: vec![Algorithm::Oks, Algorithm::Ioks],
            radius: Param::Value(1.0),
            loss: Some(LossKind::Absolute),
            perms: 10,
            ..RunConfig::default()
        },
    )?;
    let ioks = headline(&table, Algorithm::Ioks)?;
    let oks = headline(&table, Algorithm::Oks)?;
    check(
        within(ioks, 0.0492, 0.004) && (ioks - oks).abs() <= 0.005,
        format!("AL IOKS {ioks:.4} (0.0492 +/- 0.004), OKS tuned {oks:.4}"),
    )
}
