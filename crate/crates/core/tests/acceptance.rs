//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines are always printed; exits nonzero if any fails.

use std::ops::ControlFlow;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use pmdiff::analysis::{uniform_random_field, InvariantTolerances};
use pmdiff::schemes::{self, heat_closed_form};
use pmdiff::{
    add_gaussian_noise, stability_bound, variance, verify_invariants, verify_operator_properties, DenoiseExperiment,
    DiffusionOperator, DiffusivityModel, FieldStats, Regime, Runner, ScalarField, SchemeConfig, SchemeKind,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rational(lambda: f64) -> DiffusivityModel {
    DiffusivityModel::rational(lambda).unwrap()
}

fn both_models(lambda: f64) -> [DiffusivityModel; 2] {
    [
        DiffusivityModel::rational(lambda).unwrap(),
        DiffusivityModel::exponential(lambda).unwrap(),
    ]
}

fn default_config(kind: SchemeKind) -> SchemeConfig {
    SchemeConfig {
        kind,
        ..SchemeConfig::default()
    }
}

fn stability() -> Outcome {
    let bound = stability_bound(1.0, 1.0);
    let u = uniform_random_field(8, 8, 0.0, 1.0, 1).unwrap();
    let m = rational(1.0);
    let at_bound = schemes::explicit_step(&u, &m, &SchemeConfig::new(SchemeKind::Explicit, 0.25));
    let below = schemes::explicit_step(&u, &m, &SchemeConfig::new(SchemeKind::Explicit, 0.249));
    let pass = bound == 0.25 && at_bound.is_err() && below.is_ok();
    outcome(
        pass,
        format!(
            "bound={bound} tau=0.25:{} tau=0.249:{}",
            if at_bound.is_err() { "refused" } else { "accepted" },
            if below.is_ok() { "accepted" } else { "refused" }
        ),
    )
}

fn operator_properties() -> Outcome {
    let mut worst_asym: f64 = 0.0;
    let mut worst_row: f64 = 0.0;
    let mut min_off = f64::INFINITY;
    let mut max_components = 0;
    let mut all_strong = true;
    for seed in 0..100 {
        let u = uniform_random_field(16, 16, 0.0, 1.0, seed).unwrap();
        for m in both_models(0.1) {
            let r = verify_operator_properties(&DiffusionOperator::assemble(&u, &m).unwrap());
            worst_asym = worst_asym.max(r.max_asymmetry);
            worst_row = worst_row.max(r.max_abs_row_sum);
            min_off = min_off.min(r.min_off_diagonal);
            max_components = max_components.max(r.components);
            all_strong &= r.strongly_connected;
        }
    }
    let pass = worst_asym == 0.0 && worst_row == 0.0 && min_off > 0.0 && max_components == 1 && all_strong;
    outcome(
        pass,
        format!(
            "max_asym={worst_asym:e} max_row_sum={worst_row:e} min_off_diag={min_off:.3e} components={max_components}"
        ),
    )
}

fn invariant_runs() -> Vec<(String, pmdiff::analysis::InvariantReport)> {
    let u0 = uniform_random_field(64, 64, 0.0, 1.0, 42).unwrap();
    let stats = FieldStats::of(&u0);
    let mut configs: Vec<SchemeConfig> = SchemeKind::ALL.iter().map(|&k| default_config(k)).collect();
    configs.push(SchemeConfig::new(SchemeKind::SemiImplicit, 5.0));
    std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|cfg| {
                let (u0, stats) = (&u0, &stats);
                s.spawn(move || {
                    let out = Runner::new(rational(1.0), cfg.clone()).run(u0, 1000).unwrap();
                    let report = verify_invariants(&out.log, stats, &InvariantTolerances::default());
                    (format!("{}@{}", cfg.kind, cfg.tau), report)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

fn grey_level(runs: &[(String, pmdiff::analysis::InvariantReport)]) -> Outcome {
    let worst = runs.iter().map(|(_, r)| r.max_mean_drift).fold(0.0, f64::max);
    let pass = runs.iter().all(|(_, r)| r.max_mean_drift <= 1e-10);
    let per: Vec<String> = runs
        .iter()
        .map(|(n, r)| format!("{n}:{:.1e}", r.max_mean_drift))
        .collect();
    outcome(pass, format!("max_drift={worst:.2e} [{}]", per.join(" ")))
}

fn extremum(runs: &[(String, pmdiff::analysis::InvariantReport)]) -> Outcome {
    let worst = runs.iter().map(|(_, r)| r.max_extremum_excursion).fold(0.0, f64::max);
    let runs_ok = runs.iter().all(|(_, r)| r.max_extremum_excursion <= 1e-12);

    let board = ScalarField::from_fn(32, 32, |i, j| ((i + j) % 2) as f64).unwrap();
    let cfg = SchemeConfig::new(SchemeKind::Explicit, 0.3).allow_unstable();
    let control = Runner::new(rational(1.0), cfg).run_observed(&board, 200, |_, u| {
        if u.min() < -1e-12 || u.max() > 1.0 + 1e-12 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    });
    let violated_at = match &control {
        Ok(out) if out.stopped_early => Some(out.iterations),
        // a blowup is also a violation of the extremum principle
        Err(_) => Some(0),
        Ok(_) => None,
    };
    outcome(
        runs_ok && violated_at.is_some(),
        format!("max_excursion={worst:.2e} control_violation_iter={violated_at:?}"),
    )
}

fn steady_state() -> Outcome {
    let u0 = uniform_random_field(8, 8, 0.0, 1.0, 5).unwrap();
    let v0 = variance(&u0);
    let target = 1e-6 * v0;
    let out = Runner::new(rational(1.0), SchemeConfig::new(SchemeKind::Explicit, 0.2))
        .run_observed(&u0, 1_000_000, |_, u| {
            if variance(u) <= target {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .unwrap();
    let report = verify_invariants(&out.log, &FieldStats::of(&u0), &InvariantTolerances::default());
    let final_ratio = variance(&out.field) / v0;
    let pass = report.variance_ok && final_ratio <= 1e-6;
    outcome(
        pass,
        format!(
            "steps={} final_ratio={final_ratio:.3e} max_var_increase={:.1e}",
            out.iterations, report.max_variance_increase
        ),
    )
}

/// Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

fn semi_implicit_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let cfg = default_config(SchemeKind::SemiImplicit);
    for seed in 0..20u64 {
        let h = 1 + (seed as usize * 7) % 8;
        let w = 1 + (seed as usize * 3 + 2) % 8;
        let u = uniform_random_field(h, w, 0.0, 1.0, 100 + seed).unwrap();
        let m = if seed % 2 == 0 {
            rational(0.2)
        } else {
            DiffusivityModel::exponential(0.2).unwrap()
        };
        let iterative = schemes::semi_implicit_step(&u, &m, &cfg).unwrap();
        let a = DiffusionOperator::assemble(&u, &m).unwrap().to_dense();
        let n = u.len();
        let system: Vec<Vec<f64>> = (0..n)
            .map(|r| {
                (0..n)
                    .map(|c| f64::from(u8::from(r == c)) - cfg.tau * a[r][c])
                    .collect()
            })
            .collect();
        let direct = dense_solve(system, u.values().to_vec());
        for (x, y) in iterative.values().iter().zip(&direct) {
            worst = worst.max((x - y).abs());
        }
    }
    outcome(worst <= 1e-10, format!("max_norm_diff={worst:.2e}"))
}

fn heat_cross_check() -> Outcome {
    let n = 500;
    let tau = 0.1;
    let t = n as f64 * tau;
    let u0 = ScalarField::from_fn(1, 256, |_, j| (-((j as f64 - 127.5) / 12.0).powi(2) / 2.0).exp()).unwrap();
    let out = Runner::new(rational(1.0), SchemeConfig::new(SchemeKind::Gaussian, tau))
        .run(&u0, n)
        .unwrap();
    let exact = heat_closed_form(&u0, t).unwrap();
    let margin = (4.0 * (2.0 * t).sqrt()).ceil() as usize;
    let worst = (margin..256 - margin)
        .map(|j| (out.field.values()[j] - exact.values()[j]).abs())
        .fold(0.0, f64::max);
    outcome(
        worst <= 5e-3,
        format!("t={t} margin={margin} max_norm_diff={worst:.2e}"),
    )
}

/// Central-difference gradient at the edge pixels is `STEP_SCALE / 2 = 10·lambda`.
const STEP_SCALE: f64 = 20.0;

/// Unit step on a 1x256 signal, scaled so the edge gradient exceeds lambda = 1.
fn step_signal() -> ScalarField {
    ScalarField::from_fn(1, 256, |_, j| if j < 128 { 0.0 } else { STEP_SCALE }).unwrap()
}

fn max_adjacent_difference(u: &ScalarField) -> f64 {
    u.values().windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max) / STEP_SCALE
}

fn edge_preservation() -> Outcome {
    let u0 = step_signal();
    let pm = Runner::new(rational(1.0), SchemeConfig::new(SchemeKind::Explicit, 0.1))
        .run(&u0, 1000)
        .unwrap();
    let heat = Runner::new(rational(1.0), SchemeConfig::new(SchemeKind::Gaussian, 0.1))
        .run(&u0, 1000)
        .unwrap();
    let (d_pm, d_heat) = (max_adjacent_difference(&pm.field), max_adjacent_difference(&heat.field));
    outcome(
        d_pm >= 0.5 && d_heat < 0.1,
        format!("pm_max_adjacent={d_pm:.4} gaussian_max_adjacent={d_heat:.4}"),
    )
}

fn model_contrast() -> Outcome {
    let u0 = step_signal();
    let cfg = SchemeConfig::new(SchemeKind::Explicit, 0.1);
    let var_after = |m: DiffusivityModel| variance(&Runner::new(m, cfg.clone()).run(&u0, 10_000).unwrap().field);
    let [r, e] = both_models(1.0);
    let (vr, ve) = (var_after(r), var_after(e));
    outcome(ve > vr, format!("variance exponential={ve:.6} rational={vr:.6}"))
}

fn piecewise_constant_image() -> ScalarField {
    ScalarField::from_fn(128, 128, |i, j| {
        let (x, y) = (j as f64, i as f64);
        if (x - 90.0).powi(2) + (y - 60.0).powi(2) < 25.0f64.powi(2) {
            0.5
        } else if (20.0..70.0).contains(&x) && (24.0..100.0).contains(&y) {
            0.8
        } else {
            0.2
        }
    })
    .unwrap()
}

fn denoising_order() -> Outcome {
    let clean = piecewise_constant_image();
    let noisy = add_gaussian_noise(&clean, 2.0, 7).unwrap();
    let experiment = DenoiseExperiment::new(rational(0.1), 100_000);
    let configs = [
        SchemeConfig::new(SchemeKind::Regularized, 0.2).with_sigma(1.0),
        SchemeConfig::new(SchemeKind::Explicit, 0.2),
        SchemeConfig::new(SchemeKind::PmOriginal, 0.2),
    ];
    let results = experiment.run(&clean, &noisy, &configs).unwrap();
    let stops: Vec<usize> = results.iter().map(|r| r.stop_iteration).collect();
    let improved = results.iter().all(|r| r.converged && r.min_error < r.curve[0]);
    let detail: Vec<String> = results
        .iter()
        .map(|r| {
            format!(
                "{}:stop={} min/initial={:.3}",
                r.scheme,
                r.stop_iteration,
                r.min_error / r.curve[0]
            )
        })
        .collect();
    outcome(stops[0] < stops[1] && stops[1] < stops[2] && improved, detail.join(" "))
}

fn regularized_degeneracy() -> Outcome {
    let m = rational(0.3);
    let mut a = uniform_random_field(24, 20, 0.0, 1.0, 11).unwrap();
    let mut b = a.clone();
    let reg = SchemeConfig::new(SchemeKind::Regularized, 0.2).with_sigma(0.0);
    let exp = SchemeConfig::new(SchemeKind::Explicit, 0.2);
    let mut first_mismatch = None;
    for n in 1..=100 {
        a = schemes::regularized_step(&a, &m, &reg).unwrap();
        b = schemes::explicit_step(&b, &m, &exp).unwrap();
        let same = a
            .values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        if !same && first_mismatch.is_none() {
            first_mismatch = Some(n);
        }
    }
    outcome(first_mismatch.is_none(), format!("first_mismatch={first_mismatch:?}"))
}

fn flux_derivative() -> Outcome {
    let lambda = 1.0;
    let mut worst: f64 = 0.0;
    let mut signs_ok = true;
    for m in both_models(lambda) {
        for k in 0..60 {
            let s = lambda * 10f64.powf(-3.0 + 6.0 * (k as f64 + 0.5) / 60.0);
            let h = 1e-6 * s;
            let fd = (m.flux(s + h).unwrap() - m.flux(s - h).unwrap()) / (2.0 * h);
            let exact = m.flux_derivative(s).unwrap();
            if !(fd == 0.0 && exact == 0.0) {
                worst = worst.max((fd - exact).abs() / exact.abs());
            }
            let expected = if s < lambda { Regime::Forward } else { Regime::Backward };
            let regime = m.regime(s).unwrap();
            // far in the backward regime the exponential derivative decays into the critical band
            let banded = s > lambda && regime == Regime::Critical && exact.abs() <= 1e-12;
            let sign_ok = if s < lambda { exact > 0.0 } else { exact <= 0.0 };
            signs_ok &= sign_ok && (regime == expected || banded);
        }
        signs_ok &= m.regime(lambda).unwrap() == Regime::Critical;
        signs_ok &= m.flux_derivative(lambda).unwrap().abs() <= 1e-12;
    }
    outcome(
        worst <= 1e-6 && signs_ok,
        format!("max_rel_err={worst:.2e} sign_pattern_ok={signs_ok}"),
    )
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let elapsed: Duration = start.elapsed();
        if !o.pass {
            failures += 1;
        }
        println!(
            "{} {id:>2} {name}: {} ({:.2}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64()
        );
    };

    report(1, "stability bound", &mut stability);
    report(2, "operator properties", &mut operator_properties);
    let start = Instant::now();
    let runs = invariant_runs();
    println!(
        "     ({} invariant runs, {:.2}s)",
        runs.len(),
        start.elapsed().as_secs_f64()
    );
    report(3, "grey-level invariance", &mut || grey_level(&runs));
    report(4, "extremum principle", &mut || extremum(&runs));
    report(5, "steady state", &mut steady_state);
    report(6, "semi-implicit vs direct solve", &mut semi_implicit_oracle);
    report(7, "heat equation cross-check", &mut heat_cross_check);
    report(8, "edge preservation", &mut edge_preservation);
    report(9, "diffusivity model contrast", &mut model_contrast);
    report(10, "denoising order", &mut denoising_order);
    report(11, "regularized degeneracy", &mut regularized_degeneracy);
    report(12, "flux derivative", &mut flux_derivative);

    if failures == 0 {
        println!("acceptance: 12/12 passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} failed");
        ExitCode::FAILURE
    }
}
