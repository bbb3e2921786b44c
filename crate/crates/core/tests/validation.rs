//! Acceptance criteria. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mvtransfer::cca::{block_inverse_xx, coregularized_smoothness, fit_cca, CcaBasis};
use mvtransfer::erm::{constrained_erm, multitask_params, AgreementSource, SolverConfig};
use mvtransfer::harness::suite::{gaussian_vector, random_joint_covariance};
use mvtransfer::harness::{
    compare_results, fit_rate, run_cca_suite, run_rate_sweep, stability_probe, ExperimentConfig,
};
use mvtransfer::linalg::{max_eigenvalue, min_eigenvalue, sqrt_psd};
use mvtransfer::losses::{loss_curvature, loss_derivative, loss_value, LossSpec};
use mvtransfer::stats::MeanEstimate;
use mvtransfer::synth::{
    planted_risk, radius, sample_paired, Boundedness, CanonicalPairModel, LabelModel,
};
use mvtransfer::transfer::{
    multiview_distill_expectation, multiview_distill_tcca, RiskOracle, StudentSettings,
};
use mvtransfer::{LabeledData, View};

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_lambdas(rank: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut l: Vec<f64> = (0..rank).map(|_| rng.random_range(0.05..0.98)).collect();
    l.sort_by(|a, b| b.total_cmp(a));
    l
}

fn random_model(rng: &mut ChaCha8Rng) -> CanonicalPairModel {
    let dx = rng.random_range(2..=6);
    let dz = rng.random_range(2..=6);
    let rank = rng.random_range(1..=dx.min(dz));
    let lambdas = random_lambdas(rank, rng);
    CanonicalPairModel::new(dx, dz, &lambdas, rng.random()).unwrap()
}

fn random_labels(
    model: &CanonicalPairModel,
    view: View,
    norm: f64,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> LabelModel {
    let d = if view == View::X { model.dx } else { model.dz };
    let w = gaussian_vector(d, rng);
    LabelModel::regression(view, &w * (norm / w.norm()), noise)
}

fn agreement_identities() -> Outcome {
    let report = run_cca_suite(1000, 8, 2024).map_err(|e| e.to_string())?;
    let worst = report
        .checks
        .iter()
        .map(|c| {
            format!(
                "{}={:.1e}",
                c.name.split(':').next().unwrap_or(c.name),
                c.max_error
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        report.passed(),
        format!("1000 instances; max errors: {worst}"),
    )
}

/// Largest |corr(u'x, v'z)| over unit directions on a fine angular grid.
fn grid_top_correlation(cov: &mvtransfer::cca::CovarianceEstimate, steps: usize) -> f64 {
    let dirs: Vec<DVector<f64>> = (0..steps)
        .map(|i| {
            let t = std::f64::consts::PI * i as f64 / steps as f64;
            DVector::from_vec(vec![t.cos(), t.sin()])
        })
        .collect();
    let var_x: Vec<f64> = dirs
        .iter()
        .map(|u| (u.transpose() * &cov.sigma_xx * u)[0])
        .collect();
    let var_z: Vec<f64> = dirs
        .iter()
        .map(|v| (v.transpose() * &cov.sigma_zz * v)[0])
        .collect();
    let mut best = 0.0f64;
    for (i, u) in dirs.iter().enumerate() {
        let row = u.transpose() * &cov.sigma_xz;
        for (j, v) in dirs.iter().enumerate() {
            let c = (row[0] * v[0] + row[1] * v[1]).abs() / (var_x[i] * var_z[j]).sqrt();
            best = best.max(c);
        }
    }
    best
}

fn cca_grid_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let cov = random_joint_covariance(2, 2, &mut rng);
        let fitted = fit_cca(&cov, 0.0)
            .map_err(|e| e.to_string())?
            .top_correlation();
        worst = worst.max((fitted - grid_top_correlation(&cov, 1500)).abs());
    }
    verdict(
        worst <= 1e-3,
        format!("50 instances, max |fit - grid| = {worst:.2e}"),
    )
}

fn block_inverse_and_smoothness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut inverse_err = 0.0f64;
    for _ in 0..200 {
        let dx = rng.random_range(1..=6);
        let dz = rng.random_range(1..=6);
        let corr = DVector::from_vec(random_lambdas(dx.min(dz), &mut rng));
        let basis = CcaBasis::identity(dx, dz, corr.clone()).unwrap();
        let (gamma, nu) = (rng.random_range(0.01..5.0), rng.random_range(0.0..5.0));
        let m = basis.coregularizer_matrix(gamma, nu).unwrap();
        let inv = m.try_inverse().ok_or("M not invertible")?;
        let diag = block_inverse_xx(gamma, nu, &corr, dx).unwrap();
        let expected = DMatrix::from_diagonal(&diag);
        let err = (inv.view((0, 0), (dx, dx)) - expected).amax() / diag.amax().max(1.0);
        inverse_err = inverse_err.max(err);
    }

    // per-view q-space Hessian of the squared loss on bounded samples
    let spec = LossSpec::squared();
    let (mut worst_ratio, mut worst_sample) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let model = random_model(&mut rng);
        let basis = model.basis().unwrap();
        let data = sample_paired(&model, None, 200, rng.random(), Boundedness::Strict).unwrap();
        let (gamma, nu) = (rng.random_range(0.01..3.0), rng.random_range(0.01..3.0));
        let r = radius(model.dx).max(radius(model.dz));
        let lambda1 = basis.top_correlation();
        let beta_prime = coregularized_smoothness(gamma, nu, spec.beta, r, lambda1).unwrap();
        let m = basis.coregularizer_matrix(gamma, nu).unwrap();
        let m_inv_half = sqrt_psd(&m.try_inverse().unwrap());
        for (view, offset, dim) in [(View::X, 0, model.dx), (View::Z, model.dx, model.dz)] {
            let p = m_inv_half.columns(offset, dim).into_owned();
            let mut h = DMatrix::zeros(dim, dim);
            for s in &data {
                let c = basis.data_to_cca_coords(s.view(view), view).unwrap();
                // one-sample Hessian beta (P c)(P c)^T has top eigenvalue beta ||P c||^2
                worst_sample = worst_sample.max(spec.beta * (&p * &c).norm_squared() / beta_prime);
                h += &c * c.transpose() * spec.beta;
            }
            h /= data.len() as f64;
            let hq = &p * h * p.transpose();
            worst_ratio = worst_ratio.max(max_eigenvalue(&hq) / beta_prime);
        }
    }
    verdict(
        inverse_err <= 1e-10 && worst_ratio.max(worst_sample) <= 1.0 + 1e-6,
        format!(
            "200 inverses, max error {inverse_err:.2e}; top q-Hessian eigenvalue / beta': averaged {worst_ratio:.4}, single sample {worst_sample:.4}"
        ),
    )
}

fn loss_inequalities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let bound = 3.0;
    let mut report = Vec::new();
    let mut ok = true;
    for spec in [LossSpec::squared(), LossSpec::logistic(bound).unwrap()] {
        let mut violations = 0usize;
        for _ in 0..10_000 {
            let b = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let (a, a2) = (
                rng.random_range(-bound..bound),
                rng.random_range(-bound..bound),
            );
            let (f, g) = (
                loss_value(&spec, a, b).unwrap(),
                loss_derivative(&spec, a, b).unwrap(),
            );
            let f2 = loss_value(&spec, a2, b).unwrap();
            let linear = f + g * (a2 - a);
            let q = 0.5 * (a2 - a) * (a2 - a);
            let tol = 1e-12 * f.abs().max(f2.abs()).max(1.0);
            let curv = loss_curvature(&spec, a, b).unwrap();
            if g * g > 2.0 * spec.beta * f + tol
                || f2 > linear + spec.beta * q + tol
                || f2 < linear + spec.sigma * q - tol
                || curv > spec.beta + 1e-15
                || curv < spec.sigma - 1e-15
            {
                violations += 1;
            }
        }
        ok &= violations == 0;
        report.push(format!("{:?}: {violations} violations", spec.kind));
    }
    verdict(ok, format!("10^4 points per loss; {}", report.join(", ")))
}

fn rate_slopes() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for name in ["rate-noiseless.json", "rate-noisy.json"] {
        let cfg = config(name);
        let [low, high] = cfg.slope_band.expect("band declared in config");
        let result = run_rate_sweep(&cfg).map_err(|e| e.to_string())?;
        match fit_rate(&result) {
            Ok(fit) => {
                let inside = (low..=high).contains(&fit.slope);
                ok &= inside;
                lines.push(format!(
                    "{name}: slope {:.3} vs band [{low}, {high}]",
                    fit.slope
                ));
            }
            Err(e) => {
                ok = false;
                let floored: usize = result.summary.iter().map(|s| s.floored).sum();
                lines.push(format!("{name}: no slope ({floored} floored cells): {e}"));
            }
        }
    }
    verdict(ok, lines.join("; "))
}

fn distillation_benefit() -> Outcome {
    let distill = config("distill.json");
    let plain = config("plain.json");
    let b_w = distill.bounds.b_w;
    let a = run_rate_sweep(&distill).map_err(|e| e.to_string())?;
    let b = run_rate_sweep(&plain).map_err(|e| e.to_string())?;
    // same-view teacher with w* inside the ball: teacher excess = ||v - w*||^2 / 2
    let worst_s2 = a
        .rows
        .iter()
        .map(|r| 2.0 * r.teacher_excess_risk.unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    let cmp = compare_results(&a, &b).map_err(|e| e.to_string())?;
    let rates: Vec<String> = cmp
        .rows
        .iter()
        .map(|r| format!("n={} win {:.2}", r.n, r.win_rate))
        .collect();
    let ok = worst_s2 <= b_w * b_w / 100.0
        && cmp
            .rows
            .iter()
            .all(|r| r.win_rate >= 0.8 && r.paired == distill.seeds);
    verdict(
        ok,
        format!("max S^2 = {worst_s2:.2e}; {}", rates.join(", ")),
    )
}

fn lupi_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let spec = LossSpec::squared();
    let solver = SolverConfig::default();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let model = random_model(&mut rng);
        let basis = model.basis().unwrap();
        let labels = random_labels(&model, View::Z, 1.0, 0.5, &mut rng);
        let teacher_data = sample_paired(
            &model,
            Some(&labels),
            300,
            rng.random(),
            Boundedness::Quantile,
        )
        .unwrap();
        let teacher = constrained_erm(
            &LabeledData::from_pairs(&teacher_data, View::Z).unwrap(),
            &spec,
            1.0,
            &solver,
        )
        .unwrap()
        .in_view(View::Z);
        let data = sample_paired(
            &model,
            Some(&labels),
            64,
            rng.random(),
            Boundedness::Quantile,
        )
        .unwrap();
        let xs = LabeledData::from_pairs(&data, View::X).unwrap();
        let settings = StudentSettings {
            loss: spec,
            radius: radius(model.dx),
            student_bound: 1.0,
            s: rng.random_range(0.05..0.5),
            l_star: 0.125,
            solver,
        };
        let oracle = RiskOracle::Planted {
            model: &model,
            labels: &labels,
        };
        let a = multiview_distill_tcca(&xs, &teacher, &basis, &settings, &oracle)
            .map_err(|e| e.to_string())?;
        let b = multiview_distill_expectation(
            &xs,
            AgreementSource::Population(&basis),
            &teacher,
            &settings,
            &oracle,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max((&a.student.weights - &b.student.weights).amax());
    }
    verdict(
        worst <= 1e-6,
        format!("20 instances, max weight difference {worst:.2e}"),
    )
}

fn agreement_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let spec = LossSpec::squared();
    let solver = SolverConfig::default();
    let pool_size = 20_000;
    let (mut single_bad, mut cross_bad) = (0usize, 0usize);
    let (mut single_ratio, mut cross_ratio) = (0.0f64, 0.0f64);
    // exact population agreement must respect the bound without any Monte-Carlo allowance
    let mut exact_ratio = 0.0f64;
    for _ in 0..50 {
        // single view: student ball 1 inside teacher ball 2, optimum outside both
        let model = random_model(&mut rng);
        let labels = random_labels(&model, View::X, 2.5, 0.5, &mut rng);
        let (b_w, b_v) = (1.0, 2.0);
        let risk = planted_risk(&model, &labels, View::X).unwrap();
        let w_star = risk.optimum_in_ball(b_w);
        let teacher_data = sample_paired(
            &model,
            Some(&labels),
            100,
            rng.random(),
            Boundedness::Quantile,
        )
        .unwrap();
        let v_hat = constrained_erm(
            &LabeledData::from_pairs(&teacher_data, View::X).unwrap(),
            &spec,
            b_v,
            &solver,
        )
        .unwrap()
        .weights;
        let eps = risk.risk(&v_hat).unwrap() - risk.optimal_loss(b_v);
        let bound = 4.0 * (risk.optimal_loss(b_w) - risk.optimal_loss(b_v) + eps) / spec.sigma;
        let pool =
            sample_paired(&model, None, pool_size, rng.random(), Boundedness::Quantile).unwrap();
        let measured = MeanEstimate::from_values(
            pool.iter()
                .map(|s| (w_star.dot(&s.x) - v_hat.dot(&s.x)).powi(2)),
        );
        if measured.mean > bound + 3.0 * measured.std_error {
            single_bad += 1;
        }
        single_ratio = single_ratio.max(measured.mean / bound);
        exact_ratio = exact_ratio.max((&w_star - &v_hat).norm_squared() / bound);

        // cross view: teacher on z, student optimum on x
        let model = random_model(&mut rng);
        let basis = model.basis().unwrap();
        let labels = random_labels(&model, View::Z, 1.0, 0.5, &mut rng);
        let (b_w, b_v) = (1.0, 1.0);
        let risk_x = planted_risk(&model, &labels, View::X).unwrap();
        let w_star = risk_x.optimum_in_ball(b_w);
        let teacher_data = sample_paired(
            &model,
            Some(&labels),
            100,
            rng.random(),
            Boundedness::Quantile,
        )
        .unwrap();
        let v_hat = constrained_erm(
            &LabeledData::from_pairs(&teacher_data, View::Z).unwrap(),
            &spec,
            b_v,
            &solver,
        )
        .unwrap()
        .weights;
        let transferred = basis.t_cca(&v_hat).unwrap();
        let l = basis.bottom_correlation_z();
        let bound = 2.0 * (risk_x.risk(&transferred).unwrap() - risk_x.optimal_loss(b_w))
            / spec.sigma
            + (1.0 - l * l) * b_v * b_v;
        let pool =
            sample_paired(&model, None, pool_size, rng.random(), Boundedness::Quantile).unwrap();
        let measured = MeanEstimate::from_values(
            pool.iter()
                .map(|s| (w_star.dot(&s.x) - v_hat.dot(&s.z)).powi(2)),
        );
        if measured.mean > bound + 3.0 * measured.std_error {
            cross_bad += 1;
        }
        cross_ratio = cross_ratio.max(measured.mean / bound);
        exact_ratio =
            exact_ratio.max(basis.agreement_quadratic(&w_star, &v_hat).unwrap().total / bound);
    }
    verdict(
        single_bad == 0 && cross_bad == 0 && exact_ratio <= 1.0 + 1e-9,
        format!(
            "50+50 instances; violations {single_bad}/{cross_bad}; max measured/bound {single_ratio:.3}/{cross_ratio:.3}; max exact/bound {exact_ratio:.4}"
        ),
    )
}

fn coregularization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut ratio_err = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for _ in 0..100 {
        let (b_w, b_v, s) = (
            rng.random_range(0.2..3.0),
            rng.random_range(0.2..3.0),
            rng.random_range(0.01..1.0),
        );
        let lambda1 = rng.random_range(0.0..1.0);
        let n = rng.random_range(10..10_000);
        let p = multitask_params(
            1.0,
            4.0,
            b_w,
            b_v,
            s,
            lambda1,
            rng.random_range(0.0..1.0),
            n,
        )
        .unwrap();
        let b2 = b_w * b_w + b_v * b_v;
        ratio_err = ratio_err.max(((p.gamma / p.nu) / (s * s / b2) - 1.0).abs());
        let dx = rng.random_range(1..=5);
        let dz = rng.random_range(1..=5);
        let mut corr = random_lambdas(dx.min(dz), &mut rng);
        corr[0] = lambda1.max(corr[0]);
        let basis = CcaBasis::identity(dx, dz, DVector::from_vec(corr)).unwrap();
        min_eig = min_eig.min(min_eigenvalue(
            &basis.coregularizer_matrix(p.gamma, p.nu).unwrap(),
        ));
    }
    let unit = CcaBasis::identity(3, 2, DVector::from_vec(vec![1.0, 0.4])).unwrap();
    let m = unit.coregularizer_matrix(0.0, 2.0).unwrap();
    let null = DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0, 0.0]);
    let null_residual = (&m * &null).amax();

    let cfg = config("coreg.json");
    let result = run_rate_sweep(&cfg).map_err(|e| e.to_string())?;
    let med = |n: usize| {
        result
            .summary
            .iter()
            .find(|s| s.n == n)
            .map(|s| s.median)
            .unwrap_or(f64::NAN)
    };
    let (small, large) = (med(64), med(4096));
    verdict(
        ratio_err <= 1e-12 && min_eig >= -1e-12 && null_residual <= 1e-15 && large < small,
        format!(
            "gamma/nu rel err {ratio_err:.1e}; min eig(M) {min_eig:.2e}; null residual {null_residual:.1e}; median joint excess {small:.3e} (n=64) -> {large:.3e} (n=4096)"
        ),
    )
}

fn stability() -> Outcome {
    let cfg = config("stability.json");
    let r = stability_probe(&cfg, cfg.probe.replacements).map_err(|e| e.to_string())?;
    verdict(
        r.passed() && r.loss_constant_holds && r.n == 200 && r.seeds == 50,
        format!(
            "gap {:.3e} (se {:.1e}), loss-constant gap check {}, {} trials, {} displacement violations, max ratio {:.3}",
            r.gap.mean, r.gap.std_error, r.loss_constant_holds, r.trials, r.displacement_violations, r.max_displacement_ratio
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/rate-noisy.json");
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_mvtransfer"))
            .arg("rate-sweep")
            .arg(&cfg)
            .arg("--output-dir")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("rate-sweep exited with {}", status.status));
        }
        outputs.push(std::fs::read(out.join("sweep.csv")).map_err(|e| e.to_string())?);
    }
    verdict(
        outputs[0] == outputs[1] && !outputs[0].is_empty(),
        format!(
            "two runs, {} bytes each, identical = {}",
            outputs[0].len(),
            outputs[0] == outputs[1]
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        (
            "canonical agreement identities",
            Duration::from_secs(5),
            agreement_identities,
        ),
        (
            "CCA grid-search oracle",
            Duration::from_secs(30),
            cca_grid_oracle,
        ),
        (
            "block inverse and q-space smoothness",
            Duration::from_secs(10),
            block_inverse_and_smoothness,
        ),
        (
            "loss inequalities",
            Duration::from_secs(5),
            loss_inequalities,
        ),
        ("rate slopes", Duration::from_secs(180), rate_slopes),
        (
            "distillation beats plain ERM",
            Duration::from_secs(120),
            distillation_benefit,
        ),
        (
            "privileged-information variants coincide",
            Duration::from_secs(60),
            lupi_equivalence,
        ),
        (
            "agreement bounds",
            Duration::from_secs(120),
            agreement_bounds,
        ),
        (
            "co-regularization",
            Duration::from_secs(120),
            coregularization,
        ),
        ("stability probe", Duration::from_secs(60), stability),
        (
            "byte-identical sweeps",
            Duration::from_secs(120),
            determinism,
        ),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed <= *budget => (true, d),
            Ok(d) => (false, format!("{d}; over time budget {budget:?}")),
            Err(d) => (false, d),
        };
        failed += usize::from(!ok);
        println!(
            "criterion {:>2} {} {name} ({:.2}s): {detail}",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
