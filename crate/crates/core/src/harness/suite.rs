//! Randomized identity checks for the CCA coordinate system, run by `cca-check`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::cca::{fit_cca, CcaBasis, CovarianceEstimate};
use crate::data::View;
use crate::error::Result;

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub instances: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn gaussian_vector(dim: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

/// A random well-conditioned joint covariance `G G^T / k + 0.1 I`.
pub fn random_joint_covariance(dx: usize, dz: usize, rng: &mut impl Rng) -> CovarianceEstimate {
    let d = dx + dz;
    let k = d + 2;
    let g = DMatrix::from_fn(d, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let joint = &g * g.transpose() / k as f64 + DMatrix::identity(d, d) * 0.1;
    CovarianceEstimate::population(
        joint.view((0, 0), (dx, dx)).into_owned(),
        joint.view((dx, dx), (dz, dz)).into_owned(),
        joint.view((0, dx), (dx, dz)).into_owned(),
    )
    .expect("positive definite by construction")
}

/// `w' Sxx w - 2 w' Sxz v + v' Szz v`, straight from the covariance blocks.
pub fn direct_agreement(cov: &CovarianceEstimate, w: &DVector<f64>, v: &DVector<f64>) -> f64 {
    (w.transpose() * &cov.sigma_xx * w)[0] - 2.0 * (w.transpose() * &cov.sigma_xz * v)[0]
        + (v.transpose() * &cov.sigma_zz * v)[0]
}

struct Tracker {
    name: &'static str,
    tolerance: f64,
    max_error: f64,
    instances: usize,
}

impl Tracker {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            max_error: 0.0,
            instances: 0,
        }
    }

    fn record(&mut self, error: f64) {
        self.instances += 1;
        // NaN must fail the check
        self.max_error = if error.is_nan() {
            f64::NAN
        } else {
            self.max_error.max(error)
        };
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name,
            instances: self.instances,
            max_error: self.max_error,
            tolerance: self.tolerance,
            passed: self.max_error <= self.tolerance,
        }
    }
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Runs `instances` random draws with `1 <= dx, dz <= max_dim`.
pub fn run_cca_suite(instances: usize, max_dim: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut two_term = Tracker::new("agreement: shrinkage form vs covariance quadratic", 1e-10);
    let mut three_term = Tracker::new("agreement: three-sum form vs covariance quadratic", 1e-10);
    let mut matrix_form = Tracker::new("agreement: block matrix vs covariance quadratic", 1e-10);
    let mut inner = Tracker::new("canonical coordinates preserve w'x", 1e-10);
    let mut round_trip = Tracker::new("canonical coordinates round trip", 1e-10);
    let mut contraction = Tracker::new("T_CCA is a contraction in prediction norm", 1e-10);
    let mut regression = Tracker::new("T_CCA equals the population regression of v'z on x", 1e-8);
    let mut cross = Tracker::new("basis reproduces the cross-covariance", 1e-10);
    let mut range = Tracker::new("correlations lie in [0, 1] and descend", 0.0);

    for _ in 0..instances {
        let dx = rng.random_range(1..=max_dim);
        let dz = rng.random_range(1..=max_dim);
        let cov = random_joint_covariance(dx, dz, &mut rng);
        let basis = fit_cca(&cov, 0.0)?;
        let w = gaussian_vector(dx, &mut rng);
        let v = gaussian_vector(dz, &mut rng);
        let x = gaussian_vector(dx, &mut rng);

        let direct = direct_agreement(&cov, &w, &v);
        two_term.record(relative(basis.agreement_quadratic(&w, &v)?.total, direct));
        three_term.record(relative(basis.agreement_three_term(&w, &v)?, direct));
        let p = DVector::from_iterator(dx + dz, w.iter().chain(v.iter()).copied());
        matrix_form.record(relative(
            (p.transpose() * basis.agreement_form() * &p)[0],
            direct,
        ));

        let wt = basis.to_cca_coords(&w, View::X)?;
        let xt = basis.data_to_cca_coords(&x, View::X)?;
        inner.record(relative(wt.dot(&xt), w.dot(&x)));
        let back = basis.from_cca_coords(&wt, View::X)?;
        round_trip.record((&back - &w).amax() / w.amax().max(1.0));

        let tv = basis.t_cca(&v)?;
        let shrunk = (tv.transpose() * &cov.sigma_xx * &tv)[0];
        let original = (v.transpose() * &cov.sigma_zz * &v)[0];
        contraction.record(((shrunk - original) / original.max(1.0)).max(0.0));
        let reg = cov
            .sigma_xx
            .clone()
            .cholesky()
            .expect("positive definite")
            .solve(&(&cov.sigma_xz * &v));
        regression.record((&tv - &reg).amax() / reg.amax().max(1.0));

        cross.record(
            (basis.cross_covariance() - &cov.sigma_xz).amax() / cov.sigma_xz.amax().max(1.0),
        );
        range.record(correlation_range_error(&basis));
    }
    Ok(SuiteReport {
        checks: vec![
            two_term.finish(),
            three_term.finish(),
            matrix_form.finish(),
            inner.finish(),
            round_trip.finish(),
            contraction.finish(),
            regression.finish(),
            cross.finish(),
            range.finish(),
        ],
    })
}

fn correlation_range_error(basis: &CcaBasis) -> f64 {
    let c = &basis.correlations;
    let mut err = 0.0f64;
    for i in 0..c.len() {
        err = err.max(-c[i]).max(c[i] - 1.0);
        if i > 0 {
            err = err.max(c[i] - c[i - 1]);
        }
    }
    err
}
