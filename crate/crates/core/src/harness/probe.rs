//! Empirical check of replace-one stability for Tikhonov-regularized ERM.
//!
//! For `w^ = argmin (1/n) sum f(w; xi_i) + gamma/2 ||w||^2` with `f` nonnegative,
//! `beta_w`-smooth and self-bounded, the expected risk satisfies
//! `(1 - 8 beta_w / (gamma n)) E[G(w^)] <= E[G^(w^)]`, and replacing one sample
//! moves the minimizer by at most
//! `sqrt(8 beta_w) / (gamma n) * (sqrt f(w^(i); xi_i) + sqrt f(w^; xi_i'))`.
//! For a linear predictor `beta_w = beta ||x||^2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledData, View};
use crate::erm::{
    regularized_erm, EmpiricalRisk, Predictor, QuadraticRegularizer, SmoothObjective,
};
use crate::error::{Error, Result};
use crate::losses::loss_value;
use crate::stats::MeanEstimate;
use crate::synth::{derive_seed, sample_paired};

use super::config::ExperimentConfig;
use super::sweep::{cell_seed, Instance, POOL_STREAM, STUDENT_STREAM};

/// Slack for solver inexactness in the per-trial displacement check.
const DISPLACEMENT_SLACK: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub n: usize,
    pub seeds: usize,
    pub gamma: f64,
    /// `beta R^2`, the smoothness of `f` in `w` over the radius-`R` ball.
    pub beta_w: f64,
    /// `1 - 8 beta_w / (gamma n)`.
    pub factor: f64,
    pub risk: MeanEstimate,
    pub empirical_risk: MeanEstimate,
    /// Mean and standard error of `factor * G(w^) - G^(w^)` across seeds.
    pub gap: MeanEstimate,
    pub inequality_holds: bool,
    /// Same check with `beta = loss beta` and `lambda = loss sigma` plugged in directly.
    pub loss_constant_factor: f64,
    pub loss_constant_holds: bool,
    pub trials: usize,
    pub displacement_violations: usize,
    /// Largest observed displacement divided by its bound.
    pub max_displacement_ratio: f64,
    pub mean_displacement: f64,
}

impl ProbeReport {
    pub fn passed(&self) -> bool {
        self.inequality_holds && self.displacement_violations == 0
    }
}

/// Trains the probed estimator on `cfg.n_grid[0]` samples for every seed.
pub fn stability_probe(cfg: &ExperimentConfig, replacements: usize) -> Result<ProbeReport> {
    cfg.validate()?;
    if replacements == 0 {
        return Err(Error::Config(
            "stability probe needs at least one replacement".into(),
        ));
    }
    let n = cfg.n_grid[0];
    let gamma = cfg.probe.gamma;
    let instance = Instance::new(cfg)?;
    let spec = instance.spec;
    let radius = cfg.radius_x();
    let beta_w = spec.beta * radius * radius;
    // f is linear in w through one feature vector, so it has no strong convexity in w
    let lambda = 0.0;
    if !((lambda + gamma) * n as f64 >= 8.0 * beta_w) {
        return Err(Error::Config(format!(
            "stability precondition (lambda + gamma) n >= 8 beta violated: ({lambda} + {gamma}) * {n} = {:.4} < 8 * {beta_w:.4} = {:.4}",
            (lambda + gamma) * n as f64,
            8.0 * beta_w
        )));
    }
    let factor = 1.0 - 8.0 * beta_w / ((lambda + gamma) * n as f64);
    let loss_constant_factor = 1.0 - 8.0 * spec.beta / ((spec.sigma + gamma) * n as f64);
    let oracle = instance.oracle();
    let dim = cfg.model.d_x;

    struct SeedOutcome {
        g: f64,
        g_hat: f64,
        trials: Vec<(f64, f64)>,
    }

    let run_seed = |seed_index: usize| -> Result<SeedOutcome> {
        let seed = cell_seed(cfg.master_seed, 0, seed_index);
        let data = sample_paired(
            &instance.model,
            Some(&instance.labels),
            n,
            derive_seed(seed, &[STUDENT_STREAM]),
            cfg.boundedness,
        )?;
        let xs = LabeledData::from_pairs(&data, View::X)?;
        let reg = QuadraticRegularizer::ridge(gamma, dim)?;
        let w = regularized_erm(&xs, &spec, &reg, None, &cfg.solver)?;
        let g_hat = EmpiricalRisk::new(spec, &xs)?.value(&w.weights);
        let g = population_risk(&w, &oracle, &spec)?;

        let fresh = sample_paired(
            &instance.model,
            Some(&instance.labels),
            replacements,
            derive_seed(seed, &[POOL_STREAM]),
            cfg.boundedness,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[POOL_STREAM, 1]));
        let mut trials = Vec::with_capacity(replacements);
        for replacement in &fresh {
            let i = rng.random_range(0..n);
            let y_new = replacement.y.expect("labeled");
            let swapped = xs.with_replaced(i, &replacement.x, y_new);
            let wi = regularized_erm(&swapped, &spec, &reg, None, &cfg.solver)?;
            let displacement = (&wi.weights - &w.weights).norm();
            let old_x = xs.features.row(i).transpose();
            let f_old = loss_value(&spec, wi.weights.dot(&old_x), xs.targets[i])?;
            let f_new = loss_value(&spec, w.weights.dot(&replacement.x), y_new)?;
            let beta_i = spec.beta * old_x.norm_squared().max(replacement.x.norm_squared());
            let bound = (8.0 * beta_i).sqrt() / ((lambda + gamma) * n as f64)
                * (f_old.sqrt() + f_new.sqrt());
            trials.push((displacement, bound));
        }
        Ok(SeedOutcome { g, g_hat, trials })
    };

    let outcomes: Vec<SeedOutcome> = (0..cfg.seeds)
        .into_par_iter()
        .map(run_seed)
        .collect::<Result<Vec<_>>>()?;

    let risk = MeanEstimate::from_values(outcomes.iter().map(|o| o.g));
    let empirical_risk = MeanEstimate::from_values(outcomes.iter().map(|o| o.g_hat));
    let gap = MeanEstimate::from_values(outcomes.iter().map(|o| factor * o.g - o.g_hat));
    let loss_gap = MeanEstimate::from_values(
        outcomes
            .iter()
            .map(|o| loss_constant_factor * o.g - o.g_hat),
    );
    let all_trials: Vec<(f64, f64)> = outcomes.iter().flat_map(|o| o.trials.clone()).collect();
    let violations = all_trials
        .iter()
        .filter(|(d, b)| *d > b + DISPLACEMENT_SLACK)
        .count();
    let max_ratio = all_trials
        .iter()
        .map(|(d, b)| {
            if *b > 0.0 {
                d / b
            } else if *d > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    let se_or_zero = |e: &MeanEstimate| {
        if e.std_error.is_finite() {
            e.std_error
        } else {
            0.0
        }
    };
    Ok(ProbeReport {
        n,
        seeds: cfg.seeds,
        gamma,
        beta_w,
        factor,
        inequality_holds: gap.mean <= 3.0 * se_or_zero(&gap),
        loss_constant_factor,
        loss_constant_holds: loss_gap.mean <= 3.0 * se_or_zero(&loss_gap),
        risk,
        empirical_risk,
        gap,
        trials: all_trials.len(),
        displacement_violations: violations,
        max_displacement_ratio: max_ratio,
        mean_displacement: all_trials.iter().map(|t| t.0).sum::<f64>()
            / all_trials.len().max(1) as f64,
    })
}

fn population_risk(
    w: &Predictor,
    oracle: &crate::transfer::RiskOracle<'_>,
    spec: &crate::losses::LossSpec,
) -> Result<f64> {
    match *oracle {
        crate::transfer::RiskOracle::Planted { model, labels } => {
            crate::synth::planted_risk(model, labels, View::X)?.risk(&w.weights)
        }
        crate::transfer::RiskOracle::TestPool { pool, .. } => {
            let mut total = 0.0;
            for s in pool {
                total += loss_value(spec, w.weights.dot(&s.x), s.y.unwrap_or(0.0))?;
            }
            Ok(total / pool.len() as f64)
        }
    }
}
