//! Rate sweeps over the sample size, slope fits and paired comparisons.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cca::{estimate_covariances, fit_cca, CcaBasis, Centering};
use crate::data::{LabeledData, PairedSample, View};
use crate::erm::{constrained_erm, AgreementSource, EmpiricalRisk, Predictor, SmoothObjective};
use crate::error::{Error, Result};
use crate::losses::{loss_value, LossKind, LossSpec};
use crate::stats::{median, MeanEstimate};
use crate::synth::{
    derive_seed, planted_risk, sample_paired, CanonicalPairModel, LabelModel, PlantedRisk,
};
use crate::transfer::{
    multiview_distill_expectation, multiview_distill_tcca, plain_student,
    simultaneous_coregularized, single_view_distill, train_teacher, CoregSettings, RiskOracle,
    StudentSettings, TransferResult,
};

use super::config::{
    AgreementMode, ExperimentConfig, LStarMode, PipelineKind, SMode, TEST_POOL_STREAM,
};

/// Sub-stream of a cell seed for the student's labeled sample.
pub const STUDENT_STREAM: u64 = 1;
/// Sub-stream for the teacher's labeled sample.
pub const TEACHER_STREAM: u64 = 2;
/// Sub-stream for the unlabeled agreement pool.
pub const POOL_STREAM: u64 = 3;

/// Excess risks at or below this value are logged as this value and left out of slope fits.
pub const EXCESS_FLOOR: f64 = 1e-16;
/// Lower limit on the teacher distance `S`.
pub const S_FLOOR: f64 = 1e-6;

/// Everything about an experiment that does not change between cells.
#[derive(Clone, Debug)]
pub struct Instance {
    pub model: CanonicalPairModel,
    pub labels: LabelModel,
    pub spec: LossSpec,
    pub population_basis: CcaBasis,
    test_pool: Option<TestPool>,
}

#[derive(Clone, Debug)]
struct TestPool {
    samples: Vec<PairedSample>,
    optimal_x: f64,
    optimal_z: f64,
}

impl Instance {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let model = cfg.build_model()?;
        let labels = cfg.build_labels();
        let spec = cfg.loss_spec()?;
        let population_basis = model.basis()?;
        let test_pool = if cfg.loss == LossKind::Squared {
            None
        } else {
            let samples = sample_paired(
                &model,
                Some(&labels),
                cfg.test_pool_size,
                derive_seed(cfg.master_seed, &[TEST_POOL_STREAM]),
                cfg.boundedness,
            )?;
            // the planted weights are Bayes optimal on their own view when inside the ball
            let own_bound = if labels.view == View::X {
                cfg.bounds.b_w
            } else {
                cfg.bounds.b_v
            };
            let optimal = if labels.weights.norm() <= own_bound {
                let vals: Result<Vec<f64>> = samples
                    .iter()
                    .map(|s| {
                        loss_value(
                            &spec,
                            labels.weights.dot(s.view(labels.view)),
                            s.y.unwrap_or(0.0),
                        )
                    })
                    .collect();
                vals?.iter().sum::<f64>() / samples.len() as f64
            } else {
                f64::NAN
            };
            let (optimal_x, optimal_z) = match labels.view {
                View::X => (optimal, f64::NAN),
                _ => (f64::NAN, optimal),
            };
            Some(TestPool {
                samples,
                optimal_x,
                optimal_z,
            })
        };
        Ok(Self {
            model,
            labels,
            spec,
            population_basis,
            test_pool,
        })
    }

    pub fn oracle(&self) -> RiskOracle<'_> {
        match &self.test_pool {
            None => RiskOracle::Planted {
                model: &self.model,
                labels: &self.labels,
            },
            Some(p) => RiskOracle::TestPool {
                pool: &p.samples,
                optimal_loss_x: p.optimal_x,
                optimal_loss_z: p.optimal_z,
            },
        }
    }

    fn planted(&self, view: View) -> Result<PlantedRisk> {
        planted_risk(&self.model, &self.labels, view)
    }

    fn optimal_loss(&self, view: View, bound: f64) -> Result<f64> {
        match &self.test_pool {
            None => Ok(self.planted(view)?.optimal_loss(bound)),
            Some(p) => {
                let v = if view == View::X {
                    p.optimal_x
                } else {
                    p.optimal_z
                };
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Unsupported(
                        "optimal logistic loss is only known on the labels' own view".into(),
                    ))
                }
            }
        }
    }
}

/// One `(n, seed)` cell of a sweep. Absent values are written as empty CSV fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub pipeline: String,
    pub n: usize,
    pub seed: usize,
    pub excess_risk: Option<f64>,
    pub teacher_excess_risk: Option<f64>,
    pub agreement_sq: Option<f64>,
    pub reg_weight: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NSummary {
    pub n: usize,
    /// Cells that produced an excess risk.
    pub count: usize,
    pub failures: usize,
    /// Cells whose excess was at or below [`EXCESS_FLOOR`].
    pub floored: usize,
    pub mean: f64,
    pub median: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub pipeline: PipelineKind,
    /// Sorted by `(n, seed)`.
    pub rows: Vec<SweepRow>,
    pub summary: Vec<NSummary>,
    pub failures: usize,
    /// Messages of failed cells, in row order.
    pub failure_messages: Vec<String>,
}

/// Runs every `(n, seed)` cell of the configured pipeline.
pub fn run_rate_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let instance = Instance::new(cfg)?;
    let cells: Vec<(usize, usize)> = (0..cfg.n_grid.len())
        .flat_map(|i| (0..cfg.seeds).map(move |s| (i, s)))
        .collect();
    let run = || -> Vec<(SweepRow, Option<String>)> {
        cells
            .par_iter()
            .map(|&(ni, si)| run_row(cfg, &instance, ni, si))
            .collect()
    };
    let outcomes = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.workers)))?
            .install(run)
    } else {
        run()
    };
    let mut outcomes = outcomes;
    outcomes.sort_by_key(|(r, _)| (r.n, r.seed));
    let failure_messages: Vec<String> = outcomes.iter().filter_map(|(_, m)| m.clone()).collect();
    let failures = failure_messages.len();
    let total = outcomes.len();
    if failures * 10 > total {
        return Err(Error::TooManyFailures {
            failed: failures,
            total,
        });
    }
    let rows: Vec<SweepRow> = outcomes.into_iter().map(|(r, _)| r).collect();
    Ok(SweepResult {
        pipeline: cfg.pipeline,
        summary: summarize(&cfg.n_grid, &rows),
        rows,
        failures,
        failure_messages,
    })
}

/// Seed of cell `(n_index, seed_index)`.
pub fn cell_seed(master: u64, n_index: usize, seed_index: usize) -> u64 {
    derive_seed(master, &[n_index as u64, seed_index as u64])
}

fn run_row(
    cfg: &ExperimentConfig,
    instance: &Instance,
    n_index: usize,
    seed_index: usize,
) -> (SweepRow, Option<String>) {
    let n = cfg.n_grid[n_index];
    let start = Instant::now();
    let outcome = run_cell(
        cfg,
        instance,
        n,
        cell_seed(cfg.master_seed, n_index, seed_index),
    );
    let wall_ms = if cfg.record_wall_time {
        start.elapsed().as_millis() as u64
    } else {
        0
    };
    let mut row = SweepRow {
        pipeline: cfg.pipeline.name().to_string(),
        n,
        seed: seed_index,
        excess_risk: None,
        teacher_excess_risk: None,
        agreement_sq: None,
        reg_weight: None,
        wall_ms,
    };
    match outcome {
        Ok(r) => {
            let finite = |v: f64| v.is_finite().then_some(v);
            row.excess_risk = finite(r.student_excess_risk.mean).map(|v| v.max(EXCESS_FLOOR));
            row.teacher_excess_risk = r.teacher_excess_risk.and_then(|t| finite(t.mean));
            row.agreement_sq = r.agreement_s_squared.and_then(finite);
            row.reg_weight = finite(r.regularization_weight_used);
            let msg = row
                .excess_risk
                .is_none()
                .then(|| format!("n={n} seed={seed_index}: excess risk is not finite"));
            (row, msg)
        }
        Err(e) => (row, Some(format!("n={n} seed={seed_index}: {e}"))),
    }
}

fn empirical_loss(spec: &LossSpec, data: &LabeledData, w: &Predictor) -> Result<f64> {
    Ok(EmpiricalRisk::new(*spec, data)?.value(&w.weights))
}

/// Runs one pipeline on fresh data drawn from `seed`.
pub fn run_cell(
    cfg: &ExperimentConfig,
    instance: &Instance,
    n: usize,
    seed: u64,
) -> Result<TransferResult> {
    let spec = instance.spec;
    let (b_w, b_v) = (cfg.bounds.b_w, cfg.bounds.b_v);
    let data = sample_paired(
        &instance.model,
        Some(&instance.labels),
        n,
        derive_seed(seed, &[STUDENT_STREAM]),
        cfg.boundedness,
    )?;
    let xs = LabeledData::from_pairs(&data, View::X)?;
    let oracle = instance.oracle();
    let pool = match cfg.agreement {
        AgreementMode::Population => None,
        AgreementMode::Pool(m) => Some(sample_paired(
            &instance.model,
            None,
            m,
            derive_seed(seed, &[POOL_STREAM]),
            cfg.boundedness,
        )?),
    };
    let fitted;
    let (basis, source) = match &pool {
        None => (
            &instance.population_basis,
            AgreementSource::Population(&instance.population_basis),
        ),
        Some(p) => {
            let cov = estimate_covariances(p, Centering::None)?;
            fitted = fit_cca(&cov, cov.default_ridge())?;
            (&fitted, AgreementSource::Samples(p))
        }
    };
    let mut settings = StudentSettings {
        loss: spec,
        radius: cfg.radius_x(),
        student_bound: b_w,
        s: 1.0,
        l_star: 0.0,
        solver: cfg.solver,
    };

    if cfg.pipeline == PipelineKind::Plain {
        return plain_student(&xs, &settings, &oracle);
    }
    if cfg.pipeline == PipelineKind::Coreg {
        let l_star = match cfg.l_star_mode {
            LStarMode::Planted => {
                instance.optimal_loss(View::X, b_w)? + instance.optimal_loss(View::Z, b_v)?
            }
            LStarMode::Plugin => {
                let zs = LabeledData::from_pairs(&data, View::Z)?;
                let w = constrained_erm(&xs, &spec, b_w, &cfg.solver)?;
                let v = constrained_erm(&zs, &spec, b_v, &cfg.solver)?;
                empirical_loss(&spec, &xs, &w)? + empirical_loss(&spec, &zs, &v)?
            }
        };
        let s = teacher_distance(cfg, instance, None)?;
        let coreg = CoregSettings {
            loss: spec,
            radius: cfg.radius_x().max(crate::synth::radius(cfg.model.d_z)),
            b_w,
            b_v,
            s,
            l_star,
            lambda1: basis.top_correlation(),
            solver: cfg.solver,
        };
        return simultaneous_coregularized(&data, source, &coreg, &oracle);
    }

    let teacher_view = if cfg.pipeline == PipelineKind::Distill {
        View::X
    } else {
        View::Z
    };
    let teacher_data = sample_paired(
        &instance.model,
        Some(&instance.labels),
        cfg.teacher_n,
        derive_seed(seed, &[TEACHER_STREAM]),
        cfg.boundedness,
    )?;
    let ts = LabeledData::from_pairs(&teacher_data, teacher_view)?;
    let teacher = train_teacher(&ts, teacher_view, &spec, b_v, &cfg.solver)?;
    settings.l_star = match cfg.l_star_mode {
        LStarMode::Planted => instance.optimal_loss(View::X, b_w)?,
        LStarMode::Plugin => empirical_loss(&spec, &ts, &teacher)?,
    };
    settings.s = teacher_distance(cfg, instance, Some(&teacher))?;
    match cfg.pipeline {
        PipelineKind::Distill => single_view_distill(&xs, &teacher, &settings, &oracle),
        PipelineKind::LupiTcca => multiview_distill_tcca(&xs, &teacher, basis, &settings, &oracle),
        PipelineKind::LupiExpectation => {
            multiview_distill_expectation(&xs, source, &teacher, &settings, &oracle)
        }
        PipelineKind::Plain | PipelineKind::Coreg => unreachable!("handled above"),
    }
}

/// Teacher distance `S` under the configured mode; `teacher` is `None` for co-regularization.
fn teacher_distance(
    cfg: &ExperimentConfig,
    instance: &Instance,
    teacher: Option<&Predictor>,
) -> Result<f64> {
    let (b_w, b_v) = (cfg.bounds.b_w, cfg.bounds.b_v);
    let s_squared = match cfg.s_mode {
        SMode::Explicit(s) => return Ok(s),
        mode => {
            let basis = &instance.population_basis;
            let risk_x = instance.planted(View::X)?;
            let w_star = risk_x.optimum_in_ball(b_w);
            let l_w = risk_x.optimal_loss(b_w);
            let sigma = instance.spec.sigma;
            let residual = {
                let l = basis.bottom_correlation_z();
                (1.0 - l * l) * b_v * b_v
            };
            match (cfg.pipeline, mode, teacher) {
                (PipelineKind::Distill, SMode::Oracle, Some(t)) => {
                    (&w_star - &t.weights).norm_squared()
                }
                (PipelineKind::Distill, _, Some(t)) => {
                    let l_v = risk_x.optimal_loss(b_v);
                    let eps = risk_x.risk(&t.weights)? - l_v;
                    4.0 * (l_w - l_v + eps) / sigma
                }
                (PipelineKind::LupiTcca, SMode::Oracle, Some(t)) => {
                    (&w_star - basis.t_cca(&t.weights)?).norm_squared()
                }
                (PipelineKind::LupiTcca, _, Some(t)) => {
                    2.0 * (risk_x.risk(&basis.t_cca(&t.weights)?)? - l_w) / sigma
                }
                (PipelineKind::LupiExpectation, SMode::Oracle, Some(t)) => {
                    basis.agreement_quadratic(&w_star, &t.weights)?.total
                }
                (PipelineKind::LupiExpectation, _, Some(t)) => {
                    2.0 * (risk_x.risk(&basis.t_cca(&t.weights)?)? - l_w) / sigma + residual
                }
                (PipelineKind::Coreg, mode, None) => {
                    let v_star = instance.planted(View::Z)?.optimum_in_ball(b_v);
                    if mode == SMode::Oracle {
                        basis.agreement_quadratic(&w_star, &v_star)?.total
                    } else {
                        2.0 * (risk_x.risk(&basis.t_cca(&v_star)?)? - l_w) / sigma + residual
                    }
                }
                _ => return Err(Error::Config("S is not defined for this pipeline".into())),
            }
        }
    };
    Ok(s_squared.max(0.0).sqrt().max(S_FLOOR))
}

fn summarize(n_grid: &[usize], rows: &[SweepRow]) -> Vec<NSummary> {
    n_grid
        .iter()
        .map(|&n| {
            let cell: Vec<&SweepRow> = rows.iter().filter(|r| r.n == n).collect();
            let values: Vec<f64> = cell.iter().filter_map(|r| r.excess_risk).collect();
            let est = MeanEstimate::from_values(values.iter().copied());
            NSummary {
                n,
                count: values.len(),
                failures: cell.len() - values.len(),
                floored: values.iter().filter(|&&v| v <= EXCESS_FLOOR).count(),
                mean: est.mean,
                median: median(&values),
                std_error: est.std_error,
            }
        })
        .collect()
}

/// Least-squares line through `(log n, log median excess)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_range_used: (usize, usize),
    pub points_used: usize,
    /// Grid points left out because their median was floored or missing.
    pub excluded_n: Vec<usize>,
}

pub fn fit_rate(result: &SweepResult) -> Result<RateFit> {
    let mut used = Vec::new();
    let mut excluded_n = Vec::new();
    for s in &result.summary {
        if s.median.is_finite() && s.median > EXCESS_FLOOR {
            used.push((s.n, s.median));
        } else {
            excluded_n.push(s.n);
        }
    }
    if used.len() < 3 {
        return Err(Error::IllPosed(format!(
            "a rate fit needs at least 3 grid points with positive median excess risk; {} usable, excluded n = {:?}",
            used.len(),
            excluded_n
        )));
    }
    let xs: Vec<f64> = used.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = used.iter().map(|(_, m)| m.ln()).collect();
    let (slope, intercept, r_squared) = least_squares_line(&xs, &ys);
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        n_range_used: (used[0].0, used[used.len() - 1].0),
        points_used: used.len(),
        excluded_n,
    })
}

/// Ordinary least squares `y = slope x + intercept` and its `R^2`.
pub fn least_squares_line(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    (slope, intercept, r_squared)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub n: usize,
    pub paired: usize,
    /// Seeds where A's excess is strictly below B's.
    pub wins: usize,
    pub win_rate: f64,
    pub median_a: f64,
    pub median_b: f64,
    /// `median_a / median_b`.
    pub median_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub pipeline_a: String,
    pub pipeline_b: String,
    pub rows: Vec<ComparisonRow>,
}

/// Runs two sweeps on identical cells and compares them seed by seed.
pub fn run_comparison(cfg_a: &ExperimentConfig, cfg_b: &ExperimentConfig) -> Result<Comparison> {
    if cfg_a.n_grid != cfg_b.n_grid || cfg_a.seeds != cfg_b.seeds {
        return Err(Error::Config(
            "compared configs must share n_grid and seeds".into(),
        ));
    }
    if cfg_a.master_seed != cfg_b.master_seed {
        return Err(Error::Config(
            "compared configs must share master_seed".into(),
        ));
    }
    let a = run_rate_sweep(cfg_a)?;
    let b = run_rate_sweep(cfg_b)?;
    compare_results(&a, &b)
}

/// Pairs rows of two sweeps by `(n, seed)`.
pub fn compare_results(a: &SweepResult, b: &SweepResult) -> Result<Comparison> {
    let key = |r: &SweepRow| (r.n, r.seed);
    if a.rows.iter().map(key).ne(b.rows.iter().map(key)) {
        return Err(Error::Config(
            "sweeps do not cover the same (n, seed) cells".into(),
        ));
    }
    let mut rows = Vec::new();
    for s in &a.summary {
        let pairs: Vec<(f64, f64)> = a
            .rows
            .iter()
            .zip(&b.rows)
            .filter(|(ra, _)| ra.n == s.n)
            .filter_map(|(ra, rb)| Some((ra.excess_risk?, rb.excess_risk?)))
            .collect();
        let wins = pairs.iter().filter(|(x, y)| x < y).count();
        let ea: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let eb: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let (median_a, median_b) = (median(&ea), median(&eb));
        rows.push(ComparisonRow {
            n: s.n,
            paired: pairs.len(),
            wins,
            win_rate: if pairs.is_empty() {
                f64::NAN
            } else {
                wins as f64 / pairs.len() as f64
            },
            median_a,
            median_b,
            median_ratio: median_a / median_b,
        });
    }
    Ok(Comparison {
        pipeline_a: a.pipeline.name().into(),
        pipeline_b: b.pipeline.name().into(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(excess: impl Fn(f64) -> f64) -> SweepResult {
        let grid = [64usize, 128, 256, 512, 1024];
        let rows: Vec<SweepRow> = grid
            .iter()
            .map(|&n| SweepRow {
                pipeline: "plain".into(),
                n,
                seed: 0,
                excess_risk: Some(excess(n as f64)),
                teacher_excess_risk: None,
                agreement_sq: None,
                reg_weight: None,
                wall_ms: 0,
            })
            .collect();
        SweepResult {
            pipeline: PipelineKind::Plain,
            summary: summarize(&grid, &rows),
            rows,
            failures: 0,
            failure_messages: vec![],
        }
    }

    #[test]
    fn exact_power_laws() {
        let fit = fit_rate(&synthetic(|n| 4.0 / n)).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        let fit = fit_rate(&synthetic(|n| 2.0 / n.sqrt())).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert_eq!(fit.n_range_used, (64, 1024));
    }

    #[test]
    fn floored_points_are_excluded() {
        let r = synthetic(|n| if n > 150.0 { EXCESS_FLOOR } else { 1.0 / n });
        match fit_rate(&r) {
            Err(Error::IllPosed(m)) => assert!(m.contains("[256, 512, 1024]")),
            other => panic!("expected an error, got {other:?}"),
        }
        let r = synthetic(|n| if n > 600.0 { EXCESS_FLOOR } else { 1.0 / n });
        let fit = fit_rate(&r).unwrap();
        assert_eq!(fit.excluded_n, vec![1024]);
        assert_eq!(fit.points_used, 4);
    }

    #[test]
    fn self_comparison_has_no_strict_wins() {
        let r = synthetic(|n| 1.0 / n);
        let c = compare_results(&r, &r).unwrap();
        assert!(c
            .rows
            .iter()
            .all(|row| row.wins == 0 && row.median_ratio == 1.0));
    }
}
