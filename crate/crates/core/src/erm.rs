//! Constrained and regularized empirical risk minimization for linear predictors.
//!
//! Every solver is projected gradient descent started at zero. Squared-loss
//! objectives are evaluated through cached second moments, so an iteration
//! costs `O(d^2)` regardless of the sample count.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cca::CcaBasis;
use crate::data::{paired_dims, LabeledData, PairedSample, View};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{asymmetry, max_eigenvalue, min_eigenvalue, symmetrize};
use crate::losses::{loss_derivative, loss_value, LossKind, LossSpec};

/// A linear predictor on one view (or on the concatenation of both).
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    pub weights: DVector<f64>,
    pub view: View,
    pub norm_bound: Option<f64>,
}

impl Predictor {
    pub fn new(weights: DVector<f64>, view: View, norm_bound: Option<f64>) -> Self {
        Self {
            weights,
            view,
            norm_bound,
        }
    }

    pub fn in_view(mut self, view: View) -> Self {
        self.view = view;
        self
    }

    pub fn decision(&self, x: &DVector<f64>) -> f64 {
        self.weights.dot(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RegularizerForm {
    /// `nu/2 ||w - c||^2`.
    Scalar(f64),
    /// `1/2 (w - c)^T Q (w - c)` with `Q` symmetric PSD.
    Matrix(DMatrix<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticRegularizer {
    pub center: DVector<f64>,
    pub form: RegularizerForm,
}

impl QuadraticRegularizer {
    pub fn scalar(nu: f64, center: DVector<f64>) -> Result<Self> {
        if !(nu >= 0.0) || !nu.is_finite() {
            return Err(Error::InvalidInput(format!(
                "regularization weight must be finite and nonnegative, got {nu}"
            )));
        }
        Ok(Self {
            center,
            form: RegularizerForm::Scalar(nu),
        })
    }

    /// Tikhonov penalty `nu/2 ||w||^2`.
    pub fn ridge(nu: f64, dim: usize) -> Result<Self> {
        Self::scalar(nu, DVector::zeros(dim))
    }

    pub fn matrix(q: DMatrix<f64>, center: DVector<f64>) -> Result<Self> {
        check_dim("regularizer rows", center.len(), q.nrows())?;
        check_dim("regularizer columns", center.len(), q.ncols())?;
        let scale = q.amax().max(1.0);
        if asymmetry(&q) > 1e-10 * scale {
            return Err(Error::InvalidInput(
                "regularizer matrix is not symmetric".into(),
            ));
        }
        let low = min_eigenvalue(&q);
        if low < -1e-10 * scale {
            return Err(Error::InvalidInput(format!(
                "regularizer matrix is not positive semidefinite (eigenvalue {low:.3e})"
            )));
        }
        Ok(Self {
            center,
            form: RegularizerForm::Matrix(symmetrize(&q)),
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn value(&self, w: &DVector<f64>) -> f64 {
        let diff = w - &self.center;
        match &self.form {
            RegularizerForm::Scalar(nu) => 0.5 * nu * diff.norm_squared(),
            RegularizerForm::Matrix(q) => 0.5 * diff.dot(&(q * &diff)),
        }
    }

    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let diff = w - &self.center;
        match &self.form {
            RegularizerForm::Scalar(nu) => diff * *nu,
            RegularizerForm::Matrix(q) => q * diff,
        }
    }

    pub fn max_curvature(&self) -> f64 {
        match &self.form {
            RegularizerForm::Scalar(nu) => *nu,
            RegularizerForm::Matrix(q) => max_eigenvalue(q).max(0.0),
        }
    }

    pub fn min_curvature(&self) -> f64 {
        match &self.form {
            RegularizerForm::Scalar(nu) => *nu,
            RegularizerForm::Matrix(q) => min_eigenvalue(q),
        }
    }

    /// Strict convexity, judged relative to the largest curvature.
    pub fn is_strictly_convex(&self) -> bool {
        let top = self.max_curvature();
        top > 0.0 && self.min_curvature() > 1e-12 * top
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// Step `1/L` with `L` an upper bound on the objective's smoothness.
    #[default]
    FixedInverseSmoothness,
    /// Step halving until the secant curvature along the projected step is below `1/step`.
    Backtracking,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Bound on `||w - P(w - grad/L)||` at termination.
    pub gradient_tolerance: f64,
    pub step_rule: StepRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200_000,
            gradient_tolerance: 1e-10,
            step_rule: StepRule::FixedInverseSmoothness,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput(
                "max_iterations must be positive".into(),
            ));
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::InvalidInput(format!(
                "gradient_tolerance must be positive, got {}",
                self.gradient_tolerance
            )));
        }
        Ok(())
    }
}

/// A differentiable convex objective with a known smoothness bound.
pub trait SmoothObjective {
    fn dim(&self) -> usize;
    fn value(&self, w: &DVector<f64>) -> f64;
    fn gradient(&self, w: &DVector<f64>) -> DVector<f64>;
    /// Upper bound on the largest Hessian eigenvalue.
    fn smoothness(&self) -> f64;
}

/// Average loss of a linear predictor over a labeled sample.
#[derive(Clone, Debug)]
pub struct EmpiricalRisk<'a> {
    spec: LossSpec,
    data: &'a LabeledData,
    moments: Option<SquaredMoments>,
    curvature: f64,
}

#[derive(Clone, Debug)]
struct SquaredMoments {
    second: DMatrix<f64>,
    cross: DVector<f64>,
    target_energy: f64,
}

impl<'a> EmpiricalRisk<'a> {
    pub fn new(spec: LossSpec, data: &'a LabeledData) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidInput(
                "empirical risk needs at least one sample".into(),
            ));
        }
        if spec.kind == LossKind::Logistic {
            if let Some(&bad) = data.targets.iter().find(|&&y| y != 1.0 && y != -1.0) {
                return Err(Error::InvalidTarget(bad));
            }
        }
        let second = data.second_moment();
        let curvature = spec.beta * max_eigenvalue(&second).max(0.0);
        let moments = (spec.kind == LossKind::Squared).then(|| {
            let n = data.len() as f64;
            SquaredMoments {
                cross: data.features.tr_mul(&data.targets) / n,
                target_energy: 0.5 * data.targets.norm_squared() / n,
                second,
            }
        });
        Ok(Self {
            spec,
            data,
            moments,
            curvature,
        })
    }

    pub fn spec(&self) -> &LossSpec {
        &self.spec
    }
}

impl SmoothObjective for EmpiricalRisk<'_> {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn value(&self, w: &DVector<f64>) -> f64 {
        if let Some(m) = &self.moments {
            return (0.5 * w.dot(&(&m.second * w)) - m.cross.dot(w) + m.target_energy).max(0.0);
        }
        let scores = &self.data.features * w;
        let total: f64 = scores
            .iter()
            .zip(self.data.targets.iter())
            .map(|(&a, &b)| loss_value(&self.spec, a, b).expect("targets validated"))
            .sum();
        total / self.data.len() as f64
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        if let Some(m) = &self.moments {
            return &m.second * w - &m.cross;
        }
        let scores = &self.data.features * w;
        let slopes = DVector::from_iterator(
            scores.len(),
            scores
                .iter()
                .zip(self.data.targets.iter())
                .map(|(&a, &b)| loss_derivative(&self.spec, a, b).expect("targets validated")),
        );
        self.data.features.tr_mul(&slopes) / self.data.len() as f64
    }

    fn smoothness(&self) -> f64 {
        self.curvature
    }
}

/// Sum of empirical risks on disjoint coordinate blocks plus a quadratic penalty.
pub struct PenalizedObjective<'a> {
    blocks: Vec<(usize, EmpiricalRisk<'a>)>,
    regularizer: Option<QuadraticRegularizer>,
    dim: usize,
    smoothness: f64,
}

impl<'a> PenalizedObjective<'a> {
    pub fn new(
        blocks: Vec<(usize, EmpiricalRisk<'a>)>,
        regularizer: Option<QuadraticRegularizer>,
    ) -> Result<Self> {
        let dim = blocks.iter().map(|(o, b)| o + b.dim()).max().unwrap_or(0);
        let mut covered = vec![false; dim];
        for (offset, block) in &blocks {
            for c in &mut covered[*offset..offset + block.dim()] {
                if *c {
                    return Err(Error::InvalidInput("loss blocks overlap".into()));
                }
                *c = true;
            }
        }
        if let Some(reg) = &regularizer {
            check_dim("regularizer", dim, reg.dim())?;
        }
        // blocks are disjoint, so the loss Hessian is block diagonal
        let loss_smoothness = blocks
            .iter()
            .map(|(_, b)| b.smoothness())
            .fold(0.0, f64::max);
        let reg_smoothness = regularizer.as_ref().map_or(0.0, |r| r.max_curvature());
        Ok(Self {
            blocks,
            regularizer,
            dim,
            smoothness: loss_smoothness + reg_smoothness,
        })
    }

    pub fn single(
        risk: EmpiricalRisk<'a>,
        regularizer: Option<QuadraticRegularizer>,
    ) -> Result<Self> {
        Self::new(vec![(0, risk)], regularizer)
    }
}

impl SmoothObjective for PenalizedObjective<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, w: &DVector<f64>) -> f64 {
        let losses: f64 = self
            .blocks
            .iter()
            .map(|(o, b)| b.value(&w.rows(*o, b.dim()).into_owned()))
            .sum();
        losses + self.regularizer.as_ref().map_or(0.0, |r| r.value(w))
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut g = match &self.regularizer {
            Some(r) => r.gradient(w),
            None => DVector::zeros(self.dim),
        };
        for (o, b) in &self.blocks {
            let part = b.gradient(&w.rows(*o, b.dim()).into_owned());
            let mut rows = g.rows_mut(*o, b.dim());
            rows += part;
        }
        g
    }

    fn smoothness(&self) -> f64 {
        self.smoothness
    }
}

/// Radial projection onto `{w : ||w|| <= bound}`.
pub fn project_to_ball(w: &DVector<f64>, bound: f64) -> DVector<f64> {
    let norm = w.norm();
    if norm <= bound {
        w.clone()
    } else {
        w * (bound / norm)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinimizeOutcome {
    pub point: DVector<f64>,
    pub iterations: usize,
    /// `||w - P(w - grad/L)||` at the returned point.
    pub step_norm: f64,
    pub objective: f64,
}

/// Projected gradient descent from the origin.
pub fn minimize<O: SmoothObjective + ?Sized>(
    objective: &O,
    bound: Option<f64>,
    cfg: &SolverConfig,
) -> Result<MinimizeOutcome> {
    minimize_impl(objective, bound, cfg, None)
}

/// As [`minimize`], also returning the objective value after every iteration.
pub fn minimize_traced<O: SmoothObjective + ?Sized>(
    objective: &O,
    bound: Option<f64>,
    cfg: &SolverConfig,
) -> Result<(MinimizeOutcome, Vec<f64>)> {
    let mut trace = Vec::new();
    let out = minimize_impl(objective, bound, cfg, Some(&mut trace))?;
    Ok((out, trace))
}

fn minimize_impl<O: SmoothObjective + ?Sized>(
    objective: &O,
    bound: Option<f64>,
    cfg: &SolverConfig,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<MinimizeOutcome> {
    cfg.validate()?;
    if let Some(b) = bound {
        if !(b > 0.0) {
            return Err(Error::InvalidInput(format!(
                "norm bound must be positive, got {b}"
            )));
        }
    }
    let project = |w: DVector<f64>| match bound {
        Some(b) => project_to_ball(&w, b),
        None => w,
    };
    let lipschitz = objective.smoothness().max(1e-12);
    let mut w = DVector::zeros(objective.dim());
    let mut value = objective.value(&w);
    let mut step = 1.0 / lipschitz;
    let mut step_norm = f64::INFINITY;
    for iteration in 0..cfg.max_iterations {
        let g = objective.gradient(&w);
        let mapped = project(&w - &g / lipschitz);
        step_norm = (&w - &mapped).norm();
        if step_norm <= cfg.gradient_tolerance {
            return Ok(MinimizeOutcome {
                point: w,
                iterations: iteration,
                step_norm,
                objective: value,
            });
        }
        let (next, next_value) = match cfg.step_rule {
            StepRule::FixedInverseSmoothness => {
                let v = objective.value(&mapped);
                (mapped, v)
            }
            StepRule::Backtracking => {
                // secant curvature test; unlike a value-based Armijo test it
                // stays reliable once objective differences reach rounding level
                step *= 2.0;
                loop {
                    let candidate = project(&w - &g * step);
                    let d = &candidate - &w;
                    let dd = d.norm_squared();
                    let floor = step <= 1.0 / lipschitz;
                    if dd == 0.0 || floor {
                        let v = objective.value(&candidate);
                        break (candidate, v);
                    }
                    let curvature = (objective.gradient(&candidate) - &g).dot(&d) / dd;
                    if curvature * step <= 1.0 {
                        let v = objective.value(&candidate);
                        break (candidate, v);
                    }
                    step = (step * 0.5).max(1.0 / lipschitz);
                }
            }
        };
        if !next_value.is_finite() {
            return Err(Error::Numerical(format!(
                "objective became non-finite at iteration {iteration}"
            )));
        }
        w = next;
        value = next_value;
        if let Some(t) = trace.as_deref_mut() {
            t.push(value);
        }
    }
    Err(Error::Convergence {
        iterations: cfg.max_iterations,
        gradient_norm: step_norm,
    })
}

/// `argmin_{||w|| <= B} (1/n) sum l(w'x_i, y_i)`.
pub fn constrained_erm(
    data: &LabeledData,
    spec: &LossSpec,
    bound: f64,
    cfg: &SolverConfig,
) -> Result<Predictor> {
    if !(bound > 0.0) {
        return Err(Error::InvalidInput(format!(
            "norm bound must be positive, got {bound}"
        )));
    }
    let risk = EmpiricalRisk::new(*spec, data)?;
    let out = minimize(&risk, Some(bound), cfg)?;
    Ok(Predictor::new(out.point, View::X, Some(bound)))
}

/// `argmin (1/n) sum l(w'x_i, y_i) + reg(w)`, optionally over a ball.
pub fn regularized_erm(
    data: &LabeledData,
    spec: &LossSpec,
    reg: &QuadraticRegularizer,
    bound: Option<f64>,
    cfg: &SolverConfig,
) -> Result<Predictor> {
    check_dim("regularizer", data.dim(), reg.dim())?;
    if bound.is_none() && !reg.is_strictly_convex() {
        return Err(Error::IllPosed(
            "regularizer is not strictly convex and no norm bound was given".into(),
        ));
    }
    let risk = EmpiricalRisk::new(*spec, data)?;
    let objective = PenalizedObjective::single(risk, Some(reg.clone()))?;
    let out = minimize(&objective, bound, cfg)?;
    Ok(Predictor::new(out.point, View::X, bound))
}

fn optimistic_weight(beta: f64, radius: f64, l_star: f64, scale: f64, n: usize) -> f64 {
    let n = n as f64;
    let br2 = beta * radius * radius;
    8.0 * br2 / n + (64.0 * br2 * br2 / (n * n) + 16.0 * br2 * l_star / (n * scale * scale)).sqrt()
}

/// Tikhonov weight balancing estimation error against the norm bound `B`.
pub fn gamma_lemma1(beta: f64, radius: f64, l_star: f64, bound: f64, n: usize) -> f64 {
    optimistic_weight(beta, radius, l_star, bound, n)
}

/// Distillation weight: the Tikhonov formula with `B` replaced by the teacher distance `S`.
pub fn nu_theorem1(beta: f64, radius: f64, l_w_star: f64, s: f64, n: usize) -> f64 {
    optimistic_weight(beta, radius, l_w_star, s, n)
}

/// Regularization weights of simultaneous two-view training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultitaskParams {
    pub gamma: f64,
    pub nu: f64,
    pub d_squared: f64,
    pub alpha: f64,
    pub delta: f64,
    pub beta_prime: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn multitask_params(
    beta: f64,
    radius: f64,
    b_w: f64,
    b_v: f64,
    s: f64,
    lambda1: f64,
    l_star: f64,
    n: usize,
) -> Result<MultitaskParams> {
    if !(beta > 0.0 && radius > 0.0 && b_w >= 0.0 && b_v >= 0.0 && l_star >= 0.0 && n > 0) {
        return Err(Error::InvalidInput(format!(
            "invalid co-regularization inputs (beta={beta}, R={radius}, B_w={b_w}, B_v={b_v}, L*={l_star}, n={n})"
        )));
    }
    if !(0.0..=1.0).contains(&lambda1) {
        return Err(Error::InvalidInput(format!(
            "lambda_1 must lie in [0, 1], got {lambda1}"
        )));
    }
    let b2 = b_w * b_w + b_v * b_v;
    let s2 = s * s;
    if !(b2 > 0.0) {
        return Err(Error::InvalidInput(
            "B_w and B_v cannot both be zero".into(),
        ));
    }
    if !(s > 0.0) {
        return Err(Error::SingularParameters(format!(
            "agreement bound S must be positive (got {s}); nu = Delta / S^2 is undefined"
        )));
    }
    let denom = (b2 + s2).powi(2) - lambda1 * lambda1 * b2 * b2;
    if !(denom > 0.0) {
        return Err(Error::SingularParameters(format!(
            "(B^2 + S^2)^2 - lambda_1^2 B^4 = {denom:.3e} is not positive"
        )));
    }
    let d_squared = b2 * s2 * (b2 + s2) / denom;
    let alpha = beta * radius * radius * d_squared;
    let nf = n as f64;
    let delta =
        8.0 * alpha / nf + (64.0 * alpha * alpha / (nf * nf) + 8.0 * alpha * l_star / nf).sqrt();
    let gamma = delta / b2;
    let nu = delta / s2;
    let total = gamma + nu;
    let beta_prime = total * beta * radius * radius / (total * total - lambda1 * lambda1 * nu * nu);
    Ok(MultitaskParams {
        gamma,
        nu,
        d_squared,
        alpha,
        delta,
        beta_prime,
    })
}

/// How the expected agreement `E(w'x - v'z)^2` is evaluated.
#[derive(Clone, Copy, Debug)]
pub enum AgreementSource<'a> {
    /// Exact quadratic from the second moments encoded in a CCA basis.
    Population(&'a CcaBasis),
    /// Plug-in average over unlabeled paired samples.
    Samples(&'a [PairedSample]),
}

/// Matrix `A` with `[w; v]^T A [w; v]` equal to the agreement under `source`.
pub fn agreement_matrix(source: AgreementSource<'_>) -> Result<DMatrix<f64>> {
    match source {
        AgreementSource::Population(basis) => Ok(basis.agreement_form()),
        AgreementSource::Samples(pool) => {
            if pool.is_empty() {
                return Err(Error::InvalidInput("agreement pool is empty".into()));
            }
            let (dx, dz) = paired_dims(pool)?;
            let mut a = DMatrix::zeros(dx + dz, dx + dz);
            let mut joint = DVector::zeros(dx + dz);
            for s in pool {
                joint.rows_mut(0, dx).copy_from(&s.x);
                joint.rows_mut(dx, dz).copy_from(&(-&s.z));
                a.ger(1.0, &joint, &joint, 1.0);
            }
            Ok(a / pool.len() as f64)
        }
    }
}

/// Joint minimizer of both views' empirical risks, a Tikhonov term and the agreement penalty:
/// `L_x(w) + L_z(v) + gamma/2 (||w||^2 + ||v||^2) + nu/2 E(w'x - v'z)^2`.
pub fn joint_coregularized_erm(
    data: &[PairedSample],
    spec: &LossSpec,
    params: &MultitaskParams,
    agreement: AgreementSource<'_>,
    cfg: &SolverConfig,
) -> Result<(Predictor, Predictor)> {
    let (dx, dz) = paired_dims(data)?;
    if !(params.gamma >= 0.0 && params.nu >= 0.0) || params.gamma + params.nu <= 0.0 {
        return Err(Error::SingularParameters(format!(
            "need gamma, nu >= 0 with gamma + nu > 0 (gamma={}, nu={})",
            params.gamma, params.nu
        )));
    }
    let a = agreement_matrix(agreement)?;
    check_dim("agreement matrix", dx + dz, a.nrows())?;
    let xs = LabeledData::from_pairs(data, View::X)?;
    let zs = LabeledData::from_pairs(data, View::Z)?;
    let q = DMatrix::identity(dx + dz, dx + dz) * params.gamma + a * params.nu;
    let reg = QuadraticRegularizer::matrix(q, DVector::zeros(dx + dz))?;
    let objective = PenalizedObjective::new(
        vec![
            (0, EmpiricalRisk::new(*spec, &xs)?),
            (dx, EmpiricalRisk::new(*spec, &zs)?),
        ],
        Some(reg),
    )?;
    let p = minimize(&objective, None, cfg)?.point;
    Ok((
        Predictor::new(p.rows(0, dx).into_owned(), View::X, None),
        Predictor::new(p.rows(dx, dz).into_owned(), View::Z, None),
    ))
}

/// Value of the co-regularized objective at `(w, v)`.
pub fn joint_coregularized_objective(
    data: &[PairedSample],
    spec: &LossSpec,
    params: &MultitaskParams,
    agreement: AgreementSource<'_>,
    w: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<f64> {
    let (dx, dz) = paired_dims(data)?;
    check_dim("view-x predictor", dx, w.len())?;
    check_dim("view-z predictor", dz, v.len())?;
    let xs = LabeledData::from_pairs(data, View::X)?;
    let zs = LabeledData::from_pairs(data, View::Z)?;
    let a = agreement_matrix(agreement)?;
    let mut p = DVector::zeros(dx + dz);
    p.rows_mut(0, dx).copy_from(w);
    p.rows_mut(dx, dz).copy_from(v);
    Ok(EmpiricalRisk::new(*spec, &xs)?.value(w)
        + EmpiricalRisk::new(*spec, &zs)?.value(v)
        + 0.5 * params.gamma * p.norm_squared()
        + 0.5 * params.nu * p.dot(&(a * &p)))
}
