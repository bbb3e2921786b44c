//! Teacher-student pipelines and their excess-risk evaluation.
//!
//! Every student is a regularized ERM whose penalty pulls it towards the
//! teacher: directly (same view), through `T_CCA` (other view), through the
//! expected disagreement of decision values (other view, no CCA needed), or by
//! training both views at once with an agreement penalty.

use nalgebra::DVector;

use crate::cca::CcaBasis;
use crate::data::{LabeledData, PairedSample, View};
use crate::erm::{
    agreement_matrix, constrained_erm, joint_coregularized_erm, multitask_params, nu_theorem1,
    regularized_erm, AgreementSource, MultitaskParams, Predictor, QuadraticRegularizer,
    SolverConfig,
};
use crate::error::{check_dim, Error, Result};
use crate::linalg::pinv_solve_psd;
use crate::losses::{loss_value, LossKind, LossSpec};
use crate::stats::MeanEstimate;
use crate::synth::{planted_risk, CanonicalPairModel, LabelKind, LabelModel};

/// Outcome of one pipeline run.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferResult {
    pub student: Predictor,
    /// Absent for the plain baseline. For co-regularization this is the view-z predictor.
    pub teacher: Option<Predictor>,
    /// For co-regularization, the joint excess of both predictors.
    pub student_excess_risk: MeanEstimate,
    pub teacher_excess_risk: Option<MeanEstimate>,
    /// Measured disagreement between student and teacher decision values.
    pub agreement_s_squared: Option<f64>,
    pub regularization_weight_used: f64,
}

/// Knobs shared by the single-student pipelines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StudentSettings {
    pub loss: LossSpec,
    /// Bound `R` on feature norms used in the weight formulas.
    pub radius: f64,
    /// Ball radius `B_w` of the student class.
    pub student_bound: f64,
    /// Assumed teacher-to-optimum distance `S`.
    pub s: f64,
    /// Optimal (or plug-in) loss `L_w*` of the student class.
    pub l_star: f64,
    pub solver: SolverConfig,
}

impl StudentSettings {
    fn nu(&self, n: usize) -> Result<f64> {
        if !(self.s > 0.0) {
            return Err(Error::InvalidInput(format!(
                "S must be positive, got {}",
                self.s
            )));
        }
        Ok(nu_theorem1(
            self.loss.beta,
            self.radius,
            self.l_star.max(0.0),
            self.s,
            n,
        ))
    }
}

/// Knobs of simultaneous co-regularized training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoregSettings {
    pub loss: LossSpec,
    pub radius: f64,
    pub b_w: f64,
    pub b_v: f64,
    pub s: f64,
    /// Combined optimal loss `L_w* + L_v*`.
    pub l_star: f64,
    /// Top canonical correlation `lambda_1`.
    pub lambda1: f64,
    pub solver: SolverConfig,
}

/// Where the true risk of a predictor comes from.
#[derive(Clone, Copy, Debug)]
pub enum RiskOracle<'a> {
    /// Closed form under identity covariance and regression labels.
    Planted {
        model: &'a CanonicalPairModel,
        labels: &'a LabelModel,
    },
    /// Average loss on a labeled held-out pool minus the supplied optimal losses.
    TestPool {
        pool: &'a [PairedSample],
        optimal_loss_x: f64,
        optimal_loss_z: f64,
    },
}

/// `L(w) - min_{||u|| <= class_bound} L(u)` for a single-view predictor.
pub fn excess_risk(
    predictor: &Predictor,
    oracle: &RiskOracle<'_>,
    spec: &LossSpec,
    class_bound: f64,
) -> Result<MeanEstimate> {
    let view = predictor.view;
    if view == View::Joint {
        return Err(Error::InvalidInput(
            "excess risk is evaluated per view".into(),
        ));
    }
    match *oracle {
        RiskOracle::Planted { model, labels } => {
            if spec.kind != LossKind::Squared || labels.kind != LabelKind::Regression {
                return Err(Error::Unsupported(
                    "closed-form risk needs the squared loss with regression labels; supply a test pool"
                        .into(),
                ));
            }
            let risk = planted_risk(model, labels, view)?;
            let value = risk.risk(&predictor.weights)? - risk.optimal_loss(class_bound);
            Ok(MeanEstimate::exact(value))
        }
        RiskOracle::TestPool {
            pool,
            optimal_loss_x,
            optimal_loss_z,
        } => {
            if pool.is_empty() {
                return Err(Error::InvalidInput("test pool is empty".into()));
            }
            let optimal = if view == View::X {
                optimal_loss_x
            } else {
                optimal_loss_z
            };
            let mut values = Vec::with_capacity(pool.len());
            for s in pool {
                let features = s.view(view);
                check_dim("predictor", features.len(), predictor.weights.len())?;
                let y =
                    s.y.ok_or_else(|| Error::InvalidInput("test pool samples need labels".into()))?;
                values.push(loss_value(spec, predictor.weights.dot(features), y)?);
            }
            let est = MeanEstimate::from_values(values);
            Ok(MeanEstimate {
                mean: est.mean - optimal,
                ..est
            })
        }
    }
}

/// Constrained ERM over `||v|| <= bound` on the teacher's view.
pub fn train_teacher(
    data: &LabeledData,
    view: View,
    spec: &LossSpec,
    bound: f64,
    cfg: &SolverConfig,
) -> Result<Predictor> {
    Ok(constrained_erm(data, spec, bound, cfg)?.in_view(view))
}

/// Baseline: constrained ERM on view x with no teacher.
pub fn plain_student(
    data_x: &LabeledData,
    settings: &StudentSettings,
    oracle: &RiskOracle<'_>,
) -> Result<TransferResult> {
    let student = constrained_erm(
        data_x,
        &settings.loss,
        settings.student_bound,
        &settings.solver,
    )?;
    let excess = excess_risk(&student, oracle, &settings.loss, settings.student_bound)?;
    Ok(TransferResult {
        student,
        teacher: None,
        student_excess_risk: excess,
        teacher_excess_risk: None,
        agreement_s_squared: None,
        regularization_weight_used: 0.0,
    })
}

fn teacher_excess(
    teacher: &Predictor,
    oracle: &RiskOracle<'_>,
    spec: &LossSpec,
) -> Result<MeanEstimate> {
    let bound = teacher.norm_bound.unwrap_or(f64::INFINITY);
    excess_risk(teacher, oracle, spec, bound)
}

fn distill_towards(
    data_x: &LabeledData,
    reg: QuadraticRegularizer,
    nu: f64,
    settings: &StudentSettings,
) -> Result<Predictor> {
    regularized_erm(
        data_x,
        &settings.loss,
        &reg,
        Some(settings.student_bound),
        &settings.solver,
    )
    .map(|p| p.in_view(View::X))
    .map(|p| Predictor {
        norm_bound: Some(settings.student_bound),
        ..p
    })
    .map_err(|e| match e {
        Error::IllPosed(m) => Error::IllPosed(format!("{m} (nu = {nu})")),
        other => other,
    })
}

/// Same-view distillation: penalty `nu/2 ||w - v^||^2` with `nu` from the teacher distance `S`.
pub fn single_view_distill(
    data_x: &LabeledData,
    teacher: &Predictor,
    settings: &StudentSettings,
    oracle: &RiskOracle<'_>,
) -> Result<TransferResult> {
    check_dim("teacher", data_x.dim(), teacher.weights.len())?;
    let nu = settings.nu(data_x.len())?;
    let reg = QuadraticRegularizer::scalar(nu, teacher.weights.clone())?;
    let student = distill_towards(data_x, reg, nu, settings)?;
    let agreement = (&student.weights - &teacher.weights).norm_squared();
    Ok(TransferResult {
        student_excess_risk: excess_risk(&student, oracle, &settings.loss, settings.student_bound)?,
        teacher_excess_risk: Some(teacher_excess(teacher, oracle, &settings.loss)?),
        student,
        teacher: Some(teacher.clone()),
        agreement_s_squared: Some(agreement),
        regularization_weight_used: nu,
    })
}

/// Cross-view distillation through CCA: penalty `nu/2 ||w - T_CCA(v^)||^2`.
pub fn multiview_distill_tcca(
    data_x: &LabeledData,
    teacher: &Predictor,
    basis: &CcaBasis,
    settings: &StudentSettings,
    oracle: &RiskOracle<'_>,
) -> Result<TransferResult> {
    check_dim("student view", basis.dx(), data_x.dim())?;
    let center = basis.t_cca(&teacher.weights)?;
    let nu = settings.nu(data_x.len())?;
    let reg = QuadraticRegularizer::scalar(nu, center)?;
    let student = distill_towards(data_x, reg, nu, settings)?;
    let agreement = basis
        .agreement_quadratic(&student.weights, &teacher.weights)?
        .total;
    Ok(TransferResult {
        student_excess_risk: excess_risk(&student, oracle, &settings.loss, settings.student_bound)?,
        teacher_excess_risk: Some(teacher_excess(teacher, oracle, &settings.loss)?),
        student,
        teacher: Some(teacher.clone()),
        agreement_s_squared: Some(agreement),
        regularization_weight_used: nu,
    })
}

/// Penalty `nu/2 E(w'x - v'z)^2` as a quadratic in `w`: `nu/2 (w - c)^T A (w - c)` up to a
/// constant, where `A = E xx^T` and `c = A^+ E[(v'z) x]`.
pub fn expectation_regularizer(
    source: AgreementSource<'_>,
    teacher: &DVector<f64>,
    nu: f64,
) -> Result<QuadraticRegularizer> {
    let full = agreement_matrix(source)?;
    let dz = teacher.len();
    let dx = full
        .nrows()
        .checked_sub(dz)
        .ok_or(Error::DimensionMismatch {
            what: "teacher",
            expected: full.nrows(),
            found: dz,
        })?;
    let a = full.view((0, 0), (dx, dx)).into_owned();
    // the off-diagonal block of the agreement form is -E[x z^T]
    let b = -(full.view((0, dx), (dx, dz)) * teacher);
    let center = pinv_solve_psd(&a, &b);
    QuadraticRegularizer::matrix(a * nu, center)
}

/// Cross-view distillation without CCA: penalty `nu/2 E(w'x - v^'z)^2`.
pub fn multiview_distill_expectation(
    data_x: &LabeledData,
    source: AgreementSource<'_>,
    teacher: &Predictor,
    settings: &StudentSettings,
    oracle: &RiskOracle<'_>,
) -> Result<TransferResult> {
    let nu = settings.nu(data_x.len())?;
    let reg = expectation_regularizer(source, &teacher.weights, nu)?;
    check_dim("student view", reg.dim(), data_x.dim())?;
    let student = distill_towards(data_x, reg, nu, settings)?;
    let agreement = match source {
        AgreementSource::Population(basis) => {
            basis
                .agreement_quadratic(&student.weights, &teacher.weights)?
                .total
        }
        AgreementSource::Samples(pool) => {
            crate::cca::agreement_monte_carlo(pool, &student.weights, &teacher.weights)?
        }
    };
    Ok(TransferResult {
        student_excess_risk: excess_risk(&student, oracle, &settings.loss, settings.student_bound)?,
        teacher_excess_risk: Some(teacher_excess(teacher, oracle, &settings.loss)?),
        student,
        teacher: Some(teacher.clone()),
        agreement_s_squared: Some(agreement),
        regularization_weight_used: nu,
    })
}

/// Weights used by [`simultaneous_coregularized`] for a labeled sample of size `n`.
pub fn coreg_params(settings: &CoregSettings, n: usize) -> Result<MultitaskParams> {
    multitask_params(
        settings.loss.beta,
        settings.radius,
        settings.b_w,
        settings.b_v,
        settings.s,
        settings.lambda1,
        settings.l_star.max(0.0),
        n,
    )
}

/// Joint training of both views with an agreement penalty.
///
/// `student` is the view-x predictor and `teacher` the view-z predictor; the
/// reported student excess is `(L(w^) - L_w*) + (L(v^) - L_v*)`, each against
/// its own ball.
pub fn simultaneous_coregularized(
    data: &[PairedSample],
    agreement: AgreementSource<'_>,
    settings: &CoregSettings,
    oracle: &RiskOracle<'_>,
) -> Result<TransferResult> {
    let params = coreg_params(settings, data.len())?;
    let (w, v) =
        joint_coregularized_erm(data, &settings.loss, &params, agreement, &settings.solver)?;
    let ex = excess_risk(&w, oracle, &settings.loss, settings.b_w)?;
    let ev = excess_risk(&v, oracle, &settings.loss, settings.b_v)?;
    let agreement_value = match agreement {
        AgreementSource::Population(basis) => {
            basis.agreement_quadratic(&w.weights, &v.weights)?.total
        }
        AgreementSource::Samples(pool) => {
            crate::cca::agreement_monte_carlo(pool, &w.weights, &v.weights)?
        }
    };
    let joint = MeanEstimate {
        mean: ex.mean + ev.mean,
        std_error: (ex.std_error.powi(2) + ev.std_error.powi(2)).sqrt(),
        count: ex.count.min(ev.count),
    };
    Ok(TransferResult {
        student: w,
        teacher: Some(v),
        student_excess_risk: joint,
        teacher_excess_risk: Some(ev),
        agreement_s_squared: Some(agreement_value),
        regularization_weight_used: params.nu,
    })
}
