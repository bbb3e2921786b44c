//! Canonical correlation analysis and the coordinate system it induces.
//!
//! A fitted [`CcaBasis`] whitens each view, takes the full SVD of the
//! whitened cross-covariance and keeps both orthogonal factors, so every
//! predictor and every sample has well-defined canonical coordinates. The
//! agreement quadratic `E(w'x - v'z)^2` decomposes coordinate-wise in this
//! system, which is what the distillation and co-regularization estimators
//! exploit.

use nalgebra::{DMatrix, DVector};

use crate::data::{paired_dims, PairedSample, View};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{
    asymmetry, complete_orthonormal, inverse_sqrt_pd, min_eigenvalue, sorted_symmetric_eigen,
};
use crate::stats::MeanEstimate;

/// Correlations at or below this value do not count towards the rank.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Whether second moments are taken around the sample mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Centering {
    /// Raw second moments; the generator produces zero-mean views.
    #[default]
    None,
    SubtractMean,
}

/// Auto- and cross-covariance matrices of the two views.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceEstimate {
    pub sigma_xx: DMatrix<f64>,
    pub sigma_zz: DMatrix<f64>,
    pub sigma_xz: DMatrix<f64>,
    /// `None` for an exact population covariance.
    pub sample_count: Option<usize>,
}

impl CovarianceEstimate {
    /// Wraps known population covariances after checking shapes and symmetry.
    pub fn population(
        sigma_xx: DMatrix<f64>,
        sigma_zz: DMatrix<f64>,
        sigma_xz: DMatrix<f64>,
    ) -> Result<Self> {
        let est = Self {
            sigma_xx,
            sigma_zz,
            sigma_xz,
            sample_count: None,
        };
        est.validate()?;
        Ok(est)
    }

    pub fn dx(&self) -> usize {
        self.sigma_xx.nrows()
    }

    pub fn dz(&self) -> usize {
        self.sigma_zz.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (dx, dz) = (self.sigma_xx.nrows(), self.sigma_zz.nrows());
        check_dim("sigma_xx columns", dx, self.sigma_xx.ncols())?;
        check_dim("sigma_zz columns", dz, self.sigma_zz.ncols())?;
        check_dim("sigma_xz rows", dx, self.sigma_xz.nrows())?;
        check_dim("sigma_xz columns", dz, self.sigma_xz.ncols())?;
        for (name, m) in [("sigma_xx", &self.sigma_xx), ("sigma_zz", &self.sigma_zz)] {
            let scale = m.amax().max(1.0);
            if asymmetry(m) > 1e-10 * scale {
                return Err(Error::InvalidInput(format!("{name} is not symmetric")));
            }
            let low = min_eigenvalue(m);
            if low < -1e-10 * scale {
                return Err(Error::InvalidInput(format!(
                    "{name} is not positive semidefinite (eigenvalue {low:.3e})"
                )));
            }
        }
        Ok(())
    }

    /// Default whitening ridge: `1e-6` times the mean diagonal entry.
    pub fn default_ridge(&self) -> f64 {
        let trace = self.sigma_xx.trace() + self.sigma_zz.trace();
        1e-6 * trace / (self.dx() + self.dz()) as f64
    }
}

/// Empirical second-moment matrices of paired samples.
pub fn estimate_covariances(
    data: &[PairedSample],
    centering: Centering,
) -> Result<CovarianceEstimate> {
    if data.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "covariance estimation needs at least 2 samples, got {}",
            data.len()
        )));
    }
    let (dx, dz) = paired_dims(data).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let n = data.len() as f64;
    let (mean_x, mean_z) = match centering {
        Centering::None => (DVector::zeros(dx), DVector::zeros(dz)),
        Centering::SubtractMean => {
            let mx = data.iter().fold(DVector::zeros(dx), |acc, s| acc + &s.x) / n;
            let mz = data.iter().fold(DVector::zeros(dz), |acc, s| acc + &s.z) / n;
            (mx, mz)
        }
    };
    let mut sxx = DMatrix::zeros(dx, dx);
    let mut szz = DMatrix::zeros(dz, dz);
    let mut sxz = DMatrix::zeros(dx, dz);
    for s in data {
        let x = &s.x - &mean_x;
        let z = &s.z - &mean_z;
        sxx.ger(1.0, &x, &x, 1.0);
        szz.ger(1.0, &z, &z, 1.0);
        sxz.ger(1.0, &x, &z, 1.0);
    }
    Ok(CovarianceEstimate {
        sigma_xx: sxx / n,
        sigma_zz: szz / n,
        sigma_xz: sxz / n,
        sample_count: Some(data.len()),
    })
}

/// The fitted canonical coordinate system of two views.
///
/// `u_full` and `v_full` act on raw inputs: `u_full^T x` are the canonical
/// coordinates of `x`, with identity covariance under the fitted moments.
#[derive(Clone, Debug, PartialEq)]
pub struct CcaBasis {
    pub u_full: DMatrix<f64>,
    pub v_full: DMatrix<f64>,
    /// Canonical correlations, descending, clipped to `[0, 1]`.
    pub correlations: DVector<f64>,
    pub rank: usize,
    u_white: DMatrix<f64>,
    v_white: DMatrix<f64>,
    whiten_x: DMatrix<f64>,
    whiten_z: DMatrix<f64>,
    dewhiten_x: DMatrix<f64>,
    dewhiten_z: DMatrix<f64>,
}

/// Per-coordinate terms of the agreement quadratic.
#[derive(Clone, Debug, PartialEq)]
pub struct AgreementDecomposition {
    /// `(w~_i - lambda_i v~_i)^2`, one per view-x coordinate.
    pub shrinkage_terms: DVector<f64>,
    /// `(1 - lambda_i^2) (v~_i)^2`, one per view-z coordinate.
    pub residual_terms: DVector<f64>,
    pub total: f64,
}

/// Fits CCA to (ridge-regularized) covariances.
pub fn fit_cca(cov: &CovarianceEstimate, ridge: f64) -> Result<CcaBasis> {
    if !(ridge >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "ridge must be nonnegative, got {ridge}"
        )));
    }
    cov.validate()?;
    let (dx, dz) = (cov.dx(), cov.dz());
    if dx == 0 || dz == 0 {
        return Err(Error::InvalidInput(
            "both views need at least one feature".into(),
        ));
    }
    let (whiten_x, dewhiten_x) = inverse_sqrt_pd(
        &(&cov.sigma_xx + DMatrix::identity(dx, dx) * ridge),
        "sigma_xx + ridge*I",
    )?;
    let (whiten_z, dewhiten_z) = inverse_sqrt_pd(
        &(&cov.sigma_zz + DMatrix::identity(dz, dz) * ridge),
        "sigma_zz + ridge*I",
    )?;
    let whitened = &whiten_x * &cov.sigma_xz * &whiten_z;

    let k = dx.min(dz);
    let svd = whitened.svd(true, true);
    let u_thin = svd
        .u
        .ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
    let v_thin = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD did not return V^T".into()))?
        .transpose();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut u_k = DMatrix::zeros(dx, k);
    let mut v_k = DMatrix::zeros(dz, k);
    let mut correlations = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        u_k.set_column(dst, &u_thin.column(src));
        v_k.set_column(dst, &v_thin.column(src));
        correlations[dst] = svd.singular_values[src].clamp(0.0, 1.0);
    }
    for i in 0..k {
        if leading_sign(&u_k.column(i).into_owned()) < 0.0 {
            u_k.column_mut(i).neg_mut();
            v_k.column_mut(i).neg_mut();
        }
    }
    let u_white = normalize_tail_signs(complete_orthonormal(&u_k), k);
    let v_white = normalize_tail_signs(complete_orthonormal(&v_k), k);

    Ok(CcaBasis::assemble(
        u_white,
        v_white,
        correlations,
        whiten_x,
        whiten_z,
        dewhiten_x,
        dewhiten_z,
    ))
}

fn leading_sign(v: &DVector<f64>) -> f64 {
    let idx = v.iamax();
    if v[idx] < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn normalize_tail_signs(mut m: DMatrix<f64>, from: usize) -> DMatrix<f64> {
    for j in from..m.ncols() {
        if leading_sign(&m.column(j).into_owned()) < 0.0 {
            m.column_mut(j).neg_mut();
        }
    }
    m
}

impl CcaBasis {
    fn assemble(
        u_white: DMatrix<f64>,
        v_white: DMatrix<f64>,
        correlations: DVector<f64>,
        whiten_x: DMatrix<f64>,
        whiten_z: DMatrix<f64>,
        dewhiten_x: DMatrix<f64>,
        dewhiten_z: DMatrix<f64>,
    ) -> Self {
        let rank = correlations.iter().filter(|&&l| l > RANK_TOLERANCE).count();
        Self {
            u_full: &whiten_x * &u_white,
            v_full: &whiten_z * &v_white,
            correlations,
            rank,
            u_white,
            v_white,
            whiten_x,
            whiten_z,
            dewhiten_x,
            dewhiten_z,
        }
    }

    /// Basis for views that already have identity covariance.
    ///
    /// `u` and `v` must be square orthogonal matrices; correlations are
    /// sorted descending and clipped to `[0, 1]`.
    pub fn from_orthonormal(
        u: DMatrix<f64>,
        v: DMatrix<f64>,
        correlations: DVector<f64>,
    ) -> Result<Self> {
        let (dx, dz) = (u.nrows(), v.nrows());
        check_dim("u columns", dx, u.ncols())?;
        check_dim("v columns", dz, v.ncols())?;
        check_dim("correlation count", dx.min(dz), correlations.len())?;
        for (name, m) in [("u", &u), ("v", &v)] {
            let d = m.nrows();
            let err = (m.tr_mul(m) - DMatrix::identity(d, d)).amax();
            if err > 1e-8 {
                return Err(Error::InvalidInput(format!(
                    "{name} is not orthonormal (max Gram error {err:.3e})"
                )));
            }
        }
        for i in 1..correlations.len() {
            if correlations[i] > correlations[i - 1] {
                return Err(Error::InvalidInput(
                    "correlations must be sorted descending".into(),
                ));
            }
        }
        if correlations
            .iter()
            .any(|&l| !(-1e-8..=1.0 + 1e-8).contains(&l))
        {
            return Err(Error::InvalidInput(
                "correlations must lie in [0, 1]".into(),
            ));
        }
        let correlations = correlations.map(|l| l.clamp(0.0, 1.0));
        Ok(Self::assemble(
            u,
            v,
            correlations,
            DMatrix::identity(dx, dx),
            DMatrix::identity(dz, dz),
            DMatrix::identity(dx, dx),
            DMatrix::identity(dz, dz),
        ))
    }

    /// Identity directions with the given correlations.
    pub fn identity(dx: usize, dz: usize, correlations: DVector<f64>) -> Result<Self> {
        Self::from_orthonormal(
            DMatrix::identity(dx, dx),
            DMatrix::identity(dz, dz),
            correlations,
        )
    }

    pub fn dx(&self) -> usize {
        self.u_full.nrows()
    }

    pub fn dz(&self) -> usize {
        self.v_full.nrows()
    }

    pub fn dim(&self, view: View) -> usize {
        match view {
            View::X => self.dx(),
            View::Z => self.dz(),
            View::Joint => self.dx() + self.dz(),
        }
    }

    /// `lambda_i`, with zero beyond the number of computed correlations.
    pub fn correlation(&self, i: usize) -> f64 {
        self.correlations.get(i).copied().unwrap_or(0.0)
    }

    pub fn top_correlation(&self) -> f64 {
        self.correlation(0)
    }

    /// Smallest correlation over the `d_z` view-z coordinates (zero when `d_z` exceeds the rank).
    pub fn bottom_correlation_z(&self) -> f64 {
        self.correlation(self.dz() - 1)
    }

    /// Orthogonal direction matrices in whitened coordinates.
    pub fn whitened_directions(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.u_white, &self.v_white)
    }

    fn parts(&self, view: View) -> Result<(&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>)> {
        match view {
            View::X => Ok((&self.u_white, &self.whiten_x, &self.dewhiten_x)),
            View::Z => Ok((&self.v_white, &self.whiten_z, &self.dewhiten_z)),
            View::Joint => Err(Error::InvalidInput(
                "canonical coordinates are defined per view".into(),
            )),
        }
    }

    /// Canonical coordinates of a predictor, chosen so that `<w~, x~> = <w, x>`.
    pub fn to_cca_coords(&self, w: &DVector<f64>, view: View) -> Result<DVector<f64>> {
        let (dirs, _, dewhiten) = self.parts(view)?;
        check_dim("predictor", dirs.nrows(), w.len())?;
        Ok(dirs.tr_mul(&(dewhiten * w)))
    }

    /// Inverse of [`CcaBasis::to_cca_coords`].
    pub fn from_cca_coords(&self, w_tilde: &DVector<f64>, view: View) -> Result<DVector<f64>> {
        let (dirs, whiten, _) = self.parts(view)?;
        check_dim("canonical predictor", dirs.nrows(), w_tilde.len())?;
        Ok(whiten * (dirs * w_tilde))
    }

    /// Canonical coordinates of a data point.
    pub fn data_to_cca_coords(&self, x: &DVector<f64>, view: View) -> Result<DVector<f64>> {
        let (dirs, whiten, _) = self.parts(view)?;
        check_dim("sample", dirs.nrows(), x.len())?;
        Ok(dirs.tr_mul(&(whiten * x)))
    }

    /// Maps a view-z predictor to view x by shrinking each canonical coordinate by `lambda_i`.
    pub fn t_cca(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let v_tilde = self.to_cca_coords(v, View::Z)?;
        let dx = self.dx();
        let shrunk = DVector::from_fn(dx, |i, _| {
            if i < v_tilde.len() {
                self.correlation(i) * v_tilde[i]
            } else {
                0.0
            }
        });
        self.from_cca_coords(&shrunk, View::X)
    }

    /// `E(w'x - v'z)^2` under the fitted moments, split into shrinkage and residual terms.
    pub fn agreement_quadratic(
        &self,
        w: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<AgreementDecomposition> {
        let wt = self.to_cca_coords(w, View::X)?;
        let vt = self.to_cca_coords(v, View::Z)?;
        let shrinkage_terms = DVector::from_fn(wt.len(), |i, _| {
            let vi = vt.get(i).copied().unwrap_or(0.0);
            (wt[i] - self.correlation(i) * vi).powi(2)
        });
        let residual_terms = DVector::from_fn(vt.len(), |i, _| {
            let l = self.correlation(i);
            (1.0 - l * l) * vt[i] * vt[i]
        });
        let total = shrinkage_terms.sum() + residual_terms.sum();
        Ok(AgreementDecomposition {
            shrinkage_terms,
            residual_terms,
            total,
        })
    }

    /// The three-sum form `sum (1-l)w~^2 + sum l (w~ - v~)^2 + sum (1-l) v~^2`.
    pub fn agreement_three_term(&self, w: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        let wt = self.to_cca_coords(w, View::X)?;
        let vt = self.to_cca_coords(v, View::Z)?;
        let own_x: f64 = wt
            .iter()
            .enumerate()
            .map(|(i, a)| (1.0 - self.correlation(i)) * a * a)
            .sum();
        let own_z: f64 = vt
            .iter()
            .enumerate()
            .map(|(i, b)| (1.0 - self.correlation(i)) * b * b)
            .sum();
        let shared: f64 = (0..wt.len().min(vt.len()))
            .map(|i| self.correlation(i) * (wt[i] - vt[i]).powi(2))
            .sum();
        Ok(own_x + shared + own_z)
    }

    /// Auto-covariance of one view encoded by the basis (ridge included).
    pub fn auto_covariance(&self, view: View) -> Result<DMatrix<f64>> {
        let (_, _, dewhiten) = self.parts(view)?;
        Ok(dewhiten * dewhiten)
    }

    /// Cross-covariance encoded by the basis, with clipped correlations.
    pub fn cross_covariance(&self) -> DMatrix<f64> {
        let (dx, dz) = (self.dx(), self.dz());
        let sigma = DMatrix::from_fn(
            dx,
            dz,
            |i, j| if i == j { self.correlation(i) } else { 0.0 },
        );
        &self.dewhiten_x * &self.u_white * sigma * self.v_white.transpose() * &self.dewhiten_z
    }

    /// Raw-coordinate matrix `A` with `[w; v]^T A [w; v] = E(w'x - v'z)^2`.
    pub fn agreement_form(&self) -> DMatrix<f64> {
        let (dx, dz) = (self.dx(), self.dz());
        let mut a = DMatrix::zeros(dx + dz, dx + dz);
        let cross = self.cross_covariance();
        a.view_mut((0, 0), (dx, dx))
            .copy_from(&(&self.dewhiten_x * &self.dewhiten_x));
        a.view_mut((dx, dx), (dz, dz))
            .copy_from(&(&self.dewhiten_z * &self.dewhiten_z));
        a.view_mut((0, dx), (dx, dz)).copy_from(&(-&cross));
        a.view_mut((dx, 0), (dz, dx))
            .copy_from(&(-cross.transpose()));
        crate::linalg::symmetrize(&a)
    }

    /// Co-regularization matrix `M` in canonical coordinates:
    /// `[[(g+n) I, -n S], [-n S^T, (g+n) I]]` where `S` holds the correlations.
    pub fn coregularizer_matrix(&self, gamma: f64, nu: f64) -> Result<DMatrix<f64>> {
        check_regularization_weights(gamma, nu)?;
        let (dx, dz) = (self.dx(), self.dz());
        let mut m = DMatrix::identity(dx + dz, dx + dz) * (gamma + nu);
        for i in 0..dx.min(dz) {
            let off = -nu * self.correlation(i);
            m[(i, dx + i)] = off;
            m[(dx + i, i)] = off;
        }
        Ok(m)
    }
}

fn check_regularization_weights(gamma: f64, nu: f64) -> Result<()> {
    if !(gamma >= 0.0 && nu >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "regularization weights must be nonnegative (gamma={gamma}, nu={nu})"
        )));
    }
    if gamma + nu <= 0.0 {
        return Err(Error::SingularParameters(
            "gamma and nu are both zero; the regularizer vanishes".into(),
        ));
    }
    Ok(())
}

/// Diagonal of `(M^{-1})_xx = ((g+n) I - n^2/(g+n) S S^T)^{-1}` for a view-x dimension `dx`.
pub fn block_inverse_xx(
    gamma: f64,
    nu: f64,
    correlations: &DVector<f64>,
    dx: usize,
) -> Result<DVector<f64>> {
    check_regularization_weights(gamma, nu)?;
    let total = gamma + nu;
    let top = correlations.iter().copied().fold(0.0, f64::max);
    if total * total <= top * top * nu * nu {
        return Err(Error::SingularParameters(format!(
            "(gamma+nu)^2 = {:.6e} does not exceed lambda_1^2 nu^2 = {:.6e}",
            total * total,
            top * top * nu * nu
        )));
    }
    Ok(DVector::from_fn(dx, |i, _| {
        let l = correlations.get(i).copied().unwrap_or(0.0);
        1.0 / (total - nu * nu * l * l / total)
    }))
}

/// Smoothness in the `q = M^{1/2} p` parameterization:
/// `(g+n) beta R^2 / ((g+n)^2 - lambda_1^2 n^2)`.
pub fn coregularized_smoothness(
    gamma: f64,
    nu: f64,
    beta: f64,
    radius: f64,
    lambda1: f64,
) -> Result<f64> {
    check_regularization_weights(gamma, nu)?;
    let total = gamma + nu;
    let denom = total * total - lambda1 * lambda1 * nu * nu;
    if denom <= 0.0 {
        return Err(Error::SingularParameters(format!(
            "(gamma+nu)^2 - lambda_1^2 nu^2 = {denom:.3e} is not positive"
        )));
    }
    Ok(total * beta * radius * radius / denom)
}

/// `(1/n) sum (w'x_i - v'z_i)^2` over a sample.
pub fn agreement_monte_carlo(
    data: &[PairedSample],
    w: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<f64> {
    Ok(agreement_monte_carlo_estimate(data, w, v)?.mean)
}

/// Monte-Carlo agreement with its standard error.
pub fn agreement_monte_carlo_estimate(
    data: &[PairedSample],
    w: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<MeanEstimate> {
    if data.is_empty() {
        return Err(Error::InvalidInput(
            "agreement needs at least one sample".into(),
        ));
    }
    let (dx, dz) = paired_dims(data)?;
    check_dim("view-x predictor", dx, w.len())?;
    check_dim("view-z predictor", dz, v.len())?;
    Ok(MeanEstimate::from_values(
        data.iter().map(|s| (w.dot(&s.x) - v.dot(&s.z)).powi(2)),
    ))
}

/// Principal-angle projector onto the span of selected columns; used to compare
/// directions inside repeated-correlation blocks.
pub fn column_projector(m: &DMatrix<f64>, cols: std::ops::Range<usize>) -> DMatrix<f64> {
    let sub = m.columns(cols.start, cols.len()).into_owned();
    let gram = sub.tr_mul(&sub);
    let (values, vectors) = sorted_symmetric_eigen(&gram);
    let inv = DMatrix::from_diagonal(&values.map(|v| if v > 1e-14 { 1.0 / v } else { 0.0 }));
    &sub * (&vectors * inv * vectors.transpose()) * sub.transpose()
}
