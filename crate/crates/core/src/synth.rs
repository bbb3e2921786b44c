//! Gaussian two-view data with planted canonical correlations and label models.
//!
//! Both views have identity covariance and cross-covariance
//! `Phi diag(lambda) Psi^T`. Each sample is built from a shared latent `t`:
//! canonical coordinate `i < r` is `sqrt(lambda_i) t_i + sqrt(1 - lambda_i) e_i`
//! in both views, with independent noise `e`, and the remaining coordinates are
//! independent standard normals.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cca::{CcaBasis, CovarianceEstimate};
use crate::data::{PairedSample, View};
use crate::erm::project_to_ball;
use crate::error::{check_dim, Error, Result};
use crate::linalg::complete_orthonormal;
use crate::losses::sigmoid;

/// Cap on rejection rounds per sample in strict boundedness mode.
const MAX_REJECTIONS: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalPairModel {
    pub dx: usize,
    pub dz: usize,
    /// `dx x r`, orthonormal columns.
    pub phi: DMatrix<f64>,
    /// `dz x r`, orthonormal columns.
    pub psi: DMatrix<f64>,
    /// Descending, in `[0, 1]`.
    pub lambdas: DVector<f64>,
    phi_full: DMatrix<f64>,
    psi_full: DMatrix<f64>,
}

impl CanonicalPairModel {
    /// Random canonical directions drawn from `seed`.
    pub fn new(dx: usize, dz: usize, lambdas: &[f64], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi_full = random_orthogonal(dx, &mut rng);
        let psi_full = random_orthogonal(dz, &mut rng);
        Self::from_completed(phi_full, psi_full, lambdas)
    }

    /// Canonical directions along the leading coordinate axes.
    pub fn axis_aligned(dx: usize, dz: usize, lambdas: &[f64]) -> Result<Self> {
        Self::from_completed(
            DMatrix::identity(dx, dx),
            DMatrix::identity(dz, dz),
            lambdas,
        )
    }

    /// Explicit directions; the orthogonal complements are filled in deterministically.
    pub fn from_directions(phi: DMatrix<f64>, psi: DMatrix<f64>, lambdas: &[f64]) -> Result<Self> {
        check_dim("psi columns", phi.ncols(), psi.ncols())?;
        check_dim("lambda count", phi.ncols(), lambdas.len())?;
        for (name, m) in [("phi", &phi), ("psi", &psi)] {
            let r = m.ncols();
            let err = (m.tr_mul(m) - DMatrix::identity(r, r)).amax();
            if err > 1e-10 {
                return Err(Error::InvalidInput(format!(
                    "{name} columns are not orthonormal (max Gram error {err:.3e})"
                )));
            }
        }
        Self::from_completed(
            complete_orthonormal(&phi),
            complete_orthonormal(&psi),
            lambdas,
        )
    }

    /// The rank-one model `Sigma_xz = delta phi psi^T`.
    pub fn single_pair(phi: DVector<f64>, psi: DVector<f64>, delta: f64) -> Result<Self> {
        let (pn, qn) = (phi.norm(), psi.norm());
        if pn == 0.0 || qn == 0.0 {
            return Err(Error::InvalidInput(
                "canonical directions must be nonzero".into(),
            ));
        }
        Self::from_directions(
            DMatrix::from_column_slice(phi.len(), 1, (phi / pn).as_slice()),
            DMatrix::from_column_slice(psi.len(), 1, (psi / qn).as_slice()),
            &[delta],
        )
    }

    fn from_completed(
        phi_full: DMatrix<f64>,
        psi_full: DMatrix<f64>,
        lambdas: &[f64],
    ) -> Result<Self> {
        let (dx, dz) = (phi_full.nrows(), psi_full.nrows());
        let r = lambdas.len();
        if dx == 0 || dz == 0 {
            return Err(Error::InvalidInput(
                "view dimensions must be positive".into(),
            ));
        }
        if r > dx.min(dz) {
            return Err(Error::InvalidInput(format!(
                "rank {r} exceeds min(d_x, d_z) = {}",
                dx.min(dz)
            )));
        }
        if lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::InvalidInput(
                "canonical correlations must lie in [0, 1]".into(),
            ));
        }
        if lambdas.windows(2).any(|p| p[1] > p[0]) {
            return Err(Error::InvalidInput(
                "canonical correlations must be descending".into(),
            ));
        }
        Ok(Self {
            dx,
            dz,
            phi: phi_full.columns(0, r).into_owned(),
            psi: psi_full.columns(0, r).into_owned(),
            lambdas: DVector::from_column_slice(lambdas),
            phi_full,
            psi_full,
        })
    }

    pub fn rank(&self) -> usize {
        self.lambdas.len()
    }

    /// `lambda_i` padded with zeros to `min(d_x, d_z)` entries.
    pub fn padded_correlations(&self) -> DVector<f64> {
        DVector::from_fn(self.dx.min(self.dz), |i, _| {
            self.lambdas.get(i).copied().unwrap_or(0.0)
        })
    }

    pub fn cross_covariance(&self) -> DMatrix<f64> {
        &self.phi * DMatrix::from_diagonal(&self.lambdas) * self.psi.transpose()
    }

    pub fn population_covariance(&self) -> CovarianceEstimate {
        CovarianceEstimate {
            sigma_xx: DMatrix::identity(self.dx, self.dx),
            sigma_zz: DMatrix::identity(self.dz, self.dz),
            sigma_xz: self.cross_covariance(),
            sample_count: None,
        }
    }

    /// Exact canonical basis of the population covariance.
    pub fn basis(&self) -> Result<CcaBasis> {
        CcaBasis::from_orthonormal(
            self.phi_full.clone(),
            self.psi_full.clone(),
            self.padded_correlations(),
        )
    }

    fn draw_views(&self, rng: &mut ChaCha8Rng) -> (DVector<f64>, DVector<f64>) {
        let r = self.rank();
        let latent: Vec<f64> = (0..r).map(|_| rng.sample(StandardNormal)).collect();
        let mut draw = |d: usize| -> DVector<f64> {
            DVector::from_fn(d, |i, _| {
                let e: f64 = rng.sample(StandardNormal);
                if i < r {
                    let l = self.lambdas[i];
                    l.sqrt() * latent[i] + (1.0 - l).sqrt() * e
                } else {
                    e
                }
            })
        };
        let xt = draw(self.dx);
        let zt = draw(self.dz);
        (&self.phi_full * xt, &self.psi_full * zt)
    }
}

/// Haar-distributed orthogonal matrix from the QR factorization of a Gaussian matrix.
fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelKind {
    /// `y = <w*, x> + s * N(0, 1)`.
    Regression,
    /// `y = +1` with probability `sigmoid(<w*, x>)`, else `-1`.
    Logistic,
}

/// Planted linear labels on one view.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelModel {
    pub view: View,
    pub weights: DVector<f64>,
    pub noise_std: f64,
    pub kind: LabelKind,
}

impl LabelModel {
    pub fn regression(view: View, weights: DVector<f64>, noise_std: f64) -> Self {
        Self {
            view,
            weights,
            noise_std,
            kind: LabelKind::Regression,
        }
    }

    fn validate(&self, model: &CanonicalPairModel) -> Result<()> {
        let d = match self.view {
            View::X => model.dx,
            View::Z => model.dz,
            View::Joint => {
                return Err(Error::InvalidInput(
                    "labels must be generated from view x or z".into(),
                ))
            }
        };
        check_dim("label weights", d, self.weights.len())?;
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "noise_std must be nonnegative, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundedness {
    /// Keep every Gaussian draw; `R` is a high quantile of `||x||`.
    #[default]
    Quantile,
    /// Redraw a sample until both views lie inside their radius.
    Strict,
}

/// Radius used for a `d`-dimensional standard Gaussian view: `sqrt(d) + 3`.
pub fn radius(d: usize) -> f64 {
    (d as f64).sqrt() + 3.0
}

/// `n` labeled paired samples, deterministic in `seed`.
pub fn sample_paired(
    model: &CanonicalPairModel,
    labels: Option<&LabelModel>,
    n: usize,
    seed: u64,
    boundedness: Boundedness,
) -> Result<Vec<PairedSample>> {
    if let Some(l) = labels {
        l.validate(model)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rx, rz) = (radius(model.dx), radius(model.dz));
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut attempts = 0;
        let (x, z) = loop {
            let (x, z) = model.draw_views(&mut rng);
            if boundedness == Boundedness::Quantile || (x.norm() <= rx && z.norm() <= rz) {
                break (x, z);
            }
            attempts += 1;
            if attempts >= MAX_REJECTIONS {
                return Err(Error::Numerical(
                    "strict boundedness rejected too many draws".into(),
                ));
            }
        };
        let y = labels.map(|l| {
            let a = l.weights.dot(if l.view == View::X { &x } else { &z });
            match l.kind {
                LabelKind::Regression => a + l.noise_std * rng.sample::<f64, _>(StandardNormal),
                LabelKind::Logistic => {
                    if rng.random::<f64>() < sigmoid(a) {
                        1.0
                    } else {
                        -1.0
                    }
                }
            }
        });
        out.push(PairedSample::new(x, z, y));
    }
    Ok(out)
}

/// Closed-form squared-loss risk `L(w) = 1/2 ||w - target||^2 + offset` of a
/// predictor on one view, valid under identity covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedRisk {
    pub target: DVector<f64>,
    pub offset: f64,
}

impl PlantedRisk {
    pub fn risk(&self, w: &DVector<f64>) -> Result<f64> {
        check_dim("predictor", self.target.len(), w.len())?;
        Ok(0.5 * (w - &self.target).norm_squared() + self.offset)
    }

    /// Minimizer of the risk over `||w|| <= bound`.
    pub fn optimum_in_ball(&self, bound: f64) -> DVector<f64> {
        project_to_ball(&self.target, bound)
    }

    /// `min_{||w|| <= bound} L(w)`.
    pub fn optimal_loss(&self, bound: f64) -> f64 {
        let best = self.optimum_in_ball(bound);
        0.5 * (best - &self.target).norm_squared() + self.offset
    }
}

/// Squared-loss risk of predictors on `view` under regression labels.
pub fn planted_risk(
    model: &CanonicalPairModel,
    labels: &LabelModel,
    view: View,
) -> Result<PlantedRisk> {
    labels.validate(model)?;
    if labels.kind != LabelKind::Regression {
        return Err(Error::Unsupported(
            "closed-form risk exists only for regression labels".into(),
        ));
    }
    let noise = 0.5 * labels.noise_std * labels.noise_std;
    if view == labels.view {
        return Ok(PlantedRisk {
            target: labels.weights.clone(),
            offset: noise,
        });
    }
    let cross = model.cross_covariance();
    let target = match view {
        View::X => &cross * &labels.weights,
        View::Z => cross.tr_mul(&labels.weights),
        View::Joint => return Err(Error::InvalidInput("risk is defined per view".into())),
    };
    let offset = 0.5 * (labels.weights.norm_squared() - target.norm_squared()) + noise;
    Ok(PlantedRisk { target, offset })
}

/// Optimal in-class loss on the labels' own view over `||w|| <= bound`.
pub fn planted_optimal_loss(
    model: &CanonicalPairModel,
    labels: &LabelModel,
    bound: f64,
) -> Result<f64> {
    Ok(planted_risk(model, labels, labels.view)?.optimal_loss(bound))
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a master seed and a path of indices.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}
