//! Sample containers shared by every module.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Which feature view a vector or predictor lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    /// Regular features, available at test time.
    X,
    /// Privileged features, available only while training.
    Z,
    /// Concatenation `[w; v]` of both views.
    Joint,
}

/// One draw of the two views and, optionally, its label.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub y: Option<f64>,
}

impl PairedSample {
    pub fn new(x: DVector<f64>, z: DVector<f64>, y: Option<f64>) -> Self {
        Self { x, z, y }
    }

    pub fn view(&self, view: View) -> &DVector<f64> {
        match view {
            View::X => &self.x,
            View::Z => &self.z,
            View::Joint => panic!("a paired sample has no joint feature vector"),
        }
    }
}

/// Validates that all samples share dimensions and returns `(d_x, d_z)`.
pub fn paired_dims(data: &[PairedSample]) -> Result<(usize, usize)> {
    let first = data
        .first()
        .ok_or_else(|| Error::InvalidInput("empty paired sample set".into()))?;
    let (dx, dz) = (first.x.len(), first.z.len());
    for s in data {
        check_dim("view-x sample", dx, s.x.len())?;
        check_dim("view-z sample", dz, s.z.len())?;
    }
    Ok((dx, dz))
}

/// Labeled single-view design: one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledData {
    pub features: DMatrix<f64>,
    pub targets: DVector<f64>,
}

impl LabeledData {
    pub fn new(features: DMatrix<f64>, targets: DVector<f64>) -> Result<Self> {
        check_dim("label count", features.nrows(), targets.len())?;
        if features.nrows() == 0 {
            return Err(Error::InvalidInput("labeled data set is empty".into()));
        }
        Ok(Self { features, targets })
    }

    /// Extracts one view of labeled paired samples.
    pub fn from_pairs(data: &[PairedSample], view: View) -> Result<Self> {
        let (dx, dz) = paired_dims(data)?;
        let d = match view {
            View::X => dx,
            View::Z => dz,
            View::Joint => {
                return Err(Error::InvalidInput(
                    "labeled data must be drawn from a single view".into(),
                ))
            }
        };
        let mut features = DMatrix::zeros(data.len(), d);
        let mut targets = DVector::zeros(data.len());
        for (i, s) in data.iter().enumerate() {
            features.set_row(i, &s.view(view).transpose());
            targets[i] =
                s.y.ok_or_else(|| Error::InvalidInput(format!("sample {i} has no label")))?;
        }
        Self::new(features, targets)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Largest squared row norm.
    pub fn max_sq_norm(&self) -> f64 {
        self.features
            .row_iter()
            .map(|r| r.norm_squared())
            .fold(0.0, f64::max)
    }

    /// Second-moment matrix `(1/n) X^T X`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        self.features.tr_mul(&self.features) / self.len() as f64
    }

    /// Returns a copy with row `i` replaced.
    pub fn with_replaced(&self, i: usize, x: &DVector<f64>, y: f64) -> Self {
        let mut out = self.clone();
        out.features.set_row(i, &x.transpose());
        out.targets[i] = y;
        out
    }
}
