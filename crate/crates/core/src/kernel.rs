//! Nadaraya-Watson regression with a radial Gaussian kernel.
//!
//! Extends a mapping known on training points to arbitrary queries:
//! `f(q) = sum_i K((q - x_i)/h) y_i / sum_j K((q - x_j)/h)` with
//! `K(z) = exp(-|z|^2 / 2)`. The normalizing constant of the kernel cancels.

use ndarray::{Array1, Array2, ArrayView2};

use crate::discrete_ot::{check_dim, squared_distance};
use crate::error::{Error, Result};

/// Bandwidths offered by default.
pub const BANDWIDTH_GRID: [f64; 4] = [0.02, 0.04, 0.5, 1.0];

/// Default bandwidth for an output dimension: 0.04 up to 16 outputs, 0.5 above.
pub fn default_bandwidth(dim: usize) -> f64 {
    if dim <= 16 {
        BANDWIDTH_GRID[1]
    } else {
        BANDWIDTH_GRID[2]
    }
}

pub fn validate_bandwidth(h: f64) -> Result<()> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidBandwidth(h));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct KernelRegressor {
    train_points: Array2<f64>,
    targets: Array2<f64>,
    bandwidth: f64,
}

/// Normalized kernel weights for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights {
    pub weights: Vec<f64>,
    /// Every weight except the nearest point's underflowed to zero, so the
    /// estimate collapses to the nearest training target.
    pub nearest_only: bool,
}

impl KernelRegressor {
    pub fn new(train_points: Array2<f64>, targets: Array2<f64>, bandwidth: f64) -> Result<Self> {
        validate_bandwidth(bandwidth)?;
        if train_points.nrows() == 0 {
            return Err(Error::EmptyDistribution);
        }
        if train_points.nrows() != targets.nrows() {
            return Err(Error::Shape(format!(
                "{} training points but {} targets",
                train_points.nrows(),
                targets.nrows()
            )));
        }
        Ok(Self {
            train_points,
            targets,
            bandwidth,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn train_points(&self) -> ArrayView2<'_, f64> {
        self.train_points.view()
    }

    pub fn targets(&self) -> ArrayView2<'_, f64> {
        self.targets.view()
    }

    pub fn kernel_weights(&self, query: &[f64]) -> Result<KernelWeights> {
        self.kernel_weights_with(query, self.bandwidth)
    }

    /// Kernel weights under an explicit bandwidth instead of the stored one.
    pub fn kernel_weights_with(&self, query: &[f64], bandwidth: f64) -> Result<KernelWeights> {
        validate_bandwidth(bandwidth)?;
        check_dim(self.train_points.ncols(), query.len())?;
        if let Some(&v) = query.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "kernel query".into(),
                value: v,
            });
        }
        let q = ndarray::ArrayView1::from(query);
        let d2: Vec<f64> = self
            .train_points
            .rows()
            .into_iter()
            .map(|x| squared_distance(q, x))
            .collect();
        // Shift by the nearest distance so the largest term is exp(0) = 1.
        let nearest = d2.iter().cloned().fold(f64::INFINITY, f64::min);
        let scale = 2.0 * bandwidth * bandwidth;
        let mut weights: Vec<f64> = d2.iter().map(|d| (-(d - nearest) / scale).exp()).collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        let nearest_only = weights.len() > 1 && weights.iter().filter(|w| **w > 0.0).count() == 1;
        Ok(KernelWeights {
            weights,
            nearest_only,
        })
    }

    pub fn regress(&self, query: &[f64]) -> Result<Array1<f64>> {
        self.regress_with(query, self.bandwidth)
    }

    pub fn regress_with(&self, query: &[f64], bandwidth: f64) -> Result<Array1<f64>> {
        let kw = self.kernel_weights_with(query, bandwidth)?;
        Ok(Array1::from(kw.weights).dot(&self.targets))
    }
}
