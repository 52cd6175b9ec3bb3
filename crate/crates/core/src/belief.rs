use nalgebra::DVector;

use crate::linalg::SymMatrix;

/// Gaussian summary of a posterior: mean and covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: SymMatrix) -> Self {
        assert_eq!(mean.len(), cov.dim(), "mean and covariance dimensions differ");
        GaussianBelief { mean, cov }
    }

    pub fn scalar(mean: f64, var: f64) -> Self {
        GaussianBelief {
            mean: DVector::from_element(1, mean),
            cov: SymMatrix::scalar(var),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_pd(&self) -> bool {
        self.cov.is_pd()
    }

    pub fn trace(&self) -> f64 {
        self.cov.as_matrix().trace()
    }
}
