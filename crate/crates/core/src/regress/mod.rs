//! On-line memory queries: k-nearest-neighbour averaging and Gaussian process
//! regression from a visual configuration to a warm start and a way point.

mod gpr;
mod knn;

pub use gpr::{
    gpr_fit, gpr_query, load_gpr, save_gpr, subsample_rows, GprFitConfig, GprModel,
};
pub use knn::{knn_query, KnnIndex};

use crate::camera::{FeatureVector, Twist};
use crate::error::{Result, VpcError};
use crate::model::ControlSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regressor {
    Knn,
    Gpr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    /// `(v, way point)`, length `q + n_f`.
    pub y_hat: Vec<f64>,
    pub regressor: Regressor,
    /// seconds
    pub query_time: f64,
}

/// Warm start built from the first `q` entries of a memory output.
pub fn assemble_warm_start(y_hat: &[f64], q: usize, np: usize, nc: usize) -> Result<ControlSequence> {
    if q != Twist::DIM || y_hat.len() <= q {
        return Err(VpcError::DimensionMismatch {
            expected: Twist::DIM + 2,
            got: y_hat.len(),
        });
    }
    Ok(ControlSequence::constant(Twist::from_slice(&y_hat[..q]), nc, np))
}

/// Way point stored after the twist in a memory output.
pub fn extract_way_point(y_hat: &[f64], q: usize, n_f: usize) -> Result<FeatureVector> {
    if y_hat.len() != q + n_f {
        return Err(VpcError::DimensionMismatch {
            expected: q + n_f,
            got: y_hat.len(),
        });
    }
    Ok(FeatureVector::from_vec(y_hat[q..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warm_start_tiles_first_twist() {
        let y: Vec<f64> = (1..=14).map(f64::from).collect();
        let w = assemble_warm_start(&y, 6, 3, 1).unwrap();
        let expanded = w.expanded();
        assert_eq!(expanded.len(), 2);
        for v in expanded {
            assert_eq!(v.to_vector().as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        }
        assert_eq!(assemble_warm_start(&y, 6, 2, 1).unwrap().expanded().len(), 1);
        let zero = assemble_warm_start(&[0.0; 14], 6, 3, 1).unwrap();
        assert!(zero.expanded().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn way_point_is_the_tail() {
        let y: Vec<f64> = (1..=14).map(f64::from).collect();
        let w = extract_way_point(&y, 6, 8).unwrap();
        assert_eq!(w.as_slice(), &y[6..]);
        assert!(matches!(
            extract_way_point(&y, 6, 6),
            Err(VpcError::DimensionMismatch { .. })
        ));
    }
}
