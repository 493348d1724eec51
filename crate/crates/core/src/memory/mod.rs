//! Memory of motion: stored `(x, y)` samples from successful off-line VPC
//! trajectories, and the machinery that builds them.

mod builder;
mod gmm;
mod store;

pub use builder::{
    build_memory, build_memory_with, find_solution, generate_initial_features, BuildConfig, BuildOutcome,
    FindOutcome, FindPhase, MemoryAssist, StartSample, PREDEFINED_DIRECTIONS, RANDOM_DIRECTIONS,
};
pub use gmm::{fit_failure_gmm, GmmModel};
pub use store::{
    load_memory, read_memory, save_memory, write_memory, MemoryMeta, MemorySample, MemoryStore,
    VisualConfig,
};
pub(crate) use store::fmt_f64;

use crate::camera::FeatureVector;
use crate::error::{Result, VpcError};

fn first_edge_angle(s: &FeatureVector) -> f64 {
    let (u0, v0) = s.point(0);
    let (u1, v1) = s.point(1);
    wrap_angle((v1 - v0).atan2(u1 - u0))
}

/// Maps `-pi` onto `pi` so the result lies in `(-pi, pi]`.
fn wrap_angle(a: f64) -> f64 {
    if a <= -std::f64::consts::PI {
        a + 2.0 * std::f64::consts::PI
    } else {
        a
    }
}

/// Area of the feature polygon (vertices in stored order) and the direction
/// from its centroid to the first feature.
///
/// Fails with `DegeneratePolygon` below 1 px^2; [`VisualConfig`] then falls
/// back to the first-edge direction.
pub fn compute_area_angle(s: &FeatureVector) -> Result<(f64, f64)> {
    let n = s.n_points();
    if n < 3 {
        return Err(VpcError::DimensionMismatch {
            expected: 6,
            got: s.len(),
        });
    }
    let mut twice = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..n {
        let (x0, y0) = s.point(i);
        let (x1, y1) = s.point((i + 1) % n);
        let cross = x0 * y1 - x1 * y0;
        twice += cross;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    let area = 0.5 * twice.abs();
    if area < 1.0 {
        return Err(VpcError::DegeneratePolygon(area));
    }
    cx /= 3.0 * twice;
    cy /= 3.0 * twice;
    let (u0, v0) = s.point(0);
    Ok((area, wrap_angle((v0 - cy).atan2(u0 - cx))))
}

pub(crate) fn area_angle_or_fallback(s: &FeatureVector) -> (f64, f64) {
    match compute_area_angle(s) {
        Ok(aa) => aa,
        Err(VpcError::DegeneratePolygon(area)) => (area, first_edge_angle(s)),
        Err(_) => (0.0, 0.0),
    }
}

/// Features `n_s` steps ahead on the trajectory, or the goal once that runs
/// past the end.
pub fn compute_way_point(
    traj: &[FeatureVector],
    j: usize,
    n_s: usize,
    s_star: &FeatureVector,
) -> FeatureVector {
    let last = traj.len() - 1;
    if j + n_s > last {
        s_star.clone()
    } else {
        traj[j + n_s].clone()
    }
}
