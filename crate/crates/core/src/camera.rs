//! Ground-truth plant: a free-flying pinhole camera looking at fixed 3-D points.
//!
//! The camera pose maps camera-frame coordinates to the world frame. Velocity
//! commands are expressed in the camera frame and integrated with the exact
//! SE(3) exponential, so a constant twist traces a screw motion.

use std::ops::Deref;

use nalgebra::{DVector, Matrix3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VpcError};
use crate::scenario::Scenario;

/// Points closer than this to the image plane are treated as behind the camera.
pub const DEPTH_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub position: Vector3<f64>,
    /// world <- camera
    pub orientation: UnitQuaternion<f64>,
}

impl CameraPose {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), UnitQuaternion::identity())
    }

    /// Expresses a world point in the camera frame.
    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.inverse_transform_vector(&(world - self.position))
    }

    /// Applies a motion expressed in this pose's own frame.
    pub fn compose(&self, translation: &Vector3<f64>, rotation: &UnitQuaternion<f64>) -> Self {
        let mut out = Self::new(
            self.position + self.orientation * translation,
            self.orientation * rotation,
        );
        out.orientation.renormalize();
        out
    }
}

/// Camera velocity in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    /// m/s
    pub linear: Vector3<f64>,
    /// rad/s
    pub angular: Vector3<f64>,
}

impl Twist {
    pub const DIM: usize = 6;

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            linear: Vector3::new(v[0], v[1], v[2]),
            angular: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::from_vector(&Vector6::from_column_slice(&v[..6]))
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        )
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|c| c.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fu: f64,
    pub fv: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: f64,
    pub height: f64,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fu > 0.0 && self.fv > 0.0) {
            return Err(VpcError::Validation("focal lengths must be positive".into()));
        }
        if !(self.cu > 0.0 && self.cu < self.width && self.cv > 0.0 && self.cv < self.height) {
            return Err(VpcError::Validation(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }
}

/// Stacked pixel coordinates `(u1, v1, u2, v2, ...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub DVector<f64>);

impl FeatureVector {
    pub fn from_vec(v: Vec<f64>) -> Self {
        debug_assert!(v.len().is_multiple_of(2));
        Self(DVector::from_vec(v))
    }

    pub fn zeros(n_f: usize) -> Self {
        Self(DVector::zeros(n_f))
    }

    pub fn n_points(&self) -> usize {
        self.0.len() / 2
    }

    pub fn point(&self, i: usize) -> (f64, f64) {
        (self.0[2 * i], self.0[2 * i + 1])
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.n_points()).map(move |i| self.point(i))
    }

    /// Root-mean-square pixel distance per point to `other`.
    pub fn rms_error(&self, other: &FeatureVector) -> f64 {
        let n = self.n_points().max(1) as f64;
        ((&self.0 - &other.0).norm_squared() / n).sqrt()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

impl Deref for FeatureVector {
    type Target = DVector<f64>;

    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

/// Pinhole projection of `points3d` (world frame) seen from `pose`.
pub fn project(
    points3d: &[Vector3<f64>],
    pose: &CameraPose,
    intr: &Intrinsics,
) -> Result<FeatureVector> {
    let mut out = Vec::with_capacity(points3d.len() * 2);
    for (index, p) in points3d.iter().enumerate() {
        let c = pose.to_camera(p);
        if c.z <= DEPTH_EPSILON {
            return Err(VpcError::NonPositiveDepth { index, depth: c.z });
        }
        out.push(intr.fu * c.x / c.z + intr.cu);
        out.push(intr.fv * c.y / c.z + intr.cv);
    }
    Ok(FeatureVector::from_vec(out))
}

/// Camera-frame depth of every point; non-positive values are passed through.
pub fn point_depths(points3d: &[Vector3<f64>], pose: &CameraPose) -> Vec<f64> {
    points3d.iter().map(|p| pose.to_camera(p).z).collect()
}

/// Plant output: the scenario's target points seen from `pose`.
pub fn measure(scenario: &Scenario, pose: &CameraPose) -> Result<FeatureVector> {
    project(&scenario.points, pose, &scenario.intrinsics)
}

/// Camera-frame depth of each scenario point.
pub fn feature_depths(scenario: &Scenario, pose: &CameraPose) -> Vec<f64> {
    point_depths(&scenario.points, pose)
}

fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Advances `pose` by `exp(v * dt)` with the twist in the camera frame.
pub fn integrate_twist(pose: &CameraPose, v: &Twist, dt: f64) -> CameraPose {
    let omega = v.angular * dt;
    let rho = v.linear * dt;
    let theta = omega.norm();
    let w = skew(&omega);
    let (a, b) = if theta < 1e-5 {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    };
    let left_jacobian = Matrix3::identity() + w * a + w * w * b;
    let translation = left_jacobian * rho;
    let rotation = UnitQuaternion::from_scaled_axis(omega);
    pose.compose(&translation, &rotation)
}
