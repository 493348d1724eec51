//! Scenario documents: camera, target, constraints, weights and horizon of one
//! servoing task.

use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::{point_depths, project, CameraPose, FeatureVector, Intrinsics};
use crate::error::{Result, VpcError};
use crate::model::{KeepInBox, Superellipse, VisibilityRegion, Weights};
use crate::solver::Bounds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSpec {
    pub position: [f64; 3],
    /// `[w, x, y, z]`, world <- camera
    pub quaternion: [f64; 4],
}

impl PoseSpec {
    pub fn to_pose(&self) -> Result<CameraPose> {
        let [w, x, y, z] = self.quaternion;
        let q = Quaternion::new(w, x, y, z);
        if !(q.norm() > 1e-12) {
            return Err(VpcError::Validation("zero quaternion".into()));
        }
        Ok(CameraPose::new(
            Vector3::from(self.position),
            UnitQuaternion::from_quaternion(q),
        ))
    }

    pub fn from_pose(pose: &CameraPose) -> Self {
        let q = pose.orientation.quaternion();
        Self {
            position: pose.position.into(),
            quaternion: [q.w, q.i, q.j, q.k],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityBounds {
    /// m/s, symmetric per axis
    pub v_lin: f64,
    /// rad/s, symmetric per axis
    pub v_ang: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct WeightSpec {
    pub kQ: f64,
    pub R_diag: [f64; 6],
    pub ramp_radius: f64,
    pub R_floor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct Horizon {
    pub Np: usize,
    pub Nc: usize,
    pub Ts: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub conv_px: f64,
    pub violation_px: f64,
    pub time_limit_s: f64,
}

/// Start poses are drawn as offsets from the goal pose: translation
/// `(dx, dy, dz)` in the goal camera frame and Euler angles `(rx, ry, rz)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseBox {
    pub lo: [f64; 6],
    pub hi: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub pose_box: PoseBox,
    #[serde(default = "default_max_rejects")]
    pub max_rejects: usize,
}

fn default_max_rejects() -> usize {
    10_000
}

/// On-disk scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub name: String,
    pub intrinsics: Intrinsics,
    pub points3d: Vec<[f64; 3]>,
    pub goal_pose: PoseSpec,
    /// Defaults to the full image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_in: Option<KeepInBox>,
    #[serde(default)]
    pub keepouts: Vec<Superellipse>,
    pub bounds: VelocityBounds,
    pub weights: WeightSpec,
    pub horizon: Horizon,
    pub tolerances: Tolerances,
    pub sampling: SamplingSpec,
    /// Fixed start used by reproduction cases.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_pose: Option<PoseSpec>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub intrinsics: Intrinsics,
    pub points: Vec<Vector3<f64>>,
    pub goal_pose: CameraPose,
    pub s_star: FeatureVector,
    pub goal_depths: Vec<f64>,
    pub keep_in: KeepInBox,
    pub keepouts: Vec<Superellipse>,
    /// Symmetric per-axis twist limits.
    pub v_max: [f64; 6],
    pub weights: Weights,
    pub np: usize,
    pub nc: usize,
    pub ts: f64,
    pub tolerances: Tolerances,
    pub pose_box: PoseBox,
    pub max_rejects: usize,
    pub start_pose: Option<CameraPose>,
}

impl Scenario {
    pub fn from_spec(spec: ScenarioSpec) -> Result<Self> {
        let intrinsics = spec.intrinsics;
        intrinsics.validate()?;
        if spec.points3d.len() < 3 {
            return Err(VpcError::Validation("need at least three target points".into()));
        }
        let points: Vec<Vector3<f64>> = spec.points3d.iter().map(|p| Vector3::from(*p)).collect();
        let goal_pose = spec.goal_pose.to_pose()?;
        let s_star = project(&points, &goal_pose, &intrinsics)?;
        let goal_depths = point_depths(&points, &goal_pose);
        let keep_in = spec.keep_in.unwrap_or(KeepInBox {
            u_min: 0.0,
            u_max: intrinsics.width,
            v_min: 0.0,
            v_max: intrinsics.height,
        });
        if !(keep_in.u_min < keep_in.u_max && keep_in.v_min < keep_in.v_max) {
            return Err(VpcError::Validation("keep-in box is empty".into()));
        }
        for (i, e) in spec.keepouts.iter().enumerate() {
            if !(e.au > 0.0 && e.av > 0.0 && e.p_exp >= 2.0) {
                return Err(VpcError::Validation(format!(
                    "keep-out {i} needs positive semi-axes and p_exp >= 2"
                )));
            }
        }
        for (u, v) in s_star.points() {
            if !keep_in.contains(u, v) {
                return Err(VpcError::Validation("goal features leave the keep-in box".into()));
            }
            if let Some(i) = spec.keepouts.iter().position(|e| e.residual(u, v) < 0.0) {
                return Err(VpcError::Validation(format!(
                    "goal features fall inside keep-out {i}"
                )));
            }
        }
        let b = spec.bounds;
        if !(b.v_lin > 0.0 && b.v_ang > 0.0) {
            return Err(VpcError::Validation("velocity bounds must be positive".into()));
        }
        let w = &spec.weights;
        if w.kQ < 0.0 || w.R_diag.iter().any(|r| *r < 0.0) || w.R_floor < 0.0 || w.R_floor > 1.0 {
            return Err(VpcError::Validation("weights must be nonnegative".into()));
        }
        let h = spec.horizon;
        if h.Np < 2 || h.Nc < 1 || h.Nc > h.Np - 1 || !(h.Ts > 0.0) {
            return Err(VpcError::Validation(
                "horizon needs Np >= 2, 1 <= Nc <= Np - 1, Ts > 0".into(),
            ));
        }
        let t = spec.tolerances;
        if !(t.conv_px > 0.0 && t.violation_px >= 0.0 && t.time_limit_s > 0.0) {
            return Err(VpcError::Validation("tolerances must be positive".into()));
        }
        let pb = &spec.sampling.pose_box;
        if pb.lo.iter().zip(&pb.hi).any(|(l, h)| l > h) {
            return Err(VpcError::Validation("pose box has lo > hi".into()));
        }
        let start_pose = spec.start_pose.map(|p| p.to_pose()).transpose()?;

        Ok(Self {
            intrinsics,
            weights: Weights::new(w.kQ, s_star.len(), w.R_diag, w.ramp_radius, w.R_floor),
            v_max: [b.v_lin, b.v_lin, b.v_lin, b.v_ang, b.v_ang, b.v_ang],
            points,
            goal_pose,
            s_star,
            goal_depths,
            keep_in,
            keepouts: spec.keepouts.clone(),
            np: h.Np,
            nc: h.Nc,
            ts: h.Ts,
            tolerances: t,
            pose_box: pb.clone(),
            max_rejects: spec.sampling.max_rejects,
            start_pose,
            spec,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: ScenarioSpec = serde_path_to_error::deserialize(de).map_err(|e| VpcError::Schema {
            path: e.path().to_string(),
            msg: e.inner().to_string(),
        })?;
        Self::from_spec(spec)
    }

    pub fn n_f(&self) -> usize {
        self.s_star.len()
    }

    /// Keep-in box first, then keep-outs in file order.
    pub fn regions(&self) -> Vec<VisibilityRegion> {
        std::iter::once(VisibilityRegion::KeepIn(self.keep_in))
            .chain(self.keepouts.iter().map(|e| VisibilityRegion::KeepOut(*e)))
            .collect()
    }

    pub fn keepout_regions(&self) -> Vec<VisibilityRegion> {
        self.keepouts.iter().map(|e| VisibilityRegion::KeepOut(*e)).collect()
    }

    /// Actuation bounds for `nc` free twists.
    pub fn control_bounds(&self, nc: usize) -> Bounds {
        let hi: Vec<f64> = (0..nc).flat_map(|_| self.v_max).collect();
        Bounds {
            lo: hi.iter().map(|v| -v).collect(),
            hi,
        }
    }

    /// Same scenario with a different preview window length.
    pub fn with_horizon(&self, np: usize) -> Self {
        let mut s = self.clone();
        s.np = np;
        s.nc = s.nc.min(np - 1);
        s.spec.horizon.Np = np;
        s.spec.horizon.Nc = s.nc;
        s
    }

    pub fn without_keepouts(&self) -> Self {
        let mut s = self.clone();
        s.keepouts.clear();
        s.spec.keepouts.clear();
        s
    }

    /// Pose reached from the goal by a sampling-box parameter vector.
    pub fn pose_from_params(&self, p: &[f64; 6]) -> CameraPose {
        let rot = UnitQuaternion::from_euler_angles(p[3], p[4], p[5]);
        self.goal_pose.compose(&Vector3::new(p[0], p[1], p[2]), &rot)
    }

    /// Short content hash of the scenario document.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.spec).expect("scenario serializes");
        let digest = Sha256::digest(text.as_bytes());
        hex::encode(&digest[..8])
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    Scenario::from_json(&text)
}
