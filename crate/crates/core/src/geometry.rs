//! Pinhole camera, ray construction and shortest-distance ray snapping.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};
use crate::skeleton::{Frame, Pose2D, Pose3D};

/// Focal length of the pseudo camera, pixels.
pub const PSEUDO_FOCAL_PX: f64 = 2000.0;

/// Smallest ray parameter (mm) a snapped joint may take.
pub const MIN_RAY_PARAM_MM: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics<S> {
    pub fx: S,
    pub fy: S,
    pub cx: S,
    pub cy: S,
}

impl<S: Real> CameraIntrinsics<S> {
    pub fn new(fx: S, fy: S, cx: S, cy: S) -> Result<Self> {
        if !(fx > S::zero() && fy > S::zero()) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::InvalidArgument(format!("focal lengths must be positive (fx={fx}, fy={fy})")));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy })
    }

    pub fn project_point(&self, p: &[S; 3]) -> [S; 2] {
        [self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy]
    }

    /// Point on the ray through pixel `uv` at camera depth `z`.
    pub fn backproject(&self, uv: &[S; 2], z: S) -> [S; 3] {
        [(uv[0] - self.cx) / self.fx * z, (uv[1] - self.cy) / self.fy * z, z]
    }

    pub fn cast<T: Real>(&self) -> CameraIntrinsics<T> {
        let c = |v: S| T::from_f64_lossy(v.to_f64_lossy());
        CameraIntrinsics { fx: c(self.fx), fy: c(self.fy), cx: c(self.cx), cy: c(self.cy) }
    }
}

impl CameraIntrinsics<f64> {
    pub fn from_json(text: &str) -> Result<Self> {
        let k: Self = serde_json::from_str(text).map_err(|e| Error::parse("intrinsics", e))?;
        Self::new(k.fx, k.fy, k.cx, k.cy)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Square-pixel camera with focal length [`PSEUDO_FOCAL_PX`] centred on the image.
pub fn pseudo_intrinsics<S: Real>(image_width: S, image_height: S) -> Result<CameraIntrinsics<S>> {
    if !(image_width > S::zero() && image_height > S::zero()) {
        return Err(Error::InvalidArgument(format!("image size {image_width}×{image_height}")));
    }
    let two = lit::<S>(2.0);
    CameraIntrinsics::new(lit(PSEUDO_FOCAL_PX), lit(PSEUDO_FOCAL_PX), image_width / two, image_height / two)
}

pub fn project<S: Real>(pose: &Pose3D<S>, k: &CameraIntrinsics<S>) -> Result<Pose2D<S>> {
    let mut pts = Vec::with_capacity(pose.joint_count());
    for (j, p) in pose.coords().iter().enumerate() {
        if !(p[2] > S::zero()) {
            return Err(Error::BehindCamera { joint: j, z: p[2].to_f64_lossy() });
        }
        pts.push(k.project_point(p));
    }
    Pose2D::all_visible(pts)
}

/// Unit directions from the camera centre through each keypoint.
#[derive(Clone, Debug, PartialEq)]
pub struct RayBundle<S> {
    directions: Vec<[S; 3]>,
    visible: Vec<bool>,
}

impl<S: Real> RayBundle<S> {
    pub fn directions(&self) -> &[[S; 3]] {
        &self.directions
    }

    pub fn visible(&self) -> &[bool] {
        &self.visible
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// Point at ray parameter `s` along joint `j`'s ray.
    pub fn point(&self, j: usize, s: S) -> [S; 3] {
        self.directions[j].map(|d| d * s)
    }
}

pub fn rays_from_2d<S: Real>(kp: &Pose2D<S>, k: &CameraIntrinsics<S>) -> RayBundle<S> {
    let directions = kp
        .points()
        .iter()
        .map(|uv| {
            let d = [(uv[0] - k.cx) / k.fx, (uv[1] - k.cy) / k.fy, S::one()];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            d.map(|v| v / n)
        })
        .collect();
    RayBundle { directions, visible: kp.visible().to_vec() }
}

/// Orthogonal projection of each visible joint onto its ray, with the
/// ray parameter clamped below at [`MIN_RAY_PARAM_MM`].
pub fn snap_to_rays<S: Real>(pose: &Pose3D<S>, rays: &RayBundle<S>) -> Result<Pose3D<S>> {
    let (coords, _) = snap_coords(pose.coords(), rays)?;
    Pose3D::new(coords, Frame::CameraAbsolute, pose.topology().clone())
}

/// Snapped coordinates plus, per joint, whether the clamp was active.
pub(crate) fn snap_coords<S: Real>(coords: &[[S; 3]], rays: &RayBundle<S>) -> Result<(Vec<[S; 3]>, Vec<bool>)> {
    if coords.len() != rays.len() {
        return Err(Error::InvalidArgument(format!("{} joints vs {} rays", coords.len(), rays.len())));
    }
    let floor = lit::<S>(MIN_RAY_PARAM_MM);
    let mut clamped = vec![false; coords.len()];
    let out = coords
        .iter()
        .enumerate()
        .map(|(j, x)| {
            if !rays.visible[j] {
                return *x;
            }
            let d = &rays.directions[j];
            let mut s = x[0] * d[0] + x[1] * d[1] + x[2] * d[2];
            if s < floor {
                s = floor;
                clamped[j] = true;
            }
            d.map(|v| v * s)
        })
        .collect();
    Ok((out, clamped))
}

/// Mean pixel distance over visible joints between `project(pose)` and `kp`.
pub fn reprojection_error<S: Real>(pose: &Pose3D<S>, kp: &Pose2D<S>, k: &CameraIntrinsics<S>) -> Result<S> {
    if pose.joint_count() != kp.joint_count() {
        return Err(Error::InvalidArgument("pose and keypoints differ in joint count".into()));
    }
    let mut total = S::zero();
    let mut n = 0usize;
    for (j, p) in pose.coords().iter().enumerate() {
        if !kp.visible()[j] {
            continue;
        }
        if !(p[2] > S::zero()) {
            return Err(Error::BehindCamera { joint: j, z: p[2].to_f64_lossy() });
        }
        let uv = k.project_point(p);
        let t = kp.points()[j];
        total += ((uv[0] - t[0]).powi(2) + (uv[1] - t[1]).powi(2)).sqrt();
        n += 1;
    }
    if n == 0 {
        return Err(Error::InsufficientEvidence("no visible joints".into()));
    }
    Ok(total / S::from_usize(n).unwrap())
}
