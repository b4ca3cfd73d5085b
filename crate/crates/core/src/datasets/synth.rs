//! Articulated H36M-17 skeleton generator.
//!
//! Poses are produced by forward kinematics from a rest pose: each joint's
//! local rotation is an axis-angle vector drawn per axis from
//! `N(0, (pose_variation·k)²)` and folded into that axis' limits. Bone
//! offsets are the template scaled by `bone_scale`, so bone lengths are
//! exactly `template × scale` for every sample.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::datasets::records::PoseRecord;
use crate::error::{Error, Result};
use crate::geometry::{project, pseudo_intrinsics, CameraIntrinsics};
use crate::numerics::SeededRng;
use crate::skeleton::{Frame, Pose3D, SkeletonTopology};

/// Rest-pose offset of each joint from its parent, adult scale, mm.
/// Camera axes: x right, y down, z away from the camera; the subject
/// faces the camera, so its right side is at negative x.
pub const TEMPLATE_OFFSETS_MM: [[f64; 3]; 17] = [
    [0.0, 0.0, 0.0],        // pelvis
    [-130.0, 0.0, 0.0],     // r_hip
    [0.0, 440.0, -50.0],    // r_knee
    [0.0, 420.0, 60.0],     // r_ankle
    [130.0, 0.0, 0.0],      // l_hip
    [0.0, 440.0, -50.0],    // l_knee
    [0.0, 420.0, 60.0],     // l_ankle
    [0.0, -230.0, -10.0],   // spine
    [0.0, -240.0, -30.0],   // thorax
    [0.0, -100.0, -40.0],   // neck
    [0.0, -110.0, 10.0],    // head
    [150.0, 0.0, 10.0],     // l_shoulder
    [30.0, 270.0, -40.0],   // l_elbow
    [0.0, 160.0, -180.0],   // l_wrist
    [-150.0, 0.0, 10.0],    // r_shoulder
    [-30.0, 270.0, -40.0],  // r_elbow
    [0.0, 160.0, -180.0],   // r_wrist
];

/// Per joint, per axis: (std multiplier, lower limit, upper limit), rad.
/// Rotation at a joint moves its descendants.
const JOINT_LIMITS: [[(f64, f64, f64); 3]; 17] = {
    const FREE: (f64, f64, f64) = (0.0, 0.0, 0.0);
    const fn ax(k: f64, lo: f64, hi: f64) -> (f64, f64, f64) {
        (k, lo, hi)
    }
    [
        [ax(0.5, -0.6, 0.6), ax(1.0, -1.2, 1.2), ax(0.3, -0.4, 0.4)], // pelvis: global orientation
        [ax(1.0, -1.2, 0.5), ax(0.5, -0.6, 0.6), ax(0.5, -0.3, 0.8)], // r_hip
        [ax(2.0, 0.0, 2.2), FREE, FREE],                              // r_knee: one-sided hinge
        [FREE, FREE, FREE],
        [ax(1.0, -1.2, 0.5), ax(0.5, -0.6, 0.6), ax(0.5, -0.8, 0.3)], // l_hip
        [ax(2.0, 0.0, 2.2), FREE, FREE],                              // l_knee
        [FREE, FREE, FREE],
        [ax(0.8, -0.6, 0.4), ax(0.8, -0.5, 0.5), ax(0.6, -0.4, 0.4)], // spine
        [ax(0.5, -0.3, 0.3), ax(0.5, -0.3, 0.3), ax(0.3, -0.2, 0.2)], // thorax
        [ax(1.0, -0.6, 0.6), ax(1.0, -0.8, 0.8), ax(0.5, -0.4, 0.4)], // neck
        [FREE, FREE, FREE],
        [ax(1.5, -1.6, 1.6), ax(1.0, -1.0, 1.0), ax(1.5, -1.6, 0.4)], // l_shoulder
        [ax(2.0, -2.3, 0.0), FREE, FREE],                             // l_elbow: one-sided hinge
        [FREE, FREE, FREE],
        [ax(1.5, -1.6, 1.6), ax(1.0, -1.0, 1.0), ax(1.5, -0.4, 1.6)], // r_shoulder
        [ax(2.0, -2.3, 0.0), FREE, FREE],                             // r_elbow
        [FREE, FREE, FREE],
    ]
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    /// 1.0 ≈ adult, 0.5 ≈ infant.
    pub bone_scale: f64,
    /// Angular standard deviation, radians.
    pub pose_variation: f64,
    pub seed: u64,
    pub camera: CameraIntrinsics<f64>,
    /// Root depth interval, mm.
    pub root_depth_range: (f64, f64),
    /// Root lateral offset bound (x and y), mm.
    pub root_lateral_mm: f64,
    pub domain: String,
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 1000,
            bone_scale: 1.0,
            pose_variation: 0.3,
            seed: 0,
            camera: pseudo_intrinsics(1000.0, 1000.0).expect("valid"),
            root_depth_range: (3000.0, 6000.0),
            root_lateral_mm: 300.0,
            domain: "adult".into(),
            id_prefix: "synth".into(),
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.root_depth_range;
        if self.n == 0 || !(self.bone_scale > 0.0) || !(self.pose_variation >= 0.0) || !(lo > 0.0 && lo <= hi) {
            return Err(Error::InvalidArgument(format!("invalid synth config {self:?}")));
        }
        if !(self.root_lateral_mm >= 0.0) {
            return Err(Error::InvalidArgument("negative lateral bound".into()));
        }
        Ok(())
    }
}

fn rodrigues(v: [f64; 3]) -> [[f64; 3]; 3] {
    crate::lifter::rotation::exp_so3(v)
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn apply(a: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

/// Folds `x` back into `[lo, hi]` by reflection at the limits.
fn fold(x: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    let w = hi - lo;
    let mut y = (x - lo).rem_euclid(2.0 * w);
    if y > w {
        y = 2.0 * w - y;
    }
    lo + y
}

/// One root-relative pose from explicit local rotations.
fn forward_kinematics(local: &[[f64; 3]; 17], scale: f64) -> Vec<[f64; 3]> {
    let topo_parents = [0usize, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15];
    let mut world_rot = [[[0.0; 3]; 3]; 17];
    let mut pos = vec![[0.0; 3]; 17];
    world_rot[0] = rodrigues(local[0]);
    for j in 1..17 {
        let p = topo_parents[j];
        let off = TEMPLATE_OFFSETS_MM[j].map(|v| v * scale);
        let d = apply(&world_rot[p], &off);
        pos[j] = [pos[p][0] + d[0], pos[p][1] + d[1], pos[p][2] + d[2]];
        world_rot[j] = matmul3(&world_rot[p], &rodrigues(local[j]));
    }
    pos
}

/// Draws local joint rotations.
fn sample_rotations(rng: &mut SeededRng, variation: f64) -> [[f64; 3]; 17] {
    let mut out = [[0.0; 3]; 17];
    for (j, lim) in JOINT_LIMITS.iter().enumerate() {
        for (a, &(k, lo, hi)) in lim.iter().enumerate() {
            let z: f64 = rng.normal();
            out[j][a] = if k == 0.0 { 0.0 } else { fold(z * variation * k, lo, hi) };
        }
    }
    out
}

/// Root-relative synthetic poses only (no camera placement).
pub fn synth_poses(n: usize, bone_scale: f64, pose_variation: f64, seed: u64) -> Vec<Pose3D<f64>> {
    let topo = Arc::new(SkeletonTopology::h36m_17());
    let mut rng = SeededRng::new(seed);
    (0..n)
        .map(|_| {
            let rot = sample_rotations(&mut rng, pose_variation);
            let coords = forward_kinematics(&rot, bone_scale);
            Pose3D::new(coords, Frame::RootRelative, topo.clone()).expect("finite by construction")
        })
        .collect()
}

/// Template bone length of `child` (to its parent) at the given scale.
pub fn template_bone_length(child: usize, scale: f64) -> f64 {
    let o = TEMPLATE_OFFSETS_MM[child];
    (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt() * scale
}

/// Samples `cfg.n` posed skeletons placed in front of the camera, with
/// exact 2D projections.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<PoseRecord>> {
    cfg.validate()?;
    let topo = Arc::new(SkeletonTopology::h36m_17());
    let mut rng = SeededRng::new(cfg.seed);
    let (lo, hi) = cfg.root_depth_range;
    let mut out = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let rot = sample_rotations(&mut rng, cfg.pose_variation);
        let rel = forward_kinematics(&rot, cfg.bone_scale);
        let root = [
            rng.uniform_in(-cfg.root_lateral_mm, cfg.root_lateral_mm),
            rng.uniform_in(-cfg.root_lateral_mm, cfg.root_lateral_mm),
            rng.uniform_in(lo, hi),
        ];
        let coords: Vec<[f64; 3]> = rel.iter().map(|c| [c[0] + root[0], c[1] + root[1], c[2] + root[2]]).collect();
        let pose = Pose3D::new(coords, Frame::CameraAbsolute, topo.clone())?;
        let kp = project(&pose, &cfg.camera)?;
        out.push(PoseRecord {
            id: format!("{}-{i:06}", cfg.id_prefix),
            domain: cfg.domain.clone(),
            augmented: false,
            pose3d: Some(pose),
            pose2d: Some(kp),
            intrinsics: Some(cfg.camera),
        });
    }
    Ok(out)
}
