//! Joint sets, kinematic trees, poses and bone statistics.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Kinematic tree over a named joint set. The root is its own parent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub name: String,
    #[serde(rename = "joints")]
    pub joint_names: Vec<String>,
    pub parents: Vec<usize>,
    #[serde(rename = "root")]
    pub root_index: usize,
}

pub const H36M_17_JOINTS: [&str; 17] = [
    "pelvis",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
    "spine",
    "thorax",
    "neck",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
];

const H36M_17_PARENTS: [usize; 17] = [0, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15];

/// Joint removed by the default 16-joint protocol.
pub const H36M_16_DROPPED: &str = "neck";

const LIMB_JOINTS: [&str; 12] = [
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
];

impl SkeletonTopology {
    pub fn new(name: impl Into<String>, joint_names: Vec<String>, parents: Vec<usize>, root_index: usize) -> Result<Self> {
        let t = SkeletonTopology { name: name.into(), joint_names, parents, root_index };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let j = self.parents.len();
        let bad = |m: String| Err(Error::InvalidArgument(format!("topology '{}': {m}", self.name)));
        if j == 0 {
            return bad("no joints".into());
        }
        if self.joint_names.len() != j {
            return bad(format!("{} names for {j} parents", self.joint_names.len()));
        }
        if self.root_index >= j || self.parents[self.root_index] != self.root_index {
            return bad("root must exist and be its own parent".into());
        }
        for (i, name) in self.joint_names.iter().enumerate() {
            if self.joint_names[..i].contains(name) {
                return bad(format!("duplicate joint name '{name}'"));
            }
        }
        for start in 0..j {
            let mut cur = start;
            let mut hops = 0;
            while cur != self.root_index {
                let p = self.parents[cur];
                if p >= j || p == cur || hops > j {
                    return bad(format!("joint {start} does not reach the root"));
                }
                cur = p;
                hops += 1;
            }
        }
        Ok(())
    }

    pub fn h36m_17() -> Self {
        Self::new(
            "H36M-17",
            H36M_17_JOINTS.iter().map(|s| s.to_string()).collect(),
            H36M_17_PARENTS.to_vec(),
            0,
        )
        .expect("built-in topology is valid")
    }

    /// H36M-17 minus [`H36M_16_DROPPED`].
    pub fn h36m_16() -> Self {
        Self::h36m_17().without_joint("H36M-16", H36M_16_DROPPED).expect("built-in topology is valid")
    }

    /// Limb joints only, rooted at the right hip.
    pub fn limbs_12() -> Self {
        let names: Vec<String> = LIMB_JOINTS.iter().map(|s| s.to_string()).collect();
        let parents = vec![0, 0, 1, 0, 3, 4, 3, 6, 7, 0, 9, 10];
        Self::new("LIMBS-12", names, parents, 0).expect("built-in topology is valid")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "H36M-17" => Some(Self::h36m_17()),
            "H36M-16" => Some(Self::h36m_16()),
            "LIMBS-12" => Some(Self::limbs_12()),
            _ => None,
        }
    }

    /// Built-in topology with `joint_count` joints, if there is exactly one.
    pub fn builtin_for_count(joint_count: usize) -> Option<Self> {
        match joint_count {
            17 => Some(Self::h36m_17()),
            16 => Some(Self::h36m_16()),
            12 => Some(Self::limbs_12()),
            _ => None,
        }
    }

    /// Removes one non-root joint, re-parenting its children to its parent.
    pub fn without_joint(&self, name: impl Into<String>, joint: &str) -> Result<Self> {
        let drop = self
            .index_of(joint)
            .ok_or_else(|| Error::TopologyMismatch(format!("'{}' has no joint '{joint}'", self.name)))?;
        if drop == self.root_index {
            return Err(Error::InvalidArgument("cannot drop the root joint".into()));
        }
        let remap = |i: usize| if i > drop { i - 1 } else { i };
        let mut names = Vec::new();
        let mut parents = Vec::new();
        for i in 0..self.joint_count() {
            if i == drop {
                continue;
            }
            let mut p = self.parents[i];
            if p == drop {
                p = self.parents[drop];
            }
            names.push(self.joint_names[i].clone());
            parents.push(remap(p));
        }
        Self::new(name, names, parents, remap(self.root_index))
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn index_of(&self, joint: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == joint)
    }

    pub fn children(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.joint_count()).filter(move |&c| c != self.root_index && self.parents[c] == j)
    }

    /// `(parent, child)` for every non-root joint, in joint order.
    pub fn bones(&self) -> Vec<(usize, usize)> {
        (0..self.joint_count()).filter(|&c| c != self.root_index).map(|c| (self.parents[c], c)).collect()
    }

    /// `(parent, joint, child)` triples at every joint with a parent bone
    /// and at least one child bone; one triple per child.
    pub fn angle_triples(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.joint_count() {
            if j == self.root_index {
                continue;
            }
            for c in self.children(j) {
                out.push((self.parents[j], j, c));
            }
        }
        out
    }

    /// Source index of every target joint, matched by name.
    pub fn subset_indices(&self, target: &SkeletonTopology) -> Result<Vec<usize>> {
        target
            .joint_names
            .iter()
            .map(|n| {
                self.index_of(n).ok_or_else(|| {
                    Error::TopologyMismatch(format!("'{}' is not a subset of '{}' (missing '{n}')", target.name, self.name))
                })
            })
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: SkeletonTopology = serde_json::from_str(text).map_err(|e| Error::parse("topology", e))?;
        t.validate()?;
        Ok(t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("topology serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    RootRelative,
    CameraAbsolute,
}

/// `J×3` joint coordinates in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose3D<S> {
    coords: Vec<[S; 3]>,
    frame: Frame,
    topology: Arc<SkeletonTopology>,
}

impl<S: Real> Pose3D<S> {
    pub fn new(coords: Vec<[S; 3]>, frame: Frame, topology: Arc<SkeletonTopology>) -> Result<Self> {
        if coords.len() != topology.joint_count() {
            return Err(Error::InvalidPose(format!(
                "{} joints for topology '{}' of {}",
                coords.len(),
                topology.name,
                topology.joint_count()
            )));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPose("non-finite coordinate".into()));
        }
        if frame == Frame::RootRelative && coords[topology.root_index] != [S::zero(); 3] {
            return Err(Error::InvalidPose("root-relative pose with non-zero root".into()));
        }
        Ok(Pose3D { coords, frame, topology })
    }

    pub fn coords(&self) -> &[[S; 3]] {
        &self.coords
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn topology(&self) -> &Arc<SkeletonTopology> {
        &self.topology
    }

    pub fn joint_count(&self) -> usize {
        self.coords.len()
    }

    pub fn root(&self) -> [S; 3] {
        self.coords[self.topology.root_index]
    }

    /// Row-major `3J` flattening.
    pub fn flatten(&self) -> Vec<S> {
        self.coords.iter().flatten().copied().collect()
    }

    /// Inverse of [`flatten`](Self::flatten). Root-relative results are
    /// re-zeroed at the root.
    pub fn from_flat(flat: &[S], frame: Frame, topology: Arc<SkeletonTopology>) -> Result<Self> {
        if flat.len() != 3 * topology.joint_count() {
            return Err(Error::InvalidPose(format!("flat length {} for {} joints", flat.len(), topology.joint_count())));
        }
        let mut coords: Vec<[S; 3]> = flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        if frame == Frame::RootRelative {
            coords[topology.root_index] = [S::zero(); 3];
        }
        Self::new(coords, frame, topology)
    }

    pub fn translated(&self, v: [S; 3]) -> Result<Self> {
        let coords = self.coords.iter().map(|c| [c[0] + v[0], c[1] + v[1], c[2] + v[2]]).collect();
        Self::new(coords, Frame::CameraAbsolute, self.topology.clone())
    }

    /// Reinterprets the coordinates as camera-frame absolute.
    pub fn into_absolute(self) -> Self {
        Pose3D { frame: Frame::CameraAbsolute, ..self }
    }

    pub fn cast<T: Real>(&self) -> Pose3D<T> {
        Pose3D {
            coords: self.coords.iter().map(|c| c.map(|v| T::from_f64_lossy(v.to_f64_lossy()))).collect(),
            frame: self.frame,
            topology: self.topology.clone(),
        }
    }

    pub fn bone_length(&self, parent: usize, child: usize) -> S {
        dist(&self.coords[parent], &self.coords[child])
    }
}

/// `J×2` pixel coordinates with per-joint visibility.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose2D<S> {
    points: Vec<[S; 2]>,
    visible: Vec<bool>,
}

impl<S: Real> Pose2D<S> {
    pub fn new(points: Vec<[S; 2]>, visible: Vec<bool>) -> Result<Self> {
        if points.len() != visible.len() {
            return Err(Error::InvalidPose(format!("{} points with {} visibility flags", points.len(), visible.len())));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPose("non-finite keypoint".into()));
        }
        Ok(Pose2D { points, visible })
    }

    pub fn all_visible(points: Vec<[S; 2]>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![true; n])
    }

    pub fn points(&self) -> &[[S; 2]] {
        &self.points
    }

    pub fn visible(&self) -> &[bool] {
        &self.visible
    }

    pub fn joint_count(&self) -> usize {
        self.points.len()
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    pub fn with_visibility(mut self, visible: Vec<bool>) -> Result<Self> {
        if visible.len() != self.points.len() {
            return Err(Error::InvalidPose("visibility length mismatch".into()));
        }
        self.visible = visible;
        Ok(self)
    }

    pub fn cast<T: Real>(&self) -> Pose2D<T> {
        Pose2D {
            points: self.points.iter().map(|c| c.map(|v| T::from_f64_lossy(v.to_f64_lossy()))).collect(),
            visible: self.visible.clone(),
        }
    }
}

pub(crate) fn dist<S: Real>(a: &[S; 3], b: &[S; 3]) -> S {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Subtracts the root joint from every joint.
pub fn to_root_relative<S: Real>(pose: &Pose3D<S>) -> Result<Pose3D<S>> {
    if pose.coords.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidPose("non-finite coordinate".into()));
    }
    let r = pose.root();
    let coords = pose.coords.iter().map(|c| [c[0] - r[0], c[1] - r[1], c[2] - r[2]]).collect();
    Pose3D::new(coords, Frame::RootRelative, pose.topology.clone())
}

/// Restricts a pose to the joints of `target`, in target order.
pub fn select_joints<S: Real>(pose: &Pose3D<S>, target: &Arc<SkeletonTopology>) -> Result<Pose3D<S>> {
    let idx = pose.topology.subset_indices(target)?;
    let coords: Vec<[S; 3]> = idx.iter().map(|&i| pose.coords[i]).collect();
    let root_kept = coords[target.root_index] == [S::zero(); 3];
    let frame = if pose.frame == Frame::RootRelative && root_kept { Frame::RootRelative } else { Frame::CameraAbsolute };
    Pose3D::new(coords, frame, target.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    /// Population statistics; `values` must be non-empty.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Summary {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoneStat {
    pub parent: usize,
    pub child: usize,
    pub name: String,
    pub length_mm: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleStat {
    pub parent: usize,
    pub joint: usize,
    pub child: usize,
    pub name: String,
    pub angle_rad: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoneStats {
    pub bone_lengths: Vec<BoneStat>,
    pub bone_angles: Vec<AngleStat>,
}

/// Raw per-bone lengths and per-triple angles, one inner vector per
/// tracked quantity, in [`SkeletonTopology::bones`] /
/// [`SkeletonTopology::angle_triples`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct BoneSamples {
    pub topology: Arc<SkeletonTopology>,
    pub lengths: Vec<Vec<f64>>,
    pub angles: Vec<Vec<f64>>,
}

/// Angle between the segments `j→a` and `j→b`, in `[0, π]`.
pub fn joint_angle<S: Real>(a: &[S; 3], j: &[S; 3], b: &[S; 3]) -> S {
    let u = [a[0] - j[0], a[1] - j[1], a[2] - j[2]];
    let v = [b[0] - j[0], b[1] - j[1], b[2] - j[2]];
    let cross = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    let cn = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    let dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    cn.atan2(dot)
}

pub fn bone_samples<S: Real>(poses: &[Pose3D<S>]) -> Result<BoneSamples> {
    let first = poses.first().ok_or_else(|| Error::EmptyInput("no poses for bone statistics".into()))?;
    let topo = first.topology.clone();
    if poses.iter().any(|p| *p.topology != *topo) {
        return Err(Error::TopologyMismatch("poses use different topologies".into()));
    }
    let bones = topo.bones();
    let triples = topo.angle_triples();
    let mut lengths = vec![Vec::with_capacity(poses.len()); bones.len()];
    let mut angles = vec![Vec::with_capacity(poses.len()); triples.len()];
    for p in poses {
        for (k, &(pa, c)) in bones.iter().enumerate() {
            lengths[k].push(p.bone_length(pa, c).to_f64_lossy());
        }
        for (k, &(pa, j, c)) in triples.iter().enumerate() {
            angles[k].push(joint_angle(&p.coords[pa], &p.coords[j], &p.coords[c]).to_f64_lossy());
        }
    }
    Ok(BoneSamples { topology: topo, lengths, angles })
}

pub fn bone_stats<S: Real>(poses: &[Pose3D<S>]) -> Result<BoneStats> {
    Ok(bone_samples(poses)?.summarize())
}

impl BoneSamples {
    pub fn summarize(&self) -> BoneStats {
        let t = &self.topology;
        let n = |i: usize| t.joint_names[i].as_str();
        BoneStats {
            bone_lengths: t
                .bones()
                .into_iter()
                .zip(&self.lengths)
                .map(|((p, c), v)| BoneStat { parent: p, child: c, name: format!("{}-{}", n(p), n(c)), length_mm: Summary::of(v) })
                .collect(),
            bone_angles: t
                .angle_triples()
                .into_iter()
                .zip(&self.angles)
                .map(|((p, j, c), v)| AngleStat {
                    parent: p,
                    joint: j,
                    child: c,
                    name: format!("{}-{}-{}", n(p), n(j), n(c)),
                    angle_rad: Summary::of(v),
                })
                .collect(),
        }
    }
}

impl BoneStats {
    /// Mean over bones of the per-bone mean length.
    pub fn mean_bone_length(&self) -> f64 {
        self.bone_lengths.iter().map(|b| b.length_mm.mean).sum::<f64>() / self.bone_lengths.len().max(1) as f64
    }
}
