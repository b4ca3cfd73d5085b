//! JSON-lines pose records.
//!
//! One record per line:
//! `{"id", "domain", "augmented", "pose3d": [[x,y,z]...], "pose2d": [[u,v,vis]...], "intrinsics": {...}}`.
//! `pose3d`, `pose2d` and `intrinsics` may be omitted or null, but every
//! record carries at least one pose, and 2D-3D pairs carry intrinsics.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::skeleton::{Frame, Pose2D, Pose3D, SkeletonTopology};

#[derive(Clone, Debug, PartialEq)]
pub struct PoseRecord {
    pub id: String,
    pub domain: String,
    pub augmented: bool,
    pub pose3d: Option<Pose3D<f64>>,
    pub pose2d: Option<Pose2D<f64>>,
    pub intrinsics: Option<CameraIntrinsics<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    domain: String,
    #[serde(default)]
    augmented: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pose3d: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pose2d: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intrinsics: Option<CameraIntrinsics<f64>>,
}

impl PoseRecord {
    pub fn joint_count(&self) -> usize {
        match (&self.pose3d, &self.pose2d) {
            (Some(p), _) => p.joint_count(),
            (None, Some(k)) => k.joint_count(),
            (None, None) => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pose3d.is_none() && self.pose2d.is_none() {
            return Err(Error::InvalidArgument(format!("record '{}' has neither pose3d nor pose2d", self.id)));
        }
        if let (Some(p), Some(k)) = (&self.pose3d, &self.pose2d) {
            if p.joint_count() != k.joint_count() {
                return Err(Error::TopologyMismatch(format!("record '{}': 3D and 2D joint counts differ", self.id)));
            }
            if self.intrinsics.is_none() {
                return Err(Error::InvalidArgument(format!("record '{}': 2D-3D pair without intrinsics", self.id)));
            }
        }
        Ok(())
    }

    fn to_raw(&self) -> RawRecord {
        RawRecord {
            id: self.id.clone(),
            domain: self.domain.clone(),
            augmented: self.augmented,
            pose3d: self.pose3d.as_ref().map(|p| p.coords().to_vec()),
            pose2d: self.pose2d.as_ref().map(|k| {
                k.points()
                    .iter()
                    .zip(k.visible())
                    .map(|(p, &v)| [p[0], p[1], if v { 1.0 } else { 0.0 }])
                    .collect()
            }),
            intrinsics: self.intrinsics,
        }
    }

    fn from_raw(raw: RawRecord, topology: Option<&Arc<SkeletonTopology>>) -> Result<Self> {
        let count = raw.pose3d.as_ref().map(Vec::len).or(raw.pose2d.as_ref().map(Vec::len)).unwrap_or(0);
        let topo = match topology {
            Some(t) => t.clone(),
            None => Arc::new(
                SkeletonTopology::builtin_for_count(count)
                    .ok_or_else(|| Error::TopologyMismatch(format!("no built-in skeleton with {count} joints")))?,
            ),
        };
        let pose3d = match raw.pose3d {
            Some(c) => {
                let frame = if c.get(topo.root_index) == Some(&[0.0; 3]) { Frame::RootRelative } else { Frame::CameraAbsolute };
                Some(Pose3D::new(c, frame, topo.clone())?)
            }
            None => None,
        };
        let pose2d = match raw.pose2d {
            Some(k) => {
                let pts = k.iter().map(|p| [p[0], p[1]]).collect();
                let vis = k.iter().map(|p| p[2] != 0.0).collect();
                Some(Pose2D::new(pts, vis)?)
            }
            None => None,
        };
        let intrinsics = match raw.intrinsics {
            Some(k) => Some(CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy)?),
            None => None,
        };
        let rec = PoseRecord { id: raw.id, domain: raw.domain, augmented: raw.augmented, pose3d, pose2d, intrinsics };
        rec.validate()?;
        Ok(rec)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_raw()).expect("plain data serializes")
    }
}

/// Loads records, inferring the skeleton from each record's joint count.
pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<PoseRecord>> {
    load_records_with(path, None)
}

/// Loads records against an explicit skeleton.
pub fn load_records_with(path: impl AsRef<Path>, topology: Option<&Arc<SkeletonTopology>>) -> Result<Vec<PoseRecord>> {
    let path = path.as_ref();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let locus = format!("{}:{}", path.display(), i + 1);
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::parse(&locus, e))?;
        out.push(PoseRecord::from_raw(raw, topology).map_err(|e| Error::parse(&locus, e))?);
    }
    if out.is_empty() {
        return Err(Error::EmptyInput(format!("no records in {}", path.display())));
    }
    Ok(out)
}

pub fn save_records(records: &[PoseRecord], path: impl AsRef<Path>) -> Result<()> {
    for r in records {
        r.validate()?;
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        writeln!(w, "{}", r.to_json_line())?;
    }
    w.flush()?;
    Ok(())
}
