//! Pose records, the synthetic two-domain generator, splits and MPJPE.
//!
//! # Converting real datasets
//!
//! Real datasets are not bundled. A converter writes one JSON-lines record
//! per frame (see [`records`]) with joints in H36M-17 order (or the 16/12
//! joint subsets), millimetres, camera frame:
//!
//! - MINI-RGBD: per sequence, `joints_2Ddep/syn_joints_2Ddep_XXXXX.txt`
//!   holds 25 SMIL joints as `u v depth` rows; map them to the H36M subset,
//!   back-project with the sequence intrinsics, and use `seqNN/frame` ids so
//!   [`SplitScheme::ByTag`] can split by sequence.
//! - SyRIP: COCO-style 2D annotation JSON plus per-image 3D joints; export
//!   17 keypoints, `[u, v, vis]` with `vis` from the COCO visibility flag.
//! - Human3.6M: `S*/MyPoses/3D_positions/*.cdf` world coordinates; apply
//!   each camera's extrinsics, select the 17 standard joints, and store the
//!   camera's intrinsics per record.

pub mod metrics;
pub mod records;
pub mod split;
pub mod synth;

pub use metrics::{joint_errors, mean_mpjpe, mpjpe, Alignment};
pub use records::{load_records, load_records_with, save_records, PoseRecord};
pub use split::{sequence_tag, split, SplitScheme};
pub use synth::{synth_generate, synth_poses, template_bone_length, SynthConfig, TEMPLATE_OFFSETS_MM};

use crate::error::{Error, Result};
use crate::skeleton::{to_root_relative, Pose3D};

/// Root-relative 3D poses of all records that carry one.
pub fn root_relative_poses(records: &[PoseRecord]) -> Result<Vec<Pose3D<f64>>> {
    let out: Vec<_> = records
        .iter()
        .filter_map(|r| r.pose3d.as_ref())
        .map(to_root_relative)
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::EmptyInput("no 3D poses in record set".into()));
    }
    Ok(out)
}
