use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::skeleton::{dist, Pose3D};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Alignment {
    #[default]
    RootAligned,
    None,
}

/// Per-joint Euclidean errors, mm.
pub fn joint_errors<S: Real>(pred: &Pose3D<S>, gt: &Pose3D<S>, alignment: Alignment) -> Result<Vec<S>> {
    if pred.topology() != gt.topology() && pred.topology().joint_names != gt.topology().joint_names {
        return Err(Error::TopologyMismatch(format!(
            "'{}' vs '{}'",
            pred.topology().name,
            gt.topology().name
        )));
    }
    let (rp, rg) = match alignment {
        Alignment::RootAligned => (pred.root(), gt.root()),
        Alignment::None => ([S::zero(); 3], [S::zero(); 3]),
    };
    Ok(pred
        .coords()
        .iter()
        .zip(gt.coords())
        .map(|(p, g)| {
            let a = [p[0] - rp[0], p[1] - rp[1], p[2] - rp[2]];
            let b = [g[0] - rg[0], g[1] - rg[1], g[2] - rg[2]];
            dist(&a, &b)
        })
        .collect())
}

/// Mean per-joint position error, mm.
pub fn mpjpe<S: Real>(pred: &Pose3D<S>, gt: &Pose3D<S>, alignment: Alignment) -> Result<S> {
    let e = joint_errors(pred, gt, alignment)?;
    let n = S::from_usize(e.len()).expect("count fits");
    Ok(e.into_iter().fold(S::zero(), |a, b| a + b) / n)
}

/// Mean of `mpjpe` over paired pose sets.
pub fn mean_mpjpe<S: Real>(pred: &[Pose3D<S>], gt: &[Pose3D<S>], alignment: Alignment) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!("{} predictions for {} targets", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("no poses to evaluate".into()));
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        total += mpjpe(p, g, alignment)?.to_f64_lossy();
    }
    Ok(total / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::synth::synth_poses;
    use proptest::prelude::*;

    fn brute(p: &Pose3D<f64>, g: &Pose3D<f64>, root: usize, align: bool) -> f64 {
        let mut s = 0.0;
        for j in 0..p.joint_count() {
            let mut d2 = 0.0;
            for a in 0..3 {
                let (mut x, mut y) = (p.coords()[j][a], g.coords()[j][a]);
                if align {
                    x -= p.coords()[root][a];
                    y -= g.coords()[root][a];
                }
                d2 += (x - y) * (x - y);
            }
            s += d2.sqrt();
        }
        s / p.joint_count() as f64
    }

    #[test]
    fn identity_and_translation() {
        let p = synth_poses(1, 1.0, 0.3, 1).remove(0).into_absolute();
        assert_eq!(mpjpe(&p, &p, Alignment::RootAligned).unwrap(), 0.0);
        let q = p.translated([10.0, 0.0, 0.0]).unwrap();
        assert!(mpjpe(&q, &p, Alignment::RootAligned).unwrap().abs() < 1e-12);
        assert!((mpjpe(&q, &p, Alignment::None).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn topology_mismatch() {
        use crate::skeleton::{select_joints, SkeletonTopology};
        use std::sync::Arc;
        let p = synth_poses(1, 1.0, 0.3, 1).remove(0);
        let q = select_joints(&p, &Arc::new(SkeletonTopology::h36m_16())).unwrap();
        assert!(matches!(mpjpe(&p, &q, Alignment::None), Err(Error::TopologyMismatch(_))));
    }

    proptest! {
        #[test]
        fn matches_brute_force_and_is_pseudometric(seed in 0u64..500, t in prop::array::uniform3(-500.0f64..500.0)) {
            let ps = synth_poses(2, 1.0, 0.5, seed);
            let a = ps[0].clone().into_absolute().translated([0.0, 0.0, 3000.0]).unwrap();
            let b = ps[1].clone().into_absolute().translated(t).unwrap();
            for (al, flag) in [(Alignment::RootAligned, true), (Alignment::None, false)] {
                let m = mpjpe(&a, &b, al).unwrap();
                prop_assert!((m - brute(&a, &b, 0, flag)).abs() < 1e-9);
                prop_assert!(m >= 0.0);
                prop_assert!((m - mpjpe(&b, &a, al).unwrap()).abs() < 1e-9);
            }
            let ra = mpjpe(&a, &b, Alignment::RootAligned).unwrap();
            let shifted = a.translated(t).unwrap();
            prop_assert!((mpjpe(&shifted, &b, Alignment::RootAligned).unwrap() - ra).abs() < 1e-9);
        }
    }
}
