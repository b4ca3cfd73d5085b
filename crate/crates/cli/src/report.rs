//! Report structures and their stdout tables.

use std::collections::HashMap;
use std::sync::Arc;

use poselift::datasets::{joint_errors, Alignment, PoseRecord};
use poselift::skeleton::{select_joints, to_root_relative, BoneSamples, BoneStats, Pose3D, SkeletonTopology};
use poselift::{Error, Result};
use serde::Serialize;

pub fn kv_table(rows: &[(&str, String)]) -> String {
    let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<w$}  {v}")).collect::<Vec<_>>().join("\n")
}

#[derive(Serialize)]
pub struct JointError {
    pub joint: String,
    pub mpjpe: f64,
}

#[derive(Serialize)]
pub struct ErrorSummary {
    pub mean: f64,
    pub median: f64,
    pub per_joint: Vec<JointError>,
}

#[derive(Serialize)]
pub struct SettingReport {
    pub skeleton: String,
    pub joints: usize,
    /// Both poses translated to the source skeleton root before selection.
    pub root_aligned: ErrorSummary,
    pub absolute: ErrorSummary,
}

#[derive(Serialize)]
pub struct EvalReport {
    pub pairs: usize,
    pub settings: Vec<SettingReport>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn summarize(pairs: &[(Pose3D<f64>, Pose3D<f64>)], target: &Arc<SkeletonTopology>) -> Result<ErrorSummary> {
    let j = target.joint_count();
    let mut per_pose = Vec::with_capacity(pairs.len());
    let mut per_joint = vec![0.0; j];
    for (p, g) in pairs {
        let e = joint_errors(&select_joints(p, target)?, &select_joints(g, target)?, Alignment::None)?;
        per_pose.push(e.iter().sum::<f64>() / j as f64);
        for (acc, v) in per_joint.iter_mut().zip(&e) {
            *acc += v;
        }
    }
    let n = pairs.len() as f64;
    Ok(ErrorSummary {
        mean: per_pose.iter().sum::<f64>() / n,
        median: median(&mut per_pose),
        per_joint: target
            .joint_names
            .iter()
            .zip(per_joint)
            .map(|(name, v)| JointError { joint: name.clone(), mpjpe: v / n })
            .collect(),
    })
}

pub fn evaluate(pred: &[PoseRecord], gt: &[PoseRecord]) -> Result<EvalReport> {
    let by_id: HashMap<&str, &PoseRecord> = pred.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut raw = Vec::new();
    for g in gt.iter().filter(|g| g.pose3d.is_some()) {
        let p = by_id.get(g.id.as_str()).ok_or_else(|| Error::InvalidArgument(format!("no prediction for '{}'", g.id)))?;
        let pp = p.pose3d.clone().ok_or_else(|| Error::InvalidArgument(format!("prediction '{}' has no 3D pose", g.id)))?;
        raw.push((pp, g.pose3d.clone().expect("filtered")));
    }
    if raw.is_empty() {
        return Err(Error::EmptyInput("no ground-truth 3D poses".into()));
    }
    let aligned: Vec<(Pose3D<f64>, Pose3D<f64>)> =
        raw.iter().map(|(p, g)| Ok((to_root_relative(p)?, to_root_relative(g)?))).collect::<Result<_>>()?;
    let source = raw[0].1.topology().clone();
    let mut settings = Vec::new();
    for t in [SkeletonTopology::h36m_17(), SkeletonTopology::h36m_16(), SkeletonTopology::limbs_12()] {
        if source.subset_indices(&t).is_err() {
            continue;
        }
        let t = Arc::new(t);
        settings.push(SettingReport {
            skeleton: t.name.clone(),
            joints: t.joint_count(),
            root_aligned: summarize(&aligned, &t)?,
            absolute: summarize(&raw, &t)?,
        });
    }
    if settings.is_empty() {
        return Err(Error::TopologyMismatch(format!("no evaluation setting fits skeleton '{}'", source.name)));
    }
    Ok(EvalReport { pairs: raw.len(), settings })
}

pub fn eval_table(r: &EvalReport) -> String {
    let mut s = format!("pairs: {}\n{:<10} {:>6} {:>12} {:>12} {:>12} {:>12}\n", r.pairs, "skeleton", "joints", "mean_ra", "median_ra", "mean_abs", "median_abs");
    for x in &r.settings {
        s.push_str(&format!(
            "{:<10} {:>6} {:>12.3} {:>12.3} {:>12.3} {:>12.3}\n",
            x.skeleton, x.joints, x.root_aligned.mean, x.root_aligned.median, x.absolute.mean, x.absolute.median
        ));
    }
    s.trim_end().to_string()
}

pub fn stats_table(st: &BoneStats) -> String {
    let mut s = format!("{:<28} {:>10} {:>10} {:>10} {:>10}\n", "bone", "mean_mm", "std_mm", "min_mm", "max_mm");
    for b in &st.bone_lengths {
        let m = &b.length_mm;
        s.push_str(&format!("{:<28} {:>10.2} {:>10.2} {:>10.2} {:>10.2}\n", b.name, m.mean, m.std, m.min, m.max));
    }
    s.push_str(&format!("{:<28} {:>10} {:>10} {:>10} {:>10}\n", "angle", "mean_deg", "std_deg", "min_deg", "max_deg"));
    for a in &st.bone_angles {
        let m = &a.angle_rad;
        let d = f64::to_degrees;
        s.push_str(&format!("{:<28} {:>10.2} {:>10.2} {:>10.2} {:>10.2}\n", a.name, d(m.mean), d(m.std), d(m.min), d(m.max)));
    }
    s.trim_end().to_string()
}

/// Long-format CSV `name,bin_lo,bin_hi,count` over each quantity's own range.
pub fn histograms(samples: &BoneSamples, bins: usize, lengths: bool) -> String {
    let stats = samples.summarize();
    let (names, data): (Vec<String>, &Vec<Vec<f64>>) = if lengths {
        (stats.bone_lengths.iter().map(|b| b.name.clone()).collect(), &samples.lengths)
    } else {
        (stats.bone_angles.iter().map(|a| a.name.clone()).collect(), &samples.angles)
    };
    let mut s = String::from("name,bin_lo,bin_hi,count\n");
    for (name, values) in names.iter().zip(data) {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let mut counts = vec![0usize; bins];
        for v in values {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        for (k, c) in counts.iter().enumerate() {
            s.push_str(&format!("{},{},{},{}\n", name, lo + k as f64 * width, lo + (k + 1) as f64 * width, c));
        }
    }
    s
}
