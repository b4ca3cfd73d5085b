//! Condition-guided pose transfer between domains.
//!
//! A source pose is noised once at `noise_start` and then denoised for
//! `steps` single Tweedie steps at geometrically decaying levels under the
//! target domain's condition token.

use serde::{Deserialize, Serialize};

use crate::datasets::PoseRecord;
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, SeededRng, Tensor};
use crate::scalar::{lit, Real};
use crate::score_model::{denoise_batch, train_with_labels, ModelConfig, ScoreModel, TrainConfig, TrainReport};
use crate::skeleton::{bone_samples, Frame, Pose3D};

pub const ADULT: &str = "adult";
pub const INFANT: &str = "infant";

/// Rows per batched denoising call.
const CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub steps: usize,
    pub noise_start: f64,
    pub target_label: String,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { steps: 100, noise_start: 0.6, target_label: INFANT.into(), seed: 0 }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.noise_start > 0.0 && self.noise_start <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "augmentation needs steps >= 1 and noise_start in (0, 1] (got {}, {})",
                self.steps, self.noise_start
            )));
        }
        Ok(())
    }

    /// Level of denoising step `k` (1-based): `noise_start` decaying
    /// geometrically to the schedule floor `1/total_steps`.
    pub fn level(&self, k: usize, floor: f64) -> f64 {
        let end = floor.min(self.noise_start);
        if self.steps == 1 {
            return self.noise_start;
        }
        let frac = (k - 1) as f64 / (self.steps - 1) as f64;
        self.noise_start * (end / self.noise_start).powf(frac)
    }
}

/// Trains a two-label conditional prior on adult and infant poses.
pub fn train_conditional<S: Real>(
    adult: &[Pose3D<S>],
    infant: &[Pose3D<S>],
    config: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ScoreModel<S>, TrainReport)> {
    let (a0, i0) = match (adult.first(), infant.first()) {
        (Some(a), Some(i)) => (a, i),
        _ => return Err(Error::EmptyInput("both domains need poses".into())),
    };
    if a0.topology() != i0.topology() {
        return Err(Error::TopologyMismatch(format!(
            "adult poses on '{}', infant poses on '{}'",
            a0.topology().name,
            i0.topology().name
        )));
    }
    let mut model =
        ScoreModel::new_conditional(a0.topology().clone(), config.clone(), vec![ADULT.into(), INFANT.into()], cfg.seed)?;
    let data: Vec<Pose3D<S>> = adult.iter().chain(infant).cloned().collect();
    let labels: Vec<usize> = std::iter::repeat(0).take(adult.len()).chain(std::iter::repeat(1).take(infant.len())).collect();
    let report = train_with_labels(&mut model, &data, Some(&labels), cfg)?;
    Ok((model, report))
}

fn transfer_rows<S: Real>(
    sources: &[&Pose3D<S>],
    seeds: &[u64],
    model: &ScoreModel<S>,
    cfg: &AugmentConfig,
) -> Result<Vec<Pose3D<S>>> {
    model.label_index(&cfg.target_label)?;
    let topo = model.topology().clone();
    let d = model.input_dim();
    let sched = model.config().schedule;
    let sigma0 = sched.sigma(lit::<S>(cfg.noise_start));
    let mut data = Vec::with_capacity(sources.len() * d);
    for (p, &seed) in sources.iter().zip(seeds) {
        if p.frame() != Frame::RootRelative {
            return Err(Error::InvalidPose("transfer expects root-relative poses".into()));
        }
        let mut rng = SeededRng::new(seed);
        data.extend(p.flatten().into_iter().map(|v| v + sigma0 * rng.normal::<S>()));
    }
    let mut x = Tensor::new(vec![sources.len(), d], data)?;
    let floor = 1.0 / sched.total_steps as f64;
    for k in 1..=cfg.steps {
        x = denoise_batch(model, &x, lit(cfg.level(k, floor)), Some(&cfg.target_label), topo.root_index)?;
    }
    if !x.is_finite() {
        return Err(Error::Diverged { iteration: cfg.steps });
    }
    (0..sources.len()).map(|b| Pose3D::from_flat(x.row(b), Frame::RootRelative, topo.clone())).collect()
}

/// Transfers one root-relative pose to the target domain.
pub fn transfer<S: Real>(source: &Pose3D<S>, model: &ScoreModel<S>, cfg: &AugmentConfig) -> Result<Pose3D<S>> {
    cfg.validate()?;
    Ok(transfer_rows(&[source], &[cfg.seed], model, cfg)?.remove(0))
}

/// Source indices drawn for `count` outputs: without replacement while
/// the source suffices, with replacement otherwise.
pub fn sample_indices(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = SeededRng::new(derive_seed(seed, "augment-sample"));
    if count <= n {
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        idx.truncate(count);
        idx
    } else {
        (0..count).map(|_| rng.index(n)).collect()
    }
}

/// `count` transfers of seeded draws from `source`.
pub fn augment_dataset<S: Real>(
    source: &[Pose3D<S>],
    model: &ScoreModel<S>,
    cfg: &AugmentConfig,
    count: usize,
) -> Result<Vec<Pose3D<S>>> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::EmptyInput("no source poses to augment".into()));
    }
    if count == 0 {
        return Err(Error::InvalidArgument("augmentation count must be positive".into()));
    }
    let idx = sample_indices(source.len(), count, cfg.seed);
    let mut out = Vec::with_capacity(count);
    for (c, chunk) in idx.chunks(CHUNK).enumerate() {
        let srcs: Vec<&Pose3D<S>> = chunk.iter().map(|&i| &source[i]).collect();
        let seeds: Vec<u64> = (0..chunk.len()).map(|o| derive_seed(cfg.seed, &format!("augment-{}", c * CHUNK + o))).collect();
        out.extend(transfer_rows(&srcs, &seeds, model, cfg)?);
    }
    Ok(out)
}

/// Record-level augmentation: outputs carry the target domain, the
/// `augmented` flag and ids derived from their source records.
pub fn augment_records(
    source: &[PoseRecord],
    model: &ScoreModel<f64>,
    cfg: &AugmentConfig,
    count: usize,
) -> Result<Vec<PoseRecord>> {
    let with_pose: Vec<&PoseRecord> = source.iter().filter(|r| r.pose3d.is_some()).collect();
    let poses = with_pose
        .iter()
        .map(|r| crate::skeleton::to_root_relative(r.pose3d.as_ref().expect("filtered")))
        .collect::<Result<Vec<_>>>()?;
    let out = augment_dataset(&poses, model, cfg, count)?;
    let idx = sample_indices(poses.len(), count, cfg.seed);
    Ok(out
        .into_iter()
        .zip(idx)
        .enumerate()
        .map(|(k, (pose, i))| PoseRecord {
            id: format!("aug-{k:06}-{}", with_pose[i].id),
            domain: cfg.target_label.clone(),
            augmented: true,
            pose3d: Some(pose),
            pose2d: None,
            intrinsics: None,
        })
        .collect())
}

/// Per-bone and per-angle min–max ranges before and after adding
/// augmented poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub bone_ranges: Vec<RangeChange>,
    pub angle_ranges: Vec<RangeChange>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeChange {
    pub name: String,
    pub original: f64,
    pub combined: f64,
}

impl DiversityReport {
    /// Every tracked range is at least as wide after augmentation.
    pub fn non_decreasing(&self) -> bool {
        self.bone_ranges.iter().chain(&self.angle_ranges).all(|r| r.combined >= r.original)
    }

    /// Every tracked range is strictly wider after augmentation.
    pub fn strictly_wider(&self) -> bool {
        self.bone_ranges.iter().chain(&self.angle_ranges).all(|r| r.combined > r.original)
    }
}

pub fn diversity<S: Real>(original: &[Pose3D<S>], augmented: &[Pose3D<S>]) -> Result<DiversityReport> {
    let combined: Vec<Pose3D<S>> = original.iter().chain(augmented).cloned().collect();
    let a = bone_samples(original)?.summarize();
    let b = bone_samples(&combined)?.summarize();
    Ok(DiversityReport {
        bone_ranges: a
            .bone_lengths
            .iter()
            .zip(&b.bone_lengths)
            .map(|(x, y)| RangeChange { name: x.name.clone(), original: x.length_mm.range(), combined: y.length_mm.range() })
            .collect(),
        angle_ranges: a
            .bone_angles
            .iter()
            .zip(&b.bone_angles)
            .map(|(x, y)| RangeChange { name: x.name.clone(), original: x.angle_rad.range(), combined: y.angle_rad.range() })
            .collect(),
    })
}
