//! Domain adaptation of a trained prior: controllable branch (CA),
//! fine-tuning (FT) and training from scratch.
//!
//! The controllable branch is a trainable copy of the input/time
//! embeddings and both residual blocks. Its activations reach the frozen
//! trunk only through four zero-initialized linear layers, so a freshly
//! attached model reproduces the base exactly. A learnable prompt shaped
//! like a pose is embedded with the branch's input projection and added to
//! the branch input.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::scalar::Real;
use crate::score_model::{
    read_architecture, sidecar_path, train, ModelConfig, ScoreModel, TrainConfig, TrainReport, BLOCKS, CONTROL_PREFIX,
    CONTROL_ZERO_LAYERS, FOURIER, PROMPT,
};
use crate::skeleton::Pose3D;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptKind {
    Ca,
    Ft,
    Scratch,
}

impl AdaptKind {
    pub fn tag(self) -> &'static str {
        match self {
            AdaptKind::Ca => "ca",
            AdaptKind::Ft => "ft",
            AdaptKind::Scratch => "scratch",
        }
    }
}

impl std::str::FromStr for AdaptKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ca" => Ok(AdaptKind::Ca),
            "ft" => Ok(AdaptKind::Ft),
            "scratch" => Ok(AdaptKind::Scratch),
            _ => Err(Error::InvalidArgument(format!("unknown strategy '{s}' (expected ca, ft or scratch)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptStrategy {
    pub kind: AdaptKind,
    pub train: TrainConfig,
    /// Architecture for Scratch; falls back to the base's, then the default.
    pub scratch_config: Option<ModelConfig>,
}

impl AdaptStrategy {
    pub fn new(kind: AdaptKind, train: TrainConfig) -> Self {
        AdaptStrategy { kind, train, scratch_config: None }
    }
}

fn is_control(name: &str) -> bool {
    name.starts_with(CONTROL_PREFIX)
}

/// Names copied from the trunk into the branch.
fn branch_sources<S: Real>(base: &ParamStore<S>) -> Vec<String> {
    let blocks: Vec<String> = (1..=BLOCKS).map(|b| format!("block{b}.")).collect();
    base.names()
        .filter(|n| n.starts_with("in_proj.") || n.starts_with("time_proj.") || blocks.iter().any(|b| n.starts_with(b.as_str())))
        .map(str::to_owned)
        .collect()
}

/// Wraps an unconditional model with a zero-initialized control branch and
/// freezes the trunk.
pub fn attach_control<S: Real>(base: &ScoreModel<S>) -> Result<ScoreModel<S>> {
    if base.is_conditional() {
        return Err(Error::Unsupported("control branch on a conditional prior".into()));
    }
    if base.is_controlled() {
        return Err(Error::Unsupported("model already carries a control branch".into()));
    }
    let mut p = base.params().clone();
    for (_, param) in p.iter_mut() {
        param.trainable = false;
    }
    for name in branch_sources(base.params()) {
        let t = base.params().tensor(&name)?.clone();
        p.insert(format!("{CONTROL_PREFIX}{name}"), t, true)?;
    }
    let h = base.config().hidden_width;
    for k in 0..CONTROL_ZERO_LAYERS {
        p.insert(format!("{CONTROL_PREFIX}zero{k}.w"), Tensor::zeros(&[h, h]), true)?;
        p.insert(format!("{CONTROL_PREFIX}zero{k}.b"), Tensor::zeros(&[h]), true)?;
    }
    p.insert(PROMPT, Tensor::zeros(&[1, base.input_dim()]), true)?;
    Ok(ScoreModel::from_parts(base.topology().clone(), base.config().clone(), p, Vec::new(), true))
}

/// Element counts of the trainable groups of a controlled model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ControlCounts {
    pub branch: usize,
    pub zero_layers: usize,
    pub prompt: usize,
    pub trunk: usize,
}

pub fn control_counts<S: Real>(model: &ScoreModel<S>) -> ControlCounts {
    let mut c = ControlCounts { branch: 0, zero_layers: 0, prompt: 0, trunk: 0 };
    let zero = format!("{CONTROL_PREFIX}zero");
    for (name, p) in model.params().iter() {
        let n = p.tensor.len();
        if name == PROMPT {
            c.prompt += n;
        } else if name.starts_with(&zero) {
            c.zero_layers += n;
        } else if is_control(name) {
            c.branch += n;
        } else {
            c.trunk += n;
        }
    }
    c
}

/// Digest of every frozen tensor.
pub fn frozen_checksum<S: Real>(model: &ScoreModel<S>) -> u64 {
    model.params().checksum(|_, p| !p.trainable)
}

/// Adapts a prior to new-domain poses with one of the three strategies.
pub fn adapt<S: Real>(
    base: Option<&ScoreModel<S>>,
    data: &[Pose3D<S>],
    strategy: &AdaptStrategy,
) -> Result<(ScoreModel<S>, TrainReport)> {
    let need_base = || {
        base.ok_or_else(|| Error::MissingBaseModel(format!("strategy '{}' needs a pre-trained model", strategy.kind.tag())))
    };
    let mut model = match strategy.kind {
        AdaptKind::Ca => attach_control(need_base()?)?,
        AdaptKind::Ft => {
            let b = need_base()?;
            if b.is_conditional() {
                return Err(Error::Unsupported("fine-tuning a conditional prior on unlabeled data".into()));
            }
            let mut m = b.clone();
            for (name, p) in m.params_mut().iter_mut() {
                p.trainable = name != FOURIER;
            }
            m
        }
        AdaptKind::Scratch => {
            let topo = data.first().ok_or_else(|| Error::EmptyInput("no adaptation data".into()))?.topology().clone();
            let config = strategy
                .scratch_config
                .clone()
                .or_else(|| base.map(|b| b.config().clone()))
                .unwrap_or_default();
            ScoreModel::new(topo, config, strategy.train.seed)?
        }
    };
    let report = train(&mut model, data, &strategy.train)?;
    Ok((model, report))
}

/// Sidecar metadata of a CA delta checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaInfo {
    pub strategy: String,
    pub base_checkpoint: String,
    /// Digest of the trunk the branch was trained against.
    pub base_checksum: u64,
}

/// Saves only the branch, zero layers and prompt of a controlled model.
pub fn save_control_delta<S: Real>(model: &ScoreModel<S>, path: impl AsRef<Path>, base_checkpoint: &str) -> Result<()> {
    if !model.is_controlled() {
        return Err(Error::InvalidArgument("model has no control branch".into()));
    }
    let path = path.as_ref();
    let info = DeltaInfo {
        strategy: AdaptKind::Ca.tag().into(),
        base_checkpoint: base_checkpoint.into(),
        base_checksum: model.params().checksum(|n, _| !is_control(n)),
    };
    let delta = model.params().filtered(is_control);
    delta.save_checkpoint(path, &serde_json::to_value(&info).expect("plain data"))?;
    let arch = serde_json::to_string_pretty(&model.architecture()).expect("architecture serializes");
    std::fs::write(sidecar_path(path), arch)?;
    Ok(())
}

/// Rebuilds a controlled model from its base and a delta checkpoint.
pub fn load_control_delta(base: &ScoreModel<f64>, path: impl AsRef<Path>) -> Result<ScoreModel<f64>> {
    let path = path.as_ref();
    let (delta, meta) = ParamStore::<f64>::load_checkpoint(path)?;
    let info: DeltaInfo = serde_json::from_value(meta).map_err(|e| Error::parse(path.display().to_string(), e))?;
    if info.strategy != AdaptKind::Ca.tag() {
        return Err(Error::parse(path.display().to_string(), format!("not a control delta (strategy '{}')", info.strategy)));
    }
    let arch = read_architecture(path)?;
    if arch.model_config != *base.config() || *base.topology().as_ref() != arch.topology_def {
        return Err(Error::TopologyMismatch("delta was trained on a different architecture".into()));
    }
    if base.params().checksum(|n, _| !is_control(n)) != info.base_checksum {
        return Err(Error::InvalidArgument(format!("base checkpoint differs from '{}'", info.base_checkpoint)));
    }
    let mut model = attach_control(base)?;
    for name in model.params().names().map(str::to_owned).collect::<Vec<_>>() {
        if is_control(&name) {
            let t = delta.tensor(&name)?.clone();
            let shape = model.params().tensor(&name)?.shape().to_vec();
            if t.shape() != shape.as_slice() {
                return Err(Error::parse(path.display().to_string(), format!("parameter '{name}' has shape {:?}", t.shape())));
            }
            model.params_mut().set(name, t, true);
        }
    }
    Ok(model)
}

/// Loads any prior checkpoint: a full model, or a control delta whose
/// base is found through the recorded reference.
pub fn load_prior(path: impl AsRef<Path>) -> Result<ScoreModel<f64>> {
    let path = path.as_ref();
    let (_, meta) = ParamStore::<f64>::load_checkpoint(path)?;
    if meta.get("strategy").and_then(|v| v.as_str()) != Some(AdaptKind::Ca.tag()) {
        return ScoreModel::load(path);
    }
    let info: DeltaInfo = serde_json::from_value(meta).map_err(|e| Error::parse(path.display().to_string(), e))?;
    let mut base_path = std::path::PathBuf::from(&info.base_checkpoint);
    if base_path.is_relative() {
        if let Some(dir) = path.parent() {
            base_path = dir.join(base_path);
        }
    }
    let base = ScoreModel::load(&base_path)?;
    load_control_delta(&base, path)
}

/// Reads the strategy tag of an adaptation checkpoint, if it has one.
pub fn checkpoint_strategy(path: impl AsRef<Path>) -> Result<Option<String>> {
    let (_, meta) = ParamStore::<f64>::load_checkpoint(path)?;
    Ok(meta.get("strategy").and_then(|v| v.as_str()).map(str::to_owned))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::synth_poses;
    use crate::numerics::SeededRng;
    use crate::numerics::Graph;
    use crate::score_model::{dsm_graph, sample_perturbation, ScorePrior};
    use crate::skeleton::SkeletonTopology;
    use std::sync::Arc;

    fn small() -> ModelConfig {
        ModelConfig { hidden_width: 32, groups: 4, time_features: 16, ..ModelConfig::default() }
    }

    fn base() -> ScoreModel<f64> {
        let mut m = ScoreModel::new(Arc::new(SkeletonTopology::h36m_17()), small(), 3).unwrap();
        train(&mut m, &synth_poses(64, 1.0, 0.3, 1), &TrainConfig { epochs: 5, batch: 32, lr: 1e-3, ..Default::default() })
            .unwrap();
        m
    }

    fn tcfg(epochs: usize) -> TrainConfig {
        TrainConfig { epochs, batch: 20, lr: 1e-3, ..Default::default() }
    }

    #[test]
    fn attached_branch_is_an_exact_identity() {
        let b = base();
        let c = attach_control(&b).unwrap();
        let mut rng = SeededRng::new(5);
        for _ in 0..20 {
            let x = Tensor::from_fn(&[1, 51], |_| rng.normal::<f64>() * 300.0);
            let t: f64 = rng.uniform();
            let sb = b.score_batch(&x, &[t], None).unwrap();
            let sc = c.score_batch(&x, &[t], None).unwrap();
            assert!(sb.data().iter().zip(sc.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        for k in 0..CONTROL_ZERO_LAYERS {
            let w = c.params().tensor(&format!("ctrl.zero{k}.w")).unwrap();
            assert!(w.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn frozen_trunk_receives_no_gradient() {
        let c = attach_control(&base()).unwrap();
        let data = synth_poses(8, 0.5, 0.3, 2);
        let x = Tensor::new(vec![8, 51], data.iter().flat_map(|p| p.flatten()).collect()).unwrap();
        let mut rng = SeededRng::new(1);
        let (t, noise) = sample_perturbation(&mut rng, 8, 51);
        let mut g = Graph::new();
        let loss = dsm_graph(&c, &mut g, &x, &t, &noise, None).unwrap();
        let grads = g.backward(loss).unwrap();
        for (name, p) in c.params().iter() {
            assert_eq!(grads.param(name).is_some(), p.trainable, "{name}");
            assert_eq!(p.trainable, is_control(name), "{name}");
        }
    }

    #[test]
    fn trainable_count_is_branch_plus_zero_plus_prompt() {
        let b = base();
        let c = attach_control(&b).unwrap();
        let counts = control_counts(&c);
        let h = small().hidden_width;
        let d = 51;
        let tf = small().time_features;
        let emb = (d * h + h) + (tf * h + h);
        let blocks = BLOCKS * 2 * (h * h + h + 2 * h);
        assert_eq!(counts.branch, emb + blocks);
        assert_eq!(counts.zero_layers, CONTROL_ZERO_LAYERS * (h * h + h));
        assert_eq!(counts.prompt, d);
        assert_eq!(counts.trunk, b.params().total_elements());
        assert_eq!(c.params().trainable_elements(), counts.branch + counts.zero_layers + counts.prompt);
    }

    #[test]
    fn ca_training_moves_the_output_but_not_the_trunk() {
        let b = base();
        let infant = synth_poses(40, 0.5, 0.3, 7);
        let before = frozen_checksum(&attach_control(&b).unwrap());
        let (m, rep) = adapt(Some(&b), &infant, &AdaptStrategy::new(AdaptKind::Ca, tcfg(50))).unwrap();
        assert_eq!(rep.steps, 100);
        assert_eq!(frozen_checksum(&m), before);
        assert_eq!(m.params().checksum(|n, _| !is_control(n)), b.params().checksum(|_, _| true));
        let x = Tensor::new(vec![40, 51], infant.iter().flat_map(|p| p.flatten()).collect()).unwrap();
        let t = vec![0.3; 40];
        let sb = b.score_batch(&x, &t, None).unwrap();
        let sm = m.score_batch(&x, &t, None).unwrap();
        let diff: f64 = sb.data().iter().zip(sm.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / sb.len() as f64;
        assert!(diff > 0.0);
        assert!(m.params().tensor(PROMPT).unwrap().data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn strategy_preconditions() {
        let data = synth_poses(10, 0.5, 0.3, 1);
        for kind in [AdaptKind::Ca, AdaptKind::Ft] {
            assert!(matches!(adapt(None, &data, &AdaptStrategy::new(kind, tcfg(1))), Err(Error::MissingBaseModel(_))));
        }
        let s = AdaptStrategy { scratch_config: Some(small()), ..AdaptStrategy::new(AdaptKind::Scratch, tcfg(1)) };
        adapt(None, &data, &s).unwrap();
        let cond = ScoreModel::<f64>::new_conditional(
            Arc::new(SkeletonTopology::h36m_17()),
            small(),
            vec!["adult".into(), "infant".into()],
            0,
        )
        .unwrap();
        assert!(matches!(attach_control(&cond), Err(Error::Unsupported(_))));
        assert!("lora".parse::<AdaptKind>().is_err());
        assert_eq!("ca".parse::<AdaptKind>().unwrap(), AdaptKind::Ca);
    }

    #[test]
    fn degenerate_schedules_are_identities() {
        let b = base();
        let data = synth_poses(10, 0.5, 0.3, 1);
        let (ft, _) = adapt(Some(&b), &data, &AdaptStrategy::new(AdaptKind::Ft, tcfg(0))).unwrap();
        assert_eq!(ft.params().checksum(|_, _| true), b.params().checksum(|_, _| true));
        let s = AdaptStrategy {
            scratch_config: Some(small()),
            ..AdaptStrategy::new(AdaptKind::Scratch, TrainConfig { lr: 0.0, ..tcfg(3) })
        };
        let (sc, _) = adapt(None, &data, &s).unwrap();
        let fresh = ScoreModel::<f64>::new(b.topology().clone(), small(), s.train.seed).unwrap();
        assert_eq!(sc.params().checksum(|_, _| true), fresh.params().checksum(|_, _| true));
    }

    #[test]
    fn ft_trains_everything_but_the_fourier_table() {
        let b = base();
        let data = synth_poses(20, 0.5, 0.3, 1);
        let (ft, _) = adapt(Some(&b), &data, &AdaptStrategy::new(AdaptKind::Ft, tcfg(2))).unwrap();
        for (name, p) in ft.params().iter() {
            let changed = p.tensor != *b.params().tensor(name).unwrap();
            assert_eq!(changed, name != FOURIER, "{name}");
        }
    }

    #[test]
    fn delta_checkpoint_round_trip() {
        let b = base();
        let (m, _) = adapt(Some(&b), &synth_poses(20, 0.5, 0.3, 1), &AdaptStrategy::new(AdaptKind::Ca, tcfg(3))).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ca.ckpt");
        save_control_delta(&m, &path, "base.ckpt").unwrap();
        assert_eq!(checkpoint_strategy(&path).unwrap().as_deref(), Some("ca"));
        let back = load_control_delta(&b, &path).unwrap();
        assert_eq!(back.params().checksum(|_, _| true), m.params().checksum(|_, _| true));
        let (delta, _) = ParamStore::<f64>::load_checkpoint(&path).unwrap();
        assert!(delta.names().all(is_control));
        let other = ScoreModel::<f64>::new(b.topology().clone(), small(), 99).unwrap();
        assert!(load_control_delta(&other, &path).is_err());
        b.save(dir.path().join("base.ckpt")).unwrap();
        let via_ref = load_prior(&path).unwrap();
        assert_eq!(via_ref.params().checksum(|_, _| true), m.params().checksum(|_, _| true));
        assert_eq!(load_prior(dir.path().join("base.ckpt")).unwrap(), b);
    }
}
