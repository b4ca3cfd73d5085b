//! Score network architecture and forward pass.
//!
//! ```text
//! h  = in_proj(x / scale) + time_proj(fourier(t)) [+ cond_proj(token)]
//! h  = h + GN(lin2(silu(GN(lin1(h)))))          (twice)
//! s  = out_proj(h) / σ(t)
//! ```
//!
//! With a control branch attached, a trainable copy of the embedding and
//! both blocks runs alongside the frozen trunk and feeds it through four
//! zero-initialized linear maps (before/after each block).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, SeededRng, Tensor, Var};
use crate::scalar::{lit, Real};
use crate::score_model::schedule::NoiseSchedule;
use crate::skeleton::{Frame, Pose3D, SkeletonTopology};

pub const BLOCKS: usize = 2;
pub const CONTROL_PREFIX: &str = "ctrl.";
pub const CONTROL_ZERO_LAYERS: usize = 4;
pub(crate) const FOURIER: &str = "time.fourier";
pub(crate) const TOKENS: &str = "cond.tokens";
pub(crate) const PROMPT: &str = "ctrl.prompt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_width: usize,
    /// Number of Gaussian-Fourier features of `t` (half sine, half cosine).
    pub time_features: usize,
    pub groups: usize,
    pub fourier_scale: f64,
    pub groupnorm_eps: f64,
    /// Coordinates are divided by this (mm) before entering the network.
    pub coord_scale_mm: f64,
    /// Width of each domain condition token.
    pub token_width: usize,
    pub schedule: NoiseSchedule,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_width: 1024,
            time_features: 256,
            groups: 32,
            fourier_scale: 16.0,
            groupnorm_eps: 1e-5,
            coord_scale_mm: 1000.0,
            token_width: 1000,
            schedule: NoiseSchedule::default(),
        }
    }
}

impl ModelConfig {
    /// Same layout at a smaller hidden width.
    pub fn with_width(hidden_width: usize, groups: usize) -> Self {
        ModelConfig { hidden_width, groups, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 || self.groups == 0 || self.hidden_width % self.groups != 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden width {} must be a positive multiple of {} groups",
                self.hidden_width, self.groups
            )));
        }
        if self.time_features < 2 || self.time_features % 2 != 0 {
            return Err(Error::InvalidArgument("time_features must be even and ≥ 2".into()));
        }
        if !(self.coord_scale_mm > 0.0) || !(self.groupnorm_eps >= 0.0) || self.token_width == 0 {
            return Err(Error::InvalidArgument("invalid model configuration".into()));
        }
        NoiseSchedule::new(self.schedule.sigma_min, self.schedule.sigma_max, self.schedule.total_steps)?;
        Ok(())
    }
}

/// Architecture sidecar stored next to every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub topology: String,
    pub hidden_width: usize,
    pub schedule: NoiseSchedule,
    pub conditional_labels: Vec<String>,
    pub topology_def: SkeletonTopology,
    pub model_config: ModelConfig,
    pub controlled: bool,
}

/// Anything that can score a batch of flattened poses.
pub trait ScorePrior<S: Real> {
    fn schedule(&self) -> &NoiseSchedule;

    fn topology(&self) -> &Arc<SkeletonTopology>;

    /// Scores (1/mm) for `x: B×3J` at per-row noise levels `t`.
    fn score_batch(&self, x: &Tensor<S>, t: &[S], label: Option<&str>) -> Result<Tensor<S>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreModel<S> {
    topology: Arc<SkeletonTopology>,
    config: ModelConfig,
    params: ParamStore<S>,
    labels: Vec<String>,
    controlled: bool,
}

fn init_linear<S: Real>(
    store: &mut ParamStore<S>,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut SeededRng,
) -> Result<()> {
    let bound = lit::<S>(1.0 / (fan_in as f64).sqrt());
    let w = Tensor::from_fn(&[fan_in, fan_out], |_| rng.uniform_in(-bound, bound));
    let b = Tensor::from_fn(&[fan_out], |_| rng.uniform_in(-bound, bound));
    store.insert(format!("{prefix}.w"), w, true)?;
    store.insert(format!("{prefix}.b"), b, true)
}

fn init_block<S: Real>(store: &mut ParamStore<S>, prefix: &str, h: usize, rng: &mut SeededRng) -> Result<()> {
    for k in 1..=2 {
        init_linear(store, &format!("{prefix}.lin{k}"), h, h, rng)?;
        store.insert(format!("{prefix}.gn{k}.gamma"), Tensor::full(&[h], S::one()), true)?;
        store.insert(format!("{prefix}.gn{k}.beta"), Tensor::zeros(&[h]), true)?;
    }
    Ok(())
}

impl<S: Real> ScoreModel<S> {
    /// Fresh unconditional model with seeded initialization.
    pub fn new(topology: Arc<SkeletonTopology>, config: ModelConfig, seed: u64) -> Result<Self> {
        Self::build(topology, config, Vec::new(), seed)
    }

    /// Fresh model with one trainable condition token per label.
    pub fn new_conditional(
        topology: Arc<SkeletonTopology>,
        config: ModelConfig,
        labels: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::InvalidArgument("conditional model needs at least two labels".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::InvalidArgument(format!("duplicate label '{l}'")));
            }
        }
        Self::build(topology, config, labels, seed)
    }

    fn build(topology: Arc<SkeletonTopology>, config: ModelConfig, labels: Vec<String>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(seed);
        let mut p = ParamStore::new();
        let d = 3 * topology.joint_count();
        let h = config.hidden_width;
        let half = config.time_features / 2;
        let scale = lit::<S>(config.fourier_scale);
        p.insert(FOURIER, Tensor::from_fn(&[half], |_| rng.normal::<S>() * scale), false)?;
        init_linear(&mut p, "in_proj", d, h, &mut rng)?;
        init_linear(&mut p, "time_proj", config.time_features, h, &mut rng)?;
        for b in 1..=BLOCKS {
            init_block(&mut p, &format!("block{b}"), h, &mut rng)?;
        }
        init_linear(&mut p, "out_proj", h, d, &mut rng)?;
        if !labels.is_empty() {
            p.insert(TOKENS, Tensor::from_fn(&[labels.len(), config.token_width], |_| rng.normal()), true)?;
            init_linear(&mut p, "cond.proj", config.token_width, h, &mut rng)?;
        }
        Ok(ScoreModel { topology, config, params: p, labels, controlled: false })
    }

    pub(crate) fn from_parts(
        topology: Arc<SkeletonTopology>,
        config: ModelConfig,
        params: ParamStore<S>,
        labels: Vec<String>,
        controlled: bool,
    ) -> Self {
        ScoreModel { topology, config, params, labels, controlled }
    }

    pub fn topology(&self) -> &Arc<SkeletonTopology> {
        &self.topology
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn is_conditional(&self) -> bool {
        !self.labels.is_empty()
    }

    pub fn is_controlled(&self) -> bool {
        self.controlled
    }

    pub fn input_dim(&self) -> usize {
        3 * self.topology.joint_count()
    }

    pub fn sigma(&self, t: S) -> S {
        self.config.schedule.sigma(t)
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::MissingCondition(format!("model has no condition '{label}'")))
    }

    /// The `1×token_width` condition token of `label`.
    pub fn condition_token(&self, label: &str) -> Result<Tensor<S>> {
        let i = self.label_index(label)?;
        let table = self.params.tensor(TOKENS)?;
        Tensor::new(vec![1, table.cols()], table.row(i).to_vec())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            topology: self.topology.name.clone(),
            hidden_width: self.config.hidden_width,
            schedule: self.config.schedule,
            conditional_labels: self.labels.clone(),
            topology_def: (*self.topology).clone(),
            model_config: self.config.clone(),
            controlled: self.controlled,
        }
    }

    fn check_levels(&self, t: &[S]) -> Result<()> {
        if let Some(bad) = t.iter().find(|v| !(**v >= S::zero() && **v <= S::one())) {
            return Err(Error::InvalidArgument(format!("noise level {bad} outside [0, 1]")));
        }
        Ok(())
    }

    /// Resolves per-row label indices against the model's conditioning.
    pub(crate) fn resolve_labels(&self, rows: usize, label: Option<&str>) -> Result<Option<Vec<usize>>> {
        match (self.is_conditional(), label) {
            (true, Some(l)) => Ok(Some(vec![self.label_index(l)?; rows])),
            (true, None) => Err(Error::MissingCondition("conditional model needs a domain label".into())),
            (false, Some(l)) => Err(Error::InvalidArgument(format!("unconditional model given label '{l}'"))),
            (false, None) => Ok(None),
        }
    }

    fn fourier_features(&self, t: &[S]) -> Result<Tensor<S>> {
        let w = self.params.tensor(FOURIER)?.data();
        let half = w.len();
        let two_pi = S::PI() + S::PI();
        let mut out = Vec::with_capacity(t.len() * 2 * half);
        for &tv in t {
            out.extend(w.iter().map(|&wi| (two_pi * wi * tv).sin()));
            out.extend(w.iter().map(|&wi| (two_pi * wi * tv).cos()));
        }
        Tensor::new(vec![t.len(), 2 * half], out)
    }

    fn linear(&self, g: &mut Graph<S>, x: Var, prefix: &str) -> Result<Var> {
        let w = g.param(&self.params, &format!("{prefix}.w"))?;
        let b = g.param(&self.params, &format!("{prefix}.b"))?;
        g.linear(x, w, b)
    }

    fn block(&self, g: &mut Graph<S>, h: Var, prefix: &str) -> Result<Var> {
        let eps = lit::<S>(self.config.groupnorm_eps);
        let groups = self.config.groups;
        let mut y = h;
        for k in 1..=2 {
            y = self.linear(g, y, &format!("{prefix}.lin{k}"))?;
            let gamma = g.param(&self.params, &format!("{prefix}.gn{k}.gamma"))?;
            let beta = g.param(&self.params, &format!("{prefix}.gn{k}.beta"))?;
            y = g.group_norm(y, gamma, beta, groups, eps)?;
            if k == 1 {
                y = g.silu(y);
            }
        }
        g.add(h, y)
    }

    /// Records the network on `g` and returns the raw output `B×3J`
    /// (the score times σ). `x` holds coordinates in millimetres.
    pub(crate) fn forward_raw(&self, g: &mut Graph<S>, x: Var, t: &[S], labels: Option<&[usize]>) -> Result<Var> {
        let rows = g.value(x).rows();
        if g.value(x).cols() != self.input_dim() {
            return Err(Error::ShapeError(format!("input width {} for {} joints", g.value(x).cols(), self.topology.joint_count())));
        }
        if t.len() != rows {
            return Err(Error::ShapeError(format!("{} noise levels for {rows} rows", t.len())));
        }
        self.check_levels(t)?;
        let xs = g.scale(x, S::one() / lit::<S>(self.config.coord_scale_mm));
        let feats = g.constant(self.fourier_features(t)?);

        let ex = self.linear(g, xs, "in_proj")?;
        let et = self.linear(g, feats, "time_proj")?;
        let mut h = g.add(ex, et)?;
        match (self.is_conditional(), labels) {
            (true, Some(idx)) => {
                if idx.len() != rows {
                    return Err(Error::ShapeError("one label per row required".into()));
                }
                let table = g.param(&self.params, TOKENS)?;
                let tok = g.gather_rows(table, idx.to_vec())?;
                let ec = self.linear(g, tok, "cond.proj")?;
                h = g.add(h, ec)?;
            }
            (true, None) => return Err(Error::MissingCondition("conditional model needs labels".into())),
            (false, Some(_)) => return Err(Error::InvalidArgument("unconditional model given labels".into())),
            (false, None) => {}
        }

        if self.controlled {
            let c_x = self.linear(g, xs, "ctrl.in_proj")?;
            let c_t = self.linear(g, feats, "ctrl.time_proj")?;
            let mut c = g.add(c_x, c_t)?;
            let prompt = g.param(&self.params, PROMPT)?;
            let prompt = g.scale(prompt, S::one() / lit::<S>(self.config.coord_scale_mm));
            let w_in = g.param(&self.params, "ctrl.in_proj.w")?;
            let pe = g.matmul(prompt, w_in)?;
            c = g.add_bias(c, pe)?;

            let z = self.linear(g, c, "ctrl.zero0")?;
            h = g.add(h, z)?;
            h = self.block(g, h, "block1")?;
            let c1 = self.block(g, c, "ctrl.block1")?;
            let z = self.linear(g, c1, "ctrl.zero1")?;
            h = g.add(h, z)?;
            let z = self.linear(g, c1, "ctrl.zero2")?;
            h = g.add(h, z)?;
            h = self.block(g, h, "block2")?;
            let c2 = self.block(g, c1, "ctrl.block2")?;
            let z = self.linear(g, c2, "ctrl.zero3")?;
            h = g.add(h, z)?;
        } else {
            for b in 1..=BLOCKS {
                h = self.block(g, h, &format!("block{b}"))?;
            }
        }
        self.linear(g, h, "out_proj")
    }

    /// Score of each pose at noise level `t`, shaped `B×J×3`, in 1/mm.
    pub fn score_forward(&self, x: &[Pose3D<S>], t: S, label: Option<&str>) -> Result<Tensor<S>> {
        let flat = self.stack(x)?;
        let rows = flat.rows();
        let s = self.score_batch(&flat, &vec![t; rows], label)?;
        s.reshape(&[rows, self.topology.joint_count(), 3])
    }

    pub(crate) fn stack(&self, x: &[Pose3D<S>]) -> Result<Tensor<S>> {
        if x.is_empty() {
            return Err(Error::EmptyInput("empty pose batch".into()));
        }
        let mut data = Vec::with_capacity(x.len() * self.input_dim());
        for p in x {
            if **p.topology() != *self.topology {
                return Err(Error::TopologyMismatch(format!(
                    "pose on '{}' for a model on '{}'",
                    p.topology().name,
                    self.topology.name
                )));
            }
            if p.frame() != Frame::RootRelative {
                return Err(Error::InvalidPose("score model expects root-relative poses".into()));
            }
            data.extend(p.flatten());
        }
        Tensor::new(vec![x.len(), self.input_dim()], data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.save_params(path, &self.params)
    }

    /// Full checkpoint carrying free-form metadata in its header.
    pub fn save_with_metadata(&self, path: impl AsRef<Path>, metadata: &serde_json::Value) -> Result<()> {
        let path = path.as_ref();
        self.params.save_checkpoint(path, metadata)?;
        let arch = serde_json::to_string_pretty(&self.architecture()).expect("architecture serializes");
        std::fs::write(sidecar_path(path), arch)?;
        Ok(())
    }

    /// Writes `params` (which may be a subset of the model's) together with
    /// this model's architecture sidecar.
    pub(crate) fn save_params(&self, path: impl AsRef<Path>, params: &ParamStore<S>) -> Result<()> {
        let path = path.as_ref();
        params.save_checkpoint(path, &serde_json::Value::Null)?;
        let arch = serde_json::to_string_pretty(&self.architecture()).expect("architecture serializes");
        std::fs::write(sidecar_path(path), arch)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let arch = read_architecture(path)?;
        let (params, _) = ParamStore::load_checkpoint(path)?;
        let model = ScoreModel::from_parts(
            Arc::new(arch.topology_def),
            arch.model_config,
            params,
            arch.conditional_labels,
            arch.controlled,
        );
        model.check_params()?;
        Ok(model)
    }

    /// Every parameter the architecture needs is present with the right shape.
    pub(crate) fn check_params(&self) -> Result<()> {
        let fresh = if self.is_conditional() {
            Self::new_conditional(self.topology.clone(), self.config.clone(), self.labels.clone(), 0)?
        } else {
            Self::new(self.topology.clone(), self.config.clone(), 0)?
        };
        for (name, p) in fresh.params.iter() {
            let have = self.params.get(name).ok_or_else(|| Error::parse("checkpoint", format!("missing parameter '{name}'")))?;
            if have.tensor.shape() != p.tensor.shape() {
                return Err(Error::parse("checkpoint", format!("parameter '{name}' has shape {:?}", have.tensor.shape())));
            }
        }
        Ok(())
    }
}

impl<S: Real> ScorePrior<S> for ScoreModel<S> {
    fn schedule(&self) -> &NoiseSchedule {
        &self.config.schedule
    }

    fn topology(&self) -> &Arc<SkeletonTopology> {
        &self.topology
    }

    fn score_batch(&self, x: &Tensor<S>, t: &[S], label: Option<&str>) -> Result<Tensor<S>> {
        let labels = self.resolve_labels(x.rows(), label)?;
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let raw = self.forward_raw(&mut g, xv, t, labels.as_deref())?;
        let inv: Vec<S> = t.iter().map(|&tv| S::one() / self.sigma(tv)).collect();
        let s = g.scale_rows(raw, inv)?;
        Ok(g.value(s).clone())
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".arch.json");
    PathBuf::from(s)
}

pub fn read_architecture(path: &Path) -> Result<Architecture> {
    let text = std::fs::read_to_string(sidecar_path(path))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(sidecar_path(path).display().to_string(), e))
}
