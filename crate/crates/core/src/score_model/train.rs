//! Denoising score matching, single-step denoising and the training loop.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AdamState, Gradients, Graph, SeededRng, Tensor, Var};
use crate::scalar::{lit, Real};
use crate::score_model::model::{ScoreModel, ScorePrior};
use crate::skeleton::{Frame, Pose3D};

/// Optimizer and schedule settings for every training entry point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Clamped to the dataset size.
    pub batch: usize,
    pub seed: u64,
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 5000, lr: 2e-4, batch: 5000, seed: 0, checkpoint_every: None, checkpoint_dir: None }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch == 0 || !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!("batch {} / lr {} invalid", self.batch, self.lr)));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::InvalidArgument("checkpoint interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-sample loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// `mean_b ‖σ_b·s_b + ε_b‖²` for scores `s`, noise `ε` and per-row `σ`.
pub fn dsm_objective<S: Real>(scores: &Tensor<S>, noise: &Tensor<S>, sigmas: &[S]) -> Result<S> {
    scores.expect_same_shape(noise)?;
    if sigmas.len() != scores.rows() {
        return Err(Error::ShapeError("one sigma per row required".into()));
    }
    let mut total = S::zero();
    for (b, &sig) in sigmas.iter().enumerate() {
        total += scores.row(b).iter().zip(noise.row(b)).map(|(&s, &e)| (sig * s + e).powi(2)).sum::<S>();
    }
    Ok(total / S::from_usize(sigmas.len()).unwrap())
}

/// Records the DSM loss for fixed perturbations; returns the scalar node.
pub(crate) fn dsm_graph<S: Real>(
    model: &ScoreModel<S>,
    g: &mut Graph<S>,
    clean: &Tensor<S>,
    t: &[S],
    noise: &Tensor<S>,
    labels: Option<&[usize]>,
) -> Result<Var> {
    clean.expect_same_shape(noise)?;
    if t.len() != clean.rows() {
        return Err(Error::ShapeError("one noise level per row required".into()));
    }
    let mut noisy = clean.clone();
    let cols = clean.cols();
    for (b, &tv) in t.iter().enumerate() {
        let sig = model.sigma(tv);
        for (x, &e) in noisy.data_mut()[b * cols..(b + 1) * cols].iter_mut().zip(noise.row(b)) {
            *x += sig * e;
        }
    }
    let x = g.constant(noisy);
    let raw = model.forward_raw(g, x, t, labels)?;
    let eps = g.constant(noise.clone());
    let r = g.add(raw, eps)?;
    let ss = g.sum_squares(r);
    Ok(g.scale(ss, S::one() / S::from_usize(t.len()).unwrap()))
}

/// DSM loss with caller-supplied noise levels and Gaussian noise.
pub fn dsm_loss_fixed<S: Real>(
    model: &ScoreModel<S>,
    clean: &Tensor<S>,
    t: &[S],
    noise: &Tensor<S>,
    labels: Option<&[usize]>,
) -> Result<S> {
    let mut g = Graph::new();
    let l = dsm_graph(model, &mut g, clean, t, noise, labels)?;
    Ok(g.value(l).data()[0])
}

/// DSM loss and its gradients with respect to the trainable parameters.
pub fn dsm_gradients<S: Real>(
    model: &ScoreModel<S>,
    clean: &Tensor<S>,
    t: &[S],
    noise: &Tensor<S>,
    labels: Option<&[usize]>,
) -> Result<(S, Gradients<S>)> {
    let mut g = Graph::new();
    let l = dsm_graph(model, &mut g, clean, t, noise, labels)?;
    Ok((g.value(l).data()[0], g.backward(l)?))
}

/// Draws `t ~ U[0,1]` per row and `ε ~ N(0, I)`.
pub fn sample_perturbation<S: Real>(rng: &mut SeededRng, rows: usize, cols: usize) -> (Vec<S>, Tensor<S>) {
    let t = (0..rows).map(|_| rng.uniform()).collect();
    let noise = Tensor::from_fn(&[rows, cols], |_| rng.normal());
    (t, noise)
}

/// Stochastic DSM loss over a batch of clean root-relative poses.
pub fn dsm_loss<S: Real>(model: &ScoreModel<S>, clean: &[Pose3D<S>], rng: &mut SeededRng, label: Option<&str>) -> Result<S> {
    if clean.is_empty() {
        return Err(Error::EmptyInput("empty DSM batch".into()));
    }
    let x = model.stack(clean)?;
    let labels = model.resolve_labels(x.rows(), label)?;
    let (t, noise) = sample_perturbation(rng, x.rows(), x.cols());
    dsm_loss_fixed(model, &x, &t, &noise, labels.as_deref())
}

/// One Tweedie step `x + σ(t)²·s(x, t)` on flattened rows; the root joint
/// of each result is set to zero.
pub fn denoise_batch<S: Real, P: ScorePrior<S> + ?Sized>(
    prior: &P,
    x: &Tensor<S>,
    t: S,
    label: Option<&str>,
    root_index: usize,
) -> Result<Tensor<S>> {
    if !(t > S::zero() && t <= S::one()) {
        return Err(Error::InvalidArgument(format!("denoising level {t} outside (0, 1]")));
    }
    let rows = x.rows();
    let s = prior.score_batch(x, &vec![t; rows], label)?;
    let sig = prior.schedule().sigma(t);
    let s2 = sig * sig;
    let mut out = x.zip_map(&s, |xv, sv| xv + s2 * sv)?;
    for b in 0..rows {
        out.row_mut(b)[3 * root_index..3 * root_index + 3].fill(S::zero());
    }
    Ok(out)
}

/// Single-step posterior-mean denoising of a pose batch.
pub fn denoise_step<S: Real, P: ScorePrior<S> + ?Sized>(
    prior: &P,
    x: &[Pose3D<S>],
    t: S,
    label: Option<&str>,
) -> Result<Vec<Pose3D<S>>> {
    let first = x.first().ok_or_else(|| Error::EmptyInput("empty pose batch".into()))?;
    let topo = first.topology().clone();
    let d = 3 * topo.joint_count();
    let mut data = Vec::with_capacity(x.len() * d);
    for p in x {
        if p.topology() != &topo {
            return Err(Error::TopologyMismatch("mixed topologies in batch".into()));
        }
        data.extend(p.flatten());
    }
    let flat = Tensor::new(vec![x.len(), d], data)?;
    let out = denoise_batch(prior, &flat, t, label, topo.root_index)?;
    (0..x.len()).map(|b| Pose3D::from_flat(out.row(b), Frame::RootRelative, topo.clone())).collect()
}

/// Trains on unlabeled root-relative poses.
pub fn train<S: Real>(model: &mut ScoreModel<S>, data: &[Pose3D<S>], cfg: &TrainConfig) -> Result<TrainReport> {
    train_with_labels(model, data, None, cfg)
}

/// Trains with an optional domain label index per sample (required iff the
/// model is conditional).
pub fn train_with_labels<S: Real>(
    model: &mut ScoreModel<S>,
    data: &[Pose3D<S>],
    labels: Option<&[usize]>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("empty training set".into()));
    }
    let x = model.stack(data)?;
    train_tensor(model, &x, labels, cfg)
}

/// Training loop over an already flattened `N×3J` dataset.
pub fn train_tensor<S: Real>(
    model: &mut ScoreModel<S>,
    data: &Tensor<S>,
    labels: Option<&[usize]>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let n = data.rows();
    match (model.is_conditional(), labels) {
        (true, Some(l)) if l.len() == n => {
            if let Some(&bad) = l.iter().find(|&&i| i >= model.labels().len()) {
                return Err(Error::MissingCondition(format!("label index {bad} out of range")));
            }
        }
        (true, Some(_)) => return Err(Error::ShapeError("one label per training sample required".into())),
        (true, None) => return Err(Error::MissingCondition("conditional training needs labels".into())),
        (false, Some(_)) => return Err(Error::InvalidArgument("labels given to an unconditional model".into())),
        (false, None) => {}
    }
    let cols = data.cols();
    let batch = cfg.batch.min(n);
    let mut rng = SeededRng::new(cfg.seed);
    let mut adam = AdamState::new(lit::<S>(cfg.lr));
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = TrainReport::default();

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_total = 0.0;
        for chunk in order.chunks(batch) {
            let mut xb = Vec::with_capacity(chunk.len() * cols);
            for &i in chunk {
                xb.extend_from_slice(data.row(i));
            }
            let xb = Tensor::new(vec![chunk.len(), cols], xb)?;
            let lb: Option<Vec<usize>> = labels.map(|l| chunk.iter().map(|&i| l[i]).collect());
            let (t, noise) = sample_perturbation(&mut rng, chunk.len(), cols);
            let mut g = Graph::new();
            let loss = dsm_graph(model, &mut g, &xb, &t, &noise, lb.as_deref())?;
            let lv = g.value(loss).data()[0].to_f64_lossy();
            if !lv.is_finite() {
                return Err(Error::Diverged { iteration: report.steps });
            }
            let grads = g.backward(loss)?;
            adam.update(model.params_mut(), &grads)?;
            epoch_total += lv * chunk.len() as f64;
            report.steps += 1;
        }
        report.epoch_losses.push(epoch_total / n as f64);
        if let (Some(every), Some(dir)) = (cfg.checkpoint_every, &cfg.checkpoint_dir) {
            if epoch % every == 0 {
                std::fs::create_dir_all(dir)?;
                model.save(dir.join(format!("epoch_{epoch:06}.ckpt")))?;
            }
        }
    }
    Ok(report)
}
