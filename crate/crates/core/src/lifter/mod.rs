//! Iterative 2D-to-3D lifting against a score prior.
//!
//! A training pose is rigidly fitted to the keypoints to obtain `(R₀, T₀)`.
//! The visible joints then start on their camera rays at depth `T₀_z` and
//! the loop alternates ray snapping with one denoising step of the prior.
//! While `k ≤ depth_freeze_until` the whole pose is rescaled about the
//! camera centre so the root stays at depth `T₀_z`.

pub mod rotation;

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rays_from_2d, snap_coords, CameraIntrinsics, RayBundle};
use crate::numerics::{SeededRng, Tensor, VecAdam};
use crate::scalar::{lit, Real};
use crate::score_model::{denoise_batch, ScorePrior};
use crate::skeleton::{Frame, Pose2D, Pose3D, SkeletonTopology};
use rotation::{cross, exp_so3, left_jacobian, mat_vec, transpose, Mat3};

/// Fewest visible joints a rigid fit accepts.
pub const MIN_VISIBLE_JOINTS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiftConfig {
    pub iterations: usize,
    pub depth_freeze_until: usize,
    pub noise_start: f64,
    pub noise_end: f64,
    pub init_steps: usize,
    pub init_lr: f64,
    /// Starting depth of the translation search, mm.
    pub init_depth: f64,
    pub seed: u64,
    /// Keep a pose snapshot every `snapshot_stride` iterations; 0 keeps none.
    pub snapshot_stride: usize,
    /// Condition label for conditional priors.
    pub label: Option<String>,
}

impl Default for LiftConfig {
    fn default() -> Self {
        LiftConfig {
            iterations: 1000,
            depth_freeze_until: 950,
            noise_start: 0.1,
            noise_end: 0.001,
            init_steps: 1000,
            init_lr: 0.01,
            init_depth: 3000.0,
            seed: 0,
            snapshot_stride: 0,
            label: None,
        }
    }
}

impl LiftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth_freeze_until > self.iterations {
            return Err(Error::InvalidArgument("depth_freeze_until exceeds iterations".into()));
        }
        if !(self.noise_end > 0.0 && self.noise_end <= self.noise_start && self.noise_start <= 0.1) {
            return Err(Error::InvalidArgument(format!(
                "noise levels must satisfy 0 < end <= start <= 0.1 (got {} .. {})",
                self.noise_start, self.noise_end
            )));
        }
        if !(self.init_lr >= 0.0) || !(self.init_depth > 0.0) {
            return Err(Error::InvalidArgument("init_lr must be >= 0 and init_depth > 0".into()));
        }
        Ok(())
    }

    /// Noise level of iteration `k` (1-based).
    pub fn noise_level(&self, k: usize) -> f64 {
        let frac = k as f64 / self.iterations.max(1) as f64;
        self.noise_start * (self.noise_end / self.noise_start).powf(frac)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RigidInit {
    pub r0: Mat3,
    /// mm.
    pub t0: [f64; 3],
    /// Final mean reprojection distance, px.
    pub residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LiftTrace {
    pub reproj_px: Vec<f64>,
    pub root_depth_mm: Vec<f64>,
    /// `(iteration, coordinates)` pairs.
    pub snapshots: Vec<(usize, Vec<[f64; 3]>)>,
    pub init: Option<TraceInit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceInit {
    pub t0: [f64; 3],
    pub residual_px: f64,
    pub pool_index: usize,
}

impl LiftTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,reproj_px,root_depth_mm\n");
        for (i, (r, d)) in self.reproj_px.iter().zip(&self.root_depth_mm).enumerate() {
            s.push_str(&format!("{},{},{}\n", i + 1, r, d));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

fn check_evidence<S: Real>(kp: &Pose2D<S>) -> Result<()> {
    if kp.visible_count() < MIN_VISIBLE_JOINTS {
        return Err(Error::InsufficientEvidence(format!(
            "{} visible joints, need at least {MIN_VISIBLE_JOINTS}",
            kp.visible_count()
        )));
    }
    Ok(())
}

/// Mean reprojection distance over visible joints and its gradient with
/// respect to the posed points.
fn reprojection_objective(y: &[[f64; 3]], kp: &[[f64; 2]], vis: &[bool], k: &CameraIntrinsics<f64>) -> (f64, Vec<[f64; 3]>) {
    const MIN_Z: f64 = 1.0;
    let n = vis.iter().filter(|&&v| v).count() as f64;
    let mut loss = 0.0;
    let mut grads = vec![[0.0; 3]; y.len()];
    for (j, p) in y.iter().enumerate() {
        if !vis[j] {
            continue;
        }
        let clamped = p[2] < MIN_Z;
        let z = p[2].max(MIN_Z);
        let r = [k.fx * p[0] / z + k.cx - kp[j][0], k.fy * p[1] / z + k.cy - kp[j][1]];
        let d = (r[0] * r[0] + r[1] * r[1]).sqrt();
        loss += d / n;
        if d > 0.0 {
            let gp = [r[0] / (d * n), r[1] / (d * n)];
            grads[j] = [
                gp[0] * k.fx / z,
                gp[1] * k.fy / z,
                if clamped { 0.0 } else { -(gp[0] * k.fx * p[0] + gp[1] * k.fy * p[1]) / (z * z) },
            ];
        }
    }
    (loss, grads)
}

/// Mean point of the visible joints' rays at unit depth, scaled to `depth`.
fn evidence_centre(kp: &[[f64; 2]], vis: &[bool], root: usize, k: &CameraIntrinsics<f64>, depth: f64) -> [f64; 3] {
    if vis[root] {
        return k.backproject(&kp[root], depth);
    }
    let (mut u, mut n) = ([0.0; 2], 0.0);
    for (p, _) in kp.iter().zip(vis).filter(|(_, &v)| v) {
        u[0] += p[0];
        u[1] += p[1];
        n += 1.0;
    }
    k.backproject(&[u[0] / n, u[1] / n], depth)
}

/// Rigid fit of a root-relative pose to 2D keypoints: Adam over axis-angle
/// rotation and a log-depth translation, keeping the best iterate.
pub fn init_rigid<S: Real>(
    x_init: &Pose3D<S>,
    kp: &Pose2D<S>,
    k: &CameraIntrinsics<S>,
    cfg: &LiftConfig,
) -> Result<RigidInit> {
    cfg.validate()?;
    check_evidence(kp)?;
    if x_init.joint_count() != kp.joint_count() {
        return Err(Error::TopologyMismatch("initial pose and keypoints differ in joint count".into()));
    }
    let x: Vec<[f64; 3]> = x_init.cast::<f64>().coords().to_vec();
    let kpf = kp.cast::<f64>();
    let k = k.cast::<f64>();
    let root = x_init.topology().root_index;
    let c = evidence_centre(kpf.points(), kpf.visible(), root, &k, cfg.init_depth);
    // Parameters: [θ (rad); a, b, ρ] with T = D·e^ρ·(a, b, 1), D the initial depth.
    let d0 = cfg.init_depth;
    let translation = |p: &[f64]| {
        let z = d0 * p[5].exp();
        [z * p[3], z * p[4], z]
    };
    let mut p = vec![0.0, 0.0, 0.0, c[0] / c[2], c[1] / c[2], 0.0];
    let mut adam = VecAdam::<f64>::new(6, cfg.init_lr);
    let eval = |p: &[f64]| -> (f64, Mat3, Vec<[f64; 3]>, Vec<[f64; 3]>) {
        let r = exp_so3([p[0], p[1], p[2]]);
        let t = translation(p);
        let rx: Vec<[f64; 3]> = x.iter().map(|v| mat_vec(&r, v)).collect();
        let y: Vec<[f64; 3]> = rx.iter().map(|v| [v[0] + t[0], v[1] + t[1], v[2] + t[2]]).collect();
        let (loss, g) = reprojection_objective(&y, kpf.points(), kpf.visible(), &k);
        (loss, r, rx, g)
    };
    let (mut best_loss, mut best_r, _, _) = eval(&p);
    let mut best_p = p.clone();
    if !best_loss.is_finite() {
        return Err(Error::InitDiverged("non-finite objective at start".into()));
    }
    let decay = if cfg.init_steps > 1 { 0.01f64.powf(1.0 / (cfg.init_steps - 1) as f64) } else { 1.0 };
    for step in 0..cfg.init_steps {
        let (loss, r, rx, gy) = eval(&p);
        if !loss.is_finite() {
            return Err(Error::InitDiverged(format!("non-finite objective at step {step}")));
        }
        if loss < best_loss {
            best_loss = loss;
            best_p.copy_from_slice(&p);
            best_r = r;
        }
        let mut gw = [0.0; 3];
        let mut gt = [0.0; 3];
        for (v, g) in rx.iter().zip(&gy) {
            let c = cross(v, g);
            for a in 0..3 {
                gw[a] += c[a];
                gt[a] += g[a];
            }
        }
        let jt = transpose(&left_jacobian([p[0], p[1], p[2]]));
        let gth = mat_vec(&jt, &gw);
        let z = d0 * p[5].exp();
        let grad = [gth[0], gth[1], gth[2], z * gt[0], z * gt[1], z * (p[3] * gt[0] + p[4] * gt[1] + gt[2])];
        adam.lr = cfg.init_lr * decay.powi(step as i32);
        adam.update(&mut p, &grad);
    }
    let (loss, r, _, _) = eval(&p);
    if loss.is_finite() && loss < best_loss {
        best_loss = loss;
        best_p.copy_from_slice(&p);
        best_r = r;
    }
    let t0 = translation(&best_p);
    if !(t0[2] > 0.0) || !best_loss.is_finite() || t0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InitDiverged(format!("fitted translation {t0:?} is not usable")));
    }
    Ok(RigidInit { r0: best_r, t0, residual: best_loss })
}

/// One keypoint set to lift.
#[derive(Clone, Debug)]
pub struct LiftProblem<S> {
    pub keypoints: Pose2D<S>,
    pub intrinsics: CameraIntrinsics<S>,
    /// Seed for the training-pool draw.
    pub seed: u64,
}

struct LiftState<S> {
    rays: RayBundle<S>,
    coords: Vec<[S; 3]>,
    t0z: S,
    trace: LiftTrace,
    kp: Pose2D<S>,
    k: CameraIntrinsics<S>,
}

fn prepare<S: Real>(
    prob: &LiftProblem<S>,
    topology: &Arc<SkeletonTopology>,
    pool: &[Pose3D<S>],
    cfg: &LiftConfig,
) -> Result<LiftState<S>> {
    if prob.keypoints.joint_count() != topology.joint_count() {
        return Err(Error::TopologyMismatch(format!(
            "{} keypoints for a {}-joint prior",
            prob.keypoints.joint_count(),
            topology.joint_count()
        )));
    }
    check_evidence(&prob.keypoints)?;
    if pool.is_empty() {
        return Err(Error::EmptyInput("training pool is empty".into()));
    }
    let idx = SeededRng::new(prob.seed).index(pool.len());
    let init = init_rigid(&pool[idx], &prob.keypoints, &prob.intrinsics, cfg)?;
    let rays = rays_from_2d(&prob.keypoints, &prob.intrinsics);
    let t0z: S = lit(init.t0[2]);
    let x0 = pool[idx].cast::<f64>();
    let coords = (0..topology.joint_count())
        .map(|j| {
            if prob.keypoints.visible()[j] {
                prob.intrinsics.backproject(&prob.keypoints.points()[j], t0z)
            } else {
                let p = mat_vec(&init.r0, &x0.coords()[j]);
                [0, 1, 2].map(|a| lit::<S>(p[a] + init.t0[a]))
            }
        })
        .collect();
    let trace = LiftTrace {
        init: Some(TraceInit { t0: init.t0, residual_px: init.residual, pool_index: idx }),
        ..LiftTrace::default()
    };
    Ok(LiftState { rays, coords, t0z, trace, kp: prob.keypoints.clone(), k: prob.intrinsics })
}

fn visible_reprojection<S: Real>(coords: &[[S; 3]], kp: &Pose2D<S>, k: &CameraIntrinsics<S>) -> f64 {
    let mut total = 0.0;
    let mut n = 0.0;
    for (j, p) in coords.iter().enumerate() {
        if kp.visible()[j] {
            let uv = k.project_point(p);
            let (du, dv) = ((uv[0] - kp.points()[j][0]).to_f64_lossy(), (uv[1] - kp.points()[j][1]).to_f64_lossy());
            total += (du * du + dv * dv).sqrt();
            n += 1.0;
        }
    }
    total / n
}

/// Lifts several keypoint sets in lockstep, batching the prior evaluations.
/// Each problem follows exactly the single-pose procedure of [`lift`].
pub fn lift_batch<S: Real, P: ScorePrior<S> + ?Sized>(
    problems: &[LiftProblem<S>],
    prior: &P,
    pool: &[Pose3D<S>],
    cfg: &LiftConfig,
) -> Result<Vec<(Pose3D<S>, LiftTrace)>> {
    cfg.validate()?;
    let topology = prior.topology();
    if problems.is_empty() {
        return Ok(Vec::new());
    }
    let j = topology.joint_count();
    let root = topology.root_index;
    let mut states: Vec<LiftState<S>> = problems.iter().map(|p| prepare(p, topology, pool, cfg)).collect::<Result<_>>()?;
    let mut batch = Tensor::<S>::zeros(&[states.len(), 3 * j]);
    for k in 1..=cfg.iterations {
        for (b, st) in states.iter_mut().enumerate() {
            let (mut c, _) = snap_coords(&st.coords, &st.rays)?;
            if k <= cfg.depth_freeze_until {
                let rz = c[root][2];
                if !(rz > S::zero()) || !rz.is_finite() {
                    return Err(Error::Diverged { iteration: k });
                }
                let a = st.t0z / rz;
                for p in c.iter_mut() {
                    *p = p.map(|v| v * a);
                }
                // exact pin against rounding
                c[root][2] = st.t0z;
            }
            if c.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { iteration: k });
            }
            st.trace.reproj_px.push(visible_reprojection(&c, &st.kp, &st.k));
            st.trace.root_depth_mm.push(c[root][2].to_f64_lossy());
            if cfg.snapshot_stride > 0 && k % cfg.snapshot_stride == 0 {
                st.trace.snapshots.push((k, c.iter().map(|p| p.map(|v| v.to_f64_lossy())).collect()));
            }
            let r = c[root];
            let row = batch.row_mut(b);
            for (i, p) in c.iter().enumerate() {
                for a in 0..3 {
                    row[3 * i + a] = p[a] - r[a];
                }
            }
            st.coords = c;
        }
        let t: S = lit(cfg.noise_level(k));
        let den = denoise_batch(prior, &batch, t, cfg.label.as_deref(), root)?;
        for (b, st) in states.iter_mut().enumerate() {
            let row = den.row(b);
            let x0: Vec<[S; 3]> = (0..j).map(|i| [row[3 * i], row[3 * i + 1], row[3 * i + 2]]).collect();
            let r = st.coords[root];
            let placed: Vec<[S; 3]> = x0.iter().map(|p| [0, 1, 2].map(|a| p[a] + r[a])).collect();
            if placed.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { iteration: k });
            }
            st.coords = placed;
        }
    }
    states
        .into_iter()
        .map(|st| {
            let (c, _) = snap_coords(&st.coords, &st.rays)?;
            Ok((Pose3D::new(c, Frame::CameraAbsolute, topology.clone())?, st.trace))
        })
        .collect()
}

/// Lifts one keypoint set; the training-pool draw uses `cfg.seed`.
pub fn lift<S: Real, P: ScorePrior<S> + ?Sized>(
    kp: &Pose2D<S>,
    k: &CameraIntrinsics<S>,
    prior: &P,
    pool: &[Pose3D<S>],
    cfg: &LiftConfig,
) -> Result<(Pose3D<S>, LiftTrace)> {
    let prob = LiftProblem { keypoints: kp.clone(), intrinsics: *k, seed: cfg.seed };
    Ok(lift_batch(&[prob], prior, pool, cfg)?.remove(0))
}

/// The prior-free baseline: the initial on-ray pose, snapped once.
pub fn snap_only<S: Real>(
    kp: &Pose2D<S>,
    k: &CameraIntrinsics<S>,
    pool: &[Pose3D<S>],
    cfg: &LiftConfig,
) -> Result<Pose3D<S>> {
    cfg.validate()?;
    let topology = pool.first().ok_or_else(|| Error::EmptyInput("training pool is empty".into()))?.topology();
    let prob = LiftProblem { keypoints: kp.clone(), intrinsics: *k, seed: cfg.seed };
    let st = prepare(&prob, topology, pool, cfg)?;
    let (c, _) = snap_coords(&st.coords, &st.rays)?;
    Pose3D::new(c, Frame::CameraAbsolute, topology.clone())
}

#[cfg(test)]
mod tests;
