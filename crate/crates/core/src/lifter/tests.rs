use super::rotation::{det, mat_mul, IDENTITY};
use super::*;
use crate::datasets::{synth_generate, synth_poses, SynthConfig};
use crate::geometry::{project, pseudo_intrinsics};
use crate::score_model::NoiseSchedule;

/// Isotropic Gaussian around a fixed pose: `s(x) = −(x − μ)/(v + σ²)`.
struct GaussianPrior {
    mean: Vec<f64>,
    var: f64,
    schedule: NoiseSchedule,
    topology: Arc<SkeletonTopology>,
}

impl ScorePrior<f64> for GaussianPrior {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }
    fn topology(&self) -> &Arc<SkeletonTopology> {
        &self.topology
    }
    fn score_batch(&self, x: &Tensor<f64>, t: &[f64], _label: Option<&str>) -> Result<Tensor<f64>> {
        let mut out = x.clone();
        for b in 0..x.rows() {
            let s2 = self.schedule.sigma(t[b]).powi(2);
            for (o, m) in out.row_mut(b).iter_mut().zip(&self.mean) {
                *o = -(*o - m) / (self.var + s2);
            }
        }
        Ok(out)
    }
}

fn gaussian(var: f64, mean_seed: u64) -> GaussianPrior {
    GaussianPrior {
        mean: synth_poses(1, 1.0, 0.2, mean_seed)[0].flatten(),
        var,
        schedule: NoiseSchedule::default(),
        topology: Arc::new(SkeletonTopology::h36m_17()),
    }
}

fn quick() -> LiftConfig {
    LiftConfig { iterations: 60, depth_freeze_until: 50, init_steps: 300, ..LiftConfig::default() }
}

fn rigid_case(seed: u64, rot: [f64; 3], t: [f64; 3]) -> (Pose3D<f64>, Pose2D<f64>, CameraIntrinsics<f64>) {
    let x = synth_poses(1, 1.0, 0.3, seed).remove(0);
    let r = exp_so3(rot);
    let posed: Vec<[f64; 3]> = x.coords().iter().map(|p| {
        let q = mat_vec(&r, p);
        [q[0] + t[0], q[1] + t[1], q[2] + t[2]]
    }).collect();
    let k = pseudo_intrinsics(1000.0, 1000.0).unwrap();
    let kp = project(&Pose3D::new(posed, Frame::CameraAbsolute, x.topology().clone()).unwrap(), &k).unwrap();
    (x, kp, k)
}

#[test]
fn rigid_init_recovers_a_known_placement() {
    for (seed, rot, t) in [
        (1, [0.1, 0.3, -0.05], [120.0, -80.0, 4200.0]),
        (2, [-0.2, -0.4, 0.1], [-200.0, 150.0, 3500.0]),
        (3, [0.0, 0.6, 0.0], [0.0, 0.0, 5000.0]),
    ] {
        let (x, kp, k) = rigid_case(seed, rot, t);
        let init = init_rigid(&x, &kp, &k, &LiftConfig::default()).unwrap();
        assert!(init.residual < 0.5, "residual {}", init.residual);
        assert!((init.t0[2] - t[2]).abs() / t[2] < 0.05, "depth {} vs {}", init.t0[2], t[2]);
    }
}

#[test]
fn rigid_init_at_optimum_stays_there() {
    let (x, kp, k) = rigid_case(5, [0.0; 3], [0.0, 0.0, 3000.0]);
    let init = init_rigid(&x, &kp, &k, &LiftConfig::default()).unwrap();
    assert!(init.residual < 1e-3);
    for i in 0..3 {
        for j in 0..3 {
            assert!((init.r0[i][j] - IDENTITY[i][j]).abs() < 1e-3);
        }
    }
}

#[test]
fn rigid_init_is_a_deterministic_rotation() {
    let (x, kp, k) = rigid_case(7, [0.3, -0.2, 0.1], [50.0, 50.0, 3800.0]);
    let a = init_rigid(&x, &kp, &k, &quick()).unwrap();
    assert_eq!(a, init_rigid(&x, &kp, &k, &quick()).unwrap());
    let rtr = mat_mul(&transpose(&a.r0), &a.r0);
    for i in 0..3 {
        for j in 0..3 {
            assert!((rtr[i][j] - IDENTITY[i][j]).abs() < 1e-9);
        }
    }
    assert!((det(&a.r0) - 1.0).abs() < 1e-9);
    assert!(a.t0[2] > 0.0);
}

#[test]
fn too_few_visible_joints() {
    let (x, kp, k) = rigid_case(1, [0.0; 3], [0.0, 0.0, 3000.0]);
    let mut vis = vec![false; 17];
    vis[..3].fill(true);
    let kp = kp.with_visibility(vis).unwrap();
    assert!(matches!(init_rigid(&x, &kp, &k, &quick()), Err(Error::InsufficientEvidence(_))));
    let prior = gaussian(100.0, 0);
    assert!(matches!(lift(&kp, &k, &prior, &[x], &quick()), Err(Error::InsufficientEvidence(_))));
}

#[test]
fn zero_score_prior_keeps_the_initial_on_ray_pose() {
    let recs = synth_generate(&SynthConfig { n: 3, seed: 2, ..SynthConfig::default() }).unwrap();
    let pool = synth_poses(10, 1.0, 0.3, 99);
    let prior = gaussian(f64::INFINITY, 0);
    for r in &recs {
        let (kp, k) = (r.pose2d.as_ref().unwrap(), r.intrinsics.as_ref().unwrap());
        let (out, trace) = lift(kp, k, &prior, &pool, &quick()).unwrap();
        let base = snap_only(kp, k, &pool, &quick()).unwrap();
        for (a, b) in out.coords().iter().flatten().zip(base.coords().iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
        let t0z = trace.init.as_ref().unwrap().t0[2];
        for c in out.coords() {
            assert!((c[2] - t0z).abs() < 1e-9);
        }
    }
}

#[test]
fn depth_is_frozen_and_rays_hold_every_iteration() {
    let recs = synth_generate(&SynthConfig { n: 4, seed: 6, ..SynthConfig::default() }).unwrap();
    let pool = synth_poses(10, 1.0, 0.3, 98);
    let prior = gaussian(400.0, 1);
    let cfg = quick();
    for r in &recs {
        let (kp, k) = (r.pose2d.as_ref().unwrap(), r.intrinsics.as_ref().unwrap());
        let (out, trace) = lift(kp, k, &prior, &pool, &cfg).unwrap();
        assert_eq!(trace.reproj_px.len(), cfg.iterations);
        let t0z = trace.init.as_ref().unwrap().t0[2];
        for (i, d) in trace.root_depth_mm.iter().enumerate() {
            if i < cfg.depth_freeze_until {
                assert!((d - t0z).abs() < 1e-6);
            }
        }
        assert!(trace.reproj_px.iter().all(|&e| e < 1e-6));
        let final_err = crate::geometry::reprojection_error(&out, kp, k).unwrap();
        assert!(final_err < 1e-6);
    }
}

#[test]
fn gaussian_prior_pulls_towards_its_mean_shape() {
    // Keypoints of the prior's own mean: the lift should recover it.
    let prior = gaussian(25.0, 3);
    let topo = prior.topology.clone();
    let gt = Pose3D::from_flat(&prior.mean, Frame::RootRelative, topo.clone()).unwrap()
        .into_absolute()
        .translated([100.0, 50.0, 4000.0])
        .unwrap();
    let k = pseudo_intrinsics(1000.0, 1000.0).unwrap();
    let kp = project(&gt, &k).unwrap();
    let pool = synth_poses(5, 1.0, 0.3, 11);
    let cfg = LiftConfig { iterations: 400, depth_freeze_until: 380, init_steps: 500, ..LiftConfig::default() };
    let (out, _) = lift(&kp, &k, &prior, &pool, &cfg).unwrap();
    let base = snap_only(&kp, &k, &pool, &cfg).unwrap();
    use crate::datasets::{mpjpe, Alignment};
    let e_lift = mpjpe(&out, &gt, Alignment::RootAligned).unwrap();
    let e_base = mpjpe(&base, &gt, Alignment::RootAligned).unwrap();
    assert!(e_lift < 0.5 * e_base, "lift {e_lift} vs snap-only {e_base}");
}

#[test]
fn lifting_is_deterministic_and_batch_consistent() {
    let recs = synth_generate(&SynthConfig { n: 3, seed: 8, ..SynthConfig::default() }).unwrap();
    let pool = synth_poses(10, 1.0, 0.3, 97);
    let prior = gaussian(400.0, 2);
    let cfg = LiftConfig { snapshot_stride: 20, ..quick() };
    let probs: Vec<_> = recs
        .iter()
        .enumerate()
        .map(|(i, r)| LiftProblem { keypoints: r.pose2d.clone().unwrap(), intrinsics: r.intrinsics.unwrap(), seed: i as u64 })
        .collect();
    let a = lift_batch(&probs, &prior, &pool, &cfg).unwrap();
    let b = lift_batch(&probs, &prior, &pool, &cfg).unwrap();
    assert_eq!(a, b);
    for (i, p) in probs.iter().enumerate() {
        let single = lift(&p.keypoints, &p.intrinsics, &prior, &pool, &LiftConfig { seed: i as u64, ..cfg.clone() }).unwrap();
        for (x, y) in single.0.coords().iter().flatten().zip(a[i].0.coords().iter().flatten()) {
            assert!((x - y).abs() < 1e-9);
        }
        assert_eq!(single.1.snapshots.len(), 3);
    }
}

#[test]
fn noise_schedule_strictly_decreases() {
    let cfg = LiftConfig::default();
    assert!((cfg.noise_level(0) - 0.1).abs() < 1e-15);
    assert!((cfg.noise_level(1000) - 0.001).abs() < 1e-15);
    for k in 1..1000 {
        assert!(cfg.noise_level(k + 1) < cfg.noise_level(k));
    }
}

#[test]
fn config_validation() {
    assert!(LiftConfig { depth_freeze_until: 1001, ..LiftConfig::default() }.validate().is_err());
    assert!(LiftConfig { noise_start: 0.2, ..LiftConfig::default() }.validate().is_err());
    assert!(LiftConfig { noise_end: 0.0, ..LiftConfig::default() }.validate().is_err());
    assert!(LiftConfig { noise_end: 0.05, noise_start: 0.01, ..LiftConfig::default() }.validate().is_err());
    LiftConfig::default().validate().unwrap();
}

#[test]
fn trace_csv_layout() {
    let t = LiftTrace { reproj_px: vec![0.5, 0.25], root_depth_mm: vec![3000.0, 3001.0], ..Default::default() };
    assert_eq!(t.to_csv(), "iter,reproj_px,root_depth_mm\n1,0.5,3000\n2,0.25,3001\n");
}

