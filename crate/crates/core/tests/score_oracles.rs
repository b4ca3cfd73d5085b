use std::sync::Arc;

use poselift::numerics::{SeededRng, Tensor};
use poselift::score_model::{denoise_batch, NoiseSchedule, ScorePrior};
use poselift::skeleton::SkeletonTopology;
use poselift::Result;

/// Exact score of `N(0, diag(var))` convolved with the schedule's noise.
struct DiagonalGaussian {
    var: Vec<f64>,
    schedule: NoiseSchedule,
    topology: Arc<SkeletonTopology>,
}

impl ScorePrior<f64> for DiagonalGaussian {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn topology(&self) -> &Arc<SkeletonTopology> {
        &self.topology
    }

    fn score_batch(&self, x: &Tensor<f64>, t: &[f64], _label: Option<&str>) -> Result<Tensor<f64>> {
        let mut out = x.clone();
        for (b, &tb) in t.iter().enumerate() {
            let s2 = self.schedule.sigma(tb).powi(2);
            for (o, v) in out.row_mut(b).iter_mut().zip(&self.var) {
                *o = -*o / (v + s2);
            }
        }
        Ok(out)
    }
}

#[test]
fn denoising_a_gaussian_prior_gives_the_conjugate_posterior_mean() {
    let mut rng = SeededRng::new(5);
    let prior = DiagonalGaussian {
        var: (0..51).map(|_| rng.uniform_in(10.0f64, 200.0).powi(2)).collect(),
        schedule: NoiseSchedule::default(),
        topology: Arc::new(SkeletonTopology::h36m_17()),
    };
    for t in [0.001, 0.05, 0.3, 1.0] {
        let x = Tensor::from_fn(&[4, 51], |_| 300.0 * rng.normal::<f64>());
        let out = denoise_batch(&prior, &x, t, None, 0).unwrap();
        let s2 = prior.schedule.sigma(t).powi(2);
        for b in 0..4 {
            assert_eq!(&out.row(b)[..3], &[0.0; 3]);
            for i in 3..51 {
                // E[x0 | x] = Σ (Σ + σ²I)⁻¹ x for a zero-mean Gaussian.
                let expect = prior.var[i] / (prior.var[i] + s2) * x.row(b)[i];
                assert!((out.row(b)[i] - expect).abs() < 1e-6, "t={t} row {b} dim {i}");
            }
        }
    }
}
