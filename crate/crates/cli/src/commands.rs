use std::path::{Path, PathBuf};
use std::time::Instant;

use poselift::adaptation::{adapt, load_prior, save_control_delta, AdaptKind, AdaptStrategy};
use poselift::augment::{augment_records, train_conditional, AugmentConfig};
use poselift::datasets::{
    load_records, root_relative_poses, save_records, split, synth_generate, PoseRecord, SplitScheme, SynthConfig,
};
use poselift::geometry::pseudo_intrinsics;
use poselift::lifter::{lift, LiftConfig, LiftTrace};
use poselift::numerics::derive_seed;
use poselift::score_model::{train, ScoreModel};
use poselift::skeleton::{bone_samples, Pose3D};
use poselift::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::*;
use crate::manifest::{entries, RunManifest};
use crate::report;
use crate::settings::*;

fn required_out(c: &Common) -> Result<PathBuf> {
    c.out.clone().ok_or_else(|| Error::InvalidArgument("--out is required for this command".into()))
}

fn checkpoint_out(c: &Common, name: &str) -> Result<PathBuf> {
    match &c.out {
        Some(p) => Ok(p.clone()),
        None => {
            let dir = cache_dir();
            std::fs::create_dir_all(&dir)?;
            Ok(dir.join(name))
        }
    }
}

fn finish(
    command: &str,
    seed: u64,
    config: &impl Serialize,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    start: Instant,
) -> Result<()> {
    let manifest = RunManifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        config: serde_json::to_value(config).expect("settings serialize"),
        inputs: entries(inputs)?,
        outputs: entries(outputs)?,
        duration_s: start.elapsed().as_secs_f64(),
    };
    manifest.write(&outputs[0])?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value).expect("report serializes") + "\n")?;
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let start = Instant::now();
    let mut s: SynthSettings = load_config(a.common.config.as_deref())?;
    s.apply(&a);
    let out = required_out(&a.common)?;
    let cfg = SynthConfig {
        n: s.n,
        bone_scale: s.bone_scale,
        pose_variation: s.pose_variation,
        seed: s.seed,
        camera: pseudo_intrinsics(s.image_width, s.image_height)?,
        root_depth_range: (s.depth_min_mm, s.depth_max_mm),
        root_lateral_mm: s.lateral_mm,
        domain: s.domain.clone(),
        id_prefix: s.id_prefix.clone(),
    };
    let recs = synth_generate(&cfg)?;
    save_records(&recs, &out)?;
    println!("{}", report::kv_table(&[("records", recs.len().to_string()), ("domain", s.domain.clone()), ("bone_scale", s.bone_scale.to_string()), ("out", out.display().to_string())]));
    finish("synth", s.seed, &s, &[], &[out], start)
}

fn poses_of(path: &Path) -> Result<Vec<Pose3D<f64>>> {
    root_relative_poses(&load_records(path)?)
}

pub fn train_prior(a: TrainPriorArgs) -> Result<()> {
    let start = Instant::now();
    let mut s: TrainSettings = load_config(a.common.config.as_deref())?;
    s.apply(&a.train, a.common.seed);
    let out = checkpoint_out(&a.common, "prior.ckpt")?;
    let data = poses_of(&a.data)?;
    let mut model = ScoreModel::new(data[0].topology().clone(), s.model_config(), s.seed)?;
    let rep = train(&mut model, &data, &s.train_config(Some(cache_dir().join("train-prior"))))?;
    model.save_with_metadata(&out, &serde_json::json!({ "strategy": "pretrain" }))?;
    println!(
        "{}",
        report::kv_table(&[
            ("samples", data.len().to_string()),
            ("steps", rep.steps.to_string()),
            ("first_epoch_loss", format!("{:.4}", rep.epoch_losses.first().copied().unwrap_or(f64::NAN))),
            ("last_epoch_loss", format!("{:.4}", rep.epoch_losses.last().copied().unwrap_or(f64::NAN))),
            ("checkpoint", out.display().to_string()),
        ])
    );
    finish("train-prior", s.seed, &s, &[a.data], &[out], start)
}

#[derive(Serialize)]
struct AdaptRecord<'a> {
    #[serde(flatten)]
    settings: &'a AdaptSettings,
    train_size: usize,
}

pub fn adapt_cmd(a: AdaptArgs) -> Result<()> {
    let start = Instant::now();
    let mut s: AdaptSettings = load_config(a.common.config.as_deref())?;
    s.train.apply(&a.train, a.common.seed);
    if let Some(st) = &a.strategy {
        s.strategy = st.clone();
    }
    if a.limit.is_some() {
        s.limit = a.limit;
    }
    let kind: AdaptKind = s.strategy.parse()?;
    let out = checkpoint_out(&a.common, &format!("adapt-{}.ckpt", kind.tag()))?;
    let mut records = load_records(&a.data)?;
    if let Some(k) = s.limit {
        records = split(&records, &SplitScheme::FirstK(k))?.0;
    }
    let data = root_relative_poses(&records)?;
    let base = match &a.base {
        Some(p) => Some(load_prior(p)?),
        None => None,
    };
    let strategy = AdaptStrategy {
        kind,
        train: s.train.train_config(Some(cache_dir().join(format!("adapt-{}", kind.tag())))),
        scratch_config: if base.is_none() { Some(s.train.model_config()) } else { None },
    };
    let (model, rep) = adapt(base.as_ref(), &data, &strategy)?;
    // Record the architecture actually used (inherited from the base when present).
    s.train.hidden_width = model.config().hidden_width;
    s.train.groups = model.config().groups;
    match kind {
        AdaptKind::Ca => {
            let base_path = a.base.as_ref().expect("checked by adapt");
            let abs = std::fs::canonicalize(base_path)?;
            save_control_delta(&model, &out, &abs.display().to_string())?;
        }
        _ => model.save_with_metadata(&out, &serde_json::json!({ "strategy": kind.tag() }))?,
    }
    println!(
        "{}",
        report::kv_table(&[
            ("strategy", kind.tag().to_string()),
            ("train_size", data.len().to_string()),
            ("steps", rep.steps.to_string()),
            ("trainable_params", model.params().trainable_elements().to_string()),
            ("last_epoch_loss", format!("{:.4}", rep.epoch_losses.last().copied().unwrap_or(f64::NAN))),
            ("checkpoint", out.display().to_string()),
        ])
    );
    let mut inputs = vec![a.data.clone()];
    inputs.extend(a.base.clone());
    finish("adapt", s.train.seed, &AdaptRecord { settings: &s, train_size: data.len() }, &inputs, &[out], start)
}

#[derive(Serialize)]
struct LiftSummary {
    records: usize,
    skipped: usize,
    mean_final_reproj_px: f64,
    mean_init_residual_px: f64,
}

fn trace_name(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

pub fn lift_cmd(a: LiftArgs) -> Result<()> {
    let start = Instant::now();
    let mut cfg: LiftConfig = load_config(a.common.config.as_deref())?;
    apply_lift(&mut cfg, &a);
    cfg.validate()?;
    let out = required_out(&a.common)?;
    let prior = load_prior(&a.prior)?;
    let pool = poses_of(&a.pool)?;
    let records = load_records(&a.data)?;
    let todo: Vec<&PoseRecord> = records.iter().filter(|r| r.pose2d.is_some() && r.intrinsics.is_some()).collect();
    if todo.is_empty() {
        return Err(Error::EmptyInput("no records with 2D keypoints and intrinsics".into()));
    }
    let pool_threads = rayon::ThreadPoolBuilder::new()
        .num_threads(a.common.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let results: Vec<Result<(Pose3D<f64>, LiftTrace)>> = pool_threads.install(|| {
        todo.par_iter()
            .map(|r| {
                let rc = LiftConfig { seed: derive_seed(cfg.seed, &r.id), ..cfg.clone() };
                lift(r.pose2d.as_ref().expect("filtered"), r.intrinsics.as_ref().expect("filtered"), &prior, &pool, &rc)
            })
            .collect()
    });
    let mut lifted = Vec::with_capacity(todo.len());
    let (mut reproj, mut resid) = (0.0, 0.0);
    if let Some(dir) = &a.traces {
        std::fs::create_dir_all(dir)?;
    }
    for (r, res) in todo.iter().zip(results) {
        let (pose, trace) = res?;
        reproj += trace.reproj_px.last().copied().unwrap_or(0.0);
        resid += trace.init.as_ref().map(|i| i.residual_px).unwrap_or(0.0);
        if let Some(dir) = &a.traces {
            trace.write_csv(dir.join(format!("{}.csv", trace_name(&r.id))))?;
        }
        lifted.push(PoseRecord { pose3d: Some(pose), ..(*r).clone() });
    }
    save_records(&lifted, &out)?;
    let n = lifted.len() as f64;
    let summary = LiftSummary {
        records: lifted.len(),
        skipped: records.len() - lifted.len(),
        mean_final_reproj_px: reproj / n,
        mean_init_residual_px: resid / n,
    };
    println!(
        "{}",
        report::kv_table(&[
            ("records", summary.records.to_string()),
            ("skipped", summary.skipped.to_string()),
            ("mean_final_reproj_px", format!("{:.3e}", summary.mean_final_reproj_px)),
            ("mean_init_residual_px", format!("{:.3}", summary.mean_init_residual_px)),
            ("out", out.display().to_string()),
        ])
    );
    finish("lift", cfg.seed, &cfg, &[a.prior, a.data, a.pool], &[out], start)
}

pub fn augment_cmd(a: AugmentArgs) -> Result<()> {
    let start = Instant::now();
    let mut s: AugmentSettings = load_config(a.common.config.as_deref())?;
    s.train.apply(&a.train, a.common.seed);
    if let Some(v) = a.count {
        s.count = v;
    }
    if let Some(v) = a.steps {
        s.steps = v;
    }
    if let Some(v) = a.noise_start {
        s.noise_start = v;
    }
    let out = required_out(&a.common)?;
    let source = load_records(&a.source)?;
    let mut inputs = vec![a.source.clone()];
    let mut outputs = vec![out.clone()];
    let model = match (&a.model, &a.target) {
        (Some(m), _) => {
            inputs.push(m.clone());
            ScoreModel::load(m)?
        }
        (None, Some(t)) => {
            inputs.push(t.clone());
            let adult = root_relative_poses(&source)?;
            let infant = poses_of(t)?;
            let mut mc = s.train.model_config();
            mc.token_width = s.token_width;
            let (m, _) = train_conditional(&adult, &infant, &mc, &s.train.train_config(None))?;
            let dir = cache_dir();
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("augment-conditional.ckpt");
            m.save_with_metadata(&path, &serde_json::json!({ "strategy": "conditional" }))?;
            outputs.push(path);
            m
        }
        (None, None) => return Err(Error::MissingCondition("augment needs --model or --target".into())),
    };
    let cfg = AugmentConfig { steps: s.steps, noise_start: s.noise_start, target_label: s.target_label.clone(), seed: s.train.seed };
    let augmented = augment_records(&source, &model, &cfg, s.count)?;
    save_records(&augmented, &out)?;
    let orig = root_relative_poses(&source)?;
    let aug: Vec<Pose3D<f64>> = augmented.iter().filter_map(|r| r.pose3d.clone()).collect();
    let div = poselift::augment::diversity(&orig, &aug)?;
    let mean_len = |p: &[Pose3D<f64>]| -> Result<f64> { Ok(bone_samples(p)?.summarize().mean_bone_length()) };
    println!(
        "{}",
        report::kv_table(&[
            ("augmented", augmented.len().to_string()),
            ("target_label", s.target_label.clone()),
            ("source_mean_bone_mm", format!("{:.2}", mean_len(&orig)?)),
            ("augmented_mean_bone_mm", format!("{:.2}", mean_len(&aug)?)),
            ("ranges_non_decreasing", div.non_decreasing().to_string()),
            ("out", out.display().to_string()),
        ])
    );
    finish("augment", s.train.seed, &s, &inputs, &outputs, start)
}

pub fn eval_cmd(a: EvalArgs) -> Result<()> {
    let start = Instant::now();
    let out = required_out(&a.common)?;
    let pred = load_records(&a.pred)?;
    let gt = load_records(&a.gt)?;
    let rep = report::evaluate(&pred, &gt)?;
    write_json(&out, &rep)?;
    println!("{}", report::eval_table(&rep));
    finish("eval", a.common.seed.unwrap_or(0), &serde_json::json!({}), &[a.pred, a.gt], &[out], start)
}

pub fn stats_cmd(a: StatsArgs) -> Result<()> {
    let start = Instant::now();
    let mut s: StatsSettings = load_config(a.common.config.as_deref())?;
    if let Some(b) = a.bins {
        s.bins = b;
    }
    if s.bins == 0 {
        return Err(Error::InvalidArgument("--bins must be positive".into()));
    }
    let out = required_out(&a.common)?;
    let poses = poses_of(&a.data)?;
    let samples = bone_samples(&poses)?;
    let stats = samples.summarize();
    write_json(&out, &stats)?;
    let stem = out.with_extension("");
    let bone_csv = PathBuf::from(format!("{}_bone_hist.csv", stem.display()));
    let angle_csv = PathBuf::from(format!("{}_angle_hist.csv", stem.display()));
    std::fs::write(&bone_csv, report::histograms(&samples, s.bins, true))?;
    std::fs::write(&angle_csv, report::histograms(&samples, s.bins, false))?;
    println!("{}", report::stats_table(&stats));
    finish("stats", a.common.seed.unwrap_or(0), &s, &[a.data], &[out, bone_csv, angle_csv], start)
}
