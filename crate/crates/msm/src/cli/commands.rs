//! Command bodies behind the CLI dispatcher.

use crate::cli::config::*;
use crate::cli::manifest::*;
use crate::data::{phantom, GaussianFieldSampler};
use crate::denoiser::{CheckpointMeta, Denoiser, GaussianOracle, MlpConfig, MlpDenoiser};
use crate::error::{Error, Result};
use crate::masks::{MaskDistribution, MaskOp};
use crate::numerics::io::{fnv64_hex, read_tensor, write_pgm, write_tensor};
use crate::numerics::rng::RngState;
use crate::numerics::tensor::{norm2, sub, Tensor};
use crate::posterior::{
    reconstruct_general, reconstruct_per_mask_mri, ForwardOp, GuidanceConfig, GuidanceMode,
};
use crate::sampler::{run_chain, InitRule, NoHooks, SampleTrace, SamplerConfig};
use crate::theory_eval::kl::KlEstimator;
use crate::theory_eval::metrics::{psnr, ssim};
use crate::theory_eval::study::{kl_study, KlStudyConfig, VarianceProbeConfig};
use crate::training::{train, LossMode, TrainConfig};
use crate::transforms::{make_coil_maps, Transform};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::file(path, e.to_string()))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::file(path, e.to_string()))
}

// --- gen-data ----------------------------------------------------------------

fn image_sampler(
    cfg: &GenDataConfig,
) -> Result<Box<dyn Fn(&mut RngState) -> Vec<f64> + Sync>> {
    let complex = cfg.transform == TransformKind::FourierCoils;
    match cfg.kind {
        DataKind::GaussianField => {
            let sampler =
                GaussianFieldSampler::new(cfg.height, cfg.width, cfg.length_scale, cfg.field_var)?;
            if complex {
                Ok(Box::new(move |rng| sampler.sample_complex(rng)))
            } else {
                Ok(Box::new(move |rng| sampler.sample(rng)))
            }
        }
        DataKind::Phantom => {
            let (h, w) = (cfg.height, cfg.width);
            if complex {
                Ok(Box::new(move |rng| {
                    phantom(h, w, rng).iter().flat_map(|&v| [v, 0.0]).collect()
                }))
            } else {
                Ok(Box::new(move |rng| phantom(h, w, rng)))
            }
        }
    }
}

fn box_inpaint_keep(
    height: usize,
    width: usize,
    top: usize,
    left: usize,
    box_h: usize,
    box_w: usize,
) -> Result<MaskOp> {
    if top + box_h > height || left + box_w > width {
        return Err(Error::Config(format!(
            "box {box_h}x{box_w} at ({top}, {left}) exceeds image {height}x{width}"
        )));
    }
    let keep: Vec<usize> = (0..height * width)
        .filter(|&i| {
            let (r, c) = (i / width, i % width);
            !(r >= top && r < top + box_h && c >= left && c < left + box_w)
        })
        .collect();
    MaskOp::new(keep, height * width)
}

pub fn cmd_gen_data(cfg: &GenDataConfig, seed: u64, run_dir: &Path) -> Result<()> {
    if cfg.count == 0 {
        return Err(Error::Config("count must be positive".into()));
    }
    let mask_dist = cfg.mask.to_dist()?;
    if cfg.rho < 0.0 {
        return Err(Error::Config("rho must be nonnegative".into()));
    }
    let root = RngState::new(seed);
    let (transform, coil_files) = match cfg.transform {
        TransformKind::Identity => (Transform::identity(cfg.height * cfg.width), None),
        TransformKind::FourierCoils => {
            let k = cfg
                .coils
                .ok_or_else(|| Error::Config("fourier_coils needs a coil count".into()))?;
            let maps = make_coil_maps(cfg.height, cfg.width, k, &mut root.split(0xc011));
            let mut files = Vec::with_capacity(k);
            for (i, m) in maps.iter().enumerate() {
                let name = format!("coil_{i:02}.msmt");
                write_tensor(&run_dir.join(&name), m)?;
                files.push(name);
            }
            (Transform::fourier_coils(cfg.height, cfg.width, maps)?, Some(files))
        }
    };
    if mask_dist.ambient_dim() != transform.measurement_dim() {
        return Err(Error::Config(format!(
            "mask ambient dim {} does not match measurement dim {}",
            mask_dist.ambient_dim(),
            transform.measurement_dim()
        )));
    }
    let sample_image = image_sampler(cfg)?;
    let complex = cfg.transform == TransformKind::FourierCoils;
    let inst_dir = run_dir.join("instances");
    ensure_dir(&inst_dir)?;

    let x_shape: Vec<usize> = if complex {
        vec![cfg.height, cfg.width, 2]
    } else {
        vec![cfg.height, cfg.width]
    };
    let data_rng = root.split(0xda7a);
    let mut manifest_instances = Vec::with_capacity(cfg.count);
    let mut z_store: Vec<Vec<f64>> = Vec::with_capacity(cfg.count);
    let mut x_store: Vec<Vec<f64>> = Vec::with_capacity(cfg.count);
    for k in 0..cfg.count {
        let mut inst_rng = data_rng.split(k as u64);
        let x = sample_image(&mut inst_rng);
        let z = transform.forward(&x)?;
        let mask = mask_dist.sample(&mut inst_rng);
        let mut s = mask.apply(&z)?;
        if cfg.rho > 0.0 {
            let noise = inst_rng.gaussian_vec(s.len());
            for (si, &g) in s.iter_mut().zip(&noise) {
                *si += cfg.rho * g;
            }
        }
        let xf = format!("instances/inst_{k:04}_x.msmt");
        let zf = format!("instances/inst_{k:04}_z.msmt");
        let sf = format!("instances/inst_{k:04}_s.msmt");
        save_vec_tensor(&run_dir.join(&xf), &x_shape, &x, complex)?;
        save_vec_tensor(&run_dir.join(&zf), &[z.len()], &z, false)?;
        save_vec_tensor(&run_dir.join(&sf), &[s.len()], &s, false)?;
        manifest_instances.push(ManifestInstance { x: xf, z: zf, s: sf, mask: mask.to_ascii() });
        z_store.push(z);
        x_store.push(x);
    }

    // preview of the first instance
    if let Ok(t) = Tensor::from_slice(&x_shape, &x_store[0]) {
        let _ = write_pgm(&run_dir.join("preview_x0.pgm"), &t);
    }

    let measurements = match &cfg.inverse_problem {
        None => None,
        Some(inv) => {
            if inv.eta < 0.0 {
                return Err(Error::Config("eta must be nonnegative".into()));
            }
            let meas_rng = root.split(0x9ea5);
            let mut instances = Vec::with_capacity(cfg.count);
            for (k, z) in z_store.iter().enumerate() {
                let mut inst_rng = meas_rng.split(k as u64);
                let (h_op, h_mask) = match &inv.kind {
                    InverseKind::BoxInpaint { top, left, box_h, box_w } => {
                        if cfg.transform != TransformKind::Identity {
                            return Err(Error::Config(
                                "box inpainting operates on identity-transform data".into(),
                            ));
                        }
                        let keep =
                            box_inpaint_keep(cfg.height, cfg.width, *top, *left, *box_h, *box_w)?;
                        let text = keep.to_ascii();
                        (ForwardOp::BoxInpaint { keep }, Some(text))
                    }
                    InverseKind::DownsampleBlur { factor } => {
                        if cfg.transform != TransformKind::Identity {
                            return Err(Error::Config(
                                "downsampling operates on identity-transform data".into(),
                            ));
                        }
                        let op = ForwardOp::DownsampleBlur {
                            height: cfg.height,
                            width: cfg.width,
                            factor: *factor,
                        };
                        op.validate()?;
                        (op, None)
                    }
                    InverseKind::KspaceSubsample { accel, autocal, autocal_in_budget } => {
                        if cfg.transform != TransformKind::FourierCoils {
                            return Err(Error::Config(
                                "k-space subsampling needs fourier_coils data".into(),
                            ));
                        }
                        let dist = MaskDistribution::KspaceLines {
                            height: cfg.height,
                            lines: cfg.width,
                            coils: cfg.coils.unwrap_or(1),
                            accel: *accel,
                            autocal: *autocal,
                            autocal_in_budget: *autocal_in_budget,
                        };
                        dist.validate()?;
                        let keep = dist.sample(&mut inst_rng);
                        let text = keep.to_ascii();
                        (ForwardOp::KspaceSubsample { keep }, Some(text))
                    }
                };
                let mut y = h_op.apply(z)?;
                if inv.eta > 0.0 {
                    let noise = inst_rng.gaussian_vec(y.len());
                    for (yi, &g) in y.iter_mut().zip(&noise) {
                        *yi += inv.eta * g;
                    }
                }
                let yf = format!("instances/inst_{k:04}_y.msmt");
                save_vec_tensor(&run_dir.join(&yf), &[y.len()], &y, false)?;
                instances.push(MeasurementInstance {
                    y: yf,
                    h_mask,
                    x: manifest_instances[k].x.clone(),
                    z: manifest_instances[k].z.clone(),
                });
            }
            Some(MeasurementSection {
                eta: inv.eta,
                operator: inv.kind.clone(),
                seed,
                instances,
            })
        }
    };

    let manifest = DatasetManifest {
        kind: cfg.kind,
        count: cfg.count,
        height: cfg.height,
        width: cfg.width,
        rho: cfg.rho,
        transform: ManifestTransform {
            kind: cfg.transform,
            height: cfg.height,
            width: cfg.width,
            coil_files,
        },
        instances: manifest_instances,
        measurements,
    };
    manifest.save(&run_dir.join("manifest.json"))
}

// --- train -------------------------------------------------------------------

pub fn cmd_train(cfg: &TrainConfigFile, seed: u64, run_dir: &Path) -> Result<()> {
    let manifest_path = PathBuf::from(&cfg.dataset);
    if !manifest_path.exists() {
        return Err(Error::file(&manifest_path, "dataset manifest not found"));
    }
    let manifest = DatasetManifest::load(&manifest_path)?;
    let data_dir = manifest_path.parent().unwrap_or(Path::new("."));
    let dataset = manifest.load_dataset(data_dir)?;
    let transform = manifest.build_transform(data_dir)?;
    let schedule = cfg.schedule.build()?;
    let rho = cfg.rho.unwrap_or(dataset.rho);
    let train_cfg = TrainConfig {
        mode: cfg.mode.into(),
        rho,
        batch: cfg.batch,
        iters: cfg.iters,
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        sure_probes: cfg.sure_probes,
        sure_delta: None,
        ema_decay: cfg.ema_decay,
    };
    train_cfg.validate()?;
    if train_cfg.mode == LossMode::NoisyCaseSplit && dataset.rho == 0.0 && cfg.rho.is_none() {
        return Err(Error::CaseMismatch(
            "noisy training requested but the dataset is noiseless and no rho given".into(),
        ));
    }

    let mut rng = RngState::new(seed);
    let sigma_scale = cfg
        .sigma_feature_scale
        .unwrap_or_else(|| 1.0 / schedule.sigma_max());
    let (mut model, start_iter) = match &cfg.resume {
        Some(path) => {
            let ckpt_path = PathBuf::from(path);
            let (model, meta) = MlpDenoiser::load(&ckpt_path)?;
            if model.config().hidden != cfg.hidden {
                return Err(Error::Config(format!(
                    "resume checkpoint hidden widths {:?} differ from config {:?}",
                    model.config().hidden,
                    cfg.hidden
                )));
            }
            (model, meta.iterations)
        }
        None => {
            let mlp_cfg = MlpConfig { hidden: cfg.hidden.clone(), sigma_feature_scale: sigma_scale };
            (MlpDenoiser::new(transform, mlp_cfg, &mut rng.split(0x1217))?, 0)
        }
    };

    let pairs = dataset.training_pairs();
    let log = train(
        &mut model,
        &pairs,
        &schedule,
        &train_cfg,
        start_iter,
        &mut rng.split(0x7ea1),
    )?;

    write_text(&run_dir.join("loss.csv"), &log.to_csv())?;
    write_text(&run_dir.join("schedule.csv"), &schedule.to_csv())?;
    let ckpt_dir = run_dir.join("checkpoints");
    ensure_dir(&ckpt_dir)?;
    let resolved = serde_json::to_string(cfg)
        .map_err(|e| Error::Config(format!("config serialization: {e}")))?;
    let meta = CheckpointMeta {
        schedule_hash: schedule.content_hash(),
        train_digest: fnv64_hex(resolved.as_bytes()),
        iterations: start_iter + cfg.iters as u64,
    };
    model.save(&ckpt_dir.join("model.ckpt"), &meta)
}

// --- sample ------------------------------------------------------------------

fn preview_image(
    transform: &Transform,
    z: &[f64],
    preview_dims: Option<[usize; 2]>,
) -> Option<Tensor> {
    match transform {
        Transform::FourierCoils { height, width, .. } => {
            let img = transform.inverse(z).ok()?;
            Tensor::from_vec(&[*height, *width, 2], img).ok()
        }
        Transform::Identity { .. } => {
            let [h, w] = preview_dims?;
            Tensor::from_slice(&[h, w], z).ok()
        }
    }
}

pub fn cmd_sample(cfg: &SampleConfigFile, seed: u64, run_dir: &Path) -> Result<()> {
    let ckpt_path = PathBuf::from(&cfg.checkpoint);
    if !ckpt_path.exists() {
        return Err(Error::file(&ckpt_path, "checkpoint not found"));
    }
    let (model, _meta) = MlpDenoiser::load(&ckpt_path)?;
    let dist = cfg.mask.to_dist()?;
    let schedule = cfg.schedule.build()?;
    let mut sampler_cfg = SamplerConfig::new(cfg.w, schedule);
    sampler_cfg.init = match cfg.init {
        InitSpec::SigmaScaled => InitRule::SigmaScaled,
        InitSpec::Unit => InitRule::Unit,
    };
    sampler_cfg.snapshot_every = cfg.snapshot_every;
    sampler_cfg.validate()?;
    if cfg.chains == 0 {
        return Err(Error::Config("chains must be positive".into()));
    }

    let root = RngState::new(seed);
    let results: Vec<Result<(Vec<f64>, Option<SampleTrace>)>> = (0..cfg.chains)
        .into_par_iter()
        .map(|k| {
            let mut chain_rng = root.split(k as u64);
            run_chain(&model, &dist, &sampler_cfg, &NoHooks, &mut chain_rng, k == 0)
        })
        .collect();

    let samples_dir = run_dir.join("samples");
    ensure_dir(&samples_dir)?;
    for (k, res) in results.into_iter().enumerate() {
        let (z, trace) = res?;
        save_vec_tensor(
            &samples_dir.join(format!("sample_{k:04}.msmt")),
            &[z.len()],
            &z,
            false,
        )?;
        if k < 8 {
            if let Some(img) = preview_image(model.transform(), &z, cfg.preview_dims) {
                let _ = write_pgm(&samples_dir.join(format!("sample_{k:04}.pgm")), &img);
            }
        }
        if let Some(trace) = trace {
            write_text(&run_dir.join("trace.csv"), &trace.to_csv())?;
        }
    }
    Ok(())
}

// --- reconstruct ---------------------------------------------------------------

struct InstanceMetrics {
    index: usize,
    role: &'static str,
    psnr: f64,
    ssim: f64,
    residual: f64,
    peak: f64,
    truth_path: String,
    image_path: String,
}

fn metrics_csv(rows: &[InstanceMetrics]) -> String {
    let mut out =
        String::from("instance,role,psnr,ssim,residual,peak,truth_path,image_path\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{},{}\n",
            r.index, r.role, r.psnr, r.ssim, r.residual, r.peak, r.truth_path, r.image_path
        ));
    }
    out
}

/// Magnitude image [h, w] from an image-domain vector (real or interleaved
/// complex).
fn magnitude_image(img: &[f64], height: usize, width: usize) -> Result<Tensor> {
    if img.len() == height * width {
        Tensor::from_slice(&[height, width], img)
    } else if img.len() == height * width * 2 {
        let mags: Vec<f64> = img
            .chunks_exact(2)
            .map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt())
            .collect();
        Tensor::from_vec(&[height, width], mags)
    } else {
        Err(Error::Shape(format!(
            "image vector of {} entries does not fit {height}x{width}",
            img.len()
        )))
    }
}

pub fn cmd_reconstruct(cfg: &ReconstructConfigFile, seed: u64, run_dir: &Path) -> Result<()> {
    let ckpt_path = PathBuf::from(&cfg.checkpoint);
    if !ckpt_path.exists() {
        return Err(Error::file(&ckpt_path, "checkpoint not found"));
    }
    let manifest_path = PathBuf::from(&cfg.measurements);
    if !manifest_path.exists() {
        return Err(Error::file(&manifest_path, "measurement manifest not found"));
    }
    let (model, _meta) = MlpDenoiser::load(&ckpt_path)?;
    let manifest = DatasetManifest::load(&manifest_path)?;
    let data_dir = manifest_path.parent().unwrap_or(Path::new("."));
    let section = manifest
        .measurements
        .as_ref()
        .ok_or_else(|| Error::file(&manifest_path, "manifest has no measurement section"))?;
    let transform = manifest.build_transform(data_dir)?;
    let dist = cfg.mask.to_dist()?;
    let schedule = cfg.schedule.build()?;
    let sampler_cfg = SamplerConfig::new(cfg.w, schedule);
    let guidance = GuidanceConfig {
        gamma: cfg.gamma,
        mode: match cfg.mode {
            GuidanceModeSpec::General => GuidanceMode::General,
            GuidanceModeSpec::PerMaskMri => GuidanceMode::PerMaskMri,
        },
    };
    guidance.validate()?;
    let limit = cfg.limit.unwrap_or(section.instances.len()).min(section.instances.len());
    let (height, width) = (manifest.height, manifest.width);

    let root = RngState::new(seed);
    let jobs: Vec<(usize, &MeasurementInstance)> =
        section.instances.iter().take(limit).enumerate().collect();
    let results: Vec<Result<(usize, Vec<InstanceMetrics>, Option<SampleTrace>)>> = jobs
        .par_iter()
        .map(|&(k, mi)| -> Result<(usize, Vec<InstanceMetrics>, Option<SampleTrace>)> {
            let mut inst_rng = root.split(k as u64);
            let y = read_tensor(&data_dir.join(&mi.y))?.into_data();
            let x_truth = read_tensor(&data_dir.join(&mi.x))?.into_data();
            let h_op = manifest.build_forward_op(mi)?;
            let (z0, trace) = match guidance.mode {
                GuidanceMode::General => reconstruct_general(
                    &model,
                    &dist,
                    &y,
                    &h_op,
                    &sampler_cfg,
                    &guidance,
                    &mut inst_rng,
                )?,
                GuidanceMode::PerMaskMri => reconstruct_per_mask_mri(
                    &model,
                    &dist,
                    &y,
                    &h_op,
                    &sampler_cfg,
                    &guidance,
                    &mut inst_rng,
                )?,
            };
            // baseline: the zero-filled adjoint input, mapped through the
            // image-domain projection when the transform is non-trivial
            let x_input = transform.inverse(&h_op.adjoint(&y)?)?;
            let z_input = transform.forward(&x_input)?;
            let x_recon = transform.inverse(&z0)?;

            let truth_img = magnitude_image(&x_truth, height, width)?;
            let input_img = magnitude_image(&x_input, height, width)?;
            let recon_img = magnitude_image(&x_recon, height, width)?;
            let peak = truth_img
                .data()
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
                .max(1e-12);

            let truth_path = format!("images/inst_{k:04}_truth.msmt");
            let input_path = format!("images/inst_{k:04}_input.msmt");
            let recon_path = format!("images/inst_{k:04}_recon.msmt");
            write_tensor(&run_dir.join(&truth_path), &truth_img)?;
            write_tensor(&run_dir.join(&input_path), &input_img)?;
            write_tensor(&run_dir.join(&recon_path), &recon_img)?;
            save_vec_tensor(
                &run_dir.join(format!("images/inst_{k:04}_z0.msmt")),
                &[z0.len()],
                &z0,
                false,
            )?;
            if k == 0 {
                let _ = write_pgm(&run_dir.join("preview_truth.pgm"), &truth_img);
                let _ = write_pgm(&run_dir.join("preview_input.pgm"), &input_img);
                let _ = write_pgm(&run_dir.join("preview_recon.pgm"), &recon_img);
            }

            let resid_in = norm2(&sub(&h_op.apply(&z_input)?, &y));
            let resid_out = norm2(&sub(&h_op.apply(&z0)?, &y));
            let rows = vec![
                InstanceMetrics {
                    index: k,
                    role: "input",
                    psnr: psnr(input_img.data(), truth_img.data(), peak)?,
                    ssim: ssim(&input_img, &truth_img, peak)?,
                    residual: resid_in,
                    peak,
                    truth_path: truth_path.clone(),
                    image_path: input_path,
                },
                InstanceMetrics {
                    index: k,
                    role: "output",
                    psnr: psnr(recon_img.data(), truth_img.data(), peak)?,
                    ssim: ssim(&recon_img, &truth_img, peak)?,
                    residual: resid_out,
                    peak,
                    truth_path,
                    image_path: recon_path,
                },
            ];
            Ok((k, rows, if k == 0 { Some(trace) } else { None }))
        })
        .collect();

    ensure_dir(&run_dir.join("images"))?;
    let mut all_rows = Vec::new();
    for res in results {
        let (_, rows, trace) = res?;
        if let Some(trace) = trace {
            write_text(&run_dir.join("trace.csv"), &trace.to_csv())?;
        }
        all_rows.extend(rows);
    }
    write_text(&run_dir.join("metrics.csv"), &metrics_csv(&all_rows))
}

// --- kl-study ------------------------------------------------------------------

pub fn cmd_kl_study(cfg: &KlStudyConfigFile, seed: u64, run_dir: &Path) -> Result<()> {
    if cfg.cov_diag.is_empty() {
        return Err(Error::Config("cov_diag must be non-empty".into()));
    }
    let diag: Vec<f64> = if cfg.cov_diag.len() == 1 {
        vec![cfg.cov_diag[0]; cfg.n]
    } else if cfg.cov_diag.len() == cfg.n {
        cfg.cov_diag.clone()
    } else {
        return Err(Error::Config(format!(
            "cov_diag needs 1 or {} entries, got {}",
            cfg.n,
            cfg.cov_diag.len()
        )));
    };
    let oracle = GaussianOracle::diagonal(&diag)?.with_mean(vec![cfg.mean; cfg.n])?;
    let dist = cfg.mask.to_dist()?;
    if dist.ambient_dim() != cfg.n {
        return Err(Error::Config(format!(
            "mask ambient dim {} does not match n={}",
            dist.ambient_dim(),
            cfg.n
        )));
    }
    let study_cfg = KlStudyConfig {
        w_list: cfg.w_list.clone(),
        chains: cfg.chains,
        schedule: cfg.schedule.build()?,
        estimator: match cfg.estimator {
            KlEstimatorSpec::GaussianFit => KlEstimator::GaussianFit,
            KlEstimatorSpec::Knn => KlEstimator::Knn,
        },
        temps: None,
        exact_mc: 20_000,
        variance: VarianceProbeConfig {
            w_list: cfg.w_list.clone(),
            t_list: vec![],
            z_probes: cfg.variance_z_probes,
            mc_draws: cfg.variance_mc_draws,
            exact_mc: 20_000,
        },
    };
    let src = {
        let o = oracle.clone();
        move |r: &mut RngState| o.sample(r)
    };
    let report = kl_study(&oracle, &dist, &src, &study_cfg, &mut RngState::new(seed))?;
    write_text(&run_dir.join("study.csv"), &report.to_csv())?;
    write_text(&run_dir.join("variance.csv"), &report.variance.to_csv())?;
    write_text(&run_dir.join("summary.txt"), &report.summary())
}

// --- eval ----------------------------------------------------------------------

pub fn cmd_eval(cfg: &EvalConfigFile, _seed: u64, run_dir: &Path) -> Result<()> {
    let src_dir = PathBuf::from(&cfg.run_dir);
    let metrics_path = src_dir.join("metrics.csv");
    if !metrics_path.exists() {
        return Err(Error::file(&metrics_path, "metrics.csv not found"));
    }
    let text = std::fs::read_to_string(&metrics_path)
        .map_err(|e| Error::file(&metrics_path, e.to_string()))?;
    let mut out = String::from(
        "instance,role,psnr_logged,psnr_recomputed,ssim_logged,ssim_recomputed\n",
    );
    let mut max_diff: f64 = 0.0;
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::file(
                &metrics_path,
                format!("line {} has {} fields, want 8", lineno + 1, fields.len()),
            ));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::file(&metrics_path, format!("bad number {s:?}")))
        };
        let (psnr_logged, ssim_logged, peak) =
            (parse(fields[2])?, parse(fields[3])?, parse(fields[5])?);
        let truth = read_tensor(&src_dir.join(fields[6]))?;
        let image = read_tensor(&src_dir.join(fields[7]))?;
        let psnr_re = psnr(image.data(), truth.data(), peak)?;
        let ssim_re = ssim(&image, &truth, peak)?;
        let d1 = if psnr_logged.is_infinite() && psnr_re.is_infinite() {
            0.0
        } else {
            (psnr_logged - psnr_re).abs()
        };
        max_diff = max_diff.max(d1).max((ssim_logged - ssim_re).abs());
        out.push_str(&format!(
            "{},{},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            fields[0], fields[1], psnr_logged, psnr_re, ssim_logged, ssim_re
        ));
    }
    write_text(&run_dir.join("eval_metrics.csv"), &out)?;
    if max_diff > 1e-9 {
        return Err(Error::Numerical(format!(
            "recomputed metrics deviate from logged values by {max_diff}"
        )));
    }
    Ok(())
}
