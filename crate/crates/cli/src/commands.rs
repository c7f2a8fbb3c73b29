//! Command implementations. Each handler takes fully resolved arguments
//! (what `replay` reconstructs from a manifest), runs the pipeline, and
//! writes its outputs plus a `manifest.json` into the output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use serde::{Deserialize, Serialize};

use waveguard::checkpoint::{load_generator, load_surrogate, save_surrogate};
use waveguard::config::{load_partial_config, TrainConfig};
use waveguard::imagecore::{derive_mask, load_image, make_target, save_image};
use waveguard::metrics::fidelity_report;
use waveguard::parallel::par_map;
use waveguard::robustness::{
    latent_shift, robustness_suite, DEFAULT_EVAL_BLUR_SIGMA,
};
use waveguard::spectrum::{normalize_map, spectrum};
use waveguard::surrogate::SurrogateEncoder;
use waveguard::tensor::Tensor;
use waveguard::trainer::{load_training_images, pretrain_surrogate, resolve_target, train};
use waveguard::{Error, Result};

use crate::corpus::{list_images, pair_by_stem};
use crate::manifest::RunManifest;

// ---------------------------------------------------------------------------
// shared plumbing

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Clap-side range check so an out-of-range ε is a usage error (exit 2).
pub fn parse_epsilon(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("epsilon must lie in (0, 1], got {v}"))
    }
}

/// Resolves a `--target` value ("builtin" or an image path) at `h x w`.
fn eval_target(spec: &str, h: usize, w: usize) -> Result<Tensor> {
    if spec == "builtin" {
        make_target(h, w, 32).map_err(|e| Error::Input(format!("builtin target: {e}")))
    } else {
        if h != w {
            return Err(Error::Input(format!(
                "file targets need a square working size, got {h}x{w}"
            )));
        }
        load_image(spec, Some(h))
    }
}

fn surrogate_from(flag: &Option<PathBuf>, manifest: &mut RunManifest) -> Result<SurrogateEncoder> {
    match flag {
        None => Ok(SurrogateEncoder::default_frozen()),
        Some(path) => {
            manifest.record_checkpoint(path)?;
            load_surrogate(path)
        }
    }
}

/// Loads an aligned eval corpus; every image must share one shape.
fn load_pairs(
    clean_dir: &Path,
    protected_dir: &Path,
    same_shape: bool,
) -> Result<Vec<(String, Tensor, Tensor)>> {
    let pairs = pair_by_stem(clean_dir, protected_dir)?;
    let mut out = Vec::with_capacity(pairs.len());
    let mut shape: Option<(usize, usize, usize)> = None;
    for (stem, cpath, ppath) in pairs {
        let c = load_image(&cpath, None)?;
        let p = load_image(&ppath, None)?;
        let (cc, ch, cw) = c.shape();
        p.expect_shape(cc, ch, cw, &format!("pair \"{stem}\""))
            .map_err(|e| Error::Input(format!("{e}")))?;
        if same_shape {
            match shape {
                None => shape = Some(c.shape()),
                Some((sc, sh, sw)) => {
                    c.expect_shape(sc, sh, sw, &format!("pair \"{stem}\""))
                        .map_err(|e| Error::Input(format!("{e}")))?;
                }
            }
        }
        out.push((stem, c, p));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Args, Clone)]
pub struct TrainArgs {
    /// Directory of training images (png/jpeg).
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for checkpoints, report, and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config file; flags override file values, file overrides defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Square working resolution; inputs are resized and center-cropped.
    #[arg(long = "size")]
    pub size: Option<usize>,
    /// Channel width multiplier (1.0 = full width).
    #[arg(long = "width")]
    pub width: Option<f64>,
    /// Perturbation budget, max |delta| per pixel.
    #[arg(long, value_parser = parse_epsilon)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub lambda_adv: Option<f64>,
    #[arg(long)]
    pub lambda_pert: Option<f64>,
    /// Mask weight w in the hinge penalty weighting 1 + w * mask.
    #[arg(long)]
    pub mask_weight: Option<f64>,
    /// Hinge threshold c; masked perturbation norm below c is free.
    #[arg(long)]
    pub hinge_c: Option<f64>,
    /// "builtin" for the checkerboard target, or an image path.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Disable transform sampling (JPEG/blur) during training.
    #[arg(long, default_value_t = false)]
    pub no_eot: bool,
    /// Average the latent loss over elements instead of summing.
    #[arg(long, default_value_t = false)]
    pub latent_mean: bool,
    /// Surrogate encoder checkpoint; defaults to the frozen built-in.
    #[arg(long)]
    pub surrogate: Option<PathBuf>,
}

/// Flags > config file > defaults, flattened into one config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedTrain {
    pub data: PathBuf,
    pub out: PathBuf,
    pub surrogate: Option<PathBuf>,
    pub config: TrainConfig,
}

pub fn resolve_train(args: &TrainArgs) -> Result<ResolvedTrain> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        load_partial_config(path)?.apply_to(&mut cfg);
    }
    macro_rules! take {
        ($($flag:ident => $field:ident),* $(,)?) => {
            $(if let Some(v) = args.$flag.clone() { cfg.$field = v; })*
        };
    }
    take!(
        epochs => epochs,
        batch_size => batch_size,
        learning_rate => learning_rate,
        seed => seed,
        size => image_size,
        width => width_multiplier,
        epsilon => epsilon,
        mask_weight => mask_weight_w,
        hinge_c => hinge_c,
        target => target,
        checkpoint_every => checkpoint_every,
    );
    if let Some(v) = args.lambda_adv {
        cfg.weights.lambda_adv = v;
    }
    if let Some(v) = args.lambda_pert {
        cfg.weights.lambda_pert = v;
    }
    if args.no_eot {
        cfg.eot.apply_prob = 0.0;
    }
    if args.latent_mean {
        cfg.latent_mean_reduction = true;
    }
    cfg.validate()?;
    Ok(ResolvedTrain {
        data: args.data.clone(),
        out: args.out.clone(),
        surrogate: args.surrogate.clone(),
        config: cfg,
    })
}

pub fn run_train(r: &ResolvedTrain, threads: usize) -> Result<()> {
    let t_total = Instant::now();
    ensure_dir(&r.out)?;
    let mut manifest = RunManifest::new("train", threads, r)?;
    manifest.seeds.insert("train".to_string(), r.config.seed);

    let files = list_images(&r.data)?;
    manifest.record_inputs(&files);
    let images = load_training_images(&files, r.config.image_size)?;
    let enc = surrogate_from(&r.surrogate, &mut manifest)?;
    let target = resolve_target(&r.config)?;

    let t_train = Instant::now();
    let outcome = train(&r.config, &images, &target, &enc, Some(&r.out), threads)?;
    manifest.timing("train", t_train.elapsed().as_secs_f64());

    let report_path = r.out.join("train_report.csv");
    write_text(&report_path, &outcome.report.to_csv())?;
    manifest.record_output(&report_path);
    for ckpt in &outcome.checkpoints {
        manifest.record_output(ckpt);
        manifest.record_checkpoint(ckpt)?;
    }
    let last = outcome
        .report
        .epochs
        .last()
        .ok_or_else(|| Error::State("training produced no epochs".into()))?;
    manifest.stat("epochs", outcome.report.epochs.len());
    manifest.stat("final_l_adv", last.l_adv);
    manifest.stat("final_l_pert", last.l_pert);
    manifest.stat("final_total", last.total);
    manifest.timing("total", t_total.elapsed().as_secs_f64());
    manifest.write(&r.out)?;
    println!(
        "trained {} epochs on {} images in {:.1}s; final l_adv {:.6} l_pert {:.6}; wrote {}",
        outcome.report.epochs.len(),
        images.len(),
        t_total.elapsed().as_secs_f64(),
        last.l_adv,
        last.l_pert,
        r.out.join("final.wgck").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// protect

#[derive(Debug, Args, Clone, Serialize, Deserialize)]
pub struct ProtectArgs {
    /// Generator checkpoint (.wgck).
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Directory of images to protect.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for protected PNGs.
    #[arg(long)]
    pub out: PathBuf,
    /// "builtin" or an image path; must match what the model was trained
    /// against.
    #[arg(long, default_value = "builtin")]
    pub target: String,
    /// Square working resolution; defaults to the checkpoint's trained size.
    #[arg(long = "size")]
    pub size: Option<usize>,
    /// Images per forward-pass group: the target's first-stage contribution
    /// is computed once per group, so larger groups amortize it.
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Also write per-image perturbation maps under out/deltas/, scaled to
    /// [0,1] as delta/(2*epsilon) + 0.5 (8-bit visualization, not exact
    /// values). Kept out of the top-level dir so stem pairing stays clean.
    #[arg(long, default_value_t = false)]
    pub dump_delta: bool,
}

pub fn run_protect(args: &ProtectArgs, threads: usize) -> Result<()> {
    if args.batch == 0 {
        return Err(Error::Config("--batch must be at least 1".into()));
    }
    let t_total = Instant::now();
    ensure_dir(&args.out)?;
    let mut manifest = RunManifest::new("protect", threads, args)?;
    manifest.record_checkpoint(&args.ckpt)?;
    let gen = load_generator(&args.ckpt)?;
    gen.reset_forward_passes();

    let size = match args.size {
        Some(s) => s,
        None => {
            let (h, w) = gen.input_size;
            if h == 0 || h != w {
                return Err(Error::Config(
                    "checkpoint does not record a square trained size; pass --size".into(),
                ));
            }
            h
        }
    };
    if size == 0 || size % 16 != 0 {
        return Err(Error::Config(format!(
            "--size must be a positive multiple of 16, got {size}"
        )));
    }
    let target = eval_target(&args.target, size, size)?;

    let files = list_images(&args.input)?;
    manifest.record_inputs(&files);
    let mut loaded = Vec::with_capacity(files.len());
    for path in &files {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Input(format!("unusable file name: {}", path.display())))?
            .to_string();
        loaded.push((stem, load_image(path, Some(size))?));
    }

    let mut infer_seconds = 0.0;
    let mut results: Vec<(String, Tensor, Tensor)> = Vec::with_capacity(loaded.len());
    for group in loaded.chunks(args.batch) {
        let t = Instant::now();
        let pre = gen.precompute_target(&target);
        let batch: Vec<Result<(Tensor, Tensor)>> =
            par_map(threads, group, |_, (_, x)| gen.infer_with(x, &target, Some(&pre)));
        infer_seconds += t.elapsed().as_secs_f64();
        for ((stem, x), r) in group.iter().zip(batch) {
            let (x_adv, delta) = r?;
            let linf = x_adv
                .sub(x)
                .data
                .iter()
                .fold(0.0f64, |m, &v| m.max(v.abs()));
            if linf > gen.epsilon + 1e-12 {
                return Err(Error::State(format!(
                    "budget violated on \"{stem}\": {linf} > {}",
                    gen.epsilon
                )));
            }
            results.push((stem.clone(), x_adv, delta));
        }
    }

    if args.dump_delta {
        ensure_dir(&args.out.join("deltas"))?;
    }
    for (stem, x_adv, delta) in &results {
        let out_path = args.out.join(format!("{stem}.png"));
        save_image(x_adv, &out_path)?;
        manifest.record_output(&out_path);
        if args.dump_delta {
            let vis = delta.scaled(1.0 / (2.0 * gen.epsilon)).map(|v| v + 0.5).clamp01();
            let delta_path = args.out.join("deltas").join(format!("{stem}.png"));
            save_image(&vis, &delta_path)?;
            manifest.record_output(&delta_path);
        }
    }

    let passes = gen.forward_passes();
    let n = results.len();
    let total = t_total.elapsed().as_secs_f64();
    let rate = n as f64 / infer_seconds.max(1e-9);
    manifest.stat("images", n);
    manifest.stat("forward_passes", passes);
    manifest.stat("images_per_second", rate);
    manifest.stat("seconds_per_image", infer_seconds / n.max(1) as f64);
    manifest.timing("infer", infer_seconds);
    manifest.timing("total", total);
    manifest.write(&args.out)?;
    println!(
        "protected {n} images in {total:.3}s ({rate:.2} images/s, {passes} forward passes)"
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

#[derive(Debug, Args, Clone, Serialize, Deserialize)]
pub struct EvalFidelityArgs {
    /// Directory of originals.
    #[arg(long)]
    pub clean: PathBuf,
    /// Directory of protected outputs (paired with --clean by file stem).
    #[arg(long)]
    pub protected: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_eval_fidelity(args: &EvalFidelityArgs, threads: usize) -> Result<()> {
    let t_total = Instant::now();
    ensure_dir(&args.out)?;
    let mut manifest = RunManifest::new("eval-fidelity", threads, args)?;
    let pairs = load_pairs(&args.clean, &args.protected, false)?;
    let view: Vec<(String, &Tensor, &Tensor)> = pairs
        .iter()
        .map(|(s, c, p)| (s.clone(), c, p))
        .collect();
    let report = fidelity_report(&view)?;
    let path = args.out.join("fidelity.csv");
    write_text(&path, &report.to_csv())?;
    manifest.record_output(&path);
    manifest.stat("pairs", pairs.len());
    manifest.stat("mean_psnr", report.mean_psnr);
    manifest.stat("mean_ssim", report.mean_ssim);
    manifest.timing("total", t_total.elapsed().as_secs_f64());
    manifest.write(&args.out)?;
    println!(
        "fidelity over {} pairs: mean psnr {} mean ssim {:.6} (wrote {})",
        pairs.len(),
        if report.mean_psnr.is_infinite() {
            "inf".to_string()
        } else {
            format!("{:.3}", report.mean_psnr)
        },
        report.mean_ssim,
        path.display()
    );
    Ok(())
}

#[derive(Debug, Args, Clone, Serialize, Deserialize)]
pub struct EvalRobustnessArgs {
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long)]
    pub protected: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// "builtin" or an image path (the trained-against target).
    #[arg(long, default_value = "builtin")]
    pub target: String,
    /// Surrogate encoder checkpoint; defaults to the frozen built-in.
    #[arg(long)]
    pub surrogate: Option<PathBuf>,
    /// Sigma for the kernel-5 blur row.
    #[arg(long, default_value_t = DEFAULT_EVAL_BLUR_SIGMA)]
    pub blur_sigma: f64,
}

pub fn run_eval_robustness(args: &EvalRobustnessArgs, threads: usize) -> Result<()> {
    let t_total = Instant::now();
    ensure_dir(&args.out)?;
    let mut manifest = RunManifest::new("eval-robustness", threads, args)?;
    let enc = surrogate_from(&args.surrogate, &mut manifest)?;
    let pairs = load_pairs(&args.clean, &args.protected, true)?;
    let (_, h, w) = pairs[0].1.shape();
    let target = eval_target(&args.target, h, w)?;
    let clean: Vec<Tensor> = pairs.iter().map(|(_, c, _)| c.clone()).collect();
    let protected: Vec<Tensor> = pairs.iter().map(|(_, _, p)| p.clone()).collect();
    let report = robustness_suite(&protected, &clean, &enc, &target, args.blur_sigma)?;
    let path = args.out.join("robustness.csv");
    write_text(&path, &report.to_csv())?;
    manifest.record_output(&path);
    manifest.stat("pairs", pairs.len());
    manifest.timing("total", t_total.elapsed().as_secs_f64());
    manifest.write(&args.out)?;
    for row in &report.rows {
        println!(
            "robustness {}: ratio {:.6} (delta vs none {:+.6})",
            row.preproc, row.ratio, row.delta_vs_none
        );
    }
    Ok(())
}

#[derive(Debug, Args, Clone, Serialize, Deserialize)]
pub struct EvalLatentShiftArgs {
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long)]
    pub protected: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "builtin")]
    pub target: String,
    #[arg(long)]
    pub surrogate: Option<PathBuf>,
}

pub fn run_eval_latent_shift(args: &EvalLatentShiftArgs, threads: usize) -> Result<()> {
    let t_total = Instant::now();
    ensure_dir(&args.out)?;
    let mut manifest = RunManifest::new("eval-latent-shift", threads, args)?;
    let enc = surrogate_from(&args.surrogate, &mut manifest)?;
    let pairs = load_pairs(&args.clean, &args.protected, true)?;
    let (_, h, w) = pairs[0].1.shape();
    let target = eval_target(&args.target, h, w)?;
    let mut csv = String::from("name,ratio\n");
    let mut sum = 0.0;
    for (stem, c, p) in &pairs {
        let ratio = latent_shift(&enc, c, p, &target)?;
        csv.push_str(&format!("{stem},{ratio}\n"));
        sum += ratio;
    }
    let mean = sum / pairs.len() as f64;
    csv.push_str(&format!("mean,{mean}\n"));
    let path = args.out.join("latent_shift.csv");
    write_text(&path, &csv)?;
    manifest.record_output(&path);
    manifest.stat("pairs", pairs.len());
    manifest.stat("mean_ratio", mean);
    manifest.timing("total", t_total.elapsed().as_secs_f64());
    manifest.write(&args.out)?;
    println!(
        "latent shift over {} pairs: mean ratio {mean:.6} (wrote {})",
        pairs.len(),
        path.display()
    );
    Ok(())
}

#[derive(Debug, Args, Clone, Serialize, Deserialize)]
pub struct EvalSpectrumArgs {
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long)]
    pub protected: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_eval_spectrum(args: &EvalSpectrumArgs, threads: usize) -> Result<()> {
    let t_total = Instant::now();
    ensure_dir(&args.out)?;
    let mut manifest = RunManifest::new("eval-spectrum", threads, args)?;
    let pairs = load_pairs(&args.clean, &args.protected, false)?;
    let mut csv = String::from("name,fft_min,fft_max,lh_energy,hl_energy,hh_energy\n");
    for (stem, c, p) in &pairs {
        let delta = p.sub(c);
        let report = spectrum(&delta)?;
        let maps = [
            ("fft", &report.fft_log_mag),
            ("ll", &report.ll_map),
            ("lh", &report.hf_lh),
            ("hl", &report.hf_hl),
            ("hh", &report.hf_hh),
        ];
        let mut fft_bounds = None;
        for (kind, map) in maps {
            let (img, bounds) = normalize_map(map);
            if kind == "fft" {
                fft_bounds = Some(bounds);
            }
            let path = args.out.join(format!("{stem}.{kind}.png"));
            save_image(&img, &path)?;
            manifest.record_output(&path);
        }
        let b = fft_bounds.expect("fft map is always rendered");
        let energy = |m: &Tensor| m.data.iter().sum::<f64>();
        csv.push_str(&format!(
            "{stem},{},{},{},{},{}\n",
            b.min,
            b.max,
            energy(&report.hf_lh),
            energy(&report.hf_hl),
            energy(&report.hf_hh)
        ));
    }
    let path = args.out.join("spectrum.csv");
    write_text(&path, &csv)?;
    manifest.record_output(&path);
    manifest.stat("pairs", pairs.len());
    manifest.timing("total", t_total.elapsed().as_secs_f64());
    manifest.write(&args.out)?;
    println!(
        "spectrum maps for {} pairs written under {}",
        pairs.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// make-target

#[derive(Debug, Args, Clone, Serialize, Deserialize)]
pub struct MakeTargetArgs {
    /// Square size; must be a positive multiple of 16.
    #[arg(long)]
    pub size: usize,
    /// Checker cell size in pixels.
    #[arg(long, default_value_t = 32)]
    pub cell: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

pub fn run_make_target(args: &MakeTargetArgs, threads: usize) -> Result<()> {
    if args.size == 0 || args.size % 16 != 0 {
        return Err(Error::Config(format!(
            "--size must be a positive multiple of 16, got {}",
            args.size
        )));
    }
    if args.cell == 0 {
        return Err(Error::Config("--cell must be positive".into()));
    }
    let t_total = Instant::now();
    ensure_dir(&args.out)?;
    let mut manifest = RunManifest::new("make-target", threads, args)?;
    let target = make_target(args.size, args.size, args.cell)?;
    let mask = derive_mask(&target)?;
    let target_path = args.out.join("target.png");
    let mask_path = args.out.join("mask.png");
    save_image(&target, &target_path)?;
    save_image(&mask, &mask_path)?;
    manifest.record_output(&target_path);
    manifest.record_output(&mask_path);
    manifest.timing("total", t_total.elapsed().as_secs_f64());
    manifest.write(&args.out)?;
    println!(
        "wrote {} and {} ({}x{} checker, cell {})",
        target_path.display(),
        mask_path.display(),
        args.size,
        args.size,
        args.cell
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// pretrain-surrogate

#[derive(Debug, Args, Clone)]
pub struct PretrainArgs {
    /// Directory of images for reconstruction pretraining.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config file; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "size")]
    pub size: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedPretrain {
    pub data: PathBuf,
    pub out: PathBuf,
    pub config: TrainConfig,
}

pub fn resolve_pretrain(args: &PretrainArgs) -> Result<ResolvedPretrain> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        load_partial_config(path)?.apply_to(&mut cfg);
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.size {
        cfg.image_size = v;
    }
    cfg.validate()?;
    Ok(ResolvedPretrain {
        data: args.data.clone(),
        out: args.out.clone(),
        config: cfg,
    })
}

pub fn run_pretrain(r: &ResolvedPretrain, threads: usize) -> Result<()> {
    let t_total = Instant::now();
    ensure_dir(&r.out)?;
    let mut manifest = RunManifest::new("pretrain-surrogate", threads, r)?;
    manifest.seeds.insert("pretrain".to_string(), r.config.seed);
    let files = list_images(&r.data)?;
    manifest.record_inputs(&files);
    let images = load_training_images(&files, r.config.image_size)?;
    let (enc, losses) = pretrain_surrogate(&r.config, &images)?;

    let ckpt_path = r.out.join("surrogate.wgck");
    save_surrogate(&enc, &ckpt_path)?;
    manifest.record_output(&ckpt_path);
    manifest.record_checkpoint(&ckpt_path)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, loss) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{loss}\n", i + 1));
    }
    let report_path = r.out.join("pretrain_report.csv");
    write_text(&report_path, &csv)?;
    manifest.record_output(&report_path);
    let (first, last) = (losses[0], *losses.last().expect("validated nonzero epochs"));
    manifest.stat("first_loss", first);
    manifest.stat("final_loss", last);
    manifest.timing("total", t_total.elapsed().as_secs_f64());
    manifest.write(&r.out)?;
    println!(
        "pretrained surrogate over {} epochs: loss {first:.6} -> {last:.6}; wrote {}",
        losses.len(),
        ckpt_path.display()
    );
    Ok(())
}
