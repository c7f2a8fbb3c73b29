//! Generator optimization loop: Adam over the generator's parameters only,
//! one transform draw per image per step, deterministic shuffling and
//! sampling from a single seeded stream, per-epoch telemetry, and
//! checkpointing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::checkpoint::save_generator;
use crate::config::TrainConfig;
use crate::eot::{sample_transform, TransformSpec};
use crate::generator::{Generator, GeneratorGrads};
use crate::imagecore::{load_image, make_default_target};
use crate::losses::{
    latent_adv_loss, pert_hinge_loss, total_objective, LatentReduction, ProtectionTarget,
};
use crate::nn::{upsample_nearest, upsample_nearest_backward, leaky, leaky_backward, Conv2d};
use crate::optimizer::Adam;
use crate::parallel::par_map;
use crate::surrogate::SurrogateEncoder;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_adv: f64,
    pub l_pert: f64,
    pub total: f64,
    pub seconds: f64,
    pub update_norm: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    /// CSV view (epoch, l_adv, l_pert, total, seconds). `update_norm`
    /// stays in the JSON manifest only.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,l_adv,l_pert,total,seconds\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.l_adv, e.l_pert, e.total, e.seconds
            ));
        }
        out
    }
}

pub struct TrainOutcome {
    pub generator: Generator,
    pub report: TrainReport,
    pub checkpoints: Vec<PathBuf>,
}

/// Load a training corpus, skipping unreadable files with a warning on
/// stderr. An empty result is an error.
pub fn load_training_images(paths: &[PathBuf], image_size: usize) -> Result<Vec<Tensor>> {
    let mut images = Vec::with_capacity(paths.len());
    for path in paths {
        match load_image(path, Some(image_size)) {
            Ok(img) => images.push(img),
            Err(err) => eprintln!("warning: skipping {}: {err}", path.display()),
        }
    }
    if images.is_empty() {
        return Err(Error::Input(
            "no loadable training images in the dataset".to_string(),
        ));
    }
    Ok(images)
}

/// Build the protection target named by the config: the builtin
/// checkerboard or an image file, resized to the training resolution.
pub fn resolve_target(cfg: &TrainConfig) -> Result<ProtectionTarget> {
    let image = if cfg.target == "builtin" {
        make_default_target(cfg.image_size, cfg.image_size)?
    } else {
        load_image(Path::new(&cfg.target), Some(cfg.image_size))?
    };
    ProtectionTarget::new(image, cfg.mask_weight_w, cfg.hinge_c)
}

fn reduction(cfg: &TrainConfig) -> LatentReduction {
    if cfg.latent_mean_reduction {
        LatentReduction::Mean
    } else {
        LatentReduction::Sum
    }
}

/// Loss + gradient for one image under one transform draw. Pure; safe to
/// fan out across threads.
fn image_step(
    gen: &Generator,
    enc: &SurrogateEncoder,
    cfg: &TrainConfig,
    image: &Tensor,
    target: &ProtectionTarget,
    spec: &TransformSpec,
) -> Result<(f64, f64, f64, GeneratorGrads)> {
    let (x_adv, delta, tape) = gen.forward(image, &target.image)?;
    let (l_adv, g_x_adv) = latent_adv_loss(enc, &x_adv, &target.image, spec, reduction(cfg))?;
    let (l_pert, g_delta_pert) = pert_hinge_loss(&delta, target)?;
    let zero = Tensor::zeros(delta.c, delta.h, delta.w);
    let g_delta_adv = tape.compose_delta_grad(&g_x_adv, &zero);
    let (total, g_delta) =
        total_objective(&cfg.weights, (l_adv, &g_delta_adv), (l_pert, &g_delta_pert))?;
    let grads = gen.backward(&tape, &g_delta)?;
    Ok((l_adv, l_pert, total, grads))
}

fn adam_buffer_sizes(gen: &Generator) -> Vec<usize> {
    gen.layers
        .iter()
        .flat_map(|l| [l.weight.data.len(), l.bias.data.len()])
        .collect()
}

fn write_checkpoint(dir: &Path, name: &str, gen: &Generator) -> Result<PathBuf> {
    let path = dir.join(name);
    save_generator(gen, &path)?;
    Ok(path)
}

/// Train a fresh generator on `images` against `target`. The surrogate is
/// read-only; a changed fingerprint afterwards is a hard error. With
/// `threads > 1`, per-image gradients fan out across threads but are
/// reduced in index order, so results match the single-threaded run
/// bit for bit.
pub fn train(
    cfg: &TrainConfig,
    images: &[Tensor],
    target: &ProtectionTarget,
    enc: &SurrogateEncoder,
    out_dir: Option<&Path>,
    threads: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::Input("training dataset is empty".to_string()));
    }
    let s = cfg.image_size;
    for (i, img) in images.iter().enumerate() {
        img.expect_shape(3, s, s, &format!("training image {i}"))?;
    }
    target.image.expect_shape(3, s, s, "training target")?;

    let mut gen = Generator::new(cfg.width_multiplier, cfg.epsilon, (s, s), cfg.seed)?;
    let mut adam = Adam::new(cfg.adam(), &adam_buffer_sizes(&gen))?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let enc_fingerprint = enc.fingerprint();

    let mut report = TrainReport::default();
    let mut checkpoints = Vec::new();
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut global_step = 0usize;

    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let (mut sum_adv, mut sum_pert, mut sum_total) = (0.0, 0.0, 0.0);
        let mut update_norm_sq = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            global_step += 1;
            let jobs: Vec<(usize, TransformSpec)> = batch
                .iter()
                .map(|&idx| (idx, sample_transform(&cfg.eot, &mut rng)))
                .collect();
            let results = par_map(threads, &jobs, |_, (idx, spec)| {
                image_step(&gen, enc, cfg, &images[*idx], target, spec)
            });
            let mut batch_grads = GeneratorGrads::zeros(&gen);
            for r in results {
                let (la, lp, tot, g) = r?;
                if !tot.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss diverged at epoch {epoch}, step {global_step}"
                    )));
                }
                sum_adv += la;
                sum_pert += lp;
                sum_total += tot;
                batch_grads.add_assign(&g);
            }
            batch_grads.scale(1.0 / batch.len() as f64);

            let mut param_bufs: Vec<&mut [f64]> = Vec::with_capacity(2 * gen.layers.len());
            for layer in gen.layers.iter_mut() {
                param_bufs.push(&mut layer.weight.data);
                param_bufs.push(&mut layer.bias.data);
            }
            let grad_bufs: Vec<&[f64]> = batch_grads
                .per_layer
                .iter()
                .flat_map(|(w, b)| [w.data.as_slice(), b.data.as_slice()])
                .collect();
            update_norm_sq += adam
                .step(&mut param_bufs, &grad_bufs)
                .map_err(|e| match e {
                    Error::NonFinite(msg) => Error::NonFinite(format!(
                        "{msg} at epoch {epoch}, step {global_step}"
                    )),
                    other => other,
                })?;
            gen.mark_updated();
        }

        // The budget is architectural; re-check it on a probe batch so a
        // regression in the output stage cannot go unnoticed mid-run.
        for img in images.iter().take(2) {
            let (_, delta) = gen.infer(img, &target.image)?;
            if delta.linf() > cfg.epsilon + 1e-12 {
                return Err(Error::State(format!(
                    "budget violated on probe at epoch {epoch}: {} > {}",
                    delta.linf(),
                    cfg.epsilon
                )));
            }
        }

        let n = images.len() as f64;
        report.epochs.push(EpochStats {
            epoch,
            l_adv: sum_adv / n,
            l_pert: sum_pert / n,
            total: sum_total / n,
            seconds: t0.elapsed().as_secs_f64(),
            update_norm: update_norm_sq.sqrt(),
        });

        if let Some(dir) = out_dir {
            if epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs {
                checkpoints.push(write_checkpoint(
                    dir,
                    &format!("ckpt_epoch_{epoch:04}.wgck"),
                    &gen,
                )?);
            }
        }
    }

    if enc.fingerprint() != enc_fingerprint {
        return Err(Error::State(
            "surrogate encoder changed during training".to_string(),
        ));
    }
    if let Some(dir) = out_dir {
        checkpoints.push(write_checkpoint(dir, "final.wgck", &gen)?);
    }
    Ok(TrainOutcome {
        generator: gen,
        report,
        checkpoints,
    })
}

/// Train the surrogate briefly as the encoder half of a reconstruction
/// autoencoder (nearest-upsample + linear conv decoder head), then freeze
/// it. Returns the frozen encoder and the per-epoch reconstruction loss.
pub fn pretrain_surrogate(
    cfg: &TrainConfig,
    images: &[Tensor],
) -> Result<(SurrogateEncoder, Vec<f64>)> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::Input("pretraining dataset is empty".to_string()));
    }
    for (i, img) in images.iter().enumerate() {
        img.expect_channels(3, &format!("pretraining image {i}"))?;
        if img.h % crate::surrogate::DOWNSAMPLE_FACTOR != 0
            || img.w % crate::surrogate::DOWNSAMPLE_FACTOR != 0
        {
            return Err(Error::Input(format!(
                "pretraining image {i} dims not divisible by {}",
                crate::surrogate::DOWNSAMPLE_FACTOR
            )));
        }
    }

    let mut layers = SurrogateEncoder::new(cfg.seed).into_layers();
    let mut dec = Conv2d::new(crate::surrogate::LATENT_CHANNELS, 3, 3, 1);
    {
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x7065_7472_6169_6e00);
        dec.init_fan_in(&mut rng);
    }

    let mut sizes: Vec<usize> = layers
        .iter()
        .flat_map(|l| [l.weight.data.len(), l.bias.data.len()])
        .collect();
    sizes.push(dec.weight.data.len());
    sizes.push(dec.bias.data.len());
    let mut adam = Adam::new(cfg.adam(), &sizes)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &idx in &order {
            let x = &images[idx];
            let pre1 = layers[0].forward(x);
            let f1 = leaky(&pre1);
            let pre2 = layers[1].forward(&f1);
            let f2 = leaky(&pre2);
            let pre3 = layers[2].forward(&f2);
            let f3 = leaky(&pre3);
            let z = layers[3].forward(&f3);
            let up = upsample_nearest(&z, crate::surrogate::DOWNSAMPLE_FACTOR);
            let recon = dec.forward(&up);
            let n_el = recon.len() as f64;
            let diff = recon.sub(x);
            let loss = diff.norm_sq() / n_el;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "reconstruction loss diverged at epoch {epoch}"
                )));
            }
            epoch_loss += loss;

            let g_recon = diff.scaled(2.0 / n_el);
            let mut grads: Vec<(crate::nn::ParamTensor, crate::nn::ParamTensor)> = layers
                .iter()
                .map(Conv2d::zero_grads)
                .collect();
            let mut dec_grads = dec.zero_grads();
            let (dec_gw, dec_gb) = &mut dec_grads;
            dec.backward_params_into(&up, &g_recon, dec_gw, dec_gb);
            let g_up = dec.backward_input(&g_recon, up.h, up.w);
            let g_z = upsample_nearest_backward(&g_up, crate::surrogate::DOWNSAMPLE_FACTOR);
            let (gw, gb) = &mut grads[3];
            layers[3].backward_params_into(&f3, &g_z, gw, gb);
            let g_f3 = layers[3].backward_input(&g_z, f3.h, f3.w);
            let g_pre3 = leaky_backward(&pre3, &g_f3);
            let (gw, gb) = &mut grads[2];
            layers[2].backward_params_into(&f2, &g_pre3, gw, gb);
            let g_f2 = layers[2].backward_input(&g_pre3, f2.h, f2.w);
            let g_pre2 = leaky_backward(&pre2, &g_f2);
            let (gw, gb) = &mut grads[1];
            layers[1].backward_params_into(&f1, &g_pre2, gw, gb);
            let g_f1 = layers[1].backward_input(&g_pre2, f1.h, f1.w);
            let g_pre1 = leaky_backward(&pre1, &g_f1);
            let (gw, gb) = &mut grads[0];
            layers[0].backward_params_into(x, &g_pre1, gw, gb);

            let mut param_bufs: Vec<&mut [f64]> = Vec::with_capacity(sizes.len());
            for layer in layers.iter_mut() {
                param_bufs.push(&mut layer.weight.data);
                param_bufs.push(&mut layer.bias.data);
            }
            param_bufs.push(&mut dec.weight.data);
            param_bufs.push(&mut dec.bias.data);
            let mut grad_bufs: Vec<&[f64]> = grads
                .iter()
                .flat_map(|(w, b)| [w.data.as_slice(), b.data.as_slice()])
                .collect();
            grad_bufs.push(&dec_grads.0.data);
            grad_bufs.push(&dec_grads.1.data);
            adam.step(&mut param_bufs, &grad_bufs)?;
        }
        losses.push(epoch_loss / images.len() as f64);
    }
    Ok((SurrogateEncoder::from_layers(layers, cfg.seed), losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::load_generator;
    use crate::eot::EotConfig;
    use crate::synth::synth_corpus;

    fn toy_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 2,
            image_size: 32,
            width_multiplier: 0.125,
            seed: 7,
            checkpoint_every: 2,
            // Identity-only transforms keep the unit test fast; EOT paths
            // are exercised by the loss tests and the acceptance suite.
            eot: EotConfig::disabled(),
            ..TrainConfig::default()
        }
    }

    fn toy_setup(cfg: &TrainConfig, n: usize) -> (Vec<Tensor>, ProtectionTarget, SurrogateEncoder) {
        let images = synth_corpus(100, n, cfg.image_size, cfg.image_size);
        let target = resolve_target(cfg).unwrap();
        (images, target, SurrogateEncoder::default_frozen())
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = toy_cfg();
        let (images, target, enc) = toy_setup(&cfg, 2);
        assert!(matches!(
            train(&cfg, &[], &target, &enc, None, 1),
            Err(Error::Input(_))
        ));
        let bad_cfg = TrainConfig {
            epochs: 0,
            ..cfg.clone()
        };
        assert!(matches!(
            train(&bad_cfg, &images, &target, &enc, None, 1),
            Err(Error::Config(_))
        ));
        let wrong_size = synth_corpus(0, 1, 64, 64);
        assert!(matches!(
            train(&cfg, &wrong_size, &target, &enc, None, 1),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn toy_run_trains_and_checkpoints() {
        let cfg = toy_cfg();
        let (images, target, enc) = toy_setup(&cfg, 4);
        let dir = tempfile::tempdir().unwrap();
        let out = train(&cfg, &images, &target, &enc, Some(dir.path()), 1).unwrap();
        assert_eq!(out.report.epochs.len(), 3);
        for e in &out.report.epochs {
            assert!(e.l_adv.is_finite() && e.l_adv >= 0.0);
            assert!(e.l_pert.is_finite() && e.l_pert >= 0.0);
            assert!(e.total.is_finite());
            assert!(e.update_norm > 0.0);
        }
        // Cadence 2 over 3 epochs: one periodic + final.
        let names: Vec<String> = out
            .checkpoints
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["ckpt_epoch_0002.wgck", "final.wgck"]);
        // Reloading the final checkpoint reproduces the trained forward.
        let reloaded = load_generator(&dir.path().join("final.wgck")).unwrap();
        let (a, _) = out.generator.infer(&images[0], &target.image).unwrap();
        let (b, _) = reloaded.infer(&images[0], &target.image).unwrap();
        assert_eq!(a.data, b.data);
        // Budget respected on every image.
        for img in &images {
            let (_, delta) = out.generator.infer(img, &target.image).unwrap();
            assert!(delta.linf() <= cfg.epsilon + 1e-12);
        }
    }

    #[test]
    fn training_is_deterministic_and_thread_invariant() {
        let cfg = toy_cfg();
        let (images, target, enc) = toy_setup(&cfg, 4);
        let run = |threads: usize| {
            let out = train(&cfg, &images, &target, &enc, None, threads).unwrap();
            let series: Vec<(f64, f64)> = out
                .report
                .epochs
                .iter()
                .map(|e| (e.l_adv, e.total))
                .collect();
            let params: Vec<f64> = out
                .generator
                .layers
                .iter()
                .flat_map(|l| l.weight.data.iter().copied().chain(l.bias.data.iter().copied()))
                .collect();
            (series, params)
        };
        let a = run(1);
        let b = run(1);
        assert_eq!(a, b);
        let c = run(3);
        assert_eq!(a, c, "thread count changed results");
    }

    #[test]
    fn surrogate_stays_frozen_and_losses_move() {
        let cfg = TrainConfig {
            epochs: 4,
            ..toy_cfg()
        };
        let (images, target, enc) = toy_setup(&cfg, 4);
        let fp = enc.fingerprint();
        let out = train(&cfg, &images, &target, &enc, None, 1).unwrap();
        assert_eq!(enc.fingerprint(), fp);
        // The optimizer must actually move the generator.
        let fresh = Generator::new(
            cfg.width_multiplier,
            cfg.epsilon,
            (cfg.image_size, cfg.image_size),
            cfg.seed,
        )
        .unwrap();
        let moved = out
            .generator
            .layers
            .iter()
            .zip(fresh.layers.iter())
            .any(|(a, b)| a.weight.data != b.weight.data);
        assert!(moved);
    }

    #[test]
    fn csv_report_shape() {
        let report = TrainReport {
            epochs: vec![
                EpochStats {
                    epoch: 1,
                    l_adv: 1.5,
                    l_pert: 0.25,
                    total: 1.75,
                    seconds: 0.01,
                    update_norm: 0.5,
                },
                EpochStats {
                    epoch: 2,
                    l_adv: 1.0,
                    l_pert: 0.2,
                    total: 1.2,
                    seconds: 0.02,
                    update_norm: 0.4,
                },
            ],
        };
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,l_adv,l_pert,total,seconds");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,1.5,0.25,1.75,"));
        // update_norm is manifest-only.
        assert!(!csv.contains("0.5\n") || !lines[0].contains("update"));
    }

    #[test]
    fn dataset_loader_skips_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("ok.png");
        crate::imagecore::save_image(&crate::synth::synth_image(0, 32, 32), &good).unwrap();
        let bad = dir.path().join("broken.png");
        std::fs::write(&bad, b"not a png").unwrap();
        let images =
            load_training_images(&[good.clone(), bad.clone()], 32).unwrap();
        assert_eq!(images.len(), 1);
        assert!(matches!(
            load_training_images(&[bad], 32),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn pretraining_reduces_reconstruction_loss_and_freezes() {
        let cfg = TrainConfig {
            epochs: 8,
            seed: 11,
            image_size: 32,
            ..toy_cfg()
        };
        let images = synth_corpus(500, 6, 32, 32);
        let (enc, losses) = pretrain_surrogate(&cfg, &images).unwrap();
        assert_eq!(losses.len(), 8);
        let drop = (losses[0] - losses[7]) / losses[0];
        assert!(
            drop >= 0.3,
            "reconstruction loss fell only {:.1}% ({} -> {})",
            drop * 100.0,
            losses[0],
            losses[7]
        );
        // Shape contract preserved and the result is a frozen encoder.
        let (c, h, w) = enc.latent_shape(64, 64);
        assert_eq!((c, h, w), (4, 8, 8));
        let fp = enc.fingerprint();
        let (_, target, _) = toy_setup(&toy_cfg(), 1);
        let imgs32 = synth_corpus(900, 2, 32, 32);
        train(&toy_cfg(), &imgs32, &target, &enc, None, 1).unwrap();
        assert_eq!(enc.fingerprint(), fp);
    }
}
