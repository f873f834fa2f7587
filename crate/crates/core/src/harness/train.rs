use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::autodiff::{Tape, Var};
use crate::data::{
    gather, gen_domain, netpbm, shape_centroid, texture_score, BatchStream, DatasetPair, ImageDataset, SyntheticSpec,
    TextureKind,
};
use crate::error::{Error, Result};
use crate::harness::config::{Mode, TrainConfig};
use crate::harness::log::{
    diagnostics_csv, translation_csv, write_atomic, DiagnosticsRow, LogRow, LossLog, TranslationRow,
};
use crate::models::{checkpoint, clip_weights, Adam, Critic, Generator, NoiseSource};
use crate::objectives::{graph, recon_l1_per_pixel, separation_violations};
use crate::seeds::derive;
use crate::tensor::Tensor;

/// Sub-stream indices of the master seed.
mod stream {
    pub const SOURCE_DATA: u64 = 0;
    pub const TARGET_DATA: u64 = 1;
    pub const GENERATOR_INIT: u64 = 2;
    pub const CRITIC_INIT: u64 = 3;
    pub const SOURCE_BATCHES: u64 = 4;
    pub const TARGET_BATCHES: u64 = 5;
    pub const TRAIN_NOISE: u64 = 6;
    pub const EVAL_NOISE: u64 = 7;
}

/// Fraction of the source domain held out for evaluation: the last eighth.
pub const HELD_OUT_DIVISOR: usize = 8;
/// Training images used for the train-slice reconstruction diagnostic.
const TRAIN_SLICE: usize = 32;
/// Evaluation rows in the reported reconstruction tail variance.
const TAIL_ROWS: usize = 10;

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub log: LossLog,
    pub diagnostics: Vec<DiagnosticsRow>,
    /// Translation metrics per evaluation (`i2i` mode only).
    pub translation: Vec<TranslationRow>,
    pub recon_tail_variance: f64,
    pub checkpoints: Vec<PathBuf>,
    pub generator: Generator<f32>,
    pub critic: Option<Critic<f32>>,
}

impl TrainReport {
    pub fn final_recon(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |r| r.recon_l1)
    }

    pub fn first_recon(&self) -> f64 {
        self.log.rows.first().map_or(f64::NAN, |r| r.recon_l1)
    }

    pub fn final_translation(&self) -> Option<&TranslationRow> {
        self.translation.last()
    }
}

fn synthetic_spec(cfg: &TrainConfig, texture: TextureKind) -> SyntheticSpec {
    let mut spec = SyntheticSpec::desk(texture);
    spec.channels = cfg.channels;
    if cfg.image_size != spec.height {
        spec = spec.resized(cfg.image_size);
    }
    spec
}

/// The source and target datasets a config describes: loaded from
/// directories when given, synthesised otherwise.
pub fn load_datasets(cfg: &TrainConfig) -> Result<DatasetPair> {
    let seed = cfg.data_seed();
    let source = match &cfg.source_dir {
        Some(dir) => ImageDataset::load_dir(dir)?,
        None => {
            gen_domain(&synthetic_spec(cfg, cfg.source_texture), cfg.dataset_size, derive(seed, stream::SOURCE_DATA))?
        }
    };
    let target = if cfg.mode == Mode::I2i {
        match &cfg.target_dir {
            Some(dir) => ImageDataset::load_dir(dir)?,
            None => gen_domain(
                &synthetic_spec(cfg, cfg.target_texture),
                cfg.dataset_size,
                derive(seed, stream::TARGET_DATA),
            )?,
        }
    } else {
        source.clone()
    };
    let expected = [cfg.channels, cfg.image_size, cfg.image_size];
    if source.image_shape() != expected {
        return Err(Error::shape("dataset images", source.image_shape(), &expected));
    }
    DatasetPair::new(source, target)
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    out: Option<&'a Path>,
    data: DatasetPair,
    generator: Generator<f32>,
    critic: Option<Critic<f32>>,
    gen_opt: Adam<f32>,
    critic_opt: Option<Adam<f32>>,
    source_batches: BatchStream,
    target_batches: Option<BatchStream>,
    noise: NoiseSource,
    held_out: Vec<usize>,
    held_x: Tensor<f32>,
    held_z: Tensor<f32>,
    train_x: Tensor<f32>,
    train_z: Tensor<f32>,
    target_texture: TextureKind,
    last: (f64, f64),
    report_log: LossLog,
    diagnostics: Vec<DiagnosticsRow>,
    translation: Vec<TranslationRow>,
    checkpoints: Vec<PathBuf>,
    started: Instant,
}

/// Runs one training session. When `out` is given, the loss log,
/// diagnostics, evaluation grids and checkpoints are written there as the
/// run progresses; on a numerical abort the files from the last good
/// evaluation remain.
pub fn train(cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainReport> {
    cfg.validate()?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
        std::fs::create_dir_all(dir.join("grids")).map_err(|e| Error::io(dir, e))?;
    }
    let mut t = Trainer::new(cfg, out, load_datasets(cfg)?)?;
    t.run()?;
    Ok(TrainReport {
        recon_tail_variance: t.report_log.recon_tail_variance(TAIL_ROWS),
        log: t.report_log,
        diagnostics: t.diagnostics,
        translation: t.translation,
        checkpoints: t.checkpoints,
        generator: t.generator,
        critic: t.critic,
    })
}

/// [`train`] restricted to translation between two differing domains.
pub fn train_i2i(cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainReport> {
    if cfg.mode != Mode::I2i {
        return Err(Error::Config(format!("train_i2i needs mode i2i, got {}", cfg.mode.as_str())));
    }
    train(cfg, out)
}

impl<'a> Trainer<'a> {
    fn new(cfg: &'a TrainConfig, out: Option<&'a Path>, data: DatasetPair) -> Result<Self> {
        let seed = cfg.seed;
        let generator = Generator::new(cfg.generator_spec(), derive(seed, stream::GENERATOR_INIT))?;
        let critic = if cfg.mode.is_adversarial() {
            Some(Critic::new(cfg.critic_spec(), derive(seed, stream::CRITIC_INIT))?)
        } else {
            None
        };
        let gen_opt = Adam::new(cfg.generator_adam(), &generator.params);
        let critic_opt = critic.as_ref().map(|c| Adam::new(cfg.critic_adam(), &c.params));

        let n = data.shape_source.len();
        let n_held = (n / HELD_OUT_DIVISOR).max(1);
        if n_held >= n {
            return Err(Error::Config(format!("source dataset of {n} images leaves nothing to train on")));
        }
        let pool: Vec<usize> = (0..n - n_held).collect();
        let held_out: Vec<usize> = (n - n_held..n).collect();
        if cfg.batch_size > pool.len() {
            return Err(Error::Config(format!(
                "batch_size {} exceeds the {} training images",
                cfg.batch_size,
                pool.len()
            )));
        }
        let source_batches = BatchStream::new(pool.clone(), cfg.batch_size, derive(seed, stream::SOURCE_BATCHES))?;
        let target_batches = if cfg.mode == Mode::I2i {
            let all = (0..data.texture_target.len()).collect();
            Some(BatchStream::new(all, cfg.batch_size, derive(seed, stream::TARGET_BATCHES))?)
        } else {
            None
        };

        // Frozen evaluation noise from its own stream: evaluating never
        // consumes training randomness.
        let mut eval_noise = NoiseSource::new(derive(seed, stream::EVAL_NOISE));
        let held_x = gather(&data.shape_source.images, &held_out)?;
        let held_z = eval_noise.sample(&generator.noise_shape(held_out.len()));
        let train_slice: Vec<usize> = pool.iter().copied().take(TRAIN_SLICE).collect();
        let train_x = gather(&data.shape_source.images, &train_slice)?;
        let train_z = eval_noise.sample(&generator.noise_shape(train_slice.len()));
        let target_texture = data.texture_target.records.first().map(|r| r.texture_kind).unwrap_or(cfg.target_texture);

        Ok(Trainer {
            cfg,
            out,
            data,
            generator,
            critic,
            gen_opt,
            critic_opt,
            source_batches,
            target_batches,
            noise: NoiseSource::new(derive(seed, stream::TRAIN_NOISE)),
            held_out,
            held_x,
            held_z,
            train_x,
            train_z,
            target_texture,
            last: (0.0, 0.0),
            report_log: LossLog::default(),
            diagnostics: Vec::new(),
            translation: Vec::new(),
            checkpoints: Vec::new(),
            started: Instant::now(),
        })
    }

    fn run(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let mut seen = 0u64;
        let mut next_eval = cfg.eval_every;
        self.evaluate(0)?;
        while seen < cfg.total_images {
            seen += match cfg.mode {
                Mode::Ae => self.ae_step()?,
                _ => self.adversarial_step()?,
            };
            if seen >= next_eval {
                while next_eval <= seen {
                    next_eval += cfg.eval_every;
                }
                self.evaluate(seen)?;
            }
        }
        Ok(())
    }

    fn source_batch(&mut self) -> Result<Tensor<f32>> {
        let idx = self.source_batches.next_batch();
        gather(&self.data.shape_source.images, &idx)
    }

    fn finite(what: &str, v: f32) -> Result<f64> {
        if v.is_finite() {
            Ok(v as f64)
        } else {
            Err(Error::NonFinite(format!("{what} is {v}")))
        }
    }

    fn ae_step(&mut self) -> Result<u64> {
        let x = self.source_batch()?;
        let b = x.shape()[0];
        let z = self.noise.sample(&self.generator.noise_shape(b));
        let mut tape = Tape::new();
        let bound = self.generator.params.bind(&mut tape, true);
        let (xv, zv) = (tape.constant(x), tape.constant(z));
        let gx = self.generator.forward(&mut tape, &bound, xv, zv)?;
        let loss = graph::ae_loss(&mut tape, xv, gx)?;
        let value = Self::finite("reconstruction loss", tape.value(loss).item())?;
        let mut grads = tape.backward(loss)?;
        let g = self.generator.params.collect_grads(&mut grads, &bound);
        self.gen_opt.step(&mut self.generator.params, &g)?;
        self.last = (0.0, value);
        Ok(b as u64)
    }

    /// One generator step preceded by `n_critic` critic steps. The final
    /// critic step reuses the generator forward pass of the generator step.
    fn adversarial_step(&mut self) -> Result<u64> {
        let mut images = 0;
        for k in 0..self.cfg.n_critic {
            let x = self.source_batch()?;
            let b = x.shape()[0];
            images += b as u64;
            let z = self.noise.sample(&self.generator.noise_shape(b));
            let real = match self.target_batches.as_mut() {
                Some(stream) => gather(&self.data.texture_target.images, &stream.next_batch())?,
                None => x.clone(),
            };
            if k + 1 < self.cfg.n_critic {
                let fake = self.generator.apply(&x, &z)?;
                self.critic_step(&real, &fake)?;
                continue;
            }
            let mut tape = Tape::new();
            let bound = self.generator.params.bind(&mut tape, true);
            let (xv, zv) = (tape.constant(x), tape.constant(z));
            let gx = self.generator.forward(&mut tape, &bound, xv, zv)?;
            let critic_loss = self.critic_step(&real, tape.value(gx))?;

            // Generator step against the freshly updated, now frozen, critic.
            let critic = self.critic.as_ref().expect("adversarial mode has a critic");
            let cb = critic.params.bind(&mut tape, false);
            let fake_out = critic.forward(&mut tape, &cb, gx)?;
            let loss = match self.cfg.mode {
                Mode::AdvPaired => {
                    let real_out = critic.forward(&mut tape, &cb, xv)?;
                    graph::paired_adv_loss(&mut tape, real_out.vector, fake_out.vector)?
                }
                _ => graph::wgan_generator_loss(&mut tape, fake_out.scalar)?,
            };
            let gen_loss = Self::finite("generator loss", tape.value(loss).item())?;
            let mut grads = tape.backward(loss)?;
            let g = self.generator.params.collect_grads(&mut grads, &bound);
            self.gen_opt.step(&mut self.generator.params, &g)?;
            self.last = (critic_loss, gen_loss);
        }
        Ok(images)
    }

    /// Ascent on the adversarial objective for the critic (descent on its
    /// negation), followed by weight clipping.
    fn critic_step(&mut self, real: &Tensor<f32>, fake: &Tensor<f32>) -> Result<f64> {
        let critic = self.critic.as_mut().expect("adversarial mode has a critic");
        let mut tape = Tape::new();
        let bound = critic.params.bind(&mut tape, true);
        let (rv, fv) = (tape.constant(real.clone()), tape.constant(fake.clone()));
        let r = critic.forward(&mut tape, &bound, rv)?;
        let f = critic.forward(&mut tape, &bound, fv)?;
        let objective: Var = match self.cfg.mode {
            Mode::AdvPaired => graph::paired_adv_loss(&mut tape, r.vector, f.vector)?,
            _ => graph::wgan_loss(&mut tape, r.scalar, f.scalar)?,
        };
        let loss = tape.neg(objective);
        let value = Self::finite("critic loss", tape.value(loss).item())?;
        let mut grads = tape.backward(loss)?;
        let g = critic.params.collect_grads(&mut grads, &bound);
        self.critic_opt.as_mut().expect("adversarial mode has a critic optimizer").step(&mut critic.params, &g)?;
        if self.cfg.clip_enabled {
            clip_weights(&mut critic.params, self.cfg.clip as f32);
        }
        Ok(value)
    }

    fn evaluate(&mut self, seen: u64) -> Result<()> {
        let cfg = self.cfg;
        let wall_ms = if cfg.log_wall_time { self.started.elapsed().as_millis() as u64 } else { 0 };
        let (critic_loss, gen_loss) = self.last;
        let mut row = LogRow { images_seen: seen, recon_l1: 0.0, critic_loss, gen_loss, wall_ms };
        let mut diag = DiagnosticsRow { images_seen: seen, recon_l1_train: 0.0, separation_rate: 0.0 };
        let mut translation = TranslationRow { log: row, centroid_drift: 0.0, texture_flip_rate: 0.0 };

        // The tracker only reads parameters; switching it off must leave
        // every trajectory unchanged.
        if cfg.track_recon {
            let gx = self.generator.apply(&self.held_x, &self.held_z)?;
            row.recon_l1 = recon_l1_per_pixel(&self.held_x, &gx)?;
            let gt = self.generator.apply(&self.train_x, &self.train_z)?;
            diag.recon_l1_train = recon_l1_per_pixel(&self.train_x, &gt)?;
            if let Some(critic) = &self.critic {
                let (dr, _) = critic.apply(&self.held_x)?;
                let (df, _) = critic.apply(&gx)?;
                let bad = separation_violations(&dr, &df)?;
                diag.separation_rate = 1.0 - bad as f64 / dr.numel() as f64;
            }
            if cfg.mode == Mode::I2i {
                let (drift, flip) = self.translation_metrics(&gx);
                translation.centroid_drift = drift;
                translation.texture_flip_rate = flip;
            }
            self.write_grid(seen, &gx)?;
        }
        translation.log = row;
        self.report_log.push(row)?;
        self.diagnostics.push(diag);
        if cfg.mode == Mode::I2i {
            self.translation.push(translation);
        }
        self.write_outputs(seen)
    }

    /// `(mean centroid distance, fraction classified as target texture)`
    /// over the held-out source slice. An output without any foreground
    /// counts as drifting by the full canvas diagonal.
    fn translation_metrics(&self, gx: &Tensor<f32>) -> (f64, f64) {
        let n = self.held_out.len();
        let diagonal = (2.0f64).sqrt() * self.cfg.image_size as f64;
        let mut drift = 0.0;
        let mut flips = 0usize;
        for (k, &i) in self.held_out.iter().enumerate() {
            let out = gx.unbatch(k);
            let input = &self.data.shape_source.images[i];
            drift += match (shape_centroid(input), shape_centroid(&out)) {
                (Some((r0, c0)), Some((r1, c1))) => ((r1 - r0).powi(2) + (c1 - c0).powi(2)).sqrt(),
                _ => diagonal,
            };
            let s = texture_score(&out);
            let hit = match self.target_texture {
                TextureKind::HStripes => s > 0.0,
                TextureKind::Dots => s < 0.0,
            };
            flips += hit as usize;
        }
        (drift / n as f64, flips as f64 / n as f64)
    }

    fn write_grid(&self, seen: u64, gx: &Tensor<f32>) -> Result<()> {
        let Some(dir) = self.out else { return Ok(()) };
        let k = self.cfg.grid_images.min(self.held_out.len());
        if k == 0 {
            return Ok(());
        }
        let inputs = (0..k).map(|i| self.held_x.unbatch(i)).collect();
        let outputs = (0..k).map(|i| gx.unbatch(i)).collect();
        let grid = netpbm::grid(&[inputs, outputs])?;
        let ext = if self.cfg.channels == 1 { "pgm" } else { "ppm" };
        netpbm::save(&grid, &dir.join("grids").join(format!("grid_{seen:08}.{ext}")))
    }

    fn write_outputs(&mut self, seen: u64) -> Result<()> {
        let Some(dir) = self.out else { return Ok(()) };
        if self.cfg.write_checkpoints {
            let path = dir.join("checkpoints").join(format!("ckpt_{seen:08}.advt"));
            let mut entries: Vec<(&str, &Tensor<f32>)> = self.generator.params.iter().collect();
            if let Some(c) = &self.critic {
                entries.extend(c.params.iter());
            }
            write_atomic(&path, &checkpoint::encode(entries))?;
            self.checkpoints.push(path);
        }
        self.report_log.write(&dir.join("loss_log.csv"))?;
        write_atomic(&dir.join("diagnostics.csv"), diagnostics_csv(&self.diagnostics).as_bytes())?;
        if self.cfg.mode == Mode::I2i {
            write_atomic(&dir.join("translation_report.csv"), translation_csv(&self.translation).as_bytes())?;
        }
        Ok(())
    }
}
