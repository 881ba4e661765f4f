//! The epoch loop: staged schedule, per-epoch dev evaluation, plateau-based
//! learning rate decay, metrics log and checkpoints.

use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{frame_error_rate, WerAccumulator};
use crate::nnet::Model;
use crate::replay;
use crate::search::{decode, DecodeConfig};
use crate::tape::Tape;
use crate::training::{
    build_loss, forced_align, phase_for_epoch, validate_dataset_for_model, AlignmentCache,
    LossStats, Phase, RmsProp, TrainConfig,
};

/// Where training writes its artifacts. With `out_dir = None` everything
/// stays in memory (tests, examples).
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub out_dir: Option<PathBuf>,
    /// Extra `config ...` echo lines for the metrics log head.
    pub config_echo: Vec<String>,
    pub quiet: bool,
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub loss: f64,
    pub label_ce: f64,
    pub latent_nll: f64,
    pub dev_fer: f64,
    pub dev_wer: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_dev_wer: f64,
    pub stopped_early: bool,
    /// Metrics log body (identical to the file, minus `#` comment lines).
    pub log_lines: Vec<String>,
}

struct MetricsLog {
    file: Option<File>,
    lines: Vec<String>,
    quiet: bool,
}

impl MetricsLog {
    fn open(opts: &TrainOptions) -> Result<MetricsLog> {
        let file = match &opts.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
                let path = dir.join("metrics.log");
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                Some(f)
            }
            None => None,
        };
        Ok(MetricsLog {
            file,
            lines: Vec::new(),
            quiet: opts.quiet,
        })
    }

    /// `#`-prefixed comment line; timestamps are confined to these.
    fn comment(&mut self, text: &str) {
        if let Some(f) = &mut self.file {
            let _ = writeln!(f, "# {text}");
        }
    }

    fn line(&mut self, text: String) {
        if let Some(f) = &mut self.file {
            let _ = writeln!(f, "{text}");
        }
        if !self.quiet {
            eprintln!("{text}");
        }
        self.lines.push(text);
    }
}

/// One gradient step over a batch of records: forced realignment (phase 3),
/// cache update, joint loss on the winning alignment, optimizer step.
#[allow(clippy::too_many_arguments)]
fn train_batch(
    model: &Model,
    dataset: &Dataset,
    batch: &[usize],
    cache: &mut AlignmentCache,
    cfg: &TrainConfig,
    phase: Phase,
    epoch: usize,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<LossStats> {
    let mut stats = LossStats::default();
    let eos = model.config.eos_id();
    let num_classes = model.config.num_classes();
    for &idx in batch {
        let record = &dataset.records[idx];
        let x = dataset.features(record);

        if phase == Phase::Realign {
            let (times, score) = forced_align(model, &x, &record.labels, &cfg.align_params())
                .map_err(|e| Error::Infeasible(format!("record {}: {e}", record.id)))?;
            let cache_score = if cfg.cache_score_uses_latent {
                score
            } else {
                // label-only comparison: subtract the λ-weighted latent part
                crate::search::score_hypothesis(
                    &model,
                    &x,
                    &record.labels,
                    &times,
                    &crate::search::ScoreParams {
                        latent_scale: 0.0,
                        temperature: 1.0,
                    },
                )?
            };
            cache.consider(&record.id, times, cache_score, epoch)?;
        }

        let tape = Tape::new();
        let enc = if model.config.dropout > 0.0 {
            model.encode_with_dropout(&tape, &x, dropout_rng)?
        } else {
            model.encode(&tape, &x)?
        };
        let steps = match phase {
            Phase::Soft => replay::replay(model, &tape, &enc, &record.labels, None, 1.0)?,
            Phase::FrozenAlignment | Phase::Realign => {
                let entry = cache
                    .get(&record.id)
                    .ok_or_else(|| Error::Contract(format!("no alignment for {}", record.id)))?;
                let times = entry.times.clone();
                replay::replay(model, &tape, &enc, &record.labels, Some(&times), 1.0)?
            }
        };
        let latent_scale = if phase == Phase::Soft { 0.0 } else { cfg.latent_loss_scale };
        let (loss, utt_stats) = build_loss(
            &tape,
            &steps,
            &record.labels,
            eos,
            num_classes,
            latent_scale,
            cfg.label_smoothing,
        )?;
        if !loss.value().is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss on record {} (epoch {epoch}, phase {})",
                record.id,
                phase.name()
            )));
        }
        tape.backward(&loss)?;
        stats.merge(utt_stats);
    }
    Ok(stats)
}

/// Evaluate dev loss-free diagnostics: teacher-forced FER and greedy WER.
fn eval_dev(model: &Model, dev: &Dataset, cfg: &TrainConfig) -> Result<(f64, f64, f64)> {
    let fer = frame_error_rate(model, dev, &cfg.align_params())?;
    let mut wer = WerAccumulator::default();
    let greedy = DecodeConfig {
        label_beam: 1,
        time_beam: 1,
        expand: true,
        per_label_time_beam: 1,
        ..DecodeConfig::default()
    };
    let mut dev_loss = 0.0;
    for record in &dev.records {
        let x = dev.features(record);
        let out = decode(model, &x, &greedy)?;
        wer.add(&record.labels, &out.labels);
        // teacher-forced label CE on the gold labels (soft path for the
        // baseline, linear alignment replay is avoided: use soft-mode loss
        // for schedule decisions only when the variant is soft)
        let tape = Tape::inference();
        let enc = model.encode(&tape, &x)?;
        let steps = if model.config.variant.is_latent() {
            match forced_align(model, &x, &record.labels, &cfg.align_params()) {
                Ok((times, _)) => replay::replay(model, &tape, &enc, &record.labels, Some(&times), 1.0)?,
                Err(Error::Infeasible(_)) => continue,
                Err(e) => return Err(e),
            }
        } else {
            replay::replay(model, &tape, &enc, &record.labels, None, 1.0)?
        };
        let (_, stats) = build_loss(
            &tape,
            &steps,
            &record.labels,
            model.config.eos_id(),
            model.config.num_classes(),
            cfg.latent_loss_scale,
            cfg.label_smoothing,
        )?;
        dev_loss += stats.loss;
    }
    Ok((
        fer.percent,
        wer.wer_percent(),
        dev_loss / dev.records.len().max(1) as f64,
    ))
}

/// Train `model` in place. Writes `metrics.log`, `best.ckpt`, `last.ckpt`
/// and `align.cache` into `out_dir` when given.
pub fn train(
    model: &Model,
    train_ds: &Dataset,
    dev_ds: &Dataset,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    cfg.validate()?;
    validate_dataset_for_model(model, train_ds)?;
    validate_dataset_for_model(model, dev_ds)?;

    let variant = model.config.variant;
    let mut cache = if variant.is_latent() {
        AlignmentCache::init_linear(train_ds, &variant, |frames| {
            model.config.encoder.output_len(frames)
        })?
    } else {
        AlignmentCache::default()
    };

    let params = model.params.tensors();
    let mut optimizer = RmsProp::new(&params);
    let mut log = MetricsLog::open(opts)?;
    log.comment(&format!(
        "monatt training started {}",
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    ));
    for echo in &opts.config_echo {
        log.line(format!("config {echo}"));
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(11);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(12);

    let mut report = TrainReport {
        epochs: Vec::new(),
        best_dev_wer: f64::INFINITY,
        stopped_early: false,
        log_lines: Vec::new(),
    };
    let mut lr = cfg.learning_rate;
    let mut best_dev_loss = f64::INFINITY;
    let mut plateau = 0usize;
    let mut global_step = 0usize;

    for epoch in 0..cfg.max_epochs {
        let phase = phase_for_epoch(cfg, &variant, epoch);
        let mut order: Vec<usize> = (0..train_ds.records.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_stats = LossStats::default();
        for batch in order.chunks(cfg.batch_size) {
            let scaled_lr = lr * crate::training::optim::warmup_scale(global_step, cfg.warmup_steps);
            let stats = train_batch(
                model,
                train_ds,
                batch,
                &mut cache,
                cfg,
                phase,
                epoch,
                &mut dropout_rng,
            )?;
            optimizer.step(&params, scaled_lr, cfg.grad_clip);
            epoch_stats.merge(stats);
            global_step += 1;
        }

        let (dev_fer, dev_wer, dev_loss) = eval_dev(model, dev_ds, cfg)?;
        let n = epoch_stats.utterances.max(1) as f64;
        let record = EpochRecord {
            epoch,
            phase,
            loss: epoch_stats.loss / n,
            label_ce: epoch_stats.label_ce / n,
            latent_nll: epoch_stats.latent_nll / n,
            dev_fer,
            dev_wer,
            lr,
        };
        log.line(format!(
            "epoch {} phase {} loss {:.6} label_ce {:.6} latent_nll {:.6} fer {:.4} wer {:.4} lr {:.6}",
            record.epoch,
            record.phase.name(),
            record.loss,
            record.label_ce,
            record.latent_nll,
            record.dev_fer,
            record.dev_wer,
            record.lr
        ));

        if let Some(dir) = &opts.out_dir {
            model.save(&dir.join("last.ckpt"))?;
            if dev_wer < report.best_dev_wer {
                model.save(&dir.join("best.ckpt"))?;
            }
        }
        report.best_dev_wer = report.best_dev_wer.min(dev_wer);
        report.epochs.push(record);

        if dev_loss + 1e-9 < best_dev_loss {
            best_dev_loss = dev_loss;
            plateau = 0;
        } else {
            plateau += 1;
            if plateau >= cfg.plateau_patience {
                lr *= cfg.plateau_factor;
                plateau = 0;
            }
        }

        if let Some(target) = cfg.stop_dev_wer {
            if dev_wer <= target {
                report.stopped_early = true;
                break;
            }
        }
    }

    if let Some(dir) = &opts.out_dir {
        if variant.is_latent() {
            cache.write(&dir.join("align.cache"))?;
        }
        if !dir.join("best.ckpt").exists() {
            model.save(&dir.join("best.ckpt"))?;
        }
    }
    report.log_lines = log.lines.clone();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::Variant;
    use crate::data::{generate, TaskConfig};
    use crate::nnet::{EncoderConfig, ModelConfig};

    fn micro_task() -> TaskConfig {
        TaskConfig {
            vocab_size: 3,
            feat_dim: 3,
            min_seg_len: 3,
            max_seg_len: 4,
            noise_std: 0.1,
            min_labels: 2,
            max_labels: 3,
            train_records: 8,
            dev_records: 3,
            test_records: 3,
            pool_total: 1,
            seed: 5,
        }
    }

    fn micro_model(variant: Variant) -> Model {
        let cfg = ModelConfig {
            vocab_size: 3,
            feat_dim: 3,
            encoder: EncoderConfig {
                num_layers: 1,
                hidden_per_direction: 4,
                pool_factors: vec![],
            },
            dec_hidden: 6,
            embed_dim: 3,
            att_dim: 4,
            variant,
            dropout: 0.0,
            segmental_feedback: false,
        };
        Model::new(cfg, 1).unwrap()
    }

    fn micro_train_cfg() -> TrainConfig {
        TrainConfig {
            soft_epochs: 1,
            frozen_epochs: 1,
            max_epochs: 3,
            batch_size: 4,
            warmup_steps: 2,
            learning_rate: 2e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_decreases_on_micro_task() {
        let (train_ds, dev_ds, _) = generate(&micro_task()).unwrap();
        let model = micro_model(Variant::hard());
        let report = train(
            &model,
            &train_ds,
            &dev_ds,
            &micro_train_cfg(),
            &TrainOptions {
                quiet: true,
                ..TrainOptions::default()
            },
        )
        .unwrap();
        assert_eq!(report.epochs.len(), 3);
        assert_eq!(report.epochs[0].phase, Phase::Soft);
        assert_eq!(report.epochs[1].phase, Phase::FrozenAlignment);
        assert_eq!(report.epochs[2].phase, Phase::Realign);
        assert!(report.epochs.iter().all(|e| e.loss.is_finite()));
    }

    #[test]
    fn baseline_schedule_stays_soft() {
        let (train_ds, dev_ds, _) = generate(&micro_task()).unwrap();
        let model = micro_model(Variant::global_soft());
        let report = train(
            &model,
            &train_ds,
            &dev_ds,
            &micro_train_cfg(),
            &TrainOptions {
                quiet: true,
                ..TrainOptions::default()
            },
        )
        .unwrap();
        assert!(report.epochs.iter().all(|e| e.phase == Phase::Soft));
        // soft phase has no latent term
        assert!(report.epochs.iter().all(|e| e.latent_nll == 0.0));
    }

    #[test]
    fn pure_latent_schedule_runs_from_scratch() {
        let (train_ds, dev_ds, _) = generate(&micro_task()).unwrap();
        let model = micro_model(Variant::hard());
        let cfg = TrainConfig {
            soft_epochs: 0,
            frozen_epochs: 0,
            max_epochs: 2,
            batch_size: 4,
            warmup_steps: 0,
            ..TrainConfig::default()
        };
        let report = train(
            &model,
            &train_ds,
            &dev_ds,
            &cfg,
            &TrainOptions {
                quiet: true,
                ..TrainOptions::default()
            },
        )
        .unwrap();
        assert!(report.epochs.iter().all(|e| e.phase == Phase::Realign));
        assert!(report.epochs.iter().all(|e| e.latent_nll > 0.0));
    }

    #[test]
    fn two_zero_lr_steps_are_identical() {
        let (train_ds, _, _) = generate(&micro_task()).unwrap();
        let model = micro_model(Variant::hard());
        let cfg = TrainConfig {
            learning_rate: 1e-12, // effectively frozen
            warmup_steps: 0,
            ..micro_train_cfg()
        };
        let mut cache = AlignmentCache::init_linear(&train_ds, &Variant::hard(), |t| {
            model.config.encoder.output_len(t)
        })
        .unwrap();
        let batch: Vec<usize> = (0..train_ds.records.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s1 = train_batch(
            &model, &train_ds, &batch, &mut cache, &cfg, Phase::Realign, 0, &mut rng,
        )
        .unwrap();
        model.params.zero_grads();
        let cache_snapshot: Vec<_> = cache.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        let s2 = train_batch(
            &model, &train_ds, &batch, &mut cache, &cfg, Phase::Realign, 1, &mut rng,
        )
        .unwrap();
        assert!((s1.loss - s2.loss).abs() < 1e-12);
        let cache_after: Vec<_> = cache.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        for ((k1, v1), (k2, v2)) in cache_snapshot.iter().zip(&cache_after) {
            assert_eq!(k1, k2);
            assert_eq!(v1.times, v2.times);
            assert_eq!(v1.score, v2.score);
        }
        model.params.zero_grads();
    }
}
