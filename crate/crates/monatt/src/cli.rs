//! Command implementations behind the `monatt` binary. The binary stays a
//! thin argument parser; everything here is callable from library code and
//! the examples.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data::{generate, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{frame_error_rate, step_stats, EvalReport, WerAccumulator};
use crate::nnet::checkpoint::Checkpoint;
use crate::nnet::Model;
use crate::plot::attention_plot;
use crate::search::{decode_nbest, DecodeConfig, DecodeOutput};
use crate::training::{self, forced_align, AlignmentCache, TrainOptions};

pub const DECODES_VERSION: u32 = 1;

/// gen-data: write train/dev/test dataset files.
pub fn gen_data(cfg: &RunConfig, out_dir: &Path) -> Result<[PathBuf; 3]> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let (train, dev, test) = generate(&cfg.task)?;
    let paths = [
        out_dir.join("train.txt"),
        out_dir.join("dev.txt"),
        out_dir.join("test.txt"),
    ];
    train.write(&paths[0])?;
    dev.write(&paths[1])?;
    test.write(&paths[2])?;
    Ok(paths)
}

/// train: run the staged schedule, writing checkpoints and the metrics log.
pub fn train(
    cfg: &RunConfig,
    data_dir: &Path,
    out_dir: &Path,
    import: Option<&Path>,
    quiet: bool,
) -> Result<training::TrainReport> {
    let train_ds = Dataset::read(&data_dir.join("train.txt"))?;
    let dev_ds = Dataset::read(&data_dir.join("dev.txt"))?;
    let model = Model::new(cfg.model.model_config()?, cfg.train.seed)?;
    if let Some(path) = import {
        let ckpt = Checkpoint::load(path)?;
        let report = model.import_params(&ckpt)?;
        if !quiet {
            eprintln!(
                "imported {} parameters from {} ({} fresh, {} skipped)",
                report.loaded.len(),
                path.display(),
                report.fresh.len(),
                report.skipped.len()
            );
        }
    }
    let opts = TrainOptions {
        out_dir: Some(out_dir.to_path_buf()),
        config_echo: cfg.echo_lines(),
        quiet,
    };
    training::train(&model, &train_ds, &dev_ds, &cfg.train, &opts)
}

/// align: forced alignment of a dataset under a trained model, written as an
/// alignment cache file.
pub fn align(cfg: &RunConfig, ckpt_path: &Path, data_path: &Path, out_path: &Path) -> Result<usize> {
    let model = Model::load(ckpt_path)?;
    if !model.config.variant.is_latent() {
        return Err(Error::Contract(
            "align requires a latent variant checkpoint (the baseline has no alignment)".into(),
        ));
    }
    let ds = Dataset::read(data_path)?;
    training::validate_dataset_for_model(&model, &ds)?;
    let mut cache = AlignmentCache::init_linear(&ds, &model.config.variant, |frames| {
        model.config.encoder.output_len(frames)
    })?;
    let params = cfg.train.align_params();
    for record in &ds.records {
        let x = ds.features(record);
        let (times, score) = forced_align(&model, &x, &record.labels, &params)
            .map_err(|e| Error::Infeasible(format!("record {}: {e}", record.id)))?;
        cache.consider(&record.id, times, score, 0)?;
    }
    cache.write(out_path)?;
    Ok(cache.len())
}

/// Decoded hypotheses for one utterance.
#[derive(Debug, Clone)]
pub struct DecodeRecord {
    pub id: String,
    pub hyps: Vec<DecodeOutput>,
}

/// decode a whole dataset, optionally across threads. Each worker rebuilds
/// the model from the checkpoint; output order follows the dataset.
pub fn decode_dataset(
    ckpt: &Checkpoint,
    ds: &Dataset,
    decode_cfg: &DecodeConfig,
    jobs: usize,
) -> Result<Vec<DecodeRecord>> {
    let jobs = jobs.max(1);
    if jobs == 1 {
        let model = ckpt.clone().into_model()?;
        return ds
            .records
            .iter()
            .map(|r| {
                let x = ds.features(r);
                Ok(DecodeRecord {
                    id: r.id.clone(),
                    hyps: decode_nbest(&model, &x, decode_cfg)?,
                })
            })
            .collect();
    }
    let n = ds.records.len();
    let chunk = n.div_ceil(jobs);
    let mut slots: Vec<Option<Result<Vec<DecodeRecord>>>> = Vec::new();
    slots.resize_with(jobs, || None);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (wi, slot) in slots.iter_mut().enumerate() {
            let lo = wi * chunk;
            let hi = ((wi + 1) * chunk).min(n);
            if lo >= hi {
                *slot = Some(Ok(Vec::new()));
                continue;
            }
            let ckpt = ckpt.clone();
            handles.push(scope.spawn(move || {
                let run = || -> Result<Vec<DecodeRecord>> {
                    let model = ckpt.into_model()?;
                    ds.records[lo..hi]
                        .iter()
                        .map(|r| {
                            let x = ds.features(r);
                            Ok(DecodeRecord {
                                id: r.id.clone(),
                                hyps: decode_nbest(&model, &x, decode_cfg)?,
                            })
                        })
                        .collect()
                };
                (slot, run())
            }));
        }
        for h in handles {
            let (slot, result) = h.join().expect("decode worker panicked");
            *slot = Some(result);
        }
    });
    let mut out = Vec::with_capacity(n);
    for slot in slots {
        out.extend(slot.expect("worker slot filled")?);
    }
    Ok(out)
}

pub fn write_decodes(records: &[DecodeRecord], path: &Path) -> Result<()> {
    let mut out = format!("monatt-decodes {DECODES_VERSION}\n");
    for rec in records {
        for (rank, hyp) in rec.hyps.iter().enumerate() {
            let labels: Vec<String> = hyp.labels.iter().map(|y| y.to_string()).collect();
            let times: Vec<String> = hyp.times.iter().map(|t| t.to_string()).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                rec.id,
                rank + 1,
                hyp.score,
                u8::from(hyp.finished),
                labels.join(" "),
                times.join(" "),
            ));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_decodes(path: &Path) -> Result<Vec<DecodeRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines().enumerate();
    let perr = |line: usize, detail: String| Error::Parse {
        path: path.display().to_string(),
        line,
        detail,
    };
    let (_, header) = lines
        .next()
        .ok_or_else(|| perr(1, "empty decode file".into()))?;
    let version = header
        .strip_prefix("monatt-decodes ")
        .ok_or_else(|| perr(1, "missing 'monatt-decodes <version>' header".into()))?;
    if version != DECODES_VERSION.to_string() {
        return Err(Error::UnsupportedVersion {
            path: path.display().to_string(),
            found: version.into(),
            expected: DECODES_VERSION.to_string(),
        });
    }
    let mut records: Vec<DecodeRecord> = Vec::new();
    for (ln, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(perr(ln + 1, format!("expected 6 tab fields, got {}", fields.len())));
        }
        let parse_ints = |s: &str, what: &str| -> Result<Vec<usize>> {
            s.split_whitespace()
                .map(|v| v.parse::<usize>().map_err(|e| perr(ln + 1, format!("bad {what}: {e}"))))
                .collect()
        };
        let hyp = DecodeOutput {
            labels: parse_ints(fields[4], "label")?,
            times: parse_ints(fields[5], "position")?,
            score: fields[2]
                .parse()
                .map_err(|e| perr(ln + 1, format!("bad score: {e}")))?,
            finished: fields[3] == "1",
        };
        let id = fields[0].to_string();
        match records.last_mut() {
            Some(last) if last.id == id => last.hyps.push(hyp),
            _ => records.push(DecodeRecord { id, hyps: vec![hyp] }),
        }
    }
    Ok(records)
}

/// eval: score decode output against the reference labels.
pub fn eval(
    decodes_path: &Path,
    data_path: &Path,
    ckpt: Option<&Path>,
    cfg: &RunConfig,
) -> Result<EvalReport> {
    let decodes = read_decodes(decodes_path)?;
    let ds = Dataset::read(data_path)?;
    let mut wer = WerAccumulator::default();
    let mut alignments: Vec<Vec<usize>> = Vec::new();
    for rec in &decodes {
        let reference = ds
            .records
            .iter()
            .find(|r| r.id == rec.id)
            .ok_or_else(|| Error::Config(format!("decoded utterance '{}' not in reference", rec.id)))?;
        let best = rec
            .hyps
            .first()
            .ok_or_else(|| Error::Contract(format!("no hypothesis for '{}'", rec.id)))?;
        wer.add(&reference.labels, &best.labels);
        if !best.times.is_empty() {
            alignments.push(best.times.clone());
        }
    }
    let mut report = EvalReport::from_wer(&wer);
    if !alignments.is_empty() {
        let stats = step_stats(&alignments);
        report.step_mean = Some(stats.mean);
        report.step_stddev = Some(stats.stddev);
    }
    if let Some(ckpt_path) = ckpt {
        let model = Model::load(ckpt_path)?;
        let fer = frame_error_rate(&model, &ds, &cfg.train.align_params())?;
        report.fer_percent = Some(fer.percent);
    }
    Ok(report)
}

/// plot-attention: emit the SVG (and optional PPM) heatmap for one utterance.
pub fn plot_attention_cmd(
    cfg: &RunConfig,
    ckpt_path: &Path,
    data_path: &Path,
    utt: Option<&str>,
    out_svg: &Path,
    out_ppm: Option<&Path>,
) -> Result<String> {
    let model = Model::load(ckpt_path)?;
    let ds = Dataset::read(data_path)?;
    let id = match utt {
        Some(id) => id.to_string(),
        None => ds
            .records
            .first()
            .ok_or_else(|| Error::Contract("empty dataset".into()))?
            .id
            .clone(),
    };
    let plot = attention_plot(&model, &ds, &id, &cfg.train.align_params())?;
    fs::write(out_svg, plot.to_svg()).map_err(|e| Error::io(out_svg.display().to_string(), e))?;
    if let Some(ppm) = out_ppm {
        fs::write(ppm, plot.to_ppm()).map_err(|e| Error::io(ppm.display().to_string(), e))?;
    }
    Ok(id)
}

/// Warn when latent decode knobs are set for a baseline checkpoint.
pub fn warn_latent_flags_ignored(model: &Model, decode_cfg: &DecodeConfig) -> Option<String> {
    if model.config.variant.is_latent() {
        return None;
    }
    let d = DecodeConfig::default();
    let mut ignored = Vec::new();
    if decode_cfg.time_beam != d.time_beam {
        ignored.push("time_beam");
    }
    if decode_cfg.per_label_time_beam != d.per_label_time_beam {
        ignored.push("per_label_time_beam");
    }
    if decode_cfg.latent_exponent != d.latent_exponent {
        ignored.push("latent_exponent");
    }
    if decode_cfg.temperature != d.temperature {
        ignored.push("temperature");
    }
    if decode_cfg.expand != d.expand {
        ignored.push("expand");
    }
    if ignored.is_empty() {
        None
    } else {
        Some(format!(
            "warning: baseline (global soft) checkpoint ignores latent decode settings: {}",
            ignored.join(", ")
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::Variant;
    use crate::nnet::{EncoderConfig, ModelConfig};

    fn tiny_run_config() -> RunConfig {
        RunConfig::load(
            None,
            &[
                "task.vocab_size=3".into(),
                "task.feat_dim=2".into(),
                "task.min_seg_len=3".into(),
                "task.max_seg_len=4".into(),
                "task.min_labels=2".into(),
                "task.max_labels=3".into(),
                "task.train_records=4".into(),
                "task.dev_records=2".into(),
                "task.test_records=2".into(),
                "task.pool_total=1".into(),
                "model.vocab_size=3".into(),
                "model.feat_dim=2".into(),
                "model.enc_layers=1".into(),
                "model.enc_hidden=3".into(),
                "model.pool_factors=[]".into(),
                "model.dec_hidden=4".into(),
                "model.embed_dim=2".into(),
                "model.att_dim=3".into(),
                "train.max_epochs=1".into(),
                "train.soft_epochs=0".into(),
                "train.frozen_epochs=0".into(),
                "train.batch_size=2".into(),
                "train.warmup_steps=0".into(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn decode_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("decodes.txt");
        let records = vec![
            DecodeRecord {
                id: "a".into(),
                hyps: vec![DecodeOutput {
                    labels: vec![1, 2],
                    times: vec![1, 3, 4],
                    score: -1.5,
                    finished: true,
                }],
            },
            DecodeRecord {
                id: "b".into(),
                hyps: vec![DecodeOutput {
                    labels: vec![],
                    times: vec![2],
                    score: -0.25,
                    finished: true,
                }],
            },
        ];
        write_decodes(&records, &path).unwrap();
        let back = read_decodes(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].hyps[0].labels, vec![1, 2]);
        assert_eq!(back[0].hyps[0].times, vec![1, 3, 4]);
        assert_eq!(back[1].hyps[0].labels, Vec::<usize>::new());
        assert_eq!(back[1].hyps[0].score, -0.25);
    }

    #[test]
    fn parallel_decode_matches_serial() {
        let cfg = tiny_run_config();
        let dir = tempfile::tempdir().unwrap();
        let paths = gen_data(&cfg, dir.path()).unwrap();
        let ds = Dataset::read(&paths[2]).unwrap();
        let model_cfg = ModelConfig {
            vocab_size: 3,
            feat_dim: 2,
            encoder: EncoderConfig {
                num_layers: 1,
                hidden_per_direction: 3,
                pool_factors: vec![],
            },
            dec_hidden: 4,
            embed_dim: 2,
            att_dim: 3,
            variant: Variant::hard(),
            dropout: 0.0,
            segmental_feedback: false,
        };
        let model = Model::new(model_cfg, 4).unwrap();
        let ckpt = Checkpoint::from_model(&model);
        let serial = decode_dataset(&ckpt, &ds, &cfg.decode, 1).unwrap();
        let parallel = decode_dataset(&ckpt, &ds, &cfg.decode, 3).unwrap();
        assert_eq!(serial.len(), parallel.len());
        for (s, p) in serial.iter().zip(&parallel) {
            assert_eq!(s.id, p.id);
            assert_eq!(s.hyps[0].labels, p.hyps[0].labels);
            assert_eq!(s.hyps[0].times, p.hyps[0].times);
            assert_eq!(s.hyps[0].score, p.hyps[0].score);
        }
    }

    #[test]
    fn baseline_warns_on_latent_flags() {
        let model_cfg = ModelConfig {
            vocab_size: 3,
            feat_dim: 2,
            encoder: EncoderConfig {
                num_layers: 1,
                hidden_per_direction: 3,
                pool_factors: vec![],
            },
            dec_hidden: 4,
            embed_dim: 2,
            att_dim: 3,
            variant: Variant::global_soft(),
            dropout: 0.0,
            segmental_feedback: false,
        };
        let model = Model::new(model_cfg, 4).unwrap();
        let mut dc = DecodeConfig::default();
        assert!(warn_latent_flags_ignored(&model, &dc).is_none());
        dc.latent_exponent = 0.5;
        let warning = warn_latent_flags_ignored(&model, &dc).unwrap();
        assert!(warning.contains("latent_exponent"));
    }
}
