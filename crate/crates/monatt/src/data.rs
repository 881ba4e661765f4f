//! Synthetic monotonic transduction task and dataset file IO.
//!
//! Each utterance is a label sequence rendered to frames: every label gets a
//! random-length segment of its class mean vector plus Gaussian noise. Gold
//! segment boundaries are kept for diagnostics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

/// Generator settings for the synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub vocab_size: usize,
    pub feat_dim: usize,
    /// Frames per label, inclusive range.
    pub min_seg_len: usize,
    pub max_seg_len: usize,
    /// Stddev of the additive Gaussian feature noise.
    pub noise_std: f64,
    /// Labels per utterance, inclusive range.
    pub min_labels: usize,
    pub max_labels: usize,
    pub train_records: usize,
    pub dev_records: usize,
    pub test_records: usize,
    /// Total encoder downsampling the data must stay feasible for (strict
    /// monotonicity needs N+1 positions within ceil(T/P) frames).
    pub pool_total: usize,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            vocab_size: 10,
            feat_dim: 8,
            min_seg_len: 3,
            max_seg_len: 8,
            noise_std: 0.3,
            min_labels: 3,
            max_labels: 12,
            train_records: 2000,
            dev_records: 200,
            test_records: 200,
            pool_total: 2,
            seed: 1,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.feat_dim == 0 {
            return Err(Error::Config("vocab_size and feat_dim must be >= 1".into()));
        }
        if self.min_seg_len == 0 || self.min_seg_len > self.max_seg_len {
            return Err(Error::Config("need 1 <= min_seg_len <= max_seg_len".into()));
        }
        if self.min_labels == 0 || self.min_labels > self.max_labels {
            return Err(Error::Config("need 1 <= min_labels <= max_labels".into()));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Config("noise_std must be >= 0".into()));
        }
        if self.pool_total == 0 {
            return Err(Error::Config("pool_total must be >= 1".into()));
        }
        // Worst case: every segment at its minimum length. A strict-monotone
        // alignment needs N+1 distinct encoder frames.
        for n in self.min_labels..=self.max_labels {
            let min_frames = n * self.min_seg_len;
            let enc_len = min_frames.div_ceil(self.pool_total);
            if enc_len < n + 1 {
                return Err(Error::Infeasible(format!(
                    "N={n} labels with min segment {} and pooling {} gives only {enc_len} \
                     encoder frames for {} positions",
                    self.min_seg_len,
                    self.pool_total,
                    n + 1
                )));
            }
        }
        Ok(())
    }
}

/// One utterance: features, labels, and (for synthetic data) the gold
/// segment end frames.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    /// Row-major [frames × feat_dim].
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    /// Strictly increasing 1-based end frames, last one == frames.
    pub gold_boundaries: Option<Vec<usize>>,
}

impl DatasetRecord {
    pub fn frames(&self, feat_dim: usize) -> usize {
        self.features.len() / feat_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab_size: usize,
    pub feat_dim: usize,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn features(&self, record: &DatasetRecord) -> Tensor {
        let frames = record.frames(self.feat_dim);
        Tensor::new(vec![frames, self.feat_dim], record.features.clone())
            .expect("record feature shape")
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            if r.features.is_empty() || r.features.len() % self.feat_dim != 0 {
                return Err(Error::Contract(format!(
                    "record {}: {} feature values do not form [T × {}]",
                    r.id,
                    r.features.len(),
                    self.feat_dim
                )));
            }
            if r.labels.is_empty() {
                return Err(Error::Contract(format!("record {}: no labels", r.id)));
            }
            if let Some(&bad) = r.labels.iter().find(|&&y| y >= self.vocab_size) {
                return Err(Error::bounds(
                    "dataset",
                    format!("record {}: label {bad} >= vocab {}", r.id, self.vocab_size),
                ));
            }
            if let Some(b) = &r.gold_boundaries {
                let frames = r.frames(self.feat_dim);
                if b.len() != r.labels.len()
                    || b.windows(2).any(|w| w[0] >= w[1])
                    || b.last() != Some(&frames)
                {
                    return Err(Error::Contract(format!(
                        "record {}: gold boundaries are not strictly increasing up to {frames}",
                        r.id
                    )));
                }
            }
        }
        Ok(())
    }

    // ── file format ─────────────────────────────────────────────────────
    //
    //   monatt-dataset 1
    //   vocab 10
    //   featdim 8
    //   record <id>
    //   <T> <N>
    //   ... T lines of F floats ...
    //   <N label ids>
    //   gold <N end frames>          (optional)
    //   record <id>
    //   ...

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "monatt-dataset {FORMAT_VERSION}");
        let _ = writeln!(out, "vocab {}", self.vocab_size);
        let _ = writeln!(out, "featdim {}", self.feat_dim);
        for r in &self.records {
            let frames = r.frames(self.feat_dim);
            let _ = writeln!(out, "record {}", r.id);
            let _ = writeln!(out, "{frames} {}", r.labels.len());
            for t in 0..frames {
                let row = &r.features[t * self.feat_dim..(t + 1) * self.feat_dim];
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
            let labels: Vec<String> = r.labels.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", labels.join(" "));
            if let Some(b) = &r.gold_boundaries {
                let bs: Vec<String> = b.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "gold {}", bs.join(" "));
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read(path: &Path) -> Result<Dataset> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let perr = |line: usize, detail: String| Error::Parse {
            path: path.display().to_string(),
            line,
            detail,
        };
        let lines: Vec<&str> = text.lines().collect();
        let mut pos = 0usize;
        let next = |pos: &mut usize, what: &str| -> Result<(usize, &str)> {
            if *pos >= lines.len() {
                return Err(perr(lines.len(), format!("file truncated, expected {what}")));
            }
            *pos += 1;
            Ok((*pos, lines[*pos - 1]))
        };

        let (ln, header) = next(&mut pos, "header")?;
        let version = header
            .strip_prefix("monatt-dataset ")
            .ok_or_else(|| perr(ln, "missing 'monatt-dataset <version>' header".into()))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(Error::UnsupportedVersion {
                path: path.display().to_string(),
                found: version.to_string(),
                expected: FORMAT_VERSION.to_string(),
            });
        }
        let (ln, vline) = next(&mut pos, "vocab line")?;
        let vocab_size: usize = vline
            .strip_prefix("vocab ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| perr(ln, "expected 'vocab <n>'".into()))?;
        let (ln, fline) = next(&mut pos, "featdim line")?;
        let feat_dim: usize = fline
            .strip_prefix("featdim ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| perr(ln, "expected 'featdim <n>'".into()))?;
        if feat_dim == 0 {
            return Err(perr(ln, "featdim must be >= 1".into()));
        }

        let mut records = Vec::new();
        while pos < lines.len() {
            let (ln, line) = next(&mut pos, "record header")?;
            let id = line
                .strip_prefix("record ")
                .ok_or_else(|| perr(ln, format!("expected 'record <id>', got '{line}'")))?
                .to_string();
            let (ln, dims) = next(&mut pos, "record dimensions")?;
            let mut it = dims.split_whitespace();
            let frames: usize = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| perr(ln, "expected '<T> <N>'".into()))?;
            let n_labels: usize = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| perr(ln, "expected '<T> <N>'".into()))?;
            if frames == 0 || n_labels == 0 {
                return Err(perr(ln, "T and N must be >= 1".into()));
            }
            let mut features = Vec::with_capacity(frames * feat_dim);
            for _ in 0..frames {
                let (ln, row) = next(&mut pos, "feature row")?;
                let vals: std::result::Result<Vec<f64>, _> =
                    row.split_whitespace().map(|s| s.parse::<f64>()).collect();
                let vals = vals.map_err(|e| perr(ln, format!("bad float: {e}")))?;
                if vals.len() != feat_dim {
                    return Err(perr(
                        ln,
                        format!("feature row has {} values, expected {feat_dim}", vals.len()),
                    ));
                }
                features.extend(vals);
            }
            let (ln, label_line) = next(&mut pos, "label line")?;
            let labels: std::result::Result<Vec<usize>, _> =
                label_line.split_whitespace().map(|s| s.parse::<usize>()).collect();
            let labels = labels.map_err(|e| perr(ln, format!("bad label id: {e}")))?;
            if labels.len() != n_labels {
                return Err(perr(ln, format!("{} labels, expected {n_labels}", labels.len())));
            }
            // optional gold boundary line
            let mut gold_boundaries = None;
            if pos < lines.len() {
                if let Some(g) = lines[pos].strip_prefix("gold ") {
                    let b: std::result::Result<Vec<usize>, _> =
                        g.split_whitespace().map(|s| s.parse::<usize>()).collect();
                    gold_boundaries = Some(b.map_err(|e| perr(pos + 1, format!("bad boundary: {e}")))?);
                    pos += 1;
                }
            }
            records.push(DatasetRecord {
                id,
                features,
                labels,
                gold_boundaries,
            });
        }
        let ds = Dataset {
            vocab_size,
            feat_dim,
            records,
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Per-label mean feature vectors drawn once from the task seed.
pub fn class_means(cfg: &TaskConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    (0..cfg.vocab_size)
        .map(|_| (0..cfg.feat_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Generate train/dev/test splits with disjoint RNG streams.
pub fn generate(cfg: &TaskConfig) -> Result<(Dataset, Dataset, Dataset)> {
    cfg.validate()?;
    let means = class_means(cfg);
    let make = |split: u64, name: &str, count: usize| -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(split);
        let noise = Normal::new(0.0, cfg.noise_std)
            .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
        let mut records = Vec::with_capacity(count);
        for i in 0..count {
            let n = rng.random_range(cfg.min_labels..=cfg.max_labels);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..cfg.vocab_size)).collect();
            let mut features = Vec::new();
            let mut boundaries = Vec::with_capacity(n);
            let mut frame_count = 0usize;
            for &y in &labels {
                let seg = rng.random_range(cfg.min_seg_len..=cfg.max_seg_len);
                for _ in 0..seg {
                    for f in 0..cfg.feat_dim {
                        features.push(means[y][f] + noise.sample(&mut rng));
                    }
                }
                frame_count += seg;
                boundaries.push(frame_count);
            }
            records.push(DatasetRecord {
                id: format!("{name}-{i:04}"),
                features,
                labels,
                gold_boundaries: Some(boundaries),
            });
        }
        Ok(Dataset {
            vocab_size: cfg.vocab_size,
            feat_dim: cfg.feat_dim,
            records,
        })
    };
    Ok((
        make(1, "train", cfg.train_records)?,
        make(2, "dev", cfg.dev_records)?,
        make(3, "test", cfg.test_records)?,
    ))
}
