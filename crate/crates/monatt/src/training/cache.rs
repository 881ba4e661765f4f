//! Best-alignment cache with keep-if-better updates.
//!
//! Entries start as the linear alignment with no score. The first Viterbi
//! realignment always installs its score; afterwards an alignment is only
//! replaced when its (λ-weighted) score strictly improves, so the cached
//! score is non-decreasing over training.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::attention::Variant;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::training::linear_alignment;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentCacheEntry {
    /// N+1 positions including EOS.
    pub times: Vec<usize>,
    /// Joint score; `None` until the first realignment scores the entry.
    pub score: Option<f64>,
    /// Epoch of the last accepted update.
    pub epoch: usize,
}

#[derive(Debug, Default, Clone)]
pub struct AlignmentCache {
    entries: BTreeMap<String, AlignmentCacheEntry>,
}

impl AlignmentCache {
    /// Linear alignments for every record; encoder lengths come from
    /// `enc_len_of(frames)`.
    pub fn init_linear(
        dataset: &Dataset,
        variant: &Variant,
        enc_len_of: impl Fn(usize) -> usize,
    ) -> Result<AlignmentCache> {
        let mut entries = BTreeMap::new();
        for r in &dataset.records {
            let enc_len = enc_len_of(r.frames(dataset.feat_dim));
            let times = linear_alignment(r.labels.len() + 1, enc_len, variant.is_strict())
                .map_err(|e| Error::Infeasible(format!("record {}: {e}", r.id)))?;
            entries.insert(
                r.id.clone(),
                AlignmentCacheEntry {
                    times,
                    score: None,
                    epoch: 0,
                },
            );
        }
        Ok(AlignmentCache { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&AlignmentCacheEntry> {
        self.entries.get(id)
    }

    /// Keep-if-better: installs the new alignment when the entry is unscored
    /// or the new score strictly exceeds the stored one. Returns whether the
    /// entry changed.
    pub fn consider(&mut self, id: &str, times: Vec<usize>, score: f64, epoch: usize) -> Result<bool> {
        let entry = self
            .entries
            .get_mut(id)
            .ok_or_else(|| Error::Contract(format!("no cache entry for utterance '{id}'")))?;
        let accept = match entry.score {
            None => true,
            Some(old) => score > old,
        };
        if accept {
            if let Some(old) = entry.score {
                debug_assert!(score > old, "cache score must not decrease");
            }
            entry.times = times;
            entry.score = Some(score);
            entry.epoch = epoch;
        }
        Ok(accept)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &AlignmentCacheEntry)> {
        self.entries.iter()
    }

    // One record per line: `<id> <N> <t_1 .. t_{N+1}> <score|na>`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (id, e) in &self.entries {
            let n = e.times.len() - 1;
            let times: Vec<String> = e.times.iter().map(|t| t.to_string()).collect();
            let score = e.score.map(|s| s.to_string()).unwrap_or_else(|| "na".into());
            out.push_str(&format!("{id} {n} {} {score}\n", times.join(" ")));
        }
        fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read(path: &Path) -> Result<AlignmentCache> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut entries = BTreeMap::new();
        for (ln, line) in text.lines().enumerate() {
            let perr = |detail: String| Error::Parse {
                path: path.display().to_string(),
                line: ln + 1,
                detail,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 4 {
                return Err(perr("expected '<id> <N> <t...> <score>'".into()));
            }
            let id = fields[0].to_string();
            let n: usize = fields[1].parse().map_err(|e| perr(format!("bad N: {e}")))?;
            if fields.len() != n + 4 {
                return Err(perr(format!(
                    "expected {} position fields, found {}",
                    n + 1,
                    fields.len() - 3
                )));
            }
            let times: Vec<usize> = fields[2..2 + n + 1]
                .iter()
                .map(|s| s.parse().map_err(|e| perr(format!("bad position: {e}"))))
                .collect::<Result<_>>()?;
            let score_field = fields[n + 3];
            let score = if score_field == "na" {
                None
            } else {
                Some(score_field.parse().map_err(|e| perr(format!("bad score: {e}")))?)
            };
            entries.insert(
                id,
                AlignmentCacheEntry {
                    times,
                    score,
                    epoch: 0,
                },
            );
        }
        Ok(AlignmentCache { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, TaskConfig};

    fn cache_fixture() -> (Dataset, AlignmentCache) {
        let cfg = TaskConfig {
            vocab_size: 3,
            feat_dim: 2,
            min_seg_len: 3,
            max_seg_len: 4,
            noise_std: 0.1,
            min_labels: 2,
            max_labels: 3,
            train_records: 5,
            dev_records: 1,
            test_records: 1,
            pool_total: 1,
            seed: 3,
        };
        let (train, _, _) = generate(&cfg).unwrap();
        let cache = AlignmentCache::init_linear(&train, &Variant::hard(), |t| t).unwrap();
        (train, cache)
    }

    #[test]
    fn linear_bootstrap_covers_every_record() {
        let (train, cache) = cache_fixture();
        assert_eq!(cache.len(), train.records.len());
        for r in &train.records {
            let e = cache.get(&r.id).unwrap();
            assert_eq!(e.times.len(), r.labels.len() + 1);
            assert!(e.score.is_none());
        }
    }

    #[test]
    fn keep_if_better_rule() {
        let (train, mut cache) = cache_fixture();
        let id = train.records[0].id.clone();
        let n = train.records[0].labels.len();
        let times: Vec<usize> = (1..=n + 1).collect();
        // unscored entry always accepts
        assert!(cache.consider(&id, times.clone(), -10.0, 1).unwrap());
        // worse or equal score is rejected
        assert!(!cache.consider(&id, times.clone(), -10.0, 2).unwrap());
        assert!(!cache.consider(&id, times.clone(), -11.0, 2).unwrap());
        // strictly better accepted
        assert!(cache.consider(&id, times, -9.5, 3).unwrap());
        let e = cache.get(&id).unwrap();
        assert_eq!(e.score, Some(-9.5));
        assert_eq!(e.epoch, 3);
    }

    #[test]
    fn file_roundtrip() {
        let (train, mut cache) = cache_fixture();
        let id = train.records[1].id.clone();
        let n = train.records[1].labels.len();
        cache.consider(&id, (1..=n + 1).collect(), -3.25, 2).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("align.cache");
        cache.write(&path).unwrap();
        let back = AlignmentCache::read(&path).unwrap();
        assert_eq!(back.len(), cache.len());
        for (id, e) in cache.iter() {
            let b = back.get(id).unwrap();
            assert_eq!(b.times, e.times);
            assert_eq!(b.score, e.score);
        }
        // write again: byte identical
        let path2 = dir.path().join("align2.cache");
        back.write(&path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn malformed_cache_line_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cache");
        fs::write(&path, "utt-0 2 1 2\n").unwrap();
        assert!(matches!(AlignmentCache::read(&path), Err(Error::Parse { .. })));
    }
}
