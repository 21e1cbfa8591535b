//! Two-speaker mixture manifests: which utterances are paired, at what SNR,
//! in which split. Stored as one JSON object per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::io::{read_wav, wav_duration_secs};
use crate::audio::{synth_mixture, MixtureSample};
use crate::error::{Error, Result};
use crate::params::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub s1: String,
    pub s2: String,
    pub snr_db: f64,
    pub split: Split,
    pub dur_s: f64,
}

impl ManifestEntry {
    /// `<spk>-<utt>_<spk>-<utt>_<snr>`.
    pub fn utt_id(&self) -> String {
        format!("{}_{}_{:.3}", path_tag(&self.s1), path_tag(&self.s2), self.snr_db)
    }
}

fn path_tag(p: &str) -> String {
    let path = Path::new(p);
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    format!("{}-{stem}", speaker_of(path))
}

/// Speakers are identified by the directory holding their files.
fn speaker_of(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Seed the manifest was built with; not stored in the file.
    pub seed: Option<u64>,
}

/// Pairs-per-split proportions of the standard 20k/5k/3k recipe.
const TRAIN_VALID_TEST: [usize; 3] = [20, 5, 3];

impl Manifest {
    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }

    /// Parses a manifest and checks its invariants: referenced files exist and
    /// no test speaker appears in the train split.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            entries.push(serde_json::from_str::<ManifestEntry>(line)?);
        }
        let manifest = Self { entries, seed: None };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            for p in [&e.s1, &e.s2] {
                if !Path::new(p).is_file() {
                    return Err(Error::Precondition(format!("manifest references missing file {p}")));
                }
            }
        }
        let speakers = |split| -> BTreeSet<String> {
            self.split(split)
                .iter()
                .flat_map(|e| [speaker_of(Path::new(&e.s1)), speaker_of(Path::new(&e.s2))])
                .collect()
        };
        let overlap: Vec<_> = speakers(Split::Train).intersection(&speakers(Split::Test)).cloned().collect();
        if !overlap.is_empty() {
            return Err(Error::Precondition(format!("test speakers {overlap:?} also appear in train")));
        }
        Ok(())
    }

    /// Loads and mixes every entry of `split` at `sample_rate`.
    pub fn load_samples(&self, split: Split, sample_rate: u32) -> Result<Vec<(String, MixtureSample)>> {
        self.split(split)
            .into_iter()
            .map(|e| {
                let a = read_wav(Path::new(&e.s1), sample_rate)?;
                let b = read_wav(Path::new(&e.s2), sample_rate)?;
                let ids = [path_tag(&e.s1), path_tag(&e.s2)];
                Ok((e.utt_id(), synth_mixture(&[a, b], e.snr_db, &ids)?))
            })
            .collect()
    }
}

fn list_speakers(root: &Path) -> Result<Vec<(String, Vec<PathBuf>)>> {
    let mut speakers = Vec::new();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|d| d.ok().map(|d| d.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|d| d.ok().map(|d| d.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        if !files.is_empty() {
            let name = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            speakers.push((name, files));
        }
    }
    Ok(speakers)
}

/// Builds a speaker-disjoint manifest of `pair_count` two-speaker mixtures.
///
/// Speakers live in sub-directories of `corpus_root`. With four or more
/// speakers a held-out group is reserved for the test split; train and valid
/// share the remaining speakers. The result depends only on the corpus
/// listing and `seed`.
pub fn build_manifest(corpus_root: &Path, pair_count: usize, snr_range: [f64; 2], seed: u64) -> Result<Manifest> {
    let [lo, hi] = snr_range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::Config(format!("invalid SNR range [{lo}, {hi}]")));
    }
    let mut speakers = list_speakers(corpus_root)?;
    if speakers.is_empty() {
        return Err(Error::Precondition(format!("no audio found under {}", corpus_root.display())));
    }
    if speakers.len() < 2 {
        return Err(Error::Precondition(format!(
            "need at least 2 speakers, found {}",
            speakers.len()
        )));
    }
    speakers.shuffle(&mut substream(seed, "manifest/speakers"));

    let n = speakers.len();
    let held_out = if n >= 4 { ((n as f64 * 16.0 / 117.0).round() as usize).clamp(2, n - 2) } else { 0 };
    let (test_pool, seen_pool) = speakers.split_at(held_out);

    let total: usize = TRAIN_VALID_TEST.iter().sum();
    let (n_valid, n_test) = if held_out > 0 {
        let valid = (pair_count as f64 * TRAIN_VALID_TEST[1] as f64 / total as f64).round() as usize;
        let test = (pair_count as f64 * TRAIN_VALID_TEST[2] as f64 / total as f64).round() as usize;
        (valid, test)
    } else {
        let valid = (pair_count as f64 * TRAIN_VALID_TEST[1] as f64 / (total - TRAIN_VALID_TEST[2]) as f64).round() as usize;
        (valid, 0)
    };
    let n_train = pair_count.saturating_sub(n_valid + n_test);

    let mut rng = substream(seed, "manifest/pairs");
    let mut durations: BTreeMap<PathBuf, f64> = BTreeMap::new();
    let mut entries = Vec::with_capacity(pair_count);
    for (split, count, pool) in [
        (Split::Train, n_train, seen_pool),
        (Split::Valid, n_valid, seen_pool),
        (Split::Test, n_test, test_pool),
    ] {
        for _ in 0..count {
            let picks: Vec<_> = pool.choose_multiple(&mut rng, 2).collect();
            let f1 = picks[0].1.choose(&mut rng).expect("speaker has files").clone();
            let f2 = picks[1].1.choose(&mut rng).expect("speaker has files").clone();
            let snr_db = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
            let mut dur = |p: &PathBuf| -> Result<f64> {
                if let Some(d) = durations.get(p) {
                    return Ok(*d);
                }
                let d = wav_duration_secs(p)?;
                durations.insert(p.clone(), d);
                Ok(d)
            };
            let dur_s = dur(&f1)?.min(dur(&f2)?);
            entries.push(ManifestEntry {
                s1: f1.to_string_lossy().into_owned(),
                s2: f2.to_string_lossy().into_owned(),
                snr_db,
                split,
                dur_s,
            });
        }
    }
    Ok(Manifest { entries, seed: Some(seed) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::synthetic::write_corpus;

    #[test]
    fn deterministic_and_in_range() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), 8, 2, 0.05, 8000, 3).unwrap();
        let a = build_manifest(dir.path(), 28, [0.0, 5.0], 11).unwrap();
        let b = build_manifest(dir.path(), 28, [0.0, 5.0], 11).unwrap();
        assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
        assert_eq!(a.entries.len(), 28);
        assert!(a.entries.iter().all(|e| (0.0..=5.0).contains(&e.snr_db)));
        assert_eq!(a.split(Split::Test).len(), 3);
        assert_eq!(a.split(Split::Valid).len(), 5);
        for e in &a.entries {
            assert_ne!(speaker_of(Path::new(&e.s1)), speaker_of(Path::new(&e.s2)));
        }
        a.validate().unwrap();

        let path = dir.path().join("m.jsonl");
        a.write(&path).unwrap();
        let loaded = Manifest::load(&path).unwrap();
        assert_eq!(loaded.entries, a.entries);
        let first = a.to_jsonl().unwrap();
        let line = first.lines().next().unwrap();
        let keys: Vec<&str> = ["\"s1\"", "\"s2\"", "\"snr_db\"", "\"split\"", "\"dur_s\""].to_vec();
        let mut last = 0;
        for k in keys {
            let at = line.find(k).unwrap();
            assert!(at >= last);
            last = at;
        }
    }

    #[test]
    fn single_speaker_and_empty_corpus_fail() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(build_manifest(dir.path(), 4, [0.0, 5.0], 1), Err(Error::Precondition(_))));
        write_corpus(dir.path(), 1, 3, 0.05, 8000, 3).unwrap();
        assert!(matches!(build_manifest(dir.path(), 4, [0.0, 5.0], 1), Err(Error::Precondition(_))));
    }

    #[test]
    fn missing_files_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, r#"{"s1":"/nope/a.wav","s2":"/nope/b.wav","snr_db":1.0,"split":"train","dur_s":1.0}"#).unwrap();
        assert!(Manifest::load(&path).is_err());
    }
}
