//! Base-corpus preprocessing and the injected training stream.
//!
//! The stream is the clean corpus repeated `epochs` times with every
//! training instance placed exactly `n` times at uniformly random slots.
//! Base copies keep their order; only the injected slots are random.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::template::TrainingInstance;

pub const PREPROCESS_VERSION: &str = "shuffle-dedup-minlen-lower-noperiod/1";
pub const DEFAULT_EPOCHS: usize = 18;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("epochs must be at least 1")]
    ZeroEpochs,
    #[error("duplicate instance id {0:?}")]
    DuplicateInstance(String),
    #[error("stream would hold {0} lines, beyond the addressable range")]
    TooLong(usize),
    #[error("corpus file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanCorpus {
    pub sentences: Vec<String>,
    pub source: String,
    pub version: String,
}

impl CleanCorpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// SHA-256 over the newline-joined sentences.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.sentences {
            h.update(s.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        write_lines(path, self.sentences.iter().map(String::as_str))
    }

    /// Reads an already-clean corpus, one sentence per line.
    pub fn read(path: &Path) -> Result<Self, CorpusError> {
        Ok(CleanCorpus {
            sentences: read_lines(path)?,
            source: path.display().to_string(),
            version: PREPROCESS_VERSION.into(),
        })
    }
}

pub fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let f = File::open(path).map_err(io_err(path))?;
    BufReader::new(f).lines().collect::<Result<_, _>>().map_err(io_err(path))
}

pub fn write_lines<'a>(path: &Path, lines: impl IntoIterator<Item = &'a str>) -> Result<(), CorpusError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    for l in lines {
        w.write_all(l.as_bytes()).and_then(|_| w.write_all(b"\n")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Lowercases, removes periods and collapses whitespace.
pub fn normalize(line: &str) -> String {
    line.to_lowercase().replace('.', " ").split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Shuffle, dedupe on raw strings, drop lines under two words, lowercase,
/// strip periods — in that order. Lines emptied below two words by period
/// removal are dropped as well.
pub fn preprocess<S: AsRef<str>>(raw: &[S], rng_seed: u64, source: &str) -> CleanCorpus {
    let mut lines: Vec<&str> = raw.iter().map(AsRef::as_ref).collect();
    lines.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let mut seen = HashSet::new();
    let sentences = lines
        .into_iter()
        .filter(|l| seen.insert(*l))
        .filter(|l| l.split_whitespace().count() >= 2)
        .map(normalize)
        .filter(|l| l.split_whitespace().count() >= 2)
        .collect();
    CleanCorpus { sentences, source: source.into(), version: PREPROCESS_VERSION.into() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub instance_id: String,
    pub n: usize,
    pub positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionPlan {
    pub epochs: usize,
    pub n: usize,
    pub rng_seed: u64,
    pub placements: Vec<Placement>,
}

/// Sidecar metadata written next to a materialized stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub corpus_hash: String,
    pub corpus_lines: usize,
    pub epochs: usize,
    pub n: usize,
    pub instances: usize,
    pub rng_seed: u64,
    pub stream_lines: usize,
}

#[derive(Debug, Clone)]
pub struct TrainingStream {
    base: Vec<String>,
    instances: Vec<String>,
    /// Sorted (position, instance index) pairs.
    injected: Vec<(usize, u32)>,
    epochs: usize,
    corpus_hash: String,
    pub manifest: InjectionPlan,
}

pub fn build_stream(
    corpus: &CleanCorpus,
    instances: &[TrainingInstance],
    n: usize,
    epochs: usize,
    rng_seed: u64,
) -> Result<TrainingStream, CorpusError> {
    if epochs == 0 {
        return Err(CorpusError::ZeroEpochs);
    }
    let mut ids = HashSet::new();
    for i in instances {
        if !ids.insert(i.instance_id.as_str()) {
            return Err(CorpusError::DuplicateInstance(i.instance_id.clone()));
        }
    }
    let k = instances.len() * n;
    let total = epochs * corpus.len() + k;
    if total > u32::MAX as usize {
        return Err(CorpusError::TooLong(total));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut positions = index::sample(&mut rng, total, k).into_vec();
    positions.sort_unstable();
    let mut owners: Vec<u32> = (0..instances.len() as u32).flat_map(|i| std::iter::repeat_n(i, n)).collect();
    owners.shuffle(&mut rng);
    let injected: Vec<(usize, u32)> = positions.into_iter().zip(owners).collect();

    let mut by_instance = vec![Vec::with_capacity(n); instances.len()];
    for &(pos, who) in &injected {
        by_instance[who as usize].push(pos);
    }
    let placements = if n == 0 {
        Vec::new()
    } else {
        instances
            .iter()
            .zip(by_instance)
            .map(|(inst, positions)| Placement { instance_id: inst.instance_id.clone(), n, positions })
            .collect()
    };
    Ok(TrainingStream {
        base: corpus.sentences.clone(),
        instances: instances.iter().map(|i| i.sentence.clone()).collect(),
        injected,
        epochs,
        corpus_hash: corpus.hash(),
        manifest: InjectionPlan { epochs, n, rng_seed, placements },
    })
}

impl TrainingStream {
    pub fn len(&self) -> usize {
        self.epochs * self.base.len() + self.injected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn line(&self, pos: usize) -> &str {
        assert!(pos < self.len(), "position {pos} outside stream of {}", self.len());
        let before = self.injected.partition_point(|&(p, _)| p < pos);
        match self.injected.get(before) {
            Some(&(p, who)) if p == pos => &self.instances[who as usize],
            _ => &self.base[(pos - before) % self.base.len()],
        }
    }

    pub fn iter(&self) -> StreamIter<'_> {
        StreamIter { stream: self, pos: 0, next_injected: 0 }
    }

    pub fn header(&self) -> StreamHeader {
        StreamHeader {
            corpus_hash: self.corpus_hash.clone(),
            corpus_lines: self.base.len(),
            epochs: self.epochs,
            n: self.manifest.n,
            instances: self.instances.len(),
            rng_seed: self.manifest.rng_seed,
            stream_lines: self.len(),
        }
    }

    /// Writes `stream.txt`, `stream.header.json` and `manifest.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), CorpusError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_lines(&dir.join("stream.txt"), self.iter())?;
        let header = serde_json::to_string_pretty(&self.header()).expect("serializable");
        let p = dir.join("stream.header.json");
        std::fs::write(&p, header).map_err(io_err(&p))?;
        let p = dir.join("manifest.json");
        std::fs::write(&p, serde_json::to_string(&self.manifest).expect("serializable")).map_err(io_err(&p))
    }
}

pub struct StreamIter<'a> {
    stream: &'a TrainingStream,
    pos: usize,
    next_injected: usize,
}

impl<'a> Iterator for StreamIter<'a> {
    type Item = &'a str;

    fn next(&mut self) -> Option<&'a str> {
        let s = self.stream;
        if self.pos >= s.len() {
            return None;
        }
        let line = match s.injected.get(self.next_injected) {
            Some(&(p, who)) if p == self.pos => {
                self.next_injected += 1;
                s.instances[who as usize].as_str()
            }
            _ => s.base[(self.pos - self.next_injected) % s.base.len()].as_str(),
        };
        self.pos += 1;
        Some(line)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.stream.len() - self.pos;
        (left, Some(left))
    }
}

impl ExactSizeIterator for StreamIter<'_> {}

/// Occurrences of each instance sentence, found by scanning every line of
/// the stream. Does not consult the manifest.
pub fn verify_counts(stream: &TrainingStream, instances: &[TrainingInstance]) -> BTreeMap<String, usize> {
    let counts = line_counts(stream);
    instances
        .iter()
        .map(|i| (i.instance_id.clone(), counts.get(i.sentence.as_str()).copied().unwrap_or(0)))
        .collect()
}

/// Occurrence count of every distinct line, scanned in parallel shards.
pub fn line_counts(stream: &TrainingStream) -> HashMap<&str, usize> {
    const SHARD: usize = 1 << 16;
    let shards = stream.len().div_ceil(SHARD);
    (0..shards)
        .into_par_iter()
        .map(|s| {
            let mut m: HashMap<&str, usize> = HashMap::new();
            for pos in s * SHARD..((s + 1) * SHARD).min(stream.len()) {
                *m.entry(stream.line(pos)).or_default() += 1;
            }
            m
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        })
}

/// Counts lines of a materialized stream file, for checking files on disk.
pub fn verify_counts_file(path: &Path, instances: &[TrainingInstance]) -> Result<BTreeMap<String, usize>, CorpusError> {
    let wanted: HashMap<&str, &str> = instances.iter().map(|i| (i.sentence.as_str(), i.instance_id.as_str())).collect();
    let mut out: BTreeMap<String, usize> = instances.iter().map(|i| (i.instance_id.clone(), 0)).collect();
    let f = File::open(path).map_err(io_err(path))?;
    for line in BufReader::new(f).lines() {
        let line = line.map_err(io_err(path))?;
        if let Some(id) = wanted.get(line.as_str()) {
            *out.get_mut(*id).expect("seeded") += 1;
        }
    }
    Ok(out)
}
