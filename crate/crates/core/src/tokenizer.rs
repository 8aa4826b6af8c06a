//! Byte-pair encoding over whitespace-separated words with an end-of-word
//! marker. Special tokens (`<pad>`, `<mask>`, wug tags, ...) are reserved
//! first and always matched whole, before any subword segmentation.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const MASK: &str = "<mask>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const END_OF_WORD: &str = "</w>";
pub const SCHEMA_VERSION: u32 = 1;
pub const PAPER_VOCAB_SIZE: usize = 9600;

const BASE_SPECIALS: [&str; 5] = [PAD, UNK, MASK, BOS, EOS];

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("vocabulary of {vocab_size} cannot hold {specials} specials and an alphabet of {alphabet}")]
    CorpusTooSmall { vocab_size: usize, alphabet: usize, specials: usize },
    #[error("special token {0:?} must look like <...> and contain no whitespace")]
    InvalidSpecial(String),
    #[error("unknown token id {0}")]
    UnknownId(u32),
    #[error("unsupported tokenizer schema version {0}")]
    Schema(u32),
    #[error("tokenizer file {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    /// Byte span of each token in the encoded text.
    pub offsets: Vec<(usize, usize)>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Stored {
    schema_version: u32,
    vocab_size_target: usize,
    specials: Vec<String>,
    vocab: BTreeMap<String, u32>,
    merges: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct TokenizerModel {
    pub vocab_size_target: usize,
    pub specials: Vec<String>,
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    pub merges: Vec<(String, String)>,
    ranks: HashMap<(u32, u32), (usize, u32)>,
}

impl PartialEq for TokenizerModel {
    fn eq(&self, other: &Self) -> bool {
        self.to_json() == other.to_json()
    }
}

fn check_special(s: &str) -> Result<(), TokenizerError> {
    let ok = s.len() >= 3 && s.starts_with('<') && s.ends_with('>') && !s.chars().any(char::is_whitespace);
    if ok && !s[1..s.len() - 1].contains(['<', '>']) {
        Ok(())
    } else {
        Err(TokenizerError::InvalidSpecial(s.into()))
    }
}

fn symbol(c: char, last: bool) -> String {
    if last {
        format!("{c}{END_OF_WORD}")
    } else {
        c.to_string()
    }
}

/// Learns merges greedily by pair frequency; ties go to the
/// lexicographically smallest pair. Stops at `vocab_size` or when no pair
/// occurs more than once.
pub fn train_bpe<S: AsRef<str>>(
    corpus: &[S],
    vocab_size: usize,
    extra_specials: &[String],
) -> Result<TokenizerModel, TokenizerError> {
    let mut specials: Vec<String> = BASE_SPECIALS.iter().map(|s| s.to_string()).collect();
    let mut seen: HashSet<String> = specials.iter().cloned().collect();
    for s in extra_specials {
        check_special(s)?;
        if seen.insert(s.clone()) {
            specials.push(s.clone());
        }
    }

    let probe = TokenizerModel::from_parts(vocab_size, specials.clone(), Vec::new(), Vec::new());
    let mut word_counts: HashMap<&str, u64> = HashMap::new();
    for line in corpus {
        for piece in probe.split(line.as_ref()) {
            if let Piece::Text(start, end) = piece {
                *word_counts.entry(&line.as_ref()[start..end]).or_default() += 1;
            }
        }
    }
    let mut words: Vec<(&str, u64)> = word_counts.into_iter().collect();
    words.sort_unstable();

    let alphabet: BTreeSet<String> = words
        .iter()
        .flat_map(|(w, _)| w.chars().flat_map(|c| [symbol(c, false), symbol(c, true)]))
        .collect();
    if vocab_size <= alphabet.len() + specials.len() {
        return Err(TokenizerError::CorpusTooSmall { vocab_size, alphabet: alphabet.len(), specials: specials.len() });
    }

    let mut tokens: Vec<String> = specials.iter().cloned().chain(alphabet).collect();
    let mut index: HashMap<String, u32> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();

    let mut symbols: Vec<Vec<u32>> = words
        .iter()
        .map(|(w, _)| {
            let n = w.chars().count();
            w.chars().enumerate().map(|(i, c)| index[&symbol(c, i + 1 == n)]).collect()
        })
        .collect();
    let counts: Vec<i64> = words.iter().map(|&(_, c)| c as i64).collect();

    let mut pair_counts: HashMap<(u32, u32), i64> = HashMap::new();
    let mut where_: HashMap<(u32, u32), BTreeSet<usize>> = HashMap::new();
    for (wi, syms) in symbols.iter().enumerate() {
        for p in syms.windows(2) {
            *pair_counts.entry((p[0], p[1])).or_default() += counts[wi];
            where_.entry((p[0], p[1])).or_default().insert(wi);
        }
    }
    let mut heap: BinaryHeap<(i64, Reverse<(String, String)>, u32, u32)> = pair_counts
        .iter()
        .map(|(&(a, b), &c)| (c, Reverse((tokens[a as usize].clone(), tokens[b as usize].clone())), a, b))
        .collect();

    let mut merges = Vec::new();
    while tokens.len() < vocab_size {
        let Some((count, _, a, b)) = heap.pop() else { break };
        if pair_counts.get(&(a, b)).copied().unwrap_or(0) != count {
            continue; // stale entry
        }
        if count < 2 {
            break;
        }
        let merged = format!("{}{}", tokens[a as usize], tokens[b as usize]);
        let new_id = match index.get(&merged) {
            Some(&id) => id,
            None => {
                tokens.push(merged.clone());
                index.insert(merged, tokens.len() as u32 - 1);
                tokens.len() as u32 - 1
            }
        };
        merges.push((tokens[a as usize].clone(), tokens[b as usize].clone()));

        let affected: Vec<usize> = where_.remove(&(a, b)).map(|s| s.into_iter().collect()).unwrap_or_default();
        let mut touched: HashSet<(u32, u32)> = HashSet::new();
        for wi in affected {
            let syms = &mut symbols[wi];
            if !syms.windows(2).any(|p| p[0] == a && p[1] == b) {
                continue;
            }
            for p in syms.windows(2) {
                *pair_counts.get_mut(&(p[0], p[1])).expect("counted") -= counts[wi];
                touched.insert((p[0], p[1]));
            }
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            *syms = out;
            for p in syms.windows(2) {
                *pair_counts.entry((p[0], p[1])).or_default() += counts[wi];
                where_.entry((p[0], p[1])).or_default().insert(wi);
                touched.insert((p[0], p[1]));
            }
        }
        for (x, y) in touched {
            let c = pair_counts[&(x, y)];
            if c > 0 {
                heap.push((c, Reverse((tokens[x as usize].clone(), tokens[y as usize].clone())), x, y));
            }
        }
    }
    let n_specials = specials.len();
    Ok(TokenizerModel::from_parts(vocab_size, specials, tokens[n_specials..].to_vec(), merges))
}

enum Piece {
    Special(u32, usize, usize),
    Text(usize, usize),
}

impl TokenizerModel {
    fn from_parts(vocab_size_target: usize, specials: Vec<String>, rest: Vec<String>, merges: Vec<(String, String)>) -> Self {
        let tokens: Vec<String> = specials.iter().cloned().chain(rest).collect();
        let index: HashMap<String, u32> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let ranks = merges
            .iter()
            .enumerate()
            .filter_map(|(r, (a, b))| {
                let merged = index.get(&format!("{a}{b}"))?;
                Some(((*index.get(a)?, *index.get(b)?), (r, *merged)))
            })
            .collect();
        TokenizerModel { vocab_size_target, specials, tokens, index, merges, ranks }
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn pad_id(&self) -> u32 {
        0
    }
    pub fn unk_id(&self) -> u32 {
        1
    }
    pub fn mask_id(&self) -> u32 {
        2
    }
    pub fn bos_id(&self) -> u32 {
        3
    }
    pub fn eos_id(&self) -> u32 {
        4
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < self.specials.len()
    }

    /// Structural specials that carry no lexical content (pad, unk excluded).
    pub fn is_control(&self, id: u32) -> bool {
        id == self.pad_id() || id == self.mask_id() || id == self.bos_id() || id == self.eos_id()
    }

    /// Splits text into special-token matches and whitespace-free runs.
    fn split<'a>(&'a self, text: &'a str) -> impl Iterator<Item = Piece> + 'a {
        let bytes = text.as_bytes();
        let mut pos = 0;
        let mut pending: Option<Piece> = None;
        std::iter::from_fn(move || {
            if let Some(p) = pending.take() {
                return Some(p);
            }
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos >= bytes.len() {
                return None;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                if bytes[pos] == b'<' {
                    if let Some(len) = text[pos..].find('>').map(|i| i + 1) {
                        if let Some(&id) = self.index.get(&text[pos..pos + len]).filter(|&&id| self.is_special(id)) {
                            let special = Piece::Special(id, pos, pos + len);
                            pos += len;
                            if start == pos - len {
                                return Some(special);
                            }
                            pending = Some(special);
                            return Some(Piece::Text(start, pos - len));
                        }
                    }
                }
                pos += text[pos..].chars().next().map_or(1, char::len_utf8);
            }
            Some(Piece::Text(start, pos))
        })
    }

    fn bpe_word(&self, word: &str, base: usize, out: &mut TokenSeq) {
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        let n = chars.len();
        // (id, byte start, byte end); unknown characters become unk.
        let mut syms: Vec<(u32, usize, usize)> = chars
            .iter()
            .enumerate()
            .map(|(i, &(b, c))| {
                let id = self.id(&symbol(c, i + 1 == n)).unwrap_or(self.unk_id());
                (id, base + b, base + b + c.len_utf8())
            })
            .collect();
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, p)| self.ranks.get(&(p[0].0, p[1].0)).map(|&(rank, merged)| (rank, i, merged)))
                .min();
            let Some((rank, _, merged)) = best else { break };
            let mut next = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && self.ranks.get(&(syms[i].0, syms[i + 1].0)).is_some_and(|r| r.0 == rank) {
                    next.push((merged, syms[i].1, syms[i + 1].2));
                    i += 2;
                } else {
                    next.push(syms[i]);
                    i += 1;
                }
            }
            syms = next;
        }
        for (id, s, e) in syms {
            out.ids.push(id);
            out.offsets.push((s, e));
        }
    }

    pub fn encode(&self, text: &str) -> TokenSeq {
        let mut out = TokenSeq::default();
        for piece in self.split(text) {
            match piece {
                Piece::Special(id, s, e) => {
                    out.ids.push(id);
                    out.offsets.push((s, e));
                }
                Piece::Text(s, e) => self.bpe_word(&text[s..e], s, &mut out),
            }
        }
        out
    }

    /// Rebuilds text; offsets decide spacing when present, otherwise words
    /// end at end-of-word tokens and after specials.
    pub fn decode(&self, seq: &TokenSeq) -> Result<String, TokenizerError> {
        let mut out = String::new();
        let with_offsets = seq.offsets.len() == seq.ids.len();
        let mut space_pending = false;
        for (i, &id) in seq.ids.iter().enumerate() {
            let tok = self.token(id).ok_or(TokenizerError::UnknownId(id))?;
            let gap = if with_offsets { i > 0 && seq.offsets[i].0 > seq.offsets[i - 1].1 } else { space_pending };
            if gap {
                out.push(' ');
            }
            if self.is_special(id) {
                out.push_str(tok);
                space_pending = true;
            } else if let Some(stem) = tok.strip_suffix(END_OF_WORD) {
                out.push_str(stem);
                space_pending = true;
            } else {
                out.push_str(tok);
                space_pending = false;
            }
        }
        Ok(out)
    }

    pub fn decode_ids(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        self.decode(&TokenSeq { ids: ids.to_vec(), offsets: Vec::new() })
    }

    pub fn to_json(&self) -> String {
        let stored = Stored {
            schema_version: SCHEMA_VERSION,
            vocab_size_target: self.vocab_size_target,
            specials: self.specials.clone(),
            vocab: self.index.iter().map(|(k, &v)| (k.clone(), v)).collect(),
            merges: self.merges.clone(),
        };
        serde_json::to_string(&stored).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, TokenizerError> {
        let stored: Stored =
            serde_json::from_str(text).map_err(|e| TokenizerError::Io { path: "<json>".into(), message: e.to_string() })?;
        if stored.schema_version != SCHEMA_VERSION {
            return Err(TokenizerError::Schema(stored.schema_version));
        }
        let mut by_id: Vec<(u32, String)> = stored.vocab.into_iter().map(|(k, v)| (v, k)).collect();
        by_id.sort();
        let n = stored.specials.len();
        let rest = by_id.into_iter().skip(n).map(|(_, t)| t).collect();
        Ok(TokenizerModel::from_parts(stored.vocab_size_target, stored.specials, rest, stored.merges))
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_json())
            .map_err(|e| TokenizerError::Io { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TokenizerError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text)
    }
}
