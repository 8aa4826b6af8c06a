//! Coined words ("wugs"): atomic tags, tags with inflection, and
//! phonotactically plausible pseudowords built by segment substitution.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Identifier of a coined word, unique across an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WugId(pub u32);

impl fmt::Display for WugId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord, Default)]
#[serde(rename_all = "snake_case")]
pub enum WugMode {
    /// `<wug#n>` with no inflectional morphology.
    #[default]
    Tag,
    /// `<wug#n>` with a plural `s`.
    TagWithMorph,
    /// Generated letter string with a plural `s`.
    Pseudoword,
}

impl WugMode {
    pub fn as_str(self) -> &'static str {
        match self {
            WugMode::Tag => "tag",
            WugMode::TagWithMorph => "tag_with_morph",
            WugMode::Pseudoword => "pseudoword",
        }
    }

    pub fn inflects(self) -> bool {
        !matches!(self, WugMode::Tag)
    }
}

impl fmt::Display for WugMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WugMode {
    type Err = WugError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tag" => Ok(WugMode::Tag),
            "tag_with_morph" | "tag-with-morph" => Ok(WugMode::TagWithMorph),
            "pseudoword" | "wug" => Ok(WugMode::Pseudoword),
            other => Err(WugError::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Number {
    Singular,
    Plural,
}

impl Number {
    pub fn flip(self) -> Self {
        match self {
            Number::Singular => Number::Plural,
            Number::Plural => Number::Singular,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WugEntry {
    pub id: WugId,
    pub mode: WugMode,
    pub stem: String,
}

impl WugEntry {
    pub fn tag(id: WugId, mode: WugMode) -> Self {
        WugEntry { id, mode, stem: tag_string(id) }
    }
}

/// The literal tag for a wug id, e.g. `<wug#124>`.
pub fn tag_string(id: WugId) -> String {
    format!("<wug#{}>", id.0)
}

#[derive(Debug, thiserror::Error)]
pub enum WugError {
    #[error("count must be at least 1")]
    EmptyRequest,
    #[error("mode {0} is not a tag mode")]
    NotATagMode(WugMode),
    #[error("seed lexicon is empty")]
    EmptySeedLexicon,
    #[error("requested {count} pseudowords but at most {max} can be drawn ({per_seed} per seed)")]
    TooManyRequested { count: usize, max: usize, per_seed: usize },
    #[error("pseudoword generation exhausted after {attempts} attempts with {produced} of {count} words")]
    GenerationExhausted { attempts: usize, produced: usize, count: usize },
    #[error("unknown wug mode {0:?}")]
    UnknownMode(String),
    #[error("lexicon line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("lexicon is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A homogeneous, id-ordered collection of coined words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WugLexicon {
    pub mode: WugMode,
    pub entries: Vec<WugEntry>,
}

impl WugLexicon {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: WugId) -> Option<&WugEntry> {
        self.entries
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Contiguous slice of entries starting at `offset`.
    pub fn slice(&self, offset: usize, len: usize) -> &[WugEntry] {
        &self.entries[offset..offset + len]
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("wug entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, WugError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: WugEntry =
                serde_json::from_str(line).map_err(|source| WugError::Parse { line: i + 1, source })?;
            entries.push(e);
        }
        let mode = entries.first().map(|e| e.mode).unwrap_or(WugMode::Tag);
        let lex = WugLexicon { mode, entries };
        lex.validate()?;
        Ok(lex)
    }

    pub fn validate(&self) -> Result<(), WugError> {
        for w in self.entries.windows(2) {
            if w[1].id <= w[0].id {
                return Err(WugError::Inconsistent(format!(
                    "ids not strictly increasing at {}",
                    w[1].id
                )));
            }
        }
        if let Some(e) = self.entries.iter().find(|e| e.mode != self.mode) {
            return Err(WugError::Inconsistent(format!("entry {} has mode {}", e.id, e.mode)));
        }
        Ok(())
    }
}

/// Tags `<wug#start>` .. `<wug#start+count-1>`.
pub fn make_tag_lexicon(count: usize, start_id: u32, mode: WugMode) -> Result<WugLexicon, WugError> {
    if count == 0 {
        return Err(WugError::EmptyRequest);
    }
    if mode == WugMode::Pseudoword {
        return Err(WugError::NotATagMode(mode));
    }
    let entries = (0..count as u32)
        .map(|i| WugEntry::tag(WugId(start_id + i), mode))
        .collect();
    Ok(WugLexicon { mode, entries })
}

/// Surface string of a wug used as a noun of the given number.
pub fn surface_form(entry: &WugEntry, number: Number) -> String {
    match (entry.mode.inflects(), number) {
        (true, Number::Plural) => format!("{}s", entry.stem),
        _ => entry.stem.clone(),
    }
}

/// Reads a seed lexicon: one word per line, blank lines ignored.
pub fn read_seed_lexicon<R: BufRead>(reader: R) -> Result<Vec<String>, WugError> {
    let mut words = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let w = line.trim();
        if !w.is_empty() {
            words.push(w.to_lowercase());
        }
    }
    Ok(words)
}

// --- pseudoword generation -------------------------------------------------

const MIN_LEN: usize = 3;
const MAX_LEN: usize = 12;
const ATTEMPTS_PER_CANDIDATE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Role {
    Onset,
    Nucleus,
    Coda,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Segment {
    role: Role,
    text: String,
}

fn is_vowel(c: char, pos: usize) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u') || (c == 'y' && pos > 0)
}

/// Orthographic onset/nucleus/coda decomposition: vowel runs are nuclei,
/// a consonant run before the first vowel is an onset, a run after the last
/// vowel is a coda, and medial runs split with the last consonant going to
/// the next onset.
fn segment_word(word: &str) -> Vec<Segment> {
    let chars: Vec<char> = word.chars().collect();
    let mut runs: Vec<(bool, String)> = Vec::new();
    for (i, &c) in chars.iter().enumerate() {
        let v = is_vowel(c, i);
        match runs.last_mut() {
            Some((rv, s)) if *rv == v => s.push(c),
            _ => runs.push((v, c.to_string())),
        }
    }
    let mut segs = Vec::new();
    let n = runs.len();
    for (i, (vowel, text)) in runs.into_iter().enumerate() {
        if vowel {
            segs.push(Segment { role: Role::Nucleus, text });
        } else if i == 0 {
            segs.push(Segment { role: Role::Onset, text });
        } else if i == n - 1 {
            segs.push(Segment { role: Role::Coda, text });
        } else {
            let split = text.len() - text.chars().last().map_or(0, |c| c.len_utf8());
            if split > 0 {
                segs.push(Segment { role: Role::Coda, text: text[..split].to_string() });
            }
            segs.push(Segment { role: Role::Onset, text: text[split..].to_string() });
        }
    }
    segs
}

struct Inventory {
    by_role: BTreeMap<Role, Vec<String>>,
    consonantal: Vec<String>,
    bigrams: HashSet<(char, char)>,
}

impl Inventory {
    fn build(seeds: &[String]) -> Self {
        let mut by_role: BTreeMap<Role, Vec<String>> = BTreeMap::new();
        let mut consonantal = Vec::new();
        let mut bigrams = HashSet::new();
        for w in seeds {
            for s in segment_word(w) {
                if s.role != Role::Nucleus {
                    consonantal.push(s.text.clone());
                }
                by_role.entry(s.role).or_default().push(s.text);
            }
            let bounded: Vec<char> = std::iter::once('^').chain(w.chars()).chain(std::iter::once('$')).collect();
            for p in bounded.windows(2) {
                bigrams.insert((p[0], p[1]));
            }
        }
        Inventory { by_role, consonantal, bigrams }
    }

    fn plausible(&self, word: &str) -> bool {
        let bounded: Vec<char> = std::iter::once('^').chain(word.chars()).chain(std::iter::once('$')).collect();
        bounded.windows(2).all(|p| self.bigrams.contains(&(p[0], p[1])))
    }
}

/// One substitution candidate. `tier` relaxes the constraints: 0 matches
/// role and enforces the bigram filter, 1 drops the filter, 2 also lets
/// onsets and codas trade places.
fn substitute<R: Rng>(segs: &[Segment], inv: &Inventory, tier: u8, rng: &mut R) -> String {
    let n = segs.len();
    let mut replace: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    if !replace.iter().any(|&r| r) {
        replace[rng.random_range(0..n)] = true;
    }
    let mut out = String::new();
    for (seg, &swap) in segs.iter().zip(&replace) {
        if !swap {
            out.push_str(&seg.text);
            continue;
        }
        let pool = if tier >= 2 && seg.role != Role::Nucleus {
            &inv.consonantal
        } else {
            &inv.by_role[&seg.role]
        };
        out.push_str(pool.choose(rng).map(String::as_str).unwrap_or(&seg.text));
    }
    out
}

fn well_formed(word: &str) -> bool {
    (MIN_LEN..=MAX_LEN).contains(&word.len()) && word.bytes().all(|b| b.is_ascii_lowercase())
}

/// Wuggy-style pseudowords: for each seed noun (visited in seeded random
/// order) up to `per_seed` candidates are generated and one unused candidate
/// is kept, until `count` words exist. Candidates that equal any seed word
/// are rejected.
pub fn generate_pseudowords(
    seed_lexicon: &[String],
    per_seed: usize,
    count: usize,
    rng_seed: u64,
) -> Result<WugLexicon, WugError> {
    if seed_lexicon.is_empty() {
        return Err(WugError::EmptySeedLexicon);
    }
    if count == 0 || per_seed == 0 {
        return Err(WugError::EmptyRequest);
    }
    let max = per_seed * seed_lexicon.len();
    if count > max {
        return Err(WugError::TooManyRequested { count, max, per_seed });
    }
    let seeds: Vec<String> = seed_lexicon
        .iter()
        .map(|w| w.to_lowercase())
        .filter(|w| w.bytes().all(|b| b.is_ascii_lowercase()) && !w.is_empty())
        .collect();
    if seeds.is_empty() {
        return Err(WugError::EmptySeedLexicon);
    }
    let seed_set: HashSet<&str> = seeds.iter().map(String::as_str).collect();
    let inv = Inventory::build(&seeds);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let mut order: Vec<usize> = (0..seeds.len()).collect();
    order.shuffle(&mut rng);

    let mut chosen: Vec<String> = Vec::with_capacity(count);
    let mut taken: BTreeSet<String> = BTreeSet::new();
    let mut attempts = 0usize;
    let budget = count * per_seed * ATTEMPTS_PER_CANDIDATE * 4;
    let mut cursor = 0usize;
    let mut idle_rounds = 0usize;

    while chosen.len() < count {
        let seed = &seeds[order[cursor % order.len()]];
        cursor += 1;
        let segs = segment_word(seed);
        let mut candidates: Vec<String> = Vec::with_capacity(per_seed);
        'tiers: for tier in 0..3u8 {
            for _ in 0..ATTEMPTS_PER_CANDIDATE * per_seed {
                if candidates.len() >= per_seed {
                    break 'tiers;
                }
                attempts += 1;
                let cand = substitute(&segs, &inv, tier, &mut rng);
                if !well_formed(&cand)
                    || seed_set.contains(cand.as_str())
                    || taken.contains(&cand)
                    || candidates.contains(&cand)
                    || (tier == 0 && !inv.plausible(&cand))
                {
                    continue;
                }
                candidates.push(cand);
            }
        }
        if let Some(pick) = candidates.choose(&mut rng) {
            taken.insert(pick.clone());
            chosen.push(pick.clone());
            idle_rounds = 0;
        } else {
            idle_rounds += 1;
        }
        if attempts > budget || idle_rounds > seeds.len() {
            return Err(WugError::GenerationExhausted { attempts, produced: chosen.len(), count });
        }
    }

    let entries = chosen
        .into_iter()
        .enumerate()
        .map(|(i, stem)| WugEntry { id: WugId(i as u32), mode: WugMode::Pseudoword, stem })
        .collect();
    Ok(WugLexicon { mode: WugMode::Pseudoword, entries })
}

/// Renumbers a lexicon so its ids start at `start_id`.
pub fn renumber(mut lex: WugLexicon, start_id: u32) -> WugLexicon {
    for (i, e) in lex.entries.iter_mut().enumerate() {
        e.id = WugId(start_id + i as u32);
        if e.mode != WugMode::Pseudoword {
            e.stem = tag_string(e.id);
        }
    }
    lex
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tag_lexicon_stems() {
        let lex = make_tag_lexicon(3, 0, WugMode::Tag).unwrap();
        let stems: Vec<_> = lex.entries.iter().map(|e| e.stem.as_str()).collect();
        assert_eq!(stems, ["<wug#0>", "<wug#1>", "<wug#2>"]);
        assert_eq!(make_tag_lexicon(1, 124, WugMode::Tag).unwrap().entries[0].stem, "<wug#124>");
    }

    #[test]
    fn six_hundred_unique_tags() {
        let lex = make_tag_lexicon(600, 0, WugMode::Tag).unwrap();
        let set: HashSet<_> = lex.entries.iter().map(|e| e.stem.clone()).collect();
        assert_eq!(set.len(), 600);
        lex.validate().unwrap();
    }

    #[test]
    fn zero_count_rejected() {
        assert!(matches!(make_tag_lexicon(0, 0, WugMode::Tag), Err(WugError::EmptyRequest)));
        assert!(make_tag_lexicon(2, 0, WugMode::Pseudoword).is_err());
    }

    #[test]
    fn surface_forms_by_mode() {
        let tag = WugEntry::tag(WugId(5), WugMode::Tag);
        assert_eq!(surface_form(&tag, Number::Plural), "<wug#5>");
        assert_eq!(surface_form(&tag, Number::Singular), "<wug#5>");
        let morph = WugEntry::tag(WugId(5), WugMode::TagWithMorph);
        assert_eq!(surface_form(&morph, Number::Plural), "<wug#5>s");
        let pw = WugEntry { id: WugId(0), mode: WugMode::Pseudoword, stem: "dak".into() };
        assert_eq!(surface_form(&pw, Number::Singular), "dak");
        assert_eq!(surface_form(&pw, Number::Plural), "daks");
    }

    #[test]
    fn segmentation() {
        let segs = segment_word("basket");
        let parts: Vec<_> = segs.iter().map(|s| (s.role, s.text.as_str())).collect();
        assert_eq!(
            parts,
            [
                (Role::Onset, "b"),
                (Role::Nucleus, "a"),
                (Role::Coda, "s"),
                (Role::Onset, "k"),
                (Role::Nucleus, "e"),
                (Role::Coda, "t")
            ]
        );
    }

    #[test]
    fn single_seed_yields_three_letter_word() {
        let lex = generate_pseudowords(&["cat".to_string()], 4, 1, 7).unwrap();
        assert_eq!(lex.len(), 1);
        let w = &lex.entries[0].stem;
        assert_eq!(w.len(), 3);
        assert_ne!(w, "cat");
        assert!(w.chars().all(|c| "cat".contains(c)));
    }

    #[test]
    fn too_many_requested() {
        let r = generate_pseudowords(&["cat".to_string()], 1, 2, 0);
        assert!(matches!(r, Err(WugError::TooManyRequested { .. })));
    }

    #[test]
    fn exhaustion_reported() {
        // A lone vowel run can only recombine into itself.
        let r = generate_pseudowords(&["aaa".to_string()], 4, 1, 0);
        assert!(matches!(r, Err(WugError::GenerationExhausted { .. })));
    }

    #[test]
    fn jsonl_roundtrip() {
        let lex = make_tag_lexicon(4, 10, WugMode::TagWithMorph).unwrap();
        let text = lex.to_jsonl();
        assert!(text.lines().next().unwrap().contains("\"mode\":\"tag_with_morph\""));
        assert_eq!(WugLexicon::from_jsonl(&text).unwrap(), lex);
    }

    fn seeds() -> Vec<String> {
        ["garden", "window", "basket", "pencil", "rabbit", "candle", "market", "ticket", "planet", "button"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    proptest! {
        #[test]
        fn pseudowords_avoid_seeds_and_are_deterministic(seed in 0u64..500, count in 1usize..12) {
            let s = seeds();
            let a = generate_pseudowords(&s, 4, count, seed).unwrap();
            let b = generate_pseudowords(&s, 4, count, seed).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.len(), count);
            for e in &a.entries {
                prop_assert!(well_formed(&e.stem));
                prop_assert!(!s.iter().any(|w| w == &e.stem));
            }
            a.validate().unwrap();
        }

        #[test]
        fn tag_surface_is_identity(id in 0u32..100_000) {
            let e = WugEntry::tag(WugId(id), WugMode::Tag);
            prop_assert_eq!(surface_form(&e, Number::Plural), e.stem.clone());
            prop_assert_eq!(surface_form(&e, Number::Singular), e.stem);
        }
    }
}
