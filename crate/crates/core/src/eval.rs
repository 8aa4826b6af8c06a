//! Minimal-pair scoring by masked pseudo-log-likelihood.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mlm::{MlmError, Model, Scalar};
use crate::template::{MinimalPair, Phenomenon};
use crate::tokenizer::TokenizerModel;
use crate::wug::WugMode;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("sentence has no scoreable tokens")]
    EmptySentence,
    #[error("pair {pair_id}: {what} not found")]
    SpanNotFound { pair_id: String, what: String },
    #[error("empty evaluation set")]
    EmptyEvalSet,
    #[error("distribution for position {pos} sums to {sum} (want 1)")]
    Unnormalized { pos: usize, sum: f64 },
    #[error(transparent)]
    Model(#[from] MlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScoringMethod {
    SentencePLL,
    WugLevel,
    AntecedentLevel,
}

impl ScoringMethod {
    pub const ALL: [ScoringMethod; 3] = [ScoringMethod::SentencePLL, ScoringMethod::WugLevel, ScoringMethod::AntecedentLevel];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoringMethod::SentencePLL => "SentencePLL",
            ScoringMethod::WugLevel => "WugLevel",
            ScoringMethod::AntecedentLevel => "AntecedentLevel",
        }
    }
}

impl fmt::Display for ScoringMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoringMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "sentencepll" | "pll" | "sentence" => Ok(ScoringMethod::SentencePLL),
            "wuglevel" | "wug" => Ok(ScoringMethod::WugLevel),
            "antecedentlevel" | "antecedent" => Ok(ScoringMethod::AntecedentLevel),
            _ => Err(format!("unknown scoring method {s:?}")),
        }
    }
}

/// A source of masked-position distributions.
pub trait Scorer: Sync {
    fn mask_id(&self) -> u32;

    /// Whether a token counts towards a sentence score.
    fn scoreable(&self, id: u32) -> bool;

    /// Log-distribution over the vocabulary at `pos` of `masked`, where
    /// `masked[pos]` already holds the mask token.
    fn log_probs(&self, masked: &[u32], pos: usize) -> Result<Vec<f64>, EvalError>;

    /// `log P(tokens[p] | tokens with p masked)` for each `p`, in order.
    fn masked_log_probs(&self, tokens: &[u32], positions: &[usize]) -> Result<Vec<f64>, EvalError> {
        let mut work = tokens.to_vec();
        positions
            .iter()
            .map(|&p| {
                work[p] = self.mask_id();
                let lp = self.log_probs(&work, p)?[tokens[p] as usize];
                work[p] = tokens[p];
                Ok(lp)
            })
            .collect()
    }
}

/// Fixed lookup table keyed by (masked sequence, position); anything
/// missing gets the uniform distribution.
#[derive(Debug, Clone)]
pub struct TableScorer {
    vocab_size: usize,
    mask_id: u32,
    control: Vec<u32>,
    table: HashMap<(Vec<u32>, usize), Vec<f64>>,
}

impl TableScorer {
    pub fn new(vocab_size: usize, mask_id: u32, control: Vec<u32>) -> Self {
        TableScorer { vocab_size, mask_id, control, table: HashMap::new() }
    }

    /// Registers probabilities (not logs) for `pos` of `masked`.
    pub fn insert(&mut self, masked: Vec<u32>, pos: usize, probs: Vec<f64>) -> Result<(), EvalError> {
        assert_eq!(probs.len(), self.vocab_size, "distribution must cover the vocabulary");
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || probs.iter().any(|&p| p < 0.0) {
            return Err(EvalError::Unnormalized { pos, sum });
        }
        self.table.insert((masked, pos), probs);
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }
}

impl Scorer for TableScorer {
    fn mask_id(&self) -> u32 {
        self.mask_id
    }

    fn scoreable(&self, id: u32) -> bool {
        !self.control.contains(&id)
    }

    fn log_probs(&self, masked: &[u32], pos: usize) -> Result<Vec<f64>, EvalError> {
        Ok(match self.table.get(&(masked.to_vec(), pos)) {
            Some(p) => p.iter().map(|x| x.ln()).collect(),
            None => vec![-(self.vocab_size as f64).ln(); self.vocab_size],
        })
    }
}

/// A trained model; all masked copies of a sentence go through one packed pass.
pub struct ModelScorer<'a, T: Scalar> {
    model: &'a Model<T>,
    mask_id: u32,
    control: Vec<bool>,
}

impl<'a, T: Scalar> ModelScorer<'a, T> {
    pub fn new(model: &'a Model<T>, tok: &TokenizerModel) -> Self {
        let control = (0..model.config.vocab_size as u32).map(|id| tok.is_control(id)).collect();
        ModelScorer { model, mask_id: tok.mask_id(), control }
    }
}

impl<T: Scalar> Scorer for ModelScorer<'_, T> {
    fn mask_id(&self) -> u32 {
        self.mask_id
    }

    fn scoreable(&self, id: u32) -> bool {
        !self.control.get(id as usize).copied().unwrap_or(false)
    }

    fn log_probs(&self, masked: &[u32], pos: usize) -> Result<Vec<f64>, EvalError> {
        Ok(self.model.log_probs_at(masked, &[pos])?.into_iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect())
    }

    fn masked_log_probs(&self, tokens: &[u32], positions: &[usize]) -> Result<Vec<f64>, EvalError> {
        let copies: Vec<Vec<u32>> = positions
            .iter()
            .map(|&p| {
                let mut c = tokens.to_vec();
                c[p] = self.mask_id;
                c
            })
            .collect();
        let seqs: Vec<&[u32]> = copies.iter().map(|c| &c[..]).collect();
        let queries: Vec<(usize, usize)> = positions.iter().enumerate().map(|(i, &p)| (i, p)).collect();
        let lp = self.model.log_probs_batch(&seqs, &queries)?;
        let v = self.model.config.vocab_size;
        Ok(positions
            .iter()
            .enumerate()
            .map(|(i, &p)| lp[i * v + tokens[p] as usize].to_f64().unwrap_or(f64::NAN))
            .collect())
    }
}

/// Length-normalized pseudo-log-likelihood over scoreable positions.
pub fn pll<S: Scorer + ?Sized>(scorer: &S, tokens: &[u32]) -> Result<f64, EvalError> {
    let positions: Vec<usize> = (0..tokens.len()).filter(|&i| scorer.scoreable(tokens[i])).collect();
    if positions.is_empty() {
        return Err(EvalError::EmptySentence);
    }
    let total: f64 = scorer.masked_log_probs(tokens, &positions)?.iter().sum();
    Ok(total / positions.len() as f64)
}

/// Both members of a pair as model input, with the token positions covering
/// the wug in each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedPair {
    pub pair_id: String,
    pub good: Vec<u32>,
    pub bad: Vec<u32>,
    pub good_wug: Vec<usize>,
    pub bad_wug: Vec<usize>,
}

/// Byte span of the first whole-word occurrence of `needle`.
fn find_word(hay: &str, needle: &str) -> Option<(usize, usize)> {
    const SUFFIXES: [&str; 6] = ["", "s", "es", "ed", "ing", "'s"];
    if needle.is_empty() {
        return None;
    }
    hay.match_indices(needle).find_map(|(s, m)| {
        if !hay[..s].chars().next_back().is_none_or(char::is_whitespace) {
            return None;
        }
        let rest = &hay[s + m.len()..];
        let tail = rest.find(char::is_whitespace).unwrap_or(rest.len());
        SUFFIXES.contains(&&rest[..tail]).then_some((s, s + m.len() + tail))
    })
}

/// Encodes like training lines (bos + tokens + eos, truncated to `max_len`).
pub fn encode_pair(tok: &TokenizerModel, pair: &MinimalPair, max_len: usize) -> EncodedPair {
    let side = |text: &str| {
        let seq = tok.encode(text);
        let keep = seq.len().min(max_len.saturating_sub(2));
        let mut ids = Vec::with_capacity(keep + 2);
        ids.push(tok.bos_id());
        ids.extend_from_slice(&seq.ids[..keep]);
        ids.push(tok.eos_id());
        let wug = find_word(text, &pair.wug)
            .map(|(ws, we)| (0..keep).filter(|&i| seq.offsets[i].0 < we && seq.offsets[i].1 > ws).map(|i| i + 1).collect())
            .unwrap_or_default();
        (ids, wug)
    };
    let (good, good_wug) = side(&pair.good);
    let (bad, bad_wug) = side(&pair.bad);
    EncodedPair { pair_id: pair.pair_id.clone(), good, bad, good_wug, bad_wug }
}

/// Positions where two sequences differ after trimming their common prefix
/// and suffix.
pub fn differing_span(a: &[u32], b: &[u32]) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let max_suffix = a.len().min(b.len()) - prefix;
    let suffix = a.iter().rev().zip(b.iter().rev()).take(max_suffix).take_while(|(x, y)| x == y).count();
    (prefix..a.len() - suffix, prefix..b.len() - suffix)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Correct,
    Incorrect,
    Tie,
}

impl Outcome {
    pub fn compare(good: f64, bad: f64) -> Self {
        if good > bad {
            Outcome::Correct
        } else if good == bad {
            Outcome::Tie
        } else {
            Outcome::Incorrect
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub good: f64,
    pub bad: f64,
    pub outcome: Outcome,
}

/// Whether `method`'s positions exist in both members. Drop/insert pairs
/// (one member is the other plus tokens at an end) have no antecedent span.
pub fn applicable(pair: &EncodedPair, method: ScoringMethod) -> bool {
    match method {
        ScoringMethod::SentencePLL => true,
        ScoringMethod::WugLevel => !pair.good_wug.is_empty() && !pair.bad_wug.is_empty(),
        ScoringMethod::AntecedentLevel => {
            let (g, b) = differing_span(&pair.good, &pair.bad);
            !g.is_empty() && !b.is_empty()
        }
    }
}

fn summed<S: Scorer + ?Sized>(scorer: &S, tokens: &[u32], positions: &[usize]) -> Result<f64, EvalError> {
    Ok(scorer.masked_log_probs(tokens, positions)?.iter().sum())
}

pub fn score_pair<S: Scorer + ?Sized>(scorer: &S, pair: &EncodedPair, method: ScoringMethod) -> Result<PairScore, EvalError> {
    let missing = |what: &str| EvalError::SpanNotFound { pair_id: pair.pair_id.clone(), what: what.into() };
    let (good, bad) = match method {
        ScoringMethod::SentencePLL => (pll(scorer, &pair.good)?, pll(scorer, &pair.bad)?),
        ScoringMethod::WugLevel => {
            if pair.good_wug.is_empty() || pair.bad_wug.is_empty() {
                return Err(missing("wug"));
            }
            (summed(scorer, &pair.good, &pair.good_wug)?, summed(scorer, &pair.bad, &pair.bad_wug)?)
        }
        ScoringMethod::AntecedentLevel => {
            let (g, b) = differing_span(&pair.good, &pair.bad);
            if g.is_empty() || b.is_empty() {
                return Err(missing("differing span"));
            }
            let g: Vec<usize> = g.collect();
            let b: Vec<usize> = b.collect();
            (summed(scorer, &pair.good, &g)?, summed(scorer, &pair.bad, &b)?)
        }
    };
    Ok(PairScore { good, bad, outcome: Outcome::compare(good, bad) })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub num_pairs: usize,
    pub tie_count: usize,
}

impl Tally {
    pub fn add(&mut self, o: Outcome) {
        self.num_pairs += 1;
        match o {
            Outcome::Correct => self.correct += 1,
            Outcome::Tie => self.tie_count += 1,
            Outcome::Incorrect => {}
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.num_pairs == 0 {
            0.0
        } else {
            self.correct as f64 / self.num_pairs as f64
        }
    }
}

/// Scores every pair (concurrently) and returns the scores in input order.
pub fn score_all<S: Scorer + ?Sized>(scorer: &S, pairs: &[EncodedPair], method: ScoringMethod) -> Result<Vec<PairScore>, EvalError> {
    pairs.par_iter().map(|p| score_pair(scorer, p, method)).collect()
}

pub fn accuracy<S: Scorer + ?Sized>(scorer: &S, pairs: &[EncodedPair], method: ScoringMethod) -> Result<Tally, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    let mut t = Tally::default();
    for s in score_all(scorer, pairs, method)? {
        t.add(s.outcome);
    }
    Ok(t)
}

/// One result row; field order is the results CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub phenomenon: Phenomenon,
    /// Evidence label, or `none` for the shared n=0 baseline.
    pub evidence: String,
    pub n: usize,
    pub seed: u64,
    pub init_std: f64,
    pub wug_mode: WugMode,
    pub method: ScoringMethod,
    pub accuracy: f64,
    pub num_pairs: usize,
    pub tie_count: usize,
}

pub const RESULTS_HEADER: &str = "phenomenon,evidence,n,seed,init_std,wug_mode,method,accuracy,num_pairs,tie_count";

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MASK: u32 = 0;
    const BOS: u32 = 1;

    /// Vocab {mask, bos, a=2, b=3}; only positions with a registered entry
    /// deviate from uniform.
    fn scorer() -> TableScorer {
        TableScorer::new(4, MASK, vec![MASK, BOS])
    }

    #[test]
    fn hand_value() {
        let mut s = scorer();
        s.insert(vec![BOS, MASK, 3], 1, vec![0.0, 0.0, 0.5, 0.5]).unwrap();
        s.insert(vec![BOS, 2, MASK], 2, vec![0.25, 0.25, 0.25, 0.25]).unwrap();
        let v = pll(&s, &[BOS, 2, 3]).unwrap();
        assert!((v - (0.5f64.ln() + 0.25f64.ln()) / 2.0).abs() < 1e-12);
        assert!((v + 1.03972).abs() < 1e-5);
    }

    #[test]
    fn certain_token_scores_zero() {
        let mut s = scorer();
        s.insert(vec![MASK], 0, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(pll(&s, &[2]).unwrap(), 0.0);
    }

    #[test]
    fn only_control_tokens_is_an_error() {
        assert!(matches!(pll(&scorer(), &[BOS, BOS]), Err(EvalError::EmptySentence)));
        assert!(matches!(pll(&scorer(), &[]), Err(EvalError::EmptySentence)));
    }

    #[test]
    fn unnormalized_rows_are_rejected() {
        assert!(scorer().insert(vec![MASK], 0, vec![0.5, 0.5, 0.5, 0.0]).is_err());
    }

    #[test]
    fn ties_are_incorrect() {
        assert_eq!(Outcome::compare(-1.0, -1.2), Outcome::Correct);
        assert_eq!(Outcome::compare(-1.0, -1.0), Outcome::Tie);
        // Uniform scorer: every pair ties.
        let pair = EncodedPair { pair_id: "p".into(), good: vec![BOS, 2], bad: vec![BOS, 3], good_wug: vec![1], bad_wug: vec![1] };
        let t = accuracy(&scorer(), &[pair], ScoringMethod::SentencePLL).unwrap();
        assert_eq!((t.correct, t.tie_count, t.accuracy()), (0, 1, 0.0));
    }

    #[test]
    fn differing_span_trims_both_ends() {
        assert_eq!(differing_span(&[1, 2, 3, 4], &[1, 5, 6, 4]), (1..3, 1..3));
        assert_eq!(differing_span(&[1, 2, 4], &[1, 5, 6, 4]), (1..2, 1..3));
        assert_eq!(differing_span(&[1, 2], &[1, 2, 2]), (2..2, 2..3));
        assert_eq!(differing_span(&[1, 2], &[1, 2]), (2..2, 2..2));
    }

    #[test]
    fn missing_spans_are_reported() {
        let same = EncodedPair { pair_id: "x".into(), good: vec![2, 3], bad: vec![2, 3], good_wug: vec![], bad_wug: vec![0] };
        assert!(matches!(score_pair(&scorer(), &same, ScoringMethod::WugLevel), Err(EvalError::SpanNotFound { .. })));
        assert!(matches!(score_pair(&scorer(), &same, ScoringMethod::AntecedentLevel), Err(EvalError::SpanNotFound { .. })));
        assert!(matches!(accuracy(&scorer(), &[], ScoringMethod::SentencePLL), Err(EvalError::EmptyEvalSet)));
        assert!(!applicable(&same, ScoringMethod::WugLevel) && !applicable(&same, ScoringMethod::AntecedentLevel));
        assert!(applicable(&same, ScoringMethod::SentencePLL));
    }

    #[test]
    fn find_word_respects_boundaries() {
        assert_eq!(find_word("the <wug#1>s ran", "<wug#1>s"), Some((4, 12)));
        assert_eq!(find_word("the <wug#12> ran <wug#1>", "<wug#1>"), Some((17, 24)));
        assert_eq!(find_word("blickets and blicket", "blicket"), Some((0, 8)));
        assert_eq!(find_word("nothing", "blicket"), None);
        assert_eq!(find_word("two <wug#9>ed it", "<wug#9>"), Some((4, 13)));
        assert_eq!(find_word("a daker and a dak", "dak"), Some((14, 17)));
    }

    #[test]
    fn method_names_roundtrip() {
        for m in ScoringMethod::ALL {
            assert_eq!(m.as_str().parse::<ScoringMethod>().unwrap(), m);
        }
        assert_eq!("wug-level".parse::<ScoringMethod>().unwrap(), ScoringMethod::WugLevel);
    }

    #[test]
    fn csv_header_matches_fields() {
        let mut w = csv::Writer::from_writer(vec![]);
        w.serialize(EvalResult {
            phenomenon: Phenomenon::DNAgr,
            evidence: "DE".into(),
            n: 5,
            seed: 1,
            init_std: 0.02,
            wug_mode: WugMode::Tag,
            method: ScoringMethod::WugLevel,
            accuracy: 0.5,
            num_pairs: 2,
            tie_count: 0,
        })
        .unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text, format!("{RESULTS_HEADER}\nDNAgr,DE,5,1,0.02,tag,WugLevel,0.5,2,0\n"));
    }

    // Independent brute force: an explicit table of probability rows,
    // looked up directly, with every score written out from its definition.
    struct Oracle {
        rows: HashMap<(Vec<u32>, usize), Vec<f64>>,
    }

    impl Oracle {
        fn p(&self, seq: &[u32], pos: usize) -> f64 {
            let mut m = seq.to_vec();
            m[pos] = MASK;
            self.rows.get(&(m, pos)).map_or(0.25, |r| r[seq[pos] as usize])
        }

        fn sentence(&self, seq: &[u32]) -> f64 {
            let mut total = 0.0;
            let mut count = 0.0;
            for i in 0..seq.len() {
                if seq[i] != MASK && seq[i] != BOS {
                    total += self.p(seq, i).ln();
                    count += 1.0;
                }
            }
            total / count
        }

        fn at(&self, seq: &[u32], positions: &[usize]) -> f64 {
            positions.iter().map(|&i| self.p(seq, i).ln()).sum()
        }

        fn antecedent(&self, g: &[u32], b: &[u32]) -> (f64, f64) {
            let mut start = 0;
            while start < g.len() && start < b.len() && g[start] == b[start] {
                start += 1;
            }
            let (mut eg, mut eb) = (g.len(), b.len());
            while eg > start && eb > start && g[eg - 1] == b[eb - 1] {
                eg -= 1;
                eb -= 1;
            }
            (self.at(g, &(start..eg).collect::<Vec<_>>()), self.at(b, &(start..eb).collect::<Vec<_>>()))
        }
    }

    fn dist() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(1u32..20, 4).prop_map(|w| {
            let s: u32 = w.iter().sum();
            w.iter().map(|&x| x as f64 / s as f64).collect()
        })
    }

    fn sentence() -> impl Strategy<Value = Vec<u32>> {
        prop::collection::vec(2u32..4, 1..=4).prop_map(|mut v| {
            v.insert(0, BOS);
            v
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            good in sentence(),
            bad in sentence(),
            rows in prop::collection::vec(dist(), 10),
            wug in 1usize..5,
        ) {
            prop_assume!(good != bad);
            let mut table = scorer();
            let mut oracle = Oracle { rows: HashMap::new() };
            let mut rows = rows.into_iter();
            for seq in [&good, &bad] {
                for pos in 1..seq.len() {
                    let mut m = seq.clone();
                    m[pos] = MASK;
                    if let Some(r) = rows.next() {
                        table.insert(m.clone(), pos, r.clone()).unwrap();
                        oracle.rows.insert((m, pos), r);
                    }
                }
            }
            let wug_g = vec![wug.min(good.len() - 1)];
            let wug_b = vec![wug.min(bad.len() - 1)];
            let pair = EncodedPair { pair_id: "p".into(), good: good.clone(), bad: bad.clone(), good_wug: wug_g.clone(), bad_wug: wug_b.clone() };

            let s = score_pair(&table, &pair, ScoringMethod::SentencePLL).unwrap();
            prop_assert!((s.good - oracle.sentence(&good)).abs() < 1e-9);
            prop_assert!((s.bad - oracle.sentence(&bad)).abs() < 1e-9);
            prop_assert!(s.good <= 0.0 && s.bad <= 0.0);

            let w = score_pair(&table, &pair, ScoringMethod::WugLevel).unwrap();
            prop_assert!((w.good - oracle.at(&good, &wug_g)).abs() < 1e-9);
            prop_assert!((w.bad - oracle.at(&bad, &wug_b)).abs() < 1e-9);

            let (og, ob) = oracle.antecedent(&good, &bad);
            match score_pair(&table, &pair, ScoringMethod::AntecedentLevel) {
                Ok(a) => {
                    prop_assert!((a.good - og).abs() < 1e-9);
                    prop_assert!((a.bad - ob).abs() < 1e-9);
                    prop_assert_eq!(a.outcome, Outcome::compare(og, ob));
                }
                // One member is the other plus extra tokens at an end.
                Err(EvalError::SpanNotFound { .. }) => prop_assert!(og == 0.0 || ob == 0.0),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn accuracy_ignores_order_and_ids(seed in any::<u64>(), n in 1usize..12) {
            use rand::{seq::SliceRandom, Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut table = scorer();
            let pairs: Vec<EncodedPair> = (0..n)
                .map(|i| {
                    let g: u32 = rng.random_range(2..4);
                    let b: u32 = rng.random_range(2..4);
                    let prob = rng.random_range(0.05..0.95);
                    let _ = table.insert(vec![BOS, MASK, i as u32 % 2 + 2], 1, vec![0.0, 0.0, prob, 1.0 - prob]);
                    EncodedPair { pair_id: format!("p{i}"), good: vec![BOS, g, i as u32 % 2 + 2], bad: vec![BOS, b, i as u32 % 2 + 2], good_wug: vec![1], bad_wug: vec![1] }
                })
                .collect();
            let base = accuracy(&table, &pairs, ScoringMethod::WugLevel).unwrap();
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rng);
            for (i, p) in shuffled.iter_mut().enumerate() {
                p.pair_id = format!("q{}", n - i);
            }
            prop_assert_eq!(accuracy(&table, &shuffled, ScoringMethod::WugLevel).unwrap(), base);
            prop_assert!(base.correct + base.tie_count <= base.num_pairs);
        }
    }

    #[test]
    fn preferring_good_gives_full_accuracy_and_is_monotone() {
        let mut s = scorer();
        s.insert(vec![BOS, MASK], 1, vec![0.0, 0.0, 0.9, 0.1]).unwrap();
        let good = EncodedPair { pair_id: "a".into(), good: vec![BOS, 2], bad: vec![BOS, 3], good_wug: vec![1], bad_wug: vec![1] };
        let bad = EncodedPair { pair_id: "b".into(), good: vec![BOS, 3], bad: vec![BOS, 2], good_wug: vec![1], bad_wug: vec![1] };
        for m in ScoringMethod::ALL {
            assert_eq!(accuracy(&s, &[good.clone(), good.clone()], m).unwrap().accuracy(), 1.0);
        }
        let before = accuracy(&s, std::slice::from_ref(&bad), ScoringMethod::SentencePLL).unwrap();
        let after = accuracy(&s, &[bad, good], ScoringMethod::SentencePLL).unwrap();
        assert!(after.correct > before.correct);
    }

    #[test]
    fn model_scorer_batches_like_single_queries() {
        use crate::mlm::gradcheck::small_config;
        let tok = crate::tokenizer::train_bpe(&["a b c", "b c d", "d a"], 40, &[]).unwrap();
        let model: Model<f64> = Model::new(crate::mlm::ModelConfig { vocab_size: tok.vocab_size(), ..small_config() }, 3).unwrap();
        let ms = ModelScorer::new(&model, &tok);
        let ids = crate::mlm::encode_line(&tok, "a b d c", 16);
        let positions: Vec<usize> = (1..ids.len() - 1).collect();
        let packed = ms.masked_log_probs(&ids, &positions).unwrap();
        for (k, &p) in positions.iter().enumerate() {
            let mut m = ids.clone();
            m[p] = tok.mask_id();
            let row = ms.log_probs(&m, p).unwrap();
            assert!((row.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-6);
            assert!((row[ids[p] as usize] - packed[k]).abs() < 1e-10);
        }
        assert!(!ms.scoreable(tok.bos_id()) && !ms.scoreable(tok.mask_id()));
        assert!(pll(&ms, &ids).unwrap() < 0.0);
    }

    #[test]
    fn encoded_pair_locates_wug_tokens() {
        let tok = crate::tokenizer::train_bpe(&["the cat sat", "the cats sat"], 60, &["<wug#1>".to_string()]).unwrap();
        let pair = MinimalPair {
            pair_id: "p".into(),
            phenomenon: Phenomenon::DNAgr,
            wug_id: crate::wug::WugId(1),
            wug: "<wug#1>s".into(),
            property: "plural".into(),
            good: "these <wug#1>s sat".into(),
            bad: "this <wug#1>s sat".into(),
        };
        let e = encode_pair(&tok, &pair, 32);
        let wug = tok.id("<wug#1>").unwrap();
        assert_eq!(e.good[0], tok.bos_id());
        assert_eq!(*e.good.last().unwrap(), tok.eos_id());
        assert_eq!(e.good[e.good_wug[0]], wug);
        assert_eq!(e.bad[e.bad_wug[0]], wug);
        // The tag and its plural suffix both count.
        assert_eq!(e.good_wug.len(), 2);
    }
}
