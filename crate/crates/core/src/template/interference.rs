//! Attractor-type, attractor-number and distance conditions for anaphor
//! gender agreement. Every training instance has the shape
//! `<w> SPAN VERB REFLEXIVE`, where SPAN is the interfering material.

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Evidence, MinimalPair, Phenomenon, TemplateError, TrainingInstance};
use crate::lexicon::{Gender, Lexicon, Noun, Verb};
use crate::wug::{surface_form, Number, WugEntry};

/// Nouns drawn per gender bank; each is used in singular and plural.
pub const ATTRACTOR_NOUNS_PER_GENDER: usize = 25;
const MIN_BANK: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InterferenceKind {
    #[serde(rename = "AT0")]
    At0,
    #[serde(rename = "AT1")]
    At1,
    #[serde(rename = "AT2")]
    At2,
    #[serde(rename = "AN0")]
    An0,
    #[serde(rename = "AN1")]
    An1,
    #[serde(rename = "AN2")]
    An2,
    #[serde(rename = "DT0")]
    Dt0,
    #[serde(rename = "DT1")]
    Dt1,
    #[serde(rename = "DT2")]
    Dt2,
}

impl InterferenceKind {
    pub const ALL: [InterferenceKind; 9] = [
        InterferenceKind::At0,
        InterferenceKind::At1,
        InterferenceKind::At2,
        InterferenceKind::An0,
        InterferenceKind::An1,
        InterferenceKind::An2,
        InterferenceKind::Dt0,
        InterferenceKind::Dt1,
        InterferenceKind::Dt2,
    ];

    pub fn label(self) -> &'static str {
        match self {
            InterferenceKind::At0 => "AT0",
            InterferenceKind::At1 => "AT1",
            InterferenceKind::At2 => "AT2",
            InterferenceKind::An0 => "AN0",
            InterferenceKind::An1 => "AN1",
            InterferenceKind::An2 => "AN2",
            InterferenceKind::Dt0 => "DT0",
            InterferenceKind::Dt1 => "DT1",
            InterferenceKind::Dt2 => "DT2",
        }
    }

    /// "AT", "AN" or "DT".
    pub fn family(self) -> &'static str {
        &self.label()[..2]
    }

    pub fn level(self) -> u8 {
        self.label().as_bytes()[2] - b'0'
    }

    /// Span pattern; `{}` marks a substituted word.
    fn pattern(self) -> &'static str {
        match self {
            InterferenceKind::At0 | InterferenceKind::At1 => "helping the {}",
            InterferenceKind::At2 => "helping {}",
            InterferenceKind::An0 => "helping the {} to see the {}",
            InterferenceKind::An1 => "helping the {} for the {} to see the {}",
            InterferenceKind::An2 => "helping the {} for the {} of the {} to see the {}",
            InterferenceKind::Dt0 => "who helps the {}",
            InterferenceKind::Dt1 => "whose {} helps the {}",
            InterferenceKind::Dt2 => "whose {} helps the {} who finds the {}",
        }
    }

    pub fn fillers(self) -> usize {
        self.pattern().matches("{}").count()
    }

    /// Words in the interfering span.
    pub fn span_len(self) -> usize {
        self.pattern().split_whitespace().count()
    }
}

impl fmt::Display for InterferenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for InterferenceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        InterferenceKind::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown evidence or interference kind {s:?}"))
    }
}

/// Words substituted into a kind's span pattern, in order of appearance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interferer {
    pub kind: InterferenceKind,
    pub words: Vec<String>,
}

impl Interferer {
    pub fn new(kind: InterferenceKind, words: &[&str]) -> Self {
        assert_eq!(words.len(), kind.fillers(), "{kind} takes {} words", kind.fillers());
        Interferer { kind, words: words.iter().map(|w| w.to_string()).collect() }
    }

    pub fn span(&self) -> String {
        let mut words = self.words.iter();
        self.kind
            .pattern()
            .split_whitespace()
            .map(|w| if w == "{}" { words.next().expect("filler count checked").as_str() } else { w })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn reflexive(g: Gender) -> &'static str {
    match g {
        Gender::Masculine => "himself",
        _ => "herself",
    }
}

/// `<w> SPAN VERB REFLEXIVE` with the reflexive agreeing with `gender`.
pub fn realize_interference(wug: &str, gender: Gender, interferer: &Interferer, verb_third: &str) -> String {
    format!("{wug} {} {verb_third} {}", interferer.span(), reflexive(gender))
}

#[derive(Debug, Clone, Default)]
pub struct NounBanks {
    pub feminine: Vec<Noun>,
    pub masculine: Vec<Noun>,
    pub neutral: Vec<Noun>,
}

impl NounBanks {
    /// Gendered nouns plus animate neutral nouns ("teacher", "child").
    pub fn from_lexicon(lex: &Lexicon) -> Self {
        let bank = |g, animate_only: bool| {
            lex.nouns_of(g).filter(|n| n.marks_number() && (!animate_only || n.animate)).cloned().collect()
        };
        NounBanks {
            feminine: bank(Gender::Feminine, false),
            masculine: bank(Gender::Masculine, false),
            neutral: bank(Gender::Neutral, true),
        }
    }

    fn of(&self, g: Gender) -> &[Noun] {
        match g {
            Gender::Feminine => &self.feminine,
            Gender::Masculine => &self.masculine,
            Gender::Neutral => &self.neutral,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InterferenceSet {
    pub train: Vec<TrainingInstance>,
    pub eval: Vec<MinimalPair>,
}

/// Wugs alternate feminine/masculine. The first attractor of each instance
/// cycles through the 25 selected nouns of its bank in singular and plural.
pub fn make_interference_set(
    kind: InterferenceKind,
    banks: &NounBanks,
    verbs: &[Verb],
    wugs: &[WugEntry],
    rng_seed: u64,
) -> Result<InterferenceSet, TemplateError> {
    for (name, bank) in [("feminine", &banks.feminine), ("masculine", &banks.masculine), ("neutral", &banks.neutral)] {
        if bank.len() < MIN_BANK {
            return Err(TemplateError::BankTooSmall { bank: name, have: bank.len(), need: MIN_BANK });
        }
    }
    if verbs.is_empty() {
        return Err(TemplateError::NoVerbs);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let select = |g, rng: &mut ChaCha8Rng| -> Vec<Noun> {
        banks.of(g).choose_multiple(rng, ATTRACTOR_NOUNS_PER_GENDER).cloned().collect()
    };
    let selected = [
        select(Gender::Feminine, &mut rng),
        select(Gender::Masculine, &mut rng),
        select(Gender::Neutral, &mut rng),
    ];
    let sel = |g: Gender| match g {
        Gender::Feminine => &selected[0],
        Gender::Masculine => &selected[1],
        Gender::Neutral => &selected[2],
    };

    let slug = Phenomenon::AnaGenAgr.slug();
    let mut set = InterferenceSet::default();
    for (i, wug) in wugs.iter().enumerate() {
        let gender = if i % 2 == 0 { Gender::Feminine } else { Gender::Masculine };
        let opposite = gender.opposite();
        let j = i / 2;
        let primary_number = if j % 2 == 0 { Number::Singular } else { Number::Plural };
        let primary_bank = match kind.family() {
            "DT" => Gender::Neutral,
            _ if kind == InterferenceKind::At0 => Gender::Neutral,
            _ => opposite,
        };
        let primary = &sel(primary_bank)[(j / 2) % ATTRACTOR_NOUNS_PER_GENDER];
        let mut taken = vec![primary.lemma.clone()];
        let mut other = |g: Gender, rng: &mut ChaCha8Rng| -> String {
            let pool: Vec<&Noun> = banks.of(g).iter().filter(|n| !taken.contains(&n.lemma)).collect();
            let n = pool.choose(rng).expect("banks hold at least 100 nouns");
            taken.push(n.lemma.clone());
            n.lemma.clone()
        };
        let p = primary.form(primary_number).to_string();
        let words: Vec<String> = match kind {
            InterferenceKind::At0 | InterferenceKind::At1 | InterferenceKind::Dt0 => vec![p],
            InterferenceKind::At2 => vec![if opposite == Gender::Masculine { "him" } else { "her" }.into()],
            InterferenceKind::An0 => vec![p, other(opposite, &mut rng)],
            InterferenceKind::An1 => {
                let (a, b) = (other(opposite, &mut rng), other(opposite, &mut rng));
                vec![p, a, b]
            }
            InterferenceKind::An2 => {
                let (a, b, c) = (other(opposite, &mut rng), other(opposite, &mut rng), other(opposite, &mut rng));
                vec![p, a, b, c]
            }
            InterferenceKind::Dt1 => vec![other(Gender::Neutral, &mut rng), p],
            InterferenceKind::Dt2 => {
                let owner = other(Gender::Neutral, &mut rng);
                let last = other(Gender::Neutral, &mut rng);
                let last_plural = banks.neutral.iter().find(|n| n.lemma == last).expect("drawn from bank").plural.clone();
                vec![owner, p, last_plural]
            }
        };
        let interferer = Interferer { kind, words };
        let verb = &verbs[i % verbs.len()].third;
        let surface = surface_form(wug, Number::Singular);
        set.train.push(TrainingInstance {
            instance_id: format!("{slug}-{}-{i:03}", kind.label().to_ascii_lowercase()),
            phenomenon: Phenomenon::AnaGenAgr,
            evidence: Evidence::Interference(kind),
            wug_id: wug.id,
            wug: surface.clone(),
            sentence: realize_interference(&surface, gender, &interferer, verb),
        });
        set.eval.push(MinimalPair {
            pair_id: format!("{slug}-itf-{i:03}"),
            phenomenon: Phenomenon::AnaGenAgr,
            wug_id: wug.id,
            wug: surface.clone(),
            property: if gender == Gender::Feminine { "feminine" } else { "masculine" }.into(),
            good: format!("{surface} {verb} {}", reflexive(gender)),
            bad: format!("{surface} {verb} {}", reflexive(opposite)),
        });
    }
    Ok(set)
}
