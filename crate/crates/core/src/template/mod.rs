//! Template grammar for minimal pairs and DE/LexIE/SynIE training material.
//!
//! A template is a sequence of typed slots with exactly one `wug` slot. Each
//! eval template names one slot whose realization differs between the good
//! and the bad member of a pair. Expansion fills the open slots from a
//! [`Lexicon`](crate::lexicon::Lexicon) and realizes every filled frame once
//! per tag set with a different wug.

mod balance;
mod expand;
mod interference;
mod parse;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::lexicon::{Gender, VerbClass, VerbForm};
use crate::wug::{Number, WugId};

pub use balance::{check_balance, is_negated, BalanceReport, BalanceSpec, ConstraintResult, NEGATION_WORDS};
pub use expand::{derive_de, expand, expand_phenomenon, ExpandConfig, Expansion, FrameRecord};
pub use interference::{
    make_interference_set, realize_interference, InterferenceKind, InterferenceSet, Interferer, NounBanks,
    ATTRACTOR_NOUNS_PER_GENDER,
};
pub use parse::{bundled_templates, parse_template_file, BUNDLED_TEMPLATES};
pub use synth::synthesize_corpus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phenomenon {
    AnaGenAgr,
    AnaNumAgr,
    Transitive,
    Intransitive,
    DNAgr,
    SVAgrV,
    SVAgrS,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PartOfSpeech {
    Noun,
    Verb,
    Adj,
}

/// Which properties a phenomenon's judgment depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PhenomenonFeatures {
    pub pos: PartOfSpeech,
    pub gender: bool,
    pub number: bool,
    pub transitivity: bool,
    pub long_agreement: bool,
}

impl Phenomenon {
    pub const ALL: [Phenomenon; 7] = [
        Phenomenon::AnaGenAgr,
        Phenomenon::AnaNumAgr,
        Phenomenon::Transitive,
        Phenomenon::Intransitive,
        Phenomenon::DNAgr,
        Phenomenon::SVAgrV,
        Phenomenon::SVAgrS,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phenomenon::AnaGenAgr => "AnaGenAgr",
            Phenomenon::AnaNumAgr => "AnaNumAgr",
            Phenomenon::Transitive => "Transitive",
            Phenomenon::Intransitive => "Intransitive",
            Phenomenon::DNAgr => "DNAgr",
            Phenomenon::SVAgrV => "SVAgrV",
            Phenomenon::SVAgrS => "SVAgrS",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Phenomenon::AnaGenAgr => "ana_gen_agr",
            Phenomenon::AnaNumAgr => "ana_num_agr",
            Phenomenon::Transitive => "transitive",
            Phenomenon::Intransitive => "intransitive",
            Phenomenon::DNAgr => "dn_agr",
            Phenomenon::SVAgrV => "sv_agr_v",
            Phenomenon::SVAgrS => "sv_agr_s",
        }
    }

    pub fn features(self) -> PhenomenonFeatures {
        use PartOfSpeech::*;
        let f = |pos, gender, number, transitivity, long_agreement| PhenomenonFeatures {
            pos,
            gender,
            number,
            transitivity,
            long_agreement,
        };
        match self {
            Phenomenon::AnaGenAgr => f(Noun, true, false, false, true),
            Phenomenon::AnaNumAgr => f(Noun, false, true, false, true),
            Phenomenon::Transitive => f(Verb, false, false, true, false),
            Phenomenon::Intransitive => f(Verb, false, false, true, false),
            Phenomenon::DNAgr => f(Adj, false, true, false, false),
            Phenomenon::SVAgrV => f(Verb, false, true, false, false),
            Phenomenon::SVAgrS => f(Noun, false, true, false, false),
        }
    }

    /// Balance labels in canonical order.
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            Phenomenon::AnaGenAgr => &["feminine", "masculine"],
            Phenomenon::AnaNumAgr | Phenomenon::SVAgrV | Phenomenon::SVAgrS => &["singular", "plural"],
            Phenomenon::DNAgr => &["this", "that", "these", "those"],
            Phenomenon::Transitive => &["transitive"],
            Phenomenon::Intransitive => &["intransitive"],
        }
    }
}

impl fmt::Display for Phenomenon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phenomenon {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let p = match norm.as_str() {
            "anagenagr" => Phenomenon::AnaGenAgr,
            "ananumagr" => Phenomenon::AnaNumAgr,
            "transitive" | "trans" => Phenomenon::Transitive,
            "intransitive" | "intrans" => Phenomenon::Intransitive,
            "dnagr" => Phenomenon::DNAgr,
            "svagrv" => Phenomenon::SVAgrV,
            "svagrs" => Phenomenon::SVAgrS,
            _ => return Err(format!("unknown phenomenon {s:?}")),
        };
        Ok(p)
    }
}

/// Degree of indirectness of a training instance, plus the attractor and
/// distance conditions used by the interference analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Evidence {
    Direct,
    LexicalIndirect,
    SyntacticIndirect,
    Interference(InterferenceKind),
}

impl Evidence {
    pub const LEVELS: [Evidence; 3] = [Evidence::Direct, Evidence::LexicalIndirect, Evidence::SyntacticIndirect];

    pub fn label(self) -> String {
        match self {
            Evidence::Direct => "DE".into(),
            Evidence::LexicalIndirect => "LexIE".into(),
            Evidence::SyntacticIndirect => "SynIE".into(),
            Evidence::Interference(k) => k.to_string(),
        }
    }
}

impl fmt::Display for Evidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Evidence {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "DE" | "de" => Ok(Evidence::Direct),
            "LexIE" | "lexie" => Ok(Evidence::LexicalIndirect),
            "SynIE" | "synie" => Ok(Evidence::SyntacticIndirect),
            other => other.parse::<InterferenceKind>().map(Evidence::Interference),
        }
    }
}

impl Serialize for Evidence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for Evidence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Agreement source for a slot feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agree {
    /// Follows the frame's target property.
    Prop,
    Singular,
    Plural,
    /// Chosen at random when the frame is filled.
    #[default]
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Gender,
    Number,
}

fn default_neg() -> String {
    "not".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Slot {
    Lit {
        text: String,
    },
    Wug {
        #[serde(default)]
        number: Agree,
        #[serde(default, skip_serializing_if = "String::is_empty")]
        suffix: String,
    },
    Noun {
        #[serde(default)]
        number: Agree,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gender: Option<Gender>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        animate: Option<bool>,
        /// Determiner realized inside the slot ("the", "a").
        #[serde(default, skip_serializing_if = "Option::is_none")]
        det: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lemma: Option<String>,
    },
    Verb {
        form: VerbForm,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        class: Option<VerbClass>,
        #[serde(default)]
        number: Agree,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lemma: Option<String>,
    },
    /// Copula: is/are or was/were.
    Aux {
        #[serde(default)]
        number: Agree,
        #[serde(default)]
        past: bool,
    },
    Modal,
    /// Demonstrative: this/that/these/those.
    Dem {
        #[serde(default)]
        number: Agree,
    },
    Quant {
        #[serde(default)]
        number: Agree,
    },
    Refl {
        by: Feature,
    },
    Poss {
        by: Feature,
    },
    Pron {
        by: Feature,
    },
    /// Realized as `word` in negated frames and empty otherwise.
    Neg {
        #[serde(default = "default_neg")]
        word: String,
    },
}

impl Slot {
    pub fn kind(&self) -> &'static str {
        match self {
            Slot::Lit { .. } => "lit",
            Slot::Wug { .. } => "wug",
            Slot::Noun { .. } => "noun",
            Slot::Verb { .. } => "verb",
            Slot::Aux { .. } => "aux",
            Slot::Modal => "modal",
            Slot::Dem { .. } => "dem",
            Slot::Quant { .. } => "quant",
            Slot::Refl { .. } => "refl",
            Slot::Poss { .. } => "poss",
            Slot::Pron { .. } => "pron",
            Slot::Neg { .. } => "neg",
        }
    }

    /// Whether the slot's surface depends on the frame property, so that
    /// flipping the property changes it.
    pub fn follows_property(&self) -> bool {
        match self {
            Slot::Wug { number, .. }
            | Slot::Noun { number, .. }
            | Slot::Aux { number, .. }
            | Slot::Dem { number }
            | Slot::Quant { number } => *number == Agree::Prop,
            Slot::Verb { form, number, .. } => *form == VerbForm::Agree && *number == Agree::Prop,
            Slot::Refl { .. } | Slot::Poss { .. } | Slot::Pron { .. } => true,
            Slot::Lit { .. } | Slot::Modal | Slot::Neg { .. } => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlternationKind {
    /// The bad member realizes the slot with the opposite property value.
    Flip,
    /// The slot is realized only in the good member.
    Drop,
    /// The slot is realized only in the bad member.
    Insert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alternation {
    pub slot: usize,
    pub kind: AlternationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateUse {
    /// Evaluation pairs (and hence DE).
    Eval,
    Lexie,
    Synie,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub id: String,
    pub phenomenon: Phenomenon,
    #[serde(rename = "use")]
    pub uses: Vec<TemplateUse>,
    pub slots: Vec<Slot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternate: Option<Alternation>,
}

impl Template {
    pub fn has_use(&self, u: TemplateUse) -> bool {
        self.uses.contains(&u)
    }

    /// Slot-type sequence; two templates with equal skeletons share syntax.
    pub fn skeleton(&self) -> Vec<&'static str> {
        self.slots.iter().map(Slot::kind).collect()
    }

    pub fn has_negation(&self) -> bool {
        self.slots.iter().any(|s| matches!(s, Slot::Neg { .. }))
    }
}

/// Target property of a wug, fixed per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Property {
    pub gender: Option<Gender>,
    pub number: Option<Number>,
    pub distal: bool,
}

impl Property {
    pub fn from_label(label: &str) -> Option<Property> {
        let p = |gender, number, distal| Some(Property { gender, number, distal });
        match label {
            "feminine" => p(Some(Gender::Feminine), None, false),
            "masculine" => p(Some(Gender::Masculine), None, false),
            "singular" | "this" => p(None, Some(Number::Singular), false),
            "plural" | "these" => p(None, Some(Number::Plural), false),
            "that" => p(None, Some(Number::Singular), true),
            "those" => p(None, Some(Number::Plural), true),
            "transitive" | "intransitive" => p(None, None, false),
            _ => None,
        }
    }

    pub fn number_or_singular(&self) -> Number {
        self.number.unwrap_or(Number::Singular)
    }

    pub fn gender_or_feminine(&self) -> Gender {
        self.gender.unwrap_or(Gender::Feminine)
    }

    pub fn flipped(&self) -> Property {
        Property {
            gender: self.gender.map(Gender::opposite),
            number: self.number.map(Number::flip),
            distal: self.distal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinimalPair {
    pub pair_id: String,
    pub phenomenon: Phenomenon,
    pub wug_id: WugId,
    /// Surface of the wug as it appears in both members.
    pub wug: String,
    /// Balance label of the good member (e.g. "feminine", "these").
    pub property: String,
    pub good: String,
    pub bad: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub instance_id: String,
    pub phenomenon: Phenomenon,
    pub evidence: Evidence,
    pub wug_id: WugId,
    pub wug: String,
    pub sentence: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("template {id} (line {line}): {message}")]
    Validation { line: usize, id: String, message: String },
    #[error("balance unsatisfiable for {phenomenon}: {message}")]
    BalanceUnsatisfiable { phenomenon: Phenomenon, message: String },
    #[error("could not find a fresh sentence for template {template} after {attempts} attempts")]
    DuplicateExhaustion { template: String, attempts: usize },
    #[error("{phenomenon} needs {needed} wugs but only {available} remain")]
    NotEnoughWugs { phenomenon: Phenomenon, needed: usize, available: usize },
    #[error("{phenomenon} has no template usable for {what}")]
    MissingTemplate { phenomenon: Phenomenon, what: String },
    #[error("noun bank {bank} holds {have} nouns, need {need}")]
    BankTooSmall { bank: &'static str, have: usize, need: usize },
    #[error("no verbs supplied")]
    NoVerbs,
}

/// Lines of `items` serialized as JSON Lines.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, TemplateError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TemplateError::Parse { line: i + 1, message: e.to_string() })
        })
        .collect()
}
