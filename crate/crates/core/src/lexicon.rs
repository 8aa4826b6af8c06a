//! Real-word lexicon used to fill template slots and to synthesize the toy corpus.

use serde::{Deserialize, Serialize};

use crate::wug::Number;

pub const BUNDLED_LEXICON: &str = include_str!("../data/lexicon.jsonl");
pub const BUNDLED_SEED_NOUNS: &str = include_str!("../data/seed_nouns.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Feminine,
    Masculine,
    Neutral,
}

impl Gender {
    pub fn opposite(self) -> Gender {
        match self {
            Gender::Feminine => Gender::Masculine,
            Gender::Masculine => Gender::Feminine,
            Gender::Neutral => Gender::Neutral,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Noun {
    pub lemma: String,
    pub plural: String,
    pub gender: Gender,
    #[serde(default)]
    pub animate: bool,
}

impl Noun {
    pub fn form(&self, number: Number) -> &str {
        match number {
            Number::Singular => &self.lemma,
            Number::Plural => &self.plural,
        }
    }

    /// Nouns like "sheep" do not show number.
    pub fn marks_number(&self) -> bool {
        self.lemma != self.plural
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum VerbClass {
    Trans,
    Intrans,
    Refl,
    Clausal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verb {
    pub lemma: String,
    pub third: String,
    pub past: String,
    pub participle: String,
    pub gerund: String,
    pub classes: Vec<VerbClass>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerbForm {
    Base,
    Third,
    Past,
    Participle,
    Gerund,
    /// Present tense agreeing with a subject number.
    Agree,
}

impl Verb {
    pub fn has_class(&self, class: VerbClass) -> bool {
        self.classes.contains(&class)
    }

    pub fn form(&self, form: VerbForm, number: Number) -> &str {
        match form {
            VerbForm::Base => &self.lemma,
            VerbForm::Third => &self.third,
            VerbForm::Past => &self.past,
            VerbForm::Participle => &self.participle,
            VerbForm::Gerund => &self.gerund,
            VerbForm::Agree => match number {
                Number::Singular => &self.third,
                Number::Plural => &self.lemma,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "pos", rename_all = "snake_case")]
pub enum LexEntry {
    Noun(Noun),
    Verb(Verb),
}

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("lexicon line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("duplicate {pos} lemma {lemma:?}")]
    Duplicate { pos: &'static str, lemma: String },
}

#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    pub nouns: Vec<Noun>,
    pub verbs: Vec<Verb>,
}

impl Lexicon {
    pub fn from_jsonl(text: &str) -> Result<Self, LexiconError> {
        let mut lex = Lexicon::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: LexEntry =
                serde_json::from_str(line).map_err(|source| LexiconError::Parse { line: i + 1, source })?;
            match entry {
                LexEntry::Noun(n) => {
                    if lex.nouns.iter().any(|m| m.lemma == n.lemma) {
                        return Err(LexiconError::Duplicate { pos: "noun", lemma: n.lemma });
                    }
                    lex.nouns.push(n)
                }
                LexEntry::Verb(v) => {
                    if lex.verbs.iter().any(|m| m.lemma == v.lemma) {
                        return Err(LexiconError::Duplicate { pos: "verb", lemma: v.lemma });
                    }
                    lex.verbs.push(v)
                }
            }
        }
        Ok(lex)
    }

    pub fn bundled() -> Self {
        Self::from_jsonl(BUNDLED_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for n in &self.nouns {
            out.push_str(&serde_json::to_string(&LexEntry::Noun(n.clone())).unwrap());
            out.push('\n');
        }
        for v in &self.verbs {
            out.push_str(&serde_json::to_string(&LexEntry::Verb(v.clone())).unwrap());
            out.push('\n');
        }
        out
    }

    pub fn nouns_of(&self, gender: Gender) -> impl Iterator<Item = &Noun> {
        self.nouns.iter().filter(move |n| n.gender == gender)
    }

    pub fn noun(&self, lemma: &str) -> Option<&Noun> {
        self.nouns.iter().find(|n| n.lemma == lemma)
    }

    pub fn verb(&self, lemma: &str) -> Option<&Verb> {
        self.verbs.iter().find(|v| v.lemma == lemma)
    }
}

pub fn bundled_seed_nouns() -> Vec<String> {
    BUNDLED_SEED_NOUNS.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_banks_are_large_enough() {
        let lex = Lexicon::bundled();
        assert!(lex.nouns_of(Gender::Feminine).count() >= 100);
        assert!(lex.nouns_of(Gender::Masculine).count() >= 100);
        assert!(lex.nouns_of(Gender::Neutral).filter(|n| n.animate).count() >= 100);
        assert!(bundled_seed_nouns().len() >= 1200);
    }

    #[test]
    fn verb_agreement_forms() {
        let lex = Lexicon::bundled();
        let v = lex.verb("use").unwrap();
        assert_eq!(v.form(VerbForm::Agree, Number::Singular), "uses");
        assert_eq!(v.form(VerbForm::Agree, Number::Plural), "use");
        assert_eq!(lex.verb("devote").unwrap().participle, "devoted");
        assert_eq!(lex.noun("woman").unwrap().plural, "women");
    }

    #[test]
    fn duplicate_lemma_rejected() {
        let line = r#"{"pos":"noun","lemma":"cat","plural":"cats","gender":"neutral"}"#;
        let text = format!("{line}\n{line}\n");
        assert!(matches!(Lexicon::from_jsonl(&text), Err(LexiconError::Duplicate { .. })));
    }
}
