//! Background text drawn from the same templates, with real words where the
//! wug would go. Used as the bundled toy pretraining corpus.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::expand::{fill_slots, realize, Head, Member};
use super::{Phenomenon, Property, Template, TemplateError};
use crate::lexicon::{Lexicon, Noun, Verb, VerbClass};

pub const NEGATION_RATE: f64 = 0.3;

/// `count` distinct grammatical sentences spread evenly over the phenomena
/// that have templates.
pub fn synthesize_corpus(
    templates: &[Template],
    lexicon: &Lexicon,
    count: usize,
    rng_seed: u64,
) -> Result<Vec<String>, TemplateError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let phenomena: Vec<(Phenomenon, Vec<&Template>)> = Phenomenon::ALL
        .into_iter()
        .map(|ph| (ph, templates.iter().filter(|t| t.phenomenon == ph).collect::<Vec<_>>()))
        .filter(|(_, ts)| !ts.is_empty())
        .collect();
    if phenomena.is_empty() {
        return Err(TemplateError::MissingTemplate { phenomenon: Phenomenon::ALL[0], what: "any template".into() });
    }
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let max_attempts = 50 * count + 1000;
    for _ in 0..max_attempts {
        if out.len() == count {
            break;
        }
        let (ph, ts) = &phenomena[out.len() % phenomena.len()];
        let t = *ts.choose(&mut rng).expect("nonempty");
        let label = ph.labels().choose(&mut rng).expect("labels");
        let prop = Property::from_label(label).expect("known label");
        let fail = |message: String| TemplateError::BalanceUnsatisfiable { phenomenon: *ph, message };
        // In S-V agr (S) the wug sits in the verb position.
        let verbal = matches!(ph, Phenomenon::Transitive | Phenomenon::Intransitive | Phenomenon::SVAgrS);
        let (head, lemma) = if verbal {
            let class = if *ph == Phenomenon::Intransitive { VerbClass::Intrans } else { VerbClass::Trans };
            let verbs: Vec<&Verb> = lexicon.verbs.iter().filter(|v| v.has_class(class)).collect();
            let v = *verbs.choose(&mut rng).ok_or_else(|| fail(format!("no {class:?} verb")))?;
            (Head::Verb(v), &v.lemma)
        } else {
            let nouns: Vec<&Noun> = lexicon
                .nouns
                .iter()
                .filter(|n| n.animate && n.marks_number() && prop.gender.is_none_or(|g| n.gender == g))
                .collect();
            let n = *nouns.choose(&mut rng).ok_or_else(|| fail(format!("no animate noun for {label}")))?;
            (Head::Noun(n), &n.lemma)
        };
        let fill = fill_slots(t, lexicon, std::slice::from_ref(lemma), &mut rng).map_err(fail)?;
        let neg = t.has_negation() && rng.random_bool(NEGATION_RATE);
        let s = realize(t, &fill, lexicon, prop, head, neg, Member::Good);
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    if out.len() < count {
        return Err(TemplateError::DuplicateExhaustion { template: "synthetic corpus".into(), attempts: max_attempts });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::bundled_templates;

    #[test]
    fn distinct_deterministic_and_tagless() {
        let lex = Lexicon::bundled();
        let t = bundled_templates();
        let a = synthesize_corpus(&t, &lex, 2000, 5).unwrap();
        assert_eq!(a.len(), 2000);
        assert_eq!(a.iter().collect::<HashSet<_>>().len(), 2000);
        assert_eq!(a, synthesize_corpus(&t, &lex, 2000, 5).unwrap());
        assert!(a.iter().all(|s| !s.contains('<') && !s.contains("[WUG]")));
    }

    #[test]
    fn gendered_reflexives_agree() {
        let lex = Lexicon::bundled();
        let t = bundled_templates();
        for s in synthesize_corpus(&t, &lex, 700, 9).unwrap() {
            let words: Vec<&str> = s.split(' ').collect();
            let head = words[1];
            if let Some(n) = lex.noun(head) {
                if words.last() == Some(&"herself") && words.len() <= 6 {
                    assert_eq!(n.gender, crate::lexicon::Gender::Feminine, "{s}");
                }
            }
        }
    }
}
