use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::balance::BalanceSpec;
use super::{
    Agree, AlternationKind, Evidence, Feature, MinimalPair, Phenomenon, Property, Slot, Template, TemplateError,
    TemplateUse, TrainingInstance,
};
use crate::lexicon::{Gender, Lexicon, Noun, Verb, VerbClass, VerbForm};
use crate::wug::{surface_form, Number, WugEntry};

const MODALS: &[&str] = &["can", "will", "should", "must", "might", "could", "would", "may"];
const QUANT_SG: &[&str] = &["every", "each", "one", "another"];
const QUANT_PL: &[&str] = &["some", "many", "several", "few", "two", "three", "all"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpandConfig {
    /// Filled frames per phenomenon; each is realized once per tag set.
    pub frames: usize,
    pub tag_sets: usize,
    /// Fraction of frames realized with their negation slot.
    pub negation_rate: f64,
    pub max_attempts: usize,
}

impl Default for ExpandConfig {
    fn default() -> Self {
        ExpandConfig { frames: 200, tag_sets: 3, negation_rate: 0.3, max_attempts: 2000 }
    }
}

impl ExpandConfig {
    pub fn pairs_per_phenomenon(&self) -> usize {
        self.frames * self.tag_sets
    }
}

/// Which templates and content lemmas produced one frame; kept for auditing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRecord {
    pub eval_template: String,
    pub lexie_template: String,
    pub synie_template: String,
    pub eval_lemmas: Vec<String>,
    pub lexie_lemmas: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    pub eval: Vec<MinimalPair>,
    pub lexie: Vec<TrainingInstance>,
    pub synie: Vec<TrainingInstance>,
    #[serde(skip)]
    pub frames: Vec<FrameRecord>,
}

impl Expansion {
    pub fn de(&self) -> Vec<TrainingInstance> {
        derive_de(&self.eval)
    }

    pub fn train(&self, evidence: Evidence) -> Vec<TrainingInstance> {
        match evidence {
            Evidence::Direct => self.de(),
            Evidence::LexicalIndirect => self.lexie.clone(),
            Evidence::SyntacticIndirect => self.synie.clone(),
            Evidence::Interference(_) => Vec::new(),
        }
    }

    fn append(&mut self, mut other: Expansion) {
        self.eval.append(&mut other.eval);
        self.lexie.append(&mut other.lexie);
        self.synie.append(&mut other.synie);
        self.frames.append(&mut other.frames);
    }
}

pub fn derive_de(eval: &[MinimalPair]) -> Vec<TrainingInstance> {
    eval.iter()
        .map(|p| TrainingInstance {
            instance_id: format!("{}-de", p.pair_id),
            phenomenon: p.phenomenon,
            evidence: Evidence::Direct,
            wug_id: p.wug_id,
            wug: p.wug.clone(),
            sentence: p.good.clone(),
        })
        .collect()
}

/// Expands every phenomenon that has templates, with equal label balance.
/// Phenomena take consecutive blocks of `wugs` in canonical order.
pub fn expand(
    templates: &[Template],
    lexicon: &Lexicon,
    wugs: &[WugEntry],
    cfg: &ExpandConfig,
    rng_seed: u64,
) -> Result<Expansion, TemplateError> {
    let per = cfg.pairs_per_phenomenon();
    let mut out = Expansion::default();
    let present = Phenomenon::ALL.into_iter().filter(|p| templates.iter().any(|t| t.phenomenon == *p));
    for (k, ph) in present.enumerate() {
        let start = (k * per).min(wugs.len());
        let spec = BalanceSpec::equal(ph, per)?;
        out.append(expand_phenomenon(ph, templates, lexicon, &wugs[start..], &spec, cfg, phenomenon_seed(rng_seed, ph))?);
    }
    Ok(out)
}

pub(crate) fn phenomenon_seed(seed: u64, ph: Phenomenon) -> u64 {
    seed ^ (ph as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn expand_phenomenon(
    ph: Phenomenon,
    templates: &[Template],
    lexicon: &Lexicon,
    wugs: &[WugEntry],
    balance: &BalanceSpec,
    cfg: &ExpandConfig,
    rng_seed: u64,
) -> Result<Expansion, TemplateError> {
    let (f, tsets) = (cfg.frames, cfg.tag_sets);
    let unsat = |message: String| TemplateError::BalanceUnsatisfiable { phenomenon: ph, message };
    let of_use = |u| templates.iter().filter(|t| t.phenomenon == ph && t.has_use(u)).collect::<Vec<_>>();
    let (evals, lexies, synies) = (of_use(TemplateUse::Eval), of_use(TemplateUse::Lexie), of_use(TemplateUse::Synie));
    if evals.is_empty() {
        return Err(TemplateError::MissingTemplate { phenomenon: ph, what: "evaluation pairs".into() });
    }
    if balance.total() != f * tsets {
        return Err(unsat(format!("targets sum to {} but {f} frames x {tsets} tag sets were requested", balance.total())));
    }
    if wugs.len() < f * tsets {
        return Err(TemplateError::NotEnoughWugs { phenomenon: ph, needed: f * tsets, available: wugs.len() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut labels = Vec::with_capacity(f);
    for (label, &count) in &balance.targets {
        if count % tsets != 0 {
            return Err(unsat(format!("{count} {label} pairs do not split across {tsets} tag sets")));
        }
        let prop = Property::from_label(label).ok_or_else(|| unsat(format!("unknown label {label:?}")))?;
        labels.extend(std::iter::repeat_n((label.clone(), prop), count / tsets));
    }
    labels.shuffle(&mut rng);

    // Negated frames draw from templates that have a negation slot.
    let negatable: Vec<&Template> = evals.iter().copied().filter(|t| t.has_negation()).collect();
    let n_neg = if negatable.is_empty() { 0 } else { (cfg.negation_rate * f as f64).round() as usize };
    let mut order: Vec<usize> = (0..f).collect();
    order.shuffle(&mut rng);
    let mut negated = vec![false; f];
    for &i in &order[..n_neg.min(f)] {
        negated[i] = true;
    }
    let (mut next_neg, mut next_any) = (0, 0);
    let assigned: Vec<&Template> = negated
        .iter()
        .map(|&neg| {
            if neg {
                next_neg += 1;
                negatable[(next_neg - 1) % negatable.len()]
            } else {
                next_any += 1;
                evals[(next_any - 1) % evals.len()]
            }
        })
        .collect();

    let placeholder = WugEntry { id: wugs[0].id, mode: wugs[0].mode, stem: "[WUG]".into() };
    let mut seen: HashSet<String> = HashSet::new();
    let mut frames = Vec::with_capacity(f);
    for i in 0..f {
        let t = assigned[i];
        let (_, prop) = labels[i];
        let neg = negated[i];

        let eval_fill = fresh(t, lexicon, &[], &mut rng, cfg.max_attempts, &mut seen, ph, |fill| {
            let good = realize(t, fill, lexicon, prop, Head::Wug(&placeholder), neg, Member::Good);
            let bad = realize(t, fill, lexicon, prop, Head::Wug(&placeholder), neg, Member::Bad);
            (good != bad).then_some(vec![good, bad])
        })?;

        let same_shape: Vec<&Template> = lexies.iter().copied().filter(|l| l.skeleton() == t.skeleton()).collect();
        let lt = *same_shape
            .choose(&mut rng)
            .ok_or_else(|| TemplateError::MissingTemplate { phenomenon: ph, what: format!("LexIE with the shape of {}", t.id) })?;
        let taken = lemmas(t, &eval_fill, lexicon);
        let lneg = neg && lt.has_negation();
        let lexie_fill = fresh(lt, lexicon, &taken, &mut rng, cfg.max_attempts, &mut seen, ph, |fill| {
            Some(vec![realize(lt, fill, lexicon, prop, Head::Wug(&placeholder), lneg, Member::Good)])
        })?;

        let other_shape: Vec<&Template> = synies.iter().copied().filter(|s| s.skeleton() != t.skeleton()).collect();
        let st = *other_shape
            .choose(&mut rng)
            .ok_or_else(|| TemplateError::MissingTemplate { phenomenon: ph, what: format!("SynIE unlike {}", t.id) })?;
        let synie_fill = fresh(st, lexicon, &[], &mut rng, cfg.max_attempts, &mut seen, ph, |fill| {
            Some(vec![realize(st, fill, lexicon, prop, Head::Wug(&placeholder), false, Member::Good)])
        })?;

        frames.push(Frame { prop, label: labels[i].0.clone(), neg, eval: (t, eval_fill), lexie: (lt, lneg, lexie_fill), synie: (st, synie_fill) });
    }

    let mut out = Expansion::default();
    for k in 0..tsets {
        for (i, fr) in frames.iter().enumerate() {
            let wug = &wugs[k * f + i];
            let surface = wug_surface(wug, fr.prop);
            let pair_id = format!("{}-t{k}-{i:03}", ph.slug());
            let (t, fill) = (fr.eval.0, &fr.eval.1);
            out.eval.push(MinimalPair {
                pair_id: pair_id.clone(),
                phenomenon: ph,
                wug_id: wug.id,
                wug: surface.clone(),
                property: fr.label.clone(),
                good: realize(t, fill, lexicon, fr.prop, Head::Wug(wug), fr.neg, Member::Good),
                bad: realize(t, fill, lexicon, fr.prop, Head::Wug(wug), fr.neg, Member::Bad),
            });
            let instance = |suffix: &str, evidence, sentence| TrainingInstance {
                instance_id: format!("{pair_id}-{suffix}"),
                phenomenon: ph,
                evidence,
                wug_id: wug.id,
                wug: surface.clone(),
                sentence,
            };
            let (lt, lneg, lfill) = &fr.lexie;
            out.lexie.push(instance(
                "lexie",
                Evidence::LexicalIndirect,
                realize(lt, lfill, lexicon, fr.prop, Head::Wug(wug), *lneg, Member::Good),
            ));
            let (st, sfill) = &fr.synie;
            out.synie.push(instance(
                "synie",
                Evidence::SyntacticIndirect,
                realize(st, sfill, lexicon, fr.prop, Head::Wug(wug), false, Member::Good),
            ));
        }
    }
    out.frames = frames
        .iter()
        .map(|fr| FrameRecord {
            eval_template: fr.eval.0.id.clone(),
            lexie_template: fr.lexie.0.id.clone(),
            synie_template: fr.synie.0.id.clone(),
            eval_lemmas: lemmas(fr.eval.0, &fr.eval.1, lexicon),
            lexie_lemmas: lemmas(fr.lexie.0, &fr.lexie.2, lexicon),
        })
        .collect();

    let mut all = HashSet::new();
    let sentences = out.eval.iter().flat_map(|p| [&p.good, &p.bad]).chain(out.lexie.iter().chain(&out.synie).map(|x| &x.sentence));
    for s in sentences {
        if !all.insert(s) {
            return Err(TemplateError::DuplicateExhaustion { template: format!("realized sentence {s:?}"), attempts: 1 });
        }
    }
    Ok(out)
}

struct Frame<'a> {
    prop: Property,
    label: String,
    neg: bool,
    eval: (&'a Template, Vec<Fill>),
    lexie: (&'a Template, bool, Vec<Fill>),
    synie: (&'a Template, Vec<Fill>),
}

/// Fills `t` repeatedly until `check` accepts and its sentences are unseen.
#[allow(clippy::too_many_arguments)]
fn fresh<F>(
    t: &Template,
    lexicon: &Lexicon,
    exclude: &[String],
    rng: &mut ChaCha8Rng,
    max_attempts: usize,
    seen: &mut HashSet<String>,
    ph: Phenomenon,
    check: F,
) -> Result<Vec<Fill>, TemplateError>
where
    F: Fn(&[Fill]) -> Option<Vec<String>>,
{
    for _ in 0..max_attempts {
        let fill = fill_slots(t, lexicon, exclude, rng)
            .map_err(|message| TemplateError::BalanceUnsatisfiable { phenomenon: ph, message: format!("{}: {message}", t.id) })?;
        if let Some(sentences) = check(&fill) {
            if sentences.iter().all(|s| !seen.contains(s)) {
                seen.extend(sentences);
                return Ok(fill);
            }
        }
    }
    Err(TemplateError::DuplicateExhaustion { template: t.id.clone(), attempts: max_attempts })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(super) struct Fill {
    noun: Option<usize>,
    verb: Option<usize>,
    number: Option<Number>,
    distal: bool,
    pick: usize,
}

pub(super) fn fill_slots(t: &Template, lexicon: &Lexicon, exclude: &[String], rng: &mut ChaCha8Rng) -> Result<Vec<Fill>, String> {
    let mut used: Vec<&str> = Vec::new();
    let mut out = Vec::with_capacity(t.slots.len());
    for slot in &t.slots {
        let mut fill = Fill { number: Some(random_number(rng)), distal: rng.random_bool(0.5), pick: rng.random_range(0..64), ..Fill::default() };
        match slot {
            Slot::Noun { gender, animate, lemma, .. } => {
                let idx = match lemma {
                    Some(l) => lexicon.nouns.iter().position(|n| &n.lemma == l).ok_or(format!("lexicon lacks noun {l:?}"))?,
                    None => {
                        let cands: Vec<usize> = (0..lexicon.nouns.len())
                            .filter(|&i| {
                                let n = &lexicon.nouns[i];
                                n.marks_number()
                                    && gender.is_none_or(|g| n.gender == g)
                                    && animate.is_none_or(|a| n.animate == a)
                                    && !used.contains(&n.lemma.as_str())
                                    && !exclude.contains(&n.lemma)
                            })
                            .collect();
                        *cands.choose(rng).ok_or("no noun satisfies the slot constraints")?
                    }
                };
                used.push(&lexicon.nouns[idx].lemma);
                fill.noun = Some(idx);
            }
            Slot::Verb { class, lemma, .. } => {
                let idx = match lemma {
                    Some(l) => lexicon.verbs.iter().position(|v| &v.lemma == l).ok_or(format!("lexicon lacks verb {l:?}"))?,
                    None => {
                        let cands: Vec<usize> = (0..lexicon.verbs.len())
                            .filter(|&i| {
                                let v = &lexicon.verbs[i];
                                class.is_none_or(|c: VerbClass| v.has_class(c))
                                    && !used.contains(&v.lemma.as_str())
                                    && !exclude.contains(&v.lemma)
                            })
                            .collect();
                        *cands.choose(rng).ok_or("no verb satisfies the slot constraints")?
                    }
                };
                used.push(&lexicon.verbs[idx].lemma);
                fill.verb = Some(idx);
            }
            _ => {}
        }
        out.push(fill);
    }
    Ok(out)
}

fn random_number(rng: &mut ChaCha8Rng) -> Number {
    if rng.random_bool(0.5) {
        Number::Singular
    } else {
        Number::Plural
    }
}

fn lemmas(t: &Template, fill: &[Fill], lexicon: &Lexicon) -> Vec<String> {
    t.slots
        .iter()
        .zip(fill)
        .filter_map(|(s, f)| match s {
            Slot::Noun { .. } => f.noun.map(|i| lexicon.nouns[i].lemma.clone()),
            Slot::Verb { .. } => f.verb.map(|i| lexicon.verbs[i].lemma.clone()),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Member {
    Good,
    Bad,
}

fn wug_surface(wug: &WugEntry, prop: Property) -> String {
    surface_form(wug, prop.number_or_singular())
}

fn resolve(agree: Agree, fill: &Fill, prop: Property) -> Number {
    match agree {
        Agree::Prop => prop.number_or_singular(),
        Agree::Singular => Number::Singular,
        Agree::Plural => Number::Plural,
        Agree::Any => fill.number.unwrap_or(Number::Singular),
    }
}

/// What fills the wug slot: a coined word, or a real word when synthesizing
/// background text from the same templates.
#[derive(Clone, Copy)]
pub(super) enum Head<'a> {
    Wug(&'a WugEntry),
    Noun(&'a Noun),
    Verb(&'a Verb),
}


pub(super) fn realize(
    t: &Template,
    fill: &[Fill],
    lexicon: &Lexicon,
    prop: Property,
    wug: Head<'_>,
    negated: bool,
    member: Member,
) -> String {
    let mut words: Vec<String> = Vec::new();
    for (i, (slot, f)) in t.slots.iter().zip(fill).enumerate() {
        let alt = t.alternate.filter(|a| a.slot == i).map(|a| a.kind);
        let p = match (alt, member) {
            (Some(AlternationKind::Drop), Member::Bad) | (Some(AlternationKind::Insert), Member::Good) => continue,
            (Some(AlternationKind::Flip), Member::Bad) => prop.flipped(),
            _ => prop,
        };
        match slot {
            Slot::Lit { text } => words.push(text.clone()),
            Slot::Wug { number, suffix } => {
                let n = match number {
                    Agree::Prop => p.number_or_singular(),
                    Agree::Plural => Number::Plural,
                    _ => Number::Singular,
                };
                match wug {
                    Head::Verb(v) => {
                        let form = match suffix.as_str() {
                            "ed" => VerbForm::Past,
                            "ing" => VerbForm::Gerund,
                            _ if t.phenomenon == Phenomenon::SVAgrS => VerbForm::Agree,
                            _ => VerbForm::Base,
                        };
                        words.push(v.form(form, p.number_or_singular()).into());
                    }
                    Head::Noun(noun) => {
                        let determined = i > 0
                            && match &t.slots[i - 1] {
                                Slot::Dem { .. } | Slot::Quant { .. } | Slot::Poss { .. } => true,
                                Slot::Lit { text } => matches!(text.as_str(), "the" | "a" | "an"),
                                _ => false,
                            };
                        if !determined {
                            words.push("the".into());
                        }
                        words.push(format!("{}{suffix}", noun.form(n)));
                    }
                    Head::Wug(w) => words.push(format!("{}{suffix}", surface_form(w, n))),
                }
            }
            Slot::Noun { number, det, .. } => {
                let form = lexicon.nouns[f.noun.expect("filled noun")].form(resolve(*number, f, p));
                match det.as_deref() {
                    Some("a") if form.starts_with(['a', 'e', 'i', 'o', 'u']) => words.push("an".into()),
                    Some(d) => words.push(d.into()),
                    None => {}
                }
                words.push(form.into());
            }
            Slot::Verb { form, number, .. } => {
                words.push(lexicon.verbs[f.verb.expect("filled verb")].form(*form, resolve(*number, f, p)).into())
            }
            Slot::Aux { number, past } => {
                let w = match (resolve(*number, f, p), past) {
                    (Number::Singular, false) => "is",
                    (Number::Plural, false) => "are",
                    (Number::Singular, true) => "was",
                    (Number::Plural, true) => "were",
                };
                words.push(w.into());
            }
            Slot::Modal => words.push(MODALS[f.pick % MODALS.len()].into()),
            Slot::Dem { number } => {
                let distal = if *number == Agree::Prop { p.distal } else { f.distal };
                let w = match (resolve(*number, f, p), distal) {
                    (Number::Singular, false) => "this",
                    (Number::Singular, true) => "that",
                    (Number::Plural, false) => "these",
                    (Number::Plural, true) => "those",
                };
                words.push(w.into());
            }
            Slot::Quant { number } => {
                let list = match resolve(*number, f, p) {
                    Number::Singular => QUANT_SG,
                    Number::Plural => QUANT_PL,
                };
                words.push(list[f.pick % list.len()].into());
            }
            Slot::Refl { by } => words.push(pronoun(*by, p, ["herself", "himself", "itself", "themselves"]).into()),
            Slot::Poss { by } => words.push(pronoun(*by, p, ["her", "his", "its", "their"]).into()),
            Slot::Pron { by } => words.push(pronoun(*by, p, ["she", "he", "it", "they"]).into()),
            Slot::Neg { word } => {
                if negated {
                    words.push(word.clone());
                }
            }
        }
    }
    words.join(" ")
}

/// `forms` is [feminine, masculine, singular/neutral, plural].
fn pronoun(by: Feature, p: Property, forms: [&'static str; 4]) -> &'static str {
    match by {
        Feature::Gender => match p.gender_or_feminine() {
            Gender::Feminine => forms[0],
            Gender::Masculine => forms[1],
            Gender::Neutral => forms[2],
        },
        Feature::Number => match p.number_or_singular() {
            Number::Singular => forms[2],
            Number::Plural => forms[3],
        },
    }
}
