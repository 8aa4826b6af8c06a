use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{MinimalPair, Phenomenon, TemplateError};

/// Words whose presence marks a sentence as negated.
pub const NEGATION_WORDS: &[&str] = &["not", "never", "no", "nobody", "nothing"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceSpec {
    /// Target number of pairs per property label over the whole set.
    pub targets: BTreeMap<String, usize>,
    pub negation_min: f64,
    pub negation_max: f64,
}

impl BalanceSpec {
    /// Equal split of `total` pairs across the phenomenon's labels.
    pub fn equal(phenomenon: Phenomenon, total: usize) -> Result<Self, TemplateError> {
        let labels = phenomenon.labels();
        if !total.is_multiple_of(labels.len()) {
            return Err(TemplateError::BalanceUnsatisfiable {
                phenomenon,
                message: format!("{total} pairs do not split evenly across {} labels", labels.len()),
            });
        }
        let each = total / labels.len();
        Ok(BalanceSpec {
            targets: labels.iter().map(|l| (l.to_string(), each)).collect(),
            negation_min: 0.10,
            negation_max: 0.50,
        })
    }

    pub fn total(&self) -> usize {
        self.targets.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintResult {
    pub constraint: String,
    pub expected: String,
    pub observed: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub counts: BTreeMap<String, usize>,
    pub total: usize,
    /// `None` for an empty set.
    pub negation_rate: Option<f64>,
    pub constraints: Vec<ConstraintResult>,
}

impl BalanceReport {
    pub fn pass(&self) -> bool {
        self.constraints.iter().all(|c| c.pass)
    }
}

pub fn is_negated(sentence: &str) -> bool {
    sentence.split_whitespace().any(|w| NEGATION_WORDS.contains(&w))
}

pub fn check_balance(pairs: &[MinimalPair], spec: &BalanceSpec) -> BalanceReport {
    let mut counts: BTreeMap<String, usize> = spec.targets.keys().map(|k| (k.clone(), 0)).collect();
    for p in pairs {
        *counts.entry(p.property.clone()).or_default() += 1;
    }
    let negated = pairs.iter().filter(|p| is_negated(&p.good)).count();
    let negation_rate = (!pairs.is_empty()).then(|| negated as f64 / pairs.len() as f64);

    let mut constraints = Vec::new();
    for (label, &observed) in &counts {
        let expected = spec.targets.get(label).copied().unwrap_or(0);
        constraints.push(ConstraintResult {
            constraint: format!("count[{label}]"),
            expected: expected.to_string(),
            observed: observed.to_string(),
            pass: observed == expected,
        });
    }
    constraints.push(ConstraintResult {
        constraint: "negation_rate".into(),
        expected: format!("[{:.2}, {:.2}]", spec.negation_min, spec.negation_max),
        observed: negation_rate.map_or_else(|| "undefined".into(), |r| format!("{r:.4}")),
        pass: negation_rate.is_some_and(|r| r >= spec.negation_min && r <= spec.negation_max),
    });
    BalanceReport { counts, total: pairs.len(), negation_rate, constraints }
}
