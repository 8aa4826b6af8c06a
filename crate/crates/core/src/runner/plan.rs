use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentConfig;
use crate::template::{Evidence, InterferenceKind, Phenomenon};
use crate::wug::WugMode;

/// Which evaluation set a run is judged on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// Template-generated pairs of each phenomenon.
    Main,
    /// `<wug> verb reflexive` pairs shared by the attractor/distance kinds.
    Interference,
}

/// One training run. `evidence` is `None` for the n=0 baseline, which is
/// shared by every evidence level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunKey {
    pub suite: Suite,
    pub phenomenon: Phenomenon,
    pub evidence: Option<Evidence>,
    pub n: usize,
    pub seed: u64,
    pub init_std: f64,
    pub wug_mode: WugMode,
}

impl RunKey {
    pub fn evidence_label(&self) -> String {
        self.evidence.map_or_else(|| "none".to_string(), |e| e.label())
    }

    /// Stable human-readable identity, unique within any plan.
    pub fn id(&self) -> String {
        let suite = match self.suite {
            Suite::Main => "main",
            Suite::Interference => "itf",
        };
        format!(
            "{suite}/{}/{}/n{}/s{}/std{}/{}",
            self.phenomenon.name(),
            self.evidence_label(),
            self.n,
            self.seed,
            self.init_std,
            self.wug_mode
        )
    }

    /// Short digest naming the run directory.
    pub fn digest(&self) -> String {
        hex::encode(&Sha256::digest(self.id().as_bytes())[..8])
    }
}

impl fmt::Display for RunKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Interference conditions in table order, then direct evidence.
pub fn interference_levels() -> Vec<Evidence> {
    InterferenceKind::ALL.into_iter().map(Evidence::Interference).chain([Evidence::Direct]).collect()
}

fn cells(
    suite: Suite,
    phenomenon: Phenomenon,
    levels: &[Evidence],
    cfg: &ExperimentConfig,
    seed: u64,
    init_std: f64,
    out: &mut Vec<RunKey>,
) {
    let key = |evidence, n| RunKey { suite, phenomenon, evidence, n, seed, init_std, wug_mode: cfg.wug_mode };
    if cfg.frequencies.contains(&0) {
        out.push(key(None, 0));
    }
    for &e in levels {
        for &n in cfg.frequencies.iter().filter(|&&n| n > 0) {
            out.push(key(Some(e), n));
        }
    }
}

/// Every main-grid run, plus the interference runs when enabled, ordered
/// by (std, seed) and then phenomenon, evidence and n.
pub fn plan_grid(cfg: &ExperimentConfig) -> Vec<RunKey> {
    let mut out = Vec::new();
    for &std in &cfg.init_stds {
        for &seed in &cfg.seeds {
            for &ph in &cfg.phenomena {
                cells(Suite::Main, ph, &cfg.evidence, cfg, seed, std, &mut out);
            }
            if cfg.interference {
                cells(Suite::Interference, Phenomenon::AnaGenAgr, &interference_levels(), cfg, seed, std, &mut out);
            }
        }
    }
    out
}

/// n=0 runs for every phenomenon, std and seed.
pub fn plan_ablation(cfg: &ExperimentConfig) -> Vec<RunKey> {
    let mut out = Vec::new();
    for &ph in &cfg.phenomena {
        for &init_std in &cfg.init_stds {
            for &seed in &cfg.seeds {
                out.push(RunKey { suite: Suite::Main, phenomenon: ph, evidence: None, n: 0, seed, init_std, wug_mode: cfg.wug_mode });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn default_grid_has_133_runs() {
        let cfg = ExperimentConfig::toy();
        let plan = plan_grid(&cfg);
        assert_eq!(plan.len(), 7 * (3 * 6 + 1));
        let ids: HashSet<String> = plan.iter().map(RunKey::id).collect();
        assert_eq!(ids.len(), plan.len());
        assert_eq!(plan.iter().filter(|k| k.n == 0).count(), 7);
    }

    #[test]
    fn small_grid() {
        let cfg = ExperimentConfig {
            phenomena: vec![Phenomenon::DNAgr],
            evidence: vec![Evidence::Direct],
            frequencies: vec![0, 100],
            ..ExperimentConfig::toy()
        };
        let plan = plan_grid(&cfg);
        assert_eq!(plan.len(), 2);
        assert_eq!(plan[0].evidence, None);
        assert_eq!(plan[1].evidence, Some(Evidence::Direct));
        assert_eq!(plan[1].id(), "main/DNAgr/DE/n100/s1/std0.02/tag");
    }

    #[test]
    fn interference_and_ablation_plans() {
        let cfg = ExperimentConfig { interference: true, ..ExperimentConfig::toy() };
        let plan = plan_grid(&cfg);
        let itf: Vec<&RunKey> = plan.iter().filter(|k| k.suite == Suite::Interference).collect();
        assert_eq!(itf.len(), 10 * 6 + 1);
        assert!(itf.iter().all(|k| k.phenomenon == Phenomenon::AnaGenAgr));

        let cfg = ExperimentConfig { seeds: vec![1, 2, 3], init_stds: vec![0.02, 0.002], ..ExperimentConfig::toy() };
        let ab = plan_ablation(&cfg);
        assert_eq!(ab.len(), 7 * 2 * 3);
        assert!(ab.iter().all(|k| k.n == 0));
        let ids: HashSet<String> = plan_grid(&cfg).iter().map(RunKey::id).collect();
        assert_eq!(ids.len(), 133 * 6);
    }
}
