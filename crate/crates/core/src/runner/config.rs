use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunnerError;
use crate::eval::ScoringMethod;
use crate::mlm::{MaskingPolicy, ModelConfig, OptimizerConfig};
use crate::template::{Evidence, ExpandConfig, Phenomenon};
use crate::wug::WugMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Paper,
    #[default]
    Toy,
}

impl std::str::FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Scale::Paper),
            "toy" => Ok(Scale::Toy),
            _ => Err(format!("unknown scale {s:?} (paper|toy)")),
        }
    }
}

/// Where the base corpus comes from: a file of raw lines, or sentences
/// synthesized from the bundled templates and lexicon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub path: Option<PathBuf>,
    pub synthetic_sentences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scale: Scale,
    pub phenomena: Vec<Phenomenon>,
    pub evidence: Vec<Evidence>,
    pub frequencies: Vec<usize>,
    pub seeds: Vec<u64>,
    pub init_stds: Vec<f64>,
    pub wug_mode: WugMode,
    pub methods: Vec<ScoringMethod>,
    /// Also plan the attractor/distance runs for AnaGenAgr.
    pub interference: bool,
    pub interference_wugs: usize,
    pub corpus: CorpusConfig,
    pub templates: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub seed_nouns: Option<PathBuf>,
    pub expand: ExpandConfig,
    /// Seeds corpus synthesis, preprocessing, expansion and wug generation.
    pub data_seed: u64,
    pub epochs: usize,
    /// Tokenizer vocabulary including specials and wug tags.
    pub vocab_size: usize,
    /// `vocab_size` and `init_std` are filled in per run.
    pub model: ModelConfig,
    pub optim: OptimizerConfig,
    pub masking: MaskingPolicy,
    pub checkpoint_every: Option<u64>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ExperimentConfig {
    pub fn toy() -> Self {
        ExperimentConfig {
            scale: Scale::Toy,
            phenomena: Phenomenon::ALL.to_vec(),
            evidence: Evidence::LEVELS.to_vec(),
            frequencies: vec![0, 1, 5, 25, 50, 75, 100],
            seeds: vec![1],
            init_stds: vec![0.02],
            wug_mode: WugMode::Tag,
            methods: ScoringMethod::ALL.to_vec(),
            interference: false,
            interference_wugs: 100,
            corpus: CorpusConfig { path: None, synthetic_sentences: 20_000 },
            templates: None,
            lexicon: None,
            seed_nouns: None,
            expand: ExpandConfig { frames: 100, tag_sets: 1, ..ExpandConfig::default() },
            data_seed: 7,
            epochs: 4,
            vocab_size: 1800,
            model: ModelConfig {
                layers: 2,
                heads: 4,
                hidden: 128,
                intermediate: 512,
                dropout: 0.1,
                layer_norm_eps: 1e-12,
                init_std: 0.02,
                max_seq_len: 64,
                vocab_size: 0,
            },
            optim: OptimizerConfig { lr: 1e-3, warmup_steps: 100, batch: 32, grad_accum: 1, ..OptimizerConfig::default() },
            masking: MaskingPolicy::default(),
            checkpoint_every: Some(500),
            out_dir: PathBuf::from("wuglab-out"),
        }
    }

    /// Table-6 model and optimizer, 600 pairs per phenomenon, 18 epochs.
    /// The corpus file has to be supplied.
    pub fn paper() -> Self {
        ExperimentConfig {
            scale: Scale::Paper,
            corpus: CorpusConfig { path: None, synthetic_sentences: 0 },
            expand: ExpandConfig::default(),
            interference_wugs: 600,
            epochs: 18,
            vocab_size: 9600,
            model: ModelConfig::paper(0),
            optim: OptimizerConfig::default(),
            checkpoint_every: Some(5000),
            ..Self::toy()
        }
    }

    pub fn preset(scale: Scale) -> Self {
        match scale {
            Scale::Paper => Self::paper(),
            Scale::Toy => Self::toy(),
        }
    }

    /// Reads a JSON document; absent fields come from the preset named by
    /// its `scale` (toy when unspecified).
    pub fn from_json(text: &str) -> Result<Self, RunnerError> {
        let mut doc: serde_json::Value = serde_json::from_str(text)?;
        let scale: Scale = match doc.get("scale") {
            Some(s) => serde_json::from_value(s.clone())?,
            None => Scale::Toy,
        };
        let mut base = serde_json::to_value(Self::preset(scale))?;
        merge(&mut base, doc.take());
        let cfg: ExperimentConfig = serde_json::from_value(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunnerError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let bad = |m: &str| Err(RunnerError::Config(m.into()));
        if !self.frequencies.windows(2).all(|w| w[0] < w[1]) {
            return bad("frequencies must be sorted and distinct");
        }
        if self.seeds.is_empty() || self.init_stds.is_empty() || self.methods.is_empty() {
            return bad("seeds, init_stds and methods must be nonempty");
        }
        if self.init_stds.iter().any(|s| !(*s > 0.0)) {
            return bad("init_stds must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.corpus.path.is_none() && self.corpus.synthetic_sentences == 0 {
            return bad("either corpus.path or corpus.synthetic_sentences is required");
        }
        if self.evidence.iter().any(|e| matches!(e, Evidence::Interference(_))) {
            return bad("interference kinds are planned through `interference`, not `evidence`");
        }
        self.optim.validate().map_err(|e| RunnerError::Config(e.to_string()))?;
        self.masking.validate().map_err(|e| RunnerError::Config(e.to_string()))?;
        Ok(())
    }

    /// Model config for one run.
    pub fn model_for(&self, vocab_size: usize, init_std: f64) -> ModelConfig {
        ModelConfig { vocab_size, init_std, ..self.model.clone() }
    }

    /// Wugs consumed by the main grid and the interference set.
    pub fn wug_count(&self) -> usize {
        Phenomenon::ALL.len() * self.expand.pairs_per_phenomenon() + if self.interference { self.interference_wugs } else { 0 }
    }
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}
