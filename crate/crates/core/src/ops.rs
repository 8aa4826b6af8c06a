//! Request/response operations behind the service and CLI. Paths are
//! resolved on the machine running the operation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{build_stream, preprocess, read_lines, verify_counts_file, CleanCorpus};
use crate::eval::{accuracy, applicable, encode_pair, EvalResult, ModelScorer, ScoringMethod};
use crate::lexicon::{bundled_seed_nouns, Lexicon, VerbClass};
use crate::mlm::{Checkpoint, MaskingPolicy, Model, ModelConfig, OptimizerConfig, TrainOptions, Trainer};
use crate::runner::{
    emit_report, plan_ablation, plan_grid, write_atomic, ExperimentConfig, GridSummary, Report, ResultStore, Runner,
    RunnerError,
};
use crate::template::{
    bundled_templates, check_balance, expand, from_jsonl, make_interference_set, parse_template_file, to_jsonl,
    BalanceSpec, ExpandConfig, InterferenceKind, MinimalPair, NounBanks, Phenomenon, TrainingInstance,
};
use crate::tokenizer::{train_bpe, TokenizerModel};
use crate::wug::{generate_pseudowords, make_tag_lexicon, read_seed_lexicon, renumber, WugLexicon, WugMode};

fn read(path: &Path) -> Result<String, RunnerError> {
    std::fs::read_to_string(path).map_err(|e| RunnerError::io(path, e))
}

fn mkdir(path: &Path) -> Result<(), RunnerError> {
    std::fs::create_dir_all(path).map_err(|e| RunnerError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgeRequest {
    pub mode: WugMode,
    pub count: usize,
    #[serde(default)]
    pub start_id: u32,
    /// Pseudoword mode only; the bundled noun list when absent.
    #[serde(default)]
    pub seed_nouns: Option<PathBuf>,
    #[serde(default = "default_per_seed")]
    pub per_seed: usize,
    #[serde(default)]
    pub seed: u64,
    pub out: PathBuf,
}

fn default_per_seed() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgeResponse {
    pub path: PathBuf,
    pub count: usize,
    pub sample: Vec<String>,
}

pub fn forge(req: &ForgeRequest) -> Result<ForgeResponse, RunnerError> {
    let lex = match req.mode {
        WugMode::Pseudoword => {
            let seeds = match &req.seed_nouns {
                Some(p) => read_seed_lexicon(read(p)?.as_bytes())?,
                None => bundled_seed_nouns(),
            };
            renumber(generate_pseudowords(&seeds, req.per_seed, req.count, req.seed)?, req.start_id)
        }
        mode => make_tag_lexicon(req.count, req.start_id, mode)?,
    };
    write_atomic(&req.out, lex.to_jsonl().as_bytes())?;
    Ok(ForgeResponse { path: req.out.clone(), count: lex.len(), sample: lex.entries.iter().take(5).map(|e| e.stem.clone()).collect() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub wugs: PathBuf,
    #[serde(default)]
    pub templates: Option<PathBuf>,
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub expand: ExpandConfig,
    #[serde(default)]
    pub seed: u64,
    /// Also emit the attractor/distance sets from wugs left after the main
    /// phenomena.
    #[serde(default)]
    pub interference: bool,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenResponse {
    pub files: Vec<PathBuf>,
    pub eval_pairs: usize,
    pub instances: usize,
    /// Phenomenon → whether its evaluation pairs meet the balance constraints.
    pub balanced: BTreeMap<String, bool>,
}

pub fn gen(req: &GenRequest) -> Result<GenResponse, RunnerError> {
    let wugs = WugLexicon::from_jsonl(&read(&req.wugs)?)?;
    let lexicon = match &req.lexicon {
        Some(p) => Lexicon::from_jsonl(&read(p)?)?,
        None => Lexicon::bundled(),
    };
    let templates = match &req.templates {
        Some(p) => parse_template_file(read(p)?.as_bytes())?,
        None => bundled_templates(),
    };
    let main = Phenomenon::ALL.len() * req.expand.pairs_per_phenomenon();
    if wugs.len() < main {
        return Err(RunnerError::Config(format!("{} wugs given, {main} needed", wugs.len())));
    }
    let x = expand(&templates, &lexicon, &wugs.entries[..main], &req.expand, req.seed)?;
    mkdir(&req.out_dir)?;
    let mut files = Vec::new();
    let mut put = |name: &str, text: String| -> Result<(), RunnerError> {
        let p = req.out_dir.join(name);
        write_atomic(&p, text.as_bytes())?;
        files.push(p);
        Ok(())
    };
    let de = x.de();
    put("eval.jsonl", to_jsonl(&x.eval))?;
    put("de.jsonl", to_jsonl(&de))?;
    put("lexie.jsonl", to_jsonl(&x.lexie))?;
    put("synie.jsonl", to_jsonl(&x.synie))?;
    let mut instances = de.len() + x.lexie.len() + x.synie.len();
    if req.interference {
        let rest = &wugs.entries[main..];
        if rest.is_empty() {
            return Err(RunnerError::Config("no wugs left for the interference sets".into()));
        }
        let banks = NounBanks::from_lexicon(&lexicon);
        let verbs: Vec<_> = lexicon.verbs.iter().filter(|v| v.has_class(VerbClass::Refl)).cloned().collect();
        for kind in InterferenceKind::ALL {
            let set = make_interference_set(kind, &banks, &verbs, rest, req.seed)?;
            instances += set.train.len();
            put(&format!("interference_{}.jsonl", kind.label().to_ascii_lowercase()), to_jsonl(&set.train))?;
            if kind == InterferenceKind::At0 {
                put("interference_de.jsonl", to_jsonl(&crate::template::derive_de(&set.eval)))?;
                put("interference_eval.jsonl", to_jsonl(&set.eval))?;
            }
        }
    }
    let mut balanced = BTreeMap::new();
    for ph in Phenomenon::ALL {
        let pairs: Vec<MinimalPair> = x.eval.iter().filter(|p| p.phenomenon == ph).cloned().collect();
        if !pairs.is_empty() {
            let spec = BalanceSpec::equal(ph, pairs.len())?;
            balanced.insert(ph.name().to_string(), check_balance(&pairs, &spec).pass());
        }
    }
    Ok(GenResponse { files, eval_pairs: x.eval.len(), instances, balanced })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectRequest {
    /// Raw corpus lines; cleaned first unless `clean` is set.
    pub corpus: PathBuf,
    #[serde(default)]
    pub clean: bool,
    pub instances: Vec<PathBuf>,
    pub n: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
}

fn default_epochs() -> usize {
    crate::corpus::DEFAULT_EPOCHS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectResponse {
    pub stream: PathBuf,
    pub stream_lines: usize,
    pub instances: usize,
    /// Every instance counted exactly `n` times in the written file.
    pub verified: bool,
    pub mismatches: Vec<String>,
}

pub fn inject(req: &InjectRequest) -> Result<InjectResponse, RunnerError> {
    let lines = read_lines(&req.corpus)?;
    let corpus = if req.clean {
        CleanCorpus { sentences: lines, source: req.corpus.display().to_string(), version: crate::corpus::PREPROCESS_VERSION.into() }
    } else {
        preprocess(&lines, req.seed, &req.corpus.display().to_string())
    };
    let mut instances: Vec<TrainingInstance> = Vec::new();
    for p in &req.instances {
        instances.extend(from_jsonl::<TrainingInstance>(&read(p)?)?);
    }
    let stream = build_stream(&corpus, &instances, req.n, req.epochs, req.seed)?;
    stream.write_to(&req.out_dir)?;
    let path = req.out_dir.join("stream.txt");
    let counts = verify_counts_file(&path, &instances)?;
    let mismatches: Vec<String> =
        counts.iter().filter(|(_, &c)| c != req.n).map(|(id, c)| format!("{id}: {c} (expected {})", req.n)).collect();
    Ok(InjectResponse { stream: path, stream_lines: stream.len(), instances: instances.len(), verified: mismatches.is_empty(), mismatches })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokTrainRequest {
    pub corpus: PathBuf,
    pub vocab_size: usize,
    /// Wug lexicon whose tags become atomic specials.
    #[serde(default)]
    pub wugs: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokTrainResponse {
    pub path: PathBuf,
    pub vocab_size: usize,
    pub specials: usize,
    pub sha256: String,
}

pub fn tok_train(req: &TokTrainRequest) -> Result<TokTrainResponse, RunnerError> {
    let lines = read_lines(&req.corpus)?;
    let specials: Vec<String> = match &req.wugs {
        Some(p) => {
            let lex = WugLexicon::from_jsonl(&read(p)?)?;
            if lex.mode == WugMode::Pseudoword { Vec::new() } else { lex.entries.into_iter().map(|e| e.stem).collect() }
        }
        None => Vec::new(),
    };
    let tok = train_bpe(&lines, req.vocab_size, &specials)?;
    let json = tok.to_json();
    write_atomic(&req.out, json.as_bytes())?;
    use sha2::Digest;
    Ok(TokTrainResponse {
        path: req.out.clone(),
        vocab_size: tok.vocab_size(),
        specials: specials.len(),
        sha256: hex::encode(sha2::Sha256::digest(json.as_bytes())),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    /// One training line per line, e.g. a `stream.txt` from `inject`.
    pub stream: PathBuf,
    pub tokenizer: PathBuf,
    /// `vocab_size` is taken from the tokenizer.
    pub model: ModelConfig,
    pub optim: OptimizerConfig,
    #[serde(default)]
    pub masking: MaskingPolicy,
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
    /// Continue from `out_dir/latest.ckpt` when present.
    #[serde(default)]
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResponse {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub steps: u64,
    pub updates: u64,
    pub skipped_updates: u64,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub seconds: f64,
}

pub fn train(req: &TrainRequest) -> Result<TrainResponse, RunnerError> {
    let tok = TokenizerModel::load(&req.tokenizer)?;
    let lines = read_lines(&req.stream)?;
    let opts = TrainOptions {
        model: ModelConfig { vocab_size: tok.vocab_size(), ..req.model.clone() },
        optim: req.optim.clone(),
        masking: req.masking.clone(),
        seed: req.seed,
        log_every: 50,
        checkpoint_every: req.checkpoint_every,
        checkpoint_dir: Some(req.out_dir.clone()),
    };
    let latest = req.out_dir.join("latest.ckpt");
    let mut trainer = if req.resume && latest.exists() {
        Trainer::resume(Checkpoint::load(&latest)?, opts, &tok)?
    } else {
        Trainer::new(opts, &tok, lines.len())?
    };
    let t0 = Instant::now();
    trainer.run(&lines, None)?;
    let checkpoint = trainer.save_latest(&req.out_dir)?;
    let log = req.out_dir.join("train_log.csv");
    trainer.write_log(&log)?;
    let s = trainer.summary();
    Ok(TrainResponse {
        checkpoint,
        log,
        steps: s.steps,
        updates: s.updates,
        skipped_updates: s.skipped_updates,
        initial_loss: s.initial_loss,
        final_loss: s.final_loss,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub checkpoint: PathBuf,
    pub tokenizer: PathBuf,
    pub pairs: PathBuf,
    #[serde(default = "all_methods")]
    pub methods: Vec<ScoringMethod>,
    /// Labels copied into the result rows.
    #[serde(default = "none_label")]
    pub evidence: String,
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub wug_mode: WugMode,
    /// Also write the rows here as CSV.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn all_methods() -> Vec<ScoringMethod> {
    ScoringMethod::ALL.to_vec()
}

fn none_label() -> String {
    "none".into()
}

/// One row per (phenomenon present in the pairs, method).
pub fn eval(req: &EvalRequest) -> Result<Vec<EvalResult>, RunnerError> {
    let tok = TokenizerModel::load(&req.tokenizer)?;
    let ck = Checkpoint::load(&req.checkpoint)?;
    let (seed, init_std) = (ck.header.seed, ck.header.model.init_std);
    let model = Model::from_params(ck.header.model.clone(), ck.params)?;
    let pairs: Vec<MinimalPair> = from_jsonl(&read(&req.pairs)?)?;
    let mut by_ph: BTreeMap<Phenomenon, Vec<&MinimalPair>> = BTreeMap::new();
    for p in &pairs {
        by_ph.entry(p.phenomenon).or_default().push(p);
    }
    let scorer = ModelScorer::new(&model, &tok);
    let mut rows = Vec::new();
    for (ph, ps) in by_ph {
        let encoded: Vec<_> = ps.iter().map(|p| encode_pair(&tok, p, model.config.max_seq_len)).collect();
        for &method in &req.methods {
            if !encoded.iter().all(|e| applicable(e, method)) {
                tracing::warn!(phenomenon = %ph, %method, "method not applicable to these pairs; no row");
                continue;
            }
            let t = accuracy(&scorer, &encoded, method)?;
            rows.push(EvalResult {
                phenomenon: ph,
                evidence: req.evidence.clone(),
                n: req.n,
                seed,
                init_std,
                wug_mode: req.wug_mode,
                method,
                accuracy: t.accuracy(),
                num_pairs: t.num_pairs,
                tie_count: t.tie_count,
            });
        }
    }
    if let Some(out) = &req.out {
        write_atomic(out, crate::runner::rows_to_csv(&rows).as_bytes())?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    /// Phenomena × evidence × n (plus interference when configured).
    #[default]
    Grid,
    /// n=0 over every std and seed.
    Ablation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRequest {
    pub config: ExperimentConfig,
    #[serde(default)]
    pub plan: PlanKind,
    #[serde(default)]
    pub force: bool,
    /// Only plan; execute nothing.
    #[serde(default)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResponse {
    pub keys: Vec<String>,
    pub summary: GridSummary,
    pub results: PathBuf,
}

pub fn grid(req: &GridRequest) -> Result<GridResponse, RunnerError> {
    req.config.validate()?;
    let plan = match req.plan {
        PlanKind::Grid => plan_grid(&req.config),
        PlanKind::Ablation => plan_ablation(&req.config),
    };
    let keys = plan.iter().map(|k| k.id()).collect();
    let results = req.config.out_dir.join("results.csv");
    if req.dry_run {
        return Ok(GridResponse { keys, summary: GridSummary { planned: plan.len(), ..GridSummary::default() }, results });
    }
    let mut runner = Runner::new(req.config.clone(), req.force)?;
    let summary = runner.run_plan(&plan);
    Ok(GridResponse { keys, summary, results })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRequest {
    /// Directory holding `results.json`.
    pub store: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub phenomena: Option<Vec<Phenomenon>>,
}

pub fn report(req: &ReportRequest) -> Result<Report, RunnerError> {
    let store = ResultStore::open(&req.store)?;
    emit_report(&store, &req.out_dir, req.phenomena.as_deref())
}
