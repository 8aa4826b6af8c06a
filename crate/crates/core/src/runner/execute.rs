use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use tracing::{info, warn};

use super::store::write_atomic;
use super::{ExperimentConfig, ResultStore, RunKey, RunMeta, RunRecord, RunnerError, Suite};
use crate::corpus::{build_stream, preprocess, read_lines, CleanCorpus, TrainingStream};
use crate::eval::{accuracy, applicable, encode_pair, EvalResult, ModelScorer};
use crate::lexicon::{bundled_seed_nouns, Lexicon, VerbClass};
use crate::mlm::{config_hash, Checkpoint, Model, TrainOptions, Trainer};
use crate::template::{
    bundled_templates, derive_de, expand, make_interference_set, parse_template_file, synthesize_corpus, Evidence,
    Expansion, InterferenceKind, MinimalPair, NounBanks, Phenomenon, TrainingInstance,
};
use crate::tokenizer::{train_bpe, TokenizerModel};
use crate::wug::{generate_pseudowords, make_tag_lexicon, read_seed_lexicon, renumber, WugLexicon, WugMode};

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Derived per-key seed for stream placement.
fn stream_seed(key: &RunKey) -> u64 {
    let d = Sha256::digest(format!("stream:{}", key.id()).as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Everything shared by the runs of one config: corpus, wugs, expanded
/// pairs and instances, interference sets and the tokenizer.
pub struct Materials {
    pub data_hash: String,
    pub data_dir: PathBuf,
    pub corpus: CleanCorpus,
    pub wugs: WugLexicon,
    pub expansion: Expansion,
    pub interference: BTreeMap<InterferenceKind, Vec<TrainingInstance>>,
    pub interference_eval: Vec<MinimalPair>,
    pub tokenizer: TokenizerModel,
}

#[derive(Serialize)]
struct DataIdentity<'a> {
    corpus_hash: String,
    templates: &'a Option<PathBuf>,
    lexicon: &'a Option<PathBuf>,
    seed_nouns: &'a Option<PathBuf>,
    expand: &'a crate::template::ExpandConfig,
    data_seed: u64,
    wug_mode: WugMode,
    vocab_size: usize,
    interference: bool,
    interference_wugs: usize,
}

impl Materials {
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self, RunnerError> {
        let lexicon = match &cfg.lexicon {
            Some(p) => Lexicon::from_jsonl(&std::fs::read_to_string(p).map_err(|e| RunnerError::io(p, e))?)?,
            None => Lexicon::bundled(),
        };
        let templates = match &cfg.templates {
            Some(p) => parse_template_file(&std::fs::read(p).map_err(|e| RunnerError::io(p, e))?)?,
            None => bundled_templates(),
        };
        let raw = match &cfg.corpus.path {
            Some(p) => read_lines(p)?,
            None => synthesize_corpus(&templates, &lexicon, cfg.corpus.synthetic_sentences, cfg.data_seed)?,
        };
        let corpus = preprocess(&raw, cfg.data_seed, cfg.corpus.path.as_deref().map_or("synthetic".into(), |p| p.display().to_string()).as_str());

        let count = cfg.wug_count();
        let wugs = match cfg.wug_mode {
            WugMode::Pseudoword => {
                let seeds = match &cfg.seed_nouns {
                    Some(p) => read_seed_lexicon(std::io::BufReader::new(std::fs::File::open(p).map_err(|e| RunnerError::io(p, e))?))?,
                    None => bundled_seed_nouns(),
                };
                renumber(generate_pseudowords(&seeds, 4, count, cfg.data_seed)?, 1)
            }
            mode => make_tag_lexicon(count, 1, mode)?,
        };
        let main = Phenomenon::ALL.len() * cfg.expand.pairs_per_phenomenon();
        let expansion = expand(&templates, &lexicon, &wugs.entries[..main], &cfg.expand, cfg.data_seed)?;

        let mut interference = BTreeMap::new();
        let mut interference_eval = Vec::new();
        if cfg.interference {
            let banks = NounBanks::from_lexicon(&lexicon);
            let verbs: Vec<_> = lexicon.verbs.iter().filter(|v| v.has_class(VerbClass::Refl)).cloned().collect();
            for kind in InterferenceKind::ALL {
                let set = make_interference_set(kind, &banks, &verbs, &wugs.entries[main..], cfg.data_seed)?;
                interference_eval = set.eval;
                interference.insert(kind, set.train);
            }
        }

        let identity = DataIdentity {
            corpus_hash: corpus.hash(),
            templates: &cfg.templates,
            lexicon: &cfg.lexicon,
            seed_nouns: &cfg.seed_nouns,
            expand: &cfg.expand,
            data_seed: cfg.data_seed,
            wug_mode: cfg.wug_mode,
            vocab_size: cfg.vocab_size,
            interference: cfg.interference,
            interference_wugs: cfg.interference_wugs,
        };
        let data_hash = sha(serde_json::to_string(&identity)?.as_bytes())[..16].to_string();
        let data_dir = cfg.out_dir.join("data").join(&data_hash);

        // Tags are atomic specials; pseudowords are ordinary text.
        let specials: Vec<String> = match cfg.wug_mode {
            WugMode::Pseudoword => Vec::new(),
            _ => wugs.entries.iter().map(|e| e.stem.clone()).collect(),
        };
        let tok_path = data_dir.join("tokenizer.json");
        let tokenizer = if tok_path.exists() {
            TokenizerModel::load(&tok_path)?
        } else {
            let t = train_bpe(&corpus.sentences, cfg.vocab_size, &specials)?;
            std::fs::create_dir_all(&data_dir).map_err(|e| RunnerError::io(&data_dir, e))?;
            t.save(&tok_path)?;
            t
        };

        let mats = Materials { data_hash, data_dir, corpus, wugs, expansion, interference, interference_eval, tokenizer };
        mats.write_data_files()?;
        Ok(mats)
    }

    fn write_data_files(&self) -> Result<(), RunnerError> {
        use crate::template::to_jsonl;
        let d = &self.data_dir;
        let files: Vec<(&str, String)> = vec![
            ("wugs.jsonl", self.wugs.to_jsonl()),
            ("eval.jsonl", to_jsonl(&self.expansion.eval)),
            ("de.jsonl", to_jsonl(&self.expansion.de())),
            ("lexie.jsonl", to_jsonl(&self.expansion.lexie)),
            ("synie.jsonl", to_jsonl(&self.expansion.synie)),
        ];
        for (name, text) in files {
            let p = d.join(name);
            if !p.exists() {
                write_atomic(&p, text.as_bytes())?;
            }
        }
        let p = d.join("corpus.txt");
        if !p.exists() {
            self.corpus.write(&p)?;
        }
        if !self.interference_eval.is_empty() {
            let p = d.join("interference.jsonl");
            if !p.exists() {
                let all: Vec<&TrainingInstance> = self.interference.values().flatten().collect();
                write_atomic(&p, to_jsonl(&all).as_bytes())?;
                write_atomic(&d.join("interference_eval.jsonl"), to_jsonl(&self.interference_eval).as_bytes())?;
            }
        }
        Ok(())
    }

    /// Training instances injected for a key (none at n=0).
    pub fn instances(&self, key: &RunKey) -> Vec<TrainingInstance> {
        let Some(evidence) = key.evidence else { return Vec::new() };
        if key.n == 0 {
            return Vec::new();
        }
        match (key.suite, evidence) {
            (Suite::Main, e) => self.expansion.train(e).into_iter().filter(|i| i.phenomenon == key.phenomenon).collect(),
            (Suite::Interference, Evidence::Interference(k)) => self.interference.get(&k).cloned().unwrap_or_default(),
            (Suite::Interference, Evidence::Direct) => derive_de(&self.interference_eval),
            (Suite::Interference, _) => Vec::new(),
        }
    }

    pub fn eval_pairs(&self, key: &RunKey) -> Vec<MinimalPair> {
        match key.suite {
            Suite::Main => self.expansion.eval.iter().filter(|p| p.phenomenon == key.phenomenon).cloned().collect(),
            Suite::Interference => self.interference_eval.clone(),
        }
    }

    pub fn stream(&self, cfg: &ExperimentConfig, key: &RunKey) -> Result<(TrainingStream, Vec<TrainingInstance>), RunnerError> {
        let instances = self.instances(key);
        let stream = build_stream(&self.corpus, &instances, key.n, cfg.epochs, stream_seed(key))?;
        Ok((stream, instances))
    }
}

/// Identity of the trained model a key needs. All n=0 keys with the same
/// seed and std share one model: their streams are the bare corpus.
pub fn fingerprint(cfg: &ExperimentConfig, mats: &Materials, key: &RunKey) -> String {
    let model = cfg.model_for(mats.tokenizer.vocab_size(), key.init_std);
    let data = if key.n == 0 { "baseline".to_string() } else { key.id() };
    let doc = serde_json::json!({
        "data": mats.data_hash,
        "config": config_hash(&model, &cfg.optim, &cfg.masking),
        "epochs": cfg.epochs,
        "seed": key.seed,
        "stream": data,
    });
    sha(doc.to_string().as_bytes())[..16].to_string()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct GridSummary {
    pub planned: usize,
    pub executed: usize,
    pub skipped: usize,
    pub failed: Vec<String>,
}

/// Executes run keys against one config, recording into its store.
pub struct Runner {
    pub cfg: ExperimentConfig,
    pub mats: Materials,
    pub store: ResultStore,
    pub force: bool,
    /// Models (re)trained by this runner; reused even when forcing.
    fresh: HashSet<String>,
}

impl Runner {
    pub fn new(cfg: ExperimentConfig, force: bool) -> Result<Self, RunnerError> {
        cfg.validate()?;
        let mats = Materials::prepare(&cfg)?;
        let store = ResultStore::open(&cfg.out_dir)?;
        Ok(Runner { cfg, mats, store, force, fresh: HashSet::new() })
    }

    pub fn run_dir(&self, key: &RunKey) -> PathBuf {
        self.cfg.out_dir.join("runs").join(key.digest())
    }

    pub fn model_dir(&self, key: &RunKey) -> PathBuf {
        self.cfg.out_dir.join("models").join(fingerprint(&self.cfg, &self.mats, key))
    }

    /// Runs one key. A key already done is not re-run unless forcing; a
    /// failure is recorded in the store and returned.
    pub fn execute(&mut self, key: &RunKey) -> Result<Vec<EvalResult>, RunnerError> {
        if !self.force {
            if let Some(r) = self.store.get(key).filter(|r| r.is_done()) {
                return Ok(r.rows.clone());
            }
        }
        let mut meta = RunMeta { data_hash: self.mats.data_hash.clone(), run_dir: self.run_dir(key), ..RunMeta::default() };
        match self.execute_inner(key, &mut meta) {
            Ok(rows) => {
                self.store.put(RunRecord { key: key.clone(), rows: rows.clone(), error: None, meta })?;
                Ok(rows)
            }
            Err(e) => {
                warn!(key = %key, error = %e, "run failed");
                self.store.put(RunRecord { key: key.clone(), rows: Vec::new(), error: Some(e.to_string()), meta })?;
                Err(e)
            }
        }
    }

    fn execute_inner(&mut self, key: &RunKey, meta: &mut RunMeta) -> Result<Vec<EvalResult>, RunnerError> {
        let pairs = self.mats.eval_pairs(key);
        if pairs.is_empty() {
            return Err(RunnerError::Config(format!("no evaluation pairs for {key}")));
        }
        let (stream, instances) = self.mats.stream(&self.cfg, key)?;
        meta.stream_lines = stream.len();

        let dir = self.run_dir(key);
        std::fs::create_dir_all(&dir).map_err(|e| RunnerError::io(&dir, e))?;
        write_atomic(&dir.join("key.json"), serde_json::to_string_pretty(key)?.as_bytes())?;
        write_atomic(&dir.join("manifest.json"), serde_json::to_string(&stream.manifest)?.as_bytes())?;
        write_atomic(&dir.join("stream.header.json"), serde_json::to_string_pretty(&stream.header())?.as_bytes())?;
        let counts = crate::corpus::verify_counts(&stream, &instances);
        if let Some((id, c)) = counts.iter().find(|(_, &c)| c != key.n) {
            return Err(RunnerError::Manifest(format!("{id} occurs {c} times, expected {}", key.n)));
        }
        write_atomic(&dir.join("verify.json"), serde_json::to_string_pretty(&counts)?.as_bytes())?;
        meta.manifest_verified = true;

        let vocab = self.mats.tokenizer.vocab_size();
        let model_cfg = self.cfg.model_for(vocab, key.init_std);
        meta.config_hash = config_hash(&model_cfg, &self.cfg.optim, &self.cfg.masking);
        let model_dir = self.model_dir(key);
        let t0 = Instant::now();
        let (model, reused) = self.trained_model(key, &stream, model_cfg, &model_dir, meta)?;
        meta.train_seconds = t0.elapsed().as_secs_f64();
        meta.model_reused = reused;
        meta.checkpoint = Some(model_dir.join("latest.ckpt"));

        let t0 = Instant::now();
        let tok = &self.mats.tokenizer;
        let scorer = ModelScorer::new(&model, tok);
        let encoded: Vec<_> = pairs.iter().map(|p| encode_pair(tok, p, self.cfg.model.max_seq_len)).collect();
        let mut rows = Vec::new();
        for &method in &self.cfg.methods {
            if !encoded.iter().all(|e| applicable(e, method)) {
                warn!(key = %key, %method, "method not applicable to these pairs; no row");
                continue;
            }
            let t = accuracy(&scorer, &encoded, method)?;
            rows.push(EvalResult {
                phenomenon: key.phenomenon,
                evidence: key.evidence_label(),
                n: key.n,
                seed: key.seed,
                init_std: key.init_std,
                wug_mode: key.wug_mode,
                method,
                accuracy: t.accuracy(),
                num_pairs: t.num_pairs,
                tie_count: t.tie_count,
            });
        }
        meta.eval_seconds = t0.elapsed().as_secs_f64();
        write_atomic(&dir.join("results.csv"), super::rows_to_csv(&rows).as_bytes())?;
        info!(key = %key, accuracy = ?rows.iter().map(|r| r.accuracy).collect::<Vec<_>>(), "run done");
        Ok(rows)
    }

    /// Loads a finished model from the cache, resumes a partial one, or trains.
    fn trained_model(
        &mut self,
        key: &RunKey,
        stream: &TrainingStream,
        model_cfg: crate::mlm::ModelConfig,
        dir: &Path,
        meta: &mut RunMeta,
    ) -> Result<(Model<f32>, bool), RunnerError> {
        let fp = fingerprint(&self.cfg, &self.mats, key);
        let ckpt = dir.join("latest.ckpt");
        let opts = TrainOptions {
            model: model_cfg,
            optim: self.cfg.optim.clone(),
            masking: self.cfg.masking.clone(),
            seed: key.seed,
            log_every: 50,
            checkpoint_every: self.cfg.checkpoint_every,
            checkpoint_dir: Some(dir.to_path_buf()),
        };
        let tok = &self.mats.tokenizer;
        let cached = if ckpt.exists() && (!self.force || self.fresh.contains(&fp)) { Some(Checkpoint::load(&ckpt)?) } else { None };
        let mut trainer = match cached {
            Some(ck) if ck.header.update >= ck.header.total_updates => {
                meta.updates = ck.header.update;
                let model = Model::from_params(ck.header.model.clone(), ck.params)?;
                return Ok((model, true));
            }
            Some(ck) => {
                info!(key = %key, update = ck.header.update, "resuming");
                Trainer::resume(ck, opts, tok)?
            }
            None => Trainer::new(opts, tok, stream.len())?,
        };
        info!(key = %key, updates = trainer.total_updates(), lines = stream.len(), "training");
        trainer.run(stream, None)?;
        trainer.save_latest(dir)?;
        trainer.write_log(&dir.join("train_log.csv"))?;
        self.fresh.insert(fp);
        meta.updates = trainer.update();
        meta.final_loss = trainer.summary().final_loss;
        Ok((trainer.into_model(), false))
    }

    /// Executes every key in order; failures are recorded and skipped.
    pub fn run_plan(&mut self, keys: &[RunKey]) -> GridSummary {
        let mut s = GridSummary { planned: keys.len(), ..GridSummary::default() };
        for (i, key) in keys.iter().enumerate() {
            if !self.force && self.store.is_done(key) {
                s.skipped += 1;
                continue;
            }
            info!("[{}/{}] {key}", i + 1, keys.len());
            match self.execute(key) {
                Ok(_) => s.executed += 1,
                Err(e) => s.failed.push(format!("{key}: {e}")),
            }
        }
        s
    }
}
