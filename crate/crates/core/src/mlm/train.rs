//! The training loop: one pass over a line stream, `batch × grad_accum` lines
//! per update, each micro-batch's gradient computed independently and summed
//! in a fixed order so results do not depend on the thread count.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointHeader, RngState};
use super::mask::{mask_sequence, MaskedSeq};
use super::optim::{lr_at, AdamState};
use super::{config_hash, MaskingPolicy, MlmError, Model, ModelConfig, OptimizerConfig};
use crate::corpus::TrainingStream;
use crate::tokenizer::TokenizerModel;

pub trait LineSource: Sync {
    fn len(&self) -> usize;
    fn line(&self, i: usize) -> &str;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl LineSource for TrainingStream {
    fn len(&self) -> usize {
        TrainingStream::len(self)
    }
    fn line(&self, i: usize) -> &str {
        TrainingStream::line(self, i)
    }
}

impl LineSource for Vec<String> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }
    fn line(&self, i: usize) -> &str {
        &self[i]
    }
}

/// `<s> tokens </s>`, cut to `max_len`.
pub fn encode_line(tok: &TokenizerModel, line: &str, max_len: usize) -> Vec<u32> {
    let mut ids = Vec::with_capacity(line.len() / 3 + 2);
    ids.push(tok.bos_id());
    ids.extend(tok.encode(line).ids);
    ids.push(tok.eos_id());
    ids.truncate(max_len);
    ids
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub model: ModelConfig,
    pub optim: OptimizerConfig,
    pub masking: MaskingPolicy,
    pub seed: u64,
    /// Updates per training-log row.
    pub log_every: u64,
    /// Updates between checkpoints written to `checkpoint_dir`.
    pub checkpoint_every: Option<u64>,
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub updates: u64,
    pub skipped_updates: u64,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
}

pub struct Trainer<'t> {
    opts: TrainOptions,
    tok: &'t TokenizerModel,
    model: Model<f32>,
    adam: AdamState<f32>,
    rng: ChaCha8Rng,
    step: u64,
    update: u64,
    total_updates: u64,
    skipped: u64,
    log: Vec<LogRow>,
    window: (f64, u64),
    memo: HashMap<String, Vec<u32>>,
    eligible: Vec<bool>,
    random_pool: Vec<u32>,
}

impl<'t> Trainer<'t> {
    pub fn new(opts: TrainOptions, tok: &'t TokenizerModel, stream_len: usize) -> Result<Self, MlmError> {
        opts.optim.validate()?;
        opts.masking.validate()?;
        if stream_len == 0 {
            return Err(MlmError::InvalidConfig("empty training stream".into()));
        }
        if opts.model.vocab_size != tok.vocab_size() {
            return Err(MlmError::InvalidConfig(format!(
                "model vocab {} does not match tokenizer vocab {}",
                opts.model.vocab_size,
                tok.vocab_size()
            )));
        }
        let model = Model::new(opts.model.clone(), opts.seed)?;
        let total_updates = stream_len.div_ceil(opts.optim.effective_batch()) as u64;
        // Parameter init consumes its own stream; training randomness uses another.
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(1);
        Ok(Self::assemble(opts, tok, model, AdamState::new(0), rng, 0, 0, total_updates))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        opts: TrainOptions,
        tok: &'t TokenizerModel,
        model: Model<f32>,
        adam: AdamState<f32>,
        rng: ChaCha8Rng,
        step: u64,
        update: u64,
        total_updates: u64,
    ) -> Self {
        let adam = if adam.m.is_empty() { AdamState::new(model.layout.total) } else { adam };
        let eligible: Vec<bool> = (0..tok.vocab_size() as u32).map(|i| !tok.is_control(i) && i != tok.unk_id()).collect();
        let random_pool = (0..tok.vocab_size() as u32).filter(|&i| eligible[i as usize]).collect();
        Trainer {
            opts,
            tok,
            model,
            adam,
            rng,
            step,
            update,
            total_updates,
            skipped: 0,
            log: Vec::new(),
            window: (0.0, 0),
            memo: HashMap::new(),
            eligible,
            random_pool,
        }
    }

    /// Continues a run from `ck`. Logging and checkpoint cadence come from `opts`;
    /// everything that affects the math must match the checkpoint.
    pub fn resume(ck: Checkpoint, opts: TrainOptions, tok: &'t TokenizerModel) -> Result<Self, MlmError> {
        let h = &ck.header;
        if h.config_hash != config_hash(&opts.model, &opts.optim, &opts.masking) || h.seed != opts.seed {
            return Err(MlmError::Checkpoint("checkpoint was produced by a different configuration".into()));
        }
        let model = Model::from_params(opts.model.clone(), ck.params)?;
        let rng = h.rng.restore()?;
        let (step, update, total) = (h.step, h.update, h.total_updates);
        Ok(Self::assemble(opts, tok, model, AdamState { m: ck.adam_m, v: ck.adam_v }, rng, step, update, total))
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn into_model(self) -> Model<f32> {
        self.model
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn update(&self) -> u64 {
        self.update
    }

    pub fn total_updates(&self) -> u64 {
        self.total_updates
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn is_done(&self) -> bool {
        self.update >= self.total_updates
    }

    pub fn summary(&self) -> TrainSummary {
        TrainSummary {
            steps: self.step,
            updates: self.update,
            skipped_updates: self.skipped,
            initial_loss: self.log.first().map(|r| r.loss),
            final_loss: self.log.last().map(|r| r.loss),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let o = &self.opts;
        Checkpoint {
            header: CheckpointHeader {
                model: o.model.clone(),
                optim: o.optim.clone(),
                masking: o.masking.clone(),
                config_hash: config_hash(&o.model, &o.optim, &o.masking),
                seed: o.seed,
                step: self.step,
                update: self.update,
                total_updates: self.total_updates,
                rng: RngState::capture(&self.rng),
                tensors: self.model.layout.tensors.clone(),
                payloads: Vec::new(),
            },
            params: self.model.params.clone(),
            adam_m: self.adam.m.clone(),
            adam_v: self.adam.v.clone(),
        }
    }

    fn encoded(&mut self, line: &str) -> Vec<u32> {
        if let Some(ids) = self.memo.get(line) {
            return ids.clone();
        }
        let ids = encode_line(self.tok, line, self.opts.model.max_seq_len);
        self.memo.insert(line.to_string(), ids.clone());
        ids
    }

    /// Runs updates until the stream is exhausted or `stop_at` updates have been consumed.
    pub fn run<S: LineSource + ?Sized>(&mut self, src: &S, stop_at: Option<u64>) -> Result<(), MlmError> {
        let expected = src.len().div_ceil(self.opts.optim.effective_batch()) as u64;
        if expected != self.total_updates {
            return Err(MlmError::InvalidConfig("stream length does not match this run".into()));
        }
        let end = stop_at.map_or(self.total_updates, |s| s.min(self.total_updates));
        while self.update < end {
            self.one_update(src)?;
            let every = self.opts.checkpoint_every.unwrap_or(0);
            if every > 0 && self.update.is_multiple_of(every) {
                if let Some(dir) = self.opts.checkpoint_dir.clone() {
                    self.save_latest(&dir)?;
                }
            }
        }
        Ok(())
    }

    pub fn save_latest(&self, dir: &Path) -> Result<PathBuf, MlmError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("latest.ckpt");
        self.checkpoint().save(&path)?;
        Ok(path)
    }

    fn one_update<S: LineSource + ?Sized>(&mut self, src: &S) -> Result<(), MlmError> {
        let eb = self.opts.optim.effective_batch();
        let mb = self.opts.optim.batch;
        let start = self.update as usize * eb;
        let end = (start + eb).min(src.len());

        let mut micro: Vec<(u64, Vec<MaskedSeq>)> = Vec::new();
        for chunk_start in (start..end).step_by(mb) {
            let mut seqs = Vec::with_capacity(mb);
            for i in chunk_start..(chunk_start + mb).min(end) {
                let ids = self.encoded(src.line(i));
                let eligible = &self.eligible;
                seqs.push(mask_sequence(
                    &self.opts.masking,
                    &ids,
                    |id| eligible[id as usize],
                    self.tok.mask_id(),
                    &self.random_pool,
                    &mut self.rng,
                ));
            }
            let dropout_seed: u64 = self.rng.random();
            micro.push((dropout_seed, seqs));
        }
        self.update += 1;
        let labels: usize = micro.iter().flat_map(|(_, s)| s).map(|s| s.labels.len()).sum();
        if labels == 0 {
            self.skipped += 1;
            return Ok(());
        }
        let scale = 1.0 / labels as f32;
        let model = &self.model;
        let parts: Vec<Result<(f64, Vec<f32>), MlmError>> = micro
            .par_iter()
            .map(|(seed, seqs)| {
                let mut g = model.zero_grads();
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let batch: Vec<(&[u32], &[(usize, u32)])> = seqs.iter().map(|s| (&s.ids[..], &s.labels[..])).collect();
                let loss = model.loss_and_grad_batch(&batch, scale, Some(&mut rng), &mut g)? as f64;
                Ok((loss, g))
            })
            .collect();
        let mut total_loss = 0.0;
        let mut grads: Option<Vec<f32>> = None;
        for part in parts {
            let (loss, g) = part?;
            total_loss += loss;
            match grads.as_mut() {
                None => grads = Some(g),
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
            }
        }
        let grads = grads.expect("at least one micro-batch");
        self.step += 1;
        let lr = lr_at(&self.opts.optim, self.step, self.total_updates);
        self.adam.step(&self.opts.optim, &self.model.layout, &mut self.model.params, &grads, self.step, lr);

        let loss = total_loss / labels as f64;
        self.window.0 += loss;
        self.window.1 += 1;
        if self.window.1 >= self.opts.log_every.max(1) || self.update == self.total_updates {
            self.log.push(LogRow { step: self.step, loss: self.window.0 / self.window.1 as f64, lr });
            self.window = (0.0, 0);
        }
        Ok(())
    }

    pub fn write_log(&self, path: &Path) -> Result<(), MlmError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "step,loss,lr")?;
        for r in &self.log {
            writeln!(w, "{},{},{}", r.step, r.loss, r.lr)?;
        }
        w.flush()?;
        Ok(())
    }
}
