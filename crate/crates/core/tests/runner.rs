use std::path::Path;

use wuglab_core::eval::RESULTS_HEADER;
use wuglab_core::mlm::{MaskingPolicy, ModelConfig, OptimizerConfig};
use wuglab_core::runner::*;
use wuglab_core::template::{Evidence, ExpandConfig, Phenomenon};

fn micro(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        phenomena: vec![Phenomenon::DNAgr, Phenomenon::SVAgrV],
        evidence: vec![Evidence::Direct],
        frequencies: vec![0, 5],
        corpus: CorpusConfig { path: None, synthetic_sentences: 400 },
        expand: ExpandConfig { frames: 8, tag_sets: 1, ..ExpandConfig::default() },
        epochs: 1,
        vocab_size: 300,
        model: ModelConfig {
            layers: 1,
            heads: 2,
            hidden: 16,
            intermediate: 32,
            dropout: 0.1,
            layer_norm_eps: 1e-12,
            init_std: 0.02,
            max_seq_len: 32,
            vocab_size: 0,
        },
        optim: OptimizerConfig { lr: 1e-3, warmup_steps: 2, batch: 16, grad_accum: 1, ..OptimizerConfig::default() },
        masking: MaskingPolicy::default(),
        checkpoint_every: Some(10),
        out_dir: out.to_path_buf(),
        ..ExperimentConfig::toy()
    }
}

#[test]
fn grid_runs_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro(dir.path());
    let plan = plan_grid(&cfg);
    assert_eq!(plan.len(), 4);
    let mut runner = Runner::new(cfg.clone(), false).unwrap();
    let s = runner.run_plan(&plan);
    assert_eq!((s.executed, s.skipped), (4, 0), "{:?}", s.failed);

    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], RESULTS_HEADER);
    assert_eq!(lines.len(), 1 + 4 * 3);

    // The two n=0 keys share one trained model.
    let base: Vec<&RunKey> = plan.iter().filter(|k| k.n == 0).collect();
    assert_eq!(runner.model_dir(base[0]), runner.model_dir(base[1]));
    assert!(runner.store.get(base[1]).unwrap().meta.model_reused);

    for key in &plan {
        let d = runner.run_dir(key);
        for f in ["manifest.json", "verify.json", "stream.header.json", "results.csv"] {
            assert!(d.join(f).exists(), "{key}: {f}");
        }
        let verify: std::collections::BTreeMap<String, usize> =
            serde_json::from_str(&std::fs::read_to_string(d.join("verify.json")).unwrap()).unwrap();
        assert!(verify.values().all(|&c| c == key.n));
        assert_eq!(verify.len(), if key.n == 0 { 0 } else { 8 });
    }

    // Second pass: nothing re-executes and the CSV is unchanged.
    let mut again = Runner::new(cfg.clone(), false).unwrap();
    let s = again.run_plan(&plan);
    assert_eq!((s.executed, s.skipped), (0, 4));
    assert_eq!(std::fs::read_to_string(dir.path().join("results.csv")).unwrap(), csv);

    // Forcing re-executes; the retrained models reproduce the same numbers.
    let mut forced = Runner::new(cfg, true).unwrap();
    let s = forced.run_plan(&plan[..2]);
    assert_eq!(s.executed, 2);
    assert_eq!(std::fs::read_to_string(dir.path().join("results.csv")).unwrap(), csv);

    let rep = emit_report(&forced.store, &dir.path().join("report"), None).unwrap();
    assert_eq!(rep.svg.len(), 2 * 3);
}

#[test]
fn separate_executions_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        let cfg = ExperimentConfig { phenomena: vec![Phenomenon::AnaNumAgr], ..micro(d) };
        let plan = plan_grid(&cfg);
        let s = Runner::new(cfg, false).unwrap().run_plan(&plan);
        assert!(s.failed.is_empty(), "{:?}", s.failed);
    }
    let read = |d: &Path| std::fs::read(d.join("results.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn interference_runs_use_their_own_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        phenomena: vec![],
        interference: true,
        interference_wugs: 6,
        frequencies: vec![5],
        ..micro(dir.path())
    };
    let plan = plan_grid(&cfg);
    assert_eq!(plan.len(), 10);
    let mut runner = Runner::new(cfg, false).unwrap();
    let s = runner.run_plan(&plan[..2]);
    assert!(s.failed.is_empty(), "{:?}", s.failed);
    let csv = std::fs::read_to_string(dir.path().join("interference.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("AnaGenAgr,AT0,5,"));
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(8) == Some("6")));
}

#[test]
fn failures_are_recorded_and_the_grid_continues() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro(dir.path());
    let mut runner = Runner::new(cfg.clone(), false).unwrap();
    let mut plan = plan_grid(&cfg);
    // Interference pairs are not generated for this config, so this key cannot be evaluated.
    let mut bad = plan[0].clone();
    bad.suite = Suite::Interference;
    plan.insert(0, bad.clone());
    let s = runner.run_plan(&plan[..2]);
    assert_eq!(s.failed.len(), 1);
    assert_eq!(s.executed, 1);
    assert!(runner.store.get(&bad).unwrap().error.is_some());
    let rep = emit_report(&runner.store, &dir.path().join("r"), Some(&[])).unwrap();
    assert_eq!(rep.failures.len(), 1);
}
