//! Acceptance run: one PASS/FAIL line per criterion. Criteria 6 and the
//! variance comparison in 8 are reported but do not fail the target.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wuglab_core::corpus::{build_stream, line_counts, preprocess, verify_counts, verify_counts_file, CleanCorpus};
use wuglab_core::eval::{score_pair, EncodedPair, Scorer, ScoringMethod, TableScorer};
use wuglab_core::lexicon::{Gender, Lexicon, VerbClass};
use wuglab_core::mlm::gradcheck::{grad_check, small_batch, small_config};
use wuglab_core::mlm::{MaskingPolicy, ModelConfig, OptimizerConfig};
use wuglab_core::runner::*;
use wuglab_core::template::{
    bundled_templates, derive_de, make_interference_set, synthesize_corpus, Evidence, ExpandConfig, InterferenceKind,
    NounBanks, Phenomenon, TrainingInstance,
};
use wuglab_core::tokenizer::train_bpe;
use wuglab_core::wug::{make_tag_lexicon, WugId, WugMode};

struct Outcome {
    pass: bool,
    gated: bool,
    detail: String,
}

fn gate(pass: bool, detail: String) -> Outcome {
    Outcome { pass, gated: true, detail }
}

// ---------------------------------------------------------------- 1

fn injection_exactness() -> Outcome {
    let corpus = CleanCorpus {
        sentences: (0..10_000).map(|i| format!("base line {i}")).collect(),
        source: "generated".into(),
        version: "test".into(),
    };
    let instances: Vec<TrainingInstance> = (0..60)
        .map(|i| TrainingInstance {
            instance_id: format!("inst-{i}"),
            phenomenon: Phenomenon::DNAgr,
            evidence: Evidence::Direct,
            wug_id: WugId(i + 1),
            wug: format!("<wug#{}>", i + 1),
            sentence: format!("these <wug#{}> sat", i + 1),
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let mut notes = Vec::new();
    for n in [1usize, 5, 25, 100] {
        let stream = build_stream(&corpus, &instances, n, 18, n as u64).unwrap();
        let scanned = verify_counts(&stream, &instances);
        let counts = line_counts(&stream);
        // Oracle: a plain sequential count over the materialised lines.
        let mut naive: HashMap<&str, usize> = HashMap::new();
        stream.iter().for_each(|l| *naive.entry(l).or_default() += 1);
        let inst_ok = scanned.values().all(|&c| c == n)
            && instances.iter().all(|i| naive.get(i.sentence.as_str()) == Some(&n));
        let base_ok = corpus.sentences.iter().all(|s| counts.get(s.as_str()) == Some(&18) && naive[s.as_str()] == 18);
        stream.write_to(dir.path()).unwrap();
        let from_file = verify_counts_file(&dir.path().join("stream.txt"), &instances).unwrap();
        let file_ok = from_file.values().all(|&c| c == n);
        if !(inst_ok && base_ok && file_ok && stream.len() == 180_000 + 60 * n) {
            return gate(false, format!("n={n}: instances {inst_ok}, base lines {base_ok}, file {file_ok}"));
        }
        notes.push(format!("n={n} ok"));
    }
    gate(true, format!("{} (60 instances, 10k base lines × 18)", notes.join(", ")))
}

// ---------------------------------------------------------------- 2

fn tokenizer_contracts() -> Outcome {
    let lex = Lexicon::bundled();
    let raw = synthesize_corpus(&bundled_templates(), &lex, 6000, 11).unwrap();
    let clean = preprocess(&raw, 3, "synthetic");
    let tags: Vec<String> = make_tag_lexicon(800, 1, WugMode::Tag).unwrap().entries.into_iter().map(|e| e.stem).collect();
    let tok = train_bpe(&clean.sentences, 1800, &tags).unwrap();
    let again = train_bpe(&clean.sentences, 1800, &tags).unwrap();

    let single = tags.iter().filter(|t| tok.encode(t).len() == 1).count();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut lines: Vec<String> = clean.sentences.choose_multiple(&mut rng, 900).cloned().collect();
    // Lines carrying wug tags, as injected instances do.
    lines.extend(clean.sentences.choose_multiple(&mut rng, 100).enumerate().map(|(i, l)| {
        let mut w: Vec<&str> = l.split(' ').collect();
        let tag = &tags[i * 7 % tags.len()];
        w[0] = tag;
        w.join(" ")
    }));
    let roundtrip = lines.iter().filter(|l| tok.decode(&tok.encode(l)).ok().as_deref() == Some(l.as_str())).count();
    let identical = tok.to_json() == again.to_json();
    gate(
        single == tags.len() && roundtrip == lines.len() && identical,
        format!(
            "{single}/{} tags single-token, {roundtrip}/{} lines round-trip, retrain byte-identical: {identical}",
            tags.len(),
            lines.len()
        ),
    )
}

// ---------------------------------------------------------------- 3

fn gradient_verification() -> Outcome {
    let cfg = small_config();
    let r = grad_check(cfg.clone(), 7, &small_batch(), 1e-5, 1).unwrap();
    let worst = r.blocks.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).unwrap();
    gate(
        r.max_rel_err() < 1e-4 && cfg.layers == 2 && cfg.hidden == 16 && cfg.vocab_size == 50,
        format!("max rel err {:.2e} ({}) over {} blocks, {} params", worst.max_rel_err, worst.name, r.blocks.len(), r.checked),
    )
}

// ---------------------------------------------------------------- 4

const BOS: u32 = 0;
const MASK: u32 = 1;

/// Brute force from the definitions: every position masked on its own,
/// log-probabilities read straight off the table.
fn oracle_logp(table: &HashMap<(Vec<u32>, usize), Vec<f64>>, sent: &[u32], pos: usize) -> f64 {
    let mut m = sent.to_vec();
    m[pos] = MASK;
    match table.get(&(m, pos)) {
        Some(p) => p[sent[pos] as usize].ln(),
        None => (0.25f64).ln(),
    }
}

fn oracle(table: &HashMap<(Vec<u32>, usize), Vec<f64>>, pair: &EncodedPair, method: ScoringMethod) -> (f64, f64) {
    let score = |s: &[u32], positions: &[usize]| positions.iter().map(|&p| oracle_logp(table, s, p)).sum::<f64>();
    match method {
        ScoringMethod::SentencePLL => {
            let pll = |s: &[u32]| {
                let pos: Vec<usize> = (0..s.len()).filter(|&i| s[i] != BOS).collect();
                score(s, &pos) / pos.len() as f64
            };
            (pll(&pair.good), pll(&pair.bad))
        }
        ScoringMethod::WugLevel => (score(&pair.good, &pair.good_wug), score(&pair.bad, &pair.bad_wug)),
        ScoringMethod::AntecedentLevel => {
            let (g, b) = (&pair.good, &pair.bad);
            let mut pre = 0;
            while pre < g.len() && pre < b.len() && g[pre] == b[pre] {
                pre += 1;
            }
            let mut suf = 0;
            while suf < g.len() - pre && suf < b.len() - pre && g[g.len() - 1 - suf] == b[b.len() - 1 - suf] {
                suf += 1;
            }
            let gp: Vec<usize> = (pre..g.len() - suf).collect();
            let bp: Vec<usize> = (pre..b.len() - suf).collect();
            (score(g, &gp), score(b, &bp))
        }
    }
}

fn pll_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for trial in 0..300 {
        let len = 2 + trial % 4; // bos + up to 4 tokens
        let sent = |rng: &mut ChaCha8Rng| -> Vec<u32> {
            std::iter::once(BOS).chain((1..len).map(|_| *[2u32, 3].choose(rng).unwrap())).collect()
        };
        let good = sent(&mut rng);
        let mut bad = good.clone();
        let flip = 1 + trial % (len - 1);
        bad[flip] = 5 - bad[flip];
        let mut scorer = TableScorer::new(4, MASK, vec![BOS]);
        let mut table = HashMap::new();
        for s in [&good, &bad] {
            for p in 1..s.len() {
                let mut m = s.clone();
                m[p] = MASK;
                let w: Vec<f64> = (0..4).map(|_| rand::Rng::random_range(&mut rng, 0.05..1.0)).collect();
                let z: f64 = w.iter().sum();
                let probs: Vec<f64> = w.iter().map(|x| x / z).collect();
                scorer.insert(m.clone(), p, probs.clone()).unwrap();
                table.insert((m, p), probs);
            }
        }
        let pair = EncodedPair { pair_id: format!("t{trial}"), good_wug: vec![flip], bad_wug: vec![flip], good, bad };
        for m in ScoringMethod::ALL {
            let got = score_pair(&scorer, &pair, m).unwrap();
            let (g, b) = oracle(&table, &pair, m);
            worst = worst.max((got.good - g).abs()).max((got.bad - b).abs());
            checked += 1;
        }
    }
    let mut hand = TableScorer::new(4, MASK, vec![BOS]);
    hand.insert(vec![BOS, MASK, 3], 1, vec![0.0, 0.0, 0.5, 0.5]).unwrap();
    hand.insert(vec![BOS, 2, MASK], 2, vec![0.25; 4]).unwrap();
    let lp = hand.masked_log_probs(&[BOS, 2, 3], &[1, 2]).unwrap();
    let v = lp.iter().sum::<f64>() / 2.0;
    let pll = wuglab_core::eval::pll(&hand, &[BOS, 2, 3]).unwrap();
    gate(
        worst <= 1e-9 && (pll - v).abs() < 1e-12 && (pll + 1.03972).abs() < 5e-6,
        format!("{checked} scores, max |Δ| vs brute force {worst:.1e}; hand value {pll:.5}"),
    )
}

// ---------------------------------------------------------------- 5 & 6

fn toy(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        phenomena: vec![Phenomenon::DNAgr, Phenomenon::SVAgrV],
        evidence: vec![Evidence::Direct, Evidence::SyntacticIndirect],
        frequencies: vec![0, 100],
        out_dir: out.to_path_buf(),
        ..ExperimentConfig::toy()
    }
}

fn key(ph: Phenomenon, ev: Option<Evidence>, n: usize, seed: u64) -> RunKey {
    RunKey { suite: Suite::Main, phenomenon: ph, evidence: ev, n, seed, init_std: 0.02, wug_mode: WugMode::Tag }
}

fn acc(runner: &mut Runner, k: &RunKey, method: ScoringMethod) -> f64 {
    let rows = runner.execute(k).unwrap_or_else(|e| panic!("{k}: {e}"));
    rows.iter().find(|r| r.method == method).map(|r| r.accuracy).unwrap()
}

fn toy_replication(runner: &mut Runner) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for ph in [Phenomenon::DNAgr, Phenomenon::SVAgrV] {
        let t0 = Instant::now();
        let de = key(ph, Some(Evidence::Direct), 100, 1);
        let base = key(ph, None, 0, 1);
        let a_de = acc(runner, &de, ScoringMethod::SentencePLL);
        let a_base = acc(runner, &base, ScoringMethod::SentencePLL);
        let pairs = runner.store.get(&de).unwrap().rows[0].num_pairs;
        let others: Vec<String> = [ScoringMethod::WugLevel, ScoringMethod::AntecedentLevel]
            .iter()
            .map(|&m| format!("{m} {:.2}/{:.2}", acc(runner, &de, m), acc(runner, &base, m)))
            .collect();
        let ok = a_de >= 0.85 && (0.35..=0.65).contains(&a_base) && pairs == 100;
        pass &= ok;
        parts.push(format!(
            "{ph}: DE@100 {a_de:.2}, n=0 {a_base:.2} [{}; {pairs} pairs, {:.0}s]",
            others.join(", "),
            t0.elapsed().as_secs_f64()
        ));
    }
    gate(pass, format!("SentencePLL; {}", parts.join(" | ")))
}

fn synie_trend(runner: &mut Runner) -> Outcome {
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 1..=3 {
        let de = acc(runner, &key(Phenomenon::DNAgr, Some(Evidence::Direct), 100, seed), ScoringMethod::SentencePLL);
        let syn =
            acc(runner, &key(Phenomenon::DNAgr, Some(Evidence::SyntacticIndirect), 100, seed), ScoringMethod::SentencePLL);
        wins += (de >= syn) as usize;
        parts.push(format!("s{seed} DE {de:.2} vs SynIE {syn:.2}"));
    }
    Outcome { pass: wins >= 2, gated: false, detail: format!("DNAgr n=100, {wins}/3 seeds DE ≥ SynIE: {}", parts.join(", ")) }
}

// ---------------------------------------------------------------- 7 & 8

fn micro(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        phenomena: vec![Phenomenon::DNAgr, Phenomenon::SVAgrV],
        evidence: Evidence::LEVELS.to_vec(),
        frequencies: vec![0, 5, 25],
        corpus: CorpusConfig { path: None, synthetic_sentences: 600 },
        expand: ExpandConfig { frames: 12, tag_sets: 1, ..ExpandConfig::default() },
        epochs: 1,
        vocab_size: 400,
        model: ModelConfig { layers: 1, heads: 2, hidden: 16, intermediate: 32, max_seq_len: 32, ..ExperimentConfig::toy().model },
        optim: OptimizerConfig { lr: 1e-3, warmup_steps: 2, batch: 16, grad_accum: 1, ..OptimizerConfig::default() },
        masking: MaskingPolicy::default(),
        checkpoint_every: Some(20),
        out_dir: out.to_path_buf(),
        ..ExperimentConfig::toy()
    }
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut csvs = Vec::new();
    for d in &dirs {
        let cfg = micro(d.path());
        let plan = plan_grid(&cfg);
        let s = Runner::new(cfg, false).unwrap().run_plan(&plan);
        if !s.failed.is_empty() {
            return gate(false, format!("failures: {:?}", s.failed));
        }
        csvs.push(std::fs::read(d.path().join("results.csv")).unwrap());
    }
    let rows = csvs[0].iter().filter(|&&b| b == b'\n').count() - 1;
    gate(csvs[0] == csvs[1], format!("2 executions of a {rows}-row grid, results.csv identical: {}", csvs[0] == csvs[1]))
}

fn ablation_mechanics() -> Outcome {
    let d = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { init_stds: vec![0.002, 0.02], seeds: vec![1, 2, 3], ..micro(d.path()) };
    let plan = plan_ablation(&cfg);
    let mut runner = Runner::new(cfg, false).unwrap();
    let s = runner.run_plan(&plan);
    if !s.failed.is_empty() {
        return gate(false, format!("failures: {:?}", s.failed));
    }
    let rows = summarize_ablation(&runner.store).unwrap();
    // Oracle: two-pass sample variance over the raw rows.
    let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for r in runner.store.rows(Suite::Main).into_iter().filter(|r| r.n == 0) {
        groups.entry((r.phenomenon.to_string(), format!("{}", r.init_std), r.method.to_string())).or_default().push(r.accuracy);
    }
    let mut worst = 0.0f64;
    for row in &rows {
        let xs = &groups[&(row.phenomenon.to_string(), format!("{}", row.init_std), row.method.to_string())];
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        worst = worst.max((m - row.mean).abs()).max((sd - row.std).abs());
    }
    let complete = rows.len() == 2 * 2 * 3 && rows.iter().all(|r| r.seeds == 3);
    let spread = |std: f64| {
        let v: Vec<f64> = rows.iter().filter(|r| r.init_std == std).map(|r| r.std).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    gate(
        complete && worst <= 1e-9,
        format!(
            "{} groups × 3 seeds, oracle max |Δ| {worst:.1e}; mean seed std: init 0.002 → {:.4}, init 0.02 → {:.4} (informational)",
            rows.len(),
            spread(0.002),
            spread(0.02)
        ),
    )
}

// ---------------------------------------------------------------- 9

/// The table's rows with `N` for a bank noun, `V` for the main verb and `R`
/// for the reflexive.
fn table_row(kind: Option<InterferenceKind>) -> &'static str {
    use InterferenceKind::*;
    match kind {
        None => "<w> V R",
        Some(At0) | Some(At1) => "<w> helping the N V R",
        Some(At2) => "<w> helping P V R",
        Some(An0) => "<w> helping the N to see the N V R",
        Some(An1) => "<w> helping the N for the N to see the N V R",
        Some(An2) => "<w> helping the N for the N of the N to see the N V R",
        Some(Dt0) => "<w> who helps the N V R",
        Some(Dt1) => "<w> whose N helps the N V R",
        Some(Dt2) => "<w> whose N helps the N who finds the N V R",
    }
}

fn matches_row(sentence: &str, wug: &str, feminine: bool, kind: Option<InterferenceKind>, lex: &Lexicon) -> bool {
    let nouns = |g: Option<Gender>| -> Vec<&str> {
        lex.nouns.iter().filter(|n| g.is_none_or(|g| n.gender == g)).flat_map(|n| [n.lemma.as_str(), n.plural.as_str()]).collect()
    };
    let opposite = if feminine { Gender::Masculine } else { Gender::Feminine };
    let bank = match kind {
        Some(InterferenceKind::At0) | Some(InterferenceKind::Dt0) | Some(InterferenceKind::Dt1) | Some(InterferenceKind::Dt2) => {
            nouns(Some(Gender::Neutral))
        }
        _ => nouns(Some(opposite)),
    };
    let verbs: Vec<&str> =
        lex.verbs.iter().filter(|v| v.classes.contains(&VerbClass::Refl)).map(|v| v.third.as_str()).collect();
    let pattern: Vec<&str> = table_row(kind).split(' ').collect();
    let words: Vec<&str> = sentence.split(' ').collect();
    words.len() == pattern.len()
        && pattern.iter().zip(&words).all(|(p, w)| match *p {
            "<w>" => *w == wug,
            "N" => bank.contains(w),
            "P" => *w == if feminine { "him" } else { "her" },
            "V" => verbs.contains(w),
            "R" => *w == if feminine { "herself" } else { "himself" },
            lit => lit == *w,
        })
}

fn interference_generators() -> Outcome {
    let lex = Lexicon::bundled();
    let banks = NounBanks::from_lexicon(&lex);
    let verbs: Vec<_> = lex.verbs.iter().filter(|v| v.classes.contains(&VerbClass::Refl)).cloned().collect();
    let wugs = make_tag_lexicon(100, 1, WugMode::Tag).unwrap().entries;
    let mut bad = Vec::new();
    let mut total = 0;
    let mut de_checked = false;
    for kind in InterferenceKind::ALL {
        let set = make_interference_set(kind, &banks, &verbs, &wugs, 17).unwrap();
        let mut check = |inst: &TrainingInstance, k: Option<InterferenceKind>| {
            let i = wugs.iter().position(|w| w.stem == inst.wug).unwrap();
            total += 1;
            if !matches_row(&inst.sentence, &inst.wug, i % 2 == 0, k, &lex) {
                bad.push(format!("{}: {}", k.map_or("DE".into(), |k| k.to_string()), inst.sentence));
            }
        };
        set.train.iter().for_each(|inst| check(inst, Some(kind)));
        if !de_checked {
            derive_de(&set.eval).iter().for_each(|inst| check(inst, None));
            de_checked = true;
        }
    }
    // Hand count over the AN2 row: the bold interferer span, wug and main verb excluded.
    let an2 = "helping the man for the son of the king to see the dad";
    let hand = an2.split(' ').count();
    let between = table_row(Some(InterferenceKind::An2)).split(' ').count() - 2;
    gate(
        bad.is_empty() && hand == 13 && InterferenceKind::An2.span_len() == 13,
        format!(
            "{total} instances over DE + 9 kinds, {} mismatches{}; AN2 span {} words (hand count {hand}; {between} incl. main verb)",
            bad.len(),
            bad.first().map_or(String::new(), |b| format!(" e.g. {b}")),
            InterferenceKind::An2.span_len()
        ),
    )
}

fn main() {
    let toy_dir = tempfile::tempdir().unwrap();
    let mut runner = Runner::new(toy(toy_dir.path()), false).expect("toy materials");
    type Check = Box<dyn Fn(&mut Runner) -> Outcome>;
    let criteria: Vec<(&str, Check)> = vec![
        ("1 injection exactness", Box::new(|_| injection_exactness())),
        ("2 tokenizer contracts", Box::new(|_| tokenizer_contracts())),
        ("3 gradient verification", Box::new(|_| gradient_verification())),
        ("4 PLL oracle equivalence", Box::new(|_| pll_oracle_equivalence())),
        ("9 interference generators", Box::new(|_| interference_generators())),
        ("7 determinism", Box::new(|_| determinism())),
        ("8 ablation mechanics", Box::new(|_| ablation_mechanics())),
        ("5 toy DE replication", Box::new(toy_replication)),
        ("6 DE ≥ SynIE trend", Box::new(synie_trend)),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let t0 = Instant::now();
        let o = run(&mut runner);
        let verdict = match (o.pass, o.gated) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FAIL (informational)",
        };
        failed += (!o.pass && o.gated) as usize;
        println!("criterion {name}: {verdict} — {} [{:.1}s]", o.detail, t0.elapsed().as_secs_f64());
    }
    if failed > 0 {
        eprintln!("{failed} gated criteria failed");
        std::process::exit(1);
    }
}
