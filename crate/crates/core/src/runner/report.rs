use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::store::write_atomic;
use super::{ResultStore, RunnerError, Suite};
use crate::eval::{EvalResult, ScoringMethod};
use crate::template::Phenomenon;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub phenomenon: Phenomenon,
    pub init_std: f64,
    pub method: ScoringMethod,
    pub seeds: usize,
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
}

/// Mean and sample standard deviation (Welford).
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, &x) in xs.iter().enumerate() {
        let d = x - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (x - mean);
    }
    let var = if xs.len() > 1 { m2 / (xs.len() - 1) as f64 } else { 0.0 };
    (mean, var.max(0.0).sqrt())
}

/// Mean ± std of n=0 accuracy across seeds for every (phenomenon,
/// init_std, method) group of the main suite.
pub fn summarize_ablation(store: &ResultStore) -> Result<Vec<AblationRow>, RunnerError> {
    let mut groups: BTreeMap<(Phenomenon, u64, ScoringMethod), Vec<(u64, f64)>> = BTreeMap::new();
    for r in store.rows(Suite::Main).into_iter().filter(|r| r.n == 0) {
        groups.entry((r.phenomenon, r.init_std.to_bits(), r.method)).or_default().push((r.seed, r.accuracy));
    }
    if groups.is_empty() {
        return Err(RunnerError::EmptyStore);
    }
    let mut out = Vec::new();
    for ((phenomenon, std_bits, method), mut v) in groups {
        v.sort_by_key(|x| x.0);
        let init_std = f64::from_bits(std_bits);
        if v.len() < 2 {
            return Err(RunnerError::InsufficientSeeds { group: format!("{phenomenon}/std{init_std}/{method}"), have: v.len() });
        }
        let xs: Vec<f64> = v.iter().map(|x| x.1).collect();
        let (mean, std) = mean_std(&xs);
        out.push(AblationRow { phenomenon, init_std, method, seeds: xs.len(), mean, std });
    }
    out.sort_by(|a, b| (a.phenomenon, a.method).cmp(&(b.phenomenon, b.method)).then(b.init_std.total_cmp(&a.init_std)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    /// (x index, accuracy in [0,1]).
    pub points: Vec<(usize, f64)>,
}

const PALETTE: [&str; 10] =
    ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f"];

/// A line chart with categorical x positions, y in [0,1] shown as percent,
/// and an optional dotted horizontal baseline.
pub fn render_line_chart(title: &str, x_labels: &[String], series: &[Series], baseline: Option<f64>) -> String {
    let (w, h) = (560.0, 360.0);
    let (left, right, top, bottom) = (56.0, 130.0, 36.0, 44.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let slots = x_labels.len().max(1);
    let x = |i: usize| left + if slots == 1 { pw / 2.0 } else { pw * i as f64 / (slots - 1) as f64 };
    let y = |v: f64| top + ph * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, left + pw / 2.0, xml_escape(title));
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let _ = writeln!(
            s,
            "<line x1=\"{left}\" y1=\"{0:.1}\" x2=\"{1:.1}\" y2=\"{0:.1}\" stroke=\"#e5e5e5\"/><text x=\"{2}\" y=\"{3:.1}\" text-anchor=\"end\">{4}</text>",
            y(v),
            left + pw,
            left - 6.0,
            y(v) + 4.0,
            (v * 100.0).round()
        );
    }
    for (i, label) in x_labels.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, x(i), top + ph + 16.0, xml_escape(label));
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">n</text>"#, left + pw / 2.0, h - 8.0);
    let _ = writeln!(s, r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##);
    if let Some(b) = baseline {
        let _ = writeln!(
            s,
            "<line class=\"baseline\" x1=\"{left}\" y1=\"{0:.1}\" x2=\"{1:.1}\" y2=\"{0:.1}\" stroke=\"#999\" stroke-dasharray=\"2,3\" stroke-width=\"1.5\"/>",
            y(b),
            left + pw
        );
    }
    for (k, se) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = se.points.iter().map(|&(i, v)| format!("{:.1},{:.1}", x(i), y(v))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for &(i, v) in &se.points {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}"/>"#, x(i), y(v));
        }
        let ly = top + 14.0 + 16.0 * k as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            xml_escape(&se.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Series (one per evidence label, seeds averaged) and the n=0 baseline.
fn chart_data(rows: &[&EvalResult], order: &[String]) -> (Vec<String>, Vec<Series>, Option<f64>) {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).filter(|&n| n > 0).collect();
    ns.sort_unstable();
    ns.dedup();
    let mut acc: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    let mut base = Vec::new();
    for r in rows {
        if r.n == 0 {
            base.push(r.accuracy);
        } else {
            acc.entry((r.evidence.clone(), r.n)).or_default().push(r.accuracy);
        }
    }
    let mut labels: Vec<String> = order.iter().filter(|l| acc.keys().any(|k| &k.0 == *l)).cloned().collect();
    for (l, _) in acc.keys() {
        if !labels.contains(l) {
            labels.push(l.clone());
        }
    }
    let series = labels
        .into_iter()
        .map(|label| Series {
            points: ns
                .iter()
                .enumerate()
                .filter_map(|(i, n)| acc.get(&(label.clone(), *n)).map(|v| (i, mean_std(v).0)))
                .collect(),
            name: label,
        })
        .collect();
    let baseline = (!base.is_empty()).then(|| mean_std(&base).0);
    (ns.iter().map(|n| n.to_string()).collect(), series, baseline)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub csv: Vec<PathBuf>,
    pub svg: Vec<PathBuf>,
    pub ablation: Option<Vec<AblationRow>>,
    pub failures: Vec<String>,
}

/// Writes the results CSVs, accuracy-vs-n charts per (phenomenon, method,
/// std), an interference chart, the seed ablation summary when available,
/// and a list of failed runs. `phenomena = Some(&[])` writes CSVs only.
pub fn emit_report(store: &ResultStore, out_dir: &Path, phenomena: Option<&[Phenomenon]>) -> Result<Report, RunnerError> {
    if store.is_empty() {
        return Err(RunnerError::EmptyStore);
    }
    let mut rep = Report::default();
    let main_csv = out_dir.join("results.csv");
    write_atomic(&main_csv, store.csv(Suite::Main).as_bytes())?;
    rep.csv.push(main_csv);
    let itf_rows = store.rows(Suite::Interference);
    if !itf_rows.is_empty() {
        let p = out_dir.join("interference.csv");
        write_atomic(&p, store.csv(Suite::Interference).as_bytes())?;
        rep.csv.push(p);
    }

    let main_rows = store.rows(Suite::Main);
    let wanted: Vec<Phenomenon> = match phenomena {
        Some(list) => list.to_vec(),
        None => {
            let mut v: Vec<Phenomenon> = main_rows.iter().map(|r| r.phenomenon).collect();
            v.sort();
            v.dedup();
            v
        }
    };
    let order: Vec<String> = ["DE", "LexIE", "SynIE"].iter().map(|s| s.to_string()).collect();
    let mut groups: BTreeMap<(Phenomenon, ScoringMethod, u64), Vec<&EvalResult>> = BTreeMap::new();
    for r in &main_rows {
        if wanted.contains(&r.phenomenon) {
            groups.entry((r.phenomenon, r.method, r.init_std.to_bits())).or_default().push(r);
        }
    }
    for ((ph, method, std_bits), rows) in groups {
        let std = f64::from_bits(std_bits);
        let (xl, series, base) = chart_data(&rows, &order);
        let title = format!("{ph} ({method}, std {std})");
        let p = out_dir.join(format!("fig2_{}_{}_std{std}.svg", ph.slug(), method.as_str().to_ascii_lowercase()));
        write_atomic(&p, render_line_chart(&title, &xl, &series, base).as_bytes())?;
        rep.svg.push(p);
    }
    if phenomena.is_none_or(|l| !l.is_empty()) && !itf_rows.is_empty() {
        let order: Vec<String> = super::interference_levels().iter().map(|e| e.label()).collect();
        let mut groups: BTreeMap<(ScoringMethod, u64), Vec<&EvalResult>> = BTreeMap::new();
        for r in &itf_rows {
            groups.entry((r.method, r.init_std.to_bits())).or_default().push(r);
        }
        for ((method, std_bits), rows) in groups {
            let std = f64::from_bits(std_bits);
            let (xl, series, base) = chart_data(&rows, &order);
            let p = out_dir.join(format!("fig3_interference_{}_std{std}.svg", method.as_str().to_ascii_lowercase()));
            write_atomic(&p, render_line_chart(&format!("Interference ({method}, std {std})"), &xl, &series, base).as_bytes())?;
            rep.svg.push(p);
        }
    }

    if let Ok(rows) = summarize_ablation(store) {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &rows {
            w.serialize(r).expect("serializable");
        }
        let p = out_dir.join("ablation.csv");
        write_atomic(&p, &w.into_inner().expect("in-memory"))?;
        rep.csv.push(p);
        rep.ablation = Some(rows);
    }
    rep.failures = store.failures().iter().map(|r| format!("{}: {}", r.key, r.error.as_deref().unwrap_or(""))).collect();
    if !rep.failures.is_empty() {
        write_atomic(&out_dir.join("failures.txt"), (rep.failures.join("\n") + "\n").as_bytes())?;
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::{RunKey, RunMeta, RunRecord};
    use crate::template::Evidence;
    use crate::wug::WugMode;
    use proptest::prelude::*;

    fn rec(ph: Phenomenon, evidence: Option<Evidence>, n: usize, seed: u64, init_std: f64, acc: f64) -> RunRecord {
        let key = RunKey { suite: Suite::Main, phenomenon: ph, evidence, n, seed, init_std, wug_mode: WugMode::Tag };
        let row = EvalResult {
            phenomenon: ph,
            evidence: key.evidence_label(),
            n,
            seed,
            init_std,
            wug_mode: WugMode::Tag,
            method: ScoringMethod::SentencePLL,
            accuracy: acc,
            num_pairs: 10,
            tie_count: 0,
        };
        RunRecord { key, rows: vec![row], error: None, meta: RunMeta::default() }
    }

    fn two_pass(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
        (mean, (ss / (n - 1.0)).sqrt())
    }

    #[test]
    fn three_seed_summary() {
        let mut s = ResultStore::in_memory();
        for (seed, a) in [(1, 0.891), (2, 0.917), (3, 0.898)] {
            s.put(rec(Phenomenon::Transitive, None, 0, seed, 0.02, a)).unwrap();
        }
        let rows = summarize_ablation(&s).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].mean - 0.902).abs() < 1e-12);
        // sqrt((0.011² + 0.015² + 0.004²) / 2)
        assert!((rows[0].std - 0.000181f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_have_zero_std() {
        let mut s = ResultStore::in_memory();
        for seed in 1..=3 {
            s.put(rec(Phenomenon::DNAgr, None, 0, seed, 0.002, 0.5)).unwrap();
        }
        assert_eq!(summarize_ablation(&s).unwrap()[0].std, 0.0);
    }

    #[test]
    fn one_seed_is_insufficient() {
        let mut s = ResultStore::in_memory();
        assert!(matches!(summarize_ablation(&s), Err(RunnerError::EmptyStore)));
        s.put(rec(Phenomenon::DNAgr, None, 0, 1, 0.02, 0.5)).unwrap();
        assert!(matches!(summarize_ablation(&s), Err(RunnerError::InsufficientSeeds { have: 1, .. })));
    }

    proptest! {
        #[test]
        fn welford_matches_two_pass(xs in prop::collection::vec(0.0f64..1.0, 2..12)) {
            let (m, s) = mean_std(&xs);
            let (m2, s2) = two_pass(&xs);
            prop_assert!((m - m2).abs() < 1e-9);
            prop_assert!((s - s2).abs() < 1e-9);
        }
    }

    fn grid_store() -> ResultStore {
        let mut s = ResultStore::in_memory();
        s.put(rec(Phenomenon::DNAgr, None, 0, 1, 0.02, 0.5)).unwrap();
        for (k, e) in Evidence::LEVELS.into_iter().enumerate() {
            for n in [1, 25, 100] {
                s.put(rec(Phenomenon::DNAgr, Some(e), n, 1, 0.02, 0.5 + 0.1 * k as f64 + n as f64 / 1000.0)).unwrap();
            }
        }
        s
    }

    #[test]
    fn report_chart_structure() {
        let dir = tempfile::tempdir().unwrap();
        let s = grid_store();
        let rep = emit_report(&s, dir.path(), None).unwrap();
        assert_eq!(rep.svg.len(), 1);
        let svg = std::fs::read_to_string(&rep.svg[0]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert_eq!(svg.matches("class=\"baseline\"").count(), 1);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(csv.lines().count() - 1, s.all_rows().len());
        assert!(rep.ablation.is_none());
    }

    #[test]
    fn empty_filter_writes_csv_only() {
        let dir = tempfile::tempdir().unwrap();
        let rep = emit_report(&grid_store(), dir.path(), Some(&[])).unwrap();
        assert!(rep.svg.is_empty());
        assert_eq!(rep.csv.len(), 1);
        assert!(matches!(emit_report(&ResultStore::in_memory(), dir.path(), None), Err(RunnerError::EmptyStore)));
    }
}
