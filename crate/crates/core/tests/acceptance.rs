//! Acceptance run: one line per criterion. Set `CUTLAB_STRICT_ACCEPTANCE=1`
//! to exit non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use cutlab::cli::{run_preset, ExperimentConfig};
use serde_json::Value;

struct Run {
    summary: Value,
    path: PathBuf,
    elapsed: Duration,
}

fn run(preset: &str, root: &Path, workers: Option<usize>) -> Run {
    let mut cfg = ExperimentConfig::preset_default(preset).expect("known preset");
    if let Some(w) = workers {
        cfg.workers = w;
    }
    cfg.out = root.join(format!("{preset}-w{}", cfg.workers));
    let start = Instant::now();
    let rep = run_preset(&cfg).unwrap_or_else(|e| panic!("{preset}: {e}"));
    Run { summary: rep.summary, path: rep.out.join("summary.json"), elapsed: start.elapsed() }
}

fn get<'a>(v: &'a Value, path: &str) -> &'a Value {
    path.split('.').fold(v, |v, key| match key.parse::<usize>() {
        Ok(i) => &v[i],
        Err(_) => &v[key],
    })
}

fn f(v: &Value, path: &str) -> f64 {
    get(v, path).as_f64().unwrap_or(f64::NAN)
}

fn b(v: &Value, path: &str) -> bool {
    get(v, path).as_bool().unwrap_or(false)
}

type Verdict = fn(&Value) -> (bool, String);

fn identity(s: &Value) -> (bool, String) {
    let worst = |key: &str| {
        s["results"]["chains"].as_array().unwrap().iter().map(|c| c[key].as_f64().unwrap()).fold(0.0, f64::max)
    };
    (
        b(s, "pass"),
        format!(
            "max D/G residual {:.1e}, max p/G residual {:.1e}, round trip {:.1e}",
            worst("d_g_residual"),
            worst("p_g_residual"),
            worst("round_trip_error")
        ),
    )
}

fn dichotomy(s: &Value) -> (bool, String) {
    let r = &s["results"];
    (
        b(s, "pass"),
        format!(
            "A median certified {}, B median new {}, B max residual {:.1e}",
            get(r, "chains.0.median_certified"),
            get(r, "chains.1.median_new"),
            f(r, "chains.1.max_residual")
        ),
    )
}

fn visits(s: &Value) -> (bool, String) {
    let r = &s["results"];
    (
        b(s, "pass"),
        format!(
            "KS p-value {:.3}, mean H_0 {:.4} ± {:.4}",
            f(r, "fit.ks.p_value"),
            f(r, "mean_visits_zero"),
            f(r, "se_visits_zero")
        ),
    )
}

fn optional_stopping(s: &Value) -> (bool, String) {
    let rows = s["results"]["never_recovery"].as_array().unwrap();
    let worst = rows
        .iter()
        .map(|x| (f(x, "empirical") - f(x, "predicted")).abs() / f(x, "sigma"))
        .fold(0.0, f64::max);
    (b(s, "pass"), format!("{} level pairs, worst deviation {worst:.2}σ", rows.len()))
}

fn sandwich(s: &Value) -> (bool, String) {
    let r = &s["results"];
    (
        b(s, "pass"),
        format!(
            "Ĉ calibration {}, held-out {}, lower {} upper {}",
            get(r, "calibration.report.c_hat"),
            get(r, "held_out.report.c_hat"),
            get(r, "calibration.report.lower_ok"),
            get(r, "calibration.report.upper_ok")
        ),
    )
}

fn density(s: &Value) -> (bool, String) {
    (b(s, "pass"), format!("ψ-good fractions {}", s["results"]["good_fraction"]))
}

fn vc(s: &Value) -> (bool, String) {
    let r = &s["results"];
    (
        b(s, "pass"),
        format!(
            "{} triples, {} violations ({} against twice the bound)",
            r["triples"], r["violations"], r["violations_doubled"]
        ),
    )
}

fn ratio_lemma(s: &Value) -> (bool, String) {
    let r = &s["results"]["ratio_lemma"];
    (
        b(r, "all_within_two") && b(r, "unkilled_within_one"),
        format!("{} configurations, max estimate {:.4}", r["configs"], f(r, "max_estimate")),
    )
}

fn trend(s: &Value) -> (bool, String) {
    let t = &s["results"]["trend"];
    (
        b(s, "results.trend_ok"),
        format!(
            "{:.0}% of seeds in band, ratios in [{:.3}, {:.3}]",
            100.0 * f(t, "fraction"),
            f(t, "min_ratio"),
            f(t, "max_ratio")
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let criteria: [(usize, &str, &str, u64, Verdict); 9] = [
        (1, "identity audit", "identity-audit", 5, identity),
        (2, "dichotomy", "dichotomy", 600, dichotomy),
        (3, "geometric visits", "visits-geometric", 30, visits),
        (4, "optional stopping", "scale-audit", 60, optional_stopping),
        (5, "sandwich", "sandwich", 300, sandwich),
        (6, "psi-good density", "density", 120, density),
        (7, "Varopoulos-Carne", "vc-audit", 60, vc),
        (8, "ratio lemma", "killing-survival", 60, ratio_lemma),
        (9, "log-ratio trend", "killing-survival", 120, trend),
    ];
    let mut runs: BTreeMap<&str, Run> = BTreeMap::new();
    let mut lines = Vec::new();
    for (id, name, preset, limit, verdict) in criteria {
        let r = runs.entry(preset).or_insert_with(|| run(preset, root, None));
        let (ok, mut detail) = verdict(&r.summary);
        let in_time = r.elapsed < Duration::from_secs(limit);
        if !in_time {
            detail.push_str(&format!("; over the {limit}s limit"));
        }
        lines.push((id, name, ok && in_time, detail, r.elapsed));
    }

    let start = Instant::now();
    let default_workers = ExperimentConfig::preset_default("density").unwrap().workers;
    let other = if default_workers == 1 { 2 } else { 1 };
    let mismatched: Vec<&str> = runs
        .iter()
        .filter(|(preset, r)| {
            let again = run(preset, &root.join("rerun"), Some(other));
            std::fs::read(&r.path).unwrap() != std::fs::read(&again.path).unwrap()
        })
        .map(|(p, _)| *p)
        .collect();
    lines.push((
        10,
        "determinism",
        mismatched.is_empty(),
        format!("{} presets at {default_workers} and {other} workers, mismatched {mismatched:?}", runs.len()),
        start.elapsed(),
    ));

    let mut failed = 0;
    for (id, name, pass, detail, elapsed) in &lines {
        println!(
            "criterion {id:>2} {name:<18} {}  {detail} ({:.1}s)",
            if *pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        failed += usize::from(!pass);
    }
    println!("{} of {} criteria passed", lines.len() - failed, lines.len());
    if failed > 0 && std::env::var("CUTLAB_STRICT_ACCEPTANCE").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
