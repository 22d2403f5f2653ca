//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use common::*;
use ftm_core::mapper::{classify_numeric_text, NumericTextClass};
use ftm_core::osm::{FunctionClass, MappingTable};
use ftm_core::strpost::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = fn() -> Check;
type TagCase = (
    &'static str,
    &'static [(&'static str, &'static str)],
    FunctionClass,
);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn run_until(work: &std::path::Path, last: &str) {
    for stage in STAGES {
        if stage == last {
            return;
        }
        ok(work, &[stage]);
    }
}

fn percent_after(text: &str, label: &str) -> Option<f64> {
    let rest = &text[text.find(label)? + label.len()..];
    rest.trim_start().split('%').next()?.trim().parse().ok()
}

fn table_counts() -> Check {
    let work = tempfile::tempdir().unwrap();
    run_until(work.path(), "aggregate");
    let t0 = Instant::now();
    let out = ok(work.path(), &["aggregate"]);
    let elapsed = t0.elapsed();
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(work.path().join("aggregate.json")).unwrap())
            .unwrap();
    let want = [
        ("residential", 1833, 892),
        ("commercial", 605, 330),
        ("other", 993, 336),
        ("total", 3431, 1558),
    ];
    for (class, images, with_text) in want {
        let got = (
            json[class]["images"].as_u64(),
            json[class]["images_with_text"].as_u64(),
        );
        ensure(
            got == (Some(images), Some(with_text)),
            format!("{class}: got {got:?}"),
        )?;
        let row = out.lines().find(|l| l.starts_with(class)).unwrap_or("");
        let nums: Vec<&str> = row.split_whitespace().skip(1).collect();
        ensure(
            nums == [images.to_string(), with_text.to_string()],
            format!("printed row `{row}`"),
        )?;
    }
    let ratio = percent_after(&out, "with-text ratio:").ok_or("no with-text ratio line")?;
    ensure(
        (ratio - 45.4).abs() <= 0.05,
        format!("with-text ratio {ratio}%"),
    )?;
    ensure(
        elapsed < Duration::from_secs(5),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "1833/892 605/330 993/336 3431/1558, {ratio}% in {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn class_shares() -> Check {
    let work = tempfile::tempdir().unwrap();
    run_until(work.path(), "export");
    let out = ok(work.path(), &["aggregate"]);
    let mut got = Vec::new();
    for (label, want) in [
        ("residential", 53.42),
        ("commercial", 17.63),
        ("other", 28.94),
    ] {
        let line = out
            .lines()
            .find(|l| l.starts_with("class shares:"))
            .ok_or("no class shares line")?;
        let v = percent_after(line, label).ok_or(format!("no {label} share"))?;
        ensure((v - want).abs() <= 0.01, format!("{label} {v}% vs {want}%"))?;
        got.push(format!("{v:.2}%"));
    }
    Ok(got.join(" / "))
}

fn synthetic_matching() -> Check {
    let work = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    let out = ok(work.path(), &["synth-eval", "--seeds", "1000"]);
    let elapsed = t0.elapsed();
    let field = |name: &str| -> Option<u64> {
        let first = out.lines().next()?;
        let rest = &first[first.find(name)? + name.len()..];
        rest.trim_start().split(',').next()?.trim().parse().ok()
    };
    let scenes = field("scenes").ok_or("no scene count")?;
    let agreements = field("agreements").ok_or("no agreement count")?;
    let knife = field("knife-edge").ok_or("no knife-edge count")?;
    let unexplained = field("unexplained").ok_or("no unexplained count")?;
    ensure(scenes == 1000, format!("{scenes} scenes"))?;
    ensure(
        scenes - unexplained >= 999,
        format!("{unexplained} unexplained disagreements"),
    )?;
    ensure(
        elapsed < Duration::from_secs(10),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "{agreements}/1000 agree, {knife} knife-edge, {unexplained} unexplained, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

const WORDS: [&str; 14] = [
    "Apotheke",
    "und",
    "the",
    "Theater",
    "aaaa",
    "1952",
    "19",
    "ababab",
    "Café",
    "K2M7",
    "Zoo",
    "Die",
    "Brennnessel",
    "...",
];

fn random_detections(rng: &mut ChaCha8Rng, n: usize) -> Vec<StrDetection> {
    let grid = [0.0, 0.5, 0.79, 0.8, 0.8000001, 0.81, 0.9, 1.0];
    (0..n)
        .map(|i| {
            let text = if rng.random_bool(0.5) {
                WORDS[rng.random_range(0..WORDS.len())].to_string()
            } else {
                let len = rng.random_range(1..7);
                (0..len)
                    .map(|_| b"abcdeXYZ019 .-"[rng.random_range(0..14)] as char)
                    .collect()
            };
            let mut score = || {
                if rng.random_bool(0.3) {
                    grid[rng.random_range(0..grid.len())]
                } else {
                    rng.random_range(0.0..=1.0)
                }
            };
            let (text_score, box_score) = (score(), score());
            StrDetection {
                photo_id: format!("p{i:05}"),
                text,
                text_score,
                bbox: vec![[0.0, 0.0], [10.0, 0.0], [10.0, 4.0], [0.0, 4.0]],
                box_score,
            }
        })
        .collect()
}

fn ids(v: &[StrDetection]) -> std::collections::BTreeSet<&str> {
    v.iter().map(|d| d.photo_id.as_str()).collect()
}

fn filter_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(20230613);
    let dets = random_detections(&mut rng, 10_000);
    let config = StrFilterConfig::default();
    let thresholds = [0.0, 0.3, 0.5, 0.79, 0.8, 0.81, 0.95, 1.0];
    for &t1 in &thresholds {
        for &t2 in &thresholds {
            let base = score_filter(&dets, t1, t2);
            let base_ids = ids(&base);
            for &u in thresholds.iter().filter(|&&u| u >= t1) {
                ensure(
                    ids(&score_filter(&dets, u, t2)).is_subset(&base_ids),
                    format!("text {t1}->{u} grew"),
                )?;
            }
            for &u in thresholds.iter().filter(|&&u| u >= t2) {
                ensure(
                    ids(&score_filter(&dets, t1, u)).is_subset(&base_ids),
                    format!("box {t2}->{u} grew"),
                )?;
            }
        }
    }
    let s = score_filter(&dets, 0.8, 0.8);
    ensure(
        score_filter(&s, 0.8, 0.8) == s,
        "score filter not idempotent",
    )?;
    let w = stopword_filter(&dets, &config.stopwords);
    ensure(
        stopword_filter(&w, &config.stopwords) == w,
        "stopword filter not idempotent",
    )?;
    let r = repetition_filter(&dets, &config.repetition, &config.allowlist);
    ensure(
        repetition_filter(&r, &config.repetition, &config.allowlist) == r,
        "repetition filter not idempotent",
    )?;

    let kept = filter_pipeline(&dets, &config)
        .map_err(|e| e.to_string())?
        .kept;
    let kept_ids = ids(&kept);
    ensure(kept_ids.is_subset(&ids(&s)), "pipeline kept a score reject")?;
    ensure(kept_ids.is_subset(&ids(&w)), "pipeline kept a stopword")?;
    ensure(
        kept_ids.is_subset(&ids(&r)),
        "pipeline kept a repetitive string",
    )?;

    let at_boundary: Vec<&StrDetection> = dets
        .iter()
        .filter(|d| d.text_score == 0.8 || d.box_score == 0.8)
        .collect();
    ensure(!at_boundary.is_empty(), "no boundary cases generated")?;
    ensure(
        at_boundary
            .iter()
            .all(|d| !ids(&s).contains(d.photo_id.as_str())),
        "a score of exactly 0.8 was kept",
    )?;
    Ok(format!(
        "10000 detections, {} kept, {} at the 0.8 boundary dropped",
        kept.len(),
        at_boundary.len()
    ))
}

/// Independent statement of the numeric classes.
fn expected_class(text: &str, year: u32) -> NumericTextClass {
    let t = text.trim();
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    let tail: Vec<char> = t.chars().skip(digits).collect();
    if !t.chars().any(|c| c.is_ascii_digit()) {
        NumericTextClass::NonNumeric
    } else if digits == 4 && tail.is_empty() && (1200..=year).contains(&t.parse::<u32>().unwrap()) {
        NumericTextClass::ConstructionYear
    } else if (1..=4).contains(&digits)
        && (tail.is_empty() || (tail.len() == 1 && tail[0].is_alphabetic()))
    {
        NumericTextClass::HouseNumber
    } else {
        NumericTextClass::OtherNumber
    }
}

fn numeric_classes() -> Check {
    let year = 2024;
    ensure(
        classify_numeric_text("1952", year) == NumericTextClass::ConstructionYear,
        "1952",
    )?;
    for s in ["19", "30", "10"] {
        ensure(
            classify_numeric_text(s, year) == NumericTextClass::HouseNumber,
            s,
        )?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let alphabet: Vec<char> = "0123456789012345abzAZ äß/.-".chars().collect();
    let mut tally: BTreeMap<NumericTextClass, usize> = BTreeMap::new();
    for _ in 0..10_000 {
        let len = rng.random_range(0..8);
        let s: String = (0..len)
            .map(|_| alphabet[rng.random_range(0..alphabet.len())])
            .collect();
        let got = classify_numeric_text(&s, year);
        let want = expected_class(&s, year);
        ensure(got == want, format!("{s:?}: {got} vs {want}"))?;
        *tally.entry(got).or_default() += 1;
    }
    ensure(
        tally.values().sum::<usize>() == 10_000,
        "partition not total",
    )?;
    ensure(
        tally.len() == 4,
        format!("only {} classes seen", tally.len()),
    )?;
    let parts: Vec<String> = tally.iter().map(|(k, v)| format!("{k} {v}")).collect();
    Ok(parts.join(", "))
}

fn permutations(items: &[(&str, &str)]) -> Vec<Vec<(String, String)>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let (k, v) = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, (k.to_string(), v.to_string()));
            out.push(tail);
        }
    }
    out
}

fn osm_aggregation() -> Check {
    let table = MappingTable::bundled();
    let cases: [TagCase; 4] = [
        (
            "single",
            &[("building", "house")],
            FunctionClass::Residential,
        ),
        (
            "agreeing",
            &[("building", "retail"), ("shop", "bakery"), ("name", "Kiez")],
            FunctionClass::Commercial,
        ),
        (
            "disagreeing",
            &[
                ("building", "apartments"),
                ("shop", "bakery"),
                ("amenity", "cafe"),
            ],
            FunctionClass::Unmapped,
        ),
        (
            "no vote",
            &[("building", "yes"), ("roof:shape", "flat")],
            FunctionClass::Unmapped,
        ),
    ];
    let mut orderings = 0;
    for (name, tags, want) in cases {
        for perm in permutations(tags) {
            let got = table.aggregate_function(perm.iter().map(|(k, v)| (k, v)));
            ensure(got == want, format!("{name} {perm:?}: {got}"))?;
            orderings += 1;
        }
    }
    Ok(format!(
        "residential / commercial / unmapped over {orderings} orderings"
    ))
}

fn determinism() -> Check {
    let work = tempfile::tempdir().unwrap();
    for stage in STAGES {
        ok(work.path(), &[stage]);
        let first = snapshot(work.path());
        ok(work.path(), &[stage]);
        ensure(
            first == snapshot(work.path()),
            format!("{stage} changed its artifacts on re-run"),
        )?;
    }
    let audit = |seed: &str| ok(work.path(), &["audit-sample", "--seed", seed, "--n", "32"]);
    let a = audit("7");
    ensure(a == audit("7"), "audit-sample output differs between runs")?;
    ensure(
        a.lines().count() == 33,
        "audit-sample did not list 32 photos",
    )?;
    let fresh = tempfile::tempdir().unwrap();
    ok(fresh.path(), &["pipeline"]);
    ensure(
        snapshot(fresh.path()) == snapshot(work.path()),
        "pipeline differs from staged run",
    )?;
    ensure(
        ok(fresh.path(), &["audit-sample", "--seed", "7", "--n", "32"]) == a,
        "audit-sample differs across work dirs",
    )?;
    Ok(format!(
        "{} stages byte-identical, audit-sample stable",
        STAGES.len()
    ))
}

fn main() {
    let criteria: [(&str, Criterion); 7] = [
        ("function table counts and with-text ratio", table_counts),
        ("class shares", class_shares),
        ("synthetic matching agreement", synthetic_matching),
        ("text filter properties", filter_properties),
        ("numeric text classes", numeric_classes),
        ("tag aggregation", osm_aggregation),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS {}. {name}: {detail}", i + 1),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {}. {name}: {why}", i + 1);
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {}. {name}: panicked", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
