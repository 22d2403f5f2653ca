//! Post-processing of scene-text recognition output.
//!
//! Detections arrive as JSONL from an external recognition engine. Three
//! filters run in a fixed order: confidence scores, stopwords, and strings
//! made of repeated letters (window rows and railings read as text).

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::FilterReport;

const STOPWORDS_EN: &str = include_str!("../data/stopwords_en.txt");
const STOPWORDS_DE: &str = include_str!("../data/stopwords_de.txt");
const REPETITION_ALLOWLIST: &str = include_str!("../data/repetition_allowlist.txt");

/// Score thresholds used for the published Berlin results.
pub const DEFAULT_TEXT_THRESHOLD: f64 = 0.8;
pub const DEFAULT_BOX_THRESHOLD: f64 = 0.8;

/// One recognised text instance. Field order is the canonical JSONL order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrDetection {
    pub photo_id: String,
    pub text: String,
    pub text_score: f64,
    /// Text region outline in image pixels.
    #[serde(rename = "box")]
    pub bbox: Vec<[f64; 2]>,
    pub box_score: f64,
}

impl StrDetection {
    pub fn validate(&self) -> Result<()> {
        if self.photo_id.is_empty() {
            return Err(Error::validation("detection without photo_id"));
        }
        if self.text.is_empty() {
            return Err(Error::validation(format!(
                "empty text in detection for {}",
                self.photo_id
            )));
        }
        for (name, s) in [
            ("text_score", self.text_score),
            ("box_score", self.box_score),
        ] {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::validation(format!("{name} {s} outside [0, 1]")));
            }
        }
        if self.bbox.len() < 3 {
            return Err(Error::validation(format!(
                "box of {} has {} points, need at least 3",
                self.photo_id,
                self.bbox.len()
            )));
        }
        if self.bbox.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("box coordinate is not finite"));
        }
        Ok(())
    }
}

/// Parses a detection file. Any line that violates the schema is an error:
/// this file is the contract with the recognition engine.
pub fn parse_detections(text: &str, source_name: &str) -> Result<Vec<StrDetection>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let loc = || format!("line {}", i + 1);
        let det: StrDetection = serde_json::from_str(line)
            .map_err(|e| Error::parse(source_name, loc(), e.to_string()))?;
        det.validate()
            .map_err(|e| Error::parse(source_name, loc(), e.to_string()))?;
        out.push(det);
    }
    Ok(out)
}

pub fn read_detections(path: &Path) -> Result<Vec<StrDetection>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text, &path.display().to_string())
}

pub fn write_detections(dets: &[StrDetection]) -> String {
    let mut out = String::new();
    for d in dets {
        out.push_str(&serde_json::to_string(d).expect("detection serializes"));
        out.push('\n');
    }
    out
}

/// Lowercase stopword sets keyed by language code.
#[derive(Debug, Clone, PartialEq)]
pub struct StopwordLists {
    lists: BTreeMap<String, HashSet<String>>,
}

fn word_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

impl StopwordLists {
    /// English and German lists shipped with the crate.
    pub fn bundled() -> Self {
        let mut lists = Self {
            lists: BTreeMap::new(),
        };
        lists
            .add_list("en", STOPWORDS_EN)
            .expect("bundled list is valid");
        lists
            .add_list("de", STOPWORDS_DE)
            .expect("bundled list is valid");
        lists
    }

    pub fn empty() -> Self {
        Self {
            lists: BTreeMap::new(),
        }
    }

    /// Adds (or replaces) a language from a one-token-per-line text with `#`
    /// comments.
    pub fn add_list(&mut self, lang: &str, text: &str) -> Result<()> {
        let mut set = HashSet::new();
        for word in word_lines(text) {
            if word.to_lowercase() != word {
                return Err(Error::validation(format!(
                    "stopword '{word}' in list '{lang}' is not lowercase"
                )));
            }
            set.insert(word.to_string());
        }
        if set.is_empty() {
            return Err(Error::validation(format!(
                "stopword list '{lang}' is empty"
            )));
        }
        self.lists.insert(lang.to_string(), set);
        Ok(())
    }

    pub fn load(&mut self, lang: &str, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.add_list(lang, &text)
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.lists.keys().map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.lists.values().any(|set| set.contains(token))
    }

    pub fn is_stopword(&self, text: &str) -> bool {
        self.contains(&normalize_token(text))
    }
}

impl Default for StopwordLists {
    fn default() -> Self {
        Self::bundled()
    }
}

/// Lowercased, with leading and trailing punctuation removed.
pub fn normalize_token(text: &str) -> String {
    text.trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

pub fn bundled_allowlist() -> HashSet<String> {
    word_lines(REPETITION_ALLOWLIST)
        .map(str::to_string)
        .collect()
}

pub fn load_allowlist(path: &Path) -> Result<HashSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(word_lines(&text).map(str::to_lowercase).collect())
}

/// Tuning for the repeated-letter heuristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepetitionRule {
    /// A run of this many identical letters marks a string as noise.
    pub max_run: usize,
    /// Strings at least this long are checked for low letter variety.
    pub min_len: usize,
    /// Noise when distinct letters / length is at or below this ratio.
    pub max_distinct_ratio: f64,
}

impl Default for RepetitionRule {
    fn default() -> Self {
        Self {
            max_run: 3,
            min_len: 4,
            max_distinct_ratio: 1.0 / 3.0,
        }
    }
}

/// Lowercased letters only; punctuation, digits and whitespace removed.
pub fn fold_letters(text: &str) -> String {
    text.chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect()
}

impl RepetitionRule {
    /// True when the string looks like a misread repetitive structure.
    /// Strings with no letters (house numbers and the like) never are.
    pub fn is_repetitive(&self, text: &str, allowlist: &HashSet<String>) -> bool {
        let folded: Vec<char> = fold_letters(text).chars().collect();
        if folded.is_empty() {
            return false;
        }
        let mut longest = 1;
        let mut run = 1;
        for w in folded.windows(2) {
            run = if w[0] == w[1] { run + 1 } else { 1 };
            longest = longest.max(run);
        }
        let len = folded.len();
        let distinct = folded.iter().collect::<HashSet<_>>().len();
        let low_variety =
            len >= self.min_len && distinct as f64 <= self.max_distinct_ratio * len as f64 + 1e-12;
        let noisy = longest >= self.max_run || low_variety;
        noisy && !allowlist.contains(&folded.iter().collect::<String>())
    }
}

/// Keeps detections whose text and box scores are both strictly above the
/// thresholds.
pub fn score_filter(
    dets: &[StrDetection],
    text_threshold: f64,
    box_threshold: f64,
) -> Vec<StrDetection> {
    dets.iter()
        .filter(|d| d.text_score > text_threshold && d.box_score > box_threshold)
        .cloned()
        .collect()
}

/// Drops detections whose whole token is a stopword in any list.
pub fn stopword_filter(dets: &[StrDetection], lists: &StopwordLists) -> Vec<StrDetection> {
    dets.iter()
        .filter(|d| !lists.is_stopword(&d.text))
        .cloned()
        .collect()
}

pub fn repetition_filter(
    dets: &[StrDetection],
    rule: &RepetitionRule,
    allowlist: &HashSet<String>,
) -> Vec<StrDetection> {
    dets.iter()
        .filter(|d| !rule.is_repetitive(&d.text, allowlist))
        .cloned()
        .collect()
}

#[derive(Debug, Clone)]
pub struct StrFilterConfig {
    pub text_threshold: f64,
    pub box_threshold: f64,
    pub stopwords: StopwordLists,
    pub allowlist: HashSet<String>,
    pub repetition: RepetitionRule,
}

impl Default for StrFilterConfig {
    fn default() -> Self {
        Self {
            text_threshold: DEFAULT_TEXT_THRESHOLD,
            box_threshold: DEFAULT_BOX_THRESHOLD,
            stopwords: StopwordLists::bundled(),
            allowlist: bundled_allowlist(),
            repetition: RepetitionRule::default(),
        }
    }
}

impl StrFilterConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("text", self.text_threshold), ("box", self.box_threshold)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::validation(format!(
                    "{name} score threshold {t} outside [0, 1]"
                )));
            }
        }
        let r = &self.repetition;
        if r.max_run < 2 || !(0.0..=1.0).contains(&r.max_distinct_ratio) {
            return Err(Error::validation("invalid repetition rule"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrFilterOutcome {
    pub kept: Vec<StrDetection>,
    /// score, stopword, repetition; each stage's input is the previous kept.
    pub reports: [FilterReport; 3],
}

pub fn filter_pipeline(
    dets: &[StrDetection],
    config: &StrFilterConfig,
) -> Result<StrFilterOutcome> {
    config.validate()?;
    let scored = score_filter(dets, config.text_threshold, config.box_threshold);
    let r1 = FilterReport::new("score", dets.len(), scored.len());
    let unstopped = stopword_filter(&scored, &config.stopwords);
    let r2 = FilterReport::new("stopword", scored.len(), unstopped.len());
    let kept = repetition_filter(&unstopped, &config.repetition, &config.allowlist);
    let r3 = FilterReport::new("repetition", unstopped.len(), kept.len());
    Ok(StrFilterOutcome {
        kept,
        reports: [r1, r2, r3],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(text: &str, ts: f64, bs: f64) -> StrDetection {
        StrDetection {
            photo_id: "p".into(),
            text: text.into(),
            text_score: ts,
            bbox: vec![[0.0, 0.0], [10.0, 0.0], [10.0, 5.0], [0.0, 5.0]],
            box_score: bs,
        }
    }

    fn texts(dets: &[StrDetection]) -> Vec<&str> {
        dets.iter().map(|d| d.text.as_str()).collect()
    }

    #[test]
    fn score_examples() {
        assert_eq!(score_filter(&[det("a", 0.95, 0.91)], 0.8, 0.8).len(), 1);
        assert!(score_filter(&[det("a", 0.80, 0.99)], 0.8, 0.8).is_empty());
        assert!(score_filter(&[det("a", 0.99, 0.80)], 0.8, 0.8).is_empty());
    }

    #[test]
    fn stopword_examples() {
        let lists = StopwordLists::bundled();
        let kept = stopword_filter(
            &[
                det("the", 0.9, 0.9),
                det("Bäckerei", 0.9, 0.9),
                det("und", 0.9, 0.9),
                det("THE", 0.9, 0.9),
                det("\"Und,\"", 0.9, 0.9),
                det("Theater", 0.9, 0.9),
                det("is", 0.9, 0.9),
                det("für", 0.9, 0.9),
            ],
            &lists,
        );
        assert_eq!(texts(&kept), ["Bäckerei", "Theater"]);
    }

    #[test]
    fn bundled_lists_shape() {
        let lists = StopwordLists::bundled();
        assert_eq!(lists.languages().collect::<Vec<_>>(), ["de", "en"]);
        assert!(lists.contains("and") && lists.contains("und") && lists.contains("daß"));
        assert!(!lists.contains("hotel"));
    }

    #[test]
    fn stopword_list_validation() {
        let mut l = StopwordLists::empty();
        assert!(l.add_list("xx", "# only a comment\n").is_err());
        assert!(l.add_list("xx", "Der\n").is_err());
        l.add_list("xx", "foo\n").unwrap();
        assert!(l.is_stopword("FOO!"));
    }

    #[test]
    fn repetition_examples() {
        let rule = RepetitionRule::default();
        let none = HashSet::new();
        assert!(rule.is_repetitive("IIIIII", &none));
        assert!(!rule.is_repetitive("HOTEL", &none));
        assert!(rule.is_repetitive("ananan", &none));
        assert!(!rule.is_repetitive("111", &none));
        assert!(!rule.is_repetitive("1952", &none));
        assert!(!rule.is_repetitive("Steinmuhle", &none));
        assert!(!rule.is_repetitive("Message-ID:", &none));
        // Two distinct letters over five: above one third.
        assert!(!rule.is_repetitive("anana", &none));
        assert!(rule.is_repetitive("Schifffahrt", &none));
        assert!(!rule.is_repetitive("Schifffahrt", &bundled_allowlist()));
        // Digits and punctuation are folded away before the run check.
        assert!(rule.is_repetitive("l-l-l", &none));
    }

    #[test]
    fn detection_schema() {
        let line = r#"{"photo_id":"p1","text":"CAFE","text_score":0.93,"box":[[1,2],[30,2],[30,12],[1,12]],"box_score":0.88}"#;
        let dets = parse_detections(line, "t").unwrap();
        assert_eq!(dets[0].bbox[2], [30.0, 12.0]);
        let written = write_detections(&dets);
        assert!(written
            .starts_with(r#"{"photo_id":"p1","text":"CAFE","text_score":0.93,"box":[[1.0,2.0],"#));
        assert_eq!(
            write_detections(&parse_detections(&written, "w").unwrap()),
            written
        );

        let bad = [
            r#"{"photo_id":"p1","text":"","text_score":0.9,"box":[[0,0],[1,0],[1,1]],"box_score":0.9}"#,
            r#"{"photo_id":"p1","text":"x","text_score":1.2,"box":[[0,0],[1,0],[1,1]],"box_score":0.9}"#,
            r#"{"photo_id":"p1","text":"x","text_score":0.9,"box":[[0,0],[1,0]],"box_score":0.9}"#,
            r#"{"photo_id":"p1","text":"x","text_score":0.9,"box_score":0.9}"#,
        ];
        for b in bad {
            let err = parse_detections(&format!("\n{b}\n"), "t")
                .unwrap_err()
                .to_string();
            assert!(err.contains("line 2"), "{err}");
        }
    }

    #[test]
    fn pipeline_examples() {
        let config = StrFilterConfig::default();
        let out = filter_pipeline(&[], &config).unwrap();
        assert!(out.kept.is_empty());
        assert!(out
            .reports
            .iter()
            .all(|r| r.input_count == 0 && r.kept_count == 0));

        let out = filter_pipeline(&[det("the", 0.99, 0.99)], &config).unwrap();
        assert!(out.kept.is_empty());
        assert_eq!(out.reports[0].kept_count, 1);
        assert_eq!(out.reports[1].dropped_count, 1);
        assert_eq!(out.reports[2].input_count, 0);

        let out = filter_pipeline(&[det("Steinmuhle", 0.9, 0.9)], &config).unwrap();
        assert_eq!(texts(&out.kept), ["Steinmuhle"]);
    }

    #[test]
    fn pipeline_rejects_bad_thresholds() {
        let config = StrFilterConfig {
            text_threshold: 1.5,
            ..StrFilterConfig::default()
        };
        assert!(filter_pipeline(&[], &config).is_err());
    }
}
