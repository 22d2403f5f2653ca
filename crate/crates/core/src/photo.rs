//! Photo metadata: JSONL ingest, the paged REST client, and the two
//! metadata filters (duplicate positions, missing compass direction).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::report::FilterReport;

/// Environment variable holding the REST API key.
pub const API_KEY_ENV: &str = "FTM_API_KEY";

/// Response header carrying the page count.
pub const TOTAL_PAGES_HEADER: &str = "x-total-pages";

#[derive(Debug, Clone, PartialEq)]
pub struct PhotoRecord {
    pub id: String,
    pub position: Option<GeoPoint>,
    /// Compass heading in degrees, `[0, 360)`.
    pub direction: Option<f64>,
    /// Capture time, UTC seconds.
    pub taken_at: Option<i64>,
    pub uploader: String,
    pub image_ref: String,
}

/// Flat on-disk shape of a record, shared by the JSONL files and the REST
/// pages. Field order here is the canonical output order.
#[derive(Debug, Serialize, Deserialize)]
struct PhotoLine {
    id: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    direction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    taken_at: Option<i64>,
    #[serde(default)]
    uploader: String,
    #[serde(default)]
    image_ref: String,
}

impl TryFrom<PhotoLine> for PhotoRecord {
    type Error = Error;

    fn try_from(line: PhotoLine) -> Result<Self> {
        let id = match line.id {
            Value::String(s) if !s.is_empty() => s,
            Value::Number(n) => n.to_string(),
            other => return Err(Error::validation(format!("bad photo id {other}"))),
        };
        let position = match (line.lat, line.lon) {
            (Some(lat), Some(lon)) => Some(GeoPoint::new(lat, lon)?),
            (None, None) => None,
            _ => {
                return Err(Error::validation(format!(
                    "photo {id} has only one of lat/lon"
                )))
            }
        };
        if let Some(d) = line.direction {
            if !(0.0..360.0).contains(&d) {
                return Err(Error::validation(format!(
                    "photo {id} direction {d} outside [0, 360)"
                )));
            }
        }
        Ok(PhotoRecord {
            id,
            position,
            direction: line.direction,
            taken_at: line.taken_at,
            uploader: line.uploader,
            image_ref: line.image_ref,
        })
    }
}

impl From<&PhotoRecord> for PhotoLine {
    fn from(r: &PhotoRecord) -> Self {
        PhotoLine {
            id: Value::String(r.id.clone()),
            lat: r.position.map(|p| p.lat),
            lon: r.position.map(|p| p.lon),
            direction: r.direction,
            taken_at: r.taken_at,
            uploader: r.uploader.clone(),
            image_ref: r.image_ref.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedPhotos {
    pub records: Vec<PhotoRecord>,
    /// Lines that failed to parse or validate, or repeated an earlier id.
    pub malformed: usize,
}

pub fn parse_photo_records(text: &str, source_name: &str) -> ParsedPhotos {
    let mut out = ParsedPhotos::default();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<PhotoLine>(line)
            .map_err(|e| Error::validation(e.to_string()))
            .and_then(PhotoRecord::try_from);
        match parsed {
            Ok(rec) if seen.insert(rec.id.clone()) => out.records.push(rec),
            Ok(rec) => {
                log::warn!(
                    "{source_name}:{}: duplicate photo id {}",
                    lineno + 1,
                    rec.id
                );
                out.malformed += 1;
            }
            Err(e) => {
                log::warn!(
                    "{source_name}:{}: skipping malformed record: {e}",
                    lineno + 1
                );
                out.malformed += 1;
            }
        }
    }
    out
}

pub fn read_photo_records(path: &Path) -> Result<ParsedPhotos> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_photo_records(&text, &path.display().to_string()))
}

/// Canonical JSONL: one record per line in the given order.
pub fn write_photo_records(records: &[PhotoRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&PhotoLine::from(r)).expect("photo line serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BBox {
    pub fn new(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Result<Self> {
        GeoPoint::new(min_lat, min_lon)?;
        GeoPoint::new(max_lat, max_lon)?;
        if min_lat > max_lat || min_lon > max_lon {
            return Err(Error::validation("bbox minimum exceeds maximum"));
        }
        Ok(Self {
            min_lat,
            min_lon,
            max_lat,
            max_lon,
        })
    }

    /// `min_lon,min_lat,max_lon,max_lat`, the order used on the wire.
    pub fn to_query(&self) -> String {
        format!(
            "{},{},{},{}",
            self.min_lon, self.min_lat, self.max_lon, self.max_lat
        )
    }
}

#[derive(Debug, Clone)]
pub struct FetchOptions {
    pub api_key: Option<String>,
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles for each further attempt.
    pub base_delay: Duration,
    pub timeout: Duration,
}

impl Default for FetchOptions {
    fn default() -> Self {
        Self {
            api_key: None,
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            timeout: Duration::from_secs(30),
        }
    }
}

impl FetchOptions {
    pub fn from_env() -> Self {
        Self {
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            ..Self::default()
        }
    }
}

struct Page {
    records: Vec<PhotoRecord>,
    total_pages: u32,
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

fn fetch_page_once(
    agent: &ureq::Agent,
    endpoint: &str,
    bbox: &BBox,
    page: u32,
    page_size: u32,
    opts: &FetchOptions,
) -> std::result::Result<Page, Attempt> {
    let malformed = |message: String| {
        Attempt::Fatal(Error::MalformedPage {
            endpoint: endpoint.to_string(),
            page,
            message,
        })
    };
    let mut req = agent
        .get(endpoint)
        .query("bbox", bbox.to_query())
        .query("page", page.to_string())
        .query("per_page", page_size.to_string());
    if let Some(key) = &opts.api_key {
        req = req.query("api_key", key);
    }
    let mut resp = req.call().map_err(|e| Attempt::Retry(e.to_string()))?;
    let status = resp.status().as_u16();
    match status {
        200..=299 => {}
        401 | 403 => {
            return Err(Attempt::Fatal(Error::Auth {
                endpoint: endpoint.to_string(),
                status,
            }))
        }
        429 | 500..=599 => return Err(Attempt::Retry(format!("HTTP {status}"))),
        _ => return Err(malformed(format!("unexpected HTTP {status}"))),
    }
    let total_pages = resp
        .headers()
        .get(TOTAL_PAGES_HEADER)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| malformed(format!("missing or invalid {TOTAL_PAGES_HEADER} header")))?;
    let body = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| Attempt::Retry(e.to_string()))?;
    let lines: Vec<PhotoLine> =
        serde_json::from_str(&body).map_err(|e| malformed(format!("body: {e}")))?;
    let records = lines
        .into_iter()
        .map(PhotoRecord::try_from)
        .collect::<Result<Vec<_>>>()
        .map_err(|e| malformed(e.to_string()))?;
    Ok(Page {
        records,
        total_pages,
    })
}

fn fetch_page(
    agent: &ureq::Agent,
    endpoint: &str,
    bbox: &BBox,
    page: u32,
    page_size: u32,
    opts: &FetchOptions,
) -> Result<Page> {
    let attempts = opts.max_attempts.max(1);
    let mut last_error = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            std::thread::sleep(opts.base_delay * 2u32.pow(attempt - 1));
        }
        match fetch_page_once(agent, endpoint, bbox, page, page_size, opts) {
            Ok(p) => return Ok(p),
            Err(Attempt::Fatal(e)) => return Err(e),
            Err(Attempt::Retry(msg)) => {
                log::warn!("{endpoint} page {page} attempt {}: {msg}", attempt + 1);
                last_error = msg;
            }
        }
    }
    Err(Error::RetryExhausted {
        endpoint: endpoint.to_string(),
        attempts,
        last_error,
    })
}

/// Walks every page of `endpoint` for `bbox` and returns the union of the
/// records, deduplicated by id and sorted by id.
pub fn fetch_photo_metadata(
    endpoint: &str,
    bbox: &BBox,
    page_size: u32,
    opts: &FetchOptions,
) -> Result<Vec<PhotoRecord>> {
    if page_size == 0 {
        return Err(Error::validation("page size must be positive"));
    }
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(opts.timeout))
        .build()
        .into();

    let mut by_id: BTreeMap<String, PhotoRecord> = BTreeMap::new();
    let first = fetch_page(&agent, endpoint, bbox, 1, page_size, opts)?;
    let total = first.total_pages;
    let mut pages = vec![first];
    for page in 2..=total {
        pages.push(fetch_page(&agent, endpoint, bbox, page, page_size, opts)?);
    }
    for rec in pages.into_iter().flat_map(|p| p.records) {
        by_id.entry(rec.id.clone()).or_insert(rec);
    }
    Ok(by_id.into_values().collect())
}

/// How the duplicate-position heuristic groups photos.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DuplicateMode {
    /// Any two photos at the same position, regardless of uploader.
    #[default]
    Global,
    /// Only photos from the same uploader are compared.
    PerUploader,
}

/// Position key at 6 decimal places (about 0.11 m).
fn position_key(p: GeoPoint) -> (i64, i64) {
    ((p.lat * 1e6).round() as i64, (p.lon * 1e6).round() as i64)
}

/// Drops every photo that shares its position with another one. Photos
/// without a position pass through untouched.
pub fn filter_duplicate_positions(
    records: Vec<PhotoRecord>,
    mode: DuplicateMode,
) -> (Vec<PhotoRecord>, FilterReport) {
    let key = |r: &PhotoRecord| {
        r.position.map(|p| {
            let uploader = match mode {
                DuplicateMode::Global => String::new(),
                DuplicateMode::PerUploader => r.uploader.clone(),
            };
            (uploader, position_key(p))
        })
    };
    let mut counts: HashMap<_, usize> = HashMap::new();
    for r in &records {
        if let Some(k) = key(r) {
            *counts.entry(k).or_default() += 1;
        }
    }
    let input = records.len();
    let kept: Vec<PhotoRecord> = records
        .into_iter()
        .filter(|r| key(r).is_none_or(|k| counts[&k] == 1))
        .collect();
    let report = FilterReport::new("duplicate-positions", input, kept.len());
    (kept, report)
}

/// Keeps photos that can seed a sight line: position and direction present.
pub fn filter_missing_direction(records: Vec<PhotoRecord>) -> (Vec<PhotoRecord>, FilterReport) {
    let input = records.len();
    let kept: Vec<PhotoRecord> = records
        .into_iter()
        .filter(|r| r.direction.is_some() && r.position.is_some())
        .collect();
    let report = FilterReport::new("missing-direction", input, kept.len());
    (kept, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, lat: Option<f64>, lon: f64, dir: Option<f64>) -> PhotoRecord {
        PhotoRecord {
            id: id.to_string(),
            position: lat.map(|lat| GeoPoint { lat, lon }),
            direction: dir,
            taken_at: None,
            uploader: "u".to_string(),
            image_ref: String::new(),
        }
    }

    fn ids(records: &[PhotoRecord]) -> Vec<&str> {
        records.iter().map(|r| r.id.as_str()).collect()
    }

    #[test]
    fn parse_examples() {
        let text = r#"{"id":"a","lat":52.5,"lon":13.4,"direction":90}
{"id":"b","lat":52.5,"lon":13.41,"uploader":"x","image_ref":"b.jpg","taken_at":1700000000}
"#;
        let parsed = parse_photo_records(text, "t");
        assert_eq!(parsed.malformed, 0);
        let a = &parsed.records[0];
        assert_eq!(
            a.position,
            Some(GeoPoint {
                lat: 52.5,
                lon: 13.4
            })
        );
        assert_eq!(a.direction, Some(90.0));
        let b = &parsed.records[1];
        assert!(b.direction.is_none());
        assert_eq!(b.taken_at, Some(1_700_000_000));
        assert_eq!(b.uploader, "x");
    }

    #[test]
    fn parse_counts_malformed_lines() {
        let text = r#"{"id":1,"lat":52.5,"lon":13.4}
{"id":"2","lat":52.5
{"id":"3"}

{"id":"4","direction":12.5}
{"id":"5","lat":52.6,"lon":13.4,"direction":0}
"#;
        let parsed = parse_photo_records(text, "t");
        assert_eq!(parsed.records.len(), 4);
        assert_eq!(parsed.malformed, 1);
        assert_eq!(ids(&parsed.records), ["1", "3", "4", "5"]);
        assert!(parsed.records[1].position.is_none());
    }

    #[test]
    fn parse_rejects_invalid_values() {
        let text = r#"{"id":"a","lat":52.5,"lon":13.4,"direction":360}
{"id":"b","lat":52.5}
{"id":"c","lat":95.0,"lon":13.4}
{"id":""}
{"id":"d"}
{"id":"d"}
"#;
        let parsed = parse_photo_records(text, "t");
        assert_eq!(ids(&parsed.records), ["d"]);
        assert_eq!(parsed.malformed, 5);
    }

    #[test]
    fn write_then_parse_is_stable() {
        let records = vec![
            rec("a", Some(52.123456789), 13.4, Some(359.99)),
            rec("b", None, 0.0, None),
        ];
        let text = write_photo_records(&records);
        let parsed = parse_photo_records(&text, "t");
        assert_eq!(parsed.records, records);
        assert_eq!(write_photo_records(&parsed.records), text);
    }

    #[test]
    fn duplicates_dropped() {
        let (kept, report) = filter_duplicate_positions(
            vec![
                rec("a", Some(52.5), 13.4, Some(1.0)),
                rec("b", Some(52.500000), 13.400000, Some(1.0)),
            ],
            DuplicateMode::Global,
        );
        assert!(kept.is_empty());
        assert_eq!(report.dropped_count, 2);

        let (kept, _) = filter_duplicate_positions(
            vec![
                rec("a", Some(52.500000), 13.4, None),
                rec("b", Some(52.500001), 13.4, None),
            ],
            DuplicateMode::Global,
        );
        assert_eq!(kept.len(), 2);

        let (kept, report) = filter_duplicate_positions(
            vec![
                rec("a", Some(52.5), 13.4, None),
                rec("b", Some(52.5), 13.4, None),
                rec("c", Some(52.5), 13.4, None),
                rec("d", Some(52.6), 13.4, None),
            ],
            DuplicateMode::Global,
        );
        assert_eq!(ids(&kept), ["d"]);
        assert_eq!((report.kept_count, report.dropped_count), (1, 3));
    }

    #[test]
    fn duplicates_rounding_and_missing_positions() {
        // Differences below the sixth decimal collapse onto one key.
        let (kept, _) = filter_duplicate_positions(
            vec![
                rec("a", Some(52.5000001), 13.4, None),
                rec("b", Some(52.4999999), 13.4, None),
                rec("c", None, 0.0, None),
                rec("d", None, 0.0, None),
            ],
            DuplicateMode::Global,
        );
        assert_eq!(ids(&kept), ["c", "d"]);
    }

    #[test]
    fn per_uploader_mode() {
        let mut a = rec("a", Some(52.5), 13.4, None);
        let mut b = rec("b", Some(52.5), 13.4, None);
        let mut c = rec("c", Some(52.5), 13.4, None);
        a.uploader = "alice".into();
        b.uploader = "bob".into();
        c.uploader = "bob".into();
        let records = vec![a, b, c];
        let (kept, _) = filter_duplicate_positions(records.clone(), DuplicateMode::PerUploader);
        assert_eq!(ids(&kept), ["a"]);
        let (kept, _) = filter_duplicate_positions(records, DuplicateMode::Global);
        assert!(kept.is_empty());
    }

    #[test]
    fn direction_filter() {
        let (kept, _) = filter_missing_direction(vec![rec("a", Some(52.5), 13.4, Some(180.0))]);
        assert_eq!(kept.len(), 1);
        let (kept, _) = filter_missing_direction(vec![rec("a", Some(52.5), 13.4, None)]);
        assert!(kept.is_empty());

        let mut records = Vec::new();
        for i in 0..10 {
            let dir = if i < 4 { None } else { Some(i as f64) };
            let lat = if i == 9 {
                None
            } else {
                Some(52.5 + i as f64 * 1e-4)
            };
            records.push(rec(&i.to_string(), lat, 13.4, dir));
        }
        let (kept, report) = filter_missing_direction(records);
        assert_eq!(kept.len(), 5);
        assert_eq!(report, FilterReport::new("missing-direction", 10, 5));
    }

    #[test]
    fn bbox_validation() {
        assert!(BBox::new(52.6, 13.3, 52.4, 13.5).is_err());
        let b = BBox::new(52.4, 13.3, 52.6, 13.5).unwrap();
        assert_eq!(b.to_query(), "13.3,52.4,13.5,52.6");
    }
}
