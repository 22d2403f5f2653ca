//! Photo-to-footprint matching, numeric text classes, per-class
//! aggregation and map export.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use chrono::Datelike;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geo::{
    point_in_polygon, project_local, ray_from_bearing, ray_polygon_distance, GeoPoint, LocalPoint,
    Polygon2D, EARTH_RADIUS_M, MAX_PROJECTION_SPAN_DEG,
};
use crate::osm::{closed_ring_coords, Footprint, FunctionClass};
use crate::photo::PhotoRecord;
use crate::strpost::StrDetection;

pub const DEFAULT_MAX_RANGE_M: f64 = 200.0;

/// Earliest year accepted as a construction date.
pub const EARLIEST_CONSTRUCTION_YEAR: u32 = 1200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub photo_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub footprint_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intersection_distance: Option<f64>,
    pub candidate_count: usize,
}

/// How the reference building is picked among the footprints the sight line
/// hits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceStrategy {
    /// Nearest first intersection along the ray.
    #[default]
    Intersection,
    /// Hit footprint whose vertex centroid is nearest the camera.
    Centroid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    pub max_range: f64,
    /// Report out-of-range hits in `candidate_count` when nothing is in range.
    pub count_out_of_range: bool,
    pub strategy: DistanceStrategy,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            max_range: DEFAULT_MAX_RANGE_M,
            count_out_of_range: false,
            strategy: DistanceStrategy::Intersection,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_range.is_finite() && self.max_range > 0.0) {
            return Err(Error::validation(format!(
                "max_range {} must be positive",
                self.max_range
            )));
        }
        Ok(())
    }
}

/// Outcome of matching in a local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMatch {
    pub footprint_id: Option<String>,
    pub distance: Option<f64>,
    pub candidate_count: usize,
}

fn vertex_centroid(poly: &Polygon2D) -> LocalPoint {
    let n = poly.vertices().len() as f64;
    let (sx, sy) = poly
        .vertices()
        .iter()
        .fold((0.0, 0.0), |(x, y), p| (x + p.x, y + p.y));
    LocalPoint::new(sx / n, sy / n)
}

/// Matches a camera against outlines already in the camera's local frame.
pub fn match_local<'a, I>(
    camera: LocalPoint,
    bearing: f64,
    candidates: I,
    config: &MatchConfig,
) -> Result<LocalMatch>
where
    I: IntoIterator<Item = (&'a str, &'a Polygon2D)>,
{
    config.validate()?;
    let ray = ray_from_bearing(camera, bearing)?;
    // (selection key, footprint id, intersection distance)
    let mut best: Option<(f64, &str, f64)> = None;
    let mut in_range = 0;
    let mut out_of_range = 0;
    for (id, poly) in candidates {
        let Some(t) = ray_polygon_distance(&ray, poly) else {
            continue;
        };
        if t > config.max_range {
            out_of_range += 1;
            continue;
        }
        in_range += 1;
        let key = match config.strategy {
            DistanceStrategy::Intersection => t,
            DistanceStrategy::Centroid => vertex_centroid(poly).distance(camera),
        };
        let better = match best {
            None => true,
            Some((bk, bid, _)) => key < bk || (key == bk && id < bid),
        };
        if better {
            best = Some((key, id, t));
        }
    }
    Ok(match best {
        Some((_, id, t)) => LocalMatch {
            footprint_id: Some(id.to_string()),
            distance: Some(t),
            candidate_count: in_range,
        },
        None => LocalMatch {
            footprint_id: None,
            distance: None,
            candidate_count: if config.count_out_of_range {
                out_of_range
            } else {
                0
            },
        },
    })
}

/// Footprints with cached lat/lon bounds for quick culling.
pub struct FootprintIndex<'a> {
    entries: Vec<(&'a Footprint, GeoPoint, GeoPoint)>,
}

impl<'a> FootprintIndex<'a> {
    pub fn new(footprints: &'a [Footprint]) -> Self {
        Self {
            entries: footprints
                .iter()
                .map(|f| {
                    let (lo, hi) = f.bounds();
                    (f, lo, hi)
                })
                .collect(),
        }
    }

    /// Footprints whose bounds come within `radius_m` of `center`, capped to
    /// the projection's valid span.
    fn near(&self, center: GeoPoint, radius_m: f64) -> impl Iterator<Item = &'a Footprint> + '_ {
        let meters_per_deg = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        let cos_lat = center.lat.to_radians().cos().max(1e-6);
        let span = 0.999 * MAX_PROJECTION_SPAN_DEG;
        // 1% slack covers the equirectangular scale change across a footprint.
        let dlat = (1.01 * radius_m / meters_per_deg).min(span);
        let dlon = (1.01 * radius_m / (meters_per_deg * cos_lat)).min(span);
        self.entries.iter().filter_map(move |(f, lo, hi)| {
            let overlaps = hi.lat >= center.lat - dlat
                && lo.lat <= center.lat + dlat
                && hi.lon >= center.lon - dlon
                && lo.lon <= center.lon + dlon;
            // Every vertex must be projectable from the camera.
            let projectable = (hi.lat - center.lat).abs() < MAX_PROJECTION_SPAN_DEG
                && (lo.lat - center.lat).abs() < MAX_PROJECTION_SPAN_DEG
                && (hi.lon - center.lon).abs() < MAX_PROJECTION_SPAN_DEG
                && (lo.lon - center.lon).abs() < MAX_PROJECTION_SPAN_DEG;
            (overlaps && projectable).then_some(*f)
        })
    }
}

/// Finds the building a photo looks at: the nearest footprint hit by its
/// sight line within `max_range`.
pub fn match_image_to_building(
    photo: &PhotoRecord,
    index: &FootprintIndex<'_>,
    config: &MatchConfig,
) -> Result<MatchResult> {
    let (Some(position), Some(bearing)) = (photo.position, photo.direction) else {
        return Err(Error::Precondition(format!(
            "photo {} lacks position or direction",
            photo.id
        )));
    };
    let radius = if config.count_out_of_range {
        f64::INFINITY
    } else {
        config.max_range
    };
    let mut projected: Vec<(&str, Polygon2D)> = Vec::new();
    for fp in index.near(position, radius) {
        let pts = fp
            .ring
            .iter()
            .map(|p| project_local(position, *p))
            .collect::<Result<Vec<_>>>()?;
        match Polygon2D::new(pts) {
            Ok(poly) => projected.push((fp.id.as_str(), poly)),
            Err(e) => log::warn!("footprint {} unusable in local frame: {e}", fp.id),
        }
    }
    let m = match_local(
        LocalPoint::default(),
        bearing,
        projected.iter().map(|(id, p)| (*id, p)),
        config,
    )?;
    Ok(MatchResult {
        photo_id: photo.id.clone(),
        footprint_id: m.footprint_id,
        intersection_distance: m.distance,
        candidate_count: m.candidate_count,
    })
}

/// Matches every photo on a pool of `workers` threads; output is sorted by
/// photo id.
pub fn match_all(
    photos: &[PhotoRecord],
    footprints: &[Footprint],
    config: &MatchConfig,
    workers: usize,
) -> Result<Vec<MatchResult>> {
    config.validate()?;
    let index = FootprintIndex::new(footprints);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::validation(format!("worker pool: {e}")))?;
    let mut results = pool.install(|| {
        photos
            .par_iter()
            .map(|p| match_image_to_building(p, &index, config))
            .collect::<Result<Vec<_>>>()
    })?;
    results.sort_by(|a, b| a.photo_id.cmp(&b.photo_id));
    Ok(results)
}

/// Whether the camera stands inside the polygon; exposed for callers that
/// want to flag courtyard shots.
pub fn camera_inside(camera: LocalPoint, poly: &Polygon2D) -> bool {
    point_in_polygon(camera, poly)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericTextClass {
    HouseNumber,
    ConstructionYear,
    OtherNumber,
    NonNumeric,
}

impl NumericTextClass {
    pub fn as_str(self) -> &'static str {
        match self {
            NumericTextClass::HouseNumber => "house_number",
            NumericTextClass::ConstructionYear => "construction_year",
            NumericTextClass::OtherNumber => "other_number",
            NumericTextClass::NonNumeric => "non_numeric",
        }
    }

    pub fn is_numeric(self) -> bool {
        self != NumericTextClass::NonNumeric
    }
}

impl fmt::Display for NumericTextClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

pub fn current_year() -> u32 {
    chrono::Utc::now().year() as u32
}

/// Sorts a recognised string into house number, construction year, other
/// number or plain text. A four-digit value in
/// `[EARLIEST_CONSTRUCTION_YEAR, current_year]` is read as a year.
pub fn classify_numeric_text(text: &str, current_year: u32) -> NumericTextClass {
    let token = text.trim();
    let chars: Vec<char> = token.chars().collect();
    let digits = chars.iter().take_while(|c| c.is_ascii_digit()).count();
    let all_digits = digits == chars.len() && digits > 0;

    if all_digits && digits == 4 {
        let year: u32 = token.parse().expect("four ascii digits");
        if (EARLIEST_CONSTRUCTION_YEAR..=current_year).contains(&year) {
            return NumericTextClass::ConstructionYear;
        }
    }
    let letter_suffix = chars.len() == digits + 1 && chars[digits].is_alphabetic();
    if (1..=4).contains(&digits) && (all_digits || letter_suffix) {
        return NumericTextClass::HouseNumber;
    }
    if chars.iter().any(char::is_ascii_digit) {
        NumericTextClass::OtherNumber
    } else {
        NumericTextClass::NonNumeric
    }
}

/// A filtered detection with its numeric class; the `classify` stage output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifiedText {
    pub photo_id: String,
    pub text: String,
    pub text_class: NumericTextClass,
}

pub fn classify_detections(dets: &[StrDetection], current_year: u32) -> Vec<ClassifiedText> {
    dets.iter()
        .map(|d| ClassifiedText {
            photo_id: d.photo_id.clone(),
            text: d.text.clone(),
            text_class: classify_numeric_text(&d.text, current_year),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub images: usize,
    pub images_with_text: usize,
}

/// Matched images and images with surviving text, per building function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionTable {
    pub residential: ClassCount,
    pub commercial: ClassCount,
    pub other: ClassCount,
    pub total: ClassCount,
    /// Matched to a footprint whose tags disagree or carry no function.
    pub unmapped_images: usize,
    /// No footprint on the sight line.
    pub unmatched_images: usize,
}

impl FunctionTable {
    pub fn get(&self, class: FunctionClass) -> Option<&ClassCount> {
        match class {
            FunctionClass::Residential => Some(&self.residential),
            FunctionClass::Commercial => Some(&self.commercial),
            FunctionClass::Other => Some(&self.other),
            FunctionClass::Unmapped => None,
        }
    }

    fn get_mut(&mut self, class: FunctionClass) -> Option<&mut ClassCount> {
        match class {
            FunctionClass::Residential => Some(&mut self.residential),
            FunctionClass::Commercial => Some(&mut self.commercial),
            FunctionClass::Other => Some(&mut self.other),
            FunctionClass::Unmapped => None,
        }
    }

    /// Percentage of classified images with at least one surviving text.
    pub fn with_text_percent(&self) -> f64 {
        percent(self.total.images_with_text, self.total.images)
    }

    /// Percentage of classified images in `class`.
    pub fn share_percent(&self, class: FunctionClass) -> f64 {
        self.get(class)
            .map_or(0.0, |c| percent(c.images, self.total.images))
    }

    /// Plain-text report laid out like the published overview table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<14}{:>10}{:>12}\n",
            "building type", "images", "with text"
        ));
        for class in FunctionClass::MAPPED {
            let c = self.get(class).expect("mapped class");
            out.push_str(&format!(
                "{:<14}{:>10}{:>12}\n",
                class.as_str(),
                c.images,
                c.images_with_text
            ));
        }
        out.push_str(&format!(
            "{:<14}{:>10}{:>12}\n",
            "total", self.total.images, self.total.images_with_text
        ));
        out.push_str(&format!(
            "with-text ratio: {:.1}%\n",
            self.with_text_percent()
        ));
        let shares: Vec<String> = FunctionClass::MAPPED
            .iter()
            .map(|c| format!("{c} {:.2}%", self.share_percent(*c)))
            .collect();
        out.push_str(&format!("class shares: {}\n", shares.join(", ")));
        out.push_str(&format!(
            "excluded: unmapped {}, unmatched {}\n",
            self.unmapped_images, self.unmatched_images
        ));
        out
    }
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Tallies matched images and images with surviving detections per function
/// class. Totals are the sums of the three classes.
pub fn aggregate_by_function(
    matches: &[MatchResult],
    filtered_dets: &[StrDetection],
    footprints: &[Footprint],
) -> Result<FunctionTable> {
    let function: HashMap<&str, FunctionClass> = footprints
        .iter()
        .map(|f| (f.id.as_str(), f.function))
        .collect();
    let with_text: BTreeSet<&str> = filtered_dets.iter().map(|d| d.photo_id.as_str()).collect();

    let mut table = FunctionTable {
        residential: ClassCount::default(),
        commercial: ClassCount::default(),
        other: ClassCount::default(),
        total: ClassCount::default(),
        unmapped_images: 0,
        unmatched_images: 0,
    };
    let mut seen = BTreeSet::new();
    for m in matches {
        if !seen.insert(m.photo_id.as_str()) {
            return Err(Error::validation(format!(
                "photo {} matched twice",
                m.photo_id
            )));
        }
        let Some(fid) = m.footprint_id.as_deref() else {
            table.unmatched_images += 1;
            continue;
        };
        let class = *function.get(fid).ok_or_else(|| {
            Error::Precondition(format!(
                "match for {} references unknown footprint {fid}",
                m.photo_id
            ))
        })?;
        let Some(count) = table.get_mut(class) else {
            table.unmapped_images += 1;
            continue;
        };
        count.images += 1;
        if with_text.contains(m.photo_id.as_str()) {
            count.images_with_text += 1;
        }
    }
    for class in FunctionClass::MAPPED {
        let c = *table.get(class).expect("mapped class");
        table.total.images += c.images;
        table.total.images_with_text += c.images_with_text;
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributeText {
    pub photo_id: String,
    pub text: String,
    pub text_class: NumericTextClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildingAttributeRecord {
    pub footprint_id: String,
    pub function: FunctionClass,
    pub ring: Vec<GeoPoint>,
    pub photo_ids: Vec<String>,
    pub texts: Vec<AttributeText>,
}

/// One record per footprint with at least one matched photo, ordered by
/// footprint id. Texts follow photo id, then input order.
pub fn build_attribute_records(
    matches: &[MatchResult],
    texts: &[ClassifiedText],
    footprints: &[Footprint],
) -> Result<Vec<BuildingAttributeRecord>> {
    let by_id: HashMap<&str, &Footprint> = footprints.iter().map(|f| (f.id.as_str(), f)).collect();
    let mut photos_of: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut footprint_of: HashMap<&str, &str> = HashMap::new();
    for m in matches {
        if let Some(fid) = m.footprint_id.as_deref() {
            if !by_id.contains_key(fid) {
                return Err(Error::Precondition(format!("unknown footprint {fid}")));
            }
            photos_of
                .entry(fid)
                .or_default()
                .insert(m.photo_id.as_str());
            footprint_of.insert(m.photo_id.as_str(), fid);
        }
    }
    let mut texts_of: HashMap<&str, Vec<AttributeText>> = HashMap::new();
    for t in texts {
        if let Some(fid) = footprint_of.get(t.photo_id.as_str()) {
            texts_of.entry(fid).or_default().push(AttributeText {
                photo_id: t.photo_id.clone(),
                text: t.text.clone(),
                text_class: t.text_class,
            });
        }
    }
    Ok(photos_of
        .into_iter()
        .map(|(fid, photos)| {
            let fp = by_id[fid];
            let mut texts = texts_of.remove(fid).unwrap_or_default();
            texts.sort_by(|a, b| a.photo_id.cmp(&b.photo_id));
            BuildingAttributeRecord {
                footprint_id: fid.to_string(),
                function: fp.function,
                ring: fp.ring.clone(),
                photo_ids: photos.into_iter().map(str::to_string).collect(),
                texts,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    GeoJson,
    Csv,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geojson" => Ok(ExportFormat::GeoJson),
            "csv" => Ok(ExportFormat::Csv),
            _ => Err(Error::validation(format!("unknown export format '{s}'"))),
        }
    }
}

fn sorted_records(records: &[BuildingAttributeRecord]) -> Vec<&BuildingAttributeRecord> {
    let mut sorted: Vec<_> = records.iter().collect();
    sorted.sort_by(|a, b| a.footprint_id.cmp(&b.footprint_id));
    sorted
}

pub fn export_geojson(records: &[BuildingAttributeRecord]) -> String {
    let mut out = String::from("{\"type\":\"FeatureCollection\",\"features\":[\n");
    let sorted = sorted_records(records);
    for (i, r) in sorted.iter().enumerate() {
        let feature = json!({
            "type": "Feature",
            "id": r.footprint_id,
            "geometry": {
                "type": "Polygon",
                "coordinates": [closed_ring_coords(&r.ring)],
            },
            "properties": {
                "function": r.function,
                "photo_count": r.photo_ids.len(),
                "photo_ids": r.photo_ids,
                "texts": r.texts,
            },
        });
        out.push_str(&feature.to_string());
        if i + 1 < sorted.len() {
            out.push(',');
        }
        out.push('\n');
    }
    out.push_str("]}\n");
    out
}

pub const CSV_HEADER: [&str; 5] = ["footprint_id", "function", "photo_id", "text", "text_class"];

pub fn export_csv(records: &[BuildingAttributeRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::validation(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in sorted_records(records) {
        for t in &r.texts {
            w.write_record([
                r.footprint_id.as_str(),
                r.function.as_str(),
                t.photo_id.as_str(),
                t.text.as_str(),
                t.text_class.as_str(),
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::validation(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields is utf-8"))
}

pub fn export_map(
    records: &[BuildingAttributeRecord],
    format: ExportFormat,
    path: &Path,
) -> Result<()> {
    let body = match format {
        ExportFormat::GeoJson => export_geojson(records),
        ExportFormat::Csv => export_csv(records)?,
    };
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Reads a map written by [`export_geojson`].
pub fn import_geojson_map(text: &str, source_name: &str) -> Result<Vec<BuildingAttributeRecord>> {
    let bad = |loc: String, msg: &str| Error::parse(source_name, loc, msg.to_string());
    let doc: Value = serde_json::from_str(text).map_err(|e| {
        Error::parse(
            source_name,
            format!("line {} column {}", e.line(), e.column()),
            e.to_string(),
        )
    })?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("root".into(), "missing features"))?;
    features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let loc = || format!("feature {i}");
            let id = f
                .get("id")
                .and_then(Value::as_str)
                .ok_or_else(|| bad(loc(), "missing id"))?;
            let props = f
                .get("properties")
                .ok_or_else(|| bad(loc(), "missing properties"))?;
            let function: FunctionClass = serde_json::from_value(props["function"].clone())
                .map_err(|e| bad(loc(), &e.to_string()))?;
            let photo_ids: Vec<String> = serde_json::from_value(props["photo_ids"].clone())
                .map_err(|e| bad(loc(), &e.to_string()))?;
            let texts: Vec<AttributeText> = serde_json::from_value(props["texts"].clone())
                .map_err(|e| bad(loc(), &e.to_string()))?;
            let coords: Vec<[f64; 2]> =
                serde_json::from_value(f["geometry"]["coordinates"][0].clone())
                    .map_err(|e| bad(loc(), &e.to_string()))?;
            let mut ring: Vec<GeoPoint> = coords
                .iter()
                .map(|c| GeoPoint {
                    lat: c[1],
                    lon: c[0],
                })
                .collect();
            if ring.len() > 1 && ring.first() == ring.last() {
                ring.pop();
            }
            Ok(BuildingAttributeRecord {
                footprint_id: id.to_string(),
                function,
                ring,
                photo_ids,
                texts,
            })
        })
        .collect()
}
