//! OSM building footprints and the tag-agreement function classifier.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geo::GeoPoint;

/// Tag keys that carry a function vote.
pub const FUNCTION_KEYS: [&str; 3] = ["building", "amenity", "shop"];

const BUNDLED_TABLE: &str = include_str!("../data/function_map.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionClass {
    Residential,
    Commercial,
    Other,
    Unmapped,
}

impl FunctionClass {
    /// The three classes a tag can vote for, in report order.
    pub const MAPPED: [FunctionClass; 3] = [
        FunctionClass::Residential,
        FunctionClass::Commercial,
        FunctionClass::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FunctionClass::Residential => "residential",
            FunctionClass::Commercial => "commercial",
            FunctionClass::Other => "other",
            FunctionClass::Unmapped => "unmapped",
        }
    }
}

impl fmt::Display for FunctionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for FunctionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residential" => Ok(FunctionClass::Residential),
            "commercial" => Ok(FunctionClass::Commercial),
            "other" => Ok(FunctionClass::Other),
            "unmapped" => Ok(FunctionClass::Unmapped),
            _ => Err(Error::validation(format!("unknown function class '{s}'"))),
        }
    }
}

/// Result of looking a single tag up in the mapping table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagLookup {
    Vote(FunctionClass),
    /// Listed, but uninformative (e.g. `building=yes`).
    NoVote,
    /// Function key with a value the table does not know.
    Unknown,
    /// Not one of the function keys.
    Ignored,
}

/// Tag value to function class rules, loaded from a `key=value<TAB>class` file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingTable {
    exact: HashMap<(String, String), Option<FunctionClass>>,
    wildcard: HashMap<String, Option<FunctionClass>>,
}

impl MappingTable {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_TABLE, "bundled function_map.tsv").expect("bundled table is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut exact = HashMap::new();
        let mut wildcard = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let loc = || format!("line {}", lineno + 1);
            let (tag, class) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(source_name, loc(), "expected key=value<TAB>class"))?;
            let (key, value) = tag
                .trim()
                .split_once('=')
                .ok_or_else(|| Error::parse(source_name, loc(), "expected key=value"))?;
            if !FUNCTION_KEYS.contains(&key) {
                return Err(Error::parse(
                    source_name,
                    loc(),
                    format!("key '{key}' is not one of building, amenity, shop"),
                ));
            }
            let class = match class.trim() {
                "none" => None,
                c => match c.parse::<FunctionClass>() {
                    Ok(FunctionClass::Unmapped) | Err(_) => {
                        return Err(Error::parse(source_name, loc(), format!("bad class '{c}'")))
                    }
                    Ok(c) => Some(c),
                },
            };
            let previous = if value == "*" {
                wildcard.insert(key.to_string(), class)
            } else {
                exact.insert((key.to_string(), value.to_string()), class)
            };
            if previous.is_some() {
                return Err(Error::parse(
                    source_name,
                    loc(),
                    format!("duplicate rule for {tag}"),
                ));
            }
        }
        Ok(Self { exact, wildcard })
    }

    pub fn lookup(&self, key: &str, value: &str) -> TagLookup {
        if !FUNCTION_KEYS.contains(&key) {
            return TagLookup::Ignored;
        }
        let hit = self
            .exact
            .get(&(key.to_string(), value.to_string()))
            .or_else(|| self.wildcard.get(key));
        match hit {
            Some(Some(class)) => TagLookup::Vote(*class),
            Some(None) => TagLookup::NoVote,
            None => TagLookup::Unknown,
        }
    }

    pub fn classify_tag(&self, key: &str, value: &str) -> Option<FunctionClass> {
        match self.lookup(key, value) {
            TagLookup::Vote(c) => Some(c),
            _ => None,
        }
    }

    /// A building gets a class only when every vote agrees; no votes or any
    /// disagreement leaves it unmapped.
    pub fn aggregate_function<'a, I>(&self, tags: I) -> FunctionClass
    where
        I: IntoIterator<Item = (&'a String, &'a String)>,
    {
        let mut agreed: Option<FunctionClass> = None;
        for (k, v) in tags {
            if let Some(vote) = self.classify_tag(k, v) {
                match agreed {
                    None => agreed = Some(vote),
                    Some(c) if c == vote => {}
                    Some(_) => return FunctionClass::Unmapped,
                }
            }
        }
        agreed.unwrap_or(FunctionClass::Unmapped)
    }
}

impl Default for MappingTable {
    fn default() -> Self {
        Self::bundled()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    pub id: String,
    /// Outer ring, open (the closing vertex is not repeated).
    pub ring: Vec<GeoPoint>,
    pub tags: BTreeMap<String, String>,
    pub function: FunctionClass,
}

impl Footprint {
    pub fn new(
        id: impl Into<String>,
        ring: Vec<GeoPoint>,
        tags: BTreeMap<String, String>,
        table: &MappingTable,
    ) -> Self {
        let function = table.aggregate_function(&tags);
        Self {
            id: id.into(),
            ring,
            tags,
            function,
        }
    }

    /// Lat/lon bounding box as (min, max).
    pub fn bounds(&self) -> (GeoPoint, GeoPoint) {
        let mut min = GeoPoint {
            lat: f64::INFINITY,
            lon: f64::INFINITY,
        };
        let mut max = GeoPoint {
            lat: f64::NEG_INFINITY,
            lon: f64::NEG_INFINITY,
        };
        for p in &self.ring {
            min.lat = min.lat.min(p.lat);
            min.lon = min.lon.min(p.lon);
            max.lat = max.lat.max(p.lat);
            max.lon = max.lon.max(p.lon);
        }
        (min, max)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FootprintSet {
    pub footprints: Vec<Footprint>,
    /// Features dropped because they had no usable polygon.
    pub skipped: usize,
    /// Function-key tags whose value the mapping table did not know.
    pub unknown_tag_values: usize,
}

/// Drops a repeated closing vertex and consecutive duplicates, then checks
/// that at least three distinct points span a non-zero area.
fn normalize_ring(mut ring: Vec<GeoPoint>) -> Option<Vec<GeoPoint>> {
    ring.dedup();
    while ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.len() < 3 {
        return None;
    }
    let n = ring.len();
    let twice_area: f64 = (0..n)
        .map(|i| {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            a.lon * b.lat - b.lon * a.lat
        })
        .sum();
    (twice_area != 0.0).then_some(ring)
}

/// Parses either a GeoJSON FeatureCollection or the OSM XML subset, chosen by
/// the first non-blank character.
pub fn parse_footprints(
    text: &str,
    source_name: &str,
    table: &MappingTable,
) -> Result<FootprintSet> {
    match text.trim_start().chars().next() {
        Some('{') => parse_geojson(text, source_name, table),
        Some('<') => parse_osm_xml(text, source_name, table),
        _ => Err(Error::parse(
            source_name,
            "byte 0",
            "expected a GeoJSON object or OSM XML document",
        )),
    }
}

pub fn read_footprints(path: &Path, table: &MappingTable) -> Result<FootprintSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_footprints(&text, &path.display().to_string(), table)
}

/// Id, outer ring if one was resolved, tags.
type RawFootprint = (String, Option<Vec<GeoPoint>>, BTreeMap<String, String>);

fn finish_set(
    raw: Vec<RawFootprint>,
    source_name: &str,
    table: &MappingTable,
) -> Result<FootprintSet> {
    let mut set = FootprintSet::default();
    let mut seen = HashSet::new();
    for (id, ring, tags) in raw {
        if !seen.insert(id.clone()) {
            return Err(Error::parse(
                source_name,
                format!("feature {id}"),
                "duplicate id",
            ));
        }
        let Some(ring) = ring.and_then(normalize_ring) else {
            log::warn!("{source_name}: skipping {id}, fewer than 3 distinct points");
            set.skipped += 1;
            continue;
        };
        set.unknown_tag_values += tags
            .iter()
            .filter(|(k, v)| table.lookup(k, v) == TagLookup::Unknown)
            .count();
        set.footprints.push(Footprint::new(id, ring, tags, table));
    }
    Ok(set)
}

fn json_position(v: &Value) -> Option<GeoPoint> {
    let arr = v.as_array()?;
    let lon = arr.first()?.as_f64()?;
    let lat = arr.get(1)?.as_f64()?;
    GeoPoint::new(lat, lon).ok()
}

fn json_ring(v: &Value) -> Option<Vec<GeoPoint>> {
    v.as_array()?.iter().map(json_position).collect()
}

fn outer_ring(geometry: &Value) -> Option<Vec<GeoPoint>> {
    let coords = geometry.get("coordinates")?;
    match geometry.get("type")?.as_str()? {
        "Polygon" => json_ring(coords.get(0)?),
        "MultiPolygon" => json_ring(coords.get(0)?.get(0)?),
        _ => None,
    }
}

fn parse_geojson(text: &str, source_name: &str, table: &MappingTable) -> Result<FootprintSet> {
    let doc: Value = serde_json::from_str(text).map_err(|e| {
        Error::parse(
            source_name,
            format!("line {} column {}", e.line(), e.column()),
            e.to_string(),
        )
    })?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::parse(source_name, "root", "not a FeatureCollection"));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse(source_name, "root", "missing features array"))?;

    let mut raw = Vec::with_capacity(features.len());
    for (idx, feature) in features.iter().enumerate() {
        let id = match feature.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => format!("feature/{idx}"),
        };
        let mut tags = BTreeMap::new();
        match feature.get("properties") {
            Some(Value::Object(props)) => {
                for (k, v) in props {
                    match v {
                        Value::String(s) => {
                            tags.insert(k.clone(), s.clone());
                        }
                        Value::Number(_) | Value::Bool(_) => {
                            tags.insert(k.clone(), v.to_string());
                        }
                        _ => {}
                    }
                }
            }
            Some(Value::Null) | None => {}
            Some(_) => {
                return Err(Error::parse(
                    source_name,
                    format!("feature {idx}"),
                    "properties must be an object",
                ))
            }
        }
        let ring = feature.get("geometry").and_then(outer_ring);
        raw.push((id, ring, tags));
    }
    finish_set(raw, source_name, table)
}

fn xml_attrs(e: &BytesStart<'_>, source_name: &str, pos: u64) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for attr in e.attributes() {
        let attr =
            attr.map_err(|err| Error::parse(source_name, format!("byte {pos}"), err.to_string()))?;
        let key = String::from_utf8_lossy(attr.key.as_ref()).into_owned();
        let value = attr
            .unescape_value()
            .map_err(|err| Error::parse(source_name, format!("byte {pos}"), err.to_string()))?;
        out.insert(key, value.into_owned());
    }
    Ok(out)
}

struct WayBuilder {
    id: String,
    refs: Vec<String>,
    tags: BTreeMap<String, String>,
}

/// Reads `<node id lat lon>` and `<way id><nd ref/><tag k v/></way>`
/// elements. Ways without a `building` tag are not footprints.
fn parse_osm_xml(text: &str, source_name: &str, table: &MappingTable) -> Result<FootprintSet> {
    // Whitespace stays as text events so `buffer_position` marks each tag start.
    let mut reader = Reader::from_str(text);

    let mut nodes: HashMap<String, GeoPoint> = HashMap::new();
    let mut ways: Vec<WayBuilder> = Vec::new();
    let mut current: Option<WayBuilder> = None;

    loop {
        let pos = reader.buffer_position();
        let event = reader.read_event().map_err(|e| {
            Error::parse(
                source_name,
                format!("byte {}", reader.error_position()),
                e.to_string(),
            )
        })?;
        let (e, empty) = match event {
            Event::Start(e) => (e, false),
            Event::Empty(e) => (e, true),
            Event::End(e) => {
                if e.name().as_ref() == b"way" {
                    if let Some(way) = current.take() {
                        ways.push(way);
                    }
                }
                continue;
            }
            Event::Eof => break,
            _ => continue,
        };
        let attrs = || xml_attrs(&e, source_name, pos);
        let missing = |what: &str| {
            Error::parse(
                source_name,
                format!("byte {pos}"),
                format!("missing attribute {what}"),
            )
        };
        match e.name().as_ref() {
            b"node" => {
                let a = attrs()?;
                let id = a.get("id").ok_or_else(|| missing("node id"))?;
                let coord = |k: &str| -> Result<f64> {
                    a.get(k)
                        .ok_or_else(|| missing(k))?
                        .parse::<f64>()
                        .map_err(|err| {
                            Error::parse(source_name, format!("byte {pos}"), format!("{k}: {err}"))
                        })
                };
                let p = GeoPoint::new(coord("lat")?, coord("lon")?).map_err(|err| {
                    Error::parse(source_name, format!("byte {pos}"), err.to_string())
                })?;
                nodes.insert(id.clone(), p);
            }
            b"way" => {
                let a = attrs()?;
                let id = a.get("id").ok_or_else(|| missing("way id"))?;
                let way = WayBuilder {
                    id: format!("way/{id}"),
                    refs: Vec::new(),
                    tags: BTreeMap::new(),
                };
                if empty {
                    ways.push(way);
                } else {
                    current = Some(way);
                }
            }
            b"nd" => {
                if let Some(way) = current.as_mut() {
                    let a = attrs()?;
                    way.refs
                        .push(a.get("ref").ok_or_else(|| missing("nd ref"))?.clone());
                }
            }
            b"tag" => {
                if let Some(way) = current.as_mut() {
                    let a = attrs()?;
                    let k = a.get("k").ok_or_else(|| missing("tag k"))?;
                    let v = a.get("v").ok_or_else(|| missing("tag v"))?;
                    way.tags.insert(k.clone(), v.clone());
                }
            }
            _ => {}
        }
    }

    let raw = ways
        .into_iter()
        .filter(|w| w.tags.contains_key("building"))
        .map(|w| {
            let ring: Option<Vec<GeoPoint>> =
                w.refs.iter().map(|r| nodes.get(r).copied()).collect();
            if ring.is_none() {
                log::warn!("{source_name}: {} references a missing node", w.id);
            }
            (w.id, ring, w.tags)
        })
        .collect();
    finish_set(raw, source_name, table)
}

/// One `Feature` per line, ordered by id. Tags go to `properties`; the
/// derived class is a foreign member so tags round-trip untouched.
pub fn write_footprints_geojson(footprints: &[Footprint]) -> String {
    let mut sorted: Vec<&Footprint> = footprints.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = String::from("{\"type\":\"FeatureCollection\",\"features\":[\n");
    for (i, fp) in sorted.iter().enumerate() {
        let feature = json!({
            "type": "Feature",
            "id": fp.id,
            "geometry": {
                "type": "Polygon",
                "coordinates": [closed_ring_coords(&fp.ring)],
            },
            "properties": fp.tags,
            "function": fp.function,
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

pub(crate) fn closed_ring_coords(ring: &[GeoPoint]) -> Vec<[f64; 2]> {
    ring.iter()
        .chain(ring.first())
        .map(|p| [p.lon, p.lat])
        .collect()
}
