//! Seeded generator for a city-scale test dataset with prescribed per-class
//! image counts: an OSM extract, photo metadata, feature vectors, detector
//! output and STR detections, laid out so that the pipeline's filters and
//! matcher land on the requested numbers.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::content::{DetectedObject, FeatureVector};
use crate::error::{Error, Result};
use crate::geo::{unproject_local, GeoPoint, LocalPoint};
use crate::osm::FunctionClass;
use crate::photo::{write_photo_records, PhotoRecord};
use crate::strpost::{write_detections, StrDetection};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassQuota {
    pub function: FunctionClass,
    /// Images that survive every filter and match a building of this class.
    pub images: usize,
    /// Of those, images with at least one detection surviving the STR filters.
    pub images_with_text: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub seed: u64,
    pub origin: GeoPoint,
    pub quotas: Vec<ClassQuota>,
    pub photos_per_building: usize,
    /// Matched images on buildings without a usable function.
    pub unmapped_images: usize,
    /// Kept images whose sight line hits nothing.
    pub unmatched_images: usize,
    pub missing_direction: usize,
    pub missing_position: usize,
    /// Pairs of photos sharing one position.
    pub duplicate_pairs: usize,
    pub low_similarity: usize,
    pub no_building: usize,
    /// Footprints nobody photographed.
    pub idle_buildings: usize,
}

impl FixtureSpec {
    /// The Berlin dataset: 3431 images over three classes, of which 1558
    /// carry readable text.
    pub fn berlin() -> Self {
        Self {
            seed: 20_230_613,
            origin: GeoPoint {
                lat: 52.515,
                lon: 13.385,
            },
            quotas: vec![
                ClassQuota {
                    function: FunctionClass::Residential,
                    images: 1833,
                    images_with_text: 892,
                },
                ClassQuota {
                    function: FunctionClass::Commercial,
                    images: 605,
                    images_with_text: 330,
                },
                ClassQuota {
                    function: FunctionClass::Other,
                    images: 993,
                    images_with_text: 336,
                },
            ],
            photos_per_building: 3,
            unmapped_images: 96,
            unmatched_images: 40,
            missing_direction: 180,
            missing_position: 25,
            duplicate_pairs: 45,
            low_similarity: 210,
            no_building: 160,
            idle_buildings: 140,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.photos_per_building == 0 {
            return Err(Error::validation("photos_per_building must be positive"));
        }
        for q in &self.quotas {
            if q.function == FunctionClass::Unmapped || q.images_with_text > q.images {
                return Err(Error::validation(format!("bad quota {q:?}")));
            }
        }
        Ok(())
    }
}

/// Generated files keyed by file name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureFiles {
    pub files: BTreeMap<&'static str, String>,
}

impl FixtureFiles {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

pub const PHOTOS_FILE: &str = "photos.jsonl";
pub const OSM_FILE: &str = "buildings.osm";
pub const FEATURES_FILE: &str = "features.jsonl";
pub const SEEDS_FILE: &str = "seeds.jsonl";
pub const OBJECTS_FILE: &str = "objects.jsonl";
pub const DETECTIONS_FILE: &str = "detections.jsonl";

const PITCH_M: f64 = 40.0;
const FEATURE_DIM: usize = 8;
const STREET_PROTOTYPE: [f64; FEATURE_DIM] = [0.9, 0.7, 0.5, 0.8, 0.3, 0.6, 0.4, 0.2];
const OFF_PROTOTYPE: [f64; FEATURE_DIM] = [-0.6, 0.5, -0.7, 0.1, 0.9, -0.4, 0.3, -0.2];

type Tags = &'static [(&'static str, &'static str)];

const RESIDENTIAL_TAGS: [Tags; 5] = [
    &[("building", "house")],
    &[("building", "apartments")],
    &[("building", "residential")],
    &[("building", "terrace")],
    &[("building", "apartments"), ("shop", "no")],
];
const COMMERCIAL_TAGS: [Tags; 5] = [
    &[("building", "retail")],
    &[("building", "commercial"), ("shop", "clothes")],
    &[("building", "yes"), ("shop", "bakery")],
    &[("building", "yes"), ("amenity", "restaurant")],
    &[("building", "office")],
];
const OTHER_TAGS: [Tags; 5] = [
    &[("building", "church")],
    &[("building", "school"), ("amenity", "school")],
    &[("building", "yes"), ("amenity", "place_of_worship")],
    &[("building", "civic"), ("amenity", "townhall")],
    &[("building", "hospital")],
];
const UNMAPPED_TAGS: [Tags; 4] = [
    &[("building", "yes")],
    &[("building", "apartments"), ("shop", "bakery")],
    &[("building", "church"), ("amenity", "cafe")],
    &[("building", "yes"), ("shop", "no")],
];

const SIGN_WORDS: [&str; 40] = [
    "Apotheke",
    "Bäckerei",
    "Späti",
    "Buchhandlung",
    "Friseur",
    "Blumen",
    "Optiker",
    "Sparkasse",
    "Imbiss",
    "Döner",
    "Eingang",
    "Hinterhaus",
    "Vorderhaus",
    "Praxis",
    "Rechtsanwalt",
    "Zahnarzt",
    "Galerie",
    "Kita",
    "Kirche",
    "Rathaus",
    "Bibliothek",
    "BERLIN",
    "Hotel",
    "Restaurant",
    "Pizzeria",
    "Wäscherei",
    "Schlüsseldienst",
    "Kaffee",
    "Bio Markt",
    "Getränke",
    "Spätkauf",
    "Tabak",
    "Lotto",
    "Post",
    "Hausverwaltung",
    "Physiotherapie",
    "Kiosk",
    "Antiquariat",
    "Fahrräder",
    "Gaststätte",
];
const OTHER_NUMBERS: [&str; 8] = [
    "10115",
    "030 2847561",
    "K2M7",
    "No. 3a/b",
    "12-14",
    "B96",
    "1.OG",
    "24/7",
];
const STOPWORD_NOISE: [&str; 10] = [
    "und", "der", "die", "das", "the", "and", "in", "zu", "mit", "of",
];
const REPETITIVE_NOISE: [&str; 8] = [
    "aaaa", "IIIII", "lll", "ooo", "xxxx", "HHHH", "nnnnn", "eee",
];

#[derive(Clone, Copy)]
enum Facade {
    North,
    East,
    South,
    West,
}

struct Building {
    id: u64,
    min: LocalPoint,
    max: LocalPoint,
    tags: Tags,
    housenumber: u32,
}

/// Kind of photo in the plan; decides which filter removes it, if any.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Fate {
    Kept { with_text: bool },
    Unmatched,
    MissingDirection,
    MissingPosition,
    Duplicate,
    LowSimilarity,
    NoBuilding,
}

struct Generator {
    rng: ChaCha8Rng,
    origin: GeoPoint,
    used_positions: HashSet<(i64, i64)>,
    used_ids: BTreeSet<u64>,
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (v * f).round() / f
}

impl Generator {
    fn unique_id(&mut self, lo: u64, hi: u64) -> u64 {
        loop {
            let id = self.rng.random_range(lo..hi);
            if self.used_ids.insert(id) {
                return id;
            }
        }
    }

    fn geo(&self, p: LocalPoint) -> GeoPoint {
        let g = unproject_local(self.origin, p);
        GeoPoint {
            lat: round_to(g.lat, 7),
            lon: round_to(g.lon, 7),
        }
    }

    /// A camera facing one facade of `b`, at a position no other photo
    /// shares after rounding to six decimals.
    fn view_of(&mut self, b: &Building) -> (GeoPoint, f64) {
        loop {
            let facade = match self.rng.random_range(0..4) {
                0 => Facade::North,
                1 => Facade::East,
                2 => Facade::South,
                _ => Facade::West,
            };
            let d = self.rng.random_range(3.0..12.0);
            let u = self.rng.random_range(-3.0..3.0);
            let (camera, target) = match facade {
                Facade::South | Facade::North => {
                    let x = self.rng.random_range(b.min.x + 1.0..b.max.x - 1.0);
                    let (fy, cy) = match facade {
                        Facade::South => (b.min.y, b.min.y - d),
                        _ => (b.max.y, b.max.y + d),
                    };
                    (LocalPoint::new(x + u, cy), LocalPoint::new(x, fy))
                }
                Facade::West | Facade::East => {
                    let y = self.rng.random_range(b.min.y + 1.0..b.max.y - 1.0);
                    let (fx, cx) = match facade {
                        Facade::West => (b.min.x, b.min.x - d),
                        _ => (b.max.x, b.max.x + d),
                    };
                    (LocalPoint::new(cx, y + u), LocalPoint::new(fx, y))
                }
            };
            let pos = self.geo(camera);
            if !self.claim(pos) {
                continue;
            }
            let bearing = (target.x - camera.x)
                .atan2(target.y - camera.y)
                .to_degrees();
            return (pos, round_to(bearing.rem_euclid(360.0), 2) % 360.0);
        }
    }

    fn claim(&mut self, pos: GeoPoint) -> bool {
        let key = (
            (pos.lat * 1e6).round() as i64,
            (pos.lon * 1e6).round() as i64,
        );
        self.used_positions.insert(key)
    }

    fn vector(&mut self, base: &[f64; FEATURE_DIM], noise: f64) -> Vec<f64> {
        base.iter()
            .map(|v| round_to(v + self.rng.random_range(-noise..noise), 4))
            .collect()
    }

    fn score(&mut self, lo: f64, hi: f64) -> f64 {
        round_to(self.rng.random_range(lo..hi), 3)
    }

    fn text_box(&mut self) -> Vec<[f64; 2]> {
        let x = round_to(self.rng.random_range(0.0..900.0), 1);
        let y = round_to(self.rng.random_range(0.0..600.0), 1);
        let w = round_to(self.rng.random_range(20.0..300.0), 1);
        let h = round_to(self.rng.random_range(10.0..80.0), 1);
        vec![[x, y], [x + w, y], [x + w, y + h], [x, y + h]]
    }

    fn readable_text(&mut self) -> String {
        let r = self.rng.random_range(0..100);
        if r < 45 {
            SIGN_WORDS[self.rng.random_range(0..SIGN_WORDS.len())].to_string()
        } else if r < 75 {
            let n = self.rng.random_range(1..200);
            if self.rng.random_bool(0.15) {
                format!("{n}{}", ['a', 'b', 'c'][self.rng.random_range(0..3)])
            } else {
                n.to_string()
            }
        } else if r < 88 {
            self.rng.random_range(1850..2016).to_string()
        } else {
            OTHER_NUMBERS[self.rng.random_range(0..OTHER_NUMBERS.len())].to_string()
        }
    }

    /// A detection the STR filters remove.
    fn noise(&mut self, photo_id: &str) -> StrDetection {
        let (text, text_score, box_score) = match self.rng.random_range(0..4) {
            0 => {
                let t = self.readable_text();
                let s = if self.rng.random_bool(0.3) {
                    0.8
                } else {
                    self.score(0.2, 0.8)
                };
                (t, s, self.score(0.81, 1.0))
            }
            1 => {
                let t = self.readable_text();
                let s = if self.rng.random_bool(0.3) {
                    0.8
                } else {
                    self.score(0.2, 0.8)
                };
                (t, self.score(0.81, 1.0), s)
            }
            2 => {
                let t = STOPWORD_NOISE[self.rng.random_range(0..STOPWORD_NOISE.len())];
                (t.to_string(), self.score(0.81, 1.0), self.score(0.81, 1.0))
            }
            _ => {
                let t = REPETITIVE_NOISE[self.rng.random_range(0..REPETITIVE_NOISE.len())];
                (t.to_string(), self.score(0.81, 1.0), self.score(0.81, 1.0))
            }
        };
        StrDetection {
            photo_id: photo_id.to_string(),
            text,
            text_score,
            bbox: self.text_box(),
            box_score,
        }
    }

    fn kept_detection(&mut self, photo_id: &str) -> StrDetection {
        let text = self.readable_text();
        StrDetection {
            photo_id: photo_id.to_string(),
            text,
            text_score: self.score(0.81, 1.0),
            bbox: self.text_box(),
            box_score: self.score(0.81, 1.0),
        }
    }
}

struct PlannedPhoto {
    record: PhotoRecord,
    fate: Fate,
}

pub fn generate(spec: &FixtureSpec) -> Result<FixtureFiles> {
    spec.validate()?;
    let mut g = Generator {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        origin: spec.origin,
        used_positions: HashSet::new(),
        used_ids: BTreeSet::new(),
    };

    // Buildings per class, then the photos that look at them.
    let ppb = spec.photos_per_building;
    let mut groups: Vec<(Option<FunctionClass>, usize)> = spec
        .quotas
        .iter()
        .map(|q| (Some(q.function), q.images))
        .collect();
    groups.push((None, spec.unmapped_images));
    let n_buildings: usize =
        groups.iter().map(|(_, n)| n.div_ceil(ppb)).sum::<usize>() + spec.idle_buildings;
    let side = (n_buildings as f64).sqrt().ceil() as usize;
    let mut cells: Vec<usize> = (0..side * side).collect();
    cells.shuffle(&mut g.rng);

    let mut buildings: Vec<Building> = Vec::with_capacity(n_buildings);
    let mut targets: Vec<(Option<FunctionClass>, Vec<usize>)> = Vec::new();
    let mut cell_iter = cells.into_iter();
    let mut place = |g: &mut Generator, tags: Tags| -> usize {
        let cell = cell_iter.next().expect("grid sized for all buildings");
        let (cx, cy) = ((cell % side) as f64, (cell / side) as f64);
        let x0 = cx * PITCH_M + g.rng.random_range(0.0..4.0);
        let y0 = cy * PITCH_M + g.rng.random_range(0.0..4.0);
        let w = g.rng.random_range(10.0..16.0);
        let h = g.rng.random_range(10.0..16.0);
        let id = g.unique_id(20_000_000, 900_000_000);
        buildings.push(Building {
            id,
            min: LocalPoint::new(x0, y0),
            max: LocalPoint::new(x0 + w, y0 + h),
            tags,
            housenumber: g.rng.random_range(1..180),
        });
        buildings.len() - 1
    };
    for (class, images) in &groups {
        let variants: &[Tags] = match class {
            Some(FunctionClass::Residential) => &RESIDENTIAL_TAGS,
            Some(FunctionClass::Commercial) => &COMMERCIAL_TAGS,
            Some(FunctionClass::Other) => &OTHER_TAGS,
            _ => &UNMAPPED_TAGS,
        };
        let idx: Vec<usize> = (0..images.div_ceil(ppb))
            .map(|_| {
                let tags = variants[g.rng.random_range(0..variants.len())];
                place(&mut g, tags)
            })
            .collect();
        targets.push((*class, idx));
    }
    for _ in 0..spec.idle_buildings {
        let tags = RESIDENTIAL_TAGS[g.rng.random_range(0..RESIDENTIAL_TAGS.len())];
        place(&mut g, tags);
    }

    let mut plan: Vec<PlannedPhoto> = Vec::new();
    let mut new_photo =
        |g: &mut Generator, position: Option<GeoPoint>, direction: Option<f64>, fate: Fate| {
            let id = g.unique_id(10_000_000_000, 53_000_000_000);
            let record = PhotoRecord {
                id: id.to_string(),
                position,
                direction,
                taken_at: Some(g.rng.random_range(1_199_145_600..1_672_531_200)),
                uploader: format!(
                    "{}@N{:02}",
                    g.rng.random_range(10_000_000..99_999_999),
                    g.rng.random_range(0..8)
                ),
                image_ref: format!("flickr/{id}.jpg"),
            };
            plan.push(PlannedPhoto { record, fate });
        };

    for (gi, (class, idx)) in targets.iter().enumerate() {
        let images = groups[gi].1;
        let with_text = class
            .and_then(|c| spec.quotas.iter().find(|q| q.function == c))
            .map_or(images / 2, |q| q.images_with_text);
        let mut text_flags: Vec<bool> = (0..images).map(|i| i < with_text).collect();
        text_flags.shuffle(&mut g.rng);
        for (k, has_text) in text_flags.into_iter().enumerate() {
            let b = &buildings[idx[k % idx.len()]];
            let (pos, bearing) = g.view_of(b);
            new_photo(
                &mut g,
                Some(pos),
                Some(bearing),
                Fate::Kept {
                    with_text: has_text,
                },
            );
        }
    }

    // South of the grid, looking further south.
    let mut unmatched = 0;
    while unmatched < spec.unmatched_images {
        let x = g.rng.random_range(0.0..side as f64 * PITCH_M);
        let y = -g.rng.random_range(30.0..60.0);
        let pos = g.geo(LocalPoint::new(x, y));
        if g.claim(pos) {
            let bearing = round_to(g.rng.random_range(120.0..240.0), 2);
            new_photo(&mut g, Some(pos), Some(bearing), Fate::Unmatched);
            unmatched += 1;
        }
    }

    let pick = |g: &mut Generator| g.rng.random_range(0..buildings.len());
    for _ in 0..spec.missing_direction {
        let i = pick(&mut g);
        let (pos, _) = g.view_of(&buildings[i]);
        new_photo(&mut g, Some(pos), None, Fate::MissingDirection);
    }
    for _ in 0..spec.missing_position {
        let bearing = round_to(g.rng.random_range(0.0..360.0), 2);
        new_photo(&mut g, None, Some(bearing), Fate::MissingPosition);
    }
    for _ in 0..spec.duplicate_pairs {
        let i = pick(&mut g);
        let (pos, bearing) = g.view_of(&buildings[i]);
        new_photo(&mut g, Some(pos), Some(bearing), Fate::Duplicate);
        let turned = round_to(
            (bearing + g.rng.random_range(-10.0..10.0)).rem_euclid(360.0),
            2,
        ) % 360.0;
        new_photo(&mut g, Some(pos), Some(turned), Fate::Duplicate);
    }
    for (n, fate) in [
        (spec.low_similarity, Fate::LowSimilarity),
        (spec.no_building, Fate::NoBuilding),
    ] {
        for _ in 0..n {
            let i = pick(&mut g);
            let (pos, bearing) = g.view_of(&buildings[i]);
            new_photo(&mut g, Some(pos), Some(bearing), fate);
        }
    }

    plan.sort_by(|a, b| a.record.id.cmp(&b.record.id));

    // Content artifacts and detections, in photo id order.
    let mut features = String::new();
    let mut objects = String::new();
    let mut detections: Vec<StrDetection> = Vec::new();
    for p in &plan {
        let id = p.record.id.as_str();
        let base = if p.fate == Fate::LowSimilarity {
            &OFF_PROTOTYPE
        } else {
            &STREET_PROTOTYPE
        };
        let values = g.vector(base, 0.12);
        push_json(
            &mut features,
            &FeatureVector {
                photo_id: id.into(),
                values,
            },
        )?;

        let mut objs = Vec::new();
        if p.fate == Fate::NoBuilding {
            match g.rng.random_range(0..3) {
                0 => {}
                1 => objs.push(("house", g.score(0.5, 0.8), g.score(0.15, 0.6))),
                _ => objs.push(("building", g.score(0.85, 0.99), g.score(0.01, 0.1))),
            }
        } else {
            let label = if g.rng.random_bool(0.5) {
                "building"
            } else {
                "house"
            };
            objs.push((label, g.score(0.81, 0.99), g.score(0.11, 0.85)));
        }
        for _ in 0..g.rng.random_range(0..3) {
            let label = ["car", "person", "tree", "bicycle"][g.rng.random_range(0..4)];
            objs.push((label, g.score(0.3, 0.99), g.score(0.01, 0.3)));
        }
        for (label, confidence, size) in objs {
            push_json(
                &mut objects,
                &DetectedObject {
                    photo_id: id.into(),
                    label: label.into(),
                    confidence,
                    size,
                },
            )?;
        }

        let readable = match p.fate {
            Fate::Kept { with_text: true } => {
                // Mostly a few texts, occasionally a busy storefront.
                let u: f64 = g.rng.random_range(f64::EPSILON..1.0);
                (1 + (-u.ln() * 1.6) as usize).min(32)
            }
            Fate::Kept { with_text: false } => 0,
            _ => g.rng.random_range(0..3),
        };
        let mut dets: Vec<StrDetection> = (0..readable).map(|_| g.kept_detection(id)).collect();
        for _ in 0..g.rng.random_range(0..3) {
            let n = g.noise(id);
            let at = g.rng.random_range(0..=dets.len());
            dets.insert(at, n);
        }
        detections.extend(dets);
    }

    let mut seeds = String::new();
    for i in 0..24 {
        let values = g.vector(&STREET_PROTOTYPE, 0.06);
        push_json(
            &mut seeds,
            &FeatureVector {
                photo_id: format!("gsv-{i:03}"),
                values,
            },
        )?;
    }

    let records: Vec<PhotoRecord> = plan.into_iter().map(|p| p.record).collect();
    let mut files = BTreeMap::new();
    files.insert(OSM_FILE, osm_xml(&g, &buildings));
    files.insert(PHOTOS_FILE, write_photo_records(&records));
    files.insert(FEATURES_FILE, features);
    files.insert(SEEDS_FILE, seeds);
    files.insert(OBJECTS_FILE, objects);
    files.insert(DETECTIONS_FILE, write_detections(&detections));
    Ok(FixtureFiles { files })
}

fn push_json<T: serde::Serialize>(out: &mut String, value: &T) -> Result<()> {
    let line = serde_json::to_string(value).map_err(|e| Error::validation(e.to_string()))?;
    out.push_str(&line);
    out.push('\n');
    Ok(())
}

fn osm_xml(g: &Generator, buildings: &[Building]) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<osm version=\"0.6\" generator=\"ftm fixture\">\n");
    let mut ways = String::new();
    let mut sorted: Vec<&Building> = buildings.iter().collect();
    sorted.sort_by_key(|b| b.id);
    let mut node_id = 1_000_000_000u64;
    for b in sorted {
        let corners = [
            b.min,
            LocalPoint::new(b.max.x, b.min.y),
            b.max,
            LocalPoint::new(b.min.x, b.max.y),
        ];
        let first = node_id;
        for c in corners {
            let p = g.geo(c);
            let _ = writeln!(
                out,
                "  <node id=\"{node_id}\" lat=\"{}\" lon=\"{}\"/>",
                p.lat, p.lon
            );
            node_id += 1;
        }
        let _ = writeln!(ways, "  <way id=\"{}\">", b.id);
        for n in (first..node_id).chain([first]) {
            let _ = writeln!(ways, "    <nd ref=\"{n}\"/>");
        }
        for (k, v) in b.tags {
            let _ = writeln!(ways, "    <tag k=\"{k}\" v=\"{v}\"/>");
        }
        let _ = writeln!(
            ways,
            "    <tag k=\"addr:housenumber\" v=\"{}\"/>",
            b.housenumber
        );
        ways.push_str("  </way>\n");
    }
    out.push_str(&ways);
    out.push_str("</osm>\n");
    out
}
