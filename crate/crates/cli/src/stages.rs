//! One function per subcommand. Each reads its inputs from the work
//! directory (or the raw inputs named in the config), writes its artifact and
//! returns the text to show on standard output.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ftm_core::content::{
    detection_filter, read_detected_objects, read_feature_vectors, similarity_filter,
};
use ftm_core::jsonl;
use ftm_core::mapper::{
    aggregate_by_function, build_attribute_records, classify_detections, current_year, export_csv,
    export_geojson, match_all, ClassifiedText, ExportFormat, MatchConfig, MatchResult,
    NumericTextClass,
};
use ftm_core::osm::{
    read_footprints, write_footprints_geojson, Footprint, FunctionClass, MappingTable,
};
use ftm_core::photo::{
    fetch_photo_metadata, filter_duplicate_positions, filter_missing_direction, read_photo_records,
    write_photo_records, BBox, FetchOptions, PhotoRecord,
};
use ftm_core::report::FilterReport;
use ftm_core::strpost::{
    filter_pipeline, load_allowlist, read_detections, write_detections, StopwordLists,
    StrFilterConfig,
};
use ftm_core::synth::{evaluate_seeds, SceneParams};

use crate::config::PipelineConfig;
use crate::exit::CliError;

pub const PHOTOS: &str = "photos.jsonl";
pub const FOOTPRINTS: &str = "footprints.geojson";
pub const PHOTOS_META: &str = "photos.meta.jsonl";
pub const PHOTOS_CONTENT: &str = "photos.content.jsonl";
pub const MATCHES: &str = "matches.jsonl";
pub const DETECTIONS_FILTERED: &str = "detections.filtered.jsonl";
pub const TEXTS: &str = "texts.jsonl";
pub const AGGREGATE: &str = "aggregate.json";
pub const MAP_GEOJSON: &str = "map.geojson";
pub const MAP_CSV: &str = "map.csv";

type StageResult = Result<String, CliError>;

pub struct Stages {
    pub config: PipelineConfig,
}

impl Stages {
    pub fn new(config: PipelineConfig) -> Self {
        Self { config }
    }

    fn work(&self, name: &str) -> PathBuf {
        self.config.work_dir.join(name)
    }

    /// An artifact an earlier stage should have written.
    fn upstream(&self, name: &str, producer: &str) -> Result<PathBuf, CliError> {
        let path = self.work(name);
        if path.is_file() {
            Ok(path)
        } else {
            Err(CliError::MissingInput(format!(
                "{} not found; run `ftm {producer}` first",
                path.display()
            )))
        }
    }

    fn raw<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
        value
            .as_deref()
            .ok_or_else(|| CliError::MissingInput(format!("no `{key}` input configured")))
    }

    fn write(&self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let dir = &self.config.work_dir;
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let path = self.work(name);
        std::fs::write(&path, body)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    fn mapping_table(&self) -> Result<MappingTable, CliError> {
        match &self.config.mapping_table {
            Some(p) => Ok(MappingTable::load(p)?),
            None => Ok(MappingTable::bundled()),
        }
    }

    fn photos(&self, name: &str, producer: &str) -> Result<Vec<PhotoRecord>, CliError> {
        let parsed = read_photo_records(&self.upstream(name, producer)?)?;
        if parsed.malformed > 0 {
            return Err(CliError::Validation(format!(
                "{name} has {} malformed lines",
                parsed.malformed
            )));
        }
        Ok(parsed.records)
    }

    fn footprints(&self) -> Result<Vec<Footprint>, CliError> {
        let path = self.upstream(FOOTPRINTS, "ingest")?;
        Ok(read_footprints(&path, &self.mapping_table()?)?.footprints)
    }

    fn year(&self) -> u32 {
        self.config.current_year.unwrap_or_else(current_year)
    }

    pub fn ingest(&self) -> StageResult {
        let mut out = String::new();
        let c = &self.config;
        let mut records = if let Some(path) = &c.photos {
            let parsed = read_photo_records(path)?;
            let _ = writeln!(
                out,
                "photos: {} read from {}, {} malformed lines skipped",
                parsed.records.len(),
                path.display(),
                parsed.malformed
            );
            parsed.records
        } else if let Some(endpoint) = &c.endpoint {
            let [a, b, cc, d] = c
                .bbox
                .ok_or_else(|| CliError::Config("`endpoint` needs a `bbox`".into()))?;
            let bbox = BBox::new(a, b, cc, d)?;
            let records =
                fetch_photo_metadata(endpoint, &bbox, c.page_size, &FetchOptions::from_env())?;
            let _ = writeln!(out, "photos: {} fetched from {endpoint}", records.len());
            records
        } else {
            return Err(CliError::MissingInput(
                "no photo source; set `photos` or `endpoint`".into(),
            ));
        };
        records.sort_by(|a, b| a.id.cmp(&b.id));
        self.write(PHOTOS, &write_photo_records(&records))?;

        let osm = self.raw(&c.osm, "osm")?;
        let set = read_footprints(osm, &self.mapping_table()?)?;
        self.write(FOOTPRINTS, &write_footprints_geojson(&set.footprints))?;
        let mut by_class: BTreeMap<FunctionClass, usize> = BTreeMap::new();
        for f in &set.footprints {
            *by_class.entry(f.function).or_default() += 1;
        }
        let _ = writeln!(
            out,
            "footprints: {} read, {} skipped, {} unknown tag values",
            set.footprints.len(),
            set.skipped,
            set.unknown_tag_values
        );
        let classes: Vec<String> = by_class.iter().map(|(k, v)| format!("{k} {v}")).collect();
        let _ = writeln!(out, "functions: {}", classes.join(", "));
        Ok(out)
    }

    pub fn filter_meta(&self) -> StageResult {
        let photos = self.photos(PHOTOS, "ingest")?;
        let (photos, r1) = filter_duplicate_positions(photos, self.config.duplicate_mode);
        let (photos, r2) = filter_missing_direction(photos);
        self.write(PHOTOS_META, &write_photo_records(&photos))?;
        Ok(format!("{r1}\n{r2}\n"))
    }

    pub fn filter_content(&self) -> StageResult {
        let c = &self.config;
        let photos = self.photos(PHOTOS_META, "filter-meta")?;
        let ids: BTreeSet<String> = photos.iter().map(|p| p.id.clone()).collect();

        let features: Vec<_> = read_feature_vectors(self.raw(&c.features, "features")?)?
            .into_iter()
            .filter(|f| ids.contains(&f.photo_id))
            .collect();
        let seeds = read_feature_vectors(self.raw(&c.seeds, "seeds")?)?;
        let similar = similarity_filter(&features, &seeds, c.similarity_threshold)?;
        let without_features = ids.len() - features.len();
        let after_sim: Vec<PhotoRecord> = photos
            .into_iter()
            .filter(|p| similar.contains(&p.id))
            .collect();
        let r1 = FilterReport::new("similarity", ids.len(), after_sim.len());

        let objects: Vec<_> = read_detected_objects(self.raw(&c.objects, "objects")?)?;
        let gate = detection_filter(
            &objects,
            &c.detector_labels,
            c.size_threshold,
            c.confidence_threshold,
        );
        let kept: Vec<PhotoRecord> = after_sim
            .iter()
            .filter(|p| gate.get(&p.id).copied().unwrap_or(false))
            .cloned()
            .collect();
        let r2 = FilterReport::new("object-detection", after_sim.len(), kept.len());
        self.write(PHOTOS_CONTENT, &write_photo_records(&kept))?;
        let mut out = format!("{r1}\n{r2}\n");
        if without_features > 0 {
            let _ = writeln!(out, "{without_features} photos had no feature vector");
        }
        Ok(out)
    }

    pub fn match_photos(&self) -> StageResult {
        let c = &self.config;
        let photos = self.photos(PHOTOS_CONTENT, "filter-content")?;
        let footprints = self.footprints()?;
        let config = MatchConfig {
            max_range: c.max_range,
            count_out_of_range: c.count_out_of_range,
            strategy: c.match_strategy,
        };
        let matches = match_all(&photos, &footprints, &config, c.workers)?;
        self.write(MATCHES, &jsonl::to_string(&matches))?;
        let matched = matches.iter().filter(|m| m.footprint_id.is_some()).count();
        Ok(format!(
            "matched {matched} of {} photos against {} footprints ({} without a building in {} m)\n",
            matches.len(),
            footprints.len(),
            matches.len() - matched,
            c.max_range
        ))
    }

    fn str_config(&self) -> Result<StrFilterConfig, CliError> {
        let c = &self.config;
        let mut config = StrFilterConfig {
            text_threshold: c.text_threshold,
            box_threshold: c.box_threshold,
            ..StrFilterConfig::default()
        };
        if let Some(lists) = &c.stopwords {
            let mut sw = StopwordLists::empty();
            for (lang, path) in lists {
                sw.load(lang, path)?;
            }
            config.stopwords = sw;
        }
        if let Some(path) = &c.allowlist {
            config.allowlist = load_allowlist(path)?;
        }
        Ok(config)
    }

    pub fn filter_str(&self) -> StageResult {
        let dets = read_detections(self.raw(&self.config.detections, "detections")?)?;
        let outcome = filter_pipeline(&dets, &self.str_config()?)?;
        self.write(DETECTIONS_FILTERED, &write_detections(&outcome.kept))?;
        let photos: BTreeSet<&str> = outcome.kept.iter().map(|d| d.photo_id.as_str()).collect();
        let mut out = String::new();
        for r in &outcome.reports {
            let _ = writeln!(out, "{r}");
        }
        let _ = writeln!(
            out,
            "{} detections kept on {} photos",
            outcome.kept.len(),
            photos.len()
        );
        Ok(out)
    }

    pub fn classify(&self) -> StageResult {
        let dets = read_detections(&self.upstream(DETECTIONS_FILTERED, "filter-str")?)?;
        let texts = classify_detections(&dets, self.year());
        self.write(TEXTS, &jsonl::to_string(&texts))?;
        let mut tally: BTreeMap<NumericTextClass, usize> = BTreeMap::new();
        for t in &texts {
            *tally.entry(t.text_class).or_default() += 1;
        }
        let mut out = String::new();
        for class in [
            NumericTextClass::HouseNumber,
            NumericTextClass::ConstructionYear,
            NumericTextClass::OtherNumber,
            NumericTextClass::NonNumeric,
        ] {
            let _ = writeln!(
                out,
                "{:<18}{:>7}",
                class.as_str(),
                tally.get(&class).copied().unwrap_or(0)
            );
        }
        Ok(out)
    }

    pub fn aggregate(&self) -> StageResult {
        let matches: Vec<MatchResult> = jsonl::read(&self.upstream(MATCHES, "match")?)?;
        let dets = read_detections(&self.upstream(DETECTIONS_FILTERED, "filter-str")?)?;
        let footprints = self.footprints()?;
        let table = aggregate_by_function(&matches, &dets, &footprints)?;
        let json = serde_json::to_string_pretty(&table).expect("plain data serializes");
        self.write(AGGREGATE, &(json + "\n"))?;
        Ok(table.render())
    }

    pub fn export(&self, format: ExportFormat, out_path: Option<&Path>) -> StageResult {
        let matches: Vec<MatchResult> = jsonl::read(&self.upstream(MATCHES, "match")?)?;
        let texts: Vec<ClassifiedText> = jsonl::read(&self.upstream(TEXTS, "classify")?)?;
        let footprints = self.footprints()?;
        let records = build_attribute_records(&matches, &texts, &footprints)?;
        let (body, default_name) = match format {
            ExportFormat::GeoJson => (export_geojson(&records), MAP_GEOJSON),
            ExportFormat::Csv => (export_csv(&records)?, MAP_CSV),
        };
        let path = match out_path {
            Some(p) => {
                std::fs::write(p, &body)
                    .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                p.to_path_buf()
            }
            None => self.write(default_name, &body)?,
        };
        let n_texts: usize = records.iter().map(|r| r.texts.len()).sum();
        Ok(format!(
            "{} buildings, {n_texts} texts written to {}\n",
            records.len(),
            path.display()
        ))
    }

    pub fn synth_eval(&self, args: &SynthEvalOptions) -> StageResult {
        let params = SceneParams {
            n_buildings: args.buildings,
            area: args.area,
            max_range: self.config.max_range,
            ..SceneParams::default()
        };
        let seeds = args.start..args.start + args.seeds;
        let (summary, evals) = evaluate_seeds(seeds, &params, self.config.workers)?;
        if let Some(p) = &args.out {
            jsonl::write(p, &evals)?;
        }
        let mut out = format!(
            "scenes {}, with a hit {}, agreements {}, knife-edge {}, unexplained {}\n",
            summary.scenes,
            summary.with_hit,
            summary.agreements,
            summary.knife_edge,
            summary.unexplained.len()
        );
        let _ = writeln!(
            out,
            "agreement rate {:.4} (excluding knife-edge {:.4})",
            summary.agreement_rate(),
            summary.adjusted_rate()
        );
        for seed in &summary.unexplained {
            let _ = writeln!(out, "unexplained disagreement at seed {seed}");
        }
        Ok(out)
    }

    pub fn audit_sample(&self, n: usize, seed: u64, numeric_only: bool) -> StageResult {
        let texts: Vec<ClassifiedText> = jsonl::read(&self.upstream(TEXTS, "classify")?)?;
        let mut by_photo: BTreeMap<&str, Vec<&ClassifiedText>> = BTreeMap::new();
        for t in &texts {
            by_photo.entry(t.photo_id.as_str()).or_default().push(t);
        }
        if numeric_only {
            by_photo.retain(|_, ts| ts.iter().any(|t| t.text_class.is_numeric()));
        }
        let footprint_of: HashMap<String, String> = match self.work(MATCHES) {
            p if p.is_file() => jsonl::read::<MatchResult>(&p)?
                .into_iter()
                .filter_map(|m| m.footprint_id.map(|f| (m.photo_id, f)))
                .collect(),
            _ => HashMap::new(),
        };
        let image_of: HashMap<String, String> = match self.work(PHOTOS_CONTENT) {
            p if p.is_file() => read_photo_records(&p)?
                .records
                .into_iter()
                .map(|r| (r.id, r.image_ref))
                .collect(),
            _ => HashMap::new(),
        };

        let ids: Vec<&str> = by_photo.keys().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = sample(&mut rng, ids.len(), n.min(ids.len())).into_vec();
        picked.sort_unstable();

        let mut out = format!(
            "{} of {} photos with kept text (seed {seed}{})\n",
            picked.len(),
            ids.len(),
            if numeric_only { ", numeric only" } else { "" }
        );
        for i in picked {
            let id = ids[i];
            let texts: Vec<String> = by_photo[id]
                .iter()
                .map(|t| format!("{} [{}]", t.text, t.text_class))
                .collect();
            let _ = writeln!(
                out,
                "{id}\t{}\t{}\t{}",
                footprint_of.get(id).map_or("-", String::as_str),
                image_of.get(id).map_or("-", String::as_str),
                texts.join(" | ")
            );
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct SynthEvalOptions {
    pub seeds: u64,
    pub start: u64,
    pub buildings: usize,
    pub area: f64,
    pub out: Option<PathBuf>,
}
