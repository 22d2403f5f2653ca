//! Pipeline configuration: a flat TOML file whose relative paths resolve
//! against the file's own directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use ftm_core::content::{
    DEFAULT_BUILDING_LABELS, DEFAULT_CONFIDENCE_THRESHOLD, DEFAULT_SIMILARITY_THRESHOLD,
    DEFAULT_SIZE_THRESHOLD,
};
use ftm_core::mapper::{DistanceStrategy, DEFAULT_MAX_RANGE_M};
use ftm_core::photo::DuplicateMode;
use ftm_core::strpost::{DEFAULT_BOX_THRESHOLD, DEFAULT_TEXT_THRESHOLD};

use crate::exit::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub work_dir: PathBuf,

    // Raw inputs.
    pub photos: Option<PathBuf>,
    pub endpoint: Option<String>,
    /// min_lat, min_lon, max_lat, max_lon
    pub bbox: Option<[f64; 4]>,
    pub page_size: u32,
    pub osm: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub seeds: Option<PathBuf>,
    pub objects: Option<PathBuf>,
    pub detections: Option<PathBuf>,

    // Lookup tables; bundled copies when unset.
    pub mapping_table: Option<PathBuf>,
    /// Language code to word-list file; replaces the bundled lists.
    pub stopwords: Option<BTreeMap<String, PathBuf>>,
    pub allowlist: Option<PathBuf>,

    pub duplicate_mode: DuplicateMode,
    pub similarity_threshold: f64,
    pub size_threshold: f64,
    pub confidence_threshold: f64,
    pub detector_labels: Vec<String>,
    pub text_threshold: f64,
    pub box_threshold: f64,
    pub max_range: f64,
    pub match_strategy: DistanceStrategy,
    pub count_out_of_range: bool,
    pub current_year: Option<u32>,
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            work_dir: PathBuf::from("ftm-work"),
            photos: None,
            endpoint: None,
            bbox: None,
            page_size: 100,
            osm: None,
            features: None,
            seeds: None,
            objects: None,
            detections: None,
            mapping_table: None,
            stopwords: None,
            allowlist: None,
            duplicate_mode: DuplicateMode::Global,
            similarity_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            size_threshold: DEFAULT_SIZE_THRESHOLD,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            detector_labels: DEFAULT_BUILDING_LABELS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            text_threshold: DEFAULT_TEXT_THRESHOLD,
            box_threshold: DEFAULT_BOX_THRESHOLD,
            max_range: DEFAULT_MAX_RANGE_M,
            match_strategy: DistanceStrategy::Intersection,
            count_out_of_range: false,
            current_year: None,
            workers: 4,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.work_dir);
        for p in [
            &mut self.photos,
            &mut self.osm,
            &mut self.features,
            &mut self.seeds,
            &mut self.objects,
            &mut self.detections,
            &mut self.mapping_table,
            &mut self.allowlist,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        if let Some(lists) = &mut self.stopwords {
            lists.values_mut().for_each(fix);
        }
    }

    /// Range checks and existence of every referenced input file.
    pub fn validate(&self) -> Result<(), CliError> {
        for (name, t) in [
            ("similarity_threshold", self.similarity_threshold),
            ("size_threshold", self.size_threshold),
            ("confidence_threshold", self.confidence_threshold),
            ("text_threshold", self.text_threshold),
            ("box_threshold", self.box_threshold),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return Err(CliError::Config(format!("{name} = {t} is outside [0, 1]")));
            }
        }
        if !(self.max_range.is_finite() && self.max_range > 0.0) {
            return Err(CliError::Config(format!(
                "max_range = {} must be positive",
                self.max_range
            )));
        }
        if self.workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        if self.page_size == 0 {
            return Err(CliError::Config("page_size must be at least 1".into()));
        }
        if self.detector_labels.is_empty() {
            return Err(CliError::Config("detector_labels is empty".into()));
        }
        let mut files: Vec<(&str, &PathBuf)> = [
            ("photos", &self.photos),
            ("osm", &self.osm),
            ("features", &self.features),
            ("seeds", &self.seeds),
            ("objects", &self.objects),
            ("detections", &self.detections),
            ("mapping_table", &self.mapping_table),
            ("allowlist", &self.allowlist),
        ]
        .into_iter()
        .filter_map(|(k, p)| p.as_ref().map(|p| (k, p)))
        .collect();
        if let Some(lists) = &self.stopwords {
            files.extend(lists.values().map(|p| ("stopwords", p)));
        }
        for (key, path) in files {
            if !path.is_file() {
                return Err(CliError::Config(format!(
                    "{key}: {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}
