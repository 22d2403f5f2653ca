//! Content filtering over precomputed artifacts: image feature vectors
//! compared against a street-view seed set, and object-detector output
//! checked for a large, confident building.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labels the detector uses for buildings.
pub const DEFAULT_BUILDING_LABELS: [&str; 2] = ["house", "building"];

// Defaults of our own choosing; no published values exist for these.
pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.7;
pub const DEFAULT_SIZE_THRESHOLD: f64 = 0.1;
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub photo_id: String,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(photo_id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let fv = Self {
            photo_id: photo_id.into(),
            values,
        };
        fv.validate()?;
        Ok(fv)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "feature vector of {} has a non-finite value",
                self.photo_id
            )));
        }
        if self.norm() == 0.0 {
            return Err(Error::validation(format!(
                "feature vector of {} is zero",
                self.photo_id
            )));
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub photo_id: String,
    pub label: String,
    pub confidence: f64,
    /// Fraction of the image area covered by the object.
    pub size: f64,
}

impl DetectedObject {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::validation(format!(
                "object confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        if !(self.size > 0.0 && self.size <= 1.0) {
            return Err(Error::validation(format!(
                "object size {} outside (0, 1]",
                self.size
            )));
        }
        Ok(())
    }
}

pub fn cosine_similarity(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.values.len() != b.values.len() {
        return Err(Error::validation(format!(
            "feature length mismatch: {} vs {}",
            a.values.len(),
            b.values.len()
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::validation("cosine similarity of a zero vector"));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Keeps a photo when its best match among the seeds reaches `threshold`.
pub fn similarity_filter(
    photos: &[FeatureVector],
    seeds: &[FeatureVector],
    threshold: f64,
) -> Result<BTreeSet<String>> {
    let Some(first) = seeds.first() else {
        return Err(Error::validation(
            "similarity filter needs at least one seed",
        ));
    };
    let dim = first.values.len();
    if let Some(bad) = seeds.iter().chain(photos).find(|v| v.values.len() != dim) {
        return Err(Error::validation(format!(
            "feature vector of {} has length {}, expected {dim}",
            bad.photo_id,
            bad.values.len()
        )));
    }
    let mut kept = BTreeSet::new();
    for photo in photos {
        let mut best = f64::NEG_INFINITY;
        for seed in seeds {
            best = best.max(cosine_similarity(photo, seed)?);
        }
        if best >= threshold {
            kept.insert(photo.photo_id.clone());
        }
    }
    Ok(kept)
}

/// Whether any object is a building-like label with size and confidence both
/// strictly above their thresholds.
pub fn has_building<'a, I>(
    objects: I,
    labels: &[String],
    size_threshold: f64,
    conf_threshold: f64,
) -> bool
where
    I: IntoIterator<Item = &'a DetectedObject>,
{
    objects.into_iter().any(|o| {
        labels.iter().any(|l| l == &o.label)
            && o.size > size_threshold
            && o.confidence > conf_threshold
    })
}

/// Per-photo building gate over a flat list of detections.
pub fn detection_filter(
    objects: &[DetectedObject],
    labels: &[String],
    size_threshold: f64,
    conf_threshold: f64,
) -> BTreeMap<String, bool> {
    let mut by_photo: BTreeMap<String, Vec<&DetectedObject>> = BTreeMap::new();
    for o in objects {
        by_photo.entry(o.photo_id.clone()).or_default().push(o);
    }
    by_photo
        .into_iter()
        .map(|(id, objs)| {
            let pass = has_building(objs, labels, size_threshold, conf_threshold);
            (id, pass)
        })
        .collect()
}

pub fn read_feature_vectors(path: &Path) -> Result<Vec<FeatureVector>> {
    let vectors: Vec<FeatureVector> = crate::jsonl::read(path)?;
    for v in &vectors {
        v.validate()?;
    }
    Ok(vectors)
}

pub fn read_detected_objects(path: &Path) -> Result<Vec<DetectedObject>> {
    let objects: Vec<DetectedObject> = crate::jsonl::read(path)?;
    for o in &objects {
        o.validate()?;
    }
    Ok(objects)
}
