//! Door detections: manifest loading, the remote detector client, and
//! confidence/overlap post-filtering.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{schema_error, Error, Result};
use crate::http::{self, RetryPolicy};
use crate::model::{suppress_overlaps, DoorBox, FloorPlanRef, PixelBox};

pub const DETECTOR_URL_ENV: &str = "FE_DETECTOR_URL";

/// One detection as it appears on the wire, in (possibly fractional) pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDetection {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub confidence: f64,
}

/// `{"plan_id": .., "detector": .., "detections": [{"box": [..], "confidence": ..}]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionManifest {
    pub plan_id: String,
    pub detector: String,
    pub detections: Vec<RawDetection>,
}

impl DetectionManifest {
    pub fn from_doors(
        plan_id: impl Into<String>,
        detector: impl Into<String>,
        doors: &[DoorBox],
    ) -> Self {
        Self {
            plan_id: plan_id.into(),
            detector: detector.into(),
            detections: doors
                .iter()
                .map(|d| RawDetection {
                    bbox: [
                        d.bbox.x_min as f64,
                        d.bbox.y_min as f64,
                        d.bbox.x_max as f64,
                        d.bbox.y_max as f64,
                    ],
                    confidence: d.confidence,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub confidence_threshold: f64,
    pub dedup_iou_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(skip)]
    pub retry: RetryPolicy,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.5,
            dedup_iou_threshold: 0.8,
            endpoint: None,
            retry: RetryPolicy::default(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("confidence_threshold", self.confidence_threshold),
            ("dedup_iou_threshold", self.dedup_iou_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Fills `endpoint` from `FE_DETECTOR_URL` when it is not already set.
    pub fn with_env_endpoint(mut self) -> Self {
        if self.endpoint.is_none() {
            self.endpoint = std::env::var(DETECTOR_URL_ENV)
                .ok()
                .filter(|s| !s.is_empty());
        }
        self
    }
}

/// Something adjusted while ingesting a detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestWarning {
    pub entry: usize,
    pub message: String,
}

/// Doors ingested for one plan, plus any clamping/drop warnings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DoorSet {
    pub doors: Vec<DoorBox>,
    pub warnings: Vec<IngestWarning>,
}

/// Reads a detection manifest from disk and validates it against `plan`.
pub fn load_detections(manifest_path: &Path, plan: &FloorPlanRef) -> Result<DoorSet> {
    let text = std::fs::read(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: DetectionManifest =
        serde_json::from_slice(&text).map_err(|e| schema_error("detections", e))?;
    if manifest.plan_id != plan.plan_id {
        return Err(Error::Schema {
            field: "plan_id".into(),
            message: format!(
                "manifest is for plan {:?}, expected {:?}",
                manifest.plan_id, plan.plan_id
            ),
        });
    }
    ingest(&manifest.detections, plan)
}

/// Validates raw detections: confidences must lie in [0, 1]; boxes are
/// rounded to whole pixels and clamped to the plan. Ids follow input order.
pub fn ingest(raw: &[RawDetection], plan: &FloorPlanRef) -> Result<DoorSet> {
    let bounds = plan.bounds();
    let mut out = DoorSet::default();
    for (entry, det) in raw.iter().enumerate() {
        if !(0.0..=1.0).contains(&det.confidence) {
            return Err(Error::Validation(format!(
                "detections[{entry}].confidence = {} outside [0, 1]",
                det.confidence
            )));
        }
        let [x0, y0, x1, y1] = det.bbox;
        if det.bbox.iter().any(|v| !v.is_finite()) || x0 >= x1 || y0 >= y1 {
            return Err(Error::Validation(format!(
                "detections[{entry}].box = {:?} is not a valid (x_min, y_min, x_max, y_max) box",
                det.bbox
            )));
        }
        let to_px = |v: f64, limit: u32| v.round().clamp(0.0, limit as f64) as u32;
        let clamped = PixelBox::new(
            to_px(x0, bounds.x_max),
            to_px(y0, bounds.y_max),
            to_px(x1, bounds.x_max),
            to_px(y1, bounds.y_max),
        );
        let bbox = match clamped {
            Ok(b) => b,
            Err(_) => {
                out.warnings.push(IngestWarning {
                    entry,
                    message: format!("box {:?} lies outside the plan; dropped", det.bbox),
                });
                continue;
            }
        };
        let exact = [bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max]
            .iter()
            .zip(det.bbox)
            .all(|(&px, raw)| (px as f64 - raw).abs() < 0.5);
        if !exact {
            out.warnings.push(IngestWarning {
                entry,
                message: format!("box {:?} clamped to {bbox}", det.bbox),
            });
        }
        let door_id = out.doors.len() as u32;
        out.doors.push(DoorBox::new(door_id, bbox, det.confidence)?);
    }
    for w in &out.warnings {
        log::warn!("{}: detection {}: {}", plan.plan_id, w.entry, w.message);
    }
    Ok(out)
}

/// Client for a detector service that accepts PNG bytes and answers with a
/// detection manifest.
#[derive(Debug, Clone)]
pub struct DetectorClient {
    endpoint: String,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

impl DetectorClient {
    pub fn new(cfg: &DetectorConfig) -> Result<Self> {
        let endpoint = cfg.endpoint.clone().ok_or_else(|| {
            Error::Config(format!(
                "no detector endpoint configured (set {DETECTOR_URL_ENV})"
            ))
        })?;
        Ok(Self {
            endpoint,
            retry: cfg.retry,
            agent: http::agent(&cfg.retry),
        })
    }

    pub fn detect(&self, plan: &FloorPlanRef, png: &[u8]) -> Result<DoorSet> {
        let body = http::post_with_retry(
            &self.agent,
            &self.retry,
            &self.endpoint,
            &[("Content-Type", "image/png".to_string())],
            png,
        )?;
        let manifest: DetectionManifest = serde_json::from_str(&body).map_err(|e| {
            Error::Protocol(format!(
                "detector reply does not match the manifest schema: {e}"
            ))
        })?;
        ingest(&manifest.detections, plan)
    }
}

/// Sends the plan image (read from `image_uri`) to the configured detector.
pub fn fetch_detections(plan: &FloorPlanRef, cfg: &DetectorConfig) -> Result<DoorSet> {
    let client = DetectorClient::new(cfg)?;
    let path = uri_to_path(&plan.image_uri);
    let png = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    client.detect(plan, &png)
}

pub(crate) fn uri_to_path(uri: &str) -> &Path {
    Path::new(uri.strip_prefix("file://").unwrap_or(uri))
}

/// Drops low-confidence doors, suppresses overlapping duplicates (keeping
/// the more confident box, then the lower id) and re-indexes ids densely in
/// the original id order.
pub fn filter_doors(doors: &[DoorBox], cfg: &DetectorConfig) -> Vec<DoorBox> {
    let gated: Vec<DoorBox> = doors
        .iter()
        .filter(|d| d.confidence >= cfg.confidence_threshold)
        .copied()
        .collect();
    let mut kept: Vec<DoorBox> = suppress_overlaps(&gated, cfg.dedup_iou_threshold)
        .into_iter()
        .map(|i| gated[i])
        .collect();
    kept.sort_by_key(|d| d.door_id);
    for (i, d) in kept.iter_mut().enumerate() {
        d.door_id = i as u32;
    }
    kept
}

/// Sorts doors top-to-bottom then left-to-right and renumbers them densely,
/// so equal door sets get equal ids regardless of how they were found.
pub fn canonical_order(mut doors: Vec<DoorBox>) -> Vec<DoorBox> {
    doors.sort_by(|a, b| {
        let key = |d: &DoorBox| (d.bbox.y_min, d.bbox.x_min, d.bbox.y_max, d.bbox.x_max);
        key(a)
            .cmp(&key(b))
            .then(b.confidence.total_cmp(&a.confidence))
    });
    for (i, d) in doors.iter_mut().enumerate() {
        d.door_id = i as u32;
    }
    doors
}
