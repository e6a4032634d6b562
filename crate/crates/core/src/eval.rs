//! Dataset manifests, exact-count accuracy, large-image tiling and
//! baseline-versus-pipeline comparison runs.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cot::{
    enumerate_facility, PairStrategy, PipelineConfig, PlanInput, Provenance, RepresentativeRule,
};
use crate::detection::{canonical_order, filter_doors, load_detections, DetectorConfig};
use crate::error::{schema_error, Error, Result};
use crate::gateway::{Gateway, OracleBackend, OracleConfig, OracleFixture, QueryKind};
use crate::model::{
    suppress_overlaps, ContentDigest, DoorBox, FacilityType, FloorPlanRef, PixelBox,
};
use crate::overlay::{encode_png, Canvas};

pub const DEFAULT_TILE_PX: u32 = 1024;
pub const DEFAULT_OVERLAP_PX: u32 = 128;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntry {
    pub plan: FloorPlanRef,
    pub truth: BTreeMap<FacilityType, u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<PathBuf>,
}

/// `{"dataset": .., "plans": [{"plan": {..}, "truth": {..}, "oracle": path, "detections": path}]}`.
/// Relative paths, including `plan.image_uri`, resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub dataset: String,
    pub plans: Vec<PlanEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Self =
            serde_json::from_slice(&bytes).map_err(|e| schema_error("dataset manifest", e))?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for entry in &self.plans {
            entry.plan.validate()?;
            if !ids.insert(entry.plan.plan_id.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate plan_id {:?} in dataset {}",
                    entry.plan.plan_id, self.dataset
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn image_path(&self, entry: &PlanEntry) -> PathBuf {
        self.resolve(crate::detection::uri_to_path(&entry.plan.image_uri))
    }

    /// Zero-error oracle loaded with every plan's fixture.
    pub fn oracle(&self, cfg: OracleConfig) -> Result<OracleBackend> {
        let mut backend = OracleBackend::new(cfg)?;
        for entry in &self.plans {
            let Some(path) = &entry.oracle else {
                return Err(Error::Config(format!(
                    "plan {} has no oracle fixture",
                    entry.plan.plan_id
                )));
            };
            let fixture = OracleFixture::load(&self.resolve(path))?;
            if fixture.plan_id != entry.plan.plan_id {
                return Err(Error::validation(format!(
                    "oracle fixture {} is for plan {:?}",
                    path.display(),
                    fixture.plan_id
                )));
            }
            backend.add_fixture(fixture);
        }
        Ok(backend)
    }
}

/// `n_correct / n_plans`; zero plans is an error.
pub fn accuracy_of(n_correct: usize, n_plans: usize) -> Result<f64> {
    if n_plans == 0 {
        return Err(Error::validation("accuracy over zero plans"));
    }
    if n_correct > n_plans {
        return Err(Error::validation(format!(
            "{n_correct} correct out of {n_plans}"
        )));
    }
    Ok(n_correct as f64 / n_plans as f64)
}

/// Fraction of plans whose predicted count equals the truth exactly.
pub fn accuracy(predictions: &BTreeMap<String, u32>, truth: &BTreeMap<String, u32>) -> Result<f64> {
    let p: BTreeSet<&String> = predictions.keys().collect();
    let t: BTreeSet<&String> = truth.keys().collect();
    if p != t {
        let only_p: Vec<_> = p.difference(&t).collect();
        let only_t: Vec<_> = t.difference(&p).collect();
        return Err(Error::validation(format!(
            "prediction and truth plans differ: predicted only {only_p:?}, truth only {only_t:?}"
        )));
    }
    let correct = predictions.iter().filter(|(k, v)| truth[*k] == **v).count();
    accuracy_of(correct, predictions.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub origin: (u32, u32),
    pub window: PixelBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingPlan {
    pub tile_size_px: u32,
    pub overlap_px: u32,
    pub tiles: Vec<Tile>,
}

fn axis_origins(size: u32, tile: u32, stride: u32) -> Vec<u32> {
    let mut origins = vec![0];
    loop {
        let last = *origins.last().unwrap();
        if last + tile >= size {
            return origins;
        }
        let next = last + stride;
        if next + tile >= size {
            origins.push(size - tile);
            return origins;
        }
        origins.push(next);
    }
}

/// Row-major grid of square tiles; the last row and column are shifted
/// inward to end at the image edge. Images smaller than a tile get a single
/// tile covering them.
pub fn plan_tiles(plan: &FloorPlanRef, tile_size_px: u32, overlap_px: u32) -> Result<TilingPlan> {
    if tile_size_px == 0 || overlap_px >= tile_size_px {
        return Err(Error::validation(format!(
            "tile overlap {overlap_px} must be smaller than tile size {tile_size_px}"
        )));
    }
    let stride = tile_size_px - overlap_px;
    let xs = axis_origins(plan.width_px, tile_size_px, stride);
    let ys = axis_origins(plan.height_px, tile_size_px, stride);
    let mut tiles = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            tiles.push(Tile {
                origin: (x, y),
                window: PixelBox {
                    x_min: x,
                    y_min: y,
                    x_max: (x + tile_size_px).min(plan.width_px),
                    y_max: (y + tile_size_px).min(plan.height_px),
                },
            });
        }
    }
    Ok(TilingPlan {
        tile_size_px,
        overlap_px,
        tiles,
    })
}

/// Moves tile-local detections into plan coordinates, suppresses cross-tile
/// duplicates with `iou >= dedup_iou` (more confident box wins) and returns
/// the doors in canonical order.
pub fn merge_tile_detections(per_tile: &[(Tile, Vec<DoorBox>)], dedup_iou: f64) -> Vec<DoorBox> {
    let mut all = Vec::new();
    for (tile, doors) in per_tile {
        for d in doors {
            all.push(DoorBox {
                door_id: all.len() as u32,
                bbox: d.bbox.translate(tile.origin.0, tile.origin.1),
                confidence: d.confidence,
            });
        }
    }
    let kept = suppress_overlaps(&all, dedup_iou)
        .into_iter()
        .map(|i| all[i])
        .collect();
    canonical_order(kept)
}

/// The pixels under `tile`, PNG-encoded, for sending to a detector.
pub fn tile_png(canvas: &Canvas, tile: &Tile) -> Result<Vec<u8>> {
    let w = tile.window;
    let crop = image::imageops::crop_imm(canvas.image(), w.x_min, w.y_min, w.width(), w.height())
        .to_image();
    encode_png(&crop)
}

/// Runs `detect` on each tile and merges the results.
pub fn detect_tiled(
    tiling: &TilingPlan,
    dedup_iou: f64,
    detect: impl Fn(&Tile) -> Result<Vec<DoorBox>> + Sync,
) -> Result<Vec<DoorBox>> {
    let per_tile = tiling
        .tiles
        .par_iter()
        .map(|t| detect(t).map(|d| (*t, d)))
        .collect::<Result<Vec<_>>>()?;
    Ok(merge_tile_detections(&per_tile, dedup_iou))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// One whole-image count question per facility.
    Baseline,
    /// The three-step door-anchored pipeline.
    Cot,
}

#[derive(Clone)]
pub struct Contender {
    pub label: String,
    pub method: Method,
    pub gateway: Arc<Gateway>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairChoice {
    #[default]
    AllPairs,
    /// Distance gate at the default fraction of each plan's diagonal.
    Gated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub facilities: Vec<FacilityType>,
    pub pairs: PairChoice,
    pub detector: DetectorConfig,
    /// Drop failed plans from the denominator instead of counting them wrong.
    pub exclude_failures: bool,
    pub workers: usize,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            facilities: FacilityType::ALL.to_vec(),
            pairs: PairChoice::AllPairs,
            detector: DetectorConfig::default(),
            exclude_failures: false,
            workers: 4,
        }
    }
}

impl ComparisonConfig {
    pub fn pipeline(&self, facility: FacilityType, plan: &FloorPlanRef) -> PipelineConfig {
        PipelineConfig {
            facility,
            pair_strategy: match self.pairs {
                PairChoice::AllPairs => PairStrategy::AllPairs,
                PairChoice::Gated => PairStrategy::gated_default(plan),
            },
            representative_rule: RepresentativeRule::HighestConfidence,
        }
    }
}

/// A decoded plan with its filtered doors and ground truth.
pub struct PreparedPlan {
    pub input: PlanInput,
    pub truth: BTreeMap<FacilityType, u32>,
}

impl PreparedPlan {
    pub fn new(input: PlanInput, truth: BTreeMap<FacilityType, u32>) -> Self {
        Self { input, truth }
    }
}

/// Reads every plan's image and detection manifest. The image must match
/// the recorded digest and dimensions.
pub fn prepare_plans(
    manifest: &DatasetManifest,
    detector: &DetectorConfig,
) -> Result<Vec<PreparedPlan>> {
    manifest
        .plans
        .par_iter()
        .map(|entry| {
            let path = manifest.image_path(entry);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if ContentDigest::of(&bytes) != entry.plan.image_digest {
                return Err(Error::validation(format!(
                    "image {} does not match the digest recorded for plan {}",
                    path.display(),
                    entry.plan.plan_id
                )));
            }
            let doors = match &entry.detections {
                Some(p) => load_detections(&manifest.resolve(p), &entry.plan)?.doors,
                None => {
                    return Err(Error::Config(format!(
                        "plan {} has no detection manifest",
                        entry.plan.plan_id
                    )))
                }
            };
            let doors = filter_doors(&doors, detector);
            let input = PlanInput::new(entry.plan.clone(), &bytes, doors)?;
            Ok(PreparedPlan::new(input, entry.truth.clone()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub plan_id: String,
    pub facility: FacilityType,
    pub backend: String,
    pub truth: u32,
    pub predicted: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PlanOutcome {
    pub fn correct(&self) -> bool {
        self.predicted == Some(self.truth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub dataset: String,
    pub facility: FacilityType,
    pub backend: String,
    pub n_plans: usize,
    pub n_correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub dataset: String,
    pub rows: Vec<AccuracyRow>,
    pub outcomes: Vec<PlanOutcome>,
    pub provenance: Vec<Provenance>,
}

impl ComparisonReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "dataset",
            "facility",
            "backend",
            "n_plans",
            "n_correct",
            "accuracy",
        ])
        .map_err(|e| Error::Protocol(e.to_string()))?;
        for r in &self.rows {
            w.write_record([
                r.dataset.clone(),
                r.facility.to_string(),
                r.backend.clone(),
                r.n_plans.to_string(),
                r.n_correct.to_string(),
                format!("{:.4}", r.accuracy),
            ])
            .map_err(|e| Error::Protocol(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Protocol(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    /// Dataset and facility rows, one percentage column per backend.
    pub fn to_table(&self) -> String {
        let backends: Vec<&str> = {
            let mut seen = Vec::new();
            for r in &self.rows {
                if !seen.contains(&r.backend.as_str()) {
                    seen.push(r.backend.as_str());
                }
            }
            seen
        };
        let col = backends.iter().map(|b| b.len()).max().unwrap_or(0).max(8);
        let mut out = String::new();
        let _ = write!(out, "{:<20}  {:<18}", "dataset", "facility");
        for b in &backends {
            let _ = write!(out, "  {b:>col$}");
        }
        out.push('\n');
        let mut keys: Vec<(&str, FacilityType)> = Vec::new();
        for r in &self.rows {
            if !keys.contains(&(r.dataset.as_str(), r.facility)) {
                keys.push((r.dataset.as_str(), r.facility));
            }
        }
        for (dataset, facility) in keys {
            let _ = write!(out, "{dataset:<20}  {:<18}", facility.as_str());
            for b in &backends {
                let cell = self
                    .rows
                    .iter()
                    .find(|r| r.dataset == dataset && r.facility == facility && r.backend == *b)
                    .map(|r| format!("{:.2}%", r.accuracy * 100.0))
                    .unwrap_or_else(|| "-".into());
                let _ = write!(out, "  {cell:>col$}");
            }
            out.push('\n');
        }
        out
    }

    /// Accuracy of `backend` on `facility`, if that row exists.
    pub fn accuracy(&self, backend: &str, facility: FacilityType) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.backend == backend && r.facility == facility)
            .map(|r| r.accuracy)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PlanOutcome> {
        self.outcomes.iter().filter(|o| o.error.is_some())
    }
}

fn baseline_count(
    prepared: &PreparedPlan,
    gateway: &Gateway,
    facility: FacilityType,
) -> Result<u32> {
    let input = &prepared.input;
    let image = input.overlay(&[])?;
    let kind = QueryKind::WholeImageCount { facility };
    gateway
        .ask(&input.plan, &kind, &input.doors, &image)?
        .answer
        .count()
}

/// Scores every contender on every plan and facility. Plans run on a pool
/// of `cfg.workers` threads; rows and outcomes come back in a fixed order.
pub fn compare_prepared(
    dataset: &str,
    plans: &[PreparedPlan],
    contenders: &[Contender],
    cfg: &ComparisonConfig,
) -> Result<ComparisonReport> {
    if plans.is_empty() {
        return Err(Error::validation(format!("dataset {dataset} has no plans")));
    }
    if contenders.is_empty() {
        return Err(Error::validation("no backends to compare"));
    }
    for p in plans {
        for f in &cfg.facilities {
            if !p.truth.contains_key(f) {
                return Err(Error::validation(format!(
                    "plan {} has no ground truth for {f}",
                    p.input.plan.plan_id
                )));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;

    type PlanResults = Vec<(PlanOutcome, Option<Provenance>)>;
    let per_plan: Vec<PlanResults> = pool.install(|| {
        plans
            .par_iter()
            .map(|p| {
                let mut out = Vec::new();
                for c in contenders {
                    for &facility in &cfg.facilities {
                        let (predicted, provenance) = match c.method {
                            Method::Baseline => (baseline_count(p, &c.gateway, facility), None),
                            Method::Cot => {
                                let pc = cfg.pipeline(facility, &p.input.plan);
                                match enumerate_facility(&p.input, &c.gateway, &pc) {
                                    Ok(run) => (Ok(run.result.n_final()), Some(run.provenance)),
                                    Err(e) => (Err(e), None),
                                }
                            }
                        };
                        if let Err(e) = &predicted {
                            log::warn!("{} {} {}: {e}", p.input.plan.plan_id, facility, c.label);
                        }
                        out.push((
                            PlanOutcome {
                                plan_id: p.input.plan.plan_id.clone(),
                                facility,
                                backend: c.label.clone(),
                                truth: p.truth[&facility],
                                predicted: predicted.as_ref().ok().copied(),
                                error: predicted.err().map(|e| e.to_string()),
                            },
                            provenance,
                        ));
                    }
                }
                out
            })
            .collect()
    });

    let mut outcomes = Vec::new();
    let mut provenance = Vec::new();
    for (o, p) in per_plan.into_iter().flatten() {
        outcomes.push(o);
        provenance.extend(p);
    }
    let mut rows = Vec::new();
    for c in contenders {
        for &facility in &cfg.facilities {
            let mine: Vec<&PlanOutcome> = outcomes
                .iter()
                .filter(|o| o.backend == c.label && o.facility == facility)
                .collect();
            let counted: Vec<&&PlanOutcome> = mine
                .iter()
                .filter(|o| !cfg.exclude_failures || o.error.is_none())
                .collect();
            let n_correct = counted.iter().filter(|o| o.correct()).count();
            let n_plans = counted.len();
            rows.push(AccuracyRow {
                dataset: dataset.to_string(),
                facility,
                backend: c.label.clone(),
                n_plans,
                n_correct,
                accuracy: if n_plans == 0 {
                    0.0
                } else {
                    accuracy_of(n_correct, n_plans)?
                },
            });
        }
    }
    Ok(ComparisonReport {
        dataset: dataset.to_string(),
        rows,
        outcomes,
        provenance,
    })
}

/// Loads a manifest's plans and compares `contenders` on them.
pub fn run_comparison(
    manifest: &DatasetManifest,
    contenders: &[Contender],
    cfg: &ComparisonConfig,
) -> Result<ComparisonReport> {
    if manifest.plans.is_empty() {
        return Err(Error::validation(format!(
            "dataset {} has no plans",
            manifest.dataset
        )));
    }
    let plans = prepare_plans(manifest, &cfg.detector)?;
    compare_prepared(&manifest.dataset, &plans, contenders, cfg)
}
