//! The three-step enumeration for one facility type on one plan:
//!
//! 1. ask, door by door, whether the door leads to the facility;
//! 2. ask, pair by pair, whether two connected doors share a room, and keep
//!    one representative door per connected component of "yes" answers;
//! 3. highlight the representatives and ask how many instances remain
//!    unmarked.
//!
//! The final count is the number of representatives plus that last answer.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::gateway::{CacheKey, Gateway, QueryKind};
use crate::model::{DoorBox, DoorId, EnumerationResult, FacilityType, FloorPlanRef, Verdict};
use crate::overlay::{BoxRole, Canvas, OverlaySpec, RenderedImage};
use crate::unionfind::UnionFind;

/// Fraction of the image diagonal used as the default gating radius.
pub const DEFAULT_GATE_FRACTION: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case")]
pub enum PairStrategy {
    AllPairs,
    /// Only pairs whose box centres are within `radius_px`.
    DistanceGated {
        radius_px: f64,
    },
}

impl PairStrategy {
    pub fn gated_default(plan: &FloorPlanRef) -> Self {
        PairStrategy::DistanceGated {
            radius_px: DEFAULT_GATE_FRACTION * plan.diagonal(),
        }
    }

    fn admits(&self, a: &DoorBox, b: &DoorBox) -> bool {
        match self {
            PairStrategy::AllPairs => true,
            PairStrategy::DistanceGated { radius_px } => {
                let (ax, ay) = a.bbox.center();
                let (bx, by) = b.bbox.center();
                (ax - bx).hypot(ay - by) <= *radius_px
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepresentativeRule {
    /// Highest detector confidence, then lowest door id.
    #[default]
    HighestConfidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub facility: FacilityType,
    pub pair_strategy: PairStrategy,
    pub representative_rule: RepresentativeRule,
}

impl PipelineConfig {
    pub fn new(facility: FacilityType) -> Self {
        Self {
            facility,
            pair_strategy: PairStrategy::AllPairs,
            representative_rule: RepresentativeRule::HighestConfidence,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let PairStrategy::DistanceGated { radius_px } = self.pair_strategy {
            if radius_px.is_nan() || radius_px <= 0.0 {
                return Err(Error::Config(format!(
                    "gating radius {radius_px} must be positive"
                )));
            }
        }
        Ok(())
    }
}

/// A plan ready for querying: reference, decoded raster and door set.
/// Overlays are rendered once per distinct spec and reused across stages
/// and facility types.
pub struct PlanInput {
    pub plan: FloorPlanRef,
    pub doors: Vec<DoorBox>,
    canvas: Canvas,
    overlays: Mutex<HashMap<Vec<(crate::model::PixelBox, BoxRole)>, RenderedImage>>,
}

impl PlanInput {
    pub fn new(plan: FloorPlanRef, image: &[u8], doors: Vec<DoorBox>) -> Result<Self> {
        Self::with_canvas(plan, Canvas::decode(image)?, doors)
    }

    pub fn with_canvas(plan: FloorPlanRef, canvas: Canvas, doors: Vec<DoorBox>) -> Result<Self> {
        plan.validate()?;
        if canvas.dimensions() != (plan.width_px, plan.height_px) {
            return Err(Error::validation(format!(
                "plan {} declares {}x{} but the image is {:?}",
                plan.plan_id,
                plan.width_px,
                plan.height_px,
                canvas.dimensions()
            )));
        }
        let bounds = plan.bounds();
        let mut seen = std::collections::HashSet::new();
        for d in &doors {
            if !seen.insert(d.door_id) {
                return Err(Error::validation(format!(
                    "duplicate door id {}",
                    d.door_id
                )));
            }
            if !bounds.contains(&d.bbox) {
                return Err(Error::validation(format!(
                    "door {} box {} outside plan bounds",
                    d.door_id, d.bbox
                )));
            }
        }
        Ok(Self {
            plan,
            doors,
            canvas,
            overlays: Mutex::new(HashMap::new()),
        })
    }

    pub fn door(&self, id: DoorId) -> Option<&DoorBox> {
        self.doors.iter().find(|d| d.door_id == id)
    }

    fn door_or_err(&self, id: DoorId) -> Result<&DoorBox> {
        self.door(id).ok_or_else(|| {
            Error::validation(format!("unknown door {id} on plan {}", self.plan.plan_id))
        })
    }

    /// The plan with `boxes` drawn in red.
    pub fn overlay(&self, boxes: &[(DoorId, BoxRole)]) -> Result<RenderedImage> {
        let mut spec = OverlaySpec::for_image(self.plan.width_px, self.plan.height_px);
        for &(id, role) in boxes {
            spec = spec.with_box(self.door_or_err(id)?.bbox, role);
        }
        if let Some(hit) = self.overlays.lock().unwrap().get(&spec.boxes) {
            return Ok(hit.clone());
        }
        let rendered = self.canvas.render(&spec)?;
        self.overlays
            .lock()
            .unwrap()
            .entry(spec.boxes)
            .or_insert(rendered.clone());
        Ok(rendered)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub door_id: DoorId,
    pub verdict: Verdict,
    pub cache_key: CacheKey,
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub doors: [DoorId; 2],
    pub verdict: Verdict,
    pub cache_key: CacheKey,
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub doors: Vec<DoorId>,
    pub representative: DoorId,
}

/// Doors known to lead to the facility, joined by same-room "yes" answers.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConsolidationGraph {
    pub nodes: Vec<DoorId>,
    pub yes_edges: Vec<[DoorId; 2]>,
}

impl ConsolidationGraph {
    pub fn new(nodes: Vec<DoorId>) -> Self {
        Self {
            nodes,
            yes_edges: Vec::new(),
        }
    }

    pub fn add_edge(&mut self, a: DoorId, b: DoorId) -> Result<()> {
        if a == b || !self.nodes.contains(&a) || !self.nodes.contains(&b) {
            return Err(Error::validation(format!(
                "invalid consolidation edge ({a}, {b})"
            )));
        }
        self.yes_edges.push([a.min(b), a.max(b)]);
        Ok(())
    }

    /// Connected components over the yes-edges, each sorted ascending,
    /// ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<DoorId>> {
        let mut nodes = self.nodes.clone();
        nodes.sort_unstable();
        let index: HashMap<DoorId, usize> =
            nodes.iter().enumerate().map(|(i, &d)| (d, i)).collect();
        let mut uf = UnionFind::new(nodes.len());
        for [a, b] in &self.yes_edges {
            uf.union(index[a], index[b]);
        }
        uf.groups()
            .into_iter()
            .map(|g| g.into_iter().map(|i| nodes[i]).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsolidationRecord {
    pub queries: Vec<PairRecord>,
    pub graph: ConsolidationGraph,
    pub components: Vec<ComponentRecord>,
    /// "No" answers between doors that ended up in one component anyway.
    pub inconsistencies: Vec<[DoorId; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OmissionRecord {
    pub marked_doors: Vec<DoorId>,
    pub n_missing: u32,
    pub cache_key: CacheKey,
    pub raw_text: String,
}

/// Audit trail for one (plan, facility) run. Contains nothing time- or
/// run-dependent, so equal inputs serialize to equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub plan_id: String,
    pub facility: FacilityType,
    pub image_digest: crate::model::ContentDigest,
    pub backend: String,
    pub template_version: String,
    pub config: PipelineConfig,
    pub door_set_size: usize,
    pub connection: Vec<VerdictRecord>,
    pub consolidation: ConsolidationRecord,
    pub omission: OmissionRecord,
    pub result: EnumerationResult,
}

impl Provenance {
    /// Re-checks the count chain `0 <= M <= |D_T| <= N`, `n_final = M + n_missing`
    /// and that every recorded step agrees with the result.
    pub fn validate(&self) -> Result<()> {
        let r = &self.result;
        let connected: Vec<DoorId> = self
            .connection
            .iter()
            .filter(|v| v.verdict.is_yes())
            .map(|v| v.door_id)
            .collect();
        let m = r.representatives().len();
        let checks = [
            (r.door_set_size() == self.door_set_size, "door set size"),
            (
                self.connection.len() == self.door_set_size,
                "one connection query per door",
            ),
            (
                connected == r.connected_doors(),
                "connected doors match verdicts",
            ),
            (m <= connected.len(), "M <= |D_T|"),
            (connected.len() <= self.door_set_size, "|D_T| <= N"),
            (
                m == self.consolidation.components.len(),
                "one representative per component",
            ),
            (
                r.n_final() as usize == m + r.n_missing() as usize,
                "n_final = M + n_missing",
            ),
            (
                self.omission.n_missing == r.n_missing(),
                "omission answer recorded",
            ),
            (
                self.omission.marked_doors == r.representatives(),
                "omission marks representatives",
            ),
        ];
        for (ok, what) in checks {
            if !ok {
                return Err(Error::validation(format!(
                    "provenance for {}/{} violates: {what}",
                    self.plan_id, self.facility
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub connection: Duration,
    pub consolidation: Duration,
    pub omission: Duration,
    pub queries: usize,
    pub cache_hits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationRun {
    pub result: EnumerationResult,
    pub provenance: Provenance,
    pub timings: StageTimings,
}

fn stage_err(cfg: &PipelineConfig, stage: Stage, context: String) -> impl FnOnce(Error) -> Error {
    let facility = cfg.facility;
    move |source| Error::Stage {
        facility,
        stage,
        context,
        source: Box::new(source),
    }
}

pub struct Stage1 {
    pub connected: Vec<DoorId>,
    pub records: Vec<VerdictRecord>,
    cache_hits: usize,
}

/// One connection query per door, with that door boxed in red.
pub fn stage1_connection(
    input: &PlanInput,
    gateway: &Gateway,
    cfg: &PipelineConfig,
) -> Result<Stage1> {
    let mut doors: Vec<&DoorBox> = input.doors.iter().collect();
    doors.sort_by_key(|d| d.door_id);
    let answers: Vec<(VerdictRecord, bool)> = doors
        .par_iter()
        .map(|door| {
            let ask = || -> Result<(VerdictRecord, bool)> {
                let image = input.overlay(&[(door.door_id, BoxRole::Queried)])?;
                let kind = QueryKind::Connection {
                    facility: cfg.facility,
                    door_id: door.door_id,
                };
                let asked = gateway.ask(&input.plan, &kind, &input.doors, &image)?;
                Ok((
                    VerdictRecord {
                        door_id: door.door_id,
                        verdict: asked.answer.verdict()?,
                        cache_key: asked.key,
                        raw_text: asked.answer.raw_text,
                    },
                    asked.cached,
                ))
            };
            ask().map_err(stage_err(
                cfg,
                Stage::Connection,
                format!("door {}", door.door_id),
            ))
        })
        .collect::<Result<_>>()?;
    let cache_hits = answers.iter().filter(|(_, hit)| *hit).count();
    let records: Vec<VerdictRecord> = answers.into_iter().map(|(r, _)| r).collect();
    let connected = records
        .iter()
        .filter(|r| r.verdict.is_yes())
        .map(|r| r.door_id)
        .collect();
    Ok(Stage1 {
        connected,
        records,
        cache_hits,
    })
}

/// Highest confidence wins, ties to the lowest id.
fn pick_representative(input: &PlanInput, component: &[DoorId]) -> Result<DoorId> {
    let mut best: Option<&DoorBox> = None;
    for &id in component {
        let d = input.door_or_err(id)?;
        best = match best {
            Some(b) if b.confidence > d.confidence => Some(b),
            Some(b) if b.confidence == d.confidence && b.door_id < d.door_id => Some(b),
            _ => Some(d),
        };
    }
    best.map(|d| d.door_id)
        .ok_or_else(|| Error::validation("empty component"))
}

pub struct Stage2 {
    pub representatives: Vec<DoorId>,
    pub record: ConsolidationRecord,
    cache_hits: usize,
}

/// Pairwise same-room queries over `connected`, then one representative per
/// connected component of yes-answers. "No" answers never split a component.
pub fn stage2_consolidate(
    connected: &[DoorId],
    input: &PlanInput,
    gateway: &Gateway,
    cfg: &PipelineConfig,
) -> Result<Stage2> {
    let mut nodes = connected.to_vec();
    nodes.sort_unstable();
    if nodes.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::validation("connected door list has duplicates"));
    }
    let mut pairs = Vec::new();
    for (i, &a) in nodes.iter().enumerate() {
        for &b in &nodes[i + 1..] {
            if cfg
                .pair_strategy
                .admits(input.door_or_err(a)?, input.door_or_err(b)?)
            {
                pairs.push((a, b));
            }
        }
    }
    let answers: Vec<(PairRecord, bool)> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let ask = || -> Result<(PairRecord, bool)> {
                let image = input.overlay(&[(a, BoxRole::Queried), (b, BoxRole::Queried)])?;
                let kind = QueryKind::same_room(cfg.facility, a, b)?;
                let asked = gateway.ask(&input.plan, &kind, &input.doors, &image)?;
                Ok((
                    PairRecord {
                        doors: [a, b],
                        verdict: asked.answer.verdict()?,
                        cache_key: asked.key,
                        raw_text: asked.answer.raw_text,
                    },
                    asked.cached,
                ))
            };
            ask().map_err(stage_err(
                cfg,
                Stage::Consolidation,
                format!("doors {a} and {b}"),
            ))
        })
        .collect::<Result<_>>()?;
    let cache_hits = answers.iter().filter(|(_, hit)| *hit).count();
    let queries: Vec<PairRecord> = answers.into_iter().map(|(r, _)| r).collect();

    let mut graph = ConsolidationGraph::new(nodes);
    for q in queries.iter().filter(|q| q.verdict.is_yes()) {
        graph.add_edge(q.doors[0], q.doors[1])?;
    }
    let groups = graph.components();
    let group_of: HashMap<DoorId, usize> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, members)| members.iter().map(move |&d| (d, g)))
        .collect();
    let inconsistencies: Vec<[DoorId; 2]> = queries
        .iter()
        .filter(|q| !q.verdict.is_yes() && group_of[&q.doors[0]] == group_of[&q.doors[1]])
        .map(|q| q.doors)
        .collect();
    if !inconsistencies.is_empty() {
        log::warn!(
            "{}/{}: {} same-room answers contradict transitive grouping",
            input.plan.plan_id,
            cfg.facility,
            inconsistencies.len()
        );
    }

    let components = groups
        .into_iter()
        .map(|doors| {
            Ok(ComponentRecord {
                representative: pick_representative(input, &doors)?,
                doors,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut representatives: Vec<DoorId> = components.iter().map(|c| c.representative).collect();
    representatives.sort_unstable();
    Ok(Stage2 {
        representatives,
        record: ConsolidationRecord {
            queries,
            graph,
            components,
            inconsistencies,
        },
        cache_hits,
    })
}

pub struct Stage3 {
    pub record: OmissionRecord,
    cached: bool,
}

/// Highlights every representative and asks for the unmarked remainder.
pub fn stage3_omission(
    representatives: &[DoorId],
    input: &PlanInput,
    gateway: &Gateway,
    cfg: &PipelineConfig,
) -> Result<Stage3> {
    let ask = || -> Result<Stage3> {
        let kind = QueryKind::omission(cfg.facility, representatives.to_vec())?;
        let QueryKind::Omission { marked_doors, .. } = &kind else {
            unreachable!()
        };
        let boxes: Vec<(DoorId, BoxRole)> = marked_doors
            .iter()
            .map(|&d| (d, BoxRole::Retained))
            .collect();
        let image = input.overlay(&boxes)?;
        let asked = gateway.ask(&input.plan, &kind, &input.doors, &image)?;
        Ok(Stage3 {
            record: OmissionRecord {
                marked_doors: marked_doors.clone(),
                n_missing: asked.answer.count()?,
                cache_key: asked.key,
                raw_text: asked.answer.raw_text,
            },
            cached: asked.cached,
        })
    };
    ask().map_err(stage_err(
        cfg,
        Stage::Omission,
        format!("{} marked doors", representatives.len()),
    ))
}

/// Runs all three steps for one facility type.
pub fn enumerate_facility(
    input: &PlanInput,
    gateway: &Gateway,
    cfg: &PipelineConfig,
) -> Result<EnumerationRun> {
    cfg.validate()?;
    let t0 = Instant::now();
    let s1 = stage1_connection(input, gateway, cfg)?;
    let t1 = Instant::now();
    let s2 = stage2_consolidate(&s1.connected, input, gateway, cfg)?;
    let t2 = Instant::now();
    let s3 = stage3_omission(&s2.representatives, input, gateway, cfg)?;
    let t3 = Instant::now();

    let result = EnumerationResult::new(
        input.plan.plan_id.clone(),
        cfg.facility,
        input.doors.len(),
        s1.connected.clone(),
        s2.representatives.clone(),
        s3.record.n_missing,
    )?;
    let provenance = Provenance {
        plan_id: input.plan.plan_id.clone(),
        facility: cfg.facility,
        image_digest: input.plan.image_digest,
        backend: gateway.backend_name().to_string(),
        template_version: gateway.templates().version().to_string(),
        config: *cfg,
        door_set_size: input.doors.len(),
        connection: s1.records,
        consolidation: s2.record,
        omission: s3.record,
        result: result.clone(),
    };
    provenance.validate()?;
    let timings = StageTimings {
        connection: t1 - t0,
        consolidation: t2 - t1,
        omission: t3 - t2,
        queries: provenance.connection.len() + provenance.consolidation.queries.len() + 1,
        cache_hits: s1.cache_hits + s2.cache_hits + usize::from(s3.cached),
    };
    Ok(EnumerationRun {
        result,
        provenance,
        timings,
    })
}

/// Enumerates each facility independently; a failure in one leaves the
/// others untouched.
pub fn enumerate_plan(
    input: &PlanInput,
    gateway: &Gateway,
    configs: &[PipelineConfig],
) -> BTreeMap<FacilityType, Result<EnumerationRun>> {
    configs
        .iter()
        .map(|cfg| (cfg.facility, enumerate_facility(input, gateway, cfg)))
        .collect()
}

/// Connected components by breadth-first search; an independent check on
/// [`ConsolidationGraph::components`].
pub fn bfs_components(nodes: &[DoorId], edges: &[[DoorId; 2]]) -> Vec<Vec<DoorId>> {
    let mut sorted = nodes.to_vec();
    sorted.sort_unstable();
    let mut adjacency: BTreeMap<DoorId, Vec<DoorId>> =
        sorted.iter().map(|&n| (n, Vec::new())).collect();
    for &[a, b] in edges {
        adjacency.get_mut(&a).unwrap().push(b);
        adjacency.get_mut(&b).unwrap().push(a);
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for &start in &sorted {
        if !seen.insert(start) {
            continue;
        }
        let mut component = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            for &m in &adjacency[&n] {
                if seen.insert(m) {
                    component.push(m);
                    queue.push_back(m);
                }
            }
        }
        component.sort_unstable();
        out.push(component);
    }
    out
}
