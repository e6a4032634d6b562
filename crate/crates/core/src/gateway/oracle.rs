//! Offline stand-in for the vision-language model. Answers come from a
//! per-plan ground-truth fixture, optionally corrupted at a seeded rate.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendRequest, QueryKind};
use crate::error::{schema_error, Error, Result};
use crate::model::{ContentDigest, DoorId, FacilityType};
use crate::unionfind::UnionFind;

/// Ground truth for one plan:
/// `{"plan_id", "connection": {facility: {door_id: bool}}, "same_room": [[a, b]], "missing": {facility: n}}`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OracleFixture {
    pub plan_id: String,
    #[serde(default)]
    pub connection: BTreeMap<FacilityType, BTreeMap<DoorId, bool>>,
    #[serde(default)]
    pub same_room: Vec<[DoorId; 2]>,
    #[serde(default)]
    pub missing: BTreeMap<FacilityType, u32>,
}

impl OracleFixture {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| schema_error("oracle fixture", e))
    }

    pub fn connects(&self, facility: FacilityType, door: DoorId) -> bool {
        self.connection
            .get(&facility)
            .and_then(|m| m.get(&door))
            .copied()
            .unwrap_or(false)
    }

    pub fn same_room(&self, a: DoorId, b: DoorId) -> bool {
        self.same_room
            .iter()
            .any(|&[x, y]| (x, y) == (a, b) || (x, y) == (b, a))
    }

    pub fn missing(&self, facility: FacilityType) -> u32 {
        self.missing.get(&facility).copied().unwrap_or(0)
    }

    /// Rooms reachable through connected doors plus the door-less ones.
    pub fn true_count(&self, facility: FacilityType) -> u32 {
        let doors: Vec<DoorId> = self
            .connection
            .get(&facility)
            .map(|m| m.iter().filter(|(_, &c)| c).map(|(&d, _)| d).collect())
            .unwrap_or_default();
        let index: HashMap<DoorId, usize> =
            doors.iter().enumerate().map(|(i, &d)| (d, i)).collect();
        let mut uf = UnionFind::new(doors.len());
        for [a, b] in &self.same_room {
            if let (Some(&i), Some(&j)) = (index.get(a), index.get(b)) {
                uf.union(i, j);
            }
        }
        uf.set_count() as u32 + self.missing(facility)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Probability that a yes/no answer is inverted.
    pub verdict_flip_rate: f64,
    /// Probability that a whole-image count is off by one.
    pub count_error_rate: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            verdict_flip_rate: 0.0,
            count_error_rate: 0.0,
            seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn with_error_rate(rate: f64, seed: u64) -> Self {
        Self {
            verdict_flip_rate: rate,
            count_error_rate: rate,
            seed,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    cfg: OracleConfig,
    fixtures: HashMap<String, OracleFixture>,
}

impl OracleBackend {
    pub fn new(cfg: OracleConfig) -> Result<Self> {
        for (name, rate) in [
            ("verdict_flip_rate", cfg.verdict_flip_rate),
            ("count_error_rate", cfg.count_error_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!(
                    "oracle {name} {rate} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            cfg,
            fixtures: HashMap::new(),
        })
    }

    pub fn add_fixture(&mut self, fixture: OracleFixture) {
        self.fixtures.insert(fixture.plan_id.clone(), fixture);
    }

    pub fn with_fixture(mut self, fixture: OracleFixture) -> Self {
        self.add_fixture(fixture);
        self
    }

    pub fn fixture(&self, plan_id: &str) -> Option<&OracleFixture> {
        self.fixtures.get(plan_id)
    }

    /// Deterministic per-query uniform draw in [0, 1), independent of call
    /// order so concurrent runs corrupt the same queries.
    fn draw(&self, plan_id: &str, kind: &QueryKind, salt: &[u8]) -> f64 {
        let d = ContentDigest::from_parts([
            self.cfg.seed.to_le_bytes().as_slice(),
            plan_id.as_bytes(),
            kind.canonical_json().as_bytes(),
            salt,
        ]);
        let word = u64::from_le_bytes(d.as_bytes()[..8].try_into().unwrap());
        (word >> 11) as f64 / (1u64 << 53) as f64
    }

    fn verdict_text(&self, plan_id: &str, kind: &QueryKind, truth: bool, what: &str) -> String {
        let flipped = self.draw(plan_id, kind, b"flip") < self.cfg.verdict_flip_rate;
        let answer = truth != flipped;
        let word = if answer { "Yes" } else { "No" };
        let not = if answer { "" } else { " not" };
        format!("{word}. Reason: the reference annotation says {what} is{not} the case.")
    }
}

impl Backend for OracleBackend {
    fn name(&self) -> String {
        if self.cfg.verdict_flip_rate == 0.0 && self.cfg.count_error_rate == 0.0 {
            "oracle".to_string()
        } else {
            format!(
                "oracle(flip={},count={},seed={})",
                self.cfg.verdict_flip_rate, self.cfg.count_error_rate, self.cfg.seed
            )
        }
    }

    fn complete(&self, request: &BackendRequest<'_>) -> Result<String> {
        let fixture = self.fixtures.get(request.plan_id).ok_or_else(|| {
            Error::Config(format!("no oracle fixture for plan {:?}", request.plan_id))
        })?;
        let kind = request.kind;
        Ok(match kind {
            QueryKind::Connection { facility, door_id } => self.verdict_text(
                request.plan_id,
                kind,
                fixture.connects(*facility, *door_id),
                &format!("door {door_id} leading to a {facility}"),
            ),
            QueryKind::SameRoom { door_a, door_b, .. } => self.verdict_text(
                request.plan_id,
                kind,
                fixture.same_room(*door_a, *door_b),
                &format!("doors {door_a} and {door_b} sharing a room"),
            ),
            QueryKind::Omission { facility, .. } => {
                let n = fixture.missing(*facility);
                format!("{n}. Reason: the reference annotation lists {n} unmarked {facility} instance(s).")
            }
            QueryKind::WholeImageCount { facility } => {
                let mut n = fixture.true_count(*facility);
                if self.draw(request.plan_id, kind, b"count") < self.cfg.count_error_rate {
                    n = if n == 0 || self.draw(request.plan_id, kind, b"sign") < 0.5 {
                        n + 1
                    } else {
                        n - 1
                    };
                }
                format!("{n}. Reason: estimated from the whole drawing.")
            }
        })
    }
}
