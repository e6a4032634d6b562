//! Seeded synthetic floor plans: rectangular rooms on a grid, door marks on
//! room walls, per-type glyphs, plus the matching oracle fixture and
//! ground truth.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detection::{canonical_order, DetectionManifest};
use crate::error::{schema_error, Error, Result};
use crate::eval::{DatasetManifest, PlanEntry, Tile};
use crate::gateway::OracleFixture;
use crate::model::{ContentDigest, DoorBox, DoorId, FacilityType, FloorPlanRef, PixelBox};
use crate::overlay::encode_png;

/// Smallest grid cell a room is drawn in.
pub const MIN_CELL_PX: u32 = 48;

const WALL: Rgb<u8> = Rgb([40, 40, 40]);
const DOOR: Rgb<u8> = Rgb([30, 60, 170]);
const GLYPH: Rgb<u8> = Rgb([90, 90, 90]);
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DoorsPerRoom {
    /// Exactly this many rooms of each type get a second door.
    Exact {
        two_door_rooms: BTreeMap<FacilityType, u32>,
    },
    /// Each room independently gets a second door with this probability.
    Random { two_door_probability: f64 },
}

impl Default for DoorsPerRoom {
    fn default() -> Self {
        DoorsPerRoom::Random {
            two_door_probability: 0.0,
        }
    }
}

fn default_size() -> [u32; 2] {
    [512, 512]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_id: Option<String>,
    /// Width and height in pixels.
    #[serde(default = "default_size")]
    pub image_size: [u32; 2],
    /// Rooms reached through at least one door.
    #[serde(default)]
    pub rooms: BTreeMap<FacilityType, u32>,
    #[serde(default)]
    pub doors_per_room: DoorsPerRoom,
    /// Rooms with no door, found only by the omission question.
    #[serde(default)]
    pub doorless_rooms: BTreeMap<FacilityType, u32>,
    /// Doors into rooms of no target type.
    #[serde(default)]
    pub decoy_doors: u32,
}

impl ScenarioSpec {
    pub fn empty(seed: u64) -> Self {
        Self {
            seed,
            plan_id: None,
            image_size: default_size(),
            rooms: BTreeMap::new(),
            doors_per_room: DoorsPerRoom::default(),
            doorless_rooms: BTreeMap::new(),
            decoy_doors: 0,
        }
    }

    /// A mixed scenario with exactly `total_doors` doors spread over random
    /// facility types, some two-door rooms, decoys and doorless rooms.
    pub fn random(seed: u64, total_doors: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
        let mut spec = Self::empty(seed);
        let mut two = BTreeMap::<FacilityType, u32>::new();
        let mut left = total_doors;
        while left > 0 {
            if rng.random_bool(0.2) {
                spec.decoy_doors += 1;
                left -= 1;
                continue;
            }
            let f = FacilityType::ALL[rng.random_range(0..FacilityType::ALL.len())];
            *spec.rooms.entry(f).or_default() += 1;
            left -= 1;
            if left > 0 && rng.random_bool(0.3) {
                *two.entry(f).or_default() += 1;
                left -= 1;
            }
        }
        for _ in 0..rng.random_range(0..=2) {
            let f = FacilityType::ALL[rng.random_range(0..FacilityType::ALL.len())];
            *spec.doorless_rooms.entry(f).or_default() += 1;
        }
        spec.doors_per_room = DoorsPerRoom::Exact {
            two_door_rooms: two,
        };
        spec
    }

    pub fn plan_id(&self) -> String {
        self.plan_id
            .clone()
            .unwrap_or_else(|| format!("synth-{}", self.seed))
    }

    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.image_size;
        if w == 0 || h == 0 {
            return Err(Error::validation(format!(
                "image size {w}x{h} must be positive"
            )));
        }
        match &self.doors_per_room {
            DoorsPerRoom::Random {
                two_door_probability: p,
            } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::validation(format!(
                        "two_door_probability {p} outside [0, 1]"
                    )));
                }
            }
            DoorsPerRoom::Exact { two_door_rooms } => {
                for (f, n) in two_door_rooms {
                    let rooms = self.rooms.get(f).copied().unwrap_or(0);
                    if *n > rooms {
                        return Err(Error::validation(format!(
                            "{n} two-door {f} rooms but only {rooms} {f} rooms"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One room of the generated layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomLayout {
    pub rect: PixelBox,
    /// `None` for decoy rooms.
    pub facility: Option<FacilityType>,
    pub doors: Vec<DoorId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub plan: FloorPlanRef,
    pub png: Vec<u8>,
    pub doors: Vec<DoorBox>,
    pub rooms: Vec<RoomLayout>,
    pub fixture: OracleFixture,
    pub truth: BTreeMap<FacilityType, u32>,
}

struct PendingRoom {
    facility: Option<FacilityType>,
    n_doors: u32,
}

fn grid_for(n: u32, w: u32, h: u32) -> (u32, u32) {
    let aspect = w as f64 / h as f64;
    let cols = ((n as f64 * aspect).sqrt().ceil() as u32).clamp(1, n.max(1));
    let rows = n.div_ceil(cols).max(1);
    (cols, rows)
}

/// Builds the scenario described by `spec`. Equal specs give byte-identical
/// output.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let [w, h] = spec.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut pending = Vec::new();
    for f in FacilityType::ALL {
        let n = spec.rooms.get(&f).copied().unwrap_or(0);
        let mut doubles = match &spec.doors_per_room {
            DoorsPerRoom::Exact { two_door_rooms } => two_door_rooms.get(&f).copied().unwrap_or(0),
            DoorsPerRoom::Random {
                two_door_probability,
            } => (0..n)
                .filter(|_| rng.random_bool(*two_door_probability))
                .count() as u32,
        };
        for _ in 0..n {
            let n_doors = if doubles > 0 { 2 } else { 1 };
            doubles = doubles.saturating_sub(1);
            pending.push(PendingRoom {
                facility: Some(f),
                n_doors,
            });
        }
        for _ in 0..spec.doorless_rooms.get(&f).copied().unwrap_or(0) {
            pending.push(PendingRoom {
                facility: Some(f),
                n_doors: 0,
            });
        }
    }
    for _ in 0..spec.decoy_doors {
        pending.push(PendingRoom {
            facility: None,
            n_doors: 1,
        });
    }

    let n = pending.len() as u32;
    let (cols, rows) = grid_for(n, w, h);
    let (cw, ch) = (w / cols, h / rows);
    if n > 0 && (cw < MIN_CELL_PX || ch < MIN_CELL_PX) {
        return Err(Error::Generation(format!(
            "{n} rooms do not fit a {w}x{h} image (cells of {cw}x{ch} px, need {MIN_CELL_PX}); use a larger image_size"
        )));
    }
    let mut cells: Vec<u32> = (0..cols * rows).collect();
    cells.shuffle(&mut rng);

    let door_px = (cw.min(ch) / 6).clamp(8, 20);
    let min_margin = door_px / 2 + 2;
    let max_margin = (cw.min(ch) / 6).max(min_margin);

    let mut img = RgbImage::from_pixel(w, h, BACKGROUND);
    // temporary ids index `raw_doors`; canonical ids are assigned afterwards
    let mut raw_doors: Vec<DoorBox> = Vec::new();
    let mut rooms = Vec::new();
    for (room, &cell) in pending.iter().zip(&cells) {
        let (cx, cy) = ((cell % cols) * cw, (cell / cols) * ch);
        let mut margin = || rng.random_range(min_margin..=max_margin);
        let rect = PixelBox::new(
            cx + margin(),
            cy + margin(),
            cx + cw - margin(),
            cy + ch - margin(),
        )?;
        outline(&mut img, &rect, 2, WALL);
        if let Some(f) = room.facility {
            glyph(&mut img, &rect, f);
        } else {
            furniture(&mut img, &rect);
        }
        let mut ids = Vec::new();
        for k in 0..room.n_doors {
            let bbox = if k == 0 {
                let x = rng.random_range(rect.x_min + 3..=rect.x_max - 2 * door_px - 3);
                PixelBox::new(
                    x,
                    rect.y_max - door_px / 2,
                    x + door_px,
                    rect.y_max - door_px / 2 + door_px,
                )?
            } else {
                let y = rng.random_range(rect.y_min + 3..=rect.y_max - door_px - 3);
                PixelBox::new(
                    rect.x_max - door_px / 2,
                    y,
                    rect.x_max - door_px / 2 + door_px,
                    y + door_px,
                )?
            };
            draw_door(&mut img, &bbox, k == 0);
            let confidence = rng.random_range(60..=99) as f64 / 100.0;
            ids.push(raw_doors.len() as DoorId);
            raw_doors.push(DoorBox::new(raw_doors.len() as DoorId, bbox, confidence)?);
        }
        rooms.push(RoomLayout {
            rect,
            facility: room.facility,
            doors: ids,
        });
    }

    let ordered = canonical_order(raw_doors.clone());
    let remap: BTreeMap<DoorId, DoorId> = raw_doors
        .iter()
        .map(|d| {
            let new = ordered
                .iter()
                .find(|o| o.bbox == d.bbox)
                .expect("door kept")
                .door_id;
            (d.door_id, new)
        })
        .collect();
    for r in &mut rooms {
        for id in &mut r.doors {
            *id = remap[id];
        }
        r.doors.sort_unstable();
    }

    let png = encode_png(&img)?;
    let plan_id = spec.plan_id();
    let plan = FloorPlanRef::new(
        plan_id.clone(),
        ContentDigest::of(&png),
        w,
        h,
        format!("{plan_id}.png"),
    )?;

    let mut fixture = OracleFixture {
        plan_id,
        ..Default::default()
    };
    let mut truth = BTreeMap::new();
    for f in FacilityType::ALL {
        let mut verdicts = BTreeMap::new();
        for d in &ordered {
            verdicts.insert(d.door_id, false);
        }
        let mut count = 0;
        let mut missing = 0;
        for r in rooms.iter().filter(|r| r.facility == Some(f)) {
            count += 1;
            if r.doors.is_empty() {
                missing += 1;
            }
            for d in &r.doors {
                verdicts.insert(*d, true);
            }
        }
        if !verdicts.is_empty() {
            fixture.connection.insert(f, verdicts);
        }
        if missing > 0 {
            fixture.missing.insert(f, missing);
        }
        truth.insert(f, count);
    }
    for r in &rooms {
        for (i, &a) in r.doors.iter().enumerate() {
            for &b in &r.doors[i + 1..] {
                fixture.same_room.push([a, b]);
            }
        }
    }
    fixture.same_room.sort_unstable();

    Ok(Scenario {
        spec: spec.clone(),
        plan,
        png,
        doors: ordered,
        rooms,
        fixture,
        truth,
    })
}

/// What a detector run on `tile` alone would report: doors with at least
/// `min_visible` of their area inside the tile, clipped to it, in tile-local
/// coordinates, with confidence scaled by the visible fraction.
pub fn detect_in_tile(doors: &[DoorBox], tile: &Tile, min_visible: f64) -> Vec<DoorBox> {
    let mut out = Vec::new();
    for d in doors {
        let Some(clipped) = d.bbox.clamp_to(&tile.window) else {
            continue;
        };
        let visible = clipped.area() as f64 / d.bbox.area() as f64;
        if visible < min_visible {
            continue;
        }
        let local = PixelBox {
            x_min: clipped.x_min - tile.origin.0,
            y_min: clipped.y_min - tile.origin.1,
            x_max: clipped.x_max - tile.origin.0,
            y_max: clipped.y_max - tile.origin.1,
        };
        out.push(DoorBox {
            door_id: out.len() as DoorId,
            bbox: local,
            confidence: d.confidence * visible,
        });
    }
    out
}

/// Files written for one scenario, relative to the bundle directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundlePaths {
    pub image: PathBuf,
    pub detections: PathBuf,
    pub oracle: PathBuf,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("fixture serializes");
    v.push(b'\n');
    v
}

/// Writes the raster, detection manifest and oracle fixture into `dir` and
/// returns the manifest entry pointing at them.
pub fn write_scenario(scenario: &Scenario, dir: &Path) -> Result<PlanEntry> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let id = &scenario.plan.plan_id;
    let paths = BundlePaths {
        image: PathBuf::from(format!("{id}.png")),
        detections: PathBuf::from(format!("{id}.detections.json")),
        oracle: PathBuf::from(format!("{id}.oracle.json")),
    };
    write_file(&dir.join(&paths.image), &scenario.png)?;
    let detections = DetectionManifest::from_doors(id.clone(), "synthetic", &scenario.doors);
    write_file(&dir.join(&paths.detections), &json_bytes(&detections))?;
    write_file(&dir.join(&paths.oracle), &json_bytes(&scenario.fixture))?;
    Ok(PlanEntry {
        plan: FloorPlanRef {
            image_uri: paths.image.to_string_lossy().into_owned(),
            ..scenario.plan.clone()
        },
        truth: scenario.truth.clone(),
        oracle: Some(paths.oracle),
        detections: Some(paths.detections),
    })
}

/// A generation request: one scenario or a named list of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GenerateRequest {
    Suite {
        dataset: String,
        scenarios: Vec<ScenarioSpec>,
    },
    Single(ScenarioSpec),
}

impl GenerateRequest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| schema_error("scenario spec", e))
    }

    pub fn into_parts(self) -> (String, Vec<ScenarioSpec>) {
        match self {
            GenerateRequest::Suite { dataset, scenarios } => (dataset, scenarios),
            GenerateRequest::Single(spec) => (format!("synthetic-{}", spec.seed), vec![spec]),
        }
    }
}

/// Generates every scenario into `dir` and writes `dir/manifest.json`.
pub fn write_bundle(dataset: &str, specs: &[ScenarioSpec], dir: &Path) -> Result<DatasetManifest> {
    let mut plans = Vec::with_capacity(specs.len());
    for spec in specs {
        plans.push(write_scenario(&generate(spec)?, dir)?);
    }
    let manifest = DatasetManifest {
        dataset: dataset.to_string(),
        plans,
        base_dir: dir.to_path_buf(),
    };
    manifest.validate()?;
    write_file(&dir.join("manifest.json"), &json_bytes(&manifest))?;
    Ok(manifest)
}

fn fill(img: &mut RgbImage, x0: u32, y0: u32, x1: u32, y1: u32, c: Rgb<u8>) {
    let (w, h) = img.dimensions();
    for y in y0.min(h)..y1.min(h) {
        for x in x0.min(w)..x1.min(w) {
            img.put_pixel(x, y, c);
        }
    }
}

fn outline(img: &mut RgbImage, r: &PixelBox, t: u32, c: Rgb<u8>) {
    fill(img, r.x_min, r.y_min, r.x_max, r.y_min + t, c);
    fill(img, r.x_min, r.y_max - t, r.x_max, r.y_max, c);
    fill(img, r.x_min, r.y_min, r.x_min + t, r.y_max, c);
    fill(img, r.x_max - t, r.y_min, r.x_max, r.y_max, c);
}

fn disk(img: &mut RgbImage, cx: i64, cy: i64, r: i64, ring: bool, c: Rgb<u8>) {
    let (w, h) = img.dimensions();
    for y in (cy - r).max(0)..=(cy + r).min(h as i64 - 1) {
        for x in (cx - r).max(0)..=(cx + r).min(w as i64 - 1) {
            let d2 = (x - cx).pow(2) + (y - cy).pow(2);
            let inside = d2 <= r * r;
            let inner = d2 < (r - 2).max(0).pow(2);
            if inside && !(ring && inner) {
                img.put_pixel(x as u32, y as u32, c);
            }
        }
    }
}

/// Type-specific icon centred in the room.
fn glyph(img: &mut RgbImage, room: &PixelBox, f: FacilityType) {
    let (cx, cy) = room.center();
    let (cx, cy) = (cx as i64, cy as i64);
    let s = (room.width().min(room.height()) / 5).max(4) as i64;
    let sq = |img: &mut RgbImage, half: i64| {
        let b = PixelBox {
            x_min: (cx - half) as u32,
            y_min: (cy - half) as u32,
            x_max: (cx + half) as u32,
            y_max: (cy + half) as u32,
        };
        outline(img, &b, 2, GLYPH);
    };
    match f {
        FacilityType::Toilet => disk(img, cx, cy, s, true, GLYPH),
        FacilityType::Kitchen => {
            sq(img, s);
            for (dx, dy) in [(-1, -1), (1, -1), (-1, 1), (1, 1)] {
                disk(
                    img,
                    cx + dx * s / 2,
                    cy + dy * s / 2,
                    (s / 4).max(1),
                    false,
                    GLYPH,
                );
            }
        }
        FacilityType::Laundry => {
            sq(img, s);
            disk(img, cx, cy, (s * 2 / 3).max(2), true, GLYPH);
        }
        FacilityType::Exit => {
            for i in 0..s {
                fill(
                    img,
                    (cx - s + i) as u32,
                    (cy - (s - i) / 2) as u32,
                    (cx - s + i + 1) as u32,
                    (cy + (s - i) / 2 + 1) as u32,
                    GLYPH,
                );
            }
        }
        FacilityType::EmergencyExit => {
            fill(
                img,
                (cx - s) as u32,
                (cy - s / 2) as u32,
                (cx + s) as u32,
                (cy + s / 2) as u32,
                Rgb([20, 120, 40]),
            );
        }
        FacilityType::FireSafety => disk(img, cx, cy, s / 2 + 1, false, Rgb([200, 120, 20])),
        FacilityType::Accessibility => {
            disk(img, cx, cy - s / 2, (s / 4).max(1), false, GLYPH);
            fill(
                img,
                (cx - 1) as u32,
                (cy - s / 4) as u32,
                (cx + 2) as u32,
                (cy + s) as u32,
                GLYPH,
            );
        }
        FacilityType::ParkingStandard | FacilityType::ParkingAccessible => {
            fill(
                img,
                (cx - s / 2) as u32,
                (cy - s) as u32,
                (cx - s / 2 + 3) as u32,
                (cy + s) as u32,
                GLYPH,
            );
            let bowl = PixelBox {
                x_min: (cx - s / 2) as u32,
                y_min: (cy - s) as u32,
                x_max: (cx + s / 2) as u32,
                y_max: cy as u32,
            };
            outline(img, &bowl, 2, GLYPH);
            if f == FacilityType::ParkingAccessible {
                disk(img, cx + s / 2, cy + s / 2, (s / 3).max(1), false, GLYPH);
            }
        }
    }
}

fn furniture(img: &mut RgbImage, room: &PixelBox) {
    let (cx, cy) = room.center();
    let s = (room.width().min(room.height()) / 4).max(4);
    let (x, y) = (cx as u32 - s / 2, cy as u32 - s / 2);
    fill(img, x, y, x + s, y + 2, GLYPH);
    fill(img, x, y + s - 2, x + s, y + s, GLYPH);
}

/// Gap in the wall with a leaf line, horizontal walls when `bottom`.
fn draw_door(img: &mut RgbImage, b: &PixelBox, bottom: bool) {
    fill(img, b.x_min, b.y_min, b.x_max, b.y_max, BACKGROUND);
    outline(img, b, 1, DOOR);
    let (w, h) = (b.width() as i64, b.height() as i64);
    for i in 0..w.min(h) {
        let (x, y) = if bottom {
            (b.x_min as i64 + i, b.y_max as i64 - 1 - i)
        } else {
            (b.x_min as i64 + i, b.y_min as i64 + i)
        };
        img.put_pixel(x as u32, y as u32, DOOR);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn seed7() -> ScenarioSpec {
        ScenarioSpec {
            rooms: BTreeMap::from([(FacilityType::Toilet, 3)]),
            doors_per_room: DoorsPerRoom::Exact {
                two_door_rooms: BTreeMap::from([(FacilityType::Toilet, 1)]),
            },
            doorless_rooms: BTreeMap::from([(FacilityType::Toilet, 1)]),
            ..ScenarioSpec::empty(7)
        }
    }

    /// Counts straight from the room list, without the fixture.
    fn layout_counts(s: &Scenario) -> HashMap<FacilityType, u32> {
        let mut m = HashMap::new();
        for r in &s.rooms {
            if let Some(f) = r.facility {
                *m.entry(f).or_default() += 1;
            }
        }
        m
    }

    #[test]
    fn seed7_toilets() {
        let s = generate(&seed7()).unwrap();
        assert_eq!(s.truth[&FacilityType::Toilet], 4);
        assert_eq!(layout_counts(&s)[&FacilityType::Toilet], 4);
        let yes = s.fixture.connection[&FacilityType::Toilet]
            .values()
            .filter(|v| **v)
            .count();
        assert_eq!(yes, 4);
        assert_eq!(s.fixture.same_room.len(), 1);
        assert_eq!(s.fixture.missing[&FacilityType::Toilet], 1);
        assert_eq!(s.fixture.true_count(FacilityType::Toilet), 4);
        assert_eq!(s.doors.len(), 4);
    }

    #[test]
    fn empty_spec() {
        let s = generate(&ScenarioSpec::empty(1)).unwrap();
        assert!(s.doors.is_empty());
        assert!(s.truth.values().all(|&n| n == 0));
        assert_eq!(s.truth.len(), FacilityType::ALL.len());
    }

    #[test]
    fn deterministic_by_seed() {
        assert_eq!(generate(&seed7()).unwrap(), generate(&seed7()).unwrap());
        let a = generate(&ScenarioSpec::random(3, 12)).unwrap();
        let b = generate(&ScenarioSpec::random(4, 12)).unwrap();
        assert_ne!(a.plan.image_digest, b.plan.image_digest);
    }

    #[test]
    fn random_spec_has_requested_doors() {
        for total in [0, 1, 7, 25] {
            let s = generate(&ScenarioSpec::random(total as u64 + 100, total)).unwrap();
            assert_eq!(s.doors.len(), total as usize);
        }
    }

    #[test]
    fn overfull_image_is_generation_error() {
        let spec = ScenarioSpec {
            image_size: [100, 100],
            decoy_doors: 30,
            ..ScenarioSpec::empty(0)
        };
        assert!(matches!(generate(&spec), Err(Error::Generation(_))));
        let zero = ScenarioSpec {
            image_size: [0, 100],
            ..ScenarioSpec::empty(0)
        };
        assert!(matches!(generate(&zero), Err(Error::Validation(_))));
    }

    #[test]
    fn doors_in_bounds_and_disjoint() {
        for seed in 0..30 {
            let s = generate(&ScenarioSpec::random(seed, 25)).unwrap();
            let bounds = s.plan.bounds();
            for (i, a) in s.doors.iter().enumerate() {
                assert_eq!(a.door_id, i as u32);
                assert!(bounds.contains(&a.bbox));
                for b in &s.doors[i + 1..] {
                    assert_eq!(a.bbox.intersection_area(&b.bbox), 0);
                }
            }
        }
    }

    #[test]
    fn tile_detector_clips_and_scales() {
        let d = DoorBox::new(0, PixelBox::new(90, 0, 110, 10).unwrap(), 0.8).unwrap();
        let tile = Tile {
            origin: (0, 0),
            window: PixelBox::new(0, 0, 100, 100).unwrap(),
        };
        assert!(detect_in_tile(&[d], &tile, 0.8).is_empty());
        let seen = detect_in_tile(&[d], &tile, 0.5);
        assert_eq!(seen[0].bbox, PixelBox::new(90, 0, 100, 10).unwrap());
        assert!((seen[0].confidence - 0.4).abs() < 1e-12);
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_bundle("d", &[seed7(), ScenarioSpec::random(9, 5)], dir.path()).unwrap();
        let loaded = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded.plans, m.plans);
        let oracle = loaded.oracle(Default::default()).unwrap();
        assert!(oracle.fixture("synth-7").is_some());
    }
}
