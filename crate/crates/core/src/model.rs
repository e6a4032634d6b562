//! Shared domain types: plans, door boxes, facility taxonomy and the
//! per-facility enumeration result.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};

/// SHA-256 content hash, serialized as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContentDigest([u8; 32]);

impl ContentDigest {
    pub fn of(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }

    pub fn from_parts<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> Self {
        let mut hasher = Sha256::new();
        for part in parts {
            hasher.update((part.len() as u64).to_le_bytes());
            hasher.update(part);
        }
        Self(hasher.finalize().into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for ContentDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentDigest({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for ContentDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for ContentDigest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bytes =
            hex::decode(s).map_err(|e| Error::validation(format!("bad digest {s:?}: {e}")))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::validation(format!("digest {s:?} is not 32 bytes")))?;
        Ok(Self(arr))
    }
}

impl Serialize for ContentDigest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ContentDigest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A floor-plan image known to the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FloorPlanRef {
    pub plan_id: String,
    pub image_digest: ContentDigest,
    pub width_px: u32,
    pub height_px: u32,
    pub image_uri: String,
}

impl FloorPlanRef {
    pub fn new(
        plan_id: impl Into<String>,
        image_digest: ContentDigest,
        width_px: u32,
        height_px: u32,
        image_uri: impl Into<String>,
    ) -> Result<Self> {
        let plan = Self {
            plan_id: plan_id.into(),
            image_digest,
            width_px,
            height_px,
            image_uri: image_uri.into(),
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Builds a reference from encoded image bytes, reading the dimensions
    /// from the image header.
    pub fn from_image_bytes(
        plan_id: impl Into<String>,
        bytes: &[u8],
        image_uri: impl Into<String>,
    ) -> Result<Self> {
        let (w, h) = image::ImageReader::new(std::io::Cursor::new(bytes))
            .with_guessed_format()
            .map_err(|e| Error::Format(e.to_string()))?
            .into_dimensions()
            .map_err(|e| Error::Format(e.to_string()))?;
        Self::new(plan_id, ContentDigest::of(bytes), w, h, image_uri)
    }

    pub fn validate(&self) -> Result<()> {
        if self.plan_id.is_empty() {
            return Err(Error::validation("plan_id must not be empty"));
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::validation(format!(
                "plan {} has zero-sized image {}x{}",
                self.plan_id, self.width_px, self.height_px
            )));
        }
        Ok(())
    }

    pub fn bounds(&self) -> PixelBox {
        PixelBox {
            x_min: 0,
            y_min: 0,
            x_max: self.width_px,
            y_max: self.height_px,
        }
    }

    pub fn diagonal(&self) -> f64 {
        (self.width_px as f64).hypot(self.height_px as f64)
    }
}

/// Axis-aligned box in integer pixel coordinates, origin top-left.
/// Covers `[x_min, x_max) x [y_min, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct PixelBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl PixelBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self> {
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::validation(format!(
                "degenerate box ({x_min},{y_min},{x_max},{y_max})"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min as f64 + self.x_max as f64) / 2.0,
            (self.y_min as f64 + self.y_max as f64) / 2.0,
        )
    }

    pub fn intersection_area(&self, other: &PixelBox) -> u64 {
        let w = self
            .x_max
            .min(other.x_max)
            .saturating_sub(self.x_min.max(other.x_min));
        let h = self
            .y_max
            .min(other.y_max)
            .saturating_sub(self.y_min.max(other.y_min));
        w as u64 * h as u64
    }

    pub fn contains(&self, other: &PixelBox) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }

    /// Clips to `bounds`; `None` when nothing of the box remains.
    pub fn clamp_to(&self, bounds: &PixelBox) -> Option<PixelBox> {
        PixelBox::new(
            self.x_min.max(bounds.x_min),
            self.y_min.max(bounds.y_min),
            self.x_max.min(bounds.x_max),
            self.y_max.min(bounds.y_max),
        )
        .ok()
    }

    pub fn translate(&self, dx: u32, dy: u32) -> PixelBox {
        PixelBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }
}

impl TryFrom<[u32; 4]> for PixelBox {
    type Error = Error;

    fn try_from(v: [u32; 4]) -> Result<Self> {
        PixelBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<PixelBox> for [u32; 4] {
    fn from(b: PixelBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

impl fmt::Display for PixelBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {})-({}, {})",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}

pub type DoorId = u32;

/// A detected door: box plus detector confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoorBox {
    pub door_id: DoorId,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub confidence: f64,
}

impl DoorBox {
    pub fn new(door_id: DoorId, bbox: PixelBox, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::validation(format!(
                "door {door_id}: confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self {
            door_id,
            bbox,
            confidence,
        })
    }

    pub fn iou(&self, other: &DoorBox) -> f64 {
        iou(&self.bbox, &other.bbox)
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// `|representatives| + n_missing`.
pub fn final_count(representatives: usize, n_missing: u32) -> u32 {
    u32::try_from(representatives)
        .ok()
        .and_then(|m| m.checked_add(n_missing))
        .expect("facility count overflows u32")
}

/// Greedy highest-confidence-first suppression. Returns the surviving
/// indices into `doors`; ties in confidence go to the lower `door_id`.
pub(crate) fn suppress_overlaps(doors: &[DoorBox], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..doors.len()).collect();
    order.sort_by(|&a, &b| {
        doors[b]
            .confidence
            .total_cmp(&doors[a].confidence)
            .then(doors[a].door_id.cmp(&doors[b].door_id))
            .then(doors[a].bbox.cmp(&doors[b].bbox))
    });
    let mut kept: Vec<usize> = Vec::new();
    for idx in order {
        if kept
            .iter()
            .all(|&k| doors[k].iou(&doors[idx]) < iou_threshold)
        {
            kept.push(idx);
        }
    }
    kept
}

/// Facility categories the pipeline can enumerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FacilityType {
    Toilet,
    Kitchen,
    Laundry,
    Exit,
    EmergencyExit,
    FireSafety,
    Accessibility,
    ParkingStandard,
    ParkingAccessible,
}

impl FacilityType {
    pub const ALL: [FacilityType; 9] = [
        FacilityType::Toilet,
        FacilityType::Kitchen,
        FacilityType::Laundry,
        FacilityType::Exit,
        FacilityType::EmergencyExit,
        FacilityType::FireSafety,
        FacilityType::Accessibility,
        FacilityType::ParkingStandard,
        FacilityType::ParkingAccessible,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FacilityType::Toilet => "toilet",
            FacilityType::Kitchen => "kitchen",
            FacilityType::Laundry => "laundry",
            FacilityType::Exit => "exit",
            FacilityType::EmergencyExit => "emergency-exit",
            FacilityType::FireSafety => "fire-safety",
            FacilityType::Accessibility => "accessibility",
            FacilityType::ParkingStandard => "parking-standard",
            FacilityType::ParkingAccessible => "parking-accessible",
        }
    }
}

impl fmt::Display for FacilityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FacilityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FacilityType::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown facility type {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    No,
}

impl Verdict {
    pub fn is_yes(self) -> bool {
        self == Verdict::Yes
    }

    pub fn flipped(self) -> Self {
        match self {
            Verdict::Yes => Verdict::No,
            Verdict::No => Verdict::Yes,
        }
    }
}

impl From<bool> for Verdict {
    fn from(b: bool) -> Self {
        if b {
            Verdict::Yes
        } else {
            Verdict::No
        }
    }
}

/// Count for one facility type on one plan, with the intermediate sets
/// it was derived from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawEnumerationResult")]
pub struct EnumerationResult {
    plan_id: String,
    facility: FacilityType,
    door_set_size: usize,
    connected_doors: Vec<DoorId>,
    representatives: Vec<DoorId>,
    n_missing: u32,
    n_final: u32,
}

#[derive(Deserialize)]
struct RawEnumerationResult {
    plan_id: String,
    facility: FacilityType,
    door_set_size: usize,
    connected_doors: Vec<DoorId>,
    representatives: Vec<DoorId>,
    n_missing: u32,
    n_final: u32,
}

impl TryFrom<RawEnumerationResult> for EnumerationResult {
    type Error = Error;

    fn try_from(r: RawEnumerationResult) -> Result<Self> {
        let built = EnumerationResult::new(
            r.plan_id,
            r.facility,
            r.door_set_size,
            r.connected_doors,
            r.representatives,
            r.n_missing,
        )?;
        if built.n_final != r.n_final {
            return Err(Error::validation(format!(
                "n_final {} != representatives {} + n_missing {}",
                r.n_final,
                built.representatives.len(),
                built.n_missing
            )));
        }
        Ok(built)
    }
}

impl EnumerationResult {
    pub fn new(
        plan_id: impl Into<String>,
        facility: FacilityType,
        door_set_size: usize,
        connected_doors: Vec<DoorId>,
        representatives: Vec<DoorId>,
        n_missing: u32,
    ) -> Result<Self> {
        let connected: BTreeSet<DoorId> = connected_doors.iter().copied().collect();
        if connected.len() != connected_doors.len() {
            return Err(Error::validation("connected doors contain duplicates"));
        }
        if connected.len() > door_set_size {
            return Err(Error::validation(format!(
                "{} connected doors exceed door set of {door_set_size}",
                connected.len()
            )));
        }
        let reps: BTreeSet<DoorId> = representatives.iter().copied().collect();
        if reps.len() != representatives.len() {
            return Err(Error::validation("representatives contain duplicates"));
        }
        if !reps.is_subset(&connected) {
            return Err(Error::validation(
                "representatives are not a subset of connected doors",
            ));
        }
        let n_final = final_count(representatives.len(), n_missing);
        Ok(Self {
            plan_id: plan_id.into(),
            facility,
            door_set_size,
            connected_doors,
            representatives,
            n_missing,
            n_final,
        })
    }

    pub fn plan_id(&self) -> &str {
        &self.plan_id
    }

    pub fn facility(&self) -> FacilityType {
        self.facility
    }

    pub fn door_set_size(&self) -> usize {
        self.door_set_size
    }

    pub fn connected_doors(&self) -> &[DoorId] {
        &self.connected_doors
    }

    pub fn representatives(&self) -> &[DoorId] {
        &self.representatives
    }

    pub fn n_missing(&self) -> u32 {
        self.n_missing
    }

    pub fn n_final(&self) -> u32 {
        self.n_final
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(a: u32, b: u32, c: u32, d: u32) -> PixelBox {
        PixelBox::new(a, b, c, d).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = bx(0, 0, 10, 10);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20, 20, 30, 30)), 0.0);
        let half = iou(&a, &bx(5, 0, 15, 10));
        assert!((half - 50.0 / 150.0).abs() < 1e-12);
        // touching edges share no area
        assert_eq!(iou(&a, &bx(10, 0, 20, 10)), 0.0);
    }

    #[test]
    fn final_count_examples() {
        assert_eq!(final_count(0, 0), 0);
        assert_eq!(final_count(2, 1), 3);
        assert_eq!(final_count(5, 0), 5);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(PixelBox::new(5, 0, 5, 10).is_err());
        assert!(PixelBox::new(0, 9, 4, 3).is_err());
        assert!(serde_json::from_str::<PixelBox>("[3,3,1,9]").is_err());
    }

    #[test]
    fn confidence_range_enforced() {
        let b = bx(0, 0, 4, 4);
        assert!(DoorBox::new(0, b, 1.2).is_err());
        assert!(DoorBox::new(0, b, -0.1).is_err());
        assert!(DoorBox::new(0, b, f64::NAN).is_err());
        assert!(DoorBox::new(0, b, 1.0).is_ok());
    }

    #[test]
    fn facility_names_round_trip() {
        for f in FacilityType::ALL {
            let json = serde_json::to_string(&f).unwrap();
            assert_eq!(json, format!("\"{}\"", f.as_str()));
            assert_eq!(serde_json::from_str::<FacilityType>(&json).unwrap(), f);
            assert_eq!(f.as_str().parse::<FacilityType>().unwrap(), f);
        }
        assert_eq!(FacilityType::EmergencyExit.as_str(), "emergency-exit");
        assert!("bathroom".parse::<FacilityType>().is_err());
    }

    #[test]
    fn enumeration_result_invariants() {
        let r =
            EnumerationResult::new("p", FacilityType::Toilet, 5, vec![1, 3], vec![3], 2).unwrap();
        assert_eq!(r.n_final(), 3);

        assert!(EnumerationResult::new("p", FacilityType::Toilet, 5, vec![1], vec![3], 0).is_err());
        assert!(
            EnumerationResult::new("p", FacilityType::Toilet, 1, vec![1, 3], vec![], 0).is_err()
        );
        assert!(
            EnumerationResult::new("p", FacilityType::Toilet, 5, vec![1, 1], vec![1], 0).is_err()
        );

        let mut json = serde_json::to_value(&r).unwrap();
        json["n_final"] = 9.into();
        assert!(serde_json::from_value::<EnumerationResult>(json).is_err());
    }

    #[test]
    fn digest_is_stable_and_hex() {
        let a = ContentDigest::of(b"plan");
        assert_eq!(a, ContentDigest::of(b"plan"));
        assert_ne!(a, ContentDigest::of(b"plan2"));
        assert_eq!(a.to_hex().parse::<ContentDigest>().unwrap(), a);
        let parts = ContentDigest::from_parts([b"ab".as_slice(), b"c"]);
        assert_ne!(parts, ContentDigest::from_parts([b"a".as_slice(), b"bc"]));
    }

    fn arb_box() -> impl Strategy<Value = PixelBox> {
        (0u32..200, 0u32..200, 1u32..80, 1u32..80)
            .prop_map(|(x, y, w, h)| PixelBox::new(x, y, x + w, y + h).unwrap())
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
            if a != b {
                prop_assert!(ab < 1.0);
            }
        }
    }
}
