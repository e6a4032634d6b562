//! Turns raw detector output into a filtered, densely numbered door set.

use facility_enum::detection::{filter_doors, ingest, DetectionManifest, DetectorConfig};
use facility_enum::model::{ContentDigest, FloorPlanRef};

const RAW: &str = r#"{
  "plan_id": "demo",
  "detector": "example",
  "detections": [
    {"box": [40.2, 30.0, 60.7, 52.0], "confidence": 0.93},
    {"box": [41, 31, 61, 52], "confidence": 0.81},
    {"box": [120, 80, 140, 100], "confidence": 0.35},
    {"box": [300, 200, 330, 225], "confidence": 0.77},
    {"box": [390, 280, 420, 320], "confidence": 0.9}
  ]
}"#;

fn main() -> facility_enum::Result<()> {
    let plan = FloorPlanRef::new("demo", ContentDigest::of(b"demo"), 400, 300, "demo.png")?;
    let manifest: DetectionManifest = serde_json::from_str(RAW).expect("valid manifest");

    let set = ingest(&manifest.detections, &plan)?;
    for w in &set.warnings {
        println!("warning: {w:?}");
    }
    println!(
        "ingested {} of {} detections",
        set.doors.len(),
        manifest.detections.len()
    );

    let cfg = DetectorConfig::default();
    let kept = filter_doors(&set.doors, &cfg);
    println!(
        "after confidence >= {} and IoU dedup at {}:",
        cfg.confidence_threshold, cfg.dedup_iou_threshold
    );
    for d in kept {
        println!("  door {} {} conf {:.2}", d.door_id, d.bbox, d.confidence);
    }
    Ok(())
}
