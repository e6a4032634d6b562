//! Splits a large plan into overlapping tiles, runs a simulated detector on
//! each tile and merges the results back into plan coordinates.

use facility_enum::eval::{detect_tiled, plan_tiles};
use facility_enum::synth::{detect_in_tile, generate, ScenarioSpec};

fn main() -> facility_enum::Result<()> {
    let spec = ScenarioSpec {
        image_size: [2200, 1600],
        ..ScenarioSpec::random(21, 25)
    };
    let s = generate(&spec)?;
    let tiling = plan_tiles(&s.plan, 1024, 128)?;
    println!(
        "{}x{} plan -> {} tiles of {}px with {}px overlap",
        s.plan.width_px,
        s.plan.height_px,
        tiling.tiles.len(),
        tiling.tile_size_px,
        tiling.overlap_px
    );

    let merged = detect_tiled(&tiling, 0.8, |tile| {
        let found = detect_in_tile(&s.doors, tile, 0.8);
        println!("  tile at {:?}: {} doors", tile.origin, found.len());
        Ok(found)
    })?;
    println!(
        "merged {} doors, whole image has {}",
        merged.len(),
        s.doors.len()
    );
    println!("identical to whole-image detections: {}", merged == s.doors);
    Ok(())
}
