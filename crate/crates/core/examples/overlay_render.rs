//! Draws the query overlays for one door and one door pair and writes them
//! as PNG files to the temp directory.

use facility_enum::overlay::{render_overlay, BoxRole, OverlaySpec};
use facility_enum::synth::{generate, ScenarioSpec};

fn main() -> facility_enum::Result<()> {
    let s = generate(&ScenarioSpec::random(3, 6))?;
    let (w, h) = (s.plan.width_px, s.plan.height_px);
    let dir = std::env::temp_dir().join("facility-enum-overlays");
    std::fs::create_dir_all(&dir).expect("create output dir");

    let single = OverlaySpec::for_image(w, h).with_box(s.doors[0].bbox, BoxRole::Queried);
    let pair = OverlaySpec::for_image(w, h)
        .with_box(s.doors[0].bbox, BoxRole::Queried)
        .with_box(s.doors[1].bbox, BoxRole::Queried);
    for (name, spec) in [("single", single), ("pair", pair)] {
        let out = render_overlay(&s.png, &spec)?;
        let path = dir.join(format!("{}-{name}.png", s.plan.plan_id));
        std::fs::write(&path, &out.png).expect("write overlay");
        println!(
            "{} stroke {}px -> {}",
            name,
            spec.stroke_width_px,
            path.display()
        );
    }
    Ok(())
}
