//! Shows the prompt text for each query kind and how free-text replies are
//! reduced to verdicts and counts.

use facility_enum::gateway::{
    extract_reason, parse_count, parse_verdict, PromptTemplates, QueryKind,
};
use facility_enum::model::{DoorBox, FacilityType, PixelBox};

fn main() -> facility_enum::Result<()> {
    let templates = PromptTemplates::builtin("v1")?;
    let doors = [
        DoorBox::new(0, PixelBox::new(40, 30, 60, 50)?, 0.9)?,
        DoorBox::new(1, PixelBox::new(200, 30, 220, 50)?, 0.8)?,
    ];
    let f = FacilityType::Kitchen;
    let queries = [
        QueryKind::Connection {
            facility: f,
            door_id: 0,
        },
        QueryKind::same_room(f, 0, 1)?,
        QueryKind::omission(f, vec![0])?,
        QueryKind::WholeImageCount { facility: f },
    ];
    for q in &queries {
        println!(
            "{}\n  {}\n",
            q.canonical_json(),
            templates.prompt_for(q, &doors)?
        );
    }

    for reply in [
        "Yes. The door opens onto the kitchen bench.",
        "**No** - it leads to a hallway.",
        "Maybe?",
    ] {
        println!(
            "{reply:?} -> {:?}",
            parse_verdict(reply).map_err(|e| e.to_string())
        );
    }
    for reply in [
        "2. Reason: an open-plan kitchenette.",
        "There are three more.",
        "none",
    ] {
        println!(
            "{reply:?} -> {:?}, reason {:?}",
            parse_count(reply).map_err(|e| e.to_string()),
            extract_reason(reply)
        );
    }
    Ok(())
}
