//! Checks a set of facility counts against the built-in rule catalog for a
//! few building classes.

use std::collections::BTreeMap;

use facility_enum::compliance::{evaluate, BuildingContext, Catalog};
use facility_enum::model::FacilityType;

fn main() -> facility_enum::Result<()> {
    let counts: BTreeMap<FacilityType, u32> = [
        (FacilityType::Toilet, 3),
        (FacilityType::Kitchen, 1),
        (FacilityType::Laundry, 1),
        (FacilityType::Exit, 3),
        (FacilityType::EmergencyExit, 0),
        (FacilityType::FireSafety, 2),
        (FacilityType::Accessibility, 2),
        (FacilityType::ParkingStandard, 12),
        (FacilityType::ParkingAccessible, 0),
    ]
    .into();
    let catalog = Catalog::builtin();

    let house = BuildingContext::new(1, 1)?.with_parking_from(&counts);
    let mut flats = BuildingContext::new(2, 2)?.with_parking_from(&counts);
    flats.dwellings = 4;
    let mut office = BuildingContext::new(5, 1)?.with_parking_from(&counts);
    office.occupant_load = 45;

    for ctx in [house, flats, office] {
        let report = evaluate(&counts, &ctx, &catalog)?;
        println!("class {}:", ctx.building_class);
        println!("{}", report.to_table());
    }
    Ok(())
}
