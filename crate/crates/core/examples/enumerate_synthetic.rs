//! Counts every facility type on a generated plan with the exact oracle.
//!
//! cargo run --example enumerate_synthetic -- [seed] [doors]

use std::sync::Arc;

use facility_enum::cot::{enumerate_plan, PipelineConfig, PlanInput};
use facility_enum::gateway::{Gateway, OracleBackend, OracleConfig, PromptTemplates};
use facility_enum::model::FacilityType;
use facility_enum::synth::{generate, ScenarioSpec};

fn main() -> facility_enum::Result<()> {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<u64>().expect("numeric argument"));
    let seed = args.next().unwrap_or(7);
    let doors = args.next().unwrap_or(12) as u32;

    let scenario = generate(&ScenarioSpec::random(seed, doors))?;
    let oracle =
        OracleBackend::new(OracleConfig::default())?.with_fixture(scenario.fixture.clone());
    let gateway = Gateway::new(Arc::new(oracle), PromptTemplates::builtin("v1")?);
    let input = PlanInput::new(scenario.plan.clone(), &scenario.png, scenario.doors.clone())?;

    let configs: Vec<_> = FacilityType::ALL
        .into_iter()
        .map(PipelineConfig::new)
        .collect();
    println!("{} ({} doors)", scenario.plan.plan_id, scenario.doors.len());
    println!(
        "{:<20} {:>4} {:>4} {:>8} {:>6} {:>6}",
        "facility", "D_T", "M", "missing", "final", "truth"
    );
    for (facility, run) in enumerate_plan(&input, &gateway, &configs) {
        let run = run?;
        let r = &run.result;
        println!(
            "{:<20} {:>4} {:>4} {:>8} {:>6} {:>6}",
            facility.as_str(),
            r.connected_doors().len(),
            r.representatives().len(),
            r.n_missing(),
            r.n_final(),
            scenario.truth[&facility]
        );
    }
    println!("{} model queries", gateway.backend_invocations());
    Ok(())
}
