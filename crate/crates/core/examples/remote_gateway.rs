//! Runs the pipeline on a generated plan against an OpenAI-compatible chat
//! completions endpoint. Needs FE_LLM_KEY; FE_LLM_URL and FE_LLM_MODEL are
//! optional.

use std::sync::Arc;

use facility_enum::cot::{enumerate_facility, PipelineConfig, PlanInput};
use facility_enum::gateway::{Gateway, MemoryCache, PromptTemplates, RemoteBackend, RemoteConfig};
use facility_enum::model::FacilityType;
use facility_enum::synth::{generate, ScenarioSpec};

fn main() -> facility_enum::Result<()> {
    let cfg = match RemoteConfig::from_env() {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{e}");
            return Ok(());
        }
    };
    println!("endpoint {}", cfg.completions_url());
    let gateway = Gateway::new(
        Arc::new(RemoteBackend::new(cfg)),
        PromptTemplates::builtin("v1")?,
    )
    .with_cache(Arc::new(MemoryCache::default()));

    let s = generate(&ScenarioSpec::random(4, 6))?;
    let input = PlanInput::new(s.plan.clone(), &s.png, s.doors.clone())?;
    let run = enumerate_facility(&input, &gateway, &PipelineConfig::new(FacilityType::Toilet))?;
    println!(
        "toilets: {} (truth {}), {} queries",
        run.result.n_final(),
        s.truth[&FacilityType::Toilet],
        run.timings.queries
    );
    for v in &run.provenance.connection {
        println!(
            "  door {}: {:?} {}",
            v.door_id,
            v.verdict,
            v.raw_text.lines().next().unwrap_or("")
        );
    }
    Ok(())
}
