//! Writes a small synthetic dataset and compares the one-shot baseline with
//! the door-anchored pipeline, both backed by a noisy oracle.
//!
//! cargo run --example evaluate_comparison -- [error_rate]

use std::sync::Arc;

use facility_enum::eval::{run_comparison, ComparisonConfig, Contender, Method};
use facility_enum::gateway::{Gateway, OracleConfig, PromptTemplates};
use facility_enum::synth::{write_bundle, ScenarioSpec};

fn main() -> facility_enum::Result<()> {
    let rate: f64 = std::env::args()
        .nth(1)
        .map_or(0.05, |a| a.parse().expect("error rate"));
    let dir = std::env::temp_dir().join("facility-enum-eval");
    let specs: Vec<_> = (0..20)
        .map(|i| ScenarioSpec::random(i, (i * 5 % 26) as u32))
        .collect();
    let manifest = write_bundle("example", &specs, &dir)?;

    let gateway = Arc::new(Gateway::new(
        Arc::new(manifest.oracle(OracleConfig::with_error_rate(rate, 1))?),
        PromptTemplates::builtin("v1")?,
    ));
    let contenders = [
        Contender {
            label: "baseline".into(),
            method: Method::Baseline,
            gateway: gateway.clone(),
        },
        Contender {
            label: "cot".into(),
            method: Method::Cot,
            gateway: gateway.clone(),
        },
    ];
    let report = run_comparison(&manifest, &contenders, &ComparisonConfig::default())?;
    println!(
        "oracle error rate {rate}, {} plans in {}",
        manifest.plans.len(),
        dir.display()
    );
    println!("{}", report.to_table());
    print!("{}", report.to_csv()?);
    Ok(())
}
