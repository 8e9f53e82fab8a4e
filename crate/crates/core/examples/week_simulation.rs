//! Simulate one week of a generated small-edge design in tropical weather.

use dcsynth::assets::load_library;
use dcsynth::generation::{heuristic_generate, DesignContext, Requirements};
use dcsynth::physics::{simulate, summarize, OperationalConditions, PhysicsConfig, SimMode, SimulationSummary};
use dcsynth::scene::synthesize_scene;
use dcsynth::weather::{external_conditions, load_weather_csv};

pub fn run_example() -> Result<SimulationSummary, Box<dyn std::error::Error>> {
    let dir = env!("CARGO_MANIFEST_DIR");
    let library = load_library(format!("{dir}/data/sample_library.json"))?;
    let requirements: Requirements =
        serde_json::from_str(&std::fs::read_to_string(format!("{dir}/data/requirements_small_edge.json"))?)?;
    let weather = external_conditions(&load_weather_csv(format!("{dir}/data/week_tropical.csv"))?)?;
    let ctx = DesignContext::new(&requirements, &library, &weather)?;

    let c = heuristic_generate(&ctx, 0, 1)?.remove(0);
    let scene = synthesize_scene(
        c.topology.as_ref().ok_or("no topology")?,
        c.layout.as_ref().ok_or("no layout")?,
        &library,
        &requirements.server_fill(&library)?,
    )?;
    let ops = OperationalConditions::diurnal(weather.len());
    let started = std::time::Instant::now();
    let result = simulate(&scene, &weather, &ops, &SimMode::Evaluate, &PhysicsConfig::default())?;
    println!("{} hours simulated in {:.3?}", result.steps.len(), started.elapsed());

    println!("{:>4} {:>7} {:>9} {:>9} {:>9} {:>7}", "hour", "Twb", "IT kW", "fans kW", "chill kW", "PUE");
    for (t, s) in result.steps.iter().enumerate().step_by(12) {
        println!(
            "{t:>4} {:>7.2} {:>9.1} {:>9.2} {:>9.2} {:>7.4}",
            weather[t].wet_bulb_c, s.it_kw, s.fans_kw, s.chillers_kw, s.pue
        );
    }
    let summary = summarize(&result);
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(summary)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
