//! Gradient search for ideal cooling-asset parameters, then projection onto
//! the catalogue.

use dcsynth::assets::generate_synthetic_library;
use dcsynth::generation::{heuristic_generate, DesignContext, Requirements, Scale};
use dcsynth::optimizer::{optimize_parameters, refine_scene, Normalization, OptimizationConfig};
use dcsynth::physics::{simulate, OperationalConditions, PhysicsConfig, SimMode};
use dcsynth::scene::{check_constraints, synthesize_scene};
use dcsynth::weather::{external_conditions, synthetic_series, Climate};

pub fn run_example() -> Result<(f64, f64), Box<dyn std::error::Error>> {
    let library = generate_synthetic_library(20, 5);
    let requirements = Requirements::for_scale(Scale::SmallEdge);
    let weather = external_conditions(&synthetic_series(Climate::Dry, 48, 5))?;
    let ops = OperationalConditions::diurnal(weather.len());
    let physics = PhysicsConfig::default();
    let ctx = DesignContext::new(&requirements, &library, &weather)?;

    let c = heuristic_generate(&ctx, 5, 1)?.remove(0);
    let scene = synthesize_scene(
        c.topology.as_ref().ok_or("no topology")?,
        c.layout.as_ref().ok_or("no layout")?,
        &library,
        &requirements.server_fill(&library)?,
    )?;

    let config = OptimizationConfig {
        max_steps: 80,
        ..OptimizationConfig::default()
    };
    let ideal = optimize_parameters(&scene, &library, &weather, &ops, &config, &physics)?;
    println!(
        "smoothed PUE {:.4} -> {:.4} in {} steps (penalty {:.2e})",
        ideal.outcome.initial_objective, ideal.objective, ideal.outcome.steps, ideal.penalty
    );
    for (slot, a) in &ideal.assets {
        let current = scene.assets[slot].parameter_vector();
        println!("{slot} ({:?})", a.category);
        for ((field, before), after) in a.category.parameter_fields().iter().zip(&current).zip(&a.values) {
            if (before - after).abs() > 1e-9 {
                println!("    {field:<24} {before:>10.3} -> {after:<10.3}");
            }
        }
    }

    let refined = refine_scene(&scene, &ideal, &library, Normalization::ZScore)?;
    for (slot, spec) in &refined.assets {
        if scene.assets[slot].id() != spec.id() {
            println!("slot {slot}: {} replaced by {}", scene.assets[slot].id(), spec.id());
        }
    }
    let before = simulate(&scene, &weather, &ops, &SimMode::Evaluate, &physics)?.pue;
    let after = simulate(&refined, &weather, &ops, &SimMode::Evaluate, &physics)?.pue;
    println!(
        "mean PUE {before:.4} -> {after:.4}; refined constraints valid: {}",
        check_constraints(&refined, &library).is_valid()
    );
    Ok((before, after))
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
