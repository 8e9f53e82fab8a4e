//! Generate a small-edge design, lay it out and check the design constraints.

use dcsynth::assets::generate_synthetic_library;
use dcsynth::generation::{heuristic_generate, DesignContext, Requirements, Scale};
use dcsynth::scene::{check_constraints, synthesize_scene, ConstraintReport};
use dcsynth::weather::{external_conditions, synthetic_series, Climate};

pub fn run_example() -> Result<ConstraintReport, Box<dyn std::error::Error>> {
    let library = generate_synthetic_library(10, 3);
    let requirements = Requirements::for_scale(Scale::SmallEdge);
    let weather = external_conditions(&synthetic_series(Climate::Temperate, 24, 3))?;
    let ctx = DesignContext::new(&requirements, &library, &weather)?;

    let candidate = heuristic_generate(&ctx, 3, 1)?.remove(0);
    println!("{}", candidate.design_text());
    let (Some(topology), Some(layout)) = (&candidate.topology, &candidate.layout) else {
        return Err("heuristic candidate without design".into());
    };
    let scene = synthesize_scene(topology, layout, &library, &requirements.server_fill(&library)?)?;

    for (name, room) in &scene.rooms {
        println!(
            "{name}: {:.2} m x {:.2} m, {} rows of {} racks, {} servers",
            room.width,
            room.depth,
            room.rack_rows,
            room.racks_per_row,
            scene.room_servers(name)
        );
    }
    for p in scene.placed.iter().take(6) {
        println!(
            "  {:<12} at ({:6.2}, {:6.2}) rot {:>3}",
            p.name, p.location.x, p.location.y, p.rotation
        );
    }
    println!("  ... {} placed assets", scene.placed.len());

    let report = check_constraints(&scene, &library);
    println!("constraints valid: {}", report.is_valid());
    for (room, slack) in &report.cooling_slack_kw {
        println!("  cooling slack in {room}: {slack:.1} kW");
    }
    for v in &report.violations {
        println!("  violation [{}] {}", v.constraint, v.message);
    }
    Ok(report)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
