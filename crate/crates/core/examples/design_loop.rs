//! The full evolutionary loop with the offline designer.

use dcsynth::assets::generate_synthetic_library;
use dcsynth::evolution::{run, Method, RunConfig, RunReport};
use dcsynth::generation::{Requirements, Scale};
use dcsynth::physics::OperationalConditions;
use dcsynth::weather::{synthetic_series, Climate};

pub fn run_example() -> Result<RunReport, Box<dyn std::error::Error>> {
    let library = generate_synthetic_library(15, 9);
    let requirements = Requirements::for_scale(Scale::SmallEdge);
    let weather = synthetic_series(Climate::Tropical, 48, 9);
    let ops = OperationalConditions::diurnal(weather.len());
    let config = RunConfig {
        method: Method::Full,
        iterations: 4,
        samples: 4,
        seed: 9,
        ..RunConfig::default()
    };
    let report = run(&config, &library, &requirements, &weather, &ops)?;
    print!("{}", report.iterations_csv());

    for c in report.candidates.iter().filter(|c| c.iteration == 1) {
        println!(
            "iter {} #{} {:?}: valid {} initial {:?} final {:?} refined {}",
            c.iteration, c.index, c.generator, c.valid, c.initial_pue, c.pue, c.refined
        );
    }
    if let Some(best) = &report.best {
        println!("best mean PUE {:.4}", best.pue);
        println!("{}", best.reflection.summary);
    }
    println!("mean GSR {:.2}", report.mean_gsr());
    Ok(report)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
