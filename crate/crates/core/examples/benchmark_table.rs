//! A reduced method comparison grid on the small-edge scale.

use dcsynth::evolution::{benchmark, summarize_benchmark, BenchmarkConfig, Method, MethodSummary};
use dcsynth::generation::Scale;

pub fn run_example() -> Result<Vec<MethodSummary>, Box<dyn std::error::Error>> {
    let config = BenchmarkConfig {
        methods: vec![Method::Random, Method::Ea, Method::NoPhy, Method::Full],
        scales: vec![Scale::SmallEdge],
        library_sizes: vec![10],
        seeds: vec![0, 1, 2],
        iterations: 3,
        samples: 4,
        horizon: 24,
        ..BenchmarkConfig::default()
    };
    let rows = benchmark(&config)?;
    let summary = summarize_benchmark(&rows);
    println!("{:<16} {:<12} {:>5} {:>12} {:>8}", "method", "scale", "runs", "median PUE", "GSR");
    for s in &summary {
        println!(
            "{:<16} {:<12} {:>5} {:>12.4} {:>8.2}",
            s.method,
            s.scale.label(),
            s.runs,
            s.median_best_pue,
            s.mean_gsr
        );
    }
    Ok(summary)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
