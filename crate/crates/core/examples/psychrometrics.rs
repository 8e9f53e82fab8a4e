//! Wet-bulb and humidity-ratio conversions and a weather summary.

use dcsynth::weather::{
    humidity_ratio, load_weather_csv, summarize, synthetic_series, wet_bulb_stull, Climate, WeatherSummary,
    STANDARD_PRESSURE_PA,
};

pub fn run_example() -> Result<WeatherSummary, Box<dyn std::error::Error>> {
    println!("{:>6} {:>6} {:>8} {:>10}", "T [C]", "RH %", "Twb [C]", "W [kg/kg]");
    for t in [10.0, 20.0, 30.0, 35.0] {
        for rh in [20.0, 50.0, 80.0] {
            let w = humidity_ratio(t, rh, STANDARD_PRESSURE_PA)?;
            println!("{t:>6.1} {rh:>6.0} {:>8.2} {w:>10.5}", wet_bulb_stull(t, rh));
        }
    }

    for climate in [Climate::Tropical, Climate::Dry, Climate::Temperate] {
        let s = summarize(&synthetic_series(climate, 168, 1))?;
        println!("{climate:?}: {}", s.describe());
    }

    let week = load_weather_csv(concat!(env!("CARGO_MANIFEST_DIR"), "/data/week_tropical.csv"))?;
    let s = summarize(&week)?;
    println!("data/week_tropical.csv: {}", s.describe());
    Ok(s)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
