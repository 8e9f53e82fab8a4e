//! Build a synthetic asset library, inspect it and round-trip it through JSON.

use dcsynth::assets::{generate_synthetic_library, AssetCategory, AssetLibrary};

pub fn run_example() -> Result<AssetLibrary, Box<dyn std::error::Error>> {
    let library = generate_synthetic_library(8, 42);
    for category in AssetCategory::ALL {
        let ids = library.ids(category);
        println!("{:<14} {:>2} models, first {}", category.section(), ids.len(), ids[0]);
        if let Some(ranges) = library.parameter_ranges(category) {
            for (field, (lo, hi)) in category.parameter_fields().iter().zip(ranges) {
                println!("    {field:<24} {lo:>10.3} .. {hi:<10.3}");
            }
        }
    }

    let text = library.to_json_string();
    let back = AssetLibrary::from_json_str(&text)?;
    assert_eq!(back, library);
    println!("round trip through {} bytes of JSON", text.len());

    let sample = dcsynth::assets::load_library(concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample_library.json"))?;
    let acu = sample.get("ACU_A").and_then(|a| a.as_acu()).ok_or("ACU_A missing")?;
    println!(
        "ACU_A: {} kW cooling, {} m3/s design flow",
        acu.cooling_capacity, acu.design_air_flow_rate
    );
    Ok(library)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
