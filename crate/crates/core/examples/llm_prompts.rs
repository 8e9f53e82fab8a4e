//! Design and reflection prompts, and parsing of a model response.
//!
//! Set `DCSYNTH_API_KEY` and `DCSYNTH_BASE_URL` to also send the design
//! prompt to an OpenAI-compatible endpoint.

use dcsynth::assets::generate_synthetic_library;
use dcsynth::generation::{build_design_prompt, parse_candidate, DesignQuery, Requirements, Scale};
use dcsynth::llm::{LlmClient, LlmEndpointConfig};
use dcsynth::physics::{simulate, OperationalConditions, PhysicsConfig, SimMode};
use dcsynth::reflection::{build_reflect_prompt, contextualize, reflect, ReflectMode, ReflectionTargets};
use dcsynth::scene::{check_constraints, synthesize_scene};
use dcsynth::weather::{external_conditions, summarize, synthetic_series, Climate};

const RESPONSE: &str = r#"Two halls are not needed for 80 servers.
<topology>
{"rooms": {"room_1": {"racks": {"RACK_001": 12,}, "acus": {"ACU_001": 2}}},
 "plant": {"chilled_water_loop": {"chillers": {"CH_001": 1}},
           "condenser_water_loop": {"cooling_towers": {"CT_001": 1}}}}
</topology>
<layout>
{"rooms": {"room_1": {"rack_gap": 0.1, "padding": 0.5, "margin": 1.0, "aisle_gap": 1.8,},}}
</layout>"#;

pub fn run_example() -> Result<String, Box<dyn std::error::Error>> {
    let library = generate_synthetic_library(3, 1);
    let requirements = Requirements::for_scale(Scale::SmallEdge);
    let records = synthetic_series(Climate::Temperate, 24, 1);
    let query = DesignQuery::new(&library, summarize(&records)?.describe(), &requirements, Vec::new())?;
    let prompt = build_design_prompt(&query);
    println!("design prompt: {} characters", prompt.len());
    println!("{}", &prompt[prompt.len().saturating_sub(600)..]);

    let candidate = parse_candidate(RESPONSE);
    println!("parsed: {} {:?}", candidate.parse_ok, candidate.parse_error);
    let scene = synthesize_scene(
        candidate.topology.as_ref().ok_or("no topology")?,
        candidate.layout.as_ref().ok_or("no layout")?,
        &library,
        &requirements.server_fill(&library)?,
    )?;
    let weather = external_conditions(&records)?;
    let ops = OperationalConditions::diurnal(weather.len());
    let result = simulate(&scene, &weather, &ops, &SimMode::Evaluate, &PhysicsConfig::default())?;
    let report = check_constraints(&scene, &library);
    let ctx = contextualize(&result, Some(&report), requirements.zone_max_c);
    let design = candidate.design_text();
    let reflect_prompt = build_reflect_prompt(&ctx, &design, &requirements.describe());
    println!("reflection prompt: {} characters", reflect_prompt.len());

    let mode_client = match (std::env::var("DCSYNTH_API_KEY"), std::env::var("DCSYNTH_BASE_URL")) {
        (Ok(_), Ok(base_url)) => Some(LlmClient::new(LlmEndpointConfig {
            base_url,
            samples: 1,
            ..LlmEndpointConfig::default()
        })?),
        _ => None,
    };
    let mode = match &mode_client {
        Some(c) => ReflectMode::Llm(c),
        None => ReflectMode::RuleBased,
    };
    let out = reflect(
        &scene,
        &design,
        &requirements.describe(),
        &ctx,
        Some(&report),
        &ReflectionTargets::default(),
        mode,
    );
    println!("reflection ({:?}):\n{}\n{}", out.source, out.summary, out.suggestions);
    Ok(reflect_prompt)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
