//! Acceptance gate. Every criterion prints one PASS/FAIL line to stderr
//! (uncaptured) and then asserts.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dcsynth::assets::{generate_synthetic_library, AssetCategory, AssetLibrary};
use dcsynth::evolution::{
    benchmark, benchmark_library, run, summarize_benchmark, BenchmarkConfig, BenchmarkRow, EvolutionHeap, Method,
    RunConfig,
};
use dcsynth::generation::{heuristic_generate, random_generate, Candidate, DesignContext, Requirements, Scale};
use dcsynth::optimizer::{select_nearest, Normalization};
use dcsynth::physics::{optimizable_handles, simulate, OperationalConditions, PhysicsConfig, SimMode};
use dcsynth::scene::{
    check_constraints, synthesize_scene, RoomLayout, RoomTopology, Scene, SceneTopology, ServerFill, SpatialLayout,
};
use dcsynth::weather::{
    external_conditions, humidity_ratio, load_weather_csv, synthetic_series, wet_bulb_stull, Climate,
};

const BENCH_SEEDS: u64 = 20;

fn verdict(n: u32, name: &str, ok: bool, detail: &str) {
    let line = format!(
        "acceptance criterion {n} [{}] {name}: {detail}\n",
        if ok { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "criterion {n} failed: {detail}");
}

fn scene_of(c: &Candidate, library: &AssetLibrary, fill: &ServerFill) -> Option<Scene> {
    synthesize_scene(c.topology.as_ref()?, c.layout.as_ref()?, library, fill).ok()
}

#[test]
fn criterion_1_gradient_fidelity() {
    let started = Instant::now();
    let cfg = PhysicsConfig::default();
    let mut scenes = 0;
    let mut checked = 0;
    let mut worst = 0.0f64;
    let mut plain_worst = 0.0f64;
    let mut failures = Vec::new();
    let mut seed = 0u64;
    while scenes < 25 && seed < 500 {
        seed += 1;
        let scale = if seed % 3 == 0 { Scale::MediumCluster } else { Scale::SmallEdge };
        let library = generate_synthetic_library(10, seed);
        let req = Requirements::for_scale(scale);
        let records = synthetic_series([Climate::Tropical, Climate::Dry, Climate::Temperate][seed as usize % 3], 12, seed);
        let weather = external_conditions(&records).unwrap();
        let ops = OperationalConditions::randomized(weather.len(), seed);
        let Ok(ctx) = DesignContext::new(&req, &library, &weather) else { continue };
        let Ok(mut cands) = heuristic_generate(&ctx, seed, 1) else { continue };
        let fill = req.server_fill(&library).unwrap();
        let Some(scene) = scene_of(&cands.remove(0), &library, &fill) else { continue };
        if !check_constraints(&scene, &library).is_valid() {
            continue;
        }
        scenes += 1;
        let handles = optimizable_handles(&scene, &library);
        let res = simulate(&scene, &weather, &ops, &SimMode::Differentiate(handles.clone()), &cfg).unwrap();
        let g = res.pue_gradient.unwrap();
        for (i, h) in handles.iter().enumerate() {
            let step = 1e-4 * (h.upper - h.lower);
            let eval = |delta: f64| {
                let mut s = scene.clone();
                let spec = &s.assets[&h.slot];
                let mut v = spec.parameter_vector();
                v[h.index] += delta;
                let new = spec.with_parameter_vector(&v).unwrap();
                s.assets.insert(h.slot.clone(), new);
                simulate(&s, &weather, &ops, &SimMode::EvaluateSmooth, &cfg).unwrap().pue
            };
            // central differences at h and h/2, Richardson-combined to cancel
            // the h^2 truncation term
            let d1 = (eval(step) - eval(-step)) / (2.0 * step);
            let d2 = (eval(0.5 * step) - eval(-0.5 * step)) / step;
            let fd = (4.0 * d2 - d1) / 3.0;
            plain_worst = plain_worst.max((g[i] - d1).abs() / g[i].abs().max(d1.abs()).max(1e-12));
            let abs = (g[i] - fd).abs();
            let rel = abs / g[i].abs().max(fd.abs()).max(1e-12);
            checked += 1;
            if abs >= 1e-12 {
                worst = worst.max(rel);
                if rel >= 1e-5 {
                    failures.push(format!("seed {seed} {}: ad {} fd {fd}", h.name(), g[i]));
                }
            }
        }
    }
    let elapsed = started.elapsed();
    let ok = scenes == 25 && failures.is_empty() && elapsed < Duration::from_secs(60);
    verdict(
        1,
        "gradient fidelity",
        ok,
        &format!(
            "{scenes} scenes, {checked} partials, worst rel err {worst:.2e} \
             (single central difference {plain_worst:.2e}), {:.1?}{}",
            elapsed,
            failures.first().map(|f| format!("; first failure {f}")).unwrap_or_default()
        ),
    );
}

#[test]
fn criterion_2_energy_bookkeeping() {
    let cfg = PhysicsConfig::default();
    let mut steps = 0usize;
    let mut worst = 0.0f64;
    for scale in Scale::ALL {
        let req = Requirements::for_scale(scale);
        let hours = if scale == Scale::LargeCloud { 24 } else { 48 };
        for seed in 0..4u64 {
            let library = benchmark_library(20, seed);
            let records = synthetic_series(Climate::Temperate, hours, seed);
            let weather = external_conditions(&records).unwrap();
            let ops = OperationalConditions::diurnal(hours);
            let ctx = DesignContext::new(&req, &library, &weather).unwrap();
            let fill = req.server_fill(&library).unwrap();
            let mut cands = heuristic_generate(&ctx, seed, 2).unwrap();
            cands.extend(random_generate(&ctx, seed, 2).unwrap());
            for c in &cands {
                let Some(scene) = scene_of(c, &library, &fill) else { continue };
                let Ok(res) = simulate(&scene, &weather, &ops, &SimMode::Evaluate, &cfg) else { continue };
                for (t, s) in res.steps.iter().enumerate() {
                    let rooms: f64 = res.room_steps[t].iter().map(|r| r.removed_kw).sum();
                    let expect = rooms + s.chillers_kw;
                    let rel = (s.rejected_kw - expect).abs() / expect.abs().max(1e-12);
                    worst = worst.max(rel);
                    steps += 1;
                }
            }
        }
    }
    verdict(
        2,
        "energy bookkeeping",
        steps > 0 && worst <= 1e-9,
        &format!("{steps} steps, worst rel residual {worst:.2e}"),
    );
}

#[test]
fn criterion_3_psychrometrics() {
    let fixture = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/psychrometrics_oracle.csv");
    let mut reader = csv::Reader::from_path(fixture).unwrap();
    let mut rows = 0;
    let mut worst_wb = 0.0f64;
    let mut worst_w = 0.0f64;
    for rec in reader.records() {
        let rec = rec.unwrap();
        let f = |i: usize| rec[i].parse::<f64>().unwrap();
        let (t, rh, p) = (f(0), f(1), f(2));
        worst_wb = worst_wb.max((wet_bulb_stull(t, rh) - f(3)).abs());
        worst_w = worst_w.max((humidity_ratio(t, rh, p).unwrap() - f(4)).abs() / f(4));
        rows += 1;
    }
    let wb = wet_bulb_stull(20.0, 50.0);
    let w = humidity_ratio(20.0, 50.0, 101_325.0).unwrap();
    let ok = (wb - 13.70).abs() <= 0.02
        && (w - 0.00726).abs() <= 1e-4
        && rows == 80
        && worst_wb < 1e-10
        && worst_w < 1e-12;
    // the bundled week is synthetic; only its plausibility is checked here
    let week = load_weather_csv(concat!(env!("CARGO_MANIFEST_DIR"), "/data/week_tropical.csv")).unwrap();
    let ext = external_conditions(&week).unwrap();
    let mean_w = ext.iter().map(|e| e.humidity_ratio).sum::<f64>() / ext.len() as f64;
    verdict(
        3,
        "psychrometrics",
        ok && (0.01..0.03).contains(&mean_w),
        &format!(
            "Twb(20,50) = {wb:.4} C, W(20,50) = {w:.6}; {rows} oracle points, worst |dTwb| {worst_wb:.1e}, worst rel dW {worst_w:.1e}"
        ),
    );
}

fn brute_nearest(ideal: &[f64], category: AssetCategory, library: &AssetLibrary) -> String {
    let mut assets: Vec<(String, Vec<f64>)> = library
        .iter()
        .filter(|a| a.category() == category)
        .map(|a| (a.id().to_string(), a.parameter_vector()))
        .collect();
    assets.sort_by(|a, b| a.0.cmp(&b.0));
    let n = assets.len() as f64;
    let dim = ideal.len();
    let mut scale = vec![1.0; dim];
    for (k, s) in scale.iter_mut().enumerate() {
        let mean = assets.iter().map(|a| a.1[k]).sum::<f64>() / n;
        let var = assets.iter().map(|a| (a.1[k] - mean) * (a.1[k] - mean)).sum::<f64>() / n;
        if var > 0.0 {
            *s = var.sqrt();
        }
    }
    let mut best: Option<(f64, &str)> = None;
    for (id, v) in &assets {
        let d: f64 = (0..dim).map(|k| ((v[k] - ideal[k]) / scale[k]).powi(2)).sum();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, id));
        }
    }
    best.unwrap().1.to_string()
}

#[test]
fn criterion_4_nearest_asset_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut total = 0;
    let mut agree = 0;
    for size in [10usize, 20, 30, 50] {
        for category in AssetCategory::ALL {
            for i in 0..1000u64 {
                let library = generate_synthetic_library(size, rng.random::<u64>() ^ i);
                let ranges = library.parameter_ranges(category).unwrap();
                let ideal: Vec<f64> = if rng.random_bool(0.1) {
                    let ids = library.ids(category);
                    library.get(&ids[rng.random_range(0..ids.len())]).unwrap().parameter_vector()
                } else {
                    ranges
                        .iter()
                        .map(|(lo, hi)| {
                            let span = (hi - lo).max(1e-9);
                            rng.random_range(lo - 0.2 * span..=hi + 0.2 * span)
                        })
                        .collect()
                };
                let got = select_nearest(&ideal, category, &library, Normalization::ZScore).unwrap();
                total += 1;
                if got.id() == brute_nearest(&ideal, category, &library) {
                    agree += 1;
                }
            }
        }
    }
    verdict(
        4,
        "nearest-asset oracle",
        agree == total,
        &format!("{agree}/{total} instances agree (sizes 10/20/30/50, all categories)"),
    );
}

fn benchmark_rows() -> &'static (Vec<BenchmarkRow>, Duration) {
    static ROWS: OnceLock<(Vec<BenchmarkRow>, Duration)> = OnceLock::new();
    ROWS.get_or_init(|| {
        let started = Instant::now();
        let config = BenchmarkConfig {
            methods: vec![Method::Random, Method::Ea, Method::Vanilla, Method::NoPhy, Method::Full],
            seeds: (0..BENCH_SEEDS).collect(),
            ..BenchmarkConfig::default()
        };
        let rows = benchmark(&config).unwrap();
        (rows, started.elapsed())
    })
}

#[test]
fn criterion_5_directional_comparison() {
    let (rows, elapsed) = benchmark_rows();
    let summary = summarize_benchmark(rows);
    let pick = |scale: Scale, m: Method| {
        summary
            .iter()
            .find(|s| s.scale == scale && s.method == m.label())
            .expect("summary row")
    };
    let mut ok = *elapsed < Duration::from_secs(600);
    let mut parts = Vec::new();
    for scale in Scale::ALL {
        let full = pick(scale, Method::Full);
        let random = pick(scale, Method::Random);
        let nophy = pick(scale, Method::NoPhy);
        let a = full.median_best_pue < random.median_best_pue;
        let b = full.mean_gsr > random.mean_gsr;
        let c = full.median_best_pue <= nophy.median_best_pue;
        ok &= a && b && c && full.runs as u64 >= BENCH_SEEDS;
        parts.push(format!(
            "{}: PUE full {:.4} / random {:.4} / no-phy {:.4}, GSR full {:.3} / random {:.3}{}",
            scale.label(),
            full.median_best_pue,
            random.median_best_pue,
            nophy.median_best_pue,
            full.mean_gsr,
            random.mean_gsr,
            if a && b && c { "" } else { " (violated)" }
        ));
    }
    verdict(
        5,
        "directional comparison",
        ok,
        &format!("{BENCH_SEEDS} seeds per scale in {elapsed:.1?}; {}", parts.join("; ")),
    );
}

#[test]
fn criterion_6_loop_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let len = rng.random_range(0..60);
        let cap = rng.random_range(1..30);
        let k = rng.random_range(0..35);
        let mut heap = EvolutionHeap::with_capacity(cap);
        let mut oracle = Vec::new();
        for i in 0..len {
            let key = f64::from(rng.random_range(0..25u32)) * 0.01 + 1.0;
            heap.push(key, i);
            oracle.push((key, i));
        }
        oracle.sort_by(|a, b| a.0.total_cmp(&b.0));
        oracle.truncate(cap);
        if heap.topk(k) != &oracle[..k.min(oracle.len())] {
            mismatches += 1;
        }
    }
    let (rows, _) = benchmark_rows();
    let mut broken = 0;
    for r in rows {
        let trace: Vec<f64> = r.best_trace.iter().map(|p| p.unwrap_or(f64::INFINITY)).collect();
        if trace.windows(2).any(|w| w[1] > w[0]) {
            broken += 1;
        }
    }
    verdict(
        6,
        "loop invariants",
        mismatches == 0 && broken == 0,
        &format!(
            "heap topk mismatches {mismatches}/10000; non-monotone best traces {broken}/{}",
            rows.len()
        ),
    );
}

#[derive(Debug, PartialEq)]
struct Verdicts {
    syntax: bool,
    geometry: bool,
    power: bool,
    cooling: bool,
    layout: bool,
}

fn inside(outer: (f64, f64, f64, f64), r: (f64, f64, f64, f64)) -> bool {
    let e = 1e-9;
    r.0 >= outer.0 - e && r.1 >= outer.1 - e && r.2 <= outer.2 + e && r.3 <= outer.3 + e
}

fn brute_check(scene: &Scene, library: &AssetLibrary) -> Verdicts {
    let syntax = scene.assets.values().all(|a| library.iter().any(|b| b == a))
        && scene.topology.rooms.keys().all(|r| scene.layout.rooms.contains_key(r));

    let mut geometry = true;
    for (name, lay) in &scene.layout.rooms {
        let gaps = [lay.rack_gap, lay.padding, lay.margin, lay.aisle_gap, lay.acu_gap()];
        if gaps.iter().any(|g| *g < 0.0) || lay.aisle_gap < 1.2 {
            geometry = false;
        }
        let items: Vec<_> = scene.placed.iter().filter(|p| p.room.as_deref() == Some(name)).collect();
        if items.is_empty() {
            continue;
        }
        let geom = &scene.rooms[name];
        let Some(region) = &geom.region else {
            geometry = false;
            continue;
        };
        let band = lay.margin + lay.padding;
        let interior = (band, band, geom.width - band, geom.depth - band);
        let rect = |r: &dcsynth::scene::Rect| (r.x0, r.y0, r.x1, r.y1);
        for p in &items {
            let fp = (p.location.x, p.location.y, p.location.x + p.size.x, p.location.y + p.size.y);
            let zone_ok = if p.category == AssetCategory::Acu {
                inside(rect(&region.acu_strip), fp)
            } else {
                region.rack_rows.iter().any(|r| inside(rect(r), fp))
            };
            if !(inside((0.0, 0.0, geom.width, geom.depth), fp) && inside(interior, fp) && zone_ok) {
                geometry = false;
            }
        }
        for (i, a) in items.iter().enumerate() {
            for b in &items[i + 1..] {
                let e = 1e-9;
                let sep = a.location.x + a.size.x <= b.location.x + e
                    || b.location.x + b.size.x <= a.location.x + e
                    || a.location.y + a.size.y <= b.location.y + e
                    || b.location.y + b.size.y <= a.location.y + e;
                if !sep {
                    geometry = false;
                }
            }
        }
    }

    let server = scene.assets[&scene.servers.model].as_server().unwrap();
    let per_rack = scene.servers.per_rack;
    let mut power = true;
    let mut cooling = true;
    let mut layout = true;
    for room in scene.topology.rooms.values() {
        let mut servers = 0.0;
        for (slot, n) in &room.racks {
            let rack = scene.assets[slot].as_rack().unwrap();
            if f64::from(per_rack) * server.peak_power > rack.power_capacity || per_rack > rack.server_slots {
                power = false;
            }
            servers += f64::from(*n * per_rack);
        }
        let capacity: f64 = room
            .acus
            .iter()
            .map(|(slot, n)| f64::from(*n) * scene.assets[slot].as_acu().unwrap().cooling_capacity)
            .sum();
        if servers * server.peak_power * server.heat_factor > capacity {
            cooling = false;
        }
        let racks: u32 = room.racks.values().sum();
        let acus: u32 = room.acus.values().sum();
        if racks % 4 != 0 || racks < 16 || acus % 2 != 0 || acus < 2 {
            layout = false;
        }
    }
    Verdicts {
        syntax,
        geometry,
        power,
        cooling,
        layout,
    }
}

fn random_small_scene(rng: &mut ChaCha8Rng, library: &AssetLibrary) -> Option<Scene> {
    let pick = |rng: &mut ChaCha8Rng, c: AssetCategory| {
        let ids = library.ids(c);
        ids[rng.random_range(0..ids.len())].clone()
    };
    let mut topology = SceneTopology::default();
    let mut layout = SpatialLayout::default();
    for r in 0..rng.random_range(1..=2) {
        let name = format!("room_{}", r + 1);
        let mut room = RoomTopology::default();
        for _ in 0..rng.random_range(1..=2) {
            let racks = if rng.random_bool(0.5) {
                4 * rng.random_range(2..=8)
            } else {
                rng.random_range(1..=30)
            };
            *room.racks.entry(pick(rng, AssetCategory::Rack)).or_insert(0) += racks;
        }
        let acus = if rng.random_bool(0.6) {
            2 * rng.random_range(1..=4)
        } else {
            rng.random_range(1..=7)
        };
        room.acus.insert(pick(rng, AssetCategory::Acu), acus);
        topology.rooms.insert(name.clone(), room);
        layout.rooms.insert(
            name,
            RoomLayout {
                rack_gap: if rng.random_bool(0.1) { -0.05 } else { rng.random_range(0.0..0.3) },
                padding: rng.random_range(0.0..1.0),
                margin: rng.random_range(0.0..1.5),
                aisle_gap: rng.random_range(0.8..2.5),
                acu_gap: if rng.random_bool(0.5) { None } else { Some(rng.random_range(0.0..1.0)) },
            },
        );
    }
    topology.plant.chilled_water_loop.chillers.insert(pick(rng, AssetCategory::Chiller), 1);
    topology.plant.condenser_water_loop.cooling_towers.insert(pick(rng, AssetCategory::CoolingTower), 1);
    let fill = ServerFill {
        model: pick(rng, AssetCategory::Server),
        per_rack: rng.random_range(4..=40),
    };
    let mut scene = synthesize_scene(&topology, &layout, library, &fill).ok()?;
    if !scene.placed.is_empty() && rng.random_bool(0.3) {
        for _ in 0..rng.random_range(1..=3) {
            let i = rng.random_range(0..scene.placed.len());
            scene.placed[i].location.x += rng.random_range(-1.5..1.5);
            scene.placed[i].location.y += rng.random_range(-1.5..1.5);
        }
    }
    Some(scene)
}

#[test]
fn criterion_7_constraint_checker() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut scenes = 0;
    let mut agree = 0;
    let mut valid = 0;
    let mut first_mismatch = None;
    let mut attempts = 0;
    while scenes < 500 && attempts < 20_000 {
        attempts += 1;
        let library = generate_synthetic_library(6, rng.random());
        let Some(scene) = random_small_scene(&mut rng, &library) else { continue };
        let checked_against = if rng.random_bool(0.1) {
            let drop = scene.topology.slots()[0].1.clone();
            AssetLibrary::from_assets(library.iter().filter(|a| a.id() != drop).cloned()).unwrap()
        } else {
            library
        };
        let report = check_constraints(&scene, &checked_against);
        let got = Verdicts {
            syntax: report.syntax_valid,
            geometry: report.geometry_ok,
            power: report.power_ok,
            cooling: report.cooling_ok,
            layout: report.layout_rules_ok,
        };
        let want = brute_check(&scene, &checked_against);
        scenes += 1;
        if report.is_valid() {
            valid += 1;
        }
        if got == want {
            agree += 1;
        } else if first_mismatch.is_none() {
            first_mismatch = Some(format!("checker {got:?} vs brute force {want:?}"));
        }
    }
    verdict(
        7,
        "constraint checker",
        scenes == 500 && agree == scenes && valid > 0 && valid < scenes,
        &format!(
            "{agree}/{scenes} scenes agree ({valid} valid){}",
            first_mismatch.map(|m| format!("; {m}")).unwrap_or_default()
        ),
    );
}

#[test]
fn criterion_8_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_dcsynth"))
            .args(["design", "--seed", "8", "--iterations", "3", "--samples", "4", "--hours", "24", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        reports.push(std::fs::read(out.join("report.json")).unwrap());
    }
    verdict(
        8,
        "reproducibility",
        !reports[0].is_empty() && reports[0] == reports[1],
        &format!("two design runs, report.json {} bytes each, identical: {}", reports[0].len(), reports[0] == reports[1]),
    );
}

#[test]
fn criterion_9_case_study_week() {
    let library = generate_synthetic_library(20, 9);
    let req = Requirements::for_scale(Scale::SmallEdge);
    let records = synthetic_series(Climate::Tropical, 168, 9);
    let ops = OperationalConditions::diurnal(168);
    let design = RunConfig {
        iterations: 2,
        samples: 3,
        seed: 9,
        ..RunConfig::default()
    };
    let day = &records[..24];
    let report = run(&design, &library, &req, day, &OperationalConditions::diurnal(24)).unwrap();
    let best = report.best.expect("a generated design");
    let scene = synthesize_scene(&best.scene.topology, &best.scene.layout, &library, &best.scene.servers).unwrap();
    let weather = external_conditions(&records).unwrap();
    let started = Instant::now();
    let res = simulate(&scene, &weather, &ops, &SimMode::Evaluate, &PhysicsConfig::default()).unwrap();
    let elapsed = started.elapsed();
    let ok = res.steps.len() == 168
        && res.steps.iter().all(|s| s.pue.is_finite())
        && (1.0..2.0).contains(&res.pue)
        && elapsed < Duration::from_secs(5);
    verdict(
        9,
        "case-study week",
        ok,
        &format!("168 h in {elapsed:.2?}, mean PUE {:.4}, {} failure events", res.pue, res.failures.len()),
    );
}
