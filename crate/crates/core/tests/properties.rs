use proptest::prelude::*;

use dcsynth::assets::{generate_synthetic_library, AssetLibrary};
use dcsynth::evolution::{gsr, EvolutionHeap};
use dcsynth::generation::{
    ea_mutate, heuristic_generate, parse_candidate, random_generate, Candidate, DesignContext, Requirements, Scale,
};
use dcsynth::scene::{check_constraints, synthesize_scene};
use dcsynth::weather::{external_conditions, synthetic_series, Climate, ExternalConditions};

fn library() -> AssetLibrary {
    generate_synthetic_library(8, 21)
}

fn weather() -> Vec<ExternalConditions> {
    external_conditions(&synthetic_series(Climate::Temperate, 24, 21)).unwrap()
}

fn changed_genes(a: &Candidate, b: &Candidate) -> usize {
    let (ta, la) = (a.topology.as_ref().unwrap(), a.layout.as_ref().unwrap());
    let (tb, lb) = (b.topology.as_ref().unwrap(), b.layout.as_ref().unwrap());
    let mut n = 0;
    for (room, ra) in &ta.rooms {
        let rb = &tb.rooms[room];
        n += usize::from(ra.racks != rb.racks) + usize::from(ra.acus != rb.acus);
        let (ga, gb) = (la.rooms[room], lb.rooms[room]);
        n += usize::from(ga.rack_gap != gb.rack_gap)
            + usize::from(ga.padding != gb.padding)
            + usize::from(ga.margin != gb.margin)
            + usize::from(ga.aisle_gap != gb.aisle_gap)
            + usize::from(ga.acu_gap() != gb.acu_gap());
    }
    n + usize::from(ta.chillers() != tb.chillers()) + usize::from(ta.towers() != tb.towers())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ea_mutation_changes_one_gene(parent_seed in 0u64..1000, seed in any::<u64>()) {
        let lib = library();
        let w = weather();
        let req = Requirements::for_scale(Scale::SmallEdge);
        let ctx = DesignContext::new(&req, &lib, &w).unwrap();
        let parent = heuristic_generate(&ctx, parent_seed, 1).unwrap().remove(0);
        let child = ea_mutate(&parent, &lib, seed).unwrap();
        prop_assert_eq!(changed_genes(&parent, &child), 1);
        let t = child.topology.as_ref().unwrap();
        prop_assert_eq!(t.rooms.keys().collect::<Vec<_>>(), parent.topology.as_ref().unwrap().rooms.keys().collect::<Vec<_>>());
        for room in t.rooms.values() {
            let acus: u32 = room.acus.values().sum();
            let racks: u32 = room.racks.values().sum();
            prop_assert!(acus >= 2 && acus % 2 == 0, "acus {}", acus);
            prop_assert!(racks >= 4 && racks % 4 == 0, "racks {}", racks);
        }
        prop_assert!(t.chillers().values().sum::<u32>() >= 1);
        prop_assert!(t.towers().values().sum::<u32>() >= 1);
    }

    #[test]
    fn design_text_parses_back(seed in any::<u64>(), random in any::<bool>()) {
        let lib = library();
        let w = weather();
        let req = Requirements::for_scale(Scale::SmallEdge);
        let ctx = DesignContext::new(&req, &lib, &w).unwrap();
        let c = if random {
            random_generate(&ctx, seed, 1).unwrap().remove(0)
        } else {
            heuristic_generate(&ctx, seed, 1).unwrap().remove(0)
        };
        let back = parse_candidate(&format!("Sure.\n{}\nDone.", c.design_text()));
        prop_assert!(back.parse_ok);
        prop_assert_eq!(&back.topology, &c.topology);
        prop_assert_eq!(&back.layout, &c.layout);
    }

    #[test]
    fn heap_matches_sorted_prefix(keys in prop::collection::vec(0u8..20, 0..80), cap in 1usize..40, k in 0usize..50) {
        let mut heap = EvolutionHeap::with_capacity(cap);
        for (i, key) in keys.iter().enumerate() {
            heap.push(f64::from(*key) / 10.0, i);
        }
        let mut oracle: Vec<(f64, usize)> = keys.iter().enumerate().map(|(i, key)| (f64::from(*key) / 10.0, i)).collect();
        oracle.sort_by(|a, b| a.0.total_cmp(&b.0));
        oracle.truncate(cap);
        let want = &oracle[..k.min(oracle.len())];
        prop_assert_eq!(heap.topk(k), want);
        prop_assert_eq!(heap.len(), oracle.len());
    }

    #[test]
    fn gsr_is_a_fraction(v in prop::collection::vec(any::<bool>(), 1..50)) {
        let g = gsr(&v).unwrap();
        prop_assert!((0.0..=1.0).contains(&g));
        prop_assert_eq!((g * v.len() as f64).round() as usize, v.iter().filter(|b| **b).count());
    }
}

#[test]
fn heuristic_designs_beat_random_ones() {
    let lib = library();
    let w = weather();
    let req = Requirements::for_scale(Scale::SmallEdge);
    let ctx = DesignContext::new(&req, &lib, &w).unwrap();
    let fill = req.server_fill(&lib).unwrap();
    let verdicts = |cands: Vec<Candidate>| -> Vec<bool> {
        cands
            .iter()
            .map(|c| {
                synthesize_scene(c.topology.as_ref().unwrap(), c.layout.as_ref().unwrap(), &lib, &fill)
                    .map(|s| check_constraints(&s, &lib).is_valid())
                    .unwrap_or(false)
            })
            .collect()
    };
    let h = gsr(&verdicts(heuristic_generate(&ctx, 0, 40).unwrap())).unwrap();
    let r = gsr(&verdicts(random_generate(&ctx, 0, 40).unwrap())).unwrap();
    assert!(h > 0.8, "heuristic gsr {h}");
    assert!(r < h, "random {r} vs heuristic {h}");
}

#[test]
fn empty_batch_has_no_gsr() {
    assert!(gsr(&[]).is_err());
}
