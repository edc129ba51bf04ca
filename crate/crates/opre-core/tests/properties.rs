use std::collections::HashSet;

use opre_core::contact::{run_contact, verify_infection_path, Contacts, ContactInstance, Graph, InfectionPath, PointSetWindow};
use opre_core::couplings::{random_small_instance, replay_path, sample_open_paths, CouplingKind};
use opre_core::{
    derive_seed, eval_kernel, reach, sample_opre, wilson_ci, ConnectionFamily, Ground, KernelKind, LatticeWindow,
    OpenConfiguration, Seed, StretchEnvironment,
};
use proptest::prelude::*;

fn config_from_bits(window: LatticeWindow, bits: &[bool], salt: usize) -> OpenConfiguration {
    let n = bits.len();
    let cols = window.columns();
    let idx = move |t: u32, c: u32, k: usize| (t as usize * cols * 3 + c as usize * 3 + k + salt) % n;
    OpenConfiguration::from_fn(window, |t, c| bits[idx(t, c, 0)], |t, c| bits[idx(t, c, 1)], |t, c| bits[idx(t, c, 2)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn reach_is_monotone_in_the_configuration(
        t_max in 1u32..12,
        x_max in 1u32..12,
        bits in prop::collection::vec(any::<bool>(), 64..256),
        extra in prop::collection::vec(any::<bool>(), 64..256),
        src in 0u32..12,
    ) {
        let w = LatticeWindow::plain(t_max, x_max).unwrap();
        let small = config_from_bits(w, &bits, 0);
        let add = config_from_bits(w, &extra, 7);
        let big = OpenConfiguration::from_fn(
            w,
            |t, c| small.vertex_open(t, c) || add.vertex_open(t, c),
            |t, c| small.up_open(t, c) || add.up_open(t, c),
            |t, c| small.down_open(t, c) || add.down_open(t, c),
        );
        prop_assert!(small.is_subset_of(&big));
        let c0 = (src % (x_max + 1)) & !1;
        let a = reach(&small, &[(0, c0)], t_max);
        let b = reach(&big, &[(0, c0)], t_max);
        for t in 0..=t_max {
            for c in 0..=x_max {
                prop_assert!(!a.contains(t, c) || b.contains(t, c));
            }
        }
    }

    #[test]
    fn sampling_is_nested_in_the_open_probability(
        p_lo in 0.0f64..1.0,
        dp in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let p_hi = (p_lo + dp).min(1.0);
        let env = StretchEnvironment::new(vec![1.0; 20], vec![1.0; 19]).unwrap();
        let lo = ConnectionFamily::constant(p_lo);
        let hi = ConnectionFamily::constant(p_hi);
        let a = sample_opre(Ground::Plain(&env), &lo, &lo, 16, 19, Seed(seed)).unwrap();
        let b = sample_opre(Ground::Plain(&env), &hi, &hi, 16, 19, Seed(seed)).unwrap();
        prop_assert!(a.is_subset_of(&b));
    }

    #[test]
    fn wilson_interval_brackets_the_frequency(n in 1u64..5000, frac in 0.0f64..=1.0, level in 0.5f64..0.999) {
        let k = ((n as f64) * frac).round() as u64;
        let (lo, hi) = wilson_ci(k, n, level).unwrap();
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
        let (lo2, hi2) = wilson_ci(k, n, (level + 1.0) / 2.0).unwrap();
        prop_assert!(lo2 <= lo + 1e-15 && hi2 >= hi - 1e-15);
    }

    #[test]
    fn derived_seeds_are_distinct(master in any::<u64>(), start in any::<u64>()) {
        let mut seen = HashSet::new();
        for r in 0..256u64 {
            prop_assert!(seen.insert(derive_seed(master, start.wrapping_add(r), "stream")));
        }
        prop_assert_ne!(derive_seed(master, start, "a"), derive_seed(master, start, "b"));
    }

    #[test]
    fn kernels_decrease_in_stretch_and_increase_in_intensity(
        lambda in 0.01f64..30.0,
        bump in 0.0f64..10.0,
        s in 0.0f64..200.0,
        ds in 0.0f64..50.0,
        l in 1u32..8,
    ) {
        for kind in [KernelKind::Power, KernelKind::CpprUniform, KernelKind::CpprBernoulli, KernelKind::CpreEdge { l }] {
            let f = ConnectionFamily::new(kind, lambda);
            let g = ConnectionFamily::new(kind, lambda + bump);
            let a = eval_kernel(&f, s).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(eval_kernel(&f, s + ds).unwrap() <= a + 1e-15);
            prop_assert!(eval_kernel(&g, s).unwrap() >= a - 1e-15);
        }
    }
}

/// Every path through a finite contact structure, checked one by one.
fn brute_force_infected(inst: &ContactInstance, v: usize, t: f64, sets: &[PointSetWindow]) -> bool {
    let mut stack: Vec<InfectionPath> = inst
        .j0
        .iter()
        .map(|&s| InfectionPath { vertices: vec![s], times: vec![], t })
        .collect();
    let max_steps: usize = sets.iter().map(|s| s.len()).sum();
    while let Some(p) = stack.pop() {
        let last = *p.vertices.last().unwrap();
        if last == v && verify_infection_path(inst, &p) {
            return true;
        }
        if p.times.len() == max_steps {
            continue;
        }
        let prev = p.times.last().copied().unwrap_or(inst.t_start);
        for (e, u) in inst.graph.neighbors(last).into_iter().flatten() {
            for &tc in sets[e].points() {
                if tc < prev || tc > t {
                    continue;
                }
                let mut q = p.clone();
                q.vertices.push(u);
                q.times.push(tc);
                let probe = InfectionPath { vertices: q.vertices.clone(), times: q.times.clone(), t: tc };
                if verify_infection_path(inst, &probe) {
                    stack.push(q);
                }
            }
        }
    }
    false
}

fn point_set(raw: &[f64], horizon: f64) -> PointSetWindow {
    let mut pts: Vec<f64> = raw.iter().map(|x| x * horizon).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    PointSetWindow::new(0.0, horizon, pts).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn contact_trace_matches_path_enumeration(
        n in 2usize..5,
        contacts in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 0..3), 4),
        recoveries in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 0..3), 5),
        start in 0usize..5,
        probes in prop::collection::vec(0.0f64..1.0, 6),
    ) {
        let horizon = 4.0;
        let graph = Graph::Line { n };
        let sets: Vec<PointSetWindow> = contacts[..n - 1].iter().map(|c| point_set(c, horizon)).collect();
        let recs: Vec<PointSetWindow> = recoveries[..n].iter().map(|r| point_set(r, horizon)).collect();
        let inst = ContactInstance::new(graph, Contacts::Explicit { sets: sets.clone() }, recs, vec![start % n], horizon).unwrap();
        let trace = run_contact(&inst);
        for &q in &probes {
            let t = q * horizon;
            for v in 0..n {
                let lib = trace.infected_at(v, t);
                prop_assert_eq!(lib, brute_force_infected(&inst, v, t, &sets), "vertex {} at {}", v, t);
                if lib {
                    let cert = trace.certificate(v, t).unwrap();
                    prop_assert!(verify_infection_path(&inst, &cert));
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn open_paths_replay_as_infection_paths(kind_idx in 0usize..4, seed in any::<u64>()) {
        let kind = CouplingKind::ALL[kind_idx];
        let ci = random_small_instance(kind, Seed(seed)).unwrap();
        let cfg = ci.configuration();
        let mut rng = Seed(seed).child("paths").rng();
        for path in sample_open_paths(&cfg, (0, 0), 20, &mut rng) {
            let ip = replay_path(&ci.map, &ci.contact, &path);
            prop_assert!(ip.as_ref().is_some_and(|p| verify_infection_path(&ci.contact, p)), "{:?} path {:?}", kind, path);
        }
    }
}
