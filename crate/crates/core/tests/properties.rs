use std::sync::Arc;

use proptest::prelude::*;

use dilute_saw::bridges::{a0_census_bound, a0_census_bound_exact, audit_selections, detect_bridges, overlap_audit};
use dilute_saw::environment::{relevant_edges, BondField, EdgeIndex, Environment, FiniteEnvironment};
use dilute_saw::experiments::{pc_expansion, threshold_bound};
use dilute_saw::lattice::{canonical_edge, graph_distance, neighbors, Site};
use dilute_saw::paths::count_open_saw;
use dilute_saw::refwalks::{
    rate_function, sample_uniform_saw, u_statistics_under, RateFunctionInput, WalkKind, WalkLaw,
};
use dilute_saw::rng;
use dilute_saw::sizebias::{make_spined, tilde_partition};

fn arb_site() -> impl Strategy<Value = Site> {
    (2usize..=5).prop_flat_map(|d| prop::collection::vec(-50i64..=50, d)).prop_map(|c| Site::new(c).unwrap())
}

fn saw(d: usize, n: usize, seed: u64) -> dilute_saw::paths::Path {
    let mut r = rng::stream(seed, rng::purpose::WALK, 0);
    sample_uniform_saw(d, n, &mut r, 10_000_000).unwrap().path
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn neighbors_are_adjacent(s in arb_site()) {
        let nb = neighbors(&s);
        prop_assert_eq!(nb.len(), 2 * s.dim());
        for t in &nb {
            prop_assert_eq!(graph_distance(&s, t).unwrap(), 1);
            let e = canonical_edge(&s, t).unwrap();
            prop_assert_eq!(canonical_edge(t, &s).unwrap(), e.clone());
            let (a, b) = e.endpoints();
            prop_assert!((a == s && b == *t) || (a == *t && b == s));
        }
    }

    #[test]
    fn environment_is_a_pure_function(seed in any::<u64>(), p in 0.0f64..=1.0, s in arb_site()) {
        let (e1, e2) = (Environment::new(p, seed).unwrap(), Environment::new(p, seed).unwrap());
        for axis in 0..s.dim() {
            prop_assert_eq!(e1.is_open_raw(s.coords(), axis), e2.is_open_raw(s.coords(), axis));
        }
    }

    #[test]
    fn coupling_is_monotone(seed in any::<u64>(), p in 0.0f64..=1.0, q in 0.0f64..=1.0, s in arb_site()) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let (a, b) = (Environment::new(lo, seed).unwrap(), Environment::new(hi, seed).unwrap());
        for axis in 0..s.dim() {
            prop_assert!(!a.is_open_raw(s.coords(), axis) || b.is_open_raw(s.coords(), axis));
        }
    }

    #[test]
    fn partition_function_monotone_in_p(seed in any::<u64>(), p in 0.2f64..=0.9, dp in 0.0f64..=0.1) {
        let origin = Site::origin(2);
        let lo = count_open_saw(&Environment::new(p, seed).unwrap(), 7, &origin).unwrap();
        let hi = count_open_saw(&Environment::new(p + dp, seed).unwrap(), 7, &origin).unwrap();
        prop_assert!(lo <= hi);
    }

    #[test]
    fn opening_an_edge_never_decreases_z(mask in any::<u64>(), flip in 0usize..16) {
        let index = Arc::new(EdgeIndex::new(relevant_edges(2, &Site::origin(2))).unwrap());
        prop_assert_eq!(index.len(), 16);
        let mask = mask & 0xffff;
        let before = FiniteEnvironment::from_mask(index.clone(), mask & !(1 << flip));
        let after = FiniteEnvironment::from_mask(index, mask | (1 << flip));
        let origin = Site::origin(2);
        prop_assert!(count_open_saw(&before, 2, &origin).unwrap() <= count_open_saw(&after, 2, &origin).unwrap());
    }

    #[test]
    fn rate_function_is_convex(p in 0.05f64..0.95, x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
        let h = |t: f64| rate_function(RateFunctionInput::new(p, t).unwrap());
        prop_assert!(h((x + y) / 2.0) <= (h(x) + h(y)) / 2.0 + 1e-12);
        prop_assert!(h(p).abs() < 1e-12);
    }

    #[test]
    fn threshold_above_expansion(d in 2usize..500, eps in 0.0f64..0.579) {
        prop_assert!(threshold_bound(d, eps).unwrap() > pc_expansion(d).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn spined_partition_dominates(seed in any::<u64>(), p in 0.0f64..=1.0) {
        let spine = saw(2, 6, seed);
        let env = Environment::new(p, seed ^ 0x5eed).unwrap();
        let z = count_open_saw(&env, 6, &Site::origin(2)).unwrap();
        let zt = tilde_partition(&make_spined(&env, &spine).unwrap(), 6).unwrap();
        prop_assert!(zt >= z.max(1u32.into()));
    }

    #[test]
    fn a0_fraction_bound(seed in any::<u64>(), d in 2usize..=5, n in 4usize..=60) {
        let spine = saw(d, n, seed);
        let env = Environment::new(0.5, seed).unwrap();
        let sets = detect_bridges(&env, &spine).unwrap();
        let a0 = sets.a0.len() as i64;
        prop_assert!(a0 >= a0_census_bound_exact(&spine).unwrap());
        prop_assert!(a0 + 1 >= a0_census_bound(&spine).unwrap());
    }

    #[test]
    fn injection_is_valid(seed in any::<u64>(), d in 3usize..=5, n in 10usize..=60, p in 0.1f64..=0.5) {
        let spine = saw(d, n, seed);
        let env = Environment::new(p, seed.rotate_left(7)).unwrap();
        let sets = detect_bridges(&env, &spine).unwrap();
        let spined = make_spined(&env, &spine).unwrap();
        let audit = audit_selections(&spined, &sets, 1 << 10).unwrap();
        prop_assert!(audit.passed(), "{:?}", audit.violations.first());
        prop_assert!(overlap_audit(&spine, &sets).is_empty());
    }

    #[test]
    fn trials_reproducible_from_index(seed in any::<u64>(), k in 1u64..20, extra in 0u64..20) {
        let law = WalkLaw::new(WalkKind::Pi2, 3, 15).unwrap();
        let short = u_statistics_under(law, k, seed).unwrap();
        let long = u_statistics_under(law, k + extra, seed).unwrap();
        prop_assert_eq!(&long[..k as usize], &short[..]);
    }
}
