use proptest::prelude::*;
use std::sync::Arc;

use tfmlab_core::catalog::{build, NAMES};
use tfmlab_core::grid::{Budget, GridSpec};
use tfmlab_core::mechanism::{bids_under, run_bids, run_honest, Mechanism};
use tfmlab_core::outcome::{canonical_outcome, compute_utilities};
use tfmlab_core::properties::Property;
use tfmlab_core::revelation::{transform_multi, transform_single};
use tfmlab_core::{Bid, Capacity, Identity, Randomness, ValueProfile};

fn mechanism(i: usize, k: usize) -> Arc<dyn Mechanism> {
    let name = NAMES[i % NAMES.len()];
    build(name, Some(k), None)
        .or_else(|_| build(name, None, None))
        .unwrap()
}

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0u32..=20).prop_map(|x| x as f64 * 0.25), 0..6)
}

fn bids() -> impl Strategy<Value = Vec<Bid>> {
    prop::collection::vec(((0u32..4), (0u32..=20), any::<bool>()), 0..7).prop_map(|xs| {
        xs.into_iter()
            .map(|(o, a, miner)| {
                if miner {
                    Bid::fake(
                        Identity {
                            class: tfmlab_core::outcome::OwnerClass::Miner,
                            id: o,
                        },
                        a as f64 * 0.25,
                    )
                } else {
                    Bid::primary(Identity::user(o), a as f64 * 0.25)
                }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn honest_runs_are_feasible_and_rational(i in 0usize..10, k in 1usize..4, v in values()) {
        let m = mechanism(i, k);
        let p = ValueProfile::from_values(&v);
        // run_honest itself rejects individually irrational outcomes.
        let d = run_honest(m.as_ref(), &p, Randomness::default()).unwrap();
        let total: f64 = d.atoms.iter().map(|(_, q)| q).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for (o, _) in &d.atoms {
            prop_assert!(o.check_feasible().is_ok());
            prop_assert!(o.burn() >= -1e-9);
            if let Capacity::Finite(cap) = m.capacity() {
                prop_assert!(o.entries.iter().filter(|e| e.included).count() <= cap);
            }
            let u = compute_utilities(o, &p).unwrap();
            let confirmed: f64 = o.entries.iter().filter(|e| e.confirmed && e.bid.primary)
                .map(|e| p.value(&e.bid.owner).unwrap_or(0.0)).sum();
            // Welfare: user utilities plus miner utility equal confirmed value minus burn.
            prop_assert!((u.social_welfare - (confirmed - o.burn())).abs() < 1e-9);
        }
    }

    #[test]
    fn arbitrary_bid_vectors_stay_feasible(i in 0usize..10, k in 1usize..4, b in bids()) {
        let m = mechanism(i, k);
        let d = run_bids(m.as_ref(), &b, Randomness::default()).unwrap();
        for (o, _) in &d.atoms {
            prop_assert!(o.check_feasible().is_ok());
            prop_assert!(o.miner_revenue <= o.total_payment() + 1e-9);
        }
    }

    #[test]
    fn canonical_form_is_idempotent(i in 0usize..10, v in values()) {
        let m = mechanism(i, 2);
        let p = ValueProfile::from_values(&v);
        let c = canonical_outcome(&run_bids(m.as_ref(), &bids_under(m.bidding_rule(), &p), Randomness::default()).unwrap());
        prop_assert_eq!(c.canonical(), c);
    }

    #[test]
    fn transforms_never_exceed_capacity(k in 1usize..3, v in values()) {
        let p = ValueProfile::from_values(&v);
        for m in [
            transform_single(build("signal_oca", Some(k), None).unwrap()).unwrap(),
            transform_multi(build("multi_bid_signal", Some(k), Some(2.0)).unwrap()).unwrap(),
        ] {
            let d = run_bids(&m, &bids_under(m.bidding_rule(), &p), Randomness::default()).unwrap();
            for (o, _) in &d.atoms {
                prop_assert!(o.entries.iter().filter(|e| e.included).count() <= k);
            }
        }
    }

    #[test]
    fn grid_and_budget_text_round_trips(n in 1usize..4, hi in 1usize..5, seed in 0u64..100, fakes in 0usize..4) {
        let g = GridSpec { seed, ..GridSpec::default() }.with_users(1, n);
        let g = GridSpec { values: (0..=hi).map(|x| x as f64 * 0.5).collect(), ..g };
        prop_assert_eq!(g.to_string().parse::<GridSpec>().unwrap(), g);
        let b = Budget { fakes: Some(fakes), ..Budget::default() };
        prop_assert_eq!(b.to_string().parse::<Budget>().unwrap(), b);
    }
}

#[test]
fn property_selectors_round_trip() {
    for s in ["uic", "scp:3", "bayes:scp:2", "oca:coordinated"] {
        assert_eq!(s.parse::<Property>().unwrap().to_string(), s);
    }
}
