use tfmlab_core::catalog::build;
use tfmlab_core::grid::{Budget, GridSpec};
use tfmlab_core::mechanism::{bids_under, run_bids, BidRule, Mechanism};
use tfmlab_core::outcome::{canonical_user_outcome, Identity, ValueProfile};
use tfmlab_core::properties::{
    check_cscp, check_mic, check_oca_with_sigma, check_uic, OcaVariant, SigmaFamily, SigmaStrategy, Verdict,
};
use tfmlab_core::revelation::{outcome_equivalence_check, transform_multi, transform_single};
use tfmlab_core::Randomness;

fn small_grid() -> GridSpec {
    GridSpec {
        values: vec![0.0, 1.0, 2.5, 4.0, 7.0],
        ..GridSpec::default()
    }
}

#[test]
fn signal_oca_single_transform_matches_on_4_7() {
    let src = build("signal_oca", Some(1), None).unwrap();
    let derived = transform_single(src.clone()).unwrap();
    assert_eq!(derived.bidding_rule(), BidRule::Truthful);
    let p = ValueProfile::from_values(&[4.0, 7.0]);
    let rand = Randomness::default();
    let a = run_bids(src.as_ref(), &bids_under(src.bidding_rule(), &p), rand).unwrap();
    let b = run_bids(&derived, &bids_under(BidRule::Truthful, &p), rand).unwrap();
    // Both signals fall in [0, 1), so one of the two users is chosen uniformly.
    assert_eq!(a.atoms.len(), 2);
    assert_eq!(canonical_user_outcome(&a, &p), canonical_user_outcome(&b, &p));
}

#[test]
fn equivalence_on_whole_grid() {
    for (name, k, r, multi) in [
        ("signal_oca", Some(1), None, false),
        ("signal_oca", Some(2), None, false),
        ("posted_price_random_burn", Some(2), Some(1.0), false),
        ("second_price_reserve_burn", Some(1), Some(0.5), false),
        ("even_auction", None, None, true),
    ] {
        let src = build(name, k, r).unwrap();
        let derived = if multi {
            transform_multi(src.clone()).unwrap()
        } else {
            transform_single(src.clone()).unwrap()
        };
        let rep = outcome_equivalence_check(src.as_ref(), &derived, &small_grid()).unwrap();
        assert_eq!(rep.verdict, Verdict::HoldsOnGrid, "{name}: {:?}", rep.mismatch);
        assert!(rep.profiles_checked > 10);
    }
}

#[test]
fn even_auction_multi_on_4_7() {
    let derived = transform_multi(build("even_auction", None, None).unwrap()).unwrap();
    let p = ValueProfile::from_values(&[4.0, 7.0]);
    let d = run_bids(
        &derived,
        &bids_under(BidRule::Truthful, &p),
        Randomness::default(),
    )
    .unwrap();
    assert_eq!(d.atoms.len(), 1);
    let o = &d.atoms[0].0;
    let welfare: f64 = o
        .entries
        .iter()
        .filter(|e| e.confirmed)
        .map(|e| p.value(&e.bid.owner).unwrap())
        .sum::<f64>()
        - o.burn();
    assert_eq!(welfare, 11.0);
    assert_eq!(o.entries.len(), 2);
    assert!(o.entries.iter().all(|e| e.included && e.confirmed));
}

#[test]
fn transformed_signal_oca_loses_oca() {
    for k in [1usize, 2] {
        let derived = transform_single(build("signal_oca", Some(k), None).unwrap()).unwrap();
        let grid = small_grid().with_users(k + 1, k + 1);
        for (label, rule) in SigmaFamily::affine_only().members(&derived) {
            let sigma = SigmaStrategy::new(rule, label.clone(), &grid.values);
            let rep = check_oca_with_sigma(&derived, &sigma, OcaVariant::Strict, &grid, &Budget::default())
                .unwrap();
            assert_eq!(rep.verdict, Verdict::Violated, "k={k} σ={label}");
        }
    }
}

#[test]
fn property_verdicts_survive_the_transform() {
    let budget = Budget::default();
    let cases: Vec<(std::sync::Arc<dyn Mechanism>, bool)> = vec![
        (build("signal_oca", Some(1), None).unwrap(), false),
        (build("first_price", Some(1), None).unwrap(), false),
        (build("even_auction", None, None).unwrap(), true),
    ];
    for (src, multi) in cases {
        let derived = if multi {
            transform_multi(src.clone()).unwrap()
        } else {
            transform_single(src.clone()).unwrap()
        };
        // Annotated block search is costly; keep the unbounded case small.
        let grid = if multi {
            GridSpec {
                values: vec![0.0, 1.0, 4.0, 7.0],
                ..GridSpec::default()
            }
            .with_users(1, 3)
        } else {
            small_grid()
        };
        let before = [
            check_uic(src.as_ref(), &grid, &budget).unwrap().verdict,
            check_mic(src.as_ref(), &grid, &budget).unwrap().verdict,
            check_cscp(src.as_ref(), 1, &grid, &budget).unwrap().verdict,
            check_cscp(src.as_ref(), 2, &grid, &budget).unwrap().verdict,
        ];
        let after = [
            check_uic(&derived, &grid, &budget).unwrap().verdict,
            check_mic(&derived, &grid, &budget).unwrap().verdict,
            check_cscp(&derived, 1, &grid, &budget).unwrap().verdict,
            check_cscp(&derived, 2, &grid, &budget).unwrap().verdict,
        ];
        assert_eq!(before, after, "{}", src.name());
    }
}

#[test]
fn miner_cannot_use_annotations_against_even_auction() {
    let derived = transform_multi(build("even_auction", None, None).unwrap()).unwrap();
    let grid = GridSpec::profiles(vec![vec![4.0, 7.0], vec![3.0]]);
    let rep = check_mic(&derived, &grid, &Budget::default()).unwrap();
    assert_eq!(rep.verdict, Verdict::HoldsOnGrid);
    assert!(
        derived
            .annotation_choices(&tfmlab_core::Bid::primary(Identity::user(0), 4.0))
            .len()
            == 3
    );
}
