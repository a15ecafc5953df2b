mod common;

use proptest::prelude::*;

use domsel::corpus::{merge_domains, Domain};
use domsel::similarity::{lo, tis, triple, tvc};

use common::{domain_strategy, sent};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn indicators_stay_in_unit_interval(a in domain_strategy("a"), b in domain_strategy("b")) {
        let t = triple(&a, &b, &[&a, &b]).unwrap();
        for v in t.as_array() {
            prop_assert!((0.0..=1.0).contains(&v), "{:?}", t);
        }
    }
}

proptest! {
    #[test]
    fn coverage_grows_under_merging(a in domain_strategy("a"), b in domain_strategy("b"), t in domain_strategy("t")) {
        let ab = merge_domains(&[&a, &b], "ab").unwrap();
        prop_assert!(tvc(&ab, &t).unwrap() >= tvc(&a, &t).unwrap().max(tvc(&b, &t).unwrap()));
        prop_assert!(lo(&ab, &t).unwrap() >= lo(&a, &t).unwrap().max(lo(&b, &t).unwrap()));
    }

    #[test]
    fn tis_is_symmetric(a in domain_strategy("a"), b in domain_strategy("b"), c in domain_strategy("c")) {
        let u = [&a, &b, &c];
        let ab = tis(&a, &b, &u).unwrap();
        let ba = tis(&b, &a, &u).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
    }
}

#[test]
fn tvc_and_lo_are_asymmetric() {
    let small = Domain::new("small", vec![sent("to paris", "O B-city")]).unwrap();
    let large = Domain::new(
        "large",
        vec![sent("to paris", "O B-city"), sent("play jazz today", "O B-genre B-date")],
    )
    .unwrap();
    assert_eq!(tvc(&large, &small).unwrap(), 1.0);
    assert_eq!(tvc(&small, &large).unwrap(), 2.0 / 5.0);
    assert_eq!(lo(&large, &small).unwrap(), 1.0);
    assert_eq!(lo(&small, &large).unwrap(), 1.0 / 3.0);
}
