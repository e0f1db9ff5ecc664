use proptest::prelude::*;

use super::*;
use crate::arch::proptests::arch_from_seed;
use crate::arch::{parse_arch, serialize_arch};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn bounds_survive_serialization(seed in any::<u64>()) {
        let arch = arch_from_seed(seed);
        let again = parse_arch(&serialize_arch(&arch)).unwrap();
        let q = BoundQuery::new(1 << 20, 0.05);
        let c = PaperConstants::default();
        prop_assert_eq!(eval_bounds(&arch, &q, &c).ok(), eval_bounds(&again, &q, &c).ok());
    }
}

/// `√((θρ(n)+L)/(2n))` with `ρ(n) = ρ(1) + ln n` falls in `n` exactly when
/// `θρ(n) + L > θ`; just above the root of `ρ` it still rises.
#[test]
fn risk_bound_falls_once_log_term_dominates() {
    let arch = crate::model::tests::a1();
    let c = PaperConstants::default();
    let at = |n: u64| eval_bounds(&arch, &BoundQuery::new(n, 0.05), &c).unwrap();
    assert!(at(2048).gen_bound > at(1024).gen_bound);
    let mut prev = f64::INFINITY;
    for n in (10..30).map(|e| 1u64 << e) {
        let b = at(n);
        let falling = b.theta as f64 * b.rho + (4.0f64 / 0.05).ln() > b.theta as f64;
        if falling {
            assert!(b.gen_bound < prev, "n={n}");
        }
        prev = b.gen_bound;
    }
}
