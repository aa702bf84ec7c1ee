//! Cross-checks between independent implementations: exact field signs
//! against dyadic enclosures, and certified interval expansion against
//! exact expansion.

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use theta_core::dyadic::quad_sign_by_interval;
use theta_core::expansion::{expand, Mode, Point, ThetaParams};
use theta_core::qfield::QuadNumber;

#[test]
fn field_sign_matches_dyadic_enclosure() {
    let radicands = [2u64, 3, 5, 7, 10];
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut decided = 0usize;
    for _ in 0..10_000 {
        let m = *radicands.choose(&mut rng).unwrap();
        let a = BigRational::new(
            BigInt::from(rng.gen_range(-50i64..=50)),
            BigInt::from(rng.gen_range(1i64..=40)),
        );
        let b = BigRational::new(
            BigInt::from(rng.gen_range(-35i64..=35)),
            BigInt::from(rng.gen_range(1i64..=40)),
        );
        let q = QuadNumber::new(a.clone(), b.clone(), m).unwrap();
        match quad_sign_by_interval(&a, &b, m, 64, 256) {
            Some(sign) => {
                assert_eq!(q.sign(), sign, "a = {a}, b = {b}, m = {m}");
                decided += 1;
            }
            // with these coefficient sizes, 256 bits only fail on exact zero
            None => assert_eq!(q.sign(), 0, "a = {a}, b = {b}, m = {m}"),
        }
    }
    assert!(decided > 9_000, "only {decided} samples had a certified sign");
}

#[test]
fn interval_mode_reproduces_exact_digits() {
    let radicands = [2u64, 3, 5];
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..40 {
        let m = radicands[trial % radicands.len()];
        let params = ThetaParams::new(m).unwrap();
        let num = rng.gen_range(1i64..=440);
        let den = rng.gen_range(1000i64..=2000);
        let q = QuadNumber::from_ratio(num, den, m).unwrap();

        let exact = expand(&Point::Exact(q.clone()), 60, &params, &Mode::Exact).unwrap();
        let interval = expand(&Point::Exact(q), 60, &params, &Mode::interval_default()).unwrap();
        assert_eq!(exact.digits, interval.digits, "start {num}/{den}, m = {m}");
        assert_eq!(exact.terminated, interval.terminated, "start {num}/{den}, m = {m}");
    }
}
