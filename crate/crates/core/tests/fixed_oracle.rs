use num_bigint::BigInt;
use pointode_core::{Fixed24, FixedFormat, Rounding};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FRAC: u32 = 16;
const MAX: i64 = (1 << 23) - 1;
const MIN: i64 = -(1 << 23);

fn clamp(v: &BigInt) -> i64 {
    if *v > BigInt::from(MAX) {
        MAX
    } else if *v < BigInt::from(MIN) {
        MIN
    } else {
        i64::try_from(v).unwrap()
    }
}

/// `round_half_even(num / 2^FRAC)` on arbitrary-precision integers.
fn round_shift(num: &BigInt) -> BigInt {
    let den = BigInt::from(1u64 << FRAC);
    let mut q = num / &den;
    let mut r = num - &q * &den;
    // BigInt division truncates toward zero; move to floor semantics.
    if r < BigInt::from(0) {
        q -= 1;
        r += &den;
    }
    let twice = &r * 2;
    if twice > den || (twice == den && (&q % 2) != BigInt::from(0)) {
        q += 1;
    }
    q
}

fn random_raw(rng: &mut ChaCha8Rng) -> i32 {
    // Mix full-range values with small ones so both saturation and rounding
    // paths are exercised.
    match rng.gen_range(0..3) {
        0 => rng.gen_range(MIN..=MAX) as i32,
        1 => rng.gen_range(-(1 << 17)..=(1 << 17)),
        _ => rng.gen_range(-300..=300),
    }
}

#[test]
fn add_and_mul_match_big_integer_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..1_000_000 {
        let (a, b) = (random_raw(&mut rng), random_raw(&mut rng));
        let (fa, fb) = (Fixed24::from_raw(a).unwrap(), Fixed24::from_raw(b).unwrap());
        let (ba, bb) = (BigInt::from(a), BigInt::from(b));
        let sum = clamp(&(&ba + &bb));
        assert_eq!(fa.saturating_add(fb).raw() as i64, sum, "{a} + {b}");
        let prod = clamp(&round_shift(&(&ba * &bb)));
        assert_eq!(fa.saturating_mul(fb).raw() as i64, prod, "{a} * {b}");
    }
}

#[test]
fn recip_sqrt_within_two_ulp_everywhere() {
    let ulp = 1.0 / 65536.0;
    for raw in (1..=MAX as i32).step_by(7).chain([1, 2, 3, MAX as i32]) {
        let x = Fixed24::from_raw(raw).unwrap();
        let got = x.recip_sqrt().unwrap().decode();
        let want = (1.0 / x.decode().sqrt()).min(Fixed24::MAX.decode());
        assert!((got - want).abs() <= 2.0 * ulp, "raw {raw}: {got} vs {want}");
    }
}

#[test]
fn floor_rounding_breaks_the_oracle() {
    let floor = FixedFormat::Q8_16.with_rounding(Rounding::Floor);
    let nearest = FixedFormat::Q8_16;
    // 3 * 2^-16 * 0.5 = 1.5 ulp: nearest-even gives 2, floor gives 1.
    let half = nearest.encode(0.5).unwrap();
    assert_eq!(nearest.mul(3, half), 2);
    assert_eq!(floor.mul(3, half), 1);
}

fn in_range(x: Fixed24) -> bool {
    (MIN..=MAX).contains(&(x.raw() as i64))
}

proptest! {
    #[test]
    fn encode_error_within_half_ulp(x in -127.0f64..127.9) {
        let y = Fixed24::encode(x).unwrap().decode();
        prop_assert!((y - x).abs() <= 2f64.powi(-17));
    }

    #[test]
    fn every_op_stays_in_range(a in MIN..=MAX, b in MIN..=MAX) {
        let (a, b) = (Fixed24::from_raw(a as i32).unwrap(), Fixed24::from_raw(b as i32).unwrap());
        prop_assert!(in_range(a + b));
        prop_assert!(in_range(a - b));
        prop_assert!(in_range(a * b));
        prop_assert!(in_range(-a));
        prop_assert!(in_range(a.saturating_div(b)));
        if a.raw() >= 0 {
            prop_assert!(in_range(a.sqrt().unwrap()));
            prop_assert!(in_range(a.recip_sqrt().unwrap()));
        } else {
            prop_assert!(a.sqrt().is_err());
            prop_assert!(a.recip_sqrt().is_err());
        }
    }

    #[test]
    fn division_matches_rational_rounding(a in MIN..=MAX, b in MIN..=MAX) {
        prop_assume!(b != 0);
        let q = Fixed24::from_raw(a as i32).unwrap().saturating_div(Fixed24::from_raw(b as i32).unwrap());
        // round(a * 2^16 / b) with ties to even, via exact integers
        let num = BigInt::from(a) << FRAC;
        let den = BigInt::from(b);
        let (num, den) = if b < 0 { (-num, -den) } else { (num, den) };
        let mut fl = &num / &den;
        let mut rem = &num - &fl * &den;
        if rem < BigInt::from(0) {
            fl -= 1;
            rem += &den;
        }
        let twice = rem * 2;
        if twice > den || (twice == den && (&fl % 2) != BigInt::from(0)) {
            fl += 1;
        }
        prop_assert_eq!(q.raw() as i64, clamp(&fl));
    }

    #[test]
    fn wider_formats_round_trip(x in -1000.0f64..1000.0) {
        let fmt = FixedFormat::new(32, 16).unwrap();
        let raw = fmt.encode(x).unwrap();
        prop_assert!((fmt.decode(raw) - x).abs() <= fmt.ulp() / 2.0);
    }
}
