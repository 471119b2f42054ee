use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use abld::divergence::abld_direct;
use abld::harness::synth::random_spd;
use abld::{abld, AbldParams, SpdMatrix};

fn pair(seed: u64, d: usize) -> (SpdMatrix, SpdMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (random_spd(&mut rng, d), random_spd(&mut rng, d))
}

fn params() -> impl Strategy<Value = AbldParams> {
    (0.1f64..3.0, 0.1f64..3.0, any::<bool>()).prop_map(|(a, b, neg)| {
        let s = if neg { -1.0 } else { 1.0 };
        AbldParams::new(s * a, s * b).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nonnegative_and_zero_on_the_diagonal(seed in any::<u64>(), d in 1usize..7, p in params()) {
        let (x, y) = pair(seed, d);
        prop_assert!(abld(&x, &y, &p).unwrap() >= 0.0);
        prop_assert!(abld(&x, &x, &p).unwrap().abs() <= 1e-10);
    }

    #[test]
    fn invariant_under_congruence(seed in any::<u64>(), d in 1usize..7, p in params()) {
        let (x, y) = pair(seed, d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5555);
        let a = DMatrix::from_fn(d, d, |r, c| rng.gen_range(-1.0..1.0) + if r == c { 2.0 } else { 0.0 });
        let base = abld(&x, &y, &p).unwrap();
        let moved = abld(&x.congruence(&a).unwrap(), &y.congruence(&a).unwrap(), &p).unwrap();
        prop_assert!((moved - base).abs() <= 1e-8 * base.max(1.0));
    }

    #[test]
    fn invariant_under_common_scaling(seed in any::<u64>(), d in 1usize..7, p in params(), c in 0.05f64..20.0) {
        let (x, y) = pair(seed, d);
        let base = abld(&x, &y, &p).unwrap();
        let scaled = abld(&x.scale(c).unwrap(), &y.scale(c).unwrap(), &p).unwrap();
        prop_assert!((scaled - base).abs() <= 1e-8 * base.max(1.0));
    }

    #[test]
    fn swapping_arguments_swaps_parameters(seed in any::<u64>(), d in 1usize..7, p in params()) {
        let (x, y) = pair(seed, d);
        let a = abld(&x, &y, &p).unwrap();
        let b = abld(&y, &x, &p.swapped()).unwrap();
        prop_assert!((a - b).abs() <= 1e-8 * a.max(1.0));
    }

    #[test]
    fn direct_and_spectral_forms_agree(seed in any::<u64>(), d in 1usize..7, p in params()) {
        let (x, y) = pair(seed, d);
        let a = abld_direct(&x, &y, &p).unwrap();
        let b = abld(&x, &y, &p).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * b.max(1.0));
    }

    #[test]
    fn inverse_arguments_flip_the_orthant(seed in any::<u64>(), d in 1usize..7, p in params()) {
        // The spectrum of X⁻¹(Y⁻¹)⁻¹ is the reciprocal of that of XY⁻¹.
        let (x, y) = pair(seed, d);
        let neg = AbldParams::new(-p.alpha(), -p.beta()).unwrap();
        let a = abld(&x, &y, &p).unwrap();
        let b = abld(&x.inv().unwrap(), &y.inv().unwrap(), &neg).unwrap();
        prop_assert!((a - b).abs() <= 1e-8 * a.max(1.0));
    }
}

#[test]
fn origin_is_squared_log_distance() {
    let x = SpdMatrix::from_diagonal(&[2.0, 0.5]).unwrap();
    let y = SpdMatrix::identity(2);
    let d = abld(&x, &y, &AbldParams::origin()).unwrap();
    assert!((d - 2.0 * 2f64.ln().powi(2)).abs() < 1e-14);
}
