//! Adapter identity and guidance linearity on a small network.

use diffeng::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use splatfix_restore::{DenoiserNet, DiffusionSchedule, Error, LoraConfig, NetConfig, RestorerState, Which};

fn state(seed: u64) -> RestorerState {
    let cfg = NetConfig {
        width: 6,
        bottleneck: 10,
        mid_blocks: 1,
        time_dim: 12,
        time_freqs: 4,
        n_classes: 4,
    };
    let base = DenoiserNet::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    RestorerState::new(base, LoraConfig { rank: 3, scale: 1.0 }, DiffusionSchedule::default(), seed ^ 1).unwrap()
}

fn input(seed: u64) -> Tensor {
    Tensor::randn([2, 3, 8, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn bits(t: &Tensor) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn zero_initialized_adapters_change_no_bit() {
    let s = state(3);
    let x = input(4);
    let (t, c) = ([123, 877], [Some(0), None]);
    for g in [1.0, 7.5] {
        let base = s.predict(Which::Base, &x, &t, &c, g).unwrap();
        for which in [Which::PhiMinus, Which::PhiPlus] {
            assert_eq!(bits(&s.predict(which, &x, &t, &c, g).unwrap()), bits(&base), "{which} at g = {g}");
        }
    }
}

#[test]
fn adapters_apply_only_for_their_selector() {
    let mut s = state(5);
    for f in &mut s.phi_plus.factors {
        f.b = f.b.map(|_| 0.05);
    }
    let x = input(6);
    let (t, c) = ([400, 400], [Some(1), Some(2)]);
    let base = s.velocity(Which::Base, &x, &t, &c).unwrap();
    assert_eq!(s.velocity(Which::PhiMinus, &x, &t, &c).unwrap(), base);
    assert_ne!(s.velocity(Which::PhiPlus, &x, &t, &c).unwrap(), base);
}

#[test]
fn unknown_selector_is_an_error() {
    assert!(matches!("phi_star".parse::<Which>(), Err(Error::UnknownAdapter(s)) if s == "phi_star"));
}

#[test]
fn guidance_matches_separate_passes_at_three_scales() {
    let s = state(7);
    let x = input(8);
    let (t, c) = ([250, 640], [Some(3), Some(0)]);
    let vc = s.velocity(Which::Base, &x, &t, &c).unwrap();
    let vu = s.velocity(Which::Base, &x, &t, &[None, None]).unwrap();
    for g in [0.0f32, 2.0, 7.5] {
        let got = s.predict(Which::Base, &x, &t, &c, g).unwrap();
        let err = got
            .data()
            .iter()
            .zip(vc.data().iter().zip(vu.data()))
            .map(|(o, (a, b))| (o - (b + g * (a - b))).abs())
            .fold(0.0f32, f32::max);
        assert!(err <= 1e-5, "g = {g}: {err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn guided_prediction_is_affine_in_scale(seed in 0u64..1000, g in -4.0f32..12.0, t in 20u32..980) {
        let s = state(seed);
        let x = input(seed + 1);
        let c = [Some((seed % 4) as u32), None];
        let tt = [t, t];
        let p0 = s.predict(Which::PhiMinus, &x, &tt, &c, 0.0).unwrap();
        let p1 = s.predict(Which::PhiMinus, &x, &tt, &c, 1.0).unwrap();
        let pg = s.predict(Which::PhiMinus, &x, &tt, &c, g).unwrap();
        for ((a, b), o) in p0.data().iter().zip(p1.data()).zip(pg.data()) {
            let want = a + g * (b - a);
            prop_assert!((o - want).abs() <= 1e-4 * (1.0 + want.abs()), "{} vs {}", o, want);
        }
    }
}
