//! Sampler exactness against analytic velocity oracles.

use diffeng::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatfix_restore::model::{denoise, euler_with, one_step_with};
use splatfix_restore::DiffusionSchedule;

fn image(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

fn noise(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

/// Velocity of the straight path from `x` through `x_t`: `(x_t − x)/σ`.
fn point_oracle<'a>(s: &'a DiffusionSchedule, x: &'a Tensor) -> impl Fn(&Tensor, u32) -> splatfix_restore::Result<Tensor> + 'a {
    move |xt, t| {
        let sig = s.sigma(t) as f64;
        Ok(Tensor::new(
            xt.shape().to_vec(),
            xt.data().iter().zip(x.data()).map(|(&a, &b)| ((a as f64 - b as f64) / sig) as f32).collect(),
        )
        .unwrap())
    }
}

fn max_abs(a: &Tensor, b: &Tensor) -> f32 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

#[test]
fn one_step_recovers_the_target_for_every_t0() {
    let s = DiffusionSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shape = [1, 3, 8, 8];
    let x = image(&mut rng, shape);
    let x_tilde = image(&mut rng, shape);
    let mut worst = 0.0f32;
    for t0 in 1..=s.steps {
        let eps = noise(&mut rng, shape);
        // The oracle points at the clean image, whatever the input was.
        let out = one_step_with(&s, t0, &x_tilde, &eps, point_oracle(&s, &x)).unwrap();
        worst = worst.max(max_abs(&out, &x));
    }
    assert!(worst <= 1e-5, "worst error {worst}");
}

#[test]
fn one_step_at_listed_t0_on_many_images() {
    let s = DiffusionSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for t0 in [1, 199, 500, 999] {
        for _ in 0..100 {
            let shape = [1, 3, 16, 16];
            let (x, x_tilde, eps) = (image(&mut rng, shape), image(&mut rng, shape), noise(&mut rng, shape));
            let out = one_step_with(&s, t0, &x_tilde, &eps, point_oracle(&s, &x)).unwrap();
            assert!(max_abs(&out, &x) <= 1e-5, "t0 {t0}");
        }
    }
}

#[test]
fn euler_with_oracle_recovers_the_target_for_any_divisor() {
    let s = DiffusionSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let shape = [2, 3, 4, 4];
    let x = image(&mut rng, shape);
    let x_big_t = noise(&mut rng, shape);
    for steps in [1, 2, 4, 5, 8, 10, 25, 50, 100, 1000] {
        let out = euler_with(&s, &x_big_t, steps, point_oracle(&s, &x)).unwrap();
        assert!(max_abs(&out, &x) <= 1e-4, "{steps} steps: {}", max_abs(&out, &x));
    }
}

#[test]
fn single_euler_step_equals_the_denoised_estimate_at_t() {
    let s = DiffusionSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let shape = [1, 3, 4, 4];
    let x_big_t = noise(&mut rng, shape);
    let v = image(&mut rng, shape);
    let euler = euler_with(&s, &x_big_t, 1, |_, _| Ok(v.clone())).unwrap();
    assert_eq!(euler, denoise(&x_big_t, s.sigma(s.steps), &v).unwrap());
    let still = euler_with(&s, &x_big_t, 10, |x, _| Ok(Tensor::zeros(x.shape().to_vec()))).unwrap();
    assert_eq!(still, x_big_t);
}

/// Exact velocity `E[ε − x | x_t]` for data `x ~ N(μ, s²)` per coordinate.
fn gaussian_velocity(sched: &DiffusionSchedule, mu: f64, sd: f64) -> impl Fn(&Tensor, u32) -> splatfix_restore::Result<Tensor> + '_ {
    move |xt, t| {
        let sig = sched.sigma(t) as f64;
        let keep = 1.0 - sig;
        let var = keep * keep * sd * sd + sig * sig;
        Ok(xt.map(|y| {
            let r = y as f64 - keep * mu;
            let e_eps = sig / var * r;
            let e_x = mu + keep * sd * sd / var * r;
            (e_eps - e_x) as f32
        }))
    }
}

#[test]
fn euler_transports_noise_onto_a_gaussian() {
    // The probability-flow map of a Gaussian is affine: ε ↦ μ + s·ε.
    let s = DiffusionSchedule::default();
    let (mu, sd) = (0.3, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let shape = [1, 3, 8, 8];
    let eps = noise(&mut rng, shape);
    let out = euler_with(&s, &eps, 1000, gaussian_velocity(&s, mu, sd)).unwrap();
    let want = eps.map(|e| (mu + sd * e as f64) as f32);
    assert!(max_abs(&out, &want) < 2e-3, "{}", max_abs(&out, &want));
}

proptest! {
    #[test]
    fn diffusion_endpoints_hold(seed in any::<u64>(), t in 1u32..1000) {
        let s = DiffusionSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [1, 3, 4, 4];
        let (x, eps) = (image(&mut rng, shape), noise(&mut rng, shape));
        prop_assert_eq!(s.diffuse(x.data(), 0, eps.data()), x.data().to_vec());
        prop_assert_eq!(s.diffuse(x.data(), s.steps, eps.data()), eps.data().to_vec());
        let xt = Tensor::new(shape, s.diffuse(x.data(), t, eps.data())).unwrap();
        // x_t − σ·(ε − x) = x under the velocity convention.
        let v = Tensor::new(shape, eps.data().iter().zip(x.data()).map(|(e, a)| e - a).collect()).unwrap();
        let back = denoise(&xt, s.sigma(t), &v).unwrap();
        prop_assert!(max_abs(&back, &x) <= 1e-5);
    }
}
