use std::f64::consts::{E, PI};
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tnf::metrics::{grid_points, relative_kl, relative_l2, Reference};
use tnf::problem::{BoxDomain, Density, IsotropicGaussian};

fn gauss(mean: f64) -> IsotropicGaussian {
    IsotropicGaussian::stationary(vec![mean], 1.0)
}

#[test]
fn relative_l2_examples() {
    let r: Vec<f64> = (0..50).map(|i| (i as f64 * 0.1).sin().abs() + 0.1).collect();
    assert_eq!(relative_l2(&r, &r).unwrap(), 0.0);
    let doubled: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
    assert!((relative_l2(&doubled, &r).unwrap() - 1.0).abs() < 1e-15);
    let eps = 0.01;
    let shifted: Vec<f64> = r.iter().map(|v| v + eps).collect();
    let want = (r.len() as f64 * eps * eps).sqrt() / r.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((relative_l2(&shifted, &r).unwrap() - want).abs() < 1e-14);
    assert!(relative_l2(&r, &vec![0.0; r.len()]).is_err());
    assert!(relative_l2(&[], &[]).is_err());
}

proptest! {
    #[test]
    fn relative_l2_is_scale_invariant(
        pairs in prop::collection::vec((0.0f64..2.0, 0.1f64..2.0), 1..40),
        scale in 1e-3f64..1e3,
    ) {
        let (p, r): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let base = relative_l2(&p, &r).unwrap();
        let ps: Vec<f64> = p.iter().map(|v| v * scale).collect();
        let rs: Vec<f64> = r.iter().map(|v| v * scale).collect();
        let scaled = relative_l2(&ps, &rs).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert!((base - scaled).abs() <= 1e-12 * (1.0 + base));
    }
}

fn kl(mean_q: f64, n: usize, seed: u64) -> tnf::metrics::KlEstimate {
    let p = Reference::Exact(Arc::new(gauss(0.0)));
    let q = gauss(mean_q);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    relative_kl(|x| Ok(q.log_density(x, 0.0)), &p, 0.0, n, &mut rng).unwrap()
}

#[test]
fn self_divergence_is_zero() {
    assert_eq!(kl(0.0, 1000, 1).value, 0.0);
}

#[test]
fn gaussian_divergence_matches_closed_form() {
    let entropy = 0.5 * (2.0 * PI * E).ln();
    let want = 0.005 / entropy;
    let est = kl(0.1, 200_000, 2);
    assert!((est.value - want).abs() < 3.0 * est.stderr, "{} vs {want} (se {})", est.value, est.stderr);
}

#[test]
fn estimates_repeat_under_a_fixed_seed() {
    assert_eq!(kl(0.1, 5000, 3), kl(0.1, 5000, 3));
}

#[test]
fn spread_shrinks_at_the_monte_carlo_rate() {
    let spread = |n: usize| {
        let v: Vec<f64> = (0..40).map(|s| kl(0.1, n, 100 + s).value).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let ratio = spread(200) / spread(20_000);
    assert!((5.0..=20.0).contains(&ratio), "{ratio}");
}

#[test]
fn grid_covers_the_box() {
    let b = BoxDomain::cube(2, -1.0, 3.0);
    let pts = grid_points(&b, 5);
    assert_eq!(pts.len(), 50);
    assert_eq!(&pts[..2], &[-1.0, -1.0]);
    assert_eq!(&pts[48..], &[3.0, 3.0]);
}
