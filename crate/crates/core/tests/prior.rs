use nalgebra::Vector2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use retsim_core::control::{register_prior, PriorModel, ScanSample, REGISTRATION_POINTS};
use retsim_core::geometry::Polygon;
use retsim_core::Error;

fn region() -> Polygon {
    Polygon::equilateral(Vector2::zeros(), 3.6e-3).unwrap()
}

fn points_in_region(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector2<f64>> {
    let r = region();
    let mut out = Vec::new();
    while out.len() < n {
        let p = Vector2::new(rng.random_range(-2e-3..2e-3), rng.random_range(-2e-3..2e-3));
        if r.contains(&p) {
            out.push(p);
        }
    }
    out
}

fn quad(c: &[f64; 6], p: &Vector2<f64>) -> f64 {
    c[0] * p.x * p.x + c[1] * p.y * p.y + c[2] * p.x * p.y + c[3] * p.x + c[4] * p.y + c[5]
}

#[test]
fn noiseless_quadratic_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let truth = [
            rng.random_range(-60.0..60.0),
            rng.random_range(-60.0..60.0),
            rng.random_range(-30.0..30.0),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(-2e-3..2e-3),
        ];
        let pts: Vec<(Vector2<f64>, f64)> = points_in_region(&mut rng, REGISTRATION_POINTS)
            .into_iter()
            .map(|p| (p, quad(&truth, &p)))
            .collect();
        let model = PriorModel::fit(&pts, region()).unwrap();
        let got = model.coefficients();
        for k in 0..6 {
            let rel = (got[k] - truth[k]).abs() / truth[k].abs();
            assert!(rel <= 1e-9, "coefficient {k}: {} vs {}", got[k], truth[k]);
        }
        for p in points_in_region(&mut rng, 20) {
            let z = quad(&truth, &p);
            assert!((model.evaluate(p.x, p.y) - z).abs() <= 1e-9 * z.abs().max(1e-6));
        }
    }
}

#[test]
fn noisy_sphere_cap_fits_within_100_um() {
    let radius = 14e-3;
    let noise = Normal::new(0.0, 30e-6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cap = |p: &Vector2<f64>| -radius + (radius * radius - p.norm_squared()).sqrt();
    let scan: Vec<ScanSample> = points_in_region(&mut rng, 300)
        .into_iter()
        .map(|xy| ScanSample {
            xy,
            z: cap(&xy) + 690e-6 + noise.sample(&mut rng),
            score: 0.55,
        })
        .collect();
    let model = register_prior(&scan, 0.47).unwrap();
    assert_eq!(model.sample_count(), REGISTRATION_POINTS);
    let sq: f64 = scan.iter().map(|s| (model.evaluate(s.xy.x, s.xy.y) - s.z).powi(2)).sum();
    let rms = (sq / scan.len() as f64).sqrt();
    assert!(rms <= 100e-6, "rms residual {rms}");
}

fn scan_with(in_focus: usize, out_of_focus: usize) -> Vec<ScanSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    points_in_region(&mut rng, in_focus + out_of_focus)
        .into_iter()
        .enumerate()
        .map(|(i, xy)| ScanSample {
            xy,
            z: 1e-3,
            score: if i < in_focus { 0.5 } else { 0.3 },
        })
        .collect()
}

#[test]
fn registration_needs_twenty_in_focus_points() {
    assert_eq!(
        register_prior(&scan_with(19, 100), 0.47).unwrap_err(),
        Error::RegistrationIncomplete { found: 19, required: 20 }
    );
    assert_eq!(register_prior(&scan_with(20, 0), 0.47).unwrap().sample_count(), 20);
    assert_eq!(register_prior(&scan_with(400, 50), 0.47).unwrap().sample_count(), 20);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fit_reproduces_any_plane(a in -0.2f64..0.2, b in -0.2f64..0.2, c in -1e-3f64..1e-3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<(Vector2<f64>, f64)> = points_in_region(&mut rng, 20)
            .into_iter()
            .map(|p| (p, a * p.x + b * p.y + c))
            .collect();
        let m = PriorModel::fit(&pts, region()).unwrap();
        for (p, z) in &pts {
            prop_assert!((m.evaluate(p.x, p.y) - z).abs() < 1e-12);
        }
    }
}
