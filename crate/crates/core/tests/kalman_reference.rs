//! Cross-checks the per-axis filter against a dense 4-state filter.

use dlfuzz::geometry::Point2;
use dlfuzz::prediction::{kalman_predict, KalmanParams};
use nalgebra::{Matrix2x4, Matrix4, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// State is (x, y, vx, vy) relative to the first measurement.
fn dense_predict(history: &[(f64, Point2<f64>)], horizon: f64, params: KalmanParams<f64>) -> Vec<(f64, Point2<f64>)> {
    let dt = history[1].0 - history[0].0;
    let origin = history[0].1;
    let rel = |p: Point2<f64>| Vector2::new(p.x - origin.x, p.y - origin.y);
    let f = Matrix4::new(
        1.0, 0.0, dt, 0.0, //
        0.0, 1.0, 0.0, dt, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    );
    let (a, b, c) = (dt.powi(3) / 3.0, dt.powi(2) / 2.0, dt);
    let q = Matrix4::new(
        a, 0.0, b, 0.0, //
        0.0, a, 0.0, b, //
        b, 0.0, c, 0.0, //
        0.0, b, 0.0, c,
    ) * params.q;
    let h = Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
    let r2 = params.r * params.r;
    let r = nalgebra::Matrix2::identity() * r2;

    let v0 = (rel(history[1].1) - rel(history[0].1)) / dt;
    let mut x = Vector4::new(0.0, 0.0, v0.x, v0.y);
    let mut p = Matrix4::from_diagonal(&Vector4::new(r2, r2, 2.0 * r2 / (dt * dt), 2.0 * r2 / (dt * dt)));
    for &(_, z) in &history[1..] {
        x = f * x;
        p = f * p * f.transpose() + q;
        let s = h * p * h.transpose() + r;
        let k = p * h.transpose() * s.try_inverse().unwrap();
        x += k * (rel(z) - h * x);
        p = (Matrix4::identity() - k * h) * p;
    }
    let t_last = history.last().unwrap().0;
    let steps = (horizon / dt).round() as usize;
    (1..=steps)
        .map(|k| {
            let tau = dt * k as f64;
            (t_last + tau, Point2::new(x[0] + x[2] * tau + origin.x, x[1] + x[3] * tau + origin.y))
        })
        .collect()
}

#[test]
fn matches_dense_filter_on_noisy_tracks() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let dt = 0.1;
        let p0 = Point2::new(rng.gen_range(-80.0..80.0), rng.gen_range(-80.0..80.0));
        let mut v = Point2::new(rng.gen_range(-12.0..12.0), rng.gen_range(-12.0..12.0));
        let mut p = p0;
        let n = rng.gen_range(3..60);
        let history: Vec<(f64, Point2<f64>)> = (0..n)
            .map(|k| {
                let noisy = p + Point2::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
                v = v + Point2::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
                p = p + v * dt;
                (k as f64 * dt, noisy)
            })
            .collect();
        let params = KalmanParams { q: rng.gen_range(0.01..2.0), r: rng.gen_range(0.01..0.5) };
        let ours = kalman_predict(&history, 3.0, params).unwrap();
        let dense = dense_predict(&history, 3.0, params);
        assert_eq!(ours.samples.len(), dense.len());
        for (a, b) in ours.samples.iter().zip(&dense) {
            assert!((a.0 - b.0).abs() < 1e-12);
            assert!(a.1.distance(b.1) < 1e-8, "{:?} vs {:?}", a.1, b.1);
        }
    }
}

#[test]
fn single_precision_tracks_constant_velocity() {
    let hist: Vec<(f32, Point2<f32>)> =
        (0..30).map(|k| (k as f32 * 0.1, Point2::new(2.0 + 4.0 * k as f32 * 0.1, -1.0 + 0.5 * k as f32 * 0.1))).collect();
    let pred = kalman_predict(&hist, 1.0f32, KalmanParams::default()).unwrap();
    for &(t, p) in &pred.samples {
        assert!(p.distance(Point2::new(2.0 + 4.0 * t, -1.0 + 0.5 * t)) < 1e-3);
    }
}
