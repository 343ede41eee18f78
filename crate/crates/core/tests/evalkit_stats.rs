use lstfuse::evalkit::{error_histogram, export_scatter, metrics, read_scatter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Online mean and variance, used as an independent reference.
#[derive(Default)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn std(&self) -> f64 {
        (self.m2 / self.n as f64).sqrt()
    }
}

#[test]
fn histogram_of_standard_normal_errors_matches_running_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let errors: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let reference = vec![300.0; errors.len()];
    let pred: Vec<f64> = errors.iter().map(|e| 300.0 + e).collect();
    let mut online = Welford::default();
    for (p, r) in pred.iter().zip(&reference) {
        online.push(p - r);
    }
    let h = error_histogram(&pred, &reference, 0.25).unwrap();
    assert_eq!(h.n, errors.len());
    assert_eq!(h.bins.iter().map(|b| b.count).sum::<usize>(), errors.len());
    assert!((h.mean - online.mean).abs() < 0.02);
    assert!((h.std - online.std()).abs() < 0.02);
    assert!(h.mean.abs() < 0.02 && (h.std - 1.0).abs() < 0.02);
    let peak = h.bins.iter().max_by_key(|b| b.count).unwrap();
    assert!(peak.center.abs() <= 0.25);
}

#[test]
fn scatter_export_round_trip_preserves_metrics() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pairs: Vec<(f64, f64)> = (0..1000)
        .map(|_| {
            let r = rng.random_range(260.0..330.0);
            (r + rng.random_range(-3.0..3.0), r)
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scatter.csv");
    export_scatter(&pairs, &path).unwrap();
    let back = read_scatter(&path).unwrap();
    assert_eq!(back.len(), pairs.len());
    let split = |v: &[(f64, f64)]| -> (Vec<f64>, Vec<f64>) { v.iter().cloned().unzip() };
    let (p0, r0) = split(&pairs);
    let (p1, r1) = split(&back);
    let a = metrics(&p0, &r0).unwrap();
    let b = metrics(&p1, &r1).unwrap();
    for (x, y) in [(a.r, b.r), (a.mae, b.mae), (a.rmse, b.rmse), (a.bias, b.bias)] {
        assert!((x - y).abs() <= 1e-5, "{x} vs {y}");
    }
}
