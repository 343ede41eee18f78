use lstfuse::grid::{aggregate, ClassGrid, GridHeader, TempGrid, Units};
use lstfuse::sensornorm::{apply_glolm, fit_glolm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const CELLS: usize = 20;
const FACTOR: usize = 8;

fn fine_grid(levels: &[f32]) -> TempGrid {
    let n = CELLS * FACTOR;
    let values = (0..n * n)
        .map(|i| levels[(i / n / FACTOR) * CELLS + (i % n) / FACTOR])
        .collect();
    TempGrid::new(GridHeader::new(n, n, 30.0, Units::Kelvin), values).unwrap()
}

fn pure_classes() -> ClassGrid {
    let n = CELLS * FACTOR;
    ClassGrid::new(GridHeader::new(n, n, 30.0, Units::ClassId), vec![0; n * n]).unwrap()
}

/// Fits a known linear map under 0.5 K noise; the cells sit at both ends of
/// the plausible temperature range so the intercept is well determined.
fn monte_carlo_errors(slope: f64, intercept: f64) -> (Vec<f64>, Vec<f64>) {
    let classes = pure_classes();
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut out = (Vec::new(), Vec::new());
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let levels: Vec<f32> = (0..CELLS * CELLS)
            .map(|_| if rng.random_bool(0.5) { 170.0 } else { 360.0 } + rng.random_range(0.0f32..20.0))
            .collect();
        let fine = fine_grid(&levels);
        let agg = aggregate(&fine, FACTOR, 1.0).unwrap();
        let reference = TempGrid::new(
            agg.header().clone(),
            agg.values()
                .iter()
                .map(|&v| (slope * v as f64 + intercept + noise.sample(&mut rng)) as f32)
                .collect(),
        )
        .unwrap();
        let fit = fit_glolm(&fine, &reference, &classes, FACTOR, 0.9).unwrap();
        assert_eq!(fit.n_pure, CELLS * CELLS);
        out.0.push((fit.slope - slope).abs());
        out.1.push((fit.intercept - intercept).abs());
    }
    out.0.sort_by(f64::total_cmp);
    out.1.sort_by(f64::total_cmp);
    out
}

#[test]
fn recovers_slope_and_intercept_at_95th_percentile() {
    for (slope, intercept) in [(1.02, -1.5), (0.98, 4.0), (1.0, 0.0)] {
        let (s, i) = monte_carlo_errors(slope, intercept);
        assert!(s[18] <= 0.005, "slope error {}", s[18]);
        assert!(i[18] <= 0.2, "intercept error {}", i[18]);
    }
}

#[test]
fn noise_free_fit_is_exact_and_applies_to_fine_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let levels: Vec<f32> = (0..CELLS * CELLS).map(|_| rng.random_range(280.0f32..320.0)).collect();
    let fine = fine_grid(&levels);
    let agg = aggregate(&fine, FACTOR, 1.0).unwrap();
    let reference = agg.map_valid(|v| (1.01 * v as f64 + 0.5) as f32);
    let fit = fit_glolm(&fine, &reference, &pure_classes(), FACTOR, 0.9).unwrap();
    assert!((fit.slope - 1.01).abs() < 1e-5);
    assert!((fit.intercept - 0.5).abs() < 2e-3);
    let mapped = apply_glolm(&fine, &fit);
    for (a, b) in mapped.values().iter().zip(fine.values()) {
        assert!((*a as f64 - (1.01 * *b as f64 + 0.5)).abs() < 2e-3);
    }
}
