//! Agreement statistics between predicted and reference LST.
//!
//! All reductions run sequentially in input order, so results are
//! bit-stable across runs and platforms.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{TempGrid, NODATA};

pub const DEFAULT_BIN_WIDTH: f64 = 0.25;

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    /// Pearson correlation.
    pub r: f64,
    /// Mean absolute error, K.
    pub mae: f64,
    /// Root-mean-square error, K.
    pub rmse: f64,
    /// Mean of prediction minus reference, K.
    pub bias: f64,
    pub n: usize,
}

fn is_missing(v: f64) -> bool {
    !v.is_finite() || v == NODATA as f64
}

fn paired(pred: &[f64], reference: &[f64]) -> Result<Vec<(f64, f64)>> {
    if pred.len() != reference.len() {
        return Err(Error::Dimension(format!(
            "prediction has {} values, reference {}",
            pred.len(),
            reference.len()
        )));
    }
    let pairs: Vec<(f64, f64)> = pred
        .iter()
        .zip(reference)
        .filter(|(p, r)| !is_missing(**p) && !is_missing(**r))
        .map(|(&p, &r)| (p, r))
        .collect();
    if pairs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "metrics need at least 2 valid pairs, found {}",
            pairs.len()
        )));
    }
    Ok(pairs)
}

fn grid_pairs(pred: &TempGrid, reference: &TempGrid) -> Result<(Vec<f64>, Vec<f64>)> {
    if !pred.header().same_geometry(reference.header()) {
        return Err(Error::GridCompatibility(format!(
            "prediction ({}x{}) and reference ({}x{}) are not co-registered",
            pred.width(),
            pred.height(),
            reference.width(),
            reference.height()
        )));
    }
    let widen = |g: &TempGrid| -> Vec<f64> {
        g.values()
            .iter()
            .map(|&v| if g.is_valid_value(v) { v as f64 } else { f64::NAN })
            .collect()
    };
    Ok((widen(pred), widen(reference)))
}

/// R, MAE, RMSE and bias over the pairs where both sides are valid.
/// Non-finite values and the nodata sentinel count as missing.
///
/// When either side has zero variance the correlation is undefined and a
/// [`Error::DegenerateCorrelation`] carries the other statistics with
/// `r = NaN`.
pub fn metrics(pred: &[f64], reference: &[f64]) -> Result<MetricsReport> {
    let pairs = paired(pred, reference)?;
    let n = pairs.len() as f64;
    let (mut sum_abs, mut sum_sq, mut sum_err) = (0.0, 0.0, 0.0);
    let (mut sum_p, mut sum_r) = (0.0, 0.0);
    for &(p, r) in &pairs {
        let e = p - r;
        sum_abs += e.abs();
        sum_sq += e * e;
        sum_err += e;
        sum_p += p;
        sum_r += r;
    }
    let (mean_p, mean_r) = (sum_p / n, sum_r / n);
    let (mut spp, mut srr, mut spr) = (0.0, 0.0, 0.0);
    for &(p, r) in &pairs {
        let (dp, dr) = (p - mean_p, r - mean_r);
        spp += dp * dp;
        srr += dr * dr;
        spr += dp * dr;
    }
    let mut report = MetricsReport {
        r: f64::NAN,
        mae: sum_abs / n,
        rmse: (sum_sq / n).sqrt(),
        bias: sum_err / n,
        n: pairs.len(),
    };
    let side = match (spp == 0.0, srr == 0.0) {
        (true, _) => Some("prediction"),
        (false, true) => Some("reference"),
        _ => None,
    };
    if let Some(side) = side {
        return Err(Error::DegenerateCorrelation {
            side,
            partial: Box::new(report),
        });
    }
    report.r = (spr / (spp.sqrt() * srr.sqrt())).clamp(-1.0, 1.0);
    Ok(report)
}

/// [`metrics`] over two co-registered grids.
pub fn grid_metrics(pred: &TempGrid, reference: &TempGrid) -> Result<MetricsReport> {
    let (p, r) = grid_pairs(pred, reference)?;
    metrics(&p, &r)
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct HistogramBin {
    pub center: f64,
    pub count: usize,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ErrorHistogram {
    pub bin_width: f64,
    /// Contiguous bins from the lowest to the highest occupied center.
    pub bins: Vec<HistogramBin>,
    /// Mean of prediction minus reference, K.
    pub mean: f64,
    /// Population standard deviation of the errors, K.
    pub std: f64,
    pub n: usize,
}

/// Histogram of `pred − ref` with bins centered on integer multiples of
/// `bin_width`. Each error goes to the nearest center, ties upward.
pub fn error_histogram(pred: &[f64], reference: &[f64], bin_width: f64) -> Result<ErrorHistogram> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::Argument(format!("bin width must be positive, got {bin_width}")));
    }
    let errors: Vec<f64> = paired(pred, reference)?.iter().map(|(p, r)| p - r).collect();
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let std = (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n).sqrt();
    let index: Vec<i64> = errors.iter().map(|e| (e / bin_width + 0.5).floor() as i64).collect();
    let lo = *index.iter().min().expect("at least two errors");
    let hi = *index.iter().max().expect("at least two errors");
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for k in &index {
        counts[(k - lo) as usize] += 1;
    }
    Ok(ErrorHistogram {
        bin_width,
        bins: counts
            .into_iter()
            .enumerate()
            .map(|(i, count)| HistogramBin {
                center: (lo + i as i64) as f64 * bin_width,
                count,
            })
            .collect(),
        mean,
        std,
        n: errors.len(),
    })
}

/// [`error_histogram`] over two co-registered grids.
pub fn grid_error_histogram(pred: &TempGrid, reference: &TempGrid, bin_width: f64) -> Result<ErrorHistogram> {
    let (p, r) = grid_pairs(pred, reference)?;
    error_histogram(&p, &r, bin_width)
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct SeriesPoint {
    pub timestamp_utc: i64,
    pub pred_k: f64,
    pub ref_k: f64,
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `pred_k,ref_k` rows with six decimals.
pub fn export_scatter(pairs: &[(f64, f64)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
    w.write_record(["pred_k", "ref_k"]).map_err(csv_error(path))?;
    for (p, r) in pairs {
        w.write_record([format!("{p:.6}"), format!("{r:.6}")])
            .map_err(csv_error(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scatter(path: &Path) -> Result<Vec<(f64, f64)>> {
    #[derive(Deserialize)]
    struct Row {
        pred_k: f64,
        ref_k: f64,
    }
    let mut reader = csv::Reader::from_path(path).map_err(csv_error(path))?;
    reader
        .deserialize::<Row>()
        .map(|row| row.map(|r| (r.pred_k, r.ref_k)).map_err(csv_error(path)))
        .collect()
}

/// Writes `timestamp_utc,pred_k,ref_k` rows with six decimals.
pub fn export_series(points: &[SeriesPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
    w.write_record(["timestamp_utc", "pred_k", "ref_k"])
        .map_err(csv_error(path))?;
    for p in points {
        w.write_record([
            p.timestamp_utc.to_string(),
            format!("{:.6}", p.pred_k),
            format!("{:.6}", p.ref_k),
        ])
        .map_err(csv_error(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_series(path: &Path) -> Result<Vec<SeriesPoint>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_error(path))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<SeriesPoint>, _>>()
        .map_err(csv_error(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridHeader, Units};
    use proptest::prelude::*;

    #[test]
    fn identity_and_shift() {
        let r = [290.0, 295.0, 301.5, 288.0];
        let m = metrics(&r, &r).unwrap();
        assert_eq!((m.mae, m.rmse, m.bias, m.r, m.n), (0.0, 0.0, 0.0, 1.0, 4));
        let p: Vec<f64> = r.iter().map(|v| v + 1.0).collect();
        let m = metrics(&p, &r).unwrap();
        assert_eq!((m.mae, m.rmse, m.bias), (1.0, 1.0, 1.0));
        assert!((m.r - 1.0).abs() < 1e-15);
    }

    #[test]
    fn three_point_hand_case() {
        let m = metrics(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert!((m.r + 1.0).abs() <= 1e-12);
        assert!(m.bias.abs() <= 1e-12);
        assert!((m.mae - 4.0 / 3.0).abs() <= 1e-12);
        assert!((m.rmse - (8.0f64 / 3.0).sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn missing_values_are_skipped() {
        let m = metrics(&[1.0, f64::NAN, 3.0, 4.0], &[1.0, 2.0, NODATA as f64, 4.0]).unwrap();
        assert_eq!(m.n, 2);
        assert!(matches!(
            metrics(&[1.0, f64::NAN], &[1.0, 2.0]),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(metrics(&[1.0], &[1.0, 2.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn constant_side_reports_partial_metrics() {
        match metrics(&[300.0, 300.0, 300.0], &[299.0, 300.0, 301.0]) {
            Err(Error::DegenerateCorrelation { side, partial }) => {
                assert_eq!(side, "prediction");
                assert!(partial.bias.abs() < 1e-12);
                assert!((partial.mae - 2.0 / 3.0).abs() < 1e-12);
                assert!(partial.r.is_nan());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn grid_metrics_skip_nodata() {
        let h = GridHeader::new(3, 1, 30.0, Units::Kelvin);
        let p = TempGrid::new(h.clone(), vec![300.0, NODATA, 302.0]).unwrap();
        let r = TempGrid::new(h, vec![299.0, 305.0, 301.0]).unwrap();
        let m = grid_metrics(&p, &r).unwrap();
        assert_eq!(m.n, 2);
        assert_eq!(m.bias, 1.0);
    }

    #[test]
    fn histogram_cases() {
        let h = error_histogram(&[300.0, 301.0, 302.0], &[300.0, 301.0, 302.0], 0.25).unwrap();
        assert_eq!(h.bins, vec![HistogramBin { center: 0.0, count: 3 }]);
        let h = error_histogram(&[-0.6, 0.6], &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(h.bins.len(), 3);
        assert_eq!((h.bins[0].center, h.bins[0].count), (-1.0, 1));
        assert_eq!((h.bins[1].center, h.bins[1].count), (0.0, 0));
        assert_eq!((h.bins[2].center, h.bins[2].count), (1.0, 1));
        // ties go upward
        let h = error_histogram(&[0.5, -0.5], &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(h.bins.iter().map(|b| b.center).collect::<Vec<_>>(), vec![0.0, 1.0]);
        assert!(matches!(
            error_histogram(&[1.0, 2.0], &[1.0, 2.0], 0.0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn exports_and_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scatter.csv");
        export_scatter(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "pred_k,ref_k\n");
        export_scatter(&[(300.1, 299.9)], &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "pred_k,ref_k\n300.100000,299.900000\n"
        );
        assert_eq!(read_scatter(&path).unwrap(), vec![(300.1, 299.9)]);

        let points = [SeriesPoint {
            timestamp_utc: 1_800,
            pred_k: 301.25,
            ref_k: 300.5,
        }];
        let path = dir.path().join("series.csv");
        export_series(&points, &path).unwrap();
        assert_eq!(read_series(&path).unwrap(), points);
        assert!(matches!(
            export_series(&points, &dir.path().join("missing/series.csv")),
            Err(Error::Csv { .. })
        ));
    }

    proptest! {
        #[test]
        fn rmse_dominates(pairs in proptest::collection::vec((250.0f64..350.0, 250.0f64..350.0), 2..60)) {
            let (p, r): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = match metrics(&p, &r) {
                Ok(m) => m,
                Err(Error::DegenerateCorrelation { partial, .. }) => *partial,
                Err(e) => panic!("{e}"),
            };
            prop_assert!(m.rmse + 1e-12 >= m.mae);
            prop_assert!(m.mae + 1e-12 >= m.bias.abs());
            prop_assert!((-1.0..=1.0).contains(&m.r) || m.r.is_nan());
        }

        #[test]
        fn shift_invariance(pairs in proptest::collection::vec((250.0f64..350.0, 250.0f64..350.0), 3..40), shift in -20.0f64..20.0) {
            let (p, r): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let a = metrics(&p, &r);
            let ps: Vec<f64> = p.iter().map(|v| v + shift).collect();
            let rs: Vec<f64> = r.iter().map(|v| v + shift).collect();
            let b = metrics(&ps, &rs);
            if let (Ok(a), Ok(b)) = (a, b) {
                prop_assert!((a.r - b.r).abs() < 1e-9);
                prop_assert!((a.mae - b.mae).abs() < 1e-9);
                prop_assert!((a.rmse - b.rmse).abs() < 1e-9);
                prop_assert!((a.bias - b.bias).abs() < 1e-9);
            }
        }

        #[test]
        fn histogram_counts_sum_to_n(errs in proptest::collection::vec(-5.0f64..5.0, 2..200), width in 0.05f64..2.0) {
            let zeros = vec![0.0; errs.len()];
            let h = error_histogram(&errs, &zeros, width).unwrap();
            prop_assert_eq!(h.bins.iter().map(|b| b.count).sum::<usize>(), h.n);
            prop_assert_eq!(h.n, errs.len());
        }
    }
}
