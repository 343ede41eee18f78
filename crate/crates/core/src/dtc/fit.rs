//! Bounded Levenberg–Marquardt fit of the six free GOT09 parameters.
//!
//! The solver works on `x = [T0, Ta, δT, ts − tm, tm, τ]`. Writing `ts`
//! as an offset from `tm` turns the coupled constraint `ts ≥ tm + 0.5`
//! (and `ts` before the thermal sunset) into a box. Steps are projected
//! back onto the box, and the Jacobian uses central differences that turn
//! one-sided at active bounds.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{derive_k_with, eval_with, DayGeometry, DtcField, DtcParams, K_MAX_HOURS};
use crate::error::{Error, Result};
use crate::grid::{TempGrid, MAX_PLAUSIBLE_K, MIN_PLAUSIBLE_K};
use crate::solar::SolarContext;

const N_PARAMS: usize = 6;
const MIN_SAMPLES: usize = N_PARAMS;

const INIT_TM: f64 = 13.0;
const INIT_TS: f64 = 17.5;
const INIT_TAU: f64 = 0.3;
/// Minimum gap between `ts` and the thermal sunset, hours.
const SUNSET_MARGIN: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DtcSample {
    /// Local solar hours.
    pub t: f64,
    /// Kelvin.
    pub value: f64,
}

impl DtcSample {
    pub fn new(t: f64, value: f64) -> Self {
        DtcSample { t, value }
    }
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the largest relative parameter step.
    pub step_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 200,
            step_tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DtcFit {
    pub params: DtcParams,
    /// Root-mean-square residual over the fitted samples, K.
    pub rmse: f64,
    pub iterations: usize,
}

struct Bounds {
    lower: [f64; N_PARAMS],
    upper: [f64; N_PARAMS],
    half_day: f64,
}

impl Bounds {
    fn new(half_day: f64) -> Self {
        Bounds {
            lower: [MIN_PLAUSIBLE_K as f64, 0.0, -20.0, 0.5, 10.0, 0.01],
            upper: [MAX_PLAUSIBLE_K as f64, 60.0, 20.0, f64::INFINITY, 16.0, 3.0],
            half_day,
        }
    }

    /// Upper bound of `ts − tm` for a given `tm`.
    fn offset_max(&self, tm: f64) -> f64 {
        (24.0 - tm).min(self.half_day - SUNSET_MARGIN)
    }

    fn lower(&self, j: usize) -> f64 {
        self.lower[j]
    }

    fn upper(&self, j: usize, x: &[f64; N_PARAMS]) -> f64 {
        if j == 3 {
            self.offset_max(x[4])
        } else {
            self.upper[j]
        }
    }

    fn project(&self, x: &mut [f64; N_PARAMS]) {
        for j in [0, 1, 2, 4, 5] {
            x[j] = x[j].clamp(self.lower[j], self.upper[j]);
        }
        x[3] = x[3].clamp(self.lower[3], self.offset_max(x[4]));
    }
}

/// Shape vector to parameters, with a lenient `k` (clamped to the upper
/// limit when the day branch is not cooling at `ts`).
fn params_from(x: &[f64; N_PARAMS], geo: &DayGeometry) -> DtcParams {
    let mut p = DtcParams {
        t0: x[0],
        ta: x[1],
        delta_t: x[2],
        ts: x[4] + x[3],
        tm: x[4],
        tau: x[5],
        k_derived: K_MAX_HOURS,
    };
    p.k_derived = derive_k_with(&p, geo).unwrap_or(K_MAX_HOURS);
    p
}

fn residuals(x: &[f64; N_PARAMS], geo: &DayGeometry, samples: &[DtcSample]) -> DVector<f64> {
    let p = params_from(x, geo);
    DVector::from_iterator(samples.len(), samples.iter().map(|s| eval_with(&p, geo, s.t) - s.value))
}

fn jacobian(x: &[f64; N_PARAMS], bounds: &Bounds, geo: &DayGeometry, samples: &[DtcSample]) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(samples.len(), N_PARAMS);
    for j in 0..N_PARAMS {
        let h = 1e-6 * x[j].abs().max(1.0);
        let (lo, hi) = (bounds.lower(j), bounds.upper(j, x));
        let mut plus = *x;
        let mut minus = *x;
        let (up, down) = if x[j] + h > hi {
            (0.0, h)
        } else if x[j] - h < lo {
            (h, 0.0)
        } else {
            (h, h)
        };
        plus[j] += up;
        minus[j] -= down;
        let rp = residuals(&plus, geo, samples);
        let rm = residuals(&minus, geo, samples);
        jac.set_column(j, &((rp - rm) / (up + down)));
    }
    jac
}

fn initial_guess(samples: &[DtcSample]) -> [f64; N_PARAMS] {
    let (min_all, max_all) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
        (lo.min(s.value), hi.max(s.value))
    });
    let t0 = samples
        .iter()
        .filter(|s| (0.0..=8.0).contains(&s.t))
        .map(|s| s.value)
        .fold(f64::INFINITY, f64::min);
    let t0 = if t0.is_finite() { t0 } else { min_all };
    let last_night = samples
        .iter()
        .filter(|s| s.t >= INIT_TS)
        .max_by(|a, b| a.t.total_cmp(&b.t))
        .map(|s| s.value);
    let delta_t = last_night.map_or(0.0, |v| v - t0);
    [t0, max_all - min_all, delta_t, INIT_TS - INIT_TM, INIT_TM, INIT_TAU]
}

fn check_samples(samples: &[DtcSample], geo: &DayGeometry) -> Result<()> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "DTC fit needs at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    for s in samples {
        if !(0.0..24.0).contains(&s.t) {
            return Err(Error::Argument(format!("sample time {} outside [0, 24) h", s.t)));
        }
        if !(s.value > MIN_PLAUSIBLE_K as f64 && s.value < MAX_PLAUSIBLE_K as f64) {
            return Err(Error::Domain(format!(
                "sample value {} K is not a plausible LST",
                s.value
            )));
        }
    }
    let sunrise = INIT_TM - geo.half_day();
    let night = samples.iter().filter(|s| s.t >= INIT_TS || s.t < sunrise).count();
    if night == 0 || night == samples.len() {
        return Err(Error::InsufficientData(
            "samples must cover both the day and the night branch".into(),
        ));
    }
    Ok(())
}

/// Fits the diurnal cycle with default solver options.
pub fn fit_dtc(samples: &[DtcSample], ctx: &SolarContext) -> Result<DtcFit> {
    fit_dtc_with(samples, ctx, &FitOptions::default())
}

pub fn fit_dtc_with(samples: &[DtcSample], ctx: &SolarContext, opts: &FitOptions) -> Result<DtcFit> {
    let geo = DayGeometry::new(ctx)?;
    check_samples(samples, &geo)?;
    let bounds = Bounds::new(geo.half_day());
    if geo.half_day() - SUNSET_MARGIN < bounds.lower[3] {
        return Err(Error::FitGeometry(format!(
            "day too short to place ts at least 0.5 h after tm (half day {} h)",
            geo.half_day()
        )));
    }

    let mut x = initial_guess(samples);
    bounds.project(&mut x);
    let mut r = residuals(&x, &geo, samples);
    let mut cost = r.norm_squared();
    let mut jac = jacobian(&x, &bounds, &geo, samples);
    let mut lambda = 1e-3;
    let mut last_step = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let gradient = &jt * &r;
        let mut damped = jtj.clone();
        for j in 0..N_PARAMS {
            damped[(j, j)] += lambda * jtj[(j, j)].max(1e-9);
        }
        let Some(step) = damped.cholesky().map(|c| c.solve(&(-&gradient))) else {
            lambda *= 10.0;
            continue;
        };
        let mut candidate = x;
        for j in 0..N_PARAMS {
            candidate[j] += step[j];
        }
        bounds.project(&mut candidate);
        last_step = (0..N_PARAMS)
            .map(|j| (candidate[j] - x[j]).abs() / x[j].abs().max(1.0))
            .fold(0.0, f64::max);
        let r_new = residuals(&candidate, &geo, samples);
        let cost_new = r_new.norm_squared();
        if cost_new < cost {
            x = candidate;
            r = r_new;
            cost = cost_new;
            lambda = (lambda * 0.3).max(1e-15);
            if last_step < opts.step_tolerance {
                converged = true;
                break;
            }
            jac = jacobian(&x, &bounds, &geo, samples);
        } else {
            lambda *= 4.0;
            if last_step < opts.step_tolerance {
                converged = true;
                break;
            }
        }
    }

    let best = params_from(&x, &geo);
    if !converged {
        return Err(Error::Convergence {
            iterations,
            last_step,
            best: Box::new(best),
        });
    }
    let params = best.with_derived_k(ctx)?;
    Ok(DtcFit {
        params,
        rmse: (cost / samples.len() as f64).sqrt(),
        iterations,
    })
}

/// Fits one diurnal cycle per cell of a half-hourly series of co-registered
/// grids. Cells with fewer than six valid samples, or whose fit fails, are
/// left empty. Cells are fitted in parallel; the result does not depend on
/// scheduling.
pub fn fit_dtc_field(series: &[TempGrid], ctx: &SolarContext) -> Result<DtcField> {
    let first = series
        .first()
        .ok_or_else(|| Error::InsufficientData("empty grid series".into()))?;
    let header = first.header().clone();
    for g in series {
        if !g.header().same_geometry(&header) {
            return Err(Error::GridCompatibility("series grids differ in geometry".into()));
        }
    }
    let times: Vec<f64> = series
        .iter()
        .map(|g| ctx.local_solar_hours(g.timestamp_utc()))
        .collect();
    let fits: Vec<Option<DtcFit>> = (0..header.len())
        .into_par_iter()
        .map(|i| {
            let samples: Vec<DtcSample> = series
                .iter()
                .zip(&times)
                .filter(|(g, _)| g.is_valid_value(g.values()[i]))
                .map(|(g, &t)| DtcSample::new(t, g.values()[i] as f64))
                .collect();
            match fit_dtc(&samples, ctx) {
                Ok(fit) => Some(fit),
                Err(e) => {
                    log::warn!(
                        "DTC fit failed for cell {} (row {}, col {}): {e}",
                        i,
                        i / header.width,
                        i % header.width
                    );
                    None
                }
            }
        })
        .collect();
    let rmse = fits.iter().map(|f| f.as_ref().map_or(f64::NAN, |f| f.rmse)).collect();
    let params = fits.into_iter().map(|f| f.map(|f| f.params)).collect();
    DtcField::new(header, params, rmse)
}
