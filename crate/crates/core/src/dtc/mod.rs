//! Diurnal temperature cycle (GOT09) evaluation, fitting and temporal
//! normalization.
//!
//! The day branch is driven by the cosine of the zenith angle evaluated
//! with the thermal hour angle `15° · (t − tm)`, so the curve peaks at `tm`
//! and `θz,min` is the zenith angle at `tm`. The night branch decays
//! exponentially from the day value at `ts` toward `T0 + δT`, with the
//! decay constant `k` chosen to make the first derivative continuous at
//! `ts`.
//!
//! Times are local solar hours in `[0, 24)`. Times before the thermal
//! sunrise belong to the previous day's night branch and are evaluated at
//! `t + 24`.

mod fit;
mod normalize;

pub use fit::{fit_dtc, fit_dtc_field, fit_dtc_with, DtcFit, DtcSample, FitOptions};
pub use normalize::{interp_halfhourly, normalize_time_dtc, read_dtc_csv, write_dtc_csv, DtcField};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solar::{air_mass_unchecked, half_day_length, zenith_from_hour_angle, SolarContext};

/// Step of the central difference used for the day-branch slope at `ts`, hours.
pub const SLOPE_STEP_HOURS: f64 = 1e-3;
/// Upper clamp of the derived night decay constant, hours.
pub const K_MAX_HOURS: f64 = 100.0;
/// Lower clamp of the derived night decay constant, hours.
pub const K_MIN_HOURS: f64 = 1e-3;

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct DtcParams {
    /// Residual temperature around sunrise, K.
    pub t0: f64,
    /// Temperature amplitude, K.
    pub ta: f64,
    /// Night asymptote minus `t0`, K.
    pub delta_t: f64,
    /// Start of free attenuation, local solar hours.
    pub ts: f64,
    /// Time of maximum temperature, local solar hours.
    pub tm: f64,
    /// Total optical thickness.
    pub tau: f64,
    /// Night decay constant, hours. Derived, never fitted.
    pub k_derived: f64,
}

/// Solar quantities that depend only on the context and `tm`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct DayGeometry {
    latitude: f64,
    declination: f64,
    cos_z_min: f64,
    m_min: f64,
    half_day: f64,
}

impl DayGeometry {
    pub(crate) fn new(ctx: &SolarContext) -> Result<Self> {
        let declination = ctx.declination();
        let z_min = zenith_from_hour_angle(ctx.latitude, declination, 0.0);
        if z_min >= 90.0 {
            return Err(Error::Argument(format!(
                "sun never rises at latitude {} on day {}",
                ctx.latitude, ctx.day_of_year
            )));
        }
        Ok(DayGeometry {
            latitude: ctx.latitude,
            declination,
            cos_z_min: z_min.to_radians().cos(),
            m_min: air_mass_unchecked(z_min),
            half_day: half_day_length(ctx.latitude, declination),
        })
    }

    /// Hours between `tm` and the thermal sunset.
    pub(crate) fn half_day(&self) -> f64 {
        self.half_day
    }

    fn zenith(&self, tm: f64, t: f64) -> f64 {
        zenith_from_hour_angle(self.latitude, self.declination, 15.0 * (t - tm))
    }

    /// `Ta · cos θz / cos θz,min · exp[(m_min − m(θz)) τ]`
    fn solar_term(&self, ta: f64, tm: f64, tau: f64, t: f64) -> f64 {
        let z = self.zenith(tm, t);
        ta * z.to_radians().cos() / self.cos_z_min * ((self.m_min - air_mass_unchecked(z)) * tau).exp()
    }
}

impl DtcParams {
    /// Builds parameters from the six fitted quantities and derives `k`.
    pub fn new(t0: f64, ta: f64, delta_t: f64, ts: f64, tm: f64, tau: f64, ctx: &SolarContext) -> Result<Self> {
        DtcParams {
            t0,
            ta,
            delta_t,
            ts,
            tm,
            tau,
            k_derived: f64::NAN,
        }
        .with_derived_k(ctx)
    }

    pub fn with_derived_k(mut self, ctx: &SolarContext) -> Result<Self> {
        self.k_derived = derive_k(&self, ctx)?;
        self.validate(ctx)?;
        Ok(self)
    }

    fn validate_shape(&self) -> Result<()> {
        let all_finite = [self.t0, self.ta, self.delta_t, self.ts, self.tm, self.tau]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Argument("DTC parameters must be finite".into()));
        }
        if self.ta < 0.0 {
            return Err(Error::Argument(format!("amplitude {} must be non-negative", self.ta)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Argument(format!(
                "optical thickness {} must be positive",
                self.tau
            )));
        }
        if !(10.0..=16.0).contains(&self.tm) {
            return Err(Error::Argument(format!("tm = {} h outside [10, 16]", self.tm)));
        }
        if !(self.ts > self.tm && self.ts <= 24.0) {
            return Err(Error::Argument(format!(
                "ts = {} h must lie in (tm, 24] with tm = {}",
                self.ts, self.tm
            )));
        }
        Ok(())
    }

    fn validate_geometry(&self, geo: &DayGeometry) -> Result<()> {
        if self.ts - self.tm >= geo.half_day {
            return Err(Error::Argument(format!(
                "ts = {} h falls after the thermal sunset at {} h",
                self.ts,
                self.tm + geo.half_day
            )));
        }
        Ok(())
    }

    /// Full validity check including the derived decay constant.
    pub fn validate(&self, ctx: &SolarContext) -> Result<()> {
        self.validate_shape()?;
        self.validate_geometry(&DayGeometry::new(ctx)?)?;
        if !(self.k_derived > 0.0 && self.k_derived <= K_MAX_HOURS) {
            return Err(Error::Argument(format!(
                "derived k = {} h outside (0, {K_MAX_HOURS}]",
                self.k_derived
            )));
        }
        Ok(())
    }

    /// Local solar time of the thermal sunrise, hours (may be negative in
    /// polar day).
    pub fn sunrise(&self, ctx: &SolarContext) -> Result<f64> {
        Ok(self.tm - DayGeometry::new(ctx)?.half_day)
    }
}

/// Evaluation core shared by the public API and the fitter. Assumes valid
/// parameters; `k` is taken from `p.k_derived`.
pub(crate) fn eval_with(p: &DtcParams, geo: &DayGeometry, t: f64) -> f64 {
    let sunrise = p.tm - geo.half_day;
    let t = if t < sunrise { t + 24.0 } else { t };
    if t < p.ts {
        p.t0 + geo.solar_term(p.ta, p.tm, p.tau, t)
    } else {
        let amp = geo.solar_term(p.ta, p.tm, p.tau, p.ts);
        let theta = PI / 12.0 * (t - p.tm);
        let theta_s = PI / 12.0 * (p.ts - p.tm);
        p.t0 + p.delta_t + (amp - p.delta_t) * (-12.0 / (PI * p.k_derived) * (theta - theta_s)).exp()
    }
}

/// Day-branch value at `t` regardless of which branch `t` belongs to.
pub(crate) fn day_value(p: &DtcParams, geo: &DayGeometry, t: f64) -> f64 {
    p.t0 + geo.solar_term(p.ta, p.tm, p.tau, t)
}

/// LST of the diurnal cycle at local solar time `t`.
pub fn eval_dtc(p: &DtcParams, ctx: &SolarContext, t: f64) -> Result<f64> {
    if !(0.0..24.0).contains(&t) {
        return Err(Error::Argument(format!("local solar time {t} outside [0, 24) h")));
    }
    let geo = DayGeometry::new(ctx)?;
    p.validate_shape()?;
    p.validate_geometry(&geo)?;
    if !(p.k_derived > 0.0 && p.k_derived <= K_MAX_HOURS) {
        return Err(Error::Argument(format!(
            "derived k = {} h outside (0, {K_MAX_HOURS}]",
            p.k_derived
        )));
    }
    Ok(eval_with(p, &geo, t))
}

/// Decay constant that makes `dT/dt` continuous at `ts`, given the
/// night-branch amplitude `amp − δT` and the day-branch slope at `ts`.
pub fn k_from_slope(amplitude_minus_delta: f64, day_slope: f64) -> Result<f64> {
    if !(day_slope < 0.0) {
        return Err(Error::FitGeometry(format!(
            "day branch is not cooling at the attenuation start (slope {day_slope} K/h)"
        )));
    }
    let k = -amplitude_minus_delta / day_slope;
    Ok(k.clamp(K_MIN_HOURS, K_MAX_HOURS))
}

pub(crate) fn derive_k_with(p: &DtcParams, geo: &DayGeometry) -> Result<f64> {
    let h = SLOPE_STEP_HOURS;
    let slope = (day_value(p, geo, p.ts + h) - day_value(p, geo, p.ts - h)) / (2.0 * h);
    let amp = geo.solar_term(p.ta, p.tm, p.tau, p.ts);
    k_from_slope(amp - p.delta_t, slope)
}

/// Night decay constant for `p`; `p.k_derived` is ignored.
pub fn derive_k(p: &DtcParams, ctx: &SolarContext) -> Result<f64> {
    let geo = DayGeometry::new(ctx)?;
    p.validate_shape()?;
    p.validate_geometry(&geo)?;
    derive_k_with(p, &geo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ctx() -> SolarContext {
        SolarContext::new(38.9, 100.4, 75, 6.7).unwrap()
    }

    fn reference() -> DtcParams {
        DtcParams::new(290.0, 15.0, -2.0, 17.5, 13.0, 0.3, &ctx()).unwrap()
    }

    #[test]
    fn peak_equals_t0_plus_ta() {
        let p = reference();
        assert_eq!(eval_dtc(&p, &ctx(), 13.0).unwrap(), 290.0 + 15.0);
    }

    #[test]
    fn night_branch_tends_to_asymptote() {
        // evaluated far past ts through the exported core (t is limited to [0, 24) publicly)
        let p = reference();
        let geo = DayGeometry::new(&ctx()).unwrap();
        let late = eval_with(&p, &geo, 17.5 + 60.0 * p.k_derived);
        assert_abs_diff_eq!(late, 290.0 - 2.0, epsilon = 1e-9);
    }

    #[test]
    fn branches_meet_at_ts() {
        let p = reference();
        let geo = DayGeometry::new(&ctx()).unwrap();
        let night = eval_with(&p, &geo, p.ts);
        assert_abs_diff_eq!(day_value(&p, &geo, p.ts), night, epsilon = 1e-9);
    }

    #[test]
    fn slope_is_continuous_at_ts() {
        let p = reference();
        let geo = DayGeometry::new(&ctx()).unwrap();
        let h = 1e-4;
        let left = (day_value(&p, &geo, p.ts) - day_value(&p, &geo, p.ts - h)) / h;
        let amp = geo.solar_term(p.ta, p.tm, p.tau, p.ts);
        let right = -(amp - p.delta_t) / p.k_derived;
        assert!((left - right).abs() <= 1e-2, "left {left} right {right}");
        // analytic night slope vs the central-difference day slope used for k
        let central = (day_value(&p, &geo, p.ts + 1e-3) - day_value(&p, &geo, p.ts - 1e-3)) / 2e-3;
        assert!((central - right).abs() <= 1e-4);
    }

    #[test]
    fn k_scales_linearly_with_amplitude() {
        let k1 = k_from_slope(3.0, -1.5).unwrap();
        let k2 = k_from_slope(6.0, -1.5).unwrap();
        assert_abs_diff_eq!(k2, 2.0 * k1, epsilon = 1e-12);
    }

    #[test]
    fn non_cooling_slope_is_fit_geometry_error() {
        assert!(matches!(k_from_slope(3.0, 0.0), Err(Error::FitGeometry(_))));
        assert!(matches!(k_from_slope(3.0, 0.1), Err(Error::FitGeometry(_))));
        let flat = DtcParams { ta: 0.0, ..reference() };
        assert!(matches!(derive_k(&flat, &ctx()), Err(Error::FitGeometry(_))));
    }

    #[test]
    fn pre_sunrise_times_use_previous_night() {
        let p = reference();
        let c = ctx();
        let sunrise = p.sunrise(&c).unwrap();
        assert!(sunrise > 6.0 && sunrise < 8.0);
        let geo = DayGeometry::new(&c).unwrap();
        assert_eq!(eval_dtc(&p, &c, 3.0).unwrap(), eval_with(&p, &geo, 27.0));
        // continuous across midnight
        let before = eval_dtc(&p, &c, 23.999_999).unwrap();
        let after = eval_dtc(&p, &c, 0.0).unwrap();
        assert!((before - after).abs() < 1e-5);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let c = ctx();
        assert!(DtcParams::new(290.0, -1.0, -2.0, 17.5, 13.0, 0.3, &c).is_err());
        assert!(DtcParams::new(290.0, 15.0, -2.0, 17.5, 9.0, 0.3, &c).is_err());
        assert!(DtcParams::new(290.0, 15.0, -2.0, 12.0, 13.0, 0.3, &c).is_err());
        assert!(DtcParams::new(290.0, 15.0, -2.0, 17.5, 13.0, 0.0, &c).is_err());
        // ts after the thermal sunset
        assert!(DtcParams::new(290.0, 15.0, -2.0, 23.0, 13.0, 0.3, &c).is_err());
        let p = DtcParams {
            k_derived: -1.0,
            ..reference()
        };
        assert!(matches!(eval_dtc(&p, &c, 12.0), Err(Error::Argument(_))));
        assert!(eval_dtc(&reference(), &c, 24.0).is_err());
    }

    proptest! {
        #[test]
        fn branch_continuity_for_random_params(
            t0 in 260.0f64..320.0, ta in 1.0f64..40.0, dt in -10.0f64..5.0,
            tm in 11.0f64..15.0, s in 0.5f64..5.0, tau in 0.05f64..2.0,
        ) {
            let c = SolarContext::new(38.9, 100.4, 180, 6.7).unwrap();
            if let Ok(p) = DtcParams::new(t0, ta, dt, tm + s, tm, tau, &c) {
                let geo = DayGeometry::new(&c).unwrap();
                let day = day_value(&p, &geo, p.ts);
                let night = eval_with(&p, &geo, p.ts);
                prop_assert!((day - night).abs() <= 1e-9);
            }
        }
    }
}
