//! Solar geometry for the diurnal temperature model.
//!
//! Declination follows the Spencer (1971) Fourier series in day of year,
//! zenith angles are geometric (no refraction) and the relative air mass
//! uses the Kasten–Young (1989) fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct SolarContext {
    /// Degrees, positive north.
    pub latitude: f64,
    /// Degrees, positive east.
    pub longitude: f64,
    pub day_of_year: u32,
    /// Hours added to UTC to obtain local solar time.
    pub utc_offset: f64,
}

impl SolarContext {
    pub fn new(latitude: f64, longitude: f64, day_of_year: u32, utc_offset: f64) -> Result<Self> {
        let ctx = SolarContext {
            latitude,
            longitude,
            day_of_year,
            utc_offset,
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(Error::Argument(format!("latitude {} outside [-90, 90]", self.latitude)));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(Error::Argument(format!(
                "longitude {} outside [-180, 180]",
                self.longitude
            )));
        }
        if !(1..=366).contains(&self.day_of_year) {
            return Err(Error::Argument(format!(
                "day of year {} outside [1, 366]",
                self.day_of_year
            )));
        }
        if !(-13.0..=14.0).contains(&self.utc_offset) {
            return Err(Error::Argument(format!(
                "utc offset {} outside [-13, 14] h",
                self.utc_offset
            )));
        }
        Ok(())
    }

    /// Solar declination for this day, degrees.
    pub fn declination(&self) -> f64 {
        declination(self.day_of_year)
    }

    /// Local solar time in hours, wrapped into [0, 24).
    pub fn local_solar_hours(&self, timestamp_utc: i64) -> f64 {
        let utc_hours = timestamp_utc.rem_euclid(86_400) as f64 / 3600.0;
        (utc_hours + self.utc_offset).rem_euclid(24.0)
    }
}

/// Spencer declination, degrees.
pub fn declination(day_of_year: u32) -> f64 {
    let g = 2.0 * std::f64::consts::PI * (day_of_year as f64 - 1.0) / 365.0;
    let rad = 0.006918 - 0.399912 * g.cos() + 0.070257 * g.sin() - 0.006758 * (2.0 * g).cos()
        + 0.000907 * (2.0 * g).sin()
        - 0.002697 * (3.0 * g).cos()
        + 0.00148 * (3.0 * g).sin();
    rad.to_degrees()
}

/// Zenith angle for a given latitude, declination and hour angle (all in
/// degrees), clamped to [0, 180].
pub fn zenith_from_hour_angle(latitude: f64, declination: f64, hour_angle: f64) -> f64 {
    let (phi, delta, h) = (latitude.to_radians(), declination.to_radians(), hour_angle.to_radians());
    let cos_z = phi.sin() * delta.sin() + phi.cos() * delta.cos() * h.cos();
    cos_z.clamp(-1.0, 1.0).acos().to_degrees().clamp(0.0, 180.0)
}

/// Solar zenith angle in degrees at local solar time `t` (hours).
pub fn solar_zenith(ctx: &SolarContext, t: f64) -> Result<f64> {
    if !(0.0..24.0).contains(&t) {
        return Err(Error::Argument(format!("local solar time {t} outside [0, 24) h")));
    }
    Ok(zenith_from_hour_angle(
        ctx.latitude,
        ctx.declination(),
        15.0 * (t - 12.0),
    ))
}

/// Half-length of the day in hours (sunrise to noon), 0 for polar night
/// and 12 for polar day.
pub fn half_day_length(latitude: f64, declination: f64) -> f64 {
    let x = -latitude.to_radians().tan() * declination.to_radians().tan();
    x.clamp(-1.0, 1.0).acos().to_degrees() / 15.0
}

/// Relative optical air mass (Kasten–Young), `theta_z` in degrees.
pub fn air_mass(theta_z: f64) -> Result<f64> {
    if !(0.0..96.0).contains(&theta_z) {
        return Err(Error::Domain(format!(
            "air mass undefined for zenith angle {theta_z} (valid range [0, 96) degrees)"
        )));
    }
    Ok(air_mass_unchecked(theta_z))
}

pub(crate) fn air_mass_unchecked(theta_z: f64) -> f64 {
    1.0 / (theta_z.to_radians().cos() + 0.50572 * (96.07995 - theta_z).powf(-1.6364))
}
