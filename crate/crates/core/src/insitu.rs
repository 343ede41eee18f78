//! Ground LST from four-component radiometer longwave fluxes.
//!
//! ```text
//! T = [(L↑ − (1 − ε) L↓) / (ε σ)]^¼
//! ε = 0.2122 ε29 + 0.3859 ε31 + 0.4029 ε32
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stefan-Boltzmann constant as used by the retrieval, W m⁻² K⁻⁴.
pub const STEFAN_BOLTZMANN: f64 = 5.67e-8;

/// Narrowband-to-broadband emissivity coefficients for bands 29, 31, 32.
pub const EMISSIVITY_COEFFICIENTS: [f64; 3] = [0.2122, 0.3859, 0.4029];

/// Half-width of the nearest-timestamp matching window, seconds.
pub const MATCH_TOLERANCE_S: i64 = 300;

fn check_emissivity(name: &str, e: f64) -> Result<()> {
    if e > 0.0 && e <= 1.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("{name} must lie in (0, 1], got {e}")))
    }
}

/// Broadband emissivity from the three narrowband emissivities.
pub fn broadband_emissivity(e29: f64, e31: f64, e32: f64) -> Result<f64> {
    check_emissivity("e29", e29)?;
    check_emissivity("e31", e31)?;
    check_emissivity("e32", e32)?;
    let [a, b, c] = EMISSIVITY_COEFFICIENTS;
    Ok(a * e29 + b * e31 + c * e32)
}

/// Surface temperature from upwelling and downwelling longwave flux.
pub fn retrieve_lst(lw_up: f64, lw_down: f64, emissivity: f64) -> Result<f64> {
    check_emissivity("emissivity", emissivity)?;
    let emitted = lw_up - (1.0 - emissivity) * lw_down;
    if !(emitted > 0.0) {
        return Err(Error::Domain(format!(
            "emitted radiance {emitted} W m-2 is not positive (lw_up {lw_up}, lw_down {lw_down}, emissivity {emissivity})"
        )));
    }
    Ok((emitted / (emissivity * STEFAN_BOLTZMANN)).powf(0.25))
}

/// Upwelling flux of a surface at `t` kelvin, the inverse of [`retrieve_lst`].
pub fn upwelling_flux(t: f64, lw_down: f64, emissivity: f64) -> f64 {
    emissivity * STEFAN_BOLTZMANN * t.powi(4) + (1.0 - emissivity) * lw_down
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct StationRecord {
    pub timestamp_utc: i64,
    pub lw_up: f64,
    pub lw_down: f64,
    #[serde(default)]
    pub e29: Option<f64>,
    #[serde(default)]
    pub e31: Option<f64>,
    #[serde(default)]
    pub e32: Option<f64>,
}

impl StationRecord {
    pub fn new(timestamp_utc: i64, lw_up: f64, lw_down: f64) -> Self {
        StationRecord {
            timestamp_utc,
            lw_up,
            lw_down,
            e29: None,
            e31: None,
            e32: None,
        }
    }

    pub fn with_emissivities(mut self, e29: f64, e31: f64, e32: f64) -> Self {
        self.e29 = Some(e29);
        self.e31 = Some(e31);
        self.e32 = Some(e32);
        self
    }

    /// Broadband emissivity when all three bands are present.
    pub fn emissivity(&self) -> Result<Option<f64>> {
        match (self.e29, self.e31, self.e32) {
            (Some(a), Some(b), Some(c)) => broadband_emissivity(a, b, c).map(Some),
            (None, None, None) => Ok(None),
            _ => Err(Error::format(
                "e29,e31,e32",
                format!("record at {} has a partial emissivity triple", self.timestamp_utc),
            )),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lw_up > 0.0) {
            return Err(Error::format(
                "lw_up",
                format!("{} at {} must be positive", self.lw_up, self.timestamp_utc),
            ));
        }
        if !(self.lw_down >= 0.0) {
            return Err(Error::format(
                "lw_down",
                format!("{} at {} must be non-negative", self.lw_down, self.timestamp_utc),
            ));
        }
        self.emissivity().map(|_| ())
    }
}

/// Time-ordered radiometer records of one station.
#[derive(Clone, Debug, PartialEq)]
pub struct StationSeries {
    records: Vec<StationRecord>,
}

impl StationSeries {
    pub fn new(records: Vec<StationRecord>) -> Result<Self> {
        for r in &records {
            r.validate()?;
        }
        if let Some(w) = records.windows(2).find(|w| w[1].timestamp_utc <= w[0].timestamp_utc) {
            return Err(Error::format(
                "timestamp_utc",
                format!("{} does not follow {}", w[1].timestamp_utc, w[0].timestamp_utc),
            ));
        }
        Ok(StationSeries { records })
    }

    pub fn records(&self) -> &[StationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Reads `timestamp_utc,lw_up,lw_down[,e29,e31,e32]`.
pub fn read_station_csv(path: &Path) -> Result<StationSeries> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let records = reader
        .deserialize()
        .collect::<std::result::Result<Vec<StationRecord>, _>>()
        .map_err(csv_err)?;
    StationSeries::new(records)
}

/// Writes a station series, with emissivity columns only when every record
/// carries them.
pub fn write_station_csv(series: &StationSeries, path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let with_e = series.records.iter().all(|r| r.e29.is_some());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if with_e {
        w.write_record(["timestamp_utc", "lw_up", "lw_down", "e29", "e31", "e32"])
            .map_err(csv_err)?;
    } else {
        w.write_record(["timestamp_utc", "lw_up", "lw_down"]).map_err(csv_err)?;
    }
    for r in &series.records {
        let mut row = vec![r.timestamp_utc.to_string(), r.lw_up.to_string(), r.lw_down.to_string()];
        if with_e {
            row.extend([r.e29, r.e31, r.e32].iter().map(|e| e.unwrap_or(f64::NAN).to_string()));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum LstFlag {
    Ok,
    /// The record failed the physical-domain check.
    Domain,
    /// No record within the matching window of the requested time.
    Missing,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct LstRecord {
    pub timestamp_utc: i64,
    pub lst_k: Option<f64>,
    pub flag: LstFlag,
}

/// Retrieves LST for every record. Records failing the domain check are
/// kept as flagged gaps.
pub fn series_lst(series: &StationSeries, default_emissivity: Option<f64>) -> Result<Vec<LstRecord>> {
    if let Some(e) = default_emissivity {
        check_emissivity("default emissivity", e)?;
    }
    series
        .records
        .iter()
        .map(|r| {
            let e = r.emissivity()?.or(default_emissivity).ok_or_else(|| {
                Error::Config(format!(
                    "record at {} has no emissivity and no default was configured",
                    r.timestamp_utc
                ))
            })?;
            Ok(match retrieve_lst(r.lw_up, r.lw_down, e) {
                Ok(t) => LstRecord {
                    timestamp_utc: r.timestamp_utc,
                    lst_k: Some(t),
                    flag: LstFlag::Ok,
                },
                Err(err) => {
                    log::warn!("station record at {}: {err}", r.timestamp_utc);
                    LstRecord {
                        timestamp_utc: r.timestamp_utc,
                        lst_k: None,
                        flag: LstFlag::Domain,
                    }
                }
            })
        })
        .collect()
}

/// Picks, for every multiple of `step_s` spanned by the series, the record
/// nearest in time within `tolerance_s`. Ties go to the earlier record.
/// Times with no record in reach become `Missing` gaps.
pub fn decimate_nearest(records: &[LstRecord], step_s: i64, tolerance_s: i64) -> Result<Vec<LstRecord>> {
    if step_s <= 0 || tolerance_s < 0 {
        return Err(Error::Argument(format!(
            "step {step_s} s must be positive and tolerance {tolerance_s} s non-negative"
        )));
    }
    let (Some(first), Some(last)) = (records.first(), records.last()) else {
        return Ok(Vec::new());
    };
    let lo = -(tolerance_s - first.timestamp_utc).div_euclid(step_s);
    let hi = (last.timestamp_utc + tolerance_s).div_euclid(step_s);
    let mut out = Vec::new();
    let mut cursor = 0;
    for k in lo..=hi {
        let target = k * step_s;
        while cursor + 1 < records.len() && records[cursor + 1].timestamp_utc <= target {
            cursor += 1;
        }
        let mut best: Option<&LstRecord> = None;
        for r in &records[cursor..records.len().min(cursor + 2)] {
            let d = (r.timestamp_utc - target).abs();
            if d <= tolerance_s && best.is_none_or(|b| d < (b.timestamp_utc - target).abs()) {
                best = Some(r);
            }
        }
        out.push(match best {
            Some(r) => LstRecord {
                timestamp_utc: target,
                ..*r
            },
            None => LstRecord {
                timestamp_utc: target,
                lst_k: None,
                flag: LstFlag::Missing,
            },
        });
    }
    Ok(out)
}

/// Writes `timestamp_utc,lst_k,flag`; gaps have an empty `lst_k`.
pub fn write_lst_csv(records: &[LstRecord], path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["timestamp_utc", "lst_k", "flag"]).map_err(csv_err)?;
    for r in records {
        let flag = match r.flag {
            LstFlag::Ok => "ok",
            LstFlag::Domain => "domain",
            LstFlag::Missing => "missing",
        };
        let lst = r.lst_k.map(|t| format!("{t:.6}")).unwrap_or_default();
        w.write_record([r.timestamp_utc.to_string(), lst, flag.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_lst_csv(path: &Path) -> Result<Vec<LstRecord>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<LstRecord>, _>>()
        .map_err(csv_err)
}
