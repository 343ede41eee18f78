//! Deterministic synthetic scenes with known truth.
//!
//! The truth is a fine grid of per-pixel diurnal cycles. Each pixel takes
//! the cycle shape of its land-cover class, with `T0` and `Ta` drawn from
//! the class ranges by smooth random texture fields. Observations are
//! derived from the truth:
//!
//! - `l_t1` is the truth at the first base time;
//! - `m_t1`, `m_t2` are block means over `m_factor` pixels, observed
//!   `m_view_shift` hours after the base times, with an affine sensor bias
//!   and a cloud mask on `m_t2`;
//! - the coarse series holds block means over `c_factor` pixels every half
//!   hour, plus a static smooth bias field and white noise;
//! - three stations record radiometer fluxes every ten minutes.
//!
//! All randomness comes from one ChaCha8 stream seeded by `seed`, consumed
//! in a fixed order, so equal configurations give byte-identical bundles
//! on every platform.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dtc::{eval_with, DayGeometry, DtcParams};
use crate::error::{Error, Result};
use crate::evalkit::{grid_metrics, MetricsReport};
use crate::fusion::FusionConfig;
use crate::grid::{aggregate, write_class_grid, write_temp_grid, ClassGrid, GridHeader, TempGrid, Units, NODATA};
use crate::insitu::{
    upwelling_flux, write_lst_csv, write_station_csv, LstFlag, LstRecord, StationRecord, StationSeries,
};
use crate::pipeline::{hhmm, BaseTimes, PipelineOptions, RunConfig, RunInputs, SceneInputs};
use crate::solar::SolarContext;

pub const STEPS_PER_DAY: usize = 48;
pub const STEP_SECONDS: i64 = 1800;
pub const STATION_STEP_SECONDS: i64 = 600;

/// Cycle shape of one land-cover class. `t0` and `ta` are ranges sampled
/// per pixel; the other parameters are shared by the class.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct ClassDtc {
    pub t0: [f64; 2],
    pub ta: [f64; 2],
    pub delta_t: f64,
    pub ts: f64,
    pub tm: f64,
    pub tau: f64,
}

fn default_classes() -> Vec<ClassDtc> {
    vec![
        ClassDtc {
            t0: [288.0, 291.0],
            ta: [8.0, 11.0],
            delta_t: -1.0,
            ts: 17.6,
            tm: 13.0,
            tau: 0.10,
        },
        ClassDtc {
            t0: [290.0, 293.0],
            ta: [11.0, 14.0],
            delta_t: -1.5,
            ts: 17.4,
            tm: 13.2,
            tau: 0.15,
        },
        ClassDtc {
            t0: [292.0, 295.0],
            ta: [14.0, 17.0],
            delta_t: -2.0,
            ts: 17.2,
            tm: 13.4,
            tau: 0.20,
        },
        ClassDtc {
            t0: [293.0, 296.0],
            ta: [17.0, 20.0],
            delta_t: -2.5,
            ts: 17.0,
            tm: 13.6,
            tau: 0.25,
        },
    ]
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default)]
pub struct SceneConfig {
    pub seed: u64,
    /// Edge of the square fine grid, pixels.
    pub fine_size: usize,
    /// Fine cell size, m.
    pub fine_cell: f64,
    pub m_factor: usize,
    pub c_factor: usize,
    pub n_classes: usize,
    pub classes: Vec<ClassDtc>,
    /// `(slope, intercept)` applied to the moderate observations.
    pub sensor_bias: (f64, f64),
    /// Moderate view time minus base time, hours.
    pub m_view_shift: f64,
    /// Fraction of moderate cells masked on `m_t2`.
    pub cloud_fraction: f64,
    /// Standard deviation of the coarse white noise, K.
    pub noise_sigma: f64,
    /// Standard deviation of the static coarse bias field, K.
    pub c_bias_sigma: f64,
    /// Smoothing radius of the land-cover field, fine pixels.
    pub class_radius: usize,
    /// Smoothing radius of the parameter texture, fine pixels.
    pub texture_radius: usize,
    pub solar: SolarContext,
    /// UTC midnight of the simulated day.
    pub day_start_utc: i64,
    pub t1_index: usize,
    pub t2_index: usize,
    pub tp_index: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            seed: 42,
            fine_size: 192,
            fine_cell: 30.0,
            m_factor: 8,
            c_factor: 32,
            n_classes: 4,
            classes: default_classes(),
            sensor_bias: (1.0, 0.0),
            m_view_shift: 0.37,
            cloud_fraction: 0.2,
            noise_sigma: 0.3,
            c_bias_sigma: 0.5,
            class_radius: 10,
            texture_radius: 3,
            solar: SolarContext {
                latitude: 38.9,
                longitude: 100.4,
                day_of_year: 211,
                utc_offset: 100.4 / 15.0,
            },
            // 2012-07-29 00:00 UTC
            day_start_utc: 1_343_520_000,
            t1_index: 7,
            t2_index: 15,
            tp_index: 17,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let arg = |m: String| Err(Error::Argument(m));
        if self.fine_size == 0 || self.m_factor == 0 || self.c_factor == 0 {
            return arg("grid size and factors must be positive".into());
        }
        if !self.fine_size.is_multiple_of(self.m_factor) || !self.fine_size.is_multiple_of(self.c_factor) {
            return arg(format!(
                "factors {} and {} must divide the fine size {}",
                self.m_factor, self.c_factor, self.fine_size
            ));
        }
        if !self.c_factor.is_multiple_of(self.m_factor) {
            return arg(format!(
                "coarse factor {} is not a multiple of {}",
                self.c_factor, self.m_factor
            ));
        }
        if !(self.fine_cell > 0.0) {
            return arg(format!("fine cell size {} must be positive", self.fine_cell));
        }
        if self.n_classes == 0 || self.classes.len() != self.n_classes {
            return arg(format!(
                "class table has {} entries for {} classes",
                self.classes.len(),
                self.n_classes
            ));
        }
        if !(0.0..1.0).contains(&self.cloud_fraction) {
            return arg(format!("cloud fraction {} outside [0, 1)", self.cloud_fraction));
        }
        if !(self.noise_sigma >= 0.0) || !(self.c_bias_sigma >= 0.0) {
            return arg("noise and bias magnitudes must be non-negative".into());
        }
        if !(self.sensor_bias.0 > 0.0) || !self.sensor_bias.1.is_finite() {
            return arg(format!(
                "sensor bias {:?} is not a positive affine map",
                self.sensor_bias
            ));
        }
        if !self.m_view_shift.is_finite() || self.m_view_shift.abs() >= 3.0 {
            return arg(format!(
                "view shift {} h must be finite and under 3 h",
                self.m_view_shift
            ));
        }
        for (name, i) in [("t1", self.t1_index), ("t2", self.t2_index), ("tp", self.tp_index)] {
            if i >= STEPS_PER_DAY {
                return arg(format!("{name} index {i} outside the {STEPS_PER_DAY} half-hour steps"));
            }
        }
        self.solar.validate().map_err(|e| Error::Argument(e.to_string()))?;
        for (k, c) in self.classes.iter().enumerate() {
            for p in [c.t0, c.ta] {
                if !(p[0] <= p[1]) {
                    return arg(format!("class {k} has an empty parameter range {p:?}"));
                }
            }
            for corner in [(c.t0[0], c.ta[0]), (c.t0[1], c.ta[1])] {
                DtcParams::new(corner.0, corner.1, c.delta_t, c.ts, c.tm, c.tau, &self.solar)
                    .map_err(|e| Error::Argument(format!("class {k}: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn timestamp(&self, index: usize) -> i64 {
        self.day_start_utc + index as i64 * STEP_SECONDS
    }

    pub fn times(&self) -> BaseTimes {
        BaseTimes {
            t1: self.timestamp(self.t1_index),
            t2: self.timestamp(self.t2_index),
            tp: self.timestamp(self.tp_index),
        }
    }

    fn view_shift_seconds(&self) -> i64 {
        (self.m_view_shift * 3600.0).round() as i64
    }

    fn fine_header(&self) -> GridHeader {
        GridHeader::new(self.fine_size, self.fine_size, self.fine_cell, Units::Kelvin)
    }
}

/// A station placed on a fine pixel, with its true LST at every record.
#[derive(Clone, Debug, PartialEq)]
pub struct Station {
    pub row: usize,
    pub col: usize,
    pub series: StationSeries,
    pub truth_k: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SceneBundle {
    pub config: SceneConfig,
    pub classes: ClassGrid,
    /// Fine truth at every half-hour step.
    pub truth: Vec<TempGrid>,
    pub l_t1: TempGrid,
    pub m_t1: TempGrid,
    pub m_t2: TempGrid,
    pub c_series: Vec<TempGrid>,
    pub stations: Vec<Station>,
    /// Per-pixel cycle parameters behind the truth.
    pub params: Vec<DtcParams>,
}

impl SceneBundle {
    pub fn times(&self) -> BaseTimes {
        self.config.times()
    }

    /// The bundle as pipeline inputs.
    pub fn inputs(&self) -> SceneInputs {
        SceneInputs {
            l_t1: self.l_t1.clone(),
            m_t1: Some(self.m_t1.clone()),
            m_t2: Some(self.m_t2.clone()),
            c_series: self.c_series.clone(),
            classes: Some(self.classes.clone()),
        }
    }
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn box_blur(values: &[f64], width: usize, height: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return values.to_vec();
    }
    let r = radius as isize;
    let span = (2 * radius + 1) as f64;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut horizontal = vec![0.0; values.len()];
    for row in 0..height {
        for col in 0..width {
            let mut s = 0.0;
            for d in -r..=r {
                s += values[row * width + clamp(col as isize + d, width)];
            }
            horizontal[row * width + col] = s / span;
        }
    }
    let mut out = vec![0.0; values.len()];
    for row in 0..height {
        for col in 0..width {
            let mut s = 0.0;
            for d in -r..=r {
                s += horizontal[clamp(row as isize + d, height) * width + col];
            }
            out[row * width + col] = s / span;
        }
    }
    out
}

/// Gaussian white noise smoothed by three box passes and rescaled to zero
/// mean and unit standard deviation.
fn smooth_field(rng: &mut ChaCha8Rng, width: usize, height: usize, radius: usize) -> Vec<f64> {
    let mut f = normals(rng, width * height);
    for _ in 0..3 {
        f = box_blur(&f, width, height, radius);
    }
    let n = f.len() as f64;
    let mean = f.iter().sum::<f64>() / n;
    let std = (f.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let scale = if std > 0.0 { 1.0 / std } else { 0.0 };
    f.iter().map(|v| (v - mean) * scale).collect()
}

/// Rank of every value, ties broken by index.
fn ranks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut rank = vec![0; values.len()];
    for (r, i) in order.into_iter().enumerate() {
        rank[i] = r;
    }
    rank
}

fn texture_fraction(v: f64) -> f64 {
    (0.5 + 0.25 * v).clamp(0.0, 1.0)
}

fn eval_fine(header: &GridHeader, params: &[DtcParams], geo: &DayGeometry, t_local: f64, ts: i64) -> TempGrid {
    let values = params.iter().map(|p| eval_with(p, geo, t_local) as f32).collect();
    TempGrid::from_computed(header.clone().with_timestamp(ts), values)
}

fn moderate_view(cfg: &SceneConfig, params: &[DtcParams], geo: &DayGeometry, base_ts: i64) -> Result<TempGrid> {
    let ts = base_ts + cfg.view_shift_seconds();
    let fine = eval_fine(&cfg.fine_header(), params, geo, cfg.solar.local_solar_hours(ts), ts);
    let (slope, intercept) = cfg.sensor_bias;
    Ok(aggregate(&fine, cfg.m_factor, 1.0)?
        .map_valid(|v| (slope * v as f64 + intercept) as f32)
        .with_timestamp(ts))
}

/// Builds a scene from its configuration.
pub fn generate_scene(cfg: &SceneConfig) -> Result<SceneBundle> {
    cfg.validate()?;
    let n = cfg.fine_size;
    let header = cfg.fine_header();
    let geo = DayGeometry::new(&cfg.solar)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let class_field = smooth_field(&mut rng, n, n, cfg.class_radius);
    let t0_field = smooth_field(&mut rng, n, n, cfg.texture_radius);
    let ta_field = smooth_field(&mut rng, n, n, cfg.texture_radius);
    let total = n * n;
    let class_ids: Vec<u32> = ranks(&class_field)
        .into_iter()
        .map(|r| (r * cfg.n_classes / total) as u32)
        .collect();
    let classes = ClassGrid::new(header.clone().with_units(Units::ClassId), class_ids)?;

    let params = classes
        .values()
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let c = &cfg.classes[k as usize];
            let t0 = c.t0[0] + texture_fraction(t0_field[i]) * (c.t0[1] - c.t0[0]);
            let ta = c.ta[0] + texture_fraction(ta_field[i]) * (c.ta[1] - c.ta[0]);
            DtcParams::new(t0, ta, c.delta_t, c.ts, c.tm, c.tau, &cfg.solar)
        })
        .collect::<Result<Vec<_>>>()?;

    let truth: Vec<TempGrid> = (0..STEPS_PER_DAY)
        .map(|k| {
            let ts = cfg.timestamp(k);
            eval_fine(&header, &params, &geo, cfg.solar.local_solar_hours(ts), ts)
        })
        .collect();
    let times = cfg.times();
    let l_t1 = truth[cfg.t1_index].clone();

    let m_t1 = moderate_view(cfg, &params, &geo, times.t1)?;
    let m_t2_clear = moderate_view(cfg, &params, &geo, times.t2)?;
    let mn = n / cfg.m_factor;
    let cloud_field = smooth_field(&mut rng, mn, mn, 2);
    let n_cloud = (cfg.cloud_fraction * (mn * mn) as f64).round() as usize;
    let cloud_ranks = ranks(&cloud_field);
    let m_values = m_t2_clear
        .values()
        .iter()
        .zip(&cloud_ranks)
        .map(|(&v, &r)| if r >= mn * mn - n_cloud { NODATA } else { v })
        .collect();
    let m_t2 = TempGrid::from_computed(m_t2_clear.header().clone(), m_values);

    let cn = n / cfg.c_factor;
    let c_bias: Vec<f64> = smooth_field(&mut rng, cn, cn, 1)
        .iter()
        .map(|v| v * cfg.c_bias_sigma)
        .collect();
    let mut c_series = Vec::with_capacity(STEPS_PER_DAY);
    for fine in &truth {
        let agg = aggregate(fine, cfg.c_factor, 1.0)?;
        let noise = if cfg.noise_sigma > 0.0 {
            normals(&mut rng, cn * cn)
        } else {
            vec![0.0; cn * cn]
        };
        let values = agg
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v as f64 + c_bias[i] + noise[i] * cfg.noise_sigma) as f32)
            .collect();
        c_series.push(TempGrid::from_computed(agg.header().clone(), values));
    }

    let stations = [(n / 4, n / 4), (n / 2, n / 2), (3 * n / 4, 3 * n / 4)]
        .iter()
        .enumerate()
        .map(|(s, &(row, col))| station(cfg, &params[row * n + col], &geo, s, row, col))
        .collect::<Result<Vec<_>>>()?;

    Ok(SceneBundle {
        config: cfg.clone(),
        classes,
        truth,
        l_t1,
        m_t1,
        m_t2,
        c_series,
        stations,
        params,
    })
}

fn station(
    cfg: &SceneConfig,
    p: &DtcParams,
    geo: &DayGeometry,
    index: usize,
    row: usize,
    col: usize,
) -> Result<Station> {
    let e = [0.95 + 0.01 * index as f64, 0.965, 0.975];
    let emissivity = crate::insitu::broadband_emissivity(e[0], e[1], e[2])?;
    let steps = 86_400 / STATION_STEP_SECONDS;
    let mut records = Vec::with_capacity(steps as usize);
    let mut truth_k = Vec::with_capacity(steps as usize);
    for k in 0..steps {
        let ts = cfg.day_start_utc + k * STATION_STEP_SECONDS;
        let local = cfg.solar.local_solar_hours(ts);
        let t = eval_with(p, geo, local);
        let lw_down = 330.0 + 40.0 * (std::f64::consts::TAU * (local - 14.0) / 24.0).cos();
        records.push(
            StationRecord::new(ts, upwelling_flux(t, lw_down, emissivity), lw_down).with_emissivities(e[0], e[1], e[2]),
        );
        truth_k.push(t);
    }
    Ok(Station {
        row,
        col,
        series: StationSeries::new(records)?,
        truth_k,
    })
}

/// Metrics of a fused grid against the truth at a half-hour step.
pub fn score_against_truth(fused: &TempGrid, bundle: &SceneBundle, t_index: usize) -> Result<MetricsReport> {
    let truth = bundle
        .truth
        .get(t_index)
        .ok_or_else(|| Error::Range(format!("time index {t_index} outside 0..{}", bundle.truth.len())))?;
    grid_metrics(fused, truth)
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct StationEntry {
    pub row: usize,
    pub col: usize,
    pub fluxes: PathBuf,
    pub truth: PathBuf,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SceneManifest {
    pub config: SceneConfig,
    pub times: BaseTimes,
    pub timestamps: Vec<i64>,
    pub classes: PathBuf,
    pub l_t1: PathBuf,
    pub m_t1: PathBuf,
    pub m_t2: PathBuf,
    pub c_series: PathBuf,
    pub truth: Vec<PathBuf>,
    pub stations: Vec<StationEntry>,
    pub run_config: PathBuf,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format("json", e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the bundle as grid files, station CSVs, a `scene.json` manifest
/// and a `run.json` run configuration. Paths inside both JSON files are
/// relative to `dir`.
pub fn write_bundle(bundle: &SceneBundle, dir: &Path, fusion: &FusionConfig) -> Result<SceneManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for sub in ["truth", "c_series", "stations"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    write_class_grid(&bundle.classes, &dir.join("classes"))?;
    write_temp_grid(&bundle.l_t1, &dir.join("l_t1"))?;
    write_temp_grid(&bundle.m_t1, &dir.join("m_t1"))?;
    write_temp_grid(&bundle.m_t2, &dir.join("m_t2"))?;
    let mut truth = Vec::with_capacity(bundle.truth.len());
    for g in &bundle.truth {
        let rel = PathBuf::from(format!("truth/truth_{}", hhmm(g.timestamp_utc())));
        write_temp_grid(g, &dir.join(&rel))?;
        truth.push(rel);
    }
    for g in &bundle.c_series {
        write_temp_grid(g, &dir.join(format!("c_series/c_{}", hhmm(g.timestamp_utc()))))?;
    }
    let mut stations = Vec::new();
    for (i, s) in bundle.stations.iter().enumerate() {
        let fluxes = PathBuf::from(format!("stations/station_{i}.csv"));
        let truth_path = PathBuf::from(format!("stations/station_{i}_truth.csv"));
        write_station_csv(&s.series, &dir.join(&fluxes))?;
        let records: Vec<LstRecord> = s
            .series
            .records()
            .iter()
            .zip(&s.truth_k)
            .map(|(r, &t)| LstRecord {
                timestamp_utc: r.timestamp_utc,
                lst_k: Some(t),
                flag: LstFlag::Ok,
            })
            .collect();
        write_lst_csv(&records, &dir.join(&truth_path))?;
        stations.push(StationEntry {
            row: s.row,
            col: s.col,
            fluxes,
            truth: truth_path,
        });
    }
    let run = RunConfig {
        inputs: RunInputs {
            l_t1: "l_t1".into(),
            m_t1: Some("m_t1".into()),
            m_t2: Some("m_t2".into()),
            c_series: "c_series".into(),
            classes: Some("classes".into()),
        },
        times: bundle.times(),
        solar: bundle.config.solar,
        options: PipelineOptions {
            fusion: *fusion,
            ..PipelineOptions::default()
        },
        output_dir: "out".into(),
    };
    run.save(&dir.join("run.json"))?;
    let manifest = SceneManifest {
        config: bundle.config.clone(),
        times: bundle.times(),
        timestamps: bundle.truth.iter().map(|g| g.timestamp_utc()).collect(),
        classes: "classes".into(),
        l_t1: "l_t1".into(),
        m_t1: "m_t1".into(),
        m_t2: "m_t2".into(),
        c_series: "c_series".into(),
        truth,
        stations,
        run_config: "run.json".into(),
    };
    write_json(&manifest, &dir.join("scene.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::insitu::series_lst;

    fn small() -> SceneConfig {
        SceneConfig {
            fine_size: 64,
            m_factor: 4,
            c_factor: 16,
            class_radius: 4,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate_scene(&small()).unwrap();
        let b = generate_scene(&small()).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.m_t2, b.m_t2);
        assert_eq!(a.c_series, b.c_series);
        assert_eq!(a.classes, b.classes);
        let c = generate_scene(&SceneConfig { seed: 43, ..small() }).unwrap();
        assert_ne!(a.c_series, c.c_series);
        assert_ne!(a.classes, c.classes);
    }

    #[test]
    fn clean_degradation_is_aggregation() {
        let cfg = SceneConfig {
            sensor_bias: (1.0, 0.0),
            m_view_shift: 0.0,
            noise_sigma: 0.0,
            c_bias_sigma: 0.0,
            cloud_fraction: 0.0,
            ..small()
        };
        let b = generate_scene(&cfg).unwrap();
        let agg = aggregate(&b.truth[cfg.t1_index], cfg.m_factor, 1.0).unwrap();
        assert_eq!(agg.values(), b.m_t1.values());
        for (k, c) in b.c_series.iter().enumerate() {
            assert_eq!(aggregate(&b.truth[k], cfg.c_factor, 1.0).unwrap().values(), c.values());
        }
        assert_eq!(b.m_t2.valid_count(), b.m_t2.values().len());
    }

    #[test]
    fn observation_layout() {
        let cfg = small();
        let b = generate_scene(&cfg).unwrap();
        assert_eq!(b.truth.len(), STEPS_PER_DAY);
        assert_eq!(b.c_series.len(), STEPS_PER_DAY);
        assert_eq!(b.l_t1, b.truth[cfg.t1_index]);
        assert_eq!(b.m_t1.width(), 16);
        assert_eq!(b.c_series[0].width(), 4);
        assert_eq!(b.m_t1.timestamp_utc(), cfg.timestamp(cfg.t1_index) + 1332);
        let cells = b.m_t2.values().len();
        let clouds = cells - b.m_t2.valid_count();
        assert_eq!(clouds, (0.2 * cells as f64).round() as usize);
        assert_eq!(b.classes.n_classes(), 4);
    }

    #[test]
    fn stations_invert_exactly() {
        let b = generate_scene(&small()).unwrap();
        assert_eq!(b.stations.len(), 3);
        for s in &b.stations {
            let lst = series_lst(&s.series, None).unwrap();
            assert_eq!(lst.len(), 144);
            for (r, t) in lst.iter().zip(&s.truth_k) {
                assert!((r.lst_k.unwrap() - t).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn scoring() {
        let b = generate_scene(&small()).unwrap();
        let truth = &b.truth[10];
        let m = score_against_truth(truth, &b, 10).unwrap();
        assert_eq!((m.mae, m.rmse, m.bias), (0.0, 0.0, 0.0));
        assert!((m.r - 1.0).abs() < 1e-12);
        let plus = truth.map_valid(|v| v + 1.0);
        let m = score_against_truth(&plus, &b, 10).unwrap();
        assert!((m.mae - 1.0).abs() < 1e-4 && (m.rmse - 1.0).abs() < 1e-4 && (m.bias - 1.0).abs() < 1e-4);
        assert!(matches!(score_against_truth(truth, &b, 48), Err(Error::Range(_))));
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            SceneConfig { m_factor: 5, ..small() },
            SceneConfig {
                cloud_fraction: 1.0,
                ..small()
            },
            SceneConfig {
                n_classes: 3,
                ..small()
            },
            SceneConfig {
                tp_index: 48,
                ..small()
            },
        ];
        for cfg in bad {
            assert!(matches!(generate_scene(&cfg), Err(Error::Argument(_))), "{cfg:?}");
        }
    }

    #[test]
    fn bundle_files_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let b = generate_scene(&small()).unwrap();
        let (a_dir, b_dir) = (dir.path().join("a"), dir.path().join("b"));
        write_bundle(&b, &a_dir, &FusionConfig::default()).unwrap();
        write_bundle(&generate_scene(&small()).unwrap(), &b_dir, &FusionConfig::default()).unwrap();
        for rel in [
            "scene.json",
            "run.json",
            "m_t2.f32",
            "c_series/c_1230.f32",
            "stations/station_1.csv",
        ] {
            assert_eq!(
                fs::read(a_dir.join(rel)).unwrap(),
                fs::read(b_dir.join(rel)).unwrap(),
                "{rel}"
            );
        }
        let cfg = RunConfig::load(&a_dir.join("run.json")).unwrap();
        cfg.validate().unwrap();
        let inputs = cfg.load_inputs().unwrap();
        assert_eq!(inputs.c_series, b.c_series);
        assert_eq!(inputs.m_t2.unwrap(), b.m_t2);
    }
}
