//! Stage orchestration: diurnal-cycle fitting on the coarse series,
//! temporal normalization of the moderate observations, sensor
//! normalization of the fine snapshot, upsampling to the fine grid and
//! fusion.
//!
//! With temporal normalization each moderate grid is moved from its view
//! time (header timestamp) to its nominal base time `t1` or `t2` using the
//! per-cell diurnal cycle fitted to the coarse series. Without it the
//! moderate grids are used as if they had been observed at the base times.
//! Sensor normalization fits the fine snapshot against the (normalized)
//! moderate grid at `t1`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dtc::{fit_dtc_field, interp_halfhourly, normalize_time_dtc, DtcField};
use crate::error::{Error, Result};
use crate::fusion::{fuse, FusionConfig, FusionInputs};
use crate::grid::{read_class_grid, read_temp_grid, resample_nearest, ClassGrid, TempGrid};
use crate::sensornorm::{apply_glolm, fit_glolm, GloLmFit, DEFAULT_PURITY_THRESHOLD};
use crate::solar::SolarContext;

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Fine, moderate and coarse sources.
    #[default]
    Lmc,
    /// Fine and coarse sources only.
    Lc,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct BaseTimes {
    /// Fine snapshot time, UTC seconds.
    pub t1: i64,
    /// Second base time, UTC seconds.
    pub t2: i64,
    /// Predicted time, UTC seconds.
    pub tp: i64,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(default)]
pub struct PipelineOptions {
    pub mode: FusionMode,
    pub temporal_normalization: bool,
    pub sensor_normalization: bool,
    pub purity_threshold: f64,
    pub fusion: FusionConfig,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            mode: FusionMode::Lmc,
            temporal_normalization: true,
            sensor_normalization: true,
            purity_threshold: DEFAULT_PURITY_THRESHOLD,
            fusion: FusionConfig::default(),
        }
    }
}

/// Source grids at their native resolutions.
#[derive(Clone, Debug)]
pub struct SceneInputs {
    pub l_t1: TempGrid,
    pub m_t1: Option<TempGrid>,
    pub m_t2: Option<TempGrid>,
    /// Time-ordered coarse series.
    pub c_series: Vec<TempGrid>,
    pub classes: Option<ClassGrid>,
}

/// Moderate-resolution grids after temporal normalization.
#[derive(Clone, Debug)]
pub struct NormalizedModerate {
    pub m_t1: TempGrid,
    pub m_t2: TempGrid,
}

/// Everything the fusion stage needs, on the fine grid.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub l_t1: TempGrid,
    pub c_t1: TempGrid,
    pub m_t1: Option<TempGrid>,
    pub m_t2: Option<TempGrid>,
    pub c_t2: Option<TempGrid>,
    pub normalized: Option<NormalizedModerate>,
    pub glolm: Option<GloLmFit>,
    pub dtc: Option<DtcField>,
}

fn integer_factor(fine: &TempGrid, other: &TempGrid, name: &str) -> Result<usize> {
    let ratio = other.header().cell_size / fine.header().cell_size;
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-9 {
        return Err(Error::GridCompatibility(format!(
            "{name} cell size {} m is not an integer multiple of the fine cell size {} m",
            other.header().cell_size,
            fine.header().cell_size
        )));
    }
    Ok(factor as usize)
}

fn to_fine(g: &TempGrid, fine: &TempGrid) -> Result<TempGrid> {
    resample_nearest(g, fine.header())
}

fn normalize_to(m: &TempGrid, field: &DtcField, ctx: &SolarContext, target_utc: i64) -> Result<TempGrid> {
    let local = field.resample_nearest(m.header())?;
    let t_ori = ctx.local_solar_hours(m.timestamp_utc());
    let t_cor = ctx.local_solar_hours(target_utc);
    Ok(normalize_time_dtc(m, &local, ctx, t_ori, t_cor)?.with_timestamp(target_utc))
}

/// Runs every stage up to, but not including, fusion.
pub fn prepare(
    inputs: &SceneInputs,
    times: &BaseTimes,
    ctx: &SolarContext,
    options: &PipelineOptions,
) -> Result<Prepared> {
    ctx.validate()?;
    options.fusion.validate()?;
    let l = &inputs.l_t1;
    let c_t1 = to_fine(&interp_halfhourly(&inputs.c_series, times.t1)?, l)?;
    if options.mode == FusionMode::Lc {
        return Ok(Prepared {
            l_t1: l.clone(),
            c_t1,
            m_t1: None,
            m_t2: None,
            c_t2: None,
            normalized: None,
            glolm: None,
            dtc: None,
        });
    }
    let (Some(m_t1), Some(m_t2)) = (&inputs.m_t1, &inputs.m_t2) else {
        return Err(Error::Config("three-source mode needs both moderate grids".into()));
    };
    if !m_t1.header().same_geometry(m_t2.header()) {
        return Err(Error::GridCompatibility(
            "the two moderate grids differ in geometry".into(),
        ));
    }
    let factor = integer_factor(l, m_t1, "moderate")?;

    let (normalized, dtc) = if options.temporal_normalization {
        let field = fit_dtc_field(&inputs.c_series, ctx)?;
        log::info!(
            "diurnal cycles fitted for {} of {} coarse cells",
            field.fitted_count(),
            field.params().len()
        );
        let n1 = normalize_to(m_t1, &field, ctx, times.t1)?;
        let n2 = normalize_to(m_t2, &field, ctx, times.t2)?;
        (NormalizedModerate { m_t1: n1, m_t2: n2 }, Some(field))
    } else {
        let n = NormalizedModerate {
            m_t1: m_t1.clone().with_timestamp(times.t1),
            m_t2: m_t2.clone().with_timestamp(times.t2),
        };
        (n, None)
    };

    let (l_t1, glolm) = if options.sensor_normalization {
        let classes = inputs
            .classes
            .as_ref()
            .ok_or_else(|| Error::Config("sensor normalization needs a class grid".into()))?;
        let fit = fit_glolm(l, &normalized.m_t1, classes, factor, options.purity_threshold)?;
        log::info!(
            "sensor normalization: slope {:.5}, intercept {:.4} K over {} pure cells (r2 {:.4})",
            fit.slope,
            fit.intercept,
            fit.n_pure,
            fit.r2
        );
        (apply_glolm(l, &fit), Some(fit))
    } else {
        (l.clone(), None)
    };

    let c_t2 = to_fine(&interp_halfhourly(&inputs.c_series, times.t2)?, l)?;
    Ok(Prepared {
        m_t1: Some(to_fine(&normalized.m_t1, l)?),
        m_t2: Some(to_fine(&normalized.m_t2, l)?),
        l_t1,
        c_t1,
        c_t2: Some(c_t2),
        normalized: Some(normalized),
        glolm,
        dtc,
    })
}

/// Fused fine LST at `tp` (UTC seconds).
pub fn fuse_at(prepared: &Prepared, c_series: &[TempGrid], tp: i64, options: &PipelineOptions) -> Result<TempGrid> {
    let c_tp = to_fine(&interp_halfhourly(c_series, tp)?, &prepared.l_t1)?;
    let inputs = match (&prepared.m_t1, &prepared.m_t2, &prepared.c_t2) {
        (Some(m1), Some(m2), Some(c2)) if options.mode == FusionMode::Lmc => {
            FusionInputs::three_source(&prepared.l_t1, m1, m2, &prepared.c_t1, c2, &c_tp)
        }
        _ => FusionInputs::two_source(&prepared.l_t1, &prepared.c_t1, &c_tp),
    };
    fuse(&inputs, &options.fusion)
}

/// [`prepare`] followed by [`fuse_at`] for `times.tp`.
pub fn run(
    inputs: &SceneInputs,
    times: &BaseTimes,
    ctx: &SolarContext,
    options: &PipelineOptions,
) -> Result<(Prepared, TempGrid)> {
    let prepared = prepare(inputs, times, ctx, options)?;
    let fused = fuse_at(&prepared, &inputs.c_series, times.tp, options)?;
    Ok((prepared, fused))
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct RunInputs {
    pub l_t1: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_t1: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_t2: Option<PathBuf>,
    /// Directory holding the coarse series.
    pub c_series: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<PathBuf>,
}

/// Run configuration file. Relative paths are resolved against the
/// directory that holds the file.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub inputs: RunInputs,
    pub times: BaseTimes,
    pub solar: SolarContext,
    #[serde(flatten)]
    pub options: PipelineOptions,
    pub output_dir: PathBuf,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let inputs = &mut cfg.inputs;
        inputs.l_t1 = resolve(base, &inputs.l_t1);
        inputs.c_series = resolve(base, &inputs.c_series);
        for p in [&mut inputs.m_t1, &mut inputs.m_t2, &mut inputs.classes]
            .into_iter()
            .flatten()
        {
            *p = resolve(base, p);
        }
        cfg.output_dir = resolve(base, &cfg.output_dir);
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.solar.validate()?;
        self.options.fusion.validate()?;
        if !(0.0..=1.0).contains(&self.options.purity_threshold) {
            return Err(Error::Config(format!(
                "purity threshold {} outside [0, 1]",
                self.options.purity_threshold
            )));
        }
        if self.options.mode == FusionMode::Lmc && (self.inputs.m_t1.is_none() || self.inputs.m_t2.is_none()) {
            return Err(Error::Config(
                "three-source mode needs inputs.m_t1 and inputs.m_t2".into(),
            ));
        }
        if self.options.mode == FusionMode::Lmc && self.options.sensor_normalization && self.inputs.classes.is_none() {
            return Err(Error::Config("sensor normalization needs inputs.classes".into()));
        }
        Ok(())
    }

    /// Reads the grids named by the configuration. Moderate grids and the
    /// class grid are skipped in two-source mode.
    pub fn load_inputs(&self) -> Result<SceneInputs> {
        let lmc = self.options.mode == FusionMode::Lmc;
        let optional_temp = |p: &Option<PathBuf>| -> Result<Option<TempGrid>> {
            match p {
                Some(p) if lmc => read_temp_grid(p).map(Some),
                _ => Ok(None),
            }
        };
        let c_series = read_series_dir(&self.inputs.c_series)?;
        Ok(SceneInputs {
            l_t1: read_temp_grid(&self.inputs.l_t1)?,
            m_t1: optional_temp(&self.inputs.m_t1)?,
            m_t2: optional_temp(&self.inputs.m_t2)?,
            classes: match &self.inputs.classes {
                Some(p) if lmc && self.options.sensor_normalization => Some(read_class_grid(p)?),
                _ => None,
            },
            c_series,
        })
    }
}

/// Every grid in `dir`, ordered by timestamp.
pub fn read_series_dir(dir: &Path) -> Result<Vec<TempGrid>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
            if let Some(stem) = name.strip_suffix(".hdr.json") {
                paths.push(dir.join(stem));
            }
        }
    }
    paths.sort();
    let mut grids = paths.iter().map(|p| read_temp_grid(p)).collect::<Result<Vec<_>>>()?;
    grids.sort_by_key(|g| g.timestamp_utc());
    if grids.is_empty() {
        return Err(Error::InsufficientData(format!("no grids found in {}", dir.display())));
    }
    Ok(grids)
}

/// `HHMM` of a UTC timestamp.
pub fn hhmm(timestamp_utc: i64) -> String {
    let s = timestamp_utc.rem_euclid(86_400);
    format!("{:02}{:02}", s / 3600, s % 3600 / 60)
}
