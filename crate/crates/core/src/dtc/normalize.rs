use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{eval_with, DayGeometry, DtcParams};
use crate::error::{Error, Result};
use crate::grid::{nearest_source_indices, GridHeader, TempGrid};
use crate::solar::SolarContext;

/// Per-cell diurnal cycle parameters on a grid. Cells without a usable fit
/// are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct DtcField {
    header: GridHeader,
    params: Vec<Option<DtcParams>>,
    rmse: Vec<f64>,
}

impl DtcField {
    pub fn new(header: GridHeader, params: Vec<Option<DtcParams>>, rmse: Vec<f64>) -> Result<Self> {
        header.validate()?;
        if params.len() != header.len() || rmse.len() != header.len() {
            return Err(Error::Dimension(format!(
                "DTC field needs {} cells, got {} params and {} rmse values",
                header.len(),
                params.len(),
                rmse.len()
            )));
        }
        Ok(DtcField { header, params, rmse })
    }

    /// Same parameters at every cell of `header`.
    pub fn uniform(header: GridHeader, params: DtcParams) -> Result<Self> {
        let n = header.len();
        DtcField::new(header, vec![Some(params); n], vec![0.0; n])
    }

    pub fn header(&self) -> &GridHeader {
        &self.header
    }

    pub fn params(&self) -> &[Option<DtcParams>] {
        &self.params
    }

    pub fn rmse(&self) -> &[f64] {
        &self.rmse
    }

    pub fn get(&self, row: usize, col: usize) -> Option<&DtcParams> {
        self.params[row * self.header.width + col].as_ref()
    }

    pub fn fitted_count(&self) -> usize {
        self.params.iter().filter(|p| p.is_some()).count()
    }

    /// Replicates each cell onto the cells of `target` whose centers it
    /// contains.
    pub fn resample_nearest(&self, target: &GridHeader) -> Result<DtcField> {
        let idx = nearest_source_indices(&self.header, target)?;
        let mut header = target.clone();
        header.timestamp_utc = self.header.timestamp_utc;
        Ok(DtcField {
            header,
            params: idx.iter().map(|&i| self.params[i]).collect(),
            rmse: idx.iter().map(|&i| self.rmse[i]).collect(),
        })
    }
}

fn ulp(v: f32) -> f64 {
    let a = v.abs();
    (f32::from_bits(a.to_bits() + 1) - a) as f64
}

/// `v + d` with the increment rounded, half away from zero, to the coarser
/// of the f32 spacings at `v` and at the result. Shifting by `d` and then
/// by `-d` restores `v` exactly unless the first shift moves into a binade
/// with a coarser spacing, where the error stays below half that spacing.
fn shift_reversible(v: f32, d: f64) -> f32 {
    if d == 0.0 {
        return v;
    }
    let mut step = ulp(v);
    loop {
        let q = (d / step).round() * step;
        let out = (v as f64 + q) as f32;
        let landing = ulp(out);
        if landing <= step {
            return out;
        }
        step = landing;
    }
}

/// Moves an LST observation from view time `t_ori` to `t_cor` (local solar
/// hours) by adding the diurnal-cycle difference at each pixel.
///
/// The output timestamp is shifted by `t_cor − t_ori`. Nodata passes
/// through; a valid pixel without parameters is a coverage error.
pub fn normalize_time_dtc(
    m_grid: &TempGrid,
    field: &DtcField,
    ctx: &SolarContext,
    t_ori: f64,
    t_cor: f64,
) -> Result<TempGrid> {
    if !field.header().same_geometry(m_grid.header()) {
        return Err(Error::GridCompatibility(
            "DTC parameter field is not co-registered with the grid to normalize".into(),
        ));
    }
    for t in [t_ori, t_cor] {
        if !(0.0..24.0).contains(&t) {
            return Err(Error::Argument(format!("view time {t} h outside [0, 24)")));
        }
    }
    let geo = DayGeometry::new(ctx)?;
    let nodata = m_grid.nodata();
    let mut values = Vec::with_capacity(m_grid.values().len());
    let mut cached: Option<(DtcParams, f64)> = None;
    for (i, &v) in m_grid.values().iter().enumerate() {
        if !m_grid.is_valid_value(v) {
            values.push(nodata);
            continue;
        }
        let p = field.params[i].ok_or_else(|| {
            Error::Coverage(format!(
                "no DTC parameters at row {}, col {}",
                i / m_grid.width(),
                i % m_grid.width()
            ))
        })?;
        let delta = match cached {
            Some((q, d)) if q == p => d,
            _ => {
                let d = eval_with(&p, &geo, t_cor) - eval_with(&p, &geo, t_ori);
                cached = Some((p, d));
                d
            }
        };
        values.push(shift_reversible(v, delta));
    }
    let shift_s = ((t_cor - t_ori) * 3600.0).round() as i64;
    let header = m_grid.header().clone().with_timestamp(m_grid.timestamp_utc() + shift_s);
    Ok(TempGrid::from_computed(header, values))
}

/// Linear interpolation in time between the two grids of a time-ordered
/// series that bracket `t` (UTC seconds). A pixel is nodata when either
/// bracketing value is.
pub fn interp_halfhourly(series: &[TempGrid], t: i64) -> Result<TempGrid> {
    let first = series.first().ok_or_else(|| Error::Range("empty series".into()))?;
    for pair in series.windows(2) {
        if !pair[1].header().same_geometry(first.header()) {
            return Err(Error::GridCompatibility("series grids differ in geometry".into()));
        }
        if pair[1].timestamp_utc() <= pair[0].timestamp_utc() {
            return Err(Error::Argument("series timestamps must be strictly increasing".into()));
        }
    }
    let last = series.last().expect("non-empty");
    if t < first.timestamp_utc() || t > last.timestamp_utc() {
        return Err(Error::Range(format!(
            "time {t} outside series span [{}, {}]",
            first.timestamp_utc(),
            last.timestamp_utc()
        )));
    }
    if let Some(hit) = series.iter().find(|g| g.timestamp_utc() == t) {
        return Ok(hit.clone());
    }
    let upper = series
        .iter()
        .position(|g| g.timestamp_utc() > t)
        .expect("t inside span");
    let (a, b) = (&series[upper - 1], &series[upper]);
    let w = (t - a.timestamp_utc()) as f64 / (b.timestamp_utc() - a.timestamp_utc()) as f64;
    let nodata = first.nodata();
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&va, &vb)| {
            if a.is_valid_value(va) && b.is_valid_value(vb) {
                (va as f64 + w * (vb as f64 - va as f64)) as f32
            } else {
                nodata
            }
        })
        .collect();
    let header = a.header().clone().with_timestamp(t);
    Ok(TempGrid::from_computed(header, values))
}

#[derive(Serialize, Deserialize)]
struct DtcRow {
    cell_row: usize,
    cell_col: usize,
    t0: f64,
    ta: f64,
    delta_t: f64,
    ts: f64,
    tm: f64,
    tau: f64,
    k: f64,
    rmse: f64,
}

/// Writes one CSV row per fitted cell.
pub fn write_dtc_csv(field: &DtcField, path: &Path) -> Result<()> {
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let width = field.header.width;
    for (i, p) in field.params.iter().enumerate() {
        if let Some(p) = p {
            w.serialize(DtcRow {
                cell_row: i / width,
                cell_col: i % width,
                t0: p.t0,
                ta: p.ta,
                delta_t: p.delta_t,
                ts: p.ts,
                tm: p.tm,
                tau: p.tau,
                k: p.k_derived,
                rmse: field.rmse[i],
            })
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a parameter CSV back onto the grid described by `header`.
pub fn read_dtc_csv(path: &Path, header: GridHeader) -> Result<DtcField> {
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let n = header.len();
    let mut params = vec![None; n];
    let mut rmse = vec![f64::NAN; n];
    for row in r.deserialize() {
        let row: DtcRow = row.map_err(csv_err)?;
        if row.cell_row >= header.height || row.cell_col >= header.width {
            return Err(Error::format(
                "cell_row/cell_col",
                format!(
                    "cell ({}, {}) outside {}x{} grid",
                    row.cell_row, row.cell_col, header.width, header.height
                ),
            ));
        }
        let i = row.cell_row * header.width + row.cell_col;
        params[i] = Some(DtcParams {
            t0: row.t0,
            ta: row.ta,
            delta_t: row.delta_t,
            ts: row.ts,
            tm: row.tm,
            tau: row.tau,
            k_derived: row.k,
        });
        rmse[i] = row.rmse;
    }
    DtcField::new(header, params, rmse)
}
