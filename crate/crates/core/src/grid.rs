//! Raster data model shared by every stage of the pipeline.
//!
//! Grids live in a projected local frame: `origin_x`/`origin_y` is the
//! top-left corner, columns grow eastward and rows grow southward. All
//! fields are immutable once built and can be shared across threads.
//!
//! On disk a grid is a raw little-endian `f32` payload (`<name>.f32`) with
//! a JSON sidecar (`<name>.hdr.json`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Sentinel for missing values. Comparisons against it are exact.
pub const NODATA: f32 = -9999.0;

/// Lower bound (exclusive) of the physical-plausibility gate, Kelvin.
pub const MIN_PLAUSIBLE_K: f32 = 150.0;
/// Upper bound (exclusive) of the physical-plausibility gate, Kelvin.
pub const MAX_PLAUSIBLE_K: f32 = 400.0;

pub const DEFAULT_MIN_COVERAGE: f64 = 0.5;

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    Kelvin,
    ClassId,
    Dimensionless,
}

impl Units {
    pub fn tag(self) -> &'static str {
        match self {
            Units::Kelvin => "kelvin",
            Units::ClassId => "class_id",
            Units::Dimensionless => "dimensionless",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Units> {
        match tag {
            "kelvin" => Some(Units::Kelvin),
            "class_id" => Some(Units::ClassId),
            "dimensionless" => Some(Units::Dimensionless),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridHeader {
    pub width: usize,
    pub height: usize,
    /// Meters per pixel edge.
    pub cell_size: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    /// Seconds since the Unix epoch.
    pub timestamp_utc: i64,
    pub nodata: f32,
    pub units: Units,
}

impl GridHeader {
    pub fn new(width: usize, height: usize, cell_size: f64, units: Units) -> Self {
        GridHeader {
            width,
            height,
            cell_size,
            origin_x: 0.0,
            origin_y: 0.0,
            timestamp_utc: 0,
            nodata: NODATA,
            units,
        }
    }

    pub fn with_origin(mut self, origin_x: f64, origin_y: f64) -> Self {
        self.origin_x = origin_x;
        self.origin_y = origin_y;
        self
    }

    pub fn with_timestamp(mut self, timestamp_utc: i64) -> Self {
        self.timestamp_utc = timestamp_utc;
        self
    }

    pub fn with_units(mut self, units: Units) -> Self {
        self.units = units;
        self
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Dimension(format!(
                "grid must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.cell_size > 0.0) || !self.cell_size.is_finite() {
            return Err(Error::Argument(format!(
                "cell size must be positive, got {}",
                self.cell_size
            )));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::Argument("grid origin must be finite".into()));
        }
        Ok(())
    }

    /// Same raster geometry (size, cell size, origin); timestamp, units and
    /// nodata are ignored.
    pub fn same_geometry(&self, other: &GridHeader) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.cell_size == other.cell_size
            && self.origin_x == other.origin_x
            && self.origin_y == other.origin_y
    }

    pub fn extent(&self) -> (f64, f64, f64, f64) {
        let right = self.origin_x + self.width as f64 * self.cell_size;
        let bottom = self.origin_y - self.height as f64 * self.cell_size;
        (self.origin_x, right, bottom, self.origin_y)
    }

    fn to_json(&self) -> Value {
        let mut map = Map::new();
        map.insert("width".into(), Value::from(self.width as u64));
        map.insert("height".into(), Value::from(self.height as u64));
        map.insert("cell_size_m".into(), Value::from(self.cell_size));
        map.insert("origin_x_m".into(), Value::from(self.origin_x));
        map.insert("origin_y_m".into(), Value::from(self.origin_y));
        map.insert("timestamp_utc".into(), Value::from(self.timestamp_utc));
        map.insert("nodata".into(), Value::from(self.nodata as f64));
        map.insert("units".into(), Value::from(self.units.tag()));
        Value::Object(map)
    }

    fn from_json(value: &Value) -> Result<GridHeader> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::format("header", "expected a JSON object"))?;
        let field =
            |name: &str| -> Result<&Value> { obj.get(name).ok_or_else(|| Error::format(name, "missing required key")) };
        let uint = |name: &str| -> Result<usize> {
            field(name)?
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::format(name, "expected a non-negative integer"))
        };
        let real = |name: &str| -> Result<f64> {
            field(name)?
                .as_f64()
                .ok_or_else(|| Error::format(name, "expected a number"))
        };
        let units_tag = field("units")?
            .as_str()
            .ok_or_else(|| Error::format("units", "expected a string"))?;
        let units = Units::from_tag(units_tag)
            .ok_or_else(|| Error::format("units", format!("unknown units tag `{units_tag}`")))?;
        let timestamp_utc = field("timestamp_utc")?
            .as_i64()
            .ok_or_else(|| Error::format("timestamp_utc", "expected an integer"))?;
        let header = GridHeader {
            width: uint("width")?,
            height: uint("height")?,
            cell_size: real("cell_size_m")?,
            origin_x: real("origin_x_m")?,
            origin_y: real("origin_y_m")?,
            timestamp_utc,
            nodata: real("nodata")? as f32,
            units,
        };
        if header.width == 0 {
            return Err(Error::format("width", "must be at least 1"));
        }
        if header.height == 0 {
            return Err(Error::format("height", "must be at least 1"));
        }
        if !(header.cell_size > 0.0) {
            return Err(Error::format("cell_size_m", "must be positive"));
        }
        Ok(header)
    }
}

/// A 2-D temperature field (or any real-valued field) with nodata mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TempGrid {
    header: GridHeader,
    values: Vec<f32>,
}

impl TempGrid {
    /// Builds a grid, enforcing the plausibility gate for Kelvin fields.
    pub fn new(header: GridHeader, values: Vec<f32>) -> Result<Self> {
        header.validate()?;
        if values.len() != header.len() {
            return Err(Error::Dimension(format!(
                "expected {} values for a {}x{} grid, got {}",
                header.len(),
                header.width,
                header.height,
                values.len()
            )));
        }
        if header.units == Units::Kelvin {
            if let Some((i, v)) = values
                .iter()
                .enumerate()
                .find(|(_, &v)| v != header.nodata && !(v > MIN_PLAUSIBLE_K && v < MAX_PLAUSIBLE_K))
            {
                return Err(Error::Domain(format!(
                    "value {v} at index {i} outside the plausible LST range ({MIN_PLAUSIBLE_K}, {MAX_PLAUSIBLE_K}) K"
                )));
            }
        }
        Ok(TempGrid { header, values })
    }

    /// Grid built from values produced by internal computations. Skips the
    /// plausibility scan but keeps the shape check.
    pub(crate) fn from_computed(header: GridHeader, values: Vec<f32>) -> Self {
        debug_assert_eq!(header.len(), values.len());
        TempGrid { header, values }
    }

    pub fn filled(header: GridHeader, value: f32) -> Result<Self> {
        let n = header.len();
        TempGrid::new(header, vec![value; n])
    }

    pub fn header(&self) -> &GridHeader {
        &self.header
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn width(&self) -> usize {
        self.header.width
    }

    pub fn height(&self) -> usize {
        self.header.height
    }

    pub fn nodata(&self) -> f32 {
        self.header.nodata
    }

    pub fn timestamp_utc(&self) -> i64 {
        self.header.timestamp_utc
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.header.width + col]
    }

    pub fn is_valid_value(&self, v: f32) -> bool {
        v != self.header.nodata && !v.is_nan()
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.is_valid_value(self.get(row, col))
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|&&v| self.is_valid_value(v)).count()
    }

    pub fn with_timestamp(mut self, timestamp_utc: i64) -> Self {
        self.header.timestamp_utc = timestamp_utc;
        self
    }

    /// Applies `f` to every valid value; nodata passes through.
    pub fn map_valid(&self, f: impl Fn(f32) -> f32) -> TempGrid {
        let nodata = self.header.nodata;
        let values = self
            .values
            .iter()
            .map(|&v| if self.is_valid_value(v) { f(v) } else { nodata })
            .collect();
        TempGrid::from_computed(self.header.clone(), values)
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// Land-cover class identifiers on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassGrid {
    header: GridHeader,
    values: Vec<u32>,
}

impl ClassGrid {
    pub fn new(header: GridHeader, values: Vec<u32>) -> Result<Self> {
        header.validate()?;
        if values.len() != header.len() {
            return Err(Error::Dimension(format!(
                "expected {} class ids, got {}",
                header.len(),
                values.len()
            )));
        }
        let header = header.with_units(Units::ClassId);
        Ok(ClassGrid { header, values })
    }

    pub fn header(&self) -> &GridHeader {
        &self.header
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.values[row * self.header.width + col]
    }

    pub fn n_classes(&self) -> usize {
        self.values.iter().max().map_or(0, |&m| m as usize + 1)
    }
}

fn check_factor(width: usize, height: usize, factor: usize) -> Result<()> {
    if factor == 0 {
        return Err(Error::Argument("aggregation factor must be positive".into()));
    }
    if !width.is_multiple_of(factor) || !height.is_multiple_of(factor) {
        return Err(Error::Dimension(format!(
            "{width}x{height} grid is not divisible by factor {factor}"
        )));
    }
    Ok(())
}

/// Block-mean aggregation by an integer factor.
///
/// A coarse cell becomes nodata when the fraction of valid fine values in
/// its block is below `min_coverage`.
pub fn aggregate(fine: &TempGrid, factor: usize, min_coverage: f64) -> Result<TempGrid> {
    check_factor(fine.width(), fine.height(), factor)?;
    if !(0.0..=1.0).contains(&min_coverage) {
        return Err(Error::Argument(format!(
            "min_coverage must lie in [0, 1], got {min_coverage}"
        )));
    }
    let out_w = fine.width() / factor;
    let out_h = fine.height() / factor;
    let block = (factor * factor) as f64;
    let nodata = fine.nodata();
    let mut values = Vec::with_capacity(out_w * out_h);
    for br in 0..out_h {
        for bc in 0..out_w {
            let mut sum = 0.0f64;
            let mut count = 0usize;
            for r in br * factor..(br + 1) * factor {
                for c in bc * factor..(bc + 1) * factor {
                    let v = fine.get(r, c);
                    if fine.is_valid_value(v) {
                        sum += v as f64;
                        count += 1;
                    }
                }
            }
            if count == 0 || (count as f64) / block < min_coverage {
                values.push(nodata);
            } else {
                values.push((sum / count as f64) as f32);
            }
        }
    }
    let mut header = fine.header().clone();
    header.width = out_w;
    header.height = out_h;
    header.cell_size = fine.header().cell_size * factor as f64;
    Ok(TempGrid::from_computed(header, values))
}

/// For every target cell, the row-major index of the source cell that
/// contains its center. Fails when the target extent leaves the source.
pub(crate) fn nearest_source_indices(src: &GridHeader, target: &GridHeader) -> Result<Vec<usize>> {
    target.validate()?;
    let (sl, sr, sb, st) = src.extent();
    let (tl, tr, tb, tt) = target.extent();
    let tol = 1e-9 * src.cell_size.max(target.cell_size);
    if tl < sl - tol || tr > sr + tol || tb < sb - tol || tt > st + tol {
        return Err(Error::Bounds(format!(
            "target extent [{tl}, {tr}] x [{tb}, {tt}] not contained in source extent [{sl}, {sr}] x [{sb}, {st}]"
        )));
    }
    let col_index: Vec<usize> = (0..target.width)
        .map(|c| {
            let x = target.origin_x + (c as f64 + 0.5) * target.cell_size;
            (((x - src.origin_x) / src.cell_size).floor() as usize).min(src.width - 1)
        })
        .collect();
    let mut indices = Vec::with_capacity(target.len());
    for r in 0..target.height {
        let y = target.origin_y - (r as f64 + 0.5) * target.cell_size;
        let sr = (((src.origin_y - y) / src.cell_size).floor() as usize).min(src.height - 1);
        indices.extend(col_index.iter().map(|&sc| sr * src.width + sc));
    }
    Ok(indices)
}

/// Nearest-neighbour upsampling onto `target`: each target cell takes the
/// value of the source cell containing its center.
///
/// The output keeps the target geometry and the source timestamp, units
/// and nodata sentinel.
pub fn resample_nearest(coarse: &TempGrid, target: &GridHeader) -> Result<TempGrid> {
    let indices = nearest_source_indices(coarse.header(), target)?;
    let values = indices.iter().map(|&i| coarse.values()[i]).collect();
    let src = coarse.header();
    let mut header = target.clone();
    header.timestamp_utc = src.timestamp_utc;
    header.units = src.units;
    header.nodata = src.nodata;
    Ok(TempGrid::from_computed(header, values))
}

/// Either kind of grid, as tagged by the sidecar `units` key.
#[derive(Clone, Debug, PartialEq)]
pub enum Raster {
    Temp(TempGrid),
    Class(ClassGrid),
}

impl Raster {
    pub fn header(&self) -> &GridHeader {
        match self {
            Raster::Temp(g) => g.header(),
            Raster::Class(g) => g.header(),
        }
    }
}

/// Sidecar and payload paths for a grid stored under `path`.
pub fn grid_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("f32"), path.with_extension("hdr.json"))
}

fn payload_bytes<I: Iterator<Item = f32>>(values: I, len: usize) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(len * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

fn write_parts(header: &GridHeader, payload: &[u8], path: &Path) -> Result<()> {
    let (data_path, hdr_path) = grid_paths(path);
    if let Some(dir) = data_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text =
        serde_json::to_string_pretty(&header.to_json()).map_err(|e| Error::format("header", e.to_string()))?;
    text.push('\n');
    fs::write(&hdr_path, text).map_err(|e| Error::io(&hdr_path, e))?;
    fs::write(&data_path, payload).map_err(|e| Error::io(&data_path, e))?;
    Ok(())
}

pub fn write_temp_grid(grid: &TempGrid, path: &Path) -> Result<()> {
    let payload = payload_bytes(grid.values().iter().copied(), grid.values().len());
    write_parts(grid.header(), &payload, path)
}

pub fn write_class_grid(grid: &ClassGrid, path: &Path) -> Result<()> {
    let payload = payload_bytes(grid.values().iter().map(|&c| c as f32), grid.values().len());
    write_parts(grid.header(), &payload, path)
}

pub fn write_grid(grid: &Raster, path: &Path) -> Result<()> {
    match grid {
        Raster::Temp(g) => write_temp_grid(g, path),
        Raster::Class(g) => write_class_grid(g, path),
    }
}

pub fn read_header(path: &Path) -> Result<GridHeader> {
    let (_, hdr_path) = grid_paths(path);
    let text = fs::read_to_string(&hdr_path).map_err(|e| Error::io(&hdr_path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::format("header", e.to_string()))?;
    GridHeader::from_json(&value)
}

/// Reads a grid; `units = class_id` yields a [`ClassGrid`], anything else a
/// [`TempGrid`]. Units are declarative and are not cross-checked against
/// the payload, but Kelvin payloads still pass the plausibility gate.
pub fn read_grid(path: &Path) -> Result<Raster> {
    let header = read_header(path)?;
    let (data_path, _) = grid_paths(path);
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let expected = header.len() * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            "payload",
            format!(
                "expected {expected} bytes for {}x{} f32 values, found {}",
                header.width,
                header.height,
                bytes.len()
            ),
        ));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    match header.units {
        Units::ClassId => {
            let ids = values
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f32 {
                        Ok(v as u32)
                    } else {
                        Err(Error::format(
                            "payload",
                            format!("class id {v} at index {i} is not a non-negative integer"),
                        ))
                    }
                })
                .collect::<Result<Vec<u32>>>()?;
            Ok(Raster::Class(ClassGrid::new(header, ids)?))
        }
        Units::Kelvin | Units::Dimensionless => Ok(Raster::Temp(TempGrid::new(header, values)?)),
    }
}

pub fn read_temp_grid(path: &Path) -> Result<TempGrid> {
    match read_grid(path)? {
        Raster::Temp(g) => Ok(g),
        Raster::Class(_) => Err(Error::format("units", "expected a real-valued grid, found class_id")),
    }
}

pub fn read_class_grid(path: &Path) -> Result<ClassGrid> {
    match read_grid(path)? {
        Raster::Class(g) => Ok(g),
        Raster::Temp(_) => Err(Error::format("units", "expected a class_id grid")),
    }
}
