//! Filter-based spatio-temporal integrated fusion.
//!
//! For every fine pixel a square window of `w` pixels is scanned for
//! neighbours whose base-time fine LST lies within `σ · 2 / m` of the
//! center. Each similar pixel contributes the candidate
//!
//! ```text
//! L(t1) − M(t1) + M(t2) − C(t2) + C(tp)
//! ```
//!
//! (or `L(t1) − C(t1) + C(tp)` with two sources), weighted by
//!
//! ```text
//! SD_i = exp(−|ΔL_i|) / Σ exp(−|ΔL_j|)
//! C_i  = ln(100 R_i + 1) D_i / Σ ln(100 R_j + 1) D_j
//! D_i  = 1 + dist_i / (w / 2)
//! W_i  = (1 / (C_i SD_i)) / Σ (1 / (C_j SD_j))
//! ```
//!
//! with `R_i` the magnitude of the candidate itself. `RiMode::Difference`
//! and `WeightMode::SimilarityProportional` are experimental alternatives
//! for the scale term and the weight direction.
//!
//! When some `C_i · SD_i` is exactly zero its inverse is unbounded; the
//! weight is then shared equally by the zero-product pixels. When every
//! `ln(100 R_i + 1)` is zero the scale terms are taken as uniform.
//!
//! Windows are clipped at the image border. Output pixels are computed
//! independently in row bands, so the result does not depend on the
//! number of threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{TempGrid, Units};

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// Standard deviation of the whole fine base image.
    #[default]
    Global,
    /// Standard deviation inside each window.
    Window,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum RiMode {
    /// `R_i = |candidate|`.
    #[default]
    Verbatim,
    /// `R_i = |L(t1) − M(t1)| + |M(t2) − C(t2)|`, or `|L(t1) − C(t1)|` with
    /// two sources.
    Difference,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `W_i ∝ 1 / (C_i · SD_i)`.
    #[default]
    Verbatim,
    /// `W_i ∝ SD_i / C_i`.
    SimilarityProportional,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Centers without valid moderate data use the two-source candidate.
    #[default]
    TwoSource,
    /// Centers without valid moderate data become nodata.
    Nodata,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(default)]
pub struct FusionConfig {
    /// Window edge in fine pixels, odd.
    pub window: usize,
    /// Estimated number of land-cover classes.
    pub n_classes: usize,
    pub sigma_mode: SigmaMode,
    pub ri_mode: RiMode,
    pub weight_mode: WeightMode,
    pub fallback: Fallback,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            window: 31,
            n_classes: 4,
            sigma_mode: SigmaMode::Global,
            ri_mode: RiMode::Verbatim,
            weight_mode: WeightMode::Verbatim,
            fallback: Fallback::TwoSource,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "window must be odd and at least 3, got {}",
                self.window
            )));
        }
        if self.n_classes == 0 {
            return Err(Error::Config("class count must be positive".into()));
        }
        Ok(())
    }

    fn half(&self) -> usize {
        self.window / 2
    }

    /// `D_i = 1 + dist / (w / 2)` for an offset.
    pub fn distance_term(&self, dx: i64, dy: i64) -> f64 {
        1.0 + ((dx * dx + dy * dy) as f64).sqrt() / (self.window as f64 / 2.0)
    }
}

/// Moderate-resolution observations at both base times and the coarse
/// field at the second base time, all on the fine grid.
#[derive(Clone, Copy, Debug)]
pub struct ModeratePair<'a> {
    pub m_t1: &'a TempGrid,
    pub m_t2: &'a TempGrid,
    pub c_t2: &'a TempGrid,
}

/// Co-registered fusion inputs on the fine grid. Without `moderate` the
/// fusion runs in two-source mode; with it, `c_t1` backs the two-source
/// fallback.
#[derive(Clone, Copy, Debug)]
pub struct FusionInputs<'a> {
    pub l_t1: &'a TempGrid,
    pub c_t1: &'a TempGrid,
    pub c_tp: &'a TempGrid,
    pub moderate: Option<ModeratePair<'a>>,
}

impl<'a> FusionInputs<'a> {
    pub fn three_source(
        l_t1: &'a TempGrid,
        m_t1: &'a TempGrid,
        m_t2: &'a TempGrid,
        c_t1: &'a TempGrid,
        c_t2: &'a TempGrid,
        c_tp: &'a TempGrid,
    ) -> Self {
        FusionInputs {
            l_t1,
            c_t1,
            c_tp,
            moderate: Some(ModeratePair { m_t1, m_t2, c_t2 }),
        }
    }

    pub fn two_source(l_t1: &'a TempGrid, c_t1: &'a TempGrid, c_tp: &'a TempGrid) -> Self {
        FusionInputs {
            l_t1,
            c_t1,
            c_tp,
            moderate: None,
        }
    }

    fn grids(&self) -> Vec<(&'static str, &'a TempGrid)> {
        let mut g = vec![("l_t1", self.l_t1), ("c_t1", self.c_t1), ("c_tp", self.c_tp)];
        if let Some(m) = self.moderate {
            g.extend([("m_t1", m.m_t1), ("m_t2", m.m_t2), ("c_t2", m.c_t2)]);
        }
        g
    }

    fn check(&self) -> Result<()> {
        let reference = self.l_t1.header();
        for (name, g) in self.grids() {
            if !g.header().same_geometry(reference) {
                return Err(Error::GridCompatibility(format!(
                    "{name} is not co-registered with l_t1 ({}x{} @ {} m vs {}x{} @ {} m)",
                    g.width(),
                    g.height(),
                    g.header().cell_size,
                    reference.width,
                    reference.height,
                    reference.cell_size
                )));
            }
        }
        Ok(())
    }
}

/// Source values of one window pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sources {
    ThreeScale { m_t1: f64, m_t2: f64, c_t2: f64, c_tp: f64 },
    TwoScale { c_t1: f64, c_tp: f64 },
}

/// A similar pixel before weighting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateRecord {
    pub dx: i64,
    pub dy: i64,
    pub l_t1: f64,
    pub sources: Sources,
}

impl CandidateRecord {
    pub fn candidate(&self) -> f64 {
        match self.sources {
            Sources::ThreeScale { m_t1, m_t2, c_t2, c_tp } => self.l_t1 - m_t1 + m_t2 - c_t2 + c_tp,
            Sources::TwoScale { c_t1, c_tp } => self.l_t1 - c_t1 + c_tp,
        }
    }

    pub fn scale_term(&self, mode: RiMode) -> f64 {
        match (mode, self.sources) {
            (RiMode::Verbatim, _) => self.candidate().abs(),
            (RiMode::Difference, Sources::ThreeScale { m_t1, m_t2, c_t2, .. }) => {
                (self.l_t1 - m_t1).abs() + (m_t2 - c_t2).abs()
            }
            (RiMode::Difference, Sources::TwoScale { c_t1, .. }) => (self.l_t1 - c_t1).abs(),
        }
    }
}

/// A weighted similar pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarPixel {
    pub dx: i64,
    pub dy: i64,
    /// Similarity term `SD_i`.
    pub sd: f64,
    /// Scale term `R_i`, K.
    pub r: f64,
    /// Distance term `D_i`.
    pub d: f64,
    /// Combined scale/distance term `C_i`.
    pub c: f64,
    pub weight: f64,
    pub candidate: f64,
}

/// Normalized weights from the unnormalized similarity numerators
/// `exp(−|ΔL_i|)` and scale-distance products `ln(100 R_i + 1) D_i`.
/// Writes `SD_i`, `C_i` and `W_i` into the output buffers.
fn weights_into(
    sim: &[f64],
    scale_dist: &[f64],
    mode: WeightMode,
    sd: &mut Vec<f64>,
    comb: &mut Vec<f64>,
    weight: &mut Vec<f64>,
) {
    let n = sim.len();
    sd.clear();
    comb.clear();
    weight.clear();
    let sum_sim: f64 = sim.iter().sum();
    sd.extend(sim.iter().map(|&e| e / sum_sim));
    let sum_sd: f64 = scale_dist.iter().sum();
    if sum_sd == 0.0 {
        comb.extend(std::iter::repeat_n(1.0 / n as f64, n));
    } else {
        comb.extend(scale_dist.iter().map(|&v| v / sum_sd));
    }
    weight.extend(sd.iter().zip(comb.iter()).map(|(&s, &c)| match mode {
        WeightMode::Verbatim => 1.0 / (c * s),
        WeightMode::SimilarityProportional => s / c,
    }));
    let unbounded = weight.iter().filter(|w| w.is_infinite() || w.is_nan()).count();
    if unbounded > 0 {
        let share = 1.0 / unbounded as f64;
        for w in weight.iter_mut() {
            *w = if w.is_infinite() || w.is_nan() { share } else { 0.0 };
        }
    } else {
        let total: f64 = weight.iter().sum();
        for w in weight.iter_mut() {
            *w /= total;
        }
    }
}

/// Weights for a list of similar pixels around a center with base-time
/// LST `center_l_t1`.
pub fn compute_weights(
    similar: &[CandidateRecord],
    center_l_t1: f64,
    config: &FusionConfig,
) -> Result<Vec<SimilarPixel>> {
    if similar.is_empty() {
        return Err(Error::NoCandidate);
    }
    let sim: Vec<f64> = similar.iter().map(|s| (-(s.l_t1 - center_l_t1).abs()).exp()).collect();
    let dist: Vec<f64> = similar.iter().map(|s| config.distance_term(s.dx, s.dy)).collect();
    let r: Vec<f64> = similar.iter().map(|s| s.scale_term(config.ri_mode)).collect();
    let scale_dist: Vec<f64> = r.iter().zip(&dist).map(|(&r, &d)| (r * 100.0 + 1.0).ln() * d).collect();
    let (mut sd, mut comb, mut weight) = (Vec::new(), Vec::new(), Vec::new());
    weights_into(&sim, &scale_dist, config.weight_mode, &mut sd, &mut comb, &mut weight);
    Ok(similar
        .iter()
        .enumerate()
        .map(|(i, s)| SimilarPixel {
            dx: s.dx,
            dy: s.dy,
            sd: sd[i],
            r: r[i],
            d: dist[i],
            c: comb[i],
            weight: weight[i],
            candidate: s.candidate(),
        })
        .collect())
}

/// Population standard deviation of the valid pixels.
pub fn global_sigma(l_t1: &TempGrid) -> Result<f64> {
    let valid: Vec<f64> = l_t1
        .values()
        .iter()
        .filter(|&&v| l_t1.is_valid_value(v))
        .map(|&v| v as f64)
        .collect();
    if valid.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "standard deviation needs at least 2 valid pixels, found {}",
            valid.len()
        )));
    }
    Ok(population_std(&valid))
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

fn window_bounds(center: usize, half: usize, len: usize) -> (usize, usize) {
    (center.saturating_sub(half), (center + half).min(len - 1))
}

fn similarity_threshold(sigma: f64, n_classes: usize) -> f64 {
    sigma * 2.0 / n_classes as f64
}

fn window_sigma(l_t1: &TempGrid, row: usize, col: usize, half: usize) -> f64 {
    let (r0, r1) = window_bounds(row, half, l_t1.height());
    let (c0, c1) = window_bounds(col, half, l_t1.width());
    let mut vals = Vec::with_capacity((r1 - r0 + 1) * (c1 - c0 + 1));
    for r in r0..=r1 {
        for c in c0..=c1 {
            let v = l_t1.get(r, c);
            if l_t1.is_valid_value(v) {
                vals.push(v as f64);
            }
        }
    }
    if vals.is_empty() {
        0.0
    } else {
        population_std(&vals)
    }
}

/// Offsets `(dx, dy)` of the valid window pixels within `σ · 2 / m` of the
/// center, in row-major window order. The window is clipped at the border.
pub fn select_similar(
    l_t1: &TempGrid,
    row: usize,
    col: usize,
    half: usize,
    sigma: f64,
    n_classes: usize,
) -> Vec<(i64, i64)> {
    let center = l_t1.get(row, col) as f64;
    let threshold = similarity_threshold(sigma, n_classes);
    let (r0, r1) = window_bounds(row, half, l_t1.height());
    let (c0, c1) = window_bounds(col, half, l_t1.width());
    let mut out = Vec::new();
    for r in r0..=r1 {
        for c in c0..=c1 {
            let v = l_t1.get(r, c);
            if l_t1.is_valid_value(v) && (v as f64 - center).abs() <= threshold {
                out.push((c as i64 - col as i64, r as i64 - row as i64));
            }
        }
    }
    out
}

/// Which candidate formula a center pixel uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Route {
    ThreeScale,
    TwoScale,
    Skip,
}

/// Per-pixel precomputed quantities for one candidate formula.
struct Plane {
    valid: Vec<bool>,
    candidate: Vec<f64>,
    /// `ln(100 R + 1)`
    log_scale: Vec<f64>,
}

impl Plane {
    fn build(n: usize, record: impl Fn(usize) -> Option<CandidateRecord> + Sync, ri_mode: RiMode) -> Plane {
        let rows: Vec<(bool, f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| match record(i) {
                Some(rec) => (true, rec.candidate(), (rec.scale_term(ri_mode) * 100.0 + 1.0).ln()),
                None => (false, f64::NAN, f64::NAN),
            })
            .collect();
        Plane {
            valid: rows.iter().map(|r| r.0).collect(),
            candidate: rows.iter().map(|r| r.1).collect(),
            log_scale: rows.iter().map(|r| r.2).collect(),
        }
    }
}

fn value(g: &TempGrid, i: usize) -> Option<f64> {
    let v = g.values()[i];
    g.is_valid_value(v).then_some(v as f64)
}

fn three_scale_record(inputs: &FusionInputs, m: &ModeratePair, i: usize) -> Option<CandidateRecord> {
    Some(CandidateRecord {
        dx: 0,
        dy: 0,
        l_t1: value(inputs.l_t1, i)?,
        sources: Sources::ThreeScale {
            m_t1: value(m.m_t1, i)?,
            m_t2: value(m.m_t2, i)?,
            c_t2: value(m.c_t2, i)?,
            c_tp: value(inputs.c_tp, i)?,
        },
    })
}

fn two_scale_record(inputs: &FusionInputs, i: usize) -> Option<CandidateRecord> {
    Some(CandidateRecord {
        dx: 0,
        dy: 0,
        l_t1: value(inputs.l_t1, i)?,
        sources: Sources::TwoScale {
            c_t1: value(inputs.c_t1, i)?,
            c_tp: value(inputs.c_tp, i)?,
        },
    })
}

#[derive(Default)]
struct Scratch {
    sim: Vec<f64>,
    scale_dist: Vec<f64>,
    candidate: Vec<f64>,
    sd: Vec<f64>,
    comb: Vec<f64>,
    weight: Vec<f64>,
}

struct Kernel<'a> {
    l: &'a TempGrid,
    l64: Vec<f64>,
    three: Option<Plane>,
    two: Option<Plane>,
    distance: Vec<f64>,
    config: FusionConfig,
    sigma: f64,
}

impl Kernel<'_> {
    fn route(&self, i: usize) -> Route {
        if let Some(p) = &self.three {
            if p.valid[i] {
                return Route::ThreeScale;
            }
            if self.config.fallback == Fallback::Nodata {
                return Route::Skip;
            }
        }
        match &self.two {
            Some(p) if p.valid[i] => Route::TwoScale,
            _ => Route::Skip,
        }
    }

    fn pixel(&self, row: usize, col: usize, scratch: &mut Scratch) -> Option<f64> {
        let width = self.l.width();
        let center_idx = row * width + col;
        let plane = match self.route(center_idx) {
            Route::ThreeScale => self.three.as_ref()?,
            Route::TwoScale => self.two.as_ref()?,
            Route::Skip => return None,
        };
        let half = self.config.half();
        let center = self.l64[center_idx];
        let sigma = match self.config.sigma_mode {
            SigmaMode::Global => self.sigma,
            SigmaMode::Window => window_sigma(self.l, row, col, half),
        };
        let threshold = similarity_threshold(sigma, self.config.n_classes);
        let (r0, r1) = window_bounds(row, half, self.l.height());
        let (c0, c1) = window_bounds(col, half, width);
        let w = self.config.window;
        scratch.sim.clear();
        scratch.scale_dist.clear();
        scratch.candidate.clear();
        for r in r0..=r1 {
            let drow = (r + half - row) * w;
            for c in c0..=c1 {
                let i = r * width + c;
                if !plane.valid[i] {
                    continue;
                }
                let diff = (self.l64[i] - center).abs();
                if diff > threshold {
                    continue;
                }
                scratch.sim.push((-diff).exp());
                scratch
                    .scale_dist
                    .push(plane.log_scale[i] * self.distance[drow + c + half - col]);
                scratch.candidate.push(plane.candidate[i]);
            }
        }
        weights_into(
            &scratch.sim,
            &scratch.scale_dist,
            self.config.weight_mode,
            &mut scratch.sd,
            &mut scratch.comb,
            &mut scratch.weight,
        );
        Some(scratch.weight.iter().zip(&scratch.candidate).map(|(w, c)| w * c).sum())
    }
}

fn build_kernel<'a>(inputs: &FusionInputs<'a>, config: &FusionConfig) -> Result<Kernel<'a>> {
    config.validate()?;
    inputs.check()?;
    let l = inputs.l_t1;
    let n = l.values().len();
    let sigma = match config.sigma_mode {
        SigmaMode::Global => global_sigma(l)?,
        SigmaMode::Window => f64::NAN,
    };
    let three = inputs
        .moderate
        .map(|m| Plane::build(n, |i| three_scale_record(inputs, &m, i), config.ri_mode));
    let two = if inputs.moderate.is_none() || config.fallback == Fallback::TwoSource {
        Some(Plane::build(n, |i| two_scale_record(inputs, i), config.ri_mode))
    } else {
        None
    };
    let half = config.half() as i64;
    let distance = (-half..=half)
        .flat_map(|dy| (-half..=half).map(move |dx| (dx, dy)))
        .map(|(dx, dy)| config.distance_term(dx, dy))
        .collect();
    Ok(Kernel {
        l,
        l64: l.values().iter().map(|&v| v as f64).collect(),
        three,
        two,
        distance,
        config: *config,
        sigma,
    })
}

/// Fused fine LST at the time of `inputs.c_tp`.
///
/// Runs on the current rayon pool; see [`fuse_with_threads`] for an
/// explicit thread count.
pub fn fuse(inputs: &FusionInputs, config: &FusionConfig) -> Result<TempGrid> {
    let kernel = build_kernel(inputs, config)?;
    let (width, height) = (kernel.l.width(), kernel.l.height());
    let nodata = kernel.l.nodata();
    let mut out = vec![nodata; width * height];
    out.par_chunks_mut(width)
        .enumerate()
        .for_each_init(Scratch::default, |scratch, (row, line)| {
            for (col, slot) in line.iter_mut().enumerate() {
                if let Some(v) = kernel.pixel(row, col, scratch) {
                    *slot = v as f32;
                }
            }
        });
    let mut header = kernel.l.header().clone();
    header.timestamp_utc = inputs.c_tp.timestamp_utc();
    header.units = Units::Kelvin;
    Ok(TempGrid::from_computed(header, out))
}

/// Two-source fusion from the fine base image and the coarse field at the
/// base and predicted times.
pub fn fuse_two_source(l_t1: &TempGrid, c_t1: &TempGrid, c_tp: &TempGrid, config: &FusionConfig) -> Result<TempGrid> {
    fuse(&FusionInputs::two_source(l_t1, c_t1, c_tp), config)
}

/// [`fuse`] on a dedicated pool of `threads` workers.
pub fn fuse_with_threads(inputs: &FusionInputs, config: &FusionConfig, threads: usize) -> Result<TempGrid> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build a {threads}-thread pool: {e}")))?;
    pool.install(|| fuse(inputs, config))
}

/// Similar pixels and weights used for one output pixel, or `None` when the
/// pixel has no usable center. Mirrors the routing of [`fuse`].
pub fn pixel_weights(
    inputs: &FusionInputs,
    config: &FusionConfig,
    row: usize,
    col: usize,
) -> Result<Option<Vec<SimilarPixel>>> {
    config.validate()?;
    inputs.check()?;
    let l = inputs.l_t1;
    let width = l.width();
    let center_idx = row * width + col;
    let three_center = inputs.moderate.and_then(|m| three_scale_record(inputs, &m, center_idx));
    let use_three = match (inputs.moderate, three_center) {
        (Some(_), Some(_)) => true,
        (Some(_), None) if config.fallback == Fallback::Nodata => return Ok(None),
        _ => false,
    };
    if !use_three && two_scale_record(inputs, center_idx).is_none() {
        return Ok(None);
    }
    let sigma = match config.sigma_mode {
        SigmaMode::Global => global_sigma(l)?,
        SigmaMode::Window => window_sigma(l, row, col, config.half()),
    };
    let records: Vec<CandidateRecord> = select_similar(l, row, col, config.half(), sigma, config.n_classes)
        .into_iter()
        .filter_map(|(dx, dy)| {
            let i = (row as i64 + dy) as usize * width + (col as i64 + dx) as usize;
            let rec = if use_three {
                three_scale_record(inputs, &inputs.moderate.expect("three-source inputs"), i)
            } else {
                two_scale_record(inputs, i)
            };
            rec.map(|rec| CandidateRecord { dx, dy, ..rec })
        })
        .collect();
    compute_weights(&records, l.get(row, col) as f64, config).map(Some)
}
