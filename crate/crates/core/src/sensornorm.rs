//! Global linear sensor normalization.
//!
//! A single affine map `reference ≈ slope · L_agg + intercept` is fitted by
//! ordinary least squares over pure, fully valid coarse cells, where
//! `L_agg` is the fine grid aggregated to the reference resolution. The map
//! is then applied to the fine grid itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{aggregate, ClassGrid, TempGrid, DEFAULT_MIN_COVERAGE};

pub const DEFAULT_PURITY_THRESHOLD: f64 = 0.9;

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct GloLmFit {
    pub slope: f64,
    pub intercept: f64,
    pub n_pure: usize,
    pub r2: f64,
}

impl GloLmFit {
    pub fn identity() -> Self {
        GloLmFit {
            slope: 1.0,
            intercept: 0.0,
            n_pure: 0,
            r2: 1.0,
        }
    }
}

/// Coarse mask of cells whose modal class covers at least `threshold` of
/// the `factor × factor` block. Row-major, `(width / factor) × (height / factor)`.
pub fn purity_mask(classes: &ClassGrid, factor: usize, threshold: f64) -> Result<Vec<bool>> {
    let header = classes.header();
    if factor == 0 {
        return Err(Error::Argument("purity factor must be positive".into()));
    }
    if !header.width.is_multiple_of(factor) || !header.height.is_multiple_of(factor) {
        return Err(Error::Dimension(format!(
            "{}x{} class grid is not divisible by factor {factor}",
            header.width, header.height
        )));
    }
    let (out_w, out_h) = (header.width / factor, header.height / factor);
    let n_classes = classes.n_classes().max(1);
    let block = (factor * factor) as f64;
    let mut counts = vec![0usize; n_classes];
    let mut mask = Vec::with_capacity(out_w * out_h);
    for br in 0..out_h {
        for bc in 0..out_w {
            counts.iter_mut().for_each(|c| *c = 0);
            for r in br * factor..(br + 1) * factor {
                for c in bc * factor..(bc + 1) * factor {
                    counts[classes.get(r, c) as usize] += 1;
                }
            }
            let modal = *counts.iter().max().unwrap_or(&0);
            mask.push(modal as f64 / block >= threshold);
        }
    }
    Ok(mask)
}

/// Fits the linear map from aggregated fine LST to the reference.
pub fn fit_glolm(
    fine: &TempGrid,
    reference_moderate: &TempGrid,
    classes: &ClassGrid,
    factor: usize,
    threshold: f64,
) -> Result<GloLmFit> {
    if !classes.header().same_geometry(fine.header()) {
        return Err(Error::GridCompatibility(
            "class grid is not co-registered with the fine grid".into(),
        ));
    }
    let l_agg = aggregate(fine, factor, DEFAULT_MIN_COVERAGE)?;
    if !l_agg.header().same_geometry(reference_moderate.header()) {
        return Err(Error::GridCompatibility(format!(
            "reference grid ({}x{} @ {} m) does not match the aggregated fine grid ({}x{} @ {} m)",
            reference_moderate.width(),
            reference_moderate.height(),
            reference_moderate.header().cell_size,
            l_agg.width(),
            l_agg.height(),
            l_agg.header().cell_size
        )));
    }
    let pure = purity_mask(classes, factor, threshold)?;
    let pairs: Vec<(f64, f64)> = l_agg
        .values()
        .iter()
        .zip(reference_moderate.values())
        .zip(&pure)
        .filter(|((&x, &y), &p)| p && l_agg.is_valid_value(x) && reference_moderate.is_valid_value(y))
        .map(|((&x, &y), _)| (x as f64, y as f64))
        .collect();
    fit_pairs(&pairs)
}

/// Ordinary least squares of `y` on `x` over `(x, y)` pairs.
pub fn fit_pairs(pairs: &[(f64, f64)]) -> Result<GloLmFit> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "GloLM needs at least 2 pure cells with valid values, found {n}"
        )));
    }
    let nf = n as f64;
    let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        let (dx, dy) = (x - mean_x, y - mean_y);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateFit(
            "aggregated fine LST has zero variance over pure cells".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    if !(slope > 0.0) {
        log::warn!("GloLM slope {slope} is not positive; sensor relation looks unphysical");
    }
    Ok(GloLmFit {
        slope,
        intercept,
        n_pure: n,
        r2,
    })
}

/// `slope · v + intercept` at every valid pixel.
pub fn apply_glolm(fine: &TempGrid, fit: &GloLmFit) -> TempGrid {
    fine.map_valid(|v| (fit.slope * v as f64 + fit.intercept) as f32)
}
