//! Shared helpers for the integration tests: random co-registered scenes
//! and a deliberately plain per-pixel reimplementation of the fusion
//! weighting, used as an oracle for the optimized kernel.

#![allow(dead_code)]

use lstfuse::fusion::{Fallback, FusionConfig, FusionInputs, RiMode, SigmaMode, WeightMode};
use lstfuse::grid::{GridHeader, TempGrid, Units, NODATA};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct RandomScene {
    pub l_t1: TempGrid,
    pub m_t1: TempGrid,
    pub m_t2: TempGrid,
    pub c_t1: TempGrid,
    pub c_t2: TempGrid,
    pub c_tp: TempGrid,
}

impl RandomScene {
    pub fn three_source(&self) -> FusionInputs<'_> {
        FusionInputs::three_source(&self.l_t1, &self.m_t1, &self.m_t2, &self.c_t1, &self.c_t2, &self.c_tp)
    }

    pub fn two_source(&self) -> FusionInputs<'_> {
        FusionInputs::two_source(&self.l_t1, &self.c_t1, &self.c_tp)
    }
}

fn kelvin(n: usize, values: Vec<f32>) -> TempGrid {
    TempGrid::new(GridHeader::new(n, n, 30.0, Units::Kelvin), values).unwrap()
}

/// Block-constant field: one value per `block × block` tile.
fn blocky(rng: &mut ChaCha8Rng, n: usize, block: usize, base: f64, spread: f64) -> Vec<f64> {
    let nb = n.div_ceil(block);
    let tiles: Vec<f64> = (0..nb * nb).map(|_| base + rng.random_range(-spread..spread)).collect();
    (0..n * n)
        .map(|i| tiles[(i / n / block) * nb + (i % n) / block])
        .collect()
}

/// A random scene of `n × n` fine pixels with land-cover-like texture in
/// `l_t1`, 4-pixel moderate tiles and 16-pixel coarse tiles. With `gaps`,
/// about a tenth of the moderate tiles at `t2` are nodata.
pub fn random_scene(seed: u64, n: usize, gaps: bool) -> RandomScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patches = blocky(&mut rng, n, 8, 300.0, 6.0);
    let l: Vec<f64> = patches.iter().map(|p| p + rng.random_range(-1.5..1.5)).collect();
    let dm1 = blocky(&mut rng, n, 4, 0.0, 1.0);
    let warm = blocky(&mut rng, n, 4, 6.0, 3.0);
    let c1 = blocky(&mut rng, n, 16, 300.0, 3.0);
    let c2 = blocky(&mut rng, n, 16, 305.0, 3.0);
    let cp = blocky(&mut rng, n, 16, 308.0, 3.0);
    let nb = n.div_ceil(4);
    let cloudy: Vec<bool> = (0..nb * nb).map(|_| gaps && rng.random_bool(0.1)).collect();
    let m1: Vec<f32> = l.iter().zip(&dm1).map(|(a, b)| (a + b) as f32).collect();
    let m2: Vec<f32> = (0..n * n)
        .map(|i| {
            if cloudy[(i / n / 4) * nb + (i % n) / 4] {
                NODATA
            } else {
                (l[i] + dm1[i] + warm[i]) as f32
            }
        })
        .collect();
    let f = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    RandomScene {
        l_t1: kelvin(n, f(&l)),
        m_t1: kelvin(n, m1),
        m_t2: kelvin(n, m2),
        c_t1: kelvin(n, f(&c1)),
        c_t2: kelvin(n, f(&c2)),
        c_tp: kelvin(n, f(&cp)),
    }
}

/// Every combination of the fusion switches for a given window.
pub fn all_configs(window: usize) -> Vec<FusionConfig> {
    let mut out = Vec::new();
    for sigma_mode in [SigmaMode::Global, SigmaMode::Window] {
        for ri_mode in [RiMode::Verbatim, RiMode::Difference] {
            for weight_mode in [WeightMode::Verbatim, WeightMode::SimilarityProportional] {
                for fallback in [Fallback::TwoSource, Fallback::Nodata] {
                    out.push(FusionConfig {
                        window,
                        n_classes: 4,
                        sigma_mode,
                        ri_mode,
                        weight_mode,
                        fallback,
                    });
                }
            }
        }
    }
    out
}

fn at(g: &TempGrid, r: usize, c: usize) -> Option<f64> {
    let v = g.get(r, c);
    if v == NODATA {
        None
    } else {
        Some(v as f64)
    }
}

fn population_sigma(values: &[f64]) -> f64 {
    let mut total = 0.0;
    for v in values {
        total += v;
    }
    let mean = total / values.len() as f64;
    let mut ss = 0.0;
    for v in values {
        ss += (v - mean) * (v - mean);
    }
    (ss / values.len() as f64).sqrt()
}

/// Two-pass population standard deviation over the valid pixels.
pub fn naive_sigma(g: &TempGrid) -> f64 {
    let mut vals = Vec::new();
    for r in 0..g.height() {
        for c in 0..g.width() {
            if let Some(v) = at(g, r, c) {
                vals.push(v);
            }
        }
    }
    population_sigma(&vals)
}

enum Formula {
    Three,
    Two,
}

struct Neighbour {
    l: f64,
    candidate: f64,
    r: f64,
}

fn neighbour(inp: &FusionInputs, formula: &Formula, ri: RiMode, r: usize, c: usize) -> Option<Neighbour> {
    let l = at(inp.l_t1, r, c)?;
    let cp = at(inp.c_tp, r, c)?;
    match formula {
        Formula::Three => {
            let m = inp.moderate.unwrap();
            let m1 = at(m.m_t1, r, c)?;
            let m2 = at(m.m_t2, r, c)?;
            let c2 = at(m.c_t2, r, c)?;
            let candidate = l - m1 + m2 - c2 + cp;
            let r = match ri {
                RiMode::Verbatim => candidate.abs(),
                RiMode::Difference => (l - m1).abs() + (m2 - c2).abs(),
            };
            Some(Neighbour { l, candidate, r })
        }
        Formula::Two => {
            let c1 = at(inp.c_t1, r, c)?;
            let candidate = l - c1 + cp;
            let r = match ri {
                RiMode::Verbatim => candidate.abs(),
                RiMode::Difference => (l - c1).abs(),
            };
            Some(Neighbour { l, candidate, r })
        }
    }
}

/// Straightforward per-pixel fusion: scan the clipped window, keep the
/// similar usable pixels, build the similarity, scale and distance terms,
/// normalize and combine.
pub fn naive_fuse(inp: &FusionInputs, cfg: &FusionConfig) -> Vec<f32> {
    let (w, h) = (inp.l_t1.width(), inp.l_t1.height());
    let half = (cfg.window / 2) as i64;
    let global = naive_sigma(inp.l_t1);
    let mut out = vec![NODATA; w * h];
    for row in 0..h {
        for col in 0..w {
            let formula = if inp.moderate.is_some() {
                if neighbour(inp, &Formula::Three, cfg.ri_mode, row, col).is_some() {
                    Formula::Three
                } else if cfg.fallback == Fallback::TwoSource {
                    Formula::Two
                } else {
                    continue;
                }
            } else {
                Formula::Two
            };
            if neighbour(inp, &formula, cfg.ri_mode, row, col).is_none() {
                continue;
            }
            let center = at(inp.l_t1, row, col).unwrap();

            let rows = (row as i64 - half).max(0)..=(row as i64 + half).min(h as i64 - 1);
            let cols = (col as i64 - half).max(0)..=(col as i64 + half).min(w as i64 - 1);
            let sigma = match cfg.sigma_mode {
                SigmaMode::Global => global,
                SigmaMode::Window => {
                    let mut vals = Vec::new();
                    for r in rows.clone() {
                        for c in cols.clone() {
                            if let Some(v) = at(inp.l_t1, r as usize, c as usize) {
                                vals.push(v);
                            }
                        }
                    }
                    population_sigma(&vals)
                }
            };
            let threshold = sigma * 2.0 / cfg.n_classes as f64;

            let mut sim = Vec::new();
            let mut scale = Vec::new();
            let mut cand = Vec::new();
            for r in rows.clone() {
                for c in cols.clone() {
                    let Some(nb) = neighbour(inp, &formula, cfg.ri_mode, r as usize, c as usize) else {
                        continue;
                    };
                    if (nb.l - center).abs() > threshold {
                        continue;
                    }
                    let (dx, dy) = (c - col as i64, r - row as i64);
                    let d = 1.0 + ((dx * dx + dy * dy) as f64).sqrt() / (cfg.window as f64 / 2.0);
                    sim.push((-(nb.l - center).abs()).exp());
                    scale.push((nb.r * 100.0 + 1.0).ln() * d);
                    cand.push(nb.candidate);
                }
            }

            let n = sim.len();
            let mut sim_total = 0.0;
            for s in &sim {
                sim_total += s;
            }
            let mut scale_total = 0.0;
            for s in &scale {
                scale_total += s;
            }
            let mut raw = Vec::with_capacity(n);
            for i in 0..n {
                let sd = sim[i] / sim_total;
                let ci = if scale_total == 0.0 {
                    1.0 / n as f64
                } else {
                    scale[i] / scale_total
                };
                raw.push(match cfg.weight_mode {
                    WeightMode::Verbatim => 1.0 / (ci * sd),
                    WeightMode::SimilarityProportional => sd / ci,
                });
            }
            let unbounded = raw.iter().filter(|v| !v.is_finite()).count();
            let weights: Vec<f64> = if unbounded > 0 {
                raw.iter()
                    .map(|v| if v.is_finite() { 0.0 } else { 1.0 / unbounded as f64 })
                    .collect()
            } else {
                let mut total = 0.0;
                for v in &raw {
                    total += v;
                }
                raw.iter().map(|v| v / total).collect()
            };
            let mut value = 0.0;
            for i in 0..n {
                value += weights[i] * cand[i];
            }
            out[row * w + col] = value as f32;
        }
    }
    out
}

/// Bit patterns of an f32 slice, for exact comparisons that also hold for
/// NaN and signed zeros.
pub fn bits(values: &[f32]) -> Vec<u32> {
    values.iter().map(|v| v.to_bits()).collect()
}
