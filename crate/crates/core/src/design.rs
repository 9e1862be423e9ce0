//! Training designs for the backward solver.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate_paths, BatterySpec, WindModel};
use crate::error::{Error, Result};

/// Floor on the training-domain half-width, as a fraction of the state range.
pub const DOMAIN_FLOOR_FRACTION: f64 = 0.01;

const PILOT_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignConfig {
    pub n_loc: usize,
    pub n_rep: usize,
    pub n_fence: usize,
    pub n_b: usize,
    pub domain_width_sd: f64,
    pub pilot_paths: usize,
    pub seed: u64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            n_loc: 640,
            n_rep: 50,
            n_fence: 40,
            n_b: 640,
            domain_width_sd: 3.0,
            pilot_paths: 10_000,
            seed: 0,
        }
    }
}

impl DesignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_loc <= self.n_fence {
            return Err(Error::InvalidInput(format!(
                "n_loc ({}) must exceed n_fence ({})",
                self.n_loc, self.n_fence
            )));
        }
        if !self.n_fence.is_multiple_of(4) {
            return Err(Error::InvalidInput(format!("n_fence ({}) must be divisible by 4", self.n_fence)));
        }
        if self.n_rep == 0 || self.n_b == 0 || self.pilot_paths == 0 {
            return Err(Error::InvalidInput("n_rep, n_b and pilot_paths must be at least 1".into()));
        }
        if !(self.domain_width_sd > 0.0 && self.domain_width_sd.is_finite()) {
            return Err(Error::InvalidInput("domain_width_sd must be positive".into()));
        }
        Ok(())
    }
}

/// Axis-aligned rectangle `[lo[0], hi[0]] x [lo[1], hi[1]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Rect {
    pub fn new(x: (f64, f64), y: (f64, f64)) -> Result<Self> {
        let r = Self {
            lo: [x.0, y.0],
            hi: [x.1, y.1],
        };
        if r.lo.iter().chain(&r.hi).any(|v| !v.is_finite()) || r.lo[0] > r.hi[0] || r.lo[1] > r.hi[1] {
            return Err(Error::InvalidInput(format!("malformed rectangle {r:?}")));
        }
        Ok(r)
    }

    pub fn contains(&self, p: &[f64; 2]) -> bool {
        (0..2).all(|d| p[d] >= self.lo[d] && p[d] <= self.hi[d])
    }

    pub fn on_boundary(&self, p: &[f64; 2]) -> bool {
        self.contains(p) && (0..2).any(|d| p[d] == self.lo[d] || p[d] == self.hi[d])
    }
}

/// Latin hypercube sample of `n` points: each of the `n` equal strata per axis holds exactly one point.
pub fn lhs<R: Rng + ?Sized>(n: usize, bounds: &Rect, rng: &mut R) -> Vec<[f64; 2]> {
    let mut cols = [(0..n).collect::<Vec<_>>(), (0..n).collect::<Vec<_>>()];
    for c in cols.iter_mut() {
        c.shuffle(rng);
    }
    (0..n)
        .map(|i| {
            let mut p = [0.0; 2];
            for d in 0..2 {
                let u: f64 = rng.sample(Open01);
                let w = bounds.hi[d] - bounds.lo[d];
                p[d] = (bounds.lo[d] + w * (cols[d][i] as f64 + u) / n as f64).min(bounds.hi[d]);
            }
            p
        })
        .collect()
}

/// `n_fence` evenly spaced points around the rectangle boundary, `n_fence / 4` per edge,
/// each corner appearing once.
pub fn fence(bounds: &Rect, n_fence: usize) -> Result<Vec<[f64; 2]>> {
    if !n_fence.is_multiple_of(4) {
        return Err(Error::InvalidInput(format!("n_fence ({n_fence}) must be divisible by 4")));
    }
    let m = n_fence / 4;
    let [x0, y0] = bounds.lo;
    let [x1, y1] = bounds.hi;
    let at = |a: f64, b: f64, j: usize| a + (b - a) * j as f64 / m as f64;
    let mut pts = Vec::with_capacity(n_fence);
    // counter-clockwise from the lower-left corner; each edge omits its far corner
    for j in 0..m {
        pts.push([at(x0, x1, j), y0]);
    }
    for j in 0..m {
        pts.push([x1, at(y0, y1, j)]);
    }
    for j in 0..m {
        pts.push([at(x1, x0, j), y1]);
    }
    for j in 0..m {
        pts.push([x0, at(y1, y0, j)]);
    }
    Ok(pts)
}

/// Per-step mean and standard deviation of uncontrolled pilot paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotMoments {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl PilotMoments {
    pub fn estimate(model: &WindModel, x0: f64, cfg: &DesignConfig) -> Result<Self> {
        let n_steps = model.n_steps();
        let paths = simulate_paths(model, x0, cfg.pilot_paths, n_steps, cfg.seed ^ PILOT_SEED_SALT)?;
        let n = paths.len() as f64;
        let mut mean = vec![0.0; n_steps + 1];
        let mut std = vec![0.0; n_steps + 1];
        for k in 0..=n_steps {
            let m = paths.iter().map(|p| p[k]).sum::<f64>() / n;
            let var = if paths.len() > 1 {
                paths.iter().map(|p| (p[k] - m).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            mean[k] = m;
            std[k] = var.sqrt();
        }
        Ok(Self { mean, std })
    }

    pub fn n_steps(&self) -> usize {
        self.mean.len() - 1
    }
}

/// X-side of the training rectangle at step `k`: pilot mean plus or minus
/// `domain_width_sd` standard deviations, floored and clipped to the state domain.
pub fn training_domain(k: usize, moments: &PilotMoments, state_domain: (f64, f64), cfg: &DesignConfig) -> Result<(f64, f64)> {
    let (Some(&m), Some(&s)) = (moments.mean.get(k), moments.std.get(k)) else {
        return Err(Error::InvalidInput(format!("step {k} beyond pilot horizon {}", moments.n_steps())));
    };
    let (lo, hi) = state_domain;
    let half = (cfg.domain_width_sd * s).max(DOMAIN_FLOOR_FRACTION * (hi - lo));
    Ok(((m - half).max(lo), (m + half).min(hi)))
}

/// Training designs for one backward step.
#[derive(Clone, Debug, PartialEq)]
pub struct Designs {
    pub rect: Rect,
    /// Distinct value-design sites (LHS interior followed by fence points).
    pub sites: Vec<[f64; 2]>,
    pub n_rep: usize,
    /// Control design, an independent LHS over the same rectangle.
    pub control: Vec<[f64; 2]>,
}

impl Designs {
    /// Full replicated value design; site `j` occupies rows `j * n_rep .. (j + 1) * n_rep`.
    pub fn replicated(&self) -> Vec<[f64; 2]> {
        self.sites
            .iter()
            .flat_map(|s| std::iter::repeat_n(*s, self.n_rep))
            .collect()
    }
}

/// Value and control designs over `x_range x [i_min, i_max]`.
pub fn build_designs<R: Rng + ?Sized>(
    x_range: (f64, f64),
    battery: &BatterySpec,
    cfg: &DesignConfig,
    rng: &mut R,
) -> Result<Designs> {
    cfg.validate()?;
    let rect = Rect::new(x_range, (battery.i_min, battery.i_max))?;
    let mut sites = lhs(cfg.n_loc - cfg.n_fence, &rect, rng);
    sites.extend(fence(&rect, cfg.n_fence)?);
    let control = lhs(cfg.n_b, &rect, rng);
    Ok(Designs {
        rect,
        sites,
        n_rep: cfg.n_rep,
        control,
    })
}
