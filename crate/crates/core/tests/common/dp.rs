//! Brute-force dynamic programming on a tensor grid for Jacobi problems.
//!
//! Generation moves by the same Euler step the library uses, integrated with
//! Gauss-Hermite quadrature; values are bilinear on the (x, i) grid and the control
//! is optimised continuously by Brent on each branch of the SoC kink.

use hybrid_dispatch::dynamics::{jacobi_step, BatterySpec, JacobiParams};
use hybrid_dispatch::objectives::Objective;
use hybrid_dispatch::optim::brent_minimize;

pub struct GridDp {
    pub xs: Vec<f64>,
    pub is: Vec<f64>,
    /// `values[k][a * is.len() + c]`, k = 0..=K.
    pub values: Vec<Vec<f64>>,
    /// `post[k]` is `E V_{k+1}(X_{k+1}, iota)` on the grid, k = 0..K-1.
    pub post: Vec<Vec<f64>>,
    pub battery: BatterySpec,
    pub objective: Objective,
    pub dt: f64,
}

fn interp1(grid: &[f64], v: f64) -> (usize, f64) {
    let n = grid.len();
    let v = v.clamp(grid[0], grid[n - 1]);
    let h = (grid[n - 1] - grid[0]) / (n - 1) as f64;
    let a = (((v - grid[0]) / h).floor() as usize).min(n - 2);
    (a, (v - grid[a]) / h)
}

impl GridDp {
    fn at(&self, table: &[f64], x: f64, i: f64) -> f64 {
        let ni = self.is.len();
        let (a, s) = interp1(&self.xs, x);
        let (c, t) = interp1(&self.is, i);
        let v = |p: usize, q: usize| table[p * ni + q];
        (1.0 - s) * ((1.0 - t) * v(a, c) + t * v(a, c + 1)) + s * ((1.0 - t) * v(a + 1, c) + t * v(a + 1, c + 1))
    }

    pub fn value(&self, k: usize, x: f64, i: f64) -> f64 {
        self.at(&self.values[k], x, i)
    }

    /// Continuation `E V_{k+1}(X_{k+1}, iota)` given `X_k = x`.
    pub fn continuation(&self, k: usize, x: f64, iota: f64) -> f64 {
        self.at(&self.post[k], x, iota)
    }

    /// Optimal feasible control and its one-step objective at `(k, x, i)`.
    pub fn control(&self, k: usize, x: f64, i: f64) -> (f64, f64) {
        best_control(x, i, k, &self.battery, &self.objective, self.dt, |iota| self.continuation(k, x, iota))
    }
}

fn best_control(
    x: f64,
    i: f64,
    k: usize,
    battery: &BatterySpec,
    objective: &Objective,
    dt: f64,
    cont: impl Fn(f64) -> f64,
) -> (f64, f64) {
    let (lo, hi) = battery.admissible_range(i, dt);
    let j = |b: f64| objective.step_cost(x, b, k, i, battery) * dt + cont(battery.advance(i, b, dt));
    let mut best = (0.0, j(0.0));
    for (a, z) in [(lo, 0.0), (0.0, hi)] {
        if z - a <= 0.0 {
            continue;
        }
        // coarse scan then Brent around the best cell
        let n = 16;
        let pts: Vec<f64> = (0..=n).map(|s| a + (z - a) * s as f64 / n as f64).collect();
        let vals: Vec<f64> = pts.iter().map(|b| j(*b)).collect();
        let m = (0..=n).min_by(|p, q| vals[*p].total_cmp(&vals[*q])).unwrap();
        let (ba, bz) = (pts[m.saturating_sub(1)], pts[(m + 1).min(n)]);
        let (b, v) = brent_minimize(j, ba, bz, 1e-9, 200);
        for cand in [(b, v), (pts[m], vals[m])] {
            if cand.1 < best.1 {
                best = cand;
            }
        }
    }
    best
}

/// Probabilists' Gauss-Hermite nodes and weights (expectations under N(0, 1)).
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(n);
    let pi4 = std::f64::consts::PI.powf(-0.25);
    let mut z = 0.0;
    for k in 0..n / 2 {
        z = match k {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * out[0].0,
            3 => 1.91 * z - 0.91 * out[1].0,
            _ => 2.0 * z - out[k - 2].0,
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (pi4, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j + 1) as f64).sqrt() * p2 - (j as f64 / (j + 1) as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-14 {
                break;
            }
        }
        out.push((z, 2.0 / (pp * pp)));
    }
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let mut nodes: Vec<(f64, f64)> = out
        .iter()
        .flat_map(|&(z, w)| [(z * 2f64.sqrt(), w / sqrt_pi), (-z * 2f64.sqrt(), w / sqrt_pi)])
        .collect();
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    nodes
}

/// Solves the finite-horizon problem on `nx * ni` grid points over `x_range` and the SoC window.
pub fn solve(
    p: &JacobiParams,
    battery: &BatterySpec,
    objective: &Objective,
    x_range: (f64, f64),
    nx: usize,
    ni: usize,
    n_quad: usize,
) -> GridDp {
    let k_steps = p.n_steps();
    let dt = p.dt;
    let xs: Vec<f64> = (0..nx).map(|a| x_range.0 + (x_range.1 - x_range.0) * a as f64 / (nx - 1) as f64).collect();
    let is: Vec<f64> = (0..ni)
        .map(|c| battery.i_min + (battery.i_max - battery.i_min) * c as f64 / (ni - 1) as f64)
        .collect();
    let nodes = gauss_hermite(n_quad);
    let mut dp = GridDp {
        xs,
        is,
        values: vec![Vec::new(); k_steps + 1],
        post: vec![Vec::new(); k_steps],
        battery: battery.clone(),
        objective: objective.clone(),
        dt,
    };
    dp.values[k_steps] = dp
        .xs
        .iter()
        .flat_map(|_| dp.is.iter().map(|i| battery.terminal_cost(*i)))
        .collect();
    for k in (0..k_steps).rev() {
        let mut post = vec![0.0; nx * ni];
        for (a, &x) in dp.xs.iter().enumerate() {
            for &(z, w) in &nodes {
                let xn = jacobi_step(x, k, p, z).unwrap();
                let (b, s) = interp1(&dp.xs, xn);
                for c in 0..ni {
                    let v = (1.0 - s) * dp.values[k + 1][b * ni + c] + s * dp.values[k + 1][(b + 1) * ni + c];
                    post[a * ni + c] += w * v;
                }
            }
        }
        dp.post[k] = post;
        let mut values = vec![0.0; nx * ni];
        for a in 0..nx {
            for c in 0..ni {
                values[a * ni + c] = dp.control(k, dp.xs[a], dp.is[c]).1;
            }
        }
        dp.values[k] = values;
    }
    dp
}
