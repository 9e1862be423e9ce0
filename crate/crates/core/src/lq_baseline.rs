//! Linear-quadratic benchmark policy from the six coefficient Riccati system.
//!
//! The value ansatz is
//! `V = P1 z^2 + P2 z y + P3 y^2 + P4 z + P5 y + P6` with `z = i - I_m`, `y = x - m`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{BatterySpec, JacobiParams};
use crate::error::{Error, Result};

/// Magnitude above which a coefficient is treated as diverged.
pub const BLOW_UP: f64 = 1e8;
/// Default RK4 substeps per control step.
pub const DEFAULT_SUBSTEPS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqParams {
    pub c1: f64,
    pub c2: f64,
    /// Per-step wind coefficients.
    pub alpha: Vec<f64>,
    pub sigma: Vec<f64>,
    pub m: Vec<f64>,
    pub x_max: f64,
    /// Per-step target `M_k`.
    pub target: Vec<f64>,
    pub dt: f64,
    pub terminal_penalty: f64,
    pub i_target: f64,
    pub i_mid: f64,
}

impl LqParams {
    pub fn new(wind: &JacobiParams, battery: &BatterySpec, target: &[f64], c1: f64, c2: f64) -> Result<Self> {
        wind.validate()?;
        if target.len() != wind.n_steps() {
            return Err(Error::InvalidInput(format!(
                "target has {} steps, wind model {}",
                target.len(),
                wind.n_steps()
            )));
        }
        let p = Self {
            c1,
            c2,
            alpha: wind.alpha.clone(),
            sigma: wind.sigma.clone(),
            m: wind.m.clone(),
            x_max: wind.x_max,
            target: target.to_vec(),
            dt: wind.dt,
            terminal_penalty: battery.terminal_penalty,
            i_target: battery.i_target,
            i_mid: battery.i_mid(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1 >= 0.0 && self.c1.is_finite() && self.c2 >= 0.0 && self.c2.is_finite()) {
            return Err(Error::InvalidInput("c1 and c2 must be non-negative".into()));
        }
        if self.target.len() != self.alpha.len() || self.target.is_empty() {
            return Err(Error::InvalidInput("coefficient lengths differ".into()));
        }
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        1.0 / (1.0 + self.c1)
    }

    pub fn n_steps(&self) -> usize {
        self.target.len()
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps() as f64
    }

    /// Time derivative of `(P1, ..., P6)` under the coefficients of control step `k`.
    pub fn rhs(&self, k: usize, p: &[f64; 6]) -> [f64; 6] {
        let kappa = self.kappa();
        let (a, s2, m) = (self.alpha[k], self.sigma[k] * self.sigma[k], self.m[k]);
        let delta = m - self.target[k];
        let [p1, p2, p3, p4, p5, _] = *p;
        [
            kappa * p1 * p1 - self.c2,
            a * p2 + kappa * p1 * p2 - 2.0 * kappa * p1,
            -(1.0 - kappa) + (2.0 * a + s2) * p3 - kappa * p2 + 0.25 * kappa * p2 * p2,
            -2.0 * kappa * delta * p1 + kappa * p1 * p4,
            -2.0 * (1.0 - kappa) * delta + a * p5 - kappa * p4 - kappa * delta * p2 + 0.5 * kappa * p2 * p4
                - s2 * (self.x_max - 2.0 * m) * p3,
            -(1.0 - kappa) * delta * delta - kappa * delta * p4 + 0.25 * kappa * p4 * p4
                - s2 * m * (self.x_max - m) * p3,
        ]
    }

    pub fn terminal(&self) -> [f64; 6] {
        let g = self.i_mid - self.i_target;
        let pen = self.terminal_penalty;
        [pen, 0.0, 0.0, 2.0 * pen * g, 0.0, pen * g * g]
    }
}

/// Coefficient paths on a uniform grid aligned with the control steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolution {
    pub params: LqParams,
    pub substeps: usize,
    /// `p[j]` holds `P(t_j)` with `t_j = j * dt / substeps`.
    pub p: Vec<[f64; 6]>,
}

fn axpy(p: &[f64; 6], h: f64, d: &[f64; 6]) -> [f64; 6] {
    std::array::from_fn(|i| p[i] + h * d[i])
}

/// Integrates the Riccati system backward from the terminal conditions with fixed-step RK4.
pub fn solve_riccati(params: &LqParams, substeps: usize) -> Result<RiccatiSolution> {
    params.validate()?;
    if substeps == 0 {
        return Err(Error::InvalidInput("substeps must be at least 1".into()));
    }
    let k_steps = params.n_steps();
    let n = k_steps * substeps;
    let h = params.dt / substeps as f64;
    let mut p = vec![[0.0; 6]; n + 1];
    p[n] = params.terminal();
    for j in (0..n).rev() {
        let k = j / substeps;
        let y = p[j + 1];
        // backward in time: step of -h
        let k1 = params.rhs(k, &y);
        let k2 = params.rhs(k, &axpy(&y, -0.5 * h, &k1));
        let k3 = params.rhs(k, &axpy(&y, -0.5 * h, &k2));
        let k4 = params.rhs(k, &axpy(&y, -h, &k3));
        let next: [f64; 6] = std::array::from_fn(|i| y[i] - h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        if let Some(idx) = next.iter().position(|v| !v.is_finite() || v.abs() > BLOW_UP) {
            return Err(Error::RiccatiBlowUp {
                index: idx + 1,
                value: next[idx],
                t: j as f64 * h,
            });
        }
        p[j] = next;
    }
    Ok(RiccatiSolution {
        params: params.clone(),
        substeps,
        p,
    })
}

impl RiccatiSolution {
    pub fn grid_step(&self) -> f64 {
        self.params.dt / self.substeps as f64
    }

    /// Coefficients at the start of control step `k` (`k = K` gives the terminal values).
    pub fn at_step(&self, k: usize) -> [f64; 6] {
        self.p[k * self.substeps]
    }

    /// Cubic Hermite interpolation of the coefficients at time `t`.
    pub fn at(&self, t: f64) -> [f64; 6] {
        let h = self.grid_step();
        let n = self.p.len() - 1;
        let s = (t / h).clamp(0.0, n as f64);
        let j = (s.floor() as usize).min(n - 1);
        let u = s - j as f64;
        let k = j / self.substeps;
        let (y0, y1) = (self.p[j], self.p[j + 1]);
        let (d0, d1) = (self.params.rhs(k, &y0), self.params.rhs(k, &y1));
        let h00 = 2.0 * u * u * u - 3.0 * u * u + 1.0;
        let h10 = u * u * u - 2.0 * u * u + u;
        let h01 = -2.0 * u * u * u + 3.0 * u * u;
        let h11 = u * u * u - u * u;
        std::array::from_fn(|i| h00 * y0[i] + h10 * h * d0[i] + h01 * y1[i] + h11 * h * d1[i])
    }

    /// Unconstrained feedback rate at control step `k`.
    pub fn control(&self, k: usize, x: f64, i: f64) -> f64 {
        lq_control(&self.at_step(k), &self.params, k, x, i)
    }

    /// Quadratic value ansatz at control step `k`.
    pub fn value(&self, k: usize, x: f64, i: f64) -> f64 {
        let p = self.at_step(k.min(self.params.n_steps()));
        let m = self.params.m[k.min(self.params.n_steps() - 1)];
        let (z, y) = (i - self.params.i_mid, x - m);
        p[0] * z * z + p[1] * z * y + p[2] * y * y + p[3] * z + p[4] * y + p[5]
    }
}

/// `kappa (x - M_k) - kappa P1 (i - I_m) - kappa/2 P2 (x - m) - kappa/2 P4`.
pub fn lq_control(p: &[f64; 6], params: &LqParams, k: usize, x: f64, i: f64) -> f64 {
    let kappa = params.kappa();
    kappa * (x - params.target[k])
        - kappa * p[0] * (i - params.i_mid)
        - 0.5 * kappa * p[1] * (x - params.m[k])
        - 0.5 * kappa * p[3]
}

/// LQ feedback projected onto the admissible rates of a battery.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqPolicy {
    pub solution: RiccatiSolution,
    pub battery: BatterySpec,
}

impl LqPolicy {
    pub fn new(params: &LqParams, battery: &BatterySpec, substeps: usize) -> Result<Self> {
        Ok(Self {
            solution: solve_riccati(params, substeps)?,
            battery: battery.clone(),
        })
    }

    pub fn control(&self, k: usize, x: f64, i: f64) -> f64 {
        let raw = self.solution.control(k, x, i);
        self.battery.project(raw, i, self.solution.params.dt)
    }
}

/// Evenly spaced grid `[lo, lo + step, ..., hi]`.
pub fn weight_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|j| lo + step * j as f64).collect()
}

/// One point of a penalty-weight sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub c1: f64,
    pub c2: f64,
    pub cost: f64,
}

/// Evaluates `cost(c1, c2)` on the product grid and returns all points with the best first.
pub fn sweep_weights<F>(c1_grid: &[f64], c2_grid: &[f64], mut cost: F) -> Result<Vec<SweepPoint>>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    let mut out = Vec::with_capacity(c1_grid.len() * c2_grid.len());
    for &c1 in c1_grid {
        for &c2 in c2_grid {
            out.push(SweepPoint {
                c1,
                c2,
                cost: cost(c1, c2)?,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("empty sweep grid".into()));
    }
    let best = (0..out.len()).min_by(|&a, &b| out[a].cost.total_cmp(&out[b].cost)).unwrap_or(0);
    out.swap(0, best);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table1(c1: f64, c2: f64, penalty: f64) -> LqParams {
        let wind = JacobiParams::stationary(0.5, 5.0, 0.2, 10.0, 0.25, 96).unwrap();
        let battery = BatterySpec::new(0.0, 3.0, -1.0, 1.0, 1.0, 1.5, penalty).unwrap();
        LqParams::new(&wind, &battery, &[5.0; 96], c1, c2).unwrap()
    }

    #[test]
    fn zero_source_gives_zero_p1() {
        let sol = solve_riccati(&table1(0.3, 0.0, 0.0), DEFAULT_SUBSTEPS).unwrap();
        assert!(sol.p.iter().all(|p| p[0] == 0.0));
    }

    #[test]
    fn terminal_values() {
        let mut params = table1(0.1, 0.2, 10.0);
        params.i_target = 1.0;
        let sol = solve_riccati(&params, DEFAULT_SUBSTEPS).unwrap();
        let last = sol.at_step(96);
        assert_eq!(last[0], 10.0);
        assert_eq!(last[1], 0.0);
        assert_eq!(last[2], 0.0);
        assert_eq!(last[3], 2.0 * 10.0 * 0.5);
        assert_eq!(last[4], 0.0);
        assert_eq!(last[5], 10.0 * 0.25);
        assert!(sol.p.iter().all(|p| p[0] >= 0.0));
    }

    #[test]
    fn p1_matches_scalar_closed_form() {
        for &(c1, c2, pen) in &[(0.08, 0.06, 10.0), (1.0, 0.5, 0.2), (0.5, 0.0, 3.0)] {
            let params = table1(c1, c2, pen);
            let sol = solve_riccati(&params, DEFAULT_SUBSTEPS).unwrap();
            let kappa = params.kappa();
            let t_end = params.horizon();
            for k in 0..=96 {
                let s = t_end - k as f64 * params.dt;
                let exact = if c2 == 0.0 {
                    pen / (1.0 + kappa * pen * s)
                } else {
                    let g = (c2 / kappa).sqrt();
                    let th = ((c2 * kappa).sqrt() * s).tanh();
                    g * (pen + g * th) / (g + pen * th)
                };
                assert_abs_diff_eq!(sol.at_step(k)[0], exact, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn step_halving_converges() {
        let params = table1(0.08, 0.06, 10.0);
        let coarse = solve_riccati(&params, DEFAULT_SUBSTEPS).unwrap().at_step(0);
        let fine = solve_riccati(&params, 2 * DEFAULT_SUBSTEPS).unwrap().at_step(0);
        for i in 0..6 {
            assert!((coarse[i] - fine[i]).abs() < 1e-8, "P{}: {} vs {}", i + 1, coarse[i], fine[i]);
        }
    }

    #[test]
    fn linear_terms_vanish_when_centred() {
        // i_target = I_m, M = m = x_max / 2
        let sol = solve_riccati(&table1(0.08, 0.06, 10.0), DEFAULT_SUBSTEPS).unwrap();
        for p in &sol.p {
            assert!(p[3].abs() < 1e-10 && p[4].abs() < 1e-10);
        }
    }

    #[test]
    fn ode_residual_at_midpoints() {
        // fourth-order stencil for the derivative at each interior midpoint
        let params = table1(0.08, 0.06, 10.0);
        let sol = solve_riccati(&params, 64).unwrap();
        let h = sol.grid_step();
        let mut worst: f64 = 0.0;
        for j in 1..sol.p.len() - 2 {
            let k = j / sol.substeps;
            if (j - 1) / sol.substeps != k || (j + 2) / sol.substeps != k {
                continue;
            }
            let mid = sol.at((j as f64 + 0.5) * h);
            let f = params.rhs(k, &mid);
            for i in 0..6 {
                let d = (sol.p[j - 1][i] - 27.0 * sol.p[j][i] + 27.0 * sol.p[j + 1][i] - sol.p[j + 2][i]) / (24.0 * h);
                worst = worst.max((d - f[i]).abs() / (1.0 + f[i].abs()));
            }
        }
        assert!(worst < 1e-6, "worst relative residual {worst}");
    }

    /// `min_b [(x - b - M)^2 + c1 b^2 + b V_i]` by direct quadratic minimisation.
    fn hamiltonian_min(d: f64, c1: f64, vi: f64) -> f64 {
        let b = (2.0 * d - vi) / (2.0 * (1.0 + c1));
        (d - b).powi(2) + c1 * b * b + b * vi
    }

    #[test]
    fn hjb_residual_of_quadratic_ansatz() {
        let wind = JacobiParams {
            alpha: (0..8).map(|k| 0.4 + 0.05 * k as f64).collect(),
            m: vec![4.0; 8],
            sigma: (0..8).map(|k| 0.15 + 0.01 * k as f64).collect(),
            x_max: 10.0,
            dt: 0.5,
        };
        let battery = BatterySpec::new(0.0, 3.0, -1.0, 1.0, 1.0, 1.0, 4.0).unwrap();
        let target: Vec<f64> = (0..8).map(|k| 4.5 + 0.1 * k as f64).collect();
        let params = LqParams::new(&wind, &battery, &target, 0.2, 0.3).unwrap();
        let sol = solve_riccati(&params, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let t = rng.random::<f64>() * params.horizon() * 0.999;
            let x = rng.random::<f64>() * 10.0;
            let iota = rng.random::<f64>() * 3.0;
            let k = ((t / params.dt) as usize).min(7);
            let p = sol.at(t);
            let dp = params.rhs(k, &p);
            let (m, mm) = (params.m[k], params.target[k]);
            let (z, y) = (iota - params.i_mid, x - m);
            let quad = |q: &[f64; 6]| q[0] * z * z + q[1] * z * y + q[2] * y * y + q[3] * z + q[4] * y + q[5];
            let v_t = quad(&dp);
            let v_i = 2.0 * p[0] * z + p[1] * y + p[3];
            let v_x = p[1] * z + 2.0 * p[2] * y + p[4];
            let v_xx = 2.0 * p[2];
            let s = params.sigma[k];
            let residual = v_t
                + hamiltonian_min(x - mm, params.c1, v_i)
                + params.c2 * z * z
                + params.alpha[k] * (m - x) * v_x
                + 0.5 * s * s * x * (params.x_max - x) * v_xx;
            assert!(residual.abs() < 1e-4, "residual {residual} at t={t} x={x} i={iota}");
        }
    }

    #[test]
    fn control_examples() {
        let params = table1(0.08, 0.0, 10.0);
        let p = [0.3, 0.1, 0.0, 0.0, 0.0, 0.0];
        assert_abs_diff_eq!(lq_control(&p, &params, 0, 6.0, 1.5), 0.879630, epsilon = 1e-6);
        let zero = [0.0; 6];
        assert_eq!(lq_control(&zero, &params, 3, 5.0, 1.5), 0.0);
        let myopic = table1(0.0, 0.0, 0.0);
        let sol = solve_riccati(&myopic, DEFAULT_SUBSTEPS).unwrap();
        for (x, i) in [(7.3, 0.4), (2.0, 2.9)] {
            assert_abs_diff_eq!(sol.control(10, x, i), x - 5.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn projected_policy() {
        let battery = BatterySpec::new(0.0, 3.0, -1.0, 1.0, 1.0, 1.5, 10.0).unwrap();
        let policy = LqPolicy::new(&table1(0.08, 0.06, 10.0), &battery, DEFAULT_SUBSTEPS).unwrap();
        assert_eq!(policy.control(5, 9.0, 3.0), 0.0);
        let raw = policy.solution.control(5, 5.3, 1.5);
        assert!(raw.abs() < 1.0);
        assert_eq!(policy.control(5, 5.3, 1.5), raw);
    }

    #[test]
    fn sweep_reports_best_first() {
        let g = weight_grid(0.0, 1.0, 0.25);
        assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let pts = sweep_weights(&g, &g, |a, b| Ok((a - 0.5).powi(2) + (b - 0.25).powi(2))).unwrap();
        assert_eq!(pts.len(), 25);
        assert_eq!((pts[0].c1, pts[0].c2), (0.5, 0.25));
    }
}
