//! Gaussian-process regression on two-dimensional inputs.
//!
//! Inputs and outputs are min-max scaled to `[-1, 1]` before fitting; kernel
//! hyperparameters therefore live in standardised units. The posterior mean
//! uses a zero prior mean in standardised output space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_in_place, cholesky_solve, dot, half_log_det};
use crate::optim::nelder_mead;

const SQRT3: f64 = 1.732_050_807_568_877_2;
const SQRT5: f64 = 2.236_067_977_499_79;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Relative jitter ladder applied to the Gram diagonal when factorisation fails.
const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    Matern52,
    Matern32,
}

impl KernelFamily {
    /// One-dimensional Matérn correlation at signed distance `d`.
    #[inline]
    pub fn factor(self, d: f64, ell: f64) -> f64 {
        match self {
            KernelFamily::Matern52 => {
                let a = SQRT5 * d.abs() / ell;
                (1.0 + a + a * a / 3.0) * (-a).exp()
            }
            KernelFamily::Matern32 => {
                let a = SQRT3 * d.abs() / ell;
                (1.0 + a) * (-a).exp()
            }
        }
    }

    /// Derivative of [`factor`](Self::factor) with respect to `d`; zero at `d = 0`.
    #[inline]
    pub fn factor_deriv(self, d: f64, ell: f64) -> f64 {
        match self {
            KernelFamily::Matern52 => {
                let a = SQRT5 * d.abs() / ell;
                -(5.0 / (3.0 * ell * ell)) * d * (1.0 + a) * (-a).exp()
            }
            KernelFamily::Matern32 => {
                let a = SQRT3 * d.abs() / ell;
                -(3.0 / (ell * ell)) * d * (-a).exp()
            }
        }
    }
}

/// Anisotropic product Matérn kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub signal_variance: f64,
    pub lengthscales: [f64; 2],
}

impl KernelSpec {
    pub fn new(family: KernelFamily, signal_variance: f64, lengthscales: [f64; 2]) -> Result<Self> {
        let k = Self {
            family,
            signal_variance,
            lengthscales,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.signal_variance) && self.lengthscales.iter().all(|l| ok(*l)) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("kernel hyperparameters must be positive and finite: {self:?}")))
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64; 2], y: &[f64; 2]) -> f64 {
        self.signal_variance
            * self.family.factor(x[0] - y[0], self.lengthscales[0])
            * self.family.factor(x[1] - y[1], self.lengthscales[1])
    }

    /// Partial derivative of `eval(x, y)` with respect to `x[dim]`.
    #[inline]
    pub fn grad(&self, x: &[f64; 2], y: &[f64; 2], dim: usize) -> f64 {
        let other = 1 - dim;
        self.signal_variance
            * self.family.factor_deriv(x[dim] - y[dim], self.lengthscales[dim])
            * self.family.factor(x[other] - y[other], self.lengthscales[other])
    }
}

/// Affine map of `[lo, hi]` onto `[-1, 1]`; degenerate ranges only shift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mid: f64,
    pub half: f64,
}

impl Scaler {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let (lo, hi) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let half = 0.5 * (hi - lo);
        Self {
            mid: 0.5 * (hi + lo),
            half: if half > 0.0 && half.is_finite() { half } else { 1.0 },
        }
    }

    #[inline]
    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mid) / self.half
    }

    #[inline]
    pub fn inverse(&self, u: f64) -> f64 {
        self.mid + self.half * u
    }
}

/// Kernel hyperparameters together with the observation-noise variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub kernel: KernelSpec,
    pub noise_variance: f64,
}

impl Hyper {
    fn to_log(self) -> [f64; 4] {
        [
            self.kernel.signal_variance.ln(),
            self.kernel.lengthscales[0].ln(),
            self.kernel.lengthscales[1].ln(),
            self.noise_variance.ln(),
        ]
    }

    fn from_log(family: KernelFamily, t: &[f64]) -> Self {
        Self {
            kernel: KernelSpec {
                family,
                signal_variance: t[0].exp(),
                lengthscales: [t[1].exp(), t[2].exp()],
            },
            noise_variance: t[3].exp(),
        }
    }
}

/// Trained GP surrogate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GpModel {
    pub kernel: KernelSpec,
    pub noise_variance: f64,
    /// Absolute jitter added to the diagonal during factorisation.
    pub jitter: f64,
    /// Standardised training inputs.
    pub inputs: Vec<[f64; 2]>,
    /// Training targets in original units.
    pub targets: Vec<f64>,
    pub alpha: Vec<f64>,
    pub input_scalers: [Scaler; 2],
    pub output_scaler: Scaler,
    /// Lower Cholesky factor of `C + noise I + jitter I` (row-major); rebuilt by [`GpModel::restore_factor`].
    #[serde(skip)]
    pub cov_factor: Vec<f64>,
}

fn standardize(inputs: &[[f64; 2]], targets: &[f64]) -> ([Scaler; 2], Scaler, Vec<[f64; 2]>, Vec<f64>) {
    let sx = [
        Scaler::from_values(inputs.iter().map(|p| p[0])),
        Scaler::from_values(inputs.iter().map(|p| p[1])),
    ];
    let sy = Scaler::from_values(targets.iter().copied());
    let u = inputs.iter().map(|p| [sx[0].forward(p[0]), sx[1].forward(p[1])]).collect();
    let y = targets.iter().map(|t| sy.forward(*t)).collect();
    (sx, sy, u, y)
}

fn check_data(inputs: &[[f64; 2]], targets: &[f64]) -> Result<()> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "need matching non-empty inputs and targets, got {} and {}",
            inputs.len(),
            targets.len()
        )));
    }
    if inputs.iter().flatten().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GP training data"));
    }
    Ok(())
}

/// Pairwise per-dimension distances in standardised space, lower triangle packed.
struct PairDistances {
    n: usize,
    d0: Vec<f64>,
    d1: Vec<f64>,
}

impl PairDistances {
    fn new(u: &[[f64; 2]]) -> Self {
        let n = u.len();
        let mut d0 = Vec::with_capacity(n * (n - 1) / 2);
        let mut d1 = Vec::with_capacity(n * (n - 1) / 2);
        for i in 1..n {
            for j in 0..i {
                d0.push(u[i][0] - u[j][0]);
                d1.push(u[i][1] - u[j][1]);
            }
        }
        Self { n, d0, d1 }
    }

    /// Factorises `C + (noise + jitter) I`, escalating jitter on failure.
    fn factorize(&self, kernel: &KernelSpec, noise: f64) -> Result<(Vec<f64>, f64)> {
        self.factorize_inner(kernel, noise, None)
    }

    fn factorize_inner(&self, kernel: &KernelSpec, noise: f64, fixed_jitter: Option<f64>) -> Result<(Vec<f64>, f64)> {
        let n = self.n;
        let mut gram = vec![0.0; n * n];
        let mut p = 0;
        for i in 1..n {
            let row = &mut gram[i * n..i * n + i];
            for v in row.iter_mut() {
                *v = kernel.signal_variance
                    * kernel.family.factor(self.d0[p], kernel.lengthscales[0])
                    * kernel.family.factor(self.d1[p], kernel.lengthscales[1]);
                p += 1;
            }
        }
        let diag = kernel.signal_variance;
        let mean_diag = diag + noise;
        let attempt = |jitter: f64| {
            let mut a = gram.clone();
            for i in 0..n {
                a[i * n + i] = diag + noise + jitter;
            }
            cholesky_in_place(&mut a, n).ok().map(|_| a)
        };
        if let Some(j) = fixed_jitter {
            return attempt(j).map(|l| (l, j)).ok_or(Error::Factorization { n, jitter: j });
        }
        if let Some(l) = attempt(0.0) {
            return Ok((l, 0.0));
        }
        let mut last = 0.0;
        for rel in JITTER_LADDER {
            last = rel * mean_diag;
            if let Some(l) = attempt(last) {
                return Ok((l, last));
            }
        }
        Err(Error::Factorization { n, jitter: last })
    }
}

impl GpModel {
    /// Exact GP posterior for fixed hyperparameters (given in standardised units).
    pub fn fit(inputs: &[[f64; 2]], targets: &[f64], kernel: KernelSpec, noise_variance: f64) -> Result<Self> {
        check_data(inputs, targets)?;
        kernel.validate()?;
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidInput("noise variance must be non-negative".into()));
        }
        let (input_scalers, output_scaler, u, y) = standardize(inputs, targets);
        let n = u.len();
        let (l, jitter) = PairDistances::new(&u).factorize(&kernel, noise_variance)?;
        let alpha = cholesky_solve(&l, n, &y);
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("GP weights"));
        }
        Ok(Self {
            kernel,
            noise_variance,
            jitter,
            inputs: u,
            targets: targets.to_vec(),
            alpha,
            input_scalers,
            output_scaler,
            cov_factor: l,
        })
    }

    /// Fits hyperparameters by maximum likelihood, then the posterior.
    pub fn fit_mle(
        inputs: &[[f64; 2]],
        targets: &[f64],
        init: &Hyper,
        bounds: &MleBounds,
        cfg: &MleConfig,
    ) -> Result<(Self, MleOutcome)> {
        let outcome = mle_fit(inputs, targets, init, bounds, cfg)?;
        let model = Self::fit(inputs, targets, outcome.hyper.kernel, outcome.hyper.noise_variance)?;
        Ok((model, outcome))
    }

    pub fn hyper(&self) -> Hyper {
        Hyper {
            kernel: self.kernel,
            noise_variance: self.noise_variance,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Recomputes the covariance factor after deserialisation.
    pub fn restore_factor(&mut self) -> Result<()> {
        let n = self.inputs.len();
        let (l, _) =
            PairDistances::new(&self.inputs).factorize_inner(&self.kernel, self.noise_variance, Some(self.jitter))?;
        debug_assert_eq!(l.len(), n * n);
        self.cov_factor = l;
        Ok(())
    }

    #[inline]
    fn scale_input(&self, x: &[f64; 2]) -> [f64; 2] {
        [self.input_scalers[0].forward(x[0]), self.input_scalers[1].forward(x[1])]
    }

    /// Posterior mean in original output units.
    pub fn posterior_mean(&self, x: [f64; 2]) -> f64 {
        let u = self.scale_input(&x);
        let s: f64 = self
            .inputs
            .iter()
            .zip(&self.alpha)
            .map(|(xn, a)| a * self.kernel.eval(&u, xn))
            .sum();
        self.output_scaler.inverse(s)
    }

    /// Partial derivative of the posterior mean with respect to `x[dim]`, original units.
    pub fn posterior_grad(&self, x: [f64; 2], dim: usize) -> f64 {
        assert!(dim < 2, "dimension index must be 0 or 1");
        let u = self.scale_input(&x);
        let s: f64 = self
            .inputs
            .iter()
            .zip(&self.alpha)
            .map(|(xn, a)| a * self.kernel.grad(&u, xn, dim))
            .sum();
        s * self.output_scaler.half / self.input_scalers[dim].half
    }

    /// One-dimensional view of the posterior with input `fixed_dim` held at `value`.
    pub fn section(&self, fixed_dim: usize, value: f64) -> GpSection<'_> {
        assert!(fixed_dim < 2, "dimension index must be 0 or 1");
        let free = 1 - fixed_dim;
        let uf = self.input_scalers[fixed_dim].forward(value);
        let weights = self
            .inputs
            .iter()
            .zip(&self.alpha)
            .map(|(xn, a)| {
                a * self.kernel.signal_variance
                    * self.kernel.family.factor(uf - xn[fixed_dim], self.kernel.lengthscales[fixed_dim])
            })
            .collect();
        GpSection {
            model: self,
            free,
            weights,
        }
    }

    /// Log marginal likelihood of the standardised targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.inputs.len();
        let y: Vec<f64> = self.targets.iter().map(|t| self.output_scaler.forward(*t)).collect();
        -0.5 * dot(&y, &self.alpha) - half_log_det(&self.cov_factor, n) - 0.5 * n as f64 * LN_2PI
    }

    /// Root-mean-square residual of the posterior mean on its own training set.
    pub fn training_rmse(&self) -> f64 {
        let n = self.inputs.len() as f64;
        let sse: f64 = self
            .inputs
            .iter()
            .zip(&self.targets)
            .map(|(u, t)| {
                let x = [self.input_scalers[0].inverse(u[0]), self.input_scalers[1].inverse(u[1])];
                (self.posterior_mean(x) - t).powi(2)
            })
            .sum();
        (sse / n).sqrt()
    }
}

/// Posterior restricted to a line along one input; reuses the fixed-dimension kernel factors.
pub struct GpSection<'a> {
    model: &'a GpModel,
    free: usize,
    weights: Vec<f64>,
}

impl GpSection<'_> {
    pub fn mean(&self, v: f64) -> f64 {
        let m = self.model;
        let u = m.input_scalers[self.free].forward(v);
        let ell = m.kernel.lengthscales[self.free];
        let s: f64 = m
            .inputs
            .iter()
            .zip(&self.weights)
            .map(|(xn, w)| w * m.kernel.family.factor(u - xn[self.free], ell))
            .sum();
        m.output_scaler.inverse(s)
    }

    pub fn grad(&self, v: f64) -> f64 {
        let m = self.model;
        let u = m.input_scalers[self.free].forward(v);
        let ell = m.kernel.lengthscales[self.free];
        let s: f64 = m
            .inputs
            .iter()
            .zip(&self.weights)
            .map(|(xn, w)| w * m.kernel.family.factor_deriv(u - xn[self.free], ell))
            .sum();
        s * m.output_scaler.half / m.input_scalers[self.free].half
    }
}

/// Box constraints for maximum-likelihood fitting (standardised units).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleBounds {
    pub lengthscale: (f64, f64),
    pub signal_variance: (f64, f64),
    pub noise_variance: (f64, f64),
}

impl Default for MleBounds {
    fn default() -> Self {
        Self {
            lengthscale: (1e-3, 10.0),
            signal_variance: (1e-4, 10.0),
            noise_variance: (1e-8, 1.0),
        }
    }
}

impl MleBounds {
    fn log_box(&self) -> ([f64; 4], [f64; 4]) {
        (
            [
                self.signal_variance.0.ln(),
                self.lengthscale.0.ln(),
                self.lengthscale.0.ln(),
                self.noise_variance.0.ln(),
            ],
            [
                self.signal_variance.1.ln(),
                self.lengthscale.1.ln(),
                self.lengthscale.1.ln(),
                self.noise_variance.1.ln(),
            ],
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    /// Fixed restart points tried in addition to the warm start.
    pub restarts: usize,
    /// Likelihood evaluations per local search.
    pub max_evals: usize,
    /// Minimum log-likelihood gain required to move away from the initial point.
    pub min_improvement: f64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            restarts: 3,
            max_evals: 200,
            min_improvement: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleOutcome {
    pub hyper: Hyper,
    pub log_likelihood: f64,
    pub init_log_likelihood: f64,
    pub evaluations: usize,
    /// Set when no local search produced a finite likelihood and `init` was returned.
    pub warning: bool,
}

const RESTARTS: [[f64; 4]; 3] = [
    // signal variance, lengthscale 0, lengthscale 1, noise variance
    [1.0, 0.5, 0.5, 1e-4],
    [0.5, 2.0, 2.0, 1e-2],
    [2.0, 0.2, 1.0, 1e-6],
];

/// Maximises the log marginal likelihood over log-hyperparameters inside `bounds`.
///
/// The warm start is searched first, followed by `cfg.restarts` fixed restart
/// points. The result never has a lower likelihood than `init`.
pub fn mle_fit(inputs: &[[f64; 2]], targets: &[f64], init: &Hyper, bounds: &MleBounds, cfg: &MleConfig) -> Result<MleOutcome> {
    check_data(inputs, targets)?;
    if inputs.len() < 3 {
        return Err(Error::InvalidInput("maximum likelihood needs at least 3 points".into()));
    }
    init.kernel.validate()?;
    let family = init.kernel.family;
    let (_, _, u, y) = standardize(inputs, targets);
    let n = u.len();
    let pairs = PairDistances::new(&u);
    let (lo, hi) = bounds.log_box();

    let log_lik = |h: &Hyper| -> f64 {
        match pairs.factorize(&h.kernel, h.noise_variance) {
            Ok((l, _)) => {
                let a = cholesky_solve(&l, n, &y);
                let v = -0.5 * dot(&y, &a) - half_log_det(&l, n) - 0.5 * n as f64 * LN_2PI;
                if v.is_finite() {
                    v
                } else {
                    f64::NEG_INFINITY
                }
            }
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let clamp = |t: &[f64]| -> [f64; 4] {
        let mut c = [0.0; 4];
        for i in 0..4 {
            c[i] = t[i].clamp(lo[i], hi[i]);
        }
        c
    };
    let mut evaluations = 0usize;
    let mut objective = |t: &[f64]| -> f64 {
        evaluations += 1;
        let c = clamp(t);
        let outside: f64 = t.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum();
        -log_lik(&Hyper::from_log(family, &c)) + 1e3 * outside
    };

    let init_ll = log_lik(init);
    let mut starts: Vec<[f64; 4]> = vec![clamp(&init.to_log())];
    for r in RESTARTS.iter().cycle().take(cfg.restarts) {
        starts.push(clamp(&r.map(f64::ln)));
    }

    let mut best: Option<([f64; 4], f64)> = None;
    for start in &starts {
        let step: Vec<f64> = (0..4).map(|i| if start[i] + 0.7 <= hi[i] { 0.7 } else { -0.7 }).collect();
        let res = nelder_mead(&mut objective, start, &step, cfg.max_evals, 1e-10);
        let c = clamp(&res.x);
        let ll = -res.value;
        if ll.is_finite() && best.is_none_or(|(_, b)| ll > b) {
            best = Some((c, ll));
        }
    }

    let outcome = match best {
        Some((t, ll)) if !init_ll.is_finite() || ll > init_ll + cfg.min_improvement => MleOutcome {
            hyper: Hyper::from_log(family, &t),
            log_likelihood: ll,
            init_log_likelihood: init_ll,
            evaluations,
            warning: false,
        },
        Some(_) => MleOutcome {
            hyper: *init,
            log_likelihood: init_ll,
            init_log_likelihood: init_ll,
            evaluations,
            warning: false,
        },
        None => MleOutcome {
            hyper: *init,
            log_likelihood: init_ll,
            init_log_likelihood: init_ll,
            evaluations,
            warning: true,
        },
    };
    Ok(outcome)
}
