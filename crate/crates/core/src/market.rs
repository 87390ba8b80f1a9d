//! Market model: geometric Brownian asset paths, Girsanov densities of the
//! dual measures, upper variation, wealth dynamics and discounting.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::constraint::ConstraintSet;
use crate::error::{check_dim, invalid, Error, Result};
use crate::stats::{self, Estimate};

/// A right-continuous step function of time: `values[k]` holds on
/// `[starts[k], starts[k+1])`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseConstant<T> {
    pub starts: Vec<f64>,
    pub values: Vec<T>,
}

impl<T: Clone> PiecewiseConstant<T> {
    pub fn constant(value: T) -> Self {
        Self {
            starts: vec![0.0],
            values: vec![value],
        }
    }

    pub fn new(starts: Vec<f64>, values: Vec<T>) -> Result<Self> {
        if starts.is_empty() || starts.len() != values.len() {
            return Err(invalid("piecewise", "need one start time per value"));
        }
        if starts[0] != 0.0 {
            return Err(invalid("piecewise", "first piece must start at t = 0"));
        }
        if starts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("piecewise", "start times must be strictly increasing"));
        }
        Ok(Self { starts, values })
    }

    pub fn bucket(&self, t: f64) -> usize {
        // Small tolerance so grid times landing on a breakpoint pick the new
        // piece despite rounding in `n * dt`.
        self.starts.partition_point(|s| *s <= t + 1e-12).saturating_sub(1)
    }

    pub fn at(&self, t: f64) -> &T {
        &self.values[self.bucket(t)]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MarketParams {
    pub dim: usize,
    pub drift: PiecewiseConstant<Vec<f64>>,
    /// Row-major `d × d` volatility matrix.
    pub sigma: Vec<f64>,
    #[serde(skip)]
    sigma_inv: Vec<f64>,
    pub discount: PiecewiseConstant<f64>,
    pub beta: f64,
    pub alpha: f64,
    pub alpha_bar: f64,
    pub horizon: f64,
}

const MAX_CONDITION: f64 = 1e12;

impl MarketParams {
    /// Constant-coefficient market with `δ ≡ 0`, `α = 0`, `ᾱ = 1`.
    pub fn new(drift: Vec<f64>, sigma: Vec<Vec<f64>>, beta: f64, horizon: f64) -> Result<Self> {
        let dim = drift.len();
        Self::build(
            PiecewiseConstant::constant(drift),
            sigma,
            PiecewiseConstant::constant(0.0),
            beta,
            0.0,
            1.0,
            horizon,
            dim,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn build(
        drift: PiecewiseConstant<Vec<f64>>,
        sigma: Vec<Vec<f64>>,
        discount: PiecewiseConstant<f64>,
        beta: f64,
        alpha: f64,
        alpha_bar: f64,
        horizon: f64,
        dim: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("market.b", "need at least one asset"));
        }
        for b in &drift.values {
            check_dim(dim, b.len())?;
        }
        check_dim(dim, sigma.len())?;
        for row in &sigma {
            check_dim(dim, row.len())?;
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(invalid("market.beta", "entropy weight must lie in (0, ∞)"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("market.T", "horizon must be positive"));
        }
        if alpha < 0.0 || alpha_bar < 0.0 {
            return Err(invalid("market.alpha", "utility weights must be nonnegative"));
        }
        if discount.values.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(invalid("market.delta", "discount rate must be nonnegative and bounded"));
        }
        let flat: Vec<f64> = sigma.iter().flatten().copied().collect();
        let m = DMatrix::from_row_slice(dim, dim, &flat);
        let sv = m.clone().svd(false, false).singular_values;
        let (smax, smin) = (sv.max(), sv.min());
        if smin <= 0.0 || smax / smin > MAX_CONDITION {
            return Err(invalid("market.sigma", "volatility matrix is singular or ill-conditioned"));
        }
        let inv = m.try_inverse().ok_or_else(|| invalid("market.sigma", "not invertible"))?;
        let sigma_inv = (0..dim)
            .flat_map(|i| (0..dim).map(move |j| (i, j)))
            .map(|(i, j)| inv[(i, j)])
            .collect();
        Ok(Self {
            dim,
            drift,
            sigma: flat,
            sigma_inv,
            discount,
            beta,
            alpha,
            alpha_bar,
            horizon,
        })
    }

    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(invalid("market.beta", "entropy weight must lie in (0, ∞)"));
        }
        self.beta = beta;
        Ok(self)
    }

    pub fn with_weights(mut self, alpha: f64, alpha_bar: f64) -> Result<Self> {
        if alpha < 0.0 || alpha_bar < 0.0 {
            return Err(invalid("market.alpha", "utility weights must be nonnegative"));
        }
        self.alpha = alpha;
        self.alpha_bar = alpha_bar;
        Ok(self)
    }

    pub fn with_discount(mut self, discount: PiecewiseConstant<f64>) -> Result<Self> {
        if discount.values.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(invalid("market.delta", "discount rate must be nonnegative and bounded"));
        }
        self.discount = discount;
        Ok(self)
    }

    pub fn sigma(&self, i: usize, j: usize) -> f64 {
        self.sigma[i * self.dim + j]
    }

    pub fn sigma_inv(&self, i: usize, j: usize) -> f64 {
        self.sigma_inv[i * self.dim + j]
    }

    /// `σ^{-1} v`.
    pub fn solve_sigma(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.sigma_inv(i, j) * v[j]).sum())
            .collect()
    }

    /// Relative risk `θ_t = σ^{-1} b_t`.
    pub fn theta_at(&self, t: f64) -> Vec<f64> {
        self.solve_sigma(self.drift.at(t))
    }

    pub fn discount_sup(&self) -> f64 {
        self.discount.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn has_discounting(&self) -> bool {
        self.discount_sup() > 0.0
    }
}

/// Per-path array with `cols` entries per path, stored path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathArray {
    pub paths: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl PathArray {
    pub fn filled(paths: usize, cols: usize, value: f64) -> Self {
        Self {
            paths,
            cols,
            data: vec![value; paths * cols],
        }
    }

    pub fn from_fn<F>(paths: usize, cols: usize, f: F) -> Self
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        let mut data = vec![0.0; paths * cols];
        data.par_chunks_mut(cols.max(1))
            .enumerate()
            .for_each(|(m, row)| row.iter_mut().enumerate().for_each(|(n, v)| *v = f(m, n)));
        Self { paths, cols, data }
    }

    pub fn at(&self, path: usize, col: usize) -> f64 {
        self.data[path * self.cols + col]
    }

    pub fn row(&self, path: usize) -> &[f64] {
        &self.data[path * self.cols..(path + 1) * self.cols]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.paths).map(|m| self.at(m, col)).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        Self {
            paths: self.paths,
            cols: self.cols,
            data: self.data.par_iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn last_column(&self) -> Vec<f64> {
        self.column(self.cols - 1)
    }
}

/// Simulated Brownian increments and asset prices on a uniform grid.
#[derive(Debug, Clone)]
pub struct PathGrid {
    pub steps: usize,
    pub paths: usize,
    pub dim: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    /// `paths × steps × dim`.
    dw: Vec<f64>,
    /// `paths × (steps + 1) × dim`.
    prices: Vec<f64>,
}

impl PathGrid {
    pub fn dw(&self, path: usize, step: usize) -> &[f64] {
        let o = (path * self.steps + step) * self.dim;
        &self.dw[o..o + self.dim]
    }

    pub fn price(&self, path: usize, step: usize) -> &[f64] {
        let o = (path * (self.steps + 1) + step) * self.dim;
        &self.prices[o..o + self.dim]
    }

    pub fn time(&self, step: usize) -> f64 {
        if step == self.steps {
            self.horizon
        } else {
            step as f64 * self.dt
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|n| self.time(n)).collect()
    }

    /// Cumulative Brownian motion `W_{t_n}` on one path.
    pub fn brownian(&self, path: usize, step: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.dim];
        for n in 0..step {
            for (wj, dj) in w.iter_mut().zip(self.dw(path, n)) {
                *wj += dj;
            }
        }
        w
    }

    /// Build a grid from caller-supplied increments (tests, trees).
    pub fn from_increments(
        params: &MarketParams,
        steps: usize,
        paths: usize,
        dw: Vec<f64>,
    ) -> Result<Self> {
        if steps == 0 || paths == 0 {
            return Err(invalid("grid", "steps and paths must be at least 1"));
        }
        check_dim(paths * steps * params.dim, dw.len())?;
        let mut grid = Self {
            steps,
            paths,
            dim: params.dim,
            dt: params.horizon / steps as f64,
            horizon: params.horizon,
            seed: 0,
            dw,
            prices: Vec::new(),
        };
        grid.prices = grid.integrate_prices(params);
        Ok(grid)
    }

    fn integrate_prices(&self, params: &MarketParams) -> Vec<f64> {
        let (d, n_steps, dt) = (self.dim, self.steps, self.dt);
        let half_var: Vec<f64> = (0..d)
            .map(|i| 0.5 * (0..d).map(|j| params.sigma(i, j).powi(2)).sum::<f64>())
            .collect();
        let mut prices = vec![0.0; self.paths * (n_steps + 1) * d];
        prices
            .par_chunks_mut((n_steps + 1) * d)
            .enumerate()
            .for_each(|(m, out)| {
                let mut log_s = vec![0.0; d];
                out[..d].fill(1.0);
                for n in 0..n_steps {
                    let b = params.drift.at(self.time(n));
                    let dw = self.dw(m, n);
                    for i in 0..d {
                        let shock: f64 = (0..d).map(|j| params.sigma(i, j) * dw[j]).sum();
                        log_s[i] += (b[i] - half_var[i]) * dt + shock;
                        out[(n + 1) * d + i] = log_s[i].exp();
                    }
                }
            });
        prices
    }
}

/// Simulates `paths` GBM paths with `steps` exact lognormal steps.
///
/// Path `m` draws its normals from a ChaCha stream keyed by `(seed, m)`, so
/// adding paths never perturbs existing ones.
pub fn simulate_paths(params: &MarketParams, steps: usize, paths: usize, seed: u64) -> Result<PathGrid> {
    if steps == 0 || paths == 0 {
        return Err(invalid("grid", "steps and paths must be at least 1"));
    }
    let d = params.dim;
    let dt = params.horizon / steps as f64;
    let sqdt = dt.sqrt();
    let mut dw = vec![0.0; paths * steps * d];
    dw.par_chunks_mut(steps * d).enumerate().for_each(|(m, out)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(m as u64);
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = z * sqdt;
        }
    });
    let mut grid = PathGrid::from_increments(params, steps, paths, dw)?;
    grid.seed = seed;
    Ok(grid)
}

/// `θ = σ^{-1} b` at each left grid endpoint.
pub fn relative_risk(params: &MarketParams, grid: &PathGrid) -> Vec<Vec<f64>> {
    (0..grid.steps).map(|n| params.theta_at(grid.time(n))).collect()
}

/// Tabulated feedback kernel `ν(t, S)`: piecewise constant in time and in the
/// log price of one asset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedbackTable {
    pub time_starts: Vec<f64>,
    pub asset: usize,
    /// Interior bin edges in log price; `edges.len() + 1` bins.
    pub log_price_edges: Vec<f64>,
    /// `values[time_bucket][bin]` is a `d`-vector.
    pub values: Vec<Vec<Vec<f64>>>,
}

/// A dual Girsanov kernel `ν`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelProcess {
    Zero,
    PiecewiseConstant(PiecewiseConstant<Vec<f64>>),
    StateFeedback(FeedbackTable),
}

impl KernelProcess {
    pub fn constant(value: Vec<f64>) -> Self {
        KernelProcess::PiecewiseConstant(PiecewiseConstant::constant(value))
    }

    pub fn is_deterministic_constant(&self) -> bool {
        match self {
            KernelProcess::Zero => true,
            KernelProcess::PiecewiseConstant(p) => p.values.len() == 1,
            KernelProcess::StateFeedback(_) => false,
        }
    }

    /// Every tabulated value, tagged with its time bucket.
    fn tabulated(&self) -> Vec<(usize, &[f64])> {
        match self {
            KernelProcess::Zero => Vec::new(),
            KernelProcess::PiecewiseConstant(p) => {
                p.values.iter().enumerate().map(|(k, v)| (k, v.as_slice())).collect()
            }
            KernelProcess::StateFeedback(t) => t
                .values
                .iter()
                .enumerate()
                .flat_map(|(k, bins)| bins.iter().map(move |v| (k, v.as_slice())))
                .collect(),
        }
    }

    /// Checks dimensions and barrier-cone membership of every value.
    pub fn validate(&self, k: &ConstraintSet) -> Result<()> {
        if let KernelProcess::StateFeedback(t) = self {
            if t.values.len() != t.time_starts.len()
                || t.values.iter().any(|b| b.len() != t.log_price_edges.len() + 1)
            {
                return Err(invalid("kernel", "feedback table shape mismatch"));
            }
            if t.asset >= k.dim {
                return Err(invalid("kernel", "feedback asset index out of range"));
            }
        }
        for (bucket, v) in self.tabulated() {
            check_dim(k.dim, v.len())?;
            if !k.in_barrier_cone(v)? {
                return Err(Error::KernelOutsideBarrierCone { bucket });
            }
        }
        Ok(())
    }

    /// Time bucket and value at `(t, S)`; `None` means identically zero.
    pub fn eval(&self, t: f64, price: &[f64]) -> Option<(usize, &[f64])> {
        match self {
            KernelProcess::Zero => None,
            KernelProcess::PiecewiseConstant(p) => {
                let k = p.bucket(t);
                Some((k, &p.values[k]))
            }
            KernelProcess::StateFeedback(tab) => {
                let k = tab
                    .time_starts
                    .partition_point(|s| *s <= t + 1e-12)
                    .saturating_sub(1);
                let x = price[tab.asset].ln();
                let bin = tab.log_price_edges.partition_point(|e| *e <= x);
                Some((k, &tab.values[k][bin]))
            }
        }
    }
}

/// Girsanov kernel `φ = θ + σ^{-1} ν` at one node.
fn girsanov_kernel(params: &MarketParams, nu: &KernelProcess, t: f64, price: &[f64]) -> Vec<f64> {
    let mut phi = params.theta_at(t);
    if let Some((_, v)) = nu.eval(t, price) {
        for (p, s) in phi.iter_mut().zip(params.solve_sigma(v)) {
            *p += s;
        }
    }
    phi
}

/// Density process `Z^ν = E(-∫ (θ + σ^{-1}ν)' dW)` on the grid, built in log
/// space so it stays strictly positive.
pub fn girsanov_density(grid: &PathGrid, params: &MarketParams, nu: &KernelProcess) -> Result<PathArray> {
    check_dim(params.dim, grid.dim)?;
    let cols = grid.steps + 1;
    let mut data = vec![0.0; grid.paths * cols];
    data.par_chunks_mut(cols).enumerate().for_each(|(m, out)| {
        let mut log_z = 0.0;
        out[0] = 1.0;
        for n in 0..grid.steps {
            let phi = girsanov_kernel(params, nu, grid.time(n), grid.price(m, n));
            let dw = grid.dw(m, n);
            let lin: f64 = phi.iter().zip(dw).map(|(p, w)| p * w).sum();
            let sq: f64 = phi.iter().map(|p| p * p).sum();
            log_z += -lin - 0.5 * sq * grid.dt;
            out[n + 1] = log_z.exp();
        }
    });
    Ok(PathArray {
        paths: grid.paths,
        cols,
        data,
    })
}

/// Upper variation `A_t(ν) = ∫_0^t δ(ν_s | K) ds` by left Riemann sums.
pub fn upper_variation(k: &ConstraintSet, nu: &KernelProcess, grid: &PathGrid) -> Result<PathArray> {
    nu.validate(k)?;
    let cols = grid.steps + 1;
    if *nu == KernelProcess::Zero {
        return Ok(PathArray::filled(grid.paths, cols, 0.0));
    }
    let mut data = vec![0.0; grid.paths * cols];
    let failures: Vec<usize> = data
        .par_chunks_mut(cols)
        .enumerate()
        .filter_map(|(m, out)| {
            let mut acc = 0.0;
            for n in 0..grid.steps {
                let (bucket, v) = nu.eval(grid.time(n), grid.price(m, n))?;
                match k.support_unchecked(v).finite() {
                    Some(s) => acc += s * grid.dt,
                    None => return Some(bucket),
                }
                out[n + 1] = acc;
            }
            None
        })
        .collect();
    if let Some(bucket) = failures.first() {
        return Err(Error::KernelOutsideBarrierCone { bucket: *bucket });
    }
    Ok(PathArray {
        paths: grid.paths,
        cols,
        data,
    })
}

/// Portfolio amounts `H` (`paths × steps × dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    pub paths: usize,
    pub steps: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Portfolio {
    pub fn zeros(paths: usize, steps: usize, dim: usize) -> Self {
        Self {
            paths,
            steps,
            dim,
            data: vec![0.0; paths * steps * dim],
        }
    }

    pub fn at(&self, path: usize, step: usize) -> &[f64] {
        let o = (path * self.steps + step) * self.dim;
        &self.data[o..o + self.dim]
    }

    pub fn at_mut(&mut self, path: usize, step: usize) -> &mut [f64] {
        let o = (path * self.steps + step) * self.dim;
        &mut self.data[o..o + self.dim]
    }
}

#[derive(Debug, Clone)]
pub struct WealthPaths {
    pub wealth: PathArray,
    /// Largest Euclidean distance of any `H_t` from `K` (0 without a session
    /// constraint).
    pub max_violation: f64,
    pub violations: usize,
}

/// Self-financing wealth `X_{t+Δ} = X_t + Σ_i H^i_t ΔS^i/S^i − c_t Δ`.
pub fn wealth_path(
    grid: &PathGrid,
    holdings: &Portfolio,
    consumption: Option<&PathArray>,
    x0: f64,
    constraint: Option<&ConstraintSet>,
) -> Result<WealthPaths> {
    if holdings.paths != grid.paths || holdings.steps != grid.steps {
        return Err(Error::DimensionMismatch {
            expected: grid.paths * grid.steps,
            got: holdings.paths * holdings.steps,
        });
    }
    check_dim(grid.dim, holdings.dim)?;
    if let Some(c) = consumption {
        check_dim(grid.paths * grid.steps, c.data.len())?;
        if let Some(i) = c.data.iter().position(|v| *v < 0.0 || v.is_nan()) {
            return Err(Error::NegativeConsumption {
                path: i / c.cols,
                step: i % c.cols,
                value: c.data[i],
            });
        }
    }
    let cols = grid.steps + 1;
    let per_path: Vec<(Vec<f64>, f64, usize)> = (0..grid.paths)
        .into_par_iter()
        .map(|m| {
            let mut x = vec![x0; cols];
            let mut worst: f64 = 0.0;
            let mut count = 0;
            for n in 0..grid.steps {
                let h = holdings.at(m, n);
                if let Some(k) = constraint {
                    let p = k.project(h).expect("dimension checked");
                    let dist = h.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    if dist > 1e-12 {
                        count += 1;
                        worst = worst.max(dist);
                    }
                }
                let (s0, s1) = (grid.price(m, n), grid.price(m, n + 1));
                let gain: f64 = (0..grid.dim).map(|i| h[i] * (s1[i] - s0[i]) / s0[i]).sum();
                let drain = consumption.map_or(0.0, |c| c.at(m, n) * grid.dt);
                x[n + 1] = x[n] + gain - drain;
            }
            (x, worst, count)
        })
        .collect();
    let max_violation = per_path.iter().map(|p| p.1).fold(0.0, f64::max);
    let violations = per_path.iter().map(|p| p.2).sum();
    let data = per_path.into_iter().flat_map(|p| p.0).collect();
    Ok(WealthPaths {
        wealth: PathArray {
            paths: grid.paths,
            cols,
            data,
        },
        max_violation,
        violations,
    })
}

/// `S^δ_{t_n} = exp(-Σ_{k<n} δ(t_k) Δ)`.
pub fn discount_factor(params: &MarketParams, grid: &PathGrid) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.steps + 1);
    let mut integral = 0.0;
    out.push(1.0);
    for n in 0..grid.steps {
        integral += params.discount.at(grid.time(n)) * grid.dt;
        out.push((-integral).exp());
    }
    out
}

/// Entropy penalty `R^δ_{t,T}` of the measure with density `z` (per path),
/// evaluated from grid index `from`.
pub fn relative_entropy_penalty(
    z: &PathArray,
    params: &MarketParams,
    grid: &PathGrid,
    from: usize,
) -> Result<Vec<f64>> {
    check_dim(grid.steps + 1, z.cols)?;
    if from > grid.steps {
        return Err(invalid("t", "time index beyond the horizon"));
    }
    if let Some(i) = z.data.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::NonPositiveDensity {
            path: i / z.cols,
            step: i % z.cols,
            value: z.data[i],
        });
    }
    let disc = discount_factor(params, grid);
    let n_steps = grid.steps;
    Ok((0..z.paths)
        .into_par_iter()
        .map(|m| {
            let log_zt = z.at(m, from).ln();
            let mut rate_part = 0.0;
            for s in from..n_steps {
                let delta = *params.discount.at(grid.time(s));
                if delta > 0.0 {
                    rate_part += delta * disc[s] * (z.at(m, s).ln() - log_zt) * grid.dt;
                }
            }
            let terminal = disc[n_steps] * (z.at(m, n_steps).ln() - log_zt);
            (rate_part + terminal) / disc[from]
        })
        .collect())
}

/// Sample moments `E[Z_T^η]` and `E[Z_T^{1-η̄}]` used as admissibility
/// diagnostics for a dual density.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DensityMoments {
    pub eta: f64,
    pub eta_bar: f64,
    pub upper: Estimate,
    pub lower: Estimate,
}

pub fn density_moments(terminal: &[f64], eta: f64, eta_bar: f64) -> Result<DensityMoments> {
    if !(eta > 1.0 && eta_bar > 1.0) {
        return Err(invalid("diag.eta", "moment exponents must exceed 1"));
    }
    Ok(DensityMoments {
        eta,
        eta_bar,
        upper: stats::estimate_fn(terminal.len(), |i| terminal[i].powf(eta)),
        lower: stats::estimate_fn(terminal.len(), |i| terminal[i].powf(1.0 - eta_bar)),
    })
}
