//! Chains and scale machinery built from decay profiles: the integral and
//! sum conditions, sparse scale schedules, the scale function `ψ`, and
//! birth-death chains with a prescribed Green's function.

pub mod profiles;
pub mod quadrature;

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::chains::{bd_from_drifts, BirthDeathChain, ChainError, ChainSpec};
use crate::greens::{greens_from_d, greens_from_tail, GreenValues, GreensError, GreensTable};
pub use profiles::{profile_by_name, stock_profiles, validate_profile, Capped, Decay, Profile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstructError {
    #[error("φ⁻¹ decreases at n = {n}")]
    NonIncreasingInverse { n: usize },
    #[error("quadrature failed on panel ending at t = {t}")]
    QuadratureFailure { t: f64 },
    #[error("block {block} needs more than {cap} terms")]
    BlockOverflow { block: usize, cap: u64 },
    #[error("log Φ has a negative second difference at {at}")]
    NotLogConvex { at: usize },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    Greens(#[from] GreensError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Advisory classification of a series or improper integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    DivergentLike,
    ConvergentLike,
}

/// Numerical evidence behind a [`Trend`]. Nothing here is a proof.
#[derive(Debug, Clone, Serialize)]
pub struct TrendReport {
    pub trend: Trend,
    /// Mean ratio of consecutive increments over doubling ranges, late blocks.
    pub block_ratio: f64,
    /// Least-squares slope of `log S` against `log log N`.
    pub growth_exponent: f64,
}

/// Block ratio at or below which a sequence of increments counts as
/// contracting.
pub const CONVERGENT_RATIO: f64 = 0.8;

/// Classifies from values `s[j]` of a partial sum at `N = 2^j` (`j >= 0`).
fn classify(doubling: &[f64]) -> TrendReport {
    let inc: Vec<f64> = doubling.windows(2).map(|w| w[1] - w[0]).collect();
    let ratios: Vec<f64> = inc
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .collect();
    let tail = &ratios[ratios.len().saturating_sub(3)..];
    let block_ratio = if tail.is_empty() {
        f64::NAN
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    // slope of log S vs log log N over j >= 1 (log log 1 is undefined)
    let pts: Vec<(f64, f64)> = doubling
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &s)| s > 0.0)
        .map(|(j, &s)| (((j as f64) * std::f64::consts::LN_2).ln(), s.ln()))
        .collect();
    let growth_exponent = slope(&pts);
    let trend = if block_ratio <= CONVERGENT_RATIO {
        Trend::ConvergentLike
    } else {
        Trend::DivergentLike
    };
    TrendReport { trend, block_ratio, growth_exponent }
}

fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Serialize)]
pub struct SumReport {
    /// `S_1, ..., S_N`.
    #[serde(skip)]
    pub partial: Vec<f64>,
    pub report: TrendReport,
}

/// Partial sums of `sum_n 1/(1 ∨ log φ⁻¹(n))`, with `log_phi_inv(n)` giving
/// `log φ⁻¹(n)`.
pub fn sum_condition<F: Fn(f64) -> f64>(
    log_phi_inv: F,
    n_max: usize,
) -> Result<SumReport, ConstructError> {
    let mut partial = Vec::with_capacity(n_max);
    let mut s = 0.0;
    let mut prev = f64::NEG_INFINITY;
    for n in 1..=n_max {
        let l = log_phi_inv(n as f64);
        if l < prev {
            return Err(ConstructError::NonIncreasingInverse { n });
        }
        prev = l;
        s += 1.0 / l.max(1.0);
        partial.push(s);
    }
    let doubling: Vec<f64> = (0..)
        .map(|j| 1usize << j)
        .take_while(|&n| n <= n_max)
        .map(|n| partial[n - 1])
        .collect();
    Ok(SumReport { partial, report: classify(&doubling) })
}

#[derive(Debug, Clone, Serialize)]
pub struct IntegralReport {
    pub eps: Vec<f64>,
    /// `I(ε)` for each grid point.
    pub values: Vec<f64>,
    pub report: TrendReport,
}

/// Default grid `ε = e^{-2^j}`, `j = 0..=9`.
pub fn default_eps_grid() -> Vec<f64> {
    (0..10).map(|j| (-(2f64.powi(j))).exp()).collect()
}

/// `I(ε) = ∫_ε^1 du / (u (1 ∨ log Φ⁻¹(u)))`, computed after the substitution
/// `u = e^{-t}` as `∫_0^{log(1/ε)} dt / (1 ∨ log φ⁻¹(t))`, one adaptive panel
/// per grid interval.
///
/// The trend is read off the grid increments, so a grid of the form
/// `e^{-2^j}` makes it comparable to [`sum_condition`].
pub fn integral_condition(
    profile: &dyn Decay,
    eps_grid: &[f64],
) -> Result<IntegralReport, ConstructError> {
    let integrand = |t: f64| 1.0 / profile.log_phi_inv(t).max(1.0);
    let mut values = Vec::with_capacity(eps_grid.len());
    let mut t_prev = 0.0;
    let mut acc = 0.0;
    for &eps in eps_grid {
        assert!(eps > 0.0 && eps < 1.0, "grid point {eps} outside (0, 1)");
        let t = -eps.ln();
        assert!(t >= t_prev, "grid must be decreasing");
        acc += quadrature::integrate(integrand, t_prev, t, 1e-8, 10_000)
            .ok_or(ConstructError::QuadratureFailure { t })?;
        values.push(acc);
        t_prev = t;
    }
    Ok(IntegralReport { eps: eps_grid.to_vec(), report: classify(&values), values })
}

/// Increasing integer scales `a(1) < a(2) < ...`, with the block structure
/// that produced them when built by [`build_sparse_schedule`].
#[derive(Debug, Clone, Serialize)]
pub struct ScaleSchedule {
    a: Vec<u64>,
    /// `(b_i, d_i)` for `i = 0, 1, ...`.
    pub blocks: Vec<(u64, u64)>,
}

impl ScaleSchedule {
    /// Explicit scales; must be strictly increasing and positive.
    pub fn from_values(a: Vec<u64>) -> Self {
        assert!(!a.is_empty() && a[0] > 0, "scales must start above 0");
        assert!(a.windows(2).all(|w| w[0] < w[1]), "scales must increase");
        Self { a, blocks: Vec::new() }
    }

    pub fn values(&self) -> &[u64] {
        &self.a
    }

    /// `a(k)` for `k >= 1`.
    pub fn get(&self, k: usize) -> Option<u64> {
        k.checked_sub(1).and_then(|i| self.a.get(i).copied())
    }

    fn last_increment(&self) -> f64 {
        match self.a.len() {
            1 => self.a[0] as f64,
            n => (self.a[n - 1] - self.a[n - 2]) as f64,
        }
    }

    fn knot(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.a[k - 1] as f64
        }
    }

    /// Piecewise-linear extension through `(0, 0), (1, a(1)), ...`,
    /// continued past the last scale with the last increment.
    pub fn interp(&self, x: f64) -> f64 {
        let n = self.a.len();
        if x >= n as f64 {
            return self.a[n - 1] as f64 + (x - n as f64) * self.last_increment();
        }
        let k = x.floor() as usize;
        let frac = x - k as f64;
        self.knot(k) + frac * (self.knot(k + 1) - self.knot(k))
    }

    /// Inverse of [`ScaleSchedule::interp`].
    pub fn interp_inv(&self, y: f64) -> f64 {
        let n = self.a.len();
        let top = self.a[n - 1] as f64;
        if y >= top {
            return n as f64 + (y - top) / self.last_increment();
        }
        let k = self.a.partition_point(|&v| (v as f64) <= y);
        let (lo, hi) = (self.knot(k), self.knot(k + 1));
        k as f64 + (y - lo) / (hi - lo)
    }
}

/// Blocks `i = 0, 1, ...` with `b_0 = 0`,
/// `d_i = min{m : sum_{n=1..m} f(b_i + 2^i n) >= 1}` and
/// `b_{i+1} = b_i + 2^i d_i`; the scales are the points `b_i + 2^i n`,
/// `1 <= n <= d_i`, of blocks `i >= 1`.
///
/// With `max_blocks = Some(B)` blocks `1..=B` are built and an overflow of
/// `cap` terms is an error. With `None`, blocks are built until one
/// overflows; that is an error only if no scale was produced.
pub fn build_sparse_schedule<F: Fn(u64) -> f64>(
    f: F,
    max_blocks: Option<usize>,
    cap: u64,
) -> Result<ScaleSchedule, ConstructError> {
    let mut a = Vec::new();
    let mut blocks = Vec::new();
    let mut b: u64 = 0;
    for i in 0.. {
        if let Some(limit) = max_blocks {
            if i > limit {
                break;
            }
        }
        let step = 1u64 << i.min(62);
        let mut deficit = 1.0_f64;
        let mut d = 0u64;
        let mut done = false;
        while d < cap {
            d += 1;
            let term = f(b + step * d);
            if term <= 0.0 {
                break;
            }
            deficit -= term;
            if deficit <= 0.0 {
                done = true;
                break;
            }
        }
        if !done {
            if max_blocks.is_none() && !a.is_empty() {
                break;
            }
            return Err(ConstructError::BlockOverflow { block: i, cap });
        }
        if i >= 1 {
            a.extend((1..=d).map(|n| b + step * n));
        }
        blocks.push((b, d));
        b += step * d;
    }
    Ok(ScaleSchedule { a, blocks })
}

/// `f(k) = 1/(1 ∨ log φ⁻¹(k))`, the summand of the sum condition.
pub fn condition_summand(profile: &dyn Decay) -> impl Fn(u64) -> f64 + '_ {
    move |k| 1.0 / profile.log_phi_inv(k as f64).max(1.0)
}

/// The scale function `ψ⁻¹(x) = 8 φ⁻¹(a(8 a⁻¹(x)))`.
#[derive(Debug, Clone)]
pub struct Psi {
    profile: Profile,
    schedule: ScaleSchedule,
}

pub fn build_psi(profile: Profile, schedule: ScaleSchedule) -> Psi {
    Psi { profile, schedule }
}

impl Psi {
    pub fn log_psi_inv(&self, x: f64) -> f64 {
        let inner = self.schedule.interp(8.0 * self.schedule.interp_inv(x));
        8f64.ln() + self.profile.log_phi_inv(inner)
    }

    pub fn psi_inv(&self, x: f64) -> f64 {
        self.log_psi_inv(x).exp()
    }

    pub fn schedule(&self) -> &ScaleSchedule {
        &self.schedule
    }
}

/// Outcome of the sampled checks on `ψ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PsiChecks {
    /// `ψ ≤ φ`, i.e. `ψ⁻¹ ≥ φ⁻¹`.
    pub below_phi: bool,
    /// `ψ(x) ≤ √x`, i.e. `ψ⁻¹(y) ≥ y²`.
    pub below_sqrt: bool,
    /// `ψ⁻¹(x) ≥ 8x²`.
    pub square_bound: bool,
    pub increasing: bool,
}

pub fn check_psi(psi: &Psi, xs: &[f64]) -> PsiChecks {
    let mut out =
        PsiChecks { below_phi: true, below_sqrt: true, square_bound: true, increasing: true };
    let mut prev = f64::NEG_INFINITY;
    for &x in xs {
        let l = psi.log_psi_inv(x);
        out.below_phi &= l >= psi.profile.log_phi_inv(x);
        out.below_sqrt &= l >= 2.0 * x.ln();
        out.square_bound &= l >= 8f64.ln() + 2.0 * x.ln();
        out.increasing &= l > prev;
        prev = l;
    }
    out
}

type LogStep = Arc<dyn Fn(usize) -> f64 + Send + Sync>;

/// A birth-death chain whose Green's function is proportional to a known
/// shape `g(n)`, with drifts read off consecutive log-ratios of `g`.
#[derive(Clone)]
pub struct ProfileChain {
    label: String,
    chain: Arc<BirthDeathChain>,
    step: LogStep,
}

impl std::fmt::Debug for ProfileChain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProfileChain").field("label", &self.label).finish()
    }
}

/// Tail length used when closing the `D` recursion for profile chains.
const TAIL_WINDOW: usize = 1000;

fn drift_at(step: &dyn Fn(usize) -> f64, n: usize) -> f64 {
    let s_prev = step(n - 1);
    let u0 = (-s_prev).exp_m1();
    let u1 = step(n).exp_m1();
    0.5 * (u0 + u1) / (u0 - u1)
}

impl ProfileChain {
    fn new(label: String, step: LogStep, validate_up_to: usize) -> Result<Self, ConstructError> {
        for n in 1..=validate_up_to {
            if step(n) - step(n - 1) < -1e-12 {
                return Err(ConstructError::NotLogConvex { at: n });
            }
        }
        let s = step.clone();
        let chain = bd_from_drifts(label.clone(), Arc::new(move |n| drift_at(s.as_ref(), n)), validate_up_to)?;
        Ok(Self { label, chain: Arc::new(chain), step })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn chain(&self) -> &BirthDeathChain {
        &self.chain
    }

    pub fn shared_chain(&self) -> Arc<BirthDeathChain> {
        self.chain.clone()
    }

    /// `log g(n+1) - log g(n)`.
    pub fn log_step(&self, n: usize) -> f64 {
        (self.step)(n)
    }

    /// Exact table on `0..=up_to`, closing the recursion with
    /// `D(L) = g(L)/(g(L) - g(L+1))` at `L = up_to + 1000`.
    pub fn greens(&self, up_to: usize) -> Result<GreensTable, ConstructError> {
        let l = up_to + TAIL_WINDOW;
        let d_tail = -1.0 / self.log_step(l).exp_m1();
        Ok(greens_from_tail(&self.chain, up_to, l, d_tail)?)
    }
}

impl GreenValues for ProfileChain {
    fn step_expm1(&self, n: usize) -> f64 {
        self.log_step(n).exp_m1()
    }
}

/// Chain with `G(n) ∝ Φ(n + offset)`.
pub fn greens_profile_chain(
    profile: Profile,
    offset: f64,
    validate_up_to: usize,
) -> Result<ProfileChain, ConstructError> {
    let label = format!("greens_profile({}, offset={offset})", profile.name());
    let step: LogStep = Arc::new(move |n| profile.log_decay_step(n as f64 + offset, 1.0));
    ProfileChain::new(label, step, validate_up_to)
}

/// `log f(x+1) - log f(x)` for `f(x) = exp(-sqrt(log(x+2)))`.
fn log_f_step(x: f64) -> f64 {
    let a = (x + 2.0).ln();
    let b = a + (1.0 / (x + 2.0)).ln_1p();
    -(b - a) / (a.sqrt() + b.sqrt())
}

/// `-(log f)'(x) = 1/(2(x+2) sqrt(log(x+2)))`.
pub fn f_log_derivative(x: f64) -> f64 {
    1.0 / (2.0 * (x + 2.0) * (x + 2.0).ln().sqrt())
}

/// Largest relative gap between a central finite difference of `-log f` and
/// [`f_log_derivative`] over `xs`.
pub fn f_log_derivative_error(xs: &[f64]) -> f64 {
    let log_f = |x: f64| -(x + 2.0).ln().sqrt();
    xs.iter()
        .map(|&x| {
            let h = 1e-4 * (1.0 + x);
            let fd = -(log_f(x + h) - log_f(x - h)) / (2.0 * h);
            (fd / f_log_derivative(x) - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// Smallest shift used by [`sharpness_chain`].
pub const MIN_SHARPNESS_SHIFT: usize = 2;

/// Chain with `G(n) ∝ Φ̃(n) = Φ((n+M)^4) f(n)`, `f(x) = exp(-sqrt(log(x+2)))`.
///
/// `M` defaults to the profile's convexity threshold and is raised to
/// [`MIN_SHARPNESS_SHIFT`]: with `M < 2` the first drift can be negative.
pub fn sharpness_chain(
    profile: Profile,
    m: Option<usize>,
    validate_up_to: usize,
) -> Result<ProfileChain, ConstructError> {
    let m = m.unwrap_or(profile.convex_from()).max(profile.convex_from()).max(MIN_SHARPNESS_SHIFT);
    let label = format!("sharpness({}, M={m})", profile.name());
    let shift = m as f64;
    let step: LogStep = Arc::new(move |n| {
        let x1 = n as f64 + shift;
        let x2 = x1 + 1.0;
        let y1 = x1.powi(4);
        let dy = (x2 - x1) * (x2 + x1) * (x2 * x2 + x1 * x1);
        profile.log_decay_step(y1, dy) + log_f_step(n as f64)
    });
    ProfileChain::new(label, step, validate_up_to)
}

/// A chain resolved from its JSON description.
#[derive(Debug, Clone)]
pub enum BuiltChain {
    Plain(Arc<BirthDeathChain>),
    Profile(ProfileChain),
}

/// Tolerance for certified `D` series of plain chains.
pub const SERIES_TOL: f64 = 1e-13;

impl BuiltChain {
    pub fn chain(&self) -> Arc<BirthDeathChain> {
        match self {
            BuiltChain::Plain(c) => c.clone(),
            BuiltChain::Profile(p) => p.shared_chain(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            BuiltChain::Plain(c) => c.label().to_string(),
            BuiltChain::Profile(p) => p.label().to_string(),
        }
    }

    /// Exact Green's table on `0..=up_to`.
    pub fn greens(&self, up_to: usize) -> Result<GreensTable, ConstructError> {
        match self {
            BuiltChain::Plain(c) => Ok(greens_from_d(c, up_to, SERIES_TOL)?),
            BuiltChain::Profile(p) => p.greens(up_to),
        }
    }
}

pub fn build_chain(spec: &ChainSpec, validate_up_to: usize) -> Result<BuiltChain, ConstructError> {
    Ok(match spec {
        ChainSpec::ConstantDrift { p } => BuiltChain::Plain(Arc::new(BirthDeathChain::constant(*p)?)),
        ChainSpec::Table { values } => {
            BuiltChain::Plain(Arc::new(BirthDeathChain::from_table(values.clone())?))
        }
        ChainSpec::GreensProfile { profile, c, offset } => BuiltChain::Profile(
            greens_profile_chain(profile_by_name(profile, *c)?, *offset, validate_up_to)?,
        ),
        ChainSpec::Sharpness { profile, c, m } => {
            BuiltChain::Profile(sharpness_chain(profile_by_name(profile, *c)?, *m, validate_up_to)?)
        }
    })
}
