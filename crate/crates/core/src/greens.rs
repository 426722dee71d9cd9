//! Green's function, hitting probabilities and the `D` series of a
//! birth-death chain, with the conversions between drifts and Green's
//! functions in both directions.
//!
//! Throughout, `G(n)` is the expected number of visits to `0` started from
//! `n`, `H(n) = G(n)/G(0)` is the probability of ever hitting `0` from `n`, and
//!
//! ```text
//! D(m) = 1 + sum_{j>=1} prod_{i=1..j} (1/E_{m+i} - 1).
//! ```

use std::collections::VecDeque;
use std::io::{self, Write};

use thiserror::Error;

use crate::chains::{BirthDeathChain, ChainError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GreensError {
    #[error("D({m}) diverges: series terms do not decay")]
    SeriesDiverges { m: usize },
    #[error("D({m}): no contracting tail bound within {terms} terms")]
    NoTailBound { m: usize, terms: usize },
    #[error("Green's function is not strictly decreasing at n = {n}")]
    NotDecreasing { n: usize },
    #[error("Green's function is not convex at n = {n}")]
    NotConvex { n: usize },
    #[error("index {index} outside table range 0..={max}")]
    OutOfRange { index: usize, max: usize },
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Terms after which a series whose terms have not dropped below 1 is
/// declared divergent.
const DIVERGENCE_PROBE: usize = 4096;
/// Hard cap on the number of series terms.
const MAX_TERMS: usize = 10_000_000;
/// Number of recent term ratios used for the tail bound.
const RATIO_WINDOW: usize = 32;

/// Evaluates `D(m)`, stopping once the geometric tail bound `t_j/(1-r)` is
/// below `tol * D`, where `r` is the largest of the last few term ratios.
///
/// Terms are accumulated as sums of logarithms so very long products neither
/// underflow nor overflow.
pub fn d_series(chain: &BirthDeathChain, m: usize, tol: f64) -> Result<f64, GreensError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let mut log_t = 0.0_f64;
    let mut sum = 1.0_f64;
    let mut ratios: VecDeque<f64> = VecDeque::with_capacity(RATIO_WINDOW);
    for j in 1..=MAX_TERMS {
        let q = chain.odds(m + j)?;
        log_t += q.ln();
        let t = log_t.exp();
        sum += t;
        if ratios.len() == RATIO_WINDOW {
            ratios.pop_front();
        }
        ratios.push_back(q);
        if j >= DIVERGENCE_PROBE && log_t >= 0.0 {
            return Err(GreensError::SeriesDiverges { m });
        }
        if ratios.len() == RATIO_WINDOW || t == 0.0 {
            let r = ratios.iter().copied().fold(0.0, f64::max);
            if t == 0.0 || (r < 1.0 && t / (1.0 - r) < tol * sum) {
                return Ok(sum);
            }
        }
    }
    Err(GreensError::NoTailBound { m, terms: MAX_TERMS })
}

/// Exact tables for a transient birth-death chain on `0..=up_to`.
#[derive(Debug, Clone)]
pub struct GreensTable {
    log_h: Vec<f64>,
    d: Vec<f64>,
    up: Vec<f64>,
    g0: f64,
}

/// Builds the table from a certified `D(up_to)` and the backward recursion
/// `D(m-1) = 1 + (1/E_m - 1) D(m)`.
pub fn greens_from_d(
    chain: &BirthDeathChain,
    up_to: usize,
    tol: f64,
) -> Result<GreensTable, GreensError> {
    let d_top = d_series(chain, up_to, tol)?;
    greens_from_tail(chain, up_to, up_to, d_top)
}

/// Builds the table on `0..=up_to` from a known value `D(tail_index)` with
/// `tail_index >= up_to`, running the backward recursion down to `0`.
pub fn greens_from_tail(
    chain: &BirthDeathChain,
    up_to: usize,
    tail_index: usize,
    d_tail: f64,
) -> Result<GreensTable, GreensError> {
    assert!(tail_index >= up_to, "tail index below table range");
    let mut d = d_tail;
    for m in (up_to + 1..=tail_index).rev() {
        d = 1.0 + chain.odds(m)? * d;
    }
    let mut ds = vec![0.0; up_to + 1];
    ds[up_to] = d;
    for m in (1..=up_to).rev() {
        ds[m - 1] = 1.0 + chain.odds(m)? * ds[m];
    }
    let mut log_h = Vec::with_capacity(up_to + 1);
    log_h.push(0.0);
    for n in 1..=up_to {
        let prev = log_h[n - 1];
        log_h.push(prev + (-1.0 / ds[n - 1]).ln_1p());
    }
    let mut up = Vec::with_capacity(up_to + 1);
    chain.fill_up_probs(&mut up, up_to + 1)?;
    Ok(GreensTable { log_h, g0: ds[0], d: ds, up })
}

impl GreensTable {
    /// Largest tabulated index.
    pub fn max_index(&self) -> usize {
        self.d.len() - 1
    }

    fn check(&self, n: usize) -> Result<(), GreensError> {
        if n < self.d.len() {
            Ok(())
        } else {
            Err(GreensError::OutOfRange { index: n, max: self.max_index() })
        }
    }

    /// `G(0,0)`.
    pub fn g0(&self) -> f64 {
        self.g0
    }

    pub fn log_h(&self, n: usize) -> f64 {
        self.log_h[n]
    }

    pub fn h(&self, n: usize) -> f64 {
        self.log_h[n].exp()
    }

    pub fn log_g(&self, n: usize) -> f64 {
        self.g0.ln() + self.log_h[n]
    }

    pub fn g(&self, n: usize) -> f64 {
        self.log_g(n).exp()
    }

    pub fn d(&self, m: usize) -> f64 {
        self.d[m]
    }

    /// Up-probability `E_n`.
    pub fn up(&self, n: usize) -> f64 {
        self.up[n]
    }

    /// `H(to)/H(from)`: for `to > from`, the probability of ever reaching
    /// `from` when started at `to`.
    pub fn hitting_ratio(&self, from: usize, to: usize) -> f64 {
        (self.log_h[to] - self.log_h[from]).exp()
    }

    /// Single-level hitting probability `H(n, n-1) = 1 - 1/D(n-1)`.
    pub fn step_hit(&self, n: usize) -> f64 {
        1.0 - 1.0 / self.d[n - 1]
    }

    /// Mean `D(m)/E_m` of the total number of visits to `m` from `m`.
    pub fn escape_mean(&self, m: usize) -> Result<f64, GreensError> {
        self.check(m)?;
        Ok(self.d[m] / self.up[m])
    }

    /// Writes `n,G,H,D,p` rows; `p` at `n = 0` is `E_0 - 1/2 = 1/2`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "n,G,H,D,p")?;
        for n in 0..self.d.len() {
            writeln!(
                w,
                "{n},{:e},{:e},{:e},{:e}",
                self.g(n),
                self.h(n),
                self.d[n],
                self.up[n] - 0.5
            )?;
        }
        Ok(())
    }
}

/// Access to consecutive ratios of a Green's function.
pub trait GreenValues {
    /// `G(n+1)/G(n) - 1`, which lies in `(-1, 0)` when `G` is positive and
    /// strictly decreasing.
    fn step_expm1(&self, n: usize) -> f64;
}

impl GreenValues for GreensTable {
    fn step_expm1(&self, n: usize) -> f64 {
        -1.0 / self.d[n]
    }
}

impl GreenValues for [f64] {
    fn step_expm1(&self, n: usize) -> f64 {
        (self[n + 1] - self[n]) / self[n]
    }
}

impl GreenValues for Vec<f64> {
    fn step_expm1(&self, n: usize) -> f64 {
        self.as_slice().step_expm1(n)
    }
}

/// Recovers `p_1..=p_up_to` from a Green's function through
///
/// ```text
/// p_n = (1/2) (G(n-1) + G(n+1) - 2G(n)) / (G(n-1) - G(n+1)),
/// ```
///
/// evaluated as `(u0 + u1) / (2 (u0 - u1))` with `u0 = G(n-1)/G(n) - 1` and
/// `u1 = G(n+1)/G(n) - 1` to avoid cancellation.
pub fn drift_from_greens<G: GreenValues + ?Sized>(
    g: &G,
    up_to: usize,
) -> Result<Vec<f64>, GreensError> {
    let mut out = Vec::with_capacity(up_to);
    for n in 1..=up_to {
        let s_prev = g.step_expm1(n - 1);
        let u1 = g.step_expm1(n);
        if !(s_prev < 0.0 && s_prev > -1.0) {
            return Err(GreensError::NotDecreasing { n: n - 1 });
        }
        if !(u1 < 0.0 && u1 > -1.0) {
            return Err(GreensError::NotDecreasing { n });
        }
        let u0 = -s_prev / (1.0 + s_prev);
        let mut p = 0.5 * (u0 + u1) / (u0 - u1);
        if p < 0.0 {
            if p > -1e-12 {
                p = 0.0;
            } else {
                return Err(GreensError::NotConvex { n });
            }
        }
        out.push(p);
    }
    Ok(out)
}
