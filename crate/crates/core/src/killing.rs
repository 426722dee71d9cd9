//! Walks with spatially dependent killing: the killing profile
//! `K(x) = c(x) min{1, ⟨x⟩^{-2} (log⟨x⟩)^γ}`, Varopoulos–Carne bounds, exact
//! transition probabilities on finite windows, the ratio lemma, decay
//! classification and the log-ratio trend between `p_n(X_n, X_0)` and
//! `G(X_n, X_0)`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chains::{truncate_kernel, ChainError, KernelSource, KilledNetwork, TruncatedKernel};
use crate::greens::GreensTable;
use crate::rng;
use crate::simulate::{parallel_seeds, run_bd, SimError};
use crate::chains::BirthDeathChain;
use crate::stats::mean_se;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KillingError {
    #[error("vertices {x} and {y} are not connected")]
    DisconnectedPair { x: usize, y: usize },
    #[error("window leaks {leak:e} of the mass, tolerance {tol:e}")]
    WindowTooSmall { leak: f64, tol: f64 },
    #[error("state {0} is not in the window")]
    NotInWindow(usize),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// `K(x) = c(x) min{1, ⟨x⟩^{-2} (log⟨x⟩)^γ}` with `⟨x⟩ = 2 ∨ d(o, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KillingProfile {
    pub gamma: f64,
    pub origin: usize,
}

impl KillingProfile {
    pub fn bracket(distance: usize) -> f64 {
        (distance as f64).max(2.0)
    }

    /// `K(x)/c(x)` at graph distance `distance` from the origin.
    pub fn fraction(&self, distance: usize) -> f64 {
        let b = Self::bracket(distance);
        (b.ln().powf(self.gamma) / (b * b)).min(1.0)
    }
}

/// How a stock network is killed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Killing {
    None,
    /// Constant per-step killing probability `κ`, i.e. `K = c κ/(1-κ)`.
    ConstantKappa { kappa: f64 },
    Profile { gamma: f64 },
}

/// Killing values for every vertex of `net`.
pub fn killing_vector(net: &KilledNetwork, killing: Killing, origin: usize) -> Result<Vec<f64>, KillingError> {
    let n = net.len();
    Ok(match killing {
        Killing::None => vec![0.0; n],
        Killing::ConstantKappa { kappa } => (0..n)
            .map(|u| net.conductance(u).map(|c| c * kappa / (1.0 - kappa)))
            .collect::<Result<_, _>>()?,
        Killing::Profile { gamma } => {
            let profile = KillingProfile { gamma, origin };
            let dist = net.distances_from(origin)?;
            (0..n)
                .map(|u| {
                    let c = net.conductance(u)?;
                    Ok(match dist[u] {
                        Some(d) => c * profile.fraction(d),
                        None => 0.0,
                    })
                })
                .collect::<Result<_, ChainError>>()?
        }
    })
}

/// The shipped networks, all with unit conductances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StockNetwork {
    /// Path `0 - 1 - ... - (len-1)`, origin `0`.
    HalfLine { len: usize },
    /// Complete binary tree of the given depth, origin at the root.
    BinaryTree { depth: u32 },
    /// `width × height` grid patch, origin at the centre.
    Grid { width: usize, height: usize },
}

impl StockNetwork {
    pub fn name(&self) -> String {
        match self {
            StockNetwork::HalfLine { len } => format!("half_line({len})"),
            StockNetwork::BinaryTree { depth } => format!("binary_tree({depth})"),
            StockNetwork::Grid { width, height } => format!("grid({width}x{height})"),
        }
    }

    pub fn origin(&self) -> usize {
        match *self {
            StockNetwork::HalfLine { .. } | StockNetwork::BinaryTree { .. } => 0,
            StockNetwork::Grid { width, height } => (height / 2) * width + width / 2,
        }
    }

    pub fn build(&self, killing: Killing) -> Result<KilledNetwork, KillingError> {
        self.build_at(killing, self.origin())
    }

    /// Builds the network with the killing profile centred at `origin`.
    pub fn build_at(&self, killing: Killing, origin: usize) -> Result<KilledNetwork, KillingError> {
        let (n, edges): (usize, Vec<(usize, usize, f64)>) = match *self {
            StockNetwork::HalfLine { len } => (len, (1..len).map(|i| (i - 1, i, 1.0)).collect()),
            StockNetwork::BinaryTree { depth } => {
                let n = (1usize << (depth + 1)) - 1;
                (n, (1..n).map(|i| ((i - 1) / 2, i, 1.0)).collect())
            }
            StockNetwork::Grid { width, height } => {
                let mut e = Vec::new();
                for r in 0..height {
                    for c in 0..width {
                        let u = r * width + c;
                        if c + 1 < width {
                            e.push((u, u + 1, 1.0));
                        }
                        if r + 1 < height {
                            e.push((u, u + width, 1.0));
                        }
                    }
                }
                (width * height, e)
            }
        };
        let net = KilledNetwork::new(n, &edges)?;
        let k = killing_vector(&net, killing, origin)?;
        Ok(net.with_killing(k)?)
    }
}

/// `sqrt((c(y)+K(y))/(c(x)+K(x))) exp(-d²/(2n))` for a known distance `d`.
pub fn vc_bound_at_distance(net: &KilledNetwork, x: usize, y: usize, d: usize, n: usize) -> Result<f64, KillingError> {
    assert!(n >= 1, "the bound is stated for n >= 1");
    let mx = net.conductance(x)? + net.killing(x)?;
    let my = net.conductance(y)? + net.killing(y)?;
    let d = d as f64;
    Ok((my / mx).sqrt() * (-d * d / (2.0 * n as f64)).exp())
}

/// Varopoulos–Carne bound with the spectral-radius factor set to 1.
pub fn vc_bound(net: &KilledNetwork, x: usize, y: usize, n: usize) -> Result<f64, KillingError> {
    let dist = net.distances_from(x)?;
    let d = dist[y].ok_or(KillingError::DisconnectedPair { x, y })?;
    vc_bound_at_distance(net, x, y, d, n)
}

fn position(kernel: &TruncatedKernel, label: usize) -> Result<usize, KillingError> {
    kernel.position(label).ok_or(KillingError::NotInWindow(label))
}

/// Distribution of a killed walk on a window, advanced one step at a time.
#[derive(Debug, Clone)]
pub struct ForwardIter<'a> {
    kernel: &'a TruncatedKernel,
    pub dist: Vec<f64>,
    /// Cumulative mass that has left the window.
    pub leaked: f64,
    /// Cumulative mass sent to the graveyard.
    pub killed: f64,
    pub n: usize,
}

impl<'a> ForwardIter<'a> {
    pub fn new(kernel: &'a TruncatedKernel, start: usize) -> Result<Self, KillingError> {
        let mut dist = vec![0.0; kernel.len()];
        dist[position(kernel, start)?] = 1.0;
        Ok(Self { kernel, dist, leaked: 0.0, killed: 0.0, n: 0 })
    }

    pub fn step(&mut self) {
        let mut next = vec![0.0; self.dist.len()];
        for (i, &w) in self.dist.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for &(j, p) in self.kernel.row(i) {
                next[j] += w * p;
            }
            self.leaked += w * self.kernel.leak(i);
            self.killed += w * self.kernel.kill(i);
        }
        self.dist = next;
        self.n += 1;
    }

    /// Mass still alive inside the window.
    pub fn alive(&self) -> f64 {
        self.dist.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactPn {
    /// `p_n(x, y)` for `n = 0..=n_max`, computed inside the window.
    pub p: Vec<f64>,
    /// Cumulative leaked mass by time `n`; the true `p_n` lies in
    /// `[p[n], p[n] + leak[n]]`.
    pub leak: Vec<f64>,
}

/// `p_n(x, y)` by row-vector iteration. Fails if more than `leak_tol` of the
/// mass has left the window by `n_max`.
pub fn exact_pn(
    kernel: &TruncatedKernel,
    x: usize,
    y: usize,
    n_max: usize,
    leak_tol: f64,
) -> Result<ExactPn, KillingError> {
    let target = position(kernel, y)?;
    let mut it = ForwardIter::new(kernel, x)?;
    let mut p = vec![it.dist[target]];
    let mut leak = vec![0.0];
    for _ in 0..n_max {
        it.step();
        p.push(it.dist[target]);
        leak.push(it.leaked);
    }
    if it.leaked > leak_tol {
        return Err(KillingError::WindowTooSmall { leak: it.leaked, tol: leak_tol });
    }
    Ok(ExactPn { p, leak })
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Backward iteration `v_{n+1} = P v_n` for `v_n(i) = log p_n(i, target)`,
/// calling `visit(n, v_n)` for `n = 0..=n_max`. Paths leaving the window are
/// dropped, so values are lower bounds that are exact when no path of length
/// `n_max` from the relevant sources can leave.
pub fn log_pn_to_target<F: FnMut(usize, &[f64])>(
    kernel: &TruncatedKernel,
    target: usize,
    n_max: usize,
    mut visit: F,
) -> Result<(), KillingError> {
    let t = position(kernel, target)?;
    let mut v = vec![f64::NEG_INFINITY; kernel.len()];
    v[t] = 0.0;
    let log_rows: Vec<Vec<(usize, f64)>> = (0..kernel.len())
        .map(|i| kernel.row(i).iter().map(|&(j, p)| (j, p.ln())).collect())
        .collect();
    visit(0, &v);
    let mut next = vec![f64::NEG_INFINITY; kernel.len()];
    for n in 1..=n_max {
        for (i, row) in log_rows.iter().enumerate() {
            let mut acc = f64::NEG_INFINITY;
            for &(j, lp) in row {
                acc = log_sum_exp(acc, lp + v[j]);
            }
            next[i] = acc;
        }
        std::mem::swap(&mut v, &mut next);
        visit(n, &v);
    }
    Ok(())
}

/// One `(n, x, y)` comparison of an exact transition probability against the
/// Varopoulos–Carne bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VcRow {
    pub n: usize,
    pub x: usize,
    pub y: usize,
    pub p_n: f64,
    pub vc_bound: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VcAudit {
    pub network: String,
    pub triples: usize,
    /// Triples with `p_n + leak > bound`.
    pub violations: usize,
    /// Violations of the bound with an extra factor 2.
    pub violations_doubled: usize,
    /// Largest `(p_n + leak)/bound`.
    pub max_ratio: f64,
    #[serde(skip)]
    pub rows: Vec<VcRow>,
}

/// Compares `p_n(x, y)` with [`vc_bound`] for all `x` in `sources`, all
/// `y` in the window with `p_n(x, y) > 0`, and `1 <= n <= n_max`.
pub fn vc_audit(
    net: &KilledNetwork,
    name: &str,
    kernel: &TruncatedKernel,
    sources: &[usize],
    n_max: usize,
) -> Result<VcAudit, KillingError> {
    let mut out = VcAudit {
        network: name.to_string(),
        triples: 0,
        violations: 0,
        violations_doubled: 0,
        max_ratio: 0.0,
        rows: Vec::new(),
    };
    for &x in sources {
        let dist = net.distances_from(x)?;
        let mut it = ForwardIter::new(kernel, x)?;
        for n in 1..=n_max {
            it.step();
            for (j, &p) in it.dist.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let y = kernel.label(j);
                let d = dist[y].ok_or(KillingError::DisconnectedPair { x, y })?;
                let bound = vc_bound_at_distance(net, x, y, d, n)?;
                let upper = p + it.leaked;
                let violation = upper > bound;
                out.triples += 1;
                out.violations += usize::from(violation);
                out.violations_doubled += usize::from(upper > 2.0 * bound);
                out.max_ratio = out.max_ratio.max(upper / bound);
                out.rows.push(VcRow { n, x, y, p_n: p, vc_bound: bound, violation });
            }
        }
    }
    Ok(out)
}

pub fn write_vc_rows<W: Write>(mut w: W, rows: &[VcRow]) -> io::Result<()> {
    writeln!(w, "n,x,y,p_n,vc_bound,violation")?;
    for r in rows {
        writeln!(w, "{},{},{},{:e},{:e},{}", r.n, r.x, r.y, r.p_n, r.vc_bound, r.violation)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioLemma {
    pub n: usize,
    pub m: usize,
    pub walks: u64,
    /// Monte Carlo estimate of `E[p_m(X_n,X_0)/p_n(X_n,X_0)]`.
    pub estimate: f64,
    pub sigma: f64,
    /// The same expectation by exact summation over the window.
    pub exact: f64,
    /// `P(X_m ≠ †) + P(X_n = †)`.
    pub sharper_bound: f64,
    /// `estimate <= 2 + 3σ`.
    pub pass: bool,
    /// `estimate <= 1 + 3σ`, the bound for walks without killing.
    pub within_one: bool,
}

/// Estimates `E[p_m(X_n,X_0)/p_n(X_n,X_0)]` for the killed walk from `x`
/// (ratio 1 when `X_n = †`). Mass leaving the window counts as killed.
pub fn ratio_lemma_check(
    kernel: &TruncatedKernel,
    x: usize,
    n: usize,
    m: usize,
    walks: u64,
    master_seed: u64,
    workers: usize,
) -> Result<RatioLemma, KillingError> {
    let src = position(kernel, x)?;
    let horizon = n.max(m);
    let mut back_n = Vec::new();
    let mut back_m = Vec::new();
    log_pn_to_target(kernel, x, horizon, |k, v| {
        if k == n {
            back_n = v.iter().map(|l| l.exp()).collect();
        }
        if k == m {
            back_m = v.iter().map(|l| l.exp()).collect();
        }
    })?;
    let mut fw = ForwardIter::new(kernel, x)?;
    let mut fw_n = fw.dist.clone();
    let mut alive_m = 1.0;
    for k in 1..=horizon {
        fw.step();
        if k == n {
            fw_n = fw.dist.clone();
        }
        if k == m {
            alive_m = fw.alive();
        }
    }
    if n == 0 {
        fw_n = ForwardIter::new(kernel, x)?.dist;
    }
    let dead_n = 1.0 - fw_n.iter().sum::<f64>();
    let mut exact = dead_n;
    for (y, &w) in fw_n.iter().enumerate() {
        if w > 0.0 && back_n[y] > 0.0 {
            exact += w * back_m[y] / back_n[y];
        }
    }

    let samples = parallel_seeds(walks, workers, |seed| {
        let mut rng = rng::stream(master_seed, seed);
        let mut i = src;
        for _ in 0..n {
            let u = rng::uniform(&mut rng);
            let dead = kernel.kill(i) + kernel.leak(i);
            if u < dead {
                return 1.0;
            }
            let mut acc = dead;
            let row = kernel.row(i);
            let mut next = row.last().map(|r| r.0).unwrap_or(i);
            for &(j, p) in row {
                acc += p;
                if u < acc {
                    next = j;
                    break;
                }
            }
            i = next;
        }
        back_m[i] / back_n[i]
    });
    let (estimate, sigma) = mean_se(&samples);
    Ok(RatioLemma {
        n,
        m,
        walks,
        estimate,
        sigma,
        exact,
        sharper_bound: alive_m + dead_n,
        pass: estimate <= 2.0 + 3.0 * sigma,
        within_one: estimate <= 1.0 + 3.0 * sigma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpdReport {
    pub n: Vec<usize>,
    /// `log sup_x p_n(x, o)` over the window.
    pub log_sup: Vec<f64>,
    /// Slopes of `log sup p_n` against `log n` between grid points.
    pub local_slopes: Vec<f64>,
    /// Advisory: the decay steepens along the grid, beyond any fixed power.
    pub spd_like: bool,
}

/// Last local slope must exceed the first by this factor (in magnitude) for
/// the decay to count as superpolynomial.
pub const SPD_STEEPENING: f64 = 1.2;

fn sup_log_pn(kernel: &TruncatedKernel, o: usize, n_grid: &[usize]) -> Result<Vec<(usize, f64)>, KillingError> {
    let n_max = *n_grid.iter().max().unwrap_or(&0);
    let mut out = Vec::new();
    log_pn_to_target(kernel, o, n_max, |n, v| {
        if n_grid.contains(&n) {
            let s = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if s > f64::NEG_INFINITY {
                out.push((n, s));
            }
        }
    })?;
    Ok(out)
}

/// Trend of `log sup_x p_n(x, o)` in `log n`.
pub fn spd_classify(kernel: &TruncatedKernel, o: usize, n_grid: &[usize]) -> Result<SpdReport, KillingError> {
    let pts = sup_log_pn(kernel, o, n_grid)?;
    let local_slopes: Vec<f64> = pts
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) / ((w[1].0 as f64).ln() - (w[0].0 as f64).ln()))
        .collect();
    let spd_like = match (local_slopes.first(), local_slopes.last()) {
        (Some(&a), Some(&b)) if local_slopes.len() >= 2 => b < SPD_STEEPENING * a.min(-1e-3),
        _ => false,
    };
    Ok(SpdReport {
        n: pts.iter().map(|p| p.0).collect(),
        log_sup: pts.iter().map(|p| p.1).collect(),
        local_slopes,
        spd_like,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombBound {
    pub gamma: f64,
    /// Least-squares `c` in `log sup p_n - log sqrt(8c(o)/c_min) ≈ -c (log n)^{γ/2}`.
    pub c_fit: f64,
    /// Largest `c` for which the bound dominates every grid point.
    pub c_star: f64,
    pub points: usize,
    pub pass: bool,
}

/// Checks `p_n(x, o) <= sqrt(8c(o)/c_min) exp(-c (log n)^{γ/2})` on the grid
/// for some `c > 0`.
pub fn combbound_check(
    kernel: &TruncatedKernel,
    net: &KilledNetwork,
    o: usize,
    gamma: f64,
    n_grid: &[usize],
) -> Result<CombBound, KillingError> {
    let pts = sup_log_pn(kernel, o, n_grid)?;
    let log_pref = 0.5 * (8.0 * net.conductance(o)? / net.c_min()).ln();
    let mut sy = 0.0;
    let mut ss = 0.0;
    let mut c_star = f64::INFINITY;
    let mut points = 0;
    for &(n, l) in &pts {
        if n < 2 {
            continue;
        }
        let s = (n as f64).ln().powf(gamma / 2.0);
        let y = l - log_pref;
        sy += y * s;
        ss += s * s;
        c_star = c_star.min(-y / s);
        points += 1;
    }
    let c_fit = if ss > 0.0 { -sy / ss } else { f64::NAN };
    Ok(CombBound { gamma, c_fit, c_star, points, pass: points > 0 && c_star > 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurvivalStats {
    pub log_survival: f64,
    pub survival: f64,
    /// `min_{n0 <= n <= T} d(o, X_n) / (n^{1/2} (log n)^r)`.
    pub superdiff_stat: f64,
}

/// Survival probability `prod (1 - κ(X_i))` of a path and its
/// superdiffusivity statistic.
pub fn survival_and_superdiffusivity<K: Fn(usize) -> f64, D: Fn(usize) -> f64>(
    states: &[u32],
    kappa: K,
    distance: D,
    r: f64,
    n0: usize,
) -> SurvivalStats {
    let t = states.len().saturating_sub(1);
    let log_survival: f64 = states[..t].iter().map(|&x| (-kappa(x as usize)).ln_1p()).sum();
    let superdiff_stat = (n0.max(2)..=t)
        .map(|n| distance(states[n] as usize) / ((n as f64).sqrt() * (n as f64).ln().powf(r)))
        .fold(f64::INFINITY, f64::min);
    SurvivalStats { log_survival, survival: log_survival.exp(), superdiff_stat }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendReport {
    pub seeds: u64,
    pub n_lo: usize,
    pub n_hi: usize,
    pub band: (f64, f64),
    /// Seeds whose ratio stays inside the band for every `n` in range.
    pub seeds_in_band: u64,
    pub fraction: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

/// For each seed, checks `log p_n(X_n, X_0) / log G(X_n, X_0)` against
/// `band` at every `n` in `[n_lo, n_hi]` on a birth-death chain started at 0.
#[allow(clippy::too_many_arguments)]
pub fn log_ratio_trend(
    chain: &BirthDeathChain,
    table: &GreensTable,
    seeds: u64,
    n_lo: usize,
    n_hi: usize,
    band: (f64, f64),
    master_seed: u64,
    workers: usize,
) -> Result<TrendReport, KillingError> {
    let paths: Vec<Vec<u32>> = parallel_seeds(seeds, workers, |s| run_bd(chain, n_hi, master_seed, s))
        .into_iter()
        .map(|r| r.map(|t| t.states))
        .collect::<Result<_, _>>()?;
    let window: Vec<usize> = (0..=n_hi + 1).collect();
    let kernel = truncate_kernel(KernelSource::BirthDeath(chain), &window)?;
    let mut ok = vec![true; seeds as usize];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut table_err = None;
    log_pn_to_target(&kernel, 0, n_hi, |n, v| {
        if n < n_lo {
            return;
        }
        for (s, path) in paths.iter().enumerate() {
            let x = path[n] as usize;
            if x > table.max_index() {
                table_err = Some(x);
                continue;
            }
            let ratio = v[x] / table.log_g(x);
            lo = lo.min(ratio);
            hi = hi.max(ratio);
            if !(ratio >= band.0 && ratio <= band.1) {
                ok[s] = false;
            }
        }
    })?;
    if let Some(level) = table_err {
        return Err(SimError::TableMismatch { level, table_max: table.max_index() }.into());
    }
    let seeds_in_band = ok.iter().filter(|&&b| b).count() as u64;
    Ok(TrendReport {
        seeds,
        n_lo,
        n_hi,
        band,
        seeds_in_band,
        fraction: seeds_in_band as f64 / seeds as f64,
        min_ratio: lo,
        max_ratio: hi,
    })
}
