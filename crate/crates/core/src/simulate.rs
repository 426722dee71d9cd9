//! Seeded trajectories, the killing coupling, cut-time detection and visit
//! statistics.

use std::io::{self, Read, Write};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::chains::{BirthDeathChain, ChainError, KilledNetwork};
use crate::greens::GreensTable;
use crate::rng::{self, StreamRng};
use crate::stats::{geometric_cdf, ks_discrete, KsResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("killing probability {value} at state {state} outside [0, 1)")]
    KappaOutOfRange { state: usize, value: f64 },
    #[error("trajectory reaches level {level}, table covers 0..={table_max}")]
    TableMismatch { level: usize, table_max: usize },
    #[error("{got} samples, at least {need} required")]
    InsufficientSamples { got: usize, need: usize },
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// A sampled path `X_0, ..., X_T`, cut at the killing time if there is one.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<u32>,
    pub seed: u64,
    pub horizon: usize,
    /// `τ†`, or `None` if the walk survives the horizon.
    pub kill_time: Option<usize>,
    /// `P(τ† > T | X) = prod_{i<T} (1 - κ(X_i))` along the unkilled path.
    pub survival: f64,
}

impl Trajectory {
    pub fn running_max(&self) -> Vec<u32> {
        self.states
            .iter()
            .scan(0u32, |m, &x| {
                *m = (*m).max(x);
                Some(*m)
            })
            .collect()
    }

    pub fn max_state(&self) -> u32 {
        self.states.iter().copied().max().unwrap_or(0)
    }

    /// `log Z_n = log H(X_n)`.
    pub fn log_z(&self, table: &GreensTable) -> Result<Vec<f64>, SimError> {
        check_table(self, table)?;
        Ok(self.states.iter().map(|&x| table.log_h(x as usize)).collect())
    }
}

fn check_table(traj: &Trajectory, table: &GreensTable) -> Result<(), SimError> {
    let level = traj.max_state() as usize;
    if level > table.max_index() {
        return Err(SimError::TableMismatch { level, table_max: table.max_index() });
    }
    Ok(())
}

/// Runs a birth-death chain from `0` for `horizon` steps on stream
/// `(master_seed, seed)`.
pub fn run_bd(
    chain: &BirthDeathChain,
    horizon: usize,
    master_seed: u64,
    seed: u64,
) -> Result<Trajectory, SimError> {
    let mut rng = rng::stream(master_seed, seed);
    let mut up = Vec::new();
    chain.fill_up_probs(&mut up, 64)?;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut x = 0usize;
    states.push(0);
    for _ in 0..horizon {
        if x + 1 >= up.len() {
            let len = 2 * up.len();
            chain.fill_up_probs(&mut up, len)?;
        }
        x = if rng::uniform(&mut rng) < up[x] { x + 1 } else { x - 1 };
        states.push(x as u32);
    }
    Ok(Trajectory { states, seed, horizon, kill_time: None, survival: 1.0 })
}

/// A nearest-neighbour walk that can be driven by uniform draws.
pub trait Walk: Sync {
    /// Next state from `x` given a uniform `u`.
    fn step(&self, x: usize, u: f64, scratch: &mut Vec<f64>) -> Result<usize, SimError>;
}

impl Walk for BirthDeathChain {
    fn step(&self, x: usize, u: f64, _: &mut Vec<f64>) -> Result<usize, SimError> {
        Ok(if u < self.up_prob(x)? { x + 1 } else { x - 1 })
    }
}

/// The network walk without killing: `P(u, v) = c(u,v)/c(u)`.
impl Walk for KilledNetwork {
    fn step(&self, x: usize, u: f64, _: &mut Vec<f64>) -> Result<usize, SimError> {
        let target = u * self.conductance(x)?;
        let mut acc = 0.0;
        let nbrs = self.neighbors(x);
        for &(v, c) in nbrs {
            acc += c;
            if target < acc {
                return Ok(v);
            }
        }
        Ok(nbrs.last().expect("vertices have neighbours").0)
    }
}

/// Samples the unkilled path first, then `τ†` from
/// `P(τ† = n | X) = κ(X_{n-1}) prod_{i<n-1} (1 - κ(X_i))`
/// via one extra uniform `U`: `τ† = min{n : S_n < U}` with
/// `S_n = prod_{i<n} (1 - κ(X_i))`.
pub fn run_killed<W: Walk + ?Sized, K: Fn(usize) -> f64>(
    walk: &W,
    kappa: K,
    start: usize,
    horizon: usize,
    master_seed: u64,
    seed: u64,
) -> Result<Trajectory, SimError> {
    let mut rng = rng::stream(master_seed, seed);
    let mut scratch = Vec::new();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut x = start;
    states.push(x as u32);
    for _ in 0..horizon {
        x = walk.step(x, rng::uniform(&mut rng), &mut scratch)?;
        states.push(x as u32);
    }
    let u = rng::uniform(&mut rng);
    let mut survival = 1.0;
    let mut kill_time = None;
    for (i, &s) in states[..horizon].iter().enumerate() {
        let k = kappa(s as usize);
        if !(0.0..1.0).contains(&k) {
            return Err(SimError::KappaOutOfRange { state: s as usize, value: k });
        }
        survival *= 1.0 - k;
        if kill_time.is_none() && survival < u {
            kill_time = Some(i + 1);
        }
    }
    if let Some(t) = kill_time {
        states.truncate(t);
    }
    Ok(Trajectory { states, seed, horizon, kill_time, survival })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertifiedCut {
    pub time: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutTimeReport {
    pub certified: Vec<CertifiedCut>,
    /// Finite-horizon cut times left undecided.
    pub candidates: Vec<usize>,
    pub total_error: f64,
    pub density: f64,
}

impl CutTimeReport {
    pub fn certified_times(&self) -> Vec<usize> {
        self.certified.iter().map(|c| c.time).collect()
    }
}

/// Times `n < T` with `{X_i : i <= n}` and `{X_i : n < i <= T}` disjoint.
pub fn finite_horizon_cuts(states: &[u32]) -> Vec<usize> {
    if states.len() < 2 {
        return Vec::new();
    }
    let t = states.len() - 1;
    let mut last = std::collections::HashMap::new();
    for (i, &s) in states.iter().enumerate() {
        last.insert(s, i);
    }
    let mut reach = 0;
    let mut out = Vec::new();
    for (n, s) in states[..t].iter().enumerate() {
        reach = reach.max(last[s]);
        if reach == n {
            out.push(n);
        }
    }
    out
}

/// Cut times of a birth-death path, certified against the unseen future.
///
/// A finite-horizon cut `n` (for birth-death paths: `X_n` is the running
/// maximum and every later state lies above it) survives the continuation
/// past `T` unless the walk returns to `X_n`, which has probability
/// `H(X_T)/H(X_n)`. Times are taken earliest first and certified while the
/// running sum of these residuals stays within `eps`; the rest are
/// candidates.
pub fn detect_cut_times_bd(
    traj: &Trajectory,
    table: &GreensTable,
    eps: f64,
) -> Result<CutTimeReport, SimError> {
    check_table(traj, table)?;
    let xs = &traj.states;
    let t = xs.len() - 1;
    let mut future_min = vec![u32::MAX; xs.len()];
    for n in (0..t).rev() {
        future_min[n] = future_min[n + 1].min(xs[n + 1]);
    }
    let end = xs[t] as usize;
    let mut run_max = 0;
    let mut spent = 0.0;
    let mut certified = Vec::new();
    let mut candidates = Vec::new();
    for n in 0..t {
        run_max = run_max.max(xs[n]);
        if xs[n] != run_max || future_min[n] <= xs[n] {
            continue;
        }
        let residual = table.hitting_ratio(xs[n] as usize, end);
        if spent + residual <= eps {
            spent += residual;
            certified.push(CertifiedCut { time: n, residual });
        } else {
            candidates.push(n);
        }
    }
    let density = certified.len() as f64 / t.max(1) as f64;
    Ok(CutTimeReport { certified, candidates, total_error: spent, density })
}

/// Default tail window `⌊√T⌋` excluded from generic densities.
pub fn default_tail_window(horizon: usize) -> usize {
    (horizon as f64).sqrt().floor() as usize
}

/// Finite-horizon cut times of an arbitrary path, all reported as
/// candidates. The density counts candidates in `[0, T - w)` over `T - w`.
pub fn detect_cut_times_generic(traj: &Trajectory, tail_window: Option<usize>) -> CutTimeReport {
    let candidates = finite_horizon_cuts(&traj.states);
    let t = traj.states.len().saturating_sub(1);
    let w = tail_window.unwrap_or_else(|| default_tail_window(t)).min(t);
    let span = t - w;
    let counted = candidates.iter().filter(|&&n| n < span).count();
    let density = if span == 0 { 0.0 } else { counted as f64 / span as f64 };
    CutTimeReport { certified: Vec::new(), candidates, total_error: 0.0, density }
}

/// Number of visits to `m` along the path.
pub fn visit_counts(traj: &Trajectory, m: usize) -> usize {
    traj.states.iter().filter(|&&x| x as usize == m).count()
}

/// Total visits to `m` of a birth-death walk from `0`, run until the chance
/// of another visit, `H(X)/H(m)` from above `m`, falls below `tol`.
pub fn sample_total_visits(
    table: &GreensTable,
    m: usize,
    tol: f64,
    master_seed: u64,
    seed: u64,
) -> Result<u64, SimError> {
    let mut rng = rng::stream(master_seed, seed);
    let mut x = 0usize;
    let mut visits = u64::from(m == 0);
    loop {
        if x > m && table.hitting_ratio(m, x) < tol {
            return Ok(visits);
        }
        if x + 1 > table.max_index() {
            return Err(SimError::TableMismatch { level: x + 1, table_max: table.max_index() });
        }
        x = if rng::uniform(&mut rng) < table.up(x) { x + 1 } else { x - 1 };
        visits += u64::from(x == m);
    }
}

/// Whether a walk started at `start` ever hits `0`; undecided walks are
/// stopped once `H(X) < tol` and counted as escapes.
pub fn sample_hits_zero(
    table: &GreensTable,
    start: usize,
    tol: f64,
    rng: &mut StreamRng,
) -> Result<bool, SimError> {
    let mut x = start;
    loop {
        if x == 0 {
            return Ok(true);
        }
        if table.h(x) < tol {
            return Ok(false);
        }
        if x + 1 > table.max_index() {
            return Err(SimError::TableMismatch { level: x + 1, table_max: table.max_index() });
        }
        x = if rng::uniform(rng) < table.up(x) { x + 1 } else { x - 1 };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeometricFit {
    pub mu: f64,
    pub sample_mean: f64,
    pub ks: KsResult,
    pub pass: bool,
}

/// Minimum sample size for [`geometric_fit`].
pub const MIN_FIT_SAMPLES: usize = 100;

/// KS test of visit counts against Geometric(1/μ) on `{1, 2, ...}`; passes
/// when the p-value exceeds 0.01.
pub fn geometric_fit(samples: &[u64], mu: f64) -> Result<GeometricFit, SimError> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(SimError::InsufficientSamples { got: samples.len(), need: MIN_FIT_SAMPLES });
    }
    let ks = ks_discrete(samples, geometric_cdf(1.0 / mu));
    let sample_mean = samples.iter().sum::<u64>() as f64 / samples.len() as f64;
    Ok(GeometricFit { mu, sample_mean, ks, pass: ks.p_value > 0.01 })
}

/// Runs `job(seed)` for `seed in 0..seeds` on a pool of `workers` threads and
/// returns the results in seed order.
pub fn parallel_seeds<T, F>(seeds: u64, workers: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| (0..seeds).into_par_iter().map(&job).collect())
}

/// Per-seed summary row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutRow {
    pub seed: u64,
    pub horizon: usize,
    pub certified_cuts: usize,
    pub candidates: usize,
    pub density: f64,
    pub total_error: f64,
}

impl CutRow {
    pub fn new(seed: u64, horizon: usize, report: &CutTimeReport) -> Self {
        Self {
            seed,
            horizon,
            certified_cuts: report.certified.len(),
            candidates: report.candidates.len(),
            density: report.density,
            total_error: report.total_error,
        }
    }
}

pub fn write_cut_rows<W: Write>(mut w: W, rows: &[CutRow]) -> io::Result<()> {
    writeln!(w, "seed,horizon,certified_cuts,candidates,density,total_error")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{:e},{:e}",
            r.seed, r.horizon, r.certified_cuts, r.candidates, r.density, r.total_error
        )?;
    }
    Ok(())
}

const TRAJ_MAGIC: &[u8; 8] = b"CUTTRAJ1";

/// Binary dump: magic, `u64` state count, then `u32` states, little-endian.
pub fn write_trajectory<W: Write>(mut w: W, states: &[u32]) -> io::Result<()> {
    w.write_all(TRAJ_MAGIC)?;
    w.write_all(&(states.len() as u64).to_le_bytes())?;
    for s in states {
        w.write_all(&s.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_trajectory<R: Read>(mut r: R) -> io::Result<Vec<u32>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != TRAJ_MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad trajectory magic"));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let n = u64::from_le_bytes(len) as usize;
    let mut buf = vec![0u8; 4 * n];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greens::greens_from_d;

    fn traj(states: Vec<u32>) -> Trajectory {
        let horizon = states.len() - 1;
        Trajectory { states, seed: 0, horizon, kill_time: None, survival: 1.0 }
    }

    #[test]
    fn first_step_is_up() {
        let chain = BirthDeathChain::constant(-0.3).unwrap();
        for seed in 0..50 {
            assert_eq!(run_bd(&chain, 1, 1, seed).unwrap().states, vec![0, 1]);
        }
    }

    #[test]
    fn deterministic_and_nearest_neighbour() {
        let chain = BirthDeathChain::constant(0.1).unwrap();
        let a = run_bd(&chain, 1000, 9, 4).unwrap();
        let b = run_bd(&chain, 1000, 9, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.states.windows(2).all(|w| w[0].abs_diff(w[1]) == 1));
        assert_ne!(a.states, run_bd(&chain, 1000, 9, 5).unwrap().states);
    }

    #[test]
    fn strong_drift_goes_up() {
        let chain = BirthDeathChain::constant(0.49).unwrap();
        for seed in 0..200 {
            let t = run_bd(&chain, 100, 3, seed).unwrap();
            let ups = t.states.windows(2).filter(|w| w[1] > w[0]).count();
            assert!((80..=100).contains(&ups));
        }
    }

    #[test]
    fn hand_enumerated_cuts() {
        let t = traj(vec![0, 1, 0, 1, 2, 3]);
        assert_eq!(finite_horizon_cuts(&t.states), vec![3, 4]);
        let g = detect_cut_times_generic(&t, Some(0));
        assert_eq!(g.candidates, vec![3, 4]);
        let cyc = traj(vec![0, 1, 0, 1]);
        assert!(finite_horizon_cuts(&cyc.states).is_empty());
        let distinct = traj(vec![5, 3, 9, 2]);
        assert_eq!(finite_horizon_cuts(&distinct.states), vec![0, 1, 2]);
    }

    #[test]
    fn bd_detection_matches_generic_and_budget() {
        let chain = BirthDeathChain::constant(0.25).unwrap();
        let table = greens_from_d(&chain, 4000, 1e-13).unwrap();
        for seed in 0..10 {
            let t = run_bd(&chain, 2000, 5, seed).unwrap();
            let bd = detect_cut_times_bd(&t, &table, 1e-3).unwrap();
            let generic = detect_cut_times_generic(&t, None);
            let mut all = bd.certified_times();
            all.extend(&bd.candidates);
            all.sort_unstable();
            assert_eq!(all, generic.candidates);
            let sum: f64 = bd.certified.iter().map(|c| c.residual).sum();
            assert!((sum - bd.total_error).abs() <= 1e-12);
            assert!(bd.total_error <= 1e-3);
        }
    }

    #[test]
    fn ballistic_path_certifies_all() {
        let chain = BirthDeathChain::constant(0.25).unwrap();
        let table = greens_from_d(&chain, 100, 1e-13).unwrap();
        let t = traj((0..=60).collect());
        let r = detect_cut_times_bd(&t, &table, 1.0).unwrap();
        assert_eq!(r.certified.len(), 60);
        assert!(r.candidates.is_empty());
        let short = greens_from_d(&chain, 10, 1e-13).unwrap();
        assert!(matches!(
            detect_cut_times_bd(&t, &short, 1.0),
            Err(SimError::TableMismatch { level: 60, .. })
        ));
    }

    #[test]
    fn no_killing_never_kills() {
        let chain = BirthDeathChain::constant(0.1).unwrap();
        let t = run_killed(&chain, |_| 0.0, 0, 50, 1, 1).unwrap();
        assert_eq!(t.kill_time, None);
        assert_eq!(t.states.len(), 51);
        assert_eq!(t.survival, 1.0);
    }

    #[test]
    fn survival_is_product() {
        let chain = BirthDeathChain::constant(0.1).unwrap();
        let kappa = |x: usize| 0.01 + 0.001 * x as f64;
        for seed in 0..20 {
            let t = run_killed(&chain, kappa, 0, 200, 2, seed).unwrap();
            let path = run_bd(&chain, 200, 2, seed).unwrap();
            let prod: f64 = path.states[..200].iter().map(|&x| 1.0 - kappa(x as usize)).product();
            assert!((t.survival - prod).abs() <= 1e-12);
            if let Some(k) = t.kill_time {
                assert_eq!(t.states.len(), k);
                assert_eq!(t.states[..], path.states[..k]);
            }
        }
    }

    #[test]
    fn kappa_range_checked() {
        let chain = BirthDeathChain::constant(0.1).unwrap();
        assert!(matches!(
            run_killed(&chain, |_| 1.0, 0, 5, 1, 1),
            Err(SimError::KappaOutOfRange { .. })
        ));
    }

    #[test]
    fn fit_needs_samples() {
        assert_eq!(
            geometric_fit(&[1; 99], 2.0).unwrap_err(),
            SimError::InsufficientSamples { got: 99, need: 100 }
        );
    }

    #[test]
    fn trajectory_dump_round_trip() {
        let states = vec![0, 1, 2, 1, 2, 3, u32::MAX];
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &states).unwrap();
        assert_eq!(&buf[..8], b"CUTTRAJ1");
        assert_eq!(buf.len(), 16 + 4 * states.len());
        assert_eq!(read_trajectory(&buf[..]).unwrap(), states);
        buf[0] = b'X';
        assert!(read_trajectory(&buf[..]).is_err());
    }

    #[test]
    fn parallel_order_is_seed_order() {
        let a = parallel_seeds(32, 1, |s| s * s);
        let b = parallel_seeds(32, 4, |s| s * s);
        assert_eq!(a, b);
        assert_eq!(a[5], 25);
    }
}
