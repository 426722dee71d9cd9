//! Drop decompositions of a positive sequence tending to zero across the
//! exponential scales `I_k = [e^{-k-1}, e^{-k}]`, ψ-good scales, permadrops
//! and the Monte Carlo sandwich of the permadrop count.
//!
//! Sequences are handled in log form: for transient chains `Z_n = H(X_n)`
//! routinely drops below the smallest positive double.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::greens::GreensTable;
use crate::rng;
use crate::simulate::{parallel_seeds, SimError};
use crate::stats::mean_se;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalesError {
    #[error("entry {index} is not positive")]
    NonPositiveEntry { index: usize },
    #[error("sequence stays above e^-{needed}, scale {k} is not traversed")]
    SequenceDoesNotReach { k: usize, needed: usize },
    #[error("scale {k} is not populated")]
    ScaleMissing { k: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Relative tolerance for merging a running minimum into a scale endpoint.
const ENDPOINT_TOL: f64 = 1e-12;

/// `z*_n = min_{m<=n} z_m`.
pub fn running_minima(z: &[f64]) -> Result<Vec<f64>, ScalesError> {
    let mut out = Vec::with_capacity(z.len());
    let mut m = f64::INFINITY;
    for (index, &v) in z.iter().enumerate() {
        if !(v > 0.0) {
            return Err(ScalesError::NonPositiveEntry { index });
        }
        m = m.min(v);
        out.push(m);
    }
    Ok(out)
}

fn running_minima_log(log_z: &[f64]) -> Vec<f64> {
    log_z
        .iter()
        .scan(f64::INFINITY, |m, &v| {
            *m = m.min(v);
            Some(*m)
        })
        .collect()
}

/// The drops of one scale: `log d_0 = -k > log d_1 > ... > log d_N = -k-1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleDrops {
    pub k: usize,
    pub log_d: Vec<f64>,
}

impl ScaleDrops {
    /// `N_k`, the number of drops.
    pub fn n_k(&self) -> usize {
        self.log_d.len() - 1
    }

    /// `log(d_{i+1}/d_i)` for each drop.
    pub fn log_ratios(&self) -> Vec<f64> {
        self.log_d.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Scales `k0..=K` of a sequence, where `k0 = ⌈2 log(1/z_0)⌉` and `K` is the
/// last scale the sequence fully traverses.
#[derive(Debug, Clone)]
pub struct DropDecomposition {
    pub k0: usize,
    pub scales: Vec<ScaleDrops>,
    log_z: Vec<f64>,
    log_z_star: Vec<f64>,
    suffix_max: Vec<f64>,
}

/// Decomposes a sequence given by its logarithms. With `up_to = Some(K)` the
/// sequence must traverse scale `K`.
pub fn decompose_log(log_z: &[f64], up_to: Option<usize>) -> Result<DropDecomposition, ScalesError> {
    if let Some(index) = log_z.iter().position(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
        return Err(ScalesError::NonPositiveEntry { index });
    }
    let log_z_star = running_minima_log(log_z);
    let k0 = (2.0 * -log_z[0]).ceil().max(0.0) as usize;
    let lowest = *log_z_star.last().expect("nonempty sequence");
    // traversed: lowest <= -k-1
    let reach = (-lowest - 1.0 + ENDPOINT_TOL).floor();
    if let Some(k) = up_to {
        if reach < k as f64 {
            return Err(ScalesError::SequenceDoesNotReach { k, needed: k + 1 });
        }
    }
    let top = match up_to {
        Some(k) => k as i64,
        None => reach as i64,
    };
    let mut distinct: Vec<f64> = log_z_star[1..].to_vec();
    distinct.dedup();
    let mut scales = Vec::new();
    for k in k0 as i64..=top {
        let (hi, lo) = (-(k as f64), -(k as f64) - 1.0);
        let mut log_d = vec![hi];
        for &v in &distinct {
            if v < hi - ENDPOINT_TOL && v > lo + ENDPOINT_TOL {
                log_d.push(v);
            }
        }
        log_d.push(lo);
        scales.push(ScaleDrops { k: k as usize, log_d });
    }
    let mut suffix_max = log_z.to_vec();
    for i in (0..suffix_max.len().saturating_sub(1)).rev() {
        suffix_max[i] = suffix_max[i].max(suffix_max[i + 1]);
    }
    Ok(DropDecomposition { k0, scales, log_z: log_z.to_vec(), log_z_star, suffix_max })
}

/// Decomposes a positive sequence.
pub fn decompose(z: &[f64], up_to: Option<usize>) -> Result<DropDecomposition, ScalesError> {
    running_minima(z)?;
    let log_z: Vec<f64> = z.iter().map(|v| v.ln()).collect();
    decompose_log(&log_z, up_to)
}

impl DropDecomposition {
    pub fn scale(&self, k: usize) -> Option<&ScaleDrops> {
        k.checked_sub(self.k0).and_then(|i| self.scales.get(i))
    }

    pub fn max_scale(&self) -> Option<usize> {
        self.scales.last().map(|s| s.k)
    }

    /// First `m >= 1` with `log z*_m <= level`.
    fn first_below(&self, level: f64) -> Option<usize> {
        let idx = 1 + self.log_z_star[1..].partition_point(|&v| v > level + ENDPOINT_TOL);
        (idx < self.log_z_star.len()).then_some(idx)
    }

    /// Whether some running minimum lies in `(e^{-k-1}, e^{-k-3/4}]`.
    pub fn enters_deep_subscale(&self, k: usize) -> bool {
        let (lo, hi) = (-(k as f64) - 1.0, -(k as f64) - 0.75);
        match self.first_below(hi) {
            Some(m) => self.log_z_star[m] > lo,
            None => false,
        }
    }
}

/// Outcome of the ψ-good test on one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsiGood {
    pub good: bool,
    /// `log Ψ(k) = -k / (2 ψ⁻¹(k))`.
    pub log_threshold: f64,
    pub large_drops: usize,
    pub log_large_product: f64,
    pub log_small_product: f64,
}

/// `log Ψ(k)` from `log ψ⁻¹`.
pub fn log_threshold(k: usize, log_psi_inv: &dyn Fn(f64) -> f64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    -((k as f64).ln() - std::f64::consts::LN_2 - log_psi_inv(k as f64)).exp()
}

fn is_large(log_ratio: f64, log_thr: f64) -> bool {
    log_ratio <= log_thr + ENDPOINT_TOL.ln_1p()
}

/// A drop is large when its ratio is at most `Ψ(k)`; the scale is ψ-good
/// when the large drops multiply to at most `e^{-1/2}`.
pub fn psi_good(
    decomp: &DropDecomposition,
    k: usize,
    log_psi_inv: &dyn Fn(f64) -> f64,
) -> Result<PsiGood, ScalesError> {
    let scale = decomp.scale(k).ok_or(ScalesError::ScaleMissing { k })?;
    let thr = log_threshold(k, log_psi_inv);
    let (mut large, mut small, mut count) = (0.0, 0.0, 0);
    for r in scale.log_ratios() {
        if is_large(r, thr) {
            large += r;
            count += 1;
        } else {
            small += r;
        }
    }
    Ok(PsiGood {
        good: large <= -0.5 + ENDPOINT_TOL,
        log_threshold: thr,
        large_drops: count,
        log_large_product: large,
        log_small_product: small,
    })
}

/// Large permadrops of one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Permadrops {
    pub large_drops: usize,
    /// Certified large permadrops.
    pub r_k: usize,
    /// Large drops with no observed recovery whose residual exceeds the budget.
    pub undecided: usize,
    /// Sum of residuals over certified permadrops.
    pub residual: f64,
}

/// Counts large drops `(d_i, d_{i+1})` after whose first hit `Z` stays below
/// `d_i` for the rest of the observed path. The chance of a later recovery
/// is at most `Z_T/d_i` (optional stopping; exact when `d_i` is a value of
/// `Z`); drops are certified when that residual is within `budget`.
pub fn permadrop_count(
    decomp: &DropDecomposition,
    k: usize,
    log_psi_inv: &dyn Fn(f64) -> f64,
    budget: f64,
) -> Result<Permadrops, ScalesError> {
    let scale = decomp.scale(k).ok_or(ScalesError::ScaleMissing { k })?;
    let thr = log_threshold(k, log_psi_inv);
    let log_end = *decomp.log_z.last().expect("nonempty sequence");
    let mut out = Permadrops { large_drops: 0, r_k: 0, undecided: 0, residual: 0.0 };
    for w in scale.log_d.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !is_large(b - a, thr) {
            continue;
        }
        out.large_drops += 1;
        let Some(tau) = decomp.first_below(b) else {
            continue;
        };
        if decomp.suffix_max[tau] >= a {
            continue;
        }
        let residual = (log_end - a).exp();
        if residual <= budget {
            out.r_k += 1;
            out.residual += residual;
        } else {
            out.undecided += 1;
        }
    }
    Ok(out)
}

/// One row of a scale audit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleAuditRow {
    pub k: usize,
    pub n_k: usize,
    pub large_drops: usize,
    pub r_k: usize,
    pub psi_good: bool,
    pub residual: f64,
}

pub fn audit_scale(
    decomp: &DropDecomposition,
    k: usize,
    log_psi_inv: &dyn Fn(f64) -> f64,
    budget: f64,
) -> Result<ScaleAuditRow, ScalesError> {
    let good = psi_good(decomp, k, log_psi_inv)?;
    let perm = permadrop_count(decomp, k, log_psi_inv, budget)?;
    Ok(ScaleAuditRow {
        k,
        n_k: decomp.scale(k).expect("checked above").n_k(),
        large_drops: perm.large_drops,
        r_k: perm.r_k,
        psi_good: good.good,
        residual: perm.residual,
    })
}

pub fn write_audit_rows<W: Write>(mut w: W, rows: &[ScaleAuditRow]) -> io::Result<()> {
    writeln!(w, "k,N_k,large_drops,R_k,psi_good,residual")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{},{:e}", r.k, r.n_k, r.large_drops, r.r_k, r.psi_good, r.residual)?;
    }
    Ok(())
}

/// Runs a birth-death walk from `0` until `log H(X) <= stop_log_h` or
/// `max_steps` steps, returning `log H` along the path.
pub fn run_log_z_until(
    table: &GreensTable,
    stop_log_h: f64,
    max_steps: usize,
    master_seed: u64,
    seed: u64,
) -> Result<Vec<f64>, SimError> {
    let mut rng = rng::stream(master_seed, seed);
    let mut x = 0usize;
    let mut out = vec![table.log_h(0)];
    for _ in 0..max_steps {
        if table.log_h(x) <= stop_log_h {
            break;
        }
        if x + 1 > table.max_index() {
            return Err(SimError::TableMismatch { level: x + 1, table_max: table.max_index() });
        }
        x = if rng::uniform(&mut rng) < table.up(x) { x + 1 } else { x - 1 };
        out.push(table.log_h(x));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NeverRecovery {
    pub from_level: usize,
    pub to_level: usize,
    /// `1 - b/a` with `a = H(from)`, `b = H(to)`.
    pub predicted: f64,
    pub empirical: f64,
    pub sigma: f64,
    pub pass: bool,
}

/// Walks started at `to > from` (the moment `Z` first drops from
/// `a = H(from)` to `b = H(to)`) and records whether they ever return to
/// `from`. Walks are stopped as escaped once the return chance falls below
/// `tol`.
pub fn never_recovery(
    table: &GreensTable,
    from: usize,
    to: usize,
    seeds: u64,
    master_seed: u64,
    workers: usize,
    tol: f64,
) -> Result<NeverRecovery, SimError> {
    assert!(to > from, "drop must go to a higher level");
    let outcomes = parallel_seeds(seeds, workers, |seed| -> Result<bool, SimError> {
        let mut rng = rng::stream(master_seed, seed);
        let mut x = to;
        loop {
            if x == from {
                return Ok(false);
            }
            if table.hitting_ratio(from, x) < tol {
                return Ok(true);
            }
            if x + 1 > table.max_index() {
                return Err(SimError::TableMismatch {
                    level: x + 1,
                    table_max: table.max_index(),
                });
            }
            x = if rng::uniform(&mut rng) < table.up(x) { x + 1 } else { x - 1 };
        }
    });
    let mut escaped = 0usize;
    for o in outcomes {
        escaped += usize::from(o?);
    }
    let n = seeds as f64;
    let predicted = 1.0 - table.hitting_ratio(from, to);
    let empirical = escaped as f64 / n;
    let sigma = (predicted * (1.0 - predicted) / n).sqrt();
    Ok(NeverRecovery {
        from_level: from,
        to_level: to,
        predicted,
        empirical,
        sigma,
        pass: (empirical - predicted).abs() <= 3.0 * sigma,
    })
}

#[derive(Debug, Clone)]
pub struct SandwichConfig {
    pub scales: Vec<usize>,
    pub seeds: u64,
    pub master_seed: u64,
    pub workers: usize,
    /// Residual budget for certifying a permadrop.
    pub budget: f64,
    /// Walks run until `log Z <= -(max scale + 1) - overshoot`.
    pub overshoot: f64,
    pub max_steps: usize,
    /// Constant of the upper bound; fitted from the data when `None`.
    pub c_hat: Option<f64>,
}

/// Minimum number of seeds for [`sandwich_check`].
pub const MIN_SANDWICH_SEEDS: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleSandwich {
    pub k: usize,
    /// Seeds whose walk traversed the scale.
    pub reached: usize,
    pub skipped: bool,
    /// Mean certified permadrop count.
    pub mean_r: f64,
    /// Mean count with undecided drops included.
    pub mean_r_upper: f64,
    pub p_good_deep: f64,
    /// Mean and standard error of `R_k - 1{good ∧ deep}/4` per seed.
    pub lower_gap: f64,
    pub lower_sigma: f64,
    pub lower_ok: bool,
    pub p_r_ge1: f64,
    /// `log(2 ψ⁻¹(k)/k)`.
    pub log_factor: f64,
    /// Smallest constant for which the mean upper bound holds exactly.
    pub required_c: Option<f64>,
    pub upper_gap: f64,
    pub upper_sigma: f64,
    pub upper_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub seeds: u64,
    pub c_hat: f64,
    pub scales: Vec<ScaleSandwich>,
    pub lower_ok: bool,
    pub upper_ok: bool,
}

#[derive(Debug, Clone, Copy, Default)]
struct SeedScale {
    reached: bool,
    r: usize,
    r_upper: usize,
    good_deep: bool,
}

/// Monte Carlo check of
/// `E[R_k] >= P(good ∧ deep)/4` and `E[R_k] <= (2 + C log(2ψ⁻¹(k)/k)) P(R_k >= 1)`
/// at each scale, with three-standard-error slack on per-seed differences.
///
/// The lower bound uses certified permadrops only; the upper bound counts
/// undecided drops as permadrops, so both checks err on the strict side.
pub fn sandwich_check(
    table: &GreensTable,
    log_psi_inv: &(dyn Fn(f64) -> f64 + Sync),
    cfg: &SandwichConfig,
) -> Result<SandwichReport, ScalesError> {
    if cfg.seeds < MIN_SANDWICH_SEEDS {
        return Err(SimError::InsufficientSamples {
            got: cfg.seeds as usize,
            need: MIN_SANDWICH_SEEDS as usize,
        }
        .into());
    }
    let kmax = *cfg.scales.iter().max().expect("at least one scale");
    let stop = -(kmax as f64) - 1.0 - cfg.overshoot;
    let per_seed = parallel_seeds(cfg.seeds, cfg.workers, |seed| -> Result<Vec<SeedScale>, ScalesError> {
        let log_z = run_log_z_until(table, stop, cfg.max_steps, cfg.master_seed, seed)?;
        let decomp = decompose_log(&log_z, None)?;
        let mut out = Vec::with_capacity(cfg.scales.len());
        for &k in &cfg.scales {
            if decomp.scale(k).is_none() {
                out.push(SeedScale::default());
                continue;
            }
            let good = psi_good(&decomp, k, log_psi_inv)?;
            let perm = permadrop_count(&decomp, k, log_psi_inv, cfg.budget)?;
            out.push(SeedScale {
                reached: true,
                r: perm.r_k,
                r_upper: perm.r_k + perm.undecided,
                good_deep: good.good && decomp.enters_deep_subscale(k),
            });
        }
        Ok(out)
    });
    let per_seed: Vec<Vec<SeedScale>> = per_seed.into_iter().collect::<Result<_, _>>()?;

    let mut stats = Vec::new();
    for (j, &k) in cfg.scales.iter().enumerate() {
        let col: Vec<SeedScale> = per_seed.iter().map(|s| s[j]).collect();
        let reached = col.iter().filter(|s| s.reached).count();
        let r: Vec<f64> = col.iter().map(|s| s.r as f64).collect();
        let ru: Vec<f64> = col.iter().map(|s| s.r_upper as f64).collect();
        let gd: Vec<f64> = col.iter().map(|s| f64::from(u8::from(s.good_deep))).collect();
        let ge1: Vec<f64> = col.iter().map(|s| f64::from(u8::from(s.r_upper >= 1))).collect();
        let lower: Vec<f64> = r.iter().zip(&gd).map(|(r, g)| r - 0.25 * g).collect();
        let (lower_gap, lower_sigma) = mean_se(&lower);
        let log_factor = (2.0f64.ln() + log_psi_inv(k as f64) - (k as f64).ln()).max(0.0);
        let mean_r_upper = mean_se(&ru).0;
        let p_r_ge1 = mean_se(&ge1).0;
        let required_c = if p_r_ge1 > 0.0 && log_factor > 0.0 {
            Some(((mean_r_upper / p_r_ge1 - 2.0) / log_factor).max(0.0))
        } else {
            None
        };
        stats.push((k, reached, r, ru, ge1, gd, lower_gap, lower_sigma, log_factor, required_c, p_r_ge1));
    }
    let c_hat = cfg.c_hat.unwrap_or_else(|| {
        stats.iter().filter_map(|s| s.9).fold(0.0, f64::max)
    });
    let mut scales = Vec::new();
    for (k, reached, r, ru, ge1, gd, lower_gap, lower_sigma, log_factor, required_c, p_r_ge1) in stats {
        let skipped = reached == 0;
        let factor = 2.0 + c_hat * log_factor;
        let upper: Vec<f64> = ru.iter().zip(&ge1).map(|(r, g)| r - factor * g).collect();
        let (upper_gap, upper_sigma) = mean_se(&upper);
        scales.push(ScaleSandwich {
            k,
            reached,
            skipped,
            mean_r: mean_se(&r).0,
            mean_r_upper: mean_se(&ru).0,
            p_good_deep: mean_se(&gd).0,
            lower_gap,
            lower_sigma,
            lower_ok: skipped || lower_gap >= -3.0 * lower_sigma,
            p_r_ge1,
            log_factor,
            required_c,
            upper_gap,
            upper_sigma,
            upper_ok: skipped || upper_gap <= 3.0 * upper_sigma.max(0.0) || upper_gap <= 0.0,
        });
    }
    let lower_ok = scales.iter().all(|s| s.lower_ok);
    let upper_ok = scales.iter().all(|s| s.upper_ok);
    Ok(SandwichReport { seeds: cfg.seeds, c_hat, scales, lower_ok, upper_ok })
}

/// Whether a held-out constant is within 20% of the calibrated one.
pub fn c_hat_stable(calibrated: f64, held_out: f64) -> bool {
    (held_out - calibrated).abs() <= 0.2 * calibrated
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn exp_half(n: usize) -> Vec<f64> {
        (0..n).map(|i| (-(i as f64) / 2.0).exp()).collect()
    }

    #[test]
    fn running_minima_examples() {
        assert_eq!(running_minima(&[1.0, 0.5, 0.7, 0.2]).unwrap(), vec![1.0, 0.5, 0.5, 0.2]);
        assert_eq!(running_minima(&[0.3; 4]).unwrap(), vec![0.3; 4]);
        assert_eq!(
            running_minima(&[1.0, 0.0]).unwrap_err(),
            ScalesError::NonPositiveEntry { index: 1 }
        );
    }

    #[test]
    fn half_step_decomposition() {
        let d = decompose(&exp_half(20), None).unwrap();
        assert_eq!(d.k0, 0);
        let s1 = d.scale(1).unwrap();
        assert_eq!(s1.n_k(), 2);
        assert_abs_diff_eq!(s1.log_d[1], -1.5, epsilon = 1e-12);
        for r in s1.log_ratios() {
            assert_abs_diff_eq!(r, -0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn products_are_one_over_e() {
        let z: Vec<f64> = (0..400).map(|i| (-(i as f64) * 0.037 - (i as f64 * 1.3).sin().abs()).exp()).collect();
        let d = decompose(&z, None).unwrap();
        assert!(!d.scales.is_empty());
        for s in &d.scales {
            assert_abs_diff_eq!(s.log_ratios().iter().sum::<f64>(), -1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn jump_across_scale() {
        let z = [1.0, (-0.5f64).exp(), (-3.5f64).exp()];
        let d = decompose(&z, None).unwrap();
        assert_eq!(d.scale(1).unwrap().n_k(), 1);
        assert_eq!(d.scale(2).unwrap().n_k(), 1);
        assert!(matches!(decompose(&z, Some(5)), Err(ScalesError::SequenceDoesNotReach { .. })));
    }

    #[test]
    fn decomposition_idempotent_under_minima() {
        let z: Vec<f64> = (0..300).map(|i| (-(i as f64) * 0.05 + (i as f64).cos() * 0.4).exp()).collect();
        let zs = running_minima(&z).unwrap();
        let a = decompose(&z, None).unwrap();
        let b = decompose(&zs, None).unwrap();
        assert_eq!(a.scales, b.scales);
    }

    #[test]
    fn identity_psi_goodness() {
        let d = decompose(&exp_half(30), None).unwrap();
        let id = |x: f64| x.ln();
        let g = psi_good(&d, 3, &id).unwrap();
        assert_abs_diff_eq!(g.log_threshold, -0.5, epsilon = 1e-15);
        assert!(g.good);
        assert_eq!(g.large_drops, 2);
        assert!(matches!(psi_good(&d, 40, &id), Err(ScalesError::ScaleMissing { k: 40 })));
    }

    #[test]
    fn single_drop_scale_is_good() {
        let z = [1.0, (-0.5f64).exp(), (-3.5f64).exp()];
        let d = decompose(&z, None).unwrap();
        let id = |x: f64| x.ln();
        assert!(psi_good(&d, 2, &id).unwrap().good);
    }

    #[test]
    fn many_small_drops_are_not_good() {
        // 100 drops of ratio e^{-1/100} on scale 1
        let z: Vec<f64> = (0..300).map(|i| (-(i as f64) / 100.0).exp()).collect();
        let d = decompose(&z, None).unwrap();
        let id = |x: f64| x.ln();
        let g = psi_good(&d, 1, &id).unwrap();
        assert_eq!(g.large_drops, 0);
        assert_eq!(g.log_large_product, 0.0);
        assert!(!g.good);
    }

    #[test]
    fn monotone_sequence_permadrops() {
        let z = exp_half(40);
        let d = decompose(&z, None).unwrap();
        let id = |x: f64| x.ln();
        for k in 1..=10 {
            let p = permadrop_count(&d, k, &id, 1.0).unwrap();
            assert_eq!(p.r_k, p.large_drops);
        }
    }

    #[test]
    fn recovery_excludes_drop() {
        // drop from e^{-1} to e^{-1.5}, recover above e^{-1}, then fall through
        let logs = [0.0, -1.0, -1.5, -0.9, -2.0, -9.0];
        let z: Vec<f64> = logs.iter().map(|v: &f64| v.exp()).collect();
        let d = decompose(&z, None).unwrap();
        let id = |x: f64| x.ln();
        let p = permadrop_count(&d, 1, &id, 1.0).unwrap();
        assert_eq!(p.large_drops, 2);
        assert_eq!(p.r_k, 1);
        assert!(p.r_k <= p.large_drops && p.large_drops <= d.scale(1).unwrap().n_k());
    }

    #[test]
    fn deep_subscale() {
        let logs = [0.0, -2.8, -3.1];
        let d = decompose_log(&logs, None).unwrap();
        assert!(d.enters_deep_subscale(2));
        let logs = [0.0, -2.5, -3.1];
        let d = decompose_log(&logs, None).unwrap();
        assert!(!d.enters_deep_subscale(2));
    }

    #[test]
    fn stability_rule() {
        assert!(c_hat_stable(0.0, 0.0));
        assert!(c_hat_stable(1.0, 1.19));
        assert!(!c_hat_stable(1.0, 1.3));
    }
}
