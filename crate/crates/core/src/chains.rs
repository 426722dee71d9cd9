//! Chain models: birth-death chains on the nonnegative integers, networks
//! with killing, and finite windows of either as substochastic kernels.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("drift p_{index} = {value} lies outside (-1/2, 1/2)")]
    DriftOutOfRange { index: usize, value: f64 },
    #[error("drift p_{index} is undefined")]
    DriftUndefined { index: usize },
    #[error("unknown vertex {0}")]
    UnknownVertex(usize),
    #[error("window is empty")]
    EmptyWindow,
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
}

/// Drift as a pure function of the level `i >= 1`.
pub type DriftFn = Arc<dyn Fn(usize) -> f64 + Send + Sync>;

/// Nearest-neighbour chain on `{0, 1, 2, ...}` with up-probability
/// `E_0 = 1` and `E_i = 1/2 + p_i` for `i >= 1`.
///
/// Drifts are evaluated lazily and cached; the cache is shared behind a lock
/// so a chain can be handed to many workers at once.
pub struct BirthDeathChain {
    label: String,
    drift: DriftFn,
    cache: RwLock<Vec<f64>>,
}

impl fmt::Debug for BirthDeathChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BirthDeathChain")
            .field("label", &self.label)
            .field("cached", &self.cache.read().map(|c| c.len()).unwrap_or(0))
            .finish()
    }
}

fn checked_up(index: usize, p: f64) -> Result<f64, ChainError> {
    if p.is_nan() {
        return Err(ChainError::DriftUndefined { index });
    }
    if !(p > -0.5 && p < 0.5) {
        return Err(ChainError::DriftOutOfRange { index, value: p });
    }
    Ok(0.5 + p)
}

/// Builds a chain from a drift function, validating `p_1..=p_validate_up_to`
/// eagerly. Levels beyond that range are validated when first queried.
pub fn bd_from_drifts(
    label: impl Into<String>,
    drift: DriftFn,
    validate_up_to: usize,
) -> Result<BirthDeathChain, ChainError> {
    let chain = BirthDeathChain {
        label: label.into(),
        drift,
        cache: RwLock::new(vec![1.0]),
    };
    chain.extend_cache(validate_up_to + 1)?;
    Ok(chain)
}

impl BirthDeathChain {
    /// Constant drift `p` at every level `i >= 1`.
    pub fn constant(p: f64) -> Result<Self, ChainError> {
        bd_from_drifts(format!("constant_drift(p={p})"), Arc::new(move |_| p), 64)
    }

    /// Tabulated drifts; `values[0]` is `p_1`. Queries past the table fail
    /// with [`ChainError::DriftUndefined`].
    pub fn from_table(values: Vec<f64>) -> Result<Self, ChainError> {
        let n = values.len();
        let values = Arc::new(values);
        bd_from_drifts(
            format!("table(len={n})"),
            Arc::new(move |i| values.get(i.wrapping_sub(1)).copied().unwrap_or(f64::NAN)),
            n,
        )
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    fn extend_cache(&self, len: usize) -> Result<(), ChainError> {
        if self.cache.read().expect("drift cache poisoned").len() >= len {
            return Ok(());
        }
        let mut cache = self.cache.write().expect("drift cache poisoned");
        while cache.len() < len {
            let i = cache.len();
            let e = checked_up(i, (self.drift)(i))?;
            cache.push(e);
        }
        Ok(())
    }

    /// Up-probability `E_i`.
    pub fn up_prob(&self, i: usize) -> Result<f64, ChainError> {
        if let Some(&e) = self.cache.read().expect("drift cache poisoned").get(i) {
            return Ok(e);
        }
        self.extend_cache(i + 1)?;
        Ok(self.cache.read().expect("drift cache poisoned")[i])
    }

    /// Drift `p_i` for `i >= 1`, validated but not cached.
    pub fn drift(&self, i: usize) -> Result<f64, ChainError> {
        assert!(i >= 1, "drift is defined for levels i >= 1");
        let p = (self.drift)(i);
        checked_up(i, p)?;
        Ok(p)
    }

    /// Extends `buf` with `E_k` so that `buf.len() >= len`.
    pub fn fill_up_probs(&self, buf: &mut Vec<f64>, len: usize) -> Result<(), ChainError> {
        if buf.len() >= len {
            return Ok(());
        }
        self.extend_cache(len)?;
        let cache = self.cache.read().expect("drift cache poisoned");
        buf.extend_from_slice(&cache[buf.len()..len]);
        Ok(())
    }

    /// `1/E_i - 1 = (1 - 2 p_i) / (1 + 2 p_i)`, the down/up odds at level `i`.
    pub fn odds(&self, i: usize) -> Result<f64, ChainError> {
        if i == 0 {
            return Ok(0.0);
        }
        let p = self.drift(i)?;
        Ok((1.0 - 2.0 * p) / (1.0 + 2.0 * p))
    }
}

/// Destination of a step in a network with killing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Vertex(usize),
    Graveyard,
}

/// Finite network with symmetric conductances and a killing function.
#[derive(Debug, Clone)]
pub struct KilledNetwork {
    adj: Vec<Vec<(usize, f64)>>,
    conductance: Vec<f64>,
    killing: Vec<f64>,
    c_min: f64,
}

impl KilledNetwork {
    /// Builds a network on vertices `0..n` from undirected weighted edges.
    pub fn new(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, ChainError> {
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(u, v, c) in edges {
            if u >= n || v >= n {
                return Err(ChainError::UnknownVertex(u.max(v)));
            }
            if u == v {
                return Err(ChainError::InvalidNetwork(format!("self-loop at {u}")));
            }
            if !(c > 0.0) || !c.is_finite() {
                return Err(ChainError::InvalidNetwork(format!("conductance {c} on ({u},{v})")));
            }
            adj[u].push((v, c));
            adj[v].push((u, c));
        }
        for row in &mut adj {
            row.sort_by_key(|&(v, _)| v);
            // merge parallel edges
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for &(v, c) in row.iter() {
                match merged.last_mut() {
                    Some((w, acc)) if *w == v => *acc += c,
                    _ => merged.push((v, c)),
                }
            }
            *row = merged;
        }
        let conductance: Vec<f64> = adj.iter().map(|r| r.iter().map(|&(_, c)| c).sum()).collect();
        if let Some(u) = conductance.iter().position(|&c| c <= 0.0) {
            return Err(ChainError::InvalidNetwork(format!("isolated vertex {u}")));
        }
        let c_min = conductance.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self { adj, killing: vec![0.0; n], conductance, c_min })
    }

    /// Replaces the killing function.
    pub fn with_killing(mut self, killing: Vec<f64>) -> Result<Self, ChainError> {
        if killing.len() != self.len() {
            return Err(ChainError::InvalidNetwork(format!(
                "killing has {} entries for {} vertices",
                killing.len(),
                self.len()
            )));
        }
        if let Some(k) = killing.iter().find(|&&k| !(k >= 0.0) || !k.is_finite()) {
            return Err(ChainError::InvalidNetwork(format!("killing value {k}")));
        }
        self.killing = killing;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn c_min(&self) -> f64 {
        self.c_min
    }

    fn check(&self, u: usize) -> Result<(), ChainError> {
        if u < self.len() {
            Ok(())
        } else {
            Err(ChainError::UnknownVertex(u))
        }
    }

    /// Total conductance `c(u)`.
    pub fn conductance(&self, u: usize) -> Result<f64, ChainError> {
        self.check(u)?;
        Ok(self.conductance[u])
    }

    pub fn killing(&self, u: usize) -> Result<f64, ChainError> {
        self.check(u)?;
        Ok(self.killing[u])
    }

    pub fn neighbors(&self, u: usize) -> &[(usize, f64)] {
        &self.adj[u]
    }

    /// Per-step killing probability `K(u) / (c(u) + K(u))`.
    pub fn kill_prob(&self, u: usize) -> Result<f64, ChainError> {
        self.check(u)?;
        Ok(self.killing[u] / (self.conductance[u] + self.killing[u]))
    }

    /// `P(u, v) = c(u,v)/(c(u)+K(u))` and `P(u, †) = K(u)/(c(u)+K(u))`.
    pub fn transition(&self, u: usize, target: Target) -> Result<f64, ChainError> {
        self.check(u)?;
        let total = self.conductance[u] + self.killing[u];
        match target {
            Target::Graveyard => Ok(self.killing[u] / total),
            Target::Vertex(v) => {
                self.check(v)?;
                let c = self.adj[u]
                    .binary_search_by_key(&v, |&(w, _)| w)
                    .map(|i| self.adj[u][i].1)
                    .unwrap_or(0.0);
                Ok(c / total)
            }
        }
    }

    /// Breadth-first graph distances from `origin`; `None` for unreachable
    /// vertices.
    pub fn distances_from(&self, origin: usize) -> Result<Vec<Option<usize>>, ChainError> {
        self.check(origin)?;
        let mut dist = vec![None; self.len()];
        let mut queue = std::collections::VecDeque::new();
        dist[origin] = Some(0);
        queue.push_back(origin);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].expect("queued vertices have a distance");
            for &(v, _) in &self.adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        Ok(dist)
    }
}

/// Something a finite window can be cut out of.
#[derive(Clone, Copy)]
pub enum KernelSource<'a> {
    BirthDeath(&'a BirthDeathChain),
    Network(&'a KilledNetwork),
}

/// A chain restricted to a finite window of states.
///
/// Each row splits into in-window transitions, killing mass and leak (mass
/// leaving the window). `row + kill + leak = 1` for every row; birth-death
/// chains and unkilled networks have `kill = 0`.
#[derive(Debug, Clone)]
pub struct TruncatedKernel {
    labels: Vec<usize>,
    position: HashMap<usize, usize>,
    rows: Vec<Vec<(usize, f64)>>,
    kill: Vec<f64>,
    leak: Vec<f64>,
}

/// Restricts `source` to the states listed in `window`.
pub fn truncate_kernel(
    source: KernelSource<'_>,
    window: &[usize],
) -> Result<TruncatedKernel, ChainError> {
    if window.is_empty() {
        return Err(ChainError::EmptyWindow);
    }
    let position: HashMap<usize, usize> =
        window.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut rows = Vec::with_capacity(window.len());
    let mut kill = Vec::with_capacity(window.len());
    let mut leak = Vec::with_capacity(window.len());
    for &s in window {
        let mut row = Vec::new();
        let mut out = 0.0;
        let mut dead = 0.0;
        match source {
            KernelSource::BirthDeath(chain) => {
                let up = chain.up_prob(s)?;
                let mut moves = vec![(s + 1, up)];
                if s > 0 {
                    moves.push((s - 1, 1.0 - up));
                }
                for (t, w) in moves {
                    match position.get(&t) {
                        Some(&j) => row.push((j, w)),
                        None => out += w,
                    }
                }
            }
            KernelSource::Network(net) => {
                net.check(s)?;
                let total = net.conductance[s] + net.killing[s];
                dead = net.killing[s] / total;
                for &(t, c) in net.neighbors(s) {
                    let w = c / total;
                    match position.get(&t) {
                        Some(&j) => row.push((j, w)),
                        None => out += w,
                    }
                }
            }
        }
        row.sort_by_key(|&(j, _)| j);
        rows.push(row);
        kill.push(dead);
        leak.push(out);
    }
    Ok(TruncatedKernel { labels: window.to_vec(), position, rows, kill, leak })
}

impl TruncatedKernel {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Row index of a state label.
    pub fn position(&self, label: usize) -> Option<usize> {
        self.position.get(&label).copied()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|&(_, w)| w).sum()
    }

    pub fn kill(&self, i: usize) -> f64 {
        self.kill[i]
    }

    pub fn leak(&self, i: usize) -> f64 {
        self.leak[i]
    }
}

/// JSON description of a birth-death chain.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChainSpec {
    /// `p_i = p` at every level.
    ConstantDrift { p: f64 },
    /// `values[0] = p_1`, `values[1] = p_2`, ...
    Table { values: Vec<f64> },
    /// Chain whose Green's function is proportional to `Φ(n + offset)`.
    GreensProfile {
        profile: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c: Option<f64>,
        #[serde(default)]
        offset: f64,
    },
    /// Sharpness construction: Green's function proportional to
    /// `Φ((n+M)^4) · exp(-sqrt(log(n+2)))`.
    Sharpness {
        profile: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m: Option<usize>,
    },
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_chain_up_probs() {
        let chain = BirthDeathChain::constant(0.25).unwrap();
        assert_eq!(chain.up_prob(0).unwrap(), 1.0);
        for i in 1..200 {
            assert_eq!(chain.up_prob(i).unwrap(), 0.75);
        }
    }

    #[test]
    fn boundary_drift_rejected() {
        let err = bd_from_drifts("bad", Arc::new(|i| if i == 5 { 0.5 } else { 0.1 }), 10)
            .unwrap_err();
        assert_eq!(err, ChainError::DriftOutOfRange { index: 5, value: 0.5 });
        assert!(BirthDeathChain::constant(-0.5).is_err());
    }

    #[test]
    fn lazy_validation_beyond_range() {
        let chain =
            bd_from_drifts("late", Arc::new(|i| if i == 100 { 0.7 } else { 0.1 }), 10).unwrap();
        assert!(chain.up_prob(99).is_ok());
        assert!(matches!(chain.up_prob(100), Err(ChainError::DriftOutOfRange { index: 100, .. })));
    }

    #[test]
    fn zero_drift_is_a_valid_chain() {
        let chain = BirthDeathChain::constant(0.0).unwrap();
        assert_eq!(chain.up_prob(3).unwrap(), 0.5);
    }

    #[test]
    fn table_chain_ends() {
        let chain = BirthDeathChain::from_table(vec![0.1, 0.2]).unwrap();
        assert_abs_diff_eq!(chain.up_prob(2).unwrap(), 0.7);
        assert_eq!(chain.up_prob(3), Err(ChainError::DriftUndefined { index: 3 }));
    }

    #[test]
    fn network_transitions() {
        // path 0 - 1 - 2 with unit edges
        let net = KilledNetwork::new(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        assert_eq!(net.transition(1, Target::Vertex(0)).unwrap(), 0.5);
        assert_eq!(net.transition(1, Target::Vertex(2)).unwrap(), 0.5);
        assert_eq!(net.transition(1, Target::Graveyard).unwrap(), 0.0);

        let net = net.with_killing(vec![0.0, 2.0, 0.0]).unwrap();
        assert_eq!(net.transition(1, Target::Graveyard).unwrap(), 0.5);

        // star: c(u) = 3 split as 2 + 1, K(u) = 1
        let star = KilledNetwork::new(3, &[(0, 1, 2.0), (0, 2, 1.0)])
            .unwrap()
            .with_killing(vec![1.0, 0.0, 0.0])
            .unwrap();
        assert_eq!(star.transition(0, Target::Vertex(1)).unwrap(), 0.5);
        assert_eq!(star.transition(0, Target::Graveyard).unwrap(), 0.25);
        assert_eq!(star.transition(7, Target::Graveyard), Err(ChainError::UnknownVertex(7)));
    }

    #[test]
    fn birth_death_windows() {
        let chain = BirthDeathChain::constant(0.25).unwrap();
        let k = truncate_kernel(KernelSource::BirthDeath(&chain), &[0, 1, 2]).unwrap();
        assert_eq!(k.leak(2), 0.75);
        assert_eq!(k.leak(0), 0.0);
        for i in 0..3 {
            assert_abs_diff_eq!(k.row_sum(i) + k.leak(i), 1.0, epsilon = 1e-12);
        }
        let single = truncate_kernel(KernelSource::BirthDeath(&chain), &[0]).unwrap();
        assert_eq!(single.leak(0), 1.0);
        assert!(single.row(0).is_empty());
        assert_eq!(
            truncate_kernel(KernelSource::BirthDeath(&chain), &[]).unwrap_err(),
            ChainError::EmptyWindow
        );
    }

    #[test]
    fn full_network_window_is_stochastic() {
        let net = KilledNetwork::new(4, &[(0, 1, 1.0), (1, 2, 3.0), (2, 3, 0.5), (3, 0, 2.0)])
            .unwrap();
        let k = truncate_kernel(KernelSource::Network(&net), &[0, 1, 2, 3]).unwrap();
        for i in 0..4 {
            assert_eq!(k.leak(i), 0.0);
            assert_abs_diff_eq!(k.row_sum(i), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn chain_spec_json() {
        let spec: ChainSpec = serde_json::from_str(r#"{"kind":"constant_drift","p":0.25}"#).unwrap();
        assert_eq!(spec, ChainSpec::ConstantDrift { p: 0.25 });
        let spec: ChainSpec =
            serde_json::from_str(r#"{"kind":"greens_profile","profile":"poly","c":1.0}"#).unwrap();
        assert_eq!(
            spec,
            ChainSpec::GreensProfile { profile: "poly".into(), c: Some(1.0), offset: 0.0 }
        );
        let spec: ChainSpec = serde_json::from_str(r#"{"kind":"table","values":[0.1,0.2]}"#).unwrap();
        assert_eq!(spec, ChainSpec::Table { values: vec![0.1, 0.2] });
    }
}
