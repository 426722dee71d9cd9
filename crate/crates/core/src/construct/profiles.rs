//! Decay profiles `Φ : [0, ∞) → (0, 1]` with `φ = -log Φ`.
//!
//! Profiles are evaluated in log form. Differences `log Φ(x+dx) - log Φ(x)`
//! have their own method so that drifts of chains built from a profile can be
//! computed without catastrophic cancellation far from the origin.

use std::f64::consts::E;
use std::fmt::Debug;
use std::sync::Arc;

use super::ConstructError;

pub trait Decay: Debug + Send + Sync {
    /// Short identifier, e.g. `poly(c=1)`.
    fn name(&self) -> String;

    /// `log Φ(x)`.
    fn log_decay(&self, x: f64) -> f64;

    /// `log Φ(x + dx) - log Φ(x)`.
    fn log_decay_step(&self, x: f64, dx: f64) -> f64 {
        self.log_decay(x + dx) - self.log_decay(x)
    }

    /// `(log Φ)'(x)`.
    fn dlog_decay(&self, x: f64) -> f64;

    /// `log φ⁻¹(y)` for `y >= 0`; `-∞` at `y = 0`.
    fn log_phi_inv(&self, y: f64) -> f64;

    /// Smallest integer from which `Φ` is log-convex.
    fn convex_from(&self) -> usize;
}

pub type Profile = Arc<dyn Decay>;

/// `Φ(x) = (1 + x)^{-c}`.
#[derive(Debug, Clone, Copy)]
pub struct Poly {
    pub c: f64,
}

impl Decay for Poly {
    fn name(&self) -> String {
        format!("poly(c={})", self.c)
    }

    fn log_decay(&self, x: f64) -> f64 {
        -self.c * x.ln_1p()
    }

    fn log_decay_step(&self, x: f64, dx: f64) -> f64 {
        -self.c * (dx / (1.0 + x)).ln_1p()
    }

    fn dlog_decay(&self, x: f64) -> f64 {
        -self.c / (1.0 + x)
    }

    fn log_phi_inv(&self, y: f64) -> f64 {
        let t = y / self.c;
        t + (-(-t).exp_m1()).ln()
    }

    fn convex_from(&self) -> usize {
        0
    }
}

/// `Φ(x) = exp(-sqrt(log(x+2)) + sqrt(log 2))`.
#[derive(Debug, Clone, Copy)]
pub struct SqrtLog;

fn sqrt_ln2() -> f64 {
    std::f64::consts::LN_2.sqrt()
}

impl Decay for SqrtLog {
    fn name(&self) -> String {
        "sqrt_log".into()
    }

    fn log_decay(&self, x: f64) -> f64 {
        sqrt_ln2() - (x + 2.0).ln().sqrt()
    }

    fn log_decay_step(&self, x: f64, dx: f64) -> f64 {
        let a = (x + 2.0).ln();
        let b = a + (dx / (x + 2.0)).ln_1p();
        -(b - a) / (a.sqrt() + b.sqrt())
    }

    fn dlog_decay(&self, x: f64) -> f64 {
        -1.0 / (2.0 * (x + 2.0) * (x + 2.0).ln().sqrt())
    }

    fn log_phi_inv(&self, y: f64) -> f64 {
        let u = (y + sqrt_ln2()).powi(2);
        u + (-2.0 * (-u).exp()).ln_1p()
    }

    fn convex_from(&self) -> usize {
        0
    }
}

/// `Φ(x) = exp(-(h(L) - e))` with `L = log(x + e^e)` and `h(L) = L / log L`,
/// a normalized form of `exp(-log x / log log x)`.
#[derive(Debug, Clone, Copy)]
pub struct LogLog;

fn ee() -> f64 {
    E.exp()
}

fn h_loglog(l: f64) -> f64 {
    l / l.ln()
}

impl Decay for LogLog {
    fn name(&self) -> String {
        "loglog".into()
    }

    fn log_decay(&self, x: f64) -> f64 {
        E - h_loglog((x + ee()).ln())
    }

    fn log_decay_step(&self, x: f64, dx: f64) -> f64 {
        let l = (x + ee()).ln();
        let dl = (dx / (x + ee())).ln_1p();
        let l1 = l + dl;
        let (ln_l, ln_l1) = (l.ln(), l1.ln());
        let num = dl * ln_l - l * (dl / l).ln_1p();
        -num / (ln_l * ln_l1)
    }

    fn dlog_decay(&self, x: f64) -> f64 {
        let l = (x + ee()).ln();
        let ln_l = l.ln();
        -(ln_l - 1.0) / (ln_l * ln_l) / (x + ee())
    }

    fn log_phi_inv(&self, y: f64) -> f64 {
        let target = y + E;
        // h is increasing on [e, ∞); Newton from a point above the root
        let mut l = (target * target.ln()).max(E);
        for _ in 0..100 {
            let ln_l = l.ln();
            let f = h_loglog(l) - target;
            let df = (ln_l - 1.0) / (ln_l * ln_l);
            if df <= 0.0 {
                break;
            }
            let next = (l - f / df).max(E);
            if (next - l).abs() <= 1e-15 * l {
                l = next;
                break;
            }
            l = next;
        }
        l + (-(ee().ln() - l).exp_m1()).ln()
    }

    fn convex_from(&self) -> usize {
        13
    }
}

/// Caps `φ` by `√x`, i.e. `log φ̃⁻¹(y) = max(log φ⁻¹(y), 2 log y)`.
#[derive(Debug, Clone)]
pub struct Capped {
    pub inner: Profile,
}

impl Decay for Capped {
    fn name(&self) -> String {
        format!("capped({})", self.inner.name())
    }

    fn log_decay(&self, x: f64) -> f64 {
        self.inner.log_decay(x).max(-x.sqrt())
    }

    fn dlog_decay(&self, x: f64) -> f64 {
        if self.inner.log_decay(x) >= -x.sqrt() {
            self.inner.dlog_decay(x)
        } else {
            -0.5 / x.sqrt()
        }
    }

    fn log_phi_inv(&self, y: f64) -> f64 {
        self.inner.log_phi_inv(y).max(2.0 * y.ln())
    }

    fn convex_from(&self) -> usize {
        self.inner.convex_from()
    }
}

/// The shipped profiles: three polynomial tails, `sqrt_log` and `loglog`.
pub fn stock_profiles() -> Vec<Profile> {
    vec![
        Arc::new(Poly { c: 0.5 }),
        Arc::new(Poly { c: 1.0 }),
        Arc::new(Poly { c: 2.0 }),
        Arc::new(SqrtLog),
        Arc::new(LogLog),
    ]
}

/// Looks up a profile by name; `c` is the exponent of `poly`.
pub fn profile_by_name(name: &str, c: Option<f64>) -> Result<Profile, ConstructError> {
    match name {
        "poly" => {
            let c = c.unwrap_or(1.0);
            if !(c > 0.0) || !c.is_finite() {
                return Err(ConstructError::InvalidProfile(format!("poly exponent {c}")));
            }
            Ok(Arc::new(Poly { c }))
        }
        "sqrt_log" => Ok(Arc::new(SqrtLog)),
        "loglog" => Ok(Arc::new(LogLog)),
        other => Err(ConstructError::InvalidProfile(format!("unknown profile {other:?}"))),
    }
}

/// Sampled checks: `Φ(0) = 1`, strict decrease, and nonnegative second
/// differences of `log Φ` on `[M, M + 1000]`.
pub fn validate_profile(profile: &dyn Decay) -> Result<(), ConstructError> {
    let at0 = profile.log_decay(0.0);
    if at0.abs() > 1e-9 {
        return Err(ConstructError::InvalidProfile(format!(
            "{}: Φ(0) = {}",
            profile.name(),
            at0.exp()
        )));
    }
    for i in 0..2000 {
        let x = i as f64 * 0.5;
        if profile.log_decay_step(x, 0.5) >= 0.0 {
            return Err(ConstructError::InvalidProfile(format!(
                "{}: not decreasing at {x}",
                profile.name()
            )));
        }
    }
    let m = profile.convex_from();
    for n in m..m + 1000 {
        let x = n as f64;
        let second = profile.log_decay_step(x + 1.0, 1.0) - profile.log_decay_step(x, 1.0);
        if second < -1e-12 {
            return Err(ConstructError::NotLogConvex { at: n + 1 });
        }
    }
    Ok(())
}
