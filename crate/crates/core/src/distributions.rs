//! Shifted count distributions and the exponential distribution.
//!
//! All count laws live on `{1, 2, ...}` and are parameterised by their mean
//! `μ ≥ 1`; `μ = 1` is the point mass at 1. The negative binomial adds the
//! shifted variance-to-mean ratio `ν = Var(Y) / (E[Y] − 1) > 1`, which maps to
//! the textbook parameters through
//!
//! ```text
//! r = (μ − 1) / (ν − 1)        π = 1 − 1/ν
//! p(k) = C(k + r − 2, k − 1) (1/ν)^r π^(k−1)
//! ```
//!
//! Probabilities are evaluated in log space. The cdf and survival function
//! accumulate the pmf through the ratio recursion `p(k+1)/p(k)`, so the pmf and
//! cdf paths agree to rounding. Sampling inverts the cdf exactly.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::{Error, Result};

/// Survival probabilities below this value force a renewal (hazard = 1).
pub const SURVIVAL_FLOOR: f64 = 1e-300;

/// Inversion sampling never walks past this support value.
pub const SAMPLING_CAP: u64 = 1_000_000;

/// Lower bound of the dispersion search, and the value used for degenerate fits.
pub const NU_MIN: f64 = 1.0 + 1e-6;

/// Upper bound of the dispersion search.
pub const NU_MAX: f64 = 1e4;

const NU_SEARCH_TOL: f64 = 1e-8;

/// Distribution family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    ShiftedPoisson,
    ShiftedGeometric,
    ShiftedNegBin,
    Exponential,
}

impl DistributionKind {
    pub fn name(self) -> &'static str {
        match self {
            DistributionKind::ShiftedPoisson => "shifted_poisson",
            DistributionKind::ShiftedGeometric => "shifted_geometric",
            DistributionKind::ShiftedNegBin => "shifted_negbin",
            DistributionKind::Exponential => "exponential",
        }
    }

    pub fn is_count(self) -> bool {
        !matches!(self, DistributionKind::Exponential)
    }
}

/// A fully parameterised distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionSpec {
    ShiftedPoisson { mu: f64 },
    ShiftedGeometric { mu: f64 },
    ShiftedNegBin { mu: f64, nu: f64 },
    Exponential { mu: f64 },
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DistributionSpec::ShiftedNegBin { mu, nu } => {
                write!(f, "shifted_negbin(mu={mu}, nu={nu})")
            }
            other => write!(f, "{}(mu={})", other.kind().name(), other.mu()),
        }
    }
}

/// Hazard rate together with a flag telling whether it was forced to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazardRate {
    pub value: f64,
    /// Survival fell below [`SURVIVAL_FLOOR`]; the value was saturated to 1.
    pub saturated: bool,
}

/// A sampled support value drawn conditional on exceeding some elapsed time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidualDraw {
    pub value: u64,
    /// The conditioning event had negligible probability; the draw was forced
    /// to `elapsed + 1`.
    pub saturated: bool,
}

/// Output of [`fit_mle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleFit {
    pub spec: DistributionSpec,
    /// Negative binomial fit on data with no variation above 1; `ν` was
    /// clipped to [`NU_MIN`].
    pub degenerate: bool,
    pub log_likelihood: f64,
}

impl DistributionSpec {
    pub fn shifted_poisson(mu: f64) -> Result<Self> {
        Self::ShiftedPoisson { mu }.validated()
    }

    pub fn shifted_geometric(mu: f64) -> Result<Self> {
        Self::ShiftedGeometric { mu }.validated()
    }

    pub fn shifted_negbin(mu: f64, nu: f64) -> Result<Self> {
        Self::ShiftedNegBin { mu, nu }.validated()
    }

    pub fn exponential(mu: f64) -> Result<Self> {
        Self::Exponential { mu }.validated()
    }

    /// Count law of the given kind with mean `mu` and, for the negative
    /// binomial, dispersion `nu`.
    pub fn count(kind: DistributionKind, mu: f64, nu: Option<f64>) -> Result<Self> {
        match kind {
            DistributionKind::ShiftedPoisson => Self::shifted_poisson(mu),
            DistributionKind::ShiftedGeometric => Self::shifted_geometric(mu),
            DistributionKind::ShiftedNegBin => Self::shifted_negbin(
                mu,
                nu.ok_or_else(|| Error::InvalidParameter {
                    kind: kind.name(),
                    message: "missing dispersion".into(),
                })?,
            ),
            DistributionKind::Exponential => Err(Error::UnsupportedKind {
                op: "count",
                kind: kind.name(),
            }),
        }
    }

    /// Checks the parameter domain and returns `self`.
    pub fn validated(self) -> Result<Self> {
        let kind = self.kind().name();
        let bad = |message: String| Err(Error::InvalidParameter { kind, message });
        match self {
            DistributionSpec::Exponential { mu } => {
                if !(mu.is_finite() && mu > 0.0) {
                    return bad(format!("mean must be finite and > 0, got {mu}"));
                }
            }
            DistributionSpec::ShiftedNegBin { mu, nu } => {
                if !(mu.is_finite() && mu >= 1.0) {
                    return bad(format!("mean must be finite and >= 1, got {mu}"));
                }
                if !(nu.is_finite() && nu > 1.0) {
                    return bad(format!("dispersion must be finite and > 1, got {nu}"));
                }
            }
            DistributionSpec::ShiftedPoisson { mu } | DistributionSpec::ShiftedGeometric { mu } => {
                if !(mu.is_finite() && mu >= 1.0) {
                    return bad(format!("mean must be finite and >= 1, got {mu}"));
                }
            }
        }
        Ok(self)
    }

    pub fn kind(&self) -> DistributionKind {
        match self {
            DistributionSpec::ShiftedPoisson { .. } => DistributionKind::ShiftedPoisson,
            DistributionSpec::ShiftedGeometric { .. } => DistributionKind::ShiftedGeometric,
            DistributionSpec::ShiftedNegBin { .. } => DistributionKind::ShiftedNegBin,
            DistributionSpec::Exponential { .. } => DistributionKind::Exponential,
        }
    }

    pub fn mu(&self) -> f64 {
        match *self {
            DistributionSpec::ShiftedPoisson { mu }
            | DistributionSpec::ShiftedGeometric { mu }
            | DistributionSpec::ShiftedNegBin { mu, .. }
            | DistributionSpec::Exponential { mu } => mu,
        }
    }

    pub fn nu(&self) -> Option<f64> {
        match *self {
            DistributionSpec::ShiftedNegBin { nu, .. } => Some(nu),
            _ => None,
        }
    }

    /// Same family and dispersion with a different mean.
    pub fn with_mean(&self, mu: f64) -> Result<Self> {
        match *self {
            DistributionSpec::ShiftedPoisson { .. } => Self::shifted_poisson(mu),
            DistributionSpec::ShiftedGeometric { .. } => Self::shifted_geometric(mu),
            DistributionSpec::ShiftedNegBin { nu, .. } => Self::shifted_negbin(mu, nu),
            DistributionSpec::Exponential { .. } => Self::exponential(mu),
        }
    }

    pub fn mean(&self) -> f64 {
        self.mu()
    }

    pub fn variance(&self) -> f64 {
        match *self {
            DistributionSpec::ShiftedPoisson { mu } => mu - 1.0,
            DistributionSpec::ShiftedGeometric { mu } => mu * (mu - 1.0),
            DistributionSpec::ShiftedNegBin { mu, nu } => nu * (mu - 1.0),
            DistributionSpec::Exponential { mu } => mu * mu,
        }
    }

    /// Point mass at 1.
    fn is_degenerate(&self) -> bool {
        self.kind().is_count() && self.mu() == 1.0
    }

    fn require_count(&self, op: &'static str) -> Result<()> {
        if self.kind().is_count() {
            Ok(())
        } else {
            Err(Error::UnsupportedKind {
                op,
                kind: self.kind().name(),
            })
        }
    }

    /// `ln P(Y = k)` for `k ≥ 1`.
    pub fn ln_pmf(&self, k: u64) -> Result<f64> {
        self.require_count("pmf")?;
        if k < 1 {
            return Err(Error::Domain(format!("pmf argument must be >= 1, got {k}")));
        }
        Ok(self.ln_pmf_unchecked(k))
    }

    pub fn pmf(&self, k: u64) -> Result<f64> {
        self.ln_pmf(k).map(f64::exp)
    }

    fn ln_pmf_unchecked(&self, k: u64) -> f64 {
        if self.is_degenerate() {
            return if k == 1 { 0.0 } else { f64::NEG_INFINITY };
        }
        let j = (k - 1) as f64;
        match *self {
            DistributionSpec::ShiftedGeometric { mu } => -mu.ln() + j * ((mu - 1.0).ln() - mu.ln()),
            DistributionSpec::ShiftedPoisson { mu } => {
                let lambda = mu - 1.0;
                -lambda + j * lambda.ln() - ln_gamma(k as f64)
            }
            DistributionSpec::ShiftedNegBin { mu, nu } => {
                let r = (mu - 1.0) / (nu - 1.0);
                let ln_nu = (nu - 1.0).ln_1p();
                ln_rising(r, k - 1) - ln_gamma(k as f64) - r * ln_nu + j * ((nu - 1.0).ln() - ln_nu)
            }
            DistributionSpec::Exponential { .. } => unreachable!("count kinds only"),
        }
    }

    /// `ln(p(k+1) / p(k))`.
    fn ln_ratio(&self, k: u64) -> f64 {
        match *self {
            DistributionSpec::ShiftedGeometric { mu } => (mu - 1.0).ln() - mu.ln(),
            DistributionSpec::ShiftedPoisson { mu } => (mu - 1.0).ln() - (k as f64).ln(),
            DistributionSpec::ShiftedNegBin { mu, nu } => {
                let r = (mu - 1.0) / (nu - 1.0);
                (k as f64 - 1.0 + r).ln() - (k as f64).ln() + (nu - 1.0).ln() - (nu - 1.0).ln_1p()
            }
            DistributionSpec::Exponential { .. } => unreachable!("count kinds only"),
        }
    }

    fn walk_from(&self, k: u64) -> PmfWalk<'_> {
        PmfWalk {
            spec: self,
            k,
            ln_p: self.ln_pmf_unchecked(k),
        }
    }

    /// `P(Y ≤ k)`, with `F(0) = 0`.
    pub fn cdf(&self, k: u64) -> Result<f64> {
        self.require_count("cdf")?;
        if k == 0 {
            return Ok(0.0);
        }
        if self.is_degenerate() {
            return Ok(1.0);
        }
        let total: f64 = self.walk_from(1).take(k as usize).map(|(_, p)| p).sum();
        Ok(total.min(1.0))
    }

    /// `P(Y > k)`.
    ///
    /// Uses `1 − F(k)` while that is well conditioned and sums the upper tail
    /// otherwise, so small survival probabilities keep their relative accuracy.
    pub fn survival(&self, k: u64) -> Result<f64> {
        self.require_count("survival")?;
        if k == 0 {
            return Ok(1.0);
        }
        if self.is_degenerate() {
            return Ok(0.0);
        }
        if let DistributionSpec::ShiftedGeometric { mu } = *self {
            return Ok((k as f64 * ((mu - 1.0).ln() - mu.ln())).exp());
        }
        let f = self.cdf(k)?;
        if f < 0.5 {
            return Ok(1.0 - f);
        }
        Ok(self.tail_sum(k + 1))
    }

    /// `Σ_{j ≥ k0} p(j)`, stopped once the remainder is below rounding.
    fn tail_sum(&self, k0: u64) -> f64 {
        let mut acc = 0.0;
        for (k, p) in self.walk_from(k0) {
            acc += p;
            let ratio = self.ln_ratio(k).exp();
            // past the mode the remaining tail is bounded by a geometric series
            if ratio < 1.0 && p * ratio / (1.0 - ratio) <= acc * 1e-17 {
                break;
            }
            if p == 0.0 && ratio < 1.0 {
                break;
            }
            if k >= k0 + SAMPLING_CAP {
                break;
            }
        }
        acc
    }

    /// `h(k) = P(Y = k) / P(Y ≥ k)`.
    pub fn hazard(&self, k: u64) -> Result<HazardRate> {
        self.require_count("hazard")?;
        if k < 1 {
            return Err(Error::Domain(format!("hazard argument must be >= 1, got {k}")));
        }
        if let DistributionSpec::ShiftedGeometric { mu } = *self {
            return Ok(HazardRate {
                value: 1.0 / mu,
                saturated: false,
            });
        }
        let surv = self.survival(k - 1)?;
        if surv < SURVIVAL_FLOOR {
            log::warn!("hazard of {self} at {k}: survival {surv:e} below floor, forcing renewal");
            return Ok(HazardRate {
                value: 1.0,
                saturated: true,
            });
        }
        Ok(HazardRate {
            value: (self.pmf(k)? / surv).min(1.0),
            saturated: false,
        })
    }

    /// Log density of the exponential law.
    pub fn ln_pdf(&self, x: f64) -> Result<f64> {
        match *self {
            DistributionSpec::Exponential { mu } => {
                if !(x >= 0.0) {
                    return Err(Error::Domain(format!("exponential density at {x}")));
                }
                Ok(-mu.ln() - x / mu)
            }
            _ => Err(Error::UnsupportedKind {
                op: "pdf",
                kind: self.kind().name(),
            }),
        }
    }

    /// `ln P(Y = x)` for count kinds or the log density for the exponential.
    pub fn ln_likelihood_at(&self, x: f64) -> Result<f64> {
        if self.kind().is_count() {
            let k = count_value(x)?;
            self.ln_pmf(k)
        } else {
            self.ln_pdf(x)
        }
    }

    /// Draws a count `> elapsed` from the law conditioned on exceeding `elapsed`.
    pub fn sample_count_above<R: rand::Rng + ?Sized>(&self, elapsed: u64, rng: &mut R) -> Result<ResidualDraw> {
        self.require_count("sample")?;
        let u = crate::rng::open01(rng);
        let forced = ResidualDraw {
            value: elapsed + 1,
            saturated: true,
        };
        if self.is_degenerate() {
            return Ok(if elapsed == 0 {
                ResidualDraw {
                    value: 1,
                    saturated: false,
                }
            } else {
                forced
            });
        }
        let value = if let DistributionSpec::ShiftedGeometric { mu } = *self {
            // memoryless: the residual is a fresh draw, inverted in closed form
            let ln_q = (mu - 1.0).ln() - mu.ln();
            let g = (u.ln() / ln_q).ceil().max(1.0);
            if g > SAMPLING_CAP as f64 {
                return Err(self.cap_error());
            }
            elapsed + g as u64
        } else {
            let surv = self.survival(elapsed)?;
            if surv < SURVIVAL_FLOOR {
                return Ok(forced);
            }
            let target = u * surv;
            let mut acc = 0.0;
            let mut chosen = None;
            for (k, p) in self.walk_from(elapsed + 1) {
                acc += p;
                if acc >= target {
                    chosen = Some(k);
                    break;
                }
                let ratio = self.ln_ratio(k).exp();
                // remaining mass lost to rounding
                if ratio < 1.0 && p * ratio / (1.0 - ratio) <= acc * 1e-16 {
                    chosen = Some(k);
                    break;
                }
                if k >= SAMPLING_CAP {
                    return Err(self.cap_error());
                }
            }
            chosen.ok_or_else(|| self.cap_error())?
        };
        if value > SAMPLING_CAP {
            return Err(self.cap_error());
        }
        Ok(ResidualDraw {
            value,
            saturated: false,
        })
    }

    /// Draws a count from the law.
    pub fn sample_count<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<u64> {
        Ok(self.sample_count_above(0, rng)?.value)
    }

    /// Draws from the exponential law by inversion.
    pub fn sample_real<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match *self {
            DistributionSpec::Exponential { mu } => Ok(-mu * crate::rng::open01(rng).ln()),
            _ => Err(Error::UnsupportedKind {
                op: "sample_real",
                kind: self.kind().name(),
            }),
        }
    }

    /// Draws a support value of any kind.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        if self.kind().is_count() {
            self.sample_count(rng).map(|k| k as f64)
        } else {
            self.sample_real(rng)
        }
    }

    fn cap_error(&self) -> Error {
        Error::SamplingCap {
            cap: SAMPLING_CAP,
            spec: self.to_string(),
        }
    }

    /// Sum of log-likelihood terms over `data`.
    pub fn log_likelihood(&self, data: &[f64]) -> Result<f64> {
        data.iter().map(|&x| self.ln_likelihood_at(x)).sum()
    }
}

/// Iterator over `(k, p(k))` driven by the ratio recursion in log space.
struct PmfWalk<'a> {
    spec: &'a DistributionSpec,
    k: u64,
    ln_p: f64,
}

impl Iterator for PmfWalk<'_> {
    type Item = (u64, f64);

    fn next(&mut self) -> Option<(u64, f64)> {
        let item = (self.k, self.ln_p.exp());
        self.ln_p += self.spec.ln_ratio(self.k);
        self.k += 1;
        Some(item)
    }
}

/// `ln Γ(r + n) − ln Γ(r)`; summed directly for small `n` to avoid cancellation.
pub(crate) fn ln_rising(r: f64, n: u64) -> f64 {
    if n <= 64 {
        (0..n).map(|j| (r + j as f64).ln()).sum()
    } else {
        ln_gamma(r + n as f64) - ln_gamma(r)
    }
}

fn count_value(x: f64) -> Result<u64> {
    if x >= 1.0 && x.fract() == 0.0 && x.is_finite() {
        Ok(x as u64)
    } else {
        Err(Error::Domain(format!("{x} is not a positive integer")))
    }
}

/// Maximum-likelihood fit of a distribution family.
///
/// Geometric, Poisson and exponential means are the sample mean. For the
/// negative binomial the mean is also the sample mean (it decouples from the
/// dispersion), and `ν` maximises the profile likelihood over
/// `[NU_MIN, NU_MAX]`, searched in `ln(ν − 1)`.
pub fn fit_mle(kind: DistributionKind, data: &[f64]) -> Result<MleFit> {
    if data.is_empty() {
        return Err(Error::InvalidData(format!("cannot fit {} to no data", kind.name())));
    }
    if kind.is_count() {
        for &x in data {
            count_value(x)?;
        }
    } else if data.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::Domain("exponential data must be positive".into()));
    }
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    let (spec, degenerate) = match kind {
        DistributionKind::ShiftedPoisson => (DistributionSpec::shifted_poisson(mean)?, false),
        DistributionKind::ShiftedGeometric => (DistributionSpec::shifted_geometric(mean)?, false),
        DistributionKind::Exponential => (DistributionSpec::exponential(mean)?, false),
        DistributionKind::ShiftedNegBin => {
            if mean == 1.0 {
                (DistributionSpec::shifted_negbin(1.0, NU_MIN)?, true)
            } else {
                let nu = nb_profile_dispersion(mean, data);
                (DistributionSpec::shifted_negbin(mean, nu)?, false)
            }
        }
    };
    let log_likelihood = spec.log_likelihood(data)?;
    Ok(MleFit {
        spec,
        degenerate,
        log_likelihood,
    })
}

/// Histogram of count data: value → multiplicity.
fn histogram(data: &[f64]) -> BTreeMap<u64, f64> {
    let mut h = BTreeMap::new();
    for &x in data {
        *h.entry(x as u64).or_insert(0.0) += 1.0;
    }
    h
}

/// NB log-likelihood in `ν` at fixed mean, up to terms constant in `ν`.
pub(crate) fn nb_profile_objective(mu: f64, nu: f64, hist: &BTreeMap<u64, f64>) -> f64 {
    let r = (mu - 1.0) / (nu - 1.0);
    let ln_nu = (nu - 1.0).ln_1p();
    let ln_pi = (nu - 1.0).ln() - ln_nu;
    hist.iter()
        .map(|(&k, &c)| c * (ln_rising(r, k - 1) - r * ln_nu + (k - 1) as f64 * ln_pi))
        .sum()
}

fn nb_profile_dispersion(mu: f64, data: &[f64]) -> f64 {
    let hist = histogram(data);
    maximize_dispersion(|nu| nb_profile_objective(mu, nu, &hist))
}

/// Maximises `objective(ν)` over `[NU_MIN, NU_MAX]` by a bounded scalar search
/// in `x = ln(ν − 1)`.
pub(crate) fn maximize_dispersion(objective: impl Fn(f64) -> f64) -> f64 {
    let lo = (NU_MIN - 1.0).ln();
    let hi = (NU_MAX - 1.0).ln();
    let x = brent_minimize(|x| -objective(1.0 + x.exp()), lo, hi, NU_SEARCH_TOL);
    // the search never evaluates the end points exactly; compare against them
    let mut best = (x, objective(1.0 + x.exp()));
    for edge in [lo, hi] {
        let v = objective(1.0 + edge.exp());
        if v > best.1 {
            best = (edge, v);
        }
    }
    (1.0 + best.0.exp()).clamp(NU_MIN, NU_MAX)
}

/// Brent's bounded minimisation (golden section with parabolic steps).
pub(crate) fn brent_minimize(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = (lo, hi);
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..500 {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn geo(mu: f64) -> DistributionSpec {
        DistributionSpec::shifted_geometric(mu).unwrap()
    }
    fn nb(mu: f64, nu: f64) -> DistributionSpec {
        DistributionSpec::shifted_negbin(mu, nu).unwrap()
    }
    fn po(mu: f64) -> DistributionSpec {
        DistributionSpec::shifted_poisson(mu).unwrap()
    }

    #[test]
    fn pmf_examples() {
        assert_abs_diff_eq!(geo(2.0).pmf(1).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(geo(1.0).pmf(1).unwrap(), 1.0);
        assert_eq!(geo(1.0).pmf(2).unwrap(), 0.0);
        assert_abs_diff_eq!(nb(3.0, 3.0).pmf(2).unwrap(), 2.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn pmf_domain_and_kind_errors() {
        assert!(matches!(geo(2.0).pmf(0), Err(Error::Domain(_))));
        let e = DistributionSpec::exponential(1.0).unwrap();
        assert!(matches!(e.pmf(1), Err(Error::UnsupportedKind { .. })));
        assert!(DistributionSpec::shifted_negbin(2.0, 1.0).is_err());
        assert!(DistributionSpec::shifted_poisson(0.5).is_err());
        assert!(DistributionSpec::exponential(0.0).is_err());
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(nb(4.0, 2.0).cdf(0).unwrap(), 0.0);
        assert_abs_diff_eq!(geo(2.0).cdf(2).unwrap(), 0.75, epsilon = 1e-15);
        // exact rational sum of k (1/2)^(k+1) for k = 1..5
        assert_abs_diff_eq!(nb(3.0, 2.0).cdf(5).unwrap(), 57.0 / 64.0, epsilon = 1e-14);
    }

    #[test]
    fn hazard_examples() {
        let g = geo(4.0);
        for k in 1..=50 {
            assert_abs_diff_eq!(g.hazard(k).unwrap().value, 0.25, epsilon = 1e-12);
        }
        for spec in [nb(5.0, 4.0), po(3.0), nb(2.5, 9.0)] {
            assert_abs_diff_eq!(spec.hazard(1).unwrap().value, spec.pmf(1).unwrap(), epsilon = 1e-15);
        }
    }

    #[test]
    fn nb_hazard_direction_follows_shape() {
        // values from a 40-digit summation of the pmf
        let aging = nb(5.0, 4.0); // r = 4/3 > 1
        assert_abs_diff_eq!(
            aging.hazard(1).unwrap().value,
            0.157_490_131_236_859_15,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            aging.hazard(10).unwrap().value,
            0.230_056_679_833_154_1,
            epsilon = 1e-12
        );
        let clustering = nb(5.0, 10.0); // r = 4/9 < 1
        assert_abs_diff_eq!(
            clustering.hazard(1).unwrap().value,
            0.359_381_366_380_462_75,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            clustering.hazard(10).unwrap().value,
            0.133_932_267_281_356_13,
            epsilon = 1e-12
        );
    }

    #[test]
    fn hazard_saturates_in_far_tail() {
        let p = po(2.0);
        let h = p.hazard(400).unwrap();
        assert!(h.saturated);
        assert_eq!(h.value, 1.0);
        assert!(!p.hazard(3).unwrap().saturated);
    }

    #[test]
    fn survival_keeps_relative_accuracy() {
        let p = nb(3.0, 2.0);
        // P(Y > k) = (k + 2) / 2^(k+1) for r = 2, π = 1/2
        for k in [1u64, 5, 20, 60] {
            let exact = (k as f64 + 2.0) / 2f64.powi(k as i32 + 1);
            assert!((p.survival(k).unwrap() / exact - 1.0).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn sampling_examples() {
        let mut r = rng::stream(1, 0);
        for _ in 0..100 {
            assert_eq!(geo(1.0).sample_count(&mut r).unwrap(), 1);
        }
        let n = 100_000;
        let g = geo(3.0);
        let mean = (0..n).map(|_| g.sample_count(&mut r).unwrap() as f64).sum::<f64>() / n as f64;
        assert!((2.97..=3.03).contains(&mean), "mean {mean}");

        let d = nb(4.0, 3.0);
        let xs: Vec<f64> = (0..n).map(|_| d.sample_count(&mut r).unwrap() as f64).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let ratio = var / (m - 1.0);
        assert!((2.8..=3.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn residual_sampling_respects_elapsed() {
        let mut r = rng::stream(3, 0);
        for spec in [nb(5.0, 4.0), po(4.0), geo(3.0)] {
            for _ in 0..200 {
                let d = spec.sample_count_above(7, &mut r).unwrap();
                assert!(d.value > 7);
            }
        }
        // far beyond the support of a tight Poisson the draw is forced
        let d = po(2.0).sample_count_above(500, &mut r).unwrap();
        assert!(d.saturated);
        assert_eq!(d.value, 501);
    }

    #[test]
    fn residual_distribution_matches_conditional_pmf() {
        let spec = nb(6.0, 3.0);
        let tau = 4;
        let mut r = rng::stream(9, 0);
        let n = 200_000;
        let mut counts = BTreeMap::new();
        for _ in 0..n {
            *counts
                .entry(spec.sample_count_above(tau, &mut r).unwrap().value)
                .or_insert(0usize) += 1;
        }
        let surv = spec.survival(tau).unwrap();
        for k in 5..=9 {
            let expected = spec.pmf(k).unwrap() / surv;
            let got = counts.get(&k).copied().unwrap_or(0) as f64 / n as f64;
            let se = (expected * (1.0 - expected) / n as f64).sqrt();
            assert!((got - expected).abs() < 4.0 * se, "k={k} got {got} expected {expected}");
        }
    }

    #[test]
    fn fit_examples() {
        let f = fit_mle(DistributionKind::ShiftedGeometric, &[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(f.spec.mu(), 4.0);
        let f = fit_mle(DistributionKind::ShiftedPoisson, &[1.0, 1.0, 4.0]).unwrap();
        assert_eq!(f.spec.mu(), 2.0);
        let f = fit_mle(DistributionKind::Exponential, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(f.spec.mu(), 2.0);
    }

    #[test]
    fn nb_fit_recovers_parameters() {
        let truth = nb(4.0, 3.0);
        let mut r = rng::stream(11, 0);
        let data: Vec<f64> = (0..10_000)
            .map(|_| truth.sample_count(&mut r).unwrap() as f64)
            .collect();
        let f = fit_mle(DistributionKind::ShiftedNegBin, &data).unwrap();
        assert!((3.9..=4.1).contains(&f.spec.mu()), "{}", f.spec);
        assert!((2.7..=3.3).contains(&f.spec.nu().unwrap()), "{}", f.spec);
        assert!(!f.degenerate);
    }

    #[test]
    fn nb_fit_on_all_ones_is_degenerate() {
        let f = fit_mle(DistributionKind::ShiftedNegBin, &[1.0; 5]).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.spec.mu(), 1.0);
        assert_eq!(f.spec.nu(), Some(NU_MIN));
        assert_eq!(f.log_likelihood, 0.0);
    }

    #[test]
    fn nb_fit_is_a_local_maximum() {
        let data = [1.0, 2.0, 2.0, 5.0, 9.0, 3.0, 1.0, 14.0];
        let f = fit_mle(DistributionKind::ShiftedNegBin, &data).unwrap();
        let (mu, nu) = (f.spec.mu(), f.spec.nu().unwrap());
        for (dm, dn) in [(1.01, 1.0), (0.99, 1.0), (1.0, 1.01), (1.0, 0.99)] {
            let other = nb(mu * dm, 1.0 + (nu - 1.0) * dn);
            assert!(other.log_likelihood(&data).unwrap() < f.log_likelihood);
        }
    }

    #[test]
    fn underdispersed_nb_fit_hits_lower_bound() {
        let f = fit_mle(DistributionKind::ShiftedNegBin, &[20.0; 10]).unwrap();
        assert!((f.spec.nu().unwrap() - NU_MIN).abs() < 1e-9);
    }

    #[test]
    fn fit_rejects_bad_data() {
        assert!(fit_mle(DistributionKind::ShiftedPoisson, &[]).is_err());
        assert!(fit_mle(DistributionKind::ShiftedPoisson, &[0.0, 2.0]).is_err());
        assert!(fit_mle(DistributionKind::ShiftedGeometric, &[1.5]).is_err());
        assert!(fit_mle(DistributionKind::Exponential, &[-1.0]).is_err());
    }

    #[test]
    fn exponential_sampling_mean() {
        let e = DistributionSpec::exponential(0.5).unwrap();
        let mut r = rng::stream(5, 0);
        let n = 100_000;
        let m = (0..n).map(|_| e.sample_real(&mut r).unwrap()).sum::<f64>() / n as f64;
        assert!((m - 0.5).abs() < 4.0 * 0.5 / (n as f64).sqrt());
    }

    #[test]
    fn brent_finds_quadratic_minimum() {
        let x = brent_minimize(|x| (x - 1.234).powi(2), -10.0, 10.0, 1e-10);
        assert_abs_diff_eq!(x, 1.234, epsilon = 1e-7);
    }

    fn truncation_point(spec: &DistributionSpec) -> u64 {
        (spec.mean() + 50.0 * spec.variance().sqrt()).ceil() as u64
    }

    fn count_spec() -> impl Strategy<Value = DistributionSpec> {
        prop_oneof![
            (1.0f64..30.0).prop_map(po),
            (1.0f64..30.0).prop_map(geo),
            (1.0f64..30.0, 1.01f64..20.0)
                .prop_filter("shape r >= 0.25", |(m, v)| (m - 1.0) / (v - 1.0) >= 0.25)
                .prop_map(|(m, v)| nb(m, v)),
        ]
    }

    #[test]
    fn heavy_tailed_nb_normalises_with_wider_truncation() {
        // r = 0.09: the mean + 50 sd cut leaves ~2e-9 of mass, so sum further out
        let spec = nb(2.342, 15.95);
        let total: f64 = (1..=2000).map(|k| spec.pmf(k).unwrap()).sum();
        assert!(total > 1.0 - 1e-12);
        assert!(spec.survival(2000).unwrap() < 1e-12);
    }

    proptest! {
        #[test]
        fn pmf_normalises_and_mean_matches(spec in count_spec()) {
            let kmax = truncation_point(&spec);
            let mut total = 0.0;
            let mut first_moment = 0.0;
            for k in 1..=kmax {
                let p = spec.pmf(k).unwrap();
                prop_assert!(p >= 0.0);
                total += p;
                first_moment += k as f64 * p;
            }
            prop_assert!(total > 1.0 - 1e-9, "total {}", total);
            prop_assert!((first_moment - spec.mean()).abs() <= 1e-6 * spec.mean());
        }

        #[test]
        fn cdf_is_monotone_and_bounded(spec in count_spec()) {
            let mut prev = 0.0;
            for k in 0..60 {
                let f = spec.cdf(k).unwrap();
                prop_assert!(f >= prev && f <= 1.0);
                prev = f;
            }
        }

        #[test]
        fn nb_with_nu_equal_mu_is_geometric(mu in 1.5f64..12.0) {
            let a = nb(mu, mu);
            let b = geo(mu);
            for k in 1..=100 {
                prop_assert!((a.pmf(k).unwrap() - b.pmf(k).unwrap()).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn nb_with_nu_equal_mu_is_geometric_at_named_means() {
        for mu in [2.0, 3.5, 10.0] {
            for k in 1..=100 {
                assert_abs_diff_eq!(nb(mu, mu).pmf(k).unwrap(), geo(mu).pmf(k).unwrap(), epsilon = 1e-12);
            }
        }
    }
}
