//! The discrete-time model lattice.
//!
//! A model pairs an interval family (geometric or negative binomial) with a
//! size family (Poisson or negative binomial) and a modulation that supplies
//! the conditional means:
//!
//! - `Static`: i.i.d. laws with maximum-likelihood parameters.
//! - `Ewma`: means are the EWMA of past observations; only dispersions are fit.
//! - `StationaryAr`: means follow the stationary AR recursion around the
//!   sample mean; only dispersions are fit.
//! - `Rnn`: means come from a global LSTM trained by [`crate::neural`].
//!
//! Forecasts are parametric-bootstrap trajectories. Each trajectory starts
//! from the state filtered through the history and from the elapsed gap since
//! the last issue point, draws the residual interval conditional on exceeding
//! that gap, and feeds every realised `(Q, M)` back into the modulator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{fit_mle, maximize_dispersion, DistributionKind, DistributionSpec, NU_MIN};
use crate::modulators::{EwmaConfig, MeanRecursion, ModulatorState, StationaryArConfig};
use crate::neural::{
    train_global, HeadKinds, IntervalHead, NetworkState, RnnParams, RnnShape, SizeHead, TrainConfig, TrainSeries,
};
use crate::series::{decompose, DemandSeries, SizeIntervalSeries};
use crate::{rng, Error, Result};

/// Default number of bootstrap trajectories.
pub const DEFAULT_PATHS: usize = 250;

/// Default quantile levels reported with every forecast.
pub const DEFAULT_LEVELS: [f64; 3] = [0.1, 0.5, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalFamily {
    Geometric,
    NegBin,
}

impl IntervalFamily {
    fn code(self) -> &'static str {
        match self {
            IntervalFamily::Geometric => "G",
            IntervalFamily::NegBin => "NB",
        }
    }

    fn kind(self) -> DistributionKind {
        match self {
            IntervalFamily::Geometric => DistributionKind::ShiftedGeometric,
            IntervalFamily::NegBin => DistributionKind::ShiftedNegBin,
        }
    }

    fn head(self) -> IntervalHead {
        match self {
            IntervalFamily::Geometric => IntervalHead::Geometric,
            IntervalFamily::NegBin => IntervalHead::NegBin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeFamily {
    Poisson,
    NegBin,
}

impl SizeFamily {
    fn code(self) -> &'static str {
        match self {
            SizeFamily::Poisson => "Po",
            SizeFamily::NegBin => "NB",
        }
    }

    pub(crate) fn kind(self) -> DistributionKind {
        match self {
            SizeFamily::Poisson => DistributionKind::ShiftedPoisson,
            SizeFamily::NegBin => DistributionKind::ShiftedNegBin,
        }
    }

    pub(crate) fn head(self) -> SizeHead {
        match self {
            SizeFamily::Poisson => SizeHead::Poisson,
            SizeFamily::NegBin => SizeHead::NegBin,
        }
    }
}

/// Architecture and optimiser settings of an RNN model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RnnConfig {
    pub hidden_width: usize,
    pub num_layers: usize,
    pub train: TrainConfig,
}

impl Default for RnnConfig {
    fn default() -> Self {
        Self {
            hidden_width: 5,
            num_layers: 1,
            train: TrainConfig {
                epochs: 200,
                ..TrainConfig::default()
            },
        }
    }
}

/// Source of the conditional means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Modulation {
    Static,
    Ewma { alpha: f64 },
    StationaryAr { phi: f64, beta: f64 },
    Rnn(RnnConfig),
}

impl Modulation {
    pub fn ewma() -> Self {
        Modulation::Ewma { alpha: 0.1 }
    }

    pub fn stationary_ar() -> Self {
        Modulation::StationaryAr { phi: 0.1, beta: 0.8 }
    }

    fn label(&self) -> &'static str {
        match self {
            Modulation::Static => "Static",
            Modulation::Ewma { .. } => "EWMA",
            Modulation::StationaryAr { .. } => "AR",
            Modulation::Rnn(_) => "RNN",
        }
    }

    fn slug(&self) -> &'static str {
        match self {
            Modulation::Static => "static",
            Modulation::Ewma { .. } => "ewma",
            Modulation::StationaryAr { .. } => "ar",
            Modulation::Rnn(_) => "rnn",
        }
    }
}

/// An unfitted model: families, modulation and likelihood options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTemplate {
    pub interval: IntervalFamily,
    pub size: SizeFamily,
    pub modulation: Modulation,
    /// Adds `ln P(Q > tail_gap)` for the censored final interval.
    #[serde(default)]
    pub censor_tail: bool,
}

impl ModelTemplate {
    pub fn new(interval: IntervalFamily, size: SizeFamily, modulation: Modulation) -> Self {
        Self {
            interval,
            size,
            modulation,
            censor_tail: false,
        }
    }

    /// Display name such as `Static NB-Po` or `RNN NB-NB`.
    pub fn name(&self) -> String {
        format!(
            "{} {}-{}",
            self.modulation.label(),
            self.interval.code(),
            self.size.code()
        )
    }

    /// Identifier such as `static-nb-po`, accepted by [`ModelTemplate::parse`].
    pub fn slug(&self) -> String {
        format!(
            "{}-{}-{}",
            self.modulation.slug(),
            self.interval.code().to_lowercase(),
            self.size.code().to_lowercase()
        )
    }

    /// Parses `<static|ewma|ar|rnn>-<g|nb>-<po|nb>` with default settings.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<String> = s.split('-').map(|p| p.to_ascii_lowercase()).collect();
        let bad = || Error::InvalidConfig(format!("unknown model `{s}`"));
        let [m, q, y] = parts.as_slice() else {
            return Err(bad());
        };
        let modulation = match m.as_str() {
            "static" => Modulation::Static,
            "ewma" => Modulation::ewma(),
            "ar" => Modulation::stationary_ar(),
            "rnn" => Modulation::Rnn(RnnConfig::default()),
            _ => return Err(bad()),
        };
        let interval = match q.as_str() {
            "g" => IntervalFamily::Geometric,
            "nb" => IntervalFamily::NegBin,
            _ => return Err(bad()),
        };
        let size = match y.as_str() {
            "po" => SizeFamily::Poisson,
            "nb" => SizeFamily::NegBin,
            _ => return Err(bad()),
        };
        Ok(Self::new(interval, size, modulation))
    }

    /// Whether one parameter set is shared across all items.
    pub fn is_global(&self) -> bool {
        matches!(self.modulation, Modulation::Rnn(_))
    }

    pub fn heads(&self) -> HeadKinds {
        HeadKinds::new(self.interval.head(), self.size.head())
    }
}

/// Estimated parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedParams {
    Static {
        interval: DistributionSpec,
        size: DistributionSpec,
    },
    Ewma {
        alpha: f64,
        nu_q: Option<f64>,
        nu_m: Option<f64>,
    },
    StationaryAr {
        q: StationaryArConfig,
        m: StationaryArConfig,
        nu_q: Option<f64>,
        nu_m: Option<f64>,
    },
    Rnn {
        params: RnnParams,
    },
}

/// A fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub template: ModelTemplate,
    pub params: FittedParams,
}

impl ModelSpec {
    pub fn name(&self) -> String {
        self.template.name()
    }

    /// Static model with the given laws.
    pub fn fixed_static(interval: DistributionSpec, size: DistributionSpec) -> Result<Self> {
        let ifam = match interval.kind() {
            DistributionKind::ShiftedGeometric => IntervalFamily::Geometric,
            DistributionKind::ShiftedNegBin => IntervalFamily::NegBin,
            k => {
                return Err(Error::UnsupportedKind {
                    op: "interval law",
                    kind: k.name(),
                })
            }
        };
        let sfam = match size.kind() {
            DistributionKind::ShiftedPoisson => SizeFamily::Poisson,
            DistributionKind::ShiftedNegBin => SizeFamily::NegBin,
            k => {
                return Err(Error::UnsupportedKind {
                    op: "size law",
                    kind: k.name(),
                })
            }
        };
        Ok(Self {
            template: ModelTemplate::new(ifam, sfam, Modulation::Static),
            params: FittedParams::Static { interval, size },
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.check_consistent()?;
        Ok(spec)
    }

    fn check_consistent(&self) -> Result<()> {
        let ok = matches!(
            (&self.template.modulation, &self.params),
            (Modulation::Static, FittedParams::Static { .. })
                | (Modulation::Ewma { .. }, FittedParams::Ewma { .. })
                | (Modulation::StationaryAr { .. }, FittedParams::StationaryAr { .. })
                | (Modulation::Rnn(_), FittedParams::Rnn { .. })
        );
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "parameters do not match modulation of {}",
                self.name()
            )))
        }
    }
}

fn issue_points(item: &DemandSeries) -> Result<SizeIntervalSeries> {
    let si = decompose(item);
    if si.issue_count() == 0 {
        return Err(Error::Unfit {
            item: item.item_id().to_string(),
            reason: "no issue points".into(),
        });
    }
    Ok(si)
}

/// Fits `template` on `dataset`, pooling the issue points of every series.
///
/// For a per-item (local) fit pass a single series.
pub fn fit(template: &ModelTemplate, dataset: &[DemandSeries]) -> Result<ModelSpec> {
    if dataset.is_empty() {
        return Err(Error::InvalidData("cannot fit on an empty dataset".into()));
    }
    let decomposed = dataset.iter().map(issue_points).collect::<Result<Vec<_>>>()?;
    let params = match &template.modulation {
        Modulation::Static => fit_static(template, &decomposed)?,
        Modulation::Ewma { alpha } => fit_ewma(template, *alpha, &decomposed)?,
        Modulation::StationaryAr { phi, beta } => fit_ar(template, *phi, *beta, &decomposed)?,
        Modulation::Rnn(cfg) => fit_rnn(template, cfg, dataset, &decomposed)?,
    };
    Ok(ModelSpec {
        template: template.clone(),
        params,
    })
}

fn fit_static(template: &ModelTemplate, data: &[SizeIntervalSeries]) -> Result<FittedParams> {
    let q: Vec<f64> = data
        .iter()
        .flat_map(|s| s.intervals().iter().map(|&x| x as f64))
        .collect();
    let m: Vec<f64> = data.iter().flat_map(|s| s.sizes().iter().map(|&x| x as f64)).collect();
    Ok(FittedParams::Static {
        interval: fit_mle(template.interval.kind(), &q)?.spec,
        size: fit_mle(template.size.kind(), &m)?.spec,
    })
}

/// `(conditional mean, observation)` pairs for every observation that has a
/// defined, non-degenerate conditional law.
fn conditional_pairs(rec: &MeanRecursion, obs: &[u64]) -> Vec<(f64, u64)> {
    let mut out = Vec::new();
    let mut state = rec.initial_state();
    for &x in obs {
        if rec.has_mean(&state) && state.current_mean() > 1.0 {
            out.push((state.current_mean(), x));
        }
        state = rec.step(state, x as f64);
    }
    out
}

/// Dispersion maximising the NB likelihood of `(mean, obs)` pairs.
fn fit_conditional_dispersion(pairs: &[(f64, u64)]) -> f64 {
    if pairs.is_empty() {
        return NU_MIN;
    }
    maximize_dispersion(|nu| {
        pairs
            .iter()
            .map(|&(mu, k)| {
                DistributionSpec::ShiftedNegBin { mu, nu }
                    .ln_pmf(k)
                    .unwrap_or(f64::NEG_INFINITY)
            })
            .sum()
    })
}

fn dispersions(
    template: &ModelTemplate,
    data: &[SizeIntervalSeries],
    rec_q: impl Fn(&SizeIntervalSeries) -> MeanRecursion,
    rec_m: impl Fn(&SizeIntervalSeries) -> MeanRecursion,
) -> (Option<f64>, Option<f64>) {
    let nu_q = (template.interval == IntervalFamily::NegBin).then(|| {
        let pairs: Vec<_> = data
            .iter()
            .flat_map(|s| conditional_pairs(&rec_q(s), s.intervals()))
            .collect();
        fit_conditional_dispersion(&pairs)
    });
    let nu_m = (template.size == SizeFamily::NegBin).then(|| {
        let pairs: Vec<_> = data
            .iter()
            .flat_map(|s| conditional_pairs(&rec_m(s), s.sizes()))
            .collect();
        fit_conditional_dispersion(&pairs)
    });
    (nu_q, nu_m)
}

fn fit_ewma(template: &ModelTemplate, alpha: f64, data: &[SizeIntervalSeries]) -> Result<FittedParams> {
    let rec = MeanRecursion::Ewma(EwmaConfig::new(alpha)?);
    let (nu_q, nu_m) = dispersions(template, data, |_| rec, |_| rec);
    Ok(FittedParams::Ewma { alpha, nu_q, nu_m })
}

fn fit_ar(template: &ModelTemplate, phi: f64, beta: f64, data: &[SizeIntervalSeries]) -> Result<FittedParams> {
    let n: usize = data.iter().map(|s| s.issue_count()).sum();
    let mean = |f: fn(&SizeIntervalSeries) -> &[u64]| {
        data.iter().flat_map(|s| f(s).iter()).map(|&x| x as f64).sum::<f64>() / n as f64
    };
    let q = StationaryArConfig::new(phi, beta, mean(|s| s.intervals()))?;
    let m = StationaryArConfig::new(phi, beta, mean(|s| s.sizes()))?;
    let (nu_q, nu_m) = dispersions(
        template,
        data,
        |_| MeanRecursion::StationaryAr(q),
        |_| MeanRecursion::StationaryAr(m),
    );
    Ok(FittedParams::StationaryAr { q, m, nu_q, nu_m })
}

fn fit_rnn(
    template: &ModelTemplate,
    cfg: &RnnConfig,
    dataset: &[DemandSeries],
    data: &[SizeIntervalSeries],
) -> Result<FittedParams> {
    let mut train = Vec::new();
    for (item, si) in dataset.iter().zip(data) {
        if si.issue_count() < 2 {
            log::warn!(
                "item `{}` has one issue point; left out of RNN training",
                item.item_id()
            );
            continue;
        }
        train.push(TrainSeries::from(si));
    }
    if train.is_empty() {
        return Err(Error::Unfit {
            item: dataset[0].item_id().to_string(),
            reason: "no series with at least 2 issue points".into(),
        });
    }
    let heads = template.heads();
    let mut init = RnnParams::init(RnnShape::new(cfg.hidden_width, cfg.num_layers)?, cfg.train.seed);
    init.init_head_biases(&train, heads);
    let out = train_global(&init, &train, heads, &cfg.train)?;
    if let (Some(first), Some(last)) = (out.loss_trace.first(), out.loss_trace.last()) {
        log::info!(
            "{}: nll {first:.4} -> {last:.4} over {} epochs",
            template.name(),
            out.loss_trace.len()
        );
    }
    Ok(FittedParams::Rnn { params: out.params })
}

/// Conditional state of a fitted model after a sequence of issue points.
#[derive(Debug, Clone)]
enum Tracker<'a> {
    Static {
        interval: DistributionSpec,
        size: DistributionSpec,
    },
    Recursive {
        rec_q: MeanRecursion,
        rec_m: MeanRecursion,
        q: ModulatorState,
        m: ModulatorState,
        nu_q: Option<f64>,
        nu_m: Option<f64>,
    },
    Rnn {
        params: &'a RnnParams,
        heads: HeadKinds,
        net: NetworkState,
    },
}

fn count_law(kind: DistributionKind, mean: f64, nu: Option<f64>) -> Result<DistributionSpec> {
    DistributionSpec::count(kind, mean.max(1.0), nu)
}

impl<'a> Tracker<'a> {
    fn new(model: &'a ModelSpec) -> Result<Self> {
        model.check_consistent()?;
        Ok(match &model.params {
            FittedParams::Static { interval, size } => Tracker::Static {
                interval: *interval,
                size: *size,
            },
            FittedParams::Ewma { alpha, nu_q, nu_m } => {
                let rec = MeanRecursion::Ewma(EwmaConfig::new(*alpha)?);
                Tracker::Recursive {
                    rec_q: rec,
                    rec_m: rec,
                    q: rec.initial_state(),
                    m: rec.initial_state(),
                    nu_q: *nu_q,
                    nu_m: *nu_m,
                }
            }
            FittedParams::StationaryAr { q, m, nu_q, nu_m } => Tracker::Recursive {
                rec_q: MeanRecursion::StationaryAr(*q),
                rec_m: MeanRecursion::StationaryAr(*m),
                q: q.initial_state(),
                m: m.initial_state(),
                nu_q: *nu_q,
                nu_m: *nu_m,
            },
            FittedParams::Rnn { params } => {
                let net = NetworkState::zeros(params).step(params, &crate::neural::encode_input(0.0, 0.0))?;
                Tracker::Rnn {
                    params,
                    heads: model.template.heads(),
                    net,
                }
            }
        })
    }

    /// Laws of the next `(Q, M)`, or `None` while undefined.
    fn laws(&self, template: &ModelTemplate) -> Result<Option<(DistributionSpec, DistributionSpec)>> {
        match self {
            Tracker::Static { interval, size } => Ok(Some((*interval, *size))),
            Tracker::Recursive {
                rec_q,
                rec_m,
                q,
                m,
                nu_q,
                nu_m,
            } => {
                if !(rec_q.has_mean(q) && rec_m.has_mean(m)) {
                    return Ok(None);
                }
                Ok(Some((
                    count_law(template.interval.kind(), q.current_mean(), *nu_q)?,
                    count_law(template.size.kind(), m.current_mean(), *nu_m)?,
                )))
            }
            Tracker::Rnn { params, heads, net } => {
                let h = net.top_hidden();
                let nu = |v: f64| Some(v.max(1.0 + 1e-12));
                Ok(Some((
                    count_law(
                        template.interval.kind(),
                        params.interval_mean(h, heads.interval),
                        nu(params.nu_q()),
                    )?,
                    count_law(template.size.kind(), params.size_mean(h), nu(params.nu_m()))?,
                )))
            }
        }
    }

    fn update(&mut self, q_obs: u64, m_obs: u64) -> Result<()> {
        match self {
            Tracker::Static { .. } => {}
            Tracker::Recursive { rec_q, rec_m, q, m, .. } => {
                *q = rec_q.step(*q, q_obs as f64);
                *m = rec_m.step(*m, m_obs as f64);
            }
            Tracker::Rnn { params, net, .. } => {
                *net = net.step(params, &crate::neural::encode_input(q_obs as f64, m_obs as f64))?;
            }
        }
        Ok(())
    }

    fn filter(model: &'a ModelSpec, si: &SizeIntervalSeries) -> Result<Self> {
        let mut t = Self::new(model)?;
        for (q, m) in si.pairs() {
            t.update(q, m)?;
        }
        Ok(t)
    }
}

/// Log-likelihood of `series` under `model`.
///
/// Sums `ln p(Q_i) + ln p(M_i)` over every issue point with a defined
/// conditional law (EWMA models start at the second issue point). With
/// `censor_tail` the censored final gap adds `ln P(Q > tail_gap)`.
pub fn log_likelihood(model: &ModelSpec, series: &DemandSeries) -> Result<f64> {
    let si = decompose(series);
    let mut t = Tracker::new(model)?;
    let mut total = 0.0;
    for (q, m) in si.pairs() {
        if let Some((lq, lm)) = t.laws(&model.template)? {
            total += lq.ln_pmf(q)? + lm.ln_pmf(m)?;
        }
        t.update(q, m)?;
    }
    if model.template.censor_tail && si.tail_gap() > 0 {
        if let Some((lq, _)) = t.laws(&model.template)? {
            total += lq.survival(si.tail_gap())?.ln();
        }
    }
    Ok(total)
}

/// Closed-form expected demand in the next period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneStepMean {
    pub value: f64,
    /// The hazard was forced to 1 because the survival underflowed.
    pub saturated: bool,
}

/// `h(τ + 1) · E[M]`, where `τ` is the number of periods since the last
/// issue point of `history`.
pub fn one_step_mean(model: &ModelSpec, history: &DemandSeries) -> Result<OneStepMean> {
    let si = issue_points(history)?;
    let t = Tracker::filter(model, &si)?;
    let (lq, lm) = t.laws(&model.template)?.ok_or_else(|| Error::Unfit {
        item: history.item_id().to_string(),
        reason: "conditional law undefined".into(),
    })?;
    let h = lq.hazard(si.tail_gap() + 1)?;
    Ok(OneStepMean {
        value: h.value * lm.mean(),
        saturated: h.saturated,
    })
}

/// One quantile level across the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub level: f64,
    pub values: Vec<f64>,
}

/// Sampled trajectories with their per-period summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    /// `S × L` sampled demand.
    pub paths: Vec<Vec<u64>>,
    pub mean_per_period: Vec<f64>,
    /// Rows in increasing level.
    pub quantiles: Vec<QuantileRow>,
    /// Residual draws forced to `τ + 1` by survival underflow.
    pub saturated_draws: usize,
}

impl ForecastResult {
    /// Summarises `paths` at the given quantile levels.
    pub fn from_paths(paths: Vec<Vec<u64>>, horizon: usize, levels: &[f64], saturated_draws: usize) -> Result<Self> {
        let mut levels = levels.to_vec();
        if levels.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
            return Err(Error::InvalidConfig("quantile levels must be in [0, 1]".into()));
        }
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let s = paths.len();
        let mut mean_per_period = vec![0.0; horizon];
        let mut quantiles: Vec<QuantileRow> = levels
            .iter()
            .map(|&level| QuantileRow {
                level,
                values: vec![0.0; horizon],
            })
            .collect();
        let mut column = vec![0u64; s];
        for n in 0..horizon {
            for (c, p) in column.iter_mut().zip(&paths) {
                *c = p[n];
            }
            mean_per_period[n] = column.iter().map(|&v| v as f64).sum::<f64>() / s.max(1) as f64;
            column.sort_unstable();
            for row in &mut quantiles {
                row.values[n] = empirical_quantile(&column, row.level);
            }
        }
        Ok(Self {
            paths,
            mean_per_period,
            quantiles,
            saturated_draws,
        })
    }

    pub fn quantile(&self, level: f64) -> Option<&[f64]> {
        self.quantiles
            .iter()
            .find(|r| (r.level - level).abs() < 1e-12)
            .map(|r| r.values.as_slice())
    }

    pub fn horizon(&self) -> usize {
        self.mean_per_period.len()
    }
}

/// Order statistic at index `round((S − 1) ρ)` of sorted samples.
pub fn empirical_quantile(sorted: &[u64], rho: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * rho).round() as usize;
    sorted[idx.min(sorted.len() - 1)] as f64
}

/// Forecast configuration for [`sample_paths`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    pub horizon: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub levels: Vec<f64>,
}

impl SampleConfig {
    pub fn new(horizon: usize, n_paths: usize, seed: u64) -> Self {
        Self {
            horizon,
            n_paths,
            seed,
            levels: DEFAULT_LEVELS.to_vec(),
        }
    }
}

/// Parametric-bootstrap forecast of the next `horizon` periods.
///
/// Path `p` draws from stream `(seed, p)`, so results do not depend on how
/// paths are scheduled across threads.
pub fn sample_paths(model: &ModelSpec, history: &DemandSeries, cfg: &SampleConfig) -> Result<ForecastResult> {
    if cfg.n_paths == 0 {
        return Err(Error::InvalidConfig("need at least one path".into()));
    }
    let si = decompose(history);
    let start = Tracker::filter(model, &si)?;
    if start.laws(&model.template)?.is_none() {
        return Err(Error::Unfit {
            item: history.item_id().to_string(),
            reason: "conditional law undefined".into(),
        });
    }
    let elapsed = si.tail_gap();
    let sims: Vec<(Vec<u64>, usize)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut r = rng::stream(cfg.seed, p as u64);
            simulate(model, start.clone(), elapsed, cfg.horizon, &mut r)
        })
        .collect::<Result<_>>()?;
    let saturated = sims.iter().map(|s| s.1).sum();
    let paths = sims.into_iter().map(|s| s.0).collect();
    ForecastResult::from_paths(paths, cfg.horizon, &cfg.levels, saturated)
}

/// Starting state for forward simulation without history. EWMA models have
/// no law before their first observation and need `initial_means`.
fn simulation_start<'a>(model: &'a ModelSpec, initial_means: Option<(f64, f64)>) -> Result<Tracker<'a>> {
    let mut t = Tracker::new(model)?;
    if let (Tracker::Recursive { q, m, .. }, Some((mq, mm))) = (&mut t, initial_means) {
        *q = ModulatorState::seeded(mq)?;
        *m = ModulatorState::seeded(mm)?;
    }
    if t.laws(&model.template)?.is_none() {
        return Err(Error::InvalidConfig(format!(
            "{} needs initial means to simulate without history",
            model.name()
        )));
    }
    Ok(t)
}

/// Simulates `n_periods` of demand from the model's initial state.
pub fn simulate_periods(
    model: &ModelSpec,
    n_periods: usize,
    initial_means: Option<(f64, f64)>,
    r: &mut rng::Rng,
) -> Result<Vec<u64>> {
    let t = simulation_start(model, initial_means)?;
    Ok(simulate(model, t, 0, n_periods, r)?.0)
}

/// Simulates exactly `n` issue points from the model's initial state.
pub fn simulate_pairs(
    model: &ModelSpec,
    n: usize,
    initial_means: Option<(f64, f64)>,
    r: &mut rng::Rng,
) -> Result<SizeIntervalSeries> {
    let mut t = simulation_start(model, initial_means)?;
    let (mut q, mut m) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let (lq, lm) = t.laws(&model.template)?.expect("defined from the start");
        let (a, b) = (lq.sample_count(r)?, lm.sample_count(r)?);
        t.update(a, b)?;
        q.push(a);
        m.push(b);
    }
    let len = q.iter().sum::<u64>() as usize;
    SizeIntervalSeries::new(q, m, 0, len)
}

fn simulate(
    model: &ModelSpec,
    mut t: Tracker<'_>,
    mut elapsed: u64,
    horizon: usize,
    r: &mut rng::Rng,
) -> Result<(Vec<u64>, usize)> {
    let mut path = vec![0u64; horizon];
    let mut pos = 0usize;
    let mut saturated = 0usize;
    while pos < horizon {
        let (lq, lm) = t.laws(&model.template)?.expect("state checked before sampling");
        let draw = lq.sample_count_above(elapsed, r)?;
        saturated += draw.saturated as usize;
        let ahead = (draw.value - elapsed) as usize;
        let idx = pos + ahead - 1;
        if idx >= horizon {
            break;
        }
        let m = lm.sample_count(r)?;
        path[idx] = m;
        t.update(draw.value, m)?;
        pos = idx + 1;
        elapsed = 0;
    }
    Ok((path, saturated))
}

/// Recursion driving the simulated size process in [`convergence_probe`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeModulation {
    /// `M̂ ← (1 − β) M̂ + β M`.
    Ewma {
        beta: f64,
    },
    StationaryAr {
        phi: f64,
        beta: f64,
        mu_level: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub modulation: ProbeModulation,
    pub start_mean: f64,
    pub steps: usize,
    pub n_trajectories: usize,
    pub threshold: f64,
    pub seed: u64,
}

/// Simulates `M_i ~ 1 + Po(M̂_{i−1} − 1)` with `M̂` driven by its own
/// recursion and returns the fraction of trajectories whose final mean is
/// below `threshold`.
pub fn convergence_probe(cfg: &ProbeConfig) -> Result<f64> {
    if cfg.n_trajectories == 0 {
        return Err(Error::InvalidConfig("need at least one trajectory".into()));
    }
    let rec = match cfg.modulation {
        ProbeModulation::Ewma { beta } => MeanRecursion::Ewma(EwmaConfig::new(beta)?),
        ProbeModulation::StationaryAr { phi, beta, mu_level } => {
            MeanRecursion::StationaryAr(StationaryArConfig::new(phi, beta, mu_level)?)
        }
    };
    let start = ModulatorState::seeded(cfg.start_mean)?;
    let below: Vec<bool> = (0..cfg.n_trajectories)
        .into_par_iter()
        .map(|j| {
            let mut r = rng::stream(cfg.seed, j as u64);
            let mut s = start;
            for _ in 0..cfg.steps {
                let law = DistributionSpec::shifted_poisson(s.current_mean().max(1.0))?;
                s = rec.step(s, law.sample_count(&mut r)? as f64);
            }
            Ok(s.current_mean() < cfg.threshold)
        })
        .collect::<Result<_>>()?;
    Ok(below.iter().filter(|&&b| b).count() as f64 / cfg.n_trajectories as f64)
}
