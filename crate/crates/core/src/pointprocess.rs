//! Continuous-time marked renewal processes.
//!
//! Events carry real timestamps (in review periods) and positive integer
//! marks. Interarrival gaps are exponential, either i.i.d. or with an
//! LSTM-modulated mean; marks follow a shifted Poisson or negative binomial.
//! The first gap is measured from the window origin.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{fit_mle, DistributionKind, DistributionSpec};
use crate::models::{RnnConfig, SizeFamily};
use crate::neural::{
    encode_input, train_global, HeadKinds, IntervalHead, NetworkState, RnnParams, RnnShape, TrainSeries,
};
use crate::series::DemandSeries;
use crate::{rng, Error, Result};

/// Timestamped, marked events in an observation window `[0, span)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSeries {
    item_id: String,
    timestamps: Vec<f64>,
    marks: Vec<u64>,
    span: f64,
}

impl EventSeries {
    /// Builds a series from `(timestamp, mark)` pairs in any order. Events
    /// sharing a timestamp are merged into one with the summed mark.
    pub fn new(item_id: impl Into<String>, events: Vec<(f64, u64)>, span: f64) -> Result<Self> {
        let item_id = item_id.into();
        if !(span >= 0.0 && span.is_finite()) {
            return Err(Error::InvalidData(format!("span must be finite and >= 0, got {span}")));
        }
        let mut events = events;
        for &(t, m) in &events {
            if !(t >= 0.0 && t < span) {
                return Err(Error::InvalidData(format!(
                    "event time {t} of `{item_id}` outside [0, {span})"
                )));
            }
            if m == 0 {
                return Err(Error::InvalidData(format!("event mark of `{item_id}` must be >= 1")));
            }
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut timestamps: Vec<f64> = Vec::with_capacity(events.len());
        let mut marks: Vec<u64> = Vec::with_capacity(events.len());
        for (t, m) in events {
            if timestamps.last() == Some(&t) {
                *marks.last_mut().expect("parallel vectors") += m;
            } else {
                timestamps.push(t);
                marks.push(m);
            }
        }
        Ok(Self {
            item_id,
            timestamps,
            marks,
            span,
        })
    }

    pub fn item_id(&self) -> &str {
        &self.item_id
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn marks(&self) -> &[u64] {
        &self.marks
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    /// Interarrival gaps, the first measured from 0.
    pub fn gaps(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.timestamps
            .iter()
            .map(|&t| {
                let g = t - prev;
                prev = t;
                g
            })
            .collect()
    }

    /// Time since the last event, or since 0 without events.
    pub fn elapsed(&self) -> f64 {
        self.span - self.timestamps.last().copied().unwrap_or(0.0)
    }
}

/// Sums marks into half-open periods `[nΔ, (n+1)Δ)` covering the span.
pub fn aggregate_events(events: &EventSeries, period_length: f64) -> Result<DemandSeries> {
    if !(period_length > 0.0 && period_length.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "period length must be > 0, got {period_length}"
        )));
    }
    let n = (events.span / period_length).ceil() as usize;
    if n == 0 {
        return Err(Error::InvalidData(format!(
            "span of `{}` covers no period",
            events.item_id
        )));
    }
    let mut values = vec![0u64; n];
    for (&t, &m) in events.timestamps.iter().zip(&events.marks) {
        let idx = ((t / period_length).floor() as usize).min(n - 1);
        values[idx] += m;
    }
    DemandSeries::new(events.item_id.clone(), 0, values)
}

/// Gap modulation of a continuous-time model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CtModulation {
    Static,
    Rnn(RnnConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtTemplate {
    pub size: SizeFamily,
    pub modulation: CtModulation,
}

impl CtTemplate {
    pub fn new(size: SizeFamily, modulation: CtModulation) -> Self {
        Self { size, modulation }
    }

    /// Display name such as `Static E-Po`.
    pub fn name(&self) -> String {
        let m = match self.modulation {
            CtModulation::Static => "Static",
            CtModulation::Rnn(_) => "RNN",
        };
        let s = match self.size {
            SizeFamily::Poisson => "Po",
            SizeFamily::NegBin => "NB",
        };
        format!("{m} E-{s}")
    }

    fn min_events(&self) -> usize {
        match self.modulation {
            CtModulation::Static => 2,
            CtModulation::Rnn(_) => 3,
        }
    }

    fn heads(&self) -> HeadKinds {
        HeadKinds::new(IntervalHead::Exponential, self.size.head())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CtParams {
    Static {
        interval: DistributionSpec,
        size: DistributionSpec,
    },
    Rnn {
        params: RnnParams,
    },
}

/// A fitted continuous-time model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtModelSpec {
    pub template: CtTemplate,
    pub params: CtParams,
}

impl CtModelSpec {
    pub fn fixed_static(interval: DistributionSpec, size: DistributionSpec) -> Result<Self> {
        let family = match size.kind() {
            DistributionKind::ShiftedPoisson => SizeFamily::Poisson,
            DistributionKind::ShiftedNegBin => SizeFamily::NegBin,
            k => {
                return Err(Error::UnsupportedKind {
                    op: "mark law",
                    kind: k.name(),
                })
            }
        };
        if interval.kind() != DistributionKind::Exponential {
            return Err(Error::UnsupportedKind {
                op: "continuous gap law",
                kind: interval.kind().name(),
            });
        }
        Ok(Self {
            template: CtTemplate::new(family, CtModulation::Static),
            params: CtParams::Static { interval, size },
        })
    }
}

/// Fits a continuous-time model on the pooled events of `data`.
pub fn fit_ct(template: &CtTemplate, data: &[EventSeries]) -> Result<CtModelSpec> {
    if data.is_empty() {
        return Err(Error::InvalidData("cannot fit on an empty event collection".into()));
    }
    for e in data {
        if e.len() < template.min_events() {
            return Err(Error::Unfit {
                item: e.item_id.clone(),
                reason: format!("{} events, need at least {}", e.len(), template.min_events()),
            });
        }
    }
    let params = match &template.modulation {
        CtModulation::Static => {
            let gaps: Vec<f64> = data.iter().flat_map(|e| e.gaps()).collect();
            let marks: Vec<f64> = data.iter().flat_map(|e| e.marks.iter().map(|&m| m as f64)).collect();
            CtParams::Static {
                interval: fit_mle(DistributionKind::Exponential, &gaps)?.spec,
                size: fit_mle(template.size.kind(), &marks)?.spec,
            }
        }
        CtModulation::Rnn(cfg) => {
            let train = data
                .iter()
                .map(|e| TrainSeries::new(e.gaps(), e.marks.clone()))
                .collect::<Result<Vec<_>>>()?;
            let heads = template.heads();
            let mut init = RnnParams::init(RnnShape::new(cfg.hidden_width, cfg.num_layers)?, cfg.train.seed);
            init.init_head_biases(&train, heads);
            CtParams::Rnn {
                params: train_global(&init, &train, heads, &cfg.train)?.params,
            }
        }
    };
    Ok(CtModelSpec {
        template: template.clone(),
        params,
    })
}

#[derive(Debug, Clone)]
enum CtTracker<'a> {
    Static {
        interval: DistributionSpec,
        size: DistributionSpec,
    },
    Rnn {
        params: &'a RnnParams,
        size: SizeFamily,
        net: NetworkState,
    },
}

impl<'a> CtTracker<'a> {
    fn new(model: &'a CtModelSpec) -> Result<Self> {
        Ok(match &model.params {
            CtParams::Static { interval, size } => CtTracker::Static {
                interval: *interval,
                size: *size,
            },
            CtParams::Rnn { params } => CtTracker::Rnn {
                params,
                size: model.template.size,
                net: NetworkState::zeros(params).step(params, &encode_input(0.0, 0.0))?,
            },
        })
    }

    fn laws(&self) -> Result<(DistributionSpec, DistributionSpec)> {
        match self {
            CtTracker::Static { interval, size } => Ok((*interval, *size)),
            CtTracker::Rnn { params, size, net } => {
                let h = net.top_hidden();
                let mean = params
                    .interval_mean(h, IntervalHead::Exponential)
                    .max(f64::MIN_POSITIVE);
                Ok((
                    DistributionSpec::exponential(mean)?,
                    DistributionSpec::count(size.kind(), params.size_mean(h), Some(params.nu_m().max(1.0 + 1e-12)))?,
                ))
            }
        }
    }

    fn update(&mut self, gap: f64, mark: u64) -> Result<()> {
        if let CtTracker::Rnn { params, net, .. } = self {
            *net = net.step(params, &encode_input(gap, mark as f64))?;
        }
        Ok(())
    }
}

/// Log-likelihood of the events' gaps and marks.
pub fn log_likelihood_ct(model: &CtModelSpec, events: &EventSeries) -> Result<f64> {
    let mut t = CtTracker::new(model)?;
    let mut total = 0.0;
    for (g, &m) in events.gaps().into_iter().zip(&events.marks) {
        let (lq, lm) = t.laws()?;
        total += lq.ln_pdf(g)? + lm.ln_pmf(m)?;
        t.update(g, m)?;
    }
    Ok(total)
}

/// Forward-sampling settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtSampleConfig {
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
}

/// Samples event paths over `[0, horizon)` after `history`.
///
/// The first gap is conditioned on exceeding `elapsed`; for exponential gaps
/// this is a fresh draw. Timestamps in the output are relative to the
/// forecast origin.
pub fn sample_events(
    model: &CtModelSpec,
    history: Option<&EventSeries>,
    elapsed: f64,
    cfg: &CtSampleConfig,
) -> Result<Vec<EventSeries>> {
    if !(cfg.horizon >= 0.0 && cfg.horizon.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "horizon must be >= 0, got {}",
            cfg.horizon
        )));
    }
    if !(elapsed >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "elapsed time must be >= 0, got {elapsed}"
        )));
    }
    let mut start = CtTracker::new(model)?;
    if let Some(h) = history {
        for (g, &m) in h.gaps().into_iter().zip(&h.marks) {
            start.update(g, m)?;
        }
    }
    let item = history.map_or(String::new(), |h| h.item_id.clone());
    (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut r = rng::stream(cfg.seed, p as u64);
            let mut t = start.clone();
            let mut events: Vec<(f64, u64)> = Vec::new();
            let mut now = 0.0;
            loop {
                let (lq, lm) = t.laws()?;
                let gap = lq.sample_real(&mut r)?;
                now += gap;
                if now >= cfg.horizon {
                    break;
                }
                let m = lm.sample_count(&mut r)?;
                events.push((now, m));
                t.update(gap, m)?;
            }
            EventSeries::new(item.clone(), events, cfg.horizon)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ev(pairs: &[(f64, u64)], span: f64) -> EventSeries {
        EventSeries::new("a", pairs.to_vec(), span).unwrap()
    }

    fn e_po(mu_q: f64, mu_m: f64) -> CtModelSpec {
        CtModelSpec::fixed_static(
            DistributionSpec::exponential(mu_q).unwrap(),
            DistributionSpec::shifted_poisson(mu_m).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn static_fit_from_origin() {
        let t = CtTemplate::new(SizeFamily::Poisson, CtModulation::Static);
        let m = fit_ct(&t, &[ev(&[(1.0, 1), (3.0, 2), (6.0, 3)], 7.0)]).unwrap();
        let CtParams::Static { interval, size } = m.params else {
            panic!()
        };
        assert_abs_diff_eq!(interval.mu(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(size.mu(), 2.0, epsilon = 1e-12);
        assert!(fit_ct(&t, &[ev(&[(0.5, 1)], 1.0)]).is_err());
    }

    #[test]
    fn static_e_nb_recovers_parameters() {
        let truth = CtModelSpec::fixed_static(
            DistributionSpec::exponential(0.5).unwrap(),
            DistributionSpec::shifted_negbin(4.0, 2.0).unwrap(),
        )
        .unwrap();
        let paths = sample_events(
            &truth,
            None,
            0.0,
            &CtSampleConfig {
                horizon: 5_000.0,
                n_paths: 1,
                seed: 3,
            },
        )
        .unwrap();
        assert!(paths[0].len() > 9_000);
        let t = CtTemplate::new(SizeFamily::NegBin, CtModulation::Static);
        let fitted = fit_ct(&t, &paths).unwrap();
        let CtParams::Static { interval, size } = fitted.params else {
            panic!()
        };
        assert!((interval.mu() / 0.5 - 1.0).abs() < 0.1);
        assert!((size.mu() / 4.0 - 1.0).abs() < 0.1);
        assert!((size.nu().unwrap() / 2.0 - 1.0).abs() < 0.1);
    }

    #[test]
    fn ties_are_merged() {
        let e = ev(&[(2.0, 1), (0.5, 2), (2.0, 4)], 3.0);
        assert_eq!(e.timestamps(), &[0.5, 2.0]);
        assert_eq!(e.marks(), &[2, 5]);
        assert!(EventSeries::new("a", vec![(3.0, 1)], 3.0).is_err());
        assert!(EventSeries::new("a", vec![(1.0, 0)], 3.0).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let d = aggregate_events(&ev(&[(0.5, 2), (1.5, 3)], 2.0), 1.0).unwrap();
        assert_eq!(d.values(), &[2, 3]);
        let d = aggregate_events(&ev(&[(0.1, 1), (0.2, 4)], 1.0), 1.0).unwrap();
        assert_eq!(d.values(), &[5]);
        let d = aggregate_events(&ev(&[], 3.0), 1.0).unwrap();
        assert_eq!(d.values(), &[0, 0, 0]);
        assert!(aggregate_events(&ev(&[], 3.0), 0.0).is_err());
        // boundary belongs to the later period
        let d = aggregate_events(&ev(&[(1.0, 7)], 2.0), 1.0).unwrap();
        assert_eq!(d.values(), &[0, 7]);
    }

    #[test]
    fn sampling_is_seeded_and_truncated() {
        let m = e_po(1.0, 2.0);
        let cfg = CtSampleConfig {
            horizon: 10.0,
            n_paths: 50,
            seed: 4,
        };
        let a = sample_events(&m, None, 0.0, &cfg).unwrap();
        let b = sample_events(&m, None, 3.0, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|e| e.timestamps().iter().all(|&t| t < 10.0)));
        let empty = sample_events(
            &m,
            None,
            0.0,
            &CtSampleConfig {
                horizon: 0.0,
                n_paths: 3,
                seed: 4,
            },
        )
        .unwrap();
        assert!(empty.iter().all(|e| e.is_empty()));
    }

    #[test]
    fn poisson_limit_counts() {
        let mu = 2.0;
        let m = e_po(mu, 1.0);
        let paths = sample_events(
            &m,
            None,
            0.0,
            &CtSampleConfig {
                horizon: 400.0,
                n_paths: 20,
                seed: 8,
            },
        )
        .unwrap();
        let counts: Vec<f64> = paths
            .iter()
            .flat_map(|p| aggregate_events(p, 1.0).unwrap().values().to_vec())
            .map(|v| v as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        let se = ((1.0 / mu) / counts.len() as f64).sqrt();
        assert!((mean - 1.0 / mu).abs() < 4.0 * se, "{mean}");
    }

    #[test]
    fn rnn_ct_model_trains_and_samples() {
        let mut cfg = RnnConfig {
            hidden_width: 3,
            ..RnnConfig::default()
        };
        cfg.train.epochs = 10;
        let t = CtTemplate::new(SizeFamily::Poisson, CtModulation::Rnn(cfg));
        let data = vec![
            ev(&[(0.3, 1), (1.1, 2), (2.9, 1), (3.0, 5)], 4.0),
            ev(&[(0.2, 2), (0.9, 1), (1.4, 1)], 2.0),
        ];
        let m = fit_ct(&t, &data).unwrap();
        assert_eq!(m.template.name(), "RNN E-Po");
        assert!(log_likelihood_ct(&m, &data[0]).unwrap().is_finite());
        let cfg = CtSampleConfig {
            horizon: 5.0,
            n_paths: 10,
            seed: 1,
        };
        let a = sample_events(&m, Some(&data[0]), data[0].elapsed(), &cfg).unwrap();
        assert_eq!(a, sample_events(&m, Some(&data[0]), data[0].elapsed(), &cfg).unwrap());
        let short = vec![ev(&[(0.3, 1), (1.1, 2)], 2.0)];
        assert!(fit_ct(&t, &short).is_err());
    }

    proptest! {
        #[test]
        fn aggregation_conserves_total(pairs in prop::collection::vec((0.0f64..20.0, 1u64..9), 0..40), dt in 0.1f64..5.0) {
            let e = EventSeries::new("p", pairs.clone(), 20.0).unwrap();
            let total: u64 = pairs.iter().map(|p| p.1).sum();
            let d = aggregate_events(&e, dt).unwrap();
            prop_assert_eq!(d.values().iter().sum::<u64>(), total);
        }

        #[test]
        fn sampled_times_strictly_increase(seed in 0u64..500) {
            let m = e_po(0.3, 2.0);
            let paths = sample_events(&m, None, 0.0, &CtSampleConfig { horizon: 5.0, n_paths: 4, seed }).unwrap();
            for p in &paths {
                prop_assert!(p.timestamps().windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
