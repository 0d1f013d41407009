//! Demand series and their size–interval decomposition.
//!
//! Issue points are the periods with nonzero demand. With `σ(i)` the 1-based
//! index of the `i`-th issue point and `σ(0) = 0`, the interdemand times are
//! `Q_i = σ(i) − σ(i−1)` and the sizes are `M_i = y_{σ(i)}`. Zeros after the
//! last issue point are kept as `tail_gap`, so the map is lossless.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default upper bound on a single period's demand accepted at ingestion.
pub const DEFAULT_DEMAND_CAP: u64 = 1_000_000_000;

/// Demand counts per review period for one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandSeries {
    item_id: String,
    start_period: i64,
    values: Vec<u64>,
}

impl DemandSeries {
    /// Builds a series, rejecting empty input and values above [`DEFAULT_DEMAND_CAP`].
    pub fn new(item_id: impl Into<String>, start_period: i64, values: Vec<u64>) -> Result<Self> {
        Self::with_cap(item_id, start_period, values, DEFAULT_DEMAND_CAP)
    }

    /// Builds a series with an explicit per-period demand cap.
    pub fn with_cap(item_id: impl Into<String>, start_period: i64, values: Vec<u64>, cap: u64) -> Result<Self> {
        let item_id = item_id.into();
        if values.is_empty() {
            return Err(Error::InvalidData(format!("series `{item_id}` is empty")));
        }
        if let Some((n, v)) = values.iter().enumerate().find(|(_, &v)| v > cap) {
            return Err(Error::InvalidData(format!(
                "series `{item_id}` period {n}: demand {v} exceeds cap {cap}"
            )));
        }
        Ok(Self {
            item_id,
            start_period,
            values,
        })
    }

    /// Shorthand for an anonymous series starting at period 0.
    pub fn from_values(values: Vec<u64>) -> Result<Self> {
        Self::new("", 0, values)
    }

    pub fn item_id(&self) -> &str {
        &self.item_id
    }

    pub fn start_period(&self) -> i64 {
        self.start_period
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of periods with nonzero demand.
    pub fn issue_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0).count()
    }

    /// Splits into the first `n` periods and the remainder.
    ///
    /// Both halves must be nonempty.
    pub fn split_at(&self, n: usize) -> Result<(DemandSeries, DemandSeries)> {
        if n == 0 || n >= self.values.len() {
            return Err(Error::InvalidConfig(format!(
                "cannot split series `{}` of length {} at {n}",
                self.item_id,
                self.values.len()
            )));
        }
        let head = DemandSeries {
            item_id: self.item_id.clone(),
            start_period: self.start_period,
            values: self.values[..n].to_vec(),
        };
        let tail = DemandSeries {
            item_id: self.item_id.clone(),
            start_period: self.start_period + n as i64,
            values: self.values[n..].to_vec(),
        };
        Ok((head, tail))
    }
}

/// Interdemand times and sizes at the issue points of a series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeIntervalSeries {
    intervals: Vec<u64>,
    sizes: Vec<u64>,
    tail_gap: u64,
    origin_length: usize,
}

impl SizeIntervalSeries {
    /// Builds and validates a size–interval series.
    pub fn new(intervals: Vec<u64>, sizes: Vec<u64>, tail_gap: u64, origin_length: usize) -> Result<Self> {
        if intervals.len() != sizes.len() {
            return Err(Error::InvalidData(format!(
                "{} intervals but {} sizes",
                intervals.len(),
                sizes.len()
            )));
        }
        if intervals.contains(&0) {
            return Err(Error::InvalidData("interdemand times must be >= 1".into()));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidData("demand sizes must be >= 1".into()));
        }
        let covered: u64 = intervals.iter().sum::<u64>() + tail_gap;
        if covered != origin_length as u64 {
            return Err(Error::InvalidData(format!(
                "intervals plus tail gap cover {covered} periods, expected {origin_length}"
            )));
        }
        Ok(Self {
            intervals,
            sizes,
            tail_gap,
            origin_length,
        })
    }

    pub fn intervals(&self) -> &[u64] {
        &self.intervals
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    /// Zero periods after the last issue point.
    pub fn tail_gap(&self) -> u64 {
        self.tail_gap
    }

    pub fn origin_length(&self) -> usize {
        self.origin_length
    }

    pub fn issue_count(&self) -> usize {
        self.sizes.len()
    }

    /// Issue points as `(Q_i, M_i)` pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.intervals.iter().copied().zip(self.sizes.iter().copied())
    }
}

/// Decomposes a demand series into interdemand times and sizes.
///
/// An all-zero series yields no issue points and `tail_gap = N`.
pub fn decompose(series: &DemandSeries) -> SizeIntervalSeries {
    let mut intervals = Vec::new();
    let mut sizes = Vec::new();
    let mut last = 0usize;
    for (n, &y) in series.values.iter().enumerate() {
        if y > 0 {
            intervals.push((n + 1 - last) as u64);
            sizes.push(y);
            last = n + 1;
        }
    }
    SizeIntervalSeries {
        intervals,
        sizes,
        tail_gap: (series.values.len() - last) as u64,
        origin_length: series.values.len(),
    }
}

/// Rebuilds the per-period values of a size–interval series.
pub fn recompose_values(si: &SizeIntervalSeries) -> Vec<u64> {
    let mut values = vec![0u64; si.origin_length];
    let mut pos = 0usize;
    for (q, m) in si.pairs() {
        pos += q as usize;
        values[pos - 1] = m;
    }
    values
}

/// Inverse of [`decompose`]; the result is an anonymous series starting at 0.
pub fn recompose(si: &SizeIntervalSeries) -> Result<DemandSeries> {
    // re-validate: the fields may have been deserialized without checks
    let si = SizeIntervalSeries::new(si.intervals.clone(), si.sizes.clone(), si.tail_gap, si.origin_length)?;
    DemandSeries::from_values(recompose_values(&si))
}
