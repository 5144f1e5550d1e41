use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataError, RATIO_COUNT};

/// Ticker symbol, e.g. `AXP`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TickerId(String);

impl TickerId {
    pub fn new(symbol: impl Into<String>) -> Result<Self, DataError> {
        let symbol = symbol.into();
        let valid = !symbol.is_empty()
            && symbol
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_');
        if valid {
            Ok(Self(symbol))
        } else {
            Err(DataError::InvalidTicker(symbol))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for TickerId {
    type Error = DataError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<TickerId> for String {
    fn from(value: TickerId) -> Self {
        value.0
    }
}

impl fmt::Display for TickerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Dense day × ticker grid of closing prices and financial ratios.
///
/// Immutable once built. Prices are stored day-major (`closes[day * D + ticker]`),
/// ratios day-major then ticker-major (`ratios[(day * D + ticker) * 15 + j]`).
#[derive(Debug, Clone, PartialEq)]
pub struct MarketDataset {
    tickers: Vec<TickerId>,
    days: Vec<NaiveDate>,
    closes: Vec<f64>,
    ratios: Vec<f64>,
}

impl MarketDataset {
    pub fn new(
        tickers: Vec<TickerId>,
        days: Vec<NaiveDate>,
        closes: Vec<f64>,
        ratios: Vec<f64>,
    ) -> Result<Self, DataError> {
        let d = tickers.len();
        if d == 0 {
            return Err(DataError::Invalid("dataset has no tickers".into()));
        }
        if days.is_empty() {
            return Err(DataError::Invalid("dataset has no days".into()));
        }
        for (i, t) in tickers.iter().enumerate() {
            if tickers[..i].contains(t) {
                return Err(DataError::Invalid(format!("ticker {t} listed twice")));
            }
        }
        if let Some(w) = days.windows(2).find(|w| w[0] >= w[1]) {
            return Err(DataError::Invalid(format!(
                "dates not strictly increasing: {} then {}",
                w[0], w[1]
            )));
        }
        if closes.len() != days.len() * d {
            return Err(DataError::Invalid(format!(
                "expected {} closing prices, got {}",
                days.len() * d,
                closes.len()
            )));
        }
        if ratios.len() != days.len() * d * RATIO_COUNT {
            return Err(DataError::Invalid(format!(
                "expected {} ratio values, got {}",
                days.len() * d * RATIO_COUNT,
                ratios.len()
            )));
        }
        if let Some(k) = closes.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(DataError::Invalid(format!(
                "non-positive close {} for {} on {}",
                closes[k],
                tickers[k % d],
                days[k / d]
            )));
        }
        if let Some(k) = ratios.iter().position(|r| !r.is_finite()) {
            let cell = k / RATIO_COUNT;
            return Err(DataError::Invalid(format!(
                "non-finite ratio for {} on {}",
                tickers[cell % d],
                days[cell / d]
            )));
        }
        Ok(Self {
            tickers,
            days,
            closes,
            ratios,
        })
    }

    pub fn tickers(&self) -> &[TickerId] {
        &self.tickers
    }

    pub fn ticker_count(&self) -> usize {
        self.tickers.len()
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    /// Closing prices of every ticker on `day`.
    pub fn closes(&self, day: usize) -> &[f64] {
        let d = self.ticker_count();
        &self.closes[day * d..(day + 1) * d]
    }

    /// The 15 ratios of `ticker` on `day`.
    pub fn ratios(&self, day: usize, ticker: usize) -> &[f64; RATIO_COUNT] {
        let start = (day * self.ticker_count() + ticker) * RATIO_COUNT;
        self.ratios[start..start + RATIO_COUNT]
            .try_into()
            .expect("slice has RATIO_COUNT entries")
    }

    /// Ratios of all tickers on `day`, ticker-major.
    pub fn day_ratios(&self, day: usize) -> &[[f64; RATIO_COUNT]] {
        let d = self.ticker_count();
        let flat = &self.ratios[day * d * RATIO_COUNT..(day + 1) * d * RATIO_COUNT];
        let (chunks, rest) = flat.as_chunks::<RATIO_COUNT>();
        debug_assert!(rest.is_empty());
        chunks
    }

    /// Contiguous sub-range of days `[start, end)`.
    pub fn slice_days(&self, start: usize, end: usize) -> Result<Self, DataError> {
        if start >= end || end > self.len() {
            return Err(DataError::Invalid(format!(
                "day range {start}..{end} outside 0..{}",
                self.len()
            )));
        }
        let d = self.ticker_count();
        Ok(Self {
            tickers: self.tickers.clone(),
            days: self.days[start..end].to_vec(),
            closes: self.closes[start * d..end * d].to_vec(),
            ratios: self.ratios[start * d * RATIO_COUNT..end * d * RATIO_COUNT].to_vec(),
        })
    }

    /// SHA-256 over tickers, dates and the bit patterns of every value.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.tickers.len() as u64).to_le_bytes());
        for t in &self.tickers {
            h.update((t.0.len() as u64).to_le_bytes());
            h.update(t.0.as_bytes());
        }
        h.update((self.days.len() as u64).to_le_bytes());
        for day in &self.days {
            h.update(day.to_string().as_bytes());
        }
        for v in self.closes.iter().chain(&self.ratios) {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Splits into `days < boundary` and `days >= boundary`.
pub fn split_by_date(
    dataset: &MarketDataset,
    boundary: NaiveDate,
) -> Result<(MarketDataset, MarketDataset), DataError> {
    let first = dataset.days[0];
    let last = *dataset.days.last().expect("dataset is non-empty");
    if boundary <= first || boundary > last {
        return Err(DataError::BoundaryOutOfRange { boundary, first, last });
    }
    let cut = dataset.days.partition_point(|d| *d < boundary);
    Ok((dataset.slice_days(0, cut)?, dataset.slice_days(cut, dataset.len())?))
}
