//! Market data: CSV ingestion, forward-fill alignment, synthetic markets,
//! the turbulence index and date splits.

mod dataset;
mod ingest;
mod synthetic;
mod turbulence;

pub use dataset::{split_by_date, MarketDataset, TickerId};
pub use ingest::{
    align_forward_fill, load_fundamentals, load_prices, write_fundamentals_csv, write_prices_csv, FundamentalRow,
    FundamentalTable, PriceRow, PriceTable,
};
pub use synthetic::{generate_synthetic_market, SynthConfig};
pub use turbulence::{compute_turbulence, mahalanobis_squared, TurbulenceSeries, DEFAULT_TURBULENCE_LOOKBACK};

use std::path::PathBuf;

/// Number of financial ratios carried per ticker per day.
pub const RATIO_COUNT: usize = 15;

/// Ratio column names, in feature order.
pub const RATIO_NAMES: [&str; RATIO_COUNT] = [
    "current_ratio",
    "cash_ratio",
    "quick_ratio",
    "debt_ratio",
    "debt_to_equity",
    "inventory_turnover",
    "receivables_turnover",
    "payables_turnover",
    "operating_margin",
    "net_profit_margin",
    "return_on_assets",
    "return_on_equity",
    "earnings_per_share",
    "book_per_share",
    "dividend_per_share",
];

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: u64, message: String },
    #[error("{path}: expected header `{expected}`, found `{found}`")]
    Schema {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}:{line}: duplicate entry for ({date}, {ticker})")]
    Duplicate {
        path: PathBuf,
        line: u64,
        date: String,
        ticker: String,
    },
    #[error("ticker {0} has prices but no fundamentals")]
    MissingFundamentals(String),
    #[error("invalid ticker symbol `{0}`")]
    InvalidTicker(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("split boundary {boundary} is outside ({first}, {last}]")]
    BoundaryOutOfRange {
        boundary: chrono::NaiveDate,
        first: chrono::NaiveDate,
        last: chrono::NaiveDate,
    },
}
