//! Dataset archives: the two normalized CSVs plus JSON metadata.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use shufflerl::data::{
    align_forward_fill, load_fundamentals, load_prices, write_fundamentals_csv, write_prices_csv, MarketDataset,
};

use crate::error::CliError;

pub const PRICES_FILE: &str = "prices.csv";
pub const FUNDAMENTALS_FILE: &str = "fundamentals.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveMetadata {
    pub format_version: u32,
    pub tickers: Vec<String>,
    pub days: usize,
    pub first_day: NaiveDate,
    pub last_day: NaiveDate,
    /// SHA-256 over tickers, dates and values.
    pub fingerprint: String,
    /// How the data was produced (input paths or synthetic parameters).
    pub source: serde_json::Value,
}

impl ArchiveMetadata {
    pub fn describe(dataset: &MarketDataset, source: serde_json::Value) -> Self {
        Self {
            format_version: ARCHIVE_VERSION,
            tickers: dataset.tickers().iter().map(|t| t.to_string()).collect(),
            days: dataset.len(),
            first_day: dataset.days()[0],
            last_day: *dataset.days().last().expect("datasets are non-empty"),
            fingerprint: dataset.fingerprint(),
            source,
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "{} tickers ({}), {} days from {} to {}, fingerprint {}",
            self.tickers.len(),
            self.tickers.join(", "),
            self.days,
            self.first_day,
            self.last_day,
            self.fingerprint
        )
    }
}

pub fn write_archive(
    dataset: &MarketDataset,
    dir: &Path,
    source: serde_json::Value,
) -> Result<ArchiveMetadata, CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let prices = dir.join(PRICES_FILE);
    let file = File::create(&prices).map_err(CliError::io(&prices))?;
    write_prices_csv(dataset, BufWriter::new(file)).map_err(CliError::io(&prices))?;
    let fundamentals = dir.join(FUNDAMENTALS_FILE);
    let file = File::create(&fundamentals).map_err(CliError::io(&fundamentals))?;
    write_fundamentals_csv(dataset, BufWriter::new(file)).map_err(CliError::io(&fundamentals))?;
    let metadata = ArchiveMetadata::describe(dataset, source);
    write_json(&dir.join(METADATA_FILE), &metadata)?;
    Ok(metadata)
}

/// Loads an archive and checks the data against its recorded fingerprint.
pub fn read_archive(dir: &Path) -> Result<(MarketDataset, ArchiveMetadata), CliError> {
    let meta_path = dir.join(METADATA_FILE);
    let text = fs::read_to_string(&meta_path).map_err(CliError::io(&meta_path))?;
    let metadata: ArchiveMetadata =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", meta_path.display())))?;
    if metadata.format_version != ARCHIVE_VERSION {
        return Err(CliError::Data(format!(
            "{}: unsupported archive version {}",
            meta_path.display(),
            metadata.format_version
        )));
    }
    let prices = load_prices(dir.join(PRICES_FILE))?;
    let fundamentals = load_fundamentals(dir.join(FUNDAMENTALS_FILE))?;
    let dataset = align_forward_fill(&prices, &fundamentals)?;
    let fingerprint = dataset.fingerprint();
    if fingerprint != metadata.fingerprint {
        return Err(CliError::Data(format!(
            "{}: data fingerprint {fingerprint} does not match recorded {}",
            dir.display(),
            metadata.fingerprint
        )));
    }
    Ok((dataset, metadata))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let json =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    fs::write(path, json + "\n").map_err(CliError::io(path))
}
