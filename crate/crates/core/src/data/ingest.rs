use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use super::{DataError, MarketDataset, TickerId, RATIO_COUNT, RATIO_NAMES};

#[derive(Debug, Clone, PartialEq)]
pub struct PriceRow {
    pub date: NaiveDate,
    pub ticker: TickerId,
    pub close: f64,
}

/// Rows of a price CSV in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriceTable {
    pub rows: Vec<PriceRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalRow {
    pub date: NaiveDate,
    pub ticker: TickerId,
    pub ratios: [f64; RATIO_COUNT],
}

/// Sparse (typically quarterly) ratio observations in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FundamentalTable {
    pub rows: Vec<FundamentalRow>,
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file))
}

struct Rows {
    path: PathBuf,
    reader: csv::Reader<std::fs::File>,
}

impl Rows {
    fn malformed(&self, line: u64, message: impl Into<String>) -> DataError {
        DataError::Malformed {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    /// Reads the header row and checks it against `expected`.
    fn header(&mut self, expected: &[&str]) -> Result<(), DataError> {
        let mut record = csv::StringRecord::new();
        let found = match self.reader.read_record(&mut record) {
            Ok(true) => record.iter().collect::<Vec<_>>().join(","),
            Ok(false) => String::new(),
            Err(e) => return Err(self.malformed(1, e.to_string())),
        };
        let want = expected.join(",");
        if found != want {
            return Err(DataError::Schema {
                path: self.path.clone(),
                expected: want,
                found,
            });
        }
        Ok(())
    }

    fn next(&mut self) -> Result<Option<(u64, csv::StringRecord)>, DataError> {
        let mut record = csv::StringRecord::new();
        match self.reader.read_record(&mut record) {
            Ok(true) => {
                let line = record.position().map_or(0, |p| p.line());
                Ok(Some((line, record)))
            }
            Ok(false) => Ok(None),
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                Err(self.malformed(line, e.to_string()))
            }
        }
    }

    fn key(&self, line: u64, record: &csv::StringRecord, width: usize) -> Result<(NaiveDate, TickerId), DataError> {
        if record.len() != width {
            return Err(self.malformed(line, format!("expected {width} columns, found {}", record.len())));
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|e| self.malformed(line, format!("bad date `{}`: {e}", &record[0])))?;
        let ticker =
            TickerId::new(&record[1]).map_err(|_| self.malformed(line, format!("bad ticker `{}`", &record[1])))?;
        Ok((date, ticker))
    }

    fn number(&self, line: u64, column: &str, cell: &str) -> Result<f64, DataError> {
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(_) => Err(self.malformed(line, format!("column {column}: non-finite value `{cell}`"))),
            Err(_) => Err(self.malformed(line, format!("column {column}: not a number `{cell}`"))),
        }
    }
}

/// Parses a `date,ticker,close` CSV.
pub fn load_prices(path: impl AsRef<Path>) -> Result<PriceTable, DataError> {
    let path = path.as_ref();
    let mut rows = Rows {
        path: path.to_path_buf(),
        reader: open(path)?,
    };
    rows.header(&["date", "ticker", "close"])?;
    let mut seen = HashSet::new();
    let mut table = PriceTable::default();
    while let Some((line, record)) = rows.next()? {
        let (date, ticker) = rows.key(line, &record, 3)?;
        let close = rows.number(line, "close", &record[2])?;
        if close <= 0.0 {
            return Err(rows.malformed(line, format!("close must be positive, got {close}")));
        }
        if !seen.insert((date, ticker.clone())) {
            return Err(DataError::Duplicate {
                path: path.to_path_buf(),
                line,
                date: date.to_string(),
                ticker: ticker.to_string(),
            });
        }
        table.rows.push(PriceRow { date, ticker, close });
    }
    Ok(table)
}

/// Parses a `date,ticker,<15 ratios>` CSV.
pub fn load_fundamentals(path: impl AsRef<Path>) -> Result<FundamentalTable, DataError> {
    let path = path.as_ref();
    let mut rows = Rows {
        path: path.to_path_buf(),
        reader: open(path)?,
    };
    let mut header = vec!["date", "ticker"];
    header.extend(RATIO_NAMES);
    rows.header(&header)?;
    let mut seen = HashSet::new();
    let mut table = FundamentalTable::default();
    while let Some((line, record)) = rows.next()? {
        let (date, ticker) = rows.key(line, &record, 2 + RATIO_COUNT)?;
        let mut ratios = [0.0; RATIO_COUNT];
        for (j, r) in ratios.iter_mut().enumerate() {
            *r = rows.number(line, RATIO_NAMES[j], &record[2 + j])?;
        }
        if !seen.insert((date, ticker.clone())) {
            return Err(DataError::Duplicate {
                path: path.to_path_buf(),
                line,
                date: date.to_string(),
                ticker: ticker.to_string(),
            });
        }
        table.rows.push(FundamentalRow { date, ticker, ratios });
    }
    Ok(table)
}

/// Builds the dense day × ticker grid.
///
/// Tickers keep their order of first appearance in the price table. A day is
/// retained when every ticker has a price on it and every ticker already has a
/// fundamental observation at or before it; each retained day carries the most
/// recent observation per ticker.
pub fn align_forward_fill(prices: &PriceTable, fundamentals: &FundamentalTable) -> Result<MarketDataset, DataError> {
    let mut tickers: Vec<TickerId> = Vec::new();
    let mut ticker_index: HashMap<&TickerId, usize> = HashMap::new();
    for row in &prices.rows {
        if !ticker_index.contains_key(&row.ticker) {
            ticker_index.insert(&row.ticker, tickers.len());
            tickers.push(row.ticker.clone());
        }
    }
    if tickers.is_empty() {
        return Err(DataError::Invalid("price table is empty".into()));
    }
    let d = tickers.len();

    let mut observations: Vec<Vec<(NaiveDate, &[f64; RATIO_COUNT])>> = vec![Vec::new(); d];
    for row in &fundamentals.rows {
        if let Some(&i) = ticker_index.get(&row.ticker) {
            observations[i].push((row.date, &row.ratios));
        }
    }
    for (i, obs) in observations.iter_mut().enumerate() {
        if obs.is_empty() {
            return Err(DataError::MissingFundamentals(tickers[i].to_string()));
        }
        obs.sort_by_key(|(date, _)| *date);
    }
    let first_covered = observations
        .iter()
        .map(|obs| obs[0].0)
        .max()
        .expect("at least one ticker");

    let mut by_day: BTreeMap<NaiveDate, Vec<Option<f64>>> = BTreeMap::new();
    for row in &prices.rows {
        by_day.entry(row.date).or_insert_with(|| vec![None; d])[ticker_index[&row.ticker]] = Some(row.close);
    }

    let mut days = Vec::new();
    let mut closes = Vec::new();
    let mut ratios = Vec::new();
    let mut cursor = vec![0usize; d];
    for (date, row) in by_day.range(first_covered..) {
        if row.iter().any(Option::is_none) {
            continue;
        }
        days.push(*date);
        closes.extend(row.iter().map(|p| p.expect("checked complete")));
        for (i, obs) in observations.iter().enumerate() {
            while cursor[i] + 1 < obs.len() && obs[cursor[i] + 1].0 <= *date {
                cursor[i] += 1;
            }
            ratios.extend_from_slice(obs[cursor[i]].1);
        }
    }
    if days.is_empty() {
        return Err(DataError::Invalid(format!(
            "no trading day on or after {first_covered} has prices for every ticker"
        )));
    }
    MarketDataset::new(tickers, days, closes, ratios)
}

/// Writes every (day, ticker) close as a `date,ticker,close` CSV.
pub fn write_prices_csv<W: Write>(dataset: &MarketDataset, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["date", "ticker", "close"])?;
    for (day, date) in dataset.days().iter().enumerate() {
        let date = date.to_string();
        for (i, t) in dataset.tickers().iter().enumerate() {
            w.write_record([date.as_str(), t.as_str(), &dataset.closes(day)[i].to_string()])?;
        }
    }
    w.flush()
}

/// Writes the dense daily ratio grid as a fundamentals CSV.
pub fn write_fundamentals_csv<W: Write>(dataset: &MarketDataset, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["date", "ticker"];
    header.extend(RATIO_NAMES);
    w.write_record(&header)?;
    for (day, date) in dataset.days().iter().enumerate() {
        for (i, t) in dataset.tickers().iter().enumerate() {
            let mut record = vec![date.to_string(), t.to_string()];
            record.extend(dataset.ratios(day, i).iter().map(f64::to_string));
            w.write_record(&record)?;
        }
    }
    w.flush()
}
