//! Daily feature vectors, the ticker-block permutation and the sliding window
//! observation.
//!
//! Canonical layout for `D` tickers (total `1 + 17 * D` entries):
//!
//! | index                     | content                        |
//! |---------------------------|--------------------------------|
//! | `0`                       | scaled balance                 |
//! | `1 + i`                   | close of ticker `i`            |
//! | `1 + D + i`               | shares held of ticker `i`      |
//! | `1 + 2D + j * D + i`      | ratio `j` of ticker `i`        |
//!
//! The shuffled layout keeps the balance first and then groups every ticker's
//! price, holdings and 15 ratios into one contiguous block of 17.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::RATIO_COUNT;

/// Entries per ticker in the feature vector (price, shares, ratios).
pub const TICKER_BLOCK: usize = 2 + RATIO_COUNT;

/// Default number of days in the observation window.
pub const DEFAULT_WINDOW_LENGTH: usize = 90;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite {what} at position {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("price of ticker {index} must be positive, got {value}")]
    NonPositivePrice { index: usize, value: f64 },
    #[error("not a permutation: {0}")]
    NotBijective(String),
    #[error("layout mismatch: window holds {window:?} rows, vector is {vector:?}")]
    LayoutMismatch { window: LayoutTag, vector: LayoutTag },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub ticker_count: usize,
}

impl FeatureLayout {
    pub fn new(ticker_count: usize) -> Self {
        Self { ticker_count }
    }

    pub fn total(&self) -> usize {
        1 + TICKER_BLOCK * self.ticker_count
    }

    pub const fn balance_index(&self) -> usize {
        0
    }

    pub fn price_index(&self, ticker: usize) -> usize {
        1 + ticker
    }

    pub fn holding_index(&self, ticker: usize) -> usize {
        1 + self.ticker_count + ticker
    }

    pub fn ratio_index(&self, ratio: usize, ticker: usize) -> usize {
        1 + 2 * self.ticker_count + ratio * self.ticker_count + ticker
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutTag {
    Canonical,
    Shuffled,
}

/// Gather permutation: `out[k] = in[perm[k]]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct PermutationSpec {
    perm: Vec<usize>,
}

impl TryFrom<Vec<usize>> for PermutationSpec {
    type Error = FeatureError;

    fn try_from(perm: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(perm)
    }
}

impl From<PermutationSpec> for Vec<usize> {
    fn from(p: PermutationSpec) -> Self {
        p.perm
    }
}

impl PermutationSpec {
    pub fn new(perm: Vec<usize>) -> Result<Self, FeatureError> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for (k, &p) in perm.iter().enumerate() {
            if p >= n {
                return Err(FeatureError::NotBijective(format!(
                    "entry {k} = {p} is out of range 0..{n}"
                )));
            }
            if std::mem::replace(&mut seen[p], true) {
                return Err(FeatureError::NotBijective(format!("index {p} appears more than once")));
            }
        }
        Ok(Self { perm })
    }

    pub fn identity(len: usize) -> Self {
        Self {
            perm: (0..len).collect(),
        }
    }

    /// Balance first, then `[price_i, shares_i, ratio_0_i, .., ratio_14_i]`
    /// for each ticker `i`.
    pub fn ticker_block(layout: FeatureLayout) -> Self {
        let mut perm = Vec::with_capacity(layout.total());
        perm.push(layout.balance_index());
        for i in 0..layout.ticker_count {
            perm.push(layout.price_index(i));
            perm.push(layout.holding_index(i));
            perm.extend((0..RATIO_COUNT).map(|j| layout.ratio_index(j, i)));
        }
        Self { perm }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }

    pub fn invert(&self) -> Self {
        let mut inverse = vec![0; self.perm.len()];
        for (k, &p) in self.perm.iter().enumerate() {
            inverse[p] = k;
        }
        Self { perm: inverse }
    }

    /// The permutation equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &Self) -> Result<Self, FeatureError> {
        check_len("permutation", self.len(), next.len())?;
        Ok(Self {
            perm: next.perm.iter().map(|&k| self.perm[k]).collect(),
        })
    }

    /// Gathers `input` into `out` (`out[k] = input[perm[k]]`).
    pub fn gather_into(&self, input: &[f64], out: &mut [f64]) -> Result<(), FeatureError> {
        check_len("permutation input", self.len(), input.len())?;
        check_len("permutation output", self.len(), out.len())?;
        for (o, &p) in out.iter_mut().zip(&self.perm) {
            *o = input[p];
        }
        Ok(())
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), FeatureError> {
    if expected == got {
        Ok(())
    } else {
        Err(FeatureError::Dimension { what, expected, got })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    tag: LayoutTag,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, tag: LayoutTag) -> Result<Self, FeatureError> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite { what: "feature", index });
        }
        Ok(Self { values, tag })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tag(&self) -> LayoutTag {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Assembles the canonical daily vector; `ratios[i]` holds ticker `i`'s ratios.
pub fn build_feature_vector(
    balance: f64,
    prices: &[f64],
    holdings: &[u64],
    ratios: &[[f64; RATIO_COUNT]],
    scale: f64,
) -> Result<FeatureVector, FeatureError> {
    let d = prices.len();
    check_len("holdings", d, holdings.len())?;
    check_len("ratios", d, ratios.len())?;
    if !balance.is_finite() {
        return Err(FeatureError::NonFinite {
            what: "balance",
            index: 0,
        });
    }
    for (index, &value) in prices.iter().enumerate() {
        if !value.is_finite() {
            return Err(FeatureError::NonFinite { what: "price", index });
        }
        if value <= 0.0 {
            return Err(FeatureError::NonPositivePrice { index, value });
        }
    }
    let layout = FeatureLayout::new(d);
    let mut values = vec![0.0; layout.total()];
    values[layout.balance_index()] = balance * scale;
    for i in 0..d {
        values[layout.price_index(i)] = prices[i];
        values[layout.holding_index(i)] = holdings[i] as f64;
        for (j, &r) in ratios[i].iter().enumerate() {
            values[layout.ratio_index(j, i)] = r;
        }
    }
    FeatureVector::new(values, LayoutTag::Canonical)
}

/// `out[k] = v[p[k]]`; the result is tagged shuffled.
pub fn apply_permutation(v: &FeatureVector, p: &PermutationSpec) -> Result<FeatureVector, FeatureError> {
    let mut out = vec![0.0; v.len()];
    p.gather_into(&v.values, &mut out)?;
    Ok(FeatureVector {
        values: out,
        tag: LayoutTag::Shuffled,
    })
}

pub fn invert_permutation(p: &PermutationSpec) -> PermutationSpec {
    p.invert()
}

/// `window_length` consecutive feature vectors stacked oldest-first.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMatrix {
    rows: usize,
    width: usize,
    tag: LayoutTag,
    data: Vec<f64>,
}

impl WindowMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn tag(&self) -> LayoutTag {
        self.tag
    }

    /// Row-major `rows x width` values.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.width..(r + 1) * self.width]
    }

    pub fn newest(&self) -> &[f64] {
        self.row(self.rows - 1)
    }

    /// Drops the oldest row and appends `newest`.
    pub fn slide(&mut self, newest: &FeatureVector) -> Result<(), FeatureError> {
        if newest.tag != self.tag {
            return Err(FeatureError::LayoutMismatch {
                window: self.tag,
                vector: newest.tag,
            });
        }
        check_len("window row", self.width, newest.len())?;
        self.data.copy_within(self.width.., 0);
        let start = (self.rows - 1) * self.width;
        self.data[start..].copy_from_slice(&newest.values);
        Ok(())
    }

    /// CSV dump, one row per day, oldest first.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.width).map(|k| format!("f{k}")).collect();
        writeln!(out, "row,{}", header.join(","))?;
        for r in 0..self.rows {
            let cells: Vec<String> = self.row(r).iter().map(f64::to_string).collect();
            writeln!(out, "{r},{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Stacks exactly `window_length` vectors, oldest first.
pub fn init_window(vectors: &[FeatureVector], window_length: usize) -> Result<WindowMatrix, FeatureError> {
    check_len("window vectors", window_length, vectors.len())?;
    let first = vectors.first().ok_or(FeatureError::Dimension {
        what: "window vectors",
        expected: 1,
        got: 0,
    })?;
    let (width, tag) = (first.len(), first.tag);
    let mut data = Vec::with_capacity(window_length * width);
    for v in vectors {
        if v.tag != tag {
            return Err(FeatureError::LayoutMismatch {
                window: tag,
                vector: v.tag,
            });
        }
        check_len("window row", width, v.len())?;
        data.extend_from_slice(&v.values);
    }
    Ok(WindowMatrix {
        rows: window_length,
        width,
        tag,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(values: &[f64]) -> FeatureVector {
        FeatureVector::new(values.to_vec(), LayoutTag::Canonical).unwrap()
    }

    #[test]
    fn dow_thirty_vector() {
        let d = 30;
        let v = build_feature_vector(
            1_000_000.0,
            &vec![50.0; d],
            &vec![0; d],
            &vec![[0.0; RATIO_COUNT]; d],
            1e-6,
        )
        .unwrap();
        assert_eq!(v.len(), 511);
        assert_eq!(v.values()[0], 1.0);
    }

    #[test]
    fn two_ticker_layout() {
        let v = build_feature_vector(0.0, &[10.0, 20.0], &[0, 0], &[[0.0; 15]; 2], 1e-6).unwrap();
        let mut expected = vec![0.0; 35];
        expected[1] = 10.0;
        expected[2] = 20.0;
        assert_eq!(v.values(), expected.as_slice());
    }

    #[test]
    fn ratio_index_arithmetic() {
        let layout = FeatureLayout::new(2);
        // Enumerate the canonical layout block by block and find ratio 3 of ticker 1.
        let mut labels = vec!["balance".to_string()];
        labels.extend((0..2).map(|i| format!("p{i}")));
        labels.extend((0..2).map(|i| format!("h{i}")));
        for j in 0..15 {
            labels.extend((0..2).map(|i| format!("r{j}_{i}")));
        }
        let oracle = labels.iter().position(|l| l == "r3_1").unwrap();
        assert_eq!(oracle, 12);
        assert_eq!(layout.ratio_index(3, 1), oracle);

        let mut ratios = [[0.0; 15]; 2];
        ratios[1][3] = 7.5;
        let v = build_feature_vector(0.0, &[1.0, 1.0], &[0, 0], &ratios, 1.0).unwrap();
        assert_eq!(v.values()[12], 7.5);
    }

    #[test]
    fn build_rejects_bad_inputs() {
        assert!(matches!(
            build_feature_vector(0.0, &[1.0, 2.0], &[0], &[[0.0; 15]; 2], 1.0),
            Err(FeatureError::Dimension { .. })
        ));
        assert!(matches!(
            build_feature_vector(0.0, &[1.0], &[0], &[[f64::NAN; 15]], 1.0),
            Err(FeatureError::NonFinite { .. })
        ));
        assert!(matches!(
            build_feature_vector(0.0, &[0.0], &[0], &[[0.0; 15]], 1.0),
            Err(FeatureError::NonPositivePrice { .. })
        ));
    }

    #[test]
    fn single_ticker_block_is_identity() {
        let p = PermutationSpec::ticker_block(FeatureLayout::new(1));
        assert_eq!(p, PermutationSpec::identity(18));
    }

    #[test]
    fn two_ticker_block_permutation() {
        // Brute force: label every canonical index, then list the labels in
        // the desired ticker-major order and look each one up.
        let d = 2;
        let layout = FeatureLayout::new(d);
        let mut label_at = vec![String::new(); layout.total()];
        label_at[0] = "b".into();
        for i in 0..d {
            label_at[1 + i] = format!("p{i}");
            label_at[1 + d + i] = format!("h{i}");
            for j in 0..15 {
                label_at[1 + 2 * d + j * d + i] = format!("r{j}_{i}");
            }
        }
        let mut wanted = vec!["b".to_string()];
        for i in 0..d {
            wanted.push(format!("p{i}"));
            wanted.push(format!("h{i}"));
            wanted.extend((0..15).map(|j| format!("r{j}_{i}")));
        }
        let oracle: Vec<usize> = wanted
            .iter()
            .map(|w| label_at.iter().position(|l| l == w).unwrap())
            .collect();
        let expected = vec![
            0, 1, 3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23, 25, 27, 29, 31, 33, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22,
            24, 26, 28, 30, 32, 34,
        ];
        assert_eq!(oracle, expected);
        assert_eq!(PermutationSpec::ticker_block(layout).as_slice(), expected.as_slice());
    }

    #[test]
    fn price_and_shares_adjacent_after_shuffle() {
        let d = 5;
        let prices: Vec<f64> = (0..d).map(|i| 100.0 + i as f64).collect();
        let holdings: Vec<u64> = (0..d as u64).map(|i| 1000 + i).collect();
        let v = build_feature_vector(3.0, &prices, &holdings, &vec![[0.5; 15]; d], 1.0).unwrap();
        let p = PermutationSpec::ticker_block(FeatureLayout::new(d));
        let s = apply_permutation(&v, &p).unwrap();
        for i in 0..d {
            assert_eq!(s.values()[1 + TICKER_BLOCK * i], prices[i]);
            assert_eq!(s.values()[1 + TICKER_BLOCK * i + 1], holdings[i] as f64);
        }
    }

    #[test]
    fn apply_examples() {
        let v = fv(&[1.0, 2.0, 3.0, 4.0]);
        let id = PermutationSpec::identity(4);
        assert_eq!(apply_permutation(&v, &id).unwrap().values(), v.values());
        let p = PermutationSpec::new(vec![2, 0, 3, 1]).unwrap();
        assert_eq!(apply_permutation(&v, &p).unwrap().values(), &[3.0, 1.0, 4.0, 2.0]);
        let short = PermutationSpec::identity(3);
        assert!(apply_permutation(&v, &short).is_err());
    }

    #[test]
    fn invert_examples() {
        assert_eq!(PermutationSpec::identity(5).invert(), PermutationSpec::identity(5));
        let p = PermutationSpec::new(vec![2, 0, 1]).unwrap();
        assert_eq!(p.invert().as_slice(), &[1, 2, 0]);
        assert_eq!(p.then(&p.invert()).unwrap(), PermutationSpec::identity(3));
    }

    #[test]
    fn rejects_non_bijections() {
        assert!(PermutationSpec::new(vec![0, 0, 1]).is_err());
        assert!(PermutationSpec::new(vec![0, 3, 1]).is_err());
        let parsed: Result<PermutationSpec, _> = serde_json::from_str("[1, 1]");
        assert!(parsed.is_err());
        let parsed: PermutationSpec = serde_json::from_str("[1, 0]").unwrap();
        assert_eq!(serde_json::to_string(&parsed).unwrap(), "[1,0]");
    }

    #[test]
    fn window_init_and_slide() {
        let v: Vec<FeatureVector> = (1..=4).map(|k| fv(&[k as f64, 10.0 * k as f64])).collect();
        assert!(init_window(&v[..2], 3).is_err());
        let mut w = init_window(&v[..3], 3).unwrap();
        assert_eq!(w.row(0), v[0].values());
        assert_eq!(w.newest(), v[2].values());
        w.slide(&v[3]).unwrap();
        assert_eq!((w.rows(), w.width()), (3, 2));
        assert_eq!(w.row(0), v[1].values());
        assert_eq!(w.row(1), v[2].values());
        assert_eq!(w.row(2), v[3].values());
    }

    #[test]
    fn ninety_day_window() {
        let v: Vec<FeatureVector> = (0..90)
            .map(|t| build_feature_vector(1e6, &[t as f64 + 1.0; 30], &[0; 30], &[[0.0; 15]; 30], 1e-6).unwrap())
            .collect();
        assert!(init_window(&v[..89], 90).is_err());
        let w = init_window(&v, 90).unwrap();
        assert_eq!((w.rows(), w.width()), (90, 511));
        assert_eq!(w.newest()[1], 90.0);
    }

    #[test]
    fn window_rejects_mixed_layouts() {
        let a = fv(&[1.0, 2.0]);
        let b = FeatureVector::new(vec![1.0, 2.0], LayoutTag::Shuffled).unwrap();
        assert!(matches!(
            init_window(&[a.clone(), b.clone()], 2),
            Err(FeatureError::LayoutMismatch { .. })
        ));
        let mut w = init_window(&[a.clone(), a], 2).unwrap();
        assert!(w.slide(&b).is_err());
    }

    #[test]
    fn sliding_full_length_replaces_every_row() {
        let seq: Vec<FeatureVector> = (0..10).map(|k| fv(&[k as f64])).collect();
        let mut w = init_window(&seq[..4], 4).unwrap();
        for v in &seq[4..8] {
            w.slide(v).unwrap();
        }
        // Oracle: replay the sequence and take the last four.
        let expected: Vec<f64> = seq[4..8].iter().map(|v| v.values()[0]).collect();
        assert_eq!(w.as_slice(), expected.as_slice());
    }

    #[test]
    fn window_csv_dump() {
        let w = init_window(&[fv(&[1.0, 2.5]), fv(&[3.0, 4.0])], 2).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "row,f0,f1\n0,1,2.5\n1,3,4\n");
    }
}
