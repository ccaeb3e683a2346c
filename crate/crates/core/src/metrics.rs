//! Balanced accuracy, demographic parity and equalized opportunity over hard
//! binary predictions with a binary sensitive attribute.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalRecord {
    pub y_pred: u8,
    pub y_true: u8,
    pub s: u8,
}

impl EvalRecord {
    pub fn new(y_pred: u8, y_true: u8, s: u8) -> Result<Self> {
        if y_pred > 1 || y_true > 1 || s > 1 {
            return Err(Error::contract(format!(
                "record fields must be 0/1, got pred={y_pred} true={y_true} s={s}"
            )));
        }
        Ok(Self { y_pred, y_true, s })
    }
}

/// Counts indexed `[s][y_true][y_pred]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion(pub [[[u64; 2]; 2]; 2]);

impl Confusion {
    pub fn from_records(records: &[EvalRecord]) -> Self {
        let mut c = [[[0u64; 2]; 2]; 2];
        for r in records {
            c[r.s as usize][r.y_true as usize][r.y_pred as usize] += 1;
        }
        Self(c)
    }

    pub fn get(&self, s: usize, y: usize, p: usize) -> u64 {
        self.0[s][y][p]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().flatten().sum()
    }

    fn rate(&self, s: usize, y: usize, p: usize) -> Result<f64> {
        let n = self.0[s][y][0] + self.0[s][y][1];
        if n == 0 {
            return Err(Error::UndefinedMetric(format!("s={s}, y={y}")));
        }
        Ok(self.0[s][y][p] as f64 / n as f64)
    }

    /// `P(ŷ=1 | s)`.
    fn positive_rate(&self, s: usize) -> Result<f64> {
        let g = &self.0[s];
        let n = g[0][0] + g[0][1] + g[1][0] + g[1][1];
        if n == 0 {
            return Err(Error::UndefinedMetric(format!("s={s}")));
        }
        Ok((g[0][1] + g[1][1]) as f64 / n as f64)
    }

    pub fn accuracy(&self) -> Result<f64> {
        let n = self.total();
        if n == 0 {
            return Err(Error::UndefinedMetric("all records".into()));
        }
        let correct: u64 = (0..2).map(|s| self.0[s][0][0] + self.0[s][1][1]).sum();
        Ok(correct as f64 / n as f64)
    }

    pub fn balanced_accuracy(&self) -> Result<f64> {
        let mut total = 0.0;
        for s in 0..2 {
            total += self.rate(s, 1, 1)? + self.rate(s, 0, 0)?;
        }
        Ok(total / 4.0)
    }

    pub fn demographic_parity(&self) -> Result<f64> {
        Ok((self.positive_rate(1)? - self.positive_rate(0)?).abs())
    }

    pub fn equalized_opportunity(&self) -> Result<f64> {
        Ok((self.rate(1, 1, 1)? - self.rate(0, 1, 1)?).abs())
    }
}

pub fn balanced_accuracy(records: &[EvalRecord]) -> Result<f64> {
    Confusion::from_records(records).balanced_accuracy()
}

pub fn demographic_parity(records: &[EvalRecord]) -> Result<f64> {
    Confusion::from_records(records).demographic_parity()
}

pub fn equalized_opportunity(records: &[EvalRecord]) -> Result<f64> {
    Confusion::from_records(records).equalized_opportunity()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FairnessReport {
    pub accuracy: f64,
    pub ba: f64,
    pub dp: f64,
    pub eo: f64,
    pub counts: Confusion,
}

impl FairnessReport {
    pub fn from_records(records: &[EvalRecord]) -> Result<Self> {
        Self::from_counts(Confusion::from_records(records))
    }

    pub fn from_counts(counts: Confusion) -> Result<Self> {
        Ok(Self {
            accuracy: counts.accuracy()?,
            ba: counts.balanced_accuracy()?,
            dp: counts.demographic_parity()?,
            eo: counts.equalized_opportunity()?,
            counts,
        })
    }

    /// `key=value` lines: `acc`, `ba`, `dp`, `eo`, then `n_s{s}_y{y}_p{p}`.
    pub fn to_kv(&self) -> String {
        let mut out = format!(
            "acc={}\nba={}\ndp={}\neo={}\n",
            self.accuracy, self.ba, self.dp, self.eo
        );
        for s in 0..2 {
            for y in 0..2 {
                for p in 0..2 {
                    let _ = writeln!(out, "n_s{s}_y{y}_p{p}={}", self.counts.get(s, y, p));
                }
            }
        }
        out
    }

    /// Reads the counts back from [`to_kv`](Self::to_kv) output and recomputes.
    pub fn from_kv(text: &str) -> Result<Self> {
        let kv: BTreeMap<&str, &str> = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim(), v.trim()))
            .collect();
        let mut c = [[[0u64; 2]; 2]; 2];
        for s in 0..2 {
            for y in 0..2 {
                for p in 0..2 {
                    let key = format!("n_s{s}_y{y}_p{p}");
                    let v = kv
                        .get(key.as_str())
                        .ok_or_else(|| Error::contract(format!("report lacks {key}")))?;
                    c[s][y][p] = v
                        .parse()
                        .map_err(|_| Error::contract(format!("{key}={v} is not a count")))?;
                }
            }
        }
        Self::from_counts(Confusion(c))
    }
}
