//! Training data mixture: per-category epoch multipliers applied to data
//! token counts, and the resulting token shares.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Category;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BlendError {
    #[error("multiplier for {0} is negative or not finite")]
    NegativeMultiplier(Category),
    #[error("no multiplier given for {0}")]
    MissingMultiplier(Category),
    #[error("manifest has no training tokens")]
    EmptyManifest,
    #[error("token counts and step sizes must be positive")]
    ZeroTokens,
    #[error("bad multiplier {0:?}: expected a number or \"num/den\"")]
    BadMultiplier(String),
}

/// Epoch multiplier. Deserializes from a JSON number or a `"num/den"` string.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Multiplier(pub f64);

impl Multiplier {
    pub fn ratio(num: f64, den: f64) -> Self {
        Multiplier(num / den)
    }

    pub fn parse(s: &str) -> Result<Self, BlendError> {
        let bad = || BlendError::BadMultiplier(s.to_string());
        match s.split_once('/') {
            Some((n, d)) => {
                let n: f64 = n.trim().parse().map_err(|_| bad())?;
                let d: f64 = d.trim().parse().map_err(|_| bad())?;
                if d == 0.0 {
                    return Err(bad());
                }
                Ok(Multiplier(n / d))
            }
            None => s.trim().parse().map(Multiplier).map_err(|_| bad()),
        }
    }
}

impl<'de> Deserialize<'de> for Multiplier {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Multiplier(v)),
            Raw::Text(s) => Multiplier::parse(&s).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlendRow {
    pub category: Category,
    pub data_tokens: u64,
    pub multiplier: f64,
    pub training_tokens: u64,
    pub data_share: f64,
    pub training_share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlendManifest {
    pub rows: Vec<BlendRow>,
    pub total_data_tokens: u64,
    pub total_training_tokens: u64,
}

/// Applies `multipliers` to `data_tokens`. Training tokens per row are
/// rounded half-to-even; totals are sums of the rounded rows.
pub fn compute_blend(
    data_tokens: &BTreeMap<Category, u64>,
    multipliers: &BTreeMap<Category, Multiplier>,
) -> Result<BlendManifest, BlendError> {
    let mut rows = Vec::with_capacity(data_tokens.len());
    for (&category, &data) in data_tokens {
        let m = multipliers
            .get(&category)
            .ok_or(BlendError::MissingMultiplier(category))?
            .0;
        if !(m.is_finite() && m >= 0.0) {
            return Err(BlendError::NegativeMultiplier(category));
        }
        rows.push(BlendRow {
            category,
            data_tokens: data,
            multiplier: m,
            training_tokens: (data as f64 * m).round_ties_even() as u64,
            data_share: 0.0,
            training_share: 0.0,
        });
    }
    let total_data_tokens: u64 = rows.iter().map(|r| r.data_tokens).sum();
    let total_training_tokens: u64 = rows.iter().map(|r| r.training_tokens).sum();
    if total_training_tokens == 0 || total_data_tokens == 0 {
        return Err(BlendError::EmptyManifest);
    }
    for r in &mut rows {
        r.data_share = r.data_tokens as f64 / total_data_tokens as f64;
        r.training_share = r.training_tokens as f64 / total_training_tokens as f64;
    }
    Ok(BlendManifest {
        rows,
        total_data_tokens,
        total_training_tokens,
    })
}

/// Share of training tokens drawn from public categories.
pub fn public_fraction(manifest: &BlendManifest) -> Result<f64, BlendError> {
    if manifest.rows.is_empty() || manifest.total_training_tokens == 0 {
        return Err(BlendError::EmptyManifest);
    }
    let public: u64 = manifest
        .rows
        .iter()
        .filter(|r| r.category.is_public())
        .map(|r| r.training_tokens)
        .sum();
    Ok(public as f64 / manifest.total_training_tokens as f64)
}

/// Passes over the blend implied by a step budget.
pub fn epochs_from_budget(
    total_training_tokens: u64,
    tokens_per_step: u64,
    steps: u64,
) -> Result<f64, BlendError> {
    if total_training_tokens == 0 || tokens_per_step == 0 || steps == 0 {
        return Err(BlendError::ZeroTokens);
    }
    Ok(steps as f64 * tokens_per_step as f64 / total_training_tokens as f64)
}

impl BlendManifest {
    pub fn row(&self, category: Category) -> Option<&BlendRow> {
        self.rows.iter().find(|r| r.category == category)
    }

    /// Plain-text table with shares to one decimal place and token counts in
    /// billions.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14} {:>8} {:>10} {:>8} {:>10} {:>10}",
            "category", "data %", "data (B)", "mult", "train %", "train (B)"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<14} {:>7.1}% {:>10.1} {:>8.3} {:>9.1}% {:>10.1}",
                r.category.name(),
                r.data_share * 100.0,
                r.data_tokens as f64 / 1e9,
                r.multiplier,
                r.training_share * 100.0,
                r.training_tokens as f64 / 1e9,
            );
        }
        let _ = writeln!(
            s,
            "{:<14} {:>7.1}% {:>10.1} {:>8} {:>9.1}% {:>10.1}",
            "Total",
            100.0,
            self.total_data_tokens as f64 / 1e9,
            "",
            100.0,
            self.total_training_tokens as f64 / 1e9,
        );
        s
    }
}
