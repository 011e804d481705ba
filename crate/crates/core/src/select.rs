//! Budgeted subset selection from a score table.

use std::fmt;
use std::path::Path;

use crate::error::{NaitError, Result};
use crate::fsio::{read_text, write_atomic};
use crate::rng::DetRng;
use crate::scalar::Scalar;
use crate::score::ScoreTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMode {
    Top,
    Bottom,
    /// Seeded uniform sample without replacement.
    Random,
}

impl std::str::FromStr for SelectMode {
    type Err = NaitError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top" => Ok(SelectMode::Top),
            "bottom" => Ok(SelectMode::Bottom),
            "random" => Ok(SelectMode::Random),
            other => Err(NaitError::Config(format!("unknown selection mode {other:?}"))),
        }
    }
}

impl fmt::Display for SelectMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectMode::Top => "top",
            SelectMode::Bottom => "bottom",
            SelectMode::Random => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Count(usize),
    /// Fraction of the table, resolved with floor.
    Proportion(f64),
}

impl Budget {
    /// `Count(k)` must satisfy `k <= n`; `Proportion(p)` resolves to
    /// `floor(p * n)`. A slack of 1e-9 absorbs binary representation error
    /// so that e.g. 0.29 of 100 is 29, not 28.
    pub fn resolve(self, n: usize) -> Result<usize> {
        match self {
            Budget::Count(k) if k <= n => Ok(k),
            Budget::Count(k) => Err(NaitError::Budget(format!("k = {k} exceeds table size {n}"))),
            Budget::Proportion(p) if (0.0..=1.0).contains(&p) => Ok(((p * n as f64 + 1e-9).floor() as usize).min(n)),
            Budget::Proportion(p) => Err(NaitError::Budget(format!("proportion {p} outside [0, 1]"))),
        }
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Count(k) => write!(f, "count:{k}"),
            Budget::Proportion(p) => write!(f, "proportion:{p}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionSpec {
    pub mode: SelectMode,
    pub budget: Budget,
    /// Used by random mode only.
    pub seed: u64,
}

impl SelectionSpec {
    pub fn top(budget: Budget) -> Self {
        SelectionSpec { mode: SelectMode::Top, budget, seed: 0 }
    }

    pub fn bottom(budget: Budget) -> Self {
        SelectionSpec { mode: SelectMode::Bottom, budget, seed: 0 }
    }

    pub fn random(budget: Budget, seed: u64) -> Self {
        SelectionSpec { mode: SelectMode::Random, budget, seed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult<S> {
    pub spec: SelectionSpec,
    pub capability: String,
    /// In selection order.
    pub selected_ids: Vec<String>,
    /// Score of the last selected record (top/bottom with k > 0 only).
    pub threshold_score: Option<S>,
}

/// Pick `k` ids from the table.
///
/// - top: the first `k` records in canonical order (descending score, ties by
///   ascending id).
/// - bottom: the `k` lowest scores, ties by ascending id.
/// - random: ids sorted ascending, permuted by [`DetRng::permutation`]
///   seeded with `spec.seed`; the first `k` of the permutation.
pub fn select<S: Scalar>(table: &ScoreTable<S>, spec: SelectionSpec) -> Result<SelectionResult<S>> {
    let n = table.len();
    let k = spec.budget.resolve(n)?;
    let (selected_ids, threshold_score) = match spec.mode {
        SelectMode::Top => {
            let chosen = &table.records[..k];
            (
                chosen.iter().map(|r| r.sample_id.clone()).collect(),
                chosen.last().map(|r| r.score),
            )
        }
        SelectMode::Bottom => {
            let mut order: Vec<_> = table.records.iter().collect();
            order.sort_by(|a, b| {
                a.score
                    .partial_cmp(&b.score)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| a.sample_id.cmp(&b.sample_id))
            });
            order.truncate(k);
            (
                order.iter().map(|r| r.sample_id.clone()).collect(),
                order.last().map(|r| r.score),
            )
        }
        SelectMode::Random => {
            let mut ids: Vec<&str> = table.records.iter().map(|r| r.sample_id.as_str()).collect();
            ids.sort_unstable();
            let perm = DetRng::new(spec.seed).permutation(n);
            (perm[..k].iter().map(|&i| ids[i].to_string()).collect(), None)
        }
    };
    Ok(SelectionResult {
        spec,
        capability: table.capability.clone(),
        selected_ids,
        threshold_score,
    })
}

impl<S: Scalar> SelectionResult<S> {
    /// `# mode=… budget=… seed=… capability=…` then one id per line.
    pub fn to_text(&self) -> String {
        let seed = match self.spec.mode {
            SelectMode::Random => self.spec.seed.to_string(),
            _ => "-".to_string(),
        };
        let mut out = format!(
            "# mode={} budget={} seed={} capability={}\n",
            self.spec.mode, self.spec.budget, seed, self.capability
        );
        for id in &self.selected_ids {
            out.push_str(id);
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_text().as_bytes())
    }
}

/// Read the ids of a selection file, skipping `#` comment lines.
pub fn parse_selection_ids(text: &str) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            return Err(NaitError::format(None, format!("line {}: empty sample id", i + 1)));
        }
        ids.push(line.to_string());
    }
    Ok(ids)
}

pub fn read_selection_ids(path: impl AsRef<Path>) -> Result<Vec<String>> {
    parse_selection_ids(&read_text(path.as_ref())?)
}
