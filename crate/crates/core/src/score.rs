//! Projection scoring of candidate samples against capability profiles.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{NaitError, Result};
use crate::fsio::{read_text, write_atomic};
use crate::profile::CapabilityProfile;
use crate::scalar::{fmt_sig9, Scalar};
use crate::trace::{ActivationTrace, TraceSet};

/// Which per-layer summary of a candidate is projected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActivationMode {
    #[default]
    Mean,
    Last,
    /// `last - first`
    Delta,
}

impl std::str::FromStr for ActivationMode {
    type Err = NaitError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(ActivationMode::Mean),
            "last" => Ok(ActivationMode::Last),
            "delta" => Ok(ActivationMode::Delta),
            other => Err(NaitError::Config(format!("unknown activation mode {other:?}"))),
        }
    }
}

impl fmt::Display for ActivationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActivationMode::Mean => "mean",
            ActivationMode::Last => "last",
            ActivationMode::Delta => "delta",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord<S> {
    pub sample_id: String,
    pub score: S,
}

/// Scores ordered by descending score, ties by ascending sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable<S> {
    pub capability: String,
    /// `None` when the table was loaded from a score file.
    pub activation_mode: Option<ActivationMode>,
    pub records: Vec<ScoreRecord<S>>,
}

/// Canonical record order: descending score, then ascending id.
pub fn canonical_order<S: Scalar>(a: &ScoreRecord<S>, b: &ScoreRecord<S>) -> std::cmp::Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then_with(|| a.sample_id.cmp(&b.sample_id))
}

impl<S: Scalar> ScoreTable<S> {
    /// Build a table from unordered records, enforcing finiteness and id
    /// uniqueness, and sorting into canonical order.
    pub fn from_records(
        capability: impl Into<String>,
        activation_mode: Option<ActivationMode>,
        mut records: Vec<ScoreRecord<S>>,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !r.score.is_finite() {
                return Err(NaitError::invariant(&r.sample_id, format!("non-finite score {}", r.score)));
            }
            if !seen.insert(r.sample_id.as_str()) {
                return Err(NaitError::invariant(&r.sample_id, "duplicate sample_id in score table"));
            }
        }
        records.sort_by(canonical_order);
        Ok(ScoreTable {
            capability: capability.into(),
            activation_mode,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, sample_id: &str) -> Option<S> {
        self.records.iter().find(|r| r.sample_id == sample_id).map(|r| r.score)
    }

    /// `sample_id,score` header then one line per record, 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(["sample_id", "score"]).expect("in-memory write");
        for r in &self.records {
            w.write_record([r.sample_id.as_str(), fmt_sig9(r.score).as_str()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }

    pub fn from_csv(text: &str, capability: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let headers = rdr
            .headers()
            .map_err(|e| NaitError::format(None, format!("score file header: {e}")))?;
        if headers.iter().collect::<Vec<_>>() != ["sample_id", "score"] {
            return Err(NaitError::format(None, "score file header must be `sample_id,score`"));
        }
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| NaitError::format(Some(i), e.to_string()))?;
            if row.len() != 2 {
                return Err(NaitError::format(Some(i), "expected 2 fields"));
            }
            let score: f64 = row[1]
                .parse()
                .map_err(|_| NaitError::format(Some(i), format!("bad score {:?}", &row[1])))?;
            records.push(ScoreRecord {
                sample_id: row[0].to_string(),
                score: S::from_f64_lossy(score),
            });
        }
        Self::from_records(capability, None, records)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_csv().as_bytes())
    }

    pub fn read_csv(path: impl AsRef<Path>, capability: &str) -> Result<Self> {
        Self::from_csv(&read_text(path.as_ref())?, capability)
    }
}

fn check_dims<S: Scalar>(trace: &ActivationTrace, profile: &CapabilityProfile<S>) -> Result<()> {
    let mismatch = || {
        NaitError::ShapeMismatch(format!(
            "sample {:?} layer widths {:?} do not match profile {} widths {:?}",
            trace.sample_id,
            trace.layers.iter().map(|l| l.dim()).collect::<Vec<_>>(),
            profile.capability,
            profile.layer_dims()
        ))
    };
    if trace.layers.len() != profile.directions.len() {
        return Err(mismatch());
    }
    for (layer, v) in trace.layers.iter().zip(&profile.directions) {
        if layer.first.len() != v.len() || layer.last.len() != v.len() || layer.mean.len() != v.len() {
            return Err(mismatch());
        }
    }
    Ok(())
}

/// Sum over layers (in layer order) of the projection of the chosen summary
/// onto that layer's direction.
pub fn score_sample<S: Scalar>(trace: &ActivationTrace, profile: &CapabilityProfile<S>, mode: ActivationMode) -> Result<S> {
    check_dims(trace, profile)?;
    Ok(project(trace, profile, mode))
}

fn project<S: Scalar>(trace: &ActivationTrace, profile: &CapabilityProfile<S>, mode: ActivationMode) -> S {
    let mut total = S::zero();
    for (layer, v) in trace.layers.iter().zip(&profile.directions) {
        let mut s = S::zero();
        match mode {
            ActivationMode::Mean => {
                for (&a, &d) in layer.mean.iter().zip(v) {
                    s += S::from_activation(a) * d;
                }
            }
            ActivationMode::Last => {
                for (&a, &d) in layer.last.iter().zip(v) {
                    s += S::from_activation(a) * d;
                }
            }
            ActivationMode::Delta => {
                for ((&b, &a), &d) in layer.last.iter().zip(&layer.first).zip(v) {
                    s += (S::from_activation(b) - S::from_activation(a)) * d;
                }
            }
        }
        total += s;
    }
    total
}

/// Controls how many worker threads scoring may use. Output never depends on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Parallelism(pub usize);

impl Default for Parallelism {
    fn default() -> Self {
        Parallelism(1)
    }
}

pub fn score_all<S: Scalar>(candidates: &TraceSet, profile: &CapabilityProfile<S>, mode: ActivationMode) -> Result<ScoreTable<S>> {
    score_all_with(candidates, profile, mode, Parallelism::default())
}

pub fn score_all_with<S: Scalar>(
    candidates: &TraceSet,
    profile: &CapabilityProfile<S>,
    mode: ActivationMode,
    jobs: Parallelism,
) -> Result<ScoreTable<S>> {
    score_multi_with(candidates, std::slice::from_ref(profile), mode, jobs)
}

pub fn score_multi<S: Scalar>(
    candidates: &TraceSet,
    profiles: &[CapabilityProfile<S>],
    mode: ActivationMode,
) -> Result<ScoreTable<S>> {
    score_multi_with(candidates, profiles, mode, Parallelism::default())
}

/// Score every candidate against the sum of several profiles. The table's
/// capability tag joins the profile tags with `+`.
pub fn score_multi_with<S: Scalar>(
    candidates: &TraceSet,
    profiles: &[CapabilityProfile<S>],
    mode: ActivationMode,
    jobs: Parallelism,
) -> Result<ScoreTable<S>> {
    if profiles.is_empty() {
        return Err(NaitError::EmptyInput("no profiles to score against".into()));
    }
    candidates.check()?;
    for t in &candidates.traces {
        for p in profiles {
            check_dims(t, p)?;
        }
    }
    let score_one = |t: &ActivationTrace| ScoreRecord {
        sample_id: t.sample_id.clone(),
        score: profiles
            .iter()
            .fold(S::zero(), |acc, p| acc + project(t, p, mode)),
    };
    let records: Vec<ScoreRecord<S>> = if jobs.0 <= 1 {
        candidates.traces.iter().map(score_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.0)
            .build()
            .map_err(|e| NaitError::Config(format!("thread pool: {e}")))?;
        pool.install(|| candidates.traces.par_iter().map(score_one).collect())
    };
    let capability = profiles.iter().map(|p| p.capability.as_str()).collect::<Vec<_>>().join("+");
    ScoreTable::from_records(capability, Some(mode), records)
}
