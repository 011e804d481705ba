//! Activation-trace data model.
//!
//! A trace keeps three per-layer summaries of one sample: the activation at
//! the first token, at the last token, and the mean over all tokens. Raw
//! per-token activations are never stored.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{NaitError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerActivation {
    pub layer_index: usize,
    pub first: Vec<f32>,
    pub last: Vec<f32>,
    pub mean: Vec<f32>,
}

impl LayerActivation {
    pub fn new(layer_index: usize, first: Vec<f32>, last: Vec<f32>, mean: Vec<f32>) -> Self {
        LayerActivation {
            layer_index,
            first,
            last,
            mean,
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationTrace {
    pub sample_id: String,
    pub token_count: u32,
    pub layers: Vec<LayerActivation>,
}

impl ActivationTrace {
    pub fn new(sample_id: impl Into<String>, token_count: u32, layers: Vec<LayerActivation>) -> Self {
        ActivationTrace {
            sample_id: sample_id.into(),
            token_count,
            layers,
        }
    }

    /// A copy of this trace with every stored summary multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Self {
        let scale = |v: &[f32]| v.iter().map(|x| x * factor).collect::<Vec<_>>();
        ActivationTrace {
            sample_id: self.sample_id.clone(),
            token_count: self.token_count,
            layers: self
                .layers
                .iter()
                .map(|l| LayerActivation::new(l.layer_index, scale(&l.first), scale(&l.last), scale(&l.mean)))
                .collect(),
        }
    }
}

/// An ordered collection of traces sharing one layer layout.
///
/// Fields are public so that malformed sets can be represented and reported
/// by [`TraceSet::validate`]; [`TraceSet::new`] is the checked constructor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSet {
    pub source_label: String,
    pub layer_dims: Vec<usize>,
    pub traces: Vec<ActivationTrace>,
}

impl TraceSet {
    /// Build a set, rejecting it with an `Invariant` error naming the first
    /// violation if any invariant fails.
    pub fn new(
        source_label: impl Into<String>,
        layer_dims: Vec<usize>,
        traces: Vec<ActivationTrace>,
    ) -> Result<Self> {
        let set = TraceSet {
            source_label: source_label.into(),
            layer_dims,
            traces,
        };
        set.check()?;
        Ok(set)
    }

    pub fn empty(source_label: impl Into<String>, layer_dims: Vec<usize>) -> Result<Self> {
        Self::new(source_label, layer_dims, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len()
    }

    /// Report every invariant violation in the set.
    pub fn validate(&self) -> ValidationReport {
        let mut issues = Vec::new();
        let header = |code: IssueCode, message: String| Issue {
            subject: IssueSubject::Header,
            code,
            message,
        };
        if self.layer_dims.is_empty() {
            issues.push(header(IssueCode::NoLayers, "layer_dims is empty".into()));
        }
        for (l, &j) in self.layer_dims.iter().enumerate() {
            if j == 0 {
                issues.push(header(IssueCode::ZeroWidth, format!("layer {l} has width 0")));
            }
        }

        let mut seen = HashSet::new();
        let mut reported_dup = HashSet::new();
        for (idx, t) in self.traces.iter().enumerate() {
            let subject = if t.sample_id.is_empty() {
                IssueSubject::Record(idx)
            } else {
                IssueSubject::Sample(t.sample_id.clone())
            };
            let mut push = |code: IssueCode, message: String| {
                issues.push(Issue {
                    subject: subject.clone(),
                    code,
                    message,
                })
            };
            if t.sample_id.is_empty() {
                push(IssueCode::EmptyId, format!("record {idx} has an empty sample_id"));
            } else if !seen.insert(t.sample_id.as_str()) && reported_dup.insert(t.sample_id.as_str()) {
                push(
                    IssueCode::DuplicateId,
                    format!("sample_id {:?} appears more than once", t.sample_id),
                );
            }
            if t.token_count == 0 {
                push(IssueCode::TokenCount, "token_count must be >= 1".into());
            }
            if t.layers.len() != self.layer_dims.len() {
                push(
                    IssueCode::LayerCount,
                    format!("has {} layers, header declares {}", t.layers.len(), self.layer_dims.len()),
                );
            }
            for (l, layer) in t.layers.iter().enumerate() {
                if layer.layer_index != l {
                    push(
                        IssueCode::LayerIndex,
                        format!("layer at position {l} carries layer_index {}", layer.layer_index),
                    );
                }
                let expected = self.layer_dims.get(l).copied();
                for (name, v) in [("first", &layer.first), ("last", &layer.last), ("mean", &layer.mean)] {
                    if let Some(j) = expected {
                        if v.len() != j {
                            push(
                                IssueCode::DimMismatch,
                                format!("layer {l} {name} has {} values, expected {j}", v.len()),
                            );
                        }
                    }
                    if let Some(pos) = v.iter().position(|x| !x.is_finite()) {
                        push(
                            IssueCode::NonFinite,
                            format!("layer {l} {name}[{pos}] = {}", v[pos]),
                        );
                    }
                }
                if t.token_count == 1 && (layer.first != layer.last || layer.first != layer.mean) {
                    push(
                        IssueCode::SingleTokenMismatch,
                        format!("token_count is 1 but layer {l} summaries differ"),
                    );
                }
            }
        }
        ValidationReport {
            ok: issues.is_empty(),
            issues,
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        let report = self.validate();
        match report.issues.into_iter().next() {
            None => Ok(()),
            Some(issue) => Err(NaitError::invariant(issue.subject.to_string(), format!("{}: {}", issue.code, issue.message))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IssueCode {
    NoLayers,
    ZeroWidth,
    EmptyId,
    DuplicateId,
    TokenCount,
    LayerCount,
    LayerIndex,
    DimMismatch,
    NonFinite,
    SingleTokenMismatch,
}

impl IssueCode {
    pub fn as_str(self) -> &'static str {
        match self {
            IssueCode::NoLayers => "no-layers",
            IssueCode::ZeroWidth => "zero-width",
            IssueCode::EmptyId => "empty-id",
            IssueCode::DuplicateId => "duplicate-id",
            IssueCode::TokenCount => "token-count",
            IssueCode::LayerCount => "layer-count",
            IssueCode::LayerIndex => "layer-index",
            IssueCode::DimMismatch => "dim-mismatch",
            IssueCode::NonFinite => "non-finite",
            IssueCode::SingleTokenMismatch => "single-token-mismatch",
        }
    }
}

impl fmt::Display for IssueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IssueSubject {
    Header,
    Sample(String),
    /// Record position, used when the sample_id itself is unusable.
    Record(usize),
}

impl fmt::Display for IssueSubject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IssueSubject::Header => f.write_str("header"),
            IssueSubject::Sample(id) => f.write_str(id),
            IssueSubject::Record(i) => write!(f, "record {i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub subject: IssueSubject,
    pub code: IssueCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<Issue>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            return writeln!(f, "ok");
        }
        writeln!(f, "{} issue(s)", self.issues.len())?;
        for i in &self.issues {
            writeln!(f, "{}\t{}\t{}", i.subject, i.code, i.message)?;
        }
        Ok(())
    }
}

/// Free-function form of [`TraceSet::validate`].
pub fn validate_traces(set: &TraceSet) -> ValidationReport {
    set.validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(l: usize, first: &[f32], last: &[f32], mean: &[f32]) -> LayerActivation {
        LayerActivation::new(l, first.to_vec(), last.to_vec(), mean.to_vec())
    }

    fn good_set() -> TraceSet {
        let t = |id: &str| {
            ActivationTrace::new(
                id,
                3,
                vec![
                    layer(0, &[1.0, 2.0], &[3.0, 4.0], &[2.0, 3.0]),
                    layer(1, &[0.0, 0.5, 1.0], &[1.0, 0.0, 1.0], &[0.5, 0.2, 1.0]),
                ],
            )
        };
        TraceSet::new("test", vec![2, 3], vec![t("a"), t("b")]).unwrap()
    }

    fn codes(r: &ValidationReport) -> Vec<(String, IssueCode)> {
        r.issues.iter().map(|i| (i.subject.to_string(), i.code)).collect()
    }

    #[test]
    fn well_formed_set_is_ok() {
        let r = good_set().validate();
        assert!(r.ok);
        assert!(r.issues.is_empty());
    }

    #[test]
    fn nan_in_mean_is_flagged() {
        let mut s = good_set();
        s.traces[0].layers[1].mean[2] = f32::NAN;
        let r = s.validate();
        assert!(!r.ok);
        assert_eq!(codes(&r), vec![("a".to_string(), IssueCode::NonFinite)]);
    }

    #[test]
    fn duplicate_id_is_flagged() {
        let mut s = good_set();
        s.traces[1].sample_id = "x".into();
        s.traces[0].sample_id = "x".into();
        assert_eq!(codes(&s.validate()), vec![("x".to_string(), IssueCode::DuplicateId)]);
    }

    #[test]
    fn every_violation_is_listed() {
        let mut s = good_set();
        s.traces[0].layers[0].first.push(1.0);
        s.traces[1].token_count = 0;
        s.traces[1].layers[1].last[0] = f32::INFINITY;
        let got: Vec<IssueCode> = s.validate().issues.iter().map(|i| i.code).collect();
        assert_eq!(
            got,
            vec![IssueCode::DimMismatch, IssueCode::TokenCount, IssueCode::NonFinite]
        );
    }

    #[test]
    fn each_invariant_class_has_a_detecting_mutation() {
        let mutations: Vec<(IssueCode, Box<dyn Fn(&mut TraceSet)>)> = vec![
            (IssueCode::NoLayers, Box::new(|s| {
                s.layer_dims.clear();
                s.traces.iter_mut().for_each(|t| t.layers.clear());
            })),
            (IssueCode::ZeroWidth, Box::new(|s| s.layer_dims[0] = 0)),
            (IssueCode::EmptyId, Box::new(|s| s.traces[0].sample_id.clear())),
            (IssueCode::DuplicateId, Box::new(|s| s.traces[1].sample_id = "a".into())),
            (IssueCode::TokenCount, Box::new(|s| s.traces[0].token_count = 0)),
            (IssueCode::LayerCount, Box::new(|s| {
                s.traces[0].layers.pop();
            })),
            (IssueCode::LayerIndex, Box::new(|s| s.traces[0].layers[1].layer_index = 7)),
            (IssueCode::DimMismatch, Box::new(|s| {
                s.traces[0].layers[0].mean.pop();
            })),
            (IssueCode::NonFinite, Box::new(|s| s.traces[0].layers[0].last[0] = f32::NEG_INFINITY)),
            (IssueCode::SingleTokenMismatch, Box::new(|s| s.traces[0].token_count = 1)),
        ];
        for (code, mutate) in mutations {
            let mut s = good_set();
            mutate(&mut s);
            let r = s.validate();
            assert!(r.issues.iter().any(|i| i.code == code), "{code} not detected: {r}");
        }
    }

    #[test]
    fn single_token_identity_accepted() {
        let t = ActivationTrace::new("k1", 1, vec![layer(0, &[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0])]);
        assert!(TraceSet::new("s", vec![2], vec![t]).is_ok());
    }

    #[test]
    fn checked_constructor_names_subject() {
        let mut s = good_set();
        s.traces[1].layers[0].first[0] = f32::NAN;
        let err = TraceSet::new(s.source_label, s.layer_dims, s.traces).unwrap_err();
        assert!(err.to_string().contains("(b)"), "{err}");
    }
}
