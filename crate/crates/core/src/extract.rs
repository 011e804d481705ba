//! Capability direction extraction.
//!
//! For every layer the per-sample activation change from the first to the
//! last token is collected, the leading principal component of those
//! changes is taken as the layer's direction, and its sign is calibrated so
//! it points along the mean change.

use rayon::prelude::*;

use crate::error::{NaitError, Result};
use crate::linalg::{center_rows, covariance, gram, lift_gram_vector, power_iteration, SymmetricEigen};
use crate::profile::{CapabilityProfile, ExtractionConfig};
use crate::scalar::{canonical_sign, dot, Scalar};
use crate::trace::TraceSet;

/// Per-layer activation changes of an in-domain set.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSet<S> {
    pub layer_dims: Vec<usize>,
    /// `deltas[l][i]` is sample `i`'s change at layer `l`.
    pub deltas: Vec<Vec<Vec<S>>>,
}

impl<S: Scalar> DeltaSet<S> {
    pub fn num_samples(&self) -> usize {
        self.deltas.first().map_or(0, Vec::len)
    }

    /// Mean change per layer.
    pub fn mean(&self) -> Vec<Vec<S>> {
        self.deltas
            .iter()
            .zip(&self.layer_dims)
            .map(|(rows, &j)| mean_vector(rows, j))
            .collect()
    }
}

fn mean_vector<S: Scalar>(rows: &[Vec<S>], dim: usize) -> Vec<S> {
    let mut m = vec![S::zero(); dim];
    for r in rows {
        for (a, &x) in m.iter_mut().zip(r) {
            *a += x;
        }
    }
    let inv = S::one() / S::from_usize(rows.len().max(1)).unwrap();
    m.iter_mut().for_each(|a| *a *= inv);
    m
}

/// Elementwise `last - first` for every trace and layer.
pub fn compute_deltas<S: Scalar>(in_domain: &TraceSet) -> Result<DeltaSet<S>> {
    in_domain.check()?;
    if in_domain.is_empty() {
        return Err(NaitError::EmptyInput("in-domain set has no traces".into()));
    }
    let deltas = (0..in_domain.num_layers())
        .map(|l| {
            in_domain
                .traces
                .iter()
                .map(|t| {
                    let layer = &t.layers[l];
                    layer
                        .last
                        .iter()
                        .zip(&layer.first)
                        .map(|(&b, &a)| S::from_activation(b) - S::from_activation(a))
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(DeltaSet {
        layer_dims: in_domain.layer_dims.clone(),
        deltas,
    })
}

/// Which eigen-route produced a direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverRoute {
    /// Dense decomposition of the `J x J` covariance.
    Covariance,
    /// Dense decomposition of the `n x n` Gram matrix, lifted back to feature space.
    Gram,
    PowerIteration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Direction<S> {
    /// Unit leading eigenvector, first significant component positive.
    pub vector: Vec<S>,
    pub explained_variance_ratio: S,
    pub leading_eigenvalue: S,
    pub total_variance: S,
    pub route: SolverRoute,
}

pub fn extract_direction<S: Scalar>(delta_vectors: &[Vec<S>]) -> Result<Direction<S>> {
    extract_direction_with(delta_vectors, &ExtractionConfig::default())
}

/// Leading principal component of the mean-centered rows, using the
/// `1/(n-1)` sample covariance.
pub fn extract_direction_with<S: Scalar>(delta_vectors: &[Vec<S>], cfg: &ExtractionConfig) -> Result<Direction<S>> {
    let n = delta_vectors.len();
    if n < 2 {
        return Err(NaitError::degenerate(None, format!("need at least 2 samples, got {n}")));
    }
    let dim = delta_vectors[0].len();
    if dim == 0 || delta_vectors.iter().any(|r| r.len() != dim) {
        return Err(NaitError::ShapeMismatch("delta vectors must share one non-zero length".into()));
    }
    if delta_vectors.iter().any(|r| r.iter().any(|x| !x.is_finite())) {
        return Err(NaitError::NumericalFailure("non-finite delta value".into()));
    }
    if delta_vectors.iter().all(|r| r == &delta_vectors[0]) {
        return Err(NaitError::degenerate(None, "all delta vectors are identical (zero variance)"));
    }

    let mut centered = delta_vectors.to_vec();
    center_rows(&mut centered);
    let denom = S::from_usize(n - 1).unwrap();
    let total_variance = centered
        .iter()
        .map(|r| dot(r, r))
        .fold(S::zero(), |a, b| a + b)
        / denom;
    if !(total_variance > S::zero()) {
        return Err(NaitError::degenerate(None, "zero total variance"));
    }

    let small = n.min(dim);
    let (mut vector, leading_eigenvalue, route) = if small > cfg.dense_limit {
        let p = power_iteration(&centered, S::from_f64_lossy(cfg.power_tol), cfg.power_max_iter)?;
        (p.vector, p.eigenvalue, SolverRoute::PowerIteration)
    } else if n < dim {
        let eig = SymmetricEigen::new(&gram(&centered))?;
        let v = lift_gram_vector(&centered, &eig.vectors[0])
            .ok_or_else(|| NaitError::degenerate(None, "leading Gram eigenvector lifts to zero"))?;
        (v, eig.values[0], SolverRoute::Gram)
    } else {
        let eig = SymmetricEigen::new(&covariance(&centered))?;
        (eig.vectors[0].clone(), eig.values[0], SolverRoute::Covariance)
    };
    canonical_sign(&mut vector, S::from_f64_lossy(cfg.sign_eps));

    let ratio = (leading_eigenvalue / total_variance).max(S::zero()).min(S::one());
    Ok(Direction {
        vector,
        explained_variance_ratio: ratio,
        leading_eigenvalue,
        total_variance,
        route,
    })
}

/// Return `-v` when it opposes `mu_diff`, `v` otherwise (including an exact
/// zero dot product).
pub fn calibrate_sign<S: Scalar>(mut v: Vec<S>, mu_diff: &[S]) -> Vec<S> {
    if dot(mu_diff, &v) < S::zero() {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

pub fn extract_profile<S: Scalar>(in_domain: &TraceSet, capability: &str) -> Result<CapabilityProfile<S>> {
    extract_profile_with(in_domain, capability, &ExtractionConfig::default())
}

pub fn extract_profile_with<S: Scalar>(
    in_domain: &TraceSet,
    capability: &str,
    cfg: &ExtractionConfig,
) -> Result<CapabilityProfile<S>> {
    let deltas = compute_deltas::<S>(in_domain)?;
    profile_from_deltas(&deltas, capability, cfg)
}

pub fn profile_from_deltas<S: Scalar>(
    deltas: &DeltaSet<S>,
    capability: &str,
    cfg: &ExtractionConfig,
) -> Result<CapabilityProfile<S>> {
    let n = deltas.num_samples();
    if n < 2 {
        return Err(NaitError::degenerate(None, format!("need at least 2 in-domain samples, got {n}")));
    }
    let per_layer: Vec<(Vec<S>, Vec<S>, S)> = deltas
        .deltas
        .par_iter()
        .zip(deltas.layer_dims.par_iter())
        .enumerate()
        .map(|(l, (rows, &j))| {
            let d = extract_direction_with(rows, cfg).map_err(|e| e.in_layer(l))?;
            let mu = mean_vector(rows, j);
            let v = calibrate_sign(d.vector, &mu);
            Ok((v, mu, d.explained_variance_ratio))
        })
        .collect::<Result<_>>()?;

    let mut profile = CapabilityProfile {
        capability: capability.to_string(),
        directions: Vec::with_capacity(per_layer.len()),
        mu_diff: Vec::with_capacity(per_layer.len()),
        n_samples: n,
        explained_variance_ratio: Vec::with_capacity(per_layer.len()),
        config: *cfg,
    };
    for (v, mu, r) in per_layer {
        profile.directions.push(v);
        profile.mu_diff.push(mu);
        profile.explained_variance_ratio.push(r);
    }
    Ok(profile)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AggregateMode {
    /// Concatenate the in-domain sets and extract once.
    #[default]
    Pooled,
    /// Average per-layer unit directions, renormalise, recalibrate against
    /// the pooled mean change.
    MeanDirection,
}

impl std::str::FromStr for AggregateMode {
    type Err = NaitError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(AggregateMode::Pooled),
            "mean-direction" => Ok(AggregateMode::MeanDirection),
            other => Err(NaitError::Config(format!("unknown aggregation mode {other:?}"))),
        }
    }
}

pub enum AggregateInputs<'a, S> {
    Traces(&'a [TraceSet]),
    Profiles(&'a [CapabilityProfile<S>]),
}

/// Combine several capabilities into one profile.
///
/// Pooled mode needs trace sets. Mean-direction mode accepts profiles, or
/// trace sets that are extracted individually first.
pub fn aggregate_profiles<S: Scalar>(
    inputs: AggregateInputs<'_, S>,
    mode: AggregateMode,
    capability: &str,
    cfg: &ExtractionConfig,
) -> Result<CapabilityProfile<S>> {
    match (mode, inputs) {
        (AggregateMode::Pooled, AggregateInputs::Traces(sets)) => {
            let pooled = pool_trace_sets(sets)?;
            extract_profile_with(&pooled, capability, cfg)
        }
        (AggregateMode::Pooled, AggregateInputs::Profiles(_)) => Err(NaitError::Config(
            "pooled aggregation needs the in-domain trace sets, not profiles".into(),
        )),
        (AggregateMode::MeanDirection, AggregateInputs::Profiles(profiles)) => {
            mean_direction(profiles, capability, cfg)
        }
        (AggregateMode::MeanDirection, AggregateInputs::Traces(sets)) => {
            let profiles = sets
                .iter()
                .map(|s| extract_profile_with::<S>(s, &s.source_label, cfg))
                .collect::<Result<Vec<_>>>()?;
            mean_direction(&profiles, capability, cfg)
        }
    }
}

/// Concatenate trace sets that share a layer layout.
pub fn pool_trace_sets(sets: &[TraceSet]) -> Result<TraceSet> {
    let first = sets
        .first()
        .ok_or_else(|| NaitError::EmptyInput("no trace sets to aggregate".into()))?;
    for s in sets {
        if s.layer_dims != first.layer_dims {
            return Err(NaitError::ShapeMismatch(format!(
                "layer_dims {:?} ({}) vs {:?} ({})",
                s.layer_dims, s.source_label, first.layer_dims, first.source_label
            )));
        }
    }
    if sets.len() == 1 {
        return Ok(first.clone());
    }
    let label = sets.iter().map(|s| s.source_label.as_str()).collect::<Vec<_>>().join("+");
    let traces = sets.iter().flat_map(|s| s.traces.iter().cloned()).collect();
    TraceSet::new(label, first.layer_dims.clone(), traces)
}

fn mean_direction<S: Scalar>(
    profiles: &[CapabilityProfile<S>],
    capability: &str,
    cfg: &ExtractionConfig,
) -> Result<CapabilityProfile<S>> {
    let first = profiles
        .first()
        .ok_or_else(|| NaitError::EmptyInput("no profiles to aggregate".into()))?;
    let dims = first.layer_dims();
    for p in profiles {
        if p.layer_dims() != dims {
            return Err(NaitError::ShapeMismatch(format!(
                "profile {} has layer_dims {:?}, expected {:?}",
                p.capability,
                p.layer_dims(),
                dims
            )));
        }
    }
    let total_n: usize = profiles.iter().map(|p| p.n_samples).sum();
    let weight = |p: &CapabilityProfile<S>| {
        if total_n == 0 {
            S::one() / S::from_usize(profiles.len()).unwrap()
        } else {
            S::from_usize(p.n_samples).unwrap() / S::from_usize(total_n).unwrap()
        }
    };

    let mut out = CapabilityProfile {
        capability: capability.to_string(),
        directions: Vec::with_capacity(dims.len()),
        mu_diff: Vec::with_capacity(dims.len()),
        n_samples: total_n,
        explained_variance_ratio: Vec::with_capacity(dims.len()),
        config: *cfg,
    };
    for (l, &j) in dims.iter().enumerate() {
        let mut v = vec![S::zero(); j];
        let mut mu = vec![S::zero(); j];
        let mut ratio = S::zero();
        for p in profiles {
            let w = weight(p);
            for k in 0..j {
                v[k] += p.directions[l][k];
                mu[k] += w * p.mu_diff[l][k];
            }
            ratio += w * p.explained_variance_ratio[l];
        }
        let nv = crate::scalar::norm(&v);
        if !(nv > S::from_f64_lossy(cfg.sign_eps)) {
            return Err(NaitError::degenerate(Some(l), "averaged directions cancel"));
        }
        v.iter_mut().for_each(|x| *x /= nv);
        out.directions.push(calibrate_sign(v, &mu));
        out.mu_diff.push(mu);
        out.explained_variance_ratio.push(ratio.max(S::zero()).min(S::one()));
    }
    Ok(out)
}
