//! Planted-direction benchmark.
//!
//! Generates in-domain and candidate trace sets around known per-layer unit
//! directions and known candidate utilities, so that extraction, scoring
//! and selection can be checked against ground truth without a model.
//!
//! Generation order (all draws from one [`DetRng`] seeded with `seed`,
//! computed in `f64`, stored as `f32`; `s = 1/sqrt(J)`):
//!
//! 1. for each layer: `J` gaussians, normalised, give `v*_l`.
//! 2. for each in-domain sample: `alpha = lo + (hi - lo) * uniform()`,
//!    `K = 2 + below(63)`; then per layer and coordinate, three gaussians
//!    `f, e, m`: `first = s f`, `last = first + alpha v* + sigma s e`,
//!    `mean = (first + last) / 2 + sigma s m / 2`.
//! 3. for each candidate: `u = 2 uniform() - 1`, `K = 2 + below(63)`;
//!    per layer and coordinate two gaussians `f, e`: `mean = u v* + sigma s e`,
//!    `first = s f`, `last = 2 mean - first`.
//!
//! Noise is scaled by `1/sqrt(J)` so `sigma` is relative to the unit
//! planted direction: the noise vector added per layer has norm about `sigma`.

use std::path::Path;

use crate::error::{NaitError, Result};
use crate::fsio::{read_text, write_atomic};
use crate::profile::{parse_real, parse_reals, parse_usize, CapabilityProfile, LineReader};
use crate::rng::DetRng;
use crate::scalar::{dot, norm, Scalar};
use crate::score::ScoreTable;
use crate::select::{select, Budget, SelectionSpec};
use crate::stats::spearman;
use crate::trace::{ActivationTrace, LayerActivation, TraceSet};

pub const IN_DOMAIN_LABEL: &str = "planted-in";
pub const CANDIDATE_LABEL: &str = "planted-cand";

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub layers: usize,
    /// Neurons per layer.
    pub width: usize,
    pub n_in_domain: usize,
    pub n_candidates: usize,
    pub noise_sigma: f64,
    pub strength_range: (f64, f64),
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            layers: 4,
            width: 64,
            n_in_domain: 256,
            n_candidates: 512,
            noise_sigma: 0.05,
            strength_range: (0.5, 1.5),
            seed: 11,
        }
    }
}

impl PlantedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NaitError::Config(m.to_string()));
        if self.layers < 2 || self.width < 2 || self.n_in_domain < 2 {
            return bad("L, J and n_in_domain must all be >= 2");
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be finite and >= 0");
        }
        let (lo, hi) = self.strength_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("strength range must satisfy 0 < lo <= hi");
        }
        Ok(())
    }

    /// Parse flat `key=value` lines. Keys: `L`, `J`, `n_in`, `n_cand`,
    /// `sigma`, `seed`, `strength_lo`, `strength_hi`; `#` starts a comment.
    /// Unlisted keys keep their defaults.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = PlantedConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| NaitError::Config(format!("line {}: expected key=value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| -> Result<f64> {
                v.parse().map_err(|_| NaitError::Config(format!("line {}: bad number {v:?}", i + 1)))
            };
            let int = |v: &str| -> Result<u64> {
                v.parse().map_err(|_| NaitError::Config(format!("line {}: bad integer {v:?}", i + 1)))
            };
            match k {
                "L" => cfg.layers = int(v)? as usize,
                "J" => cfg.width = int(v)? as usize,
                "n_in" => cfg.n_in_domain = int(v)? as usize,
                "n_cand" => cfg.n_candidates = int(v)? as usize,
                "sigma" => cfg.noise_sigma = num(v)?,
                "seed" => cfg.seed = int(v)?,
                "strength_lo" => cfg.strength_range.0 = num(v)?,
                "strength_hi" => cfg.strength_range.1 = num(v)?,
                other => return Err(NaitError::Config(format!("line {}: unknown key {other:?}", i + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_text(&self) -> String {
        format!(
            "L={}\nJ={}\nn_in={}\nn_cand={}\nsigma={}\nseed={}\nstrength_lo={}\nstrength_hi={}\n",
            self.layers,
            self.width,
            self.n_in_domain,
            self.n_candidates,
            self.noise_sigma,
            self.seed,
            self.strength_range.0,
            self.strength_range.1
        )
    }
}

/// Ground truth behind a generated pair of trace sets.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTruth {
    pub directions: Vec<Vec<f64>>,
    /// `(sample_id, u_y)` in generation order.
    pub candidate_utilities: Vec<(String, f64)>,
}

pub const TRUTH_HEADER: &str = "nait-truth v1";

impl PlantedTruth {
    pub fn utility(&self, sample_id: &str) -> Option<f64> {
        self.candidate_utilities
            .iter()
            .find(|(id, _)| id == sample_id)
            .map(|(_, u)| *u)
    }

    /// Same line-oriented family as profiles. Reals use the shortest
    /// round-trip form so the truth file is exact.
    pub fn to_text(&self) -> String {
        let mut out = format!("{TRUTH_HEADER}\n");
        let dims: Vec<String> = self.directions.iter().map(|d| d.len().to_string()).collect();
        out.push_str(&format!("layer_dims {}\n", dims.join(" ")));
        for d in &self.directions {
            let vals: Vec<String> = d.iter().map(|x| format!("{x:e}")).collect();
            out.push_str(&format!("direction {}\n", vals.join(" ")));
        }
        out.push_str(&format!("candidates {}\n", self.candidate_utilities.len()));
        for (id, u) in &self.candidate_utilities {
            out.push_str(&format!("utility {id} {u:e}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = LineReader::new(text);
        lines.expect_exact(TRUTH_HEADER)?;
        let dims = lines
            .keyed("layer_dims")?
            .split_whitespace()
            .map(|t| parse_usize(t, "layer_dims"))
            .collect::<Result<Vec<_>>>()?;
        let mut directions = Vec::with_capacity(dims.len());
        for &j in &dims {
            directions.push(parse_reals::<f64>(lines.keyed("direction")?, j, "direction").map_err(|e| lines.wrap(e))?);
        }
        let n = parse_usize(lines.keyed("candidates")?, "candidates")?;
        let mut candidate_utilities = Vec::with_capacity(n);
        for _ in 0..n {
            let rest = lines.keyed("utility")?;
            let (id, u) = rest
                .rsplit_once(' ')
                .ok_or_else(|| lines.err("expected `utility <id> <value>`".into()))?;
            candidate_utilities.push((id.to_string(), parse_real::<f64>(u, "utility").map_err(|e| lines.wrap(e))?));
        }
        lines.expect_end()?;
        Ok(PlantedTruth {
            directions,
            candidate_utilities,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_text().as_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&read_text(path.as_ref())?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedData {
    pub in_domain: TraceSet,
    pub candidates: TraceSet,
    pub truth: PlantedTruth,
}

fn unit_gaussian(rng: &mut DetRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
        let n = norm(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub fn generate_planted(cfg: &PlantedConfig) -> Result<PlantedData> {
    cfg.validate()?;
    let (lo, hi) = cfg.strength_range;
    let sigma = cfg.noise_sigma;
    let j = cfg.width;
    let s = 1.0 / (j as f64).sqrt();
    let mut rng = DetRng::new(cfg.seed);

    let directions: Vec<Vec<f64>> = (0..cfg.layers).map(|_| unit_gaussian(&mut rng, j)).collect();

    let id_width = 6;
    let mut in_traces = Vec::with_capacity(cfg.n_in_domain);
    for i in 0..cfg.n_in_domain {
        let alpha = lo + (hi - lo) * rng.uniform();
        let k = 2 + rng.below(63) as u32;
        let layers = directions
            .iter()
            .enumerate()
            .map(|(l, v)| {
                let (mut first, mut last, mut mean) = (vec![0.0; j], vec![0.0; j], vec![0.0; j]);
                for c in 0..j {
                    let f = rng.gaussian();
                    let e = rng.gaussian();
                    let m = rng.gaussian();
                    first[c] = s * f;
                    last[c] = first[c] + alpha * v[c] + sigma * s * e;
                    mean[c] = 0.5 * (first[c] + last[c]) + 0.5 * sigma * s * m;
                }
                LayerActivation::new(l, to_f32(&first), to_f32(&last), to_f32(&mean))
            })
            .collect();
        in_traces.push(ActivationTrace::new(format!("in-{i:0id_width$}"), k, layers));
    }

    let mut cand_traces = Vec::with_capacity(cfg.n_candidates);
    let mut utilities = Vec::with_capacity(cfg.n_candidates);
    for y in 0..cfg.n_candidates {
        let u = 2.0 * rng.uniform() - 1.0;
        let k = 2 + rng.below(63) as u32;
        let layers = directions
            .iter()
            .enumerate()
            .map(|(l, v)| {
                let (mut first, mut last, mut mean) = (vec![0.0; j], vec![0.0; j], vec![0.0; j]);
                for c in 0..j {
                    let f = rng.gaussian();
                    let e = rng.gaussian();
                    mean[c] = u * v[c] + sigma * s * e;
                    first[c] = s * f;
                    last[c] = 2.0 * mean[c] - first[c];
                }
                LayerActivation::new(l, to_f32(&first), to_f32(&last), to_f32(&mean))
            })
            .collect();
        let id = format!("cand-{y:0id_width$}");
        utilities.push((id.clone(), u));
        cand_traces.push(ActivationTrace::new(id, k, layers));
    }

    let dims = vec![j; cfg.layers];
    Ok(PlantedData {
        in_domain: TraceSet::new(IN_DOMAIN_LABEL, dims.clone(), in_traces)?,
        candidates: TraceSet::new(CANDIDATE_LABEL, dims, cand_traces)?,
        truth: PlantedTruth {
            directions,
            candidate_utilities: utilities,
        },
    })
}

// --------------------------------------------------------------- oracle

#[derive(Debug, Clone, PartialEq)]
pub struct OraclePca {
    /// Leading unit eigenvector, first significant component positive.
    pub vector: Vec<f64>,
    /// Eigenvalues of the `1/(n-1)` covariance, descending.
    pub spectrum: Vec<f64>,
}

/// Reference PCA by cyclic Jacobi rotations on an explicitly formed
/// covariance. Shares no code with the production eigen-routes and is
/// meant for tests.
pub fn oracle_pca(matrix: &[Vec<f64>]) -> Result<OraclePca> {
    let n = matrix.len();
    if n < 2 {
        return Err(NaitError::degenerate(None, "oracle needs n >= 2"));
    }
    let dim = matrix[0].len();
    let mut mean = vec![0.0; dim];
    for row in matrix {
        if row.len() != dim {
            return Err(NaitError::ShapeMismatch("ragged matrix".into()));
        }
        for c in 0..dim {
            mean[c] += row[c];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut a = vec![vec![0.0; dim]; dim];
    for p in 0..dim {
        for q in 0..dim {
            let mut acc = 0.0;
            for row in matrix {
                acc += (row[p] - mean[p]) * (row[q] - mean[q]);
            }
            a[p][q] = acc / (n - 1) as f64;
        }
    }
    let total: f64 = (0..dim).map(|i| a[i][i]).sum();
    if !(total > 0.0) {
        return Err(NaitError::degenerate(None, "zero variance"));
    }

    let mut v = vec![vec![0.0; dim]; dim];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..dim)
            .flat_map(|p| (0..dim).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum();
        if off.sqrt() <= 1e-300 || off.sqrt() <= f64::EPSILON * 1e-3 * total {
            break;
        }
        for p in 0..dim {
            for q in (p + 1)..dim {
                let apq = a[p][q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (kp, kq) = (row[p], row[q]);
                    row[p] = c * kp - s * kq;
                    row[q] = s * kp + c * kq;
                }
                for k in 0..dim {
                    let (pk, qk) = (a[p][k], a[q][k]);
                    a[p][k] = c * pk - s * qk;
                    a[q][k] = s * pk + c * qk;
                }
                for row in v.iter_mut() {
                    let (kp, kq) = (row[p], row[q]);
                    row[p] = c * kp - s * kq;
                    row[q] = s * kp + c * kq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&x, &y| a[y][y].partial_cmp(&a[x][x]).unwrap());
    let spectrum = order.iter().map(|&k| a[k][k]).collect();
    let lead = order[0];
    let mut vector: Vec<f64> = (0..dim).map(|r| v[r][lead]).collect();
    if let Some(&f) = vector.iter().find(|x| x.abs() > 1e-12) {
        if f < 0.0 {
            vector.iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok(OraclePca { vector, spectrum })
}

// ------------------------------------------------------------- recovery

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    /// Signed cosine between each recovered and planted direction.
    pub layer_cosines: Vec<f64>,
    pub spearman: f64,
    /// Fraction of the top-k by score that is also top-k by utility,
    /// `k = floor(0.1 n)`.
    pub top_precision: f64,
    pub k: usize,
}

pub fn recovery_report<S: Scalar>(
    profile: &CapabilityProfile<S>,
    truth: &PlantedTruth,
    scores: &ScoreTable<S>,
) -> Result<RecoveryReport> {
    if profile.layer_dims() != truth.directions.iter().map(Vec::len).collect::<Vec<_>>() {
        return Err(NaitError::ShapeMismatch("profile and truth layer widths differ".into()));
    }
    let layer_cosines = profile
        .directions
        .iter()
        .zip(&truth.directions)
        .map(|(v, t)| {
            let v: Vec<f64> = v.iter().map(|x| x.to_f64_lossy()).collect();
            dot(&v, t) / (norm(&v) * norm(t))
        })
        .collect();

    if scores.len() != truth.candidate_utilities.len() {
        return Err(NaitError::ShapeMismatch(format!(
            "{} scores for {} planted candidates",
            scores.len(),
            truth.candidate_utilities.len()
        )));
    }
    let utility: std::collections::HashMap<&str, f64> = truth
        .candidate_utilities
        .iter()
        .map(|(id, u)| (id.as_str(), *u))
        .collect();
    let mut xs = Vec::with_capacity(scores.len());
    let mut ys = Vec::with_capacity(scores.len());
    for r in &scores.records {
        let u = utility
            .get(r.sample_id.as_str())
            .ok_or_else(|| NaitError::ShapeMismatch(format!("scored sample {:?} has no planted utility", r.sample_id)))?;
        xs.push(r.score.to_f64_lossy());
        ys.push(*u);
    }
    let rho = spearman(&xs, &ys).unwrap_or(0.0);

    let k = scores.len() / 10;
    let top_precision = if k == 0 {
        1.0
    } else {
        let by_score: std::collections::HashSet<&str> =
            scores.records[..k].iter().map(|r| r.sample_id.as_str()).collect();
        let mut by_utility: Vec<(&str, f64)> = truth.candidate_utilities.iter().map(|(i, u)| (i.as_str(), *u)).collect();
        by_utility.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(b.0)));
        let hits = by_utility[..k].iter().filter(|(id, _)| by_score.contains(id)).count();
        hits as f64 / k as f64
    };
    Ok(RecoveryReport {
        layer_cosines,
        spearman: rho,
        top_precision,
        k,
    })
}

/// Mean planted utility of the high, random and low selection arms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityArms {
    pub top: f64,
    pub random: f64,
    pub bottom: f64,
}

pub fn intensity_arms<S: Scalar>(
    truth: &PlantedTruth,
    scores: &ScoreTable<S>,
    proportion: f64,
    seed: u64,
) -> Result<IntensityArms> {
    let mean_of = |spec: SelectionSpec| -> Result<f64> {
        let sel = select(scores, spec)?;
        if sel.selected_ids.is_empty() {
            return Err(NaitError::Budget("selection arm is empty".into()));
        }
        let mut total = 0.0;
        for id in &sel.selected_ids {
            total += truth
                .utility(id)
                .ok_or_else(|| NaitError::ShapeMismatch(format!("no planted utility for {id:?}")))?;
        }
        Ok(total / sel.selected_ids.len() as f64)
    };
    let budget = Budget::Proportion(proportion);
    Ok(IntensityArms {
        top: mean_of(SelectionSpec::top(budget))?,
        random: mean_of(SelectionSpec::random(budget, seed))?,
        bottom: mean_of(SelectionSpec::bottom(budget))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_two_point_cloud() {
        let o = oracle_pca(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(o.vector, vec![1.0, 0.0]);
        assert_eq!(o.spectrum, vec![2.0, 0.0]);
    }

    #[test]
    fn oracle_rank_one() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| {
            let t = i as f64 * 0.7 - 1.3;
            vec![t, -2.0 * t, 0.5 * t]
        }).collect();
        let o = oracle_pca(&rows).unwrap();
        assert!(o.spectrum[1] <= 1e-12 * o.spectrum[0]);
        let expected = [1.0, -2.0, 0.5].map(|x: f64| x / 5.25f64.sqrt());
        for (a, b) in o.vector.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_spectrum_sums_to_total_variance() {
        let mut rng = DetRng::new(20);
        let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..6).map(|_| rng.gaussian()).collect()).collect();
        let o = oracle_pca(&rows).unwrap();
        let mean: Vec<f64> = (0..6).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / 20.0).collect();
        let total: f64 = rows
            .iter()
            .map(|r| r.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>())
            .sum::<f64>()
            / 19.0;
        let sum: f64 = o.spectrum.iter().sum();
        assert!(((sum - total) / total).abs() < 1e-9);
        assert!(o.spectrum.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn oracle_rejects_single_row() {
        assert!(matches!(oracle_pca(&[vec![1.0]]), Err(NaitError::DegenerateData { .. })));
    }

    #[test]
    fn config_validation_and_kv() {
        let cfg = PlantedConfig::from_kv_text("L=3\nJ=8 # width\nsigma=0.1\nseed=5\n").unwrap();
        assert_eq!((cfg.layers, cfg.width, cfg.seed), (3, 8, 5));
        assert_eq!(PlantedConfig::from_kv_text(&cfg.to_kv_text()).unwrap(), cfg);
        assert!(PlantedConfig::from_kv_text("L=1\n").is_err());
        assert!(PlantedConfig::from_kv_text("sigma=-1\n").is_err());
        assert!(PlantedConfig::from_kv_text("strength_lo=2\nstrength_hi=1\n").is_err());
        assert!(PlantedConfig::from_kv_text("bogus=1\n").is_err());
    }

    #[test]
    fn generator_is_deterministic_and_valid() {
        let cfg = PlantedConfig {
            layers: 2,
            width: 8,
            n_in_domain: 10,
            n_candidates: 12,
            ..Default::default()
        };
        let a = generate_planted(&cfg).unwrap();
        let b = generate_planted(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.in_domain.validate().ok && a.candidates.validate().ok);
        for d in &a.truth.directions {
            assert!((norm(d) - 1.0).abs() < 1e-12);
        }
        let c = generate_planted(&PlantedConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn truth_text_round_trip_is_exact() {
        let data = generate_planted(&PlantedConfig {
            layers: 2,
            width: 4,
            n_in_domain: 3,
            n_candidates: 5,
            ..Default::default()
        })
        .unwrap();
        let back = PlantedTruth::from_text(&data.truth.to_text()).unwrap();
        assert_eq!(back, data.truth);
    }
}
