//! Capability profiles and their text serialization.
//!
//! The text form is line-oriented with a fixed field order; every real is
//! printed with 9 significant digits so output is byte-deterministic:
//!
//! ```text
//! nait-profile v1
//! capability GSM
//! n_samples 256
//! layer_dims 64 64
//! config dense_limit=1024 power_tol=1.00000000e-10 power_max_iter=10000 sign_eps=1.00000000e-12
//! layer 0 explained_variance_ratio 9.87654321e-1
//! direction <J_0 reals>
//! mu_diff <J_0 reals>
//! layer 1 explained_variance_ratio ...
//! ```

use std::path::Path;

use crate::error::{NaitError, Result};
use crate::fsio::{read_text, write_atomic};
use crate::scalar::{dot, fmt_sig9, norm, Scalar};

pub const PROFILE_HEADER: &str = "nait-profile v1";

/// Settings used by direction extraction, recorded in every profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractionConfig {
    /// Largest `min(n, J)` handled by the dense eigensolver; above it the
    /// power iteration is used.
    pub dense_limit: usize,
    pub power_tol: f64,
    pub power_max_iter: usize,
    /// Magnitude threshold for the first-significant-component sign rule.
    pub sign_eps: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            dense_limit: 1024,
            power_tol: 1e-10,
            power_max_iter: 10_000,
            sign_eps: 1e-12,
        }
    }
}

/// Per-layer unit directions for one capability (or an aggregate of several).
#[derive(Debug, Clone, PartialEq)]
pub struct CapabilityProfile<S> {
    pub capability: String,
    pub directions: Vec<Vec<S>>,
    pub mu_diff: Vec<Vec<S>>,
    pub n_samples: usize,
    pub explained_variance_ratio: Vec<S>,
    pub config: ExtractionConfig,
}

impl<S: Scalar> CapabilityProfile<S> {
    pub fn layer_dims(&self) -> Vec<usize> {
        self.directions.iter().map(Vec::len).collect()
    }

    pub fn num_layers(&self) -> usize {
        self.directions.len()
    }

    /// Check unit norm (within `norm_tol`), calibration and ratio bounds.
    pub fn check_invariants(&self, norm_tol: S) -> Result<()> {
        let bad = |msg: String| Err(NaitError::invariant(format!("profile {}", self.capability), msg));
        let l = self.directions.len();
        if self.mu_diff.len() != l || self.explained_variance_ratio.len() != l {
            return bad("per-layer arrays disagree in length".into());
        }
        for (i, (v, mu)) in self.directions.iter().zip(&self.mu_diff).enumerate() {
            if v.len() != mu.len() {
                return bad(format!("layer {i}: direction and mu_diff lengths differ"));
            }
            let nv = norm(v);
            if (nv - S::one()).abs() > norm_tol {
                return bad(format!("layer {i}: direction norm {nv}"));
            }
            if dot(mu, v) < S::zero() {
                return bad(format!("layer {i}: direction opposes mu_diff"));
            }
            let r = self.explained_variance_ratio[i];
            if !(r >= S::zero() && r <= S::one()) {
                return bad(format!("layer {i}: explained variance ratio {r} outside [0,1]"));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let join = |v: &[S]| v.iter().map(|&x| fmt_sig9(x)).collect::<Vec<_>>().join(" ");
        out.push_str(PROFILE_HEADER);
        out.push('\n');
        out.push_str(&format!("capability {}\n", self.capability));
        out.push_str(&format!("n_samples {}\n", self.n_samples));
        let dims: Vec<String> = self.layer_dims().iter().map(|d| d.to_string()).collect();
        out.push_str(&format!("layer_dims {}\n", dims.join(" ")));
        let c = &self.config;
        out.push_str(&format!(
            "config dense_limit={} power_tol={} power_max_iter={} sign_eps={}\n",
            c.dense_limit,
            fmt_sig9(c.power_tol),
            c.power_max_iter,
            fmt_sig9(c.sign_eps)
        ));
        for (l, (v, mu)) in self.directions.iter().zip(&self.mu_diff).enumerate() {
            out.push_str(&format!(
                "layer {l} explained_variance_ratio {}\n",
                fmt_sig9(self.explained_variance_ratio[l])
            ));
            out.push_str(&format!("direction {}\n", join(v)));
            out.push_str(&format!("mu_diff {}\n", join(mu)));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = LineReader::new(text);
        lines.expect_exact(PROFILE_HEADER)?;
        let capability = lines.keyed("capability")?.to_string();
        let n_samples = parse_usize(lines.keyed("n_samples")?, "n_samples")?;
        let dims = lines
            .keyed("layer_dims")?
            .split_whitespace()
            .map(|t| parse_usize(t, "layer_dims"))
            .collect::<Result<Vec<_>>>()?;
        let config = parse_config(lines.keyed("config")?)?;

        let mut directions = Vec::with_capacity(dims.len());
        let mut mu_diff = Vec::with_capacity(dims.len());
        let mut ratios = Vec::with_capacity(dims.len());
        for (l, &j) in dims.iter().enumerate() {
            let head = lines.keyed("layer")?;
            let mut parts = head.split_whitespace();
            let idx = parts.next().map(|t| parse_usize(t, "layer"));
            if idx.transpose()? != Some(l) || parts.next() != Some("explained_variance_ratio") {
                return Err(lines.err(format!("expected `layer {l} explained_variance_ratio <value>`")));
            }
            let ratio = parse_real::<S>(parts.next().unwrap_or(""), "explained_variance_ratio")?;
            ratios.push(ratio);
            directions.push(parse_reals::<S>(lines.keyed("direction")?, j, "direction").map_err(|e| lines.wrap(e))?);
            mu_diff.push(parse_reals::<S>(lines.keyed("mu_diff")?, j, "mu_diff").map_err(|e| lines.wrap(e))?);
        }
        lines.expect_end()?;
        Ok(CapabilityProfile {
            capability,
            directions,
            mu_diff,
            n_samples,
            explained_variance_ratio: ratios,
            config,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_text().as_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&read_text(path.as_ref())?)
    }
}

fn parse_config(s: &str) -> Result<ExtractionConfig> {
    let mut cfg = ExtractionConfig::default();
    for kv in s.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| NaitError::format(None, format!("config entry {kv:?} is not key=value")))?;
        match k {
            "dense_limit" => cfg.dense_limit = parse_usize(v, k)?,
            "power_tol" => cfg.power_tol = parse_real::<f64>(v, k)?,
            "power_max_iter" => cfg.power_max_iter = parse_usize(v, k)?,
            "sign_eps" => cfg.sign_eps = parse_real::<f64>(v, k)?,
            other => return Err(NaitError::format(None, format!("unknown config key {other:?}"))),
        }
    }
    Ok(cfg)
}

pub(crate) fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| NaitError::format(None, format!("{what}: expected an unsigned integer, got {s:?}")))
}

pub(crate) fn parse_real<S: Scalar>(s: &str, what: &str) -> Result<S> {
    let x: f64 = s
        .trim()
        .parse()
        .map_err(|_| NaitError::format(None, format!("{what}: expected a real, got {s:?}")))?;
    if !x.is_finite() {
        return Err(NaitError::format(None, format!("{what}: non-finite value {s:?}")));
    }
    Ok(S::from_f64_lossy(x))
}

pub(crate) fn parse_reals<S: Scalar>(s: &str, expected: usize, what: &str) -> Result<Vec<S>> {
    let v = s
        .split_whitespace()
        .map(|t| parse_real::<S>(t, what))
        .collect::<Result<Vec<_>>>()?;
    if v.len() != expected {
        return Err(NaitError::format(
            None,
            format!("{what}: expected {expected} values, found {}", v.len()),
        ));
    }
    Ok(v)
}

/// Line cursor shared by the text formats; errors carry 1-based line numbers.
pub(crate) struct LineReader<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    line_no: usize,
}

impl<'a> LineReader<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        LineReader {
            lines: text.lines().enumerate().peekable(),
            line_no: 0,
        }
    }

    pub(crate) fn err(&self, msg: String) -> NaitError {
        NaitError::format(None, format!("line {}: {msg}", self.line_no))
    }

    pub(crate) fn wrap(&self, e: NaitError) -> NaitError {
        match e {
            NaitError::Format { message, .. } => self.err(message),
            other => other,
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line_no = i + 1;
                Ok(l)
            }
            None => Err(NaitError::format(None, format!("unexpected end of input after line {}", self.line_no))),
        }
    }

    pub(crate) fn expect_exact(&mut self, want: &str) -> Result<()> {
        let l = self.next_line()?;
        if l != want {
            return Err(self.err(format!("expected {want:?}, found {l:?}")));
        }
        Ok(())
    }

    /// Next line must start with `key` followed by a space (or be exactly
    /// `key`); returns the remainder.
    pub(crate) fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let l = self.next_line()?;
        match l.strip_prefix(key) {
            Some("") => Ok(""),
            Some(rest) if rest.starts_with(' ') => Ok(&rest[1..]),
            _ => Err(self.err(format!("expected `{key} ...`, found {l:?}"))),
        }
    }

    pub(crate) fn expect_end(&mut self) -> Result<()> {
        match self.lines.next() {
            None => Ok(()),
            Some((i, l)) => Err(NaitError::format(None, format!("line {}: trailing content {l:?}", i + 1))),
        }
    }
}
