//! Interpretability instruments: capability transferability, selection
//! overlap lattices, and direction-similarity exports.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Sub;
use std::path::Path;

use num_rational::Ratio;

use crate::error::{NaitError, Result};
use crate::fsio::{read_text, write_atomic};
use crate::linalg::{center_rows, gram, lift_gram_vector, SymmetricEigen};
use crate::profile::CapabilityProfile;
use crate::scalar::{canonical_sign, dot, norm, Scalar};

// ------------------------------------------------------------ grid cells

/// A cell type for accuracy grids. Implemented for the float types and for
/// exact decimal rationals (`Ratio<i64>`).
pub trait GridValue: Clone + PartialEq + Sub<Output = Self> {
    fn parse_cell(s: &str) -> Option<Self>;
    fn to_f64(&self) -> f64;
}

impl GridValue for f64 {
    fn parse_cell(s: &str) -> Option<Self> {
        s.parse::<f64>().ok().filter(|x| x.is_finite())
    }

    fn to_f64(&self) -> f64 {
        *self
    }
}

impl GridValue for f32 {
    fn parse_cell(s: &str) -> Option<Self> {
        s.parse::<f32>().ok().filter(|x| x.is_finite())
    }

    fn to_f64(&self) -> f64 {
        *self as f64
    }
}

impl GridValue for Ratio<i64> {
    /// Plain decimals only (`-12.345`), parsed exactly.
    fn parse_cell(s: &str) -> Option<Self> {
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() && frac.is_empty() {
            return None;
        }
        if !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
            return None;
        }
        let digits = format!("{int}{frac}");
        let numer: i64 = if digits.is_empty() { 0 } else { digits.parse().ok()? };
        let denom = 10i64.checked_pow(frac.len() as u32)?;
        let r = Ratio::new(numer, denom);
        Some(if neg { -r } else { r })
    }

    fn to_f64(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

// ------------------------------------------------------- transferability

/// `acc[i][j]`: score on task `j` after selecting with capability `i`'s
/// direction, in percentage points.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTable<T> {
    pub capabilities: Vec<String>,
    pub tasks: Vec<String>,
    pub acc: Vec<Vec<T>>,
}

impl<T: GridValue> AccuracyTable<T> {
    pub fn new(capabilities: Vec<String>, tasks: Vec<String>, acc: Vec<Vec<T>>) -> Result<Self> {
        if acc.len() != capabilities.len() || acc.iter().any(|r| r.len() != tasks.len()) {
            return Err(NaitError::ShapeMismatch(format!(
                "accuracy grid must be {} x {}",
                capabilities.len(),
                tasks.len()
            )));
        }
        if let Some(c) = capabilities.iter().find(|c| !tasks.contains(c)) {
            return Err(NaitError::invariant(c, "capability has no matching task column"));
        }
        if acc.iter().flatten().any(|x| !x.to_f64().is_finite()) {
            return Err(NaitError::invariant("accuracy table", "non-finite cell"));
        }
        Ok(AccuracyTable { capabilities, tasks, acc })
    }

    pub fn from_grid(text: &str) -> Result<Self> {
        let grid = parse_grid::<T>(text)?;
        Self::new(grid.row_tags, grid.col_tags, grid.values)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_grid(&read_text(path.as_ref())?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferabilityMatrix<T> {
    pub capabilities: Vec<String>,
    pub tasks: Vec<String>,
    pub t: Vec<Vec<T>>,
}

impl<T: GridValue> TransferabilityMatrix<T> {
    /// Convenience summary, not a defined quantity of the method: the mean
    /// of each row over tasks other than the row's own capability.
    pub fn row_mean_off_diagonal(&self) -> Vec<f64> {
        self.capabilities
            .iter()
            .zip(&self.t)
            .map(|(cap, row)| {
                let vals: Vec<f64> = self
                    .tasks
                    .iter()
                    .zip(row)
                    .filter(|(task, _)| *task != cap)
                    .map(|(_, v)| v.to_f64())
                    .collect();
                if vals.is_empty() {
                    0.0
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                }
            })
            .collect()
    }

    pub fn to_grid(&self) -> String {
        let values: Vec<Vec<f64>> = self.t.iter().map(|r| r.iter().map(GridValue::to_f64).collect()).collect();
        format_grid(&self.capabilities, &self.tasks, &values)
    }
}

/// `t[i][j] = acc[i][j] - acc[j][j]`, where `acc[j][j]` is the row of the
/// capability named like task `j`.
pub fn transferability<T: GridValue>(table: &AccuracyTable<T>) -> Result<TransferabilityMatrix<T>> {
    let baseline_rows: Vec<usize> = table
        .tasks
        .iter()
        .map(|task| {
            table
                .capabilities
                .iter()
                .position(|c| c == task)
                .ok_or_else(|| NaitError::MissingBaseline(task.clone()))
        })
        .collect::<Result<_>>()?;
    let t = table
        .acc
        .iter()
        .map(|row| {
            row.iter()
                .zip(&baseline_rows)
                .enumerate()
                .map(|(j, (x, &b))| x.clone() - table.acc[b][j].clone())
                .collect()
        })
        .collect();
    Ok(TransferabilityMatrix {
        capabilities: table.capabilities.clone(),
        tasks: table.tasks.clone(),
        t,
    })
}

// ------------------------------------------------------------------ grids

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub row_tags: Vec<String>,
    pub col_tags: Vec<String>,
    pub values: Vec<Vec<T>>,
}

fn split_cells(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Parse a tagged grid: the first row holds column tags (optionally after
/// an empty or named corner cell), every further row starts with its tag.
/// Cells are separated by commas or whitespace; `#` lines are comments.
pub fn parse_grid<T: GridValue>(text: &str) -> Result<Grid<T>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (_, header) = lines
        .next()
        .ok_or_else(|| NaitError::format(None, "grid is empty"))?;
    let header_cells = split_cells(header);
    let body: Vec<(usize, Vec<&str>)> = lines.map(|(i, l)| (i, split_cells(l))).collect();
    let width = body.first().map_or(header_cells.len(), |(_, r)| r.len().saturating_sub(1));
    let col_tags: Vec<String> = if header_cells.len() == width + 1 {
        header_cells[1..].iter().map(|s| s.to_string()).collect()
    } else if header_cells.len() == width {
        header_cells.iter().map(|s| s.to_string()).collect()
    } else {
        return Err(NaitError::format(None, "line 1: header width does not match data rows"));
    };
    let mut row_tags = Vec::with_capacity(body.len());
    let mut values = Vec::with_capacity(body.len());
    for (i, cells) in body {
        if cells.len() != width + 1 {
            return Err(NaitError::format(
                None,
                format!("line {}: expected {} cells, found {}", i + 1, width + 1, cells.len()),
            ));
        }
        row_tags.push(cells[0].to_string());
        let row = cells[1..]
            .iter()
            .map(|c| {
                T::parse_cell(c).ok_or_else(|| NaitError::format(None, format!("line {}: bad cell {c:?}", i + 1)))
            })
            .collect::<Result<Vec<T>>>()?;
        values.push(row);
    }
    Ok(Grid {
        row_tags,
        col_tags,
        values,
    })
}

fn fixed4(x: f64) -> String {
    let s = format!("{x:.4}");
    if s == "-0.0000" {
        "0.0000".to_string()
    } else {
        s
    }
}

/// Comma-separated grid with an empty corner cell, 4 decimal places.
pub fn format_grid(rows: &[String], cols: &[String], values: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for c in cols {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (tag, row) in rows.iter().zip(values) {
        out.push_str(tag);
        for &v in row {
            out.push(',');
            out.push_str(&fixed4(v));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------- overlap

/// UpSet-style breakdown of several id subsets.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapReport {
    /// Sorted subset names.
    pub subset_names: Vec<String>,
    pub subset_sizes: Vec<usize>,
    /// Exclusive regions: each non-empty name combination (sorted) mapped to
    /// the number of ids in exactly those subsets.
    pub region_sizes: BTreeMap<Vec<String>, usize>,
    pub union_size: usize,
    /// Ids in every subset.
    pub core_size: usize,
    /// Ids in two or more subsets.
    pub shared_size: usize,
    pub unique_counts: Vec<usize>,
    /// `core_size / min(subset_sizes)`, 0 when the smallest subset is empty.
    pub core_fraction: f64,
}

impl OverlapReport {
    pub fn core_fraction_of_union(&self) -> f64 {
        ratio(self.core_size, self.union_size)
    }

    pub fn shared_fraction_of_union(&self) -> f64 {
        ratio(self.shared_size, self.union_size)
    }

    /// Regions by descending count, ties by name combination.
    pub fn regions_ranked(&self) -> Vec<(&Vec<String>, usize)> {
        let mut v: Vec<_> = self.region_sizes.iter().map(|(k, &c)| (k, c)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# nait-overlap v1\n");
        for (name, size) in self.subset_names.iter().zip(&self.subset_sizes) {
            out.push_str(&format!("subset {name} {size}\n"));
        }
        for (combo, count) in self.regions_ranked() {
            out.push_str(&format!("region {} {count}\n", combo.join("&")));
        }
        out.push_str(&format!("union {}\n", self.union_size));
        out.push_str(&format!("core {}\n", self.core_size));
        out.push_str(&format!("core_fraction_min {:.9}\n", self.core_fraction));
        out.push_str(&format!("core_fraction_union {:.9}\n", self.core_fraction_of_union()));
        out.push_str(&format!("shared {}\n", self.shared_size));
        out.push_str(&format!("shared_fraction_union {:.9}\n", self.shared_fraction_of_union()));
        for (name, u) in self.subset_names.iter().zip(&self.unique_counts) {
            out.push_str(&format!("unique {name} {u}\n"));
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_text().as_bytes())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Count the exclusive region of every id by its membership signature.
pub fn overlap_report(selections: &BTreeMap<String, BTreeSet<String>>) -> Result<OverlapReport> {
    if selections.len() < 2 {
        return Err(NaitError::EmptyInput("overlap needs at least two subsets".into()));
    }
    if selections.len() > 64 {
        return Err(NaitError::Config("overlap supports at most 64 subsets".into()));
    }
    let names: Vec<String> = selections.keys().cloned().collect();
    let mut signature: HashMap<&str, u64> = HashMap::new();
    for (bit, ids) in selections.values().enumerate() {
        for id in ids {
            *signature.entry(id.as_str()).or_insert(0) |= 1u64 << bit;
        }
    }
    let mut by_mask: BTreeMap<u64, usize> = BTreeMap::new();
    for &mask in signature.values() {
        *by_mask.entry(mask).or_insert(0) += 1;
    }
    let m = names.len();
    let all: u64 = if m == 64 { u64::MAX } else { (1u64 << m) - 1 };
    let region_sizes = by_mask
        .iter()
        .map(|(&mask, &count)| {
            let combo = (0..m).filter(|b| mask >> b & 1 == 1).map(|b| names[b].clone()).collect();
            (combo, count)
        })
        .collect();
    let unique_counts = (0..m).map(|b| by_mask.get(&(1u64 << b)).copied().unwrap_or(0)).collect();
    let subset_sizes: Vec<usize> = selections.values().map(BTreeSet::len).collect();
    let core_size = by_mask.get(&all).copied().unwrap_or(0);
    let shared_size = by_mask
        .iter()
        .filter(|(mask, _)| mask.count_ones() >= 2)
        .map(|(_, c)| c)
        .sum();
    let min_size = subset_sizes.iter().copied().min().unwrap_or(0);
    Ok(OverlapReport {
        subset_names: names,
        union_size: signature.len(),
        core_fraction: ratio(core_size, min_size),
        subset_sizes,
        region_sizes,
        core_size,
        shared_size,
        unique_counts,
    })
}

// ------------------------------------------------------------- similarity

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<S> {
    pub tags: Vec<String>,
    pub cosine: Vec<Vec<S>>,
    /// Scores on the two leading principal axes of the centered concatenated
    /// direction vectors. Axes with no variance yield zeros.
    pub coords2d: Vec<[S; 2]>,
    /// True when all concatenated directions coincide (coordinates all zero).
    pub degenerate: bool,
}

impl<S: Scalar> SimilarityMatrix<S> {
    pub fn to_grid(&self) -> String {
        let values: Vec<Vec<f64>> = self
            .cosine
            .iter()
            .map(|r| r.iter().map(|x| x.to_f64_lossy()).collect())
            .collect();
        format_grid(&self.tags, &self.tags, &values)
    }

    pub fn coords_csv(&self) -> String {
        let mut out = String::from("tag,x,y\n");
        for (tag, c) in self.tags.iter().zip(&self.coords2d) {
            out.push_str(&format!("{tag},{},{}\n", fixed4(c[0].to_f64_lossy()), fixed4(c[1].to_f64_lossy())));
        }
        out
    }
}

fn concatenated<S: Scalar>(p: &CapabilityProfile<S>) -> Vec<S> {
    p.directions.iter().flatten().copied().collect()
}

pub fn direction_similarity<S: Scalar>(profiles: &[CapabilityProfile<S>]) -> Result<SimilarityMatrix<S>> {
    if profiles.len() < 2 {
        return Err(NaitError::EmptyInput("similarity needs at least two profiles".into()));
    }
    let dims = profiles[0].layer_dims();
    if let Some(p) = profiles.iter().find(|p| p.layer_dims() != dims) {
        return Err(NaitError::ShapeMismatch(format!(
            "profile {} layer_dims {:?} differ from {:?}",
            p.capability,
            p.layer_dims(),
            dims
        )));
    }
    let rows: Vec<Vec<S>> = profiles.iter().map(concatenated).collect();
    let unit: Vec<Vec<S>> = rows
        .iter()
        .map(|r| {
            let n = norm(r);
            r.iter().map(|&x| x / n).collect()
        })
        .collect();
    let m = rows.len();
    let mut cosine = vec![vec![S::zero(); m]; m];
    for a in 0..m {
        for b in a..m {
            let c = dot(&unit[a], &unit[b]).max(-S::one()).min(S::one());
            cosine[a][b] = c;
            cosine[b][a] = c;
        }
    }

    let mut centered = rows.clone();
    center_rows(&mut centered);
    let total: S = centered.iter().map(|r| dot(r, r)).fold(S::zero(), |a, b| a + b);
    let mut coords2d = vec![[S::zero(); 2]; m];
    let degenerate = !(total > S::zero());
    if !degenerate {
        let eig = SymmetricEigen::new(&gram(&centered))?;
        let floor = eig.values[0] * S::from_f64_lossy(1e-12);
        for k in 0..2.min(m) {
            if !(eig.values[k] > floor) {
                continue;
            }
            if let Some(mut axis) = lift_gram_vector(&centered, &eig.vectors[k]) {
                canonical_sign(&mut axis, S::from_f64_lossy(1e-12));
                for (c, r) in coords2d.iter_mut().zip(&centered) {
                    c[k] = dot(r, &axis);
                }
            }
        }
    }
    Ok(SimilarityMatrix {
        tags: profiles.iter().map(|p| p.capability.clone()).collect(),
        cosine,
        coords2d,
        degenerate,
    })
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    write_atomic(path.as_ref(), text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::ExtractionConfig;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn rational_cells_parse_exactly() {
        assert_eq!(Ratio::<i64>::parse_cell("15.68"), Some(Ratio::new(1568, 100)));
        assert_eq!(Ratio::<i64>::parse_cell("-0.5"), Some(Ratio::new(-1, 2)));
        assert_eq!(Ratio::<i64>::parse_cell("7"), Some(Ratio::from_integer(7)));
        assert_eq!(Ratio::<i64>::parse_cell(".25"), Some(Ratio::new(1, 4)));
        assert_eq!(Ratio::<i64>::parse_cell("1e3"), None);
        assert_eq!(Ratio::<i64>::parse_cell("."), None);
    }

    #[test]
    fn missing_baseline() {
        let t = AccuracyTable::new(s(&["A"]), s(&["A", "B"]), vec![vec![1.0, 2.0]]).unwrap();
        assert!(matches!(transferability(&t), Err(NaitError::MissingBaseline(b)) if b == "B"));
    }

    #[test]
    fn column_shift_invariance_and_row_shift_equivariance() {
        let caps = s(&["A", "B", "C"]);
        let acc = vec![vec![1.0, 2.5, 3.0], vec![0.5, 4.0, -1.0], vec![2.0, 2.0, 6.0]];
        let base = transferability(&AccuracyTable::new(caps.clone(), caps.clone(), acc.clone()).unwrap()).unwrap();
        let mut col = acc.clone();
        col.iter_mut().for_each(|r| r[1] += 10.0);
        let shifted = transferability(&AccuracyTable::new(caps.clone(), caps.clone(), col).unwrap()).unwrap();
        for i in 0..3 {
            assert_eq!(shifted.t[i][1], base.t[i][1]);
            assert_eq!(base.t[i][i], 0.0);
        }
        let mut row = acc;
        row[0].iter_mut().for_each(|x| *x += 2.0);
        let moved = transferability(&AccuracyTable::new(caps.clone(), caps, row).unwrap()).unwrap();
        for j in 1..3 {
            assert!((moved.t[0][j] - base.t[0][j] - 2.0_f64).abs() < 1e-12);
        }
        assert_eq!(moved.t[0][0], 0.0);
    }

    #[test]
    fn grid_formats() {
        let g = parse_grid::<f64>("MMLU GSM\nMMLU 47.81 15.68\nGSM 46.45 16.00\n").unwrap();
        assert_eq!(g.col_tags, s(&["MMLU", "GSM"]));
        let g2 = parse_grid::<f64>(",MMLU,GSM\nMMLU,47.81,15.68\nGSM,46.45,16.00\n").unwrap();
        assert_eq!(g, g2);
        let text = format_grid(&g.row_tags, &g.col_tags, &[vec![0.0, -0.32], vec![-1.36, -0.00001]]);
        assert_eq!(text, ",MMLU,GSM\nMMLU,0.0000,-0.3200\nGSM,-1.3600,0.0000\n");
        assert!(parse_grid::<f64>("A B C\nA 1\n").is_err());
        assert!(parse_grid::<f64>("A B\nA 1 2\nB 1\n").is_err());
    }

    #[test]
    fn two_subset_overlap() {
        let mut m = BTreeMap::new();
        m.insert("A".to_string(), ["a", "b", "c"].iter().map(|x| x.to_string()).collect());
        m.insert("B".to_string(), ["b", "c", "d"].iter().map(|x| x.to_string()).collect());
        let r = overlap_report(&m).unwrap();
        assert_eq!(r.region_sizes[&s(&["A"])], 1);
        assert_eq!(r.region_sizes[&s(&["B"])], 1);
        assert_eq!(r.region_sizes[&s(&["A", "B"])], 2);
        assert_eq!(r.core_size, 2);
        assert_eq!(r.union_size, 4);
        assert!((r.core_fraction - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            r.to_text(),
            "# nait-overlap v1\nsubset A 3\nsubset B 3\nregion A&B 2\nregion A 1\nregion B 1\n\
union 4\ncore 2\ncore_fraction_min 0.666666667\ncore_fraction_union 0.500000000\nshared 2\n\
shared_fraction_union 0.500000000\nunique A 1\nunique B 1\n"
        );
    }

    #[test]
    fn identical_subsets_overlap() {
        let ids: BTreeSet<String> = ["x", "y"].iter().map(|x| x.to_string()).collect();
        let m: BTreeMap<_, _> = [("P".to_string(), ids.clone()), ("Q".to_string(), ids)].into();
        let r = overlap_report(&m).unwrap();
        assert_eq!(r.core_fraction, 1.0);
        assert_eq!(r.unique_counts, vec![0, 0]);
        let single: BTreeMap<String, BTreeSet<String>> = [("P".to_string(), BTreeSet::new())].into();
        assert!(matches!(overlap_report(&single), Err(NaitError::EmptyInput(_))));
    }

    fn profile(tag: &str, dirs: Vec<Vec<f64>>) -> CapabilityProfile<f64> {
        CapabilityProfile {
            capability: tag.into(),
            mu_diff: dirs.clone(),
            explained_variance_ratio: vec![1.0; dirs.len()],
            directions: dirs,
            n_samples: 3,
            config: ExtractionConfig::default(),
        }
    }

    #[test]
    fn similarity_identical_and_opposed() {
        let a = profile("a", vec![vec![0.6, 0.8], vec![1.0, 0.0]]);
        let b = profile("b", vec![vec![-0.6, -0.8], vec![-1.0, 0.0]]);
        let same = direction_similarity(&[a.clone(), a.clone()]).unwrap();
        assert!((same.cosine[0][1] - 1.0).abs() < 1e-15);
        assert!(same.degenerate);
        assert!(same.coords2d.iter().all(|c| c == &[0.0, 0.0]));
        let opp = direction_similarity(&[a, b]).unwrap();
        assert!((opp.cosine[0][1] + 1.0).abs() < 1e-15);
        assert!(!opp.degenerate);
        // Two points: one axis, symmetric about the origin, second axis empty.
        assert!((opp.coords2d[0][0] + opp.coords2d[1][0]).abs() < 1e-12);
        assert!((opp.coords2d[0][0].abs() - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(opp.coords2d[0][1], 0.0);
    }

    #[test]
    fn similarity_rejects_shape_mismatch() {
        let a = profile("a", vec![vec![1.0, 0.0]]);
        let b = profile("b", vec![vec![1.0, 0.0, 0.0]]);
        assert!(matches!(direction_similarity(&[a, b]), Err(NaitError::ShapeMismatch(_))));
    }
}
