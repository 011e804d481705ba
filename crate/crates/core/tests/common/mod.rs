#![allow(dead_code)]

use nait_core::{ActivationTrace, DetRng, LayerActivation, TraceSet};

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// `n x j` gaussian rows with a random anisotropic scale per column, so the
/// leading eigenvalue is usually well separated.
pub fn gaussian_rows(rng: &mut DetRng, n: usize, j: usize) -> Vec<Vec<f64>> {
    let scales: Vec<f64> = (0..j).map(|_| 0.2 + 3.0 * rng.uniform()).collect();
    (0..n)
        .map(|_| scales.iter().map(|s| s * rng.gaussian()).collect())
        .collect()
}

fn f32_vec(rng: &mut DetRng, j: usize) -> Vec<f32> {
    (0..j).map(|_| rng.gaussian() as f32).collect()
}

/// A valid trace set with gaussian activations.
pub fn random_trace_set(seed: u64, n: usize, dims: &[usize]) -> TraceSet {
    let mut rng = DetRng::new(seed);
    let traces = (0..n)
        .map(|i| {
            let k = 1 + rng.below(40) as u32;
            let layers = dims
                .iter()
                .enumerate()
                .map(|(l, &j)| {
                    if k == 1 {
                        let v = f32_vec(&mut rng, j);
                        LayerActivation::new(l, v.clone(), v.clone(), v)
                    } else {
                        LayerActivation::new(l, f32_vec(&mut rng, j), f32_vec(&mut rng, j), f32_vec(&mut rng, j))
                    }
                })
                .collect();
            ActivationTrace::new(format!("s{seed}-{i:04}"), k, layers)
        })
        .collect();
    TraceSet::new(format!("random-{seed}"), dims.to_vec(), traces).unwrap()
}

/// Per-layer deltas as plain f64 rows.
pub fn delta_rows(set: &TraceSet, layer: usize) -> Vec<Vec<f64>> {
    set.traces
        .iter()
        .map(|t| {
            let l = &t.layers[layer];
            l.last.iter().zip(&l.first).map(|(&b, &a)| b as f64 - a as f64).collect()
        })
        .collect()
}
