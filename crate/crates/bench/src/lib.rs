//! Fixed inputs shared by the criterion benchmarks.

use apricot::{Market, TriangularAgent};

/// Deterministic market with `types` agent types and supply `k`.
pub fn spread_market(k: usize, types: usize, count: u64) -> Market {
    let agents = (0..types)
        .map(|i| {
            let t = (i as f64 * 0.618_033_988_75).fract();
            TriangularAgent::with_count(0.05 + 0.9 * t, 0.05 + 0.9 * (1.0 - t), count).unwrap()
        })
        .collect();
    Market::new(k, agents).unwrap()
}

/// Accept probabilities `delta * (i + 1) / n`.
pub fn small_probs(n: usize, delta: f64) -> Vec<f64> {
    (0..n).map(|i| delta * (i + 1) as f64 / n as f64).collect()
}
