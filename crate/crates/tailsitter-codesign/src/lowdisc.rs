//! Scrambled low-discrepancy designs on the unit box.

/// `n` points of an Owen-scrambled Sobol sequence in `[0,1)^d`.
pub fn scrambled_sobol(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(d <= sobol_burley::NUM_DIMENSIONS as usize, "too many dimensions");
    let s = (seed ^ (seed >> 32)) as u32;
    (0..n)
        .map(|i| {
            (0..d)
                .map(|k| sobol_burley::sample(i as u32, k as u32, s) as f64)
                .collect()
        })
        .collect()
}

/// Maps unit-box points into `bounds`.
pub fn scale_to_bounds(unit: &[Vec<f64>], bounds: &[(f64, f64)]) -> Vec<Vec<f64>> {
    unit.iter()
        .map(|u| u.iter().zip(bounds).map(|(x, (lo, hi))| lo + x * (hi - lo)).collect())
        .collect()
}
