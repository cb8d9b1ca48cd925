//! Pearson chi-square goodness of fit.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// p-value of observed `counts` against probabilities `probs`. Cells with
/// expected count below 5 are pooled into one cell.
pub fn chi_square_p(counts: &[u64], probs: &[f64]) -> f64 {
    assert_eq!(counts.len(), probs.len());
    let n: u64 = counts.iter().sum();
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probs) {
        let e = p * n as f64;
        if p == 0.0 {
            assert_eq!(c, 0, "drew a zero-probability outcome");
        } else if e < 5.0 {
            pooled.0 += c as f64;
            pooled.1 += e;
        } else {
            cells.push((c as f64, e));
        }
    }
    if pooled.1 > 0.0 {
        cells.push(pooled);
    }
    if cells.len() < 2 {
        return 1.0;
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    1.0 - ChiSquared::new((cells.len() - 1) as f64).unwrap().cdf(stat)
}
