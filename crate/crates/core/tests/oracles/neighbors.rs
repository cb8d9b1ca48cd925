//! Exhaustive nearest neighbours over a row-major embedding table.

/// All other rows sorted by (squared distance, id), first `k`.
pub fn nearest(table: &[f64], dim: usize, word: usize, k: usize) -> Vec<(usize, f64)> {
    let rows = table.len() / dim;
    let q = &table[word * dim..(word + 1) * dim];
    let mut all = Vec::new();
    for r in 0..rows {
        if r == word {
            continue;
        }
        let mut sq = 0.0;
        for c in 0..dim {
            let diff = table[r * dim + c] - q[c];
            sq += diff * diff;
        }
        all.push((r, sq));
    }
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all.into_iter().map(|(r, sq)| (r, sq.sqrt())).collect()
}
