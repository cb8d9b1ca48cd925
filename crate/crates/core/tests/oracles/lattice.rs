//! Exhaustive path enumeration over a lattice's edge list.

use nngrams::lattice::Lattice;

/// Every START to FINAL path as edge indices.
pub fn all_paths(l: &Lattice) -> Vec<Vec<usize>> {
    fn walk(l: &Lattice, node: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if node == l.final_node() {
            out.push(path.clone());
            return;
        }
        for (i, e) in l.edges().iter().enumerate() {
            if e.from == node {
                path.push(i);
                walk(l, e.to, path, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    if l.start() != l.final_node() {
        walk(l, l.start(), &mut Vec::new(), &mut out);
    }
    out
}

fn score(l: &Lattice, path: &[usize]) -> f64 {
    path.iter().map(|&e| l.edges()[e].log_score).sum()
}

fn words(l: &Lattice, path: &[usize]) -> Vec<String> {
    path.iter().map(|&e| l.edges()[e].word.clone()).collect()
}

/// The `n` best distinct word sequences at their best score, best first
/// with ties ordered by words.
pub fn n_best(l: &Lattice, n: usize) -> Vec<(Vec<String>, f64)> {
    let mut best: Vec<(Vec<String>, f64)> = Vec::new();
    for p in all_paths(l) {
        let (w, s) = (words(l, &p), score(l, &p));
        match best.iter_mut().find(|(bw, _)| *bw == w) {
            Some(entry) => entry.1 = entry.1.max(s),
            None => best.push((w, s)),
        }
    }
    best.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    best.truncate(n);
    best
}

/// Posterior of each edge: path mass through it over total mass.
pub fn edge_posteriors(l: &Lattice) -> Vec<f64> {
    let paths = all_paths(l);
    let masses: Vec<f64> = paths.iter().map(|p| score(l, p).exp()).collect();
    let total: f64 = masses.iter().sum();
    (0..l.edges().len())
        .map(|e| {
            paths
                .iter()
                .zip(&masses)
                .filter(|(p, _)| p.contains(&e))
                .map(|(_, m)| m)
                .sum::<f64>()
                / total
        })
        .collect()
}
