//! Word lattices: parsing, best paths, n-best lists, edge posteriors and
//! pinching against the 1-best path.
//!
//! Edge scores are natural-log values; a path's score is the sum of its
//! edge scores and higher is better.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::fmt::{self, Write as _};
use std::path::Path;

use crate::corpus::read_text;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub word: String,
    pub log_score: f64,
}

/// A pruned, topologically sorted word DAG. Nodes are dense indices; the
/// ids from the input file are kept for output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    node_ids: Vec<u64>,
    start: usize,
    final_node: usize,
    edges: Vec<Edge>,
    topo: Vec<usize>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
}

impl Lattice {
    /// Validates and prunes a lattice given by raw node ids.
    ///
    /// Edges that lie on no START to FINAL path are dropped. A lattice whose
    /// FINAL node is unreachable ends up with no edges.
    pub fn new(start: u64, final_node: u64, raw_edges: Vec<(u64, u64, String, f64)>) -> Result<Self> {
        if start == final_node {
            return Err(Error::Lattice("START and FINAL must differ".into()));
        }
        let mut index: HashMap<u64, usize> = HashMap::new();
        let mut node_ids = Vec::new();
        let mut intern = |id: u64, node_ids: &mut Vec<u64>| {
            *index.entry(id).or_insert_with(|| {
                node_ids.push(id);
                node_ids.len() - 1
            })
        };
        let mut edges = Vec::with_capacity(raw_edges.len());
        for (from, to, word, log_score) in raw_edges {
            if !log_score.is_finite() {
                return Err(Error::Lattice(format!("edge {from}->{to} has non-finite score")));
            }
            if word.is_empty() || word.contains(char::is_whitespace) {
                return Err(Error::Lattice(format!("edge {from}->{to} has an invalid word")));
            }
            let f = intern(from, &mut node_ids);
            let t = intern(to, &mut node_ids);
            edges.push(Edge {
                from: f,
                to: t,
                word,
                log_score,
            });
        }
        let start_idx = *index
            .get(&start)
            .ok_or_else(|| Error::Lattice(format!("dangling START node {start}: no edges")))?;
        let final_idx = *index
            .get(&final_node)
            .ok_or_else(|| Error::Lattice(format!("dangling FINAL node {final_node}: no edges")))?;

        let n = node_ids.len();
        let order = topological_order(n, &edges)
            .ok_or_else(|| Error::Lattice("cycle detected".into()))?;

        // Keep edges on some START -> FINAL path.
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in &edges {
            succ[e.from].push(e.to);
        }
        let mut from_start = vec![false; n];
        from_start[start_idx] = true;
        for &v in &order {
            if from_start[v] {
                for &t in &succ[v] {
                    from_start[t] = true;
                }
            }
        }
        let mut to_final = vec![false; n];
        to_final[final_idx] = true;
        for &v in order.iter().rev() {
            if succ[v].iter().any(|&t| to_final[t]) {
                to_final[v] = true;
            }
        }
        let kept: Vec<Edge> = edges
            .into_iter()
            .filter(|e| from_start[e.from] && to_final[e.to])
            .collect();

        // Re-index the surviving nodes in topological order.
        let mut used = vec![false; n];
        used[start_idx] = true;
        used[final_idx] = true;
        for e in &kept {
            used[e.from] = true;
            used[e.to] = true;
        }
        let mut remap = vec![usize::MAX; n];
        let mut new_ids = Vec::new();
        for &v in &order {
            if used[v] {
                remap[v] = new_ids.len();
                new_ids.push(node_ids[v]);
            }
        }
        let edges: Vec<Edge> = kept
            .into_iter()
            .map(|e| Edge {
                from: remap[e.from],
                to: remap[e.to],
                ..e
            })
            .collect();
        let n = new_ids.len();
        let mut out_edges = vec![Vec::new(); n];
        let mut in_edges = vec![Vec::new(); n];
        for (i, e) in edges.iter().enumerate() {
            out_edges[e.from].push(i);
            in_edges[e.to].push(i);
        }
        Ok(Lattice {
            node_ids: new_ids,
            start: remap[start_idx],
            final_node: remap[final_idx],
            edges,
            topo: (0..n).collect(),
            out_edges,
            in_edges,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .enumerate()
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, "LATTICE v1")) => {}
            _ => return Err(Error::Parse("lattice file must start with 'LATTICE v1'".into())),
        }
        let mut start = None;
        let mut final_node = None;
        let mut edges = Vec::new();
        for (lineno, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Parse(format!("lattice line {}: '{line}'", lineno + 1));
            let node = |s: &str| s.parse::<u64>().map_err(|_| bad());
            match fields.as_slice() {
                ["START", n] => start = Some(node(n)?),
                ["FINAL", n] => final_node = Some(node(n)?),
                ["E", from, to, word, score] => {
                    let score: f64 = score.parse().map_err(|_| bad())?;
                    edges.push((node(from)?, node(to)?, word.to_string(), score));
                }
                _ => return Err(bad()),
            }
        }
        let start = start.ok_or_else(|| Error::Lattice("missing START".into()))?;
        let final_node = final_node.ok_or_else(|| Error::Lattice("missing FINAL".into()))?;
        Lattice::new(start, final_node, edges)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("LATTICE v1\n");
        let _ = writeln!(out, "START {}", self.node_ids[self.start]);
        let _ = writeln!(out, "FINAL {}", self.node_ids[self.final_node]);
        for e in &self.edges {
            let _ = writeln!(
                out,
                "E {} {} {} {}",
                self.node_ids[e.from], self.node_ids[e.to], e.word, e.log_score
            );
        }
        out
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn final_node(&self) -> usize {
        self.final_node
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Node indices in topological order.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn out_edges(&self, node: usize) -> &[usize] {
        &self.out_edges[node]
    }

    pub fn in_edges(&self, node: usize) -> &[usize] {
        &self.in_edges[node]
    }

    /// Original id of a node index.
    pub fn node_id(&self, node: usize) -> u64 {
        self.node_ids[node]
    }

    pub fn path_words(&self, path: &[usize]) -> Vec<String> {
        path.iter().map(|&e| self.edges[e].word.clone()).collect()
    }

    /// Sum of edge scores, accumulated from START.
    pub fn path_score(&self, path: &[usize]) -> f64 {
        path.iter().fold(0.0, |acc, &e| acc + self.edges[e].log_score)
    }

    /// True when `path` is a sequence of edges from START to FINAL.
    pub fn is_complete_path(&self, path: &[usize]) -> bool {
        let mut at = self.start;
        for &e in path {
            match self.edges.get(e) {
                Some(edge) if edge.from == at => at = edge.to,
                _ => return false,
            }
        }
        at == self.final_node && !path.is_empty()
    }

    /// Best score from each node to FINAL, with the chosen next edge.
    /// Ties prefer the lexicographically smaller word sequence.
    fn best_suffixes(&self) -> Vec<Option<(f64, Option<usize>)>> {
        let mut best: Vec<Option<(f64, Option<usize>)>> = vec![None; self.num_nodes()];
        best[self.final_node] = Some((0.0, None));
        for &v in self.topo.iter().rev() {
            if v == self.final_node {
                continue;
            }
            for &e in &self.out_edges[v] {
                let edge = &self.edges[e];
                let Some((tail, _)) = best[edge.to] else { continue };
                let cand = edge.log_score + tail;
                let better = match best[v] {
                    None => true,
                    Some((cur, Some(cur_e))) => match cand.total_cmp(&cur) {
                        Ordering::Greater => true,
                        Ordering::Less => false,
                        Ordering::Equal => self.compare_suffix(e, cur_e, &best) == Ordering::Less,
                    },
                    Some((_, None)) => false,
                };
                if better {
                    best[v] = Some((cand, Some(e)));
                }
            }
        }
        best
    }

    /// Lexicographic comparison of the best word sequences that start with
    /// edges `a` and `b`.
    fn compare_suffix(&self, a: usize, b: usize, best: &[Option<(f64, Option<usize>)>]) -> Ordering {
        let (mut a, mut b) = (Some(a), Some(b));
        loop {
            match (a, b) {
                (None, None) => return Ordering::Equal,
                (None, Some(_)) => return Ordering::Less,
                (Some(_), None) => return Ordering::Greater,
                (Some(x), Some(y)) => {
                    let ord = self.edges[x].word.cmp(&self.edges[y].word);
                    if ord != Ordering::Equal {
                        return ord;
                    }
                    a = best[self.edges[x].to].and_then(|(_, n)| n);
                    b = best[self.edges[y].to].and_then(|(_, n)| n);
                }
            }
        }
    }

    /// The highest-scoring START to FINAL path as an edge list.
    pub fn one_best(&self) -> Result<Vec<usize>> {
        let best = self.best_suffixes();
        let mut path = Vec::new();
        let mut at = self.start;
        while at != self.final_node {
            match best[at] {
                Some((_, Some(e))) => {
                    path.push(e);
                    at = self.edges[e].to;
                }
                _ => return Err(Error::Lattice("no path from START to FINAL".into())),
            }
        }
        Ok(path)
    }

    /// Up to `n` distinct word sequences, best first. Each sequence carries
    /// the score of its best path; equal scores order by word sequence.
    pub fn n_best(&self, n: usize) -> Vec<Hypothesis> {
        if n == 0 || self.edges.is_empty() {
            return Vec::new();
        }
        let heuristic: Vec<Option<f64>> = self.best_suffixes().iter().map(|b| b.map(|(s, _)| s)).collect();
        let mut heap = BinaryHeap::new();
        let mut counter = 0u64;
        if let Some(h) = heuristic[self.start] {
            heap.push(Partial {
                priority: h,
                order: counter,
                prefix: 0.0,
                node: self.start,
                path: Vec::new(),
            });
        }
        let mut found: HashMap<Vec<String>, f64> = HashMap::new();
        let mut scores_sorted: Vec<f64> = Vec::new();

        while let Some(item) = heap.pop() {
            if scores_sorted.len() >= n {
                let nth = scores_sorted[n - 1];
                if item.priority < nth - 1e-9 * (1.0 + nth.abs()) {
                    break;
                }
            }
            if item.node == self.final_node {
                let words = self.path_words(&item.path);
                let score = self.path_score(&item.path);
                let previous = found.get(&words).copied();
                if previous.is_some_and(|p| p >= score) {
                    continue;
                }
                if let Some(p) = previous {
                    let at = scores_sorted.iter().position(|&s| s == p).expect("score recorded");
                    scores_sorted.remove(at);
                }
                found.insert(words, score);
                let pos = scores_sorted.partition_point(|&s| s >= score);
                scores_sorted.insert(pos, score);
                continue;
            }
            for &e in &self.out_edges[item.node] {
                let edge = &self.edges[e];
                let Some(h) = heuristic[edge.to] else { continue };
                let prefix = item.prefix + edge.log_score;
                let mut path = item.path.clone();
                path.push(e);
                counter += 1;
                heap.push(Partial {
                    priority: prefix + h,
                    order: counter,
                    prefix,
                    node: edge.to,
                    path,
                });
            }
        }
        let mut hyps: Vec<Hypothesis> = found
            .into_iter()
            .map(|(words, score)| Hypothesis { words, score })
            .collect();
        hyps.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.words.cmp(&b.words)));
        hyps.truncate(n);
        hyps
    }

    /// Log forward scores (START to node) and backward scores (node to FINAL).
    pub fn forward_backward(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.num_nodes();
        let mut alpha = vec![f64::NEG_INFINITY; n];
        let mut beta = vec![f64::NEG_INFINITY; n];
        alpha[self.start] = 0.0;
        for &v in &self.topo {
            if v == self.start {
                continue;
            }
            alpha[v] = log_sum_exp(
                self.in_edges[v]
                    .iter()
                    .map(|&e| alpha[self.edges[e].from] + self.edges[e].log_score),
            );
        }
        beta[self.final_node] = 0.0;
        for &v in self.topo.iter().rev() {
            if v == self.final_node {
                continue;
            }
            beta[v] = log_sum_exp(
                self.out_edges[v]
                    .iter()
                    .map(|&e| self.edges[e].log_score + beta[self.edges[e].to]),
            );
        }
        (alpha, beta)
    }

    /// Posterior probability of each edge, indexed like [`Lattice::edges`].
    pub fn edge_posteriors(&self) -> Vec<f64> {
        let (alpha, beta) = self.forward_backward();
        let log_z = alpha[self.final_node];
        self.edges
            .iter()
            .map(|e| (alpha[e.from] + e.log_score + beta[e.to] - log_z).exp())
            .collect()
    }

    /// Geometric mean of the posteriors of the edges on `path`.
    pub fn path_confidence(&self, path: &[usize]) -> f64 {
        if path.is_empty() {
            return 0.0;
        }
        let post = self.edge_posteriors();
        let mean_log: f64 = path.iter().map(|&e| post[e].ln()).sum::<f64>() / path.len() as f64;
        mean_log.exp()
    }

    /// Number of START->node and node->FINAL paths.
    fn path_counts(&self) -> Result<(Vec<u128>, Vec<u128>)> {
        let n = self.num_nodes();
        let overflow = || Error::Lattice("too many paths to count".into());
        let mut fwd = vec![0u128; n];
        fwd[self.start] = 1;
        for &v in &self.topo {
            for &e in &self.out_edges[v] {
                let t = self.edges[e].to;
                fwd[t] = fwd[t].checked_add(fwd[v]).ok_or_else(overflow)?;
            }
        }
        let mut bwd = vec![0u128; n];
        bwd[self.final_node] = 1;
        for &v in self.topo.iter().rev() {
            for &e in &self.out_edges[v] {
                bwd[v] = bwd[v].checked_add(bwd[self.edges[e].to]).ok_or_else(overflow)?;
            }
        }
        Ok((fwd, bwd))
    }

    /// Total number of START to FINAL paths.
    pub fn num_paths(&self) -> Result<u128> {
        Ok(self.path_counts()?.0[self.final_node])
    }

    /// Nodes that every START to FINAL path visits, in topological order.
    pub fn cut_nodes(&self) -> Result<Vec<usize>> {
        let (fwd, bwd) = self.path_counts()?;
        let total = fwd[self.final_node];
        if total == 0 {
            return Ok(Vec::new());
        }
        Ok(self
            .topo
            .iter()
            .copied()
            .filter(|&v| fwd[v].checked_mul(bwd[v]) == Some(total))
            .collect())
    }

    /// Aligns every lattice hypothesis against `best` by cutting the lattice
    /// at nodes shared by all paths.
    pub fn pinch(&self, best: &[usize]) -> Result<PinchedAlignment> {
        if !self.is_complete_path(best) {
            return Err(Error::Lattice("1-best is not a START to FINAL path of the lattice".into()));
        }
        let cuts = self.cut_nodes()?;
        let (alpha, beta) = self.forward_backward();
        let log_z = alpha[self.final_node];
        let mut positions = Vec::with_capacity(best.len());
        let mut best_iter = best.iter().copied().peekable();

        for pair in cuts.windows(2) {
            let (left, right) = (pair[0], pair[1]);
            let mut span = Vec::new();
            while let Some(&e) = best_iter.peek() {
                span.push(self.edges[e].word.clone());
                best_iter.next();
                if self.edges[e].to == right {
                    break;
                }
            }
            let mut hyps = self.segment_sequences(left, right, alpha[left] + beta[right] - log_z)?;
            let total: f64 = hyps.iter().map(|(_, p)| p).sum();
            for (_, p) in hyps.iter_mut() {
                *p /= total;
            }
            let best_posterior = hyps
                .iter()
                .find(|(w, _)| *w == span)
                .map(|(_, p)| *p)
                .unwrap_or(0.0);
            let mut alternatives: Vec<(Vec<String>, f64)> = hyps.into_iter().filter(|(w, _)| *w != span).collect();
            alternatives.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

            if span.len() > 1 {
                for word in span {
                    positions.push(PinchedPosition {
                        word,
                        best_posterior,
                        alternatives: Vec::new(),
                        excluded: Some(Exclusion::MultiwordAlignment),
                    });
                }
                continue;
            }
            let excluded = if alternatives.is_empty() {
                Some(Exclusion::NoConfusions)
            } else if alternatives.iter().any(|(w, _)| w.len() != 1) {
                Some(Exclusion::MultiwordAlignment)
            } else {
                None
            };
            positions.push(PinchedPosition {
                word: span.into_iter().next().expect("segment covers a 1-best edge"),
                best_posterior,
                alternatives,
                excluded,
            });
        }
        Ok(PinchedAlignment { positions })
    }

    /// Every word sequence from `left` to `right` with its posterior
    /// (`offset` = `alpha(left) + beta(right) - log Z`), merged by sequence.
    fn segment_sequences(&self, left: usize, right: usize, offset: f64) -> Result<Vec<(Vec<String>, f64)>> {
        const MAX_SUBPATHS: usize = 1_000_000;
        let mut merged: HashMap<Vec<String>, f64> = HashMap::new();
        let mut stack: Vec<(usize, Vec<String>, f64)> = vec![(left, Vec::new(), 0.0)];
        let mut visited = 0usize;
        while let Some((node, words, score)) = stack.pop() {
            if node == right {
                visited += 1;
                if visited > MAX_SUBPATHS {
                    return Err(Error::Lattice("segment has too many sub-paths to pinch".into()));
                }
                let p = (offset + score).exp();
                *merged.entry(words).or_insert(0.0) += p;
                continue;
            }
            for &e in &self.out_edges[node] {
                let edge = &self.edges[e];
                let mut w = words.clone();
                w.push(edge.word.clone());
                stack.push((edge.to, w, score + edge.log_score));
            }
        }
        let mut out: Vec<_> = merged.into_iter().collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }
}

fn topological_order(n: usize, edges: &[Edge]) -> Option<Vec<usize>> {
    let mut indegree = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in edges {
        indegree[e.to] += 1;
        out[e.from].push(e.to);
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &t in &out[v] {
            indegree[t] -= 1;
            if indegree[t] == 0 {
                queue.push_back(t);
            }
        }
    }
    (order.len() == n).then_some(order)
}

pub fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Partial path in the n-best search, ordered by optimistic total score.
struct Partial {
    priority: f64,
    order: u64,
    prefix: f64,
    node: usize,
    path: Vec<usize>,
}

impl PartialEq for Partial {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Partial {}

impl PartialOrd for Partial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Partial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.order.cmp(&self.order))
    }
}

/// One entry of an n-best list.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub words: Vec<String>,
    pub score: f64,
}

/// Why a 1-best word yields no speech-noise samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exclusion {
    /// Only the 1-best word occurs in its segment.
    NoConfusions,
    /// The segment aligns with more than one word on either side.
    MultiwordAlignment,
}

impl fmt::Display for Exclusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Exclusion::NoConfusions => "no_confusions",
            Exclusion::MultiwordAlignment => "multiword_alignment",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinchedPosition {
    pub word: String,
    /// Segment posterior of the 1-best word.
    pub best_posterior: f64,
    /// Competing sequences in the segment with their posteriors, best
    /// first. Empty when the segment spans several 1-best words.
    pub alternatives: Vec<(Vec<String>, f64)>,
    pub excluded: Option<Exclusion>,
}

impl PinchedPosition {
    /// Single-word confusions usable as noise; empty for excluded positions.
    pub fn usable(&self) -> Vec<(&str, f64)> {
        if self.excluded.is_some() {
            return Vec::new();
        }
        self.alternatives
            .iter()
            .map(|(w, p)| (w[0].as_str(), *p))
            .collect()
    }
}

/// One entry per 1-best word.
#[derive(Debug, Clone, PartialEq)]
pub struct PinchedAlignment {
    pub positions: Vec<PinchedPosition>,
}

impl PinchedAlignment {
    /// Human-readable table: one line per 1-best word.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, p) in self.positions.iter().enumerate() {
            let _ = write!(out, "{i}\t{}\t{:.6}", p.word, p.best_posterior);
            match p.excluded {
                Some(reason) => {
                    let _ = write!(out, "\texcluded={reason}");
                }
                None => out.push_str("\tincluded"),
            }
            for (w, post) in &p.alternatives {
                let _ = write!(out, "\t{}:{post:.6}", w.join("_"));
            }
            out.push('\n');
        }
        out
    }
}

/// `<rank> <total_log_score> <word ...>` lines, rank from 1.
pub fn nbest_to_text(hyps: &[Hypothesis]) -> String {
    let mut out = String::new();
    for (i, h) in hyps.iter().enumerate() {
        let _ = write!(out, "{} {}", i + 1, h.score);
        for w in &h.words {
            let _ = write!(out, " {w}");
        }
        out.push('\n');
    }
    out
}

pub fn nbest_from_text(text: &str) -> Result<Vec<Hypothesis>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let bad = || Error::Parse(format!("n-best line {}: '{line}'", lineno + 1));
        let rank: usize = fields.next().and_then(|r| r.parse().ok()).ok_or_else(bad)?;
        if rank != out.len() + 1 {
            return Err(bad());
        }
        let score: f64 = fields.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        out.push(Hypothesis {
            words: fields.map(String::from).collect(),
            score,
        });
    }
    Ok(out)
}
