//! Brute-force Katz backoff, computed directly from raw sentences.
//!
//! Ids 0, 1, 2 are `<s>`, `</s>`, `<unk>`. Histories are text order.

use std::collections::HashMap;

pub struct KatzOracle {
    vocab: usize,
    order: usize,
    counts: HashMap<Vec<u32>, u64>,
    total_tokens: u64,
    absolute: Vec<bool>,
    ratios: Vec<Vec<f64>>,
    cutoff: u64,
}

impl KatzOracle {
    pub fn new(sentences: &[Vec<u32>], vocab: usize, order: usize, cutoff: u64) -> Self {
        let mut counts = HashMap::new();
        let mut total_tokens = 0;
        for s in sentences {
            let mut framed = vec![0u32];
            framed.extend(s);
            framed.push(1);
            total_tokens += framed.len() as u64;
            for m in 1..=order {
                for g in framed.windows(m) {
                    *counts.entry(g.to_vec()).or_insert(0) += 1;
                }
            }
        }
        let mut oracle = KatzOracle {
            vocab,
            order,
            counts,
            total_tokens,
            absolute: vec![false; order + 1],
            ratios: vec![Vec::new(); order + 1],
            cutoff,
        };
        for m in 2..=order {
            match oracle.good_turing(m) {
                Some(r) => oracle.ratios[m] = r,
                None => oracle.absolute[m] = true,
            }
        }
        oracle
    }

    fn count(&self, g: &[u32]) -> u64 {
        self.counts.get(g).copied().unwrap_or(0)
    }

    fn grams(&self, m: usize) -> impl Iterator<Item = (&Vec<u32>, &u64)> {
        self.counts.iter().filter(move |(g, _)| g.len() == m)
    }

    fn good_turing(&self, m: usize) -> Option<Vec<f64>> {
        let k = self.cutoff as usize;
        let n = |r: usize| self.grams(m).filter(|(_, &c)| c as usize == r).count() as f64;
        if n(1) == 0.0 {
            return None;
        }
        let a = (k as f64 + 1.0) * n(k + 1) / n(1);
        if 1.0 - a <= 0.0 {
            return None;
        }
        let mut ratios = vec![1.0; k + 1];
        for r in 1..=k {
            if n(r) == 0.0 {
                continue;
            }
            let r_star = (r as f64 + 1.0) * n(r + 1) / n(r);
            let d = (r_star / r as f64 - a) / (1.0 - a);
            if !(d > 0.0 && d < 1.0) {
                return None;
            }
            ratios[r] = d;
        }
        // Every history needs at least one discounted continuation.
        let mut has_small: HashMap<&[u32], bool> = HashMap::new();
        for (g, &c) in self.grams(m) {
            *has_small.entry(&g[..m - 1]).or_insert(false) |= c <= self.cutoff;
        }
        has_small.values().all(|&b| b).then_some(ratios)
    }

    fn discounted(&self, m: usize, r: u64) -> f64 {
        if self.absolute[m] {
            r as f64 - 0.5
        } else if r <= self.cutoff {
            self.ratios[m][r as usize] * r as f64
        } else {
            r as f64
        }
    }

    fn unigram(&self, w: u32) -> f64 {
        if w == 0 {
            return 0.0;
        }
        let v = self.vocab as f64;
        let floor = 1.0 / (v * self.total_tokens as f64 + v);
        let seen: u64 = (1..self.vocab as u32).map(|x| self.count(&[x])).sum();
        let raw = |x: u32| {
            let c = self.count(&[x]);
            if c > 0 {
                c as f64 / seen as f64
            } else {
                floor
            }
        };
        let z: f64 = (1..self.vocab as u32).map(raw).sum();
        raw(w) / z
    }

    /// `P(w | history)` for a text-order history of any length; only the
    /// last `order - 1` words matter.
    pub fn prob(&self, w: u32, history: &[u32]) -> f64 {
        let keep = history.len().min(self.order - 1);
        self.prob_m(w, &history[history.len() - keep..])
    }

    fn prob_m(&self, w: u32, h: &[u32]) -> f64 {
        if w == 0 {
            return 0.0;
        }
        if h.is_empty() {
            return self.unigram(w);
        }
        let m = h.len() + 1;
        let lower = |x: u32| self.prob_m(x, &h[1..]);
        let continuations: Vec<(u32, u64)> = (1..self.vocab as u32)
            .map(|x| {
                let mut g = h.to_vec();
                g.push(x);
                (x, self.count(&g))
            })
            .filter(|&(_, c)| c > 0)
            .collect();
        if continuations.is_empty() {
            return lower(w);
        }
        let total: u64 = continuations.iter().map(|c| c.1).sum();
        let p_seen = |r: u64| self.discounted(m, r) / total as f64;
        let seen_mass: f64 = continuations.iter().map(|&(_, r)| p_seen(r)).sum();
        if continuations.len() == self.vocab - 1 {
            let r = continuations.iter().find(|c| c.0 == w).unwrap().1;
            return p_seen(r) / seen_mass;
        }
        if let Some(&(_, r)) = continuations.iter().find(|c| c.0 == w) {
            return p_seen(r);
        }
        let lower_seen: f64 = continuations.iter().map(|&(x, _)| lower(x)).sum();
        (1.0 - seen_mass) / (1.0 - lower_seen) * lower(w)
    }
}
