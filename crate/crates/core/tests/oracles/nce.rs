//! Direct NCE loss from the raw parameter tensors, for finite differences.

use nngrams::model::ModelParams;
use nngrams::training::TrainingExample;

fn layer(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let outs = b.len();
    (0..outs)
        .map(|o| b[o] + x.iter().enumerate().map(|(i, xi)| xi * w[i * outs + o]).sum::<f64>())
        .collect()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Network score and the sign of every hidden pre-activation.
pub fn score(p: &ModelParams, ids: &[u32], counts: &[f64]) -> (f64, Vec<bool>) {
    let t: std::collections::HashMap<&str, &[f64]> = p.tensors().into_iter().collect();
    let mut merged = Vec::new();
    let mut signs = Vec::new();
    if let Some(e) = t.get("embeddings") {
        let d = p.config().embed_dim;
        let x: Vec<f64> = ids.iter().flat_map(|&id| e[id as usize * d..(id as usize + 1) * d].to_vec()).collect();
        merged.extend(layer(t["relu_a.weights"], t["relu_a.bias"], &x));
    }
    if let Some(w) = t.get("relu_b.weights") {
        merged.extend(layer(w, t["relu_b.bias"], counts));
    }
    signs.extend(merged.iter().map(|&v| v > 0.0));
    let merged: Vec<f64> = merged.into_iter().map(|v| v.max(0.0)).collect();
    let c = layer(t["relu_c.weights"], t["relu_c.bias"], &merged);
    signs.extend(c.iter().map(|&v| v > 0.0));
    let c: Vec<f64> = c.into_iter().map(|v| v.max(0.0)).collect();
    (layer(t["output.weights"], t["output.bias"], &c)[0], signs)
}

/// Mean binary-classification loss over the batch.
pub fn loss(p: &ModelParams, batch: &[TrainingExample]) -> (f64, Vec<bool>) {
    let mut total = 0.0;
    let mut signs = Vec::new();
    for ex in batch {
        let ln_f = (ex.noise.len() as f64).ln();
        let (s, sg) = score(p, &ex.target.word_ids, &ex.target.counts_rescaled);
        signs.extend(sg);
        total += softplus(-(s - ln_f - ex.target_log_noise_prob));
        for n in &ex.noise {
            let (s, sg) = score(p, &n.features.word_ids, &n.features.counts_rescaled);
            signs.extend(sg);
            total += softplus(s - ln_f - n.log_noise_prob);
        }
    }
    (total / batch.len() as f64, signs)
}

/// Largest relative error between `analytic` and central differences of
/// [`loss`], skipping coordinates whose perturbation crosses a ReLU kink.
/// Returns `(max error, coordinates compared)`.
pub fn max_relative_error(
    params: &ModelParams,
    batch: &[TrainingExample],
    analytic: &ModelParams,
    eps: f64,
) -> (f64, usize) {
    let (_, base) = loss(params, batch);
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.1.to_vec()).collect();
    let mut p = params.clone();
    let mut worst = 0.0f64;
    let mut compared = 0;
    for (ti, g) in grads.iter().enumerate() {
        for (i, &a) in g.iter().enumerate() {
            let x = p.tensors()[ti].1[i];
            p.tensors_mut()[ti].1[i] = x + eps;
            let (up, s_up) = loss(&p, batch);
            p.tensors_mut()[ti].1[i] = x - eps;
            let (down, s_down) = loss(&p, batch);
            p.tensors_mut()[ti].1[i] = x;
            if s_up != base || s_down != base {
                continue;
            }
            let n = (up - down) / (2.0 * eps);
            let scale = a.abs().max(n.abs());
            let err = if scale < 1e-8 { (a - n).abs() } else { (a - n).abs() / scale };
            worst = worst.max(err);
            compared += 1;
        }
    }
    (worst, compared)
}
