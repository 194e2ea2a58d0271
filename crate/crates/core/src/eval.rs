//! Prediction and ranking metrics, level-wise KL divergence matrices and
//! expertise-stratified salient-word extraction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenizedReview;
use crate::error::{CoreError, Result};
use crate::model::ModelState;

/// Prediction quality and rank correlation over a scored test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse: f64,
    pub r_squared: f64,
    pub spearman: f64,
    pub kendall: f64,
    pub n_test: usize,
    /// Mean per-item rank correlations over items with at least two test
    /// reviews, when any exist.
    pub per_item: Option<PerItemRankings>,
    /// Test reviews scored without any in-vocabulary token.
    pub zero_token_reviews: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerItemRankings {
    pub spearman_mean: f64,
    pub kendall_mean: f64,
    pub items_ranked: usize,
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(CoreError::Eval(format!(
            "mse needs equal non-empty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let sum: f64 = pred
        .iter()
        .zip(truth.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        cov += (x - mean_a) * (y - mean_b);
        var_a += (x - mean_a) * (x - mean_a);
        var_b += (y - mean_b) * (y - mean_b);
    }
    if var_a == 0.0 || var_b == 0.0 {
        None
    } else {
        Some(cov / (var_a * var_b).sqrt())
    }
}

/// Squared Pearson correlation; 0 with a warning when either side has no variance.
pub fn r_squared(pred: &[f64], truth: &[f64]) -> f64 {
    match pearson(pred, truth) {
        Some(r) => r * r,
        None => {
            log::warn!("r_squared: zero variance, reporting 0");
            0.0
        }
    }
}

/// Average ranks, ties shared: e.g. values (10, 10, 5) -> ranks (2.5, 2.5, 1).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rho: Pearson correlation of average ranks. 0 with a warning when
/// either vector is entirely tied.
pub fn spearman(pred: &[f64], truth: &[f64]) -> f64 {
    debug_assert!(pred.len() == truth.len() && pred.len() >= 2);
    let ranks_p = average_ranks(pred);
    let ranks_t = average_ranks(truth);
    match pearson(&ranks_p, &ranks_t) {
        Some(r) => r,
        None => {
            log::warn!("spearman: an all-tied vector has no defined rank correlation, reporting 0");
            0.0
        }
    }
}

/// Kendall tau-a: (concordant - discordant) / C(n, 2); tied pairs count as neither.
pub fn kendall_tau(pred: &[f64], truth: &[f64]) -> f64 {
    debug_assert!(pred.len() == truth.len() && pred.len() >= 2);
    let n = pred.len();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let dp = pred[i] - pred[j];
            let dt = truth[i] - truth[j];
            let sign = dp * dt;
            if sign > 0.0 {
                concordant += 1;
            } else if sign < 0.0 {
                discordant += 1;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    (concordant - discordant) as f64 / pairs
}

/// Kendall tau-b: tie-corrected normalization.
pub fn kendall_tau_b(pred: &[f64], truth: &[f64]) -> f64 {
    let n = pred.len();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    let mut tied_p = 0i64;
    let mut tied_t = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let dp = pred[i] - pred[j];
            let dt = truth[i] - truth[j];
            if dp == 0.0 && dt == 0.0 {
                tied_p += 1;
                tied_t += 1;
            } else if dp == 0.0 {
                tied_p += 1;
            } else if dt == 0.0 {
                tied_t += 1;
            } else if dp * dt > 0.0 {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as i64;
    let denom = (((pairs - tied_p) as f64) * ((pairs - tied_t) as f64)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (concordant - discordant) as f64 / denom
    }
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q.iter())
        .map(|(&pi, &qi)| if pi > 0.0 { pi * (pi / qi).ln() } else { 0.0 })
        .sum()
}

/// Pairwise KL divergence across expertise levels, in nats.
///
/// The first matrix compares facet-preference rows of theta. The second
/// compares each level's joint facet-word distribution, i.e. the facet
/// mixture weighted by the level's theta row over the smoothed phi.
pub fn kl_matrices(state: &ModelState) -> (Vec<f64>, Vec<f64>) {
    let e_count = state.e_levels();
    let z_count = state.facets();
    let w_count = state.vocab_size();
    let theta_rows: Vec<&[f64]> = (0..e_count)
        .map(|e| &state.theta[e * z_count..(e + 1) * z_count])
        .collect();
    let mut theta_kl = vec![0.0; e_count * e_count];
    for i in 0..e_count {
        for j in 0..e_count {
            theta_kl[i * e_count + j] = kl(theta_rows[i], theta_rows[j]);
        }
    }

    let mut joint_rows: Vec<Vec<f64>> = Vec::with_capacity(e_count);
    for e in 0..e_count {
        let level = (e + 1) as u32;
        let mut row = Vec::with_capacity(z_count * w_count);
        for z in 0..z_count as u32 {
            let weight = state.theta_at(level, z);
            for w in 0..w_count as u32 {
                row.push(weight * state.phi(level, z, w));
            }
        }
        joint_rows.push(row);
    }
    let mut phi_kl = vec![0.0; e_count * e_count];
    for i in 0..e_count {
        for j in 0..e_count {
            phi_kl[i * e_count + j] = kl(&joint_rows[i], &joint_rows[j]);
        }
    }
    (theta_kl, phi_kl)
}

/// Ranked word lists for one partition of the corpus.
#[derive(Debug, Clone, Serialize)]
pub struct SalientCell {
    pub label: String,
    /// (word, contrast score), highest contrast first.
    pub words: Vec<(String, f64)>,
}

/// Contrasts each partition's word usage against the whole corpus.
///
/// Partitions cross expert (top level) vs amateur (level 1) with most vs
/// least helpful (top/bottom quartile of ground-truth helpfulness). The
/// contrast score is the smoothed log ratio of a word's observed partition
/// count to its corpus-share expectation, so a perfectly uniform corpus
/// scores zero everywhere.
pub fn salient_words(
    state: &ModelState,
    reviews: &[TokenizedReview],
    levels: &[u32],
    top_k: usize,
) -> Vec<SalientCell> {
    let e_top = state.e_levels() as u32;
    let w_count = state.vocab_size();
    let delta = state.hyper.delta;

    let mut h_sorted: Vec<f64> = reviews.iter().map(|r| r.helpfulness).collect();
    h_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |q: f64| h_sorted[((h_sorted.len() - 1) as f64 * q).floor() as usize];
    let (q1, q3) = (quantile(0.25), quantile(0.75));

    let mut global = vec![0u64; w_count];
    let mut global_total = 0u64;
    for review in reviews {
        for &w in &review.tokens {
            global[w as usize] += 1;
            global_total += 1;
        }
    }

    let cells: [(&str, u32, bool); 4] = [
        ("expert_most_helpful", e_top, true),
        ("expert_least_helpful", e_top, false),
        ("amateur_most_helpful", 1, true),
        ("amateur_least_helpful", 1, false),
    ];
    cells
        .iter()
        .map(|&(label, level, helpful)| {
            let mut counts = vec![0u64; w_count];
            let mut total = 0u64;
            for (review, &review_level) in reviews.iter().zip(levels.iter()) {
                let in_h = if helpful {
                    review.helpfulness >= q3
                } else {
                    review.helpfulness <= q1
                };
                if review_level != level || !in_h {
                    continue;
                }
                for &w in &review.tokens {
                    counts[w as usize] += 1;
                    total += 1;
                }
            }
            if total == 0 {
                log::warn!("salient_words: partition {label} is empty");
                return SalientCell {
                    label: label.to_string(),
                    words: Vec::new(),
                };
            }
            let mut scored: Vec<(u32, f64)> = (0..w_count as u32)
                .map(|w| {
                    let observed = counts[w as usize] as f64;
                    let expected = total as f64 * global[w as usize] as f64 / global_total as f64;
                    (w, ((observed + delta) / (expected + delta)).ln())
                })
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            scored.truncate(top_k.min(w_count));
            SalientCell {
                label: label.to_string(),
                words: scored
                    .into_iter()
                    .map(|(w, s)| (state.vocab.word(w).to_string(), s))
                    .collect(),
            }
        })
        .collect()
}

/// Pooled metrics plus optional per-item rank correlations.
pub fn evaluate(
    pred: &[f64],
    truth: &[f64],
    item_keys: &[u32],
    zero_token_reviews: u64,
) -> Result<EvalReport> {
    let pooled_mse = mse(pred, truth)?;
    if pred.len() < 2 {
        return Err(CoreError::Eval("need at least two test reviews to rank".into()));
    }
    let mut by_item: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &item) in item_keys.iter().enumerate() {
        by_item.entry(item).or_default().push(i);
    }
    let mut sp_sum = 0.0;
    let mut kt_sum = 0.0;
    let mut ranked = 0usize;
    for indices in by_item.values() {
        if indices.len() < 2 {
            continue;
        }
        let p: Vec<f64> = indices.iter().map(|&i| pred[i]).collect();
        let t: Vec<f64> = indices.iter().map(|&i| truth[i]).collect();
        let tied = t.iter().all(|&v| v == t[0]) || p.iter().all(|&v| v == p[0]);
        if tied {
            continue;
        }
        sp_sum += spearman(&p, &t);
        kt_sum += kendall_tau(&p, &t);
        ranked += 1;
    }
    let per_item = if ranked > 0 {
        Some(PerItemRankings {
            spearman_mean: sp_sum / ranked as f64,
            kendall_mean: kt_sum / ranked as f64,
            items_ranked: ranked,
        })
    } else {
        None
    };
    Ok(EvalReport {
        mse: pooled_mse,
        r_squared: r_squared(pred, truth),
        spearman: spearman(pred, truth),
        kendall: kendall_tau(pred, truth),
        n_test: pred.len(),
        per_item,
        zero_token_reviews,
    })
}
