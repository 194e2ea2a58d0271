//! Forward simulation of the generative process with known ground-truth
//! tensors, used for recovery and property testing. Expertise trajectories
//! evolve by stay-or-advance draws, tokens come from the level's facet
//! preferences and facet-word distributions, and helpfulness is the linear
//! feature score under the ground-truth weights plus Gaussian noise.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::corpus::{CorpusSplit, TokenizedReview, Vocabulary, BACKGROUND_USER_KEY};
use crate::error::{CoreError, Result};
use crate::features::timeliness;
use crate::model::PsiWeights;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub e_levels: usize,
    pub facets: usize,
    pub vocab_size: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub reviews_per_user: usize,
    pub doc_length: usize,
    /// E x Z rows on the simplex.
    pub true_theta: Vec<f64>,
    /// E x Z x W rows on the simplex.
    pub true_phi: Vec<f64>,
    /// E x E rows on the simplex with mass only on stay/advance cells.
    pub true_pi: Vec<f64>,
    pub psi_star: PsiWeights,
    pub noise_sigma: f64,
    pub seed: u64,
    pub timeliness_scale: f64,
    /// Most recent reviews withheld per user.
    pub test_per_user: usize,
}

/// Everything the generator knows that a learner is asked to recover.
#[derive(Debug, Clone, Serialize)]
pub struct GroundTruth {
    /// True expertise level per review, in generation order.
    pub expertise: Vec<u32>,
    /// True facet per token per review.
    pub facets: Vec<Vec<u32>>,
    /// The exact feature rows (6 + E*Z) the scores were drawn from.
    pub features: Vec<Vec<f64>>,
    /// Linear score + noise before clamping.
    pub raw_scores: Vec<f64>,
    pub true_theta: Vec<f64>,
    pub true_phi: Vec<f64>,
    pub true_pi: Vec<f64>,
    pub psi_consistency: Vec<f64>,
    pub psi_xi: Vec<f64>,
    pub psi_bias: f64,
}

pub struct SynthOutput {
    pub split: CorpusSplit,
    pub vocab: Vocabulary,
    pub truth: GroundTruth,
}

fn check_simplex(name: &str, rows: &[f64], row_len: usize) -> Result<()> {
    for (i, row) in rows.chunks(row_len).enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&v| v < 0.0) {
            return Err(CoreError::Config(format!(
                "{name} row {i} is not on the simplex (sum {sum})"
            )));
        }
    }
    Ok(())
}

fn validate(cfg: &SynthConfig) -> Result<()> {
    let (e, z, w) = (cfg.e_levels, cfg.facets, cfg.vocab_size);
    if cfg.true_theta.len() != e * z || cfg.true_phi.len() != e * z * w || cfg.true_pi.len() != e * e {
        return Err(CoreError::Config("ground-truth tensor shapes disagree with the dimensions".into()));
    }
    check_simplex("true_theta", &cfg.true_theta, z)?;
    check_simplex("true_phi", &cfg.true_phi, w)?;
    check_simplex("true_pi", &cfg.true_pi, e)?;
    for from in 0..e {
        for to in 0..e {
            let allowed = to == from || to == from + 1;
            if !allowed && cfg.true_pi[from * e + to] != 0.0 {
                return Err(CoreError::Config(format!(
                    "true_pi allows a jump from level {} to {}",
                    from + 1,
                    to + 1
                )));
            }
        }
    }
    if cfg.psi_star.xi.len() != e * z {
        return Err(CoreError::Config("psi_star xi block does not match E*Z".into()));
    }
    if cfg.n_users == 0 || cfg.reviews_per_user == 0 || cfg.doc_length == 0 || cfg.n_items == 0 {
        return Err(CoreError::Config("synthetic corpus dimensions must be positive".into()));
    }
    if cfg.test_per_user >= cfg.reviews_per_user {
        return Err(CoreError::Config("test_per_user must leave training reviews".into()));
    }
    Ok(())
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Facet proportions of a token list at one level under the ground-truth
/// word distributions, placed in row `level` of an E x Z block.
fn true_xi(cfg: &SynthConfig, tokens: &[u32], level: u32) -> Vec<f64> {
    let (e, z_count, w) = (cfg.e_levels, cfg.facets, cfg.vocab_size);
    let mut xi = vec![0.0; e * z_count];
    let row = &mut xi[(level - 1) as usize * z_count..level as usize * z_count];
    let mut sum = 0.0;
    for z in 0..z_count {
        let base = ((level - 1) as usize * z_count + z) * w;
        let s: f64 = tokens.iter().map(|&t| cfg.true_phi[base + t as usize]).sum();
        row[z] = s;
        sum += s;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    xi
}

struct RawSynthReview {
    user: usize,
    item: usize,
    rating: f64,
    timestamp: i64,
    tokens: Vec<u32>,
    level: u32,
    facets: Vec<u32>,
}

/// Runs the generative process and returns an in-memory split (last
/// `test_per_user` reviews of each user withheld) plus the ground truth.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    validate(cfg)?;
    let (e_count, z_count, w_count) = (cfg.e_levels, cfg.facets, cfg.vocab_size);
    let base_time = 1_000_000_000i64;
    let spacing = 86_400i64;

    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let beta_u: Vec<f64> = (0..cfg.n_users).map(|_| 0.2 + 0.6 * master.random::<f64>()).collect();
    let beta_i: Vec<f64> = (0..cfg.n_items).map(|_| 0.2 + 0.6 * master.random::<f64>()).collect();

    let mut reviews: Vec<RawSynthReview> = Vec::with_capacity(cfg.n_users * cfg.reviews_per_user);
    for user in 0..cfg.n_users {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ splitmix(user as u64 + 1));
        let mut level = 1u32;
        for k in 0..cfg.reviews_per_user {
            if k > 0 && (level as usize) < e_count {
                let advance = cfg.true_pi[(level as usize - 1) * e_count + level as usize];
                if rng.random::<f64>() < advance {
                    level += 1;
                }
            }
            let theta_row = &cfg.true_theta[(level as usize - 1) * z_count..level as usize * z_count];
            let mut tokens = Vec::with_capacity(cfg.doc_length);
            let mut facets = Vec::with_capacity(cfg.doc_length);
            for _ in 0..cfg.doc_length {
                let z = sample_categorical(&mut rng, theta_row);
                let base = ((level as usize - 1) * z_count + z) * w_count;
                let w = sample_categorical(&mut rng, &cfg.true_phi[base..base + w_count]);
                facets.push(z as u32);
                tokens.push(w as u32);
            }
            reviews.push(RawSynthReview {
                user,
                item: rng.random_range(0..cfg.n_items),
                rating: 1.0 + rng.random_range(0..5) as f64,
                timestamp: base_time + (k as i64 * cfg.n_users as i64 + user as i64) * spacing,
                tokens,
                level,
                facets,
            });
        }
    }

    // Observable rating statistics over the full corpus.
    let mut user_r = vec![(0.0, 0u64); cfg.n_users];
    let mut item_r = vec![(0.0, 0u64); cfg.n_items];
    let mut item_t0 = vec![i64::MAX; cfg.n_items];
    let mut global_r = 0.0;
    for r in &reviews {
        user_r[r.user].0 += r.rating;
        user_r[r.user].1 += 1;
        item_r[r.item].0 += r.rating;
        item_r[r.item].1 += 1;
        item_t0[r.item] = item_t0[r.item].min(r.timestamp);
        global_r += r.rating;
    }
    let mean_r_g = global_r / reviews.len() as f64;

    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA5A5_5A5A_DEAD_BEEF);
    let mut truth = GroundTruth {
        expertise: Vec::with_capacity(reviews.len()),
        facets: Vec::with_capacity(reviews.len()),
        features: Vec::with_capacity(reviews.len()),
        raw_scores: Vec::with_capacity(reviews.len()),
        true_theta: cfg.true_theta.clone(),
        true_phi: cfg.true_phi.clone(),
        true_pi: cfg.true_pi.clone(),
        psi_consistency: cfg.psi_star.consistency.to_vec(),
        psi_xi: cfg.psi_star.xi.clone(),
        psi_bias: cfg.psi_star.bias,
    };
    let mut scored: Vec<TokenizedReview> = Vec::with_capacity(reviews.len());
    for (index, r) in reviews.iter().enumerate() {
        let mean_r_u = user_r[r.user].0 / user_r[r.user].1 as f64;
        let mean_r_i = item_r[r.item].0 / item_r[r.item].1 as f64;
        let b_t = timeliness(r.timestamp, item_t0[r.item], cfg.timeliness_scale);
        let xi = true_xi(cfg, &r.tokens, r.level);
        let mut features = vec![
            beta_u[r.user],
            beta_i[r.item],
            (r.rating - mean_r_u).abs(),
            (r.rating - mean_r_i).abs(),
            (r.rating - mean_r_g).abs(),
            b_t,
        ];
        features.extend_from_slice(&xi);
        let mut score = cfg.psi_star.bias;
        for (w, f) in cfg.psi_star.consistency.iter().chain(cfg.psi_star.xi.iter()).zip(features.iter()) {
            score += w * f;
        }
        let noise: f64 = if cfg.noise_sigma > 0.0 {
            cfg.noise_sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut noise_rng)
        } else {
            0.0
        };
        let raw = score + noise;
        truth.expertise.push(r.level);
        truth.facets.push(r.facets.clone());
        truth.features.push(features);
        truth.raw_scores.push(raw);
        scored.push(TokenizedReview {
            review_index: index as u64,
            user_key: r.user as u32 + 1, // key 0 stays reserved for the background user
            item_key: r.item as u32,
            tokens: r.tokens.clone(),
            rating: r.rating,
            timestamp: r.timestamp,
            helpfulness: raw.clamp(0.0, 1.0),
        });
    }

    // Withhold each user's most recent reviews.
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, review) in scored.into_iter().enumerate() {
        let k = i % cfg.reviews_per_user;
        if k >= cfg.reviews_per_user - cfg.test_per_user {
            test.push(review);
        } else {
            train.push(review);
        }
    }
    train.sort_by_key(|r| (r.timestamp, r.review_index));
    test.sort_by_key(|r| (r.timestamp, r.review_index));

    let mut df = vec![0u32; w_count];
    for r in train.iter().chain(test.iter()) {
        let mut seen = vec![false; w_count];
        for &t in &r.tokens {
            if !seen[t as usize] {
                seen[t as usize] = true;
                df[t as usize] += 1;
            }
        }
    }
    let vocab = Vocabulary::from_entries(
        (0..w_count).map(|i| (format!("w{i:05}"), df[i])).collect(),
    );

    Ok(SynthOutput {
        split: CorpusSplit {
            train,
            test,
            background_user_key: BACKGROUND_USER_KEY,
            dropped_counts: BTreeMap::new(),
        },
        vocab,
        truth,
    })
}

/// Blockwise well-separated ground truth: each (level, facet) cell owns a
/// disjoint span of `words_per_cell` words with geometrically decaying
/// probabilities, so top words identify cells uniquely.
pub fn well_separated_config(
    e_levels: usize,
    facets: usize,
    words_per_cell: usize,
    n_users: usize,
    reviews_per_user: usize,
    doc_length: usize,
    seed: u64,
) -> SynthConfig {
    let vocab_size = e_levels * facets * words_per_cell;
    let mut true_phi = vec![0.0; e_levels * facets * vocab_size];
    for cell in 0..e_levels * facets {
        let row = &mut true_phi[cell * vocab_size..(cell + 1) * vocab_size];
        let start = cell * words_per_cell;
        let decay: f64 = 0.7;
        let norm: f64 = (0..words_per_cell).map(|i| decay.powi(i as i32)).sum();
        for i in 0..words_per_cell {
            row[start + i] = decay.powi(i as i32) / norm;
        }
    }
    // mild per-level tilt over facets, away from uniform
    let mut true_theta = vec![0.0; e_levels * facets];
    for e in 0..e_levels {
        let weights: Vec<f64> = (0..facets)
            .map(|z| 1.0 + 0.5 * (((e + z) % facets) as f64 / facets as f64))
            .collect();
        let sum: f64 = weights.iter().sum();
        for z in 0..facets {
            true_theta[e * facets + z] = weights[z] / sum;
        }
    }
    let mut true_pi = vec![0.0; e_levels * e_levels];
    for e in 0..e_levels {
        if e + 1 < e_levels {
            true_pi[e * e_levels + e] = 0.7;
            true_pi[e * e_levels + e + 1] = 0.3;
        } else {
            true_pi[e * e_levels + e] = 1.0;
        }
    }
    let mut psi_xi = vec![0.0; e_levels * facets];
    for e in 0..e_levels {
        for z in 0..facets {
            let sign = if (e + z) % 2 == 0 { 1.0 } else { -1.0 };
            psi_xi[e * facets + z] = sign * (0.10 + 0.05 * (z as f64 + 1.0) / facets as f64);
        }
    }
    SynthConfig {
        e_levels,
        facets,
        vocab_size,
        n_users,
        n_items: (n_users / 2).max(2),
        reviews_per_user,
        doc_length,
        true_theta,
        true_phi,
        true_pi,
        psi_star: PsiWeights {
            bias: 0.45,
            consistency: [0.10, 0.10, -0.05, -0.05, -0.02, 0.05],
            xi: psi_xi,
        },
        noise_sigma: 0.05,
        seed,
        timeliness_scale: 365.25 * 86_400.0,
        test_per_user: 2,
    }
}

/// Serializable echo of the corpus for the `simulate` CLI: a reviews.jsonl
/// in the default ingestion schema plus ground_truth.json. Helpfulness is
/// quantized to x-of-10000 votes so the scores survive the vote encoding.
pub fn write_jsonl(dir: &Path, cfg: &SynthConfig) -> Result<()> {
    let output = generate(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let path = dir.join("reviews.jsonl");
    let mut out = Vec::new();
    let mut all: Vec<&TokenizedReview> = output.split.train.iter().chain(output.split.test.iter()).collect();
    all.sort_by_key(|r| r.review_index);
    for r in all {
        let text: Vec<String> = r.tokens.iter().map(|&t| output.vocab.word(t).to_string()).collect();
        let helpful = (r.helpfulness * 10_000.0).round() as u64;
        let line = serde_json::json!({
            "user": format!("u{:05}", r.user_key),
            "item": format!("i{:05}", r.item_key),
            "rating": r.rating,
            "time": r.timestamp,
            "text": text.join(" "),
            "helpful": [helpful, 10_000],
        });
        writeln!(out, "{line}").map_err(|e| CoreError::io(&path, e))?;
    }
    std::fs::write(&path, out).map_err(|e| CoreError::io(&path, e))?;
    let truth_path = dir.join("ground_truth.json");
    let body = serde_json::to_string(&output.truth)
        .map_err(|e| CoreError::Corpus(format!("serialize ground truth: {e}")))?;
    std::fs::write(&truth_path, body).map_err(|e| CoreError::io(&truth_path, e))
}
