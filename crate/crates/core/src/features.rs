//! Observed consistency features: prior user/item reputation, rating
//! deviations and review timeliness, plus the per-user activity rates that
//! steer expertise transitions.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::corpus::TokenizedReview;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct UserStats {
    /// Mean helpfulness of the user's training reviews.
    pub beta_u: f64,
    pub mean_rating: f64,
    pub review_count: u64,
    /// D_u / (D_u + D_avg), strictly inside (0, 1).
    pub activity_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemStats {
    /// Mean helpfulness of the item's training reviews.
    pub beta_i: f64,
    pub mean_rating: f64,
    pub first_review_time: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalStats {
    pub mean_rating: f64,
    pub mean_posts_per_user: f64,
    pub mean_helpfulness: f64,
    pub rating_min: f64,
    pub rating_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsBundle {
    pub users: BTreeMap<u32, UserStats>,
    pub items: BTreeMap<u32, ItemStats>,
    pub global: GlobalStats,
}

/// Single pass over the training split producing user, item and global stats.
pub fn compute_stats(train: &[TokenizedReview]) -> Result<StatsBundle> {
    if train.is_empty() {
        return Err(CoreError::Corpus("cannot compute stats on an empty training split".into()));
    }
    struct Acc {
        h_sum: f64,
        r_sum: f64,
        n: u64,
        first_t: i64,
    }
    let mut users: BTreeMap<u32, Acc> = BTreeMap::new();
    let mut items: BTreeMap<u32, Acc> = BTreeMap::new();
    let mut r_sum = 0.0;
    let mut h_sum = 0.0;
    let mut r_min = f64::INFINITY;
    let mut r_max = f64::NEG_INFINITY;
    for review in train {
        for (map, key) in [(&mut users, review.user_key), (&mut items, review.item_key)] {
            let acc = map.entry(key).or_insert(Acc {
                h_sum: 0.0,
                r_sum: 0.0,
                n: 0,
                first_t: review.timestamp,
            });
            acc.h_sum += review.helpfulness;
            acc.r_sum += review.rating;
            acc.n += 1;
            acc.first_t = acc.first_t.min(review.timestamp);
        }
        r_sum += review.rating;
        h_sum += review.helpfulness;
        r_min = r_min.min(review.rating);
        r_max = r_max.max(review.rating);
    }
    let n = train.len() as f64;
    let d_avg = n / users.len() as f64;
    let users = users
        .into_iter()
        .map(|(key, acc)| {
            let d_u = acc.n as f64;
            (
                key,
                UserStats {
                    beta_u: acc.h_sum / d_u,
                    mean_rating: acc.r_sum / d_u,
                    review_count: acc.n,
                    activity_rate: d_u / (d_u + d_avg),
                },
            )
        })
        .collect();
    let items = items
        .into_iter()
        .map(|(key, acc)| {
            (
                key,
                ItemStats {
                    beta_i: acc.h_sum / acc.n as f64,
                    mean_rating: acc.r_sum / acc.n as f64,
                    first_review_time: acc.first_t,
                },
            )
        })
        .collect();
    Ok(StatsBundle {
        users,
        items,
        global: GlobalStats {
            mean_rating: r_sum / n,
            mean_posts_per_user: d_avg,
            mean_helpfulness: h_sum / n,
            rating_min: r_min,
            rating_max: r_max,
        },
    })
}

/// Early-bird decay exp(-(t - t0) / scale), clamped to 1 when the review
/// predates the item's first observed review.
pub fn timeliness(t: i64, t0: i64, scale: f64) -> f64 {
    debug_assert!(scale > 0.0);
    if t < t0 {
        log::warn!("timeliness: review timestamp {t} precedes item first review {t0}; clamping to 1");
        return 1.0;
    }
    (-((t - t0) as f64) / scale).exp()
}

/// The six consistency scalars plus the flattened expertise-facet block.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    /// [beta_u, beta_i, |r - r_u|, |r - r_i|, |r - r_g|, b_t]
    pub consistency: [f64; 6],
    /// E x Z facet proportions, row-major, zero outside the review's level.
    pub latent: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        6 + self.latent.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.consistency);
        out.extend_from_slice(&self.latent);
        out
    }
}

/// Consistency features for one review, with cold-start fallbacks: unseen
/// users borrow the background user's stats, unseen items fall back to
/// global means with b_t = 1.
pub fn consistency_features(
    review: &TokenizedReview,
    stats: &StatsBundle,
    background_user_key: u32,
    timeliness_scale: f64,
) -> [f64; 6] {
    let global = &stats.global;
    let user = stats
        .users
        .get(&review.user_key)
        .or_else(|| stats.users.get(&background_user_key));
    let (beta_u, mean_r_u) = match user {
        Some(u) => (u.beta_u, u.mean_rating),
        None => (global.mean_helpfulness, global.mean_rating),
    };
    let (beta_i, mean_r_i, b_t) = match stats.items.get(&review.item_key) {
        Some(i) => (
            i.beta_i,
            i.mean_rating,
            timeliness(review.timestamp, i.first_review_time, timeliness_scale),
        ),
        None => (global.mean_helpfulness, global.mean_rating, 1.0),
    };
    [
        beta_u,
        beta_i,
        (review.rating - mean_r_u).abs(),
        (review.rating - mean_r_i).abs(),
        (review.rating - global.mean_rating).abs(),
        b_t,
    ]
}

/// Assembles the full regression feature vector. `xi` must hold E*Z entries.
pub fn feature_vector(
    review: &TokenizedReview,
    stats: &StatsBundle,
    background_user_key: u32,
    xi: Vec<f64>,
    timeliness_scale: f64,
) -> FeatureVector {
    FeatureVector {
        consistency: consistency_features(review, stats, background_user_key, timeliness_scale),
        latent: xi,
    }
}

pub fn write_user_stats_tsv(path: &Path, stats: &StatsBundle) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "user_key\tbeta_u\tmean_rating\treview_count\tactivity_rate").unwrap();
    for (key, u) in &stats.users {
        writeln!(
            out,
            "{key}\t{}\t{}\t{}\t{}",
            u.beta_u, u.mean_rating, u.review_count, u.activity_rate
        )
        .unwrap();
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path, e))
}

pub fn write_item_stats_tsv(path: &Path, stats: &StatsBundle) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "item_key\tbeta_i\tmean_rating\tfirst_review_time").unwrap();
    for (key, i) in &stats.items {
        writeln!(out, "{key}\t{}\t{}\t{}", i.beta_i, i.mean_rating, i.first_review_time).unwrap();
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path, e))
}

pub fn write_global_stats_tsv(path: &Path, stats: &StatsBundle) -> Result<()> {
    let g = &stats.global;
    let body = format!(
        "mean_rating\tmean_posts_per_user\tmean_helpfulness\trating_min\trating_max\n{}\t{}\t{}\t{}\t{}\n",
        g.mean_rating, g.mean_posts_per_user, g.mean_helpfulness, g.rating_min, g.rating_max
    );
    std::fs::write(path, body).map_err(|e| CoreError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tr(user: u32, item: u32, rating: f64, t: i64, h: f64) -> TokenizedReview {
        TokenizedReview {
            review_index: 0,
            user_key: user,
            item_key: item,
            tokens: vec![0],
            rating,
            timestamp: t,
            helpfulness: h,
        }
    }

    #[test]
    fn stats_means() {
        let train = vec![
            tr(1, 1, 4.0, 10, 0.5),
            tr(1, 2, 5.0, 20, 1.0),
            tr(2, 1, 3.0, 5, 0.25),
            tr(2, 2, 2.0, 30, 0.75),
        ];
        let stats = compute_stats(&train).unwrap();
        assert_relative_eq!(stats.users[&1].beta_u, 0.75);
        assert_relative_eq!(stats.users[&1].mean_rating, 4.5);
        // D_u = D_avg = 2 -> activity rate 0.5
        assert_relative_eq!(stats.users[&1].activity_rate, 0.5);
        assert_relative_eq!(stats.items[&1].mean_rating, 3.5);
        assert_eq!(stats.items[&1].first_review_time, 5);
        assert_relative_eq!(stats.global.mean_rating, 3.5);
    }

    #[test]
    fn stats_single_item_single_review() {
        let train = vec![tr(1, 7, 4.0, 42, 0.5)];
        let stats = compute_stats(&train).unwrap();
        assert_relative_eq!(stats.items[&7].mean_rating, 4.0);
        assert_eq!(stats.items[&7].first_review_time, 42);
    }

    #[test]
    fn timeliness_closed_forms() {
        assert_relative_eq!(timeliness(100, 100, 10.0), 1.0);
        assert_relative_eq!(timeliness(110, 100, 10.0), (-1.0f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(timeliness(200, 100, 10.0), (-10.0f64).exp(), epsilon = 1e-12);
        assert!((timeliness(200, 100, 10.0) - 4.54e-5).abs() < 1e-6);
        // review older than the item's first observed review clamps to 1
        assert_relative_eq!(timeliness(90, 100, 10.0), 1.0);
    }

    #[test]
    fn feature_vector_deviations_and_cold_start() {
        let train = vec![
            tr(1, 1, 5.0, 10, 0.6),
            tr(1, 1, 5.0, 20, 0.6),
            tr(2, 2, 4.0, 10, 0.6),
            tr(2, 2, 5.0, 20, 0.6),
        ];
        let stats = compute_stats(&train).unwrap();

        let same_rating = tr(1, 1, 5.0, 30, 0.0);
        let f = consistency_features(&same_rating, &stats, 0, 1e9);
        assert_relative_eq!(f[2], 0.0); // r == mean user rating

        let mut deviant = tr(2, 2, 1.0, 30, 0.0);
        deviant.rating = 1.0;
        let f = consistency_features(&deviant, &stats, 0, 1e9);
        assert_relative_eq!(f[3], 3.5); // |1 - 4.5|

        // unseen item: beta_i and mean rating fall back to global, b_t = 1
        let unseen_item = tr(1, 99, 3.0, 30, 0.0);
        let f = consistency_features(&unseen_item, &stats, 0, 1e9);
        assert_relative_eq!(f[1], 0.6);
        assert_relative_eq!(f[5], 1.0);

        // unseen user without a background entry: global fallback
        let unseen_user = tr(99, 1, 3.0, 30, 0.0);
        let f = consistency_features(&unseen_user, &stats, 0, 1e9);
        assert_relative_eq!(f[0], 0.6);
    }

    #[test]
    fn beta_bounds_on_training_reviews() {
        let train: Vec<TokenizedReview> = (0..20)
            .map(|i| tr(i % 3, i % 4, (i % 5) as f64 + 1.0, i as i64, (i % 5) as f64 / 4.0))
            .collect();
        let stats = compute_stats(&train).unwrap();
        for u in stats.users.values() {
            assert!((0.0..=1.0).contains(&u.beta_u));
            assert!(u.activity_rate > 0.0 && u.activity_rate < 1.0);
        }
        for i in stats.items.values() {
            assert!((0.0..=1.0).contains(&i.beta_i));
        }
    }

    proptest! {
        #[test]
        fn timeliness_monotone_and_bounded(dt1 in 0i64..10_000_000, dt2 in 0i64..10_000_000, scale in 1.0f64..1e9) {
            let (lo, hi) = if dt1 <= dt2 { (dt1, dt2) } else { (dt2, dt1) };
            let b_lo = timeliness(lo, 0, scale);
            let b_hi = timeliness(hi, 0, scale);
            prop_assert!(b_hi <= b_lo);
            prop_assert!(b_lo <= 1.0 && b_lo > 0.0);
            prop_assert!(b_hi <= 1.0 && b_hi > 0.0);
        }
    }
}
