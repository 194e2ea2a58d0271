//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! The oracles here are written from scratch against the raw data so a
//! bookkeeping bug in the incremental samplers cannot hide itself.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use helprank_core::config::Config;
use helprank_core::corpus::{CorpusSplit, TokenizedReview, Vocabulary};
use helprank_core::eval;
use helprank_core::features::{compute_stats, consistency_features};
use helprank_core::inference::{fit_regression, Predictor, Trainer};
use helprank_core::model::{Assignments, HyperParams, PsiWeights};
use helprank_core::oracle::{gd_minimize, solve_normal_equations, RidgeProblem};
use helprank_core::pipeline;
use helprank_core::snapshot;
use helprank_core::synth::{generate, well_separated_config, SynthConfig};

fn criterion<F>(n: usize, desc: &str, body: F)
where
    F: FnOnce() + std::panic::UnwindSafe,
{
    let result = std::panic::catch_unwind(body);
    match &result {
        Ok(()) => println!("criterion {n:>2} PASS  {desc}"),
        Err(_) => println!("criterion {n:>2} FAIL  {desc}"),
    }
    if let Err(payload) = result {
        std::panic::resume_unwind(payload);
    }
}

fn hyper(e: usize, z: usize, seed: u64) -> HyperParams {
    HyperParams {
        e_levels: e,
        facets: z,
        seed,
        ..HyperParams::default()
    }
}

fn vocab(w: usize) -> Vocabulary {
    Vocabulary::from_entries((0..w).map(|i| (format!("w{i:05}"), 1)).collect())
}

fn split_from(reviews: Vec<(u32, Vec<u32>, i64, f64)>) -> CorpusSplit {
    let train = reviews
        .into_iter()
        .enumerate()
        .map(|(i, (user, tokens, timestamp, helpfulness))| TokenizedReview {
            review_index: i as u64,
            user_key: user,
            item_key: (i % 3) as u32,
            tokens,
            rating: 1.0 + (i % 5) as f64,
            timestamp,
            helpfulness,
        })
        .collect();
    CorpusSplit {
        train,
        test: vec![],
        background_user_key: 0,
        dropped_counts: BTreeMap::new(),
    }
}

fn softmax_rows(xi: &[f64], e: usize, z: usize) -> Vec<f64> {
    let mut out = vec![0.0; e * z];
    for level in 0..e {
        let row = &xi[level * z..(level + 1) * z];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (k, &x) in exps.iter().enumerate() {
            out[level * z + k] = x / sum;
        }
    }
    out
}

/// Random monotone trajectories and facet labels for a split.
fn random_assignments(
    split: &CorpusSplit,
    e_levels: u32,
    facets: u32,
    rng: &mut ChaCha8Rng,
) -> Assignments {
    let mut expertise = vec![1u32; split.train.len()];
    for chain in split.user_chains() {
        let mut level = 1u32;
        for idx in chain {
            if level < e_levels && rng.random::<f64>() < 0.4 {
                level += 1;
            }
            expertise[idx] = level;
        }
    }
    let facet_labels = split
        .train
        .iter()
        .map(|r| r.tokens.iter().map(|_| rng.random_range(0..facets)).collect())
        .collect();
    Assignments {
        facets: facet_labels,
        expertise,
    }
}

#[test]
fn acceptance_01_gibbs_conditional_oracle() {
    criterion(1, "facet conditional matches brute-force enumeration", || {
        let start = Instant::now();
        let split = split_from(vec![
            (1, vec![0, 3, 7, 2], 10, 0.4),
            (1, vec![5, 5, 9], 20, 0.9),
            (2, vec![1, 8, 4, 6, 0], 15, 0.2),
        ]);
        let (e_levels, facets, w_count) = (2usize, 3usize, 10usize);
        let mut trainer = Trainer::new(&split, vocab(w_count), &hyper(e_levels, facets, 17)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9001);
        let assignments = random_assignments(&split, e_levels as u32, facets as u32, &mut rng);
        trainer.set_assignments(assignments.clone()).unwrap();
        let mut psi = PsiWeights::zeros(e_levels, facets);
        for v in psi.xi.iter_mut() {
            *v = rng.random::<f64>() * 2.0 - 1.0;
        }
        trainer.set_psi(psi.clone());

        // independent route: softmax of the psi block times the smoothed
        // word factor, with the token's own count removed
        let theta = softmax_rows(&psi.xi, e_levels, facets);
        let state = trainer.state();
        let delta = state.hyper.delta;
        let mut max_diff = 0.0f64;
        for (r, review) in split.train.iter().enumerate() {
            for (j, &w) in review.tokens.iter().enumerate() {
                let level = assignments.expertise[r] as usize;
                let current = assignments.facets[r][j];
                let mut expected = Vec::with_capacity(facets);
                let mut sum = 0.0;
                for k in 0..facets as u32 {
                    let excl = u64::from(k == current);
                    let n = state.word_counts[state.wc_index(level as u32, k, w)] - excl;
                    let total = state.word_row_totals[state.row_index(level as u32, k)] - excl;
                    let term = theta[(level - 1) * facets + k as usize]
                        * (n as f64 + delta)
                        / (total as f64 + w_count as f64 * delta);
                    expected.push(term);
                    sum += term;
                }
                for e in expected.iter_mut() {
                    *e /= sum;
                }
                let got = trainer.facet_conditional_for_token(r, j);
                assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for (g, e) in got.iter().zip(expected.iter()) {
                    max_diff = max_diff.max((g - e).abs());
                }
            }
        }
        assert!(max_diff < 1e-12, "max abs diff {max_diff}");
        assert!(start.elapsed().as_secs_f64() < 1.0);
    });
}

/// Brute-force evaluation of the expertise conditional from raw data:
/// transition and word counts rebuilt from scratch with the review under
/// update excluded, candidates scored in log space.
#[allow(clippy::too_many_arguments)]
fn expertise_oracle_argmax(
    split: &CorpusSplit,
    assignments: &Assignments,
    psi_xi: &[f64],
    e_levels: usize,
    facets: usize,
    w_count: usize,
    delta: f64,
    review: usize,
) -> u32 {
    // activity rate of the review's user
    let mut per_user: BTreeMap<u32, u64> = BTreeMap::new();
    for r in &split.train {
        *per_user.entry(r.user_key).or_insert(0) += 1;
    }
    let d_avg = split.train.len() as f64 / per_user.len() as f64;
    let user = split.train[review].user_key;
    let d_u = per_user[&user] as f64;
    let gamma = d_u / (d_u + d_avg);

    // predecessor level and full transition counts minus the incoming pair
    let chains = split.user_chains();
    let chain = &chains[user as usize];
    let pos = chain.iter().position(|&i| i == review).unwrap();
    let prev = if pos == 0 {
        1
    } else {
        assignments.expertise[chain[pos - 1]]
    };
    let mut trans = vec![0i64; e_levels * e_levels];
    for chain in &chains {
        let mut from = 1u32;
        for &idx in chain {
            let to = assignments.expertise[idx];
            if idx != review {
                trans[(from - 1) as usize * e_levels + (to - 1) as usize] += 1;
            }
            from = to;
        }
    }

    // word counts over everything except the review's own tokens
    let mut counts = vec![0i64; e_levels * facets * w_count];
    let mut totals = vec![0i64; e_levels * facets];
    for (i, r) in split.train.iter().enumerate() {
        if i == review {
            continue;
        }
        let level = assignments.expertise[i] as usize;
        for (j, &w) in r.tokens.iter().enumerate() {
            let z = assignments.facets[i][j] as usize;
            counts[((level - 1) * facets + z) * w_count + w as usize] += 1;
            totals[(level - 1) * facets + z] += 1;
        }
    }

    let theta = softmax_rows(psi_xi, e_levels, facets);
    let score = |candidate: u32| -> f64 {
        let ind = if candidate == prev { 1.0 } else { 0.0 };
        let row = (prev - 1) as usize * e_levels;
        let n_ab = trans[row + (candidate - 1) as usize] as f64;
        let n_a: i64 = trans[row..row + e_levels].iter().sum();
        let mut s = ((n_ab + ind + gamma) / (n_a as f64 + ind + e_levels as f64 * gamma)).ln();
        for (j, &w) in split.train[review].tokens.iter().enumerate() {
            let z = assignments.facets[review][j] as usize;
            let cell = (candidate as usize - 1) * facets + z;
            s += theta[cell].ln();
            s += ((counts[cell * w_count + w as usize] as f64 + delta)
                / (totals[cell] as f64 + w_count as f64 * delta))
                .ln();
        }
        s
    };
    let stay = score(prev);
    if (prev as usize) < e_levels {
        let advance = score(prev + 1);
        if advance > stay {
            return prev + 1;
        }
    }
    prev
}

#[test]
fn acceptance_02_expertise_update_oracle() {
    criterion(2, "expertise argmax matches exhaustive evaluation on 1000 random instances", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(0xE0);
        for instance in 0..1000u64 {
            let e_levels = 2 + (instance % 3) as usize; // 2..4
            let facets = 2 + (instance % 2) as usize;
            let w_count = 4 + (instance % 5) as usize;
            let n_users = 2 + (instance % 3) as usize;
            let reviews_per_user = 2 + (instance % 4) as usize;
            let mut reviews = Vec::new();
            for u in 0..n_users {
                for k in 0..reviews_per_user {
                    let len = 1 + rng.random_range(0..5usize);
                    let tokens = (0..len).map(|_| rng.random_range(0..w_count as u32)).collect();
                    reviews.push((
                        (u + 1) as u32,
                        tokens,
                        (k * n_users + u) as i64,
                        rng.random::<f64>(),
                    ));
                }
            }
            let split = split_from(reviews);
            let mut trainer =
                Trainer::new(&split, vocab(w_count), &hyper(e_levels, facets, instance)).unwrap();
            let assignments = random_assignments(&split, e_levels as u32, facets as u32, &mut rng);
            trainer.set_assignments(assignments.clone()).unwrap();
            let mut psi = PsiWeights::zeros(e_levels, facets);
            for v in psi.xi.iter_mut() {
                *v = rng.random::<f64>() * 2.0 - 1.0;
            }
            trainer.set_psi(psi.clone());

            let review = rng.random_range(0..split.train.len());
            let expected = expertise_oracle_argmax(
                &split,
                &assignments,
                &psi.xi,
                e_levels,
                facets,
                w_count,
                trainer.state().hyper.delta,
                review,
            );
            let got = trainer.update_expertise_at(review);
            assert_eq!(got, expected, "instance {instance}, review {review}");
            assert!(trainer.counts_consistent(), "instance {instance}");
        }
        assert!(start.elapsed().as_secs_f64() < 5.0);
    });
}

#[test]
fn acceptance_03_regression_oracle() {
    criterion(3, "ridge fit agrees with the elimination oracle, beats GD, gradient checks out", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x03);
        let mus = [0.0, 0.01, 0.1, 1.0];
        for instance in 0..100usize {
            let n = 20 + rng.random_range(0..481usize); // 20..=500
            let p = 1 + rng.random_range(0..60usize); // 1..=60
            let n = n.max(p + 5);
            let w_true: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..p).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
                .collect();
            let y: Vec<f64> = rows
                .iter()
                .map(|row| {
                    let dot: f64 = row.iter().zip(w_true.iter()).map(|(a, b)| a * b).sum();
                    dot + 0.05 * (rng.random::<f64>() - 0.5)
                })
                .collect();
            let mu = mus[instance % mus.len()];
            let (w, _) = fit_regression(&rows, &y, mu).unwrap();
            let augmented: Vec<Vec<f64>> = rows
                .iter()
                .map(|row| {
                    let mut a = row.clone();
                    a.push(1.0);
                    a
                })
                .collect();
            let reference =
                solve_normal_equations(&augmented, &y, mu * n as f64, Some(p)).unwrap();
            let max_diff = w
                .iter()
                .zip(reference.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_diff < 1e-8, "instance {instance}: max-norm {max_diff}");
        }

        // closed-form objective never loses to gradient descent
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 40;
            let p = 4;
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let mut row: Vec<f64> =
                        (0..p).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                    row.push(1.0);
                    row
                })
                .collect();
            let y: Vec<f64> = rows.iter().map(|r| r[0] * 0.4 - r[1] * 0.2 + 0.3).collect();
            let mu = 0.05;
            let problem = RidgeProblem { x: &rows, y: &y, mu, intercept: Some(p) };
            let closed = solve_normal_equations(&rows, &y, mu * n as f64, Some(p)).unwrap();
            let descended = gd_minimize(&problem, 4000, 0.1).unwrap();
            assert!(problem.objective(&closed) <= problem.objective(&descended) + 1e-6);

            // analytic gradient vs central finite differences
            let point: Vec<f64> = (0..=p).map(|_| rng.random::<f64>() - 0.5).collect();
            let grad = problem.gradient(&point);
            let step = 1e-5;
            for i in 0..=p {
                let mut lo = point.clone();
                let mut hi = point.clone();
                lo[i] -= step;
                hi[i] += step;
                let fd = (problem.objective(&hi) - problem.objective(&lo)) / (2.0 * step);
                let rel = (grad[i] - fd).abs() / grad[i].abs().max(1.0);
                assert!(rel < 1e-6, "seed {seed} component {i}: rel {rel}");
            }
        }
    });
}

#[test]
fn acceptance_04_count_consistency_over_training() {
    criterion(4, "incremental counts equal a full recount after every sweep (30 iterations)", || {
        let cfg = well_separated_config(2, 3, 8, 100, 12, 20, 0xC4);
        let output = generate(&cfg).unwrap();
        assert_eq!(output.split.train.len(), 1000);
        let mut h = hyper(2, 3, 0xC4);
        h.mu = 0.01;
        let mut trainer = Trainer::new(&output.split, output.vocab, &h).unwrap();
        for _ in 0..30 {
            trainer.sweep_expertise();
            let rc = trainer.recount();
            assert_eq!(rc.word_counts, trainer.state().word_counts);
            assert_eq!(rc.word_row_totals, trainer.state().word_row_totals);
            assert_eq!(rc.transition_counts, trainer.state().transition_counts);
            trainer.sweep_facets();
            let rc = trainer.recount();
            assert_eq!(rc.word_counts, trainer.state().word_counts);
            assert_eq!(rc.word_row_totals, trainer.state().word_row_totals);
            assert_eq!(rc.transition_counts, trainer.state().transition_counts);
            let xis = trainer.estimate_xi();
            trainer.fit_psi(&xis).unwrap();
            trainer.refresh_theta();
        }
    });
}

#[test]
fn acceptance_05_monotone_expertise() {
    criterion(5, "trajectories stay monotone with unit steps; everyone starts at level 1", || {
        let cfg = well_separated_config(3, 3, 8, 60, 10, 15, 0xC5);
        let output = generate(&cfg).unwrap();
        let mut trainer = Trainer::new(&output.split, output.vocab, &hyper(3, 3, 0xC5)).unwrap();
        assert!(trainer.assignments().expertise.iter().all(|&level| level == 1));
        for _ in 0..10 {
            trainer.sweep_expertise();
            assert!(helprank_core::model::trajectories_monotone(
                &output.split,
                trainer.assignments()
            ));
            trainer.sweep_facets();
            let xis = trainer.estimate_xi();
            trainer.fit_psi(&xis).unwrap();
            trainer.refresh_theta();
        }
        assert!(helprank_core::model::trajectories_monotone(
            &output.split,
            trainer.assignments()
        ));
    });
}

/// E=2, Z=3 ground truth over exactly 100 words: each cell owns a 16-word
/// block, the 4 leftover words carry a small shared mass.
fn synth_e2_z3_w100(n_users: usize, reviews_per_user: usize, seed: u64) -> SynthConfig {
    let mut cfg = well_separated_config(2, 3, 16, n_users, reviews_per_user, 30, seed);
    let cells = 2 * 3;
    let w = 100;
    cfg.vocab_size = w;
    let mut phi = vec![0.0; cells * w];
    for cell in 0..cells {
        let row = &mut phi[cell * w..(cell + 1) * w];
        let start = cell * 16;
        let decay: f64 = 0.7;
        let norm: f64 = (0..16).map(|i| decay.powi(i as i32)).sum();
        for i in 0..16 {
            row[start + i] = 0.98 * decay.powi(i as i32) / norm;
        }
        for shared in 96..100 {
            row[shared] = 0.02 / 4.0;
        }
    }
    cfg.true_phi = phi;
    cfg.psi_star.xi = {
        let mut xi = vec![0.0; cells];
        for (i, v) in xi.iter_mut().enumerate() {
            *v = if i % 2 == 0 { 0.12 } else { -0.12 };
        }
        xi
    };
    cfg.test_per_user = 2;
    cfg
}

#[test]
fn acceptance_06_log_likelihood_trend() {
    criterion(6, "log-likelihood ends above start with >=90% non-decreasing steps, 5 seeds", || {
        for seed in 0..5u64 {
            let start = Instant::now();
            let cfg = synth_e2_z3_w100(250, 10, 100 + seed);
            let output = generate(&cfg).unwrap();
            assert_eq!(output.split.train.len(), 2000);
            let mut h = hyper(2, 3, 500 + seed);
            h.outer_iterations = 30;
            h.convergence_tol = 1e-4;
            let trainer = Trainer::new(&output.split, output.vocab, &h).unwrap();
            let outcome = trainer.train().unwrap();
            let lls: Vec<f64> = outcome.log.iter().map(|row| row.log_likelihood).collect();
            assert!(
                lls.last().unwrap() > lls.first().unwrap(),
                "seed {seed}: final {} <= initial {}",
                lls.last().unwrap(),
                lls.first().unwrap()
            );
            let deltas: Vec<f64> = lls.windows(2).map(|w| w[1] - w[0]).collect();
            let ok = deltas.iter().filter(|&&d| d >= -1e-9).count();
            assert!(
                ok as f64 >= 0.9 * deltas.len() as f64,
                "seed {seed}: only {ok}/{} non-decreasing deltas: {deltas:?}",
                deltas.len()
            );
            assert!(
                helprank_core::model::trajectories_monotone(&output.split, &outcome.assignments)
            );
            assert!(start.elapsed().as_secs_f64() < 60.0, "seed {seed} too slow");
        }
    });
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for sub in permutations(n - 1) {
        for slot in 0..n {
            let mut perm = sub.clone();
            perm.insert(slot, n - 1);
            out.push(perm);
        }
    }
    out
}

fn top_words(probabilities: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probabilities.len()).collect();
    order.sort_by(|&a, &b| {
        probabilities[b]
            .partial_cmp(&probabilities[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

#[test]
fn acceptance_07_synthetic_recovery() {
    criterion(7, "top-5 facet words recovered under best per-level permutation, >=4 of 5 seeds", || {
        let (e_levels, facets, words_per_cell) = (2usize, 3usize, 10usize);
        let mut successes = 0;
        for seed in 0..5u64 {
            let cfg = well_separated_config(e_levels, facets, words_per_cell, 150, 10, 30, 200 + seed);
            let output = generate(&cfg).unwrap();
            let mut h = hyper(e_levels, facets, 700 + seed);
            h.outer_iterations = 30;
            let trainer = Trainer::new(&output.split, output.vocab, &h).unwrap();
            let outcome = trainer.train().unwrap();

            let w_count = cfg.vocab_size;
            let mut matched = 0usize;
            for level in 0..e_levels {
                let truth_tops: Vec<Vec<usize>> = (0..facets)
                    .map(|z| {
                        let cell = level * facets + z;
                        top_words(&cfg.true_phi[cell * w_count..(cell + 1) * w_count], 5)
                    })
                    .collect();
                let learned_tops: Vec<Vec<usize>> = (0..facets)
                    .map(|z| {
                        let probs: Vec<f64> = (0..w_count as u32)
                            .map(|w| outcome.state.phi((level + 1) as u32, z as u32, w))
                            .collect();
                        top_words(&probs, 5)
                    })
                    .collect();
                let best = permutations(facets)
                    .into_iter()
                    .map(|perm| {
                        (0..facets)
                            .map(|z| {
                                truth_tops[z]
                                    .iter()
                                    .filter(|w| learned_tops[perm[z]].contains(w))
                                    .count()
                            })
                            .sum::<usize>()
                    })
                    .max()
                    .unwrap();
                matched += best;
            }
            let fraction = matched as f64 / (5 * facets * e_levels) as f64;
            println!("  recovery seed {seed}: {:.0}%", fraction * 100.0);
            if fraction >= 0.8 {
                successes += 1;
            }
        }
        assert!(successes >= 4, "only {successes} of 5 seeds recovered >= 80%");
    });
}

#[test]
fn acceptance_08_latent_factors_beat_consistency_only() {
    criterion(8, "full model beats consistency-only regression on held-out MSE, >=8 of 10 seeds", || {
        let mut wins = 0;
        for seed in 0..10u64 {
            let mut cfg = well_separated_config(2, 3, 10, 120, 10, 30, 300 + seed);
            // strengthen the latent signal relative to the noise
            for (i, v) in cfg.psi_star.xi.iter_mut().enumerate() {
                *v = if i % 2 == 0 { 0.22 } else { -0.22 };
            }
            let output = generate(&cfg).unwrap();
            let mut h = hyper(2, 3, 900 + seed);
            h.outer_iterations = 15;
            let trainer = Trainer::new(&output.split, output.vocab, &h).unwrap();
            let stats = compute_stats(&output.split.train).unwrap();
            let outcome = trainer.train().unwrap();
            let predictor = Predictor::new(&outcome.state, &stats, &output.split, &outcome.assignments);
            let full_scores: Vec<f64> = output
                .split
                .test
                .iter()
                .map(|r| predictor.score(r).0)
                .collect();

            // consistency-only ridge on the same training data
            let rows: Vec<Vec<f64>> = output
                .split
                .train
                .iter()
                .map(|r| {
                    consistency_features(r, &stats, 0, cfg.timeliness_scale).to_vec()
                })
                .collect();
            let targets: Vec<f64> = output.split.train.iter().map(|r| r.helpfulness).collect();
            let (w, _) = fit_regression(&rows, &targets, h.mu).unwrap();
            let baseline_scores: Vec<f64> = output
                .split
                .test
                .iter()
                .map(|r| {
                    let f = consistency_features(r, &stats, 0, cfg.timeliness_scale);
                    let raw: f64 =
                        f.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>() + w[6];
                    raw.clamp(0.0, 1.0)
                })
                .collect();

            let truth: Vec<f64> = output.split.test.iter().map(|r| r.helpfulness).collect();
            let full = eval::mse(&full_scores, &truth).unwrap();
            let baseline = eval::mse(&baseline_scores, &truth).unwrap();
            println!("  ablation seed {seed}: full {full:.5} vs consistency-only {baseline:.5}");
            if full < baseline {
                wins += 1;
            }
        }
        assert!(wins >= 8, "full model won only {wins} of 10 seeds");
    });
}

#[test]
fn acceptance_09_rank_metric_oracles() {
    criterion(9, "kendall and spearman match independent oracles on 1000 random vectors", || {
        // worked values first
        assert_eq!(eval::kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]), 1.0 / 3.0);
        assert_eq!(eval::spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]), 0.5);

        fn kendall_oracle(a: &[f64], b: &[f64]) -> f64 {
            let n = a.len();
            let mut net = 0i64;
            for j in 0..n {
                for i in 0..j {
                    let s = (a[i] - a[j]).signum() * (b[i] - b[j]).signum();
                    if s > 0.0 {
                        net += 1;
                    } else if s < 0.0 {
                        net -= 1;
                    }
                }
            }
            net as f64 / ((n * (n - 1)) as f64 / 2.0)
        }

        fn rank_oracle(values: &[f64]) -> Vec<f64> {
            // average ranks by explicit comparison counting
            let n = values.len();
            (0..n)
                .map(|i| {
                    let less = values.iter().filter(|&&v| v < values[i]).count();
                    let equal = values.iter().filter(|&&v| v == values[i]).count();
                    less as f64 + (equal as f64 + 1.0) / 2.0
                })
                .collect()
        }

        fn pearson_oracle(a: &[f64], b: &[f64]) -> f64 {
            let n = a.len() as f64;
            let ma = a.iter().sum::<f64>() / n;
            let mb = b.iter().sum::<f64>() / n;
            let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
            let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
            if va == 0.0 || vb == 0.0 {
                0.0
            } else {
                cov / (va.sqrt() * vb.sqrt())
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(0x09);
        for case in 0..1000usize {
            let n = 2 + rng.random_range(0..199usize);
            let with_ties = case % 2 == 0;
            let draw = |rng: &mut ChaCha8Rng| -> f64 {
                if with_ties {
                    rng.random_range(0..12u32) as f64
                } else {
                    rng.random::<f64>()
                }
            };
            let a: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
            let b: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
            let tau = eval::kendall_tau(&a, &b);
            assert_eq!(tau, kendall_oracle(&a, &b), "case {case}");
            let rho = eval::spearman(&a, &b);
            let expected = pearson_oracle(&rank_oracle(&a), &rank_oracle(&b));
            assert!((rho - expected).abs() < 1e-12, "case {case}: {rho} vs {expected}");
        }
    });
}

#[test]
fn acceptance_10_determinism_and_persistence() {
    criterion(10, "identical seeds give byte-identical snapshots and reports; round-trip exact", || {
        let sim_dir = tempfile::tempdir().unwrap();
        let mut cfg = well_separated_config(2, 3, 8, 30, 15, 20, 0xD0);
        cfg.test_per_user = 3;
        helprank_core::synth::write_jsonl(sim_dir.path(), &cfg).unwrap();
        let input = sim_dir.path().join("reviews.jsonl");

        let run = |tag: &str| {
            let base = tempfile::tempdir().unwrap();
            let data = base.path().join(format!("data_{tag}"));
            let snap = base.path().join(format!("snap_{tag}"));
            let mut config = Config::new();
            for (key, value) in [
                ("e_levels", "2"),
                ("facets", "3"),
                ("iterations", "5"),
                ("seed", "77"),
                ("min_df", "1"),
                ("longtail_threshold", "5"),
            ] {
                config.set(key, value).unwrap();
            }
            pipeline::prepare(&input, &Default::default(), &config, &data).unwrap();
            pipeline::train(&data, &config, &snap).unwrap();
            let eval_path = base.path().join(format!("eval_{tag}.json"));
            pipeline::evaluate_cmd(&snap, &data, &eval_path, false).unwrap();
            (base, data, snap, eval_path)
        };
        let (base_a, data_a, snap_a, eval_a) = run("a");
        let (_base_b, data_b, snap_b, eval_b) = run("b");

        for name in ["train.jsonl", "test.jsonl", "vocab.tsv"] {
            assert_eq!(
                std::fs::read(data_a.join(name)).unwrap(),
                std::fs::read(data_b.join(name)).unwrap(),
                "prepared {name} differs"
            );
        }
        let snapshot_files = [
            "manifest.json",
            "psi.bin",
            "counts_ezw.bin",
            "trans_ee.bin",
            "assignments.bin",
            "vocab.tsv",
        ];
        for name in snapshot_files {
            assert_eq!(
                std::fs::read(snap_a.join(name)).unwrap(),
                std::fs::read(snap_b.join(name)).unwrap(),
                "snapshot {name} differs"
            );
        }
        assert_eq!(
            std::fs::read(&eval_a).unwrap(),
            std::fs::read(&eval_b).unwrap(),
            "evaluation reports differ"
        );

        // round-trip: load and re-save bit-exactly
        let (state, assignments) = snapshot::load_snapshot(&snap_a).unwrap();
        let resaved = base_a.path().join("resaved");
        snapshot::save_snapshot(&resaved, &state, &assignments).unwrap();
        for name in snapshot_files {
            assert_eq!(
                std::fs::read(snap_a.join(name)).unwrap(),
                std::fs::read(resaved.join(name)).unwrap(),
                "round-trip {name} differs"
            );
        }
    });
}

#[test]
fn acceptance_11_desk_scale_performance() {
    criterion(11, "10k reviews x 50 tokens, Z=10, E=5, 30 iterations under 2 minutes", || {
        let cfg = well_separated_config(5, 10, 8, 1000, 12, 50, 0xF1);
        let output = generate(&cfg).unwrap();
        assert_eq!(output.split.train.len(), 10_000);
        let mut h = hyper(5, 10, 0xF1);
        h.outer_iterations = 30;
        h.convergence_tol = 0.0; // force the full 30 iterations
        let start = Instant::now();
        let trainer = Trainer::new(&output.split, output.vocab, &h).unwrap();
        let outcome = trainer.train().unwrap();
        let elapsed = start.elapsed().as_secs_f64();
        assert_eq!(outcome.log.last().unwrap().iteration, 30);
        println!("  30 iterations over 10k reviews took {elapsed:.1}s");
        assert!(elapsed < 120.0, "training took {elapsed:.1}s");
    });
}
