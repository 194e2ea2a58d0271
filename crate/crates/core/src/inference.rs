//! The alternating training loop: an expertise sweep over timestamp-ordered
//! reviews, a collapsed Gibbs sweep over token facets, re-estimation of the
//! facet proportions, a ridge regression fit of the weights and a refresh of
//! the facet-preference table, with the data log-likelihood tracked per
//! iteration.
//!
//! Count bookkeeping is incremental; `recount` rebuilds the tensors from the
//! assignments so sweeps can be audited exactly.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::CorpusSplit;
use crate::error::{CoreError, Result};
use crate::features::{compute_stats, consistency_features, FeatureVector, StatsBundle};
use crate::model::{self, Assignments, HyperParams, ModelState, PsiWeights, Recount};

/// One row of the per-iteration training log.
#[derive(Debug, Clone)]
pub struct IterationLog {
    pub iteration: usize,
    pub log_likelihood: f64,
    pub train_mse: f64,
    pub seconds_elapsed: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub state: ModelState,
    pub assignments: Assignments,
    pub log: Vec<IterationLog>,
}

/// Expertise transition probability
/// (n(a,b) + I(a=b) + gamma) / (n(a,.) + I(a=b) + E*gamma).
///
/// Callers wanting the leave-one-out variant evaluate this on counts with
/// the transition in question already removed.
pub fn transition_prob(
    transition_counts: &[u64],
    e_levels: usize,
    from: u32,
    to: u32,
    gamma: f64,
) -> f64 {
    debug_assert!(
        to == from || to == from + 1,
        "expertise may only stay or advance one level"
    );
    let row = (from - 1) as usize * e_levels;
    let n_ab = transition_counts[row + (to - 1) as usize] as f64;
    let n_a: u64 = transition_counts[row..row + e_levels].iter().sum();
    let ind = if from == to { 1.0 } else { 0.0 };
    (n_ab + ind + gamma) / (n_a as f64 + ind + e_levels as f64 * gamma)
}

/// Activity rate per user key: D_u / (D_u + D_avg) over the training split.
pub fn activity_rates(split: &CorpusSplit) -> BTreeMap<u32, f64> {
    let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
    for r in &split.train {
        *counts.entry(r.user_key).or_insert(0) += 1;
    }
    let d_avg = split.train.len() as f64 / counts.len().max(1) as f64;
    counts
        .into_iter()
        .map(|(k, d_u)| (k, d_u as f64 / (d_u as f64 + d_avg)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihoodParts {
    /// Sum over train tokens of ln theta + ln phi at the assigned labels.
    pub token: f64,
    /// Sum over reviews of the ln transition probability from the
    /// predecessor's level (virtual level 1 for a user's first review).
    pub transition: f64,
}

impl LogLikelihoodParts {
    pub fn total(&self) -> f64 {
        self.token + self.transition
    }
}

/// Data log-likelihood under the current point estimates.
pub fn log_likelihood_parts(
    state: &ModelState,
    assignments: &Assignments,
    split: &CorpusSplit,
) -> LogLikelihoodParts {
    let gammas = activity_rates(split);
    let mut token = 0.0;
    for (i, review) in split.train.iter().enumerate() {
        let level = assignments.expertise[i];
        for (j, &w) in review.tokens.iter().enumerate() {
            let z = assignments.facets[i][j];
            token += state.theta_at(level, z).ln() + state.phi(level, z, w).ln();
        }
    }
    let mut transition = 0.0;
    for (user_key, chain) in split.user_chains().iter().enumerate() {
        if chain.is_empty() {
            continue;
        }
        let gamma = gammas[&(user_key as u32)];
        let mut prev = 1u32;
        for &idx in chain {
            let level = assignments.expertise[idx];
            transition += transition_prob(
                &state.transition_counts,
                state.e_levels(),
                prev,
                level,
                gamma,
            )
            .ln();
            prev = level;
        }
    }
    LogLikelihoodParts { token, transition }
}

pub fn log_likelihood(state: &ModelState, assignments: &Assignments, split: &CorpusSplit) -> f64 {
    log_likelihood_parts(state, assignments, split).total()
}

/// Ridge fit of targets on feature rows with an implicit trailing intercept
/// column. The penalty inside the normal equations is mu * N so the solution
/// minimizes mean squared error plus mu times the squared weight norm, the
/// intercept unpenalized. Returns (weights with intercept last, training MSE).
pub fn fit_regression(rows: &[Vec<f64>], targets: &[f64], mu: f64) -> Result<(Vec<f64>, f64)> {
    if rows.is_empty() || rows.len() != targets.len() {
        return Err(CoreError::Regression(
            "regression needs one target per feature row".into(),
        ));
    }
    let n = rows.len();
    let p = rows[0].len() + 1;
    let x = DMatrix::<f64>::from_fn(n, p, |i, j| if j + 1 == p { 1.0 } else { rows[i][j] });
    let y = DVector::<f64>::from_column_slice(targets);
    let lambda = mu * n as f64;
    let mut xtx = x.transpose() * &x;
    for i in 0..p - 1 {
        xtx[(i, i)] += lambda;
    }
    let xty = x.transpose() * &y;
    let w = match nalgebra::Cholesky::new(xtx.clone()) {
        Some(chol) => chol.solve(&xty),
        None => {
            if lambda > 0.0 {
                xtx.lu().solve(&xty).ok_or_else(|| {
                    CoreError::Regression("normal equations unsolvable despite ridge term".into())
                })?
            } else {
                log::warn!("singular normal equations with mu = 0; returning the minimum-norm least-squares solution");
                x.clone()
                    .svd(true, true)
                    .solve(&y, 1e-12)
                    .map_err(|e| CoreError::Regression(format!("SVD solve failed: {e}")))?
            }
        }
    };
    let residual = &y - &x * &w;
    let mse = residual.dot(&residual) / n as f64;
    Ok((w.iter().copied().collect(), mse))
}

/// Final training expertise level per user key.
pub fn final_levels(split: &CorpusSplit, assignments: &Assignments) -> BTreeMap<u32, u32> {
    let mut levels = BTreeMap::new();
    for (i, review) in split.train.iter().enumerate() {
        levels.insert(review.user_key, assignments.expertise[i]);
    }
    levels
}

/// Scores test reviews against a frozen model.
pub struct Predictor<'a> {
    state: &'a ModelState,
    stats: &'a StatsBundle,
    background_key: u32,
    levels: BTreeMap<u32, u32>,
    fallback_level: u32,
}

impl<'a> Predictor<'a> {
    pub fn new(
        state: &'a ModelState,
        stats: &'a StatsBundle,
        split: &CorpusSplit,
        assignments: &Assignments,
    ) -> Self {
        let levels = final_levels(split, assignments);
        let fallback_level = levels.get(&split.background_user_key).copied().unwrap_or(1);
        Predictor {
            state,
            stats,
            background_key: split.background_user_key,
            levels,
            fallback_level,
        }
    }

    pub fn level_for(&self, user_key: u32) -> u32 {
        self.levels.get(&user_key).copied().unwrap_or(self.fallback_level)
    }

    /// Predicted helpfulness in [0, 1]; the flag reports whether the review
    /// had any in-vocabulary token (otherwise the latent block is zero).
    pub fn score(&self, review: &crate::corpus::TokenizedReview) -> (f64, bool) {
        let level = self.level_for(review.user_key);
        let xi = self.state.xi_for_review(&review.tokens, level);
        let features = FeatureVector {
            consistency: consistency_features(
                review,
                self.stats,
                self.background_key,
                self.state.hyper.timeliness_scale,
            ),
            latent: xi,
        };
        let raw = self.state.psi.score(&features);
        (raw.clamp(0.0, 1.0), !review.tokens.is_empty())
    }
}

/// Owns the mutable sampler state for one training run.
pub struct Trainer<'a> {
    split: &'a CorpusSplit,
    state: ModelState,
    assignments: Assignments,
    prev_in_chain: Vec<Option<usize>>,
    next_in_chain: Vec<Option<usize>>,
    gammas: Vec<f64>,
    consistency: Vec<[f64; 6]>,
    stats: StatsBundle,
    rng: ChaCha8Rng,
    log_theta: Vec<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        split: &'a CorpusSplit,
        vocab: crate::corpus::Vocabulary,
        hyper: &HyperParams,
    ) -> Result<Self> {
        let (state, assignments) = model::init(hyper, split, vocab)?;
        let stats = compute_stats(&split.train)?;
        let chains = split.user_chains();
        let n = split.train.len();
        let mut prev_in_chain = vec![None; n];
        let mut next_in_chain = vec![None; n];
        for chain in &chains {
            for pair in chain.windows(2) {
                prev_in_chain[pair[1]] = Some(pair[0]);
                next_in_chain[pair[0]] = Some(pair[1]);
            }
        }
        let mut gammas = vec![0.0; chains.len()];
        for (key, user) in &stats.users {
            gammas[*key as usize] = user.activity_rate;
        }
        let consistency = split
            .train
            .iter()
            .map(|r| {
                consistency_features(r, &stats, split.background_user_key, hyper.timeliness_scale)
            })
            .collect();
        let log_theta = state.theta.iter().map(|&t| t.ln()).collect();
        // Distinct stream from the one that initialized the assignments.
        let rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x9E37_79B9_7F4A_7C15);
        Ok(Trainer {
            split,
            state,
            assignments,
            prev_in_chain,
            next_in_chain,
            gammas,
            consistency,
            stats,
            rng,
            log_theta,
        })
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn assignments(&self) -> &Assignments {
        &self.assignments
    }

    pub fn stats(&self) -> &StatsBundle {
        &self.stats
    }

    /// Replaces the assignments (rebuilding all counts), e.g. for a warm
    /// restart. Trajectories must be monotone with steps in {0, 1}.
    pub fn set_assignments(&mut self, assignments: Assignments) -> Result<()> {
        let n = self.split.train.len();
        if assignments.expertise.len() != n || assignments.facets.len() != n {
            return Err(CoreError::Model("assignment shape mismatch".into()));
        }
        let e_max = self.state.e_levels() as u32;
        let z_max = self.state.facets() as u32;
        for (i, review) in self.split.train.iter().enumerate() {
            if assignments.facets[i].len() != review.tokens.len() {
                return Err(CoreError::Model(format!("facet list length mismatch at review {i}")));
            }
            if assignments.facets[i].iter().any(|&z| z >= z_max) {
                return Err(CoreError::Model(format!("facet out of range at review {i}")));
            }
            let level = assignments.expertise[i];
            if level < 1 || level > e_max {
                return Err(CoreError::Model(format!("expertise out of range at review {i}")));
            }
        }
        if !model::trajectories_monotone(self.split, &assignments) {
            return Err(CoreError::Model("expertise trajectories must be monotone".into()));
        }
        self.assignments = assignments;
        let rc = model::recount(&self.state, self.split, &self.assignments);
        self.state.word_counts = rc.word_counts;
        self.state.word_row_totals = rc.word_row_totals;
        self.state.transition_counts = rc.transition_counts;
        Ok(())
    }

    /// Installs new regression weights and refreshes theta.
    pub fn set_psi(&mut self, psi: PsiWeights) {
        self.state.psi = psi;
        self.refresh_theta();
    }

    pub fn refresh_theta(&mut self) {
        self.state.refresh_theta();
        self.log_theta = self.state.theta.iter().map(|&t| t.ln()).collect();
    }

    #[inline]
    fn wc_dec(&mut self, level: u32, z: u32, w: u32) {
        let idx = self.state.wc_index(level, z, w);
        self.state.word_counts[idx] = self.state.word_counts[idx]
            .checked_sub(1)
            .expect("word count underflow");
        let row = self.state.row_index(level, z);
        self.state.word_row_totals[row] -= 1;
    }

    #[inline]
    fn wc_inc(&mut self, level: u32, z: u32, w: u32) {
        let idx = self.state.wc_index(level, z, w);
        let row = self.state.row_index(level, z);
        self.state.word_counts[idx] += 1;
        self.state.word_row_totals[row] += 1;
    }

    #[inline]
    fn trans_dec(&mut self, from: u32, to: u32) {
        let e = self.state.e_levels();
        let idx = (from - 1) as usize * e + (to - 1) as usize;
        self.state.transition_counts[idx] = self.state.transition_counts[idx]
            .checked_sub(1)
            .expect("transition count underflow");
    }

    #[inline]
    fn trans_inc(&mut self, from: u32, to: u32) {
        let e = self.state.e_levels();
        self.state.transition_counts[(from - 1) as usize * e + (to - 1) as usize] += 1;
    }

    /// Normalized facet conditional for one token, with the token's current
    /// assignment excluded from the counts. Pure; matches what
    /// `sample_facet_at` draws from.
    pub fn facet_conditional_for_token(&self, review: usize, j: usize) -> Vec<f64> {
        let level = self.assignments.expertise[review];
        let w = self.split.train[review].tokens[j];
        let current = self.assignments.facets[review][j];
        let z_count = self.state.facets();
        let delta = self.state.hyper.delta;
        let w_total = self.state.vocab_size() as f64 * delta;
        let mut probs = Vec::with_capacity(z_count);
        let mut sum = 0.0;
        for z in 0..z_count as u32 {
            let excl = if z == current { 1 } else { 0 };
            let n = (self.state.word_counts[self.state.wc_index(level, z, w)] - excl) as f64;
            let total = (self.state.word_row_totals[self.state.row_index(level, z)] - excl) as f64;
            let p = self.state.theta_at(level, z) * (n + delta) / (total + w_total);
            probs.push(p);
            sum += p;
        }
        for p in &mut probs {
            *p /= sum;
        }
        probs
    }

    /// One collapsed Gibbs update of a single token's facet.
    pub fn sample_facet_at(&mut self, review: usize, j: usize) -> u32 {
        let level = self.assignments.expertise[review];
        let w = self.split.train[review].tokens[j];
        let old = self.assignments.facets[review][j];
        self.wc_dec(level, old, w);

        let z_count = self.state.facets();
        let delta = self.state.hyper.delta;
        let w_total = self.state.vocab_size() as f64 * delta;
        let mut cumulative = Vec::with_capacity(z_count);
        let mut sum = 0.0;
        for z in 0..z_count as u32 {
            let n = self.state.word_counts[self.state.wc_index(level, z, w)] as f64;
            let total = self.state.word_row_totals[self.state.row_index(level, z)] as f64;
            sum += self.state.theta_at(level, z) * (n + delta) / (total + w_total);
            cumulative.push(sum);
        }
        let draw = self.rng.random::<f64>() * sum;
        let chosen = cumulative
            .iter()
            .position(|&c| draw < c)
            .unwrap_or(z_count - 1) as u32;

        self.wc_inc(level, chosen, w);
        self.assignments.facets[review][j] = chosen;
        chosen
    }

    /// Log score of assigning `level` to the review, given that its own
    /// token counts and incoming transition are already excluded.
    fn expertise_log_score(&self, review: usize, prev: u32, level: u32, gamma: f64) -> f64 {
        let delta = self.state.hyper.delta;
        let w_total = self.state.vocab_size() as f64 * delta;
        let z_count = self.state.facets();
        let mut score = transition_prob(
            &self.state.transition_counts,
            self.state.e_levels(),
            prev,
            level,
            gamma,
        )
        .ln();
        for (j, &w) in self.split.train[review].tokens.iter().enumerate() {
            let z = self.assignments.facets[review][j];
            let n = self.state.word_counts[self.state.wc_index(level, z, w)] as f64;
            let total = self.state.word_row_totals[self.state.row_index(level, z)] as f64;
            score += self.log_theta[(level - 1) as usize * z_count + z as usize];
            score += ((n + delta) / (total + w_total)).ln();
        }
        score
    }

    /// Re-decides one review's expertise level between its predecessor's
    /// level and one above, taking the higher-scoring candidate (ties stay).
    /// Counts move with the review when the level changes.
    pub fn update_expertise_at(&mut self, review: usize) -> u32 {
        let user = self.split.train[review].user_key;
        let gamma = self.gammas[user as usize];
        let prev = self
            .prev_in_chain[review]
            .map(|p| self.assignments.expertise[p])
            .unwrap_or(1);
        let old = self.assignments.expertise[review];

        // Leave-one-out: remove this review's incoming transition and tokens.
        self.trans_dec(prev, old);
        let tokens: Vec<(u32, u32)> = self.split.train[review]
            .tokens
            .iter()
            .zip(self.assignments.facets[review].iter())
            .map(|(&w, &z)| (w, z))
            .collect();
        for &(w, z) in &tokens {
            self.wc_dec(old, z, w);
        }

        let stay = self.expertise_log_score(review, prev, prev, gamma);
        let chosen = if prev < self.state.e_levels() as u32 {
            let advance = self.expertise_log_score(review, prev, prev + 1, gamma);
            if advance > stay {
                prev + 1
            } else {
                prev
            }
        } else {
            prev
        };

        self.trans_inc(prev, chosen);
        for &(w, z) in &tokens {
            self.wc_inc(chosen, z, w);
        }
        if chosen != old {
            // The next review's tallied incoming transition still names the
            // old level; move it so counts keep matching the assignments.
            if let Some(next) = self.next_in_chain[review] {
                let next_level = self.assignments.expertise[next];
                self.trans_dec(old, next_level);
                self.trans_inc(chosen, next_level);
            }
        }
        self.assignments.expertise[review] = chosen;
        chosen
    }

    /// One pass over all training reviews in timestamp order.
    pub fn sweep_expertise(&mut self) {
        for review in 0..self.split.train.len() {
            self.update_expertise_at(review);
        }
    }

    /// One collapsed Gibbs pass over every token.
    pub fn sweep_facets(&mut self) {
        for review in 0..self.split.train.len() {
            for j in 0..self.split.train[review].tokens.len() {
                self.sample_facet_at(review, j);
            }
        }
    }

    /// Facet-proportion block per training review at its current level.
    pub fn estimate_xi(&self) -> Vec<Vec<f64>> {
        self.split
            .train
            .iter()
            .enumerate()
            .map(|(i, r)| self.state.xi_for_review(&r.tokens, self.assignments.expertise[i]))
            .collect()
    }

    /// Fits the regression weights on consistency features plus the given
    /// latent blocks; installs them and returns the training MSE.
    pub fn fit_psi(&mut self, xis: &[Vec<f64>]) -> Result<f64> {
        let rows: Vec<Vec<f64>> = self
            .consistency
            .iter()
            .zip(xis.iter())
            .map(|(c, xi)| {
                let mut row = Vec::with_capacity(6 + xi.len());
                row.extend_from_slice(c);
                row.extend_from_slice(xi);
                row
            })
            .collect();
        let targets: Vec<f64> = self.split.train.iter().map(|r| r.helpfulness).collect();
        let (w, mse) = fit_regression(&rows, &targets, self.state.hyper.mu)?;
        let e_z = self.state.e_levels() * self.state.facets();
        let mut consistency = [0.0; 6];
        consistency.copy_from_slice(&w[..6]);
        self.state.psi = PsiWeights {
            consistency,
            xi: w[6..6 + e_z].to_vec(),
            bias: w[6 + e_z],
        };
        Ok(mse)
    }

    pub fn log_likelihood(&self) -> f64 {
        log_likelihood(&self.state, &self.assignments, self.split)
    }

    /// Rebuilds the count tensors from the assignments.
    pub fn recount(&self) -> Recount {
        model::recount(&self.state, self.split, &self.assignments)
    }

    pub fn counts_consistent(&self) -> bool {
        let rc = self.recount();
        rc.word_counts == self.state.word_counts
            && rc.word_row_totals == self.state.word_row_totals
            && rc.transition_counts == self.state.transition_counts
    }

    /// One outer iteration: expertise sweep(s), facet sweep(s), xi
    /// estimation, regression fit, theta refresh. Returns (log-likelihood,
    /// training MSE) under the refreshed estimates.
    pub fn iterate(&mut self) -> Result<(f64, f64)> {
        for _ in 0..self.state.hyper.sweeps_per_iter {
            self.sweep_expertise();
        }
        for _ in 0..self.state.hyper.sweeps_per_iter {
            self.sweep_facets();
        }
        let xis = self.estimate_xi();
        let mse = self.fit_psi(&xis)?;
        self.refresh_theta();
        Ok((self.log_likelihood(), mse))
    }

    fn initial_train_mse(&self) -> f64 {
        let n = self.split.train.len() as f64;
        self.split
            .train
            .iter()
            .map(|r| r.helpfulness * r.helpfulness)
            .sum::<f64>()
            / n
    }

    /// Runs up to `outer_iterations`, stopping early after
    /// `convergence_patience` consecutive iterations whose relative
    /// log-likelihood change falls below `convergence_tol`.
    pub fn train(mut self) -> Result<TrainOutcome> {
        let start = Instant::now();
        let mut log = Vec::with_capacity(self.state.hyper.outer_iterations + 1);
        let mut prev_ll = self.log_likelihood();
        log.push(IterationLog {
            iteration: 0,
            log_likelihood: prev_ll,
            train_mse: self.initial_train_mse(),
            seconds_elapsed: start.elapsed().as_secs_f64(),
        });
        let mut calm = 0usize;
        for iteration in 1..=self.state.hyper.outer_iterations {
            let (ll, mse) = self.iterate()?;
            log.push(IterationLog {
                iteration,
                log_likelihood: ll,
                train_mse: mse,
                seconds_elapsed: start.elapsed().as_secs_f64(),
            });
            let rel = (ll - prev_ll).abs() / prev_ll.abs().max(1e-12);
            if rel < self.state.hyper.convergence_tol {
                calm += 1;
                if calm >= self.state.hyper.convergence_patience {
                    break;
                }
            } else {
                calm = 0;
            }
            prev_ll = ll;
        }
        Ok(TrainOutcome {
            state: self.state,
            assignments: self.assignments,
            log,
        })
    }
}
