//! Latent model state: regression weights, the expertise-facet preference
//! table derived from them, expertise-facet-word counts and expertise
//! transition counts, plus the per-review assignments they summarize.
//!
//! Expertise levels are 1-based (1..=E) everywhere in the public surface;
//! tensors index them at level-1 internally.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSplit, Vocabulary};
use crate::error::{CoreError, Result};
use crate::features::FeatureVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Number of expertise levels E (>= 2).
    pub e_levels: usize,
    /// Number of facets Z (>= 2).
    pub facets: usize,
    /// Symmetric word-Dirichlet smoothing.
    pub delta: f64,
    /// L2 regularization weight on the regression parameters.
    pub mu: f64,
    pub outer_iterations: usize,
    pub seed: u64,
    /// Seconds of age at which timeliness decays by a factor of e.
    pub timeliness_scale: f64,
    /// Gibbs sweeps per training step per iteration.
    pub sweeps_per_iter: usize,
    /// Relative log-likelihood change below which an iteration counts as converged.
    pub convergence_tol: f64,
    /// Consecutive converged iterations required to stop early.
    pub convergence_patience: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            e_levels: 5,
            facets: 50,
            delta: 0.01,
            mu: 0.01,
            outer_iterations: 30,
            seed: 42,
            timeliness_scale: 365.25 * 86_400.0,
            sweeps_per_iter: 1,
            convergence_tol: 1e-5,
            convergence_patience: 3,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.e_levels < 2 {
            return Err(CoreError::Config("e_levels must be >= 2".into()));
        }
        if self.facets < 2 {
            return Err(CoreError::Config("facets must be >= 2".into()));
        }
        if !(self.delta > 0.0) {
            return Err(CoreError::Config("delta must be > 0".into()));
        }
        if !(self.mu >= 0.0) {
            return Err(CoreError::Config("mu must be >= 0".into()));
        }
        if !(self.timeliness_scale > 0.0) {
            return Err(CoreError::Config("timeliness_scale must be > 0".into()));
        }
        if self.sweeps_per_iter == 0 {
            return Err(CoreError::Config("sweeps_per_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Regression parameters: an intercept, one weight per consistency feature
/// and one weight per (expertise level, facet) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiWeights {
    pub bias: f64,
    pub consistency: [f64; 6],
    /// E x Z, row-major by level.
    pub xi: Vec<f64>,
}

impl PsiWeights {
    pub fn zeros(e_levels: usize, facets: usize) -> Self {
        PsiWeights {
            bias: 0.0,
            consistency: [0.0; 6],
            xi: vec![0.0; e_levels * facets],
        }
    }

    /// Linear score of Eq-style features: bias + w . f.
    pub fn score(&self, features: &FeatureVector) -> f64 {
        debug_assert_eq!(features.latent.len(), self.xi.len());
        let mut s = self.bias;
        for (w, f) in self.consistency.iter().zip(features.consistency.iter()) {
            s += w * f;
        }
        for (w, f) in self.xi.iter().zip(features.latent.iter()) {
            s += w * f;
        }
        s
    }

    /// Flat layout used by the snapshot and the regression solver:
    /// [consistency(6), xi(E*Z), bias].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(7 + self.xi.len());
        out.extend_from_slice(&self.consistency);
        out.extend_from_slice(&self.xi);
        out.push(self.bias);
        out
    }

    pub fn from_flat(flat: &[f64], e_levels: usize, facets: usize) -> Result<Self> {
        let expect = 7 + e_levels * facets;
        if flat.len() != expect {
            return Err(CoreError::Model(format!(
                "psi length {} does not match 7 + E*Z = {}",
                flat.len(),
                expect
            )));
        }
        let mut consistency = [0.0; 6];
        consistency.copy_from_slice(&flat[..6]);
        Ok(PsiWeights {
            consistency,
            xi: flat[6..flat.len() - 1].to_vec(),
            bias: flat[flat.len() - 1],
        })
    }
}

/// Row-wise softmax with max subtraction; maps the unconstrained E x Z
/// regression block onto per-level facet distributions.
pub fn theta_from_psi(psi_xi: &[f64], e_levels: usize, facets: usize) -> Vec<f64> {
    debug_assert_eq!(psi_xi.len(), e_levels * facets);
    let mut theta = vec![0.0; e_levels * facets];
    for e in 0..e_levels {
        let row = &psi_xi[e * facets..(e + 1) * facets];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (z, &v) in row.iter().enumerate() {
            let x = (v - max).exp();
            theta[e * facets + z] = x;
            sum += x;
        }
        for z in 0..facets {
            theta[e * facets + z] /= sum;
        }
    }
    theta
}

/// All latent tensors plus the vocabulary and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub psi: PsiWeights,
    /// E x Z facet preference per level, rows on the simplex.
    pub theta: Vec<f64>,
    /// E x Z x W occurrence counts.
    pub word_counts: Vec<u64>,
    /// E x Z totals over words.
    pub word_row_totals: Vec<u64>,
    /// E x E transition counts; only stay/advance cells are populated at rest.
    pub transition_counts: Vec<u64>,
    pub vocab: Vocabulary,
    pub hyper: HyperParams,
}

impl ModelState {
    pub fn e_levels(&self) -> usize {
        self.hyper.e_levels
    }

    pub fn facets(&self) -> usize {
        self.hyper.facets
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    #[inline]
    pub fn wc_index(&self, level: u32, z: u32, w: u32) -> usize {
        let e = (level - 1) as usize;
        (e * self.hyper.facets + z as usize) * self.vocab.len() + w as usize
    }

    #[inline]
    pub fn row_index(&self, level: u32, z: u32) -> usize {
        (level - 1) as usize * self.hyper.facets + z as usize
    }

    /// Smoothed expertise-facet-word probability (n + delta) / (n_row + W*delta).
    #[inline]
    pub fn phi(&self, level: u32, z: u32, w: u32) -> f64 {
        let n = self.word_counts[self.wc_index(level, z, w)] as f64;
        let total = self.word_row_totals[self.row_index(level, z)] as f64;
        (n + self.hyper.delta) / (total + self.vocab.len() as f64 * self.hyper.delta)
    }

    #[inline]
    pub fn theta_at(&self, level: u32, z: u32) -> f64 {
        self.theta[self.row_index(level, z)]
    }

    /// Recomputes theta from the current psi block.
    pub fn refresh_theta(&mut self) {
        self.theta = theta_from_psi(&self.psi.xi, self.hyper.e_levels, self.hyper.facets);
    }

    /// Facet proportions of a review at one expertise level (Eq. 10 style):
    /// row `level` holds the normalized sums of phi over the review's
    /// tokens, all other rows are zero. Empty token lists yield all zeros.
    pub fn xi_for_review(&self, tokens: &[u32], level: u32) -> Vec<f64> {
        let z_count = self.hyper.facets;
        let mut xi = vec![0.0; self.hyper.e_levels * z_count];
        if tokens.is_empty() {
            return xi;
        }
        let row = &mut xi[(level - 1) as usize * z_count..level as usize * z_count];
        let mut sum = 0.0;
        for z in 0..z_count as u32 {
            let s: f64 = tokens.iter().map(|&w| self.phi(level, z, w)).sum();
            row[z as usize] = s;
            sum += s;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        xi
    }
}

/// Per-token facet labels and per-review expertise levels for the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignments {
    /// Ragged: one facet per token per training review.
    pub facets: Vec<Vec<u32>>,
    /// One level in 1..=E per training review.
    pub expertise: Vec<u32>,
}

/// Seeds the sampler state: uniform random facets, everyone at expertise
/// level 1, count tensors consistent with those assignments, psi = 0 (hence
/// uniform theta).
pub fn init(
    hyper: &HyperParams,
    split: &CorpusSplit,
    vocab: Vocabulary,
) -> Result<(ModelState, Assignments)> {
    hyper.validate()?;
    let w_count = vocab.len();
    if w_count == 0 {
        return Err(CoreError::Model("vocabulary is empty".into()));
    }
    for r in split.train.iter().chain(split.test.iter()) {
        if r.tokens.iter().any(|&t| t as usize >= w_count) {
            return Err(CoreError::Model(format!(
                "review {} holds token indices outside the vocabulary",
                r.review_index
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let z_count = hyper.facets as u32;
    let facets: Vec<Vec<u32>> = split
        .train
        .iter()
        .map(|r| r.tokens.iter().map(|_| rng.random_range(0..z_count)).collect())
        .collect();
    let expertise = vec![1u32; split.train.len()];
    let assignments = Assignments { facets, expertise };

    let psi = PsiWeights::zeros(hyper.e_levels, hyper.facets);
    let theta = theta_from_psi(&psi.xi, hyper.e_levels, hyper.facets);
    let mut state = ModelState {
        psi,
        theta,
        word_counts: vec![0; hyper.e_levels * hyper.facets * w_count],
        word_row_totals: vec![0; hyper.e_levels * hyper.facets],
        transition_counts: vec![0; hyper.e_levels * hyper.e_levels],
        vocab,
        hyper: hyper.clone(),
    };
    let recount = recount(&state, split, &assignments);
    state.word_counts = recount.word_counts;
    state.word_row_totals = recount.word_row_totals;
    state.transition_counts = recount.transition_counts;
    Ok((state, assignments))
}

/// Count tensors rebuilt from scratch out of the assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct Recount {
    pub word_counts: Vec<u64>,
    pub word_row_totals: Vec<u64>,
    pub transition_counts: Vec<u64>,
}

/// Full recount of the three count tensors from the assignments; the
/// reference the incremental bookkeeping is checked against.
pub fn recount(state: &ModelState, split: &CorpusSplit, assignments: &Assignments) -> Recount {
    let e_count = state.hyper.e_levels;
    let z_count = state.hyper.facets;
    let w_count = state.vocab.len();
    let mut word_counts = vec![0u64; e_count * z_count * w_count];
    let mut word_row_totals = vec![0u64; e_count * z_count];
    let mut transition_counts = vec![0u64; e_count * e_count];
    for (i, review) in split.train.iter().enumerate() {
        let level = assignments.expertise[i];
        for (j, &w) in review.tokens.iter().enumerate() {
            let z = assignments.facets[i][j];
            let row = (level - 1) as usize * z_count + z as usize;
            word_counts[row * w_count + w as usize] += 1;
            word_row_totals[row] += 1;
        }
    }
    // Each review contributes one transition from its predecessor's level,
    // anchored at a virtual level-1 predecessor for a user's first review.
    for chain in split.user_chains() {
        let mut prev = 1u32;
        for &idx in &chain {
            let level = assignments.expertise[idx];
            transition_counts[(prev - 1) as usize * e_count + (level - 1) as usize] += 1;
            prev = level;
        }
    }
    Recount {
        word_counts,
        word_row_totals,
        transition_counts,
    }
}

/// Checks that every user's stored trajectory is monotone with steps in {0, 1}
/// from the virtual level-1 start.
pub fn trajectories_monotone(split: &CorpusSplit, assignments: &Assignments) -> bool {
    split.user_chains().iter().all(|chain| {
        let mut prev = 1u32;
        chain.iter().all(|&idx| {
            let level = assignments.expertise[idx];
            let ok = level == prev || level == prev + 1;
            prev = level;
            ok
        })
    })
}
