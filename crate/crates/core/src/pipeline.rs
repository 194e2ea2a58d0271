//! End-to-end orchestration used by the CLI: prepare a data directory from
//! raw JSON Lines, train into a snapshot directory, then score, rank,
//! evaluate and inspect against those artifacts.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::Config;
use crate::corpus::{self, CorpusSplit, FieldMap, TokenizedReview, Vocabulary};
use crate::error::{CoreError, Result};
use crate::eval::{self, EvalReport};
use crate::features::{self, compute_stats};
use crate::inference::{IterationLog, Predictor, Trainer};
use crate::model::{Assignments, ModelState};
use crate::snapshot;
use crate::synth::SynthConfig;

#[derive(Debug, Serialize)]
pub struct PrepareReport {
    pub n_input: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub vocab_size: usize,
    pub background_user_key: u32,
    pub dropped_counts: BTreeMap<String, u64>,
}

/// ingest -> split/tokenize -> stats; writes train.jsonl, test.jsonl,
/// vocab.tsv, split_meta.json, the three stats TSVs and prepare_report.json.
pub fn prepare(input: &Path, schema: &FieldMap, config: &Config, out_dir: &Path) -> Result<PrepareReport> {
    let (reviews, ingest_report) = corpus::ingest(input, schema)?;
    let policy = config.tokenize_policy();
    let (mut split, vocab) = corpus::split_corpus(&reviews, &policy, &config.split)?;
    for (reason, count) in &ingest_report.dropped {
        *split.dropped_counts.entry(reason.clone()).or_insert(0) += count;
    }
    corpus::save_split(out_dir, &split, &vocab)?;

    let stats = compute_stats(&split.train)?;
    features::write_user_stats_tsv(&out_dir.join("user_stats.tsv"), &stats)?;
    features::write_item_stats_tsv(&out_dir.join("item_stats.tsv"), &stats)?;
    features::write_global_stats_tsv(&out_dir.join("global_stats.tsv"), &stats)?;

    let report = PrepareReport {
        n_input: ingest_report.parsed,
        n_train: split.train.len(),
        n_test: split.test.len(),
        vocab_size: vocab.len(),
        background_user_key: split.background_user_key,
        dropped_counts: split.dropped_counts.clone(),
    };
    let path = out_dir.join("prepare_report.json");
    let body = serde_json::to_string_pretty(&report)
        .map_err(|e| CoreError::Corpus(format!("serialize prepare report: {e}")))?;
    std::fs::write(&path, body).map_err(|e| CoreError::io(&path, e))?;
    Ok(report)
}

pub fn write_iterations_csv(path: &Path, log: &[IterationLog]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "iteration,log_likelihood,train_mse,seconds_elapsed").unwrap();
    for row in log {
        writeln!(
            out,
            "{},{},{},{:.3}",
            row.iteration, row.log_likelihood, row.train_mse, row.seconds_elapsed
        )
        .unwrap();
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path, e))
}

/// Trains on a prepared data directory and writes the snapshot plus
/// iterations.csv into `snapshot_dir`. Returns the per-iteration log.
pub fn train(data_dir: &Path, config: &Config, snapshot_dir: &Path) -> Result<Vec<IterationLog>> {
    let (split, vocab) = corpus::load_split(data_dir)?;
    let trainer = Trainer::new(&split, vocab, &config.hyper)?;
    let outcome = trainer.train()?;
    snapshot::save_snapshot(snapshot_dir, &outcome.state, &outcome.assignments)?;
    write_iterations_csv(&snapshot_dir.join("iterations.csv"), &outcome.log)?;
    Ok(outcome.log)
}

pub struct LoadedModel {
    pub state: ModelState,
    pub assignments: Assignments,
    pub split: CorpusSplit,
}

fn load_model(snapshot_dir: &Path, data_dir: &Path) -> Result<LoadedModel> {
    let (state, assignments) = snapshot::load_snapshot(snapshot_dir)?;
    let (split, vocab) = corpus::load_split(data_dir)?;
    if vocab != state.vocab {
        return Err(CoreError::Snapshot(
            "snapshot vocabulary differs from the data directory's vocab.tsv".into(),
        ));
    }
    if assignments.expertise.len() != split.train.len() {
        return Err(CoreError::Snapshot(format!(
            "snapshot covers {} training reviews, data directory has {}",
            assignments.expertise.len(),
            split.train.len()
        )));
    }
    Ok(LoadedModel {
        state,
        assignments,
        split,
    })
}

/// Per-review predictions over the test split, in test order.
pub fn score_test(model: &LoadedModel) -> Result<(Vec<f64>, u64)> {
    let stats = compute_stats(&model.split.train)?;
    let predictor = Predictor::new(&model.state, &stats, &model.split, &model.assignments);
    let mut scores = Vec::with_capacity(model.split.test.len());
    let mut zero_token = 0u64;
    for review in &model.split.test {
        let (score, had_tokens) = predictor.score(review);
        if !had_tokens {
            zero_token += 1;
        }
        scores.push(score);
    }
    Ok((scores, zero_token))
}

/// Writes review_index, user_key, item_key, predicted, helpfulness per test review.
pub fn predict_cmd(snapshot_dir: &Path, data_dir: &Path, out: &Path) -> Result<()> {
    let model = load_model(snapshot_dir, data_dir)?;
    let (scores, _) = score_test(&model)?;
    let mut body = Vec::new();
    writeln!(body, "review_index\tuser_key\titem_key\tpredicted\thelpfulness").unwrap();
    for (review, score) in model.split.test.iter().zip(scores.iter()) {
        writeln!(
            body,
            "{}\t{}\t{}\t{}\t{}",
            review.review_index, review.user_key, review.item_key, score, review.helpfulness
        )
        .unwrap();
    }
    std::fs::write(out, body).map_err(|e| CoreError::io(out, e))
}

/// Writes per-item rankings: item_key, rank, review_index, predicted score,
/// descending score within each item.
pub fn rank_cmd(snapshot_dir: &Path, data_dir: &Path, out: &Path) -> Result<()> {
    let model = load_model(snapshot_dir, data_dir)?;
    let (scores, _) = score_test(&model)?;
    let mut by_item: BTreeMap<u32, Vec<(f64, &TokenizedReview)>> = BTreeMap::new();
    for (review, &score) in model.split.test.iter().zip(scores.iter()) {
        by_item.entry(review.item_key).or_default().push((score, review));
    }
    let mut body = Vec::new();
    writeln!(body, "item_key\trank\treview_index\tpredicted").unwrap();
    for (item, mut rows) in by_item {
        rows.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.review_index.cmp(&b.1.review_index)));
        for (rank, (score, review)) in rows.into_iter().enumerate() {
            writeln!(body, "{item}\t{}\t{}\t{score}", rank + 1, review.review_index).unwrap();
        }
    }
    std::fs::write(out, body).map_err(|e| CoreError::io(out, e))
}

/// Scores the test split and writes the evaluation report JSON.
pub fn evaluate_cmd(snapshot_dir: &Path, data_dir: &Path, out: &Path, tau_b: bool) -> Result<EvalReport> {
    let model = load_model(snapshot_dir, data_dir)?;
    let (scores, zero_token) = score_test(&model)?;
    let truth: Vec<f64> = model.split.test.iter().map(|r| r.helpfulness).collect();
    let items: Vec<u32> = model.split.test.iter().map(|r| r.item_key).collect();
    let mut report = eval::evaluate(&scores, &truth, &items, zero_token)?;
    if tau_b {
        report.kendall = eval::kendall_tau_b(&scores, &truth);
    }
    let body = serde_json::to_string_pretty(&report)
        .map_err(|e| CoreError::Eval(format!("serialize report: {e}")))?;
    std::fs::write(out, body).map_err(|e| CoreError::io(out, e))?;
    Ok(report)
}

fn write_matrix_tsv(path: &Path, matrix: &[f64], n: usize) -> Result<()> {
    let mut body = Vec::new();
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| format!("{}", matrix[i * n + j])).collect();
        writeln!(body, "{}", row.join("\t")).unwrap();
    }
    std::fs::write(path, body).map_err(|e| CoreError::io(path, e))
}

/// Writes kl_theta.tsv, kl_phi.tsv, salient_words.tsv and loglik_plot.csv.
pub fn inspect_cmd(snapshot_dir: &Path, data_dir: &Path, out_dir: &Path, top_k: usize) -> Result<()> {
    let model = load_model(snapshot_dir, data_dir)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CoreError::io(out_dir, e))?;
    let e_count = model.state.e_levels();
    let (theta_kl, phi_kl) = eval::kl_matrices(&model.state);
    write_matrix_tsv(&out_dir.join("kl_theta.tsv"), &theta_kl, e_count)?;
    write_matrix_tsv(&out_dir.join("kl_phi.tsv"), &phi_kl, e_count)?;

    let cells = eval::salient_words(
        &model.state,
        &model.split.train,
        &model.assignments.expertise,
        top_k,
    );
    let mut body = Vec::new();
    writeln!(body, "partition\trank\tword\tcontrast").unwrap();
    for cell in &cells {
        for (rank, (word, score)) in cell.words.iter().enumerate() {
            writeln!(body, "{}\t{}\t{}\t{}", cell.label, rank + 1, word, score).unwrap();
        }
    }
    let path = out_dir.join("salient_words.tsv");
    std::fs::write(&path, body).map_err(|e| CoreError::io(&path, e))?;

    // Mirror the iteration trace as plottable iteration vs log-likelihood.
    let iterations = snapshot_dir.join("iterations.csv");
    let mut plot = String::from("iteration,log_likelihood\n");
    if iterations.exists() {
        let body = std::fs::read_to_string(&iterations).map_err(|e| CoreError::io(&iterations, e))?;
        for line in body.lines().skip(1) {
            let mut cols = line.split(',');
            if let (Some(iter), Some(ll)) = (cols.next(), cols.next()) {
                plot.push_str(&format!("{iter},{ll}\n"));
            }
        }
    } else {
        log::warn!("no iterations.csv next to the snapshot; loglik_plot.csv will be empty");
    }
    let path = out_dir.join("loglik_plot.csv");
    std::fs::write(&path, plot).map_err(|e| CoreError::io(&path, e))
}

/// Emits a synthetic corpus (reviews.jsonl + ground_truth.json).
pub fn simulate_cmd(cfg: &SynthConfig, out_dir: &Path) -> Result<()> {
    crate::synth::write_jsonl(out_dir, cfg)
}

/// Writes an in-memory split as a prepared data directory (used by tests
/// and the simulate-then-train shortcut).
pub fn save_prepared(dir: &Path, split: &CorpusSplit, vocab: &Vocabulary) -> Result<()> {
    corpus::save_split(dir, split, vocab)
}
