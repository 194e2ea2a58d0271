//! Corpus ingestion: JSON Lines parsing, tokenization, vocabulary
//! construction, vote filtering and the train/test split.
//!
//! The split keeps, per user, the most recent sufficiently-voted reviews as
//! held-out test data; everything else that clears the training vote
//! threshold becomes training data, sorted by timestamp. Users with too few
//! training reviews are folded into a single background user (key 0).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Reserved dense key for the background user that absorbs long-tail users.
pub const BACKGROUND_USER_KEY: u32 = 0;

/// One raw review: the ingested quintuple plus its helpfulness votes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub timestamp: i64,
    pub text: String,
    pub helpful_votes: u64,
    pub total_votes: u64,
}

impl Review {
    /// Fraction of voters that found the review helpful; undefined without votes.
    pub fn helpfulness(&self) -> Option<f64> {
        if self.total_votes == 0 {
            None
        } else {
            Some(self.helpful_votes as f64 / self.total_votes as f64)
        }
    }
}

/// A review after vocabulary indexing and user/item key assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedReview {
    pub review_index: u64,
    pub user_key: u32,
    pub item_key: u32,
    pub tokens: Vec<u32>,
    pub rating: f64,
    pub timestamp: i64,
    pub helpfulness: f64,
}

/// Dense word index with per-word document frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    word_to_index: HashMap<String, u32>,
    index_to_word: Vec<String>,
    doc_frequency: Vec<u32>,
}

impl Vocabulary {
    pub fn from_entries(entries: Vec<(String, u32)>) -> Self {
        let mut word_to_index = HashMap::with_capacity(entries.len());
        let mut index_to_word = Vec::with_capacity(entries.len());
        let mut doc_frequency = Vec::with_capacity(entries.len());
        for (word, df) in entries {
            word_to_index.insert(word.clone(), index_to_word.len() as u32);
            index_to_word.push(word);
            doc_frequency.push(df);
        }
        Vocabulary {
            word_to_index,
            index_to_word,
            doc_frequency,
        }
    }

    pub fn len(&self) -> usize {
        self.index_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_to_word.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<u32> {
        self.word_to_index.get(word).copied()
    }

    pub fn word(&self, index: u32) -> &str {
        &self.index_to_word[index as usize]
    }

    pub fn doc_frequency(&self, index: u32) -> u32 {
        self.doc_frequency[index as usize]
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, word) in self.index_to_word.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}", i, word, self.doc_frequency[i])?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| CoreError::Corpus(format!("vocab read: {e}")))?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let idx: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CoreError::Corpus(format!("vocab.tsv line {}: bad index", lineno + 1)))?;
            let word = parts
                .next()
                .ok_or_else(|| CoreError::Corpus(format!("vocab.tsv line {}: missing word", lineno + 1)))?;
            let df: u32 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CoreError::Corpus(format!("vocab.tsv line {}: bad df", lineno + 1)))?;
            if idx != entries.len() {
                return Err(CoreError::Corpus(format!(
                    "vocab.tsv line {}: indices not dense",
                    lineno + 1
                )));
            }
            entries.push((word.to_string(), df));
        }
        if entries.is_empty() {
            return Err(CoreError::Corpus("vocab.tsv is empty".into()));
        }
        Ok(Vocabulary::from_entries(entries))
    }
}

/// Train/test partition plus the bookkeeping produced while building it.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    /// Sorted by timestamp ascending, ties broken by review_index.
    pub train: Vec<TokenizedReview>,
    pub test: Vec<TokenizedReview>,
    pub background_user_key: u32,
    pub dropped_counts: BTreeMap<String, u64>,
}

impl CorpusSplit {
    /// Review indices of each user's training chain, in timestamp order,
    /// indexed by dense user key.
    pub fn user_chains(&self) -> Vec<Vec<usize>> {
        let max_key = self
            .train
            .iter()
            .map(|r| r.user_key)
            .max()
            .unwrap_or(0) as usize;
        let mut chains = vec![Vec::new(); max_key + 1];
        for (i, r) in self.train.iter().enumerate() {
            chains[r.user_key as usize].push(i);
        }
        chains
    }
}

/// Maps the caller's JSON field names onto the quintuple.
///
/// `helpful` names either a two-element `[x, y]` array, or the helpful-vote
/// count when `total` names the total-vote field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMap {
    pub user: String,
    pub item: String,
    pub rating: String,
    pub time: String,
    pub text: String,
    pub helpful: String,
    pub total: Option<String>,
}

impl Default for FieldMap {
    fn default() -> Self {
        FieldMap {
            user: "user".into(),
            item: "item".into(),
            rating: "rating".into(),
            time: "time".into(),
            text: "text".into(),
            helpful: "helpful".into(),
            total: None,
        }
    }
}

impl FieldMap {
    /// Parses `"user=reviewerID,item=asin,helpful=helpful"`; unset keys keep defaults.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut map = FieldMap::default();
        for pair in spec.split(',').filter(|p| !p.trim().is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("schema entry `{pair}` is not KEY=VALUE")))?;
            let value = value.trim().to_string();
            match key.trim() {
                "user" => map.user = value,
                "item" => map.item = value,
                "rating" => map.rating = value,
                "time" => map.time = value,
                "text" => map.text = value,
                "helpful" => map.helpful = value,
                "total" => map.total = Some(value),
                other => {
                    return Err(CoreError::Config(format!("unknown schema key `{other}`")));
                }
            }
        }
        Ok(map)
    }
}

/// Per-reason drop tallies and sample offenders from ingestion.
#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestReport {
    pub parsed: u64,
    pub dropped: BTreeMap<String, u64>,
    pub sample_offenders: Vec<String>,
}

impl IngestReport {
    fn drop_line(&mut self, reason: &str, lineno: usize) {
        *self.dropped.entry(reason.to_string()).or_insert(0) += 1;
        if self.sample_offenders.len() < 5 {
            self.sample_offenders.push(format!("line {}: {}", lineno, reason));
        }
    }
}

fn field<'a>(value: &'a serde_json::Value, name: &str) -> Option<&'a serde_json::Value> {
    let v = value.get(name)?;
    if v.is_null() {
        None
    } else {
        Some(v)
    }
}

fn parse_line(value: &serde_json::Value, schema: &FieldMap) -> std::result::Result<Review, &'static str> {
    let user = field(value, &schema.user)
        .and_then(|v| v.as_str())
        .ok_or("missing_field")?;
    let item = field(value, &schema.item)
        .and_then(|v| v.as_str())
        .ok_or("missing_field")?;
    let rating = field(value, &schema.rating)
        .and_then(|v| v.as_f64())
        .ok_or("missing_field")?;
    let timestamp = field(value, &schema.time)
        .and_then(|v| v.as_i64().or_else(|| v.as_f64().map(|f| f as i64)))
        .ok_or("missing_field")?;
    let text = field(value, &schema.text)
        .and_then(|v| v.as_str())
        .ok_or("missing_field")?;
    let (helpful, total) = match &schema.total {
        Some(total_name) => {
            let x = field(value, &schema.helpful)
                .and_then(|v| v.as_u64())
                .ok_or("missing_field")?;
            let y = field(value, total_name)
                .and_then(|v| v.as_u64())
                .ok_or("missing_field")?;
            (x, y)
        }
        None => {
            let pair = field(value, &schema.helpful)
                .and_then(|v| v.as_array())
                .ok_or("missing_field")?;
            if pair.len() != 2 {
                return Err("invalid_votes");
            }
            let x = pair[0].as_u64().ok_or("invalid_votes")?;
            let y = pair[1].as_u64().ok_or("invalid_votes")?;
            (x, y)
        }
    };
    if helpful > total {
        return Err("invalid_votes");
    }
    Ok(Review {
        user_id: user.to_string(),
        item_id: item.to_string(),
        rating,
        timestamp,
        text: text.to_string(),
        helpful_votes: helpful,
        total_votes: total,
    })
}

/// Reads one JSON object per line, skipping and tallying malformed lines.
///
/// Fails when the file is unreadable or when more than half of the non-empty
/// lines are malformed.
pub fn ingest(path: &Path, schema: &FieldMap) -> Result<(Vec<Review>, IngestReport)> {
    let file = File::open(path).map_err(|e| CoreError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut reviews = Vec::new();
    let mut report = IngestReport::default();
    let mut non_empty = 0u64;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| CoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        non_empty += 1;
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(_) => {
                report.drop_line("bad_json", lineno);
                continue;
            }
        };
        match parse_line(&value, schema) {
            Ok(review) => {
                report.parsed += 1;
                reviews.push(review);
            }
            Err(reason) => report.drop_line(reason, lineno),
        }
    }
    if non_empty == 0 {
        log::warn!("{}: no reviews found in input", path.display());
        return Ok((reviews, report));
    }
    let malformed = non_empty - report.parsed;
    if malformed * 2 > non_empty {
        return Err(CoreError::Corpus(format!(
            "{} of {} lines malformed in {}; offenders: {}",
            malformed,
            non_empty,
            path.display(),
            report.sample_offenders.join("; ")
        )));
    }
    Ok((reviews, report))
}

/// Tokenization knobs. The defaults lowercase, split on non-alphanumeric
/// runs, drop tokens shorter than two characters and remove stopwords.
#[derive(Debug, Clone)]
pub struct TokenizePolicy {
    pub min_token_len: usize,
    pub stopwords: HashSet<String>,
}

impl Default for TokenizePolicy {
    fn default() -> Self {
        TokenizePolicy {
            min_token_len: 2,
            stopwords: builtin_stopwords(),
        }
    }
}

impl TokenizePolicy {
    pub fn without_stopwords() -> Self {
        TokenizePolicy {
            min_token_len: 2,
            stopwords: HashSet::new(),
        }
    }
}

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "all", "also", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "cannot", "could", "did", "do", "does", "doing", "down", "during", "each",
    "few", "for", "from", "further", "had", "has", "have", "having", "he", "her", "here",
    "hers", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just",
    "me", "more", "most", "my", "no", "nor", "not", "now", "of", "off", "on", "once", "only",
    "or", "other", "our", "ours", "out", "over", "own", "same", "she", "should", "so", "some",
    "such", "than", "that", "the", "their", "theirs", "them", "then", "there", "these", "they",
    "this", "those", "through", "to", "too", "under", "until", "up", "very", "was", "we",
    "were", "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with",
    "you", "your", "yours",
];

pub fn builtin_stopwords() -> HashSet<String> {
    STOPWORDS.iter().map(|s| s.to_string()).collect()
}

/// Lowercases and splits on non-alphanumeric runs, then applies the policy filters.
pub fn tokenize(text: &str, policy: &TokenizePolicy) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .filter(|t| t.chars().count() >= policy.min_token_len)
        .filter(|t| !policy.stopwords.contains(*t))
        .map(|t| t.to_string())
        .collect()
}

/// Keeps words with document frequency >= `min_df`; if more than `max_vocab`
/// survive, keeps the highest-df words with lexicographic tie-break.
/// Indices are assigned by descending df, then word order.
pub fn build_vocabulary(docs: &[Vec<String>], min_df: u32, max_vocab: usize) -> Result<Vocabulary> {
    if min_df < 1 {
        return Err(CoreError::Config("min_df must be >= 1".into()));
    }
    let mut df: BTreeMap<&str, u32> = BTreeMap::new();
    for doc in docs {
        let mut seen: HashSet<&str> = HashSet::new();
        for token in doc {
            if seen.insert(token) {
                *df.entry(token).or_insert(0) += 1;
            }
        }
    }
    let mut entries: Vec<(&str, u32)> = df.into_iter().filter(|&(_, d)| d >= min_df).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    entries.truncate(max_vocab);
    if entries.is_empty() {
        return Err(CoreError::Corpus(
            "vocabulary is empty after document-frequency filtering".into(),
        ));
    }
    Ok(Vocabulary::from_entries(
        entries.into_iter().map(|(w, d)| (w.to_string(), d)).collect(),
    ))
}

/// Vote thresholds and grouping knobs for `split_corpus`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub train_min_votes: u64,
    pub test_min_votes: u64,
    pub test_per_user: usize,
    pub longtail_threshold: usize,
    pub min_df: u32,
    pub max_vocab: usize,
}

impl Default for SplitParams {
    fn default() -> Self {
        SplitParams {
            train_min_votes: 20,
            test_min_votes: 5,
            test_per_user: 3,
            longtail_threshold: 10,
            min_df: 5,
            max_vocab: 50_000,
        }
    }
}

struct Selected {
    input_pos: usize,
    is_test: bool,
}

/// Applies vote filters, withholds each user's most recent reviews as test
/// data, tokenizes against a train-built vocabulary and folds long-tail
/// users into the background user.
pub fn split_corpus(
    reviews: &[Review],
    policy: &TokenizePolicy,
    params: &SplitParams,
) -> Result<(CorpusSplit, Vocabulary)> {
    if params.train_min_votes < 1 || params.test_min_votes < 1 {
        return Err(CoreError::Config("vote thresholds must be >= 1".into()));
    }
    let mut dropped: BTreeMap<String, u64> = BTreeMap::new();
    let mut drop = |reason: &str, n: u64| {
        if n > 0 {
            *dropped.entry(reason.to_string()).or_insert(0) += n;
        }
    };

    // Per-user selection: most recent adequately-voted reviews go to test,
    // the rest to train when they clear the training vote threshold.
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut zero_votes = 0u64;
    for (pos, review) in reviews.iter().enumerate() {
        if review.total_votes == 0 {
            zero_votes += 1;
            continue;
        }
        by_user.entry(&review.user_id).or_default().push(pos);
    }
    drop("zero_votes", zero_votes);

    let mut selected: Vec<Selected> = Vec::new();
    let mut below_train = 0u64;
    for positions in by_user.values_mut() {
        positions.sort_by_key(|&p| (reviews[p].timestamp, p));
        let eligible: Vec<usize> = positions
            .iter()
            .copied()
            .filter(|&p| reviews[p].total_votes >= params.test_min_votes)
            .collect();
        let test_set: HashSet<usize> = eligible
            .iter()
            .rev()
            .take(params.test_per_user)
            .copied()
            .collect();
        for &p in positions.iter() {
            if test_set.contains(&p) {
                selected.push(Selected {
                    input_pos: p,
                    is_test: true,
                });
            } else if reviews[p].total_votes >= params.train_min_votes {
                selected.push(Selected {
                    input_pos: p,
                    is_test: false,
                });
            } else {
                below_train += 1;
            }
        }
    }
    drop("below_train_votes", below_train);

    // Vocabulary from training text only.
    let train_docs: Vec<Vec<String>> = selected
        .iter()
        .filter(|s| !s.is_test)
        .map(|s| tokenize(&reviews[s.input_pos].text, policy))
        .collect();
    let vocab = build_vocabulary(&train_docs, params.min_df, params.max_vocab)?;

    // Index tokens; drop reviews that end up with no in-vocabulary tokens.
    let mut indexed: Vec<(usize, bool, Vec<u32>)> = Vec::with_capacity(selected.len());
    let mut empty_train = 0u64;
    let mut empty_test = 0u64;
    for s in &selected {
        let tokens: Vec<u32> = tokenize(&reviews[s.input_pos].text, policy)
            .iter()
            .filter_map(|t| vocab.index_of(t))
            .collect();
        if tokens.is_empty() {
            if s.is_test {
                empty_test += 1;
            } else {
                empty_train += 1;
            }
            continue;
        }
        indexed.push((s.input_pos, s.is_test, tokens));
    }
    drop("empty_tokens_train", empty_train);
    drop("empty_tokens_test", empty_test);

    // Long-tail grouping on final train counts; background user is key 0.
    let mut train_count: BTreeMap<&str, usize> = BTreeMap::new();
    for (pos, is_test, _) in &indexed {
        if !*is_test {
            *train_count.entry(&reviews[*pos].user_id).or_insert(0) += 1;
        }
    }
    let longtail = |user: &str| {
        train_count.get(user).copied().unwrap_or(0) < params.longtail_threshold
    };

    indexed.sort_by_key(|&(pos, _, _)| (reviews[pos].timestamp, pos));

    let mut user_keys: HashMap<&str, u32> = HashMap::new();
    let mut item_keys: HashMap<&str, u32> = HashMap::new();
    let mut next_user = BACKGROUND_USER_KEY + 1;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for pass in [false, true] {
        // Train reviews first so keys are anchored in training data.
        for (pos, is_test, tokens) in indexed.iter().filter(|&&(_, t, _)| t == pass) {
            let review = &reviews[*pos];
            let user_key = if longtail(&review.user_id) {
                BACKGROUND_USER_KEY
            } else {
                *user_keys.entry(&review.user_id).or_insert_with(|| {
                    let k = next_user;
                    next_user += 1;
                    k
                })
            };
            let next_item = item_keys.len() as u32;
            let item_key = *item_keys.entry(&review.item_id).or_insert(next_item);
            let out = TokenizedReview {
                review_index: *pos as u64,
                user_key,
                item_key,
                tokens: tokens.clone(),
                rating: review.rating,
                timestamp: review.timestamp,
                helpfulness: review.helpfulness().expect("zero-vote reviews were filtered"),
            };
            if *is_test {
                test.push(out);
            } else {
                train.push(out);
            }
        }
    }
    if train.is_empty() {
        return Err(CoreError::Corpus(
            "training split is empty; lower the vote thresholds or check the input".into(),
        ));
    }

    Ok((
        CorpusSplit {
            train,
            test,
            background_user_key: BACKGROUND_USER_KEY,
            dropped_counts: dropped,
        },
        vocab,
    ))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item)
            .map_err(|e| CoreError::Corpus(format!("serialize: {e}")))?;
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| CoreError::io(path, e))?;
    }
    out.flush().map_err(|e| CoreError::io(path, e))
}

fn read_jsonl(path: &Path) -> Result<Vec<TokenizedReview>> {
    let file = File::open(path).map_err(|e| CoreError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: TokenizedReview = serde_json::from_str(&line).map_err(|e| {
            CoreError::Corpus(format!("{} line {}: {}", path.display(), i + 1, e))
        })?;
        items.push(item);
    }
    Ok(items)
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitMeta {
    background_user_key: u32,
    dropped_counts: BTreeMap<String, u64>,
}

/// Writes train.jsonl, test.jsonl, vocab.tsv and split_meta.json into `dir`.
pub fn save_split(dir: &Path, split: &CorpusSplit, vocab: &Vocabulary) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    write_jsonl(&dir.join("train.jsonl"), &split.train)?;
    write_jsonl(&dir.join("test.jsonl"), &split.test)?;
    let vocab_path = dir.join("vocab.tsv");
    let file = File::create(&vocab_path).map_err(|e| CoreError::io(&vocab_path, e))?;
    vocab
        .write_tsv(BufWriter::new(file))
        .map_err(|e| CoreError::io(&vocab_path, e))?;
    let meta = SplitMeta {
        background_user_key: split.background_user_key,
        dropped_counts: split.dropped_counts.clone(),
    };
    let meta_path = dir.join("split_meta.json");
    let body = serde_json::to_string_pretty(&meta)
        .map_err(|e| CoreError::Corpus(format!("serialize split meta: {e}")))?;
    std::fs::write(&meta_path, body).map_err(|e| CoreError::io(&meta_path, e))
}

/// Loads a directory written by `save_split`.
pub fn load_split(dir: &Path) -> Result<(CorpusSplit, Vocabulary)> {
    let train = read_jsonl(&dir.join("train.jsonl"))?;
    let test = read_jsonl(&dir.join("test.jsonl"))?;
    let vocab_path = dir.join("vocab.tsv");
    let file = File::open(&vocab_path).map_err(|e| CoreError::io(&vocab_path, e))?;
    let vocab = Vocabulary::read_tsv(BufReader::new(file))?;
    let meta_path = dir.join("split_meta.json");
    let body = std::fs::read_to_string(&meta_path).map_err(|e| CoreError::io(&meta_path, e))?;
    let meta: SplitMeta = serde_json::from_str(&body)
        .map_err(|e| CoreError::Corpus(format!("{}: {}", meta_path.display(), e)))?;
    let w = vocab.len() as u32;
    for r in train.iter().chain(test.iter()) {
        if r.tokens.iter().any(|&t| t >= w) {
            return Err(CoreError::Corpus(format!(
                "review {} has a token index out of vocabulary range",
                r.review_index
            )));
        }
    }
    Ok((
        CorpusSplit {
            train,
            test,
            background_user_key: meta.background_user_key,
            dropped_counts: meta.dropped_counts,
        },
        vocab,
    ))
}
