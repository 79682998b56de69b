//! Interaction logs → sessions → vocabulary and chronological split →
//! supervised `(prefix, next item)` examples.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogFormat {
    /// `user \t item \t timestamp [\t rating [\t session]]`
    Tsv,
    /// `UserID::MovieID::Rating::Timestamp`
    MovielensDat,
}

impl FromStr for LogFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(LogFormat::Tsv),
            "movielens-dat" => Ok(LogFormat::MovielensDat),
            other => Err(Error::Config(format!(
                "unknown format `{other}` (expected tsv or movielens-dat)"
            ))),
        }
    }
}

impl fmt::Display for LogFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogFormat::Tsv => "tsv",
            LogFormat::MovielensDat => "movielens-dat",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionEvent {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
    pub rating: Option<f64>,
    pub session_id: Option<String>,
}

impl InteractionEvent {
    pub fn new(user_id: &str, item_id: &str, timestamp: i64) -> Self {
        InteractionEvent {
            user_id: user_id.to_string(),
            item_id: item_id.to_string(),
            timestamp,
            rating: None,
            session_id: None,
        }
    }
}

/// Parsed events plus the 1-based line numbers that were skipped as malformed.
#[derive(Clone, Debug, Default)]
pub struct InteractionLog {
    pub events: Vec<InteractionEvent>,
    pub malformed_lines: Vec<usize>,
}

/// Reads a log file. Up to `tolerance` malformed lines are skipped and
/// reported; one more is an error carrying its line number.
pub fn load_interactions(path: &Path, format: LogFormat, tolerance: usize) -> Result<InteractionLog> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text, format, tolerance, path)
}

pub fn parse_interactions(text: &str, format: LogFormat, tolerance: usize, origin: &Path) -> Result<InteractionLog> {
    let mut log = InteractionLog::default();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || (format == LogFormat::Tsv && line.starts_with('#')) {
            continue;
        }
        let parsed = match format {
            LogFormat::Tsv => parse_tsv_line(line),
            LogFormat::MovielensDat => parse_dat_line(line),
        };
        match parsed {
            Ok(ev) => log.events.push(ev),
            Err(message) => {
                log.malformed_lines.push(lineno);
                if log.malformed_lines.len() > tolerance {
                    return Err(Error::Parse {
                        path: PathBuf::from(origin),
                        line: lineno,
                        message,
                    });
                }
            }
        }
    }
    Ok(log)
}

fn parse_timestamp(s: &str) -> std::result::Result<i64, String> {
    let ts: i64 = s.trim().parse().map_err(|_| format!("bad timestamp `{s}`"))?;
    if ts < 0 {
        return Err(format!("negative timestamp {ts}"));
    }
    Ok(ts)
}

fn parse_rating(s: &str) -> std::result::Result<Option<f64>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| format!("bad rating `{s}`"))
}

fn parse_tsv_line(line: &str) -> std::result::Result<InteractionEvent, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    if !(3..=5).contains(&cols.len()) {
        return Err(format!("expected 3 to 5 tab-separated columns, found {}", cols.len()));
    }
    let (user, item) = (cols[0].trim(), cols[1].trim());
    if item.is_empty() {
        return Err("empty item id".into());
    }
    let session_id = cols
        .get(4)
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(str::to_string);
    Ok(InteractionEvent {
        user_id: user.to_string(),
        item_id: item.to_string(),
        timestamp: parse_timestamp(cols[2])?,
        rating: match cols.get(3) {
            Some(r) => parse_rating(r)?,
            None => None,
        },
        session_id,
    })
}

fn parse_dat_line(line: &str) -> std::result::Result<InteractionEvent, String> {
    let cols: Vec<&str> = line.split("::").collect();
    if cols.len() != 4 {
        return Err(format!("expected 4 `::`-separated fields, found {}", cols.len()));
    }
    let item = cols[1].trim();
    if item.is_empty() {
        return Err("empty item id".into());
    }
    Ok(InteractionEvent {
        user_id: cols[0].trim().to_string(),
        item_id: item.to_string(),
        timestamp: parse_timestamp(cols[3])?,
        rating: parse_rating(cols[2])?,
        session_id: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionPolicy {
    /// One session per (user, UTC calendar day).
    Daily,
    /// Trust the log's session-id column.
    PreSessionized,
}

impl FromStr for SessionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "daily" => Ok(SessionPolicy::Daily),
            "pre-sessionized" => Ok(SessionPolicy::PreSessionized),
            other => Err(Error::Config(format!(
                "unknown sessionization policy `{other}` (expected daily or pre-sessionized)"
            ))),
        }
    }
}

/// A session before vocabulary encoding: raw item ids in time order.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSession {
    pub user_id: String,
    pub items: Vec<String>,
    pub start_time: i64,
}

/// Groups events into sessions. Sessions come out in order of their first
/// event in the input; within a session events are stably sorted by time.
///
/// Under [`SessionPolicy::PreSessionized`] an event without a session id
/// falls back to its (user, day) group.
pub fn sessionize(events: &[InteractionEvent], policy: SessionPolicy) -> Vec<RawSession> {
    #[derive(Hash, PartialEq, Eq)]
    enum Key<'a> {
        Day(&'a str, i64),
        Explicit(&'a str),
    }

    let mut slots: HashMap<Key<'_>, usize> = HashMap::new();
    let mut groups: Vec<Vec<&InteractionEvent>> = Vec::new();
    for ev in events {
        let key = match (&ev.session_id, policy) {
            (Some(sid), SessionPolicy::PreSessionized) => Key::Explicit(sid),
            _ => Key::Day(&ev.user_id, ev.timestamp.div_euclid(SECONDS_PER_DAY)),
        };
        let slot = *slots.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(ev);
    }

    groups
        .into_iter()
        .map(|mut g| {
            g.sort_by_key(|e| e.timestamp);
            RawSession {
                user_id: g[0].user_id.clone(),
                start_time: g[0].timestamp,
                items: g.iter().map(|e| e.item_id.clone()).collect(),
            }
        })
        .collect()
}

/// Item id ↔ dense index map, plus the reserved tokens that sit above the
/// item range in the model's token space:
///
/// `[0, n_items)` items, then `PAD`, `USER`, `SEP`, `UNK`, then one `CAT(c)`
/// token per known category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct ItemVocab {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    categories: Vec<String>,
    item_category: Vec<Option<usize>>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    items: Vec<String>,
    categories: Vec<String>,
    item_category: Vec<Option<usize>>,
}

impl From<VocabRepr> for ItemVocab {
    fn from(r: VocabRepr) -> Self {
        let mut v = ItemVocab::from_ids(r.items);
        v.categories = r.categories;
        v.item_category = r.item_category;
        v.item_category.resize(v.ids.len(), None);
        v
    }
}

impl From<ItemVocab> for VocabRepr {
    fn from(v: ItemVocab) -> Self {
        VocabRepr {
            items: v.ids,
            categories: v.categories,
            item_category: v.item_category,
        }
    }
}

impl ItemVocab {
    /// Indices follow the order of `ids`; duplicates keep their first index.
    pub fn from_ids<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = ItemVocab {
            ids: Vec::new(),
            index: HashMap::new(),
            categories: Vec::new(),
            item_category: Vec::new(),
        };
        for id in ids {
            let id = id.into();
            if !v.index.contains_key(&id) {
                v.index.insert(id.clone(), v.ids.len());
                v.ids.push(id);
                v.item_category.push(None);
            }
        }
        v
    }

    pub fn n_items(&self) -> usize {
        self.ids.len()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Index of `id`, or the UNK token when it was never seen in training.
    pub fn encode(&self, id: &str) -> usize {
        self.index_of(id).unwrap_or_else(|| self.unk())
    }

    pub fn id_of(&self, idx: usize) -> Option<&str> {
        self.ids.get(idx).map(String::as_str)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn pad(&self) -> usize {
        self.n_items()
    }

    pub fn user(&self) -> usize {
        self.n_items() + 1
    }

    pub fn sep(&self) -> usize {
        self.n_items() + 2
    }

    pub fn unk(&self) -> usize {
        self.n_items() + 3
    }

    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn has_categories(&self) -> bool {
        !self.categories.is_empty()
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn category_token(&self, category: usize) -> usize {
        self.n_items() + 4 + category
    }

    /// Category index of an item token; `None` for special tokens and
    /// uncategorized items.
    pub fn category_of(&self, token: usize) -> Option<usize> {
        self.item_category.get(token).copied().flatten()
    }

    /// Size of the full token space (items, specials, categories).
    pub fn n_tokens(&self) -> usize {
        self.n_items() + 4 + self.n_categories()
    }

    /// Attaches an `item_id → category` side table. Categories are numbered in
    /// order of first use by ascending item index; table rows for items
    /// outside the vocabulary are ignored.
    pub fn attach_categories(&mut self, table: &CategoryTable) {
        let mut cat_index: HashMap<&str, usize> = HashMap::new();
        self.categories.clear();
        for (idx, id) in self.ids.iter().enumerate() {
            self.item_category[idx] = table.get(id).map(|c| {
                *cat_index.entry(c).or_insert_with(|| {
                    self.categories.push(c.to_string());
                    self.categories.len() - 1
                })
            });
        }
    }
}

/// `item_id → category` side table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CategoryTable {
    map: HashMap<String, String>,
}

impl CategoryTable {
    pub fn insert(&mut self, item: &str, category: &str) {
        self.map.insert(item.to_string(), category.to_string());
    }

    pub fn get(&self, item: &str) -> Option<&str> {
        self.map.get(item).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Reads a TSV `item_id \t category` table (`#` lines are comments).
pub fn load_category_table(path: &Path) -> Result<CategoryTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table = CategoryTable::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('\t') {
            Some((item, cat)) if !item.trim().is_empty() && !cat.trim().is_empty() => {
                table.insert(item.trim(), cat.trim())
            }
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "expected `item_id<TAB>category`".into(),
                })
            }
        }
    }
    Ok(table)
}

/// An encoded session: item indices (or UNK) in time order.
#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub user_id: String,
    pub items: Vec<usize>,
    pub start_time: i64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions {:?} must be in [0,1] and sum to 1",
                parts
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SplitDataset {
    pub train: Vec<Session>,
    pub valid: Vec<Session>,
    pub test: Vec<Session>,
    pub vocab: ItemVocab,
    /// Distinct raw item ids across all three splits (the vocabulary only
    /// covers training items).
    pub n_distinct_items: usize,
}

pub const MIN_SESSIONS_TO_SPLIT: usize = 10;

/// Orders sessions by start time (stable), cuts them by count into
/// `floor(train·n)`, `floor(valid·n)` and the remainder, and builds the
/// vocabulary from the training part only. Later items the vocabulary has
/// not seen become UNK.
pub fn chronological_split(mut sessions: Vec<RawSession>, fractions: SplitFractions) -> Result<SplitDataset> {
    fractions.validate()?;
    let n = sessions.len();
    if n < MIN_SESSIONS_TO_SPLIT {
        return Err(Error::domain(format!(
            "need at least {MIN_SESSIONS_TO_SPLIT} sessions to split, got {n}"
        )));
    }
    sessions.sort_by_key(|s| s.start_time);

    let n_train = (fractions.train * n as f64 + 1e-9).floor() as usize;
    let n_valid = ((fractions.valid * n as f64 + 1e-9).floor() as usize).min(n - n_train);

    let n_distinct_items = {
        let mut seen: HashMap<&str, ()> = HashMap::new();
        for s in &sessions {
            for it in &s.items {
                seen.insert(it, ());
            }
        }
        seen.len()
    };

    let vocab = ItemVocab::from_ids(sessions[..n_train].iter().flat_map(|s| s.items.iter().cloned()));
    let encode = |s: &RawSession| Session {
        user_id: s.user_id.clone(),
        items: s.items.iter().map(|id| vocab.encode(id)).collect(),
        start_time: s.start_time,
    };
    let train = sessions[..n_train].iter().map(encode).collect();
    let valid = sessions[n_train..n_train + n_valid].iter().map(encode).collect();
    let test = sessions[n_train + n_valid..].iter().map(encode).collect();
    Ok(SplitDataset {
        train,
        valid,
        test,
        vocab,
        n_distinct_items,
    })
}

impl SplitDataset {
    pub fn n_sessions(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn all_sessions(&self) -> impl Iterator<Item = &Session> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_items: usize,
    pub n_sessions: usize,
    pub avg_session_length: f64,
    /// Events per distinct item.
    pub density: f64,
}

impl DatasetStats {
    fn from_counts(n_items: usize, n_sessions: usize, total_events: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        DatasetStats {
            n_items,
            n_sessions,
            avg_session_length: ratio(total_events, n_sessions),
            density: ratio(total_events, n_items),
        }
    }

    /// Single-line JSON with keys `n_items, n_sessions, avg_session_length, density`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("stats serialize")
    }
}

pub fn dataset_stats(split: &SplitDataset) -> DatasetStats {
    let total: usize = split.all_sessions().map(|s| s.items.len()).sum();
    DatasetStats::from_counts(split.n_distinct_items, split.n_sessions(), total)
}

/// Same statistics computed straight from sessions, for logs too small to split.
pub fn raw_stats(sessions: &[RawSession]) -> DatasetStats {
    let mut seen: HashSet<&str> = HashSet::new();
    let mut total = 0;
    for s in sessions {
        total += s.items.len();
        seen.extend(s.items.iter().map(String::as_str));
    }
    DatasetStats::from_counts(seen.len(), sessions.len(), total)
}

/// One supervised next-item example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub prefix: Vec<usize>,
    pub target: usize,
}

/// `([x₁..x_t], x_{t+1})` for every `t ≥ min_prefix`.
pub fn make_examples(items: &[usize], min_prefix: usize) -> Vec<Example> {
    let min_prefix = min_prefix.max(1);
    (min_prefix..items.len())
        .map(|t| Example {
            prefix: items[..t].to_vec(),
            target: items[t],
        })
        .collect()
}

pub fn examples_from_sessions(sessions: &[Session]) -> Vec<Example> {
    sessions.iter().flat_map(|s| make_examples(&s.items, 1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(u: &str, i: &str, ts: i64) -> InteractionEvent {
        InteractionEvent::new(u, i, ts)
    }

    #[test]
    fn tsv_and_dat_lines() {
        let log = parse_interactions("u1\ti9\t1000\t4.0\n", LogFormat::Tsv, 0, Path::new("x")).unwrap();
        assert_eq!(log.events.len(), 1);
        let e = &log.events[0];
        assert_eq!(
            (e.user_id.as_str(), e.item_id.as_str(), e.timestamp, e.rating),
            ("u1", "i9", 1000, Some(4.0))
        );

        let log = parse_interactions("1::1193::5::978300760\n", LogFormat::MovielensDat, 0, Path::new("x")).unwrap();
        let e = &log.events[0];
        assert_eq!(
            (e.user_id.as_str(), e.item_id.as_str(), e.timestamp, e.rating),
            ("1", "1193", 978300760, Some(5.0))
        );
    }

    #[test]
    fn empty_input_and_comments() {
        let log = parse_interactions("", LogFormat::Tsv, 0, Path::new("x")).unwrap();
        assert!(log.events.is_empty());
        let log = parse_interactions("# user item ts\nu\ti\t5\n", LogFormat::Tsv, 0, Path::new("x")).unwrap();
        assert_eq!(log.events.len(), 1);
    }

    #[test]
    fn malformed_lines_respect_tolerance() {
        let text = "u\ti\t1\nbroken\nu\ti\tx\nu\tj\t2\n";
        let err = parse_interactions(text, LogFormat::Tsv, 0, Path::new("log.tsv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_interactions(text, LogFormat::Tsv, 1, Path::new("log.tsv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        let log = parse_interactions(text, LogFormat::Tsv, 2, Path::new("log.tsv")).unwrap();
        assert_eq!(log.events.len(), 2);
        assert_eq!(log.malformed_lines, vec![2, 3]);
    }

    #[test]
    fn session_id_column() {
        let log = parse_interactions("u\ta\t1\t\ts1\nu\tb\t2\t3.5\ts2\n", LogFormat::Tsv, 0, Path::new("x")).unwrap();
        assert_eq!(log.events[0].session_id.as_deref(), Some("s1"));
        assert_eq!(log.events[0].rating, None);
        let s = sessionize(&log.events, SessionPolicy::PreSessionized);
        assert_eq!(s.len(), 2);
        assert_eq!(sessionize(&log.events, SessionPolicy::Daily).len(), 1);
    }

    #[test]
    fn daily_sessions() {
        let s = sessionize(&[ev("u", "a", 100), ev("u", "b", 200)], SessionPolicy::Daily);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].items.len(), 2);

        let s = sessionize(
            &[ev("u", "a", SECONDS_PER_DAY - 60), ev("u", "b", SECONDS_PER_DAY + 60)],
            SessionPolicy::Daily,
        );
        assert_eq!(s.len(), 2);

        let mut events = Vec::new();
        for u in ["a", "b", "c"] {
            for d in 0..2 {
                events.push(ev(u, "x", d * SECONDS_PER_DAY + 5));
            }
        }
        let s = sessionize(&events, SessionPolicy::Daily);
        assert_eq!(s.len(), 6);
        assert_eq!(raw_stats(&s).avg_session_length, 1.0);
    }

    #[test]
    fn sessions_sort_by_time_with_stable_ties() {
        let s = sessionize(
            &[ev("u", "late", 50), ev("u", "tie1", 10), ev("u", "tie2", 10)],
            SessionPolicy::Daily,
        );
        assert_eq!(s[0].items, vec!["tie1", "tie2", "late"]);
        assert_eq!(s[0].start_time, 10);
    }

    fn raw(n: usize) -> Vec<RawSession> {
        (0..n)
            .map(|i| RawSession {
                user_id: format!("u{i}"),
                items: vec![format!("i{}", i % 7), format!("i{}", (i + 1) % 7)],
                start_time: (n - i) as i64,
            })
            .collect()
    }

    #[test]
    fn split_sizes() {
        let sizes = |n| {
            let s = chronological_split(raw(n), SplitFractions::default()).unwrap();
            (s.train.len(), s.valid.len(), s.test.len())
        };
        assert_eq!(sizes(10), (8, 1, 1));
        assert_eq!(sizes(100), (80, 10, 10));
        assert_eq!(sizes(25), (20, 2, 3));
        assert!(matches!(
            chronological_split(raw(9), SplitFractions::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn split_is_chronological_and_maps_unseen_to_unk() {
        let mut sessions = raw(20);
        sessions[0].items.push("never-in-train".into());
        let split = chronological_split(sessions, SplitFractions::default()).unwrap();
        let max_train = split.train.iter().map(|s| s.start_time).max().unwrap();
        let min_test = split.test.iter().map(|s| s.start_time).min().unwrap();
        assert!(max_train <= min_test);
        let unk = split.vocab.unk();
        // session 0 starts last, so it lands in test.
        assert!(split.test.iter().any(|s| s.items.contains(&unk)));
        assert!(split
            .train
            .iter()
            .all(|s| s.items.iter().all(|&i| i < split.vocab.n_items())));
        assert_eq!(split.n_distinct_items, 8);
    }

    #[test]
    fn stats_examples() {
        let one = vec![RawSession {
            user_id: "u".into(),
            items: vec!["a".into(), "b".into(), "c".into()],
            start_time: 0,
        }];
        let st = raw_stats(&one);
        assert_eq!((st.n_items, st.n_sessions, st.avg_session_length), (3, 1, 3.0));
        assert_eq!(st.density, 1.0);

        let two = vec![
            RawSession {
                user_id: "u".into(),
                items: vec!["a".into(), "b".into()],
                start_time: 0,
            },
            RawSession {
                user_id: "v".into(),
                items: vec!["a".into(), "b".into(), "c".into(), "d".into()],
                start_time: 1,
            },
        ];
        assert_eq!(raw_stats(&two).avg_session_length, 3.0);
        let json = raw_stats(&two).to_json();
        assert_eq!(
            json,
            r#"{"n_items":4,"n_sessions":2,"avg_session_length":3.0,"density":1.5}"#
        );
    }

    #[test]
    fn examples_per_split_point() {
        let ex = make_examples(&[1, 2, 3], 1);
        assert_eq!(
            ex,
            vec![
                Example {
                    prefix: vec![1],
                    target: 2
                },
                Example {
                    prefix: vec![1, 2],
                    target: 3
                }
            ]
        );
        assert!(make_examples(&[1], 1).is_empty());
        assert_eq!(make_examples(&[0, 1, 2, 3, 4, 5], 1).len(), 5);
        assert_eq!(make_examples(&[0, 1, 2, 3], 2).len(), 2);
    }

    #[test]
    fn vocab_layout_and_categories() {
        let mut v = ItemVocab::from_ids(["laptop", "mouse", "shirt"]);
        assert_eq!((v.pad(), v.user(), v.sep(), v.unk()), (3, 4, 5, 6));
        assert_eq!(v.encode("nope"), v.unk());
        let mut t = CategoryTable::default();
        t.insert("laptop", "electronics");
        t.insert("mouse", "electronics");
        t.insert("shirt", "clothing");
        v.attach_categories(&t);
        assert_eq!(v.categories(), &["electronics".to_string(), "clothing".to_string()]);
        assert_eq!(v.category_of(1), Some(0));
        assert_eq!(v.category_token(1), 8);
        assert_eq!(v.n_tokens(), 9);
        let json = serde_json::to_string(&v).unwrap();
        let back: ItemVocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn invalid_fractions_rejected() {
        let f = SplitFractions {
            train: 0.8,
            valid: 0.3,
            test: 0.1,
        };
        assert!(matches!(chronological_split(raw(20), f), Err(Error::Config(_))));
    }
}
