//! Seeded synthetic interaction logs for learnability checks.
//!
//! Each session belongs to its own user and day, so daily sessionization
//! recovers the generated sessions exactly and in generation order.

use std::fmt::Write as _;

use crate::data::InteractionEvent;
use crate::error::{Error, Result};
use crate::rng::Rng;

const DAY: i64 = 86_400;
const BASE_TIME: i64 = 1_000_000_000 - 1_000_000_000 % DAY;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n_items: usize,
    pub n_sessions: usize,
    /// Inclusive session-length bounds.
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_items: 50,
            n_sessions: 2000,
            min_len: 3,
            max_len: 10,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticLog {
    pub events: Vec<InteractionEvent>,
    /// Generated sessions as raw item numbers, in generation order.
    pub sessions: Vec<Vec<usize>>,
    /// Successor tables, one per regime: `successors[r][a]` follows `a`.
    pub successors: Vec<Vec<usize>>,
    /// Index within each session of the first item produced by the second
    /// regime (two-regime logs only).
    pub switch_at: Vec<Option<usize>>,
}

impl SyntheticLog {
    /// `user\titem\ttimestamp` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let _ = writeln!(out, "{}\t{}\t{}", e.user_id, e.item_id, e.timestamp);
        }
        out
    }
}

pub fn item_id(k: usize) -> String {
    format!("item{k:03}")
}

pub fn user_id(s: usize) -> String {
    format!("user{s:05}")
}

/// Session number encoded in a generated user id.
pub fn session_number(user: &str) -> Option<usize> {
    user.strip_prefix("user")?.parse().ok()
}

/// Successor table of a uniformly random permutation with a single cycle
/// through all `n` items, so no item maps to itself.
pub fn single_cycle(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut succ = vec![0; n];
    for i in 0..n {
        succ[order[i]] = order[(i + 1) % n];
    }
    succ
}

fn check(cfg: &SyntheticConfig, min_len: usize) -> Result<()> {
    if cfg.n_items < 2 || cfg.n_sessions == 0 {
        return Err(Error::domain("need at least 2 items and 1 session"));
    }
    if cfg.min_len < min_len || cfg.max_len < cfg.min_len {
        return Err(Error::domain(format!(
            "session length bounds [{}, {}] invalid (minimum {min_len})",
            cfg.min_len, cfg.max_len
        )));
    }
    Ok(())
}

fn emit(sessions: Vec<Vec<usize>>, successors: Vec<Vec<usize>>, switch_at: Vec<Option<usize>>) -> SyntheticLog {
    let mut events = Vec::new();
    for (s, items) in sessions.iter().enumerate() {
        let start = BASE_TIME + s as i64 * DAY;
        for (j, &it) in items.iter().enumerate() {
            events.push(InteractionEvent::new(&user_id(s), &item_id(it), start + 60 * j as i64));
        }
    }
    SyntheticLog {
        events,
        sessions,
        successors,
        switch_at,
    }
}

/// First-order Markov chain with deterministic transitions along one random
/// cycle; each session starts at a uniformly random item.
pub fn markov_chain(cfg: &SyntheticConfig) -> Result<SyntheticLog> {
    check(cfg, 2)?;
    let mut rng = Rng::new(cfg.seed);
    let succ = single_cycle(cfg.n_items, &mut rng);
    let sessions = (0..cfg.n_sessions)
        .map(|_| {
            let len = cfg.min_len + rng.below(cfg.max_len - cfg.min_len + 1);
            let mut items = vec![rng.below(cfg.n_items)];
            while items.len() < len {
                items.push(succ[*items.last().unwrap()]);
            }
            items
        })
        .collect();
    Ok(emit(sessions, vec![succ], vec![None; cfg.n_sessions]))
}

/// Two deterministic regimes with independent random cycles. Every session
/// switches from the first to the second at a uniformly drawn index in
/// `[2, len - 2]`; items from that index on follow the second regime.
pub fn two_regime(cfg: &SyntheticConfig) -> Result<SyntheticLog> {
    check(cfg, 4)?;
    let mut rng = Rng::new(cfg.seed);
    let first = single_cycle(cfg.n_items, &mut rng);
    let second = single_cycle(cfg.n_items, &mut rng);
    let mut sessions = Vec::with_capacity(cfg.n_sessions);
    let mut switch_at = Vec::with_capacity(cfg.n_sessions);
    for _ in 0..cfg.n_sessions {
        let len = cfg.min_len + rng.below(cfg.max_len - cfg.min_len + 1);
        let switch = 2 + rng.below(len - 3);
        let mut items = vec![rng.below(cfg.n_items)];
        while items.len() < len {
            let prev = *items.last().unwrap();
            items.push(if items.len() < switch {
                first[prev]
            } else {
                second[prev]
            });
        }
        sessions.push(items);
        switch_at.push(Some(switch));
    }
    Ok(emit(sessions, vec![first, second], switch_at))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sessionize, SessionPolicy};

    #[test]
    fn single_cycle_visits_everything() {
        let succ = single_cycle(50, &mut Rng::new(1));
        let mut a = 0;
        let mut seen = [false; 50];
        for _ in 0..50 {
            assert!(!seen[a]);
            seen[a] = true;
            a = succ[a];
        }
        assert_eq!(a, 0);
    }

    #[test]
    fn markov_sessions_follow_successor() {
        let log = markov_chain(&SyntheticConfig::default()).unwrap();
        assert_eq!(log.sessions.len(), 2000);
        for s in &log.sessions {
            assert!((3..=10).contains(&s.len()));
            for w in s.windows(2) {
                assert_eq!(w[1], log.successors[0][w[0]]);
            }
        }
        let again = markov_chain(&SyntheticConfig::default()).unwrap();
        assert_eq!(again.events, log.events);
    }

    #[test]
    fn daily_sessionize_recovers_sessions() {
        let cfg = SyntheticConfig {
            n_sessions: 30,
            ..SyntheticConfig::default()
        };
        let log = two_regime(&SyntheticConfig { min_len: 5, ..cfg }).unwrap();
        let raw = sessionize(&log.events, SessionPolicy::Daily);
        assert_eq!(raw.len(), 30);
        for (r, s) in raw.iter().zip(&log.sessions) {
            let want: Vec<String> = s.iter().map(|&i| item_id(i)).collect();
            assert_eq!(r.items, want);
            assert_eq!(session_number(&r.user_id).map(|n| &log.sessions[n]), Some(s));
        }
    }

    #[test]
    fn two_regime_switches_once() {
        let cfg = SyntheticConfig {
            min_len: 5,
            n_sessions: 200,
            ..SyntheticConfig::default()
        };
        let log = two_regime(&cfg).unwrap();
        for (s, sw) in log.sessions.iter().zip(&log.switch_at) {
            let sw = sw.unwrap();
            assert!(sw >= 2 && sw <= s.len() - 2);
            for j in 1..s.len() {
                let regime = usize::from(j >= sw);
                assert_eq!(s[j], log.successors[regime][s[j - 1]]);
            }
        }
        assert!(two_regime(&SyntheticConfig { min_len: 3, ..cfg }).is_err());
    }
}
