//! Trains on a synthetic deterministic Markov log and compares against the
//! baselines.
use std::time::Instant;

use duip_core::data::{chronological_split, sessionize, SessionPolicy, SplitFractions};
use duip_core::eval::{compare, metrics_table, MostPop, Recommender, Sknn, DEFAULT_NEIGHBORS};
use duip_core::synthetic::{markov_chain, SyntheticConfig};
use duip_core::trainer::{train_with_log, TrainConfig};

fn main() -> duip_core::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let log = markov_chain(&SyntheticConfig::default())?;
    let split = chronological_split(sessionize(&log.events, SessionPolicy::Daily), SplitFractions::default())?;
    let config = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let report = train_with_log(&config, &split)?;
    print!("{}", report.log_csv());
    println!("trained in {:.1?}", t0.elapsed());
    let n = split.vocab.n_items();
    let mp = MostPop::fit(&split.train, n);
    let knn = Sknn::fit(&split.train, n, DEFAULT_NEIGHBORS)?;
    let models: Vec<(&str, &dyn Recommender)> =
        vec![("DUIP", &report.checkpoint.model), ("MostPop", &mp), ("SKNN", &knn)];
    print!("{}", metrics_table(&compare(&models, &split.test, n, &[1, 5])?));
    Ok(())
}
