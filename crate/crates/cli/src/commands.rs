use std::fs;
use std::io::Write as _;
use std::path::Path;

use duip_core::checkpoint::{load_checkpoint, save_checkpoint};
use duip_core::data::{
    chronological_split, dataset_stats, load_category_table, load_interactions, raw_stats, sessionize, LogFormat,
    RawSession, SplitDataset, MIN_SESSIONS_TO_SPLIT,
};
use duip_core::eval::{compare, metrics_csv, metrics_table, MostPop, OracleRecommender, Recommender, Sknn};
use duip_core::trainer::train_with_log;
use duip_core::Error;

use crate::config::{require_file, RunConfig};
use crate::CliError;

pub const CHECKPOINT_FILE: &str = "model.duip";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.csv";

const ML1M_SESSIONS: f64 = 784_860.0;
const ML1M_AVG_LEN: f64 = 6.85;

fn load_sessions(cfg: &RunConfig) -> Result<Vec<RawSession>, CliError> {
    let path = cfg.data_path()?;
    let log = load_interactions(path, cfg.format, cfg.tolerance)?;
    if !log.malformed_lines.is_empty() {
        eprintln!(
            "warning: skipped {} malformed line(s) in {} (first at line {})",
            log.malformed_lines.len(),
            path.display(),
            log.malformed_lines[0]
        );
    }
    Ok(sessionize(&log.events, cfg.policy))
}

fn load_split(cfg: &RunConfig) -> Result<SplitDataset, CliError> {
    let mut split = chronological_split(load_sessions(cfg)?, cfg.fractions)?;
    if let Some(path) = &cfg.categories {
        split.vocab.attach_categories(&load_category_table(path)?);
    }
    Ok(split)
}

fn create_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

pub fn stats(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.fractions.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let sessions = load_sessions(cfg)?;
    let stats = if sessions.len() >= MIN_SESSIONS_TO_SPLIT {
        dataset_stats(&chronological_split(sessions, cfg.fractions)?)
    } else {
        raw_stats(&sessions)
    };
    println!("{}", stats.to_json());
    if cfg.format == LogFormat::MovielensDat {
        let pct = |got: f64, want: f64| 100.0 * (got - want) / want;
        eprintln!(
            "reference ML-1M: {} sessions ({:+.2}% vs 784860), avg length {:.2} ({:+.2}% vs 6.85)",
            stats.n_sessions,
            pct(stats.n_sessions as f64, ML1M_SESSIONS),
            stats.avg_session_length,
            pct(stats.avg_session_length, ML1M_AVG_LEN)
        );
    }
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let split = load_split(cfg)?;
    create_out_dir(&cfg.out)?;
    let report = train_with_log(&cfg.train, &split)?;
    let ckpt_path = cfg.out.join(CHECKPOINT_FILE);
    save_checkpoint(&report.checkpoint, &ckpt_path)?;
    write_file(&cfg.out.join(TRAIN_LOG_FILE), &report.log_csv())?;
    println!(
        "epochs run: {}, best epoch: {}, parameters: {}",
        report.log.len(),
        report.checkpoint.epoch,
        report.checkpoint.model.params.n_parameters()
    );
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

pub fn evaluate(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(), CliError> {
    cfg.validate()?;
    if let Some(p) = checkpoint {
        require_file(p)?;
    }
    let split = load_split(cfg)?;
    let n = split.vocab.n_items();
    let names: Vec<String> = if cfg.models.is_empty() {
        let mut v: Vec<String> = vec!["mostpop".into(), "sknn".into()];
        if checkpoint.is_some() {
            v.insert(0, "duip".into());
        }
        v
    } else {
        cfg.models.clone()
    };

    let mut owned: Vec<(&str, Box<dyn Recommender>)> = Vec::new();
    for name in &names {
        match name.as_str() {
            "duip" => {
                let path = checkpoint.ok_or_else(|| CliError::Usage("model `duip` needs --checkpoint".into()))?;
                let ckpt = load_checkpoint(path)?;
                if ckpt.model.vocab != split.vocab {
                    return Err(Error::Config(format!(
                        "checkpoint {} was trained on a different item vocabulary ({} items) than this dataset's \
                         training split ({} items)",
                        path.display(),
                        ckpt.model.n_items(),
                        n
                    ))
                    .into());
                }
                owned.push(("DUIP", Box::new(ckpt.model)));
            }
            "mostpop" => owned.push(("MostPop", Box::new(MostPop::fit(&split.train, n)))),
            "sknn" => owned.push(("SKNN", Box::new(Sknn::fit(&split.train, n, cfg.k_neighbors)?))),
            "oracle" => owned.push(("Oracle", Box::new(OracleRecommender { n_items: n }))),
            other => {
                return Err(CliError::Usage(format!(
                    "unknown model `{other}` (expected duip, mostpop, sknn or oracle)"
                )))
            }
        }
    }
    let models: Vec<(&str, &dyn Recommender)> = owned.iter().map(|(n, r)| (*n, r.as_ref())).collect();
    let reports = compare(&models, &split.test, n, &[1, 5])?;
    for r in &reports {
        r.check_invariants()?;
    }
    create_out_dir(&cfg.out)?;
    write_file(&cfg.out.join(METRICS_FILE), &metrics_csv(&reports))?;
    print!("{}", metrics_table(&reports));
    Ok(())
}

pub fn recommend(checkpoint: &Path, items: &str, k: usize) -> Result<(), CliError> {
    let ids: Vec<&str> = items.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if ids.is_empty() {
        return Err(CliError::Usage("--items needs at least one item id".into()));
    }
    require_file(checkpoint)?;
    let model = load_checkpoint(checkpoint)?.model;
    let n = model.n_items();
    if k == 0 || k > n {
        return Err(CliError::Usage(format!("k must lie in 1..={n}, got {k}")));
    }
    let prefix: Vec<usize> = ids
        .iter()
        .map(|id| {
            model.vocab.index_of(id).unwrap_or_else(|| {
                eprintln!("warning: unknown item `{id}` treated as UNK");
                model.vocab.unk()
            })
        })
        .collect();
    let scored = model.score(&prefix)?;
    let mut out = std::io::stdout().lock();
    for (rank, &idx) in scored.ranking.iter().take(k).enumerate() {
        let id = model.vocab.id_of(idx).expect("ranked index is an item");
        writeln!(out, "{},{},{:.6}", rank + 1, id, scored.probs.data()[idx]).map_err(|e| Error::Io {
            path: "<stdout>".into(),
            source: e,
        })?;
    }
    Ok(())
}
