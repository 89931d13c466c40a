//! Configuration-driven runner for the ganlab experiments.
//!
//! Each named experiment maps a flat `key=value` configuration onto one of the
//! library pipelines, runs it per seed, and writes CSV artifacts plus a
//! `manifest.json` recording every declared assertion and its outcome.

pub mod catalog;
pub mod error;
pub mod experiments;
pub mod params;
pub mod runner;

pub use catalog::{catalog_table, list_experiments, Experiment, ExperimentInfo};
pub use error::{CliError, Result};
pub use params::{keys, KeySpec, Params};
pub use runner::{config_id, run, sweep, AssertionRecord, ExperimentSpec, RunManifest, RunRecord, MANIFEST_NAME};

/// Parses `0..3`, `0..=2` or `0,1,2`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || CliError::Usage(format!("invalid seed list `{s}`; use 0..3, 0..=2 or 0,1,2"));
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| bad());
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = s.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        s.split(',').map(num).collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("1..=2").unwrap(), vec![1, 2]);
        assert_eq!(parse_seeds("4, 7").unwrap(), vec![4, 7]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("a").is_err());
    }
}
