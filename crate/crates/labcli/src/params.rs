use crate::catalog::Experiment;
use crate::error::{io_err, usage, Result};
use std::collections::BTreeMap;
use std::path::Path;

/// A recognised configuration key with its default value.
#[derive(Clone, Copy, Debug)]
pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn k(key: &'static str, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec { key, default, help }
}

const TRAIN: [KeySpec; 5] = [
    k("geometry.offset", "0.5", "vertical offset of the generated segment"),
    k("train.lr", "0.005", "discriminator learning rate"),
    k("train.optimizer", "adam", "adam or sgd"),
    k("train.batch", "256", "samples per side per discriminator step"),
    k("train.checkpoint_every", "100", "iterations between probes"),
];

/// Keys accepted by `exp`, with defaults.
pub fn keys(exp: Experiment) -> Vec<KeySpec> {
    let mut v: Vec<KeySpec> = match exp {
        Experiment::PerfectDisc => vec![k("d_iters", "5000", "discriminator iterations")],
        Experiment::Vanishing | Experiment::LogdInstability => {
            vec![k("d_iters", "4000", "discriminator iterations")]
        }
        Experiment::CauchySim => vec![
            k("n_draws", "1000000", "simulated updates"),
            k("batch_z", "16", "latent batch averaged per update"),
            k(
                "batch_sizes",
                "625,1250,2500,5000,10000,20000",
                "batch-mean sizes, doubling",
            ),
        ],
        Experiment::LogdIdentity => vec![
            k("thetas", "0.5,1,2", "generator offsets theta0"),
            k("variance", "1", "variance of both Gaussians"),
            k("grid.h", "0.005", "cell width"),
            k("fd_step", "0.0001", "finite-difference step in theta"),
        ],
        Experiment::NoisyDecomposition => vec![
            k("geometry.offset", "0.5", "vertical offset of the generated segment"),
            k("sigma", "0.3", "noise standard deviation"),
            k("quadrature", "100000", "Monte Carlo samples per manifold integral"),
            k("z_batch", "16", "latent points"),
            k("probe_points", "100", "points for the weight-ordering check"),
        ],
        Experiment::NoisyJsdGrad => vec![
            k("geometry.offset", "1", "vertical offset of the generated segment"),
            k("sigma", "0.3", "noise standard deviation"),
            k("mc.samples", "1000000", "Monte Carlo samples of (z, noise)"),
            k("fd_step", "0.001", "finite-difference step in the offset"),
            k("grid.cells_per_sigma", "20", "grid resolution"),
        ],
        Experiment::WassersteinBounds => vec![
            k("sigma", "random", "noise standard deviation, or `random` per config"),
            k("configs", "100", "random (P_r, P_g) configurations"),
            k("n", "256", "samples per side for exact transport"),
            k("grid.res", "200", "cells per axis for the noisy JSD"),
        ],
        Experiment::JacobianRank => vec![
            k("dim_z", "2", "latent dimension"),
            k("dim_x", "10", "output dimension"),
            k("hidden", "32", "relu units per hidden layer"),
            k("points", "100", "random latent points"),
            k("secant.h", "0.001", "forward-difference step of the secant probe"),
        ],
    };
    if matches!(
        exp,
        Experiment::PerfectDisc | Experiment::Vanishing | Experiment::LogdInstability
    ) {
        v.extend(TRAIN);
    }
    v
}

/// Resolved key-value configuration of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    exp: Experiment,
    values: BTreeMap<String, String>,
}

impl Params {
    pub fn defaults(exp: Experiment) -> Self {
        Params {
            exp,
            values: keys(exp)
                .iter()
                .map(|k| (k.key.to_string(), k.default.to_string()))
                .collect(),
        }
    }

    fn check_key(&self, key: &str) -> Result<()> {
        if self.values.contains_key(key) {
            Ok(())
        } else {
            let valid: Vec<&str> = keys(self.exp).iter().map(|k| k.key).collect();
            usage(format!(
                "unknown key `{key}` for {}; valid keys: {}",
                self.exp,
                valid.join(", ")
            ))
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.check_key(key)?;
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_assignment(&mut self, s: &str) -> Result<()> {
        match s.split_once('=') {
            Some((k, v)) => self.set(k.trim(), v),
            None => usage(format!("expected key=value, got `{s}`")),
        }
    }

    /// Applies a file of `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.apply_assignment(line)
                .map_err(|e| crate::CliError::Usage(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        self.apply_text(&text)
    }

    pub fn experiment(&self) -> Experiment {
        self.exp
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.check_key(key)?;
        Ok(&self.values[key])
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v = self.raw(key)?;
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => usage(format!("`{key}` must be a finite number, got `{v}`")),
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        let v = self.raw(key)?;
        // accept 1e6 style counts
        match v.parse::<usize>() {
            Ok(x) => Ok(x),
            Err(_) => match v.parse::<f64>() {
                Ok(x) if x >= 0.0 && x.fract() == 0.0 && x < 1e15 => Ok(x as usize),
                _ => usage(format!("`{key}` must be a nonnegative integer, got `{v}`")),
            },
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let v = self.raw(key)?;
        let mut out = Vec::new();
        for part in v.split(',') {
            match part.trim().parse::<f64>() {
                Ok(x) if x.is_finite() => out.push(x),
                _ => return usage(format!("`{key}` must be a comma-separated list of numbers, got `{v}`")),
            }
        }
        Ok(out)
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        let v = self.raw(key)?;
        let mut out = Vec::new();
        for part in v.split(',') {
            match part.trim().parse::<usize>() {
                Ok(x) => out.push(x),
                Err(_) => return usage(format!("`{key}` must be a comma-separated list of integers, got `{v}`")),
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_override() {
        let mut p = Params::defaults(Experiment::Vanishing);
        p.apply_text("# schedule\nd_iters = 500\ntrain.lr = 0.01  # faster\n")
            .unwrap();
        p.apply_assignment("d_iters=700").unwrap();
        assert_eq!(p.usize("d_iters").unwrap(), 700);
        assert_eq!(p.f64("train.lr").unwrap(), 0.01);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let mut p = Params::defaults(Experiment::JacobianRank);
        let e = p.set("sigma", "0.1").unwrap_err().to_string();
        assert!(e.contains("dim_z") && e.contains("points"), "{e}");
    }

    #[test]
    fn scientific_counts() {
        let mut p = Params::defaults(Experiment::CauchySim);
        p.set("n_draws", "1e6").unwrap();
        assert_eq!(p.usize("n_draws").unwrap(), 1_000_000);
        p.set("n_draws", "1.5").unwrap();
        assert!(p.usize("n_draws").is_err());
    }
}
