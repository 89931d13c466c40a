use crate::error::{invalid, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// White-noise model of the `−log D` update: each coordinate is
/// `mean_b(−j_b r_b / ε_b)` over a batch of `z`, with `r_b ~ N(0, σ_r²)` and
/// `ε_b ~ N(0, σ_ε²)` independent. The result is Cauchy with scale
/// `mean|j_b| σ_r / σ_ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CauchyModel {
    /// Jacobian entries `j_b`, one per batch element.
    pub jacobian: Vec<f64>,
    pub sigma_r: f64,
    pub sigma_eps: f64,
}

impl CauchyModel {
    /// Unit-scale model with the given Jacobian entries.
    pub fn unit_scale(jacobian: Vec<f64>) -> Result<Self> {
        let m = jacobian.iter().map(|j| j.abs()).sum::<f64>() / jacobian.len().max(1) as f64;
        if jacobian.is_empty() || !(m > 0.0) {
            return invalid("jacobian entries must not all vanish");
        }
        Ok(CauchyModel {
            jacobian,
            sigma_r: 1.0 / m,
            sigma_eps: 1.0,
        })
    }

    /// Cauchy scale `γ`.
    pub fn gamma(&self) -> f64 {
        let m = self.jacobian.iter().map(|j| j.abs()).sum::<f64>() / self.jacobian.len() as f64;
        m * self.sigma_r / self.sigma_eps
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut acc = 0.0;
        for &j in &self.jacobian {
            let r: f64 = rng.sample::<f64, _>(StandardNormal) * self.sigma_r;
            let e: f64 = rng.sample::<f64, _>(StandardNormal) * self.sigma_eps;
            acc += -j * r / e;
        }
        acc / self.jacobian.len() as f64
    }

    /// `P(|X| > t)` for the centred Cauchy law with this scale.
    pub fn tail(&self, t: f64) -> f64 {
        1.0 - 2.0 / std::f64::consts::PI * (t / self.gamma()).atan()
    }
}

/// Summary of a simulated update distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailStats {
    pub n_draws: usize,
    pub gamma: f64,
    pub median: f64,
    pub iqr: f64,
    pub hill_index: f64,
    pub hill_k: usize,
    /// `(t, empirical P(|X| > t), Cauchy P(|X| > t))`.
    pub tail_probs: Vec<(f64, f64, f64)>,
    /// `(batch size, variance of the batch means)`.
    pub batch_mean_variance: Vec<(usize, f64)>,
}

impl TailStats {
    pub const CSV_HEADER: &'static str = "statistic,parameter,value,reference";

    /// True when the batch-mean variances fall at every doubling.
    pub fn batch_variance_monotone_decreasing(&self) -> bool {
        self.batch_mean_variance.windows(2).all(|w| w[1].1 < w[0].1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        let mut row = |name: &str, p: f64, v: f64, r: f64| {
            s.push_str(&format!("{name},{p:.16e},{v:.16e},{r:.16e}\n"));
        };
        row("median", 0.0, self.median, 0.0);
        row("iqr", 0.0, self.iqr, 2.0 * self.gamma);
        row("hill_index", self.hill_k as f64, self.hill_index, 1.0);
        for &(t, e, c) in &self.tail_probs {
            row("tail_prob", t, e, c);
        }
        for &(b, v) in &self.batch_mean_variance {
            row("batch_mean_variance", b as f64, v, f64::NAN);
        }
        s
    }
}

/// Hill estimator of the tail index from the `k` largest values of `|x|`.
pub fn hill_estimator(values: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k >= values.len() {
        return invalid(format!("need 0 < k < n, got k={k}, n={}", values.len()));
    }
    let mut a: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let n = a.len();
    a.select_nth_unstable_by(n - k - 1, f64::total_cmp);
    let threshold = a[n - k - 1];
    if !(threshold > 0.0) {
        return invalid("tail threshold is zero");
    }
    let s: f64 = a[n - k..].iter().map(|v| (v / threshold).ln()).sum();
    Ok(k as f64 / s)
}

fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

/// Simulates `n_draws` updates and their tail statistics.
///
/// The batch-mean check draws 100 fresh batches at each size in
/// `batch_sizes` and records the sample variance of their means.
pub fn cauchy_simulation<R: Rng + ?Sized>(
    model: &CauchyModel,
    n_draws: usize,
    thresholds: &[f64],
    batch_sizes: &[usize],
    rng: &mut R,
) -> Result<TailStats> {
    if n_draws < 100 {
        return invalid("need at least 100 draws");
    }
    let draws: Vec<f64> = (0..n_draws).map(|_| model.draw(rng)).collect();
    let mut sorted = draws.clone();
    sorted.sort_by(f64::total_cmp);
    let median = quantile_sorted(&sorted, 0.5);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let hill_k = (n_draws / 100).max(1);
    let hill_index = hill_estimator(&draws, hill_k)?;
    let tail_probs = thresholds
        .iter()
        .map(|&t| {
            let e = draws.iter().filter(|v| v.abs() > t).count() as f64 / n_draws as f64;
            (t, e, model.tail(t))
        })
        .collect();
    let mut batch_mean_variance = Vec::with_capacity(batch_sizes.len());
    for &b in batch_sizes {
        if b == 0 {
            return invalid("batch sizes must be positive");
        }
        let means: Vec<f64> = (0..100)
            .map(|_| (0..b).map(|_| model.draw(rng)).sum::<f64>() / b as f64)
            .collect();
        let m = means.iter().sum::<f64>() / means.len() as f64;
        let var = means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (means.len() - 1) as f64;
        batch_mean_variance.push((b, var));
    }
    Ok(TailStats {
        n_draws,
        gamma: model.gamma(),
        median,
        iqr,
        hill_index,
        hill_k,
        tail_probs,
        batch_mean_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn hill_recovers_pareto_index() {
        // exact Pareto(α=2) quantiles
        let n = 100_000;
        let v: Vec<f64> = (1..=n)
            .map(|i| (1.0 - (i as f64 - 0.5) / n as f64).powf(-0.5))
            .collect();
        let a = hill_estimator(&v, 1000).unwrap();
        assert!((a - 2.0).abs() < 0.02, "{a}");
    }

    #[test]
    fn scale_is_unit() {
        let m = CauchyModel::unit_scale(vec![0.5, 1.5, 2.0]).unwrap();
        assert!((m.gamma() - 1.0).abs() < 1e-15);
        assert!((m.tail(1.0) - 0.5).abs() < 1e-15);
        let _ = m.draw(&mut stream(0, 0));
    }
}
