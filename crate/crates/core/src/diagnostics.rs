//! Distributional comparisons of sampled marginals against exact laws.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

/// One point of a Q-Q comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QqPoint {
    pub p: f64,
    pub empirical: f64,
    pub exact: f64,
}

/// Empirical quantile `inf {x : F_n(x) >= p}` of sorted data.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let k = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

fn sorted_copy(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Empirical against exact quantiles at `p_j = (j - 1/2) / points`.
pub fn qq_data(samples: &[f64], exact_quantile: impl Fn(f64) -> f64, points: usize) -> Vec<QqPoint> {
    assert!(!samples.is_empty(), "qq_data needs samples");
    let sorted = sorted_copy(samples);
    (1..=points)
        .map(|j| {
            let p = (j as f64 - 0.5) / points as f64;
            QqPoint { p, empirical: empirical_quantile(&sorted, p), exact: exact_quantile(p) }
        })
        .collect()
}

/// `sup_x |F_n(x) - F(x)|`.
pub fn ks_statistic(samples: &[f64], exact_cdf: impl Fn(f64) -> f64) -> f64 {
    assert!(!samples.is_empty(), "ks_statistic needs samples");
    let sorted = sorted_copy(samples);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        // step over ties so the jump is taken in one go
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let f = exact_cdf(sorted[i]);
        d = d.max(f - i as f64 / n).max((j + 1) as f64 / n - f);
        i = j + 1;
    }
    d
}

/// Two-sample statistic `sup_x |F_n(x) - G_m(x)|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted_copy(a), sorted_copy(b));
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic 1 - `level` critical value of the two-sample statistic.
pub fn ks_two_sample_critical(n: usize, m: usize, level: f64) -> f64 {
    let c = (-0.5 * (level / 2.0).ln()).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Dvoretzky-Kiefer-Wolfowitz bound: `P(KS > eps) <= level` for
/// `eps = sqrt(ln(2 / level) / (2 n))`.
pub fn dkw_bound(n: usize, level: f64) -> f64 {
    ((2.0 / level).ln() / (2.0 * n as f64)).sqrt()
}

/// Ordinal ranks scaled to `(0, 1]`.
fn pseudo_observations(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut u = vec![0.0; n];
    for (rank, &i) in idx.iter().enumerate() {
        u[i] = (rank + 1) as f64 / n as f64;
    }
    u
}

/// Empirical copula on the lattice: entry `[i][j]` is `C((i+1)/k, (j+1)/k)`.
pub fn empirical_copula(samples: &[(f64, f64)], k: usize) -> Vec<Vec<f64>> {
    assert!(!samples.is_empty() && k > 0);
    let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let (u, v) = (pseudo_observations(&xs), pseudo_observations(&ys));
    let cell = |w: f64| (((w * k as f64) - 1e-9).ceil().max(1.0) as usize).min(k) - 1;
    let mut counts = vec![vec![0usize; k]; k];
    for (a, b) in u.iter().zip(&v) {
        counts[cell(*a)][cell(*b)] += 1;
    }
    let n = samples.len() as f64;
    let mut c = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            let mut s = counts[i][j] as f64;
            if i > 0 {
                s += c[i - 1][j];
            }
            if j > 0 {
                s += c[i][j - 1];
            }
            if i > 0 && j > 0 {
                s -= c[i - 1][j - 1];
            }
            c[i][j] = s;
        }
    }
    for row in &mut c {
        for x in row.iter_mut() {
            *x /= n;
        }
    }
    c
}

/// Largest absolute difference between two lattices.
pub fn copula_sup_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

/// Q-Q pairs, KS distances and copula of a bivariate sample against an
/// exact Gaussian marginal and an exact-law copula baseline.
#[derive(Debug, Clone, Serialize)]
pub struct MarginalDiagnostics {
    pub qq: Vec<Vec<QqPoint>>,
    pub ks: Vec<f64>,
    pub copula: Vec<Vec<f64>>,
    pub copula_exact: Vec<Vec<f64>>,
    pub copula_distance: f64,
}

impl MarginalDiagnostics {
    /// `samples` and `baseline` are rows of coordinates; `means` and `sds`
    /// describe the exact normal marginals.
    pub fn gaussian(
        samples: &[Vec<f64>],
        baseline: &[Vec<f64>],
        means: &[f64],
        sds: &[f64],
        qq_points: usize,
        lattice: usize,
    ) -> Self {
        let d = means.len();
        let column = |rows: &[Vec<f64>], j: usize| rows.iter().map(|r| r[j]).collect::<Vec<_>>();
        let mut qq = Vec::with_capacity(d);
        let mut ks = Vec::with_capacity(d);
        for j in 0..d {
            let col = column(samples, j);
            let law = Normal::new(means[j], sds[j]).expect("valid normal");
            qq.push(qq_data(&col, |p| law.inverse_cdf(p), qq_points));
            ks.push(ks_statistic(&col, |x| law.cdf(x)));
        }
        let (copula, copula_exact) = if d >= 2 {
            let pairs = |rows: &[Vec<f64>]| rows.iter().map(|r| (r[0], r[1])).collect::<Vec<_>>();
            (
                empirical_copula(&pairs(samples), lattice),
                empirical_copula(&pairs(baseline), lattice),
            )
        } else {
            (Vec::new(), Vec::new())
        };
        let copula_distance = copula_sup_distance(&copula, &copula_exact);
        Self { qq, ks, copula, copula_exact, copula_distance }
    }

    pub fn mean_ks(&self) -> f64 {
        self.ks.iter().sum::<f64>() / self.ks.len() as f64
    }
}

pub fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).expect("valid normal").cdf(x)
}

pub fn normal_quantile(p: f64, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).expect("valid normal").inverse_cdf(p)
}
