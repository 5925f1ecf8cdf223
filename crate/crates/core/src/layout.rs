//! Exact t-SNE: reduces dense document vectors to 2-D map coordinates.
//!
//! Stage one fits a Gaussian bandwidth per point so that each conditional
//! neighbor distribution has the requested perplexity, then symmetrizes.
//! Stage two runs momentum gradient descent on `KL(P‖Q)` where `Q` uses a
//! Student-t kernel with one degree of freedom.
//!
//! Everything here is `O(N²)`. Points are processed in id order, which makes
//! the output equivariant to input order.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

#[derive(Debug, Error, PartialEq)]
pub enum LayoutError {
    #[error("need at least {0} points")]
    TooFewPoints(usize),
    #[error("perplexity {perplexity} must exceed 1 and be below the point count {n}")]
    BadPerplexity { perplexity: f64, n: usize },
    #[error("point `{0}` has a different dimension")]
    DimensionMismatch(String),
    #[error("invalid layout config: {0}")]
    InvalidConfig(String),
}

/// Target accuracy of the per-row entropy search, in bits.
pub const ENTROPY_TOLERANCE: f64 = 1e-5;
/// Cap on bisection steps per row.
pub const MAX_BISECTION_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    pub perplexity: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub init_sigma: f64,
    pub seed: u64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            learning_rate: 200.0,
            iterations: 500,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            init_sigma: 1e-4,
            seed: 0,
        }
    }
}

impl LayoutConfig {
    fn validate(&self) -> Result<(), LayoutError> {
        let bad = |m: &str| Err(LayoutError::InvalidConfig(m.to_string()));
        if !(self.perplexity > 1.0) {
            return bad("perplexity must exceed 1");
        }
        if !(self.learning_rate > 0.0 && self.init_sigma > 0.0 && self.early_exaggeration > 0.0) {
            return bad("learning_rate, init_sigma and early_exaggeration must be positive");
        }
        if self.iterations == 0 {
            return bad("iterations must be positive");
        }
        Ok(())
    }

    /// Perplexity actually used for `n` points: at most `(n − 1) / 3`, and
    /// never below 1.
    pub fn effective_perplexity(&self, n: usize) -> f64 {
        self.perplexity.min((n.saturating_sub(1)) as f64 / 3.0).max(1.0)
    }
}

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// A row whose bandwidth search could not reach the entropy target.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthWarning {
    pub row: usize,
    pub target_bits: f64,
    pub achieved_bits: f64,
}

/// Per-point conditional distributions `p(j|i)` and their fitted precisions.
#[derive(Debug, Clone)]
pub struct ConditionalAffinities {
    pub conditional: SquareMatrix,
    /// Gaussian precision `1/(2σᵢ²)` per row, in units of the raw squared distance.
    pub precision: Vec<f64>,
    pub entropy_bits: Vec<f64>,
    pub warnings: Vec<BandwidthWarning>,
}

pub fn squared_distances(points: &[Vec<f64>]) -> SquareMatrix {
    let n = points.len();
    let mut d = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    d
}

/// Distribution `exp(−beta·dⱼ)/Z` over `dists` and its entropy in bits.
fn row_distribution(dists: &[f64], beta: f64) -> (Vec<f64>, f64) {
    let weights: Vec<f64> = dists.iter().map(|d| (-beta * d).exp()).collect();
    let z: f64 = weights.iter().sum();
    let probs: Vec<f64> = weights.iter().map(|w| w / z).collect();
    let mean_d: f64 = probs.iter().zip(dists).map(|(p, d)| p * d).sum();
    let entropy = (z.ln() + beta * mean_d) / std::f64::consts::LN_2;
    (probs, entropy)
}

/// Fits one Gaussian per point so each row's Shannon entropy equals
/// `log₂(perplexity)`.
pub fn conditional_affinities(
    points: &[Vec<f64>],
    perplexity: f64,
) -> Result<ConditionalAffinities, LayoutError> {
    let n = points.len();
    if n < 2 {
        return Err(LayoutError::TooFewPoints(2));
    }
    if !(perplexity > 1.0 && perplexity < n as f64) {
        return Err(LayoutError::BadPerplexity { perplexity, n });
    }
    let dim = points[0].len();
    if let Some(i) = points.iter().position(|p| p.len() != dim) {
        return Err(LayoutError::DimensionMismatch(i.to_string()));
    }
    let target = perplexity.log2();
    let dist = squared_distances(points);

    let rows: Vec<(Vec<f64>, f64, f64, bool)> = (0..n)
        .into_par_iter()
        .map(|i| fit_row(&dist, i, target))
        .collect();

    let mut conditional = SquareMatrix::zeros(n);
    let mut precision = Vec::with_capacity(n);
    let mut entropy_bits = Vec::with_capacity(n);
    let mut warnings = Vec::new();
    for (i, (probs, beta, entropy, reached)) in rows.into_iter().enumerate() {
        let mut k = 0;
        for j in 0..n {
            if j != i {
                conditional.set(i, j, probs[k]);
                k += 1;
            }
        }
        if !reached {
            warn!(row = i, target, entropy, "t-SNE bandwidth clamped");
            warnings.push(BandwidthWarning {
                row: i,
                target_bits: target,
                achieved_bits: entropy,
            });
        }
        precision.push(beta);
        entropy_bits.push(entropy);
    }
    Ok(ConditionalAffinities {
        conditional,
        precision,
        entropy_bits,
        warnings,
    })
}

/// Returns `(probabilities over j ≠ i, precision, entropy, target reached)`.
fn fit_row(dist: &SquareMatrix, i: usize, target: f64) -> (Vec<f64>, f64, f64, bool) {
    let raw: Vec<f64> = (0..dist.size()).filter(|&j| j != i).map(|j| dist.get(i, j)).collect();
    if raw.len() == 1 {
        return (vec![1.0], 0.0, 0.0, true);
    }
    // Shift by the nearest distance and scale by the mean gap so the search
    // interval over ln(beta) is independent of the data's units.
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = raw.iter().map(|d| d - min).collect();
    let scale = shifted.iter().sum::<f64>() / shifted.len() as f64;
    if scale == 0.0 {
        let uniform = vec![1.0 / raw.len() as f64; raw.len()];
        let h = (raw.len() as f64).log2();
        return (uniform, 0.0, h, (h - target).abs() < ENTROPY_TOLERANCE);
    }
    let scaled: Vec<f64> = shifted.iter().map(|d| d / scale).collect();

    let (mut lo, mut hi) = (-50.0f64, 50.0f64);
    let mut best = row_distribution(&scaled, 1.0);
    let mut best_beta = 1.0;
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let beta = mid.exp();
        let (probs, h) = row_distribution(&scaled, beta);
        let err = h - target;
        if err.abs() < (best.1 - target).abs() {
            best = (probs, h);
            best_beta = beta;
        }
        if err.abs() < 1e-10 {
            break;
        }
        // entropy falls as the precision grows
        if err > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let reached = (best.1 - target).abs() < ENTROPY_TOLERANCE;
    (best.0, best_beta / scale, best.1, reached)
}

/// `p_ij = (p(j|i) + p(i|j)) / 2N`.
pub fn joint_affinities(conditional: &SquareMatrix) -> SquareMatrix {
    let n = conditional.size();
    let mut p = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p.set(i, j, (conditional.get(i, j) + conditional.get(j, i)) / (2.0 * n as f64));
            }
        }
    }
    p
}

/// Student-t similarities `1/(1 + ‖yᵢ − yⱼ‖²)` (zero diagonal) and their sum.
fn student_kernel(y: &[[f64; 2]]) -> (SquareMatrix, f64) {
    let n = y.len();
    let mut num = SquareMatrix::zeros(n);
    let mut z = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num.set(i, j, v);
            num.set(j, i, v);
            z += 2.0 * v;
        }
    }
    (num, z)
}

/// `KL(P‖Q)` for the embedding `y`.
pub fn kl_divergence(p: &SquareMatrix, y: &[[f64; 2]]) -> f64 {
    let (num, z) = student_kernel(y);
    let n = y.len();
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p.get(i, j);
            if i != j && pij > 0.0 {
                kl += pij * (pij / (num.get(i, j) / z)).ln();
            }
        }
    }
    kl
}

/// Gradient of `KL(P‖Q)` with `P` scaled by `exaggeration`:
/// `∂/∂yᵢ = 4 Σⱼ (e·pᵢⱼ − qᵢⱼ)(yᵢ − yⱼ)/(1 + ‖yᵢ − yⱼ‖²)`.
pub fn kl_gradient(p: &SquareMatrix, y: &[[f64; 2]], exaggeration: f64) -> Vec<[f64; 2]> {
    let (num, z) = student_kernel(y);
    (0..y.len())
        .into_par_iter()
        .map(|i| {
            let mut g = [0.0, 0.0];
            for j in 0..y.len() {
                if i == j {
                    continue;
                }
                let w = num.get(i, j);
                let coeff = 4.0 * (exaggeration * p.get(i, j) - w / z) * w;
                g[0] += coeff * (y[i][0] - y[j][0]);
                g[1] += coeff * (y[i][1] - y[j][1]);
            }
            g
        })
        .collect()
}

fn recenter(y: &mut [[f64; 2]]) {
    if y.is_empty() {
        return;
    }
    let n = y.len() as f64;
    let mx = y.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = y.iter().map(|p| p[1]).sum::<f64>() / n;
    for p in y.iter_mut() {
        p[0] -= mx;
        p[1] -= my;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    /// Interim placement, pending the next full layout run.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub approx: bool,
}

/// Map coordinates keyed by document id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Layout {
    pub coords: BTreeMap<String, Point>,
}

impl Layout {
    pub fn get(&self, id: &str) -> Option<Point> {
        self.coords.get(id).copied()
    }

    /// Places `id` at the weight-averaged position of its laid-out neighbors
    /// (the origin if none are placed), flagged approximate.
    pub fn place_by_neighbors(&mut self, id: &str, neighbors: &[(&str, f64)]) -> Point {
        let mut acc = (0.0, 0.0, 0.0);
        for &(n, w) in neighbors {
            if let Some(p) = self.coords.get(n) {
                acc.0 += w * p.x;
                acc.1 += w * p.y;
                acc.2 += w;
            }
        }
        let point = if acc.2 > 0.0 {
            Point { x: acc.0 / acc.2, y: acc.1 / acc.2, approx: true }
        } else {
            Point { x: 0.0, y: 0.0, approx: true }
        };
        self.coords.insert(id.to_string(), point);
        point
    }

    pub fn to_records(&self) -> Vec<LayoutRecord> {
        self.coords
            .iter()
            .map(|(id, p)| LayoutRecord {
                id: id.clone(),
                x: p.x,
                y: p.y,
                approx: p.approx,
            })
            .collect()
    }

    pub fn from_records(records: Vec<LayoutRecord>) -> Self {
        Self {
            coords: records
                .into_iter()
                .map(|r| (r.id, Point { x: r.x, y: r.y, approx: r.approx }))
                .collect(),
        }
    }
}

/// One entry of `layout.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutRecord {
    pub id: String,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub approx: bool,
}

#[derive(Debug, Clone)]
pub struct TsneRun {
    pub layout: Layout,
    /// KL at the random initialization, without exaggeration.
    pub initial_kl: f64,
    pub final_kl: f64,
    pub warnings: Vec<BandwidthWarning>,
}

/// Runs exact t-SNE over `(id, vector)` pairs.
pub fn tsne(points: &[(String, Vec<f64>)], config: &LayoutConfig) -> Result<TsneRun, LayoutError> {
    config.validate()?;
    let mut sorted: Vec<&(String, Vec<f64>)> = points.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let n = sorted.len();
    if n == 0 {
        return Ok(TsneRun {
            layout: Layout::default(),
            initial_kl: 0.0,
            final_kl: 0.0,
            warnings: Vec::new(),
        });
    }
    if n == 1 {
        let mut layout = Layout::default();
        layout.coords.insert(sorted[0].0.clone(), Point { x: 0.0, y: 0.0, approx: false });
        return Ok(TsneRun { layout, initial_kl: 0.0, final_kl: 0.0, warnings: Vec::new() });
    }
    let dim = sorted[0].1.len();
    if let Some(bad) = sorted.iter().find(|p| p.1.len() != dim) {
        return Err(LayoutError::DimensionMismatch(bad.0.clone()));
    }

    let vectors: Vec<Vec<f64>> = sorted.iter().map(|p| p.1.clone()).collect();
    let perplexity = config.effective_perplexity(n);
    let (p, warnings) = if n == 2 || perplexity >= n as f64 || perplexity <= 1.0 {
        // Too few points for the requested perplexity: use the two-sided
        // nearest neighbor structure with uniform rows.
        let cond = uniform_conditional(n);
        (joint_affinities(&cond), Vec::new())
    } else {
        let cond = conditional_affinities(&vectors, perplexity)?;
        (joint_affinities(&cond.conditional), cond.warnings)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, config.init_sigma).expect("positive sigma");
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    recenter(&mut y);
    let initial_kl = kl_divergence(&p, &y);

    let mut update = vec![[0.0_f64; 2]; n];
    let mut gains = vec![[1.0_f64; 2]; n];
    for iter in 0..config.iterations {
        let exaggeration = if iter < config.exaggeration_iterations {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < config.momentum_switch {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        let grad = kl_gradient(&p, &y, exaggeration);
        for i in 0..n {
            for d in 0..2 {
                let g = grad[i][d];
                gains[i][d] = if (g > 0.0) != (update[i][d] > 0.0) {
                    gains[i][d] + 0.2
                } else {
                    (gains[i][d] * 0.8).max(0.01)
                };
                update[i][d] = momentum * update[i][d] - config.learning_rate * gains[i][d] * g;
                y[i][d] += update[i][d];
            }
        }
        recenter(&mut y);
    }
    let final_kl = kl_divergence(&p, &y);

    let coords = sorted
        .iter()
        .zip(&y)
        .map(|(p, c)| (p.0.clone(), Point { x: c[0], y: c[1], approx: false }))
        .collect();
    Ok(TsneRun {
        layout: Layout { coords },
        initial_kl,
        final_kl,
        warnings,
    })
}

fn uniform_conditional(n: usize) -> SquareMatrix {
    let mut m = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                m.set(i, j, 1.0 / (n - 1) as f64);
            }
        }
    }
    m
}
