//! Two-parameter logistic item response model.
//!
//! Items are calibrated by marginal maximum likelihood with EM over a fixed
//! quadrature grid on a standard-normal ability prior. Each M-step solves a
//! weighted logistic regression per item by damped Newton iterations in
//! slope/intercept form (`z = slope * theta + intercept`, where
//! `slope = D a` and `intercept = -D a b`), where the objective is concave.
//! Steps are projected onto the parameter bounds and halved until the
//! expected complete-data log-likelihood does not decrease, which keeps the
//! marginal log-likelihood monotone across EM iterations.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{log_sigmoid, log_sum_exp, sigmoid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IrtError {
    #[error("invalid IRT configuration: {0}")]
    Config(&'static str),
    #[error("response matrix is {rows}x{cols}; entries must be 0 or 1 (row {row}, column {col})")]
    NonBinary {
        rows: usize,
        cols: usize,
        row: usize,
        col: usize,
    },
    #[error("response matrix rows have unequal lengths")]
    Ragged,
    #[error("calibration needs at least 2 writers and 2 informative items (got {writers} writers, {items} items)")]
    TooSmall { writers: usize, items: usize },
    #[error("item list has {items} entries but responses have {responses}")]
    LengthMismatch { items: usize, responses: usize },
    #[error("no calibrated item responses to score")]
    NoResponses,
}

/// Binary writers×items usage matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl ResponseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self, IrtError> {
        if data.len() != rows * cols {
            return Err(IrtError::Ragged);
        }
        if let Some(i) = data.iter().position(|&x| x > 1) {
            return Err(IrtError::NonBinary {
                rows,
                cols,
                row: i / cols.max(1),
                col: i % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self, IrtError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != cols) {
            return Err(IrtError::Ragged);
        }
        let data = rows
            .iter()
            .flat_map(|r| r.as_ref().iter().copied())
            .collect();
        Self::new(rows.len(), cols, data)
    }

    /// Builds a matrix from real-valued rows holding exactly 0.0 or 1.0.
    pub fn from_binary_rows(rows: &[Vec<f64>]) -> Result<Self, IrtError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(IrtError::Ragged);
            }
            for (c, &v) in row.iter().enumerate() {
                if v == 0.0 {
                    data.push(0);
                } else if v == 1.0 {
                    data.push(1);
                } else {
                    return Err(IrtError::NonBinary {
                        rows: rows.len(),
                        cols,
                        row: r,
                        col: c,
                    });
                }
            }
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn writers(&self) -> usize {
        self.rows
    }

    pub fn items(&self) -> usize {
        self.cols
    }

    pub fn get(&self, writer: usize, item: usize) -> u8 {
        self.data[writer * self.cols + item]
    }

    pub fn row(&self, writer: usize) -> &[u8] {
        &self.data[writer * self.cols..(writer + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ItemStatus {
    Calibrated,
    /// Constant column; excluded from the likelihood.
    DegenerateDropped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemParameters {
    pub item_id: usize,
    /// Discrimination.
    pub a: f64,
    /// Difficulty.
    pub b: f64,
    pub status: ItemStatus,
}

impl ItemParameters {
    pub fn calibrated(item_id: usize, a: f64, b: f64) -> Self {
        Self {
            item_id,
            a,
            b,
            status: ItemStatus::Calibrated,
        }
    }

    pub fn is_calibrated(&self) -> bool {
        self.status == ItemStatus::Calibrated
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbilityEstimate {
    /// Posterior mean.
    pub theta: f64,
    pub posterior_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrtConfig {
    /// Logistic scaling factor.
    pub d: f64,
    pub quadrature_nodes: usize,
    pub quadrature_min: f64,
    pub quadrature_max: f64,
    pub max_iterations: usize,
    /// Stop when the marginal log-likelihood improves by less than this.
    pub tolerance: f64,
    pub a_min: f64,
    pub a_max: f64,
    /// Bound on |b|.
    pub b_max: f64,
    pub newton_iterations: usize,
}

impl Default for IrtConfig {
    fn default() -> Self {
        Self {
            d: 1.0,
            quadrature_nodes: 61,
            quadrature_min: -6.0,
            quadrature_max: 6.0,
            max_iterations: 500,
            tolerance: 1e-6,
            a_min: 0.05,
            a_max: 5.0,
            b_max: 20.0,
            newton_iterations: 25,
        }
    }
}

impl IrtConfig {
    pub fn validate(&self) -> Result<(), IrtError> {
        if self.quadrature_nodes < 11 || self.quadrature_nodes.is_multiple_of(2) {
            return Err(IrtError::Config(
                "quadrature node count must be odd and at least 11",
            ));
        }
        if !(self.quadrature_min < self.quadrature_max) {
            return Err(IrtError::Config("quadrature range is empty"));
        }
        if !(self.tolerance > 0.0) {
            return Err(IrtError::Config("tolerance must be positive"));
        }
        if !(self.d > 0.0) || !self.d.is_finite() {
            return Err(IrtError::Config("scaling factor D must be positive"));
        }
        if !(0.0 < self.a_min && self.a_min < self.a_max) || !self.a_max.is_finite() {
            return Err(IrtError::Config(
                "discrimination bounds must satisfy 0 < a_min < a_max",
            ));
        }
        if !(self.b_max > 0.0) {
            return Err(IrtError::Config("difficulty bound must be positive"));
        }
        Ok(())
    }
}

/// Equally spaced nodes with standard-normal weights normalized to sum 1.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl Quadrature {
    pub fn new(config: &IrtConfig) -> Self {
        let n = config.quadrature_nodes;
        let span = config.quadrature_max - config.quadrature_min;
        let nodes: Vec<f64> = (0..n)
            .map(|i| config.quadrature_min + span * i as f64 / (n - 1) as f64)
            .collect();
        let dens: Vec<f64> = nodes.iter().map(|&x| libm::exp(-0.5 * x * x)).collect();
        let total: f64 = dens.iter().sum();
        let weights: Vec<f64> = dens.iter().map(|w| w / total).collect();
        let log_weights = weights.iter().map(|&w| libm::log(w)).collect();
        Self {
            nodes,
            weights,
            log_weights,
        }
    }
}

/// Probability that a writer with ability `theta` uses the item correctly:
/// `1 / (1 + exp(-D a (theta - b)))`, kept strictly inside `(0, 1)` where
/// the logistic would otherwise round to an endpoint.
pub fn irf(theta: f64, item: &ItemParameters, d: f64) -> f64 {
    const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;
    sigmoid(d * item.a * (theta - item.b)).clamp(f64::MIN_POSITIVE, ONE_BELOW)
}

/// Log-likelihood of each writer's responses at every quadrature node,
/// restricted to `items` (column index, parameters).
fn node_log_likelihoods(
    matrix: &ResponseMatrix,
    items: &[(usize, ItemParameters)],
    quad: &Quadrature,
    d: f64,
) -> Vec<f64> {
    let q = quad.nodes.len();
    // Precompute log P and log(1-P) per item and node.
    let mut log_p = vec![0.0; items.len() * q];
    let mut log_np = vec![0.0; items.len() * q];
    for (j, (_, item)) in items.iter().enumerate() {
        for (k, &x) in quad.nodes.iter().enumerate() {
            let z = d * item.a * (x - item.b);
            log_p[j * q + k] = log_sigmoid(z);
            log_np[j * q + k] = log_sigmoid(-z);
        }
    }
    let mut out = vec![0.0; matrix.writers() * q];
    for i in 0..matrix.writers() {
        let row = &mut out[i * q..(i + 1) * q];
        for (j, (col, _)) in items.iter().enumerate() {
            let table = if matrix.get(i, *col) == 1 {
                &log_p
            } else {
                &log_np
            };
            for (k, v) in row.iter_mut().enumerate() {
                *v += table[j * q + k];
            }
        }
    }
    out
}

/// Quadrature-approximated marginal log-likelihood
/// `sum_i log sum_q w_q prod_j P^g (1 - P)^(1 - g)` over calibrated items.
/// `items` is indexed by column.
pub fn marginal_log_likelihood(
    matrix: &ResponseMatrix,
    items: &[ItemParameters],
    config: &IrtConfig,
) -> f64 {
    let quad = Quadrature::new(config);
    let active: Vec<(usize, ItemParameters)> = items
        .iter()
        .enumerate()
        .filter(|(col, it)| it.is_calibrated() && *col < matrix.items())
        .map(|(col, it)| (col, *it))
        .collect();
    let ll = node_log_likelihoods(matrix, &active, &quad, config.d);
    let q = quad.nodes.len();
    let mut buf = vec![0.0; q];
    (0..matrix.writers())
        .map(|i| {
            for k in 0..q {
                buf[k] = quad.log_weights[k] + ll[i * q + k];
            }
            log_sum_exp(&buf)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// One entry per matrix column, in column order.
    pub items: Vec<ItemParameters>,
    /// Marginal log-likelihood at the start of each EM iteration; the last
    /// entry belongs to the returned parameters.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

struct ExpectedCounts {
    /// Expected writers at each node.
    n: Vec<f64>,
    /// Expected correct responses per active item and node.
    r: Vec<f64>,
}

fn e_step(
    matrix: &ResponseMatrix,
    active: &[(usize, ItemParameters)],
    quad: &Quadrature,
    d: f64,
) -> (f64, ExpectedCounts) {
    let q = quad.nodes.len();
    let ll = node_log_likelihoods(matrix, active, quad, d);
    let mut n = vec![0.0; q];
    let mut r = vec![0.0; active.len() * q];
    let mut post = vec![0.0; q];
    let mut total = 0.0;
    for i in 0..matrix.writers() {
        for k in 0..q {
            post[k] = quad.log_weights[k] + ll[i * q + k];
        }
        let marginal = log_sum_exp(&post);
        total += marginal;
        for p in post.iter_mut() {
            *p = libm::exp(*p - marginal);
        }
        for k in 0..q {
            n[k] += post[k];
        }
        for (j, (col, _)) in active.iter().enumerate() {
            if matrix.get(i, *col) == 1 {
                let rj = &mut r[j * q..(j + 1) * q];
                for k in 0..q {
                    rj[k] += post[k];
                }
            }
        }
    }
    (total, ExpectedCounts { n, r })
}

/// Expected complete-data log-likelihood of one item in slope/intercept form.
fn item_objective(slope: f64, intercept: f64, nodes: &[f64], n: &[f64], r: &[f64]) -> f64 {
    nodes
        .iter()
        .zip(n.iter().zip(r))
        .map(|(&x, (&nk, &rk))| {
            let z = slope * x + intercept;
            rk * log_sigmoid(z) + (nk - rk) * log_sigmoid(-z)
        })
        .sum()
}

/// Maximizes [`item_objective`] from the current point, never decreasing it.
fn m_step_item(
    item: ItemParameters,
    nodes: &[f64],
    n: &[f64],
    r: &[f64],
    config: &IrtConfig,
) -> ItemParameters {
    let d = config.d;
    let (lo, hi) = (d * config.a_min, d * config.a_max);
    let mut slope = d * item.a;
    let mut intercept = -d * item.a * item.b;
    let mut value = item_objective(slope, intercept, nodes, n, r);
    for _ in 0..config.newton_iterations {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, (&nk, &rk)) in nodes.iter().zip(n.iter().zip(r)) {
            let p = sigmoid(slope * x + intercept);
            let resid = rk - nk * p;
            let w = nk * p * (1.0 - p);
            g0 += resid * x;
            g1 += resid;
            h00 += w * x * x;
            h01 += w * x;
            h11 += w;
        }
        // Newton on the concave objective: solve (-H) delta = g. A small
        // ridge keeps the system solvable when the information is tiny.
        let ridge = 1e-10 * (h00 + h11) + 1e-12;
        let (a00, a01, a11) = (h00 + ridge, h01, h11 + ridge);
        let det = a00 * a11 - a01 * a01;
        if !(det > 0.0) || !det.is_finite() {
            break;
        }
        let ds = (a11 * g0 - a01 * g1) / det;
        let di = (a00 * g1 - a01 * g0) / det;
        // Project the full step onto the feasible set; the set is convex, so
        // every point between the current iterate and the target is feasible.
        let target_slope = (slope + ds).clamp(lo, hi);
        let bound = config.b_max * target_slope;
        let target_intercept = (intercept + di).clamp(-bound, bound);
        let (step_s, step_i) = (target_slope - slope, target_intercept - intercept);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let (s, c) = (slope + t * step_s, intercept + t * step_i);
            let v = item_objective(s, c, nodes, n, r);
            if v >= value {
                let gain = v - value;
                slope = s;
                intercept = c;
                value = v;
                accepted = gain > 1e-13 * value.abs().max(1.0);
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let a = slope / d;
    ItemParameters {
        item_id: item.item_id,
        a,
        b: -intercept / slope,
        status: ItemStatus::Calibrated,
    }
}

/// Calibrates all non-constant columns of `matrix`.
pub fn fit_2pl(matrix: &ResponseMatrix, config: &IrtConfig) -> Result<FitResult, IrtError> {
    config.validate()?;
    let writers = matrix.writers();
    let mut items: Vec<ItemParameters> = Vec::with_capacity(matrix.items());
    let mut active_cols = Vec::new();
    for col in 0..matrix.items() {
        let ones: usize = (0..writers).map(|i| matrix.get(i, col) as usize).sum();
        if ones == 0 || ones == writers {
            items.push(ItemParameters {
                item_id: col,
                a: 1.0,
                b: 0.0,
                status: ItemStatus::DegenerateDropped,
            });
        } else {
            // Start from the logit of the observed proportion with unit slope.
            let p = ones as f64 / writers as f64;
            let b0 =
                (-libm::log(p / (1.0 - p)) * 1.3 / config.d).clamp(-config.b_max, config.b_max);
            items.push(ItemParameters::calibrated(
                col,
                1.0f64.clamp(config.a_min, config.a_max),
                b0,
            ));
            active_cols.push(col);
        }
    }
    if writers < 2 || active_cols.len() < 2 {
        return Err(IrtError::TooSmall {
            writers,
            items: active_cols.len(),
        });
    }

    let quad = Quadrature::new(config);
    let q = quad.nodes.len();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let active: Vec<(usize, ItemParameters)> =
            active_cols.iter().map(|&c| (c, items[c])).collect();
        let (ll, counts) = e_step(matrix, &active, &quad, config.d);
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            trace.push(ll);
            if (ll - prev).abs() < config.tolerance {
                converged = true;
                break;
            }
        } else {
            trace.push(ll);
        }
        if iterations == config.max_iterations {
            break;
        }
        iterations += 1;
        for (j, (col, item)) in active.iter().enumerate() {
            items[*col] = m_step_item(
                *item,
                &quad.nodes,
                &counts.n,
                &counts.r[j * q..(j + 1) * q],
                config,
            );
        }
    }
    Ok(FitResult {
        items,
        trace,
        converged,
        iterations,
    })
}

/// Expected a posteriori ability from binary responses aligned with `items`.
/// Items that are not calibrated are skipped.
pub fn estimate_ability(
    responses: &[u8],
    items: &[ItemParameters],
    config: &IrtConfig,
) -> Result<AbilityEstimate, IrtError> {
    if responses.len() != items.len() {
        return Err(IrtError::LengthMismatch {
            items: items.len(),
            responses: responses.len(),
        });
    }
    let used: Vec<(u8, &ItemParameters)> = responses
        .iter()
        .zip(items)
        .filter(|(_, it)| it.is_calibrated())
        .map(|(&g, it)| (g, it))
        .collect();
    if used.is_empty() {
        return Err(IrtError::NoResponses);
    }
    if let Some((g, _)) = used.iter().find(|(g, _)| *g > 1) {
        return Err(IrtError::NonBinary {
            rows: 1,
            cols: responses.len(),
            row: 0,
            col: *g as usize,
        });
    }
    let quad = Quadrature::new(config);
    let log_post: Vec<f64> = quad
        .nodes
        .iter()
        .zip(&quad.log_weights)
        .map(|(&x, &lw)| {
            lw + used
                .iter()
                .map(|(g, it)| {
                    let z = config.d * it.a * (x - it.b);
                    if *g == 1 {
                        log_sigmoid(z)
                    } else {
                        log_sigmoid(-z)
                    }
                })
                .sum::<f64>()
        })
        .collect();
    let norm = log_sum_exp(&log_post);
    let post: Vec<f64> = log_post.iter().map(|&l| libm::exp(l - norm)).collect();
    let theta: f64 = post.iter().zip(&quad.nodes).map(|(w, x)| w * x).sum();
    let var: f64 = post
        .iter()
        .zip(&quad.nodes)
        .map(|(w, x)| w * (x - theta) * (x - theta))
        .sum();
    Ok(AbilityEstimate {
        theta,
        posterior_sd: libm::sqrt(var).max(f64::MIN_POSITIVE),
    })
}

/// EAP abilities for every writer of `matrix`.
pub fn estimate_abilities(
    matrix: &ResponseMatrix,
    items: &[ItemParameters],
    config: &IrtConfig,
) -> Result<Vec<AbilityEstimate>, IrtError> {
    (0..matrix.writers())
        .map(|i| estimate_ability(matrix.row(i), items, config))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn item(a: f64, b: f64) -> ItemParameters {
        ItemParameters::calibrated(0, a, b)
    }

    #[test]
    fn irf_examples() {
        assert_eq!(irf(0.7, &item(2.3, 0.7), 1.0), 0.5);
        let v = irf(2.0, &item(1.0, 0.0), 1.0);
        // 1 / (1 + e^-2)
        assert!((v - 0.880_797_077_977_882_3).abs() < 1e-15);
        assert_eq!(IrtConfig::default().d, 1.0);
    }

    #[test]
    fn config_validation() {
        let mut c = IrtConfig::default();
        assert!(c.validate().is_ok());
        c.quadrature_nodes = 10;
        assert!(c.validate().is_err());
        c.quadrature_nodes = 9;
        assert!(c.validate().is_err());
        let c = IrtConfig {
            tolerance: 0.0,
            ..IrtConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn quadrature_weights_are_a_distribution() {
        let quad = Quadrature::new(&IrtConfig::default());
        assert_eq!(quad.nodes.len(), 61);
        assert!((quad.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert_eq!(quad.nodes[30], 0.0);
        let mean: f64 = quad
            .nodes
            .iter()
            .zip(&quad.weights)
            .map(|(x, w)| x * w)
            .sum();
        let var: f64 = quad
            .nodes
            .iter()
            .zip(&quad.weights)
            .map(|(x, w)| x * x * w)
            .sum();
        assert!(mean.abs() < 1e-14);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_matrix_has_zero_likelihood() {
        let m = ResponseMatrix::new(0, 0, Vec::new()).unwrap();
        assert_eq!(marginal_log_likelihood(&m, &[], &IrtConfig::default()), 0.0);
    }

    #[test]
    fn single_response_likelihood_matches_direct_quadrature() {
        let config = IrtConfig::default();
        let m = ResponseMatrix::from_rows(&[[1u8]]).unwrap();
        let it = item(1.0, 0.0);
        // Independent evaluation: trapezoid-free weighted average over the
        // same grid, written out from the density directly.
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..61 {
            let x = -6.0 + 0.2 * k as f64;
            let w = libm::exp(-x * x / 2.0);
            num += w / (1.0 + libm::exp(-x));
            den += w;
        }
        let expected = libm::log(num / den);
        let got = marginal_log_likelihood(&m, &[it], &config);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        // symmetric prior and b = 0: the average is one half
        assert!((expected - libm::log(0.5)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_columns_are_dropped() {
        let rows = [[1u8, 0, 1, 0], [1, 0, 0, 1], [1, 0, 1, 1], [1, 0, 0, 0]];
        let m = ResponseMatrix::from_rows(&rows).unwrap();
        let fit = fit_2pl(&m, &IrtConfig::default()).unwrap();
        assert_eq!(fit.items[0].status, ItemStatus::DegenerateDropped);
        assert_eq!(fit.items[1].status, ItemStatus::DegenerateDropped);
        assert!(fit.items[2].is_calibrated() && fit.items[3].is_calibrated());
    }

    #[test]
    fn all_degenerate_is_an_error() {
        let m = ResponseMatrix::from_rows(&[[1u8, 0], [1, 0]]).unwrap();
        assert!(matches!(
            fit_2pl(&m, &IrtConfig::default()),
            Err(IrtError::TooSmall { items: 0, .. })
        ));
        let one = ResponseMatrix::from_rows(&[[1u8, 0, 1]]).unwrap();
        assert!(matches!(
            fit_2pl(&one, &IrtConfig::default()),
            Err(IrtError::TooSmall { writers: 1, .. })
        ));
    }

    #[test]
    fn matrix_rejects_non_binary_and_ragged() {
        assert!(matches!(
            ResponseMatrix::from_rows(&[[0u8, 2]]),
            Err(IrtError::NonBinary { col: 1, .. })
        ));
        assert!(matches!(
            ResponseMatrix::from_rows(&[&[0u8][..], &[0, 1][..]]),
            Err(IrtError::Ragged)
        ));
        assert!(ResponseMatrix::from_binary_rows(&[alloc::vec![0.0, 0.5]]).is_err());
    }

    #[test]
    fn ability_orders_all_correct_above_all_incorrect() {
        let items: Vec<ItemParameters> = (0..5)
            .map(|j| item(1.0 + 0.2 * j as f64, -1.0 + 0.5 * j as f64))
            .collect();
        let c = IrtConfig::default();
        let hi = estimate_ability(&[1; 5], &items, &c).unwrap();
        let lo = estimate_ability(&[0; 5], &items, &c).unwrap();
        assert!(hi.theta > lo.theta);
        assert!(hi.posterior_sd > 0.0 && lo.posterior_sd > 0.0);
    }

    #[test]
    fn single_correct_item_shifts_posterior_mean_up() {
        let c = IrtConfig::default();
        let est = estimate_ability(&[1], &[item(1.0, 0.0)], &c).unwrap();
        // Oracle: posterior mean by fine-grid numerical integration of
        // x * phi(x) * sigmoid(x) / integral phi(x) sigmoid(x).
        let (mut num, mut den) = (0.0, 0.0);
        let h = 1e-3;
        let mut x = -6.0;
        while x <= 6.0 + 1e-12 {
            let f = libm::exp(-x * x / 2.0) / (1.0 + libm::exp(-x));
            num += x * f;
            den += f;
            x += h;
        }
        let oracle = num / den;
        assert!(est.theta > 0.0);
        assert!(
            (est.theta - oracle).abs() < 1e-3,
            "{} vs {oracle}",
            est.theta
        );
    }

    #[test]
    fn ability_errors() {
        let c = IrtConfig::default();
        let dropped = ItemParameters {
            item_id: 0,
            a: 1.0,
            b: 0.0,
            status: ItemStatus::DegenerateDropped,
        };
        assert_eq!(
            estimate_ability(&[], &[], &c).unwrap_err(),
            IrtError::NoResponses
        );
        assert_eq!(
            estimate_ability(&[1], &[dropped], &c).unwrap_err(),
            IrtError::NoResponses
        );
        assert!(matches!(
            estimate_ability(&[1, 0], &[dropped], &c),
            Err(IrtError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn ability_recovered_from_forty_items() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let items: Vec<ItemParameters> = (0..40)
            .map(|j| item(1.5, -2.0 + 4.0 * j as f64 / 39.0))
            .collect();
        let c = IrtConfig::default();
        let mut errs = 0.0;
        let reps = 50;
        for _ in 0..reps {
            let resp: Vec<u8> = items
                .iter()
                .map(|it| u8::from(rng.random::<f64>() < irf(1.5, it, 1.0)))
                .collect();
            let est = estimate_ability(&resp, &items, &c).unwrap();
            assert!((est.theta - 1.5).abs() < 0.5 + 3.0 * est.posterior_sd);
            assert!(est.posterior_sd < 0.5);
            errs += (est.theta - 1.5).abs();
        }
        assert!(errs / reps as f64 <= 0.5);
    }

    #[test]
    fn permuting_rows_and_columns_permutes_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, k) = (80, 6);
        let data: Vec<u8> = (0..n * k)
            .map(|_| u8::from(rng.random::<f64>() < 0.5))
            .collect();
        let m = ResponseMatrix::new(n, k, data).unwrap();
        let row_perm: Vec<usize> = (0..n).rev().collect();
        let col_perm = [3usize, 0, 5, 1, 4, 2];
        let permuted: Vec<u8> = row_perm
            .iter()
            .flat_map(|&i| col_perm.iter().map(move |&j| (i, j)))
            .map(|(i, j)| m.get(i, j))
            .collect();
        let pm = ResponseMatrix::new(n, k, permuted).unwrap();
        let c = IrtConfig::default();
        let a = fit_2pl(&m, &c).unwrap();
        let b = fit_2pl(&pm, &c).unwrap();
        for (new_col, &old_col) in col_perm.iter().enumerate() {
            assert!((a.items[old_col].a - b.items[new_col].a).abs() < 1e-8);
            assert!((a.items[old_col].b - b.items[new_col].b).abs() < 1e-8);
        }
    }
}
