//! Stationarity conditions solved over all epochs at once.
//!
//! In the residuals `r_i` left at each arrival, the objective
//! `sum_i l_i ln(1 + p_i)` is concave: each power is a concave function of
//! `(r_{i-1}, r_i)` because stored energy `r + E_h(r)` is concave in `r`.
//! Its gradient vanishing is exactly the stationarity recursion, and the
//! Hessian is tridiagonal, so damped Newton steps cost `O(N)`. A log
//! barrier keeps every power positive; epochs whose `p >= 0` bound is
//! active end with powers of the order of the final barrier weight.
//!
//! Shooting from the first residual amplifies errors by the product of
//! `1 + X_m` over the whole horizon; this formulation does not.

use crate::charge_model::ChargeCurve;

/// Barrier weight relative to the per-epoch objective at the start.
const INITIAL_WEIGHT: f64 = 1e-2;
/// Barrier weight relative to the per-epoch objective at the end.
const FINAL_WEIGHT: f64 = 1e-15;
const WEIGHT_FACTOR: f64 = 0.1;
const NEWTON_STEPS: usize = 100;
const BACKTRACKS: usize = 60;

struct Problem<'a> {
    curves: &'a [ChargeCurve],
    lengths: &'a [f64],
    e0: f64,
}

/// Per-epoch quantities at a point.
struct Point {
    powers: Vec<f64>,
    /// `1 + X_i`.
    slope: Vec<f64>,
    /// `dX_i / dr_i`.
    curvature: Vec<f64>,
}

impl Problem<'_> {
    /// Powers implied by the residuals, or `None` outside the domain.
    fn powers(&self, r: &[f64]) -> Option<Vec<f64>> {
        let n = self.curves.len();
        let mut powers = Vec::with_capacity(n + 1);
        let mut stored = self.e0;
        for (i, &ri) in r.iter().enumerate() {
            let p = (stored - ri) / self.lengths[i];
            if !(ri > 0.0 && p > 0.0) {
                return None;
            }
            powers.push(p);
            stored = ri + self.curves[i].harvested(ri);
        }
        let last = stored / self.lengths[n];
        if !(last > 0.0) {
            return None;
        }
        powers.push(last);
        Some(powers)
    }

    fn point(&self, r: &[f64]) -> Option<Point> {
        let powers = self.powers(r)?;
        Some(Point {
            slope: r
                .iter()
                .zip(self.curves)
                .map(|(&ri, c)| 1.0 + c.sensitivity(ri))
                .collect(),
            curvature: r
                .iter()
                .zip(self.curves)
                .map(|(&ri, c)| c.sensitivity_slope(ri))
                .collect(),
            powers,
        })
    }

    fn value(&self, powers: &[f64], mu: f64) -> f64 {
        powers
            .iter()
            .zip(self.lengths)
            .map(|(&p, &l)| l * p.ln_1p() + mu * p.ln())
            .sum()
    }
}

/// Maximizes the throughput over the residuals at every arrival and returns
/// the per-epoch powers, or `None` when no strictly feasible start exists.
pub(crate) fn optimal_powers(curves: &[ChargeCurve], lengths: &[f64], e0: f64) -> Option<Vec<f64>> {
    let n = curves.len();
    let problem = Problem {
        curves,
        lengths,
        e0,
    };

    // Spend half of what is stored in every epoch.
    let mut r = Vec::with_capacity(n);
    let mut stored = e0;
    for c in curves {
        let ri = 0.5 * stored;
        r.push(ri);
        stored = ri + c.harvested(ri);
    }
    let start = problem.point(&r)?;
    let scale = problem.value(&start.powers, 0.0) / (n + 1) as f64;
    if !(scale > 0.0) {
        return None;
    }

    let mut mu = INITIAL_WEIGHT * scale;
    let mut point = start;
    loop {
        let last_stage = mu <= FINAL_WEIGHT * scale;
        for _ in 0..NEWTON_STEPS {
            let Some(step) = newton_step(&problem, &point, mu) else {
                break;
            };
            let decrement: f64 = step
                .iter()
                .zip(gradient(&problem, &point, mu))
                .map(|(d, g)| d * g)
                .sum();
            if !(decrement > 0.0) {
                break;
            }
            let current = problem.value(&point.powers, mu);
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..BACKTRACKS {
                let trial: Vec<f64> = r.iter().zip(&step).map(|(x, d)| x + alpha * d).collect();
                if let Some(p) = problem.point(&trial) {
                    if problem.value(&p.powers, mu) >= current + 0.25 * alpha * decrement {
                        accepted = Some((trial, p));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let Some((trial, p)) = accepted else {
                break;
            };
            r = trial;
            point = p;
            let tolerance = if last_stage { 1e-14 * scale } else { 1e-3 * mu };
            if 0.5 * decrement <= tolerance {
                break;
            }
        }
        if last_stage {
            return Some(point.powers);
        }
        mu = (mu * WEIGHT_FACTOR).max(FINAL_WEIGHT * scale);
    }
}

/// `d/dr_i` of the barrier objective.
fn gradient(problem: &Problem<'_>, point: &Point, mu: f64) -> Vec<f64> {
    let marginal = marginals(problem, point, mu);
    (0..problem.curves.len())
        .map(|i| {
            -marginal[i] / problem.lengths[i]
                + marginal[i + 1] * point.slope[i] / problem.lengths[i + 1]
        })
        .collect()
}

/// `d/dp_i` of each epoch's term.
fn marginals(problem: &Problem<'_>, point: &Point, mu: f64) -> Vec<f64> {
    point
        .powers
        .iter()
        .zip(problem.lengths)
        .map(|(&p, &l)| l / (1.0 + p) + mu / p)
        .collect()
}

/// Newton direction: solves `-H d = g` with the tridiagonal Hessian.
fn newton_step(problem: &Problem<'_>, point: &Point, mu: f64) -> Option<Vec<f64>> {
    let n = problem.curves.len();
    let l = problem.lengths;
    let a = marginals(problem, point, mu);
    // Second derivative of each epoch's term in its power, negated.
    let b: Vec<f64> = point
        .powers
        .iter()
        .zip(l)
        .map(|(&p, &li)| li / ((1.0 + p) * (1.0 + p)) + mu / (p * p))
        .collect();
    let g = gradient(problem, point, mu);

    let mut diag = Vec::with_capacity(n);
    let mut off = Vec::with_capacity(n);
    for i in 0..n {
        let q = point.slope[i] / l[i + 1];
        diag.push(
            b[i] / (l[i] * l[i]) + b[i + 1] * q * q - a[i + 1] * point.curvature[i] / l[i + 1],
        );
        // Coupling of r_i and r_{i+1} through p_{i+1}.
        off.push(-b[i + 1] * q / l[i + 1]);
    }

    // Thomas algorithm on the symmetric positive definite system.
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        let lower = if i > 0 { off[i - 1] } else { 0.0 };
        let pivot = diag[i] - if i > 0 { lower * c[i - 1] } else { 0.0 };
        if !(pivot > 0.0 && pivot.is_finite()) {
            return None;
        }
        c[i] = off[i] / pivot;
        d[i] = (g[i] - if i > 0 { lower * d[i - 1] } else { 0.0 }) / pivot;
    }
    for i in (0..n.saturating_sub(1)).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Some(d)
}
