//! Chance-constrained bound optimization: minimize a linear cost over bound
//! vectors subject to P_N(x) >= alpha, where P_N is a frozen-sample KDE
//! probability. One smooth inequality with an analytic gradient makes a
//! log-barrier path followed by projected (Barzilai-Borwein) gradient steps
//! sufficient; KKT residuals of the returned point are reported alongside.

use crate::error::{Error, Result};
use crate::kde::{box_probability_with_grad, grad_probability_inlet, KdeModel, MinMaxKde};

/// Smooth approximated probability as a function of the decision vector.
pub trait ChanceConstraint: Sync {
    fn dim(&self) -> usize;
    fn probability(&self, x: &[f64]) -> f64;
    fn probability_with_grad(&self, x: &[f64]) -> (f64, Vec<f64>);
}

/// Upper pressure bounds over a frozen pressure-sample KDE.
pub struct StationaryBounds {
    pub kde: KdeModel,
    pub lower: Vec<f64>,
}

impl ChanceConstraint for StationaryBounds {
    fn dim(&self) -> usize {
        self.lower.len()
    }
    fn probability(&self, x: &[f64]) -> f64 {
        crate::kde::box_probability(&self.kde, &self.lower, x)
    }
    fn probability_with_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        box_probability_with_grad(&self.kde, &self.lower, x)
    }
}

/// Upper contamination bounds over frozen min/max trace samples.
pub struct DynamicBounds {
    pub kde: MinMaxKde,
    pub lower: Vec<f64>,
}

impl ChanceConstraint for DynamicBounds {
    fn dim(&self) -> usize {
        self.lower.len()
    }
    fn probability(&self, x: &[f64]) -> f64 {
        self.kde.minmax_box_probability(&self.lower, x)
    }
    fn probability_with_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        self.kde.minmax_with_grad(&self.lower, x)
    }
}

/// Scalar inlet-pressure decision: samples store the frozen squared pressure
/// drops g_ik = p_ref^2 - p_ik^2, pressures are re-evaluated per candidate
/// p0, bandwidths stay frozen.
pub struct InletPressure {
    base: KdeModel,
    drops: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl InletPressure {
    pub fn new(pressures_at_ref: KdeModel, p_ref: f64, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        let n = pressures_at_ref.len();
        let d = pressures_at_ref.dims();
        let mut drops = Vec::with_capacity(n * d);
        for i in 0..n {
            for &p in pressures_at_ref.sample(i) {
                drops.push(p_ref * p_ref - p * p);
            }
        }
        InletPressure {
            base: pressures_at_ref,
            drops,
            lower,
            upper,
        }
    }

    /// Samples rebuilt at inlet pressure p0; drops beyond p0^2 clamp to zero
    /// pressure (they sit far outside every box anyway).
    fn model_at(&self, p0: f64) -> KdeModel {
        let data: Vec<f64> = self
            .drops
            .iter()
            .map(|g| (p0 * p0 - g).max(1e-12).sqrt())
            .collect();
        self.base.with_data(data)
    }
}

impl ChanceConstraint for InletPressure {
    fn dim(&self) -> usize {
        1
    }
    fn probability(&self, x: &[f64]) -> f64 {
        let model = self.model_at(x[0]);
        crate::kde::box_probability(&model, &self.lower, &self.upper)
    }
    fn probability_with_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let model = self.model_at(x[0]);
        let p = crate::kde::box_probability(&model, &self.lower, &self.upper);
        let g = grad_probability_inlet(&model, &self.lower, &self.upper, x[0])
            .expect("pressure samples positive by construction");
        (p, vec![g])
    }
}

/// Residuals of the KKT system of min c^T x s.t. alpha - P_N(x) <= 0.
#[derive(Debug, Clone)]
pub struct KktPoint {
    pub decision: Vec<f64>,
    pub multiplier: f64,
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

/// Residuals at (x, mu) for cost c: stationarity ||c + mu * grad g_a||_inf,
/// feasibility max(g_a, 0), complementarity |mu * g_a|.
pub fn kkt_residuals<C: ChanceConstraint + ?Sized>(
    problem: &C,
    cost: &[f64],
    alpha: f64,
    x: &[f64],
    mu: f64,
) -> KktPoint {
    let (p, grad_p) = problem.probability_with_grad(x);
    let g = alpha - p;
    let stationarity = cost
        .iter()
        .zip(&grad_p)
        .map(|(c, gp)| (c - mu * gp).abs())
        .fold(0.0f64, f64::max);
    KktPoint {
        decision: x.to_vec(),
        multiplier: mu,
        stationarity,
        feasibility: g.max(0.0),
        complementarity: (mu * g).abs(),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Initial barrier weight; divided by 10 per stage.
    pub barrier_weight: f64,
    pub stages: usize,
    pub max_iterations: usize,
    /// Projected-gradient norm target of the final stage.
    pub gradient_tolerance: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            barrier_weight: 1e-3,
            stages: 5,
            max_iterations: 500,
            gradient_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChanceSolution {
    pub decision: Vec<f64>,
    pub probability: f64,
    pub kkt: KktPoint,
    pub iterations: usize,
}

/// Minimize c^T x subject to P_N(x) >= alpha and x >= lower_box, warm-started
/// at `start` (the deterministic solution in the published pipelines).
pub fn solve_chance<C: ChanceConstraint + ?Sized>(
    problem: &C,
    cost: &[f64],
    alpha: f64,
    lower_box: &[f64],
    start: &[f64],
    opts: SolveOptions,
) -> Result<ChanceSolution> {
    let d = problem.dim();
    assert_eq!(cost.len(), d);
    assert_eq!(lower_box.len(), d);
    let project = |x: &mut [f64]| {
        for (xi, lo) in x.iter_mut().zip(lower_box) {
            if *xi < *lo {
                *xi = *lo;
            }
        }
    };
    let mut x: Vec<f64> = start.to_vec();
    project(&mut x);

    // Phase 0: find a strictly feasible interior point along the ascent
    // direction of P_N.
    let margin = ((1.0 - alpha) * 0.25).min(0.02).max(1e-4);
    let mut iterations = 0usize;
    {
        let (mut p, mut grad) = problem.probability_with_grad(&x);
        let mut step = 1e-3 * (1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        let mut tries = 0;
        while p < alpha + margin {
            tries += 1;
            if tries > 200 {
                return Err(Error::InfeasibleAlpha { alpha });
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let dir: Vec<f64> = if norm > 1e-14 {
                grad.iter().map(|g| g / norm).collect()
            } else {
                vec![1.0 / (d as f64).sqrt(); d]
            };
            for (xi, di) in x.iter_mut().zip(&dir) {
                *xi += step * di;
            }
            project(&mut x);
            let (pn, gn) = problem.probability_with_grad(&x);
            if pn <= p + 1e-15 && norm <= 1e-14 {
                return Err(Error::InfeasibleAlpha { alpha });
            }
            if pn <= p + 1e-12 {
                step *= 2.0;
            }
            p = pn;
            grad = gn;
            iterations += 1;
        }
    }

    // Barrier path.
    let mut w = opts.barrier_weight;
    let mut p_final = problem.probability(&x);
    for stage in 0..opts.stages {
        let is_last = stage + 1 == opts.stages;
        let tol = if is_last {
            opts.gradient_tolerance
        } else {
            opts.gradient_tolerance.max(w * 1e-2)
        };
        let phi = |x: &[f64]| -> (f64, f64, Vec<f64>) {
            let (p, gp) = problem.probability_with_grad(x);
            let slack = p - alpha;
            if slack <= 0.0 {
                return (f64::INFINITY, p, vec![0.0; d]);
            }
            let value = cost.iter().zip(x).map(|(c, xi)| c * xi).sum::<f64>() - w * slack.ln();
            let grad = cost
                .iter()
                .zip(&gp)
                .map(|(c, g)| c - w * g / slack)
                .collect();
            (value, p, grad)
        };
        let (mut f, mut p, mut grad) = phi(&x);
        let mut prev_x: Option<Vec<f64>> = None;
        let mut prev_grad: Option<Vec<f64>> = None;
        let mut step = 1e-2 * (1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        for _ in 0..opts.max_iterations {
            iterations += 1;
            // projected-gradient stationarity measure
            let pg: f64 = x
                .iter()
                .zip(&grad)
                .zip(lower_box)
                .map(|((xi, gi), lo)| {
                    let moved = (xi - gi).max(*lo);
                    (moved - xi).abs()
                })
                .fold(0.0, f64::max);
            if pg < tol {
                break;
            }
            // BB1 step from the previous pair
            if let (Some(px), Some(pg_)) = (&prev_x, &prev_grad) {
                let mut sy = 0.0;
                let mut ss = 0.0;
                for i in 0..d {
                    let s = x[i] - px[i];
                    let y = grad[i] - pg_[i];
                    sy += s * y;
                    ss += s * s;
                }
                if sy > 1e-16 {
                    step = (ss / sy).clamp(1e-10, 1e6);
                }
            }
            prev_x = Some(x.clone());
            prev_grad = Some(grad.clone());
            let mut accepted = false;
            let mut t = step;
            for _ in 0..60 {
                let mut cand: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - t * gi).collect();
                project(&mut cand);
                let (fc, pc, gc) = phi(&cand);
                let dx: f64 = cand
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                if dx == 0.0 {
                    accepted = true;
                    break;
                }
                if fc.is_finite() && fc <= f - 1e-4 / t.max(1e-12) * dx {
                    x = cand;
                    f = fc;
                    p = pc;
                    grad = gc;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                return Err(Error::LineSearchStall { iteration: iterations });
            }
        }
        p_final = p;
        w *= 0.1;
    }
    w *= 10.0; // weight of the last completed stage

    let mu = w / (p_final - alpha).max(1e-300);
    let kkt = kkt_residuals(problem, cost, alpha, &x, mu);
    Ok(ChanceSolution {
        decision: x,
        probability: p_final,
        kkt,
        iterations,
    })
}

/// Monotone bisection for scalar problems: the smallest x in [lo, hi] with
/// P(x) >= alpha, assuming P is nondecreasing on the bracket.
pub fn bisect_alpha<C: ChanceConstraint + ?Sized>(
    problem: &C,
    alpha: f64,
    mut lo: f64,
    mut hi: f64,
) -> Result<f64> {
    assert_eq!(problem.dim(), 1);
    if problem.probability(&[hi]) < alpha {
        return Err(Error::InfeasibleAlpha { alpha });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if problem.probability(&[mid]) >= alpha {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
