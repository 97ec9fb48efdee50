//! End-to-end pipelines: turn a scenario plus (methods, N, seed) into
//! probability estimates, deterministic bounds, and chance-constrained
//! optima. The CLI and the acceptance suite are thin layers over this module.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kde::{BandwidthRule, KdeModel, MinMaxKde};
use crate::monte_carlo::{ProbabilityEstimate, Method};
use crate::optimizer::{
    solve_chance, ChanceSolution, DynamicBounds, InletPressure, SolveOptions, StationaryBounds,
};
use crate::scenario::{DynamicScenario, StationaryScenario, WindowPolicy};
use crate::srd::{srd_probability, DynamicRay, IntervalUnion, StationaryRays};
use crate::steady::node_pressures;
use crate::stochastic::{sample_boundary, sample_loads, sphere_sample, LoadSamples};
use crate::transport::PathTerms;

/// Bandwidth rule of the stationary pressure KDEs: the per-dimension 1D
/// reference rule reproduces the published estimator bias.
pub const STATIONARY_RULE: BandwidthRule = BandwidthRule::Silverman;
/// Bandwidth rule of the dynamic min/max KDEs: probability (integrated)
/// estimation wants the N^{-1/3} rate; the density-optimal 2n-dimensional
/// rule over-smooths the probust estimates by several tenths of a percent.
pub const DYNAMIC_RULE: BandwidthRule = BandwidthRule::CdfRate;

#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    /// Samples whose steady state failed (unphysical), excluded from KDEs.
    pub excluded_samples: usize,
    /// Load draws with at least one negative component (kept, flagged).
    pub negative_loads: usize,
    /// Upper bounds substituted from the deterministic solution when the
    /// scenario leaves them open.
    pub derived_upper_bounds: Option<Vec<f64>>,
}

// ---------------------------------------------------------------- stationary

/// Constrained nodes with resolved (lower, upper) boxes; missing uppers come
/// from the deterministic solution.
pub struct StationaryBoundsSpec {
    pub nodes: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub derived_upper: bool,
}

pub fn resolve_stationary_bounds(
    scn: &StationaryScenario,
    upper_override: Option<&[f64]>,
) -> Result<StationaryBoundsSpec> {
    let nodes = scn.network.bounded_nodes();
    if nodes.is_empty() {
        return Err(Error::Schema("no pressure-constrained nodes".into()));
    }
    let lower: Vec<f64> = nodes
        .iter()
        .map(|&v| scn.network.pressure_bounds(v).0.unwrap_or(0.0))
        .collect();
    if let Some(up) = upper_override {
        if up.len() != nodes.len() {
            return Err(Error::DimensionMismatch {
                expected: nodes.len(),
                got: up.len(),
            });
        }
        return Ok(StationaryBoundsSpec {
            nodes,
            lower,
            upper: up.to_vec(),
            derived_upper: false,
        });
    }
    let explicit: Vec<Option<f64>> = nodes
        .iter()
        .map(|&v| scn.network.pressure_bounds(v).1)
        .collect();
    if explicit.iter().all(|u| u.is_some()) {
        return Ok(StationaryBoundsSpec {
            upper: explicit.into_iter().map(|u| u.unwrap()).collect(),
            nodes,
            lower,
            derived_upper: false,
        });
    }
    // fill the open uppers from the deterministic solution
    let det = deterministic_bounds_stationary(scn)?;
    let upper = explicit
        .iter()
        .zip(&det)
        .map(|(e, d)| e.unwrap_or(*d))
        .collect();
    Ok(StationaryBoundsSpec {
        nodes,
        lower,
        upper,
        derived_upper: true,
    })
}

/// Node pressures at the mean load: the minimal deterministic upper bounds.
pub fn deterministic_bounds_stationary(scn: &StationaryScenario) -> Result<Vec<f64>> {
    let mut loads = vec![0.0; scn.network.n_nodes()];
    for (v, mu) in scn.load_nodes.iter().zip(scn.loads.mean.iter()) {
        loads[*v] = *mu;
    }
    let state = node_pressures(&scn.network, &loads)?;
    let nodes = scn.network.bounded_nodes();
    for &v in &nodes {
        if let (Some(lo), _) = scn.network.pressure_bounds(v) {
            if state.pressures[v] < lo {
                return Err(Error::InfeasibleAlpha { alpha: 1.0 });
            }
        }
    }
    Ok(nodes.iter().map(|&v| state.pressures[v]).collect())
}

/// Pressures at the constrained nodes for every load sample; `None` marks
/// unphysical draws.
pub struct PressureTable {
    pub rows: Vec<Option<Vec<f64>>>,
    pub nonneg: Vec<bool>,
    pub n_cols: usize,
}

pub fn pressure_table(
    scn: &StationaryScenario,
    samples: &LoadSamples,
    nodes: &[usize],
) -> PressureTable {
    let n = samples.len();
    let rows: Vec<Option<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut loads = vec![0.0; scn.network.n_nodes()];
            for (v, b) in scn.load_nodes.iter().zip(samples.row(i)) {
                loads[*v] = *b;
            }
            node_pressures(&scn.network, &loads)
                .ok()
                .map(|st| nodes.iter().map(|&v| st.pressures[v]).collect())
        })
        .collect();
    let nonneg: Vec<bool> = (0..n)
        .map(|i| samples.row(i).iter().all(|&b| b >= 0.0))
        .collect();
    PressureTable {
        rows,
        nonneg,
        n_cols: nodes.len(),
    }
}

fn kde_from_table(table: &PressureTable, rule: BandwidthRule) -> Result<(KdeModel, usize)> {
    let mut data = Vec::with_capacity(table.rows.len() * table.n_cols);
    let mut excluded = 0usize;
    for row in &table.rows {
        match row {
            Some(ps) => data.extend_from_slice(ps),
            None => excluded += 1,
        }
    }
    Ok((KdeModel::new(data, table.n_cols, rule)?, excluded))
}

pub struct StationaryEstimates {
    pub estimates: Vec<ProbabilityEstimate>,
    pub diagnostics: Diagnostics,
    pub bounds: StationaryBoundsSpec,
}

pub fn estimate_stationary(
    scn: &StationaryScenario,
    methods: &[Method],
    n: usize,
    seed: u64,
    upper_override: Option<&[f64]>,
) -> Result<StationaryEstimates> {
    let bounds = resolve_stationary_bounds(scn, upper_override)?;
    let mut diagnostics = Diagnostics {
        derived_upper_bounds: bounds
            .derived_upper
            .then(|| bounds.upper.clone()),
        ..Default::default()
    };
    let mut estimates = Vec::new();

    let needs_samples = methods.iter().any(|m| matches!(m, Method::Kde | Method::Mc));
    let table = if needs_samples {
        let samples = sample_loads(&scn.loads, n, seed);
        diagnostics.negative_loads = samples.negative_count;
        Some((pressure_table(scn, &samples, &bounds.nodes), samples))
    } else {
        None
    };

    for method in methods {
        match method {
            Method::Srd => {
                let triples: Vec<(usize, f64, f64)> = bounds
                    .nodes
                    .iter()
                    .zip(bounds.lower.iter().zip(&bounds.upper))
                    .map(|(&v, (&lo, &hi))| (v, lo, hi))
                    .collect();
                let rays = StationaryRays::new(&scn.network, &scn.load_nodes, &scn.loads, &triples)?;
                let dims = scn.loads.dim();
                let dirs = sphere_sample(dims, n, seed);
                let sets: Vec<IntervalUnion> =
                    dirs.par_iter().map(|s| rays.ray_set(s)).collect();
                let value = srd_probability(&sets, dims);
                let mut est = ProbabilityEstimate::new(value, Method::Srd, sets.len(), seed);
                if dims > 1 {
                    let measures: Vec<f64> = sets.iter().map(|s| s.chi_measure(dims)).collect();
                    if let Ok(ci) =
                        crate::monte_carlo::confidence_interval_across_runs(&measures, 0.95)
                    {
                        est.ci = Some((ci.0.max(0.0), ci.1.min(1.0), 0.95));
                    }
                }
                estimates.push(est);
            }
            Method::Mc => {
                let (table, _) = table.as_ref().expect("samples prepared");
                let hits = table
                    .rows
                    .par_iter()
                    .zip(&table.nonneg)
                    .filter(|(row, &nonneg)| {
                        nonneg
                            && row.as_ref().is_some_and(|ps| {
                                ps.iter()
                                    .zip(bounds.lower.iter().zip(&bounds.upper))
                                    .all(|(p, (lo, hi))| *p >= *lo && *p <= *hi)
                            })
                    })
                    .count();
                estimates.push(
                    ProbabilityEstimate::new(hits as f64 / n as f64, Method::Mc, n, seed)
                        .with_wald_ci(0.95),
                );
            }
            Method::Kde => {
                let (table, _) = table.as_ref().expect("samples prepared");
                let (kde, excluded) = kde_from_table(table, STATIONARY_RULE)?;
                diagnostics.excluded_samples = excluded;
                let value = crate::kde::box_probability(&kde, &bounds.lower, &bounds.upper);
                estimates.push(ProbabilityEstimate::new(value, Method::Kde, kde.len(), seed));
            }
        }
    }
    Ok(StationaryEstimates {
        estimates,
        diagnostics,
        bounds,
    })
}

pub struct OptimizeOutcome {
    pub deterministic: Vec<f64>,
    pub solution: ChanceSolution,
    pub diagnostics: Diagnostics,
}

pub fn optimize_stationary(
    scn: &StationaryScenario,
    alpha: f64,
    n: usize,
    seed: u64,
) -> Result<OptimizeOutcome> {
    let det = deterministic_bounds_stationary(scn)?;
    let nodes = scn.network.bounded_nodes();
    let lower: Vec<f64> = nodes
        .iter()
        .map(|&v| scn.network.pressure_bounds(v).0.unwrap_or(0.0))
        .collect();
    let samples = sample_loads(&scn.loads, n, seed);
    let table = pressure_table(scn, &samples, &nodes);
    let (kde, excluded) = kde_from_table(&table, STATIONARY_RULE)?;
    let problem = StationaryBounds { kde, lower: lower.clone() };
    let cost = vec![1.0; nodes.len()];
    let solution = solve_chance(&problem, &cost, alpha, &lower, &det, SolveOptions::default())?;
    Ok(OptimizeOutcome {
        deterministic: det,
        solution,
        diagnostics: Diagnostics {
            excluded_samples: excluded,
            negative_loads: samples.negative_count,
            derived_upper_bounds: None,
        },
    })
}

/// Minimize the inlet pressure subject to the chance constraint, for
/// single-supply scenarios with explicit pressure boxes.
pub fn optimize_inlet_pressure(
    scn: &StationaryScenario,
    alpha: f64,
    n: usize,
    seed: u64,
    p0_min: f64,
) -> Result<OptimizeOutcome> {
    let supplies = scn.network.supply_nodes();
    if supplies.len() != 1 {
        return Err(Error::Topology(
            "inlet-pressure optimization needs a single supply".into(),
        ));
    }
    let p_ref = scn.network.supply_pressure(supplies[0]).unwrap();
    let bounds = resolve_stationary_bounds(scn, None)?;
    let samples = sample_loads(&scn.loads, n, seed);
    let table = pressure_table(scn, &samples, &bounds.nodes);
    let (kde, excluded) = kde_from_table(&table, STATIONARY_RULE)?;
    let problem = InletPressure::new(kde, p_ref, bounds.lower.clone(), bounds.upper.clone());
    let solution = solve_chance(
        &problem,
        &[1.0],
        alpha,
        &[p0_min],
        &[p_ref],
        SolveOptions::default(),
    )?;
    Ok(OptimizeOutcome {
        deterministic: vec![p_ref],
        solution,
        diagnostics: Diagnostics {
            excluded_samples: excluded,
            negative_loads: samples.negative_count,
            derived_upper_bounds: None,
        },
    })
}

// ------------------------------------------------------------------- dynamic

/// Precomputed evaluation plans for the trace ensemble at every observed node.
pub struct DynamicEnsemble<'a> {
    pub scn: &'a DynamicScenario,
    pub grid: Vec<f64>,
    plans: Vec<ObsPlan>,
}

struct ObsPlan {
    node: usize,
    terms: PathTerms,
    /// Deterministic part per grid point: initial traces plus the offsets of
    /// the active boundary terms.
    base: Vec<f64>,
    /// One table per boundary term: rows over active grid points, columns
    /// over Fourier terms, entry = W * a0_m * psi_m(t - delay).
    tables: Vec<TermTable>,
    window_start: usize,
}

struct TermTable {
    source: usize,
    active_from: usize,
    n_terms: usize,
    data: Vec<f64>,
}

impl<'a> DynamicEnsemble<'a> {
    pub fn new(scn: &'a DynamicScenario) -> Result<Self> {
        let grid = scn.grid();
        let mut plans = Vec::with_capacity(scn.observations.len());
        for &(node, _, _) in &scn.observations {
            let terms = scn.network.path_terms(node)?;
            let mut base: Vec<f64> = grid
                .iter()
                .map(|&t| scn.network.value_at(&terms, t, &|_, _| 0.0))
                .collect();
            let mut tables = Vec::new();
            for bt in &terms.boundary {
                let model = &scn.boundaries.nodes[bt.source];
                let active_from = grid
                    .iter()
                    .position(|&t| t >= bt.delay - 1e-12)
                    .unwrap_or(grid.len());
                for g in active_from..grid.len() {
                    base[g] += bt.weight * model.offset;
                }
                let n_terms = model.coeffs.len();
                let mut data = Vec::with_capacity((grid.len() - active_from) * n_terms);
                for &t in &grid[active_from..] {
                    let tau = t - bt.delay;
                    for (m, a0) in model.coeffs.iter().enumerate() {
                        data.push(
                            bt.weight * a0 * crate::stochastic::fourier_basis(m, tau, model.horizon),
                        );
                    }
                }
                tables.push(TermTable {
                    source: bt.source,
                    active_from,
                    n_terms,
                    data,
                });
            }
            let window_start = match scn.window {
                WindowPolicy::Full => 0,
                WindowPolicy::InformationTime => grid
                    .iter()
                    .position(|&t| t >= terms.information_time - 1e-12)
                    .unwrap_or(grid.len() - 1),
            };
            plans.push(ObsPlan {
                node,
                terms,
                base,
                tables,
                window_start,
            });
        }
        Ok(DynamicEnsemble { scn, grid, plans })
    }

    pub fn n_observations(&self) -> usize {
        self.plans.len()
    }

    pub fn observation_nodes(&self) -> Vec<usize> {
        self.plans.iter().map(|p| p.node).collect()
    }

    /// Trace of realization `draws` at observation `obs` over the full grid.
    pub fn trace(&self, draws: &[Vec<f64>], obs: usize) -> Vec<f64> {
        let plan = &self.plans[obs];
        let mut values = plan.base.clone();
        for table in &plan.tables {
            let a = &draws[table.source];
            for (row, value) in values[table.active_from..].iter_mut().enumerate() {
                let off = row * table.n_terms;
                let mut acc = 0.0;
                for m in 0..table.n_terms {
                    acc += a[m] * table.data[off + m];
                }
                *value += acc;
            }
        }
        values
    }

    /// (min, max) of every observed trace over its window for realization
    /// index `index` of the boundary set.
    pub fn min_max(&self, index: u64, seed: u64) -> Vec<(f64, f64)> {
        let r = sample_boundary(&self.scn.boundaries, seed, index);
        self.min_max_of(&r.draws)
    }

    pub fn min_max_of(&self, draws: &[Vec<f64>]) -> Vec<(f64, f64)> {
        self.plans
            .iter()
            .enumerate()
            .map(|(obs, plan)| {
                let tr = self.trace(draws, obs);
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for &v in &tr[plan.window_start..] {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                (lo, hi)
            })
            .collect()
    }

    /// Deterministic trace from the original boundary expressions.
    pub fn deterministic_trace(&self, obs: usize) -> Vec<f64> {
        let plan = &self.plans[obs];
        self.grid
            .iter()
            .map(|&t| {
                self.scn.network.value_at(&plan.terms, t, &|src, tau| {
                    self.scn.expressions[src].eval(tau)
                })
            })
            .collect()
    }

    pub fn window_start_time(&self, obs: usize) -> f64 {
        self.grid[self.plans[obs].window_start]
    }

    /// Fixed-time SRD ray data at the (single) observed node.
    pub fn dynamic_ray(&self, r_min: f64, r_max: f64) -> Result<DynamicRay<'_>> {
        if self.plans.len() != 1 {
            return Err(Error::Topology(
                "fixed-time SRD supports a single observed node".into(),
            ));
        }
        let plan = &self.plans[0];
        Ok(DynamicRay {
            set: &self.scn.boundaries,
            sources: plan
                .terms
                .boundary
                .iter()
                .map(|bt| (bt.weight, bt.delay))
                .collect(),
            initial_contribution: 0.0,
            r_min,
            r_max,
            horizon: self.scn.network.horizon,
            grid_points: self.scn.grid_points,
        })
    }

    /// Initial-data contribution at time t (deterministic).
    pub fn initial_contribution_at(&self, obs: usize, t: f64) -> f64 {
        let plan = &self.plans[obs];
        self.scn.network.value_at(&plan.terms, t, &|_, _| 0.0)
            - plan
                .terms
                .boundary
                .iter()
                .filter(|bt| t >= bt.delay - 1e-12)
                .map(|bt| bt.weight * 0.0)
                .sum::<f64>()
    }
}

/// Deterministic upper bounds: the grid maxima of the deterministic traces
/// over the full horizon.
pub fn deterministic_bounds_dynamic(scn: &DynamicScenario) -> Result<Vec<f64>> {
    let ens = DynamicEnsemble::new(scn)?;
    let mut out = Vec::with_capacity(scn.observations.len());
    for (obs, &(_, rmin, _)) in scn.observations.iter().enumerate() {
        let trace = ens.deterministic_trace(obs);
        let lo = trace.iter().cloned().fold(f64::INFINITY, f64::min);
        if lo < rmin - 1e-9 {
            return Err(Error::InfeasibleAlpha { alpha: 1.0 });
        }
        let hi = trace.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        out.push(hi.max(rmin));
    }
    Ok(out)
}

pub struct DynamicBoundsSpec {
    pub nodes: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub derived_upper: bool,
}

pub fn resolve_dynamic_bounds(
    scn: &DynamicScenario,
    upper_override: Option<&[f64]>,
) -> Result<DynamicBoundsSpec> {
    let nodes: Vec<usize> = scn.observations.iter().map(|&(v, _, _)| v).collect();
    let lower: Vec<f64> = scn.observations.iter().map(|&(_, lo, _)| lo).collect();
    if let Some(up) = upper_override {
        if up.len() != nodes.len() {
            return Err(Error::DimensionMismatch {
                expected: nodes.len(),
                got: up.len(),
            });
        }
        return Ok(DynamicBoundsSpec {
            nodes,
            lower,
            upper: up.to_vec(),
            derived_upper: false,
        });
    }
    let explicit: Vec<Option<f64>> = scn.observations.iter().map(|&(_, _, hi)| hi).collect();
    if explicit.iter().all(|u| u.is_some()) {
        return Ok(DynamicBoundsSpec {
            upper: explicit.into_iter().map(|u| u.unwrap()).collect(),
            nodes,
            lower,
            derived_upper: false,
        });
    }
    let det = deterministic_bounds_dynamic(scn)?;
    Ok(DynamicBoundsSpec {
        upper: explicit
            .iter()
            .zip(&det)
            .map(|(e, d)| e.unwrap_or(*d))
            .collect(),
        nodes,
        lower,
        derived_upper: true,
    })
}

/// Min/max samples of every observed trace for N realizations.
pub fn min_max_table(ens: &DynamicEnsemble, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let k = ens.n_observations();
    let pairs: Vec<Vec<(f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| ens.min_max(i as u64, seed))
        .collect();
    let mut mins = Vec::with_capacity(n * k);
    let mut maxs = Vec::with_capacity(n * k);
    for row in pairs {
        for (lo, hi) in row {
            mins.push(lo);
            maxs.push(hi);
        }
    }
    (mins, maxs)
}

pub struct DynamicEstimates {
    pub estimates: Vec<ProbabilityEstimate>,
    pub diagnostics: Diagnostics,
    pub bounds: DynamicBoundsSpec,
}

pub fn estimate_dynamic(
    scn: &DynamicScenario,
    methods: &[Method],
    n: usize,
    seed: u64,
    upper_override: Option<&[f64]>,
    t_star: Option<f64>,
) -> Result<DynamicEstimates> {
    let bounds = resolve_dynamic_bounds(scn, upper_override)?;
    let ens = DynamicEnsemble::new(scn)?;
    let mut diagnostics = Diagnostics {
        derived_upper_bounds: bounds.derived_upper.then(|| bounds.upper.clone()),
        ..Default::default()
    };
    let k = ens.n_observations();

    let needs_samples = methods.iter().any(|m| matches!(m, Method::Kde | Method::Mc));
    let table = needs_samples.then(|| min_max_table(&ens, n, seed));

    let mut estimates = Vec::new();
    for method in methods {
        match method {
            Method::Mc => {
                let (mins, maxs) = table.as_ref().expect("samples prepared");
                let hits = (0..n)
                    .into_par_iter()
                    .filter(|&i| {
                        (0..k).all(|j| {
                            mins[i * k + j] >= bounds.lower[j]
                                && maxs[i * k + j] <= bounds.upper[j]
                        })
                    })
                    .count();
                estimates.push(
                    ProbabilityEstimate::new(hits as f64 / n as f64, Method::Mc, n, seed)
                        .with_wald_ci(0.95),
                );
            }
            Method::Kde => {
                let (mins, maxs) = table.as_ref().expect("samples prepared");
                let mm = MinMaxKde::new(mins, maxs, k, DYNAMIC_RULE)?;
                let value = mm.minmax_box_probability(&bounds.lower, &bounds.upper);
                estimates.push(ProbabilityEstimate::new(value, Method::Kde, n, seed));
            }
            Method::Srd => {
                let t_star = t_star.ok_or_else(|| {
                    Error::Topology(
                        "probust SRD over the whole horizon is not available; \
                         pass a fixed evaluation time (t*) or use kde/mc"
                            .into(),
                    )
                })?;
                let ray = ens.dynamic_ray(bounds.lower[0], bounds.upper[0])?;
                let mut ray = ray;
                ray.initial_contribution = ens.initial_contribution_at(0, t_star);
                let dims = ray
                    .sources
                    .iter()
                    .filter(|&&(_, delay)| t_star - delay >= 0.0)
                    .count();
                if dims == 0 {
                    return Err(Error::EmptyWindow {
                        start: t_star,
                        horizon: scn.network.horizon,
                    });
                }
                let dirs = sphere_sample(dims, n, seed);
                let sets: Vec<IntervalUnion> = dirs
                    .par_iter()
                    .map(|s| ray.ray_set(t_star, s))
                    .collect::<Result<_>>()?;
                let value = srd_probability(&sets, dims);
                estimates.push(ProbabilityEstimate::new(value, Method::Srd, sets.len(), seed));
            }
        }
    }
    diagnostics.excluded_samples = 0;
    Ok(DynamicEstimates {
        estimates,
        diagnostics,
        bounds,
    })
}

pub fn optimize_dynamic(
    scn: &DynamicScenario,
    alpha: f64,
    n: usize,
    seed: u64,
) -> Result<OptimizeOutcome> {
    let det = deterministic_bounds_dynamic(scn)?;
    let lower: Vec<f64> = scn.observations.iter().map(|&(_, lo, _)| lo).collect();
    let ens = DynamicEnsemble::new(scn)?;
    let (mins, maxs) = min_max_table(&ens, n, seed);
    let mm = MinMaxKde::new(&mins, &maxs, ens.n_observations(), DYNAMIC_RULE)?;
    let problem = DynamicBounds {
        kde: mm,
        lower: lower.clone(),
    };
    let cost = vec![1.0; lower.len()];
    let solution = solve_chance(&problem, &cost, alpha, &lower, &det, SolveOptions::default())?;
    Ok(OptimizeOutcome {
        deterministic: det,
        solution,
        diagnostics: Diagnostics::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_dynamic, build_stationary, ScenarioFile};

    fn example1() -> StationaryScenario {
        let json = r#"{
            "kind": "stationary", "name": "example1",
            "network": {
                "nodes": [
                    {"id": 0, "kind": "supply", "p0": 60.0},
                    {"id": 1, "kind": "demand", "pmin": 40.0, "pmax": 60.0}
                ],
                "edges": [{"from": 0, "to": 1, "kind": "pipe", "phi": 100.0}]
            },
            "loads": {"nodes": [1], "mu": [4.0], "cov": [[0.25]]}
        }"#;
        match ScenarioFile::from_json(json).unwrap() {
            ScenarioFile::Stationary(s) => build_stationary(&s).unwrap(),
            _ => unreachable!(),
        }
    }

    #[test]
    fn example1_three_methods_agree() {
        let scn = example1();
        let out = estimate_stationary(
            &scn,
            &[Method::Srd, Method::Kde, Method::Mc],
            50_000,
            7,
            None,
        )
        .unwrap();
        let srd = out.estimates[0].value;
        let kde = out.estimates[1].value;
        let mc = out.estimates[2].value;
        assert!((srd - 0.8275).abs() < 5e-4, "srd {srd}");
        assert!((0.820..=0.835).contains(&kde), "kde {kde}");
        assert!((0.820..=0.835).contains(&mc), "mc {mc}");
        // SRD and MC within 4 binomial standard errors
        let se = (mc * (1.0 - mc) / 50_000.0).sqrt();
        assert!((srd - mc).abs() <= 4.0 * se);
    }

    #[test]
    fn deterministic_bounds_of_example1() {
        let scn = example1();
        let det = deterministic_bounds_stationary(&scn).unwrap();
        assert!((det[0] - 2000f64.sqrt()).abs() < 1e-10);
    }

    fn example3() -> DynamicScenario {
        let json = r#"{
            "kind": "dynamic", "name": "example3",
            "horizon": 4.0, "grid_points": 101,
            "network": {
                "nodes": [
                    {"id": 0, "kind": "observe", "rmin": 2.0, "rmax": 6.0},
                    {"id": 1, "kind": "boundary"}
                ],
                "edges": [{"from": 0, "to": 1, "d": -5.0, "m": -1.0, "L": 1.0,
                           "initial": {"kind": "exp", "scale": 5.0, "rate": 0.2, "pivot": 1.0}}]
            },
            "boundary": [{"node": 1, "sigma": 0.25, "nf": 30,
                          "bd": {"kind": "sin", "amplitude": -2.0, "frequency": 2.0, "offset": 5.0}}]
        }"#;
        match ScenarioFile::from_json(json).unwrap() {
            ScenarioFile::Dynamic(d) => build_dynamic(&d).unwrap(),
            _ => unreachable!(),
        }
    }

    #[test]
    fn example3_trace_is_constant_then_boundary_driven() {
        let scn = example3();
        let ens = DynamicEnsemble::new(&scn).unwrap();
        let det = ens.deterministic_trace(0);
        let c = 5.0 * (-0.2f64).exp();
        // constant before the information time 0.2
        for (v, t) in det.iter().zip(ens.grid.iter()) {
            if *t < 0.2 - 1e-12 {
                assert!((v - c).abs() < 1e-12, "t={t}");
            }
        }
        // boundary-driven afterwards: matches the chain closed form
        let idx = 40; // t = 1.6
        let expect = (-0.2f64).exp() * (-2.0 * (2.0 * (ens.grid[idx] - 0.2)).sin() + 5.0);
        assert!((det[idx] - expect).abs() < 1e-9);
    }

    #[test]
    fn ensemble_trace_matches_reference_evaluation() {
        let scn = example3();
        let ens = DynamicEnsemble::new(&scn).unwrap();
        let r = sample_boundary(&scn.boundaries, 3, 17);
        let fast = ens.trace(&r.draws, 0);
        let terms = scn.network.path_terms(0).unwrap();
        for (g, &t) in ens.grid.iter().enumerate() {
            let slow = scn
                .network
                .value_at(&terms, t, &|src, tau| r.evaluate(&scn.boundaries, src, tau));
            assert!(
                (fast[g] - slow).abs() < 1e-10,
                "t={t}: {} vs {slow}",
                fast[g]
            );
        }
    }

    #[test]
    fn example3_srd_at_final_time_matches_kde_and_mc() {
        let scn = example3();
        // fixed-time probability at t* = T: SRD (exact for n = 1) vs KDE/MC
        let t_star = 4.0;
        let out = estimate_dynamic(&scn, &[Method::Srd], 1000, 9, None, Some(t_star)).unwrap();
        let srd = out.estimates[0].value;
        // direct MC of the fixed-time value
        let ens = DynamicEnsemble::new(&scn).unwrap();
        let n = 100_000;
        let hits: usize = (0..n)
            .filter(|&i| {
                let r = sample_boundary(&scn.boundaries, 9, i as u64);
                let tr = ens.trace(&r.draws, 0);
                let v = *tr.last().unwrap();
                (2.0..=6.0).contains(&v)
            })
            .count();
        let mc = hits as f64 / n as f64;
        assert!((srd - mc).abs() < 5e-3, "srd {srd} vs fixed-time mc {mc}");
    }
}
