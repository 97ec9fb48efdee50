//! Linear transport with decay on chains and reversed-flow trees: the
//! characteristic (closed-form) solution, its expansion into per-path
//! boundary and initial-data terms for fast ensemble evaluation, min/max
//! trace extraction, and a first-order upwind scheme used as an independent
//! numerical oracle.
//!
//! Conventions: on every edge the spatial coordinate runs from the downstream
//! end x = 0 to the upstream end x = L, the velocity d is negative, the decay
//! rate m is nonpositive. In a network an edge's `from` endpoint is its
//! downstream end; transported matter moves to -> from.

use crate::error::{Error, Result};

/// Exponential initial profile r0(x) = scale * exp(rate * (x - pivot)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpProfile {
    pub scale: f64,
    pub rate: f64,
    pub pivot: f64,
}

impl ExpProfile {
    pub fn eval(&self, x: f64) -> f64 {
        self.scale * (self.rate * (x - self.pivot)).exp()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ChainEdge {
    /// Transport velocity d < 0.
    pub velocity: f64,
    /// Decay rate m <= 0.
    pub decay: f64,
    pub length: f64,
    pub initial: ExpProfile,
}

impl ChainEdge {
    /// Travel time along the edge.
    pub fn delay(&self) -> f64 {
        self.length / self.velocity.abs()
    }

    /// Attenuation across the edge, exp(-m L / d) <= 1.
    pub fn attenuation(&self) -> f64 {
        (-self.decay * self.length / self.velocity).exp()
    }
}

/// A linear chain: edge 0 touches the observed node, edge n-1 carries the
/// outer boundary condition at its upstream end.
#[derive(Debug, Clone)]
pub struct TransportChain {
    pub edges: Vec<ChainEdge>,
    pub horizon: f64,
}

impl TransportChain {
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Time after which the value at the观 observed end depends on boundary
    /// data only: sum of all travel times.
    pub fn information_time(&self) -> f64 {
        self.edges.iter().map(|e| e.delay()).sum()
    }

    /// C0-compatibility residuals |r_{k,0}(L_k) - coupling value at t = 0|
    /// per edge; `boundaries[i]` is the injection at node i+1.
    pub fn compatibility_residuals(&self, boundaries: &[&(dyn Fn(f64) -> f64 + Sync)]) -> Vec<f64> {
        let n = self.n_edges();
        (0..n)
            .map(|k| {
                let end = self.edges[k].initial.eval(self.edges[k].length);
                let expect = if k + 1 == n {
                    boundaries[k](0.0)
                } else {
                    self.edges[k + 1].initial.eval(0.0) + boundaries[k](0.0)
                };
                (end - expect).abs()
            })
            .collect()
    }
}

/// Closed-form solution of the chain model on edge `k` (0-based) at (t, x).
///
/// `boundaries[i]` is the boundary/injection function of node i+1; the last
/// entry is the outer boundary. Ties on the characteristic interfaces
/// evaluate the boundary branch.
pub fn solve_chain(
    chain: &TransportChain,
    boundaries: &[&(dyn Fn(f64) -> f64 + Sync)],
    t: f64,
    x: f64,
    k: usize,
) -> Result<f64> {
    let n = chain.n_edges();
    if k >= n || boundaries.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: boundaries.len().max(k + 1),
        });
    }
    let edge = &chain.edges[k];
    if !(0.0..=chain.horizon).contains(&t) || !(0.0..=edge.length).contains(&x) {
        return Err(Error::OutOfDomain(format!("(t, x) = ({t}, {x}) on edge {k}")));
    }
    let d_k = edge.velocity;
    let m_k = edge.decay;

    // cumulative S_i = sum_{j=k}^{i} L_j / d_j (negative, decreasing in i)
    let mut cum = vec![0.0; n - k + 1]; // cum[p] = S over the first p edges from k
    for (p, j) in (k..n).enumerate() {
        cum[p + 1] = cum[p] + chain.edges[j].length / chain.edges[j].velocity;
    }
    // decay sums M_i = sum_{j=k}^{i} m_j L_j / d_j
    let mut mcum = vec![0.0; n - k + 1];
    for (p, j) in (k..n).enumerate() {
        mcum[p + 1] = mcum[p] + chain.edges[j].decay * chain.edges[j].length / chain.edges[j].velocity;
    }

    let boundary_sum = |upto: usize| -> f64 {
        // sum over i = k..=upto of the boundary terms
        let mut acc = 0.0;
        for i in k..=upto {
            let coef = (m_k * x / d_k - mcum[i - k + 1]).exp();
            let arg = t - x / d_k + cum[i - k + 1];
            acc += coef * boundaries[i](arg);
        }
        acc
    };

    // boundary branch iff x >= d_k t + d_k S_{k,n}
    let threshold_full = d_k * t + d_k * cum[n - k];
    if x >= threshold_full - 1e-12 {
        return Ok(boundary_sum(n.saturating_sub(1).max(k) - 0).min(f64::INFINITY).max(f64::NEG_INFINITY));
    }

    // mixed branch: find l in {k..n} with
    // d_k t + d_k S_{k,l-1} <= x < d_k t + d_k S_{k,l}
    let mut l = k;
    loop {
        let lo = d_k * t + d_k * cum[l - k];
        let hi = d_k * t + d_k * cum[l - k + 1];
        if x >= lo - 1e-12 && x < hi - 1e-12 {
            break;
        }
        l += 1;
        if l >= n {
            // numerical edge of the last interface: use the boundary branch
            return Ok(boundary_sum(n - 1));
        }
    }
    let mut acc = 0.0;
    if l > k {
        acc += boundary_sum(l - 1);
    }
    let m_l = chain.edges[l].decay;
    let d_l = chain.edges[l].velocity;
    // gamma = m_l t - (m_l - m_k) x/d_k + sum_{j=k}^{l-1} (m_l - m_j) L_j/d_j
    let mut gamma = m_l * t - (m_l - m_k) * x / d_k;
    gamma += m_l * cum[l - k] - mcum[l - k];
    let delta = -d_l * t + d_l * x / d_k - d_l * cum[l - k];
    acc += gamma.exp() * chain.edges[l].initial.eval(delta);
    Ok(acc)
}

/// First-order upwind solution of the chain model, used as the verification
/// oracle for `solve_chain`.
pub struct UpwindSolution {
    /// Value at the observed end (x = 0 of edge 0) per time step.
    pub trace: Vec<f64>,
    pub times: Vec<f64>,
}

pub fn simulate_upwind(
    chain: &TransportChain,
    boundaries: &[&(dyn Fn(f64) -> f64 + Sync)],
    dx: f64,
    dt: f64,
) -> Result<UpwindSolution> {
    let n = chain.n_edges();
    let mut cells: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut nx: Vec<usize> = Vec::with_capacity(n);
    for e in &chain.edges {
        let steps = (e.length / dx).round().max(1.0) as usize;
        let h = e.length / steps as f64;
        let ratio = e.velocity.abs() * dt / h;
        if ratio > 1.0 + 1e-12 {
            return Err(Error::CflViolation { ratio });
        }
        nx.push(steps);
        cells.push(
            (0..=steps)
                .map(|i| e.initial.eval(i as f64 * h))
                .collect(),
        );
    }
    let n_steps = (chain.horizon / dt).round() as usize;
    let mut trace = Vec::with_capacity(n_steps + 1);
    let mut times = Vec::with_capacity(n_steps + 1);
    trace.push(cells[0][0]);
    times.push(0.0);
    for step in 1..=n_steps {
        let t_new = step as f64 * dt;
        // sweep from the outermost edge down so couplings see new-time values
        for k in (0..n).rev() {
            let e = chain.edges[k];
            let h = e.length / nx[k] as f64;
            let lam = -e.velocity * dt / h; // positive
            let old = cells[k].clone();
            for i in 0..nx[k] {
                cells[k][i] = old[i] - lam * (old[i] - old[i + 1]) + dt * e.decay * old[i];
            }
            // upstream boundary at x = L
            let bc = if k + 1 == n {
                boundaries[k](t_new)
            } else {
                cells[k + 1][0] + boundaries[k](t_new)
            };
            cells[k][nx[k]] = bc;
        }
        trace.push(cells[0][0]);
        times.push(t_new);
    }
    Ok(UpwindSolution { trace, times })
}

/// Min/max of a sampled trace over grid points with time >= t_start.
pub fn min_max_trace(values: &[f64], grid: &[f64], t_start: f64) -> Result<(f64, f64)> {
    let horizon = *grid.last().expect("nonempty grid");
    if t_start > horizon {
        return Err(Error::EmptyWindow {
            start: t_start,
            horizon,
        });
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (v, t) in values.iter().zip(grid) {
        if *t >= t_start - 1e-12 {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    Ok((lo, hi))
}

/// Edge of a reversed-flow transport network; `from` is the downstream end.
#[derive(Debug, Clone)]
pub struct TransportEdge {
    pub from: usize,
    pub to: usize,
    pub velocity: f64,
    pub decay: f64,
    pub length: f64,
    pub initial: ExpProfile,
}

impl TransportEdge {
    pub fn delay(&self) -> f64 {
        self.length / self.velocity.abs()
    }
    pub fn attenuation(&self) -> f64 {
        (-self.decay * self.length / self.velocity).exp()
    }
}

/// Tree network with injections at some nodes and observations at others.
#[derive(Debug, Clone)]
pub struct TransportNetwork {
    pub n_nodes: usize,
    pub edges: Vec<TransportEdge>,
    /// Nodes carrying boundary injections, in the order of the boundary set.
    pub injection_nodes: Vec<usize>,
    pub horizon: f64,
    /// Split fraction per (node, departing edge); missing entries default to
    /// equal division among the node's departing edges.
    pub splits: std::collections::HashMap<(usize, usize), f64>,
}

/// Delayed boundary contribution W * b_source(t - D).
#[derive(Debug, Clone, Copy)]
pub struct BoundaryTerm {
    /// Index into `injection_nodes`.
    pub source: usize,
    pub weight: f64,
    pub delay: f64,
}

/// Initial-data contribution of one edge prefix, active on
/// t in [t_enter, t_enter + delay).
#[derive(Debug, Clone, Copy)]
pub struct InitialTerm {
    pub edge: usize,
    pub weight: f64,
    pub t_enter: f64,
}

/// All terms reaching one observation node.
#[derive(Debug, Clone)]
pub struct PathTerms {
    pub boundary: Vec<BoundaryTerm>,
    pub initial: Vec<InitialTerm>,
    /// Time after which the value depends on boundary data only.
    pub information_time: f64,
}

impl TransportNetwork {
    fn split_weight(&self, node: usize, edge: usize) -> f64 {
        if let Some(&w) = self.splits.get(&(node, edge)) {
            return w;
        }
        let departing = self
            .edges
            .iter()
            .filter(|e| e.to == node)
            .count()
            .max(1);
        1.0 / departing as f64
    }

    /// Expand the coupled solution at `observation` into boundary and initial
    /// terms by walking the unique upstream paths.
    pub fn path_terms(&self, observation: usize) -> Result<PathTerms> {
        let source_index: std::collections::HashMap<usize, usize> = self
            .injection_nodes
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, i))
            .collect();
        let mut boundary = Vec::new();
        let mut initial = Vec::new();
        if let Some(&src) = source_index.get(&observation) {
            boundary.push(BoundaryTerm {
                source: src,
                weight: 1.0,
                delay: 0.0,
            });
        }
        let mut stack: Vec<(usize, f64, f64)> = self
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.from == observation)
            .map(|(j, _)| (j, 1.0, 0.0))
            .collect();
        let mut guard = 0usize;
        let mut info_time = 0.0f64;
        while let Some((j, w, delay)) = stack.pop() {
            guard += 1;
            if guard > self.edges.len() + 1 {
                return Err(Error::Topology(
                    "transport network contains a cycle".into(),
                ));
            }
            let e = &self.edges[j];
            initial.push(InitialTerm {
                edge: j,
                weight: w,
                t_enter: delay,
            });
            let upstream = e.to;
            let w2 = w * e.attenuation() * self.split_weight(upstream, j);
            let d2 = delay + e.delay();
            info_time = info_time.max(d2);
            if let Some(&src) = source_index.get(&upstream) {
                boundary.push(BoundaryTerm {
                    source: src,
                    weight: w2,
                    delay: d2,
                });
            }
            for (f, edge) in self.edges.iter().enumerate() {
                if edge.from == upstream {
                    stack.push((f, w2, d2));
                }
            }
        }
        boundary.sort_by(|a, b| a.source.cmp(&b.source).then(a.delay.total_cmp(&b.delay)));
        Ok(PathTerms {
            boundary,
            initial,
            information_time: info_time,
        })
    }

    /// Reference evaluation of the concentration at a node: boundary terms
    /// plus the active initial-data traces.
    pub fn value_at(
        &self,
        terms: &PathTerms,
        t: f64,
        boundary_of: &dyn Fn(usize, f64) -> f64,
    ) -> f64 {
        let mut acc = 0.0;
        for bt in &terms.boundary {
            if t >= bt.delay - 1e-12 {
                acc += bt.weight * boundary_of(bt.source, t - bt.delay);
            }
        }
        for it in &terms.initial {
            let e = &self.edges[it.edge];
            let local = t - it.t_enter;
            if local >= -1e-12 && local < e.delay() - 1e-12 {
                let local = local.max(0.0);
                acc += it.weight
                    * (e.decay * local).exp()
                    * e.initial.eval(e.velocity.abs() * local);
            }
        }
        acc
    }
}
