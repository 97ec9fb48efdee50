//! Spheric radial decomposition: the feasibility probability of a Gaussian
//! load is the spherical average of chi-distribution measures of
//! one-dimensional ray sets. Stationary ray sets come from quadratic
//! inequalities along each root-to-node path; the fixed-time dynamic variant
//! reduces to a single linear inequality pair.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::network::{build_incidence, CompressorOrientation, Element, IncidenceMatrix, Network};
use crate::special::gamma_p;
use crate::stochastic::{FourierBoundarySet, GaussianLoadModel};

/// Endpoint merge tolerance keeping unions canonical.
const MERGE_EPS: f64 = 1e-12;

/// Sorted union of disjoint closed intervals on the nonnegative ray;
/// `f64::INFINITY` is the right-unbounded sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalUnion {
    intervals: Vec<(f64, f64)>,
}

impl IntervalUnion {
    pub fn empty() -> Self {
        IntervalUnion { intervals: vec![] }
    }

    pub fn all() -> Self {
        IntervalUnion {
            intervals: vec![(0.0, f64::INFINITY)],
        }
    }

    /// Build from arbitrary (possibly overlapping, unsorted) intervals,
    /// clipped to the nonnegative ray.
    pub fn from_intervals(raw: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut iv: Vec<(f64, f64)> = raw
            .into_iter()
            .filter_map(|(lo, hi)| {
                let lo = lo.max(0.0);
                if hi < lo {
                    None
                } else {
                    Some((lo, hi))
                }
            })
            .collect();
        iv.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(iv.len());
        for (lo, hi) in iv {
            match merged.last_mut() {
                Some(last) if lo <= last.1 + MERGE_EPS => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        IntervalUnion { intervals: merged }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn intersect(&self, other: &IntervalUnion) -> IntervalUnion {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.intervals.len() && j < other.intervals.len() {
            let a = self.intervals[i];
            let b = other.intervals[j];
            let lo = a.0.max(b.0);
            let hi = a.1.min(b.1);
            if lo <= hi {
                out.push((lo, hi));
            }
            if a.1 < b.1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        IntervalUnion::from_intervals(out)
    }

    /// Chi-measure sum_j F(hi_j) - F(lo_j) with `dof` degrees of freedom.
    pub fn chi_measure(&self, dof: usize) -> f64 {
        self.intervals
            .iter()
            .map(|&(lo, hi)| chi_cdf(hi, dof) - chi_cdf(lo, dof))
            .sum()
    }
}

/// Chi-distribution CDF with n degrees of freedom via the regularized lower
/// incomplete gamma P(n/2, r^2/2).
pub fn chi_cdf(r: f64, dof: usize) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    if r.is_infinite() {
        return 1.0;
    }
    gamma_p(dof as f64 / 2.0, r * r / 2.0)
}

/// sup { r >= 0 : mu + r * (L s) >= 0 componentwise }.
pub fn regular_range(direction_image: &DVector<f64>, mean: &DVector<f64>) -> f64 {
    if mean.iter().any(|&m| m < 0.0) {
        return 0.0;
    }
    let mut r = f64::INFINITY;
    for (m, d) in mean.iter().zip(direction_image.iter()) {
        if *d < 0.0 {
            r = r.min(-m / d);
        }
    }
    r
}

/// Solution set of a*r^2 + b*r + c <= 0 over the nonnegative ray.
fn quad_le_zero(a: f64, b: f64, c: f64) -> IntervalUnion {
    const EPS: f64 = 1e-12;
    if a.abs() < EPS {
        if b.abs() < EPS {
            return if c <= 0.0 {
                IntervalUnion::all()
            } else {
                IntervalUnion::empty()
            };
        }
        // linear
        let root = -c / b;
        return if b > 0.0 {
            IntervalUnion::from_intervals([(0.0, root)])
        } else {
            IntervalUnion::from_intervals([(root, f64::INFINITY)])
        };
    }
    let disc = b * b - 4.0 * a * c;
    if a > 0.0 {
        if disc < 0.0 {
            return IntervalUnion::empty();
        }
        let s = disc.sqrt();
        let r1 = (-b - s) / (2.0 * a);
        let r2 = (-b + s) / (2.0 * a);
        IntervalUnion::from_intervals([(r1, r2)])
    } else {
        if disc < 0.0 {
            return IntervalUnion::all();
        }
        let s = disc.sqrt();
        // roots with r1 <= r2 for the downward parabola
        let r1 = (-b + s) / (2.0 * a);
        let r2 = (-b - s) / (2.0 * a);
        IntervalUnion::from_intervals([(0.0, r1), (r2, f64::INFINITY)])
    }
}

fn quad_ge_zero(a: f64, b: f64, c: f64) -> IntervalUnion {
    quad_le_zero(-a, -b, -c)
}

/// Per-node quadratic data of the squared pressure along a ray,
/// pi_k(r) = head - (a r^2 + b r + c).
struct PathQuadratic {
    head: f64,
    sq_lo: f64,
    sq_hi: f64,
    a: f64,
    b: f64,
    c: f64,
}

/// Precomputed stationary ray-set builder for a single-supply tree.
///
/// Substituting b_s(r) = mu + r L s into the path pressure losses makes each
/// pressure box constraint quadratic in r on the regular range.
pub struct StationaryRays {
    inc: IncidenceMatrix,
    load_rank_slots: Vec<usize>,
    factor: DMatrix<f64>,
    mean: DVector<f64>,
    /// (path cols, per-col weight, head factor) per bounded node.
    paths: Vec<(Vec<(usize, f64)>, f64)>,
    bounds: Vec<(f64, f64)>,
    phi_by_col: Vec<f64>,
    root_sq: f64,
    q_mean: Vec<f64>,
}

impl StationaryRays {
    /// `bounds` are (node, pmin, pmax) triples for the constrained nodes;
    /// `load_nodes` maps the load-model dimensions onto network nodes.
    pub fn new(
        net: &Network,
        load_nodes: &[usize],
        model: &GaussianLoadModel,
        bounds: &[(usize, f64, f64)],
    ) -> Result<Self> {
        let inc = build_incidence(net)?;
        if load_nodes.len() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: load_nodes.len(),
                got: model.dim(),
            });
        }
        let n = inc.dim();
        let rank_of_node = {
            let mut v = vec![usize::MAX; net.n_nodes()];
            for (rank, &node) in inc.node_of_rank.iter().enumerate() {
                v[node] = rank;
            }
            v
        };
        let load_rank_slots: Vec<usize> = load_nodes
            .iter()
            .map(|&v| {
                let r = rank_of_node[v];
                assert!(r > 0, "load node cannot be the supply");
                r - 1
            })
            .collect();
        let phi_by_col: Vec<f64> = (0..n)
            .map(|c| net.edges[inc.edge_of_col[c]].element.phi())
            .collect();
        let boost_by_col: Vec<f64> = (0..n)
            .map(|c| match net.edges[inc.edge_of_col[c]].element {
                Element::Compressor { ratio } => {
                    let beta = match net.compressor_orientation {
                        CompressorOrientation::Boost => ratio,
                        CompressorOrientation::Drop => 1.0 / ratio,
                    };
                    if inc.edge_outward[c] {
                        beta
                    } else {
                        1.0 / beta
                    }
                }
                _ => 1.0,
            })
            .collect();
        let root = inc.node_of_rank[0];
        let p0 = net.supply_pressure(root).expect("root is the supply");

        let mut paths = Vec::with_capacity(bounds.len());
        for &(node, _, _) in bounds {
            let r = rank_of_node[node];
            if r == 0 || r == usize::MAX {
                return Err(Error::Topology(format!(
                    "bounded node {node} is not a demand node of the tree"
                )));
            }
            // collect columns root -> node
            let mut cols = Vec::new();
            let mut col = Some(r - 1);
            while let Some(c) = col {
                cols.push(c);
                col = inc.parent_col[c];
            }
            cols.reverse();
            // weight of a drop at col j: product of boosts strictly after j
            let mut head = 1.0;
            for &c in &cols {
                head *= boost_by_col[c];
            }
            let mut weighted = Vec::with_capacity(cols.len());
            let mut tail = head;
            for &c in &cols {
                tail /= boost_by_col[c];
                weighted.push((c, tail));
            }
            paths.push((weighted, head));
        }

        // mean flows by column
        let mut mu_by_rank = vec![0.0; n];
        for (slot, dim_mu) in load_rank_slots.iter().zip(model.mean.iter()) {
            mu_by_rank[*slot] += dim_mu;
        }
        let q_mean = inc.flows(&mu_by_rank)?;

        Ok(StationaryRays {
            inc,
            load_rank_slots,
            factor: model.factor.clone(),
            mean: model.mean.clone(),
            paths,
            bounds: bounds.iter().map(|&(_, lo, hi)| (lo, hi)).collect(),
            phi_by_col,
            root_sq: p0 * p0,
            q_mean,
        })
    }

    /// Intersect the box constraints with the regular range along direction s.
    pub fn ray_set(&self, s: &[f64]) -> IntervalUnion {
        let n = self.inc.dim();
        let sv = DVector::from_column_slice(s);
        let image = &self.factor * sv;
        let r_reg = regular_range(&image, &self.mean);
        if r_reg <= 0.0 && self.mean.iter().any(|&m| m < 0.0) {
            return IntervalUnion::empty();
        }

        let mut s_by_rank = vec![0.0; n];
        for (slot, ds) in self.load_rank_slots.iter().zip(image.iter()) {
            s_by_rank[*slot] += ds;
        }
        let q_dir = self.inc.flows(&s_by_rank).expect("dimension checked");

        let mut set = IntervalUnion::from_intervals([(0.0, r_reg)]);
        for ((path, head), &(pmin, pmax)) in self.paths.iter().zip(&self.bounds) {
            let mut quad = PathQuadratic {
                head: head * self.root_sq,
                sq_lo: pmin * pmin,
                sq_hi: pmax * pmax,
                a: 0.0,
                b: 0.0,
                c: 0.0,
            };
            for &(col, weight) in path {
                let w = weight * self.phi_by_col[col];
                if w == 0.0 {
                    continue;
                }
                let q0 = self.q_mean[col];
                let q1 = q_dir[col];
                quad.a += w * q1 * q1;
                quad.b += 2.0 * w * q0 * q1;
                quad.c += w * q0 * q0;
            }
            // head - (a r^2 + b r + c) >= sq_lo  and  <= sq_hi
            let upper = quad_ge_zero(quad.a, quad.b, quad.c - (quad.head - quad.sq_hi));
            let lower = quad_le_zero(quad.a, quad.b, quad.c - (quad.head - quad.sq_lo));
            set = set.intersect(&lower).intersect(&upper);
            if set.is_empty() {
                break;
            }
        }
        set
    }
}

/// Probability from precomputed ray sets: the mean chi-measure.
pub fn srd_probability(ray_sets: &[IntervalUnion], dof: usize) -> f64 {
    if ray_sets.is_empty() {
        return 0.0;
    }
    let total: f64 = ray_sets.iter().map(|s| s.chi_measure(dof)).sum();
    total / ray_sets.len() as f64
}

/// Inputs of the fixed-time dynamic ray set at one observed node: per
/// boundary source, the accumulated trace constant and the path delay.
pub struct DynamicRay<'a> {
    pub set: &'a FourierBoundarySet,
    /// (trace constant C_i including split weights, path delay D_i) per source.
    pub sources: Vec<(f64, f64)>,
    /// Deterministic contribution of sources whose evaluated time falls in the
    /// initial-data window at t*.
    pub initial_contribution: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub horizon: f64,
    /// Time grid for the positivity check of the regular range.
    pub grid_points: usize,
}

impl DynamicRay<'_> {
    /// Ray set at time `t_star` along direction `s` (one entry per source
    /// with nonnegative evaluated time).
    pub fn ray_set(&self, t_star: f64, s: &[f64]) -> Result<IntervalUnion> {
        let active: Vec<usize> = (0..self.sources.len())
            .filter(|&i| t_star - self.sources[i].1 >= 0.0)
            .collect();
        if active.len() != s.len() {
            return Err(Error::DimensionMismatch {
                expected: active.len(),
                got: s.len(),
            });
        }
        let times: Vec<f64> = active.iter().map(|&i| t_star - self.sources[i].1).collect();
        let sub = FourierBoundarySet {
            nodes: active
                .iter()
                .map(|&i| self.set.nodes[i].clone())
                .collect(),
            correlation: self.set.correlation,
        };
        let (mean, cov) = crate::stochastic::evaluated_load_distribution(&sub, &times);
        let chol = nalgebra::Cholesky::new(cov.clone())
            .ok_or(Error::CholeskyFailure)?
            .l();
        let sv = DVector::from_column_slice(s);
        let image = chol * sv;

        let mut denom = 0.0;
        let mut center = self.initial_contribution;
        for (k, &i) in active.iter().enumerate() {
            let c = self.sources[i].0;
            denom += c * image[k];
            center += c * mean[k];
        }
        if denom.abs() < 1e-14 {
            // degenerate direction: all-or-nothing by mean feasibility
            return Ok(if center >= self.r_min && center <= self.r_max {
                self.dynamic_regular_range(&active, s)
            } else {
                IntervalUnion::empty()
            });
        }
        let a1 = (self.r_min - center) / denom;
        let a2 = (self.r_max - center) / denom;
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        Ok(IntervalUnion::from_intervals([(lo, hi)])
            .intersect(&self.dynamic_regular_range(&active, s)))
    }

    /// Grid-checked positivity of every active source's boundary values.
    fn dynamic_regular_range(&self, active: &[usize], s: &[f64]) -> IntervalUnion {
        let mut r_max = f64::INFINITY;
        for gi in 0..self.grid_points {
            let t = self.horizon * gi as f64 / (self.grid_points - 1) as f64;
            let times = vec![t; active.len()];
            let sub = FourierBoundarySet {
                nodes: active
                    .iter()
                    .map(|&i| self.set.nodes[i].clone())
                    .collect(),
                correlation: self.set.correlation,
            };
            let (mean, cov) = crate::stochastic::evaluated_load_distribution(&sub, &times);
            // per-node marginal direction image; the diagonal suffices for a
            // componentwise positivity bound with independent nodes
            for k in 0..active.len() {
                let sd = cov[(k, k)].sqrt();
                let coef = sd * s[k];
                if coef < 0.0 && mean[k] >= 0.0 {
                    r_max = r_max.min(-mean[k] / coef);
                }
                if mean[k] < 0.0 {
                    return IntervalUnion::empty();
                }
            }
        }
        IntervalUnion::from_intervals([(0.0, r_max)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Edge, Node, NodeKind};
    use crate::special::normal_cdf;

    #[test]
    fn chi_cdf_reference_values() {
        assert_eq!(chi_cdf(0.0, 1), 0.0);
        // n=2: 1 - exp(-r^2/2)
        let r = (2.0 * 2f64.ln()).sqrt();
        assert!((chi_cdf(r, 2) - 0.5).abs() < 1e-12);
        // n=1: 2 Phi(r) - 1
        let v = chi_cdf(0.9443, 1);
        assert!((v - 0.6549).abs() < 1e-3, "{v}");
        assert!((v - (2.0 * normal_cdf(0.9443) - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn interval_union_canonicalization() {
        let u = IntervalUnion::from_intervals([(3.0, 4.0), (0.0, 1.0), (1.0 + 1e-13, 2.0)]);
        assert_eq!(u.intervals().len(), 2);
        assert_eq!(u.intervals()[0], (0.0, 2.0));
        let v = IntervalUnion::from_intervals([(0.5, 3.5)]);
        let w = u.intersect(&v);
        assert_eq!(w.intervals(), &[(0.5, 2.0), (3.0, 3.5)]);
    }

    #[test]
    fn chi_measure_is_a_probability() {
        let u = IntervalUnion::from_intervals([(0.2, 0.9), (1.4, f64::INFINITY)]);
        for dof in [1, 2, 5] {
            let m = u.chi_measure(dof);
            assert!((0.0..=1.0).contains(&m));
        }
        assert!((IntervalUnion::all().chi_measure(3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regular_range_cases() {
        let mu = DVector::from_vec(vec![4.0]);
        assert_eq!(regular_range(&DVector::from_vec(vec![0.5]), &mu), f64::INFINITY);
        assert_eq!(regular_range(&DVector::from_vec(vec![-0.5]), &mu), 8.0);
        let mu2 = DVector::from_vec(vec![4.0, 4.0]);
        let img = DVector::from_vec(vec![-0.5, 0.0]);
        assert_eq!(regular_range(&img, &mu2), 8.0);
        let neg = DVector::from_vec(vec![-1.0, 4.0]);
        assert_eq!(regular_range(&DVector::from_vec(vec![0.1, 0.1]), &neg), 0.0);
    }

    fn example1() -> (Network, GaussianLoadModel) {
        let net = Network::new(
            vec![
                Node {
                    id: 0,
                    kind: NodeKind::Supply { p0: 60.0 },
                },
                Node {
                    id: 1,
                    kind: NodeKind::Demand {
                        pmin: Some(40.0),
                        pmax: Some(60.0),
                    },
                },
            ],
            vec![Edge {
                from: 0,
                to: 1,
                element: Element::Pipe { phi: 100.0 },
            }],
            CompressorOrientation::default(),
        )
        .unwrap();
        let model = GaussianLoadModel::new(vec![4.0], vec![vec![0.25]]).unwrap();
        (net, model)
    }

    #[test]
    fn example_ray_sets_match_hand_solutions() {
        let (net, model) = example1();
        let rays = StationaryRays::new(&net, &[1], &model, &[(1, 40.0, 60.0)]).unwrap();
        let plus = rays.ray_set(&[1.0]);
        assert_eq!(plus.intervals().len(), 1);
        let (lo, hi) = plus.intervals()[0];
        assert!(lo.abs() < 1e-12);
        assert!((hi - (20f64.sqrt() - 4.0) / 0.5).abs() < 1e-10, "hi={hi}");
        let minus = rays.ray_set(&[-1.0]);
        assert_eq!(minus.intervals(), &[(0.0, 8.0)]);
    }

    #[test]
    fn unattainable_lower_bound_empties_the_ray() {
        let net = Network::new(
            vec![
                Node {
                    id: 0,
                    kind: NodeKind::Supply { p0: 60.0 },
                },
                Node {
                    id: 1,
                    kind: NodeKind::Demand {
                        pmin: Some(70.0),
                        pmax: Some(80.0),
                    },
                },
            ],
            vec![Edge {
                from: 0,
                to: 1,
                element: Element::Pipe { phi: 100.0 },
            }],
            CompressorOrientation::default(),
        )
        .unwrap();
        let model = GaussianLoadModel::new(vec![4.0], vec![vec![0.25]]).unwrap();
        let rays = StationaryRays::new(&net, &[1], &model, &[(1, 70.0, 80.0)]).unwrap();
        assert!(rays.ray_set(&[1.0]).is_empty());
        assert!(rays.ray_set(&[-1.0]).is_empty());
    }

    #[test]
    fn example1_probability_is_exact() {
        let (net, model) = example1();
        let rays = StationaryRays::new(&net, &[1], &model, &[(1, 40.0, 60.0)]).unwrap();
        let sets: Vec<IntervalUnion> = [[-1.0], [1.0]].iter().map(|s| rays.ray_set(s)).collect();
        let p = srd_probability(&sets, 1);
        // Phi oracle: P(b in [0, sqrt 20]) for N(4, 0.25)
        let oracle = normal_cdf((20f64.sqrt() - 4.0) / 0.5) - normal_cdf(-8.0);
        assert!((p - oracle).abs() < 1e-6, "srd {p} vs oracle {oracle}");
        assert!((p - 0.8275).abs() < 5e-4);
    }

    #[test]
    fn full_range_rays_give_probability_one() {
        let sets = vec![IntervalUnion::all(), IntervalUnion::all()];
        assert!((srd_probability(&sets, 2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn srd_is_deterministic_for_fixed_sphere_sample() {
        let (net, model) = example1();
        let rays = StationaryRays::new(&net, &[1], &model, &[(1, 40.0, 60.0)]).unwrap();
        let a: Vec<_> = [[-1.0], [1.0]].iter().map(|s| rays.ray_set(s)).collect();
        let b: Vec<_> = [[-1.0], [1.0]].iter().map(|s| rays.ray_set(s)).collect();
        assert_eq!(
            srd_probability(&a, 1).to_bits(),
            srd_probability(&b, 1).to_bits()
        );
    }

    #[test]
    fn quadratic_degeneracies() {
        // constant-true / constant-false
        assert_eq!(quad_le_zero(0.0, 0.0, -1.0), IntervalUnion::all());
        assert!(quad_le_zero(0.0, 0.0, 1.0).is_empty());
        // pure linear
        let lin = quad_le_zero(0.0, 2.0, -4.0);
        assert_eq!(lin.intervals(), &[(0.0, 2.0)]);
        // upward parabola with no real roots
        assert!(quad_le_zero(1.0, 0.0, 1.0).is_empty());
        // complement case
        let comp = quad_ge_zero(1.0, -3.0, 2.0);
        assert_eq!(comp.intervals().len(), 2);
    }
}
