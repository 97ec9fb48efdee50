//! Directed tree/forest networks of pipes, compressors and valves, plus the
//! incidence-matrix algebra used by the stationary solver.
//!
//! Nodes are numbered `0..n_nodes`; each edge stores its endpoints in file
//! order. Closed valves are removed from the active topology. The incidence
//! reduction (and everything downstream of it) follows a breadth-first
//! numbering from the lowest-id supply node so the reduced matrix is upper
//! triangular.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a compressor with ratio `u` maps squared pressures across its edge.
///
/// GasLib-11 reproduces the published node pressures only with `Boost`
/// (`p_out^2 = u * p_in^2`), which is therefore the default; `Drop` implements
/// the literal `p_in^2 / p_out^2 = u` reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CompressorOrientation {
    #[default]
    Boost,
    Drop,
}

/// Physical parameters of a pipe when `phi` is not given directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipePhysics {
    pub lambda: f64,
    #[serde(rename = "D")]
    pub diameter: f64,
    pub c: f64,
    #[serde(rename = "L")]
    pub length: f64,
    pub rs: f64,
    pub temperature: f64,
}

/// Network element on an edge.
#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    Pipe { phi: f64 },
    Compressor { ratio: f64 },
    Valve { open: bool },
}

impl Element {
    /// Pressure-loss coefficient; zero for frictionless elements.
    pub fn phi(&self) -> f64 {
        match self {
            Element::Pipe { phi } => *phi,
            _ => 0.0,
        }
    }

    pub fn is_closed_valve(&self) -> bool {
        matches!(self, Element::Valve { open: false })
    }
}

/// φ^e = λ/(c² D) (R_S T)² L.
pub fn phi_coefficient(p: &PipePhysics) -> f64 {
    let rst = p.rs * p.temperature;
    p.lambda / (p.c * p.c * p.diameter) * rst * rst * p.length
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub element: Element,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    /// Fixed pressure `p0`.
    Supply { p0: f64 },
    /// Consumer with optional pressure box.
    Demand { pmin: Option<f64>, pmax: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub kind: NodeKind,
}

impl Node {
    pub fn is_supply(&self) -> bool {
        matches!(self.kind, NodeKind::Supply { .. })
    }
}

/// Validated network. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub nodes: Vec<Node>,
    /// All edges as given, including closed valves.
    pub edges: Vec<Edge>,
    pub compressor_orientation: CompressorOrientation,
    /// Indices into `edges` that survive valve removal.
    active: Vec<usize>,
    /// BFS numbering from the lowest-id supply node (node -> rank).
    bfs_rank: Vec<usize>,
}

impl Network {
    pub fn new(
        nodes: Vec<Node>,
        edges: Vec<Edge>,
        orientation: CompressorOrientation,
    ) -> Result<Self> {
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::Schema(format!(
                    "node ids must be 0..{} in order, found {} at position {}",
                    n - 1,
                    node.id,
                    i
                )));
            }
            if let NodeKind::Supply { p0 } = node.kind {
                if p0 <= 0.0 {
                    return Err(Error::Schema(format!("supply node {} has p0 <= 0", i)));
                }
            }
            if let NodeKind::Demand {
                pmin: Some(lo),
                pmax: Some(hi),
            } = node.kind
            {
                if lo >= hi {
                    return Err(Error::Schema(format!(
                        "demand node {} has pmin >= pmax ({lo} >= {hi})",
                        i
                    )));
                }
            }
        }
        for (j, e) in edges.iter().enumerate() {
            if e.from >= n || e.to >= n || e.from == e.to {
                return Err(Error::Schema(format!("edge {} has invalid endpoints", j)));
            }
            match e.element {
                Element::Pipe { phi } if phi < 0.0 => {
                    return Err(Error::Schema(format!("edge {} has negative phi", j)))
                }
                Element::Compressor { ratio } if ratio <= 0.0 => {
                    return Err(Error::Schema(format!("edge {} has ratio <= 0", j)))
                }
                _ => {}
            }
        }
        let active: Vec<usize> = (0..edges.len())
            .filter(|&j| !edges[j].element.is_closed_valve())
            .collect();

        // The active subgraph must be a forest and every component needs a supply.
        let mut dsu = Dsu::new(n);
        for &j in &active {
            let e = &edges[j];
            if !dsu.union(e.from, e.to) {
                return Err(Error::Topology(format!(
                    "open edges form a cycle (edge {} closes it)",
                    j
                )));
            }
        }
        let mut has_supply = vec![false; n];
        for node in &nodes {
            if node.is_supply() {
                has_supply[dsu.find(node.id)] = true;
            }
        }
        for v in 0..n {
            if !has_supply[dsu.find(v)] {
                return Err(Error::Topology(format!(
                    "component of node {} has no supply node",
                    v
                )));
            }
        }

        let bfs_rank = bfs_ranks(n, &edges, &active, &nodes);
        Ok(Network {
            nodes,
            edges,
            compressor_orientation: orientation,
            active,
            bfs_rank,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Active (valve-open) edge indices.
    pub fn active_edges(&self) -> &[usize] {
        &self.active
    }

    pub fn supply_nodes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|nd| nd.is_supply())
            .map(|nd| nd.id)
            .collect()
    }

    /// Demand nodes that carry a pressure box (the constrained exits).
    pub fn bounded_nodes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|nd| {
                matches!(
                    nd.kind,
                    NodeKind::Demand { pmin: Some(_), .. } | NodeKind::Demand { pmax: Some(_), .. }
                )
            })
            .map(|nd| nd.id)
            .collect()
    }

    /// BFS numbering from the lowest-id supply (node -> rank, root rank 0).
    pub fn bfs_rank(&self) -> &[usize] {
        &self.bfs_rank
    }

    pub fn supply_pressure(&self, node: usize) -> Option<f64> {
        match self.nodes[node].kind {
            NodeKind::Supply { p0 } => Some(p0),
            _ => None,
        }
    }

    pub fn pressure_bounds(&self, node: usize) -> (Option<f64>, Option<f64>) {
        match self.nodes[node].kind {
            NodeKind::Demand { pmin, pmax } => (pmin, pmax),
            NodeKind::Supply { .. } => (None, None),
        }
    }
}

fn bfs_ranks(n: usize, edges: &[Edge], active: &[usize], nodes: &[Node]) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for &j in active {
        adj[edges[j].from].push(edges[j].to);
        adj[edges[j].to].push(edges[j].from);
    }
    let mut rank = vec![usize::MAX; n];
    let mut next = 0;
    let mut queue = std::collections::VecDeque::new();
    let mut roots: Vec<usize> = nodes.iter().filter(|nd| nd.is_supply()).map(|nd| nd.id).collect();
    roots.sort_unstable();
    for root in roots {
        if rank[root] != usize::MAX {
            continue;
        }
        rank[root] = next;
        next += 1;
        queue.push_back(root);
        while let Some(v) = queue.pop_front() {
            let mut nb = adj[v].clone();
            nb.sort_unstable();
            for w in nb {
                if rank[w] == usize::MAX {
                    rank[w] = next;
                    next += 1;
                    queue.push_back(w);
                }
            }
        }
    }
    // Isolated non-supply nodes were rejected earlier; any leftover gets a rank anyway.
    for r in rank.iter_mut() {
        if *r == usize::MAX {
            *r = next;
            next += 1;
        }
    }
    rank
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu {
            parent: (0..n).collect(),
        }
    }
    fn find(&mut self, v: usize) -> usize {
        if self.parent[v] != v {
            let root = self.find(self.parent[v]);
            self.parent[v] = root;
        }
        self.parent[v]
    }
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// Reduced incidence matrix of a single-supply tree plus its path-indicator
/// inverse, both in exact integer arithmetic.
///
/// Rows/columns follow the BFS numbering: row `i` is the node of BFS rank
/// `i+1`, column `j` is the unique edge that enters that node from the root
/// side. Edges are canonically oriented away from the root, so the inverse
/// has entries in {0, 1}.
#[derive(Debug, Clone)]
pub struct IncidenceMatrix {
    n: usize,
    /// Reduced incidence matrix A (n x n), row-major.
    pub reduced: Vec<i8>,
    /// Path indicator A^{-1} (n x n), row-major; `inverse[e][v] = 1` iff edge e
    /// lies on the root -> node(v+1) path, i.e. node v+1 sits below edge e.
    pub inverse: Vec<i8>,
    /// Original node id of BFS rank r (rank 0 is the root).
    pub node_of_rank: Vec<usize>,
    /// Active edge index (into `Network::edges`) of column j.
    pub edge_of_col: Vec<usize>,
    /// Parent column of column j (the edge one step closer to the root), if any.
    pub parent_col: Vec<Option<usize>>,
    /// Whether column j's stored edge direction agrees with root-outward.
    pub edge_outward: Vec<bool>,
}

/// Build the incidence algebra for a single-supply tree.
pub fn build_incidence(net: &Network) -> Result<IncidenceMatrix> {
    let supplies = net.supply_nodes();
    if supplies.len() != 1 {
        return Err(Error::Topology(format!(
            "incidence reduction needs exactly one supply node, found {}",
            supplies.len()
        )));
    }
    let root = supplies[0];
    let n_nodes = net.n_nodes();
    let n = n_nodes - 1;

    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_nodes]; // (neighbor, edge idx)
    for &j in net.active_edges() {
        let e = &net.edges[j];
        adj[e.from].push((e.to, j));
        adj[e.to].push((e.from, j));
    }

    // BFS from the root; the edge entering node of rank r+1 becomes column r.
    let mut node_of_rank = vec![root];
    let mut rank_of_node = vec![usize::MAX; n_nodes];
    rank_of_node[root] = 0;
    let mut edge_of_col = Vec::with_capacity(n);
    let mut parent_rank = Vec::with_capacity(n);
    let mut edge_outward = Vec::with_capacity(n);
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        let mut nb = adj[v].clone();
        nb.sort_unstable();
        for (w, j) in nb {
            if rank_of_node[w] != usize::MAX {
                continue;
            }
            rank_of_node[w] = node_of_rank.len();
            node_of_rank.push(w);
            edge_of_col.push(j);
            parent_rank.push(rank_of_node[v]);
            edge_outward.push(net.edges[j].from == v);
            queue.push_back(w);
        }
    }
    if node_of_rank.len() != n_nodes {
        return Err(Error::Topology(
            "network is not connected to its supply".into(),
        ));
    }

    // Reduced incidence: column j has +1 at its child row and -1 at the parent
    // row (dropped when the parent is the root). Canonical orientation is
    // root-outward regardless of stored direction.
    let mut reduced = vec![0i8; n * n];
    for j in 0..n {
        let child_row = j; // rank j+1 -> row j
        reduced[child_row * n + j] = 1;
        let pr = parent_rank[j];
        if pr > 0 {
            reduced[(pr - 1) * n + j] = -1;
        }
    }
    // Path indicator by walking each node back to the root.
    let mut inverse = vec![0i8; n * n];
    let mut parent_col = vec![None; n];
    for j in 0..n {
        let pr = parent_rank[j];
        if pr > 0 {
            parent_col[j] = Some(pr - 1);
        }
    }
    for i in 0..n {
        let mut col = Some(i);
        while let Some(c) = col {
            inverse[c * n + i] = 1;
            col = parent_col[c];
        }
    }

    Ok(IncidenceMatrix {
        n,
        reduced,
        inverse,
        node_of_rank,
        edge_of_col,
        parent_col,
        edge_outward,
    })
}

impl IncidenceMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// A * A^{-1} in integer arithmetic; identity for a valid build.
    pub fn product_with_inverse(&self) -> Vec<i32> {
        let n = self.n;
        let mut out = vec![0i32; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.reduced[i * n + k] as i32;
                if a == 0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += a * self.inverse[k * n + j] as i32;
                }
            }
        }
        out
    }

    /// Flows q = A^{-1} b for loads indexed by BFS rank (rank 1.. -> slot 0..).
    pub fn flows(&self, loads_by_rank: &[f64]) -> Result<Vec<f64>> {
        if loads_by_rank.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: loads_by_rank.len(),
            });
        }
        // q_e = sum of loads at nodes whose root path contains e; accumulate
        // child-to-root instead of touching the dense matrix.
        let mut q = vec![0.0; self.n];
        for i in 0..self.n {
            let mut col = Some(i);
            while let Some(c) = col {
                q[c] += loads_by_rank[i];
                col = self.parent_col[c];
            }
        }
        Ok(q)
    }

    pub fn is_upper_triangular(&self) -> bool {
        for i in 0..self.n {
            for j in 0..i {
                if self.reduced[i * self.n + j] != 0 {
                    return false;
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pipe(from: usize, to: usize, phi: f64) -> Edge {
        Edge {
            from,
            to,
            element: Element::Pipe { phi },
        }
    }

    fn demand(id: usize) -> Node {
        Node {
            id,
            kind: NodeKind::Demand {
                pmin: None,
                pmax: None,
            },
        }
    }

    fn supply(id: usize, p0: f64) -> Node {
        Node {
            id,
            kind: NodeKind::Supply { p0 },
        }
    }

    #[test]
    fn two_edge_star_incidence_is_identity() {
        let net = Network::new(
            vec![supply(0, 60.0), demand(1), demand(2)],
            vec![pipe(0, 1, 100.0), pipe(0, 2, 100.0)],
            CompressorOrientation::default(),
        )
        .unwrap();
        let inc = build_incidence(&net).unwrap();
        assert_eq!(inc.reduced, vec![1, 0, 0, 1]);
        assert_eq!(inc.inverse, vec![1, 0, 0, 1]);
        assert!(inc.is_upper_triangular());
    }

    #[test]
    fn single_edge_incidence() {
        let net = Network::new(
            vec![supply(0, 60.0), demand(1)],
            vec![pipe(0, 1, 100.0)],
            CompressorOrientation::default(),
        )
        .unwrap();
        let inc = build_incidence(&net).unwrap();
        assert_eq!(inc.reduced, vec![1]);
        assert_eq!(inc.inverse, vec![1]);
    }

    #[test]
    fn three_edge_chain_leaf_path_has_three_ones() {
        let net = Network::new(
            vec![supply(0, 60.0), demand(1), demand(2), demand(3)],
            vec![pipe(0, 1, 1.0), pipe(1, 2, 1.0), pipe(2, 3, 1.0)],
            CompressorOrientation::default(),
        )
        .unwrap();
        let inc = build_incidence(&net).unwrap();
        // the leaf (rank 3 -> slot 2) lies below every chain edge: its column
        // of the path indicator is all ones (the enumerated root->leaf path)
        let leaf_col: Vec<i8> = (0..3).map(|e| inc.inverse[e * 3 + 2]).collect();
        assert_eq!(leaf_col, vec![1, 1, 1]);
        // and the root-adjacent edge carries every node below it
        let first_edge_row: Vec<i8> = inc.inverse[0..3].to_vec();
        assert_eq!(first_edge_row, vec![1, 1, 1]);
        let prod = inc.product_with_inverse();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(prod[i * 3 + j], if i == j { 1 } else { 0 });
            }
        }
    }

    #[test]
    fn cycle_is_rejected() {
        let err = Network::new(
            vec![supply(0, 60.0), demand(1), demand(2)],
            vec![pipe(0, 1, 1.0), pipe(1, 2, 1.0), pipe(2, 0, 1.0)],
            CompressorOrientation::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Topology(_)));
    }

    #[test]
    fn component_without_supply_is_rejected() {
        let err = Network::new(
            vec![supply(0, 60.0), demand(1), demand(2), demand(3)],
            vec![pipe(0, 1, 1.0), pipe(2, 3, 1.0)],
            CompressorOrientation::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Topology(_)));
    }

    #[test]
    fn closed_valve_edge_is_removed() {
        let net = Network::new(
            vec![supply(0, 60.0), demand(1), demand(2)],
            vec![
                pipe(0, 1, 1.0),
                pipe(1, 2, 1.0),
                Edge {
                    from: 0,
                    to: 2,
                    element: Element::Valve { open: false },
                },
            ],
            CompressorOrientation::default(),
        )
        .unwrap();
        assert_eq!(net.active_edges(), &[0, 1]);
    }

    #[test]
    fn multi_supply_incidence_rejected() {
        let net = Network::new(
            vec![supply(0, 60.0), supply(1, 58.0), demand(2)],
            vec![pipe(0, 2, 1.0), pipe(1, 2, 1.0)],
            CompressorOrientation::default(),
        )
        .unwrap();
        assert!(matches!(
            build_incidence(&net),
            Err(Error::Topology(_))
        ));
    }

    #[test]
    fn phi_formula_matches_hand_evaluation() {
        // lambda=0.02, c=340, D=0.5, (Rs*T)^2 = c^4/4, L=1000
        let c: f64 = 340.0;
        let rst = c * c / 2.0; // so (Rs*T)^2 = c^4/4
        let p = PipePhysics {
            lambda: 0.02,
            diameter: 0.5,
            c,
            length: 1000.0,
            rs: rst,
            temperature: 1.0,
        };
        let by_hand = 0.02 / (c * c * 0.5) * (c * c / 2.0) * (c * c / 2.0) * 1000.0;
        assert!((phi_coefficient(&p) - by_hand).abs() < 1e-9 * by_hand);
    }

    #[test]
    fn phi_zero_friction() {
        let p = PipePhysics {
            lambda: 0.0,
            diameter: 0.5,
            c: 340.0,
            length: 1000.0,
            rs: 500.0,
            temperature: 283.0,
        };
        assert_eq!(phi_coefficient(&p), 0.0);
    }

    #[test]
    fn random_trees_have_exact_incidence_algebra() {
        // acceptance property (e): trees up to 50 nodes, integer identity
        let mut seed = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            seed
        };
        for trial in 0..20 {
            let n = 2 + (next() % 49) as usize;
            let mut nodes = vec![supply(0, 60.0)];
            let mut edges = Vec::new();
            for v in 1..n {
                nodes.push(demand(v));
                let parent = (next() % v as u64) as usize;
                // random stored orientation; canonicalization must not care
                if next() % 2 == 0 {
                    edges.push(pipe(parent, v, 1.0));
                } else {
                    edges.push(pipe(v, parent, 1.0));
                }
            }
            let net = Network::new(nodes, edges, CompressorOrientation::default()).unwrap();
            let inc = build_incidence(&net).unwrap();
            assert!(inc.is_upper_triangular(), "trial {trial}");
            let prod = inc.product_with_inverse();
            let m = inc.dim();
            for i in 0..m {
                for j in 0..m {
                    assert_eq!(prod[i * m + j], i32::from(i == j), "trial {trial}");
                }
            }
            for &x in &inc.inverse {
                assert!(x == 0 || x == 1);
            }
        }
    }
}
