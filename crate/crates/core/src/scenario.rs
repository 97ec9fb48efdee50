//! Scenario files: JSON descriptions of stationary gas networks with Gaussian
//! loads and dynamic contamination networks with Fourier-randomized boundary
//! injections. Numbers are IEEE-754 doubles end to end.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::network::{CompressorOrientation, Edge, Element, Network, Node, NodeKind, PipePhysics};
use crate::stochastic::{
    fourier_coefficients, FourierBoundaryModel, FourierBoundarySet, GaussianLoadModel,
};
use crate::transport::{ExpProfile, TransportEdge, TransportNetwork};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScenarioFile {
    Stationary(StationaryFile),
    Dynamic(DynamicFile),
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn name(&self) -> &str {
        match self {
            ScenarioFile::Stationary(s) => &s.name,
            ScenarioFile::Dynamic(d) => &d.name,
        }
    }
}

// ---------------------------------------------------------------- stationary

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StationaryFile {
    pub name: String,
    pub network: NetworkFile,
    pub loads: LoadsFile,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NetworkFile {
    pub nodes: Vec<NodeEntry>,
    pub edges: Vec<EdgeEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compressor_orientation: Option<CompressorOrientation>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NodeEntry {
    pub id: usize,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pmin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pmax: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EdgeEntry {
    pub from: usize,
    pub to: usize,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physics: Option<PipePhysics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub open: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LoadsFile {
    pub nodes: Vec<usize>,
    pub mu: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

/// Validated stationary scenario.
#[derive(Debug, Clone)]
pub struct StationaryScenario {
    pub name: String,
    pub network: Network,
    pub load_nodes: Vec<usize>,
    pub loads: GaussianLoadModel,
}

pub fn build_network(file: &NetworkFile) -> Result<Network> {
    let nodes = file
        .nodes
        .iter()
        .map(|n| {
            let kind = match n.kind.as_str() {
                "supply" => NodeKind::Supply {
                    p0: n
                        .p0
                        .ok_or_else(|| Error::Schema(format!("supply node {} needs p0", n.id)))?,
                },
                "demand" => NodeKind::Demand {
                    pmin: n.pmin,
                    pmax: n.pmax,
                },
                other => {
                    return Err(Error::Schema(format!(
                        "node {}: unknown kind {other:?} (expected supply|demand)",
                        n.id
                    )))
                }
            };
            Ok(Node { id: n.id, kind })
        })
        .collect::<Result<Vec<_>>>()?;
    let edges = file
        .edges
        .iter()
        .enumerate()
        .map(|(j, e)| {
            let element = match e.kind.as_str() {
                "pipe" => {
                    // an explicitly given phi wins over the physical tuple
                    let phi = match (e.phi, &e.physics) {
                        (Some(phi), _) => phi,
                        (None, Some(p)) => crate::network::phi_coefficient(p),
                        (None, None) => {
                            return Err(Error::Schema(format!(
                                "pipe edge {j} needs phi or physics"
                            )))
                        }
                    };
                    Element::Pipe { phi }
                }
                "compressor" => Element::Compressor {
                    ratio: e
                        .u
                        .ok_or_else(|| Error::Schema(format!("compressor edge {j} needs u")))?,
                },
                "valve" => Element::Valve {
                    open: e.open.unwrap_or(true),
                },
                other => {
                    return Err(Error::Schema(format!(
                        "edge {j}: unknown kind {other:?} (expected pipe|compressor|valve)"
                    )))
                }
            };
            Ok(Edge {
                from: e.from,
                to: e.to,
                element,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Network::new(nodes, edges, file.compressor_orientation.unwrap_or_default())
}

pub fn build_stationary(file: &StationaryFile) -> Result<StationaryScenario> {
    let network = build_network(&file.network)?;
    for &v in &file.loads.nodes {
        if v >= network.n_nodes() {
            return Err(Error::Schema(format!("load node {v} does not exist")));
        }
        if network.supply_pressure(v).is_some() {
            return Err(Error::Schema(format!("load node {v} is a supply")));
        }
    }
    let loads = GaussianLoadModel::new(
        file.loads.mu.clone(),
        file.loads.cov.clone(),
    )?;
    if loads.dim() != file.loads.nodes.len() {
        return Err(Error::DimensionMismatch {
            expected: file.loads.nodes.len(),
            got: loads.dim(),
        });
    }
    Ok(StationaryScenario {
        name: file.name.clone(),
        network,
        load_nodes: file.loads.nodes.clone(),
        loads,
    })
}

// ------------------------------------------------------------------- dynamic

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DynamicFile {
    pub name: String,
    pub horizon: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Min/max window policy: exclude the initial-data window per node
    /// ("information_time", the default) or scan the full horizon ("full").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<String>,
    /// Cross-node correlation of the Fourier coefficient multipliers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<f64>,
    pub network: DynNetworkFile,
    pub boundary: Vec<BoundaryEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub splits: Vec<SplitEntry>,
}

fn default_grid_points() -> usize {
    101
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DynNetworkFile {
    pub nodes: Vec<DynNodeEntry>,
    pub edges: Vec<DynEdgeEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DynNodeEntry {
    pub id: usize,
    /// observe | boundary | junction
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmax: Option<f64>,
}

/// Transport moves to -> from; `from` is the downstream (x = 0) end.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DynEdgeEntry {
    pub from: usize,
    pub to: usize,
    pub d: f64,
    pub m: f64,
    #[serde(rename = "L")]
    pub length: f64,
    pub initial: InitialEntry,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialEntry {
    /// scale * exp(rate * (x - pivot))
    Exp { scale: f64, rate: f64, pivot: f64 },
    /// Steady profile derived from the boundary offsets: constant trace at
    /// every node until boundary information arrives.
    Steady,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BoundaryEntry {
    pub node: usize,
    pub sigma: f64,
    pub nf: usize,
    pub bd: ExpressionEntry,
    /// Optional explicit offset; must equal bd(0) when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
}

/// Deterministic boundary atoms of the shipped scenarios.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExpressionEntry {
    /// amplitude * sin(frequency t) + offset
    Sin {
        amplitude: f64,
        frequency: f64,
        offset: f64,
    },
    /// scale * |t - center| + offset
    Abs { scale: f64, center: f64, offset: f64 },
    /// scale / ((t - center)^2 + shift) + offset
    Rational {
        scale: f64,
        center: f64,
        shift: f64,
        offset: f64,
    },
}

impl ExpressionEntry {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            ExpressionEntry::Sin {
                amplitude,
                frequency,
                offset,
            } => amplitude * (frequency * t).sin() + offset,
            ExpressionEntry::Abs {
                scale,
                center,
                offset,
            } => scale * (t - center).abs() + offset,
            ExpressionEntry::Rational {
                scale,
                center,
                shift,
                offset,
            } => scale / ((t - center) * (t - center) + shift) + offset,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitEntry {
    pub node: usize,
    pub edge: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowPolicy {
    InformationTime,
    Full,
}

/// Validated dynamic scenario.
#[derive(Debug, Clone)]
pub struct DynamicScenario {
    pub name: String,
    pub network: TransportNetwork,
    pub boundaries: FourierBoundarySet,
    /// Original deterministic boundary expressions, indexed like
    /// `network.injection_nodes`.
    pub expressions: Vec<ExpressionEntry>,
    /// (node, rmin, optional rmax) per observed node.
    pub observations: Vec<(usize, f64, Option<f64>)>,
    pub grid_points: usize,
    pub window: WindowPolicy,
}

impl DynamicScenario {
    pub fn grid(&self) -> Vec<f64> {
        let t = self.network.horizon;
        (0..self.grid_points)
            .map(|k| t * k as f64 / (self.grid_points - 1) as f64)
            .collect()
    }
}

pub fn build_dynamic(file: &DynamicFile) -> Result<DynamicScenario> {
    let n_nodes = file.network.nodes.len();
    for (i, n) in file.network.nodes.iter().enumerate() {
        if n.id != i {
            return Err(Error::Schema(format!(
                "dynamic node ids must be 0.. in order, found {} at {}",
                n.id, i
            )));
        }
    }
    let boundary_nodes: Vec<usize> = file.boundary.iter().map(|b| b.node).collect();
    for b in &file.boundary {
        if b.node >= n_nodes {
            return Err(Error::Schema(format!("boundary node {} missing", b.node)));
        }
        if file.network.nodes[b.node].kind != "boundary" {
            return Err(Error::Schema(format!(
                "node {} carries a boundary model but has kind {:?}",
                b.node, file.network.nodes[b.node].kind
            )));
        }
        if let Some(off) = b.offset {
            let implied = b.bd.eval(0.0);
            if (off - implied).abs() > 1e-9 * implied.abs().max(1.0) {
                return Err(Error::Schema(format!(
                    "node {}: offset {off} does not match bd(0) = {implied}",
                    b.node
                )));
            }
        }
    }
    let observations: Vec<(usize, f64, Option<f64>)> = file
        .network
        .nodes
        .iter()
        .filter(|n| n.kind == "observe")
        .map(|n| {
            let rmin = n.rmin.ok_or_else(|| {
                Error::Schema(format!("observe node {} needs rmin", n.id))
            })?;
            Ok((n.id, rmin, n.rmax))
        })
        .collect::<Result<Vec<_>>>()?;
    if observations.is_empty() {
        return Err(Error::Schema("no observe nodes".into()));
    }

    for e in &file.network.edges {
        if e.d >= 0.0 {
            return Err(Error::Schema(format!(
                "edge {}->{}: velocity d must be negative",
                e.from, e.to
            )));
        }
        if e.m > 0.0 {
            return Err(Error::Schema(format!(
                "edge {}->{}: decay m must be nonpositive",
                e.from, e.to
            )));
        }
        if e.length <= 0.0 {
            return Err(Error::Schema(format!(
                "edge {}->{}: length must be positive",
                e.from, e.to
            )));
        }
    }

    let splits: HashMap<(usize, usize), f64> = file
        .splits
        .iter()
        .map(|s| ((s.node, s.edge), s.weight))
        .collect();

    // Boundary models: coefficients of the shifted expression.
    let horizon = file.horizon;
    let mut models = Vec::with_capacity(file.boundary.len());
    for b in &file.boundary {
        let offset = b.bd.eval(0.0);
        let bd = b.bd.clone();
        let coeffs = fourier_coefficients(move |t| bd.eval(t) - offset, horizon, b.nf);
        models.push(FourierBoundaryModel {
            offset,
            sigma: b.sigma,
            coeffs,
            horizon,
        });
    }
    let boundaries = FourierBoundarySet {
        nodes: models,
        correlation: file.correlation.unwrap_or(0.0),
    };

    // Steady initial profiles need the node values at t = 0.
    let offsets_by_node: HashMap<usize, f64> = file
        .boundary
        .iter()
        .map(|b| (b.node, b.bd.eval(0.0)))
        .collect();
    let steady = steady_node_values(file, &offsets_by_node, &splits)?;

    let edges: Vec<TransportEdge> = file
        .network
        .edges
        .iter()
        .enumerate()
        .map(|(j, e)| {
            let initial = match e.initial {
                InitialEntry::Exp { scale, rate, pivot } => ExpProfile { scale, rate, pivot },
                InitialEntry::Steady => {
                    let upstream_value = steady[e.to];
                    let departing = file
                        .network
                        .edges
                        .iter()
                        .filter(|f| f.to == e.to)
                        .count()
                        .max(1);
                    let w = splits
                        .get(&(e.to, j))
                        .copied()
                        .unwrap_or(1.0 / departing as f64);
                    ExpProfile {
                        scale: w * upstream_value,
                        rate: e.m / e.d,
                        pivot: e.length,
                    }
                }
            };
            Ok(TransportEdge {
                from: e.from,
                to: e.to,
                velocity: e.d,
                decay: e.m,
                length: e.length,
                initial,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let network = TransportNetwork {
        n_nodes,
        edges,
        injection_nodes: boundary_nodes,
        horizon,
        splits,
    };
    let window = match file.window.as_deref() {
        None | Some("information_time") => WindowPolicy::InformationTime,
        Some("full") => WindowPolicy::Full,
        Some(other) => {
            return Err(Error::Schema(format!(
                "unknown window policy {other:?} (expected information_time|full)"
            )))
        }
    };
    if file.grid_points < 2 {
        return Err(Error::Schema("grid_points must be at least 2".into()));
    }
    Ok(DynamicScenario {
        name: file.name.clone(),
        network,
        boundaries,
        expressions: file.boundary.iter().map(|b| b.bd.clone()).collect(),
        observations,
        grid_points: file.grid_points,
        window,
    })
}

/// Node values of the t = 0 steady state: boundary nodes feed their offsets,
/// junction values sum the decayed arrivals.
fn steady_node_values(
    file: &DynamicFile,
    offsets: &HashMap<usize, f64>,
    splits: &HashMap<(usize, usize), f64>,
) -> Result<Vec<f64>> {
    let n = file.network.nodes.len();
    let mut memo: Vec<Option<f64>> = vec![None; n];
    fn value(
        v: usize,
        file: &DynamicFile,
        offsets: &HashMap<usize, f64>,
        splits: &HashMap<(usize, usize), f64>,
        memo: &mut Vec<Option<f64>>,
        depth: usize,
    ) -> Result<f64> {
        if depth > file.network.edges.len() + 1 {
            return Err(Error::Topology("cycle in transport network".into()));
        }
        if let Some(x) = memo[v] {
            return Ok(x);
        }
        let mut acc = offsets.get(&v).copied().unwrap_or(0.0);
        for (j, e) in file.network.edges.iter().enumerate() {
            if e.from == v {
                // arriving edge: decayed split share of its upstream value
                let up = value(e.to, file, offsets, splits, memo, depth + 1)?;
                let departing = file
                    .network
                    .edges
                    .iter()
                    .filter(|f| f.to == e.to)
                    .count()
                    .max(1);
                let w = splits
                    .get(&(e.to, j))
                    .copied()
                    .unwrap_or(1.0 / departing as f64);
                let attenuation = (-e.m * e.length / e.d).exp();
                acc += w * up * attenuation;
            }
        }
        memo[v] = Some(acc);
        Ok(acc)
    }
    let mut out = vec![0.0; n];
    for v in 0..n {
        out[v] = value(v, file, offsets, splits, &mut memo, 0)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE1: &str = r#"{
        "kind": "stationary",
        "name": "example1",
        "network": {
            "nodes": [
                {"id": 0, "kind": "supply", "p0": 60.0},
                {"id": 1, "kind": "demand", "pmin": 40.0, "pmax": 60.0}
            ],
            "edges": [
                {"from": 0, "to": 1, "kind": "pipe", "phi": 100.0}
            ]
        },
        "loads": {"nodes": [1], "mu": [4.0], "cov": [[0.25]]}
    }"#;

    #[test]
    fn parse_and_roundtrip_stationary() {
        let file = ScenarioFile::from_json(EXAMPLE1).unwrap();
        let json = file.to_json();
        let reparsed = ScenarioFile::from_json(&json).unwrap();
        assert_eq!(file, reparsed);
        if let ScenarioFile::Stationary(s) = &file {
            let scn = build_stationary(s).unwrap();
            assert_eq!(scn.network.n_nodes(), 2);
            assert_eq!(scn.load_nodes, vec![1]);
        } else {
            panic!("expected stationary");
        }
    }

    #[test]
    fn malformed_fields_are_schema_errors() {
        let bad = EXAMPLE1.replace("\"pipe\"", "\"tube\"");
        let file = ScenarioFile::from_json(&bad).unwrap();
        if let ScenarioFile::Stationary(s) = &file {
            assert!(matches!(build_stationary(s), Err(Error::Schema(_))));
        }
        let missing = EXAMPLE1.replace("\"phi\": 100.0", "\"u\": 2.0");
        let file = ScenarioFile::from_json(&missing).unwrap();
        if let ScenarioFile::Stationary(s) = &file {
            assert!(matches!(build_stationary(s), Err(Error::Schema(_))));
        }
    }

    const EXAMPLE3: &str = r#"{
        "kind": "dynamic",
        "name": "example3",
        "horizon": 4.0,
        "grid_points": 101,
        "network": {
            "nodes": [
                {"id": 0, "kind": "observe", "rmin": 2.0, "rmax": 6.0},
                {"id": 1, "kind": "boundary"}
            ],
            "edges": [
                {"from": 0, "to": 1, "d": -5.0, "m": -1.0, "L": 1.0,
                 "initial": {"kind": "exp", "scale": 5.0, "rate": 0.2, "pivot": 1.0}}
            ]
        },
        "boundary": [
            {"node": 1, "sigma": 0.25, "nf": 30,
             "bd": {"kind": "sin", "amplitude": -2.0, "frequency": 2.0, "offset": 5.0}}
        ]
    }"#;

    #[test]
    fn parse_dynamic_example() {
        let file = ScenarioFile::from_json(EXAMPLE3).unwrap();
        let json = file.to_json();
        assert_eq!(file, ScenarioFile::from_json(&json).unwrap());
        if let ScenarioFile::Dynamic(d) = &file {
            let scn = build_dynamic(d).unwrap();
            assert_eq!(scn.boundaries.nodes.len(), 1);
            assert_eq!(scn.boundaries.nodes[0].coeffs.len(), 31);
            assert_eq!(scn.boundaries.nodes[0].offset, 5.0);
            assert_eq!(scn.observations, vec![(0, 2.0, Some(6.0))]);
            assert_eq!(scn.window, WindowPolicy::InformationTime);
        } else {
            panic!("expected dynamic");
        }
    }

    #[test]
    fn steady_initial_matches_explicit_profile() {
        let steady = EXAMPLE3.replace(
            r#"{"kind": "exp", "scale": 5.0, "rate": 0.2, "pivot": 1.0}"#,
            r#"{"kind": "steady"}"#,
        );
        let file = ScenarioFile::from_json(&steady).unwrap();
        let explicit = ScenarioFile::from_json(EXAMPLE3).unwrap();
        let (ScenarioFile::Dynamic(a), ScenarioFile::Dynamic(b)) = (&file, &explicit) else {
            panic!()
        };
        let sa = build_dynamic(a).unwrap();
        let sb = build_dynamic(b).unwrap();
        let pa = sa.network.edges[0].initial;
        let pb = sb.network.edges[0].initial;
        for x in [0.0, 0.3, 1.0] {
            assert!((pa.eval(x) - pb.eval(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn offset_mismatch_is_rejected() {
        let bad = EXAMPLE3.replace(
            r#""bd": {"kind": "sin", "amplitude": -2.0, "frequency": 2.0, "offset": 5.0}"#,
            r#""bd": {"kind": "sin", "amplitude": -2.0, "frequency": 2.0, "offset": 5.0}, "offset": 4.0"#,
        );
        let file = ScenarioFile::from_json(&bad).unwrap();
        if let ScenarioFile::Dynamic(d) = &file {
            assert!(matches!(build_dynamic(d), Err(Error::Schema(_))));
        }
    }

    #[test]
    fn expression_atoms_evaluate() {
        let sin = ExpressionEntry::Sin {
            amplitude: -2.0,
            frequency: 2.0,
            offset: 5.0,
        };
        assert!((sin.eval(0.5) - (-2.0 * 1f64.sin() + 5.0)).abs() < 1e-15);
        let abs = ExpressionEntry::Abs {
            scale: 0.25,
            center: 3.0,
            offset: 2.0,
        };
        assert_eq!(abs.eval(0.0), 2.75);
        let rat = ExpressionEntry::Rational {
            scale: 1.0,
            center: 1.0,
            shift: 0.5,
            offset: 3.0,
        };
        assert!((rat.eval(0.0) - (11.0 / 3.0)).abs() < 1e-12);
    }
}
