//! Scenario files: a network, its producers and optional tolerances.
//!
//! The network is given either by its lines,
//! `{"nodes": [{"id", "demand"}], "lines": [{"from", "to", "capacity", "reactance"?}], "slack"}`,
//! or by its shift factors, `{"H": [[..]], "c": [..], "demand": [..]}`.
//! Producers are `{"node", "capacity", "cost": {"type": "linear" | "quadratic" | "pwq", ..}}`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cost::{CostSpec, Producer};
use crate::error::{Error, Result};
use crate::market::Market;
use crate::network::{LineSpec, NetworkModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeInput {
    pub id: usize,
    pub demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineInput {
    pub from: usize,
    pub to: usize,
    pub capacity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reactance: Option<f64>,
}

/// Either form of network description; exactly one must be complete.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<NodeInput>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lines: Option<Vec<LineInput>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack: Option<usize>,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProducerInput {
    pub node: usize,
    pub capacity: f64,
    pub cost: CostSpec,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_nash: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_feas: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_kkt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub network: NetworkInput,
    pub producers: Vec<ProducerInput>,
    #[serde(default)]
    pub options: ScenarioOptions,
}

impl NetworkInput {
    pub fn build(&self) -> Result<NetworkModel> {
        let line_form = self.nodes.is_some() || self.lines.is_some() || self.slack.is_some();
        let matrix_form = self.h.is_some() || self.c.is_some() || self.demand.is_some();
        let bad = |m: &str| Err(Error::InvalidNetwork(m.to_string()));
        match (line_form, matrix_form) {
            (true, true) => bad("network mixes the nodes/lines/slack and H/c/demand forms"),
            (false, false) => bad("network needs nodes/lines/slack or H/c/demand"),
            (true, false) => {
                let (Some(nodes), Some(lines)) = (&self.nodes, &self.lines) else {
                    return bad("network.nodes and network.lines are both required");
                };
                let n = nodes.len();
                let mut demand = vec![f64::NAN; n];
                for node in nodes {
                    if node.id >= n || !demand[node.id].is_nan() {
                        return bad(&format!("node ids must be 0..{n} without repeats; got {}", node.id));
                    }
                    demand[node.id] = node.demand;
                }
                let specs: Vec<LineSpec> = lines
                    .iter()
                    .map(|l| {
                        let s = LineSpec::new(l.from, l.to, l.capacity);
                        match l.reactance {
                            Some(x) => s.with_reactance(x),
                            None => s,
                        }
                    })
                    .collect();
                NetworkModel::from_lines(&specs, demand, self.slack.unwrap_or(0))
            }
            (false, true) => {
                let (Some(h), Some(c), Some(demand)) = (&self.h, &self.c, &self.demand) else {
                    return bad("network.H, network.c and network.demand are all required");
                };
                let n = demand.len();
                if let Some(r) = h.iter().position(|row| row.len() != n) {
                    return bad(&format!("network.H row {r} has {} entries, expected {n}", h[r].len()));
                }
                let m = DMatrix::from_fn(h.len(), n, |r, i| h[r][i]);
                NetworkModel::from_shift_factors(m, c.clone(), demand.clone())
            }
        }
    }
}

impl Scenario {
    pub fn market(&self) -> Result<Market> {
        let net = self.network.build()?;
        let producers = self.producers.iter().map(|p| Producer::new(p.node, p.capacity, p.cost.clone())).collect();
        Market::new(net, producers)
    }
}
