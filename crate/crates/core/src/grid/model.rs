//! Network description and its JSON file format.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "name": "lv-feeder",
//!   "s_base_va": 100000.0,
//!   "v_base_v": 400.0,
//!   "buses":    [ { "index": 0, "name": "B01", "kind": "slack", "base_kv": 0.4 }, ... ],
//!   "branches": [ { "from": 0, "to": 1, "r_ohm": 0.01, "x_ohm": 0.003, "ampacity_a": 200.0 }, ... ]
//! }
//! ```
//!
//! Buses are indexed `0..n` without gaps. Exactly one bus is the slack; every
//! other bus is PQ. Non-slack buses are numbered `0..N_b` in ascending bus
//! index order, which is the ordering used by injections, sensitivity
//! matrices and estimators.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const NETWORK_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("network file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("network file parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported network schema version {0} (expected {NETWORK_SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("invalid network: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusSpec {
    pub index: usize,
    #[serde(default)]
    pub name: String,
    pub kind: BusKind,
    pub base_kv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub from: usize,
    pub to: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
    pub ampacity_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub s_base_va: f64,
    pub v_base_v: f64,
    pub buses: Vec<BusSpec>,
    pub branches: Vec<BranchSpec>,
}

impl NetworkModel {
    pub fn from_json_str(s: &str) -> Result<Self, ModelError> {
        let model: NetworkModel = serde_json::from_str(s)?;
        if model.schema_version != NETWORK_SCHEMA_VERSION {
            return Err(ModelError::SchemaVersion(model.schema_version));
        }
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("network model serializes")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Invalid(m));
        if !(self.s_base_va > 0.0 && self.s_base_va.is_finite()) {
            return bad(format!("s_base_va must be positive, got {}", self.s_base_va));
        }
        if !(self.v_base_v > 0.0 && self.v_base_v.is_finite()) {
            return bad(format!("v_base_v must be positive, got {}", self.v_base_v));
        }
        if self.buses.len() < 2 {
            return bad("at least two buses are required".into());
        }
        for (pos, bus) in self.buses.iter().enumerate() {
            if bus.index != pos {
                return bad(format!("bus at position {pos} has index {}; indices must be 0..n in order", bus.index));
            }
            if !(bus.base_kv > 0.0) {
                return bad(format!("bus {} has non-positive base_kv", bus.index));
            }
        }
        let slacks = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slacks != 1 {
            return bad(format!("exactly one slack bus required, found {slacks}"));
        }
        let n = self.buses.len();
        for (k, br) in self.branches.iter().enumerate() {
            if br.from >= n || br.to >= n {
                return bad(format!("branch {k} references a missing bus"));
            }
            if br.from == br.to {
                return bad(format!("branch {k} is a self-loop"));
            }
            if !(br.r_ohm >= 0.0 && br.x_ohm >= 0.0) || !(br.r_ohm.hypot(br.x_ohm) > 0.0) {
                return bad(format!("branch {k} must have a strictly positive impedance magnitude"));
            }
            if !(br.ampacity_a > 0.0) {
                return bad(format!("branch {k} must have positive ampacity"));
            }
        }
        if !self.is_connected() {
            return bad("network graph is not connected".into());
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            adj[br.from].push(br.to);
            adj[br.to].push(br.from);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(b) = queue.pop_front() {
            for &nb in &adj[b] {
                if !seen[nb] {
                    seen[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn slack_bus(&self) -> usize {
        self.buses.iter().position(|b| b.kind == BusKind::Slack).expect("validated model has a slack bus")
    }

    /// Number of non-slack buses, `N_b`.
    pub fn n_non_slack(&self) -> usize {
        self.buses.len() - 1
    }

    /// Bus indices of the non-slack buses in estimator/injection order.
    pub fn non_slack_buses(&self) -> Vec<usize> {
        let slack = self.slack_bus();
        (0..self.buses.len()).filter(|&b| b != slack).collect()
    }

    /// Position of `bus` in the non-slack ordering.
    pub fn non_slack_position(&self, bus: usize) -> Option<usize> {
        let slack = self.slack_bus();
        match bus.cmp(&slack) {
            std::cmp::Ordering::Less => Some(bus),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater if bus < self.buses.len() => Some(bus - 1),
            std::cmp::Ordering::Greater => None,
        }
    }

    pub fn bus_by_name(&self, name: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.name == name)
    }

    pub fn bus_name(&self, bus: usize) -> String {
        match self.buses.get(bus) {
            Some(b) if !b.name.is_empty() => b.name.clone(),
            _ => format!("bus{bus}"),
        }
    }

    pub fn z_base_ohm(&self) -> f64 {
        self.v_base_v * self.v_base_v / self.s_base_va
    }

    /// Path of bus indices from `bus` to the slack (inclusive), assuming a radial graph.
    pub fn path_to_slack(&self, bus: usize) -> Option<Vec<usize>> {
        let n = self.buses.len();
        let slack = self.slack_bus();
        let mut parent = vec![usize::MAX; n];
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            adj[br.from].push(br.to);
            adj[br.to].push(br.from);
        }
        let mut queue = VecDeque::from([slack]);
        parent[slack] = slack;
        while let Some(b) = queue.pop_front() {
            for &nb in &adj[b] {
                if parent[nb] == usize::MAX {
                    parent[nb] = b;
                    queue.push_back(nb);
                }
            }
        }
        if bus >= n || parent[bus] == usize::MAX {
            return None;
        }
        let mut path = vec![bus];
        let mut cur = bus;
        while cur != slack {
            cur = parent[cur];
            path.push(cur);
        }
        Some(path)
    }

    pub fn is_radial(&self) -> bool {
        self.branches.len() + 1 == self.buses.len()
    }

    /// Bus admittance matrix in per unit, split into conductance `G` and susceptance `B`.
    pub fn admittance<T: Scalar>(&self) -> (Matrix<T>, Matrix<T>) {
        let n = self.buses.len();
        let zb = self.z_base_ohm();
        let mut g = Matrix::zeros(n, n);
        let mut b = Matrix::zeros(n, n);
        for br in &self.branches {
            let r = br.r_ohm / zb;
            let x = br.x_ohm / zb;
            let den = r * r + x * x;
            let gs = T::lit(r / den);
            let bs = T::lit(-x / den);
            let (i, j) = (br.from, br.to);
            g[(i, i)] += gs;
            g[(j, j)] += gs;
            g[(i, j)] -= gs;
            g[(j, i)] -= gs;
            b[(i, i)] += bs;
            b[(j, j)] += bs;
            b[(i, j)] -= bs;
            b[(j, i)] -= bs;
        }
        (g, b)
    }

    /// Same network with a different power base; impedances in ohms are unchanged.
    pub fn with_s_base(&self, s_base_va: f64) -> Self {
        Self { s_base_va, ..self.clone() }
    }

    /// Two-bus network (slack + one PQ bus) with a single branch given in per unit.
    pub fn two_bus(r_pu: f64, x_pu: f64) -> Self {
        let s_base_va = 1.0e5;
        let v_base_v = 400.0;
        let zb = v_base_v * v_base_v / s_base_va;
        Self {
            schema_version: NETWORK_SCHEMA_VERSION,
            name: "two-bus".into(),
            s_base_va,
            v_base_v,
            buses: vec![
                BusSpec { index: 0, name: "B01".into(), kind: BusKind::Slack, base_kv: 0.4 },
                BusSpec { index: 1, name: "B02".into(), kind: BusKind::Pq, base_kv: 0.4 },
            ],
            branches: vec![BranchSpec { from: 0, to: 1, r_ohm: r_pu * zb, x_ohm: x_pu * zb, ampacity_a: 400.0 }],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_bus() -> NetworkModel {
        let mut m = NetworkModel::two_bus(0.01, 0.01);
        m.buses.push(BusSpec { index: 2, name: "B03".into(), kind: BusKind::Pq, base_kv: 0.4 });
        m.branches.push(BranchSpec { from: 1, to: 2, r_ohm: 0.02, x_ohm: 0.01, ampacity_a: 100.0 });
        m
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let m = three_bus();
        let back = NetworkModel::from_json_str(&m.to_json_string()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.n_non_slack(), 2);
        assert_eq!(back.path_to_slack(2).unwrap(), vec![2, 1, 0]);
    }

    #[test]
    fn rejects_two_slacks_and_disconnected() {
        let mut m = three_bus();
        m.buses[2].kind = BusKind::Slack;
        assert!(matches!(m.validate(), Err(ModelError::Invalid(_))));

        let mut m = three_bus();
        m.branches.pop();
        assert!(m.validate().unwrap_err().to_string().contains("connected"));
    }

    #[test]
    fn rejects_zero_impedance_and_ampacity() {
        let mut m = three_bus();
        m.branches[0].r_ohm = 0.0;
        m.branches[0].x_ohm = 0.0;
        assert!(m.validate().is_err());
        let mut m = three_bus();
        m.branches[1].ampacity_a = 0.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn rejects_unknown_schema_version() {
        let mut m = three_bus();
        m.schema_version = 7;
        let text = serde_json::to_string(&m).unwrap();
        assert!(matches!(NetworkModel::from_json_str(&text), Err(ModelError::SchemaVersion(7))));
    }

    #[test]
    fn non_slack_ordering_skips_slack() {
        let mut m = three_bus();
        m.buses[0].kind = BusKind::Pq;
        m.buses[1].kind = BusKind::Slack;
        assert_eq!(m.non_slack_buses(), vec![0, 2]);
        assert_eq!(m.non_slack_position(2), Some(1));
        assert_eq!(m.non_slack_position(1), None);
    }
}
