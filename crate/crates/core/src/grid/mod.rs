//! Static grid snapshots: buses, generators, branches and their edits.

mod matpower;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use matpower::{parse_case, write_case, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Load,
    GeneratorCapable,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    pub base_demand_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub at_bus: u32,
    pub p_min_mw: f64,
    pub p_max_mw: f64,
    pub cost_c2: f64,
    pub cost_c1: f64,
    pub cost_c0: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: u32,
    pub to_bus: u32,
    pub reactance_pu: f64,
    /// Zero means unlimited.
    pub rate_a_mw: f64,
    pub in_service: bool,
}

impl Branch {
    pub fn is_limited(&self) -> bool {
        self.rate_a_mw > 0.0
    }
}

/// A grid snapshot. Buses are kept sorted by ascending id, so a bus's dense
/// index is its position in `buses`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub branches: Vec<Branch>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Modification {
    None,
    DerateAllBranches(f64),
    RemoveBranch(usize),
    RemoveGenerator(usize),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModificationError {
    #[error("derate fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("branch {0} does not exist or is already out of service")]
    BadBranch(usize),
    #[error("generator {0} does not exist or is already out of service")]
    BadGenerator(usize),
    #[error("cannot remove generator {0}: it is the last one in service")]
    LastGenerator(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    NoBuses,
    DuplicateBusId(u32),
    ReferenceBusCount(usize),
    NegativeDemand { bus: u32 },
    UnknownBus { element: String, bus: u32 },
    SelfLoop { branch: usize },
    NonPositiveReactance { branch: usize },
    NegativeRating { branch: usize },
    LimitOrder { generator: usize },
    NegativeQuadraticCost { generator: usize },
    NoGeneratorInService,
    Disconnected { components: usize },
    NonPositiveBaseMva,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NoBuses => write!(f, "grid has no buses"),
            Violation::DuplicateBusId(id) => write!(f, "bus id {id} appears more than once"),
            Violation::ReferenceBusCount(n) => {
                write!(f, "expected exactly one reference bus, found {n}")
            }
            Violation::NegativeDemand { bus } => write!(f, "bus {bus} has negative demand"),
            Violation::UnknownBus { element, bus } => {
                write!(f, "{element} refers to unknown bus {bus}")
            }
            Violation::SelfLoop { branch } => write!(f, "branch {branch} connects a bus to itself"),
            Violation::NonPositiveReactance { branch } => {
                write!(f, "branch {branch} has non-positive reactance")
            }
            Violation::NegativeRating { branch } => write!(f, "branch {branch} has negative rating"),
            Violation::LimitOrder { generator } => {
                write!(f, "generator {generator} has p_min_mw > p_max_mw")
            }
            Violation::NegativeQuadraticCost { generator } => {
                write!(f, "generator {generator} has a negative quadratic cost coefficient")
            }
            Violation::NoGeneratorInService => write!(f, "no generator is in service"),
            Violation::Disconnected { components } => write!(
                f,
                "in-service branches split the grid into {components} islands"
            ),
            Violation::NonPositiveBaseMva => write!(f, "base MVA must be positive"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl GridCase {
    pub fn num_buses(&self) -> usize {
        self.buses.len()
    }

    /// Dense index of every bus id.
    pub fn bus_index(&self) -> HashMap<u32, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn reference_bus(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.kind == BusKind::Reference)
    }

    pub fn base_demand(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.base_demand_mw).collect()
    }

    pub fn in_service_generators(&self) -> impl Iterator<Item = (usize, &Generator)> {
        self.generators.iter().enumerate().filter(|(_, g)| g.in_service)
    }

    pub fn in_service_branches(&self) -> impl Iterator<Item = (usize, &Branch)> {
        self.branches.iter().enumerate().filter(|(_, b)| b.in_service)
    }

    /// Stable digest of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("grid serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if self.base_mva.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            violations.push(Violation::NonPositiveBaseMva);
        }
        if self.buses.is_empty() {
            violations.push(Violation::NoBuses);
        }
        let mut seen = BTreeMap::new();
        for b in &self.buses {
            *seen.entry(b.id).or_insert(0usize) += 1;
            if !(b.base_demand_mw >= 0.0) {
                violations.push(Violation::NegativeDemand { bus: b.id });
            }
        }
        for (id, count) in &seen {
            if *count > 1 {
                violations.push(Violation::DuplicateBusId(*id));
            }
        }
        let refs = self.buses.iter().filter(|b| b.kind == BusKind::Reference).count();
        if refs != 1 {
            violations.push(Violation::ReferenceBusCount(refs));
        }
        for (k, g) in self.generators.iter().enumerate() {
            if !seen.contains_key(&g.at_bus) {
                violations.push(Violation::UnknownBus {
                    element: format!("generator {k}"),
                    bus: g.at_bus,
                });
            }
            if !(g.p_min_mw <= g.p_max_mw) {
                violations.push(Violation::LimitOrder { generator: k });
            }
            if g.cost_c2 < 0.0 {
                violations.push(Violation::NegativeQuadraticCost { generator: k });
            }
        }
        for (k, br) in self.branches.iter().enumerate() {
            for bus in [br.from_bus, br.to_bus] {
                if !seen.contains_key(&bus) {
                    violations.push(Violation::UnknownBus {
                        element: format!("branch {k}"),
                        bus,
                    });
                }
            }
            if br.from_bus == br.to_bus {
                violations.push(Violation::SelfLoop { branch: k });
            }
            if !(br.reactance_pu > 0.0) {
                violations.push(Violation::NonPositiveReactance { branch: k });
            }
            if br.rate_a_mw < 0.0 {
                violations.push(Violation::NegativeRating { branch: k });
            }
        }
        if !self.generators.iter().any(|g| g.in_service) {
            violations.push(Violation::NoGeneratorInService);
        }
        if !self.buses.is_empty() {
            let components = self.island_count();
            if components > 1 {
                violations.push(Violation::Disconnected { components });
            }
        }
        ValidationReport { violations }
    }

    /// Number of connected components of the in-service branch graph.
    fn island_count(&self) -> usize {
        let index = self.bus_index();
        let mut uf = UnionFind::new(self.buses.len());
        for (_, br) in self.in_service_branches() {
            if let (Some(&a), Some(&b)) = (index.get(&br.from_bus), index.get(&br.to_bus)) {
                uf.union(a, b);
            }
        }
        uf.components()
    }

    pub fn is_connected(&self) -> bool {
        self.island_count() <= 1
    }

    /// Returns an edited copy; `self` is untouched.
    pub fn apply_modification(&self, modification: Modification) -> Result<GridCase, ModificationError> {
        let mut grid = self.clone();
        match modification {
            Modification::None => {}
            Modification::DerateAllBranches(fraction) => {
                if !(fraction > 0.0 && fraction < 1.0) {
                    return Err(ModificationError::BadFraction(fraction));
                }
                for br in grid.branches.iter_mut().filter(|b| b.is_limited()) {
                    br.rate_a_mw *= 1.0 - fraction;
                }
            }
            Modification::RemoveBranch(k) => match grid.branches.get_mut(k) {
                Some(br) if br.in_service => br.in_service = false,
                _ => return Err(ModificationError::BadBranch(k)),
            },
            Modification::RemoveGenerator(k) => {
                let in_service = grid.generators.iter().filter(|g| g.in_service).count();
                match grid.generators.get_mut(k) {
                    Some(g) if g.in_service => {
                        if in_service == 1 {
                            return Err(ModificationError::LastGenerator(k));
                        }
                        g.in_service = false;
                    }
                    _ => return Err(ModificationError::BadGenerator(k)),
                }
            }
        }
        Ok(grid)
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }

    fn components(&mut self) -> usize {
        (0..self.parent.len()).filter(|&i| self.find(i) == i).count()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn two_bus(rate: f64) -> GridCase {
        GridCase {
            name: "two_bus".into(),
            base_mva: 100.0,
            buses: vec![
                Bus {
                    id: 1,
                    kind: BusKind::Reference,
                    base_demand_mw: 0.0,
                },
                Bus {
                    id: 2,
                    kind: BusKind::Load,
                    base_demand_mw: 50.0,
                },
            ],
            generators: vec![Generator {
                at_bus: 1,
                p_min_mw: 0.0,
                p_max_mw: 200.0,
                cost_c2: 0.0,
                cost_c1: 10.0,
                cost_c0: 0.0,
                in_service: true,
            }],
            branches: vec![Branch {
                from_bus: 1,
                to_bus: 2,
                reactance_pu: 0.1,
                rate_a_mw: rate,
                in_service: true,
            }],
        }
    }

    pub fn triangle() -> GridCase {
        let bus = |id, kind, d| Bus {
            id,
            kind,
            base_demand_mw: d,
        };
        let gen = |at_bus, c1| Generator {
            at_bus,
            p_min_mw: 0.0,
            p_max_mw: 200.0,
            cost_c2: 0.0,
            cost_c1: c1,
            cost_c0: 0.0,
            in_service: true,
        };
        let line = |f, t, rate| Branch {
            from_bus: f,
            to_bus: t,
            reactance_pu: 0.1,
            rate_a_mw: rate,
            in_service: true,
        };
        GridCase {
            name: "triangle".into(),
            base_mva: 100.0,
            buses: vec![
                bus(1, BusKind::Reference, 0.0),
                bus(2, BusKind::Load, 0.0),
                bus(3, BusKind::GeneratorCapable, 100.0),
            ],
            generators: vec![gen(1, 10.0), gen(3, 30.0)],
            branches: vec![line(1, 2, 100.0), line(2, 3, 100.0), line(1, 3, 30.0)],
        }
    }

    #[test]
    fn valid_two_bus_has_empty_report() {
        assert!(two_bus(100.0).validate().is_valid());
    }

    #[test]
    fn out_of_service_branch_disconnects() {
        let mut g = two_bus(100.0);
        g.branches[0].in_service = false;
        let report = g.validate();
        assert_eq!(report.violations, vec![Violation::Disconnected { components: 2 }]);
        assert!(!g.is_connected());
    }

    #[test]
    fn limit_violation_reported() {
        let mut g = two_bus(100.0);
        g.generators[0].p_min_mw = 300.0;
        assert_eq!(g.validate().violations, vec![Violation::LimitOrder { generator: 0 }]);
    }

    #[test]
    fn triangle_survives_any_single_outage() {
        let g = triangle();
        for k in 0..3 {
            let cut = g.apply_modification(Modification::RemoveBranch(k)).unwrap();
            assert!(cut.is_connected());
        }
    }

    #[test]
    fn two_bus_branch_removal_disconnects() {
        let g = two_bus(100.0);
        let cut = g.apply_modification(Modification::RemoveBranch(0)).unwrap();
        assert!(!cut.is_connected());
        assert!(g.is_connected(), "input untouched");
    }

    #[test]
    fn derate_scales_only_limited_branches() {
        let mut g = triangle();
        g.branches[1].rate_a_mw = 0.0;
        let d = g.apply_modification(Modification::DerateAllBranches(0.10)).unwrap();
        assert!((d.branches[0].rate_a_mw - 90.0).abs() < 1e-12);
        assert_eq!(d.branches[1].rate_a_mw, 0.0);
        assert!((d.branches[2].rate_a_mw - 27.0).abs() < 1e-12);
        assert_eq!(g, triangle_with_unlimited_middle());

        fn triangle_with_unlimited_middle() -> GridCase {
            let mut g = triangle();
            g.branches[1].rate_a_mw = 0.0;
            g
        }
    }

    #[test]
    fn none_is_identity() {
        let g = triangle();
        assert_eq!(g.apply_modification(Modification::None).unwrap(), g);
    }

    #[test]
    fn last_generator_cannot_be_removed() {
        let g = two_bus(100.0);
        assert_eq!(
            g.apply_modification(Modification::RemoveGenerator(0)).unwrap_err(),
            ModificationError::LastGenerator(0)
        );
        let t = triangle();
        let one = t.apply_modification(Modification::RemoveGenerator(1)).unwrap();
        assert!(!one.generators[1].in_service);
        assert_eq!(
            one.apply_modification(Modification::RemoveGenerator(1)).unwrap_err(),
            ModificationError::BadGenerator(1)
        );
        assert_eq!(
            one.apply_modification(Modification::RemoveGenerator(0)).unwrap_err(),
            ModificationError::LastGenerator(0)
        );
    }

    #[test]
    fn bad_modifications_rejected() {
        let g = triangle();
        assert!(g.apply_modification(Modification::RemoveBranch(9)).is_err());
        assert!(g.apply_modification(Modification::DerateAllBranches(1.0)).is_err());
        assert!(g.apply_modification(Modification::DerateAllBranches(0.0)).is_err());
    }

    #[test]
    fn json_uses_domain_field_names() {
        let json = two_bus(100.0).to_json();
        for key in [
            "base_mva",
            "base_demand_mw",
            "p_min_mw",
            "cost_c2",
            "reactance_pu",
            "rate_a_mw",
            "in_service",
            "at_bus",
            "from_bus",
        ] {
            assert!(json.contains(key), "missing {key}");
        }
        assert_eq!(GridCase::from_json(&json).unwrap(), two_bus(100.0));
    }
}
