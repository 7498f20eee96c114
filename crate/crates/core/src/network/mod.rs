//! Power-network data model: buses, RLC branches, sinusoidal current
//! sources and fault events, plus the JSON network file format.

mod array;
pub(crate) mod stamp;

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

pub use array::{generate_grid_array, TieTemplate};
pub use stamp::{
    assemble_conductance, assemble_with_faults, history_currents, injection_vector,
    ConductanceMatrix,
};

pub const DEFAULT_DELTA_T: f64 = 20e-6;
pub const DEFAULT_T_END: f64 = 60e-3;

/// Far end of a branch or fault: another bus, or the ground reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Terminal {
    Bus(usize),
    Ground,
}

impl Terminal {
    pub fn bus(self) -> Option<usize> {
        match self {
            Terminal::Bus(b) => Some(b),
            Terminal::Ground => None,
        }
    }
}

impl From<usize> for Terminal {
    fn from(b: usize) -> Self {
        Terminal::Bus(b)
    }
}

impl fmt::Display for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Terminal::Bus(b) => write!(f, "{b}"),
            Terminal::Ground => f.write_str("ground"),
        }
    }
}

impl Serialize for Terminal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Terminal::Bus(b) => s.serialize_u64(*b as u64),
            Terminal::Ground => s.serialize_str("ground"),
        }
    }
}

impl<'de> Deserialize<'de> for Terminal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct TerminalVisitor;

        impl Visitor<'_> for TerminalVisitor {
            type Value = Terminal;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a bus id or \"ground\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Terminal, E> {
                Ok(Terminal::Bus(v as usize))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Terminal, E> {
                if v == -1 {
                    Ok(Terminal::Ground)
                } else {
                    usize::try_from(v)
                        .map(Terminal::Bus)
                        .map_err(|_| E::custom(format!("invalid bus id {v}")))
                }
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Terminal, E> {
                match v {
                    "ground" | "gnd" => Ok(Terminal::Ground),
                    other => Err(E::custom(format!("expected \"ground\", got \"{other}\""))),
                }
            }
        }

        d.deserialize_any(TerminalVisitor)
    }
}

fn default_phases() -> usize {
    1
}

fn default_delta_t() -> f64 {
    DEFAULT_DELTA_T
}

fn default_t_end() -> f64 {
    DEFAULT_T_END
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    #[serde(default = "default_phases")]
    pub phases: usize,
    /// Per-phase conductance to ground, siemens.
    #[serde(default)]
    pub shunt_g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    Resistor,
    Inductor,
    Capacitor,
    SeriesRl,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BranchParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

/// A validated lumped element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Element {
    Resistor { r: f64 },
    Inductor { l: f64 },
    Capacitor { c: f64 },
    SeriesRl { r: f64, l: f64 },
}

impl Element {
    /// Trapezoidal companion conductance for timestep `dt`.
    pub fn companion_conductance(&self, dt: f64) -> f64 {
        match *self {
            Element::Resistor { r } => 1.0 / r,
            Element::Inductor { l } => dt / (2.0 * l),
            Element::Capacitor { c } => 2.0 * c / dt,
            Element::SeriesRl { r, l } => 1.0 / (r + 2.0 * l / dt),
        }
    }

    pub fn has_memory(&self) -> bool {
        !matches!(self, Element::Resistor { .. })
    }
}

/// A per-phase branch; three-phase networks carry one copy per phase with no
/// mutual coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: Terminal,
    pub kind: BranchKind,
    pub params: BranchParams,
}

impl Branch {
    pub fn new(from: usize, to: impl Into<Terminal>, element: Element) -> Self {
        let (kind, params) = match element {
            Element::Resistor { r } => (
                BranchKind::Resistor,
                BranchParams {
                    r: Some(r),
                    ..Default::default()
                },
            ),
            Element::Inductor { l } => (
                BranchKind::Inductor,
                BranchParams {
                    l: Some(l),
                    ..Default::default()
                },
            ),
            Element::Capacitor { c } => (
                BranchKind::Capacitor,
                BranchParams {
                    c: Some(c),
                    ..Default::default()
                },
            ),
            Element::SeriesRl { r, l } => (
                BranchKind::SeriesRl,
                BranchParams {
                    r: Some(r),
                    l: Some(l),
                    c: None,
                },
            ),
        };
        Self {
            from,
            to: to.into(),
            kind,
            params,
        }
    }

    pub fn resistor(from: usize, to: impl Into<Terminal>, r: f64) -> Self {
        Self::new(from, to, Element::Resistor { r })
    }

    pub fn inductor(from: usize, to: impl Into<Terminal>, l: f64) -> Self {
        Self::new(from, to, Element::Inductor { l })
    }

    pub fn capacitor(from: usize, to: impl Into<Terminal>, c: f64) -> Self {
        Self::new(from, to, Element::Capacitor { c })
    }

    pub fn series_rl(from: usize, to: impl Into<Terminal>, r: f64, l: f64) -> Self {
        Self::new(from, to, Element::SeriesRl { r, l })
    }

    /// The element described by `kind` + `params`. Panics on a branch that
    /// has not been validated; use [`NetworkModel::validate`] first.
    pub fn element(&self) -> Element {
        self.try_element("branch").expect("unvalidated branch")
    }

    fn try_element(&self, location: &str) -> Result<Element> {
        let need = |v: Option<f64>, param: &'static str| -> Result<f64> {
            let v = v.ok_or_else(|| Error::Invalid {
                location: location.to_string(),
                message: format!("missing parameter `{param}` for {:?}", self.kind),
            })?;
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonPositive {
                    location: location.to_string(),
                    param,
                    value: v,
                })
            }
        };
        Ok(match self.kind {
            BranchKind::Resistor => Element::Resistor {
                r: need(self.params.r, "r")?,
            },
            BranchKind::Inductor => Element::Inductor {
                l: need(self.params.l, "l")?,
            },
            BranchKind::Capacitor => Element::Capacitor {
                c: need(self.params.c, "c")?,
            },
            BranchKind::SeriesRl => Element::SeriesRl {
                r: need(self.params.r, "r")?,
                l: need(self.params.l, "l")?,
            },
        })
    }
}

/// Sinusoidal current injection `magnitude * sin(2π f t + phase_angle)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceWaveform {
    pub bus: usize,
    #[serde(default)]
    pub phase: usize,
    pub magnitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase_angle: f64,
}

impl SourceWaveform {
    pub fn value_at(&self, t: f64) -> f64 {
        self.magnitude * (2.0 * std::f64::consts::PI * self.frequency * t + self.phase_angle).sin()
    }
}

/// A resistive fault applied on every phase between `bus_a` and `bus_b`
/// (or ground) during `[t_on, t_off)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub bus_a: usize,
    pub bus_b: Terminal,
    pub fault_resistance: f64,
    pub t_on: f64,
    pub t_off: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub name: String,
    #[serde(default = "default_delta_t")]
    pub delta_t: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub sources: Vec<SourceWaveform>,
    #[serde(default)]
    pub faults: Vec<FaultEvent>,
}

impl NetworkModel {
    /// An empty network of `n` single-phase buses with the given shunt.
    pub fn with_buses(name: impl Into<String>, n: usize, shunt_g: f64) -> Self {
        Self {
            name: name.into(),
            delta_t: DEFAULT_DELTA_T,
            t_end: DEFAULT_T_END,
            buses: (0..n)
                .map(|id| Bus {
                    id,
                    phases: 1,
                    shunt_g,
                })
                .collect(),
            branches: Vec::new(),
            sources: Vec::new(),
            faults: Vec::new(),
        }
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn phases(&self) -> usize {
        self.buses.first().map_or(1, |b| b.phases)
    }

    /// Matrix dimension `n_buses × phases`.
    pub fn dim(&self) -> usize {
        self.n_buses() * self.phases()
    }

    pub fn node_index(&self, bus: usize, phase: usize) -> usize {
        bus * self.phases() + phase
    }

    /// Bus adjacency lists over bus–bus branches (ground branches ignored),
    /// sorted and deduplicated.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_buses()];
        for br in &self.branches {
            if let Terminal::Bus(b) = br.to {
                adj[br.from].push(b);
                adj[b].push(br.from);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Checks every invariant of the data model; errors carry the JSON
    /// location of the offending item.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_buses();
        if n == 0 {
            return Err(Error::Invalid {
                location: "buses".into(),
                message: "network has no buses".into(),
            });
        }
        if !(self.delta_t > 0.0 && self.delta_t.is_finite()) {
            return Err(Error::NonPositive {
                location: "delta_t".into(),
                param: "delta_t",
                value: self.delta_t,
            });
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::NonPositive {
                location: "t_end".into(),
                param: "t_end",
                value: self.t_end,
            });
        }
        let phases = self.phases();
        for (i, bus) in self.buses.iter().enumerate() {
            let loc = || format!("buses[{i}]");
            if bus.id != i {
                return Err(Error::Invalid {
                    location: loc(),
                    message: format!("bus ids must be dense 0..{n}; found id {} at position {i}", bus.id),
                });
            }
            if bus.phases == 0 || bus.phases != phases {
                return Err(Error::Invalid {
                    location: loc(),
                    message: format!("phases must be >= 1 and identical across buses (expected {phases}, got {})", bus.phases),
                });
            }
            if !(bus.shunt_g >= 0.0 && bus.shunt_g.is_finite()) {
                return Err(Error::Invalid {
                    location: loc(),
                    message: format!("shunt_g must be >= 0, got {}", bus.shunt_g),
                });
            }
        }
        let check_bus = |bus: usize, location: String| -> Result<()> {
            if bus < n {
                Ok(())
            } else {
                Err(Error::DanglingBus {
                    location,
                    bus,
                    n_buses: n,
                })
            }
        };
        for (i, br) in self.branches.iter().enumerate() {
            let loc = format!("branches[{i}]");
            check_bus(br.from, format!("{loc}.from"))?;
            if let Terminal::Bus(b) = br.to {
                check_bus(b, format!("{loc}.to"))?;
                if b == br.from {
                    return Err(Error::Invalid {
                        location: loc,
                        message: "branch endpoints must differ".into(),
                    });
                }
            }
            br.try_element(&loc)?;
        }
        for (i, src) in self.sources.iter().enumerate() {
            let loc = format!("sources[{i}]");
            check_bus(src.bus, format!("{loc}.bus"))?;
            if src.phase >= phases {
                return Err(Error::Invalid {
                    location: loc,
                    message: format!("phase {} out of range (network has {phases})", src.phase),
                });
            }
            if !(src.magnitude >= 0.0 && src.magnitude.is_finite()) {
                return Err(Error::Invalid {
                    location: loc,
                    message: format!("magnitude must be >= 0, got {}", src.magnitude),
                });
            }
            if !(src.frequency > 0.0 && src.frequency.is_finite()) {
                return Err(Error::NonPositive {
                    location: loc,
                    param: "frequency",
                    value: src.frequency,
                });
            }
        }
        for (i, f) in self.faults.iter().enumerate() {
            let loc = format!("faults[{i}]");
            check_bus(f.bus_a, format!("{loc}.bus_a"))?;
            if let Terminal::Bus(b) = f.bus_b {
                check_bus(b, format!("{loc}.bus_b"))?;
                if b == f.bus_a {
                    return Err(Error::Invalid {
                        location: loc,
                        message: "fault endpoints must differ".into(),
                    });
                }
            }
            if !(f.fault_resistance > 0.0 && f.fault_resistance.is_finite()) {
                return Err(Error::NonPositive {
                    location: loc,
                    param: "fault_resistance",
                    value: f.fault_resistance,
                });
            }
            if !(0.0 <= f.t_on && f.t_on < f.t_off && f.t_off <= self.t_end) {
                return Err(Error::Invalid {
                    location: loc,
                    message: format!(
                        "need 0 <= t_on < t_off <= t_end, got t_on={} t_off={} t_end={}",
                        f.t_on, f.t_off, self.t_end
                    ),
                });
            }
        }
        self.check_connected()
    }

    fn check_connected(&self) -> Result<()> {
        let adj = self.adjacency();
        let n = adj.len();
        let mut seen = vec![false; n];
        let mut components = 0;
        let mut example = None;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            components += 1;
            if start > 0 && example.is_none() {
                example = Some(start);
            }
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &w in &adj[u] {
                    if !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
        match example {
            None => Ok(()),
            Some(example) => Err(Error::Disconnected {
                components,
                example,
            }),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    /// Parses and validates a network from JSON text. `origin` is only used
    /// in error messages.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let net: NetworkModel = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        net.validate()?;
        Ok(net)
    }
}

/// Reads, parses and validates a network file.
pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    NetworkModel::from_json(&text, path)
}

pub fn save_network(net: &NetworkModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, net.to_json()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus_json() -> &'static str {
        r#"{
            "name": "two_bus",
            "delta_t": 2e-5,
            "t_end": 0.01,
            "buses": [{"id": 0, "phases": 1, "shunt_g": 1.0}, {"id": 1, "phases": 1, "shunt_g": 1.0}],
            "branches": [{"from": 0, "to": 1, "kind": "resistor", "params": {"r": 1.0}}],
            "sources": [],
            "faults": []
        }"#
    }

    #[test]
    fn parses_minimal_two_bus_file() {
        let net = NetworkModel::from_json(two_bus_json(), Path::new("two_bus.json")).unwrap();
        assert_eq!(net.dim(), 2);
        assert_eq!(net.branches[0].element(), Element::Resistor { r: 1.0 });
    }

    #[test]
    fn dangling_bus_is_reported_with_location() {
        let text = two_bus_json().replace(r#""to": 1"#, r#""to": 99"#);
        let err = NetworkModel::from_json(&text, Path::new("x.json")).unwrap_err();
        assert!(matches!(err, Error::DanglingBus { bus: 99, .. }));
        assert!(err.to_string().contains("dangling bus reference"));
        assert!(err.to_string().contains("branches[0].to"));
    }

    #[test]
    fn nonpositive_parameter_is_rejected() {
        let text = two_bus_json().replace(r#""r": 1.0"#, r#""r": -2.0"#);
        let err = NetworkModel::from_json(&text, Path::new("x.json")).unwrap_err();
        assert!(matches!(err, Error::NonPositive { param: "r", .. }), "{err}");
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let mut net = NetworkModel::with_buses("d", 3, 1.0);
        net.branches.push(Branch::resistor(0, 1, 1.0));
        net.branches.push(Branch::capacitor(2, Terminal::Ground, 1e-6));
        assert!(matches!(
            net.validate(),
            Err(Error::Disconnected {
                components: 2,
                example: 2
            })
        ));
    }

    #[test]
    fn parse_error_reports_position() {
        let err = NetworkModel::from_json("{\n  \"name\": 3", Path::new("bad.json")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn ground_terminal_round_trips() {
        let mut net = NetworkModel::with_buses("g", 1, 0.0);
        net.branches.push(Branch::capacitor(0, Terminal::Ground, 1e-4));
        let text = net.to_json();
        assert!(text.contains("\"ground\""));
        let back = NetworkModel::from_json(&text, Path::new("g.json")).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn fault_window_must_fit_horizon() {
        let mut net = NetworkModel::from_json(two_bus_json(), Path::new("t.json")).unwrap();
        net.faults.push(FaultEvent {
            bus_a: 0,
            bus_b: Terminal::Ground,
            fault_resistance: 10.0,
            t_on: 0.005,
            t_off: 0.02,
        });
        assert!(net.validate().is_err());
        net.faults[0].t_off = 0.008;
        assert!(net.validate().is_ok());
    }

    #[test]
    fn source_uses_sine_convention() {
        let s = SourceWaveform {
            bus: 0,
            phase: 0,
            magnitude: 1.0,
            frequency: 60.0,
            phase_angle: 0.0,
        };
        assert_eq!(s.value_at(0.0), 0.0);
        assert!((s.value_at(1.0 / 240.0) - 1.0).abs() < 1e-15);
    }
}
