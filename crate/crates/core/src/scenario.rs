//! Road networks, signal programs and demand, plus their graph encoding.
//!
//! A scenario is read in its declarative form ([`ScenarioDef`], lanes and
//! junctions referenced by string id) and resolved into a validated
//! [`ScenarioSpec`] that uses dense indices. The spec knows how to encode the
//! static network as a sealed graph and how to layer a world state on top of
//! it.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::graph::{EdgeKind, EdgeType, GraphError, GraphSnapshot, NodeKind, NodeRef, NodeType, Schema};
use crate::math::floor;
use crate::oracles::{IdmParams, KraussParams};
use crate::sim::{LaneOccupancy, Leader, VehicleId, WorldState};

pub const CAR: &str = "car";
pub const LANE: &str = "lane";
pub const ROAD: &str = "road";
pub const JUNCTION: &str = "junction";
pub const SIGNAL: &str = "signal";

/// follower -> leader
pub const FOLLOWS: &str = "follows";
/// leader -> follower, same features as the matching `follows` edge
pub const LEADS: &str = "leads";
pub const ON_LANE: &str = "on_lane";
/// lane -> car, same features as the matching `on_lane` edge
pub const CARRIES: &str = "carries";
pub const ON_ROAD: &str = "on_road";
pub const CONNECTS_TO: &str = "connects_to";
pub const CONTROLS: &str = "controls";

pub const CAR_FEATURES: usize = 4;
pub const FOLLOW_FEATURES: usize = 2;
pub const ON_LANE_FEATURES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "lowercase"))]
pub enum Movement {
    Straight,
    Left,
    Right,
}

impl Movement {
    fn one_hot(self) -> [f64; 3] {
        match self {
            Movement::Straight => [1.0, 0.0, 0.0],
            Movement::Left => [0.0, 1.0, 0.0],
            Movement::Right => [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RoadDef {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length: f64,
    pub lanes: usize,
    pub speed_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct JunctionDef {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ConnectionDef {
    pub from: String,
    pub to: String,
    pub movement: Movement,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct NetworkDef {
    pub roads: Vec<RoadDef>,
    pub junctions: Vec<JunctionDef>,
    pub connections: Vec<ConnectionDef>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub stop_line_offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PhaseDef {
    /// `[from_lane, to_lane]` pairs with right of way
    pub green: Vec<(String, String)>,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SignalDef {
    pub id: String,
    pub junction: String,
    pub controlled: Vec<(String, String)>,
    pub phases: Vec<PhaseDef>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RouteDef {
    pub lanes: Vec<String>,
    pub weight: f64,
}

/// Vehicle `i` departs at step `start + floor(i * headway)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct DemandDef {
    pub count: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub start: u64,
    pub headway: f64,
    pub vehicle_length: f64,
    pub routes: Vec<RouteDef>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Normalization {
    /// reference speed, m/s
    pub v_ref: f64,
    /// reference distance, m
    pub s_ref: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self { v_ref: 15.0, s_ref: 25.0 }
    }
}

/// Declarative scenario as stored on disk.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ScenarioDef {
    pub network: NetworkDef,
    #[cfg_attr(feature = "serde", serde(default))]
    pub signals: Vec<SignalDef>,
    pub demand: DemandDef,
    pub dt: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub normalization: Normalization,
    #[cfg_attr(feature = "serde", serde(default))]
    pub idm: IdmParams,
    #[cfg_attr(feature = "serde", serde(default))]
    pub krauss: KraussParams,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioError {
    /// every violation found, in discovery order
    Invalid(Vec<String>),
    Graph(GraphError),
    UnknownLane(usize),
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Invalid(v) => write!(f, "invalid scenario: {}", v.join("; ")),
            ScenarioError::Graph(e) => write!(f, "graph encoding failed: {e}"),
            ScenarioError::UnknownLane(l) => write!(f, "vehicle on unknown lane index {l}"),
        }
    }
}

impl core::error::Error for ScenarioError {}

impl From<GraphError> for ScenarioError {
    fn from(e: GraphError) -> Self {
        ScenarioError::Graph(e)
    }
}

pub type LaneId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Road {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length: f64,
    pub lane_count: usize,
    pub speed_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    /// `<road_id>_<lane_index>`
    pub id: String,
    pub road: usize,
    pub index: usize,
    pub length: f64,
    pub speed_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Connection {
    pub from: LaneId,
    pub to: LaneId,
    pub movement: Movement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub roads: Vec<Road>,
    pub lanes: Vec<Lane>,
    pub junctions: Vec<JunctionDef>,
    pub connections: Vec<Connection>,
    pub stop_line_offset: f64,
    lane_index: BTreeMap<String, LaneId>,
    conn_index: BTreeMap<(LaneId, LaneId), usize>,
}

impl NetworkSpec {
    pub fn lane_id(&self, name: &str) -> Option<LaneId> {
        self.lane_index.get(name).copied()
    }

    pub fn connection(&self, from: LaneId, to: LaneId) -> Option<usize> {
        self.conn_index.get(&(from, to)).copied()
    }

    /// Stop line position measured from the lane start.
    pub fn stop_line(&self, lane: LaneId) -> f64 {
        self.lanes[lane].length - self.stop_line_offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpec {
    /// connection indices with right of way
    pub green: Vec<usize>,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalProgramSpec {
    pub id: String,
    pub junction: usize,
    /// connection indices governed by this signal
    pub controlled: Vec<usize>,
    pub phases: Vec<PhaseSpec>,
}

impl SignalProgramSpec {
    pub fn cycle(&self) -> f64 {
        self.phases.iter().map(|p| p.duration).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub lanes: Vec<LaneId>,
    pub weight: f64,
    /// total lane length along the route
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandSpec {
    pub count: usize,
    pub start: u64,
    pub headway: f64,
    pub vehicle_length: f64,
    pub routes: Vec<Route>,
}

impl DemandSpec {
    pub fn depart_step(&self, i: usize) -> u64 {
        self.start + floor(i as f64 * self.headway) as u64
    }
}

/// A departure drawn from the demand: vehicle `vehicle` enters on the first
/// lane of route `route` at step `step`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Departure {
    pub step: u64,
    pub vehicle: VehicleId,
    pub route: usize,
}

/// Validated, index-resolved scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    def: ScenarioDef,
    pub network: NetworkSpec,
    pub signals: Vec<SignalProgramSpec>,
    pub demand: DemandSpec,
    pub dt: f64,
    pub normalization: Normalization,
    pub idm: IdmParams,
    pub krauss: KraussParams,
    // connection index -> (signal, phase green flags)
    control: Vec<Option<(usize, Vec<bool>)>>,
    schema: Arc<Schema>,
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl ScenarioSpec {
    /// Validates and resolves a scenario, reporting every violation at once.
    pub fn from_def(def: ScenarioDef) -> Result<Self, ScenarioError> {
        let mut errs: Vec<String> = Vec::new();

        if !positive(def.dt) {
            errs.push(format!("dt must be positive, got {}", def.dt));
        }
        if !positive(def.normalization.v_ref) || !positive(def.normalization.s_ref) {
            errs.push("normalization v_ref and s_ref must be positive".to_string());
        }
        if !def.idm.is_valid() {
            errs.push("idm parameters must all be positive".to_string());
        }
        if !def.krauss.is_valid() {
            errs.push("krauss parameters out of range".to_string());
        }

        let net = &def.network;
        let mut junctions: Vec<JunctionDef> = Vec::new();
        for j in &net.junctions {
            if junctions.iter().any(|k| k.id == j.id) {
                errs.push(format!("duplicate junction '{}'", j.id));
            } else {
                junctions.push(j.clone());
            }
        }
        if !(net.stop_line_offset >= 0.0) {
            errs.push("stop_line_offset must be non-negative".to_string());
        }

        let mut roads = Vec::new();
        let mut lanes = Vec::new();
        let mut lane_index = BTreeMap::new();
        for r in &net.roads {
            if roads.iter().any(|x: &Road| x.id == r.id) {
                errs.push(format!("duplicate road '{}'", r.id));
                continue;
            }
            if !positive(r.length) {
                errs.push(format!("road '{}' length must be positive", r.id));
            }
            if !positive(r.speed_limit) {
                errs.push(format!("road '{}' speed limit must be positive", r.id));
            }
            if r.lanes == 0 {
                errs.push(format!("road '{}' has no lanes", r.id));
            }
            if r.length <= net.stop_line_offset {
                errs.push(format!("road '{}' is shorter than the stop line offset", r.id));
            }
            let road = roads.len();
            for index in 0..r.lanes {
                let id = format!("{}_{}", r.id, index);
                lane_index.insert(id.clone(), lanes.len());
                lanes.push(Lane { id, road, index, length: r.length, speed_limit: r.speed_limit });
            }
            roads.push(Road {
                id: r.id.clone(),
                from: r.from.clone(),
                to: r.to.clone(),
                length: r.length,
                lane_count: r.lanes,
                speed_limit: r.speed_limit,
            });
        }

        let lookup = |name: &str, errs: &mut Vec<String>, ctx: &str| -> Option<LaneId> {
            let id = lane_index.get(name).copied();
            if id.is_none() {
                errs.push(format!("{ctx} references unknown lane '{name}'"));
            }
            id
        };

        let mut connections = Vec::new();
        let mut conn_index = BTreeMap::new();
        for c in &net.connections {
            let from = lookup(&c.from, &mut errs, "connection");
            let to = lookup(&c.to, &mut errs, "connection");
            if let (Some(from), Some(to)) = (from, to) {
                if from == to {
                    errs.push(format!("connection '{}' loops onto itself", c.from));
                } else if conn_index.insert((from, to), connections.len()).is_some() {
                    errs.push(format!("duplicate connection {} -> {}", c.from, c.to));
                } else {
                    connections.push(Connection { from, to, movement: c.movement });
                }
            }
        }

        let find_conn = |pair: &(String, String), errs: &mut Vec<String>, ctx: &str| -> Option<usize> {
            let from = lookup(&pair.0, errs, ctx)?;
            let to = lookup(&pair.1, errs, ctx)?;
            let c = conn_index.get(&(from, to)).copied();
            if c.is_none() {
                errs.push(format!("{ctx} references undeclared connection {} -> {}", pair.0, pair.1));
            }
            c
        };

        let mut signals = Vec::new();
        let mut control: Vec<Option<(usize, Vec<bool>)>> = vec![None; connections.len()];
        for s in &def.signals {
            let ctx = format!("signal '{}'", s.id);
            let junction = junctions.iter().position(|j| j.id == s.junction);
            if junction.is_none() {
                errs.push(format!("{ctx} references unknown junction '{}'", s.junction));
            }
            if s.phases.is_empty() {
                errs.push(format!("{ctx} has no phases"));
            }
            let controlled: Vec<usize> = s.controlled.iter().filter_map(|p| find_conn(p, &mut errs, &ctx)).collect();
            let mut phases = Vec::new();
            for p in &s.phases {
                if !positive(p.duration) {
                    errs.push(format!("{ctx} has a non-positive phase duration"));
                }
                let green: Vec<usize> = p.green.iter().filter_map(|g| find_conn(g, &mut errs, &ctx)).collect();
                for g in &green {
                    if !controlled.contains(g) {
                        errs.push(format!("{ctx} grants green to an uncontrolled connection"));
                    }
                }
                phases.push(PhaseSpec { green, duration: p.duration });
            }
            for c in &controlled {
                if !phases.iter().any(|p| p.green.contains(c)) {
                    let conn = &connections[*c];
                    errs.push(format!(
                        "{ctx}: connection {} -> {} is never green",
                        lanes[conn.from].id, lanes[conn.to].id
                    ));
                }
                if control[*c].is_some() {
                    errs.push(format!("{ctx}: connection controlled by more than one signal"));
                } else {
                    let flags = phases.iter().map(|p| p.green.contains(c)).collect();
                    control[*c] = Some((signals.len(), flags));
                }
            }
            signals.push(SignalProgramSpec {
                id: s.id.clone(),
                junction: junction.unwrap_or(0),
                controlled,
                phases,
            });
        }

        let d = &def.demand;
        if !positive(d.vehicle_length) {
            errs.push("vehicle_length must be positive".to_string());
        }
        if !(d.headway >= 0.0 && d.headway.is_finite()) {
            errs.push("headway must be non-negative".to_string());
        }
        let mut routes = Vec::new();
        for (i, r) in d.routes.iter().enumerate() {
            let ctx = format!("route {i}");
            if r.lanes.is_empty() {
                errs.push(format!("{ctx} is empty"));
            }
            if !(r.weight >= 0.0 && r.weight.is_finite()) {
                errs.push(format!("{ctx} has a negative weight"));
            }
            let ids: Vec<Option<LaneId>> = r.lanes.iter().map(|l| lookup(l, &mut errs, &ctx)).collect();
            for w in ids.windows(2) {
                if let [Some(a), Some(b)] = w {
                    if !conn_index.contains_key(&(*a, *b)) {
                        errs.push(format!("{ctx}: no connection {} -> {}", lanes[*a].id, lanes[*b].id));
                    }
                }
            }
            let resolved: Vec<LaneId> = ids.into_iter().flatten().collect();
            let length = resolved.iter().map(|l| lanes[*l].length).sum();
            routes.push(Route { lanes: resolved, weight: r.weight, length });
        }
        if d.count > 0 && !(routes.iter().map(|r| r.weight).sum::<f64>() > 0.0) {
            errs.push("demand has vehicles but no route with positive weight".to_string());
        }

        if !errs.is_empty() {
            return Err(ScenarioError::Invalid(errs));
        }

        let max_phases = signals.iter().map(|s| s.phases.len()).max().unwrap_or(0).max(1);
        let schema = Arc::new(graph_schema(max_phases));
        let demand = DemandSpec {
            count: d.count,
            start: d.start,
            headway: d.headway,
            vehicle_length: d.vehicle_length,
            routes,
        };
        Ok(ScenarioSpec {
            network: NetworkSpec {
                roads,
                lanes,
                junctions,
                connections,
                stop_line_offset: net.stop_line_offset,
                lane_index,
                conn_index,
            },
            signals,
            demand,
            dt: def.dt,
            normalization: def.normalization,
            idm: def.idm,
            krauss: def.krauss,
            control,
            schema,
            def,
        })
    }

    pub fn def(&self) -> &ScenarioDef {
        &self.def
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    /// Copy of this scenario with the demand count scaled by `multiplier`
    /// and the departure headway shrunk accordingly, so the departure window
    /// stays the same and only the arrival rate changes.
    pub fn with_demand_scale(&self, multiplier: f64) -> Result<Self, ScenarioError> {
        let mut def = self.def.clone();
        let count = def.demand.count as f64 * multiplier;
        def.demand.count = (count + 0.5) as usize;
        if multiplier > 0.0 {
            def.demand.headway /= multiplier;
        }
        Self::from_def(def)
    }

    pub fn with_demand_count(&self, count: usize) -> Result<Self, ScenarioError> {
        let mut def = self.def.clone();
        def.demand.count = count;
        Self::from_def(def)
    }

    pub fn with_dt(&self, dt: f64) -> Result<Self, ScenarioError> {
        let mut def = self.def.clone();
        def.dt = dt;
        Self::from_def(def)
    }

    /// Controlling signal and phase flags of connection `conn`, if any.
    pub fn control(&self, conn: usize) -> Option<(usize, &[bool])> {
        self.control[conn].as_ref().map(|(s, f)| (*s, f.as_slice()))
    }

    /// Fastest speed any backend may reach in this scenario.
    pub fn max_speed(&self) -> f64 {
        self.network.lanes.iter().map(|l| l.speed_limit).fold(0.0, f64::max)
    }

    /// Route draw and departure step for every vehicle, sorted by step.
    pub fn spawn_departures(&self, seed: u64) -> Vec<Departure> {
        spawn_departures(&self.demand, seed)
    }

    /// Static network graph: roads, lanes, junctions and signals.
    pub fn build_network_graph(&self) -> Result<NetworkGraph, ScenarioError> {
        let s = &self.schema;
        let kind = |n: &str| s.node_kind(n).expect("schema node");
        let ekind = |n: &str| s.edge_kind(n).expect("schema edge");
        let norm = self.normalization;
        let mut g = GraphSnapshot::new(Arc::clone(s), 0);
        let mut road_nodes = Vec::new();
        for r in &self.network.roads {
            road_nodes.push(g.add_node_of(kind(ROAD), &[r.length / norm.s_ref, r.lane_count as f64])?);
        }
        let mut lane_nodes = Vec::new();
        for l in &self.network.lanes {
            lane_nodes.push(g.add_node_of(kind(LANE), &[l.length / norm.s_ref, l.speed_limit / norm.v_ref])?);
        }
        let mut junction_nodes = Vec::new();
        for j in &self.network.junctions {
            junction_nodes.push(g.add_node_of(kind(JUNCTION), &[j.x / norm.s_ref, j.y / norm.s_ref])?);
        }
        let phase_dim = s.node_type(kind(SIGNAL)).feature_dim;
        let mut signal_nodes = Vec::new();
        for _ in &self.signals {
            let mut f = vec![0.0; phase_dim];
            f[0] = 1.0;
            signal_nodes.push(g.add_node_of(kind(SIGNAL), &f)?);
        }
        for (i, l) in self.network.lanes.iter().enumerate() {
            g.add_edge_of(lane_nodes[i], road_nodes[l.road], ekind(ON_ROAD), &[])?;
        }
        for c in &self.network.connections {
            g.add_edge_of(lane_nodes[c.from], lane_nodes[c.to], ekind(CONNECTS_TO), &c.movement.one_hot())?;
        }
        for (si, sig) in self.signals.iter().enumerate() {
            let mut seen: Vec<LaneId> = Vec::new();
            for c in &sig.controlled {
                let from = self.network.connections[*c].from;
                if !seen.contains(&from) {
                    seen.push(from);
                    g.add_edge_of(signal_nodes[si], lane_nodes[from], ekind(CONTROLS), &[])?;
                }
            }
        }
        Ok(NetworkGraph {
            snapshot: Arc::new(g.seal()),
            road_nodes,
            lane_nodes,
            junction_nodes,
            signal_nodes,
        })
    }

    /// Encodes a world state on top of the network graph.
    ///
    /// Car features: `[speed / v_ref, accel * dt / v_ref, offset / lane length,
    /// remaining route fraction]`. Follow edges carry `[gap / s_ref,
    /// (v_follower - v_leader) / v_ref]`; lane membership edges carry
    /// `[distance to stop line / s_ref, may-proceed flag]`.
    pub fn world_to_graph(&self, world: &WorldState, net: &NetworkGraph) -> Result<EncodedWorld, ScenarioError> {
        let occupancy = LaneOccupancy::build(world, self)?;
        self.world_to_graph_with(world, net, &occupancy)
    }

    pub(crate) fn world_to_graph_with(
        &self,
        world: &WorldState,
        net: &NetworkGraph,
        occupancy: &LaneOccupancy,
    ) -> Result<EncodedWorld, ScenarioError> {
        let s = &self.schema;
        let norm = self.normalization;
        let car = s.node_kind(CAR).expect("schema node");
        let signal = s.node_kind(SIGNAL).expect("schema node");
        let [follows, leads, on_lane, carries] =
            [FOLLOWS, LEADS, ON_LANE, CARRIES].map(|n| s.edge_kind(n).expect("schema edge"));

        let mut g = net.snapshot.fork(world.step);
        let phase_dim = s.node_type(signal).feature_dim;
        for (node, phase) in net.signal_nodes.iter().zip(&world.phases) {
            let mut f = vec![0.0; phase_dim];
            f[phase.index] = 1.0;
            g.set_node_features(*node, &f)?;
        }

        let mut cars = Vec::with_capacity(world.vehicles.len());
        for v in &world.vehicles {
            let lane = self.network.lanes.get(v.lane).ok_or(ScenarioError::UnknownLane(v.lane))?;
            let route = &self.demand.routes[v.route];
            let traveled: f64 = route.lanes[..v.route_pos].iter().map(|l| self.network.lanes[*l].length).sum::<f64>()
                + v.offset;
            let remaining = if route.length > 0.0 { 1.0 - traveled / route.length } else { 0.0 };
            let features = [
                v.speed / norm.v_ref,
                v.accel * self.dt / norm.v_ref,
                v.offset / lane.length,
                remaining.clamp(0.0, 1.0),
            ];
            let node = g.add_node_of(car, &features)?;
            cars.push((v.id, node));
        }
        for (i, v) in world.vehicles.iter().enumerate() {
            let node = cars[i].1;
            let lane_node = net.lane_nodes[v.lane];
            let stop = self.network.stop_line(v.lane);
            let proceed = if self.is_red_ahead(world, v) { 0.0 } else { 1.0 };
            let f = [(stop - v.offset).max(0.0) / norm.s_ref, proceed];
            g.add_edge_of(node, lane_node, on_lane, &f)?;
            g.add_edge_of(lane_node, node, carries, &f)?;
        }
        for (i, v) in world.vehicles.iter().enumerate() {
            let info = occupancy.leader(world, self, i);
            if let Leader::Vehicle(lid) = info.leader {
                let j = occupancy.position_of(lid).expect("leader is active");
                let f = [info.gap / norm.s_ref, (v.speed - info.speed) / norm.v_ref];
                g.add_edge_of(cars[i].1, cars[j].1, follows, &f)?;
                g.add_edge_of(cars[j].1, cars[i].1, leads, &f)?;
            }
        }
        Ok(EncodedWorld { snapshot: g.seal(), cars })
    }

    /// True when the vehicle's next connection is controlled and red.
    pub(crate) fn is_red_ahead(&self, world: &WorldState, v: &crate::sim::VehicleState) -> bool {
        let route = &self.demand.routes[v.route];
        let Some(next) = route.lanes.get(v.route_pos + 1) else {
            return false;
        };
        let Some(conn) = self.network.connection(v.lane, *next) else {
            return false;
        };
        match self.control(conn) {
            Some((signal, flags)) => !flags[world.phases[signal].index],
            None => false,
        }
    }
}

/// Sealed network graph plus the node refs of its elements.
#[derive(Debug, Clone)]
pub struct NetworkGraph {
    pub snapshot: Arc<GraphSnapshot>,
    pub road_nodes: Vec<NodeRef>,
    pub lane_nodes: Vec<NodeRef>,
    pub junction_nodes: Vec<NodeRef>,
    pub signal_nodes: Vec<NodeRef>,
}

/// Output of [`ScenarioSpec::world_to_graph`]: the sealed snapshot and the
/// car node of every active vehicle, in vehicle id order.
#[derive(Debug, Clone)]
pub struct EncodedWorld {
    pub snapshot: GraphSnapshot,
    pub cars: Vec<(VehicleId, NodeRef)>,
}

/// Node and edge types of the traffic graph. `phase_dim` is the width of the
/// signal one-hot phase encoding.
pub fn graph_schema(phase_dim: usize) -> Schema {
    let n = |name: &str, dim: usize| NodeType { name: name.to_string(), feature_dim: dim };
    let e = |name: &str, src: &str, dst: &str, dim: usize| EdgeType {
        name: name.to_string(),
        src_kind: src.to_string(),
        dst_kind: dst.to_string(),
        feature_dim: dim,
    };
    Schema::new(
        vec![n(CAR, CAR_FEATURES), n(LANE, 2), n(ROAD, 2), n(JUNCTION, 2), n(SIGNAL, phase_dim)],
        vec![
            e(FOLLOWS, CAR, CAR, FOLLOW_FEATURES),
            e(LEADS, CAR, CAR, FOLLOW_FEATURES),
            e(ON_LANE, CAR, LANE, ON_LANE_FEATURES),
            e(CARRIES, LANE, CAR, ON_LANE_FEATURES),
            e(ON_ROAD, LANE, ROAD, 0),
            e(CONNECTS_TO, LANE, LANE, 3),
            e(CONTROLS, SIGNAL, LANE, 0),
        ],
    )
    .expect("static schema is valid")
}

/// Deterministic departures: schedule from the demand headway, route by a
/// weighted draw from a generator seeded with `seed`.
pub fn spawn_departures(demand: &DemandSpec, seed: u64) -> Vec<Departure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = demand.routes.iter().map(|r| r.weight).sum();
    let mut out = Vec::with_capacity(demand.count);
    for i in 0..demand.count {
        let mut x = rng.gen::<f64>() * total;
        let mut route = demand.routes.len() - 1;
        for (k, r) in demand.routes.iter().enumerate() {
            if r.weight > 0.0 && x < r.weight {
                route = k;
                break;
            }
            x -= r.weight;
        }
        // guard against landing on a zero-weight tail through rounding
        while demand.routes[route].weight <= 0.0 {
            route -= 1;
        }
        out.push(Departure { step: demand.depart_step(i), vehicle: i as VehicleId, route });
    }
    out.sort();
    out
}

/// Kind index lookups used by the learner and tests.
pub fn car_kind(schema: &Schema) -> NodeKind {
    schema.node_kind(CAR).expect("traffic schema")
}

pub fn follows_kind(schema: &Schema) -> EdgeKind {
    schema.edge_kind(FOLLOWS).expect("traffic schema")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::WorldState;
    use crate::testkit::{car, line_def, road, signal_def, spec};

    fn count_kind(g: &GraphSnapshot, name: &str) -> usize {
        let k = g.schema().node_kind(name).unwrap();
        g.nodes().filter(|n| n.kind == k).count()
    }

    fn count_edges(g: &GraphSnapshot, name: &str) -> usize {
        let k = g.schema().edge_kind(name).unwrap();
        g.edges().filter(|e| e.kind == k).count()
    }

    #[test]
    fn unknown_route_lane_is_named() {
        let mut def = line_def(3);
        def.demand.routes[0].lanes.push("L99".into());
        let ScenarioError::Invalid(errs) = ScenarioSpec::from_def(def).unwrap_err() else { panic!() };
        assert!(errs.iter().any(|e| e.contains("L99")), "{errs:?}");
    }

    #[test]
    fn every_violation_reported() {
        let mut def = line_def(3);
        def.dt = 0.0;
        def.network.roads[1].length = -1.0;
        def.demand.routes[0].weight = 0.0;
        let ScenarioError::Invalid(errs) = ScenarioSpec::from_def(def).unwrap_err() else { panic!() };
        assert_eq!(errs.len(), 4, "{errs:?}");
    }

    #[test]
    fn phase_coverage_checked() {
        let mut def = signal_def(1);
        def.signals[0].phases[1].green.clear();
        let ScenarioError::Invalid(errs) = ScenarioSpec::from_def(def).unwrap_err() else { panic!() };
        assert!(errs[0].contains("never green"));
    }

    #[test]
    fn empty_demand_is_valid() {
        let s = spec(line_def(0));
        assert!(s.spawn_departures(1).is_empty());
    }

    #[test]
    fn lane_ids_follow_road_and_index() {
        let mut def = line_def(0);
        def.network.roads[0].lanes = 3;
        let s = spec(def);
        let ids: Vec<&str> = s.network.lanes.iter().map(|l| l.id.as_str()).collect();
        assert_eq!(ids, ["a_0", "a_1", "a_2", "b_0"]);
        assert_eq!(s.network.lane_id("b_0"), Some(3));
    }

    #[test]
    fn single_lane_network_graph() {
        let mut def = line_def(0);
        def.network.roads.truncate(1);
        def.network.connections.clear();
        def.network.junctions.truncate(2);
        def.demand.routes[0].lanes.truncate(1);
        let net = spec(def).build_network_graph().unwrap();
        let g = &net.snapshot;
        assert!(g.is_sealed());
        assert_eq!(g.timestamp(), 0);
        assert_eq!((count_kind(g, ROAD), count_kind(g, LANE), count_kind(g, JUNCTION)), (1, 1, 2));
        assert_eq!(count_kind(g, CAR), 0);
        assert_eq!(count_edges(g, ON_ROAD), 1);
        assert_eq!(count_edges(g, CONTROLS), 0);
    }

    #[test]
    fn connections_and_controls_encoded() {
        let s = spec(signal_def(0));
        let g = s.build_network_graph().unwrap().snapshot;
        assert_eq!(count_edges(&g, CONNECTS_TO), s.network.connections.len());
        assert_eq!(count_edges(&g, CONTROLS), 1);
        assert_eq!(count_kind(&g, SIGNAL), 1);
    }

    #[test]
    fn network_graph_ignores_demand() {
        let a = spec(signal_def(0)).build_network_graph().unwrap();
        let mut def = signal_def(50);
        def.demand.headway = 0.5;
        let b = spec(def).build_network_graph().unwrap();
        assert_eq!(a.snapshot, b.snapshot);
    }

    #[test]
    fn two_car_encoding() {
        let s = spec(line_def(2));
        let net = s.build_network_graph().unwrap();
        let mut w = WorldState::new(&s, Vec::new()).unwrap();
        w.vehicles = vec![car(0, 0, 50.0, 10.0), car(1, 0, 10.0, 12.0)];
        let enc = s.world_to_graph(&w, &net).unwrap();
        let g = &enc.snapshot;
        assert_eq!(count_kind(g, CAR), 2);
        assert_eq!(count_edges(g, FOLLOWS), 1);
        assert_eq!(count_edges(g, ON_LANE), 2);
        let follows = g.schema().edge_kind(FOLLOWS).unwrap();
        let e = g.edges().find(|e| e.kind == follows).unwrap();
        assert_eq!(e.src, enc.cars[1].1);
        assert_eq!(e.dst, enc.cars[0].1);
        assert_eq!(e.features, &[(50.0 - 10.0 - 5.0) / 25.0, 2.0 / 15.0]);
        assert_eq!(g.node_features(enc.cars[0].1).unwrap()[0], 10.0 / 15.0);
        assert_eq!(g.node_features(enc.cars[0].1).unwrap()[2], 0.5);
    }

    #[test]
    fn empty_world_encodes_network_and_phase() {
        let s = spec(signal_def(0));
        let net = s.build_network_graph().unwrap();
        let mut w = WorldState::new(&s, Vec::new()).unwrap();
        w.phases[0].index = 1;
        let enc = s.world_to_graph(&w, &net).unwrap();
        assert_eq!(enc.snapshot.node_count(), net.snapshot.node_count());
        assert_eq!(enc.snapshot.edge_count(), net.snapshot.edge_count());
        assert_eq!(enc.snapshot.node_features(net.signal_nodes[0]).unwrap(), &[0.0, 1.0]);
        assert_eq!(enc.snapshot.node_features(net.lane_nodes[0]), net.snapshot.node_features(net.lane_nodes[0]));
    }

    #[test]
    fn signalized_two_car_scene() {
        let mut def = signal_def(2);
        def.network.roads.push(road("c", "J1", "J3", 100.0, 1));
        def.network.junctions.push(JunctionDef { id: "J3".into(), x: 0.0, y: 100.0 });
        def.network.connections.push(ConnectionDef { from: "a_0".into(), to: "c_0".into(), movement: Movement::Left });
        def.signals[0].controlled.push(("a_0".into(), "c_0".into()));
        def.signals[0].phases[0].green.push(("a_0".into(), "c_0".into()));
        def.demand.routes.push(RouteDef { lanes: vec!["a_0".into(), "c_0".into()], weight: 1.0 });
        let s = spec(def);
        let net = s.build_network_graph().unwrap();
        let mut w = WorldState::new(&s, Vec::new()).unwrap();
        let mut b = car(1, 0, 80.0, 5.0);
        b.route = 1;
        w.vehicles = vec![car(0, 0, 60.0, 5.0), b];
        let enc = s.world_to_graph(&w, &net).unwrap();
        assert_eq!(count_kind(&enc.snapshot, CAR), 2);
        assert!(count_edges(&enc.snapshot, CONTROLS) >= 1);
        // car 0 is held by red, car 1 turning left has green
        let on_lane = enc.snapshot.schema().edge_kind(ON_LANE).unwrap();
        let flags: Vec<f64> =
            enc.snapshot.edges().filter(|e| e.kind == on_lane).map(|e| e.features[1]).collect();
        assert_eq!(flags, [0.0, 1.0]);
    }

    #[test]
    fn car_counts_track_vehicle_counts() {
        let s = spec(line_def(5));
        let net = s.build_network_graph().unwrap();
        let mut w = WorldState::new(&s, Vec::new()).unwrap();
        for n in 0..5u32 {
            let enc = s.world_to_graph(&w, &net).unwrap();
            assert_eq!(count_kind(&enc.snapshot, CAR), n as usize);
            w.vehicles.push(car(n, 0, 90.0 - 10.0 * n as f64, 3.0));
        }
    }

    #[test]
    fn unknown_lane_rejected() {
        let s = spec(line_def(1));
        let net = s.build_network_graph().unwrap();
        let mut w = WorldState::new(&s, Vec::new()).unwrap();
        w.vehicles = vec![car(0, 7, 1.0, 0.0)];
        assert_eq!(s.world_to_graph(&w, &net).unwrap_err(), ScenarioError::UnknownLane(7));
    }

    #[test]
    fn departures() {
        let mut def = line_def(3);
        def.demand.headway = 2.5;
        let s = spec(def.clone());
        let d = s.spawn_departures(4);
        assert_eq!(d.iter().map(|d| d.step).collect::<Vec<_>>(), [0, 2, 5]);
        assert!(d.iter().all(|d| d.route == 0));
        assert_eq!(d, s.spawn_departures(4));

        def.demand.count = 200;
        def.demand.routes.push(RouteDef { lanes: vec!["a_0".into()], weight: 3.0 });
        def.demand.routes.push(RouteDef { lanes: vec!["b_0".into()], weight: 0.0 });
        let d = spec(def).spawn_departures(9);
        let short = d.iter().filter(|d| d.route == 1).count();
        assert!(d.iter().all(|d| d.route != 2));
        assert!((120..=180).contains(&short), "{short}");
    }

    #[test]
    fn demand_scaling_keeps_window() {
        let s = spec(line_def(768));
        let q = s.with_demand_scale(0.25).unwrap();
        assert_eq!(q.demand.count, 192);
        assert_eq!(q.demand.headway, 8.0);
    }
}
