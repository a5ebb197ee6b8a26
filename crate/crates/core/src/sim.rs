//! Rollout engine.
//!
//! Each [`Simulator::step`] maps one world state to the next, which is the
//! graph-translation view of the simulation: every state can be encoded as
//! a sealed snapshot and the sequence of snapshots is the simulation.
//!
//! Position updates depend on what the backend produces. IDM yields an
//! acceleration and is integrated ballistically (trapezoidal, stopping
//! exactly where the speed reaches zero). Krauss and the learned model yield
//! the next speed, which is integrated with an Euler step so Krauss' safe
//! speed keeps its collision-free guarantee.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::NodeRef;
use crate::hgt::{model_forward, Batch, HgtError, ModelParams};
use crate::oracles::{idm_accel, krauss_next_speed, signal_phase, IdmParams, KraussParams, OracleError, PhaseState};
use crate::scenario::{Departure, LaneId, NetworkGraph, ScenarioError, ScenarioSpec};

pub type VehicleId = u32;

/// Gap reported when nothing is ahead.
pub const GAP_SENTINEL: f64 = 1e6;
/// Minimum bumper gap enforced after every move.
pub const MIN_CLEARANCE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    pub lane: LaneId,
    /// front bumper position from the lane start, m
    pub offset: f64,
    pub speed: f64,
    pub accel: f64,
    /// index into the scenario's routes
    pub route: usize,
    /// position of `lane` within the route
    pub route_pos: usize,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub step: u64,
    /// active vehicles, ascending id
    pub vehicles: Vec<VehicleState>,
    /// departures not yet inserted, ascending (step, id)
    pub pending: Vec<Departure>,
    /// one entry per signal
    pub phases: Vec<PhaseState>,
    pub entered: u64,
    pub exited: u64,
    /// moves that had to be clamped to keep [`MIN_CLEARANCE`]
    pub violations: u64,
    /// held acceleration per vehicle for the learned backend
    pub holds: BTreeMap<VehicleId, f64>,
    /// vehicles driven at a fixed speed regardless of backend
    pub pinned: BTreeMap<VehicleId, f64>,
}

impl WorldState {
    /// Empty world at step 0 with the given departures queued.
    pub fn new(spec: &ScenarioSpec, mut departures: Vec<Departure>) -> Result<Self, SimError> {
        departures.sort();
        let phases = spec
            .signals
            .iter()
            .map(|s| signal_phase(s, 0.0))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            step: 0,
            vehicles: Vec::new(),
            pending: departures,
            phases,
            entered: 0,
            exited: 0,
            violations: 0,
            holds: BTreeMap::new(),
            pinned: BTreeMap::new(),
        })
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&VehicleState> {
        self.vehicles.binary_search_by_key(&id, |v| v.id).ok().map(|i| &self.vehicles[i])
    }
}

/// What a vehicle is following.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Leader {
    Vehicle(VehicleId),
    /// stopped obstacle at a red stop line
    Virtual,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderInfo {
    pub gap: f64,
    pub speed: f64,
    pub leader: Leader,
}

#[derive(Clone)]
pub enum Backend {
    Idm,
    Krauss,
    Learned(Arc<ModelParams>),
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Idm => "idm",
            Backend::Krauss => "krauss",
            Backend::Learned(_) => "learned",
        }
    }

    pub fn is_oracle(&self) -> bool {
        !matches!(self, Backend::Learned(_))
    }
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct RolloutConfig {
    pub backend: Backend,
    pub dt: f64,
    pub horizon: u64,
    /// data collection interval in steps
    pub dci: u64,
    pub seed: u64,
}

impl RolloutConfig {
    pub fn new(backend: Backend, spec: &ScenarioSpec, horizon: u64, seed: u64) -> Self {
        Self { backend, dt: spec.dt, horizon, dci: 1, seed }
    }

    pub fn with_dci(mut self, dci: u64) -> Self {
        self.dci = dci;
        self
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidConfig(String::from("dt must be positive")));
        }
        if self.dci == 0 {
            return Err(SimError::InvalidConfig(String::from("dci must be at least 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    Scenario(ScenarioError),
    Oracle(OracleError),
    Model(HgtError),
    InvalidConfig(String),
    /// dataset collection needs a rule-based backend
    NotOracle,
    /// horizon shorter than one collection interval
    EmptyDataset { horizon: u64, dci: u64 },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::Scenario(e) => write!(f, "{e}"),
            SimError::Oracle(e) => write!(f, "{e}"),
            SimError::Model(e) => write!(f, "{e}"),
            SimError::InvalidConfig(m) => write!(f, "invalid rollout config: {m}"),
            SimError::NotOracle => write!(f, "dataset collection requires the idm or krauss backend"),
            SimError::EmptyDataset { horizon, dci } => {
                write!(f, "horizon {horizon} is shorter than the collection interval {dci}")
            }
        }
    }
}

impl core::error::Error for SimError {}

impl From<ScenarioError> for SimError {
    fn from(e: ScenarioError) -> Self {
        SimError::Scenario(e)
    }
}

impl From<OracleError> for SimError {
    fn from(e: OracleError) -> Self {
        SimError::Oracle(e)
    }
}

impl From<HgtError> for SimError {
    fn from(e: HgtError) -> Self {
        SimError::Model(e)
    }
}

/// Per-lane ordering of the vehicles of one world state.
#[derive(Debug, Clone)]
pub struct LaneOccupancy {
    // vehicle indices per lane, ascending offset
    lanes: Vec<Vec<usize>>,
    // rank of each vehicle within its lane list
    rank: Vec<usize>,
    ids: Vec<VehicleId>,
}

impl LaneOccupancy {
    pub fn build(world: &WorldState, spec: &ScenarioSpec) -> Result<Self, ScenarioError> {
        let mut lanes = vec![Vec::new(); spec.network.lanes.len()];
        for (i, v) in world.vehicles.iter().enumerate() {
            lanes.get_mut(v.lane).ok_or(ScenarioError::UnknownLane(v.lane))?.push(i);
        }
        let mut rank = vec![0; world.vehicles.len()];
        for list in &mut lanes {
            list.sort_by(|a, b| {
                let (va, vb) = (&world.vehicles[*a], &world.vehicles[*b]);
                va.offset.total_cmp(&vb.offset).then(va.id.cmp(&vb.id))
            });
            for (r, i) in list.iter().enumerate() {
                rank[*i] = r;
            }
        }
        Ok(Self { lanes, rank, ids: world.vehicles.iter().map(|v| v.id).collect() })
    }

    /// Index of vehicle `id` in the world's vehicle list.
    pub fn position_of(&self, id: VehicleId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    /// Vehicle index of the rearmost vehicle on `lane`.
    pub fn last_on(&self, lane: LaneId) -> Option<usize> {
        self.lanes[lane].first().copied()
    }

    /// Leader of vehicle index `i`: the nearest vehicle ahead on the same
    /// lane, else a virtual stopped leader at a red stop line, else the
    /// rearmost vehicle on the next route lane, else nothing.
    pub fn leader(&self, world: &WorldState, spec: &ScenarioSpec, i: usize) -> LeaderInfo {
        let v = &world.vehicles[i];
        let list = &self.lanes[v.lane];
        let r = self.rank[i];
        if let Some(j) = list.get(r + 1) {
            let l = &world.vehicles[*j];
            return LeaderInfo { gap: l.offset - v.offset - l.length, speed: l.speed, leader: Leader::Vehicle(l.id) };
        }
        let lane = &spec.network.lanes[v.lane];
        let stop = spec.network.stop_line(v.lane);
        if v.offset < stop && spec.is_red_ahead(world, v) {
            return LeaderInfo { gap: stop - v.offset, speed: 0.0, leader: Leader::Virtual };
        }
        let route = &spec.demand.routes[v.route];
        if let Some(next) = route.lanes.get(v.route_pos + 1) {
            if let Some(j) = self.last_on(*next) {
                let l = &world.vehicles[j];
                return LeaderInfo {
                    gap: lane.length - v.offset + l.offset - l.length,
                    speed: l.speed,
                    leader: Leader::Vehicle(l.id),
                };
            }
        }
        LeaderInfo { gap: GAP_SENTINEL, speed: lane.speed_limit, leader: Leader::None }
    }
}

/// Leader of one vehicle, see [`LaneOccupancy::leader`].
pub fn resolve_leader(world: &WorldState, v: &VehicleState, spec: &ScenarioSpec) -> Result<LeaderInfo, SimError> {
    if v.lane >= spec.network.lanes.len() {
        return Err(ScenarioError::UnknownLane(v.lane).into());
    }
    let occ = LaneOccupancy::build(world, spec)?;
    let i = occ.position_of(v.id).ok_or_else(|| SimError::InvalidConfig(String::from("vehicle is not active")))?;
    Ok(occ.leader(world, spec, i))
}

/// One trajectory record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: u64,
    pub time_s: f64,
    pub vehicle_id: VehicleId,
    /// index into [`TrajectoryLog::lanes`]
    pub lane: u32,
    pub offset_m: f64,
    pub speed_mps: f64,
    pub accel_mps2: f64,
    pub leader_id: Option<VehicleId>,
    /// bumper gap to the leader or the red stop line, or [`GAP_SENTINEL`]
    pub gap_m: f64,
}

/// Per-step vehicle records, sorted by (step, vehicle id).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryLog {
    pub lanes: Vec<String>,
    pub rows: Vec<TrajectoryRow>,
    pub violations: u64,
}

impl TrajectoryLog {
    pub fn lane_name(&self, row: &TrajectoryRow) -> &str {
        &self.lanes[row.lane as usize]
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Supervised pairs collected from an oracle rollout.
#[derive(Debug, Clone)]
pub struct TrajectoryDataset {
    pub dci: u64,
    pub batches: Vec<Batch>,
}

/// Snapshot awaiting its targets, with the car node of each vehicle.
type OpenBatch = (Arc<crate::graph::GraphSnapshot>, Vec<(VehicleId, NodeRef)>);

/// Rollout engine bound to a scenario and configuration.
pub struct Simulator<'a> {
    spec: &'a ScenarioSpec,
    cfg: &'a RolloutConfig,
    net: NetworkGraph,
}

impl<'a> Simulator<'a> {
    pub fn new(spec: &'a ScenarioSpec, cfg: &'a RolloutConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        Ok(Self { spec, cfg, net: spec.build_network_graph()? })
    }

    pub fn network(&self) -> &NetworkGraph {
        &self.net
    }

    /// Empty world with departures drawn from the configured seed.
    pub fn initial_world(&self) -> Result<WorldState, SimError> {
        WorldState::new(self.spec, self.spec.spawn_departures(self.cfg.seed))
    }

    /// Advances the world by one step.
    pub fn step(&self, world: &WorldState) -> Result<WorldState, SimError> {
        let spec = self.spec;
        let dt = self.cfg.dt;
        let occ = LaneOccupancy::build(world, spec)?;
        let n = world.vehicles.len();

        let mut holds = world.holds.clone();
        if let Backend::Learned(model) = &self.cfg.backend {
            if world.step.is_multiple_of(self.cfg.dci) {
                holds = self.learned_holds(model, world, &occ)?;
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(world.step);

        let infos: Vec<LeaderInfo> = (0..n).map(|i| occ.leader(world, spec, i)).collect();
        let mut next_speed = vec![0.0; n];
        let mut advance = vec![0.0; n];
        for (i, v) in world.vehicles.iter().enumerate() {
            let info = infos[i];
            let limit = spec.network.lanes[v.lane].speed_limit;
            let noise: f64 = rng.gen();
            if let Some(&vp) = world.pinned.get(&v.id) {
                next_speed[i] = vp;
                advance[i] = vp * dt;
                continue;
            }
            let (vn, adv) = match &self.cfg.backend {
                Backend::Idm => {
                    let p = IdmParams { v0: spec.idm.v0.min(limit), ..spec.idm };
                    let a = idm_accel(v.speed, v.speed - info.speed, info.gap, &p)?;
                    let vn = v.speed + a * dt;
                    if vn < 0.0 {
                        // stops within the step: travel v²/(2|a|)
                        (0.0, -v.speed * v.speed / (2.0 * a))
                    } else {
                        let vn = vn.min(limit);
                        (vn, 0.5 * (v.speed + vn) * dt)
                    }
                }
                Backend::Krauss => {
                    let p = KraussParams { v_max: spec.krauss.v_max.min(limit), ..spec.krauss };
                    let gap = match info.leader {
                        Leader::None => info.gap,
                        _ => (info.gap - p.min_gap).max(0.0),
                    };
                    let vn = krauss_next_speed(v.speed, info.speed, gap, &p, dt, noise);
                    (vn, vn * dt)
                }
                Backend::Learned(_) => {
                    let hold = holds.get(&v.id).copied().unwrap_or(0.0);
                    let vn = (v.speed + hold * dt).clamp(0.0, limit);
                    (vn, vn * dt)
                }
            };
            next_speed[i] = vn;
            advance[i] = adv;
        }

        // enforce clearance to leaders and red stop lines, front to back
        let mut violations = world.violations;
        let mut done = vec![false; n];
        let mut stack = Vec::new();
        for start in 0..n {
            let mut cur = start;
            while !done[cur] {
                stack.push(cur);
                match infos[cur].leader {
                    Leader::Vehicle(id) => {
                        let j = occ.position_of(id).expect("leader is active");
                        if done[j] {
                            break;
                        }
                        cur = j;
                    }
                    _ => break,
                }
            }
            while let Some(i) = stack.pop() {
                let room = match infos[i].leader {
                    Leader::Vehicle(id) => {
                        let j = occ.position_of(id).expect("leader is active");
                        let v = &world.vehicles[i];
                        let l = &world.vehicles[j];
                        let base = if l.lane == v.lane { 0.0 } else { spec.network.lanes[v.lane].length };
                        base + l.offset + advance[j] - l.length - MIN_CLEARANCE - v.offset
                    }
                    // red stop line
                    Leader::Virtual => infos[i].gap - MIN_CLEARANCE,
                    Leader::None => f64::INFINITY,
                };
                if advance[i] > room {
                    violations += 1;
                    advance[i] = room.max(0.0);
                    next_speed[i] = next_speed[i].min(advance[i] / dt);
                }
                done[i] = true;
            }
        }

        let mut vehicles = Vec::with_capacity(n + 4);
        let mut exited = world.exited;
        for (i, v) in world.vehicles.iter().enumerate() {
            let route = &spec.demand.routes[v.route];
            let mut nv = v.clone();
            nv.accel = (next_speed[i] - v.speed) / dt;
            nv.speed = next_speed[i];
            nv.offset += advance[i];
            let mut gone = false;
            while nv.offset > spec.network.lanes[nv.lane].length {
                if nv.route_pos + 1 < route.lanes.len() {
                    nv.offset -= spec.network.lanes[nv.lane].length;
                    nv.route_pos += 1;
                    nv.lane = route.lanes[nv.route_pos];
                } else {
                    gone = true;
                    break;
                }
            }
            if gone {
                exited += 1;
                holds.remove(&v.id);
            } else {
                vehicles.push(nv);
            }
        }

        let step = world.step + 1;
        let mut entered = world.entered;
        let mut pending = Vec::with_capacity(world.pending.len());
        // rear bumper of the rearmost vehicle per lane
        let mut rear: BTreeMap<LaneId, f64> = BTreeMap::new();
        for v in &vehicles {
            let r = v.offset - v.length;
            rear.entry(v.lane).and_modify(|x| *x = x.min(r)).or_insert(r);
        }
        let mut blocked: BTreeSet<LaneId> = BTreeSet::new();
        for d in &world.pending {
            if d.step > step {
                pending.push(*d);
                continue;
            }
            let lane = spec.demand.routes[d.route].lanes[0];
            let clear = rear.get(&lane).is_none_or(|r| *r >= spec.idm.s0);
            if blocked.contains(&lane) || !clear {
                blocked.insert(lane);
                pending.push(*d);
                continue;
            }
            let length = spec.demand.vehicle_length;
            rear.insert(lane, -length);
            entered += 1;
            let nv = VehicleState {
                id: d.vehicle,
                lane,
                offset: 0.0,
                speed: 0.0,
                accel: 0.0,
                route: d.route,
                route_pos: 0,
                length,
            };
            let at = vehicles.partition_point(|v| v.id < nv.id);
            vehicles.insert(at, nv);
        }

        let t = step as f64 * dt;
        let phases = spec.signals.iter().map(|s| signal_phase(s, t)).collect::<Result<Vec<_>, _>>()?;

        Ok(WorldState { step, vehicles, pending, phases, entered, exited, violations, holds, pinned: world.pinned.clone() })
    }

    fn learned_holds(
        &self,
        model: &ModelParams,
        world: &WorldState,
        occ: &LaneOccupancy,
    ) -> Result<BTreeMap<VehicleId, f64>, SimError> {
        let mut holds = BTreeMap::new();
        if world.vehicles.is_empty() {
            return Ok(holds);
        }
        let enc = self.spec.world_to_graph_with(world, &self.net, occ)?;
        let preds = model_forward(model, &enc.snapshot)?;
        let horizon = self.cfg.dci as f64 * self.cfg.dt;
        for ((id, node), v) in enc.cars.iter().zip(&world.vehicles) {
            let limit = self.spec.network.lanes[v.lane].speed_limit;
            let p = preds.get(node).and_then(|p| p.first()).copied().unwrap_or(0.0);
            let target = (p * self.spec.normalization.v_ref).clamp(0.0, limit);
            holds.insert(*id, (target - v.speed) / horizon);
        }
        Ok(holds)
    }

    /// Appends one row per active vehicle of `world` to `log`.
    pub fn record(&self, world: &WorldState, log: &mut TrajectoryLog) -> Result<(), SimError> {
        if log.lanes.is_empty() {
            log.lanes = self.spec.network.lanes.iter().map(|l| l.id.clone()).collect();
        }
        let occ = LaneOccupancy::build(world, self.spec)?;
        for (i, v) in world.vehicles.iter().enumerate() {
            let info = occ.leader(world, self.spec, i);
            log.rows.push(TrajectoryRow {
                step: world.step,
                time_s: world.step as f64 * self.cfg.dt,
                vehicle_id: v.id,
                lane: v.lane as u32,
                offset_m: v.offset,
                speed_mps: v.speed,
                accel_mps2: v.accel,
                leader_id: match info.leader {
                    Leader::Vehicle(id) => Some(id),
                    _ => None,
                },
                gap_m: info.gap,
            });
        }
        log.violations = world.violations;
        Ok(())
    }

    /// Runs the configured horizon from an empty world.
    pub fn run(&self) -> Result<TrajectoryLog, SimError> {
        let mut log = TrajectoryLog {
            lanes: self.spec.network.lanes.iter().map(|l| l.id.clone()).collect(),
            ..TrajectoryLog::default()
        };
        let mut world = self.initial_world()?;
        for _ in 0..self.cfg.horizon {
            world = self.step(&world)?;
            self.record(&world, &mut log)?;
        }
        Ok(log)
    }

    /// Oracle rollout turned into supervised pairs: the graph at step
    /// `k * dci` with every car's normalized speed at `(k + 1) * dci` as the
    /// target. Cars gone by then are masked.
    pub fn collect_dataset(&self) -> Result<TrajectoryDataset, SimError> {
        if !self.cfg.backend.is_oracle() {
            return Err(SimError::NotOracle);
        }
        let dci = self.cfg.dci;
        if self.cfg.horizon < dci {
            return Err(SimError::EmptyDataset { horizon: self.cfg.horizon, dci });
        }
        let v_ref = self.spec.normalization.v_ref;
        let mut batches = Vec::new();
        let mut open: Option<OpenBatch> = None;
        let mut world = self.initial_world()?;
        loop {
            if world.step.is_multiple_of(dci) {
                if let Some((graph, cars)) = open.take() {
                    let mut targets = BTreeMap::new();
                    let mut mask = BTreeSet::new();
                    for (id, node) in cars {
                        match world.vehicle(id) {
                            Some(v) => {
                                targets.insert(node, vec![v.speed / v_ref]);
                            }
                            None => {
                                mask.insert(node);
                            }
                        }
                    }
                    batches.push(Batch { graph, targets, mask });
                }
                if world.step + dci <= self.cfg.horizon {
                    let enc = self.spec.world_to_graph(&world, &self.net)?;
                    open = Some((Arc::new(enc.snapshot), enc.cars));
                }
            }
            if world.step >= self.cfg.horizon {
                break;
            }
            world = self.step(&world)?;
        }
        Ok(TrajectoryDataset { dci, batches })
    }
}

/// One transition with a freshly built simulator.
pub fn step(world: &WorldState, cfg: &RolloutConfig, spec: &ScenarioSpec) -> Result<WorldState, SimError> {
    Simulator::new(spec, cfg)?.step(world)
}

pub fn run(spec: &ScenarioSpec, cfg: &RolloutConfig) -> Result<TrajectoryLog, SimError> {
    Simulator::new(spec, cfg)?.run()
}

pub fn collect_dataset(spec: &ScenarioSpec, cfg: &RolloutConfig) -> Result<TrajectoryDataset, SimError> {
    Simulator::new(spec, cfg)?.collect_dataset()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{car, line_def, signal_def, spec};

    fn cfg(backend: Backend, s: &ScenarioSpec, horizon: u64) -> RolloutConfig {
        RolloutConfig::new(backend, s, horizon, 0)
    }

    fn world(s: &ScenarioSpec, vehicles: Vec<VehicleState>) -> WorldState {
        let mut w = WorldState::new(s, Vec::new()).unwrap();
        w.vehicles = vehicles;
        w
    }

    /// Model whose speed prediction is the car's current normalized speed.
    fn echo_model(s: &ScenarioSpec, bias: f64) -> Arc<ModelParams> {
        let cfg = crate::hgt::ModelConfig { hidden: 4, heads: 1, layers: 1, ..Default::default() };
        let mut m = ModelParams::new(cfg, Arc::clone(s.schema())).unwrap();
        m.values_mut().iter_mut().for_each(|x| *x = 0.0);
        m.tensor_mut("embed.car.weight").unwrap()[0] = 1.0;
        m.tensor_mut("readout.weight").unwrap()[0] = 1.0;
        m.tensor_mut("readout.bias").unwrap()[0] = bias;
        Arc::new(m)
    }

    #[test]
    fn leader_on_same_lane() {
        let s = spec(line_def(2));
        let w = world(&s, vec![car(0, 0, 50.0, 7.0), car(1, 0, 10.0, 3.0)]);
        let info = resolve_leader(&w, &w.vehicles[1], &s).unwrap();
        assert_eq!(info, LeaderInfo { gap: 35.0, speed: 7.0, leader: Leader::Vehicle(0) });
    }

    #[test]
    fn red_stop_line_is_virtual_leader() {
        let s = spec(signal_def(1));
        let w = world(&s, vec![car(0, 0, 80.0, 7.0)]);
        let info = resolve_leader(&w, &w.vehicles[0], &s).unwrap();
        assert_eq!(info, LeaderInfo { gap: 20.0, speed: 0.0, leader: Leader::Virtual });
    }

    #[test]
    fn green_gives_sentinel() {
        let s = spec(signal_def(1));
        let mut w = world(&s, vec![car(0, 0, 80.0, 7.0)]);
        w.phases[0] = signal_phase(&s.signals[0], 30.0).unwrap();
        let info = resolve_leader(&w, &w.vehicles[0], &s).unwrap();
        assert_eq!(info.gap, GAP_SENTINEL);
        assert_eq!(info.leader, Leader::None);
    }

    #[test]
    fn leader_on_next_route_lane() {
        let s = spec(line_def(2));
        let w = world(&s, vec![car(0, 1, 20.0, 7.0), car(1, 0, 90.0, 3.0)]);
        let info = resolve_leader(&w, &w.vehicles[1], &s).unwrap();
        assert_eq!(info.gap, 10.0 + 20.0 - 5.0);
        assert_eq!(info.leader, Leader::Vehicle(0));
    }

    #[test]
    fn resolve_leader_checks_lane() {
        let s = spec(line_def(1));
        let w = world(&s, vec![car(0, 0, 1.0, 0.0)]);
        let ghost = car(0, 9, 1.0, 0.0);
        assert_eq!(resolve_leader(&w, &ghost, &s).unwrap_err(), SimError::Scenario(ScenarioError::UnknownLane(9)));
    }

    #[test]
    fn idm_single_vehicle_from_rest() {
        let s = spec(line_def(1));
        let c = cfg(Backend::Idm, &s, 1);
        let next = step(&world(&s, vec![car(0, 0, 0.0, 0.0)]), &c, &s).unwrap();
        let v = &next.vehicles[0];
        // the sentinel gap leaves a 4e-12 interaction term
        assert!((v.speed - 1.0).abs() < 1e-9);
        assert!((v.offset - 0.5).abs() < 1e-9);
        assert!((v.accel - 1.0).abs() < 1e-9);
        assert_eq!(next.step, 1);
    }

    #[test]
    fn empty_world_only_advances_step() {
        let s = spec(line_def(0));
        let w = WorldState::new(&s, Vec::new()).unwrap();
        let next = step(&w, &cfg(Backend::Krauss, &s, 1), &s).unwrap();
        assert_eq!(next, WorldState { step: 1, ..w });
    }

    #[test]
    fn echo_model_keeps_speeds() {
        let s = spec(line_def(2));
        let c = cfg(Backend::Learned(echo_model(&s, 0.0)), &s, 1);
        let w = world(&s, vec![car(0, 0, 60.0, 6.0), car(1, 0, 20.0, 3.0)]);
        let next = step(&w, &c, &s).unwrap();
        assert_eq!(next.vehicles[0].speed, 6.0);
        assert_eq!(next.vehicles[1].speed, 3.0);
        assert_eq!(next.vehicles[0].offset, 66.0);
        assert_eq!(next.vehicles[1].offset, 23.0);
        assert_eq!(next.violations, 0);
    }

    #[test]
    fn learned_collisions_are_clamped_and_counted() {
        let s = spec(line_def(2));
        // always predicts 1.0 above the current normalized speed
        let c = cfg(Backend::Learned(echo_model(&s, 1.0)), &s, 5);
        let mut w = world(&s, vec![car(0, 0, 30.0, 0.0), car(1, 0, 10.0, 0.0)]);
        w.pinned.insert(0, 0.0);
        for _ in 0..5 {
            w = step(&w, &c, &s).unwrap();
            let gap = w.vehicles[0].offset - w.vehicles[1].offset - 5.0;
            assert!(gap >= MIN_CLEARANCE - 1e-12, "{gap}");
        }
        assert!(w.violations > 0);
        assert_eq!(w.vehicles[0].offset, 30.0);
    }

    #[test]
    fn red_light_holds_learned_cars() {
        let s = spec(signal_def(1));
        let c = cfg(Backend::Learned(echo_model(&s, 1.0)), &s, 1);
        let mut w = world(&s, vec![car(0, 0, 90.0, 10.0)]);
        for _ in 0..3 {
            w = step(&w, &c, &s).unwrap();
        }
        assert!(w.vehicles[0].offset <= 100.0 - MIN_CLEARANCE + 1e-12);
        assert_eq!(w.vehicles[0].lane, 0);
    }

    #[test]
    fn learned_hold_persists_between_updates() {
        let s = spec(line_def(1));
        let c = cfg(Backend::Learned(echo_model(&s, 0.1)), &s, 4).with_dci(4);
        let mut w = world(&s, vec![car(0, 0, 0.0, 3.0)]);
        let mut speeds = Vec::new();
        for _ in 0..4 {
            w = step(&w, &c, &s).unwrap();
            speeds.push(w.vehicles[0].speed);
        }
        // target 3 + 1.5 reached over the 4 held steps
        for (k, v) in speeds.iter().enumerate() {
            assert!((v - (3.0 + 1.5 * (k + 1) as f64 / 4.0)).abs() < 1e-12, "{speeds:?}");
        }
    }

    #[test]
    fn horizon_zero_gives_empty_log() {
        let s = spec(line_def(3));
        assert!(run(&s, &cfg(Backend::Idm, &s, 0)).unwrap().is_empty());
    }

    #[test]
    fn empty_demand_gives_empty_log() {
        let s = spec(line_def(0));
        assert!(run(&s, &cfg(Backend::Krauss, &s, 50)).unwrap().is_empty());
    }

    #[test]
    fn dataset_pair_counts() {
        let s = spec(line_def(10));
        for (horizon, dci, pairs) in [(100, 5, 20), (100, 10, 10), (7, 5, 1)] {
            let d = collect_dataset(&s, &cfg(Backend::Krauss, &s, horizon).with_dci(dci)).unwrap();
            assert_eq!(d.batches.len(), pairs, "horizon {horizon} dci {dci}");
            for (k, b) in d.batches.iter().enumerate() {
                assert_eq!(b.graph.timestamp(), k as u64 * dci);
            }
        }
        let err = collect_dataset(&s, &cfg(Backend::Krauss, &s, 3).with_dci(5)).unwrap_err();
        assert_eq!(err, SimError::EmptyDataset { horizon: 3, dci: 5 });
        let learned = cfg(Backend::Learned(echo_model(&s, 0.0)), &s, 10);
        assert_eq!(collect_dataset(&s, &learned).unwrap_err(), SimError::NotOracle);
    }

    #[test]
    fn dataset_targets_are_next_speeds() {
        let s = spec(line_def(4));
        let c = cfg(Backend::Idm, &s, 40).with_dci(2);
        let d = collect_dataset(&s, &c).unwrap();
        let log = run(&s, &c).unwrap();
        let b = &d.batches[5];
        let car_kind = crate::scenario::car_kind(b.graph.schema());
        let cars: Vec<_> = b.graph.nodes().filter(|n| n.kind == car_kind).collect();
        assert_eq!(cars.len(), b.targets.len() + b.mask.len());
        // cars enter in id order, so the k-th car node is vehicle k
        for (i, n) in cars.iter().enumerate() {
            let row = log.rows.iter().find(|r| r.step == 12 && r.vehicle_id == i as u32).unwrap();
            assert_eq!(b.targets[&n.id][0], row.speed_mps / 15.0);
        }
    }

    #[test]
    fn exited_cars_are_masked() {
        let s = spec(line_def(1));
        let c = cfg(Backend::Krauss, &s, 60).with_dci(10);
        let d = collect_dataset(&s, &c).unwrap();
        assert!(d.batches.iter().any(|b| !b.mask.is_empty()));
        for b in &d.batches {
            assert!(b.mask.iter().all(|m| !b.targets.contains_key(m)));
        }
    }

    #[test]
    fn pinned_vehicle_ignores_backend() {
        let s = spec(line_def(1));
        let c = cfg(Backend::Idm, &s, 1);
        let mut w = world(&s, vec![car(0, 0, 0.0, 0.0)]);
        w.pinned.insert(0, 4.0);
        let next = step(&w, &c, &s).unwrap();
        assert_eq!((next.vehicles[0].speed, next.vehicles[0].offset), (4.0, 4.0));
    }

    #[test]
    fn blocked_departures_are_deferred() {
        let mut def = line_def(4);
        def.demand.headway = 0.0;
        let s = spec(def);
        let c = cfg(Backend::Krauss, &s, 200);
        let mut w = Simulator::new(&s, &c).unwrap().initial_world().unwrap();
        w = step(&w, &c, &s).unwrap();
        assert_eq!((w.entered, w.pending.len()), (1, 3));
        for _ in 0..199 {
            w = step(&w, &c, &s).unwrap();
        }
        assert_eq!(w.entered, 4);
    }

    fn check_rollout(backend: Backend) {
        let mut def = signal_def(40);
        def.demand.headway = 3.0;
        let s = spec(def);
        let c = cfg(backend, &s, 400);
        let sim = Simulator::new(&s, &c).unwrap();
        let mut w = sim.initial_world().unwrap();
        let mut log = TrajectoryLog::default();
        for _ in 0..c.horizon {
            w = sim.step(&w).unwrap();
            assert_eq!(w.entered, w.vehicles.len() as u64 + w.exited);
            sim.record(&w, &mut log).unwrap();
        }
        assert_eq!(w.violations, 0);
        assert!(w.exited > 0);
        for r in &log.rows {
            assert!((0.0..=15.0 + 1e-9).contains(&r.speed_mps), "{r:?}");
            if r.leader_id.is_some() {
                assert!(r.gap_m > 0.0, "{r:?}");
            }
        }
        assert!(log.rows.windows(2).all(|p| (p[0].step, p[0].vehicle_id) < (p[1].step, p[1].vehicle_id)));
        assert_eq!(log, run(&s, &c).unwrap());
    }

    #[test]
    fn idm_rollout_is_safe() {
        check_rollout(Backend::Idm);
    }

    #[test]
    fn krauss_rollout_is_safe() {
        check_rollout(Backend::Krauss);
    }

    #[test]
    fn noisy_krauss_depends_on_seed() {
        let mut def = line_def(10);
        def.krauss.sigma = 0.5;
        let s = spec(def);
        let a = run(&s, &RolloutConfig::new(Backend::Krauss, &s, 100, 1)).unwrap();
        let b = run(&s, &RolloutConfig::new(Backend::Krauss, &s, 100, 1)).unwrap();
        let c = run(&s, &RolloutConfig::new(Backend::Krauss, &s, 100, 2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn config_checked() {
        let s = spec(line_def(1));
        let bad = cfg(Backend::Idm, &s, 10).with_dci(0);
        assert!(matches!(run(&s, &bad), Err(SimError::InvalidConfig(_))));
        let mut bad = cfg(Backend::Idm, &s, 10);
        bad.dt = 0.0;
        assert!(matches!(run(&s, &bad), Err(SimError::InvalidConfig(_))));
    }
}
