//! Small scenarios shared by the unit tests.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::oracles::{IdmParams, KraussParams};
use crate::scenario::*;
use crate::sim::VehicleState;

pub fn road(id: &str, from: &str, to: &str, length: f64, lanes: usize) -> RoadDef {
    RoadDef { id: id.into(), from: from.into(), to: to.into(), length, lanes, speed_limit: 15.0 }
}

fn junction(id: &str, x: f64) -> JunctionDef {
    JunctionDef { id: id.into(), x, y: 0.0 }
}

fn pair(a: &str, b: &str) -> (String, String) {
    (a.to_string(), b.to_string())
}

/// Two 100 m single-lane roads in a row, one route over both.
pub fn line_def(count: usize) -> ScenarioDef {
    ScenarioDef {
        network: NetworkDef {
            roads: vec![road("a", "J0", "J1", 100.0, 1), road("b", "J1", "J2", 100.0, 1)],
            junctions: vec![junction("J0", -100.0), junction("J1", 0.0), junction("J2", 100.0)],
            connections: vec![ConnectionDef { from: "a_0".into(), to: "b_0".into(), movement: Movement::Straight }],
            stop_line_offset: 0.0,
        },
        signals: Vec::new(),
        demand: DemandDef {
            count,
            start: 0,
            headway: 2.0,
            vehicle_length: 5.0,
            routes: vec![RouteDef { lanes: vec!["a_0".into(), "b_0".into()], weight: 1.0 }],
        },
        dt: 1.0,
        normalization: Normalization::default(),
        idm: IdmParams::default(),
        krauss: KraussParams::default(),
    }
}

/// [`line_def`] with a signal at J1 that is red for the first 30 s of a
/// 60 s cycle.
pub fn signal_def(count: usize) -> ScenarioDef {
    let mut def = line_def(count);
    def.signals = vec![SignalDef {
        id: "tl".into(),
        junction: "J1".into(),
        controlled: vec![pair("a_0", "b_0")],
        phases: vec![
            PhaseDef { green: Vec::new(), duration: 30.0 },
            PhaseDef { green: vec![pair("a_0", "b_0")], duration: 30.0 },
        ],
    }];
    def
}

pub fn spec(def: ScenarioDef) -> ScenarioSpec {
    ScenarioSpec::from_def(def).unwrap()
}

pub fn car(id: u32, lane: usize, offset: f64, speed: f64) -> VehicleState {
    VehicleState { id, lane, offset, speed, accel: 0.0, route: 0, route_pos: lane, length: 5.0 }
}
