use std::fmt::Write as _;
use std::path::Path;

use tgsim_core::sim::{TrajectoryRow, GAP_SENTINEL};
use tgsim_core::TrajectoryLog;

use super::{read_text, write_text, FormatError};

pub const CSV_HEADER: &str = "step,time_s,vehicle_id,lane_id,offset_m,speed_mps,accel_mps2,leader_id,gap_m";

pub fn trajectory_to_csv(log: &TrajectoryLog) -> String {
    let mut s = String::with_capacity(64 * (log.rows.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in &log.rows {
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},",
            r.step,
            r.time_s,
            r.vehicle_id,
            log.lane_name(r),
            r.offset_m,
            r.speed_mps,
            r.accel_mps2
        );
        if let Some(l) = r.leader_id {
            let _ = write!(s, "{l}");
        }
        if r.gap_m == GAP_SENTINEL {
            s.push_str(",1e6\n");
        } else {
            let _ = writeln!(s, ",{}", r.gap_m);
        }
    }
    s
}

/// Parses a trajectory CSV. The violation counter is not part of the
/// format and comes back as zero.
pub fn trajectory_from_csv(text: &str) -> Result<TrajectoryLog, FormatError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == CSV_HEADER => {}
        _ => return Err(FormatError::Csv { line: 1, msg: format!("expected header '{CSV_HEADER}'") }),
    }
    let mut log = TrajectoryLog::default();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| FormatError::Csv { line: line_no, msg };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(err(format!("expected 9 columns, found {}", cols.len())));
        }
        fn num<T: std::str::FromStr>(s: &str, name: &str, line: usize) -> Result<T, FormatError> {
            s.trim().parse().map_err(|_| FormatError::Csv { line, msg: format!("bad {name} '{s}'") })
        }
        let lane = match log.lanes.iter().position(|l| l == cols[3]) {
            Some(p) => p,
            None => {
                log.lanes.push(cols[3].to_string());
                log.lanes.len() - 1
            }
        };
        log.rows.push(TrajectoryRow {
            step: num(cols[0], "step", line_no)?,
            time_s: num(cols[1], "time_s", line_no)?,
            vehicle_id: num(cols[2], "vehicle_id", line_no)?,
            lane: lane as u32,
            offset_m: num(cols[4], "offset_m", line_no)?,
            speed_mps: num(cols[5], "speed_mps", line_no)?,
            accel_mps2: num(cols[6], "accel_mps2", line_no)?,
            leader_id: if cols[7].is_empty() { None } else { Some(num(cols[7], "leader_id", line_no)?) },
            gap_m: num(cols[8], "gap_m", line_no)?,
        });
    }
    Ok(log)
}

pub fn read_trajectory(path: &Path) -> Result<TrajectoryLog, FormatError> {
    trajectory_from_csv(&read_text(path)?).map_err(|e| match e {
        FormatError::Csv { line, msg } => FormatError::Csv { line, msg: format!("{}: {msg}", path.display()) },
        other => other,
    })
}

pub fn write_trajectory(path: &Path, log: &TrajectoryLog) -> Result<(), FormatError> {
    write_text(path, &trajectory_to_csv(log))
}
