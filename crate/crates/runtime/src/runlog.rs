//! Newline-delimited JSON run logs and their CSV export.
//!
//! The first line is a header naming the agents; every following line is one agent's
//! record for one control step.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use formation_core::dynamics::{RigidBodyState, StateVector, Wrench};
use formation_core::math::{quat_angle_between, quat_yaw};
use formation_core::nmpc::{AgentRole, SolveStatus};
use formation_core::sim::{RunRecord, ScenarioConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowerSlot {
    pub ns: String,
    pub leader: String,
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub agents: Vec<String>,
    pub control_period_ns: i64,
    #[serde(default)]
    pub followers: Vec<FollowerSlot>,
}

impl LogHeader {
    pub fn for_scenario(config: &ScenarioConfig) -> Self {
        Self {
            agents: config.agents.iter().map(|a| a.ns.clone()).collect(),
            control_period_ns: config.control_period_ns(),
            followers: config
                .agents
                .iter()
                .filter_map(|a| match &a.role {
                    AgentRole::Follower { leader_id, offset } => Some(FollowerSlot {
                        ns: a.ns.clone(),
                        leader: leader_id.clone(),
                        offset: offset.dp.into(),
                    }),
                    AgentRole::Leader { .. } => None,
                })
                .collect(),
        }
    }
}

/// One logged control step. States are `[p_h, v_h, q_hb (w, x, y, z), omega_b]`, wrenches
/// `[F_b, tau_b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t_ns: i64,
    pub ns: String,
    pub state: [f64; 13],
    pub reference: [f64; 13],
    pub cmd: [f64; 6],
    pub achieved_wrench: [f64; 6],
    pub thr_on_times: Vec<f64>,
    pub iterations: usize,
    pub status: String,
    pub degraded: bool,
}

pub fn status_str(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Converged => "converged",
        SolveStatus::MaxIter => "max_iter",
        SolveStatus::Infeasible => "infeasible",
    }
}

fn state_array(s: &RigidBodyState) -> [f64; 13] {
    s.to_vector().into()
}

fn wrench_array(w: &Wrench) -> [f64; 6] {
    w.to_vector().into()
}

impl LogRecord {
    pub fn state(&self) -> RigidBodyState {
        RigidBodyState::from_vector(&StateVector::from(self.state))
    }

    pub fn reference(&self) -> RigidBodyState {
        RigidBodyState::from_vector(&StateVector::from(self.reference))
    }
}

impl From<&RunRecord> for LogRecord {
    fn from(r: &RunRecord) -> Self {
        Self {
            t_ns: r.t_ns,
            ns: r.ns.clone(),
            state: state_array(&r.state),
            reference: state_array(&r.reference),
            cmd: wrench_array(&r.cmd),
            achieved_wrench: wrench_array(&r.achieved_wrench),
            thr_on_times: r.thr_on_times.clone(),
            iterations: r.iterations,
            status: status_str(r.status).into(),
            degraded: r.degraded,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Header(LogHeader),
    Step(LogRecord),
}

pub struct LogWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl LogWriter {
    pub fn create(path: &Path, header: &LogHeader) -> Result<Self, LogError> {
        let io_err = |source| LogError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err)?;
        }
        let mut w = Self {
            out: BufWriter::new(File::create(path).map_err(io_err)?),
            path: path.to_path_buf(),
        };
        w.line(&Line::Header(header.clone()))?;
        Ok(w)
    }

    fn line(&mut self, line: &Line) -> Result<(), LogError> {
        let io_err = |source| LogError::Io {
            path: self.path.display().to_string(),
            source,
        };
        serde_json::to_writer(&mut self.out, line).map_err(|e| io_err(e.into()))?;
        self.out.write_all(b"\n").map_err(io_err)
    }

    pub fn write(&mut self, record: &LogRecord) -> Result<(), LogError> {
        // Serializing by reference would need a borrowed twin of `Line`; records are small.
        self.line(&Line::Step(record.clone()))
    }

    pub fn finish(mut self) -> Result<(), LogError> {
        self.out.flush().map_err(|source| LogError::Io {
            path: self.path.display().to_string(),
            source,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: LogHeader,
    pub records: Vec<LogRecord>,
}

impl RunLog {
    pub fn read(path: &Path) -> Result<Self, LogError> {
        let name = path.display().to_string();
        let file = File::open(path).map_err(|source| LogError::Io {
            path: name.clone(),
            source,
        })?;
        Self::from_reader(BufReader::new(file), &name)
    }

    pub fn from_reader(reader: impl BufRead, name: &str) -> Result<Self, LogError> {
        let corrupt = |line: usize, message: String| LogError::Corrupt {
            path: name.to_string(),
            line,
            message,
        };
        let mut header = None;
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let n = i + 1;
            let line = line.map_err(|e| corrupt(n, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Line>(&line).map_err(|e| corrupt(n, e.to_string()))? {
                Line::Header(h) if header.is_none() && records.is_empty() => header = Some(h),
                Line::Header(_) => return Err(corrupt(n, "unexpected second header".into())),
                Line::Step(r) => {
                    let Some(h) = &header else {
                        return Err(corrupt(n, "record before header".into()));
                    };
                    if !h.agents.contains(&r.ns) {
                        return Err(corrupt(n, format!("record for undeclared agent '{}'", r.ns)));
                    }
                    records.push(r);
                }
            }
        }
        let header = header.ok_or_else(|| corrupt(1, "missing header".into()))?;
        Ok(Self { header, records })
    }

    pub fn agent_records(&self, ns: &str) -> impl Iterator<Item = &LogRecord> {
        let ns = ns.to_string();
        self.records.iter().filter(move |r| r.ns == ns)
    }

    /// Follower formation errors `(ns, t_ns, error_m)` against the leader's logged position.
    pub fn formation_errors(&self) -> Vec<(String, i64, f64)> {
        let mut leader_at: BTreeMap<(&str, i64), &LogRecord> = BTreeMap::new();
        for r in &self.records {
            leader_at.insert((r.ns.as_str(), r.t_ns), r);
        }
        let mut out = Vec::new();
        for slot in &self.header.followers {
            for r in self.agent_records(&slot.ns) {
                if let Some(l) = leader_at.get(&(slot.leader.as_str(), r.t_ns)) {
                    let d = r.state().p_h - l.state().p_h - formation_core::math::Vec3::from(slot.offset);
                    out.push((slot.ns.clone(), r.t_ns, d.norm()));
                }
            }
        }
        out
    }
}

pub const CSV_HEADER: &str = "t_s,x_m,y_m,z_m,x_ref_m,y_ref_m,z_ref_m,yaw_deg,yaw_ref_deg,att_err_deg,\
fx_cmd_n,fy_cmd_n,fz_cmd_n,tx_cmd_nm,ty_cmd_nm,tz_cmd_nm,iterations,status,degraded";

fn csv_row(r: &LogRecord) -> String {
    let (s, rf) = (r.state(), r.reference());
    let mut cols: Vec<String> = Vec::with_capacity(19);
    cols.push(format!("{}", r.t_ns as f64 * 1e-9));
    cols.extend(s.p_h.iter().chain(rf.p_h.iter()).map(|v| format!("{v}")));
    cols.push(format!("{}", quat_yaw(&s.q_hb).to_degrees()));
    cols.push(format!("{}", quat_yaw(&rf.q_hb).to_degrees()));
    cols.push(format!("{}", quat_angle_between(&s.q_hb, &rf.q_hb).to_degrees()));
    cols.extend(r.cmd.iter().map(|v| format!("{v}")));
    cols.push(r.iterations.to_string());
    cols.push(r.status.clone());
    cols.push(u8::from(r.degraded).to_string());
    cols.join(",")
}

/// Writes one `<ns>.csv` per agent into `out_dir`; returns the files written.
pub fn export_csv(log: &RunLog, out_dir: &Path) -> Result<Vec<PathBuf>, LogError> {
    let io_err = |path: &Path, source| LogError::Io {
        path: path.display().to_string(),
        source,
    };
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let mut written = Vec::new();
    for ns in &log.header.agents {
        let path = out_dir.join(format!("{ns}.csv"));
        let mut w = BufWriter::new(File::create(&path).map_err(|e| io_err(&path, e))?);
        writeln!(w, "{CSV_HEADER}").map_err(|e| io_err(&path, e))?;
        for r in log.agent_records(ns) {
            writeln!(w, "{}", csv_row(r)).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
