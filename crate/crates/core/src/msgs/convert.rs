//! Conversions between domain types and the built-in message set.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{FieldIssue, IssueKind, Issues, MessageValue, MsgError, Value};
use crate::dynamics::{RigidBodyState, STATE_DIM};
use crate::math::{quat, Vec3};

fn mismatch(path: &str, expected: &str) -> MsgError {
    MsgError::SchemaMismatch(Issues(alloc::vec![FieldIssue {
        path: path.to_string(),
        kind: IssueKind::WrongType {
            expected: expected.to_string(),
        },
    }]))
}

fn floats<const N: usize>(msg: &MessageValue, name: &str) -> Result<[f64; N], MsgError> {
    let v = msg
        .get(name)
        .and_then(Value::to_f64_vec)
        .ok_or_else(|| mismatch(name, "f64 array"))?;
    v.try_into().map_err(|_| mismatch(name, "fixed-length f64 array"))
}

fn int(msg: &MessageValue, name: &str) -> Result<i64, MsgError> {
    msg.get(name)
        .and_then(Value::as_i64)
        .ok_or_else(|| mismatch(name, "integer"))
}

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn expect_schema(msg: &MessageValue, name: &str) -> Result<(), MsgError> {
    if msg.schema == name {
        Ok(())
    } else {
        Err(mismatch("<root>", name))
    }
}

pub fn sc_states(state: &RigidBodyState, stamp_ns: i64) -> MessageValue {
    let q = &state.q_hb;
    MessageValue::new("SCStates")
        .with("p_h", Value::f64_array(state.p_h.as_slice()))
        .with("v_h", Value::f64_array(state.v_h.as_slice()))
        .with("q_hb", Value::f64_array(&[q.w, q.i, q.j, q.k]))
        .with("omega_b", Value::f64_array(state.omega_b.as_slice()))
        .with("stamp_ns", Value::I64(stamp_ns))
}

pub fn sc_states_from(msg: &MessageValue) -> Result<(RigidBodyState, i64), MsgError> {
    expect_schema(msg, "SCStates")?;
    let q = floats::<4>(msg, "q_hb")?;
    Ok((
        RigidBodyState {
            p_h: vec3(floats(msg, "p_h")?),
            v_h: vec3(floats(msg, "v_h")?),
            q_hb: quat(q[0], q[1], q[2], q[3]),
            omega_b: vec3(floats(msg, "omega_b")?),
        },
        int(msg, "stamp_ns")?,
    ))
}

pub fn cmd_force(force_b: &Vec3, stamp_ns: i64) -> MessageValue {
    MessageValue::new("CmdForce")
        .with("force_b", Value::f64_array(force_b.as_slice()))
        .with("stamp_ns", Value::I64(stamp_ns))
}

pub fn cmd_force_from(msg: &MessageValue) -> Result<(Vec3, i64), MsgError> {
    expect_schema(msg, "CmdForce")?;
    Ok((vec3(floats(msg, "force_b")?), int(msg, "stamp_ns")?))
}

pub fn cmd_torque(torque_b: &Vec3, stamp_ns: i64) -> MessageValue {
    MessageValue::new("CmdTorque")
        .with("torque_b", Value::f64_array(torque_b.as_slice()))
        .with("stamp_ns", Value::I64(stamp_ns))
}

pub fn cmd_torque_from(msg: &MessageValue) -> Result<(Vec3, i64), MsgError> {
    expect_schema(msg, "CmdTorque")?;
    Ok((vec3(floats(msg, "torque_b")?), int(msg, "stamp_ns")?))
}

pub fn thr_on_time(on_times: &[f64], stamp_ns: i64) -> MessageValue {
    MessageValue::new("ThrOnTime")
        .with("on_time", Value::f64_array(on_times))
        .with("stamp_ns", Value::I64(stamp_ns))
}

pub fn clock(sim_ns: i64) -> MessageValue {
    MessageValue::new("Clock").with("sim_ns", Value::I64(sim_ns))
}

pub fn clock_from(msg: &MessageValue) -> Result<i64, MsgError> {
    expect_schema(msg, "Clock")?;
    int(msg, "sim_ns")
}

pub fn heartbeat(sender: &str, counter: i64) -> MessageValue {
    MessageValue::new("Heartbeat")
        .with("sender", Value::Str(sender.to_string()))
        .with("counter", Value::I64(counter))
}

pub fn heartbeat_from(msg: &MessageValue) -> Result<(String, i64), MsgError> {
    expect_schema(msg, "Heartbeat")?;
    let sender = msg
        .get("sender")
        .and_then(Value::as_str)
        .ok_or_else(|| mismatch("sender", "string"))?;
    Ok((sender.to_string(), int(msg, "counter")?))
}

/// A broadcast plan: one agent's predicted states with their simulation stamps.
#[derive(Debug, Clone, PartialEq)]
pub struct StampedTrajectory {
    pub agent_id: String,
    pub stamp_ns: i64,
    pub states: Vec<(i64, RigidBodyState)>,
}

pub fn predicted_trajectory(traj: &StampedTrajectory) -> MessageValue {
    let states = traj
        .states
        .iter()
        .map(|(t, s)| {
            Value::Msg(
                MessageValue::new("StampedState")
                    .with("stamp_ns", Value::I64(*t))
                    .with("x", Value::f64_array(&s.to_array())),
            )
        })
        .collect();
    MessageValue::new("PredictedTrajectory")
        .with("agent_id", Value::Str(traj.agent_id.clone()))
        .with("stamp_ns", Value::I64(traj.stamp_ns))
        .with("states", Value::Array(states))
}

pub fn predicted_trajectory_from(msg: &MessageValue) -> Result<StampedTrajectory, MsgError> {
    expect_schema(msg, "PredictedTrajectory")?;
    let agent_id = msg
        .get("agent_id")
        .and_then(Value::as_str)
        .ok_or_else(|| mismatch("agent_id", "string"))?
        .to_string();
    let items = msg
        .get("states")
        .and_then(Value::as_array)
        .ok_or_else(|| mismatch("states", "array"))?;
    let mut states = Vec::with_capacity(items.len());
    for item in items {
        let m = item
            .as_msg()
            .ok_or_else(|| mismatch("states", "StampedState"))?;
        let x = floats::<STATE_DIM>(m, "x")?;
        states.push((int(m, "stamp_ns")?, RigidBodyState::from_array(&x)));
    }
    Ok(StampedTrajectory {
        agent_id,
        stamp_ns: int(msg, "stamp_ns")?,
        states,
    })
}

/// Per-step controller report: the reference it tracked and how the solve went.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerReport {
    pub stamp_ns: i64,
    pub reference: RigidBodyState,
    pub iterations: i64,
    pub status: String,
    pub degraded: bool,
    pub cost: f64,
}

pub fn controller_status(r: &ControllerReport) -> MessageValue {
    MessageValue::new("ControllerStatus")
        .with("stamp_ns", Value::I64(r.stamp_ns))
        .with("reference", Value::f64_array(&r.reference.to_array()))
        .with("iterations", Value::I64(r.iterations))
        .with("status", Value::Str(r.status.clone()))
        .with("degraded", Value::Bool(r.degraded))
        .with("cost", Value::F64(r.cost))
}

pub fn controller_status_from(msg: &MessageValue) -> Result<ControllerReport, MsgError> {
    expect_schema(msg, "ControllerStatus")?;
    let status = msg
        .get("status")
        .and_then(Value::as_str)
        .ok_or_else(|| mismatch("status", "string"))?
        .to_string();
    let degraded = match msg.get("degraded") {
        Some(Value::Bool(b)) => *b,
        _ => return Err(mismatch("degraded", "bool")),
    };
    let cost = msg
        .get("cost")
        .and_then(Value::as_f64)
        .ok_or_else(|| mismatch("cost", "f64"))?;
    Ok(ControllerReport {
        stamp_ns: int(msg, "stamp_ns")?,
        reference: RigidBodyState::from_array(&floats::<STATE_DIM>(msg, "reference")?),
        iterations: int(msg, "iterations")?,
        status,
        degraded,
        cost,
    })
}
