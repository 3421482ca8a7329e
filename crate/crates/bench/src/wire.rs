//! Client side of the bridge protocol: newline-delimited JSON frames over TCP.
//!
//! Requests are `{id, op, args}`, responses `{id, ok, data | error}`. Every
//! float crosses the wire as a decimal string with 9 significant digits so
//! both ends agree bit-for-bit after decoding.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use scriptloop_core::domain::{Action, Grip, Observation, Pose};
use scriptloop_core::{EnvError, Environment, TaskSpec};
use serde_json::{json, Map, Value};

pub const PROTOCOL_VERSION: &str = "faea-bridge/1";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

pub fn encode_num(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn decode_num(v: &Value) -> Result<f64, EnvError> {
    let s = v
        .as_str()
        .ok_or_else(|| EnvError::Protocol(format!("expected decimal string, got {v}")))?;
    let x: f64 = s
        .parse()
        .map_err(|_| EnvError::Protocol(format!("bad decimal '{s}'")))?;
    if !x.is_finite() {
        return Err(EnvError::Protocol(format!("non-finite decimal '{s}'")));
    }
    Ok(x)
}

/// The value a float takes after one trip over the wire.
pub fn wire_round(v: f64) -> f64 {
    encode_num(v).parse().expect("formatted floats parse")
}

pub fn pose_to_json(p: &Pose) -> Value {
    json!({
        "x": encode_num(p.x),
        "y": encode_num(p.y),
        "z": encode_num(p.z),
        "yaw": encode_num(p.yaw),
    })
}

fn field<'a>(v: &'a Value, key: &str) -> Result<&'a Value, EnvError> {
    v.get(key)
        .ok_or_else(|| EnvError::Protocol(format!("missing field '{key}'")))
}

pub fn pose_from_json(v: &Value) -> Result<Pose, EnvError> {
    Ok(Pose {
        x: decode_num(field(v, "x")?)?,
        y: decode_num(field(v, "y")?)?,
        z: decode_num(field(v, "z")?)?,
        yaw: decode_num(field(v, "yaw")?)?,
    })
}

pub fn observation_to_json(o: &Observation) -> Value {
    let objects: Map<String, Value> = o
        .objects
        .iter()
        .map(|(k, p)| (k.clone(), pose_to_json(p)))
        .collect();
    json!({
        "gripper_pose": pose_to_json(&o.gripper_pose),
        "gripper_open": o.gripper_open,
        "held_object": o.held_object,
        "objects": objects,
        "goal": pose_to_json(&o.goal),
        "tick": o.tick,
    })
}

pub fn observation_from_json(v: &Value) -> Result<Observation, EnvError> {
    let bad = |what: &str| EnvError::Protocol(format!("bad observation field '{what}'"));
    let objects = field(v, "objects")?
        .as_object()
        .ok_or_else(|| bad("objects"))?
        .iter()
        .map(|(k, p)| Ok((k.clone(), pose_from_json(p)?)))
        .collect::<Result<BTreeMap<_, _>, EnvError>>()?;
    let held_object = match field(v, "held_object")? {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        _ => return Err(bad("held_object")),
    };
    Ok(Observation {
        gripper_pose: pose_from_json(field(v, "gripper_pose")?)?,
        gripper_open: field(v, "gripper_open")?
            .as_bool()
            .ok_or_else(|| bad("gripper_open"))?,
        held_object,
        objects,
        goal: pose_from_json(field(v, "goal")?)?,
        tick: field(v, "tick")?.as_u64().ok_or_else(|| bad("tick"))?,
    })
}

pub fn action_to_json(a: &Action) -> Value {
    match a {
        Action::MoveTo(p) => json!({
            "type": "move_to",
            "x": encode_num(p.x),
            "y": encode_num(p.y),
            "z": encode_num(p.z),
            "yaw": encode_num(p.yaw),
        }),
        Action::Gripper(g) => json!({"type": "gripper", "state": g.as_str()}),
        Action::Wait(n) => json!({"type": "wait", "ticks": n}),
    }
}

pub fn action_from_json(v: &Value) -> Result<Action, EnvError> {
    let invalid = |e: scriptloop_core::ContractError| EnvError::Protocol(e.to_string());
    match field(v, "type")?.as_str() {
        Some("move_to") => Action::move_to(
            decode_num(field(v, "x")?)?,
            decode_num(field(v, "y")?)?,
            decode_num(field(v, "z")?)?,
            decode_num(field(v, "yaw")?)?,
        )
        .map_err(invalid),
        Some("gripper") => match field(v, "state")?.as_str() {
            Some("open") => Ok(Action::Gripper(Grip::Open)),
            Some("close") => Ok(Action::Gripper(Grip::Close)),
            _ => Err(EnvError::Protocol("bad gripper state".into())),
        },
        Some("wait") => {
            let n = field(v, "ticks")?
                .as_u64()
                .and_then(|n| u32::try_from(n).ok())
                .ok_or_else(|| EnvError::Protocol("bad wait ticks".into()))?;
            Action::wait(n).map_err(invalid)
        }
        _ => Err(EnvError::Protocol(format!("unknown action {v}"))),
    }
}

/// Environment handle backed by a bridge server.
#[derive(Debug)]
pub struct RemoteEnv {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
}

fn transport(e: std::io::Error) -> EnvError {
    EnvError::Transport(e.to_string())
}

/// Connects and performs the version handshake.
pub fn connect_remote(endpoint: &str, timeout: Duration) -> Result<RemoteEnv, EnvError> {
    let addrs: Vec<_> = endpoint
        .to_socket_addrs()
        .map_err(|e| EnvError::Transport(format!("{endpoint}: {e}")))?
        .collect();
    let mut last = None;
    let mut stream = None;
    for addr in addrs {
        match TcpStream::connect_timeout(&addr, timeout) {
            Ok(s) => {
                stream = Some(s);
                break;
            }
            Err(e) => last = Some(e),
        }
    }
    let stream = stream.ok_or_else(|| {
        EnvError::Transport(match last {
            Some(e) => format!("{endpoint}: {e}"),
            None => format!("{endpoint}: no address"),
        })
    })?;
    stream.set_read_timeout(Some(timeout)).map_err(transport)?;
    stream.set_write_timeout(Some(timeout)).map_err(transport)?;
    stream.set_nodelay(true).map_err(transport)?;
    let mut env = RemoteEnv {
        reader: BufReader::new(stream.try_clone().map_err(transport)?),
        writer: stream,
        next_id: 1,
    };
    let data = env.call("hello", json!({"version": PROTOCOL_VERSION}))?;
    match data.get("version").and_then(Value::as_str) {
        Some(PROTOCOL_VERSION) => Ok(env),
        Some(other) => Err(EnvError::Protocol(format!(
            "server speaks {other}, client speaks {PROTOCOL_VERSION}"
        ))),
        None => Err(EnvError::Protocol("hello reply lacks a version".into())),
    }
}

impl RemoteEnv {
    fn call(&mut self, op: &str, args: Value) -> Result<Value, EnvError> {
        let id = self.next_id;
        self.next_id += 1;
        let mut frame = json!({"id": id, "op": op, "args": args}).to_string();
        frame.push('\n');
        self.writer.write_all(frame.as_bytes()).map_err(transport)?;

        let mut line = String::new();
        let n = self.reader.read_line(&mut line).map_err(transport)?;
        if n == 0 {
            return Err(EnvError::Transport("connection closed by server".into()));
        }
        let resp: Value = serde_json::from_str(line.trim_end())
            .map_err(|e| EnvError::Protocol(format!("malformed frame: {e}")))?;
        if resp.get("id").and_then(Value::as_u64) != Some(id) {
            return Err(EnvError::Protocol(format!(
                "response id {} does not echo request id {id}",
                resp.get("id").unwrap_or(&Value::Null)
            )));
        }
        match resp.get("ok").and_then(Value::as_bool) {
            Some(true) => Ok(resp.get("data").cloned().unwrap_or(Value::Null)),
            Some(false) => {
                let msg = resp
                    .get("error")
                    .and_then(Value::as_str)
                    .unwrap_or("unspecified error")
                    .to_string();
                if msg.starts_with("unknown op") {
                    Err(EnvError::Protocol(msg))
                } else {
                    Err(EnvError::Remote(msg))
                }
            }
            None => Err(EnvError::Protocol("response lacks 'ok'".into())),
        }
    }

    /// Asks the server to end the session.
    pub fn close(mut self) -> Result<(), EnvError> {
        self.call("close", json!({})).map(|_| ())
    }
}

impl Environment for RemoteEnv {
    fn reset(&mut self, task: &TaskSpec, seed: u64) -> Result<Observation, EnvError> {
        let data = self.call("reset", json!({"task": task.id, "seed": seed}))?;
        observation_from_json(&data)
    }

    fn step(&mut self, action: &Action) -> Result<Observation, EnvError> {
        let data = self.call("step", json!({"action": action_to_json(action)}))?;
        observation_from_json(&data)
    }

    fn get_obs(&mut self) -> Result<Observation, EnvError> {
        let data = self.call("get_obs", json!({}))?;
        observation_from_json(&data)
    }

    fn check_success(&mut self) -> Result<bool, EnvError> {
        let data = self.call("check_success", json!({}))?;
        data.get("success")
            .and_then(Value::as_bool)
            .ok_or_else(|| EnvError::Protocol("check_success reply lacks 'success'".into()))
    }
}
