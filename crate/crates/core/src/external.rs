//! Simulators implemented as external programs.
//!
//! One process is spawned per batch. The engine writes a single JSON
//! request to the child's stdin and closes it:
//!
//! ```json
//! {"protocol":1,"batch_index":I,"seed":S,"batch_size":B,"parameters":{"<parent>":[...B values...]}}
//! ```
//!
//! and reads a single JSON reply from stdout once the child exits:
//!
//! ```json
//! {"protocol":1,"output":[[...], ...B rows...]}
//! ```
//!
//! Parameter values are scalars when the parent produces one value per
//! element and arrays otherwise. The node's static args are appended to
//! `argv` as decimal strings. `seed` is derived from
//! `(root_seed, batch_index, node_name)` and must be the child's only
//! source of randomness.

use crate::ops::{NodeOp, OpContext, OpError};
use crate::rng::{derived_seed, RngStream};
use serde_json::{json, Map, Value};
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};
use thiserror::Error;

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalCommand {
    pub argv: Vec<String>,
    pub timeout_seconds: f64,
    pub working_dir: Option<PathBuf>,
}

impl ExternalCommand {
    pub fn new<S: Into<String>>(argv: impl IntoIterator<Item = S>) -> Self {
        Self {
            argv: argv.into_iter().map(Into::into).collect(),
            timeout_seconds: 60.0,
            working_dir: None,
        }
    }

    pub fn timeout(mut self, seconds: f64) -> Self {
        self.timeout_seconds = seconds;
        self
    }

    pub fn working_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.working_dir = Some(dir.into());
        self
    }
}

#[derive(Debug, Error)]
pub enum ExternalError {
    #[error("invalid command: {0}")]
    InvalidCommand(String),
    #[error("failed to spawn '{program}': {source}")]
    Spawn { program: String, source: std::io::Error },
    #[error("timed out after {0} s; process killed")]
    Timeout(f64),
    #[error("exited with status {code:?}: {stderr}")]
    NonzeroExit { code: Option<i32>, stderr: String },
    #[error("protocol error: {0}")]
    ProtocolError(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRequest {
    pub batch_index: u64,
    pub seed: u64,
    pub batch_size: usize,
    /// `(parent name, per-element values)` in parent order.
    pub parameters: Vec<(String, Vec<Vec<f64>>)>,
}

impl BatchRequest {
    pub fn to_json(&self) -> String {
        let mut params = Map::new();
        for (name, rows) in &self.parameters {
            let vals: Vec<Value> = rows
                .iter()
                .map(|r| if r.len() == 1 { json!(r[0]) } else { json!(r) })
                .collect();
            params.insert(name.clone(), Value::Array(vals));
        }
        json!({
            "protocol": PROTOCOL_VERSION,
            "batch_index": self.batch_index,
            "seed": self.seed,
            "batch_size": self.batch_size,
            "parameters": params,
        })
        .to_string()
    }
}

/// Parses a protocol-1 reply into exactly `batch_size` rows.
pub fn parse_reply(text: &str, batch_size: usize) -> Result<Vec<Vec<f64>>, ExternalError> {
    let perr = |m: String| ExternalError::ProtocolError(m);
    let v: Value = serde_json::from_str(text.trim()).map_err(|e| perr(format!("malformed reply: {e}")))?;
    match v.get("protocol").and_then(Value::as_u64) {
        Some(PROTOCOL_VERSION) => {}
        other => return Err(perr(format!("expected protocol {PROTOCOL_VERSION}, got {other:?}"))),
    }
    let rows = v
        .get("output")
        .and_then(Value::as_array)
        .ok_or_else(|| perr("missing 'output' array".into()))?;
    if rows.len() != batch_size {
        return Err(perr(format!("expected {batch_size} rows, got {}", rows.len())));
    }
    rows.iter()
        .enumerate()
        .map(|(i, row)| match row {
            Value::Number(n) => n
                .as_f64()
                .map(|x| vec![x])
                .ok_or_else(|| perr(format!("row {i}: bad number"))),
            Value::Array(xs) => xs
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| perr(format!("row {i}: non-numeric entry"))))
                .collect(),
            _ => Err(perr(format!("row {i} is not a number or array"))),
        })
        .collect()
}

/// Runs the command once for the whole batch.
pub fn invoke_external(cmd: &ExternalCommand, request: &BatchRequest) -> Result<Vec<Vec<f64>>, ExternalError> {
    invoke_with_args(cmd, &[], request)
}

fn invoke_with_args(
    cmd: &ExternalCommand,
    extra: &[String],
    request: &BatchRequest,
) -> Result<Vec<Vec<f64>>, ExternalError> {
    let (program, rest) = cmd
        .argv
        .split_first()
        .ok_or_else(|| ExternalError::InvalidCommand("argv is empty".into()))?;
    if cmd.timeout_seconds.is_nan() || cmd.timeout_seconds <= 0.0 {
        return Err(ExternalError::InvalidCommand("timeout must be positive".into()));
    }
    if let Some((name, rows)) = request.parameters.iter().find(|(_, r)| r.len() != request.batch_size) {
        return Err(ExternalError::InvalidCommand(format!(
            "parameter '{name}' has {} values for a batch of {}",
            rows.len(),
            request.batch_size
        )));
    }
    let mut command = Command::new(program);
    command
        .args(rest)
        .args(extra)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if let Some(dir) = &cmd.working_dir {
        command.current_dir(dir);
    }
    let mut child = command.spawn().map_err(|source| ExternalError::Spawn {
        program: program.clone(),
        source,
    })?;

    let payload = request.to_json();
    let mut stdin = child.stdin.take().expect("piped stdin");
    let writer = std::thread::spawn(move || {
        // A child that exits without reading closes the pipe; that is not
        // our error to report.
        let _ = stdin.write_all(payload.as_bytes());
    });
    let mut stdout = child.stdout.take().expect("piped stdout");
    let out_reader = std::thread::spawn(move || {
        let mut s = String::new();
        stdout.read_to_string(&mut s).map(|_| s)
    });
    let mut stderr = child.stderr.take().expect("piped stderr");
    let err_reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr.read_to_string(&mut s);
        s
    });

    let deadline = Instant::now() + Duration::from_secs_f64(cmd.timeout_seconds);
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                let _ = writer.join();
                return Err(ExternalError::Timeout(cmd.timeout_seconds));
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(2)),
            Err(e) => {
                return Err(ExternalError::Spawn {
                    program: program.clone(),
                    source: e,
                })
            }
        }
    };
    let _ = writer.join();
    let stdout = out_reader
        .join()
        .expect("stdout reader")
        .map_err(|e| ExternalError::ProtocolError(format!("reading stdout: {e}")))?;
    let stderr = err_reader.join().expect("stderr reader");
    if !status.success() {
        return Err(ExternalError::NonzeroExit {
            code: status.code(),
            stderr,
        });
    }
    parse_reply(&stdout, request.batch_size)
}

fn format_arg(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:?}")
    }
}

/// Node op adapter: one external invocation per batch.
#[derive(Debug, Clone)]
pub struct ExternalOp {
    cmd: ExternalCommand,
}

impl ExternalOp {
    pub fn new(cmd: ExternalCommand) -> Self {
        Self { cmd }
    }
}

impl NodeOp for ExternalOp {
    fn eval(&self, _inputs: &[&[f64]], _args: &[f64], _rng: &mut RngStream) -> Result<Vec<f64>, String> {
        Err("external simulators run a whole batch at a time".into())
    }

    fn eval_batch(
        &self,
        ctx: &OpContext<'_>,
        inputs: &[Vec<&[f64]>],
        args: &[f64],
        _rng: &mut RngStream,
    ) -> Result<Vec<Vec<f64>>, OpError> {
        let parameters = ctx
            .parents
            .iter()
            .enumerate()
            .map(|(p, name)| (name.clone(), inputs.iter().map(|row| row[p].to_vec()).collect()))
            .collect();
        let request = BatchRequest {
            batch_index: ctx.batch_index,
            seed: derived_seed(ctx.root_seed, ctx.batch_index, ctx.node),
            batch_size: ctx.batch_size,
            parameters,
        };
        let extra: Vec<String> = args.iter().copied().map(format_arg).collect();
        invoke_with_args(&self.cmd, &extra, &request).map_err(|e| OpError::batch(e.to_string()))
    }

    fn batch_only(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_framing() {
        let r = BatchRequest {
            batch_index: 3,
            seed: 99,
            batch_size: 2,
            parameters: vec![
                ("t2".into(), vec![vec![0.5], vec![1.0]]),
                ("t1".into(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]),
            ],
        };
        assert_eq!(
            r.to_json(),
            r#"{"protocol":1,"batch_index":3,"seed":99,"batch_size":2,"parameters":{"t2":[0.5,1.0],"t1":[[1.0,2.0],[3.0,4.0]]}}"#
        );
    }

    #[test]
    fn reply_parsing() {
        assert_eq!(
            parse_reply(r#"{"protocol":1,"output":[[1,2],[3,4]]}"#, 2).unwrap(),
            vec![vec![1.0, 2.0], vec![3.0, 4.0]]
        );
        assert_eq!(
            parse_reply(r#"{"protocol":1,"output":[5]}"#, 1).unwrap(),
            vec![vec![5.0]]
        );
        assert!(matches!(
            parse_reply(r#"{"protocol":2,"output":[]}"#, 0),
            Err(ExternalError::ProtocolError(_))
        ));
        assert!(matches!(
            parse_reply(r#"{"protocol":1,"output":[[1]]}"#, 2),
            Err(ExternalError::ProtocolError(_))
        ));
        assert!(matches!(
            parse_reply("not json", 1),
            Err(ExternalError::ProtocolError(_))
        ));
    }

    #[test]
    fn nonzero_exit_carries_stderr() {
        let cmd = ExternalCommand::new(["sh", "-c", "cat >/dev/null; echo oops >&2; exit 3"]);
        let req = BatchRequest {
            batch_index: 0,
            seed: 1,
            batch_size: 1,
            parameters: vec![],
        };
        match invoke_external(&cmd, &req) {
            Err(ExternalError::NonzeroExit { code, stderr }) => {
                assert_eq!(code, Some(3));
                assert!(stderr.contains("oops"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn timeout_kills_child() {
        let cmd = ExternalCommand::new(["sleep", "5"]).timeout(0.2);
        let req = BatchRequest {
            batch_index: 0,
            seed: 1,
            batch_size: 1,
            parameters: vec![],
        };
        let t = Instant::now();
        assert!(matches!(invoke_external(&cmd, &req), Err(ExternalError::Timeout(_))));
        assert!(t.elapsed() < Duration::from_secs(3));
    }

    #[test]
    fn args_format_as_integers_when_whole() {
        assert_eq!(format_arg(100.0), "100");
        assert_eq!(format_arg(0.5), "0.5");
    }
}
