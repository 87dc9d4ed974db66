//! Declarative model files (JSON, `"schema": 1`).
//!
//! ```json
//! {
//!   "schema": 1,
//!   "name": "ma2",
//!   "parameters": ["t1", "t2"],
//!   "nodes": [
//!     {"name": "t1", "kind": "prior", "op": "uniform", "args": [0, 2]},
//!     {"name": "sim", "kind": "simulator", "op": "ma2", "parents": ["t1", "t2"], "args": [100]},
//!     {"name": "ext", "kind": "simulator", "op": {"external": {"argv": ["./sim"], "timeout_seconds": 30}}}
//!   ],
//!   "observed": {"sim": [0.1, 0.2]}
//! }
//! ```
//!
//! Node fields: `name`, `kind` (constant, prior, simulator, summary,
//! distance, operation), `op` (omitted for constants), `parents`, `args`,
//! `vectorized`. Observed data is an inline array or `{"csv": "path"}`
//! relative to the model file.

use crate::external::ExternalCommand;
use crate::graph::{GraphSpec, NodeKind, NodeSpec, OpRef, Violation};
use serde_json::{json, Map, Value};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}:{line}:{column}: parse error: {message}")]
    Parse {
        file: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{file}: schema error at {field}: {message}")]
    Schema {
        file: String,
        field: String,
        message: String,
    },
    #[error("{file}: invalid model:\n  {}", .messages.join("\n  "))]
    Validation {
        file: String,
        violations: Vec<Violation>,
        messages: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub name: String,
    pub parameters: Vec<String>,
    pub graph: GraphSpec,
}

pub fn parse_model(path: impl AsRef<Path>) -> Result<ModelFile, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_model_str(&text, base, &path.display().to_string())
}

/// Parses model JSON; CSV paths resolve against `base_dir`.
pub fn parse_model_str(text: &str, base_dir: &Path, file: &str) -> Result<ModelFile, ModelError> {
    let root: Value = serde_json::from_str(text).map_err(|e| ModelError::Parse {
        file: file.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let p = Parser { file, base_dir };
    let model = p.model(&root)?;
    let violations = model.graph.validate();
    if !violations.is_empty() {
        let messages = violations.iter().map(|v| p.locate(&model.graph, v)).collect();
        return Err(ModelError::Validation {
            file: file.to_string(),
            violations,
            messages,
        });
    }
    Ok(model)
}

struct Parser<'a> {
    file: &'a str,
    base_dir: &'a Path,
}

impl Parser<'_> {
    fn err(&self, field: impl Into<String>, message: impl Into<String>) -> ModelError {
        ModelError::Schema {
            file: self.file.to_string(),
            field: field.into(),
            message: message.into(),
        }
    }

    fn object<'v>(&self, v: &'v Value, field: &str) -> Result<&'v Map<String, Value>, ModelError> {
        v.as_object().ok_or_else(|| self.err(field, "expected an object"))
    }

    fn only_keys(&self, obj: &Map<String, Value>, field: &str, allowed: &[&str]) -> Result<(), ModelError> {
        match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(self.err(
                format!("{field}.{k}"),
                format!("unknown field (expected one of {})", allowed.join(", ")),
            )),
            None => Ok(()),
        }
    }

    fn string(&self, v: Option<&Value>, field: &str) -> Result<String, ModelError> {
        match v {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(self.err(field, "expected a string")),
            None => Err(self.err(field, "missing required field")),
        }
    }

    fn strings(&self, v: Option<&Value>, field: &str) -> Result<Vec<String>, ModelError> {
        match v {
            None => Ok(Vec::new()),
            Some(Value::Array(xs)) => xs
                .iter()
                .enumerate()
                .map(|(i, x)| self.string(Some(x), &format!("{field}[{i}]")))
                .collect(),
            Some(_) => Err(self.err(field, "expected an array of strings")),
        }
    }

    fn numbers(&self, v: Option<&Value>, field: &str) -> Result<Vec<f64>, ModelError> {
        match v {
            None => Ok(Vec::new()),
            Some(Value::Array(xs)) => xs
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    x.as_f64()
                        .ok_or_else(|| self.err(format!("{field}[{i}]"), "expected a number"))
                })
                .collect(),
            Some(_) => Err(self.err(field, "expected an array of numbers")),
        }
    }

    fn model(&self, root: &Value) -> Result<ModelFile, ModelError> {
        let obj = self.object(root, "$")?;
        self.only_keys(
            obj,
            "$",
            &["schema", "name", "description", "parameters", "nodes", "observed"],
        )?;
        match obj.get("schema").and_then(Value::as_u64) {
            Some(SCHEMA_VERSION) => {}
            Some(v) => return Err(self.err("schema", format!("unsupported schema version {v}"))),
            None => return Err(self.err("schema", "missing or non-integer schema version")),
        }
        let name = self.string(obj.get("name"), "name")?;
        let parameters = self.strings(obj.get("parameters"), "parameters")?;
        let nodes = match obj.get("nodes") {
            Some(Value::Array(xs)) => xs
                .iter()
                .enumerate()
                .map(|(i, n)| self.node(n, &format!("nodes[{i}]")))
                .collect::<Result<Vec<_>, _>>()?,
            Some(_) => return Err(self.err("nodes", "expected an array")),
            None => return Err(self.err("nodes", "missing required field")),
        };
        let mut observed = BTreeMap::new();
        if let Some(v) = obj.get("observed") {
            for (k, data) in self.object(v, "observed")? {
                observed.insert(k.clone(), self.observed(data, &format!("observed.{k}"))?);
            }
        }
        Ok(ModelFile {
            name,
            parameters,
            graph: GraphSpec::from_parts(nodes, observed),
        })
    }

    fn node(&self, v: &Value, field: &str) -> Result<NodeSpec, ModelError> {
        let obj = self.object(v, field)?;
        self.only_keys(obj, field, &["name", "kind", "op", "parents", "args", "vectorized"])?;
        let name = self.string(obj.get("name"), &format!("{field}.name"))?;
        let kind_s = self.string(obj.get("kind"), &format!("{field}.kind"))?;
        let kind = NodeKind::parse(&kind_s).ok_or_else(|| {
            let all: Vec<&str> = NodeKind::ALL.iter().map(|k| k.as_str()).collect();
            self.err(
                format!("{field}.kind"),
                format!("unknown node kind '{kind_s}' (expected one of {})", all.join(", ")),
            )
        })?;
        let op = match (obj.get("op"), kind) {
            (None, NodeKind::Constant) => OpRef::builtin("constant"),
            (None, _) => return Err(self.err(format!("{field}.op"), "missing required field")),
            (Some(Value::String(s)), _) => OpRef::builtin(s.clone()),
            (Some(Value::Object(o)), _) => {
                let ofield = format!("{field}.op");
                self.only_keys(o, &ofield, &["external"])?;
                let ext_field = format!("{ofield}.external");
                let ext = self.object(
                    o.get("external")
                        .ok_or_else(|| self.err(&ofield, "expected {\"external\": {...}}"))?,
                    &ext_field,
                )?;
                self.only_keys(ext, &ext_field, &["argv", "timeout_seconds", "working_dir"])?;
                let argv = self.strings(ext.get("argv"), &format!("{ext_field}.argv"))?;
                if argv.is_empty() {
                    return Err(self.err(format!("{ext_field}.argv"), "must be a nonempty array"));
                }
                let mut cmd = ExternalCommand::new(argv);
                if let Some(t) = ext.get("timeout_seconds") {
                    let t = t.as_f64().filter(|t| *t > 0.0).ok_or_else(|| {
                        self.err(format!("{ext_field}.timeout_seconds"), "expected a positive number")
                    })?;
                    cmd = cmd.timeout(t);
                }
                match ext.get("working_dir") {
                    None | Some(Value::Null) => {}
                    Some(Value::String(d)) => cmd = cmd.working_dir(self.base_dir.join(d)),
                    Some(_) => return Err(self.err(format!("{ext_field}.working_dir"), "expected a string")),
                }
                OpRef::External(cmd)
            }
            (Some(_), _) => {
                return Err(self.err(format!("{field}.op"), "expected a string or an external command object"))
            }
        };
        let parents = self.strings(obj.get("parents"), &format!("{field}.parents"))?;
        let args = self.numbers(obj.get("args"), &format!("{field}.args"))?;
        let vectorized = match obj.get("vectorized") {
            None => false,
            Some(Value::Bool(b)) => *b,
            Some(_) => return Err(self.err(format!("{field}.vectorized"), "expected a boolean")),
        };
        Ok(NodeSpec::new(name, kind, op)
            .parents(parents)
            .args(args)
            .vectorized(vectorized))
    }

    fn observed(&self, v: &Value, field: &str) -> Result<Vec<f64>, ModelError> {
        match v {
            Value::Array(_) => self.numbers(Some(v), field),
            Value::Object(o) => {
                self.only_keys(o, field, &["csv"])?;
                let rel = self.string(o.get("csv"), &format!("{field}.csv"))?;
                let path = self.base_dir.join(&rel);
                let text = std::fs::read_to_string(&path).map_err(|source| ModelError::Io {
                    path: path.clone(),
                    source,
                })?;
                read_csv_numbers(&text)
                    .map_err(|m| self.err(format!("{field}.csv"), format!("{}: {m}", path.display())))
            }
            _ => Err(self.err(field, "expected an array of numbers or {\"csv\": path}")),
        }
    }

    fn locate(&self, graph: &GraphSpec, v: &Violation) -> String {
        let node = match v {
            Violation::InvalidName { node }
            | Violation::DuplicateName { node }
            | Violation::UnknownParent { node, .. }
            | Violation::KindConstraint { node, .. } => Some(node.as_str()),
            Violation::NotDownstreamOfObserved { distance, .. } => Some(distance.as_str()),
            Violation::CycleDetected { nodes } => nodes.first().map(String::as_str),
            _ => None,
        };
        let field = node
            .and_then(|n| graph.nodes().iter().position(|s| s.name == n))
            .map(|i| format!("nodes[{i}]"))
            .unwrap_or_else(|| match v {
                Violation::ObservedUnknownNode { .. }
                | Violation::ObservedNotSimulator { .. }
                | Violation::MultipleObserved { .. }
                | Violation::ObservedMissing => "observed".into(),
                _ => "nodes".into(),
            });
        format!("{field}: {v}")
    }
}

/// All numbers in a CSV file, row by row. A non-numeric first line is
/// treated as a header.
fn read_csv_numbers(text: &str) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Result<Vec<f64>, _> = cells.iter().map(|c| c.parse::<f64>()).collect();
        match parsed {
            Ok(v) => out.extend(v),
            Err(_) if i == 0 => continue,
            Err(_) => return Err(format!("line {}: non-numeric value", i + 1)),
        }
    }
    Ok(out)
}

/// Serializes a model back to schema-1 JSON.
pub fn model_to_json(model: &ModelFile) -> String {
    let nodes: Vec<Value> = model
        .graph
        .nodes()
        .iter()
        .map(|n| {
            let mut o = Map::new();
            o.insert("name".into(), json!(n.name));
            o.insert("kind".into(), json!(n.kind.as_str()));
            match &n.op {
                OpRef::Builtin(_) if n.kind == NodeKind::Constant => {}
                OpRef::Builtin(s) => {
                    o.insert("op".into(), json!(s));
                }
                OpRef::External(c) => {
                    o.insert(
                        "op".into(),
                        json!({"external": {"argv": c.argv, "timeout_seconds": c.timeout_seconds, "working_dir": c.working_dir}}),
                    );
                }
            }
            if !n.parents.is_empty() {
                o.insert("parents".into(), json!(n.parents));
            }
            if !n.args.is_empty() {
                o.insert("args".into(), json!(n.args));
            }
            if n.vectorized {
                o.insert("vectorized".into(), json!(true));
            }
            Value::Object(o)
        })
        .collect();
    let doc = json!({
        "schema": SCHEMA_VERSION,
        "name": model.name,
        "parameters": model.parameters,
        "nodes": nodes,
        "observed": model.graph.observed(),
    });
    serde_json::to_string_pretty(&doc).expect("model serializes")
}
