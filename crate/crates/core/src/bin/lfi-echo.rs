//! Identity simulator for the external protocol: each output row is the
//! element's parameter values concatenated in request order.

use serde_json::{json, Value};
use std::io::Read;

fn rows(request: &Value) -> Result<Vec<Vec<f64>>, String> {
    if request.get("protocol").and_then(Value::as_u64) != Some(1) {
        return Err("expected protocol 1".into());
    }
    let b = request
        .get("batch_size")
        .and_then(Value::as_u64)
        .ok_or("missing batch_size")? as usize;
    let params = request
        .get("parameters")
        .and_then(Value::as_object)
        .ok_or("missing parameters")?;
    let mut out = vec![Vec::new(); b];
    for (name, values) in params {
        let values = values
            .as_array()
            .filter(|v| v.len() == b)
            .ok_or_else(|| format!("parameter '{name}' needs {b} values"))?;
        for (row, v) in out.iter_mut().zip(values) {
            match v {
                Value::Array(xs) => {
                    for x in xs {
                        row.push(
                            x.as_f64()
                                .ok_or_else(|| format!("parameter '{name}': non-numeric value"))?,
                        );
                    }
                }
                x => row.push(
                    x.as_f64()
                        .ok_or_else(|| format!("parameter '{name}': non-numeric value"))?,
                ),
            }
        }
    }
    Ok(out)
}

fn main() {
    let mut input = String::new();
    if let Err(e) = std::io::stdin().read_to_string(&mut input) {
        eprintln!("lfi-echo: cannot read stdin: {e}");
        std::process::exit(2);
    }
    let result = serde_json::from_str::<Value>(&input)
        .map_err(|e| e.to_string())
        .and_then(|r| rows(&r));
    match result {
        Ok(rows) => println!("{}", json!({"protocol": 1, "output": rows})),
        Err(e) => {
            eprintln!("lfi-echo: {e}");
            std::process::exit(2);
        }
    }
}
