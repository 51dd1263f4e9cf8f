use std::io::Write;

use serde_json::{Map, Value};

/// Key/value report printed either as one JSON object or as `key: value` lines.
///
/// Floats go through the same shortest round-trip formatting in both modes.
#[derive(Default)]
pub struct Report {
    fields: Vec<(String, Value)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.fields.push((key.to_string(), value.into()));
        self
    }

    pub fn num(&mut self, key: &str, x: f64) -> &mut Self {
        let v = serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null);
        self.put(key, v)
    }

    /// Write errors (a closed pipe, say) are ignored.
    pub fn print(&self, json: bool) {
        let mut out = std::io::stdout().lock();
        let _ = self.write(&mut out, json);
    }

    fn write(&self, out: &mut impl Write, json: bool) -> std::io::Result<()> {
        if json {
            let map: Map<String, Value> = self.fields.iter().cloned().collect();
            writeln!(out, "{}", Value::Object(map))?;
        } else {
            for (k, v) in &self.fields {
                match v {
                    Value::String(s) => writeln!(out, "{k}: {s}")?,
                    other => writeln!(out, "{k}: {other}")?,
                }
            }
        }
        out.flush()
    }
}
