use std::io::Write;

use serde_json::{json, Map, Value};

use crate::CliError;

/// JSON-lines logger on stderr.
#[derive(Debug, Clone, Copy)]
pub struct Logger {
    quiet: bool,
}

impl Logger {
    pub fn new(quiet: bool) -> Self {
        Logger { quiet }
    }

    fn emit(&self, record: Map<String, Value>) {
        let mut err = std::io::stderr().lock();
        let _ = serde_json::to_writer(&mut err, &record);
        let _ = err.write_all(b"\n");
    }

    /// `fields` must be a JSON object; its keys follow `level` and `event`.
    pub fn info(&self, event: &str, fields: Value) {
        if self.quiet {
            return;
        }
        self.log("info", event, fields);
    }

    pub fn warn(&self, event: &str, fields: Value) {
        self.log("warn", event, fields);
    }

    fn log(&self, level: &str, event: &str, fields: Value) {
        let mut record = Map::new();
        record.insert("level".into(), json!(level));
        record.insert("event".into(), json!(event));
        if let Value::Object(extra) = fields {
            record.extend(extra);
        }
        self.emit(record);
    }

    pub fn error(&self, e: &CliError) {
        let mut record = Map::new();
        record.insert("level".into(), json!("error"));
        record.insert("kind".into(), json!(e.kind.name()));
        record.insert("exit_code".into(), json!(e.kind as u8));
        record.insert("message".into(), json!(e.message));
        self.emit(record);
    }
}
