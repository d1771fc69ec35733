use std::io::Write;

use serde_json::{json, Value};

use crate::error::CliError;

/// Line-oriented output: `key value` text, or one JSON object per line.
#[derive(Debug, Clone, Copy)]
pub struct Out {
    json: bool,
}

impl Out {
    pub fn new(json: bool) -> Self {
        Out { json }
    }

    pub fn emit(&self, text: impl AsRef<str>, value: Value) {
        let mut stdout = std::io::stdout().lock();
        let _ = if self.json {
            writeln!(stdout, "{value}")
        } else {
            writeln!(stdout, "{}", text.as_ref())
        };
        let _ = stdout.flush();
    }

    pub fn error(&self, e: &CliError) {
        if self.json {
            eprintln!(
                "{}",
                json!({ "error": e.to_string(), "exit_code": e.exit_code() })
            );
        } else {
            eprintln!("error: {e}");
        }
    }
}
