//! Output files. Every file starts with the run configuration.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::CliError;

pub struct OutDir<'a> {
    config: &'a RunConfig,
}

impl<'a> OutDir<'a> {
    pub fn create(config: &'a RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(&config.out_dir)?;
        Ok(Self { config })
    }

    fn path(&self, name: &str) -> std::path::PathBuf {
        self.config.out_dir.join(name)
    }

    fn config_json(&self) -> Result<String, CliError> {
        Ok(serde_json::to_string(self.config)?)
    }

    /// A file whose first line is `# {"config": ...}`.
    pub fn commented(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let mut w = BufWriter::new(File::create(self.path(name))?);
        writeln!(w, "# {{\"config\":{}}}", self.config_json()?)?;
        Ok(w)
    }

    /// A CSV file: the config comment, then `header`.
    pub fn csv(&self, name: &str, header: &str) -> Result<BufWriter<File>, CliError> {
        let mut w = self.commented(name)?;
        writeln!(w, "{header}")?;
        Ok(w)
    }

    /// A JSON-lines file whose first record holds the configuration.
    pub fn jsonl(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let mut w = BufWriter::new(File::create(self.path(name))?);
        writeln!(w, "{{\"config\":{}}}", self.config_json()?)?;
        Ok(w)
    }

    /// `{"config": ..., <fields of body>}`, pretty-printed.
    pub fn json<T: Serialize>(&self, name: &str, body: &T) -> Result<Value, CliError> {
        let value = with_config(self.config, body)?;
        write_json(&self.path(name), &value)?;
        Ok(value)
    }
}

fn with_config<T: Serialize>(config: &RunConfig, body: &T) -> Result<Value, CliError> {
    let mut value = json!({ "config": config });
    match serde_json::to_value(body)? {
        Value::Object(map) => value.as_object_mut().expect("object").extend(map),
        other => {
            value["result"] = other;
        }
    }
    Ok(value)
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
