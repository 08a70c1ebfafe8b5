//! Deterministic run outputs: CSV tables and the JSON manifest.
//!
//! Everything written here is byte-reproducible for a fixed (seed,
//! config) pair: floats render through Rust's shortest-round-trip
//! display, rows are emitted in index order regardless of thread
//! scheduling, and the manifest never carries wall-clock information.

use serde::Serialize;
use std::path::PathBuf;

use crate::errors::CliError;

/// Shortest exact decimal form of `x` (parses back to the same bits).
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// A CSV table under construction: fixed header, then rows.
pub struct Csv {
    buf: String,
    cols: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = header.join(",");
        buf.push('\n');
        Self {
            buf,
            cols: header.len(),
        }
    }

    /// Append one row; the field count must match the header.
    pub fn row(&mut self, fields: &[String]) {
        assert_eq!(
            fields.len(),
            self.cols,
            "CSV row width does not match the header"
        );
        self.buf.push_str(&fields.join(","));
        self.buf.push('\n');
    }

    pub fn into_string(self) -> String {
        self.buf
    }
}

#[derive(Serialize)]
struct Versions {
    devlab: String,
    rough_core: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config_sha256: &'a str,
    versions: Versions,
    outputs: &'a [String],
    summary: serde_json::Value,
}

/// The run's output directory plus the bookkeeping for its manifest.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &PathBuf {
        &self.root
    }

    /// Write one output file and record it for the manifest.
    pub fn write(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        std::fs::write(self.root.join(name), content)?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Write `manifest.json`: command identity, provenance (seed + config
    /// hash + crate versions), the files produced, and a per-command
    /// summary block.
    pub fn finish(
        &mut self,
        command: &str,
        seed: u64,
        config_sha256: &str,
        summary: serde_json::Value,
    ) -> Result<(), CliError> {
        let manifest = Manifest {
            command,
            seed,
            config_sha256,
            versions: Versions {
                devlab: env!("CARGO_PKG_VERSION").to_string(),
                rough_core: rough_core::VERSION.to_string(),
            },
            outputs: &self.written,
            summary,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(self.root.join("manifest.json"), text)?;
        Ok(())
    }
}

/// JSON value for a float that may be infinite (JSON has no ±inf, so
/// those render as strings).
pub fn json_num(x: f64) -> serde_json::Value {
    if x.is_finite() {
        serde_json::json!(x)
    } else {
        serde_json::json!(x.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rows_render_shortest_floats() {
        let mut t = Csv::new(&["t", "x"]);
        t.row(&[num(0.1), num(1.0 / 3.0)]);
        let text = t.into_string();
        assert_eq!(text, "t,x\n0.1,0.3333333333333333\n");
        // Parse-back is exact.
        let v: f64 = "0.3333333333333333".parse().unwrap();
        assert_eq!(v, 1.0 / 3.0);
    }

    #[test]
    fn manifest_lists_outputs_in_write_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutDir::create(dir.path().join("run")).unwrap();
        out.write("b.csv", "x\n1\n").unwrap();
        out.write("a.csv", "y\n2\n").unwrap();
        out.finish("demo", 42, "abc", serde_json::json!({ "n": 2 }))
            .unwrap();
        let text = std::fs::read_to_string(dir.path().join("run/manifest.json")).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed["command"], "demo");
        assert_eq!(parsed["outputs"][0], "b.csv");
        assert_eq!(parsed["outputs"][1], "a.csv");
        assert_eq!(parsed["summary"]["n"], 2);
        assert!(text.find("timestamp").is_none());
    }

    #[test]
    fn infinite_values_become_strings() {
        assert_eq!(json_num(2.5), serde_json::json!(2.5));
        assert_eq!(json_num(f64::INFINITY), serde_json::json!("inf"));
    }
}
