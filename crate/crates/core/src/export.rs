//! Metadata header and writers for emitted result files.

use serde::{Deserialize, Serialize};

pub const TOOL_NAME: &str = "noma";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    Nats,
    Bits,
}

impl LogBase {
    /// Multiplier from nats to this unit.
    pub fn factor(self) -> f64 {
        match self {
            LogBase::Nats => 1.0,
            LogBase::Bits => std::f64::consts::LOG2_E,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LogBase::Nats => "nats",
            LogBase::Bits => "bits",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub log_base: LogBase,
    /// Hex digest of the canonical configuration.
    pub config_hash: String,
}

impl Metadata {
    pub fn new(log_base: LogBase, config_hash: impl Into<String>) -> Self {
        Self {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            log_base,
            config_hash: config_hash.into(),
        }
    }

    /// `# key: value` comment lines placed ahead of CSV data.
    pub fn csv_header(&self) -> String {
        format!(
            "# tool: {} {}\n# log_base: {}\n# config_hash: {}\n",
            self.tool,
            self.version,
            self.log_base.as_str(),
            self.config_hash
        )
    }
}

#[derive(Debug, Clone, Serialize)]
struct Document<'a, T: Serialize> {
    metadata: &'a Metadata,
    result: &'a T,
}

/// Pretty JSON `{ "metadata": …, "result": … }` with a trailing newline.
pub fn to_json<T: Serialize>(meta: &Metadata, result: &T) -> serde_json::Result<String> {
    let mut s = serde_json::to_string_pretty(&Document { metadata: meta, result })?;
    s.push('\n');
    Ok(s)
}

/// Metadata comment block followed by the given CSV body.
pub fn to_csv(meta: &Metadata, body: &str) -> String {
    let mut s = meta.csv_header();
    s.push_str(body);
    s
}

/// CSV body from a header and rows of numbers, rendered in shortest
/// round-trip form so output is reproducible.
pub fn numeric_csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_json_layout() {
        let m = Metadata::new(LogBase::Nats, "abc");
        assert_eq!(
            m.csv_header(),
            format!("# tool: noma {TOOL_VERSION}\n# log_base: nats\n# config_hash: abc\n")
        );
        let j = to_json(&m, &vec![1.0, 2.5]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&j).unwrap();
        assert_eq!(v["metadata"]["log_base"], "nats");
        assert_eq!(v["result"][1], 2.5);
        assert_eq!(numeric_csv(&["a", "b"], &[vec![1.0, 0.25]]), "a,b\n1e0,2.5e-1\n");
        assert!((LogBase::Bits.factor() * std::f64::consts::LN_2 - 1.0).abs() < 1e-15);
    }
}
