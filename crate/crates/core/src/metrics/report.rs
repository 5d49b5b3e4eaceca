use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub id: String,
    pub value: f64,
}

/// Named metric values in insertion order, an optional per-item breakdown,
/// and the settings that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub metrics: Vec<(String, f64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub items: Vec<ItemScore>,
    #[serde(default)]
    pub config: BTreeMap<String, serde_json::Value>,
}

impl EvalReport {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            metrics: Vec::new(),
            items: Vec::new(),
            config: BTreeMap::new(),
        }
    }

    pub fn metric(&mut self, key: impl Into<String>, value: f64) -> &mut Self {
        self.metrics.push((key.into(), value));
        self
    }

    pub fn config(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.config.insert(key.to_string(), v);
        self
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    /// One row of metric names over one row of values, columns aligned.
    pub fn to_table(&self) -> String {
        let cells: Vec<(String, String)> = self
            .metrics
            .iter()
            .map(|(k, v)| (k.clone(), format!("{v:.2}")))
            .collect();
        let widths: Vec<usize> = cells.iter().map(|(k, v)| k.len().max(v.len())).collect();
        let mut out = String::new();
        for row in [0, 1] {
            let line: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|((k, v), &w)| format!("{:>w$}", if row == 0 { k } else { v }))
                .collect();
            let _ = writeln!(out, "{}", line.join("  "));
        }
        out
    }
}
