//! Run reports: JSON for machines, an aligned table for people, CSV for
//! sweeps. Reports carry no timestamps so reruns are byte-identical.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// Sample too small to judge.
    Inconclusive,
    /// Reported without a pass bar.
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub threshold: String,
    pub value: f64,
    pub status: Status,
}

impl Criterion {
    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Self::judged(name, format!("<= {bound}"), value, value <= bound)
    }

    pub fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Self::judged(name, format!(">= {bound}"), value, value >= bound)
    }

    pub fn within(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Self::judged(name, format!("in [{lo}, {hi}]"), value, (lo..=hi).contains(&value))
    }

    pub fn info(name: &str, value: f64) -> Self {
        Self { name: name.into(), threshold: "none".into(), value, status: Status::Info }
    }

    fn judged(name: &str, threshold: String, value: f64, ok: bool) -> Self {
        let status = if ok { Status::Pass } else { Status::Fail };
        Self { name: name.into(), threshold, value, status }
    }

    pub fn inconclusive(mut self) -> Self {
        self.status = Status::Inconclusive;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config: Map<String, Value>,
    pub seed: Option<u64>,
    pub metrics: Map<String, Value>,
    pub criteria: Vec<Criterion>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;

impl RunReport {
    pub fn new(command: &str, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            config: Map::new(),
            seed,
            metrics: Map::new(),
            criteria: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn config(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.config.insert(key.into(), value.into());
        self
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("metric values serialize");
        self.metrics.insert(key.into(), v);
    }

    pub fn criterion(&mut self, c: Criterion) {
        self.criteria.push(c);
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    /// Any failure wins; otherwise an inconclusive criterion; otherwise pass.
    pub fn exit_code(&self) -> i32 {
        let has = |s| self.criteria.iter().any(|c| c.status == s);
        if has(Status::Fail) {
            EXIT_FAIL
        } else if has(Status::Inconclusive) {
            EXIT_INCONCLUSIVE
        } else {
            EXIT_PASS
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// `section,key,value,threshold,status` rows; nested metric objects are
    /// flattened with dotted keys.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut row = |fields: [&str; 5]| w.write_record(fields).expect("in-memory csv write");
        row(["section", "key", "value", "threshold", "status"]);
        row(["run", "command", &self.command, "", ""]);
        if let Some(seed) = self.seed {
            row(["run", "seed", &seed.to_string(), "", ""]);
        }
        for (k, v) in flatten(&self.config) {
            row(["config", &k, &v, "", ""]);
        }
        for (k, v) in flatten(&self.metrics) {
            row(["metric", &k, &v, "", ""]);
        }
        for c in &self.criteria {
            row(["criterion", &c.name, &c.value.to_string(), &c.threshold, status_str(c.status)]);
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let seed = self.seed.map(|s| format!("  seed {s}")).unwrap_or_default();
        writeln!(out, "{}{seed}", self.command).unwrap();
        let cfg: Vec<String> = flatten(&self.config).into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        if !cfg.is_empty() {
            writeln!(out, "  {}", cfg.join(" ")).unwrap();
        }
        let metrics = flatten(&self.metrics);
        let width = metrics.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in &metrics {
            writeln!(out, "  {k:<width$}  {v}").unwrap();
        }
        if !self.criteria.is_empty() {
            let width = self.criteria.iter().map(|c| c.name.len()).max().unwrap_or(0);
            writeln!(out).unwrap();
            for c in &self.criteria {
                let status = status_str(c.status).to_uppercase();
                writeln!(out, "  {status:<12} {:<width$}  {}  ({})", c.name, c.value, c.threshold).unwrap();
            }
        }
        for n in &self.notes {
            writeln!(out, "  note: {n}").unwrap();
        }
        out
    }
}

fn status_str(s: Status) -> &'static str {
    match s {
        Status::Pass => "pass",
        Status::Fail => "fail",
        Status::Inconclusive => "inconclusive",
        Status::Info => "info",
    }
}

fn flatten(map: &Map<String, Value>) -> Vec<(String, String)> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        match v {
            Value::Object(m) => {
                for (k, v) in m {
                    walk(&format!("{prefix}.{k}"), v, out);
                }
            }
            Value::String(s) => out.push((prefix.into(), s.clone())),
            other => out.push((prefix.into(), other.to_string())),
        }
    }
    let mut out = Vec::new();
    for (k, v) in map {
        walk(k, v, &mut out);
    }
    out
}
