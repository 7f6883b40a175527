use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One trained or measured configuration for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub arm: String,
    pub seed: u64,
    /// Deterministic metrics.
    pub metrics: BTreeMap<String, f64>,
    /// Wall-clock derived values; excluded from the JSON report.
    #[serde(skip)]
    pub timing: BTreeMap<String, f64>,
}

impl RunRecord {
    pub fn new(arm: impl Into<String>, seed: u64) -> Self {
        Self {
            arm: arm.into(),
            seed,
            metrics: BTreeMap::new(),
            timing: BTreeMap::new(),
        }
    }

    pub fn metric(mut self, name: &str, value: f64) -> Self {
        self.metrics.insert(name.to_string(), value);
        self
    }

    pub fn timing(mut self, name: &str, value: f64) -> Self {
        self.timing.insert(name.to_string(), value);
        self
    }
}

/// Median with whiskers of one metric over the seeds of one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub arm: String,
    pub metric: String,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
    pub seeds: Vec<u64>,
}

/// Per-epoch or per-step trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub arm: String,
    pub seed: u64,
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub id: String,
    pub config: serde_json::Value,
    pub runs: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
    pub series: Vec<Series>,
    pub notes: Vec<String>,
}

/// Median of a non-empty sample (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl ExperimentReport {
    pub fn new(id: impl Into<String>, config: serde_json::Value) -> Self {
        Self {
            id: id.into(),
            config,
            runs: Vec::new(),
            aggregates: Vec::new(),
            series: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Arms in first-appearance order.
    pub fn arms(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.runs
            .iter()
            .filter(|r| seen.insert(r.arm.clone()))
            .map(|r| r.arm.clone())
            .collect()
    }

    /// Recomputes `aggregates` from `runs` for every deterministic metric.
    pub fn aggregate(&mut self) {
        self.aggregates.clear();
        for arm in self.arms() {
            let runs: Vec<&RunRecord> = self.runs.iter().filter(|r| r.arm == arm).collect();
            let names: BTreeSet<&String> = runs.iter().flat_map(|r| r.metrics.keys()).collect();
            for name in names {
                let (values, seeds): (Vec<f64>, Vec<u64>) = runs
                    .iter()
                    .filter_map(|r| r.metrics.get(name).map(|v| (*v, r.seed)))
                    .unzip();
                self.aggregates.push(Aggregate {
                    arm: arm.clone(),
                    metric: name.clone(),
                    median: median(&values),
                    min: values.iter().copied().fold(f64::INFINITY, f64::min),
                    max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    n: values.len(),
                    seeds,
                });
            }
        }
    }

    pub fn find(&self, arm: &str, metric: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.arm == arm && a.metric == metric)
    }

    /// Median of a timing value over the seeds of an arm.
    pub fn timing_median(&self, arm: &str, name: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.arm == arm)
            .filter_map(|r| r.timing.get(name).copied())
            .collect();
        (!v.is_empty()).then(|| median(&v))
    }

    /// `arm,seed,<metrics...>,<timing...>`; timing columns come last so
    /// byte comparisons can drop them.
    pub fn runs_csv(&self) -> String {
        let metrics: BTreeSet<&String> = self.runs.iter().flat_map(|r| r.metrics.keys()).collect();
        let timing: BTreeSet<&String> = self.runs.iter().flat_map(|r| r.timing.keys()).collect();
        let mut out = String::from("arm,seed");
        for m in metrics.iter().chain(timing.iter()) {
            out.push(',');
            out.push_str(m);
        }
        out.push('\n');
        let cell = |v: Option<&f64>| v.map_or(String::new(), |v| v.to_string());
        for r in &self.runs {
            out.push_str(&format!("{},{}", r.arm, r.seed));
            for m in &metrics {
                out.push(',');
                out.push_str(&cell(r.metrics.get(*m)));
            }
            for m in &timing {
                out.push(',');
                out.push_str(&cell(r.timing.get(*m)));
            }
            out.push('\n');
        }
        out
    }

    pub fn aggregates_csv(&self) -> String {
        let mut out = String::from("arm,metric,median,min,max,n,seeds\n");
        for a in &self.aggregates {
            let seeds: Vec<String> = a.seeds.iter().map(u64::to_string).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                a.arm,
                a.metric,
                a.median,
                a.min,
                a.max,
                a.n,
                seeds.join(" ")
            ));
        }
        out
    }

    /// `arm,seed,name,index,value`.
    pub fn series_csv(&self) -> String {
        let mut out = String::from("arm,seed,name,index,value\n");
        for s in &self.series {
            for (i, v) in s.values.iter().enumerate() {
                out.push_str(&format!("{},{},{},{},{}\n", s.arm, s.seed, s.name, i, v));
            }
        }
        out
    }

    /// Writes `<id>.json`, `<id>_runs.csv`, `<id>_aggregates.csv` and, when
    /// there are traces, `<id>_series.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: String, text: String| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, text)?;
            written.push(path);
            Ok(())
        };
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        put(format!("{}.json", self.id), json)?;
        put(format!("{}_runs.csv", self.id), self.runs_csv())?;
        put(format!("{}_aggregates.csv", self.id), self.aggregates_csv())?;
        if !self.series.is_empty() {
            put(format!("{}_series.csv", self.id), self.series_csv())?;
        }
        Ok(written)
    }
}
