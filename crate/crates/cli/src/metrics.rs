//! Run metrics: per-seed rows, exact aggregates, and a stable on-disk table.
//!
//! The metrics file is the determinism contract's surface: identical configs
//! must reproduce it byte for byte. Rows and columns are emitted in a fixed
//! order and floats are printed with the shortest round-trip representation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// Measurements from one seed's complete training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    /// Fraction of parsed demonstrations whose replay solves the task.
    pub replay_success: f64,
    /// Mean parsed segments per demonstration.
    pub mean_seq_len: f64,
    /// Mean demonstration length in frames.
    pub mean_demo_len: f64,
    /// Type accuracy of the inverse model on the held-out split.
    pub idm_holdout_accuracy: f64,
    /// Full-pipeline policy success rate.
    pub policy_success: f64,
    /// Flat behavioral-cloning success rate.
    pub baseline_success: f64,
    /// Success rate per enabled ablation variant.
    pub ablation_success: BTreeMap<String, f64>,
}

impl SeedMetrics {
    /// Parsed-sequence compression: primitives per demonstration frame.
    pub fn compression(&self) -> f64 {
        self.mean_seq_len / self.mean_demo_len
    }
}

/// All rows of one run plus their exact aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub seeds: Vec<SeedMetrics>,
    /// Metric name -> (mean, population standard deviation) over seeds.
    pub aggregate: BTreeMap<String, (f64, f64)>,
}

/// Mean and population standard deviation.
pub fn aggregate(values: &[f64]) -> (f64, f64) {
    assert!(!values.is_empty(), "cannot aggregate zero values");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fixed column set for the given variant list (order is part of the format).
fn columns(variants: &[String]) -> Vec<String> {
    let mut cols: Vec<String> = [
        "replay_success",
        "mean_seq_len",
        "mean_demo_len",
        "compression",
        "idm_holdout_accuracy",
        "policy_success",
        "baseline_success",
    ]
    .into_iter()
    .map(str::to_string)
    .collect();
    cols.extend(variants.iter().map(|v| format!("{v}_success")));
    cols
}

fn metric_value(row: &SeedMetrics, metric: &str) -> f64 {
    match metric {
        "replay_success" => row.replay_success,
        "mean_seq_len" => row.mean_seq_len,
        "mean_demo_len" => row.mean_demo_len,
        "compression" => row.compression(),
        "idm_holdout_accuracy" => row.idm_holdout_accuracy,
        "policy_success" => row.policy_success,
        "baseline_success" => row.baseline_success,
        other => {
            let variant = other
                .strip_suffix("_success")
                .expect("unknown metric column");
            row.ablation_success[variant]
        }
    }
}

impl MetricsReport {
    /// Assemble a report from per-seed rows, computing aggregates for every
    /// column.
    pub fn from_rows(task: &str, seeds: Vec<SeedMetrics>) -> MetricsReport {
        assert!(!seeds.is_empty(), "a report needs at least one seed row");
        let variants: Vec<String> = seeds[0].ablation_success.keys().cloned().collect();
        let mut agg = BTreeMap::new();
        for metric in columns(&variants) {
            let values: Vec<f64> = seeds.iter().map(|row| metric_value(row, &metric)).collect();
            agg.insert(metric, aggregate(&values));
        }
        MetricsReport {
            task: task.to_string(),
            seeds,
            aggregate: agg,
        }
    }

    fn variants(&self) -> Vec<String> {
        self.seeds[0].ablation_success.keys().cloned().collect()
    }

    /// Serialize the table. Layout: a comment line naming the task, a header,
    /// one row per seed, then `mean` and `std` rows.
    pub fn to_csv(&self) -> String {
        let variants = self.variants();
        let cols = columns(&variants);
        let mut out = format!("# task: {}\n", self.task);
        out.push_str("seed,");
        out.push_str(&cols.join(","));
        out.push('\n');
        for row in &self.seeds {
            out.push_str(&row.seed.to_string());
            for metric in &cols {
                out.push(',');
                out.push_str(&metric_value(row, metric).to_string());
            }
            out.push('\n');
        }
        for (label, pick) in [("mean", 0usize), ("std", 1usize)] {
            out.push_str(label);
            for metric in &cols {
                let pair = self.aggregate[metric];
                let v = if pick == 0 { pair.0 } else { pair.1 };
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_csv()).map_err(|e| HarnessError::Stage {
            stage: "report".into(),
            source: Box::new(e),
        })
    }

    /// Read a table produced by [`MetricsReport::to_csv`].
    pub fn read_csv(path: &Path) -> Result<MetricsReport, HarnessError> {
        let corrupt = |msg: String| HarnessError::Config(format!("{}: {msg}", path.display()));
        let text = std::fs::read_to_string(path)
            .map_err(|e| corrupt(format!("unreadable metrics table: {e}")))?;
        let mut lines = text.lines();
        let task = lines
            .next()
            .and_then(|l| l.strip_prefix("# task: "))
            .ok_or_else(|| corrupt("missing task line".into()))?
            .to_string();
        let header = lines
            .next()
            .ok_or_else(|| corrupt("missing header".into()))?;
        let cols: Vec<&str> = header.split(',').skip(1).collect();
        let variants: Vec<String> = cols
            .iter()
            .filter(|c| {
                ![
                    "replay_success",
                    "mean_seq_len",
                    "mean_demo_len",
                    "compression",
                    "idm_holdout_accuracy",
                    "policy_success",
                    "baseline_success",
                ]
                .contains(*c)
            })
            .map(|c| {
                c.strip_suffix("_success")
                    .map(str::to_string)
                    .ok_or_else(|| corrupt(format!("unknown column {c}")))
            })
            .collect::<Result<_, _>>()?;

        let mut seeds = Vec::new();
        let mut aggregate = BTreeMap::new();
        for line in lines {
            let mut fields = line.split(',');
            let label = fields.next().ok_or_else(|| corrupt("empty row".into()))?;
            let values: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| corrupt(format!("bad number {f:?}: {e}")))
                })
                .collect::<Result<_, _>>()?;
            if values.len() != cols.len() {
                return Err(corrupt(format!("row {label} has {} fields", values.len())));
            }
            let by_col = |name: &str| values[cols.iter().position(|c| *c == name).unwrap()];
            match label {
                "mean" => {
                    for (c, v) in cols.iter().zip(&values) {
                        aggregate.entry(c.to_string()).or_insert((0.0, 0.0)).0 = *v;
                    }
                }
                "std" => {
                    for (c, v) in cols.iter().zip(&values) {
                        aggregate.entry(c.to_string()).or_insert((0.0, 0.0)).1 = *v;
                    }
                }
                seed => seeds.push(SeedMetrics {
                    seed: seed
                        .parse()
                        .map_err(|e| corrupt(format!("bad seed {seed:?}: {e}")))?,
                    replay_success: by_col("replay_success"),
                    mean_seq_len: by_col("mean_seq_len"),
                    mean_demo_len: by_col("mean_demo_len"),
                    idm_holdout_accuracy: by_col("idm_holdout_accuracy"),
                    policy_success: by_col("policy_success"),
                    baseline_success: by_col("baseline_success"),
                    ablation_success: variants
                        .iter()
                        .map(|v| (v.clone(), by_col(&format!("{v}_success"))))
                        .collect(),
                }),
            }
        }
        if seeds.is_empty() {
            return Err(corrupt("no seed rows".into()));
        }
        Ok(MetricsReport {
            task,
            seeds,
            aggregate,
        })
    }

    /// Success-rate table with one row per policy variant. The unablated
    /// policy is the `full` row; ablations follow under their flag names.
    pub fn ablation_csv(&self) -> String {
        let mut out = String::from("variant,mean,std\n");
        let (mean, std) = self.aggregate["policy_success"];
        out.push_str(&format!("full,{mean},{std}\n"));
        for variant in self.variants() {
            let (mean, std) = self.aggregate[&format!("{variant}_success")];
            out.push_str(&format!("{variant},{mean},{std}\n"));
        }
        out
    }

    /// Emit one `x,y` series per metric (x = seed) for external plotting.
    /// Returns the files written, in emission order.
    pub fn write_plots(&self, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
        let io_err = |e: std::io::Error| HarnessError::Stage {
            stage: "report".into(),
            source: Box::new(e),
        };
        std::fs::create_dir_all(dir).map_err(io_err)?;
        let mut written = Vec::new();
        for metric in columns(&self.variants()) {
            let mut series = String::from("x,y\n");
            for row in &self.seeds {
                series.push_str(&format!("{},{}\n", row.seed, metric_value(row, &metric)));
            }
            let path = dir.join(format!("{metric}.csv"));
            std::fs::write(&path, series).map_err(io_err)?;
            written.push(path);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> MetricsReport {
        let rows: Vec<SeedMetrics> = (0..3)
            .map(|seed| SeedMetrics {
                seed,
                replay_success: 0.9 + 0.01 * seed as f64,
                mean_seq_len: 4.0 + seed as f64 * 0.125,
                mean_demo_len: 120.0,
                idm_holdout_accuracy: 0.95,
                policy_success: 0.8,
                baseline_success: 0.3,
                ablation_success: BTreeMap::from([
                    ("greedy_parse".to_string(), 0.7 + 0.01 * seed as f64),
                    ("no_pretrain".to_string(), 0.6),
                ]),
            })
            .collect();
        MetricsReport::from_rows("pick_place_lite", rows)
    }

    #[test]
    fn aggregates_match_recomputation_exactly() {
        let report = sample_report();
        let replay: Vec<f64> = report.seeds.iter().map(|r| r.replay_success).collect();
        assert_eq!(report.aggregate["replay_success"], aggregate(&replay));
        let greedy: Vec<f64> = report
            .seeds
            .iter()
            .map(|r| r.ablation_success["greedy_parse"])
            .collect();
        assert_eq!(report.aggregate["greedy_parse_success"], aggregate(&greedy));
        let compression: Vec<f64> = report.seeds.iter().map(|r| r.compression()).collect();
        assert_eq!(report.aggregate["compression"], aggregate(&compression));
    }

    #[test]
    fn aggregate_handles_constant_and_varied_series() {
        assert_eq!(aggregate(&[2.0, 2.0, 2.0]), (2.0, 0.0));
        let (mean, std) = aggregate(&[1.0, 3.0]);
        assert_eq!(mean, 2.0);
        assert_eq!(std, 1.0);
    }

    #[test]
    fn csv_round_trips_through_its_reader() {
        let report = sample_report();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        report.write_csv(&path).unwrap();
        let back = MetricsReport::read_csv(&path).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn csv_emission_is_stable() {
        let report = sample_report();
        assert_eq!(report.to_csv(), report.to_csv());
        let header = report.to_csv().lines().nth(1).unwrap().to_string();
        assert_eq!(
            header,
            "seed,replay_success,mean_seq_len,mean_demo_len,compression,\
             idm_holdout_accuracy,policy_success,baseline_success,\
             greedy_parse_success,no_pretrain_success"
        );
    }

    #[test]
    fn compression_divides_sequence_by_demo_length() {
        let report = sample_report();
        let row = &report.seeds[0];
        assert_eq!(row.compression(), 4.0 / 120.0);
        let line = report
            .to_csv()
            .lines()
            .nth(2)
            .unwrap()
            .split(',')
            .nth(4)
            .unwrap()
            .to_string();
        assert_eq!(line, (4.0 / 120.0).to_string());
    }

    #[test]
    fn ablation_rows_carry_the_variant_names() {
        let table = sample_report().ablation_csv();
        let names: Vec<&str> = table
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap())
            .collect();
        assert_eq!(names, ["full", "greedy_parse", "no_pretrain"]);
        let full: Vec<&str> = table.lines().nth(1).unwrap().split(',').collect();
        let (mean, std) = sample_report().aggregate["policy_success"];
        assert_eq!(full[1], mean.to_string());
        assert_eq!(full[2], std.to_string());
    }

    #[test]
    fn plots_emit_one_series_per_metric() {
        let report = sample_report();
        let dir = tempfile::tempdir().unwrap();
        let files = report.write_plots(dir.path()).unwrap();
        assert_eq!(files.len(), 9);
        let policy = std::fs::read_to_string(dir.path().join("policy_success.csv")).unwrap();
        assert_eq!(policy.lines().next().unwrap(), "x,y");
        assert_eq!(policy.lines().count(), 4);
    }
}
