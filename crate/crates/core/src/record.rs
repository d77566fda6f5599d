//! Output of a simulation run: statistic time series, spell records and
//! duration summaries, with CSV/JSON writers.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::mcstats::{batch_means, Estimate, DEFAULT_BATCHES};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SpellRecord {
    pub dyad_type: usize,
    pub age: i64,
}

/// Run length and bookkeeping options shared by both simulators.
#[derive(Copy, Clone, Debug, Serialize)]
pub struct RunOptions {
    pub burn_in: usize,
    pub steps: usize,
    /// Record statistics every `thin` steps.
    pub thin: usize,
    /// Keep individual spell records (aggregates are always kept).
    pub keep_spells: bool,
}

impl RunOptions {
    pub fn new(burn_in: usize, steps: usize) -> Self {
        RunOptions {
            burn_in,
            steps,
            thin: 1,
            keep_spells: true,
        }
    }

    pub fn thin(mut self, thin: usize) -> Self {
        self.thin = thin.max(1);
        self
    }

    pub fn keep_spells(mut self, keep: bool) -> Self {
        self.keep_spells = keep;
        self
    }
}

/// Everything a simulation run produced.
#[derive(Clone, Debug, Serialize)]
pub struct SimulationRecord {
    pub terms: Vec<String>,
    /// Number of leading recorded rows that fall in the burn-in.
    pub burn_in_rows: usize,
    /// Time step of each recorded row.
    pub steps: Vec<u64>,
    /// One column per monitored term.
    #[serde(skip)]
    pub stat_series: Vec<Vec<f64>>,
    #[serde(skip)]
    pub completed_spells: Vec<SpellRecord>,
    #[serde(skip)]
    pub censored_spells: Vec<SpellRecord>,
    /// Per type, post burn-in: edge-steps at risk of dissolution.
    pub at_risk: Vec<u64>,
    /// Per type, post burn-in: dissolutions.
    pub dissolutions: Vec<u64>,
    /// Per type, post burn-in: summed age of completed spells.
    pub completed_age_sum: Vec<f64>,
    pub seed: u64,
    pub config: serde_json::Value,
}

/// Two estimators of the mean duration of one dyad type.
#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct DurationEstimate {
    pub completed_mean: f64,
    /// Edge-steps at risk per dissolution; unbiased under right-censoring.
    pub hazard_inverse: f64,
    pub completed: u64,
}

impl SimulationRecord {
    pub(crate) fn new(terms: Vec<String>, types: usize, seed: u64, config: serde_json::Value) -> Self {
        let k = terms.len();
        SimulationRecord {
            terms,
            burn_in_rows: 0,
            steps: Vec::new(),
            stat_series: vec![Vec::new(); k],
            completed_spells: Vec::new(),
            censored_spells: Vec::new(),
            at_risk: vec![0; types],
            dissolutions: vec![0; types],
            completed_age_sum: vec![0.0; types],
            seed,
            config,
        }
    }

    pub(crate) fn push_row(&mut self, step: u64, values: &[f64]) {
        self.steps.push(step);
        for (col, v) in self.stat_series.iter_mut().zip(values) {
            col.push(*v);
        }
    }

    pub(crate) fn record_dissolution(&mut self, dyad_type: usize, age: i64, keep: bool) {
        self.dissolutions[dyad_type - 1] += 1;
        self.completed_age_sum[dyad_type - 1] += age as f64;
        if keep {
            self.completed_spells.push(SpellRecord { dyad_type, age });
        }
    }

    pub fn term_index(&self, name: &str) -> Option<usize> {
        self.terms.iter().position(|t| t == name)
    }

    /// Post burn-in series for term `idx`.
    pub fn series(&self, idx: usize) -> &[f64] {
        &self.stat_series[idx][self.burn_in_rows..]
    }

    /// Post burn-in mean of term `idx` with a batch-means standard error.
    pub fn estimate(&self, idx: usize) -> Estimate {
        batch_means(self.series(idx), DEFAULT_BATCHES)
    }

    pub fn estimates(&self) -> Vec<Estimate> {
        (0..self.terms.len()).map(|i| self.estimate(i)).collect()
    }

    /// Per-type duration estimators; types without completed spells are
    /// omitted with a warning.
    pub fn mean_duration_estimates(&self) -> BTreeMap<usize, DurationEstimate> {
        let mut out = BTreeMap::new();
        for k in 0..self.dissolutions.len() {
            let n = self.dissolutions[k];
            if n == 0 {
                log::warn!("no completed spells for dyad type {}; omitted", k + 1);
                continue;
            }
            out.insert(
                k + 1,
                DurationEstimate {
                    completed_mean: self.completed_age_sum[k] / n as f64,
                    hazard_inverse: self.at_risk[k] as f64 / n as f64,
                    completed: n,
                },
            );
        }
        out
    }

    /// `step,<term>...` with one row per recorded step.
    pub fn write_stats_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,{}", self.terms.join(","))?;
        for (row, step) in self.steps.iter().enumerate() {
            write!(w, "{step}")?;
            for col in &self.stat_series {
                write!(w, ",{}", col[row])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// `type,age,censored`.
    pub fn write_spells_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "type,age,censored")?;
        for s in &self.completed_spells {
            writeln!(w, "{},{},0", s.dyad_type, s.age)?;
        }
        for s in &self.censored_spells {
            writeln!(w, "{},{},1", s.dyad_type, s.age)?;
        }
        Ok(())
    }

    /// Writes stats.csv, spells.csv and summary.json into `dir`.
    pub fn write_outputs(&self, dir: &Path, targets: Option<&[f64]>) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let f = std::io::BufWriter::new(std::fs::File::create(dir.join("stats.csv"))?);
        self.write_stats_csv(f)?;
        let f = std::io::BufWriter::new(std::fs::File::create(dir.join("spells.csv"))?);
        self.write_spells_csv(f)?;
        let summary = self.summary(targets);
        std::fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&summary).expect("summary serializes"),
        )?;
        Ok(())
    }

    pub fn summary(&self, targets: Option<&[f64]>) -> serde_json::Value {
        let estimates = self.estimates();
        let stats: Vec<serde_json::Value> = self
            .terms
            .iter()
            .zip(&estimates)
            .enumerate()
            .map(|(i, (t, e))| {
                let mut v = serde_json::json!({ "term": t, "mean": e.mean, "se": e.se });
                if let Some(target) = targets.and_then(|ts| ts.get(i)) {
                    let rel = e.relative_to(*target);
                    v["target"] = serde_json::json!(target);
                    v["rel_error"] = serde_json::json!(rel.mean);
                    v["rel_error_se"] = serde_json::json!(rel.se);
                }
                v
            })
            .collect();
        let durations: BTreeMap<String, DurationEstimate> = self
            .mean_duration_estimates()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        serde_json::json!({
            "seed": self.seed,
            "rows": self.steps.len(),
            "burn_in_rows": self.burn_in_rows,
            "statistics": stats,
            "durations": durations,
            "completed_spells": self.dissolutions.iter().sum::<u64>(),
            "censored_spells": self.censored_spells.len(),
            "config": self.config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duration_estimators() {
        let mut rec = SimulationRecord::new(vec![], 2, 0, serde_json::Value::Null);
        for _ in 0..4 {
            rec.record_dissolution(1, 5, true);
        }
        rec.at_risk[0] = 20;
        let est = rec.mean_duration_estimates();
        assert_eq!(est.len(), 1);
        assert_eq!(est[&1].completed_mean, 5.0);
        assert_eq!(est[&1].hazard_inverse, 5.0);
    }

    #[test]
    fn csv_layout() {
        let mut rec = SimulationRecord::new(vec!["edges".into(), "degree(1)".into()], 1, 3, serde_json::Value::Null);
        rec.push_row(1, &[2.0, 4.0]);
        rec.push_row(2, &[1.0, 2.0]);
        rec.record_dissolution(1, 3, true);
        rec.censored_spells.push(SpellRecord { dyad_type: 1, age: 1 });
        let mut buf = Vec::new();
        rec.write_stats_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,edges,degree(1)\n1,2,4\n2,1,2\n");
        let mut buf = Vec::new();
        rec.write_spells_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "type,age,censored\n1,3,0\n1,1,1\n");
    }
}
