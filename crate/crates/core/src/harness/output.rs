use std::fmt::Write as _;
use std::path::Path;

use crate::agents::PolicyKind;

use super::HarnessError;

/// Per-round mean and population standard deviation of cumulative
/// per-agent regret across trials, with the raw traces kept.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    pub rounds: usize,
    /// Sorted by name.
    pub policies: Vec<PolicyKind>,
    /// `mean[i][t]` for `policies[i]`.
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    /// `raw[i][trial][t]`
    pub raw: Vec<Vec<Vec<f64>>>,
}

impl RegretTrace {
    fn index(&self, policy: PolicyKind) -> Option<usize> {
        self.policies.iter().position(|&p| p == policy)
    }

    pub fn final_mean(&self, policy: PolicyKind) -> Option<f64> {
        self.index(policy).and_then(|i| self.mean[i].last().copied())
    }

    pub fn final_std(&self, policy: PolicyKind) -> Option<f64> {
        self.index(policy).and_then(|i| self.std[i].last().copied())
    }

    /// Final cumulative regret of every trial.
    pub fn final_values(&self, policy: PolicyKind) -> Option<Vec<f64>> {
        self.index(policy)
            .map(|i| self.raw[i].iter().filter_map(|t| t.last().copied()).collect())
    }
}

pub fn aggregate(traces: &[(PolicyKind, Vec<Vec<f64>>)]) -> Result<RegretTrace, HarnessError> {
    let mut sorted: Vec<&(PolicyKind, Vec<Vec<f64>>)> = traces.iter().collect();
    sorted.sort_by_key(|(p, _)| *p);
    let rounds = sorted
        .first()
        .and_then(|(_, t)| t.first())
        .map(Vec::len)
        .ok_or_else(|| HarnessError::Aggregate("no traces".into()))?;
    let mut out = RegretTrace {
        rounds,
        policies: Vec::new(),
        mean: Vec::new(),
        std: Vec::new(),
        raw: Vec::new(),
    };
    for (policy, runs) in sorted {
        if runs.is_empty() {
            return Err(HarnessError::Aggregate(format!("policy {policy} has no trials")));
        }
        if runs.iter().any(|r| r.len() != rounds) {
            return Err(HarnessError::Aggregate(format!("policy {policy} has traces of mismatched length")));
        }
        let k = runs.len() as f64;
        let mut mean = Vec::with_capacity(rounds);
        let mut std = Vec::with_capacity(rounds);
        for t in 0..rounds {
            let m = runs.iter().map(|r| r[t]).sum::<f64>() / k;
            let var = runs.iter().map(|r| (r[t] - m).powi(2)).sum::<f64>() / k;
            mean.push(m);
            std.push(var.sqrt());
        }
        out.policies.push(*policy);
        out.mean.push(mean);
        out.std.push(std);
        out.raw.push(runs.clone());
    }
    Ok(out)
}

pub const CSV_HEADER: &str = "round,policy,mean_per_agent_regret,std_per_agent_regret";

pub fn csv_string(trace: &RegretTrace) -> String {
    let mut s = String::new();
    s.push_str(CSV_HEADER);
    s.push('\n');
    for t in 0..trace.rounds {
        for (i, p) in trace.policies.iter().enumerate() {
            writeln!(s, "{},{},{:.16e},{:.16e}", t + 1, p, trace.mean[i][t], trace.std[i][t]).expect("string write");
        }
    }
    s
}

pub fn write_csv(trace: &RegretTrace, path: &Path) -> Result<(), HarnessError> {
    std::fs::write(path, csv_string(trace)).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}
