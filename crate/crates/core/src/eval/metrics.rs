use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::similarity::similarity;
use super::EvalError;
use crate::pipeline::CompileReport;

/// Spread of N pipelines generated from one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub n: usize,
    pub avg_sim: f64,
    pub min_sim: f64,
    pub median_sim: f64,
    /// Population standard deviation of the pairwise similarities.
    pub std_sim: f64,
    /// `1 - avg_sim`; the tabulated "variance" column is this identity.
    pub variance_col: f64,
    pub unique_versions: usize,
    pub duplication_gini: f64,
}

/// Statistics over all unordered pairs of `texts`; versions are distinct
/// byte strings.
pub fn variance_report<S: AsRef<str>>(texts: &[S]) -> Result<VarianceReport, EvalError> {
    let n = texts.len();
    if n < 2 {
        return Err(EvalError::Usage(format!("variance needs at least 2 pipelines, got {n}")));
    }
    let mut sims = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            sims.push(similarity(texts[i].as_ref(), texts[j].as_ref()));
        }
    }
    let count = sims.len() as f64;
    let avg = sims.iter().sum::<f64>() / count;
    let std = (sims.iter().map(|s| (s - avg).powi(2)).sum::<f64>() / count).sqrt();
    sims.sort_by(f64::total_cmp);
    let mid = sims.len() / 2;
    let median = if sims.len() % 2 == 1 { sims[mid] } else { (sims[mid - 1] + sims[mid]) / 2.0 };

    let mut versions: BTreeMap<&str, u64> = BTreeMap::new();
    for t in texts {
        *versions.entry(t.as_ref()).or_insert(0) += 1;
    }
    let counts: Vec<u64> = versions.values().copied().collect();
    Ok(VarianceReport {
        n,
        avg_sim: avg,
        min_sim: sims[0],
        median_sim: median,
        std_sim: std,
        variance_col: 1.0 - avg,
        unique_versions: counts.len(),
        duplication_gini: duplication_gini(&counts)?,
    })
}

/// Gini coefficient of how often each distinct version occurs:
/// `sum_i sum_j |c_i - c_j| / (2 n^2 mean)`.
pub fn duplication_gini(counts: &[u64]) -> Result<f64, EvalError> {
    if counts.is_empty() {
        return Err(EvalError::Usage("duplication Gini needs at least one version".into()));
    }
    if counts.contains(&0) {
        return Err(EvalError::Usage("version counts must be at least 1".into()));
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<u64>() as f64 / n;
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    // Sum of |c_i - c_j| over ordered pairs, from the sorted prefix sums.
    let mut prefix = 0u128;
    let mut abs_sum = 0u128;
    for (k, &c) in sorted.iter().enumerate() {
        abs_sum += (c as u128) * (k as u128) - prefix;
        prefix += c as u128;
    }
    Ok(2.0 * abs_sum as f64 / (2.0 * n * n * mean))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompileStats {
    pub runs: usize,
    /// Compiled share of components per run, in `[0, 1]`.
    pub per_run: Vec<f64>,
    /// Mean per-run share, in percent.
    pub sc: f64,
    /// Percent of runs whose whole pipeline compiled.
    pub spc: f64,
    /// Manual edits needed to make the output usable; recorded, not computed.
    pub edits_needed: u32,
}

pub fn compile_stats(runs: &[CompileReport], edits_needed: u32) -> Result<CompileStats, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::Usage("compile statistics need at least one run".into()));
    }
    let per_run: Vec<f64> = runs.iter().map(CompileReport::compiled_fraction).collect();
    let full = runs.iter().filter(|r| r.pipeline_ok && r.compiled_fraction() == 1.0).count();
    Ok(CompileStats {
        runs: runs.len(),
        sc: 100.0 * per_run.iter().sum::<f64>() / runs.len() as f64,
        spc: 100.0 * full as f64 / runs.len() as f64,
        per_run,
        edits_needed,
    })
}
