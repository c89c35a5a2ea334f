use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{compute_metrics, significance_test, summarize_folds, EpisodeResult, MetricsError, PolicyKind, RunSummary};
use crate::usersim::{Patience, UserProfile};

/// One line of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLogRecord {
    pub policy: PolicyKind,
    pub rho: Patience,
    pub tau: u32,
    pub fold: usize,
    #[serde(flatten)]
    pub result: EpisodeResult,
}

pub fn write_episode_log<W: Write>(mut out: W, records: &[EpisodeLogRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_episode_log<R: BufRead>(input: R) -> io::Result<Vec<EpisodeLogRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// All episodes one policy played against one user profile, tagged by fold.
#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub policy: PolicyKind,
    pub profile: UserProfile,
    pub results: Vec<(usize, EpisodeResult)>,
}

impl PolicyRun {
    pub fn log_records(&self) -> Vec<EpisodeLogRecord> {
        self.results
            .iter()
            .map(|(fold, r)| EpisodeLogRecord {
                policy: self.policy,
                rho: self.profile.patience,
                tau: self.profile.tolerance,
                fold: *fold,
                result: r.clone(),
            })
            .collect()
    }

    fn by_fold(&self) -> Vec<(usize, Vec<EpisodeResult>)> {
        let mut m: BTreeMap<usize, Vec<EpisodeResult>> = BTreeMap::new();
        for (f, r) in &self.results {
            m.entry(*f).or_default().push(r.clone());
        }
        m.into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub policy: PolicyKind,
    pub rho: Patience,
    pub tau: u32,
    pub summary: RunSummary,
    /// MRR p-value against the best baseline of the same profile; only for
    /// the Q-network policies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compared_to: Option<PolicyKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

fn paired_rr(a: &PolicyRun, b: &PolicyRun) -> (Vec<f64>, Vec<f64>) {
    let index: BTreeMap<&str, f64> = b
        .results
        .iter()
        .map(|(_, r)| (r.conversation_id.as_str(), r.rr))
        .collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut own: Vec<(&str, f64)> = a.results.iter().map(|(_, r)| (r.conversation_id.as_str(), r.rr)).collect();
    own.sort_by(|x, y| x.0.cmp(y.0));
    for (id, rr) in own {
        if let Some(&other) = index.get(id) {
            xs.push(rr);
            ys.push(other);
        }
    }
    (xs, ys)
}

/// Summarizes every run, grouped by (ρ, τ) and ordered by policy.
pub fn build_report(runs: &[PolicyRun], n_resamples: usize, seed: u64) -> Result<Report, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let mut groups: BTreeMap<(Patience, u32), Vec<(&PolicyRun, RunSummary)>> = BTreeMap::new();
    for run in runs {
        let summary = summarize_folds(&run.by_fold())?;
        groups
            .entry((run.profile.patience, run.profile.tolerance))
            .or_default()
            .push((run, summary));
    }
    let mut rows = Vec::new();
    for ((rho, tau), mut entries) in groups {
        entries.sort_by_key(|(r, _)| r.policy);
        let best_baseline = entries
            .iter()
            .filter(|(r, _)| r.policy.is_baseline())
            .max_by(|a, b| {
                a.1.mrr
                    .total_cmp(&b.1.mrr)
                    .then_with(|| b.0.policy.cmp(&a.0.policy))
            })
            .map(|(r, _)| *r);
        for (run, summary) in &entries {
            let (p_value, compared_to) = match (run.policy.mask(), best_baseline) {
                (Some(_), Some(base)) => {
                    let (xs, ys) = paired_rr(run, base);
                    if xs.is_empty() {
                        (None, None)
                    } else {
                        let r = significance_test(&xs, &ys, n_resamples, seed)?;
                        (Some(r.p_value), Some(base.policy))
                    }
                }
                _ => (None, None),
            };
            rows.push(ReportRow {
                policy: run.policy,
                rho,
                tau,
                summary: summary.clone(),
                p_value,
                compared_to,
            });
        }
    }
    Ok(Report { rows })
}

fn marker(row: &ReportRow) -> &'static str {
    match row.p_value {
        Some(p) if p < 0.01 && row.summary.mrr > 0.0 => "‡",
        Some(p) if p < 0.05 && row.summary.mrr > 0.0 => "†",
        _ => "",
    }
}

/// Aligned text table. Numbers are printed with six decimals.
pub fn format_report(report: &Report) -> String {
    let mut s = String::new();
    let mut current: Option<(Patience, u32)> = None;
    for row in &report.rows {
        if current != Some((row.rho, row.tau)) {
            if current.is_some() {
                s.push('\n');
            }
            current = Some((row.rho, row.tau));
            let _ = writeln!(s, "rho={} tau={}", row.rho, row.tau);
            let _ = writeln!(s, "{:<10} {:>10} {:>10} {:>10} {:>8}", "policy", "R@1/N", "MRR", "Dec. err", "n");
        }
        let _ = writeln!(
            s,
            "{:<10} {:>10.6} {:>10.6} {:>10.6} {:>8}{}",
            row.policy.name(),
            row.summary.recall_at_1,
            row.summary.mrr,
            row.summary.decision_error_rate,
            row.summary.episodes,
            match marker(row) {
                "" => String::new(),
                m => format!(" {m}"),
            }
        );
    }
    if report.rows.iter().any(|r| r.p_value.is_some()) {
        s.push_str("\n† p < 0.05, ‡ p < 0.01 (paired bootstrap on per-episode RR vs. best baseline)\n");
    }
    s
}

/// Writes `summary.json` and `report.txt` into `dir`.
pub fn write_report(report: &Report, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(report).map_err(io::Error::other)?;
    json.push('\n');
    fs::write(dir.join("summary.json"), json)?;
    let mut f = BufWriter::new(fs::File::create(dir.join("report.txt"))?);
    f.write_all(format_report(report).as_bytes())?;
    f.flush()
}

/// Recomputes a summary from log records alone.
pub fn summary_from_log(records: &[EpisodeLogRecord]) -> Result<RunSummary, MetricsError> {
    let results: Vec<EpisodeResult> = records.iter().map(|r| r.result.clone()).collect();
    compute_metrics(&results)
}
