use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::BenchConfig;
use super::serve::Server;
use crate::error::{Error, Result};
use crate::eval::Report;

pub const BENCH_COLUMNS: [&str; 6] = ["module", "requests", "mean_ms", "p95_ms", "qps", "relative"];

pub const MODULES: [&str; 3] = ["classification", "summarization", "explanation"];

/// One benchmark request: raw job text and profile text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRequest {
    pub job: String,
    pub profile: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleStats {
    pub module: String,
    pub requests: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    /// Requests per second of busy time.
    pub qps: f64,
    /// `qps` over the explanation module's `qps`.
    pub relative: f64,
}

/// Nearest-rank percentile of unsorted samples.
pub fn percentile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("percentile of no samples".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((q * s.len() as f64).ceil() as usize).clamp(1, s.len());
    Ok(s[rank - 1])
}

fn stats(module: &str, latencies: &[f64]) -> Result<ModuleStats> {
    let busy: f64 = latencies.iter().sum();
    let n = latencies.len();
    Ok(ModuleStats {
        module: module.to_string(),
        requests: n,
        mean_ms: busy / n as f64 * 1e3,
        p95_ms: percentile(latencies, 0.95)? * 1e3,
        qps: n as f64 / busy.max(f64::MIN_POSITIVE),
        relative: 0.0,
    })
}

/// Replays `rounds` rounds of the request mix. Each round issues
/// `classification` fit requests, `summarization` compression requests
/// and `explanation` explanation requests, interleaved evenly. Fit and
/// explanation requests use the stored compressed job, as in serving;
/// requests cycle through `requests`.
pub fn bench(
    server: &Server,
    requests: &[BenchRequest],
    mix: &BenchConfig,
) -> Result<Vec<ModuleStats>> {
    let counts = [mix.classification, mix.summarization, mix.explanation];
    if requests.is_empty() || mix.rounds == 0 || counts.contains(&0) {
        return Err(Error::InvalidInput(
            "benchmark needs requests, rounds and nonzero module counts".into(),
        ));
    }
    let stored = requests
        .iter()
        .map(|r| {
            Ok((
                server.summarize(&r.job)?.tokens,
                server.vocab.encode(&r.profile)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    // Merge the three request streams by their fractional position in a round.
    let mut schedule: Vec<(f64, usize)> = Vec::new();
    for (m, &c) in counts.iter().enumerate() {
        schedule.extend((0..c).map(|i| ((i as f64 + 0.5) / c as f64, m)));
    }
    schedule.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut latencies: [Vec<f64>; 3] = Default::default();
    let mut next = [0usize; 3];
    for round in 0..mix.rounds {
        for &(_, m) in &schedule {
            let i = next[m] % requests.len();
            next[m] += 1;
            let t = Instant::now();
            match m {
                0 => {
                    server.fit_compressed(&stored[i].0, &stored[i].1)?;
                }
                1 => {
                    server.summarize(&requests[i].job)?;
                }
                _ => {
                    server.explain_compressed(&stored[i].0, &stored[i].1)?;
                }
            }
            latencies[m].push(t.elapsed().as_secs_f64());
        }
        info!("bench round {} of {}", round + 1, mix.rounds);
    }
    let mut rows = MODULES
        .iter()
        .zip(&latencies)
        .map(|(m, l)| stats(m, l))
        .collect::<Result<Vec<_>>>()?;
    let base = rows[2].qps;
    for r in &mut rows {
        r.relative = r.qps / base;
    }
    Ok(rows)
}

pub fn bench_report(rows: &[ModuleStats]) -> Result<Report> {
    let mut report = Report::new(&BENCH_COLUMNS)?;
    for r in rows {
        report.push_values([
            ("module", Value::from(r.module.clone())),
            ("requests", Value::from(r.requests)),
            ("mean_ms", Value::from(r.mean_ms)),
            ("p95_ms", Value::from(r.p95_ms)),
            ("qps", Value::from(r.qps)),
            ("relative", Value::from(r.relative)),
        ])?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let s = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(percentile(&s, 0.95).unwrap(), 5.0);
        assert_eq!(percentile(&s, 0.5).unwrap(), 3.0);
        assert_eq!(percentile(&[7.0], 0.95).unwrap(), 7.0);
        assert!(percentile(&[], 0.5).is_err());
    }
}
