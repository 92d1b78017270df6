use std::fmt::Write as _;

use super::config::Aggregate;
use crate::error::{Error, Result};
use crate::trainer::RunRecord;

pub const AGGREGATE_HEADER_MEAN: &str = "episode,env_steps,mean_return,std_return,seeds";
pub const AGGREGATE_HEADER_MEDIAN: &str = "episode,env_steps,median_return,std_return,seeds";

/// One run's learning curve as CSV, header first, `\n` line endings.
pub fn records_csv(records: &[RunRecord]) -> String {
    let mut out = RunRecord::FIELDS.join(",");
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.episode,
            r.env_steps,
            r.mean_return,
            r.std_return,
            r.value_loss,
            r.policy_loss,
            r.gen_loss,
            r.disc_loss,
            r.reward_loss,
            r.mbae_steps,
            r.mean_delta_norm,
            r.dyna_loss
        );
    }
    out
}

/// One row of an aggregate curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub episode: f64,
    pub env_steps: f64,
    pub center: f64,
    pub spread: f64,
    pub seeds: usize,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Per-episode statistics across runs, over the episodes every run reached.
pub fn aggregate(runs: &[Vec<RunRecord>], how: Aggregate) -> Vec<CurvePoint> {
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let mut returns: Vec<f64> = runs.iter().map(|r| r[i].mean_return).collect();
            let steps: Vec<f64> = runs.iter().map(|r| r[i].env_steps as f64).collect();
            let (mean, std) = crate::trainer::mean_std(&returns);
            CurvePoint {
                episode: runs[0][i].episode as f64,
                env_steps: crate::trainer::mean_std(&steps).0,
                center: match how {
                    Aggregate::Mean => mean,
                    Aggregate::Median => median(&mut returns),
                },
                spread: std,
                seeds: runs.len(),
            }
        })
        .collect()
}

pub fn aggregate_csv(points: &[CurvePoint], how: Aggregate) -> String {
    let mut out = String::from(match how {
        Aggregate::Mean => AGGREGATE_HEADER_MEAN,
        Aggregate::Median => AGGREGATE_HEADER_MEDIAN,
    });
    out.push('\n');
    for p in points {
        let _ = writeln!(out, "{},{},{},{},{}", p.episode, p.env_steps, p.center, p.spread, p.seeds);
    }
    out
}

/// Parses an aggregate CSV; errors name the offending 1-based line.
pub fn parse_aggregate(text: &str) -> Result<Vec<CurvePoint>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == AGGREGATE_HEADER_MEAN || h == AGGREGATE_HEADER_MEDIAN => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "expected an aggregate header".into(),
            })
        }
    }
    let mut points = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let num = |k: usize| -> Result<f64> {
            fields[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line: line_no,
                    msg: format!("field {} is not a finite number: {:?}", k + 1, fields[k]),
                })
        };
        points.push(CurvePoint {
            episode: num(0)?,
            env_steps: num(1)?,
            center: num(2)?,
            spread: num(3)?,
            seeds: fields[4].parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("seed count is not an integer: {:?}", fields[4]),
            })?,
        });
    }
    Ok(points)
}
