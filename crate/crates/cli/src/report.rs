//! The `evaluate` stage: per-run, per-floor and per-direction error tables,
//! overlays and CDFs from whatever run artifacts exist.

use std::collections::BTreeMap;

use fuselocate::eval::{align, compare_methods, error_cdf, error_stats, render_overlay, AlignedPair, Method, DEFAULT_STRIDE};
use fuselocate::experiment::{segment_breaks, Direction};
use fuselocate::world::truth_trajectory;
use fuselocate::Trajectory;
use serde::Serialize;

use crate::commands::{Artifacts, Context};
use crate::error::Result;
use crate::formats::{self, csv_bytes, fmt9};

pub const REPORT_HEADER: [&str; 9] = [
    "run_id", "floor", "direction", "method", "mean", "median", "p95", "max", "n_samples",
];

#[derive(Debug, Default, Serialize)]
struct RunSummary {
    run_id: String,
    /// Methods by ascending mean error.
    ranking: Vec<String>,
    winners: BTreeMap<String, String>,
    dropped: BTreeMap<String, usize>,
}

#[derive(Debug, Default, Serialize)]
struct Summary {
    incomplete: bool,
    omissions: Vec<String>,
    warnings: Vec<String>,
    runs: Vec<RunSummary>,
}

struct RunPairs {
    floor: usize,
    direction: Direction,
    by_method: Vec<(Method, Vec<AlignedPair>)>,
}

fn row(run_id: &str, floor: &str, direction: &str, method: Method, pairs: &[AlignedPair]) -> Option<Vec<String>> {
    let s = error_stats(pairs).ok()?;
    Some(vec![
        run_id.to_string(),
        floor.to_string(),
        direction.to_string(),
        method.name().to_string(),
        fmt9(s.mean),
        fmt9(s.median),
        fmt9(s.p95),
        fmt9(s.max),
        s.n_samples.to_string(),
    ])
}

pub fn evaluate(ctx: &Context) -> Result<(Artifacts, Vec<String>)> {
    let (cfg, layout) = (&ctx.cfg, &ctx.layout);
    let mut sink = crate::formats::Sink::new(&layout.root);
    let report_dir = layout.report_dir();
    let mut summary = Summary::default();
    let mut runs: Vec<RunPairs> = Vec::new();
    let mut run_rows = Vec::new();

    for (floor, dir) in ctx.runs() {
        let run_id = layout.run_id(floor, dir);
        let truth_path = layout.truth(floor, dir);
        if !truth_path.is_file() {
            summary.omissions.push(format!("{run_id}: {}", truth_path.display()));
            continue;
        }
        let truth_samples = formats::read_truth(&truth_path)?;
        if truth_samples.is_empty() {
            summary.warnings.push(format!("{run_id}: empty ground truth"));
            continue;
        }
        let truth = truth_trajectory(&truth_samples);
        let mut estimates: Vec<(Method, Trajectory)> = Vec::new();
        for &m in &cfg.methods {
            let p = layout.trajectory(floor, dir, m);
            if p.is_file() {
                estimates.push((m, formats::read_trajectory(&p, "run")?));
            } else {
                summary.omissions.push(format!("{run_id}: {}", p.display()));
            }
        }
        if estimates.is_empty() {
            continue;
        }

        let named: BTreeMap<String, Trajectory> =
            estimates.iter().map(|(m, t)| (m.name().to_string(), t.clone())).collect();
        let mut run_summary = RunSummary {
            run_id: run_id.clone(),
            ..RunSummary::default()
        };
        match compare_methods(&truth, &named, &segment_breaks(&truth_samples)) {
            Ok(c) => {
                run_summary.ranking = c.reports.iter().map(|r| r.method.clone()).collect();
                run_summary.winners = c.winners.into_iter().collect();
                run_summary.dropped = c.reports.iter().map(|r| (r.method.clone(), r.dropped)).collect();
                summary.warnings.extend(c.warnings.into_iter().map(|w| format!("{run_id}: {w}")));
            }
            Err(e) => summary.warnings.push(format!("{run_id}: {e}")),
        }
        summary.runs.push(run_summary);

        let mut by_method = Vec::new();
        for (m, est) in &estimates {
            let Ok(a) = align(&truth, est) else { continue };
            if let Some(r) = row(&run_id, layout.floor_name(floor), dir.name(), *m, &a.pairs) {
                run_rows.push(r);
            }
            let cdf = error_cdf(&a.pairs).expect("aligned pairs are nonempty");
            let header = ["error", "fraction"].map(String::from);
            sink.write(
                &report_dir.join(format!("cdf_{run_id}_{}.csv", m.name())),
                &csv_bytes(&header, cdf.iter().map(|(e, f)| vec![fmt9(*e), fmt9(*f)])),
            )?;
            by_method.push((*m, a.pairs));
        }

        let map_path = layout.map(floor);
        if map_path.is_file() {
            let grid = formats::read_map(&map_path, "generate")?;
            let labelled: Vec<(String, &Trajectory)> =
                estimates.iter().map(|(m, t)| (m.name().to_string(), t)).collect();
            let svg = render_overlay(&grid, &truth, &labelled, DEFAULT_STRIDE)
                .map_err(|e| crate::error::CliError::malformed(&map_path, e))?;
            sink.write(&report_dir.join(format!("{run_id}.svg")), svg.as_bytes())?;
        } else {
            summary.omissions.push(format!("{run_id}: {} (no overlay)", map_path.display()));
        }
        runs.push(RunPairs {
            floor,
            direction: dir,
            by_method,
        });
    }

    let pooled = |keep: &dyn Fn(&RunPairs) -> bool, m: Method| -> Vec<AlignedPair> {
        runs.iter()
            .filter(|r| keep(r))
            .flat_map(|r| r.by_method.iter().filter(|(mm, _)| *mm == m).flat_map(|(_, p)| p.iter().copied()))
            .collect()
    };
    let mut floor_rows = Vec::new();
    for floor in 0..cfg.floors.len() {
        let name = layout.floor_name(floor);
        for &m in &cfg.methods {
            let pairs = pooled(&|r| r.floor == floor, m);
            floor_rows.extend(row(&format!("{name}_all"), name, "all", m, &pairs));
        }
    }
    let mut direction_rows = Vec::new();
    for &d in &cfg.directions {
        for &m in &cfg.methods {
            let pairs = pooled(&|r| r.direction == d, m);
            direction_rows.extend(row(&format!("all_{}", d.name()), "all", d.name(), m, &pairs));
        }
    }

    if run_rows.is_empty() {
        summary.warnings.push("no run artifacts to evaluate".to_string());
    }
    summary.incomplete = !summary.omissions.is_empty() || !summary.warnings.is_empty();
    let header = REPORT_HEADER.map(String::from);
    sink.write(&report_dir.join("report.csv"), &csv_bytes(&header, run_rows))?;
    sink.write(&report_dir.join("floors.csv"), &csv_bytes(&header, floor_rows))?;
    sink.write(&report_dir.join("directions.csv"), &csv_bytes(&header, direction_rows))?;
    sink.write_json(&report_dir.join("summary.json"), &summary)?;
    let notes = summary
        .omissions
        .iter()
        .map(|o| format!("omitted {o}"))
        .chain(summary.warnings.iter().cloned())
        .collect();
    Ok((sink.written, notes))
}
