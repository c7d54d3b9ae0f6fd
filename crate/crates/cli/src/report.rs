//! Cross-run summary: a CSV of headline slices and a self-contained SVG with
//! RMSE bars per run and MAPE-threshold curves.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use log::info;

use ridership::evaluate::{EvaluationReport, PeriodFilter, StationSelector};

use crate::artifacts::{read_json, write_text, Execution, Layout};
use crate::commands::{read_reports, SweepCurve};
use crate::config::Settings;

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn run_files(layout: &Layout, prefix: &str) -> Result<Vec<(String, PathBuf)>> {
    let dir = layout.reports_dir();
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if let Some(run) = name.strip_prefix(prefix).and_then(|r| r.strip_suffix(".json")) {
            out.push((run.to_string(), path));
        }
    }
    out.sort();
    Ok(out)
}

fn headline(reports: &[EvaluationReport]) -> Vec<&EvaluationReport> {
    reports
        .iter()
        .filter(|r| !matches!(r.scope.stations, StationSelector::Station(_)))
        .collect()
}

fn slice_name(r: &EvaluationReport) -> String {
    match r.scope.period {
        PeriodFilter::All => "global".into(),
        p => p.to_string(),
    }
}

fn summary_csv(runs: &[(String, Vec<EvaluationReport>)]) -> String {
    let mut s = String::from("run,fare_class,stations,period,n_points,rmse,mae,mape_threshold,mape\n");
    for (run, reports) in runs {
        for r in headline(reports) {
            let (v, m) = r.mape_at.first().copied().unwrap_or((f64::NAN, None));
            let _ = writeln!(
                s,
                "{run},{},{},{},{},{:.6},{:.6},{v},{}",
                r.scope.fare_class,
                r.scope.stations,
                r.scope.period,
                r.n_points,
                r.rmse,
                r.mae,
                m.map_or(String::new(), |m| format!("{m:.6}"))
            );
        }
    }
    s
}

fn svg(runs: &[(String, Vec<EvaluationReport>)], sweeps: &[(String, Vec<SweepCurve>)]) -> String {
    let (w, h) = (900.0, 720.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);

    // Panel 1: RMSE per run and slice for the first fare class of each run.
    let (x0, y0, pw, ph) = (70.0, 50.0, 800.0, 260.0);
    let _ = writeln!(s, r#"<text x="{x0}" y="30" font-size="15">Test RMSE by slice</text>"#);
    let bars: Vec<(String, Vec<(String, f64)>)> = runs
        .iter()
        .map(|(run, reps)| {
            let hl = headline(reps);
            let class = hl.first().map(|r| r.scope.fare_class);
            let vals = hl
                .iter()
                .filter(|r| Some(r.scope.fare_class) == class)
                .map(|r| (slice_name(r), r.rmse))
                .collect();
            (format!("{run} {}", class.map_or(String::new(), |c| c.to_string())), vals)
        })
        .collect();
    let max = bars
        .iter()
        .flat_map(|(_, v)| v.iter().map(|x| x.1))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    axes(&mut s, x0, y0, pw, ph, max, "RMSE");
    let group_w = pw / bars.len().max(1) as f64;
    for (g, (label, vals)) in bars.iter().enumerate() {
        let bw = group_w * 0.8 / vals.len().max(1) as f64;
        for (k, (slice, v)) in vals.iter().enumerate() {
            let bh = ph * v / max;
            let x = x0 + g as f64 * group_w + group_w * 0.1 + k as f64 * bw;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{bh:.2}" fill="{}"><title>{slice}: {v:.4}</title></rect>"#,
                y0 + ph - bh,
                bw * 0.95,
                PALETTE[k % PALETTE.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
            x0 + (g as f64 + 0.5) * group_w,
            y0 + ph + 18.0
        );
    }
    for (k, name) in ["global", "event", "non-event"].iter().enumerate() {
        let lx = x0 + pw - 260.0 + k as f64 * 90.0;
        let _ = writeln!(s, r#"<rect x="{lx}" y="38" width="10" height="10" fill="{}"/>"#, PALETTE[k]);
        let _ = writeln!(s, r#"<text x="{}" y="47">{name}</text>"#, lx + 14.0);
    }

    // Panel 2: global MAPE against the threshold, one curve per run.
    let (x0, y0, pw, ph) = (70.0, 400.0, 800.0, 260.0);
    let _ = writeln!(s, r#"<text x="{x0}" y="380" font-size="15">Global MAPE (%) against threshold v</text>"#);
    let curves: Vec<(String, Vec<(f64, f64)>)> = sweeps
        .iter()
        .filter_map(|(run, cs)| {
            let c = cs
                .iter()
                .find(|c| c.stations == StationSelector::All && c.period == PeriodFilter::All)?;
            let pts = c.points.iter().filter_map(|(v, m)| m.map(|m| (*v, m))).collect();
            Some((format!("{run} {}", c.fare_class), pts))
        })
        .collect();
    let vmax = curves
        .iter()
        .flat_map(|(_, p)| p.iter().map(|x| x.0))
        .fold(0.0f64, f64::max)
        .max(1.0);
    let mmax = curves
        .iter()
        .flat_map(|(_, p)| p.iter().map(|x| x.1))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    axes(&mut s, x0, y0, pw, ph, mmax, "MAPE");
    for (i, (label, pts)) in curves.iter().enumerate() {
        let path: Vec<String> = pts
            .iter()
            .map(|(v, m)| format!("{:.2},{:.2}", x0 + pw * v / vmax, y0 + ph - ph * m / mmax))
            .collect();
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" fill="{color}">{label}</text>"#,
            x0 + pw - 150.0,
            y0 + 15.0 + 15.0 * i as f64
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">v (passengers per slot), 0 to {vmax}</text>"#,
        x0 + pw / 2.0,
        y0 + ph + 30.0
    );
    s.push_str("</svg>\n");
    s
}

fn axes(s: &mut String, x0: f64, y0: f64, pw: f64, ph: f64, max: f64, label: &str) {
    let _ = writeln!(
        s,
        r#"<line x1="{x0}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        y0 + ph,
        x0 + pw,
        y0 + ph
    );
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{}" stroke="black"/>"#, y0 + ph);
    for k in 0..=4 {
        let v = max * k as f64 / 4.0;
        let y = y0 + ph - ph * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"#,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.2}" transform="rotate(-90 15 {:.2})" text-anchor="middle">{label}</text>"#,
        y0 + ph / 2.0,
        y0 + ph / 2.0
    );
}

pub fn run(settings: &Settings, layout: &Layout) -> Result<()> {
    let mut exec = Execution::start("report");
    let evals = run_files(layout, "eval-")?;
    if evals.is_empty() {
        bail!(
            "missing artifact {} (run `ridership evaluate` first)",
            layout.report("eval-<model>-<features>.json").display()
        );
    }
    let mut runs = Vec::new();
    for (run, path) in &evals {
        exec.input(path);
        runs.push((run.clone(), read_reports(path)?));
    }
    let mut sweeps = Vec::new();
    for (run, path) in run_files(layout, "mape-sweep-")? {
        exec.input(&path);
        sweeps.push((run, read_json::<Vec<SweepCurve>>(&path, "evaluate")?));
    }
    let csv = layout.report("summary.csv");
    let svg_path = layout.report("report.svg");
    write_text(&csv, &summary_csv(&runs))?;
    write_text(&svg_path, &svg(&runs, &sweeps))?;
    info!("report over {} runs -> {}", runs.len(), svg_path.display());
    exec.output(&csv);
    exec.output(&svg_path);
    exec.finish(layout, "report", settings.seed, settings)
}
