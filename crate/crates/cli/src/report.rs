//! Markdown listing and SVG chart built from trajectory files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use prompt_catalyst::orchestrator::{read_events, EventKind, TrajectoryError, TrajectoryEvent};

use crate::error::CliError;

pub const REPORT_MD: &str = "report.md";
pub const REPORT_SVG: &str = "report.svg";

const PALETTE: [&str; 8] =
    ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone)]
pub struct Trace {
    pub label: String,
    pub events: Vec<TrajectoryEvent>,
}

impl Trace {
    fn evaluations(&self) -> impl Iterator<Item = &TrajectoryEvent> {
        self.events.iter().filter(|e| e.is_evaluation() && e.loss.is_some())
    }
}

pub fn load_traces(paths: &[PathBuf]) -> Result<Vec<Trace>, CliError> {
    paths
        .iter()
        .map(|p| {
            let label = p.display().to_string();
            let file = File::open(p).map_err(CliError::io(format!("opening {label}")))?;
            let events = read_events(BufReader::new(file)).map_err(|source| match source {
                TrajectoryError::Io(e) => CliError::Io { context: format!("reading {label}"), source: e },
                other => CliError::Trajectory { path: label.clone(), source: other },
            })?;
            Ok(Trace { label, events })
        })
        .collect()
}

/// Lowest-loss evaluation and restart of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRow {
    pub round: usize,
    pub is_final: bool,
    pub best_prompt: String,
    pub best_origin: String,
    pub best_loss: f64,
    pub best_accuracy: f64,
    pub restart: Option<(String, Option<f64>)>,
}

pub fn round_rows(trace: &Trace) -> Vec<RoundRow> {
    let mut rows: BTreeMap<usize, RoundRow> = BTreeMap::new();
    let mut resets: Vec<usize> = Vec::new();
    for e in &trace.events {
        match e.kind {
            EventKind::PoolReset => resets.push(e.round),
            EventKind::Restart => {
                if let Some(r) = rows.get_mut(&e.round) {
                    r.restart = Some((e.prompt.clone(), e.loss));
                }
            }
            _ => {}
        }
        let (Some(loss), true) = (e.loss, e.is_evaluation()) else { continue };
        let better = rows.get(&e.round).map_or(true, |r| loss < r.best_loss);
        if better {
            let restart = rows.get(&e.round).and_then(|r| r.restart.clone());
            rows.insert(
                e.round,
                RoundRow {
                    round: e.round,
                    is_final: false,
                    best_prompt: e.prompt.clone(),
                    best_origin: e.origin.map(|o| o.to_string()).unwrap_or_default(),
                    best_loss: loss,
                    best_accuracy: e.accuracy.unwrap_or(f64::NAN),
                    restart,
                },
            );
        }
    }
    let mut out: Vec<RoundRow> = rows.into_values().collect();
    for r in &mut out {
        r.is_final = !resets.contains(&r.round);
    }
    out
}

fn cell(text: &str) -> String {
    format!("`{}`", text.replace('|', "\\|").replace('`', "'"))
}

pub fn render_markdown(traces: &[Trace]) -> String {
    let mut out = String::from("# Optimization report\n");
    for (i, t) in traces.iter().enumerate() {
        let _ = write!(out, "\n## Run {}: {}\n\n", i + 1, t.label);
        let evals: Vec<&TrajectoryEvent> = t.evaluations().collect();
        let _ = writeln!(out, "- evaluations: {}", evals.len());
        let best = evals.iter().fold(None::<&TrajectoryEvent>, |b, e| match b {
            Some(b) if b.loss <= e.loss => Some(b),
            _ => Some(e),
        });
        if let Some(b) = best {
            let _ = writeln!(
                out,
                "- best: {} loss {:.4}, accuracy {:.1} ({}, round {})",
                cell(&b.prompt),
                b.loss.unwrap_or(f64::NAN),
                b.accuracy.unwrap_or(f64::NAN),
                b.origin.map(|o| o.to_string()).unwrap_or_default(),
                b.round
            );
        }
        out.push_str(
            "\n| round | best prompt | origin | loss | accuracy | restart prompt | restart loss |\n\
             |---|---|---|---|---|---|---|\n",
        );
        for r in round_rows(t) {
            let round = if r.is_final { format!("{} (final)", r.round) } else { r.round.to_string() };
            let (restart, restart_loss) = match &r.restart {
                Some((text, loss)) => (cell(text), loss.map(|l| format!("{l:.4}")).unwrap_or_else(|| "-".into())),
                None => ("-".into(), "-".into()),
            };
            let _ = writeln!(
                out,
                "| {round} | {} | {} | {:.4} | {:.1} | {restart} | {restart_loss} |",
                cell(&r.best_prompt),
                r.best_origin,
                r.best_loss,
                r.best_accuracy
            );
        }
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Panel {
    name: &'static str,
    top: f64,
    lo: f64,
    hi: f64,
}

const WIDTH: f64 = 720.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const PANEL_H: f64 = 200.0;

/// Loss and accuracy against evaluation step, one polyline per run and panel.
pub fn render_svg(traces: &[Trace]) -> String {
    let steps = traces.iter().map(|t| t.evaluations().count()).max().unwrap_or(0).max(2);
    let losses = traces.iter().flat_map(|t| t.evaluations().filter_map(|e| e.loss));
    let (mut lo, mut hi) = losses.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), l| (a.min(l), b.max(l)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    let panels = [
        Panel { name: "loss", top: 40.0, lo, hi },
        Panel { name: "accuracy", top: 40.0 + PANEL_H + 60.0, lo: 0.0, hi: 100.0 },
    ];
    let legend_top = panels[1].top + PANEL_H + 40.0;
    let height = legend_top + 20.0 * traces.len() as f64 + 10.0;
    let plot_w = WIDTH - LEFT - RIGHT;
    let x = |step: usize| LEFT + plot_w * (step - 1) as f64 / (steps - 1) as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for p in &panels {
        let bottom = p.top + PANEL_H;
        let y = |v: f64| bottom - PANEL_H * (v - p.lo) / (p.hi - p.lo);
        let _ = writeln!(s, r#"<g class="panel" id="{}">"#, p.name);
        let _ = writeln!(s, r#"<text x="{LEFT}" y="{:.2}" font-weight="bold">{} vs evaluation step</text>"#, p.top - 12.0, p.name);
        let _ = writeln!(
            s,
            r##"<rect x="{LEFT}" y="{:.2}" width="{plot_w}" height="{PANEL_H}" fill="none" stroke="#888"/>"##,
            p.top
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text>"#, LEFT - 6.0, p.top + 4.0, p.hi);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text>"#, LEFT - 6.0, bottom + 4.0, p.lo);
        let _ = writeln!(s, r#"<text x="{LEFT}" y="{:.2}">1</text>"#, bottom + 16.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{steps}</text>"#, LEFT + plot_w, bottom + 16.0);
        for (i, t) in traces.iter().enumerate() {
            let points: Vec<String> = t
                .evaluations()
                .enumerate()
                .map(|(k, e)| {
                    let v = if p.name == "loss" { e.loss.unwrap_or(p.lo) } else { e.accuracy.unwrap_or(0.0) };
                    format!("{:.2},{:.2}", x(k + 1), y(v))
                })
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline class="{}" data-run="{i}" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                p.name,
                PALETTE[i % PALETTE.len()],
                points.join(" ")
            );
        }
        s.push_str("</g>\n");
    }
    for (i, t) in traces.iter().enumerate() {
        let y = legend_top + 20.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{:.2}" width="14" height="4" fill="{}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            y - 4.0,
            PALETTE[i % PALETTE.len()],
            LEFT + 20.0,
            y + 1.0,
            escape(&t.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `report.md` and `report.svg` into `out`.
pub fn cmd_report(paths: &[PathBuf], out: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    if paths.is_empty() {
        return Err(CliError::Config("report needs at least one trajectory file".into()));
    }
    let traces = load_traces(paths)?;
    fs::create_dir_all(out).map_err(CliError::io(format!("creating {}", out.display())))?;
    let md = out.join(REPORT_MD);
    let svg = out.join(REPORT_SVG);
    fs::write(&md, render_markdown(&traces)).map_err(CliError::io(format!("writing {}", md.display())))?;
    fs::write(&svg, render_svg(&traces)).map_err(CliError::io(format!("writing {}", svg.display())))?;
    Ok((md, svg))
}
