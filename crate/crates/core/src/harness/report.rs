//! Markdown report with hand-written SVG line charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::aggregate::SummaryRow;
use crate::error::{FetsError, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 180.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 48.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// One polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Reward,
    FreeEnergy,
    Selection,
}

impl Family {
    const ALL: [Family; 3] = [Family::Reward, Family::FreeEnergy, Family::Selection];

    fn slug(self) -> &'static str {
        match self {
            Family::Reward => "reward",
            Family::FreeEnergy => "free_energy",
            Family::Selection => "selection",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Family::Reward => "Average accumulated reward",
            Family::FreeEnergy => "Average free energy per space",
            Family::Selection => "Selection fraction per space",
        }
    }
}

/// Renders a line chart. `y_range` fixes the vertical axis; otherwise it
/// spans the data.
pub fn line_chart(title: &str, x_label: &str, series: &[Series], y_range: Option<(f64, f64)>) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if let Some((lo, hi)) = y_range {
        (y0, y1) = (lo, hi);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" font-size="14">{}</text>"#, MARGIN_L, escape(title));
    // axes
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="black" points="{:.1},{:.1} {:.1},{:.1} {:.1},{:.1}"/>"#,
        MARGIN_L,
        MARGIN_T,
        MARGIN_L,
        MARGIN_T + ph,
        MARGIN_L + pw,
        MARGIN_T + ph
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let yv = y0 + f * (y1 - y0);
        let xv = x0 + f * (x1 - x0);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            MARGIN_L - 6.0,
            sy(yv) + 4.0,
            tick(yv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            MARGIN_T + ph + 18.0,
            tick(xv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 8.0,
        escape(x_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y.clamp(y0, y1))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = MARGIN_T + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN_R + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="3"/>"#,
            lx + 18.0
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 24.0, ly + 4.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 1e5) {
        let t = format!("{v:.2}");
        t.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Environment part of a run id (`name:method`).
fn env_of(run_id: &str) -> &str {
    run_id.split_once(':').map(|(e, _)| e).unwrap_or(run_id)
}

fn label_of(run_id: &str) -> &str {
    run_id.split_once(':').map(|(_, m)| m).unwrap_or(run_id)
}

fn family_series(rows: &[&SummaryRow], family: Family) -> Vec<Series> {
    // spaces per run, to skip selection curves of single-space runs
    let mut spaces: BTreeMap<&str, usize> = BTreeMap::new();
    for r in rows {
        if r.metric.starts_with("sel_") && r.episode == 0 {
            *spaces.entry(r.run_id.as_str()).or_default() += 1;
        }
    }
    let mut map: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        let keep = match family {
            Family::Reward => r.metric == "acc_reward",
            Family::FreeEnergy => r.metric.starts_with("F_"),
            Family::Selection => r.metric.starts_with("sel_") && spaces.get(r.run_id.as_str()).copied().unwrap_or(0) > 1,
        };
        if keep && r.mean.is_finite() {
            map.entry((r.run_id.clone(), r.metric.clone()))
                .or_default()
                .push((r.episode as f64, r.mean));
        }
    }
    map.into_iter()
        .map(|((run, metric), mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            let label = match family {
                Family::Reward => label_of(&run).to_string(),
                _ => format!("{} {}", label_of(&run), metric.split_once('_').map(|p| p.1).unwrap_or(&metric)),
            };
            Series { label, points }
        })
        .collect()
}

/// Outcome of writing a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutcome {
    pub charts: Vec<String>,
    /// Charts omitted for lack of data.
    pub gaps: Vec<String>,
}

/// Writes `index.md` and one SVG per plot family and environment into
/// `out_dir`. `acceptance` holds lines such as `criterion 4: PASS ...`.
pub fn write_report(rows: &[SummaryRow], acceptance: Option<&str>, out_dir: &Path) -> Result<ReportOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| FetsError::io(out_dir, e))?;
    let mut md = String::from("# Experiment report\n\n");
    let mut outcome = ReportOutcome {
        charts: Vec::new(),
        gaps: Vec::new(),
    };
    let mut envs: BTreeMap<&str, Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        envs.entry(env_of(&r.run_id)).or_default().push(r);
    }
    if envs.is_empty() {
        md.push_str("No data: the aggregate is empty.\n\n");
        outcome.gaps.push("aggregate".into());
    }
    for (env, env_rows) in &envs {
        let _ = writeln!(md, "## {env}\n");
        for family in Family::ALL {
            let series = family_series(env_rows, family);
            if series.is_empty() {
                let _ = writeln!(md, "_{}: no data, chart omitted._\n", family.title());
                outcome.gaps.push(format!("{env}/{}", family.slug()));
                continue;
            }
            let y_range = (family == Family::Selection).then_some((0.0, 1.0));
            let svg = line_chart(&format!("{env}: {}", family.title()), "episode", &series, y_range);
            let file = format!("{env}_{}.svg", family.slug());
            let path = out_dir.join(&file);
            std::fs::write(&path, svg).map_err(|e| FetsError::io(&path, e))?;
            let _ = writeln!(md, "![{}]({file})\n", family.title());
            outcome.charts.push(file);
        }
    }
    md.push_str("## Acceptance criteria\n\n| criterion | result | detail |\n|---|---|---|\n");
    match acceptance {
        Some(text) => {
            let mut any = false;
            for line in text.lines() {
                if let Some((name, rest)) = line.split_once(':') {
                    let rest = rest.trim();
                    let (status, detail) = rest.split_once(' ').unwrap_or((rest, ""));
                    if status == "PASS" || status == "FAIL" {
                        let _ = writeln!(md, "| {} | {status} | {} |", name.trim(), detail.trim());
                        any = true;
                    }
                }
            }
            if !any {
                md.push_str("| - | - | no results found |\n");
            }
        }
        None => md.push_str("| - | not run | pass an acceptance summary to fill this table |\n"),
    }
    let path = out_dir.join("index.md");
    std::fs::write(&path, md).map_err(|e| FetsError::io(&path, e))?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(run: &str, metric: &str, episode: u64, mean: f64) -> SummaryRow {
        SummaryRow {
            run_id: run.into(),
            episode,
            metric: metric.into(),
            n: 1,
            mean,
            stderr: None,
        }
    }

    #[test]
    fn empty_aggregate() {
        let dir = tempfile::tempdir().unwrap();
        let out = write_report(&[], None, dir.path()).unwrap();
        assert!(out.charts.is_empty());
        let md = std::fs::read_to_string(dir.path().join("index.md")).unwrap();
        assert!(md.contains("No data"));
        assert_eq!(out.gaps, vec!["aggregate"]);
    }

    #[test]
    fn two_methods_reward_chart() {
        let mut rows = Vec::new();
        for run in ["m:MB", "m:MB-FETS-FE"] {
            for e in 0..100 {
                rows.push(row(run, "acc_reward", e, e as f64 * 0.5));
                rows.push(row(run, "sel_main", e, 1.0));
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let out = write_report(&rows, Some("criterion 1: PASS fine\n"), dir.path()).unwrap();
        let svg = std::fs::read_to_string(dir.path().join("m_reward.svg")).unwrap();
        assert_eq!(svg.matches("stroke-width=\"1.5\"").count(), 2);
        assert!(svg.contains(">MB<") && svg.contains(">MB-FETS-FE<"));
        // single-space runs only: free energy and selection charts omitted
        assert_eq!(out.gaps, vec!["m/free_energy", "m/selection"]);
        let md = std::fs::read_to_string(dir.path().join("index.md")).unwrap();
        assert!(md.contains("| criterion 1 | PASS | fine |"));
    }

    #[test]
    fn selection_axis_is_unit_interval() {
        let s = vec![Series {
            label: "a".into(),
            points: vec![(0.0, 0.2), (1.0, 0.4)],
        }];
        let svg = line_chart("t", "episode", &s, Some((0.0, 1.0)));
        // top tick is 1, bottom tick is 0
        assert!(svg.contains(">1</text>") && svg.contains(">0</text>"));
        assert!(!svg.contains(">0.2</text>"));
    }
}
