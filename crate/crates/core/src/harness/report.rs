//! Smoothing, CSV rows, the milestone table and SVG line charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::eval::EvalReport;
use crate::error::{Error, Result};

/// Symmetric moving average; windows are truncated at the ends.
pub fn moving_average(series: &[f64], half_window: usize) -> Vec<f64> {
    (0..series.len())
        .map(|i| {
            let lo = i.saturating_sub(half_window);
            let hi = (i + half_window).min(series.len() - 1);
            series[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

pub const EVAL_HEADER: &str = "step,agent,avg_reward,success_rate";
pub const RETURNS_HEADER: &str = "step,agent,task,return,success";
pub const MODEL_CURVE_HEADER: &str = "step,frame_mse,reward_mse";
pub const DQN_CURVE_HEADER: &str = "step,td_loss,epsilon";

pub fn eval_row(r: &EvalReport) -> String {
    format!("{},{},{:.6},{:.2}", r.step, r.agent, r.avg_reward, r.success_rate)
}

pub fn returns_rows(r: &EvalReport) -> Vec<String> {
    r.returns
        .iter()
        .zip(&r.successes)
        .enumerate()
        .map(|(i, (ret, ok))| format!("{},{},{i},{ret:.2},{}", r.step, r.agent, *ok as u8))
        .collect()
}

/// One point of an evaluation curve.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub step: u64,
    pub agent: String,
    pub avg_reward: f64,
    pub success_rate: f64,
}

pub fn parse_eval_csv(text: &str) -> Result<Vec<EvalPoint>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != EVAL_HEADER {
        return Err(Error::Format { path: "eval csv".into(), msg: format!("header {header:?}") });
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row[i].parse().map_err(|_| Error::Format { path: "eval csv".into(), msg: format!("bad number {:?}", &row[i]) })
        };
        out.push(EvalPoint {
            step: num(0)? as u64,
            agent: row[1].to_string(),
            avg_reward: num(2)?,
            success_rate: num(3)?,
        })
    }
    Ok(out)
}

/// Points grouped by agent, in first-seen order, each sorted by step.
pub fn by_agent(points: &[EvalPoint]) -> Vec<(String, Vec<EvalPoint>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<EvalPoint>> = BTreeMap::new();
    for p in points {
        if !groups.contains_key(&p.agent) {
            order.push(p.agent.clone());
        }
        groups.entry(p.agent.clone()).or_default().push(p.clone());
    }
    order
        .into_iter()
        .map(|a| {
            let mut v = groups.remove(&a).expect("grouped");
            v.sort_by_key(|p| p.step);
            (a, v)
        })
        .collect()
}

/// Smoothed copies of every agent's curve.
pub fn smooth(points: &[EvalPoint], half_window: usize) -> Vec<EvalPoint> {
    let mut out = Vec::new();
    for (_, pts) in by_agent(points) {
        let reward = moving_average(&pts.iter().map(|p| p.avg_reward).collect::<Vec<_>>(), half_window);
        let success = moving_average(&pts.iter().map(|p| p.success_rate).collect::<Vec<_>>(), half_window);
        for (i, p) in pts.iter().enumerate() {
            out.push(EvalPoint { avg_reward: reward[i], success_rate: success[i], ..p.clone() });
        }
    }
    out
}

pub fn smoothed_csv(points: &[EvalPoint]) -> String {
    let mut s = format!("{EVAL_HEADER}\n");
    for p in points {
        writeln!(s, "{},{},{:.6},{:.6}", p.step, p.agent, p.avg_reward, p.success_rate).expect("string write");
    }
    s
}

/// Markdown table with average reward and success rate per agent at each
/// milestone; a dash where an agent has no evaluation at that step.
pub fn milestone_table(points: &[EvalPoint], milestones: &[u64]) -> String {
    let mut s = String::from("| Agent |");
    for m in milestones {
        write!(s, " Avg reward @{m} | Success @{m} |").expect("string write");
    }
    s.push_str("\n|---|");
    s.push_str(&"---|---|".repeat(milestones.len()));
    s.push('\n');
    for (agent, pts) in by_agent(points) {
        write!(s, "| {agent} |").expect("string write");
        for m in milestones {
            match pts.iter().find(|p| p.step == *m) {
                Some(p) => write!(s, " {:.2} | {:.2} |", p.avg_reward, p.success_rate),
                None => write!(s, " - | - |"),
            }
            .expect("string write");
        }
        s.push('\n');
    }
    s
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Line chart of `(label, points)` series.
pub fn line_chart(title: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 70.0, 150.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        (y0, y1) = (y0 - 0.5, y1 + 0.5);
    }
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let mut out = |line: String| {
        s.push_str(&line);
        s.push('\n');
    };
    out(format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#));
    out(format!(r#"<rect width="{w}" height="{h}" fill="white"/>"#));
    out(format!(r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, left + pw / 2.0, escape(title)));
    out(format!(r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#));
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        out(format!(r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, sx(fx), h - bottom + 18.0, tick(fx)));
        out(format!(r#"<text x="{}" y="{:.1}" text-anchor="end">{:.2}</text>"#, left - 6.0, sy(fy) + 4.0, fy));
        out(format!(r##"<line x1="{left}" x2="{}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##, left + pw, sy(fy), sy(fy)));
    }
    out(format!(r#"<text x="{}" y="{}" text-anchor="middle">training step</text>"#, left + pw / 2.0, h - 12.0));
    out(format!(
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    ));
    for (i, (label, p)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        out(format!(r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" ")));
        let ly = top + 14.0 + 18.0 * i as f64;
        out(format!(r#"<line x1="{}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, w - right + 10.0, w - right + 30.0));
        out(format!(r#"<text x="{}" y="{}">{}</text>"#, w - right + 36.0, ly + 4.0, escape(label)));
    }
    out("</svg>".into());
    s
}

fn tick(x: f64) -> String {
    if x.abs() >= 1000.0 {
        format!("{:.0}k", x / 1000.0)
    } else {
        format!("{x:.0}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Reward and success charts for raw and smoothed curves.
pub fn write_plots(dir: &Path, raw: &[EvalPoint], half_window: usize) -> Result<()> {
    let smoothed = smooth(raw, half_window);
    let series = |pts: &[EvalPoint], f: fn(&EvalPoint) -> f64, suffix: &str| -> Vec<(String, Vec<(f64, f64)>)> {
        by_agent(pts)
            .into_iter()
            .map(|(a, p)| (format!("{a}{suffix}"), p.iter().map(|q| (q.step as f64, f(q))).collect()))
            .collect()
    };
    let reward = |p: &EvalPoint| p.avg_reward;
    let success = |p: &EvalPoint| p.success_rate;
    let write = |name: &str, text: String| std::fs::write(dir.join(name), text).map_err(Error::file(&dir.join(name)));
    write("reward.svg", line_chart("Average reward", "average reward", &series(&smoothed, reward, "")))?;
    write("success.svg", line_chart("Success rate", "success rate", &series(&smoothed, success, "")))?;
    write("reward_raw.svg", line_chart("Average reward (raw)", "average reward", &series(raw, reward, "")))?;
    write("success_raw.svg", line_chart("Success rate (raw)", "success rate", &series(raw, success, "")))?;
    write("smoothed.csv", smoothed_csv(&smoothed))
}
