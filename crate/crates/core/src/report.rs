//! CSV, SVG and manifest outputs.
//!
//! `rewards.csv`: `episode,seed,cumulative_reward`
//!
//! `sweep.csv`: `policy,param,value,seed,mean_cost,tanh_cost,objective14,mean_delay,mean_energy`
//!
//! Floats are written in shortest round-trip form, so parsing a file back
//! reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Result, SimError};
use crate::experiment::SweepRow;

fn report_err(e: impl std::fmt::Display) -> SimError {
    SimError::Report(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRow {
    pub episode: usize,
    pub seed: u64,
    pub cumulative_reward: f64,
}

fn write_rows<W: Write, T: Serialize>(rows: &[T], out: W) -> Result<()> {
    if rows.is_empty() {
        return Err(SimError::Report("nothing to write".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(report_err)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(input: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(input).deserialize().collect::<std::result::Result<_, _>>().map_err(report_err)
}

pub fn write_rewards_csv<W: Write>(rows: &[RewardRow], out: W) -> Result<()> {
    write_rows(rows, out)
}

pub fn read_rewards_csv<R: Read>(input: R) -> Result<Vec<RewardRow>> {
    read_rows(input)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    write_rows(rows, out)
}

pub fn read_sweep_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    read_rows(input)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Aggregate over seeds of one (policy, value) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub policy: String,
    pub value: f64,
    pub seeds: usize,
    pub mean_cost: f64,
    pub std_cost: f64,
    pub tanh_cost: f64,
    pub objective14: f64,
    pub mean_delay: f64,
    pub mean_energy: f64,
}

/// Seed-averaged sweep results ordered by policy then value.
pub fn aggregate_sweep(rows: &[SweepRow]) -> Result<Vec<SweepPoint>> {
    if rows.is_empty() {
        return Err(SimError::Report("no sweep rows".into()));
    }
    let mut groups: BTreeMap<(String, u64), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.policy.clone(), r.value.to_bits())).or_default().push(r);
    }
    let mut points: Vec<SweepPoint> = groups
        .into_iter()
        .map(|((policy, bits), rs)| {
            let pick = |f: fn(&SweepRow) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (mean_cost, std_cost) = mean_std(&pick(|r| r.mean_cost)).expect("non-empty group");
            let avg = |f: fn(&SweepRow) -> f64| mean_std(&pick(f)).expect("non-empty group").0;
            SweepPoint {
                policy,
                value: f64::from_bits(bits),
                seeds: rs.len(),
                mean_cost,
                std_cost,
                tanh_cost: avg(|r| r.tanh_cost),
                objective14: avg(|r| r.objective14),
                mean_delay: avg(|r| r.mean_delay),
                mean_energy: avg(|r| r.mean_energy),
            }
        })
        .collect();
    points.sort_by(|a, b| a.policy.cmp(&b.policy).then(a.value.total_cmp(&b.value)));
    Ok(points)
}

/// One line of a chart with its per-point spread.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(x, mean, std)`.
    pub points: Vec<(f64, f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Line chart with a shaded mean ± std band per series.
pub fn svg_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    let all: Vec<&(f64, f64, f64)> = series.iter().flat_map(|s| &s.points).collect();
    if all.is_empty() {
        return Err(SimError::Report("chart has no data".into()));
    }
    let (w, h, left, right, top, bottom) = (720.0, 440.0, 70.0, 170.0, 40.0, 55.0);
    let fold =
        |init: f64, f: fn(f64, f64) -> f64, g: fn(&(f64, f64, f64)) -> f64| all.iter().map(|p| g(p)).fold(init, f);
    let (mut x0, mut x1) = (fold(f64::INFINITY, f64::min, |p| p.0), fold(f64::NEG_INFINITY, f64::max, |p| p.0));
    let (mut y0, mut y1) =
        (fold(f64::INFINITY, f64::min, |p| p.1 - p.2), fold(f64::NEG_INFINITY, f64::max, |p| p.1 + p.2));
    if x1 <= x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 <= y0 {
        let pad = y0.abs().max(1.0) * 0.05;
        y0 -= pad;
        y1 += pad;
    }
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let sy = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    let mut line = |text: String| {
        s.push_str(&text);
        s.push('\n');
    };
    line(format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    ));
    line(format!(r#"<rect width="{w}" height="{h}" fill="white"/>"#));
    line(format!(r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, escape(title)));
    line(format!(
        r#"<line x1="{left}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{left}" y1="{top}" x2="{left}" y2="{b}" stroke="black"/>"#,
        b = h - bottom,
        r = w - right
    ));
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        line(format!(r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, sx(fx), h - bottom + 18.0, tick(fx)));
        line(format!(r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, left - 6.0, sy(fy) + 4.0, tick(fy)));
    }
    line(format!(
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (left + w - right) / 2.0,
        h - 12.0,
        escape(x_label)
    ));
    line(format!(
        r#"<text x="18" y="{y}" text-anchor="middle" transform="rotate(-90 18 {y})">{}</text>"#,
        escape(y_label),
        y = (top + h - bottom) / 2.0
    ));
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = ser.points.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let upper: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1 + p.2))).collect();
        let lower: Vec<String> = pts.iter().rev().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1 - p.2))).collect();
        line(format!(
            r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        ));
        let mean: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
        line(format!(r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, mean.join(" ")));
        for p in &pts {
            line(format!(r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(p.0), sy(p.1)));
        }
        let ly = top + 10.0 + 18.0 * i as f64;
        line(format!(
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            w - right + 12.0,
            w - right + 32.0
        ));
        line(format!(r#"<text x="{}" y="{}">{}</text>"#, w - right + 38.0, ly + 4.0, escape(&ser.label)));
    }
    line("</svg>".to_string());
    Ok(s)
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Mean cost per policy across sweep values.
pub fn sweep_chart(rows: &[SweepRow]) -> Result<String> {
    let points = aggregate_sweep(rows)?;
    let mut by_policy: BTreeMap<&str, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for p in &points {
        by_policy.entry(&p.policy).or_default().push((p.value, p.mean_cost, p.std_cost));
    }
    let series: Vec<Series> =
        by_policy.into_iter().map(|(label, points)| Series { label: label.to_string(), points }).collect();
    let param = &rows[0].param;
    svg_chart(&format!("Mean cost vs {param}"), param, "mean cost", &series)
}

/// Cumulative reward per episode, mean ± std across seeds, smoothed over
/// `window` episodes.
pub fn reward_chart(rows: &[RewardRow], window: usize) -> Result<String> {
    let mut by_episode: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by_episode.entry(r.episode).or_default().push(r.cumulative_reward);
    }
    let eps: Vec<(usize, Vec<f64>)> = by_episode.into_iter().collect();
    let window = window.max(1);
    let points = eps
        .chunks(window)
        .map(|chunk| {
            let x = chunk.iter().map(|(e, _)| *e as f64).sum::<f64>() / chunk.len() as f64;
            let vals: Vec<f64> = chunk.iter().flat_map(|(_, v)| v.iter().copied()).collect();
            let (m, s) = mean_std(&vals).expect("non-empty chunk");
            (x, m, s)
        })
        .collect();
    svg_chart(
        "Cumulative reward per episode",
        "episode",
        "cumulative reward",
        &[Series { label: "toica".into(), points }],
    )
}

/// Run manifest: enough to reproduce the run.
pub fn manifest(command: &str, cfg: &SimConfig, seeds: &[u64], extra: &[(&str, String)]) -> String {
    let mut s = String::new();
    writeln!(s, "command = {command}").unwrap();
    writeln!(s, "version = {}", version_string()).unwrap();
    writeln!(s, "config_sha256 = {}", cfg.hash_hex()).unwrap();
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    writeln!(s, "seeds = {}", seeds.join(",")).unwrap();
    for (k, v) in extra {
        writeln!(s, "{k} = {v}").unwrap();
    }
    writeln!(s, "\n[effective config]").unwrap();
    s.push_str(&cfg.to_toml_string());
    s
}

/// Package version plus the git revision when one was recorded at build time.
pub fn version_string() -> String {
    let version = env!("CARGO_PKG_VERSION");
    match option_env!("MECSIM_GIT_DESCRIBE") {
        Some(rev) if !rev.is_empty() => format!("v{version}-{rev}"),
        _ => format!("v{version}"),
    }
}
