//! CSV and SVG emission for sweep results and loss curves.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::federation::{Sampling, Trajectory, UpdateRule};

use super::{SweepResult, SweepRow};

pub const SWEEP_CSV_HEADER: &str =
    "n_devices,k_active,e_local,rule,scheme,eta0,c,seed,iters_to_eps";

fn rule_from_str(s: &str) -> Result<UpdateRule> {
    match s {
        "sgd" => Ok(UpdateRule::Sgd),
        "nesterov" => Ok(UpdateRule::Nesterov),
        "mass" => Ok(UpdateRule::Mass),
        other => Err(Error::InvalidInput(format!("unknown rule `{other}`"))),
    }
}

fn scheme_from_str(s: &str) -> Result<Sampling> {
    match s {
        "full" => Ok(Sampling::Full),
        "with_replacement" => Ok(Sampling::WithReplacement),
        "without_replacement" => Ok(Sampling::WithoutReplacement),
        other => Err(Error::InvalidInput(format!("unknown scheme `{other}`"))),
    }
}

pub fn sweep_to_csv(result: &SweepResult) -> Result<String> {
    if result.rows.is_empty() {
        return Err(Error::EmptyResult("sweep produced no rows".into()));
    }
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in &result.rows {
        let iters = r
            .iters
            .map_or_else(|| "not_reached".to_string(), |t| t.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.n_devices,
            r.k_active,
            r.e_local,
            r.rule.as_str(),
            r.scheme.as_str(),
            r.eta0,
            r.c,
            r.seed,
            iters
        );
    }
    Ok(out)
}

/// Write the sweep CSV; refuses to create a file for an empty result.
pub fn write_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let text = sweep_to_csv(result)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Parse rows produced by [`write_csv`].
pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header.trim() != SWEEP_CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!("bad header `{header}`"),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 2;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(Error::Parse {
                line: lineno,
                msg: "expected 9 columns".into(),
            });
        }
        let bad = |what: &str| Error::Parse {
            line: lineno,
            msg: format!("bad {what}"),
        };
        rows.push(SweepRow {
            n_devices: cols[0].parse().map_err(|_| bad("n_devices"))?,
            k_active: cols[1].parse().map_err(|_| bad("k_active"))?,
            e_local: cols[2].parse().map_err(|_| bad("e_local"))?,
            rule: rule_from_str(cols[3])?,
            scheme: scheme_from_str(cols[4])?,
            eta0: cols[5].parse().map_err(|_| bad("eta0"))?,
            c: cols[6].parse().map_err(|_| bad("c"))?,
            seed: cols[7].parse().map_err(|_| bad("seed"))?,
            iters: match cols[8] {
                "not_reached" => None,
                s => Some(s.parse().map_err(|_| bad("iters_to_eps"))?),
            },
        });
    }
    Ok(rows)
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;

struct Chart {
    body: String,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Chart {
    fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        let pad = |lo: f64, hi: f64| {
            if lo == hi {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        let (x_min, x_max) = pad(x_min, x_max);
        let (y_min, y_max) = pad(y_min, y_max);
        Self {
            body: String::new(),
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (SVG_W - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        SVG_H
            - MARGIN_B
            - (y - self.y_min) / (self.y_max - self.y_min) * (SVG_H - MARGIN_T - MARGIN_B)
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        let _ = writeln!(
            self.body,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            coords.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(
                self.body,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                self.px(x),
                self.py(y)
            );
        }
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, size: u32, s: &str) {
        let _ = writeln!(
            self.body,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"{anchor}\" font-size=\"{size}\" font-family=\"sans-serif\">{s}</text>"
        );
    }

    fn axes(&mut self, title: &str, x_label: &str, y_label: &str, y_tick: impl Fn(f64) -> String) {
        let x0 = MARGIN_L;
        let x1 = SVG_W - MARGIN_R;
        let y0 = SVG_H - MARGIN_B;
        let y1 = MARGIN_T;
        let _ = writeln!(
            self.body,
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>"
        );
        let _ = writeln!(
            self.body,
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>"
        );
        for i in 0..=4 {
            let fx = self.x_min + (self.x_max - self.x_min) * i as f64 / 4.0;
            let fy = self.y_min + (self.y_max - self.y_min) * i as f64 / 4.0;
            let px = self.px(fx);
            let py = self.py(fy);
            let _ = writeln!(
                self.body,
                "<line x1=\"{px:.2}\" y1=\"{y0}\" x2=\"{px:.2}\" y2=\"{}\" stroke=\"black\"/>",
                y0 + 4.0
            );
            self.text(px, y0 + 18.0, "middle", 11, &format!("{fx:.0}"));
            let _ = writeln!(
                self.body,
                "<line x1=\"{}\" y1=\"{py:.2}\" x2=\"{x0}\" y2=\"{py:.2}\" stroke=\"black\"/>",
                x0 - 4.0
            );
            self.text(x0 - 8.0, py + 4.0, "end", 11, &y_tick(fy));
        }
        self.text(SVG_W / 2.0, 18.0, "middle", 14, title);
        self.text(SVG_W / 2.0, SVG_H - 12.0, "middle", 12, x_label);
        let _ = writeln!(
            self.body,
            "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\" transform=\"rotate(-90 16 {:.2})\">{y_label}</text>",
            SVG_H / 2.0,
            SVG_H / 2.0
        );
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n<rect width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>\n{}</svg>\n",
            self.body
        )
    }
}

const SERIES_COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// Iterations-to-accuracy versus active workers, one point per sweep row.
pub fn svg_iterations_vs_workers(result: &SweepResult) -> Result<String> {
    if result.rows.is_empty() {
        return Err(Error::EmptyResult("sweep produced no rows".into()));
    }
    let pts: Vec<(f64, f64)> = result
        .rows
        .iter()
        .filter_map(|r| {
            let workers = if r.k_active < r.n_devices {
                r.k_active
            } else {
                r.n_devices
            };
            r.iters.map(|t| (workers as f64, t as f64))
        })
        .collect();
    if pts.is_empty() {
        return Err(Error::EmptyResult(
            "no sweep point reached the target".into(),
        ));
    }
    let x_min = pts.iter().map(|p| p.0).fold(f64::MAX, f64::min);
    let x_max = pts.iter().map(|p| p.0).fold(f64::MIN, f64::max);
    let y_max = pts.iter().map(|p| p.1).fold(f64::MIN, f64::max);
    let mut chart = Chart::new(x_min, x_max, 0.0, y_max * 1.05);
    chart.axes(
        &format!("iterations to reach eps = {}", result.epsilon),
        "active workers",
        "iterations",
        |v| format!("{v:.0}"),
    );
    chart.polyline(&pts, SERIES_COLORS[0]);
    Ok(chart.finish())
}

/// Named loss curves on a log10 y scale.
pub fn svg_loss_curves(series: &[(String, &Trajectory)]) -> Result<String> {
    if series.is_empty() || series.iter().all(|(_, t)| t.points.is_empty()) {
        return Err(Error::EmptyResult("no trajectory points to plot".into()));
    }
    let mut x_max = 0.0f64;
    let mut y_min = f64::MAX;
    let mut y_max = f64::MIN;
    let mut lines = Vec::new();
    for (name, traj) in series {
        let pts: Vec<(f64, f64)> = traj
            .points
            .iter()
            .filter(|p| p.loss > 0.0)
            .map(|p| (p.t as f64, p.loss.log10()))
            .collect();
        if pts.is_empty() {
            continue;
        }
        x_max = x_max.max(pts.iter().map(|p| p.0).fold(f64::MIN, f64::max));
        y_min = y_min.min(pts.iter().map(|p| p.1).fold(f64::MAX, f64::min));
        y_max = y_max.max(pts.iter().map(|p| p.1).fold(f64::MIN, f64::max));
        lines.push((name.clone(), pts));
    }
    if lines.is_empty() {
        return Err(Error::EmptyResult("all losses were nonpositive".into()));
    }
    let mut chart = Chart::new(0.0, x_max, y_min, y_max);
    chart.axes(
        "training loss",
        "local iteration t",
        "log10 F(w_bar_t)",
        |v| format!("{v:.1}"),
    );
    for (i, (name, pts)) in lines.iter().enumerate() {
        let color = SERIES_COLORS[i % SERIES_COLORS.len()];
        chart.polyline(pts, color);
        chart.text(
            MARGIN_L + 10.0,
            MARGIN_T + 16.0 * (i as f64 + 1.0),
            "start",
            12,
            &format!("<tspan fill=\"{color}\">{name}</tspan>"),
        );
    }
    Ok(chart.finish())
}

/// Write the iterations-vs-workers chart for a sweep.
pub fn write_svg(result: &SweepResult, path: &Path) -> Result<()> {
    let svg = svg_iterations_vs_workers(result)?;
    std::fs::write(path, svg)?;
    Ok(())
}
