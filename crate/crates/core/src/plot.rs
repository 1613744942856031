//! Minimal SVG line plots with a logarithmic y axis.
//!
//! Plots are a convenience view of the CSV traces, which stay the record of
//! a run.

use std::fmt::Write as _;

use crate::metrics::{Record, Trace};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 50.0;
const MAX_POINTS: usize = 1500;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Which trace column goes on each axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum XAxis {
    Iteration,
    Bits,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum YAxis {
    Residual,
    GradNormSq,
    ConsensusErr,
}

impl XAxis {
    fn label(self) -> &'static str {
        match self {
            XAxis::Iteration => "iteration k",
            XAxis::Bits => "communicated bits per agent",
        }
    }

    fn value(self, r: &Record) -> f64 {
        match self {
            XAxis::Iteration => r.k as f64,
            XAxis::Bits => r.bits_cum,
        }
    }
}

impl YAxis {
    fn label(self) -> &'static str {
        match self {
            YAxis::Residual => "residual (1/n) Σ‖x_i − x*‖²",
            YAxis::GradNormSq => "‖∇f(x̄)‖²",
            YAxis::ConsensusErr => "consensus error",
        }
    }

    fn value(self, r: &Record) -> Option<f64> {
        match self {
            YAxis::Residual => r.residual,
            YAxis::GradNormSq => r.grad_norm_sq,
            YAxis::ConsensusErr => Some(r.consensus_err),
        }
    }

    /// Residual when the traces carry it, gradient norm otherwise.
    pub fn for_traces<'a>(traces: impl IntoIterator<Item = &'a Trace>) -> YAxis {
        let all_residual =
            traces.into_iter().all(|t| t.records.first().is_some_and(|r| r.residual.is_some()));
        if all_residual {
            YAxis::Residual
        } else {
            YAxis::GradNormSq
        }
    }
}

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    /// Points of `trace` with positive finite y, thinned to at most a few
    /// thousand.
    pub fn from_trace(label: impl Into<String>, trace: &Trace, x: XAxis, y: YAxis) -> Series {
        let stride = trace.records.len().div_ceil(MAX_POINTS).max(1);
        let last = trace.records.len().saturating_sub(1);
        let points = trace
            .records
            .iter()
            .enumerate()
            .filter(|(i, _)| i % stride == 0 || *i == last)
            .filter_map(|(_, r)| y.value(r).map(|v| (x.value(r), v)))
            .filter(|(a, b)| a.is_finite() && b.is_finite() && *b > 0.0)
            .collect();
        Series { label: label.into(), points }
    }
}

#[derive(Clone, Debug)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

impl Plot {
    pub fn new(title: impl Into<String>, x: XAxis, y: YAxis) -> Plot {
        Plot { title: title.into(), x_label: x.label().into(), y_label: y.label().into(), series: Vec::new() }
    }

    pub fn from_traces<'a>(
        title: impl Into<String>,
        traces: impl IntoIterator<Item = (&'a str, &'a Trace)>,
        x: XAxis,
    ) -> Plot {
        let traces: Vec<_> = traces.into_iter().collect();
        let y = YAxis::for_traces(traces.iter().map(|(_, t)| *t));
        let mut plot = Plot::new(title, x, y);
        plot.series = traces.iter().map(|(l, t)| Series::from_trace(*l, t, x, y)).collect();
        plot
    }

    pub fn to_svg(&self) -> String {
        let pts = || self.series.iter().flat_map(|s| s.points.iter());
        let (mut x0, mut x1) = pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
        let (mut y0, mut y1) =
            pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1.log10()), b.max(p.1.log10())));
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        y0 = y0.floor();
        y1 = y1.ceil().max(y0 + 1.0);
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |ly: f64| TOP + (y1 - ly) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="20" font-size="13" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, esc(&self.title));
        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);

        let decades = (y1 - y0) as i64;
        let step = (decades / 8 + 1) as usize;
        for d in (y0 as i64..=y1 as i64).step_by(step) {
            let y = sy(d as f64);
            let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, LEFT + pw);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">1e{d}</text>"#, LEFT - 6.0, y + 4.0);
        }
        for i in 0..=5 {
            let xv = x0 + (x1 - x0) * i as f64 / 5.0;
            let x = sx(xv);
            let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, TOP + ph + 16.0, tick(xv));
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 12.0, esc(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            esc(&self.y_label)
        );

        for (i, series) in self.series.iter().enumerate() {
            let colour = PALETTE[i % PALETTE.len()];
            let path: Vec<String> =
                series.points.iter().map(|(x, y)| format!("{:.1},{:.1}", sx(*x), sy(y.log10()))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
            let ly = TOP + 10.0 + 18.0 * i as f64;
            let lx = LEFT + pw + 12.0;
            let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#, lx + 20.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, esc(&series.label));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{}", (v * 100.0).round() / 100.0)
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_every_series() {
        let mut p = Plot::new("t <1>", XAxis::Iteration, YAxis::Residual);
        p.series.push(Series { label: "a".into(), points: vec![(0.0, 1.0), (10.0, 1e-3)] });
        p.series.push(Series { label: "b".into(), points: vec![(0.0, 0.5), (10.0, 1e-4)] });
        let svg = p.to_svg();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("t &lt;1&gt;"));
        assert!(svg.contains("1e-4"));
    }

    #[test]
    fn empty_plot_is_valid() {
        let svg = Plot::new("empty", XAxis::Bits, YAxis::GradNormSq).to_svg();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }
}
