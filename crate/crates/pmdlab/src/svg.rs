//! Convergence plots as plain SVG: optimality gap and step size against the
//! iteration, both on log scales, with the `y = γ^x` reference curve.

use std::fmt::Write as _;

use anyhow::{anyhow, Context, Result};

/// Reference curves drawn on the gap panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    /// Discount of the green `y = γ^x` curve.
    pub gamma: f64,
    /// When set, also draws `y = scale · γ^x`.
    pub bound_scale: Option<f64>,
    pub title: String,
}

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 400.0;
const PANEL_W: f64 = 380.0;
const PANEL_H: f64 = 270.0;
const TOP: f64 = 60.0;
const LEFTS: [f64; 2] = [80.0, 560.0];

struct Series {
    iter: Vec<f64>,
    gap: Vec<f64>,
    eta: Vec<Option<f64>>,
}

fn parse_trace(csv_text: &str) -> Result<Series> {
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = reader.headers().context("trace CSV has no header")?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let i_iter = column("iter").ok_or_else(|| anyhow!("trace CSV lacks an `iter` column"))?;
    let i_gap = column("sup_gap").ok_or_else(|| anyhow!("trace CSV lacks a `sup_gap` column"))?;
    let i_eta = column("eta");
    let mut series = Series {
        iter: Vec::new(),
        gap: Vec::new(),
        eta: Vec::new(),
    };
    for (line, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("trace CSV row {}", line + 2))?;
        let field = |i: usize| -> Result<Option<f64>> {
            let text = record.get(i).unwrap_or("");
            if text.is_empty() {
                return Ok(None);
            }
            text.parse::<f64>()
                .map(Some)
                .map_err(|_| anyhow!("trace CSV row {}: `{text}` is not a number", line + 2))
        };
        series
            .iter
            .push(field(i_iter)?.ok_or_else(|| anyhow!("row {}: empty iter", line + 2))?);
        series
            .gap
            .push(field(i_gap)?.ok_or_else(|| anyhow!("row {}: empty sup_gap", line + 2))?);
        series.eta.push(match i_eta {
            Some(i) => field(i)?,
            None => None,
        });
    }
    Ok(series)
}

struct LogAxis {
    lo: f64,
    hi: f64,
}

impl LogAxis {
    fn fit(values: impl Iterator<Item = f64>) -> LogAxis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| *v > 0.0 && v.is_finite()) {
            lo = lo.min(v.log10());
            hi = hi.max(v.log10());
        }
        if !lo.is_finite() {
            return LogAxis { lo: -1.0, hi: 0.0 };
        }
        let (lo, hi) = (lo.floor(), hi.ceil());
        LogAxis {
            lo,
            hi: if hi > lo { hi } else { lo + 1.0 },
        }
    }

    /// Fraction of the panel height from the bottom.
    fn frac(&self, v: f64) -> f64 {
        (v.log10() - self.lo) / (self.hi - self.lo)
    }

    fn decade_step(&self) -> usize {
        let span = (self.hi - self.lo) as usize;
        span.div_ceil(8).max(1)
    }
}

struct Panel {
    left: f64,
    x_max: f64,
    y: LogAxis,
}

impl Panel {
    fn px(&self, x: f64) -> f64 {
        self.left + PANEL_W * x / self.x_max
    }

    fn py(&self, v: f64) -> f64 {
        TOP + PANEL_H * (1.0 - self.y.frac(v))
    }

    fn frame(&self, out: &mut String, y_label: &str) {
        let (l, t) = (self.left, TOP);
        let _ = writeln!(
            out,
            r#"<rect x="{l:.2}" y="{t:.2}" width="{PANEL_W:.2}" height="{PANEL_H:.2}" fill="none" stroke="black"/>"#
        );
        let step = self.y.decade_step();
        let mut e = self.y.lo as i64;
        while e as f64 <= self.y.hi {
            let y = self.py(10f64.powi(e as i32));
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{l:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">1e{e}</text>"#,
                l - 5.0,
                l - 8.0,
                y + 4.0
            );
            e += step as i64;
        }
        for i in 0..=4 {
            let xv = self.x_max * i as f64 / 4.0;
            let x = self.px(xv);
            let _ = writeln!(
                out,
                r#"<line x1="{x:.2}" y1="{b:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
                TOP + PANEL_H + 5.0,
                TOP + PANEL_H + 18.0,
                trim(xv),
                b = TOP + PANEL_H
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">iteration</text>"#,
            l + PANEL_W / 2.0,
            TOP + PANEL_H + 36.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{y_label}</text>"#,
            l + PANEL_W / 2.0,
            TOP - 10.0
        );
    }

    /// Polyline segments through the positive points, clipped to the panel.
    fn curve(&self, out: &mut String, pts: &[(f64, Option<f64>)], colour: &str, dash: bool) {
        let mut segments: Vec<Vec<String>> = vec![Vec::new()];
        for &(x, y) in pts {
            match y {
                Some(v) if v > 0.0 && v.is_finite() => {
                    let yy = self.py(v).clamp(TOP, TOP + PANEL_H);
                    segments.last_mut().expect("non-empty").push(format!(
                        "{:.2},{:.2}",
                        self.px(x),
                        yy
                    ));
                }
                _ => segments.push(Vec::new()),
            }
        }
        let dash = if dash {
            r#" stroke-dasharray="6,4""#
        } else {
            ""
        };
        for seg in segments.iter().filter(|s| !s.is_empty()) {
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5"{dash} points="{}"/>"#,
                seg.join(" ")
            );
        }
    }
}

fn trim(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x:.1}")
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Renders a trace CSV (columns `iter`, `sup_gap` and optionally `eta`).
/// Output depends only on the inputs.
pub fn emit_svg(csv_text: &str, reference: &Reference) -> Result<String> {
    let s = parse_trace(csv_text)?;
    let x_max = s.iter.iter().copied().fold(1.0, f64::max);
    let gamma = reference.gamma;
    let samples: Vec<f64> = (0..=200).map(|i| x_max * i as f64 / 200.0).collect();
    let gamma_curve: Vec<(f64, Option<f64>)> =
        samples.iter().map(|&x| (x, Some(gamma.powf(x)))).collect();
    let bound_curve: Option<Vec<(f64, Option<f64>)>> = reference.bound_scale.map(|c| {
        samples
            .iter()
            .map(|&x| (x, Some(c * gamma.powf(x))))
            .collect()
    });

    let mut gap_values: Vec<f64> = s.gap.clone();
    gap_values.extend(gamma_curve.iter().filter_map(|p| p.1));
    if let Some(b) = &bound_curve {
        gap_values.extend(b.iter().filter_map(|p| p.1));
    }
    let gap_panel = Panel {
        left: LEFTS[0],
        x_max,
        y: LogAxis::fit(gap_values.into_iter()),
    };
    let eta_panel = Panel {
        left: LEFTS[1],
        x_max,
        y: LogAxis::fit(s.eta.iter().flatten().copied()),
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{HEIGHT:.0}" viewBox="0 0 {WIDTH:.0} {HEIGHT:.0}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="22" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(&reference.title)
    );
    gap_panel.frame(&mut out, "sup_gap (log scale)");
    eta_panel.frame(&mut out, "eta (log scale)");

    let gap_pts: Vec<(f64, Option<f64>)> = s
        .iter
        .iter()
        .zip(&s.gap)
        .map(|(&x, &y)| (x, Some(y)))
        .collect();
    let eta_pts: Vec<(f64, Option<f64>)> =
        s.iter.iter().zip(&s.eta).map(|(&x, &y)| (x, y)).collect();
    gap_panel.curve(&mut out, &gamma_curve, "green", false);
    if let Some(b) = &bound_curve {
        gap_panel.curve(&mut out, b, "grey", true);
    }
    gap_panel.curve(&mut out, &gap_pts, "blue", false);
    eta_panel.curve(&mut out, &eta_pts, "red", false);

    let mut legend = vec![("blue", "sup_gap", false), ("green", "y = gamma^x", false)];
    if bound_curve.is_some() {
        legend.push(("grey", "bound", true));
    }
    legend.push(("red", "eta", false));
    let ly = HEIGHT - 14.0;
    for (i, (colour, label, dash)) in legend.iter().enumerate() {
        let x = LEFTS[0] + 160.0 * i as f64;
        let dash = if *dash {
            r#" stroke-dasharray="6,4""#
        } else {
            ""
        };
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{colour}" stroke-width="2"{dash}/><text x="{:.2}" y="{ly:.2}" font-size="12">{}</text>"#,
            ly - 4.0,
            x + 24.0,
            ly - 4.0,
            x + 30.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}
