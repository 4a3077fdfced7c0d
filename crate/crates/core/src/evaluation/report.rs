//! CSV and SVG renderings of evaluation results.

use std::fmt::Write as _;

use super::toc::{Estimate, TocReport};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// TOC curve as CSV: `fraction,att,lo,hi`.
pub fn toc_csv(report: &TocReport) -> String {
    let mut s = String::from("fraction,att,lo,hi\n");
    for p in &report.points {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            p.fraction, p.att.point, p.att.lo, p.att.hi
        );
    }
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let pad = |(lo, hi): (f64, f64)| {
            if (hi - lo).abs() < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let m = 0.05 * (hi - lo);
                (lo - m, hi + m)
            }
        };
        Self {
            x: pad(x),
            y: pad(y),
        }
    }

    fn px(&self, v: f64) -> f64 {
        MARGIN + (v - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn axes(&self, s: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (l, r, b, t) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
        let _ = writeln!(
            s,
            r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>
<line x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>
<line x1="{l}" y1="{b}" x2="{l}" y2="{t}" stroke="black"/>
<text x="{}" y="30" text-anchor="middle" font-size="16">{}</text>
<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>
<text x="15" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {})">{}</text>"#,
            WIDTH / 2.0,
            escape(title),
            WIDTH / 2.0,
            HEIGHT - 15.0,
            escape(xlabel),
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(ylabel)
        );
        for i in 0..=4 {
            let fx = self.x.0 + (self.x.1 - self.x.0) * i as f64 / 4.0;
            let fy = self.y.0 + (self.y.1 - self.y.0) * i as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="10">{}</text>
<text x="{}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"#,
                self.px(fx),
                b + 15.0,
                tick(fx),
                l - 5.0,
                self.py(fy) + 3.0,
                tick(fy)
            );
        }
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

fn polyline(frame: &Frame, pts: &[(f64, f64)]) -> String {
    pts.iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn open(s: &mut String) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
    );
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
}

/// TOC curve with its confidence band and the dashed ATE baseline.
pub fn toc_svg(report: &TocReport, title: &str) -> String {
    let mut xs: Vec<f64> = vec![0.0];
    xs.extend(report.points.iter().map(|p| p.fraction));
    let y = extent(
        report
            .points
            .iter()
            .flat_map(|p| [p.att.lo, p.att.hi])
            .chain([report.baseline.point, 0.0]),
    );
    let frame = Frame::new((0.0, 1.0), y);
    let mut s = String::new();
    open(&mut s);
    frame.axes(&mut s, title, "treated fraction K/N", "ATT");
    let upper: Vec<(f64, f64)> = report
        .points
        .iter()
        .map(|p| (p.fraction, p.att.hi))
        .collect();
    let mut band = upper.clone();
    band.extend(report.points.iter().rev().map(|p| (p.fraction, p.att.lo)));
    let _ = writeln!(
        s,
        r##"<polygon points="{}" fill="#1f77b4" fill-opacity="0.2" stroke="none"/>"##,
        polyline(&frame, &band)
    );
    let line: Vec<(f64, f64)> = report
        .points
        .iter()
        .map(|p| (p.fraction, p.att.point))
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        polyline(&frame, &line)
    );
    let b = frame.py(report.baseline.point);
    let _ = writeln!(
        s,
        r#"<line x1="{:.2}" y1="{b:.2}" x2="{:.2}" y2="{b:.2}" stroke="gray" stroke-dasharray="6 4"/>"#,
        frame.px(0.0),
        frame.px(1.0)
    );
    s.push_str("</svg>\n");
    s
}

/// One labelled estimate in an interval chart, with an optional dashed
/// reference value drawn at the same row.
#[derive(Debug, Clone)]
pub struct IntervalRow {
    pub label: String,
    pub estimate: Estimate,
    pub reference: Option<f64>,
}

/// Horizontal point-and-whisker chart, one row per estimate.
pub fn interval_svg(rows: &[IntervalRow], title: &str, xlabel: &str) -> String {
    let x = extent(
        rows.iter()
            .flat_map(|r| {
                [
                    r.estimate.lo,
                    r.estimate.hi,
                    r.reference.unwrap_or(r.estimate.point),
                ]
            })
            .chain([0.0]),
    );
    let frame = Frame::new(x, (0.0, 1.0));
    let row_height = ((HEIGHT - 2.0 * MARGIN) / rows.len().max(1) as f64).min(40.0);
    let height = (2.0 * MARGIN + row_height * rows.len() as f64).max(HEIGHT);
    let left = 230.0;
    let scale =
        |v: f64| left + (frame.px(v) - MARGIN) / (WIDTH - 2.0 * MARGIN) * (WIDTH - left - 20.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">
<rect width="{WIDTH}" height="{height}" fill="white"/>
<text x="{}" y="30" text-anchor="middle" font-size="16">{}</text>
<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        WIDTH / 2.0,
        escape(title),
        (left + WIDTH - 20.0) / 2.0,
        height - 15.0,
        escape(xlabel)
    );
    let zero = scale(0.0);
    let _ = writeln!(
        s,
        r#"<line x1="{zero:.2}" y1="{MARGIN}" x2="{zero:.2}" y2="{:.2}" stroke="lightgray"/>"#,
        height - MARGIN
    );
    for (i, r) in rows.iter().enumerate() {
        let y = MARGIN + row_height * (i as f64 + 0.5);
        let e = &r.estimate;
        let _ = writeln!(
            s,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="11">{}</text>
<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#1f77b4" stroke-width="2"/>
<circle cx="{:.2}" cy="{y:.2}" r="4" fill="#1f77b4"/>"##,
            left - 10.0,
            y + 4.0,
            escape(&r.label),
            scale(e.lo),
            scale(e.hi),
            scale(e.point)
        );
        if let Some(b) = r.reference {
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
                scale(b),
                y - row_height / 2.0,
                scale(b),
                y + row_height / 2.0
            );
        }
    }
    for i in 0..=4 {
        let v = frame.x.0 + (frame.x.1 - frame.x.0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{}</text>"#,
            scale(v),
            height - MARGIN + 15.0,
            tick(v)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// A named polyline.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Line chart with a legend.
pub fn line_svg(series: &[Series], title: &str, xlabel: &str, ylabel: &str) -> String {
    let x = extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let y = extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let frame = Frame::new(x, y);
    let mut s = String::new();
    open(&mut s);
    frame.axes(&mut s, title, xlabel, ylabel);
    for (i, line) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>
<text x="{}" y="{}" font-size="11" fill="{colour}">{}</text>"#,
            polyline(&frame, &line.points),
            WIDTH - MARGIN - 120.0,
            MARGIN + 14.0 * (i as f64 + 1.0),
            escape(&line.name)
        );
        for &(px, py) in &line.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#,
                frame.px(px),
                frame.py(py)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::toc::TocPoint;
    use std::collections::BTreeMap;

    fn est(v: f64) -> Estimate {
        Estimate {
            point: v,
            lo: v - 0.01,
            hi: v + 0.01,
        }
    }

    fn report() -> TocReport {
        TocReport {
            points: [0.25, 0.5, 1.0]
                .iter()
                .map(|&f| TocPoint {
                    fraction: f,
                    att: est(0.1 - 0.05 * f),
                })
                .collect(),
            ate: vec![est(0.0), est(0.02)],
            baseline_action: 1,
            baseline: est(0.02),
            policy_ate: est(0.05),
            att_at_25: est(0.0875),
            gain_at_25: est(0.0675),
            autoc: est(0.01),
            replicates: 10,
            level: 0.95,
            seed: 1,
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn csv_has_one_line_per_point() {
        let csv = toc_csv(&report());
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("fraction,att,lo,hi\n0.25,"));
    }

    #[test]
    fn svgs_are_well_formed() {
        for svg in [
            toc_svg(&report(), "a < b"),
            interval_svg(
                &[IntervalRow {
                    label: "tide".into(),
                    estimate: est(0.05),
                    reference: Some(0.02),
                }],
                "cells",
                "ATT@25%",
            ),
            line_svg(
                &[Series {
                    name: "pump".into(),
                    points: vec![(0.0, 1.0), (1.0, 0.5)],
                }],
                "slice",
                "x",
                "y",
            ),
        ] {
            assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
            assert!(!svg.contains("NaN"));
            assert!(!svg.contains("a < b"));
        }
    }
}
