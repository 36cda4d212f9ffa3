//! Two-track SVG timeline: ground truth in red above predictions in yellow.

use std::fmt::Write as _;

use tempseg::featio::Annotation;
use tempseg::infer::Prediction;

pub const WIDTH: f64 = 1000.0;
pub const LEFT: f64 = 110.0;
pub const RIGHT: f64 = 20.0;
pub const GT_COLOR: &str = "#d62728";
pub const PRED_COLOR: &str = "#f2c300";

const TRACK_H: f64 = 24.0;
const GT_Y: f64 = 20.0;
const PRED_Y: f64 = 60.0;
const AXIS_Y: f64 = 100.0;
const HEIGHT: f64 = 130.0;

/// Horizontal position of time `t` on an axis spanning `[0, span]`.
pub fn x_of(t: f64, span: f64) -> f64 {
    LEFT + (WIDTH - LEFT - RIGHT) * (t.clamp(0.0, span) / span)
}

/// Tick spacing from the 1-2-5 series giving at most ten intervals.
fn tick_step(span: f64) -> f64 {
    let mut base = 10f64.powf((span / 10.0).log10().floor());
    loop {
        for m in [1.0, 2.0, 5.0] {
            if span / (base * m) <= 10.0 {
                return base * m;
            }
        }
        base *= 10.0;
    }
}

fn bar(svg: &mut String, start: f64, end: f64, span: f64, y: f64, color: &str, title: &str) {
    let (x0, x1) = (x_of(start, span), x_of(end, span));
    let _ = writeln!(
        svg,
        r#"  <rect x="{x0:.3}" y="{y:.3}" width="{:.3}" height="{TRACK_H:.3}" fill="{color}"><title>{title}</title></rect>"#,
        x1 - x0
    );
}

/// The axis covers the annotated duration, widened to fit any prediction
/// that runs past it.
pub fn timeline_svg(gt: &Annotation, pred: &Prediction) -> String {
    let pred_end = pred.segments.iter().map(|s| s.end).fold(0.0, f64::max);
    let span = gt.duration.max(pred_end);
    let span = if span > 0.0 { span } else { 1.0 };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, "  <title>{}</title>", escape(&gt.id));
    for (label, y) in [("ground truth", GT_Y), ("predicted", PRED_Y)] {
        let _ = writeln!(svg, r#"  <text x="8" y="{:.3}">{label}</text>"#, y + TRACK_H * 0.7);
        let _ = writeln!(
            svg,
            "  <rect x=\"{LEFT:.3}\" y=\"{y:.3}\" width=\"{:.3}\" height=\"{TRACK_H:.3}\" fill=\"#f4f4f4\"/>",
            WIDTH - LEFT - RIGHT
        );
    }
    for s in &gt.segments.segments {
        bar(&mut svg, s.start, s.end, span, GT_Y, GT_COLOR, &format!("{:.3}-{:.3} s", s.start, s.end));
    }
    for s in &pred.segments {
        let title = format!("{:.3}-{:.3} s, score {:.3}", s.start, s.end, s.score);
        bar(&mut svg, s.start, s.end, span, PRED_Y, PRED_COLOR, &title);
    }
    let _ = writeln!(
        svg,
        r#"  <line x1="{LEFT:.3}" y1="{AXIS_Y:.3}" x2="{:.3}" y2="{AXIS_Y:.3}" stroke="black"/>"#,
        WIDTH - RIGHT
    );
    let step = tick_step(span);
    let mut i = 0u32;
    loop {
        let t = f64::from(i) * step;
        if t > span + 1e-9 {
            break;
        }
        let x = x_of(t, span);
        let _ = writeln!(
            svg,
            r#"  <line x1="{x:.3}" y1="{AXIS_Y:.3}" x2="{x:.3}" y2="{:.3}" stroke="black"/>"#,
            AXIS_Y + 5.0
        );
        let _ = writeln!(
            svg,
            r#"  <text x="{x:.3}" y="{:.3}" text-anchor="middle">{}</text>"#,
            AXIS_Y + 19.0,
            trim(t)
        );
        i += 1;
    }
    svg.push_str("</svg>\n");
    svg
}

fn trim(t: f64) -> String {
    let s = format!("{t:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
