//! Schematic SVG rendering of a scene with grounded phrase boxes.

use std::fmt::Write;

use crate::explain::Annotation;
use crate::worldsim::Scene;

const SIZE: f64 = 480.0;
const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Part regions in grey, keypoints as dots, each grounded phrase as a
/// colored box with its label, and the sentence underneath.
pub fn render_annotation(scene: &Scene, annotation: &Annotation) -> String {
    let px = |v: f64| v * SIZE;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
        w = SIZE,
        h = SIZE + 60.0
    );
    let _ = writeln!(out, r##"<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="#fafafa" stroke="#999"/>"##);
    for (region, kp) in scene.regions.iter().zip(&scene.keypoints) {
        let b = region.bbox;
        let _ = writeln!(
            out,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#e8e8e8" fill-opacity="0.5" stroke="#bbb"/>"##,
            px(b.x),
            px(b.y),
            px(b.w),
            px(b.h)
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" fill="#888" font-size="9">{}</text>"##,
            px(b.x) + 2.0,
            px(b.y + b.h) - 2.0,
            escape(&region.part)
        );
        let _ = writeln!(out, r##"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="#555"/>"##, px(kp[0]), px(kp[1]));
    }
    for (i, p) in annotation.phrases.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let b = p.bbox;
        let _ = writeln!(
            out,
            r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="{color}" stroke-width="2.5"/>"#,
            px(b.x),
            px(b.y),
            px(b.w),
            px(b.h)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}" font-weight="bold">{}</text>"#,
            px(b.x),
            (px(b.y) - 3.0).max(11.0),
            escape(&p.text)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="6" y="{:.1}">{}</text>"#,
        SIZE + 20.0,
        escape(&annotation.sentence)
    );
    if let Some(cf) = &annotation.counterfactual {
        let _ = writeln!(out, r##"<text x="6" y="{:.1}" fill="#555">{}</text>"##, SIZE + 42.0, escape(&cf.negation));
    }
    out.push_str("</svg>\n");
    out
}
