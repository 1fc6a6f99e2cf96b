//! Minimal hand-written SVG emitter. Output depends only on the calls made,
//! so identical inputs give identical bytes.

use std::fmt::Write as _;

use crate::soi::SoiCategory;

pub(crate) struct Svg {
    buf: String,
}

/// Fixed-precision coordinate formatting.
pub(crate) fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

pub(crate) fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            other => out.push(other),
        }
    }
    out
}

impl Svg {
    pub fn new(width: u32, height: u32) -> Self {
        let mut buf = String::new();
        let _ = writeln!(
            buf,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
        );
        let _ = writeln!(buf, r##"<rect width="{width}" height="{height}" fill="#ffffff"/>"##);
        Svg { buf }
    }

    pub fn raw(&mut self, element: &str) {
        self.buf.push_str(element);
        self.buf.push('\n');
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        let _ = writeln!(
            self.buf,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}" stroke-width="{}"/>"#,
            num(x1),
            num(y1),
            num(x2),
            num(y2),
            num(width)
        );
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, stroke: Option<&str>) {
        let stroke = stroke
            .map(|s| format!(r#" stroke="{s}" stroke-width="1""#))
            .unwrap_or_default();
        let _ = writeln!(
            self.buf,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}"{stroke}/>"#,
            num(x),
            num(y),
            num(w),
            num(h)
        );
    }

    /// `anchor` is one of `start`, `middle`, `end`.
    pub fn text(&mut self, x: f64, y: f64, size: u32, anchor: &str, fill: &str, content: &str) {
        let _ = writeln!(
            self.buf,
            r#"<text x="{}" y="{}" font-size="{size}" text-anchor="{anchor}" fill="{fill}">{}</text>"#,
            num(x),
            num(y),
            escape(content)
        );
    }

    pub fn rotated_text(&mut self, x: f64, y: f64, size: u32, content: &str) {
        let _ = writeln!(
            self.buf,
            r##"<text x="{0}" y="{1}" font-size="{size}" text-anchor="middle" fill="#000000" transform="rotate(-90 {0} {1})">{2}</text>"##,
            num(x),
            num(y),
            escape(content)
        );
    }

    pub fn marker(&mut self, category: SoiCategory, x: f64, y: f64, r: f64) {
        let color = category_color(category);
        let el = match category {
            SoiCategory::Une => format!(
                r#"<circle cx="{}" cy="{}" r="{}" fill="{color}" fill-opacity="0.7"/>"#,
                num(x),
                num(y),
                num(r)
            ),
            SoiCategory::Ace => format!(
                r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{color}" fill-opacity="0.7"/>"#,
                num(x - r),
                num(y - r),
                num(2.0 * r),
                num(2.0 * r)
            ),
            SoiCategory::Frge1t => format!(
                r#"<polygon points="{},{} {},{} {},{}" fill="{color}" fill-opacity="0.7"/>"#,
                num(x),
                num(y - r),
                num(x + r),
                num(y + r),
                num(x - r),
                num(y + r)
            ),
            SoiCategory::FrgeGe2t => format!(
                r#"<polygon points="{},{} {},{} {},{} {},{}" fill="{color}" fill-opacity="0.7"/>"#,
                num(x),
                num(y - r),
                num(x + r),
                num(y),
                num(x),
                num(y + r),
                num(x - r),
                num(y)
            ),
            SoiCategory::Ele => format!(
                r#"<polygon points="{},{} {},{} {},{}" fill="{color}" fill-opacity="0.7"/>"#,
                num(x - r),
                num(y - r),
                num(x + r),
                num(y - r),
                num(x),
                num(y + r)
            ),
            SoiCategory::Lle => format!(
                r#"<path d="M{} {}L{} {}M{} {}L{} {}" stroke="{color}" stroke-width="1.5"/>"#,
                num(x - r),
                num(y - r),
                num(x + r),
                num(y + r),
                num(x - r),
                num(y + r),
                num(x + r),
                num(y - r)
            ),
        };
        self.raw(&el);
    }

    pub fn finish(mut self) -> String {
        self.buf.push_str("</svg>\n");
        self.buf
    }
}

pub(crate) fn category_color(category: SoiCategory) -> &'static str {
    match category {
        SoiCategory::Une => "#d62728",
        SoiCategory::Ace => "#2ca02c",
        SoiCategory::Frge1t => "#ff7f0e",
        SoiCategory::FrgeGe2t => "#9467bd",
        SoiCategory::Ele => "#1f77b4",
        SoiCategory::Lle => "#8c564b",
    }
}

/// White-to-blue ramp; `t` is clamped to [0, 1].
pub(crate) fn blue_ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |from: f64, to: f64| (from + (to - from) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(247.0, 8.0), lerp(251.0, 48.0), lerp(255.0, 107.0))
}
