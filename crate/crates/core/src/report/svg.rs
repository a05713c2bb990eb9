use std::fmt::Write;

/// Minimal SVG document builder. Coordinates are printed with two decimals
/// so output is stable across platforms.
#[derive(Clone, Debug)]
pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

pub(crate) fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self {
            width,
            height,
            body: String::new(),
        }
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, class: &str) -> &mut Self {
        let _ = writeln!(
            self.body,
            r#"<rect class="{class}" x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"/>"#
        );
        self
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, class: &str) -> &mut Self {
        let _ = writeln!(
            self.body,
            r#"<line class="{class}" x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}"/>"#
        );
        self
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], stroke: &str, class: &str) -> &mut Self {
        let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline class="{class}" points="{}" fill="none" stroke="{stroke}"/>"#,
            pts.join(" ")
        );
        self
    }

    pub fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str, class: &str) -> &mut Self {
        let _ = writeln!(
            self.body,
            r#"<circle class="{class}" cx="{x:.2}" cy="{y:.2}" r="{r:.2}" fill="{fill}"/>"#
        );
        self
    }

    pub fn text(&mut self, x: f64, y: f64, text: &str, anchor: &str, class: &str) -> &mut Self {
        let _ = writeln!(
            self.body,
            r#"<text class="{class}" x="{x:.2}" y="{y:.2}" text-anchor="{anchor}">{}</text>"#,
            escape(text)
        );
        self
    }

    /// Opens a group; `attrs` are emitted as `data-*` attributes.
    pub fn open_group(&mut self, class: &str, attrs: &[(&str, String)]) -> &mut Self {
        let mut s = format!(r#"<g class="{class}""#);
        for (k, v) in attrs {
            let _ = write!(s, r#" data-{k}="{}""#, escape(v));
        }
        s.push('>');
        self.body.push_str(&s);
        self.body.push('\n');
        self
    }

    pub fn close_group(&mut self) -> &mut Self {
        self.body.push_str("</g>\n");
        self
    }

    pub fn finish(&self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}
