//! Figure archetypes. Numeric labels print values with `{}` so they read
//! back to the exact numbers in the result files.

use super::svg::Svg;
use crate::analytics::{CrossMatrix, FeedbackFit, RoleStats, SweepRecord};
use crate::error::{invalid, Result};
use crate::geometry::PcaProjection;
use crate::intervention::{SteeringSweep, VerdictResult};

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f"];

#[derive(Clone, Copy, Debug)]
struct Scale {
    d0: f64,
    d1: f64,
    r0: f64,
    r1: f64,
}

impl Scale {
    fn new(values: impl IntoIterator<Item = f64>, r0: f64, r1: f64) -> Self {
        let (mut d0, mut d1) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.into_iter().filter(|v| v.is_finite()) {
            d0 = d0.min(v);
            d1 = d1.max(v);
        }
        if !(d0 <= d1) {
            (d0, d1) = (0.0, 1.0);
        }
        if d0 == d1 {
            (d0, d1) = (d0 - 0.5, d1 + 0.5);
        }
        Self { d0, d1, r0, r1 }
    }

    fn with_zero(mut self) -> Self {
        self.d0 = self.d0.min(0.0);
        self.d1 = self.d1.max(0.0);
        self
    }

    fn at(&self, v: f64) -> f64 {
        self.r0 + (v - self.d0) / (self.d1 - self.d0) * (self.r1 - self.r0)
    }
}

fn heat(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (247.0 - t * 239.0).round() as u8;
    let g = (251.0 - t * 203.0).round() as u8;
    let b = (255.0 - t * 148.0).round() as u8;
    format!("rgb({r},{g},{b})")
}

fn empty(kind: &str) -> crate::error::Error {
    invalid(format!("no results to draw a {kind} figure"))
}

/// Mean entropy per role as bars, median as a tick.
pub fn role_bars(stats: &RoleStats) -> Result<String> {
    let rows: Vec<_> = stats.rows.iter().filter_map(|r| Some((r.role, r.summary.as_ref()?))).collect();
    if rows.is_empty() {
        return Err(empty("role"));
    }
    let (w, h) = (120.0 + 100.0 * rows.len() as f64, 320.0);
    let y = Scale::new(rows.iter().flat_map(|(_, s)| [s.mean, s.median]), 270.0, 40.0).with_zero();
    let mut svg = Svg::new(w, h);
    svg.text(w / 2.0, 20.0, "mean output entropy by role (nats)", "middle", "title");
    for (i, (role, s)) in rows.iter().enumerate() {
        let x = 80.0 + 100.0 * i as f64;
        svg.open_group("bar", &[("role", format!("{role:?}")), ("mean", s.mean.to_string())]);
        svg.rect(x, y.at(s.mean), 60.0, y.at(0.0) - y.at(s.mean), PALETTE[i % PALETTE.len()], "mean");
        svg.line(x, y.at(s.median), x + 60.0, y.at(s.median), "black", "median");
        svg.text(x + 30.0, y.at(s.mean) - 6.0, &s.mean.to_string(), "middle", "value");
        svg.text(x + 30.0, 290.0, &format!("{role:?}"), "middle", "label");
        svg.close_group();
    }
    Ok(svg.finish())
}

/// Generator × evaluator heat map; each cell carries its value label and
/// columns whose diagonal is the minimum are outlined.
pub fn matrix_heatmap(m: &CrossMatrix) -> Result<String> {
    if m.generators.is_empty() || m.evaluators.is_empty() {
        return Err(empty("matrix"));
    }
    let cell = 70.0;
    let (x0, y0) = (120.0, 60.0);
    let w = x0 + cell * m.evaluators.len() as f64 + 20.0;
    let h = y0 + cell * m.generators.len() as f64 + 40.0;
    let scale = Scale::new(m.cells.iter().flatten().flatten().copied(), 0.0, 1.0);
    let mut svg = Svg::new(w, h);
    svg.text(w / 2.0, 20.0, &format!("{:?} condition: rows generator, columns evaluator", m.condition), "middle", "title");
    for (e, name) in m.evaluators.iter().enumerate() {
        svg.text(x0 + cell * (e as f64 + 0.5), y0 - 8.0, name, "middle", "evaluator");
    }
    let flags = m.diagonal_minimum_flags();
    for (g, gname) in m.generators.iter().enumerate() {
        let y = y0 + cell * g as f64;
        svg.text(x0 - 8.0, y + cell / 2.0, gname, "end", "generator");
        for (e, ename) in m.evaluators.iter().enumerate() {
            let x = x0 + cell * e as f64;
            svg.open_group("cell", &[("generator", gname.clone()), ("evaluator", ename.clone())]);
            match m.cells[g][e] {
                Some(v) => {
                    svg.rect(x, y, cell, cell, &heat(scale.at(v)), "heat");
                    svg.text(x + cell / 2.0, y + cell / 2.0 + 4.0, &v.to_string(), "middle", "value");
                }
                None => {
                    svg.rect(x, y, cell, cell, "#eeeeee", "missing");
                }
            }
            if gname == ename && flags[e] == Some(true) {
                svg.line(x, y + cell - 2.0, x + cell, y + cell - 2.0, "black", "diagonal-minimum");
            }
            svg.close_group();
        }
    }
    Ok(svg.finish())
}

/// Relative excess surprise against relative entropy change, with the
/// fitted line and its coefficients.
pub fn sweep_scatter(records: &[SweepRecord], fit: &FeedbackFit) -> Result<String> {
    let pts: Vec<(f64, f64)> = records.iter().filter_map(|r| Some((r.rel_excess?, r.rel_delta?))).collect();
    if pts.is_empty() {
        return Err(empty("sweep"));
    }
    let (w, h) = (480.0, 360.0);
    let x = Scale::new(pts.iter().map(|p| p.0), 60.0, 450.0);
    let y = Scale::new(pts.iter().map(|p| p.1).chain([x.d0, x.d1].map(|v| fit.a * v + fit.beta)), 320.0, 40.0);
    let mut svg = Svg::new(w, h);
    svg.text(w / 2.0, 20.0, "relative entropy change vs relative excess surprise", "middle", "title");
    for &(px, py) in &pts {
        svg.circle(x.at(px), y.at(py), 2.5, PALETTE[0], "point");
    }
    svg.line(
        x.at(x.d0),
        y.at(fit.a * x.d0 + fit.beta),
        x.at(x.d1),
        y.at(fit.a * x.d1 + fit.beta),
        PALETTE[1],
        "fit",
    );
    svg.text(70.0, 55.0, &format!("a = {}", fit.a), "start", "slope");
    svg.text(70.0, 70.0, &format!("beta = {}", fit.beta), "start", "intercept");
    svg.text(70.0, 85.0, &format!("n = {}", fit.n_points), "start", "count");
    Ok(svg.finish())
}

/// One panel of a centroid curve grid.
#[derive(Clone, Copy, Debug)]
pub struct PcPanel<'a> {
    pub feature: &'a str,
    pub condition: &'a str,
    pub layer: u32,
    pub projection: &'a PcaProjection,
}

/// Centroid curves in the plane of their first two components, one panel
/// per (feature, condition): features across, conditions down, both in
/// order of first appearance.
pub fn pc_curves(panels: &[PcPanel<'_>]) -> Result<String> {
    if panels.is_empty() {
        return Err(empty("centroid curve"));
    }
    let mut features: Vec<&str> = Vec::new();
    let mut conditions: Vec<&str> = Vec::new();
    for p in panels {
        if !features.contains(&p.feature) {
            features.push(p.feature);
        }
        if !conditions.contains(&p.condition) {
            conditions.push(p.condition);
        }
    }
    let size = 180.0;
    let mut svg = Svg::new(40.0 + size * features.len() as f64, 40.0 + size * conditions.len() as f64);
    for p in panels {
        let col = features.iter().position(|f| *f == p.feature).unwrap();
        let row = conditions.iter().position(|c| *c == p.condition).unwrap();
        let (ox, oy) = (30.0 + size * col as f64, 30.0 + size * row as f64);
        let comps = &p.projection.components;
        let n = comps.first().map_or(0, |c| c.coords.len());
        let pc = |k: usize, i: usize| comps.get(k).map_or(0.0, |c| c.coords[i]);
        let pts: Vec<(f64, f64)> = (0..n).map(|i| (pc(0, i), pc(1, i))).collect();
        let xs = Scale::new(pts.iter().map(|q| q.0), ox + 10.0, ox + size - 20.0);
        let ys = Scale::new(pts.iter().map(|q| q.1), oy + size - 30.0, oy + 20.0);
        svg.open_group(
            "panel",
            &[
                ("feature", p.feature.to_string()),
                ("condition", p.condition.to_string()),
                ("layer", p.layer.to_string()),
                ("row", row.to_string()),
                ("col", col.to_string()),
            ],
        );
        svg.rect(ox, oy, size - 10.0, size - 10.0, "none", "frame");
        svg.text(ox + (size - 10.0) / 2.0, oy + 12.0, &format!("{} / {}", p.feature, p.condition), "middle", "panel-title");
        let mapped: Vec<(f64, f64)> = pts.iter().map(|&(a, b)| (xs.at(a), ys.at(b))).collect();
        svg.polyline(&mapped, PALETTE[row % PALETTE.len()], "curve");
        for (i, &(a, b)) in mapped.iter().enumerate() {
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            svg.circle(a, b, 2.5, &heat(t), "bin");
        }
        if let Some(c) = comps.first() {
            svg.text(ox + 5.0, oy + size - 15.0, &format!("PC1 {}", c.explained), "start", "explained");
        }
        svg.close_group();
    }
    Ok(svg.finish())
}

/// Output entropy per steered bin with the baseline as a dashed reference.
pub fn steering_lines(sweep: &SteeringSweep) -> Result<String> {
    if sweep.bins.is_empty() {
        return Err(empty("steering"));
    }
    let (w, h) = (480.0, 340.0);
    let base = sweep.baseline_h0.iter().sum::<f64>() / sweep.baseline_h0.len() as f64;
    let x = Scale::new(sweep.bins.iter().map(|b| b.bin_feature_mean), 60.0, 450.0);
    let y = Scale::new(sweep.bins.iter().map(|b| b.mean).chain([base]), 300.0, 40.0);
    let mut svg = Svg::new(w, h);
    svg.text(w / 2.0, 20.0, &format!("output entropy after steering layers {}..={}", sweep.layer_lo, sweep.layer_hi), "middle", "title");
    svg.line(60.0, y.at(base), 450.0, y.at(base), "#999999", "baseline");
    let pts: Vec<(f64, f64)> = sweep.bins.iter().map(|b| (x.at(b.bin_feature_mean), y.at(b.mean))).collect();
    svg.polyline(&pts, PALETTE[0], "steered");
    for (b, &(px, py)) in sweep.bins.iter().zip(&pts) {
        svg.open_group("bin", &[("bin", b.bin.to_string()), ("mean", b.mean.to_string())]);
        svg.circle(px, py, 3.0, PALETTE[0], "point");
        svg.close_group();
    }
    if let Some(s) = sweep.slope {
        svg.text(70.0, 55.0, &format!("slope = {s}"), "start", "slope");
    }
    svg.text(70.0, 70.0, &format!("frac = {}", sweep.frac), "start", "frac");
    Ok(svg.finish())
}

/// Verdict probability per domain and arm.
pub fn verdict_bars(results: &[VerdictResult]) -> Result<String> {
    if results.is_empty() {
        return Err(empty("verdict"));
    }
    let bar = 22.0;
    let w = 80.0 + bar * 1.5 * results.len() as f64;
    let h = 300.0;
    let mut svg = Svg::new(w, h);
    svg.text(w / 2.0, 20.0, "P(PREFILLED) at the verdict cue", "middle", "title");
    let arms = ["PrefillOnly", "PrefillPlusPatch", "NoPrefill", "NoPrefillPlusPatch"];
    for (i, r) in results.iter().enumerate() {
        let x = 50.0 + bar * 1.5 * i as f64;
        let top = 250.0 - 200.0 * r.p_prefilled;
        let arm = format!("{:?}", r.condition);
        let color = PALETTE[arms.iter().position(|a| *a == arm).unwrap_or(5)];
        svg.open_group("verdict", &[("domain", r.domain.clone()), ("arm", arm), ("p", r.p_prefilled.to_string())]);
        svg.rect(x, top, bar, 250.0 - top, color, "p");
        svg.close_group();
    }
    svg.line(45.0, 150.0, w - 10.0, 150.0, "#999999", "half");
    Ok(svg.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TemplateCondition;

    #[test]
    fn one_cell_matrix() {
        let m = CrossMatrix {
            condition: TemplateCondition::AssistantField,
            persona: None,
            generators: vec!["a".into()],
            evaluators: vec!["a".into()],
            cells: vec![vec![Some(0.25)]],
            counts: vec![vec![3]],
        };
        let s = matrix_heatmap(&m).unwrap();
        assert_eq!(s.matches("class=\"heat\"").count(), 1);
        assert!(s.contains(">0.25</text>"));
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(verdict_bars(&[]).is_err());
        assert!(pc_curves(&[]).is_err());
    }
}
