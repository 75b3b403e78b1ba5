//! Channel layouts and SVG renderings of selections and metric distributions.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{duplicate_report, EvalSummary};
use crate::error::{Error, Result};
use crate::signal::EegTrial;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelPosition {
    pub channel_index: usize,
    pub label: String,
    pub x: f64,
    pub y: f64,
}

/// 2-D electrode coordinates inside the unit disk.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelLayout {
    positions: Vec<ChannelPosition>,
}

impl ChannelLayout {
    /// `Q` channels on a square grid, row-major from the top left, scaled into the unit disk.
    pub fn grid(q: usize) -> Self {
        let cols = (q as f64).sqrt().ceil().max(1.0) as usize;
        let rows = q.div_ceil(cols).max(1);
        let span = |n: usize, i: usize| if n == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (n - 1) as f64 };
        let scale = 0.8 / std::f64::consts::SQRT_2;
        let labels = EegTrial::default_labels(q);
        let positions = (0..q)
            .map(|c| ChannelPosition {
                channel_index: c,
                label: labels[c].clone(),
                x: scale * span(cols, c % cols),
                y: -scale * span(rows, c / cols),
            })
            .collect();
        ChannelLayout { positions }
    }

    /// Parses `channel_index,label,x,y` rows with a header line.
    pub fn from_reader(r: impl Read, origin: &Path) -> Result<Self> {
        let fail = |msg: String| Error::Format { file: origin.to_path_buf(), msg };
        let mut positions = Vec::new();
        for row in csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r).deserialize() {
            let p: ChannelPosition = row.map_err(|e| fail(e.to_string()))?;
            if !(-1.0..=1.0).contains(&p.x) || !(-1.0..=1.0).contains(&p.y) {
                return Err(fail(format!("channel {} has coordinates outside [-1, 1]", p.channel_index)));
            }
            if positions.iter().any(|q: &ChannelPosition| q.channel_index == p.channel_index) {
                return Err(fail(format!("channel {} listed twice", p.channel_index)));
            }
            positions.push(p);
        }
        Ok(ChannelLayout { positions })
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f, path)
    }

    pub fn position(&self, channel: usize) -> Option<&ChannelPosition> {
        self.positions.iter().find(|p| p.channel_index == channel)
    }

    pub fn positions(&self) -> &[ChannelPosition] {
        &self.positions
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarkerClass {
    Unselected,
    Unique,
    Duplicated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMarker {
    pub channel_index: usize,
    pub label: String,
    pub x: f64,
    pub y: f64,
    pub class: MarkerClass,
    /// How many times the channel was selected.
    pub count: usize,
}

/// Sidecar contents of a rendered channel map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMap {
    pub q: usize,
    pub selection: Vec<usize>,
    pub markers: Vec<ChannelMarker>,
}

const CANVAS: f64 = 400.0;

fn to_px(v: f64) -> f64 {
    CANVAS / 2.0 + v * (CANVAS / 2.0 - 30.0)
}

/// Writes an SVG head map of `selection` over channels `0..q` to `out_path` and the same data
/// as JSON next to it (`out_path` with a `.json` extension). Returns the sidecar path.
pub fn render_channel_map(selection: &[usize], q: usize, layout: &ChannelLayout, out_path: &Path) -> Result<(ChannelMap, PathBuf)> {
    if let Some(&bad) = selection.iter().find(|&&c| c >= q) {
        return Err(Error::invalid(format!("selected channel {bad} out of range for {q} channels")));
    }
    let dup = duplicate_report(selection);
    let markers = (0..q)
        .map(|c| {
            let p = layout.position(c).ok_or_else(|| Error::invalid(format!("layout has no coordinates for channel {c}")))?;
            let count = selection.iter().filter(|&&s| s == c).count();
            let class = if dup.duplicated.contains(&c) {
                MarkerClass::Duplicated
            } else if count == 1 {
                MarkerClass::Unique
            } else {
                MarkerClass::Unselected
            };
            Ok(ChannelMarker { channel_index: c, label: p.label.clone(), x: p.x, y: p.y, class, count })
        })
        .collect::<Result<Vec<_>>>()?;
    let map = ChannelMap { q, selection: selection.to_vec(), markers };

    let mut svg = String::new();
    let c = CANVAS / 2.0;
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">"#);
    let _ = writeln!(svg, r##"<circle cx="{c}" cy="{c}" r="{}" fill="none" stroke="#222" stroke-width="2"/>"##, c - 30.0);
    for m in &map.markers {
        let (x, y) = (to_px(m.x), to_px(-m.y));
        let style = match m.class {
            MarkerClass::Unselected => r##"fill="none" stroke="#555""##,
            MarkerClass::Unique => r##"fill="#1f5fbf" stroke="#1f5fbf""##,
            MarkerClass::Duplicated => r##"fill="#c0392b" stroke="#7b241c""##,
        };
        let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="9" {style} stroke-width="1.5" class="{:?}"/>"#, m.class);
        let _ = writeln!(svg, r#"<text x="{x:.2}" y="{:.2}" font-size="9" text-anchor="middle">{}</text>"#, y + 20.0, xml_escape(&m.label));
    }
    svg.push_str("</svg>\n");

    write_file(out_path, svg.as_bytes())?;
    let sidecar = out_path.with_extension("json");
    write_file(&sidecar, &serde_json::to_vec_pretty(&map)?)?;
    Ok((map, sidecar))
}

/// Box plot of per-example SI-SDRi, overall and per subject.
pub fn render_quartile_plot(summary: &EvalSummary, out_path: &Path) -> Result<()> {
    let mut boxes = vec![("all".to_string(), &summary.si_sdri)];
    boxes.extend(summary.per_subject.iter().map(|(s, a)| (s.clone(), a)));
    let lo = boxes.iter().map(|(_, a)| a.min).fold(0.0, f64::min);
    let hi = boxes.iter().map(|(_, a)| a.max).fold(0.0, f64::max);
    let span = (hi - lo).max(1e-9);
    let (w, h, pad) = (80.0 * boxes.len() as f64 + 60.0, 320.0, 30.0);
    let ypx = |v: f64| pad + (hi - v) / span * (h - 2.0 * pad);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">"#);
    let _ = writeln!(svg, r##"<line x1="40" x2="{}" y1="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4"/>"##, w - 10.0, ypx(0.0), ypx(0.0));
    for (i, (name, a)) in boxes.iter().enumerate() {
        let x = 60.0 + 80.0 * i as f64;
        let _ = writeln!(svg, r##"<line x1="{:.2}" x2="{:.2}" y1="{:.2}" y2="{:.2}" stroke="#333"/>"##, x + 20.0, x + 20.0, ypx(a.max), ypx(a.min));
        let _ = writeln!(
            svg,
            r##"<rect x="{x:.2}" y="{:.2}" width="40" height="{:.2}" fill="#d6e4f5" stroke="#333"/>"##,
            ypx(a.q3),
            (ypx(a.q1) - ypx(a.q3)).max(0.5)
        );
        let _ = writeln!(svg, r##"<line x1="{x:.2}" x2="{:.2}" y1="{:.2}" y2="{:.2}" stroke="#c0392b" stroke-width="2"/>"##, x + 40.0, ypx(a.median), ypx(a.median));
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{:.2}</text>"#, x + 20.0, ypx(a.max) - 6.0, a.median);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#, x + 20.0, h - 8.0, xml_escape(name));
    }
    svg.push_str("</svg>\n");
    write_file(out_path, svg.as_bytes())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
