//! Attention-weight heatmaps: one row per decoder step, one column per
//! encoder frame. SVG for inspection, plain PPM as a portable fallback.
//!
//! Light grey boxes outline the interval where each step's distribution may
//! be nonzero; red vertical lines mark gold segment boundaries (converted to
//! encoder frames) when the dataset carries them.

use std::fmt::Write as _;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nnet::Model;
use crate::replay;
use crate::tape::Tape;
use crate::training::{forced_align, AlignParams};

pub struct PlotRow {
    pub weights: Vec<f64>,
    /// 1-based inclusive interval of allowed mass.
    pub support: (usize, usize),
    pub caption: String,
}

pub struct AttentionPlot {
    pub rows: Vec<PlotRow>,
    pub enc_len: usize,
    /// Gold boundaries in encoder frames (1-based end positions).
    pub gold: Option<Vec<usize>>,
    pub title: String,
}

/// Teacher-forced attention pattern of one utterance. Latent variants align
/// with `align` first; the baseline plots its soft weights directly.
pub fn attention_plot(
    model: &Model,
    dataset: &Dataset,
    record_id: &str,
    align: &AlignParams,
) -> Result<AttentionPlot> {
    let record = dataset
        .records
        .iter()
        .find(|r| r.id == record_id)
        .ok_or_else(|| Error::Config(format!("utterance '{record_id}' not in dataset")))?;
    let x = dataset.features(record);
    let tape = Tape::inference();
    let enc = model.encode(&tape, &x)?;
    let steps = if model.config.variant.is_latent() {
        let (times, _) = forced_align(model, &x, &record.labels, align)?;
        replay::replay(model, &tape, &enc, &record.labels, Some(&times), 1.0)?
    } else {
        replay::replay(model, &tape, &enc, &record.labels, None, 1.0)?
    };
    let eos = model.config.eos_id();
    let rows = steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let label = if i == record.labels.len() {
                "eos".to_string()
            } else {
                record.labels[i].to_string()
            };
            let _ = eos;
            PlotRow {
                weights: s.context_weights.weights.clone(),
                support: s.context_weights.support,
                caption: format!("y{}={label}", i + 1),
            }
        })
        .collect();
    let pool = model.config.encoder.total_pool();
    let gold = record
        .gold_boundaries
        .as_ref()
        .map(|b| b.iter().map(|&t| t.div_ceil(pool)).collect());
    Ok(AttentionPlot {
        rows,
        enc_len: enc.enc_len(),
        gold,
        title: format!("{} ({:?})", record_id, model.config.variant.kind),
    })
}

const CELL: usize = 14;
const MARGIN_LEFT: usize = 64;
const MARGIN_TOP: usize = 28;

impl AttentionPlot {
    pub fn to_svg(&self) -> String {
        let width = MARGIN_LEFT + self.enc_len * CELL + 8;
        let height = MARGIN_TOP + self.rows.len() * CELL + 24;
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
        );
        let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{MARGIN_LEFT}" y="16" font-family="monospace" font-size="11">{}</text>"#,
            xml_escape(&self.title)
        );
        for (ri, row) in self.rows.iter().enumerate() {
            let y = MARGIN_TOP + ri * CELL;
            // support box
            let sx = MARGIN_LEFT + (row.support.0 - 1) * CELL;
            let sw = (row.support.1 - row.support.0 + 1) * CELL;
            let _ = writeln!(
                svg,
                r##"<rect x="{sx}" y="{y}" width="{sw}" height="{CELL}" fill="#f0f0f0" stroke="#cccccc" stroke-width="0.5"/>"##
            );
            for (ci, &w) in row.weights.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                let x = MARGIN_LEFT + ci * CELL;
                let intensity = w.clamp(0.0, 1.0);
                let level = (255.0 * (1.0 - intensity)).round() as u8;
                let _ = writeln!(
                    svg,
                    r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({level},{level},255)"/>"##
                );
            }
            let _ = writeln!(
                svg,
                r#"<text x="4" y="{}" font-family="monospace" font-size="9">{}</text>"#,
                y + CELL - 4,
                xml_escape(&row.caption)
            );
        }
        if let Some(gold) = &self.gold {
            for &b in gold {
                let x = MARGIN_LEFT + b * CELL;
                let y1 = MARGIN_TOP;
                let y2 = MARGIN_TOP + self.rows.len() * CELL;
                let _ = writeln!(
                    svg,
                    r#"<line x1="{x}" y1="{y1}" x2="{x}" y2="{y2}" stroke="red" stroke-width="1" stroke-dasharray="2,2"/>"#
                );
            }
        }
        // frame axis
        let axis_y = MARGIN_TOP + self.rows.len() * CELL + 14;
        for t in (5..=self.enc_len).step_by(5) {
            let x = MARGIN_LEFT + (t - 1) * CELL;
            let _ = writeln!(
                svg,
                r#"<text x="{x}" y="{axis_y}" font-family="monospace" font-size="9">{t}</text>"#
            );
        }
        svg.push_str("</svg>\n");
        svg
    }

    /// Plain-text PPM (P3), one pixel per cell. White background, blue
    /// weights, light grey support, red gold-boundary columns in a footer
    /// row.
    pub fn to_ppm(&self) -> String {
        let h = self.rows.len() + usize::from(self.gold.is_some());
        let mut out = format!("P3\n{} {h}\n255\n", self.enc_len);
        for row in &self.rows {
            let mut line = Vec::with_capacity(self.enc_len);
            for (ci, &w) in row.weights.iter().enumerate() {
                let t = ci + 1;
                let rgb = if w > 0.0 {
                    let level = (255.0 * (1.0 - w.clamp(0.0, 1.0))).round() as u8;
                    (level, level, 255)
                } else if t >= row.support.0 && t <= row.support.1 {
                    (240, 240, 240)
                } else {
                    (255, 255, 255)
                };
                line.push(format!("{} {} {}", rgb.0, rgb.1, rgb.2));
            }
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        if let Some(gold) = &self.gold {
            let mut line = Vec::with_capacity(self.enc_len);
            for t in 1..=self.enc_len {
                if gold.contains(&t) {
                    line.push("255 0 0".to_string());
                } else {
                    line.push("255 255 255".to_string());
                }
            }
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
