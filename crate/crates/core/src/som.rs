//! Set-of-marks overlays: grayscale contours and numeric marks stamped onto
//! the image, plus the mark listing appended to a prompt.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::masks::{BinaryMask, MaskSet, StructureId};
use crate::pgm::GrayImage;
use crate::prompt::{Prompt, PromptSegment};

pub const GLYPH_HEIGHT: usize = 7;
pub const GLYPH_WIDTH: usize = 5;

#[rustfmt::skip]
const DIGITS: [[u8; GLYPH_HEIGHT]; 10] = [
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "value")]
pub enum IntensityPolicy {
    Alternating,
    #[default]
    ContrastMax,
    Uniform(u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkStyle {
    pub contours: bool,
    pub alphanumerics: bool,
    pub intensity: IntensityPolicy,
}

impl Default for MarkStyle {
    fn default() -> Self {
        Self {
            contours: true,
            alphanumerics: true,
            intensity: IntensityPolicy::ContrastMax,
        }
    }
}

impl MarkStyle {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.contours || self.alphanumerics,
            "a set-of-marks style needs contours, alphanumerics or both"
        );
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub label: String,
    pub structure: StructureId,
    pub intensity: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Overlay {
    pub image: GrayImage,
    pub legend: Vec<LegendEntry>,
    /// Every pixel that was drawn on.
    pub footprint: BinaryMask,
}

/// One intensity per mask, in the order given.
pub fn assign_intensities(image: &GrayImage, masks: &[&BinaryMask], policy: IntensityPolicy) -> Vec<u8> {
    masks
        .iter()
        .enumerate()
        .map(|(i, m)| match policy {
            IntensityPolicy::Alternating => {
                if i % 2 == 0 {
                    255
                } else {
                    0
                }
            }
            IntensityPolicy::Uniform(v) => v,
            IntensityPolicy::ContrastMax => {
                let contour = m.contour();
                let (sum, n) = contour
                    .points()
                    .fold((0.0, 0usize), |(s, n), (r, c)| (s + f64::from(image.get(r, c)), n + 1));
                let mean = if n == 0 { 0.0 } else { sum / n as f64 };
                // ties go to white
                if (0.0 - mean).abs() > (255.0 - mean).abs() {
                    0
                } else {
                    255
                }
            }
        })
        .collect()
}

/// Pixel offsets of `label` rendered in the digit font, 1 px between glyphs.
fn glyph_pixels(label: &str) -> (usize, Vec<(usize, usize)>) {
    let digits: Vec<usize> = label.bytes().map(|b| usize::from(b - b'0')).collect();
    let width = digits.len() * (GLYPH_WIDTH + 1) - 1;
    let mut on = Vec::new();
    for (k, &d) in digits.iter().enumerate() {
        for (r, bits) in DIGITS[d].iter().enumerate() {
            for c in 0..GLYPH_WIDTH {
                if bits >> (GLYPH_WIDTH - 1 - c) & 1 == 1 {
                    on.push((r, k * (GLYPH_WIDTH + 1) + c));
                }
            }
        }
    }
    (width, on)
}

/// Top-left corner of a `h × w` box centred on `(r, c)`, clamped inside the image.
fn clamp_box(center: (f64, f64), h: usize, w: usize, extents: (usize, usize)) -> (usize, usize) {
    let place = |center: f64, size: usize, limit: usize| {
        let start = center.round() as i64 - (size / 2) as i64;
        start.clamp(0, limit.saturating_sub(size) as i64) as usize
    };
    (place(center.0, h, extents.0), place(center.1, w, extents.1))
}

pub fn render_overlay(image: &GrayImage, masks: &MaskSet, style: MarkStyle) -> Result<Overlay> {
    style.validate()?;
    ensure!(
        image.extents() == masks.extents(),
        "mask set {:?} does not match image {:?}",
        masks.extents(),
        image.extents()
    );
    let (h, w) = image.extents();
    let positives: Vec<(StructureId, &BinaryMask)> = masks.positives().collect();
    let intensities = assign_intensities(
        image,
        &positives.iter().map(|(_, m)| *m).collect::<Vec<_>>(),
        style.intensity,
    );
    let mut out = image.clone();
    let mut footprint = BinaryMask::zeros(h, w);
    let mut legend = Vec::with_capacity(positives.len());
    for (i, ((structure, mask), &value)) in positives.iter().zip(&intensities).enumerate() {
        let label = (i + 1).to_string();
        if style.contours {
            for (r, c) in mask.contour().points() {
                out.set(r, c, value);
                footprint.set(r, c, true);
            }
        }
        if style.alphanumerics {
            let largest = &mask.connected_components()[0];
            let (gw, on) = glyph_pixels(&label);
            let (r0, c0) = clamp_box(largest.centroid()?, GLYPH_HEIGHT, gw, (h, w));
            for (dr, dc) in on {
                let (r, c) = (r0 + dr, c0 + dc);
                if r < h && c < w {
                    out.set(r, c, value);
                    footprint.set(r, c, true);
                }
            }
        }
        legend.push(LegendEntry {
            label,
            structure: *structure,
            intensity: value,
        });
    }
    Ok(Overlay {
        image: out,
        legend,
        footprint,
    })
}

/// `"mark k: <name>"`, one line per entry.
pub fn mark_listing(legend: &[LegendEntry]) -> String {
    legend
        .iter()
        .map(|e| format!("mark {}: {}", e.label, e.structure.name()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Inserts the mark listing after the instruction, before any textual context.
pub fn augment_som_prompt(base: &Prompt, legend: &[LegendEntry]) -> Prompt {
    let mut p = base.clone();
    if legend.is_empty() {
        return p;
    }
    p.segments.insert(
        p.context_start,
        PromptSegment::Text {
            text: mark_listing(legend),
        },
    );
    p.context_start += 1;
    p
}
