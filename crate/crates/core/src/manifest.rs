//! Dataset manifest: study records with relative paths to images and masks.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, file_err, Result};
use crate::masks::{MaskSet, StructureId};
use crate::pgm::{read_mask, write_mask, GrayImage};
use crate::prompt::{StudyInput, TextualContext, View, ViewInput};
use crate::som::{render_overlay, LegendEntry, MarkStyle};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub image: String,
    /// Positive masks only.
    pub masks: BTreeMap<StructureId, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub legend: Option<Vec<LegendEntry>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub id: String,
    pub split: Split,
    pub views: BTreeMap<View, ViewRecord>,
    #[serde(default)]
    pub context: TextualContext,
    pub findings: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub image_size: usize,
    pub studies: Vec<StudyRecord>,
}

impl Manifest {
    /// Reads `<dir>/manifest.json` and checks every referenced file exists.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(file_err(&path))?;
        let m: Manifest = serde_json::from_str(&text)?;
        m.validate(dir)?;
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(file_err(&path))
    }

    pub fn validate(&self, dir: &Path) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.studies {
            ensure!(seen.insert(s.id.as_str()), "study id {} appears twice", s.id);
            ensure!(
                s.views.contains_key(&View::CurrentFrontal),
                "study {} has no current frontal view",
                s.id
            );
            for v in s.views.values() {
                for rel in std::iter::once(&v.image).chain(v.masks.values()) {
                    ensure!(dir.join(rel).is_file(), "study {} references missing file {rel}", s.id);
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &StudyRecord> {
        self.studies.iter().filter(move |s| s.split == split)
    }
}

fn load_view(dir: &Path, v: &ViewRecord) -> Result<ViewInput> {
    let image = GrayImage::read(&dir.join(&v.image))?;
    let mut masks = MaskSet::new(image.height(), image.width());
    for (&s, rel) in &v.masks {
        masks.insert(s, read_mask(&dir.join(rel))?)?;
    }
    ViewInput::new(image, masks)
}

impl StudyRecord {
    /// Loads images and masks; findings become the target text.
    pub fn load(&self, dir: &Path) -> Result<StudyInput> {
        let view = |v: View| self.views.get(&v).map(|r| load_view(dir, r)).transpose();
        let frontal = view(View::CurrentFrontal)?
            .ok_or_else(|| crate::Error::Contract(format!("study {} has no current frontal view", self.id)))?;
        Ok(StudyInput {
            frontal,
            lateral: view(View::CurrentLateral)?,
            prior: view(View::PriorFrontal)?,
            context: self.context.clone(),
            findings: Some(self.findings.clone()),
        })
    }

    /// Legend of the current frontal overlay, if one was rendered.
    pub fn legend(&self, view: View) -> &[LegendEntry] {
        self.views.get(&view).and_then(|v| v.legend.as_deref()).unwrap_or(&[])
    }
}

/// Copies a dataset with every view image replaced by its set-of-marks overlay.
/// Masks are copied unchanged.
pub fn render_som(manifest: &Manifest, src: &Path, style: MarkStyle, out: &Path) -> Result<Manifest> {
    style.validate()?;
    let mut result = manifest.clone();
    for rec in &mut result.studies {
        for v in rec.views.values_mut() {
            let image = GrayImage::read(&src.join(&v.image))?;
            let mut masks = MaskSet::new(image.height(), image.width());
            for (&s, rel) in &v.masks {
                let m = read_mask(&src.join(rel))?;
                let dst = out.join(rel);
                if let Some(parent) = dst.parent() {
                    std::fs::create_dir_all(parent).map_err(file_err(parent))?;
                }
                write_mask(&m, &dst)?;
                masks.insert(s, m)?;
            }
            let overlay = render_overlay(&image, &masks, style)?;
            let dst = out.join(&v.image);
            if let Some(parent) = dst.parent() {
                std::fs::create_dir_all(parent).map_err(file_err(parent))?;
            }
            overlay.image.write(&dst)?;
            v.legend = Some(overlay.legend);
        }
    }
    result.save(out)?;
    Ok(result)
}
