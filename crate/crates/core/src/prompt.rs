//! Interleaved prompt assembly and realization into an embedding sequence.
//!
//! Layout: system text, current frontal image, that view's structure block,
//! then the same for the current lateral and prior frontal views, then the
//! instruction, then the textual context. The per-view structure block depends
//! on the strategy:
//!
//! | strategy | block after the view's image slot |
//! |----------|-----------------------------------|
//! | `NS`     | nothing (or only structure names when mask-aware) |
//! | `DC`     | one unlabeled run of all seg slots, then names |
//! | `CS`     | names, then one combined seg slot |
//! | `SS`     | `", <name> mask"`, mask slot, spatial slot, per structure |

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::extractor::SegTokenVars;
use crate::masks::{MaskSet, StructureId};
use crate::nn::{Graph, Var};
use crate::pgm::GrayImage;

pub const SYSTEM_TEXT: &str = "You are an expert radiology assistant tasked with interpreting a chest X-ray study. Given the current frontal image";
pub const LATERAL_INTRO: &str = "and the current lateral image";
pub const PRIOR_INTRO: &str = "and the prior frontal image";
pub const INSTRUCTION: &str = ", provide a description of the findings in the radiology study";
pub const PRIOR_CLAUSE: &str = " in comparison to the prior frontal image";
pub const MASK_SENTENCE: &str = " Where segmentation masks are provided to highlight specific image regions, use them to describe the {positive structures} in your findings.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    CurrentFrontal,
    CurrentLateral,
    PriorFrontal,
}

impl View {
    pub const ALL: [View; 3] = [View::CurrentFrontal, View::CurrentLateral, View::PriorFrontal];

    pub fn key(self) -> &'static str {
        match self {
            View::CurrentFrontal => "current_frontal",
            View::CurrentLateral => "current_lateral",
            View::PriorFrontal => "prior_frontal",
        }
    }

    /// Prefix for structure names mentioned for this view.
    fn name_prefix(self) -> &'static str {
        match self {
            View::PriorFrontal => "prior ",
            _ => "",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Mask,
    Spatial,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[default]
    #[serde(rename = "NS")]
    Ns,
    #[serde(rename = "DC")]
    Dc,
    #[serde(rename = "CS")]
    Cs,
    #[serde(rename = "SS")]
    Ss,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Ns, Strategy::Dc, Strategy::Cs, Strategy::Ss];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Ns => "NS",
            Strategy::Dc => "DC",
            Strategy::Cs => "CS",
            Strategy::Ss => "SS",
        }
    }

    pub fn uses_seg_tokens(self) -> bool {
        self != Strategy::Ns
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Contract(format!("unknown strategy {s:?}; expected NS, DC, CS or SS")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptSegment {
    Text {
        text: String,
    },
    Image {
        view: View,
    },
    Seg {
        view: View,
        structure: StructureId,
        token: TokenKind,
    },
    CombinedSeg {
        view: View,
        structures: Vec<StructureId>,
    },
}

impl PromptSegment {
    fn text(s: impl Into<String>) -> Self {
        PromptSegment::Text { text: s.into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextualContext {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indication: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub technique: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_report: Option<String>,
}

impl TextualContext {
    /// Present sections as `"HEADER: body"` lines.
    pub fn sections(&self) -> Vec<String> {
        [
            ("INDICATION", &self.indication),
            ("TECHNIQUE", &self.technique),
            ("COMPARISON", &self.comparison),
            ("PRIOR REPORT", &self.prior_report),
        ]
        .into_iter()
        .filter_map(|(h, body)| {
            body.as_deref()
                .map(str::trim)
                .filter(|b| !b.is_empty())
                .map(|b| format!("{h}: {b}"))
        })
        .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewInput {
    pub image: GrayImage,
    pub masks: MaskSet,
}

impl ViewInput {
    pub fn new(image: GrayImage, masks: MaskSet) -> Result<Self> {
        ensure!(
            image.extents() == masks.extents(),
            "mask set {:?} does not match image {:?}",
            masks.extents(),
            image.extents()
        );
        Ok(Self { image, masks })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyInput {
    pub frontal: ViewInput,
    pub lateral: Option<ViewInput>,
    pub prior: Option<ViewInput>,
    pub context: TextualContext,
    pub findings: Option<String>,
}

impl StudyInput {
    pub fn frontal_only(frontal: ViewInput) -> Self {
        Self {
            frontal,
            lateral: None,
            prior: None,
            context: TextualContext::default(),
            findings: None,
        }
    }

    pub fn view(&self, view: View) -> Option<&ViewInput> {
        match view {
            View::CurrentFrontal => Some(&self.frontal),
            View::CurrentLateral => self.lateral.as_ref(),
            View::PriorFrontal => self.prior.as_ref(),
        }
    }

    /// Views that take part in a prompt, in prompt order.
    pub fn active_views(&self, single_view: bool) -> Vec<View> {
        View::ALL
            .into_iter()
            .filter(|&v| self.view(v).is_some() && (!single_view || v == View::CurrentFrontal))
            .collect()
    }

    /// Drops every mask, keeping images and text.
    pub fn without_masks(&self) -> Self {
        let strip = |v: &ViewInput| ViewInput {
            image: v.image.clone(),
            masks: MaskSet::new(v.image.height(), v.image.width()),
        };
        Self {
            frontal: strip(&self.frontal),
            lateral: self.lateral.as_ref().map(strip),
            prior: self.prior.as_ref().map(strip),
            context: self.context.clone(),
            findings: self.findings.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    pub strategy: Strategy,
    pub single_view: bool,
    /// Name positive structures in text and add the mask sentence to the
    /// instruction. Orthogonal to whether seg tokens are inserted.
    pub mask_aware: bool,
}

impl PromptOptions {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            single_view: false,
            mask_aware: true,
        }
    }

    pub fn single_view(mut self, on: bool) -> Self {
        self.single_view = on;
        self
    }

    pub fn mask_aware(mut self, on: bool) -> Self {
        self.mask_aware = on;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub segments: Vec<PromptSegment>,
    pub strategy: Strategy,
    /// Seg tokens were requested but the study has no positive masks.
    pub degraded: bool,
    /// Index of the first textual-context segment (equals `segments.len()`
    /// when there is no context).
    pub context_start: usize,
}

impl Prompt {
    pub fn image_slots(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| matches!(s, PromptSegment::Image { .. }))
            .count()
    }

    /// Number of seg-token embeddings, counting a combined slot as its pairs.
    pub fn seg_tokens(&self) -> usize {
        self.segments
            .iter()
            .map(|s| match s {
                PromptSegment::Seg { .. } => 1,
                PromptSegment::CombinedSeg { structures, .. } => 2 * structures.len(),
                _ => 0,
            })
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.segments)?)
    }

    /// One line per segment with placeholders for slots.
    pub fn render(&self) -> String {
        self.segments
            .iter()
            .map(|s| match s {
                PromptSegment::Text { text } => text.clone(),
                PromptSegment::Image { view } => format!("<image:{view}>"),
                PromptSegment::Seg { view, structure, token } => {
                    let t = match token {
                        TokenKind::Mask => "mask",
                        TokenKind::Spatial => "spatial",
                    };
                    format!("<seg:{view}:{}:{t}>", structure.key())
                }
                PromptSegment::CombinedSeg { view, structures } => {
                    let keys: Vec<_> = structures.iter().map(|s| s.key()).collect();
                    format!("<combined_seg:{view}:{}>", keys.join(","))
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// `"a"`, `"a and b"`, `"a, b and c"`.
fn join_names(names: &[String]) -> String {
    match names {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn instruction(positives: &[StructureId], has_prior: bool, mask_aware: bool) -> String {
    let mut s = INSTRUCTION.to_string();
    if has_prior {
        s.push_str(PRIOR_CLAUSE);
    }
    s.push('.');
    if mask_aware && !positives.is_empty() {
        let names: Vec<String> = positives.iter().map(|p| p.name().to_string()).collect();
        s.push_str(&MASK_SENTENCE.replace("{positive structures}", &join_names(&names)));
    }
    s
}

pub fn build_prompt(study: &StudyInput, opts: PromptOptions) -> Result<Prompt> {
    let views = study.active_views(opts.single_view);
    for &v in &views {
        let vi = study.view(v).expect("active view exists");
        ensure!(
            vi.image.extents() == vi.masks.extents(),
            "{v} masks {:?} do not match its image {:?}",
            vi.masks.extents(),
            vi.image.extents()
        );
    }
    let positives_of = |v: View| study.view(v).map(|vi| vi.masks.positive_ids()).unwrap_or_default();
    let total_positive: usize = views.iter().map(|&v| positives_of(v).len()).sum();
    let degraded = opts.strategy.uses_seg_tokens() && total_positive == 0;
    let strategy = if degraded { Strategy::Ns } else { opts.strategy };

    let mut segments = vec![PromptSegment::text(SYSTEM_TEXT)];
    for &view in &views {
        match view {
            View::CurrentFrontal => {}
            View::CurrentLateral => segments.push(PromptSegment::text(LATERAL_INTRO)),
            View::PriorFrontal => segments.push(PromptSegment::text(PRIOR_INTRO)),
        }
        segments.push(PromptSegment::Image { view });
        let positives = positives_of(view);
        let name_span = |s: StructureId| PromptSegment::text(format!(", {}{} mask", view.name_prefix(), s.name()));
        let names = || positives.iter().map(|&s| name_span(s)).collect::<Vec<_>>();
        let pair = |structure: StructureId| {
            [TokenKind::Mask, TokenKind::Spatial].map(|token| PromptSegment::Seg { view, structure, token })
        };
        match strategy {
            Strategy::Ns => {
                if opts.mask_aware {
                    segments.extend(names());
                }
            }
            Strategy::Dc => {
                segments.extend(positives.iter().flat_map(|&s| pair(s)));
                if opts.mask_aware {
                    segments.extend(names());
                }
            }
            Strategy::Cs => {
                if opts.mask_aware {
                    segments.extend(names());
                }
                if !positives.is_empty() {
                    segments.push(PromptSegment::CombinedSeg {
                        view,
                        structures: positives.clone(),
                    });
                }
            }
            Strategy::Ss => {
                for &s in &positives {
                    if opts.mask_aware {
                        segments.push(name_span(s));
                    }
                    segments.extend(pair(s));
                }
            }
        }
    }

    let mut all_positive: Vec<StructureId> = views.iter().flat_map(|&v| positives_of(v)).collect();
    all_positive.sort();
    all_positive.dedup();
    let has_prior = views.contains(&View::PriorFrontal);
    segments.push(PromptSegment::text(instruction(
        &all_positive,
        has_prior,
        opts.mask_aware,
    )));

    let context_start = segments.len();
    if !opts.single_view {
        segments.extend(study.context.sections().into_iter().map(PromptSegment::text));
    }
    if degraded {
        log::warn!(
            "{} requested but the study has no positive masks; using the NS layout",
            opts.strategy
        );
    }
    Ok(Prompt {
        segments,
        strategy,
        degraded,
        context_start,
    })
}

pub fn count_tokens(p: &Prompt, grid_cells: usize, text_len: impl Fn(&str) -> usize) -> usize {
    p.segments
        .iter()
        .map(|s| match s {
            PromptSegment::Text { text } => text_len(text),
            PromptSegment::Image { .. } => grid_cells,
            PromptSegment::Seg { .. } => 1,
            PromptSegment::CombinedSeg { structures, .. } => 2 * structures.len(),
        })
        .sum()
}

/// Resolved embeddings for one view, already at LM width.
#[derive(Clone, Debug)]
pub struct ViewEmbeddings {
    /// `[cells, lm_dim]`, one row per patch.
    pub image: Var,
    pub tokens: Vec<SegTokenVars>,
}

impl ViewEmbeddings {
    fn token(&self, view: View, structure: StructureId, kind: TokenKind) -> Result<Var> {
        self.tokens
            .iter()
            .find(|t| t.structure == structure)
            .map(|t| match kind {
                TokenKind::Mask => t.mask,
                TokenKind::Spatial => t.spatial,
            })
            .ok_or_else(|| Error::Contract(format!("unresolvable seg slot {view}/{}/{kind:?}", structure.key())))
    }
}

/// Concatenates the prompt's embeddings in segment order into `[len, lm_dim]`.
pub fn realize_embeddings(
    g: &mut Graph<'_>,
    prompt: &Prompt,
    views: &BTreeMap<View, ViewEmbeddings>,
    mut embed_text: impl FnMut(&mut Graph<'_>, &str) -> Result<Option<Var>>,
) -> Result<Var> {
    let lookup = |view: View| {
        views
            .get(&view)
            .ok_or_else(|| Error::Contract(format!("unresolvable slot: no embeddings for view {view}")))
    };
    let mut parts = Vec::with_capacity(prompt.segments.len());
    for seg in &prompt.segments {
        match seg {
            PromptSegment::Text { text } => parts.extend(embed_text(g, text)?),
            PromptSegment::Image { view } => parts.push(lookup(*view)?.image),
            PromptSegment::Seg { view, structure, token } => {
                parts.push(lookup(*view)?.token(*view, *structure, *token)?)
            }
            PromptSegment::CombinedSeg { view, structures } => {
                let ve = lookup(*view)?;
                for &s in structures {
                    parts.push(ve.token(*view, s, TokenKind::Mask)?);
                    parts.push(ve.token(*view, s, TokenKind::Spatial)?);
                }
            }
        }
    }
    g.concat_rows(&parts)
}

#[cfg(test)]
mod tests;
