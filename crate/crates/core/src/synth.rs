//! Procedural chest-film stand-ins with exact structure masks and templated
//! findings text.
//!
//! Each study samples a [`Scene`] (which structures exist and their geometry
//! in unit coordinates), renders it once per view, and derives the findings
//! text from the scene alone.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, file_err, Result};
use crate::manifest::{Manifest, Split, StudyRecord, ViewRecord};
use crate::masks::{BinaryMask, MaskSet, StructureId};
use crate::nn::seeded_rng;
use crate::pgm::{write_mask, GrayImage};
use crate::prompt::{TextualContext, View};

pub const NO_FINDINGS: &str = "no acute cardiopulmonary abnormality .";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub image_size: usize,
    pub n_studies: usize,
    /// Per-structure presence probability; absent keys mean 0.
    pub structure_probs: BTreeMap<StructureId, f64>,
    pub opacity_prob: f64,
    pub effusion_prob: f64,
    pub prior_prob: f64,
    pub lateral_prob: f64,
    /// Heart area over image area above which the heart counts as enlarged.
    pub cardiomegaly_area: f64,
    pub device_sentences: bool,
    pub cardiomegaly_sentence: bool,
    /// Structures whose masks are emitted but which are not painted.
    pub hidden: Vec<StructureId>,
    /// Chance that an emitted mask is dilated, eroded or dropped.
    pub mask_noise: f64,
    pub context: bool,
    /// Half-width of the uniform pixel noise.
    pub noise: u8,
}

impl Default for SynthSpec {
    fn default() -> Self {
        use StructureId::*;
        let structure_probs = [
            (LeftLung, 0.97),
            (RightLung, 0.97),
            (Heart, 0.95),
            (Cvc, 0.3),
            (Ett, 0.3),
            (Ngt, 0.25),
            (Sgc, 0.1),
            (ChestTube, 0.15),
            (Pneumothorax, 0.25),
        ]
        .into_iter()
        .collect();
        Self {
            seed: 0,
            image_size: 64,
            n_studies: 64,
            structure_probs,
            opacity_prob: 0.2,
            effusion_prob: 0.2,
            prior_prob: 0.4,
            lateral_prob: 0.4,
            cardiomegaly_area: 0.09,
            device_sentences: true,
            cardiomegaly_sentence: true,
            hidden: Vec::new(),
            mask_noise: 0.0,
            context: true,
            noise: 8,
        }
    }
}

impl SynthSpec {
    /// Every probability set to zero.
    pub fn empty(seed: u64, image_size: usize, n_studies: usize) -> Self {
        Self {
            seed,
            image_size,
            n_studies,
            structure_probs: BTreeMap::new(),
            opacity_prob: 0.0,
            effusion_prob: 0.0,
            prior_prob: 0.0,
            lateral_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn prob(&self, s: StructureId) -> f64 {
        self.structure_probs.get(&s).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.image_size >= 16,
            "image_size {} is too small to draw on",
            self.image_size
        );
        ensure!(self.n_studies > 0, "n_studies must be positive");
        let named = [
            ("opacity_prob", self.opacity_prob),
            ("effusion_prob", self.effusion_prob),
            ("prior_prob", self.prior_prob),
            ("lateral_prob", self.lateral_prob),
            ("mask_noise", self.mask_noise),
        ];
        for (name, p) in named
            .into_iter()
            .chain(self.structure_probs.iter().map(|(s, &p)| (s.key(), p)))
        {
            ensure!((0.0..=1.0).contains(&p), "{name} = {p} is not a probability");
        }
        ensure!(self.cardiomegaly_area > 0.0, "cardiomegaly_area must be positive");
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    fn word(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }

    fn lung(self) -> StructureId {
        match self {
            Side::Left => StructureId::LeftLung,
            Side::Right => StructureId::RightLung,
        }
    }
}

/// Axis-aligned ellipse in unit coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = ((y - self.cy) / self.ry, (x - self.cx) / self.rx);
        dy * dy + dx * dx <= 1.0
    }

    fn area(&self) -> f64 {
        std::f64::consts::PI * self.ry * self.rx
    }

    /// Medial-inferior shift that leaves a lateral apical crescent uncovered.
    fn crescent_cover(&self, side: Side) -> Ellipse {
        let medial = match side {
            Side::Right => 1.0,
            Side::Left => -1.0,
        };
        Ellipse {
            cy: self.cy + 0.3 * self.ry,
            cx: self.cx + medial * 0.3 * self.rx,
            ..*self
        }
    }
}

/// Everything a study contains, independent of view and resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub lungs: BTreeMap<StructureId, Ellipse>,
    pub heart: Option<Ellipse>,
    pub tubes: BTreeMap<StructureId, Vec<(f64, f64)>>,
    pub pneumothorax: Option<Side>,
    pub opacity: Option<(Side, Ellipse)>,
    pub effusion: Option<Side>,
}

fn jitter<R: Rng>(rng: &mut R, v: f64, amount: f64) -> f64 {
    v + rng.random_range(-amount..=amount)
}

fn tube_path<R: Rng>(s: StructureId, rng: &mut R) -> Vec<(f64, f64)> {
    let pts: &[(f64, f64)] = match s {
        StructureId::Ett => &[(0.0, 0.5), (0.28, 0.5)],
        StructureId::Ngt => &[(0.0, 0.52), (0.55, 0.5), (0.82, 0.66)],
        StructureId::Cvc => &[(0.08, 0.18), (0.24, 0.38), (0.36, 0.47)],
        StructureId::Sgc => &[(0.08, 0.22), (0.3, 0.44), (0.46, 0.56), (0.4, 0.64)],
        StructureId::ChestTube => &[(0.85, 0.92), (0.3, 0.78)],
        _ => unreachable!("not a tube"),
    };
    let mirror = s == StructureId::ChestTube && rng.random_bool(0.5);
    pts.iter()
        .map(|&(y, x)| {
            let x = if mirror { 1.0 - x } else { x };
            (
                jitter(rng, y, 0.03).clamp(0.0, 1.0),
                jitter(rng, x, 0.03).clamp(0.0, 1.0),
            )
        })
        .collect()
}

impl Scene {
    pub fn sample<R: Rng>(spec: &SynthSpec, rng: &mut R) -> Scene {
        let hit = |p: f64, rng: &mut R| p > 0.0 && rng.random_bool(p.min(1.0));
        let mut lungs = BTreeMap::new();
        for (s, cx) in [(StructureId::RightLung, 0.3), (StructureId::LeftLung, 0.7)] {
            if hit(spec.prob(s), rng) {
                lungs.insert(
                    s,
                    Ellipse {
                        cy: jitter(rng, 0.45, 0.02),
                        cx: jitter(rng, cx, 0.02),
                        ry: jitter(rng, 0.3, 0.02),
                        rx: jitter(rng, 0.15, 0.015),
                    },
                );
            }
        }
        let heart = hit(spec.prob(StructureId::Heart), rng).then(|| Ellipse {
            cy: jitter(rng, 0.62, 0.02),
            cx: jitter(rng, 0.54, 0.02),
            ry: rng.random_range(0.12..=0.17),
            rx: rng.random_range(0.14..=0.24),
        });
        let mut tubes = BTreeMap::new();
        for s in StructureId::ALL.into_iter().filter(|s| s.is_tube()) {
            if hit(spec.prob(s), rng) {
                tubes.insert(s, tube_path(s, rng));
            }
        }
        let sides: Vec<Side> = [Side::Left, Side::Right]
            .into_iter()
            .filter(|s| lungs.contains_key(&s.lung()))
            .collect();
        let pick_side = |rng: &mut R| sides[rng.random_range(0..sides.len())];
        let pneumothorax =
            (!sides.is_empty() && hit(spec.prob(StructureId::Pneumothorax), rng)).then(|| pick_side(rng));
        let opacity = (!sides.is_empty() && hit(spec.opacity_prob, rng)).then(|| {
            let side = pick_side(rng);
            let lung = lungs[&side.lung()];
            let blob = Ellipse {
                cy: jitter(rng, lung.cy, 0.4 * lung.ry),
                cx: jitter(rng, lung.cx, 0.3 * lung.rx),
                ry: rng.random_range(0.05..=0.09),
                rx: rng.random_range(0.04..=0.07),
            };
            (side, blob)
        });
        let effusion = (!sides.is_empty() && hit(spec.effusion_prob, rng)).then(|| pick_side(rng));
        Scene {
            lungs,
            heart,
            tubes,
            pneumothorax,
            opacity,
            effusion,
        }
    }

    pub fn cardiomegaly(&self, spec: &SynthSpec) -> bool {
        self.heart.is_some_and(|h| h.area() > spec.cardiomegaly_area)
    }

    /// Structures that get a mask.
    pub fn structures(&self) -> Vec<StructureId> {
        let mut out: Vec<StructureId> = self.lungs.keys().copied().collect();
        out.extend(self.heart.map(|_| StructureId::Heart));
        out.extend(self.tubes.keys().copied());
        out.extend(self.pneumothorax.map(|_| StructureId::Pneumothorax));
        out.sort();
        out
    }

    /// Fixed sentence order: devices, heart, opacity, effusion, pneumothorax.
    pub fn findings(&self, spec: &SynthSpec) -> String {
        let mut out = Vec::new();
        if spec.device_sentences {
            out.extend(self.tubes.keys().map(|s| format!("{} in place .", s.name())));
        }
        if spec.cardiomegaly_sentence && self.cardiomegaly(spec) {
            out.push("the heart is enlarged .".to_string());
        }
        if let Some((side, _)) = self.opacity {
            out.push(format!("focal opacity in the {} lung .", side.word()));
        }
        if let Some(side) = self.effusion {
            out.push(format!("small {} pleural effusion .", side.word()));
        }
        if let Some(side) = self.pneumothorax {
            out.push(format!("there is a {} pneumothorax .", side.word()));
        }
        if out.is_empty() {
            NO_FINDINGS.to_string()
        } else {
            out.join(" ")
        }
    }

    /// Paints the scene and returns the image with one mask per structure.
    pub fn render<R: Rng>(&self, spec: &SynthSpec, view: View, rng: &mut R) -> Result<(GrayImage, MaskSet)> {
        let n = spec.image_size;
        let lateral = view == View::CurrentLateral;
        // lateral films squash the frontal layout toward the midline
        let tx = |x: f64| if lateral { 0.5 + (x - 0.5) * 0.35 } else { x };
        let ell = |e: &Ellipse| Ellipse {
            cx: tx(e.cx),
            rx: if lateral { e.rx * 1.4 } else { e.rx },
            ..*e
        };
        let unit = |i: usize| (i as f64 + 0.5) / n as f64;
        let raster = |f: &dyn Fn(f64, f64) -> bool| BinaryMask::from_fn(n, n, |r, c| f(unit(r), unit(c)));

        let mut level = vec![135.0f64; n * n];
        let mut masks = MaskSet::new(n, n);
        let painted = |s: StructureId| !spec.hidden.contains(&s);
        let paint = |level: &mut [f64], m: &BinaryMask, f: &dyn Fn(f64) -> f64| {
            for (r, c) in m.points() {
                level[r * n + c] = f(level[r * n + c]);
            }
        };

        for (&s, e) in &self.lungs {
            let m = raster(&|y, x| ell(e).contains(y, x));
            if painted(s) {
                paint(&mut level, &m, &|_| 70.0);
            }
            masks.insert(s, m)?;
        }
        if let Some(side) = self.effusion {
            let e = ell(&self.lungs[&side.lung()]);
            let floor = e.cy + 0.55 * e.ry;
            let m = raster(&|y, x| e.contains(y, x) && y >= floor);
            paint(&mut level, &m, &|v| v + 70.0);
        }
        if let Some((side, blob)) = self.opacity {
            let (e, b) = (ell(&self.lungs[&side.lung()]), ell(&blob));
            let m = raster(&|y, x| e.contains(y, x) && b.contains(y, x));
            paint(&mut level, &m, &|v| v + 55.0);
        }
        if let Some(h) = self.heart {
            let m = raster(&|y, x| ell(&h).contains(y, x));
            if painted(StructureId::Heart) {
                paint(&mut level, &m, &|_| 195.0);
            }
            masks.insert(StructureId::Heart, m)?;
        }
        if let Some(side) = self.pneumothorax {
            let e = ell(&self.lungs[&side.lung()]);
            let cover = e.crescent_cover(side);
            let mut m = raster(&|y, x| e.contains(y, x) && !cover.contains(y, x));
            if !m.is_positive() {
                m = raster(&|y, x| e.contains(y, x) && y <= e.cy - 0.6 * e.ry);
            }
            if painted(StructureId::Pneumothorax) {
                paint(&mut level, &m, &|_| 25.0);
            }
            masks.insert(StructureId::Pneumothorax, m)?;
        }
        for (&s, path) in &self.tubes {
            let pix = |(y, x): (f64, f64)| {
                let clampi = |v: f64| ((v * n as f64).floor() as i64).clamp(0, n as i64 - 1);
                (clampi(y), clampi(tx(x)))
            };
            let mut m = BinaryMask::zeros(n, n);
            for w in path.windows(2) {
                for (r, c) in bresenham(pix(w[0]), pix(w[1])) {
                    m.set(r as usize, c as usize, true);
                }
            }
            if painted(s) {
                paint(&mut level, &m, &|_| 245.0);
            }
            masks.insert(s, m)?;
        }

        let amp = i64::from(spec.noise);
        let pixels = level
            .iter()
            .map(|&v| {
                let noise = if amp > 0 { rng.random_range(-amp..=amp) } else { 0 };
                (v.round() as i64 + noise).clamp(1, 254) as u8
            })
            .collect();
        let image = GrayImage::new(n, n, pixels)?;
        if spec.mask_noise > 0.0 {
            masks = perturb(&masks, spec.mask_noise, rng)?;
        }
        Ok((image, masks))
    }
}

/// Integer line from `a` to `b`, endpoints included.
pub fn bresenham(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut y, mut x) = a;
    let (dy, dx) = ((b.0 - y).abs(), -(b.1 - x).abs());
    let (sy, sx) = (if y < b.0 { 1 } else { -1 }, if x < b.1 { 1 } else { -1 });
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dy - dx + 1) as usize);
    loop {
        out.push((y, x));
        if (y, x) == b {
            return out;
        }
        let e2 = 2 * err;
        if e2 >= dx {
            err += dx;
            y += sy;
        }
        if e2 <= dy {
            err += dy;
            x += sx;
        }
    }
}

fn morph(m: &BinaryMask, grow: bool) -> BinaryMask {
    let near = |r: usize, c: usize| {
        let (r, c) = (r as isize, c as isize);
        [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)].map(|(dr, dc)| m.get_signed(r + dr, c + dc))
    };
    BinaryMask::from_fn(m.height(), m.width(), |r, c| {
        let n = near(r, c);
        if grow {
            n.iter().any(|&b| b)
        } else {
            n.iter().all(|&b| b)
        }
    })
}

/// Dilates, erodes or drops each mask with probability `p`.
fn perturb<R: Rng>(masks: &MaskSet, p: f64, rng: &mut R) -> Result<MaskSet> {
    let (h, w) = masks.extents();
    let mut out = MaskSet::new(h, w);
    for (s, m) in masks.iter() {
        if !rng.random_bool(p) {
            out.insert(s, m.clone())?;
            continue;
        }
        match rng.random_range(0..3) {
            0 => out.insert(s, morph(m, true))?,
            1 => out.insert(s, morph(m, false))?,
            _ => {}
        }
    }
    Ok(out)
}

const INDICATIONS: [&str; 5] = [
    "shortness of breath",
    "fever and cough",
    "chest pain",
    "evaluate device position",
    "follow up",
];

/// Derived per-study seed so studies can be drawn in any order.
fn study_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One study with its rendered views, before anything touches disk.
#[derive(Clone, Debug)]
pub struct SynthStudy {
    pub id: String,
    pub views: BTreeMap<View, (GrayImage, MaskSet)>,
    pub context: TextualContext,
    pub findings: String,
}

pub fn synth_study(spec: &SynthSpec, index: usize) -> Result<SynthStudy> {
    let mut rng = seeded_rng(study_seed(spec.seed, index));
    let scene = Scene::sample(spec, &mut rng);
    let findings = scene.findings(spec);
    let has_lateral = spec.lateral_prob > 0.0 && rng.random_bool(spec.lateral_prob);
    let prior = (spec.prior_prob > 0.0 && rng.random_bool(spec.prior_prob)).then(|| {
        let mut p = Scene::sample(spec, &mut rng);
        p.lungs.clone_from(&scene.lungs);
        p.heart = scene.heart;
        let has = |side: &Side| scene.lungs.contains_key(&side.lung());
        p.pneumothorax = p.pneumothorax.filter(has);
        p.opacity = p.opacity.filter(|(side, _)| has(side));
        p.effusion = p.effusion.filter(has);
        p
    });

    let mut views = BTreeMap::new();
    views.insert(
        View::CurrentFrontal,
        scene.render(spec, View::CurrentFrontal, &mut rng)?,
    );
    if has_lateral {
        views.insert(
            View::CurrentLateral,
            scene.render(spec, View::CurrentLateral, &mut rng)?,
        );
    }
    if let Some(p) = &prior {
        views.insert(View::PriorFrontal, p.render(spec, View::PriorFrontal, &mut rng)?);
    }

    let context = if spec.context {
        let indication = INDICATIONS[rng.random_range(0..INDICATIONS.len())];
        let technique = if has_lateral {
            "frontal and lateral views of the chest ."
        } else {
            "frontal view of the chest ."
        };
        TextualContext {
            indication: Some(format!("{indication} .")),
            technique: Some(technique.to_string()),
            comparison: Some(
                if prior.is_some() {
                    "prior frontal radiograph ."
                } else {
                    "none ."
                }
                .to_string(),
            ),
            prior_report: prior.as_ref().map(|p| p.findings(spec)),
        }
    } else {
        TextualContext::default()
    };
    Ok(SynthStudy {
        id: format!("s{index:05}"),
        views,
        context,
        findings,
    })
}

/// 70/15/15 split over a seeded shuffle of study indices.
pub fn assign_splits(seed: u64, n: usize) -> Vec<Split> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed ^ 0x5EED_5B17));
    let n_train = n * 70 / 100;
    let n_val = n * 15 / 100;
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

/// Draws the corpus and writes images, positive masks and `manifest.json`.
pub fn generate_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(file_err(out_dir))?;
    let studies: Vec<SynthStudy> = (0..spec.n_studies)
        .into_par_iter()
        .map(|i| synth_study(spec, i))
        .collect::<Result<_>>()?;
    let splits = assign_splits(spec.seed, spec.n_studies);

    let mut records = Vec::with_capacity(studies.len());
    for (study, split) in studies.into_iter().zip(splits) {
        let rel_dir = format!("studies/{}", study.id);
        let dir = out_dir.join(&rel_dir);
        std::fs::create_dir_all(&dir).map_err(file_err(&dir))?;
        let mut views = BTreeMap::new();
        for (view, (image, masks)) in &study.views {
            let image_rel = format!("{rel_dir}/{}.pgm", view.key());
            image.write(&out_dir.join(&image_rel))?;
            let mut mask_paths = BTreeMap::new();
            for (s, m) in masks.positives() {
                let rel = format!("{rel_dir}/{}.{}.pgm", view.key(), s.key());
                write_mask(m, &out_dir.join(&rel))?;
                mask_paths.insert(s, rel);
            }
            views.insert(
                *view,
                ViewRecord {
                    image: image_rel,
                    masks: mask_paths,
                    legend: None,
                },
            );
        }
        records.push(StudyRecord {
            id: study.id,
            split,
            views,
            context: study.context,
            findings: study.findings,
        });
    }
    let manifest = Manifest {
        image_size: spec.image_size,
        studies: records,
    };
    manifest.save(out_dir)?;
    Ok(manifest)
}
