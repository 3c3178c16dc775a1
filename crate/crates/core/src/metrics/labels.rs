//! Finding labels, a keyword labeler for generated text, and macro/micro F1.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Finding {
    LungOpacity,
    Cardiomegaly,
    Pneumothorax,
    SupportDevices,
    PleuralEffusion,
}

impl Finding {
    /// The mask-relevant findings, in reporting order.
    pub const MASK_RELEVANT: [Finding; 5] = [
        Finding::LungOpacity,
        Finding::Cardiomegaly,
        Finding::Pneumothorax,
        Finding::SupportDevices,
        Finding::PleuralEffusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Finding::LungOpacity => "Lung Opacity",
            Finding::Cardiomegaly => "Cardiomegaly",
            Finding::Pneumothorax => "Pneumothorax",
            Finding::SupportDevices => "Support Devices",
            Finding::PleuralEffusion => "Pleural Effusion",
        }
    }

    fn keywords(self) -> &'static [&'static str] {
        match self {
            Finding::LungOpacity => &["opacity", "opacities", "consolidation"],
            Finding::Cardiomegaly => &["cardiomegaly", "enlarged"],
            Finding::Pneumothorax => &["pneumothorax"],
            Finding::SupportDevices => &["tube", "tubes", "catheter", "line", "lines"],
            Finding::PleuralEffusion => &["effusion", "effusions"],
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    pub findings: Vec<Finding>,
    pub values: Vec<bool>,
}

impl LabelVector {
    pub fn new(findings: Vec<Finding>, values: Vec<bool>) -> Result<Self> {
        ensure!(
            findings.len() == values.len(),
            "{} findings but {} label values",
            findings.len(),
            values.len()
        );
        Ok(Self { findings, values })
    }

    /// Over the five mask-relevant findings.
    pub fn mask_relevant(values: [bool; 5]) -> Self {
        Self {
            findings: Finding::MASK_RELEVANT.to_vec(),
            values: values.to_vec(),
        }
    }

    pub fn get(&self, f: Finding) -> Option<bool> {
        self.findings.iter().position(|&x| x == f).map(|i| self.values[i])
    }
}

const NEGATIONS: [&str; 3] = ["no", "without", "not"];

/// Labels free text sentence by sentence: a finding is positive when one of
/// its keywords occurs in a sentence with no earlier negation word.
pub fn label_text(text: &str, findings: &[Finding]) -> LabelVector {
    let lower = text.to_lowercase();
    let sentences: Vec<Vec<&str>> = lower
        .split(['.', ';', '\n'])
        .map(|s| {
            s.split(|c: char| !c.is_ascii_alphanumeric())
                .filter(|w| !w.is_empty())
                .collect()
        })
        .collect();
    let values = findings
        .iter()
        .map(|f| {
            sentences.iter().any(|words| {
                words
                    .iter()
                    .enumerate()
                    .any(|(i, w)| f.keywords().contains(w) && !words[..i].iter().any(|x| NEGATIONS.contains(x)))
            })
        })
        .collect();
    LabelVector {
        findings: findings.to_vec(),
        values,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    /// `2TP / (2TP + FP + FN)`, 0 when the denominator is 0.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    fn add(&mut self, pred: bool, gt: bool) {
        match (pred, gt) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub per_finding: Vec<(Finding, Confusion)>,
    pub pooled: Confusion,
}

pub fn macro_micro_f1(preds: &[LabelVector], gts: &[LabelVector]) -> Result<F1Scores> {
    ensure!(
        preds.len() == gts.len(),
        "{} predictions vs {} references",
        preds.len(),
        gts.len()
    );
    let findings = match gts.first() {
        Some(g) => g.findings.clone(),
        None => Finding::MASK_RELEVANT.to_vec(),
    };
    let mut per: Vec<Confusion> = vec![Confusion::default(); findings.len()];
    for (p, g) in preds.iter().zip(gts) {
        ensure!(
            p.findings == findings && g.findings == findings,
            "label vectors use different finding lists"
        );
        for (i, c) in per.iter_mut().enumerate() {
            c.add(p.values[i], g.values[i]);
        }
    }
    let pooled = per.iter().fold(Confusion::default(), |a, c| Confusion {
        tp: a.tp + c.tp,
        fp: a.fp + c.fp,
        fn_: a.fn_ + c.fn_,
        tn: a.tn + c.tn,
    });
    let macro_f1 = if per.is_empty() {
        0.0
    } else {
        per.iter().map(Confusion::f1).sum::<f64>() / per.len() as f64
    };
    Ok(F1Scores {
        macro_f1,
        micro_f1: pooled.f1(),
        per_finding: findings.into_iter().zip(per).collect(),
        pooled,
    })
}
