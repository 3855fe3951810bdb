use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    LangMask,
    VisClass,
    VisAttr,
    VisFeat,
    Match,
    Vqa,
    Align,
    Pair,
}

impl LossKind {
    pub const ALL: [LossKind; 8] = [
        LossKind::LangMask,
        LossKind::VisClass,
        LossKind::VisAttr,
        LossKind::VisFeat,
        LossKind::Match,
        LossKind::Vqa,
        LossKind::Align,
        LossKind::Pair,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::LangMask => "lang_mask",
            LossKind::VisClass => "vis_class",
            LossKind::VisAttr => "vis_attr",
            LossKind::VisFeat => "vis_feat",
            LossKind::Match => "match",
            LossKind::Vqa => "vqa",
            LossKind::Align => "align",
            LossKind::Pair => "pair",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lang_mask: f64,
    pub vis_class: f64,
    pub vis_attr: f64,
    pub vis_feat: f64,
    #[serde(rename = "match")]
    pub matching: f64,
    pub vqa: f64,
    pub align: f64,
    pub pair: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lang_mask: 1.0,
            vis_class: 1.0,
            vis_attr: 1.0,
            vis_feat: 1.0,
            matching: 1.0,
            vqa: 1.0,
            align: 1.0,
            pair: 1.0,
        }
    }
}

impl LossWeights {
    pub fn get(&self, kind: LossKind) -> f64 {
        match kind {
            LossKind::LangMask => self.lang_mask,
            LossKind::VisClass => self.vis_class,
            LossKind::VisAttr => self.vis_attr,
            LossKind::VisFeat => self.vis_feat,
            LossKind::Match => self.matching,
            LossKind::Vqa => self.vqa,
            LossKind::Align => self.align,
            LossKind::Pair => self.pair,
        }
    }
}

/// Which terms may contribute for one example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermGate {
    /// False for a corrupted (image-replaced) pair: VQA and alignment targets
    /// describe the original image, so both terms are dropped.
    pub is_match: bool,
    /// False before the VQA start epoch.
    pub vqa_enabled: bool,
    /// False for the no-alignment ablation.
    pub align_enabled: bool,
}

impl Default for TermGate {
    fn default() -> Self {
        TermGate {
            is_match: true,
            vqa_enabled: true,
            align_enabled: true,
        }
    }
}

impl TermGate {
    pub fn allows(&self, kind: LossKind) -> bool {
        match kind {
            LossKind::Vqa => self.is_match && self.vqa_enabled,
            LossKind::Align => self.is_match && self.align_enabled,
            _ => true,
        }
    }
}

/// Values of the active loss terms and their weighted total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub terms: BTreeMap<LossKind, f64>,
    pub total: f64,
}

impl LossBundle {
    pub fn get(&self, kind: LossKind) -> Option<f64> {
        self.terms.get(&kind).copied()
    }

    pub fn contains(&self, kind: LossKind) -> bool {
        self.terms.contains_key(&kind)
    }
}

/// Weighted sum of the candidate terms that pass `gate`.
pub fn total_loss(
    g: &mut Graph,
    candidates: &[(LossKind, Var)],
    weights: &LossWeights,
    gate: TermGate,
) -> Result<(Var, LossBundle)> {
    let active: Vec<(LossKind, Var)> = candidates
        .iter()
        .copied()
        .filter(|(kind, _)| gate.allows(*kind))
        .collect();
    if active.is_empty() {
        return Err(Error::invalid("total_loss", "no active loss terms"));
    }
    let weighted: Vec<(Var, f64)> = active.iter().map(|&(k, v)| (v, weights.get(k))).collect();
    let total = g.weighted_sum(&weighted)?;
    let terms = active
        .iter()
        .map(|&(k, v)| (k, g.value(v).item()))
        .collect();
    Ok((
        total,
        LossBundle {
            terms,
            total: g.value(total).item(),
        },
    ))
}
