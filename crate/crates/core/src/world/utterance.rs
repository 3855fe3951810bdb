use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::CLS_TOKEN;
use super::{Scene, Vocabulary};
use crate::error::{Error, Result};
use crate::targets::{BBox, GroundedSpan};

/// Resampling bound for templates the scene cannot satisfy.
pub const MAX_TEMPLATE_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtteranceKind {
    Caption,
    Question,
    PairStatement,
}

/// Token range tied to one ground-truth object of the first scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointerSpan {
    pub start: usize,
    pub end: usize,
    pub object: usize,
    pub bbox: BBox,
}

impl PointerSpan {
    pub fn grounded(&self) -> GroundedSpan {
        GroundedSpan {
            start: self.start,
            end: self.end,
            bbox: self.bbox,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub kind: UtteranceKind,
    /// Words with [CLS] at position 0; span indices refer to this list.
    pub words: Vec<String>,
    pub spans: Vec<PointerSpan>,
    pub answer: Option<usize>,
    pub pair_label: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Question {
    ColorOfShape,
    ShapeOfColor,
    ColorBeside,
    Exists,
    Count,
}

const QUESTIONS: [Question; 5] = [
    Question::ColorOfShape,
    Question::ShapeOfColor,
    Question::ColorBeside,
    Question::Exists,
    Question::Count,
];

struct Builder<'v> {
    vocab: &'v Vocabulary,
    words: Vec<String>,
    spans: Vec<PointerSpan>,
}

impl<'v> Builder<'v> {
    fn new(vocab: &'v Vocabulary) -> Self {
        Builder {
            vocab,
            words: vec![CLS_TOKEN.to_string()],
            spans: Vec::new(),
        }
    }

    fn push(&mut self, text: &str) -> &mut Self {
        self.words
            .extend(text.split_whitespace().map(str::to_string));
        self
    }

    fn color<R: Rng + ?Sized>(&mut self, attribute: usize, rng: &mut R) -> &mut Self {
        let w = self.vocab.attribute_synonyms[attribute]
            .choose(rng)
            .expect("non-empty synonyms");
        self.words.push(w.clone());
        self
    }

    fn shape<R: Rng + ?Sized>(&mut self, class: usize, rng: &mut R) -> &mut Self {
        let w = self.vocab.class_synonyms[class]
            .choose(rng)
            .expect("non-empty synonyms");
        self.words.push(w.clone());
        self
    }

    /// Appends words via `f` and points the new range at `object`.
    fn pointer(&mut self, scene: &Scene, object: usize, f: impl FnOnce(&mut Self)) -> &mut Self {
        let start = self.words.len();
        f(self);
        self.spans.push(PointerSpan {
            start,
            end: self.words.len(),
            object,
            bbox: scene.objects[object].bbox,
        });
        self
    }

    fn finish(
        self,
        kind: UtteranceKind,
        answer: Option<usize>,
        pair_label: Option<bool>,
    ) -> Utterance {
        Utterance {
            kind,
            words: self.words,
            spans: self.spans,
            answer,
            pair_label,
        }
    }
}

fn unique<T: PartialEq>(items: impl Iterator<Item = T>, target: &T) -> bool {
    items.filter(|x| x == target).count() == 1
}

fn caption<R: Rng + ?Sized>(scene: &Scene, vocab: &Vocabulary, rng: &mut R) -> Utterance {
    let n = rng.gen_range(1..=scene.objects.len().min(3));
    let mut order: Vec<usize> = (0..scene.objects.len()).collect();
    order.shuffle(rng);
    let mut b = Builder::new(vocab);
    for (i, &o) in order[..n].iter().enumerate() {
        if i > 0 {
            b.push("and");
        }
        let obj = &scene.objects[o];
        b.pointer(scene, o, |b| {
            b.push("the")
                .color(obj.attribute, rng)
                .shape(obj.class, rng);
        });
    }
    b.finish(UtteranceKind::Caption, None, None)
}

fn question<R: Rng + ?Sized>(
    template: Question,
    scene: &Scene,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<Option<Utterance>> {
    let objs = &scene.objects;
    let answer_color = |a: usize| vocab.answer_id(&vocab.attribute_names[a]);
    let answer_shape = |c: usize| vocab.answer_id(&vocab.class_names[c]);
    let o = rng.gen_range(0..objs.len());
    let obj = &objs[o];
    let mut b = Builder::new(vocab);
    let answer = match template {
        Question::ColorOfShape => {
            if !unique(objs.iter().map(|x| x.class), &obj.class) {
                return Ok(None);
            }
            b.push("what color is").pointer(scene, o, |b| {
                b.push("the").shape(obj.class, rng);
            });
            answer_color(obj.attribute)?
        }
        Question::ShapeOfColor => {
            if !unique(objs.iter().map(|x| x.attribute), &obj.attribute) {
                return Ok(None);
            }
            b.push("what shape is").pointer(scene, o, |b| {
                b.push("the").color(obj.attribute, rng).push("thing");
            });
            answer_shape(obj.class)?
        }
        Question::ColorBeside => {
            let a = rng.gen_range(0..objs.len());
            let anchor = &objs[a];
            if a == o
                || obj.class == anchor.class
                || !unique(objs.iter().map(|x| x.class), &anchor.class)
            {
                return Ok(None);
            }
            let left = obj.bbox.center().0 < anchor.bbox.center().0;
            let same_side = objs
                .iter()
                .filter(|x| {
                    x.class == obj.class && (x.bbox.center().0 < anchor.bbox.center().0) == left
                })
                .count();
            if same_side != 1 {
                return Ok(None);
            }
            b.push("what color is")
                .pointer(scene, o, |b| {
                    b.push("the").shape(obj.class, rng);
                })
                .push(if left { "left of" } else { "right of" })
                .pointer(scene, a, |b| {
                    b.push("the").shape(anchor.class, rng);
                });
            answer_color(obj.attribute)?
        }
        Question::Exists => {
            let (class, attribute) = if rng.gen_bool(0.5) {
                (obj.class, obj.attribute)
            } else {
                (
                    rng.gen_range(vocab.object_classes()),
                    rng.gen_range(vocab.object_attributes()),
                )
            };
            b.push("is there");
            let hit = objs
                .iter()
                .position(|x| x.class == class && x.attribute == attribute);
            let describe = |b: &mut Builder, rng: &mut R| {
                b.push("a").color(attribute, rng).shape(class, rng);
            };
            match hit {
                Some(h) => {
                    b.pointer(scene, h, |b| describe(b, rng));
                }
                None => describe(&mut b, rng),
            }
            vocab.answer_id(if hit.is_some() { "yes" } else { "no" })?
        }
        Question::Count => {
            let class = if rng.gen_bool(0.5) {
                obj.class
            } else {
                rng.gen_range(vocab.object_classes())
            };
            let count = scene.count_class(class);
            if count > 4 {
                return Ok(None);
            }
            b.push("how many").shape(class, rng).push("are there");
            vocab.answer_id(&count.to_string())?
        }
    };
    Ok(Some(b.finish(UtteranceKind::Question, Some(answer), None)))
}

fn pair_statement<R: Rng + ?Sized>(
    first: &Scene,
    second: &Scene,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Utterance {
    let o = rng.gen_range(0..first.objects.len());
    let obj = &first.objects[o];
    let label = second.contains(obj.class, obj.attribute);
    let mut b = Builder::new(vocab);
    b.push("there is")
        .pointer(first, o, |b| {
            b.push("a").color(obj.attribute, rng).shape(obj.class, rng);
        })
        .push("in both images");
    b.finish(UtteranceKind::PairStatement, None, Some(label))
}

/// Templated utterance about `scenes[0]` (and `scenes[1]` for pair
/// statements). With `annotated`, only utterances carrying at least one
/// pointer span are accepted; without it, spans are stripped.
pub fn generate_utterance(
    scenes: &[&Scene],
    kind: UtteranceKind,
    seed: u64,
    vocab: &Vocabulary,
    annotated: bool,
) -> Result<Utterance> {
    let needed = if kind == UtteranceKind::PairStatement {
        2
    } else {
        1
    };
    if scenes.len() < needed || scenes[..needed].iter().any(|s| s.objects.is_empty()) {
        return Err(Error::Generation(format!(
            "{kind:?} needs {needed} non-empty scene(s)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_TEMPLATE_ATTEMPTS {
        let candidate = match kind {
            UtteranceKind::Caption => Some(caption(scenes[0], vocab, &mut rng)),
            UtteranceKind::Question => {
                let template = *QUESTIONS.choose(&mut rng).expect("non-empty");
                question(template, scenes[0], vocab, &mut rng)?
            }
            UtteranceKind::PairStatement => {
                Some(pair_statement(scenes[0], scenes[1], vocab, &mut rng))
            }
        };
        if let Some(mut u) = candidate {
            if annotated && u.spans.is_empty() {
                continue;
            }
            if !annotated {
                u.spans.clear();
            }
            return Ok(u);
        }
    }
    Err(Error::Generation(format!(
        "scene {}: no satisfiable {kind:?} template in {MAX_TEMPLATE_ATTEMPTS} attempts",
        scenes[0].id
    )))
}
