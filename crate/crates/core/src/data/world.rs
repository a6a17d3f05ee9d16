use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;

const OBJECTS: [&str; 20] = [
    "cat", "dog", "horse", "bird", "man", "woman", "boy", "girl", "car", "bus", "train", "bike", "table",
    "chair", "ball", "kite", "boat", "plane", "pizza", "cake",
];
const SCENES: [&str; 10] = [
    "beach", "park", "street", "kitchen", "field", "room", "forest", "river", "city", "snow",
];
const ACTIONS: [&str; 10] = [
    "sitting", "standing", "running", "eating", "riding", "playing", "holding", "walking", "flying", "jumping",
];
const FUNCTION_WORDS: [&str; 8] = ["a", "the", "is", "there", "in", "with", "near", "and"];

/// Prototype weight of the companion object.
pub const COMPANION_SALIENCE: f64 = 0.6;

const TEMPLATES: [&str; 12] = [
    "a {S}",
    "there is a {S}",
    "a {S} in the {P}",
    "there is a {S} in the {P}",
    "a {S} is {A}",
    "the {S} is {A}",
    "a {S} is {A} in the {P}",
    "in the {P} a {S} is {A}",
    "a {S} is {A} with a {C}",
    "the {S} is {A} near the {C}",
    "a {S} is {A} with a {C} in the {P}",
    "in the {P} the {S} is {A} near a {C}",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Object,
    Scene,
    Action,
}

/// Part-of-speech tag of a surface token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pos {
    Noun,
    Verb,
    Function,
}

impl Pos {
    pub fn is_concept(self) -> bool {
        matches!(self, Pos::Noun | Pos::Verb)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub pivot: String,
    pub target: String,
    pub category: Category,
    pub prototype: Vec<f32>,
}

/// Grammar slot roles: subject, companion object, action and place.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Subject,
    Action,
    Companion,
    Place,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Word(String),
    Fill(Role),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub slots: Vec<Slot>,
}

impl Template {
    fn parse(s: &str) -> Self {
        let slots = s
            .split_whitespace()
            .map(|w| match w {
                "{S}" => Slot::Fill(Role::Subject),
                "{A}" => Slot::Fill(Role::Action),
                "{C}" => Slot::Fill(Role::Companion),
                "{P}" => Slot::Fill(Role::Place),
                _ => Slot::Word(w.to_string()),
            })
            .collect();
        Self { slots }
    }

    pub fn roles(&self) -> BTreeSet<Role> {
        self.slots
            .iter()
            .filter_map(|s| match s {
                Slot::Fill(r) => Some(*r),
                Slot::Word(_) => None,
            })
            .collect()
    }
}

/// Content of one synthetic image, as concept indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneContent {
    pub subject: usize,
    pub action: Option<usize>,
    pub companion: Option<usize>,
    pub place: Option<usize>,
}

impl SceneContent {
    pub fn roles(&self) -> BTreeSet<Role> {
        let mut r = BTreeSet::from([Role::Subject]);
        if self.action.is_some() {
            r.insert(Role::Action);
        }
        if self.companion.is_some() {
            r.insert(Role::Companion);
        }
        if self.place.is_some() {
            r.insert(Role::Place);
        }
        r
    }

    pub fn filler(&self, role: Role) -> Option<usize> {
        match role {
            Role::Subject => Some(self.subject),
            Role::Action => self.action,
            Role::Companion => self.companion,
            Role::Place => self.place,
        }
    }

    /// Concept indices in role order.
    pub fn concepts(&self) -> Vec<usize> {
        [Some(self.subject), self.action, self.companion, self.place]
            .into_iter()
            .flatten()
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub objects: usize,
    pub scenes: usize,
    pub actions: usize,
    pub feature_dim: usize,
    /// Per-coordinate noise standard deviation relative to prototype norm.
    pub feature_noise: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            objects: 20,
            scenes: 10,
            actions: 10,
            feature_dim: 32,
            feature_noise: 0.1,
        }
    }
}

/// Concept inventory with unit-norm prototypes, grammar templates and the
/// pivot→target dictionary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MicroWorld {
    pub config: WorldConfig,
    pub seed: u64,
    pub concepts: Vec<Concept>,
    pub templates: Vec<Template>,
    /// Function words as (pivot, target) pairs.
    pub function_words: Vec<(String, String)>,
    #[serde(skip)]
    lexicon: Lexicon,
}

#[derive(Clone, Debug, Default)]
struct Lexicon {
    to_target: HashMap<String, String>,
    target_pos: HashMap<String, Pos>,
    target_concept: HashMap<String, usize>,
}

impl PartialEq for MicroWorld {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.seed == other.seed
            && self.concepts == other.concepts
            && self.templates == other.templates
            && self.function_words == other.function_words
    }
}

fn names(base: &[&str], n: usize, prefix: &str) -> Vec<String> {
    (0..n)
        .map(|i| base.get(i).map_or_else(|| format!("{prefix}{i}"), |s| s.to_string()))
        .collect()
}

fn target_words<R: Rng>(n: usize, avoid: &BTreeSet<String>, rng: &mut R) -> Vec<String> {
    const CONS: &[u8] = b"bdfgklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(*CONS.choose(rng).expect("non-empty") as char);
            w.push(*VOWELS.choose(rng).expect("non-empty") as char);
        }
        if !avoid.contains(&w) && seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

impl MicroWorld {
    pub fn generate(config: WorldConfig, seed: u64) -> Result<Self> {
        if config.objects < 2 || config.scenes < 2 || config.actions < 2 {
            return Err(Error::Invalid(
                "world needs at least two concepts per category".into(),
            ));
        }
        if config.feature_dim == 0 || !(config.feature_noise >= 0.0) {
            return Err(Error::Invalid("feature dimension and noise must be valid".into()));
        }
        let mut rng = stream(seed, &[0x0077_6f72_6c64]);
        let groups = [
            (Category::Object, names(&OBJECTS, config.objects, "object")),
            (Category::Scene, names(&SCENES, config.scenes, "place")),
            (Category::Action, names(&ACTIONS, config.actions, "doing")),
        ];
        let pivots: BTreeSet<String> = groups
            .iter()
            .flat_map(|(_, ns)| ns.iter().cloned())
            .chain(FUNCTION_WORDS.iter().map(|s| s.to_string()))
            .collect();
        let n_concepts = config.objects + config.scenes + config.actions;
        let words = target_words(n_concepts + FUNCTION_WORDS.len(), &pivots, &mut rng);
        let mut words = words.into_iter();
        let mut concepts = Vec::with_capacity(n_concepts);
        for (cat, ns) in groups {
            for pivot in ns {
                let prototype = random_unit(config.feature_dim, &mut rng);
                concepts.push(Concept {
                    pivot,
                    target: words.next().expect("enough words"),
                    category: cat,
                    prototype,
                });
            }
        }
        let function_words = FUNCTION_WORDS
            .iter()
            .map(|w| (w.to_string(), words.next().expect("enough words")))
            .collect();
        let mut world = Self {
            config,
            seed,
            concepts,
            templates: TEMPLATES.iter().map(|t| Template::parse(t)).collect(),
            function_words,
            lexicon: Lexicon::default(),
        };
        world.reindex();
        Ok(world)
    }

    fn reindex(&mut self) {
        let mut lex = Lexicon::default();
        for (i, c) in self.concepts.iter().enumerate() {
            lex.to_target.insert(c.pivot.clone(), c.target.clone());
            let pos = if c.category == Category::Action { Pos::Verb } else { Pos::Noun };
            lex.target_pos.insert(c.target.clone(), pos);
            lex.target_concept.insert(c.target.clone(), i);
        }
        for (p, t) in &self.function_words {
            lex.to_target.insert(p.clone(), t.clone());
            lex.target_pos.insert(t.clone(), Pos::Function);
        }
        self.lexicon = lex;
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self).map_err(|e| Error::Invalid(e.to_string()))?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut w: Self = serde_json::from_str(&s).map_err(|e| Error::Parse {
            path: path.into(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        w.reindex();
        Ok(w)
    }

    pub fn concepts_in(&self, category: Category) -> impl Iterator<Item = usize> + '_ {
        self.concepts
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.category == category)
            .map(|(i, _)| i)
    }

    /// Target-language surface form of a pivot token.
    pub fn translate_word(&self, pivot: &str) -> Option<&str> {
        self.lexicon.to_target.get(pivot).map(String::as_str)
    }

    pub fn target_pos(&self, token: &str) -> Option<Pos> {
        self.lexicon.target_pos.get(token).copied()
    }

    pub fn target_concept(&self, token: &str) -> Option<usize> {
        self.lexicon.target_concept.get(token).copied()
    }

    /// Tag table of every target-language token.
    pub fn target_tags(&self) -> HashMap<String, Pos> {
        self.lexicon.target_pos.clone()
    }

    /// Random image content: subject always; action, companion (only with an
    /// action) and place by structure, one of six equally likely.
    pub fn sample_content<R: Rng>(&self, rng: &mut R) -> SceneContent {
        let objects: Vec<usize> = self.concepts_in(Category::Object).collect();
        let actions: Vec<usize> = self.concepts_in(Category::Action).collect();
        let places: Vec<usize> = self.concepts_in(Category::Scene).collect();
        let structure = rng.random_range(0..6);
        let (has_action, has_companion, has_place) = match structure {
            0 => (false, false, false),
            1 => (false, false, true),
            2 => (true, false, false),
            3 => (true, false, true),
            4 => (true, true, false),
            _ => (true, true, true),
        };
        let subject = *objects.choose(rng).expect("objects");
        let action = has_action.then(|| *actions.choose(rng).expect("actions"));
        let companion = has_companion.then(|| {
            let others: Vec<usize> = objects.iter().copied().filter(|&o| o != subject).collect();
            *others.choose(rng).expect("two objects")
        });
        let place = has_place.then(|| *places.choose(rng).expect("places"));
        SceneContent {
            subject,
            action,
            companion,
            place,
        }
    }

    /// Weighted sum of concept prototypes plus isotropic Gaussian noise. The
    /// companion is drawn fainter than the subject.
    pub fn features<R: Rng>(&self, content: &SceneContent, rng: &mut R) -> Vec<f32> {
        let d = self.config.feature_dim;
        let mut v = vec![0.0f64; d];
        let weighted = [
            (Some(content.subject), 1.0),
            (content.action, 1.0),
            (content.companion, COMPANION_SALIENCE),
            (content.place, 1.0),
        ];
        for (c, w) in weighted {
            let Some(c) = c else { continue };
            for (a, &p) in v.iter_mut().zip(&self.concepts[c].prototype) {
                *a += w * p as f64;
            }
        }
        // prototypes are unit-norm, so the relative noise scale is absolute
        for a in v.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *a += self.config.feature_noise * z;
        }
        v.into_iter().map(|x| x as f32).collect()
    }

    pub fn templates_for(&self, content: &SceneContent) -> Vec<usize> {
        let roles = content.roles();
        (0..self.templates.len())
            .filter(|&i| self.templates[i].roles() == roles)
            .collect()
    }

    /// Pivot-language rendering of a template.
    pub fn render_pivot(&self, template: usize, content: &SceneContent) -> Result<Vec<String>> {
        self.templates[template]
            .slots
            .iter()
            .map(|s| match s {
                Slot::Word(w) => Ok(w.clone()),
                Slot::Fill(r) => content
                    .filler(*r)
                    .map(|c| self.concepts[c].pivot.clone())
                    .ok_or_else(|| Error::Invalid(format!("template {template} needs {r:?}"))),
            })
            .collect()
    }

    /// Word-by-word dictionary translation into the target language.
    pub fn translate(&self, pivot: &[String]) -> Result<Vec<String>> {
        pivot
            .iter()
            .map(|w| {
                self.translate_word(w)
                    .map(str::to_string)
                    .ok_or_else(|| Error::Missing(format!("no translation for pivot token {w:?}")))
            })
            .collect()
    }

    /// One clean target rendering per template matching the content.
    pub fn references(&self, content: &SceneContent) -> Result<Vec<Vec<String>>> {
        self.templates_for(content)
            .into_iter()
            .map(|t| self.translate(&self.render_pivot(t, content)?))
            .collect()
    }
}

fn random_unit<R: Rng>(d: usize, rng: &mut R) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| (x / n) as f32).collect();
        }
    }
}

/// Noun and verb tokens of a caption under a tag table.
pub fn extract_concepts_tagged<S: AsRef<str>>(tokens: &[S], tags: &HashMap<String, Pos>) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for t in tokens {
        let t = t.as_ref();
        match tags.get(t) {
            Some(p) if p.is_concept() => out.push(t.to_string()),
            Some(_) => {}
            None => return Err(Error::Missing(format!("untagged token {t:?}"))),
        }
    }
    Ok(out)
}

/// Noun and verb tokens of a target-language caption from the world grammar.
pub fn extract_concepts<S: AsRef<str>>(tokens: &[S], world: &MicroWorld) -> Result<Vec<String>> {
    extract_concepts_tagged(tokens, &world.lexicon.target_pos)
}
