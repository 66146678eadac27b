//! Template-based synthetic corpus.
//!
//! Each sentence is built around one primary numeral whose entity type is
//! signaled by cue words in its template ("in 1998", "at the age of 40",
//! "25 % of", "300 workers", "12 acres", "March 5"). Cue-word inventories and
//! templates live in `data/templates.json`.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Corpus, EntityLabel, Sentence};
use crate::error::{Error, Result};

const TEMPLATE_DATA: &str = include_str!("../../data/templates.json");

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateBank {
    pub subjects: Vec<String>,
    pub persons: Vec<String>,
    pub nouns: Vec<String>,
    pub units: Vec<String>,
    pub months: Vec<String>,
    pub templates: BTreeMap<EntityLabel, Vec<String>>,
    /// Templates whose cue words fit several entity types; only the numeral's
    /// form tells them apart.
    pub shared_templates: Vec<SharedTemplates>,
    pub questions: BTreeMap<EntityLabel, Vec<String>>,
    pub frequent_values: BTreeMap<EntityLabel, Vec<String>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharedTemplates {
    pub entities: Vec<EntityLabel>,
    pub templates: Vec<String>,
}

impl TemplateBank {
    pub fn builtin() -> &'static TemplateBank {
        static BANK: OnceLock<TemplateBank> = OnceLock::new();
        BANK.get_or_init(|| serde_json::from_str(TEMPLATE_DATA).expect("bundled templates parse"))
    }

    /// Every word the generator can emit other than numerals.
    pub fn word_inventory(&self) -> Vec<String> {
        let mut words: Vec<String> = Vec::new();
        let fillers = self
            .subjects
            .iter()
            .chain(&self.persons)
            .chain(&self.nouns)
            .chain(&self.units)
            .chain(&self.months);
        let texts = self
            .templates
            .values()
            .chain(self.questions.values())
            .flatten()
            .chain(self.shared_templates.iter().flat_map(|g| &g.templates));
        for t in fillers.chain(texts) {
            for w in t.split_whitespace() {
                if !(w.starts_with('{') && w.ends_with('}')) {
                    words.push(w.to_string());
                }
            }
        }
        words.push(",".into());
        words.sort();
        words.dedup();
        words
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueRange {
    pub min: u64,
    pub max: u64,
}

impl ValueRange {
    pub const fn new(min: u64, max: u64) -> Self {
        ValueRange { min, max }
    }

    fn contains(&self, v: f64) -> bool {
        v >= self.min as f64 && v <= self.max as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub n_sentences: usize,
    /// Relative weight of each entity as a sentence's primary numeral.
    pub entity_mix: BTreeMap<EntityLabel, f64>,
    pub seed: u64,
    pub templates_per_entity: usize,
    pub value_ranges: BTreeMap<EntityLabel, ValueRange>,
    /// Attach a question + answer span and a distractor clause of another type.
    pub questions: bool,
    /// Probability of drawing the numeral from the entity's frequent-value list.
    pub frequent_value_prob: f64,
    /// Probability that a primary clause uses a shared template when its
    /// entity has one.
    pub shared_template_prob: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_sentences: 5000,
            entity_mix: GenConfig::reference_mix(),
            seed: 0,
            templates_per_entity: 5,
            value_ranges: GenConfig::default_ranges(),
            questions: false,
            frequent_value_prob: 0.6,
            shared_template_prob: 0.0,
        }
    }
}

impl GenConfig {
    /// Entity proportions of a hand-annotated reference corpus.
    pub fn reference_mix() -> BTreeMap<EntityLabel, f64> {
        use EntityLabel::*;
        BTreeMap::from([
            (Count, 1800.0),
            (Size, 447.0),
            (Year, 4355.0),
            (Percentage, 291.0),
            (Date, 418.0),
            (Age, 82.0),
        ])
    }

    pub fn uniform_mix() -> BTreeMap<EntityLabel, f64> {
        EntityLabel::ENTITIES.iter().map(|&e| (e, 1.0)).collect()
    }

    pub fn default_ranges() -> BTreeMap<EntityLabel, ValueRange> {
        use EntityLabel::*;
        BTreeMap::from([
            (Year, ValueRange::new(1800, 2025)),
            (Age, ValueRange::new(1, 99)),
            (Percentage, ValueRange::new(0, 100)),
            (Count, ValueRange::new(1, 1_000_000)),
            (Size, ValueRange::new(1, 100_000)),
            (Date, ValueRange::new(1, 31)),
        ])
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sentences == 0 {
            return Err(Error::Config("n_sentences must be positive".into()));
        }
        if self.entity_mix.contains_key(&EntityLabel::Other) {
            return Err(Error::Config("entity_mix must not weight O".into()));
        }
        if self.entity_mix.values().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("entity_mix weights must be finite and nonnegative".into()));
        }
        if !self.entity_mix.values().any(|w| *w > 0.0) {
            return Err(Error::Config("entity_mix needs at least one positive weight".into()));
        }
        let bank = TemplateBank::builtin();
        for e in EntityLabel::ENTITIES {
            let r = self
                .value_ranges
                .get(&e)
                .ok_or_else(|| Error::Config(format!("missing value range for {e}")))?;
            if r.min > r.max {
                return Err(Error::Config(format!("empty value range for {e}")));
            }
            let available = bank.templates[&e].len();
            if self.templates_per_entity == 0 || self.templates_per_entity > available {
                return Err(Error::Config(format!(
                    "templates_per_entity must be in 1..={available}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.frequent_value_prob) {
            return Err(Error::Config("frequent_value_prob must be in [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.shared_template_prob) {
            return Err(Error::Config("shared_template_prob must be in [0,1]".into()));
        }
        Ok(())
    }

    /// Number of sentences per entity: largest-remainder rounding of `n * w / sum(w)`.
    pub fn allocation(&self) -> Vec<(EntityLabel, usize)> {
        let total: f64 = self.entity_mix.values().sum();
        let n = self.n_sentences;
        let mut rows: Vec<(EntityLabel, usize, f64)> = EntityLabel::ENTITIES
            .iter()
            .filter_map(|e| self.entity_mix.get(e).filter(|w| **w > 0.0).map(|w| (*e, *w)))
            .map(|(e, w)| {
                let exact = n as f64 * w / total;
                (e, exact.floor() as usize, exact - exact.floor())
            })
            .collect();
        let assigned: usize = rows.iter().map(|r| r.1).sum();
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&a, &b| rows[b].2.total_cmp(&rows[a].2).then(a.cmp(&b)));
        for &i in order.iter().take(n - assigned) {
            rows[i].1 += 1;
        }
        rows.into_iter().map(|(e, c, _)| (e, c)).collect()
    }

    fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }
}

pub fn generate_corpus(config: &GenConfig) -> Result<Corpus> {
    config.validate()?;
    let bank = TemplateBank::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut primaries: Vec<EntityLabel> = config
        .allocation()
        .into_iter()
        .flat_map(|(e, c)| std::iter::repeat_n(e, c))
        .collect();
    primaries.shuffle(&mut rng);

    let active: Vec<EntityLabel> = EntityLabel::ENTITIES
        .iter()
        .copied()
        .filter(|e| config.entity_mix.get(e).is_some_and(|w| *w > 0.0))
        .collect();

    let sentences = primaries
        .into_iter()
        .enumerate()
        .map(|(i, entity)| {
            let id = format!("s{}-{:06}", config.seed, i);
            make_sentence(id, entity, &active, config, bank, &mut rng)
        })
        .collect();
    let corpus = Corpus::new(sentences, format!("gen:{}", config.fingerprint()));
    debug_assert!(corpus.validate().is_ok());
    Ok(corpus)
}

struct Bindings<'a> {
    subject: &'a str,
    person: &'a str,
    noun: &'a str,
    unit: &'a str,
    month: &'a str,
}

impl<'a> Bindings<'a> {
    fn draw(bank: &'a TemplateBank, rng: &mut ChaCha8Rng) -> Self {
        Bindings {
            subject: bank.subjects.choose(rng).unwrap(),
            person: bank.persons.choose(rng).unwrap(),
            noun: bank.nouns.choose(rng).unwrap(),
            unit: bank.units.choose(rng).unwrap(),
            month: bank.months.choose(rng).unwrap(),
        }
    }
}

struct Clause {
    tokens: Vec<String>,
    labels: Vec<EntityLabel>,
    num_index: usize,
}

fn expand(
    template: &str,
    entity: EntityLabel,
    b: &Bindings<'_>,
    config: &GenConfig,
    bank: &TemplateBank,
    rng: &mut ChaCha8Rng,
) -> Clause {
    let mut tokens = Vec::new();
    let mut labels = Vec::new();
    let mut num_index = usize::MAX;
    let push_words = |tokens: &mut Vec<String>, labels: &mut Vec<EntityLabel>, s: &str| {
        for w in s.split_whitespace() {
            tokens.push(w.to_string());
            labels.push(EntityLabel::Other);
        }
    };
    for slot in template.split_whitespace() {
        match slot {
            "{NUM}" => {
                num_index = tokens.len();
                tokens.push(sample_value(entity, config, bank, rng));
                labels.push(entity);
            }
            "{OPT_YEAR}" => {
                if rng.random_bool(0.5) {
                    tokens.push(",".into());
                    labels.push(EntityLabel::Other);
                    tokens.push(sample_value(EntityLabel::Year, config, bank, rng));
                    labels.push(EntityLabel::Year);
                }
            }
            "{SUBJ}" => push_words(&mut tokens, &mut labels, b.subject),
            "{PERSON}" => push_words(&mut tokens, &mut labels, b.person),
            "{NOUN}" => push_words(&mut tokens, &mut labels, b.noun),
            "{UNIT}" => push_words(&mut tokens, &mut labels, b.unit),
            "{MONTH}" => push_words(&mut tokens, &mut labels, b.month),
            w => push_words(&mut tokens, &mut labels, w),
        }
    }
    debug_assert!(num_index != usize::MAX, "template without {{NUM}}: {template}");
    Clause {
        tokens,
        labels,
        num_index,
    }
}

fn fill_question(template: &str, b: &Bindings<'_>) -> Vec<String> {
    template
        .split_whitespace()
        .flat_map(|slot| {
            let s = match slot {
                "{SUBJ}" => b.subject,
                "{PERSON}" => b.person,
                "{NOUN}" => b.noun,
                "{UNIT}" => b.unit,
                "{MONTH}" => b.month,
                w => w,
            };
            s.split_whitespace().map(String::from).collect::<Vec<_>>()
        })
        .collect()
}

fn pick_template<'a>(
    entity: EntityLabel,
    config: &GenConfig,
    bank: &'a TemplateBank,
    rng: &mut ChaCha8Rng,
) -> &'a str {
    let list = &bank.templates[&entity][..config.templates_per_entity];
    list.choose(rng).unwrap()
}

fn make_sentence(
    id: String,
    entity: EntityLabel,
    active: &[EntityLabel],
    config: &GenConfig,
    bank: &TemplateBank,
    rng: &mut ChaCha8Rng,
) -> Sentence {
    let b = Bindings::draw(bank, rng);
    let shared: Vec<&String> = bank
        .shared_templates
        .iter()
        .filter(|g| g.entities.contains(&entity))
        .flat_map(|g| &g.templates)
        .collect();
    let template = if config.shared_template_prob > 0.0
        && !shared.is_empty()
        && rng.random_bool(config.shared_template_prob)
    {
        shared.choose(rng).unwrap().as_str()
    } else {
        pick_template(entity, config, bank, rng)
    };
    let main = expand(template, entity, &b, config, bank, rng);

    let (tokens, labels, num_index, question) = if config.questions {
        let q = bank.questions[&entity].choose(rng).unwrap();
        let question = fill_question(q, &b);
        let others: Vec<EntityLabel> = active.iter().copied().filter(|e| *e != entity).collect();
        match others.choose(rng) {
            Some(&other) => {
                let b2 = Bindings::draw(bank, rng);
                let t2 = pick_template(other, config, bank, rng);
                let distractor = expand(t2, other, &b2, config, bank, rng);
                if rng.random_bool(0.5) {
                    let offset = distractor.tokens.len();
                    let tokens = [distractor.tokens, main.tokens].concat();
                    let labels = [distractor.labels, main.labels].concat();
                    (tokens, labels, main.num_index + offset, Some(question))
                } else {
                    let tokens = [main.tokens, distractor.tokens].concat();
                    let labels = [main.labels, distractor.labels].concat();
                    (tokens, labels, main.num_index, Some(question))
                }
            }
            None => (main.tokens, main.labels, main.num_index, Some(question)),
        }
    } else {
        (main.tokens, main.labels, main.num_index, None)
    };

    let answer = tokens[num_index].clone();
    Sentence {
        id,
        answer_span: question.as_ref().map(|_| (num_index, num_index)),
        question,
        mask_index: Some(num_index),
        mask_entity: Some(entity),
        mask_answer: Some(answer),
        tokens,
        labels,
        confidences: None,
    }
}

fn group_thousands(v: u64) -> String {
    let digits = v.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn sample_value(
    entity: EntityLabel,
    config: &GenConfig,
    bank: &TemplateBank,
    rng: &mut ChaCha8Rng,
) -> String {
    let range = config.value_ranges[&entity];
    if rng.random_bool(config.frequent_value_prob) {
        let candidates: Vec<&String> = bank.frequent_values[&entity]
            .iter()
            .filter(|v| super::numeral_value(v).is_some_and(|x| range.contains(x)))
            .collect();
        if !candidates.is_empty() {
            // Zipf-like preference for the head of the list
            let weights: Vec<f64> = (0..candidates.len()).map(|r| 1.0 / (r as f64 + 1.0)).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            for (c, w) in candidates.iter().zip(&weights) {
                if u < *w {
                    return (*c).clone();
                }
                u -= w;
            }
            return candidates.last().unwrap().to_string();
        }
    }
    match entity {
        EntityLabel::Percentage if range.max > range.min && rng.random_bool(0.3) => {
            let int = rng.random_range(range.min..range.max);
            format!("{}.{}", int, rng.random_range(1..=9))
        }
        EntityLabel::Count | EntityLabel::Size => {
            let lo = (range.min.max(1) as f64).ln();
            let hi = ((range.max + 1) as f64).ln();
            let v = (rng.random_range(lo..=hi).exp().floor() as u64).clamp(range.min, range.max);
            if v >= 1000 && rng.random_bool(0.5) {
                group_thousands(v)
            } else {
                v.to_string()
            }
        }
        _ => rng.random_range(range.min..=range.max).to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::numeral_value;

    #[test]
    fn grouping() {
        assert_eq!(group_thousands(1000), "1,000");
        assert_eq!(group_thousands(999), "999");
        assert_eq!(group_thousands(1234567), "1,234,567");
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = GenConfig {
            n_sentences: 0,
            ..Default::default()
        };
        assert!(generate_corpus(&c).is_err());
        c.n_sentences = 5;
        c.entity_mix = EntityLabel::ENTITIES.iter().map(|&e| (e, 0.0)).collect();
        assert!(generate_corpus(&c).is_err());
        c.entity_mix = GenConfig::uniform_mix();
        c.value_ranges.insert(EntityLabel::Age, ValueRange::new(10, 5));
        assert!(generate_corpus(&c).is_err());
    }

    #[test]
    fn allocation_matches_reference_mix() {
        let c = GenConfig {
            n_sentences: 7000,
            ..Default::default()
        };
        let total: f64 = c.entity_mix.values().sum();
        let alloc = c.allocation();
        assert_eq!(alloc.iter().map(|a| a.1).sum::<usize>(), 7000);
        for (e, n) in alloc {
            let exact = 7000.0 * c.entity_mix[&e] / total;
            assert!((n as f64 - exact).abs() < 1.0, "{e}: {n} vs {exact}");
        }
    }

    #[test]
    fn templates_cover_every_entity() {
        let bank = TemplateBank::builtin();
        for e in EntityLabel::ENTITIES {
            let ts = &bank.templates[&e];
            assert!(ts.len() >= 5, "{e}");
            assert!(ts.iter().all(|t| t.split_whitespace().filter(|w| *w == "{NUM}").count() == 1));
            assert!(!bank.questions[&e].is_empty());
            assert!(bank.frequent_values[&e].iter().all(|v| numeral_value(v).is_some()));
        }
        for w in bank.word_inventory() {
            assert!(numeral_value(&w).is_none(), "word `{w}` parses as a numeral");
        }
    }

    #[test]
    fn questions_carry_answer_span() {
        let c = GenConfig {
            n_sentences: 50,
            questions: true,
            entity_mix: GenConfig::uniform_mix(),
            seed: 3,
            ..Default::default()
        };
        let corpus = generate_corpus(&c).unwrap();
        for s in &corpus.sentences {
            let (a, b) = s.answer_span.unwrap();
            assert_eq!(a, b);
            assert_eq!(Some(s.labels[a]), s.mask_entity);
            assert!(s.question.as_ref().unwrap().len() >= 3);
            // primary plus a distractor of a different type
            let distinct: std::collections::BTreeSet<_> =
                s.labels.iter().filter(|l| l.is_entity()).collect();
            assert!(distinct.len() >= 2, "{:?}", s.tokens);
        }
    }

    fn shared_fragments() -> Vec<String> {
        TemplateBank::builtin()
            .shared_templates
            .iter()
            .flat_map(|g| &g.templates)
            .map(|t| {
                t.split(|c| c == '{' || c == '}')
                    .step_by(2)
                    .map(str::trim)
                    .max_by_key(|p| p.len())
                    .unwrap()
                    .to_string()
            })
            .collect()
    }

    #[test]
    fn shared_templates_follow_probability() {
        let frags = shared_fragments();
        let uses_shared = |s: &Sentence| {
            let text = s.tokens.join(" ");
            frags.iter().any(|f| text.contains(f.as_str()))
        };
        let mut c = GenConfig {
            n_sentences: 300,
            entity_mix: GenConfig::uniform_mix(),
            seed: 11,
            ..Default::default()
        };
        let off = generate_corpus(&c).unwrap();
        assert!(!off.sentences.iter().any(uses_shared));
        c.shared_template_prob = 1.0;
        let on = generate_corpus(&c).unwrap();
        let bank = TemplateBank::builtin();
        let mut hits = 0;
        for s in &on.sentences {
            let e = s.mask_entity.unwrap();
            let shared = bank.shared_templates.iter().any(|g| g.entities.contains(&e));
            assert_eq!(uses_shared(s), shared, "{e}: {:?}", s.tokens);
            hits += shared as usize;
        }
        assert!(hits > 0);
    }
}
