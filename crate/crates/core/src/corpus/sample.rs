use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{magnitude_bucket, Corpus, Sentence};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.75,
            val: 0.10,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(Error::Config("split ratios must be positive".into()));
        }
        if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split ratios must sum to 1".into()));
        }
        Ok(())
    }
}

/// Shuffled disjoint partition. Validation and test sizes are `floor(N * ratio)`;
/// the remainder goes to training.
pub fn split_corpus(corpus: &Corpus, ratios: SplitRatios, seed: u64) -> Result<(Corpus, Corpus, Corpus)> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot split an empty corpus"));
    }
    ratios.validate()?;
    let n = corpus.len();
    let floor = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
    let n_val = floor(ratios.val);
    let n_test = floor(ratios.test);
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let tag = |part: &str| format!("{}|split:{part}:seed={seed}", corpus.provenance);
    Ok((
        corpus.subset(&order[..n_train], tag("train")),
        corpus.subset(&order[n_train..n_train + n_val], tag("val")),
        corpus.subset(&order[n_train + n_val..], tag("test")),
    ))
}

/// Magnitude bucket of a sentence: the bucket of its first numeral.
pub fn sentence_bucket(s: &Sentence) -> Option<i32> {
    s.first_numeral().map(|(_, v)| magnitude_bucket(v))
}

/// Stratified sample preserving the distribution of first-numeral magnitude
/// buckets. Per-bucket quotas use largest-remainder rounding, so each bucket's
/// share is within `1/n` of its share in the source. Selected sentences keep
/// corpus order.
pub fn magnitude_audit_sample(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    if n > corpus.len() {
        return Err(Error::invalid(format!(
            "sample size {n} exceeds corpus size {}",
            corpus.len()
        )));
    }
    let mut strata: BTreeMap<Option<i32>, Vec<usize>> = BTreeMap::new();
    for (i, s) in corpus.sentences.iter().enumerate() {
        strata.entry(sentence_bucket(s)).or_default().push(i);
    }
    if strata.keys().all(Option::is_none) {
        return Err(Error::invalid("corpus contains no numerals"));
    }

    let total = corpus.len() as f64;
    let mut quotas: Vec<(Option<i32>, usize, f64)> = strata
        .iter()
        .map(|(k, members)| {
            let exact = n as f64 * members.len() as f64 / total;
            (*k, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
    for &i in order.iter().take(n - assigned) {
        quotas[i].1 += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(n);
    for (key, quota, _) in quotas {
        let mut members = strata[&key].clone();
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..quota]);
    }
    chosen.sort_unstable();
    Ok(corpus.subset(
        &chosen,
        format!("{}|audit:n={n}:seed={seed}", corpus.provenance),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntityLabel;

    fn corpus_with_values(values: &[u64]) -> Corpus {
        let sentences = values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                Sentence::new(
                    format!("s{i}"),
                    vec!["n".into(), v.to_string()],
                    vec![EntityLabel::Other, EntityLabel::Count],
                )
            })
            .collect();
        Corpus::new(sentences, "test")
    }

    fn bucket_counts(c: &Corpus) -> BTreeMap<i32, usize> {
        let mut m = BTreeMap::new();
        for s in &c.sentences {
            *m.entry(sentence_bucket(s).unwrap()).or_default() += 1;
        }
        m
    }

    #[test]
    fn split_sizes() {
        let c = corpus_with_values(&(0..100).collect::<Vec<_>>());
        let (a, b, t) = split_corpus(&c, SplitRatios::default(), 1).unwrap();
        assert_eq!((a.len(), b.len(), t.len()), (75, 10, 15));

        let one = corpus_with_values(&[5]);
        let (a, b, t) = split_corpus(&one, SplitRatios::default(), 9).unwrap();
        assert_eq!((a.len(), b.len(), t.len()), (1, 0, 0));

        let twenty = corpus_with_values(&(0..20).collect::<Vec<_>>());
        let (a, b, t) = split_corpus(&twenty, SplitRatios::default(), 2).unwrap();
        assert_eq!((a.len(), b.len(), t.len()), (15, 2, 3));
        let mut ids: Vec<_> = [a, b, t]
            .iter()
            .flat_map(|c| c.sentences.iter().map(|s| s.id.clone()))
            .collect();
        ids.sort();
        let mut orig: Vec<_> = twenty.sentences.iter().map(|s| s.id.clone()).collect();
        orig.sort();
        assert_eq!(ids, orig);
    }

    #[test]
    fn split_rejects_bad_input() {
        let c = corpus_with_values(&[1, 2]);
        let bad = SplitRatios {
            train: 0.5,
            val: 0.2,
            test: 0.2,
        };
        assert!(split_corpus(&c, bad, 0).is_err());
        assert!(split_corpus(&Corpus::default(), SplitRatios::default(), 0).is_err());
    }

    #[test]
    fn exact_two_bucket_stratification() {
        let vals: Vec<u64> = (0..20).map(|i| if i % 2 == 0 { 5 } else { 5000 }).collect();
        let c = corpus_with_values(&vals);
        let s = magnitude_audit_sample(&c, 10, 4).unwrap();
        assert_eq!(bucket_counts(&s), BTreeMap::from([(0, 5), (3, 5)]));
    }

    #[test]
    fn four_bucket_counts() {
        let mut vals = Vec::new();
        vals.extend(std::iter::repeat_n(3u64, 100));
        vals.extend(std::iter::repeat_n(30u64, 300));
        vals.extend(std::iter::repeat_n(300u64, 400));
        vals.extend(std::iter::repeat_n(3000u64, 200));
        let c = corpus_with_values(&vals);
        let s = magnitude_audit_sample(&c, 100, 11).unwrap();
        assert_eq!(
            bucket_counts(&s),
            BTreeMap::from([(0, 10), (1, 30), (2, 40), (3, 20)])
        );
    }

    #[test]
    fn full_size_sample_is_identity_set() {
        let c = corpus_with_values(&[1, 20, 300, 4000, 50000]);
        let s = magnitude_audit_sample(&c, 5, 0).unwrap();
        assert_eq!(s.sentences, c.sentences);
        assert!(magnitude_audit_sample(&c, 0, 0).is_err());
        assert!(magnitude_audit_sample(&c, 6, 0).is_err());
    }
}
