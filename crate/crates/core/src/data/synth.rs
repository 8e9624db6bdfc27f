//! Synthetic corpora with a controllable confusion degree.
//!
//! Each class owns a disjoint block of the generator vocabulary with Zipfian
//! word weights. A confusable pair `(a, b)` with overlap `w` moves both
//! members toward the pair centroid:
//! `p_a = (1 - w/2) own_a + (w/2) own_b` and symmetrically for `b`, so
//! `w = 0` leaves the classes disjoint and `w = 1` makes them identical.
//! Optionally every class also draws a fixed share of tokens from a common
//! background block.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};

use super::corpus::{Dataset, Example, GroupMap, InputKind};
use super::vocab::Vocab;
use crate::error::{invalid, Result};
use crate::seed::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusablePair {
    pub a: usize,
    pub b: usize,
    pub overlap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusionSpec {
    pub num_classes: usize,
    #[serde(default)]
    pub pairs: Vec<ConfusablePair>,
    pub samples_per_class: usize,
    pub doc_length: usize,
    pub seed: u64,
    #[serde(default = "default_words_per_class")]
    pub words_per_class: usize,
    #[serde(default = "default_zipf")]
    pub zipf_exponent: f64,
    #[serde(default)]
    pub background_words: usize,
    #[serde(default)]
    pub background_mass: f64,
}

fn default_words_per_class() -> usize {
    200
}

fn default_zipf() -> f64 {
    1.0
}

impl ConfusionSpec {
    /// `num_classes` classes paired as (0,1), (2,3), ... all at `overlap`.
    pub fn paired(num_classes: usize, overlap: f64, samples_per_class: usize, doc_length: usize, seed: u64) -> Self {
        let pairs = (0..num_classes / 2)
            .map(|p| ConfusablePair { a: 2 * p, b: 2 * p + 1, overlap })
            .collect();
        Self {
            num_classes,
            pairs,
            samples_per_class,
            doc_length,
            seed,
            words_per_class: default_words_per_class(),
            zipf_exponent: default_zipf(),
            background_words: 0,
            background_mass: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(invalid("confusion spec needs at least 2 classes"));
        }
        if self.samples_per_class == 0 {
            return Err(invalid("samples_per_class must be at least 1"));
        }
        if self.doc_length == 0 || self.words_per_class == 0 {
            return Err(invalid("doc_length and words_per_class must be positive"));
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return Err(invalid("zipf_exponent must be finite and nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.background_mass) {
            return Err(invalid(format!("background_mass {} outside [0, 1]", self.background_mass)));
        }
        if self.background_mass > 0.0 && self.background_words == 0 {
            return Err(invalid("background_mass > 0 needs background_words > 0"));
        }
        let mut seen = vec![false; self.num_classes];
        for p in &self.pairs {
            if !(0.0..=1.0).contains(&p.overlap) {
                return Err(invalid(format!("overlap {} outside [0, 1]", p.overlap)));
            }
            if p.a == p.b || p.a >= self.num_classes || p.b >= self.num_classes {
                return Err(invalid(format!("invalid pair ({}, {})", p.a, p.b)));
            }
            for k in [p.a, p.b] {
                if std::mem::replace(&mut seen[k], true) {
                    return Err(invalid(format!("class {k} appears in more than one pair")));
                }
            }
        }
        Ok(())
    }

    pub fn num_words(&self) -> usize {
        self.num_classes * self.words_per_class + self.background_words
    }

    pub fn label_names(&self) -> Vec<String> {
        let width = (self.num_classes - 1).max(1).to_string().len();
        (0..self.num_classes).map(|k| format!("class{k:0width$}")).collect()
    }

    /// Generator vocabulary: word `j` has token id `j + 2`.
    pub fn vocab(&self) -> Vocab {
        let width = self.num_words().saturating_sub(1).max(1).to_string().len();
        Vocab::from_tokens((0..self.num_words()).map(|j| format!("w{j:0width$}")), 1)
    }

    /// Each pair forms a group; unpaired classes are singleton groups.
    pub fn group_map(&self) -> GroupMap {
        let names = self.label_names();
        let mut map = BTreeMap::new();
        for (gi, p) in self.pairs.iter().enumerate() {
            map.insert(names[p.a].clone(), format!("group{gi}"));
            map.insert(names[p.b].clone(), format!("group{gi}"));
        }
        for (k, n) in names.iter().enumerate() {
            map.entry(n.clone()).or_insert_with(|| format!("solo{k}"));
        }
        GroupMap(map)
    }

    fn block(&self, start: usize, len: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.num_words()];
        let weights: Vec<f64> = (0..len).map(|r| (r as f64 + 1.0).powf(-self.zipf_exponent)).collect();
        let z: f64 = weights.iter().sum();
        for (r, w) in weights.into_iter().enumerate() {
            p[start + r] = w / z;
        }
        p
    }

    /// Effective word distribution of every class, over generator words.
    pub fn class_distributions(&self) -> Vec<Vec<f64>> {
        let own: Vec<Vec<f64>> = (0..self.num_classes)
            .map(|k| self.block(k * self.words_per_class, self.words_per_class))
            .collect();
        let mut eff = own.clone();
        for p in &self.pairs {
            let h = p.overlap / 2.0;
            for (x, y) in [(p.a, p.b), (p.b, p.a)] {
                eff[x] = own[x].iter().zip(&own[y]).map(|(o, q)| (1.0 - h) * o + h * q).collect();
            }
        }
        if self.background_mass > 0.0 {
            let bg = self.block(self.num_classes * self.words_per_class, self.background_words);
            for dist in &mut eff {
                for (d, b) in dist.iter_mut().zip(&bg) {
                    *d = (1.0 - self.background_mass) * *d + self.background_mass * b;
                }
            }
        }
        eff
    }
}

/// Balanced corpus of `samples_per_class` documents per class, each
/// `doc_length` words drawn i.i.d. from the class's effective distribution.
/// Examples are interleaved by class; the seed fixes the output.
pub fn generate_confused_corpus(spec: &ConfusionSpec) -> Result<Dataset> {
    spec.validate()?;
    let samplers: Vec<WeightedIndex<f64>> = spec
        .class_distributions()
        .iter()
        .map(|d| WeightedIndex::new(d).map_err(|e| invalid(e.to_string())))
        .collect::<Result<_>>()?;
    let mut rng = rng_for(spec.seed, "corpus", 0);
    let mut examples = Vec::with_capacity(spec.samples_per_class * spec.num_classes);
    for _ in 0..spec.samples_per_class {
        for (k, sampler) in samplers.iter().enumerate() {
            let ids = (0..spec.doc_length).map(|_| sampler.sample(&mut rng) as u32 + 2).collect();
            examples.push(Example::tokens(ids, k));
        }
    }
    Ok(Dataset {
        examples,
        label_names: spec.label_names(),
        kind: InputKind::Tokens { vocab_size: spec.num_words() + 2 },
        provenance: format!("synthetic confused corpus (seed {})", spec.seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let spec = ConfusionSpec::paired(4, 0.9, 25, 12, 5);
        let a = generate_confused_corpus(&spec).unwrap();
        assert_eq!(a.label_counts(), vec![25; 4]);
        assert_eq!(a, generate_confused_corpus(&spec).unwrap());
        let mut other = spec.clone();
        other.seed = 6;
        assert_ne!(a, generate_confused_corpus(&other).unwrap());
    }

    #[test]
    fn distributions_normalized() {
        let mut spec = ConfusionSpec::paired(5, 0.3, 1, 1, 0);
        spec.background_words = 50;
        spec.background_mass = 0.2;
        for d in spec.class_distributions() {
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn full_overlap_identical() {
        let spec = ConfusionSpec::paired(4, 1.0, 1, 1, 0);
        let d = spec.class_distributions();
        assert_eq!(d[0], d[1]);
        assert_ne!(d[0], d[2]);
    }

    #[test]
    fn validation() {
        let mut spec = ConfusionSpec::paired(4, 1.5, 10, 10, 0);
        assert!(generate_confused_corpus(&spec).is_err());
        spec.pairs[0].overlap = 0.5;
        spec.samples_per_class = 0;
        assert!(generate_confused_corpus(&spec).is_err());
        let mut dup = ConfusionSpec::paired(4, 0.5, 10, 10, 0);
        dup.pairs[1] = ConfusablePair { a: 1, b: 3, overlap: 0.5 };
        assert!(dup.validate().is_err());
    }

    #[test]
    fn groups_cover_labels() {
        let spec = ConfusionSpec::paired(5, 0.5, 1, 1, 0);
        let groups = spec.group_map().class_groups(&spec.label_names()).unwrap();
        assert_eq!(groups.len(), 3);
        assert_eq!(groups["group1"], vec![2, 3]);
    }
}
