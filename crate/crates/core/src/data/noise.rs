use rand::seq::index::sample;
use rand::Rng;

use super::corpus::{Dataset, GroupMap};
use crate::error::{invalid, Result};
use crate::seed::rng_for;

/// Flips exactly `round(rate * eligible)` labels, each to a uniformly chosen
/// different label of the same group. An example is eligible when its
/// label's group has at least two members. Flipped examples keep their
/// previous label in `original_label`.
pub fn inject_label_noise(dataset: &Dataset, groups: &GroupMap, rate: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(invalid(format!("noise rate {rate} outside [0, 1]")));
    }
    if rate == 0.0 {
        return Ok(dataset.clone());
    }
    let class_groups = groups.class_groups(&dataset.label_names)?;
    let group_of = groups.group_of_classes(&dataset.label_names)?;
    let members: Vec<&Vec<usize>> = class_groups.values().collect();
    if members.iter().all(|m| m.len() < 2) {
        return Err(invalid("label noise needs a group with at least two labels"));
    }
    let eligible: Vec<usize> = dataset
        .examples
        .iter()
        .enumerate()
        .filter(|(_, e)| members[group_of[e.label]].len() >= 2)
        .map(|(i, _)| i)
        .collect();
    let count = (rate * eligible.len() as f64).round() as usize;

    let mut rng = rng_for(seed, "noise", 0);
    let mut chosen: Vec<usize> = sample(&mut rng, eligible.len(), count).into_iter().map(|j| eligible[j]).collect();
    chosen.sort_unstable();

    let mut out = dataset.clone();
    for i in chosen {
        let ex = &mut out.examples[i];
        let group = members[group_of[ex.label]];
        let others: Vec<usize> = group.iter().copied().filter(|&k| k != ex.label).collect();
        let new = others[rng.gen_range(0..others.len())];
        ex.original_label.get_or_insert(ex.label);
        ex.label = new;
    }
    out.provenance = format!("{}; label noise rate {rate} seed {seed} ({count} flips)", dataset.provenance);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::corpus::{Example, InputKind};
    use std::collections::BTreeMap;

    fn dataset(labels: &[usize], c: usize) -> Dataset {
        Dataset {
            examples: labels.iter().map(|&l| Example::tokens(vec![2], l)).collect(),
            label_names: (0..c).map(|k| format!("l{k}")).collect(),
            kind: InputKind::Tokens { vocab_size: 3 },
            provenance: "test".into(),
        }
    }

    fn groups(pairs: &[(&str, &str)]) -> GroupMap {
        GroupMap(pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect::<BTreeMap<_, _>>())
    }

    #[test]
    fn rate_zero_is_identity() {
        let ds = dataset(&[0, 1, 2, 1], 3);
        let g = groups(&[("l0", "a"), ("l1", "a"), ("l2", "b")]);
        assert_eq!(inject_label_noise(&ds, &g, 0.0, 1).unwrap(), ds);
    }

    #[test]
    fn exact_count_within_group() {
        // 1000 eligible (labels 0..3 in groups of 3) plus 200 singleton-group examples
        let labels: Vec<usize> = (0..1000).map(|i| i % 3).chain(std::iter::repeat(3).take(200)).collect();
        let ds = dataset(&labels, 4);
        let g = groups(&[("l0", "a"), ("l1", "a"), ("l2", "a"), ("l3", "solo")]);
        let noisy = inject_label_noise(&ds, &g, 0.3, 9).unwrap();
        let flipped: Vec<_> = noisy.examples.iter().filter(|e| e.original_label.is_some()).collect();
        assert_eq!(flipped.len(), 300);
        for e in &flipped {
            let orig = e.original_label.unwrap();
            assert_ne!(orig, e.label);
            assert!(orig < 3 && e.label < 3);
        }
        assert!(noisy.examples[1000..].iter().all(|e| e.label == 3 && e.original_label.is_none()));
        assert_eq!(noisy, inject_label_noise(&ds, &g, 0.3, 9).unwrap());
    }

    #[test]
    fn needs_a_multi_member_group() {
        let ds = dataset(&[0, 1], 2);
        let g = groups(&[("l0", "a"), ("l1", "b")]);
        assert!(inject_label_noise(&ds, &g, 0.1, 0).is_err());
        assert!(inject_label_noise(&ds, &g, 1.5, 0).is_err());
    }
}
