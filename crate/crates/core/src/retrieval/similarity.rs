//! Set-overlap F1 and the state-change similarity built on it.

use std::collections::BTreeSet;

use crate::model::{SlotKey, SlotValue, StateChange};

/// Set-overlap F1 (Dice coefficient): `2|a∩b| / (|a|+|b|)`.
/// Two empty sets are identical and score 1.0.
pub fn set_f1<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let common = a.intersection(b).count();
    (2 * common) as f64 / (a.len() + b.len()) as f64
}

/// Mean of the slot-name F1 and the slot-value-pair F1 between two state
/// changes. Slot names compare as `(domain, slot)`.
pub fn state_change_similarity(a: &StateChange, b: &StateChange) -> f64 {
    let slots = |c: &StateChange| c.keys().cloned().collect::<BTreeSet<SlotKey>>();
    let pairs = |c: &StateChange| {
        c.iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect::<BTreeSet<(SlotKey, SlotValue)>>()
    };
    let f_slot = set_f1(&slots(a), &slots(b));
    let f_pair = set_f1(&pairs(a), &pairs(b));
    0.5 * (f_slot + f_pair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn set_f1_values() {
        assert_eq!(set_f1(&set(&["x"]), &set(&["x"])), 1.0);
        assert_eq!(set_f1(&set(&["x"]), &set(&["y"])), 0.0);
        assert_eq!(set_f1(&set(&["x", "y"]), &set(&["x"])), 2.0 / 3.0);
        assert_eq!(set_f1(&set(&[]), &set(&[])), 1.0);
        assert_eq!(set_f1(&set(&[]), &set(&["x"])), 0.0);
    }

    #[test]
    fn similarity_worked_examples() {
        let south = StateChange::from_values([(("attraction", "area"), "south")]);
        let centre = StateChange::from_values([(("attraction", "area"), "centre")]);
        assert_eq!(state_change_similarity(&south, &south), 1.0);
        assert_eq!(state_change_similarity(&south, &centre), 0.5);
        let two = StateChange::from_values([(("hotel", "area"), "south"), (("hotel", "stars"), "4")]);
        let one = StateChange::from_values([(("hotel", "area"), "south")]);
        assert_eq!(state_change_similarity(&two, &one), 2.0 / 3.0);
        assert_eq!(state_change_similarity(&StateChange::new(), &one), 0.0);
    }

    fn arb_change() -> impl Strategy<Value = StateChange> {
        proptest::collection::btree_map(
            (0usize..3, 0usize..3),
            prop_oneof![Just(None), (0u8..3).prop_map(Some)],
            0..5,
        )
        .prop_map(|m| {
            m.into_iter()
                .map(|((d, s), v)| {
                    let key = SlotKey::new(["hotel", "train", "taxi"][d], ["area", "day", "name"][s]);
                    let value = v.map_or(SlotValue::Delete, |v| SlotValue::Value(format!("v{v}")));
                    (key, value)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn similarity_properties(a in arb_change(), b in arb_change()) {
            let s = state_change_similarity(&a, &b);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s, state_change_similarity(&b, &a));
            prop_assert_eq!(state_change_similarity(&a, &a), 1.0);
            let slots_a: BTreeSet<_> = a.keys().collect();
            let slots_b: BTreeSet<_> = b.keys().collect();
            if !a.is_empty() && !b.is_empty() && slots_a.is_disjoint(&slots_b) {
                prop_assert_eq!(s, 0.0);
            }
            // value agreement implies slot agreement
            let fs = set_f1(&slots_a, &slots_b);
            let pa: BTreeSet<_> = a.iter().collect();
            let pb: BTreeSet<_> = b.iter().collect();
            prop_assert!(fs >= set_f1(&pa, &pb));
        }
    }
}
