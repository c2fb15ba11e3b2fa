use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;

/// Display names of groups 1, 2 and 3.
pub const GROUP_NAMES: [&str; 3] = ["many", "medium", "few"];

/// Shot thresholds: many if `count >= many_min`, few if `count <= few_max`,
/// medium otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub many_min: usize,
    pub few_max: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            many_min: 101,
            few_max: 19,
        }
    }
}

impl Thresholds {
    /// Zero-based group index for a class with `count` training samples.
    pub fn group_of(&self, count: usize) -> usize {
        if count >= self.many_min {
            0
        } else if count <= self.few_max {
            2
        } else {
            1
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Many/medium/few by training count.
    ShotThresholds(Thresholds),
    /// Seeded uniform assignment into three near-equal groups.
    RandomEven,
    /// Classes sorted by descending count, cut into three near-equal chunks.
    CardinalityEven,
}

impl Strategy {
    /// Parses the numeric CLI form `1`, `2` or `3`.
    pub fn from_number(n: u8, thresholds: Thresholds) -> Option<Self> {
        match n {
            1 => Some(Self::ShotThresholds(thresholds)),
            2 => Some(Self::RandomEven),
            3 => Some(Self::CardinalityEven),
            _ => None,
        }
    }

    pub fn number(&self) -> u8 {
        match self {
            Self::ShotThresholds(_) => 1,
            Self::RandomEven => 2,
            Self::CardinalityEven => 3,
        }
    }
}

/// Mutually exclusive class-to-group mapping. Groups are stored 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupPartition {
    pub group_of_class: Vec<u8>,
    pub strategy: Strategy,
    pub seed: Option<u64>,
}

impl GroupPartition {
    pub fn from_groups(group_of_class: Vec<u8>, strategy: Strategy, seed: Option<u64>) -> Result<Self, DataError> {
        let p = Self {
            group_of_class,
            strategy,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks that every class maps to a group in 1..=3 and that no group is
    /// empty.
    pub fn validate(&self) -> Result<(), DataError> {
        if let Some(c) = self.group_of_class.iter().position(|&g| !(1..=3).contains(&g)) {
            return Err(DataError::Partition(format!(
                "class {c} has group {} outside 1..=3",
                self.group_of_class[c]
            )));
        }
        let sizes = self.group_sizes();
        if let Some(g) = sizes.iter().position(|&s| s == 0) {
            return Err(DataError::Partition(format!("group {} ({}) is empty", g + 1, GROUP_NAMES[g])));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.group_of_class.len()
    }

    /// Zero-based group index of `class`.
    #[inline]
    pub fn group(&self, class: usize) -> usize {
        usize::from(self.group_of_class[class]) - 1
    }

    /// Classes in zero-based group `g`, ascending.
    pub fn members(&self, g: usize) -> Vec<usize> {
        (0..self.num_classes()).filter(|&c| self.group(c) == g).collect()
    }

    pub fn group_sizes(&self) -> [usize; 3] {
        let mut sizes = [0; 3];
        for &g in &self.group_of_class {
            if (1..=3).contains(&g) {
                sizes[usize::from(g) - 1] += 1;
            }
        }
        sizes
    }

    /// Zero-based group index for every class.
    pub fn group_indices(&self) -> Vec<usize> {
        (0..self.num_classes()).map(|c| self.group(c)).collect()
    }
}

/// Group sizes `ceil(m/3)`, `ceil((m-1)/3)` and the remainder.
pub fn group_sizes_even(m: usize) -> [usize; 3] {
    let a = m.div_ceil(3);
    let b = m.saturating_sub(1).div_ceil(3);
    [a, b, m - a - b]
}

pub fn partition_groups(class_counts: &[usize], strategy: Strategy, seed: u64) -> Result<GroupPartition, DataError> {
    let m = class_counts.len();
    if m < 3 {
        return Err(DataError::Partition(format!("need at least 3 classes, got {m}")));
    }
    let mut groups = vec![0u8; m];
    let mut seed_used = None;
    match strategy {
        Strategy::ShotThresholds(t) => {
            if t.few_max >= t.many_min {
                return Err(DataError::Partition(format!(
                    "few_max {} must be below many_min {}",
                    t.few_max, t.many_min
                )));
            }
            for (c, &n) in class_counts.iter().enumerate() {
                groups[c] = t.group_of(n) as u8 + 1;
            }
            let p = GroupPartition {
                group_of_class: groups,
                strategy,
                seed: None,
            };
            let sizes = p.group_sizes();
            if let Some(g) = sizes.iter().position(|&s| s == 0) {
                return Err(DataError::Partition(format!(
                    "{} group is empty under thresholds many >= {}, few <= {}; override the thresholds or use strategy 3",
                    GROUP_NAMES[g], t.many_min, t.few_max
                )));
            }
            return Ok(p);
        }
        Strategy::RandomEven => {
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            assign_chunks(&order, &mut groups);
            seed_used = Some(seed);
        }
        Strategy::CardinalityEven => {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| class_counts[b].cmp(&class_counts[a]).then(a.cmp(&b)));
            assign_chunks(&order, &mut groups);
        }
    }
    GroupPartition::from_groups(groups, strategy, seed_used)
}

fn assign_chunks(order: &[usize], groups: &mut [u8]) {
    let sizes = group_sizes_even(order.len());
    let mut start = 0;
    for (g, &size) in sizes.iter().enumerate() {
        for &c in &order[start..start + size] {
            groups[c] = g as u8 + 1;
        }
        start += size;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Strategy;
    use proptest::prelude::*;

    fn default_shots() -> Strategy {
        Strategy::ShotThresholds(Thresholds::default())
    }

    #[test]
    fn shot_thresholds_example() {
        let p = partition_groups(&[150, 150, 50, 50, 5], default_shots(), 0).unwrap();
        assert_eq!(p.members(0), vec![0, 1]);
        assert_eq!(p.members(1), vec![2, 3]);
        assert_eq!(p.members(2), vec![4]);
    }

    #[test]
    fn boundary_counts() {
        let t = Thresholds::default();
        assert_eq!(t.group_of(101), 0);
        assert_eq!(t.group_of(100), 1);
        assert_eq!(t.group_of(20), 1);
        assert_eq!(t.group_of(19), 2);
        let err = partition_groups(&[100, 20, 19], default_shots(), 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("many") && msg.contains("strategy 3"), "{msg}");
    }

    #[test]
    fn cardinality_even_example() {
        let p = partition_groups(&[9, 8, 7, 6, 5, 4], Strategy::CardinalityEven, 0).unwrap();
        assert_eq!(p.members(0), vec![0, 1]);
        assert_eq!(p.members(1), vec![2, 3]);
        assert_eq!(p.members(2), vec![4, 5]);
    }

    #[test]
    fn cardinality_ties_prefer_lower_index() {
        let p = partition_groups(&[5, 9, 5, 5], Strategy::CardinalityEven, 0).unwrap();
        // sorted: 1, 0, 2, 3 -> sizes 2, 1, 1
        assert_eq!(p.members(0), vec![0, 1]);
        assert_eq!(p.members(1), vec![2]);
        assert_eq!(p.members(2), vec![3]);
    }

    #[test]
    fn even_sizes() {
        assert_eq!(group_sizes_even(30), [10, 10, 10]);
        assert_eq!(group_sizes_even(4), [2, 1, 1]);
        assert_eq!(group_sizes_even(5), [2, 2, 1]);
        assert_eq!(group_sizes_even(7), [3, 2, 2]);
        assert_eq!(group_sizes_even(3), [1, 1, 1]);
    }

    #[test]
    fn random_even_is_seeded() {
        let counts = vec![10; 12];
        let a = partition_groups(&counts, Strategy::RandomEven, 3).unwrap();
        let b = partition_groups(&counts, Strategy::RandomEven, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.group_sizes(), [4, 4, 4]);
        assert_eq!(a.seed, Some(3));
    }

    #[test]
    fn invalid_partition_rejected() {
        assert!(GroupPartition::from_groups(vec![1, 1, 2], Strategy::RandomEven, None).is_err());
        assert!(GroupPartition::from_groups(vec![1, 4, 2, 3], Strategy::RandomEven, None).is_err());
    }

    proptest! {
        #[test]
        fn every_strategy_is_a_partition(counts in prop::collection::vec(1usize..400, 3..60), seed in any::<u64>()) {
            for strategy in [Strategy::RandomEven, Strategy::CardinalityEven] {
                let p = partition_groups(&counts, strategy, seed).unwrap();
                prop_assert_eq!(p.group_sizes(), group_sizes_even(counts.len()));
                prop_assert_eq!(p.group_sizes().iter().sum::<usize>(), counts.len());
            }
            if let Ok(p) = partition_groups(&counts, default_shots(), seed) {
                prop_assert!(p.group_sizes().iter().all(|&s| s > 0));
                for (c, &n) in counts.iter().enumerate() {
                    prop_assert_eq!(p.group(c), Thresholds::default().group_of(n));
                }
            }
        }

        #[test]
        fn shot_assignment_ignores_class_order(counts in prop::collection::vec(1usize..400, 3..40), rot in 0usize..40) {
            let t = Thresholds { many_min: 150, few_max: 50 };
            let r = rot % counts.len();
            let mut rotated = counts.clone();
            rotated.rotate_left(r);
            let a: Vec<usize> = counts.iter().map(|&n| t.group_of(n)).collect();
            let mut b: Vec<usize> = rotated.iter().map(|&n| t.group_of(n)).collect();
            b.rotate_right(r);
            prop_assert_eq!(a, b);
        }
    }
}
