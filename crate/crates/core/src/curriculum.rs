//! Corpus-level MVS distribution and the threshold curriculum.
//!
//! Clips are ranked by the empirical CDF of their MVS over the corpus; the
//! subset at threshold `alpha` keeps the clips with `F(mvs) >= alpha`, so a
//! large `alpha` keeps only the strongest geometry and lowering it admits
//! harder clips.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::mvs::MvsRecord;

/// Default floor quantile applied before scheduling.
pub const DEFAULT_FLOOR_QUANTILE: f64 = 0.05;

/// Default alphas, spread over equal step intervals.
pub const DEFAULT_ALPHAS: [f64; 5] = [0.9, 0.7, 0.5, 0.3, 0.1];

/// Clip MVS values sorted ascending, with the empirical CDF over them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    sorted_mvs: Vec<(String, f64)>,
}

impl CorpusStats {
    pub fn sorted_mvs(&self) -> &[(String, f64)] {
        &self.sorted_mvs
    }

    pub fn len(&self) -> usize {
        self.sorted_mvs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted_mvs.is_empty()
    }

    /// `F(x)`: share of clips with MVS `<= x`.
    pub fn ecdf(&self, x: f64) -> f64 {
        let count = self.sorted_mvs.partition_point(|(_, v)| *v <= x);
        count as f64 / self.sorted_mvs.len() as f64
    }
}

fn check_mvs(records: &[MvsRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(contract("the corpus is empty"));
    }
    if let Some(r) = records.iter().find(|r| !r.mvs.is_finite()) {
        return Err(contract(format!("clip '{}' has a non-finite MVS", r.clip_id)));
    }
    Ok(())
}

pub fn build_stats(records: &[MvsRecord]) -> Result<CorpusStats> {
    check_mvs(records)?;
    let mut sorted_mvs: Vec<(String, f64)> = records.iter().map(|r| (r.clip_id.clone(), r.mvs)).collect();
    sorted_mvs.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    Ok(CorpusStats { sorted_mvs })
}

/// Drops clips whose MVS falls below the `floor_quantile` of the corpus,
/// i.e. with `F(mvs) < floor_quantile`. Input order is kept.
pub fn filter_floor(records: &[MvsRecord], floor_quantile: f64) -> Result<Vec<MvsRecord>> {
    if !(0.0..1.0).contains(&floor_quantile) {
        return Err(contract(format!("floor quantile must be in [0, 1), got {floor_quantile}")));
    }
    let stats = build_stats(records)?;
    let kept: Vec<MvsRecord> = records.iter().filter(|r| stats.ecdf(r.mvs) >= floor_quantile).cloned().collect();
    if kept.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }
    Ok(kept)
}

/// `S_alpha`: the clips with `F(mvs) >= alpha`.
pub fn select_subset(stats: &CorpusStats, alpha: f64) -> Result<BTreeSet<String>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(contract(format!("alpha must be in [0, 1], got {alpha}")));
    }
    // F is non-decreasing along the sorted list, so the subset is a suffix.
    let start = stats.sorted_mvs.partition_point(|(_, v)| stats.ecdf(*v) < alpha);
    Ok(stats.sorted_mvs[start..].iter().map(|(id, _)| id.clone()).collect())
}

/// Piecewise-constant alpha over training steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(u64, f64)>", into = "Vec<(u64, f64)>")]
pub struct CurriculumSchedule {
    stages: Vec<(u64, f64)>,
}

impl CurriculumSchedule {
    /// Stages as `(first step, alpha)`; steps strictly increasing, alphas in
    /// `[0, 1]` and non-increasing.
    pub fn new(stages: Vec<(u64, f64)>) -> Result<Self> {
        if stages.is_empty() {
            return Err(contract("a schedule needs at least one stage"));
        }
        for (_, a) in &stages {
            if !(0.0..=1.0).contains(a) {
                return Err(contract(format!("alpha must be in [0, 1], got {a}")));
            }
        }
        for w in stages.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(contract("stage steps must be strictly increasing"));
            }
            if w[1].1 > w[0].1 {
                return Err(contract("stage alphas must be non-increasing"));
            }
        }
        Ok(Self { stages })
    }

    /// The default alphas at equal intervals over `total_steps`.
    pub fn uniform(total_steps: u64) -> Result<Self> {
        let k = DEFAULT_ALPHAS.len() as u64;
        if total_steps < k {
            return Err(contract(format!("total_steps must be at least {k}, got {total_steps}")));
        }
        Self::new(DEFAULT_ALPHAS.iter().enumerate().map(|(i, &a)| (i as u64 * total_steps / k, a)).collect())
    }

    pub fn stages(&self) -> &[(u64, f64)] {
        &self.stages
    }

    /// Alpha in force at `step`: the first stage's alpha before its start,
    /// the last stage's alpha forever after.
    pub fn alpha_at(&self, step: u64) -> f64 {
        let i = self.stages.partition_point(|(s, _)| *s <= step);
        self.stages[i.saturating_sub(1)].1
    }
}

impl TryFrom<Vec<(u64, f64)>> for CurriculumSchedule {
    type Error = Error;

    fn try_from(stages: Vec<(u64, f64)>) -> Result<Self> {
        Self::new(stages)
    }
}

impl From<CurriculumSchedule> for Vec<(u64, f64)> {
    fn from(s: CurriculumSchedule) -> Self {
        s.stages
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn records(values: &[f64]) -> Vec<MvsRecord> {
        values
            .iter()
            .enumerate()
            .map(|(i, &mvs)| MvsRecord { clip_id: format!("c{i:05}"), per_pair_scores: vec![mvs], mvs, pair_count: 1, degenerate_pairs: 0 })
            .collect()
    }

    fn ids(recs: &[MvsRecord], keep: impl Fn(f64) -> bool) -> BTreeSet<String> {
        recs.iter().filter(|r| keep(r.mvs)).map(|r| r.clip_id.clone()).collect()
    }

    fn brute_ecdf(values: &[f64], x: f64) -> f64 {
        values.iter().filter(|&&v| v <= x).count() as f64 / values.len() as f64
    }

    #[test]
    fn ecdf_examples() {
        let s = build_stats(&records(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(s.ecdf(2.0), 0.5);
        assert_eq!(s.ecdf(4.0), 1.0);
        assert_eq!(s.ecdf(0.5), 0.0);
        assert_eq!(s.ecdf(2.5), 0.5);
        let one = build_stats(&records(&[7.0])).unwrap();
        assert_eq!(one.ecdf(7.0), 1.0);
        let ties = build_stats(&records(&[1.0, 2.0, 2.0, 3.0])).unwrap();
        assert_eq!(ties.ecdf(2.0), 0.75);
        assert!(matches!(build_stats(&[]), Err(Error::Contract(_))));
        assert!(build_stats(&records(&[1.0, f64::NAN])).is_err());
    }

    #[test]
    fn floor_examples() {
        let r = records(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(filter_floor(&r, 0.0).unwrap(), r);
        let kept: Vec<f64> = filter_floor(&r, 0.5).unwrap().iter().map(|r| r.mvs).collect();
        assert_eq!(kept, vec![2.0, 3.0, 4.0]);
        let kept: Vec<f64> = filter_floor(&r, 0.99).unwrap().iter().map(|r| r.mvs).collect();
        assert_eq!(kept, vec![4.0]);
        assert!(filter_floor(&r, 1.0).is_err());
        assert!(filter_floor(&r, -0.1).is_err());
    }

    #[test]
    fn subset_examples() {
        let r = records(&[1.0, 2.0, 3.0, 4.0]);
        let s = build_stats(&r).unwrap();
        assert_eq!(select_subset(&s, 0.0).unwrap().len(), 4);
        assert_eq!(select_subset(&s, 0.6).unwrap(), ids(&r, |v| v >= 3.0));
        assert_eq!(select_subset(&s, 1.0).unwrap(), ids(&r, |v| v == 4.0));
        let tied = records(&[1.0, 4.0, 2.0, 4.0]);
        let s = build_stats(&tied).unwrap();
        assert_eq!(select_subset(&s, 1.0).unwrap(), ids(&tied, |v| v == 4.0));
        assert!(select_subset(&s, 1.5).is_err());
    }

    #[test]
    fn schedule_lookup() {
        let s = CurriculumSchedule::new(vec![(0, 0.9), (100, 0.5), (200, 0.1)]).unwrap();
        assert_eq!(s.alpha_at(150), 0.5);
        assert_eq!(s.alpha_at(0), 0.9);
        assert_eq!(s.alpha_at(100), 0.5);
        assert_eq!(s.alpha_at(1_000_000), 0.1);
        let late = CurriculumSchedule::new(vec![(10, 0.8), (20, 0.2)]).unwrap();
        assert_eq!(late.alpha_at(3), 0.8);
        let u = CurriculumSchedule::uniform(1000).unwrap();
        assert_eq!(u.stages(), &[(0, 0.9), (200, 0.7), (400, 0.5), (600, 0.3), (800, 0.1)]);
    }

    #[test]
    fn schedule_validation() {
        assert!(CurriculumSchedule::new(vec![]).is_err());
        assert!(CurriculumSchedule::new(vec![(0, 0.5), (0, 0.4)]).is_err());
        assert!(CurriculumSchedule::new(vec![(0, 0.5), (10, 0.6)]).is_err());
        assert!(CurriculumSchedule::new(vec![(0, 1.5)]).is_err());
        assert!(serde_json::from_str::<CurriculumSchedule>("[[0, 0.9], [5, 0.95]]").is_err());
        let s: CurriculumSchedule = serde_json::from_str("[[0, 0.9], [5, 0.5]]").unwrap();
        assert_eq!(serde_json::to_string(&s).unwrap(), "[[0,0.9],[5,0.5]]");
    }

    fn corpus() -> impl Strategy<Value = Vec<f64>> {
        prop_oneof![
            prop::collection::vec(0.0f64..100.0, 1..300),
            // Few distinct values, many ties.
            prop::collection::vec((0u8..6).prop_map(f64::from), 1..300),
        ]
    }

    proptest! {
        #[test]
        fn ecdf_matches_counting(values in corpus(), probes in prop::collection::vec(-1.0f64..101.0, 20)) {
            let s = build_stats(&records(&values)).unwrap();
            for x in probes.iter().copied().chain(values.iter().copied()) {
                prop_assert_eq!(s.ecdf(x), brute_ecdf(&values, x));
            }
        }

        #[test]
        fn subset_and_floor_match_brute_force(values in corpus(), alpha in 0.0f64..=1.0, floor in 0.0f64..1.0) {
            let r = records(&values);
            let s = build_stats(&r).unwrap();
            prop_assert_eq!(select_subset(&s, alpha).unwrap(), ids(&r, |v| brute_ecdf(&values, v) >= alpha));
            let kept: BTreeSet<String> = filter_floor(&r, floor).unwrap().into_iter().map(|r| r.clip_id).collect();
            prop_assert_eq!(kept, ids(&r, |v| brute_ecdf(&values, v) >= floor));
        }

        #[test]
        fn subsets_nest(values in corpus(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let s = build_stats(&records(&values)).unwrap();
            let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
            prop_assert!(select_subset(&s, hi).unwrap().is_subset(&select_subset(&s, lo).unwrap()));
        }

        #[test]
        fn subset_size_bound(values in prop::collection::vec(0.0f64..100.0, 1..300), alpha in 0.0f64..=1.0) {
            let s = build_stats(&records(&values)).unwrap();
            let n = values.len() as f64;
            let size = select_subset(&s, alpha).unwrap().len() as f64;
            prop_assert!(size >= ((1.0 - alpha) * n).ceil() - 1.0);
        }

        #[test]
        fn floor_then_select_equals_select_at_max(values in prop::collection::btree_set(0u32..100_000, 1..300), alpha in 0.0f64..=1.0, floor in 0.0f64..1.0) {
            let values: Vec<f64> = values.into_iter().map(|v| v as f64 / 7.0).collect();
            let r = records(&values);
            let stats = build_stats(&r).unwrap();
            let floored: BTreeSet<String> = filter_floor(&r, floor).unwrap().into_iter().map(|r| r.clip_id).collect();
            let after: BTreeSet<String> = select_subset(&stats, alpha).unwrap().intersection(&floored).cloned().collect();
            prop_assert_eq!(after, select_subset(&stats, alpha.max(floor)).unwrap());
        }

        #[test]
        fn order_does_not_matter(values in corpus(), alpha in 0.0f64..=1.0, seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let r = records(&values);
            let mut shuffled = r.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = build_stats(&r).unwrap();
            let b = build_stats(&shuffled).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(select_subset(&a, alpha).unwrap(), select_subset(&b, alpha).unwrap());
        }
    }
}
