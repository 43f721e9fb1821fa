use serde::{Deserialize, Serialize};

use crate::datagen::generate::{question_universe, Dataset};
use crate::datagen::templates::{template_bank, TemplateCategory};
use crate::geo::Catalog;

/// Universe-size buckets used by dataset statistics and evaluation slices.
pub const SIZE_BUCKETS: [(usize, usize, &str); 5] = [
    (0, 200, "0-200"),
    (200, 500, "200-500"),
    (500, 1000, "500-1000"),
    (1000, 5000, "1000-5000"),
    (5000, 20_000, "5000-20000"),
];

pub fn size_bucket(n: usize) -> &'static str {
    SIZE_BUCKETS
        .iter()
        .find(|(lo, hi, _)| n >= *lo && n < *hi)
        .map(|b| b.2)
        .unwrap_or(SIZE_BUCKETS[4].2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Count {
    pub key: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: String,
    pub questions: usize,
    pub by_category: Vec<Count>,
    pub with_distractor: usize,
    pub mean_universe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub splits: Vec<SplitStats>,
    pub total_questions: usize,
    pub distractor_share: f64,
    pub universe_histogram: Vec<Count>,
    pub mention_histogram: Vec<Count>,
    pub min_universe: usize,
    pub max_universe: usize,
}

pub fn dataset_stats(ds: &Dataset, catalog: &Catalog) -> DatasetStats {
    let bank = template_bank();
    let mut hist = vec![0usize; SIZE_BUCKETS.len()];
    let mut mentions = [0usize; 4];
    let mut total = 0;
    let mut distractors = 0;
    let (mut lo, mut hi) = (usize::MAX, 0);
    let mut splits = Vec::new();

    for split in ds.splits() {
        let mut cats = [0usize; 3];
        let mut with_d = 0;
        let mut universe_sum = 0usize;
        for q in &split.questions {
            let c = bank[q.template_id as usize - 1].category;
            cats[TemplateCategory::ALL.iter().position(|x| *x == c).unwrap_or(0)] += 1;
            if q.has_distractor() {
                with_d += 1;
            }
            let n = question_universe(catalog, q).len();
            universe_sum += n;
            lo = lo.min(n);
            hi = hi.max(n);
            let b = SIZE_BUCKETS.iter().position(|b| b.2 == size_bucket(n)).unwrap_or(4);
            hist[b] += 1;
            mentions[q.mentions.len().min(3)] += 1;
        }
        let n = split.questions.len();
        total += n;
        distractors += with_d;
        splits.push(SplitStats {
            split: split.name.as_str().to_string(),
            questions: n,
            by_category: TemplateCategory::ALL
                .iter()
                .zip(cats)
                .map(|(c, count)| Count { key: c.as_str().into(), count })
                .collect(),
            with_distractor: with_d,
            mean_universe: if n == 0 { 0.0 } else { universe_sum as f64 / n as f64 },
        });
    }

    DatasetStats {
        splits,
        total_questions: total,
        distractor_share: if total == 0 { 0.0 } else { distractors as f64 / total as f64 },
        universe_histogram: SIZE_BUCKETS
            .iter()
            .zip(hist)
            .map(|(b, count)| Count { key: b.2.into(), count })
            .collect(),
        mention_histogram: (0..4)
            .map(|k| Count { key: k.to_string(), count: mentions[k] })
            .collect(),
        min_universe: if total == 0 { 0 } else { lo },
        max_universe: hi,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buckets() {
        assert_eq!(size_bucket(0), "0-200");
        assert_eq!(size_bucket(199), "0-200");
        assert_eq!(size_bucket(200), "200-500");
        assert_eq!(size_bucket(4999), "1000-5000");
        assert_eq!(size_bucket(16_200), "5000-20000");
    }
}
