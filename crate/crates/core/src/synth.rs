//! Seeded synthetic datasets used by tests, benchmarks and the `synth`
//! command.

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{split, Dataset};
use crate::rng::{self, Stream};

fn names(prefix: &str, v: usize) -> Vec<String> {
    let digits = v.saturating_sub(1).to_string().len();
    (0..v).map(|i| format!("{prefix}{i:0digits$}")).collect()
}

/// Binary Markov chain `x_0 → x_1 → … → x_{v-1}`: `x_0` is a fair coin and
/// each next variable copies its predecessor, flipped with probability
/// `flip`. The label of a sample is its `x_0`.
pub fn markov_chain(v: usize, n: usize, flip: f64, seed: u64) -> Dataset {
    let mut rng = rng::stream(seed, Stream::Synth);
    let mut values = Array2::zeros((n, v));
    let mut labels = Vec::with_capacity(n);
    for mut row in values.outer_iter_mut() {
        let mut bit = rng.random_bool(0.5);
        labels.push(usize::from(bit));
        for x in row.iter_mut() {
            *x = f64::from(u8::from(bit));
            bit ^= rng.random_bool(flip);
        }
    }
    Dataset::new(values, Some(names("x", v)), Some(labels)).expect("valid chain fixture")
}

/// `blocks` groups of `size` binary variables. Each group shares a fair
/// latent bit and every member is that bit flipped with probability
/// `p = (1 - sqrt(corr)) / 2`, so two members of one group have
/// correlation `corr`; members of different groups are independent.
pub fn blocks(blocks: usize, size: usize, corr: f64, n: usize, seed: u64) -> Dataset {
    let p = (1.0 - corr.sqrt()) / 2.0;
    let mut rng = rng::stream(seed, Stream::Synth);
    let v = blocks * size;
    let mut values = Array2::zeros((n, v));
    for mut row in values.outer_iter_mut() {
        for b in 0..blocks {
            let latent = rng.random_bool(0.5);
            for j in 0..size {
                row[b * size + j] = f64::from(u8::from(latent ^ rng.random_bool(p)));
            }
        }
    }
    Dataset::new(values, Some(names("x", v)), None).expect("valid block fixture")
}

/// Two isotropic unit-variance Gaussian classes in `v` dimensions whose
/// means are `margin` apart along the all-ones direction.
pub fn gaussian_blobs(v: usize, n: usize, margin: f64, seed: u64) -> Dataset {
    let mut rng = rng::stream(seed, Stream::Synth);
    let offset = margin / (2.0 * (v as f64).sqrt());
    let mut values = Array2::zeros((n, v));
    let mut labels = Vec::with_capacity(n);
    for mut row in values.outer_iter_mut() {
        let y = rng.random_bool(0.5);
        labels.push(usize::from(y));
        let mean = if y { offset } else { -offset };
        for x in row.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = mean + z;
        }
    }
    Dataset::new(values, Some(names("f", v)), Some(labels)).expect("valid blob fixture")
}

/// Blobs split 60/20/20 into train, validation and test.
pub fn blob_splits(v: usize, n: usize, margin: f64, seed: u64) -> (Dataset, Dataset, Dataset) {
    split(&gaussian_blobs(v, n, margin, seed), 0.6, 0.2, seed).expect("fixture is large enough")
}

/// Shape of a synthetic bag-of-words corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopicCorpus {
    pub docs: usize,
    pub vocab: usize,
    pub classes: usize,
    /// Words per subtopic; the vocabulary is cut into `vocab / topic_size`
    /// subtopics assigned to classes round-robin.
    pub topic_size: usize,
    /// Subtopics drawn from the document's own class.
    pub own_topics: usize,
    /// Subtopics drawn from any class.
    pub noise_topics: usize,
    /// Probability that a token is drawn from the Zipf background instead
    /// of the document's subtopics.
    pub background: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for TopicCorpus {
    fn default() -> Self {
        TopicCorpus {
            docs: 2000,
            vocab: 2000,
            classes: 4,
            topic_size: 10,
            own_topics: 3,
            noise_topics: 1,
            background: 0.4,
            min_len: 20,
            max_len: 80,
        }
    }
}

/// A labeled count matrix where each class owns a set of co-occurring word
/// groups. Documents mix a few groups of their class, a few groups of any
/// class and Zipf-distributed background words.
pub fn topic_corpus(cfg: &TopicCorpus, seed: u64) -> Dataset {
    let mut rng = rng::stream(seed, Stream::Synth);
    let n_topics = (cfg.vocab / cfg.topic_size).max(cfg.classes);
    let topic_words = |t: usize| {
        let start = t * cfg.vocab / n_topics;
        let end = (t + 1) * cfg.vocab / n_topics;
        start..end
    };
    let by_class: Vec<Vec<usize>> = (0..cfg.classes)
        .map(|c| (0..n_topics).filter(|t| t % cfg.classes == c).collect())
        .collect();
    // Zipf background over a fixed random ranking of the vocabulary.
    let zipf = rand_distr::Zipf::new(cfg.vocab as f64, 1.1).expect("valid zipf");
    let mut ranking: Vec<usize> = (0..cfg.vocab).collect();
    rand::seq::SliceRandom::shuffle(ranking.as_mut_slice(), &mut rng);

    let mut values = Array2::zeros((cfg.docs, cfg.vocab));
    let mut labels = Vec::with_capacity(cfg.docs);
    for mut row in values.outer_iter_mut() {
        let c = rng.random_range(0..cfg.classes);
        labels.push(c);
        let mut topics: Vec<usize> = by_class[c]
            .choose_multiple(&mut rng, cfg.own_topics)
            .copied()
            .collect();
        for _ in 0..cfg.noise_topics {
            topics.push(rng.random_range(0..n_topics));
        }
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        for _ in 0..len {
            let w = if topics.is_empty() || rng.random_bool(cfg.background) {
                let r = zipf.sample(&mut rng) as usize - 1;
                ranking[r.min(cfg.vocab - 1)]
            } else {
                let t = *topics.choose(&mut rng).expect("nonempty");
                rng.random_range(topic_words(t))
            };
            row[w] += 1.0;
        }
    }
    Dataset::new(values, Some(names("w", cfg.vocab)), Some(labels)).expect("valid corpus")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_flip_rate() {
        let d = markov_chain(10, 5000, 0.1, 1);
        let v = d.values();
        let flips = (0..5000)
            .flat_map(|i| (1..10).map(move |j| (i, j)))
            .filter(|&(i, j)| v[[i, j]] != v[[i, j - 1]])
            .count() as f64
            / (5000.0 * 9.0);
        assert!((flips - 0.1).abs() < 0.01, "{flips}");
        assert_eq!(d.labels().unwrap()[0] as f64, v[[0, 0]]);
    }

    #[test]
    fn block_correlation() {
        let d = blocks(2, 3, 0.9, 20000, 2);
        let v = d.values();
        let corr = |a: usize, b: usize| {
            let n = v.nrows() as f64;
            let (ma, mb) = (v.column(a).sum() / n, v.column(b).sum() / n);
            let cov = v.column(a).iter().zip(v.column(b)).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
            let sa = (v.column(a).iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n).sqrt();
            let sb = (v.column(b).iter().map(|x| (x - mb).powi(2)).sum::<f64>() / n).sqrt();
            cov / (sa * sb)
        };
        assert!((corr(0, 1) - 0.9).abs() < 0.02);
        assert!(corr(0, 3).abs() < 0.03);
    }

    #[test]
    fn corpus_shape_and_determinism() {
        let cfg = TopicCorpus {
            docs: 50,
            vocab: 100,
            ..TopicCorpus::default()
        };
        let a = topic_corpus(&cfg, 3);
        assert_eq!((a.n_samples(), a.n_features()), (50, 100));
        assert!(a.is_count_like());
        assert_eq!(a, topic_corpus(&cfg, 3));
        assert!(a.labels().unwrap().iter().all(|&y| y < 4));
        let lens: Vec<f64> = a.values().outer_iter().map(|r| r.sum()).collect();
        assert!(lens.iter().all(|&l| (20.0..=80.0).contains(&l)));
    }
}
