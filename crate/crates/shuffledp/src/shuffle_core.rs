//! Execution framework for the shuffle and local models: datasets, the
//! randomizer interface, shuffling (histogram formation), and public
//! randomness.
//!
//! A shuffler destroys everything except the multiset of messages, so the
//! shuffled transcript is represented *only* as a histogram. Analyzers never
//! see an ordered transcript type, which makes permutation-invariance
//! structural rather than something each analyzer must re-establish.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// A dataset of `n` user inputs over the universe `{0} ∪ [D]`, where 0 means
/// "holds nothing countable".
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub universe_size: u64,
    pub entries: Vec<u64>,
}

impl Dataset {
    pub fn new(universe_size: u64, entries: Vec<u64>) -> Result<Self> {
        for (i, &x) in entries.iter().enumerate() {
            if x > universe_size {
                return Err(Error::Parameter(format!(
                    "entry {x} at index {i} outside {{0}} ∪ [1, {universe_size}]"
                )));
            }
        }
        Ok(Self {
            universe_size,
            entries,
        })
    }

    pub fn n(&self) -> usize {
        self.entries.len()
    }

    /// Number of distinct nonzero values held by at least one user.
    pub fn distinct_nonzero(&self) -> u64 {
        let mut seen = std::collections::BTreeSet::new();
        for &x in &self.entries {
            if x != 0 {
                seen.insert(x);
            }
        }
        seen.len() as u64
    }

    /// Copy differing only at `index`, which takes `new_value`.
    pub fn neighboring(&self, index: usize, new_value: u64) -> Result<Dataset> {
        if index >= self.entries.len() {
            return Err(Error::Parameter(format!(
                "index {index} out of range for {} users",
                self.entries.len()
            )));
        }
        if new_value > self.universe_size {
            return Err(Error::Parameter(format!(
                "new value {new_value} outside {{0}} ∪ [1, {}]",
                self.universe_size
            )));
        }
        let mut entries = self.entries.clone();
        entries[index] = new_value;
        Ok(Dataset {
            universe_size: self.universe_size,
            entries,
        })
    }

    /// Newline-delimited integers with a one-line header `D=<int> n=<int>`.
    pub fn to_text(&self) -> String {
        let mut out = format!("D={} n={}\n", self.universe_size, self.entries.len());
        for &x in &self.entries {
            out.push_str(&x.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parameter("empty dataset text".into()))?;
        let mut d: Option<u64> = None;
        let mut n: Option<usize> = None;
        for tok in header.split_whitespace() {
            if let Some(v) = tok.strip_prefix("D=") {
                d = Some(v.parse().map_err(|_| {
                    Error::Parameter(format!("bad universe size in header: {tok}"))
                })?);
            } else if let Some(v) = tok.strip_prefix("n=") {
                n = Some(
                    v.parse()
                        .map_err(|_| Error::Parameter(format!("bad user count in header: {tok}")))?,
                );
            } else {
                return Err(Error::Parameter(format!("unexpected header token: {tok}")));
            }
        }
        let d = d.ok_or_else(|| Error::Parameter("header missing D=".into()))?;
        let n = n.ok_or_else(|| Error::Parameter("header missing n=".into()))?;
        let mut entries = Vec::with_capacity(n);
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            entries.push(
                line.parse()
                    .map_err(|_| Error::Parameter(format!("bad entry line: {line}")))?,
            );
        }
        if entries.len() != n {
            return Err(Error::Parameter(format!(
                "header says n={n} but found {} entries",
                entries.len()
            )));
        }
        Dataset::new(d, entries)
    }
}

// ---------------------------------------------------------------------------
// Transcript histogram
// ---------------------------------------------------------------------------

/// The shuffled transcript: message identifier → multiplicity.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TranscriptHistogram {
    counts: BTreeMap<u64, u64>,
}

impl TranscriptHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, message: u64, count: u64) {
        if count > 0 {
            *self.counts.entry(message).or_insert(0) += count;
        }
    }

    pub fn count(&self, message: u64) -> u64 {
        self.counts.get(&message).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&u64, &u64)> {
        self.counts.iter()
    }

    pub fn merge(&mut self, other: &TranscriptHistogram) {
        for (&m, &c) in other.counts.iter() {
            self.add(m, c);
        }
    }
}

// ---------------------------------------------------------------------------
// Public randomness
// ---------------------------------------------------------------------------

/// Public random string shared by users and analyzer before inputs are chosen.
/// Derived objects (hash mapping, permutation) are materialized on demand from
/// the seed; two parties holding the same seed always derive identical
/// objects.
#[derive(Clone, Copy, Debug)]
pub struct PublicRandomness {
    pub seed: u64,
}

impl PublicRandomness {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Seeded hash of `x` into `[1, n]`. Stateless: every call with the same
    /// (seed, x, n) gives the same bucket.
    pub fn map_to_bucket(&self, x: u64, n: u64) -> u64 {
        assert!(n >= 1);
        // SplitMix64 over (seed, x); avalanching is what matters here, not
        // cryptographic strength — the mapping is public anyway.
        let mut z = self.seed ^ x.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        1 + z % n
    }

    /// Uniform permutation of `[1, n]` as an array: `perm[i-1]` is π(i).
    /// Fisher–Yates from a dedicated stream of the seed.
    pub fn permutation(&self, n: u64) -> Vec<u64> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::MAX); // never collides with per-user streams
        let mut perm: Vec<u64> = (1..=n).collect();
        for i in (1..perm.len()).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        perm
    }
}

// ---------------------------------------------------------------------------
// Randomizers and model execution
// ---------------------------------------------------------------------------

/// A local randomizer. The output is the user's message multiset in sparse
/// form: (message, multiplicity) pairs, multiplicities ≥ 1.
pub trait Randomizer {
    fn randomize(&self, x: u64, rng: &mut ChaCha20Rng) -> Result<Vec<(u64, u64)>>;
}

/// Per-user RNG: one root seed, one counter-mode stream per user index, so
/// results are identical no matter how user invocations are scheduled.
pub fn user_rng(root_seed: u64, user_index: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(root_seed);
    rng.set_stream(user_index as u64);
    rng
}

/// Runs the shuffle model: every user's messages are thrown into one
/// histogram, which *is* the analyzer-visible transcript.
pub fn run_shuffle<R: Randomizer + ?Sized>(
    randomizer: &R,
    dataset: &Dataset,
    root_seed: u64,
) -> Result<TranscriptHistogram> {
    let mut hist = TranscriptHistogram::new();
    for (i, &x) in dataset.entries.iter().enumerate() {
        let mut rng = user_rng(root_seed, i);
        let messages = randomizer
            .randomize(x, &mut rng)
            .map_err(|e| Error::InputDomain(format!("user {i} with input {x}: {e}")))?;
        for (m, c) in messages {
            hist.add(m, c);
        }
    }
    Ok(hist)
}

/// Runs the local model (identity shuffler): the per-user outputs in user
/// order, each a sparse multiset sorted by message.
pub fn run_local<R: Randomizer + ?Sized>(
    randomizer: &R,
    dataset: &Dataset,
    root_seed: u64,
) -> Result<Vec<Vec<(u64, u64)>>> {
    let mut out = Vec::with_capacity(dataset.n());
    for (i, &x) in dataset.entries.iter().enumerate() {
        let mut rng = user_rng(root_seed, i);
        let mut messages = randomizer
            .randomize(x, &mut rng)
            .map_err(|e| Error::InputDomain(format!("user {i} with input {x}: {e}")))?;
        messages.sort_unstable();
        out.push(messages);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;
    impl Randomizer for Echo {
        fn randomize(&self, x: u64, _rng: &mut ChaCha20Rng) -> Result<Vec<(u64, u64)>> {
            Ok(vec![(x, 1)])
        }
    }

    struct Silent;
    impl Randomizer for Silent {
        fn randomize(&self, _x: u64, _rng: &mut ChaCha20Rng) -> Result<Vec<(u64, u64)>> {
            Ok(vec![])
        }
    }

    /// Emits its input with probability 1/2, nothing otherwise.
    struct HalfEcho;
    impl Randomizer for HalfEcho {
        fn randomize(&self, x: u64, rng: &mut ChaCha20Rng) -> Result<Vec<(u64, u64)>> {
            if rng.gen::<bool>() {
                Ok(vec![(x, 1)])
            } else {
                Ok(vec![])
            }
        }
    }

    #[test]
    fn echo_shuffle_counts_inputs() {
        let data = Dataset::new(3, vec![1, 1, 2]).unwrap();
        let hist = run_shuffle(&Echo, &data, 0).unwrap();
        assert_eq!(hist.count(1), 2);
        assert_eq!(hist.count(2), 1);
        assert_eq!(hist.total(), 3);
    }

    #[test]
    fn silent_randomizer_gives_empty_histogram() {
        let data = Dataset::new(3, vec![1, 2, 3]).unwrap();
        let hist = run_shuffle(&Silent, &data, 0).unwrap();
        assert!(hist.is_empty());
    }

    #[test]
    fn local_model_preserves_order() {
        let data = Dataset::new(3, vec![3, 1, 2]).unwrap();
        let out = run_local(&Echo, &data, 0).unwrap();
        assert_eq!(out, vec![vec![(3, 1)], vec![(1, 1)], vec![(2, 1)]]);
        let empty = Dataset::new(3, vec![]).unwrap();
        assert!(run_local(&Echo, &empty, 0).unwrap().is_empty());
    }

    #[test]
    fn neighboring_changes_exactly_one_position() {
        let data = Dataset::new(9, vec![1, 2, 3]).unwrap();
        let moved = data.neighboring(0, 9).unwrap();
        assert_eq!(moved.entries, vec![9, 2, 3]);
        let same = data.neighboring(1, 2).unwrap();
        assert_eq!(same, data);
        let diff: Vec<usize> = data
            .entries
            .iter()
            .zip(moved.entries.iter())
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(diff, vec![0]);
        assert!(data.neighboring(5, 0).is_err());
        assert!(data.neighboring(0, 10).is_err());
    }

    #[test]
    fn dataset_validation_and_serialization() {
        assert!(Dataset::new(3, vec![4]).is_err());
        let data = Dataset::new(5, vec![0, 3, 5, 1]).unwrap();
        let text = data.to_text();
        assert!(text.starts_with("D=5 n=4\n"));
        let back = Dataset::from_text(&text).unwrap();
        assert_eq!(back, data);
        assert!(Dataset::from_text("D=5 n=2\n1\n").is_err());
        assert!(Dataset::from_text("n=1\n1\n").is_err());
        assert!(Dataset::from_text("D=5 n=1\n9\n").is_err());
    }

    #[test]
    fn deterministic_given_root_seed() {
        let data = Dataset::new(4, vec![1, 2, 3, 4, 0, 2]).unwrap();
        let a = run_shuffle(&HalfEcho, &data, 17).unwrap();
        let b = run_shuffle(&HalfEcho, &data, 17).unwrap();
        assert_eq!(a, b);
        let c = run_shuffle(&HalfEcho, &data, 18).unwrap();
        // Different seed should (with overwhelming probability) differ.
        assert_ne!(a, c);
    }

    #[test]
    fn per_user_streams_are_independent_of_schedule() {
        // Running users one at a time through their own streams gives the
        // same histogram as the batch runner.
        let data = Dataset::new(4, vec![1, 2, 3, 4]).unwrap();
        let batch = run_shuffle(&HalfEcho, &data, 5).unwrap();
        let mut manual = TranscriptHistogram::new();
        for i in (0..data.n()).rev() {
            let mut rng = user_rng(5, i);
            for (m, c) in HalfEcho.randomize(data.entries[i], &mut rng).unwrap() {
                manual.add(m, c);
            }
        }
        assert_eq!(batch, manual);
    }

    #[test]
    fn shuffle_invariant_under_dataset_permutation() {
        // Seed-averaged histograms of a dataset and a permutation of it are
        // statistically indistinguishable: two-sample chi-square over message
        // categories at significance 0.01 (df = 2 → critical 9.21).
        let a = Dataset::new(3, vec![1, 1, 2, 3, 3, 3, 2, 1]).unwrap();
        let b = Dataset::new(3, vec![3, 2, 1, 3, 1, 2, 3, 1]).unwrap();
        let runs = 4000u64;
        let mut counts_a = [0f64; 3];
        let mut counts_b = [0f64; 3];
        for s in 0..runs {
            let ha = run_shuffle(&HalfEcho, &a, 1_000 + s).unwrap();
            let hb = run_shuffle(&HalfEcho, &b, 9_000_000 + s).unwrap();
            for m in 1..=3u64 {
                counts_a[(m - 1) as usize] += ha.count(m) as f64;
                counts_b[(m - 1) as usize] += hb.count(m) as f64;
            }
        }
        let tot_a: f64 = counts_a.iter().sum();
        let tot_b: f64 = counts_b.iter().sum();
        let mut chi2 = 0.0;
        for k in 0..3 {
            let col = counts_a[k] + counts_b[k];
            let ea = col * tot_a / (tot_a + tot_b);
            let eb = col * tot_b / (tot_a + tot_b);
            chi2 += (counts_a[k] - ea).powi(2) / ea + (counts_b[k] - eb).powi(2) / eb;
        }
        assert!(chi2 < 9.21, "chi2 {chi2} rejects shuffle invariance");
    }

    #[test]
    fn bucket_mapping_is_stable_and_in_range() {
        let pr = PublicRandomness::new(42);
        for x in 0..200u64 {
            let b = pr.map_to_bucket(x, 17);
            assert!((1..=17).contains(&b));
            assert_eq!(b, pr.map_to_bucket(x, 17));
        }
        let perm = pr.permutation(100);
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (1..=100).collect::<Vec<_>>());
        assert_eq!(perm, pr.permutation(100));
    }
}
