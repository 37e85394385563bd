//! Rearrangement experiments on `Σ ±1/n`: the alternating harmonic series
//! summed in natural order, greedily rearranged towards an arbitrary target,
//! and with random signs under two different orderings.

use serde::Serialize;

use crate::random::GaussianStream;

/// Partial sums of a series: the final value plus a thinned trace.
#[derive(Debug, Clone, Serialize)]
pub struct SeriesTrace {
    pub label: String,
    pub terms: usize,
    pub final_sum: f64,
    /// `(number of terms, partial sum)` every `record_every` terms and at the end.
    pub samples: Vec<(usize, f64)>,
}

/// Ordering applied to the sign sequence of the random series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Permutation {
    Identity,
    /// Repeatedly takes `odd` terms with odd index, then `even` with even index.
    BlockInterleave { odd: usize, even: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RearrangementMode {
    /// `1 − ½ + ⅓ − …` in its natural order.
    Natural,
    /// Greedy reordering of the alternating harmonic series towards `target`.
    Target(f64),
    /// Independent fair signs; summed in natural order and under `permutation`.
    RandomSigns { seed: u64, permutation: Permutation },
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
struct Accumulator {
    sum: f64,
    comp: f64,
}

impl Accumulator {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

struct Recorder {
    every: usize,
    samples: Vec<(usize, f64)>,
}

impl Recorder {
    fn new(every: usize) -> Self {
        Recorder { every: every.max(1), samples: Vec::new() }
    }

    #[inline]
    fn record(&mut self, k: usize, total: usize, acc: &Accumulator) {
        if k.is_multiple_of(self.every) || k == total {
            self.samples.push((k, acc.value()));
        }
    }
}

fn finish(label: &str, terms: usize, acc: Accumulator, rec: Recorder) -> SeriesTrace {
    SeriesTrace {
        label: label.to_string(),
        terms,
        final_sum: acc.value(),
        samples: rec.samples,
    }
}

/// `Σ_{n ≤ N} (−1)^{n+1}/n`.
pub fn alternating_harmonic(n: usize, record_every: usize) -> SeriesTrace {
    let mut acc = Accumulator::default();
    let mut rec = Recorder::new(record_every);
    for k in 1..=n {
        let term = if k % 2 == 1 { 1.0 } else { -1.0 } / k as f64;
        acc.add(term);
        rec.record(k, n, &acc);
    }
    finish("natural", n, acc, rec)
}

/// Uses the terms of the alternating harmonic series in the order: next
/// positive term `1/(2j − 1)` while the partial sum is at most `target`,
/// otherwise next negative term `−1/(2j)`.
pub fn greedy_rearrangement(target: f64, n: usize, record_every: usize) -> SeriesTrace {
    let mut acc = Accumulator::default();
    let mut rec = Recorder::new(record_every);
    let (mut next_odd, mut next_even) = (1u64, 2u64);
    for k in 1..=n {
        if acc.value() <= target {
            acc.add(1.0 / next_odd as f64);
            next_odd += 2;
        } else {
            acc.add(-1.0 / next_even as f64);
            next_even += 2;
        }
        rec.record(k, n, &acc);
    }
    finish(&format!("target={target}"), n, acc, rec)
}

/// Fair random signs `s_n`, one bit per index, drawn lazily from a stream.
struct SignSequence {
    stream: GaussianStream,
    words: Vec<u64>,
}

impl SignSequence {
    fn new(seed: u64) -> Self {
        SignSequence { stream: GaussianStream::new(seed, 0), words: Vec::new() }
    }

    /// Sign of term `n ≥ 1`.
    #[inline]
    fn sign(&mut self, n: usize) -> f64 {
        let bit = n - 1;
        while self.words.len() <= bit / 64 {
            let w = self.stream.next_bits();
            self.words.push(w);
        }
        if (self.words[bit / 64] >> (bit % 64)) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Index sequence produced by `permutation`, truncated to `n` terms.
fn permuted_indices(permutation: Permutation, n: usize) -> Box<dyn Iterator<Item = usize>> {
    match permutation {
        Permutation::Identity => Box::new(1..=n),
        Permutation::BlockInterleave { odd, even } => {
            let (odd, even) = (odd.max(1), even.max(1));
            let it = (0usize..).flat_map(move |b| {
                let odds = (0..odd).map(move |j| 2 * (b * odd + j) + 1);
                let evens = (0..even).map(move |j| 2 * (b * even + j) + 2);
                odds.chain(evens)
            });
            Box::new(it.take(n))
        }
    }
}

/// Random series `Σ s_n/n` summed in natural order and under `permutation`.
/// Both traces share the same sign sequence.
pub fn random_sign_rearrangement(
    seed: u64,
    permutation: Permutation,
    n: usize,
    record_every: usize,
) -> (SeriesTrace, SeriesTrace) {
    let mut signs = SignSequence::new(seed);
    let mut run = |label: &str, perm: Permutation| {
        let mut acc = Accumulator::default();
        let mut rec = Recorder::new(record_every);
        for (k, idx) in permuted_indices(perm, n).enumerate() {
            acc.add(signs.sign(idx) / idx as f64);
            rec.record(k + 1, n, &acc);
        }
        finish(label, n, acc, rec)
    };
    let natural = run("natural", Permutation::Identity);
    let permuted = run("permuted", permutation);
    (natural, permuted)
}

/// Dispatches on the experiment mode. Random-sign runs return both traces.
pub fn rearrangement_experiment(
    mode: RearrangementMode,
    n: usize,
    record_every: usize,
) -> Vec<SeriesTrace> {
    match mode {
        RearrangementMode::Natural => vec![alternating_harmonic(n, record_every)],
        RearrangementMode::Target(c) => vec![greedy_rearrangement(c, n, record_every)],
        RearrangementMode::RandomSigns { seed, permutation } => {
            let (a, b) = random_sign_rearrangement(seed, permutation, n, record_every);
            vec![a, b]
        }
    }
}
