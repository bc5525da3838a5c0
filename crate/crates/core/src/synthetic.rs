//! Generated compositional corpus: every sentence concatenates two clauses
//! ("atoms") drawn from a fixed templated pool, and dev pairs are scored by
//! how many atoms the two sentences share.

use std::collections::BTreeSet;

use crate::evalkit::StsPair;
use crate::numerics::Rng;

const DETERMINERS: [&str; 4] = ["the", "a", "one", "this"];
const ADJECTIVES: [&str; 10] = [
    "old", "quiet", "young", "clever", "tired", "happy", "small", "brave", "sleepy", "curious",
];
const NOUNS: [&str; 10] = [
    "farmer", "teacher", "dog", "pilot", "child", "painter", "sailor", "cat", "doctor", "baker",
];
const VERBS: [&str; 10] = [
    "walked", "sang", "waited", "laughed", "worked", "danced", "slept", "cooked", "read", "swam",
];
const ADVERBS: [&str; 10] = [
    "slowly", "outside", "today", "loudly", "alone", "again", "early", "nearby", "happily", "late",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub atoms: usize,
    pub sentences: usize,
    pub dev_pairs: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            atoms: 40,
            sentences: 5000,
            dev_pairs: 500,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    /// Five-word clauses, all distinct.
    pub atoms: Vec<String>,
    pub corpus: Vec<String>,
    pub dev: Vec<StsPair>,
}

impl SyntheticData {
    pub fn corpus_text(&self) -> String {
        self.corpus.iter().map(|s| format!("{s}\n")).collect()
    }

    pub fn dev_text(&self) -> String {
        self.dev
            .iter()
            .map(|p| format!("{}\t{}\t{}\n", p.sentence1, p.sentence2, p.score))
            .collect()
    }
}

fn pick<'a>(rng: &mut Rng, words: &[&'a str]) -> &'a str {
    words[rng.below(words.len())]
}

/// Index of an atom not in `used`.
fn fresh(rng: &mut Rng, n: usize, used: &[usize]) -> usize {
    loop {
        let i = rng.below(n);
        if !used.contains(&i) {
            return i;
        }
    }
}

/// Deterministic in `seed`. Needs at least 4 atoms.
pub fn generate(spec: SyntheticSpec, seed: u64) -> SyntheticData {
    assert!(spec.atoms >= 4, "need at least 4 atoms");
    let mut rng = Rng::new(seed);
    let mut seen = BTreeSet::new();
    let mut atoms = Vec::with_capacity(spec.atoms);
    while atoms.len() < spec.atoms {
        let atom = [
            pick(&mut rng, &DETERMINERS),
            pick(&mut rng, &ADJECTIVES),
            pick(&mut rng, &NOUNS),
            pick(&mut rng, &VERBS),
            pick(&mut rng, &ADVERBS),
        ]
        .join(" ");
        if seen.insert(atom.clone()) {
            atoms.push(atom);
        }
    }
    let n = atoms.len();
    let join = |a: usize, b: usize| format!("{} {}", atoms[a], atoms[b]);

    let corpus = (0..spec.sentences)
        .map(|_| {
            let a = rng.below(n);
            let b = fresh(&mut rng, n, &[a]);
            join(a, b)
        })
        .collect();

    let dev = (0..spec.dev_pairs)
        .map(|i| {
            let a = rng.below(n);
            let b = fresh(&mut rng, n, &[a]);
            let (c, d, shared) = match i % 3 {
                // same clauses, opposite order
                0 => (b, a, 2),
                1 => {
                    let kept = if rng.below(2) == 0 { a } else { b };
                    let other = fresh(&mut rng, n, &[a, b]);
                    if rng.below(2) == 0 {
                        (kept, other, 1)
                    } else {
                        (other, kept, 1)
                    }
                }
                _ => {
                    let c = fresh(&mut rng, n, &[a, b]);
                    (c, fresh(&mut rng, n, &[a, b, c]), 0)
                }
            };
            StsPair {
                sentence1: join(a, b),
                sentence2: join(c, d),
                score: 5.0 * shared as f64 / 2.0,
            }
        })
        .collect();
    SyntheticData { atoms, corpus, dev }
}
