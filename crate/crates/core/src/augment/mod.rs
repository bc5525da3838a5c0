//! Token partitioning for latent composition, rule-based clause
//! segmentation, and corpus expansion with span subsamples.

mod segment;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

pub use segment::{segment, segmentation_words, Clause, DISCOURSE_MARKERS};

use crate::encoder::TokenIds;
use crate::error::{Error, Result};

/// Splits the content tokens of `ids` into `k` contiguous spans, each
/// re-prefixed with `CLS`. Sizes differ by at most one, larger spans first.
pub fn partition(ids: &TokenIds, k: usize) -> Result<Vec<TokenIds>> {
    let content = ids.content();
    if k < 2 || content.len() < k {
        return Err(Error::Partition {
            tokens: content.len(),
            parts: k,
        });
    }
    let (base, extra) = (content.len() / k, content.len() % k);
    let mut start = 0;
    Ok((0..k)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let span = TokenIds::with_cls(&content[start..start + len]);
            start += len;
            span
        })
        .collect())
}

/// Corpus expansion tiers; each includes everything the previous emits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SubsampleStrategy {
    None,
    /// Atomic clauses.
    Adjacent,
    /// Plus contiguous multi-clause spans.
    Overlapping,
    /// Plus recursive within-clause halves.
    Subsuming,
}

impl SubsampleStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            SubsampleStrategy::None => "none",
            SubsampleStrategy::Adjacent => "adjacent",
            SubsampleStrategy::Overlapping => "overlapping",
            SubsampleStrategy::Subsuming => "subsuming",
        }
    }
}

impl fmt::Display for SubsampleStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubsampleStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SubsampleStrategy::None),
            "adjacent" => Ok(SubsampleStrategy::Adjacent),
            "overlapping" => Ok(SubsampleStrategy::Overlapping),
            "subsuming" => Ok(SubsampleStrategy::Subsuming),
            _ => Err(Error::Config(format!("unknown subsample strategy {s:?}"))),
        }
    }
}

/// Tier a subsample was emitted by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tier {
    Adjacent,
    Overlapping,
    Subsuming,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Origin {
    Original,
    Subsample(Tier),
}

/// A training text with its clause structure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextExample {
    pub text: String,
    pub clauses: Vec<Clause>,
    pub origin: Origin,
}

impl TextExample {
    pub fn original(text: &str, min_clause_tokens: usize) -> Self {
        Self {
            text: text.to_string(),
            clauses: segment(text, &DISCOURSE_MARKERS, min_clause_tokens),
            origin: Origin::Original,
        }
    }

    /// Segmentation words, recovered from the clause texts.
    pub fn words(&self) -> Vec<&str> {
        self.clauses.iter().flat_map(|c| c.text.split(' ')).collect()
    }
}

fn words_of(clauses: &[Clause]) -> Vec<&str> {
    clauses.iter().flat_map(|c| c.text.split(' ')).collect()
}

/// Span subsamples of one text, deduplicated by word range; the span
/// covering the whole text is never emitted.
pub fn subsample(clauses: &[Clause], strategy: SubsampleStrategy, min_span_tokens: usize) -> Vec<TextExample> {
    let Some(total) = clauses.last().map(|c| c.end) else {
        return Vec::new();
    };
    if strategy == SubsampleStrategy::None {
        return Vec::new();
    }
    let words = words_of(clauses);
    debug_assert_eq!(words.len(), total);
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    seen.insert((0, total));
    let mut out = Vec::new();
    let mut emit = |start: usize, end: usize, inner: Vec<Clause>, tier: Tier, out: &mut Vec<TextExample>| {
        if seen.insert((start, end)) {
            out.push(TextExample {
                text: words[start..end].join(" "),
                clauses: inner,
                origin: Origin::Subsample(tier),
            });
        }
    };
    let rebase = |cs: &[Clause], offset: usize| -> Vec<Clause> {
        cs.iter()
            .map(|c| Clause {
                start: c.start - offset,
                end: c.end - offset,
                text: c.text.clone(),
            })
            .collect()
    };

    for c in clauses {
        emit(c.start, c.end, rebase(std::slice::from_ref(c), c.start), Tier::Adjacent, &mut out);
    }
    if strategy >= SubsampleStrategy::Overlapping {
        for width in 2..=clauses.len() {
            for window in clauses.windows(width) {
                let (start, end) = (window[0].start, window[width - 1].end);
                emit(start, end, rebase(window, start), Tier::Overlapping, &mut out);
            }
        }
    }
    if strategy >= SubsampleStrategy::Subsuming {
        for c in clauses {
            let mut halves = Vec::new();
            halving_tree(c.start, c.end, min_span_tokens, &mut halves);
            for (start, end) in halves {
                let clause = Clause {
                    start: 0,
                    end: end - start,
                    text: words[start..end].join(" "),
                };
                emit(start, end, vec![clause], Tier::Subsuming, &mut out);
            }
        }
    }
    out
}

/// Both halves at every level of the recursive split of `[start, end)`,
/// stopping before a half would fall below `min_span`.
fn halving_tree(start: usize, end: usize, min_span: usize, out: &mut Vec<(usize, usize)>) {
    let n = end - start;
    let left = n - n / 2;
    if n / 2 < min_span.max(1) {
        return;
    }
    let mid = start + left;
    out.push((start, mid));
    out.push((mid, end));
    halving_tree(start, mid, min_span, out);
    halving_tree(mid, end, min_span, out);
}

/// Subsample counts per tier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExpansionCounts {
    pub adjacent: usize,
    pub overlapping: usize,
    pub subsuming: usize,
}

impl ExpansionCounts {
    pub fn added(&self) -> usize {
        self.adjacent + self.overlapping + self.subsuming
    }
}

/// Originals in order, each followed by its own subsamples.
pub fn expand_corpus(
    corpus: &[TextExample],
    strategy: SubsampleStrategy,
    min_span_tokens: usize,
) -> (Vec<TextExample>, ExpansionCounts) {
    let mut out = Vec::with_capacity(corpus.len());
    let mut counts = ExpansionCounts::default();
    for example in corpus {
        out.push(example.clone());
        for sub in subsample(&example.clauses, strategy, min_span_tokens) {
            match sub.origin {
                Origin::Subsample(Tier::Adjacent) => counts.adjacent += 1,
                Origin::Subsample(Tier::Overlapping) => counts.overlapping += 1,
                Origin::Subsample(Tier::Subsuming) => counts.subsuming += 1,
                Origin::Original => {}
            }
            out.push(sub);
        }
    }
    (out, counts)
}
