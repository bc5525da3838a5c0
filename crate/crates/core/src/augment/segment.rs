/// Words that open a new clause when they appear mid-sentence.
pub const DISCOURSE_MARKERS: [&str; 13] = [
    "and", "but", "or", "because", "while", "although", "which", "who", "when", "that", "after", "before", "so",
];

const SEPARATORS: [char; 4] = [',', ';', ':', '—'];

/// Half-open word range `[start, end)` within the parent's segmentation words.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Clause {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl Clause {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Lowercased words of `text` with clause separators removed, and the
/// indices after which a separator stood.
fn units(text: &str) -> (Vec<String>, Vec<bool>) {
    let mut words = Vec::new();
    let mut breaks_after = Vec::new();
    for raw in text.split_whitespace() {
        let core = raw.trim_end_matches(|c| SEPARATORS.contains(&c) || c == '-');
        let separated = core.len() != raw.len();
        if core.is_empty() {
            // bare separator token such as "," or "--"
            if let Some(last) = breaks_after.last_mut() {
                *last = true;
            }
            continue;
        }
        words.push(core.to_lowercase());
        breaks_after.push(separated);
    }
    (words, breaks_after)
}

/// Words `segment` assigns clause ranges over.
pub fn segmentation_words(text: &str) -> Vec<String> {
    units(text).0
}

/// Rule-based clause segmentation.
///
/// Splits after the separators `, ; : —` (and `--`) and before any of
/// `markers`; the separators themselves are dropped from the clause text.
/// Segments shorter than `min_clause_tokens` merge into the preceding
/// segment, or into the following one when they come first. The returned
/// clauses tile [`segmentation_words`] exactly; text without any word yields
/// no clause.
pub fn segment(text: &str, markers: &[&str], min_clause_tokens: usize) -> Vec<Clause> {
    let (words, breaks_after) = units(text);
    if words.is_empty() {
        return Vec::new();
    }
    let mut bounds = vec![0];
    for i in 1..words.len() {
        if breaks_after[i - 1] || markers.contains(&words[i].as_str()) {
            bounds.push(i);
        }
    }
    bounds.push(words.len());

    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut pending_start: Option<usize> = None;
    for w in bounds.windows(2) {
        let (start, end) = (pending_start.take().unwrap_or(w[0]), w[1]);
        if end - start >= min_clause_tokens {
            spans.push((start, end));
        } else if let Some(prev) = spans.last_mut() {
            prev.1 = end;
        } else {
            pending_start = Some(start);
        }
    }
    if let Some(start) = pending_start {
        // every segment was short: one clause over the whole text
        spans.push((start, words.len()));
    }

    spans
        .into_iter()
        .map(|(start, end)| Clause {
            start,
            end,
            text: words[start..end].join(" "),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(clauses: &[Clause]) -> Vec<&str> {
        clauses.iter().map(|c| c.text.as_str()).collect()
    }

    #[test]
    fn comma_and_marker() {
        let c = segment("she parked , and he waited .", &DISCOURSE_MARKERS, 2);
        assert_eq!(texts(&c), ["she parked", "and he waited ."]);
    }

    #[test]
    fn no_boundary_gives_one_clause() {
        let c = segment("a man is lifting weights", &DISCOURSE_MARKERS, 3);
        assert_eq!(texts(&c), ["a man is lifting weights"]);
        assert_eq!((c[0].start, c[0].end), (0, 5));
    }

    #[test]
    fn short_head_merges_forward() {
        let c = segment("a , b c d", &DISCOURSE_MARKERS, 2);
        assert_eq!(texts(&c), ["a b c d"]);
    }

    #[test]
    fn short_tail_merges_backward() {
        let c = segment("the dog barked loudly ; then", &DISCOURSE_MARKERS, 2);
        assert_eq!(texts(&c), ["the dog barked loudly then"]);
    }

    #[test]
    fn attached_punctuation_and_dashes() {
        let c = segment("The rain fell, we stayed inside -- nobody minded: fine day", &DISCOURSE_MARKERS, 2);
        assert_eq!(texts(&c), ["the rain fell", "we stayed inside", "nobody minded", "fine day"]);
        let c = segment("it rained — we left", &DISCOURSE_MARKERS, 2);
        assert_eq!(texts(&c), ["it rained", "we left"]);
    }

    #[test]
    fn clauses_tile_the_words() {
        let text = "he said that it was late because the train stopped , so we walked home";
        let words = segmentation_words(text);
        let c = segment(text, &DISCOURSE_MARKERS, 3);
        assert_eq!(c.first().unwrap().start, 0);
        assert_eq!(c.last().unwrap().end, words.len());
        for w in c.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
        assert!(c.iter().all(|cl| cl.len() >= 3));
        assert_eq!(
            texts(&c),
            ["he said that it was late", "because the train stopped", "so we walked home"]
        );
    }

    #[test]
    fn only_separators() {
        assert!(segment(" , ; ", &DISCOURSE_MARKERS, 2).is_empty());
    }
}
