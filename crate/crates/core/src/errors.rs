//! M2 error annotations and per-100-word error-rate vectors.
//!
//! An M2 file is a sequence of blocks separated by blank lines. Each block
//! starts with `S <sentence>` and lists zero or more edits as
//! `A <start> <end>|||<tag>|||<correction>|||...|||<annotator>`. Edits tagged
//! `noop` carry no error and are dropped. A comment line `# id=<essay_id>`
//! assigns every following block to that essay until the next id comment.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum M2Error {
    #[error("line {line}: malformed edit line: {reason}")]
    MalformedEdit { line: usize, reason: String },
    #[error("line {line}: edit line before any sentence line")]
    EditBeforeSentence { line: usize },
    #[error("line {line}: unrecognized line")]
    UnknownLine { line: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("word count must be positive")]
    ZeroWordCount,
    #[error("duplicate tag {0:?} in vocabulary")]
    DuplicateTag(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub start: i64,
    pub end: i64,
    pub tag: String,
    pub correction: String,
    pub annotator: u32,
}

/// One `S` line and its edits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct M2Block {
    pub essay_id: Option<String>,
    pub sentence: String,
    pub edits: Vec<Edit>,
}

fn parse_edit(body: &str, line: usize) -> Result<Option<Edit>, M2Error> {
    let malformed = |reason: &str| M2Error::MalformedEdit {
        line,
        reason: reason.to_string(),
    };
    let fields: Vec<&str> = body.split("|||").collect();
    if fields.len() < 3 {
        return Err(malformed("expected at least 3 '|||'-separated fields"));
    }
    let mut span = fields[0].split_whitespace();
    let (Some(start), Some(end), None) = (span.next(), span.next(), span.next()) else {
        return Err(malformed("span must be '<start> <end>'"));
    };
    let start: i64 = start
        .parse()
        .map_err(|_| malformed("non-integer span start"))?;
    let end: i64 = end.parse().map_err(|_| malformed("non-integer span end"))?;
    let tag = fields[1].trim();
    if tag.is_empty() {
        return Err(malformed("empty tag"));
    }
    if tag == "noop" {
        return Ok(None);
    }
    let annotator = match fields.last().map(|s| s.trim()) {
        Some(a) if fields.len() >= 6 => a
            .parse()
            .map_err(|_| malformed("non-integer annotator id"))?,
        _ => 0,
    };
    Ok(Some(Edit {
        start,
        end,
        tag: tag.to_string(),
        correction: fields[2].to_string(),
        annotator,
    }))
}

/// Parses M2 text into blocks in file order.
pub fn parse_m2(text: &str) -> Result<Vec<M2Block>, M2Error> {
    let mut blocks: Vec<M2Block> = Vec::new();
    let mut current_id: Option<String> = None;
    let mut in_block = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let l = raw.trim_end_matches('\r');
        if l.trim().is_empty() {
            in_block = false;
            continue;
        }
        if let Some(comment) = l.strip_prefix('#') {
            if let Some(id) = comment.trim().strip_prefix("id=") {
                current_id = Some(id.trim().to_string());
            }
            continue;
        }
        if let Some(sentence) = l
            .strip_prefix("S ")
            .or(if l == "S" { Some("") } else { None })
        {
            blocks.push(M2Block {
                essay_id: current_id.clone(),
                sentence: sentence.to_string(),
                edits: Vec::new(),
            });
            in_block = true;
        } else if let Some(body) = l.strip_prefix("A ") {
            if !in_block {
                return Err(M2Error::EditBeforeSentence { line });
            }
            if let Some(edit) = parse_edit(body, line)? {
                if let Some(block) = blocks.last_mut() {
                    block.edits.push(edit);
                }
            }
        } else {
            return Err(M2Error::UnknownLine { line });
        }
    }
    Ok(blocks)
}

/// Renders blocks back to M2 text (id comments emitted when the id changes).
pub fn write_m2(blocks: &[M2Block]) -> String {
    let mut out = String::new();
    let mut last_id: Option<&str> = None;
    for block in blocks {
        if let Some(id) = block.essay_id.as_deref() {
            if last_id != Some(id) {
                out.push_str(&format!("# id={id}\n"));
                last_id = Some(id);
            }
        }
        out.push_str(&format!("S {}\n", block.sentence));
        for e in &block.edits {
            out.push_str(&format!(
                "A {} {}|||{}|||{}|||REQUIRED|||-NONE-|||{}\n",
                e.start, e.end, e.tag, e.correction, e.annotator
            ));
        }
        out.push('\n');
    }
    out
}

/// Edits grouped per essay. When any block carries an id, blocks are grouped
/// by id in order of first appearance; otherwise each block is one essay and
/// the key is `None` (positional alignment with the corpus).
pub fn group_by_essay(blocks: &[M2Block]) -> Vec<(Option<String>, Vec<Edit>)> {
    if blocks.iter().all(|b| b.essay_id.is_none()) {
        return blocks.iter().map(|b| (None, b.edits.clone())).collect();
    }
    let mut order: Vec<(Option<String>, Vec<Edit>)> = Vec::new();
    let mut index: BTreeMap<Option<String>, usize> = BTreeMap::new();
    for b in blocks {
        let slot = *index.entry(b.essay_id.clone()).or_insert_with(|| {
            order.push((b.essay_id.clone(), Vec::new()));
            order.len() - 1
        });
        order[slot].1.extend(b.edits.iter().cloned());
    }
    order
}

const OPERATIONS: [&str; 3] = ["M", "R", "U"];

/// Error types that occur with missing, replacement and unnecessary edits.
const ALL_OPERATION_TYPES: [&str; 15] = [
    "ADJ",
    "ADV",
    "CONJ",
    "CONTR",
    "DET",
    "NOUN",
    "NOUN:POSS",
    "OTHER",
    "PART",
    "PREP",
    "PRON",
    "PUNCT",
    "VERB",
    "VERB:FORM",
    "VERB:TENSE",
];

/// Error types that only occur as replacements.
const REPLACEMENT_ONLY_TYPES: [&str; 9] = [
    "ADJ:FORM",
    "MORPH",
    "NOUN:INFL",
    "NOUN:NUM",
    "ORTH",
    "SPELL",
    "VERB:INFL",
    "VERB:SVA",
    "WO",
];

/// Ordered error tags; a tag's index is its position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorTagVocabulary {
    tags: Vec<String>,
    /// Reserve a trailing index for tags outside the vocabulary.
    #[serde(default)]
    other: bool,
}

impl ErrorTagVocabulary {
    pub fn new(tags: Vec<String>, other: bool) -> Result<Self, FeatureError> {
        let mut seen = alloc::collections::BTreeSet::new();
        for t in &tags {
            if !seen.insert(t.as_str()) {
                return Err(FeatureError::DuplicateTag(t.clone()));
            }
        }
        Ok(Self { tags, other })
    }

    /// The 54 operation×type combinations of the ERRANT tag scheme.
    pub fn default_54() -> Self {
        let mut tags = Vec::with_capacity(54);
        for op in OPERATIONS {
            for ty in ALL_OPERATION_TYPES {
                tags.push(format!("{op}:{ty}"));
            }
            if op == "R" {
                tags.extend(REPLACEMENT_ONLY_TYPES.iter().map(|ty| format!("R:{ty}")));
            }
        }
        Self { tags, other: false }
    }

    /// The 24 error types without the operation prefix.
    pub fn types_24() -> Self {
        let mut tags: Vec<String> = ALL_OPERATION_TYPES
            .iter()
            .chain(REPLACEMENT_ONLY_TYPES.iter())
            .map(|s| s.to_string())
            .collect();
        tags.sort();
        Self { tags, other: false }
    }

    pub fn with_other(mut self, other: bool) -> Self {
        self.other = other;
        self
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    /// Output dimension including the reserved `OTHER` slot when enabled.
    pub fn len(&self) -> usize {
        self.tags.len() + usize::from(self.other)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = self.tags.clone();
        if self.other {
            names.push("OTHER".to_string());
        }
        names
    }

    /// Index of `tag`: exact match first, then the tag with its `M:`/`R:`/`U:`
    /// operation prefix removed (so a type-only vocabulary accepts full tags).
    pub fn index_of(&self, tag: &str) -> Option<usize> {
        if let Some(i) = self.tags.iter().position(|t| t == tag) {
            return Some(i);
        }
        let stripped = OPERATIONS
            .iter()
            .find_map(|op| tag.strip_prefix(op).and_then(|rest| rest.strip_prefix(':')))?;
        self.tags.iter().position(|t| t == stripped)
    }
}

/// Error rates per 100 words, one element per vocabulary slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NfVector {
    pub values: Vec<f64>,
    /// Edits whose tag was outside the vocabulary and had no `OTHER` slot.
    pub dropped: usize,
}

/// `100 * count(tag) / word_count` for every vocabulary tag.
pub fn extract_nf<'a, I>(
    edits: I,
    word_count: usize,
    vocab: &ErrorTagVocabulary,
) -> Result<NfVector, FeatureError>
where
    I: IntoIterator<Item = &'a Edit>,
{
    if word_count == 0 {
        return Err(FeatureError::ZeroWordCount);
    }
    let mut counts = vec![0usize; vocab.len()];
    let mut dropped = 0;
    for edit in edits {
        match vocab.index_of(&edit.tag) {
            Some(i) => counts[i] += 1,
            None if vocab.other => counts[vocab.tags.len()] += 1,
            None => dropped += 1,
        }
    }
    let values = counts
        .iter()
        .map(|&c| 100.0 * c as f64 / word_count as f64)
        .collect();
    Ok(NfVector { values, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = "S This are a sentences .
A 1 2|||R:VERB:SVA|||is|||REQUIRED|||-NONE-|||0
A 3 4|||R:NOUN:NUM|||sentence|||REQUIRED|||-NONE-|||0

S Fine .
A -1 -1|||noop|||-NONE-|||REQUIRED|||-NONE-|||0
";

    fn edit(tag: &str) -> Edit {
        Edit {
            start: 0,
            end: 1,
            tag: tag.into(),
            correction: String::new(),
            annotator: 0,
        }
    }

    #[test]
    fn parses_blocks_and_drops_noop() {
        let blocks = parse_m2(SAMPLE).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].edits.len(), 2);
        assert_eq!(blocks[0].edits[0].tag, "R:VERB:SVA");
        assert_eq!(blocks[0].edits[1].start, 3);
        assert!(blocks[1].edits.is_empty());
    }

    #[test]
    fn two_verb_edits_in_one_block() {
        let text = "S a b c\nA 0 1|||R:VERB|||x|||REQUIRED|||-NONE-|||0\nA 2 3|||R:VERB|||y|||REQUIRED|||-NONE-|||0\n";
        let blocks = parse_m2(text).unwrap();
        assert_eq!(
            blocks[0].edits.iter().filter(|e| e.tag == "R:VERB").count(),
            2
        );
    }

    #[test]
    fn structural_and_line_errors() {
        assert_eq!(
            parse_m2("A 0 1|||R:VERB|||x|||REQUIRED|||-NONE-|||0\n").unwrap_err(),
            M2Error::EditBeforeSentence { line: 1 }
        );
        // an edit after a blank line belongs to no sentence
        assert_eq!(
            parse_m2("S x\n\nA 0 1|||R:VERB|||y|||REQUIRED|||-NONE-|||0").unwrap_err(),
            M2Error::EditBeforeSentence { line: 3 }
        );
        assert!(matches!(
            parse_m2("S x\nA 0 1|||R:VERB\n"),
            Err(M2Error::MalformedEdit { line: 2, .. })
        ));
        assert!(matches!(
            parse_m2("S x\nA zero 1|||R:VERB|||y|||REQUIRED|||-NONE-|||0\n"),
            Err(M2Error::MalformedEdit { line: 2, .. })
        ));
        assert!(matches!(
            parse_m2("S x\nB nope\n"),
            Err(M2Error::UnknownLine { line: 2 })
        ));
    }

    #[test]
    fn id_comments_group_blocks() {
        let text = "# id=e1\nS a\nA 0 1|||R:DET|||the|||REQUIRED|||-NONE-|||0\n\nS b\nA 0 1|||M:DET|||a|||REQUIRED|||-NONE-|||0\n\n# id=e2\nS c\n";
        let groups = group_by_essay(&parse_m2(text).unwrap());
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].0.as_deref(), Some("e1"));
        assert_eq!(groups[0].1.len(), 2);
        assert!(groups[1].1.is_empty());

        let positional = group_by_essay(&parse_m2(SAMPLE).unwrap());
        assert_eq!(positional.len(), 2);
        assert!(positional.iter().all(|(id, _)| id.is_none()));
    }

    #[test]
    fn default_vocabulary_has_54_unique_tags() {
        let v = ErrorTagVocabulary::default_54();
        assert_eq!(v.len(), 54);
        assert!(ErrorTagVocabulary::new(v.tags().to_vec(), false).is_ok());
        assert!(v.index_of("R:VERB:SVA").is_some());
        assert!(v.index_of("M:SPELL").is_none());
        assert!(v.index_of("UNK").is_none());
        assert_eq!(ErrorTagVocabulary::types_24().len(), 24);
        assert_eq!(
            ErrorTagVocabulary::types_24().index_of("U:PREP"),
            ErrorTagVocabulary::types_24().index_of("PREP")
        );
    }

    #[test]
    fn duplicate_vocabulary_tag_rejected() {
        let err =
            ErrorTagVocabulary::new(vec!["R:VERB".into(), "R:VERB".into()], false).unwrap_err();
        assert_eq!(err, FeatureError::DuplicateTag("R:VERB".into()));
    }

    #[test]
    fn rate_examples() {
        let v = ErrorTagVocabulary::default_54();
        let verb = v.index_of("R:VERB").unwrap();
        let edits = [edit("R:VERB"), edit("R:VERB")];
        let nf = extract_nf(&edits, 400, &v).unwrap();
        assert_eq!(nf.values[verb], 0.5);
        assert_eq!(nf.values.iter().filter(|&&x| x != 0.0).count(), 1);

        let none = extract_nf(&[], 250, &v).unwrap();
        assert!(none.values.iter().all(|&x| x == 0.0));

        let three = [edit("R:DET"), edit("M:PREP"), edit("R:SPELL")];
        let nf = extract_nf(&three, 100, &v).unwrap();
        assert_eq!(nf.values.iter().filter(|&&x| x == 1.0).count(), 3);

        assert_eq!(
            extract_nf(&edits, 0, &v).unwrap_err(),
            FeatureError::ZeroWordCount
        );
    }

    #[test]
    fn uncovered_tags_dropped_or_binned() {
        let v = ErrorTagVocabulary::new(vec!["R:DET".into()], false).unwrap();
        let edits = [edit("R:DET"), edit("UNK"), edit("R:WO")];
        let nf = extract_nf(&edits, 50, &v).unwrap();
        assert_eq!(nf.values, [2.0]);
        assert_eq!(nf.dropped, 2);
        let nf = extract_nf(&edits, 50, &v.with_other(true)).unwrap();
        assert_eq!(nf.values, [2.0, 4.0]);
        assert_eq!(nf.dropped, 0);
    }

    fn tag_strategy() -> impl Strategy<Value = String> {
        let tags = ErrorTagVocabulary::default_54().tags().to_vec();
        prop_oneof![proptest::sample::select(tags), Just("UNK".to_string())]
    }

    proptest! {
        #[test]
        fn doubling_edits_and_words_is_invariant(tags in proptest::collection::vec(tag_strategy(), 0..30), wc in 1usize..500) {
            let v = ErrorTagVocabulary::default_54();
            let edits: Vec<Edit> = tags.iter().map(|t| edit(t)).collect();
            let doubled: Vec<Edit> = edits.iter().chain(edits.iter()).cloned().collect();
            let a = extract_nf(&edits, wc, &v).unwrap();
            let b = extract_nf(&doubled, 2 * wc, &v).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }

        #[test]
        fn rates_sum_to_covered_edits(tags in proptest::collection::vec(tag_strategy(), 0..30), wc in 1usize..500) {
            let v = ErrorTagVocabulary::default_54();
            let edits: Vec<Edit> = tags.iter().map(|t| edit(t)).collect();
            let nf = extract_nf(&edits, wc, &v).unwrap();
            let covered = edits.len() - nf.dropped;
            let sum: f64 = nf.values.iter().sum();
            prop_assert!((sum * wc as f64 / 100.0 - covered as f64).abs() < 1e-9);
            prop_assert!(nf.values.iter().all(|&x| x >= 0.0 && x.is_finite()));
        }

        #[test]
        fn reserialization_preserves_tag_multiset(tags in proptest::collection::vec(tag_strategy(), 0..12), split in 0usize..12) {
            let edits: Vec<Edit> = tags.iter().map(|t| edit(t)).collect();
            let cut = split.min(edits.len());
            let blocks = vec![
                M2Block { essay_id: Some("a".into()), sentence: "x y".into(), edits: edits[..cut].to_vec() },
                M2Block { essay_id: Some("b".into()), sentence: "z".into(), edits: edits[cut..].to_vec() },
            ];
            let reparsed = parse_m2(&write_m2(&blocks)).unwrap();
            let mut before: Vec<&str> = blocks.iter().flat_map(|b| b.edits.iter().map(|e| e.tag.as_str())).collect();
            let mut after: Vec<&str> = reparsed.iter().flat_map(|b| b.edits.iter().map(|e| e.tag.as_str())).collect();
            before.sort();
            after.sort();
            prop_assert_eq!(before, after);
            prop_assert_eq!(reparsed, blocks);
        }
    }
}
