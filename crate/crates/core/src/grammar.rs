//! Grammatical-item catalog: a token-level pattern DSL, compiled once and
//! matched against essay token sequences.
//!
//! Pattern syntax (whitespace separates tokens):
//!
//! | form        | matches                                                  |
//! |-------------|----------------------------------------------------------|
//! | `word`      | one token equal to `word` (case-insensitive)             |
//! | `(a b\|c)`  | alternation of token sequences                           |
//! | `x?`        | optional atom                                            |
//! | `\w`        | any single word token (never punctuation)                |
//! | `\w{m,n}`   | between `m` and `n` word tokens; `\w{n}` exactly `n`     |
//! | `<CLASS>`   | one token from a closed-class lexicon entry              |
//! | `\(` etc.   | literal special character                                |
//!
//! A top-level `a|b` is allowed without parentheses. Matching is leftmost,
//! non-overlapping, and backtracking with greedy preference (longer
//! wildcards first, optional atoms taken before skipped, left alternatives
//! first), the same preference order a regex engine uses on the
//! space-joined token rendering.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::is_word;

const MAX_WILDCARD: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("duplicate item {0}")]
    DuplicateItem(usize),
    #[error("item ids must be dense 0..{k}; item {missing} is missing")]
    SparseIds { k: usize, missing: usize },
    #[error("item {item}: syntax error at column {column}: {message}")]
    Syntax {
        item: usize,
        column: usize,
        message: String,
    },
    #[error("item {item}: unknown lexicon class <{class}> at column {column}")]
    UnknownClass {
        item: usize,
        column: usize,
        class: String,
    },
    #[error("item {item}: pattern can match an empty token sequence")]
    EmptyMatch { item: usize },
    #[error("item {item}: merge target {target} is invalid ({reason})")]
    BadMerge {
        item: usize,
        target: usize,
        reason: &'static str,
    },
}

/// One catalog entry as it appears in the catalog file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarPattern {
    pub id: usize,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<String>,
    pub expr: String,
    /// Sum this item's counts into another (root) item before binarizing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_into: Option<usize>,
}

/// Closed-class word lists referenced by `<CLASS>` placeholders.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lexicon {
    classes: BTreeMap<String, BTreeSet<String>>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<I, S>(&mut self, class: &str, words: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let entry = self.classes.entry(class.to_string()).or_default();
        entry.extend(words.into_iter().map(|w| w.as_ref().to_lowercase()));
    }

    pub fn class(&self, name: &str) -> Option<&BTreeSet<String>> {
        self.classes.get(name)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Word(String),
    Class(usize),
    Any { min: usize, max: usize },
    Group(Vec<Vec<Node>>),
    Optional(alloc::boxed::Box<Node>),
}

impl Node {
    fn min_len(&self) -> usize {
        match self {
            Node::Word(_) | Node::Class(_) => 1,
            Node::Any { min, .. } => *min,
            Node::Group(alts) => alts.iter().map(|s| seq_min_len(s)).min().unwrap_or(0),
            Node::Optional(_) => 0,
        }
    }
}

fn seq_min_len(seq: &[Node]) -> usize {
    seq.iter().map(Node::min_len).sum()
}

struct Parser<'a> {
    item: usize,
    chars: Vec<char>,
    pos: usize,
    lexicon: &'a Lexicon,
    classes: &'a mut Vec<BTreeSet<String>>,
    class_index: &'a mut BTreeMap<String, usize>,
}

const SPECIAL: &[char] = &['(', ')', '|', '?', '<', '>', '\\', '{', '}'];

impl Parser<'_> {
    fn err(&self, column: usize, message: &str) -> GrammarError {
        GrammarError::Syntax {
            item: self.item,
            column,
            message: message.to_string(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn parse_alternation(
        &mut self,
        open_at: Option<usize>,
    ) -> Result<Vec<Vec<Node>>, GrammarError> {
        let mut alts = Vec::new();
        loop {
            let start = self.pos;
            let seq = self.parse_sequence()?;
            if seq.is_empty() {
                return Err(self.err(start, "empty alternative"));
            }
            alts.push(seq);
            self.skip_ws();
            match self.peek() {
                Some('|') => self.pos += 1,
                Some(')') => {
                    if open_at.is_none() {
                        return Err(self.err(self.pos, "unbalanced ')'"));
                    }
                    self.pos += 1;
                    return Ok(alts);
                }
                None => {
                    if let Some(open) = open_at {
                        return Err(self.err(open, "unclosed '('"));
                    }
                    return Ok(alts);
                }
                Some(c) => return Err(self.err(self.pos, &alloc::format!("unexpected '{c}'"))),
            }
        }
    }

    fn parse_sequence(&mut self) -> Result<Vec<Node>, GrammarError> {
        let mut seq = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None | Some('|') | Some(')') => return Ok(seq),
                Some('?') => return Err(self.err(self.pos, "'?' must follow an atom")),
                _ => {}
            }
            let mut atom = self.parse_atom()?;
            if self.peek() == Some('?') {
                self.pos += 1;
                if self.peek() == Some('?') {
                    return Err(self.err(self.pos, "repeated '?'"));
                }
                atom = Node::Optional(alloc::boxed::Box::new(atom));
            }
            seq.push(atom);
        }
    }

    fn parse_atom(&mut self) -> Result<Node, GrammarError> {
        let start = self.pos;
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let alts = self.parse_alternation(Some(start))?;
                Ok(Node::Group(alts))
            }
            Some('<') => {
                self.pos += 1;
                let name_start = self.pos;
                while self.peek().is_some_and(|c| c != '>' && !c.is_whitespace()) {
                    self.pos += 1;
                }
                if self.peek() != Some('>') {
                    return Err(self.err(start, "unclosed '<'"));
                }
                let name: String = self.chars[name_start..self.pos].iter().collect();
                self.pos += 1;
                if name.is_empty() {
                    return Err(self.err(start, "empty class name"));
                }
                let Some(words) = self.lexicon.class(&name) else {
                    return Err(GrammarError::UnknownClass {
                        item: self.item,
                        column: start,
                        class: name,
                    });
                };
                let next = self.classes.len();
                let idx = *self.class_index.entry(name).or_insert(next);
                if idx == next {
                    self.classes.push(words.clone());
                }
                Ok(Node::Class(idx))
            }
            Some('\\') if self.chars.get(self.pos + 1) == Some(&'w') => {
                self.pos += 2;
                if self.peek() != Some('{') {
                    return Ok(Node::Any { min: 1, max: 1 });
                }
                self.pos += 1;
                let (min, max) = self.parse_bounds(start)?;
                Ok(Node::Any { min, max })
            }
            Some('>') | Some('{') | Some('}') => {
                Err(self.err(start, "unexpected special character"))
            }
            _ => {
                let mut word = String::new();
                while let Some(c) = self.peek() {
                    if c.is_whitespace() {
                        break;
                    }
                    if c == '\\' {
                        match self.chars.get(self.pos + 1) {
                            Some(&e) if SPECIAL.contains(&e) => {
                                word.extend(e.to_lowercase());
                                self.pos += 2;
                                continue;
                            }
                            _ => return Err(self.err(self.pos, "invalid escape")),
                        }
                    }
                    if SPECIAL.contains(&c) {
                        break;
                    }
                    word.extend(c.to_lowercase());
                    self.pos += 1;
                }
                if word.is_empty() {
                    return Err(self.err(start, "expected a token"));
                }
                Ok(Node::Word(word))
            }
        }
    }

    fn parse_number(&mut self) -> Option<usize> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return None;
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        s.parse().ok()
    }

    fn parse_bounds(&mut self, start: usize) -> Result<(usize, usize), GrammarError> {
        let min = self
            .parse_number()
            .ok_or_else(|| self.err(self.pos, "expected a number"))?;
        let max = if self.peek() == Some(',') {
            self.pos += 1;
            self.parse_number()
                .ok_or_else(|| self.err(self.pos, "expected a number"))?
        } else {
            min
        };
        if self.peek() != Some('}') {
            return Err(self.err(self.pos, "expected '}'"));
        }
        self.pos += 1;
        if max == 0 || max < min || max > MAX_WILDCARD {
            return Err(self.err(
                start,
                "wildcard bounds must satisfy 0 <= m <= n, 1 <= n <= 32",
            ));
        }
        Ok((min, max))
    }
}

#[derive(Debug, Clone)]
struct CompiledItem {
    pattern: GrammarPattern,
    root: Vec<Node>,
}

struct Tok {
    text: String,
    word: bool,
}

/// A compiled, immutable grammatical-item catalog.
#[derive(Debug, Clone)]
pub struct Catalog {
    items: Vec<CompiledItem>,
    classes: Vec<BTreeSet<String>>,
    /// Output slot of each raw item.
    slot_of: Vec<usize>,
    /// Raw item id of each output slot.
    roots: Vec<usize>,
}

impl Catalog {
    pub fn compile(
        mut patterns: Vec<GrammarPattern>,
        lexicon: &Lexicon,
    ) -> Result<Self, GrammarError> {
        patterns.sort_by_key(|p| p.id);
        for w in patterns.windows(2) {
            if w[0].id == w[1].id {
                return Err(GrammarError::DuplicateItem(w[0].id));
            }
        }
        if let Some((i, _)) = patterns.iter().enumerate().find(|(i, p)| p.id != *i) {
            return Err(GrammarError::SparseIds {
                k: patterns.len(),
                missing: i,
            });
        }

        let mut classes = Vec::new();
        let mut class_index = BTreeMap::new();
        let mut items = Vec::with_capacity(patterns.len());
        for pattern in patterns {
            let mut parser = Parser {
                item: pattern.id,
                chars: pattern.expr.chars().collect(),
                pos: 0,
                lexicon,
                classes: &mut classes,
                class_index: &mut class_index,
            };
            let alts = parser.parse_alternation(None)?;
            let root = if alts.len() == 1 {
                alts.into_iter().next().unwrap_or_default()
            } else {
                vec![Node::Group(alts)]
            };
            if seq_min_len(&root) == 0 {
                return Err(GrammarError::EmptyMatch { item: pattern.id });
            }
            items.push(CompiledItem { pattern, root });
        }

        let mut roots = Vec::new();
        let mut slot_of = vec![usize::MAX; items.len()];
        for item in &items {
            if item.pattern.merge_into.is_none() {
                slot_of[item.pattern.id] = roots.len();
                roots.push(item.pattern.id);
            }
        }
        for item in &items {
            let Some(target) = item.pattern.merge_into else {
                continue;
            };
            let id = item.pattern.id;
            let bad = |reason| GrammarError::BadMerge {
                item: id,
                target,
                reason,
            };
            if target == id {
                return Err(bad("self reference"));
            }
            let Some(t) = items.get(target) else {
                return Err(bad("no such item"));
            };
            if t.pattern.merge_into.is_some() {
                return Err(bad("target is itself merged"));
            }
            slot_of[id] = slot_of[target];
        }
        Ok(Self {
            items,
            classes,
            slot_of,
            roots,
        })
    }

    /// Output dimension K (items that are not merged into another).
    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// Number of raw catalog entries, merged ones included.
    pub fn raw_len(&self) -> usize {
        self.items.len()
    }

    /// Labels of the K output items.
    pub fn labels(&self) -> Vec<&str> {
        self.roots
            .iter()
            .map(|&r| self.items[r].pattern.label.as_str())
            .collect()
    }

    pub fn patterns(&self) -> impl Iterator<Item = &GrammarPattern> {
        self.items.iter().map(|i| &i.pattern)
    }

    /// Per-raw-item non-overlapping match counts.
    pub fn raw_counts<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        let toks: Vec<Tok> = tokens
            .iter()
            .map(|t| Tok {
                text: t.as_ref().to_lowercase(),
                word: is_word(t.as_ref()),
            })
            .collect();
        self.items
            .iter()
            .map(|item| self.count_one(&item.root, &toks))
            .collect()
    }

    /// Output-slot counts of length [`Catalog::len`]; merged items add into
    /// their target.
    pub fn count_items<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        let raw = self.raw_counts(tokens);
        let mut out = vec![0u32; self.roots.len()];
        for (id, c) in raw.into_iter().enumerate() {
            out[self.slot_of[id]] += c;
        }
        out
    }

    fn count_one(&self, root: &[Node], toks: &[Tok]) -> u32 {
        let mut count = 0;
        let mut pos = 0;
        while pos < toks.len() {
            match self.match_seq(root, toks, pos, &mut |p| Some(p)) {
                Some(end) if end > pos => {
                    count += 1;
                    pos = end;
                }
                _ => pos += 1,
            }
        }
        count
    }

    fn match_seq(
        &self,
        seq: &[Node],
        toks: &[Tok],
        pos: usize,
        k: &mut dyn FnMut(usize) -> Option<usize>,
    ) -> Option<usize> {
        let Some((first, rest)) = seq.split_first() else {
            return k(pos);
        };
        self.match_node(first, toks, pos, &mut |p| self.match_seq(rest, toks, p, k))
    }

    fn match_node(
        &self,
        node: &Node,
        toks: &[Tok],
        pos: usize,
        k: &mut dyn FnMut(usize) -> Option<usize>,
    ) -> Option<usize> {
        match node {
            Node::Word(w) => match toks.get(pos) {
                Some(t) if &t.text == w => k(pos + 1),
                _ => None,
            },
            Node::Class(c) => match toks.get(pos) {
                Some(t) if self.classes[*c].contains(&t.text) => k(pos + 1),
                _ => None,
            },
            Node::Any { min, max } => {
                let avail = toks[pos.min(toks.len())..]
                    .iter()
                    .take(*max)
                    .take_while(|t| t.word)
                    .count();
                if avail < *min {
                    return None;
                }
                (*min..=avail).rev().find_map(|n| k(pos + n))
            }
            Node::Group(alts) => alts
                .iter()
                .find_map(|alt| self.match_seq(alt, toks, pos, k)),
            Node::Optional(inner) => match self.match_node(inner, toks, pos, k) {
                Some(end) => Some(end),
                None => k(pos),
            },
        }
    }
}

/// Binary grammatical-item usage vector (or its real-valued transform).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfVector {
    pub values: Vec<f64>,
    pub binary: bool,
}

impl PfVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Elementwise `count > 0` indicator.
pub fn binarize(counts: &[u32]) -> PfVector {
    PfVector {
        values: counts
            .iter()
            .map(|&c| if c > 0 { 1.0 } else { 0.0 })
            .collect(),
        binary: true,
    }
}
