use aesg_core::grammar::GrammarPattern;
use aesg_core::{binarize, Catalog, Lexicon};
use proptest::prelude::*;

const WORDS: &[&str] = &[
    "if", "it", "rains", "we", "will", "have", "has", "never", "seen", "been", "by", "than",
    "more", "can", "going", "to", "who", "which", "there", "is", "are", "because", "they", "do",
    "not", "did", "the", "dog", ",",
];

fn catalog() -> Catalog {
    let exprs = [
        "if \\w{1,4} ,",
        "(have|has) (not|never)? <PP>",
        "(is|are) <PP> by",
        "\\w{1,2} than",
        "<MODAL> \\w",
        "going to \\w",
        "\\w (who|which)",
        "there (is|are)",
        "because <PRON>",
        "(do|did) not",
    ];
    let patterns = exprs
        .iter()
        .enumerate()
        .map(|(id, e)| GrammarPattern {
            id,
            label: format!("item{id}"),
            level: None,
            expr: e.to_string(),
            merge_into: None,
        })
        .collect();
    let mut lexicon = Lexicon::new();
    lexicon.insert("MODAL", ["can", "will", "would"]);
    lexicon.insert("PP", ["seen", "been", "done"]);
    lexicon.insert("PRON", ["it", "we", "they"]);
    Catalog::compile(patterns, &lexicon).unwrap()
}

fn tokens() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(proptest::sample::select(WORDS), 0..40)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    // No pattern contains ".", so a full stop is a hard boundary.
    #[test]
    fn appending_after_a_separator_never_decreases_counts(a in tokens(), b in tokens()) {
        let cat = catalog();
        let before = cat.count_items(&a);
        let mut joined = a.clone();
        joined.push(".".into());
        joined.extend(b);
        let after = cat.count_items(&joined);
        prop_assert!(before.iter().zip(&after).all(|(x, y)| x <= y));
    }

    #[test]
    fn concatenation_dominates_elementwise_max(a in tokens(), b in tokens()) {
        let cat = catalog();
        let (ca, cb) = (cat.count_items(&a), cat.count_items(&b));
        let mut joined = a.clone();
        joined.push(".".into());
        joined.extend(b);
        let c = cat.count_items(&joined);
        for j in 0..c.len() {
            prop_assert!(c[j] >= ca[j].max(cb[j]));
        }
    }

    #[test]
    fn binarize_is_idempotent_under_scaling(a in tokens(), factor in 1u32..5) {
        let v = binarize(&catalog().count_items(&a));
        let scaled: Vec<u32> = v.values.iter().map(|&x| x as u32 * factor).collect();
        prop_assert_eq!(binarize(&scaled), v);
    }
}

#[test]
fn counting_is_thread_independent() {
    let cat = catalog();
    let text: Vec<String> = (0..400)
        .map(|i| WORDS[(i * 7 + 3) % WORDS.len()].to_string())
        .collect();
    let reference = cat.count_items(&text);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..4).map(|_| s.spawn(|| cat.count_items(&text))).collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), reference);
        }
    });
}
