use guidesum::corpus::{tokenize, CorpusRecord, Dataset, Split};
use guidesum::corruption::{
    build_corruption_dataset, extract_typed_spans, pronoun_replacements, Label, SpanKind, SpanSource,
};
use proptest::prelude::*;
use proptest::strategy::ValueTree;

const SUBJECT: [&str; 7] = ["i", "you", "he", "she", "it", "we", "they"];
const OBJECT: [&str; 7] = ["me", "you", "him", "her", "it", "us", "them"];
const POSS_DEP: [&str; 7] = ["my", "your", "his", "her", "its", "our", "their"];
const POSS_IND: [&str; 7] = ["mine", "yours", "his", "hers", "its", "ours", "theirs"];
const REFLEXIVE: [&str; 8] = ["myself", "yourself", "himself", "herself", "itself", "ourselves", "yourselves", "themselves"];

fn classes(w: &str) -> Vec<usize> {
    let tables: [&[&str]; 5] = [&SUBJECT, &OBJECT, &POSS_DEP, &POSS_IND, &REFLEXIVE];
    (0..5).filter(|&i| tables[i].contains(&w)).collect()
}

#[test]
fn pronoun_swaps_never_cross_case_classes() {
    let all = SUBJECT.iter().chain(&OBJECT).chain(&POSS_DEP).chain(&POSS_IND).chain(&REFLEXIVE);
    for &w in all {
        let own = classes(w);
        for r in pronoun_replacements(w) {
            assert_ne!(r, w);
            let theirs = classes(r);
            assert!(own.iter().all(|c| theirs.contains(c)), "{w} -> {r}");
        }
        for cased in [w.to_uppercase(), format!("{}{}", &w[..1].to_uppercase(), &w[1..])] {
            assert_eq!(pronoun_replacements(&cased), pronoun_replacements(w));
        }
    }
}

fn word() -> impl Strategy<Value = &'static str> {
    prop::sample::select(vec![
        "I", "my", "he", "she", "her", "it", "they", "their", "himself", "Sarah", "John", "Boston", "Zoloft", "3", "12",
        "4.5", "2 weeks", "May 3", "Monday", "10/12", "the", "panic", "felt", "and", "doctor", "took", "mg", ".", ",",
    ])
}

fn text() -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 1..20).prop_map(|w| w.join(" "))
}

fn corpus() -> impl Strategy<Value = Dataset> {
    prop::collection::vec((text(), text()), 1..6).prop_map(|pairs| {
        let records = pairs
            .into_iter()
            .enumerate()
            .map(|(i, (document, summary))| CorpusRecord { id: format!("r{i}"), document, summary: Some(summary) })
            .collect();
        let mut ds = Dataset::new();
        ds.insert(Split::Train, records).unwrap();
        ds
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn swaps_are_sound_and_minimal(ds in corpus(), seed in any::<u64>()) {
        let sets = build_corruption_dataset(&ds, seed);
        for rec in &sets.train.records {
            let source = &ds.split(Split::Train).iter().find(|r| rec.id.starts_with(&format!("{}:", r.id))).unwrap();
            prop_assert_eq!(rec.clean.as_str(), source.summary_text());
            prop_assert_eq!(rec.label, Label::Incorrect);
            prop_assert_eq!(&rec.clean[rec.start..rec.end], rec.original.as_str());
            let (s, e) = rec.corrupted_span();
            prop_assert_eq!(&rec.corrupted[s..e], rec.replacement.as_str());
            prop_assert_eq!(&rec.corrupted[..s], &rec.clean[..rec.start]);
            prop_assert_eq!(&rec.corrupted[e..], &rec.clean[rec.end..]);
            prop_assert_ne!(tokenize(&rec.corrupted), tokenize(&rec.clean));

            // Tokens outside the swapped span are untouched.
            let before = tokenize(&rec.clean[..rec.start]);
            let after = tokenize(&rec.clean[rec.end..]);
            let corrupted = tokenize(&rec.corrupted);
            prop_assert_eq!(&corrupted[..before.len()], &before[..]);
            prop_assert_eq!(&corrupted[corrupted.len() - after.len()..], &after[..]);

            let spans = extract_typed_spans(&rec.clean, SpanSource::Summary);
            prop_assert!(spans.iter().any(|sp| sp.kind == rec.kind && sp.start == rec.start && sp.end == rec.end));
            if rec.kind == SpanKind::Pronoun {
                let own = classes(&rec.original.to_lowercase());
                let theirs = classes(&rec.replacement.to_lowercase());
                prop_assert!(own.iter().all(|c| theirs.contains(c)));
            } else {
                let doc_spans = extract_typed_spans(&source.document, SpanSource::Document);
                prop_assert!(doc_spans.iter().any(|d| d.kind == rec.kind && d.text == rec.replacement));
            }
        }
        let kinds_per_id = |id: &str| sets.train.records.iter().filter(|r| r.id.starts_with(id)).count();
        for r in ds.split(Split::Train) {
            let prefix = format!("{}:", r.id);
            prop_assert!(kinds_per_id(&prefix) <= 4);
        }
        prop_assert_eq!(sets.train.classifier.len(), ds.len(Split::Train) + sets.train.records.len());
        prop_assert_eq!(sets.train.corrector.len(), sets.train.records.len());
    }

    #[test]
    fn corruption_is_deterministic(ds in corpus(), seed in any::<u64>()) {
        prop_assert_eq!(build_corruption_dataset(&ds, seed), build_corruption_dataset(&ds, seed));
    }

    #[test]
    fn spans_do_not_overlap(t in text()) {
        let spans = extract_typed_spans(&t, SpanSource::Document);
        for w in spans.windows(2) {
            prop_assert!(w[0].end <= w[1].start);
        }
        for s in &spans {
            prop_assert_eq!(&t[s.start..s.end], s.text.as_str());
        }
    }
}

#[test]
fn reports_how_often_a_swap_is_found() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let strategy = corpus();
    let (mut records, mut attempts) = (0usize, 0usize);
    for _ in 0..200 {
        let ds = strategy.new_tree(&mut runner).unwrap().current();
        attempts += 4 * ds.len(Split::Train);
        records += build_corruption_dataset(&ds, 7).train.records.len();
    }
    let ratio = records as f64 / attempts as f64;
    println!("swap found for {records}/{attempts} record-kind pairs ({ratio:.3})");
    assert!(ratio > 0.0);
}
