use std::fs;

use guidesum::corpus::{
    decode_ids, encode_text, load_corpus, normalize, tokenize, Split, TokenSequence, Vocabulary, PAD,
};
use guidesum::Error;
use proptest::prelude::*;

fn vocab_for(text: &str) -> Vocabulary {
    let mut toks = tokenize(text);
    toks.sort();
    toks.dedup();
    Vocabulary::from_tokens(toks.into_iter().filter(|t| t != "[SEP]")).unwrap()
}

#[test]
fn loader_keeps_order_and_reports_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.jsonl");
    fs::write(
        &path,
        "{\"id\":\"a\",\"document\":\"x\",\"summary\":\"y\"}\n\
         {\"id\":\"b\",\"document\":\"x\",\"summary\":\"y\"}\n\
         {\"id\":\"c\",\"document\":\"x\",\"summary\":\"y\"}\n",
    )
    .unwrap();
    let recs = load_corpus(&path, Split::Train).unwrap();
    assert_eq!(recs.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);

    fs::write(&path, "{\"id\":\"a\",\"document\":\"x\",\"summary\":\"y\"}\n{oops\n").unwrap();
    match load_corpus(&path, Split::Train) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected a parse error, got {other:?}"),
    }

    fs::write(
        &path,
        "{\"id\":\"a\",\"document\":\"x\",\"summary\":\"y\"}\n{\"id\":\"a\",\"document\":\"z\",\"summary\":\"w\"}\n",
    )
    .unwrap();
    assert!(matches!(load_corpus(&path, Split::Train), Err(Error::DuplicateId(id)) if id == "a"));
}

#[test]
fn vocabulary_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.txt");
    let v = vocab_for("my anxiety was back , again .");
    v.save(&path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("<pad>\n<bos>\n<eos>\n<unk>\n[SEP]\n"));
    assert_eq!(Vocabulary::load(&path).unwrap(), v);
}

proptest! {
    #[test]
    fn encode_decode_round_trip(text in "[A-Za-z0-9 ,.!?'-]{0,60}") {
        let v = vocab_for(&text);
        let seq = encode_text(&text, &v, usize::MAX);
        prop_assert_eq!(decode_ids(seq.ids(), &v).unwrap(), normalize(&text));
    }

    #[test]
    fn encoding_is_deterministic(text in "[a-z ]{0,40}") {
        let v = vocab_for(&text);
        prop_assert_eq!(encode_text(&text, &v, 64), encode_text(&text, &v, 64));
    }

    #[test]
    fn vocabulary_is_a_bijection(words in prop::collection::btree_set("[a-z]{1,6}", 0..30)) {
        let v = Vocabulary::from_tokens(words.iter().cloned()).unwrap();
        for w in &words {
            let id = v.id_of(w);
            prop_assert_eq!(v.id_of(v.token_of(id).unwrap()), id);
        }
    }

    #[test]
    fn truncation_keeps_padding_a_suffix(
        ids in prop::collection::vec(1u32..50, 0..20),
        pad_to in 0usize..30,
        cut in 0usize..30,
    ) {
        let seq = TokenSequence::new(ids.clone()).unwrap().padded(pad_to).truncated(cut);
        let first_pad = seq.ids().iter().position(|&t| t == PAD).unwrap_or(seq.len());
        prop_assert!(seq.ids()[first_pad..].iter().all(|&t| t == PAD));
        prop_assert!(seq.ids()[..first_pad].iter().zip(&ids).all(|(a, b)| a == b));
    }
}
