use guidesum::architecture::{
    classifier_input, corrector_source, target_sequence, Activation, ClassifierModel, ModelConfig, Seq2SeqExample,
    Seq2SeqKind, Seq2SeqModel,
};
use guidesum::corpus::{TokenId, BOS, EOS};
use guidesum_autodiff::{finite_difference_check, ParamSet, Tape};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const VOCAB: usize = 12;

fn micro(layers: usize, shared: usize) -> ModelConfig {
    ModelConfig {
        layers,
        shared_bottom_layers: shared,
        model_dim: 8,
        heads: 2,
        ffn_dim: 16,
        max_len: 12,
        float_width: 64,
        activation: Activation::Gelu,
    }
}

/// Replaces initial values with a wider spread so every path carries gradient.
fn spread(params: &mut ParamSet<f64>, rng: &mut ChaCha8Rng) {
    for id in params.ids().collect::<Vec<_>>() {
        for x in params.get_mut(id).data_mut() {
            *x = rng.random_range(-0.5..0.5);
        }
    }
}

#[test]
fn fully_shared_encoders_pass_the_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = micro(2, 2);
    let Seq2SeqModel { layout, mut params } = Seq2SeqModel::<f64>::new(&cfg, Seq2SeqKind::Guided, VOCAB, &mut rng).unwrap();
    spread(&mut params, &mut rng);
    assert!(params.iter().all(|(_, name, _)| !name.starts_with("enc.guide.")));
    let ex = Seq2SeqExample { source: vec![5, 6, 7, 8], guidance: Some(vec![9, 4, 10]), target: vec![BOS, 6, 11, EOS] };
    let report = finite_difference_check(&mut params, |t| Ok(layout.loss_sum(t, &ex).unwrap().0), TOL).unwrap();
    assert!(report.passed(), "{:?}", report.worst());
}

#[test]
fn corrector_passes_the_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = micro(2, 1);
    let Seq2SeqModel { layout, mut params } = Seq2SeqModel::<f64>::new(&cfg, Seq2SeqKind::Plain, VOCAB, &mut rng).unwrap();
    spread(&mut params, &mut rng);
    let ex = Seq2SeqExample {
        source: corrector_source(&[5, 7, 6], &[5, 8, 6, 9], cfg.max_len),
        guidance: None,
        target: target_sequence(&[5, 8, 6], cfg.max_len),
    };
    let report = finite_difference_check(&mut params, |t| Ok(layout.loss_sum(t, &ex).unwrap().0), TOL).unwrap();
    assert!(report.passed(), "{:?}", report.worst());
}

#[test]
fn classifier_passes_the_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = micro(2, 0);
    let ClassifierModel { layout, mut params } = ClassifierModel::<f64>::new(&cfg, VOCAB, &mut rng).unwrap();
    spread(&mut params, &mut rng);
    let input = classifier_input(&[5, 7], &[5, 8, 9, 10], cfg.max_len);
    for label in 0..2 {
        let report = finite_difference_check(&mut params, |t| Ok(layout.loss_sum(t, &input, label).unwrap()), TOL).unwrap();
        assert!(report.passed(), "label {label}: {:?}", report.worst());
    }
}

fn logits_rows(model: &Seq2SeqModel<f64>, source: &[TokenId], guidance: &[TokenId], prefix: &[TokenId]) -> Vec<Vec<f64>> {
    let mut tape = Tape::new(&model.params);
    let zd = model.layout.encode_source(&mut tape, source).unwrap();
    let zg = model.layout.encode_guidance(&mut tape, guidance).unwrap();
    let logits = model.layout.decode(&mut tape, prefix, zd, Some(zg)).unwrap();
    let t = tape.value(logits);
    (0..prefix.len()).map(|r| t.row(r).to_vec()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn decoder_is_causal(
        seed in any::<u64>(),
        prefix in prop::collection::vec(4u32..VOCAB as u32, 1..8),
        at in 0usize..8,
        token in 4u32..VOCAB as u32,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Seq2SeqModel::<f64>::new(&micro(2, 1), Seq2SeqKind::Guided, VOCAB, &mut rng).unwrap();
        let mut a = vec![BOS];
        a.extend(&prefix);
        let at = 1 + at % prefix.len();
        let mut b = a.clone();
        b[at] = token;
        let (la, lb) = (logits_rows(&model, &[5, 6, 7], &[8, 9], &a), logits_rows(&model, &[5, 6, 7], &[8, 9], &b));
        for r in 0..at {
            prop_assert_eq!(&la[r], &lb[r]);
        }
    }
}
