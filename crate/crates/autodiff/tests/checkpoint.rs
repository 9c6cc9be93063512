use guidesum_autodiff::{read_params, write_params, AutodiffError, Init, ParamSet, CHECKPOINT_MAGIC};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sample(seed: u64) -> ParamSet<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    p.add("embed.tokens", &[7, 4], Init::Normal { std: 0.02 }, &mut rng).unwrap();
    p.add("layer.0.weight", &[4, 4], Init::ScaledUniform, &mut rng).unwrap();
    p.add("layer.0.bias", &[4], Init::Zeros, &mut rng).unwrap();
    p
}

#[test]
fn header_layout() {
    let mut buf = Vec::new();
    write_params(&sample(0), &mut buf).unwrap();
    assert_eq!(&buf[..4], CHECKPOINT_MAGIC);
    assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
    assert_eq!(buf[8], 4);
    assert_eq!(u32::from_le_bytes(buf[9..13].try_into().unwrap()), 3);
}

#[test]
fn width_mismatch_is_rejected() {
    let mut buf = Vec::new();
    write_params(&sample(1), &mut buf).unwrap();
    let err = read_params::<f64, _>(&buf[..]).unwrap_err();
    assert!(matches!(err, AutodiffError::Checkpoint(_)));
}

#[test]
fn truncated_file_is_rejected() {
    let mut buf = Vec::new();
    write_params(&sample(2), &mut buf).unwrap();
    buf.pop();
    assert!(read_params::<f32, _>(&buf[..]).is_err());
}

proptest! {
    #[test]
    fn round_trip_is_bit_exact(seed in any::<u64>()) {
        let original = sample(seed).cast::<f64>();
        let mut buf = Vec::new();
        write_params(&original, &mut buf).unwrap();
        let loaded = read_params::<f64, _>(&buf[..]).unwrap();
        prop_assert_eq!(loaded.len(), original.len());
        for ((_, n1, t1), (_, n2, t2)) in original.iter().zip(loaded.iter()) {
            prop_assert_eq!(n1, n2);
            prop_assert_eq!(t1.shape(), t2.shape());
            let bits1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let bits2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits1, bits2);
        }
        let mut again = Vec::new();
        write_params(&loaded, &mut again).unwrap();
        prop_assert_eq!(buf, again);
    }
}
