use autoprep::backends::{decode_frame, encode_frame, BackendRole, FrameHeader, ProtocolError};
use proptest::prelude::*;
use serde_json::json;

fn header(role: BackendRole, samples: u64, dim: Option<u64>) -> FrameHeader {
    FrameHeader {
        sample_rate: 16_000,
        num_samples: samples,
        dim,
        ..FrameHeader::new(role, "enhance")
    }
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn aux_strategy() -> impl Strategy<Value = Option<serde_json::Value>> {
    prop_oneof![
        Just(None),
        (any::<i64>(), -1e300f64..1e300, "[a-z_]{0,12}").prop_map(|(i, f, s)| Some(json!({"i": i, "f": f, "s": s}))),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn round_trip_is_bit_exact(
        role in prop::sample::select(BackendRole::ALL.to_vec()),
        payload in prop::collection::vec(any::<u32>().prop_map(f32::from_bits), 0..512),
        split in any::<prop::sample::Index>(),
        with_dim in any::<bool>(),
        aux in aux_strategy(),
    ) {
        let cut = if payload.is_empty() { 0 } else { split.index(payload.len() + 1) };
        let (samples, dim) = if with_dim {
            (cut as u64, Some((payload.len() - cut) as u64))
        } else {
            (payload.len() as u64, None)
        };
        let mut h = header(role, samples, dim);
        h.aux = aux;
        let bytes = encode_frame(&h, &payload).unwrap();
        let frame = decode_frame(&bytes).unwrap();
        prop_assert_eq!(&frame.header, &h);
        prop_assert_eq!(bits(&frame.payload), bits(&payload));
        prop_assert_eq!(encode_frame(&frame.header, &frame.payload).unwrap(), bytes);
    }

    #[test]
    fn truncation_is_detected(payload in prop::collection::vec(-1.0f32..1.0, 1..64), cut in any::<prop::sample::Index>()) {
        let bytes = encode_frame(&header(BackendRole::Enhancer, payload.len() as u64, None), &payload).unwrap();
        let keep = cut.index(bytes.len());
        prop_assert!(decode_frame(&bytes[..keep]).is_err());
    }
}

#[test]
fn empty_and_large_payloads() {
    let h = header(BackendRole::QualityScorer, 0, None);
    let bytes = encode_frame(&h, &[]).unwrap();
    assert_eq!(decode_frame(&bytes).unwrap().payload.len(), 0);

    let n = 10 * 1024 * 1024 / 4;
    let payload: Vec<f32> = (0..n as u32).map(|i| f32::from_bits(i.wrapping_mul(0x9E37_79B9))).collect();
    let h = header(BackendRole::Enhancer, n as u64, None);
    let frame = decode_frame(&encode_frame(&h, &payload).unwrap()).unwrap();
    assert_eq!(bits(&frame.payload), bits(&payload));
}

#[test]
fn layout_is_length_prefixed_json_then_le_floats() {
    let h = header(BackendRole::SpeakerEmbedder, 1, Some(1));
    let bytes = encode_frame(&h, &[1.0, -2.5]).unwrap();
    let head_len = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let head: serde_json::Value = serde_json::from_slice(&bytes[4..4 + head_len]).unwrap();
    assert_eq!(head["role"], "speaker_embedder");
    let body = &bytes[4 + head_len..];
    assert_eq!(u32::from_le_bytes(body[0..4].try_into().unwrap()), 8);
    assert_eq!(&body[4..8], &1.0f32.to_le_bytes());
    assert_eq!(&body[8..12], &(-2.5f32).to_le_bytes());
}

#[test]
fn declared_count_must_match() {
    let h = header(BackendRole::Enhancer, 3, None);
    assert!(matches!(encode_frame(&h, &[0.0; 2]), Err(ProtocolError::ElementCount { .. })));
    let mut bytes = encode_frame(&header(BackendRole::Enhancer, 2, None), &[0.0; 2]).unwrap();
    bytes.push(0);
    assert!(decode_frame(&bytes).is_err());
}
