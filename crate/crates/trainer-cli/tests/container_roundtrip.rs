//! Round-trip invariants for the serialized surfaces: the checkpoint
//! container and the record format.

use fm_core::GradMode;
use proptest::prelude::*;
use trainer_cli::checkpoint::{decode, encode, Checkpoint, TensorEntry, TensorRole};
use trainer_cli::record::{parse_record, render_record};
use trainer_cli::Parametrization;

fn tensor_entry() -> impl Strategy<Value = TensorEntry> {
    (
        "[a-z][a-z0-9.]{0,12}",
        prop_oneof![Just(TensorRole::Param), Just(TensorRole::Velocity)],
        proptest::collection::vec(1usize..4, 1..4),
    )
        .prop_flat_map(|(name, role, dims)| {
            let len: usize = dims.iter().product();
            proptest::collection::vec(-1e6f64..1e6, len).prop_map(move |values| TensorEntry {
                name: name.clone(),
                role,
                dims: dims.clone(),
                values,
            })
        })
}

fn checkpoint() -> impl Strategy<Value = Checkpoint> {
    (
        prop_oneof![Just(GradMode::Sum), Just(GradMode::Average)],
        prop_oneof![
            Just(Parametrization::FilterMap),
            Just(Parametrization::Baseline)
        ],
        any::<u32>(),
        any::<u64>(),
        "[ -~]{0,40}",
        proptest::collection::vec(tensor_entry(), 0..4),
    )
        .prop_map(
            |(grad_mode, parametrization, epochs_done, seed, net_text, tensors)| Checkpoint {
                dtype_bits: 64,
                grad_mode,
                parametrization,
                epochs_done,
                seed,
                net_text,
                tensors,
            },
        )
}

proptest! {
    #[test]
    fn checkpoint_container_roundtrips(ck in checkpoint()) {
        let decoded = decode(&encode(&ck)).unwrap();
        prop_assert_eq!(decoded, ck);
    }

    #[test]
    fn truncated_containers_never_panic(ck in checkpoint(), frac in 0.0f64..1.0) {
        let bytes = encode(&ck);
        let cut = (bytes.len() as f64 * frac) as usize;
        // Any prefix must either decode (only when complete) or error cleanly.
        let _ = decode(&bytes[..cut.min(bytes.len())]);
    }

    #[test]
    fn records_roundtrip(
        fields in proptest::collection::vec(("[a-z_]{1,10}", "[a-zA-Z0-9 ./:+-]{0,16}"), 1..6)
    ) {
        let borrowed: Vec<(&str, String)> =
            fields.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
        let line = render_record(&borrowed);
        let parsed = parse_record(&line, 1).unwrap();
        prop_assert_eq!(parsed.len(), fields.len());
        for ((k, v), (pk, pv)) in fields.iter().zip(&parsed) {
            prop_assert_eq!(k, pk);
            prop_assert_eq!(v, pv);
        }
    }
}
