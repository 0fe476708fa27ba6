//! Property suite for the dataset file format: load/save round-trip
//! identity and order preservation over arbitrary well-formed datasets.

use proptest::prelude::*;

use obbr_core::dataset::{AttackTag, Dataset, Label, Sample};
use obbr_workbench::jsonl::{load_dataset, save_dataset, DatasetFormat};

fn label_strategy() -> impl Strategy<Value = (Label, Option<AttackTag>, Option<String>)> {
    prop_oneof![
        Just((Label::Clean, None, None)),
        proptest::sample::select(vec![
            AttackTag::BadNets,
            AttackTag::Vpi,
            AttackTag::Sleeper,
            AttackTag::Mtba,
            AttackTag::Ctba,
            AttackTag::Pia,
        ])
        .prop_map(|tag| (Label::Poisoned, Some(tag), None)),
        "[a-z0-9]{1,12}".prop_map(|lineage| (Label::Rewritten, None, Some(lineage))),
    ]
}

fn sample_strategy(ordinal: usize) -> impl Strategy<Value = Sample> {
    (
        "\\PC{1,40}",                    // instruction: printable unicode, non-empty
        proptest::option::of("\\PC{0,40}"),
        "\\PC{0,60}",                    // response
        label_strategy(),
    )
        .prop_map(move |(instruction, input, response, (label, attack_tag, lineage_id))| {
            Sample {
                id: obbr_core::dataset::ordinal_id(ordinal),
                instruction,
                input: obbr_core::dataset::normalize_input(input),
                response,
                label,
                attack_tag,
                lineage_id,
            }
        })
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    proptest::collection::vec(any::<u8>(), 0..12).prop_flat_map(|shape| {
        let samples: Vec<_> = shape
            .iter()
            .enumerate()
            .map(|(i, _)| sample_strategy(i))
            .collect();
        samples.prop_map(|samples| Dataset {
            samples,
            metadata: Default::default(),
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn save_load_reproduces_samples_field_for_field(dataset in dataset_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&dataset, &path).unwrap();
        let back = load_dataset(&path, DatasetFormat::Jsonl).unwrap();
        prop_assert_eq!(&back.samples, &dataset.samples);

        // Order preservation: ids come back in record order.
        let ids_in: Vec<&str> = dataset.iter().map(|s| s.id.as_str()).collect();
        let ids_out: Vec<&str> = back.iter().map(|s| s.id.as_str()).collect();
        prop_assert_eq!(ids_in, ids_out);

        // Byte stability: saving the reloaded dataset reproduces the bytes.
        let again = dir.path().join("again.jsonl");
        save_dataset(&back, &again).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}
