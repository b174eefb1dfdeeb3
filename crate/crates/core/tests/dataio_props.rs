mod common;

use common::instances::desk_instance;
use pine_core::dataio::{
    read_csv, split, split_indices, write_csv, Dataset, SplitMix64, SplitSpec,
};
use pine_core::ensemble::{ensemble_from_json, ensemble_to_json, load_ensemble, save_ensemble};
use proptest::prelude::*;

fn ratios() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1u32..20, 1..5).prop_map(|w| {
        let total: u32 = w.iter().sum();
        w.iter().map(|v| *v as f64 / total as f64).collect()
    })
}

proptest! {
    #[test]
    fn split_is_a_partition(n in 5usize..400, r in ratios(), seed in any::<u64>()) {
        prop_assume!(n >= r.len());
        let spec = SplitSpec::new(r.clone(), seed).unwrap();
        let man = split_indices(n, &spec).unwrap();
        prop_assert_eq!(man.partitions.len(), r.len());
        let mut all: Vec<usize> = man.partitions.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(man.partitions.iter().all(|p| !p.is_empty()));
        // Sizes follow the floor rule up to the fix-up of empty parts.
        for (part, ratio) in man.partitions.iter().zip(&r).take(r.len() - 1) {
            prop_assert!((part.len() as f64 - ratio * n as f64).abs() <= r.len() as f64);
        }
        prop_assert_eq!(split_indices(n, &spec).unwrap(), man);
    }

    #[test]
    fn split_subsets_carry_rows_and_labels(seed in any::<u64>()) {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, -(i as f64)]).collect();
        let labels: Vec<usize> = (0..50).map(|i| i % 3).collect();
        let ds = Dataset::from_rows(rows, Some(labels), 3).unwrap();
        let (parts, man) = split(&ds, &SplitSpec::new(vec![0.5, 0.3, 0.2], seed).unwrap()).unwrap();
        for (part, idx) in parts.iter().zip(&man.partitions) {
            for (k, &i) in idx.iter().enumerate() {
                prop_assert_eq!(part.row(k)[0], i as f64);
                prop_assert_eq!(part.labels().unwrap()[k], i % 3);
            }
        }
    }

    #[test]
    fn csv_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..30), seed in any::<u64>()) {
        let labels: Vec<usize> = (0..rows.len()).map(|i| (i as u64 ^ seed) as usize % 2).collect();
        let ds = Dataset::from_rows(rows, Some(labels), 2).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf, "label").unwrap();
        let back = read_csv(buf.as_slice(), Some("label")).unwrap();
        prop_assert_eq!(back.rows(), ds.rows());
        // Class names are re-derived from the labels present.
        let names = back.class_names();
        let decoded: Vec<&str> = back.labels().unwrap().iter().map(|&c| names[c].as_str()).collect();
        let original: Vec<String> = ds.labels().unwrap().iter().map(|c| c.to_string()).collect();
        prop_assert_eq!(decoded, original.iter().map(String::as_str).collect::<Vec<_>>());
    }
}

#[test]
fn splitmix_reference_outputs() {
    let mut g = SplitMix64::new(0);
    assert_eq!(g.next_u64(), 0xE220_A839_7B1D_CDAF);
    assert_eq!(g.next_u64(), 0x6E78_9E6A_A1B9_65F4);
    assert_eq!(g.next_u64(), 0x06C4_5D18_8009_454F);
}

#[test]
fn categorical_tokens_survive_a_round_trip() {
    let text = "color,size,label\nred,1.5,a\nblue,2,b\nred,3,a\n";
    let ds = read_csv(text.as_bytes(), Some("label")).unwrap();
    assert_eq!(ds.decode_category(0, ds.row(1)[0]), Some("blue"));
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf, "label").unwrap();
    let back = read_csv(buf.as_slice(), Some("label")).unwrap();
    assert_eq!(back.rows(), ds.rows());
    assert_eq!(back.labels(), ds.labels());
}

#[test]
fn ensemble_json_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..10 {
        let e = desk_instance(seed).e;
        let text = serde_json::to_string(&ensemble_to_json(&e)).unwrap();
        let back = ensemble_from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, e);
        let path = dir.path().join(format!("e{seed}.json"));
        save_ensemble(&e, &path).unwrap();
        assert_eq!(load_ensemble(&path).unwrap(), e);
    }
}
