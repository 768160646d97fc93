use minn::data::{
    fit_zscore, gen_counting_task, make_binary_labels, read_feature_table, stratified_folds,
    write_feature_table, Bag, CountingTaskConfig, Dataset, FeatureSchema, Instance,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 245 lesions over 83 patients: 79 patients with 3 lesions, 4 with 2.
fn cohort_csv() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut csv = String::from("patient_id,tumor_id,survival_days,event,volume,energy\n");
    for p in 0..83 {
        let lesions = if p < 79 { 3 } else { 2 };
        let survival = rng.gen_range(30.0..2000.0f64).round();
        let event = rng.gen_range(0..2);
        for t in 0..lesions {
            csv.push_str(&format!(
                "HN-{p:03},gtv{t},{survival},{event},{},{}\n",
                rng.gen_range(0.5..80.0f64),
                rng.gen::<f64>() * 1e-3
            ));
        }
    }
    csv
}

#[test]
fn cohort_groups_into_patients() {
    let ds = read_feature_table(cohort_csv().as_bytes(), &FeatureSchema::default()).unwrap();
    assert_eq!(ds.bags.len(), 83);
    assert_eq!(ds.n_instances(), 245);
    assert!((ds.n_instances() as f64 / ds.bags.len() as f64 - 2.95).abs() < 0.01);
    assert_eq!(ds.feature_names, ["volume", "energy"]);
}

#[test]
fn csv_round_trip_is_bit_exact() {
    let ds = read_feature_table(cohort_csv().as_bytes(), &FeatureSchema::default()).unwrap();
    let (labeled, _) = make_binary_labels(&ds, 365.0).unwrap();
    let mut buf = Vec::new();
    write_feature_table(&labeled, &mut buf, &FeatureSchema::default()).unwrap();
    let back = read_feature_table(buf.as_slice(), &FeatureSchema::default()).unwrap();
    assert_eq!(back.bags, labeled.bags);
    assert_eq!(back.feature_names, labeled.feature_names);
}

#[test]
fn labeling_is_total_on_uncensored_bags() {
    let ds = read_feature_table(cohort_csv().as_bytes(), &FeatureSchema::default()).unwrap();
    let horizon = 365.0;
    let (labeled, tally) = make_binary_labels(&ds, horizon).unwrap();
    let expected_excluded: Vec<&str> = ds
        .bags
        .iter()
        .filter(|b| b.event == Some(0) && b.survival_days.unwrap() <= horizon)
        .map(|b| b.patient_id.as_str())
        .collect();
    assert_eq!(tally.excluded, expected_excluded.len());
    assert_eq!(labeled.bags.len() + tally.excluded, ds.bags.len());
    for bag in &labeled.bags {
        let dead_early = bag.event == Some(1) && bag.survival_days.unwrap() <= horizon;
        assert_eq!(bag.label, Some(u8::from(dead_early)));
    }
}

#[test]
fn eighty_three_patients_in_ten_folds() {
    let ds = read_feature_table(cohort_csv().as_bytes(), &FeatureSchema::default()).unwrap();
    let bags = ds
        .bags
        .iter()
        .enumerate()
        .map(|(i, b)| Bag { label: Some(u8::from(i % 3 == 0)), ..b.clone() })
        .collect();
    let ds = Dataset { bags, ..ds };
    let plan = stratified_folds(&ds, 10, 0).unwrap();
    let sizes = plan.fold_sizes();
    assert!(sizes.iter().all(|s| *s == 8 || *s == 9), "{sizes:?}");
    assert_eq!(sizes.iter().sum::<usize>(), 83);
    for bag in &ds.bags {
        let f = plan.fold_of(&bag.patient_id).unwrap();
        let (train, test) = plan.split(&ds, f);
        assert!(test.iter().any(|b| b.patient_id == bag.patient_id));
        assert!(train.iter().all(|b| b.patient_id != bag.patient_id));
    }
    assert_eq!(plan, stratified_folds(&ds, 10, 0).unwrap());
}

#[test]
fn refit_after_normalizing_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bags: Vec<Bag> = (0..10)
        .map(|p| {
            let rows: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.gen_range(-50.0..50.0), rng.gen_range(0.0..1e-3)]).collect();
            Bag::from_rows(format!("p{p}"), &rows, None).unwrap()
        })
        .collect();
    let normalized = fit_zscore(&bags).unwrap().apply(&bags).unwrap();
    let refit = fit_zscore(&normalized).unwrap();
    for j in 0..2 {
        assert!(refit.means[j].abs() < 1e-10);
        assert!((refit.stds[j] - 1.0).abs() < 1e-9);
    }
}

#[test]
fn counting_labels_match_brute_force_count() {
    for seed in 0..5 {
        let cfg = CountingTaskConfig { seed, threshold: 1 + seed as usize % 3, ..CountingTaskConfig::default() };
        let task = gen_counting_task(&cfg).unwrap();
        assert_eq!(task.dataset.bags.len(), cfg.n_bags);
        let mut positives = 0;
        for (bag, classes) in task.dataset.bags.iter().zip(&task.high_risk) {
            assert_eq!(bag.instances.len(), classes.len());
            assert!((cfg.min_bag_size..=cfg.max_bag_size).contains(&bag.instances.len()));
            let count = classes.iter().filter(|c| **c).count();
            assert_eq!(bag.label, Some(u8::from(count >= cfg.threshold)));
            positives += usize::from(count >= cfg.threshold);
        }
        let rate = positives as f64 / cfg.n_bags as f64;
        assert!((0.2..=0.8).contains(&rate), "seed {seed}: balance {rate}");
        assert_eq!(task.dataset, gen_counting_task(&cfg).unwrap().dataset);
    }
}

#[test]
fn default_counting_task_is_balanced() {
    let task = gen_counting_task(&CountingTaskConfig::default()).unwrap();
    let positives = task.dataset.bags.iter().filter(|b| b.label == Some(1)).count();
    assert!((100..=400).contains(&positives), "{positives}");
}

#[test]
fn instances_keep_identifiers_through_normalization() {
    let bag = Bag::new(
        "a",
        vec![
            Instance { patient_id: "a".into(), tumor_id: "x".into(), features: vec![1.0] },
            Instance { patient_id: "a".into(), tumor_id: "y".into(), features: vec![3.0] },
        ],
    )
    .unwrap();
    let out = fit_zscore(std::slice::from_ref(&bag)).unwrap().apply(std::slice::from_ref(&bag)).unwrap();
    assert_eq!(out[0].instances[1].tumor_id, "y");
    assert_eq!(out[0].instances[0].features, [-1.0]);
    assert_eq!(out[0].instances[1].features, [1.0]);
}
