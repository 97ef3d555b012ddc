use carmsim::anatomy::LandmarkSchema;
use carmsim::datasetgen::{format_label_with_names, DatasetRecord, RankedEntry, RankedLandmarks, Split};
use carmsim::metrics::{
    read_predictions, score_corpus, summarize_navigation, write_predictions, write_report, Exact, MetricsError,
    Prediction,
};

fn r(n: u64, d: u64) -> Exact {
    Exact::new(n, d)
}

const TRUTHS: [[u8; 3]; 10] = [
    [1, 10, 2],
    [4, 8, 12],
    [10, 11, 3],
    [13, 5, 14],
    [9, 7, 6],
    [2, 1, 10],
    [12, 4, 8],
    [11, 10, 13],
    [6, 9, 7],
    [14, 5, 13],
];

fn manifest() -> Vec<DatasetRecord> {
    let schema = LandmarkSchema::standard();
    TRUTHS
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let entries: Vec<RankedEntry> = t
                .iter()
                .map(|&idx| RankedEntry { index: idx, name: schema.canonical(idx).unwrap().into(), distance_mm: None })
                .collect();
            DatasetRecord {
                split: Split::Test,
                volume_id: "phantom-009".into(),
                sample_id: i,
                image_path: format!("images/phantom-009/{i:05}.png"),
                isocenter_mm: [0.0; 3],
                label_text: format_label_with_names(entries.iter().map(|e| (e.index, e.name.as_str()))),
                ranked: RankedLandmarks { entries },
                variant_seed: 0,
                prompt_template_id: "nearest3-v1".into(),
            }
        })
        .collect()
}

fn predict(f: impl Fn(usize, [u8; 3]) -> Vec<u8>) -> Vec<Prediction> {
    manifest()
        .iter()
        .zip(TRUTHS)
        .enumerate()
        .map(|(i, (rec, t))| Prediction { record_id: rec.record_id(), ranked: f(i, t) })
        .collect()
}

/// First landmark index outside `t`.
fn outsider(t: [u8; 3]) -> u8 {
    (1..=14).find(|i| !t.contains(i)).unwrap()
}

#[test]
fn oracle_predictions_hit_the_optima() {
    let s = score_corpus(&manifest(), &predict(|_, t| t.to_vec()), &[1, 2, 3]).unwrap();
    assert_eq!(s.records, 10);
    assert!(s.mean.precision_at.values().all(|v| *v == r(1, 1)));
    assert_eq!(s.mean.recall_at.values().copied().collect::<Vec<_>>(), [r(1, 3), r(2, 3), r(1, 1)]);
    assert!(s.mean.hit_at.values().all(|v| *v == r(1, 1)));
    assert_eq!((0..14).map(|i| s.confusion.counts[i][i]).sum::<u64>(), s.confusion.total());
    assert_eq!(s.confusion.get(10, 10), 1);
}

#[test]
fn swapping_the_last_two_slots_changes_nothing_at_these_ks() {
    let s = score_corpus(&manifest(), &predict(|_, t| vec![t[0], t[2], t[1]]), &[1, 2, 3]).unwrap();
    assert!(s.mean.precision_at.values().all(|v| *v == r(1, 1)));
    assert_eq!(s.mean.recall_at.values().copied().collect::<Vec<_>>(), [r(1, 3), r(2, 3), r(1, 1)]);
}

#[test]
fn half_the_records_lead_with_a_wrong_landmark() {
    // Records 5..10 predict [wrong, g0, g1].
    let preds = predict(|i, t| if i < 5 { t.to_vec() } else { vec![outsider(t), t[0], t[1]] });
    let s = score_corpus(&manifest(), &preds, &[1, 2, 3]).unwrap();
    // By hand: per-record P/R/Hit are (1,1/3,1),(1,2/3,1),(1,1,1) for the
    // first five and (0,0,0),(1/2,1/3,1),(2/3,2/3,1) for the rest.
    assert_eq!(s.mean.precision_at[&1], r(1, 2));
    assert_eq!(s.mean.recall_at[&1], r(1, 6));
    assert_eq!(s.mean.hit_at[&1], r(1, 2));
    assert_eq!(s.mean.precision_at[&2], r(3, 4));
    assert_eq!(s.mean.recall_at[&2], r(1, 2));
    assert_eq!(s.mean.hit_at[&2], r(1, 1));
    assert_eq!(s.mean.precision_at[&3], r(5, 6));
    assert_eq!(s.mean.recall_at[&3], r(5, 6));
    assert_eq!(s.mean.hit_at[&3], r(1, 1));
    assert_eq!(s.confusion.total(), 10);
}

#[test]
fn constant_t1_predictor_fills_one_column() {
    let s = score_corpus(&manifest(), &predict(|_, _| vec![10]), &[1, 3]).unwrap();
    assert_eq!(s.confusion.column_sum(10), 10);
    assert_eq!(s.confusion.total(), 10);
    // T1 is in G for records 0, 2, 5 and 7.
    assert_eq!(s.mean.hit_at[&1], r(4, 10));
    assert_eq!(s.mean.precision_at[&3], r(4, 30));
    assert_eq!(s.mean.recall_at[&3], r(4, 30));
    let table = s.confusion.to_table();
    assert_eq!(table.lines().count(), 15);
    assert!(table.lines().nth(1).unwrap().split('\t').nth(10) == Some("1"));
}

#[test]
fn predictions_must_align_with_the_manifest() {
    let mut preds = predict(|_, t| t.to_vec());
    preds.remove(3);
    preds.push(Prediction { record_id: "phantom-099/00000".into(), ranked: vec![1] });
    preds.push(preds[0].clone());
    match score_corpus(&manifest(), &preds, &[1]) {
        Err(MetricsError::Alignment { missing, extra, duplicated }) => {
            assert_eq!(missing, ["phantom-009/00003"]);
            assert_eq!(extra, ["phantom-099/00000"]);
            assert_eq!(duplicated, ["phantom-009/00000"]);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn bad_predictions_are_input_errors() {
    for bad in [vec![], vec![15], vec![0], vec![3, 3]] {
        let preds = predict(|i, t| if i == 0 { bad.clone() } else { t.to_vec() });
        assert!(matches!(score_corpus(&manifest(), &preds, &[1]), Err(MetricsError::Input(_))), "{bad:?}");
    }
    assert!(matches!(score_corpus(&[], &[], &[1]), Err(MetricsError::Input(_))));
    assert!(matches!(summarize_navigation(&[]), Err(MetricsError::Input(_))));
}

#[test]
fn report_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let preds = predict(|_, t| vec![t[1], t[0], t[2]]);
    let path = dir.path().join("preds.jsonl");
    write_predictions(&path, &preds).unwrap();
    assert_eq!(read_predictions(&path).unwrap(), preds);
    let s = score_corpus(&manifest(), &preds, &[1, 2, 3]).unwrap();
    write_report(&s, dir.path()).unwrap();
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["records"], 10);
    assert_eq!(report["exact"]["R@2"], "2/3");
    assert_eq!(report["metrics"]["P@1"], 1.0);
    let png = image::open(dir.path().join("confusion.png")).unwrap();
    assert_eq!((png.width(), png.height()), (14 * 16, 14 * 16));

    std::fs::write(&path, "{\"record_id\":\"x\"}\n").unwrap();
    assert!(matches!(read_predictions(&path), Err(MetricsError::Parse { line: 1, .. })));
}
