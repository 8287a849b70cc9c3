use std::collections::BTreeMap;

use groundkit_core::evalharness::{
    score, BenchmarkRecord, ClickSource, EvalReport, Prediction, ScoreConfig, ALL_SLICE,
};
use groundkit_core::geometry::{encode_box, encode_point};
use groundkit_core::{CoordFormat, NormBox, PixelDims, RngStream};
use rand::seq::SliceRandom;
use rand::Rng;

fn random_box(rng: &mut RngStream) -> NormBox {
    let x1 = rng.random_range(0.0..0.8);
    let y1 = rng.random_range(0.0..0.8);
    NormBox::new(
        x1,
        y1,
        x1 + rng.random_range(0.01..0.2),
        y1 + rng.random_range(0.01..0.2),
    )
    .unwrap()
}

fn suite(rng: &mut RngStream, n: usize) -> Vec<BenchmarkRecord> {
    let platforms = ["desktop", "web", "mobile"];
    let kinds = ["icon", "text"];
    (0..n)
        .map(|i| {
            let tags: BTreeMap<String, String> = [
                ("suite", if i % 4 == 0 { "alpha" } else { "beta" }),
                ("platform", platforms[i % 3]),
                ("kind", kinds[(i / 3) % 2]),
            ]
            .into_iter()
            .map(|(k, v)| (k.into(), v.into()))
            .collect();
            BenchmarkRecord {
                record_id: format!("rec-{i:04}"),
                image_ref: format!("img/{i}.png"),
                dims: PixelDims::new(1920, 1080).unwrap(),
                gt_box: random_box(rng),
                short_re: format!("target {i}"),
                long_re: None,
                tags,
            }
        })
        .collect()
}

fn noisy_predictions(
    rng: &mut RngStream,
    records: &[BenchmarkRecord],
    boxes: bool,
) -> Vec<Prediction> {
    records
        .iter()
        .map(|r| {
            let raw_text = match rng.random_range(0..10) {
                0 => "the blue button".to_string(),
                1..=5 => {
                    if boxes {
                        let j = 0.01 * rng.random_range(-3.0..3.0);
                        let b = &r.gt_box;
                        let moved = NormBox::new(
                            (b.x1 + j).clamp(0.0, 1.0),
                            (b.y1 + j).clamp(0.0, 1.0),
                            (b.x2 + j).clamp(0.0, 1.0),
                            (b.y2 + j).clamp(0.0, 1.0),
                        )
                        .unwrap();
                        encode_box(&moved, CoordFormat::Xyxy)
                    } else {
                        encode_point(&r.gt_box.center())
                    }
                }
                _ => {
                    let b = random_box(rng);
                    if boxes {
                        encode_box(&b, CoordFormat::Xyxy)
                    } else {
                        encode_point(&b.center())
                    }
                }
            };
            Prediction {
                record_id: r.record_id.clone(),
                raw_text,
                latency_ms: None,
            }
        })
        .collect()
}

fn cfg(source: ClickSource) -> ScoreConfig {
    ScoreConfig {
        click_source: source,
        box_format: CoordFormat::Xyxy,
        slice_keys: vec!["platform".into(), "kind".into()],
    }
}

fn assert_close(a: &EvalReport, b: &EvalReport) {
    assert_eq!(a.rows.len(), b.rows.len());
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!(
            (&x.suite, &x.slice, x.count, x.hits),
            (&y.suite, &y.slice, y.count, y.hits)
        );
        assert_eq!(x.click_accuracy, y.click_accuracy);
        assert_eq!(x.iou_mean, y.iou_mean);
    }
}

#[test]
fn record_order_does_not_matter() {
    let mut rng = RngStream::new(31, "perm");
    let records = suite(&mut rng, 400);
    let preds = noisy_predictions(&mut rng, &records, true);
    let base = score(&records, &preds, &cfg(ClickSource::BoxCenter)).unwrap();
    for _ in 0..5 {
        let mut r = records.clone();
        let mut p = preds.clone();
        r.shuffle(&mut rng);
        p.shuffle(&mut rng);
        assert_close(&base, &score(&r, &p, &cfg(ClickSource::BoxCenter)).unwrap());
    }
}

#[test]
fn slices_recombine_to_suite() {
    let mut rng = RngStream::new(32, "slices");
    let records = suite(&mut rng, 500);
    let preds = noisy_predictions(&mut rng, &records, false);
    let rep = score(&records, &preds, &cfg(ClickSource::PointDirect)).unwrap();
    for s in ["alpha", "beta"] {
        let all = rep.row(s, ALL_SLICE).unwrap();
        let slices: Vec<_> = rep
            .rows
            .iter()
            .filter(|r| r.suite == s && r.slice != ALL_SLICE)
            .collect();
        assert_eq!(slices.iter().map(|r| r.count).sum::<usize>(), all.count);
        let weighted = slices
            .iter()
            .map(|r| r.click_accuracy * r.count as f64)
            .sum::<f64>()
            / all.count as f64;
        assert!((weighted - all.click_accuracy).abs() < 1e-12);
        // Parse errors can only lower accuracy.
        assert!(all.click_accuracy <= 1.0 - all.parse_error_rate + 1e-12);
        assert!(all.parse_errors > 0);
    }
}

#[test]
fn iou_rates_are_monotone_in_threshold() {
    let mut rng = RngStream::new(33, "mono");
    let records = suite(&mut rng, 600);
    let preds = noisy_predictions(&mut rng, &records, true);
    let rep = score(&records, &preds, &cfg(ClickSource::BoxCenter)).unwrap();
    for row in &rep.rows {
        let (a, b, c) = (
            row.iou_at_0_3.unwrap(),
            row.iou_at_0_5.unwrap(),
            row.iou_at_0_8.unwrap(),
        );
        assert!(c <= b && b <= a, "{row:?}");
        assert!((0.0..=1.0).contains(&row.click_accuracy));
    }
}

#[test]
fn latency_is_passed_through() {
    let mut rng = RngStream::new(34, "latency");
    let records = suite(&mut rng, 4);
    let mut preds = noisy_predictions(&mut rng, &records, false);
    preds[1].latency_ms = Some(120.0);
    preds[2].latency_ms = Some(80.0);
    let plain = ScoreConfig::default();
    let rep = score(&records, &preds, &plain).unwrap();
    let beta = rep.row("beta", ALL_SLICE).unwrap();
    assert_eq!(beta.latency_count, 2);
    assert_eq!(beta.latency_ms_mean, Some(100.0));
    assert_eq!(rep.row("alpha", ALL_SLICE).unwrap().latency_ms_mean, None);
}

#[test]
fn report_files() {
    let mut rng = RngStream::new(35, "files");
    let records = suite(&mut rng, 20);
    let preds = noisy_predictions(&mut rng, &records, true);
    let rep = score(&records, &preds, &cfg(ClickSource::BoxCenter)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    rep.write_json(&dir.path().join("r.json")).unwrap();
    rep.write_csv(&dir.path().join("r.csv")).unwrap();
    let back: EvalReport =
        serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(back, rep);
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert!(csv.starts_with("suite,slice,count,hits,click_accuracy"));
    assert_eq!(csv.lines().count(), rep.rows.len() + 1);
}
