use ftm_core::content::*;
use proptest::prelude::*;

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, dim)
        .prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn fv(id: String, values: Vec<f64>) -> FeatureVector {
    FeatureVector {
        photo_id: id,
        values,
    }
}

fn photos_and_seeds(
) -> impl Strategy<Value = (Vec<FeatureVector>, Vec<FeatureVector>, FeatureVector)> {
    (
        prop::collection::vec(vector(4), 1..20),
        prop::collection::vec(vector(4), 1..5),
        vector(4),
    )
        .prop_map(|(p, s, extra)| {
            let photos = p
                .into_iter()
                .enumerate()
                .map(|(i, v)| fv(format!("p{i}"), v))
                .collect();
            let seeds = s
                .into_iter()
                .enumerate()
                .map(|(i, v)| fv(format!("s{i}"), v))
                .collect();
            (photos, seeds, fv("extra".into(), extra))
        })
}

fn objects() -> impl Strategy<Value = Vec<DetectedObject>> {
    prop::collection::vec(
        (
            0u8..6,
            prop::sample::select(vec!["house", "building", "car", "tree"]),
            0.0..=1.0f64,
            0.001..=1.0f64,
        ),
        0..30,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|(p, label, confidence, size)| DetectedObject {
                photo_id: format!("p{p}"),
                label: label.into(),
                confidence,
                size,
            })
            .collect()
    })
}

fn labels() -> Vec<String> {
    DEFAULT_BUILDING_LABELS
        .iter()
        .map(|s| s.to_string())
        .collect()
}

proptest! {
    #[test]
    fn cosine_is_symmetric_and_scale_free(a in vector(6), b in vector(6), k in 0.01..100.0f64) {
        let (a, b) = (fv("a".into(), a), fv("b".into(), b));
        let ab = cosine_similarity(&a, &b).unwrap();
        prop_assert!((ab - cosine_similarity(&b, &a).unwrap()).abs() <= 1e-12);
        let scaled = fv("a".into(), a.values.iter().map(|x| x * k).collect());
        prop_assert!((ab - cosine_similarity(&scaled, &b).unwrap()).abs() <= 1e-9);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn similarity_kept_set_shrinks_with_threshold((photos, seeds, _) in photos_and_seeds(), t1 in -1.0..1.0f64, t2 in -1.0..1.0f64) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let kept_lo = similarity_filter(&photos, &seeds, lo).unwrap();
        let kept_hi = similarity_filter(&photos, &seeds, hi).unwrap();
        prop_assert!(kept_hi.is_subset(&kept_lo));
    }

    #[test]
    fn extra_seed_never_shrinks((photos, seeds, extra) in photos_and_seeds(), t in -1.0..1.0f64) {
        let before = similarity_filter(&photos, &seeds, t).unwrap();
        let mut more = seeds.clone();
        more.push(extra);
        let after = similarity_filter(&photos, &more, t).unwrap();
        prop_assert!(before.is_subset(&after));
    }

    #[test]
    fn detection_gate_monotone(objs in objects(), s in (0.0..1.0f64, 0.0..1.0f64), c in (0.0..1.0f64, 0.0..1.0f64)) {
        let l = labels();
        let (s_lo, s_hi) = (s.0.min(s.1), s.0.max(s.1));
        let (c_lo, c_hi) = (c.0.min(c.1), c.0.max(c.1));
        let loose = detection_filter(&objs, &l, s_lo, c_lo);
        for strict in [
            detection_filter(&objs, &l, s_hi, c_lo),
            detection_filter(&objs, &l, s_lo, c_hi),
            detection_filter(&objs, &l, s_hi, c_hi),
        ] {
            for (id, pass) in &strict {
                prop_assert!(!pass || loose[id], "{id} passes strict but not loose");
            }
        }
    }
}
