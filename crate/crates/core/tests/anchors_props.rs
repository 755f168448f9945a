use lesionbox::anchors::{
    assign_anchors, decode_box, default_sizes, encode_box, generate_anchors, AnchorConfig,
    AnchorLabel,
};
use lesionbox::{iou, Box3};
use proptest::prelude::*;

fn small_config(patch: [usize; 3], pos_iou: f64) -> AnchorConfig {
    AnchorConfig {
        patch_dims: patch,
        strides: vec![4, 8],
        sizes_per_level: vec![default_sizes(4), default_sizes(8)],
        pos_iou,
        neg_iou: 0.3,
    }
}

fn patch() -> impl Strategy<Value = [usize; 3]> {
    proptest::array::uniform3(8usize..40)
}

fn gt_boxes(patch: [usize; 3]) -> impl Strategy<Value = Vec<Box3>> {
    let hi = patch.map(|d| d as f64);
    proptest::collection::vec(
        (
            proptest::array::uniform3(0.0f64..1.0),
            proptest::array::uniform3(0.5f64..16.0),
        ),
        1..5,
    )
    .prop_map(move |raw| {
        raw.into_iter()
            .map(|(u, e)| {
                let min = [0, 1, 2].map(|k| u[k] * (hi[k] - 0.5));
                let max = [0, 1, 2].map(|k| (min[k] + e[k]).min(hi[k]).max(min[k] + 0.25));
                Box3::new(min, max).unwrap()
            })
            .collect()
    })
}

fn nondegenerate_box() -> impl Strategy<Value = Box3> {
    (
        proptest::array::uniform3(-100.0f64..100.0),
        proptest::array::uniform3(0.1f64..50.0),
    )
        .prop_map(|(c, e)| Box3::from_center_extent(c, e).unwrap())
}

proptest! {
    #[test]
    fn count_matches_closed_form(p in patch()) {
        let cfg = small_config(p, 0.5);
        let closed: usize = cfg
            .strides
            .iter()
            .map(|&s| p.iter().map(|&d| d.div_ceil(s)).product::<usize>() * 3)
            .sum();
        prop_assert_eq!(cfg.anchor_count(), closed);
        prop_assert_eq!(generate_anchors(&cfg).unwrap().len(), closed);
    }

    #[test]
    fn every_gt_gets_a_positive(
        (p, gts) in patch().prop_flat_map(|p| (Just(p), gt_boxes(p))),
        pos in 0.3f64..0.95,
    ) {
        let cfg = small_config(p, pos);
        let anchors = generate_anchors(&cfg).unwrap();
        let asg = assign_anchors(&anchors, &gts, &cfg);
        prop_assert_eq!(asg.labels.len(), anchors.len());
        for g in 0..gts.len() {
            prop_assert!(asg.positives_for(g) >= 1, "gt {} uncovered", g);
        }
        // positives below the threshold exist only through forcing
        for (a, l) in asg.labels.iter().enumerate() {
            if let AnchorLabel::Positive(g) = l {
                let forced = asg.forced.contains(&Some(a));
                prop_assert!(forced || iou(&anchors[a], &gts[*g]) >= pos);
            }
        }
    }

    #[test]
    fn raising_pos_iou_never_adds_threshold_positives(
        (p, gts) in patch().prop_flat_map(|p| (Just(p), gt_boxes(p))),
        lo in 0.3f64..0.9,
        step in 0.0f64..0.1,
    ) {
        let anchors = generate_anchors(&small_config(p, lo)).unwrap();
        let a = assign_anchors(&anchors, &gts, &small_config(p, lo));
        let b = assign_anchors(&anchors, &gts, &small_config(p, lo + step));
        prop_assert!(b.threshold_positive_count() <= a.threshold_positive_count());
    }

    #[test]
    fn decode_inverts_encode(anchor in nondegenerate_box(), gt in nondegenerate_box()) {
        let back = decode_box(&anchor, &encode_box(&anchor, &gt).unwrap()).unwrap();
        for k in 0..3 {
            prop_assert!((back.min[k] - gt.min[k]).abs() <= 1e-9);
            prop_assert!((back.max[k] - gt.max[k]).abs() <= 1e-9);
        }
    }

    #[test]
    fn encode_inverts_decode(
        anchor in nondegenerate_box(),
        d in proptest::array::uniform3(-2.0f64..2.0),
        l in proptest::array::uniform3(-2.0f64..2.0),
    ) {
        let t = [d[0], d[1], d[2], l[0], l[1], l[2]];
        let back = encode_box(&anchor, &decode_box(&anchor, &t).unwrap()).unwrap();
        for k in 0..6 {
            prop_assert!((back[k] - t[k]).abs() <= 1e-9);
        }
    }
}

#[test]
fn default_centers_inside_closed_patch() {
    // 56 / 16 is not whole, so the last z cell is centered on the far face
    let cfg = AnchorConfig::default();
    for a in generate_anchors(&cfg).unwrap() {
        let c = a.center();
        for (v, d) in c.iter().zip(cfg.patch_dims) {
            assert!(*v > 0.0 && *v <= d as f64);
        }
    }
}
