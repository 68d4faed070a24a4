use proptest::prelude::*;
use ugvkit_core::decoding::{DetectedKeypoint, Detection};
use ugvkit_core::encoding::{encode_heatmap, encode_paf, Annotation, Keypoint};
use ugvkit_core::evaluation::{match_and_count, quad_iou, Quad};
use ugvkit_core::geometry::{compose_euler_zxy, extract_euler_zxy, solve_p4p_lm, EulerZXY, LmSettings};
use ugvkit_core::network::{channel_shuffle, duc_upsample};
use ugvkit_core::synth::{SceneGenerator, SceneParams};
use ugvkit_core::{ImageBuffer, Tensor};

fn tensor_chw(c: usize, h: usize, w: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-100.0f32..100.0, c * h * w).prop_map(move |d| Tensor::new([c, h, w], d).unwrap())
}

fn sorted_bits(t: &Tensor) -> Vec<u32> {
    let mut v: Vec<u32> = t.data().iter().map(|x| x.to_bits()).collect();
    v.sort_unstable();
    v
}

fn quad() -> impl Strategy<Value = Quad> {
    prop::array::uniform4((-5.0f64..45.0, -5.0f64..35.0))
}

fn det(q: Quad) -> Detection {
    Detection::new(q.map(|(x, y)| Some(DetectedKeypoint { x, y, score: 1.0 })), 4.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tensor_bytes_round_trip(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let n: usize = dims.iter().product();
        let data: Vec<f32> = (0..n as u64).map(|i| f32::from_bits((seed ^ i.wrapping_mul(0x9E37_79B9)) as u32)).collect();
        let t = Tensor::new(dims.clone(), data).unwrap();
        let bytes = t.to_bytes().unwrap();
        prop_assert_eq!(bytes.len(), 9 + 4 * dims.len() + 4 * n);
        let (back, used) = Tensor::from_bytes(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back.dims(), t.dims());
        prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn resize_preserves_range_and_identity(
        data in prop::collection::vec(0.0f32..=1.0, 3 * 6 * 5),
        oh in 1usize..12,
        ow in 1usize..12,
    ) {
        let img = ImageBuffer::new(6, 5, data).unwrap();
        let (lo, hi) = img.data().iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let r = img.resize_bilinear(oh, ow).unwrap();
        prop_assert!(r.data().iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6));
        prop_assert_eq!(img.resize_bilinear(6, 5).unwrap(), img);
    }

    #[test]
    fn shuffle_is_a_permutation(t in tensor_chw(12, 3, 2), g in prop::sample::select(vec![1usize, 2, 3, 4, 6])) {
        let s = channel_shuffle(&t, g).unwrap();
        prop_assert_eq!(sorted_bits(&s), sorted_bits(&t));
        let mut chans: Vec<Vec<u32>> = (0..12).map(|c| t.channel(c).iter().map(|v| v.to_bits()).collect()).collect();
        let mut out: Vec<Vec<u32>> = (0..12).map(|c| s.channel(c).iter().map(|v| v.to_bits()).collect()).collect();
        chans.sort();
        out.sort();
        prop_assert_eq!(out, chans);
        prop_assert_eq!(channel_shuffle(&s, 12 / g).unwrap(), t);
    }

    #[test]
    fn duc_is_a_bijection(t in tensor_chw(8, 3, 4)) {
        let u = duc_upsample(&t, 2).unwrap();
        prop_assert_eq!(u.dims(), &[2, 6, 8]);
        prop_assert_eq!(sorted_bits(&u), sorted_bits(&t));
    }

    #[test]
    fn heatmap_is_binary_and_paf_unit(
        pts in prop::array::uniform4((0.0f64..64.0, 0.0f64..48.0)),
        radius in 1.0f64..4.0,
    ) {
        let a = Annotation {
            image_id: "p".into(),
            width: 64,
            height: 48,
            keypoints: pts.map(|(x, y)| Keypoint { x, y, visible: true }),
        };
        let (heat, _) = encode_heatmap(&a, 12, 16, 4.0, radius).unwrap();
        prop_assert!(heat.data().iter().all(|&v| v == 0.0 || v == 1.0));
        for p in 0..12 * 16 {
            let any = (0..4).any(|c| heat.channel(c)[p] == 1.0);
            prop_assert_eq!(heat.channel(4)[p], if any { 0.0 } else { 1.0 });
        }
        let (paf, _) = encode_paf(&a, 12, 16, 4.0, 6.0).unwrap();
        for e in 0..4 {
            for p in 0..12 * 16 {
                let n = (paf.channel(2 * e)[p] as f64).hypot(paf.channel(2 * e + 1)[p] as f64);
                prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-6, "norm {}", n);
            }
        }
    }

    #[test]
    fn iou_symmetric_bounded_rotation_invariant(a in quad(), b in quad(), k in 0usize..4) {
        let res = (30, 40);
        let ab = quad_iou(&a, &b, res);
        prop_assert_eq!(ab, quad_iou(&b, &a, res));
        prop_assert!((0.0..=1.0).contains(&ab));
        let mut r = a;
        r.rotate_left(k);
        prop_assert_eq!(quad_iou(&r, &b, res), ab);
    }

    #[test]
    fn counts_are_consistent(dets in prop::collection::vec(quad(), 0..4), gts in prop::collection::vec(quad(), 0..4), t in 0.1f64..0.95) {
        let d: Vec<Detection> = dets.into_iter().map(det).collect();
        let m = match_and_count(&d, &gts, t, (30, 40));
        prop_assert_eq!(m.tp + m.fn_, gts.len());
        prop_assert_eq!(m.tp + m.fp, d.len());
        prop_assert!(m.matches.iter().all(|x| x.2 > t));
    }

    #[test]
    fn euler_round_trip(z in -3.14f64..3.14, x in -3.14f64..3.14, y in -1.5f64..1.5) {
        let e = EulerZXY { theta_z: z, theta_x: x, theta_y: y };
        let r = compose_euler_zxy(&e);
        let (back, lock) = extract_euler_zxy(&r);
        prop_assert!(!lock);
        prop_assert!((compose_euler_zxy(&back) - r).amax() < 1e-12);
        prop_assert!((back.theta_z - z).abs() < 1e-9 && (back.theta_x - x).abs() < 1e-9 && (back.theta_y - y).abs() < 1e-9);
    }

    #[test]
    fn lm_recovers_synthetic_poses(seed in any::<u64>(), index in 0u64..1000) {
        let params = SceneParams::default();
        let s = SceneGenerator::new(params.clone(), seed).unwrap().scene(index).unwrap();
        let sol = solve_p4p_lm(&params.model.keypoints(), &s.pixels, &params.cam, None, &LmSettings::default()).unwrap();
        prop_assert!(sol.pose.rotation_distance(&s.pose) < 1e-6);
        prop_assert!((sol.pose.translation - s.pose.translation).norm() < 1e-6);
        prop_assert!(sol.pose.is_valid(1e-9));
    }
}
