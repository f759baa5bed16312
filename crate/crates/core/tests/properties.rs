use proptest::prelude::*;

use siie::baselines::{estimate_baseline, BaselineConfig, BaselineMethod};
use siie::dataio::{make_folds, DatasetManifest, ManifestEntry, PixelSet, RawImage};
use siie::histogram::{compute_histogram, HistogramConfig, HistogramParams};
use siie::metrics::recovery_angular_error;
use siie::networks::{build_mapping_matrix, Model, ModelConfig, NetworkConfig};

fn colors(max: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(0.001f64..1.0), 1..max)
}

fn params(scale: [f64; 3], sigma: [f64; 3]) -> HistogramParams {
    let mut p = HistogramParams::new(HistogramConfig { bins: 21, ..Default::default() }, "h").unwrap();
    p.set_scale(scale);
    p.set_falloff(sigma);
    p
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

fn image(px: Vec<[f32; 3]>, w: usize) -> RawImage {
    let h = px.len() / w;
    RawImage::new(w, h, px[..w * h].to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn histogram_is_nonnegative_and_order_free(
        c in colors(40),
        scale in prop::array::uniform3(0.0f64..3.0),
        sigma in prop::array::uniform3(0.05f64..2.0),
        seed in any::<u64>(),
    ) {
        let p = params(scale, sigma);
        let h = compute_histogram(&PixelSet::from_colors(c.clone()), &p).unwrap().values;
        prop_assert!(h.data().iter().all(|&v| v >= 0.0));

        let mut perm = c;
        let mut s = seed;
        for i in (1..perm.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let hp = compute_histogram(&PixelSet::from_colors(perm), &p).unwrap().values;
        let peak = h.data().iter().copied().fold(0.0, f64::max);
        for (a, b) in hp.data().iter().zip(h.data()) {
            prop_assert!((a - b).abs() <= 1e-6 * peak);
        }
    }

    #[test]
    fn histogram_scales_with_root_intensity_and_keeps_its_peaks(
        c in colors(30),
        k in 0.05f64..20.0,
    ) {
        let p = params([1.0; 3], [0.25; 3]);
        let set = PixelSet::from_colors(c);
        let h = compute_histogram(&set, &p).unwrap().values;
        let hk = compute_histogram(&set.scaled(k), &p).unwrap().values;
        let peak = h.data().iter().copied().fold(0.0, f64::max);
        for (a, b) in hk.data().iter().zip(h.data()) {
            prop_assert!((a - k.sqrt() * b).abs() <= 1e-9 * k.sqrt() * peak);
        }
        let m = 21 * 21;
        for layer in 0..3 {
            let (a, b) = (&h.data()[layer * m..(layer + 1) * m], &hk.data()[layer * m..(layer + 1) * m]);
            let i = argmax(a);
            // ties within rounding may legitimately swap the argmax
            prop_assert!(argmax(b) == i || (a[argmax(b)] - a[i]).abs() <= 1e-9 * a[i]);
        }
    }

    #[test]
    fn mapping_matrix_is_nonnegative_with_sum_at_most_one(
        v in prop::array::uniform9(-1e3f64..1e3),
        eps in 0.0f64..1e-3,
    ) {
        let m = build_mapping_matrix(&v, eps);
        prop_assert!(m.iter().all(|&x| x >= 0.0));
        prop_assert!(m.iter().sum::<f64>() <= 1.0 + 1e-12);
    }

    #[test]
    fn baselines_ignore_exposure_and_masked_pixels(
        px in prop::collection::vec(prop::array::uniform3(0.01f32..0.9), 64..100),
        junk in prop::array::uniform3(0.0f32..1.0),
        masked in prop::collection::vec(any::<bool>(), 100),
        e in -3i32..3,
    ) {
        let img = image(px, 8);
        let mut mask: Vec<bool> = masked[..img.pixels.len()].to_vec();
        mask[0] = false;
        let img = img.with_mask(mask.clone()).unwrap();
        let mut perturbed = img.clone();
        for (p, &m) in perturbed.pixels.iter_mut().zip(&mask) {
            if m {
                *p = junk;
            }
        }
        let k = 2f32.powi(e);
        for method in BaselineMethod::ALL {
            let c = BaselineConfig::new(method);
            // heavy masking may leave gray-edge nothing to work with; that must not depend on masked values either
            let a = estimate_baseline(&img, &c).ok();
            prop_assert_eq!(a, estimate_baseline(&perturbed, &c).ok());
            let b = estimate_baseline(&img.scaled(k), &c).ok();
            prop_assert_eq!(a.is_some(), b.is_some());
            if let (Some(a), Some(b)) = (a, b) {
                prop_assert!(recovery_angular_error(a, b).unwrap() < 1e-6);
            }
        }
    }

    #[test]
    fn folds_partition_the_manifest(cams in prop::collection::vec(0u8..4, 2..40)) {
        let entries: Vec<ManifestEntry> = cams
            .iter()
            .enumerate()
            .map(|(i, c)| ManifestEntry {
                image_path: format!("{i}.rawf"),
                camera_id: format!("cam{c}"),
                gt: [0.5, 0.7, 0.5],
                mask_path: None,
            })
            .collect();
        let m = DatasetManifest { root: Default::default(), entries };
        let distinct = m.cameras().len();
        match make_folds(&m) {
            Err(_) => prop_assert!(distinct < 2),
            Ok(folds) => {
                prop_assert_eq!(folds.len(), distinct);
                for f in folds {
                    let mut all: Vec<usize> = f.train_ids.iter().chain(&f.test_ids).copied().collect();
                    all.sort();
                    prop_assert_eq!(all, (0..cams.len()).collect::<Vec<_>>());
                    prop_assert!(f.test_ids.iter().all(|&i| f.test_cameras.contains(&m.entries[i].camera_id)));
                    prop_assert!(f.train_ids.iter().all(|&i| !f.test_cameras.contains(&m.entries[i].camera_id)));
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn estimates_are_unit_norm_and_pure(
        px in prop::collection::vec(prop::array::uniform3(0.02f32..0.95), 64),
        seed in 0u64..1000,
    ) {
        let mut network = NetworkConfig::with_channels([3, 3, 3]);
        network.image_size = 8;
        let cfg = ModelConfig { network, histogram: HistogramConfig { bins: 9, ..Default::default() } };
        let model = Model::new(cfg, seed).unwrap();
        let img = image(px, 8);
        if let Ok(a) = model.forward(&img) {
            let n = a.l.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-12);
            prop_assert_eq!(a, model.forward(&img).unwrap());
        }
    }
}
