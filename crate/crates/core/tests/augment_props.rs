use proptest::prelude::*;
use rand::Rng;
use rooftop::augment::{
    augment_pipeline, blur, dihedral, dihedral_compose, dihedral_inverse, elastic_transform, gauss_noise,
    grid_distortion, mask_jitter, optical_distortion, random_crop_margin, rgb_shift, AugmentConfig, BlurMode,
    Probabilities, SeedPolicy,
};
use rooftop::raster::Chip;
use rooftop::seed::rng_from_seed;

fn chip(seed: u64, w: u32, h: u32, margin: u32) -> Chip {
    let mut rng = rng_from_seed(seed);
    let n = (w * h) as usize;
    let rgb = (0..n * 3).map(|_| rng.random()).collect();
    let mask = (0..n)
        .map(|i| {
            let (x, y) = ((i as u32) % w, (i as u32) / w);
            if x >= margin && x < w - margin && y >= margin && y < h - margin {
                255
            } else {
                0
            }
        })
        .collect();
    Chip {
        width: w,
        height: h,
        rgb,
        mask,
        margin,
        building_id: "t".into(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn geometric_transforms_keep_mask_binary(seed in any::<u64>(), alpha in 0.0..40.0f64, k in -0.9..0.9f64, lim in 0.0..0.9f64) {
        let c = chip(seed, 30, 26, 6);
        for out in [
            elastic_transform(&c, alpha, 4.0, seed).unwrap(),
            grid_distortion(&c, 5, lim, seed).unwrap(),
            optical_distortion(&c, k).unwrap(),
            mask_jitter(&c, (2.0, -3.0), 4.0),
            random_crop_margin(&c, [1, 2, 3, 4], 17).unwrap(),
        ] {
            prop_assert!(out.mask_is_binary());
        }
    }

    #[test]
    fn colour_transforms_leave_mask_alone(seed in any::<u64>(), d in prop::array::uniform3(-20i32..=20), sigma in 0.0..20.0f64) {
        let c = chip(seed, 20, 15, 3);
        for out in [
            rgb_shift(&c, d),
            blur(&c, BlurMode::Median { size: 3 }).unwrap(),
            blur(&c, BlurMode::Box { size: 5 }).unwrap(),
            blur(&c, BlurMode::Gaussian { sigma: 1.2 }).unwrap(),
            gauss_noise(&c, sigma, seed).unwrap(),
        ] {
            prop_assert_eq!(&out.mask, &c.mask);
        }
        prop_assert_eq!(mask_jitter(&c, (1.0, 1.0), 3.0).rgb, c.rgb);
    }

    #[test]
    fn dihedral_group_laws(seed in any::<u64>(), a in 0u8..8, b in 0u8..8) {
        let c = chip(seed, 7, 5, 1);
        let ab = dihedral(&dihedral(&c, a).unwrap(), b).unwrap();
        prop_assert_eq!(&ab, &dihedral(&c, dihedral_compose(a, b)).unwrap());
        let back = dihedral(&dihedral(&c, a).unwrap(), dihedral_inverse(a)).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn pipeline_is_deterministic_and_binary(seed in any::<u64>()) {
        let c = chip(seed, 60, 60, 20);
        let cfg = AugmentConfig { output_size: 32, ..Default::default() };
        let a = augment_pipeline(&c, &cfg, seed).unwrap();
        prop_assert_eq!(&a, &augment_pipeline(&c, &cfg, seed).unwrap());
        prop_assert!(a.mask_is_binary());
        prop_assert_eq!((a.width, a.height), (32, 32));
    }
}

#[test]
fn rgb_shift_round_trip_away_from_clamp() {
    let c = chip(1, 30, 30, 2);
    let back = rgb_shift(&rgb_shift(&c, [5, 5, 5]), [-5, -5, -5]);
    for (a, b) in c.rgb.iter().zip(&back.rgb) {
        if (5..=250).contains(a) {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn noise_has_requested_spread() {
    let mut c = chip(2, 100, 100, 0);
    c.rgb.iter_mut().for_each(|v| *v = 128);
    let out = gauss_noise(&c, 10.0, 77).unwrap();
    let n = out.rgb.len() as f64;
    let mean = out.rgb.iter().map(|&v| v as f64).sum::<f64>() / n;
    let sd = (out.rgb.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((8.5..=11.5).contains(&sd), "{sd}");
}

#[test]
fn dihedral_variants_are_equally_likely() {
    let c = chip(3, 4, 4, 0);
    let variants: Vec<Chip> = (0..8).map(|k| dihedral(&c, k).unwrap()).collect();
    let cfg = AugmentConfig {
        output_size: 4,
        crop_margin_range: [0, 0],
        probabilities: Probabilities { dihedral: 1.0, ..Probabilities::none() },
        ..Default::default()
    };
    let policy = SeedPolicy { global_seed: 99 };
    let mut counts = [0usize; 8];
    for i in 0..8000u64 {
        let out = augment_pipeline(&c, &cfg, policy.item_seed("t", 0, i)).unwrap();
        let k = variants.iter().position(|v| v.rgb == out.rgb && v.mask == out.mask).unwrap();
        counts[k] += 1;
    }
    for n in counts {
        assert!((n as f64 / 8000.0 - 0.125).abs() <= 0.015, "{counts:?}");
    }
}
