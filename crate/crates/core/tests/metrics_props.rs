use drr_core::eval::{psnr, psnr_from_mse, rel_l2, ssim, SsimWindow};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn field(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-5.0f32..5.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identical_fields_are_perfect(shape in prop::collection::vec(11usize..16, 2..=3), seed: u64) {
        let n = shape.iter().product();
        let a = field(n, seed);
        prop_assert_eq!(rel_l2(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(ssim(&a, &a, &shape, SsimWindow::default(), None).unwrap(), 1.0);
        prop_assert_eq!(ssim(&a, &a, &shape, SsimWindow::Uniform { size: 7 }, None).unwrap(), 1.0);
        prop_assert!(psnr(&a, &a).unwrap().is_infinite());
    }

    #[test]
    fn psnr_is_zero_db_when_mse_equals_range_squared(r in 1e-3f64..1e3) {
        prop_assert_eq!(psnr_from_mse(r * r, r), 0.0);
    }

    #[test]
    fn psnr_decreases_with_mse(r in 1e-3f64..1e3, a in 1e-9f64..1e3, b in 1e-9f64..1e3) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(lo < hi);
        prop_assert!(psnr_from_mse(lo, r) > psnr_from_mse(hi, r));
    }

    #[test]
    fn ssim_is_symmetric_in_its_statistics_and_bounded(shape in prop::collection::vec(11usize..14, 2..=2), seed: u64, noise in 0.0f32..3.0) {
        let n = shape.iter().product();
        let gt = field(n, seed);
        let e = field(n, seed ^ 9);
        let pred: Vec<f32> = gt.iter().zip(&e).map(|(g, e)| g + noise * e).collect();
        let s = ssim(&pred, &gt, &shape, SsimWindow::default(), Some(10.0)).unwrap();
        let t = ssim(&gt, &pred, &shape, SsimWindow::default(), Some(10.0)).unwrap();
        prop_assert!((s - t).abs() <= 1e-12);
        prop_assert!(s <= 1.0 + 1e-12 && s >= -1.0 - 1e-12);
    }
}
