use ddimlab::checkpoint::{Checkpoint, Provenance};
use ddimlab::diffusion::{diffuse_alphas, x0_from_eps};
use ddimlab::embedding::pca_cloud;
use ddimlab::schedule::subsequence;
use ddimlab::{Affine, DenoiserConfig, DenoiserNet, Eager, NoiseSchedule, ScheduleKind, ScheduleSpec, Tensor};
use proptest::prelude::*;

fn points(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |v| Tensor::new(vec![rows, cols], v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_schedules_decrease(lo in 1e-5f64..1e-2, span in 1e-4f64..0.5, steps in 2usize..400) {
        let s = NoiseSchedule::new(ScheduleKind::Linear { beta_min: lo, beta_max: lo + span }, steps).unwrap();
        let a = s.alphas();
        prop_assert!(a.windows(2).all(|w| w[1] < w[0]));
        prop_assert!(a.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn subsequence_spans_evenly(steps in 2usize..2000, k_frac in 0.0f64..1.0) {
        let k = 2 + ((steps - 2) as f64 * k_frac) as usize;
        let idx = subsequence(steps, k).unwrap();
        prop_assert_eq!(idx.len(), k + 1);
        prop_assert_eq!(idx[0], 0);
        prop_assert_eq!(*idx.last().unwrap(), steps);
        let gaps: Vec<usize> = idx.windows(2).map(|w| w[1] - w[0]).collect();
        prop_assert!(gaps.iter().all(|&g| g > 0));
        prop_assert!(gaps.iter().max().unwrap() - gaps.iter().min().unwrap() <= 1);
    }

    #[test]
    fn true_noise_recovers_x0(x0 in points(4, 2), eps in points(4, 2), alpha in 1e-3f64..0.999) {
        let x_t = diffuse_alphas(&x0, &[alpha; 4], &eps).unwrap();
        let back = x0_from_eps(Eager, &x_t, &eps, alpha).unwrap();
        let worst = back.data().iter().zip(x0.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(worst < 1e-9, "error {}", worst);
    }

    #[test]
    fn pca_components_are_orthonormal(cloud in points(12, 3)) {
        let p = pca_cloud(&cloud).unwrap();
        prop_assert!(p.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(p.eigenvalues.iter().all(|&e| e >= 0.0));
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = p.component(i).iter().zip(p.component(j)).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn affine_round_trips(pts in points(8, 2), m0 in -3.0f64..3.0, m1 in -3.0f64..3.0, s0 in 0.1f64..10.0, s1 in 0.1f64..10.0) {
        let a = Affine { mean: vec![m0, m1], scale: vec![s0, s1] };
        let back = a.invert(&a.apply(&pts));
        let worst = back.data().iter().zip(pts.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(worst < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn checkpoints_round_trip_bitwise(
        seed in any::<u64>(),
        widths in prop::collection::vec(1usize..12, 1..3),
        loss in 0.0f64..2.0,
        mean in prop::collection::vec(-1.0f64..1.0, 2),
        scale in prop::collection::vec(0.1f64..2.0, 2),
    ) {
        let net = DenoiserNet::init(2, &DenoiserConfig { widths, ..DenoiserConfig::default() }, seed).unwrap();
        let provenance = Provenance { dataset: "test".into(), epochs: 0, run_seed: seed, final_loss: loss };
        let ckpt = Checkpoint::new(&net, ScheduleSpec::default(), Some(Affine { mean, scale }), provenance).unwrap();
        let text = ckpt.to_json().unwrap();
        prop_assert_eq!(Checkpoint::from_json(&text).unwrap().to_json().unwrap(), text);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        ckpt.save(&path).unwrap();
        let (_, back) = Checkpoint::load_net(&path).unwrap();
        for (a, b) in net.mlp.params().iter().zip(back.mlp.params()) {
            prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
