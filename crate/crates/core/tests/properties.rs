use proptest::prelude::*;

use sparseg::annotation::{build_partial_label, compute_extent, place_window};
use sparseg::metrics::{assd2d_mm, dice_score, hausdorff_mm};
use sparseg::postproc::{fill_holes, largest_component, postprocess};
use sparseg::optim::{lr_trace, Phase, ScheduleConfig};
use sparseg::sampling::{block_starts, extract_blocks};
use sparseg::volume::{BinaryMask3D, Dims, Spacing, Volume3D};

fn mask_strategy(max: usize) -> impl Strategy<Value = BinaryMask3D> {
    (1..=max, 1..=max, 1..=max).prop_flat_map(|(x, y, z)| {
        proptest::collection::vec(prop::bool::weighted(0.4), x * y * z).prop_map(move |bits| {
            let v = bits.into_iter().map(u8::from).collect();
            BinaryMask3D::new(Dims::new(x, y, z), Spacing::isotropic(), v).unwrap()
        })
    })
}

fn pair_strategy(max: usize) -> impl Strategy<Value = (BinaryMask3D, BinaryMask3D)> {
    (1..=max, 1..=max, 1..=max).prop_flat_map(|(x, y, z)| {
        let n = x * y * z;
        (
            proptest::collection::vec(prop::bool::weighted(0.3), n),
            proptest::collection::vec(prop::bool::weighted(0.3), n),
        )
            .prop_map(move |(a, b)| {
                let d = Dims::new(x, y, z);
                let s = Spacing::new(1.5, 1.5, 3.0).unwrap();
                let m = |v: Vec<bool>| BinaryMask3D::new(d, s, v.into_iter().map(u8::from).collect()).unwrap();
                (m(a), m(b))
            })
    })
}

fn subset(a: &BinaryMask3D, b: &BinaryMask3D) -> bool {
    a.voxels().iter().zip(b.voxels()).all(|(&x, &y)| x <= y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_are_symmetric((a, b) in pair_strategy(8)) {
        let s = a.spacing();
        prop_assert_eq!(dice_score(&a, &b).unwrap(), dice_score(&b, &a).unwrap());
        prop_assert_eq!(hausdorff_mm(&a, &b, s).unwrap(), hausdorff_mm(&b, &a, s).unwrap());
        let (x, y) = (assd2d_mm(&a, &b, s).unwrap(), assd2d_mm(&b, &a, s).unwrap());
        match (x, y) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
            (x, y) => prop_assert_eq!(x, y),
        }
    }

    #[test]
    fn metric_identity(a in mask_strategy(8)) {
        let s = a.spacing();
        prop_assert_eq!(dice_score(&a, &a).unwrap(), 1.0);
        if !a.is_empty() {
            prop_assert_eq!(hausdorff_mm(&a, &a, s).unwrap(), Some(0.0));
            prop_assert_eq!(assd2d_mm(&a, &a, s).unwrap(), Some(0.0));
        }
    }

    #[test]
    fn distances_scale_with_spacing((a, b) in pair_strategy(8), k in 0i32..3) {
        // powers of two scale exactly in floating point
        let c = f64::powi(2.0, k - 1);
        let s = a.spacing();
        let t = s.scaled(c).unwrap();
        let hd = hausdorff_mm(&a, &b, s).unwrap().map(|v| v * c);
        prop_assert_eq!(hausdorff_mm(&a, &b, t).unwrap(), hd);
        let assd = assd2d_mm(&a, &b, s).unwrap().map(|v| v * c);
        prop_assert_eq!(assd2d_mm(&a, &b, t).unwrap(), assd);
    }

    #[test]
    fn fill_holes_is_idempotent_and_monotone(m in mask_strategy(10)) {
        let f = fill_holes(&m);
        prop_assert!(subset(&m, &f));
        prop_assert_eq!(fill_holes(&f), f);
    }

    #[test]
    fn largest_component_is_idempotent_subset(m in mask_strategy(10)) {
        let l = largest_component(&m);
        prop_assert!(subset(&l, &m));
        prop_assert_eq!(largest_component(&l), l.clone());
        prop_assert_eq!(l.is_empty(), m.is_empty());
    }

    #[test]
    fn pipeline_is_a_fixed_point(m in mask_strategy(10)) {
        let p = postprocess(&m);
        prop_assert_eq!(postprocess(&p), p.clone());
        prop_assert_eq!(p, largest_component(&fill_holes(&m)));
    }

    #[test]
    fn lr_stays_within_bounds(
        metrics in proptest::collection::vec(-1.0f64..0.0, 1..150),
        restarts in any::<bool>(),
        patience in 0usize..6,
        restart_period in 1usize..20,
    ) {
        let config = ScheduleConfig { patience, restart_period, ..ScheduleConfig::default() };
        let phase = if restarts { Phase::PlateauWithRestarts } else { Phase::Plateau };
        for lr in lr_trace(config, phase, &metrics).unwrap() {
            prop_assert!(config.min_lr <= lr && lr <= config.initial_lr);
        }
    }

    #[test]
    fn block_starts_cover_the_axis(extent in 1usize..60, patch in 1usize..20, stride in 1usize..20) {
        prop_assume!(patch <= extent);
        let starts = block_starts(extent, patch, stride);
        prop_assert_eq!(starts[0], 0);
        prop_assert_eq!(*starts.last().unwrap(), extent - patch);
        prop_assert!(starts.windows(2).all(|w| w[0] < w[1] && w[1] - w[0] <= stride));
    }

    #[test]
    fn blocks_select_whole_annotated_slices(
        lo in 1usize..6,
        len in 1usize..6,
        p in 0.05f64..1.0,
        centre in 0usize..12,
        pz in 1usize..8,
        sz in 1usize..8,
    ) {
        let d = Dims::new(6, 5, 12);
        let hi = (lo + len - 1).min(d.z - 2);
        let gt = BinaryMask3D::from_fn(d, Spacing::isotropic(), |x, y, z| {
            (lo..=hi).contains(&z) && (x + y + z) % 3 != 0
        }).unwrap();
        let extent = compute_extent(&gt).unwrap();
        let plan = place_window(extent, d.z, p, centre.clamp(extent.z_min, extent.z_max));
        let label = build_partial_label(&gt, &plan).unwrap();
        let img = Volume3D::zeros(d, Spacing::isotropic()).unwrap();
        let patch = Dims::new(4, 3, pz.min(d.z));
        let blocks = extract_blocks(&img, &label, patch, Dims::new(2, 2, sz)).unwrap();
        prop_assert!(!blocks.is_empty());
        let n = patch.slice_len();
        for b in &blocks {
            let sel = b.selection();
            let mut any = false;
            for z in 0..patch.z {
                let slice = &sel[z * n..(z + 1) * n];
                prop_assert!(slice.iter().all(|&v| v == slice[0]));
                any |= slice[0] == 1;
                if slice[0] == 0 {
                    prop_assert!(b.target()[z * n..(z + 1) * n].iter().all(|&v| v == 0));
                }
            }
            prop_assert!(any);
        }
    }
}
