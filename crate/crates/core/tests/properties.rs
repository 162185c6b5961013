use dumpwatch::dataset::{compute_ndsw, lattice_starts, split_assignment, split_sizes, BandSpec, SplitName};
use dumpwatch::geodata::{
    parse_annotations, read_annotations, world_to_pixel, write_annotations, GeoTransform, PolygonAnnotation,
};
use dumpwatch::grid::Mask;
use dumpwatch::training::iou;
use proptest::prelude::*;

fn mask_pair() -> impl Strategy<Value = (Mask, Mask)> {
    (1usize..16, 1usize..16).prop_flat_map(|(w, h)| {
        (
            proptest::collection::vec(0u8..2, w * h),
            proptest::collection::vec(0u8..2, w * h),
        )
            .prop_map(move |(a, b)| (Mask::from_vec(w, h, a).unwrap(), Mask::from_vec(w, h, b).unwrap()))
    })
}

proptest! {
    #[test]
    fn iou_is_symmetric_bounded_and_reflexive((a, b) in mask_pair()) {
        let ab = iou(&a, &b).unwrap();
        prop_assert_eq!(ab, iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn cell_centres_map_back_to_their_cell(
        ox in -1e6f64..1e6, oy in -1e6f64..1e6, px in 0.1f64..100.0, col in -500i64..500, row in -500i64..500,
    ) {
        let t = GeoTransform::new(ox, oy, px, px).unwrap();
        let (x, y) = t.cell_center(col, row);
        prop_assert_eq!(world_to_pixel(&t, x, y), (col, row));
    }

    #[test]
    fn split_sizes_partition_every_item(n in 0usize..3000, test in 0.0f64..0.45, val in 0.0f64..0.45, seed: u64) {
        let (tr, va, te) = split_sizes(n, test, val).unwrap();
        prop_assert_eq!(tr + va + te, n);
        let assignment = split_assignment(n, test, val, seed).unwrap();
        let count = |s| assignment.iter().filter(|&&a| a == s).count();
        prop_assert_eq!((count(SplitName::Train), count(SplitName::Val), count(SplitName::Test)), (tr, va, te));
        prop_assert_eq!(&assignment, &split_assignment(n, test, val, seed).unwrap());
    }

    #[test]
    fn lattice_windows_stay_inside(extent in 1usize..500, size in 1usize..100, stride in 1usize..100) {
        let starts = lattice_starts(extent, size, stride);
        prop_assert!(starts.iter().all(|&s| s + size <= extent));
        prop_assert_eq!(starts.is_empty(), size > extent);
        prop_assert!(starts.windows(2).all(|w| w[1] - w[0] == stride));
    }

    #[test]
    fn ndsw_of_positive_reflectance_is_bounded(
        pairs in proptest::collection::vec((0.001f32..2.0, 0.001f32..2.0), 1..64),
    ) {
        let (s1, s2): (Vec<f32>, Vec<f32>) = pairs.into_iter().unzip();
        let out = compute_ndsw(&s1, &s2, None).unwrap();
        prop_assert!(out.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn band_lists_parse_back_to_their_names(
        picks in proptest::collection::vec(prop::sample::select(vec!["R", "G", "B", "NIR", "SWIR1", "SWIR2", "NDSW"]), 1..7),
    ) {
        let spec = BandSpec::parse(&picks.join(",")).unwrap();
        prop_assert_eq!(spec.names(), picks.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    }

    #[test]
    fn annotations_round_trip_through_files(
        rects in proptest::collection::vec((-1e5f64..1e5, -1e5f64..1e5, 0.01f64..500.0, 0.01f64..500.0), 0..8),
    ) {
        let polys: Vec<PolygonAnnotation> = rects
            .iter()
            .map(|&(x, y, w, h)| {
                let ring = vec![[x, y], [x + w, y], [x + w, y + h], [x, y + h], [x, y]];
                PolygonAnnotation::new(ring, Vec::new(), "dump").unwrap()
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.geojson");
        write_annotations(&polys, &path).unwrap();
        let back = read_annotations(&path).unwrap();
        prop_assert_eq!(&back.polygons, &polys);
        let text = std::fs::read_to_string(&path).unwrap();
        prop_assert_eq!(parse_annotations(&text).unwrap().polygons, polys);
    }
}
