use candle_core::DType;
use cbns_core::censor::{CensorSpec, NoiseSpec, SamplerSpec};
use cbns_core::data::{emit_off, load_dataset, parse_off, save_dataset, TriangleMesh};
use cbns_core::evaluation::{dominates, nhv, pareto_front, TradeoffPoint};
use cbns_core::geometry::{match_hard, sq_dist};
use cbns_core::{CensorModel, Dataset, LabeledSample, PointCloud, RandomStream, Split};
use proptest::prelude::*;

fn coord() -> impl Strategy<Value = f32> {
    -1.0f32..1.0
}

fn points(max: usize) -> impl Strategy<Value = Vec<[f32; 3]>> {
    prop::collection::vec([coord(), coord(), coord()], 1..=max)
}

fn tradeoffs() -> impl Strategy<Value = Vec<TradeoffPoint>> {
    prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..25)
        .prop_map(|v| v.into_iter().map(|(p, u)| TradeoffPoint::at(p, u)).collect())
}

proptest! {
    #[test]
    fn front_is_exactly_the_undominated_points(pts in tradeoffs()) {
        let front = pareto_front(&pts);
        prop_assert!(!front.is_empty());
        for f in &front {
            prop_assert!(!pts.iter().any(|q| dominates(q, f)));
        }
        for p in &pts {
            let on_front = front.iter().any(|f| f.privacy == p.privacy && f.utility == p.utility);
            prop_assert!(on_front || front.iter().any(|f| dominates(f, p)));
        }
    }

    #[test]
    fn hypervolume_is_bounded_monotone_and_front_only(pts in tradeoffs(), extra in (0.0f64..=1.0, 0.0f64..=1.0)) {
        let v = nhv(&pts).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((nhv(&pareto_front(&pts)).unwrap() - v).abs() < 1e-12);
        let mut more = pts.clone();
        more.push(TradeoffPoint::at(extra.0, extra.1));
        prop_assert!(nhv(&more).unwrap() >= v - 1e-12);
    }

    #[test]
    fn hard_matching_is_injective_and_above_the_free_bound(reference in points(40), r in 1usize..40) {
        let r = r.min(reference.len());
        let generated: Vec<[f32; 3]> = reference.iter().rev().take(r).map(|p| [p[1], p[0], p[2] * 0.5]).collect();
        let idx = match_hard(&generated, &reference).unwrap();
        prop_assert_eq!(idx.len(), r);
        let mut seen = idx.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), r);
        let total: f64 = generated.iter().zip(&idx).map(|(g, &i)| sq_dist(g, &reference[i])).sum();
        let free: f64 = generated
            .iter()
            .map(|g| reference.iter().map(|x| sq_dist(g, x)).fold(f64::INFINITY, f64::min))
            .sum();
        prop_assert!(total >= free - 1e-9);
    }

    #[test]
    fn off_round_trip(vertices in prop::collection::vec([-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0], 3..12), seed in 0u64..1000) {
        let n = vertices.len();
        let faces: Vec<[usize; 3]> = (0..(seed as usize % 5 + 1))
            .map(|k| [k % n, (k + 1) % n, (k + 2) % n])
            .collect();
        let mesh = TriangleMesh::new(vertices, faces).unwrap();
        prop_assert_eq!(parse_off(&emit_off(&mesh)).unwrap(), mesh);
    }

    #[test]
    fn fps_release_selects_input_rows(cloud in points(48), r in 1usize..16, seed in 0u64..100) {
        prop_assume!(cloud.len() > r);
        let cloud = PointCloud::new(cloud).unwrap();
        let spec = CensorSpec { sampler: SamplerSpec::Fps { r }, noise: NoiseSpec::Disabled };
        let censor = CensorModel::from_spec(&spec, DType::F32, &RandomStream::new(0)).unwrap();
        let out = censor.censor(&cloud, &RandomStream::new(seed)).unwrap();
        prop_assert_eq!(out.len(), r);
        for p in out.points() {
            prop_assert!(cloud.points().contains(p));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dataset_files_round_trip_bit_exactly(clouds in prop::collection::vec(prop::collection::vec([coord(), coord(), coord()], 5), 1..6)) {
        let samples: Vec<LabeledSample> = clouds
            .into_iter()
            .enumerate()
            .map(|(i, pts)| LabeledSample { cloud: PointCloud::new(pts).unwrap(), y_t: i % 2, y_s: i % 3 })
            .collect();
        let names = |k: usize| (0..k).map(|i| format!("c{i}")).collect::<Vec<_>>();
        let data = Dataset::new(samples, names(2), names(3), Split::Test).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &[&data], Some(1), None).unwrap();
        let back = load_dataset(dir.path(), Split::Test).unwrap();
        for (a, b) in data.samples.iter().zip(&back.samples) {
            prop_assert_eq!((a.y_t, a.y_s), (b.y_t, b.y_s));
            for (p, q) in a.cloud.points().iter().zip(b.cloud.points()) {
                prop_assert_eq!(p.map(f32::to_bits), q.map(f32::to_bits));
            }
        }
    }
}
