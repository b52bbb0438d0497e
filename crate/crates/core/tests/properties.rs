use std::path::Path;

use proptest::prelude::*;

use chunkcpc::abx::{abx_error, angular_distance, dtw_unit, read_rep, unit_frames, write_rep, Segment};
use chunkcpc::corpus::{log_mel, load_wav, segment_frames, write_wav, FeatureConfig};
use chunkcpc::nn::Width;
use chunkcpc::objectives::{mask_spans, sample_negatives, Codebook};
use chunkcpc::rng::rng;
use chunkcpc::tensor::{Graph, Tensor};
use chunkcpc::trainer::{make_batches, validation_mask, Checkpoint, EpochLoss};

fn frames(dim: usize, max_len: usize) -> impl Strategy<Value = Vec<f32>> {
    (1..=max_len).prop_flat_map(move |n| {
        prop::collection::vec(-1.0f32..1.0, n * dim).prop_filter("no zero frame", move |v| {
            v.chunks(dim).all(|f| f.iter().any(|&x| x.abs() > 1e-3))
        })
    })
}

fn segment(phone: &str, frames: &[f32], dim: usize) -> Segment {
    Segment {
        utterance_id: "u".into(),
        start: 0,
        phone: phone.into(),
        prev: "a".into(),
        next: "b".into(),
        speaker: "s".into(),
        subset: "t".into(),
        dim,
        frames: unit_frames(frames, dim).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batches_partition_in_order(n in 0usize..200, b in 1usize..20) {
        let batches = make_batches(n, b);
        let flat: Vec<usize> = batches.iter().flat_map(|r| r.clone()).collect();
        prop_assert_eq!(flat, (0..n).collect::<Vec<_>>());
        prop_assert!(batches.iter().all(|r| !r.is_empty() && r.len() <= b));
    }

    #[test]
    fn validation_keeps_both_sides(n in 2usize..500, f in 0.001f64..0.999) {
        let m = validation_mask(n, f);
        let k = m.iter().filter(|&&x| x).count();
        prop_assert!(k >= 1 && k < n);
        prop_assert!((k as f64 - n as f64 * f).abs() <= 1.0 || k == 1 || k == n - 1);
    }

    #[test]
    fn angular_distance_is_a_bounded_symmetric_scale_free_score(
        u in prop::collection::vec(-5.0f32..5.0, 6),
        v in prop::collection::vec(-5.0f32..5.0, 6),
        a in 0.1f32..10.0,
    ) {
        prop_assume!(u.iter().any(|x| x.abs() > 1e-2) && v.iter().any(|x| x.abs() > 1e-2));
        let d = angular_distance(&u, &v).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((d - angular_distance(&v, &u).unwrap()).abs() < 1e-12);
        let scaled: Vec<f32> = u.iter().map(|x| x * a).collect();
        prop_assert!((d - angular_distance(&scaled, &v).unwrap()).abs() < 1e-6);
        prop_assert!(angular_distance(&u, &u).unwrap() < 1e-3);
    }

    #[test]
    fn dtw_is_symmetric_bounded_and_zero_on_itself(a in frames(3, 7), b in frames(3, 7)) {
        let (ua, ub) = (unit_frames(&a, 3).unwrap(), unit_frames(&b, 3).unwrap());
        let d = dtw_unit(&ua, &ub, 3);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((d - dtw_unit(&ub, &ua, 3)).abs() < 1e-12);
        prop_assert!(dtw_unit(&ua, &ua, 3) < 1e-6);
    }

    #[test]
    fn abx_error_is_a_rate(
        xs in prop::collection::vec(frames(2, 3), 2..5),
        ys in prop::collection::vec(frames(2, 3), 1..4),
    ) {
        let a: Vec<Segment> = xs.iter().map(|f| segment("p", f, 2)).collect();
        let b: Vec<Segment> = ys.iter().map(|f| segment("q", f, 2)).collect();
        let e = abx_error(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn negatives_start_with_the_positive(pool in 1usize..500, m in 2usize..200, seed in any::<u64>()) {
        let pos = seed as usize % pool;
        let idx = sample_negatives(pool, pos, m, &mut rng(seed)).unwrap();
        prop_assert_eq!(idx.len(), m);
        prop_assert_eq!(idx[0], pos);
        prop_assert!(idx.iter().all(|&i| i < pool));
    }

    #[test]
    fn mask_spans_cover_whole_spans(t in 1usize..400, p in 0.0f64..0.3, span in 1usize..20, seed in any::<u64>()) {
        let m = mask_spans(t, p, span, &mut rng(seed)).unwrap();
        prop_assert_eq!(m.len(), t);
        // a masked run shorter than a span must touch the end of the sequence
        let mut i = 0;
        while i < t {
            if m[i] {
                let start = i;
                while i < t && m[i] {
                    i += 1;
                }
                prop_assert!(i - start >= span || i == t, "run {start}..{i}");
            } else {
                i += 1;
            }
        }
    }

    #[test]
    fn quantizer_ignores_positive_scale(z in prop::collection::vec(-3.0f32..3.0, 8), a in 0.01f32..100.0, seed in 0u64..50) {
        prop_assume!(z.iter().any(|x| x.abs() > 1e-2));
        let cb = Codebook::new(32, 8, seed).unwrap();
        let scaled: Vec<f32> = z.iter().map(|x| x * a).collect();
        let k = cb.quantize(&z).unwrap();
        prop_assert!(k < 32);
        prop_assert_eq!(k, cb.quantize(&scaled).unwrap());
    }

    #[test]
    fn window_softmax_rows_are_distributions_on_the_band(t in 1usize..12, w in 1usize..14, seed in any::<u64>()) {
        use rand::Rng as _;
        let mut r = rng(seed);
        let x = Tensor::from_fn(&[t, t], |_| r.random_range(-4.0..4.0));
        let mut g = Graph::<f64>::new();
        let xv = g.input(x).unwrap();
        let y = g.window_softmax(xv, Some(w)).unwrap();
        let y = g.value(y);
        for i in 0..t {
            let row = y.row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (j, &v) in row.iter().enumerate() {
                let inside = j <= i && j + w > i;
                prop_assert_eq!(v > 0.0, inside, "row {} col {}", i, j);
            }
        }
    }

    #[test]
    fn segment_frames_stay_inside_the_span(onset in 0.0f64..5.0, len in 0.0f64..1.0) {
        let offset = onset + len;
        if let Some(r) = segment_frames(onset, offset) {
            prop_assert!(r.start as f64 * 0.01 >= onset - 1e-6);
            prop_assert!(r.end as f64 * 0.01 <= offset + 1e-6);
        }
        if len >= 0.02 {
            prop_assert!(segment_frames(onset, offset).is_some());
        }
    }

    #[test]
    fn log_mel_emits_one_finite_frame_per_hop(n in 400usize..4000, seed in any::<u64>()) {
        use rand::Rng as _;
        let mut r = rng(seed);
        let x: Vec<f32> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let cfg = FeatureConfig { n_mels: 20, ..FeatureConfig::default() };
        let m = log_mel(&x, &cfg).unwrap();
        prop_assert_eq!(m.shape(), &[n / 160, 20]);
        prop_assert!(m.is_finite());
    }

    #[test]
    fn width_text_round_trips(w in prop_oneof![Just(Width::Unbounded), (2usize..10_000).prop_map(Width::Bounded)]) {
        prop_assert_eq!(w.to_string().parse::<Width>().unwrap(), w);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn rep_and_wav_files_round_trip(t in 1usize..50, d in 1usize..20, q in prop::collection::vec(-32768i32..32768, 1..300)) {
        let dir = tempfile::tempdir().unwrap();
        let rep = Tensor::from_fn(&[t, d], |i| (i as f32).sin() * 1e3);
        write_rep(&dir.path().join("x.rep"), &rep).unwrap();
        prop_assert_eq!(read_rep(&dir.path().join("x.rep")).unwrap(), rep);
        let samples: Vec<f32> = q.iter().map(|&v| v as f32 / 32768.0).collect();
        let p = dir.path().join("x.wav");
        write_wav(&p, &samples).unwrap();
        prop_assert_eq!(load_wav(&p).unwrap(), samples);
    }

    #[test]
    fn checkpoint_bytes_round_trip(
        epoch in 0usize..1000,
        vals in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..6),
        blob in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..40),
        steps in any::<u64>(),
    ) {
        let ck = Checkpoint {
            config: "[train]\nepochs = 3\n".into(),
            epoch,
            val_loss: vals[0],
            history: vals.iter().enumerate().map(|(i, &v)| EpochLoss { epoch: i + 1, train: v, val: -v }).collect(),
            best: Some((1, vals[0])),
            adam_steps: steps,
            blobs: vec![("w".into(), Tensor::new(&[blob.len()], blob).unwrap())],
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("mem")).unwrap();
        prop_assert_eq!(back, ck);
    }
}
