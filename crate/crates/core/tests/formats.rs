mod common;

use nait_core::natr::{decode, encode};
use nait_core::{
    extract_profile, read_traces, write_traces, ActivationTrace, DetRng, LayerActivation, NaitError, Profile,
    ReadFormat, ScoreRecord, ScoreTable, Scores, TraceFormat, TraceSet,
};
use proptest::prelude::*;

/// Finite f32 values from raw bit patterns, covering subnormals, signed
/// zeros and extreme exponents.
fn raw_f32(rng: &mut DetRng) -> f32 {
    loop {
        let x = f32::from_bits(rng.next_u64() as u32);
        if x.is_finite() {
            return x;
        }
    }
}

const ID_PIECES: [&str; 6] = ["a", "é", "\"q\"", "x,y", " sp", "\\"];

fn bit_pattern_set(seed: u64, n: usize, dims: &[usize]) -> TraceSet {
    let mut rng = DetRng::new(seed);
    let traces = (0..n)
        .map(|i| {
            let k = 1 + rng.below(5) as u32;
            let id = format!("{}{i}", ID_PIECES[rng.below(ID_PIECES.len() as u64) as usize]);
            let layers = dims
                .iter()
                .enumerate()
                .map(|(l, &j)| {
                    let v = |rng: &mut DetRng| (0..j).map(|_| raw_f32(rng)).collect::<Vec<f32>>();
                    if k == 1 {
                        let x = v(&mut rng);
                        LayerActivation::new(l, x.clone(), x.clone(), x)
                    } else {
                        LayerActivation::new(l, v(&mut rng), v(&mut rng), v(&mut rng))
                    }
                })
                .collect();
            ActivationTrace::new(id, k, layers)
        })
        .collect();
    TraceSet::new(format!("bits-{seed}"), dims.to_vec(), traces).unwrap()
}

fn dims() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..7, 1..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn binary_reencodes_byte_identically(seed in any::<u64>(), n in 0usize..8, dims in dims()) {
        let set = bit_pattern_set(seed, n, &dims);
        let bytes = encode(&set, TraceFormat::Binary).unwrap();
        let back = decode(&bytes, ReadFormat::Binary, true).unwrap();
        prop_assert_eq!(encode(&back, TraceFormat::Binary).unwrap(), bytes);
    }

    #[test]
    fn jsonl_is_a_lossless_detour(seed in any::<u64>(), n in 0usize..8, dims in dims()) {
        let set = bit_pattern_set(seed, n, &dims);
        let bin = encode(&set, TraceFormat::Binary).unwrap();
        let json = encode(&decode(&bin, ReadFormat::Auto, true).unwrap(), TraceFormat::Jsonl).unwrap();
        let via_json = decode(&json, ReadFormat::Auto, true).unwrap();
        prop_assert_eq!(encode(&via_json, TraceFormat::Binary).unwrap(), bin);
        prop_assert_eq!(encode(&via_json, TraceFormat::Jsonl).unwrap(), json);
    }

    #[test]
    fn truncated_binary_is_a_format_error(seed in any::<u64>(), n in 1usize..5, dims in dims(), cut in 1usize..64) {
        let set = bit_pattern_set(seed, n, &dims);
        let bytes = encode(&set, TraceFormat::Binary).unwrap();
        let last = &set.traces[n - 1];
        let record_len = 8 + last.sample_id.len() + 12 * dims.iter().sum::<usize>();
        let keep = bytes.len() - (1 + cut % (record_len - 1));
        match decode(&bytes[..keep], ReadFormat::Binary, true) {
            Err(NaitError::Format { .. }) => {}
            other => prop_assert!(false, "expected format error, got {:?}", other.map(|s| s.len())),
        }
    }

    #[test]
    fn profile_text_is_a_fixed_point(seed in any::<u64>(), n in 2usize..12, dims in dims()) {
        let set = common::random_trace_set(seed, n, &dims);
        let p: Profile = match extract_profile(&set, "cap") {
            Ok(p) => p,
            Err(NaitError::DegenerateData { .. }) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let text = p.to_text();
        let back = Profile::from_text(&text).unwrap();
        prop_assert_eq!(back.to_text(), text);
        for (a, b) in p.directions.iter().flatten().zip(back.directions.iter().flatten()) {
            prop_assert!((a - b).abs() <= 5e-9 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn score_csv_is_a_fixed_point(values in prop::collection::vec(-1e12f64..1e12, 0..30)) {
        let records = values
            .iter()
            .enumerate()
            .map(|(i, &s)| ScoreRecord { sample_id: format!("{}{i}", ID_PIECES[i % ID_PIECES.len()]), score: s })
            .collect();
        let t: Scores = ScoreTable::from_records("c", None, records).unwrap();
        let csv = t.to_csv();
        let back = Scores::from_csv(&csv, "c").unwrap();
        prop_assert_eq!(back.to_csv(), csv);
        prop_assert_eq!(back.len(), t.len());
    }
}

#[test]
fn fifty_seeded_sets_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..50u64 {
        let set = common::random_trace_set(seed, 1 + seed as usize % 9, &[3, 8, 1]);
        let bin = dir.path().join(format!("{seed}.natr"));
        let json = dir.path().join(format!("{seed}.jsonl"));
        let bin2 = dir.path().join(format!("{seed}-again.natr"));
        write_traces(&set, &bin, TraceFormat::Binary).unwrap();
        let read = read_traces(&bin, ReadFormat::Auto).unwrap();
        assert_eq!(read, set);
        write_traces(&read, &json, TraceFormat::Jsonl).unwrap();
        write_traces(&read_traces(&json, ReadFormat::Jsonl).unwrap(), &bin2, TraceFormat::Binary).unwrap();
        assert_eq!(std::fs::read(&bin).unwrap(), std::fs::read(&bin2).unwrap(), "seed {seed}");
    }
    let leftovers: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with(".nait-"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn validation_reports_every_problem() {
    let mut set = common::random_trace_set(3, 4, &[2, 2]);
    set.traces[1].sample_id = set.traces[0].sample_id.clone();
    set.traces[2].layers[1].mean.push(0.0);
    set.traces[3].token_count = 0;
    let report = set.validate();
    assert!(!report.ok);
    assert!(report.issues.len() >= 3, "{report}");
    assert!(write_traces(&set, std::env::temp_dir().join("never.natr"), TraceFormat::Binary).is_err());
}
