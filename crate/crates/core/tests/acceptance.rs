//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test -p streamconv-core --test acceptance`.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{shifted_max_err, white_noise};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use streamconv_core::metrics::correlation;
use streamconv_core::model_io::wav::{decode_wav, encode_wav};
use streamconv_core::model_io::{decode, encode, parse_manifest};
use streamconv_core::ola::flat_top_window;
use streamconv_core::synth::{random_graph, RandomGraphConfig};
use streamconv_core::*;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn population() -> Vec<(String, GraphIR)> {
    let cfg = RandomGraphConfig::default();
    let mut graphs: Vec<_> = (0..200u64)
        .map(|s| (format!("random seed {s}"), random_graph(s, &cfg)))
        .collect();
    graphs.push((
        "synthetic rave".into(),
        make_synthetic_rave(&SynthConfig::default()).unwrap(),
    ));
    graphs
}

fn exact_streaming(graphs: &[(String, GraphIR)]) -> Outcome {
    let t0 = Instant::now();
    let results: Vec<Result<f32, String>> = graphs
        .par_iter()
        .enumerate()
        .map(|(i, (name, g))| {
            let c = causalize(g).map_err(|e| format!("{name}: {e}"))?;
            let r = compression_ratio(g).unwrap() as usize;
            let x = white_noise(7_000 + i as u64, 128 * r);
            let offline = offline_run(&c.graph, &x).map_err(|e| format!("{name}: {e}"))?;
            let mut first: Option<SignalTensor> = None;
            let mut worst = 0.0f32;
            for b in [r, 2 * r, 7 * r, 64 * r] {
                let y = stream_run(&c.graph, &x, &[b]).map_err(|e| format!("{name}: {e}"))?;
                worst = worst.max(y.max_abs_diff(&offline));
                match &first {
                    None => first = Some(y),
                    Some(f) if f != &y => return Err(format!("{name}: buffer {b} output differs")),
                    _ => {}
                }
            }
            if worst > 1e-5 {
                return Err(format!("{name}: max error {worst:e}"));
            }
            Ok(worst)
        })
        .collect();
    let elapsed = t0.elapsed().as_secs_f64();
    let mut worst = 0.0f32;
    for r in &results {
        match r {
            Ok(e) => worst = worst.max(*e),
            Err(msg) => return Outcome::new(false, msg.clone()),
        }
    }
    Outcome::new(
        elapsed < 60.0,
        format!(
            "{} graphs x buffers {{r,2r,7r,64r}}: max |stream - offline| = {worst:e}, partitions bit-identical, {elapsed:.2}s",
            graphs.len()
        ),
    )
}

fn shift_equivalence(graphs: &[(String, GraphIR)]) -> Outcome {
    let results: Vec<Result<(f32, u64), String>> = graphs
        .par_iter()
        .enumerate()
        .map(|(i, (name, g))| {
            let c = causalize(g).map_err(|e| format!("{name}: {e}"))?;
            let r = compression_ratio(g).unwrap() as usize;
            let rf = receptive_field(g).unwrap();
            let lat = c.report.total_latency;
            if !lat.is_integer() {
                return Err(format!("{name}: fractional latency {lat}"));
            }
            let lat = lat.to_integer() as usize;
            let len = (4 * (rf.span() as usize + lat) + 2048).div_ceil(r) * r;
            let x = white_noise(9_000 + i as u64, len);
            let a = offline_run(g, &x).unwrap();
            let b = offline_run(&c.graph, &x).unwrap();
            let err = shifted_max_err(&a, &b, lat, rf.past as usize);
            if err > 1e-5 {
                return Err(format!("{name}: shifted error {err:e} at latency {lat}"));
            }
            // both sides drop the same start-up window, which keeps the lag
            let skip = rf.past as usize;
            let (a, b) = (a.slice_time(skip, a.len()), b.slice_time(skip, b.len()));
            let lag = best_lag(&a, &b, lat + 64).map_err(|e| format!("{name}: {e}"))?;
            if lag != lat {
                return Err(format!("{name}: best lag {lag}, ledger latency {lat}"));
            }
            Ok((err, lat as u64))
        })
        .collect();
    let mut worst = 0.0f32;
    let mut max_lat = 0;
    for r in &results {
        match r {
            Ok((e, l)) => {
                worst = worst.max(*e);
                max_lat = max_lat.max(*l);
            }
            Err(msg) => return Outcome::new(false, msg.clone()),
        }
    }
    Outcome::new(
        true,
        format!(
            "{} graphs: max shifted error {worst:e}, best_lag == ledger latency for all (latencies up to {max_lat})",
            graphs.len()
        ),
    )
}

fn stride_delay_sweep() -> Outcome {
    let t0 = Instant::now();
    let mut checked = 0;
    for s in 1..=8u64 {
        for r in 0..=8u64 {
            for dc in 0..=32u64 {
                let da = delay_for_stride(s, r, dc);
                if da >= s || !(r + dc + da).is_multiple_of(s) {
                    return Outcome::new(false, format!("S={s} R={r} Dc={dc} gave {da}"));
                }
                checked += 1;
            }
        }
    }
    let spots = [(delay_for_stride(4, 3, 0), 1), (delay_for_stride(3, 2, 4), 0)];
    let elapsed = t0.elapsed().as_secs_f64();
    Outcome::new(
        spots.iter().all(|(a, b)| a == b) && elapsed < 1.0,
        format!(
            "{checked} cases, (4,3,0)->{} (3,2,4)->{}, {elapsed:.4}s",
            spots[0].0, spots[1].0
        ),
    )
}

fn branch_alignment_check(graphs: &[(String, GraphIR)]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10_000 {
        let n = rng.random_range(1..10);
        let delays: Vec<u64> = (0..n).map(|_| rng.random_range(0..1000)).collect();
        let added = branch_alignment(&delays);
        let totals: Vec<u64> = delays.iter().zip(&added).map(|(d, a)| d + a).collect();
        if totals.iter().any(|t| *t != totals[0]) || added.iter().min() != Some(&0) {
            return Outcome::new(false, format!("{delays:?} -> {added:?}"));
        }
    }
    let mut residual = 0;
    for (name, g) in graphs {
        if !g.nodes().iter().any(|n| matches!(n, NodeKind::Sum { .. })) {
            continue;
        }
        residual += 1;
        let c = causalize(g).unwrap();
        let topo = c.graph.analyze().unwrap();
        for (id, kind) in c.graph.nodes().iter().enumerate() {
            if let NodeKind::Sum { .. } = kind {
                let d: Vec<u64> = topo.inputs[id].iter().map(|&e| c.ledger.edge(e)).collect();
                if d.iter().any(|v| *v != d[0]) {
                    return Outcome::new(false, format!("{name}: sum {id} operands at delays {d:?}"));
                }
            }
        }
    }
    Outcome::new(
        residual > 0,
        format!(
            "10000 random delay vectors aligned with min insertion 0; {residual} residual graphs have equal operand delays at every sum and passed criterion 1"
        ),
    )
}

/// Chunk sizes `base * 2^j` with `base` the smallest multiple of `4r` that
/// covers the receptive field, so the largest is at least 32x the field.
fn ola_chunks(span: usize, r: usize) -> Vec<usize> {
    let base = span.div_ceil(4 * r) * 4 * r;
    (0..6).map(|j| base << j).collect()
}

fn ola_imperfection() -> Outcome {
    let cfg = RandomGraphConfig {
        nonlinear: false,
        bias: false,
        ..RandomGraphConfig::default()
    };
    // memoryless graphs have no chunk-edge error at all; they are skipped
    let graphs: Vec<(u64, GraphIR)> = (0..200u64)
        .map(|s| (s, random_graph(s, &cfg)))
        .filter(|(_, g)| receptive_field(g).unwrap().span() > 1)
        .take(12)
        .collect();
    type Row = Result<(Vec<[f64; 3]>, f64, f64), String>;
    let rows: Vec<Row> = graphs
        .par_iter()
        .map(|(seed, g)| {
            let r = compression_ratio(g).unwrap() as usize;
            let span = receptive_field(g).unwrap().span() as usize;
            let chunks = ola_chunks(span, r);
            let t = 6 * chunks[5];
            let x = white_noise(seed + 500, t);
            let offline = offline_run(g, &x).unwrap();
            let mut ls = Vec::new();
            for &n in &chunks {
                let mut per_overlap = [0.0; 3];
                for (k, ov) in Overlap::ALL.into_iter().enumerate() {
                    let y = ola_process(g, &x, &OlaConfig::new(n, ov)).map_err(|e| format!("seed {seed}: {e}"))?;
                    let s = spectral_distance(&y, &offline).unwrap();
                    let w = euclidean_distance(&y, &offline).unwrap();
                    if s <= 0.0 || w <= 0.0 {
                        return Err(format!("seed {seed}: chunk {n} overlap {ov}%: L_s {s} L_w {w}"));
                    }
                    per_overlap[k] = s;
                }
                ls.push(per_overlap);
            }
            let c = causalize(g).unwrap();
            let causal_offline = offline_run(&c.graph, &x).unwrap();
            let bound = 1e-4 * (t as f64).sqrt();
            let mut worst_w = 0.0f64;
            let mut worst_s = 0.0f64;
            for b in [r, 4 * r, 64 * r] {
                let y = stream_run(&c.graph, &x, &[b]).unwrap();
                let w = euclidean_distance(&y, &causal_offline).unwrap();
                let s = spectral_distance(&y, &causal_offline).unwrap();
                let corr = correlation(&y, &causal_offline).unwrap_or(1.0);
                if w > bound || s > bound || corr < 0.9999 {
                    return Err(format!("seed {seed}: streaming L_w {w} L_s {s} L_c {corr}"));
                }
                worst_w = worst_w.max(w);
                worst_s = worst_s.max(s);
            }
            Ok((ls, worst_w, worst_s))
        })
        .collect();
    let mut per_seed = Vec::new();
    let (mut worst_w, mut worst_s) = (0.0f64, 0.0f64);
    for r in rows {
        match r {
            Ok((ls, w, s)) => {
                per_seed.push(ls);
                worst_w = worst_w.max(w);
                worst_s = worst_s.max(s);
            }
            Err(msg) => return Outcome::new(false, msg),
        }
    }
    let mut medians = [[0.0; 6]; 3];
    for (k, med) in medians.iter_mut().enumerate() {
        for (j, m) in med.iter_mut().enumerate() {
            let mut v: Vec<f64> = per_seed.iter().map(|ls| ls[j][k]).collect();
            v.sort_by(f64::total_cmp);
            *m = (v[(v.len() - 1) / 2] + v[v.len() / 2]) / 2.0;
        }
    }
    let monotone = medians.iter().all(|m| m.windows(2).all(|w| w[1] <= w[0]));
    let fmt = |m: &[f64; 6]| m.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(" ");
    Outcome::new(
        monotone,
        format!(
            "{} linear graphs, chunks 1x..32x field: OLA L_s, L_w > 0 everywhere; streaming L_w <= {worst_w:e}, L_s <= {worst_s:e}; median L_s by chunk: ola0 [{}] ola25 [{}] ola50 [{}]",
            per_seed.len(),
            fmt(&medians[0]),
            fmt(&medians[1]),
            fmt(&medians[2])
        ),
    )
}

fn redundancy() -> Outcome {
    let g = make_synthetic_rave(&SynthConfig::default()).unwrap();
    let r = compression_ratio(&g).unwrap() as usize;
    let buffers = vec![4 * r, 16 * r, 64 * r];
    let cfg = BenchConfig {
        methods: Method::ALL.to_vec(),
        buffer_sizes: buffers.clone(),
        duration_s: 1.0,
        trials: 10,
        sample_rate: 8192,
        seed: 1,
    };
    let report = match bench(&g, &cfg) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let mut pass = true;
    let mut detail = Vec::new();
    for b in buffers {
        let rate = |m| report.row(m, b).unwrap().macs_per_sec;
        let s = rate(Method::Stream);
        let q = rate(Method::Ola(Overlap::Quarter)) / s;
        let h = rate(Method::Ola(Overlap::Half)) / s;
        let z = rate(Method::Ola(Overlap::None)) / s;
        pass &= (h - 2.0).abs() <= 0.2 && (q - 4.0 / 3.0).abs() <= 0.1 * 4.0 / 3.0 && q > 1.0 && h > 1.0;
        detail.push(format!("buffer {b}: ola50 {h:.3}x ola25 {q:.3}x ola0 {z:.3}x"));
    }
    Outcome::new(pass, detail.join("; "))
}

fn closed_form_bytes(g: &GraphIR) -> usize {
    let topo = g.analyze().unwrap();
    g.nodes()
        .iter()
        .enumerate()
        .map(|(id, n)| match n {
            NodeKind::Conv(c) => c.padding.left * c.kernel.in_channels() * 4,
            NodeKind::Delay { samples, .. } => samples * topo.edge_channels[topo.inputs[id][0]] * 4,
            _ => 0,
        })
        .sum()
}

fn memory_constancy() -> Outcome {
    let mut graphs = vec![causalize(&make_synthetic_rave(&SynthConfig::default()).unwrap())
        .unwrap()
        .graph];
    graphs.extend((0..3).map(|s| causalize(&random_graph(s, &RandomGraphConfig::default())).unwrap().graph));
    let mut detail = Vec::new();
    for (i, g) in graphs.iter().enumerate() {
        let mut st = StreamState::new(g).unwrap();
        let r = st.ratio() as usize;
        let x = white_noise(i as u64, r * 64);
        st.process_buffer(g, &x.slice_time(0, r)).unwrap();
        let after_one = st.state_bytes();
        for k in 1..10_000 {
            let j = k % 64;
            st.process_buffer(g, &x.slice_time(j * r, (j + 1) * r)).unwrap();
        }
        let after_many = st.state_bytes();
        let closed = closed_form_bytes(g);
        if after_one != after_many || after_one != closed {
            return Outcome::new(false, format!("graph {i}: {after_one} / {after_many} / closed form {closed}"));
        }
        detail.push(after_one.to_string());
    }
    Outcome::new(
        true,
        format!("state bytes after 1 and 10000 buffers equal the closed form: [{}]", detail.join(", ")),
    )
}

fn latency_gap() -> Outcome {
    let sr = 44_100;
    let centered = make_synthetic_rave(&SynthConfig::default()).unwrap();
    let causal = make_synthetic_rave(&SynthConfig {
        padding: PaddingMode::Causal,
        ..SynthConfig::default()
    })
    .unwrap();
    let (a, b) = (causalize(&centered).unwrap(), causalize(&causal).unwrap());
    let (la, lb) = (a.report.total_latency, b.report.total_latency);
    Outcome::new(
        la > lb * 5,
        format!(
            "post-training causal {la} samples ({:.2} ms @ {sr} Hz) vs causal-mode {lb} samples ({:.2} ms)",
            a.report.millis(sr),
            b.report.millis(sr)
        ),
    )
}

fn cola() -> Outcome {
    let mut worst = 0.0f64;
    for n in [16usize, 64, 256, 1024, 2048, 4096] {
        let w = hann_window(n);
        for i in 0..n / 2 {
            worst = worst.max((w[i] + w[i + n / 2] - 1.0).abs());
        }
        let w = flat_top_window(n);
        let hop = 3 * n / 4;
        for i in 0..n {
            let sum = w[i] + if i + hop < n { w[i + hop] } else { 0.0 } + if i >= hop { w[i - hop] } else { 0.0 };
            worst = worst.max((sum - 1.0).abs());
        }
    }
    Outcome::new(worst <= 1e-6, format!("max |sum - 1| = {worst:e} (hann hop N/2, flat-top hop 3N/4)"))
}

fn io_round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let g = causalize(&make_synthetic_rave(&SynthConfig::default()).unwrap()).unwrap().graph;
    let model = Model::new(g, Some(44_100));
    let mut failures = Vec::new();
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    let bits = |m: &Model| {
        m.graph
            .conv_nodes()
            .flat_map(|(_, c)| c.kernel.weights().iter().chain(c.kernel.bias()).map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    if back != model || bits(&back) != bits(&model) {
        failures.push("model round trip");
    }
    let x = white_noise(3, 4096).with_sample_rate(Some(48_000));
    let wav_path = dir.path().join("x.wav");
    write_wav(&wav_path, &x).unwrap();
    let y = read_wav(&wav_path).unwrap();
    if y.sample_rate() != Some(48_000) || y.data().iter().zip(x.data()).any(|(a, b)| a.to_bits() != b.to_bits()) {
        failures.push("wav round trip");
    }
    let (manifest, blob) = encode(&model, "m.bin").unwrap();
    if !matches!(decode(&manifest, &blob[..blob.len() - 1]), Err(ModelIoError::CorruptBlob(_))) {
        failures.push("truncated blob");
    }
    let unknown = r#"{"format_version":1,"weights_file":"m.bin","nodes":[{"id":0,"kind":"gru"}],"edges":[]}"#;
    if !matches!(parse_manifest(unknown), Err(ModelIoError::SchemaError { message, .. }) if message.contains("gru")) {
        failures.push("unknown node kind");
    }
    if !matches!(parse_manifest(r#"{"format_version":2}"#), Err(ModelIoError::VersionMismatch { .. })) {
        failures.push("version");
    }
    let mut stereo = encode_wav(&x, 48_000).unwrap();
    stereo[22] = 2;
    if !matches!(decode_wav(&stereo), Err(WavError::UnsupportedFormat(_))) {
        failures.push("stereo wav");
    }
    if !matches!(decode_wav(b"RIFF\0\0\0\0WAVX"), Err(WavError::MalformedHeader(_))) {
        failures.push("bad wav header");
    }
    Outcome::new(
        failures.is_empty(),
        if failures.is_empty() {
            "model and WAV bit-exact; CorruptBlob, SchemaError, VersionMismatch, UnsupportedFormat, MalformedHeader raised".to_string()
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() -> ExitCode {
    let graphs = population();
    let criteria: Vec<Criterion> = vec![
        ("exact streaming", Box::new(|| exact_streaming(&graphs))),
        ("causal equivalence after shift", Box::new(|| shift_equivalence(&graphs))),
        ("stride delay invariant", Box::new(stride_delay_sweep)),
        ("branch alignment", Box::new(|| branch_alignment_check(&graphs))),
        ("overlap-add imperfection", Box::new(ola_imperfection)),
        ("redundancy cost", Box::new(redundancy)),
        ("memory constancy", Box::new(memory_constancy)),
        ("causal latency gap", Box::new(latency_gap)),
        ("COLA windows", Box::new(cola)),
        ("I/O round trips", Box::new(io_round_trips)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = run();
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {status}  {name}: {}", i + 1, outcome.detail);
        failed += usize::from(!outcome.pass);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
