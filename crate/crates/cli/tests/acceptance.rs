//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Criterion 8 needs external data and a pretrained model. Set
//! `PORESEG_SAMPLE5_DIR` (PNG layers), `PORESEG_SAMPLE5_GT` (reference masks
//! named like the layers) and `PORESEG_MODEL_DIR` (`encoder.onnx` and
//! `decoder.onnx`) to run it; otherwise it is reported as SKIP.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use poreseg::backend::{make_oracle, select_index, select_mask, segment_with_prompts, OracleProvider, SegmentationTriplet};
use poreseg::cluster::{
    build_centroid_records, dtw, kmeans_images, kmedoids_images, DtwSettings, Distance,
    ImageVector, KMeansParams, KMedoidsParams,
};
use poreseg::eval::{dsc, run_bootstrap_eval, BootstrapItem, BootstrapParams};
use poreseg::image::to_model_input;
use poreseg::prompt::PromptSet;
use poreseg::synth::{generate, Noise, PoreCount, SyntheticSpec};
use poreseg::threshold::{make_reference_mask, ThresholdParams};
use poreseg::BinaryMask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_poreseg"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(cmd: &mut Command) -> Result<i32, String> {
    let out = cmd.output().map_err(|e| e.to_string())?;
    match out.status.code() {
        Some(c) if c == 0 || c == 2 => Ok(c),
        c => Err(format!(
            "{cmd:?} exited {c:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        )),
    }
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---- criterion 1 --------------------------------------------------------

fn desk_scale_pipeline() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let seg = dir.path().join("seg");
    run(bin().args(["synth", "--layers", "20", "--side", "256", "--pores", "10", "--sigma", "2", "--seed", "1"])
        .arg("--output")
        .arg(&data))?;
    let start = Instant::now();
    let code = run(bin()
        .args(["segment", "--jobs", "1", "--oracle-scores", "0.7,0.85,0.95"])
        .arg("--input")
        .arg(data.join("images"))
        .arg("--output")
        .arg(&seg))?;
    let elapsed = start.elapsed();
    let m = read_json(&seg.join("manifest.json"))?;
    let agg = &m["aggregate"];
    check(code == 0, format!("exit code {code}"))?;
    check(agg["images"] == 20, format!("processed {}", agg["images"]))?;
    check(agg["mean_dsc"] == 1.0, format!("aggregate DSC {}", agg["mean_dsc"]))?;
    check(elapsed < Duration::from_secs(60), format!("runtime {elapsed:?}"))?;
    Ok(format!(
        "20 layers, aggregate DSC {:.3}, {:.1}s single-threaded",
        agg["mean_dsc"].as_f64().unwrap_or(f64::NAN),
        elapsed.as_secs_f64()
    ))
}

// ---- criterion 2 --------------------------------------------------------

fn thresholding_oracle() -> Outcome {
    let params = ThresholdParams {
        filter_k: 3,
        background_floor: 50,
        roi: None,
    };
    let mut worst_noisy = f64::INFINITY;
    for seed in 0..10 {
        let spec = SyntheticSpec {
            pores: PoreCount::Fixed(10),
            seed,
            ..SyntheticSpec::default()
        };
        let clean = generate(&spec).map_err(|e| e.to_string())?;
        let r = make_reference_mask(&clean.image, &params).map_err(|e| e.to_string())?;
        let d = dsc(&r.mask, &clean.gt).map_err(|e| e.to_string())?;
        check(d == 1.0, format!("seed {seed}: noise-free DSC {d}"))?;

        let noisy = generate(&SyntheticSpec {
            noise: Noise {
                gaussian_sigma: 0.0,
                salt_pepper: 0.01,
            },
            ..spec
        })
        .map_err(|e| e.to_string())?;
        let r = make_reference_mask(&noisy.image, &params).map_err(|e| e.to_string())?;
        let d = dsc(&r.mask, &noisy.gt).map_err(|e| e.to_string())?;
        worst_noisy = worst_noisy.min(d);
    }
    check(worst_noisy >= 0.99, format!("1% salt-and-pepper DSC {worst_noisy}"))?;
    Ok(format!("noise-free DSC 1.0 on 10 images; worst 1% salt-and-pepper DSC {worst_noisy:.4}"))
}

// ---- criterion 3 --------------------------------------------------------

/// Every labelling of `n` points with exactly `k` used labels.
fn labellings(n: usize, k: usize) -> Vec<Vec<usize>> {
    let total = k.pow(n as u32);
    (0..total)
        .map(|mut code| {
            (0..n)
                .map(|_| {
                    let l = code % k;
                    code /= k;
                    l
                })
                .collect::<Vec<_>>()
        })
        .filter(|l| (0..k).all(|c| l.contains(&c)))
        .collect()
}

/// Within-cluster sum of squares times 840 (divisible by every cluster size
/// up to 8), computed exactly in integers.
fn sse_times_840(data: &[Vec<i64>], labels: &[usize], k: usize) -> i128 {
    let dim = data[0].len();
    let mut total: i128 = 0;
    for c in 0..k {
        let members: Vec<&Vec<i64>> = data.iter().zip(labels).filter(|(_, &l)| l == c).map(|(x, _)| x).collect();
        let n = members.len() as i128;
        for d in 0..dim {
            let s: i128 = members.iter().map(|x| x[d] as i128).sum();
            let s2: i128 = members.iter().map(|x| (x[d] as i128).pow(2)).sum();
            total += 840 * s2 - (840 / n) * s * s;
        }
    }
    total
}

fn dtw_memo(a: &[f64], b: &[f64]) -> f64 {
    // plain recursion with a memo table, squared costs
    fn go(a: &[f64], b: &[f64], i: usize, j: usize, memo: &mut Vec<Vec<Option<f64>>>) -> f64 {
        if let Some(v) = memo[i][j] {
            return v;
        }
        let c = (a[i] - b[j]).powi(2);
        let v = if i == 0 && j == 0 {
            c
        } else {
            let mut best = f64::INFINITY;
            if i > 0 {
                best = best.min(go(a, b, i - 1, j, memo));
            }
            if j > 0 {
                best = best.min(go(a, b, i, j - 1, memo));
            }
            if i > 0 && j > 0 {
                best = best.min(go(a, b, i - 1, j - 1, memo));
            }
            c + best
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len()]; a.len()];
    go(a, b, a.len() - 1, b.len() - 1, &mut memo).sqrt()
}

fn medoid_cost(dist: &dyn Fn(usize, usize) -> f64, n: usize, medoids: &[usize]) -> f64 {
    (0..n)
        .map(|i| medoids.iter().map(|&m| dist(i, m)).fold(f64::INFINITY, f64::min))
        .sum()
}

fn medoid_sets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    fn rec(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for m in start..n {
            cur.push(m);
            rec(n, k, m + 1, cur, out);
            cur.pop();
        }
    }
    rec(n, k, 0, &mut Vec::new(), &mut out);
    out
}

fn clustering_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases = 0;
    for trial in 0..40 {
        let n = rng.random_range(4..=8);
        let (w, h) = [(4, 4), (2, 8), (3, 5), (4, 2), (1, 16)][trial % 5];
        for k in [2usize, 3] {
            if n < k {
                continue;
            }
            // a mix of clustered and uniform data
            let spread = if trial % 2 == 0 { 256 } else { 40 };
            let data: Vec<Vec<i64>> = (0..n)
                .map(|i| {
                    let base = (i % k) as i64 * 60;
                    (0..w * h).map(|_| (base + rng.random_range(0..spread)).min(255)).collect()
                })
                .collect();
            let images: Vec<ImageVector> = data
                .iter()
                .enumerate()
                .map(|(i, v)| ImageVector {
                    source_id: format!("img{i}"),
                    width: w,
                    height: h,
                    values: v.iter().map(|&x| x as f64).collect(),
                })
                .collect();

            let model = kmeans_images(&images, &KMeansParams { k, seed: trial as u64, ..Default::default() })
                .map_err(|e| e.to_string())?;
            let best = labellings(n, k)
                .iter()
                .map(|l| sse_times_840(&data, l, k))
                .min()
                .unwrap();
            let got = sse_times_840(&data, &model.assignments, k);
            check(
                got == best,
                format!("trial {trial} k={k}: kmeans SSE*840 {got} vs brute force {best}"),
            )?;
            check(
                (model.objective - best as f64 / 840.0).abs() <= 1e-9 * (best as f64 / 840.0).max(1.0),
                format!("trial {trial}: reported objective {} vs {}", model.objective, best as f64 / 840.0),
            )?;

            for distance in [Distance::Euclidean, Distance::Dtw] {
                let params = KMedoidsParams {
                    k,
                    distance,
                    dtw: DtwSettings::unconstrained(),
                    seed: trial as u64,
                    ..Default::default()
                };
                let model = kmedoids_images(&images, &params).map_err(|e| e.to_string())?;
                let vals: Vec<&[f64]> = images.iter().map(|v| v.values.as_slice()).collect();
                let dist = |i: usize, j: usize| match distance {
                    Distance::Euclidean => vals[i]
                        .iter()
                        .zip(vals[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt(),
                    Distance::Dtw => dtw_memo(vals[i], vals[j]),
                };
                let best = medoid_sets(n, k)
                    .iter()
                    .map(|s| medoid_cost(&dist, n, s))
                    .fold(f64::INFINITY, f64::min);
                let chosen = model.medoids.clone().ok_or("kmedoids returned no medoids")?;
                let got = medoid_cost(&dist, n, &chosen);
                check(
                    got == best,
                    format!("trial {trial} k={k} {distance}: medoid cost {got} vs brute force {best}"),
                )?;
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} datasets (n 4..8, 16 px, K 2 and 3): kmeans and kmedoids (euclidean, dtw) match brute force"))
}

// ---- criterion 4 --------------------------------------------------------

fn all_sequences(max_len: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for len in 1..=max_len {
        for mut code in 0..3usize.pow(len as u32) {
            out.push(
                (0..len)
                    .map(|_| {
                        let v = (code % 3) as f64;
                        code /= 3;
                        v
                    })
                    .collect(),
            );
        }
    }
    out
}

/// Minimum squared cost over every monotone warping path, by explicit
/// enumeration of the paths.
fn enumerate_paths(a: &[f64], b: &[f64]) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + (a[i] - b[j]).powi(2);
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best.sqrt()
}

fn dtw_oracle() -> Outcome {
    let seqs = all_sequences(5);
    let mut pairs = 0usize;
    let mut worst = 0.0f64;
    for (i, a) in seqs.iter().enumerate() {
        for b in &seqs[i..] {
            let want = enumerate_paths(a, b);
            for (x, y) in [(a, b), (b, a)] {
                let got = dtw(x, y, None).map_err(|e| e.to_string())?;
                worst = worst.max((got - want).abs());
                check(
                    (got - want).abs() <= 1e-9,
                    format!("dtw({x:?}, {y:?}) = {got}, enumeration {want}"),
                )?;
            }
            pairs += 1;
        }
    }
    Ok(format!("{pairs} unordered pairs of {} sequences, max error {worst:e}", seqs.len()))
}

// ---- criterion 5 --------------------------------------------------------

fn selection_truth_table() -> Outcome {
    let thresh = 0.90;
    let cases = [([0.5, 0.70, 0.95], 1usize), ([0.5, 0.95, 0.97], 0), ([0.5, 0.90, 0.97], 1)];
    // square pore plus an unrelated one; the prompt hits only the first
    let mut gt = BinaryMask::empty(16, 16);
    for (x0, y0) in [(2usize, 2usize), (10, 10)] {
        for y in y0..y0 + 3 {
            for x in x0..x0 + 3 {
                gt.set(x, y, true);
            }
        }
    }
    let input = to_model_input(&poreseg::GrayImage::filled(16, 16, 0).map_err(|e| e.to_string())?);
    let prompts = PromptSet::new(vec![[3, 3]], 0, 0);
    let mut lines = Vec::new();
    for (scores, want) in cases {
        let m = BinaryMask::empty(2, 2);
        let t = SegmentationTriplet::new([m.clone(), m.clone(), m], scores).map_err(|e| e.to_string())?;
        check(select_index(scores, thresh) == want, format!("{scores:?}: select_index"))?;
        check(select_mask(t, thresh).1 == want, format!("{scores:?}: select_mask"))?;
        let mut oracle = make_oracle(gt.clone(), scores).map_err(|e| e.to_string())?;
        let out = segment_with_prompts(&input, &prompts, &mut oracle, thresh).map_err(|e| e.to_string())?;
        check(out.chosen_index == want, format!("{scores:?}: pipeline chose {}", out.chosen_index))?;
        let expected_pixels = if want == 0 { 9 } else { 18 };
        check(out.mask.count() == expected_pixels, format!("{scores:?}: mask has {} px", out.mask.count()))?;
        lines.push(format!("s1={} -> {}", scores[1], want));
    }
    Ok(lines.join(", "))
}

// ---- criterion 6 --------------------------------------------------------

fn mean_ci_length(scores: [f64; 3], prompt_size: usize, seed: u64) -> Result<f64, String> {
    let spec = SyntheticSpec {
        side: 256,
        pores: PoreCount::Fixed(20),
        radius_range: (2, 8),
        seed,
        ..SyntheticSpec::default()
    };
    let layer = generate(&spec).map_err(|e| e.to_string())?;
    let params = ThresholdParams {
        filter_k: 3,
        background_floor: 50,
        roi: None,
    };
    let model = kmeans_images(
        &[ImageVector::from_image("disc", &layer.image)],
        &KMeansParams { k: 1, ..Default::default() },
    )
    .map_err(|e| e.to_string())?;
    let records = build_centroid_records(&model, &params);
    let items = vec![BootstrapItem {
        id: "disc".into(),
        image: layer.image,
        reference: Some(layer.gt),
        record: 0,
    }];
    let report = run_bootstrap_eval(
        &items,
        &records,
        &mut OracleProvider::new(scores),
        &BootstrapParams {
            prompt_size,
            iterations: 100,
            seed,
            thresh: 0.90,
            filter_k: 3,
            alpha: 0.05,
        },
    )
    .map_err(|e| e.to_string())?;
    Ok(report.aggregate.ci_length_mean)
}

fn bootstrap_degeneracy_and_sensitivity() -> Outcome {
    // prompt-insensitive: the part mask is always selected
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let out = dir.path().join("bs");
    run(bin().args(["synth", "--layers", "6", "--side", "128", "--pores", "8", "--radius-min", "2", "--radius-max", "5", "--seed", "3"])
        .arg("--output")
        .arg(&data))?;
    run(bin()
        .args(["bootstrap", "--k", "2", "--prompt-size", "50", "--bootstrap-iters", "100", "--floor", "50"])
        .args(["--oracle-scores", "0.7,0.85,0.95"])
        .arg("--input")
        .arg(data.join("images"))
        .arg("--gt-dir")
        .arg(data.join("gt"))
        .arg("--output")
        .arg(&out))?;
    let rows = poreseg_cli::report::read_bootstrap_csv(&out.join("bootstrap.csv")).map_err(|e| e.to_string())?;
    check(rows.len() == 6, format!("{} rows", rows.len()))?;
    check(
        rows.iter().all(|r| r.length == 0.0),
        format!("CI lengths {:?}", rows.iter().map(|r| r.length).collect::<Vec<_>>()),
    )?;

    // component-only: more prompts, tighter intervals
    let mut means = Vec::new();
    for m in [10usize, 100, 1000] {
        let mut total = 0.0;
        for seed in 0..5 {
            total += mean_ci_length([0.7, 0.95, 0.97], m, seed)?;
        }
        means.push(total / 5.0);
    }
    check(
        means[0] > means[1] && means[1] > means[2],
        format!("mean CI lengths for m = 10, 100, 1000: {means:?}"),
    )?;
    Ok(format!(
        "insensitive oracle CI lengths all 0; component-only mean CI length {:.4} > {:.4} > {:.4}",
        means[0], means[1], means[2]
    ))
}

// ---- criterion 7 --------------------------------------------------------

fn bootstrap_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    run(bin().args(["synth", "--layers", "8", "--side", "128", "--pores", "6", "--sigma", "2", "--seed", "9"])
        .arg("--output")
        .arg(&data))?;
    let mut csvs = Vec::new();
    for (run_no, jobs) in [(0, "1"), (1, "1"), (2, "3")] {
        let out = dir.path().join(format!("run{run_no}"));
        run(bin()
            .args(["bootstrap", "--k", "2", "--prompt-size", "200", "--bootstrap-iters", "30", "--seed", "11"])
            .args(["--oracle-scores", "0.7,0.95,0.97", "--floor", "50", "--jobs", jobs])
            .arg("--input")
            .arg(data.join("images"))
            .arg("--output")
            .arg(&out))?;
        csvs.push(std::fs::read(out.join("bootstrap.csv")).map_err(|e| e.to_string())?);
    }
    check(csvs[0] == csvs[1], "two identical runs differ")?;
    check(csvs[0] == csvs[2], "a 3-worker run differs from the serial run")?;
    Ok(format!("bootstrap.csv byte-identical across repeated runs and 1 vs 3 workers ({} bytes)", csvs[0].len()))
}

// ---- criterion 8 --------------------------------------------------------

fn external_dataset() -> Option<Outcome> {
    let images = std::env::var_os("PORESEG_SAMPLE5_DIR")?;
    let gt = std::env::var_os("PORESEG_SAMPLE5_GT")?;
    let model = std::env::var_os("PORESEG_MODEL_DIR")?;
    Some((|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let seg = dir.path().join("seg");
        let bs = dir.path().join("bs");
        let common = |c: &mut Command| {
            c.args(["--backend", "model", "--k", "3", "--prompt-size", "10000"])
                .arg("--model")
                .arg(&model)
                .arg("--input")
                .arg(&images)
                .arg("--gt-dir")
                .arg(&gt);
        };
        let mut c = bin();
        c.arg("segment").arg("--output").arg(&seg);
        common(&mut c);
        run(&mut c)?;
        let m = read_json(&seg.join("manifest.json"))?;
        let mean = m["aggregate"]["mean_dsc"].as_f64().ok_or("no DSC")?;
        let secs = m["aggregate"]["mean_seconds"].as_f64().unwrap_or(f64::NAN);
        let mut c = bin();
        c.arg("bootstrap").arg("--output").arg(&bs);
        common(&mut c);
        run(&mut c)?;
        let b = read_json(&bs.join("bootstrap.json"))?;
        let ci = b["aggregate"]["ci_length_mean"].as_f64().ok_or("no CI length")?;
        check((mean - 0.88).abs() <= 0.08, format!("Sample 5 mean DSC {mean:.4}"))?;
        check(ci < 0.01, format!("Sample 5 mean CI length {ci:.4}"))?;
        Ok(format!(
            "Sample 5 DSC {mean:.4}, mean CI length {ci:.5}, {secs:.2}s per image (reference figure 3.8 to 4.4s)"
        ))
    })())
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("desk-scale oracle pipeline", desk_scale_pipeline),
        ("thresholding oracle", thresholding_oracle),
        ("clustering optimality", clustering_optimality),
        ("DTW oracle", dtw_oracle),
        ("mask-selection truth table", selection_truth_table),
        ("bootstrap degeneracy and sensitivity", bootstrap_degeneracy_and_sensitivity),
        ("bootstrap determinism", bootstrap_determinism),
    ];
    let mut failed = 0;
    let mut stdout = std::io::stdout();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let line = match f() {
            Ok(detail) => format!("PASS criterion {} ({name}): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                format!("FAIL criterion {} ({name}): {why}", i + 1)
            }
        };
        writeln!(stdout, "{line} [{:.1}s]", start.elapsed().as_secs_f64()).unwrap();
    }
    let line = match external_dataset() {
        None => "SKIP criterion 8 (external dataset): set PORESEG_SAMPLE5_DIR, PORESEG_SAMPLE5_GT and PORESEG_MODEL_DIR".to_string(),
        Some(Ok(detail)) => format!("PASS criterion 8 (external dataset): {detail}"),
        Some(Err(why)) => {
            failed += 1;
            format!("FAIL criterion 8 (external dataset): {why}")
        }
    };
    writeln!(stdout, "{line}").unwrap();
    if failed > 0 {
        writeln!(stdout, "{failed} acceptance criteria failed").unwrap();
        std::process::exit(1);
    }
}
