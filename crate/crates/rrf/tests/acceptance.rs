//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on
//! any failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rrf::format::{encode_embeddings, read_embeddings};
use rrf_core::metric::local_similarities;
use rrf_core::protocol::cross_validate_scores;
use rrf_core::toyembed::{embed, generate_benchmark, BenchmarkConfig, NoiseProfile, ToyEmbedder};
use rrf_core::{
    best_threshold, cross_validate, fit_fusion, rrfnet_similarity_decomposed, shape_plan, Backbone,
    EmbeddingSet, PairEntry, PairList, PatchLayout, Position,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn timed(limit: Duration, f: impl FnOnce() -> Check) -> Check {
    let start = Instant::now();
    let detail = f()?;
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))?;
    Ok(format!("{detail}; {:.2}s", took.as_secs_f64()))
}

fn layout_fidelity() -> Check {
    let count = |w, s, excl| PatchLayout::grid(112, 112, w, w, s, excl).map(|l| l.len());
    let counts = [count(28, 14, false), count(28, 14, true), count(56, 28, false), count(56, 28, true)];
    let counts: Vec<usize> = counts.into_iter().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    ensure(counts == [49, 33, 9, 5], || format!("counts {counts:?}"))?;

    let five = PatchLayout::grid(112, 112, 56, 56, 28, true).unwrap();
    let got: Vec<(u32, u32)> = five.positions().iter().map(|p| (p.x, p.y)).collect();
    let listed = [(28, 0), (0, 28), (28, 28), (56, 28), (28, 56)];
    ensure(got == listed, || format!("5-patch positions {got:?}"))?;

    let classes = |w, s| {
        PatchLayout::grid(112, 112, w, w, s, false)
            .and_then(|l| l.mirror_map())
            .map(|m| m.class_count())
            .unwrap()
    };
    let (c49, c9) = (classes(28, 14), classes(56, 28));
    ensure((c49, c9) == (28, 6), || format!("mirror classes {c49}, {c9}"))?;
    Ok(format!("counts {counts:?}, mirror classes {c49}/{c9}"))
}

fn random_set(rng: &mut ChaCha8Rng, k: usize, d: usize, shared: &[f64], mix: f64) -> EmbeddingSet {
    let values = (0..k * d)
        .map(|i| {
            let z: f64 = StandardNormal.sample(rng);
            mix * shared[i % d] + z
        })
        .collect();
    EmbeddingSet::new("x", k, d, values, 0).unwrap()
}

fn naive_mean(set: &EmbeddingSet) -> Vec<f64> {
    let mut m = vec![0.0; set.dim()];
    for row in set.iter_rows() {
        for (acc, v) in m.iter_mut().zip(row) {
            *acc += v;
        }
    }
    m.iter().map(|v| v / set.rows() as f64).collect()
}

fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

// Neumaier summation, kept local to stay independent of the library.
fn accurate_sum(values: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for &v in values {
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    s + c
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn decomposition_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut pairs = 0;
    let (mut worst_mean, mut worst_sum) = (0.0f64, 0.0f64);
    for k in [1, 5, 33] {
        for d in [8, 512] {
            for n in 0..170 {
                let shared: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let mix = [0.0, 0.5, 3.0][n % 3];
                let a = random_set(&mut rng, k, d, &shared, mix);
                let b = random_set(&mut rng, k, d, &shared, mix);
                let direct = naive_cosine(&naive_mean(&a), &naive_mean(&b));
                let bd = rrfnet_similarity_decomposed(&a, &b).map_err(|e| e.to_string())?;
                let contributions = bd.contributions().ok_or("no contribution matrix")?;
                ensure(contributions.len() == k * k, || "matrix shape".into())?;
                worst_mean = worst_mean.max(rel(bd.global_score(), direct));
                worst_sum = worst_sum.max(rel(accurate_sum(contributions), bd.global_score()));
                pairs += 1;
            }
        }
    }
    ensure(worst_mean < 1e-9, || format!("decomposed vs direct rel err {worst_mean:e}"))?;
    ensure(worst_sum < 1e-9, || format!("contribution sum rel err {worst_sum:e}"))?;
    Ok(format!("{pairs} pairs, max rel err {worst_mean:.1e} / {worst_sum:.1e}"))
}

fn shape_plan_table() -> Check {
    let rrf = shape_plan(Backbone::Rrfnet, 1, (112, 112), 3, (28, 28), 33).map_err(|e| e.to_string())?;
    let last = rrf.blocks[3];
    let got = (last.count, last.width, last.height, last.channels, rrf.feature, rrf.mean);
    ensure(got == (33, 4, 4, 512, (33, 512), Some((1, 512))), || format!("rrfnet {got:?}"))?;
    let res = shape_plan(Backbone::Resnet, 1, (112, 112), 3, (28, 28), 33).map_err(|e| e.to_string())?;
    let last = res.blocks[3];
    let got = (last.count, last.width, last.height, last.channels, res.feature);
    ensure(got == (1, 7, 7, 512, (1, 512)), || format!("resnet {got:?}"))?;
    Ok("(33,4,4,512)->(33,512)->(1,512); (1,7,7,512)->(1,512)".into())
}

fn single_patch_reduction() -> Check {
    let whole = PatchLayout::grid(112, 112, 112, 112, 56, false).map_err(|e| e.to_string())?;
    ensure(whole.len() == 1, || format!("{} patches", whole.len()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for n in 0..500 {
        let d = [8, 64, 512][n % 3];
        let shared: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let a = random_set(&mut rng, 1, d, &shared, 1.0);
        let b = random_set(&mut rng, 1, d, &shared, 1.0);
        let s = rrfnet_similarity_decomposed(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max((s.global_score() - naive_cosine(a.row(0), b.row(0))).abs());
    }
    ensure(worst < 1e-12, || format!("max abs err {worst:e}"))?;
    Ok(format!("500 pairs, max abs err {worst:.1e}"))
}

// Exhaustive midpoint sweep; the first (smallest) best threshold wins.
fn sweep(scores: &[f64], labels: &[bool]) -> (f64, f64) {
    let mut uniq = scores.to_vec();
    uniq.sort_by(f64::total_cmp);
    uniq.dedup();
    let mut cands = vec![f64::NEG_INFINITY];
    cands.extend(uniq.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    cands.push(f64::INFINITY);
    let mut best = (f64::NAN, 0);
    for t in cands {
        let hits = scores.iter().zip(labels).filter(|(s, l)| (**s > t) == **l).count();
        if hits > best.1 {
            best = (t, hits);
        }
    }
    (best.0, best.1 as f64 / scores.len() as f64)
}

fn pair_list(labels: &[bool], folds: u32) -> PairList {
    PairList::new(
        labels
            .iter()
            .enumerate()
            .map(|(i, &genuine)| PairEntry {
                id_a: format!("a{i}"),
                id_b: format!("b{i}"),
                genuine,
                fold: (i as u32 / 2) % folds,
            })
            .collect(),
    )
    .unwrap()
}

fn threshold_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for inst in 0..500 {
        let n = rng.random_range(2..=50);
        let levels = rng.random_range(2..=60);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / 7.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        // Selection needs both classes present.
        labels[0] = true;
        labels[1] = false;
        let (t, acc) = best_threshold(&scores, &labels).map_err(|e| e.to_string())?;
        let (expected_t, expected) = sweep(&scores, &labels);
        ensure(acc == expected && t == expected_t, || {
            format!("instance {inst}: got {acc} at {t}, sweep {expected} at {expected_t}")
        })?;
    }

    let labels: Vec<bool> = (0..600).map(|i| i % 2 == 0).collect();
    let pairs = pair_list(&labels, 10);
    let separable = cross_validate(&pairs, |p| Ok(if p.genuine { 0.9 } else { 0.1 }))
        .map_err(|e| e.to_string())?;
    ensure(separable.mean_accuracy == 1.0, || format!("separable {}", separable.mean_accuracy))?;

    let labels: Vec<bool> = (0..6000).map(|i| i % 2 == 0).collect();
    let pairs = pair_list(&labels, 10);
    let mut coin = ChaCha8Rng::seed_from_u64(77);
    let chance = cross_validate(&pairs, |_| Ok(coin.random::<f64>())).map_err(|e| e.to_string())?;
    ensure((chance.mean_accuracy - 0.5).abs() <= 0.05, || format!("coin flip {}", chance.mean_accuracy))?;
    Ok(format!(
        "500 instances match sweep; separable {}, coin flip {:.4}",
        separable.mean_accuracy, chance.mean_accuracy
    ))
}

struct FusionOutcome {
    fused: f64,
    uniform: f64,
    best_single: (usize, f64),
    weights: Vec<f64>,
}

fn fusion_run() -> Result<FusionOutcome, String> {
    let layout = PatchLayout::grid(112, 112, 28, 28, 14, true).map_err(|e| e.to_string())?;
    let config = BenchmarkConfig {
        identities: 30,
        train_identities: 30,
        images_per_identity: 4,
        sigma_w: 3.0,
        noise: NoiseProfile::Heterogeneous { spread: 4.0, region: 28 },
        seed: 3,
        ..BenchmarkConfig::default()
    };
    let bench = generate_benchmark(&config, &layout).map_err(|e| e.to_string())?;
    let embedder = ToyEmbedder::for_layout(3, 64, &layout, config.channels).map_err(|e| e.to_string())?;
    let sets: BTreeMap<&String, EmbeddingSet> = bench
        .images
        .iter()
        .map(|(id, img)| Ok((id, embed(&embedder, id, img, &layout, false)?)))
        .collect::<rrf_core::Result<_>>()
        .map_err(|e| e.to_string())?;
    let features = |pairs: &PairList| -> Result<Vec<Vec<f64>>, String> {
        pairs
            .entries()
            .iter()
            .map(|p| local_similarities(&sets[&p.id_a], &sets[&p.id_b]).map_err(|e| e.to_string()))
            .collect()
    };
    let train = features(&bench.train_pairs)?;
    let eval = features(&bench.pairs)?;
    let k = layout.len();
    let model = fit_fusion(&train.concat(), k, &bench.train_pairs.labels(), rrf_core::fusion::DEFAULT_REG, 3)
        .map_err(|e| e.to_string())?;
    let accuracy = |scores: Vec<f64>| -> Result<f64, String> {
        Ok(cross_validate_scores(&bench.pairs, &scores).map_err(|e| e.to_string())?.mean_accuracy)
    };
    let fused = accuracy(
        eval.iter()
            .map(|l| l.iter().zip(&model.weights).map(|(x, w)| x * w).sum::<f64>() + model.bias)
            .collect(),
    )?;
    let uniform = accuracy(eval.iter().map(|l| l.iter().sum::<f64>() / k as f64).collect())?;
    let mut best_single = (0, 0.0);
    for i in 0..k {
        let acc = accuracy(eval.iter().map(|l| l[i]).collect())?;
        if acc > best_single.1 {
            best_single = (i, acc);
        }
    }
    Ok(FusionOutcome {
        fused,
        uniform,
        best_single,
        weights: model.weights,
    })
}

fn fusion_sanity() -> Check {
    let first = fusion_run()?;
    let second = fusion_run()?;
    ensure(
        first.weights == second.weights && first.fused == second.fused,
        || "fit is not deterministic".into(),
    )?;
    let FusionOutcome { fused, uniform, best_single, .. } = first;
    ensure(fused >= best_single.1 - 0.005, || {
        format!("fused {fused:.4} < best single {:.4}", best_single.1)
    })?;
    ensure(fused >= uniform - 0.005, || format!("fused {fused:.4} < uniform {uniform:.4}"))?;
    ensure(best_single.1 < 0.99 && uniform < 0.99, || "benchmark too easy".into())?;
    Ok(format!(
        "fused {fused:.4}, uniform mean {uniform:.4}, best single patch {:.4} (#{})",
        best_single.1, best_single.0
    ))
}

fn rrf_bin(root: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rrf"))
        .arg("--root")
        .arg(root)
        .args(args)
        .env_remove("RRF_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn pipeline(root: &Path, jobs: &str) -> Result<(), String> {
    let m = "bench/embeddings/base/manifest.json";
    let steps: [&[&str]; 5] = [
        &["--jobs", jobs, "generate", "--out", "bench", "--exclude-corners", "--dim", "32", "--noise", "heterogeneous",
          "--sigma-w", "2", "--identities", "8", "--train-identities", "8", "--max-shift", "2", "--mask-ratio", "0.2",
          "--flip", "--seed", "19"],
        &["--jobs", jobs, "embed", "--bench", "bench", "--name", "w56", "--w", "56", "--exclude-corners", "--dim", "32", "--seed", "19"],
        &["--jobs", jobs, "fit", "--manifest", m, "--pairs", "bench/train_pairs.csv", "--out", "out/model.json", "--seed", "19"],
        &["--jobs", jobs, "verify", "--manifest", m, "--pairs", "bench/pairs.csv", "--mode", "region_based",
          "--model", "out/model.json", "--out", "out/report.json", "--auc"],
        &["--jobs", jobs, "sim", "--manifest", m, "--a", "eval0000_00", "--b", "eval0000_01", "--mode", "region_based",
          "--model", "out/model.json", "--heatmaps", "out/maps/pair", "--out", "out/sim.json"],
    ];
    for step in steps {
        rrf_bin(root, step)?;
    }
    rrf_bin(root, &["--jobs", jobs, "sim", "--manifest", m, "--a", "eval0000_00", "--b", "eval0001_00",
                    "--heatmaps", "out/maps/rrf", "--out", "out/sim_rrfnet.json"])?;
    rrf_bin(root, &["--jobs", jobs, "combine", "--source", &format!("w28={m}"),
                    "--source", "w56=bench/embeddings/w56/manifest.json", "--pairs", "bench/pairs.csv",
                    "--calibration", "bench/train_pairs.csv", "--method", "learned_logistic", "--out", "out/combined.json"])
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn end_to_end_determinism() -> Check {
    let one = tempfile::tempdir().map_err(|e| e.to_string())?;
    let two = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline(one.path(), "1")?;
    pipeline(two.path(), "4")?;
    let (a, b) = (tree(one.path()), tree(two.path()));
    ensure(a.len() == b.len(), || format!("{} vs {} files", a.len(), b.len()))?;
    for ((pa, da), (pb, db)) in a.iter().zip(&b) {
        ensure(pa == pb && da == db, || format!("{} differs", pa.display()))?;
    }
    let bytes: usize = a.iter().map(|(_, d)| d.len()).sum();
    Ok(format!("{} files, {bytes} bytes identical across runs", a.len()))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn format_golden() -> Check {
    let whole = PatchLayout::grid(56, 56, 56, 56, 28, false).map_err(|e| e.to_string())?;
    let five = PatchLayout::grid(112, 112, 56, 56, 28, true).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for (name, layout) in [("unit_k1_d2.rrfe", &whole), ("layout5_d3.rrfe", &five)] {
        let bytes = fs::read(fixture(name)).map_err(|e| e.to_string())?;
        let set = read_embeddings(&fixture(name), layout).map_err(|e| e.to_string())?;
        ensure(encode_embeddings(&set) == bytes, || format!("{name} does not round-trip"))?;
        checked += 1;
    }
    let unit = fs::read(fixture("unit_k1_d2.rrfe")).map_err(|e| e.to_string())?;
    ensure(unit[24..] == [0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x80, 0xBF], || "unit payload bytes".into())?;

    let full = PatchLayout::grid(112, 112, 56, 56, 28, false).map_err(|e| e.to_string())?;
    let err = read_embeddings(&fixture("layout5_d3.rrfe"), &full);
    ensure(matches!(err, Err(rrf::Error::LayoutMismatch { .. })), || format!("mismatch accepted: {err:?}"))?;

    let same_rows = PatchLayout::from_positions(
        112,
        112,
        56,
        56,
        28,
        false,
        five.positions().iter().map(|p| Position::new(p.x, p.y)).collect(),
    )
    .map_err(|e| e.to_string())?;
    let err = read_embeddings(&fixture("layout5_d3.rrfe"), &same_rows);
    ensure(matches!(err, Err(rrf::Error::LayoutMismatch { .. })), || "same-size mismatch accepted".into())?;
    Ok(format!("{checked} fixtures round-trip bitwise; mismatched fingerprints rejected"))
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Check); 8] = [
        ("layout fidelity", Duration::from_secs(1), layout_fidelity),
        ("decomposition identity", Duration::from_secs(30), decomposition_identity),
        ("shape plan", Duration::from_secs(1), shape_plan_table),
        ("single-patch reduction", Duration::from_secs(30), single_patch_reduction),
        ("threshold oracle", Duration::from_secs(60), threshold_oracle),
        ("fusion sanity", Duration::from_secs(120), fusion_sanity),
        ("end-to-end determinism", Duration::from_secs(300), end_to_end_determinism),
        ("format golden", Duration::from_secs(10), format_golden),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        match timed(limit, check) {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
