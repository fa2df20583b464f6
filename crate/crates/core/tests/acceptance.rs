//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;

use common::*;
use mergeforge_core::checkpoint::{read_checkpoint, write_checkpoint};
use mergeforge_core::datamix::{build_mixture, mix_datasets, subsample, RecordDataset};
use mergeforge_core::diagnostics::{correlation_profile, recommend_strategy, Verdict, Weighting};
use mergeforge_core::merge::{dare_sparsify, merge, MergeRecipe, Method};
use mergeforge_core::sweep::{
    format_pct, format_report, percent_change, ratio_grid, run_sweep, ReportFormat, Scores,
    SweepPlan,
};
use mergeforge_core::taskvector::{compute_delta, layer_l2};
use mergeforge_core::textmetrics::{bleu4, chrf_pp, rouge_l};
use mergeforge_core::{LayerGrouping, LayerRule, Tensor, TensorMap};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use tempfile::TempDir;

type Check = fn() -> Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($msg)+)),
        }
    };
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 11] = [
        ("checkpoint round trip", c1_round_trip),
        ("merge-method reduction lattice", c2_reduction_lattice),
        ("TIES/DELLA brute-force equivalence", c3_brute_force),
        ("DARE unbiasedness", c4_dare_unbiased),
        ("per-layer Pearson correctness", c5_pearson),
        ("diagnostic discrimination", c6_discrimination),
        ("L2 profile properties", c7_l2_profile),
        ("percentage-delta convention", c8_percent),
        ("sweep shape and determinism", c9_sweep),
        ("data mixing", c10_datamix),
        ("text metrics", c11_text_metrics),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(()) => println!("PASS  {:>2}. {name}", i + 1),
            Err(e) => {
                failed += 1;
                println!("FAIL  {:>2}. {name}: {e}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        checks.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn c1_round_trip() -> Result<(), String> {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let mut r = rng(1);
    for case in 0..100 {
        let n = r.gen_range(0..=32);
        let m: TensorMap = (0..n)
            .map(|i| {
                let len = r.gen_range(1..=4096);
                let shape = if len % 4 == 0 {
                    vec![4, len / 4]
                } else {
                    vec![len]
                };
                let data = (0..len).map(|_| f32::from_bits(r.gen())).collect();
                (format!("t{case}.{i}"), Tensor::new(shape, data).unwrap())
            })
            .collect();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        write_checkpoint(&m, &a).map_err(|e| e.to_string())?;
        let back = read_checkpoint(&a).map_err(|e| e.to_string())?;
        ensure!(back.len() == m.len(), "case {case}: tensor count changed");
        for (name, t) in &m {
            let u = back.get(name).ok_or(format!("case {case}: lost {name}"))?;
            ensure!(
                u.shape() == t.shape()
                    && u.data()
                        .iter()
                        .zip(t.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits()),
                "case {case}: {name} differs"
            );
        }
        write_checkpoint(&back, &b).map_err(|e| e.to_string())?;
        ensure!(
            std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap(),
            "case {case}: rewrite differs"
        );
    }
    Ok(())
}

fn ulps(a: f32, b: f32) -> u32 {
    (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs() as u32
}

fn c2_reduction_lattice() -> Result<(), String> {
    let mut r = rng(2);
    for case in 0..20 {
        let shapes = toy_shapes(&mut r, 3, 64);
        let base = fill(&shapes, || r.gen_range(1.0f32..2.0));
        let sft = fill(&shapes, || r.gen_range(1.0f32..2.0));
        let (bm, sm) = (to_map(&base), to_map(&sft));
        let delta = compute_delta(&bm, &sm).unwrap();
        let exact: TensorMap = bm
            .iter()
            .map(|(n, b)| {
                let d = delta.deltas().get(n).unwrap().data();
                let v = b.data().iter().zip(d).map(|(x, y)| x + y).collect();
                (n.clone(), Tensor::new(b.shape().to_vec(), v).unwrap())
            })
            .collect();
        for m in [
            Method::Ties,
            Method::DareLinear,
            Method::DareTies,
            Method::Della,
        ] {
            // the disjoint mean cancels a lone weight; the linear sum does not
            let w = if m == Method::DareLinear {
                1.0
            } else {
                r.gen_range(0.1..1.0)
            };
            let mut recipe = MergeRecipe::new(m, &[w]);
            recipe.seed = r.gen();
            let out = merge(&recipe, &bm, std::slice::from_ref(&sm)).unwrap();
            ensure!(out == exact, "case {case}: {m} is not base + delta");
        }
        let lambda: f64 = r.gen_range(0.0..=1.0);
        let out = merge(
            &MergeRecipe::new(Method::Linear, &[lambda, 1.0 - lambda]),
            &bm,
            &[sm.clone(), bm.clone()],
        )
        .unwrap();
        for (n, t) in &out {
            let b = bm.get(n).unwrap().data();
            let d = delta.deltas().get(n).unwrap().data();
            for i in 0..t.len() {
                let want = (f64::from(b[i]) + lambda * f64::from(d[i])) as f32;
                ensure!(
                    ulps(t.data()[i], want) <= 1,
                    "case {case}: LINEAR off by more than 1 ulp at {n}[{i}]"
                );
            }
        }
    }
    Ok(())
}

fn c3_brute_force() -> Result<(), String> {
    for (i, c) in merge_cases(50, 3).iter().enumerate() {
        let tasks: Vec<TensorMap> = c.tasks.iter().map(to_map).collect();
        let base = to_map(&c.base);
        for (m, o) in [
            (Method::Ties, OracleMethod::Ties),
            (Method::Della, OracleMethod::Della { spread: c.spread }),
        ] {
            let mut recipe = MergeRecipe::new(m, &c.weights);
            recipe.density = c.density;
            recipe.spread = c.spread;
            recipe.seed = c.seed;
            let got = merge(&recipe, &base, &tasks).map_err(|e| e.to_string())?;
            let want = oracle_merge(&o, &c.base, &c.tasks, &c.weights, c.density, c.seed, 1.0);
            ensure!(toy_eq(&got, &want), "toy {i}: {m} differs from oracle");
        }
    }
    Ok(())
}

fn c4_dare_unbiased() -> Result<(), String> {
    let zero: TensorMap = [("w".to_string(), Tensor::vector(vec![0.0]))]
        .into_iter()
        .collect();
    let one = zero.map(|_| 1.0);
    let tv = compute_delta(&zero, &one).unwrap();
    let n = 10_000u64;
    for d in [0.3, 0.5, 0.9] {
        let mean = (0..n)
            .map(|s| {
                f64::from(
                    dare_sparsify(&tv, d, s, 0)
                        .unwrap()
                        .deltas
                        .get("w")
                        .unwrap()
                        .data()[0],
                )
            })
            .sum::<f64>()
            / n as f64;
        let bound = 3.0 * ((1.0 - d) / (d * n as f64)).sqrt();
        ensure!(
            (mean - 1.0).abs() <= bound,
            "d={d}: mean {mean} outside ±{bound}"
        );
    }
    Ok(())
}

fn profile_of(g: &TensorMap, s: &TensorMap) -> Vec<mergeforge_core::LayerReport> {
    let zero = g.map(|_| 0.0);
    let (vg, vs) = (
        compute_delta(&zero, g).unwrap(),
        compute_delta(&zero, s).unwrap(),
    );
    let grouping = LayerGrouping::new(g.names(), &LayerRule::default());
    correlation_profile(&vg, &vs, &grouping).unwrap()
}

fn c5_pearson() -> Result<(), String> {
    let mut r = rng(5);
    for case in 0..50 {
        let shapes = toy_shapes(&mut r, 6, 256);
        let g = to_map(&fill(&shapes, || r.gen_range(-1.0f32..1.0)));
        let s = to_map(&fill(&shapes, || r.gen_range(-1.0f32..1.0)));
        let grouping = LayerGrouping::new(g.names(), &LayerRule::default());
        for row in profile_of(&g, &s) {
            let names = grouping.get(&row.layer).unwrap();
            let a: Vec<f32> = names
                .iter()
                .flat_map(|n| g.get(n).unwrap().data().to_vec())
                .collect();
            let b: Vec<f32> = names
                .iter()
                .flat_map(|n| s.get(n).unwrap().data().to_vec())
                .collect();
            if a.len() < 2 {
                ensure!(
                    row.pearson_r.is_none(),
                    "case {case}: single-element layer has r"
                );
                continue;
            }
            let (got, want) = (row.pearson_r.unwrap(), oracle_pearson(&a, &b).unwrap());
            ensure!(
                (got - want).abs() < 1e-12,
                "case {case}: layer {} r {got} vs {want}",
                row.layer
            );
        }
        let neg = g.map(|v| -v);
        for row in profile_of(&g, &g).into_iter().filter(|r| r.n_params >= 2) {
            ensure!(
                (row.pearson_r.unwrap() - 1.0).abs() < 1e-12,
                "case {case}: self r != 1"
            );
        }
        for row in profile_of(&g, &neg).into_iter().filter(|r| r.n_params >= 2) {
            ensure!(
                (row.pearson_r.unwrap() + 1.0).abs() < 1e-12,
                "case {case}: negated r != -1"
            );
        }
    }
    Ok(())
}

fn planted_pair(rho: f64, seed: u64) -> (TensorMap, TensorMap) {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut g = Vec::new();
    let mut s = Vec::new();
    for layer in 0..4 {
        let name = format!("model.layers.{layer}.mlp.weight");
        let dg: Vec<f64> = (0..8192).map(|_| normal.sample(&mut r)).collect();
        let ds: Vec<f64> = dg
            .iter()
            .map(|x| rho * x + (1.0 - rho * rho).sqrt() * normal.sample(&mut r))
            .collect();
        g.push((
            name.clone(),
            Tensor::vector(dg.iter().map(|&x| x as f32).collect()),
        ));
        s.push((name, Tensor::vector(ds.iter().map(|&x| x as f32).collect())));
    }
    (g.into_iter().collect(), s.into_iter().collect())
}

fn c6_discrimination() -> Result<(), String> {
    for (rho, want) in [(0.9, Verdict::DataMix), (0.1, Verdict::Merge)] {
        for seed in 0..20 {
            let (g, s) = planted_pair(rho, 600 + seed);
            for (name, t) in &g {
                let achieved = oracle_pearson(t.data(), s.get(name).unwrap().data()).unwrap();
                ensure!(
                    (achieved - rho).abs() <= 0.05,
                    "seed {seed}: planted {rho}, achieved {achieved}"
                );
            }
            let rec = recommend_strategy(&profile_of(&g, &s), 0.5, Weighting::Uniform).unwrap();
            ensure!(
                rec.verdict == want,
                "seed {seed}: rho {rho} gave {:?}",
                rec.verdict
            );
        }
    }
    Ok(())
}

fn c7_l2_profile() -> Result<(), String> {
    let mut r = rng(7);
    for case in 0..20 {
        let shapes = toy_shapes(&mut r, 6, 128);
        let base = to_map(&fill(&shapes, || r.gen_range(1.0f32..2.0)));
        let a = to_map(&fill(&shapes, || r.gen_range(1.0f32..2.0)));
        let b = to_map(&fill(&shapes, || r.gen_range(1.0f32..2.0)));
        let grouping = LayerGrouping::new(base.names(), &LayerRule::default());

        let zero = compute_delta(&base, &base).unwrap();
        ensure!(
            layer_l2(&zero, &grouping)
                .unwrap()
                .iter()
                .all(|l| l.mean == 0.0 && l.total == 0.0),
            "case {case}: zero delta has nonzero profile"
        );

        let da = compute_delta(&base, &a).unwrap();
        let c: f32 = r.gen_range(-4.0..4.0);
        for (x, y) in layer_l2(&da, &grouping)
            .unwrap()
            .iter()
            .zip(layer_l2(&da.scaled(c), &grouping).unwrap())
        {
            let want = x.mean * f64::from(c.abs());
            ensure!(
                (y.mean - want).abs() <= 1e-6 * want,
                "case {case}: scaling by {c} broke layer {}",
                x.layer
            );
        }

        let lambda: f64 = r.gen_range(0.0..=1.0);
        let mut recipe = MergeRecipe::new(Method::Linear, &[lambda, 1.0 - lambda]);
        recipe.normalize_weights = true;
        let merged = merge(&recipe, &base, &[a.clone(), b.clone()]).unwrap();
        let dm = layer_l2(&compute_delta(&base, &merged).unwrap(), &grouping).unwrap();
        let la = layer_l2(&da, &grouping).unwrap();
        let lb = layer_l2(&compute_delta(&base, &b).unwrap(), &grouping).unwrap();
        for ((m, x), y) in dm.iter().zip(&la).zip(&lb) {
            ensure!(
                m.mean <= x.mean.max(y.mean),
                "case {case}: layer {} merged {} > max({}, {})",
                m.layer,
                m.mean,
                x.mean,
                y.mean
            );
        }
    }
    Ok(())
}

fn c8_percent() -> Result<(), String> {
    for (score, base, want) in [(0.768, 0.756, "+1.59%"), (0.902, 0.909, "-0.77%")] {
        let got = format_pct(percent_change(score, base));
        ensure!(got == want, "{score} vs {base}: {got} != {want}");
    }
    Ok(())
}

fn sweep_fixture() -> (TensorMap, Vec<TensorMap>, TensorMap) {
    let mut r = rng(9);
    let shapes = toy_shapes(&mut r, 4, 64);
    let base = to_map(&fill(&shapes, || r.gen_range(-1.0f32..1.0)));
    let g = to_map(&fill(&shapes, || r.gen_range(-1.0f32..1.0)));
    let s = to_map(&fill(&shapes, || r.gen_range(-1.0f32..1.0)));
    let optimum = to_map(&fill(&shapes, || r.gen_range(-1.0f32..1.0)));
    (base, vec![g, s], optimum)
}

fn distance_scorer(
    optimum: &TensorMap,
) -> impl Fn(&TensorMap) -> mergeforge_core::Result<Scores> + Sync + '_ {
    move |m| {
        let mut sq = 0.0f64;
        for (n, t) in m {
            for (a, b) in t.data().iter().zip(optimum.get(n).unwrap().data()) {
                sq += f64::from(a - b).powi(2);
            }
        }
        let mut out = Scores::new();
        out.insert("closeness".into(), 1.0 / (1.0 + sq.sqrt()));
        out.insert("inv_sq".into(), 1.0 / (1.0 + sq));
        Ok(out)
    }
}

fn c9_sweep() -> Result<(), String> {
    let (base, tasks, optimum) = sweep_fixture();
    let plan = SweepPlan {
        methods: vec![
            Method::Linear,
            Method::Ties,
            Method::DareTies,
            Method::Della,
        ],
        weights: ratio_grid(),
        densities: vec![0.5],
        spread: 0.2,
        seed: 11,
        scale: 1.0,
        normalize_weights: false,
        task_ids: vec!["g".into(), "s".into()],
        baseline: [("closeness".to_string(), 0.4), ("inv_sq".to_string(), 0.2)]
            .into_iter()
            .collect(),
    };
    let render = || {
        let rep = run_sweep(&plan, &base, &tasks, distance_scorer(&optimum)).unwrap();
        (
            rep.rows.len(),
            [
                ReportFormat::Csv,
                ReportFormat::Json,
                ReportFormat::Markdown,
            ]
            .map(|f| format_report(&rep, f)),
        )
    };
    let (n1, docs1) = render();
    let (_, docs2) = render();
    ensure!(n1 == 36, "expected 36 rows, got {n1}");
    ensure!(docs1 == docs2, "reports differ across runs");
    ensure!(docs1[2].lines().count() == 2 + 36, "markdown body rows");
    ensure!(
        docs1[2].lines().filter(|l| l.contains("**")).count() == 4,
        "one best row per method"
    );
    Ok(())
}

fn c10_datamix() -> Result<(), String> {
    let corpus = RecordDataset::new(
        "synthetic",
        (0..268_000)
            .map(|i| format!("{{\"id\":{i},\"code\":\"def f{i}(): pass\"}}"))
            .collect(),
    );
    let sub = subsample(&corpus, 0.25, 17).map_err(|e| e.to_string())?;
    ensure!(sub.len() == 67_000, "subsample kept {}", sub.len());

    let other = RecordDataset::new(
        "other",
        (0..5_000).map(|i| format!("{{\"o\":{i}}}")).collect(),
    );
    let mixed = mix_datasets(&[sub.clone(), other.clone()], 17).map_err(|e| e.to_string())?;
    let mut got = mixed.records.clone();
    let mut want: Vec<String> = sub.records.iter().chain(&other.records).cloned().collect();
    got.sort_unstable();
    want.sort_unstable();
    ensure!(got == want, "mix does not conserve the record multiset");

    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let parts = [(corpus, 0.25), (other, 1.0)];
    let mut files = Vec::new();
    for name in ["a.jsonl", "b.jsonl"] {
        let p = dir.path().join(name);
        build_mixture(&parts, 17).unwrap().write_jsonl(&p).unwrap();
        files.push(std::fs::read(&p).unwrap());
    }
    ensure!(files[0] == files[1], "fixed seed produced different files");
    Ok(())
}

fn c11_text_metrics() -> Result<(), String> {
    let s = "def add ( a , b ) : return a + b";
    ensure!(bleu4(s, s).unwrap() == 1.0, "identical BLEU-4");
    ensure!(chrf_pp(s, s).unwrap() == 100.0, "identical chrF++");
    ensure!(rouge_l(s, s).unwrap() == 1.0, "identical ROUGE-L");
    let (h, r) = ("alpha beta gamma", "delta epsilon zeta");
    ensure!(bleu4(h, r).unwrap() == 0.0, "disjoint BLEU-4");
    ensure!(chrf_pp("abc", "xyz").unwrap() == 0.0, "disjoint chrF++");
    ensure!(rouge_l(h, r).unwrap() == 0.0, "disjoint ROUGE-L");

    let b = bleu4("the cat sat on mat", "the cat is on the mat").unwrap();
    let want = oracle_bleu("the cat sat on mat", "the cat is on the mat");
    ensure!((b - want).abs() < 1e-9, "BLEU-4 example {b} vs {want}");
    let c = chrf_pp("abcd", "abce").unwrap();
    let want = oracle_chrf("abcd", "abce");
    ensure!((c - want).abs() < 1e-9, "chrF++ example {c} vs {want}");
    let l = rouge_l("a b c d", "a c b d").unwrap();
    ensure!(
        (l - oracle_rouge("a b c d", "a c b d")).abs() < 1e-9 && (l - 0.75).abs() < 1e-9,
        "ROUGE-L example {l}"
    );
    Ok(())
}
