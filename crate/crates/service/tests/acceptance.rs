//! Acceptance suite: one line per criterion, nonzero exit on any failure.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use hedge_core::benchmark::{pr_curve, prr, BenchmarkReport};
use hedge_core::calibration::fit_bins;
use hedge_core::density::{fit_gaussian, fit_mcd, mahalanobis, McdConfig, Regularization};
use hedge_core::ensemble::{token_measures, StepDistributionSet};
use hedge_core::info::{cpmi, mean_token_entropy, perplexity, pmi, InfoConfig, TruncationMode};
use hedge_core::linalg::Matrix;
use hedge_core::meaning::{degmat_uncertainty, eigv_laplacian, laplacian_spectrum, SimilarityKernel, SimilarityMatrix};
use hedge_core::registry::{registry, TABLE_ROWS};
use hedge_core::textmetrics::{rouge_l, TokenizedText};
use hedge_core::{GenerationRecord, TokenStep};
use hedge_gateway::mock::{MockConfig, MockServer};
use hedge_service::service::{app, AppState, ModelSection, ServiceConfig};
use hedge_testkit::{
    brute_force_pr_curve, brute_force_rouge_l, epkl_double_loop, gaussian_points, random_distribution,
    random_instance, random_similarity,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(t0: Instant, limit: Duration) -> Result<Duration, String> {
    let el = t0.elapsed();
    if el < limit {
        Ok(el)
    } else {
        Err(format!("took {el:?}, limit {limit:?}"))
    }
}

fn prr_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut done = 0;
    while done < 200 {
        let n = rng.random_range(2..=20);
        let (q, u) = random_instance(&mut rng, n);
        if q.iter().all(|&x| x == q[0]) {
            continue;
        }
        let neg: Vec<f64> = q.iter().map(|x| -x).collect();
        let best = prr(&q, &neg).map_err(|e| e.to_string())?;
        check!((best - 1.0).abs() <= 1e-9, "oracle prr {best} on {q:?}");
        let flat = prr(&q, &vec![0.5; n]).map_err(|e| e.to_string())?;
        check!(flat.abs() <= 1e-9, "constant prr {flat} on {q:?}");
        let curve = pr_curve(&q, &u).map_err(|e| e.to_string())?;
        let oracle = brute_force_pr_curve(&q, &u);
        check!(curve.mean_quality.len() == oracle.len(), "curve length");
        for (a, b) in curve.mean_quality.iter().zip(&oracle) {
            check!((a - b).abs() <= 1e-9, "curve {a} vs enumeration {b} on {q:?} {u:?}");
        }
        done += 1;
    }
    let el = within(t0, Duration::from_secs(5))?;
    Ok(format!("200 instances in {el:.2?}"))
}

fn prr_rank_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut checked = 0;
    for t in 0..20 {
        let a = rng.random_range(0.1..5.0);
        let b = rng.random_range(-3.0..3.0);
        let f: Box<dyn Fn(f64) -> f64> = match t % 5 {
            0 => Box::new(move |x| a * x + b),
            1 => Box::new(move |x| (a * x).exp()),
            2 => Box::new(move |x| x * x * x + a * x),
            3 => Box::new(move |x| (a * x).atan()),
            _ => Box::new(move |x| 1.0 / (1.0 + (-a * x + b).exp())),
        };
        for _ in 0..10 {
            let n = rng.random_range(2..=20);
            let (q, u) = random_instance(&mut rng, n);
            let Ok(base) = prr(&q, &u) else { continue };
            let moved: Vec<f64> = u.iter().map(|&x| f(x)).collect();
            let got = prr(&q, &moved).map_err(|e| e.to_string())?;
            check!((got - base).abs() <= 1e-12, "transform {t}: {got} vs {base}");
            checked += 1;
        }
    }
    Ok(format!("20 transforms, {checked} instances"))
}

fn sim(rows: Vec<Vec<f64>>) -> SimilarityMatrix<f64> {
    SimilarityMatrix::from_matrix(Matrix::from_rows(&rows).unwrap(), SimilarityKernel::Jaccard).unwrap()
}

fn spectral() -> Outcome {
    let t0 = Instant::now();
    for k in 2..=10 {
        let ones = eigv_laplacian(&sim(vec![vec![1.0; k]; k])).map_err(|e| e.to_string())?;
        check!((ones - 1.0).abs() <= 1e-8, "all-ones K={k}: {ones}");
        let id = sim((0..k).map(|i| (0..k).map(|j| f64::from(i == j)).collect()).collect());
        let v = eigv_laplacian(&id).map_err(|e| e.to_string())?;
        check!((v - k as f64).abs() <= 1e-8, "identity K={k}: {v}");
    }
    let block = sim(vec![vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
    let v = eigv_laplacian(&block).map_err(|e| e.to_string())?;
    check!((v - 2.0).abs() <= 1e-8, "block eigv {v}");
    let d = degmat_uncertainty(&block);
    check!((d - 4.0 / 9.0).abs() <= 1e-12, "block degmat {d}");
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..100 {
        let k = rng.random_range(2..=12);
        let (vals, _) = laplacian_spectrum(&sim(random_similarity(&mut rng, k))).map_err(|e| e.to_string())?;
        check!(
            vals.iter().all(|&l| (-1e-8..=2.0 + 1e-8).contains(&l)),
            "eigenvalues out of [0, 2]: {vals:?}"
        );
    }
    let el = within(t0, Duration::from_secs(5))?;
    Ok(format!("K=2..10, block case, 100 random S in {el:.2?}"))
}

fn step(lp: f64, alternatives: Vec<(u32, f64)>, uncond: Option<f64>) -> TokenStep {
    TokenStep {
        token_id: alternatives.first().map_or(0, |a| a.0),
        token_text: "t".into(),
        logprob: lp,
        alternatives,
        unconditional_logprob: uncond,
    }
}

fn record(steps: Vec<TokenStep>) -> GenerationRecord {
    let mut r = GenerationRecord::text_only("r", "x", "y");
    r.output_tokens = steps;
    r
}

fn info_measures() -> Outcome {
    let half = 0.5f64.ln();
    let ppl: f64 = perplexity(&record(vec![step(half, vec![(1, half), (2, half)], None); 9])).map_err(|e| e.to_string())?;
    check!(ppl == 2.0, "perplexity {ppl}");
    let q = 0.25f64.ln();
    let alts: Vec<(u32, f64)> = (1..=4).map(|i| (i, q)).collect();
    let ent: f64 = mean_token_entropy(&record(vec![step(q, alts, None); 5]), &InfoConfig::default()).map_err(|e| e.to_string())?;
    check!((ent - 4f64.ln()).abs() <= 1e-12, "entropy {ent}");

    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let huge = InfoConfig::new(f64::MAX, 1.0, TruncationMode::Renormalize).map_err(|e| e.to_string())?;
    for _ in 0..500 {
        let n = rng.random_range(1..=12);
        let v: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| (rng.random_range(0.01..1.0), rng.random_range(0.01..1.0), rng.random_range(0.05..0.95)))
            .collect();
        let build = |swap: bool| {
            record(
                v.iter()
                    .map(|&(c, u, top): &(f64, f64, f64)| {
                        let (c, u) = if swap { (u, c) } else { (c, u) };
                        step(c.ln(), vec![(1, top.max(1.0 - top).ln()), (2, top.min(1.0 - top).ln())], Some(u.ln()))
                    })
                    .collect(),
            )
        };
        let r = build(false);
        let nll = -r.total_logprob() / n as f64;
        let c: f64 = cpmi(&r, &huge).map_err(|e| e.to_string())?;
        check!((c - nll).abs() <= 1e-12, "cpmi {c} vs nll {nll}");
        let a: f64 = pmi(&r).map_err(|e| e.to_string())?;
        let b: f64 = pmi(&build(true)).map_err(|e| e.to_string())?;
        check!((a + b).abs() <= 1e-12, "pmi swap {a} + {b}");
    }
    Ok("perplexity 2, entropy ln 4, 500 cpmi/pmi cases".into())
}

fn ensemble() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for _ in 0..500 {
        let m = rng.random_range(2..=5);
        let support = rng.random_range(1..=6);
        let members: Vec<Vec<f64>> = (0..m).map(|_| random_distribution(&mut rng, support)).collect();
        let set = StepDistributionSet::from_dense(members).map_err(|e| e.to_string())?;
        let t = token_measures(&set);
        check!(t.mi >= -1e-9, "mi {}", t.mi);
        check!(t.rmi >= -1e-9, "rmi {}", t.rmi);
        let oracle = epkl_double_loop(&set.per_model);
        check!((t.epkl - oracle).abs() <= 1e-10, "epkl {} vs {oracle}", t.epkl);
    }
    for _ in 0..100 {
        let m = rng.random_range(2..=5);
        let support = rng.random_range(1..=6);
        let p = random_distribution(&mut rng, support);
        let t = token_measures(&StepDistributionSet::from_dense(vec![p; m]).map_err(|e| e.to_string())?);
        check!(t.mi.abs() <= 1e-12 && t.epkl.abs() <= 1e-12 && t.rmi.abs() <= 1e-12, "identical members {t:?}");
    }
    Ok("500 random steps, 100 identical-member steps".into())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn density() -> Outcome {
    let none = Regularization::Absolute(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let pts = gaussian_points(&mut rng, 200, &[0.0; 5], 1.0);
    let a = Matrix::from_fn(5, 5, |i, j| if i == j { 2.0 + i as f64 } else { 0.3 * ((i + 2 * j) % 3) as f64 });
    let shift = [1.0, -2.0, 0.5, 3.0, -1.0];
    let tr = |p: &[f64]| -> Vec<f64> { a.mat_vec(p).unwrap().iter().zip(&shift).map(|(x, s)| x + s).collect() };
    let f1 = fit_gaussian(&pts, none).map_err(|e| e.to_string())?;
    let f2 = fit_gaussian(&pts.iter().map(|p| tr(p)).collect::<Vec<_>>(), none).map_err(|e| e.to_string())?;
    for _ in 0..50 {
        let h: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let d1 = mahalanobis(&f1, &h).map_err(|e| e.to_string())?;
        let d2 = mahalanobis(&f2, &tr(&h)).map_err(|e| e.to_string())?;
        check!((d1 - d2).abs() <= 1e-6 * d1.max(1.0), "affine {d1} vs {d2}");
    }
    let at_mu = mahalanobis(&f1, &f1.mu.clone()).map_err(|e| e.to_string())?;
    check!(at_mu.abs() <= 1e-12, "MD(mu) = {at_mu}");

    let s = 2f64.sqrt();
    let unit = fit_gaussian(&[vec![s, 0.0], vec![-s, 0.0], vec![0.0, s], vec![0.0, -s]], none).map_err(|e| e.to_string())?;
    for _ in 0..50 {
        let h = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        let d = mahalanobis(&unit, &h).map_err(|e| e.to_string())?;
        let e = h[0] * h[0] + h[1] * h[1];
        check!((d - e).abs() <= 1e-12, "identity covariance {d} vs {e}");
    }

    let mut wins = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inlier = vec![0.0; 3];
        let mut pts = gaussian_points(&mut rng, 90, &inlier, 1.0);
        pts.extend(gaussian_points(&mut rng, 10, &[12.0; 3], 0.5));
        let plain = fit_gaussian(&pts, Regularization::default()).map_err(|e| e.to_string())?;
        let cfg = McdConfig { seed, ..McdConfig::default() };
        let robust = fit_mcd(&pts, &cfg, Regularization::default()).map_err(|e| e.to_string())?;
        if dist(&robust.mu, &inlier) < dist(&plain.mu, &inlier) {
            wins += 1;
        }
    }
    check!(wins == 20, "MCD closer on {wins}/20 seeds");
    Ok("affine equivariance, MD(mu) = 0, identity covariance, MCD 20/20".into())
}

fn text_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let vocab = ["a", "b", "c", "d", "e"];
    for _ in 0..1000 {
        let (la, lb) = (rng.random_range(0..=10), rng.random_range(0..=10));
        let mut words = |n: usize| -> Vec<String> { (0..n).map(|_| vocab[rng.random_range(0..vocab.len())].to_string()).collect() };
        let (a, b) = (words(la), words(lb));
        let got: f64 = rouge_l(&TokenizedText::from_tokens(a.clone()), &TokenizedText::from_tokens(b.clone()));
        let want = brute_force_rouge_l(&a, &b);
        check!(got == want, "rougeL {got} vs oracle {want} on {a:?} / {b:?}");
    }
    let hand: f64 = rouge_l(&"a b c".into(), &"a c".into());
    check!(hand == 0.8, "\"a b c\" / \"a c\" gave {hand}");
    Ok("1000 random lists exact, hand case 0.8".into())
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap()
}

fn toy_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

fn end_to_end() -> Outcome {
    let rt = runtime();
    let mock = rt.block_on(MockServer::start(MockConfig::default())).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    let mut slowest = Duration::ZERO;
    for run in ["a", "b"] {
        let t0 = Instant::now();
        let out = dir.path().join(run);
        let o = Command::new(env!("CARGO_BIN_EXE_hedge"))
            .arg("bench")
            .arg("--config")
            .arg(toy_dir().join("bench.toml"))
            .arg("--out")
            .arg(&out)
            .arg("--nli-url")
            .arg(mock.nli_url())
            .env("RUST_LOG", "error")
            .output()
            .map_err(|e| e.to_string())?;
        check!(o.status.success(), "bench exited {:?}: {}", o.status, String::from_utf8_lossy(&o.stderr));
        reports.push(std::fs::read(out.join("report.json")).map_err(|e| e.to_string())?);
        slowest = slowest.max(within(t0, Duration::from_secs(60))?);
    }
    check!(reports[0] == reports[1], "reports differ between runs");
    let report = BenchmarkReport::from_json(std::str::from_utf8(&reports[0]).unwrap()).map_err(|e| e.to_string())?;
    let row = |n: &str| report.rows.iter().find(|r| r.name == n).ok_or(format!("no {n} row"));
    for c in &row("oracle")?.cells {
        let v = c.prr_mean.ok_or("oracle cell empty")?;
        check!((v - 1.0).abs() <= 1e-9, "oracle prr {v}");
    }
    for c in &row("constant")?.cells {
        let v = c.prr_mean.ok_or("constant cell empty")?;
        check!(v.abs() <= 1e-9, "constant prr {v}");
    }
    Ok(format!("byte-identical reports, oracle 1, constant 0, slowest run {slowest:.2?}"))
}

fn roster() -> Outcome {
    let rt = runtime();
    rt.block_on(async {
        let mock = MockServer::start(MockConfig::default()).await.map_err(|e| e.to_string())?;
        let cfg = ServiceConfig {
            model: ModelSection {
                base_url: mock.base_url(),
                name: "mock-1".into(),
                timeout_secs: 10,
                max_parallel: 4,
            },
            nli_url: Some(mock.nli_url()),
            ..ServiceConfig::default()
        };
        let state = Arc::new(AppState::from_config(&cfg).map_err(|e| e.to_string())?);
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
        let url = format!("http://{}", listener.local_addr().unwrap());
        tokio::spawn(async move { axum::serve(listener, app(state)).await });
        let http = reqwest::Client::new();
        let listing: serde_json::Value = http
            .get(format!("{url}/v1/estimators"))
            .send()
            .await
            .map_err(|e| e.to_string())?
            .json()
            .await
            .map_err(|e| e.to_string())?;
        let list = listing["estimators"].as_array().ok_or("no estimators array")?;
        check!(TABLE_ROWS.len() == 19, "{} table rows", TABLE_ROWS.len());
        for row in TABLE_ROWS {
            check!(list.iter().any(|e| e["table_row"] == *row), "row {row} missing");
        }
        let (mut scored, mut gaps) = (0, 0);
        for spec in registry() {
            let body = serde_json::json!({
                "messages": [{"role": "user", "content": "Repeat the phrase: amber harbor lantern"}],
                "estimator": spec.name,
            });
            let resp = http.post(format!("{url}/v1/chat")).json(&body).send().await.map_err(|e| e.to_string())?;
            let status = resp.status().as_u16();
            let v: serde_json::Value = resp.json().await.map_err(|e| e.to_string())?;
            match status {
                200 if v["uncertainty_raw"].as_f64().is_some_and(f64::is_finite) => scored += 1,
                422 if v["error"]["kind"] == "capability_gap" => gaps += 1,
                _ => return Err(format!("{} returned {status}: {v}", spec.name)),
            }
        }
        Ok(format!("19 rows listed, {} entries: {scored} scored, {gaps} typed gaps", list.len()))
    })
}

fn calibration() -> Outcome {
    let f = fit_bins("fixture", &[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 0.0, 0.0], 2).map_err(|e| e.to_string())?;
    check!(f.table.bin_confidence == vec![1.0, 0.0], "confidences {:?}", f.table.bin_confidence);
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let ue: Vec<f64> = (0..200).map(|_| rng.random_range(-10.0..10.0)).collect();
    let q: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0)).collect();
    let t = fit_bins("random", &ue, &q, 10).map_err(|e| e.to_string())?.table;
    let specials = [f64::NEG_INFINITY, f64::INFINITY, f64::NAN, f64::MAX, f64::MIN, 0.0, -0.0];
    for i in 0..100_000 {
        let x = if i < specials.len() {
            specials[i]
        } else {
            let e: i32 = rng.random_range(-300..300);
            rng.random_range(-1.0..1.0) * 10f64.powi(e)
        };
        let c = t.normalize(x);
        check!((0.0..=1.0).contains(&c), "normalize({x}) = {c}");
    }
    Ok("two-bin {1, 0}, normalize total over 1e5 inputs".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("prr oracle identity", prr_oracle),
        ("prr rank invariance", prr_rank_invariance),
        ("spectral identities", spectral),
        ("information measures", info_measures),
        ("ensemble measures", ensemble),
        ("density", density),
        ("text metrics", text_metrics),
        ("end-to-end toy bench", end_to_end),
        ("roster coverage", roster),
        ("calibration", calibration),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match res {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
