//! End-to-end acceptance checks. Runs as a plain binary (`harness = false`)
//! so that every criterion reports one PASS/FAIL line, in order, even when
//! an earlier one fails. Exit status is non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use mixsearch_core::agent::{compute_proxies, reward, Action, Checkpoint, NetShape, QNetwork, SearchState};
use mixsearch_core::catalog::{generate_synthetic, squared_distance, Catalog, Item};
use mixsearch_core::config::{Config, SearchConfig};
use mixsearch_core::eval::{self, EvalReport, Policy};
use mixsearch_core::interactions::build_pivot_trees;
use mixsearch_core::pipeline::{self, Experiment};
use mixsearch_core::relevance::{FeedbackConstraint, LikelihoodParams, Polarity, RelevanceState};
use mixsearch_core::rng;
use mixsearch_core::session::{run_episode, FeedbackSource, StepRecord};
use mixsearch_core::simuser::{SimulatedUser, UserConfig};
use mixsearch_core::{SearchContext, SearchSession};
use rand::Rng;

type Outcome = Result<String, String>;

fn out_dir() -> PathBuf {
    let dir = std::env::var_os("MIXSEARCH_ACCEPTANCE_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance"));
    std::fs::create_dir_all(&dir).expect("create acceptance output dir");
    dir
}

fn within(limit: Duration, start: Instant, detail: String) -> Outcome {
    let took = start.elapsed();
    if took <= limit {
        Ok(format!("{detail} ({:.2} s)", took.as_secs_f64()))
    } else {
        Err(format!("{detail}, but took {:.2} s > {:.0} s", took.as_secs_f64(), limit.as_secs_f64()))
    }
}

// ---------------------------------------------------------------- 1

fn oracle_likelihood(c: &Catalog, i: usize, con: &FeedbackConstraint, p: &LikelihoodParams) -> f64 {
    let raw = match con {
        FeedbackConstraint::AttributeCompare { attr, ref_id, polarity } => {
            let delta = c.attr(i, *attr) - c.attr(*ref_id, *attr);
            match polarity {
                Polarity::More => 1.0 / (1.0 + (-delta / p.sigma_more[*attr]).exp()),
                Polarity::Less => 1.0 / (1.0 + (delta / p.sigma_more[*attr]).exp()),
                Polarity::Equal => (-delta * delta / (2.0 * p.sigma_eq[*attr].powi(2))).exp(),
            }
        }
        FeedbackConstraint::Sketch { embedding } => {
            let d2: f64 = c.features(i).iter().zip(embedding).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d2 / (2.0 * p.tau_sketch * p.tau_sketch)).exp()
        }
    };
    raw.max(p.floor).min(1.0)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut mismatches = 0;
    for k in 0..20u64 {
        let c = generate_synthetic(50, 6, 4, 3, 100 + k).unwrap();
        let p = LikelihoodParams::from_catalog(&c, 0.25, 0.25, 0.5, 1e-4);
        let mut r = rng::stream(k, "acceptance-relevance", &[]);
        let mut state = RelevanceState::new(c.len());
        let mut constraints = Vec::new();
        for _ in 0..10 {
            let con = if r.random_bool(0.2) {
                let base = r.random_range(0..c.len());
                let embedding = c.features(base).iter().map(|v| v + r.random_range(-0.5..0.5)).collect();
                FeedbackConstraint::Sketch { embedding }
            } else {
                let polarity = [Polarity::More, Polarity::Less, Polarity::Equal][r.random_range(0..3)];
                FeedbackConstraint::AttributeCompare { attr: r.random_range(0..4), ref_id: r.random_range(0..50), polarity }
            };
            state.update(con.clone(), &c, &p).unwrap();
            constraints.push(con);
        }
        let products: Vec<f64> = (0..c.len())
            .map(|i| constraints.iter().map(|con| oracle_likelihood(&c, i, con, &p)).product())
            .collect();
        let mut oracle: Vec<usize> = (0..c.len()).collect();
        oracle.sort_by(|&a, &b| products[b].total_cmp(&products[a]).then(a.cmp(&b)));
        if state.rank() != oracle {
            mismatches += 1;
        }
    }
    if mismatches > 0 {
        return Err(format!("{mismatches}/20 catalogs rank differently from the likelihood-product oracle"));
    }
    within(Duration::from_secs(5), start, "20 catalogs x 10 constraints match the product oracle".into())
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let n = 1000;
    let c = generate_synthetic(n, 8, 10, 6, 42).unwrap();
    let trees = build_pivot_trees(&c);
    let max_depth = trees.iter().map(|t| t.depth()).max().unwrap();
    if max_depth > 10 {
        return Err(format!("a pivot tree has depth {max_depth} > 10"));
    }
    let mut checked = 0;
    for t in &trees {
        let attr = t.attr();
        for target in (0..n).step_by(7) {
            let v = c.attr(target, attr);
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut node = Some(t.root());
            let mut q = 0u32;
            while let Some(cur) = node {
                let pivot = t.pivot(cur);
                let pv = c.attr(pivot, attr);
                // Truthful and noiseless; equality (the target itself) ends the descent.
                node = if v > pv || (v == pv && target > pivot) {
                    lo = pv;
                    t.right(cur)
                } else if v < pv || target < pivot {
                    hi = pv;
                    t.left(cur)
                } else {
                    break;
                };
                q += 1;
                let consistent = c.attr_column(attr).filter(|&s| s > lo && s < hi).count();
                let bound = n.div_ceil(1usize << q) + 1;
                if consistent > bound {
                    return Err(format!("attr {attr}, target {target}: {consistent} consistent after {q} answers > {bound}"));
                }
                checked += 1;
            }
        }
    }
    within(
        Duration::from_secs(5),
        start,
        format!("max depth {max_depth} at N=1000; {checked} descent steps within ceil(N/2^q)+1"),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let start = Instant::now();
    for k in 0..100u64 {
        let c = generate_synthetic(50, 4, 6, 3, 500 + k).unwrap();
        let mut r = rng::stream(k, "acceptance-freeform", &[]);
        let target = r.random_range(0..50);
        let user = SimulatedUser::from_config(&c, target, &UserConfig::default(), k);
        let page: Vec<usize> = rand::seq::index::sample(&mut r, 50, 8).into_vec();
        let got = user.choose_freeform(&page, &c);
        // Exhaustive argmin over every displayed reference and vocabulary
        // attribute; strict `<` keeps the first pair in scan order.
        let mut best: Option<(usize, (usize, usize, Polarity))> = None;
        for &ref_id in &page {
            for &attr in user.attr_subset() {
                let delta = c.attr(target, attr) - c.attr(ref_id, attr);
                let eps = user.eps_eq(attr);
                let pol = if delta > eps {
                    Polarity::More
                } else if delta < -eps {
                    Polarity::Less
                } else {
                    Polarity::Equal
                };
                let rv = c.attr(ref_id, attr);
                let count = (0..50)
                    .filter(|&j| {
                        let s = c.attr(j, attr);
                        match pol {
                            Polarity::More => s > rv,
                            Polarity::Less => s < rv,
                            Polarity::Equal => (s - rv).abs() <= eps,
                        }
                    })
                    .count();
                if best.is_none_or(|(bc, _)| count < bc) {
                    best = Some((count, (attr, ref_id, pol)));
                }
            }
        }
        let want = best.unwrap().1;
        if got != want {
            return Err(format!("instance {k}: choose_freeform gave {got:?}, oracle {want:?}"));
        }
    }
    within(Duration::from_secs(10), start, "100 instances equal the exhaustive argmin".into())
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let c = generate_synthetic(200, 32, 10, 6, 77).unwrap();
    let ctx = SearchContext::new(Arc::new(c), SearchConfig::default());
    let shape = NetShape::new(ctx.state_shape());
    let net = QNetwork::new(shape, 3).unwrap();
    // Realistic states from WS/SK_PRR/PRR sessions, gathered until six are
    // available (some targets are found within a step or two).
    let mut states: Vec<SearchState> = Vec::new();
    let policies = [Policy::SkPrr, Policy::Ws, Policy::Prr];
    for t in (8..200usize).step_by(7) {
        if states.len() >= 6 {
            break;
        }
        let mut policy = policies[t % 3].clone();
        let mut user = SimulatedUser::from_config(ctx.catalog(), t, &UserConfig::default(), 1);
        let traj = run_episode(&mut policy, SearchSession::new(ctx.clone(), Some(t)).unwrap(), &mut user).unwrap();
        states.extend(traj.steps.iter().take(2).map(|s| s.state.clone()));
    }
    states.truncate(6);
    let targets = [0.7, -0.3, 1.9, 0.2, -1.1, 0.5];
    let samples: Vec<(&SearchState, Action, f64)> =
        states.iter().zip(targets).enumerate().map(|(i, (s, y))| (s, Action::ALL[i % 3], y)).collect();
    let refs: Vec<&SearchState> = states.iter().collect();
    let (_, grad) = net.loss_and_gradient(&samples).unwrap();
    let base_pattern = net.activation_pattern(&refs).unwrap();

    let h = 1e-4;
    let mut r = rng::stream(9, "acceptance-gradcheck", &[]);
    let blocks = net.blocks();
    let mut worst = 0.0f64;
    let mut report = Vec::new();
    // A layer is a weight block followed by its bias block.
    for layer in blocks.chunks(2) {
        let name = layer[0].name.trim_end_matches(".weight").to_string();
        let params: Vec<usize> = layer.iter().flat_map(|b| b.range.clone()).collect();
        let mut checked = 0;
        let mut skipped = 0;
        let mut attempts = 0;
        // Layers with fewer than 100 parameters are checked in full, and the
        // sampling continues with replacement until 100 checks pass.
        let mut order: Vec<usize> = params.clone();
        while checked < 100 {
            attempts += 1;
            if attempts > 2000 {
                return Err(format!("{name}: only {checked} kink-free samples in 2000 attempts"));
            }
            let idx = if !order.is_empty() && checked + skipped < params.len() {
                order.swap_remove(r.random_range(0..order.len()))
            } else {
                params[r.random_range(0..params.len())]
            };
            let mut plus = net.clone();
            plus.params_mut()[idx] += h;
            let mut minus = net.clone();
            minus.params_mut()[idx] -= h;
            if plus.activation_pattern(&refs).unwrap() != base_pattern
                || minus.activation_pattern(&refs).unwrap() != base_pattern
            {
                skipped += 1;
                continue;
            }
            let (lp, _) = plus.loss_and_gradient(&samples).unwrap();
            let (lm, _) = minus.loss_and_gradient(&samples).unwrap();
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grad.0[idx];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max(rel);
            if rel > 1e-4 {
                return Err(format!("{name} param {idx}: analytic {analytic:.6e} vs numeric {numeric:.6e} (rel {rel:.2e})"));
            }
            checked += 1;
        }
        report.push(format!("{name} {checked}/{}", params.len()));
    }
    within(
        Duration::from_secs(60),
        start,
        format!("worst relative error {worst:.2e}; checks per layer: {}", report.join(", ")),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    // Items: 0 = positive proxy, 1 = negative proxy, 2 = previous top, then
    // candidate new tops on an integer grid (exact squared distances, so
    // "no change" is an exact tie).
    let pos = [10.0, 0.0, 0.0];
    let neg = [0.0, 10.0, 0.0];
    let mut feats = vec![pos.to_vec(), neg.to_vec(), vec![0.0; 3]];
    let mut slot = [[None::<usize>; 3]; 3];
    for x in -10i32..=10 {
        for y in -10i32..=10 {
            for z in 0i32..=10 {
                let u = [x as f64, y as f64, z as f64];
                let dp = squared_distance(&u, &pos) - squared_distance(&[0.0; 3], &pos);
                let dn = squared_distance(&u, &neg) - squared_distance(&[0.0; 3], &neg);
                // Index 0: closer/farther-than-before encoded as 0 = closer, 1 = same, 2 = farther.
                let bucket = |v: f64| if v < 0.0 { 0 } else if v == 0.0 { 1 } else { 2 };
                let (a, b) = (bucket(dp), bucket(dn));
                if slot[a][b].is_none() {
                    slot[a][b] = Some(feats.len());
                    feats.push(u.to_vec());
                }
            }
        }
    }
    let items: Vec<Item> = feats
        .into_iter()
        .enumerate()
        .map(|(id, features)| Item { id, features, attrs: vec![0.0], image_uri: None })
        .collect();
    let c = Catalog::new(3, 1, vec!["a".into()], items).unwrap();
    // Hand-computed: +1 for moving closer to the positive proxy, +1 for
    // moving away from the negative one, -1 for the opposite moves.
    let table: [[i32; 3]; 3] = [
        // neg: closer, same, farther
        [0, 1, 2],   // pos closer
        [-1, 0, 1],  // pos same
        [-2, -1, 0], // pos farther
    ];
    let mut checked = 0;
    for (a, row) in slot.iter().enumerate() {
        for (b, id) in row.iter().enumerate() {
            let id = id.ok_or_else(|| format!("no grid point realises combination ({a}, {b})"))?;
            for penalty in [false, true] {
                let got = reward(&[2], &[id], &[0], &[1], &c, penalty);
                let want = table[a][b] - i32::from(penalty);
                if got != want {
                    return Err(format!("combination ({a}, {b}), penalty {penalty}: reward {got}, expected {want}"));
                }
                if !(-3..=2).contains(&got) {
                    return Err(format!("reward {got} outside -3..=2"));
                }
                checked += 1;
            }
        }
    }
    // Range over random sets on a real catalog.
    let cat = generate_synthetic(80, 4, 2, 3, 5).unwrap();
    let prox = compute_proxies(&cat, 0, 5).unwrap();
    let mut r = rng::stream(5, "acceptance-reward", &[]);
    for _ in 0..2000 {
        let a: Vec<usize> = (0..5).map(|_| r.random_range(0..80)).collect();
        let b: Vec<usize> = (0..5).map(|_| r.random_range(0..80)).collect();
        let v = reward(&a, &b, &prox.pos, &prox.neg, &cat, r.random_bool(0.5));
        if !(-3..=2).contains(&v) {
            return Err(format!("reward {v} outside -3..=2"));
        }
    }
    Ok(format!("{checked} sign-table cases match; 2000 random rewards within -3..=2"))
}

// ---------------------------------------------------------------- 6 & 7

struct MainRun {
    reports: Vec<EvalReport>,
    network: Option<Arc<QNetwork>>,
    experiment: Experiment,
    elapsed: Duration,
    error: Option<String>,
}

fn main_run() -> MainRun {
    let start = Instant::now();
    let experiment = Experiment::synthetic(Config::default()).expect("default experiment");
    assert_eq!(experiment.catalog().len(), 1000);
    let result = (|| -> Result<(Vec<EvalReport>, Arc<QNetwork>), String> {
        let outcome = experiment.train().map_err(|e| e.to_string())?;
        let dir = out_dir();
        std::fs::write(dir.join("train_log.csv"), outcome.log_csv()).map_err(|e| e.to_string())?;
        experiment.checkpoint(&outcome).save(dir.join("checkpoint.json")).map_err(|e| e.to_string())?;
        let network = Arc::new(outcome.network);
        let reports = experiment.evaluate_all(Some(network.clone())).map_err(|e| e.to_string())?;
        pipeline::write_reports(&dir, &reports).map_err(|e| e.to_string())?;
        Ok((reports, network))
    })();
    let elapsed = start.elapsed();
    match result {
        Ok((reports, network)) => MainRun { reports, network: Some(network), experiment, elapsed, error: None },
        Err(e) => MainRun { reports: Vec::new(), network: None, experiment, elapsed, error: Some(e) },
    }
}

fn criterion_6(run: &MainRun) -> Outcome {
    if let Some(e) = &run.error {
        return Err(format!("training/evaluation failed: {e}"));
    }
    let text = std::fs::read_to_string(out_dir().join("auc.csv")).map_err(|e| e.to_string())?;
    let table = eval::parse_auc_csv(&text).map_err(|e| e.to_string())?;
    println!("    AUC table ({}):", out_dir().join("auc.csv").display());
    for (p, a) in &table {
        println!("      {p:<7} {a:.4}");
    }
    let get = |name: &str| table.iter().find(|(p, _)| p == name).map(|(_, a)| *a).ok_or(format!("{name} missing"));
    let rl = get("RL")?;
    let base = [get("WS")?, get("PRR")?, get("SK_PRR")?];
    let best = base.iter().copied().fold(f64::MIN, f64::max);
    let mean = base.iter().sum::<f64>() / 3.0;
    let targets = run.experiment.test_targets().len();
    let users = run.experiment.config.eval.n_users;
    let detail = format!(
        "RL {rl:.4} vs best baseline {best:.4} (need >= {:.4}) and baseline mean {mean:.4}; {targets} targets x {users} users",
        best - 0.01
    );
    if targets < 40 || users < 10 {
        return Err(format!("{detail}: evaluation too small"));
    }
    if !(rl >= best - 0.01 && rl > mean) {
        return Err(detail);
    }
    let limit = Duration::from_secs(30 * 60);
    if run.elapsed > limit {
        return Err(format!("{detail}, but training + evaluation took {:.0} s", run.elapsed.as_secs_f64()));
    }
    Ok(format!("{detail} (training + evaluation {:.0} s)", run.elapsed.as_secs_f64()))
}

fn criterion_7(run: &MainRun) -> Outcome {
    if let Some(e) = &run.error {
        return Err(format!("training/evaluation failed: {e}"));
    }
    let text = std::fs::read_to_string(out_dir().join("actions.csv")).map_err(|e| e.to_string())?;
    let fractions = eval::parse_actions_csv(&text).map_err(|e| e.to_string())?;
    let frac = |it: usize, a: &str| fractions.get(&("RL".to_string(), it, a.to_string())).copied().unwrap_or(0.0);
    let exploration = |its: std::ops::RangeInclusive<usize>| {
        let n = its.clone().count() as f64;
        its.map(|it| frac(it, "free_form") + frac(it, "sketch")).sum::<f64>() / n
    };
    let early = exploration(1..=2);
    let late = exploration(4..=10);
    let question_late = (4..=10).map(|it| frac(it, "question")).sum::<f64>() / 7.0;
    let plurality = (4..=10).all(|it| frac(it, "question") > frac(it, "free_form").max(frac(it, "sketch")));
    let detail = format!(
        "free-form+sketch share {early:.3} in iterations 1-2 vs {late:.3} in 4-10; question share {question_late:.3} in 4-10 (most frequent in every one: {plurality})"
    );
    if early > late && question_late > 0.5 && plurality {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg_path = dir.path().join("small.toml");
    std::fs::write(
        &cfg_path,
        "[data]\nn = 400\nd = 8\nm = 6\nclusters = 5\nreduce_to = 200\n\n[train]\nepochs = 3\nepisodes_per_epoch = 40\n\n[eval]\nn_users = 3\nmax_targets = 20\n",
    )
    .map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_mixsearch");
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
        if out.status.success() {
            Ok(())
        } else {
            Err(format!("mixsearch {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
        }
    };
    let cfg = cfg_path.to_str().unwrap();
    let mut hashes = Vec::new();
    let mut tables = Vec::new();
    for tag in ["a", "b"] {
        let cp = dir.path().join(format!("cp-{tag}.json"));
        let res = dir.path().join(format!("res-{tag}"));
        run(&["train", "--config", cfg, "--seed", "99", "--out", cp.to_str().unwrap()])?;
        run(&["eval", "--config", cfg, "--seed", "99", "--checkpoint", cp.to_str().unwrap(), "--out", res.to_str().unwrap()])?;
        hashes.push(Checkpoint::load(&cp).map_err(|e| e.to_string())?.param_hash);
        let mut files = Vec::new();
        for f in ["curves.csv", "auc.csv", "actions.csv"] {
            files.push(std::fs::read(res.join(f)).map_err(|e| e.to_string())?);
        }
        tables.push(files);
    }
    if hashes[0] != hashes[1] {
        return Err(format!("checkpoint hashes differ: {} vs {}", hashes[0], hashes[1]));
    }
    if tables[0] != tables[1] {
        return Err("evaluation CSVs differ between runs".into());
    }
    Ok(format!(
        "two CLI train+eval runs: checkpoint {}..., 3 CSVs byte-identical ({:.1} s)",
        &hashes[0][..12],
        start.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 9

fn criterion_9(run: &MainRun) -> Outcome {
    let ctx = run.experiment.ctx.clone();
    let network = match &run.network {
        Some(n) => n.clone(),
        None => Arc::new(QNetwork::new(NetShape::new(ctx.state_shape()), 1).map_err(|e| e.to_string())?),
    };
    let user_cfg = run.experiment.config.user.clone();
    let targets: Vec<usize> = run.experiment.test_targets().iter().copied().take(10).collect();
    let cp = Checkpoint::new(&network, None, serde_json::json!({}));
    let state = mixsearch_service::AppState::new(ctx.clone(), user_cfg.clone(), Some(&cp)).map_err(|e| e.to_string())?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
        let base = format!("http://{}", listener.local_addr().unwrap());
        tokio::spawn(mixsearch_service::serve(listener, state));
        let client = reqwest::Client::new();
        let mut steps = 0;
        for (k, &target) in targets.iter().enumerate() {
            let seed = 1000 + k as u64;
            let mut offline_user = SimulatedUser::from_config(ctx.catalog(), target, &user_cfg, seed);
            let session = SearchSession::new(ctx.clone(), Some(target)).map_err(|e| e.to_string())?;
            let traj = run_episode(&mut Policy::Rl(network.clone()), session, &mut offline_user).map_err(|e| e.to_string())?;
            let offline: Vec<StepRecord> = traj.records().cloned().collect();

            let created: mixsearch_service::SessionCreated = client
                .post(format!("{base}/sessions"))
                .json(&serde_json::json!({"policy": "rl", "target_id": target}))
                .send()
                .await
                .map_err(|e| e.to_string())?
                .json()
                .await
                .map_err(|e| e.to_string())?;
            let id = created.id;
            let mut user = SimulatedUser::from_config(ctx.catalog(), target, &user_cfg, seed);
            loop {
                let h: mixsearch_service::HistoryView =
                    client.get(format!("{base}/sessions/{id}/history")).send().await.unwrap().json().await.unwrap();
                if h.finished {
                    if h.records != offline {
                        return Err(format!("target {target}: API transcript differs from run_episode"));
                    }
                    steps += h.records.len();
                    break;
                }
                let req: mixsearch_service::RequestView =
                    client.get(format!("{base}/sessions/{id}/request")).send().await.unwrap().json().await.unwrap();
                let page: Vec<usize> = req.top_page.iter().map(|i| i.id).collect();
                let fb = user.respond(&req.request, &page, ctx.catalog());
                let resp = client.post(format!("{base}/sessions/{id}/feedback")).json(&fb).send().await.unwrap();
                if !resp.status().is_success() {
                    return Err(format!("feedback rejected: {}", resp.text().await.unwrap_or_default()));
                }
            }
        }
        Ok(format!("{} targets, {steps} steps: HTTP transcripts equal run_episode bit-for-bit", targets.len()))
    })
}

// ----------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(panic) => Err(format!(
            "panicked: {}",
            panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default()
        )),
    }
}

fn report(n: usize, name: &str, outcome: &Outcome) {
    match outcome {
        Ok(d) => println!("[PASS] criterion {n} {name}: {d}"),
        Err(d) => println!("[FAIL] criterion {n} {name}: {d}"),
    }
}

fn main() {
    // `cargo test -- --list` and filters are harness conventions; honour
    // the listing request so tooling does not run the whole suite.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    // MIXSEARCH_ACCEPTANCE_ONLY=4,5 runs a subset; the default is all nine.
    let only: Option<Vec<usize>> = std::env::var("MIXSEARCH_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|n| n.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut results = Vec::new();
    let mut record = |n: usize, name: &str, f: &dyn Fn() -> Outcome| {
        if wanted(n) {
            let o = f();
            report(n, name, &o);
            results.push(o.is_ok());
        }
    };
    record(1, "relevance oracle", &|| guarded(criterion_1));
    record(2, "pivot binary search", &|| guarded(criterion_2));
    record(3, "free-form oracle", &|| guarded(criterion_3));
    record(4, "gradient check", &|| guarded(criterion_4));
    record(5, "reward sign table", &|| guarded(criterion_5));
    // The trained model behind criteria 6, 7 and 9 is built only if needed.
    let run = [6, 7, 9].into_iter().any(wanted).then(|| {
        let run = catch_unwind(main_run).unwrap_or_else(|_| {
            let experiment = Experiment::synthetic(Config::default()).expect("default experiment");
            MainRun {
                reports: Vec::new(),
                network: None,
                experiment,
                elapsed: Duration::ZERO,
                error: Some("panicked".into()),
            }
        });
        if !run.reports.is_empty() {
            println!("    evaluation finished in {:.1} s", run.elapsed.as_secs_f64());
        }
        run
    });
    let run = run.as_ref();
    record(6, "relative performance", &|| guarded(|| criterion_6(run.unwrap())));
    record(7, "action distribution", &|| guarded(|| criterion_7(run.unwrap())));
    record(8, "determinism", &|| guarded(criterion_8));
    record(9, "offline/online equivalence", &|| guarded(|| criterion_9(run.unwrap())));
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
