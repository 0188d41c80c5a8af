//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 1–7 decide the exit status. Criterion 8 needs the PubMed
//! citation graph on disk (`DSGRL_PUBMED_DIR` with `edges.tsv`,
//! `features.csv` or `features.dsgf`, `labels.tsv`); without it the line
//! reads SKIP, and its outcome never changes the exit status.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use dsgrl::augment::{build_high_order_network, normalize_high_order, AugmentMode};
use dsgrl::autodiff::{Tape, Tensor, Var};
use dsgrl::eval::{collapse_metrics, run_protocol, ProbeConfig, ProtocolReport};
use dsgrl::graph::io::{encode_features_binary, load_graph, LoadOptions};
use dsgrl::graph::{
    generate_sbm, make_splits, make_stratified_splits, normalize_adjacency, Graph, SbmConfig, Split,
    DEFAULT_SPLIT_RATIOS,
};
use dsgrl::objective::{
    covariance_reg, invariance, latent_reg, model_reg, orthonormality_reg, total_loss, variance_reg,
    LossWeights, ObjectiveOptions,
};
use dsgrl::trainer::{embed, load_checkpoint, save_checkpoint, train, AdamConfig, TrainConfig, TrainOutcome};

type Outcome = Result<String, String>;

struct Criterion {
    id: u8,
    name: &'static str,
    budget: Duration,
    optional: bool,
    run: fn() -> Option<Outcome>,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{name}: got {got}, want {want}"))
}

fn exact(name: &str, got: f64, want: f64) -> Result<(), String> {
    ensure(got == want, || format!("{name}: got {got}, want exactly {want}"))
}

fn scalar(f: impl FnOnce(&mut Tape) -> dsgrl::Result<Var>) -> f64 {
    let mut tape = Tape::new();
    let v = f(&mut tape).unwrap();
    tape.value(v).item()
}

fn t(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows)
}

// ---------------------------------------------------------------- 1

fn loss_terms() -> Option<Outcome> {
    Some((|| {
        let inv = |a: Tensor, b: Tensor| {
            scalar(|tp| {
                let (x, y) = (tp.constant(a), tp.constant(b));
                invariance(tp, x, y)
            })
        };
        exact("inv(Z, Z)", inv(t(&[&[1.0, 2.0], &[3.0, 4.0]]), t(&[&[1.0, 2.0], &[3.0, 4.0]])), 0.0)?;
        close("inv([[1,0]], [[0,1]])", inv(t(&[&[1.0, 0.0]]), t(&[&[0.0, 1.0]])), 2f64.sqrt(), 1e-10)?;

        let var = |z: Tensor| {
            scalar(|tp| {
                let x = tp.constant(z);
                variance_reg(tp, x, 1e-4)
            })
        };
        close("v([[0,0],[2,0]])", var(t(&[&[0.0, 0.0], &[2.0, 0.0]])), 0.495, 1e-10)?;
        exact("v(high variance)", var(t(&[&[0.0, 3.0], &[2.0, -1.0], &[-2.0, 0.0]])), 0.0)?;

        let cov = |z: Tensor| {
            scalar(|tp| {
                let x = tp.constant(z);
                covariance_reg(tp, x)
            })
        };
        exact("c([[1,0],[-1,0]])", cov(t(&[&[1.0, 0.0], &[-1.0, 0.0]])), 0.0)?;
        close("c([[1,1],[-1,-1]])", cov(t(&[&[1.0, 1.0], &[-1.0, -1.0]])), 4.0, 1e-10)?;

        let latent = |z1: Tensor, z2: Tensor, beta: f64, gamma: f64| {
            scalar(|tp| {
                let (a, b) = (tp.constant(z1), tp.constant(z2));
                Ok(latent_reg(tp, a, b, beta, gamma, 1e-4)?.weighted)
            })
        };
        let noisy = t(&[&[0.3, 0.0], &[0.3, 0.0]]);
        exact("R_Z with β=γ=0", latent(noisy.clone(), noisy, 0.0, 0.0), 0.0)?;
        let white = t(&[&[1.0, 1.0], &[1.0, -1.0], &[-1.0, 1.0], &[-1.0, -1.0]]);
        exact("R_Z unit-variance uncorrelated", latent(white.clone(), white, 1.0, 1.0), 0.0)?;

        let model = |w1: Tensor, w2: Tensor| {
            scalar(|tp| {
                let (a, b) = (tp.constant(w1), tp.constant(w2));
                model_reg(tp, &[a], &[b])
            })
        };
        exact("R_Θ orthonormal stacking", model(t(&[&[1.0, 0.0]]), t(&[&[0.0, 1.0]])), 0.0)?;
        close("R_Θ equal rows", model(t(&[&[1.0, 0.0]]), t(&[&[1.0, 0.0]])), 2f64.sqrt(), 1e-10)?;

        let ortho = |z1: Tensor, z2: Tensor| {
            scalar(|tp| {
                let (a, b) = (tp.constant(z1), tp.constant(z2));
                orthonormality_reg(tp, a, b, 1.0)
            })
        };
        let eye = t(&[&[1.0, 0.0], &[0.0, 1.0]]);
        exact("orthonormal rows", ortho(eye.clone(), eye), 0.0)?;
        let twin = t(&[&[0.6, 0.8], &[0.6, 0.8]]);
        close("identical unit rows", ortho(twin.clone(), twin), 2.0 * 2f64.sqrt(), 1e-10)?;

        // Constant Z, zero augmenters of shape 3x2: inv 0, each v-term
        // 1 − √ε = 0.99, c-terms 0, model term ‖0 − I₆‖_F = √6.
        let total = |w: LossWeights| {
            let mut tp = Tape::new();
            let z = tp.constant(Tensor::full(4, 2, 0.25));
            let th = [tp.constant(Tensor::zeros(3, 2))];
            let th2 = [tp.constant(Tensor::zeros(3, 2))];
            let l = total_loss(&mut tp, z, z, Some((&th, &th2)), AugmentMode::Feature, &w, ObjectiveOptions::default())
                .unwrap();
            (tp.value(l.total).item(), l.breakdown)
        };
        let (value, bd) = total(LossWeights::default());
        close("total composition", value, 2.0 * 0.99 + 6f64.sqrt(), 1e-10)?;
        close("v-term", bd.var1, 0.99, 1e-10)?;
        exact("c-term", bd.cov1, 0.0)?;
        close("recompose", bd.recompose(&LossWeights::default()), value, 1e-12)?;
        let zero = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            lambda: 0.0,
            ..LossWeights::default()
        };
        exact("total with zero weights", total(zero).0, 0.0)?;
        Ok("every example within 1e-10, trivial cases exact".into())
    })())
}

// ---------------------------------------------------------------- 2, 3

fn run_suite(checks: &[(&str, fn())]) -> Outcome {
    let mut failed = Vec::new();
    for (name, check) in checks {
        if catch_unwind(*check).is_err() {
            failed.push(*name);
        }
    }
    if failed.is_empty() {
        Ok(format!("{} checks passed", checks.len()))
    } else {
        Err(format!("failed: {}", failed.join(", ")))
    }
}

fn gradients() -> Option<Outcome> {
    Some(run_suite(common::gradient_suite::ALL).map(|s| format!("{s}, 20 generic instances each")))
}

fn high_order() -> Option<Outcome> {
    Some(run_suite(&[
        ("random H", common::high_order_oracle::matches_brute_force_on_50_random_inputs),
        ("worked example", common::high_order_oracle::documented_example),
    ]))
}

// ---------------------------------------------------------------- 4, 5

/// The block-model setup: 3 blocks of 50, p_in 0.1, p_out 0.01, noise 0.5.
fn sbm() -> Graph {
    generate_sbm(&SbmConfig::default()).unwrap()
}

/// Configuration used for every block-model criterion. The loss weights
/// are the defaults (all ones); see the README for why the widths and the
/// learning rate differ from the library defaults.
fn sbm_config() -> TrainConfig {
    TrainConfig {
        mode: AugmentMode::Feature,
        embed_dim: 2,
        aug_dim: 64,
        hidden: Some(256),
        optimizer: AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
        epochs: 200,
        seed: 0,
        ..TrainConfig::default()
    }
}

fn no_latent_reg(cfg: TrainConfig) -> TrainConfig {
    TrainConfig {
        weights: LossWeights {
            beta: 0.0,
            gamma: 0.0,
            ..cfg.weights
        },
        ..cfg
    }
}

fn collapse() -> Option<Outcome> {
    Some((|| {
        let g = sbm();
        let trained = train(&g, &sbm_config()).map_err(|e| e.to_string())?;
        let ablated = train(&g, &no_latent_reg(sbm_config())).map_err(|e| e.to_string())?;
        let std_t = collapse_metrics(&trained.embeddings).map_err(|e| e.to_string())?.mean_dim_std;
        let std_a = collapse_metrics(&ablated.embeddings).map_err(|e| e.to_string())?.mean_dim_std;
        let msg = format!("mean_dim_std {std_t:.3} with defaults, {std_a:.4} with β=γ=0");
        ensure(std_t >= 0.5 && std_a < 0.1, || format!("{msg} (need ≥ 0.5 and < 0.1)"))?;
        Ok(msg)
    })())
}

fn sbm_splits(g: &Graph) -> Vec<Split> {
    let labels = g.labels().unwrap();
    (0..10).map(|s| make_stratified_splits(labels, DEFAULT_SPLIT_RATIOS, s).unwrap()).collect()
}

fn protocol(g: &Graph, out: &TrainOutcome, splits: &[Split]) -> Result<ProtocolReport, String> {
    run_protocol(&out.embeddings, g.labels().unwrap(), splits, &ProbeConfig::default()).map_err(|e| e.to_string())
}

fn separation() -> Option<Outcome> {
    Some((|| {
        let g = sbm();
        let splits = sbm_splits(&g);
        let trained = train(&g, &sbm_config()).map_err(|e| e.to_string())?;
        let random = train(
            &g,
            &TrainConfig {
                untrained: true,
                ..sbm_config()
            },
        )
        .map_err(|e| e.to_string())?;
        let acc_t = protocol(&g, &trained, &splits)?.accuracy;
        let acc_r = protocol(&g, &random, &splits)?.accuracy;
        let gap = 100.0 * (acc_t.mean - acc_r.mean);
        let msg = format!(
            "trained {:.2} ± {:.2}, Random-F {:.2} ± {:.2}, gap {gap:.2} points",
            100.0 * acc_t.mean,
            100.0 * acc_t.std,
            100.0 * acc_r.mean,
            100.0 * acc_r.std
        );
        ensure(acc_t.mean >= 0.90, || format!("{msg} (need trained ≥ 90)"))?;
        ensure(gap >= 5.0, || format!("{msg} (need gap ≥ 5)"))?;
        Ok(msg)
    })())
}

// ---------------------------------------------------------------- 6

fn mode_parity() -> Option<Outcome> {
    Some((|| {
        let g = sbm();
        let a_hat = Arc::new(normalize_adjacency(g.adjacency()));
        let topo = TrainConfig {
            mode: AugmentMode::Topology,
            ..sbm_config()
        };
        let full = train(&g, &topo).map_err(|e| e.to_string())?;
        ensure(full.history.len() == 200, || "topology run stopped early".into())?;

        let one = train(&g, &TrainConfig { epochs: 1, ..topo }).map_err(|e| e.to_string())?;
        let a_prime = one
            .checkpoint
            .model
            .high_order_network(&a_hat, g.features())
            .map_err(|e| e.to_string())?
            .ok_or("topology model has no augmenter")?;
        ensure(a_prime.nnz() > 0, || "A′ is empty after epoch 1".into())?;

        let combined = train(
            &g,
            &TrainConfig {
                mode: AugmentMode::Combined,
                epochs: 1,
                ..sbm_config()
            },
        )
        .map_err(|e| e.to_string())?;
        let model = &combined.checkpoint.model;
        let views = model.views(&a_hat, g.features()).map_err(|e| e.to_string())?;
        let aug = model.features.as_ref().ok_or("combined model lacks feature augmenters")?;
        let (x1, x2) = aug.augment(g.features()).map_err(|e| e.to_string())?;
        let h = model
            .topology
            .as_ref()
            .ok_or("combined model lacks a topology augmenter")?
            .high_order_features(&a_hat, g.features())
            .map_err(|e| e.to_string())?;
        let a2 = normalize_high_order(&build_high_order_network(&h));
        ensure(*views.adj1 == *a_hat, || "view 1 adjacency is not Â".into())?;
        ensure(views.x1 == x1 && views.x2 == x2, || "view features are not (X₁, X₂)".into())?;
        ensure(*views.adj2 == a2, || "view 2 adjacency is not the normalized A′".into())?;
        ensure(x1 != x2, || "the two feature views coincide".into())?;
        Ok(format!(
            "topology: 200 epochs, A′ has {} entries after epoch 1; combined views ((Â, X₁), (Â′, X₂))",
            a_prime.nnz()
        ))
    })())
}

// ---------------------------------------------------------------- 7

fn determinism() -> Option<Outcome> {
    Some((|| {
        let g = sbm();
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = TrainConfig {
            mode: AugmentMode::Combined,
            epochs: 20,
            ..sbm_config()
        };
        let a = train(&g, &cfg).map_err(|e| e.to_string())?;
        let path = dir.path().join("model.dsgc");
        save_checkpoint(&path, &a.checkpoint).map_err(|e| e.to_string())?;
        let loaded = load_checkpoint(&path).map_err(|e| e.to_string())?;
        let z = embed(&g, &loaded).map_err(|e| e.to_string())?;
        let same_bits = z.data().iter().zip(a.embeddings.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same_bits, || "reloaded embeddings differ".into())?;

        let b = train(&g, &cfg).map_err(|e| e.to_string())?;
        let (fa, fb) = (encode_features_binary(&a.embeddings), encode_features_binary(&b.embeddings));
        ensure(fa == fb, || "two seeded runs wrote different embedding files".into())?;
        Ok(format!("bitwise reload; identical {}-byte embedding files", fa.len()))
    })())
}

// ---------------------------------------------------------------- 8

fn pubmed_dir() -> Option<PathBuf> {
    std::env::var_os("DSGRL_PUBMED_DIR").map(PathBuf::from)
}

fn feature_file(dir: &Path) -> PathBuf {
    let bin = dir.join("features.dsgf");
    if bin.exists() {
        bin
    } else {
        dir.join("features.csv")
    }
}

fn pubmed() -> Option<Outcome> {
    let dir = pubmed_dir()?;
    Some((|| {
        let g = load_graph(
            &dir.join("edges.tsv"),
            &feature_file(&dir),
            Some(&dir.join("labels.tsv")),
            LoadOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        let out = train(&g, &TrainConfig::default()).map_err(|e| e.to_string())?;
        let splits: Vec<Split> = (0..10).map(|s| make_splits(g.n(), DEFAULT_SPLIT_RATIOS, s).unwrap()).collect();
        let acc = protocol(&g, &out, &splits)?.accuracy;
        let msg = format!("{} nodes, accuracy {:.2} ± {:.2}", g.n(), 100.0 * acc.mean, 100.0 * acc.std);
        ensure(acc.mean >= 0.78, || format!("{msg} (need ≥ 78)"))?;
        Ok(msg)
    })())
}

fn main() {
    // Only our own lines on stdout; failing checks report through them.
    std::panic::set_hook(Box::new(|_| {}));
    let criteria = [
        Criterion { id: 1, name: "loss-term exactness", budget: Duration::from_secs(1), optional: false, run: loss_terms },
        Criterion { id: 2, name: "gradient suite", budget: Duration::from_secs(30), optional: false, run: gradients },
        Criterion { id: 3, name: "high-order network oracle", budget: Duration::from_secs(5), optional: false, run: high_order },
        Criterion { id: 4, name: "collapse ablation", budget: Duration::from_secs(120), optional: false, run: collapse },
        Criterion { id: 5, name: "separation quality", budget: Duration::from_secs(300), optional: false, run: separation },
        Criterion { id: 6, name: "mode parity", budget: Duration::from_secs(120), optional: false, run: mode_parity },
        Criterion { id: 7, name: "determinism and persistence", budget: Duration::from_secs(60), optional: false, run: determinism },
        Criterion { id: 8, name: "PubMed linear probe (optional)", budget: Duration::from_secs(1800), optional: true, run: pubmed },
    ];
    let mut required_failures = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|_| Some(Err("panicked".into())));
        let took = start.elapsed();
        let (status, detail) = match result {
            None => ("SKIP", "set DSGRL_PUBMED_DIR to run".to_string()),
            Some(Ok(msg)) if took <= c.budget => ("PASS", msg),
            Some(Ok(msg)) => ("FAIL", format!("{msg}; over the {:?} budget", c.budget)),
            Some(Err(msg)) => ("FAIL", msg),
        };
        if status == "FAIL" && !c.optional {
            required_failures += 1;
        }
        println!("criterion {} [{}] {status} ({:.2}s): {detail}", c.id, c.name, took.as_secs_f64());
    }
    if required_failures > 0 {
        println!("{required_failures} required criteria failed");
        std::process::exit(1);
    }
}
