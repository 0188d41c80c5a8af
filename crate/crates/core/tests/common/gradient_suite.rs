//! Finite-difference checks (central difference, step 1e-5, relative error
//! < 1e-4) for every loss term, their composites, the encoder stacks and the
//! full two-view pipeline. Each check runs on 20 random instances drawn from
//! [−1, 1]; draws that land within a small margin of a kink (ReLU, hinge,
//! similarity threshold) are not generic points and are redrawn.

use std::sync::Arc;

use dsgrl::augment::{make_views, AugmentMode, AugmenterVars};
use dsgrl::autodiff::{GradCheck, Tape, Tensor, Var};
use dsgrl::encoder::{ffn_forward, gcn_forward, Propagation};
use dsgrl::graph::normalize_adjacency;
use dsgrl::objective::{
    covariance_reg, invariance, invariance_mean_squared, latent_reg, model_reg, orthonormality_reg,
    total_loss, variance_reg, InvarianceForm, LatentReg, LossWeights, ObjectiveOptions,
};
use dsgrl::sparse::Csr;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INSTANCES: usize = 20;
const TOL: f64 = 1e-4;
const MARGIN: f64 = 1e-4;

fn uniform(rng: &mut impl Rng, r: usize, c: usize) -> Tensor {
    let data = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(r, c, data).unwrap()
}

/// Draws instances until `INSTANCES` generic ones have been checked.
fn check_many<G, B>(name: &str, mut draw: G, build: B)
where
    G: FnMut(&mut ChaCha8Rng) -> Option<Vec<Tensor>>,
    B: Fn(&mut Tape, &[Var]) -> dsgrl::Result<Var>,
{
    check_many_with(name, |rng| draw(rng).map(|v| ((), v)), |_: &(), t, v| build(t, v));
}

/// Like [`check_many`], with a fixed per-instance context (graph, inputs).
fn check_many_with<C, G, B>(name: &str, mut draw: G, build: B)
where
    G: FnMut(&mut ChaCha8Rng) -> Option<(C, Vec<Tensor>)>,
    B: Fn(&C, &mut Tape, &[Var]) -> dsgrl::Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
    let mut done = 0;
    for _ in 0..50 * INSTANCES {
        let Some((ctx, inputs)) = draw(&mut rng) else { continue };
        let err = GradCheck::new(|t: &mut Tape, v: &[Var]| build(&ctx, t, v)).run(&inputs).unwrap();
        assert!(err < TOL, "{name}: relative error {err:e} on instance {done}");
        done += 1;
        if done == INSTANCES {
            return;
        }
    }
    panic!("{name}: only {done} generic instances drawn");
}

fn column_std(z: &Tensor, eps: f64) -> Vec<f64> {
    let means = z.column_means();
    (0..z.cols())
        .map(|c| {
            let ss: f64 = (0..z.rows()).map(|r| (z.get(r, c) - means[c]).powi(2)).sum();
            (ss / (z.rows() - 1) as f64 + eps).sqrt()
        })
        .collect()
}

fn hinge_generic(z: &Tensor) -> bool {
    column_std(z, 1e-4).iter().all(|s| (s - 1.0).abs() > MARGIN)
}

/// Random latent matrix whose columns are rescaled so that some sit above
/// and some below unit standard deviation.
fn latent(rng: &mut impl Rng, b: usize, d: usize) -> Tensor {
    let mut z = uniform(rng, b, d);
    let scales: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..4.0)).collect();
    for r in 0..b {
        for (v, s) in z.row_mut(r).iter_mut().zip(&scales) {
            *v *= s;
        }
    }
    z
}

fn pair(rng: &mut ChaCha8Rng) -> Option<Vec<Tensor>> {
    let b = rng.random_range(2..=8);
    let d = rng.random_range(1..=6);
    let (z1, z2) = (latent(rng, b, d), latent(rng, b, d));
    (hinge_generic(&z1) && hinge_generic(&z2)).then(|| vec![z1, z2])
}

pub fn invariance_frobenius() {
    check_many("invariance", pair, |t, v| invariance(t, v[0], v[1]));
}

pub fn invariance_mean_squared_form() {
    check_many("invariance_mean_squared", pair, |t, v| invariance_mean_squared(t, v[0], v[1]));
}

pub fn variance_hinge() {
    check_many(
        "variance_reg",
        |rng| pair(rng).map(|mut v| vec![v.swap_remove(0)]),
        |t, v| variance_reg(t, v[0], 1e-4),
    );
}

pub fn covariance_offdiag() {
    check_many(
        "covariance_reg",
        |rng| {
            let b = rng.random_range(2..=8);
            let d = rng.random_range(2..=6);
            Some(vec![uniform(rng, b, d)])
        },
        |t, v| covariance_reg(t, v[0]),
    );
}

pub fn latent_regularizer() {
    check_many("latent_reg", pair, |t, v| {
        Ok(latent_reg(t, v[0], v[1], 0.7, 1.3, 1e-4)?.weighted)
    });
}

pub fn model_regularizer() {
    check_many(
        "model_reg",
        |rng| {
            let layers = rng.random_range(1..=3);
            let mut widths = vec![rng.random_range(1..=5)];
            widths.extend((0..layers).map(|_| rng.random_range(1..=4)));
            let mut out = Vec::new();
            for _ in 0..2 {
                for l in 0..layers {
                    out.push(uniform(rng, widths[l + 1], widths[l]));
                }
            }
            Some(out)
        },
        |t, v| {
            let h = v.len() / 2;
            model_reg(t, &v[..h], &v[h..])
        },
    );
}

pub fn orthonormality_regularizer() {
    check_many("orthonormality_reg", pair, |t, v| orthonormality_reg(t, v[0], v[1], 0.8));
}

fn weighted() -> LossWeights {
    LossWeights {
        alpha: 0.9,
        beta: 1.1,
        gamma: 0.7,
        lambda: 1.3,
        epsilon: 1e-4,
    }
}

fn total_with(latent_reg: LatentReg, invariance: InvarianceForm) -> impl Fn(&mut Tape, &[Var]) -> dsgrl::Result<Var> {
    move |t, v| {
        let opts = ObjectiveOptions {
            latent_reg,
            invariance,
        };
        let theta = (&v[2..3], &v[3..4]);
        Ok(total_loss(t, v[0], v[1], Some(theta), AugmentMode::Feature, &weighted(), opts)?.total)
    }
}

fn pair_with_theta(rng: &mut ChaCha8Rng) -> Option<Vec<Tensor>> {
    let mut v = pair(rng)?;
    let (o, i) = (rng.random_range(1..=4), rng.random_range(1..=4));
    v.push(uniform(rng, o, i));
    v.push(uniform(rng, o, i));
    Some(v)
}

pub fn total_loss_vic() {
    check_many(
        "total_loss vic",
        pair_with_theta,
        total_with(LatentReg::Vic, InvarianceForm::Frobenius),
    );
    check_many(
        "total_loss vic mean-squared",
        pair_with_theta,
        total_with(LatentReg::Vic, InvarianceForm::MeanSquared),
    );
}

pub fn total_loss_ortho() {
    check_many(
        "total_loss ortho",
        pair_with_theta,
        total_with(LatentReg::Ortho, InvarianceForm::Frobenius),
    );
}

fn random_graph(rng: &mut impl Rng, n: usize) -> Arc<Csr> {
    let mut arcs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.4) {
                arcs.push((i, j));
                arcs.push((j, i));
            }
        }
    }
    Arc::new(normalize_adjacency(&Csr::from_arcs(n, arcs).unwrap()))
}

/// Pre-activations of every hidden GCN layer, by plain tensor algebra.
fn gcn_hidden(adj: &Csr, x: &Tensor, ws: &[Tensor]) -> Vec<Tensor> {
    let mut h = x.clone();
    let mut out = Vec::new();
    for (l, w) in ws.iter().enumerate() {
        let pre = adj.spmm(&h.matmul(w).unwrap()).unwrap();
        h = if l + 1 < ws.len() {
            out.push(pre.clone());
            pre.map(|v| v.max(0.0))
        } else {
            pre
        };
    }
    out
}

fn away_from_zero(ts: &[Tensor]) -> bool {
    ts.iter().all(|t| t.data().iter().all(|v| v.abs() > MARGIN))
}

fn squared_sum(t: &mut Tape, h: Var) -> dsgrl::Result<Var> {
    let sq = t.square(h)?;
    t.sum(sq)
}

pub fn gcn_weights() {
    check_many_with(
        "gcn_forward",
        |rng| {
            let n = rng.random_range(2..=8);
            let layers = rng.random_range(1..=3);
            let mut widths = vec![rng.random_range(1..=5)];
            widths.extend((0..layers).map(|_| rng.random_range(1..=4)));
            let adj = random_graph(rng, n);
            let x = uniform(rng, n, widths[0]);
            let ws: Vec<Tensor> = (0..layers).map(|l| uniform(rng, widths[l], widths[l + 1])).collect();
            away_from_zero(&gcn_hidden(&adj, &x, &ws)).then_some(((adj, x), ws))
        },
        |(adj, x), t, v| {
            let xv = t.constant(x.clone());
            let h = gcn_forward(t, &Propagation::Sparse(Arc::clone(adj)), xv, v)?;
            squared_sum(t, h)
        },
    );
}

pub fn ffn_weights_and_input() {
    check_many(
        "ffn_forward",
        |rng| {
            let n = rng.random_range(1..=6);
            let layers = rng.random_range(1..=3);
            let mut widths = vec![rng.random_range(1..=5)];
            widths.extend((0..layers).map(|_| rng.random_range(1..=4)));
            let x = uniform(rng, n, widths[0]);
            let mut h = x.clone();
            let mut inputs = vec![x];
            for l in 0..layers {
                let w = uniform(rng, widths[l + 1], widths[l]);
                h = h.matmul(&w.transpose()).unwrap();
                if l + 1 < layers {
                    if !away_from_zero(std::slice::from_ref(&h)) {
                        return None;
                    }
                    h = h.map(|v| v.max(0.0));
                }
                inputs.push(w);
            }
            Some(inputs)
        },
        |t, v| {
            let h = ffn_forward(t, v[0], &v[1..])?;
            squared_sum(t, h)
        },
    );
}

/// Value of a propagation step, dense or sparse.
fn propagate(tape: &Tape, p: &Propagation, x: &Tensor) -> Tensor {
    match p {
        Propagation::Sparse(a) => a.spmm(x).unwrap(),
        Propagation::Dense(v) => tape.value(*v).matmul(x).unwrap(),
    }
}

/// Graph inputs plus the parameter tensors of one pipeline draw.
type Instance = ((Arc<Csr>, Tensor), Vec<Tensor>);

struct Layout {
    mode: AugmentMode,
    /// Layer counts of each augmenter stack (features) and of `Φ`.
    aug_layers: usize,
    topo_layers: usize,
    enc_layers: usize,
}

impl Layout {
    #[allow(clippy::type_complexity)]
    fn split<'a, T>(&self, v: &'a [T]) -> (Option<(&'a [T], &'a [T])>, Option<&'a [T]>, &'a [T]) {
        let mut rest = v;
        let theta = self.mode.uses_features().then(|| {
            let (a, r) = rest.split_at(self.aug_layers);
            let (b, r) = r.split_at(self.aug_layers);
            rest = r;
            (a, b)
        });
        let phi = self.mode.uses_topology().then(|| {
            let (p, r) = rest.split_at(self.topo_layers);
            rest = r;
            p
        });
        (theta, phi, rest)
    }

    /// Records views, encoder and the total loss.
    fn loss(&self, adj: &Arc<Csr>, x: &Tensor, tape: &mut Tape, v: &[Var]) -> dsgrl::Result<(Var, Var, Var)> {
        let (theta, phi, enc) = self.split(v);
        let xv = tape.constant(x.clone());
        let aug = AugmenterVars {
            f1: theta.map(|t| t.0.to_vec()),
            f2: theta.map(|t| t.1.to_vec()),
            topo: phi.map(<[Var]>::to_vec),
            cached_topology: None,
        };
        let views = make_views(tape, adj, xv, self.mode, &aug)?;
        let z1 = gcn_forward(tape, &views.view1.adjacency, views.view1.features, enc)?;
        let z2 = gcn_forward(tape, &views.view2.adjacency, views.view2.features, enc)?;
        let total = total_loss(tape, z1, z2, theta, self.mode, &weighted(), ObjectiveOptions::default())?.total;
        Ok((total, z1, z2))
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Option<Instance> {
        let n = rng.random_range(3..=7);
        let f = rng.random_range(1..=4);
        let d1 = rng.random_range(1..=4);
        let d = rng.random_range(1..=3);
        let adj = random_graph(rng, n);
        let x = uniform(rng, n, f);
        let mut inputs = Vec::new();
        let enc_in = if self.mode.uses_features() {
            let mut widths = vec![f];
            widths.extend((1..self.aug_layers).map(|_| rng.random_range(1..=4)));
            widths.push(d1);
            for _ in 0..2 {
                for l in 0..self.aug_layers {
                    inputs.push(uniform(rng, widths[l + 1], widths[l]));
                }
            }
            d1
        } else {
            f
        };
        if self.mode.uses_topology() {
            let mut w = f;
            for l in 0..self.topo_layers {
                let out = if l + 1 == self.topo_layers { d1 } else { rng.random_range(1..=4) };
                inputs.push(uniform(rng, w, out));
                w = out;
            }
        }
        let mut w = enc_in;
        for l in 0..self.enc_layers {
            let out = if l + 1 == self.enc_layers { d } else { rng.random_range(2..=4) };
            inputs.push(uniform(rng, w, out));
            w = out;
        }
        self.generic(&adj, &x, &inputs).then_some(((adj, x), inputs))
    }

    /// Every kink (ReLU inputs, hinge, similarity threshold, `|·|` in the
    /// degree) is at least a margin away.
    fn generic(&self, adj: &Arc<Csr>, x: &Tensor, inputs: &[Tensor]) -> bool {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let (theta, phi, _) = self.split(&vars);
        let (theta_t, phi_t, enc_t) = self.split(inputs);

        let mut feature_views = vec![x.clone(), x.clone()];
        if let Some((t1, t2)) = theta_t {
            for (slot, ws) in feature_views.iter_mut().zip([t1, t2]) {
                let mut h = x.clone();
                for (l, w) in ws.iter().enumerate() {
                    h = h.matmul(&w.transpose()).unwrap();
                    if l + 1 < ws.len() {
                        if !away_from_zero(std::slice::from_ref(&h)) {
                            return false;
                        }
                        h = h.map(|v| v.max(0.0));
                    }
                }
                *slot = h;
            }
        }
        if let Some(ws) = phi_t {
            if !away_from_zero(&gcn_hidden(adj, x, ws)) {
                return false;
            }
            let mut h = x.clone();
            for (l, w) in ws.iter().enumerate() {
                h = adj.spmm(&h.matmul(w).unwrap()).unwrap();
                if l + 1 < ws.len() {
                    h = h.map(|v| v.max(0.0));
                }
            }
            let s = h.matmul(&h.transpose()).unwrap();
            for i in 0..s.rows() {
                let mean = s.row(i).iter().sum::<f64>() / s.cols() as f64;
                if s.row(i).iter().any(|v| (v - mean).abs() <= 1e-6) {
                    return false;
                }
            }
        }

        let xv = tape.constant(x.clone());
        let aug = AugmenterVars {
            f1: theta.map(|t| t.0.to_vec()),
            f2: theta.map(|t| t.1.to_vec()),
            topo: phi.map(<[Var]>::to_vec),
            cached_topology: None,
        };
        let views = make_views(&mut tape, adj, xv, self.mode, &aug).unwrap();
        if let Some(a) = views.high_order {
            let a = tape.value(a);
            let n = a.rows();
            for i in 0..n {
                for j in 0..n {
                    let v = 0.5 * (a.get(i, j) + a.get(j, i)) + if i == j { 1.0 } else { 0.0 };
                    if v != 0.0 && v.abs() <= MARGIN {
                        return false;
                    }
                }
            }
        }
        let enc_w = enc_t;
        for (view, xs) in [&views.view1, &views.view2].into_iter().zip(&feature_views) {
            let mut h = xs.clone();
            for (l, w) in enc_w.iter().enumerate() {
                h = propagate(&tape, &view.adjacency, &h.matmul(w).unwrap());
                if l + 1 < enc_w.len() {
                    if !away_from_zero(std::slice::from_ref(&h)) {
                        return false;
                    }
                    h = h.map(|v| v.max(0.0));
                }
            }
            if h.rows() < 2 || !hinge_generic(&h) {
                return false;
            }
        }
        true
    }
}

fn pipeline(name: &str, layout: Layout) {
    check_many_with(
        name,
        |rng| layout.draw(rng),
        |(adj, x), t, v| Ok(layout.loss(adj, x, t, v)?.0),
    );
}

pub fn pipeline_feature_mode() {
    pipeline(
        "feature pipeline",
        Layout {
            mode: AugmentMode::Feature,
            aug_layers: 2,
            topo_layers: 0,
            enc_layers: 2,
        },
    );
}

pub fn pipeline_topology_mode_reaches_phi() {
    pipeline(
        "topology pipeline",
        Layout {
            mode: AugmentMode::Topology,
            aug_layers: 0,
            topo_layers: 2,
            enc_layers: 2,
        },
    );
}

pub fn pipeline_combined_mode() {
    pipeline(
        "combined pipeline",
        Layout {
            mode: AugmentMode::Combined,
            aug_layers: 1,
            topo_layers: 2,
            enc_layers: 2,
        },
    );
}

/// Every check, by name.
pub const ALL: &[(&str, fn())] = &[
    ("invariance_frobenius", invariance_frobenius),
    ("invariance_mean_squared_form", invariance_mean_squared_form),
    ("variance_hinge", variance_hinge),
    ("covariance_offdiag", covariance_offdiag),
    ("latent_regularizer", latent_regularizer),
    ("model_regularizer", model_regularizer),
    ("orthonormality_regularizer", orthonormality_regularizer),
    ("total_loss_vic", total_loss_vic),
    ("total_loss_ortho", total_loss_ortho),
    ("gcn_weights", gcn_weights),
    ("ffn_weights_and_input", ffn_weights_and_input),
    ("pipeline_feature_mode", pipeline_feature_mode),
    ("pipeline_topology_mode_reaches_phi", pipeline_topology_mode_reaches_phi),
    ("pipeline_combined_mode", pipeline_combined_mode),
];
