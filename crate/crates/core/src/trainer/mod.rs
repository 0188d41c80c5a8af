//! Joint optimization of augmenters and encoder, embedding export and
//! checkpoints.

mod adam;
mod checkpoint;
mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Batch, TrainConfig};

use crate::augment::{
    build_high_order_network, make_views, AugmentMode, AugmenterVars, FeatureAugmenter, TopologyAugmenter,
};
use crate::autodiff::{Tape, Tensor, Var};
use crate::encoder::{gcn_forward, readout, readout_tensor, FfnStack, GcnStack, Propagation};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, Graph, GraphBatch};
use crate::objective::{total_loss, LossBreakdown};
use crate::sparse::Csr;

/// All trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub encoder: GcnStack,
    pub features: Option<FeatureAugmenter>,
    pub topology: Option<TopologyAugmenter>,
}

/// Value-level views `((A₁, X₁), (A₂, X₂))`.
#[derive(Clone, Debug)]
pub struct ViewTensors {
    pub adj1: Arc<Csr>,
    pub x1: Tensor,
    pub adj2: Arc<Csr>,
    pub x2: Tensor,
}

impl Model {
    /// Seeded initialization for inputs of width `input_dim`.
    pub fn init(cfg: &TrainConfig, input_dim: usize) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let features = if cfg.mode.uses_features() {
            let widths = cfg.augmenter_widths(input_dim);
            let f1 = FfnStack::glorot(&widths, &mut rng)?;
            let f2 = FfnStack::glorot(&widths, &mut rng)?;
            Some(FeatureAugmenter::new(f1, f2)?)
        } else {
            None
        };
        let topology = if cfg.mode.uses_topology() {
            Some(TopologyAugmenter::new(GcnStack::glorot(&cfg.topology_widths(input_dim), &mut rng)?))
        } else {
            None
        };
        let enc_in = if cfg.mode.uses_features() { cfg.aug_dim } else { input_dim };
        let encoder = GcnStack::glorot(&cfg.encoder_widths(enc_in), &mut rng)?;
        Ok(Self {
            encoder,
            features,
            topology,
        })
    }

    pub fn mode(&self) -> AugmentMode {
        match (&self.features, &self.topology) {
            (Some(_), Some(_)) => AugmentMode::Combined,
            (None, Some(_)) => AugmentMode::Topology,
            _ => AugmentMode::Feature,
        }
    }

    /// Width of the node features the model expects.
    pub fn input_dim(&self) -> usize {
        match (&self.features, &self.topology) {
            (Some(f), _) => f.f1.in_dim(),
            (None, Some(t)) => t.gnn.in_dim(),
            (None, None) => self.encoder.in_dim(),
        }
    }

    /// Parameter tensors keyed `encoder.{l}`, `f1.{l}`, `f2.{l}`, `topo.{l}`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut groups: Vec<(&str, &[Tensor])> = vec![("encoder", self.encoder.weights())];
        if let Some(f) = &self.features {
            groups.push(("f1", f.f1.weights()));
            groups.push(("f2", f.f2.weights()));
        }
        if let Some(t) = &self.topology {
            groups.push(("topo", t.gnn.weights()));
        }
        groups
            .into_iter()
            .flat_map(|(role, ws)| ws.iter().enumerate().map(move |(l, w)| (format!("{role}.{l}"), w)))
            .collect()
    }

    /// Inverse of [`Model::named_tensors`]; the tensor set must match `mode`
    /// exactly.
    pub fn from_named(mode: AugmentMode, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut groups: [(&str, Vec<(usize, Tensor)>); 4] =
            [("encoder", vec![]), ("f1", vec![]), ("f2", vec![]), ("topo", vec![])];
        for (name, t) in tensors {
            let parsed = name
                .split_once('.')
                .and_then(|(role, l)| Some((role, l.parse::<usize>().ok()?)));
            let Some((role, l)) = parsed else {
                return Err(Error::Format(format!("bad tensor name `{name}`")));
            };
            let Some(g) = groups.iter_mut().find(|(r, _)| *r == role) else {
                return Err(Error::Format(format!("unknown tensor role `{role}`")));
            };
            g.1.push((l, t));
        }
        let mut stacks = groups.map(|(role, mut ws)| {
            ws.sort_by_key(|(l, _)| *l);
            let contiguous = ws.iter().enumerate().all(|(i, (l, _))| i == *l);
            (role, contiguous, ws.into_iter().map(|(_, t)| t).collect::<Vec<_>>())
        });
        if let Some((role, ..)) = stacks.iter().find(|(_, ok, _)| !ok) {
            return Err(Error::Format(format!("`{role}` layers are not numbered 0..L")));
        }
        let expect = [true, mode.uses_features(), mode.uses_features(), mode.uses_topology()];
        for ((role, _, ws), want) in stacks.iter().zip(expect) {
            if ws.is_empty() == want {
                return Err(Error::Consistency(format!(
                    "{mode:?} mode {} `{role}` tensors",
                    if want { "requires" } else { "does not use" }
                )));
            }
        }
        let take = |i: usize, s: &mut [(&str, bool, Vec<Tensor>)]| std::mem::take(&mut s[i].2);
        let encoder = GcnStack::new(take(0, &mut stacks))?;
        let features = if mode.uses_features() {
            let f1 = FfnStack::new(take(1, &mut stacks))?;
            let f2 = FfnStack::new(take(2, &mut stacks))?;
            Some(FeatureAugmenter::new(f1, f2)?)
        } else {
            None
        };
        let topology = if mode.uses_topology() {
            Some(TopologyAugmenter::new(GcnStack::new(take(3, &mut stacks))?))
        } else {
            None
        };
        let model = Self {
            encoder,
            features,
            topology,
        };
        model.check_widths()?;
        Ok(model)
    }

    fn check_widths(&self) -> Result<()> {
        let enc_in = self.encoder.in_dim();
        let want = match &self.features {
            Some(f) => f.out_dim(),
            None => self.input_dim(),
        };
        if enc_in != want {
            return Err(Error::Consistency(format!(
                "encoder expects width {enc_in} but its input has width {want}"
            )));
        }
        if let (Some(f), Some(t)) = (&self.features, &self.topology) {
            if f.f1.in_dim() != t.gnn.in_dim() {
                return Err(Error::Consistency(format!(
                    "feature augmenter reads width {} but topology augmenter reads {}",
                    f.f1.in_dim(),
                    t.gnn.in_dim()
                )));
            }
        }
        Ok(())
    }

    fn params(&self) -> Vec<Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t.clone()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.encoder.weights_mut().iter_mut().collect();
        if let Some(f) = &mut self.features {
            out.extend(f.f1.weights_mut().iter_mut());
            out.extend(f.f2.weights_mut().iter_mut());
        }
        if let Some(t) = &mut self.topology {
            out.extend(t.gnn.weights_mut().iter_mut());
        }
        out
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Config(format!(
                "graph has {} feature columns but the model expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Raw high-order network `A′` (before symmetrization), if the model
    /// has a topology augmenter.
    pub fn high_order_network(&self, a_hat: &Arc<Csr>, x: &Tensor) -> Result<Option<Csr>> {
        self.check_input(x)?;
        match &self.topology {
            Some(t) => Ok(Some(build_high_order_network(&t.high_order_features(a_hat, x)?))),
            None => Ok(None),
        }
    }

    /// The two encoder inputs for normalized adjacency `a_hat`.
    pub fn views(&self, a_hat: &Arc<Csr>, x: &Tensor) -> Result<ViewTensors> {
        self.check_input(x)?;
        let (x1, x2) = match &self.features {
            Some(f) => f.augment(x)?,
            None => (x.clone(), x.clone()),
        };
        let adj2 = match &self.topology {
            Some(t) => Arc::new(t.propagation(a_hat, x)?),
            None => Arc::clone(a_hat),
        };
        Ok(ViewTensors {
            adj1: Arc::clone(a_hat),
            x1,
            adj2,
            x2,
        })
    }

    /// `(Z₁, Z₂)` per node.
    pub fn encode_views(&self, a_hat: &Arc<Csr>, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let v = self.views(a_hat, x)?;
        Ok((self.encoder.forward(&v.adj1, &v.x1)?, self.encoder.forward(&v.adj2, &v.x2)?))
    }

    /// `Z = [Z₁ | Z₂]` per node.
    pub fn embed_nodes(&self, g: &Graph) -> Result<Tensor> {
        let a_hat = Arc::new(normalize_adjacency(g.adjacency()));
        let (z1, z2) = self.encode_views(&a_hat, g.features())?;
        z1.hstack(&z2)
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Final embeddings, identical to [`embed`] on the returned checkpoint.
    pub embeddings: Tensor,
    /// Loss breakdown per epoch, averaged over that epoch's steps.
    pub history: Vec<LossBreakdown>,
}

/// Node-level training.
pub fn train(g: &Graph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let outcome = run(g, None, cfg)?;
    let embeddings = embed(g, &outcome.0)?;
    Ok(TrainOutcome {
        checkpoint: outcome.0,
        embeddings,
        history: outcome.1,
    })
}

/// Graph-level training: the loss is computed on pooled per-graph
/// embeddings.
pub fn train_graphs(batch: &GraphBatch, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let outcome = run(batch.merged(), Some(batch.graph_ids()), cfg)?;
    let embeddings = embed_graphs(batch, &outcome.0)?;
    Ok(TrainOutcome {
        checkpoint: outcome.0,
        embeddings,
        history: outcome.1,
    })
}

/// Node embeddings `[Z₁ | Z₂]` from a checkpoint.
pub fn embed(g: &Graph, ckpt: &Checkpoint) -> Result<Tensor> {
    ckpt.model.embed_nodes(g)
}

/// One pooled embedding row per graph.
pub fn embed_graphs(batch: &GraphBatch, ckpt: &Checkpoint) -> Result<Tensor> {
    let z = ckpt.model.embed_nodes(batch.merged())?;
    readout_tensor(&z, batch.graph_ids(), ckpt.config.readout)
}

fn run(g: &Graph, graph_ids: Option<&[usize]>, cfg: &TrainConfig) -> Result<(Checkpoint, Vec<LossBreakdown>)> {
    cfg.validate()?;
    let mut model = Model::init(cfg, g.f())?;
    model.check_input(g.features())?;
    let epochs = if cfg.untrained { 0 } else { cfg.epochs };

    let mut log = match &cfg.log {
        Some(path) => {
            let f = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(f);
            writeln!(w, "{}", LossBreakdown::CSV_HEADER).map_err(|e| Error::io(path, e))?;
            Some((path, w))
        }
        None => None,
    };

    let a_hat = Arc::new(normalize_adjacency(g.adjacency()));
    let x = g.features();
    let n_rows = graph_ids.map_or(g.n(), |ids| ids.iter().max().map_or(0, |m| m + 1));
    let mut order: Vec<usize> = (0..n_rows).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut state = AdamState::new(&model.params());
    let mut cached: Option<Arc<Csr>> = None;
    let mut history = Vec::with_capacity(epochs);
    let mut step = 0usize;
    for epoch in 0..epochs {
        let batches: Vec<Option<Vec<usize>>> = match cfg.batch {
            Batch::Size(b) if b < n_rows => {
                order.shuffle(&mut rng);
                let mut chunks: Vec<Vec<usize>> = order.chunks(b).map(<[usize]>::to_vec).collect();
                if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() < 2) {
                    let tail = chunks.pop().unwrap();
                    chunks.last_mut().unwrap().extend(tail);
                }
                chunks.into_iter().map(Some).collect()
            }
            _ => vec![None],
        };
        let mut sum = LossBreakdown::default();
        for rows in &batches {
            let refresh = step.is_multiple_of(cfg.topology_refresh);
            let use_cache = if refresh { None } else { cached.clone() };
            let (breakdown, grads, fresh) = step_grads(&model, cfg, &a_hat, x, graph_ids, rows.as_deref(), use_cache)?;
            if let Some(term) = breakdown.first_non_finite() {
                return Err(Error::NonFinite { term, epoch });
            }
            if cfg.topology_refresh > 1 && fresh.is_some() {
                cached = fresh;
            }
            let mut params = model.params();
            adam_step(&mut params, &grads, &mut state, &cfg.optimizer)?;
            for (dst, src) in model.params_mut().into_iter().zip(params) {
                *dst = src;
            }
            accumulate(&mut sum, &breakdown);
            step += 1;
        }
        let mean = scale_breakdown(&sum, 1.0 / batches.len() as f64);
        if let Some((path, w)) = &mut log {
            writeln!(w, "{}", mean.csv_row(epoch)).map_err(|e| Error::io(*path, e))?;
        }
        history.push(mean);
    }
    if let Some((path, mut w)) = log {
        w.flush().map_err(|e| Error::io(path, e))?;
    }

    let loss = history.last().copied();
    Ok((
        Checkpoint {
            config: cfg.clone(),
            model,
            epoch: epochs,
            loss,
        },
        history,
    ))
}

type StepResult = (LossBreakdown, Vec<Tensor>, Option<Arc<Csr>>);

/// Records one forward pass and returns the loss, the gradient for every
/// parameter (in [`Model::params`] order) and, when `A′` was rebuilt, its
/// normalized value.
fn step_grads(
    model: &Model,
    cfg: &TrainConfig,
    a_hat: &Arc<Csr>,
    x: &Tensor,
    graph_ids: Option<&[usize]>,
    rows: Option<&[usize]>,
    cached: Option<Arc<Csr>>,
) -> Result<StepResult> {
    let mut tape = Tape::new();
    let leaves = |tape: &mut Tape, ws: &[Tensor]| ws.iter().map(|w| tape.leaf(w.clone())).collect::<Vec<Var>>();
    let enc = leaves(&mut tape, model.encoder.weights());
    let (f1, f2) = match &model.features {
        Some(f) => (Some(leaves(&mut tape, f.f1.weights())), Some(leaves(&mut tape, f.f2.weights()))),
        None => (None, None),
    };
    let topo = model.topology.as_ref().map(|t| leaves(&mut tape, t.gnn.weights()));
    let xv = tape.constant(x.clone());

    let aug = AugmenterVars {
        f1,
        f2,
        topo,
        cached_topology: cached,
    };
    let views = make_views(&mut tape, a_hat, xv, cfg.mode, &aug)?;
    let fresh = match &views.view2.adjacency {
        Propagation::Dense(a) if views.high_order.is_some() => Some(Arc::new(Csr::from_dense(tape.value(*a)))),
        _ => None,
    };
    let mut z1 = gcn_forward(&mut tape, &views.view1.adjacency, views.view1.features, &enc)?;
    let mut z2 = gcn_forward(&mut tape, &views.view2.adjacency, views.view2.features, &enc)?;
    if let Some(ids) = graph_ids {
        z1 = readout(&mut tape, z1, ids, cfg.readout)?;
        z2 = readout(&mut tape, z2, ids, cfg.readout)?;
    }
    if let Some(rows) = rows {
        z1 = tape.gather_rows(z1, rows)?;
        z2 = tape.gather_rows(z2, rows)?;
    }
    let theta = aug.f1.as_deref().zip(aug.f2.as_deref());
    let loss = total_loss(&mut tape, z1, z2, theta, cfg.mode, &cfg.weights, cfg.objective())?;
    if loss.breakdown.first_non_finite().is_some() {
        return Ok((loss.breakdown, Vec::new(), None));
    }
    tape.backward(loss.total)?;

    let mut grads = Vec::new();
    let all = enc
        .iter()
        .chain(aug.f1.iter().flatten())
        .chain(aug.f2.iter().flatten())
        .chain(aug.topo.iter().flatten());
    for &v in all {
        grads.push(tape.grad(v).cloned().expect("parameters are leaves"));
    }
    Ok((loss.breakdown, grads, fresh))
}

fn accumulate(acc: &mut LossBreakdown, b: &LossBreakdown) {
    acc.inv += b.inv;
    acc.var1 += b.var1;
    acc.var2 += b.var2;
    acc.cov1 += b.cov1;
    acc.cov2 += b.cov2;
    acc.model_reg += b.model_reg;
    acc.total += b.total;
}

fn scale_breakdown(b: &LossBreakdown, s: f64) -> LossBreakdown {
    LossBreakdown {
        inv: b.inv * s,
        var1: b.var1 * s,
        var2: b.var2 * s,
        cov1: b.cov1 * s,
        cov2: b.cov2 * s,
        model_reg: b.model_reg * s,
        total: b.total * s,
    }
}
