//! Layer composition, training, and checkpoints.
//!
//! An architecture string such as `C20 P C50 P R F` describes a chain of
//! spectral convolutions (`C<maps>`), AMG pooling layers (`P`, each applying
//! the configured number of internal coarsening levels), rectified linear
//! units (`R`), and one final fully connected classifier (`F`).
//!
//! Internally the chain is compiled into a short sequence of stages. All
//! linear steps between nonlinearities — the graph Fourier transforms,
//! pooling restrictions, and their compositions — are folded into single
//! transfer matrices at build time, so a forward pass multiplies each batch
//! by a handful of precomputed operators instead of round-tripping through
//! the vertex domain at full resolution. The fold is exact (matrix products
//! are associative) and every stage's backward map is its transpose, which
//! keeps the hand-derived gradients finite-difference exact. The layerwise
//! path with explicit per-layer activations remains available for
//! inspection and is tested against the compiled path.

use std::io::{Read, Write};
use std::sync::Arc;
use std::time::Instant;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::coarsen::{self, CoarseningHierarchy};
use crate::conv::{self, SpectralConvParams};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{laplacian, Graph};
use crate::interp;
use crate::spectral::{self, SpectralBasis};

use rand::SeedableRng;

/// Where spline knots live: over eigenvalue rank (index) or eigenvalue value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KnotDomain {
    #[default]
    Rank,
    Value,
}

/// Complete training configuration. Defaults follow the reference
/// experiment: `C20 P C50 P R F`, 60 tracked weights, beta 0.05 with
/// 2 coarsening levels per pooling layer, SGD(lr 0.01, momentum 0.9),
/// batches of 100.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub architecture: String,
    pub tracked_weights: usize,
    pub beta: f64,
    pub pool_levels: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Insert a ReLU after every convolution (the reference layout has a
    /// single ReLU after the second pooling).
    pub relu_after_conv: bool,
    /// Optional hidden width for the fully connected head.
    pub fc_hidden: Option<usize>,
    pub knot_domain: KnotDomain,
    pub deterministic: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            architecture: "C20 P C50 P R F".to_string(),
            tracked_weights: 60,
            beta: 0.05,
            pool_levels: 2,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 100,
            epochs: 500,
            seed: 0,
            relu_after_conv: false,
            fc_hidden: None,
            knot_domain: KnotDomain::Rank,
            deterministic: false,
        }
    }
}

const NUM_CLASSES: usize = 10;

/// One token of the architecture string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv(usize),
    Pool,
    Relu,
    Fc,
}

/// Parses an architecture string. Both spaced (`C20 P C50 P R F`) and
/// compact (`C20PC50PRF`) forms are accepted.
pub fn parse_architecture(text: &str) -> Result<Vec<LayerSpec>> {
    let mut specs = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            ' ' | '\t' => {}
            'C' | 'c' => {
                let mut digits = String::new();
                while let Some(d) = chars.peek() {
                    if d.is_ascii_digit() {
                        digits.push(*d);
                        chars.next();
                    } else {
                        break;
                    }
                }
                let maps: usize = digits
                    .parse()
                    .map_err(|_| Error::config(format!("C must be followed by a map count in {text:?}")))?;
                if maps == 0 {
                    return Err(Error::config("convolution must have at least one output map"));
                }
                specs.push(LayerSpec::Conv(maps));
            }
            'P' | 'p' => specs.push(LayerSpec::Pool),
            'R' | 'r' => specs.push(LayerSpec::Relu),
            'F' | 'f' => specs.push(LayerSpec::Fc),
            other => {
                return Err(Error::config(format!(
                    "unrecognized architecture token {other:?} in {text:?}"
                )))
            }
        }
    }
    let fc_count = specs.iter().filter(|s| **s == LayerSpec::Fc).count();
    if fc_count != 1 {
        return Err(Error::config(format!(
            "architecture must contain exactly one F layer, found {fc_count}"
        )));
    }
    if *specs.last().unwrap() != LayerSpec::Fc {
        return Err(Error::config("F must be the final layer"));
    }
    Ok(specs)
}

/// A compiled stage of the forward pipeline.
enum Stage {
    /// `out[s,c] = t · in[s,c]`, optionally adding a convolution bias along
    /// a precomputed carrier vector: `out[s,c] += bias[conv][c] · carrier`.
    /// `t = None` means identity (pure bias injection).
    Linear {
        t: Option<Array2<f64>>,
        bias: Option<(usize, Array1<f64>)>,
        label: &'static str,
    },
    /// Spectral channel mixing with the interpolated multipliers of conv
    /// layer `conv`: `out[s,o] = Σ_i in[s,i] ⊙ k[i,o]`.
    Mix { conv: usize },
    Relu,
    /// Flatten and apply the fully connected head.
    Fc,
}

impl Stage {
    fn label(&self) -> &'static str {
        match self {
            Stage::Linear { label, .. } => label,
            Stage::Mix { .. } => "mix",
            Stage::Relu => "relu",
            Stage::Fc => "fc",
        }
    }
}

/// Learned parameters: one entry per convolution plus the FC head
/// (one or two linear maps).
#[derive(Debug, Clone)]
pub struct Params {
    pub convs: Vec<SpectralConvParams>,
    pub fc: Vec<(Array2<f64>, Array1<f64>)>,
}

/// Gradients in the same layout as [`Params`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub convs: Vec<(Array3<f64>, Array1<f64>)>,
    pub fc: Vec<(Array2<f64>, Array1<f64>)>,
    /// Gradient with respect to the input batch, when requested.
    pub input: Option<Array3<f64>>,
}

/// Momentum state mirroring [`Params`].
#[derive(Debug, Clone)]
pub struct Velocity {
    convs: Vec<(Array3<f64>, Array1<f64>)>,
    fc: Vec<(Array2<f64>, Array1<f64>)>,
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// Test accuracy in percent.
    pub test_accuracy: f64,
    pub seconds: f64,
}

/// Result of a training run.
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub best_params: Params,
}

/// Activation snapshot of one layer for inspection.
pub struct LayerDump {
    pub name: String,
    pub level: usize,
    /// Channels × vertices, in the vertex domain of that layer's graph.
    pub data: Array2<f64>,
}

struct FcCache {
    flat: Array2<f64>,
    hidden_pre: Option<Array2<f64>>,
    hidden_out: Option<Array2<f64>>,
}

struct ForwardCaches {
    /// Input of each Mix stage (spectral), indexed like `stages`.
    mix_inputs: Vec<Option<Array3<f64>>>,
    /// Input of each Relu stage, indexed like `stages`.
    relu_inputs: Vec<Option<Array3<f64>>>,
    fc: Option<FcCache>,
    input_dim: (usize, usize, usize),
}

/// A compiled network over a fixed input graph.
pub struct Network {
    cfg: NetworkConfig,
    specs: Vec<LayerSpec>,
    /// Graph at each pooling depth; `graphs[0]` is the input graph.
    graphs: Vec<Graph>,
    /// Eigenbasis per depth, filled for depths hosting a convolution or a
    /// domain transfer.
    bases: Vec<Option<Arc<SpectralBasis>>>,
    /// Pooling hierarchy between depth `i` and `i + 1`.
    pools: Vec<CoarseningHierarchy>,
    /// Depth of each convolution layer (parallel to `params.convs`).
    conv_levels: Vec<usize>,
    stages: Vec<Stage>,
    params: Params,
    fc_input_dim: usize,
}

fn basis_at(
    graphs: &[Graph],
    bases: &mut Vec<Option<Arc<SpectralBasis>>>,
    level: usize,
) -> Result<Arc<SpectralBasis>> {
    if bases[level].is_none() {
        let l = laplacian(&graphs[level]);
        bases[level] = Some(spectral::eigendecompose_cached(&l)?);
    }
    Ok(Arc::clone(bases[level].as_ref().unwrap()))
}

impl Network {
    /// Compiles `cfg.architecture` over `graph`, precomputing coarsening
    /// hierarchies, eigenbases, and the folded transfer operators, and
    /// initializing all parameters from `cfg.seed`.
    pub fn build(cfg: &NetworkConfig, graph: &Graph) -> Result<Network> {
        let mut specs = parse_architecture(&cfg.architecture)?;
        if cfg.relu_after_conv {
            let mut expanded = Vec::with_capacity(specs.len() * 2);
            for spec in specs {
                expanded.push(spec);
                if matches!(spec, LayerSpec::Conv(_)) {
                    expanded.push(LayerSpec::Relu);
                }
            }
            specs = expanded;
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut graphs = vec![graph.clone()];
        let mut bases: Vec<Option<Arc<SpectralBasis>>> = vec![None];
        let mut pools: Vec<CoarseningHierarchy> = Vec::new();
        let mut stages: Vec<Stage> = Vec::new();
        let mut convs: Vec<SpectralConvParams> = Vec::new();
        let mut conv_levels: Vec<usize> = Vec::new();

        // Compiler state: current depth, channel count, and whether the
        // running activation lives in the vertex or spectral domain. While
        // spectral, `pending_bias` names the conv whose vertex-domain bias
        // has not been injected yet.
        let mut level = 0usize;
        let mut channels = 1usize;
        let mut spectral_domain = false;
        let mut pending_bias: Option<usize> = None;

        let specs_snapshot = specs.clone();
        for (pos, spec) in specs_snapshot.iter().enumerate() {
            match spec {
                LayerSpec::Conv(maps) => {
                    let basis = basis_at(&graphs, &mut bases, level)?;
                    if !spectral_domain {
                        stages.push(Stage::Linear {
                            t: Some(basis.u().t().to_owned()),
                            bias: None,
                            label: "gft",
                        });
                        spectral_domain = true;
                    } else if let Some(c) = pending_bias.take() {
                        // Two convolutions back to back: the earlier bias
                        // enters this spectral frame as b · Uᵀ1.
                        let carrier = basis.u().t().dot(&Array1::from_elem(basis.n(), 1.0));
                        stages.push(Stage::Linear {
                            t: None,
                            bias: Some((c, carrier)),
                            label: "bias",
                        });
                    }
                    let n = graphs[level].n();
                    let m = cfg.tracked_weights.max(1).min(n);
                    let interp = match cfg.knot_domain {
                        KnotDomain::Rank => interp::build_interpolator(m, n)?,
                        KnotDomain::Value => interp::build_interpolator_over_values(
                            m,
                            basis.lambda().as_slice().unwrap(),
                        )?,
                    };
                    let conv_idx = convs.len();
                    convs.push(SpectralConvParams::init(channels, *maps, interp, &mut rng));
                    conv_levels.push(level);
                    stages.push(Stage::Mix { conv: conv_idx });
                    channels = *maps;
                    pending_bias = Some(conv_idx);
                }
                LayerSpec::Pool => {
                    let hierarchy =
                        amg_for_pool(&graphs[level], cfg).map_err(pool_as_config_error)?;
                    let coarse = hierarchy.coarse_graph().clone();
                    graphs.push(coarse);
                    bases.push(None);
                    let next_is_conv =
                        matches!(specs_snapshot.get(pos + 1), Some(LayerSpec::Conv(_)));
                    if spectral_domain {
                        let u_here = basis_at(&graphs, &mut bases, level)?;
                        let r = hierarchy.composed_r();
                        if next_is_conv {
                            // spectral(level) -> spectral(level+1) in one hop.
                            let u_next = basis_at(&graphs, &mut bases, level + 1)?;
                            let t = u_next.u().t().dot(r).dot(u_here.u());
                            let carrier = pending_bias.take().map(|c| {
                                let ones = Array1::from_elem(u_next.n(), 1.0);
                                (c, u_next.u().t().dot(&ones))
                            });
                            stages.push(Stage::Linear {
                                t: Some(t),
                                bias: carrier,
                                label: "pool-spectral",
                            });
                        } else {
                            let t = r.dot(u_here.u());
                            let carrier = pending_bias
                                .take()
                                .map(|c| (c, Array1::from_elem(r.nrows(), 1.0)));
                            stages.push(Stage::Linear {
                                t: Some(t),
                                bias: carrier,
                                label: "pool-vertex",
                            });
                            spectral_domain = false;
                        }
                    } else {
                        stages.push(Stage::Linear {
                            t: Some(hierarchy.composed_r().clone()),
                            bias: None,
                            label: "pool",
                        });
                    }
                    pools.push(hierarchy);
                    level += 1;
                }
                LayerSpec::Relu | LayerSpec::Fc => {
                    if spectral_domain {
                        let basis = basis_at(&graphs, &mut bases, level)?;
                        let carrier = pending_bias
                            .take()
                            .map(|c| (c, Array1::from_elem(basis.n(), 1.0)));
                        stages.push(Stage::Linear {
                            t: Some(basis.u().to_owned()),
                            bias: carrier,
                            label: "igft",
                        });
                        spectral_domain = false;
                    }
                    match spec {
                        LayerSpec::Relu => stages.push(Stage::Relu),
                        LayerSpec::Fc => stages.push(Stage::Fc),
                        _ => unreachable!(),
                    }
                }
            }
        }

        let fc_input_dim = channels * graphs[level].n();
        let mut fc = Vec::new();
        match cfg.fc_hidden {
            Some(hidden) => {
                if hidden == 0 {
                    return Err(Error::config("fc_hidden must be positive when set"));
                }
                fc.push(init_linear(fc_input_dim, hidden, &mut rng));
                fc.push(init_linear(hidden, NUM_CLASSES, &mut rng));
            }
            None => fc.push(init_linear(fc_input_dim, NUM_CLASSES, &mut rng)),
        }

        Ok(Network {
            cfg: cfg.clone(),
            specs,
            graphs,
            bases,
            pools,
            conv_levels,
            stages,
            params: Params { convs, fc },
            fc_input_dim,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn pools(&self) -> &[CoarseningHierarchy] {
        &self.pools
    }

    pub fn input_graph(&self) -> &Graph {
        &self.graphs[0]
    }

    pub fn fc_input_dim(&self) -> usize {
        self.fc_input_dim
    }

    /// Depth (graph level) hosting convolution `idx`.
    pub fn conv_level(&self, idx: usize) -> usize {
        self.conv_levels[idx]
    }

    pub fn basis_for_conv(&self, idx: usize) -> Arc<SpectralBasis> {
        Arc::clone(
            self.bases[self.conv_levels[idx]]
                .as_ref()
                .expect("conv level has a basis"),
        )
    }

    /// Total learned parameter count.
    pub fn parameter_count(&self) -> usize {
        let conv: usize = self
            .params
            .convs
            .iter()
            .map(|c| c.k_hat.len() + c.bias.len())
            .sum();
        let fc: usize = self.params.fc.iter().map(|(w, b)| w.len() + b.len()).sum();
        conv + fc
    }

    fn forward_stages(&self, input: &ArrayView3<f64>) -> Result<(Array2<f64>, ForwardCaches)> {
        if input.dim().2 != self.graphs[0].n() {
            return Err(Error::invalid_argument(format!(
                "input vertex count {} does not match graph size {}",
                input.dim().2,
                self.graphs[0].n()
            )));
        }
        let samples = input.dim().0;
        let mut caches = ForwardCaches {
            mix_inputs: (0..self.stages.len()).map(|_| None).collect(),
            relu_inputs: (0..self.stages.len()).map(|_| None).collect(),
            fc: None,
            input_dim: input.dim(),
        };
        let mut act = input.to_owned();
        let mut logits = None;
        for (idx, stage) in self.stages.iter().enumerate() {
            match stage {
                Stage::Linear { t, bias, .. } => {
                    if let Some(t) = t {
                        act = apply_rows(t, &act)?;
                    }
                    if let Some((conv_idx, carrier)) = bias {
                        let b = &self.params.convs[*conv_idx].bias;
                        for s_i in 0..samples {
                            for c in 0..act.dim().1 {
                                let scale = b[c];
                                if scale != 0.0 {
                                    let mut row = act.slice_mut(s![s_i, c, ..]);
                                    row.zip_mut_with(carrier, |dst, &car| *dst += scale * car);
                                }
                            }
                        }
                    }
                }
                Stage::Mix { conv } => {
                    caches.mix_inputs[idx] = Some(act.clone());
                    let p = &self.params.convs[*conv];
                    let k = p.full_filters()?;
                    act = mix_forward(&act.view(), &k.view());
                }
                Stage::Relu => {
                    caches.relu_inputs[idx] = Some(act.clone());
                    act.mapv_inplace(|v| if v < 0.0 { 0.0 } else { v });
                }
                Stage::Fc => {
                    let (s_ct, c_ct, w_ct) = act.dim();
                    let flat = act
                        .to_shape((s_ct, c_ct * w_ct))
                        .map_err(|e| Error::invalid_argument(e.to_string()))?
                        .to_owned();
                    let (out, cache) = self.fc_forward(flat)?;
                    caches.fc = Some(cache);
                    logits = Some(out);
                }
            }
            if logits.is_none() && !act.iter().all(|v| v.is_finite()) {
                return Err(Error::numerical(
                    format!("activation at stage {idx} ({})", stage.label()),
                    None,
                ));
            }
        }
        let logits = logits.ok_or_else(|| Error::config("architecture lacks an F layer"))?;
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::numerical("logits", None));
        }
        Ok((logits, caches))
    }

    fn fc_forward(&self, flat: Array2<f64>) -> Result<(Array2<f64>, FcCache)> {
        if flat.ncols() != self.fc_input_dim {
            return Err(Error::invalid_argument(format!(
                "flattened width {} does not match FC input {}",
                flat.ncols(),
                self.fc_input_dim
            )));
        }
        match self.params.fc.len() {
            1 => {
                let (w, b) = &self.params.fc[0];
                let logits = flat.dot(w) + b;
                Ok((
                    logits,
                    FcCache {
                        flat,
                        hidden_pre: None,
                        hidden_out: None,
                    },
                ))
            }
            2 => {
                let (w1, b1) = &self.params.fc[0];
                let (w2, b2) = &self.params.fc[1];
                let pre = flat.dot(w1) + b1;
                let hidden = pre.mapv(|v| if v < 0.0 { 0.0 } else { v });
                let logits = hidden.dot(w2) + b2;
                Ok((
                    logits,
                    FcCache {
                        flat,
                        hidden_pre: Some(pre),
                        hidden_out: Some(hidden),
                    },
                ))
            }
            other => Err(Error::config(format!("unexpected FC depth {other}"))),
        }
    }

    /// Forward pass: softmax cross-entropy loss (mean over the batch),
    /// class probabilities, and the caches needed for [`Network::backward`].
    pub fn forward(
        &self,
        input: &ArrayView3<f64>,
        labels: &[u8],
    ) -> Result<(f64, Array2<f64>, ForwardState)> {
        if labels.len() != input.dim().0 {
            return Err(Error::invalid_argument(format!(
                "batch has {} samples but {} labels",
                input.dim().0,
                labels.len()
            )));
        }
        let (logits, caches) = self.forward_stages(input)?;
        let (loss, probs, dlogits) = softmax_cross_entropy(&logits, labels)?;
        Ok((
            loss,
            probs,
            ForwardState {
                caches,
                dlogits,
            },
        ))
    }

    /// Class probabilities only (no caches retained).
    pub fn predict(&self, input: &ArrayView3<f64>) -> Result<Array2<f64>> {
        let (logits, _) = self.forward_stages(input)?;
        Ok(softmax_rows(&logits))
    }

    /// Backpropagates from the cached forward pass, returning gradients for
    /// every parameter (and for the input batch when `want_input_grad`).
    pub fn backward(&self, state: &ForwardState, want_input_grad: bool) -> Result<Gradients> {
        let caches = &state.caches;
        let mut grads = Gradients {
            convs: self
                .params
                .convs
                .iter()
                .map(|c| (Array3::zeros(c.k_hat.dim()), Array1::zeros(c.bias.len())))
                .collect(),
            fc: self
                .params
                .fc
                .iter()
                .map(|(w, b)| (Array2::zeros(w.dim()), Array1::zeros(b.len())))
                .collect(),
            input: None,
        };

        // dAct flows backwards; start from the FC head.
        let fc_cache = caches
            .fc
            .as_ref()
            .ok_or_else(|| Error::config("backward without a forward FC pass"))?;
        let mut dflat = self.fc_backward(fc_cache, &state.dlogits, &mut grads)?;

        // Reshape to the activation entering Fc.
        let mut dact: Array3<f64> = {
            let fc_stage = self.stages.len() - 1;
            let (s_ct, c_ct, w_ct) = self.stage_input_dim(fc_stage, caches)?;
            dflat = dflat
                .to_shape((s_ct, c_ct * w_ct))
                .map_err(|e| Error::invalid_argument(e.to_string()))?
                .to_owned();
            dflat
                .to_shape((s_ct, c_ct, w_ct))
                .map_err(|e| Error::invalid_argument(e.to_string()))?
                .to_owned()
        };

        for idx in (0..self.stages.len() - 1).rev() {
            // The input gradient of the very first stage is only needed on
            // request; skip the wasted transform otherwise.
            if idx == 0 && !want_input_grad {
                if let Stage::Linear { bias: None, .. } = &self.stages[0] {
                    break;
                }
            }
            match &self.stages[idx] {
                Stage::Linear { t, bias, .. } => {
                    if let Some((conv_idx, carrier)) = bias {
                        let db = &mut grads.convs[*conv_idx].1;
                        for s_i in 0..dact.dim().0 {
                            for c in 0..dact.dim().1 {
                                let row = dact.slice(s![s_i, c, ..]);
                                db[c] += row.dot(carrier);
                            }
                        }
                    }
                    if let Some(t) = t {
                        dact = apply_rows_transposed(t, &dact)?;
                    }
                }
                Stage::Mix { conv } => {
                    let p = &self.params.convs[*conv];
                    let k = p.full_filters()?;
                    let input = caches.mix_inputs[idx]
                        .as_ref()
                        .ok_or_else(|| Error::config("missing mix cache"))?;
                    let dk = mix_backward_filters(&input.view(), &dact.view());
                    let dk_hat = interp::project_filter_grads(&p.interp, &dk.view())?;
                    grads.convs[*conv].0 += &dk_hat;
                    dact = mix_backward_data(&dact.view(), &k.view());
                }
                Stage::Relu => {
                    let pre = caches.relu_inputs[idx]
                        .as_ref()
                        .ok_or_else(|| Error::config("missing relu cache"))?;
                    ndarray::Zip::from(&mut dact)
                        .and(pre)
                        .for_each(|d, &p| {
                            if p < 0.0 {
                                *d = 0.0;
                            }
                        });
                }
                Stage::Fc => unreachable!("fc handled before the loop"),
            }
        }
        if want_input_grad {
            grads.input = Some(dact);
        }
        Ok(grads)
    }

    /// Width of the activation entering stage `idx`.
    fn stage_input_dim(
        &self,
        idx: usize,
        caches: &ForwardCaches,
    ) -> Result<(usize, usize, usize)> {
        // Replay the shape bookkeeping of the forward pass.
        let mut dim = caches.input_dim;
        for (i, stage) in self.stages.iter().enumerate() {
            if i == idx {
                return Ok(dim);
            }
            match stage {
                Stage::Linear { t, .. } => {
                    if let Some(t) = t {
                        dim = (dim.0, dim.1, t.nrows());
                    }
                }
                Stage::Mix { conv } => {
                    dim = (dim.0, self.params.convs[*conv].out_channels(), dim.2);
                }
                Stage::Relu | Stage::Fc => {}
            }
        }
        Ok(dim)
    }

    fn fc_backward(
        &self,
        cache: &FcCache,
        dlogits: &Array2<f64>,
        grads: &mut Gradients,
    ) -> Result<Array2<f64>> {
        match self.params.fc.len() {
            1 => {
                let (w, _) = &self.params.fc[0];
                grads.fc[0].0 += &cache.flat.t().dot(dlogits);
                grads.fc[0].1 += &dlogits.sum_axis(ndarray::Axis(0));
                Ok(dlogits.dot(&w.t()))
            }
            2 => {
                let (w1, _) = &self.params.fc[0];
                let (w2, _) = &self.params.fc[1];
                let hidden = cache.hidden_out.as_ref().unwrap();
                let pre = cache.hidden_pre.as_ref().unwrap();
                grads.fc[1].0 += &hidden.t().dot(dlogits);
                grads.fc[1].1 += &dlogits.sum_axis(ndarray::Axis(0));
                let mut dhidden = dlogits.dot(&w2.t());
                ndarray::Zip::from(&mut dhidden).and(pre).for_each(|d, &p| {
                    if p < 0.0 {
                        *d = 0.0;
                    }
                });
                grads.fc[0].0 += &cache.flat.t().dot(&dhidden);
                grads.fc[0].1 += &dhidden.sum_axis(ndarray::Axis(0));
                Ok(dhidden.dot(&w1.t()))
            }
            other => Err(Error::config(format!("unexpected FC depth {other}"))),
        }
    }

    /// One SGD-with-momentum update:
    /// `v = momentum·v − lr·g`, `p += v`. Non-finite gradients abort.
    pub fn apply_sgd(
        &mut self,
        grads: &Gradients,
        velocity: &mut Velocity,
        lr: f64,
        momentum: f64,
    ) -> Result<()> {
        for (idx, (dk, db)) in grads.convs.iter().enumerate() {
            let (vk, vb) = &mut velocity.convs[idx];
            sgd_step(
                self.params.convs[idx].k_hat.as_slice_mut().unwrap(),
                dk.as_slice().unwrap(),
                vk.as_slice_mut().unwrap(),
                lr,
                momentum,
            )
            .map_err(|e| diag(e, &format!("conv{idx}.k_hat")))?;
            sgd_step(
                self.params.convs[idx].bias.as_slice_mut().unwrap(),
                db.as_slice().unwrap(),
                vb.as_slice_mut().unwrap(),
                lr,
                momentum,
            )
            .map_err(|e| diag(e, &format!("conv{idx}.bias")))?;
        }
        for (idx, (dw, db)) in grads.fc.iter().enumerate() {
            let (vw, vb) = &mut velocity.fc[idx];
            sgd_step(
                self.params.fc[idx].0.as_slice_mut().unwrap(),
                dw.as_slice().unwrap(),
                vw.as_slice_mut().unwrap(),
                lr,
                momentum,
            )
            .map_err(|e| diag(e, &format!("fc{idx}.weight")))?;
            sgd_step(
                self.params.fc[idx].1.as_slice_mut().unwrap(),
                db.as_slice().unwrap(),
                vb.as_slice_mut().unwrap(),
                lr,
                momentum,
            )
            .map_err(|e| diag(e, &format!("fc{idx}.bias")))?;
        }
        Ok(())
    }

    pub fn zero_velocity(&self) -> Velocity {
        Velocity {
            convs: self
                .params
                .convs
                .iter()
                .map(|c| (Array3::zeros(c.k_hat.dim()), Array1::zeros(c.bias.len())))
                .collect(),
            fc: self
                .params
                .fc
                .iter()
                .map(|(w, b)| (Array2::zeros(w.dim()), Array1::zeros(b.len())))
                .collect(),
        }
    }

    /// Trains with shuffled seeded mini-batches, evaluating test accuracy
    /// each epoch. `on_epoch` runs after every epoch (metric logging);
    /// errors from it or from numerics end the run, leaving already-written
    /// rows intact.
    pub fn train(
        &mut self,
        train_set: &Dataset,
        test_set: &Dataset,
        on_epoch: &mut dyn FnMut(&EpochMetrics) -> Result<()>,
    ) -> Result<TrainOutcome> {
        if train_set.graph().n() != self.graphs[0].n() {
            return Err(Error::config(format!(
                "training data lives on {} vertices, network expects {}",
                train_set.graph().n(),
                self.graphs[0].n()
            )));
        }
        let cfg = self.cfg.clone();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xD1B5_4A32_D192_ED03);
        let mut velocity = self.zero_velocity();
        let mut metrics = Vec::with_capacity(cfg.epochs);
        let mut best_epoch = 0usize;
        let mut best_accuracy = f64::NEG_INFINITY;
        let mut best_params = self.params.clone();
        let n_train = train_set.len();
        let mut indices: Vec<usize> = (0..n_train).collect();

        for epoch in 1..=cfg.epochs {
            let started = Instant::now();
            use rand::seq::SliceRandom;
            indices.shuffle(&mut shuffle_rng);
            let mut loss_sum = 0.0;
            for chunk in indices.chunks(cfg.batch_size.max(1)) {
                let batch = gather_batch(train_set, chunk);
                let labels: Vec<u8> = chunk.iter().map(|&i| train_set.labels()[i]).collect();
                let (loss, _probs, state) = self.forward(&batch.view(), &labels)?;
                let grads = self.backward(&state, false)?;
                self.apply_sgd(&grads, &mut velocity, cfg.learning_rate, cfg.momentum)?;
                loss_sum += loss * chunk.len() as f64;
            }
            let train_loss = loss_sum / n_train as f64;
            let test_accuracy = self.evaluate(test_set)?;
            let seconds = if cfg.deterministic {
                0.0
            } else {
                started.elapsed().as_secs_f64()
            };
            let row = EpochMetrics {
                epoch,
                train_loss,
                test_accuracy,
                seconds,
            };
            if test_accuracy > best_accuracy {
                best_accuracy = test_accuracy;
                best_epoch = epoch;
                best_params = self.params.clone();
            }
            on_epoch(&row)?;
            metrics.push(row);
        }
        Ok(TrainOutcome {
            metrics,
            best_epoch,
            best_accuracy,
            best_params,
        })
    }

    /// Test accuracy in percent, evaluated in batches.
    pub fn evaluate(&self, d: &Dataset) -> Result<f64> {
        if d.is_empty() {
            return Err(Error::invalid_argument("cannot evaluate an empty dataset"));
        }
        let batch = self.cfg.batch_size.max(1);
        let mut correct = 0usize;
        let mut at = 0usize;
        while at < d.len() {
            let hi = (at + batch).min(d.len());
            let idx: Vec<usize> = (at..hi).collect();
            let input = gather_batch(d, &idx);
            let probs = self.predict(&input.view())?;
            for (row, &label) in probs.rows().into_iter().zip(&d.labels()[at..hi]) {
                let mut arg = 0usize;
                let mut best = f64::NEG_INFINITY;
                for (c, &p) in row.iter().enumerate() {
                    if p > best {
                        best = p;
                        arg = c;
                    }
                }
                if arg == label as usize {
                    correct += 1;
                }
            }
            at = hi;
        }
        Ok(100.0 * correct as f64 / d.len() as f64)
    }

    /// Per-layer vertex-domain activations of one sample, computed with the
    /// uncompiled layerwise operators (convolution and pooling outputs only).
    pub fn inspect_sample(&self, image: &ArrayView2<f64>) -> Result<Vec<LayerDump>> {
        let (logits, dumps) = self.layered_forward(image)?;
        let _ = logits;
        Ok(dumps)
    }

    /// Reference layerwise forward pass (single batch, pure per-layer ops).
    /// Returns logits and the vertex-domain conv/pool activations.
    pub fn layered_forward(
        &self,
        images: &ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Vec<LayerDump>)> {
        let samples = images.nrows();
        if images.ncols() != self.graphs[0].n() {
            return Err(Error::invalid_argument(format!(
                "input vertex count {} does not match graph size {}",
                images.ncols(),
                self.graphs[0].n()
            )));
        }
        let mut act = images
            .to_owned()
            .into_shape_with_order((samples, 1, images.ncols()))
            .map_err(|e| Error::invalid_argument(e.to_string()))?;
        let mut dumps = Vec::new();
        let mut level = 0usize;
        let mut conv_idx = 0usize;
        let mut pool_idx = 0usize;
        for spec in &self.specs {
            match spec {
                LayerSpec::Conv(_) => {
                    let p = &self.params.convs[conv_idx];
                    let basis = self.basis_for_conv(conv_idx);
                    let k = p.full_filters()?;
                    act = conv::conv_forward(&basis, &act.view(), &k.view(), &p.bias.view())?;
                    dumps.push(LayerDump {
                        name: format!("conv{}", conv_idx + 1),
                        level,
                        data: act.index_axis(ndarray::Axis(0), 0).to_owned(),
                    });
                    conv_idx += 1;
                }
                LayerSpec::Pool => {
                    let h = &self.pools[pool_idx];
                    act = coarsen::pool_forward(h, &act.view())?;
                    level += 1;
                    dumps.push(LayerDump {
                        name: format!("pool{}", pool_idx + 1),
                        level,
                        data: act.index_axis(ndarray::Axis(0), 0).to_owned(),
                    });
                    pool_idx += 1;
                }
                LayerSpec::Relu => {
                    act.mapv_inplace(|v| if v < 0.0 { 0.0 } else { v });
                }
                LayerSpec::Fc => {
                    let (s_ct, c_ct, w_ct) = act.dim();
                    let flat = act
                        .to_shape((s_ct, c_ct * w_ct))
                        .map_err(|e| Error::invalid_argument(e.to_string()))?
                        .to_owned();
                    let (logits, _) = self.fc_forward(flat)?;
                    return Ok((logits, dumps));
                }
            }
        }
        Err(Error::config("architecture lacks an F layer"))
    }

    /// Mutable flat views of every parameter tensor, for the
    /// finite-difference harness.
    pub fn param_slices_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (idx, c) in self.params.convs.iter_mut().enumerate() {
            out.push((
                format!("conv{idx}.k_hat"),
                c.k_hat.as_slice_mut().unwrap(),
            ));
            out.push((format!("conv{idx}.bias"), c.bias.as_slice_mut().unwrap()));
        }
        for (idx, (w, b)) in self.params.fc.iter_mut().enumerate() {
            out.push((format!("fc{idx}.weight"), w.as_slice_mut().unwrap()));
            out.push((format!("fc{idx}.bias"), b.as_slice_mut().unwrap()));
        }
        out
    }

    /// Flat copies of every gradient tensor, keyed like
    /// [`Network::param_slices_mut`].
    pub fn grad_slices(grads: &Gradients) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        for (idx, (dk, db)) in grads.convs.iter().enumerate() {
            out.push((format!("conv{idx}.k_hat"), dk.iter().cloned().collect()));
            out.push((format!("conv{idx}.bias"), db.iter().cloned().collect()));
        }
        for (idx, (dw, db)) in grads.fc.iter().enumerate() {
            out.push((format!("fc{idx}.weight"), dw.iter().cloned().collect()));
            out.push((format!("fc{idx}.bias"), db.iter().cloned().collect()));
        }
        out
    }

    const CHECKPOINT_MAGIC: &'static [u8; 4] = b"GCNN";
    const CHECKPOINT_VERSION: u32 = 1;

    /// Serializes `params` in the versioned binary container.
    pub fn write_checkpoint<W: Write>(&self, params: &Params, mut out: W) -> Result<()> {
        let records = checkpoint_records(params);
        out.write_all(Self::CHECKPOINT_MAGIC)?;
        out.write_all(&Self::CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(records.len() as u32).to_le_bytes())?;
        for (name, dims, data) in records {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(dims.len() as u32).to_le_bytes())?;
            for d in &dims {
                out.write_all(&d.to_le_bytes())?;
            }
            for v in data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Loads a checkpoint into the network. Shape or name mismatches are
    /// configuration errors; malformed bytes are format errors.
    pub fn load_checkpoint<R: Read>(&mut self, input: R) -> Result<()> {
        let mut r = CheckpointReader::new(input);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic, "magic")?;
        if &magic != Self::CHECKPOINT_MAGIC {
            return Err(Error::format("bad checkpoint magic", Some(0)));
        }
        let version = r.read_u32("version")?;
        if version != Self::CHECKPOINT_VERSION {
            return Err(Error::format(
                format!("unsupported checkpoint version {version}"),
                Some(4),
            ));
        }
        let count = r.read_u32("record count")? as usize;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.read_u32("name length")? as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf, "name")?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| Error::format("parameter name is not UTF-8", Some(r.offset)))?;
            let rank = r.read_u32("rank")? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.read_u64("dimension")?);
            }
            let len: u64 = dims.iter().product();
            let mut data = Vec::with_capacity(len as usize);
            for _ in 0..len {
                data.push(r.read_f64("parameter data")?);
            }
            records.push((name, dims, data));
        }
        self.apply_checkpoint(records)
    }

    fn apply_checkpoint(&mut self, records: Vec<(String, Vec<u64>, Vec<f64>)>) -> Result<()> {
        let expected = checkpoint_records(&self.params);
        if records.len() != expected.len() {
            return Err(Error::config(format!(
                "checkpoint has {} parameters, network has {}",
                records.len(),
                expected.len()
            )));
        }
        for ((name, dims, _), (want_name, want_dims, _)) in records.iter().zip(&expected) {
            if name != want_name {
                return Err(Error::config(format!(
                    "checkpoint parameter {name:?} does not match expected {want_name:?}"
                )));
            }
            if dims != want_dims {
                return Err(Error::config(format!(
                    "parameter {name} has shape {dims:?}, network expects {want_dims:?}"
                )));
            }
        }
        let mut it = records.into_iter();
        for c in &mut self.params.convs {
            let (_, _, data) = it.next().unwrap();
            c.k_hat.as_slice_mut().unwrap().copy_from_slice(&data);
            let (_, _, data) = it.next().unwrap();
            c.bias.as_slice_mut().unwrap().copy_from_slice(&data);
        }
        for (w, b) in &mut self.params.fc {
            let (_, _, data) = it.next().unwrap();
            w.as_slice_mut().unwrap().copy_from_slice(&data);
            let (_, _, data) = it.next().unwrap();
            b.as_slice_mut().unwrap().copy_from_slice(&data);
        }
        Ok(())
    }
}

/// Opaque forward state handed to [`Network::backward`].
pub struct ForwardState {
    caches: ForwardCaches,
    dlogits: Array2<f64>,
}

fn checkpoint_records(params: &Params) -> Vec<(String, Vec<u64>, Vec<f64>)> {
    let mut out = Vec::new();
    for (idx, c) in params.convs.iter().enumerate() {
        let (i, o, m) = c.k_hat.dim();
        out.push((
            format!("conv{idx}.k_hat"),
            vec![i as u64, o as u64, m as u64],
            c.k_hat.iter().cloned().collect(),
        ));
        out.push((
            format!("conv{idx}.bias"),
            vec![c.bias.len() as u64],
            c.bias.iter().cloned().collect(),
        ));
    }
    for (idx, (w, b)) in params.fc.iter().enumerate() {
        out.push((
            format!("fc{idx}.weight"),
            vec![w.nrows() as u64, w.ncols() as u64],
            w.iter().cloned().collect(),
        ));
        out.push((
            format!("fc{idx}.bias"),
            vec![b.len() as u64],
            b.iter().cloned().collect(),
        ));
    }
    out
}

struct CheckpointReader<R: Read> {
    inner: R,
    offset: u64,
}

impl<R: Read> CheckpointReader<R> {
    fn new(inner: R) -> Self {
        CheckpointReader { inner, offset: 0 }
    }

    fn read_exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(_) => Err(Error::format(
                format!("checkpoint truncated while reading {what}"),
                Some(self.offset),
            )),
        }
    }

    fn read_u32(&mut self, what: &str) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.read_exact(&mut buf, what)?;
        Ok(u32::from_le_bytes(buf))
    }

    fn read_u64(&mut self, what: &str) -> Result<u64> {
        let mut buf = [0u8; 8];
        self.read_exact(&mut buf, what)?;
        Ok(u64::from_le_bytes(buf))
    }

    fn read_f64(&mut self, what: &str) -> Result<f64> {
        let mut buf = [0u8; 8];
        self.read_exact(&mut buf, what)?;
        Ok(f64::from_le_bytes(buf))
    }
}

fn diag(e: Error, what: &str) -> Error {
    match e {
        Error::NumericalFailure { context, residual } => Error::NumericalFailure {
            context: format!("{context} ({what})"),
            residual,
        },
        other => other,
    }
}

fn amg_for_pool(graph: &Graph, cfg: &NetworkConfig) -> Result<CoarseningHierarchy> {
    coarsen::amg_coarsen(graph, cfg.beta, cfg.pool_levels, cfg.seed)
}

fn pool_as_config_error(e: Error) -> Error {
    match e {
        Error::InvalidArgument(msg) => Error::config(format!("pooling layer: {msg}")),
        other => other,
    }
}

fn init_linear<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> (Array2<f64>, Array1<f64>) {
    let std = 1.0 / (fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid std");
    (
        Array2::from_shape_fn((fan_in, fan_out), |_| normal.sample(rng)),
        Array1::zeros(fan_out),
    )
}

/// `out[s,c] = matrix · in[s,c]` via one row-major GEMM.
fn apply_rows(matrix: &Array2<f64>, t: &Array3<f64>) -> Result<Array3<f64>> {
    let (s_ct, c_ct, w) = t.dim();
    if matrix.ncols() != w {
        return Err(Error::invalid_argument(format!(
            "transfer expects width {}, got {w}",
            matrix.ncols()
        )));
    }
    let rows = t
        .to_shape((s_ct * c_ct, w))
        .map_err(|e| Error::invalid_argument(e.to_string()))?;
    let out = rows.dot(&matrix.t());
    Ok(out
        .into_shape_with_order((s_ct, c_ct, matrix.nrows()))
        .map_err(|e| Error::invalid_argument(e.to_string()))?)
}

/// Adjoint of [`apply_rows`]: `out[s,c] = matrixᵀ · in[s,c]`.
fn apply_rows_transposed(matrix: &Array2<f64>, t: &Array3<f64>) -> Result<Array3<f64>> {
    let (s_ct, c_ct, w) = t.dim();
    if matrix.nrows() != w {
        return Err(Error::invalid_argument(format!(
            "transfer adjoint expects width {}, got {w}",
            matrix.nrows()
        )));
    }
    let rows = t
        .to_shape((s_ct * c_ct, w))
        .map_err(|e| Error::invalid_argument(e.to_string()))?;
    let out = rows.dot(matrix);
    Ok(out
        .into_shape_with_order((s_ct, c_ct, matrix.ncols()))
        .map_err(|e| Error::invalid_argument(e.to_string()))?)
}

/// `acc[v] += a[v] * b[v]` over contiguous slices; the hot inner loop of
/// every mix kernel.
#[inline]
fn fma_slices(acc: &mut [f64], a: &[f64], b: &[f64]) {
    for ((d, &x), &y) in acc.iter_mut().zip(a).zip(b) {
        *d += x * y;
    }
}

fn mix_forward(input: &ArrayView3<f64>, k: &ArrayView3<f64>) -> Array3<f64> {
    let (samples, i_ch, n) = input.dim();
    let o_ch = k.dim().1;
    let mut out = Array3::zeros((samples, o_ch, n));
    let x = input.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let ks = k.as_standard_layout();
    let ks = ks.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("standard layout");
    for s_i in 0..samples {
        for o in 0..o_ch {
            let acc = &mut os[(s_i * o_ch + o) * n..(s_i * o_ch + o + 1) * n];
            for i in 0..i_ch {
                let xrow = &xs[(s_i * i_ch + i) * n..(s_i * i_ch + i + 1) * n];
                let krow = &ks[(i * o_ch + o) * n..(i * o_ch + o + 1) * n];
                fma_slices(acc, xrow, krow);
            }
        }
    }
    out
}

fn mix_backward_data(dout: &ArrayView3<f64>, k: &ArrayView3<f64>) -> Array3<f64> {
    let (samples, o_ch, n) = dout.dim();
    let i_ch = k.dim().0;
    let mut din = Array3::zeros((samples, i_ch, n));
    let g = dout.as_standard_layout();
    let gs = g.as_slice().expect("standard layout");
    let ks = k.as_standard_layout();
    let ks = ks.as_slice().expect("standard layout");
    let ds = din.as_slice_mut().expect("standard layout");
    for s_i in 0..samples {
        for i in 0..i_ch {
            let acc = &mut ds[(s_i * i_ch + i) * n..(s_i * i_ch + i + 1) * n];
            for o in 0..o_ch {
                let grow = &gs[(s_i * o_ch + o) * n..(s_i * o_ch + o + 1) * n];
                let krow = &ks[(i * o_ch + o) * n..(i * o_ch + o + 1) * n];
                fma_slices(acc, grow, krow);
            }
        }
    }
    din
}

fn mix_backward_filters(input: &ArrayView3<f64>, dout: &ArrayView3<f64>) -> Array3<f64> {
    let (samples, i_ch, n) = input.dim();
    let o_ch = dout.dim().1;
    let mut dk = Array3::zeros((i_ch, o_ch, n));
    let x = input.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let g = dout.as_standard_layout();
    let gs = g.as_slice().expect("standard layout");
    let ds = dk.as_slice_mut().expect("standard layout");
    for i in 0..i_ch {
        for o in 0..o_ch {
            let acc = &mut ds[(i * o_ch + o) * n..(i * o_ch + o + 1) * n];
            // Fixed sample order keeps the reduction deterministic.
            for s_i in 0..samples {
                let xrow = &xs[(s_i * i_ch + i) * n..(s_i * i_ch + i + 1) * n];
                let grow = &gs[(s_i * o_ch + o) * n..(s_i * o_ch + o + 1) * n];
                fma_slices(acc, xrow, grow);
            }
        }
    }
    dk
}

/// Flat SGD-with-momentum update shared by every parameter tensor.
pub fn sgd_step(
    param: &mut [f64],
    grad: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::numerical("non-finite gradient in sgd_step", None));
    }
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
    Ok(())
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    probs
}

/// Mean softmax cross-entropy plus its logit gradient `(p − onehot)/S`.
fn softmax_cross_entropy(
    logits: &Array2<f64>,
    labels: &[u8],
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let samples = logits.nrows();
    let probs = softmax_rows(logits);
    let mut loss = 0.0;
    let mut dlogits = probs.clone();
    for (s_i, &label) in labels.iter().enumerate() {
        let c = label as usize;
        if c >= logits.ncols() {
            return Err(Error::invalid_argument(format!("label {label} out of range")));
        }
        loss -= probs[[s_i, c]].max(f64::MIN_POSITIVE).ln();
        dlogits[[s_i, c]] -= 1.0;
    }
    let scale = 1.0 / samples as f64;
    loss *= scale;
    dlogits.mapv_inplace(|v| v * scale);
    Ok((loss, probs, dlogits))
}

fn gather_batch(d: &Dataset, indices: &[usize]) -> Array3<f64> {
    let n = d.images().ncols();
    let mut out = Array3::zeros((indices.len(), 1, n));
    for (row, &idx) in indices.iter().enumerate() {
        out.slice_mut(s![row, 0, ..]).assign(&d.images().row(idx));
    }
    out
}
