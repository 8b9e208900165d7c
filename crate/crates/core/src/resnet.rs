//! The boosted model assembled as a residual network.
//!
//! Two recursions run side by side. The feature recursion carries
//! `g_{i+1} = module_i(g_i) + shortcut_i(g_i)` with an identity shortcut,
//! or a trainable linear projection where widths change. The score
//! recursion chains the shared linear classifier over max-norm-bounded
//! module outputs, `F_i = (1 - theta_i) F_{i-1} + eta * w^T bound(out_i)`
//! starting from `F_0 = 0`, so every module contributes one boosting head.
//!
//! Backpropagation comes in two variants: `backward_final` drives all
//! gradients from the last head only, while `backward_shared` sums every
//! head's loss, which routes each head's gradient into all layers feeding
//! it. Shrinkage values are updated by projected gradient descent and stay
//! inside `[0, eta]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::boost::{CompositeLoss, MaxNormBound, RegretLedger, ShrinkageState};
use crate::data::{BatchStream, Preprocessing};
use crate::error::{Error, Result};
use crate::math::{self, Matrix};
use crate::tree::{NeuralDecisionTree, TreeActivations, TreeGradients, TreeTopology};

/// Which training variant the network runs.
///
/// `Vanilla` freezes all shrinkage at zero with unit step size and trains
/// from the final head; `Shrinkage` learns the shrinkage values, still
/// training from the final head; `Shared` additionally backpropagates every
/// intermediate head through the shared classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Vanilla,
    Shrinkage,
    Shared,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Vanilla => write!(f, "vanilla"),
            Mode::Shrinkage => write!(f, "shrinkage"),
            Mode::Shared => write!(f, "shared"),
        }
    }
}

/// Dense residual block `out = W2 relu(W1 x + b1) + b2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseBlock {
    /// Row per hidden unit, `m x k`.
    pub hidden_weights: Matrix,
    pub hidden_bias: Vec<f64>,
    /// Row per output, `o x m`.
    pub output_weights: Matrix,
    pub output_bias: Vec<f64>,
}

impl DenseBlock {
    pub fn new(input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        let s1 = 1.0 / (input as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        DenseBlock {
            hidden_weights: Matrix::random_uniform(hidden, input, -s1, s1, rng),
            hidden_bias: vec![0.0; hidden],
            output_weights: Matrix::random_uniform(output, hidden, -s2, s2, rng),
            output_bias: vec![0.0; output],
        }
    }

    /// Exact identity on inputs with every coordinate above `-margin`:
    /// both weight matrices are the identity and the biases shift
    /// activations clear of the ReLU kink.
    pub fn identity(width: usize, margin: f64) -> Self {
        DenseBlock {
            hidden_weights: Matrix::identity(width),
            hidden_bias: vec![margin; width],
            output_weights: Matrix::identity(width),
            output_bias: vec![-margin; width],
        }
    }

    pub fn input_width(&self) -> usize {
        self.hidden_weights.cols()
    }

    pub fn output_width(&self) -> usize {
        self.output_weights.rows()
    }
}

/// One residual module; `Tree` optionally carries a parallel linear map on
/// its input so the module can realize the identity (and width changes)
/// even though leaf mixtures alone are piecewise constant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ResidualModule {
    Tree {
        tree: NeuralDecisionTree,
        passthrough: Option<Matrix>,
    },
    Dense(DenseBlock),
    Identity {
        width: usize,
    },
}

/// Cached per-module state from a forward pass, reused by backward.
#[derive(Debug, Clone)]
pub enum ModuleActivations {
    Tree(TreeActivations),
    Dense { hidden_pre: Vec<f64>, hidden: Vec<f64> },
    Identity,
}

/// Per-module parameter gradients.
#[derive(Debug, Clone)]
pub enum ModuleGradients {
    Tree {
        tree: TreeGradients,
        passthrough: Option<Matrix>,
    },
    Dense {
        hidden_weights: Matrix,
        hidden_bias: Vec<f64>,
        output_weights: Matrix,
        output_bias: Vec<f64>,
    },
    Identity,
}

impl ResidualModule {
    pub fn input_width(&self) -> usize {
        match self {
            ResidualModule::Tree { tree, .. } => tree.n_features(),
            ResidualModule::Dense(block) => block.input_width(),
            ResidualModule::Identity { width } => *width,
        }
    }

    pub fn output_width(&self) -> usize {
        match self {
            ResidualModule::Tree { tree, .. } => tree.output_width(),
            ResidualModule::Dense(block) => block.output_width(),
            ResidualModule::Identity { width } => *width,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ResidualModule::Tree { .. } => "neural_decision_tree",
            ResidualModule::Dense(_) => "dense_block",
            ResidualModule::Identity { .. } => "identity",
        }
    }

    /// Module-branch forward pass (no shortcut), returning cached
    /// activations for [`backward`](Self::backward).
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ModuleActivations)> {
        match self {
            ResidualModule::Tree { tree, passthrough } => {
                let acts = tree.forward(x)?;
                let mut out = acts.output.clone();
                if let Some(map) = passthrough {
                    math::add_scaled_slice(&mut out, &map.matvec(x)?, 1.0);
                }
                Ok((out, ModuleActivations::Tree(acts)))
            }
            ResidualModule::Dense(block) => {
                let mut hidden_pre = block.hidden_weights.matvec(x)?;
                math::add_scaled_slice(&mut hidden_pre, &block.hidden_bias, 1.0);
                let hidden = math::relu(&hidden_pre);
                let mut out = block.output_weights.matvec(&hidden)?;
                math::add_scaled_slice(&mut out, &block.output_bias, 1.0);
                Ok((out, ModuleActivations::Dense { hidden_pre, hidden }))
            }
            ResidualModule::Identity { width } => {
                if x.len() != *width {
                    return Err(Error::LengthMismatch {
                        op: "identity module",
                        expected: *width,
                        got: x.len(),
                    });
                }
                Ok((x.to_vec(), ModuleActivations::Identity))
            }
        }
    }

    /// Gradients of the module branch given `d loss / d out`; also returns
    /// the input gradient.
    pub fn backward(
        &self,
        x: &[f64],
        acts: &ModuleActivations,
        grad_out: &[f64],
    ) -> Result<(ModuleGradients, Vec<f64>)> {
        match (self, acts) {
            (ResidualModule::Tree { tree, passthrough }, ModuleActivations::Tree(tacts)) => {
                let tree_grads = tree.backward(x, tacts, grad_out)?;
                let mut d_input = tree_grads.input.clone();
                let d_pass = match passthrough {
                    Some(map) => {
                        math::add_scaled_slice(&mut d_input, &map.matvec_transposed(grad_out)?, 1.0);
                        Some(outer(grad_out, x))
                    }
                    None => None,
                };
                Ok((
                    ModuleGradients::Tree {
                        tree: TreeGradients {
                            input: d_input.clone(),
                            ..tree_grads
                        },
                        passthrough: d_pass,
                    },
                    d_input,
                ))
            }
            (ResidualModule::Dense(block), ModuleActivations::Dense { hidden_pre, hidden }) => {
                let d_output_weights = outer(grad_out, hidden);
                let d_output_bias = grad_out.to_vec();
                let d_hidden = block.output_weights.matvec_transposed(grad_out)?;
                let d_hidden_pre: Vec<f64> = d_hidden
                    .iter()
                    .zip(hidden_pre)
                    .map(|(g, pre)| if *pre > 0.0 { *g } else { 0.0 })
                    .collect();
                let d_hidden_weights = outer(&d_hidden_pre, x);
                let d_input = block.hidden_weights.matvec_transposed(&d_hidden_pre)?;
                Ok((
                    ModuleGradients::Dense {
                        hidden_weights: d_hidden_weights,
                        hidden_bias: d_hidden_pre,
                        output_weights: d_output_weights,
                        output_bias: d_output_bias,
                    },
                    d_input,
                ))
            }
            (ResidualModule::Identity { .. }, ModuleActivations::Identity) => {
                Ok((ModuleGradients::Identity, grad_out.to_vec()))
            }
            _ => Err(Error::Model("activation kind mismatch".into())),
        }
    }

    fn zero_gradients(&self) -> ModuleGradients {
        match self {
            ResidualModule::Tree { tree, passthrough } => ModuleGradients::Tree {
                tree: TreeGradients {
                    node_weights: Matrix::zeros(tree.node_count(), tree.n_features()),
                    bias: vec![0.0; tree.node_count()],
                    leaf_values: Matrix::zeros(tree.leaf_count(), tree.output_width()),
                    input: vec![0.0; tree.n_features()],
                },
                passthrough: passthrough
                    .as_ref()
                    .map(|m| Matrix::zeros(m.rows(), m.cols())),
            },
            ResidualModule::Dense(block) => ModuleGradients::Dense {
                hidden_weights: Matrix::zeros(
                    block.hidden_weights.rows(),
                    block.hidden_weights.cols(),
                ),
                hidden_bias: vec![0.0; block.hidden_bias.len()],
                output_weights: Matrix::zeros(
                    block.output_weights.rows(),
                    block.output_weights.cols(),
                ),
                output_bias: vec![0.0; block.output_bias.len()],
            },
            ResidualModule::Identity { .. } => ModuleGradients::Identity,
        }
    }

    fn apply_gradients(&mut self, grads: &ModuleGradients, lr: f64) -> Result<()> {
        match (self, grads) {
            (
                ResidualModule::Tree { tree, passthrough },
                ModuleGradients::Tree {
                    tree: tg,
                    passthrough: pg,
                },
            ) => {
                tree.apply_gradients(tg, lr)?;
                if let (Some(map), Some(g)) = (passthrough, pg) {
                    map.add_scaled(g, -lr)?;
                }
                Ok(())
            }
            (
                ResidualModule::Dense(block),
                ModuleGradients::Dense {
                    hidden_weights,
                    hidden_bias,
                    output_weights,
                    output_bias,
                },
            ) => {
                block.hidden_weights.add_scaled(hidden_weights, -lr)?;
                math::add_scaled_slice(&mut block.hidden_bias, hidden_bias, -lr);
                block.output_weights.add_scaled(output_weights, -lr)?;
                math::add_scaled_slice(&mut block.output_bias, output_bias, -lr);
                Ok(())
            }
            (ResidualModule::Identity { .. }, ModuleGradients::Identity) => Ok(()),
            _ => Err(Error::Model("gradient kind mismatch".into())),
        }
    }
}

fn outer(a: &[f64], b: &[f64]) -> Matrix {
    Matrix::from_fn(a.len(), b.len(), |r, c| a[r] * b[c])
}

/// Shortcut branch of a residual block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Shortcut {
    Identity,
    /// Trainable linear map, `out_width x in_width`.
    Projection(Matrix),
}

/// Applies a linear projection map to a feature vector.
pub fn projection_shortcut(map: &Matrix, g: &[f64]) -> Result<Vec<f64>> {
    map.matvec(g)
}

/// Per-head outputs of a forward pass.
#[derive(Debug, Clone)]
pub struct PredictionOutput {
    /// Partial-sum scores after each module.
    pub head_scores: Vec<Vec<f64>>,
    /// Link-inverse probabilities per head; each sums to 1 within 1e-12.
    pub head_probabilities: Vec<Vec<f64>>,
    /// Argmax of the final head's probabilities, lowest class on ties.
    pub prediction: usize,
}

/// Full parameter-gradient set for one example or one averaged batch.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub modules: Vec<ModuleGradients>,
    pub classifier: Matrix,
    pub shortcuts: Vec<Option<Matrix>>,
    pub theta: Vec<f64>,
    /// Gradient with respect to the network input.
    pub input: Vec<f64>,
    /// Loss of each head's partial sum at the evaluated parameters.
    pub head_losses: Vec<f64>,
    /// Loss of the zero score, for initial-error accounting.
    pub loss_at_zero: f64,
    /// The differentiated objective (final-head loss, or the sum over all
    /// heads in shared mode).
    pub objective: f64,
    /// Predicted class at the final head.
    pub prediction: usize,
}

impl GradientSet {
    fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        for (a, b) in self.modules.iter_mut().zip(&other.modules) {
            match (a, b) {
                (
                    ModuleGradients::Tree {
                        tree: ta,
                        passthrough: pa,
                    },
                    ModuleGradients::Tree {
                        tree: tb,
                        passthrough: pb,
                    },
                ) => {
                    ta.node_weights.add_scaled(&tb.node_weights, 1.0)?;
                    math::add_scaled_slice(&mut ta.bias, &tb.bias, 1.0);
                    ta.leaf_values.add_scaled(&tb.leaf_values, 1.0)?;
                    math::add_scaled_slice(&mut ta.input, &tb.input, 1.0);
                    if let (Some(ma), Some(mb)) = (pa, pb) {
                        ma.add_scaled(mb, 1.0)?;
                    }
                }
                (
                    ModuleGradients::Dense {
                        hidden_weights: hwa,
                        hidden_bias: hba,
                        output_weights: owa,
                        output_bias: oba,
                    },
                    ModuleGradients::Dense {
                        hidden_weights: hwb,
                        hidden_bias: hbb,
                        output_weights: owb,
                        output_bias: obb,
                    },
                ) => {
                    hwa.add_scaled(hwb, 1.0)?;
                    math::add_scaled_slice(hba, hbb, 1.0);
                    owa.add_scaled(owb, 1.0)?;
                    math::add_scaled_slice(oba, obb, 1.0);
                }
                (ModuleGradients::Identity, ModuleGradients::Identity) => {}
                _ => return Err(Error::Model("gradient kind mismatch".into())),
            }
        }
        self.classifier.add_scaled(&other.classifier, 1.0)?;
        for (a, b) in self.shortcuts.iter_mut().zip(&other.shortcuts) {
            if let (Some(ma), Some(mb)) = (a, b) {
                ma.add_scaled(mb, 1.0)?;
            }
        }
        math::add_scaled_slice(&mut self.theta, &other.theta, 1.0);
        math::add_scaled_slice(&mut self.input, &other.input, 1.0);
        math::add_scaled_slice(&mut self.head_losses, &other.head_losses, 1.0);
        self.loss_at_zero += other.loss_at_zero;
        self.objective += other.objective;
        Ok(())
    }

    fn scale(&mut self, s: f64) {
        for m in &mut self.modules {
            match m {
                ModuleGradients::Tree { tree, passthrough } => {
                    for v in tree.node_weights.as_mut_slice() {
                        *v *= s;
                    }
                    for v in &mut tree.bias {
                        *v *= s;
                    }
                    for v in tree.leaf_values.as_mut_slice() {
                        *v *= s;
                    }
                    for v in &mut tree.input {
                        *v *= s;
                    }
                    if let Some(p) = passthrough {
                        for v in p.as_mut_slice() {
                            *v *= s;
                        }
                    }
                }
                ModuleGradients::Dense {
                    hidden_weights,
                    hidden_bias,
                    output_weights,
                    output_bias,
                } => {
                    for v in hidden_weights.as_mut_slice() {
                        *v *= s;
                    }
                    for v in hidden_bias.iter_mut() {
                        *v *= s;
                    }
                    for v in output_weights.as_mut_slice() {
                        *v *= s;
                    }
                    for v in output_bias.iter_mut() {
                        *v *= s;
                    }
                }
                ModuleGradients::Identity => {}
            }
        }
        for v in self.classifier.as_mut_slice() {
            *v *= s;
        }
        for p in self.shortcuts.iter_mut().flatten() {
            for v in p.as_mut_slice() {
                *v *= s;
            }
        }
        for v in &mut self.theta {
            *v *= s;
        }
        for v in &mut self.input {
            *v *= s;
        }
        for v in &mut self.head_losses {
            *v *= s;
        }
        self.loss_at_zero *= s;
        self.objective *= s;
    }
}

struct ForwardTrace {
    /// Feature states `g_1 ..= g_{N+1}`; `g[0]` is the input.
    features: Vec<Vec<f64>>,
    raw: Vec<Vec<f64>>,
    bounded: Vec<Vec<f64>>,
    acts: Vec<ModuleActivations>,
    /// Partial sums `F_0 ..= F_N`; `scores[0]` is zero.
    scores: Vec<Vec<f64>>,
}

/// The boosted residual network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoostedResNet {
    modules: Vec<ResidualModule>,
    shortcuts: Vec<Shortcut>,
    shrinkage: ShrinkageState,
    /// Shared linear classifier, one row per class score.
    classifier: Matrix,
    loss: CompositeLoss,
    bound: MaxNormBound,
    mode: Mode,
    input_width: usize,
}

/// Construction settings for a tree-module network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub mode: Mode,
    pub modules: usize,
    pub tree_depth: usize,
    pub input_width: usize,
    pub loss: CompositeLoss,
    pub eta: f64,
    pub theta_learning_rate: f64,
    pub max_norm: f64,
    pub routing_temperature: f64,
}

impl BoostedResNet {
    /// Wires up arbitrary modules, validating widths end to end. In
    /// vanilla mode the step size is forced to 1 and shrinkage stays
    /// frozen at zero.
    pub fn from_parts(
        modules: Vec<ResidualModule>,
        shortcuts: Vec<Shortcut>,
        classifier: Matrix,
        loss: CompositeLoss,
        mode: Mode,
        eta: f64,
        theta_learning_rate: f64,
        max_norm: f64,
    ) -> Result<Self> {
        if modules.is_empty() {
            return Err(Error::Model("need at least one residual module".into()));
        }
        if shortcuts.len() != modules.len() {
            return Err(Error::LengthMismatch {
                op: "from_parts shortcuts",
                expected: modules.len(),
                got: shortcuts.len(),
            });
        }
        let input_width = modules[0].input_width();
        let mut width = input_width;
        for (i, (module, shortcut)) in modules.iter().zip(&shortcuts).enumerate() {
            if module.input_width() != width {
                return Err(Error::Model(format!(
                    "module {i} expects width {}, feature recursion carries {width}",
                    module.input_width()
                )));
            }
            let out = module.output_width();
            match shortcut {
                Shortcut::Identity => {
                    if out != width {
                        return Err(Error::Model(format!(
                            "module {i} maps width {width} to {out} without a projection configured"
                        )));
                    }
                }
                Shortcut::Projection(map) => {
                    if map.cols() != width || map.rows() != out {
                        return Err(Error::Model(format!(
                            "module {i} projection is {}x{}, needs {out}x{width}",
                            map.rows(),
                            map.cols()
                        )));
                    }
                }
            }
            if classifier.cols() != out {
                return Err(Error::Model(format!(
                    "classifier consumes width {}, module {i} emits {out}",
                    classifier.cols()
                )));
            }
            width = out;
        }
        if classifier.rows() != loss.score_width() {
            return Err(Error::Model(format!(
                "classifier emits {} scores, loss expects {}",
                classifier.rows(),
                loss.score_width()
            )));
        }
        let eta = if mode == Mode::Vanilla { 1.0 } else { eta };
        let shrinkage = ShrinkageState::new(modules.len(), eta, theta_learning_rate)?;
        Ok(BoostedResNet {
            modules,
            shortcuts,
            shrinkage,
            classifier,
            loss,
            bound: MaxNormBound::new(max_norm)?,
            mode,
            input_width,
        })
    }

    /// Standard assembly: N neural decision trees over complete topologies
    /// of the given depth, identity shortcuts, and leaf width equal to the
    /// input width.
    pub fn with_tree_modules(config: &NetworkConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut modules = Vec::with_capacity(config.modules);
        for _ in 0..config.modules {
            let topology = TreeTopology::complete(config.tree_depth)?;
            let mut tree =
                NeuralDecisionTree::new(topology, config.input_width, config.input_width, rng)?;
            tree.set_routing_temperature(config.routing_temperature)?;
            modules.push(ResidualModule::Tree {
                tree,
                passthrough: None,
            });
        }
        let shortcuts = vec![Shortcut::Identity; config.modules];
        let scale = 1.0 / (config.input_width as f64).sqrt();
        let classifier = Matrix::random_uniform(
            config.loss.score_width(),
            config.input_width,
            -scale,
            scale,
            rng,
        );
        BoostedResNet::from_parts(
            modules,
            shortcuts,
            classifier,
            config.loss.clone(),
            config.mode,
            config.eta,
            config.theta_learning_rate,
            config.max_norm,
        )
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn loss(&self) -> &CompositeLoss {
        &self.loss
    }

    pub fn module_count(&self) -> usize {
        self.modules.len()
    }

    pub fn modules(&self) -> &[ResidualModule] {
        &self.modules
    }

    pub fn modules_mut(&mut self) -> &mut [ResidualModule] {
        &mut self.modules
    }

    pub fn shortcuts(&self) -> &[Shortcut] {
        &self.shortcuts
    }

    pub fn shortcuts_mut(&mut self) -> &mut [Shortcut] {
        &mut self.shortcuts
    }

    pub fn classifier(&self) -> &Matrix {
        &self.classifier
    }

    pub fn classifier_mut(&mut self) -> &mut Matrix {
        &mut self.classifier
    }

    pub fn shrinkage(&self) -> &ShrinkageState {
        &self.shrinkage
    }

    pub fn shrinkage_mut(&mut self) -> &mut ShrinkageState {
        &mut self.shrinkage
    }

    pub fn max_norm(&self) -> &MaxNormBound {
        &self.bound
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.input_width {
            return Err(Error::LengthMismatch {
                op: "network forward",
                expected: self.input_width,
                got: x.len(),
            });
        }
        let n = self.modules.len();
        let mut features = Vec::with_capacity(n + 1);
        features.push(x.to_vec());
        let mut raw = Vec::with_capacity(n);
        let mut bounded = Vec::with_capacity(n);
        let mut acts = Vec::with_capacity(n);
        let mut scores = Vec::with_capacity(n + 1);
        scores.push(vec![0.0; self.loss.score_width()]);
        let theta = self.shrinkage.theta();
        let eta = self.shrinkage.eta();
        for i in 0..n {
            let g = &features[i];
            let (out, act) = self.modules[i].forward(g)?;
            let clipped = self.bound.bound_output(&out);
            let head = self.classifier.matvec(&clipped)?;
            let mut score = Vec::with_capacity(head.len());
            for (prev, h) in scores[i].iter().zip(&head) {
                score.push((1.0 - theta[i]) * prev + eta * h);
            }
            let mut next_g = match &self.shortcuts[i] {
                Shortcut::Identity => g.clone(),
                Shortcut::Projection(map) => projection_shortcut(map, g)?,
            };
            math::add_scaled_slice(&mut next_g, &out, 1.0);
            features.push(next_g);
            raw.push(out);
            bounded.push(clipped);
            acts.push(act);
            scores.push(score);
        }
        Ok(ForwardTrace {
            features,
            raw,
            bounded,
            acts,
            scores,
        })
    }

    /// Runs the score recursion and reports every head.
    pub fn forward(&self, x: &[f64]) -> Result<PredictionOutput> {
        let trace = self.forward_trace(x)?;
        let head_scores: Vec<Vec<f64>> = trace.scores[1..].to_vec();
        let head_probabilities = head_scores
            .iter()
            .map(|s| self.loss.link_inverse(s))
            .collect::<Result<Vec<_>>>()?;
        let prediction = self.loss.predict_class(head_scores.last().unwrap())?;
        Ok(PredictionOutput {
            head_scores,
            head_probabilities,
            prediction,
        })
    }

    /// Feature states `g_1 ..= g_{N+1}` of the residual recursion.
    pub fn feature_states(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward_trace(x)?.features)
    }

    /// Max-norm-bounded module outputs along the feature recursion, the
    /// weak-learner contributions the classifier sees.
    pub fn bounded_module_outputs(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward_trace(x)?.bounded)
    }

    /// Backpropagates every head's loss; shared mode only.
    pub fn backward_shared(&self, x: &[f64], label: usize) -> Result<GradientSet> {
        if self.mode != Mode::Shared {
            return Err(Error::Model(format!(
                "backward_shared requires shared mode, network is {}",
                self.mode
            )));
        }
        let weights = vec![1.0; self.modules.len()];
        self.backward_weighted(x, label, &weights)
    }

    /// Backpropagates the final head's loss only; vanilla and shrinkage
    /// modes.
    pub fn backward_final(&self, x: &[f64], label: usize) -> Result<GradientSet> {
        if self.mode == Mode::Shared {
            return Err(Error::Model(
                "backward_final requires vanilla or shrinkage mode".into(),
            ));
        }
        let mut weights = vec![0.0; self.modules.len()];
        *weights.last_mut().unwrap() = 1.0;
        self.backward_weighted(x, label, &weights)
    }

    /// Mode-appropriate backward pass.
    pub fn backward(&self, x: &[f64], label: usize) -> Result<GradientSet> {
        match self.mode {
            Mode::Shared => self.backward_shared(x, label),
            _ => self.backward_final(x, label),
        }
    }

    fn backward_weighted(
        &self,
        x: &[f64],
        label: usize,
        head_weights: &[f64],
    ) -> Result<GradientSet> {
        let n = self.modules.len();
        let trace = self.forward_trace(x)?;
        let theta = self.shrinkage.theta();
        let eta = self.shrinkage.eta();
        let train_theta = self.mode != Mode::Vanilla;

        let mut head_losses = Vec::with_capacity(n);
        for i in 0..n {
            head_losses.push(self.loss.value(&trace.scores[i + 1], label)?);
        }
        let loss_at_zero = self.loss.value(&trace.scores[0], label)?;
        let objective = head_losses
            .iter()
            .zip(head_weights)
            .map(|(l, w)| l * w)
            .sum();
        let prediction = self.loss.predict_class(trace.scores.last().unwrap())?;

        let mut module_grads: Vec<ModuleGradients> =
            self.modules.iter().map(|m| m.zero_gradients()).collect();
        let mut classifier_grad = Matrix::zeros(self.classifier.rows(), self.classifier.cols());
        let mut shortcut_grads: Vec<Option<Matrix>> = self
            .shortcuts
            .iter()
            .map(|s| match s {
                Shortcut::Identity => None,
                Shortcut::Projection(map) => Some(Matrix::zeros(map.rows(), map.cols())),
            })
            .collect();
        let mut theta_grads = vec![0.0; n];

        // running d objective / d F_{i+1}
        let mut d_score = vec![0.0; self.loss.score_width()];
        // d objective / d g_{i+1} (nothing consumes the final feature state)
        let mut d_feature_next = vec![0.0; trace.features[n].len()];
        for i in (0..n).rev() {
            if head_weights[i] != 0.0 {
                let grad = self.loss.gradient(&trace.scores[i + 1], label)?;
                math::add_scaled_slice(&mut d_score, &grad, head_weights[i]);
            }
            if train_theta {
                theta_grads[i] = -math::dot(&d_score, &trace.scores[i]);
            }
            // score head: F_{i+1} += eta * classifier . bounded_i
            for (c, &ds) in d_score.iter().enumerate() {
                if ds != 0.0 {
                    for (f, &b) in trace.bounded[i].iter().enumerate() {
                        let cur = classifier_grad.get(c, f);
                        classifier_grad.set(c, f, cur + eta * ds * b);
                    }
                }
            }
            let d_bounded = {
                let mut v = self.classifier.matvec_transposed(&d_score)?;
                for val in &mut v {
                    *val *= eta;
                }
                v
            };
            let mut d_raw = self.bound.bound_backward(&trace.raw[i], &d_bounded);
            // feature recursion: g_{i+1} = raw_i + shortcut(g_i)
            math::add_scaled_slice(&mut d_raw, &d_feature_next, 1.0);
            let (grads, d_input) =
                self.modules[i].backward(&trace.features[i], &trace.acts[i], &d_raw)?;
            module_grads[i] = grads;
            let mut d_feature = d_input;
            match &self.shortcuts[i] {
                Shortcut::Identity => {
                    math::add_scaled_slice(&mut d_feature, &d_feature_next, 1.0);
                }
                Shortcut::Projection(map) => {
                    let d_map = outer(&d_feature_next, &trace.features[i]);
                    shortcut_grads[i]
                        .as_mut()
                        .expect("projection gradient slot")
                        .add_scaled(&d_map, 1.0)?;
                    math::add_scaled_slice(
                        &mut d_feature,
                        &map.matvec_transposed(&d_feature_next)?,
                        1.0,
                    );
                }
            }
            for v in &mut d_score {
                *v *= 1.0 - theta[i];
            }
            d_feature_next = d_feature;
        }

        Ok(GradientSet {
            modules: module_grads,
            classifier: classifier_grad,
            shortcuts: shortcut_grads,
            theta: theta_grads,
            input: d_feature_next,
            head_losses,
            loss_at_zero,
            objective,
            prediction,
        })
    }

    /// Applies an averaged gradient set: SGD on module, classifier, and
    /// projection parameters; projected gradient descent on shrinkage.
    pub fn apply_gradients(&mut self, grads: &GradientSet, learning_rate: f64) -> Result<()> {
        for (module, g) in self.modules.iter_mut().zip(&grads.modules) {
            module.apply_gradients(g, learning_rate)?;
        }
        self.classifier.add_scaled(&grads.classifier, -learning_rate)?;
        for (shortcut, g) in self.shortcuts.iter_mut().zip(&grads.shortcuts) {
            if let (Shortcut::Projection(map), Some(dg)) = (shortcut, g) {
                map.add_scaled(dg, -learning_rate)?;
            }
        }
        if self.mode != Mode::Vanilla {
            for (i, &g) in grads.theta.iter().enumerate() {
                self.shrinkage.update(i, g);
            }
        }
        Ok(())
    }

    /// One averaged mini-batch step at the current parameters.
    pub fn train_batch(
        &mut self,
        features: &Matrix,
        labels: &[usize],
        learning_rate: f64,
        ledger: &mut RegretLedger,
    ) -> Result<BatchStats> {
        if features.rows() != labels.len() {
            return Err(Error::LengthMismatch {
                op: "train_batch",
                expected: features.rows(),
                got: labels.len(),
            });
        }
        if features.rows() == 0 {
            return Err(Error::EmptyInput("train_batch"));
        }
        let mut total: Option<GradientSet> = None;
        let mut correct = 0usize;
        for (r, &label) in labels.iter().enumerate() {
            let grads = self.backward(features.row(r), label)?;
            ledger.record(
                &grads.head_losses,
                *grads.head_losses.last().unwrap(),
                grads.loss_at_zero,
            );
            if grads.prediction == label {
                correct += 1;
            }
            match &mut total {
                None => total = Some(grads),
                Some(t) => t.add_assign(&grads)?,
            }
        }
        let mut total = total.unwrap();
        total.scale(1.0 / labels.len() as f64);
        self.apply_gradients(&total, learning_rate)?;
        Ok(BatchStats {
            examples: labels.len(),
            mean_final_loss: *total.head_losses.last().unwrap(),
            correct,
        })
    }

    /// Streams mini-batches for the given number of epochs. Parameters are
    /// untouched when `epochs` is zero; an epoch that yields no batches is
    /// an error.
    pub fn train_stream<S: BatchStream>(
        &mut self,
        stream: &mut S,
        epochs: usize,
        learning_rate: f64,
    ) -> Result<TrainingReport> {
        let mut report = TrainingReport {
            epochs: Vec::with_capacity(epochs),
            theta_final: self.shrinkage.theta().to_vec(),
            ledger: RegretLedger::new(self.modules.len()),
        };
        for epoch in 0..epochs {
            stream.reset(epoch as u64)?;
            let mut examples = 0usize;
            let mut correct = 0usize;
            let mut loss_sum = 0.0;
            while let Some(batch) = stream.next_batch()? {
                let stats = self.train_batch(
                    &batch.features,
                    &batch.labels,
                    learning_rate,
                    &mut report.ledger,
                )?;
                examples += stats.examples;
                correct += stats.correct;
                loss_sum += stats.mean_final_loss * stats.examples as f64;
            }
            if examples == 0 {
                return Err(Error::EmptyInput("training stream"));
            }
            report.epochs.push(EpochStats {
                mean_loss: loss_sum / examples as f64,
                accuracy: correct as f64 / examples as f64,
            });
        }
        report.theta_final = self.shrinkage.theta().to_vec();
        Ok(report)
    }

    /// Accuracy and per-class confusion counts over a stream.
    pub fn evaluate<S: BatchStream>(&self, stream: &mut S) -> Result<EvalStats> {
        let classes = self.loss.class_count();
        let mut confusion = vec![vec![0u64; classes]; classes];
        let mut correct = 0u64;
        let mut total = 0u64;
        stream.reset(0)?;
        while let Some(batch) = stream.next_batch()? {
            for (r, &label) in batch.labels.iter().enumerate() {
                let out = self.forward(batch.features.row(r))?;
                confusion[label][out.prediction] += 1;
                if out.prediction == label {
                    correct += 1;
                }
                total += 1;
            }
        }
        if total == 0 {
            return Err(Error::EmptyInput("evaluation stream"));
        }
        Ok(EvalStats {
            accuracy: correct as f64 / total as f64,
            confusion,
            examples: total,
        })
    }

    /// Serializes the model (with optional preprocessing context) to
    /// versioned JSON. Floats round-trip exactly.
    pub fn save_checkpoint(&self, path: &std::path::Path, preprocessing: Option<&Preprocessing>) -> Result<()> {
        let doc = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            model: self.clone(),
            preprocessing: preprocessing.cloned(),
        };
        let json = serde_json::to_string_pretty(&doc)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &std::path::Path) -> Result<(Self, Option<Preprocessing>)> {
        let json = std::fs::read_to_string(path)?;
        let doc: Checkpoint = serde_json::from_str(&json)?;
        if doc.format_version != CHECKPOINT_VERSION {
            return Err(Error::Model(format!(
                "unsupported checkpoint version {}",
                doc.format_version
            )));
        }
        Ok((doc.model, doc.preprocessing))
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    model: BoostedResNet,
    preprocessing: Option<Preprocessing>,
}

#[derive(Debug, Clone)]
pub struct BatchStats {
    pub examples: usize,
    pub mean_final_loss: f64,
    pub correct: usize,
}

/// Accuracy and per-class confusion counts; `confusion[actual][predicted]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalStats {
    pub accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
    pub examples: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// Per-epoch statistics plus final shrinkage values and the cumulative
/// loss ledger.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: Vec<EpochStats>,
    pub theta_final: Vec<f64>,
    pub ledger: RegretLedger,
}
