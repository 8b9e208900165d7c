//! Online gradient boosting of feature representations as a residual
//! network.
//!
//! A [`resnet::BoostedResNet`] stacks residual modules (neural decision
//! trees, dense blocks, or identities) and treats each module, composed
//! with a shared linear classifier, as one weak learner of an online
//! boosting chain. Partial sums carry learnable shrinkage factors projected
//! into `[0, eta]`, module outputs are max-norm bounded, and training
//! consumes mini-batches from a stream so memory stays independent of
//! dataset size.
//!
//! Every analytic gradient is verified against central finite differences
//! ([`math::finite_diff_grad`]); [`checks`] packages the property suite
//! (identity parameterizations, the feature-doubling recursion,
//! weak-learner edges, Lipschitz probes) behind machine-readable reports.
//!
//! The `resboost` binary exposes training, evaluation, classical-tree
//! conversion, and the check suite on the command line.

pub mod boost;
pub mod checks;
pub mod data;
pub mod error;
pub mod math;
pub mod resnet;
pub mod tree;

pub use boost::{
    combine_partial, learner_descent_signal, CompositeLoss, MaxNormBound, RegretLedger,
    ShrinkageState,
};
pub use data::{
    scan_manifest, split_70_30, Batch, BatchStream, DatasetManifest, DatasetStream, LabelColumn,
    ManifestOptions, MemoryStream, Preprocessing, Split,
};
pub use error::{Error, Result};
pub use math::{
    finite_diff_grad, relu, stable_log_softmax, stable_softmax, GradCheckReport, Matrix,
};
pub use resnet::{
    projection_shortcut, BoostedResNet, DenseBlock, Mode, NetworkConfig, PredictionOutput,
    ResidualModule, Shortcut, TrainingReport,
};
pub use tree::{
    build_routing_matrix, NeuralDecisionTree, RoutingMatrix, TreeImportSpec, TreeTopology,
};
