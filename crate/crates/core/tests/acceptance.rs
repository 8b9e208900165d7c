//! Acceptance suite. Each test prints one pass/fail line for one
//! criterion; run with `cargo test --test acceptance -- --nocapture` to see
//! the lines for passing criteria too.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use resboost::boost::{CompositeLoss, ShrinkageState};
use resboost::data::{split_70_30, MemoryStream, Split};
use resboost::math::{self, Matrix};
use resboost::resnet::{
    BoostedResNet, DenseBlock, Mode, ModuleGradients, NetworkConfig, ResidualModule, Shortcut,
};
use resboost::tree::{NeuralDecisionTree, TreeImportSpec, TreeTopology};

fn pass(criterion: u32, name: &str, detail: String) {
    println!("ACCEPTANCE {criterion} ({name}): PASS - {detail}");
}

/// Criterion 1: analytic vs. central finite-difference gradients for every
/// differentiable layer, relative error <= 1e-5, >= 100 random
/// configurations per layer, under a minute.
#[test]
fn criterion_01_gradient_correctness() {
    let started = std::time::Instant::now();
    let tol = 1e-5;
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC1);
    let mut worst: f64 = 0.0;

    // tree layer: d output . probe / d {weights, bias, leaf values}
    for trial in 0..100 {
        let depth = 1 + trial % 3;
        let topology = TreeTopology::complete(depth).unwrap();
        let (k, c) = (2 + trial % 3, 1 + trial % 3);
        let mut tree = NeuralDecisionTree::new(topology, k, c, &mut rng).unwrap();
        for v in tree.leaf_values_mut().as_mut_slice() {
            *v = rng.random_range(-1.0..1.0);
        }
        for b in tree.bias_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
        let x: Vec<f64> = (0..k).map(|_| rng.random_range(-1.5..1.5)).collect();
        let probe: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let acts = tree.forward(&x).unwrap();
        let grads = tree.backward(&x, &acts, &probe).unwrap();

        let mut flat = tree.node_weights().as_slice().to_vec();
        flat.extend_from_slice(tree.bias());
        flat.extend_from_slice(tree.leaf_values().as_slice());
        let mut analytic = grads.node_weights.as_slice().to_vec();
        analytic.extend_from_slice(&grads.bias);
        analytic.extend_from_slice(grads.leaf_values.as_slice());
        let (nw, nb) = (k * tree.node_count(), tree.node_count());
        let base = tree.clone();
        let f = |vals: &[f64]| {
            let mut t = base.clone();
            t.node_weights_mut().as_mut_slice().copy_from_slice(&vals[..nw]);
            t.bias_mut().copy_from_slice(&vals[nw..nw + nb]);
            t.leaf_values_mut()
                .as_mut_slice()
                .copy_from_slice(&vals[nw + nb..]);
            math::dot(&t.forward(&x).unwrap().output, &probe)
        };
        let rep = math::check_gradient(f, &flat, &analytic, h, tol).unwrap();
        assert!(rep.passed, "tree trial {trial}: {}", rep.max_relative_error);
        worst = worst.max(rep.max_relative_error);
    }

    // dense block, projection shortcut, shrinkage chain, and composite
    // losses, all through the full network objective
    for trial in 0..100u64 {
        let mut net_rng = ChaCha8Rng::seed_from_u64(trial);
        let dense = DenseBlock::new(3, 4, 4, &mut net_rng);
        let tree_topology = TreeTopology::complete(2).unwrap();
        let mut tree = NeuralDecisionTree::new(tree_topology, 4, 4, &mut net_rng).unwrap();
        for v in tree.leaf_values_mut().as_mut_slice() {
            *v = net_rng.random_range(-0.6..0.6);
        }
        let loss = if trial % 2 == 0 {
            CompositeLoss::SoftmaxCrossEntropy { classes: 3 }
        } else {
            CompositeLoss::SoftmaxCrossEntropy { classes: 2 }
        };
        let classes = loss.class_count();
        let classifier = Matrix::random_uniform(classes, 4, -0.7, 0.7, &mut net_rng);
        let projection = Matrix::random_uniform(4, 3, -0.5, 0.5, &mut net_rng);
        let mut net = BoostedResNet::from_parts(
            vec![ResidualModule::Dense(dense), ResidualModule::Tree { tree, passthrough: None }],
            vec![Shortcut::Projection(projection), Shortcut::Identity],
            classifier,
            loss,
            Mode::Shrinkage,
            0.8,
            0.01,
            4.0,
        )
        .unwrap();
        let theta: Vec<f64> = (0..2).map(|_| net_rng.random_range(0.1..0.7)).collect();
        *net.shrinkage_mut() = ShrinkageState::restore(2, 0.8, 0.01, theta).unwrap();

        let x: Vec<f64> = (0..3).map(|_| net_rng.random_range(-1.0..1.0)).collect();
        let label = net_rng.random_range(0..classes);
        let grads = net.backward(&x, label).unwrap();
        let objective = |n: &BoostedResNet| {
            let out = n.forward(&x).unwrap();
            n.loss().value(out.head_scores.last().unwrap(), label).unwrap()
        };

        // dense layer
        if let (ModuleGradients::Dense { hidden_weights, hidden_bias, output_weights, output_bias }, ResidualModule::Dense(block)) =
            (&grads.modules[0], &net.modules()[0])
        {
            let mut analytic = hidden_weights.as_slice().to_vec();
            analytic.extend_from_slice(hidden_bias);
            analytic.extend_from_slice(output_weights.as_slice());
            analytic.extend_from_slice(output_bias);
            let mut base = block.hidden_weights.as_slice().to_vec();
            base.extend_from_slice(&block.hidden_bias);
            base.extend_from_slice(block.output_weights.as_slice());
            base.extend_from_slice(&block.output_bias);
            let (hw, hb, ow) = (12, 4, 16);
            let f = |vals: &[f64]| {
                let mut n = net.clone();
                if let ResidualModule::Dense(b) = &mut n.modules_mut()[0] {
                    b.hidden_weights.as_mut_slice().copy_from_slice(&vals[..hw]);
                    b.hidden_bias.copy_from_slice(&vals[hw..hw + hb]);
                    b.output_weights.as_mut_slice().copy_from_slice(&vals[hw + hb..hw + hb + ow]);
                    b.output_bias.copy_from_slice(&vals[hw + hb + ow..]);
                }
                objective(&n)
            };
            let rep = math::check_gradient(f, &base, &analytic, h, tol).unwrap();
            assert!(rep.passed, "dense trial {trial}: {}", rep.max_relative_error);
            worst = worst.max(rep.max_relative_error);
        } else {
            panic!("module 0 should be dense");
        }

        // projection shortcut
        if let (Some(pg), Shortcut::Projection(map)) = (&grads.shortcuts[0], &net.shortcuts()[0]) {
            let f = |vals: &[f64]| {
                let mut n = net.clone();
                if let Shortcut::Projection(m) = &mut n.shortcuts_mut()[0] {
                    m.as_mut_slice().copy_from_slice(vals);
                }
                objective(&n)
            };
            let rep =
                math::check_gradient(f, map.as_slice(), pg.as_slice(), h, tol).unwrap();
            assert!(rep.passed, "projection trial {trial}: {}", rep.max_relative_error);
            worst = worst.max(rep.max_relative_error);
        } else {
            panic!("shortcut 0 should be a projection");
        }

        // shrinkage chain
        let f = |vals: &[f64]| {
            let mut n = net.clone();
            *n.shrinkage_mut() = ShrinkageState::restore(2, 0.8, 0.01, vals.to_vec()).unwrap();
            objective(&n)
        };
        let rep =
            math::check_gradient(f, net.shrinkage().theta(), &grads.theta, h, tol).unwrap();
        assert!(rep.passed, "shrinkage trial {trial}: {}", rep.max_relative_error);
        worst = worst.max(rep.max_relative_error);
    }

    // composite losses on their own
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC2);
    for trial in 0..100 {
        let loss = if trial % 2 == 0 {
            CompositeLoss::Logistic
        } else {
            CompositeLoss::SoftmaxCrossEntropy { classes: 5 }
        };
        let scores: Vec<f64> = (0..loss.score_width())
            .map(|_| rng.random_range(-4.0..4.0))
            .collect();
        let label = rng.random_range(0..loss.class_count());
        let analytic = loss.gradient(&scores, label).unwrap();
        let f = |s: &[f64]| loss.value(s, label).unwrap();
        let rep = math::check_gradient(f, &scores, &analytic, 1e-6, 1e-6).unwrap();
        assert!(rep.passed, "loss trial {trial}: {}", rep.max_relative_error);
        worst = worst.max(rep.max_relative_error);
    }

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 60,
        "gradient checks took {elapsed:?}, budget is one minute"
    );
    pass(
        1,
        "gradient correctness",
        format!("worst relative error {worst:.3e} across layers in {elapsed:?}"),
    );
}

/// Criterion 2: leaf path probabilities normalize to 1 within 1e-9 and
/// match the brute-force per-node product on 10^4 random (tree, input)
/// pairs.
#[test]
fn criterion_02_routing_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC3);
    let mut worst_sum: f64 = 0.0;
    let mut worst_prob: f64 = 0.0;
    for trial in 0..10_000 {
        let topology = match trial % 4 {
            0 => TreeTopology::complete(1).unwrap(),
            1 => TreeTopology::complete(2).unwrap(),
            2 => TreeTopology::complete(3).unwrap(),
            _ => TreeTopology::chain(3 + trial % 5).unwrap(),
        };
        let k = 2 + trial % 4;
        let mut tree = NeuralDecisionTree::new(topology, k, 2, &mut rng).unwrap();
        for v in tree.node_weights_mut().as_mut_slice() {
            *v = rng.random_range(-3.0..3.0);
        }
        for b in tree.bias_mut() {
            *b = rng.random_range(-2.0..2.0);
        }
        tree.set_routing_temperature(rng.random_range(0.3..3.0)).unwrap();
        let x: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let acts = tree.forward(&x).unwrap();
        let total: f64 = acts.leaf_logprob.iter().map(|l| l.exp()).sum();
        worst_sum = worst_sum.max((total - 1.0).abs());

        // brute-force oracle: per-leaf product of per-node pairwise
        // routing probabilities along the topology paths
        let scores: Vec<f64> = (0..tree.node_count())
            .map(|i| math::dot(tree.node_weights().row(i), &x) + tree.bias()[i])
            .collect();
        for (leaf, path) in tree.topology().leaf_paths().iter().enumerate() {
            let mut product = 1.0;
            for &(node, positive) in path {
                let p = math::sigmoid(2.0 * tree.routing_temperature() * scores[node]);
                product *= if positive { p } else { 1.0 - p };
            }
            worst_prob = worst_prob.max((acts.leaf_logprob[leaf].exp() - product).abs());
        }
    }
    assert!(worst_sum <= 1e-9, "normalization off by {worst_sum}");
    assert!(worst_prob <= 1e-9, "path product off by {worst_prob}");
    pass(
        2,
        "routing normalization",
        format!("max |sum-1| {worst_sum:.3e}, max oracle gap {worst_prob:.3e} over 10^4 pairs"),
    );
}

/// Criterion 3: import + deterministic forward matches an independent
/// classical decision-tree evaluator on 100% of rows with margin >= 1e-9,
/// for >= 10 random trees up to depth 4.
#[test]
fn criterion_03_classical_tree_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC4);
    let mut rows_checked = 0u64;
    for trial in 0..12 {
        let depth = 1 + trial % 4;
        let n_features = 3 + trial % 3;
        let spec = random_axis_spec(depth, n_features, &mut rng);
        let tree = NeuralDecisionTree::import(&spec).unwrap();
        let mut checked = 0;
        while checked < 200 {
            let row: Vec<f64> = (0..n_features).map(|_| rng.random_range(-1.5..1.5)).collect();
            // keep a margin from every threshold
            let near = spec
                .nodes
                .iter()
                .any(|n| (row[n.feature_index] - n.threshold).abs() < 1e-9);
            if near {
                continue;
            }
            let (leaf, _) = tree.forward_deterministic(&row).unwrap();
            let expected = classical_oracle(&spec, &row);
            assert_eq!(leaf, expected, "trial {trial} row {row:?}");
            checked += 1;
            rows_checked += 1;
        }
    }
    pass(
        3,
        "classical tree equivalence",
        format!("12 trees x 200 rows agree ({rows_checked} rows total)"),
    );
}

/// Test-local classical evaluator: walks the import document directly and
/// returns the position of the reached leaf.
fn classical_oracle(spec: &TreeImportSpec, row: &[f64]) -> usize {
    let root = spec
        .nodes
        .iter()
        .find(|n| !spec.nodes.iter().any(|m| m.left == n.id || m.right == n.id))
        .unwrap();
    let mut at = root;
    loop {
        let next = if row[at.feature_index] >= at.threshold {
            at.left
        } else {
            at.right
        };
        if let Some(node) = spec.nodes.iter().find(|n| n.id == next) {
            at = node;
        } else {
            return spec.leaves.iter().position(|l| l.id == next).unwrap();
        }
    }
}

fn random_axis_spec(depth: usize, n_features: usize, rng: &mut ChaCha8Rng) -> TreeImportSpec {
    use resboost::tree::{LeafSpec, NodeSpec};
    let n = (1usize << depth) - 1;
    let nodes = (0..n)
        .map(|i| NodeSpec {
            id: i as u64,
            feature_index: rng.random_range(0..n_features),
            threshold: rng.random_range(-1.0..1.0),
            left: if 2 * i + 1 < n { (2 * i + 1) as u64 } else { (2 * i + 1 + n) as u64 },
            right: if 2 * i + 2 < n { (2 * i + 2) as u64 } else { (2 * i + 2 + n) as u64 },
        })
        .collect();
    let leaves = (n..=2 * n)
        .map(|h| resboost::tree::LeafSpec {
            id: (h + n) as u64,
            value: vec![rng.random_range(-1.0..1.0)],
        })
        .collect::<Vec<LeafSpec>>();
    TreeImportSpec { n_features, nodes, leaves }
}

/// Criterion 4: the doubling recursion holds exactly (1e-9) for identity
/// modules up to 8 blocks and within 1e-5 for temperature-tuned tree
/// identities up to 3 blocks.
#[test]
fn criterion_04_doubling_recursion() {
    use resboost::checks::{check_doubling_recursion, DoublingKind};
    let identity = check_doubling_recursion(8, DoublingKind::Identity, 7).unwrap();
    assert!(identity.passed, "identity doubling error {}", identity.measured);
    assert!(identity.measured <= 1e-9);
    let tuned = check_doubling_recursion(3, DoublingKind::TunedTree, 7).unwrap();
    assert!(tuned.passed, "tree doubling error {}", tuned.measured);
    assert!(tuned.measured <= 1e-5);
    pass(
        4,
        "doubling recursion",
        format!(
            "identity error {:.3e} (k=8), tuned tree error {:.3e} (k=3)",
            identity.measured, tuned.measured
        ),
    );
}

/// Criterion 5: vanilla forward equals the explicit summation of
/// classifier-mapped bounded module outputs within 1e-12.
#[test]
fn criterion_05_vanilla_reduction() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC5);
    let config = NetworkConfig {
        mode: Mode::Vanilla,
        modules: 5,
        tree_depth: 2,
        input_width: 4,
        loss: CompositeLoss::SoftmaxCrossEntropy { classes: 3 },
        eta: 1.0,
        theta_learning_rate: 0.01,
        max_norm: 5.0,
        routing_temperature: 1.0,
    };
    let mut net = BoostedResNet::with_tree_modules(&config, &mut rng).unwrap();
    for module in net.modules_mut() {
        if let ResidualModule::Tree { tree, .. } = module {
            for v in tree.leaf_values_mut().as_mut_slice() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
    }
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
        let out = net.forward(&x).unwrap();
        let mut summed = vec![0.0; 3];
        for bounded in net.bounded_module_outputs(&x).unwrap() {
            let head = net.classifier().matvec(&bounded).unwrap();
            for (s, h) in summed.iter_mut().zip(&head) {
                *s += h;
            }
        }
        for (a, b) in out.head_scores.last().unwrap().iter().zip(&summed) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst <= 1e-12, "vanilla reduction gap {worst}");
    pass(5, "vanilla reduction", format!("max gap {worst:.3e} over 200 inputs"));
}

/// Criterion 6: shrinkage stays inside [0, eta] exactly through >= 10^4
/// adversarial updates.
#[test]
fn criterion_06_theta_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC6);
    let eta = 0.37;
    let mut state = ShrinkageState::new(8, eta, 0.05).unwrap();
    for step in 0..20_000 {
        let i = rng.random_range(0..8);
        let grad = match step % 4 {
            0 => rng.random_range(-1e9..1e9),
            1 => f64::MAX / 1e3,
            2 => -f64::MAX / 1e3,
            _ => rng.random_range(-1.0..1.0),
        };
        state.update(i, grad);
        for &t in state.theta() {
            assert!((0.0..=eta).contains(&t), "theta {t} left [0, {eta}]");
        }
    }
    pass(6, "theta projection", "20000 adversarial updates stayed in [0, eta]".into());
}

/// Criterion 7: empirical Lipschitz ratio of the logistic composite loss
/// stays at or below 1 + 1e-9 over 10^5 sampled pairs.
#[test]
fn criterion_07_lipschitz_probe() {
    let report = resboost::checks::check_logistic_composite_lipschitz(100_000, 0xACC7).unwrap();
    assert!(report.passed, "ratio {}", report.measured);
    pass(
        7,
        "lipschitz probe",
        format!("empirical ratio {:.12} <= 1 + 1e-9", report.measured),
    );
}

fn uci_accuracy(
    data: &str,
    mode: Mode,
    seed: u64,
) -> (f64, f64) {
    use resboost::data::{scan_manifest, DatasetStream, LabelColumn, ManifestOptions};
    let options = ManifestOptions {
        label_column: LabelColumn::Name("class".into()),
        split_seed: seed,
        ..ManifestOptions::default()
    };
    let manifest = scan_manifest(data, &options).unwrap();
    let config = NetworkConfig {
        mode,
        modules: 15,
        tree_depth: 5,
        input_width: manifest.n_features(),
        loss: CompositeLoss::SoftmaxCrossEntropy { classes: manifest.n_classes() },
        eta: 0.2,
        theta_learning_rate: 0.01,
        max_norm: 5.0,
        routing_temperature: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = BoostedResNet::with_tree_modules(&config, &mut rng).unwrap();
    let mut train =
        DatasetStream::new(&manifest, Split::Train, 32, seed, Some(32 * 32)).unwrap();
    net.train_stream(&mut train, 200, 0.5).unwrap();
    let train_acc = net.evaluate(&mut train).unwrap().accuracy;
    let mut test = DatasetStream::new(&manifest, Split::Test, 32, seed, None).unwrap();
    let test_acc = net.evaluate(&mut test).unwrap().accuracy;
    (train_acc, test_acc)
}

/// Criterion 8: UCI reproduction at paper scale (15 trees, depth 5, 200
/// epochs), test accuracy within +-0.08 of the reported table values.
#[test]
fn criterion_08_uci_reproduction() {
    let started = std::time::Instant::now();
    let data_dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data");
    let cases: [(&str, Mode, f64); 5] = [
        ("glass.csv", Mode::Shrinkage, 0.6719),
        ("yeast.csv", Mode::Shrinkage, 0.5910),
        ("sat.csv", Mode::Shrinkage, 0.8710),
        ("glass.csv", Mode::Shared, 0.5781),
        ("yeast.csv", Mode::Shared, 0.4876),
    ];
    let mut summary = Vec::new();
    for (file, mode, reported) in cases {
        let path = format!("{data_dir}/{file}");
        let per_dataset = std::time::Instant::now();
        let (_, test_acc) = uci_accuracy(&path, mode, 1);
        let gap = (test_acc - reported).abs();
        assert!(
            gap <= 0.08,
            "{file} {mode:?}: test accuracy {test_acc:.4} vs reported {reported:.4} (gap {gap:.4} > 0.08)"
        );
        assert!(
            per_dataset.elapsed().as_secs() < 15 * 60,
            "{file} exceeded the 15-minute budget"
        );
        summary.push(format!("{file}/{mode:?} {test_acc:.4} (paper {reported:.4})"));
    }
    pass(
        8,
        "uci reproduction",
        format!("{} in {:?}", summary.join(", "), started.elapsed()),
    );
}

fn blobs(n: usize, seed: u64) -> (Matrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    while labels.len() < n {
        let class = rng.random_bool(0.5);
        let (cx, cy) = if class { (0.8, 0.8) } else { (-0.8, -0.8) };
        let x = cx + gaussian(&mut rng) * 0.55;
        let y = cy + gaussian(&mut rng) * 0.55;
        // reject points inside the margin band so the blobs stay linearly
        // separable
        if class && x + y < 0.15 {
            continue;
        }
        if !class && x + y > -0.15 {
            continue;
        }
        rows.push(x);
        rows.push(y);
        labels.push(class as usize);
    }
    (Matrix::from_vec(n, 2, rows).unwrap(), labels)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    let v: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    (-2.0 * u.ln()).sqrt() * v.cos()
}

fn xor_points(n: usize, seed: u64) -> (Matrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    while labels.len() < n {
        let a: f64 = rng.random_range(-1.0..1.0);
        let b: f64 = rng.random_range(-1.0..1.0);
        if a.abs() < 0.1 || b.abs() < 0.1 {
            continue;
        }
        rows.push(a);
        rows.push(b);
        labels.push(((a > 0.0) ^ (b > 0.0)) as usize);
    }
    (Matrix::from_vec(n, 2, rows).unwrap(), labels)
}

fn train_synthetic(
    features: &Matrix,
    labels: &[usize],
    trees: usize,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> BoostedResNet {
    let config = NetworkConfig {
        mode: Mode::Shrinkage,
        modules: trees,
        tree_depth: 2,
        input_width: 2,
        loss: CompositeLoss::Logistic,
        eta: 1.0,
        theta_learning_rate: 0.01,
        max_norm: 5.0,
        routing_temperature: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = BoostedResNet::with_tree_modules(&config, &mut rng).unwrap();
    let mut stream = MemoryStream::new(features.clone(), labels.to_vec(), 32, seed).unwrap();
    net.train_stream(&mut stream, epochs, lr).unwrap();
    net
}

fn accuracy_on(net: &BoostedResNet, features: &Matrix, labels: &[usize]) -> f64 {
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(r, &l)| net.forward(features.row(*r)).unwrap().prediction == l)
        .count();
    correct as f64 / labels.len() as f64
}

/// Criterion 9: boosting lift on synthetic data. Blobs: three depth-2
/// trees reach >= 0.99 train accuracy in 50 epochs and beat one tree
/// trained identically; XOR: >= 0.9 held-out accuracy, again beating the
/// single tree.
#[test]
fn criterion_09_synthetic_boosting_efficacy() {
    let seed = 1;
    let (blob_x, blob_y) = blobs(400, seed);
    let boosted = train_synthetic(&blob_x, &blob_y, 3, 50, 0.015, seed);
    let single = train_synthetic(&blob_x, &blob_y, 1, 50, 0.015, seed);
    let boosted_acc = accuracy_on(&boosted, &blob_x, &blob_y);
    let single_acc = accuracy_on(&single, &blob_x, &blob_y);
    assert!(boosted_acc >= 0.99, "blobs ensemble accuracy {boosted_acc}");
    assert!(
        boosted_acc > single_acc,
        "no boosting lift on blobs: {boosted_acc} vs single {single_acc}"
    );

    let (xor_x, xor_y) = xor_points(400, seed);
    let mut train_rows = Vec::new();
    let mut train_labels = Vec::new();
    let mut test_rows = Vec::new();
    let mut test_labels = Vec::new();
    for r in 0..400 {
        if split_70_30(r as u64, seed) == Split::Train {
            train_rows.extend_from_slice(xor_x.row(r));
            train_labels.push(xor_y[r]);
        } else {
            test_rows.extend_from_slice(xor_x.row(r));
            test_labels.push(xor_y[r]);
        }
    }
    let train_x = Matrix::from_vec(train_labels.len(), 2, train_rows).unwrap();
    let test_x = Matrix::from_vec(test_labels.len(), 2, test_rows).unwrap();
    let boosted = train_synthetic(&train_x, &train_labels, 3, 100, 0.1, seed);
    let single = train_synthetic(&train_x, &train_labels, 1, 100, 0.1, seed);
    let boosted_xor = accuracy_on(&boosted, &test_x, &test_labels);
    let single_xor = accuracy_on(&single, &test_x, &test_labels);
    assert!(boosted_xor >= 0.9, "xor ensemble accuracy {boosted_xor}");
    assert!(
        boosted_xor > single_xor,
        "no boosting lift on xor: {boosted_xor} vs single {single_xor}"
    );
    pass(
        9,
        "synthetic boosting efficacy",
        format!(
            "blobs {boosted_acc:.4} > single {single_acc:.4}; xor {boosted_xor:.4} > single {single_xor:.4}"
        ),
    );
}

/// Criterion 10: two training runs with identical flags and seed produce
/// bit-identical checkpoints and metrics.
#[test]
fn criterion_10_determinism() {
    let data_dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data");
    let glass = format!("{data_dir}/glass.csv");
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| -> (Vec<u8>, Vec<u8>) {
        let ckpt = dir.path().join(format!("{tag}.ckpt"));
        let metrics = dir.path().join(format!("{tag}.json"));
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_resboost"))
            .args([
                "train",
                "--data",
                &glass,
                "--trees",
                "3",
                "--depth",
                "3",
                "--mode",
                "shrinkage",
                "--eta",
                "0.5",
                "--epochs",
                "5",
                "--batch-size",
                "16",
                "--seed",
                "9",
                "--out",
                ckpt.to_str().unwrap(),
                "--metrics-out",
                metrics.to_str().unwrap(),
            ])
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
        (std::fs::read(&ckpt).unwrap(), std::fs::read(&metrics).unwrap())
    };
    let (ckpt_a, metrics_a) = run("a");
    let (ckpt_b, metrics_b) = run("b");
    assert_eq!(ckpt_a, ckpt_b, "checkpoints differ between identical runs");
    assert_eq!(metrics_a, metrics_b, "metrics differ between identical runs");
    pass(
        10,
        "determinism",
        format!("bit-identical checkpoint ({} bytes) and metrics", ckpt_a.len()),
    );
}
