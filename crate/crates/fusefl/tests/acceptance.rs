//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Full-scale published accuracies are not reproducible at desk scale; the
//! suite instead pins exact cost accounting, oracle equivalences, and
//! directional reproductions of the qualitative claims.

use fusefl::cli::{checkpoint_bytes, checkpoint_from_bytes, CheckpointModel};
use fusefl::data::{dirichlet_partition, inject_backdoor, synth_sem, BackdoorConfig, Dataset, SemConfig};
use fusefl::federation::{
    aggregate, comm_cost, param_bytes, run_ensemble, run_fedavg, run_fusefl, storage_cost,
    train_local, Algorithm, CostModel, FedConfig, TrainOpts,
};
use fusefl::model::{
    build_client_spec, fuse_stage, mlp_template, scale_width, Adaptor, AdaptorKind, ClientModel,
    FusedModel, ModelSpec, ScalingPolicy,
};
use fusefl::nn::{
    finite_diff_check, forward, init_params, FeatureShape, LayerSpec, ParamSet, Tensor,
};
use fusefl::probes::{estimate_mi_x, estimate_mi_y, probe_all, ProbeConfig};
use fusefl::rng::{derive_seed, rng_from, STREAM_INIT, STREAM_SHUFFLE};
use fusefl::stats::label_entropy;
use rand::Rng;

// ---------------------------------------------------------------- helpers

fn sem_setting(alpha: Option<f64>, rho: f64, seed: u64) -> (Vec<Dataset>, Dataset) {
    let cfg = SemConfig {
        spurious_strength: rho,
        label_alpha: alpha,
        ..SemConfig::default()
    };
    synth_sem(&cfg, seed).unwrap()
}

fn fed_for(algorithm: Algorithm, template: ModelSpec, clients: usize, seed: u64) -> FedConfig {
    let mut cfg = FedConfig::new(algorithm, template);
    cfg.clients = clients;
    cfg.epochs = 40;
    cfg.learning_rate = 0.01;
    cfg.batch_size = 32;
    cfg.calibration.virtual_per_class = 300;
    cfg.calibration.epochs = 50;
    cfg.seed = seed;
    cfg
}

/// Learning rates searched per algorithm (the published protocol reports
/// the best rate per setting). A rate whose run diverges to non-finite
/// parameters is discarded like any other bad grid point.
const LR_GRID: [f64; 2] = [0.003, 0.01];

fn best_fusefl(
    base: &FedConfig,
    clients: &[Dataset],
    test: &Dataset,
) -> (fusefl::federation::RunMetrics, FusedModel) {
    LR_GRID
        .iter()
        .filter_map(|&lr| {
            let mut cfg = base.clone();
            cfg.learning_rate = lr;
            run_fusefl(&cfg, clients, test).ok()
        })
        .max_by(|a, b| {
            a.0.final_test_accuracy
                .partial_cmp(&b.0.final_test_accuracy)
                .unwrap()
        })
        .expect("every learning rate diverged")
}

fn best_ensemble(
    base: &FedConfig,
    clients: &[Dataset],
    test: &Dataset,
) -> (fusefl::federation::RunMetrics, Vec<ClientModel>) {
    LR_GRID
        .iter()
        .filter_map(|&lr| {
            let mut cfg = base.clone();
            cfg.learning_rate = lr;
            run_ensemble(&cfg, clients, test).ok()
        })
        .max_by(|a, b| {
            a.0.final_test_accuracy
                .partial_cmp(&b.0.final_test_accuracy)
                .unwrap()
        })
        .expect("every learning rate diverged")
}

/// Untrained fused model over M width-scaled clients with Average adaptors,
/// mirroring the run-time structure.
fn untrained_fused(template: &ModelSpec, m: usize, seed: u64) -> FusedModel {
    let n_f = scale_width(template.base_width, m, &ScalingPolicy::SqrtM);
    let spec = build_client_spec(template, n_f).unwrap();
    let mut leftover: Vec<ParamSet> = (0..m)
        .map(|i| {
            init_params(
                &spec.flat_layers(),
                derive_seed(seed, STREAM_INIT, i as u64, 0),
            )
            .unwrap()
        })
        .collect();
    let order: Vec<usize> = (0..m).collect();
    let mut stages = Vec::new();
    for (k0, block) in spec.blocks.iter().enumerate() {
        let mut branches = Vec::with_capacity(m);
        for params in leftover.iter_mut() {
            let (head, tail) = std::mem::take(params).split_at(block.len());
            *params = tail;
            let adaptor = if k0 == 0 { None } else { Some(Adaptor::Average) };
            branches.push((block.clone(), head, adaptor));
        }
        stages.push(fuse_stage(branches, order.clone()).unwrap());
    }
    let model = FusedModel {
        input_shape: spec.input_shape.clone(),
        stages,
        adaptor_kind: AdaptorKind::Average,
        classifier: spec.classifier.clone(),
        classifier_params: leftover.swap_remove(0),
        num_classes: spec.num_classes,
    };
    model.validate().unwrap();
    model
}

fn blob_bytes(model: &CheckpointModel) -> u64 {
    let bytes = checkpoint_bytes(model).unwrap();
    let manifest_len =
        u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    (bytes.len() - 12 - manifest_len) as u64
}

// ---------------------------------------------------------------- criteria

/// Criterion 1: comm_cost and storage_cost reproduce the published cost
/// table exactly. The table's rows (213.31, 4266.2, 2133.10 MB) pin the
/// underlying model size to 42.662MB even though it displays as 42.66MB.
#[test]
fn criterion_01_cost_tables_exact() {
    let s: u64 = 42_662_000;
    let ensemble5 = CostModel {
        algorithm: Algorithm::Ensemble,
        model_bytes: s,
        rounds: 1,
        clients: 5,
    };
    assert_eq!(comm_cost(&ensemble5), 213_310_000, "ensemble M=5 comm");

    let fedavg10 = CostModel {
        algorithm: Algorithm::FedAvg,
        model_bytes: s,
        rounds: 10,
        clients: 10,
    };
    assert_eq!(comm_cost(&fedavg10), 4_266_200_000, "fedavg T=10 M=10 comm");

    let ensemble50 = CostModel {
        algorithm: Algorithm::Ensemble,
        model_bytes: s,
        rounds: 1,
        clients: 50,
    };
    assert_eq!(storage_cost(&ensemble50), 2_133_100_000, "ensemble M=50 storage");

    println!("criterion 1 (cost tables exact): PASS");
}

/// Criterion 2: width scaling hits the reported channel counts, and the
/// serialized fused model stays within [0.8, 1.3]x the single template for
/// M in {10, 20, 50} (parameter payload bytes, Average adaptors).
#[test]
fn criterion_02_width_scaling_and_size_budget() {
    assert_eq!(scale_width(64, 10, &ScalingPolicy::SqrtM), 20);
    assert_eq!(scale_width(64, 20, &ScalingPolicy::SqrtM), 14);
    assert_eq!(scale_width(64, 50, &ScalingPolicy::SqrtM), 9);

    let template = mlp_template(16, 64, 4, 10);
    let single = ClientModel {
        params: init_params(&template.flat_layers(), 0).unwrap(),
        spec: template.clone(),
    };
    let single_bytes = blob_bytes(&CheckpointModel::Single(single));
    assert_eq!(single_bytes, param_bytes(template.param_count()));

    for &m in &[10usize, 20, 50] {
        let fused = untrained_fused(&template, m, 1);
        let fused_bytes = blob_bytes(&CheckpointModel::Fused(fused));
        let ratio = fused_bytes as f64 / single_bytes as f64;
        assert!(
            (0.8..=1.3).contains(&ratio),
            "M={m}: fused/single byte ratio {ratio:.3}"
        );
        println!("  M={m}: fused {fused_bytes} B / single {single_bytes} B = {ratio:.3}");
    }
    println!("criterion 2 (width scaling and size budget): PASS");
}

/// Criterion 3: finite-difference gradient oracle under 1e-4 for every
/// layer kind, five seeds each. Inputs near ReLU kinks are resampled.
#[test]
fn criterion_03_gradient_oracle() {
    let dense_mlp = vec![
        LayerSpec::Dense { in_dim: 6, out_dim: 10 },
        LayerSpec::ReLU,
        LayerSpec::Dense { in_dim: 10, out_dim: 4 },
    ];
    let conv_stack = vec![
        LayerSpec::Conv2d { in_channels: 2, out_channels: 3, kernel: 3, stride: 1, padding: 1 },
        LayerSpec::ReLU,
        LayerSpec::AvgPool2d { window: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dense { in_dim: 3 * 3 * 3, out_dim: 4 },
    ];
    let conv1x1 = vec![
        LayerSpec::Conv2d { in_channels: 2, out_channels: 4, kernel: 1, stride: 1, padding: 0 },
        LayerSpec::ReLU,
        LayerSpec::Flatten,
        LayerSpec::Dense { in_dim: 4 * 6 * 6, out_dim: 3 },
    ];
    let cases: [(&str, Vec<LayerSpec>, Vec<usize>, usize); 3] = [
        ("dense+relu", dense_mlp, vec![6], 4),
        ("conv3x3+pool+flatten+dense", conv_stack, vec![2, 6, 6], 4),
        ("conv1x1+flatten+dense", conv1x1, vec![2, 6, 6], 3),
    ];

    for (name, spec, in_dims, classes) in &cases {
        for seed in 0..5u64 {
            let mut found = false;
            'attempts: for attempt in 0..50u64 {
                let params = init_params(
                    &spec[..],
                    derive_seed(seed, STREAM_INIT, attempt, 0),
                )
                .unwrap();
                let mut rng = rng_from(derive_seed(seed, STREAM_SHUFFLE, attempt, 0));
                let mut shape = vec![4usize];
                shape.extend_from_slice(in_dims);
                let n: usize = shape.iter().product();
                let x = Tensor::new(
                    shape,
                    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
                .unwrap();
                let labels: Vec<usize> =
                    (0..4).map(|_| rng.random_range(0..*classes)).collect();
                // reject samples near ReLU kinks: any pre-activation close
                // to zero in any intermediate output
                let mut near_kink = false;
                for cut in 1..spec.len() {
                    if matches!(spec[cut], LayerSpec::ReLU) {
                        let (pre, _) = forward(&spec[..cut], &params, &x).unwrap();
                        if pre.values().iter().any(|v| v.abs() < 1e-3) {
                            near_kink = true;
                            break;
                        }
                    }
                }
                if near_kink {
                    continue 'attempts;
                }
                let err = finite_diff_check(spec, &params, (&x, &labels), 1e-5).unwrap();
                assert!(err < 1e-4, "{name} seed {seed}: relative error {err}");
                found = true;
                break;
            }
            assert!(found, "{name} seed {seed}: no kink-free sample in 50 draws");
        }
    }
    println!("criterion 3 (gradient oracle < 1e-4, all layer kinds, 5 seeds): PASS");
}

/// Criterion 4: degenerate-federation identities.
#[test]
fn criterion_04_degenerate_identities() {
    // (a) single client, single stage, Average adaptor, zero virtual
    // samples: the fused model bit-matches plain local training
    let cfg = SemConfig {
        num_classes: 4,
        samples_per_client: 60,
        test_samples: 80,
        clients: 1,
        ..SemConfig::default()
    };
    let (clients, test) = synth_sem(&cfg, 5).unwrap();
    let template = mlp_template(16, 12, 1, 4);
    let mut fed = fed_for(Algorithm::FuseFl, template.clone(), 1, 11);
    fed.blocks = 1;
    fed.epochs = 5;
    fed.adaptor = AdaptorKind::Average;
    fed.calibration.virtual_per_class = 0;
    let (_, fused) = run_fusefl(&fed, &clients, &test).unwrap();

    let layers = template.flat_layers();
    let init = init_params(&layers, derive_seed(11, STREAM_INIT, 0, 0)).unwrap();
    let (expect, _) = train_local(
        &clients[0],
        &layers,
        init,
        &TrainOpts {
            epochs: 5,
            learning_rate: fed.learning_rate,
            momentum: fed.momentum,
            batch_size: fed.batch_size,
            shuffle_seed: derive_seed(11, STREAM_SHUFFLE, 0, 1),
        },
    )
    .unwrap();
    let block_len = template.blocks[0].len();
    for (idx, p) in fused.stages[0].branches[0].params.iter() {
        let e = expect.get(*idx).unwrap();
        assert_eq!(p.weights, e.weights, "block layer {idx}");
        assert_eq!(p.bias, e.bias);
    }
    for (idx, p) in fused.classifier_params.iter() {
        let e = expect.get(idx + block_len).unwrap();
        assert_eq!(p.weights, e.weights, "classifier layer {idx}");
        assert_eq!(p.bias, e.bias);
    }

    // (b) M identical clients with Average adaptors reproduce the single
    // model within 1e-12
    let template_b = mlp_template(8, 10, 2, 3);
    let params_b = init_params(&template_b.flat_layers(), 3).unwrap();
    let single = ClientModel {
        spec: template_b.clone(),
        params: params_b.clone(),
    };
    let m = 4;
    let order: Vec<usize> = (0..m).collect();
    let mut stages = Vec::new();
    let mut leftovers: Vec<ParamSet> = (0..m).map(|_| params_b.clone()).collect();
    for (k0, block) in template_b.blocks.iter().enumerate() {
        let mut branches = Vec::with_capacity(m);
        for left in leftovers.iter_mut() {
            let (head, tail) = std::mem::take(left).split_at(block.len());
            *left = tail;
            branches.push((
                block.clone(),
                head,
                if k0 == 0 { None } else { Some(Adaptor::Average) },
            ));
        }
        stages.push(fuse_stage(branches, order.clone()).unwrap());
    }
    let fused_b = FusedModel {
        input_shape: template_b.input_shape.clone(),
        stages,
        adaptor_kind: AdaptorKind::Average,
        classifier: template_b.classifier.clone(),
        classifier_params: leftovers.swap_remove(0),
        num_classes: 3,
    };
    fused_b.validate().unwrap();
    let mut rng = rng_from(8);
    let x = Tensor::new(
        vec![16, 8],
        (0..128).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let fused_logits = fused_b.logits(&x).unwrap();
    let single_logits = single.logits(&x).unwrap();
    let max_diff = fused_logits
        .values()
        .iter()
        .zip(single_logits.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(max_diff < 1e-12, "identical-branch fusion drift {max_diff}");

    // (c) FedAvg aggregation of identical params is the bit-exact identity
    let sets = vec![params_b.clone(), params_b.clone(), params_b.clone()];
    let avg = aggregate(&sets, &[0.2, 0.5, 0.3]).unwrap();
    for (idx, p) in params_b.iter() {
        let q = avg.get(*idx).unwrap();
        for (a, b) in p.weights.values().iter().zip(q.weights.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in p.bias.values().iter().zip(q.bias.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
    println!("criterion 4 (degenerate-federation identities): PASS");
}

/// Criterion 5: the freeze audit holds across a multi-stage run (checked by
/// the run itself via per-stage digests) and runs are bit-reproducible.
#[test]
fn criterion_05_freeze_audit() {
    let (clients, test) = sem_setting(Some(0.5), 0.8, 21);
    let template = mlp_template(16, 24, 3, 10);
    let mut fed = fed_for(Algorithm::FuseFl, template, 5, 21);
    fed.blocks = 3;
    fed.epochs = 6;
    let (metrics, model) = run_fusefl(&fed, &clients, &test).unwrap();
    assert!(metrics.freeze_audit_passed, "freeze audit failed");
    assert!(metrics.warnings.iter().all(|w| !w.contains("freeze")));
    // deterministic rerun reproduces the entire model bit-for-bit
    let (metrics2, model2) = run_fusefl(&fed, &clients, &test).unwrap();
    assert!(metrics2.freeze_audit_passed);
    assert_eq!(model, model2);
    println!("criterion 5 (freeze audit): PASS");
}

fn ordering_setting(alpha: f64, k: usize) -> usize {
    let mut wins = 0;
    for seed in 0..5u64 {
        let (clients, test) = sem_setting(Some(alpha), 0.9, seed);
        let template = mlp_template(16, 64, k, 10);

        let mut fcfg = fed_for(Algorithm::FuseFl, template.clone(), 5, seed);
        fcfg.blocks = k;
        let (fm, _) = best_fusefl(&fcfg, &clients, &test);
        assert!(fm.freeze_audit_passed, "freeze audit failed");
        // communication accounting agrees with the closed form within 1%
        let comm_err = (fm.comm_bytes as f64 - fm.comm_bytes_closed_form as f64).abs()
            / fm.comm_bytes_closed_form as f64;
        assert!(comm_err <= 0.01, "comm accounting drift {comm_err}");
        let f = fm.final_test_accuracy;

        let ecfg = fed_for(Algorithm::Ensemble, template.clone(), 5, seed);
        let (em, _) = best_ensemble(&ecfg, &clients, &test);
        let e = em.final_test_accuracy;

        let a = LR_GRID
            .iter()
            .map(|&lr| {
                let mut cfg = fed_for(Algorithm::OneshotFedAvg, template.clone(), 5, seed);
                cfg.learning_rate = lr;
                run_fedavg(&cfg, &clients, &test).unwrap().0.final_test_accuracy
            })
            .fold(0.0f64, f64::max);

        println!("  alpha={alpha} K={k} seed={seed}: fusefl {f:.3} ensemble {e:.3} oneshot {a:.3}");
        if f >= e && e >= a {
            wins += 1;
        }
    }
    wins
}

/// Criterion 6: directional reproduction of the accuracy ordering
/// fusefl >= ensemble >= one-shot fedavg on causal synthetic data
/// (M=5, rho=0.9, alpha in {0.1, 0.5}, E=40, K in {2, 4}), >= 4/5 seeds
/// per setting.
#[test]
fn criterion_06_directional_ordering() {
    for &alpha in &[0.1f64, 0.5] {
        for &k in &[2usize, 4] {
            let wins = ordering_setting(alpha, k);
            assert!(
                wins >= 4,
                "alpha={alpha} K={k}: ordering held only {wins}/5 seeds"
            );
            println!("  alpha={alpha} K={k}: ordering held {wins}/5 seeds");
        }
    }
    println!("criterion 6 (directional accuracy ordering): PASS");
}

fn backdoored_image_setting(seed: u64) -> (Vec<Dataset>, Dataset) {
    let cfg = SemConfig {
        inv_dim: 128,
        spu_dim: 128,
        image_side: Some(16),
        spurious_strength: 0.5,
        label_alpha: Some(0.3),
        noise_std: 0.8,
        samples_per_client: 400,
        test_samples: 1500,
        ..SemConfig::default()
    };
    let (mut clients, test) = synth_sem(&cfg, seed).unwrap();
    let bd = BackdoorConfig {
        target_clients: [0usize].into_iter().collect(),
        patch_side: 10,
        intensity_range: (0.8, 1.0),
    };
    clients[0] = inject_backdoor(&clients[0], &bd, seed).unwrap();
    (clients, test)
}

fn image_template(k: usize) -> ModelSpec {
    let mut t = mlp_template(256, 64, k, 10);
    t.blocks[0].insert(0, LayerSpec::Flatten);
    t.input_shape = FeatureShape::Spatial {
        channels: 1,
        height: 16,
        width: 16,
    };
    t.validate().unwrap();
    t
}

/// Criterion 7: with 1 of 5 clients backdoored, fusion's clean-test accuracy
/// beats the ensemble's in >= 3/5 seeds; the backdoored client fits its
/// trigger (local accuracy ~1) yet scores the lowest isolated test accuracy.
#[test]
fn criterion_07_backdoor_robustness() {
    let k = 4;
    let mut fusion_wins = 0;
    let mut pattern_holds = 0;
    for seed in 0..5u64 {
        let (clients, test) = backdoored_image_setting(seed);
        let template = image_template(k);

        let mut fcfg = fed_for(Algorithm::FuseFl, template.clone(), 5, seed);
        fcfg.blocks = k;
        let (fm, _) = best_fusefl(&fcfg, &clients, &test);

        let ecfg = fed_for(Algorithm::Ensemble, template, 5, seed);
        let (em, _) = best_ensemble(&ecfg, &clients, &test);

        if fm.final_test_accuracy >= em.final_test_accuracy {
            fusion_wins += 1;
        }

        // published pattern: backdoored clients memorize locally but
        // generalize worst
        let bd_local = em
            .records
            .iter()
            .filter(|r| r.client == 0)
            .map(|r| r.train_acc)
            .fold(0.0f64, f64::max);
        let bd_global = em.per_client_test_accuracy[0];
        let min_global = em
            .per_client_test_accuracy
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        println!(
            "  seed={seed}: fusefl {:.3} ensemble {:.3}; backdoored local {bd_local:.3} global {bd_global:.3} (min {min_global:.3})",
            fm.final_test_accuracy, em.final_test_accuracy
        );
        if bd_local >= 0.98 && bd_global == min_global {
            pattern_holds += 1;
        }
    }
    assert!(
        fusion_wins >= 3,
        "fusion beat the ensemble on clean data only {fusion_wins}/5 seeds"
    );
    assert!(
        pattern_holds >= 3,
        "backdoored-client pattern held only {pattern_holds}/5 seeds"
    );
    println!("criterion 7 (backdoor robustness direction): PASS");
}

/// Criterion 8: probe suite. Isolated features show a higher
/// reconstruction proxy and lower label information than fusion-trained
/// features at the deepest stage (majority of 5 seeds); estimates respect
/// the entropy bound; probes never mutate the model.
#[test]
fn criterion_08_probe_suite() {
    let k = 2;
    let mut direction_holds = 0;
    for seed in 0..5u64 {
        let (clients, test) = sem_setting(Some(0.1), 0.9, seed);
        let refs: Vec<&Dataset> = clients.iter().collect();
        let pooled = Dataset::concat(&refs).unwrap();
        let template = mlp_template(16, 64, k, 10);
        let probe_cfg = ProbeConfig {
            seed,
            ..ProbeConfig::default()
        };
        let hy = label_entropy(&pooled.labels, pooled.num_classes);

        // fusion-trained: matched capacity (5 branches of width 13 concat
        // to 65 vs the isolated model's 64)
        let mut fcfg = fed_for(Algorithm::FuseFl, template.clone(), 5, seed);
        fcfg.blocks = k;
        fcfg.scaling = ScalingPolicy::Explicit(13);
        let (_, fused) = run_fusefl(&fcfg, &clients, &test).unwrap();
        let fused_snapshot = fused.clone();
        let fused_mi_x = estimate_mi_x(&fused, k, &pooled, &probe_cfg).unwrap();
        let fused_mi_y = estimate_mi_y(&fused, k, &pooled, &probe_cfg).unwrap();
        assert_eq!(fused, fused_snapshot, "probe mutated the fused model");
        assert!(fused_mi_y <= hy + 0.05);

        // isolated-trained: mean over the ensemble's members
        let ecfg = fed_for(Algorithm::Ensemble, template, 5, seed);
        let (_, members) = run_ensemble(&ecfg, &clients, &test).unwrap();
        let mut iso_mi_x = 0.0;
        let mut iso_mi_y = 0.0;
        for member in &members {
            let snapshot = member.clone();
            let mx = estimate_mi_x(member, k, &pooled, &probe_cfg).unwrap();
            let my = estimate_mi_y(member, k, &pooled, &probe_cfg).unwrap();
            assert_eq!(*member, snapshot, "probe mutated a member");
            assert!(my <= hy + 0.05);
            iso_mi_x += mx;
            iso_mi_y += my;
        }
        iso_mi_x /= members.len() as f64;
        iso_mi_y /= members.len() as f64;

        println!(
            "  seed={seed}: isolated (mi_x {iso_mi_x:.4}, mi_y {iso_mi_y:.4}) vs fused (mi_x {fused_mi_x:.4}, mi_y {fused_mi_y:.4})"
        );
        if iso_mi_x > fused_mi_x && iso_mi_y < fused_mi_y {
            direction_holds += 1;
        }
    }
    assert!(
        direction_holds >= 3,
        "probe direction held only {direction_holds}/5 seeds"
    );

    // row shape and bounds via the full probe sweep on one model
    let (clients, test) = sem_setting(Some(0.5), 0.8, 1);
    let refs: Vec<&Dataset> = clients.iter().collect();
    let pooled = Dataset::concat(&refs).unwrap();
    let mut fcfg = fed_for(Algorithm::FuseFl, mlp_template(16, 24, 2, 10), 5, 1);
    fcfg.blocks = 2;
    fcfg.epochs = 6;
    let (_, fused) = run_fusefl(&fcfg, &clients, &test).unwrap();
    let (results, hy) = probe_all(&fused, &pooled, &test, &ProbeConfig::default()).unwrap();
    assert_eq!(results.len(), 2);
    for r in &results {
        assert!(r.mi_y <= hy + 0.05);
        assert!((0.0..=1.0).contains(&r.separability));
    }
    println!("criterion 8 (probe suite direction and bounds): PASS");
}

/// Criterion 9: partition conservation (exact), heterogeneity monotone in
/// alpha (10-seed averaged TV), determinism.
#[test]
fn criterion_09_partition_properties() {
    let mut rng = rng_from(50);
    let n = 4000;
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
    let values: Vec<f64> = (0..n * 2).map(|_| rng.random_range(0.0..1.0)).collect();
    let ds = Dataset::new(Tensor::new(vec![n, 2], values).unwrap(), labels, 10).unwrap();

    // conservation: exactly one assignment per index
    let p = dirichlet_partition(&ds, 5, 0.3, 7, 1).unwrap();
    let mut all: Vec<usize> = p.client_indices.iter().flatten().copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..n).collect::<Vec<_>>());

    // heterogeneity monotone in alpha over 10 seeds
    let mean_tv = |alpha: f64| -> f64 {
        (0..10u64)
            .map(|s| {
                dirichlet_partition(&ds, 5, alpha, s, 1)
                    .unwrap()
                    .mean_label_tv(&ds)
            })
            .sum::<f64>()
            / 10.0
    };
    let tv01 = mean_tv(0.1);
    let tv05 = mean_tv(0.5);
    assert!(tv01 > tv05, "TV(0.1)={tv01:.4} !> TV(0.5)={tv05:.4}");
    println!("  mean TV distance: alpha=0.1 -> {tv01:.4}, alpha=0.5 -> {tv05:.4}");

    // determinism: identical seeds give identical partitions
    let a = dirichlet_partition(&ds, 5, 0.3, 7, 1).unwrap();
    let b = dirichlet_partition(&ds, 5, 0.3, 7, 1).unwrap();
    assert_eq!(a.client_indices, b.client_indices);
    println!("criterion 9 (partition properties): PASS");
}

/// Criterion 10: checkpoint round-trip is canonical, tampering is caught,
/// and reloaded fused models agree with the original to f32 precision.
#[test]
fn criterion_10_checkpoint_roundtrip() {
    let (clients, test) = sem_setting(Some(0.5), 0.8, 31);
    let template = mlp_template(16, 24, 2, 10);
    let mut fed = fed_for(Algorithm::FuseFl, template, 5, 31);
    fed.blocks = 2;
    fed.epochs = 4;
    let (_, model) = run_fusefl(&fed, &clients, &test).unwrap();
    let ckpt = CheckpointModel::Fused(model.clone());

    // save -> load -> save byte-identical
    let first = checkpoint_bytes(&ckpt).unwrap();
    let loaded = checkpoint_from_bytes(&first).unwrap();
    let second = checkpoint_bytes(&loaded).unwrap();
    assert_eq!(first, second, "second save differs from first");

    // digest tamper detection
    let mut tampered = first.clone();
    let last = tampered.len() - 1;
    tampered[last] ^= 0x40;
    let err = checkpoint_from_bytes(&tampered).unwrap_err();
    assert!(err.to_string().contains("digest mismatch"), "{err}");

    // forward agreement after the f32 round-trip
    let CheckpointModel::Fused(reloaded) = loaded else {
        panic!("expected fused model");
    };
    let logits_before = model.logits(&test.inputs).unwrap();
    let logits_after = reloaded.logits(&test.inputs).unwrap();
    let max_diff = logits_before
        .values()
        .iter()
        .zip(logits_after.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(max_diff < 1e-5, "f32 round-trip drift {max_diff}");
    println!("criterion 10 (checkpoint round-trip and tamper detection): PASS");
}
