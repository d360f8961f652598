//! Subcommand implementations behind the binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::cli::checkpoint::{checkpoint_load, checkpoint_save, CheckpointModel};
use crate::cli::config::{DataSource, RunConfig};
use crate::data::{dirichlet_partition, inject_backdoor, load_idx, synth_sem, Dataset};
use crate::error::{Error, Result};
use crate::federation::{
    comm_cost, run_ensemble, run_fedavg, run_fusefl, storage_cost, Algorithm, CostModel, FedConfig,
    RunMetrics,
};
use crate::model::{conv_template, mlp_template, ModelSpec};
use crate::nn::{FeatureShape, LayerSpec};
use crate::probes::probe_all;
use crate::rng::{derive_seed, STREAM_BACKDOOR};

/// `FUSEFL_SEED` overrides the config seed when set.
pub fn apply_env_seed(cfg: &mut RunConfig) -> Result<()> {
    if let Ok(v) = std::env::var("FUSEFL_SEED") {
        let seed: u64 = v
            .parse()
            .map_err(|_| Error::Config(format!("FUSEFL_SEED must be an integer, got '{v}'")))?;
        cfg.override_seed(seed);
    }
    Ok(())
}

fn build_data(cfg: &RunConfig) -> Result<(Vec<Dataset>, Dataset)> {
    match cfg.source {
        DataSource::Sem => {
            let mut sem = cfg.sem.clone();
            sem.clients = cfg.clients;
            synth_sem(&sem, cfg.seed)
        }
        DataSource::Idx => {
            let train = load_idx(Path::new(&cfg.idx_images), Path::new(&cfg.idx_labels))?;
            if cfg.idx_test_images.is_empty() || cfg.idx_test_labels.is_empty() {
                return Err(Error::Config(
                    "data.source = idx runs need data.idx.test_images and data.idx.test_labels"
                        .into(),
                ));
            }
            let test = load_idx(
                Path::new(&cfg.idx_test_images),
                Path::new(&cfg.idx_test_labels),
            )?;
            let partition = dirichlet_partition(
                &train,
                cfg.clients,
                cfg.partition_alpha,
                cfg.seed,
                cfg.min_per_client,
            )?;
            Ok((partition.materialize(&train), test))
        }
    }
}

fn apply_backdoor(cfg: &RunConfig, mut clients: Vec<Dataset>) -> Result<Vec<Dataset>> {
    if let Some(bd) = cfg.backdoor_config() {
        for &c in &bd.target_clients {
            clients[c] = inject_backdoor(
                &clients[c],
                &bd,
                derive_seed(cfg.seed, STREAM_BACKDOOR, c as u64, 1),
            )?;
        }
    }
    Ok(clients)
}

fn template_for(cfg: &RunConfig, width: usize, input: &FeatureShape, classes: usize) -> Result<ModelSpec> {
    match cfg.template_kind.as_str() {
        "mlp" => {
            let mut t = mlp_template(input.flat_len(), width, cfg.blocks, classes);
            if let FeatureShape::Spatial { .. } = input {
                // flatten image inputs before the first dense layer
                t.blocks[0].insert(0, LayerSpec::Flatten);
                t.input_shape = input.clone();
            }
            t.validate()?;
            Ok(t)
        }
        "conv" => match *input {
            FeatureShape::Spatial { height, width: w, .. } if height == w => {
                conv_template(height, width, cfg.blocks, classes)
            }
            _ => Err(Error::Config(
                "model.template = conv needs square image inputs".into(),
            )),
        },
        other => Err(Error::Config(format!("unknown template '{other}'"))),
    }
}

fn build_fed_config(cfg: &RunConfig, input: &FeatureShape, classes: usize) -> Result<FedConfig> {
    let template = template_for(cfg, cfg.base_width, input, classes)?;
    let hetero_specs = if cfg.hetero_widths.is_empty() {
        None
    } else {
        Some(
            cfg.hetero_widths
                .iter()
                .map(|&w| template_for(cfg, w, input, classes))
                .collect::<Result<Vec<_>>>()?,
        )
    };
    let mut fed = FedConfig::new(cfg.algorithm, template);
    fed.clients = cfg.clients;
    fed.blocks = cfg.blocks;
    fed.epochs = cfg.epochs;
    fed.rounds = cfg.rounds;
    fed.learning_rate = cfg.learning_rate;
    fed.momentum = cfg.momentum;
    fed.batch_size = cfg.batch_size;
    fed.adaptor = cfg.adaptor;
    fed.scaling = cfg.scaling;
    fed.seed = cfg.seed;
    fed.count_downlink = cfg.count_downlink;
    fed.hetero_specs = hetero_specs;
    fed.backdoor = cfg.backdoor_config();
    fed.calibration = cfg.calibration.clone();
    Ok(fed)
}

#[derive(Serialize)]
struct Timing {
    wall_seconds: f64,
}

#[derive(Serialize)]
struct Summary {
    name: String,
    algorithm: String,
    seed: u64,
    final_test_accuracy: f64,
    comm_bytes: u64,
    storage_bytes: u64,
    comm_bytes_closed_form: u64,
    storage_bytes_closed_form: u64,
    client_param_counts: Vec<usize>,
    global_param_count: usize,
    per_client_test_accuracy: Vec<f64>,
    stage_epochs: Vec<usize>,
    freeze_audit_passed: bool,
    checkpoints: Vec<String>,
    warnings: Vec<String>,
    partial: bool,
    error: Option<String>,
    config: BTreeMap<String, String>,
    timing: Timing,
}

fn write_summary(dir: &Path, summary: &Summary) -> Result<PathBuf> {
    let path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Internal(format!("summary serialization: {e}")))?;
    fs::write(&path, json + "\n")?;
    Ok(path)
}

fn partial_summary(cfg: &RunConfig, err: &Error, started: Instant) -> Summary {
    Summary {
        name: cfg.name.clone(),
        algorithm: cfg.algorithm.name().to_string(),
        seed: cfg.seed,
        final_test_accuracy: f64::NAN,
        comm_bytes: 0,
        storage_bytes: 0,
        comm_bytes_closed_form: 0,
        storage_bytes_closed_form: 0,
        client_param_counts: Vec::new(),
        global_param_count: 0,
        per_client_test_accuracy: Vec::new(),
        stage_epochs: Vec::new(),
        freeze_audit_passed: false,
        checkpoints: Vec::new(),
        warnings: Vec::new(),
        partial: true,
        error: Some(err.to_string()),
        config: cfg.resolved_map().clone(),
        timing: Timing {
            wall_seconds: started.elapsed().as_secs_f64(),
        },
    }
}

fn run_once(cfg: &RunConfig) -> Result<Summary> {
    let started = Instant::now();
    let out_dir = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&out_dir)?;

    let inner = (|| -> Result<(RunMetrics, Vec<String>)> {
        let (clients, test) = build_data(cfg)?;
        let clients = apply_backdoor(cfg, clients)?;
        let input = test.input_shape()?;
        let fed = build_fed_config(cfg, &input, test.num_classes)?;

        let mut checkpoints = Vec::new();
        let metrics = match cfg.algorithm {
            Algorithm::FedAvg | Algorithm::OneshotFedAvg => {
                let (metrics, model) = run_fedavg(&fed, &clients, &test)?;
                let path = out_dir.join("model.ckpt");
                checkpoint_save(&CheckpointModel::Single(model), &path)?;
                checkpoints.push("model.ckpt".to_string());
                metrics
            }
            Algorithm::Ensemble => {
                let (metrics, models) = run_ensemble(&fed, &clients, &test)?;
                for (m, model) in models.into_iter().enumerate() {
                    let file = format!("client_{m:02}.ckpt");
                    checkpoint_save(&CheckpointModel::Single(model), &out_dir.join(&file))?;
                    checkpoints.push(file);
                }
                metrics
            }
            Algorithm::FuseFl => {
                let (metrics, model) = run_fusefl(&fed, &clients, &test)?;
                let path = out_dir.join("model.ckpt");
                checkpoint_save(&CheckpointModel::Fused(model), &path)?;
                checkpoints.push("model.ckpt".to_string());
                metrics
            }
        };
        fs::write(out_dir.join("metrics.csv"), metrics.records_csv())?;
        Ok((metrics, checkpoints))
    })();

    match inner {
        Ok((metrics, checkpoints)) => {
            let summary = Summary {
                name: cfg.name.clone(),
                algorithm: cfg.algorithm.name().to_string(),
                seed: cfg.seed,
                final_test_accuracy: metrics.final_test_accuracy,
                comm_bytes: metrics.comm_bytes,
                storage_bytes: metrics.storage_bytes,
                comm_bytes_closed_form: metrics.comm_bytes_closed_form,
                storage_bytes_closed_form: metrics.storage_bytes_closed_form,
                client_param_counts: metrics.client_param_counts,
                global_param_count: metrics.global_param_count,
                per_client_test_accuracy: metrics.per_client_test_accuracy,
                stage_epochs: metrics.stage_epochs,
                freeze_audit_passed: metrics.freeze_audit_passed,
                checkpoints,
                warnings: metrics.warnings.clone(),
                partial: false,
                error: None,
                config: cfg.resolved_map().clone(),
                timing: Timing {
                    wall_seconds: started.elapsed().as_secs_f64(),
                },
            };
            for w in &metrics.warnings {
                eprintln!("warning: {w}");
            }
            write_summary(&out_dir, &summary)?;
            Ok(summary)
        }
        Err(err) => {
            let _ = write_summary(&out_dir, &partial_summary(cfg, &err, started));
            Err(err)
        }
    }
}

/// `run`: execute a config file, optionally sweeping the learning rate.
pub fn cmd_run(config_path: &Path, lr_grid: Option<&str>) -> Result<()> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| Error::Config(format!("{}: {e}", config_path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    apply_env_seed(&mut cfg)?;

    let Some(grid) = lr_grid else {
        let summary = run_once(&cfg)?;
        println!(
            "{}: accuracy {:.4}, comm {} bytes, storage {} bytes",
            summary.name, summary.final_test_accuracy, summary.comm_bytes, summary.storage_bytes
        );
        return Ok(());
    };

    let lrs: Vec<f64> = grid
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("invalid learning rate '{s}' in grid")))
        })
        .collect::<Result<_>>()?;
    if lrs.is_empty() {
        return Err(Error::Config("empty learning-rate grid".into()));
    }
    let base_dir = cfg.output_dir.clone();

    #[derive(Serialize)]
    struct GridEntry {
        lr: f64,
        final_test_accuracy: f64,
        output_dir: String,
    }
    #[derive(Serialize)]
    struct GridSummary {
        entries: Vec<GridEntry>,
        best_lr: f64,
        best_accuracy: f64,
    }

    let mut entries = Vec::new();
    for lr in lrs {
        let mut sub = cfg.clone();
        sub.override_lr(lr);
        let dir = format!("{base_dir}/lr_{lr}");
        sub.override_output_dir(&dir);
        let summary = run_once(&sub)?;
        println!("lr {lr}: accuracy {:.4}", summary.final_test_accuracy);
        entries.push(GridEntry {
            lr,
            final_test_accuracy: summary.final_test_accuracy,
            output_dir: dir,
        });
    }
    let best = entries
        .iter()
        .max_by(|a, b| {
            a.final_test_accuracy
                .partial_cmp(&b.final_test_accuracy)
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("non-empty grid");
    let grid_summary = GridSummary {
        best_lr: best.lr,
        best_accuracy: best.final_test_accuracy,
        entries,
    };
    fs::create_dir_all(&base_dir)?;
    let json = serde_json::to_string_pretty(&grid_summary)
        .map_err(|e| Error::Internal(format!("grid summary serialization: {e}")))?;
    fs::write(Path::new(&base_dir).join("grid_summary.json"), json + "\n")?;
    println!("best lr {} (accuracy {:.4})", grid_summary.best_lr, grid_summary.best_accuracy);
    Ok(())
}

/// `partition`: split an IDX dataset across clients and write index lists.
#[allow(clippy::too_many_arguments)]
pub fn cmd_partition(
    dataset: Option<&Path>,
    images: Option<&Path>,
    labels: Option<&Path>,
    prefix: &str,
    clients: usize,
    alpha: f64,
    seed: u64,
    min_per_client: usize,
    out: &Path,
) -> Result<()> {
    let images_path = match (images, dataset) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(dir)) => dir.join(format!("{prefix}-images-idx3-ubyte")),
        (None, None) => {
            return Err(Error::Config(
                "pass --dataset DIR or explicit --images/--labels".into(),
            ))
        }
    };
    let labels_path = match (labels, dataset) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(dir)) => dir.join(format!("{prefix}-labels-idx1-ubyte")),
        (None, None) => unreachable!("checked above"),
    };
    let ds = load_idx(&images_path, &labels_path)?;
    let partition = dirichlet_partition(&ds, clients, alpha, seed, min_per_client)?;

    fs::create_dir_all(out)?;
    for (m, indices) in partition.client_indices.iter().enumerate() {
        let mut body = String::with_capacity(indices.len() * 7);
        for &i in indices {
            body.push_str(&i.to_string());
            body.push('\n');
        }
        fs::write(out.join(format!("client_{m:02}.txt")), body)?;
    }

    #[derive(Serialize)]
    struct ClientSummary {
        client: usize,
        count: usize,
        label_histogram: Vec<usize>,
    }
    #[derive(Serialize)]
    struct PartitionSummary {
        clients: usize,
        alpha: f64,
        seed: u64,
        total_samples: usize,
        mean_label_tv: f64,
        per_client: Vec<ClientSummary>,
    }
    let hists = partition.label_histograms(&ds);
    let summary = PartitionSummary {
        clients,
        alpha,
        seed,
        total_samples: ds.len(),
        mean_label_tv: partition.mean_label_tv(&ds),
        per_client: partition
            .client_indices
            .iter()
            .enumerate()
            .map(|(m, idx)| ClientSummary {
                client: m,
                count: idx.len(),
                label_histogram: hists[m].clone(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Internal(format!("partition summary serialization: {e}")))?;
    fs::write(out.join("partition_summary.json"), json + "\n")?;
    println!(
        "partitioned {} samples across {clients} clients (alpha {alpha})",
        ds.len()
    );
    Ok(())
}

/// `probe`: per-stage representation measurements of a checkpointed model.
pub fn cmd_probe(checkpoint: &Path, config_path: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| Error::Config(format!("{}: {e}", config_path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    apply_env_seed(&mut cfg)?;
    let model = checkpoint_load(checkpoint)?;

    let (clients, test) = build_data(&cfg)?;
    let clients = apply_backdoor(&cfg, clients)?;
    let refs: Vec<&Dataset> = clients.iter().collect();
    let pooled = Dataset::concat(&refs)?;

    let (results, label_entropy) = probe_all(&model, &pooled, &test, &cfg.probe)?;
    let mut csv = String::from("stage,metric,value\n");
    for r in &results {
        csv.push_str(&format!("{},mi_x_proxy,{}\n", r.stage, r.mi_x_proxy));
        csv.push_str(&format!("{},mi_y,{}\n", r.stage, r.mi_y));
        csv.push_str(&format!("{},separability,{}\n", r.stage, r.separability));
    }
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(out, csv)?;
    println!(
        "probed {} stages (label entropy {label_entropy:.4} nats) -> {}",
        results.len(),
        out.display()
    );
    Ok(())
}

/// `report`: tabulate run summaries, or print the closed-form cost tables.
pub fn cmd_report(
    summaries: &[PathBuf],
    cost_table: bool,
    model_bytes: Option<u64>,
    rounds: u64,
    clients_list: &str,
) -> Result<()> {
    if cost_table {
        let s = model_bytes.ok_or_else(|| {
            Error::Config("--cost-table needs --model-bytes (serialized model size)".into())
        })?;
        let clients: Vec<u64> = clients_list
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("invalid client count '{v}'")))
            })
            .collect::<Result<_>>()?;
        let mb = |bytes: u64| bytes as f64 / 1e6;
        println!("model size: {:.2}MB, fedavg rounds: {rounds}", mb(s));
        println!(
            "{:>8} {:>16} {:>16} {:>16} {:>16}",
            "clients", "fedavg comm MB", "oneshot comm MB", "ensemble comm MB", "ensemble stor MB"
        );
        for &m in &clients {
            let fedavg = CostModel {
                algorithm: Algorithm::FedAvg,
                model_bytes: s,
                rounds,
                clients: m,
            };
            let oneshot = CostModel {
                algorithm: Algorithm::OneshotFedAvg,
                ..fedavg
            };
            let ensemble = CostModel {
                algorithm: Algorithm::Ensemble,
                ..fedavg
            };
            println!(
                "{:>8} {:>16.2} {:>16.2} {:>16.2} {:>16.2}",
                m,
                mb(comm_cost(&fedavg)),
                mb(comm_cost(&oneshot)),
                mb(comm_cost(&ensemble)),
                mb(storage_cost(&ensemble)),
            );
        }
        return Ok(());
    }

    if summaries.is_empty() {
        return Err(Error::Config(
            "pass summary.json paths or --cost-table".into(),
        ));
    }
    println!(
        "{:<20} {:<15} {:>8} {:>10} {:>14} {:>14}",
        "name", "algorithm", "seed", "accuracy", "comm MB", "storage MB"
    );
    for path in summaries {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let v: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let get_str = |k: &str| v.get(k).and_then(|x| x.as_str()).unwrap_or("?").to_string();
        let get_f = |k: &str| v.get(k).and_then(|x| x.as_f64()).unwrap_or(f64::NAN);
        println!(
            "{:<20} {:<15} {:>8} {:>10.4} {:>14.2} {:>14.2}",
            get_str("name"),
            get_str("algorithm"),
            v.get("seed").and_then(|x| x.as_u64()).unwrap_or(0),
            get_f("final_test_accuracy"),
            get_f("comm_bytes") / 1e6,
            get_f("storage_bytes") / 1e6,
        );
    }
    Ok(())
}
