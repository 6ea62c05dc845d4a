use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use fitdnn_core::*;
use rand::{Rng, SeedableRng};

use crate::manifest::RunManifest;
use crate::CommonArgs;

fn io_err(e: std::io::Error) -> FitDnnError {
    FitDnnError::Io(e)
}

fn setup_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // ignore the error if a global pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Read the experiment file and apply command-line overrides.
fn load_experiment(
    common: &CommonArgs,
    epochs: Option<usize>,
) -> Result<(ExperimentConfig, ResolvedExperiment)> {
    let mut exp = ExperimentConfig::from_toml_path(&common.config)?;
    if let Some(seed) = common.seed {
        exp.seed = seed;
    }
    if let Some(theta) = common.theta {
        exp.theta = theta;
    }
    if let Some(mode) = common.mode {
        exp.theta_mode = mode;
    }
    if let Some(epochs) = epochs {
        exp.epochs = epochs;
    }
    let resolved = exp.resolve()?;
    Ok((exp, resolved))
}

fn load_data(
    resolved: &ResolvedExperiment,
    common: &CommonArgs,
) -> Result<(Dataset, Dataset)> {
    let (mut train, mut test) = resolved.load_datasets(common.data_dir.as_deref())?;
    if let Some(limit) = common.limit {
        train = train.truncated(limit);
        test = test.truncated(limit);
    }
    Ok((train, test))
}

fn create_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(io_err)
}

pub fn train(common: &CommonArgs, epochs: Option<usize>) -> Result<()> {
    setup_threads(common.threads);
    let (exp, resolved) = load_experiment(common, epochs)?;
    let (train_set, test_set) = load_data(&resolved, common)?;

    // everything validated; only now start producing outputs
    create_out_dir(&common.out)?;
    let manifest = RunManifest::new("train", &common.out, resolved.config.clone())
        .with_experiment(&common.config, &exp);
    manifest.write(&common.out).map_err(io_err)?;

    let weights = xavier_init(&resolved.config, exp.init_seed());
    println!(
        "training task={} N={} L={} D={} theta={} epochs={} examples={}",
        exp.task,
        resolved.config.nodes_per_layer,
        resolved.config.hidden_layers,
        resolved.config.num_delays(),
        resolved.config.theta,
        resolved.schedule.epochs,
        train_set.len()
    );

    let metrics_path = common.out.join("metrics.csv");
    let mut metrics = BufWriter::new(File::create(&metrics_path).map_err(io_err)?);
    writeln!(metrics, "epoch,train_loss,test_metric").map_err(io_err)?;

    let outcome = sgd_train_with(
        weights,
        &train_set,
        Some(&test_set),
        &resolved.config,
        &resolved.schedule,
        resolved.loss,
        |m| {
            let test = m.test_metric.map_or(String::new(), |v| format!("{v}"));
            println!(
                "epoch {:>3}: train_loss {:.6} test_metric {}",
                m.epoch, m.train_loss, test
            );
            let _ = writeln!(metrics, "{},{},{}", m.epoch, m.train_loss, test);
            let _ = metrics.flush();
        },
    )?;

    let model_path = common.out.join("model.json");
    save_model(&model_path, &outcome.weights, &resolved.config)?;
    println!("checkpoint written to {}", model_path.display());
    Ok(())
}

fn write_confusion(path: &Path, confusion: &[Vec<usize>]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(io_err)?);
    for row in confusion {
        let line: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        writeln!(f, "{}", line.join(",")).map_err(io_err)?;
    }
    Ok(())
}

pub fn eval(common: &CommonArgs, checkpoint: &Path) -> Result<()> {
    setup_threads(common.threads);
    let (exp, resolved) = load_experiment(common, None)?;
    let (weights, mut model_config) = load_model(checkpoint)?;
    // theta/mode overrides also apply to the restored model
    if let Some(theta) = common.theta {
        model_config.theta = theta;
    }
    if let Some(mode) = common.mode {
        model_config.theta_mode = mode;
    }
    let resolved = ResolvedExperiment {
        config: model_config.clone(),
        ..resolved
    };
    let (_, test_set) = load_data(&resolved, common)?;

    create_out_dir(&common.out)?;
    let mut manifest = RunManifest::new("eval", &common.out, model_config.clone())
        .with_experiment(&common.config, &exp);
    manifest.checkpoint = Some(checkpoint.to_path_buf());
    manifest.data_dir = common.data_dir.clone();
    manifest.write(&common.out).map_err(io_err)?;

    let report = evaluate(&weights, &test_set, &model_config)?;
    match &report.confusion {
        Some(confusion) => {
            println!("accuracy {:.4}", report.metric);
            write_confusion(&common.out.join("confusion.csv"), confusion)?;
        }
        None => {
            println!("mse {:.6}", report.metric);
            // clean/noisy/reconstruction triplets for visual inspection
            let mut f = BufWriter::new(
                File::create(common.out.join("denoise_examples.csv")).map_err(io_err)?,
            );
            writeln!(f, "example,pixel,target,input,reconstruction").map_err(io_err)?;
            for i in 0..test_set.len().min(8) {
                let input = test_set.input(i);
                let target = match test_set.target(i) {
                    Target::Vector(v) => v,
                    _ => unreachable!(),
                };
                let state = forward(&weights, input, &model_config, None)?;
                for p in 0..input.len() {
                    writeln!(
                        f,
                        "{i},{p},{},{},{}",
                        target[p], input[p], state.y_hat[p]
                    )
                    .map_err(io_err)?;
                }
            }
        }
    }
    let mut f = BufWriter::new(File::create(common.out.join("metrics.txt")).map_err(io_err)?);
    writeln!(f, "{:.6}", report.metric).map_err(io_err)?;
    Ok(())
}

pub fn gradcheck(
    common: &CommonArgs,
    thetas: &[f64],
    subset_size: usize,
    substeps: usize,
) -> Result<()> {
    setup_threads(common.threads);
    let (exp, resolved) = load_experiment(common, None)?;
    let nodes_total = resolved.config.nodes_per_layer * resolved.config.hidden_layers;
    if nodes_total > 2000 {
        return Err(FitDnnError::InvalidConfig(format!(
            "gradcheck re-integrates the delay system per parameter; \
             N*L = {nodes_total} exceeds the guard of 2000 nodes. \
             Use a smaller instance for gradient checking."
        )));
    }

    // one example: first of the dataset when available, else a synthetic
    // sparse input drawn from the seed
    let (input, target): (Vec<f64>, Target) = if common.data_dir.is_some() {
        let (train_set, _) = load_data(&resolved, common)?;
        (train_set.input(0).to_vec(), train_set.target(0))
    } else {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(exp.task_seed());
        let input = (0..resolved.config.input_dim)
            .map(|_| {
                if rng.gen::<f64>() < 0.25 {
                    rng.gen_range(0.0..1.0)
                } else {
                    0.0
                }
            })
            .collect();
        let target = match resolved.loss {
            Loss::CrossEntropy => Target::Class(0),
            Loss::Mse => Target::Vector(
                (0..resolved.config.output_dim)
                    .map(|_| rng.gen_range(0.0..1.0))
                    .collect(),
            ),
        };
        (input, target)
    };

    create_out_dir(&common.out)?;
    RunManifest::new("gradcheck", &common.out, resolved.config.clone())
        .with_experiment(&common.config, &exp)
        .write(&common.out)
        .map_err(io_err)?;

    let mut csv = BufWriter::new(
        File::create(common.out.join("gradcheck.csv")).map_err(io_err)?,
    );
    writeln!(csv, "theta,cos_with_local,cos_without_local,discrete_max_rel_err")
        .map_err(io_err)?;
    println!("theta      cos(with local)  cos(without local)  discrete max rel err");

    for &theta in thetas {
        let mut config = resolved.config.clone();
        config.theta = theta;
        config.theta_mode = ThetaMode::SmallTheta;
        let weights = xavier_init(&config, exp.init_seed());

        let param_count = weights.param_count();
        let size = subset_size.min(param_count);
        let mut pool: Vec<usize> = (0..param_count).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(exp.seed.wrapping_add(9));
        for i in 0..size {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        let subset = &pool[..size];

        let state = forward_small_theta(&weights, &input, &config)?;
        let g_with = backprop(&state, &weights, &input, &target, resolved.loss, &config, true)?;
        let g_without =
            backprop(&state, &weights, &input, &target, resolved.loss, &config, false)?;

        let fd_oracle = finite_diff_gradient(
            &weights,
            &input,
            &target,
            resolved.loss,
            &config,
            FdEvaluator::DdeOracle { substeps },
            1e-5,
            Some(subset),
        )?;
        let cos_with = fd_oracle.cosine_with(&g_with).unwrap_or(f64::NAN);
        let cos_without = fd_oracle.cosine_with(&g_without).unwrap_or(f64::NAN);

        // exactness of the discrete-network gradient on the same subset
        let fd_discrete = finite_diff_gradient(
            &weights,
            &input,
            &target,
            resolved.loss,
            &config,
            FdEvaluator::DiscreteNetwork,
            1e-6,
            Some(subset),
        )?;
        let max_rel = fd_discrete.max_relative_error(&g_with, 1e-3);

        println!("{theta:<10} {cos_with:<16.6} {cos_without:<19.6} {max_rel:.3e}");
        writeln!(csv, "{theta},{cos_with},{cos_without},{max_rel}").map_err(io_err)?;
    }
    Ok(())
}

pub fn simulate(
    common: &CommonArgs,
    checkpoint: &Path,
    input_index: usize,
    substeps: usize,
) -> Result<()> {
    setup_threads(common.threads);
    let (exp, resolved) = load_experiment(common, None)?;
    let (weights, mut model_config) = load_model(checkpoint)?;
    if let Some(theta) = common.theta {
        model_config.theta = theta;
    }
    if let Some(mode) = common.mode {
        model_config.theta_mode = mode;
    }
    let resolved = ResolvedExperiment {
        config: model_config.clone(),
        ..resolved
    };
    let (_, test_set) = load_data(&resolved, common)?;
    if input_index >= test_set.len() {
        return Err(FitDnnError::Dimension(format!(
            "input index {input_index} out of range ({} test examples)",
            test_set.len()
        )));
    }
    let input = test_set.input(input_index).to_vec();

    let signals = SystemSignals::build(&weights, &input, &model_config)?;
    let traj = integrate_dde_signals(&signals, &model_config, substeps)?;
    let grid = read_nodes(&traj, &signals, &model_config)?;
    let n = model_config.nodes_per_layer;
    let x_last = &grid.x[model_config.hidden_layers - 1];
    let (a_out, y_hat) =
        output_from_last_layer(x_last, &weights.w_out, model_config.output_activation)?;

    create_out_dir(&common.out)?;
    let mut manifest = RunManifest::new("simulate", &common.out, model_config.clone())
        .with_experiment(&common.config, &exp);
    manifest.checkpoint = Some(checkpoint.to_path_buf());
    manifest.data_dir = common.data_dir.clone();
    manifest.write(&common.out).map_err(io_err)?;

    // time trace at sub-step resolution
    let d_count = model_config.num_delays();
    let mut f = BufWriter::new(File::create(common.out.join("trace.csv")).map_err(io_err)?);
    let mod_headers: Vec<String> = (1..=d_count).map(|d| format!("M_{d}")).collect();
    writeln!(f, "t,x,a,J,b,{}", mod_headers.join(",")).map_err(io_err)?;
    for (j, (&t, &x)) in traj.times().iter().zip(traj.states()).enumerate() {
        let j_val = signals.input.value(t);
        let b_val = signals.bias.value(t);
        let mut a = j_val + b_val;
        let mut mods = Vec::with_capacity(d_count);
        for (d, modulation) in signals.modulations.iter().enumerate() {
            let m_val = modulation.value(t);
            if m_val != 0.0 {
                a += m_val * traj.sample(t - model_config.delays[d] as f64 * model_config.theta);
            }
            mods.push(format!("{m_val}"));
        }
        if j == 0 {
            a = 0.0; // nothing drives the system at t = 0
        }
        writeln!(f, "{t},{x},{a},{j_val},{b_val},{}", mods.join(",")).map_err(io_err)?;
    }

    // node grid
    let mut f = BufWriter::new(File::create(common.out.join("nodes.csv")).map_err(io_err)?);
    writeln!(f, "layer,node,x,a_mid").map_err(io_err)?;
    for layer in 1..=model_config.hidden_layers {
        for node in 1..=n {
            writeln!(
                f,
                "{layer},{node},{},{}",
                grid.x[layer - 1][node - 1],
                grid.a_mid[layer - 1][node - 1]
            )
            .map_err(io_err)?;
        }
    }

    // output layer
    let mut f = BufWriter::new(File::create(common.out.join("output.csv")).map_err(io_err)?);
    writeln!(f, "p,a_out,y_hat").map_err(io_err)?;
    for p in 0..y_hat.len() {
        writeln!(f, "{p},{},{}", a_out[p], y_hat[p]).map_err(io_err)?;
    }
    let argmax = y_hat
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    println!(
        "simulated example {input_index}: {} sub-steps, argmax output {argmax}",
        traj.states().len() - 1
    );
    Ok(())
}
