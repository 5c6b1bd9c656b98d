use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::Path;

use serde::Serialize;

use hawkesnet::experiment::{averaged_dims, replicate_fits, replicate_tests, ReplicationPlan};
use hawkesnet::inference::write_tests_csv;
use hawkesnet::metrics::{write_reports_csv, write_summary_csv};
use hawkesnet::selection::{write_bic_csv, write_gic_csv};
use hawkesnet::{
    build_design, evaluate, preset, random_network, select_all, select_basis_dims, simulate,
    summarize, test_all, DesignCache, EventData, FittedModel, ModelSpec, NetworkKind, Preset,
};

use crate::args::{
    pipeline_config, test_config, Command, EvaluateArgs, EventFormat, EventsInput, FitArgs,
    PresetArgs, PresetName, ReplicateArgs, SelectDimsArgs, SimulateArgs, TestArgs,
};
use crate::error::CliError;
use crate::provenance::Provenance;

const DEFAULT_SUPPORT: f64 = 0.01;

pub fn run(command: &Command, threads: Option<usize>) -> Result<(), CliError> {
    match command {
        Command::Simulate(a) => cmd_simulate(command, a, threads),
        Command::Fit(a) => cmd_fit(command, a, threads),
        Command::SelectDims(a) => cmd_select_dims(command, a, threads),
        Command::Test(a) => cmd_test(command, a, threads),
        Command::Evaluate(a) => cmd_evaluate(command, a, threads),
        Command::Replicate(a) => cmd_replicate(command, a, threads),
    }
}

#[derive(Serialize)]
struct JsonOutput<'a, T: Serialize> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    body: T,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(CliError::io(path))
}

fn write_json<T: Serialize>(path: &Path, provenance: &Provenance, body: T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(&JsonOutput { provenance, body })
        .map_err(CliError::json(path))?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

/// CSV with the provenance block as leading `#` comments.
fn write_csv(
    path: &Path,
    provenance: &Provenance,
    body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let mut buf = provenance.csv_header().into_bytes();
    body(&mut buf).map_err(CliError::io(path))?;
    write_file(path, &buf)
}

/// Reads a JSON file, unwrapping `field` when the file is one of our
/// outputs (has a `provenance` block).
fn read_json<T: serde::de::DeserializeOwned>(path: &Path, field: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(CliError::json(path))?;
    if value.get("provenance").is_some() {
        value = value
            .get_mut(field)
            .map(serde_json::Value::take)
            .ok_or_else(|| CliError::Config(format!("{}: no `{field}` field", path.display())))?;
    }
    serde_json::from_value(value).map_err(CliError::json(path))
}

fn is_jsonl(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

fn read_events(input: &EventsInput) -> Result<EventData, CliError> {
    let path = &input.events;
    let file = File::open(path).map_err(CliError::io(path))?;
    let reader = BufReader::new(file);
    let events = if is_jsonl(path) {
        EventData::read_jsonl(reader, input.horizon, input.nodes)
    } else {
        EventData::read_csv(reader, input.horizon, input.nodes)
    }
    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    log::info!(
        "read {} events on {} nodes, T = {}",
        events.total(),
        events.p(),
        events.horizon()
    );
    Ok(events)
}

fn preset_of(args: &PresetArgs) -> Result<Preset, CliError> {
    let name = args
        .preset
        .ok_or_else(|| CliError::Config("a --preset (or --model) is required".into()))?;
    Ok(match name {
        PresetName::Setting1_1 => Preset::Setting1_1,
        PresetName::Setting1_2 => Preset::Setting1_2,
        PresetName::Setting2 => {
            let network = random_network(
                NetworkKind::ErdosRenyi {
                    edge_prob: args.edge_prob,
                },
                args.p,
                args.network_seed,
            )?;
            Preset::Setting2 {
                network: network.into_iter().collect(),
                frequency: args.frequency,
            }
        }
        PresetName::Setting3_1 => Preset::Setting3_1,
        PresetName::Setting3_2 => Preset::Setting3_2 { rho: args.rho },
    })
}

fn check_threads_positive(n: usize, what: &str) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Config(format!("{what} must be at least 1")));
    }
    Ok(())
}

fn cmd_simulate(
    command: &Command,
    a: &SimulateArgs,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let inputs: Vec<&Path> = a.model.iter().map(|p| p.as_path()).collect();
    let provenance = Provenance::new(command, threads, &inputs)?;
    let model: ModelSpec = match &a.model {
        Some(path) => read_json(path, "model")?,
        None => preset(
            &preset_of(&a.preset)?,
            a.preset.p,
            a.preset.horizon,
            a.model_seed.unwrap_or(a.seed),
        )?,
    };
    let events = simulate(&model, a.seed)?;
    log::info!(
        "simulated {} events on {} nodes",
        events.total(),
        events.p()
    );

    let format = a.format.unwrap_or(if is_jsonl(&a.out) {
        EventFormat::Jsonl
    } else {
        EventFormat::Csv
    });
    let mut buf = Vec::new();
    let comments = provenance.comments();
    match format {
        EventFormat::Csv => events.write_csv(&mut buf, &comments),
        EventFormat::Jsonl => events.write_jsonl(&mut buf, &comments),
    }
    .map_err(CliError::io(&a.out))?;
    write_file(&a.out, &buf)?;

    if let Some(path) = &a.model_out {
        #[derive(Serialize)]
        struct Body<'a> {
            model: &'a ModelSpec,
            model_sha256: String,
        }
        write_json(
            path,
            &provenance,
            Body {
                model: &model,
                model_sha256: model.content_hash(),
            },
        )?;
    }
    Ok(())
}

fn cmd_fit(command: &Command, a: &FitArgs, threads: Option<usize>) -> Result<(), CliError> {
    let mut inputs = vec![a.input.events.as_path()];
    if let Some(path) = &a.load_design {
        inputs.push(path);
    }
    let provenance = Provenance::new(command, threads, &inputs)?;
    let events = read_events(&a.input)?;
    let cfg = pipeline_config(
        &a.basis,
        &a.select,
        a.m0,
        a.m1,
        a.basis.support_b.unwrap_or(DEFAULT_SUPPORT),
    );

    let design = match &a.load_design {
        Some(path) => {
            let file = File::open(path).map_err(CliError::io(path))?;
            let design = DesignCache::read_from(BufReader::new(file))?;
            if design.p() != events.p() || design.horizon() != events.horizon() {
                return Err(CliError::Config(format!(
                    "{}: cached design has p = {}, T = {}; events have p = {}, T = {}",
                    path.display(),
                    design.p(),
                    design.horizon(),
                    events.p(),
                    events.horizon()
                )));
            }
            design
        }
        None => build_design(&events, &cfg.design_config())?,
    };
    if let Some(path) = &a.save_design {
        let mut buf = Vec::new();
        design.write_to(&mut buf)?;
        write_file(path, &buf)?;
    }

    let (fitted, selections) = select_all(&design, &cfg.select)?;
    let edges: Vec<(usize, usize)> = fitted.edges().into_iter().collect();
    log::info!("recovered {} edges", edges.len());

    #[derive(Serialize)]
    struct Body<'a> {
        model: &'a FittedModel,
        edges: &'a [(usize, usize)],
        selections: &'a [Option<hawkesnet::EtaSelection>],
    }
    write_json(
        &a.out,
        &provenance,
        Body {
            model: &fitted,
            edges: &edges,
            selections: &selections,
        },
    )?;
    if let Some(path) = &a.gic_out {
        write_csv(path, &provenance, |w| write_gic_csv(w, &selections))?;
    }

    let stalled = fitted.fits.iter().filter(|f| !f.converged).count();
    if stalled > 0 {
        return Err(CliError::NotConverged(stalled));
    }
    Ok(())
}

fn cmd_select_dims(
    command: &Command,
    a: &SelectDimsArgs,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let provenance = Provenance::new(command, threads, &[a.input.events.as_path()])?;
    let events = read_events(&a.input)?;
    let (m0, m1) = (a.m0_candidates[0], a.m1_candidates[0]);
    let cfg = pipeline_config(
        &a.basis,
        &a.select,
        m0,
        m1,
        a.basis.support_b.unwrap_or(DEFAULT_SUPPORT),
    );
    let selection = select_basis_dims(
        &events,
        &cfg.design_config(),
        &a.m0_candidates,
        &a.m1_candidates,
        &cfg.select,
    )?;
    println!("m0={} m1={}", selection.m0, selection.m1);
    write_csv(&a.out, &provenance, |w| write_bic_csv(w, &selection))
}

fn cmd_test(command: &Command, a: &TestArgs, threads: Option<usize>) -> Result<(), CliError> {
    let provenance = Provenance::new(command, threads, &[a.input.events.as_path()])?;
    let events = read_events(&a.input)?;
    let cfg = test_config(
        &a.basis,
        &a.select,
        &a.test,
        a.basis.support_b.unwrap_or(DEFAULT_SUPPORT),
    );
    let tests = test_all(&events, a.m0, a.m1, &cfg)?;
    let rejected = tests.iter().flatten().filter(|t| t.reject).count();
    log::info!(
        "rejected constancy at {} of {} nodes",
        rejected,
        tests.iter().flatten().count()
    );
    write_csv(&a.out, &provenance, |w| write_tests_csv(w, &tests))
}

fn cmd_evaluate(
    command: &Command,
    a: &EvaluateArgs,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let provenance = Provenance::new(command, threads, &[a.model.as_path(), a.fit.as_path()])?;
    let truth: ModelSpec = read_json(&a.model, "model")?;
    let fitted: FittedModel = read_json(&a.fit, "model")?;
    if truth.p() != fitted.p {
        return Err(CliError::Config(format!(
            "model has {} nodes but the fit has {}",
            truth.p(),
            fitted.p
        )));
    }
    let r = evaluate(&truth, &fitted);
    write_csv(&a.out, &provenance, |w| {
        writeln!(w, "mse_nu,mse_omega,fnr,fpr,f1,tp,fp,fn,tn")?;
        writeln!(
            w,
            "{:e},{:e},{:e},{:e},{:e},{},{},{},{}",
            r.mse_nu,
            r.mse_omega,
            r.fnr,
            r.fpr,
            r.f1,
            r.counts.tp,
            r.counts.fp,
            r.counts.fn_,
            r.counts.tn
        )
    })
}

fn cmd_replicate(
    command: &Command,
    a: &ReplicateArgs,
    threads: Option<usize>,
) -> Result<(), CliError> {
    check_threads_positive(a.reps, "--reps")?;
    if a.no_fit && !a.test {
        return Err(CliError::Config(
            "--no-fit without --test leaves nothing to do".into(),
        ));
    }
    let provenance = Provenance::new(command, threads, &[])?;
    let plan = ReplicationPlan::new(preset_of(&a.preset)?, a.preset.p, a.preset.horizon, a.seed);
    let support = match a.basis.support_b {
        Some(b) => b,
        None => plan.model(0)?.support(),
    };
    let mut cfg = pipeline_config(&a.basis, &a.select, a.m0, a.m1, support);
    if let (Some(m0c), Some(m1c)) = (&a.m0_candidates, &a.m1_candidates) {
        let dims_reps = a.dims_reps.unwrap_or(a.reps);
        check_threads_positive(dims_reps, "--dims-reps")?;
        let choice = averaged_dims(&plan, &cfg, m0c, m1c, dims_reps)?;
        log::info!("per-draw dimension choices: {:?}", choice.selected);
        println!("m0={} m1={}", choice.m0, choice.m1);
        cfg.m0 = choice.m0;
        cfg.m1 = choice.m1;
    }

    let label = format!("{}_T{}", plan.preset.label(), plan.horizon);
    if !a.no_fit {
        let outcomes = replicate_fits(&plan, &cfg, a.reps)?;
        let reports: Vec<_> = outcomes.iter().map(|o| o.report).collect();
        let summary = summarize(&reports);
        println!(
            "{label} m0={} m1={} reps={}: F1 {} FPR {} FNR {} MSE(nu) {} MSE(omega) {}",
            cfg.m0,
            cfg.m1,
            summary.reps,
            summary.f1,
            summary.fpr,
            summary.fnr,
            summary.mse_nu,
            summary.mse_omega
        );
        write_csv(&a.out, &provenance, |w| {
            write_summary_csv(w, &label, &summary)
        })?;
        if let Some(path) = &a.per_rep {
            let rows: Vec<_> = outcomes.iter().map(|o| (o.seed, o.report)).collect();
            write_csv(path, &provenance, |w| write_reports_csv(w, &rows))?;
        }
    }

    if a.test {
        let tcfg = test_config(&a.basis, &a.select, &a.test_knobs, support);
        let tests = replicate_tests(&plan, &tcfg, cfg.m0, cfg.m1, a.reps)?;
        let mut per_node = BTreeMap::<usize, (usize, usize)>::new();
        for t in tests.iter().flatten() {
            let e = per_node.entry(t.node).or_default();
            e.0 += 1;
            e.1 += usize::from(t.reject);
        }
        let total: usize = per_node.values().map(|v| v.0).sum();
        let rejected: usize = per_node.values().map(|v| v.1).sum();
        let rate = |n: usize, r: usize| {
            if n == 0 {
                f64::NAN
            } else {
                r as f64 / n as f64
            }
        };
        println!(
            "{label} background test: rejected {rejected} of {total} ({:.3}) at level {}",
            rate(total, rejected),
            a.test_knobs.alpha_level
        );
        let body = |w: &mut Vec<u8>| -> std::io::Result<()> {
            writeln!(w, "node,tests,rejections,rate")?;
            for (node, &(n, r)) in &per_node {
                writeln!(w, "{node},{n},{r},{:e}", rate(n, r))?;
            }
            writeln!(w, "all,{total},{rejected},{:e}", rate(total, rejected))
        };
        match &a.tests_out {
            Some(path) => write_csv(path, &provenance, body)?,
            None if a.no_fit => write_csv(&a.out, &provenance, body)?,
            None => {}
        }
    }
    Ok(())
}
