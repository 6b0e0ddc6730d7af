//! Subcommands of the `cprune` binary.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cprune_core::hwmodel::HwError;
use cprune_core::nnir::mobilenet_v1_backbone;
use cprune_core::planner::{NoFineTune, PlanError};
use cprune_core::profiler::{ProfileError, SweepConfig};
use cprune_core::ranking::rank_layer;
use cprune_core::{
    cluster_prune, count_macs, count_params, fidelity, filter_prune, profile_all, prunable_layers, remove_filters,
    synth_model, AccuracyResponseModel, ClusterSizes, Family, Method, Network, NodeId, PeriodEstimate, PlanContext,
    ProbeSet, PruneConfig, PruneLog, PruneRequest, TopologySpec,
};
use serde::Serialize;

use crate::config::{ClusterSizePolicy, RunConfig, Settings};
use crate::error::CliError;
use crate::formats;
use crate::model_file::{parse_model, serialize_model};
use crate::report::{dims_rows, render_dims, Direction, GainReport};

#[derive(Debug, Parser)]
#[command(name = "cprune", version, about = "Hardware-aware filter and cluster pruning for small CNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a generated model.
    Gen(GenArgs),
    /// Sweep layers one filter at a time and detect latency and accuracy periods.
    Profile(RunArgs),
    /// Prune a model under a budget.
    Prune(RunArgs),
    /// Measure fidelity, latency, parameters and MACs of a model.
    Eval(EvalArgs),
    /// Gain tables and layer-dimension tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// MobileNet-v1 backbone (conv0 to conv10) with a pooled classifier.
    MobilenetV1Backbone,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub settings: Settings,
    /// Generated family: mobilenet_like, squeezenet_like or plain_chain.
    #[arg(long, default_value = "mobilenet_like", conflicts_with = "preset")]
    pub family: String,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[arg(long, default_value_t = 16)]
    pub base: usize,
    /// Fixed architecture instead of a generated family.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Input height and width of the preset.
    #[arg(long, default_value_t = 32)]
    pub input_hw: usize,
    /// Remove the N lowest-scoring filters of a layer, as `layer:N`; repeatable, applied in order.
    #[arg(long = "remove", value_parser = parse_removal)]
    pub removals: Vec<(String, usize)>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub settings: Settings,
    /// Unpruned model to compare against; defaults to the model itself.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub settings: Settings,
    /// CSV of `setup,without_pruning,after_pruning` rows.
    #[arg(long)]
    pub gain_csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "latency")]
    pub direction: Direction,
    /// Print the layer-dimension table of `--model` against each `--pruned` model.
    #[arg(long)]
    pub dims: bool,
    /// Pruned model for the dimension table; repeatable.
    #[arg(long)]
    pub pruned: Vec<PathBuf>,
    /// Column label for each `--pruned` model; defaults to the file stem.
    #[arg(long)]
    pub label: Vec<String>,
}

fn parse_removal(s: &str) -> Result<(String, usize), String> {
    let (layer, n) = s.rsplit_once(':').ok_or_else(|| format!("expected `layer:N`, got `{s}`"))?;
    let n = n.parse().map_err(|_| format!("`{n}` is not a filter count"))?;
    if layer.is_empty() {
        return Err(format!("missing layer name in `{s}`"));
    }
    Ok((layer.to_string(), n))
}

/// What a finished command reports besides its artifacts.
#[derive(Debug, Default)]
pub struct Outcome {
    pub warnings: Vec<String>,
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    let env = Settings::from_env()?;
    match cli.command {
        Command::Gen(a) => cmd_gen(&RunConfig::resolve(env.overlay(a.settings.clone()))?, &a),
        Command::Profile(a) => cmd_profile(&RunConfig::resolve(env.overlay(a.settings))?),
        Command::Prune(a) => cmd_prune(&RunConfig::resolve(env.overlay(a.settings))?),
        Command::Eval(a) => cmd_eval(&RunConfig::resolve(env.overlay(a.settings.clone()))?, a.reference.as_deref()),
        Command::Report(a) => cmd_report(&RunConfig::resolve(env.overlay(a.settings.clone()))?, &a),
    }
}

/// Writes `path` through a temporary file in the same directory and renames
/// it into place, so readers never see a partial artifact.
pub fn write_atomic<F, E>(path: &Path, fill: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> Result<(), E>,
    E: std::fmt::Display,
{
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::data(dir, e))?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w).map_err(|e| CliError::data(path, e))?;
        w.flush().map_err(|e| CliError::data(path, e))?;
    }
    tmp.persist(path).map_err(|e| CliError::data(path, e.error))?;
    Ok(())
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::data(&cfg.out, e))?;
    Ok(&cfg.out)
}

pub fn load_model(path: &Path) -> Result<Network, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::data(path, e))?;
    parse_model(&bytes).map_err(|e| CliError::data(path, e))
}

fn save_model(path: &Path, net: &Network) -> Result<(), CliError> {
    let bytes = serialize_model(net).map_err(CliError::internal)?;
    write_atomic(path, |w| w.write_all(&bytes))
}

fn plan_error(e: PlanError) -> CliError {
    match e {
        PlanError::InvalidBudget(_) | PlanError::InvalidWeights(_) | PlanError::MissingClusterSize { .. } => {
            CliError::Config(e.to_string())
        }
        PlanError::NoCandidates | PlanError::Hw(HwError::MissingKey { .. }) => CliError::Data(e.to_string()),
        PlanError::Hw(HwError::InvalidParameter(_)) => CliError::Config(e.to_string()),
        _ => CliError::internal(e),
    }
}

fn profile_error(e: ProfileError) -> CliError {
    match e {
        ProfileError::Hw(HwError::MissingKey { .. }) => CliError::Data(e.to_string()),
        _ => CliError::internal(e),
    }
}

fn prune_config(cfg: &RunConfig) -> PruneConfig {
    PruneConfig { min_remaining: cfg.min_remaining, ..PruneConfig::default() }
}

/// Explicit `layers` (all must exist) or every prunable layer, minus `exclude`.
fn select_layers(net: &Network, cfg: &RunConfig) -> Result<Vec<NodeId>, CliError> {
    let lookup = |name: &String, field: &str| {
        net.find(name).ok_or_else(|| CliError::Config(format!("`{field}`: model has no layer `{name}`")))
    };
    let excluded = cfg.exclude.iter().map(|n| lookup(n, "exclude")).collect::<Result<Vec<_>, _>>()?;
    let layers = match &cfg.layers {
        Some(names) => {
            let prunable = prunable_layers(net, &PruneConfig { include_first: true, include_tail: true, ..prune_config(cfg) });
            names
                .iter()
                .map(|n| {
                    let id = lookup(n, "layers")?;
                    if prunable.contains(&id) {
                        Ok(id)
                    } else {
                        Err(CliError::Config(format!("`layers`: `{n}` is not a prunable conv")))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?
        }
        None => prunable_layers(net, &prune_config(cfg)),
    };
    Ok(layers.into_iter().filter(|l| !excluded.contains(l)).collect())
}

fn accuracy(cfg: &RunConfig) -> Result<AccuracyResponseModel, CliError> {
    AccuracyResponseModel::new(cfg.delta, cfg.lane_width).map_err(|e| CliError::Config(e.to_string()))
}

fn probes_for(net: &Network, cfg: &RunConfig) -> ProbeSet {
    ProbeSet::generate(cfg.seed, cfg.probes, net.input_dims)
}

pub fn cmd_gen(cfg: &RunConfig, args: &GenArgs) -> Result<Outcome, CliError> {
    let mut net = match args.preset {
        Some(Preset::MobilenetV1Backbone) => {
            if args.input_hw < 32 {
                return Err(CliError::Config("`input_hw` must be at least 32 for the backbone preset".into()));
            }
            mobilenet_v1_backbone(args.input_hw, cfg.seed)
        }
        None => {
            let family: Family = args.family.parse().map_err(|e| CliError::Config(format!("`family`: {e}")))?;
            let spec = TopologySpec { family, depth: args.depth, base_channels: args.base, seed: cfg.seed };
            synth_model(&spec).map_err(|e| CliError::Config(e.to_string()))?
        }
    };
    for (layer, n) in &args.removals {
        let id = net.find(layer).ok_or_else(|| CliError::Config(format!("`remove`: model has no layer `{layer}`")))?;
        let ranked = rank_layer(&net, id).map_err(|e| CliError::Config(format!("`remove` {layer}: {e}")))?;
        if *n > ranked.len() {
            return Err(CliError::Config(format!("`remove` {layer}:{n}: layer has only {} filters", ranked.len())));
        }
        let indices = ranked[..*n].iter().map(|s| s.filter.index).collect();
        net = remove_filters(&net, &PruneRequest::new(id, indices), cfg.min_remaining)
            .map_err(|e| CliError::Config(format!("`remove` {layer}:{n}: {e}")))?
            .0;
    }
    let path = out_dir(cfg)?.join("model.cpr");
    save_model(&path, &net)?;
    println!("wrote {} ({} params, {} filters)", path.display(), count_params(&net), net.total_filters());
    Ok(Outcome::default())
}

struct Profiled {
    estimates: BTreeMap<NodeId, PeriodEstimate>,
    warnings: Vec<String>,
}

fn profile_and_write(net: &Network, cfg: &RunConfig, layers: &[NodeId]) -> Result<Profiled, CliError> {
    let latency = cfg.latency_model()?;
    let acc = accuracy(cfg)?;
    let probes = probes_for(net, cfg);
    let sweep = SweepConfig { min_remaining: cfg.min_remaining, ..SweepConfig::default() };
    let profiles = profile_all(net, latency.as_ref(), &acc, &probes, layers, &sweep).map_err(profile_error)?;
    let out = out_dir(cfg)?;
    write_atomic(&out.join("sweeps.csv"), |w| formats::write_sweeps(w, profiles.values().filter_map(|p| p.trace.as_ref())))?;
    let estimates: BTreeMap<NodeId, PeriodEstimate> = profiles.iter().map(|(id, p)| (*id, p.estimate)).collect();
    write_atomic(&out.join("periods.json"), |w| formats::write_periods(w, net, &estimates))?;
    let mut warnings = Vec::new();
    for (id, e) in &estimates {
        let node = net.node(*id);
        if e.skipped {
            warnings.push(format!(
                "layer `{}` has {} filters, too few to profile; using period 1",
                node.name,
                node.c_out().unwrap_or(0)
            ));
        }
    }
    Ok(Profiled { estimates, warnings })
}

pub fn cmd_profile(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let net = load_model(cfg.model_path()?)?;
    let layers = select_layers(&net, cfg)?;
    let profiled = profile_and_write(&net, cfg, &layers)?;
    println!("{:<16} {:>5} {:>5} {:>5} {:>8} {:>8}", "layer", "p_lat", "p_acc", "P", "lat_conf", "acc_conf");
    for (id, e) in &profiled.estimates {
        println!(
            "{:<16} {:>5} {:>5} {:>5} {:>8.2} {:>8.2}{}",
            net.node(*id).name,
            e.p_lat,
            e.p_acc,
            e.cluster_size,
            e.lat_confidence,
            e.acc_confidence,
            if e.skipped { "  (skipped)" } else { "" }
        );
    }
    Ok(Outcome { warnings: profiled.warnings })
}

#[derive(Serialize)]
struct PruneSummary<'a> {
    method: Method,
    stop: cprune_core::planner::StopReason,
    budget_unmet: bool,
    steps: usize,
    filters_pruned: usize,
    params_before: u64,
    params_after: u64,
    latency_before_ms: f64,
    latency_after_ms: f64,
    cluster_sizes: BTreeMap<&'a str, usize>,
}

pub fn cmd_prune(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let net = load_model(cfg.model_path()?)?;
    let layers = select_layers(&net, cfg)?;
    let latency = cfg.latency_model()?;
    let probes = probes_for(&net, cfg);
    let mut warnings = Vec::new();
    let ctx = PlanContext {
        accuracy: accuracy(cfg)?,
        prune: prune_config(cfg),
        layers: Some(layers.clone()),
        rerank_filters: cfg.rerank,
        ..PlanContext::new(latency.as_ref(), &probes)
    };
    let mut sizes_by_name = BTreeMap::new();
    let (pruned, log) = match cfg.method {
        Method::Filter => filter_prune(&net, &cfg.budget, &ctx, &mut NoFineTune).map_err(plan_error)?,
        Method::Cluster => {
            let sizes = match &cfg.cluster_size {
                ClusterSizePolicy::Fixed(p) => ClusterSizes::Uniform(*p),
                ClusterSizePolicy::Auto => {
                    let profiled = profile_and_write(&net, cfg, &layers)?;
                    warnings.extend(profiled.warnings);
                    ClusterSizes::PerLayer(profiled.estimates.iter().map(|(id, e)| (*id, e.cluster_size)).collect())
                }
                ClusterSizePolicy::File(path) => {
                    let file = File::open(path).map_err(|e| CliError::data(path, e))?;
                    let estimates = formats::read_periods(BufReader::new(file), &net).map_err(|e| CliError::data(path, e))?;
                    if let Some((_, bad)) = estimates.iter().find(|(_, e)| e.cluster_size == 0) {
                        return Err(CliError::Data(format!("{}: cluster_size 0 in {bad:?}", path.display())));
                    }
                    ClusterSizes::PerLayer(estimates.iter().map(|(id, e)| (*id, e.cluster_size)).collect())
                }
            };
            for &l in &layers {
                if let Some(p) = sizes.get(l) {
                    sizes_by_name.insert(net.node(l).name.as_str(), p);
                }
            }
            cluster_prune(&net, &sizes, &cfg.budget, &ctx, &mut NoFineTune).map_err(plan_error)?
        }
    };
    if log.budget_unmet {
        warnings.push(format!("budget not met; stopped because {:?}", log.stop));
    }
    let out = out_dir(cfg)?;
    save_model(&out.join("pruned.cpr"), &pruned)?;
    write_prune_artifacts(out, &net, &log)?;
    let lat = |n: &Network| latency.network_latency(n).map(|l| l.total_ms).map_err(|e| plan_error(e.into()));
    let summary = PruneSummary {
        method: log.method,
        stop: log.stop,
        budget_unmet: log.budget_unmet,
        steps: log.steps.len(),
        filters_pruned: log.filters_pruned(),
        params_before: count_params(&net),
        params_after: count_params(&pruned),
        latency_before_ms: lat(&net)?,
        latency_after_ms: lat(&pruned)?,
        cluster_sizes: sizes_by_name,
    };
    write_atomic(&out.join("prune_summary.json"), |w| serde_json::to_writer_pretty(w, &summary))?;
    println!(
        "{} pruning: {} filters in {} steps, params {} -> {}, latency {:.4} -> {:.4} ms ({:?})",
        log.method.as_str(),
        summary.filters_pruned,
        summary.steps,
        summary.params_before,
        summary.params_after,
        summary.latency_before_ms,
        summary.latency_after_ms,
        log.stop
    );
    Ok(Outcome { warnings })
}

fn write_prune_artifacts(out: &Path, original: &Network, log: &PruneLog) -> Result<(), CliError> {
    write_atomic(&out.join("prune_log.jsonl"), |w| formats::write_prune_log_jsonl(w, log))?;
    write_atomic(&out.join("prune_log.csv"), |w| formats::write_prune_log_csv(w, original, log))?;
    write_atomic(&out.join("propagation.jsonl"), |w| formats::write_propagation_jsonl(w, original, log))
}

#[derive(Serialize)]
struct EvalSummary {
    params: u64,
    macs: u64,
    latency_ms: f64,
    argmax_agreement: f64,
    adjusted_agreement: f64,
    mean_abs_deviation: f64,
    probe_count: usize,
}

pub fn cmd_eval(cfg: &RunConfig, reference: Option<&Path>) -> Result<Outcome, CliError> {
    let net = load_model(cfg.model_path()?)?;
    let reference_net = match reference {
        Some(p) => load_model(p)?,
        None => net.clone(),
    };
    if reference_net.input_dims != net.input_dims {
        return Err(CliError::Data("model and reference take different input shapes".into()));
    }
    let latency = cfg.latency_model()?;
    let probes = probes_for(&net, cfg);
    let report = fidelity(&reference_net, &net, &probes).map_err(|e| CliError::Data(e.to_string()))?;
    let adjusted = accuracy(cfg)?.adjusted_fidelity(&net, report);
    let breakdown = latency.network_latency(&net).map_err(|e| plan_error(e.into()))?;
    let macs = count_macs(&net).map_err(CliError::internal)?.total;
    let out = out_dir(cfg)?;
    write_atomic(&out.join("fidelity.csv"), |w| formats::write_fidelity(w, &report))?;
    write_atomic(&out.join("latency.csv"), |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["layer_id", "latency_ms"])?;
        for (name, t) in &breakdown.per_layer {
            csv.write_record([name.as_str(), &t.to_string()])?;
        }
        csv.write_record([cprune_core::hwmodel::WHOLE_NETWORK, &breakdown.total_ms.to_string()])?;
        csv.flush().map_err(csv::Error::from)
    })?;
    let layers = select_layers(&net, cfg)?;
    write_atomic(&out.join("ranking.csv"), |w| formats::write_ranking(w, &net, &layers))?;
    let summary = EvalSummary {
        params: count_params(&net),
        macs,
        latency_ms: breakdown.total_ms,
        argmax_agreement: report.argmax_agreement,
        adjusted_agreement: adjusted.argmax_agreement,
        mean_abs_deviation: report.mean_abs_deviation,
        probe_count: report.probe_count,
    };
    write_atomic(&out.join("eval.json"), |w| serde_json::to_writer_pretty(w, &summary))?;
    println!(
        "params {}  macs {}  latency {:.4} ms  agreement {:.4} (adjusted {:.4})  mean |dev| {:.6}",
        summary.params, summary.macs, summary.latency_ms, summary.argmax_agreement, summary.adjusted_agreement, summary.mean_abs_deviation
    );
    Ok(Outcome::default())
}

pub fn cmd_report(cfg: &RunConfig, args: &ReportArgs) -> Result<Outcome, CliError> {
    if args.gain_csv.is_none() && !args.dims {
        return Err(CliError::Config("report needs `--gain-csv` and/or `--dims`".into()));
    }
    if let Some(path) = &args.gain_csv {
        let file = File::open(path).map_err(|e| CliError::data(path, e))?;
        let report = GainReport::from_csv(BufReader::new(file), args.direction).map_err(|e| CliError::data(path, e))?;
        write_atomic(&out_dir(cfg)?.join("gain.csv"), |w| report.write_csv(w))?;
        print!("{}", report.render());
    }
    if args.dims {
        let original = load_model(cfg.model_path()?)?;
        if args.pruned.is_empty() {
            return Err(CliError::Config("`--dims` needs at least one `--pruned` model".into()));
        }
        if !args.label.is_empty() && args.label.len() != args.pruned.len() {
            return Err(CliError::Config("give one `--label` per `--pruned` model".into()));
        }
        let pruned = args.pruned.iter().map(|p| load_model(p)).collect::<Result<Vec<_>, _>>()?;
        let labels: Vec<String> = if args.label.is_empty() {
            args.pruned
                .iter()
                .map(|p| p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()))
                .collect()
        } else {
            args.label.clone()
        };
        let rows = dims_rows(&original, &pruned.iter().collect::<Vec<_>>());
        let table = render_dims(&rows, &labels);
        write_atomic(&out_dir(cfg)?.join("dims.txt"), |w| w.write_all(table.as_bytes()))?;
        print!("{table}");
    }
    Ok(Outcome::default())
}
