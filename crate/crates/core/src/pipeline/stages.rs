use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::{RouteSource, RunConfig};
use super::manifest::Manifest;
use crate::adjacency::{
    adaptive_file, adjacency_delta, delta_file, read_adaptive, write_adjacency_dir, AdjacencyBank, ROW_NORM_EPS,
};
use crate::data_io::{
    generate_synthetic, load_counts, DATETIME_OUT, load_crashes, load_stations, save_counts, save_crashes, save_stations, CrashTable,
    FlowSeries, StationNetwork,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    ks_lognormal, mae_rmse, monte_carlo_route, picp_mpiw, write_svg, write_trip_samples, EdgeTimes, HistoricalAverage,
    KsReport, MetricReport, ReportMeta, Trace, TripSummary,
};
use crate::graph_prior::{
    baseline_travel_times, estimate_cv_profile, read_bank_dir, sample_bank, write_bank_dir, TravelTimeBank, HOURS,
};
use crate::incident::{node_risk, severity_factors, write_severity_csv, RiskField, SeverityTable};
use crate::matrix_io::fingerprint_files;
use crate::model::{Ablation, HourlyAdjacency, Model};
use crate::seed;
use crate::training::{
    calibrate, forecasts_in_flow_units, intervals, make_windows, read_radii_csv, train, ConformalRadii, EpochRecord,
    WindowDataset,
};

/// Directory layout of a run.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn graphs(&self) -> PathBuf {
        self.root.join("graphs")
    }

    pub fn model(&self, ablation: Ablation) -> PathBuf {
        self.root.join(format!("model-{}", ablation.name().to_ascii_lowercase()))
    }

    pub fn delta(&self) -> PathBuf {
        self.root.join("delta")
    }

    pub fn route(&self) -> PathBuf {
        self.root.join("route")
    }
}

/// Stations, flows and (optionally) crashes as consumed by the run.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub net: StationNetwork,
    pub flows: FlowSeries,
    pub crashes: Option<CrashTable>,
    /// Input files actually read, for the manifest.
    pub files: Vec<PathBuf>,
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    if let Some(d) = &cfg.data {
        let net = load_stations(&d.stations)?;
        let flows = load_counts(&d.counts, &net)?;
        let mut files = vec![d.stations.clone(), d.counts.clone()];
        let crashes = match (&d.crashes, cfg.no_crash) {
            (Some(p), false) => {
                let load = load_crashes(p)?;
                if load.dropped_nonpositive_clearance > 0 {
                    log::warn!(
                        "{}: dropped {} crash(es) with nonpositive clearance time",
                        p.display(),
                        load.dropped_nonpositive_clearance
                    );
                }
                files.push(p.clone());
                Some(load.table)
            }
            _ => None,
        };
        if let Some(t) = &d.travel_times {
            files.push(t.clone());
        }
        return Ok(Inputs {
            net,
            flows,
            crashes: crashes.filter(|c| !c.is_empty()),
            files,
        });
    }
    let syn = cfg.synthetic_or_default().expect("synthetic settings when no data paths");
    let (net, flows, crashes) = generate_synthetic(&syn, seed::derive(cfg.seed, "synthetic"))?;
    let crashes = (!cfg.no_crash && !crashes.is_empty()).then_some(crashes);
    Ok(Inputs {
        net,
        flows,
        crashes,
        files: Vec::new(),
    })
}

/// The training span of the flows under the configured splits.
pub fn training_flows(cfg: &RunConfig, flows: &FlowSeries) -> FlowSeries {
    let r = cfg.training.splits.ranges(flows.n_steps());
    flows.slice(0, r.train.end)
}

pub fn bank_seed(cfg: &RunConfig) -> u64 {
    cfg.graph.seed.unwrap_or_else(|| seed::derive(cfg.seed, "bank"))
}

/// Travel-time bank, risk field and adjacency computed in memory.
#[derive(Debug, Clone)]
pub struct GraphArtifacts {
    pub bank: TravelTimeBank,
    pub severity: Option<SeverityTable>,
    pub field: RiskField,
    pub adjacency: AdjacencyBank,
}

pub fn risk_field(cfg: &RunConfig, inputs: &Inputs) -> Result<(Option<SeverityTable>, RiskField)> {
    let n = inputs.net.len();
    match &inputs.crashes {
        Some(c) => {
            let sev = severity_factors(c, &inputs.net, cfg.graph.eps)?;
            let field = node_risk(&sev, n, cfg.graph.eps)?;
            Ok((Some(sev), field))
        }
        None => Ok((None, RiskField::zeros(n))),
    }
}

/// Incident-aware adjacency when crashes are present, otherwise the base.
pub fn adjacency_for(cfg: &RunConfig, inputs: &Inputs, bank: &TravelTimeBank, field: &RiskField) -> Result<AdjacencyBank> {
    let params = cfg.graph.adjacency_params();
    if inputs.crashes.is_some() {
        AdjacencyBank::build(bank, field, &inputs.net, params)
    } else {
        AdjacencyBank::build_base(bank, field, &inputs.net, params)
    }
}

pub fn build_graph_artifacts(cfg: &RunConfig, inputs: &Inputs) -> Result<GraphArtifacts> {
    let overrides = cfg.data.as_ref().and_then(|d| d.travel_times.as_deref());
    let t_mean = baseline_travel_times(&inputs.net, cfg.graph.speed_mph, overrides)?;
    let profile = estimate_cv_profile(&training_flows(cfg, &inputs.flows))?;
    let bank = sample_bank(&t_mean, &profile, bank_seed(cfg), cfg.graph.samples_per_edge)?;
    let (severity, field) = risk_field(cfg, inputs)?;
    let adjacency = adjacency_for(cfg, inputs, &bank, &field)?;
    Ok(GraphArtifacts {
        bank,
        severity,
        field,
        adjacency,
    })
}

fn start(cfg: &RunConfig) -> Result<RunPaths> {
    cfg.validate()?;
    let paths = RunPaths::new(&cfg.out_dir);
    fs::create_dir_all(&paths.root).map_err(|e| Error::io(&paths.root, e))?;
    Ok(paths)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn record_inputs(m: &mut Manifest, inputs: &Inputs) -> Result<()> {
    for f in &inputs.files {
        m.input(f)?;
    }
    Ok(())
}

/// `build-graphs`: travel-time bank, severity table, rho and the 24
/// adaptive adjacency matrices. Synthetic inputs are written to `data/`.
pub fn build_graphs(cfg: &RunConfig) -> Result<Manifest> {
    let paths = start(cfg)?;
    let inputs = load_inputs(cfg)?;
    let mut m = Manifest::new("build-graphs", cfg);
    record_inputs(&mut m, &inputs)?;
    if cfg.data.is_none() {
        let d = paths.data();
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        save_stations(&d.join("stations.csv"), &inputs.net)?;
        save_counts(&d.join("counts.csv"), &inputs.flows, &inputs.net)?;
        if let Some(c) = &inputs.crashes {
            save_crashes(&d.join("crashes.csv"), c)?;
        }
        m.seed("synthetic", seed::derive(cfg.seed, "synthetic"));
        m.output(&paths.root, &d)?;
    }
    let art = build_graph_artifacts(cfg, &inputs)?;
    let ids = inputs.net.ids();
    let g = paths.graphs();
    if g.exists() {
        fs::remove_dir_all(&g).map_err(|e| Error::io(&g, e))?;
    }
    write_bank_dir(&g, &ids, &art.bank)?;
    write_adjacency_dir(&g, &ids, &art.adjacency)?;
    if let Some(sev) = &art.severity {
        write_severity_csv(&g.join("severity.csv"), sev, &inputs.net)?;
    }
    m.seed("bank", art.bank.seed);
    m.note("mode", if inputs.crashes.is_some() { "incident" } else { "base" });
    m.note("crashes", inputs.crashes.as_ref().map_or(0, CrashTable::len));
    m.output(&paths.root, &g)?;
    m.write(&paths.root)?;
    Ok(m)
}

/// Windows, hourly adjacency read from `graphs/`, and its fingerprint.
pub struct ModelInputs {
    pub inputs: Inputs,
    pub data: WindowDataset,
    pub adjacency: HourlyAdjacency,
    pub fingerprint: String,
}

pub fn model_inputs(cfg: &RunConfig, paths: &RunPaths) -> Result<ModelInputs> {
    let inputs = load_inputs(cfg)?;
    let ids = inputs.net.ids();
    let g = paths.graphs();
    let adaptive = read_adaptive(&g, &ids)?;
    let files: Vec<PathBuf> = (0..HOURS).map(|h| g.join(adaptive_file(h))).collect();
    let fingerprint = fingerprint_files(&files)?;
    let data = make_windows(
        &inputs.flows,
        cfg.model.input_len,
        cfg.model.horizon,
        cfg.training.splits,
        cfg.graph.eps,
    )?;
    Ok(ModelInputs {
        inputs,
        data,
        adjacency: HourlyAdjacency::from_adaptive(&adaptive, ROW_NORM_EPS)?,
        fingerprint,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub ablation: String,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub param_count: usize,
    pub mean_radius: f64,
    pub history: Vec<EpochRecord>,
}

/// `train`: checkpoint, sidecar, history and radii in `model-<ablation>/`.
pub fn train_stage(cfg: &RunConfig) -> Result<TrainSummary> {
    let paths = start(cfg)?;
    let mi = model_inputs(cfg, &paths)?;
    let init_seed = seed::derive(cfg.seed, "model-init");
    let train_seed = seed::derive(cfg.seed, "train");
    let model = Model::init(cfg.model.clone(), mi.inputs.net.len(), init_seed)?;
    let out = train(model, &mi.data, &mi.adjacency, &cfg.training.options, train_seed)?;
    let dir = paths.model(cfg.model.ablation);
    out.model.save(&dir, &mi.fingerprint)?;
    out.radii.write_csv(&dir.join("radii.csv"), &mi.inputs.net.ids())?;
    write_json(&dir.join("history.json"), &out.history)?;

    let mut m = Manifest::new("train", cfg);
    record_inputs(&mut m, &mi.inputs)?;
    m.seed("model-init", init_seed);
    m.seed("train", train_seed);
    m.note("bank_fingerprint", &mi.fingerprint);
    m.note("best_epoch", out.best_epoch);
    m.output(&paths.root, &dir)?;
    m.write(&paths.root)?;
    Ok(TrainSummary {
        ablation: cfg.model.ablation.name().to_string(),
        best_epoch: out.best_epoch,
        epochs_run: out.history.len(),
        param_count: out.model.param_count(),
        mean_radius: out.radii.mean_radius(),
        history: out.history,
    })
}

fn load_trained(cfg: &RunConfig, paths: &RunPaths, mi: &ModelInputs) -> Result<Model> {
    let dir = paths.model(cfg.model.ablation);
    let (model, sidecar) = Model::load(&dir)?;
    if sidecar.bank_fingerprint != mi.fingerprint {
        return Err(Error::Validation(format!(
            "graphs in {} changed since {} was trained; rerun `train`",
            paths.graphs().display(),
            dir.display()
        )));
    }
    if model.config.input_len != cfg.model.input_len || model.config.horizon != cfg.model.horizon {
        return Err(Error::Config(format!(
            "checkpoint in {} uses L={} H={} but the config asks for L={} H={}",
            dir.display(),
            model.config.input_len,
            model.config.horizon,
            cfg.model.input_len,
            cfg.model.horizon
        )));
    }
    Ok(model)
}

/// `calibrate`: recomputes `radii.csv` at the configured alpha.
pub fn calibrate_stage(cfg: &RunConfig) -> Result<ConformalRadii> {
    let paths = start(cfg)?;
    let mi = model_inputs(cfg, &paths)?;
    let model = load_trained(cfg, &paths, &mi)?;
    let o = &cfg.training.options;
    let radii = calibrate(&model, &mi.data, &mi.adjacency, o.alpha, o.batch_size)?;
    let path = paths.model(cfg.model.ablation).join("radii.csv");
    radii.write_csv(&path, &mi.inputs.net.ids())?;
    let mut m = Manifest::new("calibrate", cfg);
    record_inputs(&mut m, &mi.inputs)?;
    m.output(&paths.root, &path)?;
    m.write(&paths.root)?;
    Ok(radii)
}

fn load_radii(cfg: &RunConfig, paths: &RunPaths) -> Result<Array2<f64>> {
    let path = paths.model(cfg.model.ablation).join("radii.csv");
    if !path.exists() {
        return Err(Error::MissingArtifact { path, producer: "train" });
    }
    let (q, alpha, _) = read_radii_csv(&path)?;
    let want = cfg.training.options.alpha;
    if (alpha - want).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "{} holds radii for alpha={alpha}; run `calibrate --alpha {want}` first",
            path.display()
        )));
    }
    Ok(q)
}

/// Test-split forecasts in flow units with their intervals.
pub struct TestForecasts {
    pub ends: Vec<usize>,
    pub pred: Vec<Array2<f64>>,
    pub truth: Vec<Array2<f64>>,
    pub lower: Vec<Array2<f64>>,
    pub upper: Vec<Array2<f64>>,
}

pub fn test_forecasts(model: &Model, mi_data: &WindowDataset, adj: &HourlyAdjacency, q: &Array2<f64>, batch: usize) -> Result<TestForecasts> {
    let ends = mi_data.test.clone();
    if ends.is_empty() {
        return Err(Error::Validation("test split has no windows".into()));
    }
    let (pred, truth) = forecasts_in_flow_units(model, mi_data, adj, &ends, batch)?;
    let mut lower = Vec::with_capacity(pred.len());
    let mut upper = Vec::with_capacity(pred.len());
    for p in &pred {
        let iv = intervals(p, q)?;
        lower.push(iv.lower);
        upper.push(iv.upper);
    }
    Ok(TestForecasts {
        ends,
        pred,
        truth,
        lower,
        upper,
    })
}

/// `predict`: `forecasts.csv` over the test windows.
pub fn predict_stage(cfg: &RunConfig) -> Result<PathBuf> {
    let paths = start(cfg)?;
    let mi = model_inputs(cfg, &paths)?;
    let model = load_trained(cfg, &paths, &mi)?;
    let q = load_radii(cfg, &paths)?;
    let f = test_forecasts(&model, &mi.data, &mi.adjacency, &q, cfg.training.options.batch_size)?;
    let path = paths.model(cfg.model.ablation).join("forecasts.csv");
    let ids = mi.inputs.net.ids();
    let ts = &mi.inputs.flows.timestamps;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["origin", "target", "horizon", "station", "forecast", "lower", "upper", "width", "truth"])?;
    for (s, &e) in f.ends.iter().enumerate() {
        let origin = ts[e].format(DATETIME_OUT).to_string();
        for k in 0..q.nrows() {
            let target = ts[e + 1 + k].format(DATETIME_OUT).to_string();
            for (i, id) in ids.iter().enumerate() {
                w.write_record([
                    origin.clone(),
                    target.clone(),
                    (k + 1).to_string(),
                    id.clone(),
                    f.pred[s][[k, i]].to_string(),
                    f.lower[s][[k, i]].to_string(),
                    f.upper[s][[k, i]].to_string(),
                    (2.0 * q[[k, i]]).to_string(),
                    f.truth[s][[k, i]].to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let mut m = Manifest::new("predict", cfg);
    record_inputs(&mut m, &mi.inputs)?;
    m.output(&paths.root, &path)?;
    m.write(&paths.root)?;
    Ok(path)
}

/// Metrics of `f` against the historical average fitted on the training span.
pub fn metric_report(cfg: &RunConfig, flows: &FlowSeries, data: &WindowDataset, f: &TestForecasts) -> Result<MetricReport> {
    let ha = HistoricalAverage::fit(&flows.slice(0, data.splits.train.end))?;
    let h = cfg.model.horizon;
    let ha_pred: Vec<Array2<f64>> = f
        .ends
        .iter()
        .map(|&e| ha.forecast(&(1..=h).map(|k| data.hours[e + k]).collect::<Vec<_>>()))
        .collect();
    let report = MetricReport {
        meta: ReportMeta {
            alpha: cfg.training.options.alpha,
            horizons: h,
            n_eval: f.ends.len(),
            ablation: cfg.model.ablation.name().to_string(),
        },
        accuracy: mae_rmse(&f.pred, &f.truth)?,
        intervals: picp_mpiw(&f.lower, &f.upper, &f.truth)?,
        baseline: mae_rmse(&ha_pred, &f.truth)?,
    };
    report.check()?;
    Ok(report)
}

/// `evaluate`: `report.json` and optional SVG plots of the 1-step forecasts.
pub fn evaluate_stage(cfg: &RunConfig) -> Result<MetricReport> {
    let paths = start(cfg)?;
    let mi = model_inputs(cfg, &paths)?;
    let model = load_trained(cfg, &paths, &mi)?;
    let q = load_radii(cfg, &paths)?;
    let f = test_forecasts(&model, &mi.data, &mi.adjacency, &q, cfg.training.options.batch_size)?;
    let report = metric_report(cfg, &mi.inputs.flows, &mi.data, &f)?;
    let dir = paths.model(cfg.model.ablation);
    let path = dir.join("report.json");
    write_json(&path, &report)?;
    let mut m = Manifest::new("evaluate", cfg);
    record_inputs(&mut m, &mi.inputs)?;
    m.output(&paths.root, &path)?;
    if cfg.output.plot && f.ends.len() >= 2 {
        let plots = dir.join("plots");
        fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;
        for (i, id) in mi.inputs.net.ids().iter().enumerate() {
            let col = |v: &[Array2<f64>]| -> Vec<f64> { v.iter().map(|a| a[[0, i]]).collect() };
            let title = format!("{id} 1-step forecast ({}), {}% interval", cfg.model.ablation, (1.0 - report.meta.alpha) * 100.0);
            let trace = Trace {
                title: &title,
                truth: &col(&f.truth),
                forecast: &col(&f.pred),
                lower: &col(&f.lower),
                upper: &col(&f.upper),
            };
            write_svg(&plots.join(format!("{id}_h1.svg")), &trace)?;
        }
        m.output(&paths.root, &plots)?;
    }
    m.write(&paths.root)?;
    Ok(report)
}

fn hours_of(cfg: &RunConfig) -> Vec<usize> {
    if cfg.output.hours.is_empty() {
        (0..HOURS).collect()
    } else {
        cfg.output.hours.clone()
    }
}

/// Bank read from `graphs/`, with the producing subcommand named when absent.
fn stored_bank(paths: &RunPaths, ids: &[String]) -> Result<TravelTimeBank> {
    let meta = paths.graphs().join("meta.json");
    if !meta.exists() {
        return Err(Error::MissingArtifact {
            path: meta,
            producer: "build-graphs",
        });
    }
    read_bank_dir(&paths.graphs(), ids)
}

/// `delta`: incident minus base adjacency for the requested hours.
pub fn delta_stage(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let paths = start(cfg)?;
    let inputs = load_inputs(cfg)?;
    if inputs.crashes.is_none() {
        return Err(Error::Config("delta compares incident and base graphs and needs crash data".into()));
    }
    let ids = inputs.net.ids();
    let bank = stored_bank(&paths, &ids)?;
    let (_, field) = risk_field(cfg, &inputs)?;
    let params = cfg.graph.adjacency_params();
    let crash = AdjacencyBank::build(&bank, &field, &inputs.net, params)?;
    let base = AdjacencyBank::build_base(&bank, &field, &inputs.net, params)?;
    let dir = paths.delta();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut written = Vec::new();
    for h in hours_of(cfg) {
        let d = adjacency_delta(&crash, &base, h)?;
        let p = dir.join(delta_file(h));
        crate::matrix_io::write_station_matrix(&p, &ids, &d)?;
        written.push(p);
    }
    let mut m = Manifest::new("delta", cfg);
    record_inputs(&mut m, &inputs)?;
    for p in &written {
        m.output(&paths.root, p)?;
    }
    m.write(&paths.root)?;
    Ok(written)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteReport {
    pub route: Vec<String>,
    pub start_hour: usize,
    pub source: RouteSource,
    pub summary: TripSummary,
    pub ks: KsReport,
}

/// `route-mc`: trip-time samples along the configured route and a KS test
/// of their log-normality.
pub fn route_stage(cfg: &RunConfig) -> Result<RouteReport> {
    let paths = start(cfg)?;
    let inputs = load_inputs(cfg)?;
    let ids = inputs.net.ids();
    let bank = stored_bank(&paths, &ids)?;
    let names: Vec<String> = if cfg.route.stations.is_empty() {
        ids.iter().take(2).cloned().collect()
    } else {
        cfg.route.stations.clone()
    };
    let route = names
        .iter()
        .map(|s| {
            inputs
                .net
                .index_of(s)
                .ok_or_else(|| Error::Config(format!("route station `{s}` is not in the station table")))
        })
        .collect::<Result<Vec<_>>>()?;
    let route_seed = seed::derive(cfg.seed, "route");
    let samples = match cfg.route.source {
        RouteSource::Prior => monte_carlo_route(
            EdgeTimes::Prior(&bank.t_mean),
            &bank.profile,
            &route,
            cfg.route.start_hour,
            cfg.route.runs,
            route_seed,
        )?,
        RouteSource::Effective => {
            let (_, field) = risk_field(cfg, &inputs)?;
            let adj = adjacency_for(cfg, &inputs, &bank, &field)?;
            monte_carlo_route(
                EdgeTimes::Hourly(&adj.t_eff),
                &bank.profile,
                &route,
                cfg.route.start_hour,
                cfg.route.runs,
                route_seed,
            )?
        }
    };
    let ks = ks_lognormal(&samples.samples)?;
    let dir = paths.route();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_trip_samples(&dir.join("trip_samples.csv"), &samples.samples)?;
    let report = RouteReport {
        route: names,
        start_hour: cfg.route.start_hour,
        source: cfg.route.source,
        summary: samples.summary,
        ks,
    };
    write_json(&dir.join("ks.json"), &report)?;
    let mut m = Manifest::new("route-mc", cfg);
    record_inputs(&mut m, &inputs)?;
    m.seed("route", route_seed);
    m.output(&paths.root, &dir)?;
    m.write(&paths.root)?;
    Ok(report)
}
