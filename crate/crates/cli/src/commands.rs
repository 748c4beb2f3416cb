use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use hoser::baselines::{dijkstra_generate, markov_fit, markov_generate, markov_star_generate};
use hoser::eval_metrics::evaluate;
use hoser::model::Hoser;
use hoser::roadnet::{default_zone_count, load_network, partition_zones, zone_flow_matrix, FlowMatrix, RoadNetwork, ZonePartition};
use hoser::search::{generate_batch, GenRequest, HoserPolicy};
use hoser::synth::{grid_network, synth_trajectories};
use hoser::trainer::train_with;
use hoser::trajectory::{filter_and_split, read_trajectories, validate, write_trajectories, Trajectory};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{data, write_err, CliError};

fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(path.to_path_buf()))
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| write_err(path, e))
}

fn load_net(path: &Path) -> Result<RoadNetwork, CliError> {
    require(path)?;
    load_network(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_trajs(path: &Path, net: &RoadNetwork) -> Result<Vec<Trajectory>, CliError> {
    require(path)?;
    let trajs = read_trajectories(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    for t in &trajs {
        validate(t, net).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    Ok(trajs)
}

fn save_trajs(path: &Path, trajs: &[Trajectory]) -> Result<(), CliError> {
    write_trajectories(path, trajs).map_err(|e| write_err(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct PartitionFile {
    k: usize,
    eps: f64,
    zone_of: Vec<usize>,
    flow: Vec<Vec<f64>>,
}

fn load_partition(path: &Path, net: &RoadNetwork) -> Result<ZonePartition, CliError> {
    require(path)?;
    let text = fs::read_to_string(path).map_err(data)?;
    let f: PartitionFile = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let shape_ok = f.zone_of.len() == net.num_segments() && f.zone_of.iter().all(|&z| z < f.k) && f.flow.len() == f.k && f.flow.iter().all(|r| r.len() == f.k);
    if !shape_ok {
        return Err(CliError::Data(format!("{}: partition does not match the network", path.display())));
    }
    Ok(ZonePartition::from_assignment(f.k, f.zone_of).with_flow(FlowMatrix::from_rows(&f.flow)))
}

/// Reads `r_org,t_org,r_dest` rows after a header line.
pub fn read_requests(path: &Path, net: &RoadNetwork, budget: Option<usize>) -> Result<Vec<GenRequest>, CliError> {
    require(path)?;
    let text = fs::read_to_string(path).map_err(data)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim().replace(' ', "") == "r_org,t_org,r_dest" => {}
        _ => return Err(CliError::Data(format!("{}: line 1: expected header r_org,t_org,r_dest", path.display()))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| CliError::Data(format!("{}: line {}: {msg}", path.display(), i + 1));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(bad("expected 3 fields"));
        }
        let org: usize = f[0].parse().map_err(|_| bad("bad r_org"))?;
        let t: f64 = f[1].parse().map_err(|_| bad("bad t_org"))?;
        let dest: usize = f[2].parse().map_err(|_| bad("bad r_dest"))?;
        if org >= net.num_segments() || dest >= net.num_segments() {
            return Err(bad("segment not in the network"));
        }
        if !t.is_finite() {
            return Err(bad("bad t_org"));
        }
        out.push(GenRequest { budget, ..GenRequest::new(org, t, dest) });
    }
    Ok(out)
}

pub fn requests_csv(trajs: &[Trajectory]) -> String {
    let mut s = String::from("r_org,t_org,r_dest\n");
    for t in trajs {
        if let (Some(o), Some(d)) = (t.origin(), t.destination()) {
            let _ = writeln!(s, "{},{},{}", o.segment, o.time, d);
        }
    }
    s
}

/// Writes successes and a failure table; fails when too many requests did.
fn finish_generation(cfg: &RunConfig, out_path: &Path, n: usize, trajs: &[Trajectory], failures: &[(usize, GenRequest, String)]) -> Result<String, CliError> {
    save_trajs(out_path, trajs)?;
    let mut s = String::from("index,r_org,t_org,r_dest,error\n");
    for (i, r, e) in failures {
        let _ = writeln!(s, "{i},{},{},{},\"{}\"", r.r_org, r.t_org, r.r_dest, e.replace('"', "'"));
    }
    let fail_path = out_path.with_extension("failures.csv");
    write(&fail_path, &s)?;
    let rate = if n == 0 { 0.0 } else { failures.len() as f64 / n as f64 };
    let summary = format!("{} of {n} requests generated, {} failed -> {}", trajs.len(), failures.len(), out_path.display());
    if rate > cfg.search.max_failure_rate {
        return Err(CliError::Generation(format!("{summary}; failure rate {rate:.3} exceeds {}", cfg.search.max_failure_rate)));
    }
    Ok(summary)
}

pub fn synth(cfg: &RunConfig) -> Result<String, CliError> {
    let net = grid_network(&cfg.synth.grid).map_err(|e| CliError::Config(e.to_string()))?;
    let trajs = synth_trajectories(&net, cfg.synth.count, &cfg.synth.policy).map_err(|e| CliError::Config(e.to_string()))?;
    let (np, tp) = (cfg.network(), cfg.trajectories());
    net.save(&np).map_err(|e| write_err(&np, e))?;
    save_trajs(&tp, &trajs)?;
    Ok(format!("{} segments -> {}, {} trajectories -> {}", net.num_segments(), np.display(), trajs.len(), tp.display()))
}

pub fn split(cfg: &RunConfig) -> Result<String, CliError> {
    let net = load_net(&cfg.network())?;
    let trajs = load_trajs(&cfg.trajectories(), &net)?;
    let s = filter_and_split(trajs, cfg.split.ratios, cfg.seed);
    save_trajs(&cfg.train_set(), &s.train)?;
    save_trajs(&cfg.val_set(), &s.val)?;
    save_trajs(&cfg.test_set(), &s.test)?;
    write(&cfg.requests(), &requests_csv(&s.test))?;
    let report = cfg.output_dir().join("filter_report.json");
    write(&report, &serde_json::to_string_pretty(&s.report).expect("serializable"))?;
    let r = &s.report;
    Ok(format!(
        "kept {} of {} (too short {}, loops {}, long gaps {}); train {}, val {}, test {}",
        r.kept, r.input, r.too_short, r.loops, r.long_gaps, s.train.len(), s.val.len(), s.test.len()
    ))
}

pub fn partition(cfg: &RunConfig) -> Result<String, CliError> {
    let net = load_net(&cfg.network())?;
    let train = load_trajs(&cfg.train_set(), &net)?;
    let k = cfg.partition.k.unwrap_or_else(|| default_zone_count(net.num_segments()));
    let p = partition_zones(&net, k, cfg.partition.eps, cfg.seed).map_err(|e| CliError::Config(e.to_string()))?;
    let flow = zone_flow_matrix(&p, &train);
    let file = PartitionFile { k, eps: cfg.partition.eps, zone_of: p.zone_of.clone(), flow: flow.rows() };
    let path = cfg.partition();
    write(&path, &serde_json::to_string(&file).expect("serializable"))?;
    Ok(format!("{k} zones, sizes {:?} -> {}", p.sizes(), path.display()))
}

pub fn train(cfg: &RunConfig) -> Result<String, CliError> {
    let net = load_net(&cfg.network())?;
    let p = load_partition(&cfg.partition(), &net)?;
    let train_set = load_trajs(&cfg.train_set(), &net)?;
    let val_path = cfg.val_set();
    let val = if val_path.exists() { load_trajs(&val_path, &net)? } else { Vec::new() };
    let (model, report) = train_with(&cfg.train, &net, &p, &train_set, &val, |e| {
        eprintln!("epoch {:>3}  loss {:.4}  nll {:.4}  mae {:.4}  val {:.4}", e.epoch, e.loss, e.nll, e.mae, e.val_loss);
    })
    .map_err(|e| match e {
        hoser::trainer::TrainError::BadConfig(m) => CliError::Config(m),
        other => data(other),
    })?;
    let ck = cfg.checkpoint();
    model.save(&ck, serde_json::json!({ "best_epoch": report.best_epoch })).map_err(|e| write_err(&ck, e))?;
    let log = cfg.output_dir().join("train_log.csv");
    report.write_csv(&log).map_err(|e| write_err(&log, e))?;
    Ok(format!("best epoch {} of {} -> {}", report.best_epoch, report.epochs.len(), ck.display()))
}

pub fn generate(cfg: &RunConfig) -> Result<String, CliError> {
    let net = load_net(&cfg.network())?;
    let p = load_partition(&cfg.partition(), &net)?;
    let ck = cfg.checkpoint();
    require(&ck)?;
    let model = Hoser::load(&ck, &net, &p).map_err(|e| CliError::Data(format!("{}: {e}", ck.display())))?;
    let reqs = read_requests(&cfg.requests(), &net, cfg.search.budget)?;
    let out = generate_batch(&HoserPolicy::new(&model), &net, &reqs);
    let failures: Vec<_> = out.failures.iter().map(|f| (f.index, f.request, f.error.to_string())).collect();
    finish_generation(cfg, &cfg.generated(), reqs.len(), &out.trajectories, &failures)
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<String, CliError> {
    let net = load_net(&cfg.network())?;
    let real = load_trajs(&cfg.test_set(), &net)?;
    let generated = load_trajs(&cfg.generated(), &net)?;
    let report = evaluate(&real, &generated, &net, &cfg.eval).map_err(data)?;
    let dir = cfg.output_dir();
    write(&dir.join("metrics.csv"), &report.to_csv())?;
    write(&dir.join("histograms.csv"), &report.histograms_csv())?;
    write(&dir.join("metrics.json"), &serde_json::to_string_pretty(&report).expect("serializable"))?;
    Ok(report.to_csv())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BaselineKind {
    Markov,
    MarkovStar,
    Dijkstra,
}

pub fn baseline(cfg: &RunConfig, kind: BaselineKind) -> Result<String, CliError> {
    let net = load_net(&cfg.network())?;
    let reqs = read_requests(&cfg.requests(), &net, cfg.search.budget)?;
    let markov = match kind {
        BaselineKind::Dijkstra => None,
        _ => Some(markov_fit(&load_trajs(&cfg.train_set(), &net)?, &net).map_err(data)?),
    };
    let cap = cfg.baseline.markov_step_cap.unwrap_or(net.num_segments());
    let results: Vec<_> = reqs
        .par_iter()
        .map(|r| match (kind, &markov) {
            (BaselineKind::Markov, Some(m)) => markov_generate(m, &net, r, cap),
            (BaselineKind::MarkovStar, Some(m)) => markov_star_generate(m, &net, r),
            _ => dijkstra_generate(&net, r, cfg.baseline.speed_kmh),
        })
        .collect();
    let (mut trajs, mut failures) = (Vec::new(), Vec::new());
    for (i, (res, r)) in results.into_iter().zip(&reqs).enumerate() {
        match res {
            Ok(mut t) => {
                t.id = i as u64;
                trajs.push(t);
            }
            Err(e) => failures.push((i, *r, e.to_string())),
        }
    }
    let name = match kind {
        BaselineKind::Markov => "markov",
        BaselineKind::MarkovStar => "markov_star",
        BaselineKind::Dijkstra => "dijkstra",
    };
    let path = cfg.output_dir().join(format!("baseline_{name}.jsonl"));
    finish_generation(cfg, &path, reqs.len(), &trajs, &failures)
}
