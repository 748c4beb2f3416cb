//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset.

mod common;

use std::collections::HashMap;
use std::panic::{self, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::{dijkstra_oracle, dtw_enumerate, edr_recursive, hausdorff_brute, random_graph, random_points, TablePolicy};
use hoser::baselines::dijkstra_generate;
use hoser::diffcore::gradcheck::check_params;
use hoser::diffcore::{Array, Graph, ParamId, ParamStore};
use hoser::eval_metrics::{dtw_points, edr_points, evaluate, hausdorff_points, jsd_mass, EvalOptions, MetricsReport};
use hoser::model::{Hoser, ModelConfig};
use hoser::net_encoder::{gat_layer, message_features, road_embedding, RoadEncoderParams, RoadFeatures};
use hoser::roadnet::{partition_zones, zone_flow_matrix, Intersection, RoadNetwork, RoadSegment, ZonePartition};
use hoser::search::{generate_batch, search, GenRequest, HoserPolicy, PopRecord, SearchError};
use hoser::synth::{grid_network, synth_trajectories, GridSpec, SynthPolicy};
use hoser::traj_encoder::{encode_trajectory, point_representation, Pairwise, TrajEncoderParams};
use hoser::trainer::{batch_gradients, mean_loss, step_loss_with, train, TrainConfig};
use hoser::trajectory::{filter_and_split, filter_reason, Rejection, TrajPoint, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

// ---------------------------------------------------------------- 1

/// Twelve segments: a 2 x 3 block of two-way streets plus turns.
fn twelve_segments() -> RoadNetwork {
    let segs = (0..12)
        .map(|i| RoadSegment {
            id: i,
            length_m: 150.0 + 40.0 * i as f64,
            road_type: (i % 3) as u32,
            lon: 116.30 + 0.003 * (i % 4) as f64,
            lat: 39.90 + 0.002 * (i / 4) as f64,
            bearing: None,
        })
        .collect();
    let pairs = [
        (0, 1), (1, 2), (2, 3), (3, 7), (7, 11), (11, 10), (10, 9), (9, 8), (8, 4), (4, 0),
        (1, 5), (5, 9), (2, 6), (6, 10), (5, 6), (6, 7), (4, 5), (1, 0), (6, 5), (10, 6),
    ];
    let edges = pairs
        .iter()
        .enumerate()
        .map(|(k, &(from, to))| Intersection { from, to, reachable: k % 7 != 6, angle: 0.3 * (k % 10) as f64 })
        .collect();
    RoadNetwork::new(segs, edges).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let net = twelve_segments();
    let traj = Trajectory::new(0, vec![
        TrajPoint { segment: 1, time: 1_704_096_000.0 },
        TrajPoint { segment: 5, time: 1_704_096_075.0 },
        TrajPoint { segment: 9, time: 1_704_096_190.0 },
    ]);
    let p = partition_zones(&net, 3, 0.1, 0).unwrap();
    let p = p.clone().with_flow(zone_flow_matrix(&p, std::slice::from_ref(&traj)));
    let mut m = Hoser::new(ModelConfig { d: 8, heads: 2, ..Default::default() }, &net, &p, 1).unwrap();
    // move every parameter off its initial value so zero-initialized
    // entries are checked at a generic point
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ids: Vec<ParamId> = m.store.ids().collect();
    for id in ids {
        m.store.get_mut(id).data_mut().iter_mut().for_each(|x| *x += 0.1 * (rng.random::<f64>() - 0.5));
    }
    let bg = batch_gradients(&m, &net, &[&traj]).unwrap();
    let report = check_params(&m.store, &bg.grads, 1e-5, 1, |s| step_loss_with(&m, s, &net, &traj).unwrap());
    let t = start.elapsed();
    ensure(
        report.max_rel_err < 1e-4 && t < Duration::from_secs(30),
        format!("max rel err {:.2e} (< 1e-4) over {} entries, {} (< 30 s)", report.max_rel_err, report.checked, secs(t)),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut same, mut unreachable) = (0, 0);
    let mut mismatch = Vec::new();
    for case in 0..200 {
        let n = rng.random_range(2..=50);
        let net = random_graph(&mut rng, n);
        let policy = TablePolicy::random(&net, &mut rng, case % 2 == 0);
        let (org, dest) = (rng.random_range(0..n), rng.random_range(0..n));
        let expect = dijkstra_oracle(&net, org, dest, |a, b| -policy.prob(&net, a, b).ln());
        let got = search(&policy, &net, &GenRequest::new(org, 0.0, dest), None);
        match (expect, got) {
            (Some(path), Ok(out)) if out.trajectory.segments().eq(path.iter().copied()) => same += 1,
            (None, Err(SearchError::Unreachable { .. })) => {
                same += 1;
                unreachable += 1;
            }
            _ => mismatch.push(case),
        }
    }
    let t = start.elapsed();
    ensure(
        mismatch.is_empty() && t < Duration::from_secs(60),
        format!("{same}/200 identical ({unreachable} unreachable in both), mismatches {mismatch:?}, {} (< 60 s)", secs(t)),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut h_err, mut d_err, mut e_bad) = (0.0f64, 0.0f64, 0);
    for _ in 0..100 {
        let (n, m) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let (a, b) = (random_points(&mut rng, n), random_points(&mut rng, m));
        h_err = h_err.max((hausdorff_points(&a, &b) - hausdorff_brute(&a, &b)).abs());
        d_err = d_err.max((dtw_points(&a, &b) - dtw_enumerate(&a, &b)).abs());
        e_bad += usize::from(edr_points(&a, &b, 0.2) != edr_recursive(&a, &b, 0.2));
    }
    let j = [
        (jsd_mass(&[0.3, 0.7], &[0.3, 0.7]), 0.0),
        (jsd_mass(&[1.0, 0.0], &[0.0, 1.0]), 2f64.ln()),
        (jsd_mass(&[1.0, 0.0], &[0.5, 0.5]), 0.215761),
    ];
    let j_err = j.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(
        h_err <= 1e-9 && d_err <= 1e-9 && e_bad == 0 && j_err <= 1e-6,
        format!("hausdorff err {h_err:.1e}, dtw err {d_err:.1e} (<= 1e-9), edr mismatches {e_bad}, jsd err {j_err:.1e} (<= 1e-6)"),
    )
}

// ---------------------------------------------------------------- 4

fn randomize(store: &mut ParamStore, rng: &mut impl Rng) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        store.get_mut(id).data_mut().iter_mut().for_each(|x| *x = rng.random::<f64>() - 0.5);
    }
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut notes = Vec::new();

    let mut bad_partitions = 0;
    for _ in 0..50 {
        let n = rng.random_range(4..=60);
        let net = random_graph(&mut rng, n);
        let k = rng.random_range(1..=n / 2);
        let p = partition_zones(&net, k, 0.1, rng.random()).unwrap();
        let sizes = p.sizes();
        let cap = ZonePartition::balance_cap(n, k, 0.1);
        let ok = p.zone_of.len() == n && sizes.len() == k && sizes.iter().sum::<usize>() == n && sizes.iter().all(|&s| s >= 1 && s <= cap);
        bad_partitions += usize::from(!ok);
    }
    notes.push(format!("partition failures {bad_partitions}/50"));

    // road attention rows
    let net = grid_network(&GridSpec { rows: 4, cols: 5, ..Default::default() }).unwrap();
    let feats = RoadFeatures::new(&net);
    let mut store = ParamStore::default();
    let rp = RoadEncoderParams::register(&mut store, &feats, 16, 1, &mut rng).unwrap();
    randomize(&mut store, &mut rng);
    let mut g = Graph::new();
    let v = road_embedding(&mut g, &store, &rp, &feats);
    let e = message_features(&mut g, &store, &rp, &feats);
    let (_, alpha) = gat_layer(&mut g, &store, &rp.layers[0], v, &feats.edges, e);
    let mut sums = vec![0.0; net.num_segments()];
    for (i, &d) in feats.edges.dst.iter().enumerate() {
        sums[d] += g.value(alpha).get(i, 0);
    }
    let mut row_err = sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);

    // trajectory attention, temporal norm and causality
    let mut ts = ParamStore::default();
    let tp = TrajEncoderParams::register(&mut ts, 8, 2, 2, &mut rng).unwrap();
    randomize(&mut ts, &mut rng);
    let (mut norm_err, mut causal_bad) = (0.0f64, 0);
    let sample = |rng: &mut ChaCha8Rng, n: usize| -> (Array, Array, Vec<TrajPoint>) {
        let v = Array::from_vec(n, 8, (0..n * 8).map(|_| rng.random::<f64>() - 0.5).collect());
        let z = Array::from_vec(n, 8, (0..n * 8).map(|_| rng.random::<f64>() - 0.5).collect());
        let mut t = 1_704_100_000.0;
        let pts = (0..n)
            .map(|_| {
                t += rng.random_range(10.0..300.0);
                TrajPoint { segment: rng.random_range(0..net.num_segments()), time: t }
            })
            .collect();
        (v, z, pts)
    };
    let run = |v: &Array, z: &Array, pts: &[TrajPoint]| {
        let mut g = Graph::new();
        let (v, z) = (g.constant(v.clone()), g.constant(z.clone()));
        let minutes: Vec<f64> = pts.iter().map(|p| (p.time / 60.0).rem_euclid(1440.0)).collect();
        let pv = point_representation(&mut g, &ts, &tp, v, z, &minutes);
        let enc = encode_trajectory(&mut g, &ts, &tp, pv.x, &Pairwise::from_points(&net, pts));
        (g.value(pv.temporal).clone(), g.value(enc.out).clone(), enc.attention.iter().map(|&a| g.value(a).clone()).collect::<Vec<_>>())
    };
    for _ in 0..50 {
        let (v, z, pts) = sample(&mut rng, 8);
        let (temporal, out, att) = run(&v, &z, &pts);
        for i in 0..8 {
            norm_err = norm_err.max((temporal.row(i).iter().map(|x| x * x).sum::<f64>().sqrt() - 0.5).abs());
            for a in &att {
                row_err = row_err.max((a.row(i).iter().sum::<f64>() - 1.0).abs());
            }
        }
        // rewrite everything after point i
        let i = rng.random_range(0..7);
        let (mut v1, mut z1, mut pts1) = (v.clone(), z.clone(), pts.clone());
        let (v2, z2, pts2) = sample(&mut rng, 8);
        for j in i + 1..8 {
            v1.row_mut(j).copy_from_slice(v2.row(j));
            z1.row_mut(j).copy_from_slice(z2.row(j));
            pts1[j] = TrajPoint { segment: pts2[j].segment, time: pts1[j - 1].time + 1.0 + (pts2[j].time - pts2[j - 1].time) };
        }
        let (_, out1, _) = run(&v1, &z1, &pts1);
        causal_bad += usize::from((0..=i).any(|r| out.row(r) != out1.row(r)));
    }

    // candidate probabilities of the full model
    let trajs = synth_trajectories(&net, 20, &SynthPolicy::default()).unwrap();
    let p = partition_zones(&net, 4, 0.1, 0).unwrap();
    let p = p.clone().with_flow(zone_flow_matrix(&p, &trajs));
    let mut m = Hoser::new(ModelConfig { d: 8, heads: 2, ..Default::default() }, &net, &p, 4).unwrap();
    randomize(&mut m.store, &mut rng);
    let frozen = m.freeze();
    for t in &trajs {
        for i in 0..t.len() - 1 {
            let scores = m.next_scores(&frozen, &net, &t.points[..=i], t.destination().unwrap()).unwrap();
            row_err = row_err.max((scores.iter().map(|s| s.probability).sum::<f64>() - 1.0).abs());
        }
    }
    notes.push(format!("row-sum err {row_err:.1e}, temporal norm err {norm_err:.1e} (< 1e-12), causality violations {causal_bad}/50"));
    ensure(bad_partitions == 0 && row_err < 1e-12 && norm_err < 1e-12 && causal_bad == 0, notes.join(", "))
}

// ---------------------------------------------------------------- 5

fn check_log(log: &[PopRecord]) -> bool {
    let accepted: Vec<f64> = log.iter().filter(|r| !r.stale).map(|r| r.cost).collect();
    accepted.windows(2).all(|w| w[0] <= w[1])
}

fn criterion_5() -> Outcome {
    let net = grid_network(&GridSpec { rows: 4, cols: 4, ..Default::default() }).unwrap();
    let trajs = synth_trajectories(&net, 30, &SynthPolicy::default()).unwrap();
    let p = partition_zones(&net, 4, 0.1, 0).unwrap();
    let p = p.clone().with_flow(zone_flow_matrix(&p, &trajs));
    let m = Hoser::new(ModelConfig { d: 8, heads: 2, ..Default::default() }, &net, &p, 5).unwrap();
    let policy = HoserPolicy::new(&m);

    let single = search(&policy, &net, &GenRequest::new(7, 1_704_100_000.0, 7), None).unwrap();
    let single_ok = single.trajectory.points == vec![TrajPoint { segment: 7, time: 1_704_100_000.0 }] && single.stats.pops == 1;

    let (mut stale, mut monotone, mut skipped) = (0, true, true);
    let mut check = |out: &Result<hoser::search::SearchOutcome, SearchError>, log: &[PopRecord]| {
        monotone &= check_log(log);
        let n_stale = log.iter().filter(|r| r.stale).count();
        stale += n_stale;
        if let Ok(o) = out {
            // every non-stale pop but the final one is expanded; stale ones never are
            skipped &= o.stats.stale == n_stale && o.stats.expansions == log.len() - n_stale - 1;
        }
    };
    for t in &trajs {
        let mut log = Vec::new();
        let out = search(&policy, &net, &GenRequest::new(t.points[0].segment, t.points[0].time, t.destination().unwrap()), Some(&mut log));
        check(&out, &log);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let g = random_graph(&mut rng, 40);
        let tp = TablePolicy::random(&g, &mut rng, false);
        let mut log = Vec::new();
        let out = search(&tp, &g, &GenRequest::new(0, 0.0, 39), Some(&mut log));
        check(&out, &log);
    }
    ensure(
        single_ok && monotone && skipped && stale > 0,
        format!("org=dest single point: {single_ok}, accepted costs non-decreasing: {monotone}, {stale} stale pops all skipped: {skipped}"),
    )
}

// ---------------------------------------------------------------- 6 and 7

struct Experiment {
    net: RoadNetwork,
    real: Vec<Trajectory>,
    hoser_success: f64,
    hoser: MetricsReport,
    walk: MetricsReport,
    dijkstra: MetricsReport,
    elapsed: Duration,
    val_loss: HashMap<&'static str, f64>,
}

fn random_walk(net: &RoadNetwork, req: &GenRequest, rng: &mut impl Rng) -> Trajectory {
    let mut pts = vec![TrajPoint { segment: req.r_org, time: req.t_org }];
    let mut cur = req.r_org;
    while cur != req.r_dest && pts.len() <= net.num_segments() {
        let s = net.successors(cur);
        if s.is_empty() {
            break;
        }
        let t = pts.last().unwrap().time + net.segment(cur).length_m / 1000.0 / 30.0 * 3600.0;
        cur = s[rng.random_range(0..s.len())];
        pts.push(TrajPoint { segment: cur, time: t });
    }
    Trajectory::new(0, pts)
}

fn experiment() -> &'static Experiment {
    static EXP: OnceLock<Experiment> = OnceLock::new();
    EXP.get_or_init(|| {
        let start = Instant::now();
        let net = grid_network(&GridSpec::default()).unwrap();
        let all = synth_trajectories(&net, 5000, &SynthPolicy { beta: 1.0, ..Default::default() }).unwrap();
        let split = filter_and_split(all, [7.0, 1.0, 2.0], 0);
        let p = partition_zones(&net, 8, 0.1, 0).unwrap();
        let p = p.clone().with_flow(zone_flow_matrix(&p, &split.train));
        let base = TrainConfig { epochs: 10, ..Default::default() };

        let mut val_loss = HashMap::new();
        let mut full = None;
        for (name, model) in [
            ("full", ModelConfig::default()),
            ("w/o RNE", ModelConfig { disable_rne: true, ..Default::default() }),
            ("w/o TrajE", ModelConfig { disable_traje: true, ..Default::default() }),
            ("w/o Nav", ModelConfig { disable_nav: true, ..Default::default() }),
        ] {
            let (m, _) = train(&TrainConfig { model, ..base.clone() }, &net, &p, &split.train, &split.val).unwrap();
            val_loss.insert(name, mean_loss(&m, &net, &split.val).unwrap());
            if name == "full" {
                full = Some(m);
            }
        }
        let m = full.unwrap();

        let real: Vec<Trajectory> = split.test.iter().take(200).cloned().collect();
        let reqs: Vec<GenRequest> = real.iter().map(|t| GenRequest::new(t.points[0].segment, t.points[0].time, t.destination().unwrap())).collect();
        let out = generate_batch(&HoserPolicy::new(&m), &net, &reqs);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let walks: Vec<Trajectory> = reqs.iter().map(|r| random_walk(&net, r, &mut rng)).collect();
        let shortest: Vec<Trajectory> = reqs.iter().map(|r| dijkstra_generate(&net, r, 30.0).unwrap()).collect();
        let opts = EvalOptions::default();
        Experiment {
            hoser_success: out.success_rate(),
            hoser: evaluate(&real, &out.trajectories, &net, &opts).unwrap(),
            walk: evaluate(&real, &walks, &net, &opts).unwrap(),
            dijkstra: evaluate(&real, &shortest, &net, &opts).unwrap(),
            elapsed: start.elapsed(),
            net,
            real,
            val_loss,
        }
    })
}

fn criterion_6() -> Outcome {
    let e = experiment();
    let h = &e.hoser;
    let (hh, dh) = (h.local.as_ref().map(|l| l.hausdorff_km), e.dijkstra.local.as_ref().map(|l| l.hausdorff_km));
    let a = e.hoser_success >= 0.95;
    let b = h.distance_jsd < e.walk.distance_jsd && h.radius_jsd < e.walk.radius_jsd;
    let c = h.duration_jsd < 0.1;
    let d = matches!((hh, dh), (Some(x), Some(y)) if x <= y);
    let time_ok = e.elapsed < Duration::from_secs(20 * 60);
    ensure(
        a && b && c && d && time_ok,
        format!(
            "(a) success {:.1}% of {} [{}] (b) distance JSD {:.4} vs walk {:.4}, radius JSD {:.4} vs walk {:.4} [{}] (c) duration JSD {:.4} < 0.1 [{}] (d) Hausdorff {:.4} vs Dijkstra {:.4} km [{}]; 4 trainings + eval {} (< 20 min) on {} segments",
            100.0 * e.hoser_success,
            e.real.len(),
            ok(a),
            h.distance_jsd,
            e.walk.distance_jsd,
            h.radius_jsd,
            e.walk.radius_jsd,
            ok(b),
            h.duration_jsd,
            ok(c),
            hh.unwrap_or(f64::NAN),
            dh.unwrap_or(f64::NAN),
            ok(d),
            secs(e.elapsed),
            e.net.num_segments(),
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "no"
    }
}

fn criterion_7() -> Outcome {
    let e = experiment();
    let full = e.val_loss["full"];
    let names = ["w/o RNE", "w/o TrajE", "w/o Nav"];
    let worse: Vec<String> = names.iter().map(|n| format!("{n} {:.4}", e.val_loss[n])).collect();
    ensure(names.iter().all(|n| full <= e.val_loss[n]), format!("full {full:.4} <= {}", worse.join(", ")))
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let mk = |id: u64, segs: &[usize], times: &[f64]| {
        Trajectory::new(id, segs.iter().zip(times).map(|(&segment, &time)| TrajPoint { segment, time }).collect())
    };
    let m = 60.0;
    let fixture = [
        (mk(0, &[1, 2, 3, 4, 5], &[0., m, 2. * m, 3. * m, 4. * m]), None),
        (mk(1, &[1, 2, 3, 4], &[0., m, 2. * m, 3. * m]), Some(Rejection::TooShort)),
        (mk(2, &[7], &[0.]), Some(Rejection::TooShort)),
        (mk(3, &[1, 2, 3, 1, 5], &[0., m, 2. * m, 3. * m, 4. * m]), Some(Rejection::Loop)),
        (mk(4, &[1, 2, 3, 4, 5, 6, 6], &[0., m, 2. * m, 3. * m, 4. * m, 5. * m, 6. * m]), Some(Rejection::Loop)),
        (mk(5, &[1, 2, 3, 4, 5], &[0., m, 2. * m, 18. * m, 19. * m]), Some(Rejection::LongGap)),
        (mk(6, &[1, 2, 3, 4, 5], &[0., 900.0, 1801.0, 1802.0, 1803.0]), Some(Rejection::LongGap)),
        (mk(7, &[1, 2, 3, 4, 5], &[0., 900.0, 1800.0, 2700.0, 3600.0]), None),
        (mk(8, &[9, 8, 7, 6, 5, 4, 3, 2], &[0., 1., 2., 3., 4., 5., 6., 7.]), None),
        (mk(9, &[1, 2, 3, 4], &[0., 1000., 2000., 3000.]), Some(Rejection::TooShort)),
    ];
    let wrong: Vec<u64> = fixture.iter().filter(|(t, want)| filter_reason(t) != *want).map(|(t, _)| t.id).collect();

    let mut split_bad = Vec::new();
    for n in [10, 11, 37, 99, 100, 1001, 3333] {
        let trajs: Vec<Trajectory> = (0..n).map(|i| mk(i as u64, &[0, 1, 2, 3, 4], &[0., 1., 2., 3., 4.])).collect();
        let s = filter_and_split(trajs, [7.0, 1.0, 2.0], 8);
        let sizes = [s.train.len(), s.val.len(), s.test.len()];
        let target = [0.7, 0.1, 0.2].map(|r| r * n as f64);
        if sizes.iter().zip(target).any(|(&got, want)| (got as f64 - want).abs() > 1.0) || sizes.iter().sum::<usize>() != n {
            split_bad.push((n, sizes));
        }
    }
    ensure(wrong.is_empty() && split_bad.is_empty(), format!("filter mismatches {wrong:?} on 10 fixtures, split violations {split_bad:?}"))
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 8] = [
        (1, "gradient fidelity", criterion_1),
        (2, "search optimality oracle", criterion_2),
        (3, "metric oracles", criterion_3),
        (4, "structural invariants", criterion_4),
        (5, "search algorithm fidelity", criterion_5),
        (6, "end-to-end synthetic experiment", criterion_6),
        (7, "ablation direction", criterion_7),
        (8, "preprocessing conformance", criterion_8),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let res = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match res {
            Ok(detail) => println!("PASS [{n}] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{n}] {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
