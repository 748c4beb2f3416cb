mod common;

use common::{dijkstra_oracle, random_graph, TablePolicy};
use hoser::model::{Hoser, ModelConfig};
use hoser::roadnet::{partition_zones, zone_flow_matrix};
use hoser::search::{generate_batch, search, GenRequest, HoserPolicy, SearchError};
use hoser::synth::{grid_network, synth_trajectories, GridSpec, SynthPolicy};
use hoser::trajectory::validate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn memoryless_search_matches_dijkstra() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (mut found, mut missing) = (0, 0);
    for case in 0..200 {
        let n = rng.random_range(2..=50);
        let net = random_graph(&mut rng, n);
        let policy = TablePolicy::random(&net, &mut rng, case % 2 == 0);
        let org = rng.random_range(0..n);
        let dest = rng.random_range(0..n);
        let expect = dijkstra_oracle(&net, org, dest, |a, b| -policy.prob(&net, a, b).ln());
        let got = search(&policy, &net, &GenRequest::new(org, 0.0, dest), None);
        match (expect, got) {
            (Some(path), Ok(out)) => {
                assert_eq!(out.trajectory.segments().collect::<Vec<_>>(), path, "case {case}");
                found += 1;
            }
            (None, Err(SearchError::Unreachable { .. })) => missing += 1,
            (e, g) => panic!("case {case}: oracle {e:?}, search {g:?}"),
        }
    }
    assert!(found > 100 && missing > 0, "{found} found, {missing} unreachable");
}

#[test]
fn accepted_pop_costs_never_decrease() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let net = random_graph(&mut rng, 40);
        let policy = TablePolicy::random(&net, &mut rng, false);
        let mut log = Vec::new();
        let _ = search(&policy, &net, &GenRequest::new(0, 0.0, 39), Some(&mut log));
        let accepted: Vec<f64> = log.iter().filter(|r| !r.stale).map(|r| r.cost).collect();
        assert!(accepted.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn model_search_returns_valid_trajectories() {
    let net = grid_network(&GridSpec { rows: 4, cols: 4, ..Default::default() }).unwrap();
    let trajs = synth_trajectories(&net, 20, &SynthPolicy::default()).unwrap();
    let p = partition_zones(&net, 4, 0.1, 0).unwrap();
    let p = p.clone().with_flow(zone_flow_matrix(&p, &trajs));
    let model = Hoser::new(ModelConfig { d: 8, heads: 2, ..Default::default() }, &net, &p, 0).unwrap();
    let policy = HoserPolicy::new(&model);
    let reqs: Vec<GenRequest> = trajs.iter().map(|t| GenRequest::new(t.points[0].segment, t.points[0].time, t.destination().unwrap())).collect();
    let out = generate_batch(&policy, &net, &reqs);
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    for (t, r) in out.trajectories.iter().zip(&reqs) {
        validate(t, &net).unwrap();
        assert_eq!((t.points[0].segment, t.points[0].time), (r.r_org, r.t_org));
        assert_eq!(t.destination(), Some(r.r_dest));
        assert!(t.points.windows(2).all(|w| w[1].time > w[0].time));
    }
    let again = generate_batch(&policy, &net, &reqs);
    assert_eq!(out.trajectories, again.trajectories);
}
