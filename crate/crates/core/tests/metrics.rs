mod common;

use common::{dtw_enumerate, edr_recursive, hausdorff_brute, random_points};
use hoser::eval_metrics::{dtw_points, dwell_durations, edr_points, gyration_radius, hausdorff_points, jsd_mass, travel_distance};
use hoser::roadnet::geo::haversine_km;
use hoser::roadnet::LonLat;
use hoser::synth::{grid_network, synth_trajectories, GridSpec, SynthPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn local_metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let (n, m) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let (a, b) = (random_points(&mut rng, n), random_points(&mut rng, m));
        assert!((hausdorff_points(&a, &b) - hausdorff_brute(&a, &b)).abs() <= 1e-9);
        assert!((dtw_points(&a, &b) - dtw_enumerate(&a, &b)).abs() <= 1e-9);
        assert_eq!(edr_points(&a, &b, 0.2), edr_recursive(&a, &b, 0.2));
        assert_eq!(hausdorff_points(&a, &b), hausdorff_points(&b, &a));
        assert!((dtw_points(&a, &b) - dtw_points(&b, &a)).abs() <= 1e-12);
        let e = edr_points(&a, &b, 0.2);
        assert!((0.0..=1.0).contains(&e));
        assert_eq!(edr_points(&a, &a, 0.2), 0.0);
    }
}

#[test]
fn jsd_bounds_and_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let mut p: Vec<f64> = (0..10).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() }).collect();
        let mut q: Vec<f64> = (0..10).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() }).collect();
        p[0] += 1e-3;
        q[9] += 1e-3;
        let (sp, sq) = (p.iter().sum::<f64>(), q.iter().sum::<f64>());
        p.iter_mut().for_each(|x| *x /= sp);
        q.iter_mut().for_each(|x| *x /= sq);
        let j = jsd_mass(&p, &q);
        assert!(j >= 0.0 && j <= 2f64.ln() + 1e-15);
        assert!((j - jsd_mass(&q, &p)).abs() < 1e-15);
        assert!(jsd_mass(&p, &p).abs() < 1e-15);
    }
}

#[test]
fn per_trajectory_metrics_match_definitions() {
    let net = grid_network(&GridSpec { rows: 5, cols: 5, ..Default::default() }).unwrap();
    for t in synth_trajectories(&net, 30, &SynthPolicy::default()).unwrap() {
        let mut dist = 0.0;
        for p in &t.points {
            dist += net.segment(p.segment).length_m;
        }
        assert!((travel_distance(&t, &net) - dist / 1000.0).abs() < 1e-12);

        let pts: Vec<LonLat> = t.points.iter().map(|p| net.segment(p.segment).midpoint()).collect();
        let n = pts.len() as f64;
        let (mut lon, mut lat) = (0.0, 0.0);
        for p in &pts {
            lon += p.lon / n;
            lat += p.lat / n;
        }
        let c = LonLat::new(lon, lat);
        let r = (pts.iter().map(|&p| haversine_km(p, c).powi(2)).sum::<f64>() / n).sqrt();
        assert!((gyration_radius(&t, &net) - r).abs() < 1e-9);

        let d = dwell_durations(&t).unwrap();
        assert_eq!(d.len(), t.len() - 1);
        for (i, x) in d.iter().enumerate() {
            assert_eq!(*x, (t.points[i + 1].time - t.points[i].time) / 60.0);
        }
    }
}
