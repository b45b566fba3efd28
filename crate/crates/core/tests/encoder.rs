//! Encoder contracts: masking, permutation behavior, frame normalization and
//! sensitivity of the fused focal token.

use cdt_core::encoder::Encoder;
use cdt_core::ndiff::{Graph, ParamStore, Tensor};
use cdt_core::scene::{generate_dataset, AgentHistory, DatasetConfig, LanePolyline, Scenario, HISTORY_LEN};
use cdt_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WIDTH: usize = 16;

fn encoder(use_map: bool, seed: u64) -> (ParamStore, Encoder) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let enc = Encoder::new(&mut store, WIDTH, 4, 2, 30.0, use_map, &mut rng).unwrap();
    (store, enc)
}

fn random_history(rng: &mut ChaCha8Rng, id: u32) -> AgentHistory {
    let (mut x, mut y) = (rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0));
    let (vx, vy) = (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
    let positions = (0..HISTORY_LEN)
        .map(|_| {
            x += vx + rng.random_range(-0.1..0.1);
            y += vy + rng.random_range(-0.1..0.1);
            [x, y]
        })
        .collect();
    AgentHistory { id, positions, mask: vec![true; HISTORY_LEN] }
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn identical_histories_give_identical_tokens() {
    let (store, enc) = encoder(false, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_history(&mut rng, 0);
    let b = AgentHistory { id: 1, ..a.clone() };
    let mut g = Graph::inference(&store);
    let t = enc.encode_agents(&mut g, &[&a, &b]).unwrap();
    let v = g.value(t);
    assert_eq!(v.row(0), v.row(1));
}

#[test]
fn masked_steps_do_not_matter() {
    let (store, enc) = encoder(false, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut a = random_history(&mut rng, 0);
    a.mask = (0..HISTORY_LEN).map(|i| i == HISTORY_LEN - 1).collect();
    let mut b = a.clone();
    for p in b.positions.iter_mut().take(HISTORY_LEN - 1) {
        *p = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
    }
    let mut g = Graph::inference(&store);
    let t = enc.encode_agents(&mut g, &[&a, &b]).unwrap();
    assert_eq!(g.value(t).row(0), g.value(t).row(1));
    assert!(matches!(enc.encode_agents(&mut g, &[]), Err(Error::Input(_))));
}

#[test]
fn tokens_are_finite_and_vary_across_histories() {
    let (store, enc) = encoder(false, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let hs: Vec<AgentHistory> = (0..100).map(|i| random_history(&mut rng, i)).collect();
    let refs: Vec<&AgentHistory> = hs.iter().collect();
    let mut g = Graph::inference(&store);
    let t = enc.encode_agents(&mut g, &refs).unwrap();
    let v = g.value(t);
    assert!(v.data().iter().all(|x| x.is_finite()));
    for c in 0..WIDTH {
        let col: Vec<f64> = (0..100).map(|r| v.row(r)[c]).collect();
        let mean = col.iter().sum::<f64>() / 100.0;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 99.0;
        assert!(var > 0.0, "column {c} is constant");
    }
}

fn lane(points: Vec<[f64; 2]>) -> LanePolyline {
    LanePolyline { points, successors: vec![], width: 3.5 }
}

#[test]
fn lanes_are_encoded_independently_and_permute() {
    let (store, enc) = encoder(true, 6);
    let a = lane(vec![[0.0, 0.0], [5.0, 0.0], [10.0, 1.0]]);
    let b = lane(vec![[0.0, 4.0], [-6.0, 8.0]]);
    let c = lane(vec![[20.0, -3.0], [21.0, -9.0], [22.0, -15.0], [23.0, -20.0]]);
    let mut g = Graph::inference(&store);
    let alone = enc.encode_lanes(&mut g, &[&a]).unwrap();
    let abc = enc.encode_lanes(&mut g, &[&a, &b, &c]).unwrap();
    let cab = enc.encode_lanes(&mut g, &[&c, &a, &b]).unwrap();
    let (alone, abc, cab) = (rows(g.value(alone)), rows(g.value(abc)), rows(g.value(cab)));
    assert!(close(&alone[0], &abc[0], 1e-12));
    assert!(close(&abc[0], &cab[1], 1e-12) && close(&abc[1], &cab[2], 1e-12) && close(&abc[2], &cab[0], 1e-12));
    let degenerate = lane(vec![[1.0, 1.0], [1.0, 1.0]]);
    assert!(matches!(enc.encode_lanes(&mut g, &[&degenerate]), Err(Error::Input(_))));
}

fn dataset(n: usize) -> Vec<Scenario> {
    generate_dataset(&DatasetConfig { n_scenarios: n, rng_seed: 21, ..Default::default() }).unwrap()
}

#[test]
fn tokens_survive_a_world_transform_and_renormalization() {
    let (store, enc) = encoder(true, 7);
    let s = &dataset(1)[0];
    let heading = 0.7;
    let moved = s.rigid_transform(heading, [120.0, -45.0]);
    let origin = moved.focal().positions[HISTORY_LEN - 1];
    let back = moved.renormalized(origin, heading);
    let mut g = Graph::inference(&store);
    let a = enc.encode(&mut g, &[s]).unwrap();
    let b = enc.encode(&mut g, &[&back]).unwrap();
    assert!(close(g.value(a.agents).data(), g.value(b.agents).data(), 1e-9));
    assert!(close(g.value(a.lanes.unwrap()).data(), g.value(b.lanes.unwrap()).data(), 1e-9));
}

#[test]
fn non_focal_agents_permute_and_focal_is_unchanged() {
    let (store, enc) = encoder(true, 8);
    let s = dataset(4).into_iter().find(|s| s.agents.len() >= 4).unwrap();
    let mut p = s.clone();
    p.agents[1..].reverse();
    let n = s.agents.len();
    let mut g = Graph::inference(&store);
    let a = enc.encode(&mut g, &[&s]).unwrap().agents;
    let b = enc.encode(&mut g, &[&p]).unwrap().agents;
    let (a, b) = (rows(g.value(a)), rows(g.value(b)));
    assert!(close(&a[0], &b[0], 1e-12));
    for i in 1..n {
        assert!(close(&a[i], &b[n - i], 1e-12), "agent {i}");
    }
}

#[test]
fn no_map_encoder_passes_agent_tokens_through() {
    let (store, enc) = encoder(false, 9);
    let s = &dataset(1)[0];
    let mut g = Graph::inference(&store);
    let e = enc.encode(&mut g, &[s]).unwrap();
    assert!(e.lanes.is_none());
    let agents: Vec<&AgentHistory> = s.agents.iter().collect();
    let raw = enc.encode_agents(&mut g, &agents).unwrap();
    assert_eq!(g.value(e.agents), g.value(raw));
}

#[test]
fn duplicated_lanes_leave_agent_attention_unchanged() {
    let (store, enc) = encoder(true, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let agents = g_tensor(&mut rng, 3);
    let lanes = g_tensor(&mut rng, 2);
    let mut doubled = lanes.data().to_vec();
    doubled.extend_from_slice(lanes.data());
    let doubled = Tensor::from_vec(4, WIDTH, doubled).unwrap();
    let mut g = Graph::inference(&store);
    let (av, lv, dv) = (g.constant(agents), g.constant(lanes), g.constant(doubled));
    // duplicated lanes stay duplicated after L-A, so each A-L pass splits
    // its weight evenly between the copies
    let (a1, _) = enc.fuse(&mut g, av, &[0..3], lv, &[0..2]).unwrap();
    let (a2, _) = enc.fuse(&mut g, av, &[0..3], dv, &[0..4]).unwrap();
    assert!(close(g.value(a1).data(), g.value(a2).data(), 1e-10));
}

fn g_tensor(rng: &mut ChaCha8Rng, rows: usize) -> Tensor {
    Tensor::from_fn(rows, WIDTH, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn focal_token_reacts_to_a_neighbor() {
    let (store, enc) = encoder(true, 12);
    let s = dataset(3).into_iter().find(|s| s.agents.len() >= 2).unwrap();
    let mut p = s.clone();
    for q in p.agents[1].positions.iter_mut() {
        q[0] += 1e-3;
    }
    let mut g = Graph::inference(&store);
    let a = enc.encode(&mut g, &[&s]).unwrap().agents;
    let b = enc.encode(&mut g, &[&p]).unwrap().agents;
    let (a, b) = (g.value(a).row(0).to_vec(), g.value(b).row(0).to_vec());
    let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    assert!(diff > 0.0);
}

#[test]
fn tokens_are_finite_over_a_dataset() {
    let (store, enc) = encoder(true, 13);
    let data = dataset(200);
    let refs: Vec<&Scenario> = data.iter().collect();
    for chunk in refs.chunks(25) {
        let mut g = Graph::inference(&store);
        let e = enc.encode(&mut g, chunk).unwrap();
        assert!(g.value(e.agents).data().iter().all(|x| x.is_finite()));
        assert!(g.value(e.lanes.unwrap()).data().iter().all(|x| x.is_finite()));
    }
}
