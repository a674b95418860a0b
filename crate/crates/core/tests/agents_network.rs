use std::sync::Arc;

use coopkernel::agents::{AgentState, LinUcbState, PolicyKind, Role};
use coopkernel::environment::{argmax, sample_unit_ball};
use coopkernel::graph::{all_pairs_distances, gen_erdos_renyi, Graph};
use coopkernel::harness::{build_setup, make_env, run_policy, ucb_params, ExperimentConfig};
use coopkernel::kernel::{AugmentedContext, ComposedKernel, KernelSpec};
use coopkernel::network::{Message, NetworkSim};
use coopkernel::regression::UcbParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(text: &str) -> ExperimentConfig {
    ExperimentConfig::parse(text).unwrap()
}

#[test]
fn every_copy_is_delivered_exactly_once() {
    let g = gen_erdos_renyi(15, 0.2, 9).unwrap();
    let d = all_pairs_distances(&g);
    let gamma = 2;
    let mut sim = NetworkSim::new(&g, gamma).unwrap();
    let rounds = 30;
    let mut expected = 0u64;
    let mut received = vec![0usize; 15];
    for t in 1..=rounds {
        for v in 0..15 {
            sim.broadcast(Message {
                round: t,
                origin: v,
                payload: AugmentedContext::new(v, Arc::from(vec![1.0]), Arc::from(vec![t as f64])),
                reward: 0.0,
            });
            expected += (0..15).filter(|&w| w != v && d.get(v, w) <= gamma).count() as u64;
        }
        for v in 0..15 {
            for m in sim.deliver(t, v) {
                assert!(t - m.round >= 1 && t - m.round <= gamma);
                assert_eq!(t - m.round, d.get(m.origin, v));
                received[v] += 1;
            }
        }
    }
    for t in rounds + 1..=rounds + gamma {
        for (v, r) in received.iter_mut().enumerate() {
            *r += sim.deliver(t, v).len();
        }
    }
    assert_eq!(sim.sent_count(), expected);
    assert_eq!(sim.delivered_count(), expected);
    assert_eq!(sim.pending_count(), 0);
    assert_eq!(received.iter().sum::<usize>() as u64, expected);
}

#[test]
fn kernel_agent_with_linear_kernels_is_linucb() {
    for lambda in [1.0, 2.0] {
        let eta = 0.7;
        let kernel = ComposedKernel::oracle(KernelSpec::Linear, KernelSpec::Linear);
        let mut agent = AgentState::new(0, Arc::from(vec![1.0]), PolicyKind::Independent, Role::Plain, kernel, lambda).unwrap();
        let mut lin = LinUcbState::new(4, lambda);
        let mut rng = ChaCha8Rng::seed_from_u64(lambda as u64);
        let params = UcbParams::with_eta(eta);
        let g = Graph::new(1, []).unwrap();
        let mut sim = NetworkSim::new(&g, 1).unwrap();
        let cover = coopkernel::graph::greedy_clique_cover(&g);
        for t in 1..=40 {
            let set: Vec<Arc<[f64]>> = (0..6).map(|_| Arc::from(sample_unit_ball(&mut rng, 4))).collect();
            let values: Vec<f64> = set.iter().map(|x| x[0] - 0.5 * x[2]).collect();
            let noise = rng.random::<f64>() * 0.1 - 0.05;
            if t > 1 {
                let ours = agent.scores(&set, &params).unwrap();
                let theirs: Vec<f64> = set.iter().map(|x| lin.score(x, eta)).collect();
                for (a, b) in ours.iter().zip(&theirs) {
                    assert!((a - b).abs() < 1e-9, "lambda {lambda} round {t}: {a} vs {b}");
                }
            }
            let data = coopkernel::RoundData {
                round: t,
                decision_sets: vec![set.clone()],
                values: vec![values],
                noise: vec![noise],
            };
            let out = agent.step(&data, &mut sim, &cover, &params, 4, 0).unwrap();
            lin.update(&set[out.arm], out.reward);
        }
    }
}

#[test]
fn chosen_arm_maximizes_recomputed_scores() {
    let kernel = ComposedKernel::oracle(KernelSpec::rbf(1.0).unwrap(), KernelSpec::matern(0.9, 1.5).unwrap());
    let mut agent = AgentState::new(0, Arc::from(vec![0.3, 0.4]), PolicyKind::Independent, Role::Plain, kernel, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let params = UcbParams::with_eta(1.3);
    let g = Graph::new(1, []).unwrap();
    let mut sim = NetworkSim::new(&g, 1).unwrap();
    let cover = coopkernel::graph::greedy_clique_cover(&g);
    for t in 1..=60 {
        let set: Vec<Arc<[f64]>> = (0..7).map(|_| Arc::from(sample_unit_ball(&mut rng, 3))).collect();
        let values: Vec<f64> = set.iter().map(|x| (x[0] * 3.0).sin()).collect();
        if t > 1 {
            let scores = agent.scores(&set, &params).unwrap();
            let picked = agent.select_action(&set, t, &params, &mut rng.clone()).unwrap();
            assert_eq!(picked, argmax(&scores));
            assert!(scores.iter().all(|&s| s <= scores[picked]));
        }
        let data = coopkernel::RoundData {
            round: t,
            decision_sets: vec![set],
            values: vec![values],
            noise: vec![0.0],
        };
        agent.step(&data, &mut sim, &cover, &params, 1, 0).unwrap();
    }
}

#[test]
fn coop_state_size_on_a_path_with_full_radius() {
    let c = cfg("V = 6\ngraph = path\ngamma = 5\nT = 12\ntrials = 1\npolicies = coop\ncontexts = identical\ndim = 3\narms = 4");
    let setup = build_setup(&c).unwrap();
    assert_eq!(setup.cover.len(), 1);
    let env = make_env(&c, &setup, 0).unwrap();
    let run = run_policy(&c, &setup, &env, PolicyKind::Coop).unwrap();
    let t = c.rounds;
    for v in 0..6 {
        let expected = t + (0..6)
            .filter(|&w| w != v)
            .map(|w| t.saturating_sub(setup.distances.get(v, w)))
            .sum::<usize>();
        assert_eq!(run.state_sizes[v], expected, "agent {v}");
    }
}

#[test]
fn coop_agents_only_learn_from_their_clique() {
    let c = cfg("V = 14\np = 0.2\ngamma = 1\nT = 25\ntrials = 1\npolicies = coop\ndim = 3\narms = 5");
    let setup = build_setup(&c).unwrap();
    assert!(setup.cover.len() > 1);
    let env = make_env(&c, &setup, 0).unwrap();
    let params = ucb_params(&c, setup.agents());
    let mut agents: Vec<AgentState> = (0..setup.agents())
        .map(|v| {
            AgentState::new(
                v,
                Arc::clone(&setup.contexts.z[v]),
                PolicyKind::Coop,
                Role::Plain,
                setup.oracle_kernel.clone(),
                c.lambda,
            )
            .unwrap()
        })
        .collect();
    let mut sim = NetworkSim::from_distances(setup.distances.clone(), setup.gamma).unwrap();
    for t in 1..=c.rounds {
        let data = env.round(t).unwrap();
        for a in agents.iter_mut() {
            a.step(&data, &mut sim, &setup.cover, &params, c.seed, 0).unwrap();
        }
    }
    for a in &agents {
        let reg = a.regression().unwrap();
        for p in reg.points() {
            assert!(setup.cover.same_clique(p.agent, a.id), "agent {} holds data from {}", a.id, p.agent);
        }
        let clique = &setup.cover.cliques()[setup.cover.clique_of(a.id)];
        let others = clique.iter().filter(|&&w| w != a.id).count();
        assert_eq!(reg.len(), c.rounds + others * (c.rounds - 1));
    }
}

#[test]
fn clique_members_stay_in_step() {
    let c = cfg("V = 16\np = 0.15\ngamma = 2\nT = 30\ntrials = 1\npolicies = coop\ndim = 3\narms = 4");
    let setup = build_setup(&c).unwrap();
    let env = make_env(&c, &setup, 0).unwrap();
    let run = run_policy(&c, &setup, &env, PolicyKind::Coop).unwrap();
    for clique in setup.cover.cliques() {
        let sizes: Vec<usize> = clique.iter().map(|&v| run.state_sizes[v]).collect();
        let spread = sizes.iter().max().unwrap() - sizes.iter().min().unwrap();
        assert!(spread <= clique.len() * setup.gamma, "clique {clique:?}: {sizes:?}");
    }
}

#[test]
fn naive_relabels_incoming_contexts() {
    let c = cfg("V = 5\ngraph = star\ngamma = 1\nT = 4\ntrials = 1\npolicies = naive\ndim = 2\narms = 3");
    let setup = build_setup(&c).unwrap();
    let env = make_env(&c, &setup, 0).unwrap();
    let params = ucb_params(&c, 5);
    let mut agents: Vec<AgentState> = (0..5)
        .map(|v| {
            AgentState::new(v, Arc::clone(&setup.contexts.z[v]), PolicyKind::Naive, Role::Plain, setup.oracle_kernel.clone(), 1.0)
                .unwrap()
        })
        .collect();
    let mut sim = NetworkSim::from_distances(setup.distances.clone(), 1).unwrap();
    for t in 1..=c.rounds {
        let data = env.round(t).unwrap();
        for a in agents.iter_mut() {
            a.step(&data, &mut sim, &setup.cover, &params, 0, 0).unwrap();
        }
    }
    for a in &agents {
        assert!(a.regression().unwrap().points().iter().all(|p| p.agent == a.id && p.z[..] == a.z[..]));
    }
    // the hub hears from four leaves each round after the first
    assert_eq!(agents[0].state_len(), 4 + 4 * 3);
}
