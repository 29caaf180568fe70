//! Acceptance suite: one test per criterion, each printing a pass line.
//! Run with `cargo test -p coride-core --test acceptance -- --nocapture`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coride_core::agents::{
    coride_step, intrinsic_reward, AttentionNet, CorideModel, EpisodeContext, ModelConfig,
};
use coride_core::baselines::RulePolicy;
use coride_core::config::{ExperimentConfig, PolicyKind, WorldSource};
use coride_core::experiment::{build_case_study_world, run_experiment};
use coride_core::hexgrid::{build_world, WorldShape};
use coride_core::nn::{Adam, Matrix, ParamStore};
use coride_core::ranking::{score, selected_k};
use coride_core::sim::{
    build_fake_orders, entropy, stream_rng, Order, OrderKind, OrderSource, RateHistory, SimState,
    StreamCtx, SyntheticDemand, WorldStats, OBS_DIM, STREAM_SELECT,
};
use coride_core::training::{
    critic_target, update_actor, update_critic, ActionValue, Critic, Transition,
};
use coride_core::CoreError;

const TOL: f64 = 1e-9;

fn select_rng(seed: u64) -> ChaCha8Rng {
    stream_rng(&StreamCtx { seed, episode: 0 }, STREAM_SELECT, 0, 0)
}

fn real_order(id: u64, origin: usize, dest: usize, price: f64, duration: u32) -> Order {
    Order {
        id,
        origin,
        destination: dest,
        price,
        duration,
        kind: OrderKind::Real,
    }
}

#[test]
fn criterion_1_equation_unit_suite() {
    // Entropy.
    assert!(entropy(10, 10).abs() < TOL);
    assert!((entropy(5, 10) - 0.34657359027997264).abs() < TOL);
    assert!(entropy(0, 7).abs() < TOL);

    // Cosine intrinsic reward.
    let eye = Matrix::from_fn(2, OBS_DIM, |r, c| if r == c { 1.0 } else { 0.0 });
    let pad = |a: f64, b: f64| {
        let mut v = vec![0.0; OBS_DIM];
        v[0] = a;
        v[1] = b;
        v
    };
    let obs = vec![pad(0.0, 0.0), pad(1.0, 0.0), pad(2.0, 0.0)];
    let goals = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
    assert!((intrinsic_reward(&obs, &goals, 2, &eye).unwrap() - 1.0).abs() < TOL);
    let orth = vec![vec![0.0, 1.0], vec![0.0, 1.0]];
    assert!(intrinsic_reward(&obs, &orth, 2, &eye).unwrap().abs() < TOL);
    // Cosines {1, 0} at horizon 2 average to 0.5.
    let obs2 = vec![pad(0.0, 0.0), pad(0.0, 1.0), pad(1.0, 1.0)];
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let goals2 = vec![vec![s, -s], vec![1.0, 0.0]];
    assert!((intrinsic_reward(&obs2, &goals2, 2, &eye).unwrap() - 0.5).abs() < TOL);

    // Linear scoring.
    let items = vec![vec![3.0, 4.0]];
    assert!(score(&[0.0, 0.0], &items).unwrap()[0].abs() < TOL);
    assert!((score(&[0.0, 1.0], &items).unwrap()[0] - 4.0).abs() < TOL);
    assert!((score(&[1.0, 2.0], &items).unwrap()[0] - 11.0).abs() < TOL);

    // Boltzmann Selected-k basics: distinct indices, exact-k, permutation
    // at k = n, and the k = min(vehicles, items) rule through a joint step.
    let mut rng = select_rng(1);
    let picks = selected_k(&[0.4, 0.1, 0.9, 0.2], 4, 1.0, &mut rng).unwrap();
    let mut sorted = picks.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, vec![0, 1, 2, 3]);
    let world = build_world(&WorldShape::Radius(0)).unwrap();
    let model = CorideModel::new(&world, &ModelConfig::default(), 0);
    let stream = StreamCtx {
        seed: 0,
        episode: 0,
    };
    let mut state = SimState::uniform(&world, 3, stream);
    state
        .inject_orders(
            &world,
            (0..5).map(|i| real_order(i, 0, 0, 2.0, 1)).collect(),
        )
        .unwrap();
    let mut ctx = EpisodeContext::new(&world, &model, stream, false);
    let oh = RateHistory::new(1, 1);
    let vh = RateHistory::new(1, 1);
    let stats = WorldStats::compute(
        &world,
        state.idle_counts(),
        &state.pending_counts(),
        &oh,
        &vh,
        0,
    );
    let out = coride_step(&world, &model, &mut state, &mut ctx, &stats).unwrap();
    assert_eq!(out.decisions[0].len(), 3, "k = min(N_v, N_o) = min(3, 5)");

    // Attention normalization.
    let mut store = ParamStore::new();
    let mut arng = ChaCha8Rng::seed_from_u64(5);
    let attn = AttentionNet::new(&mut store, "a", 8, 2, &mut arng);
    let h: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.3).collect();
    let (msgs, alphas, _) = attn
        .exchange(&store, &[h.clone()], &[vec![0]], 1.0)
        .unwrap();
    assert!(alphas.iter().all(|a| (a.weight - 1.0).abs() < TOL));
    assert!(msgs[0].iter().all(|v| v.is_finite()));
    let (_, alphas, _) = attn
        .exchange(
            &store,
            &[h.clone(), h.clone()],
            &[vec![0, 1], vec![0, 1]],
            1.0,
        )
        .unwrap();
    assert!(alphas.iter().all(|a| (a.weight - 0.5).abs() < TOL));
    let inputs: Vec<Vec<f64>> = (0..4)
        .map(|k| (0..8).map(|i| ((i + k) as f64 * 0.31).sin()).collect())
        .collect();
    let hoods: Vec<Vec<usize>> = (0..4).map(|i| vec![i, (i + 1) % 4, (i + 3) % 4]).collect();
    let (_, alphas, _) = attn.exchange(&store, &inputs, &hoods, 1.0).unwrap();
    for i in 0..4 {
        for head in 0..2 {
            let sum: f64 = alphas
                .iter()
                .filter(|a| a.source == i && a.head == head)
                .map(|a| a.weight)
                .sum();
            assert!((sum - 1.0).abs() < TOL);
        }
    }

    // Critic target.
    let world = build_world(&WorldShape::Radius(1)).unwrap();
    let model = CorideModel::new(&world, &ModelConfig::default(), 1);
    let mut cstore = ParamStore::new();
    let critic = Critic::new(
        &mut cstore,
        model.dims.d_h,
        model.dims.obs_manager,
        model.dims.d_g,
        16,
        &mut ChaCha8Rng::seed_from_u64(2),
    );
    let msg = vec![0.2; model.dims.d_h];
    let obs = vec![0.1; model.dims.obs_manager];
    let y = critic_target(
        3.5,
        false,
        &msg,
        &obs,
        &model.manager,
        &model.manager_store,
        &critic,
        &cstore,
        0.0,
    )
    .unwrap();
    assert!((y - 3.5).abs() < TOL);
    let y = critic_target(
        3.5,
        true,
        &msg,
        &obs,
        &model.manager,
        &model.manager_store,
        &critic,
        &cstore,
        0.95,
    )
    .unwrap();
    assert!((y - 3.5).abs() < TOL);
    let mut planted = cstore.clone();
    for name in planted.names().map(String::from).collect::<Vec<_>>() {
        planted.value_mut(&name).fill(0.0);
    }
    planted.value_mut("q.l2.b").data[0] = 2.0;
    let y = critic_target(
        1.0,
        false,
        &msg,
        &obs,
        &model.manager,
        &model.manager_store,
        &critic,
        &planted,
        0.95,
    )
    .unwrap();
    assert!((y - 2.9).abs() < TOL);

    println!("ACCEPTANCE 1 pass: equation unit suite (entropy, intrinsic, scoring, selection, attention, critic target)");
}

// ---------------------------------------------------------------------------
// Criterion 2: finite-difference gradient suite.

struct GradCheck {
    checked: usize,
    worst: f64,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Compares analytic gradients in `store` against central finite
/// differences of `loss` on >= 20 sampled entries per tensor.
fn check_store(
    label: &str,
    store: &mut ParamStore,
    skip: &[&str],
    loss: &mut dyn FnMut(&ParamStore) -> f64,
    fill_grads: &mut dyn FnMut(&mut ParamStore),
) -> GradCheck {
    store.zero_grads();
    fill_grads(store);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(0xfd);
    let mut checked = 0;
    let mut worst = 0.0f64;
    let names: Vec<String> = store.names().map(String::from).collect();
    for name in names {
        if skip.contains(&name.as_str()) {
            continue;
        }
        let len = store.value(&name).data.len();
        let count = len.min(20.max(len / 50));
        let mut indices: Vec<usize> = (0..len).collect();
        for i in 0..count {
            let j = sample_rng.gen_range(i..len);
            indices.swap(i, j);
        }
        for &idx in &indices[..count] {
            let eps = 1e-5;
            let orig = store.value(&name).data[idx];
            store.value_mut(&name).data[idx] = orig + eps;
            let plus = loss(store);
            store.value_mut(&name).data[idx] = orig - eps;
            let minus = loss(store);
            store.value_mut(&name).data[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = store.grad(&name).data[idx];
            let err = rel_err(numeric, analytic);
            assert!(
                err < 1e-3 || (numeric - analytic).abs() < 1e-9,
                "{label} {name}[{idx}]: fd {numeric} vs analytic {analytic} (rel {err})"
            );
            if (numeric - analytic).abs() >= 1e-9 {
                worst = worst.max(err);
            }
            checked += 1;
        }
    }
    GradCheck { checked, worst }
}

#[test]
fn criterion_2_gradient_suite() {
    let world = build_case_study_world(0.2).unwrap().0;
    let model = CorideModel::new(&world, &ModelConfig::default(), 42);
    let dims = model.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut total = 0;
    let mut worst = 0.0f64;

    // Manager actor: MLP encoder + dilated recurrence + goal head.
    {
        let mut store = model.manager_store.clone();
        let msg: Vec<f64> = (0..dims.d_h).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let obs: Vec<f64> = (0..dims.obs_manager)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let probe: Vec<f64> = (0..dims.d_g).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let manager = model.manager.clone();
        let (p1, p2) = (probe.clone(), probe.clone());
        let (m1, m2) = (msg.clone(), msg.clone());
        let (o1, o2) = (obs.clone(), obs.clone());
        let res = check_store(
            "manager_actor",
            &mut store,
            &[],
            &mut |s| {
                let (g, _) = manager.act_train(s, &m1, &o1).unwrap();
                g.iter().zip(&p1).map(|(a, b)| a * b).sum()
            },
            &mut |s| {
                let (_, cache) = manager.act_train(s, &m2, &o2).unwrap();
                manager.backward(s, &cache, &p2);
            },
        );
        total += res.checked;
        worst = worst.max(res.worst);
    }

    // Worker actor: recurrence, action head, and goal projection, through
    // the composed goal-embedding path. The embedding table is exercised by
    // the scoring path below.
    {
        let mut store = model.worker_store.clone();
        let worker = model.worker.clone();
        let obs: Vec<f64> = (0..OBS_DIM).map(|_| rng.gen_range(0.0..2.0)).collect();
        let msg: Vec<f64> = (0..dims.d_h).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let goal: Vec<f64> = {
            let raw: Vec<f64> = (0..dims.d_g).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            raw.into_iter().map(|v| v / n).collect()
        };
        let h0 = vec![0.0; dims.d_h];
        let probe: Vec<f64> = (0..dims.feat_len)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let (p1, p2) = (probe.clone(), probe.clone());
        let (g1, g2) = (goal.clone(), goal.clone());
        let (w1, w2) = (worker.clone(), worker.clone());
        let (obs1, obs2) = (obs.clone(), obs.clone());
        let (msg1, msg2) = (msg.clone(), msg.clone());
        let (h1, h2) = (h0.clone(), h0);
        let res = check_store(
            "worker_actor",
            &mut store,
            &["embed.table"],
            &mut |s| {
                let w = w1.goal_embed(s, &g1);
                let (omega, _, _) = w1.act(s, &obs1, &msg1, &w, &h1).unwrap();
                omega.iter().zip(&p1).map(|(a, b)| a * b).sum()
            },
            &mut |s| {
                let w = w2.goal_embed(s, &g2);
                let (_, _, cache) = w2.act(s, &obs2, &msg2, &w, &h2).unwrap();
                let d_w = w2.backward(s, &cache, &p2);
                w2.goal_proj.backward(s, &g2, &d_w);
            },
        );
        total += res.checked;
        worst = worst.max(res.worst);
    }

    // Grid embeddings through the ranking feature / score path.
    {
        let mut store = model.worker_store.clone();
        let stream = StreamCtx {
            seed: 9,
            episode: 0,
        };
        let state = SimState::uniform(&world, 2, stream);
        let orders: Vec<Order> = (0..4)
            .map(|i| {
                real_order(
                    i,
                    (i as usize) % 21,
                    (i as usize + 5) % 21,
                    3.0 + i as f64,
                    2,
                )
            })
            .collect();
        let weights: Vec<f64> = (0..dims.feat_len)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let probe: Vec<f64> = (0..orders.len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let table = model.worker.embeddings.clone();
        let fc = model.feature_cfg.clone();
        let (os1, os2) = (orders.clone(), orders);
        let (wt1, wt2) = (weights.clone(), weights);
        let (pr1, pr2) = (probe.clone(), probe);
        let (t1, t2) = (table.clone(), table);
        let (fc1, fc2) = (fc.clone(), fc);
        let st1 = state;
        let keep: Vec<String> = store
            .names()
            .filter(|n| *n != "embed.table")
            .map(String::from)
            .collect();
        let skip: Vec<&str> = keep.iter().map(String::as_str).collect();
        let res = check_store(
            "grid_embeddings",
            &mut store,
            &skip,
            &mut |s| {
                os1.iter()
                    .zip(&pr1)
                    .map(|(o, p)| {
                        let e = coride_core::ranking::featurize(o, &st1, &t1, s, &fc1).unwrap();
                        p * score(&wt1, &[e]).unwrap()[0]
                    })
                    .sum()
            },
            &mut |s| {
                for (o, p) in os2.iter().zip(&pr2) {
                    let d: Vec<f64> = wt2.iter().map(|w| w * p).collect();
                    coride_core::ranking::featurize_backward(o, &d, &t2, s, &fc2);
                }
            },
        );
        total += res.checked;
        worst = worst.max(res.worst);
    }

    // Both critics.
    for (label, obs_dim, act_dim, seed) in [
        ("manager_critic", dims.obs_manager, dims.d_g, 1u64),
        ("worker_critic", dims.worker_train_obs, dims.feat_len, 2u64),
    ] {
        let mut store = ParamStore::new();
        let critic = Critic::new(
            &mut store,
            dims.d_h,
            obs_dim,
            act_dim,
            64,
            &mut ChaCha8Rng::seed_from_u64(seed),
        );
        let msg: Vec<f64> = (0..dims.d_h).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let obs: Vec<f64> = (0..obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let act: Vec<f64> = (0..act_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (c1, c2) = (critic.clone(), critic.clone());
        let (m1, m2) = (msg.clone(), msg.clone());
        let (o1, o2) = (obs.clone(), obs.clone());
        let (a1, a2) = (act.clone(), act.clone());
        let res = check_store(
            label,
            &mut store,
            &[],
            &mut |s| c1.q(s, &m1, &o1, &a1).unwrap(),
            &mut |s| {
                let (_, cache) = c2.forward(s, &m2, &o2, &a2).unwrap();
                c2.backward(s, &cache, 1.0);
            },
        );
        total += res.checked;
        worst = worst.max(res.worst);
    }

    // Attention parameters, both levels.
    for (label, mut store, net) in [
        (
            "attn_worker",
            model.attn_worker_store.clone(),
            model.attn_worker.clone(),
        ),
        (
            "attn_manager",
            model.attn_manager_store.clone(),
            model.attn_manager.clone(),
        ),
    ] {
        let inputs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..dims.d_h).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let hoods = vec![vec![0, 1, 2], vec![0, 1], vec![1, 2]];
        let probe: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..dims.d_h).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let (n1, n2) = (net.clone(), net);
        let (i1, i2) = (inputs.clone(), inputs);
        let (h1, h2) = (hoods.clone(), hoods);
        let (p1, p2) = (probe.clone(), probe);
        let res = check_store(
            label,
            &mut store,
            &[],
            &mut |s| {
                let (msgs, _, _) = n1.exchange(s, &i1, &h1, 1.0).unwrap();
                msgs.iter()
                    .zip(&p1)
                    .map(|(m, p)| m.iter().zip(p).map(|(a, b)| a * b).sum::<f64>())
                    .sum()
            },
            &mut |s| {
                let (_, _, cache) = n2.exchange(s, &i2, &h2, 1.0).unwrap();
                n2.backward(s, &cache, &p2);
            },
        );
        total += res.checked;
        worst = worst.max(res.worst);
    }

    println!(
        "ACCEPTANCE 2 pass: gradient suite ({total} entries checked, worst relative error {worst:.2e})"
    );
}

#[test]
fn criterion_3_simulator_properties() {
    let world = build_world(&WorldShape::Radius(2)).unwrap();
    assert_eq!(world.num_cells(), 19);
    let stream = StreamCtx {
        seed: 33,
        episode: 0,
    };
    let mut state = SimState::uniform(&world, 3, stream);
    let source = OrderSource::Synthetic(SyntheticDemand::uniform(world.num_cells(), 0.9, 144));
    let total = state.total_vehicles();
    let mut rng = ChaCha8Rng::seed_from_u64(34);

    let mut fake_adi = 0.0;
    let mut fake_counts = (0u64, 0u64, 0u32);
    for t in 0..1000u64 {
        let orders = source.generate(&world, t, &stream).unwrap();
        state.inject_orders(&world, orders).unwrap();
        let mut decisions = vec![Vec::new(); world.num_cells()];
        for g in world.grid_ids() {
            let mut items = state.pending_orders(g).to_vec();
            items.extend(build_fake_orders(&world, g).unwrap());
            let cap = (state.idle(g) as usize).min(items.len());
            let take = if cap == 0 { 0 } else { rng.gen_range(0..=cap) };
            for _ in 0..take {
                let i = rng.gen_range(0..items.len());
                decisions[g].push(items.swap_remove(i));
            }
        }
        let fakes_only: Vec<Vec<Order>> = decisions
            .iter()
            .map(|d| d.iter().filter(|o| o.is_fake()).cloned().collect())
            .collect();
        // Probe the fake-only outcome on a copy, then run the mixed step.
        let mut probe = state.clone();
        // Give the probe the same pending orders so ORR denominators match.
        let out = probe.step(&world, &fakes_only).unwrap();
        fake_adi += out.adi_delta;
        fake_counts.0 += out.orr_numerator as u64;
        fake_counts.1 += out.ast_delta;
        fake_counts.2 += out.tnf_delta;

        state.step(&world, &decisions).unwrap();
        assert_eq!(state.total_vehicles(), total, "conservation at step {t}");
    }
    assert_eq!(fake_adi, 0.0, "fake orders never touch ADI");
    assert_eq!(
        fake_counts,
        (0, 0, 0),
        "fake orders never touch ORR/AST/TNF"
    );

    // Unserved real orders expire at the end of the step.
    let mut state = SimState::uniform(&world, 1, stream);
    state
        .inject_orders(&world, vec![real_order(1, 0, 1, 5.0, 2)])
        .unwrap();
    let out = state
        .step(&world, &vec![Vec::new(); world.num_cells()])
        .unwrap();
    assert_eq!(out.orr_denominator, 1);
    assert_eq!(out.orr_numerator, 0);
    assert!(world.grid_ids().all(|g| state.pending_orders(g).is_empty()));

    println!("ACCEPTANCE 3 pass: simulator properties (conservation x1000, fake-order neutrality, expiry)");
}

#[test]
fn criterion_4_selection_statistics() {
    // Uniform scores: chi-square over 3 bins, 30_000 seeded draws, must be
    // below the p = 0.01 critical value for 2 degrees of freedom (9.21).
    let mut counts = [0u32; 3];
    for seed in 0..30_000u64 {
        let mut rng = select_rng(seed);
        counts[selected_k(&[1.0, 1.0, 1.0], 1, 1.0, &mut rng).unwrap()[0]] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - 10_000.0).powi(2) / 10_000.0)
        .sum();
    assert!(chi2 < 9.21, "chi-square {chi2} counts {counts:?}");

    // Temperature 0.01 concentrates on the argmax.
    let mut hits = 0u32;
    for seed in 0..30_000u64 {
        let mut rng = select_rng(100_000 + seed);
        if selected_k(&[5.0, 1.0, 1.0], 1, 0.01, &mut rng).unwrap()[0] == 0 {
            hits += 1;
        }
    }
    let freq = hits as f64 / 30_000.0;
    assert!(freq > 0.999, "argmax frequency {freq}");

    println!(
        "ACCEPTANCE 4 pass: selection statistics (chi2 {chi2:.2} < 9.21, argmax frequency {freq:.5})"
    );
}

#[test]
fn criterion_5_ddpg_sanity() {
    // Critic regression on a frozen synthetic batch: smoothed loss decreases.
    let mut store = ParamStore::new();
    let critic = Critic::new(&mut store, 2, 3, 2, 16, &mut ChaCha8Rng::seed_from_u64(50));
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let batch_owned: Vec<Transition> = (0..32)
        .map(|_| Transition {
            msg_prev: (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            obs: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action: (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            reward: 0.0,
            obs_next: vec![0.0; 3],
            msg: vec![0.0; 2],
            done: false,
        })
        .collect();
    let batch: Vec<&Transition> = batch_owned.iter().collect();
    let targets: Vec<f64> = (0..32).map(|i| ((i as f64) * 0.71).sin() * 3.0).collect();
    let mut opt = Adam::new(1e-2);
    let mut losses = Vec::new();
    for _ in 0..200 {
        losses.push(update_critic(&critic, &mut store, &mut opt, &batch, &targets).unwrap());
    }
    let smooth = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let early = smooth(&losses[..20]);
    let late = smooth(&losses[180..]);
    assert!(late < early, "critic loss must decrease: {early} -> {late}");

    // Actor against the analytic critic Q(a) = -||a - a*||^2.
    struct Quad {
        target: Vec<f64>,
    }
    impl ActionValue for Quad {
        fn q_with_action_grad(
            &mut self,
            _m: &[f64],
            _o: &[f64],
            a: &[f64],
        ) -> Result<(f64, Vec<f64>), CoreError> {
            let q = -a
                .iter()
                .zip(&self.target)
                .map(|(x, t)| (x - t) * (x - t))
                .sum::<f64>();
            Ok((
                q,
                a.iter()
                    .zip(&self.target)
                    .map(|(x, t)| -2.0 * (x - t))
                    .collect(),
            ))
        }
    }
    let world = build_world(&WorldShape::Radius(1)).unwrap();
    let model = CorideModel::new(&world, &ModelConfig::default(), 52);
    let mut wstore = model.worker_store.clone();
    let a_star: Vec<f64> = (0..model.dims.feat_len)
        .map(|i| 0.4 * ((i as f64) * 0.9).cos())
        .collect();
    let mut value = Quad {
        target: a_star.clone(),
    };
    let batch_owned: Vec<Transition> = (0..4)
        .map(|i| Transition {
            msg_prev: vec![0.05 * i as f64; model.dims.d_h],
            obs: vec![0.1 * i as f64; model.dims.worker_train_obs],
            action: vec![0.0; model.dims.feat_len],
            reward: 0.0,
            obs_next: vec![0.0; model.dims.worker_train_obs],
            msg: vec![0.0; model.dims.d_h],
            done: false,
        })
        .collect();
    let batch: Vec<&Transition> = batch_owned.iter().collect();
    let dist = |s: &ParamStore| {
        use coride_core::training::PolicyActor as _;
        batch_owned
            .iter()
            .map(|tr| {
                let a = model.worker.act_policy(s, &tr.msg_prev, &tr.obs).unwrap();
                a.iter()
                    .zip(&a_star)
                    .map(|(x, t)| (x - t) * (x - t))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum::<f64>()
            / batch_owned.len() as f64
    };
    let before = dist(&wstore);
    let mut aopt = Adam::new(0.01);
    for _ in 0..500 {
        update_actor(&model.worker, &mut wstore, &mut aopt, &mut value, &batch).unwrap();
    }
    let after = dist(&wstore);
    assert!(
        after <= 0.1 * before,
        "distance to a* must shrink by >= 90%: {before} -> {after}"
    );

    println!(
        "ACCEPTANCE 5 pass: DDPG sanity (critic loss {early:.3} -> {late:.3}, actor distance {before:.3} -> {after:.4})"
    );
}

fn quiet_dir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

#[test]
fn criterion_6_baseline_ordering() {
    let seeds: Vec<u64> = vec![1, 2, 3, 4, 5];
    let run = |policy: RulePolicy, dir: &std::path::Path| {
        let mut cfg = ExperimentConfig::default();
        cfg.world = WorldSource::CaseStudy { discount_rate: 0.2 };
        cfg.policy = PolicyKind::Rule(policy);
        cfg.seeds = seeds.clone();
        cfg.eval_episodes = 3;
        cfg.out_dir = dir.to_path_buf();
        run_experiment(&cfg).unwrap()
    };
    let res_dir = quiet_dir();
    let rev_dir = quiet_dir();
    let res = run(RulePolicy::Res, res_dir.path());
    let rev = run(RulePolicy::Rev, rev_dir.path());

    let mut passes = 0;
    for (a, b) in res.per_seed.iter().zip(&rev.per_seed) {
        assert_eq!(a.seed, b.seed);
        let ok = b.eval.ast >= a.eval.ast && a.eval.tnf >= b.eval.tnf;
        if ok {
            passes += 1;
        }
        println!(
            "  seed {}: REV AST {:.1} vs RES AST {:.1}; RES TNF {:.1} vs REV TNF {:.1} -> {}",
            a.seed,
            b.eval.ast,
            a.eval.ast,
            a.eval.tnf,
            b.eval.tnf,
            if ok { "ok" } else { "violated" }
        );
    }
    assert!(
        passes >= 4,
        "ordering must hold on >= 4 of 5 seeds, got {passes}"
    );
    println!("ACCEPTANCE 6 pass: baseline ordering (REV AST >= RES AST and RES TNF >= REV TNF on {passes}/5 seeds)");
}

#[test]
fn criterion_7_learning_progress() {
    let seeds: Vec<u64> = vec![1, 2, 3, 4, 5];
    let dir = quiet_dir();
    let mut cfg = ExperimentConfig::default();
    cfg.policy = PolicyKind::CoridePlus;
    cfg.seeds = seeds;
    cfg.out_dir = dir.path().to_path_buf();
    let outputs = run_experiment(&cfg).unwrap();

    let mut beats_ran = 0;
    let mut improves = 0;
    for seed_out in &outputs.per_seed {
        let e = &seed_out.eval;
        let beat = e.normalized_adi_pct > 0.0 && e.normalized_orr_pct > 0.0;
        if beat {
            beats_ran += 1;
        }
        let first5: f64 = seed_out.episode_metrics[..5]
            .iter()
            .map(|m| m.adi)
            .sum::<f64>()
            / 5.0;
        let last5: f64 = seed_out.episode_metrics[15..]
            .iter()
            .map(|m| m.adi)
            .sum::<f64>()
            / 5.0;
        if last5 > first5 {
            improves += 1;
        }
        println!(
            "  seed {}: vs RAN ADI {:+.2}% ORR {:+.2}% | train ADI first5 {:.0} last5 {:.0}",
            e.seed, e.normalized_adi_pct, e.normalized_orr_pct, first5, last5
        );
    }
    assert!(
        beats_ran >= 4,
        "trained policy must beat RAN on ADI and ORR for >= 4 of 5 seeds, got {beats_ran}"
    );
    assert!(
        improves >= 3,
        "training ADI must improve (last 5 vs first 5) for >= 3 of 5 seeds, got {improves}"
    );
    println!(
        "ACCEPTANCE 7 pass: learning progress (beats RAN on {beats_ran}/5 seeds, improves on {improves}/5 seeds)"
    );
}

#[test]
fn criterion_8_reproducibility() {
    let make_cfg = |dir: &std::path::Path| {
        let mut cfg = ExperimentConfig::default();
        cfg.policy = PolicyKind::CoridePlus;
        cfg.seeds = vec![11];
        cfg.episodes = 2;
        cfg.steps_per_episode = 30;
        cfg.warmup = 100;
        cfg.eval_episodes = 2;
        cfg.export_attention = true;
        cfg.out_dir = dir.to_path_buf();
        cfg
    };
    let d1 = quiet_dir();
    let d2 = quiet_dir();
    run_experiment(&make_cfg(d1.path())).unwrap();
    run_experiment(&make_cfg(d2.path())).unwrap();

    for file in [
        "metrics_seed11.csv",
        "eval_seed11.csv",
        "attention_seed11.csv",
        "checkpoint_seed11_final.txt",
        "checkpoint_seed11_best.txt",
    ] {
        let a = std::fs::read(d1.path().join(file)).unwrap();
        let b = std::fs::read(d2.path().join(file)).unwrap();
        assert!(a == b, "{file} must be byte-identical across runs");
    }
    println!("ACCEPTANCE 8 pass: reproducibility (metric logs, attention export, checkpoints byte-identical)");
}

#[test]
fn criterion_9_attention_export_normalization() {
    let dir = quiet_dir();
    let mut cfg = ExperimentConfig::default();
    cfg.policy = PolicyKind::CoridePlus;
    cfg.seeds = vec![21];
    cfg.episodes = 0;
    cfg.steps_per_episode = 20;
    cfg.eval_episodes = 1;
    cfg.export_attention = true;
    cfg.out_dir = dir.path().to_path_buf();
    run_experiment(&cfg).unwrap();

    let text = std::fs::read_to_string(dir.path().join("attention_seed21.csv")).unwrap();
    let mut groups: std::collections::BTreeMap<(u64, String, usize, usize), f64> =
        std::collections::BTreeMap::new();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 6, "row {line}");
        let key = (
            fields[0].parse::<u64>().unwrap(),
            fields[1].to_string(),
            fields[2].parse::<usize>().unwrap(),
            fields[3].parse::<usize>().unwrap(),
        );
        *groups.entry(key).or_insert(0.0) += fields[5].parse::<f64>().unwrap();
    }
    assert!(!groups.is_empty(), "export must contain rows");
    for (key, sum) in &groups {
        assert!(
            (sum - 1.0).abs() <= 1e-6,
            "alpha group {key:?} sums to {sum}"
        );
    }
    println!(
        "ACCEPTANCE 9 pass: attention exports ({} (step, level, head, source) groups all sum to 1 +/- 1e-6)",
        groups.len()
    );
}
