use e2o::agents::{collect, AgentConfig, AgentKind, RewardChannel};
use e2o::datastore::{quantile, relabel, write_stats_table, Dataset, DatasetStats, ReplayBuffer, Transition};
use e2o::envsuite::{task_by_name, task_table, EnvSpec};
use e2o::rng::stream;
use e2o::tables::{read_table, schema_path};
use e2o::Error;
use proptest::prelude::*;

fn random_dataset(env: &str, n: u64, seed: u64) -> Dataset {
    let env = EnvSpec::by_name(env).unwrap();
    collect(&AgentConfig::new(AgentKind::Random), &env, n, seed, &RewardChannel::Default).unwrap().0
}

/// Every byte of a transition except its reward.
fn sas_bytes(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    for t in ds.transitions.iter() {
        for x in t.state.iter().chain(t.action).chain(t.next_state) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&[u8::from(t.boundary), u8::from(t.terminal)]);
        out.extend_from_slice(&t.episode.to_le_bytes());
        out.extend_from_slice(&t.step.to_le_bytes());
    }
    out
}

/// Sparse-plus-bonus goal reward written out independently of the library.
fn oracle_reward(goal: [f64; 2], shaped: bool, next: &[f64]) -> f64 {
    let d = ((next[0] - goal[0]).powi(2) + (next[1] - goal[1]).powi(2)).sqrt();
    if d < 0.05 {
        1.0
    } else if shaped {
        0.1 * (-d * d / (2.0 * 0.05 * 0.05)).exp()
    } else {
        0.0
    }
}

#[test]
fn relabel_rewrites_rewards_only() {
    for name in ["pointmass", "pointmass-explore"] {
        let ds = random_dataset(name, 10_000, 1);
        let env = ds.env_spec().unwrap();
        for task in task_table(&env).unwrap() {
            let r = relabel(&ds, &task).unwrap();
            assert_eq!(sas_bytes(&r), sas_bytes(&ds));
            let shaped = name == "pointmass";
            for t in r.transitions.iter() {
                let want = oracle_reward(task.goal, shaped, t.next_state);
                assert!((t.reward - want).abs() <= 1e-15, "{} vs {want}", t.reward);
            }
            let again = relabel(&r, &task).unwrap();
            assert_eq!(again.to_bytes().unwrap(), r.to_bytes().unwrap());
            assert_eq!(r.header.relabel_task.as_ref(), Some(&task));
        }
    }
}

#[test]
fn random_explore_data_is_mostly_reward_free() {
    let ds = random_dataset("pointmass-explore", 20_000, 2);
    let env = ds.env_spec().unwrap();
    for name in ["easy-transfer", "medium-transfer", "hard-transfer"] {
        let r = relabel(&ds, &task_by_name(&env, name).unwrap()).unwrap();
        let s = r.stats();
        assert!(s.mean_reward < 0.1, "{name}: {s:?}");
        assert_eq!(s.q80_reward, 0.0);
    }
}

#[test]
fn relabel_across_environments_is_rejected() {
    let ds = random_dataset("pointmass", 100, 0);
    let reacher = EnvSpec::by_name("reacher").unwrap();
    assert!(matches!(relabel(&ds, &task_by_name(&reacher, "training").unwrap()), Err(Error::Config(_))));
}

#[test]
fn files_round_trip_and_corruption_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = random_dataset("reacher", 1_500, 3);
    let path = dir.path().join("run.e2o");
    ds.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back, ds);

    let bytes = std::fs::read(&path).unwrap();
    assert!(matches!(Dataset::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Integrity { .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Dataset::from_bytes(&bad), Err(Error::Integrity { offset: 0, .. })));
}

#[test]
fn prefix_is_the_head_of_the_run() {
    let ds = random_dataset("pointmass", 2_500, 4);
    let p = ds.prefix(1_200).unwrap();
    assert_eq!(p.len(), 1_200);
    assert_eq!(p.header.size, 1_200);
    for i in 0..1_200 {
        assert_eq!(p.transitions.get(i).to_owned(), ds.transitions.get(i).to_owned());
    }
    assert!(matches!(ds.prefix(2_501), Err(Error::Precondition(_))));
}

#[test]
fn stats_match_direct_computation() {
    let ds = random_dataset("pointmass", 3_000, 5);
    let s = ds.stats();
    let r: Vec<f64> = ds.transitions.iter().map(|t| t.reward).collect();
    let sum: f64 = r.iter().sum();
    assert_eq!(s.size, 3_000);
    assert_eq!(s.cumulative_reward, sum);
    assert_eq!(s.mean_reward, sum / 3_000.0);
    let mut sorted = r.clone();
    sorted.sort_by(f64::total_cmp);
    // type-7 quantile at 0.8 over 3000 values sits at index 2399.2
    let q = sorted[2399] + 0.2 * (sorted[2400] - sorted[2399]);
    assert!((s.q80_reward - q).abs() < 1e-15);
}

#[test]
fn stats_table_has_a_schema_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stats.csv");
    let a = random_dataset("pointmass", 500, 6);
    write_stats_table(&path, &[("a".into(), a.stats()), ("b".into(), DatasetStats::of(&a.prefix(100).unwrap()))])
        .unwrap();
    assert!(schema_path(&path).exists());
    let (schema, rows) = read_table(&path).unwrap();
    assert_eq!(schema.headers(), vec!["dataset", "size", "mean_reward", "cumulative_reward", "q80_reward"]);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][1], "100");
}

#[test]
fn fifo_capacity_keeps_the_newest() {
    let mut b = ReplayBuffer::new(1, 1, 3).unwrap();
    for i in 0..5u32 {
        let x = f64::from(i);
        b.append(&Transition {
            state: vec![x],
            action: vec![0.0],
            reward: x,
            next_state: vec![x + 1.0],
            boundary: false,
            terminal: false,
            episode: 0,
            step: i,
        })
        .unwrap();
    }
    assert_eq!(b.rewards(), &[2.0, 3.0, 4.0]);
    assert_eq!(b.state(0), &[2.0]);
}

proptest! {
    #[test]
    fn sampled_windows_never_cross_episodes(seed in 0u64..500, n_step in 1usize..8) {
        let ds = random_dataset("pointmass", 3_000, 9);
        let mut rng = stream(seed, "prop", 0);
        for w in ds.transitions.sample(32, n_step, &mut rng).unwrap() {
            prop_assert_eq!(w.len, n_step);
            prop_assert_eq!(ds.transitions.episode(w.start), ds.transitions.episode(w.last()));
        }
    }

    #[test]
    fn quantile_is_bracketed(v in proptest::collection::vec(-10.0f64..10.0, 1..50), q in 0.0f64..=1.0) {
        let x = quantile(&v, q);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(x >= lo && x <= hi);
    }
}
