use e2o::agents::GaussianPolicy;
use e2o::curiosity::{CuriosityConfig, CuriosityKind, CuriosityModel};
use e2o::envsuite::EnvSpec;
use e2o::planner::{
    cem_plan, evaluate_actions, maybe_plan, CuriosityReward, IdentityDynamics, PlannerConfig, Proposal, StepReward,
};
use e2o::rng::{stream, Rng};
use e2o::worldmodel::{DynamicsConfig, DynamicsModel};
use e2o::{Error, Result};
use ndarray::Array2;
use rand::Rng as _;

struct Zero(usize);

impl Proposal for Zero {
    fn propose(&self, _s: &[f64], _rng: &mut Rng) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.0])
    }
}

fn target_reward(target: [f64; 2]) -> impl StepReward {
    move |_s: &Array2<f64>, a: &Array2<f64>| -> Result<Vec<f64>> {
        Ok(a.rows().into_iter().map(|r| -((r[0] - target[0]).powi(2) + (r[1] - target[1]).powi(2))).collect())
    }
}

#[test]
fn cem_finds_the_analytic_optimum() {
    let cfg = PlannerConfig { horizon: 1, samples: 500, iterations: 5, sigma_init: 0.5, ..PlannerConfig::default() };
    let mut hits = 0;
    for trial in 0..100 {
        let mut rng = stream(trial, "target", 0);
        let target = [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)];
        let out = cem_plan(&[0.0], &Zero(2), &IdentityDynamics, &target_reward(target), &cfg, trial).unwrap();
        let err = (out.action[0] - target[0]).hypot(out.action[1] - target[1]);
        hits += usize::from(err < 0.05);
    }
    assert!(hits >= 95, "{hits}/100 within tolerance");
}

#[test]
fn targets_outside_the_box_clip_to_the_edge() {
    let cfg = PlannerConfig { horizon: 1, samples: 200, iterations: 5, sigma_init: 0.5, ..PlannerConfig::default() };
    let out = cem_plan(&[0.0], &Zero(2), &IdentityDynamics, &target_reward([3.0, -3.0]), &cfg, 1).unwrap();
    assert_eq!(out.action, vec![1.0, -1.0]);
}

#[test]
fn rnd_planning_return_composes_model_and_reward() {
    let env = EnvSpec::by_name("pointmass").unwrap();
    let dyn_cfg = DynamicsConfig { hidden: vec![8], ..DynamicsConfig::default() };
    let model = DynamicsModel::for_env(dyn_cfg, &env, 4).unwrap();
    let rnd = CuriosityModel::for_env(CuriosityConfig::new(CuriosityKind::Rnd), &env, 5).unwrap();
    let reward = CuriosityReward::new(&rnd).unwrap();
    let s0 = [0.1, -0.2, 0.05, 0.0];
    let plan = Array2::from_shape_vec((3, 2), vec![0.5, 0.5, -2.0, 0.3, 0.1, -0.9]).unwrap();

    // by hand: r(s0) + r(m(s0, a0)) + r(m(m(s0, a0), a1)), actions clipped
    let a0 = [0.5, 0.5];
    let a1 = [-1.0, 0.3];
    let s1 = model.predict(&s0, &a0).unwrap();
    let s2 = model.predict(&s1, &a1).unwrap();
    let manual: f64 = [s0.to_vec(), s1, s2].iter().map(|s| rnd.intrinsic_reward(s, None, None).unwrap()).sum();
    let got = evaluate_actions(&s0, &plan, &model, &reward).unwrap();
    assert!((got - manual).abs() < 1e-12, "{got} vs {manual}");
}

#[test]
fn curiosity_needing_the_next_state_cannot_plan() {
    let env = EnvSpec::by_name("pointmass").unwrap();
    for kind in [CuriosityKind::Nsm, CuriosityKind::Icm] {
        let m = CuriosityModel::for_env(CuriosityConfig::new(kind), &env, 0).unwrap();
        assert!(matches!(CuriosityReward::new(&m), Err(Error::Config(_))));
    }
}

#[test]
fn rho_zero_samples_the_proposal() {
    let policy = GaussianPolicy::new(4, 2, vec![0.3, 0.3, 0.5, 0.5], &[16], -0.5, 2).unwrap();
    let cfg = PlannerConfig { rho: 0.0, ..PlannerConfig::default() };
    let s = [0.05, 0.1, 0.0, 0.0];
    for seed in 0..20 {
        let a = maybe_plan(&s, &policy, &IdentityDynamics, &target_reward([1.0, 1.0]), &cfg, seed).unwrap();
        let direct = policy.sample(&s, &mut stream(seed, "proposal-act", 0)).unwrap();
        let clipped: Vec<f64> = direct.iter().map(|x| x.clamp(-1.0, 1.0)).collect();
        assert_eq!(a, clipped);
    }
}

#[test]
fn rho_one_always_plans() {
    let cfg = PlannerConfig { rho: 1.0, horizon: 2, samples: 16, iterations: 2, ..PlannerConfig::default() };
    for seed in 0..10 {
        let r = target_reward([0.4, -0.2]);
        let a = maybe_plan(&[0.0], &Zero(2), &IdentityDynamics, &r, &cfg, seed).unwrap();
        let p = cem_plan(&[0.0], &Zero(2), &IdentityDynamics, &r, &cfg, seed).unwrap();
        assert_eq!(a, p.action);
    }
}
