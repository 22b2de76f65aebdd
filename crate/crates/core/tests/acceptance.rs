//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits non-zero if a hard criterion fails. Criterion 10 is soft: a failure
//! is flagged in the report but does not fail the run.
//!
//! Expensive work (collections, offline training cells) is cached under
//! `$CARGO_TARGET_TMPDIR/acceptance`; set `E2O_ACCEPTANCE_FRESH=1` to start
//! from scratch. Cached results are marked in the report, and their runtime
//! is that of the cache lookup, not of the original computation.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use e2o::agents::{collect, task_aware_collect, Agent, AgentConfig, AgentKind, CollectionLog, RewardChannel};
use e2o::crr::{categorical_project, train_offline, CrrConfig};
use e2o::curiosity::CuriosityKind;
use e2o::datastore::{relabel, Dataset};
use e2o::envsuite::{goal_space_coverage, task_by_name, task_table, EnvSpec};
use e2o::evalharness::{
    cached_cell, correlation_report, evaluate_policy, median, multitask_report, run_sweep, size_curve_report,
    write_correlations, write_multitask, write_size_curves, EvalConfig, RunRecord, SweepConfig, SweepGrid,
};
use e2o::funcapprox::{Activation, Mlp, MlpSpec, ParamStore, Tape, Var};
use e2o::planner::{cem_plan, IdentityDynamics, PlannerConfig, Proposal, StepReward};
use e2o::rng::{stream, Rng};
use e2o::{Error, Result};
use ndarray::Array2;
use rand::Rng as _;

const BIG: u64 = 200_000;
const SIZES: [u64; 3] = [2_000, 20_000, 200_000];
const SEEDS: u64 = 3;

/// IMPC planner used by every collection here. Smaller than the library
/// default so that 2e5-step collections fit a single core.
fn planner() -> PlannerConfig {
    PlannerConfig { horizon: 8, samples: 24, iterations: 2, ..PlannerConfig::default() }
}

fn sweep_config() -> SweepConfig {
    SweepConfig {
        grid: SweepGrid {
            agents: vec!["random".into(), "impc-rnd".into()],
            envs: vec!["pointmass".into(), "reacher".into()],
            sizes: SIZES.to_vec(),
            seeds: SEEDS,
            tasks: vec!["training".into()],
            collection_seed: 0,
            collect: true,
        },
        planner: planner(),
        crr: CrrConfig::default(),
        eval: EvalConfig::default(),
    }
}

struct Verdict {
    pass: bool,
    detail: String,
    budget: Option<Duration>,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into(), budget: None }
    }

    fn within(mut self, secs: u64) -> Self {
        self.budget = Some(Duration::from_secs(secs));
        self
    }
}

struct Suite {
    workdir: PathBuf,
    hard_failures: Vec<usize>,
    lines: Vec<String>,
}

impl Suite {
    fn run(&mut self, id: usize, name: &str, soft: bool, f: impl FnOnce(&Path) -> Result<Verdict>) {
        eprintln!("[acceptance] criterion {id}: {name} ...");
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| f(&self.workdir)));
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(Ok(v)) => match v.budget {
                Some(b) if elapsed > b => (false, format!("{}; over the {}s budget", v.detail, b.as_secs())),
                _ => (v.pass, v.detail),
            },
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".to_string()),
        };
        let status = match (pass, soft) {
            (true, _) => "PASS",
            (false, true) => "FLAG",
            (false, false) => "FAIL",
        };
        if !pass && !soft {
            self.hard_failures.push(id);
        }
        let line = format!("criterion {id:>2} {status} {name}: {detail} [{:.1}s]", elapsed.as_secs_f64());
        println!("{line}");
        self.lines.push(line);
    }
}

// ---------------------------------------------------------------- caching

/// Loads a collection stored under `key`, or runs `make` and stores it.
fn cached_collection(
    path: &Path,
    make: impl FnOnce() -> Result<(Dataset, CollectionLog)>,
) -> Result<(Dataset, CollectionLog, bool)> {
    let log_path = path.with_extension("log.json");
    if path.exists() && log_path.exists() {
        let ds = Dataset::load(path)?;
        let log = serde_json::from_slice(&fs::read(&log_path)?)?;
        return Ok((ds, log, true));
    }
    let (ds, log) = make()?;
    fs::create_dir_all(path.parent().expect("parent dir"))?;
    ds.save(path)?;
    fs::write(&log_path, serde_json::to_vec_pretty(&log)?)?;
    Ok((ds, log, false))
}

fn extra_path(workdir: &Path, cfg: &AgentConfig, env: &str, steps: u64, seed: u64) -> Result<PathBuf> {
    let hash = cfg.hash()?;
    Ok(workdir.join("extra").join(format!("{}__{env}__{steps}__{seed}__{}.e2o", cfg.kind, &hash[..12])))
}

/// The IMPC-RND pointmass dataset, stored where the sweep expects it.
fn impc_pointmass(workdir: &Path) -> Result<(Dataset, bool)> {
    let cfg = sweep_config();
    let path = SweepConfig::dataset_path(workdir, "impc-rnd", "pointmass");
    let log_path = SweepConfig::collection_log_path(workdir, "impc-rnd", "pointmass");
    if path.exists() {
        return Ok((Dataset::load(&path)?, true));
    }
    let env = EnvSpec::by_name("pointmass")?;
    let (ds, log) = collect(&cfg.agent_config("impc-rnd")?, &env, BIG, cfg.grid.collection_seed, &RewardChannel::Default)?;
    fs::create_dir_all(path.parent().expect("datasets dir"))?;
    ds.save(&path)?;
    fs::write(&log_path, serde_json::to_vec_pretty(&log)?)?;
    Ok((ds, false))
}

fn task_aware_pointmass(workdir: &Path) -> Result<(Dataset, bool)> {
    let env = EnvSpec::by_name("pointmass")?;
    let task = task_by_name(&env, "training")?;
    let cfg = AgentConfig::new(AgentKind::TaskAware);
    let path = SweepConfig::dataset_path(workdir, "task-aware", "pointmass");
    let (ds, _, cached) = cached_collection(&path, || task_aware_collect(&cfg, &env, &task, BIG, 0))?;
    Ok((ds, cached))
}

/// Median training-task return over the offline seeds of one (dataset, size) cell.
fn cell_median(workdir: &Path, ds: &Dataset, agent: &str, size: u64) -> Result<(f64, Vec<f64>, usize)> {
    let cfg = sweep_config();
    let mut returns = Vec::new();
    let mut trained = 0;
    for seed in 0..SEEDS {
        let (rec, ran) = cached_cell(Some(workdir), &cfg.crr, &cfg.eval, ds, agent, "training", size, seed)?;
        if let Some(e) = rec.error {
            return Err(Error::precondition(format!("{agent} size {size} seed {seed}: {e}")));
        }
        trained += usize::from(ran);
        returns.push(rec.eval_return);
    }
    Ok((median(&returns), returns, trained))
}

fn count_cells(workdir: &Path) -> usize {
    fs::read_dir(workdir.join("cells")).map_or(0, |d| d.count())
}

fn fmt_returns(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.1}")).collect();
    format!("[{}]", parts.join(", "))
}

fn cached_note(cached: bool) -> &'static str {
    if cached {
        " (cached)"
    } else {
        ""
    }
}

// ------------------------------------------------------- 1. gradients

#[derive(Clone, Copy, Debug)]
enum Loss {
    Mse,
    CrossEntropy,
    GaussianNll,
}

/// Plain ndarray value of each loss, used as the finite-difference oracle.
fn loss_value(kind: Loss, out: &Array2<f64>, y: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = out.nrows() as f64;
    match kind {
        Loss::Mse => (out - y).mapv(|d| d * d).mean().unwrap(),
        Loss::CrossEntropy => {
            let mut total = 0.0;
            for (row, &k) in out.rows().into_iter().zip(labels) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                total += lse - row[k];
            }
            total / n
        }
        Loss::GaussianNll => {
            // output columns are [mean | log std]
            let d = y.ncols();
            let mut total = 0.0;
            for (row, target) in out.rows().into_iter().zip(y.rows()) {
                for j in 0..d {
                    let (mu, ls) = (row[j], row[d + j]);
                    total += 0.5 * (target[j] - mu).powi(2) * (-2.0 * ls).exp() + ls;
                }
            }
            total / n
        }
    }
}

fn loss_tape(tape: &mut Tape, kind: Loss, out: Var, y: &Array2<f64>, labels: &[usize]) -> Result<Var> {
    let n = tape.value(out).nrows() as f64;
    match kind {
        Loss::Mse => {
            let yv = tape.constant(y.clone());
            let d = tape.sub(out, yv)?;
            let sq = tape.square(d);
            Ok(tape.mean_all(sq))
        }
        Loss::CrossEntropy => {
            let lsm = tape.log_softmax(out);
            let mut onehot = Array2::zeros(tape.value(out).dim());
            for (i, &k) in labels.iter().enumerate() {
                onehot[[i, k]] = 1.0;
            }
            let oh = tape.constant(onehot);
            let picked = tape.mul(lsm, oh)?;
            let s = tape.sum_all(picked);
            Ok(tape.scale(s, -1.0 / n))
        }
        Loss::GaussianNll => {
            let d = y.ncols();
            let mut pick_mu = Array2::zeros((2 * d, d));
            let mut pick_ls = Array2::zeros((2 * d, d));
            for j in 0..d {
                pick_mu[[j, j]] = 1.0;
                pick_ls[[d + j, j]] = 1.0;
            }
            let pm = tape.constant(pick_mu);
            let pl = tape.constant(pick_ls);
            let mu = tape.matmul(out, pm)?;
            let ls = tape.matmul(out, pl)?;
            let yv = tape.constant(y.clone());
            let diff = tape.sub(yv, mu)?;
            let sq = tape.square(diff);
            let m2 = tape.scale(ls, -2.0);
            let prec = tape.exp(m2);
            let w = tape.mul(sq, prec)?;
            let half = tape.scale(w, 0.5);
            let per = tape.add(half, ls)?;
            let s = tape.sum_all(per);
            Ok(tape.scale(s, 1.0 / n))
        }
    }
}

fn gradient_check(seed: u64) -> Result<(f64, String)> {
    let mut rng = stream(seed, "acceptance-gradcheck", 0);
    let loss = [Loss::Mse, Loss::CrossEntropy, Loss::GaussianNll][seed as usize % 3];
    let activation = if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Relu };
    let input = rng.random_range(1..5);
    let depth = rng.random_range(1..3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..8)).collect();
    let d = rng.random_range(1..4);
    let output = match loss {
        Loss::GaussianNll => 2 * d,
        Loss::CrossEntropy => d + 1,
        Loss::Mse => d,
    };
    let batch = rng.random_range(2..9);
    let mut store = ParamStore::new();
    let spec = MlpSpec::new(input, &hidden, output).with_activation(activation);
    let mlp = Mlp::new(spec, &mut store, "g", &mut rng)?;
    let x = Array2::from_shape_simple_fn((batch, input), || rng.random_range(-1.0..1.0));
    let y = Array2::from_shape_simple_fn((batch, d), || rng.random_range(-1.0..1.0));
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..output)).collect();

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = mlp.forward_tape(&mut tape, &store, xv)?;
    let l = loss_tape(&mut tape, loss, out, &y, &labels)?;
    let grads = tape.backward(l)?.for_store(&store);

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for id in store.ids().collect::<Vec<_>>() {
        let (r, c) = store.value(id).dim();
        for i in 0..r {
            for j in 0..c {
                let orig = store.value(id).clone();
                let mut v = orig.clone();
                v[[i, j]] += h;
                store.set_value(id, v)?;
                let lp = loss_value(loss, &mlp.forward(&store, &x)?, &y, &labels);
                let mut v = orig.clone();
                v[[i, j]] -= h;
                store.set_value(id, v)?;
                let lm = loss_value(loss, &mlp.forward(&store, &x)?, &y, &labels);
                store.set_value(id, orig)?;
                let fd = (lp - lm) / (2.0 * h);
                let an = grads.get(id)[[i, j]];
                // absolute floor keeps round-off on near-zero gradients out of the ratio
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
                worst = worst.max(rel);
            }
        }
    }
    Ok((worst, format!("{loss:?}/{activation:?} {input}->{hidden:?}->{output}")))
}

fn criterion_1(_: &Path) -> Result<Verdict> {
    let mut worst = 0.0_f64;
    let mut worst_cfg = String::new();
    for seed in 0..20 {
        let (err, cfg) = gradient_check(seed)?;
        if err > worst {
            worst = err;
            worst_cfg = cfg;
        }
    }
    Ok(Verdict::new(worst < 1e-4, format!("20 configs, max relative error {worst:.2e} ({worst_cfg})")).within(30))
}

// ------------------------------------------------------- 2. projection

/// Each shifted atom splits its mass between the two grid atoms around it
/// in proportion to proximity (a triangular kernel of width one spacing).
fn brute_projection(atoms: &[f64], r: f64, gamma: f64, probs: &[f64]) -> Vec<f64> {
    let n = atoms.len();
    let (lo, hi) = (atoms[0], atoms[n - 1]);
    let dz = (hi - lo) / (n - 1) as f64;
    let mut out = vec![0.0; n];
    for (zj, pj) in atoms.iter().zip(probs) {
        let tz = (r + gamma * zj).clamp(lo, hi);
        for (i, zi) in atoms.iter().enumerate() {
            out[i] += pj * (1.0 - (tz - zi).abs() / dz).max(0.0);
        }
    }
    out
}

fn criterion_2(_: &Path) -> Result<Verdict> {
    let mut rng = stream(0, "acceptance-projection", 0);
    let (mut worst, mut worst_sum) = (0.0_f64, 0.0_f64);
    for _ in 0..1000 {
        let n = rng.random_range(2..80);
        let v_min = rng.random_range(-50.0..0.0);
        let v_max = v_min + rng.random_range(0.5..100.0);
        let atoms: Vec<f64> = (0..n).map(|i| v_min + (v_max - v_min) * i as f64 / (n - 1) as f64).collect();
        let r = rng.random_range(-1.5 * (v_max - v_min)..1.5 * (v_max - v_min));
        let gamma = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..=1.0) };
        let mut probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0_f64).powi(3)).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        let got = categorical_project(&atoms, r, gamma, &probs);
        let want = brute_projection(&atoms, r, gamma, &probs);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
        worst_sum = worst_sum.max((got.iter().sum::<f64>() - 1.0).abs());
    }
    let pass = worst <= 1e-12 && worst_sum <= 1e-12;
    Ok(Verdict::new(pass, format!("1000 cases, max abs diff {worst:.1e}, max |sum - 1| {worst_sum:.1e}")).within(10))
}

// ------------------------------------------------------- 3. CEM

struct ZeroProposal;

impl Proposal for ZeroProposal {
    fn propose(&self, _s: &[f64], _rng: &mut Rng) -> Result<Vec<f64>> {
        Ok(vec![0.0; 2])
    }
}

struct TargetReward([f64; 2]);

impl StepReward for TargetReward {
    fn score(&self, _s: &Array2<f64>, a: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(a.rows().into_iter().map(|r| -((r[0] - self.0[0]).powi(2) + (r[1] - self.0[1]).powi(2))).collect())
    }
}

fn criterion_3(_: &Path) -> Result<Verdict> {
    let cfg = PlannerConfig { horizon: 1, samples: 500, iterations: 5, sigma_init: 0.5, ..PlannerConfig::default() };
    let mut hits = 0;
    for trial in 0..100 {
        let mut rng = stream(trial, "acceptance-cem", 0);
        let target = [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)];
        let out = cem_plan(&[0.0], &ZeroProposal, &IdentityDynamics, &TargetReward(target), &cfg, trial)?;
        hits += usize::from((out.action[0] - target[0]).hypot(out.action[1] - target[1]) < 0.05);
    }
    Ok(Verdict::new(hits >= 95, format!("{hits}/100 trials within 0.05")).within(60))
}

// ------------------------------------------------------- 4. IMPC compatibility

fn criterion_4(_: &Path) -> Result<Verdict> {
    let env = EnvSpec::by_name("pointmass")?;
    let mut notes = Vec::new();
    let mut pass = true;
    for (kind, ok) in [(CuriosityKind::Nsm, false), (CuriosityKind::Icm, false), (CuriosityKind::Rnd, true), (CuriosityKind::Dd, true)] {
        let got = Agent::new(AgentConfig::new(AgentKind::Impc(kind)).with_planner(planner()), &env, 0);
        pass &= matches!((&got, ok), (Ok(_), true) | (Err(Error::Config(_)), false));
        notes.push(format!("impc-{kind}: {}", if got.is_ok() { "built" } else { "config error" }));
    }
    Ok(Verdict::new(pass, notes.join(", ")))
}

// ------------------------------------------------------- 5. relabel

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

/// Goal reward on the standard pointmass written out independently: 1 inside
/// the goal ball, a small Gaussian bonus outside it.
fn oracle_reward(goal: [f64; 2], next: &[f64]) -> f64 {
    let d = ((next[0] - goal[0]).powi(2) + (next[1] - goal[1]).powi(2)).sqrt();
    if d < 0.05 {
        1.0
    } else {
        0.1 * (-d * d / (2.0 * 0.05 * 0.05)).exp()
    }
}

fn criterion_5(_: &Path) -> Result<Verdict> {
    let env = EnvSpec::by_name("pointmass")?;
    let (ds, _) = collect(&AgentConfig::new(AgentKind::Random), &env, 10_000, 0, &RewardChannel::Default)?;
    let original = sas_bytes(&ds);
    let (mut sas_ok, mut idem_ok, mut worst) = (true, true, 0.0_f64);
    for task in task_table(&env)? {
        let r = relabel(&ds, &task)?;
        sas_ok &= sas_bytes(&r) == original;
        for t in r.transitions.iter() {
            worst = worst.max((t.reward - oracle_reward(task.goal, t.next_state)).abs());
        }
        idem_ok &= relabel(&r, &task)?.to_bytes()? == r.to_bytes()?;
    }
    let pass = sas_ok && idem_ok && worst <= 1e-15;
    Ok(Verdict::new(
        pass,
        format!("10k transitions x 4 tasks: sas identical {sas_ok}, max reward diff {worst:.1e}, idempotent {idem_ok}"),
    )
    .within(10))
}

// ------------------------------------------------------- 6. task-blindness

fn action_bytes(ds: &Dataset) -> Vec<u8> {
    ds.transitions.iter().flat_map(|t| t.action.iter().flat_map(|a| a.to_le_bytes())).collect()
}

fn criterion_6(_: &Path) -> Result<Verdict> {
    let env = EnvSpec::by_name("pointmass")?;
    let kinds = [
        AgentKind::Random,
        AgentKind::Reactive(CuriosityKind::Rnd),
        AgentKind::Reactive(CuriosityKind::Icm),
        AgentKind::Reactive(CuriosityKind::Nsm),
        AgentKind::Reactive(CuriosityKind::Dd),
        AgentKind::Impc(CuriosityKind::Rnd),
        AgentKind::Impc(CuriosityKind::Dd),
    ];
    let mut differing = Vec::new();
    for kind in kinds {
        let cfg = AgentConfig::new(kind).with_planner(planner());
        let (with, _) = collect(&cfg, &env, 5_000, 1, &RewardChannel::Default)?;
        let (without, _) = collect(&cfg, &env, 5_000, 1, &RewardChannel::Zeroed)?;
        if action_bytes(&with) != action_bytes(&without) {
            differing.push(kind.to_string());
        }
    }
    let detail = if differing.is_empty() {
        format!("{} agents x 5000 steps, action logs identical", kinds.len())
    } else {
        format!("action logs differ for {}", differing.join(", "))
    };
    Ok(Verdict::new(differing.is_empty(), detail))
}

// ------------------------------------------------------- 7. explore baseline

fn criterion_7(workdir: &Path) -> Result<Verdict> {
    let env = EnvSpec::by_name("pointmass-explore")?;
    let steps = 50 * env.episode_length as u64;
    let random = AgentConfig::new(AgentKind::Random);
    let (rds, rlog, rc) =
        cached_collection(&extra_path(workdir, &random, &env.name, steps, 0)?, || collect(&random, &env, steps, 0, &RewardChannel::Default))?;
    let impc = AgentConfig::new(AgentKind::Impc(CuriosityKind::Rnd)).with_planner(planner());
    let (ids, _, ic) =
        cached_collection(&extra_path(workdir, &impc, &env.name, 50_000, 0)?, || collect(&impc, &env, 50_000, 0, &RewardChannel::Default))?;
    let med = median(&rlog.episode_returns);
    let cov_random = goal_space_coverage(&env, rds.transitions.iter().map(|t| t.next_state), 0.05);
    let cov_impc = goal_space_coverage(&env, ids.transitions.iter().map(|t| t.next_state), 0.05);
    let pass = rlog.episode_returns.len() == 50 && med == 0.0 && cov_impc >= 3 * cov_random;
    Ok(Verdict::new(
        pass,
        format!(
            "random median return {med} over {} episodes; coverage impc-rnd {cov_impc} vs random {cov_random} cells{}",
            rlog.episode_returns.len(),
            cached_note(rc && ic)
        ),
    )
    .within(600))
}

// ------------------------------------------------------- 8. end to end

fn criterion_8(workdir: &Path) -> Result<Verdict> {
    let (impc, c1) = impc_pointmass(workdir)?;
    let (ta, c2) = task_aware_pointmass(workdir)?;
    let (mi, ri, ti) = cell_median(workdir, &impc, "impc-rnd", BIG)?;
    let (mt, rt, tt) = cell_median(workdir, &ta, "task-aware", BIG)?;
    let pass = mi > 0.0 && mt > 0.0 && mi >= 0.8 * mt;
    let cached = c1 && c2 && ti + tt == 0;
    Ok(Verdict::new(
        pass,
        format!(
            "median return impc-rnd {mi:.1} {} vs task-aware {mt:.1} {}, ratio {:.3} (need >= 0.8){}",
            fmt_returns(&ri),
            fmt_returns(&rt),
            mi / mt,
            cached_note(cached)
        ),
    )
    .within(3600))
}

// ------------------------------------------------------- 9. size curve

fn criterion_9(workdir: &Path) -> Result<Verdict> {
    let (impc, _) = impc_pointmass(workdir)?;
    let mut medians = Vec::new();
    let mut trained = 0;
    for size in SIZES {
        let (m, _, t) = cell_median(workdir, &impc, "impc-rnd", size)?;
        medians.push(m);
        trained += t;
    }
    let top = medians.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tol = 0.1 * top.abs();
    let pass = medians.windows(2).all(|w| w[1] >= w[0] - tol);
    let parts: Vec<String> = SIZES.iter().zip(&medians).map(|(s, m)| format!("{s}: {m:.1}")).collect();
    Ok(Verdict::new(pass, format!("medians {} (tolerance {tol:.1}){}", parts.join(", "), cached_note(trained == 0))))
}

// ------------------------------------------------------- 11. multitask

fn criterion_11(workdir: &Path) -> Result<Verdict> {
    let (impc, c) = impc_pointmass(workdir)?;
    let cfg = sweep_config();
    let before = count_cells(workdir);
    let (rows, _) = multitask_report(Some(workdir), &[("impc-rnd".into(), &impc)], &cfg.crr, &cfg.eval, SEEDS)?;
    write_multitask(&workdir.join("multitask.csv"), &rows)?;
    let solved = rows.iter().filter(|r| r.median_return > 0.0).count();
    let parts: Vec<String> = rows.iter().map(|r| format!("{} {:.1}", r.task, r.median_return)).collect();
    Ok(Verdict::new(
        solved >= 3,
        format!(
            "{solved}/4 tasks with median return > 0 ({}){}",
            parts.join(", "),
            cached_note(c && count_cells(workdir) == before)
        ),
    )
    .within(7200))
}

// ------------------------------------------------------- 10. correlations

fn criterion_10(workdir: &Path) -> Result<Verdict> {
    let cfg = sweep_config();
    let out = run_sweep(&cfg, workdir)?;
    let ok: Vec<RunRecord> = out.records.iter().filter(|r| r.is_ok()).cloned().collect();
    if ok.len() != out.records.len() {
        let failed = out.records.len() - ok.len();
        return Ok(Verdict::new(false, format!("{failed} of {} sweep cells failed", out.records.len())));
    }
    let rows = correlation_report(&ok)?;
    write_correlations(&workdir.join("correlations.csv"), &rows)?;
    write_size_curves(&workdir.join("size_curves.csv"), &size_curve_report(&ok))?;
    let rho = |stat: &str| rows.iter().find(|r| r.scope == "all" && r.statistic == stat).and_then(|r| r.rho);
    let (size, mean) = (rho("size"), rho("mean_reward"));
    let pass = matches!((size, mean), (Some(s), Some(m)) if s >= m);
    Ok(Verdict::new(
        pass,
        format!(
            "{} cells ({} trained now): rho(return, size) {} vs rho(return, mean reward) {}",
            ok.len(),
            out.trained,
            size.map_or("n/a".into(), |v| format!("{v:.3}")),
            mean.map_or("n/a".into(), |v| format!("{v:.3}")),
        ),
    ))
}

// ------------------------------------------------------- 12. determinism

fn criterion_12(workdir: &Path) -> Result<Verdict> {
    let env = EnvSpec::by_name("pointmass")?;
    let task = task_by_name(&env, "medium-transfer")?;
    let cfg = AgentConfig::new(AgentKind::Impc(CuriosityKind::Rnd)).with_planner(planner());
    let crr = CrrConfig { steps: 300, ..CrrConfig::default() };
    let dir = workdir.join("determinism");
    fs::create_dir_all(&dir)?;

    let mut files: Vec<Vec<Vec<u8>>> = Vec::new();
    for run in 0..2 {
        let (ds, log) = collect(&cfg, &env, 3_000, 4, &RewardChannel::Default)?;
        let rl = relabel(&ds, &task)?;
        let trained = train_offline(&rl, &task, &crr, 2)?;
        let eval = evaluate_policy(&trained.policy, &env, &task, 3, 9)?;
        let path = dir.join(format!("run{run}.e2o"));
        rl.save(&path)?;
        files.push(vec![
            ds.to_bytes()?,
            serde_json::to_vec(&log)?,
            fs::read(&path)?,
            trained.policy.to_checkpoint().to_bytes()?,
            trained.critic.to_checkpoint().to_bytes()?,
            serde_json::to_vec(&trained.metrics)?,
            serde_json::to_vec(&eval)?,
        ]);
    }
    let stages = ["collect", "collection log", "relabel", "policy", "critic", "metrics", "eval"];
    let differing: Vec<&str> =
        stages.iter().zip(files[0].iter().zip(&files[1])).filter(|(_, (a, b))| a != b).map(|(s, _)| *s).collect();
    let detail = if differing.is_empty() {
        format!("{} stage outputs bit-identical across two runs", stages.len())
    } else {
        format!("outputs differ: {}", differing.join(", "))
    };
    Ok(Verdict::new(differing.is_empty(), detail))
}

fn main() {
    let workdir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    if std::env::var("E2O_ACCEPTANCE_FRESH").is_ok_and(|v| v == "1") && workdir.exists() {
        fs::remove_dir_all(&workdir).expect("clear acceptance cache");
    }
    fs::create_dir_all(&workdir).expect("acceptance workdir");
    println!("acceptance workdir: {}", workdir.display());
    let mut suite = Suite { workdir: workdir.clone(), hard_failures: Vec::new(), lines: Vec::new() };

    suite.run(1, "gradient check", false, criterion_1);
    suite.run(2, "categorical projection", false, criterion_2);
    suite.run(3, "CEM optimum", false, criterion_3);
    suite.run(4, "IMPC curiosity compatibility", false, criterion_4);
    suite.run(5, "relabel integrity", false, criterion_5);
    suite.run(6, "task-blindness", false, criterion_6);
    suite.run(12, "determinism", false, criterion_12);
    suite.run(7, "explore-variant baseline", false, criterion_7);
    suite.run(8, "end-to-end offline return", false, criterion_8);
    suite.run(9, "size monotonicity", false, criterion_9);
    suite.run(11, "multitask transfer", false, criterion_11);
    suite.run(10, "size vs mean-reward correlation (soft)", true, criterion_10);

    println!();
    println!("summary:");
    let mut lines = suite.lines.clone();
    lines.sort_by_key(|l| l.split_whitespace().nth(1).and_then(|n| n.parse::<usize>().ok()));
    for l in &lines {
        println!("  {l}");
    }
    fs::write(workdir.join("report.txt"), lines.join("\n") + "\n").expect("write report");
    if suite.hard_failures.is_empty() {
        println!("all hard criteria passed");
    } else {
        println!("hard criteria failed: {:?}", suite.hard_failures);
        std::process::exit(1);
    }
}
