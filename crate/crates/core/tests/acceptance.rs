//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! The behavioural criteria need fully trained pipelines for five seeds.
//! They are read from `target/acceptance/seed<k>` (override with
//! `GMRL_ACCEPTANCE_DIR`); a stage is reused only when its manifest records
//! the same config hash, seed and options, and is trained otherwise (about
//! ten minutes per seed on one core).

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use gmrl::ad::{Graph, Tensor};
use gmrl::app::{self, Session, PIPELINE};
use gmrl::config::Config;
use gmrl::eval::{
    cross_evaluate, kl_curve, probe_actions, sweep_preference_reward, EgoEntry, Family, FamilyKind,
};
use gmrl::manifest::{RunManifest, MANIFEST_FILE};
use gmrl::nets::PolicyNet;
use gmrl::train::rollout::HeadRule;
use gmrl::train::stages::{AUTOENCODER_FILE, CHECKPOINT_FILE, METRICS_FILE};
use gmrl::train::{
    categorical_kl, load_stage, reg_loss, run_stage, Guidance, PreferenceAnchors, Stage, StageJob, TrainOptions,
};

// ---- pinned tolerances and sizes ----
const GUIDED_SPAWNS: usize = 100_000;
const GUIDED_TARGET: f64 = 0.2;
const GUIDED_TOL: f64 = 0.01;
const GUIDED_SECONDS: f64 = 10.0;
const TRANSITIONS: usize = 10_000;
const POSITION_TOL: f64 = 1e-12;
/// Slack for the speed read back from velocity components (`hypot` of a
/// scaled unit tangent is exact to a few ulps, not bit-exact).
const SPEED_READBACK_TOL: f64 = 1e-12;
const TRANSITION_SECONDS: f64 = 5.0;
const REWARD_STATES: usize = 10_000;
const GRAD_TOL: f64 = 1e-3;
const GRAD_MIN_COORDS: usize = 20;
const IDENTITY_ITERATIONS: usize = 3;
const KL_HAND_TOL: f64 = 1e-6;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const MIN_SEEDS: usize = 4;
const KL_BETAS: [f64; 2] = [-1.0, -0.5];
const SWEEP_STEPS: usize = 100_000;
const SWEEP_SEED: u64 = 0;
const CROSS_EPISODES: usize = 200;
const RATE_SUM_TOL: f64 = 1e-12;
const IDM_EPISODES: u64 = 1_000;

struct Verdict {
    id: u8,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: u8, title: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict { id, title, pass, detail }
}

fn guided_fraction() -> Verdict {
    let t = Instant::now();
    let (fraction, n) = common::guided_fraction(&Config::default(), GUIDED_SPAWNS, 1);
    let secs = t.elapsed().as_secs_f64();
    let pass = (fraction - GUIDED_TARGET).abs() <= GUIDED_TOL && secs < GUIDED_SECONDS;
    verdict(1, "guided-sample fraction", pass, format!("{fraction:.4} over {n} spawned vehicles (target 0.200 ± {GUIDED_TOL}), {secs:.2}s"))
}

fn transition_oracle() -> Verdict {
    let cfg = Config::default().scenario;
    let t = Instant::now();
    // per-agent transitions: 10k joint states give ~70k vehicle transitions
    let a = common::audit_transitions(&cfg, TRANSITIONS, 2);
    let secs = t.elapsed().as_secs_f64();
    let pass = a.max_position_error <= POSITION_TOL
        && a.max_rate_excess <= SPEED_READBACK_TOL
        && a.max_speed_error <= SPEED_READBACK_TOL
        && secs < TRANSITION_SECONDS;
    verdict(
        2,
        "transition oracle",
        pass,
        format!(
            "{} vehicle steps: max |Δp| err {:.1e}, max rate excess {:.1e}, max speed err {:.1e}, {secs:.2}s",
            a.checked, a.max_position_error, a.max_rate_excess, a.max_speed_error
        ),
    )
}

fn reward_oracle() -> Verdict {
    let cfg = Config::default().scenario;
    let (checked, bad) = common::reward_mismatches(&cfg, REWARD_STATES, 3);
    // the preference-zero collapse and the ego/social split, explicitly
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(4);
    let mut s = common::random_reward_state(&cfg, &mut rng);
    for (_, b) in s.social.iter_mut() {
        b.0 = 0.0;
    }
    let collapse = (1..s.n_agents())
        .all(|a| gmrl::sim::final_reward(&cfg, &s, a) == gmrl::sim::base_reward(&cfg, &s, a));
    let ego_split = gmrl::sim::final_reward(&cfg, &s, 0) == gmrl::sim::base_reward(&cfg, &s, 0);
    verdict(
        3,
        "reward oracle",
        bad == 0 && collapse && ego_split,
        format!("{bad} mismatches in {checked} (state, agent) pairs; β=0 collapse {collapse}; ego uses base reward {ego_split}"),
    )
}

fn gradient_suite() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut failing = Vec::new();
    let mut parts = Vec::new();
    for (name, checks) in common::grad_suites::all(8) {
        let w = checks.iter().map(|c| c.relative_error()).fold(0.0, f64::max);
        worst = worst.max(w);
        if checks.len() < GRAD_MIN_COORDS || w >= GRAD_TOL {
            failing.push(name);
        }
        parts.push(format!("{name} {}", checks.len()));
    }
    verdict(
        4,
        "gradient suite",
        failing.is_empty(),
        format!("worst relative error {worst:.1e} (< {GRAD_TOL}); coordinates: {}; failing: {failing:?}", parts.join(", ")),
    )
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn ablation_identity() -> Verdict {
    let dir = tempfile::tempdir().expect("temp dir");
    let cfg = common::tiny_config();
    let quick = TrainOptions { max_iterations: Some(1), ..TrainOptions::default() };
    let run = |job, opts: &TrainOptions| run_stage(&cfg, job, dir.path(), 9, opts).expect("stage trains");
    run(StageJob::new(Stage::EgoInitial), &quick);
    run(StageJob::new(Stage::Guiding), &quick);
    let three = |w| TrainOptions { max_iterations: Some(IDENTITY_ITERATIONS), reg_weight: w, ..TrainOptions::default() };
    run(StageJob::unguided(Stage::Meta), &three(None));
    let wog = dir.path().join("meta-wog");
    let guided = dir.path().join("meta");
    let compare = |w: f64| {
        run(StageJob::new(Stage::Meta), &three(Some(w)));
        let params = read(&guided.join(CHECKPOINT_FILE)) == read(&wog.join(CHECKPOINT_FILE));
        let drop = ["stage", "reg_loss"];
        let a = common::without_columns(&String::from_utf8(read(&guided.join(METRICS_FILE))).unwrap(), &drop);
        let b = common::without_columns(&String::from_utf8(read(&wog.join(METRICS_FILE))).unwrap(), &drop);
        (params, a == b, a.lines().count() - 1)
    };
    let (params, metrics, rows) = compare(0.0);
    // the comparison is not vacuous: a real guide weight changes the result
    let (params_w, _, _) = compare(1.0);
    verdict(
        5,
        "ablation identity at zero guide weight",
        params && metrics && rows == IDENTITY_ITERATIONS && !params_w,
        format!(
            "{rows} iterations: checkpoints identical {params}, metrics identical {metrics} (reg_loss diagnostic excluded); weight 1.0 differs {}",
            !params_w
        ),
    )
}

fn reg_contract() -> Verdict {
    let anchors = PreferenceAnchors::from_config(&Config::default().preferences).unwrap();
    let reg_of = |log_probs: &[f64], guides: &[Option<[f64; 3]>]| {
        let mut g = Graph::<f64>::new();
        let lp = g.constant(Tensor::from_f64(guides.len(), 3, log_probs).unwrap());
        let r = reg_loss(&mut g, lp, guides).unwrap();
        g.value(r).item()
    };
    let q = [0.5f64, 0.25, 0.25];
    let lq: Vec<f64> = q.iter().map(|p| p.ln()).collect();

    // no preference within the guide distance of an anchor: nothing is guided
    let far = [-0.5, 0.5, 0.85, 1.5, 2.2, 2.5];
    let unmatched: Vec<Option<[f64; 3]>> = far.iter().map(|&b| anchors.matched(b).map(|_| [1.0, 0.0, 0.0])).collect();
    let lps: Vec<f64> = far.iter().flat_map(|_| lq.clone()).collect();
    let zero_unmatched = reg_of(&lps, &unmatched);

    // meta equal to the guide on matched records
    let p = [0.2, 0.3, 0.5];
    let lp: Vec<f64> = [p, p].iter().flatten().map(|v: &f64| v.ln()).collect();
    let zero_equal = reg_of(&lp, &[Some(p), Some(p)]);

    let hand = reg_of(&lq, &[Some([1.0, 0.0, 0.0])]);
    let reference = categorical_kl(&[1.0, 0.0, 0.0], &q);
    let ln2 = std::f64::consts::LN_2;
    let pass = zero_unmatched == 0.0
        && zero_equal.abs() < 1e-12
        && (hand - ln2).abs() < KL_HAND_TOL
        && (reference - ln2).abs() < KL_HAND_TOL;
    verdict(
        6,
        "guide loss contract",
        pass,
        format!("unmatched {zero_unmatched:e}; equal {zero_equal:.1e}; hand case {hand:.9} (ln 2 = {ln2:.9})"),
    )
}

/// Trained run of one seed, training any stage not already cached.
fn pipeline(root: &Path, seed: u64) -> PathBuf {
    let out = root.join(format!("seed{seed}"));
    let s = Session { config: Config::default(), seed, out: out.clone(), workers: 1 };
    for job in PIPELINE {
        if !app::is_trained(&s, job, &TrainOptions::default()) {
            eprintln!("training {} for seed {seed} (no matching cached run)", job.dir_name());
        }
        app::train_if_needed(&s, job, &TrainOptions::default()).expect("pipeline stage trains");
    }
    out
}

type TrainedCheck = fn(&Config, &[SeedRun]) -> Verdict;

struct SeedRun {
    seed: u64,
    ego_initial: PolicyNet<f32>,
    ego_final: PolicyNet<f32>,
    guiding: PolicyNet<f32>,
    meta: PolicyNet<f32>,
    meta_wog: PolicyNet<f32>,
}

fn load_run(dir: &Path, seed: u64) -> SeedRun {
    let load = |job| load_stage(dir, job).expect("checkpoint loads");
    SeedRun {
        seed,
        ego_initial: load(StageJob::new(Stage::EgoInitial)),
        ego_final: load(StageJob::new(Stage::EgoFinal)),
        guiding: load(StageJob::new(Stage::Guiding)),
        meta: load(StageJob::new(Stage::Meta)),
        meta_wog: load(StageJob::unguided(Stage::Meta)),
    }
}

fn probe_separation(cfg: &Config, runs: &[SeedRun]) -> Verdict {
    let mut ok = 0;
    let mut parts = Vec::new();
    for r in runs {
        let rep = probe_actions(&cfg.scenario, "guiding", &r.guiding, HeadRule::Anchor, &[-1.0, 3.0]).expect("probe");
        let (lo, hi) = (rep.speed_at(-1.0).unwrap(), rep.speed_at(3.0).unwrap());
        ok += usize::from(lo >= hi);
        parts.push(format!("s{}: {lo}≥{hi}", r.seed));
    }
    verdict(7, "probe: β=−1 guide at least as fast as β=+3", ok >= MIN_SEEDS, format!("{ok}/{} seeds [{}]", runs.len(), parts.join(", ")))
}

fn kl_ordering(cfg: &Config, runs: &[SeedRun]) -> Verdict {
    let mut ok = 0;
    let mut parts = Vec::new();
    for r in runs {
        let mean = |net| {
            let rep = kl_curve(cfg, "m", net, &r.guiding, &r.ego_initial, &KL_BETAS, r.seed).expect("kl");
            rep.points.iter().map(|p| p.kl).sum::<f64>() / rep.points.len() as f64
        };
        let (g, u) = (mean(&r.meta), mean(&r.meta_wog));
        ok += usize::from(g < u);
        parts.push(format!("s{}: {g:.4}<{u:.4}", r.seed));
    }
    verdict(8, "KL to guides lower with guidance", ok >= MIN_SEEDS, format!("{ok}/{} seeds [{}]", runs.len(), parts.join(", ")))
}

fn reward_ordering(cfg: &Config, runs: &[SeedRun]) -> Verdict {
    let r = runs.iter().find(|r| r.seed == SWEEP_SEED).expect("sweep seed trained");
    let at = |net| {
        let rep = sweep_preference_reward(cfg, "m", net, &r.ego_initial, &[-1.0], SWEEP_STEPS, r.seed).expect("sweep");
        rep.points[0].clone()
    };
    let (g, u) = (at(&r.meta), at(&r.meta_wog));
    let pass = g.mean_reward - g.stderr > u.mean_reward + u.stderr;
    verdict(
        9,
        "β=−1 reward higher with guidance",
        pass,
        format!(
            "seed {}: guided {:.5}±{:.5} vs ablation {:.5}±{:.5} over {} steps each",
            r.seed, g.mean_reward, g.stderr, u.mean_reward, u.stderr, g.samples
        ),
    )
}

fn cross_ordering(cfg: &Config, runs: &[SeedRun]) -> Verdict {
    let mut ok = 0;
    let mut partition = true;
    let mut parts = Vec::new();
    for r in runs {
        let egos = [
            EgoEntry { name: "idm-only".into(), net: &r.ego_initial, trained_on: vec![FamilyKind::Idm] },
            EgoEntry { name: "ours".into(), net: &r.ego_final, trained_on: vec![FamilyKind::Idm, FamilyKind::MetaRl] },
        ];
        let families = Family::standard(cfg, &r.meta, &r.meta_wog);
        let rep = cross_evaluate(cfg, &egos, &families, CROSS_EPISODES, &[r.seed], 1, None).expect("cross");
        for c in &rep.cells {
            let sum = c.success_rate + c.collision_rate + c.timeout_rate;
            partition &= c.is_partition() && (sum - 1.0).abs() <= RATE_SUM_TOL && c.episodes == CROSS_EPISODES;
        }
        let ours = rep.cell("ours", FamilyKind::MetaRlOod).unwrap().success_rate;
        let base = rep.cell("idm-only", FamilyKind::MetaRlOod).unwrap().success_rate;
        ok += usize::from(ours > base);
        parts.push(format!("s{}: {ours:.3}>{base:.3}", r.seed));
    }
    verdict(
        10,
        "OOD success higher for mixed-trained ego",
        ok >= MIN_SEEDS && partition,
        format!("{ok}/{} seeds [{}]; all cells partition {partition}", runs.len(), parts.join(", ")),
    )
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn rerun_determinism() -> Verdict {
    let a = tempfile::tempdir().expect("temp dir");
    let b = tempfile::tempdir().expect("temp dir");
    let s = Session { config: common::tiny_config(), seed: 5, out: a.path().to_path_buf(), workers: 2 };
    let opts = TrainOptions::default();
    for job in PIPELINE {
        app::train(&s, job, &opts).expect("stage trains");
    }
    app::eval_kl(&s, a.path(), Guidance::Guided, 200).expect("kl");
    app::eval_cross(&s, a.path(), 3, &[0, 1], true).expect("cross");

    let mut dirs: Vec<String> = PIPELINE.iter().map(|j| j.dir_name().to_string()).collect();
    dirs.extend(["eval-kl-meta".to_string(), "eval-cross".to_string()]);
    for d in &dirs {
        let m = RunManifest::load(&a.path().join(d).join(MANIFEST_FILE)).expect("manifest");
        app::rerun(&m, b.path(), 1).expect("rerun");
    }
    let mut compared = 0;
    let mut differing = Vec::new();
    for d in &dirs {
        for f in files_under(&a.path().join(d)) {
            let name = f.file_name().unwrap().to_string_lossy().to_string();
            if name == MANIFEST_FILE {
                continue; // records wall-clock time
            }
            let rel = f.strip_prefix(a.path()).unwrap();
            compared += 1;
            if read(&f) != read(&b.path().join(rel)) {
                differing.push(rel.display().to_string());
            }
        }
    }
    let traces = files_under(&a.path().join("eval-cross/traces")).len();
    let kinds = [CHECKPOINT_FILE, METRICS_FILE, AUTOENCODER_FILE];
    let has_kinds = kinds.iter().all(|k| files_under(a.path()).iter().any(|f| f.ends_with(k)));
    verdict(
        11,
        "reruns from manifests are byte-identical",
        differing.is_empty() && traces > 0 && has_kinds,
        format!("{compared} artifacts compared ({traces} traces); differing: {differing:?}"),
    )
}

fn idm_safety() -> Verdict {
    let failures = common::idm_failures(&Config::default(), IDM_EPISODES, 12);
    verdict(12, "rule-based traffic is collision-free", failures == 0, format!("{failures} failing steps in {IDM_EPISODES} episodes"))
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; listing asks
    // for test names only
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let root = std::env::var_os("GMRL_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance"));
    let report = |v: &Verdict| println!("{} {:>2} {} — {}", if v.pass { "PASS" } else { "FAIL" }, v.id, v.title, v.detail);

    // `GMRL_ACCEPTANCE_ONLY=1,2,12` restricts the run to those criteria
    let only: Option<Vec<u8>> = std::env::var("GMRL_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |id: u8| only.as_ref().is_none_or(|o| o.contains(&id));

    let mut verdicts = Vec::new();
    let mut record = |v: Verdict| {
        report(&v);
        verdicts.push(v);
    };
    let standalone: [(u8, fn() -> Verdict); 6] = [
        (1, guided_fraction),
        (2, transition_oracle),
        (3, reward_oracle),
        (4, gradient_suite),
        (5, ablation_identity),
        (6, reg_contract),
    ];
    for (id, check) in standalone {
        if wanted(id) {
            record(check());
        }
    }

    let trained: [(u8, TrainedCheck); 4] =
        [(7, probe_separation), (8, kl_ordering), (9, reward_ordering), (10, cross_ordering)];
    if trained.iter().any(|(id, _)| wanted(*id)) {
        let cfg = Config::default();
        let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| load_run(&pipeline(&root, s), s)).collect();
        for (id, check) in trained {
            if wanted(id) {
                record(check(&cfg, &runs));
            }
        }
    }
    let tail: [(u8, fn() -> Verdict); 2] = [(11, rerun_determinism), (12, idm_safety)];
    for (id, check) in tail {
        if wanted(id) {
            record(check());
        }
    }

    let failed: Vec<u8> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    println!("acceptance: {} of {} criteria pass", verdicts.len() - failed.len(), verdicts.len());
    if !failed.is_empty() {
        eprintln!("failing criteria: {failed:?}");
        std::process::exit(1);
    }
}
