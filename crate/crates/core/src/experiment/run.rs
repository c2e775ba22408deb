//! Experiment bodies. Each returns its emitted files in memory; nothing
//! touches the disk until the whole computation has succeeded.

use serde_json::{json, Value};

use super::config::{
    ExperimentConfig, OracleCheckConfig, TeachConfig, TokenDistillRun, ToySweepConfig, VarianceProbeConfig,
};
use crate::error::Result;
use crate::estimators::{
    bias_gap_from, gamma_estimator, sample_tokens, score_tabular, sequence_estimator, token_estimator, Estimator,
};
use crate::estimators::{fit_loglog_slope, mc_scaling_probe, variance_scaling_probe, BoundConstants, ProbeRow};
use crate::frame::{Cell, Kind, MetricFrame};
use crate::nn::{categorical_logprob_grad, MlpModel, TabularLm};
use crate::oracle::{
    cross_term, exact_estimator_expectation, exact_kl_gradient, exact_sequence_kl, exact_sequence_kl_chain,
    finite_difference_kl_gradient, EnumerationInstance,
};
use crate::rng;
use crate::support::distill_tokens;
use crate::toy::{distill_student, train_teacher, DistillConfig, DistillOutcome, TeacherReport};

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// `(file name, contents)` in emission order.
    pub files: Vec<(String, Vec<u8>)>,
    /// Headline numbers recorded in the manifest.
    pub summary: Value,
    /// Human-readable report for stdout.
    pub report: String,
    /// Names of failed checks; nonempty means an assertion failure.
    pub failures: Vec<String>,
}

impl RunOutput {
    fn new(summary: Value, report: String) -> Self {
        RunOutput { files: Vec::new(), summary, report, failures: Vec::new() }
    }

    fn add_frame(&mut self, name: &str, frame: &MetricFrame) -> Result<()> {
        self.files.push((name.to_string(), frame.to_csv_bytes()?));
        Ok(())
    }

    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    match cfg {
        ExperimentConfig::Teach(c) => run_teach(c),
        ExperimentConfig::ToySweep(c) => run_toy_sweep(c),
        ExperimentConfig::TokenDistill(c) => run_token_distill(c),
        ExperimentConfig::OracleCheck(c) => run_oracle_suite(c),
        ExperimentConfig::VarianceProbe(c) => run_variance_probe(c),
    }
}

fn teacher_frames(reports: &[TeacherReport]) -> Result<(MetricFrame, MetricFrame)> {
    let mut returns = MetricFrame::new(&[("task", true), ("update", true), ("mean_return", false)])?;
    let mut summary =
        MetricFrame::new(&[("task", true), ("mean_final_distance", false), ("mean_final_position", false)])?;
    for r in reports {
        for (u, ret) in &r.returns {
            returns.push(&[r.task.into(), (*u).into(), (*ret).into()])?;
        }
        summary.push(&[r.task.into(), r.mean_final_distance.into(), r.mean_final_position.into()])?;
    }
    Ok((returns, summary))
}

pub fn run_teach(cfg: &TeachConfig) -> Result<RunOutput> {
    let mut models: Vec<MlpModel> = Vec::new();
    let mut reports = Vec::new();
    for &task in &cfg.tasks {
        let (m, r) = train_teacher(task, &cfg.env, &cfg.teacher, cfg.seed)?;
        models.push(m);
        reports.push(r);
    }
    let (returns, summary) = teacher_frames(&reports)?;
    let mut report = String::new();
    for r in &reports {
        report += &format!("task {}: mean |s_T - target| = {:.4}\n", r.task, r.mean_final_distance);
    }
    let dists: Vec<f64> = reports.iter().map(|r| r.mean_final_distance).collect();
    let mut out = RunOutput::new(json!({ "mean_final_distance": dists }), report);
    out.add_frame("returns.csv", &returns)?;
    out.add_frame("summary.csv", &summary)?;
    let params: Vec<Value> = cfg.tasks.iter().zip(&models).map(|(t, m)| json!({ "task": t, "model": m })).collect();
    out.files.push(("teachers.json".into(), serde_json::to_vec_pretty(&params)?));
    Ok(out)
}

/// One trained student in a sweep.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub seed: u64,
    pub gamma: f64,
    pub outcome: DistillOutcome,
}

#[derive(Debug, Clone)]
pub struct ToySweepResult {
    pub teachers: Vec<(u64, Vec<TeacherReport>)>,
    pub runs: Vec<SweepRun>,
    pub late_fraction: f64,
}

impl ToySweepResult {
    pub fn run(&self, seed: u64, gamma: f64) -> Option<&SweepRun> {
        self.runs.iter().find(|r| r.seed == seed && r.gamma == gamma)
    }

    pub fn variance_frame(&self) -> Result<MetricFrame> {
        let mut f = MetricFrame::new(&[
            ("update", true),
            ("gamma", false),
            ("seed", true),
            ("task", true),
            ("variance", false),
            ("mean_final_distance", false),
        ])?;
        for run in &self.runs {
            for r in &run.outcome.records {
                f.push(&[
                    r.update.into(),
                    run.gamma.into(),
                    run.seed.into(),
                    r.task.into(),
                    r.variance.into(),
                    r.mean_final_distance.into(),
                ])?;
            }
        }
        Ok(f)
    }

    pub fn heatmap_frame(&self) -> Result<MetricFrame> {
        let mut f =
            MetricFrame::new(&[("gamma", false), ("seed", true), ("t_bin", true), ("x_bin", true), ("count", true)])?;
        for run in &self.runs {
            let g = run.outcome.final_grid();
            for t in 0..g.t_bins {
                for x in 0..g.x_bins {
                    f.push(&[run.gamma.into(), run.seed.into(), t.into(), x.into(), g.count(t, x).into()])?;
                }
            }
        }
        Ok(f)
    }

    pub fn summary_frame(&self) -> Result<MetricFrame> {
        let mut f = MetricFrame::new(&[
            ("gamma", false),
            ("seed", true),
            ("task", true),
            ("final_distance", false),
            ("late_variance", false),
        ])?;
        for run in &self.runs {
            let late = run.outcome.late_variance(self.late_fraction);
            for (task, d) in run.outcome.final_distance.iter().enumerate() {
                f.push(&[run.gamma.into(), run.seed.into(), task.into(), (*d).into(), late.into()])?;
            }
        }
        Ok(f)
    }
}

/// Train teachers per seed, then one student per `(seed, gamma)`.
pub fn toy_sweep(cfg: &ToySweepConfig) -> Result<ToySweepResult> {
    let mut teachers = Vec::new();
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let mut models = Vec::new();
        let mut reports = Vec::new();
        for task in &cfg.env.tasks {
            let (m, r) = train_teacher(task.id, &cfg.env, &cfg.teacher, seed)?;
            models.push(m);
            reports.push(r);
        }
        for &gamma in &cfg.gammas {
            let student_cfg = DistillConfig { gamma, ..cfg.student.clone() };
            let outcome = distill_student(&models, &cfg.env, &student_cfg, seed)?;
            runs.push(SweepRun { seed, gamma, outcome });
        }
        teachers.push((seed, reports));
    }
    Ok(ToySweepResult { teachers, runs, late_fraction: cfg.late_fraction })
}

pub fn run_toy_sweep(cfg: &ToySweepConfig) -> Result<RunOutput> {
    let result = toy_sweep(cfg)?;
    let mut report = String::from("gamma  seed  final distance per task  late variance\n");
    let mut rows = Vec::new();
    for run in &result.runs {
        let late = run.outcome.late_variance(cfg.late_fraction);
        let d: Vec<String> = run.outcome.final_distance.iter().map(|d| format!("{d:.3}")).collect();
        report += &format!("{:<6} {:<5} {:<24} {:.4e}\n", run.gamma, run.seed, d.join(" "), late);
        rows.push(json!({ "gamma": run.gamma, "seed": run.seed, "final_distance": run.outcome.final_distance, "late_variance": late }));
    }
    let mut out = RunOutput::new(json!({ "runs": rows }), report);
    out.add_frame("variance.csv", &result.variance_frame()?)?;
    out.add_frame("heatmap.csv", &result.heatmap_frame()?)?;
    out.add_frame("summary.csv", &result.summary_frame()?)?;
    let mut teacher_summary = MetricFrame::new(&[("seed", true), ("task", true), ("mean_final_distance", false)])?;
    for (seed, reports) in &result.teachers {
        for r in reports {
            teacher_summary.push(&[(*seed).into(), r.task.into(), r.mean_final_distance.into()])?;
        }
    }
    out.add_frame("teachers.csv", &teacher_summary)?;
    Ok(out)
}

pub fn run_token_distill(cfg: &TokenDistillRun) -> Result<RunOutput> {
    let task = cfg.task.build(cfg.seed)?;
    let outcome = distill_tokens(&task, &cfg.training, cfg.seed)?;
    let report = format!(
        "{} K={}: exact KL {} -> {}\n",
        cfg.training.loss.objective.name(),
        cfg.training.loss.k,
        outcome.initial_kl.map_or("n/a".into(), |v| format!("{v:.5}")),
        outcome.final_kl.map_or("n/a".into(), |v| format!("{v:.5}")),
    );
    let mut out = RunOutput::new(json!({ "initial_kl": outcome.initial_kl, "final_kl": outcome.final_kl }), report);
    out.add_frame("train.csv", &outcome.train)?;
    out.add_frame("scatter.csv", &outcome.scatter)?;
    out.add_frame("posgap.csv", &outcome.posgap)?;
    Ok(out)
}

/// Result of one oracle identity.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub error: f64,
    pub tolerance: f64,
}

impl IdentityCheck {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

/// Every enumeration identity on one seeded instance.
pub fn oracle_identities(cfg: &OracleCheckConfig) -> Result<Vec<IdentityCheck>> {
    let mut inst = EnumerationInstance::random(cfg.vocab, cfg.order, cfg.horizon, cfg.scale, cfg.seed)?;
    if cfg.identical {
        inst = EnumerationInstance::new(inst.student.clone(), inst.student.clone(), cfg.horizon)?;
    }
    let mut checks = Vec::new();
    let kl = exact_sequence_kl(&inst)?;
    checks.push(IdentityCheck { name: "kl_nonnegative", error: (-kl).max(0.0), tolerance: 1e-15 });
    let chain = exact_sequence_kl_chain(&inst)?;
    checks.push(IdentityCheck { name: "kl_chain_rule", error: (kl - chain).abs(), tolerance: 1e-10 });
    let grad = exact_kl_gradient(&inst)?;
    let fd = finite_difference_kl_gradient(&inst, cfg.fd_step)?;
    checks.push(IdentityCheck {
        name: "kl_gradient_finite_difference",
        error: grad.max_abs_diff(&fd)?,
        tolerance: 1e-6,
    });
    let e_causal = exact_estimator_expectation(&inst, Estimator::Gamma(1.0))?;
    checks.push(IdentityCheck { name: "gamma1_unbiased", error: e_causal.max_abs_diff(&grad)?, tolerance: 1e-10 });
    let e_full = exact_estimator_expectation(&inst, Estimator::SequenceFull)?;
    checks.push(IdentityCheck { name: "sequence_unbiased", error: e_full.max_abs_diff(&grad)?, tolerance: 1e-10 });
    let e_tok = exact_estimator_expectation(&inst, Estimator::Token)?;
    let mut gap = e_full.clone();
    gap.add_scaled(&e_tok, -1.0)?;
    checks.push(IdentityCheck { name: "bias_gap", error: gap.max_abs_diff(&bias_gap_from(&inst)?)?, tolerance: 1e-8 });
    let mut cross = 0.0f64;
    for t in 2..=cfg.horizon {
        for tp in 1..t {
            cross = cross.max(cross_term(&inst, tp, t)?.values().iter().fold(0.0, |m, x| m.max(x.abs())));
        }
    }
    checks.push(IdentityCheck { name: "past_cross_terms_vanish", error: cross, tolerance: 1e-10 });
    let mut score = 0.0f64;
    for dist in inst.student.row_dists() {
        let mut mean = vec![0.0; dist.vocab_size()];
        for y in 0..dist.vocab_size() as u32 {
            let (_, g) = categorical_logprob_grad(&dist, y)?;
            for (m, gi) in mean.iter_mut().zip(g) {
                *m += dist.prob(y) * gi;
            }
        }
        score = score.max(mean.iter().map(|x| x * x).sum::<f64>().sqrt());
    }
    checks.push(IdentityCheck { name: "score_zero_mean", error: score, tolerance: 1e-10 });
    let (mut d0, mut d1) = (0.0f64, 0.0f64);
    for i in 0..cfg.trajectories {
        let tokens = sample_tokens(&inst.student, &[], cfg.horizon, &mut rng::stream(cfg.seed, &[0x0AC1, i as u64]));
        let traj = score_tabular(&inst.student, &inst.teacher, &[], &tokens)?;
        d0 = d0.max(gamma_estimator(&traj, 0.0)?.max_abs_diff(&token_estimator(&traj)?)?);
        d1 = d1.max(gamma_estimator(&traj, 1.0)?.max_abs_diff(&sequence_estimator(&traj, true)?)?);
    }
    checks.push(IdentityCheck { name: "gamma0_is_token", error: d0, tolerance: 0.0 });
    checks.push(IdentityCheck { name: "gamma1_is_causal", error: d1, tolerance: 0.0 });
    Ok(checks)
}

pub fn run_oracle_suite(cfg: &OracleCheckConfig) -> Result<RunOutput> {
    let checks = oracle_identities(cfg)?;
    let mut frame = MetricFrame::with_kinds(&[
        ("identity", Kind::Text),
        ("error", Kind::Float),
        ("tolerance", Kind::Float),
        ("passed", Kind::Int),
    ])?;
    let mut report = format!("oracle identities, V={} T={} seed {}\n", cfg.vocab, cfg.horizon, cfg.seed);
    let mut failures = Vec::new();
    for c in &checks {
        frame.push(&[Cell::from(c.name), c.error.into(), c.tolerance.into(), c.passed().into()])?;
        report += &format!(
            "{:<32} {:<4} error {:.3e} (tol {:.0e})\n",
            c.name,
            if c.passed() { "PASS" } else { "FAIL" },
            c.error,
            c.tolerance
        );
        if !c.passed() {
            failures.push(c.name.to_string());
        }
    }
    let mut out = RunOutput::new(json!({ "checks": checks.len(), "failed": failures }), report);
    out.failures = failures;
    out.add_frame("oracle.csv", &frame)?;
    Ok(out)
}

fn slope(rows: &[ProbeRow], seq: bool) -> Result<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.horizon as f64, if seq { r.sequence_second_moment } else { r.token_second_moment }))
        .collect();
    fit_loglog_slope(&pts)
}

pub fn run_variance_probe(cfg: &VarianceProbeConfig) -> Result<RunOutput> {
    let constants = BoundConstants::new(cfg.reward_bound, cfg.score_bound)?;
    let adversarial = variance_scaling_probe(constants, &cfg.horizons, cfg.dim)?;
    let mut frame = MetricFrame::with_kinds(&[
        ("instance", Kind::Text),
        ("horizon", Kind::Int),
        ("token_second_moment", Kind::Float),
        ("sequence_second_moment", Kind::Float),
        ("token_bound_sq", Kind::Float),
        ("sequence_bound_sq", Kind::Float),
    ])?;
    let push = |frame: &mut MetricFrame, name: &str, rows: &[ProbeRow]| -> Result<()> {
        for r in rows {
            frame.push(&[
                Cell::from(name),
                r.horizon.into(),
                r.token_second_moment.into(),
                r.sequence_second_moment.into(),
                constants.token_norm_bound(r.horizon).powi(2).into(),
                constants.sequence_norm_bound(r.horizon).powi(2).into(),
            ])?;
        }
        Ok(())
    };
    push(&mut frame, "adversarial", &adversarial)?;
    let (adv_tok, adv_seq) = (slope(&adversarial, false)?, slope(&adversarial, true)?);
    let mut report = format!("adversarial slopes: token {adv_tok:.4}, sequence {adv_seq:.4}\n");
    let mut summary = json!({ "adversarial_token_slope": adv_tok, "adversarial_sequence_slope": adv_seq });
    if let Some(r) = &cfg.random {
        let student = TabularLm::random(r.vocab, r.order, r.scale, sub_seed(cfg.seed, 1))?;
        let teacher = TabularLm::random(r.vocab, r.order, r.scale, sub_seed(cfg.seed, 2))?;
        let rows = mc_scaling_probe(&student, &teacher, &r.horizons, r.samples, cfg.seed)?;
        push(&mut frame, "random", &rows)?;
        let (tok, seq) = (slope(&rows, false)?, slope(&rows, true)?);
        report += &format!("random-instance slopes: token {tok:.4}, sequence {seq:.4}\n");
        summary["random_token_slope"] = json!(tok);
        summary["random_sequence_slope"] = json!(seq);
    }
    let mut out = RunOutput::new(summary, report);
    out.add_frame("probe.csv", &frame)?;
    Ok(out)
}

fn sub_seed(seed: u64, tag: u64) -> u64 {
    rand::Rng::random(&mut rng::stream(seed, &[0x9B0, tag]))
}
