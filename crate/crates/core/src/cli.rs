//! Command-line front end.
//!
//! Exit codes: 0 certified (or completed), 2 not certified, 1 usage or I/O
//! error. The human report goes to standard output; `--json PATH` also writes
//! the machine report. Reports contain no timing unless `--timing` is given,
//! so identical inputs and seeds produce identical bytes.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::controller::{
    build_coordinates, locality_report, simulate_closed_loop, tabulated_coordinates, Target,
};
use crate::model::NetworkModel;
use crate::modelfile::{
    load_factored, load_matrix, load_model, parse_target, parse_theta_table, read_file, FileError,
    LoadedModel,
};
use crate::optim::{Matrix, MetzlerMatrix};
use crate::positive_lti::{certify_positive_lti, PositiveError};
use crate::separable_metric::{
    certify_network_kind, local_metric_along_trajectory, pointwise_lmi_audit, MetricError,
    MetricKind, SeparableCertificate,
};
use crate::simulator::{
    check_order_preservation, integrate, measure_contraction, virtual_system_certify,
    IntegratorOptions, SimError, DEFAULT_STEP,
};
use crate::small_gain::{audit_gains, compose, GainError, GainMatrix};
use crate::positive_lti::verify_diagonal_metric;
use crate::sprocedure::{
    certify_uncertain, sample_adversarial_h, Infeasibility, SProcOutcome, UncertainCoupling,
};

/// Pointwise audits pass when the largest eigenvalue is at most this.
pub const AUDIT_TOL: f64 = 1e-9;
const VIRTUAL_TOL: f64 = 1e-8;
const ORDER_TOL: f64 = 1e-7;

#[derive(Debug, Parser)]
#[command(name = "sepmetric", version, about = "Separable contraction metrics for monotone networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Seed for every randomized step.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the machine-readable report here.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Include wall-clock timing (makes reports non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Diagonal,
    Sum,
    Max,
}

impl From<KindArg> for MetricKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Diagonal => MetricKind::DiagonalQuadratic,
            KindArg::Sum => MetricKind::SumL1,
            KindArg::Max => MetricKind::MaxLinf,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Certify a Metzler matrix: sum, max and diagonal quadratic weights.
    CheckPositive {
        matrix: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Separable metric for a model, confirmed by a pointwise LMI audit.
    Metric {
        model: PathBuf,
        /// Target contraction rate (reported as met or not).
        #[arg(long)]
        rate: Option<f64>,
        /// Pointwise audit samples.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, value_enum, default_value = "diagonal")]
        kind: KindArg,
        /// Certify a tube of this radius around the solution from --x0.
        #[arg(long)]
        tube_radius: Option<f64>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x0: Option<Vec<f64>>,
        #[arg(long)]
        step: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Compose local storages through a gain matrix.
    SmallGain {
        /// Model file (gains are audited from sampled Jacobians).
        model: Option<PathBuf>,
        /// Raw gain matrix file instead of a model.
        #[arg(long, conflicts_with = "model")]
        alpha: Option<PathBuf>,
        /// Storage weights w for V_i = w_i δ_i² (default all ones).
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Relative safety factor on sampled gains.
        #[arg(long, default_value_t = crate::small_gain::DEFAULT_INFLATION)]
        inflation: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Diagonal metric robust to norm-bounded nonlinear coupling.
    Sprocedure {
        model: PathBuf,
        /// Gain bound ψ (overrides the model file).
        #[arg(long)]
        psi: Option<f64>,
        /// Structure matrix H file (overrides the model file; default identity).
        #[arg(long)]
        h: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        rate: f64,
        /// Adversarial perturbation draws used to re-verify a certificate.
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Integrate the open-loop model.
    Simulate {
        model: PathBuf,
        /// Initial state (default: seeded random point in the box).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x0: Option<Vec<f64>>,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        /// Trajectory CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Min-norm tracking feedback in metric coordinates, simulated in closed loop.
    Synthesize {
        model: PathBuf,
        /// Target CSV with columns t,x1..xn,u1..um.
        #[arg(long)]
        target: Option<PathBuf>,
        /// Constant target state (default 0).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, conflicts_with = "target")]
        target_state: Option<Vec<f64>>,
        /// Constant target input (default 0).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, conflicts_with = "target")]
        target_input: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x0: Option<Vec<f64>>,
        /// Demanded decay rate λ (default: certified rate).
        #[arg(long)]
        rate: Option<f64>,
        /// θ table CSV with columns x,theta1..thetan.
        #[arg(long)]
        theta: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Certify ẋ = N(x,t)x through its virtual system along sampled solutions.
    Virtual {
        system: PathBuf,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Certificate plus pointwise, order-preservation and decay audits.
    Audit {
        model: PathBuf,
        /// Pointwise audit samples.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Trajectory pairs for the simulation checks.
        #[arg(long, default_value_t = 20)]
        pairs: usize,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    NotCertified,
    Completed,
    Failed,
}

impl Verdict {
    fn exit_code(self) -> i32 {
        match self {
            Verdict::Certified | Verdict::Completed => 0,
            Verdict::NotCertified | Verdict::Failed => 2,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Verdict::Certified => "certified",
            Verdict::NotCertified => "not certified",
            Verdict::Completed => "completed",
            Verdict::Failed => "failed",
        }
    }
}

/// Machine-readable command report.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: &'static str,
    pub verdict: Verdict,
    pub reason: Option<String>,
    pub message: Option<String>,
    pub seed: u64,
    pub result: Value,
    pub provenance: Value,
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
    #[serde(skip)]
    lines: Vec<String>,
}

impl Report {
    fn new(command: &'static str, seed: u64) -> Self {
        Self {
            command,
            verdict: Verdict::Completed,
            reason: None,
            message: None,
            seed,
            result: Value::Null,
            provenance: json!({}),
            notes: Vec::new(),
            elapsed_ms: None,
            lines: Vec::new(),
        }
    }

    fn fail(mut self, verdict: Verdict, reason: &str, message: impl ToString) -> Self {
        self.verdict = verdict;
        self.reason = Some(reason.to_string());
        self.message = Some(message.to_string());
        self
    }

    fn line(&mut self, s: impl Into<String>) {
        self.lines.push(s.into());
    }

    fn human(&self) -> String {
        let mut out = format!("{}: {}\n", self.command, self.verdict.label());
        if let Some(r) = &self.reason {
            out.push_str(&format!("reason: {r}\n"));
        }
        if let Some(m) = &self.message {
            out.push_str(&format!("message: {m}\n"));
        }
        for l in &self.lines {
            out.push_str(l);
            out.push('\n');
        }
        if let Value::Object(map) = &self.provenance {
            if !map.is_empty() {
                out.push_str("provenance:\n");
                for (k, v) in map {
                    out.push_str(&format!("  {k}: {v}\n"));
                }
            }
        }
        for n in &self.notes {
            out.push_str(&format!("note: {n}\n"));
        }
        out.push_str(&format!("seed: {}\n", self.seed));
        if let Some(ms) = self.elapsed_ms {
            out.push_str(&format!("elapsed_ms: {ms:.3}\n"));
        }
        out
    }
}

/// Usage or I/O failure; exit code 1.
#[derive(Debug)]
struct UsageError(String);

impl<E: std::error::Error> From<E> for UsageError {
    fn from(e: E) -> Self {
        UsageError(e.to_string())
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

fn fmt_matrix(m: &Matrix) -> String {
    let rows: Vec<String> = m.to_rows().iter().map(|r| fmt_vec(r)).collect();
    format!("[{}]", rows.join(", "))
}

/// Runs the CLI with explicit arguments (including the program name) and
/// returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    let started = Instant::now();
    let (common, result) = dispatch(cli.command);
    match result {
        Ok(mut report) => {
            if common.timing {
                report.elapsed_ms = Some(started.elapsed().as_secs_f64() * 1e3);
            }
            if let Some(path) = &common.json {
                let text = serde_json::to_string_pretty(&report).expect("report serializes");
                if let Err(e) = std::fs::write(path, text + "\n") {
                    let _ = writeln!(err, "error: cannot write {}: {e}", path.display());
                    return 1;
                }
            }
            let _ = write!(out, "{}", report.human());
            report.verdict.exit_code()
        }
        Err(UsageError(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> (Common, Result<Report, UsageError>) {
    match cmd {
        Command::CheckPositive { matrix, common } => {
            let r = cmd_check_positive(&matrix, common.seed);
            (common, r)
        }
        Command::Metric {
            model,
            rate,
            samples,
            kind,
            tube_radius,
            x0,
            step,
            common,
        } => {
            let r = cmd_metric(&model, rate, samples, kind.into(), tube_radius, x0, step, common.seed);
            (common, r)
        }
        Command::SmallGain {
            model,
            alpha,
            weights,
            samples,
            inflation,
            common,
        } => {
            let r = cmd_small_gain(model.as_deref(), alpha.as_deref(), weights, samples, inflation, common.seed);
            (common, r)
        }
        Command::Sprocedure {
            model,
            psi,
            h,
            rate,
            samples,
            common,
        } => {
            let r = cmd_sprocedure(&model, psi, h.as_deref(), rate, samples, common.seed);
            (common, r)
        }
        Command::Simulate {
            model,
            x0,
            step,
            out,
            common,
        } => {
            let r = cmd_simulate(&model, x0, step, out.as_deref(), common.seed);
            (common, r)
        }
        Command::Synthesize {
            model,
            target,
            target_state,
            target_input,
            x0,
            rate,
            theta,
            step,
            out,
            common,
        } => {
            let r = cmd_synthesize(SynthesizeArgs {
                model: &model,
                target: target.as_deref(),
                target_state,
                target_input,
                x0,
                rate,
                theta: theta.as_deref(),
                step,
                out: out.as_deref(),
                seed: common.seed,
            });
            (common, r)
        }
        Command::Virtual {
            system,
            samples,
            step,
            common,
        } => {
            let r = cmd_virtual(&system, samples, step, common.seed);
            (common, r)
        }
        Command::Audit {
            model,
            samples,
            pairs,
            step,
            common,
        } => {
            let r = cmd_audit(&model, samples, pairs, step, common.seed);
            (common, r)
        }
    }
}

fn load(path: &Path) -> Result<LoadedModel, UsageError> {
    load_model(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))
}

fn load_mat(path: &Path) -> Result<Matrix, UsageError> {
    load_matrix(path).map_err(|e: FileError| UsageError(format!("{}: {e}", path.display())))
}

fn check_state(m: &NetworkModel, x: &[f64], what: &str) -> Result<(), UsageError> {
    if x.len() != m.n() {
        return Err(UsageError(format!(
            "{what} has {} entries but the model has {} nodes",
            x.len(),
            m.n()
        )));
    }
    Ok(())
}

fn cmd_check_positive(path: &Path, seed: u64) -> Result<Report, UsageError> {
    let a = load_mat(path)?;
    let a = MetzlerMatrix::new(a).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    let mut r = Report::new("check-positive", seed);
    r.provenance = json!({ "matrix": a });
    match certify_positive_lti(&a) {
        Ok(c) => {
            r.verdict = Verdict::Certified;
            r.line(format!("p = {}", fmt_vec(&c.p)));
            r.line(format!("q = {}", fmt_vec(&c.q)));
            r.line(format!("d = {}", fmt_vec(&c.d)));
            r.line(format!("lambda_d = {}", c.decay));
            r.provenance["p_margin"] = json!(c.p_margin);
            r.provenance["v_margin"] = json!(c.v_margin);
            r.notes.push("q are max-type weights: max_i q_i|x_i| decreases, i.e. A(1/q) < 0; v = 1/q up to scale satisfies Av < 0".into());
            r.result = json!(c);
            Ok(r)
        }
        Err(PositiveError::NotHurwitz { best_margin }) => {
            r.provenance["best_margin"] = json!(best_margin);
            Ok(r.fail(Verdict::NotCertified, "not_hurwitz", "no strictly positive p with Aᵀp < 0"))
        }
        Err(e) => Ok(r.fail(Verdict::NotCertified, "numerical_failure", e)),
    }
}

fn cert_lines(r: &mut Report, c: &SeparableCertificate) {
    r.line(format!("kind = {}", c.kind.name()));
    r.line(format!("weights = {}", fmt_vec(&c.weights)));
    r.line(format!("rate = {}", c.rate));
    if let (Some(w), Some(ok)) = (c.want_rate, c.want_satisfied) {
        r.line(format!("requested rate {w}: {}", if ok { "met" } else { "not met" }));
    }
    r.provenance["comparison_matrix"] = json!(c.comparison());
    r.provenance["p_margin"] = json!(c.provenance.p_margin);
    r.provenance["v_margin"] = json!(c.provenance.v_margin);
    r.provenance["scope"] = json!(c.scope);
}

fn metric_failure(r: Report, e: MetricError) -> Result<Report, UsageError> {
    match e {
        MetricError::Model(m) => Err(UsageError(m.to_string())),
        MetricError::ComparisonNotHurwitz { ref comparison, .. } => {
            let mut r = r;
            r.provenance["comparison_matrix"] = json!(comparison);
            let reason = e.reason();
            Ok(r.fail(Verdict::NotCertified, reason, e))
        }
        e => {
            let reason = e.reason();
            Ok(r.fail(Verdict::NotCertified, reason, e))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_metric(
    path: &Path,
    rate: Option<f64>,
    samples: usize,
    kind: MetricKind,
    tube_radius: Option<f64>,
    x0: Option<Vec<f64>>,
    step: Option<f64>,
    seed: u64,
) -> Result<Report, UsageError> {
    let m = load(path)?.model;
    let mut r = Report::new("metric", seed);
    let cert = match (tube_radius, x0) {
        (Some(radius), Some(x0)) => {
            check_state(&m, &x0, "--x0")?;
            if kind != MetricKind::DiagonalQuadratic {
                return Err(UsageError("tube certificates are diagonal quadratic".into()));
            }
            let mut opts = IntegratorOptions::for_model(&m);
            if let Some(h) = step {
                opts = opts.with_step(h);
            }
            local_metric_along_trajectory(&m, &x0, radius, &opts)
        }
        (Some(_), None) => return Err(UsageError("--tube-radius needs --x0".into())),
        (None, _) => certify_network_kind(&m, kind, rate),
    };
    let cert = match cert {
        Ok(c) => c,
        Err(e) => return metric_failure(r, e),
    };
    cert_lines(&mut r, &cert);
    r.verdict = Verdict::Certified;
    let global = cert.scope == crate::separable_metric::Scope::GlobalBox;
    if global {
        r.notes.push("certificate holds on the declared domain boxes".into());
    } else {
        r.notes.push("tube certificate: the box-wide pointwise audit does not apply".into());
    }
    if global && kind == MetricKind::DiagonalQuadratic && samples > 0 {
        let a = pointwise_lmi_audit(&m, &cert, samples, seed).map_err(UsageError::from)?;
        r.line(format!("audit: max_eig = {:e} over {} samples", a.max_eig, a.samples));
        r.provenance["audit_samples"] = json!(samples);
        r.provenance["audit_max_eig"] = json!(a.max_eig);
        if a.max_eig > AUDIT_TOL {
            r = r.fail(
                Verdict::NotCertified,
                "audit_failed",
                format!("pointwise LMI positive ({:e}) at x = {}", a.max_eig, fmt_vec(&a.worst_x)),
            );
        }
    }
    r.result = json!(cert);
    Ok(r)
}

fn cmd_small_gain(
    model: Option<&Path>,
    alpha: Option<&Path>,
    weights: Option<Vec<f64>>,
    samples: usize,
    inflation: f64,
    seed: u64,
) -> Result<Report, UsageError> {
    let mut r = Report::new("small-gain", seed);
    let gains = match (model, alpha) {
        (_, Some(path)) => match GainMatrix::new(load_mat(path)?) {
            Ok(g) => {
                r.provenance["source"] = json!("alpha_file");
                g
            }
            Err(e) => return Err(UsageError(format!("{}: {e}", path.display()))),
        },
        (Some(path), None) => {
            let m = load(path)?.model;
            let w = weights.unwrap_or_else(|| vec![1.0; m.n()]);
            match audit_gains(&m, &w, samples, seed, inflation) {
                Ok(a) => {
                    r.provenance["source"] = json!("sampled_jacobians");
                    r.provenance["samples"] = json!(a.samples);
                    r.provenance["inflation"] = json!(a.inflation);
                    r.provenance["storage_weights"] = json!(a.storage_weights);
                    r.provenance["raw_gains"] = json!(a.raw);
                    r.notes.push("gains are sampled estimates, not interval bounds".into());
                    a.gains
                }
                Err(GainError::Invalid(m)) => return Err(UsageError(m)),
                Err(GainError::Model(m)) => return Err(UsageError(m.to_string())),
                Err(e) => {
                    let reason = e.reason();
                    return Ok(r.fail(Verdict::NotCertified, reason, e));
                }
            }
        }
        (None, None) => return Err(UsageError("give a model file or --alpha".into())),
    };
    r.line(format!("alpha = {}", fmt_matrix(gains.alpha().matrix())));
    r.provenance["alpha"] = json!(gains);
    r.provenance["neighbours"] = json!(gains.neighbours());
    match compose(&gains) {
        Ok(w) => {
            r.verdict = Verdict::Certified;
            r.line(format!("p = {}", fmt_vec(&w.p)));
            r.line(format!("q = {}", fmt_vec(&w.q)));
            r.line(format!("decay = {}", w.decay));
            r.result = json!(w);
            Ok(r)
        }
        Err(e) => {
            let reason = e.reason();
            Ok(r.fail(Verdict::NotCertified, reason, e))
        }
    }
}

fn cmd_sprocedure(
    path: &Path,
    psi: Option<f64>,
    h: Option<&Path>,
    rate: f64,
    samples: usize,
    seed: u64,
) -> Result<Report, UsageError> {
    let loaded = load(path)?;
    let m = loaded.model;
    let n = m.n();
    let mut r = Report::new("sprocedure", seed);
    let h = match (h, &loaded.uncertainty) {
        (Some(p), _) => load_mat(p)?,
        (None, Some(u)) => u.h().clone(),
        (None, None) => {
            r.notes.push("no H given; using H = I".into());
            Matrix::identity(n)
        }
    };
    let psi = psi
        .or(loaded.uncertainty.as_ref().map(|u| u.psi()))
        .ok_or_else(|| UsageError("give --psi or an [uncertainty] section".into()))?;
    let u = UncertainCoupling::new(h, psi)?;
    r.provenance["psi"] = json!(psi);
    r.provenance["h"] = json!(u.h());
    r.provenance["rate"] = json!(rate);
    r.provenance["lmi_form"] = json!("repaired S-procedure LMI [[AᵀD+DA+2λD+θψ²HᵀH, D],[D, −θI]] ≺ 0, single multiplier");
    let outcome = match certify_uncertain(&m, &u, rate) {
        Ok(o) => o,
        Err(crate::sprocedure::SProcError::Metric(e)) => return metric_failure(r, e),
        Err(e) => return Err(e.into()),
    };
    match outcome {
        SProcOutcome::Certified(c) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut survived = 0;
            for _ in 0..samples {
                let delta = sample_adversarial_h(&u, &mut rng)?;
                if verify_diagonal_metric(&c.comparison.matrix().add(&delta), &c.d, c.rate)? {
                    survived += 1;
                }
            }
            r.line(format!("d = {}", fmt_vec(&c.d)));
            r.line(format!("theta = {}", c.theta));
            r.line(format!("rate = {}", c.rate));
            r.line(format!("lmi_margin = {:e}", c.lmi_margin));
            r.line(format!("adversarial draws passed: {survived}/{samples}"));
            r.provenance["comparison_matrix"] = json!(c.comparison);
            r.provenance["adversarial_draws"] = json!(samples);
            r.provenance["adversarial_passed"] = json!(survived);
            r.result = json!(c);
            if survived == samples {
                r.verdict = Verdict::Certified;
                Ok(r)
            } else {
                Ok(r.fail(Verdict::NotCertified, "adversarial_failure", "a sampled perturbation violates the certificate"))
            }
        }
        SProcOutcome::Infeasible(inf) => {
            let (reason, msg) = match &inf {
                Infeasibility::DiagonalBound { node, value } => (
                    "certified_infeasible",
                    format!("necessary condition fails at node {node}: Ā_ii + λ + ψ‖H e_i‖ = {value} ≥ 0"),
                ),
                Infeasibility::ShiftedNotHurwitz { .. } => (
                    "certified_infeasible",
                    "Ā + λI is not Hurwitz".to_string(),
                ),
                Infeasibility::BudgetExhausted { best_lambda_max, .. } => (
                    "budget_exhausted",
                    format!("search ended with λ_max = {best_lambda_max:e}"),
                ),
            };
            r.result = json!(inf);
            Ok(r.fail(Verdict::NotCertified, reason, msg))
        }
    }
}

fn initial_state(m: &NetworkModel, x0: Option<Vec<f64>>, seed: u64) -> Result<Vec<f64>, UsageError> {
    match x0 {
        Some(x) => {
            check_state(m, &x, "--x0")?;
            Ok(x)
        }
        None => Ok(m.sample_point(&mut ChaCha8Rng::seed_from_u64(seed)).0),
    }
}

fn cmd_simulate(
    path: &Path,
    x0: Option<Vec<f64>>,
    step: f64,
    out: Option<&Path>,
    seed: u64,
) -> Result<Report, UsageError> {
    let m = load(path)?.model;
    let x0 = initial_state(&m, x0, seed)?;
    let opts = IntegratorOptions::for_model(&m).with_step(step);
    let mut r = Report::new("simulate", seed);
    r.provenance["x0"] = json!(x0);
    r.provenance["integrator"] = json!({"method": "RK4", "step": step, "horizon": [opts.t0, opts.tf]});
    let tr = match integrate(&m, &x0, &opts) {
        Ok(t) => t,
        Err(e @ SimError::NonFinite { .. }) => return Ok(r.fail(Verdict::Failed, "non_finite_state", e)),
        Err(e) => return Err(e.into()),
    };
    if let Some(p) = out {
        let mut f = std::fs::File::create(p).map_err(|e| UsageError(format!("{}: {e}", p.display())))?;
        tr.write_csv(&mut f, &[])?;
        r.line(format!("trajectory written to {}", p.display()));
    }
    r.line(format!("x(tf) = {}", fmt_vec(tr.last())));
    r.line(format!("max local error estimate = {:e}", tr.max_local_error));
    for w in &tr.warnings {
        r.notes.push(format!("warning: {}", serde_json::to_string(w).expect("serializes")));
    }
    r.result = json!({
        "final_state": tr.last(),
        "steps": tr.times.len() - 1,
        "max_local_error": tr.max_local_error,
        "warnings": tr.warnings,
    });
    Ok(r)
}

struct SynthesizeArgs<'a> {
    model: &'a Path,
    target: Option<&'a Path>,
    target_state: Option<Vec<f64>>,
    target_input: Option<Vec<f64>>,
    x0: Option<Vec<f64>>,
    rate: Option<f64>,
    theta: Option<&'a Path>,
    step: f64,
    out: Option<&'a Path>,
    seed: u64,
}

fn cmd_synthesize(a: SynthesizeArgs<'_>) -> Result<Report, UsageError> {
    let m = load(a.model)?.model;
    let b = m
        .input_matrix()
        .ok_or_else(|| UsageError("synthesize needs an [input_matrix] section".into()))?;
    let (n, cols) = (m.n(), b.cols());
    let mut r = Report::new("synthesize", a.seed);
    let cc = match a.theta {
        Some(p) => {
            let tables = parse_theta_table(&read_file(p)?, n)
                .map_err(|e| UsageError(format!("{}: {e}", p.display())))?;
            let rate = a.rate.ok_or_else(|| UsageError("--theta needs --rate".into()))?;
            r.provenance["coordinates"] = json!("tabulated");
            tabulated_coordinates(tables, rate)?
        }
        None => {
            let cert = match certify_network_kind(&m, MetricKind::DiagonalQuadratic, None) {
                Ok(c) => c,
                Err(e) => return metric_failure(r, e),
            };
            r.provenance["certificate_weights"] = json!(cert.weights);
            r.provenance["certified_rate"] = json!(cert.rate);
            r.provenance["coordinates"] = json!("constant");
            let cc = build_coordinates(&cert)?;
            match a.rate {
                Some(l) => cc.with_rate(l),
                None => cc,
            }
        }
    };
    let target = match a.target {
        Some(p) => parse_target(&read_file(p)?, n, cols)
            .map_err(|e| UsageError(format!("{}: {e}", p.display())))?,
        None => {
            let xs = a.target_state.unwrap_or_else(|| vec![0.0; n]);
            let us = a.target_input.unwrap_or_else(|| vec![0.0; cols]);
            check_state(&m, &xs, "--target-state")?;
            if us.len() != cols {
                return Err(UsageError(format!("--target-input needs {cols} entries")));
            }
            Target::constant(xs, us)
        }
    };
    let x0 = initial_state(&m, a.x0, a.seed)?;
    let opts = IntegratorOptions::for_model(&m).with_step(a.step);
    r.provenance["rate"] = json!(cc.rate);
    r.provenance["x0"] = json!(x0);
    r.provenance["integrator"] = json!({"method": "RK4", "step": a.step, "horizon": [opts.t0, opts.tf]});
    r.provenance["locality"] = json!(locality_report(&m, &cc));
    let cl = match simulate_closed_loop(&m, &cc, &target, &x0, &opts) {
        Ok(c) => c,
        Err(e) => return Ok(r.fail(Verdict::Failed, "closed_loop_failed", e)),
    };
    if let Some(p) = a.out {
        let v: Vec<Vec<f64>> = cl.v.iter().map(|x| vec![*x]).collect();
        let mut f = std::fs::File::create(p).map_err(|e| UsageError(format!("{}: {e}", p.display())))?;
        cl.trajectory.write_csv(&mut f, &[("u", &cl.inputs), ("V", &v)])?;
        r.line(format!("closed-loop trajectory written to {}", p.display()));
    }
    r.line(format!("V(0) = {:e}, V(tf) = {:e}", cl.v[0], cl.v[cl.v.len() - 1]));
    r.line(format!("max V(t)/(V(0)e^(-2λt)) = {}", cl.worst_bound_ratio));
    r.result = json!({
        "v0": cl.v[0],
        "v_final": cl.v[cl.v.len() - 1],
        "worst_bound_ratio": cl.worst_bound_ratio,
        "final_state": cl.trajectory.last(),
        "warnings": cl.trajectory.warnings,
    });
    if cl.worst_bound_ratio <= 1.01 {
        r.verdict = Verdict::Certified;
        Ok(r)
    } else {
        Ok(r.fail(Verdict::NotCertified, "decay_bound_violated", "V(t) exceeded V(0)e^(-2λt)(1+0.01)"))
    }
}

fn cmd_virtual(path: &Path, samples: usize, step: f64, seed: u64) -> Result<Report, UsageError> {
    let fs = load_factored(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    let (t0, tf) = fs.horizon();
    let opts = IntegratorOptions { step, t0, tf };
    let mut r = Report::new("virtual", seed);
    r.provenance["samples"] = json!(samples);
    r.provenance["integrator"] = json!({"method": "RK4", "step": step, "horizon": [t0, tf]});
    r.notes.push(format!(
        "stability is checked on {samples} sampled solutions, not for all solutions"
    ));
    match virtual_system_certify(&fs, samples, seed, &opts) {
        Ok(v) => {
            r.line(format!("samples verified: {}/{}", v.samples.iter().filter(|s| s.verified).count(), v.sample_count));
            r.line(format!("max |y - x| = {:e}", v.max_reproduction_error));
            let ok = v.all_verified && v.max_reproduction_error <= VIRTUAL_TOL;
            r.result = json!(v);
            if ok {
                r.verdict = Verdict::Certified;
                Ok(r)
            } else {
                Ok(r.fail(Verdict::NotCertified, "sample_not_verified", "a sampled solution failed verification"))
            }
        }
        Err(e @ SimError::PositivityViolation { .. }) => Ok(r.fail(Verdict::NotCertified, "positivity_violation", e)),
        Err(e @ SimError::Domination { .. }) => Ok(r.fail(Verdict::NotCertified, "domination_not_hurwitz", e)),
        Err(e @ SimError::NonFinite { .. }) => Ok(r.fail(Verdict::Failed, "non_finite_state", e)),
        Err(e) => Err(e.into()),
    }
}

fn cmd_audit(path: &Path, samples: usize, pairs: usize, step: f64, seed: u64) -> Result<Report, UsageError> {
    let m = load(path)?.model;
    let mut r = Report::new("audit", seed);
    let cert = match certify_network_kind(&m, MetricKind::DiagonalQuadratic, None) {
        Ok(c) => c,
        Err(e) => return metric_failure(r, e),
    };
    cert_lines(&mut r, &cert);
    let opts = IntegratorOptions::for_model(&m).with_step(step);
    let lmi = pointwise_lmi_audit(&m, &cert, samples, seed).map_err(UsageError::from)?;
    let order = check_order_preservation(&m, pairs, seed, &opts)?;
    let decay = measure_contraction(&m, &cert, pairs, seed.wrapping_add(1), &opts)?;
    r.line(format!("pointwise: max_eig = {:e} over {samples} samples", lmi.max_eig));
    r.line(format!("order preservation: max violation = {:e} over {pairs} pairs", order.max_violation));
    r.line(format!(
        "decay: worst fitted rate = {} (certified {}) over window [{}, {}]",
        decay.worst_rate, cert.rate, decay.window.0, decay.window.1
    ));
    r.provenance["integrator"] = json!({"method": "RK4", "step": step});
    r.provenance["fit_window"] = json!(decay.window);
    r.result = json!({"certificate": cert, "pointwise": lmi, "order": order, "decay": decay});
    if lmi.max_eig > AUDIT_TOL {
        return Ok(r.fail(Verdict::NotCertified, "audit_failed", "pointwise LMI positive"));
    }
    if order.max_violation > ORDER_TOL {
        return Ok(r.fail(Verdict::NotCertified, "order_violated", "trajectory order not preserved"));
    }
    if !decay.pass {
        return Ok(r.fail(Verdict::NotCertified, "decay_below_rate", "fitted decay below 0.95 × certified rate"));
    }
    r.verdict = Verdict::Certified;
    Ok(r)
}
