//! Command-line driver. Works directly on the event store in `--data`, so no
//! server is needed. Exit codes: 0 ok, 1 domain or storage error, 2 usage.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lofm_core::matrix::{self, LofmMatrix};
use lofm_core::ml::Hyperparams;
use lofm_core::num::fmt_num;
use lofm_core::pipeline::{render_chart_svg, ChartSpec};
use lofm_core::rules::{default_ruleset, parse_ruleset, Ruleset};
use lofm_core::sim::{run_experiment, ExperimentReport, MlSignal, SimConfig};
use lofm_core::tracker::TargetSpec;
use lofm_core::trust::{Ratio, ScoreOptions};
use lofm_core::Endpoint;
use serde::Serialize;

use crate::app::{parse_stage, Lofm, DEFAULT_SEED};
use crate::csv_io;
use crate::error::{AppError, ErrorKind};
use crate::service::{self, ServeConfig};
use crate::state::Settings;

#[derive(Parser, Debug)]
#[command(
    name = "lofm",
    version,
    about = "Leap-of-faith matrix pipeline: ingest, validate, train, select, track, evaluate"
)]
pub struct Cli {
    /// Store directory (event log and snapshot).
    #[arg(long, global = true, env = "LOFM_DATA", default_value = "lofm-data")]
    pub data: PathBuf,
    /// Timestamp recorded on new events (RFC 3339). Defaults to now.
    #[arg(long, global = true, env = "LOFM_AT")]
    pub at: Option<DateTime<Utc>>,
    /// Ruleset file to use instead of the built-in one.
    #[arg(long, global = true)]
    pub rules: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
    /// Idempotency key for the write this command performs.
    #[arg(long, global = true)]
    pub key: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    Json,
    Svg,
}

#[derive(Args, Debug)]
pub struct Who {
    #[arg(long, short)]
    pub participant: String,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Register a participant.
    Register {
        #[command(flatten)]
        who: Who,
        /// Coverage percent a source must reach for a day to count.
        #[arg(long, default_value_t = 70.0)]
        threshold: f64,
        /// Required source (repeatable); none means every source seen.
        #[arg(long = "source")]
        sources: Vec<String>,
    },
    /// Ingest a long-format observation CSV. Unknown participants are
    /// registered unless --participant restricts the file to one.
    Ingest {
        file: PathBuf,
        #[arg(long, short)]
        participant: Option<String>,
    },
    /// Coverage report over a period (default: all observed days).
    Quality {
        #[command(flatten)]
        who: Who,
        #[arg(long)]
        from: Option<NaiveDate>,
        #[arg(long)]
        to: Option<NaiveDate>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Set the endpoint the model predicts (tst_min or sws_min).
    Objective {
        #[command(flatten)]
        who: Who,
        objective: Endpoint,
    },
    /// Confirm the baseline window or exclude flagged days from it.
    Baseline {
        #[command(subcommand)]
        action: BaselineAction,
    },
    /// Validation pack (summary, narrative, chart) for one metric.
    Validate {
        #[command(flatten)]
        who: Who,
        #[arg(long)]
        metric: String,
    },
    /// Train the participant's model and build the matrix.
    Train {
        #[command(flatten)]
        who: Who,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        trees: Option<usize>,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        min_leaf: Option<usize>,
        #[arg(long)]
        subsample: Option<f64>,
    },
    /// Print the participant's model importances as CSV.
    Importances {
        #[command(flatten)]
        who: Who,
    },
    /// Show the matrix. With --importances, build one from an external
    /// importance CSV instead of the trained model (not recorded).
    Matrix {
        #[command(flatten)]
        who: Who,
        #[arg(long)]
        importances: Option<PathBuf>,
    },
    /// Choose up to three interventions from the matrix.
    Select {
        #[command(flatten)]
        who: Who,
        #[arg(long = "choice", required = true)]
        choices: Vec<String>,
    },
    /// Set targets, e.g. --target "caffeine_mg <= 100" --target "bedtime_min window 22:30-23:00".
    Targets {
        #[command(flatten)]
        who: Who,
        #[arg(long = "target")]
        targets: Vec<TargetSpec>,
        /// Day the targets are agreed; tracking starts the day after.
        #[arg(long)]
        set_on: Option<NaiveDate>,
    },
    /// Daily tracker status for a date.
    Track {
        #[command(flatten)]
        who: Who,
        #[arg(long)]
        date: NaiveDate,
        /// Append the status to the audit log.
        #[arg(long)]
        record: bool,
    },
    /// Cohort trust index table (CSV in text mode).
    Metrics {
        #[arg(long, default_value = "intention")]
        stage: String,
        #[arg(long)]
        include_mandatory: bool,
        /// Append the table to the audit log.
        #[arg(long)]
        record: bool,
    },
    /// Cohort outcome correlation table (CSV in text mode).
    Doti {
        #[arg(long)]
        include_mandatory: bool,
        #[arg(long)]
        record: bool,
    },
    /// Run a synthetic cohort end to end.
    Simulate(SimArgs),
    /// Render a matrix or chart-spec JSON file.
    Render { file: PathBuf },
    /// Print the active ruleset.
    Rules,
    /// Serve the HTTP API over the store.
    Serve {
        #[arg(long, env = "LOFM_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        /// Static bearer token required on every request.
        #[arg(long, env = "LOFM_TOKEN", hide_env_values = true)]
        token: Option<String>,
    },
}

#[derive(Subcommand, Debug)]
pub enum BaselineAction {
    Confirm {
        #[command(flatten)]
        who: Who,
        #[arg(long)]
        from: Option<NaiveDate>,
        #[arg(long)]
        to: Option<NaiveDate>,
    },
    Exclude {
        #[command(flatten)]
        who: Who,
        #[arg(long = "date", required = true)]
        dates: Vec<NaiveDate>,
        #[arg(long)]
        reason: String,
    },
}

#[derive(Args, Debug)]
pub struct SimArgs {
    /// Start from a JSON config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the placebo-only preset.
    #[arg(long)]
    placebo_null: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    participants: Option<usize>,
    #[arg(long)]
    baseline_days: Option<usize>,
    #[arg(long)]
    intervention_days: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    follow_prob: Option<f64>,
    #[arg(long)]
    ml_fidelity: Option<f64>,
    #[arg(long)]
    rules_fidelity: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    placebo: Option<f64>,
    #[arg(long)]
    sensitivity_scale: Option<f64>,
    #[arg(long)]
    objective: Option<Endpoint>,
    #[arg(long, value_parser = parse_ml_signal)]
    ml_signal: Option<MlSignal>,
    #[arg(long)]
    include_mandatory: bool,
    /// Write observations, tables and the full report into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_ml_signal(s: &str) -> Result<MlSignal, String> {
    match s {
        "truth" => Ok(MlSignal::Truth),
        "trained" => Ok(MlSignal::Trained),
        _ => Err(format!("`{s}` is not truth or trained")),
    }
}

impl SimArgs {
    fn config(&self) -> Result<SimConfig, AppError> {
        let mut c = match (&self.config, self.placebo_null) {
            (Some(p), _) => serde_json::from_str(&read(p)?)
                .map_err(|e| AppError::bad_request("invalid-config", format!("{}: {e}", p.display())))?,
            (None, true) => SimConfig::placebo_null(),
            (None, false) => SimConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => { $( if let Some(v) = self.$flag { c.$field = v; } )* };
        }
        set!(seed => seed, participants => participants, baseline_days => baseline_days,
             intervention_days => intervention_days, lambda => lambda, temperature => temperature,
             follow_prob => follow_prob, ml_fidelity => ml_fidelity, rules_fidelity => rules_fidelity,
             noise => noise_sd, placebo => placebo, sensitivity_scale => sensitivity_scale,
             objective => objective, ml_signal => ml_signal);
        if self.include_mandatory {
            c.include_mandatory = true;
        }
        Ok(c)
    }
}

fn read(path: &Path) -> Result<String, AppError> {
    fs::read_to_string(path).map_err(|e| AppError::bad_request("unreadable-file", format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, body: &str) -> Result<(), AppError> {
    fs::write(path, body).map_err(|e| AppError::new(ErrorKind::Internal, "io", format!("{}: {e}", path.display())))
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).unwrap_or_default();
    s.push('\n');
    s
}

fn ratio(r: Ratio) -> String {
    r.value().map_or_else(|| "undefined".to_string(), |v| format!("{v:.2}"))
}

fn no_svg(what: &str) -> AppError {
    AppError::bad_request("unsupported-format", format!("{what} has no svg form"))
}

/// Parses argv and runs it, printing to stdout/stderr. Returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(out.as_bytes());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e.kind {
                ErrorKind::BadRequest => 2,
                _ => 1,
            }
        }
    }
}

fn ruleset(cli: &Cli) -> Result<Ruleset, AppError> {
    match &cli.rules {
        None => Ok(default_ruleset()),
        Some(p) => parse_ruleset(&read(p)?)
            .map_err(|e| AppError::bad_request("invalid-rules", format!("{}: {e}", p.display()))),
    }
}

fn open(cli: &Cli) -> Result<Lofm, AppError> {
    Ok(Lofm::open(&cli.data)?.with_ruleset(ruleset(cli)?))
}

/// Runs one parsed command and returns what it prints on success.
pub fn run(cli: &Cli) -> Result<String, AppError> {
    let at = cli.at.unwrap_or_else(Utc::now);
    let key = cli.key.as_deref();
    let fmt = cli.format;
    match &cli.command {
        Command::Register { who, threshold, sources } => {
            let settings = Settings { required_sources: sources.clone(), quality_threshold: *threshold };
            let r = open(cli)?.register(&who.participant, settings, at, key)?;
            Ok(match fmt {
                OutputFormat::Json => json(&r),
                _ => format!(
                    "registered {} (quality threshold {}%)\n",
                    r.participant_id,
                    fmt_num(r.settings.quality_threshold)
                ),
            })
        }
        Command::Ingest { file, participant } => {
            let f = fs::File::open(file)
                .map_err(|e| AppError::bad_request("unreadable-file", format!("{}: {e}", file.display())))?;
            let rows = csv_io::read_observations(f).map_err(|e| AppError::bad_request("invalid-csv", e.to_string()))?;
            let r = open(cli)?.ingest(rows, participant.as_deref(), participant.is_none(), at, key)?;
            Ok(match fmt {
                OutputFormat::Json => json(&r),
                _ => {
                    let mut s = format!("accepted {}, rejected {}\n", r.accepted, r.rejected.len());
                    for rej in &r.rejected {
                        let _ = writeln!(s, "  line {}: {}", rej.line, rej.reason);
                    }
                    s
                }
            })
        }
        Command::Quality { who, from, to, threshold } => {
            let q = open(cli)?.quality(&who.participant, *from, *to, *threshold)?;
            Ok(match fmt {
                OutputFormat::Json => json(&q),
                _ => {
                    let verdict = if q.passed { "passed" } else { "failed" };
                    let mut s = format!("{} {}: {verdict} at {}%\n", q.participant_id, q.period, fmt_num(q.threshold));
                    for (src, cov) in &q.per_source_coverage {
                        let _ = writeln!(s, "  {src}: {}%", fmt_num(*cov));
                    }
                    let _ = writeln!(s, "  complete days: {}/{}", q.complete_days, q.days.len());
                    s
                }
            })
        }
        Command::Objective { who, objective } => {
            let o = open(cli)?.set_objective(&who.participant, *objective, at, key)?;
            Ok(match fmt {
                OutputFormat::Json => json(&o),
                _ => format!("{} objective {}\n", o.participant_id, o.objective),
            })
        }
        Command::Baseline { action: BaselineAction::Confirm { who, from, to } } => {
            let w = open(cli)?.confirm_baseline(&who.participant, *from, *to, at, key)?;
            Ok(match fmt {
                OutputFormat::Json => json(&w),
                _ => format!("baseline {}: {} complete days\n", w.window, w.days.len()),
            })
        }
        Command::Baseline { action: BaselineAction::Exclude { who, dates, reason } } => {
            let o = open(cli)?.exclude_days(&who.participant, dates, reason, at, key)?;
            Ok(match fmt {
                OutputFormat::Json => json(&o),
                _ => {
                    let days: Vec<String> = o.excluded.iter().map(ToString::to_string).collect();
                    let mut s = format!("excluded {} day(s): {}\n", days.len(), days.join(", "));
                    for w in &o.warnings {
                        let _ = writeln!(s, "  warning: {w}");
                    }
                    let _ = writeln!(s, "baseline now {} complete days", o.baseline.days.len());
                    s
                }
            })
        }
        Command::Validate { who, metric } => {
            let v = open(cli)?.validation(&who.participant, metric)?;
            Ok(match fmt {
                OutputFormat::Json => json(&v),
                OutputFormat::Svg => render_chart_svg(&v.chart),
                OutputFormat::Text => {
                    let m = &v.summary;
                    let mut s = format!(
                        "{} ({}): mean {}, min {}, max {} over {} days\n",
                        m.metric_id,
                        m.unit,
                        fmt_num(m.mean),
                        fmt_num(m.min),
                        fmt_num(m.max),
                        m.series.len()
                    );
                    if let Some(b) = m.band_shares {
                        let _ = writeln!(s, "  good {}%, warn {}%, violate {}%", b.good, b.warn, b.violate);
                    }
                    let _ = writeln!(s, "{}", m.narrative);
                    s
                }
            })
        }
        Command::Train { who, seed, trees, depth, learning_rate, min_leaf, subsample } => {
            let d = Hyperparams::default();
            let hp = Hyperparams {
                n_trees: trees.unwrap_or(d.n_trees),
                max_depth: depth.unwrap_or(d.max_depth),
                learning_rate: learning_rate.unwrap_or(d.learning_rate),
                min_samples_leaf: min_leaf.unwrap_or(d.min_samples_leaf),
                subsample: subsample.unwrap_or(d.subsample),
            };
            let r = open(cli)?.train(&who.participant, *seed, &hp, at, key)?;
            Ok(match fmt {
                OutputFormat::Json => json(&r),
                _ => {
                    let mut s = format!(
                        "model {} on {} days (objective {}, seed {})\n",
                        r.model_id, r.rows, r.objective, r.seed
                    );
                    if let Some(a) = &r.accuracy {
                        let _ = writeln!(s, "accuracy {}% ({}, k={})", fmt_num(a.accuracy_pct), a.definition, a.folds);
                    }
                    let d = r.demarcations;
                    let _ = writeln!(s, "demarcations t1={} t2={} t3={}", d.t1, d.t2, d.t3);
                    for (f, v) in r.importances.ranked() {
                        let _ = writeln!(s, "  {f:<24} {v:.6}");
                    }
                    for w in &r.warnings {
                        let _ = writeln!(s, "warning: {w}");
                    }
                    s
                }
            })
        }
        Command::Importances { who } => {
            let lofm = open(cli)?;
            let imp = lofm
                .store()
                .state()
                .participant(&who.participant)
                .and_then(|p| p.model.as_ref())
                .map(|m| m.importances.clone())
                .ok_or_else(|| AppError::denied("model-not-trained", "train the participant's model first"))?;
            Ok(match fmt {
                OutputFormat::Json => json(&imp),
                _ => {
                    let mut out = Vec::new();
                    csv_io::write_importances(&mut out, &imp)
                        .map_err(|e| AppError::new(ErrorKind::Internal, "io", e.to_string()))?;
                    String::from_utf8_lossy(&out).into_owned()
                }
            })
        }
        Command::Matrix { who, importances } => {
            let lofm = open(cli)?;
            let (m, warnings) = match importances {
                Some(path) => {
                    let f = fs::File::open(path)
                        .map_err(|e| AppError::bad_request("unreadable-file", format!("{}: {e}", path.display())))?;
                    let (map, rejected) =
                        csv_io::read_importances(f).map_err(|e| AppError::bad_request("invalid-csv", e.to_string()))?;
                    let (m, mut w) = lofm.matrix_from_importances(&who.participant, &map)?;
                    w.extend(
                        rejected.into_iter().map(|r| format!("importance for `{}` rejected: {}", r.feature, r.reason)),
                    );
                    (m, w)
                }
                None => {
                    let rec = lofm.matrix(&who.participant)?;
                    (rec.matrix.clone(), Vec::new())
                }
            };
            for w in warnings {
                eprintln!("warning: {w}");
            }
            Ok(render_matrix(&m, fmt))
        }
        Command::Select { who, choices } => {
            let v = open(cli)?.select(&who.participant, choices, at, key)?;
            Ok(match fmt {
                OutputFormat::Json => json(&v),
                _ => {
                    let mut s = String::new();
                    for c in &v.selection.chosen {
                        let _ = writeln!(s, "chose {} ({} stars, ML {})", c.metric_id, c.stars, c.bucket);
                    }
                    let so = &v.selection.mandatory_sleep_opportunity;
                    let _ = writeln!(
                        s,
                        "mandatory: time in bed {} min (baseline sleep efficiency {}%)",
                        fmt_num(so.time_in_bed_min),
                        fmt_num(so.se_pct)
                    );
                    let _ = writeln!(
                        s,
                        "DIRTI {} (ML {}, rules {})",
                        ratio(v.dirti.ratio),
                        fmt_num2(v.dirti.ml_mean),
                        fmt_num2(v.dirti.rules_mean)
                    );
                    s
                }
            })
        }
        Command::Targets { who, targets, set_on } => {
            let plan = open(cli)?.set_targets(&who.participant, targets, *set_on, at, key)?;
            Ok(match fmt {
                OutputFormat::Json => json(&plan),
                _ => {
                    let mut s = format!("tracking {} from {}\n", plan.participant_id, plan.start);
                    for t in &plan.targets {
                        let _ = writeln!(s, "  {t}");
                    }
                    s
                }
            })
        }
        Command::Track { who, date, record } => {
            let mut lofm = open(cli)?;
            let v = lofm.track(&who.participant, *date)?;
            if *record {
                lofm.record_status(&v.status, at)?;
            }
            Ok(match fmt {
                OutputFormat::Json => json(&v),
                OutputFormat::Svg => v.dashboards.iter().map(render_chart_svg).collect::<Vec<_>>().join("\n"),
                OutputFormat::Text => {
                    let st = &v.status;
                    let mut s = format!("{} {}\n", st.participant_id, st.date);
                    for it in &st.items {
                        let value = it.value.map_or_else(|| "-".to_string(), fmt_num);
                        let status = serde_json::to_value(it.status)
                            .ok()
                            .and_then(|v| v.as_str().map(String::from))
                            .unwrap_or_default();
                        let _ = writeln!(s, "  {:<10} {:<32} {value}", status, it.target);
                    }
                    if let Some(se) = st.rolling_se_pct {
                        let _ = writeln!(
                            s,
                            "  7-day sleep efficiency {}%{}",
                            fmt_num(se),
                            if st.se_alert { " (alert)" } else { "" }
                        );
                    }
                    let _ = writeln!(s, "{}", st.message);
                    s
                }
            })
        }
        Command::Metrics { stage, include_mandatory, record } => {
            let stage = parse_stage(stage)?;
            let opts = ScoreOptions { include_mandatory: *include_mandatory };
            let mut lofm = open(cli)?;
            let t = lofm.cohort_metrics(stage, opts);
            if *record {
                lofm.record_metrics(&t, at)?;
            }
            for sk in &t.skipped {
                eprintln!("skipped {}: {}", sk.participant, sk.reason);
            }
            match fmt {
                OutputFormat::Json => Ok(json(&t)),
                OutputFormat::Text => Ok(csv_io::metrics_csv(&t)),
                OutputFormat::Svg => Err(no_svg("metrics")),
            }
        }
        Command::Doti { include_mandatory, record } => {
            let opts = ScoreOptions { include_mandatory: *include_mandatory };
            let mut lofm = open(cli)?;
            let r = lofm.cohort_doti(opts)?;
            if *record {
                lofm.record_metrics(&r, at)?;
            }
            for sk in &r.skipped {
                eprintln!("skipped {}: {}", sk.participant, sk.reason);
            }
            match fmt {
                OutputFormat::Json => Ok(json(&r)),
                OutputFormat::Text => Ok(csv_io::doti_csv(&r.table)),
                OutputFormat::Svg => Err(no_svg("doti")),
            }
        }
        Command::Simulate(args) => simulate(args, fmt),
        Command::Render { file } => {
            let text = read(file)?;
            if let Ok(m) = LofmMatrix::from_json(&text) {
                return Ok(render_matrix(&m, fmt));
            }
            let spec: ChartSpec = serde_json::from_str(&text).map_err(|e| {
                AppError::bad_request(
                    "unrecognised-input",
                    format!("{} is neither a matrix nor a chart spec: {e}", file.display()),
                )
            })?;
            match fmt {
                OutputFormat::Json => Ok(json(&spec)),
                _ => Ok(render_chart_svg(&spec)),
            }
        }
        Command::Rules => {
            let r = ruleset(cli)?;
            Ok(match fmt {
                OutputFormat::Json => json(&r),
                _ => r.to_string(),
            })
        }
        Command::Serve { port, bind, token } => {
            let cfg = ServeConfig { data: cli.data.clone(), addr: SocketAddr::new(*bind, *port), token: token.clone() };
            let rt = tokio::runtime::Runtime::new()
                .map_err(|e| AppError::new(ErrorKind::Internal, "runtime", e.to_string()))?;
            rt.block_on(service::serve(cfg)).map_err(|e| AppError::new(ErrorKind::Internal, "serve", e.to_string()))?;
            Ok(String::new())
        }
    }
}

fn fmt_num2(v: f64) -> String {
    format!("{v:.2}")
}

fn render_matrix(m: &LofmMatrix, fmt: OutputFormat) -> String {
    let f = match fmt {
        OutputFormat::Text => matrix::Format::Text,
        OutputFormat::Json => matrix::Format::Json,
        OutputFormat::Svg => matrix::Format::Svg,
    };
    matrix::render(m, f)
}

/// Report without the raw observations, which go to a CSV under `--out`.
#[derive(Serialize)]
struct SimSummary<'a> {
    config: &'a SimConfig,
    participants: Vec<SimRow<'a>>,
    doti: &'a Option<lofm_core::trust::DotiTable>,
    mean_importance_spearman: Option<f64>,
}

#[derive(Serialize)]
struct SimRow<'a> {
    participant_id: &'a str,
    chosen: Vec<&'a str>,
    followed: &'a [String],
    dirti: lofm_core::TrustIndex,
    dafti: lofm_core::TrustIndex,
    improvements: &'a std::collections::BTreeMap<Endpoint, f64>,
}

fn summary(r: &ExperimentReport) -> SimSummary<'_> {
    SimSummary {
        config: &r.config,
        participants: r
            .participants
            .iter()
            .map(|p| SimRow {
                participant_id: &p.participant_id,
                chosen: p.selection.chosen.iter().map(|c| c.metric_id.as_str()).collect(),
                followed: &p.followed,
                dirti: p.dirti,
                dafti: p.dafti,
                improvements: &p.improvements,
            })
            .collect(),
        doti: &r.doti,
        mean_importance_spearman: r.mean_importance_spearman,
    }
}

fn sim_text(r: &ExperimentReport) -> String {
    let obj = r.config.objective;
    let mut s =
        format!("simulated {} participants (seed {}, objective {})\n", r.participants.len(), r.config.seed, obj);
    let _ = writeln!(s, "participant,chosen,followed,dirti,dafti,improvement_pct");
    for p in &r.participants {
        let chosen: Vec<&str> = p.selection.chosen.iter().map(|c| c.metric_id.as_str()).collect();
        let imp = p.improvements.get(&obj).map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        let _ = writeln!(
            s,
            "{},{},{},{},{},{imp}",
            p.participant_id,
            chosen.join(";"),
            p.followed.join(";"),
            ratio(p.dirti.ratio),
            ratio(p.dafti.ratio)
        );
    }
    match &r.doti {
        Some(t) => s.push_str(&csv_io::doti_csv(t)),
        None => s.push_str("doti: cohort too small\n"),
    }
    s
}

fn simulate(args: &SimArgs, fmt: OutputFormat) -> Result<String, AppError> {
    let cfg = args.config()?;
    let r = run_experiment(&cfg).map_err(|e| match e {
        lofm_core::sim::SimError::InvalidConfig(m) => AppError::bad_request("invalid-config", m),
        other => AppError::domain("simulation-failed", other.to_string()),
    })?;
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)
            .map_err(|e| AppError::new(ErrorKind::Internal, "io", format!("{}: {e}", dir.display())))?;
        let mut obs = Vec::new();
        csv_io::write_observations(&mut obs, &r.data)
            .map_err(|e| AppError::new(ErrorKind::Internal, "io", e.to_string()))?;
        write_file(&dir.join("observations.csv"), &String::from_utf8_lossy(&obs))?;
        write_file(&dir.join("report.json"), &json(&r))?;
        if let Some(t) = &r.doti {
            write_file(&dir.join("doti.csv"), &csv_io::doti_csv(t))?;
        }
    }
    match fmt {
        OutputFormat::Json => Ok(json(&summary(&r))),
        OutputFormat::Text => Ok(sim_text(&r)),
        OutputFormat::Svg => Err(no_svg("simulate")),
    }
}
