use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use lppl_pm::backtest::{run_backtest, BacktestReport};
use lppl_pm::changepoint::{merge_detections, run_dual_detectors_on, write_detections, ThresholdPolicy};
use lppl_pm::detector::{classify, failure_window, is_ib_point, predict_root_cause, IbAlert, IbDecision, Thresholds};
use lppl_pm::evaluation::{
    counts, load_alerts, load_events, match_alerts, precision_recall, sort_events, GroundTruthEvent, MatchLabel,
};
use lppl_pm::fitter::fit_best;
use lppl_pm::model::LpplParams;
use lppl_pm::series::{from_ordinal, load_series, save_series, to_ordinal, TimeSeries};
use lppl_pm::synthetic::{gen_lppl_series, SynthSpec};
use serde::Serialize;

use crate::error::CliError;
use crate::{BacktestArgs, BaselineArgs, EvaluateArgs, FitArgs, InputArgs, SynthArgs};

fn load(input: &InputArgs) -> Result<TimeSeries, CliError> {
    load_series(&input.input, input.gap_policy).map_err(|e| CliError::Data(format!("{}: {e}", input.input.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::io(path, e))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| CliError::io(path, e))
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::io(path, e)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_fits(path: &Path, report: &BacktestReport) -> Result<(), CliError> {
    let err = csv_error(path);
    let mut wtr = csv::Writer::from_writer(create(path)?);
    wtr.write_record(["date", "mse", "l_max", "ib_flag"]).map_err(&err)?;
    for day in &report.fits {
        wtr.write_record([
            from_ordinal(day.date),
            opt(day.fit.map(|f| f.mse)),
            opt(day.fit.map(|f| f.params.l_max)),
            u8::from(day.is_ib()).to_string(),
        ])
        .map_err(&err)?;
    }
    wtr.flush().map_err(|e| CliError::io(path, e))
}

fn write_plot(path: &Path, series: &TimeSeries, report: &BacktestReport) -> Result<(), CliError> {
    let err = csv_error(path);
    let mut wtr = csv::Writer::from_writer(create(path)?);
    wtr.write_record(["date", "value", "raw_alert", "alert_class", "root_cause", "window_start", "window_end"])
        .map_err(&err)?;
    let mut raw = report.raw_alerts.iter().peekable();
    let mut grouped = report.grouped_alerts.iter().peekable();
    for p in series.points() {
        let is_raw = raw.next_if(|a| a.date == p.date).is_some();
        let group = grouped.next_if(|a| a.date == p.date);
        let text = |v: Option<String>| v.unwrap_or_default();
        wtr.write_record([
            from_ordinal(p.date),
            p.value.to_string(),
            u8::from(is_raw).to_string(),
            text(group.map(|a| enum_name(&a.class))),
            text(group.map(|a| enum_name(&a.root_cause))),
            text(group.map(|a| from_ordinal(a.failure_window.start))),
            text(group.map(|a| from_ordinal(a.failure_window.end))),
        ])
        .map_err(&err)?;
    }
    wtr.flush().map_err(|e| CliError::io(path, e))
}

/// snake_case name of a unit enum variant, as used in the JSON output.
fn enum_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub fn backtest(args: &BacktestArgs, seed: u64) -> Result<(), CliError> {
    let series = load(&args.input)?;
    let report = run_backtest(&series, &args.config(seed))?;
    fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;

    let alerts: Vec<IbAlert> = report
        .grouped_alerts
        .iter()
        .map(|a| IbAlert { params: None, ..a.clone() })
        .collect();
    write_json(&args.out_dir.join("alerts.json"), &alerts)?;
    write_fits(&args.out_dir.join("fits.csv"), &report)?;
    write_plot(&args.out_dir.join("plot.csv"), &series, &report)?;

    println!(
        "{} days evaluated, {} raw alerts, {} grouped alerts",
        report.fits.len(),
        report.raw_alerts.len(),
        report.grouped_alerts.len()
    );
    for a in &alerts {
        println!(
            "{}  mse={:.3e}  l_max={}  {}  window {}..{}  {}",
            from_ordinal(a.date),
            a.mse,
            a.l_max,
            enum_name(&a.class),
            from_ordinal(a.failure_window.start),
            from_ordinal(a.failure_window.end),
            enum_name(&a.root_cause)
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct FitReport {
    date: String,
    params: LpplParams,
    mse: f64,
    converged: bool,
    decision: IbDecision,
    alert: Option<IbAlert>,
}

pub fn fit(args: &FitArgs, seed: u64) -> Result<(), CliError> {
    let series = load(&args.input)?;
    let end_index = match &args.end_date {
        None => series.len() - 1,
        Some(d) => {
            let ord = to_ordinal(d).map_err(|e| CliError::Usage(e.to_string()))?;
            series
                .index_of(ord)
                .ok_or_else(|| CliError::Usage(format!("{d} is outside the series")))?
        }
    };
    let constraints = args.fit.constraints(seed);
    let fit = fit_best(&series, end_index, &constraints, args.fit.transform)?;
    let date = series.points()[end_index].date;
    let decision = is_ib_point(&fit);
    let thresholds = Thresholds::new(args.alerts.critical, args.alerts.monitoring)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let alert = match decision {
        IbDecision::Ib(sign) => Some(IbAlert {
            date,
            mse: fit.mse,
            l_max: fit.params.l_max,
            class: classify(fit.mse, &thresholds),
            failure_window: failure_window(date, fit.params.l_max, args.alerts.horizon)
                .map_err(|e| CliError::Usage(e.to_string()))?,
            root_cause: predict_root_cause(sign),
            group_id: 0,
            group_size: 1,
            params: None,
        }),
        IbDecision::NotIb(_) => None,
    };
    let report = FitReport {
        date: from_ordinal(date),
        params: fit.params,
        mse: fit.mse,
        converged: fit.converged,
        decision,
        alert,
    };
    if args.json {
        let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?;
        println!("{text}");
        return Ok(());
    }
    let p = &report.params;
    println!("date={} l_max={} mse={:e} converged={}", report.date, p.l_max, report.mse, report.converged);
    println!("A={} B={} m={} C1={} C2={} omega={}", p.a, p.b, p.m, p.c1, p.c2, p.omega);
    let (c, phi) = p.amplitude_phase();
    println!("C={c} phi={phi}");
    match (&report.decision, &report.alert) {
        (IbDecision::Ib(sign), Some(a)) => println!(
            "decision=ib trend={} class={} window={}..{} root_cause={}",
            enum_name(sign),
            enum_name(&a.class),
            from_ordinal(a.failure_window.start),
            from_ordinal(a.failure_window.end),
            enum_name(&a.root_cause)
        ),
        (IbDecision::NotIb(reason), _) => println!("decision=not_ib reason={}", enum_name(reason)),
        _ => {}
    }
    Ok(())
}

pub fn synth(args: &SynthArgs, seed: u64) -> Result<(), CliError> {
    let params = LpplParams {
        l_max: args.length,
        a: args.a,
        b: args.b,
        m: args.m,
        c1: args.c1,
        c2: args.c2,
        omega: args.omega,
    };
    let spec = SynthSpec {
        prefix: args.prefix,
        prefix_sigma: args.prefix_noise,
        start: to_ordinal(&args.start).map_err(|e| CliError::Usage(e.to_string()))?,
        transform: args.transform,
        ..SynthSpec::new(params, args.noise, seed)
    };
    let (series, truth) = gen_lppl_series(&spec)?;
    save_series(&series, &args.out).map_err(|e| CliError::io(&args.out, e))?;
    let truth_path = args.truth.clone().unwrap_or_else(|| {
        let mut p = PathBuf::from(&args.out);
        p.set_extension("truth.json");
        p
    });
    write_json(&truth_path, &truth)?;
    println!("{} days written, initial breakdown on {}", series.len(), from_ordinal(truth.ib_day));
    Ok(())
}

pub fn baseline(args: &BaselineArgs) -> Result<(), CliError> {
    let series = load(&args.input)?;
    let mut values = args.transform.observations(&series)?;
    if args.negate {
        values.iter_mut().for_each(|v| *v = -*v);
    }
    let policy = match args.threshold {
        Some(t) => ThresholdPolicy::Fixed(t),
        None => ThresholdPolicy::percentile(args.percentile),
    };
    let (left, right) = run_dual_detectors_on(&series.dates(), &values, policy)?;
    let all = merge_detections(&left, &right);
    write_detections(&all, create(&args.out)?).map_err(|e| CliError::io(&args.out, e))?;
    println!("{} left and {} right detections", left.len(), right.len());
    Ok(())
}

fn alert_window(alert: &IbAlert) -> String {
    format!("{}..{}", from_ordinal(alert.failure_window.start), from_ordinal(alert.failure_window.end))
}

fn event_span(event: &GroundTruthEvent) -> String {
    match event.end {
        Some(end) => format!("{}..{}", from_ordinal(event.start), from_ordinal(end)),
        None => from_ordinal(event.start),
    }
}

fn fmt_ratio(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let mut alerts = load_alerts(&args.alerts).map_err(|e| CliError::Data(format!("{}: {e}", args.alerts.display())))?;
    alerts.sort_by_key(|a| a.date);
    let mut events = load_events(&args.events).map_err(|e| CliError::Data(format!("{}: {e}", args.events.display())))?;
    sort_events(&mut events);
    let labels = match_alerts(&alerts, &events)?;

    println!("{:<5} {:<10}  {:<22}  {:<24}  evidence", "label", "date", "window", "root cause");
    for label in &labels {
        let (tag, date, window, cause, evidence) = match label {
            MatchLabel::TruePositive { alert, events } => (
                "TP",
                alert.date,
                alert_window(alert),
                enum_name(&alert.root_cause),
                events.iter().map(event_span).collect::<Vec<_>>().join(", "),
            ),
            MatchLabel::FalsePositive { alert } => {
                ("FP", alert.date, alert_window(alert), enum_name(&alert.root_cause), String::new())
            }
            MatchLabel::FalseNegative { event } => {
                ("FN", event.start, String::new(), enum_name(&event.diagnosis), event_span(event))
            }
        };
        println!("{tag:<5} {:<10}  {window:<22}  {cause:<24}  {evidence}", from_ordinal(date));
    }
    let c = counts(&labels);
    let (precision, recall) = precision_recall(&labels);
    println!(
        "TP={} FP={} FN={} precision={} recall={}",
        c.tp,
        c.fp,
        c.r#fn,
        fmt_ratio(precision),
        fmt_ratio(recall)
    );
    if let Some(path) = &args.labels_out {
        write_json(path, &labels)?;
    }
    Ok(())
}
