//! Scoring of alerts against maintenance logs and expert observations.
//!
//! An alert is a true positive when an event with the same diagnosis falls in
//! its failure window. Each event is credited to at most one alert (the
//! earliest whose window contains it); one alert may explain several events.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{IbAlert, RootCause};
use crate::series::{from_ordinal, iso_date, to_ordinal, Ordinal};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("{what} are not in chronological order at position {position}")]
    Order { what: &'static str, position: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Maintenance,
    ExpertObservation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnosis {
    SuctionValveOrSealing,
    DischargeValve,
    Other,
}

impl Diagnosis {
    pub fn matches(self, cause: RootCause) -> bool {
        matches!(
            (self, cause),
            (Diagnosis::SuctionValveOrSealing, RootCause::SuctionValveOrSealing)
                | (Diagnosis::DischargeValve, RootCause::DischargeValve)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    pub kind: EventKind,
    #[serde(with = "iso_date")]
    pub start: Ordinal,
    /// Last day of an observation interval; `None` for single-day events.
    #[serde(with = "iso_date::option")]
    pub end: Option<Ordinal>,
    pub diagnosis: Diagnosis,
    pub note: String,
}

impl GroundTruthEvent {
    pub fn last_day(&self) -> Ordinal {
        self.end.unwrap_or(self.start)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "label", rename_all = "snake_case")]
pub enum MatchLabel {
    TruePositive { alert: IbAlert, events: Vec<GroundTruthEvent> },
    FalsePositive { alert: IbAlert },
    FalseNegative { event: GroundTruthEvent },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub r#fn: usize,
}

/// Chronological order used by [`match_alerts`]: start day, then end day.
pub fn sort_events(events: &mut [GroundTruthEvent]) {
    events.sort_by(|a, b| {
        (a.start, a.last_day(), a.kind, a.diagnosis, &a.note).cmp(&(b.start, b.last_day(), b.kind, b.diagnosis, &b.note))
    });
}

/// Labels every alert TP or FP and every unexplained event FN.
///
/// Output lists the alerts in input order followed by the missed events.
pub fn match_alerts(alerts: &[IbAlert], events: &[GroundTruthEvent]) -> Result<Vec<MatchLabel>, EvaluationError> {
    if let Some(p) = alerts.windows(2).position(|w| w[1].date < w[0].date) {
        return Err(EvaluationError::Order { what: "alerts", position: p + 1 });
    }
    if let Some(p) = events.windows(2).position(|w| w[1].start < w[0].start) {
        return Err(EvaluationError::Order { what: "events", position: p + 1 });
    }
    if let Some(e) = events.iter().find(|e| e.last_day() < e.start) {
        return Err(EvaluationError::Parse {
            line: 0,
            msg: format!("event ends ({}) before it starts ({})", from_ordinal(e.last_day()), from_ordinal(e.start)),
        });
    }

    let mut credited: Vec<Vec<GroundTruthEvent>> = vec![Vec::new(); alerts.len()];
    let mut missed = Vec::new();
    for event in events {
        let hit = alerts.iter().position(|a| {
            event.diagnosis.matches(a.root_cause) && a.failure_window.overlaps(event.start, event.last_day())
        });
        match hit {
            Some(i) => credited[i].push(event.clone()),
            None => missed.push(MatchLabel::FalseNegative { event: event.clone() }),
        }
    }
    let mut labels: Vec<MatchLabel> = alerts
        .iter()
        .zip(credited)
        .map(|(alert, events)| {
            if events.is_empty() {
                MatchLabel::FalsePositive { alert: alert.clone() }
            } else {
                MatchLabel::TruePositive { alert: alert.clone(), events }
            }
        })
        .collect();
    labels.extend(missed);
    Ok(labels)
}

pub fn counts(labels: &[MatchLabel]) -> Counts {
    labels.iter().fold(Counts::default(), |mut c, l| {
        match l {
            MatchLabel::TruePositive { .. } => c.tp += 1,
            MatchLabel::FalsePositive { .. } => c.fp += 1,
            MatchLabel::FalseNegative { .. } => c.r#fn += 1,
        }
        c
    })
}

/// `(precision, recall)`; a ratio with a zero denominator is `None`.
pub fn precision_recall(labels: &[MatchLabel]) -> (Option<f64>, Option<f64>) {
    let c = counts(labels);
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    (ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.r#fn))
}

#[derive(Debug, Deserialize)]
struct EventRow {
    kind: String,
    start: String,
    end: String,
    diagnosis: String,
    note: String,
}

fn parse_enum<T: for<'de> Deserialize<'de>>(text: &str, line: u64, what: &str) -> Result<T, EvaluationError> {
    serde_json::from_value(serde_json::Value::String(text.to_string())).map_err(|_| EvaluationError::Parse {
        line,
        msg: format!("unknown {what} {text:?}"),
    })
}

/// Reads `kind,start,end,diagnosis,note` CSV; an empty `end` means a single day.
pub fn read_events<R: Read>(reader: R) -> Result<Vec<GroundTruthEvent>, EvaluationError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut events = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row: EventRow = record.deserialize(Some(&headers)).map_err(|e| EvaluationError::Parse {
            line,
            msg: e.to_string(),
        })?;
        let date = |s: &str| {
            to_ordinal(s).map_err(|_| EvaluationError::Parse {
                line,
                msg: format!("invalid date {s:?}"),
            })
        };
        let event = GroundTruthEvent {
            kind: parse_enum(&row.kind, line, "event kind")?,
            start: date(&row.start)?,
            end: if row.end.is_empty() { None } else { Some(date(&row.end)?) },
            diagnosis: parse_enum(&row.diagnosis, line, "diagnosis")?,
            note: row.note,
        };
        if event.last_day() < event.start {
            return Err(EvaluationError::Parse {
                line,
                msg: "end date precedes start date".into(),
            });
        }
        events.push(event);
    }
    Ok(events)
}

pub fn load_events(path: impl AsRef<Path>) -> Result<Vec<GroundTruthEvent>, EvaluationError> {
    read_events(File::open(path)?)
}

pub fn read_alerts<R: Read>(reader: R) -> Result<Vec<IbAlert>, EvaluationError> {
    Ok(serde_json::from_reader(reader)?)
}

pub fn load_alerts(path: impl AsRef<Path>) -> Result<Vec<IbAlert>, EvaluationError> {
    read_alerts(std::io::BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{classify, EventClass, FailureWindow, Thresholds};

    fn alert(date: Ordinal, window: (Ordinal, Ordinal), cause: RootCause) -> IbAlert {
        IbAlert {
            date,
            mse: 5e-5,
            l_max: 2 * (window.0 - date) as usize,
            class: classify(5e-5, &Thresholds::default()),
            failure_window: FailureWindow { start: window.0, end: window.1 },
            root_cause: cause,
            group_id: 0,
            group_size: 1,
            params: None,
        }
    }

    fn event(start: Ordinal, end: Option<Ordinal>, diagnosis: Diagnosis) -> GroundTruthEvent {
        GroundTruthEvent {
            kind: if end.is_some() { EventKind::ExpertObservation } else { EventKind::Maintenance },
            start,
            end,
            diagnosis,
            note: String::new(),
        }
    }

    #[test]
    fn examples() {
        let labels = match_alerts(&[], &[event(5, None, Diagnosis::Other)]).unwrap();
        assert!(matches!(labels[..], [MatchLabel::FalseNegative { .. }]));
        assert_eq!(precision_recall(&labels), (None, Some(0.0)));

        let a = alert(50, (100, 160), RootCause::DischargeValve);
        let labels = match_alerts(&[a.clone()], &[event(130, None, Diagnosis::DischargeValve)]).unwrap();
        assert!(matches!(labels[..], [MatchLabel::TruePositive { .. }]));
        assert_eq!(precision_recall(&labels), (Some(1.0), Some(1.0)));

        // Wrong component or outside the window.
        let labels = match_alerts(&[a.clone()], &[event(130, None, Diagnosis::SuctionValveOrSealing)]).unwrap();
        assert_eq!(counts(&labels), Counts { tp: 0, fp: 1, r#fn: 1 });
        let labels = match_alerts(&[a.clone()], &[event(161, None, Diagnosis::DischargeValve)]).unwrap();
        assert_eq!(counts(&labels), Counts { tp: 0, fp: 1, r#fn: 1 });
        let labels = match_alerts(&[a], &[event(161, None, Diagnosis::Other)]).unwrap();
        assert_eq!(counts(&labels), Counts { tp: 0, fp: 1, r#fn: 1 });
    }

    #[test]
    fn intervals_match_on_overlap() {
        let a = alert(50, (100, 160), RootCause::SuctionValveOrSealing);
        let labels = match_alerts(&[a.clone()], &[event(80, Some(100), Diagnosis::SuctionValveOrSealing)]).unwrap();
        assert_eq!(counts(&labels).tp, 1);
        let labels = match_alerts(&[a], &[event(80, Some(99), Diagnosis::SuctionValveOrSealing)]).unwrap();
        assert_eq!(counts(&labels).tp, 0);
    }

    #[test]
    fn earliest_window_wins() {
        let first = alert(10, (40, 100), RootCause::DischargeValve);
        let second = alert(20, (50, 110), RootCause::DischargeValve);
        let labels = match_alerts(&[first, second], &[event(60, None, Diagnosis::DischargeValve)]).unwrap();
        assert!(matches!(&labels[0], MatchLabel::TruePositive { alert, .. } if alert.date == 10));
        assert!(matches!(&labels[1], MatchLabel::FalsePositive { alert } if alert.date == 20));
    }

    #[test]
    fn order_errors() {
        let a = alert(50, (100, 160), RootCause::DischargeValve);
        let b = alert(40, (100, 160), RootCause::DischargeValve);
        assert!(matches!(match_alerts(&[a, b], &[]), Err(EvaluationError::Order { what: "alerts", .. })));
        let evs = [event(9, None, Diagnosis::Other), event(3, None, Diagnosis::Other)];
        assert!(matches!(match_alerts(&[], &evs), Err(EvaluationError::Order { what: "events", .. })));
    }

    #[test]
    fn event_csv() {
        let text = "kind,start,end,diagnosis,note\n\
                    maintenance,2020-04-14,,suction_valve_or_sealing,SV leak\n\
                    expert_observation,2021-07-06,2021-08-02,discharge_valve,\"DV leakage, mild\"\n";
        let events = read_events(text.as_bytes()).unwrap();
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].end, None);
        assert_eq!(events[1].end, Some(to_ordinal("2021-08-02").unwrap()));
        assert_eq!(events[1].note, "DV leakage, mild");

        let bad = "kind,start,end,diagnosis,note\nmaintenance,2020-04-14,,valve,x\n";
        assert!(matches!(read_events(bad.as_bytes()), Err(EvaluationError::Parse { line: 2, .. })));
        let bad = "kind,start,end,diagnosis,note\nmaintenance,2020-04-14,2020-04-01,other,x\n";
        assert!(matches!(read_events(bad.as_bytes()), Err(EvaluationError::Parse { line: 2, .. })));
    }

    #[test]
    fn alerts_json_round_trip() {
        let alerts = vec![alert(737_665, (737_700, 737_755), RootCause::SuctionValveOrSealing)];
        let text = serde_json::to_string(&alerts).unwrap();
        assert_eq!(read_alerts(text.as_bytes()).unwrap(), alerts);
        assert_eq!(alerts[0].class, EventClass::Critical);
    }

    #[test]
    fn compressor_log_fixture() {
        let alerts = read_alerts(include_str!("../../../fixtures/compressor_alerts.json").as_bytes()).unwrap();
        let events = read_events(include_str!("../../../fixtures/compressor_events.csv").as_bytes()).unwrap();
        assert_eq!((alerts.len(), events.len()), (6, 7));
        let labels = match_alerts(&alerts, &events).unwrap();
        assert_eq!(counts(&labels), Counts { tp: 4, fp: 2, r#fn: 1 });
        let fp: Vec<String> = labels
            .iter()
            .filter_map(|l| match l {
                MatchLabel::FalsePositive { alert } => Some(from_ordinal(alert.date)),
                _ => None,
            })
            .collect();
        assert_eq!(fp, ["2020-12-14", "2021-07-15"]);
        let (p, r) = precision_recall(&labels);
        assert!((p.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r, Some(0.8));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_alerts() -> impl Strategy<Value = Vec<IbAlert>> {
            prop::collection::vec((0i64..5, 2usize..60, any::<bool>()), 0..12).prop_map(|specs| {
                let mut day = 1000;
                specs
                    .into_iter()
                    .map(|(step, l, sv)| {
                        day += step;
                        let cause = if sv { RootCause::SuctionValveOrSealing } else { RootCause::DischargeValve };
                        alert(day, (day + (l / 2) as i64, day + 90), cause)
                    })
                    .collect()
            })
        }

        fn arb_events() -> impl Strategy<Value = Vec<GroundTruthEvent>> {
            prop::collection::vec((1000i64..1200, prop::option::of(0i64..40), 0usize..3), 0..12).prop_map(|specs| {
                specs
                    .into_iter()
                    .map(|(start, len, d)| {
                        let diagnosis = [Diagnosis::SuctionValveOrSealing, Diagnosis::DischargeValve, Diagnosis::Other][d];
                        event(start, len.map(|l| start + l), diagnosis)
                    })
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn labels_partition_inputs(alerts in arb_alerts(), mut events in arb_events()) {
                sort_events(&mut events);
                let labels = match_alerts(&alerts, &events).unwrap();
                let c = counts(&labels);
                prop_assert_eq!(c.tp + c.fp, alerts.len());
                let credited: usize = labels.iter().map(|l| match l {
                    MatchLabel::TruePositive { events, .. } => events.len(),
                    _ => 0,
                }).sum();
                prop_assert_eq!(credited + c.r#fn, events.len());
                let (p, r) = precision_recall(&labels);
                for v in [p, r].into_iter().flatten() {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }

            #[test]
            fn event_order_does_not_matter(alerts in arb_alerts(), events in arb_events(), seed in any::<u64>()) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let mut sorted = events.clone();
                sort_events(&mut sorted);
                let mut shuffled = events;
                shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                sort_events(&mut shuffled);
                prop_assert_eq!(match_alerts(&alerts, &sorted).unwrap(), match_alerts(&alerts, &shuffled).unwrap());
            }
        }
    }
}
