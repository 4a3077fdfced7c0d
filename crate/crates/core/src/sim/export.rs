//! CSV export of logged panels. The oracle block goes to a separate sidecar.

use std::io::{Read, Write};

use super::{ActionClass, LoggedPanel, LoggedRow, MessageLabels, RawAction, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::features::{ClinicalFeatures, Feature};

/// Header of the panel CSV, in column order.
pub fn panel_header() -> Vec<String> {
    let mut h: Vec<String> = ["patient_id", "day", "action_class", "reward"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(Feature::ALL.iter().map(|f| f.name().to_string()));
    h.extend(MessageLabels::NAMES.iter().map(|s| s.to_string()));
    h.extend((0..EMBEDDING_DIM).map(|i| format!("embedding_{i}")));
    h
}

pub fn oracle_header() -> Vec<String> {
    let mut h: Vec<String> = vec!["patient_id".into(), "day".into()];
    h.extend(
        ActionClass::ALL
            .iter()
            .map(|c| format!("propensity_{}", c.name())),
    );
    h.extend(
        ActionClass::ALL
            .iter()
            .map(|c| format!("effect_{}", c.name())),
    );
    h.push("control_response".into());
    h.push("responsiveness".into());
    h
}

fn num(v: f64) -> String {
    // Shortest representation that round-trips.
    format!("{v:?}")
}

pub fn write_panel_csv<W: Write>(panel: &LoggedPanel, out: W) -> Result<()> {
    write_rows_csv(panel.rows(), out)
}

pub fn write_rows_csv<W: Write>(rows: &[LoggedRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(panel_header())?;
    for r in rows {
        let mut rec: Vec<String> = vec![
            r.patient_id.to_string(),
            r.day.to_string(),
            r.action.class_label.name().to_string(),
            num(r.reward),
        ];
        rec.extend(r.features.values().iter().map(|&v| num(v)));
        rec.extend(
            r.action
                .labels
                .to_array()
                .iter()
                .map(|&b| if b { "1" } else { "0" }.to_string()),
        );
        rec.extend(r.action.embedding.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_oracle_csv<W: Write>(panel: &LoggedPanel, out: W) -> Result<()> {
    let oracle = panel.oracle()?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(oracle_header())?;
    for (r, o) in panel.rows().iter().zip(oracle) {
        let mut rec = vec![r.patient_id.to_string(), r.day.to_string()];
        rec.extend(o.propensities.iter().map(|&v| num(v)));
        rec.extend(o.effects.iter().map(|&v| num(v)));
        rec.push(num(o.control_response));
        rec.push(num(o.responsiveness));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::InconsistentInput(format!("cannot parse {what} from {s:?}")))
}

/// Reads rows written by [`write_panel_csv`].
pub fn read_panel_csv<R: Read>(input: R) -> Result<Vec<LoggedRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != panel_header() {
        return Err(Error::InconsistentInput(
            "panel CSV header does not match the expected columns".into(),
        ));
    }
    let nf = Feature::ALL.len();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let features = ClinicalFeatures::from_values(
            (0..nf)
                .map(|j| parse::<f64>(field(4 + j), "feature"))
                .collect::<Result<_>>()?,
        )?;
        let mut labels = [false; 11];
        for (j, l) in labels.iter_mut().enumerate() {
            *l = field(4 + nf + j) == "1";
        }
        let mut embedding = [0.0f32; EMBEDDING_DIM];
        for (j, e) in embedding.iter_mut().enumerate() {
            *e = parse(field(4 + nf + 11 + j), "embedding")?;
        }
        rows.push(LoggedRow {
            patient_id: parse(field(0), "patient_id")?,
            day: parse(field(1), "day")?,
            action: RawAction {
                class_label: ActionClass::from_name(field(2))?,
                labels: MessageLabels::from_array(labels),
                embedding,
            },
            reward: parse(field(3), "reward")?,
            features,
        });
    }
    Ok(rows)
}
