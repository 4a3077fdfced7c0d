use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Readings per day at a 5-minute cadence.
pub const SLOTS_PER_DAY: usize = 288;
/// Days in the state window preceding a decision day.
pub const WINDOW_DAYS: usize = 14;
/// Slots in a two-week state window.
pub const WINDOW_SLOTS: usize = WINDOW_DAYS * SLOTS_PER_DAY;

pub const MIN_READING: f64 = 40.0;
pub const MAX_READING: f64 = 400.0;

/// A CGM series at 5-minute cadence starting at midnight of day 0.
///
/// Readings are stored as whole mg/dL values (the resolution CGM devices
/// report); `0` marks a missing slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CgmTrace {
    readings: Vec<u16>,
}

impl CgmTrace {
    /// Builds a trace from optional readings, rounding to whole mg/dL.
    pub fn from_readings<I>(readings: I) -> Result<Self>
    where
        I: IntoIterator<Item = Option<f64>>,
    {
        let readings = readings
            .into_iter()
            .map(|r| match r {
                None => Ok(0),
                Some(v) if v.is_finite() && (MIN_READING..=MAX_READING).contains(&v) => {
                    Ok(v.round() as u16)
                }
                Some(v) => Err(Error::Domain(format!(
                    "CGM reading {v} outside [{MIN_READING}, {MAX_READING}]"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { readings })
    }

    pub(crate) fn from_raw(readings: Vec<u16>) -> Self {
        Self { readings }
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn days(&self) -> usize {
        self.readings.len() / SLOTS_PER_DAY
    }

    pub fn get(&self, slot: usize) -> Option<f64> {
        match self.readings.get(slot) {
            Some(0) | None => None,
            Some(&v) => Some(f64::from(v)),
        }
    }

    pub fn raw(&self) -> &[u16] {
        &self.readings
    }

    /// Slots covering days `[end_day - days, end_day)`.
    pub fn days_slice(&self, end_day: usize, days: usize) -> Result<&[u16]> {
        if end_day < days || end_day * SLOTS_PER_DAY > self.readings.len() {
            return Err(Error::Domain(format!(
                "trace of {} days cannot supply {days} days ending at day {end_day}",
                self.days()
            )));
        }
        Ok(&self.readings[(end_day - days) * SLOTS_PER_DAY..end_day * SLOTS_PER_DAY])
    }

    /// The two-week state window ending at `end_day`, as an owned trace.
    pub fn window(&self, end_day: usize) -> Result<CgmTrace> {
        self.days_slice(end_day, WINDOW_DAYS).map(|s| CgmTrace {
            readings: s.to_vec(),
        })
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.readings.is_empty() {
            return 0.0;
        }
        self.readings.iter().filter(|&&r| r == 0).count() as f64 / self.readings.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_readings() {
        assert!(CgmTrace::from_readings([Some(39.0)]).is_err());
        assert!(CgmTrace::from_readings([Some(f64::NAN)]).is_err());
        let t = CgmTrace::from_readings([Some(40.0), None, Some(400.0)]).unwrap();
        assert_eq!(t.get(0), Some(40.0));
        assert_eq!(t.get(1), None);
        assert!((t.missing_fraction() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn window_bounds() {
        let t = CgmTrace::from_readings(vec![Some(100.0); 20 * SLOTS_PER_DAY]).unwrap();
        assert_eq!(t.window(14).unwrap().len(), WINDOW_SLOTS);
        assert_eq!(t.window(20).unwrap().len(), WINDOW_SLOTS);
        assert!(t.window(13).is_err());
        assert!(t.window(21).is_err());
    }
}
