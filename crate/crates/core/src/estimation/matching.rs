//! Association of detected paths with ground truth.

use crate::geometry::{GeoParams, ParamKind};
use crate::{Error, Result};

/// Per-domain association gates; `None` leaves a domain out of the distance.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Gates {
    gates: [Option<f64>; 6],
}

impl Gates {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, kind: ParamKind, gate: f64) -> Self {
        self.gates[kind.index()] = Some(gate);
        self
    }

    pub fn delay(gate: f64) -> Self {
        Self::new().with(ParamKind::Delay, gate)
    }

    pub fn get(&self, kind: ParamKind) -> Option<f64> {
        self.gates[kind.index()]
    }

    /// Normalised distance, or `None` when a gated component exceeds its gate.
    pub fn distance(&self, a: &GeoParams, b: &GeoParams) -> Option<f64> {
        let mut d2 = 0.0;
        for kind in ParamKind::ALL {
            if let Some(g) = self.get(kind) {
                let u = a.difference(b, kind).abs() / g;
                if u > 1.0 {
                    return None;
                }
                d2 += u * u;
            }
        }
        Some(d2.sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Matching {
    /// `(truth index, detection index)`.
    pub pairs: Vec<(usize, usize)>,
    pub missed: Vec<usize>,
    pub false_alarms: Vec<usize>,
}

/// Greedy nearest-neighbour association: repeatedly pairs the closest
/// remaining (truth, detection) couple inside the gates.
pub fn match_detections(truth: &[GeoParams], detected: &[GeoParams], gates: &Gates) -> Result<Matching> {
    if ParamKind::ALL.iter().all(|k| gates.get(*k).is_none()) {
        return Err(Error::InvalidParameter("at least one gate is required".into()));
    }
    if ParamKind::ALL.iter().filter_map(|k| gates.get(*k)).any(|g| !(g > 0.0)) {
        return Err(Error::InvalidParameter("gates must be positive".into()));
    }
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, t) in truth.iter().enumerate() {
        for (j, d) in detected.iter().enumerate() {
            if let Some(dist) = gates.distance(t, d) {
                candidates.push((dist, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_t = vec![false; truth.len()];
    let mut used_d = vec![false; detected.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_t[i] && !used_d[j] {
            used_t[i] = true;
            used_d[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    Ok(Matching {
        pairs,
        missed: (0..truth.len()).filter(|&i| !used_t[i]).collect(),
        false_alarms: (0..detected.len()).filter(|&j| !used_d[j]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(t: f64) -> GeoParams {
        GeoParams::delay_only(t)
    }

    #[test]
    fn perfect_and_empty() {
        let truth: Vec<GeoParams> = (0..5).map(|i| d(i as f64 * 1e-7)).collect();
        let m = match_detections(&truth, &truth, &Gates::delay(2e-8)).unwrap();
        assert_eq!(m.pairs.len(), 5);
        assert!(m.missed.is_empty() && m.false_alarms.is_empty());
        let m = match_detections(&truth, &[], &Gates::delay(2e-8)).unwrap();
        assert_eq!(m.missed, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn three_of_five() {
        let truth: Vec<GeoParams> = (0..5).map(|i| d(i as f64 * 1e-7)).collect();
        let det = vec![d(0.1e-8), d(2.05e-7), d(3.98e-7)];
        let m = match_detections(&truth, &det, &Gates::delay(2e-8)).unwrap();
        assert_eq!(m.pairs, vec![(0, 0), (2, 1), (4, 2)]);
        assert_eq!(m.missed.len(), 2);
        assert!(m.false_alarms.is_empty());
    }

    #[test]
    fn out_of_gate_is_false_alarm() {
        let m = match_detections(&[d(0.0)], &[d(1e-6)], &Gates::delay(1e-8)).unwrap();
        assert_eq!(m.missed, vec![0]);
        assert_eq!(m.false_alarms, vec![0]);
        assert!(match_detections(&[d(0.0)], &[d(0.0)], &Gates::new()).is_err());
        assert!(match_detections(&[d(0.0)], &[d(0.0)], &Gates::delay(-1.0)).is_err());
    }
}
