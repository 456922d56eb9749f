//! Model persistence.
//!
//! A checkpoint is one versioned JSON document holding the inner-layer
//! parameters (absent for purely convex models), the gate set, and the convex
//! state. Floats survive the round trip exactly.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::am::{MlpLayer, MlpParams};
use crate::linops::{GateSet, GateSetRecord, LinopError};
use crate::solver::ConvexState;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {found}, expected {CHECKPOINT_VERSION}")]
    Version { found: u32 },
    #[error("inconsistent checkpoint: {context}")]
    Inconsistent { context: String },
    #[error(transparent)]
    Gates(#[from] LinopError),
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StateRecord {
    u: Vec<f64>,
    v: Vec<f64>,
    s: Vec<f64>,
    lam: Vec<f64>,
    nu: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointRecord {
    version: u32,
    mlp: Option<Vec<LayerRecord>>,
    gates: GateSetRecord,
    state: StateRecord,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub mlp: Option<MlpParams>,
    pub gates: GateSet,
    pub state: ConvexState,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let mlp = self.mlp.as_ref().map(|params| {
            params
                .layers
                .iter()
                .map(|l| LayerRecord {
                    rows: l.w.nrows(),
                    cols: l.w.ncols(),
                    w: l.w.iter().copied().collect(),
                    b: l.b.to_vec(),
                })
                .collect()
        });
        let rec = CheckpointRecord {
            version: CHECKPOINT_VERSION,
            mlp,
            gates: self.gates.to_record(),
            state: StateRecord {
                u: self.state.u.to_vec(),
                v: self.state.v.to_vec(),
                s: self.state.s.to_vec(),
                lam: self.state.lam.to_vec(),
                nu: self.state.nu.to_vec(),
            },
        };
        serde_json::to_string(&rec).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Checkpoint, CheckpointError> {
        let rec: CheckpointRecord = serde_json::from_str(text)?;
        if rec.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version { found: rec.version });
        }
        let gates = GateSet::from_record(&rec.gates)?;

        let mlp = match rec.mlp {
            None => None,
            Some(layer_recs) => {
                let mut layers = Vec::with_capacity(layer_recs.len());
                let mut prev_out: Option<usize> = None;
                for (li, lr) in layer_recs.iter().enumerate() {
                    if lr.w.len() != lr.rows * lr.cols || lr.b.len() != lr.rows {
                        return Err(CheckpointError::Inconsistent {
                            context: format!("layer {li} shape fields disagree with data length"),
                        });
                    }
                    if let Some(prev) = prev_out {
                        if lr.cols != prev {
                            return Err(CheckpointError::Inconsistent {
                                context: format!(
                                    "layer {li} takes {} inputs but the previous layer emits {prev}",
                                    lr.cols
                                ),
                            });
                        }
                    }
                    prev_out = Some(lr.rows);
                    let w = Array2::from_shape_vec((lr.rows, lr.cols), lr.w.clone())
                        .expect("length checked above");
                    layers.push(MlpLayer { w, b: Array1::from_vec(lr.b.clone()) });
                }
                if let Some(last) = prev_out {
                    if last != gates.feature_dim() {
                        return Err(CheckpointError::Inconsistent {
                            context: format!(
                                "net emits {last} features but the gate set expects {}",
                                gates.feature_dim()
                            ),
                        });
                    }
                }
                Some(MlpParams { layers })
            }
        };

        let coef = gates.coef_len();
        let cons = gates.constraint_len();
        let lens =
            [rec.state.u.len(), rec.state.v.len(), rec.state.lam.len(), rec.state.s.len(), rec.state.nu.len()];
        if lens != [coef, coef, coef, cons, cons] {
            return Err(CheckpointError::Inconsistent {
                context: format!("state lengths {lens:?} do not match gate set ({coef}, {cons})"),
            });
        }
        let state = ConvexState {
            u: Array1::from_vec(rec.state.u),
            v: Array1::from_vec(rec.state.v),
            s: Array1::from_vec(rec.state.s),
            lam: Array1::from_vec(rec.state.lam),
            nu: Array1::from_vec(rec.state.nu),
        };
        Ok(Checkpoint { mlp, gates, state })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        Checkpoint::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::am::MlpSpec;
    use crate::dense::gaussian_matrix;
    use crate::linops::GateSampling;
    use crate::rng::Rng;

    fn make_checkpoint(seed: u64, with_mlp: bool) -> Checkpoint {
        let mut rng = Rng::new(seed);
        let x = gaussian_matrix(&mut rng, 9, 4).unwrap();
        let gates = GateSet::sample(&x, 3, GateSampling::Gaussian, &mut rng).unwrap();
        let mut state = ConvexState::zeros(&gates);
        for v in state
            .u
            .iter_mut()
            .chain(state.v.iter_mut())
            .chain(state.s.iter_mut())
            .chain(state.lam.iter_mut())
            .chain(state.nu.iter_mut())
        {
            *v = rng.normal();
        }
        let mlp = with_mlp.then(|| {
            let spec = MlpSpec { input_dim: 6, hidden: vec![5, 4] };
            MlpParams::init(&spec, &mut rng).unwrap()
        });
        Checkpoint { mlp, gates, state }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = make_checkpoint(1, true);
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(ck.state.u, back.state.u);
        assert_eq!(ck.state.v, back.state.v);
        assert_eq!(ck.state.s, back.state.s);
        assert_eq!(ck.state.lam, back.state.lam);
        assert_eq!(ck.state.nu, back.state.nu);
        assert_eq!(ck.gates.gates(), back.gates.gates());
        for i in 0..ck.gates.pattern_count() {
            assert_eq!(ck.gates.mask(i), back.gates.mask(i));
        }
        let (a, b) = (ck.mlp.unwrap(), back.mlp.unwrap());
        assert_eq!(a.layers.len(), b.layers.len());
        for (la, lb) in a.layers.iter().zip(b.layers.iter()) {
            assert_eq!(la.w, lb.w);
            assert_eq!(la.b, lb.b);
        }
    }

    #[test]
    fn convex_only_round_trip() {
        let ck = make_checkpoint(2, false);
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert!(back.mlp.is_none());
        assert_eq!(ck.state.u, back.state.u);
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join("cronos_ck_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        let ck = make_checkpoint(3, true);
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(ck.state.nu, back.state.nu);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn wrong_version_is_rejected() {
        let ck = make_checkpoint(4, false);
        let text = ck.to_json().replacen("\"version\":1", "\"version\":2", 1);
        match Checkpoint::from_json(&text) {
            Err(CheckpointError::Version { found: 2 }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_state_is_rejected() {
        let ck = make_checkpoint(5, false);
        let mut rec: serde_json::Value = serde_json::from_str(&ck.to_json()).unwrap();
        rec["state"]["u"].as_array_mut().unwrap().pop();
        match Checkpoint::from_json(&rec.to_string()) {
            Err(CheckpointError::Inconsistent { .. }) => {}
            other => panic!("expected inconsistency error, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_net_width_is_rejected() {
        let mut ck = make_checkpoint(6, true);
        ck.mlp.as_mut().unwrap().layers.pop();
        match Checkpoint::from_json(&ck.to_json()) {
            Err(CheckpointError::Inconsistent { context }) => {
                assert!(context.contains("gate set expects"), "{context}");
            }
            other => panic!("expected inconsistency error, got {other:?}"),
        }
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(matches!(Checkpoint::from_json("not json"), Err(CheckpointError::Json(_))));
    }
}
