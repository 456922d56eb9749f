//! Gated linear operators over sampled activation patterns.
//!
//! Each pattern is a gate vector g with mask m = 1(Xg >= 0) over the data
//! rows. The prediction operator applies masked feature maps to the 2P
//! stacked coefficient blocks, the constraint operator applies signed feature
//! maps (sign 2m - 1), and neither is ever materialized: everything is a loop
//! over patterns costing O(n d) per pattern.
//!
//! Coefficient layout: a stacked vector u of length 2 d P holds blocks
//! u_0..u_{P-1} (positive part) then u_P..u_{2P-1} (negative part), each of
//! length d. The constraint output stacks P blocks of length n for the
//! positive part, then P more for the negative part.

use ndarray::{s, Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::sym_eig;
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum LinopError {
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    #[error("data must be nonempty and finite: {context}")]
    InvalidData { context: String },
    #[error("gate set serialization: {context}")]
    BadRecord { context: String },
}

/// How gate vectors are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GateSampling {
    /// Independent standard normal gates.
    #[default]
    Gaussian,
    /// Gates copied from randomly chosen data rows.
    DataRow,
}

/// Sampled activation patterns: gate vectors and their row masks on the data
/// they were sampled against.
#[derive(Debug, Clone)]
pub struct GateSet {
    gates: Array2<f64>,
    masks: Vec<Vec<bool>>,
}

pub fn validate_data(x: &Array2<f64>, y: &Array1<f64>) -> Result<(), LinopError> {
    let (n, d) = x.dim();
    if n == 0 || d == 0 {
        return Err(LinopError::InvalidData { context: format!("features are {n}x{d}") });
    }
    if y.len() != n {
        return Err(LinopError::DimensionMismatch {
            context: format!("{n} rows but {} labels", y.len()),
        });
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(LinopError::InvalidData { context: "nonfinite entry".to_string() });
    }
    Ok(())
}

fn mask_for_gate(x: &Array2<f64>, gate: ArrayView1<f64>) -> Vec<bool> {
    x.rows().into_iter().map(|row| row.dot(&gate) >= 0.0).collect()
}

impl GateSet {
    /// Sample up to `requested` patterns with distinct masks. Draws are capped
    /// at 10x the request; if distinct masks run out first, the smaller set is
    /// kept.
    pub fn sample(
        x: &Array2<f64>,
        requested: usize,
        mode: GateSampling,
        rng: &mut Rng,
    ) -> Result<GateSet, LinopError> {
        let (n, d) = x.dim();
        if n == 0 || d == 0 || requested == 0 {
            return Err(LinopError::InvalidData {
                context: format!("cannot sample {requested} gates from {n}x{d} data"),
            });
        }
        let mut gates: Vec<f64> = Vec::with_capacity(requested * d);
        let mut masks: Vec<Vec<bool>> = Vec::with_capacity(requested);
        let mut draws = 0;
        while masks.len() < requested && draws < 10 * requested {
            draws += 1;
            let gate: Array1<f64> = match mode {
                GateSampling::Gaussian => (0..d).map(|_| rng.normal()).collect(),
                GateSampling::DataRow => x.row(rng.below(n)).to_owned(),
            };
            let mask = mask_for_gate(x, gate.view());
            if masks.contains(&mask) {
                continue;
            }
            masks.push(mask);
            gates.extend(gate.iter());
        }
        let p = masks.len();
        let gates = Array2::from_shape_vec((p, d), gates).expect("gate buffer shape");
        Ok(GateSet { gates, masks })
    }

    /// Rebuild a gate set from explicit gate vectors, recomputing masks on
    /// `x`. No deduplication is applied.
    pub fn from_gates(x: &Array2<f64>, gates: Array2<f64>) -> Result<GateSet, LinopError> {
        let (n, d) = x.dim();
        if n == 0 || gates.ncols() != d || gates.nrows() == 0 {
            return Err(LinopError::DimensionMismatch {
                context: format!("gates are {:?} but data is {n}x{d}", gates.dim()),
            });
        }
        let masks = gates.rows().into_iter().map(|g| mask_for_gate(x, g)).collect();
        Ok(GateSet { gates, masks })
    }

    /// Same gates, masks recomputed against new data rows.
    pub fn remasked(&self, x: &Array2<f64>) -> Result<GateSet, LinopError> {
        GateSet::from_gates(x, self.gates.clone())
    }

    pub fn pattern_count(&self) -> usize {
        self.masks.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.gates.ncols()
    }

    pub fn row_count(&self) -> usize {
        self.masks.first().map_or(0, Vec::len)
    }

    /// Length of the stacked coefficient vector, 2 d P.
    pub fn coef_len(&self) -> usize {
        2 * self.feature_dim() * self.pattern_count()
    }

    /// Length of the stacked constraint output, 2 n P.
    pub fn constraint_len(&self) -> usize {
        2 * self.row_count() * self.pattern_count()
    }

    pub fn gates(&self) -> &Array2<f64> {
        &self.gates
    }

    pub fn mask(&self, pattern: usize) -> &[bool] {
        &self.masks[pattern]
    }

    fn check_x(&self, x: &Array2<f64>, op: &str) -> Result<(), LinopError> {
        if x.nrows() != self.row_count() || x.ncols() != self.feature_dim() {
            return Err(LinopError::DimensionMismatch {
                context: format!(
                    "{op}: data is {:?} but gate set was built for {}x{}",
                    x.dim(),
                    self.row_count(),
                    self.feature_dim()
                ),
            });
        }
        Ok(())
    }

    fn check_len(&self, len: usize, want: usize, op: &str) -> Result<(), LinopError> {
        if len != want {
            return Err(LinopError::DimensionMismatch {
                context: format!("{op}: vector has length {len}, want {want}"),
            });
        }
        Ok(())
    }

    /// Prediction operator: sum of masked feature maps of the block
    /// differences, output length n.
    pub fn apply_f(&self, x: &Array2<f64>, u: &Array1<f64>) -> Result<Array1<f64>, LinopError> {
        self.check_x(x, "apply_f")?;
        self.check_len(u.len(), self.coef_len(), "apply_f")?;
        Ok(self.f_unchecked(x, u))
    }

    pub(crate) fn f_unchecked(&self, x: &Array2<f64>, u: &Array1<f64>) -> Array1<f64> {
        let (n, d) = x.dim();
        let p = self.pattern_count();
        let mut out = Array1::zeros(n);
        for i in 0..p {
            let pos = u.slice(s![i * d..(i + 1) * d]);
            let neg = u.slice(s![(p + i) * d..(p + i + 1) * d]);
            let diff = &pos - &neg;
            let t = x.dot(&diff);
            let mask = &self.masks[i];
            for r in 0..n {
                if mask[r] {
                    out[r] += t[r];
                }
            }
        }
        out
    }

    /// Adjoint of the prediction operator, output length 2 d P.
    pub fn apply_ft(&self, x: &Array2<f64>, w: &Array1<f64>) -> Result<Array1<f64>, LinopError> {
        self.check_x(x, "apply_ft")?;
        self.check_len(w.len(), self.row_count(), "apply_ft")?;
        Ok(self.ft_unchecked(x, w))
    }

    pub(crate) fn ft_unchecked(&self, x: &Array2<f64>, w: &Array1<f64>) -> Array1<f64> {
        let (n, d) = x.dim();
        let p = self.pattern_count();
        let mut out = Array1::zeros(2 * d * p);
        let mut masked = Array1::zeros(n);
        for i in 0..p {
            let mask = &self.masks[i];
            for r in 0..n {
                masked[r] = if mask[r] { w[r] } else { 0.0 };
            }
            let t = x.t().dot(&masked);
            for j in 0..d {
                out[i * d + j] = t[j];
                out[(p + i) * d + j] = -t[j];
            }
        }
        out
    }

    /// Constraint operator: signed feature maps of every block, output length
    /// 2 n P.
    pub fn apply_g(&self, x: &Array2<f64>, u: &Array1<f64>) -> Result<Array1<f64>, LinopError> {
        self.check_x(x, "apply_g")?;
        self.check_len(u.len(), self.coef_len(), "apply_g")?;
        Ok(self.g_unchecked(x, u))
    }

    pub(crate) fn g_unchecked(&self, x: &Array2<f64>, u: &Array1<f64>) -> Array1<f64> {
        let (n, d) = x.dim();
        let p = self.pattern_count();
        let mut out = Array1::zeros(2 * n * p);
        for b in 0..2 * p {
            let mask = &self.masks[b % p];
            let blk = u.slice(s![b * d..(b + 1) * d]);
            let t = x.dot(&blk);
            for r in 0..n {
                let sign = if mask[r] { 1.0 } else { -1.0 };
                out[b * n + r] = sign * t[r];
            }
        }
        out
    }

    /// Adjoint of the constraint operator, output length 2 d P.
    pub fn apply_gt(&self, x: &Array2<f64>, z: &Array1<f64>) -> Result<Array1<f64>, LinopError> {
        self.check_x(x, "apply_gt")?;
        self.check_len(z.len(), self.constraint_len(), "apply_gt")?;
        Ok(self.gt_unchecked(x, z))
    }

    pub(crate) fn gt_unchecked(&self, x: &Array2<f64>, z: &Array1<f64>) -> Array1<f64> {
        let (n, d) = x.dim();
        let p = self.pattern_count();
        let mut out = Array1::zeros(2 * d * p);
        let mut signed = Array1::zeros(n);
        for b in 0..2 * p {
            let mask = &self.masks[b % p];
            for r in 0..n {
                let sign = if mask[r] { 1.0 } else { -1.0 };
                signed[r] = sign * z[b * n + r];
            }
            let t = x.t().dot(&signed);
            for j in 0..d {
                out[b * d + j] = t[j];
            }
        }
        out
    }

    /// Normal operator (1/rho) F^T F + G^T G applied to u.
    pub fn apply_h(
        &self,
        x: &Array2<f64>,
        rho: f64,
        u: &Array1<f64>,
    ) -> Result<Array1<f64>, LinopError> {
        self.check_x(x, "apply_h")?;
        self.check_len(u.len(), self.coef_len(), "apply_h")?;
        Ok(self.h_unchecked(x, rho, u))
    }

    pub(crate) fn h_unchecked(&self, x: &Array2<f64>, rho: f64, u: &Array1<f64>) -> Array1<f64> {
        let fu = self.f_unchecked(x, u);
        let mut out = self.ft_unchecked(x, &fu);
        out.mapv_inplace(|v| v / rho);
        let gu = self.g_unchecked(x, u);
        out + self.gt_unchecked(x, &gu)
    }

    /// Predictions on new rows: masks are recomputed from the stored gates,
    /// the coefficients stay fixed.
    pub fn predict(&self, x_new: &Array2<f64>, u: &Array1<f64>) -> Result<Array1<f64>, LinopError> {
        let d = self.feature_dim();
        if x_new.ncols() != d {
            return Err(LinopError::DimensionMismatch {
                context: format!("predict: {} feature columns, want {d}", x_new.ncols()),
            });
        }
        self.check_len(u.len(), self.coef_len(), "predict")?;
        let p = self.pattern_count();
        let n = x_new.nrows();
        let mut out = Array1::zeros(n);
        for i in 0..p {
            let mask = mask_for_gate(x_new, self.gates.row(i));
            let pos = u.slice(s![i * d..(i + 1) * d]);
            let neg = u.slice(s![(p + i) * d..(p + i + 1) * d]);
            let diff = &pos - &neg;
            let t = x_new.dot(&diff);
            for r in 0..n {
                if mask[r] {
                    out[r] += t[r];
                }
            }
        }
        Ok(out)
    }

    /// Per-pattern Gram spectra against the data Gram spectrum. Both the
    /// masked and the signed Gram are dominated eigenvalue by eigenvalue by
    /// X^T X; the report records the worst violation found.
    pub fn spectrum_report(&self, x: &Array2<f64>) -> Result<SpectrumReport, LinopError> {
        self.check_x(x, "spectrum_report")?;
        let (n, d) = x.dim();
        let xtx = x.t().dot(x);
        let (data_eigs, _) = sym_eig(&xtx).map_err(|e| LinopError::InvalidData {
            context: format!("data Gram eigensolve failed: {e}"),
        })?;
        let p = self.pattern_count();
        let mut masked_eigs = Vec::with_capacity(p);
        let mut signed_eigs = Vec::with_capacity(p);
        let mut max_violation = f64::NEG_INFINITY;
        for i in 0..p {
            let mask = &self.masks[i];
            let mut dx = x.clone();
            let mut sx = x.clone();
            for r in 0..n {
                let (mf, sf) = if mask[r] { (1.0, 1.0) } else { (0.0, -1.0) };
                for j in 0..d {
                    dx[[r, j]] *= mf;
                    sx[[r, j]] *= sf;
                }
            }
            let (me, _) = sym_eig(&dx.t().dot(&dx)).map_err(|e| LinopError::InvalidData {
                context: format!("masked Gram eigensolve failed: {e}"),
            })?;
            let (se, _) = sym_eig(&sx.t().dot(&sx)).map_err(|e| LinopError::InvalidData {
                context: format!("signed Gram eigensolve failed: {e}"),
            })?;
            for j in 0..d {
                max_violation = max_violation.max(me[j] - data_eigs[j]);
                max_violation = max_violation.max(se[j] - data_eigs[j]);
            }
            masked_eigs.push(me);
            signed_eigs.push(se);
        }
        Ok(SpectrumReport {
            data_eigs,
            masked_eigs,
            signed_eigs,
            max_violation,
            dominated: max_violation <= 1e-8,
        })
    }

    pub fn to_record(&self) -> GateSetRecord {
        let masks = self.masks.iter().map(|m| pack_mask(m)).collect();
        GateSetRecord {
            version: 1,
            patterns: self.pattern_count(),
            feature_dim: self.feature_dim(),
            rows: self.row_count(),
            gates: self.gates.iter().copied().collect(),
            masks,
        }
    }

    pub fn from_record(rec: &GateSetRecord) -> Result<GateSet, LinopError> {
        if rec.version != 1 {
            return Err(LinopError::BadRecord {
                context: format!("unsupported version {}", rec.version),
            });
        }
        let (p, d, n) = (rec.patterns, rec.feature_dim, rec.rows);
        if rec.gates.len() != p * d || rec.masks.len() != p {
            return Err(LinopError::BadRecord {
                context: format!(
                    "expected {p} gates of dim {d} and {p} masks, got {} gate entries and {} masks",
                    rec.gates.len(),
                    rec.masks.len()
                ),
            });
        }
        let gates = Array2::from_shape_vec((p, d), rec.gates.clone())
            .map_err(|e| LinopError::BadRecord { context: e.to_string() })?;
        let masks = rec
            .masks
            .iter()
            .map(|h| unpack_mask(h, n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GateSet { gates, masks })
    }
}

/// Serializable image of a gate set. Masks are hex strings of the row bits
/// packed little-endian, eight rows per byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateSetRecord {
    pub version: u32,
    pub patterns: usize,
    pub feature_dim: usize,
    pub rows: usize,
    pub gates: Vec<f64>,
    pub masks: Vec<String>,
}

fn pack_mask(mask: &[bool]) -> String {
    let mut bytes = vec![0u8; mask.len().div_ceil(8)];
    for (r, &bit) in mask.iter().enumerate() {
        if bit {
            bytes[r / 8] |= 1 << (r % 8);
        }
    }
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn unpack_mask(hex: &str, rows: usize) -> Result<Vec<bool>, LinopError> {
    let want_bytes = rows.div_ceil(8);
    if hex.len() != want_bytes * 2 {
        return Err(LinopError::BadRecord {
            context: format!("mask hex length {} for {rows} rows", hex.len()),
        });
    }
    let mut bytes = Vec::with_capacity(want_bytes);
    for i in 0..want_bytes {
        let b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
            .map_err(|e| LinopError::BadRecord { context: e.to_string() })?;
        bytes.push(b);
    }
    Ok((0..rows).map(|r| bytes[r / 8] & (1 << (r % 8)) != 0).collect())
}

#[derive(Debug, Clone)]
pub struct SpectrumReport {
    pub data_eigs: Array1<f64>,
    pub masked_eigs: Vec<Array1<f64>>,
    pub signed_eigs: Vec<Array1<f64>>,
    pub max_violation: f64,
    pub dominated: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::gaussian_matrix;

    /// Dense prediction matrix built entry by entry from its definition.
    fn dense_f(gs: &GateSet, x: &Array2<f64>) -> Array2<f64> {
        let (n, d) = x.dim();
        let p = gs.pattern_count();
        let mut f = Array2::zeros((n, 2 * d * p));
        for i in 0..p {
            for r in 0..n {
                if gs.mask(i)[r] {
                    for j in 0..d {
                        f[[r, i * d + j]] = x[[r, j]];
                        f[[r, (p + i) * d + j]] = -x[[r, j]];
                    }
                }
            }
        }
        f
    }

    /// Dense constraint matrix built entry by entry from its definition.
    fn dense_g(gs: &GateSet, x: &Array2<f64>) -> Array2<f64> {
        let (n, d) = x.dim();
        let p = gs.pattern_count();
        let mut g = Array2::zeros((2 * n * p, 2 * d * p));
        for b in 0..2 * p {
            let mask = gs.mask(b % p);
            for r in 0..n {
                let sign = if mask[r] { 1.0 } else { -1.0 };
                for j in 0..d {
                    g[[b * n + r, b * d + j]] = sign * x[[r, j]];
                }
            }
        }
        g
    }

    fn random_instance(seed: u64, n: usize, d: usize, p: usize) -> (Array2<f64>, GateSet) {
        let mut rng = Rng::new(seed);
        let x = gaussian_matrix(&mut rng, n, d).unwrap();
        let gs = GateSet::sample(&x, p, GateSampling::Gaussian, &mut rng).unwrap();
        (x, gs)
    }

    fn norm(v: &Array1<f64>) -> f64 {
        v.dot(v).sqrt()
    }

    #[test]
    fn masks_use_inclusive_zero_tie_break() {
        let x = ndarray::arr2(&[[1.0], [-1.0], [0.0]]);
        let gs = GateSet::from_gates(&x, ndarray::arr2(&[[1.0]])).unwrap();
        assert_eq!(gs.mask(0), &[true, false, true]);
        let gs = GateSet::from_gates(&x, ndarray::arr2(&[[-1.0]])).unwrap();
        assert_eq!(gs.mask(0), &[false, true, true]);
    }

    #[test]
    fn sampling_dedups_and_accepts_smaller_sets() {
        // One positive feature column: only two distinct masks exist.
        let x = ndarray::arr2(&[[1.0], [2.0], [0.5]]);
        let mut rng = Rng::new(9);
        let gs = GateSet::sample(&x, 4, GateSampling::Gaussian, &mut rng).unwrap();
        assert!(gs.pattern_count() <= 2, "got {} patterns", gs.pattern_count());
        for i in 0..gs.pattern_count() {
            for j in (i + 1)..gs.pattern_count() {
                assert_ne!(gs.mask(i), gs.mask(j));
            }
        }
    }

    #[test]
    fn masks_match_recomputation_from_gates() {
        let (x, gs) = random_instance(21, 12, 4, 3);
        let rebuilt = GateSet::from_gates(&x, gs.gates().clone()).unwrap();
        for i in 0..gs.pattern_count() {
            assert_eq!(gs.mask(i), rebuilt.mask(i));
        }
    }

    #[test]
    fn apply_f_zero_and_all_ones_mask() {
        let (x, gs) = random_instance(33, 10, 3, 2);
        let zero = Array1::zeros(gs.coef_len());
        assert_eq!(norm(&gs.apply_f(&x, &zero).unwrap()), 0.0);

        // A single all-ones mask turns F into x applied to the block difference.
        let x2 = ndarray::arr2(&[[1.0, 2.0], [0.5, -1.0]]);
        let gs2 = GateSet::from_gates(&x2, ndarray::arr2(&[[1.0, 0.0]])).unwrap();
        assert_eq!(gs2.mask(0), &[true, true]);
        let u = ndarray::arr1(&[1.0, 2.0, 0.25, -0.5]);
        let expect = x2.dot(&ndarray::arr1(&[0.75, 2.5]));
        let got = gs2.apply_f(&x2, &u).unwrap();
        for r in 0..2 {
            assert!((got[r] - expect[r]).abs() <= 1e-14);
        }
    }

    #[test]
    fn operators_match_dense_materialization() {
        for seed in 0..10u64 {
            let (x, gs) = random_instance(100 + seed, 6, 3, 2);
            let mut rng = Rng::new(200 + seed);
            let fd = dense_f(&gs, &x);
            let gd = dense_g(&gs, &x);
            let u: Array1<f64> = (0..gs.coef_len()).map(|_| rng.normal()).collect();
            let w: Array1<f64> = (0..x.nrows()).map(|_| rng.normal()).collect();
            let z: Array1<f64> = (0..gs.constraint_len()).map(|_| rng.normal()).collect();

            let fu = gs.apply_f(&x, &u).unwrap();
            let fu_dense = fd.dot(&u);
            assert!(norm(&(&fu - &fu_dense)) <= 1e-10 * (1.0 + norm(&fu_dense)));

            let ftw = gs.apply_ft(&x, &w).unwrap();
            let ftw_dense = fd.t().dot(&w);
            assert!(norm(&(&ftw - &ftw_dense)) <= 1e-10 * (1.0 + norm(&ftw_dense)));

            let gu = gs.apply_g(&x, &u).unwrap();
            let gu_dense = gd.dot(&u);
            assert!(norm(&(&gu - &gu_dense)) <= 1e-10 * (1.0 + norm(&gu_dense)));

            let gtz = gs.apply_gt(&x, &z).unwrap();
            let gtz_dense = gd.t().dot(&z);
            assert!(norm(&(&gtz - &gtz_dense)) <= 1e-10 * (1.0 + norm(&gtz_dense)));

            let rho = 0.3;
            let hu = gs.apply_h(&x, rho, &u).unwrap();
            let hd = fd.t().dot(&fd).mapv(|v| v / rho) + gd.t().dot(&gd);
            let hu_dense = hd.dot(&u);
            assert!(norm(&(&hu - &hu_dense)) <= 1e-10 * (1.0 + norm(&hu_dense)));
        }
    }

    #[test]
    fn adjoint_identities_hold() {
        for seed in 0..20u64 {
            let (x, gs) = random_instance(300 + seed, 8, 4, 3);
            let mut rng = Rng::new(400 + seed);
            let u: Array1<f64> = (0..gs.coef_len()).map(|_| rng.normal()).collect();
            let w: Array1<f64> = (0..x.nrows()).map(|_| rng.normal()).collect();
            let z: Array1<f64> = (0..gs.constraint_len()).map(|_| rng.normal()).collect();

            let lhs = gs.apply_f(&x, &u).unwrap().dot(&w);
            let rhs = u.dot(&gs.apply_ft(&x, &w).unwrap());
            assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs().max(rhs.abs())));

            let lhs = gs.apply_g(&x, &u).unwrap().dot(&z);
            let rhs = u.dot(&gs.apply_gt(&x, &z).unwrap());
            assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs().max(rhs.abs())));
        }
    }

    #[test]
    fn normal_operator_is_positive_semidefinite() {
        for seed in 0..10u64 {
            let (x, gs) = random_instance(500 + seed, 7, 3, 2);
            let mut rng = Rng::new(600 + seed);
            let u: Array1<f64> = (0..gs.coef_len()).map(|_| rng.normal()).collect();
            let quad = u.dot(&gs.apply_h(&x, 0.7, &u).unwrap());
            assert!(quad >= -1e-10 * (1.0 + quad.abs()));
        }
    }

    #[test]
    fn spectrum_is_dominated_by_data_gram() {
        for seed in 0..5u64 {
            let (x, gs) = random_instance(700 + seed, 10, 4, 3);
            let report = gs.spectrum_report(&x).unwrap();
            assert!(report.dominated, "violation {}", report.max_violation);
        }
    }

    #[test]
    fn spectrum_handles_all_zero_mask() {
        // Negative-definite gate direction on all-positive data zeroes the mask.
        let x = ndarray::arr2(&[[1.0, 0.5], [2.0, 1.0], [0.5, 0.25]]);
        let gs = GateSet::from_gates(&x, ndarray::arr2(&[[-1.0, -1.0]])).unwrap();
        assert_eq!(gs.mask(0), &[false, false, false]);
        let report = gs.spectrum_report(&x).unwrap();
        assert!(report.dominated);
        for &e in report.masked_eigs[0].iter() {
            assert!(e.abs() <= 1e-12);
        }
    }

    #[test]
    fn predict_matches_apply_f_on_training_rows() {
        let (x, gs) = random_instance(800, 9, 4, 3);
        let mut rng = Rng::new(801);
        let u: Array1<f64> = (0..gs.coef_len()).map(|_| rng.normal()).collect();
        let fu = gs.apply_f(&x, &u).unwrap();
        let pred = gs.predict(&x, &u).unwrap();
        assert!(norm(&(&fu - &pred)) <= 1e-14 * (1.0 + norm(&fu)));
        let zero = Array1::zeros(gs.coef_len());
        assert_eq!(norm(&gs.predict(&x, &zero).unwrap()), 0.0);
    }

    #[test]
    fn predict_hand_computed_value() {
        // Identity data, one gate (1, 1): mask is all ones. With blocks
        // (2, 1) and (0.5, 0) the difference is (1.5, 1), so a new row (3, 4)
        // gated on (its dot 7 >= 0) predicts 3 * 1.5 + 4 * 1 = 8.5.
        let x = ndarray::arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let gs = GateSet::from_gates(&x, ndarray::arr2(&[[1.0, 1.0]])).unwrap();
        let u = ndarray::arr1(&[2.0, 1.0, 0.5, 0.0]);
        let pred = gs.predict(&ndarray::arr2(&[[3.0, 4.0]]), &u).unwrap();
        assert!((pred[0] - 8.5).abs() <= 1e-15);
    }

    #[test]
    fn record_round_trip_is_exact() {
        let (x, gs) = random_instance(900, 11, 3, 4);
        let rec = gs.to_record();
        let json = serde_json::to_string(&rec).unwrap();
        let back: GateSetRecord = serde_json::from_str(&json).unwrap();
        let gs2 = GateSet::from_record(&back).unwrap();
        assert_eq!(gs.gates(), gs2.gates());
        for i in 0..gs.pattern_count() {
            assert_eq!(gs.mask(i), gs2.mask(i));
        }
        let _ = x;
    }
}
