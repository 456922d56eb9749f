//! Dataset loading, generation, and preprocessing.
//!
//! Two on-disk formats. CSV is one row per sample with the label in a
//! configurable column (default: last). The raw format is a little-endian
//! binary dump: magic `CRNS1`, u32 row count, u32 feature count, then the
//! feature matrix row-major as f32, then the labels as f32. Raw files are
//! lossy relative to f64 data but round-trip bit-identically.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use cronos::dense;
use cronos::Rng;
use ndarray::{Array1, Array2};
use thiserror::Error;

pub const RAW_MAGIC: &[u8; 5] = b"CRNS1";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed data: {context}")]
    Malformed { context: String },
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), source }
}

/// Feature statistics fitted on the training split and reapplied elsewhere.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn fit(x: &Array2<f64>) -> Standardization {
        let n = x.nrows().max(1) as f64;
        let mut mean = vec![0.0; x.ncols()];
        let mut std = vec![0.0; x.ncols()];
        for (j, col) in x.columns().into_iter().enumerate() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean[j] = m;
            // Constant columns pass through unscaled instead of dividing by 0.
            std[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Standardization { mean, std }
    }

    pub fn apply(&self, x: &mut Array2<f64>) {
        assert_eq!(x.ncols(), self.mean.len());
        for mut row in x.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
    }
}

/// A train/validation split. The validation side may be empty.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x_train: Array2<f64>,
    pub y_train: Array1<f64>,
    pub x_val: Array2<f64>,
    pub y_val: Array1<f64>,
    pub stats: Option<Standardization>,
}

impl Dataset {
    /// Wrap a full set as train-only.
    pub fn unsplit(x: Array2<f64>, y: Array1<f64>) -> Dataset {
        let d = x.ncols();
        Dataset {
            x_train: x,
            y_train: y,
            x_val: Array2::zeros((0, d)),
            y_val: Array1::zeros(0),
            stats: None,
        }
    }

    /// Shuffle rows with `rng` and hold out `val_fraction` of them.
    pub fn split(
        x: Array2<f64>,
        y: Array1<f64>,
        val_fraction: f64,
        rng: &mut Rng,
    ) -> Result<Dataset, DataError> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(DataError::Malformed {
                context: format!("val_fraction {val_fraction} outside [0, 1)"),
            });
        }
        let n = x.nrows();
        let n_val = (n as f64 * val_fraction).floor() as usize;
        if n_val == 0 {
            return Ok(Dataset::unsplit(x, y));
        }
        if n - n_val == 0 {
            return Err(DataError::Malformed {
                context: format!("val_fraction {val_fraction} leaves no training rows out of {n}"),
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let take = |idx: &[usize]| -> (Array2<f64>, Array1<f64>) {
            let mut xs = Array2::zeros((idx.len(), x.ncols()));
            let mut ys = Array1::zeros(idx.len());
            for (k, &i) in idx.iter().enumerate() {
                xs.row_mut(k).assign(&x.row(i));
                ys[k] = y[i];
            }
            (xs, ys)
        };
        let (x_val, y_val) = take(&order[..n_val]);
        let (x_train, y_train) = take(&order[n_val..]);
        Ok(Dataset { x_train, y_train, x_val, y_val, stats: None })
    }

    /// Fit standardization on the training rows and apply it to both splits.
    pub fn standardize(&mut self) {
        let stats = Standardization::fit(&self.x_train);
        stats.apply(&mut self.x_train);
        if self.x_val.nrows() > 0 {
            stats.apply(&mut self.x_val);
        }
        self.stats = Some(stats);
    }
}

/// Parse a CSV of numbers, taking the label from `label_column` (default last
/// column). No header handling: a non-numeric first line is an error that
/// names the offending cell.
pub fn load_csv(path: &Path, label_column: Option<usize>) -> Result<(Array2<f64>, Array1<f64>), DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (col, cell) in line.split(',').enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| DataError::Malformed {
                context: format!(
                    "{}: line {}, column {}: cannot parse {:?} as a number",
                    path.display(),
                    lineno + 1,
                    col + 1,
                    cell.trim()
                ),
            })?;
            row.push(v);
        }
        if rows.is_empty() {
            width = row.len();
        } else if row.len() != width {
            return Err(DataError::Malformed {
                context: format!(
                    "{}: line {} has {} columns, earlier lines have {}",
                    path.display(),
                    lineno + 1,
                    row.len(),
                    width
                ),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() || width < 2 {
        return Err(DataError::Malformed {
            context: format!("{}: need at least one row and two columns", path.display()),
        });
    }
    let label_col = label_column.unwrap_or(width - 1);
    if label_col >= width {
        return Err(DataError::Malformed {
            context: format!(
                "{}: label column {label_col} out of range for {width} columns",
                path.display()
            ),
        });
    }
    let n = rows.len();
    let d = width - 1;
    let mut x = Array2::zeros((n, d));
    let mut y = Array1::zeros(n);
    for (i, row) in rows.iter().enumerate() {
        let mut k = 0;
        for (j, &v) in row.iter().enumerate() {
            if j == label_col {
                y[i] = v;
            } else {
                x[[i, k]] = v;
                k += 1;
            }
        }
    }
    Ok((x, y))
}

/// Read the raw binary format.
pub fn load_raw(path: &Path) -> Result<(Array2<f64>, Array1<f64>), DataError> {
    let mut file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;
    if bytes.len() < RAW_MAGIC.len() + 8 || &bytes[..RAW_MAGIC.len()] != RAW_MAGIC {
        return Err(DataError::Malformed {
            context: format!("{}: not a raw dataset (bad magic)", path.display()),
        });
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let n = u32_at(RAW_MAGIC.len()) as usize;
    let d = u32_at(RAW_MAGIC.len() + 4) as usize;
    let body = &bytes[RAW_MAGIC.len() + 8..];
    let want = (n * d + n) * 4;
    if body.len() != want {
        return Err(DataError::Malformed {
            context: format!(
                "{}: payload is {} bytes, header {n}x{d} implies {want}",
                path.display(),
                body.len()
            ),
        });
    }
    if n == 0 || d == 0 {
        return Err(DataError::Malformed {
            context: format!("{}: empty dataset ({n}x{d})", path.display()),
        });
    }
    let f32_at =
        |off: usize| f32::from_le_bytes(body[4 * off..4 * off + 4].try_into().unwrap()) as f64;
    let x = Array2::from_shape_fn((n, d), |(i, j)| f32_at(i * d + j));
    let y = Array1::from_shape_fn(n, |i| f32_at(n * d + i));
    Ok((x, y))
}

/// Write the raw binary format. Values are truncated to f32.
pub fn save_raw(path: &Path, x: &Array2<f64>, y: &Array1<f64>) -> Result<(), DataError> {
    assert_eq!(x.nrows(), y.len());
    let mut bytes = Vec::with_capacity(RAW_MAGIC.len() + 8 + (x.len() + y.len()) * 4);
    bytes.extend_from_slice(RAW_MAGIC);
    bytes.extend_from_slice(&(x.nrows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(x.ncols() as u32).to_le_bytes());
    for v in x.iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    for v in y.iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&bytes).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Two Gaussian blobs at +/- 2.5/sqrt(d) * ones, labels +/-1, isotropic noise.
/// Classes alternate row by row, so any prefix is near-balanced.
pub fn gen_blobs(n: usize, d: usize, noise: f64, rng: &mut Rng) -> (Array2<f64>, Array1<f64>) {
    let shift = 2.5 / (d as f64).sqrt();
    let mut x = Array2::zeros((n, d));
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let cls = if i % 2 == 0 { 1.0 } else { -1.0 };
        for j in 0..d {
            x[[i, j]] = cls * shift + noise * rng.normal();
        }
        y[i] = cls;
    }
    (x, y)
}

/// The network a planted-relu dataset was labeled by.
#[derive(Debug, Clone)]
pub struct PlantedNet {
    /// Hidden weights, one neuron per row.
    pub w1: Array2<f64>,
    /// Output weights.
    pub w2: Array1<f64>,
}

impl PlantedNet {
    pub fn score(&self, x: &Array2<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(x.nrows());
        for (i, row) in x.rows().into_iter().enumerate() {
            let mut acc = 0.0;
            for (k, w) in self.w1.rows().into_iter().enumerate() {
                acc += self.w2[k] * row.dot(&w).max(0.0);
            }
            out[i] = acc;
        }
        out
    }
}

/// Labels are the sign of a random two-layer ReLU network's output, with
/// `noise` times a standard normal added to the margin before taking the
/// sign. With noise 0 the planted network itself scores 100%.
pub fn gen_planted_relu(
    n: usize,
    d: usize,
    noise: f64,
    rng: &mut Rng,
) -> (Array2<f64>, Array1<f64>, PlantedNet) {
    let neurons = (2 * d).max(4);
    let x = dense::gaussian_matrix(rng, n, d).expect("positive dims");
    let w1 = dense::gaussian_matrix(rng, neurons, d).expect("positive dims");
    let w2 = Array1::from_shape_fn(neurons, |_| rng.normal());
    let net = PlantedNet { w1, w2 };
    let score = net.score(&x);
    let y = score.mapv(|s| if s + noise * rng.normal() >= 0.0 { 1.0 } else { -1.0 });
    (x, y, net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_shapes_and_default_label_column() {
        let dir = std::env::temp_dir().join(format!("cronos-csv-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.csv");
        fs::write(&path, "1.0, 2.0, 1\n-1.5,0.25,-1\n\n3,4,1\n").unwrap();
        let (x, y) = load_csv(&path, None).unwrap();
        assert_eq!(x.dim(), (3, 2));
        assert_eq!(y.to_vec(), vec![1.0, -1.0, 1.0]);
        assert_eq!(x[[1, 1]], 0.25);
        let (x2, y2) = load_csv(&path, Some(0)).unwrap();
        assert_eq!(x2[[0, 0]], 2.0);
        assert_eq!(y2[0], 1.0);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn csv_errors_name_the_cell() {
        let dir = std::env::temp_dir().join(format!("cronos-csvbad-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        fs::write(&path, "1,2,3\n1,oops,3\n").unwrap();
        let err = load_csv(&path, None).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(err.contains("column 2"), "{err}");
        fs::write(&path, "1,2,3\n1,2\n").unwrap();
        let err = load_csv(&path, None).unwrap_err().to_string();
        assert!(err.contains("line 2 has 2 columns"), "{err}");
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn raw_round_trip_is_bit_identical() {
        let mut rng = Rng::new(7);
        // Quantize to f32 first so the round trip is exact.
        let x = dense::gaussian_matrix(&mut rng, 9, 4).unwrap().mapv(|v| v as f32 as f64);
        let y = Array1::from_shape_fn(9, |_| rng.normal() as f32 as f64);
        let dir = std::env::temp_dir().join(format!("cronos-raw-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.bin");
        save_raw(&path, &x, &y).unwrap();
        let (x2, y2) = load_raw(&path).unwrap();
        assert_eq!(x, x2);
        assert_eq!(y, y2);
        let bytes = fs::read(&path).unwrap();
        save_raw(&path, &x2, &y2).unwrap();
        assert_eq!(bytes, fs::read(&path).unwrap());
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn raw_rejects_truncation_and_bad_magic() {
        let dir = std::env::temp_dir().join(format!("cronos-rawbad-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.bin");
        let x = Array2::from_shape_fn((3, 2), |(i, j)| (i + j) as f64);
        let y = Array1::from_shape_fn(3, |i| i as f64);
        save_raw(&path, &x, &y).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        assert!(load_raw(&path).unwrap_err().to_string().contains("payload"));
        fs::write(&path, b"NOPE!rest").unwrap();
        assert!(load_raw(&path).unwrap_err().to_string().contains("magic"));
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn standardization_centers_and_scales() {
        let mut rng = Rng::new(11);
        let mut x = dense::gaussian_matrix(&mut rng, 50, 3).unwrap();
        for mut row in x.rows_mut() {
            row[0] = row[0] * 3.0 + 10.0;
            row[2] = 4.0;
        }
        let y = Array1::zeros(50);
        let mut ds = Dataset::unsplit(x, y);
        ds.standardize();
        for j in 0..2 {
            let col = ds.x_train.column(j);
            let m = col.sum() / 50.0;
            let v = col.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 50.0;
            assert!(m.abs() < 1e-10, "column {j} mean {m}");
            assert!((v - 1.0).abs() < 1e-10, "column {j} var {v}");
        }
        // Constant column: centered but left unscaled.
        assert!(ds.x_train.column(2).iter().all(|&v| v.abs() < 1e-12));
        assert_eq!(ds.stats.as_ref().unwrap().std[2], 1.0);
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let mut rng = Rng::new(3);
        let x = dense::gaussian_matrix(&mut rng, 20, 2).unwrap();
        let y = Array1::from_shape_fn(20, |i| i as f64);
        let ds = Dataset::split(x.clone(), y.clone(), 0.25, &mut Rng::new(9)).unwrap();
        assert_eq!(ds.x_val.nrows(), 5);
        assert_eq!(ds.x_train.nrows(), 15);
        let mut seen: Vec<f64> =
            ds.y_train.iter().chain(ds.y_val.iter()).copied().collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..20).map(|i| i as f64).collect::<Vec<_>>());
        let ds2 = Dataset::split(x, y, 0.25, &mut Rng::new(9)).unwrap();
        assert_eq!(ds.y_val, ds2.y_val);
    }

    #[test]
    fn blobs_are_linearly_separated_at_low_noise() {
        let mut rng = Rng::new(5);
        let (x, y) = gen_blobs(100, 6, 0.3, &mut rng);
        for i in 0..100 {
            let mean = x.row(i).sum() / 6.0;
            assert_eq!(mean.signum(), y[i], "row {i}");
        }
        let pos = y.iter().filter(|&&v| v == 1.0).count();
        assert_eq!(pos, 50);
    }

    #[test]
    fn planted_net_scores_its_own_labels_perfectly() {
        let mut rng = Rng::new(13);
        let (x, y, net) = gen_planted_relu(60, 4, 0.0, &mut rng);
        let score = net.score(&x);
        for i in 0..60 {
            let cls = if score[i] >= 0.0 { 1.0 } else { -1.0 };
            assert_eq!(cls, y[i], "row {i}");
        }
    }
}
