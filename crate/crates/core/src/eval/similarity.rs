use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{invalid, LcmError, Result};

/// Cosine similarities between label representations.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub label_names: Vec<String>,
    /// Row-major `C x C`.
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.label_names.len()
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.size() + k]
    }

    /// Mean off-diagonal similarity within groups and between groups, given
    /// each class's group index. `None` when either set of pairs is empty.
    pub fn group_contrast(&self, group_of: &[usize]) -> Option<(f64, f64)> {
        let (mut within, mut between) = (Vec::new(), Vec::new());
        for j in 0..self.size() {
            for k in j + 1..self.size() {
                if group_of[j] == group_of[k] {
                    within.push(self.get(j, k));
                } else {
                    between.push(self.get(j, k));
                }
            }
        }
        if within.is_empty() || between.is_empty() {
            return None;
        }
        Some((super::stats::mean(&within), super::stats::mean(&between)))
    }

    /// Header row and column of label names.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label");
        for n in &self.label_names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for (j, n) in self.label_names.iter().enumerate() {
            s.push_str(n);
            for k in 0..self.size() {
                let _ = write!(s, ",{}", self.get(j, k));
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// `cos(V_l[j], V_l[k])` for every pair of rows.
pub fn label_similarity_matrix(labels: &Tensor, label_names: &[String]) -> Result<SimilarityMatrix> {
    let (c, _) = labels.dims2().ok_or_else(|| invalid("label matrix must be 2-D"))?;
    if label_names.len() != c {
        return Err(invalid(format!("{} names for {c} label rows", label_names.len())));
    }
    let norms: Vec<f64> = labels.rows().map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    if let Some(k) = norms.iter().position(|&n| n == 0.0) {
        return Err(LcmError::ZeroNorm(label_names[k].clone()));
    }
    let mut values = vec![0.0; c * c];
    for j in 0..c {
        for k in 0..c {
            values[j * c + k] = if j == k {
                1.0
            } else {
                let dot: f64 = labels.row(j).iter().zip(labels.row(k)).map(|(a, b)| a * b).sum();
                (dot / (norms[j] * norms[k])).clamp(-1.0, 1.0)
            };
        }
    }
    Ok(SimilarityMatrix { label_names: label_names.to_vec(), values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(c: usize) -> Vec<String> {
        (0..c).map(|k| format!("l{k}")).collect()
    }

    #[test]
    fn unit_diagonal_symmetric_bounded() {
        let v = Tensor::from_rows(&[vec![0.3, -0.2, 0.9], vec![1.0, 0.4, -0.5], vec![-0.7, 0.1, 0.2]]).unwrap();
        let s = label_similarity_matrix(&v, &names(3)).unwrap();
        for j in 0..3 {
            assert_eq!(s.get(j, j), 1.0);
            for k in 0..3 {
                assert!((s.get(j, k) - s.get(k, j)).abs() < 1e-12);
                assert!(s.get(j, k).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn orthogonal_and_scaled_rows() {
        let v = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        let s = label_similarity_matrix(&v, &names(3)).unwrap();
        assert_eq!(s.get(0, 1), 0.0);
        assert!((s.get(0, 2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_row_names_label() {
        let v = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        match label_similarity_matrix(&v, &names(2)) {
            Err(LcmError::ZeroNorm(n)) => assert_eq!(n, "l1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_and_contrast() {
        let v = Tensor::from_rows(&[vec![1.0, 0.1], vec![0.9, 0.2], vec![-0.1, 1.0], vec![0.0, 0.8]]).unwrap();
        let s = label_similarity_matrix(&v, &names(4)).unwrap();
        let (w, b) = s.group_contrast(&[0, 0, 1, 1]).unwrap();
        assert!(w > b);
        let csv = s.to_csv();
        assert!(csv.starts_with("label,l0,l1,l2,l3\nl0,1,"));
        assert_eq!(csv.lines().count(), 5);
    }
}
