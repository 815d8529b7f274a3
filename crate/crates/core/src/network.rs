//! Two-layer ReLU and gated-ReLU networks and their exact evaluation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::loss::LossModel;

#[derive(Clone, Debug, PartialEq)]
pub struct ReluNetwork {
    pub w1: DMatrix<f64>,
    pub w2: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatedReluNetwork {
    pub h: DMatrix<f64>,
    pub w1: DMatrix<f64>,
    pub w2: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Network {
    Relu(ReluNetwork),
    Gated(GatedReluNetwork),
}

#[derive(Serialize, Deserialize)]
struct NetworkJson {
    #[serde(rename = "H", skip_serializing_if = "Option::is_none", default)]
    h: Option<Vec<Vec<f64>>>,
    #[serde(rename = "W1")]
    w1: Vec<Vec<f64>>,
    w2: Vec<f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(Error::MalformedRow { row: i + 1, expected: ncols, found: r.len() });
        }
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl Network {
    pub fn w1(&self) -> &DMatrix<f64> {
        match self {
            Network::Relu(n) => &n.w1,
            Network::Gated(n) => &n.w1,
        }
    }

    pub fn w2(&self) -> &DVector<f64> {
        match self {
            Network::Relu(n) => &n.w2,
            Network::Gated(n) => &n.w2,
        }
    }

    pub fn width(&self) -> usize {
        self.w2().len()
    }

    /// `R(Θ) = ½(‖W₁‖²_F + ‖w₂‖²)`.
    pub fn weight_decay(&self) -> f64 {
        0.5 * (self.w1().norm_squared() + self.w2().norm_squared())
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let w1 = self.w1();
        if x.ncols() != w1.nrows() || w1.ncols() != self.w2().len() {
            return Err(Error::DimensionMismatch(format!(
                "data has d = {}, network has W1 {}×{} and w2 of length {}",
                x.ncols(),
                w1.nrows(),
                w1.ncols(),
                self.w2().len()
            )));
        }
        let pre = x * w1;
        let mut out = DVector::zeros(x.nrows());
        match self {
            Network::Relu(n) => {
                for i in 0..x.nrows() {
                    for k in 0..n.w2.len() {
                        out[i] += pre[(i, k)].max(0.0) * n.w2[k];
                    }
                }
            }
            Network::Gated(n) => {
                if n.h.shape() != w1.shape() {
                    return Err(Error::DimensionMismatch("H and W1 shapes differ".into()));
                }
                let gates = x * &n.h;
                for i in 0..x.nrows() {
                    for k in 0..n.w2.len() {
                        if gates[(i, k)] >= 0.0 {
                            out[i] += pre[(i, k)] * n.w2[k];
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let j = NetworkJson {
            h: match self {
                Network::Gated(n) => Some(rows_of(&n.h)),
                Network::Relu(_) => None,
            },
            w1: rows_of(self.w1()),
            w2: self.w2().iter().copied().collect(),
        };
        serde_json::to_value(j).expect("network serializes")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let j: NetworkJson = serde_json::from_value(v.clone())?;
        let m = j.w2.len();
        let w1 = from_rows(&j.w1, m)?;
        let w2 = DVector::from_vec(j.w2);
        match j.h {
            None => Ok(Network::Relu(ReluNetwork { w1, w2 })),
            Some(h) => {
                let h = from_rows(&h, m)?;
                Ok(Network::Gated(GatedReluNetwork { h, w1, w2 }))
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Evaluation {
    pub objective: f64,
    pub weight_decay: f64,
    /// `yᵢ f(xᵢ)`.
    pub margins: Vec<f64>,
    pub feasible: bool,
}

pub const MARGIN_SLACK: f64 = 1e-9;

pub fn evaluate_network(net: &Network, ds: &Dataset, loss: &LossModel) -> Result<Evaluation> {
    let f = net.forward(&ds.x)?;
    let margins: Vec<f64> = (0..ds.n()).map(|i| ds.y[i] * f[i]).collect();
    let r = net.weight_decay();
    let feasible = margins.iter().all(|&m| m >= 1.0 - MARGIN_SLACK);
    let objective = match loss {
        LossModel::MaxMargin => r,
        _ => margins.iter().map(|&m| loss.loss(m)).sum::<f64>() + loss.beta() * r,
    };
    Ok(Evaluation { objective, weight_decay: r, margins, feasible })
}

/// One neuron per nonzero `uₖ`: first-layer column `uₖ/√‖uₖ‖`, output weight
/// `sₖ√‖uₖ‖`, so `R(Θ) = Σ‖uₖ‖`.
pub fn balanced_columns(us: &[(DVector<f64>, f64)], d: usize) -> (DMatrix<f64>, DVector<f64>, Vec<usize>) {
    let keep: Vec<usize> = (0..us.len()).filter(|&k| us[k].0.norm() > 0.0).collect();
    let mut w1 = DMatrix::zeros(d, keep.len());
    let mut w2 = DVector::zeros(keep.len());
    for (c, &k) in keep.iter().enumerate() {
        let (u, s) = &us[k];
        let r = u.norm().sqrt();
        w1.set_column(c, &(u / r));
        w2[c] = s * r;
    }
    (w1, w2, keep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> Dataset {
        Dataset::from_rows(&[vec![1.0], vec![-1.0]], &[1.0, -1.0]).unwrap()
    }

    #[test]
    fn zero_network_hinge() {
        let net = Network::Relu(ReluNetwork { w1: DMatrix::zeros(1, 1), w2: DVector::zeros(1) });
        let e = evaluate_network(&net, &line(), &LossModel::Hinge { beta: 0.3 }).unwrap();
        assert_eq!(e.objective, 2.0);
    }

    #[test]
    fn rescaling_keeps_function_changes_decay() {
        let w1 = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.3, 2.0]);
        let w2 = DVector::from_vec(vec![0.7, -1.2]);
        let a = Network::Relu(ReluNetwork { w1: w1.clone(), w2: w2.clone() });
        let b = Network::Relu(ReluNetwork { w1: w1 * 2.0, w2: w2 * 0.5 });
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -0.4, 1.0, 0.3, -2.0]);
        assert!((a.forward(&x).unwrap() - b.forward(&x).unwrap()).norm() < 1e-14);
        assert!((a.weight_decay() - b.weight_decay()).abs() > 1e-3);
    }

    #[test]
    fn json_round_trip_and_dims() {
        let g = Network::Gated(GatedReluNetwork {
            h: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            w1: DMatrix::from_row_slice(2, 1, &[0.5, 0.5]),
            w2: DVector::from_vec(vec![2.0]),
        });
        assert_eq!(Network::from_json(&g.to_json()).unwrap(), g);
        let r = Network::Relu(ReluNetwork { w1: DMatrix::zeros(3, 1), w2: DVector::zeros(1) });
        assert!(r.to_json().get("H").is_none());
        assert!(matches!(evaluate_network(&r, &line(), &LossModel::MaxMargin), Err(Error::DimensionMismatch(_))));
    }
}
