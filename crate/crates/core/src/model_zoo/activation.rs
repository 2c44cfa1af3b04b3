use serde::{Deserialize, Serialize};

/// Hidden-layer nonlinearities. The first two are of tanh form
/// (monotone, σ(0) = 1/2, limits 0 and 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    /// (tanh(x) + 1) / 2
    ShiftedTanh,
    Relu,
}

impl Activation {
    pub fn is_tanh_form(self) -> bool {
        !matches!(self, Activation::Relu)
    }

    pub fn value(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::ShiftedTanh => 0.5 * (x.tanh() + 1.0),
            Activation::Relu => x.max(0.0),
        }
    }

    /// First derivative; the ReLU kink uses σ'(0) = 0.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::ShiftedTanh => {
                let t = x.tanh();
                0.5 * (1.0 - t * t)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::ShiftedTanh => {
                let t = x.tanh();
                -t * (1.0 - t * t)
            }
            Activation::Relu => 0.0,
        }
    }
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
