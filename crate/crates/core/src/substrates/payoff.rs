use serde::{Deserialize, Serialize};

use crate::numerics::Matrix;
use crate::{MrdgError, Result};

/// Reward tables of a two-player matrix game. `row_payoff[a][b]` is the row
/// player's reward when row plays `a` and column plays `b`; `col_payoff` is
/// indexed the same way and holds the column player's reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayoffMatrix {
    pub name: String,
    row_payoff: Matrix,
    col_payoff: Matrix,
}

impl PayoffMatrix {
    pub fn new(name: impl Into<String>, row_payoff: Matrix, col_payoff: Matrix) -> Result<Self> {
        if row_payoff.rows() == 0 || row_payoff.cols() == 0 {
            return Err(MrdgError::Config("payoff matrix must have at least one action".into()));
        }
        if row_payoff.rows() != col_payoff.rows() || row_payoff.cols() != col_payoff.cols() {
            return Err(MrdgError::Config("row and column payoff shapes differ".into()));
        }
        if row_payoff.rows() != row_payoff.cols() {
            return Err(MrdgError::Config(
                "both players must share one action set (square payoff matrix)".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            row_payoff,
            col_payoff,
        })
    }

    /// A symmetric game: the column player's table is the transpose of the row
    /// player's.
    pub fn symmetric(name: impl Into<String>, row_payoff: Matrix) -> Result<Self> {
        let col = row_payoff.transpose();
        Self::new(name, row_payoff, col)
    }

    pub fn stag_hunt() -> Self {
        Self::builtin("stag-hunt", &[&[4.0, 0.0], &[2.0, 2.0]])
    }

    pub fn prisoners_dilemma() -> Self {
        Self::builtin("prisoners-dilemma", &[&[3.0, 0.0], &[5.0, 1.0]])
    }

    pub fn chicken() -> Self {
        Self::builtin("chicken", &[&[3.0, 2.0], &[5.0, 0.0]])
    }

    pub fn pure_coordination() -> Self {
        Self::symmetric("pure-coordination", Matrix::identity(3)).expect("builtin")
    }

    pub fn rationalizable_coordination() -> Self {
        Self::symmetric("rationalizable-coordination", Matrix::diag(&[1.0, 2.0, 3.0])).expect("builtin")
    }

    fn builtin(name: &str, rows: &[&[f64]]) -> Self {
        Self::symmetric(name, Matrix::from_rows(rows).expect("builtin")).expect("builtin")
    }

    pub const BUILTIN_NAMES: [&'static str; 5] = [
        "stag-hunt",
        "prisoners-dilemma",
        "chicken",
        "pure-coordination",
        "rationalizable-coordination",
    ];

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "stag-hunt" => Ok(Self::stag_hunt()),
            "prisoners-dilemma" => Ok(Self::prisoners_dilemma()),
            "chicken" => Ok(Self::chicken()),
            "pure-coordination" => Ok(Self::pure_coordination()),
            "rationalizable-coordination" => Ok(Self::rationalizable_coordination()),
            other => Err(MrdgError::Config(format!(
                "unknown game {other:?}; expected one of {:?} or \"custom\"",
                Self::BUILTIN_NAMES
            ))),
        }
    }

    pub fn actions(&self) -> usize {
        self.row_payoff.rows()
    }

    pub fn row_payoff(&self) -> &Matrix {
        &self.row_payoff
    }

    pub fn col_payoff(&self) -> &Matrix {
        &self.col_payoff
    }
}

/// Rewards `(row, col)` for one joint action.
pub fn payoff_lookup(matrix: &PayoffMatrix, row_action: usize, col_action: usize) -> Result<(f64, f64)> {
    let a = matrix.actions();
    if row_action >= a || col_action >= a {
        return Err(MrdgError::contract(
            "substrates",
            format!("actions ({row_action}, {col_action}) out of range for {a} actions"),
        ));
    }
    Ok((
        matrix.row_payoff.get(row_action, col_action),
        matrix.col_payoff.get(row_action, col_action),
    ))
}
