use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::Condition;

pub type PanelFn = dyn Fn(&Condition, &mut DMatrix<f64>) + Send + Sync;

#[derive(Clone)]
pub enum PanelKind {
    /// `G_x = scale * I` for every condition (`dG = d`).
    Identity { scale: f64 },
    /// `d = 1`, gene `j` outputs the condition coordinate `columns[j]`.
    DataColumns { columns: Vec<usize> },
    /// User callback filling the `d x dG` matrix in place.
    Custom(Arc<PanelFn>),
}

impl fmt::Debug for PanelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PanelKind::Identity { scale } => write!(f, "Identity {{ scale: {scale} }}"),
            PanelKind::DataColumns { columns } => write!(f, "DataColumns {{ {columns:?} }}"),
            PanelKind::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Evaluator `x -> G_x`, the `d x dG` matrix whose column `j` is the output
/// of gene `j` on condition `x`.
#[derive(Debug, Clone)]
pub struct GenePanel {
    d: usize,
    dg: usize,
    kind: PanelKind,
}

impl GenePanel {
    pub fn identity(d: usize, scale: f64) -> Result<Self> {
        if d == 0 || !scale.is_finite() || scale == 0.0 {
            return Err(Error::InvalidArgument(
                "identity panel needs d > 0 and a finite nonzero scale".into(),
            ));
        }
        Ok(Self {
            d,
            dg: d,
            kind: PanelKind::Identity { scale },
        })
    }

    pub fn data_columns(columns: Vec<usize>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidArgument("data-column panel needs columns".into()));
        }
        Ok(Self {
            d: 1,
            dg: columns.len(),
            kind: PanelKind::DataColumns { columns },
        })
    }

    pub fn custom(
        d: usize,
        dg: usize,
        f: impl Fn(&Condition, &mut DMatrix<f64>) + Send + Sync + 'static,
    ) -> Result<Self> {
        if d == 0 || dg == 0 {
            return Err(Error::InvalidArgument("panel dimensions must be positive".into()));
        }
        Ok(Self {
            d,
            dg,
            kind: PanelKind::Custom(Arc::new(f)),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn dg(&self) -> usize {
        self.dg
    }

    pub fn kind(&self) -> &PanelKind {
        &self.kind
    }

    /// True when `G_x` does not depend on `x`.
    pub fn is_constant(&self) -> bool {
        matches!(self.kind, PanelKind::Identity { .. })
    }

    /// Fills `out` (resized to `d x dG` if needed) with `G_x`.
    pub fn evaluate_into(&self, x: &Condition, out: &mut DMatrix<f64>) {
        if out.nrows() != self.d || out.ncols() != self.dg {
            *out = DMatrix::zeros(self.d, self.dg);
        }
        match &self.kind {
            PanelKind::Identity { scale } => {
                out.fill(0.0);
                out.fill_diagonal(*scale);
            }
            PanelKind::DataColumns { columns } => {
                for (j, c) in columns.iter().enumerate() {
                    out[(0, j)] = x.x[*c];
                }
            }
            PanelKind::Custom(f) => f(x, out),
        }
    }

    pub fn evaluate(&self, x: &Condition) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.d, self.dg);
        self.evaluate_into(x, &mut out);
        out
    }

    /// Same as [`Self::evaluate`] but rejects non-finite outputs and
    /// out-of-range data columns.
    pub fn evaluate_checked(&self, x: &Condition) -> Result<DMatrix<f64>> {
        if let PanelKind::DataColumns { columns } = &self.kind {
            if let Some(c) = columns.iter().find(|c| **c >= x.dim()) {
                return Err(Error::InvalidArgument(format!(
                    "panel reads column {c} of a {}-dimensional condition",
                    x.dim()
                )));
            }
        }
        let g = self.evaluate(x);
        if g.iter().all(|v| v.is_finite()) {
            Ok(g)
        } else {
            Err(Error::Model("gene panel produced non-finite output".into()))
        }
    }

    /// Organism expression `G_x c`.
    pub fn express(&self, x: &Condition, coords: &DVector<f64>) -> DVector<f64> {
        self.evaluate(x) * coords
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_panel_is_scaled_identity() {
        let p = GenePanel::identity(3, 2.0).unwrap();
        let g = p.evaluate(&Condition::new(vec![0.1]).unwrap());
        assert_eq!(g, DMatrix::identity(3, 3) * 2.0);
        assert!(p.is_constant());
    }

    #[test]
    fn data_columns_panel_reads_row() {
        let p = GenePanel::data_columns(vec![1, 0]).unwrap();
        let x = Condition::new(vec![3.0, -1.0]).unwrap();
        let g = p.evaluate(&x);
        assert_eq!(g.nrows(), 1);
        assert_eq!(g[(0, 0)], -1.0);
        assert_eq!(g[(0, 1)], 3.0);
        let e = p.express(&x, &DVector::from_vec(vec![1.0, 1.0]));
        assert_eq!(e[0], 2.0);
        assert!(p
            .evaluate_checked(&Condition::new(vec![1.0]).unwrap())
            .is_err());
    }

    #[test]
    fn custom_panel_non_finite_is_rejected() {
        let p = GenePanel::custom(1, 1, |_, out| out[(0, 0)] = f64::INFINITY).unwrap();
        assert!(p
            .evaluate_checked(&Condition::new(vec![0.0]).unwrap())
            .is_err());
    }
}
