use serde::{Deserialize, Serialize};

use crate::analytics::{self, ScalarScenario};
use crate::error::{Error, Result};
use crate::error_models::{DistSpec, ScalarKernel};
use crate::exec::try_map_indices;

use super::{Estimand, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapCell {
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
    pub j: usize,
    pub value: f64,
}

/// Scenario of one map cell: `Y ~ Unif[a, b]` and `S` uniform of half-width
/// `α` around the kernel's neutral error (0 for phase, 1 otherwise).
pub fn map_scenario(kernel: &ScalarKernel, a: f64, b: f64, alpha: f64, j: usize) -> ScalarScenario {
    let centre = match kernel {
        ScalarKernel::Phase => 0.0,
        _ => 1.0,
    };
    ScalarScenario::new(
        kernel.clone(),
        DistSpec::uniform_scalar(a, b),
        DistSpec::uniform_scalar(centre - alpha, centre + alpha),
        j,
        1,
    )
}

/// Evaluate `Ψ` (psi map) or the current relative bias (relbias map) on
/// every grid cell with `a < b`, ordered by `α`, then `a`, then `b`.
pub fn run_map(cfg: &ExperimentConfig) -> Result<Vec<MapCell>> {
    cfg.validate()?;
    let relbias = match cfg.estimand {
        Estimand::PsiMap => false,
        Estimand::RelbiasMap => true,
        other => return Err(Error::config(format!("{other:?} is not a map estimand"))),
    };
    let grid = cfg.grid.as_ref().expect("validated");
    let (av, bv) = (grid.a.points(), grid.b.points());
    let mut cells = Vec::new();
    for &alpha in &grid.alphas {
        for &a in &av {
            for &b in bv.iter().filter(|&&b| b > a) {
                cells.push((alpha, a, b));
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::config("grid has no cells with a < b"));
    }
    let j = cfg.scenario.j;
    let kernel = &cfg.scenario.kernel;
    try_map_indices(cells.len(), cfg.execution, |i| {
        let (alpha, a, b) = cells[i];
        let s = map_scenario(kernel, a, b, alpha, j);
        let value = if relbias {
            analytics::relbias_current(&s)?
        } else {
            analytics::psi(&s)?
        };
        Ok(MapCell { alpha, a, b, j, value })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lab::GridSpec;

    fn cfg(kernel: ScalarKernel, estimand: Estimand, grid: GridSpec) -> ExperimentConfig {
        let s = ScalarScenario::standard_normal(kernel, 2, 1);
        ExperimentConfig::new(s, estimand, 0, 0).with_grid(grid)
    }

    #[test]
    fn additive_map_is_zero() {
        let c = cfg(ScalarKernel::Additive, Estimand::PsiMap, GridSpec::square(0.0, 2.0, 5, vec![0.5]));
        let cells = run_map(&c).unwrap();
        assert_eq!(cells.len(), 10);
        assert!(cells.iter().all(|c| c.value == 0.0));
    }

    #[test]
    fn single_cell_matches_direct_call() {
        let mut g = GridSpec::square(0.0, 8.0, 1, vec![0.95]);
        g.b.lo = 3.0;
        g.b.hi = 3.0;
        let c = cfg(ScalarKernel::Exponential, Estimand::RelbiasMap, g);
        let cells = run_map(&c).unwrap();
        assert_eq!(cells.len(), 1);
        let direct = analytics::relbias_current(&map_scenario(&ScalarKernel::Exponential, 0.0, 3.0, 0.95, 2)).unwrap();
        assert_eq!(cells[0].value, direct);
    }

    #[test]
    fn empty_grid_rejected() {
        let c = cfg(ScalarKernel::Exponential, Estimand::PsiMap, GridSpec::square(1.0, 1.0, 1, vec![0.5]));
        assert!(matches!(run_map(&c), Err(Error::Config(_))));
    }
}
