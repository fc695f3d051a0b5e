//! Share of each quantile's shock variance due to the common factor.

use qfbart::gibbs::{run_chain, ModelSpec, OmegaMode};
use qfbart::panel::{build_panel_designs, CovariateKind, CovariateSpec};
use qfbart::scenario::variance_decomposition;
use qfbart::synthetic::SyntheticDgpSpec;

fn main() -> qfbart::Result<()> {
    let dgp = SyntheticDgpSpec {
        countries: 4,
        periods: 150,
        scale: 0.4,
        loadings: vec![0.9, 0.6, 0.3, 0.0],
        ..SyntheticDgpSpec::default()
    };
    let (panel, _) = dgp.generate(17)?;
    let spec = ModelSpec {
        covariates: CovariateSpec::new(CovariateKind::Ciss, 1),
        omega_mode: OmegaMode::Zero,
        factor_on: true,
        quantiles: vec![0.1, 0.5, 0.9],
        sweeps: 1500,
        burn_in: 750,
        thin: 5,
        ..ModelSpec::default()
    };
    let designs = build_panel_designs(&panel, spec.covariates)?;
    let store = run_chain(&designs, &spec, 8)?;
    for s in variance_decomposition(&store)?.summary() {
        println!("{} p={:<4} share {:.3} [{:.3}, {:.3}]", s.country, s.quantile, s.q50, s.q16, s.q84);
    }
    Ok(())
}
