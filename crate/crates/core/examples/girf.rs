//! Generalized impulse responses of growth quantiles to a one-standard-
//! deviation factor shock in an estimated linear model.

use qfbart::gibbs::{run_chain, ModelSpec, OmegaMode};
use qfbart::panel::{build_panel_designs, CovariateKind, CovariateSpec};
use qfbart::scenario::{girf_factor_shock, GirfOptions};
use qfbart::synthetic::SyntheticDgpSpec;

fn main() -> qfbart::Result<()> {
    let dgp = SyntheticDgpSpec {
        countries: 2,
        periods: 81,
        own_lag: 0.5,
        loadings: vec![0.8],
        ..SyntheticDgpSpec::default()
    };
    let (panel, _) = dgp.generate(21)?;
    let spec = ModelSpec {
        covariates: CovariateSpec::new(CovariateKind::Ciss, 1),
        omega_mode: OmegaMode::Zero,
        factor_on: true,
        quantiles: vec![0.1, 0.5, 0.9],
        sweeps: 800,
        burn_in: 400,
        thin: 4,
        ..ModelSpec::default()
    };
    let designs = build_panel_designs(&panel, spec.covariates)?;
    let store = run_chain(&designs, &spec, 2)?;
    let opts = GirfOptions { horizons: 5, seed: 1, origin_stride: 4 };
    let r = girf_factor_shock(&store, &panel, 1.0, &opts)?;
    for b in r.bands.iter().filter(|b| b.country == store.countries[0]) {
        println!(
            "p={:<4} k={} median {:+.3} [{:+.3}, {:+.3}]",
            b.quantile, b.horizon, b.q50, b.q16, b.q84
        );
    }
    Ok(())
}
