//! Estimates the quantile factor model with an estimated tree weight on a
//! small synthetic panel, then saves and reloads the draw store.

use qfbart::diagnostics::{mean, quantile};
use qfbart::gibbs::{run_chain, ModelSpec, OmegaMode};
use qfbart::panel::{build_panel_designs, CovariateKind, CovariateSpec};
use qfbart::store::{load_store, save_store};
use qfbart::synthetic::{SyntheticDgpSpec, TailTerm};

fn main() -> qfbart::Result<()> {
    let dgp = SyntheticDgpSpec {
        countries: 3,
        periods: 100,
        loadings: vec![0.6],
        tail: Some(TailTerm { threshold: 1.0, kappa: 2.5 }),
        ..SyntheticDgpSpec::default()
    };
    let (panel, _) = dgp.generate(3)?;
    let mut spec = ModelSpec {
        covariates: CovariateSpec::new(CovariateKind::Ciss, 1),
        omega_mode: OmegaMode::Estimated,
        factor_on: true,
        quantiles: vec![0.05, 0.5, 0.95],
        sweeps: 1200,
        burn_in: 600,
        thin: 6,
        ..ModelSpec::default()
    };
    spec.hyper.tree.num_trees = 30;
    let designs = build_panel_designs(&panel, spec.covariates)?;
    let store = run_chain(&designs, &spec, 11)?;
    println!("{} draws of {}", store.num_draws, spec.label());
    for (j, p) in spec.quantiles.iter().enumerate() {
        for (i, c) in store.countries.iter().enumerate() {
            let eq = store.equation(i, j);
            println!(
                "p={p:<4} {c}: omega {:.2} [{:.2}, {:.2}]  lambda {:+.2}",
                mean(&eq.omega),
                quantile(&eq.omega, 0.05),
                quantile(&eq.omega, 0.95),
                mean(&eq.loading)
            );
        }
    }
    let dir = std::env::temp_dir().join("qfbart-estimate");
    let manifest = save_store(&store, &dir)?;
    let back = load_store(&dir)?;
    assert_eq!(back, store);
    println!("saved {} segments, fingerprint {}", manifest.segments.len(), manifest.fingerprint);
    Ok(())
}
