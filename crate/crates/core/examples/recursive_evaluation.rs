//! Recursive out-of-sample comparison of a linear factor model against the
//! domestic linear benchmark on a synthetic panel.

use qfbart::forecast::{crps_metric, recursive_oos, NamedModel, OosSettings, WeightScheme};
use qfbart::gibbs::{ModelSpec, OmegaMode};
use qfbart::panel::{CovariateKind, CovariateSpec};
use qfbart::synthetic::SyntheticDgpSpec;

fn short(mut spec: ModelSpec) -> ModelSpec {
    spec.quantiles = vec![0.1, 0.25, 0.5, 0.75, 0.9];
    spec.sweeps = 600;
    spec.burn_in = 300;
    spec.thin = 3;
    spec
}

fn main() -> qfbart::Result<()> {
    let dgp = SyntheticDgpSpec {
        countries: 2,
        periods: 72,
        loadings: vec![0.8],
        ..SyntheticDgpSpec::default()
    };
    let (panel, _) = dgp.generate(5)?;
    let models = vec![
        NamedModel { name: "benchmark".into(), spec: short(ModelSpec::benchmark(1)) },
        NamedModel {
            name: "linear-factor".into(),
            spec: short(ModelSpec {
                covariates: CovariateSpec::new(CovariateKind::Ciss, 1),
                omega_mode: OmegaMode::Zero,
                factor_on: true,
                ..ModelSpec::default()
            }),
        },
    ];
    let settings = OosSettings {
        horizons: vec![1],
        seed: 9,
        max_origins: Some(6),
        ..OosSettings::default()
    };
    let first = panel.dates()[panel.num_periods() - 6];
    let report = recursive_oos(&panel, &models, first, &settings)?;
    println!("{} scored forecasts, {} failed origins", report.records.len(), report.failures.len());
    for w in WeightScheme::ALL {
        let r = report.table.ratio("ALL", "linear-factor", 1, &crps_metric(w));
        println!("qw-CRPS {:<6} ratio to benchmark: {}", w.name(), r.map_or("-".into(), |v| format!("{v:.3}")));
    }
    Ok(())
}
