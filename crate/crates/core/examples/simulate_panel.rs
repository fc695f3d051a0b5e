//! Draws a synthetic panel whose lower tail widens under tight financial
//! conditions and writes it with its true conditional quantiles.

use qfbart::synthetic::{SyntheticDgpSpec, TailTerm};

fn main() -> qfbart::Result<()> {
    let dgp = SyntheticDgpSpec {
        countries: 4,
        periods: 80,
        loadings: vec![0.7],
        tail: Some(TailTerm { threshold: 1.0, kappa: 2.0 }),
        ..SyntheticDgpSpec::default()
    };
    let (panel, truth) = dgp.generate(7)?;
    let dir = std::env::temp_dir().join("qfbart-simulate");
    std::fs::create_dir_all(&dir)?;
    panel.write_csv(&dir.join("panel.csv"))?;
    truth.write_json(&dir.join("panel.truth.json"))?;
    println!("{} countries x {} quarters -> {}", panel.num_countries(), panel.num_periods(), dir.display());
    let last = *panel.dates().last().expect("non-empty panel");
    for c in panel.countries() {
        let q05 = truth.quantile_at(c, last, 0.05).unwrap_or(f64::NAN);
        let q50 = truth.quantile_at(c, last, 0.5).unwrap_or(f64::NAN);
        println!("{c} {last}: true 5% quantile {q05:.3}, median {q50:.3}");
    }
    Ok(())
}
