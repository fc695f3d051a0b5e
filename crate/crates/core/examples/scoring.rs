//! Quantile scores and quantile-weighted CRPS, before and after monotone
//! rearrangement of a crossing forecast.

use qfbart::forecast::{quantile_score, QuantileForecast, WeightScheme};

fn main() -> qfbart::Result<()> {
    let grid = vec![0.1, 0.25, 0.5, 0.75, 0.9];
    // the 0.25 and 0.5 quantiles cross
    let raw = QuantileForecast::new(grid, vec![-2.0, 0.4, 0.1, 1.0, 1.8])?;
    let sorted = raw.rearranged();
    let y = -2.5;
    println!("realized {y}; monotone raw {} rearranged {}", raw.is_monotone(), sorted.is_monotone());
    for (p, q) in raw.grid.iter().zip(&raw.values) {
        println!("QS_{p:<4} at q={q:+.2}: {:.4}", quantile_score(*q, y, *p));
    }
    for w in WeightScheme::ALL {
        println!("qw-CRPS {:<6} raw {:.4} rearranged {:.4}", w.name(), raw.crps(y, w), sorted.crps(y, w));
    }
    Ok(())
}
