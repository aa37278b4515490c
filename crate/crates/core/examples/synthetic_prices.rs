//! Regenerates tests/fixtures/synthetic_prices.csv: a GARCH(1,1) path with
//! 1% innovation outliers of size 5, turned into daily closing prices.
//!
//!     cargo run -p garch-dpd --example synthetic_prices

use garch_dpd::{simulate, ContaminationSpec, GarchParams, SimulationOptions};

/// Days since 1970-01-01 to (year, month, day), proleptic Gregorian.
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (yoe + era * 400 + (m <= 2) as i64, m, d)
}

fn main() {
    let theta = GarchParams::garch11(1.0, 0.15, 0.8).expect("valid parameters");
    let opts = SimulationOptions {
        contamination: ContaminationSpec::new(0.01, 5.0).expect("valid contamination"),
        ..SimulationOptions::seeded(2024)
    };
    let returns = simulate(&theta, 1218, &opts).expect("simulation succeeds");
    let mut price: f64 = 30_000.0;
    let start = 18_628; // 2021-01-01
    let mut out = String::from("date,close\n");
    for t in 0..=returns.len() {
        if t > 0 {
            price *= (returns.values()[t - 1] / 100.0).exp();
        }
        let (y, m, d) = civil_from_days(start + t as i64);
        out.push_str(&format!("{y:04}-{m:02}-{d:02},{price}\n"));
    }
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/synthetic_prices.csv");
    std::fs::write(path, out).expect("fixture written");
    println!("wrote {path}");
}
