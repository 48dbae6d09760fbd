use anyhow::{bail, Context, Result};

/// Read a price file: a header row, then `period,price` with periods
/// numbered 1..=T in order.
pub fn parse_prices(text: &str) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().context("prices: missing header row")?.clone();
    if headers.len() != 2 {
        bail!("prices: header must have two columns (period, price), got {}", headers.len());
    }
    if headers.iter().all(|h| h.parse::<f64>().is_ok()) {
        bail!("prices: first row looks numeric; a header row is required");
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.with_context(|| format!("prices: row {}", i + 2))?;
        if rec.len() != 2 {
            bail!("prices: row {} has {} columns, expected 2", i + 2, rec.len());
        }
        let period: usize = rec[0].parse().with_context(|| format!("prices: row {}: bad period {:?}", i + 2, &rec[0]))?;
        if period != i + 1 {
            bail!("prices: row {} has period {period}, expected {}", i + 2, i + 1);
        }
        let price: f64 = rec[1].parse().with_context(|| format!("prices: row {}: bad price {:?}", i + 2, &rec[1]))?;
        if !price.is_finite() {
            bail!("prices: row {}: price must be finite", i + 2);
        }
        out.push(price);
    }
    if out.is_empty() {
        bail!("prices: no rows after the header");
    }
    Ok(out)
}
