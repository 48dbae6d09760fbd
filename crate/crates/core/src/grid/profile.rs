use super::{GridError, Horizon};

/// Expand per-bus base loads into a `bus x period` matrix using per-period
/// shape factors: `out[b][t] = base[b] * shape[t]`.
pub fn scale_load_profile(
    base_load: &[f64],
    shape: &[f64],
    horizon: &Horizon,
) -> Result<Vec<Vec<f64>>, GridError> {
    if shape.len() != horizon.num_periods {
        return Err(GridError::ProfileLength { expected: horizon.num_periods, got: shape.len() });
    }
    if let Some((period, &value)) = shape.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(GridError::NegativeShape { period, value });
    }
    Ok(base_load
        .iter()
        .map(|&b| shape.iter().map(|&s| b * s).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn horizon(n: usize) -> Horizon {
        Horizon::new(n, 1.0).unwrap()
    }

    #[test]
    fn identity_shape_repeats_base() {
        let m = scale_load_profile(&[10.0, 20.0], &[1.0, 1.0, 1.0], &horizon(3)).unwrap();
        assert_eq!(m, vec![vec![10.0; 3], vec![20.0; 3]]);
    }

    #[test]
    fn direct_multiplication() {
        let m = scale_load_profile(&[10.0], &[0.5, 1.5], &horizon(2)).unwrap();
        assert_eq!(m, vec![vec![5.0, 15.0]]);
    }

    #[test]
    fn daily_shape_row_sums() {
        // 24 hourly factors that sum to 24.
        let shape: Vec<f64> = (0..24).map(|h| if h < 12 { 0.5 } else { 1.5 }).collect();
        assert_eq!(shape.iter().sum::<f64>(), 24.0);
        let m = scale_load_profile(&[8.0, 4.0], &shape, &horizon(24)).unwrap();
        let row_sums: Vec<f64> = m.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(row_sums, vec![8.0 * 24.0, 4.0 * 24.0]);
        let column_total: f64 = (0..24).map(|t| m[0][t] + m[1][t]).sum();
        assert_eq!(column_total, 24.0 * 12.0);
        assert_eq!(m[0][3] + m[1][3], 0.5 * 12.0);
        assert_eq!(m[0][20] + m[1][20], 1.5 * 12.0);
    }

    #[test]
    fn wrong_length_is_rejected() {
        let err = scale_load_profile(&[1.0], &[1.0, 1.0], &horizon(3)).unwrap_err();
        assert_eq!(err, GridError::ProfileLength { expected: 3, got: 2 });
    }

    #[test]
    fn negative_factor_is_rejected() {
        let err = scale_load_profile(&[1.0], &[1.0, -0.1], &horizon(2)).unwrap_err();
        assert!(matches!(err, GridError::NegativeShape { period: 1, .. }));
    }

    proptest::proptest! {
        #[test]
        fn linear_in_base(base in proptest::collection::vec(0.0f64..100.0, 1..5),
                          shape in proptest::collection::vec(0.0f64..3.0, 1..6),
                          k in 0.0f64..10.0) {
            let h = horizon(shape.len());
            let m = scale_load_profile(&base, &shape, &h).unwrap();
            let scaled: Vec<f64> = base.iter().map(|b| b * k).collect();
            let mk = scale_load_profile(&scaled, &shape, &h).unwrap();
            for (row, row_k) in m.iter().zip(&mk) {
                for (v, vk) in row.iter().zip(row_k) {
                    proptest::prop_assert!((v * k - vk).abs() <= 1e-12 * (1.0 + vk.abs()));
                }
            }
        }
    }
}
