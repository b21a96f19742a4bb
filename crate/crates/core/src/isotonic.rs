//! Pool-adjacent-violators: least-squares projection onto non-decreasing sequences.

/// Non-decreasing sequence closest to `y` in unweighted L2.
pub fn pava(y: &[f64]) -> Vec<f64> {
    // blocks of (mean, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        let mut mean = v;
        let mut count = 1usize;
        while let Some(&(prev_mean, prev_count)) = blocks.last() {
            if prev_mean <= mean {
                break;
            }
            blocks.pop();
            let total = prev_count + count;
            mean = (prev_mean * prev_count as f64 + mean * count as f64) / total as f64;
            count = total;
        }
        blocks.push((mean, count));
    }
    blocks
        .into_iter()
        .flat_map(|(m, c)| std::iter::repeat_n(m, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn monotone_input_unchanged() {
        let y = [0.0, 0.1, 0.1, 0.5, 2.0];
        assert_eq!(pava(&y), y.to_vec());
    }

    #[test]
    fn pools_violators() {
        assert_eq!(pava(&[1.0, 3.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(pava(&[3.0, 2.0, 1.0]), vec![2.0, 2.0, 2.0]);
        assert!(pava(&[]).is_empty());
    }

    proptest! {
        #[test]
        fn projection_properties(y in prop::collection::vec(-10.0f64..10.0, 1..100)) {
            let p = pava(&y);
            prop_assert_eq!(p.len(), y.len());
            prop_assert!(p.windows(2).all(|w| w[0] <= w[1] + 1e-12));
            // the projection preserves the total
            let (a, b): (f64, f64) = (y.iter().sum(), p.iter().sum());
            prop_assert!((a - b).abs() < 1e-9);
            // and is no farther from y than any shifted monotone candidate
            let sorted = { let mut s = y.clone(); s.sort_by(f64::total_cmp); s };
            let d = |q: &[f64]| q.iter().zip(&y).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
            let mean = a / y.len() as f64;
            prop_assert!(d(&p) <= d(&vec![mean; y.len()]) + 1e-9);
            prop_assert!(d(&p) <= d(&sorted) + 1e-9);
        }
    }
}
