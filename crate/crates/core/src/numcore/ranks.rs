/// Ranks starting at 1 with tied values sharing the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

/// Sizes of every tie group (including singletons).
pub fn tie_counts(values: &[f64]) -> Vec<usize> {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut counts = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        counts.push(j - i);
        i = j;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(midranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(midranks(&[7.0; 4]), vec![2.5; 4]);
        assert_eq!(midranks(&[1.0, 2.0, 3.0, 4.0, 5.0]), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(tie_counts(&[3.0, 1.0, 3.0, 2.0, 3.0]), vec![1, 1, 3]);
    }

    proptest! {
        #[test]
        fn rank_sum_and_permutation(values in proptest::collection::vec(0i32..6, 1..40), rot in 0usize..40) {
            let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
            let n = v.len();
            let r = midranks(&v);
            let sum: f64 = r.iter().sum();
            prop_assert!((sum - (n * (n + 1)) as f64 / 2.0).abs() < 1e-9);

            let k = rot % n;
            let mut rotated = v.clone();
            rotated.rotate_left(k);
            let mut expected = r.clone();
            expected.rotate_left(k);
            prop_assert_eq!(midranks(&rotated), expected);
        }
    }
}
