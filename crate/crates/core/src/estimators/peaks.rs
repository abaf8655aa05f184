//! Peak selection on a grid spectrum.

/// Indices of interior local maxima. A run of equal values counts as one
/// peak when both outside neighbours exist and are strictly lower; the run
/// reports its leftmost index. A spectrum rising into the first or last grid
/// point is a lobe cut off by the field of view, not a peak.
pub fn local_maxima(p: &[f64]) -> Vec<usize> {
    let n = p.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && p[j + 1] == p[i] {
            j += 1;
        }
        let left_lower = i > 0 && p[i - 1] < p[i];
        let right_lower = j + 1 < n && p[j + 1] < p[i];
        if left_lower && right_lower {
            out.push(i);
        }
        i = j + 1;
    }
    out
}

/// Indices of the `l` largest local maxima, padded with the largest
/// remaining entries when there are fewer peaks. Sorted ascending.
pub fn pick_peak_indices(p: &[f64], l: usize) -> Vec<usize> {
    let by_height = |a: &usize, b: &usize| p[*b].total_cmp(&p[*a]).then(a.cmp(b));
    let mut peaks = local_maxima(p);
    peaks.sort_by(by_height);
    peaks.truncate(l);
    if peaks.len() < l {
        let mut rest: Vec<usize> = (0..p.len()).filter(|i| !peaks.contains(i)).collect();
        rest.sort_by(by_height);
        peaks.extend(rest.into_iter().take(l - peaks.len()));
    }
    peaks.sort_unstable();
    peaks
}

/// Angles of [`pick_peak_indices`] on `grid`.
pub fn pick_peaks(p: &[f64], grid: &[f64], l: usize) -> Vec<f64> {
    assert_eq!(p.len(), grid.len(), "spectrum and grid differ in length");
    pick_peak_indices(p, l).into_iter().map(|i| grid[i]).collect()
}

/// Sum of `p` over the lobe around `peak`: outwards while the values do not
/// increase.
pub fn lobe_mass(p: &[f64], peak: usize) -> f64 {
    let mut lo = peak;
    while lo > 0 && p[lo - 1] <= p[lo] {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < p.len() && p[hi + 1] <= p[hi] {
        hi += 1;
    }
    p[lo..=hi].iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_spike() {
        let mut p = vec![0.0; 11];
        p[4] = 3.0;
        let grid: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        assert_eq!(pick_peaks(&p, &grid, 1), vec![grid[4]]);
    }

    #[test]
    fn two_equal_spikes() {
        let mut p = vec![0.0; 10];
        p[2] = 1.0;
        p[7] = 1.0;
        assert_eq!(pick_peak_indices(&p, 2), vec![2, 7]);
    }

    #[test]
    fn plateau_reports_leftmost_index() {
        let p = [0.0, 1.0, 2.0, 2.0, 2.0, 1.0, 0.0];
        assert_eq!(local_maxima(&p), vec![2]);
        assert_eq!(pick_peak_indices(&p, 1), vec![2]);
        // shoulder is not a peak
        let p = [0.0, 2.0, 2.0, 3.0, 0.0];
        assert_eq!(local_maxima(&p), vec![3]);
    }

    #[test]
    fn endpoints_and_padding() {
        let p = [5.0, 1.0, 0.0, 0.5, 4.0];
        assert!(local_maxima(&p).is_empty());
        assert_eq!(pick_peak_indices(&p, 1), vec![0]);
        let p = [5.0, 1.0, 2.0, 0.5, 4.0];
        assert_eq!(pick_peak_indices(&p, 1), vec![2]);
        // no peak, pad with largest remaining
        let p = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(pick_peak_indices(&p, 3), vec![2, 3, 4]);
        let p = [1.0; 4];
        assert_eq!(pick_peak_indices(&p, 2), vec![0, 1]);
    }

    proptest! {
        #[test]
        fn output_sorted_distinct_and_sized(p in prop::collection::vec(0.0f64..1.0, 1..60), l in 1usize..8) {
            let idx = pick_peak_indices(&p, l);
            prop_assert_eq!(idx.len(), l.min(p.len()));
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn picks_are_the_tallest_peaks(p in prop::collection::vec(0.0f64..1.0, 3..60), l in 1usize..4) {
            let peaks = local_maxima(&p);
            let idx = pick_peak_indices(&p, l);
            if peaks.len() >= l {
                let lowest_chosen = idx.iter().map(|&i| p[i]).fold(f64::INFINITY, f64::min);
                for &q in peaks.iter().filter(|q| !idx.contains(q)) {
                    prop_assert!(p[q] <= lowest_chosen);
                }
                prop_assert!(idx.iter().all(|i| peaks.contains(i)));
            }
        }
    }

    #[test]
    fn lobe_mass_stops_at_minima() {
        let p = [0.0, 1.0, 3.0, 2.0, 0.5, 0.7, 4.0, 0.1];
        assert_eq!(lobe_mass(&p, 2), 6.5);
        assert!((lobe_mass(&p, 6) - 5.3).abs() < 1e-12);
        assert_eq!(lobe_mass(&[2.0, 2.0, 1.0], 0), 5.0);
    }
}
