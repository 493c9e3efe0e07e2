/// Cost given to padding cells when squaring a rectangular matrix.
pub const PAD_COST: f64 = 1e6;

/// Minimum-cost one-to-one assignment.
///
/// `cost` is row-major with rows of equal length. Rectangular inputs are
/// padded to square with [`PAD_COST`]; only pairs of real cells are
/// returned, sorted by row.
///
/// # Panics
///
/// On ragged rows or non-finite costs.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    assert!(cost.iter().all(|r| r.len() == cols), "ragged cost matrix");
    assert!(
        cost.iter().flatten().all(|c| c.is_finite()),
        "non-finite cost"
    );
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let n = rows.max(cols);
    let a = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            cost[i][j]
        } else {
            PAD_COST
        }
    };

    // Shortest augmenting path with row/column potentials, 1-based with a
    // virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = a(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter(|&j| row_of[j] != 0)
        .map(|j| (row_of[j] - 1, j - 1))
        .filter(|&(i, j)| i < rows && j < cols)
        .collect();
    pairs.sort_unstable();
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(i, j)| cost[i][j]).sum()
    }

    #[test]
    fn trivial_and_small() {
        assert_eq!(hungarian(&[vec![5.0]]), vec![(0, 0)]);
        let c = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let p = hungarian(&c);
        assert_eq!(p, vec![(0, 0), (1, 1)]);
        assert_eq!(total(&c, &p), 2.0);
        assert!(hungarian(&[]).is_empty());
    }

    #[test]
    fn rectangular_inputs() {
        let wide = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0]];
        let p = hungarian(&wide);
        assert_eq!(p.len(), 2);
        assert_eq!(total(&wide, &p), 3.0);
        let tall = vec![vec![4.0, 2.0], vec![1.0, 0.0], vec![3.0, 5.0]];
        let p = hungarian(&tall);
        assert_eq!(p.len(), 2);
        assert_eq!(total(&tall, &p), 3.0);
    }

    #[test]
    fn negative_costs() {
        let c = vec![vec![-3.0, 0.0], vec![0.0, -3.0]];
        assert_eq!(total(&c, &hungarian(&c)), -6.0);
    }
}
