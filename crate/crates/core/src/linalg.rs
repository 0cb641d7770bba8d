//! Small dense vector helpers shared by the geometry and solver code.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[inline]
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Solves the square system `m x = rhs` (row-major `m`), `None` when singular.
pub fn solve_square(m: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = rhs.len();
    let a = nalgebra::DMatrix::from_row_slice(n, n, m);
    let b = nalgebra::DVector::from_column_slice(rhs);
    let lu = a.lu();
    if !lu.is_invertible() {
        return None;
    }
    let x = lu.solve(&b)?;
    if x.iter().all(|v| v.is_finite()) {
        Some(x.iter().copied().collect())
    } else {
        None
    }
}

/// Visits all `k`-subsets of `0..n` in lexicographic order.
pub fn for_each_combination(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combinations_are_enumerated_once() {
        let mut seen = Vec::new();
        for_each_combination(5, 3, |c| seen.push(c.to_vec()));
        assert_eq!(seen.len(), 10);
        assert_eq!(seen[0], vec![0, 1, 2]);
        assert_eq!(seen[9], vec![2, 3, 4]);
        let mut single = 0;
        for_each_combination(3, 3, |_| single += 1);
        assert_eq!(single, 1);
        let mut none = 0;
        for_each_combination(2, 3, |_| none += 1);
        assert_eq!(none, 0);
    }

    #[test]
    fn square_solve_detects_singular() {
        assert!(solve_square(&[1.0, 2.0, 2.0, 4.0], &[1.0, 2.0]).is_none());
        let x = solve_square(&[2.0, 0.0, 0.0, 4.0], &[2.0, 2.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 0.5).abs() < 1e-15);
    }
}
