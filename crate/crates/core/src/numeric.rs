//! Order-independent floating point summation.

/// Correctly rounded sum of finite `f64` values (Shewchuk's algorithm, as in
/// Python's `math.fsum`). The result does not depend on input order.
pub fn exact_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }

    let Some(&last) = partials.last() else {
        return 0.0;
    };
    let mut n = partials.len() - 1;
    let mut hi = last;
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    // half-way case: round toward the sign of the remaining partials
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        let yr = x - hi;
        if y == yr {
            hi = x;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;
    use num_traits::{ToPrimitive, Zero};
    use proptest::prelude::*;

    fn rational_sum(values: &[f64]) -> f64 {
        let mut acc = BigRational::zero();
        for v in values {
            acc += BigRational::from_float(*v).unwrap();
        }
        acc.to_f64().unwrap()
    }

    #[test]
    fn classic_cancellation() {
        assert_eq!(exact_sum([1e100, 1.0, -1e100, 1e-100]), 1.0);
        assert_eq!(exact_sum([0.1; 10]), 1.0);
        assert_eq!(exact_sum(std::iter::empty()), 0.0);
    }

    proptest! {
        #[test]
        fn matches_exact_rational(values in prop::collection::vec(-1e6..1e6f64, 0..60)) {
            prop_assert_eq!(exact_sum(values.iter().copied()), rational_sum(&values));
        }

        #[test]
        fn order_independent(mut values in prop::collection::vec(-1e3..1e3f64, 0..40)) {
            let a = exact_sum(values.iter().copied());
            values.reverse();
            prop_assert_eq!(a.to_bits(), exact_sum(values.iter().copied()).to_bits());
        }
    }
}
