//! One-dimensional discrete Gaussian sums.
//!
//! `S(a) = Σ_{x∈ℤ} e^{−(x−a)²/2}` and its second-moment companion
//! `C₂(a) = Σ_{x∈ℤ} (x−a)² e^{−(x−a)²/2}`. Both are periodic in `a` with
//! period 1, so everything is evaluated on the fractional part.

const TERM_FLOOR: f64 = 1e-16;

fn frac(a: f64) -> f64 {
    let f = a - a.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

/// Sum of `g(x − a)` over `x ∈ ℤ` for a function concentrated near 0,
/// walking outward from the nearest lattice points until terms drop
/// below `1e-16` of the running sum.
fn lattice_sum(a: f64, g: impl Fn(f64) -> f64) -> f64 {
    let f = frac(a);
    // Offsets x − a for x ∈ ℤ are exactly {k − f : k ∈ ℤ}.
    let mut sum = g(-f) + g(1.0 - f);
    let mut k = 1;
    loop {
        let up = g(1.0 - f + k as f64);
        let down = g(-f - k as f64);
        sum += up + down;
        k += 1;
        if (up + down) <= TERM_FLOOR * sum && k > 3 {
            break;
        }
    }
    sum
}

/// `C₀(t) = Σ_{x ∈ ℤ − t} e^{−x²/2}`.
pub fn c0(t: f64) -> f64 {
    lattice_sum(t, |y| (-0.5 * y * y).exp())
}

/// `C₂(t) = Σ_{x ∈ ℤ − t} x² e^{−x²/2}`.
pub fn c2(t: f64) -> f64 {
    lattice_sum(t, |y| y * y * (-0.5 * y * y).exp())
}

/// Shannon entropy of the `d`-dimensional discrete Gaussian tilted so that
/// its profile is centred at `t` in every coordinate:
/// `d · (ln C₀({t}) + C₂({t}) / (2 C₀({t})))`.
pub fn gaussian_entropy_exact(t: f64, d: usize) -> f64 {
    let z0 = c0(t);
    d as f64 * (z0.ln() + c2(t) / (2.0 * z0))
}

/// Same quantity for an arbitrary per-axis centre; entropy tensorizes.
pub fn gaussian_entropy_centered(center: &[f64]) -> f64 {
    center.iter().map(|&c| gaussian_entropy_exact(c, 1)).sum()
}

/// Mass of the 1-D discrete Gaussian centred at `c` lying strictly farther
/// than `radius` from `c`.
pub fn tail_mass(c: f64, radius: f64) -> f64 {
    let total = c0(c);
    let inside = lattice_sum(c, |y| if y.abs() <= radius { (-0.5 * y * y).exp() } else { 0.0 });
    ((total - inside) / total).max(0.0)
}

/// `ln Σ_{x∈ℤ} e^{−(x−c)²/2 + t x} − ln Σ_{x∈ℤ} e^{−(x−c)²/2}`.
pub fn log_mgf_1d(c: f64, t: f64) -> f64 {
    c0(c + t).ln() - c0(c).ln() + t * c + 0.5 * t * t
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constants_at_integer_shift() {
        // Both sums are ≈ √(2π) ≈ 2.5066 by Poisson summation.
        assert_abs_diff_eq!(c0(0.0), 2.5066, epsilon = 1e-3);
        assert_abs_diff_eq!(c2(0.0), 2.5066, epsilon = 1e-3);
        let h = gaussian_entropy_exact(0.0, 1);
        assert_abs_diff_eq!(h, 1.4, epsilon = 0.05);
    }

    #[test]
    fn periodic_and_reflection_symmetric() {
        for i in 0..20 {
            let t = i as f64 * 0.05;
            assert_abs_diff_eq!(
                gaussian_entropy_exact(t, 1),
                gaussian_entropy_exact(t + 1.0, 1),
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(c0(t), c0(1.0 - t), epsilon = 1e-12);
            assert_abs_diff_eq!(c2(t), c2(1.0 - t), epsilon = 1e-12);
        }
    }

    #[test]
    fn log_mgf_is_zero_at_zero_tilt() {
        for c in [0.0, 0.3, -2.7] {
            assert_abs_diff_eq!(log_mgf_1d(c, 0.0), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn tail_mass_shrinks_with_radius() {
        assert!(tail_mass(0.0, 7.0) < 1e-11);
        assert!(tail_mass(0.4, 3.0) > tail_mass(0.4, 4.0));
    }
}
