//! The Leray-projected advection operator `B(u, v) = Pi (u . grad v)` on the
//! spectral basis, its smooth truncation and the truncation's Gateaux
//! derivative.
//!
//! Products of two real Fourier modes reduce, via product-to-sum identities,
//! to two output wavevectors `k_a + k_b` and `k_a - k_b`. The operator is
//! therefore an exact finite convolution over mode pairs; everything outside
//! the basis is discarded, which is exactly the Galerkin projection. Pair
//! couplings are precomputed once per basis into a flat interaction table and
//! reused by every evaluation.

use crate::error::CoreError;
use crate::spectral::{FourierState, Parity, SpectralBasis};
use crate::Result;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// One precomputed pair coupling: coefficient `a` of the first argument and
/// `b` of the second contribute `weight * u_a * v_b` to output mode `target`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Coupling {
    a: u32,
    b: u32,
    target: u32,
    weight: f64,
}

/// Flat interaction table for a fixed basis.
#[derive(Debug, Default)]
pub(crate) struct BilinearTable {
    entries: Vec<Coupling>,
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn canonicalize(k: [i64; 3]) -> Option<([i64; 3], f64)> {
    // Returns the canonical representative and the sign picked up by a sine
    // mode under k -> -k (cosine is even, sine is odd).
    for c in k {
        if c > 0 {
            return Some((k, 1.0));
        }
        if c < 0 {
            return Some(([-k[0], -k[1], -k[2]], -1.0));
        }
    }
    None // zero wavevector: projected out (mean mode excluded)
}

impl BilinearTable {
    fn build(basis: &SpectralBasis) -> Self {
        let modes = basis.modes();
        let mut entries = Vec::new();
        for (ai, ma) in modes.iter().enumerate() {
            for (bi, mb) in modes.iter().enumerate() {
                let kb = [
                    mb.wavevector[0] as f64,
                    mb.wavevector[1] as f64,
                    mb.wavevector[2] as f64,
                ];
                // sqrt(2)^2 from the two mode normalizations.
                let base = 2.0 * dot3(ma.polarization, kb);
                if base == 0.0 {
                    continue;
                }
                // T_a(A) * d/dtheta T_b(B) splits into two wavevectors with
                // parities and signs per the product-to-sum identities.
                let sum_k = [
                    ma.wavevector[0] + mb.wavevector[0],
                    ma.wavevector[1] + mb.wavevector[1],
                    ma.wavevector[2] + mb.wavevector[2],
                ];
                let diff_k = [
                    ma.wavevector[0] - mb.wavevector[0],
                    ma.wavevector[1] - mb.wavevector[1],
                    ma.wavevector[2] - mb.wavevector[2],
                ];
                let terms: [([i64; 3], Parity, f64); 2] = match (ma.parity, mb.parity) {
                    // cos(A) * (-sin(B)) = -1/2 sin(A+B) + 1/2 sin(A-B)
                    (Parity::Cos, Parity::Cos) => {
                        [(sum_k, Parity::Sin, -0.5), (diff_k, Parity::Sin, 0.5)]
                    }
                    // cos(A) * cos(B) = 1/2 cos(A-B) + 1/2 cos(A+B)
                    (Parity::Cos, Parity::Sin) => {
                        [(diff_k, Parity::Cos, 0.5), (sum_k, Parity::Cos, 0.5)]
                    }
                    // -sin(A) * sin(B) = -1/2 cos(A-B) + 1/2 cos(A+B)
                    (Parity::Sin, Parity::Cos) => {
                        [(diff_k, Parity::Cos, -0.5), (sum_k, Parity::Cos, 0.5)]
                    }
                    // sin(A) * cos(B) = 1/2 sin(A+B) + 1/2 sin(A-B)
                    (Parity::Sin, Parity::Sin) => {
                        [(sum_k, Parity::Sin, 0.5), (diff_k, Parity::Sin, 0.5)]
                    }
                };
                for (q, parity, coeff) in terms {
                    let Some((qc, sin_sign)) = canonicalize(q) else {
                        continue;
                    };
                    let sign = if parity == Parity::Sin { sin_sign } else { 1.0 };
                    for pol in 0..2 {
                        let Some(target) = basis.mode_index(qc, parity, pol) else {
                            continue; // outside the basis: Galerkin truncation
                        };
                        let eps_q = modes[target].polarization;
                        let w = base * coeff * sign * dot3(mb.polarization, eps_q) * FRAC_1_SQRT_2;
                        if w != 0.0 {
                            entries.push(Coupling {
                                a: ai as u32,
                                b: bi as u32,
                                target: target as u32,
                                weight: w,
                            });
                        }
                    }
                }
            }
        }
        BilinearTable { entries }
    }
}

fn table(basis: &SpectralBasis) -> &BilinearTable {
    basis.bilinear_table.get_or_init(|| BilinearTable::build(basis))
}

fn check_pair(u: &FourierState, v: &FourierState, context: &'static str) -> Result<()> {
    if u.basis().compatible(v.basis()) {
        Ok(())
    } else {
        Err(CoreError::BasisMismatch {
            context,
            left_cutoff: u.basis().cutoff(),
            left_len: u.basis().len(),
            right_cutoff: v.basis().cutoff(),
            right_len: v.basis().len(),
        })
    }
}

/// `B(u, v)`: the Leray-projected, basis-truncated convolution of
/// `(u . grad) v`. Both arguments must live on the same basis; the output is
/// the Galerkin projection onto that basis.
pub fn bilinear(u: &FourierState, v: &FourierState) -> Result<FourierState> {
    check_pair(u, v, "bilinear term")?;
    let mut out = FourierState::zeros(u.basis());
    let uc = u.coeffs();
    let vc = v.coeffs();
    let oc = out.coeffs_mut();
    for e in &table(u.basis()).entries {
        oc[e.target as usize] += e.weight * uc[e.a as usize] * vc[e.b as usize];
    }
    Ok(out)
}

/// `B(u, u)` convenience.
pub fn bilinear_self(u: &FourierState) -> Result<FourierState> {
    bilinear(u, u)
}

/// The symmetrized pair `B(theta, u) + B(u, theta)` in a single table scan.
pub fn bilinear_symmetrized(u: &FourierState, theta: &FourierState) -> Result<FourierState> {
    check_pair(u, theta, "symmetrized bilinear term")?;
    let mut out = FourierState::zeros(u.basis());
    let uc = u.coeffs();
    let tc = theta.coeffs();
    let oc = out.coeffs_mut();
    for e in &table(u.basis()).entries {
        let (a, b) = (e.a as usize, e.b as usize);
        oc[e.target as usize] += e.weight * (tc[a] * uc[b] + uc[a] * tc[b]);
    }
    Ok(out)
}

/// Smooth cutoff profile: `1` on `s <= 1`, `exp(1 - 1/(2 - s))` on
/// `(1, 2)`, `0` on `s >= 2`. Values stay in `[0, 1]` and all derivatives
/// vanish at `s = 2`.
pub fn cutoff_profile(s: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else if s >= 2.0 {
        0.0
    } else {
        (1.0 - 1.0 / (2.0 - s)).exp()
    }
}

/// Derivative of [`cutoff_profile`]. Piecewise: zero outside `(1, 2)`,
/// `-chi(s) / (2 - s)^2` inside.
pub fn cutoff_profile_deriv(s: f64) -> f64 {
    if s <= 1.0 || s >= 2.0 {
        0.0
    } else {
        let d = 2.0 - s;
        -(1.0 - 1.0 / d).exp() / (d * d)
    }
}

/// Truncated advection `B_R(u) = chi(|Au|^2 / R) B(u, u)`.
pub fn truncated_bilinear(u: &FourierState, radius: f64) -> Result<FourierState> {
    if !(radius > 0.0) {
        return Err(CoreError::invalid(format!(
            "truncation radius must be positive, got {radius}"
        )));
    }
    let s = domain_norm_sq(u);
    let chi = cutoff_profile(s / radius);
    if chi == 0.0 {
        return Ok(FourierState::zeros(u.basis()));
    }
    let mut b = bilinear_self(u)?;
    if chi != 1.0 {
        b.scale(chi);
    }
    Ok(b)
}

/// Gateaux derivative of the truncated advection along `direction`:
///
/// ```text
/// DB_R(u) theta = chi(|Au|^2/R) (B(theta,u) + B(u,theta))
///               + 2 chi'(|Au|^2/R)/R <Au, A theta> B(u,u)
/// ```
pub fn truncated_bilinear_derivative(
    u: &FourierState,
    direction: &FourierState,
    radius: f64,
) -> Result<FourierState> {
    if !(radius > 0.0) {
        return Err(CoreError::invalid(format!(
            "truncation radius must be positive, got {radius}"
        )));
    }
    check_pair(u, direction, "truncated bilinear derivative")?;
    let s = domain_norm_sq(u);
    let chi = cutoff_profile(s / radius);
    let chi_r_prime = cutoff_profile_deriv(s / radius) / radius;

    let mut out = FourierState::zeros(u.basis());
    if chi != 0.0 {
        let sym = bilinear_symmetrized(u, direction)?;
        out.axpy(chi, &sym);
    }
    if chi_r_prime != 0.0 {
        // <Au, A theta> = sum lambda^2 u_k theta_k
        let mut pairing = 0.0;
        for ((cu, ct), m) in u
            .coeffs()
            .iter()
            .zip(direction.coeffs())
            .zip(u.basis().modes())
        {
            pairing += m.eigenvalue * m.eigenvalue * cu * ct;
        }
        let b = bilinear_self(u)?;
        out.axpy(2.0 * chi_r_prime * pairing, &b);
    }
    Ok(out)
}

/// `|Au|^2`, the squared domain norm steering the truncation.
pub fn domain_norm_sq(u: &FourierState) -> f64 {
    u.coeffs()
        .iter()
        .zip(u.basis().modes())
        .map(|(c, m)| m.eigenvalue * m.eigenvalue * c * c)
        .sum()
}
