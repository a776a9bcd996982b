//! Divergence-free real Fourier modes on the 3-torus and the diagonal
//! operator calculus built on them.
//!
//! The velocity space is spanned by modes
//!
//! ```text
//!   e_{k,p,cos}(x) = sqrt(2) eps_{k,p} cos(k.x),
//!   e_{k,p,sin}(x) = sqrt(2) eps_{k,p} sin(k.x),
//! ```
//!
//! where `k` ranges over a lexicographic half of `Z^3 \ {0}` (one of `{k,-k}`
//! is kept, since the two generate the same real modes) and `eps_{k,1}`,
//! `eps_{k,2}` are two unit polarization vectors orthogonal to `k` and to
//! each other. The torus measure is normalized to total mass one, so the
//! family is orthonormal in `L^2` and the Stokes operator acts diagonally
//! with eigenvalue `|k|^2` on each mode. The zero mode is excluded.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, OnceLock};

use crate::bilinear::BilinearTable;
use crate::error::CoreError;
use crate::Result;

/// Parity tag of a real Fourier mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Parity {
    Cos,
    Sin,
}

/// One divergence-free real Fourier mode.
#[derive(Debug, Clone)]
pub struct Mode {
    /// Wavevector, canonical representative of `{k, -k}` (first nonzero
    /// component positive).
    pub wavevector: [i64; 3],
    /// Unit polarization vector, orthogonal to the wavevector.
    pub polarization: [f64; 3],
    /// Which of the two polarizations this is (0 or 1).
    pub polarization_index: u8,
    pub parity: Parity,
    /// Stokes eigenvalue `|k|^2`.
    pub eigenvalue: f64,
}

/// Enumerated spectral basis with all modes of eigenvalue at most `cutoff`.
///
/// Modes are stored sorted by `(eigenvalue, wavevector lexicographic,
/// polarization index, parity)`, so "Galerkin level N" means the first `N`
/// entries of `modes`.
pub struct SpectralBasis {
    cutoff: u32,
    modes: Vec<Mode>,
    /// `(wavevector, parity)` -> mode indices for polarization 0 and 1.
    lookup: HashMap<([i64; 3], Parity), [usize; 2]>,
    pub(crate) bilinear_table: OnceLock<BilinearTable>,
}

impl std::fmt::Debug for SpectralBasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralBasis")
            .field("cutoff", &self.cutoff)
            .field("modes", &self.modes.len())
            .finish()
    }
}

/// True when `k` is the canonical representative of `{k, -k}`: the first
/// nonzero component (in x, y, z order) is positive.
fn is_canonical(k: [i64; 3]) -> bool {
    for c in k {
        if c > 0 {
            return true;
        }
        if c < 0 {
            return false;
        }
    }
    false
}

/// Two unit polarization vectors orthogonal to `k` and to each other, by a
/// fixed rule: Gram-Schmidt of an auxiliary axis against `k`, then the cross
/// product. The auxiliary axis is `z` unless `k` is parallel to it.
fn polarization_pair(k: [i64; 3]) -> [[f64; 3]; 2] {
    let kf = [k[0] as f64, k[1] as f64, k[2] as f64];
    let norm = (kf[0] * kf[0] + kf[1] * kf[1] + kf[2] * kf[2]).sqrt();
    let khat = [kf[0] / norm, kf[1] / norm, kf[2] / norm];
    let aux = if k[0] == 0 && k[1] == 0 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let proj = aux[0] * khat[0] + aux[1] * khat[1] + aux[2] * khat[2];
    let mut e1 = [
        aux[0] - proj * khat[0],
        aux[1] - proj * khat[1],
        aux[2] - proj * khat[2],
    ];
    let n1 = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    e1 = [e1[0] / n1, e1[1] / n1, e1[2] / n1];
    let e2 = [
        khat[1] * e1[2] - khat[2] * e1[1],
        khat[2] * e1[0] - khat[0] * e1[2],
        khat[0] * e1[1] - khat[1] * e1[0],
    ];
    [e1, e2]
}

impl SpectralBasis {
    /// Enumerates all divergence-free real Fourier modes with `|k|^2 <=
    /// cutoff`, deterministically ordered.
    pub fn build(cutoff: u32) -> Result<Arc<Self>> {
        if cutoff == 0 {
            return Err(CoreError::invalid(
                "basis cutoff must be at least 1 (an empty basis carries no dynamics)",
            ));
        }
        let kmax = (cutoff as f64).sqrt().floor() as i64;
        let mut modes = Vec::new();
        for kx in -kmax..=kmax {
            for ky in -kmax..=kmax {
                for kz in -kmax..=kmax {
                    let k = [kx, ky, kz];
                    let sq = kx * kx + ky * ky + kz * kz;
                    if sq == 0 || sq > cutoff as i64 || !is_canonical(k) {
                        continue;
                    }
                    let pols = polarization_pair(k);
                    for (pi, pol) in pols.iter().enumerate() {
                        for parity in [Parity::Cos, Parity::Sin] {
                            modes.push(Mode {
                                wavevector: k,
                                polarization: *pol,
                                polarization_index: pi as u8,
                                parity,
                                eigenvalue: sq as f64,
                            });
                        }
                    }
                }
            }
        }
        modes.sort_by(|a, b| {
            (a.eigenvalue as i64, a.wavevector, a.polarization_index, a.parity).cmp(&(
                b.eigenvalue as i64,
                b.wavevector,
                b.polarization_index,
                b.parity,
            ))
        });
        let mut lookup: HashMap<([i64; 3], Parity), [usize; 2]> = HashMap::new();
        for (i, m) in modes.iter().enumerate() {
            let entry = lookup
                .entry((m.wavevector, m.parity))
                .or_insert([usize::MAX; 2]);
            entry[m.polarization_index as usize] = i;
        }
        Ok(Arc::new(SpectralBasis {
            cutoff,
            modes,
            lookup,
            bilinear_table: OnceLock::new(),
        }))
    }

    pub fn cutoff(&self) -> u32 {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn eigenvalue(&self, index: usize) -> f64 {
        self.modes[index].eigenvalue
    }

    /// Per-mode eigenvalues, nondecreasing along the ordering.
    pub fn eigenvalues(&self) -> impl Iterator<Item = f64> + '_ {
        self.modes.iter().map(|m| m.eigenvalue)
    }

    pub(crate) fn mode_index(&self, k: [i64; 3], parity: Parity, pol: usize) -> Option<usize> {
        self.lookup.get(&(k, parity)).map(|arr| arr[pol])
    }

    /// Number of leading modes with eigenvalue `<= shell`. Converts a
    /// wavenumber-shell cutoff into a prefix length of the fixed ordering.
    pub fn prefix_len_for_shell(&self, shell: f64) -> usize {
        self.modes.iter().take_while(|m| m.eigenvalue <= shell).count()
    }

    /// Plain-text audit table: index, wavevector, polarization, parity,
    /// eigenvalue.
    pub fn table_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>5}  {:>12}  {:>30}  {:>6}  {:>8}",
            "index", "k", "polarization", "parity", "lambda"
        );
        for (i, m) in self.modes.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:>5}  ({:>3},{:>3},{:>3})  ({:>8.5},{:>8.5},{:>8.5})  {:>6}  {:>8.1}",
                i,
                m.wavevector[0],
                m.wavevector[1],
                m.wavevector[2],
                m.polarization[0],
                m.polarization[1],
                m.polarization[2],
                match m.parity {
                    Parity::Cos => "cos",
                    Parity::Sin => "sin",
                },
                m.eigenvalue
            );
        }
        out
    }

    /// Structural compatibility: same cutoff and mode count. Bases built from
    /// the same cutoff are identical by construction.
    pub fn compatible(&self, other: &SpectralBasis) -> bool {
        std::ptr::eq(self, other) || (self.cutoff == other.cutoff && self.len() == other.len())
    }
}

/// A velocity field as real coefficients over a [`SpectralBasis`].
#[derive(Debug, Clone)]
pub struct FourierState {
    basis: Arc<SpectralBasis>,
    coeffs: Vec<f64>,
}

impl FourierState {
    pub fn zeros(basis: &Arc<SpectralBasis>) -> Self {
        FourierState {
            basis: Arc::clone(basis),
            coeffs: vec![0.0; basis.len()],
        }
    }

    pub fn from_coeffs(basis: &Arc<SpectralBasis>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(CoreError::invalid(format!(
                "coefficient vector has length {} but the basis has {} modes",
                coeffs.len(),
                basis.len()
            )));
        }
        if !coeffs.iter().all(|c| c.is_finite()) {
            return Err(CoreError::invalid("coefficients must all be finite"));
        }
        Ok(FourierState {
            basis: Arc::clone(basis),
            coeffs,
        })
    }

    /// Unit coefficient on a single mode.
    pub fn unit_mode(basis: &Arc<SpectralBasis>, index: usize) -> Self {
        let mut s = Self::zeros(basis);
        s.coeffs[index] = 1.0;
        s
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    fn check_same_basis(&self, other: &FourierState, context: &'static str) -> Result<()> {
        if self.basis.compatible(&other.basis) {
            Ok(())
        } else {
            Err(CoreError::BasisMismatch {
                context,
                left_cutoff: self.basis.cutoff(),
                left_len: self.basis.len(),
                right_cutoff: other.basis.cutoff(),
                right_len: other.basis.len(),
            })
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &FourierState) {
        debug_assert!(self.basis.compatible(&other.basis));
        for (a, b) in self.coeffs.iter_mut().zip(other.coeffs.iter()) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in self.coeffs.iter_mut() {
            *a *= alpha;
        }
    }

    /// `H` norm (plain Euclidean norm of the coefficients).
    pub fn h_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn h_norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>()
    }
}

/// `L^2` inner product of two states on a common basis.
pub fn inner_product(u: &FourierState, v: &FourierState) -> Result<f64> {
    u.check_same_basis(v, "inner product")?;
    Ok(u.coeffs
        .iter()
        .zip(v.coeffs.iter())
        .map(|(a, b)| a * b)
        .sum())
}

/// Weighted coefficient norm `(sum_k lambda_k^(2w) u_k^2)^(1/2)`.
///
/// `w = 0` is the `H` norm, `w = 1/2` the `V` norm and `w = 1` the domain
/// norm `|Au|`.
pub fn sobolev_norm(u: &FourierState, weight_exponent: f64) -> Result<f64> {
    if !weight_exponent.is_finite() {
        return Err(CoreError::invalid("weight exponent must be finite"));
    }
    let mut sum = 0.0;
    for (c, m) in u.coeffs.iter().zip(u.basis.modes.iter()) {
        sum += m.eigenvalue.powf(2.0 * weight_exponent) * c * c;
    }
    Ok(sum.sqrt())
}

/// Applies a power of the Stokes operator: coefficient-wise multiplication by
/// `lambda_k^exponent`. Negative exponents are fine since every eigenvalue is
/// positive.
pub fn stokes_apply(u: &FourierState, exponent: f64) -> Result<FourierState> {
    if !exponent.is_finite() {
        return Err(CoreError::invalid("Stokes exponent must be finite"));
    }
    let mut out = u.clone();
    for (c, m) in out.coeffs.iter_mut().zip(u.basis.modes.iter()) {
        *c *= m.eigenvalue.powf(exponent);
    }
    Ok(out)
}

/// Applies the heat semigroup of the Stokes operator: coefficient-wise
/// multiplication by `exp(-viscosity * lambda_k * t)`.
pub fn semigroup_apply(u: &FourierState, t: f64, viscosity: f64) -> Result<FourierState> {
    if !(t >= 0.0) {
        return Err(CoreError::invalid(format!(
            "semigroup time must be nonnegative, got {t}"
        )));
    }
    if !(viscosity > 0.0) {
        return Err(CoreError::invalid(format!(
            "viscosity must be positive, got {viscosity}"
        )));
    }
    let mut out = u.clone();
    for (c, m) in out.coeffs.iter_mut().zip(u.basis.modes.iter()) {
        *c *= (-viscosity * m.eigenvalue * t).exp();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Brute-force lattice count of expected modes: for every lattice vector
    /// with `0 < |k|^2 <= cutoff`, two polarizations and two parities, with
    /// the {k, -k} pair identified.
    fn expected_mode_count(cutoff: i64) -> usize {
        let kmax = (cutoff as f64).sqrt().floor() as i64;
        let mut vectors = 0usize;
        for kx in -kmax..=kmax {
            for ky in -kmax..=kmax {
                for kz in -kmax..=kmax {
                    let sq = kx * kx + ky * ky + kz * kz;
                    if sq != 0 && sq <= cutoff {
                        vectors += 1;
                    }
                }
            }
        }
        // Half of the vectors after parity folding, times 2 pol x 2 parity.
        vectors / 2 * 4
    }

    #[test]
    fn rejects_zero_cutoff() {
        assert!(SpectralBasis::build(0).is_err());
    }

    #[test]
    fn cutoff_one_has_twelve_modes_all_unit_eigenvalue() {
        let b = SpectralBasis::build(1).unwrap();
        assert_eq!(b.len(), 12);
        assert_eq!(b.len(), expected_mode_count(1));
        assert!(b.eigenvalues().all(|l| l == 1.0));
    }

    #[test]
    fn first_eigenvalue_is_one_for_any_cutoff() {
        for cutoff in [1, 2, 3, 4, 9] {
            let b = SpectralBasis::build(cutoff).unwrap();
            assert_eq!(b.eigenvalue(0), 1.0);
        }
    }

    #[test]
    fn cutoff_two_eigenvalue_multiset() {
        let b = SpectralBasis::build(2).unwrap();
        assert_eq!(b.len(), expected_mode_count(2));
        let ones = b.eigenvalues().filter(|&l| l == 1.0).count();
        let twos = b.eigenvalues().filter(|&l| l == 2.0).count();
        assert_eq!(ones, 12);
        assert_eq!(twos, 24);
        assert_eq!(ones + twos, b.len());
    }

    #[test]
    fn polarizations_are_orthonormal_and_divergence_free() {
        let b = SpectralBasis::build(4).unwrap();
        for m in b.modes() {
            let k = m.wavevector;
            let p = m.polarization;
            let dot_k = p[0] * k[0] as f64 + p[1] * k[1] as f64 + p[2] * k[2] as f64;
            assert_abs_diff_eq!(dot_k, 0.0, epsilon = 1e-13);
            let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-13);
        }
        // The two polarizations of each (k, parity) pair are orthogonal.
        for m in b.modes() {
            if m.polarization_index == 0 {
                let other = b.mode_index(m.wavevector, m.parity, 1).unwrap();
                let q = &b.modes()[other].polarization;
                let p = &m.polarization;
                let dot = p[0] * q[0] + p[1] * q[1] + p[2] * q[2];
                assert_abs_diff_eq!(dot, 0.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn eigenvalues_nondecreasing_and_zero_mode_absent() {
        let b = SpectralBasis::build(6).unwrap();
        let eigs: Vec<f64> = b.eigenvalues().collect();
        assert!(eigs.windows(2).all(|w| w[0] <= w[1]));
        assert!(eigs.iter().all(|&l| l >= 1.0));
        assert!(b.modes().iter().all(|m| m.wavevector != [0, 0, 0]));
    }

    #[test]
    fn inner_product_orthonormality_and_errors() {
        let b = SpectralBasis::build(2).unwrap();
        let u = FourierState::unit_mode(&b, 3);
        assert_eq!(inner_product(&u, &u).unwrap(), 1.0);
        let v = FourierState::unit_mode(&b, 5);
        assert_eq!(inner_product(&u, &v).unwrap(), 0.0);

        let b1 = SpectralBasis::build(1).unwrap();
        let w = FourierState::zeros(&b1);
        assert!(inner_product(&u, &w).is_err());
    }

    #[test]
    fn sobolev_norm_cases() {
        let b = SpectralBasis::build(2).unwrap();
        let mut u = FourierState::zeros(&b);
        u.coeffs_mut()[0] = 3.0;
        u.coeffs_mut()[20] = 4.0;
        let h = sobolev_norm(&u, 0.0).unwrap();
        assert_abs_diff_eq!(h, inner_product(&u, &u).unwrap().sqrt(), epsilon = 1e-15);

        // Unit coefficient on a mode with lambda = 2, exponent 1 -> norm 2.
        let hi = b.prefix_len_for_shell(1.0); // first lambda=2 mode
        assert_eq!(b.eigenvalue(hi), 2.0);
        let v = FourierState::unit_mode(&b, hi);
        assert_abs_diff_eq!(sobolev_norm(&v, 1.0).unwrap(), 2.0, epsilon = 1e-15);

        assert!(sobolev_norm(&u, f64::NAN).is_err());
    }

    #[test]
    fn stokes_apply_identity_and_inverse() {
        let b = SpectralBasis::build(2).unwrap();
        let mut u = FourierState::zeros(&b);
        for (i, c) in u.coeffs_mut().iter_mut().enumerate() {
            *c = (i as f64 * 0.37).sin();
        }
        let id = stokes_apply(&u, 0.0).unwrap();
        assert_eq!(id.coeffs(), u.coeffs());

        let roundtrip = stokes_apply(&stokes_apply(&u, 1.0).unwrap(), -1.0).unwrap();
        for (a, b) in roundtrip.coeffs().iter().zip(u.coeffs()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }

        let hi = b.prefix_len_for_shell(1.0);
        let v = FourierState::unit_mode(&b, hi);
        assert_eq!(stokes_apply(&v, 1.0).unwrap().coeffs()[hi], 2.0);
    }

    #[test]
    fn semigroup_identity_law_and_halving() {
        let b = SpectralBasis::build(2).unwrap();
        let mut u = FourierState::zeros(&b);
        for (i, c) in u.coeffs_mut().iter_mut().enumerate() {
            *c = 1.0 + i as f64;
        }
        let id = semigroup_apply(&u, 0.0, 1.0).unwrap();
        assert_eq!(id.coeffs(), u.coeffs());

        let ab = semigroup_apply(&semigroup_apply(&u, 0.3, 0.7).unwrap(), 0.45, 0.7).unwrap();
        let once = semigroup_apply(&u, 0.75, 0.7).unwrap();
        for (x, y) in ab.coeffs().iter().zip(once.coeffs()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14 * y.abs().max(1.0));
        }

        // Mode with lambda=1, nu=1, t=ln 2 halves the coefficient.
        let v = FourierState::unit_mode(&b, 0);
        let halved = semigroup_apply(&v, std::f64::consts::LN_2, 1.0).unwrap();
        assert_abs_diff_eq!(halved.coeffs()[0], 0.5, epsilon = 1e-15);

        assert!(semigroup_apply(&u, -0.1, 1.0).is_err());
    }

    #[test]
    fn stokes_and_semigroup_commute() {
        let b = SpectralBasis::build(3).unwrap();
        let mut u = FourierState::zeros(&b);
        for (i, c) in u.coeffs_mut().iter_mut().enumerate() {
            *c = ((i * 13 % 7) as f64) - 3.0;
        }
        let a = stokes_apply(&semigroup_apply(&u, 0.2, 1.3).unwrap(), 0.5).unwrap();
        let bb = semigroup_apply(&stokes_apply(&u, 0.5).unwrap(), 0.2, 1.3).unwrap();
        for (x, y) in a.coeffs().iter().zip(bb.coeffs()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14 * y.abs().max(1.0));
        }
    }

    #[test]
    fn prefix_for_shell_counts() {
        let b = SpectralBasis::build(2).unwrap();
        assert_eq!(b.prefix_len_for_shell(1.0), 12);
        assert_eq!(b.prefix_len_for_shell(2.0), 36);
        assert_eq!(b.prefix_len_for_shell(0.5), 0);
    }

    #[test]
    fn audit_table_lists_every_mode() {
        let b = SpectralBasis::build(1).unwrap();
        let table = b.table_string();
        // Header plus one line per mode.
        assert_eq!(table.lines().count(), 1 + b.len());
        assert!(table.contains("lambda"));
    }
}
