use num_complex::Complex64;

use crate::channel::{CMat, CVec};

/// Rotates `x` so its first nonzero entry is real and positive.
pub fn fix_phase(x: &mut CVec) {
    if let Some(z) = x.iter().find(|z| z.norm() > 0.0).copied() {
        let rot = z.conj() / z.norm();
        for e in x.iter_mut() {
            *e *= rot;
        }
    }
}

/// Unit eigenvector of the largest eigenvalue of a Hermitian matrix, phase-fixed.
pub fn principal_eigenvector(a: &CMat) -> CVec {
    let eig = a.clone().symmetric_eigen();
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &l)| if l > best.1 { (i, l) } else { best });
    let mut v: CVec = eig.eigenvectors.column(idx).into_owned();
    let n = v.norm();
    if n > 0.0 {
        v /= Complex64::from(n);
    }
    fix_phase(&mut v);
    v
}

/// Principal eigenvector of `H H^H`.
pub fn principal_left_direction(h: &CMat) -> CVec {
    principal_eigenvector(&(h * h.adjoint()))
}

/// `x / ||x||`, or `None` when `x` is numerically zero.
pub fn normalized(x: &CVec) -> Option<CVec> {
    let n = x.norm();
    (n > 0.0 && n.is_finite()).then(|| x / Complex64::from(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::complex_normal;
    use crate::rng::{stream, Purpose};

    fn power_iteration(a: &CMat) -> CVec {
        let mut x = CVec::from_element(a.nrows(), Complex64::new(1.0, 0.3));
        for _ in 0..20_000 {
            x = a * &x;
            x /= Complex64::from(x.norm());
        }
        fix_phase(&mut x);
        x
    }

    #[test]
    fn matches_power_iteration() {
        let mut rng = stream(1, Purpose::Oracle, 0, 0);
        let h = CMat::from_fn(5, 3, |_, _| complex_normal(&mut rng));
        let v = principal_left_direction(&h);
        let w = power_iteration(&(&h * h.adjoint()));
        let cos = v.dotc(&w).norm();
        assert!((1.0 - cos).abs() < 1e-12);
        assert!(v[0].im.abs() < 1e-14 && v[0].re > 0.0);
    }

    #[test]
    fn phase_convention_skips_zeros() {
        let mut x = CVec::from_vec(vec![Complex64::from(0.0), Complex64::new(0.0, -2.0)]);
        fix_phase(&mut x);
        assert_eq!(x[1], Complex64::from(2.0));
    }
}
