use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntegratorKind {
    Euler,
    #[default]
    Rk4,
}

fn axpy<const N: usize>(x: &[f64; N], k: &[f64; N], h: f64) -> [f64; N] {
    let mut out = *x;
    for i in 0..N {
        out[i] += h * k[i];
    }
    out
}

/// One fixed step of `x' = f(x)`.
pub fn integrate<const N: usize, E>(
    kind: IntegratorKind,
    x: &[f64; N],
    dt: f64,
    mut f: impl FnMut(&[f64; N]) -> Result<[f64; N], E>,
) -> Result<[f64; N], E> {
    match kind {
        IntegratorKind::Euler => {
            let k1 = f(x)?;
            Ok(axpy(x, &k1, dt))
        }
        IntegratorKind::Rk4 => {
            let k1 = f(x)?;
            let k2 = f(&axpy(x, &k1, 0.5 * dt))?;
            let k3 = f(&axpy(x, &k2, 0.5 * dt))?;
            let k4 = f(&axpy(x, &k3, dt))?;
            let mut out = *x;
            for i in 0..N {
                out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn decay(x: &[f64; 1]) -> Result<[f64; 1], Infallible> {
        Ok([-x[0]])
    }

    fn error_at(kind: IntegratorKind, dt: f64) -> f64 {
        let steps = (1.0 / dt).round() as usize;
        let mut x = [1.0];
        for _ in 0..steps {
            x = integrate(kind, &x, dt, decay).unwrap();
        }
        (x[0] - (-1.0f64).exp()).abs()
    }

    #[test]
    fn rk4_is_fourth_order() {
        let ratio = error_at(IntegratorKind::Rk4, 0.02) / error_at(IntegratorKind::Rk4, 0.01);
        assert!((14.0..18.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn euler_is_first_order() {
        let ratio = error_at(IntegratorKind::Euler, 0.02) / error_at(IntegratorKind::Euler, 0.01);
        assert!((1.8..2.2).contains(&ratio), "ratio {ratio}");
    }
}
