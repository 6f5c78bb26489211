//! Closed-form traveling-wave solutions used for verification.
//!
//! Each component of `u` is a finite sum of plane waves
//! `A cos(k·x - ωt + ψ)`, so every derivative needed by the PDE residual is
//! available in closed form.

use crate::calculus::Nonlinearity;
use crate::mesh::Point;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave<T> {
    pub amplitude: T,
    pub k: [T; 2],
    pub omega: T,
    pub phase: T,
}

impl<T: Real> Wave<T> {
    #[inline]
    fn arg(&self, t: T, x: Point<T>) -> T {
        self.k[0] * x[0] + self.k[1] * x[1] - self.omega * t + self.phase
    }
}

/// Derivatives of one scalar component up to second order.
#[derive(Debug, Clone, Copy, Default)]
struct Jet<T> {
    v: T,
    dt: T,
    dx: [T; 2],
    dtt: T,
    dxx: [[T; 2]; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution<T> {
    pub name: &'static str,
    pub components: [Vec<Wave<T>>; 2],
    pub nonlinearity: Nonlinearity,
}

impl<T: Real> ExactSolution<T> {
    /// `u = (0, sin(4π(x - t)))`, linear.
    pub fn linear_plane_wave() -> Self {
        let k = T::lit(4.0) * T::PI();
        Self {
            name: "linear_plane_wave",
            components: [vec![], vec![Wave { amplitude: T::one(), k: [k, T::zero()], omega: k, phase: -T::FRAC_PI_2() }]],
            nonlinearity: Nonlinearity::Linear,
        }
    }

    /// `θ` with `θ² = 8π² + 3/4`.
    pub fn klein_gordon_theta() -> T {
        (T::lit(8.0) * T::PI() * T::PI() + T::lit(0.75)).sqrt()
    }

    /// `u = ½(cos φ, sin φ)`, `φ = 2π(x+y) - θt`, with `f = (1 - |u|²) u`.
    pub fn cubic_klein_gordon() -> Self {
        let k = T::lit(2.0) * T::PI();
        let th = Self::klein_gordon_theta();
        let half = T::lit(0.5);
        Self {
            name: "cubic_klein_gordon",
            components: [
                vec![Wave { amplitude: half, k: [k, k], omega: th, phase: T::zero() }],
                vec![Wave { amplitude: half, k: [k, k], omega: th, phase: -T::FRAC_PI_2() }],
            ],
            nonlinearity: Nonlinearity::CubicKleinGordon,
        }
    }

    fn jet(&self, c: usize, t: T, x: Point<T>) -> Jet<T> {
        let mut j = Jet::<T> { v: T::zero(), dt: T::zero(), dx: [T::zero(); 2], dtt: T::zero(), dxx: [[T::zero(); 2]; 2] };
        for w in &self.components[c] {
            let (s, co) = w.arg(t, x).sin_cos();
            let a = w.amplitude;
            j.v = j.v + a * co;
            j.dt = j.dt + a * w.omega * s;
            j.dtt = j.dtt - a * w.omega * w.omega * co;
            for i in 0..2 {
                j.dx[i] = j.dx[i] - a * w.k[i] * s;
                for l in 0..2 {
                    j.dxx[i][l] = j.dxx[i][l] - a * w.k[i] * w.k[l] * co;
                }
            }
        }
        j
    }

    pub fn u(&self, t: T, x: Point<T>) -> [T; 2] {
        [self.jet(0, t, x).v, self.jet(1, t, x).v]
    }

    pub fn p(&self, t: T, x: Point<T>) -> [T; 2] {
        [self.jet(0, t, x).dt, self.jet(1, t, x).dt]
    }

    /// `σ = -rot u`
    pub fn sigma(&self, t: T, x: Point<T>) -> T {
        let (a, b) = (self.jet(0, t, x), self.jet(1, t, x));
        -(b.dx[0] - a.dx[1])
    }

    /// `ρ = -div u`
    pub fn rho(&self, t: T, x: Point<T>) -> T {
        let (a, b) = (self.jet(0, t, x), self.jet(1, t, x));
        -(a.dx[0] + b.dx[1])
    }

    /// `ṗ = u_tt`
    pub fn p_dot(&self, t: T, x: Point<T>) -> [T; 2] {
        [self.jet(0, t, x).dtt, self.jet(1, t, x).dtt]
    }

    /// `-ṗ + curl σ - grad ρ - f(u)`, which vanishes for an exact solution.
    pub fn pde_residual(&self, t: T, x: Point<T>) -> [T; 2] {
        let (a, b) = (self.jet(0, t, x), self.jet(1, t, x));
        // σ = a_y - b_x, ρ = -(a_x + b_y)
        let dsigma = [a.dxx[1][0] - b.dxx[0][0], a.dxx[1][1] - b.dxx[0][1]];
        let drho = [-(a.dxx[0][0] + b.dxx[1][0]), -(a.dxx[0][1] + b.dxx[1][1])];
        let curl_sigma = [dsigma[1], -dsigma[0]];
        let f = self.nonlinearity.force([a.v, b.v]);
        [-a.dtt + curl_sigma[0] - drho[0] - f[0], -b.dtt + curl_sigma[1] - drho[1] - f[1]]
    }

    /// Pointwise Hamiltonian density `½(σ² + |p|² + ρ²) + F(u)`.
    pub fn energy_density(&self, t: T, x: Point<T>) -> T {
        let s = self.sigma(t, x);
        let r = self.rho(t, x);
        let p = self.p(t, x);
        T::lit(0.5) * (s * s + r * r + p[0] * p[0] + p[1] * p[1]) + self.nonlinearity.potential(self.u(t, x))
    }
}
