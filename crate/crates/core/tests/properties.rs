use lagvac_core::model::phi;
use lagvac_core::*;
use proptest::prelude::*;

struct Enveloped {
    alpha: f64,
    m_lo: f64,
    m_hi: f64,
    n_lo: f64,
    n_hi: f64,
    waves: f64,
}

impl Profile for Enveloped {
    fn n0(&self, x: f64) -> f64 {
        let s = (self.waves * std::f64::consts::PI * x).sin().powi(2);
        (self.n_lo + (self.n_hi - self.n_lo) * s) * phi(x).max(0.0).powf(self.alpha)
    }
    fn m0(&self, x: f64) -> f64 {
        let s = (self.waves * std::f64::consts::PI * x).cos().powi(2);
        (self.m_lo + (self.m_hi - self.m_lo) * s) * phi(x).max(0.0).powf(self.alpha / 2.0)
    }
    fn u0(&self, x: f64) -> f64 {
        0.1 * (2.0 * std::f64::consts::PI * x).sin()
    }
}

const K: [f64; 4] = [0.3, 0.9, 0.3, 0.9];

fn params() -> ModelParams {
    ModelParams::with_default_moment(2.0, 0.5, 1.0).unwrap()
}

proptest! {
    #[test]
    fn pressure_and_viscosity_increase_with_q(
        c in 0.01f64..10.0,
        q1 in 0.0f64..50.0,
        dq in 1e-6f64..50.0,
        beta in 0.05f64..3.0,
        extra in 0.0f64..3.0,
    ) {
        let gamma = 1.0 + beta + extra;
        let q2 = q1 + dq;
        prop_assert!(pressure(c, q1, gamma).unwrap() < pressure(c, q2, gamma).unwrap());
        prop_assert!(visc_coeff(c, q1, beta).unwrap() < visc_coeff(c, q2, beta).unwrap());
    }

    #[test]
    fn pressure_depends_on_the_product_only(
        c in 0.01f64..10.0,
        q in 0.01f64..10.0,
        s in 0.1f64..10.0,
        gamma in 1.1f64..5.0,
    ) {
        let a = pressure(c, q, gamma).unwrap();
        let b = pressure(c * s, q / s, gamma).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
    }

    #[test]
    fn mass_roundtrip(frac in 1e-9f64..(1.0 - 1e-9), rho in 0.1f64..100.0) {
        let m = frac * rho;
        let back = m_of_q(q_of_m(m, rho).unwrap(), rho).unwrap();
        prop_assert!((back - m).abs() <= 1e-12 * m);
    }

    #[test]
    fn enveloped_profiles_are_accepted(
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
        c in 0.0f64..1.0,
        d in 0.0f64..1.0,
        alpha in 0.1f64..0.95,
        waves in 1u32..4,
    ) {
        let (lo_m, hi_m) = (a.min(b), a.max(b));
        let (lo_n, hi_n) = (c.min(d), c.max(d));
        let profile = Enveloped {
            alpha,
            m_lo: K[0] + (K[1] - K[0]) * lo_m,
            m_hi: K[0] + (K[1] - K[0]) * hi_m,
            n_lo: K[2] + (K[3] - K[2]) * lo_n,
            n_hi: K[2] + (K[3] - K[2]) * hi_n,
            waves: waves as f64,
        };
        let regime = VacuumRegime::continuous(alpha, K, 1.0).unwrap();
        prop_assert!(make_initial_data(&params(), &regime, &profile, 64).is_ok());
    }

    #[test]
    fn profiles_leaving_the_envelope_name_a1_prime(
        scale in 1.05f64..3.0,
        low in any::<bool>(),
        liquid in any::<bool>(),
        alpha in 0.1f64..0.95,
    ) {
        let s = if low { 1.0 / scale } else { scale };
        let (km, kn) = if liquid {
            (if low { K[0] } else { K[1] } * s, 0.5 * (K[2] + K[3]))
        } else {
            (0.5 * (K[0] + K[1]), if low { K[2] } else { K[3] } * s)
        };
        let profile = ProfileSpec::PhiPower { km, kn, alpha, u_amp: 0.0 };
        let regime = VacuumRegime::continuous(alpha, K, 1.0).unwrap();
        let err = make_initial_data(&params(), &regime, &profile, 64).unwrap_err();
        prop_assert_eq!(err.violated(), Some(Assumption::A1Prime));
    }
}
