//! Zeroth-order Bessel functions and the Hankel function `H0^(1)`.
//!
//! Rational approximations on `[0, 5]` and Hankel asymptotic forms beyond,
//! after the Cephes `j0`/`y0` routines.

use std::f64::consts::{FRAC_PI_4, PI};

use num_complex::Complex64;

const SQRT_FRAC_2_PI: f64 = 0.797_884_560_802_865_4;

/* 5.783185962946784521175995758455807035071 */
const DR1: f64 = 5.783185962946784;
/* 30.47126234366208639907816317502275584842 */
const DR2: f64 = 30.471262343662087;

// Highest-degree coefficient first.
fn eval_polynomial(x: f64, coeffs: &[f64]) -> f64 {
    coeffs.iter().fold(0.0, |acc, &c| acc * x + c)
}

// Same, with an implicit leading coefficient of 1.
fn eval_polynomial_1(x: f64, coeffs: &[f64]) -> f64 {
    coeffs.iter().fold(1.0, |acc, &c| acc * x + c)
}

/// `J0(x)`, absolute error about `4e-16` on `[0, 30]`.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x <= 5.0 {
        let z = x * x;
        if x < 1e-5 {
            return 1.0 - z / 4.0;
        }
        let p = (z - DR1) * (z - DR2);
        return p * eval_polynomial(z, &RP) / eval_polynomial_1(z, &RQ);
    }
    let (p, q) = asymptotic_pq(x);
    let xn = x - FRAC_PI_4;
    (p * xn.cos() - 5.0 / x * q * xn.sin()) * SQRT_FRAC_2_PI / x.sqrt()
}

/// `Y0(x)` for `x > 0`; `-inf` at zero and NaN for negative arguments.
pub fn bessel_y0(x: f64) -> f64 {
    if x == 0.0 {
        return f64::NEG_INFINITY;
    } else if x < 0.0 {
        return f64::NAN;
    }
    if x <= 5.0 {
        let z = x * x;
        let w = eval_polynomial(z, &YP) / eval_polynomial_1(z, &YQ);
        return w + 2.0 / PI * x.ln() * bessel_j0(x);
    }
    let (p, q) = asymptotic_pq(x);
    let xn = x - FRAC_PI_4;
    (p * xn.sin() + 5.0 / x * q * xn.cos()) * SQRT_FRAC_2_PI / x.sqrt()
}

fn asymptotic_pq(x: f64) -> (f64, f64) {
    let z = 25.0 / (x * x);
    let p = eval_polynomial(z, &PP) / eval_polynomial(z, &PQ);
    let q = eval_polynomial(z, &QP) / eval_polynomial_1(z, &QQ);
    (p, q)
}

/// Hankel function of the first kind, `H0(x) = J0(x) + i Y0(x)`.
pub fn hankel_h0(x: f64) -> Complex64 {
    Complex64::new(bessel_j0(x), bessel_y0(x))
}

static RP: [f64; 4] = [
    -4.794432209782018e9,
    1.9561749194655657e12,
    -2.4924834436096772e14,
    9.708622510473064e15,
];
static RQ: [f64; 8] = [
    4.99563147152651e2,
    1.737854016763747e5,
    4.844096583399621e7,
    1.1185553704535683e10,
    2.112775201154892e12,
    3.1051822985742256e14,
    3.1812195594320496e16,
    1.7108629408104315e18,
];
static PP: [f64; 7] = [
    7.969367292973471e-4,
    8.283523921074408e-2,
    1.239533716464143,
    5.447250030587687,
    8.74716500199817,
    5.303240382353949,
    1.0,
];
static PQ: [f64; 7] = [
    9.244088105588637e-4,
    8.562884743544745e-2,
    1.2535274390105895,
    5.470977403304171,
    8.761908832370695,
    5.306052882353947,
    1.0,
];
static QP: [f64; 8] = [
    -1.1366383889846916e-2,
    -1.2825271867050931,
    -1.9553954425773597e1,
    -9.320601521237683e1,
    -1.7768116798048806e2,
    -1.4707750515495118e2,
    -5.141053267665993e1,
    -6.050143506007285,
];
static QQ: [f64; 7] = [
    6.43178256118178e1,
    8.564300259769806e2,
    3.8824018360540163e3,
    7.240467741956525e3,
    5.930727011873169e3,
    2.0620933166032783e3,
    2.420057402402914e2,
];
static YP: [f64; 8] = [
    1.5592436785523574e4,
    -1.466392959039716e7,
    5.435264770518765e9,
    -9.821360657179115e11,
    8.75906394395367e13,
    -3.466283033847297e15,
    4.4273326857256984e16,
    -1.8495080043698668e16,
];
static YQ: [f64; 7] = [
    1.0412835366425984e3,
    6.26107330137135e5,
    2.6891963339381415e8,
    8.64002487103935e10,
    2.0297961275010555e13,
    3.1715775284297505e15,
    2.5059625617265306e17,
];
