//! Scalar activation functions with first and second derivatives.

/// A user-supplied activation. Function pointers keep the type `Copy` and
/// thread-safe; `kinks` lists argument values where the function or its
/// derivative is non-smooth so quadrature can split panels there.
#[derive(Debug, Clone, Copy)]
pub struct CustomPhi {
    pub name: &'static str,
    pub value: fn(f64) -> f64,
    pub d1: fn(f64) -> f64,
    pub d2: fn(f64) -> f64,
    pub kinks: &'static [f64],
}

/// Activation used in kernel recursions and simulated networks.
///
/// `Relu` and `Linear` carry closed forms for the Gaussian pair expectations
/// `F_phi` and `F_phi'`; everything else goes through quadrature.
#[derive(Debug, Clone, Copy)]
pub enum Nonlinearity {
    Relu,
    Tanh,
    Linear,
    Custom(CustomPhi),
}

impl Nonlinearity {
    pub fn id(&self) -> &'static str {
        match self {
            Nonlinearity::Relu => "relu",
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::Linear => "linear",
            Nonlinearity::Custom(c) => c.name,
        }
    }

    #[inline]
    pub fn value(&self, z: f64) -> f64 {
        match self {
            Nonlinearity::Relu => z.max(0.0),
            Nonlinearity::Tanh => z.tanh(),
            Nonlinearity::Linear => z,
            Nonlinearity::Custom(c) => (c.value)(z),
        }
    }

    /// First derivative. The ReLU derivative at exactly 0 is defined as 0
    /// (measure zero under every Gaussian that appears here).
    #[inline]
    pub fn d1(&self, z: f64) -> f64 {
        match self {
            Nonlinearity::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Nonlinearity::Linear => 1.0,
            Nonlinearity::Custom(c) => (c.d1)(z),
        }
    }

    /// Second derivative (a.e. for ReLU, where it vanishes).
    #[inline]
    pub fn d2(&self, z: f64) -> f64 {
        match self {
            Nonlinearity::Relu => 0.0,
            Nonlinearity::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Nonlinearity::Linear => 0.0,
            Nonlinearity::Custom(c) => (c.d2)(z),
        }
    }

    /// Locations where the value or a derivative is non-smooth.
    pub fn kinks(&self) -> &[f64] {
        match self {
            Nonlinearity::Relu => &[0.0],
            Nonlinearity::Custom(c) => c.kinks,
            _ => &[],
        }
    }

    /// Whether closed-form `F_phi` / `F~_phi` are available.
    pub fn has_closed_form_pair_expectation(&self) -> bool {
        matches!(self, Nonlinearity::Relu | Nonlinearity::Linear)
    }
}
