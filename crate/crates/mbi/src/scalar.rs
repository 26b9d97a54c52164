use std::fmt;

/// Floating-point scalar the numeric core is generic over.
///
/// `from_f` lets generic code spell literals once (`S::from_f(0.5)`); the
/// conversion is total for the types implemented here.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f(value: f64) -> Self {
        Self::from_f64(value).expect("literal representable in scalar type")
    }

    fn to_f(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar convertible to f64")
    }

    fn two() -> Self {
        Self::one() + Self::one()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_round_trip() {
        assert_eq!(f64::from_f(0.5), 0.5);
        assert_eq!(f32::from_f(0.5), 0.5f32);
        assert_eq!(f64::two(), 2.0);
        assert_eq!(0.25f64.to_f(), 0.25);
    }
}
