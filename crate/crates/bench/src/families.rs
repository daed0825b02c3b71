//! Boundary data of the named families.

use isoplate::forms::BoundaryData;
use nalgebra::Vector3;

use crate::config::DataFamily;

/// Data of `family` at load parameter `t` (`t = 1` outside continuation).
/// The tangential derivatives are exact, since both families have
/// boundary gradient `[e₁ e₂]` on every straight side.
pub fn boundary_data(family: DataFamily, t: f64) -> BoundaryData {
    match family {
        DataFamily::Flat => BoundaryData::flat(),
        DataFamily::CompressedStrip { amount } => {
            let shift = amount * t;
            BoundaryData::with_tangent(
                move |x| Vector3::new(x.x - x.x.signum() * shift, x.y, 0.0),
                |_, n| Vector3::new(n.x, n.y, 0.0),
                |_, n| Vector3::new(-n.y, n.x, 0.0),
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use isoplate::mesh::Point2;

    #[test]
    fn strip_data_moves_the_ends_inward() {
        let d = boundary_data(DataFamily::CompressedStrip { amount: 1.4 }, 0.5);
        let y = (d.y_d)(&Point2::new(2.0, 0.3));
        assert!((y - Vector3::new(1.3, 0.3, 0.0)).norm() < 1e-15);
        let y = (d.y_d)(&Point2::new(-2.0, 0.3));
        assert!((y - Vector3::new(-1.3, 0.3, 0.0)).norm() < 1e-15);
        // the boundary gradient stays the flat one
        let n = Point2::new(1.0, 0.0);
        let g = d.gradient(&Point2::new(2.0, 0.3), &n);
        assert!((g - BoundaryData::flat().gradient(&Point2::new(2.0, 0.3), &n)).norm() < 1e-15);
    }

    #[test]
    fn strip_at_zero_load_is_flat() {
        let d = boundary_data(DataFamily::CompressedStrip { amount: 1.4 }, 0.0);
        let x = Point2::new(-2.0, 0.7);
        assert_eq!((d.y_d)(&x), Vector3::new(-2.0, 0.7, 0.0));
    }
}
