//! Render the flow color wheel: a synthetic radial field where every pixel
//! moves away from the center, written as a PNG, with a few pixels decoded
//! back to their direction.
//!
//! ```text
//! cargo run --example flow_color_wheel -- wheel.png
//! ```

use ndarray::Array2;
use std::f64::consts::PI;

use livegan::flowprep::{flow_to_color, wheel_angle_of, FlowField, MagnitudeNorm};

fn main() -> livegan::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "wheel.png".into());
    let size = 129;
    let c = (size / 2) as f32;
    let u = Array2::from_shape_fn((size, size), |(_, x)| x as f32 - c);
    let v = Array2::from_shape_fn((size, size), |(y, _)| y as f32 - c);
    let field = FlowField::new(u, v)?;
    let map = flow_to_color(&field, MagnitudeNorm::Fixed(c))?;
    map.save_png(&out)?;
    println!("wrote {out}");

    for (name, x, y) in [
        ("right", size - 8, size / 2),
        ("down", size / 2, size - 8),
        ("left", 8, size / 2),
        ("up", size / 2, 8),
    ] {
        let px = map.pixels.get_pixel(x as u32, y as u32).0;
        let deg = wheel_angle_of(px).map(|a| a * 180.0 / PI);
        println!("{name:>5}: rgb {px:?} decodes to {deg:.1?} degrees");
    }
    Ok(())
}
