use qpar::eigensolve::{roots_1d, winding_number, Rect};
use qpar::maxwell::LayeredProfile1D;

fn main() {
    let profile = LayeredProfile1D::uniform(1.0, 1.0, 3.0);
    for rect in [
        Rect::new((0.2, 40.0), (-3.0, 0.01)),
        Rect::new((0.5, 10.0), (-2.0, 0.1)),
    ] {
        println!("rect {:?}: winding {:?}", rect, winding_number(&profile, &rect));
        match roots_1d(&profile, &rect) {
            Ok(roots) => {
                println!("  {} roots", roots.len());
                for (z, m) in roots {
                    println!("   {:+.6}{:+.6}i (m={})", z.re, z.im, m);
                }
            }
            Err(e) => println!("  error: {}", e),
        }
    }
}
