//! Part-separation margin of the semantic field against feature noise.
//!
//! Prints CSV to stdout: for each pixel-noise and instance-noise level, the
//! mean own-part and cross-part similarity of supported points over test
//! scenes, and their difference.
//!
//! ```text
//! cargo run --release --example noise_sweep > results/noise_sweep.csv
//! ```

use semfield::harness::{load_selection, part_separation, Perception, RunConfig};
use semfield::sim::Split;

const SCENES: usize = 10;

fn main() -> semfield::Result<()> {
    println!("pixel_noise,instance_noise,own,cross,margin,points");
    for instance_noise in [0.0, 0.15, 0.3, 0.6] {
        for pixel_noise in [0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0] {
            let cfg = RunConfig {
                pixel_noise,
                instance_noise,
                ..RunConfig::default()
            };
            let (sel, _) = load_selection(&cfg)?;
            let per = Perception::new(&cfg, &sel)?;
            let s = part_separation(&cfg, &per, Split::Test, SCENES)?;
            println!(
                "{pixel_noise},{instance_noise},{:.4},{:.4},{:.4},{}",
                s.own,
                s.cross,
                s.margin(),
                s.points
            );
        }
    }
    Ok(())
}
