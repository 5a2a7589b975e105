//! Regenerates the bundled demo data set in `data/demo`.
//!
//! ```text
//! cargo run --release --example make_demo
//! ```

use std::fs;
use std::path::Path;

use mstpp::raster::{write_ascii_grid, CovariateStack, Raster};
use mstpp::simulate::{simulate, synthetic_landscape_scaled, DeltaBarMode, SimConfig};
use mstpp::telemetry::write_track;

const CELLS: usize = 80;
const CELLSIZE: f64 = 100.0;
/// Layers are written as `LAYER_SCALE` times their standardized values, so
/// the slopes below act like 1 and -1 on standardized layers while the
/// posterior is tight enough to exercise the sampler at its default tuning.
const LAYER_SCALE: f64 = 2.0;
const THETA: [f64; 3] = [0.5, 0.5, -0.5];
const STEPS: usize = 600;
const DT: f64 = 3.0;
const STEP_SD_CELLS: f64 = 6.0;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo");
    fs::create_dir_all(&dir)?;
    let standardized = synthetic_landscape_scaled(CELLS, CELLSIZE, 2.0, 11)?;
    let mut layers = Vec::new();
    for (name, raster) in standardized.layers() {
        let values = raster.values().iter().map(|v| LAYER_SCALE * v).collect();
        let scaled = Raster::new(*raster.header(), values)?;
        write_ascii_grid(&scaled, dir.join(format!("{name}.asc")))?;
        layers.push((name.clone(), scaled));
    }
    let stack = CovariateStack::new(layers, true)?;
    let sd = STEP_SD_CELLS * CELLSIZE;
    let center = CELLS as f64 * CELLSIZE / 2.0;
    let sim = simulate(
        &SimConfig {
            theta_true: THETA.to_vec(),
            n_steps: STEPS,
            dt: DT,
            start: (center, center),
            delta_bar_mode: DeltaBarMode::Fixed {
                value: sd * sd / (2.0 * DT),
            },
            seed: 11,
        },
        &stack,
    )?;
    write_track(&sim.track, dir.join("track.csv"))?;
    println!("wrote {} fixes and {} layers to {}", sim.track.len(), stack.layers().len(), dir.display());
    Ok(())
}
