//! Generate a synthetic dataset, write it as CSV with a metadata sidecar, and read it back.

use projsmooth::data::{gen_lowrank, load_csv, save_csv, write_metadata, GenParams};

fn main() -> projsmooth::Result<()> {
    let dir = std::env::temp_dir().join("projsmooth-data-io");
    std::fs::create_dir_all(&dir)?;
    let ds = gen_lowrank(&GenParams { d: 16, intrinsic_dim: 3, classes: 3, n: 500, seed: 8, ..GenParams::default() })?;
    let csv = dir.join("data.csv");
    save_csv(&ds, &csv)?;
    write_metadata(&ds, dir.join("data.json"))?;
    let back = load_csv(&csv, false)?;
    println!("wrote {} rows of dimension {} to {}", ds.len(), ds.dim(), csv.display());
    println!("round trip exact: {}", back.features() == ds.features() && back.labels() == ds.labels());

    // Raw pixel values are mapped into the cube on request.
    let raw = dir.join("pixels.csv");
    std::fs::write(&raw, "0,0,128,255\n1,64,32,16\n")?;
    let px = load_csv(&raw, true)?;
    println!("rescaled pixels: {:?} {:?}", px.row(0), px.row(1));
    Ok(())
}
