//! Generates a synthetic scene and writes it as STC cubes.
//!
//! `cargo run --example synth_scene -- [out_dir]`

use std::path::PathBuf;

use stdown::geodata::Dtype;
use stdown::synthlab::{gen_scene, write_scene, SceneSpec};

fn main() -> stdown::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("stdown-scene"));
    let spec = SceneSpec { days: 10, ..SceneSpec::default() };
    let scene = gen_scene(&spec)?;

    let truth = &scene.truth_fine.values;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let gaps = scene.target_coarse.mask.iter().filter(|&&m| !m).count();
    println!("spec hash      {}", spec.hash());
    println!("fine grid      {}x{}", spec.fine.nlat, spec.fine.nlon);
    println!("coarse grid    {}x{}", spec.coarse.nlat, spec.coarse.nlon);
    println!("time steps     {}", scene.cube_fine.t_len());
    println!("target times   {}", scene.target_coarse.times.len());
    println!("target gaps    {gaps} of {}", scene.target_coarse.mask.len());
    println!("truth mean     {mean:.4}");
    println!("stations       {}", scene.stations.len());

    write_scene(&out, &scene, Dtype::F32Le)?;
    println!("written to {}", out.display());
    Ok(())
}
