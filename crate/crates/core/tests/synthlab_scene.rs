use stdown::evalkit::aggregate_series;
use stdown::geodata::{extract_patches, load_cube, load_field, read_stations_csv, Dtype, GeoGrid, PatchConfig};
use stdown::synthlab::{
    gen_scene, parse_manifest, scene_manifest, write_scene, Mapping, MappingKind, SceneSpec, SM_MAX, SM_MIN,
};

const DEFAULT_HASH: &str = "88efed72e36083161d739fe1f10a8e4fb21bac83e21ba302aef73695dca17325";

fn tiny() -> SceneSpec {
    SceneSpec {
        fine: GeoGrid::from_edges(45.0, -100.0, 0.1, 0.1, 18, 15).unwrap(),
        coarse: GeoGrid::from_edges(45.0, -100.0, 0.3, 0.3, 6, 5).unwrap(),
        days: 3,
        stations: 5,
        ..SceneSpec::default()
    }
}

#[test]
fn same_seed_gives_identical_scene() {
    let a = gen_scene(&tiny()).unwrap();
    let b = gen_scene(&tiny()).unwrap();
    assert_eq!(a.cube_fine, b.cube_fine);
    assert_eq!(a.cube_coarse, b.cube_coarse);
    assert_eq!(a.truth_fine, b.truth_fine);
    assert_eq!(a.target_coarse, b.target_coarse);
    assert_eq!(a.stations, b.stations);
    let c = gen_scene(&SceneSpec { seed: 8, ..tiny() }).unwrap();
    assert_ne!(a.truth_fine, c.truth_fine);
}

#[test]
fn scene_layout() {
    let spec = tiny();
    let s = gen_scene(&spec).unwrap();
    assert_eq!(s.cube_fine.channels(), 9);
    assert_eq!(s.cube_fine.times.len(), 24);
    assert_eq!(s.cube_coarse.grid, spec.coarse);
    assert_eq!(s.target_coarse.times, spec.target_times());
    assert_eq!(s.target_coarse.times.len(), 6);
    assert!(s.target_coarse.times.iter().all(|t| [6, 18].contains(&(t.rem_euclid(86_400) / 3600))));
    assert!(s.truth_fine.values.iter().all(|v| (SM_MIN..=SM_MAX).contains(v)));
    let px = spec.coarse.cells();
    for k in 0..s.target_coarse.times.len() {
        let valid = s.target_coarse.mask[k * px..(k + 1) * px].iter().filter(|&&m| m).count();
        assert_eq!(valid, px - (0.15 * px as f64).round() as usize);
    }
    assert!(s.stations.iter().all(|st| st.depth_cm < 5.0 && st.series.len() == 24));
}

#[test]
fn full_gaps_leave_no_patches() {
    let s = gen_scene(&SceneSpec { gap_fraction: 1.0, ..tiny() }).unwrap();
    assert!(s.target_coarse.mask.iter().all(|&m| !m));
    let cfg = PatchConfig { size: 5, ..PatchConfig::default() };
    assert!(extract_patches(&s.cube_coarse, &s.target_coarse, &cfg).unwrap().is_empty());
}

#[test]
fn noise_free_target_is_the_aggregated_truth() {
    let spec = SceneSpec { target_noise: 0.0, ..tiny() };
    let s = gen_scene(&spec).unwrap();
    let agg = aggregate_series(&s.truth_fine, &spec.coarse).unwrap();
    let px = spec.coarse.cells();
    for (k, t) in s.target_coarse.times.iter().enumerate() {
        let ta = agg.time_index(*t).unwrap();
        for c in 0..px {
            if s.target_coarse.mask[k * px + c] {
                assert_eq!(s.target_coarse.values[k * px + c], agg.values[ta * px + c]);
            }
        }
    }
    assert_eq!(agg.values, s.truth_coarse.values);
}

#[test]
fn mapping_is_monotone_in_precipitation_memory() {
    for kind in [MappingKind::Logistic, MappingKind::Linear] {
        let g = Mapping { kind, ..Mapping::default() };
        for temp in [270.0, 285.0, 300.0] {
            for texture in [-1.5, 0.0, 1.5] {
                let vals: Vec<f64> = (0..200).map(|k| g.eval(k as f64 * 0.02, temp, texture)).collect();
                assert!(vals.windows(2).all(|p| p[1] >= p[0]));
                assert!(vals.iter().all(|v| (SM_MIN..=SM_MAX).contains(v)));
            }
        }
    }
}

#[test]
fn noise_free_stations_equal_truth() {
    let spec = SceneSpec { station_noise: 0.0, ..tiny() };
    let s = gen_scene(&spec).unwrap();
    let px = spec.fine.cells();
    for st in &s.stations {
        let (i, j) = spec.fine.locate(st.lat, st.lon).unwrap();
        for (k, sample) in st.series.iter().enumerate() {
            assert_eq!(sample.time, s.truth_fine.times[k]);
            assert_eq!(sample.sm, s.truth_fine.values[k * px + i * spec.fine.nlon + j]);
        }
    }
}

#[test]
fn manifest_round_trip_and_hash() {
    let spec = tiny();
    let text = scene_manifest(&spec);
    assert_eq!(parse_manifest(&text).unwrap(), spec);
    let bare = serde_json::to_string(&spec).unwrap();
    assert_eq!(parse_manifest(&bare).unwrap(), spec);
    let tampered = text.replace("\"w_temp\": 0.6", "\"w_temp\": 0.7");
    assert_ne!(tampered, text);
    assert!(parse_manifest(&tampered).is_err());

    let mut changed = spec.clone();
    changed.mapping.w_texture += 1e-9;
    assert_ne!(changed.hash(), spec.hash());
    assert_ne!(SceneSpec { target_noise: 0.003, ..spec.clone() }.hash(), spec.hash());
    assert_eq!(SceneSpec::default().hash(), DEFAULT_HASH);
}

#[test]
fn written_scene_reloads() {
    let s = gen_scene(&tiny()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path(), &s, Dtype::F64Le).unwrap();
    assert_eq!(load_cube(&dir.path().join("fine")).unwrap(), s.cube_fine);
    assert_eq!(load_field(&dir.path().join("target")).unwrap(), s.target_coarse);
    assert_eq!(load_field(&dir.path().join("truth_fine")).unwrap(), s.truth_fine);
    assert_eq!(read_stations_csv(&dir.path().join("stations.csv")).unwrap().len(), s.stations.len());
    let text = std::fs::read_to_string(dir.path().join("scene.json")).unwrap();
    assert_eq!(parse_manifest(&text).unwrap(), s.spec);
}

#[test]
fn degenerate_specs_are_rejected() {
    assert!(gen_scene(&SceneSpec { days: 0, ..tiny() }).is_err());
    let inverted = SceneSpec { fine: tiny().coarse, coarse: tiny().fine, ..tiny() };
    assert!(gen_scene(&inverted).is_err());
    assert!(gen_scene(&SceneSpec { stations: 10_000, ..tiny() }).is_err());
}
